//! Central finite-difference gradient verification.

use super::encoder::{Encoder, FeatureBatch};
use super::loss::bce_with_logits;
use super::params::ParamSet;
use crate::error::{Error, Result};

/// Denominator floor for relative errors so exact zeros compare cleanly.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Central differences of `loss` w.r.t. every parameter, in `visit` order.
pub fn numeric_gradient<P, F>(params: &P, eps: f64, mut loss: F) -> Vec<f64>
where
    P: ParamSet + Clone,
    F: FnMut(&P) -> f64,
{
    let base = params.flatten();
    let mut probe = params.clone();
    let mut flat = base.clone();
    let mut out = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        flat[i] = base[i] + eps;
        probe.assign_flat(&flat);
        let up = loss(&probe);
        flat[i] = base[i] - eps;
        probe.assign_flat(&flat);
        let down = loss(&probe);
        flat[i] = base[i];
        out.push((up - down) / (2.0 * eps));
    }
    out
}

/// Max over entries of `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_ERROR_FLOOR))
        .fold(0.0, f64::max)
}

fn logits_of(model: &Encoder, batch: &FeatureBatch) -> Result<Vec<f64>> {
    if model.out_dim() != 1 {
        return Err(Error::shape("grad check logits", &[1], &[model.out_dim()]));
    }
    Ok(model.predict(batch)?.column(0).to_vec())
}

/// Analytic gradient of mean BCE for a single-logit encoder.
pub fn analytic_bce_gradient(model: &Encoder, batch: &FeatureBatch, labels: &[f64]) -> Result<Vec<f64>> {
    let (out, tape) = model.forward(batch)?;
    let (_, dlogits) = bce_with_logits(&out.column(0).to_vec(), labels)?;
    let upstream = ndarray::Array2::from_shape_vec((dlogits.len(), 1), dlogits)
        .expect("column vector");
    Ok(model.backward(&tape, &upstream)?.params.flatten())
}

/// Compares analytic BCE gradients of `model` with central differences.
pub fn grad_check(model: &Encoder, batch: &FeatureBatch, labels: &[f64], eps: f64) -> Result<f64> {
    let analytic = analytic_bce_gradient(model, batch, labels)?;
    let numeric = numeric_gradient(model, eps, |m| {
        let logits = logits_of(m, batch).expect("schema checked above");
        bce_with_logits(&logits, labels).expect("labels checked above").0
    });
    Ok(max_relative_error(&analytic, &numeric))
}
