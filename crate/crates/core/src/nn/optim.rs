use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Adam moment accumulators over the flattened parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }
}

fn checked_grads<P: ParamSet>(params: &P, grads: &P, what: &str) -> Result<Vec<f64>> {
    let g = grads.flatten();
    if g.len() != params.num_params() {
        return Err(Error::shape("optimizer gradient", &[params.num_params()], &[g.len()]));
    }
    if let Some(i) = g.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{what} (entry {i})")));
    }
    Ok(g)
}

/// One bias-corrected Adam update.
pub fn adam_step<P: ParamSet>(state: &mut AdamState, params: &mut P, grads: &P, lr: f64) -> Result<()> {
    let g = checked_grads(params, grads, "adam step")?;
    if state.m.len() != g.len() {
        return Err(Error::shape("adam state", &[g.len()], &[state.m.len()]));
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let mut offset = 0;
    let (m, v) = (&mut state.m, &mut state.v);
    params.visit_mut("", &mut |_, _, p| {
        for (k, x) in p.iter_mut().enumerate() {
            let i = offset + k;
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            *x -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        offset += p.len();
    });
    Ok(())
}

pub fn sgd_step<P: ParamSet>(params: &mut P, grads: &P, lr: f64) -> Result<()> {
    let g = checked_grads(params, grads, "sgd step")?;
    let mut offset = 0;
    params.visit_mut("", &mut |_, _, p| {
        let n = p.len();
        for (x, gi) in p.iter_mut().zip(&g[offset..offset + n]) {
            *x -= lr * gi;
        }
        offset += n;
    });
    Ok(())
}

/// Optimizer bound to one parameter set.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub lr: f64,
    adam: Option<AdamState>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, num_params: usize) -> Self {
        let adam = match kind {
            OptimizerKind::Sgd => None,
            OptimizerKind::Adam => Some(AdamState::new(num_params)),
        };
        Self { lr, adam }
    }

    pub fn for_params<P: ParamSet>(kind: OptimizerKind, lr: f64, params: &P) -> Self {
        Self::new(kind, lr, params.num_params())
    }

    pub fn step<P: ParamSet>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        match &mut self.adam {
            Some(state) => adam_step(state, params, grads, self.lr),
            None => sgd_step(params, grads, self.lr),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::dense::{Activation, DenseLayer, Mlp};
    use ndarray::{array, Array1, Array2};

    fn scalar_model(w: f64) -> Mlp {
        Mlp::new(vec![DenseLayer::new(array![[w]], Array1::zeros(1), Activation::Identity).unwrap()]).unwrap()
    }

    fn grads(w: f64) -> Mlp {
        scalar_model(w)
    }

    #[test]
    fn zero_gradients_leave_params_and_bump_step() {
        let mut p = scalar_model(1.0);
        let mut st = AdamState::new(2);
        adam_step(&mut st, &mut p, &grads(0.0), 0.01).unwrap();
        assert_eq!(p.layers[0].weights[[0, 0]], 1.0);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let mut p = scalar_model(1.0);
        let mut st = AdamState::new(2);
        adam_step(&mut st, &mut p, &grads(0.5), 0.01).unwrap();
        // m_hat = 0.5, v_hat = 0.25 -> step = 0.01 * 0.5 / (0.5 + 1e-8)
        let expected = 1.0 - 0.01 * 0.5 / (0.5 + 1e-8);
        assert!((p.layers[0].weights[[0, 0]] - expected).abs() < 1e-15);
        assert!((p.layers[0].weights[[0, 0]] - 0.99).abs() < 1e-9);
    }

    #[test]
    fn two_steps_match_hand_unrolled_recurrence() {
        let (lr, g, b1, b2, eps) = (0.1, 0.3, 0.9, 0.999, 1e-8);
        let mut x = 2.0;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - f64::powi(b1, t));
            let vh = v / (1.0 - f64::powi(b2, t));
            x -= lr * mh / (vh.sqrt() + eps);
        }
        let mut p = scalar_model(2.0);
        let mut st = AdamState::new(2);
        for _ in 0..2 {
            adam_step(&mut st, &mut p, &grads(g), lr).unwrap();
        }
        assert!((p.layers[0].weights[[0, 0]] - x).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_fails_fast() {
        let mut p = scalar_model(1.0);
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.1, 2);
        assert!(matches!(opt.step(&mut p, &grads(f64::NAN)), Err(Error::NonFinite(_))));
        let mut sgd = Optimizer::new(OptimizerKind::Sgd, 0.1, 2);
        assert!(sgd.step(&mut p, &grads(f64::INFINITY)).is_err());
        assert_eq!(p.layers[0].weights[[0, 0]], 1.0);
    }

    #[test]
    fn sgd_is_plain_gradient_step() {
        let mut p = scalar_model(1.0);
        let mut g = grads(0.5);
        g.layers[0].bias = Array1::from_elem(1, 2.0);
        sgd_step(&mut p, &g, 0.1).unwrap();
        assert_eq!(p.layers[0].weights, Array2::from_elem((1, 1), 0.95));
        assert_eq!(p.layers[0].bias[0], -0.2);
    }
}
