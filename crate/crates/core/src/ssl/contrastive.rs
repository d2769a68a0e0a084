use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};

/// Lower bound applied to row norms in the cosine denominator.
pub const NORM_EPS: f64 = 1e-12;

fn row_norms(z: &Array2<f64>) -> Array1<f64> {
    z.map_axis(Axis(1), |r| r.dot(&r).sqrt().max(NORM_EPS))
}

fn normalize(z: &Array2<f64>, norms: &Array1<f64>) -> Array2<f64> {
    z / &norms.view().insert_axis(Axis(1))
}

/// `s[i][j] = z_i . zt_j / (|z_i| |zt_j|)`.
pub fn cosine_similarity_matrix(z: &Array2<f64>, z_tilde: &Array2<f64>) -> Result<Array2<f64>> {
    if z.dim() != z_tilde.dim() {
        let (a, b) = (z.dim(), z_tilde.dim());
        return Err(Error::shape("cosine similarity", &[a.0, a.1], &[b.0, b.1]));
    }
    let u = normalize(z, &row_norms(z));
    let v = normalize(z_tilde, &row_norms(z_tilde));
    Ok(u.dot(&v.t()))
}

/// Contrastive loss over a similarity matrix and its gradient.
///
/// `L = (1/N) sum_i -log( exp(s_ii/tau) / ((1/N) sum_j exp(s_ij/tau)) )`.
/// The `1/N` inside the log shifts the usual InfoNCE value by `-log N`, so a
/// batch of uniform similarities scores exactly 0.
pub fn info_nce(s: &Array2<f64>, tau: f64) -> Result<(f64, Array2<f64>)> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let n = s.nrows();
    if n == 0 || s.ncols() != n {
        return Err(Error::shape("info_nce similarity", &[n.max(1), n.max(1)], &[s.nrows(), s.ncols()]));
    }
    let nf = n as f64;
    let log_n = nf.ln();
    let mut loss = 0.0;
    let mut grad = Array2::zeros((n, n));
    for (i, row) in s.outer_iter().enumerate() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b / tau));
        let sum: f64 = row.iter().map(|&x| (x / tau - m).exp()).sum();
        let lse = m + sum.ln();
        loss += -row[i] / tau + lse - log_n;
        for (j, &x) in row.iter().enumerate() {
            let p = (x / tau - lse).exp();
            grad[[i, j]] = (p - if i == j { 1.0 } else { 0.0 }) / (nf * tau);
        }
    }
    Ok((loss / nf, grad))
}

/// Similarity matrix, loss and gradients w.r.t. both projection batches.
#[derive(Debug, Clone)]
pub struct ContrastiveBatchResult {
    pub similarity: Array2<f64>,
    pub tau: f64,
    pub loss: f64,
    pub grad_z: Array2<f64>,
    pub grad_z_tilde: Array2<f64>,
}

/// Back-propagates `ds` through row normalization.
fn normalize_backward(z: &Array2<f64>, norms: &Array1<f64>, u: &Array2<f64>, du: &Array2<f64>) -> Array2<f64> {
    let mut dz = Array2::zeros(z.dim());
    for i in 0..z.nrows() {
        let n = norms[i];
        let g = du.row(i);
        if n > NORM_EPS {
            let proj = g.dot(&u.row(i));
            dz.row_mut(i).assign(&((&g - &(&u.row(i) * proj)) / n));
        } else {
            dz.row_mut(i).assign(&(&g / n));
        }
    }
    dz
}

pub fn contrastive_loss(z: &Array2<f64>, z_tilde: &Array2<f64>, tau: f64) -> Result<ContrastiveBatchResult> {
    if z.dim() != z_tilde.dim() {
        let (a, b) = (z.dim(), z_tilde.dim());
        return Err(Error::shape("contrastive views", &[a.0, a.1], &[b.0, b.1]));
    }
    let (nz, nt) = (row_norms(z), row_norms(z_tilde));
    let u = normalize(z, &nz);
    let v = normalize(z_tilde, &nt);
    let similarity = u.dot(&v.t());
    let (loss, ds) = info_nce(&similarity, tau)?;
    let du = ds.dot(&v);
    let dv = ds.t().dot(&u);
    Ok(ContrastiveBatchResult {
        grad_z: normalize_backward(z, &nz, &u, &du),
        grad_z_tilde: normalize_backward(z_tilde, &nt, &v, &dv),
        similarity,
        tau,
        loss,
    })
}
