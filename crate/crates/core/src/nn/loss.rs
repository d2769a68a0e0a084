use crate::error::{Error, Result};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy on logits and its gradient w.r.t. each logit.
///
/// Uses `max(l, 0) - l*y + ln(1 + exp(-|l|))` per sample so large logits
/// never overflow.
pub fn bce_with_logits(logits: &[f64], labels: &[f64]) -> Result<(f64, Vec<f64>)> {
    if logits.len() != labels.len() {
        return Err(Error::shape("bce labels", &[logits.len()], &[labels.len()]));
    }
    if logits.is_empty() {
        return Err(Error::Training("bce on an empty batch".into()));
    }
    if let Some(y) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(Error::Data(format!("label {y} is not binary")));
    }
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&l, &y) in logits.iter().zip(labels) {
        loss += l.max(0.0) - l * y + (-l.abs()).exp().ln_1p();
        grad.push((sigmoid(l) - y) / n);
    }
    Ok((loss / n, grad))
}
