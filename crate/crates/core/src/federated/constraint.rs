use ndarray::s;

use crate::error::{Error, Result};
use crate::nn::{DenseLayer, Encoder, Mlp, ParamSet};

/// Frozen pre-trained weights of the active party: `Theta^1` and `Theta^0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Anchors {
    pub encoder: Encoder,
    pub head: Mlp,
}

fn shapes<P: ParamSet>(p: &P) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    p.visit("", &mut |_, shape, _| out.push(shape.to_vec()));
    out
}

fn check_same<P: ParamSet>(context: &'static str, a: &P, b: &P) -> Result<()> {
    let (sa, sb) = (shapes(a), shapes(b));
    if sa != sb {
        return Err(Error::shape(context, &sa.concat(), &sb.concat()));
    }
    Ok(())
}

/// The active party's block of a single-layer head: the weight columns that
/// multiply the first `rep_dim` inputs, plus the bias.
pub fn head_slice(head: &Mlp, rep_dim: usize) -> Result<Mlp> {
    let [layer] = head.layers.as_slice() else {
        return Err(Error::Config(format!("prediction head must be one affine layer, found {}", head.layers.len())));
    };
    if rep_dim > layer.in_dim() {
        return Err(Error::shape("head slice", &[layer.in_dim()], &[rep_dim]));
    }
    let w = layer.weights.slice(s![.., ..rep_dim]).to_owned();
    Mlp::new(vec![DenseLayer::new(w, layer.bias.clone(), layer.activation)?])
}

/// Adds `slice` into the active block of a full-head gradient.
pub fn add_to_head_slice(full: &mut Mlp, slice: &Mlp, scale: f64) {
    let (dst, src) = (&mut full.layers[0], &slice.layers[0]);
    let d = src.in_dim();
    dst.weights.slice_mut(s![.., ..d]).scaled_add(scale, &src.weights);
    dst.bias.scaled_add(scale, &src.bias);
}

#[derive(Debug, Clone)]
pub struct ConstraintLoss {
    pub value: f64,
    /// `theta^1 - Theta^1`.
    pub grad_encoder: Encoder,
    /// `theta^0_s - Theta^0`.
    pub grad_head_slice: Mlp,
}

/// `0.5 |theta - anchor|^2` and its gradient `theta - anchor`.
pub fn proximal<P: ParamSet + Clone>(context: &'static str, theta: &P, anchor: &P) -> Result<(f64, P)> {
    check_same(context, theta, anchor)?;
    let mut diff = theta.clone();
    diff.add_scaled(anchor, -1.0);
    let value = 0.5 * diff.flatten().iter().map(|d| d * d).sum::<f64>();
    Ok((value, diff))
}

/// Proximal penalty `0.5 (|theta^1 - Theta^1|^2 + |theta^0_s - Theta^0|^2)`,
/// a plain sum over parameters.
pub fn constraint_loss(theta1: &Encoder, anchor1: &Encoder, theta0_s: &Mlp, anchor0: &Mlp) -> Result<ConstraintLoss> {
    let (a, grad_encoder) = proximal("constraint encoder", theta1, anchor1)?;
    let (b, grad_head_slice) = proximal("constraint head slice", theta0_s, anchor0)?;
    Ok(ConstraintLoss {
        value: a + b,
        grad_encoder,
        grad_head_slice,
    })
}

/// `L_vfl + beta * L_cons`; with `beta = 0` this is exactly `L_vfl`.
pub fn total_loss(l_vfl: f64, l_cons: f64, beta: f64) -> Result<f64> {
    if !(beta >= 0.0) {
        return Err(Error::Config(format!("beta must be non-negative, got {beta}")));
    }
    Ok(if beta == 0.0 { l_vfl } else { l_vfl + beta * l_cons })
}
