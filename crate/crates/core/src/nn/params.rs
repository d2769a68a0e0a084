/// A fixed collection of named, row-major parameter tensors.
///
/// Gradients are represented by a value of the same type (see
/// [`ParamSet::zeros_like`]), so optimizers and checkpoints only need to walk
/// tensors in a stable order.
#[allow(clippy::type_complexity)]
pub trait ParamSet {
    /// Visits every tensor as `(name, shape, values)` in a fixed order.
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64]));

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64]));

    /// Same structure with every entry set to zero.
    fn zeros_like(&self) -> Self
    where
        Self: Sized;

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, _, v| n += v.len());
        n
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit("", &mut |_, _, v| out.extend_from_slice(v));
        out
    }

    /// Overwrites all parameters from a flat vector in `visit` order.
    fn assign_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length");
        let mut offset = 0;
        self.visit_mut("", &mut |_, _, v| {
            v.copy_from_slice(&flat[offset..offset + v.len()]);
            offset += v.len();
        });
    }

    /// `self += scale * other`, tensor by tensor.
    fn add_scaled(&mut self, other: &Self, scale: f64)
    where
        Self: Sized,
    {
        let flat = other.flatten();
        let mut offset = 0;
        self.visit_mut("", &mut |_, _, v| {
            let n = v.len();
            for (x, g) in v.iter_mut().zip(&flat[offset..offset + n]) {
                *x += scale * g;
            }
            offset += n;
        });
    }

    fn is_finite(&self) -> bool {
        let mut ok = true;
        self.visit("", &mut |_, _, v| ok &= v.iter().all(|x| x.is_finite()));
        ok
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Squared L2 distance between two parameter sets of identical structure.
pub fn squared_distance<P: ParamSet>(a: &P, b: &P) -> f64 {
    a.flatten()
        .iter()
        .zip(b.flatten())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

/// Largest absolute elementwise difference.
pub fn max_abs_diff<P: ParamSet>(a: &P, b: &P) -> f64 {
    a.flatten()
        .iter()
        .zip(b.flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
