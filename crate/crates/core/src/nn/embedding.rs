use ndarray::{Array2, ArrayView2};
use rand::Rng;

use super::params::{join, ParamSet};

/// Initial embedding values are drawn uniformly from this symmetric range.
pub const EMBED_INIT_RANGE: f64 = 0.05;

/// One lookup matrix per categorical field.
///
/// Row 0 of every table is reserved for categories unseen at fit time; any
/// out-of-range index is routed there instead of failing.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub tables: Vec<Array2<f64>>,
    pub embed_dim: usize,
}

impl EmbeddingTable {
    pub fn uniform<R: Rng + ?Sized>(cardinalities: &[usize], embed_dim: usize, rng: &mut R) -> Self {
        let tables = cardinalities
            .iter()
            .map(|&c| {
                Array2::from_shape_fn((c.max(1), embed_dim), |_| {
                    rng.random_range(-EMBED_INIT_RANGE..=EMBED_INIT_RANGE)
                })
            })
            .collect();
        Self { tables, embed_dim }
    }

    pub fn num_fields(&self) -> usize {
        self.tables.len()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.tables.iter().map(|t| t.nrows()).collect()
    }

    pub fn out_dim(&self) -> usize {
        self.tables.len() * self.embed_dim
    }

    fn row_index(&self, field: usize, raw: u32) -> usize {
        let idx = raw as usize;
        if idx < self.tables[field].nrows() {
            idx
        } else {
            0
        }
    }

    /// Writes concatenated field embeddings into `out[:, ..out_dim()]`.
    pub fn lookup_into(&self, indices: ArrayView2<u32>, out: &mut Array2<f64>) {
        let d = self.embed_dim;
        for (b, row) in indices.outer_iter().enumerate() {
            for (f, &raw) in row.iter().enumerate() {
                let r = self.row_index(f, raw);
                let src = self.tables[f].row(r);
                for k in 0..d {
                    out[[b, f * d + k]] = src[k];
                }
            }
        }
    }

    /// Scatters `dx[:, ..out_dim()]` back into per-row table gradients.
    pub fn accumulate_grad(&self, indices: ArrayView2<u32>, dx: &Array2<f64>, grad: &mut EmbeddingTable) {
        let d = self.embed_dim;
        for (b, row) in indices.outer_iter().enumerate() {
            for (f, &raw) in row.iter().enumerate() {
                let r = self.row_index(f, raw);
                let mut dst = grad.tables[f].row_mut(r);
                for k in 0..d {
                    dst[k] += dx[[b, f * d + k]];
                }
            }
        }
    }
}

impl ParamSet for EmbeddingTable {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (i, t) in self.tables.iter().enumerate() {
            let shape = [t.nrows(), t.ncols()];
            f(&join(prefix, &format!("field.{i}")), &shape, t.as_slice().expect("standard layout"));
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        for (i, t) in self.tables.iter_mut().enumerate() {
            let shape = [t.nrows(), t.ncols()];
            f(
                &join(prefix, &format!("field.{i}")),
                &shape,
                t.as_slice_mut().expect("standard layout"),
            );
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            tables: self.tables.iter().map(|t| Array2::zeros(t.raw_dim())).collect(),
            embed_dim: self.embed_dim,
        }
    }
}
