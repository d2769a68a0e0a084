use ndarray::Array2;
use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::FeatureBatch;

/// Empirical distribution of one field.
#[derive(Debug, Clone, PartialEq)]
pub enum Marginal {
    /// Distinct categories with cumulative counts.
    Categorical { values: Vec<u32>, cumulative: Vec<usize> },
    /// Sorted observed values; sampling picks one uniformly.
    Numerical { sorted: Vec<f64> },
}

impl Marginal {
    fn categorical(column: impl Iterator<Item = u32>) -> Self {
        let mut counts = std::collections::BTreeMap::new();
        for v in column {
            *counts.entry(v).or_insert(0usize) += 1;
        }
        let mut total = 0;
        let (values, cumulative) = counts
            .into_iter()
            .map(|(v, c)| {
                total += c;
                (v, total)
            })
            .unzip();
        Marginal::Categorical { values, cumulative }
    }

    fn numerical(column: impl Iterator<Item = f64>) -> Self {
        let mut sorted: Vec<f64> = column.collect();
        sorted.sort_by(f64::total_cmp);
        Marginal::Numerical { sorted }
    }

    fn sample_categorical<R: Rng + ?Sized>(values: &[u32], cumulative: &[usize], rng: &mut R) -> u32 {
        let total = *cumulative.last().expect("fitted marginal is non-empty");
        let u = rng.random_range(0..total);
        values[cumulative.partition_point(|&c| c <= u)]
    }

    fn sample_numerical<R: Rng + ?Sized>(sorted: &[f64], rng: &mut R) -> f64 {
        sorted[rng.random_range(0..sorted.len())]
    }
}

/// Per-field marginals of one party's local features plus a corruption rate.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionModel {
    /// Categorical fields first, then numerical, matching the column blocks
    /// of [`FeatureBatch`].
    pub marginals: Vec<Marginal>,
    pub rate: f64,
    categorical: usize,
}

impl CorruptionModel {
    pub fn fit(features: &FeatureBatch, rate: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::Config(format!("corruption rate {rate} is outside [0, 1]")));
        }
        if features.is_empty() {
            return Err(Error::Data("cannot fit marginals on zero samples".into()));
        }
        let categorical = features.categorical.ncols();
        let mut marginals: Vec<Marginal> = features
            .categorical
            .columns()
            .into_iter()
            .map(|c| Marginal::categorical(c.iter().copied()))
            .collect();
        marginals.extend(
            features
                .numerical
                .columns()
                .into_iter()
                .map(|c| Marginal::numerical(c.iter().copied())),
        );
        Ok(Self {
            marginals,
            rate,
            categorical,
        })
    }

    pub fn num_fields(&self) -> usize {
        self.marginals.len()
    }

    /// Number of positions replaced per row: `ceil(rate * d)`.
    pub fn corrupted_per_row(&self) -> usize {
        let d = self.num_fields();
        ((self.rate * d as f64).ceil() as usize).min(d)
    }

    /// Corrupted copy of `batch` and the `[rows x fields]` mask of replaced
    /// positions (categorical fields first).
    pub fn corrupt<R: Rng + ?Sized>(&self, batch: &FeatureBatch, rng: &mut R) -> Result<(FeatureBatch, Array2<bool>)> {
        let got = [batch.categorical.ncols(), batch.numerical.ncols()];
        let want = [self.categorical, self.num_fields() - self.categorical];
        if got != want {
            return Err(Error::shape("corruption schema", &want, &got));
        }
        let d = self.num_fields();
        let k = self.corrupted_per_row();
        let mut out = batch.clone();
        let mut mask = Array2::from_elem((batch.len(), d), false);
        for row in 0..batch.len() {
            for j in sample(rng, d, k).into_iter() {
                mask[[row, j]] = true;
                match &self.marginals[j] {
                    Marginal::Categorical { values, cumulative } => {
                        out.categorical[[row, j]] = Marginal::sample_categorical(values, cumulative, rng);
                    }
                    Marginal::Numerical { sorted } => {
                        out.numerical[[row, j - self.categorical]] = Marginal::sample_numerical(sorted, rng);
                    }
                }
            }
        }
        Ok((out, mask))
    }
}
