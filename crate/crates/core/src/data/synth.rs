//! Synthetic vertically partitioned click data.
//!
//! Each party draws an independent low-dimensional latent vector per sample.
//! Every field of that party is a noisy projection of the latent, either
//! bucketed into categories (with a random code permutation) or squashed
//! into `(0, 1)`. Labels come from a logistic model over per-field effects
//! of every party, so each party's features carry signal and the fields of
//! one party share structure a contrastive encoder can pick up.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::schema::{FeatureSchema, FieldKind, FieldSpec, SampleId};
use super::table::{ScaleStats, Table};
use crate::error::{Error, Result};
use crate::nn::{sigmoid, FeatureBatch};
use crate::rng::{stream, StreamRng};

/// Slope that makes the logistic CDF close to the standard normal CDF.
const PROBIT_SLOPE: f64 = 1.702;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    /// Training pool size (all parties draw local samples from it).
    pub samples: usize,
    pub test_samples: usize,
    pub fields: Vec<FieldSpec>,
    #[serde(default = "default_latent_dim")]
    pub latent_dim: usize,
    /// Informative weight of each party's label contribution.
    pub party_weights: Vec<f64>,
    /// Std-dev of field-specific noise added to each latent projection.
    #[serde(default = "default_field_noise")]
    pub field_noise: f64,
    /// Logit scale of the label model.
    #[serde(default = "default_signal")]
    pub signal: f64,
    /// Label noise: the logit is divided by `1 + noise`.
    #[serde(default)]
    pub noise: f64,
    pub seed: u64,
}

fn default_latent_dim() -> usize {
    3
}
fn default_field_noise() -> f64 {
    0.5
}
fn default_signal() -> f64 {
    1.5
}

/// Field layouts matching the two reference setups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    /// Three parties, all-categorical fields split 7 | 7 | 8.
    #[serde(rename = "avazu-like")]
    AvazuLike,
    /// Two parties: 26 categorical fields (active), 13 numerical (passive).
    #[serde(rename = "criteo-like")]
    CriteoLike,
}

impl Preset {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "avazu-like" => Ok(Preset::AvazuLike),
            "criteo-like" => Ok(Preset::CriteoLike),
            other => Err(Error::Config(format!("unknown preset '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::AvazuLike => "avazu-like",
            Preset::CriteoLike => "criteo-like",
        }
    }

    pub fn parties(self) -> usize {
        match self {
            Preset::AvazuLike => 3,
            Preset::CriteoLike => 2,
        }
    }

    pub fn fields(self) -> Vec<FieldSpec> {
        const CARDS: [usize; 8] = [13, 9, 21, 17, 11, 25, 15, 19];
        match self {
            Preset::AvazuLike => [7usize, 7, 8]
                .iter()
                .enumerate()
                .flat_map(|(p, &n)| {
                    (0..n).map(move |j| FieldSpec::categorical(format!("p{}_c{j}", p + 1), CARDS[(j + p) % 8], p + 1))
                })
                .collect(),
            Preset::CriteoLike => (0..26)
                .map(|j| FieldSpec::categorical(format!("c{j}"), CARDS[j % 8], 1))
                .chain((0..13).map(|j| FieldSpec::numerical(format!("n{j}"), 2)))
                .collect(),
        }
    }

    /// Embedding size per categorical field.
    pub fn embed_dim(self) -> usize {
        match self {
            Preset::AvazuLike => 8,
            Preset::CriteoLike => 16,
        }
    }

    /// Encoder layer widths (same for every party).
    pub fn encoder_widths(self) -> Vec<usize> {
        match self {
            Preset::AvazuLike => vec![64, 64, 16],
            Preset::CriteoLike => vec![256, 128, 64, 16],
        }
    }

    pub fn synth_config(self, samples: usize, test_samples: usize, seed: u64) -> SynthConfig {
        SynthConfig {
            samples,
            test_samples,
            fields: self.fields(),
            latent_dim: default_latent_dim(),
            party_weights: vec![1.0; self.parties()],
            field_noise: default_field_noise(),
            signal: default_signal(),
            noise: 0.0,
            seed,
        }
    }
}

/// Generated train pool and fully aligned test set with oracle scores.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub train: Table,
    pub test: Table,
    /// `P(y = 1 | features)` for each training row.
    pub train_bayes: Vec<f64>,
    pub test_bayes: Vec<f64>,
    /// Per-row, per-party contribution to the (pre-noise) label logit.
    pub train_party_logits: Array2<f64>,
    pub test_party_logits: Array2<f64>,
}

struct FieldModel {
    party: usize,
    direction: Vec<f64>,
    /// For categorical fields: bin -> category code (1-based).
    codes: Option<Vec<u32>>,
    coefficient: f64,
}

struct Structure {
    fields: Vec<FieldModel>,
    /// Norm of the coefficient vector per party.
    party_norm: Vec<f64>,
}

impl SynthConfig {
    pub fn parties(&self) -> usize {
        self.party_weights.len()
    }

    pub fn schema(&self) -> FeatureSchema {
        FeatureSchema::new(self.fields.clone())
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples < 10 {
            return Err(Error::Config(format!("synthetic pool needs >= 10 samples, got {}", self.samples)));
        }
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be positive".into()));
        }
        if self.noise < 0.0 || !self.noise.is_finite() && self.noise != f64::INFINITY {
            return Err(Error::Config("noise must be >= 0".into()));
        }
        if self.field_noise < 0.0 || !self.signal.is_finite() {
            return Err(Error::Config("field_noise must be >= 0 and signal finite".into()));
        }
        self.schema().validate(self.parties(), true)?;
        if self.schema().num_parties() != self.parties() {
            return Err(Error::Config("party_weights length must equal the number of parties".into()));
        }
        for f in &self.fields {
            if let FieldKind::Categorical { cardinality } = f.kind {
                if cardinality < 2 {
                    return Err(Error::Config(format!(
                        "synthetic field '{}' needs cardinality >= 2 (index 0 is reserved)",
                        f.name
                    )));
                }
            }
        }
        Ok(())
    }

    fn structure(&self) -> Structure {
        let mut rng = stream(self.seed, "synth/structure");
        let fields: Vec<FieldModel> = self
            .fields
            .iter()
            .map(|f| {
                let mut dir: Vec<f64> = (0..self.latent_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                dir.iter_mut().for_each(|v| *v /= norm);
                let codes = match f.kind {
                    FieldKind::Categorical { cardinality } => {
                        let mut codes: Vec<u32> = (1..cardinality as u32).collect();
                        codes.shuffle(&mut rng);
                        Some(codes)
                    }
                    FieldKind::Numerical => None,
                };
                let coefficient: f64 = StandardNormal.sample(&mut rng);
                FieldModel {
                    party: f.party,
                    direction: dir,
                    codes,
                    coefficient,
                }
            })
            .collect();
        let mut party_norm = vec![0.0; self.parties()];
        for f in &fields {
            party_norm[f.party - 1] += f.coefficient * f.coefficient;
        }
        party_norm.iter_mut().for_each(|v| *v = v.sqrt().max(1e-12));
        Structure { fields, party_norm }
    }

    fn sample_rows(&self, st: &Structure, n: usize, id_offset: u64, rng: &mut StreamRng) -> (Table, Vec<f64>, Array2<f64>) {
        let k = self.parties();
        let n_cat = self.fields.iter().filter(|f| f.is_categorical()).count();
        let n_num = self.fields.len() - n_cat;
        let mut categorical = Array2::<u32>::zeros((n, n_cat));
        let mut numerical = Array2::<f64>::zeros((n, n_num));
        let mut party_logits = Array2::<f64>::zeros((n, k));
        let mut labels = Vec::with_capacity(n);
        let mut bayes = Vec::with_capacity(n);
        let sd = (1.0 + self.field_noise * self.field_noise).sqrt();
        let mut latent = vec![vec![0.0; self.latent_dim]; k];
        for i in 0..n {
            for u in latent.iter_mut() {
                for v in u.iter_mut() {
                    *v = StandardNormal.sample(rng);
                }
            }
            let (mut c, mut m) = (0, 0);
            for fm in &st.fields {
                let u = &latent[fm.party - 1];
                let eps: f64 = StandardNormal.sample(rng);
                let t = fm.direction.iter().zip(u).map(|(a, b)| a * b).sum::<f64>() + self.field_noise * eps;
                let z = t / sd;
                let q = sigmoid(PROBIT_SLOPE * z);
                let effect = match &fm.codes {
                    Some(codes) => {
                        let bins = codes.len();
                        let bin = ((q * bins as f64) as usize).min(bins - 1);
                        categorical[[i, c]] = codes[bin];
                        c += 1;
                        let center = (bin as f64 + 0.5) / bins as f64;
                        (center / (1.0 - center)).ln() / PROBIT_SLOPE
                    }
                    None => {
                        numerical[[i, m]] = q;
                        m += 1;
                        z
                    }
                };
                party_logits[[i, fm.party - 1]] +=
                    self.signal * self.party_weights[fm.party - 1] * fm.coefficient * effect / st.party_norm[fm.party - 1];
            }
            let logit: f64 = party_logits.row(i).sum();
            let p = if self.noise.is_infinite() {
                0.5
            } else {
                sigmoid(logit / (1.0 + self.noise))
            };
            bayes.push(p);
            labels.push(if rng.random::<f64>() < p { 1.0 } else { 0.0 });
        }
        let table = Table {
            schema: self.schema(),
            ids: (0..n as u64).map(|i| SampleId(id_offset + i)).collect(),
            features: FeatureBatch {
                categorical,
                numerical,
            },
            labels: Some(labels),
        };
        (table, bayes, party_logits)
    }

    pub fn generate(&self) -> Result<SynthData> {
        self.validate()?;
        let st = self.structure();
        let (mut train, train_bayes, train_party_logits) =
            self.sample_rows(&st, self.samples, 0, &mut stream(self.seed, "synth/train"));
        let (mut test, test_bayes, test_party_logits) =
            self.sample_rows(&st, self.test_samples, self.samples as u64, &mut stream(self.seed, "synth/test"));
        let stats = scale_stats(&train.features.numerical);
        apply_scaling(&mut train.features.numerical, &stats);
        apply_scaling(&mut test.features.numerical, &stats);
        Ok(SynthData {
            train,
            test,
            train_bayes,
            test_bayes,
            train_party_logits,
            test_party_logits,
        })
    }
}

pub fn scale_stats(numerical: &Array2<f64>) -> Vec<ScaleStats> {
    numerical
        .columns()
        .into_iter()
        .map(|c| ScaleStats {
            min: c.iter().copied().fold(f64::INFINITY, f64::min),
            max: c.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
        .collect()
}

pub fn apply_scaling(numerical: &mut Array2<f64>, stats: &[ScaleStats]) {
    for (mut col, s) in numerical.columns_mut().into_iter().zip(stats) {
        col.mapv_inplace(|v| s.apply(v));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::auc;

    fn small(preset: Preset, seed: u64) -> SynthConfig {
        preset.synth_config(2000, 2000, seed)
    }

    #[test]
    fn avazu_like_geometry() {
        let cfg = small(Preset::AvazuLike, 1);
        let schema = cfg.schema();
        let counts: Vec<usize> = (1..=3).map(|p| schema.party_field_counts(p).0).collect();
        assert_eq!(counts, vec![7, 7, 8]);
        let data = cfg.generate().unwrap();
        assert_eq!(data.train.features.categorical.ncols(), 22);
        assert_eq!(data.train.len(), 2000);
    }

    #[test]
    fn criteo_like_geometry() {
        let cfg = small(Preset::CriteoLike, 1);
        let s = cfg.schema();
        assert_eq!(s.party_field_counts(1), (26, 0));
        assert_eq!(s.party_field_counts(2), (0, 13));
        let data = cfg.generate().unwrap();
        assert!(data.train.features.numerical.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn infinite_noise_gives_chance_bayes_auc() {
        let mut cfg = small(Preset::AvazuLike, 2);
        cfg.noise = 1e9;
        let data = cfg.generate().unwrap();
        let a = auc(&data.test_bayes, data.test.labels.as_ref().unwrap()).unwrap();
        assert!((a - 0.5).abs() < 0.05, "{a}");
        cfg.noise = 0.0;
        let data = cfg.generate().unwrap();
        let a = auc(&data.test_bayes, data.test.labels.as_ref().unwrap()).unwrap();
        assert!(a > 0.7, "{a}");
    }

    #[test]
    fn uninformative_passive_party_makes_local_oracle_exact() {
        let mut cfg = small(Preset::CriteoLike, 3);
        cfg.party_weights = vec![1.0, 0.0];
        let data = cfg.generate().unwrap();
        for (i, &p) in data.test_bayes.iter().enumerate() {
            let local_only = sigmoid(data.test_party_logits[[i, 0]]);
            assert_eq!(p, local_only);
            assert_eq!(data.test_party_logits[[i, 1]], 0.0);
        }
    }

    #[test]
    fn same_seed_same_data() {
        let a = small(Preset::AvazuLike, 9).generate().unwrap();
        let b = small(Preset::AvazuLike, 9).generate().unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test_bayes, b.test_bayes);
    }

    #[test]
    fn degenerate_configs_rejected() {
        let mut cfg = small(Preset::AvazuLike, 1);
        cfg.samples = 5;
        assert!(cfg.generate().is_err());
        let mut cfg = small(Preset::AvazuLike, 1);
        cfg.party_weights = vec![1.0; 2];
        assert!(cfg.generate().is_err());
    }
}
