use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::contrastive::contrastive_loss;
use super::corrupt::CorruptionModel;
use crate::error::{Error, Result};
use crate::nn::params::join;
use crate::nn::{Encoder, EncoderSpec, FeatureBatch, Mlp, Optimizer, OptimizerKind, ParamSet};
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SslConfig {
    pub corruption_rate: f64,
    pub tau: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
}

impl Default for SslConfig {
    fn default() -> Self {
        Self {
            corruption_rate: 0.6,
            tau: 1.0,
            lr: 1e-3,
            epochs: 10,
            batch_size: 256,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl SslConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.corruption_rate) {
            return Err(Error::Config(format!("corruption_rate {} is outside [0, 1]", self.corruption_rate)));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.lr > 0.0) || self.batch_size == 0 {
            return Err(Error::Config("ssl lr and batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Projection head: one relu hidden layer, both widths equal to the encoder
/// output dimension. Discarded after pre-training.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    pub mlp: Mlp,
}

impl ProjectionHead {
    pub fn init<R: rand::Rng + ?Sized>(rep_dim: usize, rng: &mut R) -> Self {
        Self {
            mlp: Mlp::glorot(rep_dim, &[rep_dim, rep_dim], rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct SslModel {
    encoder: Encoder,
    head: ProjectionHead,
}

impl ParamSet for SslModel {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.head.mlp.visit(&join(prefix, "projection"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.head.mlp.visit_mut(&join(prefix, "projection"), f);
    }

    fn zeros_like(&self) -> Self {
        Self {
            encoder: self.encoder.zeros_like(),
            head: ProjectionHead {
                mlp: self.head.mlp.zeros_like(),
            },
        }
    }
}

impl SslModel {
    fn project(&self, batch: &FeatureBatch) -> Result<Array2<f64>> {
        self.head.mlp.predict(&self.encoder.predict(batch)?)
    }

    /// Loss and parameter gradients for one clean/corrupted batch pair.
    fn loss_and_grad(&self, clean: &FeatureBatch, corrupted: &FeatureBatch, tau: f64) -> Result<(f64, SslModel)> {
        let (r, enc_tape) = self.encoder.forward(clean)?;
        let (z, head_tape) = self.head.mlp.forward(&r)?;
        let (rt, enc_tape_t) = self.encoder.forward(corrupted)?;
        let (zt, head_tape_t) = self.head.mlp.forward(&rt)?;
        let res = contrastive_loss(&z, &zt, tau)?;

        let mut grads = self.zeros_like();
        for (enc_tape, head_tape, gz) in [
            (&enc_tape, &head_tape, &res.grad_z),
            (&enc_tape_t, &head_tape_t, &res.grad_z_tilde),
        ] {
            let (head_grad, dr) = self.head.mlp.backward(head_tape, gz)?;
            let enc_grad = self.encoder.backward(enc_tape, &dr)?;
            grads.head.mlp.add_scaled(&head_grad, 1.0);
            grads.encoder.add_scaled(&enc_grad.params, 1.0);
        }
        Ok((res.loss, grads))
    }
}

/// Output of passive pre-training. Only the encoder is kept.
#[derive(Debug, Clone)]
pub struct PassivePretrained {
    pub party: usize,
    pub encoder: Encoder,
    /// Mean training loss per epoch.
    pub loss_trace: Vec<f64>,
    /// Held-fixed evaluation of the loss before and after training.
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Size-weighted mean loss over consecutive batches, each paired with a
/// corruption drawn from a fixed stream, so values before and after
/// training are comparable.
fn evaluate(model: &SslModel, features: &FeatureBatch, corruption: &CorruptionModel, cfg: &SslConfig, seed: u64, party: usize) -> Result<f64> {
    let mut rng = stream(seed, &format!("ssl/party/{party}/eval"));
    let (mut total, mut count) = (0.0, 0usize);
    let n = features.len();
    for start in (0..n).step_by(cfg.batch_size) {
        let clean = features.slice_rows(start, (start + cfg.batch_size).min(n));
        let (corrupted, _) = corruption.corrupt(&clean, &mut rng)?;
        let z = model.project(&clean)?;
        let zt = model.project(&corrupted)?;
        total += contrastive_loss(&z, &zt, cfg.tau)?.loss * clean.len() as f64;
        count += clean.len();
    }
    Ok(total / count as f64)
}

/// Trains `h^k` plus a projection head on every local sample of party `party`.
pub fn pretrain_passive(
    party: usize,
    features: &FeatureBatch,
    spec: &EncoderSpec,
    cfg: &SslConfig,
    seed: u64,
) -> Result<PassivePretrained> {
    cfg.validate()?;
    spec.validate()?;
    if features.is_empty() {
        return Err(Error::Data(format!("party {party} has no local samples for pre-training")));
    }
    let corruption = CorruptionModel::fit(features, cfg.corruption_rate)?;
    let mut init = stream(seed, &format!("ssl/party/{party}/init"));
    let encoder = Encoder::init(spec, &mut init);
    let head = ProjectionHead::init(encoder.out_dim(), &mut init);
    let mut model = SslModel { encoder, head };
    let initial_loss = evaluate(&model, features, &corruption, cfg, seed, party)?;

    let mut opt = Optimizer::for_params(cfg.optimizer, cfg.lr, &model);
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut stream(seed, &format!("ssl/party/{party}/shuffle/epoch/{epoch}")));
        let mut corrupt_rng = stream(seed, &format!("ssl/party/{party}/corrupt/epoch/{epoch}"));
        let (mut total, mut count) = (0.0, 0usize);
        for rows in order.chunks(cfg.batch_size) {
            let clean = features.select(rows);
            let (corrupted, _) = corruption.corrupt(&clean, &mut corrupt_rng)?;
            let (loss, grads) = model.loss_and_grad(&clean, &corrupted, cfg.tau)?;
            opt.step(&mut model, &grads)?;
            total += loss * rows.len() as f64;
            count += rows.len();
        }
        let mean = total / count as f64;
        log::debug!("ssl party {party} epoch {epoch}: loss {mean:.5}");
        loss_trace.push(mean);
    }
    let final_loss = if cfg.epochs == 0 {
        initial_loss
    } else {
        evaluate(&model, features, &corruption, cfg, seed, party)?
    };
    Ok(PassivePretrained {
        party,
        encoder: model.encoder,
        loss_trace,
        initial_loss,
        final_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::Preset;
    use crate::nn::params::max_abs_diff;

    fn party_two() -> (FeatureBatch, EncoderSpec) {
        let cfg = Preset::AvazuLike.synth_config(600, 10, 4);
        let data = cfg.generate().unwrap();
        let rows: Vec<usize> = (0..data.train.len()).collect();
        let features = data.train.party_features(2, &rows);
        let spec = EncoderSpec {
            cardinalities: data.train.schema.party_cardinalities(2),
            numerical: 0,
            embed_dim: 4,
            widths: vec![16, 8],
        };
        (features, spec)
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let (x, spec) = party_two();
        let cfg = SslConfig {
            epochs: 0,
            ..Default::default()
        };
        let out = pretrain_passive(2, &x, &spec, &cfg, 11).unwrap();
        let fresh = Encoder::init(&spec, &mut stream(11, "ssl/party/2/init"));
        assert_eq!(max_abs_diff(&out.encoder, &fresh), 0.0);
        assert!(out.loss_trace.is_empty());
        assert_eq!(out.initial_loss, out.final_loss);
    }

    #[test]
    fn training_lowers_the_loss_and_is_deterministic() {
        let (x, spec) = party_two();
        let cfg = SslConfig {
            epochs: 6,
            batch_size: 64,
            lr: 3e-3,
            ..Default::default()
        };
        let a = pretrain_passive(2, &x, &spec, &cfg, 5).unwrap();
        let b = pretrain_passive(2, &x, &spec, &cfg, 5).unwrap();
        assert!(a.final_loss < a.initial_loss, "{} -> {}", a.initial_loss, a.final_loss);
        assert_eq!(a.encoder, b.encoder);
        assert_eq!(a.loss_trace, b.loss_trace);
    }

    #[test]
    fn empty_local_data_errors() {
        let (x, spec) = party_two();
        assert!(pretrain_passive(2, &x.slice_rows(0, 0), &spec, &SslConfig::default(), 1).is_err());
    }

    #[test]
    fn model_gradient_matches_finite_differences() {
        let (x, spec) = party_two();
        let clean = x.slice_rows(0, 6);
        let corruption = CorruptionModel::fit(&x, 0.6).unwrap();
        let (corrupted, _) = corruption.corrupt(&clean, &mut stream(3, "c")).unwrap();
        let mut init = stream(8, "m");
        let encoder = Encoder::init(&spec, &mut init);
        let head = ProjectionHead::init(encoder.out_dim(), &mut init);
        let model = SslModel { encoder, head };
        let (_, grads) = model.loss_and_grad(&clean, &corrupted, 0.5).unwrap();
        let numeric = crate::nn::numeric_gradient(&model, 1e-6, |m| {
            m.loss_and_grad(&clean, &corrupted, 0.5).unwrap().0
        });
        let err = crate::nn::max_relative_error(&grads.flatten(), &numeric);
        assert!(err < 1e-4, "{err}");
    }
}
