//! Supervised pre-training of the active party's local encoder and head.
//!
//! The same routine produces the Local-A baseline: a model trained only on
//! the active party's local features and labels.

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::auc;
use crate::nn::params::join;
use crate::nn::{bce_with_logits, sigmoid, Encoder, EncoderSpec, FeatureBatch, Mlp, Optimizer, OptimizerKind, ParamSet};
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SupConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Share of local samples held out for model selection.
    pub val_fraction: f64,
    pub optimizer: OptimizerKind,
}

impl Default for SupConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 10,
            batch_size: 128,
            val_fraction: 0.1,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl SupConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch_size == 0 {
            return Err(Error::Config("supervised lr and batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!("val_fraction {} is outside [0, 1)", self.val_fraction)));
        }
        Ok(())
    }
}

/// Encoder `h^1` followed by a single affine head to one logit.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalModel {
    pub encoder: Encoder,
    pub head: Mlp,
}

impl ParamSet for LocalModel {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }

    fn zeros_like(&self) -> Self {
        Self {
            encoder: self.encoder.zeros_like(),
            head: self.head.zeros_like(),
        }
    }
}

impl LocalModel {
    pub fn init(spec: &EncoderSpec, seed: u64) -> Self {
        let mut rng = stream(seed, "sup/init");
        let encoder = Encoder::init(spec, &mut rng);
        let head = Mlp::glorot(encoder.out_dim(), &[1], &mut rng);
        Self { encoder, head }
    }

    pub fn logits(&self, features: &FeatureBatch) -> Result<Vec<f64>> {
        let out = self.head.predict(&self.encoder.predict(features)?)?;
        Ok(out.column(0).to_vec())
    }

    /// BCE loss and parameter gradients on one batch.
    pub fn loss_and_grad(&self, features: &FeatureBatch, labels: &[f64]) -> Result<(f64, LocalModel)> {
        let (r, enc_tape) = self.encoder.forward(features)?;
        let (out, head_tape) = self.head.forward(&r)?;
        let (loss, dlogits) = bce_with_logits(&out.column(0).to_vec(), labels)?;
        let upstream = Array2::from_shape_vec((dlogits.len(), 1), dlogits).expect("column shape");
        let (head, dr) = self.head.backward(&head_tape, &upstream)?;
        let encoder = self.encoder.backward(&enc_tape, &dr)?.params;
        Ok((loss, LocalModel { encoder, head }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupMeta {
    pub epochs: usize,
    /// Epoch (1-based) whose weights were kept; 0 means the initialization.
    pub selected_epoch: usize,
    pub loss_trace: Vec<f64>,
    pub val_auc_trace: Vec<f64>,
    pub final_loss: Option<f64>,
    pub val_auc: Option<f64>,
    /// Set when validation AUC was undefined and the last epoch was kept.
    pub fell_back: bool,
}

/// Frozen anchors `Theta^1` (encoder) and `Theta^0` (local head).
#[derive(Debug, Clone, PartialEq)]
pub struct ActivePretrained {
    pub model: LocalModel,
    pub meta: SupMeta,
}

impl ActivePretrained {
    pub fn encoder(&self) -> &Encoder {
        &self.model.encoder
    }

    pub fn head(&self) -> &Mlp {
        &self.model.head
    }
}

/// Mini-batch BCE training on `(features, labels)`; keeps the weights with
/// the best validation AUC on a seeded hold-out.
pub fn pretrain_active(
    features: &FeatureBatch,
    labels: &[f64],
    spec: &EncoderSpec,
    cfg: &SupConfig,
    seed: u64,
) -> Result<ActivePretrained> {
    cfg.validate()?;
    spec.validate()?;
    let n = features.len();
    if n == 0 {
        return Err(Error::Data("active party has no local samples".into()));
    }
    if labels.len() != n {
        return Err(Error::shape("active labels", &[n], &[labels.len()]));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, "sup/val-split"));
    let n_val = if cfg.val_fraction > 0.0 && n >= 2 {
        ((cfg.val_fraction * n as f64).ceil() as usize).min(n - 1)
    } else {
        0
    };
    let (val_rows, train_rows) = order.split_at(n_val);
    let mut train_rows = train_rows.to_vec();
    let val_x = features.select(val_rows);
    let val_y: Vec<f64> = val_rows.iter().map(|&i| labels[i]).collect();

    let mut model = LocalModel::init(spec, seed);
    let mut opt = Optimizer::for_params(cfg.optimizer, cfg.lr, &model);
    let mut meta = SupMeta {
        epochs: cfg.epochs,
        selected_epoch: 0,
        loss_trace: Vec::new(),
        val_auc_trace: Vec::new(),
        final_loss: None,
        val_auc: None,
        fell_back: false,
    };
    let mut best: Option<(f64, LocalModel, usize)> = None;
    for epoch in 0..cfg.epochs {
        train_rows.shuffle(&mut stream(seed, &format!("sup/shuffle/epoch/{epoch}")));
        let (mut total, mut count) = (0.0, 0usize);
        for rows in train_rows.chunks(cfg.batch_size) {
            let x = features.select(rows);
            let y: Vec<f64> = rows.iter().map(|&i| labels[i]).collect();
            let (loss, grads) = model.loss_and_grad(&x, &y)?;
            opt.step(&mut model, &grads)?;
            total += loss * rows.len() as f64;
            count += rows.len();
        }
        meta.loss_trace.push(total / count.max(1) as f64);
        if meta.fell_back || n_val == 0 {
            continue;
        }
        match auc(&sigmoid_all(&model.logits(&val_x)?), &val_y) {
            Ok(a) => {
                meta.val_auc_trace.push(a);
                if best.as_ref().is_none_or(|(b, _, _)| a > *b) {
                    best = Some((a, model.clone(), epoch + 1));
                }
            }
            Err(Error::UndefinedMetric(msg)) => {
                log::warn!("validation AUC undefined ({msg}); keeping last-epoch weights");
                meta.fell_back = true;
            }
            Err(e) => return Err(e),
        }
    }
    meta.final_loss = meta.loss_trace.last().copied();
    let model = match best {
        Some((a, m, epoch)) if !meta.fell_back => {
            meta.val_auc = Some(a);
            meta.selected_epoch = epoch;
            m
        }
        _ => {
            meta.selected_epoch = cfg.epochs;
            model
        }
    };
    Ok(ActivePretrained { model, meta })
}

fn sigmoid_all(logits: &[f64]) -> Vec<f64> {
    logits.iter().map(|&l| sigmoid(l)).collect()
}

/// Scores in `(0, 1)` from the active party's local model.
pub fn local_predict(model: &ActivePretrained, features: &FeatureBatch) -> Result<Vec<f64>> {
    Ok(sigmoid_all(&model.model.logits(features)?))
}
