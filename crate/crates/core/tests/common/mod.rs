#![allow(dead_code)]

use ndarray::{concatenate, Array2, Axis};
use rand::Rng;
use vflhlp::data::{vertical_partition, AlignedBatch, PartitionConfig, Preset, VerticalDataset};
use vflhlp::federated::{Anchors, FederatedModel};
use vflhlp::nn::{Encoder, EncoderSpec, FeatureBatch, Mlp, ParamSet};
use vflhlp::rng::stream;

pub struct Fixture {
    pub ds: VerticalDataset,
    pub specs: Vec<EncoderSpec>,
    pub test_parts: Vec<FeatureBatch>,
    pub test_labels: Vec<f64>,
}

/// Small synthetic federation with compact encoders.
pub fn fixture(preset: Preset, samples: usize, aligned: usize, seed: u64, widths: &[usize]) -> Fixture {
    let cfg = preset.synth_config(samples, 200, seed);
    let data = cfg.generate().unwrap();
    let k = preset.parties();
    let ds = vertical_partition(
        &data.train,
        &PartitionConfig {
            parties: k,
            aligned_count: aligned,
            local_size: None,
            aligned_pool: None,
            seed,
        },
    )
    .unwrap();
    let specs = ds.schema.encoder_specs(k, 3, widths);
    let rows: Vec<usize> = (0..data.test.len()).collect();
    let test_parts = (1..=k).map(|p| data.test.party_features(p, &rows)).collect();
    Fixture {
        ds,
        specs,
        test_parts,
        test_labels: data.test.labels.clone().unwrap(),
    }
}

pub fn random_anchors(specs: &[EncoderSpec], seed: u64) -> Anchors {
    let mut rng = stream(seed, "test/anchors");
    let encoder = Encoder::init(&specs[0], &mut rng);
    let head = Mlp::glorot(encoder.out_dim(), &[1], &mut rng);
    Anchors { encoder, head }
}

/// Adds uniform noise in `[-scale, scale]` to every parameter.
pub fn jitter<P: ParamSet>(p: &mut P, scale: f64, seed: u64) {
    let mut rng = stream(seed, "test/jitter");
    let flat: Vec<f64> = p.flatten().into_iter().map(|v| v + rng.random_range(-scale..=scale)).collect();
    p.assign_flat(&flat);
}

fn bce(logit: f64, y: f64) -> f64 {
    logit.max(0.0) - logit * y + (-logit.abs()).exp().ln_1p()
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Centralized model over all parties' features: forward, hand-written
/// head and loss gradients, one plain SGD step on every parameter. Returns
/// the pre-update loss.
pub fn monolith_sgd_step(model: &mut FederatedModel, batch: &AlignedBatch, lr_head: f64, lr_party: f64) -> f64 {
    let mut reps = Vec::new();
    let mut tapes = Vec::new();
    for (enc, x) in model.encoders.iter().zip(&batch.parties) {
        let (r, tape) = enc.forward(x).unwrap();
        reps.push(r);
        tapes.push(tape);
    }
    let views: Vec<_> = reps.iter().map(|r| r.view()).collect();
    let joined = concatenate(Axis(1), &views).unwrap();
    let w = model.head.layers[0].weights.row(0).to_owned();
    let b = model.head.layers[0].bias[0];
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut g = Vec::with_capacity(batch.len());
    for (i, row) in joined.rows().into_iter().enumerate() {
        let logit = row.dot(&w) + b;
        loss += bce(logit, batch.labels[i]);
        g.push((sig(logit) - batch.labels[i]) / n);
    }
    loss /= n;
    let g = Array2::from_shape_vec((g.len(), 1), g).unwrap();
    let head_w_grad = g.t().dot(&joined);
    let head_b_grad = g.sum();
    let d_joined = g.dot(&w.clone().insert_axis(Axis(0)));

    let mut offset = 0;
    for (k, enc) in model.encoders.iter_mut().enumerate() {
        let dim = enc.out_dim();
        let up = d_joined.slice(ndarray::s![.., offset..offset + dim]).to_owned();
        offset += dim;
        let grads = enc.backward(&tapes[k], &up).unwrap().params;
        let updated: Vec<f64> = enc
            .flatten()
            .iter()
            .zip(grads.flatten())
            .map(|(p, g)| p - lr_party * g)
            .collect();
        enc.assign_flat(&updated);
    }
    let layer = &mut model.head.layers[0];
    layer.weights = &layer.weights - &(head_w_grad * lr_head);
    layer.bias[0] -= lr_head * head_b_grad;
    loss
}

/// Smallest distance of any relu pre-activation from zero on `batch`.
pub fn relu_margin(model: &FederatedModel, batch: &AlignedBatch) -> f64 {
    model
        .encoders
        .iter()
        .zip(&batch.parties)
        .map(|(e, x)| {
            let (_, tape) = e.forward(x).unwrap();
            tape.mlp().min_relu_margin(&e.mlp.layers)
        })
        .fold(f64::INFINITY, f64::min)
}
