//! Training modes and the downstream training loop.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::constraint::Anchors;
use super::protocol::{federated_predict, run_round, FederatedModel, PartyNode, RoundStats, ServerNode};
use super::transport::{Transport, TransportLog};
use crate::data::{epoch_batches, AlignedBatch, SampleId, VerticalDataset};
use crate::error::{Error, Result};
use crate::metrics::auc;
use crate::nn::{sigmoid, Encoder, EncoderSpec, FeatureBatch, Mlp, OptimizerKind};
use crate::rng::stream;
use crate::sup::{ActivePretrained, LocalModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    VanillaVfl,
    Vflhlp,
    VflhlpA,
    VflhlpP,
    LocalA,
}

impl TrainMode {
    pub const ALL: [TrainMode; 5] = [
        TrainMode::LocalA,
        TrainMode::VanillaVfl,
        TrainMode::VflhlpA,
        TrainMode::VflhlpP,
        TrainMode::Vflhlp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrainMode::VanillaVfl => "vanilla_vfl",
            TrainMode::Vflhlp => "vflhlp",
            TrainMode::VflhlpA => "vflhlp_a",
            TrainMode::VflhlpP => "vflhlp_p",
            TrainMode::LocalA => "local_a",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown mode '{name}'")))
    }

    /// Passive encoders start from their contrastive pre-training.
    pub fn warm_starts_passive(self) -> bool {
        matches!(self, TrainMode::Vflhlp | TrainMode::VflhlpP)
    }

    /// The active sub-model is anchored to its local pre-training.
    pub fn uses_constraint(self) -> bool {
        matches!(self, TrainMode::Vflhlp | TrainMode::VflhlpA)
    }

    pub fn is_federated(self) -> bool {
        self != TrainMode::LocalA
    }

    pub fn needs_active_pretrain(self) -> bool {
        matches!(self, TrainMode::Vflhlp | TrainMode::VflhlpA | TrainMode::LocalA)
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DownstreamConfig {
    pub beta: f64,
    /// Server (head) learning rate.
    pub lr_server: f64,
    /// Party (encoder) learning rate.
    pub lr_party: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    /// Also start the active encoder from its pre-trained weights.
    pub warm_start_active: bool,
    /// Share of the aligned set held out for per-epoch validation AUC.
    pub val_fraction: f64,
}

impl Default for DownstreamConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            lr_server: 1e-3,
            lr_party: 1e-3,
            epochs: 20,
            batch_size: 32,
            optimizer: OptimizerKind::Adam,
            warm_start_active: false,
            val_fraction: 0.1,
        }
    }
}

impl DownstreamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) {
            return Err(Error::Config(format!("beta must be non-negative, got {}", self.beta)));
        }
        if !(self.lr_server > 0.0) || !(self.lr_party > 0.0) || self.batch_size == 0 {
            return Err(Error::Config("downstream learning rates and batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!("val_fraction {} is outside [0, 1)", self.val_fraction)));
        }
        Ok(())
    }
}

/// Outputs of the pre-training stage available to downstream training.
#[derive(Debug, Clone, Default)]
pub struct Pretrained {
    pub active: Option<ActivePretrained>,
    /// Passive encoders `Theta^k` keyed by party id.
    pub passive: BTreeMap<usize, Encoder>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub loss_vfl: f64,
    pub loss_cons: f64,
    pub val_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Federated(FederatedModel),
    /// Local-A: the active party's own pre-trained model.
    Local(LocalModel),
}

impl TrainedModel {
    /// Scores for fully aligned samples given every party's block; the local
    /// model reads party 1's block only.
    pub fn predict(&self, parts: &[FeatureBatch]) -> Result<Vec<f64>> {
        match self {
            TrainedModel::Federated(m) => federated_predict(m, parts, 4096),
            TrainedModel::Local(m) => {
                let x = parts.first().ok_or_else(|| Error::Data("no active-party features".into()))?;
                Ok(m.logits(x)?.into_iter().map(sigmoid).collect())
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct DownstreamRun {
    pub mode: TrainMode,
    pub model: TrainedModel,
    pub history: Vec<EpochRecord>,
    pub rounds: Vec<RoundStats>,
    pub log: TransportLog,
    /// Ids of every training batch in round order.
    pub schedule: Vec<Vec<SampleId>>,
    pub validation_ids: Vec<SampleId>,
    /// Snapshot at the first epoch with the highest validation AUC.
    pub best: Option<BestEpoch>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestEpoch {
    pub epoch: usize,
    pub val_auc: f64,
    pub model: FederatedModel,
}

impl DownstreamRun {
    /// The validation-selected model, or the final one when no epoch had a
    /// defined validation AUC.
    pub fn selected_model(&self) -> TrainedModel {
        match &self.best {
            Some(b) => TrainedModel::Federated(b.model.clone()),
            None => self.model.clone(),
        }
    }
}

/// Random initialization of every encoder and the head.
pub fn init_model(specs: &[EncoderSpec], seed: u64) -> FederatedModel {
    let encoders: Vec<Encoder> = specs
        .iter()
        .enumerate()
        .map(|(k, spec)| Encoder::init(spec, &mut stream(seed, &format!("init/party/{}", k + 1))))
        .collect();
    let total = encoders.iter().map(Encoder::out_dim).sum();
    let head = Mlp::glorot(total, &[1], &mut stream(seed, "init/head"));
    FederatedModel { encoders, head }
}

/// Splits the aligned set into (train, validation) with a seeded shuffle.
pub fn split_aligned(aligned: &[SampleId], val_fraction: f64, seed: u64) -> (Vec<SampleId>, Vec<SampleId>) {
    let mut ids = aligned.to_vec();
    ids.shuffle(&mut stream(seed, "downstream/val-split"));
    let n_val = ((val_fraction * ids.len() as f64).floor() as usize).min(ids.len().saturating_sub(1));
    let train = ids.split_off(n_val);
    (train, ids)
}

fn missing(what: &str, mode: TrainMode) -> Error {
    Error::Config(format!("mode {mode} requires {what}, which was not provided"))
}

/// Builds the parties and server for `mode` from an initial model.
pub fn build_nodes(
    model: FederatedModel,
    mode: TrainMode,
    pretrained: &Pretrained,
    cfg: &DownstreamConfig,
) -> Result<(Vec<PartyNode>, ServerNode)> {
    let mut model = model;
    let k = model.encoders.len();
    if mode.warm_starts_passive() {
        for party in 2..=k {
            let theta = pretrained
                .passive
                .get(&party)
                .ok_or_else(|| missing(&format!("the pre-trained encoder of party {party}"), mode))?;
            if theta.spec() != model.encoders[party - 1].spec() {
                return Err(Error::Checkpoint(format!("pre-trained encoder of party {party} has a different architecture")));
            }
            model.encoders[party - 1] = theta.clone();
        }
    }
    let anchors = if mode.uses_constraint() {
        let a = pretrained.active.as_ref().ok_or_else(|| missing("the active party's pre-trained model", mode))?;
        Some(Anchors {
            encoder: a.model.encoder.clone(),
            head: a.model.head.clone(),
        })
    } else {
        None
    };
    if cfg.warm_start_active {
        let a = pretrained.active.as_ref().ok_or_else(|| missing("the active party's pre-trained model", mode))?;
        model.encoders[0] = a.model.encoder.clone();
    }
    let rep_dims = model.rep_dims();
    let mut server = ServerNode::new(model.head, rep_dims, cfg.optimizer, cfg.lr_server)?;
    let mut parties = Vec::with_capacity(k);
    for (i, enc) in model.encoders.into_iter().enumerate() {
        parties.push(PartyNode::new(i + 1, enc, cfg.optimizer, cfg.lr_party));
    }
    if let Some(a) = anchors {
        server = server.with_anchor(a.head, cfg.beta)?;
        let active = parties.remove(0).with_anchor(a.encoder, cfg.beta)?;
        parties.insert(0, active);
    }
    Ok((parties, server))
}

pub fn snapshot(parties: &[PartyNode], server: &ServerNode) -> FederatedModel {
    FederatedModel {
        encoders: parties.iter().map(|p| p.encoder.clone()).collect(),
        head: server.head.clone(),
    }
}

/// Split training on the aligned samples of `ds`.
pub fn train_downstream(
    ds: &VerticalDataset,
    specs: &[EncoderSpec],
    mode: TrainMode,
    pretrained: &Pretrained,
    cfg: &DownstreamConfig,
    seed: u64,
) -> Result<DownstreamRun> {
    cfg.validate()?;
    if mode == TrainMode::LocalA {
        let a = pretrained.active.as_ref().ok_or_else(|| missing("the active party's pre-trained model", mode))?;
        return Ok(DownstreamRun {
            mode,
            model: TrainedModel::Local(a.model.clone()),
            history: Vec::new(),
            rounds: Vec::new(),
            log: TransportLog::default(),
            schedule: Vec::new(),
            validation_ids: Vec::new(),
            best: None,
        });
    }
    if specs.len() != ds.num_parties() {
        return Err(Error::Config(format!(
            "{} encoder specs for {} parties",
            specs.len(),
            ds.num_parties()
        )));
    }
    if ds.aligned.is_empty() {
        return Err(Error::Training("the aligned set is empty; nothing to train on".into()));
    }
    let (train_ids, val_ids) = split_aligned(&ds.aligned, cfg.val_fraction, seed);
    let val = if val_ids.is_empty() {
        None
    } else {
        Some(AlignedBatch::gather(ds, &val_ids)?)
    };
    let (mut parties, mut server) = build_nodes(init_model(specs, seed), mode, pretrained, cfg)?;
    let mut transport = Transport::new(ds.num_parties());
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut rounds = Vec::new();
    let mut schedule = Vec::new();
    let mut round: u32 = 0;
    let mut best: Option<BestEpoch> = None;
    for epoch in 0..cfg.epochs {
        let (mut l, mut lv, mut lc, mut n) = (0.0, 0.0, 0.0, 0usize);
        for ids in epoch_batches(&train_ids, cfg.batch_size, seed, epoch)? {
            let batch = AlignedBatch::gather(ds, &ids)?;
            let stats = run_round(&mut parties, &mut server, &batch, round, &mut transport)?;
            let w = stats.batch_size as f64;
            l += stats.loss * w;
            lv += stats.loss_vfl * w;
            lc += stats.loss_cons * w;
            n += stats.batch_size;
            rounds.push(stats);
            schedule.push(ids);
            round += 1;
        }
        let val_auc = match &val {
            Some(v) => {
                let current = snapshot(&parties, &server);
                let scores = federated_predict(&current, &v.parties, 4096)?;
                let score = auc(&scores, &v.labels).ok();
                if let Some(s) = score {
                    if best.as_ref().is_none_or(|b| s > b.val_auc) {
                        best = Some(BestEpoch {
                            epoch,
                            val_auc: s,
                            model: current,
                        });
                    }
                }
                score
            }
            None => None,
        };
        let nf = n as f64;
        history.push(EpochRecord {
            epoch,
            loss: l / nf,
            loss_vfl: lv / nf,
            loss_cons: lc / nf,
            val_auc,
        });
    }
    if transport.pending() != 0 {
        return Err(Error::Training(format!("{} undelivered messages after training", transport.pending())));
    }
    Ok(DownstreamRun {
        mode,
        model: TrainedModel::Federated(snapshot(&parties, &server)),
        history,
        rounds,
        log: transport.into_log(),
        schedule,
        validation_ids: val_ids,
        best,
    })
}

/// JSON lines, one record per epoch.
pub fn history_jsonl(history: &[EpochRecord]) -> Result<String> {
    let mut out = String::new();
    for r in history {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}
