//! Stage functions shared by the commands: dataset preparation,
//! partitioning, pre-training, downstream training and evaluation, plus the
//! checkpoint files each stage leaves behind.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{DatasetSection, RunConfig, Variant};
use crate::data::cache::new_manifest;
use crate::data::synth::scale_stats;
use crate::data::{load_csv, load_csv_with, vertical_partition, CachedDataset, PartitionConfig, Table, VerticalDataset};
use crate::error::{Error, Result};
use crate::federated::{
    history_jsonl, train_downstream, DownstreamRun, FederatedModel, Pretrained, TrainMode, TrainedModel,
};
use crate::metrics::auc;
use crate::nn::{Checkpoint, Encoder, EncoderSpec, FeatureBatch, Mlp};
use crate::rng::stream;
use crate::ssl::{pretrain_passive, PassivePretrained};
use crate::sup::{pretrain_active, ActivePretrained, LocalModel, SupMeta};

pub const PASSIVE_TAG: &str = "passive-pretrain";
pub const ACTIVE_TAG: &str = "active-pretrain";
pub const PARTY_TAG: &str = "downstream-party";
pub const HEAD_TAG: &str = "downstream-head";
pub const LOCAL_TAG: &str = "local-a";

/// Paths inside an output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset")
    }

    pub fn passive_checkpoint(&self, seed: u64, party: usize) -> PathBuf {
        self.root
            .join("checkpoints")
            .join(format!("seed-{seed}"))
            .join(format!("party{party}-ssl.json"))
    }

    pub fn active_checkpoint(&self, seed: u64, aligned: usize) -> PathBuf {
        self.root
            .join("checkpoints")
            .join(format!("seed-{seed}"))
            .join(format!("aligned-{aligned}"))
            .join("party1-sup.json")
    }

    pub fn run_dir(&self, seed: u64, aligned: usize, label: &str) -> PathBuf {
        self.root
            .join("runs")
            .join(format!("seed-{seed}"))
            .join(format!("aligned-{aligned}"))
            .join(label)
    }

    pub fn results_csv(&self) -> PathBuf {
        self.root.join("results.csv")
    }

    pub fn results_json(&self) -> PathBuf {
        self.root.join("results.json")
    }

    /// Wall-clock metadata lives here so every other file is reproducible.
    pub fn run_meta(&self) -> PathBuf {
        self.root.join("run_meta.json")
    }
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Builds the train pool and test split described by the dataset section.
pub fn build_dataset(cfg: &RunConfig) -> Result<CachedDataset> {
    let k = cfg.partition.parties;
    let hash = cfg.dataset_hash();
    match &cfg.dataset {
        DatasetSection::Synthetic(s) => {
            let synth = cfg.synth_config()?.expect("synthetic section");
            let data = synth.generate()?;
            let scaling = scale_stats(&data.train.features.numerical);
            Ok(CachedDataset {
                manifest: new_manifest(&hash, s.seed, k, &data.train.schema, s.samples, s.test_samples, scaling, None),
                train: data.train,
                test: data.test,
                train_bayes: Some(data.train_bayes),
                test_bayes: Some(data.test_bayes),
            })
        }
        DatasetSection::Csv(c) => {
            let schema = cfg.schema()?;
            let (train, pre) = load_csv(&c.train, &schema, &c.id_column, Some(&c.label_column))?;
            let test = load_csv_with(&c.test, &schema, &pre, &c.id_column, Some(&c.label_column))?;
            let train_ids: std::collections::HashSet<_> = train.ids.iter().collect();
            if let Some(dup) = test.ids.iter().find(|id| train_ids.contains(id)) {
                log::warn!("test id {} also appears in the training file", dup.0);
            }
            Ok(CachedDataset {
                manifest: new_manifest(
                    &hash,
                    0,
                    k,
                    &train.schema,
                    train.len(),
                    test.len(),
                    pre.scaling.clone(),
                    Some(pre),
                ),
                train,
                test,
                train_bayes: None,
                test_bayes: None,
            })
        }
    }
}

/// Loads the cached dataset, building and caching it first if it is missing
/// or was prepared from a different config.
pub fn load_or_prepare(cfg: &RunConfig, layout: &Layout) -> Result<CachedDataset> {
    let dir = layout.dataset();
    if CachedDataset::dir_is_current(&dir, &cfg.dataset_hash()) {
        return CachedDataset::load(&dir);
    }
    let data = build_dataset(cfg)?;
    data.save(&dir)?;
    Ok(data)
}

/// Vertical split of the training pool for one seed and aligned count.
pub fn partition(cfg: &RunConfig, train: &Table, seed: u64, aligned: usize) -> Result<VerticalDataset> {
    let p = &cfg.partition;
    vertical_partition(
        train,
        &PartitionConfig {
            parties: p.parties,
            aligned_count: aligned,
            local_size: p.local_size,
            aligned_pool: Some(p.pool()),
            seed,
        },
    )
}

/// Every party's block of a fully aligned table.
pub fn party_blocks(table: &Table, parties: usize) -> Vec<FeatureBatch> {
    let rows: Vec<usize> = (0..table.len()).collect();
    (1..=parties).map(|p| table.party_features(p, &rows)).collect()
}

pub fn test_auc(model: &TrainedModel, test: &Table, parties: usize) -> Result<f64> {
    let labels = test.labels.as_ref().ok_or_else(|| Error::Data("test split has no labels".into()))?;
    auc(&model.predict(&party_blocks(test, parties))?, labels)
}

/// AUC of the generating model's own probabilities on the test split.
pub fn bayes_auc(data: &CachedDataset) -> Option<f64> {
    let scores = data.test_bayes.as_ref()?;
    auc(scores, data.test.labels.as_ref()?).ok()
}

/// Contrastive pre-training of every passive party for one seed. Passive
/// local sets do not depend on the aligned count, so one run per seed
/// serves every count.
pub fn pretrain_passive_parties(
    cfg: &RunConfig,
    train: &Table,
    specs: &[EncoderSpec],
    seed: u64,
) -> Result<Vec<PassivePretrained>> {
    let ds = partition(cfg, train, seed, cfg.partition.pool())?;
    (2..=cfg.partition.parties)
        .map(|k| pretrain_passive(k, &ds.party(k).features, &specs[k - 1], &cfg.pretrain.ssl, seed))
        .collect()
}

pub fn pretrain_active_party(cfg: &RunConfig, ds: &VerticalDataset, spec: &EncoderSpec, seed: u64) -> Result<ActivePretrained> {
    pretrain_active(&ds.active().features, &ds.labels, spec, &cfg.pretrain.sup, seed)
}

fn check_tag(ck: &Checkpoint, tag: &str, config_hash: &str, seed: u64) -> Result<()> {
    if ck.tag != tag {
        return Err(Error::Checkpoint(format!("expected a '{tag}' checkpoint, found '{}'", ck.tag)));
    }
    let h: String = ck.meta_as("config_hash")?;
    let s: u64 = ck.meta_as("seed")?;
    if h != config_hash || s != seed {
        return Err(Error::Checkpoint(format!(
            "checkpoint belongs to config {h} seed {s}, not {config_hash} seed {seed}"
        )));
    }
    Ok(())
}

pub fn passive_checkpoint(p: &PassivePretrained, config_hash: &str, seed: u64) -> Checkpoint {
    let mut ck = Checkpoint::new(PASSIVE_TAG)
        .with_meta("party", p.party)
        .with_meta("config_hash", config_hash)
        .with_meta("seed", seed)
        .with_meta("initial_loss", p.initial_loss)
        .with_meta("final_loss", p.final_loss)
        .with_meta("loss_trace", &p.loss_trace);
    ck.push_params("encoder", &p.encoder);
    ck
}

pub fn load_passive(path: &Path, spec: &EncoderSpec, config_hash: &str, seed: u64) -> Result<Encoder> {
    let ck = Checkpoint::load(path)?;
    check_tag(&ck, PASSIVE_TAG, config_hash, seed)?;
    let mut enc = Encoder::init(spec, &mut stream(0, "checkpoint/shape"));
    ck.load_params("encoder", &mut enc)?;
    Ok(enc)
}

pub fn active_checkpoint(a: &ActivePretrained, config_hash: &str, seed: u64, aligned: usize) -> Checkpoint {
    let mut ck = Checkpoint::new(ACTIVE_TAG)
        .with_meta("party", 1)
        .with_meta("config_hash", config_hash)
        .with_meta("seed", seed)
        .with_meta("aligned_count", aligned)
        .with_meta("training", &a.meta);
    ck.push_params("encoder", &a.model.encoder);
    ck.push_params("head", &a.model.head);
    ck
}

fn empty_local(spec: &EncoderSpec) -> LocalModel {
    LocalModel::init(spec, 0)
}

pub fn load_active(path: &Path, spec: &EncoderSpec, config_hash: &str, seed: u64, aligned: usize) -> Result<ActivePretrained> {
    let ck = Checkpoint::load(path)?;
    check_tag(&ck, ACTIVE_TAG, config_hash, seed)?;
    let a: usize = ck.meta_as("aligned_count")?;
    if a != aligned {
        return Err(Error::Checkpoint(format!("{}: pre-trained for {a} aligned samples, not {aligned}", path.display())));
    }
    let mut model = empty_local(spec);
    ck.load_params("encoder", &mut model.encoder)?;
    ck.load_params("head", &mut model.head)?;
    let meta: SupMeta = ck.meta_as("training")?;
    Ok(ActivePretrained { model, meta })
}

/// Identifies one downstream cell.
#[derive(Debug, Clone, Copy)]
pub struct CellKey<'a> {
    pub config_hash: &'a str,
    pub seed: u64,
    pub aligned: usize,
    pub variant: Variant,
}

/// Outcome of one (variant, aligned count, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub label: String,
    pub mode: TrainMode,
    pub beta: f64,
    pub aligned_count: usize,
    pub seed: u64,
    pub test_auc: Option<f64>,
    /// Epoch (0-based) of the evaluated weights; `None` for final weights.
    pub selected_epoch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl CellResult {
    pub fn failed(key: &CellKey, reason: &str) -> Self {
        Self {
            label: key.variant.label(),
            mode: key.variant.mode,
            beta: key.variant.beta,
            aligned_count: key.aligned,
            seed: key.seed,
            test_auc: None,
            selected_epoch: None,
            error: Some(reason.to_string()),
        }
    }
}

fn meta_checkpoint(tag: &str, key: &CellKey, party: Option<usize>) -> Checkpoint {
    let ck = Checkpoint::new(tag)
        .with_meta("config_hash", key.config_hash)
        .with_meta("seed", key.seed)
        .with_meta("aligned_count", key.aligned)
        .with_meta("mode", key.variant.mode)
        .with_meta("beta", key.variant.beta);
    match party {
        Some(p) => ck.with_meta("party", p),
        None => ck,
    }
}

/// Writes one checkpoint per node of the evaluated model.
pub fn save_trained(dir: &Path, key: &CellKey, model: &TrainedModel) -> Result<()> {
    match model {
        TrainedModel::Local(m) => {
            let mut ck = meta_checkpoint(LOCAL_TAG, key, Some(1));
            ck.push_params("encoder", &m.encoder);
            ck.push_params("head", &m.head);
            let path = dir.join("party1.json");
            ensure_parent(&path)?;
            ck.save(&path)
        }
        TrainedModel::Federated(m) => {
            for (i, enc) in m.encoders.iter().enumerate() {
                let mut ck = meta_checkpoint(PARTY_TAG, key, Some(i + 1));
                ck.push_params("encoder", enc);
                let path = dir.join(format!("party{}.json", i + 1));
                ensure_parent(&path)?;
                ck.save(&path)?;
            }
            let mut ck = meta_checkpoint(HEAD_TAG, key, None);
            ck.push_params("head", &m.head);
            ck.save(&dir.join("server.json"))
        }
    }
}

pub fn load_trained(dir: &Path, key: &CellKey, specs: &[EncoderSpec]) -> Result<TrainedModel> {
    let check = |ck: &Checkpoint, tag: &str| -> Result<()> {
        check_tag(ck, tag, key.config_hash, key.seed)?;
        let a: usize = ck.meta_as("aligned_count")?;
        let m: TrainMode = ck.meta_as("mode")?;
        if a != key.aligned || m != key.variant.mode {
            return Err(Error::Checkpoint(format!("{}: checkpoint is for {m} at {a} aligned", dir.display())));
        }
        Ok(())
    };
    if key.variant.mode == TrainMode::LocalA {
        let ck = Checkpoint::load(&dir.join("party1.json"))?;
        check(&ck, LOCAL_TAG)?;
        let mut model = empty_local(&specs[0]);
        ck.load_params("encoder", &mut model.encoder)?;
        ck.load_params("head", &mut model.head)?;
        return Ok(TrainedModel::Local(model));
    }
    let mut encoders = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let ck = Checkpoint::load(&dir.join(format!("party{}.json", i + 1)))?;
        check(&ck, PARTY_TAG)?;
        let mut enc = Encoder::init(spec, &mut stream(0, "checkpoint/shape"));
        ck.load_params("encoder", &mut enc)?;
        encoders.push(enc);
    }
    let ck = Checkpoint::load(&dir.join("server.json"))?;
    check(&ck, HEAD_TAG)?;
    let total = encoders.iter().map(Encoder::out_dim).sum();
    let mut head = Mlp::glorot(total, &[1], &mut stream(0, "checkpoint/shape"));
    ck.load_params("head", &mut head)?;
    Ok(TrainedModel::Federated(FederatedModel { encoders, head }))
}

/// Trains one cell, evaluates the validation-selected weights on the test
/// split and writes history, checkpoints and `result.json` under `dir`.
pub fn train_cell(
    cfg: &RunConfig,
    ds: &VerticalDataset,
    test: &Table,
    specs: &[EncoderSpec],
    pretrained: &Pretrained,
    key: &CellKey,
    dir: &Path,
) -> Result<(CellResult, DownstreamRun)> {
    let mut train_cfg = cfg.downstream.training.clone();
    train_cfg.beta = key.variant.beta;
    let run = train_downstream(ds, specs, key.variant.mode, pretrained, &train_cfg, key.seed)?;
    let model = run.selected_model();
    let score = test_auc(&model, test, cfg.partition.parties)?;
    let result = CellResult {
        label: key.variant.label(),
        mode: key.variant.mode,
        beta: key.variant.beta,
        aligned_count: key.aligned,
        seed: key.seed,
        test_auc: Some(score),
        selected_epoch: run.best.as_ref().map(|b| b.epoch),
        error: None,
    };
    write_file(&dir.join("history.jsonl"), &history_jsonl(&run.history)?)?;
    save_trained(dir, key, &model)?;
    write_file(&dir.join("result.json"), &serde_json::to_string_pretty(&result)?)?;
    Ok((result, run))
}

/// Passive encoders for `seed`: loaded from checkpoints when present and
/// current, otherwise trained and saved.
pub fn passive_encoders(
    cfg: &RunConfig,
    layout: &Layout,
    train: &Table,
    specs: &[EncoderSpec],
    seed: u64,
) -> Result<BTreeMap<usize, Encoder>> {
    let hash = cfg.config_hash();
    let k = cfg.partition.parties;
    let mut out = BTreeMap::new();
    let loaded: Option<Vec<Encoder>> = (2..=k)
        .map(|p| load_passive(&layout.passive_checkpoint(seed, p), &specs[p - 1], &hash, seed).ok())
        .collect();
    match loaded {
        Some(encs) => {
            for (i, e) in encs.into_iter().enumerate() {
                out.insert(i + 2, e);
            }
        }
        None => {
            for p in pretrain_passive_parties(cfg, train, specs, seed)? {
                let path = layout.passive_checkpoint(seed, p.party);
                ensure_parent(&path)?;
                passive_checkpoint(&p, &hash, seed).save(&path)?;
                out.insert(p.party, p.encoder);
            }
        }
    }
    Ok(out)
}

/// The active party's pre-trained model for one (seed, aligned count),
/// loaded or trained like [`passive_encoders`].
pub fn active_model(
    cfg: &RunConfig,
    layout: &Layout,
    ds: &VerticalDataset,
    spec: &EncoderSpec,
    seed: u64,
    aligned: usize,
) -> Result<ActivePretrained> {
    let hash = cfg.config_hash();
    let path = layout.active_checkpoint(seed, aligned);
    if let Ok(a) = load_active(&path, spec, &hash, seed, aligned) {
        return Ok(a);
    }
    let a = pretrain_active_party(cfg, ds, spec, seed)?;
    ensure_parent(&path)?;
    active_checkpoint(&a, &hash, seed, aligned).save(&path)?;
    Ok(a)
}
