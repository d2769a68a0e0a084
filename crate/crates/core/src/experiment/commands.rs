//! Entry points behind the `prepare | pretrain | train | eval | grid`
//! subcommands.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::config::{RunConfig, Variant};
use super::pipeline::{
    active_checkpoint, active_model, bayes_auc, ensure_parent, load_or_prepare, load_trained, partition,
    passive_checkpoint, passive_encoders, pretrain_active_party, pretrain_passive_parties, test_auc, train_cell,
    write_file, CellKey, CellResult, Layout,
};
use super::results::{ResultTable, VERSION};
use crate::data::CachedDataset;
use crate::error::{Error, Result};
use crate::federated::{Pretrained, TrainMode};
use crate::nn::EncoderSpec;

/// Optional narrowing of a command to one seed and/or one mode.
#[derive(Debug, Clone, Copy, Default)]
pub struct Selection {
    pub seed: Option<u64>,
    pub mode: Option<TrainMode>,
}

impl Selection {
    fn seeds(&self, cfg: &RunConfig) -> Result<Vec<u64>> {
        match self.seed {
            Some(s) if !cfg.partition.seeds.contains(&s) => {
                Err(Error::Config(format!("seed {s} is not listed in partition.seeds")))
            }
            Some(s) => Ok(vec![s]),
            None => Ok(cfg.partition.seeds.clone()),
        }
    }

    fn variants(&self, cfg: &RunConfig) -> Result<Vec<Variant>> {
        let all = cfg.downstream.variants();
        match self.mode {
            Some(m) => {
                let v: Vec<Variant> = all.into_iter().filter(|v| v.mode == m).collect();
                if v.is_empty() {
                    return Err(Error::Config(format!("mode {m} is not listed in downstream.modes")));
                }
                Ok(v)
            }
            None => Ok(all),
        }
    }
}

fn specs_for(cfg: &RunConfig, data: &CachedDataset) -> Result<Vec<EncoderSpec>> {
    let specs = cfg.encoder_specs(&data.train.schema);
    for s in &specs {
        s.validate()?;
    }
    Ok(specs)
}

/// Builds (or reuses) the dataset cache; returns its directory.
pub fn cmd_prepare(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    let layout = Layout::new(out);
    let data = load_or_prepare(cfg, &layout)?;
    log::info!(
        "dataset ready: {} training and {} test rows in {}",
        data.train.len(),
        data.test.len(),
        layout.dataset().display()
    );
    Ok(layout.dataset())
}

/// Runs pre-training and writes one checkpoint per party and seed (per
/// aligned count for the active party). Returns the written paths.
pub fn cmd_pretrain(cfg: &RunConfig, out: &Path, sel: Selection, passive_only: bool) -> Result<Vec<PathBuf>> {
    let layout = Layout::new(out);
    let data = load_or_prepare(cfg, &layout)?;
    let specs = specs_for(cfg, &data)?;
    let hash = cfg.config_hash();
    let mut written = Vec::new();
    for seed in sel.seeds(cfg)? {
        for p in pretrain_passive_parties(cfg, &data.train, &specs, seed)? {
            log::info!(
                "seed {seed} party {}: contrastive loss {:.4} -> {:.4}",
                p.party,
                p.initial_loss,
                p.final_loss
            );
            let path = layout.passive_checkpoint(seed, p.party);
            ensure_parent(&path)?;
            passive_checkpoint(&p, &hash, seed).save(&path)?;
            written.push(path);
        }
        if passive_only {
            continue;
        }
        for &aligned in &cfg.partition.aligned_counts {
            let ds = partition(cfg, &data.train, seed, aligned)?;
            let a = pretrain_active_party(cfg, &ds, &specs[0], seed)?;
            log::info!(
                "seed {seed} aligned {aligned} party 1: selected epoch {} (val AUC {:?})",
                a.meta.selected_epoch,
                a.meta.val_auc
            );
            let path = layout.active_checkpoint(seed, aligned);
            ensure_parent(&path)?;
            active_checkpoint(&a, &hash, seed, aligned).save(&path)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Every (seed, aligned count, variant) cell of the selection, in a fixed
/// order. Failures are recorded per cell and do not stop the loop.
fn run_cells(cfg: &RunConfig, layout: &Layout, data: &CachedDataset, sel: Selection) -> Result<Vec<CellResult>> {
    let specs = specs_for(cfg, data)?;
    let hash = cfg.config_hash();
    let variants = sel.variants(cfg)?;
    let needs_passive = variants.iter().any(|v| v.mode.warm_starts_passive());
    let needs_active = variants
        .iter()
        .any(|v| v.mode.needs_active_pretrain() || cfg.downstream.training.warm_start_active);
    let mut results = Vec::new();
    for seed in sel.seeds(cfg)? {
        let passive = if needs_passive {
            passive_encoders(cfg, layout, &data.train, &specs, seed).map_err(|e| e.to_string())
        } else {
            Ok(Default::default())
        };
        for &aligned in &cfg.partition.aligned_counts {
            // a failed shared stage marks every cell that depends on it
            let stage = passive.clone().and_then(|passive| {
                let build = || -> Result<_> {
                    let ds = partition(cfg, &data.train, seed, aligned)?;
                    let active = if needs_active {
                        Some(active_model(cfg, layout, &ds, &specs[0], seed, aligned)?)
                    } else {
                        None
                    };
                    Ok((ds, Pretrained { active, passive }))
                };
                build().map_err(|e| e.to_string())
            });
            for &variant in &variants {
                let key = CellKey {
                    config_hash: &hash,
                    seed,
                    aligned,
                    variant,
                };
                let outcome = stage.as_ref().map_err(Clone::clone).and_then(|(ds, pretrained)| {
                    let dir = layout.run_dir(seed, aligned, &variant.label());
                    train_cell(cfg, ds, &data.test, &specs, pretrained, &key, &dir)
                        .map(|(r, _)| r)
                        .map_err(|e| e.to_string())
                });
                let result = match outcome {
                    Ok(r) => {
                        log::info!("seed {seed} aligned {aligned} {}: test AUC {:.4}", r.label, r.test_auc.unwrap_or(f64::NAN));
                        r
                    }
                    Err(e) => {
                        log::error!("seed {seed} aligned {aligned} {}: {e}", variant.label());
                        CellResult::failed(&key, &e)
                    }
                };
                results.push(result);
            }
        }
    }
    Ok(results)
}

/// Downstream training for the selected cells; pre-training checkpoints are
/// reused when present.
pub fn cmd_train(cfg: &RunConfig, out: &Path, sel: Selection) -> Result<Vec<CellResult>> {
    let layout = Layout::new(out);
    let data = load_or_prepare(cfg, &layout)?;
    run_cells(cfg, &layout, &data, sel)
}

/// Re-scores saved checkpoints on the test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub label: String,
    pub aligned_count: usize,
    pub seed: u64,
    pub recorded_auc: Option<f64>,
    pub test_auc: f64,
    /// Bit-for-bit equality with the AUC recorded at training time.
    pub reproduced: bool,
}

pub fn cmd_eval(cfg: &RunConfig, out: &Path, sel: Selection) -> Result<Vec<EvalRecord>> {
    let layout = Layout::new(out);
    let data = CachedDataset::load(&layout.dataset())?;
    let specs = specs_for(cfg, &data)?;
    let hash = cfg.config_hash();
    let mut records = Vec::new();
    for seed in sel.seeds(cfg)? {
        for &aligned in &cfg.partition.aligned_counts {
            for variant in sel.variants(cfg)? {
                let label = variant.label();
                let dir = layout.run_dir(seed, aligned, &label);
                let key = CellKey {
                    config_hash: &hash,
                    seed,
                    aligned,
                    variant,
                };
                let model = load_trained(&dir, &key, &specs)?;
                let score = test_auc(&model, &data.test, cfg.partition.parties)?;
                let recorded = std::fs::read_to_string(dir.join("result.json"))
                    .ok()
                    .and_then(|t| serde_json::from_str::<CellResult>(&t).ok())
                    .and_then(|r| r.test_auc);
                records.push(EvalRecord {
                    label,
                    aligned_count: aligned,
                    seed,
                    recorded_auc: recorded,
                    test_auc: score,
                    reproduced: recorded.is_some_and(|r| r.to_bits() == score.to_bits()),
                });
            }
        }
    }
    write_file(&layout.root.join("eval.json"), &serde_json::to_string_pretty(&records)?)?;
    Ok(records)
}

#[derive(Debug, Clone, Serialize)]
struct RunMeta<'a> {
    version: &'a str,
    config_hash: &'a str,
    started_unix: u64,
    finished_unix: u64,
    failed_cells: usize,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// The full experiment grid: prepare, pre-train, train and evaluate every
/// cell, then write `results.csv` and `results.json`. Failed cells appear as
/// missing with their reason; check [`ResultTable::failures`].
pub fn cmd_grid(cfg: &RunConfig, out: &Path) -> Result<ResultTable> {
    let started = unix_now();
    let layout = Layout::new(out);
    let data = load_or_prepare(cfg, &layout)?;
    let cells = run_cells(cfg, &layout, &data, Selection::default())?;
    let hash = cfg.config_hash();
    let labels: Vec<(String, TrainMode)> = cfg.downstream.variants().iter().map(|v| (v.label(), v.mode)).collect();
    let table = ResultTable::build(
        &hash,
        &cfg.partition.seeds,
        &cfg.partition.aligned_counts,
        &labels,
        cells,
        bayes_auc(&data),
    );
    write_file(&layout.results_csv(), &table.to_csv()?)?;
    write_file(&layout.results_json(), &table.to_json()?)?;
    let meta = RunMeta {
        version: VERSION,
        config_hash: &hash,
        started_unix: started,
        finished_unix: unix_now(),
        failed_cells: table.failures().count(),
    };
    write_file(&layout.run_meta(), &serde_json::to_string_pretty(&meta)?)?;
    log::debug!("results:\n{}", table.render());
    Ok(table)
}
