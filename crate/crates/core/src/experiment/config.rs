use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{FeatureSchema, FieldSpec, Preset, SynthConfig};
use crate::error::{Error, Result};
use crate::federated::{DownstreamConfig, TrainMode};
use crate::nn::EncoderSpec;
use crate::ssl::SslConfig;
use crate::sup::SupConfig;

/// Environment variable that overrides the configured output directory.
pub const OUT_ENV: &str = "VFLHLP_OUT";

/// One experiment: data source, partitioning, architectures and every
/// training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSection,
    pub partition: PartitionSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub pretrain: PretrainSection,
    #[serde(default)]
    pub downstream: DownstreamSection,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSection {
    Synthetic(SyntheticSection),
    Csv(CsvSection),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub preset: Preset,
    pub samples: usize,
    pub test_samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub party_weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field_noise: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signal: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSection {
    /// Relative paths resolve against the config file's directory.
    pub train: PathBuf,
    pub test: PathBuf,
    #[serde(default = "default_id_column")]
    pub id_column: String,
    #[serde(default = "default_label_column")]
    pub label_column: String,
    pub schema: FeatureSchema,
}

fn default_id_column() -> String {
    "id".into()
}

fn default_label_column() -> String {
    "label".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSection {
    pub parties: usize,
    pub aligned_counts: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Samples held by every party; `None` hands out the whole pool.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_size: Option<usize>,
    /// Size of the id pool aligned sets are drawn from (defaults to the
    /// largest aligned count, which keeps passive local sets fixed per seed).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aligned_pool: Option<usize>,
    /// Field name -> owning party, overriding the dataset's own assignment.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub field_parties: BTreeMap<String, usize>,
}

impl PartitionSection {
    pub fn pool(&self) -> usize {
        self.aligned_pool
            .unwrap_or_else(|| self.aligned_counts.iter().copied().max().unwrap_or(0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSection {
    pub embed_dim: usize,
    pub widths: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Empty: dataset defaults. One entry: shared by every party.
    /// Otherwise one entry per party.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub encoders: Vec<EncoderSection>,
    /// Expected head input width, checked against the representation sizes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_input: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSection {
    #[serde(default)]
    pub ssl: SslConfig,
    #[serde(default)]
    pub sup: SupConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DownstreamSection {
    #[serde(default = "all_modes")]
    pub modes: Vec<TrainMode>,
    /// When non-empty, constrained modes run once per listed beta instead of
    /// once with `training.beta`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub beta_sweep: Vec<f64>,
    #[serde(default)]
    pub training: DownstreamConfig,
}

fn all_modes() -> Vec<TrainMode> {
    TrainMode::ALL.to_vec()
}

impl Default for DownstreamSection {
    fn default() -> Self {
        Self {
            modes: all_modes(),
            beta_sweep: Vec::new(),
            training: DownstreamConfig::default(),
        }
    }
}

/// A mode plus the beta it runs with; the unit of one result-table row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Variant {
    pub mode: TrainMode,
    pub beta: f64,
    /// Whether the label carries the beta (only under a sweep).
    pub swept: bool,
}

impl Variant {
    pub fn label(&self) -> String {
        if self.swept {
            format!("{}@{}", self.mode.name(), self.beta)
        } else {
            self.mode.name().to_string()
        }
    }
}

impl DownstreamSection {
    pub fn variants(&self) -> Vec<Variant> {
        let mut out = Vec::new();
        for &mode in &self.modes {
            if mode.uses_constraint() && !self.beta_sweep.is_empty() {
                out.extend(self.beta_sweep.iter().map(|&beta| Variant { mode, beta, swept: true }));
            } else {
                out.push(Variant {
                    mode,
                    beta: self.training.beta,
                    swept: false,
                });
            }
        }
        out
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file; relative CSV paths are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)?;
        if let DatasetSection::Csv(csv) = &mut cfg.dataset {
            let base = path.parent().unwrap_or(Path::new("."));
            for p in [&mut csv.train, &mut csv.test] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// SHA-256 of the canonical JSON form, ignoring the output directory.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        sha256_hex(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }

    /// Hash of everything the prepared dataset depends on.
    pub fn dataset_hash(&self) -> String {
        let key = (&self.dataset, self.partition.parties, &self.partition.field_parties);
        sha256_hex(serde_json::to_string(&key).expect("config serializes").as_bytes())
    }

    /// Output directory: `cli` if given, else `$VFLHLP_OUT`, else the config value.
    pub fn resolve_output(&self, cli: Option<&Path>) -> PathBuf {
        if let Some(p) = cli {
            return p.to_path_buf();
        }
        match std::env::var_os(OUT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.output_dir.clone(),
        }
    }

    /// Field layout with `field_parties` overrides applied; categorical
    /// cardinalities may still be unfitted (0) for CSV sources.
    pub fn schema(&self) -> Result<FeatureSchema> {
        let mut fields: Vec<FieldSpec> = match &self.dataset {
            DatasetSection::Synthetic(s) => s.preset.fields(),
            DatasetSection::Csv(c) => c.schema.fields.clone(),
        };
        for (name, &party) in &self.partition.field_parties {
            let f = fields
                .iter_mut()
                .find(|f| &f.name == name)
                .ok_or_else(|| Error::Config(format!("field_parties names unknown field '{name}'")))?;
            f.party = party;
        }
        Ok(FeatureSchema::new(fields))
    }

    pub fn synth_config(&self) -> Result<Option<SynthConfig>> {
        let DatasetSection::Synthetic(s) = &self.dataset else {
            return Ok(None);
        };
        let mut cfg = s.preset.synth_config(s.samples, s.test_samples, s.seed);
        cfg.fields = self.schema()?.fields;
        cfg.party_weights = s.party_weights.clone().unwrap_or_else(|| vec![1.0; self.partition.parties]);
        if let Some(v) = s.latent_dim {
            cfg.latent_dim = v;
        }
        if let Some(v) = s.field_noise {
            cfg.field_noise = v;
        }
        if let Some(v) = s.signal {
            cfg.signal = v;
        }
        if let Some(v) = s.noise {
            cfg.noise = v;
        }
        Ok(Some(cfg))
    }

    fn encoder_sections(&self) -> Vec<EncoderSection> {
        let k = self.partition.parties;
        match self.model.encoders.len() {
            0 => {
                let (embed_dim, widths) = match &self.dataset {
                    DatasetSection::Synthetic(s) => (s.preset.embed_dim(), s.preset.encoder_widths()),
                    DatasetSection::Csv(_) => (8, vec![64, 64, 16]),
                };
                vec![EncoderSection { embed_dim, widths }; k]
            }
            1 => vec![self.model.encoders[0].clone(); k],
            _ => self.model.encoders.clone(),
        }
    }

    /// Encoder architectures for a fitted schema.
    pub fn encoder_specs(&self, schema: &FeatureSchema) -> Vec<EncoderSpec> {
        self.encoder_sections()
            .into_iter()
            .enumerate()
            .map(|(p, e)| EncoderSpec {
                cardinalities: schema.party_cardinalities(p + 1),
                numerical: schema.party_field_counts(p + 1).1,
                embed_dim: e.embed_dim,
                widths: e.widths,
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.partition;
        let k = p.parties;
        if k == 0 {
            return Err(Error::Config("partition.parties must be at least 1".into()));
        }
        self.schema()?.validate(k, false)?;
        if let Some(s) = self.synth_config()? {
            if s.party_weights.len() != k {
                return Err(Error::Config(format!(
                    "dataset.party_weights has {} entries for {k} parties",
                    s.party_weights.len()
                )));
            }
            s.validate()?;
        }
        if p.aligned_counts.is_empty() {
            return Err(Error::Config("partition.aligned_counts is empty".into()));
        }
        if p.aligned_counts.contains(&0) {
            return Err(Error::Config("aligned counts must be positive".into()));
        }
        if p.aligned_counts.iter().collect::<BTreeSet<_>>().len() != p.aligned_counts.len() {
            return Err(Error::Config("partition.aligned_counts has duplicates".into()));
        }
        if p.seeds.is_empty() {
            return Err(Error::Config("partition.seeds is empty".into()));
        }
        if p.seeds.iter().collect::<BTreeSet<_>>().len() != p.seeds.len() {
            return Err(Error::Config("partition.seeds has duplicates".into()));
        }
        let max = p.aligned_counts.iter().copied().max().unwrap_or(0);
        if p.pool() < max {
            return Err(Error::Config(format!("aligned_pool {} is below the largest aligned count {max}", p.pool())));
        }
        if let Some(local) = p.local_size {
            if local < p.pool() {
                return Err(Error::Config(format!("local_size {local} is below the aligned pool {}", p.pool())));
            }
        }

        let n = self.model.encoders.len();
        if n > 1 && n != k {
            return Err(Error::Config(format!("model.encoders has {n} entries for {k} parties")));
        }
        let sections = self.encoder_sections();
        for (i, e) in sections.iter().enumerate() {
            if e.embed_dim == 0 || e.widths.is_empty() || e.widths.contains(&0) {
                return Err(Error::Config(format!(
                    "encoder of party {} needs a positive embed_dim and non-empty positive widths",
                    i + 1
                )));
            }
        }
        if let Some(h) = self.model.head_input {
            let total: usize = sections.iter().map(|e| e.widths[e.widths.len() - 1]).sum();
            if h != total {
                return Err(Error::Config(format!(
                    "model.head_input is {h} but the party representations sum to {total}"
                )));
            }
        }

        self.pretrain.ssl.validate()?;
        self.pretrain.sup.validate()?;
        self.downstream.training.validate()?;
        if self.downstream.modes.is_empty() {
            return Err(Error::Config("downstream.modes is empty".into()));
        }
        if self.downstream.modes.iter().collect::<BTreeSet<_>>().len() != self.downstream.modes.len() {
            return Err(Error::Config("downstream.modes has duplicates".into()));
        }
        if let Some(b) = self.downstream.beta_sweep.iter().find(|b| !b.is_finite() || **b < 0.0) {
            return Err(Error::Config(format!("beta_sweep value {b} must be finite and >= 0")));
        }
        Ok(())
    }
}
