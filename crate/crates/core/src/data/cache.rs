//! On-disk dataset cache: one CSV per (party, split) holding that party's
//! columns, label files owned by party 1, and a JSON manifest.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::schema::{FeatureSchema, SampleId};
use super::table::{Preprocessor, ScaleStats, Table};
use crate::error::{Error, Result};
use crate::nn::FeatureBatch;

pub const MANIFEST_FILE: &str = "manifest.json";
const CACHE_FORMAT: &str = "vflhlp-dataset";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub name: String,
    pub rows: usize,
    pub label_file: String,
    pub party_files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub parties: usize,
    pub schema: FeatureSchema,
    pub splits: Vec<SplitInfo>,
    /// Min/max per numerical field, fitted on the training split.
    pub scaling: Vec<ScaleStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preprocessor: Option<Preprocessor>,
}

/// Train pool and test split as stored in a cache directory.
#[derive(Debug, Clone)]
pub struct CachedDataset {
    pub manifest: Manifest,
    pub train: Table,
    pub test: Table,
    /// Oracle scores when the data is synthetic.
    pub train_bayes: Option<Vec<f64>>,
    pub test_bayes: Option<Vec<f64>>,
}

impl CachedDataset {
    pub fn dir_is_current(dir: &Path, config_hash: &str) -> bool {
        fs::read_to_string(dir.join(MANIFEST_FILE))
            .ok()
            .and_then(|t| serde_json::from_str::<Manifest>(&t).ok())
            .is_some_and(|m| m.config_hash == config_hash && m.format == CACHE_FORMAT)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let splits = [
            (&self.train, self.train_bayes.as_deref(), &self.manifest.splits[0]),
            (&self.test, self.test_bayes.as_deref(), &self.manifest.splits[1]),
        ];
        for (table, bayes, info) in splits {
            write_labels(&dir.join(&info.label_file), table, bayes)?;
            for (p, file) in info.party_files.iter().enumerate() {
                write_party(&dir.join(file), table, p + 1)?;
            }
        }
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.format != CACHE_FORMAT {
            return Err(Error::Data(format!("{}: not a dataset cache", path.display())));
        }
        let mut tables = Vec::new();
        for info in &manifest.splits {
            tables.push(read_split(dir, &manifest, info)?);
        }
        let (test, test_bayes) = tables.pop().ok_or_else(|| Error::Data("cache has no test split".into()))?;
        let (train, train_bayes) = tables.pop().ok_or_else(|| Error::Data("cache has no train split".into()))?;
        Ok(Self {
            manifest,
            train,
            test,
            train_bayes,
            test_bayes,
        })
    }
}

#[allow(clippy::too_many_arguments)]
pub fn new_manifest(
    config_hash: &str,
    seed: u64,
    parties: usize,
    schema: &FeatureSchema,
    train_rows: usize,
    test_rows: usize,
    scaling: Vec<ScaleStats>,
    preprocessor: Option<Preprocessor>,
) -> Manifest {
    let split = |name: &str, rows| SplitInfo {
        name: name.to_string(),
        rows,
        label_file: format!("labels_{name}.csv"),
        party_files: (1..=parties).map(|p| format!("party{p}_{name}.csv")).collect(),
    };
    Manifest {
        format: CACHE_FORMAT.into(),
        version: 1,
        config_hash: config_hash.into(),
        seed,
        parties,
        schema: schema.clone(),
        splits: vec![split("train", train_rows), split("test", test_rows)],
        scaling,
        preprocessor,
    }
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn csv_io(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Data(format!("{}: {e}", path.display()))
}

fn write_labels(path: &Path, table: &Table, bayes: Option<&[f64]>) -> Result<()> {
    let labels = table.labels.as_ref().ok_or_else(|| Error::Data("table has no labels".into()))?;
    let mut w = writer(path)?;
    let mut header = vec!["id", "label"];
    if bayes.is_some() {
        header.push("bayes");
    }
    w.write_record(&header).map_err(csv_io(path))?;
    for (i, id) in table.ids.iter().enumerate() {
        let mut row = vec![id.0.to_string(), labels[i].to_string()];
        if let Some(b) = bayes {
            row.push(b[i].to_string());
        }
        w.write_record(&row).map_err(csv_io(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_party(path: &Path, table: &Table, party: usize) -> Result<()> {
    let (cat, num) = table.schema.party_columns(party);
    let cat_names: Vec<&str> = table.schema.categorical_fields().map(|f| f.name.as_str()).collect();
    let num_names: Vec<&str> = table.schema.numerical_fields().map(|f| f.name.as_str()).collect();
    let mut w = writer(path)?;
    let header: Vec<&str> = std::iter::once("id")
        .chain(cat.iter().map(|&c| cat_names[c]))
        .chain(num.iter().map(|&c| num_names[c]))
        .collect();
    w.write_record(&header).map_err(csv_io(path))?;
    for (i, id) in table.ids.iter().enumerate() {
        let row: Vec<String> = std::iter::once(id.0.to_string())
            .chain(cat.iter().map(|&c| table.features.categorical[[i, c]].to_string()))
            .chain(num.iter().map(|&c| table.features.numerical[[i, c]].to_string()))
            .collect();
        w.write_record(&row).map_err(csv_io(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_rows(path: &Path) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_io(path))?;
    r.records().collect::<std::result::Result<Vec<_>, _>>().map_err(csv_io(path))
}

fn parse<T: std::str::FromStr>(path: &Path, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Data(format!("{}: cannot parse '{s}'", path.display())))
}

fn read_split(dir: &Path, m: &Manifest, info: &SplitInfo) -> Result<(Table, Option<Vec<f64>>)> {
    let label_path: PathBuf = dir.join(&info.label_file);
    let rows = read_rows(&label_path)?;
    let n = rows.len();
    if n != info.rows {
        return Err(Error::Data(format!("{}: expected {} rows, found {n}", label_path.display(), info.rows)));
    }
    let mut ids = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut bayes = Vec::new();
    for r in &rows {
        ids.push(SampleId(parse(&label_path, &r[0])?));
        labels.push(parse(&label_path, &r[1])?);
        if r.len() > 2 {
            bayes.push(parse(&label_path, &r[2])?);
        }
    }
    let n_cat = m.schema.categorical_fields().count();
    let n_num = m.schema.numerical_fields().count();
    let mut categorical = Array2::<u32>::zeros((n, n_cat));
    let mut numerical = Array2::<f64>::zeros((n, n_num));
    for (p, file) in info.party_files.iter().enumerate() {
        let path = dir.join(file);
        let (cat, num) = m.schema.party_columns(p + 1);
        let rows = read_rows(&path)?;
        if rows.len() != n {
            return Err(Error::Data(format!("{}: row count differs from labels", path.display())));
        }
        for (i, r) in rows.iter().enumerate() {
            if parse::<u64>(&path, &r[0])? != ids[i].0 {
                return Err(Error::Data(format!("{}: id order differs from labels", path.display())));
            }
            for (j, &c) in cat.iter().enumerate() {
                categorical[[i, c]] = parse(&path, &r[1 + j])?;
            }
            for (j, &c) in num.iter().enumerate() {
                numerical[[i, c]] = parse(&path, &r[1 + cat.len() + j])?;
            }
        }
    }
    let table = Table {
        schema: m.schema.clone(),
        ids,
        features: FeatureBatch {
            categorical,
            numerical,
        },
        labels: Some(labels),
    };
    Ok((table, (!bayes.is_empty()).then_some(bayes)))
}
