use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::schema::{FeatureSchema, FieldKind, SampleId};
use crate::error::{Error, Result};
use crate::nn::FeatureBatch;

/// All fields of a sample set before vertical partitioning.
///
/// Categorical columns follow the schema's categorical field order, and
/// numerical columns its numerical field order.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub schema: FeatureSchema,
    pub ids: Vec<SampleId>,
    pub features: FeatureBatch,
    pub labels: Option<Vec<f64>>,
}

impl Table {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Features of `party` only, for the given row positions.
    pub fn party_features(&self, party: usize, rows: &[usize]) -> FeatureBatch {
        let (cat, num) = self.schema.party_columns(party);
        let sub = self.features.select(rows);
        FeatureBatch {
            categorical: sub.categorical.select(ndarray::Axis(1), &cat),
            numerical: sub.numerical.select(ndarray::Axis(1), &num),
        }
    }
}

/// Min/max of one numerical column on the training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleStats {
    pub min: f64,
    pub max: f64,
}

impl ScaleStats {
    /// Min-max scaling clamped to `[0, 1]`; a constant column maps to 0.
    pub fn apply(&self, x: f64) -> f64 {
        let range = self.max - self.min;
        if range <= 0.0 {
            0.0
        } else {
            ((x - self.min) / range).clamp(0.0, 1.0)
        }
    }
}

/// Vocabularies and scaling statistics fitted on a training split.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Preprocessor {
    /// Per categorical field: raw value -> index (starting at 1; 0 = unseen).
    pub vocabularies: Vec<BTreeMap<String, u32>>,
    pub scaling: Vec<ScaleStats>,
}

impl Preprocessor {
    pub fn fit(cat_raw: &[Vec<String>], num_raw: &[Vec<f64>]) -> Self {
        let vocabularies = cat_raw
            .iter()
            .map(|col| {
                let distinct: std::collections::BTreeSet<&String> = col.iter().collect();
                distinct
                    .into_iter()
                    .enumerate()
                    .map(|(i, v)| (v.clone(), i as u32 + 1))
                    .collect()
            })
            .collect();
        let scaling = num_raw
            .iter()
            .map(|col| ScaleStats {
                min: col.iter().copied().fold(f64::INFINITY, f64::min),
                max: col.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            })
            .collect();
        Self {
            vocabularies,
            scaling,
        }
    }

    pub fn encode(&self, field: usize, raw: &str) -> u32 {
        self.vocabularies[field].get(raw).copied().unwrap_or(0)
    }

    /// Schema with categorical cardinalities set to vocabulary size + 1.
    pub fn fitted_schema(&self, schema: &FeatureSchema) -> FeatureSchema {
        let mut out = schema.clone();
        let mut c = 0;
        for f in &mut out.fields {
            if let FieldKind::Categorical { cardinality } = &mut f.kind {
                *cardinality = self.vocabularies[c].len() + 1;
                c += 1;
            }
        }
        out
    }

    pub fn transform(&self, schema: &FeatureSchema, raw: &RawColumns) -> Table {
        let n = raw.ids.len();
        let n_cat = raw.categorical.len();
        let n_num = raw.numerical.len();
        let categorical = Array2::from_shape_fn((n, n_cat), |(i, j)| self.encode(j, &raw.categorical[j][i]));
        let numerical = Array2::from_shape_fn((n, n_num), |(i, j)| self.scaling[j].apply(raw.numerical[j][i]));
        Table {
            schema: self.fitted_schema(schema),
            ids: raw.ids.clone(),
            features: FeatureBatch {
                categorical,
                numerical,
            },
            labels: raw.labels.clone(),
        }
    }
}

/// Column-major raw values read from a CSV file.
#[derive(Debug, Clone, Default)]
pub struct RawColumns {
    pub ids: Vec<SampleId>,
    pub categorical: Vec<Vec<String>>,
    pub numerical: Vec<Vec<f64>>,
    pub labels: Option<Vec<f64>>,
}

fn csv_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Reads `path` into raw columns following `schema`'s field order.
pub fn read_raw_csv(
    path: &Path,
    schema: &FeatureSchema,
    id_column: &str,
    label_column: Option<&str>,
) -> Result<RawColumns> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_err(path, 1, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| csv_err(path, 1, e.to_string()))?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| csv_err(path, 1, format!("missing column '{name}'")))
    };
    let id_idx = col(id_column)?;
    let label_idx = label_column.map(col).transpose()?;
    let cat_idx: Vec<usize> = schema
        .categorical_fields()
        .map(|f| col(&f.name))
        .collect::<Result<_>>()?;
    let num_idx: Vec<usize> = schema
        .numerical_fields()
        .map(|f| col(&f.name))
        .collect::<Result<_>>()?;

    let mut raw = RawColumns {
        categorical: vec![Vec::new(); cat_idx.len()],
        numerical: vec![Vec::new(); num_idx.len()],
        labels: label_idx.map(|_| Vec::new()),
        ..Default::default()
    };
    let mut seen = HashSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            csv_err(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).unwrap_or("").trim();
        let id: u64 = field(id_idx)
            .parse()
            .map_err(|_| csv_err(path, line, format!("bad id '{}'", field(id_idx))))?;
        if !seen.insert(id) {
            return Err(csv_err(path, line, format!("duplicate id {id}")));
        }
        raw.ids.push(SampleId(id));
        for (c, &i) in cat_idx.iter().enumerate() {
            raw.categorical[c].push(field(i).to_string());
        }
        for (c, &i) in num_idx.iter().enumerate() {
            let v: f64 = field(i).parse().map_err(|_| {
                csv_err(path, line, format!("unparseable number '{}' in column {}", field(i), headers.get(i).unwrap_or("?")))
            })?;
            if !v.is_finite() {
                return Err(csv_err(path, line, format!("non-finite number in column {}", headers.get(i).unwrap_or("?"))));
            }
            raw.numerical[c].push(v);
        }
        if let (Some(i), Some(labels)) = (label_idx, raw.labels.as_mut()) {
            let y: f64 = match field(i) {
                "0" | "0.0" => 0.0,
                "1" | "1.0" => 1.0,
                other => return Err(csv_err(path, line, format!("label '{other}' is not 0/1"))),
            };
            labels.push(y);
        }
    }
    if raw.ids.is_empty() {
        return Err(Error::Data(format!("{}: no samples", path.display())));
    }
    Ok(raw)
}

/// Loads a training CSV, fitting vocabularies and scaling on it.
pub fn load_csv(
    path: &Path,
    schema: &FeatureSchema,
    id_column: &str,
    label_column: Option<&str>,
) -> Result<(Table, Preprocessor)> {
    let raw = read_raw_csv(path, schema, id_column, label_column)?;
    let pre = Preprocessor::fit(&raw.categorical, &raw.numerical);
    Ok((pre.transform(schema, &raw), pre))
}

/// Loads a held-out CSV with statistics fitted on the training split.
pub fn load_csv_with(
    path: &Path,
    schema: &FeatureSchema,
    pre: &Preprocessor,
    id_column: &str,
    label_column: Option<&str>,
) -> Result<Table> {
    let raw = read_raw_csv(path, schema, id_column, label_column)?;
    Ok(pre.transform(schema, &raw))
}
