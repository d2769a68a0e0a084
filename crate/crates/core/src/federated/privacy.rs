//! Leakage audit over a [`TransportLog`].

use std::collections::HashMap;

use super::transport::{hash_values, MessageKind, TransportLog};
use crate::data::{SampleId, VerticalDataset};
use crate::error::Result;
use crate::nn::FeatureBatch;

/// Hashes of raw data that must never appear as a message payload, each
/// with a description of what it is.
#[derive(Debug, Clone, Default)]
pub struct ForbiddenHashes {
    hashes: HashMap<String, String>,
}

impl ForbiddenHashes {
    pub fn len(&self) -> usize {
        self.hashes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hashes.is_empty()
    }

    pub fn insert(&mut self, hash: String, what: String) {
        self.hashes.entry(hash).or_insert(what);
    }

    pub fn get(&self, hash: &str) -> Option<&str> {
        self.hashes.get(hash).map(String::as_str)
    }

    fn add_features(&mut self, party: usize, set: &str, x: &FeatureBatch) {
        for (j, col) in x.categorical.columns().into_iter().enumerate() {
            let what = format!("party {party} categorical column {j} over {set}");
            self.insert(hash_values(col.iter().map(|&v| v as f64)), what);
        }
        for (j, col) in x.numerical.columns().into_iter().enumerate() {
            let what = format!("party {party} numerical column {j} over {set}");
            self.insert(hash_values(col.iter().copied()), what);
        }
        // the whole feature block, row-major, as a party would ship it
        let rows = x.categorical.rows().into_iter().zip(x.numerical.rows());
        let block = rows.flat_map(|(c, n)| {
            c.iter().map(|&v| v as f64).chain(n.iter().copied()).collect::<Vec<_>>()
        });
        self.insert(hash_values(block), format!("party {party} feature matrix over {set}"));
    }

    /// Every raw feature column, per-party feature matrix and label vector
    /// over each party's full local set and over every named id subset.
    pub fn from_dataset(ds: &VerticalDataset, subsets: &[(String, Vec<SampleId>)]) -> Result<Self> {
        let mut out = Self::default();
        for view in &ds.parties {
            out.add_features(view.party, "local set", &view.features);
        }
        out.insert(hash_values(ds.labels.iter().copied()), "labels over local set".into());
        for (name, ids) in subsets {
            for view in &ds.parties {
                out.add_features(view.party, name, &view.rows(ids)?);
            }
            out.insert(hash_values(ds.labels_for(ids)?), format!("labels over {name}"));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AuditReport {
    pub messages: usize,
    pub violations: Vec<String>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Flags any message whose kind is not a representation or gradient, and
/// any payload whose hash matches raw data.
pub fn audit(log: &TransportLog, forbidden: &ForbiddenHashes) -> AuditReport {
    let mut violations = Vec::new();
    for (i, r) in log.records().iter().enumerate() {
        if !matches!(r.kind, MessageKind::Representation | MessageKind::Gradient) {
            violations.push(format!("message {i} (round {}, party {}) has kind {:?}", r.round, r.party, r.kind));
        }
        if let Some(what) = forbidden.get(&r.hash) {
            violations.push(format!("message {i} (round {}, party {}) carries {what}", r.round, r.party));
        }
    }
    AuditReport {
        messages: log.len(),
        violations,
    }
}
