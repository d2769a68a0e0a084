use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::schema::{FeatureSchema, SampleId};
use super::table::Table;
use crate::error::{Error, Result};
use crate::nn::FeatureBatch;
use crate::rng::stream;

/// One party's local feature matrix, addressable by sample id.
#[derive(Debug, Clone)]
pub struct PartyView {
    /// 1-based party id.
    pub party: usize,
    pub ids: Vec<SampleId>,
    pub features: FeatureBatch,
    index: HashMap<SampleId, usize>,
}

impl PartyView {
    pub fn new(party: usize, ids: Vec<SampleId>, features: FeatureBatch) -> Result<Self> {
        if ids.len() != features.len() {
            return Err(Error::shape("party view rows", &[ids.len()], &[features.len()]));
        }
        let index: HashMap<_, _> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        if index.len() != ids.len() {
            return Err(Error::Data(format!("party {party} has duplicate sample ids")));
        }
        Ok(Self {
            party,
            ids,
            features,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: SampleId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn position(&self, id: SampleId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    /// Rows for `ids`, in that order.
    pub fn rows(&self, ids: &[SampleId]) -> Result<FeatureBatch> {
        let pos = ids
            .iter()
            .map(|id| {
                self.position(*id).ok_or_else(|| {
                    Error::Data(format!("party {} has no sample {}", self.party, id.0))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.features.select(&pos))
    }
}

/// Per-party views over a shared id space; labels live with party 1 only.
#[derive(Debug, Clone)]
pub struct VerticalDataset {
    pub schema: FeatureSchema,
    pub parties: Vec<PartyView>,
    /// Labels for every local sample of party 1, parallel to `parties[0].ids`.
    pub labels: Vec<f64>,
    /// Ids present at every party, in a fixed order.
    pub aligned: Vec<SampleId>,
    /// Per party: local ids that are not aligned.
    pub unaligned: Vec<Vec<SampleId>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionConfig {
    pub parties: usize,
    pub aligned_count: usize,
    /// Local samples per party; `None` deals every remaining id.
    pub local_size: Option<usize>,
    /// Size of the reserved pool the aligned set is a prefix of; defaults
    /// to `aligned_count`. Passive local sets depend only on the pool, so
    /// they stay fixed while the aligned count varies within it.
    #[serde(default)]
    pub aligned_pool: Option<usize>,
    pub seed: u64,
}

impl VerticalDataset {
    pub fn num_parties(&self) -> usize {
        self.parties.len()
    }

    pub fn active(&self) -> &PartyView {
        &self.parties[0]
    }

    pub fn party(&self, party: usize) -> &PartyView {
        &self.parties[party - 1]
    }

    pub fn labels_for(&self, ids: &[SampleId]) -> Result<Vec<f64>> {
        let active = self.active();
        ids.iter()
            .map(|id| {
                active
                    .position(*id)
                    .map(|p| self.labels[p])
                    .ok_or_else(|| Error::Data(format!("no label for sample {}", id.0)))
            })
            .collect()
    }

    /// Every row of `table` becomes an aligned sample at every party, in
    /// table order. Used for held-out test sets.
    pub fn fully_aligned(table: &Table, parties: usize) -> Result<Self> {
        let labels = table
            .labels
            .clone()
            .ok_or_else(|| Error::Data("table has no labels".into()))?;
        let rows: Vec<usize> = (0..table.len()).collect();
        let views = (1..=parties)
            .map(|k| PartyView::new(k, table.ids.clone(), table.party_features(k, &rows)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            schema: table.schema.clone(),
            parties: views,
            labels,
            aligned: table.ids.clone(),
            unaligned: vec![Vec::new(); parties],
        })
    }

    /// Checks the structural invariants: the aligned set is exactly the
    /// intersection of all parties' ids, and labels cover party 1.
    pub fn check_invariants(&self) -> Result<()> {
        let mut counts: HashMap<SampleId, usize> = HashMap::new();
        for p in &self.parties {
            for id in &p.ids {
                *counts.entry(*id).or_default() += 1;
            }
        }
        let mut intersection: Vec<SampleId> = counts
            .into_iter()
            .filter(|(_, c)| *c == self.parties.len())
            .map(|(id, _)| id)
            .collect();
        intersection.sort();
        let mut aligned = self.aligned.clone();
        aligned.sort();
        if intersection != aligned {
            return Err(Error::Data("aligned set differs from the id intersection".into()));
        }
        if self.labels.len() != self.active().len() {
            return Err(Error::Data("labels do not cover party 1".into()));
        }
        Ok(())
    }
}

/// Splits `table` column-wise into `parties` views and row-wise into an
/// aligned set plus per-party unaligned samples.
///
/// A seeded permutation of all ids is taken. Its first `pool` entries form
/// the aligned pool, of which the first `aligned_count` are aligned; the
/// remaining ids are dealt round-robin to the parties. Passive parties hold
/// the whole pool plus their share; the active party holds only the aligned
/// prefix plus its share, so the intersection is exactly the aligned set.
/// With `local_size = Some(L)`, shares are truncated so that every party has
/// exactly `L` local samples.
///
/// For a fixed seed and pool, smaller aligned sets are prefixes of larger
/// ones and passive local sets do not depend on `aligned_count`.
pub fn vertical_partition(table: &Table, cfg: &PartitionConfig) -> Result<VerticalDataset> {
    let k = cfg.parties;
    table.schema.validate(k, true)?;
    let labels = table
        .labels
        .as_ref()
        .ok_or_else(|| Error::Data("table has no labels for party 1".into()))?;
    let n = table.len();
    let a = cfg.aligned_count;
    let pool = cfg.aligned_pool.unwrap_or(a);
    if a > pool {
        return Err(Error::Config(format!("aligned count {a} exceeds the aligned pool {pool}")));
    }
    if pool > n {
        return Err(Error::Data(format!("aligned count {pool} exceeds the {n} available samples")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(cfg.seed, "partition"));
    let (pool_rows, rest) = order.split_at(pool);
    let aligned_rows = &pool_rows[..a];

    let mut shares: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &row) in rest.iter().enumerate() {
        shares[i % k].push(row);
    }
    // rows every party holds besides its share
    let base = |party: usize| if party == 1 { aligned_rows } else { pool_rows };
    if let Some(local) = cfg.local_size {
        if pool > local {
            return Err(Error::Data(format!("aligned count {pool} exceeds the per-party sample count {local}")));
        }
        for (p, share) in shares.iter_mut().enumerate() {
            let want = local - base(p + 1).len();
            if share.len() < want {
                return Err(Error::Data(format!(
                    "party {} needs {want} unaligned samples but only {} remain",
                    p + 1,
                    share.len()
                )));
            }
            share.truncate(want);
        }
    }

    let aligned: Vec<SampleId> = aligned_rows.iter().map(|&r| table.ids[r]).collect();
    let mut parties = Vec::with_capacity(k);
    let mut unaligned = Vec::with_capacity(k);
    let mut active_labels = Vec::new();
    for (p, share) in shares.iter().enumerate() {
        let party = p + 1;
        let rows: Vec<usize> = base(party).iter().chain(share.iter()).copied().collect();
        let ids: Vec<SampleId> = rows.iter().map(|&r| table.ids[r]).collect();
        if party == 1 {
            active_labels = rows.iter().map(|&r| labels[r]).collect();
        }
        unaligned.push(ids[a..].to_vec());
        parties.push(PartyView::new(party, ids, table.party_features(party, &rows))?);
    }
    Ok(VerticalDataset {
        schema: table.schema.clone(),
        parties,
        labels: active_labels,
        aligned,
        unaligned,
    })
}

/// The same id sequence sliced out of every party, with party-1 labels.
#[derive(Debug, Clone)]
pub struct AlignedBatch {
    pub ids: Vec<SampleId>,
    pub parties: Vec<FeatureBatch>,
    pub labels: Vec<f64>,
}

impl AlignedBatch {
    pub fn gather(ds: &VerticalDataset, ids: &[SampleId]) -> Result<Self> {
        let parties = ds
            .parties
            .iter()
            .map(|p| p.rows(ids))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            ids: ids.to_vec(),
            parties,
            labels: ds.labels_for(ids)?,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Shuffled mini-batch id order for one epoch; the final short batch is kept.
pub fn epoch_batches(ids: &[SampleId], batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Vec<SampleId>>> {
    if ids.is_empty() {
        return Err(Error::Training("cannot batch an empty sample set".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut order = ids.to_vec();
    order.shuffle(&mut stream(seed, &format!("shuffle/epoch/{epoch}")));
    Ok(order.chunks(batch_size).map(|c| c.to_vec()).collect())
}

/// One epoch of aligned mini-batches over `ids` (defaults to the aligned set).
pub fn sample_batches(
    ds: &VerticalDataset,
    ids: &[SampleId],
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<AlignedBatch>> {
    epoch_batches(ids, batch_size, seed, epoch)?
        .iter()
        .map(|b| AlignedBatch::gather(ds, b))
        .collect()
}

pub fn sample_aligned_batches(
    ds: &VerticalDataset,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<AlignedBatch>> {
    if ds.aligned.is_empty() {
        return Err(Error::Training("the aligned set is empty".into()));
    }
    sample_batches(ds, &ds.aligned, batch_size, seed, epoch)
}
