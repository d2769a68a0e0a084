use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::EncoderSpec;

/// Identifier shared by all parties for the same underlying sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SampleId(pub u64);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FieldKind {
    /// `cardinality` counts the reserved unseen index 0; 0 means "fit from data".
    Categorical { cardinality: usize },
    Numerical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawFieldSpec", into = "RawFieldSpec")]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
    /// Owning party, 1-based; party 1 is the label owner.
    pub party: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum KindTag {
    Categorical,
    Numerical,
}

/// Flat JSON form: `{"name", "kind", "cardinality"?, "party"}`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFieldSpec {
    name: String,
    kind: KindTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cardinality: Option<usize>,
    party: usize,
}

impl TryFrom<RawFieldSpec> for FieldSpec {
    type Error = String;

    fn try_from(raw: RawFieldSpec) -> std::result::Result<Self, String> {
        let kind = match (raw.kind, raw.cardinality) {
            (KindTag::Categorical, c) => FieldKind::Categorical {
                cardinality: c.unwrap_or(0),
            },
            (KindTag::Numerical, None) => FieldKind::Numerical,
            (KindTag::Numerical, Some(_)) => {
                return Err(format!("numerical field '{}' cannot have a cardinality", raw.name))
            }
        };
        Ok(FieldSpec {
            name: raw.name,
            kind,
            party: raw.party,
        })
    }
}

impl From<FieldSpec> for RawFieldSpec {
    fn from(f: FieldSpec) -> Self {
        let (kind, cardinality) = match f.kind {
            FieldKind::Categorical { cardinality } => (KindTag::Categorical, Some(cardinality)),
            FieldKind::Numerical => (KindTag::Numerical, None),
        };
        RawFieldSpec {
            name: f.name,
            kind,
            cardinality,
            party: f.party,
        }
    }
}

impl FieldSpec {
    pub fn categorical(name: impl Into<String>, cardinality: usize, party: usize) -> Self {
        Self {
            name: name.into(),
            kind: FieldKind::Categorical { cardinality },
            party,
        }
    }

    pub fn numerical(name: impl Into<String>, party: usize) -> Self {
        Self {
            name: name.into(),
            kind: FieldKind::Numerical,
            party,
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, FieldKind::Categorical { .. })
    }
}

/// Ordered fields with their party assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSchema {
    pub fields: Vec<FieldSpec>,
}

impl FeatureSchema {
    pub fn new(fields: Vec<FieldSpec>) -> Self {
        Self { fields }
    }

    /// Checks the field -> party map against `parties`; with `fitted`, every
    /// categorical cardinality must also be known.
    pub fn validate(&self, parties: usize, fitted: bool) -> Result<()> {
        if parties == 0 {
            return Err(Error::Config("at least one party is required".into()));
        }
        if self.fields.is_empty() {
            return Err(Error::Config("schema has no fields".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for f in &self.fields {
            if !seen.insert(f.name.as_str()) {
                return Err(Error::Config(format!("field '{}' is declared twice", f.name)));
            }
            if f.party == 0 || f.party > parties {
                return Err(Error::Config(format!(
                    "field '{}' is assigned to party {} but there are {parties} parties",
                    f.name, f.party
                )));
            }
            if let FieldKind::Categorical { cardinality } = f.kind {
                if fitted && cardinality < 1 {
                    return Err(Error::Config(format!(
                        "field '{}' has cardinality {cardinality}",
                        f.name
                    )));
                }
            }
        }
        for p in 1..=parties {
            if !self.fields.iter().any(|f| f.party == p) {
                return Err(Error::Config(format!("party {p} owns no fields")));
            }
        }
        Ok(())
    }

    pub fn num_parties(&self) -> usize {
        self.fields.iter().map(|f| f.party).max().unwrap_or(0)
    }

    pub fn categorical_fields(&self) -> impl Iterator<Item = &FieldSpec> {
        self.fields.iter().filter(|f| f.is_categorical())
    }

    pub fn numerical_fields(&self) -> impl Iterator<Item = &FieldSpec> {
        self.fields.iter().filter(|f| !f.is_categorical())
    }

    /// Positions (within the categorical and numerical column blocks) of the
    /// fields owned by `party`.
    pub fn party_columns(&self, party: usize) -> (Vec<usize>, Vec<usize>) {
        let cat = self
            .categorical_fields()
            .enumerate()
            .filter(|(_, f)| f.party == party)
            .map(|(i, _)| i)
            .collect();
        let num = self
            .numerical_fields()
            .enumerate()
            .filter(|(_, f)| f.party == party)
            .map(|(i, _)| i)
            .collect();
        (cat, num)
    }

    pub fn party_cardinalities(&self, party: usize) -> Vec<usize> {
        self.categorical_fields()
            .filter(|f| f.party == party)
            .map(|f| match f.kind {
                FieldKind::Categorical { cardinality } => cardinality,
                FieldKind::Numerical => unreachable!(),
            })
            .collect()
    }

    pub fn party_field_counts(&self, party: usize) -> (usize, usize) {
        let (c, n) = self.party_columns(party);
        (c.len(), n.len())
    }

    /// One encoder spec per party, sized from the fields it owns.
    pub fn encoder_specs(&self, parties: usize, embed_dim: usize, widths: &[usize]) -> Vec<EncoderSpec> {
        (1..=parties)
            .map(|p| EncoderSpec {
                cardinalities: self.party_cardinalities(p),
                numerical: self.party_field_counts(p).1,
                embed_dim,
                widths: widths.to_vec(),
            })
            .collect()
    }
}
