use ndarray::{concatenate, s, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dense::{Mlp, MlpTape};
use super::embedding::EmbeddingTable;
use super::params::{join, ParamSet};
use crate::error::{Error, Result};

/// Rows of one party's features: integer-coded categorical fields and
/// `[0, 1]`-scaled numerical fields.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    pub categorical: Array2<u32>,
    pub numerical: Array2<f64>,
}

impl FeatureBatch {
    pub fn new(categorical: Array2<u32>, numerical: Array2<f64>) -> Result<Self> {
        if categorical.nrows() != numerical.nrows() {
            return Err(Error::shape(
                "feature batch rows",
                &[categorical.nrows()],
                &[numerical.nrows()],
            ));
        }
        Ok(Self {
            categorical,
            numerical,
        })
    }

    pub fn dense(numerical: Array2<f64>) -> Self {
        Self {
            categorical: Array2::zeros((numerical.nrows(), 0)),
            numerical,
        }
    }

    pub fn len(&self) -> usize {
        self.categorical.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of raw fields (categorical + numerical).
    pub fn num_fields(&self) -> usize {
        self.categorical.ncols() + self.numerical.ncols()
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            categorical: self.categorical.select(Axis(0), rows),
            numerical: self.numerical.select(Axis(0), rows),
        }
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        Self {
            categorical: self.categorical.slice(s![start..end, ..]).to_owned(),
            numerical: self.numerical.slice(s![start..end, ..]).to_owned(),
        }
    }

    pub fn concat(parts: &[FeatureBatch]) -> Result<Self> {
        let cats: Vec<_> = parts.iter().map(|p| p.categorical.view()).collect();
        let nums: Vec<_> = parts.iter().map(|p| p.numerical.view()).collect();
        let categorical = concatenate(Axis(0), &cats).map_err(|e| Error::Schema(e.to_string()))?;
        let numerical = concatenate(Axis(0), &nums).map_err(|e| Error::Schema(e.to_string()))?;
        FeatureBatch::new(categorical, numerical)
    }
}

/// Architecture of a party encoder `h^k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSpec {
    /// Table sizes of each categorical field (index 0 reserved for unseen).
    pub cardinalities: Vec<usize>,
    pub numerical: usize,
    pub embed_dim: usize,
    /// Output width of every dense layer; the last entry is the representation size.
    pub widths: Vec<usize>,
}

impl EncoderSpec {
    pub fn input_dim(&self) -> usize {
        self.cardinalities.len() * self.embed_dim + self.numerical
    }

    pub fn out_dim(&self) -> usize {
        *self.widths.last().expect("encoder widths non-empty")
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config("encoder widths must be non-empty and positive".into()));
        }
        if self.input_dim() == 0 {
            return Err(Error::Config("encoder has no input features".into()));
        }
        if self.cardinalities.contains(&0) {
            return Err(Error::Config("categorical cardinality must be >= 1".into()));
        }
        Ok(())
    }
}

/// Embedding lookup followed by an MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub embeddings: EmbeddingTable,
    pub mlp: Mlp,
    pub numerical: usize,
}

#[derive(Debug, Clone)]
pub struct EncoderTape {
    categorical: Array2<u32>,
    mlp: MlpTape,
}

impl EncoderTape {
    pub fn mlp(&self) -> &MlpTape {
        &self.mlp
    }
}

impl Encoder {
    pub fn init<R: Rng + ?Sized>(spec: &EncoderSpec, rng: &mut R) -> Self {
        let embeddings = EmbeddingTable::uniform(&spec.cardinalities, spec.embed_dim, rng);
        let mlp = Mlp::glorot(spec.input_dim(), &spec.widths, rng);
        Self {
            embeddings,
            mlp,
            numerical: spec.numerical,
        }
    }

    pub fn spec(&self) -> EncoderSpec {
        EncoderSpec {
            cardinalities: self.embeddings.cardinalities(),
            numerical: self.numerical,
            embed_dim: self.embeddings.embed_dim,
            widths: self.mlp.layers.iter().map(|l| l.out_dim()).collect(),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.mlp.out_dim()
    }

    fn check_schema(&self, batch: &FeatureBatch) -> Result<()> {
        let want = [self.embeddings.num_fields(), self.numerical];
        let got = [batch.categorical.ncols(), batch.numerical.ncols()];
        if want != got {
            return Err(Error::shape("encoder feature schema", &want, &got));
        }
        Ok(())
    }

    fn assemble_input(&self, batch: &FeatureBatch) -> Array2<f64> {
        let emb = self.embeddings.out_dim();
        let mut x = Array2::zeros((batch.len(), emb + self.numerical));
        self.embeddings.lookup_into(batch.categorical.view(), &mut x);
        x.slice_mut(s![.., emb..]).assign(&batch.numerical);
        x
    }

    pub fn forward(&self, batch: &FeatureBatch) -> Result<(Array2<f64>, EncoderTape)> {
        self.check_schema(batch)?;
        let x = self.assemble_input(batch);
        let (out, mlp) = self.mlp.forward(&x)?;
        Ok((
            out,
            EncoderTape {
                categorical: batch.categorical.clone(),
                mlp,
            },
        ))
    }

    pub fn predict(&self, batch: &FeatureBatch) -> Result<Array2<f64>> {
        Ok(self.forward(batch)?.0)
    }

    /// Parameter gradients (embeddings included) and the gradient w.r.t. the
    /// dense input `[embeddings | numerical]`.
    pub fn backward(&self, tape: &EncoderTape, upstream: &Array2<f64>) -> Result<GradBundle<Encoder>> {
        let (mlp_grad, dx) = self.mlp.backward(&tape.mlp, upstream)?;
        let mut emb_grad = self.embeddings.zeros_like();
        self.embeddings
            .accumulate_grad(tape.categorical.view(), &dx, &mut emb_grad);
        Ok(GradBundle {
            params: Encoder {
                embeddings: emb_grad,
                mlp: mlp_grad,
                numerical: self.numerical,
            },
            input: dx,
        })
    }
}

impl ParamSet for Encoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.embeddings.visit(&join(prefix, "embed"), f);
        self.mlp.visit(&join(prefix, "mlp"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.embeddings.visit_mut(&join(prefix, "embed"), f);
        self.mlp.visit_mut(&join(prefix, "mlp"), f);
    }

    fn zeros_like(&self) -> Self {
        Self {
            embeddings: self.embeddings.zeros_like(),
            mlp: self.mlp.zeros_like(),
            numerical: self.numerical,
        }
    }
}

/// Gradients of a model's parameters plus the gradient w.r.t. its input.
#[derive(Debug, Clone)]
pub struct GradBundle<P> {
    pub params: P,
    pub input: Array2<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use ndarray::array;

    fn spec() -> EncoderSpec {
        EncoderSpec {
            cardinalities: vec![4, 3],
            numerical: 2,
            embed_dim: 3,
            widths: vec![5, 2],
        }
    }

    #[test]
    fn forward_is_deterministic_for_seed() {
        let a = Encoder::init(&spec(), &mut stream(9, "enc"));
        let b = Encoder::init(&spec(), &mut stream(9, "enc"));
        let batch = FeatureBatch::new(array![[1, 2], [3, 0]], array![[0.1, 0.9], [0.5, 0.4]]).unwrap();
        let ya = a.predict(&batch).unwrap();
        let yb = b.predict(&batch).unwrap();
        assert_eq!(
            ya.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            yb.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn schema_mismatch_is_an_error() {
        let e = Encoder::init(&spec(), &mut stream(9, "enc"));
        let bad = FeatureBatch::new(array![[1]], array![[0.1, 0.9]]).unwrap();
        assert!(matches!(e.forward(&bad), Err(Error::Shape { .. })));
    }

    #[test]
    fn embedding_gradient_lands_on_used_rows_only() {
        let e = Encoder::init(&spec(), &mut stream(2, "enc"));
        let batch = FeatureBatch::new(array![[1, 2]], array![[0.3, 0.6]]).unwrap();
        let (_, tape) = e.forward(&batch).unwrap();
        let g = e.backward(&tape, &array![[1.0, -1.0]]).unwrap();
        let t0 = &g.params.embeddings.tables[0];
        for r in [0, 2, 3] {
            assert!(t0.row(r).iter().all(|&v| v == 0.0));
        }
        assert_eq!(g.input.dim(), (1, 8));
    }
}
