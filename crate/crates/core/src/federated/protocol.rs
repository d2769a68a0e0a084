//! Parties, server and one round of split training.

use ndarray::{concatenate, s, Array2, Axis};

use super::constraint::{add_to_head_slice, constraint_loss, head_slice, proximal, total_loss, Anchors};
use super::transport::{Direction, Message, MessageKind, Transport};
use crate::data::AlignedBatch;
use crate::error::{Error, Result};
use crate::nn::params::join;
use crate::nn::{bce_with_logits, sigmoid, Encoder, EncoderTape, FeatureBatch, Mlp, Optimizer, OptimizerKind, ParamSet};

/// All trainable weights of a federation, as one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct FederatedModel {
    /// `encoders[k - 1]` is party `k`'s encoder.
    pub encoders: Vec<Encoder>,
    /// Single affine layer over the concatenated representations.
    pub head: Mlp,
}

impl ParamSet for FederatedModel {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (k, e) in self.encoders.iter().enumerate() {
            e.visit(&join(prefix, &format!("party{}", k + 1)), f);
        }
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        for (k, e) in self.encoders.iter_mut().enumerate() {
            e.visit_mut(&join(prefix, &format!("party{}", k + 1)), f);
        }
        self.head.visit_mut(&join(prefix, "head"), f);
    }

    fn zeros_like(&self) -> Self {
        Self {
            encoders: self.encoders.iter().map(ParamSet::zeros_like).collect(),
            head: self.head.zeros_like(),
        }
    }
}

impl FederatedModel {
    pub fn rep_dims(&self) -> Vec<usize> {
        self.encoders.iter().map(Encoder::out_dim).collect()
    }

    /// Head logits for per-party feature blocks of the same samples.
    pub fn logits(&self, parts: &[FeatureBatch]) -> Result<Vec<f64>> {
        if parts.len() != self.encoders.len() {
            return Err(Error::Data(format!(
                "expected features from {} parties, got {}",
                self.encoders.len(),
                parts.len()
            )));
        }
        let reps = self
            .encoders
            .iter()
            .zip(parts)
            .map(|(e, x)| e.predict(x))
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<_> = reps.iter().map(|r| r.view()).collect();
        let joined = concatenate(Axis(1), &views).map_err(|e| Error::Data(e.to_string()))?;
        Ok(self.head.predict(&joined)?.column(0).to_vec())
    }

    /// `(L, L_vfl, L_cons)` on one batch, evaluated directly.
    pub fn objective(&self, batch: &AlignedBatch, anchors: Option<&Anchors>, beta: f64) -> Result<(f64, f64, f64)> {
        let (l_vfl, _) = bce_with_logits(&self.logits(&batch.parties)?, &batch.labels)?;
        let l_cons = match anchors {
            Some(a) => {
                let slice = head_slice(&self.head, self.encoders[0].out_dim())?;
                constraint_loss(&self.encoders[0], &a.encoder, &slice, &a.head)?.value
            }
            None => 0.0,
        };
        Ok((total_loss(l_vfl, l_cons, beta)?, l_vfl, l_cons))
    }
}

/// Scores for fully aligned samples, computed in chunks of `batch_size`.
pub fn federated_predict(model: &FederatedModel, parts: &[FeatureBatch], batch_size: usize) -> Result<Vec<f64>> {
    let n = parts.first().map_or(0, FeatureBatch::len);
    if let Some(p) = parts.iter().position(|x| x.len() != n) {
        return Err(Error::Data(format!("party {} has {} rows, party 1 has {n}", p + 1, parts[p].len())));
    }
    let step = batch_size.max(1);
    let mut out = Vec::with_capacity(n);
    for start in (0..n).step_by(step) {
        let end = (start + step).min(n);
        let chunk: Vec<FeatureBatch> = parts.iter().map(|x| x.slice_rows(start, end)).collect();
        out.extend(model.logits(&chunk)?.into_iter().map(sigmoid));
    }
    Ok(out)
}

/// One party: its encoder, optimizer and (for the active party) anchor.
#[derive(Debug, Clone)]
pub struct PartyNode {
    pub party: usize,
    pub encoder: Encoder,
    opt: Optimizer,
    anchor: Option<Encoder>,
    beta: f64,
    tape: Option<EncoderTape>,
}

impl PartyNode {
    pub fn new(party: usize, encoder: Encoder, kind: OptimizerKind, lr: f64) -> Self {
        let opt = Optimizer::for_params(kind, lr, &encoder);
        Self {
            party,
            encoder,
            opt,
            anchor: None,
            beta: 0.0,
            tape: None,
        }
    }

    /// Pulls this encoder toward `anchor` with weight `beta` on every update.
    pub fn with_anchor(mut self, anchor: Encoder, beta: f64) -> Result<Self> {
        proximal("encoder anchor", &self.encoder, &anchor)?;
        self.anchor = Some(anchor);
        self.beta = beta;
        Ok(self)
    }

    /// `0.5 |theta - Theta|^2` for the local anchor, or 0.
    pub fn constraint_term(&self) -> Result<f64> {
        match &self.anchor {
            Some(a) => Ok(proximal("encoder anchor", &self.encoder, a)?.0),
            None => Ok(0.0),
        }
    }

    /// Computes `r^k` on this party's block of the batch and sends it.
    pub fn send_representation(&mut self, batch: &AlignedBatch, round: u32, transport: &mut Transport) -> Result<()> {
        let x = batch
            .parties
            .get(self.party - 1)
            .ok_or_else(|| Error::Data(format!("batch has no block for party {}", self.party)))?;
        let (r, tape) = self.encoder.forward(x)?;
        self.tape = Some(tape);
        transport.send(Message {
            round,
            direction: Direction::Upstream,
            party: self.party as u8,
            kind: MessageKind::Representation,
            payload: r,
        })
    }

    /// Receives the representation gradient and back-propagates it, adding
    /// the anchor pull when present. Does not update weights.
    pub fn receive_gradient(&mut self, transport: &mut Transport) -> Result<Encoder> {
        let msg = transport.recv(Direction::Downstream, self.party as u8)?;
        if msg.kind != MessageKind::Gradient {
            return Err(Error::Training(format!("party {} expected a gradient, got {:?}", self.party, msg.kind)));
        }
        let tape = self
            .tape
            .take()
            .ok_or_else(|| Error::Training(format!("party {} received a gradient before sending", self.party)))?;
        let mut grads = self.encoder.backward(&tape, &msg.payload)?.params;
        if let Some(anchor) = &self.anchor {
            if self.beta != 0.0 {
                let (_, diff) = proximal("encoder anchor", &self.encoder, anchor)?;
                grads.add_scaled(&diff, self.beta);
            }
        }
        Ok(grads)
    }

    pub fn apply(&mut self, grads: &Encoder) -> Result<()> {
        self.opt.step(&mut self.encoder, grads)
    }
}

/// Prediction head, label access and the frozen local head `Theta^0`.
#[derive(Debug, Clone)]
pub struct ServerNode {
    pub head: Mlp,
    opt: Optimizer,
    anchor: Option<Mlp>,
    beta: f64,
    rep_dims: Vec<usize>,
}

/// Server-side outcome of one round, before any update.
#[derive(Debug, Clone)]
pub struct ServerStep {
    pub loss_vfl: f64,
    /// Head-slice part of the constraint, `0.5 |theta^0_s - Theta^0|^2`.
    pub head_constraint: f64,
    pub head_grad: Mlp,
}

impl ServerNode {
    pub fn new(head: Mlp, rep_dims: Vec<usize>, kind: OptimizerKind, lr: f64) -> Result<Self> {
        let total: usize = rep_dims.iter().sum();
        if head.layers.len() != 1 || head.in_dim() != total || head.out_dim() != 1 {
            return Err(Error::Config(format!(
                "head must be one affine layer {total} -> 1, got {} layers {} -> {}",
                head.layers.len(),
                head.in_dim(),
                head.out_dim()
            )));
        }
        let opt = Optimizer::for_params(kind, lr, &head);
        Ok(Self {
            head,
            opt,
            anchor: None,
            beta: 0.0,
            rep_dims,
        })
    }

    pub fn with_anchor(mut self, anchor: Mlp, beta: f64) -> Result<Self> {
        proximal("local head anchor", &head_slice(&self.head, self.rep_dims[0])?, &anchor)?;
        self.anchor = Some(anchor);
        self.beta = beta;
        Ok(self)
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Receives all representations, computes the loss, sends each party
    /// its representation gradient and returns the head gradient.
    pub fn aggregate(&mut self, labels: &[f64], round: u32, transport: &mut Transport) -> Result<ServerStep> {
        let mut reps = Vec::with_capacity(self.rep_dims.len());
        for (k, &dim) in self.rep_dims.iter().enumerate() {
            let msg = transport.recv(Direction::Upstream, (k + 1) as u8)?;
            if msg.kind != MessageKind::Representation || msg.round != round {
                return Err(Error::Training(format!(
                    "server expected a round-{round} representation from party {}, got {:?} for round {}",
                    k + 1,
                    msg.kind,
                    msg.round
                )));
            }
            if msg.payload.dim() != (labels.len(), dim) {
                let (r, c) = msg.payload.dim();
                return Err(Error::shape("representation message", &[labels.len(), dim], &[r, c]));
            }
            reps.push(msg.payload);
        }
        let views: Vec<_> = reps.iter().map(|r| r.view()).collect();
        let joined = concatenate(Axis(1), &views).map_err(|e| Error::Data(e.to_string()))?;
        let (out, tape) = self.head.forward(&joined)?;
        let (loss_vfl, dlogits) = bce_with_logits(&out.column(0).to_vec(), labels)?;
        let upstream = Array2::from_shape_vec((dlogits.len(), 1), dlogits).expect("column shape");
        let (mut head_grad, d_joined) = self.head.backward(&tape, &upstream)?;

        let mut head_constraint = 0.0;
        if let Some(anchor) = &self.anchor {
            let (value, diff) = proximal("local head anchor", &head_slice(&self.head, self.rep_dims[0])?, anchor)?;
            head_constraint = value;
            if self.beta != 0.0 {
                add_to_head_slice(&mut head_grad, &diff, self.beta);
            }
        }

        let mut offset = 0;
        for (k, &dim) in self.rep_dims.iter().enumerate() {
            transport.send(Message {
                round,
                direction: Direction::Downstream,
                party: (k + 1) as u8,
                kind: MessageKind::Gradient,
                payload: d_joined.slice(s![.., offset..offset + dim]).to_owned(),
            })?;
            offset += dim;
        }
        Ok(ServerStep {
            loss_vfl,
            head_constraint,
            head_grad,
        })
    }

    pub fn apply(&mut self, grads: &Mlp) -> Result<()> {
        self.opt.step(&mut self.head, grads)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RoundStats {
    pub round: u32,
    pub batch_size: usize,
    pub loss: f64,
    pub loss_vfl: f64,
    pub loss_cons: f64,
}

/// Gradients of one round for every node, not yet applied.
#[derive(Debug, Clone)]
pub struct RoundGradients {
    pub stats: RoundStats,
    pub model: FederatedModel,
}

/// Runs the message exchange of one round and returns all gradients.
pub fn round_gradients(
    parties: &mut [PartyNode],
    server: &mut ServerNode,
    batch: &AlignedBatch,
    round: u32,
    transport: &mut Transport,
) -> Result<RoundGradients> {
    for p in parties.iter_mut() {
        p.send_representation(batch, round, transport)?;
    }
    let step = server.aggregate(&batch.labels, round, transport)?;
    let encoders = parties
        .iter_mut()
        .map(|p| p.receive_gradient(transport))
        .collect::<Result<Vec<_>>>()?;
    let loss_cons = if server.anchor.is_some() {
        step.head_constraint + parties[0].constraint_term()?
    } else {
        0.0
    };
    let loss = total_loss(step.loss_vfl, loss_cons, server.beta)?;
    Ok(RoundGradients {
        stats: RoundStats {
            round,
            batch_size: batch.len(),
            loss,
            loss_vfl: step.loss_vfl,
            loss_cons,
        },
        model: FederatedModel {
            encoders,
            head: step.head_grad,
        },
    })
}

/// One full round: exchange, then the server and every party update.
pub fn run_round(
    parties: &mut [PartyNode],
    server: &mut ServerNode,
    batch: &AlignedBatch,
    round: u32,
    transport: &mut Transport,
) -> Result<RoundStats> {
    let g = round_gradients(parties, server, batch, round, transport)?;
    server.apply(&g.model.head)?;
    for (p, grad) in parties.iter_mut().zip(&g.model.encoders) {
        p.apply(grad)?;
    }
    Ok(g.stats)
}
