//! Target and auxiliary losses on a bound model.
//!
//! [`ModelTape`] binds a [`Model`] onto a fresh tape; the loss methods add
//! their graph to it and return the scalar loss handle. The free functions
//! (`loss_target`, `loss_am`, ...) are value-only conveniences.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{FlatGrad, Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::models::{encode_nodes, head_forward, pool_graphs, EncoderVars, GraphBatch, HeadSpec, HeadVars, Model};
use crate::tasks::graph::{MASK_TYPE, NUM_NODE_TYPES};

/// Self-supervised auxiliary objectives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuxTask {
    /// Masked node-type prediction.
    Am,
    /// Edge prediction from embedding dot products.
    Ep,
    /// Node/graph mutual-information discriminator.
    Ig,
    /// Motif presence (triangle, chordless 4-cycle).
    Mp,
    /// Adversarial: the target with flipped labels, scored through a
    /// frozen copy of the target head. Used to provoke negative transfer.
    Flip,
}

impl AuxTask {
    pub const ALL: [AuxTask; 5] = [AuxTask::Am, AuxTask::Ep, AuxTask::Ig, AuxTask::Mp, AuxTask::Flip];

    pub fn name(self) -> &'static str {
        match self {
            AuxTask::Am => "am",
            AuxTask::Ep => "ep",
            AuxTask::Ig => "ig",
            AuxTask::Mp => "mp",
            AuxTask::Flip => "flip",
        }
    }

    pub fn head_spec(self, hidden: usize) -> HeadSpec {
        match self {
            AuxTask::Am => HeadSpec::Affine {
                input: hidden,
                output: NUM_NODE_TYPES,
            },
            AuxTask::Ep | AuxTask::Flip => HeadSpec::None,
            AuxTask::Ig => HeadSpec::Bilinear { dim: hidden },
            AuxTask::Mp => HeadSpec::Affine {
                input: hidden,
                output: 2,
            },
        }
    }
}

impl fmt::Display for AuxTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AuxTask {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        AuxTask::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown auxiliary task {s:?} (expected am, ep, ig, mp, flip)")))
    }
}

/// Knobs for the auxiliary losses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuxSettings {
    pub mask_ratio: f64,
    pub neg_per_pos: usize,
}

impl Default for AuxSettings {
    fn default() -> Self {
        AuxSettings {
            mask_ratio: 0.15,
            neg_per_pos: 1,
        }
    }
}

impl AuxSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.mask_ratio > 0.0 && self.mask_ratio <= 1.0) {
            return Err(Error::Config(format!("mask_ratio {} not in (0, 1]", self.mask_ratio)));
        }
        if self.neg_per_pos == 0 {
            return Err(Error::Config("neg_per_pos must be at least 1".into()));
        }
        Ok(())
    }
}

/// Number of masked nodes in an `n`-node graph.
pub fn mask_count(n: usize, ratio: f64) -> usize {
    // the small slack keeps products like 0.15 * 20 = 3.0000000000000004 at 3
    (((ratio * n as f64) - 1e-9).ceil() as usize).clamp(1, n)
}

/// Node embeddings and pooled graph embeddings for one batch.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    pub nodes: Var,
    pub graphs: Var,
}

/// A model bound onto a tape.
pub struct ModelTape<'m> {
    pub tape: Tape,
    pub model: &'m Model,
    pub encoder: EncoderVars,
    pub target_head: HeadVars,
    pub aux_heads: Vec<HeadVars>,
}

/// Per-loss gradient split into the shared and task-private parts.
#[derive(Clone, Debug)]
pub struct SplitGrad {
    pub encoder: FlatGrad,
    pub target_head: FlatGrad,
    pub aux_heads: Vec<FlatGrad>,
}

impl<'m> ModelTape<'m> {
    pub fn new(model: &'m Model) -> Result<Self> {
        Self::with_encoder_params(model, &model.encoder.params)
    }

    /// Binds `model` but with the encoder parameters replaced by `encoder_params`.
    pub fn with_encoder_params(model: &'m Model, encoder_params: &[f64]) -> Result<Self> {
        let mut tape = Tape::new();
        let encoder = model.encoder.bind_with(&mut tape, encoder_params, true)?;
        let target_head = model.target_head.bind(&mut tape, true)?;
        let aux_heads = model
            .aux_heads
            .iter()
            .map(|h| h.bind(&mut tape, true))
            .collect::<Result<_>>()?;
        Ok(ModelTape {
            tape,
            model,
            encoder,
            target_head,
            aux_heads,
        })
    }

    pub fn value(&self, var: Var) -> Result<f64> {
        self.tape.value(var).item()
    }

    pub fn encode(&mut self, batch: &GraphBatch) -> Result<Encoded> {
        self.encode_types(batch, &batch.node_types)
    }

    fn encode_types(&mut self, batch: &GraphBatch, types: &[usize]) -> Result<Encoded> {
        let nodes = encode_nodes(&mut self.tape, &self.model.encoder, &self.encoder, batch, types)?;
        let graphs = pool_graphs(&mut self.tape, batch, nodes)?;
        Ok(Encoded { nodes, graphs })
    }

    /// Target logits `[graphs × 1]`.
    pub fn target_logits(&mut self, enc: &Encoded) -> Result<Var> {
        head_forward(&mut self.tape, &self.model.target_head, &self.target_head, enc.graphs)
    }

    pub fn target_loss(&mut self, batch: &GraphBatch, enc: &Encoded) -> Result<Var> {
        let logits = self.target_logits(enc)?;
        self.tape.bce_with_logits(logits, &batch.labels)
    }

    /// Loss of auxiliary task number `slot` (its head is `model.aux_heads[slot]`).
    pub fn aux_loss(
        &mut self,
        task: AuxTask,
        slot: usize,
        batch: &GraphBatch,
        enc: &Encoded,
        settings: &AuxSettings,
        seed: u64,
    ) -> Result<Var> {
        if slot >= self.aux_heads.len() {
            return Err(Error::usage(format!("no head for auxiliary slot {slot}")));
        }
        match task {
            AuxTask::Am => self.am_loss(slot, batch, settings.mask_ratio, seed),
            AuxTask::Ep => self.ep_loss(batch, enc, settings.neg_per_pos, seed),
            AuxTask::Ig => self.ig_loss(slot, batch, enc, seed),
            AuxTask::Mp => self.mp_loss(slot, batch, enc),
            AuxTask::Flip => self.flip_loss(batch, enc),
        }
    }

    fn am_loss(&mut self, slot: usize, batch: &GraphBatch, ratio: f64, seed: u64) -> Result<Var> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut types = batch.node_types.clone();
        let mut masked = Vec::new();
        for g in 0..batch.num_graphs() {
            let n = batch.nodes_in(g);
            let mut chosen = sample(&mut rng, n, mask_count(n, ratio)).into_vec();
            chosen.sort_unstable();
            for local in chosen {
                let v = batch.offsets[g] + local;
                types[v] = MASK_TYPE;
                masked.push(v);
            }
        }
        let truth: Vec<usize> = masked.iter().map(|&v| batch.node_types[v]).collect();
        let enc = self.encode_types(batch, &types)?;
        let rows = self.tape.gather(enc.nodes, &masked)?;
        let head = &self.model.aux_heads[slot];
        let logits = head_forward(&mut self.tape, head, &self.aux_heads[slot], rows)?;
        self.tape.softmax_cross_entropy(logits, &truth)
    }

    fn ep_loss(&mut self, batch: &GraphBatch, enc: &Encoded, neg_per_pos: usize, seed: u64) -> Result<Var> {
        let pairs = sample_edge_pairs(batch, neg_per_pos, seed)?;
        let us: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let vs: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let labels: Vec<f64> = pairs.iter().map(|p| p.2).collect();
        let hu = self.tape.gather(enc.nodes, &us)?;
        let hv = self.tape.gather(enc.nodes, &vs)?;
        let prod = self.tape.mul(hu, hv)?;
        let logits = self.tape.sum_rows(prod)?;
        self.tape.bce_with_logits(logits, &labels)
    }

    fn ig_loss(&mut self, slot: usize, batch: &GraphBatch, enc: &Encoded, seed: u64) -> Result<Var> {
        let negatives = ig_negative_graphs(batch.num_graphs(), seed)?;
        let w = self.aux_heads[slot]
            .weight
            .ok_or_else(|| Error::usage("IG head needs a bilinear weight"))?;
        let hw = self.tape.matmul(enc.nodes, w)?;
        let own = self.tape.gather(enc.graphs, &batch.graph_of)?;
        let other_idx: Vec<usize> = batch.graph_of.iter().map(|&g| negatives[g]).collect();
        let other = self.tape.gather(enc.graphs, &other_idx)?;
        let pos_prod = self.tape.mul(hw, own)?;
        let pos = self.tape.sum_rows(pos_prod)?;
        let neg_prod = self.tape.mul(hw, other)?;
        let neg = self.tape.sum_rows(neg_prod)?;
        let logits = self.tape.concat(&[pos, neg])?;
        let n = batch.num_nodes();
        let labels: Vec<f64> = (0..2 * n).map(|i| if i < n { 1.0 } else { 0.0 }).collect();
        self.tape.bce_with_logits(logits, &labels)
    }

    fn mp_loss(&mut self, slot: usize, batch: &GraphBatch, enc: &Encoded) -> Result<Var> {
        let head = &self.model.aux_heads[slot];
        let logits = head_forward(&mut self.tape, head, &self.aux_heads[slot], enc.graphs)?;
        self.tape.bce_with_logits(logits, &batch.motifs)
    }

    fn flip_loss(&mut self, batch: &GraphBatch, enc: &Encoded) -> Result<Var> {
        let head = &self.model.target_head;
        let frozen = head.bind(&mut self.tape, false)?;
        let logits = head_forward(&mut self.tape, head, &frozen, enc.graphs)?;
        let flipped: Vec<f64> = batch.labels.iter().map(|y| 1.0 - y).collect();
        self.tape.bce_with_logits(logits, &flipped)
    }

    /// Backward from `loss`, split into encoder and head gradients.
    pub fn split_grad(&self, loss: Var) -> Result<SplitGrad> {
        let grads: Gradients = self.tape.backward(loss)?;
        Ok(SplitGrad {
            encoder: grads.flat(&self.encoder.ordered()),
            target_head: grads.flat(&self.target_head.ordered()),
            aux_heads: self.aux_heads.iter().map(|h| grads.flat(&h.ordered())).collect(),
        })
    }

    /// Gradient of `loss` with respect to the encoder only.
    pub fn encoder_grad(&self, loss: Var) -> Result<FlatGrad> {
        Ok(self.tape.backward(loss)?.flat(&self.encoder.ordered()))
    }
}

/// `(u, v, label)` node pairs, global node indices. Graphs without both an
/// edge and a non-edge are skipped.
pub fn sample_edge_pairs(batch: &GraphBatch, neg_per_pos: usize, seed: u64) -> Result<Vec<(usize, usize, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    for g in 0..batch.num_graphs() {
        let n = batch.nodes_in(g);
        let edges = &batch.edges[g];
        let mut present = vec![false; n * n];
        for &[u, v] in edges {
            present[u * n + v] = true;
        }
        let non_edges: Vec<[usize; 2]> = (0..n)
            .flat_map(|u| ((u + 1)..n).map(move |v| [u, v]))
            .filter(|&[u, v]| !present[u * n + v])
            .collect();
        if edges.is_empty() || non_edges.is_empty() {
            continue;
        }
        let n_pos = edges.len().min((non_edges.len() / neg_per_pos).max(1));
        let n_neg = non_edges.len().min(n_pos * neg_per_pos);
        let off = batch.offsets[g];
        let mut pos_idx = sample(&mut rng, edges.len(), n_pos).into_vec();
        pos_idx.sort_unstable();
        let mut neg_idx = sample(&mut rng, non_edges.len(), n_neg).into_vec();
        neg_idx.sort_unstable();
        pairs.extend(pos_idx.into_iter().map(|i| (off + edges[i][0], off + edges[i][1], 1.0)));
        pairs.extend(neg_idx.into_iter().map(|i| (off + non_edges[i][0], off + non_edges[i][1], 0.0)));
    }
    if pairs.is_empty() {
        return Err(Error::usage("edge prediction: no graph in the batch has both an edge and a non-edge"));
    }
    Ok(pairs)
}

/// For each graph, a different graph whose summary serves as the negative.
pub fn ig_negative_graphs(num_graphs: usize, seed: u64) -> Result<Vec<usize>> {
    if num_graphs < 2 {
        return Err(Error::usage("graph infomax needs at least two graphs per batch"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..num_graphs)
        .map(|g| {
            let r = rng.gen_range(0..num_graphs - 1);
            if r >= g {
                r + 1
            } else {
                r
            }
        })
        .collect())
}

pub fn loss_target(model: &Model, batch: &GraphBatch) -> Result<f64> {
    let mut mt = ModelTape::new(model)?;
    let enc = mt.encode(batch)?;
    let l = mt.target_loss(batch, &enc)?;
    mt.value(l)
}

fn aux_value(model: &Model, task: AuxTask, slot: usize, batch: &GraphBatch, settings: &AuxSettings, seed: u64) -> Result<f64> {
    let mut mt = ModelTape::new(model)?;
    let enc = mt.encode(batch)?;
    let l = mt.aux_loss(task, slot, batch, &enc, settings, seed)?;
    mt.value(l)
}

pub fn loss_am(model: &Model, slot: usize, batch: &GraphBatch, mask_ratio: f64, seed: u64) -> Result<f64> {
    let settings = AuxSettings {
        mask_ratio,
        ..Default::default()
    };
    aux_value(model, AuxTask::Am, slot, batch, &settings, seed)
}

pub fn loss_ep(model: &Model, slot: usize, batch: &GraphBatch, neg_per_pos: usize, seed: u64) -> Result<f64> {
    let settings = AuxSettings {
        neg_per_pos,
        ..Default::default()
    };
    aux_value(model, AuxTask::Ep, slot, batch, &settings, seed)
}

pub fn loss_ig(model: &Model, slot: usize, batch: &GraphBatch, seed: u64) -> Result<f64> {
    aux_value(model, AuxTask::Ig, slot, batch, &AuxSettings::default(), seed)
}

pub fn loss_mp(model: &Model, slot: usize, batch: &GraphBatch) -> Result<f64> {
    aux_value(model, AuxTask::Mp, slot, batch, &AuxSettings::default(), 0)
}

/// Target logits for every graph in `batch`, without gradients.
pub fn predict(model: &Model, batch: &GraphBatch) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let enc_vars = model.encoder.bind(&mut tape, false)?;
    let head = model.target_head.bind(&mut tape, false)?;
    let nodes = encode_nodes(&mut tape, &model.encoder, &enc_vars, batch, &batch.node_types)?;
    let graphs = pool_graphs(&mut tape, batch, nodes)?;
    let logits = head_forward(&mut tape, &model.target_head, &head, graphs)?;
    Ok(tape.value(logits).data().to_vec())
}
