//! Shared encoder and task-private heads.
//!
//! Parameters live in flat vectors so that gradients over the shared
//! encoder can be combined as plain vectors. The encoder vector is laid out
//! as: type-embedding table `[VOCAB × d]`, then per layer `W_self [d × d]`,
//! `W_neigh [d × d]` (message-passing only), `b [d]`; all row-major.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::tasks::graph::{SyntheticGraph, MASK_TYPE, NUM_NODE_TYPES};

/// Node-type vocabulary including the mask token.
pub const VOCAB: usize = NUM_NODE_TYPES + 1;

/// Bumped whenever the flat parameter layout changes.
pub const FLATTEN_ORDER_VERSION: u32 = 1;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderVariant {
    Mlp,
    MessagePassing,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub variant: EncoderVariant,
    pub layers: usize,
    pub hidden: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            variant: EncoderVariant::MessagePassing,
            layers: 3,
            hidden: 32,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Config("encoder hidden width must be positive".into()));
        }
        Ok(())
    }

    fn weights_per_layer(&self) -> usize {
        match self.variant {
            EncoderVariant::Mlp => 1,
            EncoderVariant::MessagePassing => 2,
        }
    }

    /// `VOCAB·d + L·(w·d² + d)` with `w` weight matrices per layer.
    pub fn param_count(&self) -> usize {
        let d = self.hidden;
        VOCAB * d + self.layers * (self.weights_per_layer() * d * d + d)
    }
}

fn uniform_fill(rng: &mut impl Rng, out: &mut Vec<f64>, count: usize, fan_in: usize) {
    let bound = (1.0 / fan_in as f64).sqrt();
    out.extend((0..count).map(|_| rng.gen_range(-bound..=bound)));
}

#[derive(Clone, Debug, PartialEq)]
pub struct SharedEncoder {
    pub config: EncoderConfig,
    pub params: Vec<f64>,
}

/// Tape handles for one bound encoder.
#[derive(Clone, Debug)]
pub struct EncoderVars {
    pub embedding: Var,
    pub layers: Vec<LayerVars>,
}

#[derive(Clone, Debug)]
pub struct LayerVars {
    pub w_self: Var,
    pub w_neigh: Option<Var>,
    pub bias: Var,
}

impl EncoderVars {
    /// Parameter handles in canonical flattening order.
    pub fn ordered(&self) -> Vec<Var> {
        let mut out = vec![self.embedding];
        for l in &self.layers {
            out.push(l.w_self);
            out.extend(l.w_neigh);
            out.push(l.bias);
        }
        out
    }
}

impl SharedEncoder {
    pub fn new(config: EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let d = config.hidden;
        let mut params = Vec::with_capacity(config.param_count());
        uniform_fill(rng, &mut params, VOCAB * d, VOCAB);
        for _ in 0..config.layers {
            for _ in 0..config.weights_per_layer() {
                uniform_fill(rng, &mut params, d * d, d);
            }
            params.extend(std::iter::repeat_n(0.0, d));
        }
        Ok(SharedEncoder { config, params })
    }

    pub fn from_params(config: EncoderConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if params.len() != config.param_count() {
            return Err(Error::shape(
                "encoder",
                format!("{} parameters, architecture needs {}", params.len(), config.param_count()),
            ));
        }
        Ok(SharedEncoder { config, params })
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Places the encoder parameters on `tape`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<EncoderVars> {
        self.bind_with(tape, &self.params, trainable)
    }

    /// Binds an alternative parameter vector with this architecture.
    pub fn bind_with(&self, tape: &mut Tape, params: &[f64], trainable: bool) -> Result<EncoderVars> {
        if params.len() != self.config.param_count() {
            return Err(Error::shape(
                "encoder",
                format!("{} parameters, architecture needs {}", params.len(), self.config.param_count()),
            ));
        }
        let d = self.config.hidden;
        let mut offset = 0;
        let mut take = |tape: &mut Tape, shape: Vec<usize>| -> Result<Var> {
            let n: usize = shape.iter().product();
            let t = Tensor::new(shape, params[offset..offset + n].to_vec())?;
            offset += n;
            if trainable {
                tape.param(t)
            } else {
                tape.constant(t)
            }
        };
        let embedding = take(tape, vec![VOCAB, d])?;
        let mut layers = Vec::with_capacity(self.config.layers);
        for _ in 0..self.config.layers {
            let w_self = take(tape, vec![d, d])?;
            let w_neigh = match self.config.variant {
                EncoderVariant::MessagePassing => Some(take(tape, vec![d, d])?),
                EncoderVariant::Mlp => None,
            };
            let bias = take(tape, vec![d])?;
            layers.push(LayerVars { w_self, w_neigh, bias });
        }
        Ok(EncoderVars { embedding, layers })
    }
}

/// Disjoint union of a list of graphs, laid out for batched message passing.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    pub node_types: Vec<usize>,
    /// Directed message edges (both orientations of every undirected edge).
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub graph_of: Vec<usize>,
    /// Node offsets; graph `g` owns nodes `offsets[g]..offsets[g + 1]`.
    pub offsets: Vec<usize>,
    pub labels: Vec<f64>,
    /// Row-major `[graphs × 2]` motif indicators.
    pub motifs: Vec<f64>,
    pub edges: Vec<Vec<[usize; 2]>>,
}

impl GraphBatch {
    pub fn new<'a>(graphs: impl IntoIterator<Item = &'a SyntheticGraph>) -> Result<Self> {
        let mut b = GraphBatch {
            node_types: Vec::new(),
            src: Vec::new(),
            dst: Vec::new(),
            graph_of: Vec::new(),
            offsets: vec![0],
            labels: Vec::new(),
            motifs: Vec::new(),
            edges: Vec::new(),
        };
        for (gi, g) in graphs.into_iter().enumerate() {
            if g.num_nodes() == 0 {
                return Err(Error::usage("empty graph in batch"));
            }
            let off = b.node_types.len();
            b.node_types.extend_from_slice(&g.node_types);
            b.graph_of.extend(std::iter::repeat_n(gi, g.num_nodes()));
            for &[u, v] in &g.edges {
                b.src.extend([off + u, off + v]);
                b.dst.extend([off + v, off + u]);
            }
            b.offsets.push(b.node_types.len());
            b.labels.push(g.target_label as f64);
            b.motifs.extend(g.motifs.iter().map(|&m| m as f64));
            b.edges.push(g.edges.clone());
        }
        if b.labels.is_empty() {
            return Err(Error::usage("empty batch"));
        }
        Ok(b)
    }

    pub fn num_graphs(&self) -> usize {
        self.labels.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.node_types.len()
    }

    pub fn nodes_in(&self, g: usize) -> usize {
        self.offsets[g + 1] - self.offsets[g]
    }

    /// `[graphs × nodes]` averaging matrix.
    fn pooling_matrix(&self) -> Tensor {
        let (g, n) = (self.num_graphs(), self.num_nodes());
        let mut data = vec![0.0; g * n];
        for gi in 0..g {
            let inv = 1.0 / self.nodes_in(gi) as f64;
            for v in self.offsets[gi]..self.offsets[gi + 1] {
                data[gi * n + v] = inv;
            }
        }
        Tensor::from_parts(vec![g, n], data)
    }
}

/// Node embeddings `[nodes × d]`. `node_types` overrides the batch's types (used for masking).
pub fn encode_nodes(
    tape: &mut Tape,
    encoder: &SharedEncoder,
    vars: &EncoderVars,
    batch: &GraphBatch,
    node_types: &[usize],
) -> Result<Var> {
    if node_types.is_empty() {
        return Err(Error::usage("cannot encode an empty graph"));
    }
    if node_types.len() != batch.num_nodes() {
        return Err(Error::shape(
            "encode",
            format!("{} node types for {} nodes", node_types.len(), batch.num_nodes()),
        ));
    }
    if let Some(t) = node_types.iter().find(|&&t| t > MASK_TYPE) {
        return Err(Error::usage(format!("node type {t} outside vocabulary")));
    }
    let n = batch.num_nodes();
    let mut h = tape.gather(vars.embedding, node_types)?;
    for layer in &vars.layers {
        let mut pre = tape.matmul(h, layer.w_self)?;
        if let Some(w_neigh) = layer.w_neigh {
            if encoder.config.variant == EncoderVariant::MessagePassing && !batch.src.is_empty() {
                let msgs = tape.gather(h, &batch.src)?;
                let agg = tape.scatter_add(msgs, &batch.dst, n)?;
                let neigh = tape.matmul(agg, w_neigh)?;
                pre = tape.add(pre, neigh)?;
            }
        }
        let biased = tape.add(pre, layer.bias)?;
        h = tape.relu(biased)?;
    }
    Ok(h)
}

/// Mean of node embeddings per graph: `[graphs × d]`.
pub fn pool_graphs(tape: &mut Tape, batch: &GraphBatch, nodes: Var) -> Result<Var> {
    let pool = tape.constant(batch.pooling_matrix())?;
    tape.matmul(pool, nodes)
}

/// Shape of a task head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum HeadSpec {
    /// No parameters of its own.
    None,
    /// `x W + b`, `W: [input × output]`.
    Affine { input: usize, output: usize },
    /// Bilinear form `xᵀ W y` with square `W: [dim × dim]`, no bias.
    Bilinear { dim: usize },
}

impl HeadSpec {
    pub fn param_count(&self) -> usize {
        match *self {
            HeadSpec::None => 0,
            HeadSpec::Affine { input, output } => input * output + output,
            HeadSpec::Bilinear { dim } => dim * dim,
        }
    }
}

/// Task-private parameters. Stored weight-then-bias, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskHead {
    pub spec: HeadSpec,
    pub params: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct HeadVars {
    pub weight: Option<Var>,
    pub bias: Option<Var>,
}

impl HeadVars {
    pub fn ordered(&self) -> Vec<Var> {
        self.weight.into_iter().chain(self.bias).collect()
    }
}

impl TaskHead {
    pub fn new(spec: HeadSpec, rng: &mut impl Rng) -> Self {
        let mut params = Vec::with_capacity(spec.param_count());
        match spec {
            HeadSpec::None => {}
            HeadSpec::Affine { input, output } => {
                uniform_fill(rng, &mut params, input * output, input);
                params.extend(std::iter::repeat_n(0.0, output));
            }
            HeadSpec::Bilinear { dim } => uniform_fill(rng, &mut params, dim * dim, dim),
        }
        TaskHead { spec, params }
    }

    pub fn from_params(spec: HeadSpec, params: Vec<f64>) -> Result<Self> {
        if params.len() != spec.param_count() {
            return Err(Error::shape(
                "head",
                format!("{} parameters for {spec:?}", params.len()),
            ));
        }
        Ok(TaskHead { spec, params })
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<HeadVars> {
        let mut leaf = |t: Tensor| if trainable { tape.param(t) } else { tape.constant(t) };
        match self.spec {
            HeadSpec::None => Ok(HeadVars { weight: None, bias: None }),
            HeadSpec::Affine { input, output } => {
                let split = input * output;
                let w = leaf(Tensor::matrix(input, output, self.params[..split].to_vec())?)?;
                let b = leaf(Tensor::vector(self.params[split..].to_vec())?)?;
                Ok(HeadVars {
                    weight: Some(w),
                    bias: Some(b),
                })
            }
            HeadSpec::Bilinear { dim } => {
                let w = leaf(Tensor::matrix(dim, dim, self.params.clone())?)?;
                Ok(HeadVars {
                    weight: Some(w),
                    bias: None,
                })
            }
        }
    }
}

/// Affine head applied row-wise to `[rows × input]` features. No nonlinearity.
pub fn head_forward(tape: &mut Tape, head: &TaskHead, vars: &HeadVars, features: Var) -> Result<Var> {
    let HeadSpec::Affine { input, .. } = head.spec else {
        return Err(Error::usage(format!("head_forward needs an affine head, got {:?}", head.spec)));
    };
    let width = tape.value(features).row_len();
    if tape.value(features).rank() != 2 || width != input {
        return Err(Error::usage(format!(
            "feature shape {:?} does not match head input {input}",
            tape.value(features).shape()
        )));
    }
    let (Some(w), Some(b)) = (vars.weight, vars.bias) else {
        return Err(Error::usage("affine head is missing parameters"));
    };
    let z = tape.matmul(features, w)?;
    tape.add(z, b)
}

/// Encoder plus the target head and one head per auxiliary task.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub encoder: SharedEncoder,
    pub target_head: TaskHead,
    pub aux_heads: Vec<TaskHead>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    format_version: u32,
    flatten_order_version: u32,
    encoder: EncoderConfig,
    target_head: HeadSpec,
    aux_heads: Vec<HeadSpec>,
}

impl Model {
    pub fn new(config: EncoderConfig, aux_heads: &[HeadSpec], rng: &mut impl Rng) -> Result<Self> {
        let encoder = SharedEncoder::new(config, rng)?;
        let target_head = TaskHead::new(
            HeadSpec::Affine {
                input: config.hidden,
                output: 1,
            },
            rng,
        );
        let aux_heads = aux_heads.iter().map(|&s| TaskHead::new(s, rng)).collect();
        Ok(Model {
            encoder,
            target_head,
            aux_heads,
        })
    }

    /// Writes a JSON header line, then every parameter as little-endian `f64`
    /// (encoder, target head, auxiliary heads in order).
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = CheckpointHeader {
            format_version: CHECKPOINT_FORMAT_VERSION,
            flatten_order_version: FLATTEN_ORDER_VERSION,
            encoder: self.encoder.config,
            target_head: self.target_head.spec,
            aux_heads: self.aux_heads.iter().map(|h| h.spec).collect(),
        };
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        let all = self
            .encoder
            .params
            .iter()
            .chain(&self.target_head.params)
            .chain(self.aux_heads.iter().flat_map(|h| &h.params));
        for x in all {
            out.write_all(&x.to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut reader = BufReader::new(std::fs::File::open(path)?);
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let header: CheckpointHeader = serde_json::from_str(line.trim_end())?;
        if header.format_version != CHECKPOINT_FORMAT_VERSION
            || header.flatten_order_version != FLATTEN_ORDER_VERSION
        {
            return Err(Error::Config(format!(
                "unsupported checkpoint version {}/{}",
                header.format_version, header.flatten_order_version
            )));
        }
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes)?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Config("checkpoint payload is not a whole number of f64".into()));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let mut rest = values.as_slice();
        let mut take = |n: usize| -> Result<Vec<f64>> {
            if rest.len() < n {
                return Err(Error::Config("checkpoint payload truncated".into()));
            }
            let (head, tail) = rest.split_at(n);
            rest = tail;
            Ok(head.to_vec())
        };
        let encoder = SharedEncoder::from_params(header.encoder, take(header.encoder.param_count())?)?;
        let target_head = TaskHead::from_params(header.target_head, take(header.target_head.param_count())?)?;
        let mut aux_heads = Vec::new();
        for spec in header.aux_heads {
            aux_heads.push(TaskHead::from_params(spec, take(spec.param_count())?)?);
        }
        if !rest.is_empty() {
            return Err(Error::Config(format!("{} trailing values in checkpoint", rest.len())));
        }
        Ok(Model {
            encoder,
            target_head,
            aux_heads,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(5)
    }

    fn graph(types: Vec<usize>, edges: &[(usize, usize)]) -> SyntheticGraph {
        SyntheticGraph::new(types, edges.iter().copied()).unwrap()
    }

    fn embed(enc: &SharedEncoder, g: &SyntheticGraph) -> (Vec<f64>, Vec<f64>) {
        let batch = GraphBatch::new([g]).unwrap();
        let mut tape = Tape::new();
        let vars = enc.bind(&mut tape, false).unwrap();
        let h = encode_nodes(&mut tape, enc, &vars, &batch, &batch.node_types).unwrap();
        let p = pool_graphs(&mut tape, &batch, h).unwrap();
        (tape.value(h).data().to_vec(), tape.value(p).data().to_vec())
    }

    #[test]
    fn param_count_formula() {
        let cfg = EncoderConfig::default();
        let enc = SharedEncoder::new(cfg, &mut rng()).unwrap();
        assert_eq!(enc.num_params(), 5 * 32 + 3 * (2 * 32 * 32 + 32));
        let mlp = EncoderConfig {
            variant: EncoderVariant::Mlp,
            layers: 2,
            hidden: 4,
        };
        assert_eq!(SharedEncoder::new(mlp, &mut rng()).unwrap().num_params(), 5 * 4 + 2 * (16 + 4));
    }

    #[test]
    fn isolated_node_is_relu_chain_of_embedding() {
        let cfg = EncoderConfig {
            hidden: 3,
            layers: 2,
            ..Default::default()
        };
        let enc = SharedEncoder::new(cfg, &mut rng()).unwrap();
        let g = graph(vec![2], &[]);
        let (h, pooled) = embed(&enc, &g);
        // manual chain: x = E[2]; x = relu(x W_self + b) twice
        let d = 3;
        let p = &enc.params;
        let mut x: Vec<f64> = p[2 * d..3 * d].to_vec();
        let mut off = VOCAB * d;
        for _ in 0..2 {
            let w = &p[off..off + d * d];
            let b = &p[off + 2 * d * d..off + 2 * d * d + d];
            x = (0..d)
                .map(|j| ((0..d).map(|i| x[i] * w[i * d + j]).sum::<f64>() + b[j]).max(0.0))
                .collect();
            off += 2 * d * d + d;
        }
        for j in 0..d {
            assert!((h[j] - x[j]).abs() < 1e-14);
        }
        assert_eq!(h, pooled);
    }

    #[test]
    fn path_graph_middle_node_sees_both_neighbors() {
        let cfg = EncoderConfig {
            hidden: 4,
            layers: 1,
            ..Default::default()
        };
        let enc = SharedEncoder::new(cfg, &mut rng()).unwrap();
        let g = graph(vec![0, 1, 3], &[(0, 1), (1, 2)]);
        let (h, _) = embed(&enc, &g);
        let d = 4;
        let p = &enc.params;
        let emb = |t: usize| &p[t * d..(t + 1) * d];
        let off = VOCAB * d;
        let w_self = &p[off..off + d * d];
        let w_neigh = &p[off + d * d..off + 2 * d * d];
        let neigh: Vec<f64> = (0..d).map(|i| emb(0)[i] + emb(3)[i]).collect();
        for j in 0..d {
            let pre: f64 = (0..d).map(|i| emb(1)[i] * w_self[i * d + j] + neigh[i] * w_neigh[i * d + j]).sum();
            assert!((h[d + j] - pre.max(0.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn permutation_equivariance_and_duplication() {
        let enc = SharedEncoder::new(EncoderConfig { hidden: 8, ..Default::default() }, &mut rng()).unwrap();
        let g = graph(vec![0, 1, 2, 3, 1], &[(0, 1), (1, 2), (2, 0), (2, 3), (3, 4)]);
        // relabel: new index of old node i is perm[i]
        let perm = [3, 0, 4, 1, 2];
        let mut types = vec![0; 5];
        for (old, &new) in perm.iter().enumerate() {
            types[new] = g.node_types[old];
        }
        let edges: Vec<(usize, usize)> = g.edges.iter().map(|e| (perm[e[0]], perm[e[1]])).collect();
        let gp = graph(types, &edges);
        let (h, pooled) = embed(&enc, &g);
        let (hp, pooled_p) = embed(&enc, &gp);
        let d = 8;
        for (old, &new) in perm.iter().enumerate() {
            for j in 0..d {
                assert!((h[old * d + j] - hp[new * d + j]).abs() < 1e-12);
            }
        }
        for j in 0..d {
            assert!((pooled[j] - pooled_p[j]).abs() < 1e-12);
        }
        // two disjoint copies pool to the same embedding
        let mut types2 = g.node_types.clone();
        types2.extend_from_slice(&g.node_types);
        let mut edges2: Vec<(usize, usize)> = g.edges.iter().map(|e| (e[0], e[1])).collect();
        edges2.extend(g.edges.iter().map(|e| (e[0] + 5, e[1] + 5)));
        let (_, pooled2) = embed(&enc, &graph(types2, &edges2));
        for j in 0..d {
            assert!((pooled[j] - pooled2[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn head_forward_examples() {
        let spec = HeadSpec::Affine { input: 2, output: 1 };
        let head = TaskHead::from_params(spec, vec![1.0, -1.0, 0.5]).unwrap();
        let mut tape = Tape::new();
        let vars = head.bind(&mut tape, false).unwrap();
        let x = tape.constant(Tensor::matrix(1, 2, vec![2.0, 3.0]).unwrap()).unwrap();
        let z = head_forward(&mut tape, &head, &vars, x).unwrap();
        assert_eq!(tape.value(z).data(), &[-0.5]);

        let zero = TaskHead::from_params(spec, vec![0.0, 0.0, 1.25]).unwrap();
        let vars = zero.bind(&mut tape, false).unwrap();
        let z = head_forward(&mut tape, &zero, &vars, x).unwrap();
        assert_eq!(tape.value(z).data(), &[1.25]);

        let ident = TaskHead::from_params(HeadSpec::Affine { input: 1, output: 1 }, vec![1.0, 0.0]).unwrap();
        let vars = ident.bind(&mut tape, false).unwrap();
        let x1 = tape.constant(Tensor::matrix(1, 1, vec![-3.5]).unwrap()).unwrap();
        let z = head_forward(&mut tape, &ident, &vars, x1).unwrap();
        assert_eq!(tape.value(z).data(), &[-3.5]);

        let vars = head.bind(&mut tape, false).unwrap();
        assert!(head_forward(&mut tape, &head, &vars, x1).is_err());
    }

    #[test]
    fn empty_inputs_rejected() {
        assert!(GraphBatch::new(std::iter::empty()).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let model = Model::new(
            EncoderConfig { hidden: 6, ..Default::default() },
            &[HeadSpec::None, HeadSpec::Bilinear { dim: 6 }, HeadSpec::Affine { input: 6, output: 4 }],
            &mut rng(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        model.save(&path).unwrap();
        assert_eq!(Model::load(&path).unwrap(), model);
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(Model::load(&path).is_err());
    }
}
