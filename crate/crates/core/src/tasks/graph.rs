//! Synthetic node-typed graphs with a planted target rule and motif labels.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of real node types. Index [`MASK_TYPE`] is reserved for masking.
pub const NUM_NODE_TYPES: usize = 4;
pub const MASK_TYPE: usize = 4;

/// One graph. Serializes to the JSON-lines record
/// `{"nodes":[..],"edges":[[u,v],..],"y":0|1,"motifs":[tri,c4]}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticGraph {
    #[serde(rename = "nodes")]
    pub node_types: Vec<usize>,
    /// Undirected, stored with `u < v`, sorted, no duplicates.
    pub edges: Vec<[usize; 2]>,
    #[serde(rename = "y")]
    pub target_label: u8,
    /// `[contains a triangle, contains a chordless 4-cycle]`
    pub motifs: [u8; 2],
}

impl SyntheticGraph {
    /// Builds a graph, normalizing edges and deriving the label and motifs.
    pub fn new(node_types: Vec<usize>, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let n = node_types.len();
        if n == 0 {
            return Err(Error::usage("graph must have at least one node"));
        }
        if let Some(t) = node_types.iter().find(|&&t| t >= NUM_NODE_TYPES) {
            return Err(Error::usage(format!("node type {t} outside [0, {NUM_NODE_TYPES})")));
        }
        let mut norm = Vec::new();
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::usage(format!("edge ({u}, {v}) out of range for {n} nodes")));
            }
            if u == v {
                return Err(Error::usage(format!("self-loop at node {u}")));
            }
            norm.push([u.min(v), u.max(v)]);
        }
        norm.sort_unstable();
        norm.dedup();
        let adj = Adjacency::new(n, &norm);
        let motifs = [adj.has_triangle() as u8, adj.has_chordless_square() as u8];
        let target_label = label_rule(motifs[0] == 1, &node_types);
        Ok(SyntheticGraph {
            node_types,
            edges: norm,
            target_label,
            motifs,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.node_types.len()
    }

    pub fn adjacency(&self) -> Adjacency {
        Adjacency::new(self.num_nodes(), &self.edges)
    }

    /// Checks a deserialized record against its own structure.
    pub fn validate(&self) -> Result<()> {
        let rebuilt = SyntheticGraph::new(self.node_types.clone(), self.edges.iter().map(|e| (e[0], e[1])))?;
        if rebuilt.edges != self.edges {
            return Err(Error::usage("edges must be unique, ordered pairs with u < v"));
        }
        if rebuilt.motifs != self.motifs || rebuilt.target_label != self.target_label {
            return Err(Error::usage(format!(
                "stored labels y={} motifs={:?} disagree with structure (y={} motifs={:?})",
                self.target_label, self.motifs, rebuilt.target_label, rebuilt.motifs
            )));
        }
        Ok(())
    }
}

/// Most frequent node type, lowest id on ties.
pub fn majority_type(node_types: &[usize]) -> usize {
    let mut counts = [0usize; NUM_NODE_TYPES];
    for &t in node_types {
        counts[t] += 1;
    }
    let mut best = 0;
    for t in 1..NUM_NODE_TYPES {
        if counts[t] > counts[best] {
            best = t;
        }
    }
    best
}

/// Target: has a triangle XOR the majority node type is 0.
pub fn label_rule(has_triangle: bool, node_types: &[usize]) -> u8 {
    (has_triangle ^ (majority_type(node_types) == 0)) as u8
}

/// Dense adjacency matrix for small graphs.
#[derive(Clone, Debug)]
pub struct Adjacency {
    n: usize,
    bits: Vec<bool>,
    neighbors: Vec<Vec<usize>>,
}

impl Adjacency {
    pub fn new(n: usize, edges: &[[usize; 2]]) -> Self {
        let mut bits = vec![false; n * n];
        let mut neighbors = vec![Vec::new(); n];
        for &[u, v] in edges {
            if !bits[u * n + v] {
                bits[u * n + v] = true;
                bits[v * n + u] = true;
                neighbors[u].push(v);
                neighbors[v].push(u);
            }
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Adjacency { n, bits, neighbors }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.bits[u * self.n + v]
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    pub fn has_triangle(&self) -> bool {
        (0..self.n).any(|u| {
            let nu = &self.neighbors[u];
            nu.iter()
                .filter(|&&v| v > u)
                .any(|&v| nu.iter().any(|&w| w > v && self.has_edge(v, w)))
        })
    }

    /// A 4-cycle a-b-c-d-a with neither diagonal present.
    pub fn has_chordless_square(&self) -> bool {
        for a in 0..self.n {
            for c in (a + 1)..self.n {
                if self.has_edge(a, c) {
                    continue;
                }
                let common: Vec<usize> = self.neighbors[a]
                    .iter()
                    .copied()
                    .filter(|&x| self.has_edge(x, c))
                    .collect();
                for (i, &b) in common.iter().enumerate() {
                    if common[i + 1..].iter().any(|&d| !self.has_edge(b, d)) {
                        return true;
                    }
                }
            }
        }
        false
    }
}

/// Parameters of [`gen_dataset`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphGenParams {
    pub n_graphs: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub edge_prob: f64,
}

impl Default for GraphGenParams {
    fn default() -> Self {
        GraphGenParams {
            n_graphs: 400,
            min_nodes: 6,
            max_nodes: 14,
            edge_prob: 0.12,
        }
    }
}

impl GraphGenParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_graphs == 0 {
            return Err(Error::usage("n_graphs must be positive"));
        }
        if self.min_nodes < 4 || self.max_nodes > 40 || self.min_nodes > self.max_nodes {
            return Err(Error::usage(format!(
                "node range [{}, {}] must lie within [4, 40]",
                self.min_nodes, self.max_nodes
            )));
        }
        if !(self.edge_prob > 0.0 && self.edge_prob < 1.0) {
            return Err(Error::usage(format!("edge_prob {} not in (0, 1)", self.edge_prob)));
        }
        Ok(())
    }
}

// Per-graph node-type mixtures: half the graphs lean towards type 0 so the
// majority-type half of the label rule is roughly balanced.
const TYPE0_RICH: [f64; NUM_NODE_TYPES] = [0.55, 0.15, 0.15, 0.15];
const TYPE0_POOR: [f64; NUM_NODE_TYPES] = [0.10, 0.30, 0.30, 0.30];

/// Random graphs; half get a planted triangle. Deterministic in `seed`.
pub fn gen_dataset(seed: u64, params: &GraphGenParams) -> Result<Vec<SyntheticGraph>> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut graphs = Vec::with_capacity(params.n_graphs);
    for _ in 0..params.n_graphs {
        let n = rng.gen_range(params.min_nodes..=params.max_nodes);
        let mix = if rng.gen_bool(0.5) { &TYPE0_RICH } else { &TYPE0_POOR };
        let types: Vec<usize> = (0..n).map(|_| draw_categorical(&mut rng, mix)).collect();
        let mut edges = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if rng.gen_bool(params.edge_prob) {
                    edges.push((u, v));
                }
            }
        }
        if rng.gen_bool(0.5) {
            let tri = sample(&mut rng, n, 3).into_vec();
            edges.extend([(tri[0], tri[1]), (tri[1], tri[2]), (tri[0], tri[2])]);
        }
        graphs.push(SyntheticGraph::new(types, edges)?);
    }
    Ok(graphs)
}

fn draw_categorical(rng: &mut impl Rng, weights: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

pub fn write_jsonl(path: &Path, graphs: &[SyntheticGraph]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for g in graphs {
        serde_json::to_writer(&mut out, g)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<SyntheticGraph>> {
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut graphs = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let g: SyntheticGraph = serde_json::from_str(&line)?;
        g.validate()
            .map_err(|e| Error::usage(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        graphs.push(g);
    }
    Ok(graphs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn complete(n: usize) -> Vec<(usize, usize)> {
        (0..n).flat_map(|u| ((u + 1)..n).map(move |v| (u, v))).collect()
    }

    #[test]
    fn triangle_with_nonzero_majority_is_positive() {
        let g = SyntheticGraph::new(vec![1, 1, 1], complete(3)).unwrap();
        assert_eq!(g.motifs, [1, 0]);
        assert_eq!(g.target_label, 1);
    }

    #[test]
    fn edgeless_type0_majority_is_positive() {
        let g = SyntheticGraph::new(vec![0, 0, 0, 1], []).unwrap();
        assert_eq!(g.motifs, [0, 0]);
        assert_eq!(g.target_label, 1);
    }

    #[test]
    fn motif_labels_of_small_graphs() {
        let c4 = SyntheticGraph::new(vec![1; 4], [(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
        assert_eq!(c4.motifs, [0, 1]);
        let k4 = SyntheticGraph::new(vec![1; 4], complete(4)).unwrap();
        assert_eq!(k4.motifs, [1, 0]);
    }

    #[test]
    fn majority_ties_go_to_lowest_type() {
        assert_eq!(majority_type(&[1, 1, 0, 0]), 0);
        assert_eq!(majority_type(&[3, 2, 2, 3]), 2);
    }

    #[test]
    fn rejects_bad_graphs() {
        assert!(SyntheticGraph::new(vec![], []).is_err());
        assert!(SyntheticGraph::new(vec![0, 1], [(0, 0)]).is_err());
        assert!(SyntheticGraph::new(vec![0, 1], [(0, 2)]).is_err());
        assert!(SyntheticGraph::new(vec![0, 5], []).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let p = GraphGenParams {
            n_graphs: 20,
            ..Default::default()
        };
        assert_eq!(gen_dataset(7, &p).unwrap(), gen_dataset(7, &p).unwrap());
        assert_ne!(gen_dataset(7, &p).unwrap(), gen_dataset(8, &p).unwrap());
    }

    #[test]
    fn degenerate_ranges_rejected() {
        let bad = [
            GraphGenParams { min_nodes: 3, ..Default::default() },
            GraphGenParams { max_nodes: 41, ..Default::default() },
            GraphGenParams { min_nodes: 10, max_nodes: 9, ..Default::default() },
            GraphGenParams { edge_prob: 1.0, ..Default::default() },
            GraphGenParams { edge_prob: 0.0, ..Default::default() },
        ];
        for p in bad {
            assert!(gen_dataset(0, &p).is_err(), "{p:?}");
        }
    }

    #[test]
    fn jsonl_record_shape() {
        let g = SyntheticGraph::new(vec![0, 1, 2], [(1, 0), (1, 2)]).unwrap();
        let s = serde_json::to_string(&g).unwrap();
        assert_eq!(s, r#"{"nodes":[0,1,2],"edges":[[0,1],[1,2]],"y":1,"motifs":[0,0]}"#);
    }

    #[test]
    fn tampered_record_fails_validation() {
        let mut g = SyntheticGraph::new(vec![0, 1, 2], [(0, 1)]).unwrap();
        g.target_label ^= 1;
        assert!(g.validate().is_err());
    }
}
