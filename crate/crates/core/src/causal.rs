//! Causal graph discovery from pairwise transfer entropy.
//!
//! Pipeline per instance: z-score channels, pairwise TE matrix, scale by the
//! largest entry, threshold with direction dominance, then drop edges that a
//! one-hop mediator fully explains (direct transfer entropy at or below
//! `dte_epsilon`).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infodyn::{self, DiscreteSeries, EdgeRule, TeConfig};
use crate::waveform::{self, Channel, FaultClass, WaveformInstance};

/// Square matrix; entry `(i, j)` is the transfer entropy from node `i` to node `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct TeMatrix {
    n: usize,
    values: Vec<f64>,
}

impl TeMatrix {
    pub fn zeros(n: usize) -> Self {
        TeMatrix {
            n,
            values: vec![0.0; n * n],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension("TE matrix must be square".into()));
        }
        let mut m = TeMatrix::zeros(n);
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::Contract(format!("TE entry ({i},{j}) = {v} is not a nonnegative number")));
                }
                if i == j && v != 0.0 {
                    return Err(Error::Contract(format!("TE diagonal entry {i} is nonzero")));
                }
                m.values[i * n + j] = v;
            }
        }
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.values.chunks(self.n).map(<[f64]>::to_vec).collect()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Binary directed adjacency without self-loops.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AdjacencyMatrix {
    n: usize,
    bits: Vec<bool>,
}

impl AdjacencyMatrix {
    pub fn empty(n: usize) -> Self {
        AdjacencyMatrix {
            n,
            bits: vec![false; n * n],
        }
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj = AdjacencyMatrix::empty(n);
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::Dimension(format!("edge ({i},{j}) outside {n} nodes")));
            }
            if i == j {
                return Err(Error::Contract(format!("self-loop on node {i}")));
            }
            adj.bits[i * n + j] = true;
        }
        Ok(adj)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.bits[from * self.n + to]
    }

    pub fn set_edge(&mut self, from: usize, to: usize, present: bool) {
        assert!(from != to, "self-loops are not allowed");
        self.bits[from * self.n + to] = present;
    }

    /// Edges as ordered pairs, row-major.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.n)
            .flat_map(|i| (0..self.n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.has_edge(i, j))
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn in_neighbors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&u| self.has_edge(u, node))
    }

    /// Relabels nodes so that old node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> AdjacencyMatrix {
        let mut out = AdjacencyMatrix::empty(self.n);
        for (i, j) in self.edges() {
            out.set_edge(perm[i], perm[j], true);
        }
        out
    }
}

/// One classified unit: node feature rows, directed edges, label.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalGraphInstance {
    pub instance_id: String,
    pub label: FaultClass,
    pub node_features: Vec<Vec<f64>>,
    pub adjacency: AdjacencyMatrix,
    /// Max-scaled TE matrix the adjacency was thresholded from.
    pub normalized_te: TeMatrix,
}

impl CausalGraphInstance {
    pub fn node_count(&self) -> usize {
        self.node_features.len()
    }

    pub fn feature_len(&self) -> usize {
        self.node_features.first().map_or(0, Vec::len)
    }
}

/// Pairwise TE over channels already on a common scale.
pub fn build_te_matrix_channels(channels: &[Vec<f64>], cfg: &TeConfig) -> Result<TeMatrix> {
    cfg.validate()?;
    let symbols: Vec<DiscreteSeries> = channels.iter().map(|c| infodyn::discretize(c, cfg.bins)).collect();
    let n = channels.len();
    let mut m = TeMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                m.values[i * n + j] =
                    infodyn::transfer_entropy(&symbols[i], &symbols[j], cfg.history_k, cfg.history_l)?;
            }
        }
    }
    Ok(m)
}

pub fn build_te_matrix(instance: &WaveformInstance, cfg: &TeConfig) -> Result<TeMatrix> {
    build_te_matrix_channels(&instance.channels, cfg)
}

/// Divides by the largest entry; an all-zero matrix is returned unchanged.
pub fn normalize_te_matrix(m: &TeMatrix) -> TeMatrix {
    let max = m.max();
    if max <= 0.0 {
        return m.clone();
    }
    TeMatrix {
        n: m.n,
        values: m.values.iter().map(|v| v / max).collect(),
    }
}

pub fn build_adjacency(m: &TeMatrix, cfg: &TeConfig) -> AdjacencyMatrix {
    let n = m.n;
    let c = cfg.threshold;
    let mut adj = AdjacencyMatrix::empty(n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let (fwd, back) = (m.get(i, j), m.get(j, i));
            let keep = match cfg.edge_rule {
                EdgeRule::Dominance => fwd > c && fwd > back,
                EdgeRule::NetTe => fwd - back > c,
            };
            if keep {
                adj.set_edge(i, j, true);
            }
        }
    }
    adj
}

/// Removes `i→j` when some mediator `z` with `i→z→j` leaves at most
/// `dte_epsilon` bits of direct transfer. Decisions use the input graph only.
pub fn prune_indirect_channels(
    adj: &AdjacencyMatrix,
    channels: &[Vec<f64>],
    cfg: &TeConfig,
) -> Result<AdjacencyMatrix> {
    if channels.len() != adj.n() {
        return Err(Error::Dimension(format!(
            "{} channels for a {}-node graph",
            channels.len(),
            adj.n()
        )));
    }
    let coarse: Vec<DiscreteSeries> = channels
        .iter()
        .map(|c| infodyn::discretize(c, cfg.dte_bins))
        .collect();
    let mut out = adj.clone();
    for (i, j) in adj.edges() {
        let mut min_dte = f64::INFINITY;
        for z in 0..adj.n() {
            if z == i || z == j || !(adj.has_edge(i, z) && adj.has_edge(z, j)) {
                continue;
            }
            let dte = infodyn::direct_transfer_entropy(&coarse[i], &coarse[j], &coarse[z], cfg)?;
            min_dte = min_dte.min(dte);
        }
        if min_dte <= cfg.dte_epsilon {
            out.set_edge(i, j, false);
        }
    }
    Ok(out)
}

pub fn prune_indirect(
    adj: &AdjacencyMatrix,
    instance: &WaveformInstance,
    cfg: &TeConfig,
) -> Result<AdjacencyMatrix> {
    prune_indirect_channels(adj, &instance.channels, cfg)
}

/// Full per-instance discovery; node features are the z-scored channels.
pub fn discover(instance: &WaveformInstance, cfg: &TeConfig) -> Result<CausalGraphInstance> {
    cfg.validate()?;
    let normalized = waveform::zscore_normalize(instance)?;
    let te = build_te_matrix(&normalized, cfg)?;
    let scaled = normalize_te_matrix(&te);
    let thresholded = build_adjacency(&scaled, cfg);
    let adjacency = prune_indirect(&thresholded, &normalized, cfg)?;
    Ok(CausalGraphInstance {
        instance_id: normalized.instance_id,
        label: normalized.label,
        node_features: normalized.channels.to_vec(),
        adjacency,
        normalized_te: scaled,
    })
}

pub const GRAPH_FORMAT_VERSION: u32 = 1;

/// On-disk form of a discovered graph. Node features are not stored; they
/// are recomputed from the dataset by z-scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphRecord {
    pub format_version: u32,
    pub instance_id: String,
    pub label: FaultClass,
    pub nodes: Vec<String>,
    pub edges: Vec<(usize, usize)>,
    pub normalized_te: Vec<Vec<f64>>,
}

impl GraphRecord {
    pub fn from_graph(g: &CausalGraphInstance) -> Self {
        let nodes = (0..g.node_count())
            .map(|i| Channel::from_index(i).map_or_else(|| format!("node{i}"), |c| c.label().to_string()))
            .collect();
        GraphRecord {
            format_version: GRAPH_FORMAT_VERSION,
            instance_id: g.instance_id.clone(),
            label: g.label,
            nodes,
            edges: g.adjacency.edges(),
            normalized_te: g.normalized_te.rows(),
        }
    }

    /// Rebuilds the graph, pairing it with z-scored features from `instance`.
    pub fn into_graph(self, instance: &WaveformInstance) -> Result<CausalGraphInstance> {
        if instance.instance_id != self.instance_id {
            return Err(Error::Contract(format!(
                "graph {} paired with instance {}",
                self.instance_id, instance.instance_id
            )));
        }
        let normalized = waveform::zscore_normalize(instance)?;
        let n = self.nodes.len();
        if n != normalized.channels.len() {
            return Err(Error::Dimension(format!(
                "graph has {n} nodes, instance has {} channels",
                normalized.channels.len()
            )));
        }
        Ok(CausalGraphInstance {
            instance_id: self.instance_id,
            label: self.label,
            node_features: normalized.channels.to_vec(),
            adjacency: AdjacencyMatrix::from_edges(n, &self.edges)?,
            normalized_te: TeMatrix::from_rows(&self.normalized_te)?,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph records always serialize") + "\n"
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let record: GraphRecord =
            serde_json::from_str(&text).map_err(|e| Error::json(format!("parsing {}", path.display()), e))?;
        if record.format_version != GRAPH_FORMAT_VERSION {
            return Err(Error::Contract(format!(
                "{}: unsupported graph format version {}",
                path.display(),
                record.format_version
            )));
        }
        Ok(record)
    }
}
