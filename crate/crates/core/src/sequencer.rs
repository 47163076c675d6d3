//! Node-sequence representation of a computation subgraph: neighborhood
//! extraction, BFS / temporal / random orderings, the band-limited retained
//! matrix and its width bound.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ComputationSubgraph, EventGraph, NodeId, SnapshotGraph, SubEdge, SubgraphKind, TargetEdge};

/// Band width used for temporal sequences when none is configured.
pub const DEFAULT_TEMPORAL_BAND: usize = 32;

fn depth_limited(adj: &BTreeMap<NodeId, Vec<NodeId>>, roots: &[NodeId], k: usize) -> BTreeSet<NodeId> {
    let mut seen: BTreeSet<NodeId> = roots.iter().copied().collect();
    let mut frontier: Vec<NodeId> = roots.to_vec();
    for _ in 0..k {
        let mut next = Vec::new();
        for v in frontier {
            for &w in adj.get(&v).map(Vec::as_slice).unwrap_or(&[]) {
                if seen.insert(w) {
                    next.push(w);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    seen
}

/// Induced subgraph on `{src, dst}` plus both endpoints' `k`-hop
/// neighborhoods within one snapshot.
pub fn extract_khop(graph: &SnapshotGraph, snapshot: usize, edge: &TargetEdge, k: usize) -> Result<ComputationSubgraph> {
    let snap = graph
        .snapshot(snapshot)
        .ok_or_else(|| Error::Validation(format!("snapshot {snapshot} out of range 1..={}", graph.num_snapshots())))?;
    for v in [edge.src, edge.dst] {
        if !snap.contains_node(v) {
            return Err(Error::MissingEndpoint { node: v, snapshot });
        }
    }
    let adj = snap.adjacency();
    let nodes = depth_limited(&adj, &[edge.src, edge.dst], k);
    let edges = snap
        .edges()
        .iter()
        .filter(|(u, v)| nodes.contains(u) && nodes.contains(v))
        .map(|&(src, dst)| SubEdge {
            src,
            dst,
            t: snapshot as f64,
        })
        .collect();
    ComputationSubgraph::new(*edge, k, SubgraphKind::Snapshot { snapshot }, nodes, edges)
}

/// The most recent `horizon` events strictly before `edge.t` whose
/// endpoints both lie within `k` hops of either target endpoint, hops
/// measured over the interaction graph of all prior events.
pub fn extract_event_neighborhood(
    graph: &EventGraph,
    edge: &TargetEdge,
    k: usize,
    horizon: usize,
) -> Result<ComputationSubgraph> {
    let prior = &graph.events()[..graph.count_before(edge.t)];
    let empty = || Error::EmptyNeighborhood {
        src: edge.src,
        dst: edge.dst,
        t: edge.t,
    };
    if prior.is_empty() || horizon == 0 {
        return Err(empty());
    }
    let mut adj: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    for e in prior {
        adj.entry(e.src).or_default().push(e.dst);
        adj.entry(e.dst).or_default().push(e.src);
    }
    let reach = depth_limited(&adj, &[edge.src, edge.dst], k);
    let mut picked: Vec<SubEdge> = prior
        .iter()
        .rev()
        .filter(|e| reach.contains(&e.src) && reach.contains(&e.dst))
        .take(horizon)
        .map(|e| SubEdge {
            src: e.src,
            dst: e.dst,
            t: e.t,
        })
        .collect();
    if picked.is_empty() {
        return Err(empty());
    }
    picked.reverse();
    let nodes: BTreeSet<NodeId> = picked
        .iter()
        .flat_map(|e| [e.src, e.dst])
        .chain([edge.src, edge.dst])
        .collect();
    ComputationSubgraph::new(*edge, k, SubgraphKind::Event, nodes, picked)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SequenceMode {
    Bfs,
    Temporal,
    Random,
}

/// Ordered node ids with 1-based ranks.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSequence {
    order: Vec<NodeId>,
    rank: HashMap<NodeId, usize>,
    mode: SequenceMode,
    layers: Option<Vec<usize>>,
}

impl NodeSequence {
    fn from_order(order: Vec<NodeId>, mode: SequenceMode, layers: Option<Vec<usize>>) -> Self {
        let rank = order.iter().enumerate().map(|(i, &v)| (v, i + 1)).collect();
        Self {
            order,
            rank,
            mode,
            layers,
        }
    }

    pub fn order(&self) -> &[NodeId] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn mode(&self) -> SequenceMode {
        self.mode
    }

    /// 1-based position of `v`.
    pub fn rank(&self, v: NodeId) -> Option<usize> {
        self.rank.get(&v).copied()
    }

    /// Node at 1-based position `r`.
    pub fn at(&self, r: usize) -> NodeId {
        self.order[r - 1]
    }

    /// BFS depth per position (BFS mode only).
    pub fn layers(&self) -> Option<&[usize]> {
        self.layers.as_deref()
    }

    pub fn layer_of(&self, v: NodeId) -> Option<usize> {
        let r = self.rank(v)?;
        self.layers.as_ref().map(|l| l[r - 1])
    }
}

/// Breadth-first ordering from `start`, unvisited neighbors enqueued in
/// ascending id order. Components not reachable from `start` are appended
/// by restarting at the smallest unvisited id; their depths continue after
/// the deepest layer seen so far so the layer sequence stays monotone.
pub fn bfs_sequence(sub: &ComputationSubgraph, start: NodeId) -> Result<NodeSequence> {
    if !sub.contains_node(start) {
        return Err(Error::Validation(format!("BFS start {start} is not in the subgraph")));
    }
    let adj = sub.adjacency();
    let mut visited: BTreeSet<NodeId> = BTreeSet::new();
    let mut order = Vec::with_capacity(sub.num_nodes());
    let mut layers = Vec::with_capacity(sub.num_nodes());
    let mut base = 0;
    let mut root = Some(start);
    while let Some(r) = root {
        visited.insert(r);
        let mut queue = VecDeque::from([(r, base)]);
        while let Some((v, d)) = queue.pop_front() {
            order.push(v);
            layers.push(d);
            for &w in &adj[&v] {
                if visited.insert(w) {
                    queue.push_back((w, d + 1));
                }
            }
        }
        base = layers.last().map_or(0, |d| d + 1);
        root = sub.nodes().iter().copied().find(|v| !visited.contains(v));
    }
    Ok(NodeSequence::from_order(order, SequenceMode::Bfs, Some(layers)))
}

/// Nodes ordered by the timestamp of the first event touching them, ties
/// by ascending id. Nodes without events (possible only for the target's
/// endpoints) take the target timestamp.
pub fn temporal_sequence(sub: &ComputationSubgraph) -> NodeSequence {
    let mut first: HashMap<NodeId, f64> = HashMap::new();
    for e in sub.edges() {
        for v in [e.src, e.dst] {
            let slot = first.entry(v).or_insert(e.t);
            if e.t < *slot {
                *slot = e.t;
            }
        }
    }
    let mut keyed: Vec<(f64, NodeId)> = sub
        .nodes()
        .iter()
        .map(|&v| (first.get(&v).copied().unwrap_or(sub.origin.t), v))
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    NodeSequence::from_order(keyed.into_iter().map(|(_, v)| v).collect(), SequenceMode::Temporal, None)
}

/// Seeded uniformly random ordering.
pub fn random_sequence<R: Rng + ?Sized>(sub: &ComputationSubgraph, rng: &mut R) -> NodeSequence {
    let mut order = sub.nodes().to_vec();
    order.shuffle(rng);
    NodeSequence::from_order(order, SequenceMode::Random, None)
}

/// Band width for a sequence: widest BFS layer (floor 1) in BFS mode;
/// `min(temporal_cap, n - 1)` for temporal sequences; `n - 1` for random
/// orderings, which carry no locality guarantee.
pub fn estimate_m_with(seq: &NodeSequence, temporal_cap: usize) -> usize {
    let n = seq.len();
    let m = match seq.mode {
        SequenceMode::Bfs => {
            let mut widths: BTreeMap<usize, usize> = BTreeMap::new();
            for &d in seq.layers.as_deref().unwrap_or(&[]) {
                *widths.entry(d).or_default() += 1;
            }
            widths.values().copied().max().unwrap_or(1)
        }
        SequenceMode::Temporal => temporal_cap.min(n.saturating_sub(1)),
        SequenceMode::Random => n.saturating_sub(1),
    };
    m.max(1)
}

pub fn estimate_m(seq: &NodeSequence) -> usize {
    estimate_m_with(seq, DEFAULT_TEMPORAL_BAND)
}

/// Which predecessor ranks a row of the retained matrix covers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandRule {
    /// `0 < rank(v_s) - rank(v_r) <= M`: the `M` immediately preceding nodes.
    #[default]
    Sliding,
    /// `rank(v_r) <= min(M, rank(v_s))`, i.e. only the first `M` positions.
    Literal,
}

impl BandRule {
    /// Predecessor ranks covered by row `s`, in row order.
    pub fn positions(self, s: usize, m: usize) -> Vec<usize> {
        match self {
            BandRule::Sliding => (1..=m.min(s - 1)).map(|j| s - j).collect(),
            BandRule::Literal => (1..=m.min(s - 1)).collect(),
        }
    }
}

/// One row of the retained matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BandRow {
    /// Predecessor ranks, one per column.
    pub positions: Vec<usize>,
    /// Edge indicator per column.
    pub bits: Vec<u8>,
}

/// Band-limited adjacency over a node sequence; `rows()[s - 1]` belongs to
/// the node at rank `s` (row 1 is always empty).
#[derive(Debug, Clone, PartialEq)]
pub struct RetainedMatrix {
    m: usize,
    rule: BandRule,
    rows: Vec<BandRow>,
}

impl RetainedMatrix {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn rule(&self) -> BandRule {
        self.rule
    }

    pub fn rows(&self) -> &[BandRow] {
        &self.rows
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    /// Row `s` zero-padded to width `M`.
    pub fn padded_row(&self, s: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for (j, b) in self.rows[s - 1].bits.iter().enumerate() {
            out[j] = f64::from(*b);
        }
        out
    }

    /// Indicator for the ordered rank pair `(r, s)`, `r < s`.
    pub fn entry(&self, r: usize, s: usize) -> u8 {
        let row = &self.rows[s - 1];
        row.positions
            .iter()
            .position(|&p| p == r)
            .map_or(0, |j| row.bits[j])
    }

    /// Total band cells, `sum_s |row s|`.
    pub fn band_cells(&self) -> usize {
        self.rows.iter().map(|r| r.bits.len()).sum()
    }

    pub fn to_json(&self) -> RetainedMatrixJson {
        RetainedMatrixJson {
            m: self.m,
            rows: (2..=self.n())
                .map(|s| self.padded_row(s).into_iter().map(|x| x as u8).collect())
                .collect(),
        }
    }
}

/// Serialized form: rows for ranks `2..=n`, each listing predecessors
/// `v_{s-1} .. v_{s-M}` and zero-padded to `M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetainedMatrixJson {
    #[serde(rename = "M")]
    pub m: usize,
    pub rows: Vec<Vec<u8>>,
}

pub fn build_retained_matrix(
    sub: &ComputationSubgraph,
    seq: &NodeSequence,
    m: usize,
    rule: BandRule,
) -> Result<RetainedMatrix> {
    if m == 0 {
        return Err(Error::Validation("band width M must be at least 1".into()));
    }
    let pairs = sub.pair_set();
    let rows = (1..=seq.len())
        .map(|s| {
            let positions = rule.positions(s, m);
            let vs = seq.at(s);
            let bits = positions
                .iter()
                .map(|&r| {
                    let vr = seq.at(r);
                    u8::from(pairs.contains(&(vr.min(vs), vr.max(vs))))
                })
                .collect();
            BandRow { positions, bits }
        })
        .collect();
    Ok(RetainedMatrix { m, rule, rows })
}

/// Checks the BFS ordering property: whenever `(v_i, v_{j-1})` is an edge
/// and `(v_i, v_j)` is not (`i < j`), no edge `(v_a, v_b)` exists with
/// `a <= i` and `b >= j`.
pub fn verify_bfs_property(sub: &ComputationSubgraph, seq: &NodeSequence) -> bool {
    let n = seq.len();
    let pairs = sub.pair_set();
    let edge = |a: usize, b: usize| {
        let (u, v) = (seq.at(a), seq.at(b));
        pairs.contains(&(u.min(v), u.max(v)))
    };
    // reach[i] = largest rank adjacent to any of v_1..v_i
    let mut reach = vec![0usize; n + 1];
    for a in 1..=n {
        let own = (a + 1..=n).rev().find(|&b| edge(a, b)).unwrap_or(0);
        reach[a] = reach[a - 1].max(own);
    }
    for i in 1..=n {
        for j in i + 2..=n {
            if edge(i, j - 1) && !edge(i, j) && reach[i] >= j {
                return false;
            }
        }
    }
    true
}
