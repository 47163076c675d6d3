//! Dynamic graph domain types: snapshot lists, event streams, target edges,
//! computation subgraphs and explanations. All of them are immutable once
//! built.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type NodeId = usize;

/// One timeslot of an undirected snapshot graph.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    nodes: Vec<NodeId>,
    edges: Vec<(NodeId, NodeId)>,
}

impl Snapshot {
    /// Sorted node ids touched by this snapshot's edges.
    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    /// Sorted `(lo, hi)` pairs, `lo < hi`.
    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    pub fn contains_node(&self, v: NodeId) -> bool {
        self.nodes.binary_search(&v).is_ok()
    }

    pub fn adjacency(&self) -> BTreeMap<NodeId, Vec<NodeId>> {
        let mut adj: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        for &(u, v) in &self.edges {
            adj.entry(u).or_default().push(v);
            adj.entry(v).or_default().push(u);
        }
        for list in adj.values_mut() {
            list.sort_unstable();
        }
        adj
    }
}

/// Sequence of static snapshots indexed `1..=T`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SnapshotGraph {
    num_nodes: usize,
    snapshots: Vec<Snapshot>,
    labels: Vec<String>,
}

impl SnapshotGraph {
    pub fn num_snapshots(&self) -> usize {
        self.snapshots.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// 1-based snapshot lookup.
    pub fn snapshot(&self, index: usize) -> Option<&Snapshot> {
        index.checked_sub(1).and_then(|i| self.snapshots.get(i))
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    /// Grow the node set to at least `n` ids (isolated nodes get default labels).
    pub fn with_min_nodes(mut self, n: usize) -> Self {
        while self.num_nodes < n {
            self.labels.push(self.num_nodes.to_string());
            self.num_nodes += 1;
        }
        self
    }

    pub fn num_edges(&self) -> usize {
        self.snapshots.iter().map(|s| s.edges.len()).sum()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, v: NodeId) -> String {
        self.labels.get(v).cloned().unwrap_or_else(|| v.to_string())
    }

    /// Replace the export labels; one per node.
    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.num_nodes {
            return Err(Error::Validation(format!(
                "{} labels for {} nodes",
                labels.len(),
                self.num_nodes
            )));
        }
        self.labels = labels;
        Ok(self)
    }
}

/// One timestamped interaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub src: NodeId,
    pub dst: NodeId,
    pub t: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub features: Vec<f64>,
}

/// Event stream sorted by non-decreasing timestamp.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventGraph {
    num_nodes: usize,
    events: Vec<Event>,
    feature_dim: usize,
    labels: Vec<String>,
}

impl EventGraph {
    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, v: NodeId) -> String {
        self.labels.get(v).cloned().unwrap_or_else(|| v.to_string())
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.num_nodes {
            return Err(Error::Validation(format!(
                "{} labels for {} nodes",
                labels.len(),
                self.num_nodes
            )));
        }
        self.labels = labels;
        Ok(self)
    }

    /// Grow the node set to at least `n` ids (isolated nodes get default labels).
    pub fn with_min_nodes(mut self, n: usize) -> Self {
        while self.num_nodes < n {
            self.labels.push(self.num_nodes.to_string());
            self.num_nodes += 1;
        }
        self
    }

    pub fn time_span(&self) -> Option<(f64, f64)> {
        Some((self.events.first()?.t, self.events.last()?.t))
    }

    /// Number of events strictly before `t`.
    pub fn count_before(&self, t: f64) -> usize {
        self.events.partition_point(|e| e.t < t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DynamicGraph {
    Snapshot(SnapshotGraph),
    Event(EventGraph),
}

impl DynamicGraph {
    pub fn mode(&self) -> GraphMode {
        match self {
            DynamicGraph::Snapshot(_) => GraphMode::Snapshot,
            DynamicGraph::Event(_) => GraphMode::Event,
        }
    }

    pub fn num_nodes(&self) -> usize {
        match self {
            DynamicGraph::Snapshot(g) => g.num_nodes(),
            DynamicGraph::Event(g) => g.num_nodes(),
        }
    }

    pub fn label(&self, v: NodeId) -> String {
        match self {
            DynamicGraph::Snapshot(g) => g.label(v),
            DynamicGraph::Event(g) => g.label(v),
        }
    }

    /// Dense id of an input label; unlabeled graphs accept the id itself.
    pub fn node_id(&self, label: &str) -> Option<NodeId> {
        let labels = match self {
            DynamicGraph::Snapshot(g) => g.labels(),
            DynamicGraph::Event(g) => g.labels(),
        };
        if labels.is_empty() {
            return label.parse().ok().filter(|&v| v < self.num_nodes());
        }
        labels.iter().position(|l| l == label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphMode {
    Snapshot,
    Event,
}

impl GraphMode {
    pub fn as_str(self) -> &'static str {
        match self {
            GraphMode::Snapshot => "snapshot",
            GraphMode::Event => "event",
        }
    }
}

impl std::fmt::Display for GraphMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for GraphMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "snapshot" => Ok(GraphMode::Snapshot),
            "event" => Ok(GraphMode::Event),
            other => Err(Error::Validation(format!("unknown graph mode `{other}`"))),
        }
    }
}

/// The interaction whose prediction is explained. For snapshot graphs `t`
/// holds the 1-based snapshot index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetEdge {
    pub src: NodeId,
    pub dst: NodeId,
    pub t: f64,
}

impl TargetEdge {
    pub fn new(src: NodeId, dst: NodeId, t: f64) -> Self {
        Self { src, dst, t }
    }

    pub fn snapshot(&self) -> usize {
        self.t.max(0.0).round() as usize
    }
}

pub fn build_snapshot_graph(rows: &[(NodeId, NodeId, usize)]) -> Result<SnapshotGraph> {
    let mut num_nodes = 0;
    let mut t_max = 0;
    for (i, &(u, v, s)) in rows.iter().enumerate() {
        if u == v {
            return Err(Error::Validation(format!("row {i}: self-loop on node {u}")));
        }
        if s == 0 {
            return Err(Error::Validation(format!("row {i}: snapshot indices start at 1")));
        }
        num_nodes = num_nodes.max(u + 1).max(v + 1);
        t_max = t_max.max(s);
    }
    let mut edge_sets: Vec<BTreeSet<(NodeId, NodeId)>> = vec![BTreeSet::new(); t_max];
    for &(u, v, s) in rows {
        edge_sets[s - 1].insert((u.min(v), u.max(v)));
    }
    let snapshots = edge_sets
        .into_iter()
        .map(|set| {
            let nodes: BTreeSet<NodeId> = set.iter().flat_map(|&(u, v)| [u, v]).collect();
            Snapshot {
                nodes: nodes.into_iter().collect(),
                edges: set.into_iter().collect(),
            }
        })
        .collect();
    Ok(SnapshotGraph {
        num_nodes,
        snapshots,
        labels: (0..num_nodes).map(|v| v.to_string()).collect(),
    })
}

pub type EventRow = (NodeId, NodeId, f64, Vec<f64>);

pub fn build_event_graph(rows: Vec<EventRow>) -> Result<EventGraph> {
    let feature_dim = rows.first().map_or(0, |r| r.3.len());
    let mut num_nodes = 0;
    let mut events = Vec::with_capacity(rows.len());
    for (i, (src, dst, t, features)) in rows.into_iter().enumerate() {
        if src == dst {
            return Err(Error::Validation(format!("event {i}: self-loop on node {src}")));
        }
        if !t.is_finite() || t < 0.0 {
            return Err(Error::Validation(format!("event {i}: timestamp {t} must be finite and >= 0")));
        }
        if features.len() != feature_dim {
            return Err(Error::Validation(format!(
                "event {i}: {} features, expected {feature_dim}",
                features.len()
            )));
        }
        if features.iter().any(|f| !f.is_finite()) {
            return Err(Error::Validation(format!("event {i}: non-finite feature")));
        }
        num_nodes = num_nodes.max(src + 1).max(dst + 1);
        events.push(Event { src, dst, t, features });
    }
    // Vec::sort_by is stable
    events.sort_by(|a, b| a.t.total_cmp(&b.t));
    Ok(EventGraph {
        num_nodes,
        events,
        feature_dim,
        labels: (0..num_nodes).map(|v| v.to_string()).collect(),
    })
}

/// First-appearance dense id assignment for raw node labels.
#[derive(Debug, Clone, Default)]
pub struct IdMap {
    labels: Vec<String>,
    index: HashMap<String, NodeId>,
}

impl IdMap {
    pub fn id(&mut self, label: &str) -> NodeId {
        if let Some(&id) = self.index.get(label) {
            return id;
        }
        let id = self.labels.len();
        self.labels.push(label.to_string());
        self.index.insert(label.to_string(), id);
        id
    }

    pub fn get(&self, label: &str) -> Option<NodeId> {
        self.index.get(label).copied()
    }

    pub fn into_labels(self) -> Vec<String> {
        self.labels
    }
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(r)
}

fn expect_header(headers: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let got: Vec<&str> = headers.iter().take(expected.len()).collect();
    if got != expected {
        return Err(Error::Validation(format!(
            "expected CSV header starting with {:?}, got {:?}",
            expected.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: usize) -> Result<T> {
    let raw = rec
        .get(i)
        .ok_or_else(|| Error::Validation(format!("line {line}: missing column {}", i + 1)))?;
    raw.parse()
        .map_err(|_| Error::Validation(format!("line {line}: cannot parse `{raw}`")))
}

/// `src,dst,snapshot` with raw labels remapped to dense ids.
pub fn read_snapshot_csv<R: Read>(r: R) -> Result<SnapshotGraph> {
    let mut reader = csv_reader(r);
    expect_header(reader.headers()?, &["src", "dst", "snapshot"])?;
    let mut ids = IdMap::default();
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let src = ids.id(rec.get(0).unwrap_or_default());
        let dst = ids.id(rec.get(1).unwrap_or_default());
        rows.push((src, dst, parse_field::<usize>(&rec, 2, line)?));
    }
    let g = build_snapshot_graph(&rows)?;
    g.with_labels(ids.into_labels())
}

/// `src,dst,timestamp[,f1,...,fd]` with raw labels remapped to dense ids.
pub fn read_event_csv<R: Read>(r: R) -> Result<EventGraph> {
    let mut reader = csv_reader(r);
    expect_header(reader.headers()?, &["src", "dst", "timestamp"])?;
    let mut ids = IdMap::default();
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let src = ids.id(rec.get(0).unwrap_or_default());
        let dst = ids.id(rec.get(1).unwrap_or_default());
        let t: f64 = parse_field(&rec, 2, line)?;
        let features = (3..rec.len())
            .map(|j| parse_field::<f64>(&rec, j, line))
            .collect::<Result<Vec<_>>>()?;
        rows.push((src, dst, t, features));
    }
    let g = build_event_graph(rows)?;
    g.with_labels(ids.into_labels())
}

pub fn write_snapshot_csv<W: Write>(g: &SnapshotGraph, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["src", "dst", "snapshot"])?;
    for (i, s) in g.snapshots.iter().enumerate() {
        for &(u, v) in &s.edges {
            out.write_record([g.label(u), g.label(v), (i + 1).to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_event_csv<W: Write>(g: &EventGraph, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["src".to_string(), "dst".to_string(), "timestamp".to_string()];
    header.extend((1..=g.feature_dim).map(|i| format!("f{i}")));
    out.write_record(&header)?;
    for e in &g.events {
        let mut rec = vec![g.label(e.src), g.label(e.dst), format!("{}", e.t)];
        rec.extend(e.features.iter().map(|f| format!("{f}")));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEdgeRecord {
    pub src: NodeId,
    pub dst: NodeId,
    pub snapshot: usize,
}

/// JSON form of a dynamic graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum GraphDocument {
    Snapshot {
        nodes: Vec<String>,
        edges: Vec<SnapshotEdgeRecord>,
    },
    Event {
        nodes: Vec<String>,
        events: Vec<Event>,
    },
}

impl From<&DynamicGraph> for GraphDocument {
    fn from(g: &DynamicGraph) -> Self {
        match g {
            DynamicGraph::Snapshot(g) => GraphDocument::Snapshot {
                nodes: (0..g.num_nodes).map(|v| g.label(v)).collect(),
                edges: g
                    .snapshots
                    .iter()
                    .enumerate()
                    .flat_map(|(i, s)| {
                        s.edges.iter().map(move |&(src, dst)| SnapshotEdgeRecord {
                            src,
                            dst,
                            snapshot: i + 1,
                        })
                    })
                    .collect(),
            },
            DynamicGraph::Event(g) => GraphDocument::Event {
                nodes: (0..g.num_nodes).map(|v| g.label(v)).collect(),
                events: g.events.clone(),
            },
        }
    }
}

impl GraphDocument {
    pub fn into_graph(self) -> Result<DynamicGraph> {
        match self {
            GraphDocument::Snapshot { nodes, edges } => {
                let rows: Vec<_> = edges.iter().map(|e| (e.src, e.dst, e.snapshot)).collect();
                let mut g = build_snapshot_graph(&rows)?;
                g.num_nodes = g.num_nodes.max(nodes.len());
                Ok(DynamicGraph::Snapshot(g.with_labels(nodes)?))
            }
            GraphDocument::Event { nodes, events } => {
                let rows = events.into_iter().map(|e| (e.src, e.dst, e.t, e.features)).collect();
                let mut g = build_event_graph(rows)?;
                g.num_nodes = g.num_nodes.max(nodes.len());
                Ok(DynamicGraph::Event(g.with_labels(nodes)?))
            }
        }
    }
}

pub fn graph_to_json(g: &DynamicGraph) -> Result<String> {
    Ok(serde_json::to_string_pretty(&GraphDocument::from(g))?)
}

pub fn graph_from_json(s: &str) -> Result<DynamicGraph> {
    serde_json::from_str::<GraphDocument>(s)?.into_graph()
}

/// Where a computation subgraph was taken from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SubgraphKind {
    Snapshot { snapshot: usize },
    Event,
}

/// A candidate edge (snapshot mode, `t` = snapshot index) or event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubEdge {
    pub src: NodeId,
    pub dst: NodeId,
    pub t: f64,
}

impl SubEdge {
    pub fn touches(&self, v: NodeId) -> bool {
        self.src == v || self.dst == v
    }

    pub fn shares_node(&self, other: &SubEdge) -> bool {
        self.touches(other.src) || self.touches(other.dst)
    }

    /// Unordered endpoint pair, `(lo, hi)`.
    pub fn pair(&self) -> (NodeId, NodeId) {
        (self.src.min(self.dst), self.src.max(self.dst))
    }
}

/// Neighborhood of a target edge: the explainer's search space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComputationSubgraph {
    pub origin: TargetEdge,
    pub k: usize,
    pub kind: SubgraphKind,
    nodes: Vec<NodeId>,
    edges: Vec<SubEdge>,
}

impl ComputationSubgraph {
    /// Validates endpoint membership and, for event subgraphs, strict
    /// precedence of every event over the origin.
    pub fn new(
        origin: TargetEdge,
        k: usize,
        kind: SubgraphKind,
        nodes: impl IntoIterator<Item = NodeId>,
        edges: Vec<SubEdge>,
    ) -> Result<Self> {
        let nodes: BTreeSet<NodeId> = nodes.into_iter().collect();
        for v in [origin.src, origin.dst] {
            if !nodes.contains(&v) {
                return Err(Error::Validation(format!("origin endpoint {v} missing from subgraph")));
            }
        }
        for e in &edges {
            if !nodes.contains(&e.src) || !nodes.contains(&e.dst) {
                return Err(Error::Validation(format!(
                    "edge ({}, {}) leaves the subgraph node set",
                    e.src, e.dst
                )));
            }
            if kind == SubgraphKind::Event && e.t >= origin.t {
                return Err(Error::Validation(format!(
                    "event ({}, {}, {}) does not precede the target at {}",
                    e.src, e.dst, e.t, origin.t
                )));
            }
        }
        Ok(Self {
            origin,
            k,
            kind,
            nodes: nodes.into_iter().collect(),
            edges,
        })
    }

    /// Sorted node ids.
    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn edges(&self) -> &[SubEdge] {
        &self.edges
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn is_event(&self) -> bool {
        self.kind == SubgraphKind::Event
    }

    pub fn contains_node(&self, v: NodeId) -> bool {
        self.nodes.binary_search(&v).is_ok()
    }

    /// Undirected adjacency with ascending, de-duplicated neighbor lists.
    pub fn adjacency(&self) -> BTreeMap<NodeId, Vec<NodeId>> {
        let mut adj: BTreeMap<NodeId, BTreeSet<NodeId>> =
            self.nodes.iter().map(|&v| (v, BTreeSet::new())).collect();
        for e in &self.edges {
            adj.entry(e.src).or_default().insert(e.dst);
            adj.entry(e.dst).or_default().insert(e.src);
        }
        adj.into_iter().map(|(k, v)| (k, v.into_iter().collect())).collect()
    }

    /// Distinct unordered node pairs carrying at least one edge.
    pub fn pair_set(&self) -> BTreeSet<(NodeId, NodeId)> {
        self.edges.iter().map(SubEdge::pair).collect()
    }

    /// Same node set, only the edges whose `keep` flag is set.
    pub fn retain_edges(&self, keep: &[bool]) -> Result<Self> {
        if keep.len() != self.edges.len() {
            return Err(Error::MaskLength {
                expected: self.edges.len(),
                got: keep.len(),
            });
        }
        Ok(Self {
            origin: self.origin,
            k: self.k,
            kind: self.kind,
            nodes: self.nodes.clone(),
            edges: self
                .edges
                .iter()
                .zip(keep)
                .filter(|(_, k)| **k)
                .map(|(e, _)| *e)
                .collect(),
        })
    }

    /// Relabel every node through `f` (must be injective).
    pub fn relabel(&self, f: impl Fn(NodeId) -> NodeId) -> Result<Self> {
        let origin = TargetEdge::new(f(self.origin.src), f(self.origin.dst), self.origin.t);
        let edges = self
            .edges
            .iter()
            .map(|e| SubEdge {
                src: f(e.src),
                dst: f(e.dst),
                t: e.t,
            })
            .collect();
        Self::new(origin, self.k, self.kind, self.nodes.iter().map(|&v| f(v)), edges)
    }
}

/// A retained edge or event with its explanation probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetainedEdge {
    pub src: NodeId,
    pub dst: NodeId,
    pub t: f64,
    pub p: f64,
}

impl RetainedEdge {
    pub fn as_sub_edge(&self) -> SubEdge {
        SubEdge {
            src: self.src,
            dst: self.dst,
            t: self.t,
        }
    }
}

/// The explanation subgraph with per-edge probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub edge: TargetEdge,
    pub mode: GraphMode,
    pub retained: Vec<RetainedEdge>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size_budget: Option<usize>,
}

impl Explanation {
    pub fn empty(edge: TargetEdge, mode: GraphMode) -> Self {
        Self {
            edge,
            mode,
            retained: Vec::new(),
            size_budget: None,
        }
    }

    pub fn len(&self) -> usize {
        self.retained.len()
    }

    pub fn is_empty(&self) -> bool {
        self.retained.is_empty()
    }

    /// Snapshot-mode parts keyed by snapshot index.
    pub fn parts(&self) -> BTreeMap<usize, Vec<RetainedEdge>> {
        let mut out: BTreeMap<usize, Vec<RetainedEdge>> = BTreeMap::new();
        for r in &self.retained {
            out.entry(r.t.round() as usize).or_default().push(*r);
        }
        out
    }

    /// Keep flags over `sub`'s edges marking the explanation's members.
    /// Duplicate `(src, dst, t)` records are matched one-to-one.
    pub fn membership(&self, sub: &ComputationSubgraph) -> Result<Vec<bool>> {
        let mut keep = vec![false; sub.num_edges()];
        for r in &self.retained {
            let hit = sub.edges().iter().enumerate().position(|(i, e)| {
                !keep[i] && e.src == r.src && e.dst == r.dst && e.t.to_bits() == r.t.to_bits()
            });
            match hit {
                Some(i) => keep[i] = true,
                None => {
                    return Err(Error::Validation(format!(
                        "explanation edge ({}, {}, {}) is not in the computation subgraph",
                        r.src, r.dst, r.t
                    )))
                }
            }
        }
        Ok(keep)
    }
}
