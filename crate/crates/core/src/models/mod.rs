//! Link predictors that accept continuous edge masks.
//!
//! A mask value multiplies an edge's contribution; `0` is exactly deletion
//! and `1` (or no mask) is the unmodified graph.

mod event;
mod planted;
mod snapshot;
mod train;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use tgx_numkernel::{Checkpoint, Tape, Tensor, Var};

use crate::graph::{ComputationSubgraph, DynamicGraph, GraphMode, TargetEdge};
use crate::{Error, Result};

pub use event::{EventArch, EventModel};
pub use planted::{PlantedRuleConfig, PlantedRuleModel};
pub use snapshot::{SnapshotArch, SnapshotModel};
pub use train::{auc, train_target, TrainConfig, TrainReport};

/// A context graph fed to a model, with an optional per-edge mask var of
/// shape `[num_edges]`. `None` means every edge is fully present.
#[derive(Debug, Clone, Copy)]
pub struct MaskedGraph<'a> {
    pub sub: &'a ComputationSubgraph,
    pub mask: Option<Var>,
}

impl<'a> MaskedGraph<'a> {
    pub fn full(sub: &'a ComputationSubgraph) -> Self {
        Self { sub, mask: None }
    }
}

/// Link predictor explained by the generator.
pub trait TargetModel: Send + Sync {
    fn mode(&self) -> GraphMode;

    /// Context graphs the model reads when scoring `edge`, in the order
    /// [`TargetModel::forward`] expects them. Never fails for lack of
    /// history; an edge-less subgraph stands in.
    fn context(&self, graph: &DynamicGraph, edge: &TargetEdge) -> Result<Vec<ComputationSubgraph>>;

    /// Records parameters on `tape`, in a model-defined order.
    fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var>;

    /// Records the link logit for `edge`.
    fn forward(&self, tape: &mut Tape, params: &[Var], edge: &TargetEdge, graphs: &[MaskedGraph<'_>]) -> Result<Var>;

    /// Logits for several edges on one tape; models may share work across
    /// items.
    fn forward_batch(
        &self,
        tape: &mut Tape,
        params: &[Var],
        items: &[(TargetEdge, Vec<MaskedGraph<'_>>)],
    ) -> Result<Vec<Var>> {
        items
            .iter()
            .map(|(edge, graphs)| self.forward(tape, params, edge, graphs))
            .collect()
    }
}

/// Models whose parameters can be trained and checkpointed.
pub trait Trainable: TargetModel {
    /// Parameters in [`TargetModel::bind`] order.
    fn named_params(&self) -> Vec<(String, &Tensor)>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;
}

/// Per-edge weights in `[0, 1]`, aligned to a subgraph's edge order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeMask(Vec<f64>);

impl EdgeMask {
    /// Clamps into `[0, 1]`; NaN is rejected.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::Validation("mask contains NaN".into()));
        }
        Ok(Self(values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect()))
    }

    pub fn ones(n: usize) -> Self {
        Self(vec![1.0; n])
    }

    pub fn from_keep(keep: &[bool]) -> Self {
        Self(keep.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn check(&self, sub: &ComputationSubgraph) -> Result<()> {
        if self.len() != sub.num_edges() {
            return Err(Error::MaskLength {
                expected: sub.num_edges(),
                got: self.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probability: f64,
    pub logit: f64,
}

impl Prediction {
    pub fn from_logit(logit: f64) -> Self {
        Self {
            probability: sigmoid(logit),
            logit,
        }
    }

    /// Probability assigned to `class` (1 = link, 0 = no link).
    pub fn class_probability(&self, class: u8) -> f64 {
        if class == 1 {
            self.probability
        } else {
            1.0 - self.probability
        }
    }

    /// Predicted class under a 0.5 threshold.
    pub fn class(&self) -> u8 {
        u8::from(self.probability >= 0.5)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Records a mask on `tape` after checking its length against `sub`.
pub fn mask_var(tape: &mut Tape, sub: &ComputationSubgraph, mask: &EdgeMask) -> Result<Option<Var>> {
    mask.check(sub)?;
    if mask.is_empty() {
        return Ok(None);
    }
    Ok(Some(tape.constant_vec(mask.values().to_vec())?))
}

/// Prediction with fixed masks; `None` leaves a graph unmasked.
pub fn predict(
    model: &dyn TargetModel,
    edge: &TargetEdge,
    graphs: &[ComputationSubgraph],
    masks: &[Option<&EdgeMask>],
) -> Result<Prediction> {
    if masks.len() != graphs.len() {
        return Err(Error::Validation(format!(
            "{} masks for {} context graphs",
            masks.len(),
            graphs.len()
        )));
    }
    let mut tape = Tape::new();
    let params = model.bind(&mut tape, false);
    let mut views = Vec::with_capacity(graphs.len());
    for (sub, mask) in graphs.iter().zip(masks) {
        let mask = match mask {
            Some(m) => mask_var(&mut tape, sub, m)?,
            None => None,
        };
        views.push(MaskedGraph { sub, mask });
    }
    let logit = model.forward(&mut tape, &params, edge, &views)?;
    Ok(Prediction::from_logit(tape.scalar(logit)))
}

/// Prediction on unmasked context graphs.
pub fn predict_full(model: &dyn TargetModel, edge: &TargetEdge, graphs: &[ComputationSubgraph]) -> Result<Prediction> {
    predict(model, edge, graphs, &vec![None; graphs.len()])
}

pub(crate) fn check_mode(model: GraphMode, sub: &ComputationSubgraph) -> Result<()> {
    let got = if sub.is_event() { GraphMode::Event } else { GraphMode::Snapshot };
    if got != model {
        return Err(Error::ModeMismatch {
            expected: model.as_str(),
            got: got.as_str(),
        });
    }
    Ok(())
}

pub(crate) fn check_node(v: usize, num_nodes: usize) -> Result<()> {
    if v >= num_nodes {
        return Err(Error::Validation(format!(
            "node {v} outside the model's {num_nodes} embeddings"
        )));
    }
    Ok(())
}

/// Architecture block of a model checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Arch {
    Snapshot(SnapshotArch),
    Event(EventArch),
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    arch: Arch,
    #[serde(flatten)]
    checkpoint: Checkpoint,
}

/// Either trained model, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Snapshot(SnapshotModel),
    Event(EventModel),
}

impl AnyModel {
    /// Freshly initialized model for `graph`'s mode.
    pub fn for_graph(graph: &DynamicGraph, seed: u64) -> Self {
        match graph {
            DynamicGraph::Snapshot(g) => AnyModel::Snapshot(SnapshotModel::new(SnapshotArch::new(g.num_nodes()), seed)),
            DynamicGraph::Event(g) => AnyModel::Event(EventModel::new(EventArch::new(g.num_nodes()), seed)),
        }
    }

    pub fn arch(&self) -> Arch {
        match self {
            AnyModel::Snapshot(m) => Arch::Snapshot(m.arch().clone()),
            AnyModel::Event(m) => Arch::Event(m.arch().clone()),
        }
    }

    fn inner(&self) -> &dyn Trainable {
        match self {
            AnyModel::Snapshot(m) => m,
            AnyModel::Event(m) => m,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Trainable {
        match self {
            AnyModel::Snapshot(m) => m,
            AnyModel::Event(m) => m,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut checkpoint = Checkpoint::new();
        for (name, t) in self.named_params() {
            checkpoint.insert(name, t);
        }
        Ok(serde_json::to_string(&ModelFile {
            arch: self.arch(),
            checkpoint,
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(s)?;
        let mut model = match file.arch {
            Arch::Snapshot(a) => AnyModel::Snapshot(SnapshotModel::zeros(a)),
            Arch::Event(a) => AnyModel::Event(EventModel::zeros(a)),
        };
        let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
        let expected: BTreeMap<&str, ()> = names.iter().map(|n| (n.as_str(), ())).collect();
        if let Some(extra) = file.checkpoint.tensors.keys().find(|k| !expected.contains_key(k.as_str())) {
            return Err(Error::Validation(format!("unexpected tensor `{extra}` in checkpoint")));
        }
        for (name, slot) in names.iter().zip(model.params_mut()) {
            let t = file.checkpoint.get(name)?;
            if t.shape() != slot.shape() {
                return Err(Error::Validation(format!(
                    "tensor `{name}` has shape {:?}, architecture expects {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        Ok(model)
    }
}

impl TargetModel for AnyModel {
    fn mode(&self) -> GraphMode {
        self.inner().mode()
    }

    fn context(&self, graph: &DynamicGraph, edge: &TargetEdge) -> Result<Vec<ComputationSubgraph>> {
        self.inner().context(graph, edge)
    }

    fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.inner().bind(tape, trainable)
    }

    fn forward(&self, tape: &mut Tape, params: &[Var], edge: &TargetEdge, graphs: &[MaskedGraph<'_>]) -> Result<Var> {
        self.inner().forward(tape, params, edge, graphs)
    }

    fn forward_batch(
        &self,
        tape: &mut Tape,
        params: &[Var],
        items: &[(TargetEdge, Vec<MaskedGraph<'_>>)],
    ) -> Result<Vec<Var>> {
        self.inner().forward_batch(tape, params, items)
    }
}

impl Trainable for AnyModel {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        self.inner().named_params()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.inner_mut().params_mut()
    }
}
