use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use tgx_numkernel::{Tape, Var};

use super::{check_mode, MaskedGraph, TargetModel};
use crate::graph::{ComputationSubgraph, DynamicGraph, GraphMode, SubEdge, SubgraphKind, TargetEdge};
use crate::sequencer::extract_event_neighborhood;
use crate::synth::GroundTruth;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedRuleConfig {
    pub hops: usize,
    pub horizon: usize,
    /// Logit without the causal event.
    pub bias: f64,
    /// Logit gained when the causal event is present.
    pub weight: f64,
}

impl Default for PlantedRuleConfig {
    fn default() -> Self {
        Self {
            hops: 1,
            horizon: 12,
            bias: -4.0,
            weight: 8.0,
        }
    }
}

/// Link predictor whose logit for a planted link is
/// `bias + weight * m_causal`, with `m_causal` the mask of that link's
/// causal hub event (0 when absent). Every other event is ignored, and
/// unknown edges score `bias`.
#[derive(Debug, Clone)]
pub struct PlantedRuleModel {
    cfg: PlantedRuleConfig,
    causal: HashMap<(usize, usize, u64), SubEdge>,
}

fn key(e: &TargetEdge) -> (usize, usize, u64) {
    (e.src, e.dst, e.t.to_bits())
}

impl PlantedRuleModel {
    pub fn new(truth: &[GroundTruth], cfg: PlantedRuleConfig) -> Self {
        let causal = truth.iter().map(|g| (key(&g.edge), g.causal)).collect();
        Self { cfg, causal }
    }

    pub fn causal_event(&self, edge: &TargetEdge) -> Option<SubEdge> {
        self.causal.get(&key(edge)).copied()
    }
}

impl TargetModel for PlantedRuleModel {
    fn mode(&self) -> GraphMode {
        GraphMode::Event
    }

    fn context(&self, graph: &DynamicGraph, edge: &TargetEdge) -> Result<Vec<ComputationSubgraph>> {
        let DynamicGraph::Event(g) = graph else {
            return Err(Error::ModeMismatch {
                expected: "event",
                got: "snapshot",
            });
        };
        match extract_event_neighborhood(g, edge, self.cfg.hops, self.cfg.horizon) {
            Ok(sub) => Ok(vec![sub]),
            Err(Error::EmptyNeighborhood { .. }) => Ok(vec![ComputationSubgraph::new(
                *edge,
                self.cfg.hops,
                SubgraphKind::Event,
                [edge.src, edge.dst],
                Vec::new(),
            )?]),
            Err(e) => Err(e),
        }
    }

    fn bind(&self, _tape: &mut Tape, _trainable: bool) -> Vec<Var> {
        Vec::new()
    }

    fn forward(&self, tape: &mut Tape, _params: &[Var], edge: &TargetEdge, graphs: &[MaskedGraph<'_>]) -> Result<Var> {
        for g in graphs {
            check_mode(GraphMode::Event, g.sub)?;
        }
        let [g] = graphs else {
            return Err(Error::Validation(format!(
                "planted rule model takes one context graph, got {}",
                graphs.len()
            )));
        };
        let bias = tape.constant_scalar(self.cfg.bias)?;
        let Some(c) = self.causal_event(edge) else {
            return Ok(bias);
        };
        let hit = g
            .sub
            .edges()
            .iter()
            .position(|e| e.src == c.src && e.dst == c.dst && e.t.to_bits() == c.t.to_bits());
        let Some(i) = hit else {
            return Ok(bias);
        };
        let presence = match g.mask {
            Some(m) => {
                if tape.value(m).len() != g.sub.num_edges() {
                    return Err(Error::MaskLength {
                        expected: g.sub.num_edges(),
                        got: tape.value(m).len(),
                    });
                }
                tape.slice(m, i, 1)?
            }
            None => tape.constant_scalar(1.0)?,
        };
        let lift = tape.mul_const(presence, self.cfg.weight)?;
        Ok(tape.add(bias, lift)?)
    }
}
