use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tgx_numkernel::{Tape, Tensor, Var};

use super::{check_mode, check_node, MaskedGraph, TargetModel, Trainable};
use crate::graph::{ComputationSubgraph, DynamicGraph, GraphMode, SubgraphKind, TargetEdge};
use crate::sequencer::extract_event_neighborhood;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventArch {
    pub num_nodes: usize,
    pub embed_dim: usize,
    pub time_dim: usize,
    pub hidden: usize,
    /// Neighborhood radius used when building context.
    pub hops: usize,
    /// Most recent events kept in the context.
    pub horizon: usize,
    /// Time differences are divided by this before encoding.
    pub time_scale: f64,
}

impl EventArch {
    pub fn new(num_nodes: usize) -> Self {
        Self {
            num_nodes,
            embed_dim: 32,
            time_dim: 16,
            hidden: 32,
            hops: 1,
            horizon: 20,
            time_scale: 1.0,
        }
    }
}

const EMB: usize = 0;
const WQ: usize = 1;
const WK: usize = 2;
const WV: usize = 3;
const WO: usize = 4;
const BO: usize = 5;
const NAMES: [&str; 6] = ["embedding", "w_query", "w_key", "w_value", "w_out", "b_out"];

/// Single-head temporal attention over prior events.
///
/// For node `v` at time `t`, with `x_v = [emb_v ; phi(0)]` and one key/value
/// input `[emb_u ; phi(t - t_e)]` per masked event `e = (v, u)`:
///
/// ```text
/// a_j   = <W_q x_v, W_k x_j> / sqrt(hidden)
/// w_j   = m_j exp(a_j)          (the self term x_v has m = 1)
/// agg   = sum_j w_j W_v x_j / sum_j w_j
/// z_v   = tanh(W_o [emb_v ; agg] + b_o)
/// logit = <z_src, z_dst>
/// ```
///
/// The self term keeps the normalizer positive, so an all-zero mask is the
/// no-context baseline and mask 0 is exactly deletion.
#[derive(Debug, Clone, PartialEq)]
pub struct EventModel {
    arch: EventArch,
    params: Vec<Tensor>,
}

impl EventModel {
    pub fn new(arch: EventArch, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = Self::shapes(&arch);
        let params = shapes
            .iter()
            .map(|s| {
                let fan_in = if s.len() == 2 { s[1] } else { s[0] };
                Tensor::init_uniform(s, fan_in, &mut rng)
            })
            .collect();
        Self { arch, params }
    }

    pub fn zeros(arch: EventArch) -> Self {
        let params = Self::shapes(&arch).iter().map(|s| Tensor::zeros(s)).collect();
        Self { arch, params }
    }

    fn shapes(a: &EventArch) -> Vec<Vec<usize>> {
        let kv = a.embed_dim + a.time_dim;
        vec![
            vec![a.num_nodes, a.embed_dim],
            vec![a.hidden, kv],
            vec![a.hidden, kv],
            vec![a.hidden, kv],
            vec![a.hidden, a.embed_dim + a.hidden],
            vec![a.hidden],
        ]
    }

    pub fn arch(&self) -> &EventArch {
        &self.arch
    }

    /// `cos(omega_k dt)` with frequencies log-spaced from 1 down to 1e-4.
    pub fn time_features(&self, dt: f64) -> Vec<f64> {
        let d = self.arch.time_dim;
        let x = dt / self.arch.time_scale;
        (0..d)
            .map(|k| {
                let exponent = if d > 1 { -4.0 * k as f64 / (d - 1) as f64 } else { 0.0 };
                (x * 10f64.powf(exponent)).cos()
            })
            .collect()
    }

    fn node_repr(&self, tape: &mut Tape, p: &[Var], v: usize, t: f64, g: &MaskedGraph<'_>) -> Result<Var> {
        let inv = 1.0 / (self.arch.hidden as f64).sqrt();
        let emb_v = tape.row(p[EMB], v)?;
        let phi0 = tape.constant_vec(self.time_features(0.0))?;
        let x_v = tape.concat(&[emb_v, phi0])?;
        let q = tape.matvec(p[WQ], x_v)?;

        // (score, mask, value); the first entry is the self term
        let mut terms: Vec<(Var, Option<Var>, Var)> = Vec::new();
        let k_self = tape.matvec(p[WK], x_v)?;
        let s_self = tape.dot(q, k_self)?;
        let v_self = tape.matvec(p[WV], x_v)?;
        terms.push((s_self, None, v_self));

        for (i, e) in g.sub.edges().iter().enumerate() {
            if !e.touches(v) {
                continue;
            }
            let other = if e.src == v { e.dst } else { e.src };
            check_node(other, self.arch.num_nodes)?;
            let emb_o = tape.row(p[EMB], other)?;
            let phi = tape.constant_vec(self.time_features(t - e.t))?;
            let x_o = tape.concat(&[emb_o, phi])?;
            let k = tape.matvec(p[WK], x_o)?;
            let s = tape.dot(q, k)?;
            let val = tape.matvec(p[WV], x_o)?;
            let m = match g.mask {
                Some(mask) => Some(tape.slice(mask, i, 1)?),
                None => None,
            };
            terms.push((s, m, val));
        }

        // constant shift for exp; it cancels in the ratio, so treating it
        // as a constant leaves the gradient exact
        let shift = terms
            .iter()
            .filter(|(_, m, _)| m.is_none_or(|m| tape.scalar(m) > 0.0))
            .map(|(s, _, _)| tape.scalar(*s) * inv)
            .fold(f64::NEG_INFINITY, f64::max);

        let mut num: Option<Var> = None;
        let mut den: Option<Var> = None;
        for (s, m, val) in terms {
            let scaled = tape.mul_const(s, inv)?;
            let centered = tape.add_const(scaled, -shift)?;
            let mut w = tape.exp(centered)?;
            if let Some(m) = m {
                w = tape.mul(w, m)?;
            }
            let contrib = tape.scale(val, w)?;
            num = Some(match num {
                Some(acc) => tape.add(acc, contrib)?,
                None => contrib,
            });
            den = Some(match den {
                Some(acc) => tape.add(acc, w)?,
                None => w,
            });
        }
        let (num, den) = (num.expect("self term"), den.expect("self term"));
        let inv_den = tape.powf(den, -1.0)?;
        let agg = tape.scale(num, inv_den)?;
        let h_in = tape.concat(&[emb_v, agg])?;
        let pre = tape.matvec(p[WO], h_in)?;
        let pre = tape.add(pre, p[BO])?;
        Ok(tape.tanh(pre)?)
    }
}

impl TargetModel for EventModel {
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
        match extract_event_neighborhood(g, edge, self.arch.hops, self.arch.horizon) {
            Ok(sub) => Ok(vec![sub]),
            Err(Error::EmptyNeighborhood { .. }) => Ok(vec![ComputationSubgraph::new(
                *edge,
                self.arch.hops,
                SubgraphKind::Event,
                [edge.src, edge.dst],
                Vec::new(),
            )?]),
            Err(e) => Err(e),
        }
    }

    fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params.iter().map(|t| tape.leaf(t, trainable)).collect()
    }

    fn forward(&self, tape: &mut Tape, params: &[Var], edge: &TargetEdge, graphs: &[MaskedGraph<'_>]) -> Result<Var> {
        for g in graphs {
            check_mode(GraphMode::Event, g.sub)?;
        }
        let [g] = graphs else {
            return Err(Error::Validation(format!(
                "event model takes one context graph, got {}",
                graphs.len()
            )));
        };
        if let Some(m) = g.mask {
            if tape.value(m).len() != g.sub.num_edges() {
                return Err(Error::MaskLength {
                    expected: g.sub.num_edges(),
                    got: tape.value(m).len(),
                });
            }
        }
        check_node(edge.src, self.arch.num_nodes)?;
        check_node(edge.dst, self.arch.num_nodes)?;
        let zs = self.node_repr(tape, params, edge.src, edge.t, g)?;
        let zd = self.node_repr(tape, params, edge.dst, edge.t, g)?;
        Ok(tape.dot(zs, zd)?)
    }
}

impl Trainable for EventModel {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        NAMES.iter().map(|n| n.to_string()).zip(self.params.iter()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.params.iter_mut().collect()
    }
}
