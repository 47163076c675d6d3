//! Autoregressive generator of explanation subgraphs.
//!
//! The graph-level GRU walks the node sequence. At rank `s` it reads the
//! band row of `v_s` (rank 1 reads an all-ones start vector) and its state
//! seeds the edge-level GRU stack, which unrolls once per band column and
//! emits one edge probability per column through the MLP head.

use std::cmp::Ordering;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tgx_numkernel::{GruCell, GruVars, Linear, LinearVars, Mlp, MlpVars, Tape, Tensor, Var};

use crate::graph::{ComputationSubgraph, Explanation, GraphMode, RetainedEdge, SubEdge, SubgraphKind};
use crate::sequencer::{NodeSequence, RetainedMatrix};
use crate::{Error, Result};

/// Probabilities are kept this far from 0 and 1 before any logarithm.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorArch {
    /// Band width `M`, the graph-level input size.
    pub input: usize,
    pub embed: usize,
    pub hidden: usize,
    pub edge_embed: usize,
    pub edge_hidden: usize,
    pub edge_layers: usize,
    pub output: usize,
}

impl GeneratorArch {
    pub fn new(input: usize) -> Self {
        Self {
            input,
            embed: 64,
            hidden: 128,
            edge_embed: 64,
            edge_hidden: 128,
            edge_layers: 2,
            output: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorModel {
    arch: GeneratorArch,
    graph_embed: Linear,
    graph_gru: GruCell,
    init_proj: Linear,
    edge_embed: Linear,
    edge_grus: Vec<GruCell>,
    edge_out: Linear,
    head: Mlp,
}

/// A generator bound to a tape.
pub struct GeneratorVars {
    arch: GeneratorArch,
    graph_embed: LinearVars,
    graph_gru: GruVars,
    init_proj: LinearVars,
    edge_embed: LinearVars,
    edge_grus: Vec<GruVars>,
    edge_out: LinearVars,
    head: MlpVars,
    all: Vec<Var>,
}

/// Probabilities for one node's band row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjacencyVector {
    /// 1-based rank of the node in the sequence.
    pub index: usize,
    /// One probability per band column.
    pub probs: Vec<f64>,
    /// Observed bits of the same columns.
    pub bits: Vec<u8>,
}

/// Tape-level generator output: `probs[s - 1]` holds rank `s`'s columns.
pub struct GeneratorOutput {
    pub probs: Vec<Vec<Var>>,
    /// Edge-level recurrent steps executed.
    pub edge_steps: usize,
}

impl GeneratorModel {
    pub fn new(arch: GeneratorArch, seed: u64) -> Result<Self> {
        if arch.input == 0 || arch.edge_layers == 0 {
            return Err(Error::Validation("generator needs M >= 1 and at least one edge layer".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let graph_embed = Linear::new(arch.input, arch.embed, &mut rng);
        let graph_gru = GruCell::new(arch.embed, arch.hidden, &mut rng);
        let init_proj = Linear::new(arch.hidden, arch.edge_hidden, &mut rng);
        let edge_embed = Linear::new(1, arch.edge_embed, &mut rng);
        let edge_grus = (0..arch.edge_layers)
            .map(|l| {
                let input = if l == 0 { arch.edge_embed } else { arch.edge_hidden };
                GruCell::new(input, arch.edge_hidden, &mut rng)
            })
            .collect();
        let edge_out = Linear::new(arch.edge_hidden, arch.output, &mut rng);
        let head = Mlp::new(&[arch.output, 1], &mut rng)?;
        Ok(Self {
            arch,
            graph_embed,
            graph_gru,
            init_proj,
            edge_embed,
            edge_grus,
            edge_out,
            head,
        })
    }

    pub fn arch(&self) -> &GeneratorArch {
        &self.arch
    }

    /// The head's final linear layer (weight `[1, output]`, bias `[1]`).
    pub fn head_mut(&mut self) -> &mut Linear {
        let layers = self.head.layers_mut();
        let last = layers.len() - 1;
        &mut layers[last]
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        fn linear<'a>(name: &str, ts: [&'a Tensor; 2], out: &mut Vec<(String, &'a Tensor)>) {
            out.push((format!("{name}.weight"), ts[0]));
            out.push((format!("{name}.bias"), ts[1]));
        }
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        linear("graph_embed", self.graph_embed.params(), &mut out);
        for (n, t) in self.graph_gru.named_params() {
            out.push((format!("graph_gru.{n}"), t));
        }
        linear("init_proj", self.init_proj.params(), &mut out);
        linear("edge_embed", self.edge_embed.params(), &mut out);
        for (l, cell) in self.edge_grus.iter().enumerate() {
            for (n, t) in cell.named_params() {
                out.push((format!("edge_gru{}.{n}", l + 1), t));
            }
        }
        linear("edge_out", self.edge_out.params(), &mut out);
        for (i, layer) in self.head.layers().iter().enumerate() {
            linear(&format!("head{i}"), layer.params(), &mut out);
        }
        out
    }

    /// Parameters in [`GeneratorModel::named_params`] order.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        out.extend(self.graph_embed.params_mut());
        out.extend(self.graph_gru.params_mut().iter_mut());
        out.extend(self.init_proj.params_mut());
        out.extend(self.edge_embed.params_mut());
        for cell in &mut self.edge_grus {
            out.extend(cell.params_mut().iter_mut());
        }
        out.extend(self.edge_out.params_mut());
        for layer in self.head.layers_mut() {
            out.extend(layer.params_mut());
        }
        out
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> GeneratorVars {
        let graph_embed = self.graph_embed.bind(tape, trainable);
        let graph_gru = self.graph_gru.bind(tape, trainable);
        let init_proj = self.init_proj.bind(tape, trainable);
        let edge_embed = self.edge_embed.bind(tape, trainable);
        let edge_grus: Vec<GruVars> = self.edge_grus.iter().map(|c| c.bind(tape, trainable)).collect();
        let edge_out = self.edge_out.bind(tape, trainable);
        let head = self.head.bind(tape, trainable);
        let mut all = Vec::new();
        all.extend(graph_embed.vars());
        all.extend_from_slice(graph_gru.vars());
        all.extend(init_proj.vars());
        all.extend(edge_embed.vars());
        for g in &edge_grus {
            all.extend_from_slice(g.vars());
        }
        all.extend(edge_out.vars());
        all.extend(head.vars());
        GeneratorVars {
            arch: self.arch.clone(),
            graph_embed,
            graph_gru,
            init_proj,
            edge_embed,
            edge_grus,
            edge_out,
            head,
            all,
        }
    }
}

impl GeneratorVars {
    /// Parameter vars in [`GeneratorModel::named_params`] order.
    pub fn vars(&self) -> &[Var] {
        &self.all
    }

    /// Runs the generator over `retained`; `xs[s - 1]` holds the scalar
    /// edge-level inputs for rank `s`, one per band column.
    pub fn forward(&self, tape: &mut Tape, retained: &RetainedMatrix, xs: &[Vec<f64>]) -> Result<GeneratorOutput> {
        let n = retained.n();
        if n == 0 {
            return Err(Error::Validation("cannot generate over an empty node sequence".into()));
        }
        if retained.m() > self.arch.input {
            return Err(Error::Validation(format!(
                "band width {} exceeds the generator's input size {}",
                retained.m(),
                self.arch.input
            )));
        }
        if xs.len() != n || xs.iter().zip(retained.rows()).any(|(x, r)| x.len() != r.bits.len()) {
            return Err(Error::Validation("edge-level inputs do not match the band layout".into()));
        }

        let mut h = tape.constant_vec(vec![0.0; self.arch.hidden])?;
        let zero_edge = tape.constant_vec(vec![0.0; self.arch.edge_hidden])?;
        let mut probs = Vec::with_capacity(n);
        let mut edge_steps = 0;
        for s in 1..=n {
            let mut row = if s == 1 {
                vec![1.0; self.arch.input]
            } else {
                retained.padded_row(s)
            };
            row.resize(self.arch.input, 0.0);
            let x = tape.constant_vec(row)?;
            let e = self.graph_embed.forward(tape, x)?;
            let e = tape.relu(e)?;
            h = self.graph_gru.step(tape, e, h)?;

            let cols = retained.rows()[s - 1].bits.len();
            let mut row_probs = Vec::with_capacity(cols);
            if cols > 0 {
                let mut states = vec![zero_edge; self.edge_grus.len()];
                states[0] = self.init_proj.forward(tape, h)?;
                for &xv in &xs[s - 1] {
                    let x = tape.constant_vec(vec![xv])?;
                    let mut inp = self.edge_embed.forward(tape, x)?;
                    inp = tape.relu(inp)?;
                    for (l, cell) in self.edge_grus.iter().enumerate() {
                        states[l] = cell.step(tape, inp, states[l])?;
                        inp = states[l];
                    }
                    let o = self.edge_out.forward(tape, inp)?;
                    let o = tape.relu(o)?;
                    row_probs.push(self.head.forward(tape, o)?);
                    edge_steps += 1;
                }
            }
            probs.push(row_probs);
        }
        Ok(GeneratorOutput { probs, edge_steps })
    }
}

/// Frozen Bernoulli(0.5) edge-level inputs, one per band cell.
pub fn sample_inputs(retained: &RetainedMatrix, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    retained
        .rows()
        .iter()
        .map(|r| (0..r.bits.len()).map(|_| f64::from(u8::from(rng.gen_bool(0.5)))).collect())
        .collect()
}

/// Value-only forward; one vector per rank `2..=n`.
pub fn generator_forward(gen: &GeneratorModel, retained: &RetainedMatrix, xs: &[Vec<f64>]) -> Result<Vec<AdjacencyVector>> {
    let mut tape = Tape::new();
    let vars = gen.bind(&mut tape, false);
    let out = vars.forward(&mut tape, retained, xs)?;
    Ok(adjacency_vectors(&tape, &out, retained))
}

pub fn adjacency_vectors(tape: &Tape, out: &GeneratorOutput, retained: &RetainedMatrix) -> Vec<AdjacencyVector> {
    out.probs
        .iter()
        .zip(retained.rows())
        .enumerate()
        .skip(1)
        .map(|(i, (ps, row))| AdjacencyVector {
            index: i + 1,
            probs: ps.iter().map(|p| tape.scalar(*p)).collect(),
            bits: row.bits.clone(),
        })
        .collect()
}

/// `sum_ij S_ij ln p_ij + (1 - S_ij) ln(1 - p_ij)` with clamped `p`.
pub fn log_likelihood(vectors: &[AdjacencyVector]) -> f64 {
    vectors
        .iter()
        .flat_map(|v| v.probs.iter().zip(&v.bits))
        .map(|(&p, &b)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            if b == 1 {
                p.ln()
            } else {
                (1.0 - p).ln()
            }
        })
        .sum()
}

pub fn sequence_log_likelihood(gen: &GeneratorModel, retained: &RetainedMatrix, xs: &[Vec<f64>]) -> Result<f64> {
    Ok(log_likelihood(&generator_forward(gen, retained, xs)?))
}

/// Records the log-likelihood of the observed bits on the tape.
pub fn log_likelihood_var(tape: &mut Tape, out: &GeneratorOutput, retained: &RetainedMatrix) -> Result<Var> {
    let mut terms = Vec::new();
    for (ps, row) in out.probs.iter().zip(retained.rows()) {
        for (&p, &b) in ps.iter().zip(&row.bits) {
            let q = if b == 1 { p } else { tape.one_minus(p)? };
            let q = tape.clamp(q, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
            terms.push(tape.ln(q)?);
        }
    }
    if terms.is_empty() {
        return Ok(tape.constant_scalar(0.0)?);
    }
    let cat = tape.concat(&terms)?;
    Ok(tape.sum(cat)?)
}

/// Draws `S_ij ~ Bernoulli(p_ij)`.
pub fn sample_bits<R: Rng + ?Sized>(vectors: &[AdjacencyVector], rng: &mut R) -> Vec<Vec<u8>> {
    vectors
        .iter()
        .map(|v| v.probs.iter().map(|&p| u8::from(rng.gen_bool(p.clamp(0.0, 1.0)))).collect())
        .collect()
}

/// `sum_s min(s - 1, M)` over the sequence.
pub fn expected_edge_steps(n: usize, m: usize) -> usize {
    (1..=n).map(|s| (s - 1).min(m)).sum()
}

/// For every edge of `sub`, the `(rank s, column j)` band cell that carries
/// it, or `None` when the edge lies outside the band. Events on the same
/// node pair share a cell.
pub fn band_cells(sub: &ComputationSubgraph, seq: &NodeSequence, retained: &RetainedMatrix) -> Result<Vec<Option<(usize, usize)>>> {
    sub.edges()
        .iter()
        .map(|e| {
            let (ra, rb) = match (seq.rank(e.src), seq.rank(e.dst)) {
                (Some(a), Some(b)) => (a, b),
                _ => {
                    return Err(Error::Validation(format!(
                        "edge ({}, {}) has an endpoint outside the sequence",
                        e.src, e.dst
                    )))
                }
            };
            let (r, s) = (ra.min(rb), ra.max(rb));
            Ok(retained.rows()[s - 1].positions.iter().position(|&p| p == r).map(|j| (s, j)))
        })
        .collect()
}

/// Per-edge probability under `vectors`; `None` outside the band.
pub fn edge_probabilities(
    vectors: &[AdjacencyVector],
    sub: &ComputationSubgraph,
    seq: &NodeSequence,
    retained: &RetainedMatrix,
) -> Result<Vec<Option<f64>>> {
    let cells = band_cells(sub, seq, retained)?;
    Ok(cells
        .into_iter()
        .map(|c| {
            c.and_then(|(s, j)| {
                vectors
                    .iter()
                    .find(|v| v.index == s)
                    .and_then(|v| v.probs.get(j).copied())
            })
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Emission {
    /// Keep candidates with `p >= threshold`.
    Threshold(f64),
    /// Keep the `k` most probable candidates.
    TopK(usize),
}

impl Default for Emission {
    fn default() -> Self {
        Emission::Threshold(0.5)
    }
}

/// Emission order: descending probability, then newer first, then
/// ascending endpoints. Events on one node pair share a probability, so
/// recency decides which of them a size budget keeps.
pub fn emission_cmp(pa: f64, a: &SubEdge, pb: f64, b: &SubEdge) -> Ordering {
    pb.total_cmp(&pa)
        .then(b.t.total_cmp(&a.t))
        .then(a.src.cmp(&b.src))
        .then(a.dst.cmp(&b.dst))
}

/// In-band candidate indices in [`emission_cmp`] order.
pub fn emission_order(sub: &ComputationSubgraph, probs: &[Option<f64>]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).filter(|&i| probs[i].is_some()).collect();
    let edges = sub.edges();
    idx.sort_by(|&a, &b| {
        emission_cmp(probs[a].unwrap(), &edges[a], probs[b].unwrap(), &edges[b]).then(a.cmp(&b))
    });
    idx
}

/// Builds an explanation from per-edge probabilities (`None` = outside the
/// band, never retained).
pub fn emit_from_probabilities(sub: &ComputationSubgraph, probs: &[Option<f64>], rule: Emission) -> Result<Explanation> {
    if probs.len() != sub.num_edges() {
        return Err(Error::MaskLength {
            expected: sub.num_edges(),
            got: probs.len(),
        });
    }
    let keep: Vec<bool> = match rule {
        Emission::Threshold(th) => probs.iter().map(|p| p.is_some_and(|p| p >= th)).collect(),
        Emission::TopK(k) => {
            let ranked = emission_order(sub, probs);
            if k > ranked.len() {
                warn!("top_k={k} exceeds {} candidates; retaining all", ranked.len());
            }
            let mut keep = vec![false; probs.len()];
            for &i in ranked.iter().take(k) {
                keep[i] = true;
            }
            keep
        }
    };
    let mode = match sub.kind {
        SubgraphKind::Event => GraphMode::Event,
        SubgraphKind::Snapshot { .. } => GraphMode::Snapshot,
    };
    let retained = sub
        .edges()
        .iter()
        .zip(probs)
        .zip(&keep)
        .filter(|(_, k)| **k)
        .map(|((e, p), _)| RetainedEdge {
            src: e.src,
            dst: e.dst,
            t: e.t,
            p: p.expect("kept edges are candidates"),
        })
        .collect();
    Ok(Explanation {
        edge: sub.origin,
        mode,
        retained,
        size_budget: match rule {
            Emission::TopK(k) => Some(k),
            Emission::Threshold(_) => None,
        },
    })
}

pub fn emit_subgraph(
    vectors: &[AdjacencyVector],
    sub: &ComputationSubgraph,
    seq: &NodeSequence,
    retained: &RetainedMatrix,
    rule: Emission,
) -> Result<Explanation> {
    let probs = edge_probabilities(vectors, sub, seq, retained)?;
    emit_from_probabilities(sub, &probs, rule)
}
