//! Optimization of the generator against a target model, and the
//! brute-force oracle it is judged against.

use std::time::Instant;

use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tgx_numkernel::{Adam, AdamConfig, Tape, Var};

use crate::generator::{
    band_cells, emission_cmp, sample_inputs, Emission, GeneratorArch, GeneratorModel, GeneratorVars, PROB_CLAMP,
};
use crate::graph::{ComputationSubgraph, DynamicGraph, Explanation, GraphMode, RetainedEdge, TargetEdge};
use crate::metrics::{aufsc, default_grid, sparsity_sweep, Instance};
use crate::models::{sigmoid, MaskedGraph, Prediction, TargetModel};
use crate::sequencer::{
    bfs_sequence, build_retained_matrix, estimate_m_with, random_sequence, temporal_sequence, BandRule, NodeSequence,
    RetainedMatrix, DEFAULT_TEMPORAL_BAND,
};
use crate::{Error, Result};

/// Largest candidate count the oracle enumerates.
pub const ORACLE_MAX_CANDIDATES: usize = 20;

/// Which subgraph the fidelity term scores.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FidelitySign {
    /// Minimize `|f(explanation) - y|`.
    #[default]
    Align,
    /// Maximize `|f(complement) - y|`.
    Diverge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainerConfig {
    pub lambda_size: f64,
    pub lambda_weight: f64,
    pub fidelity: FidelitySign,
    pub max_epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub emission: Emission,
    pub use_bfs: bool,
    pub use_time: bool,
    pub use_sparsity: bool,
    /// Band width cap for temporal sequences.
    pub temporal_band: usize,
    pub grid: Vec<f64>,
    pub seed: u64,
}

impl Default for ExplainerConfig {
    fn default() -> Self {
        Self {
            lambda_size: 5e-3,
            lambda_weight: 100.0,
            fidelity: FidelitySign::Align,
            max_epochs: 50,
            patience: 10,
            lr: 0.06,
            emission: Emission::default(),
            use_bfs: true,
            use_time: true,
            use_sparsity: true,
            temporal_band: DEFAULT_TEMPORAL_BAND,
            grid: default_grid(),
            seed: 0,
        }
    }
}

impl ExplainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Validation("max_epochs and patience must be at least 1".into()));
        }
        if !(self.lambda_size >= 0.0) || !(self.lambda_weight >= 0.0) || !self.lambda_size.is_finite() || !self.lambda_weight.is_finite() {
            return Err(Error::Validation("loss weights must be finite and non-negative".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Validation("learning rate must be positive".into()));
        }
        if self.temporal_band == 0 {
            return Err(Error::Validation("temporal band must be at least 1".into()));
        }
        match self.emission {
            Emission::Threshold(t) if !(0.0..=1.0).contains(&t) => {
                return Err(Error::Validation(format!("threshold {t} outside [0, 1]")))
            }
            Emission::TopK(0) => return Err(Error::Validation("top_k must be at least 1".into())),
            _ => {}
        }
        if self.grid.len() < 2 {
            return Err(Error::Validation("the sparsity grid needs at least two points".into()));
        }
        Ok(())
    }
}

/// `lambda_size * size + lambda_weight * |y_hat - y|` (align) or with the
/// fidelity term subtracted (diverge); `use_sparsity = false` drops the
/// size term.
pub fn loss_value(size: f64, y_hat: f64, y: f64, cfg: &ExplainerConfig) -> f64 {
    let size_term = if cfg.use_sparsity { cfg.lambda_size * size } else { 0.0 };
    let fid = cfg.lambda_weight * (y_hat - y).abs();
    match cfg.fidelity {
        FidelitySign::Align => size_term + fid,
        FidelitySign::Diverge => size_term - fid,
    }
}

/// Tape version of [`loss_value`]; `size` and `logit` are `[1]` vars and
/// `y_hat = sigmoid(logit)`.
pub fn loss_var(tape: &mut Tape, size: Var, logit: Var, original: Prediction, cfg: &ExplainerConfig) -> Result<Var> {
    let dev = prediction_gap(tape, logit, original.logit)?;
    let sign = match cfg.fidelity {
        FidelitySign::Align => 1.0,
        FidelitySign::Diverge => -1.0,
    };
    let fid = tape.mul_const(dev, sign * cfg.lambda_weight)?;
    if !cfg.use_sparsity {
        return Ok(fid);
    }
    let s = tape.mul_const(size, cfg.lambda_size)?;
    Ok(tape.add(s, fid)?)
}

/// `|sigmoid(z) - sigmoid(z0)|` from the logits. Subtracting the two
/// probabilities directly cancels to an ulp of `y_hat`; instead
/// `sigmoid(a) - sigmoid(b) = sigmoid(b) sigmoid(-a) expm1(a - b)` with the
/// roles picked so the `expm1` argument is non-positive.
fn prediction_gap(tape: &mut Tape, logit: Var, z0: f64) -> Result<Var> {
    let z = tape.scalar(logit);
    let neg_z = tape.mul_const(logit, -1.0)?;
    let (high, low, gap) = if z >= z0 {
        // sigmoid(z) - sigmoid(z0) = sigmoid(z) sigmoid(-z0) (-expm1(z0 - z))
        let high = tape.sigmoid(logit)?;
        let low = tape.constant_scalar(sigmoid(-z0))?;
        let arg = tape.add_const(neg_z, z0)?;
        (high, low, tape.expm1(arg)?)
    } else {
        // sigmoid(z0) - sigmoid(z) = sigmoid(z0) sigmoid(-z) (-expm1(z - z0))
        let high = tape.constant_scalar(sigmoid(z0))?;
        let low = tape.sigmoid(neg_z)?;
        let arg = tape.add_const(logit, -z0)?;
        (high, low, tape.expm1(arg)?)
    };
    let prod = tape.mul(high, low)?;
    let signed = tape.mul(prod, gap)?;
    Ok(tape.mul_const(signed, -1.0)?)
}

/// Optimization record for one context graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartRun {
    /// Index of the context graph.
    pub graph: usize,
    pub nodes: usize,
    pub band_width: usize,
    pub edge_steps: usize,
    pub loss_trace: Vec<f64>,
    pub aufsc_trace: Vec<f64>,
    /// 1-based; 0 when the graph had no candidate edges.
    pub best_epoch: usize,
    /// Best-epoch probability per edge; `None` outside the band.
    pub edge_probs: Vec<Option<f64>>,
}

impl PartRun {
    pub fn epochs(&self) -> usize {
        self.loss_trace.len()
    }

    pub fn best_aufsc(&self) -> Option<f64> {
        self.best_epoch.checked_sub(1).map(|i| self.aufsc_trace[i])
    }
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub prepare: f64,
    pub optimize: f64,
    pub evaluate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRun {
    pub edge: TargetEdge,
    pub mode: GraphMode,
    pub original: Prediction,
    pub parts: Vec<PartRun>,
    pub explanation: Explanation,
    /// Sweep-ready probabilities per context graph (0 outside the band).
    pub probabilities: Vec<Option<Vec<f64>>>,
    pub timing: StageTiming,
    pub duration_secs: f64,
}

impl ExplanationRun {
    /// Epochs executed, summed over parts.
    pub fn epochs(&self) -> usize {
        self.parts.iter().map(PartRun::epochs).sum()
    }
}

fn sequence_for(sub: &ComputationSubgraph, cfg: &ExplainerConfig, rng: &mut ChaCha8Rng) -> Result<NodeSequence> {
    Ok(match sub.kind {
        crate::graph::SubgraphKind::Event if cfg.use_time => temporal_sequence(sub),
        crate::graph::SubgraphKind::Snapshot { .. } if cfg.use_bfs => bfs_sequence(sub, sub.origin.src)?,
        _ => random_sequence(sub, rng),
    })
}

/// Soft mask over `sub`'s edges from per-edge probability vars; edges
/// outside the band read `outside`.
fn soft_mask(tape: &mut Tape, probs: &[Option<Var>], outside: f64, complement: bool) -> Result<Var> {
    let mut parts = Vec::with_capacity(probs.len());
    for p in probs {
        let v = match p {
            Some(p) if complement => tape.one_minus(*p)?,
            Some(p) => *p,
            None => tape.constant_scalar(outside)?,
        };
        parts.push(v);
    }
    Ok(tape.concat(&parts)?)
}

/// Emits the explanation over all context graphs jointly.
pub fn emit_joint(
    edge: TargetEdge,
    mode: GraphMode,
    context: &[ComputationSubgraph],
    probs: &[Option<Vec<Option<f64>>>],
    rule: Emission,
) -> Result<Explanation> {
    let mut picked: Vec<(usize, usize)> = Vec::new();
    match rule {
        Emission::Threshold(th) => {
            for (g, p) in probs.iter().enumerate() {
                if let Some(p) = p {
                    for (i, pi) in p.iter().enumerate() {
                        if pi.is_some_and(|x| x >= th) {
                            picked.push((g, i));
                        }
                    }
                }
            }
        }
        Emission::TopK(k) => {
            let mut in_band: Vec<(usize, usize, f64)> = Vec::new();
            for (g, p) in probs.iter().enumerate() {
                if let Some(p) = p {
                    in_band.extend(p.iter().enumerate().filter_map(|(i, x)| x.map(|x| (g, i, x))));
                }
            }
            in_band.sort_by(|a, b| {
                emission_cmp(a.2, &context[a.0].edges()[a.1], b.2, &context[b.0].edges()[b.1])
                    .then((a.0, a.1).cmp(&(b.0, b.1)))
            });
            if k > in_band.len() {
                warn!("top_k={k} exceeds {} candidates; retaining all", in_band.len());
            }
            picked.extend(in_band.into_iter().take(k).map(|(g, i, _)| (g, i)));
            picked.sort_unstable();
        }
    }
    let retained = picked
        .into_iter()
        .map(|(g, i)| {
            let e = context[g].edges()[i];
            RetainedEdge {
                src: e.src,
                dst: e.dst,
                t: e.t,
                p: probs[g].as_ref().expect("picked graph")[i].expect("in band"),
            }
        })
        .collect();
    Ok(Explanation {
        edge,
        mode,
        retained,
        size_budget: match rule {
            Emission::TopK(k) => Some(k),
            Emission::Threshold(_) => None,
        },
    })
}

fn sweep_ready(probs: &[Option<Vec<Option<f64>>>]) -> Vec<Option<Vec<f64>>> {
    probs
        .iter()
        .map(|p| p.as_ref().map(|v| v.iter().map(|x| x.unwrap_or(0.0)).collect()))
        .collect()
}

/// The prepared optimization problem for one context graph: its node
/// sequence, band layout, frozen edge-level inputs and target value.
pub struct PartProblem<'a> {
    model: &'a dyn TargetModel,
    edge: TargetEdge,
    context: &'a [ComputationSubgraph],
    graph: usize,
    /// Original prediction; its probability is `y`.
    pub original: Prediction,
    pub seq: NodeSequence,
    pub retained: RetainedMatrix,
    /// Band cell per edge of the explained graph.
    pub cells: Vec<Option<(usize, usize)>>,
    /// Distinct candidate cells; each counts once towards the size term.
    pub distinct: Vec<(usize, usize)>,
    pub xs: Vec<Vec<f64>>,
    generator_seed: u64,
}

/// One recorded evaluation of the explainer loss.
pub struct LossRecord {
    pub loss: Var,
    pub generator: GeneratorVars,
    pub edge_probs: Vec<Option<Var>>,
    pub edge_steps: usize,
}

impl<'a> PartProblem<'a> {
    pub fn new(
        model: &'a dyn TargetModel,
        edge: TargetEdge,
        context: &'a [ComputationSubgraph],
        graph: usize,
        original: Prediction,
        cfg: &ExplainerConfig,
        seed: u64,
    ) -> Result<Self> {
        let sub = context
            .get(graph)
            .ok_or_else(|| Error::Validation(format!("context graph {graph} does not exist")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seq = sequence_for(sub, cfg, &mut rng)?;
        let m = estimate_m_with(&seq, cfg.temporal_band);
        let retained = build_retained_matrix(sub, &seq, m, BandRule::Sliding)?;
        let cells = band_cells(sub, &seq, &retained)?;
        let generator_seed = rng.gen();
        let xs = sample_inputs(&retained, rng.gen());
        let mut distinct: Vec<(usize, usize)> = cells.iter().flatten().copied().collect();
        distinct.sort_unstable();
        distinct.dedup();
        Ok(Self {
            model,
            edge,
            context,
            graph,
            original,
            seq,
            retained,
            cells,
            distinct,
            xs,
            generator_seed,
        })
    }

    /// A freshly initialized generator sized for this problem.
    pub fn generator(&self) -> Result<GeneratorModel> {
        GeneratorModel::new(GeneratorArch::new(self.retained.m()), self.generator_seed)
    }

    /// Records the loss of `gen` on `tape`.
    pub fn record(&self, tape: &mut Tape, gen: &GeneratorModel, cfg: &ExplainerConfig) -> Result<LossRecord> {
        let gvars = gen.bind(tape, true);
        let out = gvars.forward(tape, &self.retained, &self.xs)?;
        let edge_probs: Vec<Option<Var>> = self.cells.iter().map(|c| c.map(|(s, j)| out.probs[s - 1][j])).collect();
        let (outside, complement) = match cfg.fidelity {
            FidelitySign::Align => (0.0, false),
            FidelitySign::Diverge => (1.0, true),
        };
        let mask = soft_mask(tape, &edge_probs, outside, complement)?;
        let size_terms: Vec<Var> = self.distinct.iter().map(|&(s, j)| out.probs[s - 1][j]).collect();
        let size = if size_terms.is_empty() {
            tape.constant_scalar(0.0)?
        } else {
            let cat = tape.concat(&size_terms)?;
            tape.sum(cat)?
        };
        let params = self.model.bind(tape, false);
        let views: Vec<MaskedGraph<'_>> = self
            .context
            .iter()
            .enumerate()
            .map(|(h, s)| MaskedGraph {
                sub: s,
                mask: (h == self.graph).then_some(mask),
            })
            .collect();
        let logit = self.model.forward(tape, &params, &self.edge, &views)?;
        let loss = loss_var(tape, size, logit, self.original, cfg)?;
        Ok(LossRecord {
            loss,
            generator: gvars,
            edge_probs,
            edge_steps: out.edge_steps,
        })
    }

    /// Loss value of `gen`.
    pub fn loss(&self, gen: &GeneratorModel, cfg: &ExplainerConfig) -> Result<f64> {
        let mut tape = Tape::new();
        let rec = self.record(&mut tape, gen, cfg)?;
        Ok(tape.scalar(rec.loss))
    }
}

/// Optimizes one generator for `context[g]`, keeping the other context
/// graphs intact.
#[allow(clippy::too_many_arguments)]
fn optimize_part(
    model: &dyn TargetModel,
    edge: &TargetEdge,
    context: &[ComputationSubgraph],
    g: usize,
    original: Prediction,
    cfg: &ExplainerConfig,
    seed: u64,
    timing: &mut StageTiming,
) -> Result<PartRun> {
    let start = Instant::now();
    let problem = PartProblem::new(model, *edge, context, g, original, cfg, seed)?;
    let mut gen = problem.generator()?;
    let names: Vec<(String, usize)> = gen.named_params().into_iter().map(|(n, t)| (n, t.len())).collect();
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr), names);
    let inst = Instance::new(model, *edge, context);
    timing.prepare += start.elapsed().as_secs_f64();

    let mut part = PartRun {
        graph: g,
        nodes: problem.seq.len(),
        band_width: problem.retained.m(),
        edge_steps: 0,
        loss_trace: Vec::new(),
        aufsc_trace: Vec::new(),
        best_epoch: 0,
        edge_probs: vec![None; context[g].num_edges()],
    };
    let mut best = f64::NEG_INFINITY;
    let mut best_loss = f64::INFINITY;
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        let t_opt = Instant::now();
        let mut tape = Tape::new();
        let rec = problem.record(&mut tape, &gen, cfg)?;
        part.edge_steps = rec.edge_steps;
        let loss_val = tape.scalar(rec.loss);
        if !loss_val.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                detail: format!("explainer loss for context graph {g}"),
            });
        }
        let probs: Vec<Option<f64>> = rec.edge_probs.iter().map(|v| v.map(|v| tape.scalar(v))).collect();
        let grads = tape.backward(rec.loss)?;
        let gs: Vec<Vec<f64>> = rec.generator.vars().iter().map(|v| grads.wrt(&tape, *v)).collect();
        let grad_refs: Vec<&[f64]> = gs.iter().map(Vec::as_slice).collect();
        let mut slots = gen.params_mut();
        adam.step(&mut slots, &grad_refs)?;
        timing.optimize += t_opt.elapsed().as_secs_f64();

        let t_eval = Instant::now();
        let mut sweep_probs: Vec<Option<Vec<f64>>> = vec![None; context.len()];
        sweep_probs[g] = Some(probs.iter().map(|p| p.unwrap_or(0.0)).collect());
        let score = aufsc(&sparsity_sweep(&inst, &sweep_probs, &cfg.grid)?)?;
        timing.evaluate += t_eval.elapsed().as_secs_f64();
        debug!("graph {g} epoch {epoch}: loss {loss_val:.6} aufsc {score:.6}");

        part.loss_trace.push(loss_val);
        part.aufsc_trace.push(score);
        // equal AUFSC keeps the lower-loss epoch but still counts as stale
        if score > best || (score == best && loss_val < best_loss) {
            part.best_epoch = epoch;
            part.edge_probs = probs;
            best_loss = loss_val;
        }
        if score > best {
            best = score;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok(part)
}

/// Seed of the optimization for context graph `g`.
pub fn part_seed(cfg: &ExplainerConfig, g: usize) -> u64 {
    cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(g as u64)
}

fn run(
    model: &dyn TargetModel,
    edge: &TargetEdge,
    context: &[ComputationSubgraph],
    cfg: &ExplainerConfig,
    require_candidates: bool,
) -> Result<ExplanationRun> {
    cfg.validate()?;
    let start = Instant::now();
    let mut timing = StageTiming::default();
    if require_candidates && context.iter().all(|s| s.num_edges() == 0) {
        return Err(Error::EmptyNeighborhood {
            src: edge.src,
            dst: edge.dst,
            t: edge.t,
        });
    }
    let inst = Instance::new(model, *edge, context);
    let original = inst.original()?;
    let mut parts = Vec::new();
    let mut joint: Vec<Option<Vec<Option<f64>>>> = vec![None; context.len()];
    for (g, sub) in context.iter().enumerate() {
        if sub.num_edges() == 0 {
            joint[g] = Some(Vec::new());
            continue;
        }
        let part = optimize_part(model, edge, context, g, original, cfg, part_seed(cfg, g), &mut timing)?;
        joint[g] = Some(part.edge_probs.clone());
        parts.push(part);
    }
    let explanation = emit_joint(*edge, model.mode(), context, &joint, cfg.emission)?;
    Ok(ExplanationRun {
        edge: *edge,
        mode: model.mode(),
        original,
        parts,
        explanation,
        probabilities: sweep_ready(&joint),
        timing,
        duration_secs: start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE),
    })
}

fn expect_mode(model: &dyn TargetModel, graph: &DynamicGraph, mode: GraphMode) -> Result<()> {
    for got in [model.mode(), graph.mode()] {
        if got != mode {
            return Err(Error::ModeMismatch {
                expected: mode.as_str(),
                got: got.as_str(),
            });
        }
    }
    Ok(())
}

/// Explains an event-graph prediction over the model's event neighborhood.
pub fn explain_event(
    model: &dyn TargetModel,
    graph: &DynamicGraph,
    edge: &TargetEdge,
    cfg: &ExplainerConfig,
) -> Result<ExplanationRun> {
    expect_mode(model, graph, GraphMode::Event)?;
    let context = model.context(graph, edge)?;
    run(model, edge, &context, cfg, true)
}

/// Explains a snapshot-graph prediction: one optimization per context
/// snapshot, explanations united with their snapshot tags.
pub fn explain_snapshot(
    model: &dyn TargetModel,
    graph: &DynamicGraph,
    edge: &TargetEdge,
    cfg: &ExplainerConfig,
) -> Result<ExplanationRun> {
    expect_mode(model, graph, GraphMode::Snapshot)?;
    let context = model.context(graph, edge)?;
    run(model, edge, &context, cfg, false)
}

/// Dispatches on the graph's mode.
pub fn explain(model: &dyn TargetModel, graph: &DynamicGraph, edge: &TargetEdge, cfg: &ExplainerConfig) -> Result<ExplanationRun> {
    match graph.mode() {
        GraphMode::Event => explain_event(model, graph, edge, cfg),
        GraphMode::Snapshot => explain_snapshot(model, graph, edge, cfg),
    }
}

/// Runs the explainer on precomputed context graphs.
pub fn explain_context(
    model: &dyn TargetModel,
    edge: &TargetEdge,
    context: &[ComputationSubgraph],
    cfg: &ExplainerConfig,
) -> Result<ExplanationRun> {
    run(model, edge, context, cfg, model.mode() == GraphMode::Event)
}

/// Uniform random edge probabilities: the baseline explainer.
pub fn random_probabilities(context: &[ComputationSubgraph], seed: u64) -> Vec<Option<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    context
        .iter()
        .map(|s| Some((0..s.num_edges()).map(|_| rng.gen::<f64>()).collect()))
        .collect()
}

/// `-ln f(G_sub)[y]` with the probability clamped away from 0.
pub fn cross_entropy(pred: &Prediction, class: u8) -> f64 {
    -pred.class_probability(class).clamp(PROB_CLAMP, 1.0).ln()
}

/// `H(Y) - H(Y | G = G_sub)`, where `Y` follows the original prediction
/// and the conditional term is the cross-entropy of the original class
/// under `f(G_sub)`.
pub fn mutual_information(original: &Prediction, sub: &Prediction) -> f64 {
    let p = original.probability.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let h = -(p * p.ln() + (1.0 - p) * (1.0 - p).ln());
    h - cross_entropy(sub, original.class())
}

/// A subset of candidates, as indices into [`oracle_candidates`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSubset {
    pub members: Vec<usize>,
    pub prediction: Prediction,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub explanation: Explanation,
    pub objective: f64,
    pub original: Prediction,
    pub subsets_evaluated: usize,
}

/// Candidate `(graph, edge)` pairs in lexicographic `(src, dst, t)` order.
pub fn oracle_candidates(context: &[ComputationSubgraph]) -> Vec<(usize, usize)> {
    let mut c: Vec<(usize, usize)> = context
        .iter()
        .enumerate()
        .flat_map(|(g, s)| (0..s.num_edges()).map(move |i| (g, i)))
        .collect();
    c.sort_by(|&(ga, ia), &(gb, ib)| {
        let (a, b) = (context[ga].edges()[ia], context[gb].edges()[ib]);
        (a.src, a.dst)
            .cmp(&(b.src, b.dst))
            .then(a.t.total_cmp(&b.t))
            .then((ga, ia).cmp(&(gb, ib)))
    });
    c
}

/// Subsets of `0..n` with at most `k` members: by size, then
/// lexicographically.
fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, size: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == size {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, size, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    for size in 0..=k.min(n) {
        rec(0, n, size, &mut Vec::new(), &mut out);
    }
    out
}

const ORACLE_BATCH: usize = 64;

/// Cross-entropy of every subset of at most `k_sub` candidates, kept alone
/// (all other edges hard-deleted).
pub fn score_subsets(inst: &Instance<'_>, k_sub: usize, max_candidates: usize) -> Result<(Prediction, Vec<ScoredSubset>)> {
    let cands = oracle_candidates(inst.context);
    if cands.len() > max_candidates {
        return Err(Error::TooManyCandidates {
            count: cands.len(),
            max: max_candidates,
        });
    }
    let original = inst.original()?;
    let class = original.class();
    let all = subsets(cands.len(), k_sub);
    let mut scored = Vec::with_capacity(all.len());
    for chunk in all.chunks(ORACLE_BATCH) {
        let queries: Vec<Vec<Vec<bool>>> = chunk
            .iter()
            .map(|members| {
                let mut keep: Vec<Vec<bool>> = inst.context.iter().map(|s| vec![false; s.num_edges()]).collect();
                for &m in members {
                    let (g, i) = cands[m];
                    keep[g][i] = true;
                }
                keep
            })
            .collect();
        for (members, pred) in chunk.iter().zip(inst.predict_kept(&queries)?) {
            scored.push(ScoredSubset {
                members: members.clone(),
                prediction: pred,
                objective: cross_entropy(&pred, class),
            });
        }
    }
    Ok((original, scored))
}

/// The subset of at most `k_sub` candidates minimizing cross-entropy of
/// the original class; ties go to the smaller, then lexicographically
/// earlier subset.
pub fn brute_force_oracle(inst: &Instance<'_>, k_sub: usize, max_candidates: usize) -> Result<OracleResult> {
    let (original, scored) = score_subsets(inst, k_sub, max_candidates)?;
    // enumeration order already encodes the tie-break
    let best = scored
        .iter()
        .fold(None::<&ScoredSubset>, |acc, s| match acc {
            Some(b) if s.objective >= b.objective => Some(b),
            _ => Some(s),
        })
        .expect("the empty subset is always enumerated");
    let cands = oracle_candidates(inst.context);
    let mut picked: Vec<(usize, usize)> = best.members.iter().map(|&m| cands[m]).collect();
    picked.sort_unstable();
    let retained = picked
        .into_iter()
        .map(|(g, i)| {
            let e = inst.context[g].edges()[i];
            RetainedEdge {
                src: e.src,
                dst: e.dst,
                t: e.t,
                p: 1.0,
            }
        })
        .collect();
    Ok(OracleResult {
        explanation: Explanation {
            edge: inst.edge,
            mode: inst.model.mode(),
            retained,
            size_budget: Some(k_sub),
        },
        objective: best.objective,
        original,
        subsets_evaluated: scored.len(),
    })
}

/// Cross-entropy of keeping only `expl`'s edges.
pub fn explanation_cross_entropy(inst: &Instance<'_>, expl: &Explanation) -> Result<f64> {
    let sel = inst.selection(expl)?;
    let preds = inst.predict_kept(&[inst.context.iter().map(|s| vec![true; s.num_edges()]).collect(), sel])?;
    Ok(cross_entropy(&preds[1], preds[0].class()))
}
