use log::debug;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tgx_numkernel::{Adam, AdamConfig, Tape, Var};

use super::{MaskedGraph, Trainable};
use crate::graph::{ComputationSubgraph, DynamicGraph, TargetEdge};
use crate::{Error, Result};

const PROB_FLOOR: f64 = 1e-12;
const NEGATIVE_RETRIES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Leading share of positives (in time order) used for training.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 0.01,
            batch_size: 32,
            train_fraction: 0.7,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: usize,
    /// Mean training loss per epoch.
    pub loss_trace: Vec<f64>,
    pub val_auc: f64,
    pub train_positives: usize,
    pub val_positives: usize,
}

struct Example {
    edge: TargetEdge,
    label: f64,
    context: Vec<ComputationSubgraph>,
}

/// Probability that a random positive outranks a random negative; ties
/// count one half.
pub fn auc(positives: &[f64], negatives: &[f64]) -> Result<f64> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::UndefinedMetric("AUC needs both positive and negative scores".into()));
    }
    let mut all: Vec<(f64, bool)> = positives
        .iter()
        .map(|&s| (s, true))
        .chain(negatives.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // midranks over tie groups
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * all[i..=j].iter().filter(|x| x.1).count() as f64;
        i = j + 1;
    }
    let (p, n) = (positives.len() as f64, negatives.len() as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Observed interactions in time order.
fn positives(graph: &DynamicGraph) -> Vec<TargetEdge> {
    match graph {
        DynamicGraph::Event(g) => g.events().iter().map(|e| TargetEdge::new(e.src, e.dst, e.t)).collect(),
        DynamicGraph::Snapshot(g) => g
            .snapshots()
            .iter()
            .enumerate()
            .skip(1)
            .flat_map(|(i, s)| s.edges().iter().map(move |&(u, v)| TargetEdge::new(u, v, (i + 1) as f64)))
            .collect(),
    }
}

fn is_observed(graph: &DynamicGraph, edge: &TargetEdge) -> bool {
    match graph {
        DynamicGraph::Snapshot(g) => g.snapshot(edge.snapshot()).is_some_and(|s| {
            let pair = (edge.src.min(edge.dst), edge.src.max(edge.dst));
            s.edges().binary_search(&pair).is_ok()
        }),
        DynamicGraph::Event(g) => {
            let lo = g.count_before(edge.t);
            g.events()[lo..]
                .iter()
                .take_while(|e| e.t == edge.t)
                .any(|e| (e.src, e.dst) == (edge.src, edge.dst) || (e.dst, e.src) == (edge.src, edge.dst))
        }
    }
}

/// Same source and time, destination drawn uniformly among nodes that do
/// not form an observed interaction.
fn sample_negative<R: Rng>(graph: &DynamicGraph, pos: &TargetEdge, rng: &mut R) -> Result<TargetEdge> {
    let n = graph.num_nodes();
    for _ in 0..NEGATIVE_RETRIES {
        let dst = rng.gen_range(0..n);
        if dst == pos.src {
            continue;
        }
        let cand = TargetEdge::new(pos.src, dst, pos.t);
        if !is_observed(graph, &cand) {
            return Ok(cand);
        }
    }
    Err(Error::Degenerate(format!(
        "no negative destination found for source {} at t={}",
        pos.src, pos.t
    )))
}

fn example<M: Trainable + ?Sized>(model: &M, graph: &DynamicGraph, edge: TargetEdge, label: f64) -> Result<Example> {
    Ok(Example {
        edge,
        label,
        context: model.context(graph, &edge)?,
    })
}

fn logits<M: Trainable + ?Sized>(model: &M, tape: &mut Tape, params: &[Var], batch: &[&Example]) -> Result<Vec<Var>> {
    let items: Vec<(TargetEdge, Vec<MaskedGraph<'_>>)> = batch
        .iter()
        .map(|ex| (ex.edge, ex.context.iter().map(MaskedGraph::full).collect()))
        .collect();
    model.forward_batch(tape, params, &items)
}

fn scores<M: Trainable + ?Sized>(model: &M, examples: &[Example], batch: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(batch.max(1)) {
        let mut tape = Tape::new();
        let params = model.bind(&mut tape, false);
        let refs: Vec<&Example> = chunk.iter().collect();
        for l in logits(model, &mut tape, &params, &refs)? {
            out.push(tape.scalar(l));
        }
    }
    Ok(out)
}

/// Binary cross-entropy link-prediction training with Adam.
///
/// Positives are the graph's interactions in time order; the leading
/// `train_fraction` trains, the rest validates. Each training positive is
/// paired with a freshly drawn negative every epoch; validation negatives
/// are drawn once.
pub fn train_target<M: Trainable + ?Sized>(model: &mut M, graph: &DynamicGraph, cfg: &TrainConfig) -> Result<TrainReport> {
    if graph.mode() != model.mode() {
        return Err(Error::ModeMismatch {
            expected: model.mode().as_str(),
            got: graph.mode().as_str(),
        });
    }
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) || !(cfg.lr > 0.0) || cfg.batch_size == 0 {
        return Err(Error::Validation(
            "train_fraction must lie in (0, 1), lr must be positive and batch_size at least 1".into(),
        ));
    }
    if graph.num_nodes() < 3 {
        return Err(Error::Degenerate("fewer than three nodes leaves no candidate negatives".into()));
    }
    let pos = positives(graph);
    let split = ((pos.len() as f64) * cfg.train_fraction).floor() as usize;
    if split == 0 || split == pos.len() {
        return Err(Error::Degenerate(format!(
            "{} positives cannot be split into non-empty train and validation parts",
            pos.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let train_pos: Vec<Example> = pos[..split]
        .iter()
        .map(|&e| example(model, graph, e, 1.0))
        .collect::<Result<_>>()?;
    let val_pos: Vec<Example> = pos[split..]
        .iter()
        .map(|&e| example(model, graph, e, 1.0))
        .collect::<Result<_>>()?;
    let val_neg: Vec<Example> = pos[split..]
        .iter()
        .map(|e| {
            let neg = sample_negative(graph, e, &mut rng)?;
            example(model, graph, neg, 0.0)
        })
        .collect::<Result<_>>()?;

    let names: Vec<(String, usize)> = model.named_params().into_iter().map(|(n, t)| (n, t.len())).collect();
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr), names);
    let mut loss_trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let negs: Vec<Example> = train_pos
            .iter()
            .map(|ex| {
                let neg = sample_negative(graph, &ex.edge, &mut rng)?;
                example(model, graph, neg, 0.0)
            })
            .collect::<Result<_>>()?;
        let mut order: Vec<&Example> = train_pos.iter().chain(negs.iter()).collect();
        order.shuffle(&mut rng);

        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let params = model.bind(&mut tape, true);
            let ls = logits(model, &mut tape, &params, batch)?;
            let mut terms = Vec::with_capacity(batch.len());
            for (l, ex) in ls.iter().zip(batch) {
                let p = tape.sigmoid(*l)?;
                let p = if ex.label > 0.5 { p } else { tape.one_minus(p)? };
                let p = tape.clamp(p, PROB_FLOOR, 1.0 - PROB_FLOOR)?;
                terms.push(tape.ln(p)?);
            }
            let cat = tape.concat(&terms)?;
            let s = tape.sum(cat)?;
            let loss = tape.mul_const(s, -1.0 / batch.len() as f64)?;
            total += tape.scalar(loss) * batch.len() as f64;

            let grads = tape.backward(loss)?;
            let gs: Vec<Vec<f64>> = params.iter().map(|v| grads.wrt(&tape, *v)).collect();
            let grad_refs: Vec<&[f64]> = gs.iter().map(Vec::as_slice).collect();
            let mut slots = model.params_mut();
            adam.step(&mut slots, &grad_refs)?;
        }
        let mean = total / order.len() as f64;
        if !mean.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: epoch + 1,
                detail: "training loss".into(),
            });
        }
        debug!("epoch {}: loss {mean:.5}", epoch + 1);
        loss_trace.push(mean);
    }

    let sp = scores(model, &val_pos, cfg.batch_size)?;
    let sn = scores(model, &val_neg, cfg.batch_size)?;
    Ok(TrainReport {
        epochs: cfg.epochs,
        loss_trace,
        val_auc: auc(&sp, &sn)?,
        train_positives: split,
        val_positives: pos.len() - split,
    })
}
