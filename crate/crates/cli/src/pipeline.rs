//! Instance selection and the batch explain / evaluate / sweep drivers.

use std::thread;

use anyhow::{anyhow, bail, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tgx_core::explainer::{explain, ExplainerConfig};
use tgx_core::graph::{DynamicGraph, TargetEdge};
use tgx_core::metrics::{best_fid_plus, evaluate, CohesionNorm, FidelityCurve, Instance};
use tgx_core::models::TargetModel;

use crate::files::{InstanceMetrics, InstanceRun, MetricsFile, SweepFile, SweepRow};
use crate::UsageError;

/// Leading share of the timeline used for training; targets are sampled
/// from the remainder.
pub const TRAIN_FRACTION: f64 = 0.7;

/// Parses `SRC,DST,T` against the graph's input labels. For snapshot
/// graphs `T` is the 1-based snapshot index.
pub fn resolve_edge(graph: &DynamicGraph, spec: &str) -> Result<(TargetEdge, [String; 2])> {
    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
    let [src, dst, t] = parts[..] else {
        return Err(UsageError(format!("edge `{spec}` is not SRC,DST,T")).into());
    };
    let t: f64 = t
        .parse()
        .map_err(|_| UsageError(format!("edge `{spec}`: cannot parse time `{t}`")))?;
    let id = |label: &str| graph.node_id(label).ok_or_else(|| anyhow!("node `{label}` does not occur in the data"));
    Ok((TargetEdge::new(id(src)?, id(dst)?, t), [src.to_string(), dst.to_string()]))
}

pub fn labels_of(graph: &DynamicGraph, edge: &TargetEdge) -> [String; 2] {
    [graph.label(edge.src), graph.label(edge.dst)]
}

/// Observed interactions after the training share, in time order.
pub fn validation_edges(graph: &DynamicGraph) -> Vec<TargetEdge> {
    let all: Vec<TargetEdge> = match graph {
        DynamicGraph::Event(g) => g.events().iter().map(|e| TargetEdge::new(e.src, e.dst, e.t)).collect(),
        DynamicGraph::Snapshot(g) => g
            .snapshots()
            .iter()
            .enumerate()
            .flat_map(|(i, s)| s.edges().iter().map(move |&(u, v)| TargetEdge::new(u, v, (i + 1) as f64)))
            .collect(),
    };
    let start = (all.len() as f64 * TRAIN_FRACTION).floor() as usize;
    all[start..].to_vec()
}

/// Up to `count` seeded draws from the validation range whose context
/// holds at least `min_candidates` edges (and at least one).
pub fn sample_targets(
    model: &dyn TargetModel,
    graph: &DynamicGraph,
    count: usize,
    min_candidates: usize,
    seed: u64,
) -> Result<Vec<TargetEdge>> {
    if count == 0 {
        return Err(UsageError("the sampled instance count must be at least 1".into()).into());
    }
    let mut pool = validation_edges(graph);
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut picked = Vec::with_capacity(count);
    for edge in pool {
        let context = model.context(graph, &edge)?;
        let candidates: usize = context.iter().map(|s| s.num_edges()).sum();
        if candidates >= min_candidates.max(1) {
            picked.push(edge);
            if picked.len() == count {
                break;
            }
        }
    }
    if picked.is_empty() {
        bail!("no validation-range interaction has at least {} candidate edges", min_candidates.max(1));
    }
    Ok(picked)
}

/// Runs `job` over `items` on up to `workers` threads, keeping input order.
fn fan_out<T: Sync, R: Send>(items: &[T], workers: usize, job: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(&job).collect();
    }
    let mut slots: Vec<Option<Result<R>>> = (0..items.len()).map(|_| None).collect();
    thread::scope(|scope| {
        let job = &job;
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                scope.spawn(move || {
                    items
                        .iter()
                        .enumerate()
                        .skip(w)
                        .step_by(workers)
                        .map(|(i, item)| (i, job(item)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("every slot filled")).collect()
}

pub fn explain_all(
    model: &dyn TargetModel,
    graph: &DynamicGraph,
    targets: &[TargetEdge],
    cfg: &ExplainerConfig,
    workers: usize,
) -> Result<Vec<InstanceRun>> {
    fan_out(targets, workers, |edge| {
        let run = explain(model, graph, edge, cfg)?;
        Ok(InstanceRun {
            labels: labels_of(graph, edge),
            run,
        })
    })
}

/// Time scale for cohesiveness: the span of the data's timeline.
pub fn default_delta_t(graph: &DynamicGraph) -> f64 {
    let span = match graph {
        DynamicGraph::Event(g) => g.time_span().map_or(0.0, |(a, b)| b - a),
        DynamicGraph::Snapshot(g) => g.num_snapshots() as f64,
    };
    if span > 0.0 {
        span
    } else {
        1.0
    }
}

pub fn evaluate_runs(
    model: &dyn TargetModel,
    graph: &DynamicGraph,
    runs: &[InstanceRun],
    grid: &[f64],
    delta_t: f64,
    norm: CohesionNorm,
    workers: usize,
) -> Result<MetricsFile> {
    if runs.is_empty() {
        bail!("the run file holds no instances");
    }
    let reports = fan_out(runs, workers, |r| {
        let context = model.context(graph, &r.run.edge)?;
        let inst = Instance::new(model, r.run.edge, &context);
        let report = evaluate(&inst, &r.run.explanation, &r.run.probabilities, grid, delta_t, norm)?;
        let curve = FidelityCurve::new(grid.to_vec(), report.curve.iter().map(|p| p[1]).collect(), 1)?;
        Ok((report, curve))
    })?;
    let n = runs.len() as f64;
    let curves: Vec<FidelityCurve> = reports.iter().map(|(_, c)| c.clone()).collect();
    let mean_curve = FidelityCurve::mean(&curves)?;
    let defined: Vec<f64> = reports.iter().filter_map(|(r, _)| r.cohesiveness).collect();
    Ok(MetricsFile {
        fid_plus: reports.iter().map(|(r, _)| r.fid_plus).sum::<f64>() / n,
        best_fid_plus: best_fid_plus(&mean_curve)?,
        aufsc: reports.iter().map(|(r, _)| r.aufsc).sum::<f64>() / n,
        cohesiveness: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
        curve: mean_curve.points(),
        delta_t,
        instances: runs
            .iter()
            .zip(&reports)
            .map(|(r, (m, _))| InstanceMetrics {
                labels: r.labels.clone(),
                fid_plus: m.fid_plus,
                best_fid_plus: m.best_fid_plus,
                aufsc: m.aufsc,
                cohesiveness: m.cohesiveness,
                explanation_size: r.run.explanation.len(),
                epochs: r.run.epochs(),
            })
            .collect(),
    })
}

/// Explainer hyperparameters a sweep may vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepParam {
    #[value(name = "lambda_size", alias = "lambda-size")]
    LambdaSize,
    #[value(name = "lambda_weight", alias = "lambda-weight")]
    LambdaWeight,
    Lr,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::LambdaSize => "lambda_size",
            SweepParam::LambdaWeight => "lambda_weight",
            SweepParam::Lr => "lr",
        }
    }

    pub fn apply(self, cfg: &mut ExplainerConfig, value: f64) {
        match self {
            SweepParam::LambdaSize => cfg.lambda_size = value,
            SweepParam::LambdaWeight => cfg.lambda_weight = value,
            SweepParam::Lr => cfg.lr = value,
        }
    }
}

/// One explanation run per value over the same instances; returns the
/// summary table and the runs behind each row.
pub fn sweep(
    model: &dyn TargetModel,
    graph: &DynamicGraph,
    targets: &[TargetEdge],
    base: &ExplainerConfig,
    param: SweepParam,
    values: &[f64],
    workers: usize,
) -> Result<(SweepFile, Vec<Vec<InstanceRun>>)> {
    let delta_t = default_delta_t(graph);
    let mut rows = Vec::with_capacity(values.len());
    let mut all_runs = Vec::with_capacity(values.len());
    for &value in values {
        let mut cfg = base.clone();
        param.apply(&mut cfg, value);
        cfg.validate().map_err(|e| UsageError(format!("{}={value}: {e}", param.name())))?;
        let runs = explain_all(model, graph, targets, &cfg, workers)?;
        let metrics = evaluate_runs(model, graph, &runs, &cfg.grid, delta_t, CohesionNorm::default(), workers)?;
        log::info!(
            "{}={value}: best FID+ {:.4}, AUFSC {:.4}",
            param.name(),
            metrics.best_fid_plus,
            metrics.aufsc
        );
        rows.push(SweepRow {
            value,
            best_fid_plus: metrics.best_fid_plus,
            fid_plus: metrics.fid_plus,
            aufsc: metrics.aufsc,
            mean_explanation_size: runs.iter().map(|r| r.run.explanation.len() as f64).sum::<f64>() / runs.len() as f64,
        });
        all_runs.push(runs);
    }
    Ok((
        SweepFile {
            param: param.name().to_string(),
            instances: targets.len(),
            rows,
        },
        all_runs,
    ))
}
