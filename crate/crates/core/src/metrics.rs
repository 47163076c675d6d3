//! Fidelity, sparsity and cohesiveness metrics under hard edge deletion.

use serde::{Deserialize, Serialize};
use tgx_numkernel::Tape;

use crate::graph::{ComputationSubgraph, Explanation, TargetEdge};
use crate::models::{mask_var, EdgeMask, MaskedGraph, Prediction, TargetModel};
use crate::{Error, Result};

/// Lower clamp on the cohesiveness mean before the logarithm.
pub const COHESION_FLOOR: f64 = 1e-12;

/// Slack for `ceil(lambda * E)` so grid points like 0.15 * 20 do not round up.
const CEIL_SLACK: f64 = 1e-9;

/// `{0.05, 0.10, ..., 1.00}`.
pub fn default_grid() -> Vec<f64> {
    (1..=20).map(|i| f64::from(i) / 20.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityCurve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub instances: usize,
}

impl FidelityCurve {
    pub fn new(grid: Vec<f64>, values: Vec<f64>, instances: usize) -> Result<Self> {
        check_grid(&grid)?;
        if values.len() != grid.len() {
            return Err(Error::Validation(format!(
                "{} curve values for {} grid points",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("curve values must be finite".into()));
        }
        Ok(Self { grid, values, instances })
    }

    /// Pointwise mean, weighted by instance counts.
    pub fn mean(curves: &[FidelityCurve]) -> Result<Self> {
        let first = curves
            .first()
            .ok_or_else(|| Error::UndefinedMetric("no curves to average".into()))?;
        let total: usize = curves.iter().map(|c| c.instances).sum();
        if total == 0 {
            return Err(Error::UndefinedMetric("curves cover no instances".into()));
        }
        let mut values = vec![0.0; first.grid.len()];
        for c in curves {
            if c.grid != first.grid {
                return Err(Error::Validation("curves use different grids".into()));
            }
            for (acc, v) in values.iter_mut().zip(&c.values) {
                *acc += v * c.instances as f64;
            }
        }
        for v in &mut values {
            *v /= total as f64;
        }
        Self::new(first.grid.clone(), values, total)
    }

    pub fn points(&self) -> Vec<[f64; 2]> {
        self.grid.iter().zip(&self.values).map(|(&l, &v)| [l, v]).collect()
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.iter().any(|l| !(*l > 0.0 && *l <= 1.0)) {
        return Err(Error::Validation("sparsity grid must lie in (0, 1]".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Validation("sparsity grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Mean of `f(G_subgraph)_y - f(complement)_y` over instances.
pub fn fid_plus(instances: &[(f64, f64)]) -> Result<f64> {
    if instances.is_empty() {
        return Err(Error::UndefinedMetric("FID+ over zero instances".into()));
    }
    if instances.iter().any(|(a, b)| !(0.0..=1.0).contains(a) || !(0.0..=1.0).contains(b)) {
        return Err(Error::Validation("FID+ inputs must be probabilities".into()));
    }
    Ok(instances.iter().map(|(a, b)| a - b).sum::<f64>() / instances.len() as f64)
}

/// One explained prediction: the model, the edge and its context graphs.
#[derive(Clone, Copy)]
pub struct Instance<'a> {
    pub model: &'a dyn TargetModel,
    pub edge: TargetEdge,
    pub context: &'a [ComputationSubgraph],
}

impl<'a> Instance<'a> {
    pub fn new(model: &'a dyn TargetModel, edge: TargetEdge, context: &'a [ComputationSubgraph]) -> Self {
        Self { model, edge, context }
    }

    pub fn num_candidates(&self) -> usize {
        self.context.iter().map(ComputationSubgraph::num_edges).sum()
    }

    /// Predictions with hard keep flags, one `Vec<Vec<bool>>` (per context
    /// graph) per query, all on one tape.
    pub fn predict_kept(&self, queries: &[Vec<Vec<bool>>]) -> Result<Vec<Prediction>> {
        let masks: Vec<Vec<EdgeMask>> = queries
            .iter()
            .map(|q| {
                if q.len() != self.context.len() {
                    return Err(Error::Validation(format!(
                        "{} keep vectors for {} context graphs",
                        q.len(),
                        self.context.len()
                    )));
                }
                Ok(q.iter().map(|k| EdgeMask::from_keep(k)).collect())
            })
            .collect::<Result<_>>()?;
        let mut tape = Tape::new();
        let params = self.model.bind(&mut tape, false);
        let mut items = Vec::with_capacity(masks.len());
        for ms in &masks {
            let mut views = Vec::with_capacity(ms.len());
            for (sub, m) in self.context.iter().zip(ms) {
                views.push(MaskedGraph {
                    sub,
                    mask: mask_var(&mut tape, sub, m)?,
                });
            }
            items.push((self.edge, views));
        }
        let logits = self.model.forward_batch(&mut tape, &params, &items)?;
        Ok(logits.into_iter().map(|l| Prediction::from_logit(tape.scalar(l))).collect())
    }

    pub fn original(&self) -> Result<Prediction> {
        let all: Vec<Vec<bool>> = self.context.iter().map(|s| vec![true; s.num_edges()]).collect();
        Ok(self.predict_kept(&[all])?[0])
    }

    /// Keep flags per context graph marking `expl`'s edges; every retained
    /// edge must match exactly one context edge.
    pub fn selection(&self, expl: &Explanation) -> Result<Vec<Vec<bool>>> {
        let mut sel: Vec<Vec<bool>> = self.context.iter().map(|s| vec![false; s.num_edges()]).collect();
        for r in &expl.retained {
            let hit = self.context.iter().enumerate().find_map(|(g, sub)| {
                sub.edges()
                    .iter()
                    .enumerate()
                    .position(|(i, e)| {
                        !sel[g][i] && e.src == r.src && e.dst == r.dst && e.t.to_bits() == r.t.to_bits()
                    })
                    .map(|i| (g, i))
            });
            match hit {
                Some((g, i)) => sel[g][i] = true,
                None => {
                    return Err(Error::Validation(format!(
                        "explanation edge ({}, {}, {}) is not in the context",
                        r.src, r.dst, r.t
                    )))
                }
            }
        }
        Ok(sel)
    }

    /// `(f(G_subgraph)_y, f(complement)_y)` with `y` the original class.
    pub fn fid_pair(&self, selected: &[Vec<bool>]) -> Result<(f64, f64)> {
        let full: Vec<Vec<bool>> = self.context.iter().map(|s| vec![true; s.num_edges()]).collect();
        let complement = invert(selected);
        let preds = self.predict_kept(&[full, complement])?;
        let y = preds[0].class();
        Ok((preds[0].class_probability(y), preds[1].class_probability(y)))
    }
}

fn invert(selected: &[Vec<bool>]) -> Vec<Vec<bool>> {
    selected.iter().map(|s| s.iter().map(|k| !k).collect()).collect()
}

/// Candidate `(graph, edge)` indices by descending probability, ties by
/// ascending `(src, dst, t)`. Graphs with `None` contribute no candidates.
pub fn rank_candidates(context: &[ComputationSubgraph], probs: &[Option<Vec<f64>>]) -> Result<Vec<(usize, usize)>> {
    if probs.len() != context.len() {
        return Err(Error::Validation(format!(
            "{} probability vectors for {} context graphs",
            probs.len(),
            context.len()
        )));
    }
    let mut cands = Vec::new();
    for (g, (sub, p)) in context.iter().zip(probs).enumerate() {
        if let Some(p) = p {
            if p.len() != sub.num_edges() {
                return Err(Error::MaskLength {
                    expected: sub.num_edges(),
                    got: p.len(),
                });
            }
            if p.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(Error::Validation("edge probabilities must lie in [0, 1]".into()));
            }
            cands.extend((0..p.len()).map(|i| (g, i)));
        }
    }
    let key = |&(g, i): &(usize, usize)| {
        let e = context[g].edges()[i];
        (probs[g].as_ref().expect("candidate graph")[i], e.src, e.dst, e.t)
    };
    cands.sort_by(|a, b| {
        let (pa, sa, da, ta) = key(a);
        let (pb, sb, db, tb) = key(b);
        pb.total_cmp(&pa)
            .then(sa.cmp(&sb))
            .then(da.cmp(&db))
            .then(ta.total_cmp(&tb))
            .then(a.cmp(b))
    });
    Ok(cands)
}

/// `ceil(lambda * count)`, tolerant of grid rounding.
pub fn retained_count(lambda: f64, count: usize) -> usize {
    ((lambda * count as f64 - CEIL_SLACK).ceil().max(0.0) as usize).min(count)
}

/// Keep flags for the top `k` ranked candidates.
pub fn top_selection(context: &[ComputationSubgraph], ranked: &[(usize, usize)], k: usize) -> Vec<Vec<bool>> {
    let mut sel: Vec<Vec<bool>> = context.iter().map(|s| vec![false; s.num_edges()]).collect();
    for &(g, i) in ranked.iter().take(k) {
        sel[g][i] = true;
    }
    sel
}

/// FID+ of the top-`ceil(lambda E)` edges at each grid point.
pub fn sparsity_sweep(inst: &Instance<'_>, probs: &[Option<Vec<f64>>], grid: &[f64]) -> Result<FidelityCurve> {
    check_grid(grid)?;
    let ranked = rank_candidates(inst.context, probs)?;
    let full: Vec<Vec<bool>> = inst.context.iter().map(|s| vec![true; s.num_edges()]).collect();
    let mut queries = vec![full];
    for &l in grid {
        let sel = top_selection(inst.context, &ranked, retained_count(l, ranked.len()));
        queries.push(invert(&sel));
    }
    let preds = inst.predict_kept(&queries)?;
    let y = preds[0].class();
    let base = preds[0].class_probability(y);
    let values = preds[1..].iter().map(|p| base - p.class_probability(y)).collect();
    FidelityCurve::new(grid.to_vec(), values, 1)
}

/// Trapezoidal area over the grid, extended at constant value down to 0.
pub fn aufsc(curve: &FidelityCurve) -> Result<f64> {
    if curve.grid.len() < 2 {
        return Err(Error::UndefinedMetric("AUFSC needs at least two grid points".into()));
    }
    let mut area = curve.grid[0] * curve.values[0];
    for i in 1..curve.grid.len() {
        area += (curve.grid[i] - curve.grid[i - 1]) * (curve.values[i] + curve.values[i - 1]) / 2.0;
    }
    Ok(area)
}

pub fn best_fid_plus(curve: &FidelityCurve) -> Result<f64> {
    curve
        .values
        .iter()
        .copied()
        .reduce(f64::max)
        .ok_or_else(|| Error::UndefinedMetric("empty curve".into()))
}

/// Normalizer of the cohesiveness sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CohesionNorm {
    /// `|G|(|G| - 1)`, the ordered-pair count.
    #[default]
    OrderedPairs,
    /// `|G|(2 - |G|)` as printed; zero at two edges and negative beyond.
    Literal,
}

/// `ln(max(floor, sum_{i != j} cos(|t_i - t_j| / dT) [e_i ~ e_j] / Z))`.
pub fn cohesiveness(expl: &Explanation, delta_t: f64, norm: CohesionNorm) -> Result<f64> {
    let n = expl.retained.len();
    if n < 2 {
        return Err(Error::UndefinedMetric(format!(
            "cohesiveness needs at least two interactions, got {n}"
        )));
    }
    if !(delta_t > 0.0) || !delta_t.is_finite() {
        return Err(Error::Validation(format!("time span {delta_t} must be positive")));
    }
    let z = match norm {
        CohesionNorm::OrderedPairs => (n * (n - 1)) as f64,
        CohesionNorm::Literal => n as f64 * (2.0 - n as f64),
    };
    if z == 0.0 {
        return Err(Error::UndefinedMetric("cohesiveness normalizer is zero".into()));
    }
    let es = &expl.retained;
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            let shares = es[i].src == es[j].src || es[i].src == es[j].dst || es[i].dst == es[j].src || es[i].dst == es[j].dst;
            if i != j && shares {
                sum += ((es[i].t - es[j].t).abs() / delta_t).cos();
            }
        }
    }
    Ok((sum / z).max(COHESION_FLOOR).ln())
}

/// The four reported metrics for one explanation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub fid_plus: f64,
    pub best_fid_plus: f64,
    pub aufsc: f64,
    /// `None` when the explanation has fewer than two interactions.
    pub cohesiveness: Option<f64>,
    pub curve: Vec<[f64; 2]>,
}

/// Metrics of `expl` on `inst`; `probs` ranks candidates for the sweep.
pub fn evaluate(
    inst: &Instance<'_>,
    expl: &Explanation,
    probs: &[Option<Vec<f64>>],
    grid: &[f64],
    delta_t: f64,
    norm: CohesionNorm,
) -> Result<MetricsReport> {
    let sel = inst.selection(expl)?;
    let pair = inst.fid_pair(&sel)?;
    let curve = sparsity_sweep(inst, probs, grid)?;
    let cohesiveness = match cohesiveness(expl, delta_t, norm) {
        Ok(c) => Some(c),
        Err(Error::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(MetricsReport {
        fid_plus: fid_plus(&[pair])?,
        best_fid_plus: best_fid_plus(&curve)?,
        aufsc: aufsc(&curve)?,
        cohesiveness,
        curve: curve.points(),
    })
}
