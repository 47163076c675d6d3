//! Seeded synthetic dynamic graphs.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::graph::{build_event_graph, build_snapshot_graph, EventGraph, EventRow, NodeId, SnapshotGraph, SubEdge, TargetEdge};
use crate::{Error, Result};

/// Users interact with hubs at Poisson times; two users link only when both
/// touched the same hub within the last `window`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedConfig {
    pub num_users: usize,
    pub num_hubs: usize,
    pub num_positives: usize,
    /// Minimum number of user-hub events; more are added while waiting for
    /// an eligible hub.
    pub num_background: usize,
    pub window: f64,
    /// Events per unit time.
    pub rate: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            num_users: 60,
            num_hubs: 6,
            num_positives: 500,
            num_background: 1500,
            window: 6.0,
            rate: 1.0,
            seed: 0,
        }
    }
}

/// The hub events behind one planted user-user link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub edge: TargetEdge,
    pub hub: NodeId,
    /// The later of the two hub events; it completed the rule.
    pub causal: SubEdge,
    /// The partner's earlier hub event.
    pub support: SubEdge,
}

#[derive(Debug, Clone)]
pub struct PlantedDataset {
    pub graph: EventGraph,
    pub truth: Vec<GroundTruth>,
}

impl PlantedDataset {
    /// Node ids `0..num_users` are users; hubs follow.
    pub fn is_hub(&self, v: NodeId, cfg: &PlantedConfig) -> bool {
        v >= cfg.num_users && v < cfg.num_users + cfg.num_hubs
    }
}

fn exp_dist(rate: f64) -> Result<Exp<f64>> {
    Exp::new(rate).map_err(|e| Error::Validation(format!("rate {rate}: {e}")))
}

pub fn planted_events(cfg: &PlantedConfig) -> Result<PlantedDataset> {
    if cfg.num_users < 2 || cfg.num_hubs == 0 {
        return Err(Error::Validation("planted data needs at least two users and one hub".into()));
    }
    if !(cfg.window > 0.0) || !(cfg.rate > 0.0) {
        return Err(Error::Validation("window and rate must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gap = exp_dist(cfg.rate)?;
    let hub_id = |h: usize| cfg.num_users + h;

    let mut rows: Vec<EventRow> = Vec::new();
    let mut truth = Vec::new();
    // per hub: user -> time of that user's latest event on the hub
    let mut last: Vec<BTreeMap<NodeId, f64>> = vec![BTreeMap::new(); cfg.num_hubs];
    let (mut positives, mut background) = (0usize, 0usize);
    let mut t = 0.0;

    while positives < cfg.num_positives || background < cfg.num_background {
        t += gap.sample(&mut rng);
        let pos_left = cfg.num_positives - positives;
        let bg_left = cfg.num_background.saturating_sub(background);
        let want_positive = pos_left > 0 && rng.gen_range(0..pos_left + bg_left) < pos_left;

        if want_positive {
            let eligible: Vec<(usize, Vec<(NodeId, f64)>)> = last
                .iter()
                .enumerate()
                .map(|(h, users)| {
                    let recent: Vec<(NodeId, f64)> = users
                        .iter()
                        .filter(|(_, &s)| s > t - cfg.window)
                        .map(|(&u, &s)| (u, s))
                        .collect();
                    (h, recent)
                })
                .filter(|(_, recent)| recent.len() >= 2)
                .collect();
            if let Some((h, recent)) = eligible.choose(&mut rng) {
                let pair: Vec<&(NodeId, f64)> = recent.choose_multiple(&mut rng, 2).collect();
                let (a, b) = (*pair[0], *pair[1]);
                let (later, earlier) = if a.1 >= b.1 { (a, b) } else { (b, a) };
                let edge = TargetEdge::new(a.0, b.0, t);
                rows.push((a.0, b.0, t, Vec::new()));
                truth.push(GroundTruth {
                    edge,
                    hub: hub_id(*h),
                    causal: SubEdge {
                        src: later.0,
                        dst: hub_id(*h),
                        t: later.1,
                    },
                    support: SubEdge {
                        src: earlier.0,
                        dst: hub_id(*h),
                        t: earlier.1,
                    },
                });
                positives += 1;
                continue;
            }
        }

        let u = rng.gen_range(0..cfg.num_users);
        let h = rng.gen_range(0..cfg.num_hubs);
        rows.push((u, hub_id(h), t, Vec::new()));
        last[h].insert(u, t);
        background += 1;
    }

    let labels = (0..cfg.num_users)
        .map(|u| format!("u{u}"))
        .chain((0..cfg.num_hubs).map(|h| format!("h{h}")))
        .collect();
    let graph = build_event_graph(rows)?
        .with_min_nodes(cfg.num_users + cfg.num_hubs)
        .with_labels(labels)?;
    Ok(PlantedDataset { graph, truth })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoissonConfig {
    pub num_nodes: usize,
    pub num_events: usize,
    pub rate: f64,
    pub seed: u64,
}

impl Default for PoissonConfig {
    fn default() -> Self {
        Self {
            num_nodes: 100,
            num_events: 2000,
            rate: 1.0,
            seed: 0,
        }
    }
}

/// Events between uniform random distinct pairs at Poisson times.
pub fn poisson_events(cfg: &PoissonConfig) -> Result<EventGraph> {
    if cfg.num_nodes < 2 {
        return Err(Error::Validation("a Poisson stream needs at least two nodes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gap = exp_dist(cfg.rate)?;
    let mut t = 0.0;
    let mut rows = Vec::with_capacity(cfg.num_events);
    for _ in 0..cfg.num_events {
        t += gap.sample(&mut rng);
        let u = rng.gen_range(0..cfg.num_nodes);
        let mut v = rng.gen_range(0..cfg.num_nodes - 1);
        if v >= u {
            v += 1;
        }
        rows.push((u, v, t, Vec::new()));
    }
    Ok(build_event_graph(rows)?.with_min_nodes(cfg.num_nodes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ErConfig {
    pub num_nodes: usize,
    pub num_snapshots: usize,
    pub edge_prob: f64,
    pub seed: u64,
}

impl Default for ErConfig {
    fn default() -> Self {
        Self {
            num_nodes: 200,
            num_snapshots: 5,
            edge_prob: 0.05,
            seed: 0,
        }
    }
}

/// Independent Erdős–Rényi snapshots.
pub fn er_snapshots(cfg: &ErConfig) -> Result<SnapshotGraph> {
    if cfg.num_nodes < 2 || cfg.num_snapshots == 0 {
        return Err(Error::Validation("snapshots need at least two nodes and one snapshot".into()));
    }
    if !(0.0..=1.0).contains(&cfg.edge_prob) {
        return Err(Error::Validation(format!("edge probability {} outside [0, 1]", cfg.edge_prob)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::new();
    for s in 1..=cfg.num_snapshots {
        for u in 0..cfg.num_nodes {
            for v in u + 1..cfg.num_nodes {
                if rng.gen_bool(cfg.edge_prob) {
                    rows.push((u, v, s));
                }
            }
        }
    }
    Ok(build_snapshot_graph(&rows)?.with_min_nodes(cfg.num_nodes))
}
