use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tgx_numkernel::{GruCell, GruVars, Tape, Tensor, Var};

use super::{check_mode, check_node, MaskedGraph, TargetModel, Trainable};
use crate::graph::{ComputationSubgraph, DynamicGraph, GraphMode, SubgraphKind, TargetEdge};
use crate::sequencer::extract_khop;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotArch {
    pub num_nodes: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    /// Radius of the per-snapshot computation subgraph.
    pub hops: usize,
    /// Number of snapshots preceding the target that are read.
    pub window: usize,
}

impl SnapshotArch {
    pub fn new(num_nodes: usize) -> Self {
        Self {
            num_nodes,
            embed_dim: 32,
            hidden: 32,
            hops: 2,
            window: 3,
        }
    }
}

const EMB: usize = 0;
const W1: usize = 1;
const W2: usize = 2;
const EVOLVE1: usize = 3;
const EVOLVE2: usize = 12;
const GRU_NAMES: [&str; 9] = ["w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h"];

/// Two GCN layers whose weights evolve across snapshots.
///
/// Snapshot `s` uses `W^l_s = gru_l(W^l_{s-1})` applied row by row, with
/// `W^l_0` learned. Within a snapshot, messages use the symmetric
/// normalization of the masked adjacency plus self loops:
///
/// ```text
/// deg_v  = 1 + sum_{e ~ v} m_e
/// H1_v   = relu(W1_s (x_v / deg_v + sum_{e=(v,w)} m_e x_w / sqrt(deg_v deg_w)))
/// H2_v   = W2_s (same aggregation over H1)
/// z_v    = mean over context snapshots of H2_v
/// logit  = <z_src, z_dst>
/// ```
///
/// Context is the `window` snapshots strictly before the target's.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotModel {
    arch: SnapshotArch,
    params: Vec<Tensor>,
}

impl SnapshotModel {
    pub fn new(arch: SnapshotArch, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![
            Tensor::init_uniform(&[arch.num_nodes, arch.embed_dim], arch.embed_dim, &mut rng),
            Tensor::init_uniform(&[arch.hidden, arch.embed_dim], arch.embed_dim, &mut rng),
            Tensor::init_uniform(&[arch.hidden, arch.hidden], arch.hidden, &mut rng),
        ];
        params.extend(GruCell::new(arch.embed_dim, arch.embed_dim, &mut rng).params().iter().cloned());
        params.extend(GruCell::new(arch.hidden, arch.hidden, &mut rng).params().iter().cloned());
        Self { arch, params }
    }

    pub fn zeros(arch: SnapshotArch) -> Self {
        let mut params = vec![
            Tensor::zeros(&[arch.num_nodes, arch.embed_dim]),
            Tensor::zeros(&[arch.hidden, arch.embed_dim]),
            Tensor::zeros(&[arch.hidden, arch.hidden]),
        ];
        params.extend(GruCell::zeros(arch.embed_dim, arch.embed_dim).params().iter().cloned());
        params.extend(GruCell::zeros(arch.hidden, arch.hidden).params().iter().cloned());
        Self { arch, params }
    }

    pub fn arch(&self) -> &SnapshotArch {
        &self.arch
    }

    /// Layer weights for snapshots `1..=upto`, index `s - 1`.
    fn evolve(&self, tape: &mut Tape, p: &[Var], upto: usize) -> Result<Vec<(Var, Var)>> {
        let g1 = GruVars::from_vars(self.arch.embed_dim, self.arch.embed_dim, p[EVOLVE1..EVOLVE1 + 9].to_vec())?;
        let g2 = GruVars::from_vars(self.arch.hidden, self.arch.hidden, p[EVOLVE2..EVOLVE2 + 9].to_vec())?;
        let (mut w1, mut w2) = (p[W1], p[W2]);
        let mut out = Vec::with_capacity(upto);
        for _ in 0..upto {
            w1 = evolve_rows(tape, &g1, w1, self.arch.hidden)?;
            w2 = evolve_rows(tape, &g2, w2, self.arch.hidden)?;
            out.push((w1, w2));
        }
        Ok(out)
    }

    /// Layer-2 outputs of the two target endpoints in one snapshot.
    fn gcn(
        &self,
        tape: &mut Tape,
        emb: Var,
        (w1, w2): (Var, Var),
        g: &MaskedGraph<'_>,
        targets: [usize; 2],
    ) -> Result<[Var; 2]> {
        let sub = g.sub;
        let nodes = sub.nodes();
        let n = nodes.len();
        let local = |v: usize| -> Result<usize> {
            nodes
                .binary_search(&v)
                .map_err(|_| Error::Validation(format!("node {v} missing from context subgraph")))
        };
        let mask = match g.mask {
            Some(m) => m,
            None => tape.constant_vec(vec![1.0; sub.num_edges().max(1)])?,
        };
        // (edge index, neighbor local index)
        let mut incident: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for (i, e) in sub.edges().iter().enumerate() {
            let (a, b) = (local(e.src)?, local(e.dst)?);
            incident[a].push((i, b));
            incident[b].push((i, a));
        }
        let mut weight: Vec<Option<Var>> = vec![None; sub.num_edges()];
        let mut get_weight = |tape: &mut Tape, i: usize| -> Result<Var> {
            if let Some(w) = weight[i] {
                return Ok(w);
            }
            let w = tape.slice(mask, i, 1)?;
            weight[i] = Some(w);
            Ok(w)
        };

        let t_local = [local(targets[0])?, local(targets[1])?];
        let hop1: BTreeSet<usize> = t_local
            .iter()
            .flat_map(|&a| std::iter::once(a).chain(incident[a].iter().map(|&(_, b)| b)))
            .collect();
        let hop2: BTreeSet<usize> = hop1
            .iter()
            .flat_map(|&a| std::iter::once(a).chain(incident[a].iter().map(|&(_, b)| b)))
            .collect();

        // 1/sqrt(deg) and 1/deg for every node that sends or receives
        let mut dinv: Vec<Option<(Var, Var)>> = vec![None; n];
        for &a in &hop2 {
            let deg = if incident[a].is_empty() {
                tape.constant_scalar(1.0)?
            } else {
                let ms = incident[a]
                    .iter()
                    .map(|&(i, _)| get_weight(tape, i))
                    .collect::<Result<Vec<_>>>()?;
                let cat = tape.concat(&ms)?;
                let s = tape.sum(cat)?;
                tape.add_const(s, 1.0)?
            };
            dinv[a] = Some((tape.powf(deg, -0.5)?, tape.powf(deg, -1.0)?));
        }

        let mut aggregate = |tape: &mut Tape, proj: &[Option<Var>], a: usize| -> Result<Var> {
            let (da, self_coef) = dinv[a].expect("degree computed");
            let mut acc = tape.scale(proj[a].expect("projected"), self_coef)?;
            for &(i, b) in &incident[a] {
                let (db, _) = dinv[b].expect("degree computed");
                let m = get_weight(tape, i)?;
                let c = tape.mul(m, da)?;
                let c = tape.mul(c, db)?;
                let msg = tape.scale(proj[b].expect("projected"), c)?;
                acc = tape.add(acc, msg)?;
            }
            Ok(acc)
        };

        let mut proj1: Vec<Option<Var>> = vec![None; n];
        for &a in &hop2 {
            let x = tape.row(emb, nodes[a])?;
            proj1[a] = Some(tape.matvec(w1, x)?);
        }
        let mut proj2: Vec<Option<Var>> = vec![None; n];
        for &a in &hop1 {
            let h = aggregate(tape, &proj1, a)?;
            let h = tape.relu(h)?;
            proj2[a] = Some(tape.matvec(w2, h)?);
        }
        Ok([aggregate(tape, &proj2, t_local[0])?, aggregate(tape, &proj2, t_local[1])?])
    }

    fn score(&self, tape: &mut Tape, p: &[Var], weights: &[(Var, Var)], edge: &TargetEdge, graphs: &[MaskedGraph<'_>]) -> Result<Var> {
        if graphs.is_empty() {
            return Err(Error::Degenerate("snapshot model needs at least one context snapshot".into()));
        }
        check_node(edge.src, self.arch.num_nodes)?;
        check_node(edge.dst, self.arch.num_nodes)?;
        let mut sums: Option<[Var; 2]> = None;
        for g in graphs {
            let s = snapshot_of(g)?;
            let z = self.gcn(tape, p[EMB], weights[s - 1], g, [edge.src, edge.dst])?;
            sums = Some(match sums {
                None => z,
                Some([a, b]) => [tape.add(a, z[0])?, tape.add(b, z[1])?],
            });
        }
        let [a, b] = sums.expect("non-empty");
        let inv = 1.0 / graphs.len() as f64;
        let a = tape.mul_const(a, inv)?;
        let b = tape.mul_const(b, inv)?;
        Ok(tape.dot(a, b)?)
    }
}

fn evolve_rows(tape: &mut Tape, cell: &GruVars, w: Var, rows: usize) -> Result<Var> {
    let mut next = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = tape.row(w, r)?;
        next.push(cell.step(tape, row, row)?);
    }
    Ok(tape.stack(&next)?)
}

fn snapshot_of(g: &MaskedGraph<'_>) -> Result<usize> {
    check_mode(GraphMode::Snapshot, g.sub)?;
    match g.sub.kind {
        SubgraphKind::Snapshot { snapshot } if snapshot >= 1 => Ok(snapshot),
        _ => Err(Error::Validation("snapshot subgraph without a valid index".into())),
    }
}

fn check_mask(tape: &Tape, g: &MaskedGraph<'_>) -> Result<()> {
    if let Some(m) = g.mask {
        if tape.value(m).len() != g.sub.num_edges() {
            return Err(Error::MaskLength {
                expected: g.sub.num_edges(),
                got: tape.value(m).len(),
            });
        }
    }
    Ok(())
}

impl TargetModel for SnapshotModel {
    fn mode(&self) -> GraphMode {
        GraphMode::Snapshot
    }

    fn context(&self, graph: &DynamicGraph, edge: &TargetEdge) -> Result<Vec<ComputationSubgraph>> {
        let DynamicGraph::Snapshot(g) = graph else {
            return Err(Error::ModeMismatch {
                expected: "snapshot",
                got: "event",
            });
        };
        let target = edge.snapshot();
        if target < 2 {
            return Err(Error::Degenerate(format!(
                "target snapshot {target} has no earlier snapshot to read"
            )));
        }
        if target > g.num_snapshots() + 1 {
            return Err(Error::Validation(format!(
                "target snapshot {target} is beyond the graph's {} snapshots",
                g.num_snapshots()
            )));
        }
        let first = target.saturating_sub(self.arch.window).max(1);
        (first..target)
            .map(|s| match extract_khop(g, s, edge, self.arch.hops) {
                Err(Error::MissingEndpoint { .. }) => ComputationSubgraph::new(
                    *edge,
                    self.arch.hops,
                    SubgraphKind::Snapshot { snapshot: s },
                    [edge.src, edge.dst],
                    Vec::new(),
                ),
                other => other,
            })
            .collect()
    }

    fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params.iter().map(|t| tape.leaf(t, trainable)).collect()
    }

    fn forward(&self, tape: &mut Tape, params: &[Var], edge: &TargetEdge, graphs: &[MaskedGraph<'_>]) -> Result<Var> {
        let items = [(*edge, graphs.to_vec())];
        Ok(self.forward_batch(tape, params, &items)?[0])
    }

    fn forward_batch(
        &self,
        tape: &mut Tape,
        params: &[Var],
        items: &[(TargetEdge, Vec<MaskedGraph<'_>>)],
    ) -> Result<Vec<Var>> {
        let mut upto = 0;
        for (_, graphs) in items {
            for g in graphs {
                upto = upto.max(snapshot_of(g)?);
                check_mask(tape, g)?;
            }
        }
        let weights = self.evolve(tape, params, upto)?;
        items
            .iter()
            .map(|(edge, graphs)| self.score(tape, params, &weights, edge, graphs))
            .collect()
    }
}

impl Trainable for SnapshotModel {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut names: Vec<String> = vec!["embedding".into(), "gcn1_w0".into(), "gcn2_w0".into()];
        for layer in ["evolve1", "evolve2"] {
            names.extend(GRU_NAMES.iter().map(|n| format!("{layer}.{n}")));
        }
        names.into_iter().zip(self.params.iter()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.params.iter_mut().collect()
    }
}
