use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tgx_core::graph::{
    build_event_graph, build_snapshot_graph, ComputationSubgraph, NodeId, SubEdge, SubgraphKind, TargetEdge,
};
use tgx_core::sequencer::{
    bfs_sequence, build_retained_matrix, estimate_m, estimate_m_with, extract_event_neighborhood, extract_khop,
    random_sequence, temporal_sequence, verify_bfs_property, BandRule,
};

/// Random connected graph on `0..n`: a random spanning tree plus extra pairs.
fn connected(n: usize, extra: usize, rng: &mut ChaCha8Rng) -> Vec<(NodeId, NodeId)> {
    let mut pairs = BTreeSet::new();
    for v in 1..n {
        let u = rng.gen_range(0..v);
        pairs.insert((u, v));
    }
    for _ in 0..extra {
        let u = rng.gen_range(0..n);
        let v = rng.gen_range(0..n);
        if u != v {
            pairs.insert((u.min(v), u.max(v)));
        }
    }
    pairs.into_iter().collect()
}

fn subgraph(n: usize, pairs: &[(NodeId, NodeId)]) -> ComputationSubgraph {
    let edges = pairs.iter().map(|&(src, dst)| SubEdge { src, dst, t: 1.0 }).collect();
    ComputationSubgraph::new(
        TargetEdge::new(0, 1, 1.0),
        n,
        SubgraphKind::Snapshot { snapshot: 1 },
        0..n,
        edges,
    )
    .unwrap()
}

/// Hop distances by repeated relaxation, independent of any queue order.
fn distances(n: usize, pairs: &[(NodeId, NodeId)], sources: &[NodeId]) -> Vec<Option<usize>> {
    let mut d: Vec<Option<usize>> = vec![None; n];
    for &s in sources {
        d[s] = Some(0);
    }
    loop {
        let mut changed = false;
        for &(u, v) in pairs {
            for (a, b) in [(u, v), (v, u)] {
                if let Some(da) = d[a] {
                    if d[b].is_none_or(|db| db > da + 1) {
                        d[b] = Some(da + 1);
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            return d;
        }
    }
}

/// The property checked literally over all index quadruples.
fn bfs_property_oracle(adj: &dyn Fn(usize, usize) -> bool, n: usize) -> bool {
    for i in 1..=n {
        for j in i + 1..=n {
            if j - 1 == i || !adj(i, j - 1) || adj(i, j) {
                continue;
            }
            for a in 1..=i {
                for b in j..=n {
                    if a != b && adj(a, b) {
                        return false;
                    }
                }
            }
        }
    }
    true
}

proptest! {
    #[test]
    fn bfs_layers_are_hop_distances(seed in 0u64..10_000, n in 2usize..30, extra in 0usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs = connected(n, extra, &mut rng);
        let sub = subgraph(n, &pairs);
        let seq = bfs_sequence(&sub, 0).unwrap();
        let dist = distances(n, &pairs, &[0]);
        let mut sorted = seq.order().to_vec();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        for (r, &v) in seq.order().iter().enumerate() {
            prop_assert_eq!(Some(seq.layers().unwrap()[r]), dist[v]);
            prop_assert_eq!(seq.rank(v), Some(r + 1));
        }
        prop_assert!(seq.layers().unwrap().windows(2).all(|w| w[0] <= w[1]));

        let mut width: BTreeMap<usize, usize> = BTreeMap::new();
        for d in dist.iter().flatten() {
            *width.entry(*d).or_default() += 1;
        }
        prop_assert_eq!(estimate_m(&seq), *width.values().max().unwrap());
    }

    #[test]
    fn bfs_property_check_agrees_with_brute_force(seed in 0u64..10_000, n in 2usize..14, extra in 0usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs = connected(n, extra, &mut rng);
        let sub = subgraph(n, &pairs);
        let set: BTreeSet<_> = pairs.iter().copied().collect();
        for seq in [bfs_sequence(&sub, 0).unwrap(), random_sequence(&sub, &mut rng)] {
            let adj = |a: usize, b: usize| {
                let (u, v) = (seq.at(a), seq.at(b));
                set.contains(&(u.min(v), u.max(v)))
            };
            prop_assert_eq!(verify_bfs_property(&sub, &seq), bfs_property_oracle(&adj, n));
        }
    }

    #[test]
    fn bfs_property_holds_on_trees(seed in 0u64..10_000, n in 2usize..50) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs = connected(n, 0, &mut rng);
        let sub = subgraph(n, &pairs);
        prop_assert!(verify_bfs_property(&sub, &bfs_sequence(&sub, 0).unwrap()));
    }

    #[test]
    fn retained_matrix_is_the_band_predicate(seed in 0u64..10_000, n in 2usize..25, extra in 0usize..60, m in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs = connected(n, extra, &mut rng);
        let sub = subgraph(n, &pairs);
        let set: BTreeSet<_> = pairs.iter().copied().collect();
        let seq = random_sequence(&sub, &mut rng);
        let sliding = build_retained_matrix(&sub, &seq, m, BandRule::Sliding).unwrap();
        let literal = build_retained_matrix(&sub, &seq, m, BandRule::Literal).unwrap();
        prop_assert_eq!(sliding.n(), n);
        for s in 1..=n {
            for r in 1..s {
                let (u, v) = (seq.at(r), seq.at(s));
                let linked = set.contains(&(u.min(v), u.max(v)));
                prop_assert_eq!(sliding.entry(r, s) == 1, linked && s - r <= m);
                prop_assert_eq!(literal.entry(r, s) == 1, linked && r <= m);
            }
        }
        let cells: usize = (1..=n).map(|s| (s - 1).min(m)).sum();
        prop_assert_eq!(sliding.band_cells(), cells);
        let json = sliding.to_json();
        prop_assert_eq!(json.rows.len(), n - 1);
        prop_assert!(json.rows.iter().all(|row| row.len() == m));
    }

    #[test]
    fn wide_band_is_the_strict_lower_triangle(seed in 0u64..10_000, n in 2usize..25, extra in 0usize..60, slack in 0usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs = connected(n, extra, &mut rng);
        let sub = subgraph(n, &pairs);
        let set: BTreeSet<_> = pairs.iter().copied().collect();
        let seq = random_sequence(&sub, &mut rng);
        let rm = build_retained_matrix(&sub, &seq, n - 1 + slack, BandRule::Sliding).unwrap();
        let mut lower = 0;
        for s in 1..=n {
            for r in 1..s {
                let (u, v) = (seq.at(r), seq.at(s));
                let bit = u8::from(set.contains(&(u.min(v), u.max(v))));
                prop_assert_eq!(rm.entry(r, s), bit);
                lower += usize::from(bit);
            }
        }
        let ones: usize = rm.rows().iter().map(|r| r.bits.iter().map(|&b| usize::from(b)).sum::<usize>()).sum();
        prop_assert_eq!(ones, lower);
        prop_assert_eq!(lower, pairs.len());
    }

    #[test]
    fn khop_is_the_distance_ball(seed in 0u64..10_000, n in 3usize..40, extra in 0usize..30, k in 0usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // a forest-plus-noise graph so that some nodes are unreachable
        let pairs: Vec<_> = connected(n, extra, &mut rng)
            .into_iter()
            .filter(|_| rng.gen_bool(0.8))
            .collect();
        prop_assume!(!pairs.is_empty());
        let (a, b) = pairs[rng.gen_range(0..pairs.len())];
        let rows: Vec<_> = pairs.iter().map(|&(u, v)| (u, v, 1)).collect();
        let g = build_snapshot_graph(&rows).unwrap();
        let sub = extract_khop(&g, 1, &TargetEdge::new(a, b, 1.0), k).unwrap();
        let dist = distances(n, &pairs, &[a, b]);
        let ball: Vec<NodeId> = (0..n).filter(|&v| dist[v].is_some_and(|d| d <= k)).collect();
        prop_assert_eq!(sub.nodes(), ball.as_slice());
        let induced: BTreeSet<_> = pairs
            .iter()
            .copied()
            .filter(|(u, v)| ball.contains(u) && ball.contains(v))
            .collect();
        prop_assert_eq!(sub.pair_set(), induced);
    }
}

#[test]
fn documented_counterexample_violates_the_property() {
    // BFS from 0 gives [0, 1, 2, 3, 5, 4]: rank 3 links to ranks 4 and 6,
    // not 5, while rank 2 links to rank 5.
    let pairs = [(0, 1), (0, 2), (1, 3), (1, 5), (2, 3), (2, 4)];
    let sub = subgraph(6, &pairs);
    let seq = bfs_sequence(&sub, 0).unwrap();
    assert_eq!(seq.order(), &[0, 1, 2, 3, 5, 4]);
    assert!(!verify_bfs_property(&sub, &seq));
}

#[test]
fn disconnected_components_get_fresh_layers() {
    let sub = subgraph(5, &[(0, 1), (3, 4)]);
    let seq = bfs_sequence(&sub, 1).unwrap();
    assert_eq!(seq.order(), &[1, 0, 2, 3, 4]);
    assert_eq!(seq.layers().unwrap(), &[0, 1, 2, 3, 4]);
    assert!(bfs_sequence(&sub, 9).is_err());
}

#[test]
fn band_width_zero_is_rejected() {
    let sub = subgraph(3, &[(0, 1), (1, 2)]);
    let seq = bfs_sequence(&sub, 0).unwrap();
    assert!(build_retained_matrix(&sub, &seq, 0, BandRule::Sliding).is_err());
}

fn event_sub(rows: &[(NodeId, NodeId, f64)], target: TargetEdge) -> ComputationSubgraph {
    let edges = rows.iter().map(|&(src, dst, t)| SubEdge { src, dst, t }).collect();
    let nodes: BTreeSet<NodeId> = rows.iter().flat_map(|r| [r.0, r.1]).chain([target.src, target.dst]).collect();
    ComputationSubgraph::new(target, 2, SubgraphKind::Event, nodes, edges).unwrap()
}

#[test]
fn temporal_order_follows_first_contact() {
    let sub = event_sub(&[(4, 2, 1.0), (2, 3, 2.0), (0, 3, 3.0), (4, 0, 4.0)], TargetEdge::new(0, 9, 5.0));
    let seq = temporal_sequence(&sub);
    // 2 and 4 tie at t = 1 and are broken by id; 9 has no event and takes t = 5
    assert_eq!(seq.order(), &[2, 4, 3, 0, 9]);
    assert_eq!(estimate_m(&seq), 4);
    assert_eq!(estimate_m_with(&seq, 2), 2);
}

#[test]
fn random_band_width_spans_the_sequence() {
    let sub = subgraph(7, &[(0, 1), (1, 2), (2, 3)]);
    let seq = random_sequence(&sub, &mut ChaCha8Rng::seed_from_u64(3));
    assert_eq!(estimate_m(&seq), 6);
}

#[test]
fn event_neighborhood_keeps_the_latest_prior_events() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let rows: Vec<_> = (0..200)
        .map(|i| {
            let u = rng.gen_range(0..15);
            let v = (u + rng.gen_range(1..15)) % 15;
            (u, v, i as f64, Vec::new())
        })
        .collect();
    let g = build_event_graph(rows.clone()).unwrap();
    let edge = TargetEdge::new(0, 1, 120.0);
    for (k, horizon) in [(1, 10), (2, 25), (3, 500)] {
        let sub = extract_event_neighborhood(&g, &edge, k, horizon).unwrap();
        let prior: Vec<(NodeId, NodeId)> = rows
            .iter()
            .filter(|r| r.2 < edge.t)
            .map(|r| (r.0.min(r.1), r.0.max(r.1)))
            .collect();
        let dist = distances(15, &prior, &[0, 1]);
        let expected: Vec<(NodeId, NodeId, f64)> = {
            let mut picked: Vec<_> = rows
                .iter()
                .filter(|r| r.2 < edge.t)
                .filter(|r| dist[r.0].is_some_and(|d| d <= k) && dist[r.1].is_some_and(|d| d <= k))
                .map(|r| (r.0, r.1, r.2))
                .rev()
                .take(horizon)
                .collect();
            picked.reverse();
            picked
        };
        let got: Vec<_> = sub.edges().iter().map(|e| (e.src, e.dst, e.t)).collect();
        assert_eq!(got, expected);
        assert!(sub.edges().iter().all(|e| e.t < edge.t));
    }
    let first = TargetEdge::new(0, 1, 0.0);
    assert!(extract_event_neighborhood(&g, &first, 2, 10).is_err());
}
