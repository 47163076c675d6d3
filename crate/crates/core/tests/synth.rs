use std::collections::BTreeSet;

use tgx_core::synth::{er_snapshots, planted_events, poisson_events, ErConfig, PlantedConfig, PoissonConfig};

#[test]
fn planted_links_follow_the_hub_rule() {
    let cfg = PlantedConfig {
        num_users: 25,
        num_hubs: 3,
        num_positives: 120,
        num_background: 400,
        seed: 9,
        ..PlantedConfig::default()
    };
    let data = planted_events(&cfg).unwrap();
    assert_eq!(data.truth.len(), cfg.num_positives);
    let events = data.graph.events();
    let background = events.iter().filter(|e| data.is_hub(e.dst, &cfg)).count();
    assert!(background >= cfg.num_background);
    assert_eq!(background + cfg.num_positives, events.len());
    for g in &data.truth {
        let (a, b) = (g.edge.src, g.edge.dst);
        assert!(!data.is_hub(a, &cfg) && !data.is_hub(b, &cfg));
        assert!(data.is_hub(g.hub, &cfg));
        let pair: BTreeSet<_> = [g.causal.src, g.support.src].into();
        assert_eq!(pair, [a, b].into());
        assert!(g.support.t <= g.causal.t && g.causal.t < g.edge.t);
        assert!(g.edge.t - g.support.t < cfg.window);
        for ev in [g.causal, g.support] {
            assert_eq!(ev.dst, g.hub);
            // the recorded event exists and is that user's latest on the hub
            assert!(events.iter().any(|e| (e.src, e.dst, e.t) == (ev.src, ev.dst, ev.t)));
            assert!(!events
                .iter()
                .any(|e| e.src == ev.src && e.dst == g.hub && e.t > ev.t && e.t < g.edge.t));
        }
        assert!(events.iter().any(|e| (e.src, e.dst, e.t) == (a, b, g.edge.t)));
    }
    assert_eq!(data.graph.label(0), "u0");
    assert_eq!(data.graph.label(cfg.num_users), "h0");
}

#[test]
fn planted_generation_is_seeded() {
    let cfg = PlantedConfig {
        num_positives: 40,
        num_background: 200,
        seed: 4,
        ..PlantedConfig::default()
    };
    let a = planted_events(&cfg).unwrap();
    let b = planted_events(&cfg).unwrap();
    assert_eq!(a.graph, b.graph);
    assert_eq!(a.truth, b.truth);
    let c = planted_events(&PlantedConfig { seed: 5, ..cfg }).unwrap();
    assert_ne!(a.graph, c.graph);
}

#[test]
fn planted_rejects_degenerate_configs() {
    assert!(planted_events(&PlantedConfig {
        num_users: 1,
        ..PlantedConfig::default()
    })
    .is_err());
    assert!(planted_events(&PlantedConfig {
        window: 0.0,
        ..PlantedConfig::default()
    })
    .is_err());
}

#[test]
fn poisson_gaps_match_the_rate() {
    let cfg = PoissonConfig {
        num_nodes: 30,
        num_events: 20_000,
        rate: 4.0,
        seed: 2,
    };
    let g = poisson_events(&cfg).unwrap();
    let ts: Vec<f64> = g.events().iter().map(|e| e.t).collect();
    assert!(ts.windows(2).all(|w| w[0] <= w[1]));
    let gaps: Vec<f64> = std::iter::once(ts[0]).chain(ts.windows(2).map(|w| w[1] - w[0])).collect();
    let n = gaps.len() as f64;
    let mean = gaps.iter().sum::<f64>() / n;
    let var = gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / n;
    // exponential gaps: mean 1/rate, standard deviation 1/rate
    assert!((mean * cfg.rate - 1.0).abs() < 0.03, "mean gap {mean}");
    assert!((var.sqrt() * cfg.rate - 1.0).abs() < 0.05, "gap sd {}", var.sqrt());
    assert!(g.events().iter().all(|e| e.src != e.dst && e.src < 30 && e.dst < 30));
    assert_eq!(g.num_nodes(), 30);
}

#[test]
fn er_density_matches_the_edge_probability() {
    let cfg = ErConfig {
        num_nodes: 150,
        num_snapshots: 4,
        edge_prob: 0.08,
        seed: 6,
    };
    let g = er_snapshots(&cfg).unwrap();
    assert_eq!(g.num_snapshots(), 4);
    assert_eq!(g.num_nodes(), 150);
    let pairs = (150 * 149 / 2) as f64;
    for s in g.snapshots() {
        let p = s.edges().len() as f64 / pairs;
        // binomial standard error is about 0.0025 here
        assert!((p - cfg.edge_prob).abs() < 0.01, "density {p}");
    }
    assert!(er_snapshots(&ErConfig {
        edge_prob: 1.5,
        ..cfg
    })
    .is_err());
}
