use std::f64::consts::PI;
use std::path::Path;

use proptest::prelude::*;
use rand::Rng;

use csl::algorithms::{ratio_constant, run_csgd, run_dsgd, Init, RatioAnchor, RunConfig, StepSchedule};
use csl::bounds::{contraction_audit, verify_aux_lemma, Order, Verdict};
use csl::harness::parse_config;
use csl::harness::config::TopologySpec;
use csl::metrics::{moving_average, transient_time, EnsembleSummary, MetricSeries};
use csl::objectives::{gen_hetero_classification, make_quadratic_suite, make_sigmoid_suite, QuadraticSpec};
use csl::rng::{substream, Purpose};
use csl::topology::{build_metropolis_hastings, build_ring, build_torus_2d, spectral_gap, validate_mixing, Graph, MixingMatrix};

fn assert_mixing(w: &MixingMatrix) {
    let m = w.weights();
    let n = w.n();
    for i in 0..n {
        let row: f64 = m.row(i).sum();
        let col: f64 = m.column(i).sum();
        assert!((row - 1.0).abs() < 1e-12 && (col - 1.0).abs() < 1e-12);
        for j in 0..n {
            assert!((m[(i, j)] - m[(j, i)]).abs() < 1e-15);
            assert!(m[(i, j)] >= 0.0);
        }
    }
}

fn summary(values: Vec<f64>) -> EnsembleSummary {
    let len = values.len();
    let s = |v: Vec<f64>| MetricSeries { ci: vec![0.0; v.len()], mean: v };
    EnsembleSummary {
        runs: 2,
        t: (0..len).collect(),
        step_size: vec![0.1; len],
        f_avg: s(vec![0.0; len]),
        grad_norm_sq: s(values),
        consensus_sq: s(vec![0.0; len]),
        consensus_quart: s(vec![0.0; len]),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ring_gap_matches_circulant_spectrum(n in 3usize..40, s in 0.05f64..0.95) {
        let w = build_ring(n, s).unwrap();
        assert_mixing(&w);
        let second = (1..n)
            .map(|k| (s + (1.0 - s) * (2.0 * PI * k as f64 / n as f64).cos()).abs())
            .fold(0.0, f64::max);
        let rho = spectral_gap(&w).unwrap().rho;
        prop_assert!((rho - (1.0 - second)).abs() < 1e-10);
        prop_assert!(rho > 0.0 && rho <= 1.0);
    }

    #[test]
    fn torus_is_doubly_stochastic(rows in 3usize..7, cols in 3usize..7, s in 0.1f64..0.9) {
        let w = build_torus_2d(rows, cols, s).unwrap();
        assert_mixing(&w);
        let r = validate_mixing(&w).unwrap();
        prop_assert!(r.rho > 0.0 && r.rho <= 1.0 + 1e-12);
    }

    #[test]
    fn metropolis_weights_on_connected_graphs(n in 2usize..15, extra in proptest::collection::vec((0usize..15, 0usize..15), 0..20)) {
        let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
        edges.extend(extra.into_iter().map(|(a, b)| (a % n, b % n)).filter(|(a, b)| a != b));
        edges.sort_unstable_by_key(|&(a, b)| (a.min(b), a.max(b)));
        edges.dedup_by_key(|&mut (a, b)| (a.min(b), a.max(b)));
        let w = build_metropolis_hastings(&Graph::from_edges(n, edges).unwrap()).unwrap();
        assert_mixing(&w);
        prop_assert!(spectral_gap(&w).unwrap().rho > 0.0);
    }

    #[test]
    fn contraction_holds_every_step(seed in 0u64..1000, n in 3usize..8, scale in 0.1f64..1.0) {
        let w = build_ring(n, 0.7).unwrap();
        let rho = spectral_gap(&w).unwrap().rho;
        let suite = make_sigmoid_suite(gen_hetero_classification(n, 3, 15, seed).unwrap());
        let gamma = scale * rho / (9.0 * suite.lipschitz());
        let schedule = StepSchedule::constant(gamma, 60).unwrap();
        let mut cfg = RunConfig::new(&w, &suite, &schedule, 60, Init::Gaussian { mean: 0.5, std: 1.0 }, seed);
        cfg.debug = true;
        let trace = run_dsgd(&cfg).unwrap().debug.unwrap();
        for order in [Order::Second, Order::Fourth] {
            let a = contraction_audit(&trace, rho, order);
            prop_assert_eq!(a.violations, 0, "order {:?}, worst ratio {}", order, a.worst_ratio);
        }
    }

    #[test]
    fn quadratic_average_tracks_csgd(seed in 0u64..1000, n in 2usize..9, gamma in 0.01f64..0.3) {
        let w = build_ring(n.max(3), 0.5).unwrap();
        let n = w.n();
        let suite = make_quadratic_suite(QuadraticSpec::random(3, 0.5, 2.0, 0.2, seed).unwrap(), n).unwrap();
        let schedule = StepSchedule::constant(gamma, 100).unwrap();
        let mut cfg = RunConfig::new(&w, &suite, &schedule, 100, Init::Equal(vec![1.0, -1.0, 0.5]), seed);
        cfg.shared_noise = true;
        cfg.debug = true;
        let a = run_dsgd(&cfg).unwrap().debug.unwrap();
        let b = run_csgd(&cfg).unwrap().debug.unwrap();
        for (x, y) in a.states.iter().zip(&b.states) {
            for k in 0..3 {
                let avg = x.column(k).mean();
                prop_assert!((avg - y[(0, k)]).abs() <= 1e-9 * (1.0 + y[(0, k)].abs()));
            }
        }
    }

    #[test]
    fn aux_lemma_for_constant_steps(gamma in 1e-4f64..1.0, rho in 0.001f64..1.0) {
        for order in [Order::Second, Order::Fourth] {
            let v = verify_aux_lemma(&StepSchedule::constant(gamma, 3000).unwrap(), rho, order);
            prop_assert_eq!(v.verdict, Verdict::Pass);
        }
    }

    #[test]
    fn sqrt_decay_schedule_is_nonincreasing(a0 in 1.0f64..500.0, a1 in 1.0f64..1e5) {
        let s = StepSchedule::sqrt_decay(a0, a1, 500).unwrap();
        for t in 1..500 {
            prop_assert!(s.gamma(t) <= s.gamma(t - 1));
        }
        prop_assert!(ratio_constant(&s, 2, 2, RatioAnchor::Next) >= 0.0);
    }

    #[test]
    fn moving_average_preserves_constants(c in -10.0f64..10.0, len in 1usize..200, w in 1usize..40) {
        let out = moving_average(&vec![c; len], w);
        prop_assert_eq!(out.len(), len);
        prop_assert!(out.iter().all(|v| (v - c).abs() <= 1e-12 * (1.0 + c.abs())));
    }

    #[test]
    fn identical_curves_have_zero_transient(values in proptest::collection::vec(1e-6f64..1.0, 5..100), w in 1usize..10) {
        let s = summary(values);
        prop_assert_eq!(transient_time(&s, &s, 0.25, w).unwrap().t_star, Some(0));
    }

    #[test]
    fn substreams_are_reproducible_and_distinct(seed in any::<u64>(), run in 0usize..100, agent in 0usize..100, t in 0usize..10_000) {
        let a: u64 = substream(seed, run, agent, t, Purpose::Dsgd).random();
        let b: u64 = substream(seed, run, agent, t, Purpose::Dsgd).random();
        let c: u64 = substream(seed, run, agent, t + 1, Purpose::Dsgd).random();
        let d: u64 = substream(seed, run, agent, t, Purpose::Csgd).random();
        prop_assert_eq!(a, b);
        prop_assert_ne!(a, c);
        prop_assert_ne!(a, d);
    }

    #[test]
    fn ring_configs_parse(n in 3usize..100, s in 0.01f64..0.99, runs in 1usize..100, t in 1usize..10_000) {
        let text = format!("runs = {runs}\nT = {t}\ntopology.n = {n}\ntopology.self_weight = {s}\n");
        let cfg = parse_config(&text, Path::new(".")).unwrap();
        prop_assert_eq!(cfg.topology, TopologySpec::Ring { n, self_weight: s });
        prop_assert_eq!((cfg.runs, cfg.iterations), (runs, t));
    }
}
