mod common;

use proptest::prelude::*;
use smallworld::rng::{derive_seed, rng_from_seed};
use smallworld::stats::{two_sample_critical, two_sample_ks, EmpiricalDistribution};
use smallworld::topology::{sample_small_world, SitePoint, SmallWorldGraph, TorusSpec};
use smallworld::walk::{
    sample_path, stationary_check, step_distribution, GraphMode, KernelSampler, PassageKind,
    StartSpec, TimeModel, WalkExperiment, WalkKernel, DEFAULT_HORIZON_FACTOR,
};
use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, Poisson};

fn experiment(spec: TorusSpec, beta: f64, kind: PassageKind, start: StartSpec, graph_seed: u64, replicas: usize, seed: u64) -> WalkExperiment {
    WalkExperiment {
        spec,
        kernel: WalkKernel::simple(&spec, beta).unwrap(),
        time_model: TimeModel::Continuous,
        kind,
        start,
        graph_mode: GraphMode::Quenched { graph_seed },
        replicas,
        master_seed: seed,
        horizon_factor: DEFAULT_HORIZON_FACTOR,
    }
}

fn pt(x: i64) -> SitePoint {
    SitePoint { coords: vec![x] }
}

#[test]
fn long_range_mass_adds_to_short_range_mass() {
    let spec = TorusSpec::nearest(1, 3).unwrap();
    let g = SmallWorldGraph::from_matching(spec, vec![1, 0, 3, 2, 5, 4]).unwrap();
    let k = WalkKernel::simple(&spec, 0.3).unwrap();
    let row = step_distribution(&g, &k, 0);
    assert_eq!(row.len(), 2);
    assert!((row.iter().find(|r| r.0 == 1).unwrap().1 - 0.65).abs() < 1e-15);
    assert!((row.iter().find(|r| r.0 == 5).unwrap().1 - 0.35).abs() < 1e-15);
}

#[test]
fn zero_beta_is_the_torus_walk() {
    let spec = TorusSpec::nearest(2, 3).unwrap();
    let g = sample_small_world(spec, 4);
    let k = WalkKernel::simple(&spec, 0.0).unwrap();
    for x in 0..spec.num_sites() {
        let row = step_distribution(&g, &k, x);
        let mut nb = spec.short_range_indices(x);
        nb.sort();
        assert_eq!(row.iter().map(|r| r.0).collect::<Vec<_>>(), nb);
        assert!(row.iter().all(|r| (r.1 - 0.25).abs() < 1e-15));
    }
}

#[test]
fn stationarity_checks() {
    let spec = TorusSpec::new(2, 3, 2).unwrap();
    let g = sample_small_world(spec, 1);
    assert!(stationary_check(&g, &WalkKernel::simple(&spec, 0.2).unwrap()));
    let ring = TorusSpec::nearest(1, 2).unwrap();
    let bad = SmallWorldGraph::from_matching_unchecked(ring, vec![1, 2, 3, 0]);
    assert!(!stationary_check(&bad, &WalkKernel::simple(&ring, 0.5).unwrap()));
}

#[test]
fn antipodal_meeting_matches_pair_chain() {
    let spec = TorusSpec::nearest(1, 2).unwrap();
    let g = sample_small_world(spec, 21);
    let k = WalkKernel::simple(&spec, 0.0).unwrap();
    let oracle = common::pair_meeting_means(&common::kernel_rows(&g, &k))[2];
    assert!((oracle - 2.0).abs() < 1e-12);
    let v: Vec<f64> = experiment(spec, 0.0, PassageKind::Meeting, StartSpec::Distant, 21, 100_000, 3)
        .run()
        .unwrap()
        .iter()
        .map(|s| s.value)
        .collect();
    let (m, se) = common::mean_and_se(&v);
    assert!((m - oracle).abs() <= 3.0 * se, "{m} +- {se}");
}

#[test]
fn meeting_on_a_random_small_world_matches_pair_chain() {
    let spec = TorusSpec::nearest(1, 4).unwrap();
    let g = sample_small_world(spec, 5);
    let k = WalkKernel::simple(&spec, 0.3).unwrap();
    let oracle = common::pair_meeting_means(&common::kernel_rows(&g, &k));
    let start = StartSpec::Explicit { x: pt(0), y: pt(3) };
    let v: Vec<f64> = experiment(spec, 0.3, PassageKind::Meeting, start, 5, 50_000, 8)
        .run()
        .unwrap()
        .iter()
        .map(|s| s.value)
        .collect();
    let (m, se) = common::mean_and_se(&v);
    let want = oracle[3];
    assert!((m - want).abs() <= 3.0 * se, "{m} +- {se} vs {want}");
}

#[test]
fn kac_return_time() {
    let spec = TorusSpec::nearest(1, 2).unwrap();
    let g = sample_small_world(spec, 0);
    let k = WalkKernel::simple(&spec, 0.0).unwrap();
    let rows = common::kernel_rows(&g, &k);
    assert!((common::hitting_means(&rows, 0)[0] - 4.0).abs() < 1e-12);
    let start = StartSpec::Explicit { x: pt(0), y: pt(0) };
    let v: Vec<f64> = experiment(spec, 0.0, PassageKind::Hitting, start, 0, 100_000, 12)
        .run()
        .unwrap()
        .iter()
        .map(|s| s.value)
        .collect();
    let (m, se) = common::mean_and_se(&v);
    assert!((m - 4.0).abs() <= 3.0 * se, "{m} +- {se}");
}

#[test]
fn hitting_means_match_the_linear_system() {
    let spec = TorusSpec::nearest(1, 4).unwrap();
    let g = sample_small_world(spec, 17);
    let k = WalkKernel::simple(&spec, 0.3).unwrap();
    let oracle = common::hitting_means(&common::kernel_rows(&g, &k), 0);
    let start = StartSpec::Explicit { x: pt(3), y: pt(0) };
    let v: Vec<f64> = experiment(spec, 0.3, PassageKind::Hitting, start, 17, 50_000, 13)
        .run()
        .unwrap()
        .iter()
        .map(|s| s.value)
        .collect();
    let (m, se) = common::mean_and_se(&v);
    assert!((m - oracle[3]).abs() <= 3.0 * se, "{m} +- {se} vs {}", oracle[3]);
}

#[test]
fn jump_counts_are_poisson() {
    let spec = TorusSpec::nearest(1, 8).unwrap();
    let g = sample_small_world(spec, 2);
    let sampler = KernelSampler::new(&g, &WalkKernel::simple(&spec, 0.3).unwrap());
    let bins = 13;
    let mut counts = vec![0u64; bins];
    let reps = 100_000;
    for i in 0..reps {
        let mut rng = rng_from_seed(derive_seed(99, 0, i));
        let jumps = sample_path(&sampler, TimeModel::Continuous, 0, 5.0, &mut rng).len() - 1;
        counts[jumps.min(bins - 1)] += 1;
    }
    let pois = Poisson::new(5.0).unwrap();
    let mut probs: Vec<f64> = (0..bins as u64 - 1).map(|k| pois.pmf(k)).collect();
    probs.push(1.0 - probs.iter().sum::<f64>());
    let stat: f64 = counts
        .iter()
        .zip(&probs)
        .map(|(&o, &p)| (o as f64 - p * reps as f64).powi(2) / (p * reps as f64))
        .sum();
    let p_value = 1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(stat);
    assert!(p_value > 0.01, "chi2 = {stat}, p = {p_value}");
}

#[test]
fn meeting_time_is_exchangeable() {
    let spec = TorusSpec::nearest(1, 16).unwrap();
    let run = |x, y, seed| {
        let s = experiment(spec, 0.3, PassageKind::Meeting, StartSpec::Explicit { x: pt(x), y: pt(y) }, 6, 10_000, seed)
            .run()
            .unwrap();
        EmpiricalDistribution::new(s.iter().map(|m| (m.value, m.censored)))
    };
    let a = run(0, 7, 1);
    let b = run(7, 0, 2);
    let ks = two_sample_ks(&a, &b);
    assert!(ks <= two_sample_critical(a.len(), b.len(), 0.01), "ks = {ks}");
}

#[test]
fn runs_are_reproducible() {
    let spec = TorusSpec::nearest(1, 8).unwrap();
    let mut e = experiment(spec, 0.3, PassageKind::Meeting, StartSpec::Uniform, 0, 200, 42);
    e.graph_mode = GraphMode::Annealed;
    assert_eq!(e.run().unwrap(), e.run().unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn step_distribution_is_a_probability(d in 1usize..=2, l in 1u32..=5, m in 1u32..=2, beta in 0.0f64..=1.0, seed in any::<u64>(), lazy in any::<bool>()) {
        let spec = TorusSpec::new(d, l, m).unwrap();
        let g = sample_small_world(spec, seed);
        let mut k = WalkKernel::simple(&spec, beta).unwrap();
        if lazy {
            k = k.lazy();
        }
        for x in 0..spec.num_sites() {
            let row = step_distribution(&g, &k, x);
            prop_assert!(row.iter().all(|r| r.1 >= 0.0));
            prop_assert!((row.iter().map(|r| r.1).sum::<f64>() - 1.0).abs() < 1e-12);
        }
        prop_assert!(stationary_check(&g, &k));
    }
}
