use proptest::prelude::*;
use rand::Rng;
use smallworld::bigworld::{
    enumerate_ball, partial_green, probabilities_from_lift, realize_phi_index, return_probabilities,
    BigWorldAddress, Sign,
};
use smallworld::rng::{derive_seed, replicate, rng_from_seed};
use smallworld::topology::{sample_small_world, SitePoint, TorusSpec, DEFAULT_BALL_CAP};
use smallworld::walk::WalkKernel;

/// Return indicators of a big-world walk from the origin, steps 1..=n.
fn simulate_returns(spec: &TorusSpec, beta: f64, n: usize, seed: u64) -> Vec<bool> {
    let mut rng = rng_from_seed(seed);
    let origin = BigWorldAddress::origin(spec.d);
    let mut a = origin.clone();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        a = if rng.random::<f64>() < beta {
            a.long_range_neighbour()
        } else {
            let nb = a.short_range_neighbours(spec);
            let k = rng.random_range(0..nb.len());
            nb[k].clone()
        };
        out.push(a == origin);
    }
    out
}

#[test]
fn return_probabilities_match_monte_carlo() {
    let spec = TorusSpec::nearest(1, 4).unwrap();
    let beta = 0.3;
    let horizon = 10;
    let table = return_probabilities(&spec, &WalkKernel::simple(&spec, beta).unwrap(), horizon, DEFAULT_BALL_CAP).unwrap();
    let reps = 1_000_000;
    let runs = replicate(reps, |i| simulate_returns(&spec, beta, horizon, derive_seed(11, 0, i)));
    for n in 1..=horizon {
        let hits = runs.iter().filter(|r| r[n - 1]).count() as f64 / reps as f64;
        let p = table.probs[n];
        let se = (p * (1.0 - p) / reps as f64).sqrt();
        assert!((hits - p).abs() <= 3.0 * se + 1e-12, "n = {n}: mc {hits} vs {p}");
    }
}

#[test]
fn no_mass_escapes_within_the_exactness_horizon() {
    let spec = TorusSpec::nearest(2, 4).unwrap();
    let t = return_probabilities(&spec, &WalkKernel::simple(&spec, 0.4).unwrap(), 8, DEFAULT_BALL_CAP).unwrap();
    assert_eq!(t.probs[0], 1.0);
    assert!(t.probs.iter().skip(1).step_by(2).all(|&p| p == 0.0));
    assert!(t.probs.iter().all(|&p| (0.0..=1.0).contains(&p)));
}

#[test]
fn ball_sizes_and_degrees() {
    for (d, rmax) in [(1usize, 9usize), (2, 5), (3, 3)] {
        let spec = TorusSpec::nearest(d, 4).unwrap();
        let m = spec.big_m();
        for r in 0..=rmax {
            let ball = enumerate_ball(&spec, &BigWorldAddress::origin(d), r, DEFAULT_BALL_CAP).unwrap();
            assert!(ball.len() as f64 <= 3.0 * (m as f64).powi(r as i32));
            for i in 0..ball.len() {
                if ball.level(i) < r {
                    assert_eq!(ball.neighbours(i).filter(|n| n.is_some()).count(), m);
                }
            }
        }
    }
}

#[test]
fn lifted_green_sums_are_dominated_by_the_origin() {
    let spec = TorusSpec::nearest(1, 4).unwrap();
    let k = WalkKernel::simple(&spec, 0.5).unwrap();
    let g0 = partial_green(&return_probabilities(&spec, &k, 24, DEFAULT_BALL_CAP).unwrap(), true);
    for x in [1i64, 2, 3] {
        let p = SitePoint { coords: vec![x] };
        let tx = probabilities_from_lift(&spec, &k, &p, 24, DEFAULT_BALL_CAP).unwrap();
        for n in (0..=24).step_by(2) {
            assert!(tx.probs[n] <= return_probabilities(&spec, &k, 24, DEFAULT_BALL_CAP).unwrap().probs[n] + 1e-15);
        }
        assert!(partial_green(&tx, true) < g0);
    }
}

#[test]
fn realization_of_simple_addresses() {
    let spec = TorusSpec::nearest(1, 4).unwrap();
    let g = sample_small_world(spec, 9);
    for z in -4i64..4 {
        let a = BigWorldAddress::new(Sign::Plus, &[vec![z]]).unwrap();
        assert_eq!(realize_phi_index(&g, &a), spec.index_of_coords(&[z]));
    }
    let minus = BigWorldAddress::new(Sign::Minus, &[vec![0]]).unwrap();
    assert_eq!(realize_phi_index(&g, &minus), g.long_range(0));
}

fn address_strategy() -> impl Strategy<Value = BigWorldAddress> {
    (any::<bool>(), prop::collection::vec(-3i64..=3, 1..6)).prop_map(|(plus, word)| {
        let n = word.len();
        let comps: Vec<Vec<i64>> = word
            .into_iter()
            .enumerate()
            .map(|(j, z)| if j + 1 < n && z == 0 { vec![1] } else { vec![z] })
            .collect();
        let sign = if plus { Sign::Plus } else { Sign::Minus };
        BigWorldAddress::new(sign, &comps).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn long_range_neighbour_is_an_involution(a in address_strategy()) {
        prop_assert_eq!(a.long_range_neighbour().long_range_neighbour(), a);
    }

    #[test]
    fn phi_commutes_with_long_range(a in address_strategy(), seed in any::<u64>()) {
        let spec = TorusSpec::nearest(1, 5).unwrap();
        let g = sample_small_world(spec, seed);
        let x = realize_phi_index(&g, &a);
        prop_assert_eq!(realize_phi_index(&g, &a.long_range_neighbour()), g.long_range(x));
        for b in a.short_range_neighbours(&spec) {
            let y = realize_phi_index(&g, &b);
            prop_assert!(spec.short_range_indices(x).contains(&y));
        }
    }

    #[test]
    fn norm_changes_by_one_along_edges(a in address_strategy()) {
        let spec = TorusSpec::nearest(1, 5).unwrap();
        let n = a.norm(&spec) as i64;
        let lr = a.long_range_neighbour().norm(&spec) as i64;
        prop_assert_eq!((lr - n).abs(), 1);
        for b in a.short_range_neighbours(&spec) {
            prop_assert_eq!((b.norm(&spec) as i64 - n).abs(), 1);
        }
    }
}
