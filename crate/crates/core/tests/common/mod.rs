//! Exact oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use smallworld::topology::SmallWorldGraph;
use smallworld::walk::{step_distribution, WalkKernel};

/// Dense kernel rows, built straight from the step distribution.
pub fn kernel_rows(g: &SmallWorldGraph, k: &WalkKernel) -> Vec<Vec<(usize, f64)>> {
    (0..g.num_sites()).map(|x| step_distribution(g, k, x)).collect()
}

/// `P(count = k at time t)` of the pure-death chain `j -> j-1` at rate
/// `j(j-1)/2`, by matrix exponential of its generator.
pub fn death_chain_row(n: usize, t: f64) -> Vec<f64> {
    let mut q = DMatrix::<f64>::zeros(n, n);
    for j in 2..=n {
        let rate = (j * (j - 1)) as f64 / 2.0;
        q[(j - 1, j - 1)] = -rate;
        q[(j - 1, j - 2)] = rate;
    }
    let p = (q * t).exp();
    (0..n).map(|k| p[(n - 1, k)]).collect()
}

/// Expected continuous-time meeting time of two independent rate-1 walkers,
/// for every ordered pair; entry `a * n + b`.
pub fn pair_meeting_means(rows: &[Vec<(usize, f64)>]) -> Vec<f64> {
    let n = rows.len();
    let states = n * n;
    let mut a = DMatrix::<f64>::identity(states, states);
    let mut rhs = DVector::<f64>::zeros(states);
    for x in 0..n {
        for y in 0..n {
            let s = x * n + y;
            if x == y {
                continue;
            }
            rhs[s] = 0.5;
            for &(x2, p) in &rows[x] {
                if x2 != y {
                    a[(s, x2 * n + y)] -= 0.5 * p;
                }
            }
            for &(y2, p) in &rows[y] {
                if y2 != x {
                    a[(s, x * n + y2)] -= 0.5 * p;
                }
            }
        }
    }
    a.lu().solve(&rhs).expect("nonsingular").iter().copied().collect()
}

/// Expected return time to site `target` for a rate-1 walker, from every
/// site: `E_x[W]` with `W` the first positive hitting time.
pub fn hitting_means(rows: &[Vec<(usize, f64)>], target: usize) -> Vec<f64> {
    let n = rows.len();
    let mut a = DMatrix::<f64>::identity(n, n);
    let rhs = DVector::<f64>::from_element(n, 1.0);
    for x in 0..n {
        for &(y, p) in &rows[x] {
            if y != target {
                a[(x, y)] -= p;
            }
        }
    }
    a.lu().solve(&rhs).expect("nonsingular").iter().copied().collect()
}

/// Expected full coalescence time of three coalescing rate-1 walkers from
/// `(a, b, c)`; clusters sharing a site move together.
pub fn triple_coalescence_mean(rows: &[Vec<(usize, f64)>], start: [usize; 3]) -> f64 {
    let n = rows.len();
    let idx = |s: [usize; 3]| (s[0] * n + s[1]) * n + s[2];
    let states = n * n * n;
    let mut a = DMatrix::<f64>::identity(states, states);
    let mut rhs = DVector::<f64>::zeros(states);
    for s0 in 0..n {
        for s1 in 0..n {
            for s2 in 0..n {
                let s = [s0, s1, s2];
                if s0 == s1 && s1 == s2 {
                    continue;
                }
                let mut sites: Vec<usize> = s.to_vec();
                sites.sort();
                sites.dedup();
                let k = sites.len() as f64;
                let i = idx(s);
                rhs[i] = 1.0 / k;
                for &site in &sites {
                    for &(to, p) in &rows[site] {
                        let next = s.map(|v| if v == site { to } else { v });
                        if !(next[0] == next[1] && next[1] == next[2]) {
                            a[(i, idx(next))] -= p / k;
                        }
                    }
                }
            }
        }
    }
    let sol = a.lu().solve(&rhs).expect("nonsingular");
    sol[idx(start)]
}

pub fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}
