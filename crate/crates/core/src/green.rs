//! Green functions: the lattice `Z^d`, the Phi-function calculus of free
//! products, and the big-world fixed point.
//!
//! For a walk with return generating function `G(z) = sum P(Y_n = 0) z^n`
//! the function `Phi` is defined implicitly by `G(z) = Phi(z G(z))`. The
//! big world is the free product of `Z^d` (weight `1 - beta`) with `Z_2`
//! (weight `beta`), and its Green function `t = G_B(0)` solves
//!
//! ```text
//! t = (1 + sqrt(1 + 4 beta^2 t^2)) / 2 + Phi_{Z^d}((1 - beta) t) - 1.
//! ```

use std::f64::consts::PI;
use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use serde::Serialize;
use thiserror::Error;

use crate::bigworld::{self, ReturnProbabilityTable};
use crate::topology::TorusSpec;
use crate::walk::WalkKernel;

/// Relative accuracy asked of lattice quadratures.
pub const LATTICE_TOL: f64 = 1e-6;

/// Ball cap used for the quick lower bound inside the solver.
const SOLVER_DP_CAP: usize = 200_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GreenError {
    #[error("the Green function diverges for d = {0}")]
    Divergent(usize),
    #[error("quadrature did not reach the target accuracy (last change {0:e})")]
    QuadratureFailure(f64),
    #[error("(1 - beta) t = {s} leaves the Phi domain [0, {s_max}]")]
    DomainExceeded { s: f64, s_max: f64 },
    #[error("no sign change of the fixed-point residual in [{lo}, {hi}]")]
    NoBracket { lo: f64, hi: f64 },
    #[error("beta must lie in (0, 1), got {0}")]
    InvalidBeta(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

fn gl(n: usize) -> GaussLegendre {
    GaussLegendre::new(NonZeroUsize::new(n).expect("positive degree"))
}

/// `exp(-x) I_0(x)` for `x >= 0`.
pub fn bessel_i0_scaled(x: f64) -> f64 {
    let x = x.abs();
    if x <= 20.0 {
        let q = 0.25 * x * x;
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1.0;
        while term > 1e-17 * sum {
            term *= q / (k * k);
            sum += term;
            k += 1.0;
        }
        sum * (-x).exp()
    } else {
        // asymptotic series, truncated at its smallest term
        let mut term = 1.0f64;
        let mut sum = 1.0;
        let mut k = 1.0f64;
        loop {
            let next = term * (2.0 * k - 1.0).powi(2) / (8.0 * k * x);
            if next >= term || next < 1e-17 * sum {
                break;
            }
            term = next;
            sum += term;
            k += 1.0;
        }
        sum / (2.0 * PI * x).sqrt()
    }
}

fn check_lattice_args(d: usize, z: f64) -> Result<(), GreenError> {
    if !(0.0..=1.0).contains(&z) {
        return Err(GreenError::InvalidArgument(format!("z = {z} outside [0, 1]")));
    }
    if d == 0 {
        return Err(GreenError::InvalidArgument("d = 0".into()));
    }
    if d <= 2 && z == 1.0 {
        return Err(GreenError::Divergent(d));
    }
    Ok(())
}

/// `G_{Z^d}(z) = int_0^inf exp(-t) I_0(z t / d)^d dt`.
///
/// Panels on `[0, 32]` plus the substitution `t = 32 / w^2` for the tail.
pub fn green_lattice_bessel(d: usize, z: f64) -> Result<f64, GreenError> {
    check_lattice_args(d, z)?;
    if z == 0.0 {
        return Ok(1.0);
    }
    let df = d as f64;
    let f = |t: f64| bessel_i0_scaled(z * t / df).powi(d as i32) * (-(1.0 - z) * t).exp();
    let rule = gl(40);
    let mut edges = vec![0.0, 0.5];
    while *edges.last().unwrap() < 32.0 {
        let e = edges.last().unwrap() * 2.0;
        edges.push(e);
    }
    let mut total: f64 = edges.windows(2).map(|w| rule.integrate(w[0], w[1], f)).sum();
    let t0 = 32.0;
    let tail = gl(80).integrate(0.0, 1.0, |w| {
        if w == 0.0 {
            return 0.0;
        }
        let t = t0 / (w * w);
        f(t) * 2.0 * t0 / (w * w * w)
    });
    total += tail;
    Ok(total)
}

/// Three-dimensional integral with one angle done in closed form and a
/// Duffy map at the corner; `nodes` sets the per-panel rule size.
fn green_z3_angular(z: f64, nodes: usize) -> f64 {
    let third = 1.0 / 3.0;
    let inner = |t1: f64, t2: f64| {
        let a = 1.0 - z * third * (t1.cos() + t2.cos());
        let b = z * third;
        // a^2 - b^2 = (a - b)(a + b), with a - b in cancellation-free form
        let s1 = (0.5 * t1).sin();
        let s2 = (0.5 * t2).sin();
        let a_minus_b = (1.0 - z) + z * third * 2.0 * (s1 * s1 + s2 * s2);
        1.0 / (a_minus_b * (a + b)).sqrt()
    };
    let ru = gl(nodes);
    let rv = gl(nodes + 8);
    let mut edges = vec![0.0];
    for k in (0..=16).rev() {
        edges.push(PI / 2f64.powi(k));
    }
    let mut total = 0.0;
    for w in edges.windows(2) {
        total += ru.integrate(w[0], w[1], |u| u * rv.integrate(0.0, 1.0, |v| inner(u, u * v)));
    }
    2.0 / (PI * PI) * total
}

/// `G_{Z^d}(z)` for the simple random walk; `d >= 3`, or `z < 1`.
///
/// `d = 3` uses the angular quadrature, checked against a refined rule;
/// other dimensions use the Bessel route.
pub fn green_lattice(d: usize, z: f64) -> Result<f64, GreenError> {
    check_lattice_args(d, z)?;
    if z == 0.0 {
        return Ok(1.0);
    }
    if d != 3 {
        let coarse = green_lattice_bessel(d, z)?;
        return Ok(coarse);
    }
    let coarse = green_z3_angular(z, 24);
    let fine = green_z3_angular(z, 40);
    let change = ((fine - coarse) / fine).abs();
    if change > LATTICE_TOL {
        return Err(GreenError::QuadratureFailure(change));
    }
    Ok(fine)
}

/// `Phi_{Z_2}(t) = (1 + sqrt(1 + 4 t^2)) / 2`.
pub fn phi_z2(t: f64) -> f64 {
    0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt())
}

/// `Phi_Z(s) = sqrt(1 + s^2)`.
pub fn phi_z1(s: f64) -> f64 {
    (1.0 + s * s).sqrt()
}

/// Monotone cubic (Fritsch-Carlson) interpolant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    slope: Vec<f64>,
}

impl Pchip {
    /// `x` strictly increasing, at least two points.
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self, GreenError> {
        let n = x.len();
        if n < 2 || y.len() != n || x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(GreenError::InvalidArgument("pchip needs increasing abscissae".into()));
        }
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
        let mut slope = vec![0.0; n];
        for i in 1..n - 1 {
            if delta[i - 1] * delta[i] > 0.0 {
                let w1 = 2.0 * h[i] + h[i - 1];
                let w2 = h[i] + 2.0 * h[i - 1];
                slope[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
            }
        }
        let end = |h0: f64, h1: f64, d0: f64, d1: f64| {
            let s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
            if s * d0 <= 0.0 {
                0.0
            } else if d0 * d1 < 0.0 && s.abs() > (3.0 * d0).abs() {
                3.0 * d0
            } else {
                s
            }
        };
        if n == 2 {
            slope[0] = delta[0];
            slope[1] = delta[0];
        } else {
            slope[0] = end(h[0], h[1], delta[0], delta[1]);
            slope[n - 1] = end(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        Ok(Pchip { x, y, slope })
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let i = self.x.partition_point(|&v| v <= t).clamp(1, n - 1) - 1;
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let (h00, h10, h01, h11) = (
            (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s),
            s * (1.0 - s) * (1.0 - s),
            s * s * (3.0 - 2.0 * s),
            s * s * (s - 1.0),
        );
        h00 * self.y[i] + h10 * h * self.slope[i] + h01 * self.y[i + 1] + h11 * h * self.slope[i + 1]
    }
}

/// `Phi_{Z^d}`: closed form for `d = 1`, tabulated for `d >= 3`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum PhiFunction {
    Line,
    Table {
        d: usize,
        /// `(z, s = z G(z), Phi = G(z))` rows, `z` increasing.
        rows: Vec<(f64, f64, f64)>,
        s_max: f64,
        #[serde(skip)]
        interp: Pchip,
    },
}

impl PhiFunction {
    pub fn s_max(&self) -> f64 {
        match self {
            PhiFunction::Line => f64::INFINITY,
            PhiFunction::Table { s_max, .. } => *s_max,
        }
    }

    pub fn eval(&self, s: f64) -> Result<f64, GreenError> {
        if s < 0.0 {
            return Err(GreenError::InvalidArgument(format!("Phi at negative s = {s}")));
        }
        match self {
            PhiFunction::Line => Ok(phi_z1(s)),
            PhiFunction::Table { s_max, interp, .. } => {
                if s > *s_max {
                    Err(GreenError::DomainExceeded { s, s_max: *s_max })
                } else {
                    Ok(interp.eval(s))
                }
            }
        }
    }

    pub fn description(&self) -> String {
        match self {
            PhiFunction::Line => "closed form sqrt(1+s^2)".into(),
            PhiFunction::Table { d, rows, .. } => {
                format!("pchip table over {} z-nodes of the d={d} lattice Green function", rows.len())
            }
        }
    }

    /// Second differences of the tabulated `Phi` in `s` (empty for `d = 1`).
    pub fn second_differences(&self) -> Vec<f64> {
        match self {
            PhiFunction::Line => Vec::new(),
            PhiFunction::Table { rows, .. } => rows
                .windows(3)
                .map(|w| {
                    let (s0, s1, s2) = (w[0].1, w[1].1, w[2].1);
                    let (p0, p1, p2) = (w[0].2, w[1].2, w[2].2);
                    let d1 = (p1 - p0) / (s1 - s0);
                    let d2 = (p2 - p1) / (s2 - s1);
                    (d2 - d1) / (0.5 * (s2 - s0))
                })
                .collect(),
        }
    }
}

/// Default number of z-nodes in a Phi table.
pub const PHI_TABLE_NODES: usize = 160;

/// `Phi_{Z^d}`. Divergent for `d = 2`.
pub fn build_phi_lattice(d: usize) -> Result<PhiFunction, GreenError> {
    build_phi_lattice_with(d, PHI_TABLE_NODES)
}

/// As [`build_phi_lattice`] with `nodes` z-values, clustered at `z = 1`
/// through `z = 1 - (1 - u)^2` on a uniform `u`-grid.
pub fn build_phi_lattice_with(d: usize, nodes: usize) -> Result<PhiFunction, GreenError> {
    match d {
        0 => Err(GreenError::InvalidArgument("d = 0".into())),
        1 => Ok(PhiFunction::Line),
        2 => Err(GreenError::Divergent(2)),
        _ => {
            let mut rows = Vec::with_capacity(nodes + 1);
            for i in 0..=nodes {
                let u = i as f64 / nodes as f64;
                let z = 1.0 - (1.0 - u) * (1.0 - u);
                let g = green_lattice(d, z)?;
                rows.push((z, z * g, g));
            }
            let s_max = rows.last().unwrap().1;
            let interp = Pchip::new(rows.iter().map(|r| r.1).collect(), rows.iter().map(|r| r.2).collect())?;
            Ok(PhiFunction::Table { d, rows, s_max, interp })
        }
    }
}

/// Free-product composition: `Phi_B(t) = Phi_{Z_2}(beta t) + Phi((1 - beta) t) - 1`.
pub fn phi_bigworld(phi: &PhiFunction, beta: f64, t: f64) -> Result<f64, GreenError> {
    Ok(phi_z2(beta * t) + phi.eval((1.0 - beta) * t)? - 1.0)
}

/// How each constant in a [`GreenReport`] was obtained.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GreenMethods {
    pub lattice: String,
    pub bigworld: String,
    pub lower_bound: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GreenReport {
    pub d: usize,
    pub beta: f64,
    /// `G_{Z^d}(0)`; absent for recurrent dimensions.
    #[serde(rename = "G_torus_limit")]
    pub g_torus_limit: Option<f64>,
    #[serde(rename = "G_bigworld")]
    pub g_bigworld: f64,
    #[serde(rename = "G_bigworld_even")]
    pub g_bigworld_even: f64,
    /// `|t - Phi_B(t)|` at the root.
    pub residual: f64,
    /// Partial DP sum `sum_{n <= n0} p[n]`, a certified lower bound.
    pub dp_lower_bound: Option<f64>,
    pub dp_horizon: Option<usize>,
    pub methods: GreenMethods,
    /// Root exceeds both `1 / (1 - beta^2)` and the DP partial sum.
    pub lower_bound_check: bool,
}

/// Solver settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Horizon of the DP lower bound; `None` picks the largest even horizon
    /// whose ball fits a small cap.
    pub dp_horizon: Option<usize>,
    pub scan_points: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            dp_horizon: None,
            scan_points: 4000,
        }
    }
}

/// Upper bound `1 + M sum_{j<r} (M-1)^j` on the size of a big-world ball.
pub fn ball_size_bound(big_m: usize, radius: usize) -> f64 {
    let m = big_m as f64;
    1.0 + m * (0..radius).map(|j| (m - 1.0).powi(j as i32)).sum::<f64>()
}

fn default_dp_horizon(spec: &TorusSpec, cap: usize) -> usize {
    let mut r = 0;
    while r < 20 && ball_size_bound(spec.big_m(), r + 1) <= cap as f64 {
        r += 1;
    }
    2 * r
}

fn dp_table(d: usize, beta: f64, horizon: usize) -> Result<ReturnProbabilityTable, GreenError> {
    let spec = TorusSpec::nearest(d, 4).map_err(|e| GreenError::InvalidArgument(e.to_string()))?;
    let kernel = WalkKernel::simple(&spec, beta).map_err(|e| GreenError::InvalidArgument(e.to_string()))?;
    bigworld::return_probabilities(&spec, &kernel, horizon, usize::MAX)
        .map_err(|e| GreenError::InvalidArgument(e.to_string()))
}

/// Smallest root of `t = Phi_B(t)` at or above `lo`, by a forward scan for
/// the first sign change followed by bisection.
pub fn solve_fixed_point(
    phi: &PhiFunction,
    beta: f64,
    lo: f64,
    hi: f64,
    scan_points: usize,
) -> Result<f64, GreenError> {
    let residual = |t: f64| phi_bigworld(phi, beta, t).map(|v| v - t);
    if residual(lo)? < 0.0 {
        return Err(GreenError::NoBracket { lo, hi });
    }
    let h = (hi - lo) / scan_points as f64;
    let mut a = lo;
    let mut b = None;
    for k in 1..=scan_points {
        let t = lo + h * k as f64;
        if (1.0 - beta) * t > phi.s_max() {
            return Err(GreenError::DomainExceeded {
                s: (1.0 - beta) * t,
                s_max: phi.s_max(),
            });
        }
        if residual(t)? <= 0.0 {
            b = Some(t);
            break;
        }
        a = t;
    }
    let Some(mut b) = b else {
        return Err(GreenError::NoBracket { lo, hi });
    };
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if residual(mid)? > 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

/// `G_B(0)` from the free-product fixed point, validated against the DP.
pub fn solve_bigworld_green(d: usize, beta: f64) -> Result<GreenReport, GreenError> {
    let phi = build_phi_lattice(d)?;
    solve_bigworld_green_with(d, beta, &phi, SolveOptions::default())
}

/// As [`solve_bigworld_green`] with a prebuilt `Phi` and explicit options.
pub fn solve_bigworld_green_with(
    d: usize,
    beta: f64,
    phi: &PhiFunction,
    opts: SolveOptions,
) -> Result<GreenReport, GreenError> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(GreenError::InvalidBeta(beta));
    }
    let spec = TorusSpec::nearest(d, 4).map_err(|e| GreenError::InvalidArgument(e.to_string()))?;
    let horizon = opts
        .dp_horizon
        .unwrap_or_else(|| default_dp_horizon(&spec, SOLVER_DP_CAP));
    let table = dp_table(d, beta, horizon)?;
    let dp_lower = bigworld::partial_green(&table, false);
    let dp_estimate = bigworld::extrapolated_green(&table, false)
        .map(|g| g.estimate)
        .unwrap_or(dp_lower);
    let geometric = 1.0 / (1.0 - beta * beta);
    let lo = 1.0f64.max(geometric).max(dp_lower);
    let mut hi = 4.0 * dp_estimate.max(lo);
    if phi.s_max().is_finite() {
        hi = hi.min(phi.s_max() / (1.0 - beta));
    }
    let root = solve_fixed_point(phi, beta, lo, hi, opts.scan_points)?;
    let residual = (root - phi_bigworld(phi, beta, root)?).abs();
    let g_torus = match phi {
        PhiFunction::Line => None,
        PhiFunction::Table { s_max, .. } => Some(*s_max),
    };
    Ok(GreenReport {
        d,
        beta,
        g_torus_limit: g_torus,
        g_bigworld: root,
        g_bigworld_even: root / 2.0,
        residual,
        dp_lower_bound: Some(dp_lower),
        dp_horizon: Some(horizon),
        methods: GreenMethods {
            lattice: match phi {
                PhiFunction::Line => "not finite (recurrent)".into(),
                PhiFunction::Table { .. } => "angular Gauss-Legendre quadrature at z = 1".into(),
            },
            bigworld: format!(
                "smallest fixed point above the lower bound by scan and bisection; Phi: {}",
                phi.description()
            ),
            lower_bound: format!("big-world DP partial sum, n0 = {horizon}"),
        },
        lower_bound_check: root >= geometric && root >= dp_lower,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaScanRow {
    pub beta: f64,
    #[serde(rename = "G_lattice")]
    pub g_lattice: f64,
    #[serde(rename = "G_bigworld")]
    pub g_bigworld: f64,
    pub diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaScan {
    pub d: usize,
    pub rows: Vec<BetaScanRow>,
    /// Positive difference at the smallest and negative at the largest beta.
    pub signs_as_expected: bool,
    /// Interval containing the first sign change of the difference.
    pub crossing: Option<(f64, f64)>,
}

impl BetaScan {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("beta,G_lattice,G_bigworld,diff\n");
        for r in &self.rows {
            out.push_str(&format!("{},{:.12},{:.12},{:.12}\n", r.beta, r.g_lattice, r.g_bigworld, r.diff));
        }
        out
    }
}

/// `G_{Z^d}(0) - G_B(0)` across `betas` with the crossing refined to
/// `bracket_tol`.
pub fn beta_comparison_scan(d: usize, betas: &[f64], bracket_tol: f64) -> Result<BetaScan, GreenError> {
    if d < 3 {
        return Err(GreenError::Divergent(d));
    }
    if betas.is_empty() {
        return Err(GreenError::InvalidArgument("empty beta grid".into()));
    }
    let phi = build_phi_lattice(d)?;
    let g_lattice = phi.s_max();
    let opts = SolveOptions::default();
    let diff_at = |b: f64| -> Result<(f64, f64), GreenError> {
        let g = solve_bigworld_green_with(d, b, &phi, opts)?.g_bigworld;
        Ok((g, g_lattice - g))
    };
    let mut grid = betas.to_vec();
    grid.sort_by(f64::total_cmp);
    let mut rows = Vec::with_capacity(grid.len());
    for &b in &grid {
        let (g, diff) = diff_at(b)?;
        rows.push(BetaScanRow { beta: b, g_lattice, g_bigworld: g, diff });
    }
    let signs_as_expected = rows.first().unwrap().diff > 0.0 && rows.last().unwrap().diff < 0.0;
    let mut crossing = None;
    if let Some(w) = rows.windows(2).find(|w| w[0].diff > 0.0 && w[1].diff <= 0.0) {
        let (mut a, mut b) = (w[0].beta, w[1].beta);
        while b - a > bracket_tol {
            let mid = 0.5 * (a + b);
            if diff_at(mid)?.1 > 0.0 {
                a = mid;
            } else {
                b = mid;
            }
        }
        crossing = Some((a, b));
    }
    Ok(BetaScan { d, rows, signs_as_expected, crossing })
}
