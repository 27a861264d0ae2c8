//! Coalescing random walks on a small world and the Kingman reference law.
//!
//! Particles jump on independent rate-1 clocks with the kernel of
//! [`crate::walk`]; a particle landing on an occupied site merges with the
//! occupant. Rescaled by `s_L = (2L)^d G^ev_B(0)`, the particle count
//! approaches the Kingman pure-death chain, which drops from `j` to `j - 1`
//! at rate `j (j - 1) / 2`.

use rand::Rng;
use rand_distr::Exp1;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{derive_seed, replicate, rng_from_seed, DOMAIN_GRAPH, DOMAIN_START, DOMAIN_WALK};
use crate::stats::{dkw_epsilon, total_variation};
use crate::topology::{sample_small_world, SitePoint, SmallWorldGraph, TorusSpec};
use crate::walk::{separation_threshold, GraphMode, KernelSampler, TimeModel, WalkKernel, DEFAULT_HORIZON_FACTOR};

/// Largest `n` accepted by [`kingman_pmf`].
pub const KINGMAN_MAX_N: usize = 40;

const KINGMAN_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoalesceError {
    #[error("kingman_pmf needs 1 <= k <= n <= {KINGMAN_MAX_N}, got n = {n}, k = {k}")]
    OutOfRange { n: usize, k: usize },
    #[error("alternating sum for n = {n}, k = {k}, t = {t} may lose {predicted:e} to cancellation")]
    Precision { n: usize, k: usize, t: f64, predicted: f64 },
    #[error("invalid initial set: {0}")]
    InvalidStarts(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
}

fn ln_factorials(upto: usize) -> Vec<f64> {
    let mut out = vec![0.0; upto + 1];
    for i in 1..=upto {
        out[i] = out[i - 1] + (i as f64).ln();
    }
    out
}

/// `P_n(D_t = k)` for the Kingman coalescent started from `n` lineages.
///
/// The alternating sum is accumulated from log-space magnitudes with
/// compensated summation. The call fails when the predicted cancellation
/// error exceeds `1e-9`.
pub fn kingman_pmf(n: usize, k: usize, t: f64) -> Result<f64, CoalesceError> {
    if k == 0 || k > n || n > KINGMAN_MAX_N {
        return Err(CoalesceError::OutOfRange { n, k });
    }
    if !(t >= 0.0) {
        return Err(CoalesceError::InvalidPlan(format!("negative time {t}")));
    }
    if t == 0.0 {
        return Ok(if k == n { 1.0 } else { 0.0 });
    }
    let lf = ln_factorials(2 * n + 2);
    let ln_binom = |a: usize, b: usize| lf[a] - lf[b] - lf[a - b];
    let (mut sum, mut comp, mut abs_sum) = (0.0f64, 0.0f64, 0.0f64);
    for j in k..=n {
        let ln_mag = ((2 * j - 1) as f64).ln() + lf[j + k - 2] + ln_binom(n, j)
            - lf[k]
            - lf[k - 1]
            - lf[j - k]
            - ln_binom(n + j - 1, j)
            - t * (j * (j - 1) / 2) as f64;
        let mag = ln_mag.exp();
        let term = if (j + k) % 2 == 0 { mag } else { -mag };
        abs_sum += mag;
        let s = sum + term;
        if sum.abs() >= term.abs() {
            comp += (sum - s) + term;
        } else {
            comp += (term - s) + sum;
        }
        sum = s;
    }
    let value = sum + comp;
    // each magnitude carries a few ulps from exp/ln of sums of logs
    let predicted = abs_sum * 64.0 * f64::EPSILON;
    if predicted > KINGMAN_TOL {
        return Err(CoalesceError::Precision { n, k, t, predicted });
    }
    if (-KINGMAN_TOL..0.0).contains(&value) {
        Ok(0.0)
    } else if value > 1.0 && value <= 1.0 + KINGMAN_TOL {
        Ok(1.0)
    } else if !(0.0..=1.0).contains(&value) {
        Err(CoalesceError::Precision { n, k, t, predicted: (value - value.clamp(0.0, 1.0)).abs() })
    } else {
        Ok(value)
    }
}

/// `(q_{n,1}(t), .., q_{n,n}(t))`.
pub fn kingman_row(n: usize, t: f64) -> Result<Vec<f64>, CoalesceError> {
    (1..=n).map(|k| kingman_pmf(n, k, t)).collect()
}

/// Parameters of a coalescence experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub n: usize,
    /// Minimum pairwise torus distance `h_L`; starts must be strictly farther apart.
    pub h_l: u64,
    /// Time rescaling `s_L = (2L)^d G^ev_B(0)`.
    pub s_l: f64,
    pub t_grid: Vec<f64>,
    pub green_even: f64,
    /// Where `G^ev_B(0)` came from.
    pub green_source: String,
    /// `M^{4 h_L} / (2L)^d`; the limit theorem asks for this to vanish.
    pub hypothesis_ratio: f64,
    pub horizon_factor: f64,
}

impl ExperimentPlan {
    /// Plan with `h_L = ceil((ln ln L)^2)`.
    pub fn new(
        spec: &TorusSpec,
        n: usize,
        green_even: f64,
        green_source: impl Into<String>,
        t_grid: Vec<f64>,
    ) -> Result<Self, CoalesceError> {
        if n == 0 {
            return Err(CoalesceError::InvalidPlan("n must be positive".into()));
        }
        if !(green_even > 0.0) {
            return Err(CoalesceError::InvalidPlan(format!("G^ev = {green_even}")));
        }
        if t_grid.iter().any(|&t| !(t >= 0.0)) {
            return Err(CoalesceError::InvalidPlan("negative time in grid".into()));
        }
        let h_l = separation_threshold(spec.half_side);
        let sites = spec.num_sites() as f64;
        let hypothesis_ratio = (spec.big_m() as f64).powf(4.0 * h_l as f64) / sites;
        Ok(ExperimentPlan {
            n,
            h_l,
            s_l: sites * green_even,
            t_grid,
            green_even,
            green_source: green_source.into(),
            hypothesis_ratio,
            horizon_factor: DEFAULT_HORIZON_FACTOR,
        })
    }

    /// Fails when `hypothesis_ratio` exceeds `threshold`.
    pub fn enforce_hypothesis(&self, threshold: f64) -> Result<(), CoalesceError> {
        if self.hypothesis_ratio > threshold {
            return Err(CoalesceError::InvalidPlan(format!(
                "M^(4 h_L) / (2L)^d = {} exceeds {threshold}",
                self.hypothesis_ratio
            )));
        }
        Ok(())
    }
}

/// `n` sites evenly spaced along the first axis.
pub fn spread_starts(spec: &TorusSpec, n: usize) -> Vec<SitePoint> {
    let side = spec.side() as usize;
    (0..n)
        .map(|i| {
            let mut c = vec![0i64; spec.d];
            c[0] = (i * side / n.max(1)) as i64;
            spec.point(&c).expect("dimension matches")
        })
        .collect()
}

/// `n` uniform sites conditioned on pairwise distance above `h`, by
/// sequential rejection.
pub fn uniform_separated_starts<R: Rng + ?Sized>(
    spec: &TorusSpec,
    n: usize,
    h: u64,
    rng: &mut R,
    max_tries: usize,
) -> Result<Vec<SitePoint>, CoalesceError> {
    let sites = spec.num_sites();
    let mut chosen: Vec<usize> = Vec::with_capacity(n);
    let mut tries = 0;
    while chosen.len() < n {
        tries += 1;
        if tries > max_tries {
            return Err(CoalesceError::InvalidStarts(format!(
                "could not place {n} sites at separation > {h}"
            )));
        }
        let x = rng.random_range(0..sites);
        if chosen.iter().all(|&y| spec.torus_distance(x, y) > h) {
            chosen.push(x);
        }
    }
    Ok(chosen.into_iter().map(|x| spec.point_of(x)).collect())
}

/// Checks distinctness and pairwise separation `> h`.
pub fn validate_starts(spec: &TorusSpec, starts: &[SitePoint], h: u64) -> Result<Vec<usize>, CoalesceError> {
    let idx: Vec<usize> = starts
        .iter()
        .map(|p| {
            if p.coords.len() != spec.d {
                Err(CoalesceError::InvalidStarts(format!("{p} has wrong dimension")))
            } else {
                Ok(spec.index_of(p))
            }
        })
        .collect::<Result<_, _>>()?;
    for i in 0..idx.len() {
        for j in 0..i {
            let dist = spec.torus_distance(idx[i], idx[j]);
            if dist == 0 || dist <= h {
                return Err(CoalesceError::InvalidStarts(format!(
                    "sites {} and {} are at distance {dist}, need > {h}",
                    starts[j], starts[i]
                )));
            }
        }
    }
    Ok(idx)
}

/// Count-versus-time path: `(time, count)` at time zero and after every
/// merge.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub events: Vec<(f64, usize)>,
    /// Stopped at the horizon (or the requested stop time) before a single
    /// lineage remained.
    pub censored: bool,
    pub stop_time: f64,
}

impl Trajectory {
    /// Count at time `t`; `None` past a censoring stop.
    pub fn count_at(&self, t: f64) -> Option<usize> {
        if t > self.stop_time && self.censored {
            return None;
        }
        let i = self.events.partition_point(|&(s, _)| s <= t);
        Some(self.events[i.max(1) - 1].1)
    }

    /// Time of full coalescence, if reached.
    pub fn coalescence_time(&self) -> Option<f64> {
        match self.events.last() {
            Some(&(t, 1)) if !self.censored => Some(t),
            _ => None,
        }
    }
}

/// Runs the coalescing system from `starts` until one lineage remains or
/// time `stop` passes.
pub fn coalesce_from<R: Rng + ?Sized>(
    sampler: &KernelSampler<'_>,
    model: TimeModel,
    starts: &[usize],
    stop: f64,
    rng: &mut R,
) -> Trajectory {
    let mut pos: Vec<usize> = starts.to_vec();
    let mut occupied: FxHashMap<usize, usize> = FxHashMap::default();
    for (slot, &x) in pos.iter().enumerate() {
        occupied.insert(x, slot);
    }
    let mut events = vec![(0.0, pos.len())];
    let mut t = 0.0;
    while pos.len() > 1 {
        match model {
            TimeModel::Continuous => {
                let e: f64 = rng.sample(Exp1);
                t += e / pos.len() as f64;
                if t > stop {
                    return Trajectory { events, censored: true, stop_time: stop };
                }
                let i = rng.random_range(0..pos.len());
                let from = pos[i];
                let to = sampler.step(from, rng);
                if to == from {
                    continue;
                }
                occupied.remove(&from);
                if occupied.contains_key(&to) {
                    let last = pos.len() - 1;
                    pos.swap_remove(i);
                    if i < last {
                        occupied.insert(pos[i], i);
                    }
                    events.push((t, pos.len()));
                } else {
                    pos[i] = to;
                    occupied.insert(to, i);
                }
            }
            TimeModel::Discrete => {
                t += 1.0;
                if t > stop {
                    return Trajectory { events, censored: true, stop_time: stop };
                }
                for p in pos.iter_mut() {
                    *p = sampler.step(*p, rng);
                }
                occupied.clear();
                let before = pos.len();
                pos.retain(|&x| occupied.insert(x, 0).is_none());
                for (slot, &x) in pos.iter().enumerate() {
                    occupied.insert(x, slot);
                }
                if pos.len() < before {
                    events.push((t, pos.len()));
                }
            }
        }
    }
    Trajectory { events, censored: false, stop_time: t }
}

/// One coalescing run with the default horizon `50 (2L)^d`.
pub fn sample_coalescing(
    g: &SmallWorldGraph,
    kernel: &WalkKernel,
    starts: &[SitePoint],
    plan: &ExperimentPlan,
    seed: u64,
) -> Result<Trajectory, CoalesceError> {
    let spec = g.spec();
    let idx = validate_starts(spec, starts, plan.h_l)?;
    let sampler = KernelSampler::new(g, kernel);
    let mut rng = rng_from_seed(seed);
    let horizon = plan.horizon_factor * spec.num_sites() as f64;
    Ok(coalesce_from(&sampler, TimeModel::Continuous, &idx, horizon, &mut rng))
}

/// Initial configuration of a coalescence experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartSet {
    Explicit(Vec<SitePoint>),
    /// Evenly spaced along the first axis.
    Spread,
    /// Fresh uniform separated sites per replica.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoalescenceExperiment {
    pub spec: TorusSpec,
    pub kernel: WalkKernel,
    pub time_model: TimeModel,
    pub starts: StartSet,
    pub plan: ExperimentPlan,
    pub graph_mode: GraphMode,
    pub replicas: usize,
    pub master_seed: u64,
    /// Stop each run at `s_L * max(t_grid)` instead of full coalescence.
    pub stop_at_grid_end: bool,
}

impl CoalescenceExperiment {
    /// Runs all replicas; trajectory times are raw (not rescaled).
    pub fn run(&self) -> Result<Vec<Trajectory>, CoalesceError> {
        if self.replicas == 0 {
            return Err(CoalesceError::InvalidPlan("replicas must be positive".into()));
        }
        let spec = self.spec;
        let fixed_starts = match &self.starts {
            StartSet::Explicit(s) => Some(validate_starts(&spec, s, self.plan.h_l)?),
            StartSet::Spread => Some(validate_starts(&spec, &spread_starts(&spec, self.plan.n), self.plan.h_l)?),
            StartSet::Uniform => None,
        };
        if let Some(s) = &fixed_starts {
            if s.len() != self.plan.n {
                return Err(CoalesceError::InvalidStarts(format!(
                    "{} sites given, plan has n = {}",
                    s.len(),
                    self.plan.n
                )));
            }
        }
        let fixed_graph = match self.graph_mode {
            GraphMode::Quenched { graph_seed } => Some(sample_small_world(spec, graph_seed)),
            GraphMode::Annealed => None,
        };
        let horizon = self.plan.horizon_factor * spec.num_sites() as f64;
        let t_max = self.plan.t_grid.iter().cloned().fold(0.0, f64::max);
        let stop = if self.stop_at_grid_end {
            (self.plan.s_l * t_max).min(horizon)
        } else {
            horizon
        };
        let results = replicate(self.replicas, |i| -> Result<Trajectory, CoalesceError> {
            let fresh;
            let g = match &fixed_graph {
                Some(g) => g,
                None => {
                    fresh = sample_small_world(spec, derive_seed(self.master_seed, DOMAIN_GRAPH, i));
                    &fresh
                }
            };
            let starts = match &fixed_starts {
                Some(s) => s.clone(),
                None => {
                    let mut r = rng_from_seed(derive_seed(self.master_seed, DOMAIN_START, i));
                    let pts = uniform_separated_starts(&spec, self.plan.n, self.plan.h_l, &mut r, 1_000_000)?;
                    pts.iter().map(|p| spec.index_of(p)).collect()
                }
            };
            let sampler = KernelSampler::new(g, &self.kernel);
            let mut rng = rng_from_seed(derive_seed(self.master_seed, DOMAIN_WALK, i));
            Ok(coalesce_from(&sampler, self.time_model, &starts, stop, &mut rng))
        });
        results.into_iter().collect()
    }
}

/// Empirical law of the count at rescaled time `t`, as `(pmf over 1..=n,
/// number of replicas without a count)`.
pub fn count_law(trajectories: &[Trajectory], n: usize, s_l: f64, t: f64) -> (Vec<f64>, usize) {
    let mut counts = vec![0usize; n];
    let mut missing = 0;
    for tr in trajectories {
        match tr.count_at(s_l * t) {
            Some(c) if (1..=n).contains(&c) => counts[c - 1] += 1,
            _ => missing += 1,
        }
    }
    let total = trajectories.len() as f64;
    (counts.into_iter().map(|c| c as f64 / total).collect(), missing)
}

/// Law of `|xi_{s_L t}(A)|` over `replicas` runs.
pub fn count_law_at(
    exp: &CoalescenceExperiment,
    t: f64,
) -> Result<(Vec<f64>, usize), CoalesceError> {
    let mut e = exp.clone();
    e.plan.t_grid = vec![t];
    e.stop_at_grid_end = true;
    let runs = e.run()?;
    Ok(count_law(&runs, e.plan.n, e.plan.s_l, t))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoalescenceSummary {
    pub n: usize,
    pub t_grid: Vec<f64>,
    pub empirical_pmf: Vec<Vec<f64>>,
    pub kingman_pmf: Vec<Vec<f64>>,
    pub tv_distance: Vec<f64>,
    pub dkw_eps: f64,
    pub censored: Vec<usize>,
    pub s_l: f64,
    pub green_source: String,
    pub hypothesis_ratio: f64,
}

/// Empirical count laws on the plan's grid next to the Kingman law.
pub fn summarize(plan: &ExperimentPlan, trajectories: &[Trajectory]) -> Result<CoalescenceSummary, CoalesceError> {
    let mut empirical = Vec::new();
    let mut kingman = Vec::new();
    let mut tv = Vec::new();
    let mut censored = Vec::new();
    for &t in &plan.t_grid {
        let (pmf, missing) = count_law(trajectories, plan.n, plan.s_l, t);
        let q = kingman_row(plan.n, t)?;
        tv.push(total_variation(&pmf, &q));
        empirical.push(pmf);
        kingman.push(q);
        censored.push(missing);
    }
    Ok(CoalescenceSummary {
        n: plan.n,
        t_grid: plan.t_grid.clone(),
        empirical_pmf: empirical,
        kingman_pmf: kingman,
        tv_distance: tv,
        dkw_eps: dkw_epsilon(trajectories.len(), 0.05),
        censored,
        s_l: plan.s_l,
        green_source: plan.green_source.clone(),
        hypothesis_ratio: plan.hypothesis_ratio,
    })
}

/// Trajectory CSV with columns `replica,event_time,count`.
pub fn trajectories_to_csv(trajectories: &[Trajectory]) -> String {
    let mut out = String::from("replica,event_time,count\n");
    for (r, tr) in trajectories.iter().enumerate() {
        for &(t, c) in &tr.events {
            out.push_str(&format!("{r},{t:e},{c}\n"));
        }
    }
    out
}
