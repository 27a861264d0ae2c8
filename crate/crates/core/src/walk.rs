//! Random-walk kernels on small worlds and samplers for meeting and hitting
//! times.
//!
//! The kernel is `P_S = (1 - beta) Delta + beta A_S`: with probability
//! `beta` the walker crosses its long-range edge, otherwise it takes a
//! `Delta`-distributed short-range step. Continuous time runs each walker on
//! its own rate-1 Poisson clock; all event times are jump epochs of the
//! pair, so meetings are checked exactly.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{derive_seed, replicate, rng_from_seed, DOMAIN_GRAPH, DOMAIN_START, DOMAIN_WALK};
use crate::topology::{sample_small_world, Neighbourhood, SitePoint, SmallWorldGraph, TorusSpec};

/// Default horizon, in multiples of the site count.
pub const DEFAULT_HORIZON_FACTOR: f64 = 50.0;

const TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WalkError {
    #[error("beta must lie in [0, 1], got {0}")]
    InvalidBeta(f64),
    #[error("invalid offset law: {0}")]
    InvalidDelta(String),
    #[error("start separation {got} is below the required {need}")]
    StartsTooClose { got: u64, need: u64 },
    #[error("invalid experiment: {0}")]
    InvalidExperiment(String),
}

/// The pair `(Delta, beta)`, optionally made lazy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkKernel {
    beta: f64,
    delta: Vec<(Vec<i64>, f64)>,
    lazy: bool,
}

impl WalkKernel {
    /// Validates symmetry, normalisation and support of `delta`.
    pub fn new(spec: &TorusSpec, beta: f64, delta: Vec<(Vec<i64>, f64)>) -> Result<Self, WalkError> {
        if !(0.0..=1.0).contains(&beta) || beta.is_nan() {
            return Err(WalkError::InvalidBeta(beta));
        }
        let mut merged: BTreeMap<Vec<i64>, f64> = BTreeMap::new();
        for (z, q) in &delta {
            if z.len() != spec.d {
                return Err(WalkError::InvalidDelta(format!("offset {z:?} has wrong dimension")));
            }
            if !(*q >= 0.0) {
                return Err(WalkError::InvalidDelta(format!("negative mass at {z:?}")));
            }
            let inside = match spec.neighbourhood() {
                Neighbourhood::Nearest => z.iter().map(|c| c.unsigned_abs()).sum::<u64>() <= 1,
                Neighbourhood::Box(m) => z.iter().all(|c| c.unsigned_abs() <= m as u64),
            };
            if !inside {
                return Err(WalkError::InvalidDelta(format!("offset {z:?} outside the neighbourhood")));
            }
            *merged.entry(z.clone()).or_insert(0.0) += q;
        }
        let total: f64 = merged.values().sum();
        if (total - 1.0).abs() > TOL {
            return Err(WalkError::InvalidDelta(format!("masses sum to {total}")));
        }
        for (z, q) in &merged {
            let neg: Vec<i64> = z.iter().map(|c| -c).collect();
            let q_neg = merged.get(&neg).copied().unwrap_or(0.0);
            if (q - q_neg).abs() > TOL {
                return Err(WalkError::InvalidDelta(format!("q({z:?}) != q(-z)")));
            }
        }
        Ok(WalkKernel {
            beta,
            delta: merged.into_iter().filter(|(_, q)| *q > 0.0).collect(),
            lazy: false,
        })
    }

    /// Uniform `Delta` on `N(0)`, or on `N_m^inf(0)` for `m >= 2`.
    pub fn simple(spec: &TorusSpec, beta: f64) -> Result<Self, WalkError> {
        let offsets = spec.neighbour_offsets();
        let q = 1.0 / offsets.len() as f64;
        Self::new(spec, beta, offsets.into_iter().map(|z| (z, q)).collect())
    }

    /// `(I + P) / 2`.
    pub fn lazy(mut self) -> Self {
        self.lazy = true;
        self
    }

    pub fn is_lazy(&self) -> bool {
        self.lazy
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn delta(&self) -> &[(Vec<i64>, f64)] {
        &self.delta
    }

    /// Every one-step move with its total probability: short-range offsets
    /// (the zero offset means "stay") and the long-range weight.
    pub fn moves(&self) -> (Vec<(Vec<i64>, f64)>, f64) {
        let scale = if self.lazy { 0.5 } else { 1.0 };
        let d = self.delta.first().map_or(0, |(z, _)| z.len());
        let mut short: Vec<(Vec<i64>, f64)> = self
            .delta
            .iter()
            .map(|(z, q)| (z.clone(), scale * (1.0 - self.beta) * q))
            .collect();
        if self.lazy {
            match short.iter_mut().find(|(z, _)| z.iter().all(|&c| c == 0)) {
                Some(entry) => entry.1 += 0.5,
                None => short.push((vec![0; d], 0.5)),
            }
        }
        (short, scale * self.beta)
    }
}

/// Discrete steps or independent rate-1 Poisson clocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeModel {
    Discrete,
    Continuous,
}

/// Precomputed move table for drawing single steps of `P_S`.
#[derive(Debug, Clone)]
pub struct KernelSampler<'a> {
    graph: &'a SmallWorldGraph,
    moves: Vec<Move>,
    cumulative: Vec<f64>,
}

#[derive(Debug, Clone)]
enum Move {
    Stay,
    Shift(Vec<i64>),
    Long,
}

impl<'a> KernelSampler<'a> {
    pub fn new(graph: &'a SmallWorldGraph, kernel: &WalkKernel) -> Self {
        let (short, long) = kernel.moves();
        let mut moves = Vec::new();
        let mut cumulative = Vec::new();
        let mut acc = 0.0;
        for (z, w) in short {
            if w <= 0.0 {
                continue;
            }
            acc += w;
            moves.push(if z.iter().all(|&c| c == 0) { Move::Stay } else { Move::Shift(z) });
            cumulative.push(acc);
        }
        if long > 0.0 {
            acc += long;
            moves.push(Move::Long);
            cumulative.push(acc);
        }
        // guard against rounding in the last bucket
        if let Some(last) = cumulative.last_mut() {
            *last = f64::INFINITY;
        }
        KernelSampler { graph, moves, cumulative }
    }

    pub fn graph(&self) -> &SmallWorldGraph {
        self.graph
    }

    /// One step of `P_S` from site `x`.
    #[inline]
    pub fn step<R: Rng + ?Sized>(&self, x: usize, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let k = self.cumulative.iter().position(|&c| u < c).unwrap_or(0);
        match &self.moves[k] {
            Move::Stay => x,
            Move::Shift(z) => self.graph.spec().translate(x, z),
            Move::Long => self.graph.long_range(x),
        }
    }
}

/// Row `x` of `P_S` as `(site, mass)` pairs sorted by site; coinciding
/// targets have their masses added.
pub fn step_distribution(g: &SmallWorldGraph, kernel: &WalkKernel, x: usize) -> Vec<(usize, f64)> {
    let spec = g.spec();
    let (short, long) = kernel.moves();
    let mut row: BTreeMap<usize, f64> = BTreeMap::new();
    for (z, w) in short {
        *row.entry(spec.translate(x, &z)).or_insert(0.0) += w;
    }
    if long > 0.0 {
        *row.entry(g.long_range(x)).or_insert(0.0) += long;
    }
    row.into_iter().collect()
}

/// True iff `P_S` is stochastic, doubly stochastic and symmetric to `1e-12`.
pub fn stationary_check(g: &SmallWorldGraph, kernel: &WalkKernel) -> bool {
    let n = g.num_sites();
    if g.matching().iter().any(|&y| y as usize >= n) {
        return false;
    }
    let mut col = vec![0.0f64; n];
    let rows: Vec<Vec<(usize, f64)>> = (0..n).map(|x| step_distribution(g, kernel, x)).collect();
    for (x, row) in rows.iter().enumerate() {
        let s: f64 = row.iter().map(|(_, p)| p).sum();
        if (s - 1.0).abs() > TOL || row.iter().any(|&(_, p)| p < 0.0) {
            return false;
        }
        for &(y, p) in row {
            col[y] += p;
            let back = rows[y]
                .binary_search_by_key(&x, |&(z, _)| z)
                .map_or(0.0, |i| rows[y][i].1);
            if (p - back).abs() > TOL {
                return false;
            }
        }
    }
    col.iter().all(|c| (c - 1.0).abs() <= TOL)
}

/// One observation of `T_L` or `W_L`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeetingSample {
    pub value: f64,
    pub rescaled: f64,
    pub start_x: SitePoint,
    pub start_y: SitePoint,
    pub seed: u64,
    pub graph_seed: u64,
    pub censored: bool,
}

/// Horizon in time units (steps or continuous time).
pub fn default_horizon(spec: &TorusSpec) -> f64 {
    DEFAULT_HORIZON_FACTOR * spec.num_sites() as f64
}

/// Raw first-passage outcome: time and whether the horizon was hit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Passage {
    pub time: f64,
    pub censored: bool,
}

/// First strictly positive jump epoch at which two independent walkers from
/// `x` and `y` occupy the same site.
pub fn meeting_passage<R: Rng + ?Sized>(
    sampler: &KernelSampler<'_>,
    model: TimeModel,
    x: usize,
    y: usize,
    horizon: f64,
    rng: &mut R,
) -> Passage {
    let (mut a, mut b) = (x, y);
    match model {
        TimeModel::Continuous => {
            let mut t = 0.0;
            loop {
                let e: f64 = rng.sample(Exp1);
                t += 0.5 * e;
                if t > horizon {
                    return Passage { time: horizon, censored: true };
                }
                if rng.random::<bool>() {
                    a = sampler.step(a, rng);
                } else {
                    b = sampler.step(b, rng);
                }
                if a == b {
                    return Passage { time: t, censored: false };
                }
            }
        }
        TimeModel::Discrete => {
            let cap = horizon.floor() as u64;
            for n in 1..=cap {
                a = sampler.step(a, rng);
                b = sampler.step(b, rng);
                if a == b {
                    return Passage { time: n as f64, censored: false };
                }
            }
            Passage { time: horizon, censored: true }
        }
    }
}

/// First strictly positive jump epoch at which one walker from `x` sits at
/// `target`.
pub fn hitting_passage<R: Rng + ?Sized>(
    sampler: &KernelSampler<'_>,
    model: TimeModel,
    x: usize,
    target: usize,
    horizon: f64,
    rng: &mut R,
) -> Passage {
    let mut a = x;
    let mut t = 0.0;
    loop {
        t += match model {
            TimeModel::Continuous => rng.sample::<f64, _>(Exp1),
            TimeModel::Discrete => 1.0,
        };
        if t > horizon {
            return Passage { time: horizon, censored: true };
        }
        a = sampler.step(a, rng);
        if a == target {
            return Passage { time: t, censored: false };
        }
    }
}

/// Jump epochs and positions of one walker from `x` up to time `t_end`,
/// starting with `(0, x)`.
pub fn sample_path<R: Rng + ?Sized>(
    sampler: &KernelSampler<'_>,
    model: TimeModel,
    x: usize,
    t_end: f64,
    rng: &mut R,
) -> Vec<(f64, usize)> {
    let mut path = vec![(0.0, x)];
    let mut a = x;
    let mut t = 0.0;
    loop {
        t += match model {
            TimeModel::Continuous => rng.sample::<f64, _>(Exp1),
            TimeModel::Discrete => 1.0,
        };
        if t > t_end {
            return path;
        }
        a = sampler.step(a, rng);
        path.push((t, a));
    }
}

fn sample_from(
    g: &SmallWorldGraph,
    passage: Passage,
    x: usize,
    y: usize,
    seed: u64,
    graph_seed: u64,
) -> MeetingSample {
    let spec = g.spec();
    MeetingSample {
        value: passage.time,
        rescaled: passage.time / spec.num_sites() as f64,
        start_x: spec.point_of(x),
        start_y: spec.point_of(y),
        seed,
        graph_seed,
        censored: passage.censored,
    }
}

/// Meeting time `T_L` of walkers started at `x` and `y`.
pub fn sample_meeting_time(
    g: &SmallWorldGraph,
    kernel: &WalkKernel,
    model: TimeModel,
    x: &SitePoint,
    y: &SitePoint,
    seed: u64,
) -> MeetingSample {
    let spec = g.spec();
    let sampler = KernelSampler::new(g, kernel);
    let (xi, yi) = (spec.index_of(x), spec.index_of(y));
    let mut rng = rng_from_seed(seed);
    let p = meeting_passage(&sampler, model, xi, yi, default_horizon(spec), &mut rng);
    sample_from(g, p, xi, yi, seed, 0)
}

/// Hitting time `W_L` of the origin for a walker started at `x`.
pub fn sample_hitting_time(
    g: &SmallWorldGraph,
    kernel: &WalkKernel,
    model: TimeModel,
    x: &SitePoint,
    seed: u64,
) -> MeetingSample {
    let spec = g.spec();
    let sampler = KernelSampler::new(g, kernel);
    let xi = spec.index_of(x);
    let mut rng = rng_from_seed(seed);
    let p = hitting_passage(&sampler, model, xi, 0, default_horizon(spec), &mut rng);
    sample_from(g, p, xi, 0, seed, 0)
}

/// `ceil((ln ln L)^2)`, zero when `ln ln L <= 0`.
pub fn separation_threshold(half_side: u32) -> u64 {
    let ll = (half_side as f64).ln().ln();
    if ll.is_nan() || ll <= 0.0 {
        0
    } else {
        (ll * ll).ceil() as u64
    }
}

/// The point `(-L, .., -L)`, at maximal torus distance from the origin.
pub fn antipode(spec: &TorusSpec) -> SitePoint {
    SitePoint {
        coords: vec![-(spec.half_side as i64); spec.d],
    }
}

/// How starting sites are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartSpec {
    /// Walkers at given sites; for hitting, `x` is the walker and the
    /// target is the origin.
    Explicit { x: SitePoint, y: SitePoint },
    /// Origin and its antipode.
    Distant,
    /// Independent uniform sites.
    Uniform,
}

/// Fixed graph (quenched) or a fresh graph per replica (annealed).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphMode {
    Annealed,
    Quenched { graph_seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassageKind {
    Meeting,
    Hitting,
}

/// A batch of independent replicas of `T_L` or `W_L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkExperiment {
    pub spec: TorusSpec,
    pub kernel: WalkKernel,
    pub time_model: TimeModel,
    pub kind: PassageKind,
    pub start: StartSpec,
    pub graph_mode: GraphMode,
    pub replicas: usize,
    pub master_seed: u64,
    pub horizon_factor: f64,
}

impl WalkExperiment {
    pub fn validate(&self) -> Result<(), WalkError> {
        if self.replicas == 0 {
            return Err(WalkError::InvalidExperiment("replicas must be positive".into()));
        }
        if !(self.horizon_factor > 0.0) {
            return Err(WalkError::InvalidExperiment("horizon factor must be positive".into()));
        }
        if let StartSpec::Explicit { x, y } = &self.start {
            for p in [x, y] {
                if p.coords.len() != self.spec.d {
                    return Err(WalkError::InvalidExperiment(format!("start {p} has wrong dimension")));
                }
            }
        }
        if self.start == StartSpec::Distant {
            let need = separation_threshold(self.spec.half_side);
            let got = self.spec.torus_distance(0, self.spec.index_of(&antipode(&self.spec)));
            if got < need {
                return Err(WalkError::StartsTooClose { got, need });
            }
        }
        Ok(())
    }

    /// Runs all replicas; results are in replica order.
    pub fn run(&self) -> Result<Vec<MeetingSample>, WalkError> {
        self.validate()?;
        let spec = self.spec;
        let horizon = self.horizon_factor * spec.num_sites() as f64;
        let fixed = match self.graph_mode {
            GraphMode::Quenched { graph_seed } => Some((sample_small_world(spec, graph_seed), graph_seed)),
            GraphMode::Annealed => None,
        };
        let out = replicate(self.replicas, |i| {
            let fresh;
            let (g, graph_seed) = match &fixed {
                Some((g, s)) => (g, *s),
                None => {
                    let s = derive_seed(self.master_seed, DOMAIN_GRAPH, i);
                    fresh = sample_small_world(spec, s);
                    (&fresh, s)
                }
            };
            let (x, y) = match &self.start {
                StartSpec::Explicit { x, y } => (spec.index_of(x), spec.index_of(y)),
                StartSpec::Distant => (0, spec.index_of(&antipode(&spec))),
                StartSpec::Uniform => {
                    let mut r = rng_from_seed(derive_seed(self.master_seed, DOMAIN_START, i));
                    let n = spec.num_sites();
                    (r.random_range(0..n), r.random_range(0..n))
                }
            };
            let seed = derive_seed(self.master_seed, DOMAIN_WALK, i);
            let mut rng = rng_from_seed(seed);
            let sampler = KernelSampler::new(g, &self.kernel);
            match self.kind {
                PassageKind::Meeting => {
                    let p = meeting_passage(&sampler, self.time_model, x, y, horizon, &mut rng);
                    sample_from(g, p, x, y, seed, graph_seed)
                }
                PassageKind::Hitting => {
                    // the target is always the origin
                    let walker = match self.start {
                        StartSpec::Distant => y,
                        _ => x,
                    };
                    let p = hitting_passage(&sampler, self.time_model, walker, 0, horizon, &mut rng);
                    sample_from(g, p, walker, 0, seed, graph_seed)
                }
            }
        });
        Ok(out)
    }
}

fn point_field(p: &SitePoint) -> String {
    p.coords
        .iter()
        .map(|c| c.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

/// Sample CSV; coordinates of multi-dimensional sites are `;`-separated.
pub fn samples_to_csv(name: &str, exp: &WalkExperiment, samples: &[MeetingSample]) -> String {
    let mut out = String::from(
        "experiment,replica,graph_seed,walk_seed,d,L,m,beta,x0,y0,raw_time,rescaled_time,censored\n",
    );
    for (i, s) in samples.iter().enumerate() {
        out.push_str(&format!(
            "{name},{i},{},{},{},{},{},{},{},{},{:e},{:e},{}\n",
            s.graph_seed,
            s.seed,
            exp.spec.d,
            exp.spec.half_side,
            exp.spec.m,
            exp.kernel.beta(),
            point_field(&s.start_x),
            point_field(&s.start_y),
            s.value,
            s.rescaled,
            s.censored
        ));
    }
    out
}
