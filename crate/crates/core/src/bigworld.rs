//! The big world: the deterministic free-product graph that every small
//! world looks like locally.
//!
//! Vertices are signed words `±(z_1, .., z_n)` of vectors in `Z^d` with
//! `z_j != 0` for `j < n`. Short-range moves add a neighbourhood offset to
//! the last component; the long-range move appends `0`, drops a trailing
//! `0`, or flips the sign of `(0)`.

use std::fmt;

use rustc_hash::FxHashMap;
use serde::Serialize;
use thiserror::Error;

use crate::topology::{Neighbourhood, SitePoint, SmallWorldGraph, TorusSpec};
use crate::walk::WalkKernel;

const OUTSIDE: u32 = u32::MAX;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BigWorldError {
    #[error("invalid address: {0}")]
    InvalidAddress(String),
    #[error("ball of radius {radius} exceeds the vertex cap {cap}")]
    BallTooLarge { radius: usize, cap: usize },
    #[error("tail extrapolation needs p[n0-2] > 0 (n0 = {0})")]
    DegenerateTail(usize),
    #[error("kernel offset {0:?} is not a neighbourhood offset")]
    KernelOutsideNeighbourhood(Vec<i64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Sign {
    Plus,
    Minus,
}

/// Canonically encoded big-world vertex: a sign and the flattened word.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BigWorldAddress {
    sign: Sign,
    dim: u16,
    word: Vec<i32>,
}

impl BigWorldAddress {
    pub fn new(sign: Sign, components: &[Vec<i64>]) -> Result<Self, BigWorldError> {
        let Some(first) = components.first() else {
            return Err(BigWorldError::InvalidAddress("empty word".into()));
        };
        let d = first.len();
        if d == 0 {
            return Err(BigWorldError::InvalidAddress("zero-dimensional component".into()));
        }
        let mut word = Vec::with_capacity(d * components.len());
        for (j, z) in components.iter().enumerate() {
            if z.len() != d {
                return Err(BigWorldError::InvalidAddress("ragged components".into()));
            }
            if j + 1 < components.len() && z.iter().all(|&c| c == 0) {
                return Err(BigWorldError::InvalidAddress(format!(
                    "component {j} is zero but not last"
                )));
            }
            for &c in z {
                word.push(i32::try_from(c).map_err(|_| {
                    BigWorldError::InvalidAddress(format!("coordinate {c} out of range"))
                })?);
            }
        }
        Ok(BigWorldAddress {
            sign,
            dim: d as u16,
            word,
        })
    }

    /// `+(0)` in dimension `d`.
    pub fn origin(d: usize) -> Self {
        BigWorldAddress {
            sign: Sign::Plus,
            dim: d as u16,
            word: vec![0; d],
        }
    }

    /// `+(x)` for a torus point in its canonical window.
    pub fn lift(x: &SitePoint) -> Self {
        BigWorldAddress {
            sign: Sign::Plus,
            dim: x.coords.len() as u16,
            word: x.coords.iter().map(|&c| c as i32).collect(),
        }
    }

    pub fn sign(&self) -> Sign {
        self.sign
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    /// Number of components `n`.
    pub fn len(&self) -> usize {
        self.word.len() / self.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.word.is_empty()
    }

    pub fn components(&self) -> impl Iterator<Item = &[i32]> {
        self.word.chunks_exact(self.dim())
    }

    pub fn last(&self) -> &[i32] {
        &self.word[self.word.len() - self.dim()..]
    }

    fn last_is_zero(&self) -> bool {
        self.last().iter().all(|&c| c == 0)
    }

    /// The unique long-range neighbour. This map is an involution.
    pub fn long_range_neighbour(&self) -> Self {
        let d = self.dim();
        let mut out = self.clone();
        if !self.last_is_zero() {
            out.word.extend(std::iter::repeat_n(0, d));
        } else if self.len() > 1 {
            out.word.truncate(self.word.len() - d);
        } else {
            out.sign = match self.sign {
                Sign::Plus => Sign::Minus,
                Sign::Minus => Sign::Plus,
            };
        }
        out
    }

    /// Adds `y` to the last component.
    pub fn shifted(&self, y: &[i64]) -> Self {
        let mut out = self.clone();
        let start = out.word.len() - self.dim();
        for (c, &dy) in out.word[start..].iter_mut().zip(y) {
            *c += dy as i32;
        }
        out
    }

    /// Short-range neighbours, one per neighbourhood offset.
    pub fn short_range_neighbours(&self, spec: &TorusSpec) -> Vec<Self> {
        spec.neighbour_offsets()
            .iter()
            .map(|y| self.shifted(y))
            .collect()
    }

    /// Graph distance to `+(0)`.
    pub fn norm(&self, spec: &TorusSpec) -> usize {
        let hop = |z: &[i32]| -> usize {
            match spec.neighbourhood() {
                Neighbourhood::Nearest => z.iter().map(|c| c.unsigned_abs() as usize).sum(),
                Neighbourhood::Box(m) => {
                    let inf = z.iter().map(|c| c.unsigned_abs()).max().unwrap_or(0);
                    inf.div_ceil(m) as usize
                }
            }
        };
        let steps: usize = self.components().map(hop).sum();
        steps + (self.len() - 1) + usize::from(self.sign == Sign::Minus)
    }
}

impl fmt::Display for BigWorldAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self.sign {
            Sign::Plus => '+',
            Sign::Minus => '-',
        };
        write!(f, "{s}(")?;
        for (j, z) in self.components().enumerate() {
            if j > 0 {
                write!(f, ",")?;
            }
            if z.len() == 1 {
                write!(f, "{}", z[0])?;
            } else {
                write!(f, "(")?;
                for (i, c) in z.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{c}")?;
                }
                write!(f, ")")?;
            }
        }
        write!(f, ")")
    }
}

/// A big-world ball with intra-ball adjacency.
///
/// Move `k < offsets.len()` is the short-range step by `offsets[k]`; the
/// last move is the long-range step. Neighbours outside the ball are
/// recorded as absent.
#[derive(Debug, Clone)]
pub struct Ball {
    spec: TorusSpec,
    radius: usize,
    offsets: Vec<Vec<i64>>,
    addresses: Vec<BigWorldAddress>,
    level: Vec<u16>,
    adjacency: Vec<u32>,
}

impl Ball {
    pub fn len(&self) -> usize {
        self.addresses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.addresses.is_empty()
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn addresses(&self) -> &[BigWorldAddress] {
        &self.addresses
    }

    pub fn center(&self) -> &BigWorldAddress {
        &self.addresses[0]
    }

    /// Distance of vertex `i` from the centre.
    pub fn level(&self, i: usize) -> usize {
        self.level[i] as usize
    }

    fn moves(&self) -> usize {
        self.offsets.len() + 1
    }

    /// Neighbours of vertex `i` inside the ball, by move.
    pub fn neighbours(&self, i: usize) -> impl Iterator<Item = Option<usize>> + '_ {
        let k = self.moves();
        self.adjacency[i * k..(i + 1) * k]
            .iter()
            .map(|&j| (j != OUTSIDE).then_some(j as usize))
    }

    pub fn index_of(&self, a: &BigWorldAddress) -> Option<usize> {
        self.addresses.iter().position(|b| b == a)
    }
}

/// All addresses within distance `radius` of `center`, breadth-first.
///
/// Fails with `BallTooLarge` as soon as more than `cap` vertices have been
/// discovered.
pub fn enumerate_ball(
    spec: &TorusSpec,
    center: &BigWorldAddress,
    radius: usize,
    cap: usize,
) -> Result<Ball, BigWorldError> {
    let offsets = spec.neighbour_offsets();
    let moves = offsets.len() + 1;
    let mut index: FxHashMap<BigWorldAddress, u32> = FxHashMap::default();
    let mut addresses = vec![center.clone()];
    let mut level = vec![0u16];
    index.insert(center.clone(), 0);
    let mut adjacency: Vec<u32> = Vec::new();
    let mut head = 0usize;
    while head < addresses.len() {
        let here = addresses[head].clone();
        let lvl = level[head] as usize;
        let neighbours = offsets
            .iter()
            .map(|y| here.shifted(y))
            .chain(std::iter::once(here.long_range_neighbour()));
        for nb in neighbours {
            let slot = match index.get(&nb) {
                Some(&j) => j,
                None if lvl < radius => {
                    let j = addresses.len();
                    if j >= cap {
                        return Err(BigWorldError::BallTooLarge { radius, cap });
                    }
                    index.insert(nb.clone(), j as u32);
                    addresses.push(nb);
                    level.push((lvl + 1) as u16);
                    j as u32
                }
                None => OUTSIDE,
            };
            adjacency.push(slot);
        }
        head += 1;
    }
    debug_assert_eq!(adjacency.len(), addresses.len() * moves);
    Ok(Ball {
        spec: *spec,
        radius,
        offsets,
        addresses,
        level,
        adjacency,
    })
}

/// Exact `n`-step return probabilities `p[n] = P^0(X_n = 0)` on the big
/// world, `0 <= n <= horizon`.
#[derive(Debug, Clone, Serialize)]
pub struct ReturnProbabilityTable {
    pub d: usize,
    pub m: u32,
    pub beta: f64,
    pub horizon: usize,
    pub probs: Vec<f64>,
    /// Mass that left the ball; it cannot contribute to any `p[n]` with
    /// `n <= horizon`.
    pub escaped_mass: f64,
}

impl ReturnProbabilityTable {
    /// Table carrying only `p[0] = 1`.
    pub fn trivial(d: usize, m: u32, beta: f64) -> Self {
        ReturnProbabilityTable {
            d,
            m,
            beta,
            horizon: 0,
            probs: vec![1.0],
            escaped_mass: 0.0,
        }
    }

    /// True when every odd-step probability vanishes.
    pub fn is_bipartite(&self) -> bool {
        self.probs.iter().skip(1).step_by(2).all(|&p| p == 0.0)
    }

    /// CSV with columns `n,p_n`; the header comment carries `d, m, beta, n0`.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# d={} m={} beta={} n0={}\nn,p_n\n",
            self.d, self.m, self.beta, self.horizon
        );
        for (n, p) in self.probs.iter().enumerate() {
            out.push_str(&format!("{n},{p:e}\n"));
        }
        out
    }
}

/// Radius needed so that every length-`horizon` path from the centre that
/// ends at a vertex at distance `target_norm` stays inside the ball.
pub fn required_radius(horizon: usize, target_norm: usize) -> usize {
    (horizon + target_norm).div_ceil(2)
}

fn move_weights(ball: &Ball, kernel: &WalkKernel) -> Result<Vec<(Option<usize>, f64)>, BigWorldError> {
    // (move index, or None for "stay"; weight)
    let (short, long) = kernel.moves();
    let mut weights = Vec::new();
    for (z, w) in short {
        if z.iter().all(|&c| c == 0) {
            weights.push((None, w));
            continue;
        }
        let k = ball
            .offsets
            .iter()
            .position(|y| *y == z)
            .ok_or(BigWorldError::KernelOutsideNeighbourhood(z))?;
        weights.push((Some(k), w));
    }
    weights.push((Some(ball.offsets.len()), long));
    Ok(weights)
}

/// Distribution-vector iteration over `ball`, recording at each step the
/// mass sitting on `target`. The ball must have radius at least
/// `required_radius(horizon, |target - centre|)`.
pub fn transition_probabilities_on_ball(
    ball: &Ball,
    kernel: &WalkKernel,
    target: usize,
    horizon: usize,
) -> Result<ReturnProbabilityTable, BigWorldError> {
    let target_norm = ball.level(target);
    let needed = required_radius(horizon, target_norm);
    if ball.radius < needed {
        return Err(BigWorldError::BallTooLarge {
            radius: needed,
            cap: ball.len(),
        });
    }
    let weights = move_weights(ball, kernel)?;
    let moves = ball.moves();
    let n = ball.len();
    let mut cur = vec![0.0f64; n];
    let mut next = vec![0.0f64; n];
    cur[0] = 1.0;
    let mut probs = Vec::with_capacity(horizon + 1);
    probs.push(cur[target]);
    let mut escaped = 0.0;
    // Vertices farther than this from the centre at step k cannot reach the
    // target by the horizon, so their mass is irrelevant.
    for step in 1..=horizon {
        let reach = (horizon - step + target_norm).min(ball.radius);
        let from_reach = (step - 1).min(ball.radius);
        for (i, &p) in cur.iter().enumerate() {
            if p == 0.0 || ball.level[i] as usize > from_reach {
                continue;
            }
            let row = &ball.adjacency[i * moves..(i + 1) * moves];
            for &(mv, w) in &weights {
                let j = match mv {
                    None => i as u32,
                    Some(k) => row[k],
                };
                if j == OUTSIDE || ball.level[j as usize] as usize > reach {
                    escaped += p * w;
                } else {
                    next[j as usize] += p * w;
                }
            }
        }
        std::mem::swap(&mut cur, &mut next);
        next.iter_mut().for_each(|v| *v = 0.0);
        probs.push(cur[target]);
    }
    Ok(ReturnProbabilityTable {
        d: ball.spec.d,
        m: ball.spec.m,
        beta: kernel.beta(),
        horizon,
        probs,
        escaped_mass: escaped,
    })
}

/// Exact return probabilities up to `horizon` for the big world of `spec`
/// with the given kernel.
pub fn return_probabilities(
    spec: &TorusSpec,
    kernel: &WalkKernel,
    horizon: usize,
    cap: usize,
) -> Result<ReturnProbabilityTable, BigWorldError> {
    let ball = enumerate_ball(
        spec,
        &BigWorldAddress::origin(spec.d),
        required_radius(horizon, 0),
        cap,
    )?;
    transition_probabilities_on_ball(&ball, kernel, 0, horizon)
}

/// `P^{+(x)}(X_n = 0)` for `n <= horizon`, computed as `P^0(X_n = +(x))`
/// (the walk is symmetric and the graph is a Cayley graph).
pub fn probabilities_from_lift(
    spec: &TorusSpec,
    kernel: &WalkKernel,
    x: &SitePoint,
    horizon: usize,
    cap: usize,
) -> Result<ReturnProbabilityTable, BigWorldError> {
    let lifted = BigWorldAddress::lift(x);
    let norm = lifted.norm(spec);
    let ball = enumerate_ball(
        spec,
        &BigWorldAddress::origin(spec.d),
        required_radius(horizon, norm),
        cap,
    )?;
    let target = ball
        .index_of(&lifted)
        .expect("the lift lies inside the ball by construction");
    transition_probabilities_on_ball(&ball, kernel, target, horizon)
}

fn neumaier_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Partial Green sum `sum_{n <= n0} p[n]` (even `n` only if `even_only`).
/// This is a certified lower bound for the full Green function.
pub fn partial_green(table: &ReturnProbabilityTable, even_only: bool) -> f64 {
    let step = if even_only { 2 } else { 1 };
    neumaier_sum(table.probs.iter().step_by(step).copied())
}

/// Partial sum plus a geometric tail extrapolated from the last two even
/// terms. The tail is a point estimate, not a bound.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GreenEstimate {
    pub partial_sum: f64,
    pub tail_estimate: f64,
    pub estimate: f64,
    /// Squared per-step decay ratio `p[n_e] / p[n_e - 2]`.
    pub rho_squared: f64,
}

pub fn extrapolated_green(
    table: &ReturnProbabilityTable,
    even_only: bool,
) -> Result<GreenEstimate, BigWorldError> {
    let partial = partial_green(table, even_only);
    let last_even = table.horizon - table.horizon % 2;
    if last_even < 2 || table.probs[last_even - 2] <= 0.0 {
        return Err(BigWorldError::DegenerateTail(table.horizon));
    }
    let rho2 = table.probs[last_even] / table.probs[last_even - 2];
    if !(0.0..1.0).contains(&rho2) {
        return Err(BigWorldError::DegenerateTail(table.horizon));
    }
    let tail = if even_only || table.is_bipartite() {
        // even terms beyond last_even
        let even_tail = table.probs[last_even] * rho2 / (1.0 - rho2);
        if table.horizon > last_even && !even_only {
            even_tail + table.probs[table.horizon] * rho2 / (1.0 - rho2)
        } else {
            even_tail
        }
    } else {
        let rho = rho2.sqrt();
        table.probs[table.horizon] * rho / (1.0 - rho)
    };
    Ok(GreenEstimate {
        partial_sum: partial,
        tail_estimate: tail,
        estimate: partial + tail,
        rho_squared: rho2,
    })
}

/// Image of a big-world address under the realization map onto `g`.
pub fn realize_phi(g: &SmallWorldGraph, a: &BigWorldAddress) -> SitePoint {
    g.spec().point_of(realize_phi_index(g, a))
}

pub fn realize_phi_index(g: &SmallWorldGraph, a: &BigWorldAddress) -> usize {
    let spec = g.spec();
    let mut comps = a.components();
    let first: Vec<i64> = comps
        .next()
        .expect("addresses have at least one component")
        .iter()
        .map(|&c| c as i64)
        .collect();
    let mut site = match a.sign() {
        Sign::Plus => spec.index_of_coords(&first),
        Sign::Minus => spec.translate(g.long_range(0), &first),
    };
    for z in comps {
        let z: Vec<i64> = z.iter().map(|&c| c as i64).collect();
        site = spec.translate(g.long_range(site), &z);
    }
    site
}
