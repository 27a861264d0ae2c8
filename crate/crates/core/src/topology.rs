//! Discrete tori and small worlds built on them.
//!
//! A site of the torus `(Z mod 2L)^d` is stored as a single `u32` index using
//! a little-endian mixed-radix encoding of its coordinates reduced to
//! `[0, 2L)`: site `(c_0, .., c_{d-1})` has index `sum_i (c_i mod 2L) (2L)^i`.
//! The origin is therefore index 0, and CSV/JSON outputs that carry raw
//! indices stay portable.

use std::collections::{HashSet, VecDeque};
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bigworld::{self, BigWorldAddress};
use crate::rng::rng_from_seed;

/// Default vertex cap for big-world ball enumeration.
pub const DEFAULT_BALL_CAP: usize = 5_000_000;

/// Largest site count we allow; indices must fit in `u32`.
pub const MAX_SITES: usize = 1 << 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("invalid torus: {0}")]
    InvalidSpec(String),
    #[error("site {0} is outside the torus")]
    SiteOutOfRange(usize),
    #[error("matching is not a fixed-point-free involution: {0}")]
    InvalidMatching(String),
    #[error("ball of radius {radius} may hold up to {estimate} vertices, above the cap {cap}")]
    BallTooLarge {
        radius: usize,
        estimate: f64,
        cap: usize,
    },
    #[error("no matching without short-range pairs found in {0} attempts")]
    RejectionExhausted(usize),
    #[error("coordinate vector has {got} entries, torus dimension is {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Which deterministic neighbourhood the short-range edges use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Neighbourhood {
    /// `N(x)`: the `2d` sites at l1 distance one.
    Nearest,
    /// `N_m^inf(x)`: all sites at l-infinity distance at most `m`, `m >= 2`.
    Box(u32),
}

/// Torus `(Z mod 2L)^d` together with the neighbourhood radius `m`.
///
/// `m = 1` selects the nearest-neighbour structure, `m >= 2` the
/// l-infinity box of radius `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TorusSpec {
    pub d: usize,
    #[serde(rename = "L")]
    pub half_side: u32,
    #[serde(default = "default_radius")]
    pub m: u32,
}

fn default_radius() -> u32 {
    1
}

impl TorusSpec {
    pub fn new(d: usize, half_side: u32, m: u32) -> Result<Self, TopologyError> {
        let spec = TorusSpec { d, half_side, m };
        spec.validate()?;
        Ok(spec)
    }

    /// Nearest-neighbour torus.
    pub fn nearest(d: usize, half_side: u32) -> Result<Self, TopologyError> {
        Self::new(d, half_side, 1)
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        if self.d == 0 {
            return Err(TopologyError::InvalidSpec("d must be at least 1".into()));
        }
        if self.half_side == 0 {
            return Err(TopologyError::InvalidSpec("L must be at least 1".into()));
        }
        if self.m == 0 {
            return Err(TopologyError::InvalidSpec("m must be at least 1".into()));
        }
        let side = 2.0 * self.half_side as f64;
        if side.powi(self.d as i32) > MAX_SITES as f64 {
            return Err(TopologyError::InvalidSpec(format!(
                "(2L)^d = {} sites exceeds the supported maximum {MAX_SITES}",
                side.powi(self.d as i32)
            )));
        }
        Ok(())
    }

    pub fn side(&self) -> u32 {
        2 * self.half_side
    }

    pub fn num_sites(&self) -> usize {
        (self.side() as usize).pow(self.d as u32)
    }

    pub fn neighbourhood(&self) -> Neighbourhood {
        if self.m <= 1 {
            Neighbourhood::Nearest
        } else {
            Neighbourhood::Box(self.m)
        }
    }

    /// Number of deterministic neighbours plus one: `2d + 1` for the
    /// nearest-neighbour structure, `(2m + 1)^d` for the box.
    pub fn big_m(&self) -> usize {
        match self.neighbourhood() {
            Neighbourhood::Nearest => 2 * self.d + 1,
            Neighbourhood::Box(m) => ((2 * m + 1) as usize).pow(self.d as u32),
        }
    }

    /// Offsets `y` with `y` in `N(0)` (resp. `N_m^inf(0)`), as integer
    /// vectors in `Z^d`; the zero vector is excluded.
    pub fn neighbour_offsets(&self) -> Vec<Vec<i64>> {
        match self.neighbourhood() {
            Neighbourhood::Nearest => {
                let mut out = Vec::with_capacity(2 * self.d);
                for i in 0..self.d {
                    for s in [1i64, -1] {
                        let mut v = vec![0i64; self.d];
                        v[i] = s;
                        out.push(v);
                    }
                }
                out
            }
            Neighbourhood::Box(m) => {
                let m = m as i64;
                let width = (2 * m + 1) as usize;
                let total = width.pow(self.d as u32);
                let mut out = Vec::with_capacity(total - 1);
                for mut k in 0..total {
                    let mut v = vec![0i64; self.d];
                    for c in v.iter_mut() {
                        *c = (k % width) as i64 - m;
                        k /= width;
                    }
                    if v.iter().any(|&c| c != 0) {
                        out.push(v);
                    }
                }
                out
            }
        }
    }

    /// Canonical representative of `coords` in `[-L, L)^d`.
    pub fn point(&self, coords: &[i64]) -> Result<SitePoint, TopologyError> {
        if coords.len() != self.d {
            return Err(TopologyError::DimensionMismatch {
                expected: self.d,
                got: coords.len(),
            });
        }
        let l = self.half_side as i64;
        let side = self.side() as i64;
        Ok(SitePoint {
            coords: coords
                .iter()
                .map(|&c| (c + l).rem_euclid(side) - l)
                .collect(),
        })
    }

    pub fn origin(&self) -> SitePoint {
        SitePoint {
            coords: vec![0; self.d],
        }
    }

    pub fn index_of(&self, p: &SitePoint) -> usize {
        let side = self.side() as i64;
        let mut idx = 0usize;
        let mut stride = 1usize;
        for &c in &p.coords {
            idx += c.rem_euclid(side) as usize * stride;
            stride *= side as usize;
        }
        idx
    }

    /// Index of the site reached from the raw coordinates, reduced mod 2L.
    pub fn index_of_coords(&self, coords: &[i64]) -> usize {
        let side = self.side() as i64;
        let mut idx = 0usize;
        let mut stride = 1usize;
        for &c in coords {
            idx += c.rem_euclid(side) as usize * stride;
            stride *= side as usize;
        }
        idx
    }

    pub fn point_of(&self, index: usize) -> SitePoint {
        let side = self.side() as usize;
        let l = self.half_side as i64;
        let mut rem = index;
        let mut coords = Vec::with_capacity(self.d);
        for _ in 0..self.d {
            let u = (rem % side) as i64;
            rem /= side;
            coords.push(if u >= l { u - 2 * l } else { u });
        }
        SitePoint { coords }
    }

    /// Site index of `x + z` on the torus.
    pub fn translate(&self, x: usize, z: &[i64]) -> usize {
        let side = self.side() as usize;
        let side_i = side as i64;
        let mut rem = x;
        let mut idx = 0usize;
        let mut stride = 1usize;
        for &zi in z {
            let u = (rem % side) as i64;
            rem /= side;
            idx += (u + zi).rem_euclid(side_i) as usize * stride;
            stride *= side;
        }
        idx
    }

    /// Torus l1 distance `d(x, y)`.
    pub fn torus_distance(&self, x: usize, y: usize) -> u64 {
        let side = self.side() as usize;
        let (mut a, mut b) = (x, y);
        let mut total = 0u64;
        for _ in 0..self.d {
            let da = (a % side) as i64 - (b % side) as i64;
            let da = da.unsigned_abs();
            total += da.min(side as u64 - da);
            a /= side;
            b /= side;
        }
        total
    }

    /// Deduplicated short-range neighbours of `x`, excluding `x` itself.
    pub fn short_range_neighbours(&self, x: &SitePoint) -> Vec<SitePoint> {
        let xi = self.index_of(x);
        self.short_range_indices(xi)
            .into_iter()
            .map(|i| self.point_of(i))
            .collect()
    }

    /// Index form of [`TorusSpec::short_range_neighbours`], in offset order.
    pub fn short_range_indices(&self, x: usize) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        for z in self.neighbour_offsets() {
            let y = self.translate(x, &z);
            if y != x && !out.contains(&y) {
                out.push(y);
            }
        }
        out
    }
}

/// Canonical representative of a torus point, coordinates in `[-L, L)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SitePoint {
    pub coords: Vec<i64>,
}

impl fmt::Display for SitePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.coords.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// A torus plus a perfect matching of its sites (the long-range edges).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphRecord", into = "GraphRecord")]
pub struct SmallWorldGraph {
    spec: TorusSpec,
    matching: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct GraphRecord {
    d: usize,
    #[serde(rename = "L")]
    half_side: u32,
    m: u32,
    matching: Vec<u32>,
}

impl TryFrom<GraphRecord> for SmallWorldGraph {
    type Error = TopologyError;

    fn try_from(r: GraphRecord) -> Result<Self, Self::Error> {
        let spec = TorusSpec::new(r.d, r.half_side, r.m)?;
        SmallWorldGraph::from_matching(spec, r.matching)
    }
}

impl From<SmallWorldGraph> for GraphRecord {
    fn from(g: SmallWorldGraph) -> Self {
        GraphRecord {
            d: g.spec.d,
            half_side: g.spec.half_side,
            m: g.spec.m,
            matching: g.matching,
        }
    }
}

impl SmallWorldGraph {
    /// Builds a graph from an explicit matching, checking that it is a
    /// fixed-point-free involution of the sites.
    pub fn from_matching(spec: TorusSpec, matching: Vec<u32>) -> Result<Self, TopologyError> {
        spec.validate()?;
        let n = spec.num_sites();
        if matching.len() != n {
            return Err(TopologyError::InvalidMatching(format!(
                "length {} but the torus has {n} sites",
                matching.len()
            )));
        }
        for (x, &y) in matching.iter().enumerate() {
            let y = y as usize;
            if y >= n {
                return Err(TopologyError::InvalidMatching(format!(
                    "site {x} is paired with {y}, outside the torus"
                )));
            }
            if y == x {
                return Err(TopologyError::InvalidMatching(format!("site {x} is a fixed point")));
            }
            if matching[y] as usize != x {
                return Err(TopologyError::InvalidMatching(format!(
                    "site {x} -> {y} but {y} -> {}",
                    matching[y]
                )));
            }
        }
        Ok(SmallWorldGraph { spec, matching })
    }

    /// Builds a graph without validating the matching. Only meant for
    /// negative controls in diagnostics such as `walk::stationary_check`.
    pub fn from_matching_unchecked(spec: TorusSpec, matching: Vec<u32>) -> Self {
        SmallWorldGraph { spec, matching }
    }

    pub fn spec(&self) -> &TorusSpec {
        &self.spec
    }

    pub fn matching(&self) -> &[u32] {
        &self.matching
    }

    pub fn num_sites(&self) -> usize {
        self.matching.len()
    }

    #[inline]
    pub fn long_range(&self, x: usize) -> usize {
        self.matching[x] as usize
    }

    /// True when every pair is a genuine fixed-point-free involution.
    pub fn is_valid_matching(&self) -> bool {
        self.matching.iter().enumerate().all(|(x, &y)| {
            let y = y as usize;
            y < self.matching.len() && y != x && self.matching[y] as usize == x
        })
    }

    /// Number of sites whose long-range partner is also a short-range
    /// neighbour.
    pub fn short_range_pairs(&self) -> usize {
        (0..self.num_sites())
            .filter(|&x| self.spec.short_range_indices(x).contains(&self.long_range(x)))
            .count()
    }

    /// Serializes to the `{d, L, m, matching}` JSON record.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("graph serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Uniform random perfect matching of the `(2L)^d` sites.
///
/// The site list is shuffled with a seeded Fisher-Yates pass and
/// consecutive entries are paired. Pairs that coincide with short-range
/// edges are kept.
pub fn sample_small_world(spec: TorusSpec, seed: u64) -> SmallWorldGraph {
    let n = spec.num_sites();
    let mut rng = rng_from_seed(seed);
    let mut sites: Vec<u32> = (0..n as u32).collect();
    sites.shuffle(&mut rng);
    let mut matching = vec![0u32; n];
    for pair in sites.chunks_exact(2) {
        matching[pair[0] as usize] = pair[1];
        matching[pair[1] as usize] = pair[0];
    }
    SmallWorldGraph { spec, matching }
}

/// Uniform matching conditioned on no pair being a short-range edge.
/// Rejection sampling over whole matchings; stream `k` of the attempt
/// sequence is derived from `seed`.
pub fn sample_small_world_without_short_range(
    spec: TorusSpec,
    seed: u64,
    max_attempts: usize,
) -> Result<SmallWorldGraph, TopologyError> {
    for attempt in 0..max_attempts {
        let s = crate::rng::derive_seed(seed, crate::rng::DOMAIN_GRAPH, attempt as u64);
        let g = sample_small_world(spec, s);
        if g.short_range_pairs() == 0 {
            return Ok(g);
        }
    }
    Err(TopologyError::RejectionExhausted(max_attempts))
}

/// Graph distance using both short- and long-range edges.
pub fn graph_distance(g: &SmallWorldGraph, x: &SitePoint, y: &SitePoint) -> u64 {
    let spec = g.spec();
    graph_distance_index(g, spec.index_of(x), spec.index_of(y))
}

/// Breadth-first search from `x` that stops as soon as `y` is dequeued.
pub fn graph_distance_index(g: &SmallWorldGraph, x: usize, y: usize) -> u64 {
    if x == y {
        return 0;
    }
    let spec = g.spec();
    let offsets = spec.neighbour_offsets();
    let n = g.num_sites();
    let mut seen = vec![false; n];
    let mut frontier = VecDeque::new();
    seen[x] = true;
    frontier.push_back((x, 0u64));
    while let Some((v, dist)) = frontier.pop_front() {
        let lr = g.long_range(v);
        let next = std::iter::once(lr).chain(offsets.iter().map(|z| spec.translate(v, z)));
        for w in next {
            if w == y {
                return dist + 1;
            }
            if !seen[w] {
                seen[w] = true;
                frontier.push_back((w, dist + 1));
            }
        }
    }
    unreachable!("the torus alone is connected")
}

/// Decides the event that the realization map is injective on the
/// big-world ball of radius `t` around the lift `+(x)`.
pub fn is_locally_big_world(
    g: &SmallWorldGraph,
    x: &SitePoint,
    t: usize,
    cap: usize,
) -> Result<bool, TopologyError> {
    let spec = g.spec();
    let estimate = 3.0 * (spec.big_m() as f64).powi(t as i32);
    if estimate > cap as f64 {
        return Err(TopologyError::BallTooLarge {
            radius: t,
            estimate,
            cap,
        });
    }
    let center = BigWorldAddress::lift(x);
    let ball = bigworld::enumerate_ball(spec, &center, t, cap).map_err(|_| {
        TopologyError::BallTooLarge {
            radius: t,
            estimate,
            cap,
        }
    })?;
    let mut images = HashSet::with_capacity(ball.len());
    for a in ball.addresses() {
        if !images.insert(bigworld::realize_phi_index(g, a)) {
            return Ok(false);
        }
    }
    Ok(true)
}
