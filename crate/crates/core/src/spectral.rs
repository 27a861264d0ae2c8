//! Isoperimetric constants, spectral gaps, Cheeger bounds and mixing curves.
//!
//! Graphs are multigraphs: a long-range edge that coincides with a
//! short-range one adds to its multiplicity, exactly as the transition
//! masses add in [`crate::walk::step_distribution`].

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::Rng;
use rustc_hash::FxHashMap;
use serde::Serialize;
use thiserror::Error;

use crate::rng::{derive_seed, replicate, rng_from_seed, DOMAIN_GRAPH, DOMAIN_WALK};
use crate::topology::{sample_small_world, SmallWorldGraph, TorusSpec};
use crate::walk::{step_distribution, WalkKernel};

/// Default vertex limit for exact isoperimetric enumeration.
pub const ISO_MAX_N: usize = 24;
/// Largest matrix handled by the dense eigensolver.
pub const DENSE_MAX_N: usize = 1 << 11;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("graph has {n} vertices, limit is {limit}")]
    TooLarge { n: usize, limit: usize },
    #[error("iterative eigensolver did not converge (residual {0:e})")]
    ConvergenceFailure(f64),
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// Undirected multigraph with integer edge multiplicities; loops allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct Multigraph {
    n: usize,
    edges: FxHashMap<(u32, u32), u32>,
}

impl Multigraph {
    pub fn new(n: usize) -> Self {
        Multigraph { n, edges: FxHashMap::default() }
    }

    pub fn add_edge(&mut self, a: usize, b: usize) {
        let key = (a.min(b) as u32, a.max(b) as u32);
        *self.edges.entry(key).or_insert(0) += 1;
    }

    pub fn num_vertices(&self) -> usize {
        self.n
    }

    /// Edge count with multiplicity.
    pub fn num_edges(&self) -> usize {
        self.edges.values().map(|&m| m as usize).sum()
    }

    pub fn multiplicity(&self, a: usize, b: usize) -> u32 {
        self.edges.get(&(a.min(b) as u32, a.max(b) as u32)).copied().unwrap_or(0)
    }

    /// Cycle `C_n`.
    pub fn cycle(n: usize) -> Self {
        let mut g = Multigraph::new(n);
        for i in 0..n {
            g.add_edge(i, (i + 1) % n);
        }
        g
    }

    /// Complete graph `K_n`.
    pub fn complete(n: usize) -> Self {
        let mut g = Multigraph::new(n);
        for i in 0..n {
            for j in i + 1..n {
                g.add_edge(i, j);
            }
        }
        g
    }

    /// Torus short-range edges (as a set), without long-range edges.
    pub fn torus(spec: &TorusSpec) -> Self {
        let mut g = Multigraph::new(spec.num_sites());
        for x in 0..spec.num_sites() {
            for y in spec.short_range_indices(x) {
                if x < y {
                    g.add_edge(x, y);
                }
            }
        }
        g
    }

    /// Torus edges plus one edge per matched pair.
    pub fn small_world(s: &SmallWorldGraph) -> Self {
        let mut g = Multigraph::torus(s.spec());
        for x in 0..s.num_sites() {
            let y = s.long_range(x);
            if x < y {
                g.add_edge(x, y);
            }
        }
        g
    }

    /// Same multigraph with vertex `v` renamed `perm[v]`.
    pub fn relabel(&self, perm: &[usize]) -> Self {
        let mut g = Multigraph::new(self.n);
        for (&(a, b), &m) in &self.edges {
            for _ in 0..m {
                g.add_edge(perm[a as usize], perm[b as usize]);
            }
        }
        g
    }

    /// Weighted neighbour lists, loops dropped.
    fn adjacency(&self) -> Vec<Vec<(usize, u32)>> {
        let mut adj = vec![Vec::new(); self.n];
        let mut keys: Vec<_> = self.edges.iter().collect();
        keys.sort();
        for (&(a, b), &m) in keys {
            if a != b {
                adj[a as usize].push((b as usize, m));
                adj[b as usize].push((a as usize, m));
            }
        }
        adj
    }
}

/// Random `(n, r)`-configuration, or `(n, r, h)` when `extra = Some(h)`
/// adds one vertex carrying `h` half edges.
pub fn configuration_multigraph<R: Rng + ?Sized>(
    n: usize,
    r: usize,
    extra: Option<usize>,
    rng: &mut R,
) -> Result<Multigraph, SpectralError> {
    let h = extra.unwrap_or(0);
    if (n * r + h) % 2 != 0 {
        return Err(SpectralError::Invalid("total number of half edges must be even".into()));
    }
    let vertices = n + usize::from(extra.is_some());
    let mut stubs: Vec<usize> = (0..n).flat_map(|v| std::iter::repeat_n(v, r)).collect();
    stubs.extend(std::iter::repeat_n(n, h));
    stubs.shuffle(rng);
    let mut g = Multigraph::new(vertices);
    for pair in stubs.chunks_exact(2) {
        g.add_edge(pair[0], pair[1]);
    }
    Ok(g)
}

/// `min e(V, V^c) / |V|` over nonempty `V` with `|V| <= n / 2`, exact.
///
/// Subsets are visited in Gray-code order so each step updates the cut by
/// one vertex move.
pub fn isoperimetric_exact(g: &Multigraph, max_n: usize) -> Result<Ratio<u64>, SpectralError> {
    let n = g.n;
    if n > max_n || n > 40 {
        return Err(SpectralError::TooLarge { n, limit: max_n.min(40) });
    }
    if n < 2 {
        return Err(SpectralError::Invalid("need at least two vertices".into()));
    }
    let adj = g.adjacency();
    let mut in_set = vec![false; n];
    let mut size = 0usize;
    let mut cut: i64 = 0;
    let (mut best_cut, mut best_size) = (u64::MAX, 1u64);
    for i in 1u64..(1u64 << n) {
        let v = i.trailing_zeros() as usize;
        let entering = !in_set[v];
        let mut delta = 0i64;
        for &(u, m) in &adj[v] {
            if in_set[u] {
                delta -= m as i64;
            } else {
                delta += m as i64;
            }
        }
        if entering {
            cut += delta;
            size += 1;
        } else {
            // leaving: edges to V become cut, edges to V^c stop being cut
            cut -= delta;
            size -= 1;
        }
        in_set[v] = entering;
        if 2 * size <= n && (cut as u64) * best_size < best_cut.saturating_mul(size as u64) {
            best_cut = cut as u64;
            best_size = size as u64;
        }
    }
    Ok(Ratio::new(best_cut, best_size))
}

/// Dense transition matrix of `P_S`.
pub fn transition_matrix(g: &SmallWorldGraph, kernel: &WalkKernel) -> DMatrix<f64> {
    let n = g.num_sites();
    let mut p = DMatrix::zeros(n, n);
    for x in 0..n {
        for (y, w) in step_distribution(g, kernel, x) {
            p[(x, y)] += w;
        }
    }
    p
}

/// Eigenvalues of a symmetric matrix, descending.
pub fn symmetric_spectrum(p: &DMatrix<f64>) -> Vec<f64> {
    let sym = (p + p.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenMethod {
    Dense,
    Lanczos,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectralGap {
    /// Second-largest eigenvalue.
    pub lambda1: f64,
    /// Smallest eigenvalue.
    pub lambda_min: f64,
    /// `max(|lambda1|, |lambda_min|)`.
    pub lambda: f64,
    /// `1 - lambda`.
    pub gap: f64,
    pub method: EigenMethod,
}

fn gap_from(lambda1: f64, lambda_min: f64, method: EigenMethod) -> SpectralGap {
    let lambda = lambda1.abs().max(lambda_min.abs());
    SpectralGap { lambda1, lambda_min, lambda, gap: 1.0 - lambda, method }
}

struct SparseSym {
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseSym {
    fn mul(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.rows.len(),
            self.rows.iter().map(|row| row.iter().map(|&(j, w)| w * v[j]).sum()),
        )
    }
}

/// Extreme eigenvalues of `P_S` on the complement of the constants by
/// Lanczos with full reorthogonalisation. The projected matrix is built
/// from the Gram-Schmidt coefficients themselves, since the three-term
/// recurrence stops describing `Q^T P Q` once a Ritz vector converges.
fn lanczos_extremes(
    g: &SmallWorldGraph,
    kernel: &WalkKernel,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<(f64, f64), SpectralError> {
    let n = g.num_sites();
    let op = SparseSym {
        rows: (0..n).map(|x| step_distribution(g, kernel, x)).collect(),
    };
    let ones = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut rng = rng_from_seed(seed);
    let mut q = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
    q -= &ones * ones.dot(&q);
    q /= q.norm();
    // the stored basis is capped at 2^26 entries (512 MB)
    let steps = max_iter.min(n - 1).min(((1usize << 26) / n).max(2));
    let mut basis: Vec<DVector<f64>> = vec![q];
    let mut h = DMatrix::<f64>::zeros(steps + 1, steps + 1);
    let mut last_residual = f64::INFINITY;
    for k in 0..steps {
        let mut w = op.mul(&basis[k]);
        w -= &ones * ones.dot(&w);
        for _ in 0..2 {
            for (j, b) in basis.iter().enumerate() {
                let c = b.dot(&w);
                h[(j, k)] += c;
                w -= b * c;
            }
        }
        let b_next = w.norm();
        let m = k + 1;
        let block = h.view((0, 0), (m, m));
        let t = (&block + block.transpose()) * 0.5;
        let eig = SymmetricEigen::new(t);
        let (mut imax, mut imin) = (0, 0);
        for i in 0..m {
            if eig.eigenvalues[i] > eig.eigenvalues[imax] {
                imax = i;
            }
            if eig.eigenvalues[i] < eig.eigenvalues[imin] {
                imin = i;
            }
        }
        let res_max = (b_next * eig.eigenvectors[(m - 1, imax)]).abs();
        let res_min = (b_next * eig.eigenvectors[(m - 1, imin)]).abs();
        last_residual = res_max.max(res_min);
        if last_residual < tol || b_next < 1e-14 || k + 1 == n - 1 {
            return Ok((eig.eigenvalues[imax], eig.eigenvalues[imin]));
        }
        h[(k + 1, k)] = b_next;
        basis.push(w / b_next);
    }
    Err(SpectralError::ConvergenceFailure(last_residual))
}

/// `lambda1`, `lambda_min` and the absolute gap of `P_S`; dense up to
/// [`DENSE_MAX_N`] sites, Lanczos beyond (or when `force_iterative`).
pub fn spectral_gap_with(
    g: &SmallWorldGraph,
    kernel: &WalkKernel,
    force_iterative: bool,
) -> Result<SpectralGap, SpectralError> {
    let n = g.num_sites();
    if n < 2 {
        return Err(SpectralError::Invalid("need at least two sites".into()));
    }
    if n <= DENSE_MAX_N && !force_iterative {
        let ev = symmetric_spectrum(&transition_matrix(g, kernel));
        return Ok(gap_from(ev[1], ev[n - 1], EigenMethod::Dense));
    }
    let (l1, lmin) = lanczos_extremes(g, kernel, 1e-6, 600, derive_seed(0, DOMAIN_WALK, n as u64))?;
    Ok(gap_from(l1, lmin, EigenMethod::Lanczos))
}

pub fn spectral_gap(g: &SmallWorldGraph, kernel: &WalkKernel) -> Result<SpectralGap, SpectralError> {
    spectral_gap_with(g, kernel, false)
}

/// `iota^2 p_min^2 / 2`.
pub fn cheeger_lower_bound(iota: f64, p_min: f64) -> f64 {
    0.5 * iota * iota * p_min * p_min
}

/// Smallest transition mass carried by a single edge of the multigraph.
pub fn min_edge_probability(kernel: &WalkKernel) -> f64 {
    let (short, long) = kernel.moves();
    short
        .iter()
        .filter(|(z, w)| *w > 0.0 && z.iter().any(|&c| c != 0))
        .map(|(_, w)| *w)
        .chain((long > 0.0).then_some(long))
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixingProfile {
    pub t_grid: Vec<f64>,
    /// `max_{x,y} |P^x(X_t = y) - 1/n|` for the continuous-time walk.
    pub deviation: Vec<f64>,
    /// Decay rate from a log-linear fit on the second half of the grid.
    pub gamma_fit: f64,
    pub r_squared: f64,
}

/// Exact deviation curve through the eigendecomposition of `P_S`.
pub fn mixing_profile(
    g: &SmallWorldGraph,
    kernel: &WalkKernel,
    t_grid: &[f64],
) -> Result<MixingProfile, SpectralError> {
    let n = g.num_sites();
    if n > DENSE_MAX_N {
        return Err(SpectralError::TooLarge { n, limit: DENSE_MAX_N });
    }
    let p = transition_matrix(g, kernel);
    let eig = SymmetricEigen::new((&p + p.transpose()) * 0.5);
    let pi = 1.0 / n as f64;
    let deviation: Vec<f64> = t_grid
        .iter()
        .map(|&t| {
            let decay = DVector::from_iterator(n, eig.eigenvalues.iter().map(|&l| (-t * (1.0 - l)).exp()));
            let scaled = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, j)] * decay[j]);
            let pt = scaled * eig.eigenvectors.transpose();
            pt.iter().map(|v| (v - pi).abs()).fold(0.0, f64::max)
        })
        .collect();
    let (gamma_fit, r_squared) = tail_fit(t_grid, &deviation);
    Ok(MixingProfile { t_grid: t_grid.to_vec(), deviation, gamma_fit, r_squared })
}

/// Least-squares fit of `ln dev = c - gamma t` on the second half of the
/// grid, ignoring values at rounding level.
pub fn tail_fit(t: &[f64], dev: &[f64]) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(dev)
        .skip(t.len() / 2)
        .filter(|(_, &d)| d > 1e-12)
        .map(|(&t, &d)| (t, d.ln()))
        .collect();
    if pts.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (-slope, r2)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralReport {
    /// Exact `iota` as `num/den`, when enumerated.
    pub iota_exact: Option<String>,
    pub iota: Option<f64>,
    pub lambda1: f64,
    pub lambda: f64,
    pub gap: f64,
    pub p_min: f64,
    pub cheeger_lower: Option<f64>,
    pub gamma_fit: Option<f64>,
    pub r_squared: Option<f64>,
    pub method: EigenMethod,
    pub lazy: bool,
}

/// All spectral quantities of one small world; `iota` only when the site
/// count allows exact enumeration.
pub fn spectral_report(
    g: &SmallWorldGraph,
    kernel: &WalkKernel,
    t_grid: &[f64],
) -> Result<SpectralReport, SpectralError> {
    let gap = spectral_gap(g, kernel)?;
    let p_min = min_edge_probability(kernel);
    let iota = if g.num_sites() <= ISO_MAX_N {
        Some(isoperimetric_exact(&Multigraph::small_world(g), ISO_MAX_N)?)
    } else {
        None
    };
    let iota_f = iota.map(|r| *r.numer() as f64 / *r.denom() as f64);
    let mixing = if g.num_sites() <= DENSE_MAX_N && !t_grid.is_empty() {
        Some(mixing_profile(g, kernel, t_grid)?)
    } else {
        None
    };
    Ok(SpectralReport {
        iota_exact: iota.map(|r| format!("{}/{}", r.numer(), r.denom())),
        iota: iota_f,
        lambda1: gap.lambda1,
        lambda: gap.lambda,
        gap: gap.gap,
        p_min,
        cheeger_lower: iota_f.map(|i| cheeger_lower_bound(i, p_min)),
        gamma_fit: mixing.as_ref().map(|m| m.gamma_fit),
        r_squared: mixing.as_ref().map(|m| m.r_squared),
        method: gap.method,
        lazy: kernel.is_lazy(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurveyRow {
    pub sample: usize,
    pub graph_seed: u64,
    pub iota: f64,
    pub lambda1: f64,
    pub cheeger_lower: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IsoSurvey {
    pub alpha: f64,
    pub rows: Vec<SurveyRow>,
    /// Fraction of samples with `iota > alpha`.
    pub fraction_above: f64,
}

impl IsoSurvey {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample,iota,lambda1,cheeger_lower\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.sample, r.iota, r.lambda1, r.cheeger_lower));
        }
        out
    }

    /// Survival fraction at another threshold.
    pub fn fraction_above(&self, alpha: f64) -> f64 {
        self.rows.iter().filter(|r| r.iota > alpha).count() as f64 / self.rows.len() as f64
    }
}

/// Exact `iota` and `lambda1` of the lazy kernel over `samples` sampled
/// small worlds.
pub fn iso_survey(
    spec: &TorusSpec,
    beta: f64,
    samples: usize,
    alpha: f64,
    master_seed: u64,
) -> Result<IsoSurvey, SpectralError> {
    if spec.num_sites() > ISO_MAX_N {
        return Err(SpectralError::TooLarge { n: spec.num_sites(), limit: ISO_MAX_N });
    }
    let kernel = WalkKernel::simple(spec, beta)
        .map_err(|e| SpectralError::Invalid(e.to_string()))?
        .lazy();
    let p_min = min_edge_probability(&kernel);
    let rows = replicate(samples, |i| -> Result<SurveyRow, SpectralError> {
        let seed = derive_seed(master_seed, DOMAIN_GRAPH, i);
        let g = sample_small_world(*spec, seed);
        let r = isoperimetric_exact(&Multigraph::small_world(&g), ISO_MAX_N)?;
        let iota = *r.numer() as f64 / *r.denom() as f64;
        let gap = spectral_gap(&g, &kernel)?;
        Ok(SurveyRow {
            sample: i as usize,
            graph_seed: seed,
            iota,
            lambda1: gap.lambda1,
            cheeger_lower: cheeger_lower_bound(iota, p_min),
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    let fraction_above = rows.iter().filter(|r| r.iota > alpha).count() as f64 / rows.len().max(1) as f64;
    Ok(IsoSurvey { alpha, rows, fraction_above })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cycle_and_complete_graph_constants() {
        assert_eq!(isoperimetric_exact(&Multigraph::cycle(8), 24).unwrap(), Ratio::new(1, 2));
        assert_eq!(isoperimetric_exact(&Multigraph::complete(4), 24).unwrap(), Ratio::new(2, 1));
        let c8 = Multigraph::torus(&TorusSpec::nearest(1, 4).unwrap());
        assert_eq!(isoperimetric_exact(&c8, 24).unwrap(), Ratio::new(1, 2));
    }

    #[test]
    fn isoperimetric_rejects_large_graphs() {
        assert!(matches!(
            isoperimetric_exact(&Multigraph::cycle(30), 24),
            Err(SpectralError::TooLarge { .. })
        ));
    }

    #[test]
    fn long_range_multiplicity_is_counted() {
        let s = TorusSpec::nearest(1, 2).unwrap();
        let g = SmallWorldGraph::from_matching(s, vec![1, 0, 3, 2]).unwrap();
        let mg = Multigraph::small_world(&g);
        assert_eq!(mg.multiplicity(0, 1), 2);
        assert_eq!(mg.num_edges(), 6);
    }

    #[test]
    fn two_site_lazy_walk_has_zero_second_eigenvalue() {
        let s = TorusSpec::nearest(1, 1).unwrap();
        let g = sample_small_world(s, 0);
        let k = WalkKernel::simple(&s, 0.3).unwrap().lazy();
        let gap = spectral_gap(&g, &k).unwrap();
        assert!(gap.lambda1.abs() < 1e-12);
    }

    #[test]
    fn four_cycle_spectrum() {
        let s = TorusSpec::nearest(1, 2).unwrap();
        let g = sample_small_world(s, 0);
        let k = WalkKernel::simple(&s, 0.0).unwrap();
        let ev = symmetric_spectrum(&transition_matrix(&g, &k));
        let want = [1.0, 0.0, 0.0, -1.0];
        for (a, b) in ev.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((spectral_gap(&g, &k).unwrap().lambda - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cheeger_substitution() {
        assert_eq!(cheeger_lower_bound(0.0, 0.3), 0.0);
        assert!((cheeger_lower_bound(0.5, 0.25) - 0.0078125).abs() < 1e-15);
    }

    #[test]
    fn mixing_starts_at_point_mass() {
        let s = TorusSpec::nearest(1, 4).unwrap();
        let g = sample_small_world(s, 5);
        let k = WalkKernel::simple(&s, 0.3).unwrap().lazy();
        let prof = mixing_profile(&g, &k, &[0.0, 1.0, 2.0]).unwrap();
        assert!((prof.deviation[0] - (1.0 - 1.0 / 8.0)).abs() < 1e-12);
        assert!(prof.deviation[1] <= prof.deviation[0]);
    }

    #[test]
    fn configuration_model_degrees() {
        let mut rng = rng_from_seed(1);
        let g = configuration_multigraph(10, 3, None, &mut rng).unwrap();
        assert_eq!(g.num_edges(), 15);
        let h = configuration_multigraph(10, 3, Some(2), &mut rng).unwrap();
        assert_eq!(h.num_vertices(), 11);
        assert_eq!(h.num_edges(), 16);
        assert!(configuration_multigraph(3, 3, None, &mut rng).is_err());
    }

    #[test]
    fn lanczos_matches_dense() {
        let s = TorusSpec::nearest(1, 64).unwrap();
        let g = sample_small_world(s, 8);
        let k = WalkKernel::simple(&s, 0.3).unwrap().lazy();
        let dense = spectral_gap(&g, &k).unwrap();
        let iter = spectral_gap_with(&g, &k, true).unwrap();
        assert_eq!(iter.method, EigenMethod::Lanczos);
        assert!((dense.lambda1 - iter.lambda1).abs() < 1e-4);
        assert!((dense.lambda_min - iter.lambda_min).abs() < 1e-4);
    }
}
