//! Empirical distributions, Kolmogorov-Smirnov and DKW machinery, and the
//! limit laws the rescaled meeting and hitting times are compared against.

use serde::Serialize;
use thiserror::Error;

/// Samples with a censored fraction above this are rejected by the tests.
pub const DEFAULT_CENSOR_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("invalid law: {0}")]
    InvalidLaw(String),
}

/// Sorted sample; censored observations are kept apart and treated as
/// exceeding every finite time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalDistribution {
    values: Vec<f64>,
    censored: usize,
    censor_threshold: f64,
}

impl EmpiricalDistribution {
    pub fn new<I>(observations: I) -> Self
    where
        I: IntoIterator<Item = (f64, bool)>,
    {
        let mut values = Vec::new();
        let mut censored = 0;
        for (v, c) in observations {
            if c {
                censored += 1;
            } else {
                values.push(v);
            }
        }
        values.sort_by(f64::total_cmp);
        EmpiricalDistribution {
            values,
            censored,
            censor_threshold: DEFAULT_CENSOR_THRESHOLD,
        }
    }

    pub fn from_values(values: &[f64]) -> Self {
        Self::new(values.iter().map(|&v| (v, false)))
    }

    pub fn with_censor_threshold(mut self, threshold: f64) -> Self {
        self.censor_threshold = threshold;
        self
    }

    /// Total count `N`, censored included.
    pub fn len(&self) -> usize {
        self.values.len() + self.censored
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn censored(&self) -> usize {
        self.censored
    }

    pub fn censored_fraction(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.censored as f64 / self.len() as f64
        }
    }

    /// Uncensored values, ascending.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn check(&self) -> Result<(), StatsError> {
        if self.is_empty() {
            return Err(StatsError::InvalidSample("empty sample".into()));
        }
        if self.censored_fraction() > self.censor_threshold {
            return Err(StatsError::InvalidSample(format!(
                "censored fraction {} above {}",
                self.censored_fraction(),
                self.censor_threshold
            )));
        }
        Ok(())
    }

    /// Empirical `P(T > t)`.
    pub fn survival(&self, t: f64) -> f64 {
        let le = self.values.partition_point(|&v| v <= t);
        1.0 - le as f64 / self.len() as f64
    }

    /// Mean of the uncensored values.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Standard error of the uncensored mean.
    pub fn standard_error(&self) -> f64 {
        let n = self.values.len() as f64;
        let m = self.mean();
        let var = self.values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    }

    /// Same sample with every value divided by `scale`.
    pub fn rescaled(&self, scale: f64) -> Self {
        EmpiricalDistribution {
            values: self.values.iter().map(|v| v / scale).collect(),
            ..self.clone()
        }
    }
}

/// Reference laws for rescaled passage times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LimitLaw {
    PureExponential { mean: f64 },
    /// Atom of mass `atom` at zero, exponential of mean `mean` otherwise.
    ZeroAtomMixture { atom: f64, mean: f64 },
}

impl LimitLaw {
    pub fn exponential(mean: f64) -> Result<Self, StatsError> {
        if !(mean > 0.0) || !mean.is_finite() {
            return Err(StatsError::InvalidLaw(format!("mean {mean}")));
        }
        Ok(LimitLaw::PureExponential { mean })
    }

    pub fn mixture(atom: f64, mean: f64) -> Result<Self, StatsError> {
        if !(0.0..=1.0).contains(&atom) {
            return Err(StatsError::InvalidLaw(format!("atom {atom}")));
        }
        if !(mean > 0.0) || !mean.is_finite() {
            return Err(StatsError::InvalidLaw(format!("mean {mean}")));
        }
        Ok(LimitLaw::ZeroAtomMixture { atom, mean })
    }

    pub fn atom(&self) -> f64 {
        match *self {
            LimitLaw::PureExponential { .. } => 0.0,
            LimitLaw::ZeroAtomMixture { atom, .. } => atom,
        }
    }

    pub fn mean_parameter(&self) -> f64 {
        match *self {
            LimitLaw::PureExponential { mean } | LimitLaw::ZeroAtomMixture { mean, .. } => mean,
        }
    }

    /// `P(T > t) = (1 - a) exp(-t / theta)` for `t >= 0`.
    pub fn survival(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 1.0;
        }
        (1.0 - self.atom()) * (-t / self.mean_parameter()).exp()
    }

    pub fn cdf(&self, t: f64) -> f64 {
        1.0 - self.survival(t)
    }

    /// `E exp(-lambda T)`.
    pub fn laplace(&self, lambda: f64) -> f64 {
        let a = self.atom();
        a + (1.0 - a) / (1.0 + lambda * self.mean_parameter())
    }

    /// Inverse-cdf draw from a uniform `u` in `[0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        let a = self.atom();
        if u < a {
            0.0
        } else {
            -self.mean_parameter() * ((1.0 - u) / (1.0 - a)).ln()
        }
    }
}

/// Where the second walker starts, relative to the first at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeetingStart {
    /// Separation growing with `L`.
    Distant,
    /// Both at the origin.
    Coincident,
    /// Fixed `x != 0`, with `G^ev_B(x)` supplied.
    Fixed { green_even_at_x: f64 },
}

/// Limit law of `T_L / (2L)^d` with constant `G^ev_B(0) = green_even`.
pub fn limit_law_meeting(start: MeetingStart, green_even: f64) -> Result<LimitLaw, StatsError> {
    match start {
        MeetingStart::Distant => LimitLaw::exponential(green_even),
        MeetingStart::Coincident => LimitLaw::mixture(1.0 - 1.0 / green_even, green_even),
        MeetingStart::Fixed { green_even_at_x } => {
            LimitLaw::mixture(green_even_at_x / green_even, green_even)
        }
    }
}

/// Coincident-start law of the continuous-time meeting time when the pair
/// is followed along its jump chain: each jump moves one walker, so the
/// escape probability is `1 / G_B(0)` while the time scale stays
/// `G^ev_B(0)`.
pub fn limit_law_meeting_coincident_jump_chain(green: f64) -> Result<LimitLaw, StatsError> {
    LimitLaw::mixture(1.0 - 1.0 / green, green / 2.0)
}

/// Limit law of `W_L / (2L)^d`: distant start, or the return time from the
/// origin.
pub fn limit_law_hitting(from_origin: bool, green: f64) -> Result<LimitLaw, StatsError> {
    if from_origin {
        LimitLaw::mixture(1.0 - 1.0 / green, green)
    } else {
        LimitLaw::exponential(green)
    }
}

/// `sup_t |F_emp(t) - F(t)|`, evaluated at `0` and on both sides of every
/// sample point. Censored values count as larger than every finite time.
pub fn ks_distance(emp: &EmpiricalDistribution, law: &LimitLaw) -> Result<f64, StatsError> {
    emp.check()?;
    let n = emp.len() as f64;
    let vals = emp.values();
    let le0 = vals.partition_point(|&v| v <= 0.0);
    let mut sup = (le0 as f64 / n - law.cdf(0.0)).abs();
    let mut i = le0;
    while i < vals.len() {
        let v = vals[i];
        let mut j = i;
        while j < vals.len() && vals[j] == v {
            j += 1;
        }
        let f = law.cdf(v);
        sup = sup.max((i as f64 / n - f).abs()).max((j as f64 / n - f).abs());
        i = j;
    }
    Ok(sup)
}

/// DKW band half-width `sqrt(ln(2/delta) / (2N))`.
pub fn dkw_epsilon(n: usize, delta: f64) -> f64 {
    ((2.0 / delta).ln() / (2.0 * n as f64)).sqrt()
}

/// Two-sample KS statistic over uncensored values.
pub fn two_sample_ks(a: &EmpiricalDistribution, b: &EmpiricalDistribution) -> f64 {
    let (x, y) = (a.values(), b.values());
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut sup: f64 = 0.0;
    while i < x.len() || j < y.len() {
        let t = match (x.get(i), y.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => break,
        };
        while i < x.len() && x[i] <= t {
            i += 1;
        }
        while j < y.len() && y[j] <= t {
            j += 1;
        }
        sup = sup.max((i as f64 / na - j as f64 / nb).abs());
    }
    sup
}

/// Asymptotic two-sample critical value `c(alpha) sqrt((n + m) / (n m))`.
pub fn two_sample_critical(n: usize, m: usize, alpha: f64) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    let (n, m) = (n as f64, m as f64);
    c * ((n + m) / (n * m)).sqrt()
}

/// Empirical transform `N^-1 sum exp(-lambda value / scale)`; censored
/// observations contribute nothing.
pub fn empirical_laplace(emp: &EmpiricalDistribution, lambdas: &[f64], scale: f64) -> Vec<f64> {
    let n = emp.len() as f64;
    lambdas
        .iter()
        .map(|&l| emp.values().iter().map(|v| (-l * v / scale).exp()).sum::<f64>() / n)
        .collect()
}

/// Limit of the transform for distant starts: `(1/lambda) / (G^ev + 1/lambda)`.
pub fn laplace_limit_distant(lambda: f64, green_even: f64) -> f64 {
    (1.0 / lambda) / (green_even + 1.0 / lambda)
}

/// `(1/2) sum |p - q|` over the common index range; missing entries count as 0.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len().max(q.len());
    0.5 * (0..n)
        .map(|i| (p.get(i).unwrap_or(&0.0) - q.get(i).unwrap_or(&0.0)).abs())
        .sum::<f64>()
}

/// Pearson statistic `sum (O - E)^2 / E` and its degrees of freedom.
pub fn chi_square(observed: &[u64], probs: &[f64]) -> (f64, usize) {
    let n: u64 = observed.iter().sum();
    let stat = observed
        .iter()
        .zip(probs)
        .map(|(&o, &p)| {
            let e = p * n as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    (stat, observed.len().saturating_sub(1))
}

/// Constant in a row of the torus versus small-world comparison table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceConstant {
    Exact(f64),
    /// `G^ev_{Z^d}(0)`, the expected time at 0 of the speed-2 lattice walk.
    LatticeGreenEven,
    /// `G^ev_B(0)`.
    BigWorldGreenEven,
}

/// `T_L / (C_d f_d(L))` converges in law; `f_d` is given as a string.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingRow {
    pub d: usize,
    pub torus_scale: &'static str,
    pub torus_constant: ReferenceConstant,
    pub small_world_scale: &'static str,
    pub small_world_constant: ReferenceConstant,
}

pub fn scaling_table(d: usize) -> Option<ScalingRow> {
    let (torus_scale, torus_constant) = match d {
        0 => return None,
        1 => ("L^2", ReferenceConstant::Exact(1.0 / 12.0)),
        2 => ("L^2 log L", ReferenceConstant::Exact(1.0 / std::f64::consts::PI)),
        _ => ("L^d", ReferenceConstant::LatticeGreenEven),
    };
    let small_world_scale = match d {
        1 => "L",
        2 => "L^2",
        _ => "L^d",
    };
    Some(ScalingRow {
        d,
        torus_scale,
        torus_constant,
        small_world_scale,
        small_world_constant: ReferenceConstant::BigWorldGreenEven,
    })
}

/// Summary record for one law comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LawSummary {
    pub law: LimitLaw,
    #[serde(rename = "N")]
    pub n: usize,
    pub ks: f64,
    pub dkw_eps: f64,
    pub pass: bool,
    pub censored_fraction: f64,
}

/// KS comparison against `law` with pass threshold `tolerance`.
pub fn summarize(
    emp: &EmpiricalDistribution,
    law: LimitLaw,
    tolerance: f64,
    delta: f64,
) -> Result<LawSummary, StatsError> {
    let ks = ks_distance(emp, &law)?;
    Ok(LawSummary {
        law,
        n: emp.len(),
        ks,
        dkw_eps: dkw_epsilon(emp.len(), delta),
        pass: ks <= tolerance,
        censored_fraction: emp.censored_fraction(),
    })
}
