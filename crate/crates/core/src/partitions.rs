//! Samplers for uniform compositions and the geometric/exponential
//! simplex constructions, with the distributional limit checks run on
//! single-draw empirical measures.
//!
//! The uniform composition sampler uses sequential exact marginals
//! (ratio recurrences, no large binomials); the conditioned-geometric
//! rejection sampler is kept alongside as a distribution-equality oracle.

use crate::chains::RngStream;
use crate::oracle::{
    dkw_bound, ks_statistic, ks_statistic_discrete, wasserstein1, DiracTarget,
    ExponentialTarget, GeometricTarget, TargetDist,
};
use crate::state::{ContinuousWealthState, DiscreteWealthState};
use crate::{Error, Result};

/// Wealth threshold of the point-mass collapse check.
pub const DELTA_EPSILON: f64 = 0.01;

const REJECTION_ATTEMPT_CAP: u64 = 10_000_000;

/// Sampler selection with parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum SamplerSpec {
    UniformComposition { n: u64, num_agents: u64 },
    /// Geometrics with success probability `N / total`, normalized onto
    /// the simplex of total `N`.
    ScaledGeometric { num_agents: u64, total: f64 },
    /// Geometrics with a fixed success probability, scaled to total
    /// `(1-p)/p * N`.
    FixedPGeometric { num_agents: u64, p: f64 },
    /// Normalized exponentials: exactly uniform on the simplex of total
    /// `N`.
    UniformSimplex { num_agents: u64 },
}

impl SamplerSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SamplerSpec::UniformComposition { num_agents, .. } => {
                if num_agents < 2 {
                    return Err(Error::Config("need at least 2 agents".into()));
                }
            }
            SamplerSpec::ScaledGeometric { num_agents, total } => {
                if num_agents < 2 || !total.is_finite() || total < num_agents as f64 {
                    return Err(Error::Config(format!(
                        "scaled geometric needs total >= N >= 2, got N={num_agents} total={total}"
                    )));
                }
            }
            SamplerSpec::FixedPGeometric { num_agents, p } => {
                if num_agents < 2 || !p.is_finite() || p <= 0.0 || p >= 1.0 {
                    return Err(Error::Config(format!(
                        "fixed-p geometric needs 0 < p < 1, got p={p}"
                    )));
                }
            }
            SamplerSpec::UniformSimplex { num_agents } => {
                if num_agents < 2 {
                    return Err(Error::Config("need at least 2 agents".into()));
                }
            }
        }
        Ok(())
    }

    pub fn name(&self) -> String {
        match *self {
            SamplerSpec::UniformComposition { n, num_agents } => {
                format!("uniform_composition(n={n},N={num_agents})")
            }
            SamplerSpec::ScaledGeometric { num_agents, total } => {
                format!("scaled_geometric(N={num_agents},W={total})")
            }
            SamplerSpec::FixedPGeometric { num_agents, p } => {
                format!("fixed_p_geometric(N={num_agents},p={p})")
            }
            SamplerSpec::UniformSimplex { num_agents } => {
                format!("uniform_simplex(N={num_agents})")
            }
        }
    }
}

/// Geometric on `{0, 1, ...}` with success probability `p`, by inversion.
pub fn sample_geometric(p: f64, rng: &mut RngStream) -> u64 {
    debug_assert!(0.0 < p && p <= 1.0);
    if p == 1.0 {
        return 0;
    }
    let u = rng.uniform();
    let k = ((-u).ln_1p() / (-p).ln_1p()).floor(); // ln(1-u)/ln(1-p)
    k.max(0.0) as u64
}

/// Exactly uniform composition of `n` into `num_agents` parts via
/// sequential exact marginals:
/// `P(x_1 = k) = C(n-k+N-2, N-2) / C(n+N-1, N-1)`, realized through the
/// ratio recurrence `P(k+1)/P(k) = (n-k)/(n-k+N-2)`.
pub fn sample_uniform_composition(
    n: u64,
    num_agents: u64,
    rng: &mut RngStream,
) -> Result<DiscreteWealthState> {
    if num_agents < 2 {
        return Err(Error::Domain("need at least 2 agents".into()));
    }
    let mut counts = Vec::with_capacity(num_agents as usize);
    let mut rem = n;
    let mut parts = num_agents;
    while parts > 1 {
        let u = rng.uniform();
        let mut p = (parts as f64 - 1.0) / (rem as f64 + parts as f64 - 1.0);
        let mut cum = p;
        let mut k = 0u64;
        while cum < u && k < rem {
            let a = (rem - k) as f64;
            p *= a / (a + parts as f64 - 2.0);
            cum += p;
            k += 1;
        }
        counts.push(k);
        rem -= k;
        parts -= 1;
    }
    counts.push(rem);
    DiscreteWealthState::new(counts)
}

/// Distribution-equality oracle for [`sample_uniform_composition`]:
/// i.i.d. geometrics conditioned on their sum. Uniformity holds for any
/// success probability; `p = N/(N+n)` maximizes the acceptance rate.
pub fn sample_uniform_composition_rejection(
    n: u64,
    num_agents: u64,
    rng: &mut RngStream,
) -> Result<DiscreteWealthState> {
    if num_agents < 2 {
        return Err(Error::Domain("need at least 2 agents".into()));
    }
    let p = num_agents as f64 / (num_agents + n) as f64;
    let mut draws = vec![0u64; num_agents as usize];
    for _ in 0..REJECTION_ATTEMPT_CAP {
        let mut sum = 0u64;
        for d in draws.iter_mut() {
            *d = sample_geometric(p, rng);
            sum += *d;
        }
        if sum == n {
            return DiscreteWealthState::new(draws);
        }
    }
    Err(Error::Resource(format!(
        "rejection sampler exceeded {REJECTION_ATTEMPT_CAP} attempts at n={n}, N={num_agents}"
    )))
}

/// Geometrics with `p = N / total`, normalized to the simplex of total
/// `N`; the all-zero draw degenerates to the all-ones state.
pub fn sample_scaled_geometric(
    num_agents: u64,
    total: f64,
    rng: &mut RngStream,
) -> Result<ContinuousWealthState> {
    SamplerSpec::ScaledGeometric { num_agents, total }.validate()?;
    let p = (num_agents as f64 / total).min(1.0);
    let draws: Vec<u64> = (0..num_agents).map(|_| sample_geometric(p, rng)).collect();
    let sum: u64 = draws.iter().sum();
    if sum == 0 {
        return ContinuousWealthState::new(vec![1.0; num_agents as usize]);
    }
    let scale = num_agents as f64 / sum as f64;
    ContinuousWealthState::new(draws.iter().map(|&g| g as f64 * scale).collect())
}

/// Fixed-`p` geometrics scaled to total `(1-p)/p * N`. The all-zero draw
/// follows the same degenerate convention as the scaled sampler, split
/// equally so the total is preserved.
pub fn sample_fixed_p_geometric(
    num_agents: u64,
    p: f64,
    rng: &mut RngStream,
) -> Result<ContinuousWealthState> {
    SamplerSpec::FixedPGeometric { num_agents, p }.validate()?;
    let total = (1.0 - p) / p * num_agents as f64;
    let draws: Vec<u64> = (0..num_agents).map(|_| sample_geometric(p, rng)).collect();
    let sum: u64 = draws.iter().sum();
    if sum == 0 {
        let share = (1.0 - p) / p;
        return ContinuousWealthState::new(vec![share; num_agents as usize]);
    }
    let scale = total / sum as f64;
    ContinuousWealthState::new(draws.iter().map(|&g| g as f64 * scale).collect())
}

/// Exactly uniform point of the simplex of total `N`: normalized i.i.d.
/// unit exponentials.
pub fn sample_uniform_simplex(num_agents: u64, rng: &mut RngStream) -> Result<ContinuousWealthState> {
    SamplerSpec::UniformSimplex { num_agents }.validate()?;
    let draws: Vec<f64> = (0..num_agents).map(|_| rng.waiting_time(1.0)).collect();
    let sum: f64 = draws.iter().sum();
    let scale = num_agents as f64 / sum;
    ContinuousWealthState::new(draws.iter().map(|&u| u * scale).collect())
}

/// Limit law to check a single-draw empirical measure against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LimitTarget {
    ExpOne,
    Geometric { p: f64 },
    DeltaZero,
}

impl LimitTarget {
    fn name(&self) -> String {
        match *self {
            LimitTarget::ExpOne => "exp(1)".into(),
            LimitTarget::Geometric { p } => format!("geom({p})"),
            LimitTarget::DeltaZero => "delta_0".into(),
        }
    }
}

/// Outcome of a limit check.
#[derive(Debug, Clone, serde::Serialize)]
pub struct LimitReport {
    pub sampler: String,
    pub target: String,
    pub num_agents: u64,
    /// "ks" (against the DKW band) or "exceedance" (mass pigeonhole).
    pub statistic_kind: String,
    pub statistic: f64,
    pub threshold: f64,
    pub w1: f64,
    pub pass: bool,
}

/// Draw once from the sampler, build the empirical measure of the `N`
/// coordinates, and compare to the target law.
///
/// Continuous targets use the KS statistic against the 99% DKW band
/// `sqrt(ln(2/alpha)/(2N))`; the geometric target uses the discrete KS
/// over integer support; the point-mass target checks the deterministic
/// pigeonhole bound: after rescaling to total 1, the fraction of
/// coordinates above `eps` cannot exceed `1/(N eps)`.
pub fn limit_check(
    spec: &SamplerSpec,
    target: LimitTarget,
    rng: &mut RngStream,
) -> Result<LimitReport> {
    spec.validate()?;
    let alpha = 0.01;
    let (num_agents, coords): (u64, Vec<f64>) = match (spec, target) {
        (SamplerSpec::ScaledGeometric { num_agents, total }, LimitTarget::ExpOne) => {
            let s = sample_scaled_geometric(*num_agents, *total, rng)?;
            (*num_agents, s.wealth().to_vec())
        }
        (SamplerSpec::UniformSimplex { num_agents }, LimitTarget::ExpOne)
        | (SamplerSpec::UniformSimplex { num_agents }, LimitTarget::DeltaZero) => {
            let s = sample_uniform_simplex(*num_agents, rng)?;
            (*num_agents, s.wealth().to_vec())
        }
        (SamplerSpec::FixedPGeometric { num_agents, p }, LimitTarget::Geometric { p: tp }) => {
            if (p - tp).abs() > 1e-12 {
                return Err(Error::Config(format!(
                    "sampler p={p} and target p={tp} must match"
                )));
            }
            let s = sample_fixed_p_geometric(*num_agents, *p, rng)?;
            (*num_agents, s.wealth().to_vec())
        }
        (SamplerSpec::UniformComposition { .. }, _) => {
            return Err(Error::Config(
                "uniform_composition has no limit target; it is checked against the exact \
                 enumeration oracle"
                    .into(),
            ));
        }
        (spec, target) => {
            return Err(Error::Config(format!(
                "unsupported sampler/target pair: {} vs {}",
                spec.name(),
                target.name()
            )));
        }
    };

    let report = match target {
        LimitTarget::ExpOne => {
            let t = ExponentialTarget { mean: 1.0 };
            LimitReport {
                sampler: spec.name(),
                target: target.name(),
                num_agents,
                statistic_kind: "ks".into(),
                statistic: ks_statistic(&coords, |x| t.cdf(x)),
                threshold: dkw_bound(num_agents as usize, alpha),
                w1: wasserstein1(&coords, &t),
                pass: false,
            }
        }
        LimitTarget::Geometric { p } => {
            let t = GeometricTarget { p };
            LimitReport {
                sampler: spec.name(),
                target: target.name(),
                num_agents,
                statistic_kind: "ks".into(),
                statistic: ks_statistic_discrete(&coords, |k| t.cdf_at(k)),
                threshold: dkw_bound(num_agents as usize, alpha),
                w1: wasserstein1(&coords, &t),
                pass: false,
            }
        }
        LimitTarget::DeltaZero => {
            let n = num_agents as f64;
            let rescaled: Vec<f64> = coords.iter().map(|x| x / n).collect();
            let exceed =
                rescaled.iter().filter(|&&x| x > DELTA_EPSILON).count() as f64 / n;
            LimitReport {
                sampler: spec.name(),
                target: target.name(),
                num_agents,
                statistic_kind: "exceedance".into(),
                statistic: exceed,
                threshold: 1.0 / (n * DELTA_EPSILON),
                w1: wasserstein1(&rescaled, &DiracTarget { at: 0.0 }),
                pass: false,
            }
        }
    };
    Ok(LimitReport {
        pass: report.statistic <= report.threshold,
        ..report
    })
}
