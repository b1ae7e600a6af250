//! Empirical measures, bounded observables with exact antiderivatives,
//! the pair measure, the empirical collision bracket and the martingale
//! residual.
//!
//! The collision bracket needs the inner integral over the uniform split
//! `r`, and every built-in observable carries its antiderivative `G` so
//! that integral collapses to `2 G(s) / s` in closed form; no quadrature
//! enters the drift.

use std::io::Write;

use rayon::prelude::*;

use crate::chains::{RngStream, TrajectoryRecord};
use crate::state::ContinuousWealthState;
use crate::{Error, Result};

/// Cap on the number of agents for quadratic-cost drift integration.
pub const QN_AGENT_CAP: usize = 5000;

/// Default ramp width of the smoothed indicators.
pub const DEFAULT_RAMP: f64 = 0.01;

/// A bounded observable `g` together with the exact antiderivative
/// `G(s) = int_0^s g(u) du` and its sup norm.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    kind: Kind,
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    /// `g(x) = min(x, cap)^power`; `power = 0` is the constant 1.
    CappedPower { cap: f64, power: u32 },
    /// `g(x) = exp(-lambda x)`.
    ExpDecay { lambda: f64 },
    /// Continuous ramp version of the indicator of `[lo, hi]`, rising on
    /// `[lo - ramp, lo]` and falling on `[hi, hi + ramp]`.
    SmoothIndicator { lo: f64, hi: f64, ramp: f64 },
}

impl TestFunction {
    pub fn capped_power(cap: f64, power: u32) -> Result<Self> {
        if !cap.is_finite() || cap <= 0.0 {
            return Err(Error::Domain(format!("cap must be > 0, got {cap}")));
        }
        Ok(Self {
            kind: Kind::CappedPower { cap, power },
        })
    }

    pub fn constant_one() -> Self {
        Self {
            kind: Kind::CappedPower { cap: 1.0, power: 0 },
        }
    }

    /// `g(x) = min(x, cap)`: the wealth observable, capped to stay bounded.
    pub fn capped_identity(cap: f64) -> Result<Self> {
        Self::capped_power(cap, 1)
    }

    pub fn exp_decay(lambda: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(Error::Domain(format!("lambda must be > 0, got {lambda}")));
        }
        Ok(Self {
            kind: Kind::ExpDecay { lambda },
        })
    }

    pub fn smooth_indicator(lo: f64, hi: f64) -> Result<Self> {
        Self::smooth_indicator_with_ramp(lo, hi, DEFAULT_RAMP)
    }

    pub fn smooth_indicator_with_ramp(lo: f64, hi: f64, ramp: f64) -> Result<Self> {
        let valid = ramp.is_finite() && ramp > 0.0 && lo >= 0.0 && hi >= lo;
        if !valid {
            return Err(Error::Domain(format!(
                "need 0 <= lo <= hi and ramp > 0, got lo={lo} hi={hi} ramp={ramp}"
            )));
        }
        Ok(Self {
            kind: Kind::SmoothIndicator { lo, hi, ramp },
        })
    }

    pub fn name(&self) -> String {
        match self.kind {
            Kind::CappedPower { cap, power } => {
                if power == 0 {
                    "1".to_string()
                } else {
                    format!("min(x,{cap})^{power}")
                }
            }
            Kind::ExpDecay { lambda } => format!("exp(-{lambda}x)"),
            Kind::SmoothIndicator { lo, hi, ramp } => {
                format!("smooth_indicator[{lo},{hi}]~{ramp}")
            }
        }
    }

    /// Parse the observable spec used by the CLI and bindings:
    /// `one | exp:L | capped:CAP[,K] | indicator:LO,HI[,RAMP]`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (kind, rest) = spec.split_once(':').unwrap_or((spec, ""));
        let parts: Vec<&str> = rest.split(',').filter(|p| !p.is_empty()).collect();
        let num = |i: usize| -> Result<f64> {
            parts
                .get(i)
                .ok_or_else(|| Error::Config(format!("g `{spec}`: missing parameter {i}")))?
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("g `{spec}`: bad parameter {i}")))
        };
        match kind {
            "one" => Ok(Self::constant_one()),
            "exp" => Self::exp_decay(num(0)?),
            "capped" => {
                let cap = num(0)?;
                let power = if parts.len() > 1 { num(1)? as u32 } else { 1 };
                Self::capped_power(cap, power)
            }
            "indicator" => {
                let (lo, hi) = (num(0)?, num(1)?);
                if parts.len() > 2 {
                    Self::smooth_indicator_with_ramp(lo, hi, num(2)?)
                } else {
                    Self::smooth_indicator(lo, hi)
                }
            }
            _ => Err(Error::Config(format!(
                "g `{spec}`: expected one | exp:L | capped:CAP[,K] | indicator:LO,HI[,RAMP]"
            ))),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self.kind {
            Kind::CappedPower { cap, power } => x.min(cap).powi(power as i32),
            Kind::ExpDecay { lambda } => (-lambda * x).exp(),
            Kind::SmoothIndicator { lo, hi, ramp } => {
                let rise = ((x - (lo - ramp)) / ramp).clamp(0.0, 1.0);
                let fall = (((hi + ramp) - x) / ramp).clamp(0.0, 1.0);
                rise.min(fall)
            }
        }
    }

    /// Exact `G(s) = int_0^s g(u) du`.
    pub fn antideriv(&self, s: f64) -> f64 {
        debug_assert!(s >= 0.0);
        match self.kind {
            Kind::CappedPower { cap, power } => {
                let p = power as i32;
                if s <= cap {
                    s.powi(p + 1) / (p + 1) as f64
                } else {
                    cap.powi(p + 1) / (p + 1) as f64 + cap.powi(p) * (s - cap)
                }
            }
            Kind::ExpDecay { lambda } => -(-lambda * s).exp_m1() / lambda,
            Kind::SmoothIndicator { lo, hi, ramp } => {
                let mut total = 0.0;
                // Rising ramp on [lo - ramp, lo]: g = (x - (lo - ramp))/ramp.
                let a = lo - ramp;
                let (r0, r1) = (a.max(0.0), s.min(lo));
                if r1 > r0 {
                    total += ((r1 - a).powi(2) - (r0 - a).powi(2)) / (2.0 * ramp);
                }
                // Plateau on [lo, hi].
                let (p0, p1) = (lo, s.min(hi));
                if p1 > p0 {
                    total += p1 - p0;
                }
                // Falling ramp on [hi, hi + ramp]: g = ((hi + ramp) - x)/ramp.
                let b = hi + ramp;
                let (f0, f1) = (hi, s.min(b));
                if f1 > f0 {
                    total += ((b - f0).powi(2) - (b - f1).powi(2)) / (2.0 * ramp);
                }
                total
            }
        }
    }

    pub fn sup_bound(&self) -> f64 {
        match self.kind {
            Kind::CappedPower { cap, power } => {
                if power == 0 {
                    1.0
                } else {
                    cap.powi(power as i32)
                }
            }
            Kind::ExpDecay { .. } | Kind::SmoothIndicator { .. } => 1.0,
        }
    }

    /// The exact inner split integral
    /// `int_0^1 [g(r s) + g((1-r) s)] dr = 2 G(s) / s`, with the `s = 0`
    /// limit `2 g(0)`.
    pub fn pair_kernel(&self, s: f64) -> f64 {
        if s == 0.0 {
            2.0 * self.eval(0.0)
        } else {
            2.0 * self.antideriv(s) / s
        }
    }
}

/// `N` unit-weight atoms; mass is 1 by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    atoms: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(atoms: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Domain("empirical measure needs atoms".into()));
        }
        if let Some(bad) = atoms.iter().find(|a| !a.is_finite() || **a < 0.0) {
            return Err(Error::Domain(format!("atom {bad} not in [0, inf)")));
        }
        Ok(Self { atoms })
    }

    pub fn from_state(state: &ContinuousWealthState) -> Self {
        Self {
            atoms: state.wealth().to_vec(),
        }
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }
}

/// `<g, mu> = (1/N) sum_i g(atom_i)`.
pub fn bracket(g: &TestFunction, mu: &EmpiricalMeasure) -> f64 {
    mu.atoms.iter().map(|&x| g.eval(x)).sum::<f64>() / mu.num_atoms() as f64
}

/// Pair-measure bracket `(1/N^2) sum_{i != j} h(atom_i, atom_j)`.
pub fn pair_bracket<H: Fn(f64, f64) -> f64>(h: H, mu: &EmpiricalMeasure) -> f64 {
    let n = mu.num_atoms();
    let mut total = 0.0;
    for (i, &x) in mu.atoms.iter().enumerate() {
        for (j, &y) in mu.atoms.iter().enumerate() {
            if i != j {
                total += h(x, y);
            }
        }
    }
    total / (n as f64 * n as f64)
}

/// The algebraically equivalent product-minus-diagonal route
/// `<h, mu x mu> - (1/N) <h(x,x), mu>`.
pub fn pair_bracket_product_form<H: Fn(f64, f64) -> f64>(h: H, mu: &EmpiricalMeasure) -> f64 {
    let n = mu.num_atoms() as f64;
    let mut full = 0.0;
    for &x in &mu.atoms {
        for &y in &mu.atoms {
            full += h(x, y);
        }
    }
    // <h(x,x), mu> = diag / N, and the correction carries another 1/N.
    let diag: f64 = mu.atoms.iter().map(|&x| h(x, x)).sum();
    full / (n * n) - diag / (n * n)
}

fn within_cap(s: f64, cap: f64) -> bool {
    // Float slack: pair sums along a trajectory may exceed the conserved
    // total by rounding only.
    s <= cap * (1.0 + 1e-12)
}

/// Empirical collision bracket
/// `(1/N^2) sum_{i != j} 1{s_ij <= W_N} (2 G(s_ij)/s_ij - g(x_i) - g(x_j))`
/// with `s_ij = x_i + x_j`. Quadratic in the number of atoms, except for
/// the conserved observables `g = 1` and `g = min(x, cap)` with
/// `cap >= W_N`, whose per-pair terms cancel identically.
pub fn qn_bracket(g: &TestFunction, mu: &EmpiricalMeasure, total_wealth: f64) -> f64 {
    match g.kind {
        Kind::CappedPower { power: 0, .. } => return 0.0,
        Kind::CappedPower { cap, power: 1 } if cap >= total_wealth => return 0.0,
        _ => {}
    }
    let n = mu.num_atoms();
    let gx: Vec<f64> = mu.atoms.iter().map(|&x| g.eval(x)).collect();
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let s = mu.atoms[i] + mu.atoms[j];
            if within_cap(s, total_wealth) {
                // Both ordered pairs contribute the same term.
                total += 2.0 * (g.pair_kernel(s) - gx[i] - gx[j]);
            }
        }
    }
    total / (n as f64 * n as f64)
}

/// Piecewise-linear sample path of the martingale residual, stored cadlag:
/// a pre-jump and a post-jump point share each jump time.
#[derive(Debug, Clone)]
pub struct MartingalePath {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl MartingalePath {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn final_value(&self) -> f64 {
        *self.values.last().expect("path is nonempty")
    }

    /// `sup_t M_t^2`; exact because the path is linear between stored
    /// points.
    pub fn sup_squared(&self) -> f64 {
        self.values.iter().map(|v| v * v).fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "time,M_value")?;
        for (t, v) in self.times.iter().zip(&self.values) {
            writeln!(w, "{t},{v}")?;
        }
        Ok(())
    }
}

/// Martingale residual
/// `M_t = <g, mu_t> - <g, mu_0> - int_0^t <g, Q_N(mu_s)> ds`
/// along a Poissonized trajectory. The drift integral is exact: the
/// empirical measure is piecewise constant between jumps.
///
/// Cost is `O(N^2 + events * N)`; refuses more than [`QN_AGENT_CAP`]
/// agents.
pub fn martingale_residual(
    traj: &TrajectoryRecord,
    g: &TestFunction,
    total_wealth: f64,
) -> Result<MartingalePath> {
    let n = traj.initial().num_agents();
    if n > QN_AGENT_CAP {
        return Err(Error::Resource(format!(
            "martingale residual is quadratic in agents; {n} exceeds cap {QN_AGENT_CAP}"
        )));
    }
    let nf = n as f64;
    let mut atoms: Vec<f64> = traj.initial().wealth().to_vec();
    let mut gx: Vec<f64> = atoms.iter().map(|&x| g.eval(x)).collect();
    let mut sum_g: f64 = gx.iter().sum();

    let kernel = |s: f64| {
        if within_cap(s, total_wealth) {
            g.pair_kernel(s)
        } else {
            0.0
        }
    };
    // pair_sum = sum over ordered pairs (k != l) of the capped kernel.
    let mut pair_sum = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            pair_sum += 2.0 * kernel(atoms[i] + atoms[j]);
        }
    }
    let qn_of = |pair_sum: f64, sum_g: f64| {
        (pair_sum - 2.0 * (nf - 1.0) * sum_g) / (nf * nf)
    };

    let bracket0 = sum_g / nf;
    let mut drift = 0.0;
    let mut qn = qn_of(pair_sum, sum_g);
    let mut prev_t = 0.0;
    let mut times = vec![0.0];
    let mut values = vec![0.0];

    for ev in traj.events() {
        let (i, j) = (ev.first_agent, ev.second_agent);
        drift += (ev.time - prev_t) * qn;
        prev_t = ev.time;
        let m_pre = (sum_g / nf - bracket0) - drift;
        times.push(ev.time);
        values.push(m_pre);

        // Retire every pair term touching i or j, apply the exchange,
        // then rebuild those terms.
        for (k, &x) in atoms.iter().enumerate() {
            if k != i && k != j {
                pair_sum -= 2.0 * (kernel(atoms[i] + x) + kernel(atoms[j] + x));
            }
        }
        pair_sum -= 2.0 * kernel(atoms[i] + atoms[j]);
        sum_g -= gx[i] + gx[j];

        let s = atoms[i] + atoms[j];
        let new_i = ev.fraction * s;
        atoms[i] = new_i;
        atoms[j] = s - new_i;
        gx[i] = g.eval(atoms[i]);
        gx[j] = g.eval(atoms[j]);

        for (k, &x) in atoms.iter().enumerate() {
            if k != i && k != j {
                pair_sum += 2.0 * (kernel(atoms[i] + x) + kernel(atoms[j] + x));
            }
        }
        pair_sum += 2.0 * kernel(atoms[i] + atoms[j]);
        sum_g += gx[i] + gx[j];

        qn = qn_of(pair_sum, sum_g);
        let m_post = (sum_g / nf - bracket0) - drift;
        times.push(ev.time);
        values.push(m_post);
    }
    drift += (traj.horizon() - prev_t) * qn;
    times.push(traj.horizon());
    values.push(sum_g / nf - bracket0 - drift);
    Ok(MartingalePath { times, values })
}

/// Verdict of the ensemble variance bound
/// `E[sup_{s<=T} (M_s)^2] <= 64 |g|^2 T / N`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct MartingaleBoundReport {
    pub g: String,
    #[serde(rename = "N")]
    pub num_agents: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub replicas: usize,
    pub empirical: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Estimate `E[sup M^2]` over seeded replicas (streams `0..replicas` of
/// `seed`) and compare with the variance bound. Replicas run in parallel;
/// the mean is reduced in replica order.
pub fn martingale_bound_check(
    initial: &ContinuousWealthState,
    g: &TestFunction,
    horizon: f64,
    replicas: usize,
    seed: u64,
) -> Result<MartingaleBoundReport> {
    if replicas < 100 {
        return Err(Error::Domain(format!(
            "need at least 100 replicas for the bound check, got {replicas}"
        )));
    }
    let total_wealth = initial.total();
    let sups: Vec<f64> = (0..replicas)
        .into_par_iter()
        .map(|rep| {
            let mut rng = RngStream::new(seed, rep as u64);
            let traj = poisson(initial, horizon, &mut rng)?;
            Ok(martingale_residual(&traj, g, total_wealth)?.sup_squared())
        })
        .collect::<Result<Vec<_>>>()?;
    let empirical = sups.iter().sum::<f64>() / replicas as f64;
    let sup_g = g.sup_bound();
    let bound = 64.0 * sup_g * sup_g * horizon / initial.num_agents() as f64;
    Ok(MartingaleBoundReport {
        g: g.name(),
        num_agents: initial.num_agents(),
        horizon,
        replicas,
        empirical,
        bound,
        pass: empirical <= bound,
    })
}

fn poisson(
    initial: &ContinuousWealthState,
    horizon: f64,
    rng: &mut RngStream,
) -> Result<TrajectoryRecord> {
    crate::chains::poisson_simulate(initial, horizon, None, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chains::poisson_simulate;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn measure(atoms: &[f64]) -> EmpiricalMeasure {
        EmpiricalMeasure::new(atoms.to_vec()).unwrap()
    }

    #[test]
    fn bracket_examples() {
        let one = TestFunction::constant_one();
        let mu = measure(&[0.4, 1.2, 3.3]);
        assert_abs_diff_eq!(bracket(&one, &mu), 1.0, epsilon = 1e-15);

        let id = TestFunction::capped_identity(10.0).unwrap();
        assert_abs_diff_eq!(bracket(&id, &measure(&[1.0, 3.0])), 2.0, epsilon = 1e-15);

        let e = TestFunction::exp_decay(1.0).unwrap();
        assert_abs_diff_eq!(bracket(&e, &measure(&[0.0, 0.0])), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn pair_bracket_examples() {
        // Indicator of [0,2] x [0,2] on atoms (1,3): no off-diagonal pair
        // lands in the square.
        let mu = measure(&[1.0, 3.0]);
        let ind = |x: f64, y: f64| {
            if x <= 2.0 && y <= 2.0 {
                1.0
            } else {
                0.0
            }
        };
        assert_abs_diff_eq!(pair_bracket(ind, &mu), 0.0, epsilon = 1e-15);

        let mu5 = measure(&[0.1, 0.2, 0.3, 0.4, 0.5]);
        assert_abs_diff_eq!(
            pair_bracket(|_, _| 1.0, &mu5),
            4.0 / 5.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn pair_bracket_routes_agree() {
        let mut rng = RngStream::new(314, 0);
        for _ in 0..100 {
            let n = 2 + rng.rng().random_range(0..12) as usize;
            let atoms: Vec<f64> = (0..n).map(|_| 3.0 * rng.uniform()).collect();
            let mu = measure(&atoms);
            let h = |x: f64, y: f64| (x - 0.3).sin() * (0.7 * y).cos() + 0.25 * x * y;
            let a = pair_bracket(h, &mu);
            let b = pair_bracket_product_form(h, &mu);
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn qn_bracket_conserved_observables_vanish() {
        let mu = measure(&[0.25, 0.5, 0.125, 0.125]);
        let one = TestFunction::constant_one();
        assert_abs_diff_eq!(qn_bracket(&one, &mu, 1.0), 0.0, epsilon = 1e-15);
        let id = TestFunction::capped_identity(1.0).unwrap();
        assert_abs_diff_eq!(qn_bracket(&id, &mu, 1.0), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn qn_bracket_closed_form_and_monte_carlo_agree() {
        // Atoms (1,1), total wealth 2, g = exp(-x): the closed form is
        // (1/2)(2 G(2)/2 - 2 e^{-1}) with G(2) = 1 - e^{-2}.
        let mu = measure(&[1.0, 1.0]);
        let g = TestFunction::exp_decay(1.0).unwrap();
        let exact = 0.5 * ((1.0 - (-2.0f64).exp()) - 2.0 * (-1.0f64).exp());
        assert_abs_diff_eq!(exact, 0.064_452_917_210_251_3, epsilon = 1e-15);
        let val = qn_bracket(&g, &mu, 2.0);
        assert_abs_diff_eq!(val, exact, epsilon = 1e-12);

        // Monte Carlo oracle over the split variable r.
        let mut rng = RngStream::new(271828, 0);
        let samples = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..samples {
            let r = rng.uniform();
            // Both ordered pairs of the two atoms: s = 2, g(x_i)=g(x_j)=e^{-1}.
            acc += 0.5
                * (g.eval(2.0 * r) + g.eval(2.0 * (1.0 - r))
                    - 2.0 * (-1.0f64).exp());
        }
        let mc = acc / samples as f64;
        let se = 3.0 * 0.25 / (samples as f64).sqrt();
        assert!((mc - val).abs() < se, "mc {mc} vs closed form {val}");
    }

    #[test]
    fn qn_bracket_respects_wealth_cap() {
        // With the cap below the pair sum the interaction is dropped.
        let mu = measure(&[1.0, 1.0]);
        let g = TestFunction::exp_decay(1.0).unwrap();
        assert_abs_diff_eq!(qn_bracket(&g, &mu, 1.5), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn test_function_antiderivatives_match_finite_differences() {
        let fns = vec![
            TestFunction::constant_one(),
            TestFunction::capped_identity(2.0).unwrap(),
            TestFunction::capped_power(1.5, 3).unwrap(),
            TestFunction::exp_decay(0.7).unwrap(),
            TestFunction::smooth_indicator(0.5, 1.25).unwrap(),
            TestFunction::smooth_indicator_with_ramp(0.0, 2.0, 0.05).unwrap(),
        ];
        // Probe points chosen away from the piecewise kinks.
        let probes = [0.11, 0.37, 0.93, 1.13, 1.77, 2.61, 3.45];
        let h = 1e-5;
        for g in &fns {
            assert_eq!(g.antideriv(0.0), 0.0, "{}", g.name());
            for &s in &probes {
                let fd = (g.antideriv(s + h) - g.antideriv(s - h)) / (2.0 * h);
                let exact = g.eval(s);
                assert!(
                    (fd - exact).abs() <= 1e-6 * exact.abs().max(1.0),
                    "{} at {s}: fd {fd} vs {exact}",
                    g.name()
                );
                assert!(g.eval(s).abs() <= g.sup_bound() + 1e-12);
            }
        }
    }

    #[test]
    fn martingale_zero_jump_trajectory_is_pure_drift() {
        let initial = ContinuousWealthState::new(vec![0.2, 0.8, 1.0]).unwrap();
        let mut rng = RngStream::new(5, 0);
        // Horizon so small that no jump occurs with this seed.
        let traj = poisson_simulate(&initial, 1e-6, None, &mut rng).unwrap();
        assert!(traj.events().is_empty());
        let g = TestFunction::exp_decay(1.0).unwrap();
        let mu = EmpiricalMeasure::from_state(&initial);
        let qn = qn_bracket(&g, &mu, initial.total());
        let path = martingale_residual(&traj, &g, initial.total()).unwrap();
        assert_eq!(path.values()[0], 0.0);
        assert_abs_diff_eq!(path.final_value(), -1e-6 * qn, epsilon = 1e-18);
    }

    #[test]
    fn martingale_vanishes_for_conserved_observable() {
        let initial = ContinuousWealthState::new(vec![0.1, 0.5, 0.25, 0.15]).unwrap();
        let mut rng = RngStream::new(17, 0);
        let traj = poisson_simulate(&initial, 5.0, None, &mut rng).unwrap();
        assert!(!traj.events().is_empty());
        let g = TestFunction::capped_identity(initial.total()).unwrap();
        let path = martingale_residual(&traj, &g, initial.total()).unwrap();
        for v in path.values() {
            assert!(v.abs() < 1e-10, "M = {v} should vanish for g = x");
        }
    }

    #[test]
    fn martingale_ensemble_mean_is_zero() {
        let initial = ContinuousWealthState::new(vec![1.0; 50]).unwrap();
        let g = TestFunction::exp_decay(1.0).unwrap();
        let replicas = 10_000usize;
        let finals: Vec<f64> = (0..replicas)
            .into_par_iter()
            .map(|rep| {
                let mut rng = RngStream::new(161803, rep as u64);
                let traj = poisson_simulate(&initial, 2.0, None, &mut rng).unwrap();
                martingale_residual(&traj, &g, initial.total())
                    .unwrap()
                    .final_value()
            })
            .collect();
        let mean = finals.iter().sum::<f64>() / replicas as f64;
        let var = finals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (replicas as f64 - 1.0);
        let se = (var / replicas as f64).sqrt();
        assert!(mean.abs() <= 3.0 * se, "mean {mean} vs 3se {}", 3.0 * se);
    }

    #[test]
    fn martingale_bound_check_smoke() {
        let initial = ContinuousWealthState::new(vec![1.0; 100]).unwrap();
        let g = TestFunction::exp_decay(1.0).unwrap();
        let report = martingale_bound_check(&initial, &g, 1.0, 100, 4096).unwrap();
        assert!(report.pass, "{report:?}");
        assert_abs_diff_eq!(report.bound, 0.64, epsilon = 1e-12);
        assert!(report.empirical > 0.0);

        assert!(martingale_bound_check(&initial, &g, 1.0, 50, 1).is_err());
    }

    #[test]
    fn martingale_bound_check_zero_horizon() {
        let initial = ContinuousWealthState::new(vec![1.0; 20]).unwrap();
        let g = TestFunction::exp_decay(1.0).unwrap();
        let report = martingale_bound_check(&initial, &g, 0.0, 100, 9).unwrap();
        assert_eq!(report.empirical, 0.0);
        assert_eq!(report.bound, 0.0);
        assert!(report.pass);
    }

    #[test]
    fn bracket_conservation_along_trajectories() {
        let initial = ContinuousWealthState::new(vec![0.5, 1.5, 1.0, 2.0, 0.0]).unwrap();
        let w = initial.total();
        let mut rng = RngStream::new(33, 0);
        let traj = poisson_simulate(&initial, 10.0, None, &mut rng).unwrap();
        let one = TestFunction::constant_one();
        let id = TestFunction::capped_identity(w).unwrap();
        traj.replay(|_, state| {
            let mu = EmpiricalMeasure::from_state(state);
            assert_abs_diff_eq!(bracket(&one, &mu), 1.0, epsilon = 1e-15);
            assert_abs_diff_eq!(
                5.0 * bracket(&id, &mu),
                w,
                epsilon = 1e-9 * w.max(1.0)
            );
        });
    }

    #[test]
    fn bracket_increment_variance_soft_bound() {
        // E[sup_{r in [s,t)} <g, mu_r - mu_s>^2] <= A((t-s)^2 + (t-s)/N)
        // with the test margin A = 80 |g|^2.
        let g = TestFunction::exp_decay(1.0).unwrap();
        let windows = [(0.0, 0.5), (0.5, 1.5), (1.0, 2.0)];
        for &n in &[50usize, 200] {
            let initial = ContinuousWealthState::new(vec![1.0; n]).unwrap();
            let replicas = 300;
            let mut sums = [0.0f64; 3];
            for rep in 0..replicas {
                let mut rng = RngStream::new(88, rep);
                let traj = poisson_simulate(&initial, 2.0, None, &mut rng).unwrap();
                // Bracket path: value after each jump.
                let mut path = vec![(0.0, bracket(&g, &EmpiricalMeasure::from_state(&initial)))];
                traj.replay(|ev, state| {
                    path.push((ev.time, bracket(&g, &EmpiricalMeasure::from_state(state))));
                });
                for (w, &(s, t)) in windows.iter().enumerate() {
                    let at_s = path
                        .iter()
                        .rev()
                        .find(|(tau, _)| *tau <= s)
                        .map(|(_, v)| *v)
                        .unwrap();
                    let sup = path
                        .iter()
                        .filter(|(tau, _)| *tau >= s && *tau < t)
                        .map(|(_, v)| (v - at_s) * (v - at_s))
                        .fold(0.0, f64::max);
                    sums[w] += sup;
                }
            }
            for (w, &(s, t)) in windows.iter().enumerate() {
                let mean = sums[w] / replicas as f64;
                let bound = 80.0 * ((t - s) * (t - s) + (t - s) / n as f64);
                assert!(
                    mean <= bound,
                    "window ({s},{t}) N={n}: {mean} > {bound}"
                );
            }
        }
    }

    #[test]
    fn martingale_path_csv() {
        let initial = ContinuousWealthState::new(vec![0.5, 0.5]).unwrap();
        let mut rng = RngStream::new(2, 0);
        let traj = poisson_simulate(&initial, 2.0, None, &mut rng).unwrap();
        let g = TestFunction::exp_decay(1.0).unwrap();
        let path = martingale_residual(&traj, &g, 1.0).unwrap();
        let mut buf = Vec::new();
        path.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("time,M_value\n0,0\n"));
    }
}
