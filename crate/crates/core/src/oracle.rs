//! Exact small-instance oracles and statistical distances.
//!
//! The transition matrix here is built directly from the one-step law of
//! the integer chain, state by state, and is the reference every simulator
//! is validated against. The distances (KS, Wasserstein-1, chi-square) are
//! the acceptance statistics for the sampling and limit-theorem checks.

use std::io::Write;

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::state::{composition_count, enumerate_states, DiscreteWealthState};
use crate::{Error, Result};

/// States with more entries than this are refused by
/// [`build_transition_matrix`].
pub const MATRIX_STATE_CAP: u64 = 10_000;

/// Default L1 tolerance for the power iteration.
pub const STATIONARY_TOL: f64 = 1e-13;

const STATIONARY_MAX_ITERS: usize = 1_000_000;

/// Dense row-stochastic matrix over the enumerated composition states.
#[derive(Debug, Clone)]
pub struct TransitionMatrix {
    states: Vec<DiscreteWealthState>,
    /// Row-major `size x size` entries; `probs[from * size + to]`.
    probs: Vec<f64>,
}

impl TransitionMatrix {
    pub fn size(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[DiscreteWealthState] {
        &self.states
    }

    pub fn entry(&self, from: usize, to: usize) -> f64 {
        self.probs[from * self.size() + to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        let s = self.size();
        &self.probs[from * s..(from + 1) * s]
    }

    /// Index of a state in the lexicographic enumeration.
    pub fn state_index(&self, counts: &[u64]) -> Option<usize> {
        self.states
            .binary_search_by(|s| s.counts().cmp(counts))
            .ok()
    }

    pub fn row_sum_max_dev(&self) -> f64 {
        (0..self.size())
            .map(|i| (self.row(i).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn col_sum_max_dev(&self) -> f64 {
        let s = self.size();
        (0..s)
            .map(|j| {
                let col: f64 = (0..s).map(|i| self.probs[i * s + j]).sum();
                (col - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Distribution after `k` steps started from the state with index
    /// `start`.
    pub fn kstep_distribution(&self, start: usize, k: usize) -> Vec<f64> {
        let s = self.size();
        let mut pi = vec![0.0; s];
        pi[start] = 1.0;
        let mut next = vec![0.0; s];
        for _ in 0..k {
            next.iter_mut().for_each(|v| *v = 0.0);
            for (from, &mass) in pi.iter().enumerate() {
                if mass == 0.0 {
                    continue;
                }
                for (to, &p) in self.row(from).iter().enumerate() {
                    next[to] += mass * p;
                }
            }
            std::mem::swap(&mut pi, &mut next);
        }
        pi
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for i in 0..self.size() {
            let row: Vec<String> = self.row(i).iter().map(|p| p.to_string()).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn write_legend<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "state_index,counts")?;
        for (i, s) in self.states.iter().enumerate() {
            let counts: Vec<String> = s.counts().iter().map(|c| c.to_string()).collect();
            writeln!(w, "{i},{}", counts.join(" "))?;
        }
        Ok(())
    }
}

/// Exact one-step kernel of the integer chain on compositions of `n` into
/// `num_agents` parts.
///
/// For each ordered pair `(i, j)` with pooled wealth `s = x_i + x_j`, the
/// pair moves to `(a, s-a)` for `a` uniform over all `s + 1` splits
/// (weight `1/(N(N-1)(s+1))` each; for `s = 0` this is a self-loop).
/// Summing the sources of any target state gives `(s+1)` equal weights
/// per pair, so every column also sums to 1: the kernel is doubly
/// stochastic and the uniform law is stationary.
pub fn build_transition_matrix(n: u64, num_agents: u64) -> Result<TransitionMatrix> {
    let count = composition_count(n, num_agents)?;
    if count > MATRIX_STATE_CAP {
        return Err(Error::Resource(format!(
            "state space has {count} states, matrix cap is {MATRIX_STATE_CAP}"
        )));
    }
    let states = enumerate_states(n, num_agents, Some(MATRIX_STATE_CAP))?;
    let size = states.len();
    let mut probs = vec![0.0; size * size];
    let big_n = num_agents as usize;
    let pair_weight = 1.0 / (big_n as f64 * (big_n as f64 - 1.0));

    let index_of = |counts: &[u64]| -> usize {
        states
            .binary_search_by(|s| s.counts().cmp(counts))
            .expect("reachable state must be enumerated")
    };

    let mut scratch: Vec<u64> = Vec::with_capacity(big_n);
    for (si, state) in states.iter().enumerate() {
        for i in 0..big_n {
            for j in 0..big_n {
                if i == j {
                    continue;
                }
                let s = state.counts()[i] + state.counts()[j];
                let w = pair_weight / (s + 1) as f64;
                for a in 0..=s {
                    scratch.clear();
                    scratch.extend_from_slice(state.counts());
                    scratch[i] = a;
                    scratch[j] = s - a;
                    let ti = index_of(&scratch);
                    probs[si * size + ti] += w;
                }
            }
        }
    }
    Ok(TransitionMatrix { states, probs })
}

/// Fixed point of `pi -> pi P` by power iteration from a point mass,
/// stopping when successive iterates differ by less than `tol` in L1.
pub fn stationary_distribution(matrix: &TransitionMatrix, tol: f64) -> Result<Vec<f64>> {
    stationary_of_rows(matrix.size(), |i| matrix.row(i), tol)
}

/// Power iteration over an arbitrary row-stochastic matrix given row
/// access. Split out so tests can feed synthetic doubly-stochastic
/// matrices.
pub fn stationary_of_rows<'a, F>(size: usize, rows: F, tol: f64) -> Result<Vec<f64>>
where
    F: Fn(usize) -> &'a [f64],
{
    if size == 0 {
        return Err(Error::Domain("empty matrix".into()));
    }
    let mut pi = vec![0.0; size];
    pi[0] = 1.0;
    let mut next = vec![0.0; size];
    for _ in 0..STATIONARY_MAX_ITERS {
        next.iter_mut().for_each(|v| *v = 0.0);
        for (from, &mass) in pi.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            for (to, &p) in rows(from).iter().enumerate() {
                next[to] += mass * p;
            }
        }
        let norm: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= norm);
        let diff: f64 = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut pi, &mut next);
        if diff < tol {
            return Ok(pi);
        }
    }
    Err(Error::NonConvergence(format!(
        "power iteration did not reach L1 tolerance {tol} in {STATIONARY_MAX_ITERS} iterations"
    )))
}

/// A target distribution on the half-line with enough analytic structure
/// for exact KS and Wasserstein-1 evaluation.
pub trait TargetDist {
    fn cdf(&self, x: f64) -> f64;
    /// `int_0^x F(u) du`, exact.
    fn cdf_antideriv(&self, x: f64) -> f64;
    /// Generalized inverse of the CDF.
    fn quantile(&self, p: f64) -> f64;
    fn mean(&self) -> f64;
    fn name(&self) -> &'static str;
}

/// Exponential with the given mean.
#[derive(Debug, Clone, Copy)]
pub struct ExponentialTarget {
    pub mean: f64,
}

impl TargetDist for ExponentialTarget {
    fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            -(-x / self.mean).exp_m1()
        }
    }

    fn cdf_antideriv(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            x + self.mean * (-x / self.mean).exp_m1()
        }
    }

    fn quantile(&self, p: f64) -> f64 {
        -self.mean * (1.0 - p).ln()
    }

    fn mean(&self) -> f64 {
        self.mean
    }

    fn name(&self) -> &'static str {
        "exponential"
    }
}

/// Uniform on `[0, upper]`.
#[derive(Debug, Clone, Copy)]
pub struct UniformTarget {
    pub upper: f64,
}

impl TargetDist for UniformTarget {
    fn cdf(&self, x: f64) -> f64 {
        (x / self.upper).clamp(0.0, 1.0)
    }

    fn cdf_antideriv(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else if x <= self.upper {
            x * x / (2.0 * self.upper)
        } else {
            self.upper / 2.0 + (x - self.upper)
        }
    }

    fn quantile(&self, p: f64) -> f64 {
        p * self.upper
    }

    fn mean(&self) -> f64 {
        self.upper / 2.0
    }

    fn name(&self) -> &'static str {
        "uniform"
    }
}

/// Point mass at `at`.
#[derive(Debug, Clone, Copy)]
pub struct DiracTarget {
    pub at: f64,
}

impl TargetDist for DiracTarget {
    fn cdf(&self, x: f64) -> f64 {
        if x >= self.at {
            1.0
        } else {
            0.0
        }
    }

    fn cdf_antideriv(&self, x: f64) -> f64 {
        (x - self.at).max(0.0)
    }

    fn quantile(&self, _p: f64) -> f64 {
        self.at
    }

    fn mean(&self) -> f64 {
        self.at
    }

    fn name(&self) -> &'static str {
        "dirac"
    }
}

/// Geometric on `{0, 1, 2, ...}` with success probability `p`:
/// `P(k) = p (1-p)^k`.
#[derive(Debug, Clone, Copy)]
pub struct GeometricTarget {
    pub p: f64,
}

impl GeometricTarget {
    pub fn cdf_at(&self, k: u64) -> f64 {
        1.0 - (1.0 - self.p).powi(k as i32 + 1)
    }
}

impl TargetDist for GeometricTarget {
    fn cdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            0.0
        } else {
            self.cdf_at(x.floor() as u64)
        }
    }

    fn cdf_antideriv(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let q = 1.0 - self.p;
        let k = x.floor();
        // sum_{j<k} F(j) = k - (q/p)(1 - q^k), then the partial cell.
        let full = k - q / self.p * (1.0 - q.powf(k));
        full + (x - k) * self.cdf(k)
    }

    fn quantile(&self, p: f64) -> f64 {
        if p <= 0.0 {
            return 0.0;
        }
        if p >= 1.0 {
            return f64::INFINITY;
        }
        let q = 1.0 - self.p;
        // Smallest integer k with 1 - q^(k+1) >= p.
        let mut k = ((1.0 - p).ln() / q.ln() - 1.0).ceil().max(0.0);
        while self.cdf_at(k as u64) < p {
            k += 1.0;
        }
        while k > 0.0 && self.cdf_at(k as u64 - 1) >= p {
            k -= 1.0;
        }
        k
    }

    fn mean(&self) -> f64 {
        (1.0 - self.p) / self.p
    }

    fn name(&self) -> &'static str {
        "geometric"
    }
}

/// DKW confidence bound `sqrt(ln(2/alpha) / (2n))` on the KS statistic.
pub fn dkw_bound(n: usize, alpha: f64) -> f64 {
    ((2.0 / alpha).ln() / (2.0 * n as f64)).sqrt()
}

/// Two-sided KS statistic of a sample against a CDF, evaluating both
/// one-sided jumps of the empirical CDF at every sample point.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    assert!(!samples.is_empty(), "ks_statistic needs samples");
    let mut xs = samples.to_vec();
    xs.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    let mut sup: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        sup = sup.max(((i + 1) as f64 / n - f).abs());
        sup = sup.max((i as f64 / n - f).abs());
    }
    sup
}

/// KS statistic against an integer-supported target, with samples binned to the
/// nearest support point. The sup runs over the integer support; binning at
/// half-integer thresholds keeps the statistic meaningful for samples that
/// are integers up to a small multiplicative perturbation.
pub fn ks_statistic_discrete<F: Fn(u64) -> f64>(samples: &[f64], cdf_at: F) -> f64 {
    assert!(!samples.is_empty(), "ks_statistic_discrete needs samples");
    let n = samples.len() as f64;
    let rounded: Vec<u64> = samples.iter().map(|&x| x.round().max(0.0) as u64).collect();
    let max_k = rounded.iter().copied().max().unwrap();
    let mut counts = vec![0u64; max_k as usize + 1];
    for &k in &rounded {
        counts[k as usize] += 1;
    }
    let mut cum = 0u64;
    let mut sup: f64 = 0.0;
    for (k, &c) in counts.iter().enumerate() {
        cum += c;
        sup = sup.max((cum as f64 / n - cdf_at(k as u64)).abs());
    }
    sup
}

/// Wasserstein-1 distance between the empirical measure of `samples` and
/// `target`: exact piecewise integration of `|F_emp - F|` between sample
/// points plus the analytic tail beyond the largest sample.
pub fn wasserstein1(samples: &[f64], target: &dyn TargetDist) -> f64 {
    assert!(!samples.is_empty(), "wasserstein1 needs samples");
    let mut xs = samples.to_vec();
    xs.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    assert!(xs[0] >= 0.0, "wasserstein1 needs nonnegative samples");
    let n = xs.len() as f64;
    let mut total = 0.0;
    let mut prev = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        total += abs_const_minus_cdf(i as f64 / n, prev, x, target);
        prev = x;
    }
    // int_{x_max}^inf (1 - F) = mean - x_max + int_0^{x_max} F.
    total += target.mean() - prev + target.cdf_antideriv(prev);
    total
}

/// `int_a^b |c - F(x)| dx`, splitting at the quantile of `c` where the sign
/// flips.
fn abs_const_minus_cdf(c: f64, a: f64, b: f64, target: &dyn TargetDist) -> f64 {
    if b <= a {
        return 0.0;
    }
    let split = target.quantile(c).clamp(a, b);
    let part = |lo: f64, hi: f64| {
        (c * (hi - lo) - (target.cdf_antideriv(hi) - target.cdf_antideriv(lo))).abs()
    };
    part(a, split) + part(split, b)
}

/// Pearson chi-square verdict at significance `p > 0.001`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ChiSquareReport {
    pub statistic: f64,
    pub dof: usize,
    pub threshold: f64,
    pub pass: bool,
}

/// Pearson test of observed counts against expected cell probabilities.
/// Adjacent cells are merged until every expected count is at least 5.
pub fn chi_square_validate(observed: &[u64], expected_probs: &[f64]) -> Result<ChiSquareReport> {
    if observed.len() != expected_probs.len() {
        return Err(Error::Domain(format!(
            "{} observed cells vs {} expected",
            observed.len(),
            expected_probs.len()
        )));
    }
    let total: u64 = observed.iter().sum();
    let prob_mass: f64 = expected_probs.iter().sum();
    if total == 0 || prob_mass <= 0.0 {
        return Err(Error::Domain("all-zero observations or expectations".into()));
    }

    // Merge runs of consecutive cells until each merged cell expects >= 5.
    let mut cells: Vec<(f64, f64)> = Vec::new(); // (observed, expected)
    let mut acc_obs = 0.0;
    let mut acc_exp = 0.0;
    for (&o, &p) in observed.iter().zip(expected_probs) {
        acc_obs += o as f64;
        acc_exp += p / prob_mass * total as f64;
        if acc_exp >= 5.0 {
            cells.push((acc_obs, acc_exp));
            acc_obs = 0.0;
            acc_exp = 0.0;
        }
    }
    if acc_exp > 0.0 || acc_obs > 0.0 {
        if let Some(last) = cells.last_mut() {
            last.0 += acc_obs;
            last.1 += acc_exp;
        } else {
            return Err(Error::Domain("expected counts too small to test".into()));
        }
    }
    if cells.len() < 2 {
        return Err(Error::Domain("fewer than two cells after merging".into()));
    }

    let statistic: f64 = cells
        .iter()
        .map(|&(o, e)| (o - e) * (o - e) / e)
        .sum();
    let dof = cells.len() - 1;
    let threshold = ChiSquared::new(dof as f64)
        .expect("dof >= 1")
        .inverse_cdf(0.999);
    Ok(ChiSquareReport {
        statistic,
        dof,
        threshold,
        pass: statistic <= threshold,
    })
}
