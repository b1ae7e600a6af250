//! State representations for the exchange models, the simplex mesh, and
//! counting over the discrete state space.
//!
//! A discrete state is a composition of `n` into `N` nonnegative parts; a
//! continuous state is a point of the scaled simplex `{x >= 0, sum x = W}`.
//! Both are immutable from the outside except through the `exchange`
//! methods, which rewrite one pair of entries while preserving their sum.

use std::io::{BufRead, Write};

use crate::{Error, Result};

/// Absolute conservation budget for a continuous state: accumulated
/// representation error must stay below `1e-9 * max(1, total)`.
pub const CONSERVATION_TOL: f64 = 1e-9;

/// Default cap on how many discrete states [`enumerate_states`] will
/// materialize.
pub const ENUMERATION_CAP: u64 = 1_000_000;

/// Wealth units per agent; entries are nonnegative integers summing to
/// `total`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DiscreteWealthState {
    counts: Vec<u64>,
    total: u64,
}

impl DiscreteWealthState {
    pub fn new(counts: Vec<u64>) -> Result<Self> {
        if counts.len() < 2 {
            return Err(Error::Domain(format!(
                "need at least 2 agents, got {}",
                counts.len()
            )));
        }
        let total = counts
            .iter()
            .try_fold(0u64, |acc, &c| acc.checked_add(c))
            .ok_or_else(|| Error::Overflow("total wealth exceeds u64".into()))?;
        Ok(Self { counts, total })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn num_agents(&self) -> usize {
        self.counts.len()
    }

    /// Rewrite the pair `(i, j)` as `(new_i, s - new_i)` where
    /// `s = counts[i] + counts[j]`. Exact integer conservation.
    pub fn exchange(&mut self, i: usize, j: usize, new_i: u64) {
        debug_assert!(i != j);
        let s = self.counts[i] + self.counts[j];
        debug_assert!(new_i <= s);
        self.counts[i] = new_i;
        self.counts[j] = s - new_i;
    }

    /// Scale onto the meshed simplex: entry `k` becomes `counts[k] / n`
    /// where `n` is the total, giving a continuous state with total 1.
    pub fn to_proportions(&self) -> ContinuousWealthState {
        let n = self.total as f64;
        let wealth = self.counts.iter().map(|&c| c as f64 / n).collect();
        ContinuousWealthState {
            wealth,
            total: 1.0,
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# N={} total={}", self.counts.len(), self.total)?;
        writeln!(w, "agent_index,wealth")?;
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(w, "{i},{c}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let values = read_wealth_column(r)?;
        let counts = values
            .into_iter()
            .map(|v| {
                if v < 0.0 || v.fract() != 0.0 {
                    Err(Error::Parse(format!("non-integer wealth entry {v}")))
                } else {
                    Ok(v as u64)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(counts)
    }
}

/// Nonnegative real wealth per agent. `total` is fixed at construction;
/// exchanges preserve each pair sum exactly, so the global drift stays
/// within [`CONSERVATION_TOL`].
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousWealthState {
    wealth: Vec<f64>,
    total: f64,
}

impl ContinuousWealthState {
    pub fn new(wealth: Vec<f64>) -> Result<Self> {
        if wealth.len() < 2 {
            return Err(Error::Domain(format!(
                "need at least 2 agents, got {}",
                wealth.len()
            )));
        }
        if let Some(bad) = wealth.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::Domain(format!("wealth entry {bad} not in [0, inf)")));
        }
        let total = wealth.iter().sum();
        Ok(Self { wealth, total })
    }

    pub fn wealth(&self) -> &[f64] {
        &self.wealth
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn num_agents(&self) -> usize {
        self.wealth.len()
    }

    /// Rewrite the pair `(i, j)` as `(r*s, s - r*s)` with
    /// `s = wealth[i] + wealth[j]`, so the pair sum is exact by
    /// construction.
    pub fn exchange(&mut self, i: usize, j: usize, r: f64) {
        debug_assert!(i != j);
        debug_assert!((0.0..=1.0).contains(&r));
        let s = self.wealth[i] + self.wealth[j];
        let xi = r * s;
        self.wealth[i] = xi;
        self.wealth[j] = s - xi;
    }

    /// Rewrite the pair `(i, j)` as `(new_i, s - new_i)` with
    /// `s = wealth[i] + wealth[j]`.
    pub fn exchange_to(&mut self, i: usize, j: usize, new_i: f64) {
        debug_assert!(i != j);
        let s = self.wealth[i] + self.wealth[j];
        debug_assert!((0.0..=s).contains(&new_i));
        self.wealth[i] = new_i;
        self.wealth[j] = s - new_i;
    }

    /// `true` if the summed wealth is within the conservation budget of the
    /// recorded total.
    pub fn conservation_ok(&self) -> bool {
        let sum: f64 = self.wealth.iter().sum();
        (sum - self.total).abs() <= CONSERVATION_TOL * self.total.max(1.0)
    }

    /// `true` if every entry is a multiple of the mesh within float slack.
    pub fn is_on_mesh(&self, mesh: MeshSpec) -> bool {
        let n = mesh.denominator() as f64;
        self.wealth.iter().all(|&w| {
            let scaled = w * n;
            (scaled - scaled.round()).abs() <= 1e-9 * scaled.max(1.0)
        })
    }

    /// Project onto the mesh: every entry is floored to the grid and the
    /// remainder is assigned to the last agent, preserving the total.
    pub fn project_to_mesh(&self, mesh: MeshSpec) -> Result<Self> {
        let mut wealth: Vec<f64> = self
            .wealth
            .iter()
            .map(|&w| mesh_floor(w, mesh))
            .collect::<Result<_>>()?;
        let assigned: f64 = wealth.iter().take(wealth.len() - 1).sum();
        *wealth.last_mut().unwrap() = self.total - assigned;
        Ok(Self {
            wealth,
            total: self.total,
        })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# N={} total={}", self.wealth.len(), self.total)?;
        writeln!(w, "agent_index,wealth")?;
        for (i, x) in self.wealth.iter().enumerate() {
            writeln!(w, "{i},{x}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        Self::new(read_wealth_column(r)?)
    }
}

fn read_wealth_column<R: BufRead>(r: R) -> Result<Vec<f64>> {
    let mut values = Vec::new();
    for line in r.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("agent_index") {
            continue;
        }
        let (_, wealth) = line
            .split_once(',')
            .ok_or_else(|| Error::Parse(format!("expected `agent_index,wealth`, got `{line}`")))?;
        values.push(
            wealth
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("bad wealth `{wealth}`: {e}")))?,
        );
    }
    Ok(values)
}

/// Mesh `1/n` of the unit simplex.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeshSpec {
    denominator: u64,
}

impl MeshSpec {
    pub fn new(denominator: u64) -> Result<Self> {
        if denominator == 0 {
            return Err(Error::Domain("mesh denominator must be >= 1".into()));
        }
        Ok(Self { denominator })
    }

    pub fn denominator(&self) -> u64 {
        self.denominator
    }

    pub fn width(&self) -> f64 {
        1.0 / self.denominator as f64
    }
}

/// Largest grid point `a/n <= x`; satisfies `result <= x < result + 1/n`.
pub fn mesh_floor(x: f64, mesh: MeshSpec) -> Result<f64> {
    if !x.is_finite() || x < 0.0 {
        return Err(Error::Domain(format!("mesh_floor needs x >= 0, got {x}")));
    }
    let n = mesh.denominator as f64;
    let mut a = (x * n).floor();
    // The product can round across a grid boundary; nudge back into the
    // half-open cell.
    if a / n > x {
        a -= 1.0;
    } else if (a + 1.0) / n <= x {
        a += 1.0;
    }
    Ok(a / n)
}

/// Number of compositions of `n` into `N` nonnegative parts,
/// `C(n+N-1, N-1)`. Checked arithmetic; never wraps silently.
pub fn composition_count(n: u64, num_agents: u64) -> Result<u64> {
    if num_agents == 0 {
        return Err(Error::Domain("need at least one part".into()));
    }
    let k = num_agents - 1;
    let mut acc: u128 = 1;
    for i in 1..=k {
        // acc * (n + i) is exact before the division: acc holds C(n+i-1, i-1)
        // and the running product of binomial numerators stays integral.
        let factor = n
            .checked_add(i)
            .ok_or_else(|| Error::Overflow("n + N - 1 exceeds u64".into()))?;
        acc = acc
            .checked_mul(factor as u128)
            .ok_or_else(|| Error::Overflow("composition count exceeds u128".into()))?;
        acc /= i as u128;
    }
    u64::try_from(acc).map_err(|_| Error::Overflow("composition count exceeds u64".into()))
}

/// All compositions of `n` into `N` parts in ascending lexicographic order.
///
/// Refuses to materialize more than `cap` states (default
/// [`ENUMERATION_CAP`] when `None`).
pub fn enumerate_states(n: u64, num_agents: u64, cap: Option<u64>) -> Result<Vec<DiscreteWealthState>> {
    if num_agents < 2 {
        return Err(Error::Domain("need at least 2 agents".into()));
    }
    let count = composition_count(n, num_agents)?;
    let cap = cap.unwrap_or(ENUMERATION_CAP);
    if count > cap {
        return Err(Error::Resource(format!(
            "state space has {count} states, cap is {cap}"
        )));
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut prefix = Vec::with_capacity(num_agents as usize);
    fill_compositions(n, num_agents, &mut prefix, &mut out);
    Ok(out)
}

fn fill_compositions(
    n: u64,
    parts: u64,
    prefix: &mut Vec<u64>,
    out: &mut Vec<DiscreteWealthState>,
) {
    if parts == 1 {
        prefix.push(n);
        out.push(DiscreteWealthState {
            counts: prefix.clone(),
            total: prefix.iter().sum(),
        });
        prefix.pop();
        return;
    }
    for first in 0..=n {
        prefix.push(first);
        fill_compositions(n - first, parts - 1, prefix, out);
        prefix.pop();
    }
}
