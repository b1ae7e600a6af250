//! Mean-field collision operator and kinetic-equation solver on a uniform
//! grid.
//!
//! Densities are piecewise constant on `cells` cells of width
//! `dx = x_max / cells` with values at cell centers `(i + 1/2) dx`. The
//! self-convolution of such a density is sampled at the points
//! `(k + 1) dx`, where the discrete product sum equals the exact
//! convolution integral; the gain term of the collision operator is then
//! the cell-overlap integral of `2 (f*f)(s) / s` above `x`, which is the
//! change-of-variables image of the uniform-split integral and avoids the
//! `1/r^2` endpoint of the literal form. The literal nested-quadrature
//! form survives as the independent cross-check
//! [`qbar_apply_direct`].
//!
//! With these conventions the discrete operator conserves mass and first
//! moment to rounding, and the exponential families annihilate it to the
//! same accuracy at the grids used by the verification suite.

use std::io::Write;

use crate::measures::{EmpiricalMeasure, TestFunction};
use crate::oracle::TargetDist;
use crate::{Error, Result};

/// A time step must not clip more mass than this.
pub const MAX_CLIP_PER_STEP: f64 = 1e-4;

/// Raw projection of a density onto the grid must carry at least this
/// much of the unit mass.
pub const PROJECTION_MASS_TOL: f64 = 1e-6;

/// Probability density, piecewise constant on a uniform grid over
/// `[0, x_max]`, normalized to unit mass at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedDensity {
    x_max: f64,
    values: Vec<f64>,
}

impl GriddedDensity {
    /// Project `f` by midpoint evaluation and normalize. Returns the
    /// density and the raw (pre-normalization) projected mass.
    pub fn from_fn<F: Fn(f64) -> f64>(x_max: f64, cells: usize, f: F) -> Result<(Self, f64)> {
        check_grid(x_max, cells)?;
        let dx = x_max / cells as f64;
        let values: Vec<f64> = (0..cells).map(|i| f((i as f64 + 0.5) * dx)).collect();
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Domain(format!("density value {bad} not in [0, inf)")));
        }
        let raw_mass = values.iter().sum::<f64>() * dx;
        if raw_mass <= 0.0 {
            return Err(Error::Domain("density projects to zero mass".into()));
        }
        let values = values.into_iter().map(|v| v / raw_mass).collect();
        Ok((Self { x_max, values }, raw_mass))
    }

    pub fn from_values(x_max: f64, values: Vec<f64>) -> Result<Self> {
        check_grid(x_max, values.len())?;
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Domain(format!("density value {bad} not in [0, inf)")));
        }
        let dx = x_max / values.len() as f64;
        let raw_mass = values.iter().sum::<f64>() * dx;
        if raw_mass <= 0.0 {
            return Err(Error::Domain("density has zero mass".into()));
        }
        let values = values.into_iter().map(|v| v / raw_mass).collect();
        Ok(Self { x_max, values })
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn cells(&self) -> usize {
        self.values.len()
    }

    pub fn dx(&self) -> f64 {
        self.x_max / self.values.len() as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cell_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dx()
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.dx()
    }

    pub fn mean(&self) -> f64 {
        let dx = self.dx();
        self.values
            .iter()
            .enumerate()
            .map(|(i, &v)| (i as f64 + 0.5) * dx * v)
            .sum::<f64>()
            * dx
    }

    /// Exact `int_0^b f` for the piecewise-constant density.
    pub fn integral_to(&self, b: f64) -> f64 {
        let dx = self.dx();
        if b <= 0.0 {
            return 0.0;
        }
        let b = b.min(self.x_max);
        let full = (b / dx).floor() as usize;
        let full = full.min(self.values.len());
        let mut total: f64 = self.values[..full].iter().sum::<f64>() * dx;
        if full < self.values.len() {
            total += self.values[full] * (b - full as f64 * dx);
        }
        total
    }

    /// CDF of the density; piecewise linear, 1 beyond the grid.
    pub fn cdf(&self, x: f64) -> f64 {
        if x >= self.x_max {
            1.0
        } else {
            self.integral_to(x)
        }
    }

    /// `x,f(x)` rows at cell centers.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,f(x)")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(w, "{},{}", self.cell_center(i), v)?;
        }
        Ok(())
    }
}

fn check_grid(x_max: f64, cells: usize) -> Result<()> {
    if !x_max.is_finite() || x_max <= 0.0 {
        return Err(Error::Domain(format!("x_max must be > 0, got {x_max}")));
    }
    if cells == 0 {
        return Err(Error::Domain("grid needs at least one cell".into()));
    }
    Ok(())
}

/// Exponential family member projected on the grid by exact cell
/// averages: `e^{-x/m}/m` for infinite `w0`, the truncated-and-rescaled
/// version supported on `[0, w0]` otherwise.
///
/// Errors if the grid captures less than `1 - 1e-6` of the mass (grow
/// `x_max`) or if a finite `w0` is off-grid.
pub fn equilibrium_density(
    m: f64,
    w0: Option<f64>,
    x_max: f64,
    cells: usize,
) -> Result<GriddedDensity> {
    if !m.is_finite() || m <= 0.0 {
        return Err(Error::Domain(format!("mean must be > 0, got {m}")));
    }
    check_grid(x_max, cells)?;
    let dx = x_max / cells as f64;
    let support = match w0 {
        Some(w) => {
            check_w0_alignment(w, x_max, cells)?;
            w
        }
        None => f64::INFINITY,
    };
    let scale = match w0 {
        Some(w) => 1.0 / (m * (1.0 - (-w / m).exp())),
        None => 1.0 / m,
    };
    // Exact cell averages: (scale * m / dx) * (e^{-a/m} - e^{-b/m}).
    let mut values = vec![0.0; cells];
    let mut raw_mass = 0.0;
    for (i, v) in values.iter_mut().enumerate() {
        let a = i as f64 * dx;
        let b = (a + dx).min(support);
        if b > a {
            *v = scale * m / dx * ((-a / m).exp() - (-b / m).exp());
            raw_mass += *v * dx;
        }
    }
    if (raw_mass - 1.0).abs() > PROJECTION_MASS_TOL {
        return Err(Error::Domain(format!(
            "grid captures mass {raw_mass}; increase x_max (need e^(-x_max/m) small)"
        )));
    }
    GriddedDensity::from_values(x_max, values)
}

fn check_w0_alignment(w0: f64, x_max: f64, cells: usize) -> Result<()> {
    if !w0.is_finite() || w0 <= 0.0 {
        return Err(Error::Domain(format!("w0 must be > 0, got {w0}")));
    }
    if w0 > x_max * (1.0 + 1e-12) {
        return Err(Error::Domain(format!("w0 = {w0} exceeds x_max = {x_max}")));
    }
    let dx = x_max / cells as f64;
    let ratio = w0 / dx;
    if (ratio - ratio.round()).abs() > 1e-9 {
        return Err(Error::Domain(format!(
            "finite w0 = {w0} must sit on a cell boundary (dx = {dx})"
        )));
    }
    Ok(())
}

/// Self-convolution `(f*f)(s) = int_0^s f(y) f(s-y) dy`, sampled at the
/// points `(k+1) dx` where the cell-product sum is the exact integral for
/// a piecewise-constant `f`.
#[derive(Debug, Clone)]
pub struct SelfConvolution {
    dx: f64,
    values: Vec<f64>,
}

impl SelfConvolution {
    /// Sample point of entry `k`.
    pub fn point(&self, k: usize) -> f64 {
        (k as f64 + 1.0) * self.dx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Total mass `int (f*f)`; equals `mass(f)^2` by the convolution
    /// algebra.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.dx
    }
}

pub fn self_convolve(f: &GriddedDensity) -> SelfConvolution {
    SelfConvolution {
        dx: f.dx(),
        values: convolve_raw(f.values(), f.dx()),
    }
}

fn convolve_raw(values: &[f64], dx: f64) -> Vec<f64> {
    let m = values.len();
    let mut out = vec![0.0; 2 * m - 1];
    for (j, &fj) in values.iter().enumerate() {
        if fj == 0.0 {
            continue;
        }
        for (l, &fl) in values.iter().enumerate() {
            out[j + l] += fj * fl;
        }
    }
    out.iter_mut().for_each(|v| *v *= dx);
    out
}

/// Collision operator on densities, `gain - loss`, evaluated at the cell
/// centers of `f`'s grid.
///
/// `gain(x) = 2 int_x^{min(w0, 2 x_max)} (f*f)(s) / s ds` and
/// `loss(x) = 2 f(x) int_0^{(w0 - x)+} f(y) dy` (for infinite `w0` the
/// loss is `2 f(x)`). The first convolution sample sits at `s = dx` with
/// weight `(f*f)(dx)/dx = f(0)^2`, which is the analytic `s -> 0` limit,
/// so the grid origin needs no special casing.
pub fn qbar_apply(f: &GriddedDensity, w0: Option<f64>) -> Result<Vec<f64>> {
    if let Some(w) = w0 {
        check_w0_alignment(w, f.x_max(), f.cells())?;
        for (i, &v) in f.values().iter().enumerate() {
            if f.cell_center(i) > w && v != 0.0 {
                return Err(Error::Domain(format!(
                    "density has mass at {} beyond w0 = {w}",
                    f.cell_center(i)
                )));
            }
        }
    }
    Ok(qbar_raw(f.values(), f.x_max(), w0))
}

/// Non-validating operator core used by the time stepper; accepts signed
/// intermediate stage values.
fn qbar_raw(values: &[f64], x_max: f64, w0: Option<f64>) -> Vec<f64> {
    let m = values.len();
    let dx = x_max / m as f64;
    let conv = convolve_raw(values, dx);
    // Integrand samples of the gain: (f*f)(t_k) / t_k on conv cell
    // [t_k - dx/2, t_k + dx/2).
    let weights: Vec<f64> = conv
        .iter()
        .enumerate()
        .map(|(k, &c)| c / ((k as f64 + 1.0) * dx))
        .collect();
    // Suffix sums of whole conv cells.
    let mut suffix = vec![0.0; weights.len() + 1];
    for k in (0..weights.len()).rev() {
        suffix[k] = suffix[k + 1] + weights[k] * dx;
    }
    let hi = w0.unwrap_or(f64::INFINITY).min(2.0 * x_max);
    // Portion of the conv cells beyond the cap; constant across x.
    let mut beyond = 0.0;
    if hi < 2.0 * x_max {
        for (k, &w) in weights.iter().enumerate() {
            let left = (k as f64 + 0.5) * dx;
            let right = left + dx;
            if right > hi {
                beyond += w * (right - left.max(hi)).min(dx);
            }
        }
    }
    // Prefix sums of f for the loss integral.
    let mut prefix = vec![0.0; m + 1];
    for (i, &v) in values.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v * dx;
    }
    let integral_to = |b: f64| -> f64 {
        if b <= 0.0 {
            return 0.0;
        }
        let b = b.min(x_max);
        let full = ((b / dx).floor() as usize).min(m);
        prefix[full]
            + if full < m {
                values[full] * (b - full as f64 * dx)
            } else {
                0.0
            }
    };
    (0..m)
        .map(|i| {
            let x = (i as f64 + 0.5) * dx;
            let gain = if x >= hi { 0.0 } else { 2.0 * (suffix[i] - beyond) };
            let loss = match w0 {
                None => 2.0 * values[i],
                Some(w) => 2.0 * values[i] * integral_to(w - x),
            };
            gain - loss
        })
        .collect()
}

/// Independent oracle for [`qbar_apply`]: the literal split-variable form
/// `2 int_{x/w0}^1 int_0^x f(y/r) f((x-y)/r) dy dr / r^2 - loss`,
/// evaluated after the substitution `v = x/r` (which tames the `1/r^2`
/// endpoint) by composite Simpson over `v`, with the inner convolution
/// integral computed exactly from the piecewise-constant cells.
///
/// Coarse grids only.
pub fn qbar_apply_direct(f: &GriddedDensity, w0: Option<f64>) -> Result<Vec<f64>> {
    const DIRECT_CELL_CAP: usize = 400;
    if f.cells() > DIRECT_CELL_CAP {
        return Err(Error::Resource(format!(
            "direct operator is for coarse grids (<= {DIRECT_CELL_CAP} cells), got {}",
            f.cells()
        )));
    }
    if let Some(w) = w0 {
        check_w0_alignment(w, f.x_max(), f.cells())?;
    }
    let m = f.cells();
    let dx = f.dx();
    let x_max = f.x_max();
    let hi = w0.unwrap_or(f64::INFINITY).min(2.0 * x_max);
    let mut out = vec![0.0; m];
    for (i, o) in out.iter_mut().enumerate() {
        let x = f.cell_center(i);
        let gain = if x >= hi {
            0.0
        } else {
            2.0 * simpson(x, hi, ((hi - x) / (dx / 2.0)).ceil() as usize, |v| {
                exact_autoconv(f, v) / v
            })
        };
        let loss = match w0 {
            None => 2.0 * f.values()[i],
            Some(w) => 2.0 * f.values()[i] * f.integral_to(w - x),
        };
        *o = gain - loss;
    }
    Ok(out)
}

/// Exact `int f(u) f(v-u) du` for piecewise-constant `f`: walk the merged
/// breakpoints of both staircases.
fn exact_autoconv(f: &GriddedDensity, v: f64) -> f64 {
    let dx = f.dx();
    let x_max = f.x_max();
    let lo = (v - x_max).max(0.0);
    let hi = v.min(x_max);
    if hi <= lo {
        return 0.0;
    }
    let mut breaks: Vec<f64> = Vec::new();
    let mut u = (lo / dx).ceil() * dx;
    while u < hi {
        if u > lo {
            breaks.push(u);
        }
        u += dx;
    }
    let mut u = v - (((v - lo) / dx).floor()) * dx;
    while u < hi {
        if u > lo {
            breaks.push(u);
        }
        u += dx;
    }
    breaks.push(lo);
    breaks.push(hi);
    breaks.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let value_at = |x: f64| -> f64 {
        if x < 0.0 || x >= x_max {
            0.0
        } else {
            f.values()[((x / dx) as usize).min(f.cells() - 1)]
        }
    };
    let mut total = 0.0;
    for pair in breaks.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b > a {
            let mid = 0.5 * (a + b);
            total += value_at(mid) * value_at(v - mid) * (b - a);
        }
    }
    total
}

fn simpson<F: Fn(f64) -> f64>(a: f64, b: f64, min_intervals: usize, f: F) -> f64 {
    let n = min_intervals.max(2).next_multiple_of(2);
    let h = (b - a) / n as f64;
    let mut total = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        total += w * f(a + k as f64 * h);
    }
    total * h / 3.0
}

/// Measure argument for the limit collision bracket.
pub enum QMeasure<'a> {
    /// Full product of the atomic measure with itself (diagonal included;
    /// this is the limit operator, not the pair measure).
    Atoms(&'a EmpiricalMeasure),
    Density(&'a GriddedDensity),
}

/// Weak form of the limit operator:
/// `<g, Q(mu)> = int int 1{x+y<=w0} (2G(s)/s - g(x) - g(y)) dmu dmu`.
pub fn q_bracket(g: &TestFunction, mu: QMeasure<'_>, w0: Option<f64>) -> f64 {
    let cap = w0.unwrap_or(f64::INFINITY);
    match mu {
        QMeasure::Atoms(mu) => {
            let n = mu.num_atoms() as f64;
            let gx: Vec<f64> = mu.atoms().iter().map(|&x| g.eval(x)).collect();
            let mut total = 0.0;
            for (i, &x) in mu.atoms().iter().enumerate() {
                for (j, &y) in mu.atoms().iter().enumerate() {
                    let s = x + y;
                    if s <= cap {
                        total += g.pair_kernel(s) - gx[i] - gx[j];
                    }
                }
            }
            total / (n * n)
        }
        QMeasure::Density(f) => {
            let m = f.cells();
            let dx = f.dx();
            let gx: Vec<f64> = (0..m).map(|i| g.eval(f.cell_center(i))).collect();
            // Kernel and cap fraction depend on i + j only.
            let psi: Vec<f64> = (0..2 * m - 1)
                .map(|k| g.pair_kernel((k as f64 + 1.0) * dx))
                .collect();
            let frac: Vec<f64> = (0..2 * m - 1)
                .map(|k| {
                    if cap.is_infinite() {
                        1.0
                    } else {
                        // Fraction of the cell square with x + y <= cap; the
                        // square spans sums (k dx, (k+2) dx).
                        let u = (cap - k as f64 * dx) / dx;
                        if u <= 0.0 {
                            0.0
                        } else if u <= 1.0 {
                            u * u / 2.0
                        } else if u <= 2.0 {
                            1.0 - (2.0 - u) * (2.0 - u) / 2.0
                        } else {
                            1.0
                        }
                    }
                })
                .collect();
            let fv = f.values();
            let mut total = 0.0;
            for i in 0..m {
                if fv[i] == 0.0 {
                    continue;
                }
                for j in 0..m {
                    let k = i + j;
                    if frac[k] == 0.0 {
                        continue;
                    }
                    total += fv[i] * fv[j] * frac[k] * (psi[k] - gx[i] - gx[j]);
                }
            }
            total * dx * dx
        }
    }
}

/// Residual of the equilibrium family under the density operator:
/// `sup |qbar(f~)|`. For infinite `w0` the sup runs over `[0, 0.8 x_max]`
/// (the far tail is dominated by deliberate truncation); for finite `w0`
/// over the whole grid.
pub fn equilibrium_residual(m: f64, w0: Option<f64>, x_max: f64, cells: usize) -> Result<f64> {
    let f = equilibrium_density(m, w0, x_max, cells)?;
    let q = qbar_apply(&f, w0)?;
    let cutoff = match w0 {
        None => 0.8 * x_max,
        Some(_) => x_max,
    };
    Ok(q
        .iter()
        .enumerate()
        .filter(|(i, _)| f.cell_center(*i) <= cutoff)
        .map(|(_, v)| v.abs())
        .fold(0.0, f64::max))
}

/// Time integrator for [`kinetic_solve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrator {
    Rk4,
    Euler,
}

/// Named initial densities for solver runs.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialDensity {
    Exponential { mean: f64 },
    /// Truncated exponential on `[0, w0]`; needs a finite `w0`.
    TruncatedExponential { mean: f64 },
    Uniform { upper: f64 },
    /// Staircase with the mass function of a geometric on unit cells.
    GeometricSteps { p: f64 },
}

impl InitialDensity {
    pub fn build(&self, w0: Option<f64>, x_max: f64, cells: usize) -> Result<GriddedDensity> {
        match *self {
            InitialDensity::Exponential { mean } => equilibrium_density(mean, None, x_max, cells),
            InitialDensity::TruncatedExponential { mean } => {
                let w = w0.ok_or_else(|| {
                    Error::Config("truncated exponential initial data needs finite w0".into())
                })?;
                equilibrium_density(mean, Some(w), x_max, cells)
            }
            InitialDensity::Uniform { upper } => {
                if !upper.is_finite() || upper <= 0.0 || upper > x_max {
                    return Err(Error::Config(format!(
                        "uniform upper bound {upper} outside (0, x_max]"
                    )));
                }
                let (f, _) =
                    GriddedDensity::from_fn(
                        x_max,
                        cells,
                        |x| if x < upper { 1.0 / upper } else { 0.0 },
                    )?;
                Ok(f)
            }
            InitialDensity::GeometricSteps { p } => {
                if !p.is_finite() || p <= 0.0 || p >= 1.0 {
                    return Err(Error::Config(format!("need 0 < p < 1, got {p}")));
                }
                let (f, _) = GriddedDensity::from_fn(x_max, cells, |x| {
                    p * (1.0 - p).powi(x.floor() as i32)
                })?;
                Ok(f)
            }
        }
    }

    pub fn name(&self) -> String {
        match *self {
            InitialDensity::Exponential { mean } => format!("exp(mean={mean})"),
            InitialDensity::TruncatedExponential { mean } => format!("truncexp(mean={mean})"),
            InitialDensity::Uniform { upper } => format!("uniform(0,{upper})"),
            InitialDensity::GeometricSteps { p } => format!("geom(p={p})"),
        }
    }

    /// Parse the density spec used by run configs and bindings:
    /// `exp:M | truncexp:M | uniform:B | geom:P`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (kind, rest) = spec
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("init `{spec}`: expected kind:param")))?;
        let value = rest
            .parse::<f64>()
            .map_err(|_| Error::Config(format!("init `{spec}`: bad parameter")))?;
        match kind {
            "exp" => Ok(InitialDensity::Exponential { mean: value }),
            "truncexp" => Ok(InitialDensity::TruncatedExponential { mean: value }),
            "uniform" => Ok(InitialDensity::Uniform { upper: value }),
            "geom" => Ok(InitialDensity::GeometricSteps { p: value }),
            _ => Err(Error::Config(format!(
                "init `{spec}`: expected exp:M | truncexp:M | uniform:B | geom:P"
            ))),
        }
    }
}

/// Configuration of one kinetic-equation run.
#[derive(Debug, Clone)]
pub struct KineticRunConfig {
    /// `None` means unbounded total wealth.
    pub w0: Option<f64>,
    pub horizon: f64,
    pub dt: f64,
    pub x_max: f64,
    pub cells: usize,
    pub initial: InitialDensity,
    pub integrator: Integrator,
    /// Snapshot cadence; snapshots land on the nearest step boundary.
    pub snapshot_every: Option<f64>,
}

impl KineticRunConfig {
    pub fn validate(&self) -> Result<()> {
        check_grid(self.x_max, self.cells)?;
        if !self.horizon.is_finite() || self.horizon < 0.0 {
            return Err(Error::Config(format!("horizon must be >= 0, got {}", self.horizon)));
        }
        if !self.dt.is_finite() || self.dt <= 0.0 || self.dt > 0.25 {
            return Err(Error::Config(format!(
                "dt must be in (0, 0.25] for the loss rate 2, got {}",
                self.dt
            )));
        }
        if let Some(w) = self.w0 {
            check_w0_alignment(w, self.x_max, self.cells)?;
        }
        if let Some(c) = self.snapshot_every {
            if !c.is_finite() || c <= 0.0 {
                return Err(Error::Config(format!("snapshot cadence must be > 0, got {c}")));
            }
        }
        Ok(())
    }
}

/// Snapshots and clipping diagnostics of a kinetic run.
#[derive(Debug, Clone)]
pub struct KineticRun {
    pub times: Vec<f64>,
    pub snapshots: Vec<GriddedDensity>,
    /// Mass removed by negativity clipping, accumulated over all steps.
    pub clipped_mass_total: f64,
    pub max_step_clip: f64,
}

impl KineticRun {
    pub fn final_density(&self) -> &GriddedDensity {
        self.snapshots.last().expect("run has snapshots")
    }
}

/// March `f' = qbar_{w0}(f)` from the configured initial density.
/// Negative values are clipped to zero and the mass renormalized each
/// step; a step clipping more than [`MAX_CLIP_PER_STEP`] aborts with an
/// instability error suggesting a smaller `dt` or finer grid.
pub fn kinetic_solve(config: &KineticRunConfig) -> Result<KineticRun> {
    config.validate()?;
    let f0 = config.initial.build(config.w0, config.x_max, config.cells)?;
    kinetic_solve_from(f0, config)
}

/// Same as [`kinetic_solve`] but starting from an explicit density on the
/// configured grid.
pub fn kinetic_solve_from(f0: GriddedDensity, config: &KineticRunConfig) -> Result<KineticRun> {
    config.validate()?;
    if f0.cells() != config.cells || (f0.x_max() - config.x_max).abs() > 1e-12 {
        return Err(Error::Config("initial density grid differs from config".into()));
    }
    let x_max = config.x_max;
    let dx = f0.dx();
    let mut values = f0.values().to_vec();
    let mut time = 0.0;
    let mut times = vec![0.0];
    let mut snapshots = vec![f0];
    let mut next_snap = config.snapshot_every.map(|c| c.min(config.horizon));
    let mut clipped_total = 0.0;
    let mut max_clip = 0.0f64;

    while time < config.horizon - 1e-12 {
        let dt = config.dt.min(config.horizon - time);
        let derivative = |v: &[f64]| qbar_raw(v, x_max, config.w0);
        let stepped = match config.integrator {
            Integrator::Euler => {
                let k1 = derivative(&values);
                add_scaled(&values, &[(&k1, dt)])
            }
            Integrator::Rk4 => {
                let k1 = derivative(&values);
                let y2 = add_scaled(&values, &[(&k1, dt / 2.0)]);
                let k2 = derivative(&y2);
                let y3 = add_scaled(&values, &[(&k2, dt / 2.0)]);
                let k3 = derivative(&y3);
                let y4 = add_scaled(&values, &[(&k3, dt)]);
                let k4 = derivative(&y4);
                add_scaled(
                    &values,
                    &[
                        (&k1, dt / 6.0),
                        (&k2, dt / 3.0),
                        (&k3, dt / 3.0),
                        (&k4, dt / 6.0),
                    ],
                )
            }
        };
        let mut clipped = 0.0;
        let mut next: Vec<f64> = stepped
            .into_iter()
            .map(|v| {
                if v < 0.0 {
                    clipped -= v * dx;
                    0.0
                } else {
                    v
                }
            })
            .collect();
        if clipped > MAX_CLIP_PER_STEP {
            return Err(Error::Instability(format!(
                "step at t = {time} clipped mass {clipped} > {MAX_CLIP_PER_STEP}; \
                 reduce dt or refine the grid"
            )));
        }
        clipped_total += clipped;
        max_clip = max_clip.max(clipped);
        let mass: f64 = next.iter().sum::<f64>() * dx;
        next.iter_mut().for_each(|v| *v /= mass);
        values = next;
        time += dt;

        let due = match next_snap {
            Some(s) => time >= s - 1e-9 && time < config.horizon - 1e-12,
            None => false,
        };
        if due {
            times.push(time);
            snapshots.push(GriddedDensity {
                x_max,
                values: values.clone(),
            });
            next_snap = Some(next_snap.unwrap() + config.snapshot_every.unwrap());
        }
    }
    if config.horizon > 0.0 {
        times.push(config.horizon);
        snapshots.push(GriddedDensity { x_max, values });
    }
    Ok(KineticRun {
        times,
        snapshots,
        clipped_mass_total: clipped_total,
        max_step_clip: max_clip,
    })
}

fn add_scaled(base: &[f64], terms: &[(&Vec<f64>, f64)]) -> Vec<f64> {
    let mut out = base.to_vec();
    for &(term, scale) in terms {
        for (o, &t) in out.iter_mut().zip(term.iter()) {
            *o += scale * t;
        }
    }
    out
}

/// Laplace transform of a gridded density on `t_grid`, with a one-point
/// exponential-family fit and the sup deviation from the fit.
#[derive(Debug, Clone, serde::Serialize)]
pub struct LaplaceReport {
    pub transform: Vec<(f64, f64)>,
    pub fitted_mean: f64,
    pub max_deviation: f64,
}

/// Compute `fbar(t) = int e^{-tx} f(x) dx`, fit the exponential-family
/// transform `m^{-1} / (m^{-1} + t)` through the value at `t = 1`, and
/// report the sup deviation over the grid. Exponential densities fit to
/// discretization accuracy; anything else deviates visibly.
pub fn laplace_check(f: &GriddedDensity, t_grid: &[f64]) -> LaplaceReport {
    let transform_at = |t: f64| -> f64 {
        let dx = f.dx();
        f.values()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * (-t * (i as f64 + 0.5) * dx).exp())
            .sum::<f64>()
            * dx
    };
    let at_one = transform_at(1.0);
    let fitted_mean = 1.0 / at_one - 1.0;
    let inv_m = 1.0 / fitted_mean;
    let mut transform = Vec::with_capacity(t_grid.len());
    let mut max_dev = 0.0f64;
    for &t in t_grid {
        let v = transform_at(t);
        transform.push((t, v));
        max_dev = max_dev.max((v - inv_m / (inv_m + t)).abs());
    }
    LaplaceReport {
        transform,
        fitted_mean,
        max_deviation: max_dev,
    }
}

pub fn default_laplace_grid() -> Vec<f64> {
    (1..=50).map(|k| k as f64 * 0.1).collect()
}

/// `int_a^b |l(x)| dx` for the linear interpolant through
/// `(a, ya), (b, yb)`.
fn integrate_abs_linear(a: f64, b: f64, ya: f64, yb: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    if ya * yb >= 0.0 {
        return 0.5 * (ya.abs() + yb.abs()) * (b - a);
    }
    let root = a + (b - a) * ya / (ya - yb);
    0.5 * (ya.abs() * (root - a) + yb.abs() * (b - root))
}

/// Wasserstein-1 distance between a gridded density and an analytic
/// target: the CDF difference is integrated on a subdivided grid (the
/// density CDF is exactly piecewise linear) plus the analytic tail.
pub fn w1_density_vs_target(f: &GriddedDensity, target: &dyn TargetDist) -> f64 {
    let subdivisions = 8;
    let dx = f.dx();
    let h = dx / subdivisions as f64;
    let n = f.cells() * subdivisions;
    let mut total = 0.0;
    let mut prev_x = 0.0;
    let mut prev_d = -target.cdf(0.0);
    for k in 1..=n {
        let x = k as f64 * h;
        let d = f.cdf(x) - target.cdf(x);
        total += integrate_abs_linear(prev_x, x, prev_d, d);
        prev_x = x;
        prev_d = d;
    }
    // Tail: F_f = 1 beyond the grid.
    total + target.mean() - f.x_max() + target.cdf_antideriv(f.x_max())
}

/// Wasserstein-1 distance between two gridded densities (grids may
/// differ); exact piecewise-linear integration over merged cell edges.
pub fn w1_density_vs_density(f: &GriddedDensity, g: &GriddedDensity) -> f64 {
    let mut edges: Vec<f64> = (0..=f.cells()).map(|i| i as f64 * f.dx()).collect();
    edges.extend((0..=g.cells()).map(|i| i as f64 * g.dx()));
    edges.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    edges.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    let mut total = 0.0;
    let mut prev_x = 0.0;
    let mut prev_d = 0.0;
    for &x in edges.iter().skip_while(|&&x| x <= 0.0) {
        let d = f.cdf(x) - g.cdf(x);
        total += integrate_abs_linear(prev_x, x, prev_d, d);
        prev_x = x;
        prev_d = d;
    }
    total
}

/// Wasserstein-1 distance between an empirical sample and a gridded
/// density; exact (the empirical CDF is constant between merged
/// breakpoints, the density CDF linear).
pub fn w1_samples_vs_density(samples: &[f64], f: &GriddedDensity) -> f64 {
    assert!(!samples.is_empty(), "w1 needs samples");
    let mut xs = samples.to_vec();
    xs.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    assert!(xs[0] >= 0.0, "w1 needs nonnegative samples");
    let n = xs.len() as f64;
    let mut breaks: Vec<f64> = (0..=f.cells()).map(|i| i as f64 * f.dx()).collect();
    breaks.extend_from_slice(&xs);
    breaks.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    breaks.dedup();
    let mut total = 0.0;
    let mut prev = 0.0;
    let mut below = xs.partition_point(|&x| x <= 0.0);
    for &x in breaks.iter().skip_while(|&&x| x <= 0.0) {
        // Empirical CDF is constant on (prev, x).
        let emp = below as f64 / n;
        total += integrate_abs_linear(prev, x, f.cdf(prev) - emp, f.cdf(x) - emp);
        below = xs.partition_point(|&v| v <= x);
        prev = x;
    }
    total
}
