//! Python bindings: the main state types, simulators, kinetic solver and
//! statistical oracles, exposed as plain functions plus a `TestFunction`
//! class.
//!
//! All randomized functions take `(seed, stream)` and reproduce draws
//! bit-for-bit; distinct streams off one seed are independent.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use exkin_core::chains;
use exkin_core::chains::RngStream;
use exkin_core::kinetic;
use exkin_core::kinetic::{InitialDensity, Integrator, KineticRunConfig};
use exkin_core::measures;
use exkin_core::oracle;
use exkin_core::oracle::TargetDist;
use exkin_core::partitions;
use exkin_core::state::{self, ContinuousWealthState, DiscreteWealthState, MeshSpec};
use exkin_core::Error;

/// `(time, first_agent, second_agent, fraction)` rows of the event log.
type EventRows = Vec<(f64, usize, usize, f64)>;
/// `(probabilities, states)` of the dense transition matrix.
type MatrixRows = (Vec<Vec<f64>>, Vec<Vec<u64>>);
/// `(times, cell_centers, snapshots, clipped_mass_total)`.
type SolveRows = (Vec<f64>, Vec<f64>, Vec<Vec<f64>>, f64);

fn err(e: Error) -> PyErr {
    match e {
        Error::Domain(_) | Error::Config(_) | Error::Parse(_) | Error::Overflow(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn parse_target(spec: &str) -> PyResult<Box<dyn TargetDist>> {
    let (kind, rest) = spec
        .split_once(':')
        .ok_or_else(|| PyValueError::new_err(format!("target `{spec}`: expected kind:param")))?;
    let value: f64 = rest
        .parse()
        .map_err(|_| PyValueError::new_err(format!("target `{spec}`: bad parameter")))?;
    Ok(match kind {
        "exp" => Box::new(oracle::ExponentialTarget { mean: value }),
        "uniform" => Box::new(oracle::UniformTarget { upper: value }),
        "dirac" => Box::new(oracle::DiracTarget { at: value }),
        "geom" => Box::new(oracle::GeometricTarget { p: value }),
        _ => {
            return Err(PyValueError::new_err(format!(
                "target `{spec}`: expected exp:M | uniform:B | dirac:AT | geom:P"
            )))
        }
    })
}

/// Bounded observable with exact antiderivative; build from a spec string
/// like "exp:1", "one", "capped:2,1" or "indicator:0.5,1.5".
#[pyclass(name = "TestFunction", from_py_object)]
#[derive(Clone)]
struct PyTestFunction {
    inner: measures::TestFunction,
}

#[pymethods]
impl PyTestFunction {
    #[new]
    fn new(spec: &str) -> PyResult<Self> {
        Ok(Self {
            inner: measures::TestFunction::parse(spec).map_err(err)?,
        })
    }

    fn eval(&self, x: f64) -> f64 {
        self.inner.eval(x)
    }

    fn antideriv(&self, s: f64) -> f64 {
        self.inner.antideriv(s)
    }

    fn sup_bound(&self) -> f64 {
        self.inner.sup_bound()
    }

    fn name(&self) -> String {
        self.inner.name()
    }

    fn __repr__(&self) -> String {
        format!("TestFunction({})", self.inner.name())
    }
}

#[pyfunction]
fn mesh_floor(x: f64, denominator: u64) -> PyResult<f64> {
    let mesh = MeshSpec::new(denominator).map_err(err)?;
    state::mesh_floor(x, mesh).map_err(err)
}

#[pyfunction]
fn composition_count(n: u64, num_agents: u64) -> PyResult<u64> {
    state::composition_count(n, num_agents).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (n, num_agents, cap=None))]
fn enumerate_states(n: u64, num_agents: u64, cap: Option<u64>) -> PyResult<Vec<Vec<u64>>> {
    Ok(state::enumerate_states(n, num_agents, cap)
        .map_err(err)?
        .into_iter()
        .map(|s| s.counts().to_vec())
        .collect())
}

#[pyfunction]
#[pyo3(signature = (counts, steps, seed, stream=0))]
fn simulate_dsdt(counts: Vec<u64>, steps: u64, seed: u64, stream: u64) -> PyResult<Vec<u64>> {
    let mut state = DiscreteWealthState::new(counts).map_err(err)?;
    let mut rng = RngStream::new(seed, stream);
    for _ in 0..steps {
        chains::dsdt_step_in_place(&mut state, &mut rng);
    }
    Ok(state.counts().to_vec())
}

#[pyfunction]
#[pyo3(signature = (wealth, steps, seed, stream=0))]
fn simulate_csdt(wealth: Vec<f64>, steps: u64, seed: u64, stream: u64) -> PyResult<Vec<f64>> {
    let mut state = ContinuousWealthState::new(wealth).map_err(err)?;
    let mut rng = RngStream::new(seed, stream);
    for _ in 0..steps {
        chains::csdt_step_in_place(&mut state, &mut rng);
    }
    Ok(state.wealth().to_vec())
}

/// Returns `(events, final_wealth)` with events as `(time, i, j, r)`.
#[pyfunction]
#[pyo3(signature = (wealth, horizon, seed, stream=0))]
fn simulate_poisson(
    wealth: Vec<f64>,
    horizon: f64,
    seed: u64,
    stream: u64,
) -> PyResult<(EventRows, Vec<f64>)> {
    let initial = ContinuousWealthState::new(wealth).map_err(err)?;
    let mut rng = RngStream::new(seed, stream);
    let traj = chains::poisson_simulate(&initial, horizon, None, &mut rng).map_err(err)?;
    let events = traj
        .events()
        .iter()
        .map(|e| (e.time, e.first_agent, e.second_agent, e.fraction))
        .collect();
    Ok((events, traj.final_state().wealth().to_vec()))
}

/// Returns `(sup_distance, bound)` of the coupled mesh/continuous run.
#[pyfunction]
#[pyo3(signature = (wealth, mesh_denominator, steps, seed, stream=0))]
fn coupled_paths(
    wealth: Vec<f64>,
    mesh_denominator: u64,
    steps: usize,
    seed: u64,
    stream: u64,
) -> PyResult<(f64, f64)> {
    let initial = ContinuousWealthState::new(wealth).map_err(err)?;
    let mesh = MeshSpec::new(mesh_denominator).map_err(err)?;
    let mut rng = RngStream::new(seed, stream);
    let run = chains::coupled_paths(&initial, mesh, steps, &mut rng).map_err(err)?;
    Ok((run.sup_distance, run.bound))
}

/// Dense transition matrix and its lexicographic state list.
#[pyfunction]
fn transition_matrix(n: u64, num_agents: u64) -> PyResult<MatrixRows> {
    let m = oracle::build_transition_matrix(n, num_agents).map_err(err)?;
    let probs = (0..m.size()).map(|i| m.row(i).to_vec()).collect();
    let states = m.states().iter().map(|s| s.counts().to_vec()).collect();
    Ok((probs, states))
}

#[pyfunction]
fn stationary_distribution(n: u64, num_agents: u64) -> PyResult<Vec<f64>> {
    let m = oracle::build_transition_matrix(n, num_agents).map_err(err)?;
    oracle::stationary_distribution(&m, oracle::STATIONARY_TOL).map_err(err)
}

#[pyfunction]
fn ks_statistic(samples: Vec<f64>, target: &str) -> PyResult<f64> {
    let t = parse_target(target)?;
    Ok(oracle::ks_statistic(&samples, |x| t.cdf(x)))
}

#[pyfunction]
fn wasserstein1(samples: Vec<f64>, target: &str) -> PyResult<f64> {
    let t = parse_target(target)?;
    Ok(oracle::wasserstein1(&samples, t.as_ref()))
}

#[pyfunction]
#[pyo3(signature = (n, alpha=0.01))]
fn dkw_bound(n: usize, alpha: f64) -> f64 {
    oracle::dkw_bound(n, alpha)
}

/// Returns `(statistic, dof, threshold, pass)` at significance p > 0.001.
#[pyfunction]
fn chi_square_validate(
    observed: Vec<u64>,
    expected_probs: Vec<f64>,
) -> PyResult<(f64, usize, f64, bool)> {
    let r = oracle::chi_square_validate(&observed, &expected_probs).map_err(err)?;
    Ok((r.statistic, r.dof, r.threshold, r.pass))
}

#[pyfunction]
fn bracket(atoms: Vec<f64>, g: &PyTestFunction) -> PyResult<f64> {
    let mu = measures::EmpiricalMeasure::new(atoms).map_err(err)?;
    Ok(measures::bracket(&g.inner, &mu))
}

#[pyfunction]
fn qn_bracket(atoms: Vec<f64>, g: &PyTestFunction, total_wealth: f64) -> PyResult<f64> {
    let mu = measures::EmpiricalMeasure::new(atoms).map_err(err)?;
    Ok(measures::qn_bracket(&g.inner, &mu, total_wealth))
}

#[pyfunction]
#[pyo3(signature = (atoms, g, w0=None))]
fn q_bracket(atoms: Vec<f64>, g: &PyTestFunction, w0: Option<f64>) -> PyResult<f64> {
    let mu = measures::EmpiricalMeasure::new(atoms).map_err(err)?;
    Ok(kinetic::q_bracket(&g.inner, kinetic::QMeasure::Atoms(&mu), w0))
}

/// Ensemble check of `E[sup M^2] <= 64 |g|^2 T / N`; returns a dict with
/// the report fields.
#[pyfunction]
fn martingale_bound_check<'py>(
    py: Python<'py>,
    wealth: Vec<f64>,
    g: &PyTestFunction,
    horizon: f64,
    replicas: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let initial = ContinuousWealthState::new(wealth).map_err(err)?;
    let rep = measures::martingale_bound_check(&initial, &g.inner, horizon, replicas, seed)
        .map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("g", rep.g)?;
    out.set_item("N", rep.num_agents)?;
    out.set_item("T", rep.horizon)?;
    out.set_item("replicas", rep.replicas)?;
    out.set_item("empirical", rep.empirical)?;
    out.set_item("bound", rep.bound)?;
    out.set_item("pass", rep.pass)?;
    Ok(out)
}

/// March the kinetic equation; returns
/// `(times, cell_centers, snapshots, clipped_mass_total)`.
#[pyfunction]
#[pyo3(signature = (init, horizon, dt=0.05, x_max=30.0, cells=3000, w0=None, snapshot_every=None))]
#[allow(clippy::too_many_arguments)]
fn kinetic_solve(
    init: &str,
    horizon: f64,
    dt: f64,
    x_max: f64,
    cells: usize,
    w0: Option<f64>,
    snapshot_every: Option<f64>,
) -> PyResult<SolveRows> {
    let config = KineticRunConfig {
        w0,
        horizon,
        dt,
        x_max,
        cells,
        initial: InitialDensity::parse(init).map_err(err)?,
        integrator: Integrator::Rk4,
        snapshot_every,
    };
    let run = kinetic::kinetic_solve(&config).map_err(err)?;
    let centers: Vec<f64> = (0..cells)
        .map(|i| (i as f64 + 0.5) * x_max / cells as f64)
        .collect();
    let snaps = run.snapshots.iter().map(|f| f.values().to_vec()).collect();
    Ok((run.times, centers, snaps, run.clipped_mass_total))
}

/// `sup |qbar(exp-family(m))|` on the grid (w0 = None means unbounded).
#[pyfunction]
#[pyo3(signature = (m, x_max=30.0, cells=3000, w0=None))]
fn equilibrium_residual(m: f64, x_max: f64, cells: usize, w0: Option<f64>) -> PyResult<f64> {
    kinetic::equilibrium_residual(m, w0, x_max, cells).map_err(err)
}

/// Returns `(fitted_mean, max_deviation)` of the exponential-family
/// Laplace fit.
#[pyfunction]
#[pyo3(signature = (init, x_max=30.0, cells=3000))]
fn laplace_check(init: &str, x_max: f64, cells: usize) -> PyResult<(f64, f64)> {
    let f = InitialDensity::parse(init)
        .map_err(err)?
        .build(None, x_max, cells)
        .map_err(err)?;
    let rep = kinetic::laplace_check(&f, &kinetic::default_laplace_grid());
    Ok((rep.fitted_mean, rep.max_deviation))
}

#[pyfunction]
#[pyo3(signature = (n, num_agents, seed, stream=0))]
fn sample_uniform_composition(
    n: u64,
    num_agents: u64,
    seed: u64,
    stream: u64,
) -> PyResult<Vec<u64>> {
    let mut rng = RngStream::new(seed, stream);
    Ok(partitions::sample_uniform_composition(n, num_agents, &mut rng)
        .map_err(err)?
        .counts()
        .to_vec())
}

#[pyfunction]
#[pyo3(signature = (num_agents, seed, stream=0))]
fn sample_uniform_simplex(num_agents: u64, seed: u64, stream: u64) -> PyResult<Vec<f64>> {
    let mut rng = RngStream::new(seed, stream);
    Ok(partitions::sample_uniform_simplex(num_agents, &mut rng)
        .map_err(err)?
        .wealth()
        .to_vec())
}

#[pyfunction]
#[pyo3(signature = (num_agents, total, seed, stream=0))]
fn sample_scaled_geometric(
    num_agents: u64,
    total: f64,
    seed: u64,
    stream: u64,
) -> PyResult<Vec<f64>> {
    let mut rng = RngStream::new(seed, stream);
    Ok(partitions::sample_scaled_geometric(num_agents, total, &mut rng)
        .map_err(err)?
        .wealth()
        .to_vec())
}

#[pyfunction]
#[pyo3(signature = (num_agents, p, seed, stream=0))]
fn sample_fixed_p_geometric(
    num_agents: u64,
    p: f64,
    seed: u64,
    stream: u64,
) -> PyResult<Vec<f64>> {
    let mut rng = RngStream::new(seed, stream);
    Ok(partitions::sample_fixed_p_geometric(num_agents, p, &mut rng)
        .map_err(err)?
        .wealth()
        .to_vec())
}

#[pymodule]
fn exkin_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTestFunction>()?;
    m.add_function(wrap_pyfunction!(mesh_floor, m)?)?;
    m.add_function(wrap_pyfunction!(composition_count, m)?)?;
    m.add_function(wrap_pyfunction!(enumerate_states, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_dsdt, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_csdt, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_poisson, m)?)?;
    m.add_function(wrap_pyfunction!(coupled_paths, m)?)?;
    m.add_function(wrap_pyfunction!(transition_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(stationary_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(ks_statistic, m)?)?;
    m.add_function(wrap_pyfunction!(wasserstein1, m)?)?;
    m.add_function(wrap_pyfunction!(dkw_bound, m)?)?;
    m.add_function(wrap_pyfunction!(chi_square_validate, m)?)?;
    m.add_function(wrap_pyfunction!(bracket, m)?)?;
    m.add_function(wrap_pyfunction!(qn_bracket, m)?)?;
    m.add_function(wrap_pyfunction!(q_bracket, m)?)?;
    m.add_function(wrap_pyfunction!(martingale_bound_check, m)?)?;
    m.add_function(wrap_pyfunction!(kinetic_solve, m)?)?;
    m.add_function(wrap_pyfunction!(equilibrium_residual, m)?)?;
    m.add_function(wrap_pyfunction!(laplace_check, m)?)?;
    m.add_function(wrap_pyfunction!(sample_uniform_composition, m)?)?;
    m.add_function(wrap_pyfunction!(sample_uniform_simplex, m)?)?;
    m.add_function(wrap_pyfunction!(sample_scaled_geometric, m)?)?;
    m.add_function(wrap_pyfunction!(sample_fixed_p_geometric, m)?)?;
    Ok(())
}
