//! Simulators for the exchange dynamics: the integer chain, its
//! continuous-state analogue, the Poissonized continuous-time chain, and
//! the coupled discrete/continuous run behind the deterministic `2k/n`
//! error bound.
//!
//! Every step consumes randomness through [`RngStream`], and the
//! `*_apply` functions take the drawn pair and uniform explicitly so that
//! coupled runs, exchangeability checks and hand-driven tests can feed the
//! same draws into different chains.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::state::{mesh_floor, ContinuousWealthState, DiscreteWealthState, MeshSpec};
use crate::{Error, Result};

/// Reproducible random stream keyed by `(seed, stream_id)`.
///
/// Identical keys reproduce identical draws bit-for-bit; distinct stream
/// ids give statistically independent streams off the same seed, so
/// ensemble replicas can be generated in parallel without draw-order
/// coupling.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha12Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha12Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn rng(&mut self) -> &mut ChaCha12Rng {
        &mut self.inner
    }

    /// Uniform draw on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random()
    }

    /// Strictly positive exponential waiting time with the given rate.
    pub fn waiting_time(&mut self, rate: f64) -> f64 {
        loop {
            let u: f64 = self.inner.random();
            let dt = -(-u).ln_1p() / rate; // -ln(1 - u) / rate
            if dt > 0.0 {
                return dt;
            }
        }
    }

    /// Ordered pair of distinct agent indices, uniform over the
    /// `N(N-1)` possibilities, via index arithmetic on a single draw.
    pub fn ordered_pair(&mut self, num_agents: usize) -> (usize, usize) {
        debug_assert!(num_agents >= 2);
        let n = num_agents as u64;
        let k = self.inner.random_range(0..n * (n - 1));
        let i = (k / (n - 1)) as usize;
        let m = (k % (n - 1)) as usize;
        let j = if m < i { m } else { m + 1 };
        (i, j)
    }

    /// Uniform integer in `{0, ..., upper-1}`.
    pub fn below(&mut self, upper: u64) -> u64 {
        self.inner.random_range(0..upper)
    }
}

/// One binary interaction of the Poissonized chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpEvent {
    pub time: f64,
    pub first_agent: usize,
    pub second_agent: usize,
    /// Share of the pooled wealth handed to `first_agent`.
    pub fraction: f64,
}

/// Event log plus snapshots of one continuous-time trajectory.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    initial: ContinuousWealthState,
    horizon: f64,
    events: Vec<JumpEvent>,
    snapshots: Vec<(f64, ContinuousWealthState)>,
}

impl TrajectoryRecord {
    pub fn initial(&self) -> &ContinuousWealthState {
        &self.initial
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn events(&self) -> &[JumpEvent] {
        &self.events
    }

    pub fn snapshots(&self) -> &[(f64, ContinuousWealthState)] {
        &self.snapshots
    }

    pub fn final_state(&self) -> &ContinuousWealthState {
        &self.snapshots.last().expect("trajectory has snapshots").1
    }

    /// Replay the event log, visiting the state after each jump.
    pub fn replay<F: FnMut(&JumpEvent, &ContinuousWealthState)>(&self, mut visit: F) {
        let mut state = self.initial.clone();
        for ev in &self.events {
            apply_jump(&mut state, ev);
            visit(ev, &state);
        }
    }

    /// `time,event_index,i,j,r` rows.
    pub fn write_events_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "time,event_index,i,j,r")?;
        for (k, ev) in self.events.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{}",
                ev.time, k, ev.first_agent, ev.second_agent, ev.fraction
            )?;
        }
        Ok(())
    }

    /// `time,agent_index,wealth` rows for every snapshot.
    pub fn write_snapshots_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "time,agent_index,wealth")?;
        for (t, state) in &self.snapshots {
            for (i, x) in state.wealth().iter().enumerate() {
                writeln!(w, "{t},{i},{x}")?;
            }
        }
        Ok(())
    }
}

/// Apply a recorded jump to a state.
pub fn apply_jump(state: &mut ContinuousWealthState, ev: &JumpEvent) {
    state.exchange(ev.first_agent, ev.second_agent, ev.fraction);
}

/// One step of the integer chain: pick an ordered pair `(i, j)`, pool
/// `s = x_i + x_j`, and hand agent `i` a uniform draw from
/// `{0, ..., s}` (all `s + 1` splits; the kernel is doubly stochastic),
/// the rest going to agent `j`. A zero pool is a no-op and consumes no
/// draw.
pub fn dsdt_step(state: &DiscreteWealthState, rng: &mut RngStream) -> DiscreteWealthState {
    let mut next = state.clone();
    dsdt_step_in_place(&mut next, rng);
    next
}

pub fn dsdt_step_in_place(state: &mut DiscreteWealthState, rng: &mut RngStream) {
    let (i, j) = rng.ordered_pair(state.num_agents());
    let s = state.counts()[i] + state.counts()[j];
    if s == 0 {
        return;
    }
    let new_i = rng.below(s + 1);
    state.exchange(i, j, new_i);
}

/// Mesh-chain step driven by an explicit pair and uniform: agent `i`
/// receives the mesh floor of `u * (y_i + y_j + 1/n)`, which is uniform
/// over the `s n + 1` grid points `{0, 1/n, ..., y_i + y_j}` — the
/// integer-chain law scaled by `1/n`.
pub fn dsdt_floor_apply(
    state: &mut ContinuousWealthState,
    i: usize,
    j: usize,
    u: f64,
    mesh: MeshSpec,
) -> Result<()> {
    let s = state.wealth()[i] + state.wealth()[j];
    let floored = mesh_floor(u * (s + mesh.width()), mesh)?.min(s);
    state.exchange_to(i, j, floored);
    Ok(())
}

/// One step of the integer chain realized directly on the meshed simplex.
/// Distributionally equal to `dsdt_step` scaled by `1/n`.
pub fn dsdt_step_via_floor(
    state: &ContinuousWealthState,
    mesh: MeshSpec,
    rng: &mut RngStream,
) -> Result<ContinuousWealthState> {
    if !state.is_on_mesh(mesh) {
        return Err(Error::Domain(format!(
            "state is not on the 1/{} mesh",
            mesh.denominator()
        )));
    }
    let mut next = state.clone();
    let (i, j) = rng.ordered_pair(state.num_agents());
    let u = rng.uniform();
    dsdt_floor_apply(&mut next, i, j, u, mesh)?;
    Ok(next)
}

/// One step of the continuous-state chain: the pooled wealth of a uniform
/// ordered pair is split `(r, 1-r)` with `r` uniform on `[0, 1]`.
pub fn csdt_step(state: &ContinuousWealthState, rng: &mut RngStream) -> ContinuousWealthState {
    let mut next = state.clone();
    csdt_step_in_place(&mut next, rng);
    next
}

pub fn csdt_step_in_place(state: &mut ContinuousWealthState, rng: &mut RngStream) {
    let (i, j) = rng.ordered_pair(state.num_agents());
    let r = rng.uniform();
    state.exchange(i, j, r);
}

/// Continuous-time run: jump times form a Poisson process of total rate
/// `N - 1` (each ordered pair firing at rate `1/N`), and each jump applies
/// one continuous-state exchange.
///
/// Snapshots are taken at `t = 0`, at every multiple of `snapshot_every`
/// (when given) and at the horizon.
pub fn poisson_simulate(
    initial: &ContinuousWealthState,
    horizon: f64,
    snapshot_every: Option<f64>,
    rng: &mut RngStream,
) -> Result<TrajectoryRecord> {
    if !horizon.is_finite() || horizon < 0.0 {
        return Err(Error::Domain(format!("horizon must be >= 0, got {horizon}")));
    }
    if let Some(c) = snapshot_every {
        if !c.is_finite() || c <= 0.0 {
            return Err(Error::Domain(format!("snapshot cadence must be > 0, got {c}")));
        }
    }
    let num_agents = initial.num_agents();
    let rate = num_agents as f64 - 1.0;
    let mut state = initial.clone();
    let mut events = Vec::new();
    let mut snapshots = vec![(0.0, state.clone())];
    let mut next_snap = snapshot_every;
    let mut t = 0.0;
    loop {
        let t_next = t + rng.waiting_time(rate);
        if t_next > horizon {
            break;
        }
        // No jumps inside (t, t_next): emit any snapshot times crossed.
        while let Some(s) = next_snap {
            if s < t_next && s < horizon {
                snapshots.push((s, state.clone()));
                next_snap = Some(s + snapshot_every.unwrap());
            } else {
                break;
            }
        }
        t = t_next;
        let (i, j) = rng.ordered_pair(num_agents);
        let r = rng.uniform();
        state.exchange(i, j, r);
        events.push(JumpEvent {
            time: t,
            first_agent: i,
            second_agent: j,
            fraction: r,
        });
    }
    while let Some(s) = next_snap {
        if s < horizon {
            snapshots.push((s, state.clone()));
            next_snap = Some(s + snapshot_every.unwrap());
        } else {
            break;
        }
    }
    snapshots.push((horizon, state.clone()));
    Ok(TrajectoryRecord {
        initial: initial.clone(),
        horizon,
        events,
        snapshots,
    })
}

/// Result of a coupled discrete/continuous run.
#[derive(Debug, Clone)]
pub struct CoupledRun {
    pub discrete_path: Vec<ContinuousWealthState>,
    pub continuous_path: Vec<ContinuousWealthState>,
    /// `sup` over steps of the max-norm distance between the two states.
    pub sup_distance: f64,
    /// The deterministic guarantee `2k/n`.
    pub bound: f64,
}

/// Drive the mesh chain and the continuous chain for `k` steps from the
/// same state with identical pair choices and identical uniforms.
///
/// Each step changes only one pair in each chain, and the combined error
/// of that pair grows by at most the mesh floor's `2/n`, so the max-norm
/// distance is bounded by `2k/n` pathwise.
pub fn coupled_paths(
    initial: &ContinuousWealthState,
    mesh: MeshSpec,
    steps: usize,
    rng: &mut RngStream,
) -> Result<CoupledRun> {
    let start = if initial.is_on_mesh(mesh) {
        initial.clone()
    } else {
        initial.project_to_mesh(mesh)?
    };
    let mut disc = start.clone();
    let mut cont = start;
    let mut discrete_path = vec![disc.clone()];
    let mut continuous_path = vec![cont.clone()];
    let mut sup_distance = 0.0f64;
    for _ in 0..steps {
        let (i, j) = rng.ordered_pair(disc.num_agents());
        let u = rng.uniform();
        dsdt_floor_apply(&mut disc, i, j, u, mesh)?;
        cont.exchange(i, j, u);
        let dist = disc
            .wealth()
            .iter()
            .zip(cont.wealth())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        sup_distance = sup_distance.max(dist);
        discrete_path.push(disc.clone());
        continuous_path.push(cont.clone());
    }
    let bound = 2.0 * steps as f64 / mesh.denominator() as f64;
    Ok(CoupledRun {
        discrete_path,
        continuous_path,
        sup_distance,
        bound,
    })
}
