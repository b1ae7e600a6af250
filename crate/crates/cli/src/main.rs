//! `exkin`: run the exchange-dynamics simulators, the kinetic solver and
//! the verification checks from the command line.
//!
//! Every subcommand takes `--seed` (mandatory, overridable by the
//! `EXKIN_SEED` environment variable), an optional flat `key=value`
//! `--config` file (flags win), and writes machine-readable outputs plus
//! a `run.json` manifest into `--out`. Exit codes: 0 success, 1 a check
//! failed, 2 usage or runtime error.

mod config;

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::io::BufReader;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use exkin_core::chains::{
    coupled_paths, csdt_step_in_place, dsdt_step_in_place, poisson_simulate, RngStream,
};
use exkin_core::kinetic::{
    default_laplace_grid, equilibrium_residual, kinetic_solve, laplace_check, InitialDensity,
    Integrator, KineticRunConfig,
};
use exkin_core::measures::{martingale_bound_check, martingale_residual, TestFunction};
use exkin_core::oracle::{build_transition_matrix, stationary_distribution, STATIONARY_TOL};
use exkin_core::partitions::{
    limit_check, sample_fixed_p_geometric, sample_scaled_geometric, sample_uniform_composition,
    sample_uniform_simplex, LimitTarget, SamplerSpec,
};
use exkin_core::state::{ContinuousWealthState, DiscreteWealthState, MeshSpec};
use exkin_core::{Error, Result};

use config::{resolve, resolve_seed, FileConfig};

#[derive(Parser)]
#[command(
    name = "exkin",
    version,
    about = "Wealth-exchange dynamics: particle chains, kinetic solver, samplers and oracles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integer exchange chain on compositions of n into N parts.
    SimulateDsdt(SimulateDsdt),
    /// Continuous-state discrete-time exchange chain.
    SimulateCsdt(SimulateCsdt),
    /// Poissonized continuous-time exchange chain (total rate N-1).
    SimulatePoisson(SimulatePoisson),
    /// Coupled mesh/continuous run certifying the 2k/n error bound.
    Couple(Couple),
    /// Ensemble check of the martingale variance bound 64|g|^2 T / N.
    MartingaleTest(MartingaleTest),
    /// March the kinetic equation on a grid and dump density snapshots.
    KineticSolve(KineticSolve),
    /// Residual of the exponential equilibrium family under the operator.
    EquilibriaCheck(EquilibriaCheck),
    /// Laplace-transform probe of the exponential family fit.
    LaplaceCheck(LaplaceCheck),
    /// Draw one sample from a partition/simplex sampler.
    PartitionSample(PartitionSample),
    /// Single-draw empirical measure vs its limit law.
    LimitCheck(LimitCheck),
    /// Exact transition matrix and stationary distribution.
    Oracle(Oracle),
}

#[derive(Args)]
struct CommonArgs {
    /// RNG seed (or configure `seed=`; EXKIN_SEED overrides both).
    #[arg(long)]
    seed: Option<u64>,
    /// Flat key=value config file with # comments; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if absent).
    #[arg(long, default_value = "exkin-out")]
    out: PathBuf,
    /// Worker threads for replica ensembles (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

/// Resolved run context: output dir, config file, recorded parameters.
struct Ctx {
    out: PathBuf,
    file: FileConfig,
    seed: u64,
    params: BTreeMap<String, String>,
    started: Instant,
}

impl Ctx {
    fn new(common: &CommonArgs, needs_seed: bool) -> Result<Self> {
        let file = FileConfig::load(common.config.as_deref())?;
        let seed = if needs_seed {
            resolve_seed(common.seed, &file)?
        } else {
            resolve_seed(common.seed, &file).unwrap_or(0)
        };
        if let Some(jobs) = common.jobs {
            // Ignore the error if a global pool already exists.
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build_global();
        }
        fs::create_dir_all(&common.out)?;
        Ok(Self {
            out: common.out.clone(),
            file,
            seed,
            params: BTreeMap::new(),
            started: Instant::now(),
        })
    }

    fn record<T: Display>(&mut self, key: &str, value: T) {
        self.params.insert(key.to_string(), value.to_string());
    }

    fn get<T: Clone + std::str::FromStr + Display>(
        &mut self,
        flag: Option<T>,
        key: &str,
        default: Option<T>,
    ) -> Result<T> {
        let v = resolve(flag, &self.file, key, default)?;
        self.record(key, &v);
        Ok(v)
    }

    /// String-valued parameter (flag wins, then file, then default).
    fn get_str(&mut self, flag: Option<String>, key: &str, default: &str) -> String {
        let v = flag
            .or_else(|| self.file.raw(key).map(str::to_string))
            .unwrap_or_else(|| default.to_string());
        self.record(key, &v);
        v
    }

    fn write_text(&self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.out.join(name);
        fs::write(&path, text)?;
        Ok(path)
    }

    fn write_json(&self, name: &str, value: &serde_json::Value) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).expect("serializable");
        text.push('\n');
        self.write_text(name, &text)
    }

    fn finish(&self, command: &str) -> Result<()> {
        let manifest = json!({
            "command": command,
            "params": self.params,
            "seed": self.seed,
            "versions": {
                "exkin-cli": env!("CARGO_PKG_VERSION"),
                "exkin-core": env!("CARGO_PKG_VERSION"),
            },
            "wall_time_secs": self.started.elapsed().as_secs_f64(),
        });
        self.write_json("run.json", &manifest)?;
        Ok(())
    }

    fn rng(&self) -> RngStream {
        RngStream::new(self.seed, 0)
    }
}

fn main() {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::SimulateDsdt(a) => simulate_dsdt(a),
        Command::SimulateCsdt(a) => simulate_csdt(a),
        Command::SimulatePoisson(a) => simulate_poisson(a),
        Command::Couple(a) => couple(a),
        Command::MartingaleTest(a) => martingale_test(a),
        Command::KineticSolve(a) => kinetic_solve_cmd(a),
        Command::EquilibriaCheck(a) => equilibria_check(a),
        Command::LaplaceCheck(a) => laplace_check_cmd(a),
        Command::PartitionSample(a) => partition_sample(a),
        Command::LimitCheck(a) => limit_check_cmd(a),
        Command::Oracle(a) => oracle(a),
    }
}

// ---------------------------------------------------------------- parsers

fn parse_w0(s: &str) -> Result<Option<f64>> {
    if s.eq_ignore_ascii_case("inf") || s == "infinity" {
        return Ok(None);
    }
    s.parse::<f64>()
        .map(Some)
        .map_err(|_| Error::Config(format!("w0: expected `inf` or a number, got `{s}`")))
}

/// Particle-state initializer shared by the continuous chains.
fn build_particle_state(
    spec: &str,
    num_agents: u64,
    total: f64,
    rng: &mut RngStream,
) -> Result<ContinuousWealthState> {
    let n = num_agents as usize;
    if let Some(path) = spec.strip_prefix("file:") {
        let file = fs::File::open(path)?;
        return ContinuousWealthState::read_csv(BufReader::new(file));
    }
    if let Some(rest) = spec.strip_prefix("uniform:") {
        let upper: f64 = rest
            .parse()
            .map_err(|_| Error::Config(format!("init `{spec}`: bad bound")))?;
        let wealth: Vec<f64> = (0..n).map(|_| upper * rng.uniform()).collect();
        return ContinuousWealthState::new(wealth);
    }
    match spec {
        "equal" => ContinuousWealthState::new(vec![total / n as f64; n]),
        "simplex" => {
            let s = sample_uniform_simplex(num_agents, rng)?;
            let scale = total / num_agents as f64;
            ContinuousWealthState::new(s.wealth().iter().map(|w| w * scale).collect())
        }
        _ => Err(Error::Config(format!(
            "init `{spec}`: expected equal | simplex | uniform:B | file:PATH"
        ))),
    }
}

fn write_discrete_snapshots(snaps: &[(u64, DiscreteWealthState)]) -> String {
    let mut text = String::from("time,agent_index,wealth\n");
    for (t, s) in snaps {
        for (i, c) in s.counts().iter().enumerate() {
            text.push_str(&format!("{t},{i},{c}\n"));
        }
    }
    text
}

fn write_continuous_snapshots(snaps: &[(f64, ContinuousWealthState)]) -> String {
    let mut text = String::from("time,agent_index,wealth\n");
    for (t, s) in snaps {
        for (i, w) in s.wealth().iter().enumerate() {
            text.push_str(&format!("{t},{i},{w}\n"));
        }
    }
    text
}

// --------------------------------------------------------------- commands

#[derive(Args)]
struct SimulateDsdt {
    #[command(flatten)]
    common: CommonArgs,
    /// Total wealth units.
    #[arg(long)]
    n: Option<u64>,
    /// Number of agents.
    #[arg(long = "N")]
    num_agents: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    /// corner | equal | file:PATH
    #[arg(long)]
    init: Option<String>,
    /// Snapshot every this many steps (default: first and last only).
    #[arg(long)]
    snapshot_every: Option<u64>,
}

fn simulate_dsdt(a: SimulateDsdt) -> Result<i32> {
    let mut ctx = Ctx::new(&a.common, true)?;
    let n = ctx.get(a.n, "n", None)?;
    let num_agents = ctx.get(a.num_agents, "N", None)?;
    let steps = ctx.get(a.steps, "steps", Some(1000))?;
    let init = ctx.get_str(a.init, "init", "corner");
    let cadence = ctx.get(a.snapshot_every, "snapshot_every", Some(0))?;

    let mut state = match init.as_str() {
        "corner" => {
            let mut counts = vec![0u64; num_agents as usize];
            counts[0] = n;
            DiscreteWealthState::new(counts)?
        }
        "equal" => {
            if n % num_agents != 0 {
                return Err(Error::Config(format!(
                    "equal init needs N | n, got n={n}, N={num_agents}"
                )));
            }
            DiscreteWealthState::new(vec![n / num_agents; num_agents as usize])?
        }
        other => {
            let path = other.strip_prefix("file:").ok_or_else(|| {
                Error::Config(format!("init `{other}`: expected corner | equal | file:PATH"))
            })?;
            let file = fs::File::open(path)?;
            DiscreteWealthState::read_csv(BufReader::new(file))?
        }
    };
    let mut rng = ctx.rng();
    let mut snaps = vec![(0u64, state.clone())];
    for step in 1..=steps {
        dsdt_step_in_place(&mut state, &mut rng);
        if cadence > 0 && step % cadence == 0 && step != steps {
            snaps.push((step, state.clone()));
        }
    }
    snaps.push((steps, state.clone()));
    ctx.write_text("snapshots.csv", &write_discrete_snapshots(&snaps))?;
    let mut buf = Vec::new();
    state.write_csv(&mut buf)?;
    ctx.write_text("final_state.csv", &String::from_utf8(buf).expect("utf8"))?;
    ctx.finish("simulate-dsdt")?;
    println!(
        "simulate-dsdt: {steps} steps, total {} conserved, outputs in {}",
        state.total(),
        ctx.out.display()
    );
    Ok(0)
}

#[derive(Args)]
struct SimulateCsdt {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long = "N")]
    num_agents: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    /// Total wealth (used by equal/simplex inits; default N).
    #[arg(long)]
    total: Option<f64>,
    /// equal | simplex | uniform:B | file:PATH
    #[arg(long)]
    init: Option<String>,
    #[arg(long)]
    snapshot_every: Option<u64>,
}

fn simulate_csdt(a: SimulateCsdt) -> Result<i32> {
    let mut ctx = Ctx::new(&a.common, true)?;
    let num_agents = ctx.get(a.num_agents, "N", None)?;
    let steps = ctx.get(a.steps, "steps", Some(1000))?;
    let total = ctx.get(a.total, "total", Some(num_agents as f64))?;
    let init = ctx.get_str(a.init, "init", "equal");
    let cadence = ctx.get(a.snapshot_every, "snapshot_every", Some(0))?;

    let mut rng = ctx.rng();
    let mut state = build_particle_state(&init, num_agents, total, &mut rng)?;
    let mut snaps = vec![(0f64, state.clone())];
    for step in 1..=steps {
        csdt_step_in_place(&mut state, &mut rng);
        if cadence > 0 && step % cadence == 0 && step != steps {
            snaps.push((step as f64, state.clone()));
        }
    }
    snaps.push((steps as f64, state.clone()));
    if !state.conservation_ok() {
        return Err(Error::Instability("wealth conservation budget exceeded".into()));
    }
    ctx.write_text("snapshots.csv", &write_continuous_snapshots(&snaps))?;
    let mut buf = Vec::new();
    state.write_csv(&mut buf)?;
    ctx.write_text("final_state.csv", &String::from_utf8(buf).expect("utf8"))?;
    ctx.finish("simulate-csdt")?;
    println!(
        "simulate-csdt: {steps} steps, conservation ok, outputs in {}",
        ctx.out.display()
    );
    Ok(0)
}

#[derive(Args)]
struct SimulatePoisson {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long = "N")]
    num_agents: Option<u64>,
    /// Time horizon.
    #[arg(long = "T")]
    horizon: Option<f64>,
    #[arg(long)]
    total: Option<f64>,
    /// equal | simplex | uniform:B | file:PATH
    #[arg(long)]
    init: Option<String>,
    /// Snapshot cadence in time units.
    #[arg(long)]
    snapshot_every: Option<f64>,
}

fn simulate_poisson(a: SimulatePoisson) -> Result<i32> {
    let mut ctx = Ctx::new(&a.common, true)?;
    let num_agents = ctx.get(a.num_agents, "N", None)?;
    let horizon = ctx.get(a.horizon, "T", None)?;
    let total = ctx.get(a.total, "total", Some(num_agents as f64))?;
    let init = ctx.get_str(a.init, "init", "equal");
    let cadence = match a.snapshot_every {
        Some(c) => Some(c),
        None => ctx.file.parse::<f64>("snapshot_every")?,
    };
    if let Some(c) = cadence {
        ctx.record("snapshot_every", c);
    }

    let mut rng = ctx.rng();
    let initial = build_particle_state(&init, num_agents, total, &mut rng)?;
    let traj = poisson_simulate(&initial, horizon, cadence, &mut rng)?;
    for (_, s) in traj.snapshots() {
        if !s.conservation_ok() {
            return Err(Error::Instability("wealth conservation budget exceeded".into()));
        }
    }
    let mut events = Vec::new();
    traj.write_events_csv(&mut events)?;
    ctx.write_text("events.csv", &String::from_utf8(events).expect("utf8"))?;
    let mut snaps = Vec::new();
    traj.write_snapshots_csv(&mut snaps)?;
    ctx.write_text("snapshots.csv", &String::from_utf8(snaps).expect("utf8"))?;
    ctx.finish("simulate-poisson")?;
    println!(
        "simulate-poisson: {} events on [0,{horizon}], outputs in {}",
        traj.events().len(),
        ctx.out.display()
    );
    Ok(0)
}

#[derive(Args)]
struct Couple {
    #[command(flatten)]
    common: CommonArgs,
    /// Mesh denominator.
    #[arg(long)]
    n: Option<u64>,
    /// Number of coupled steps.
    #[arg(long)]
    k: Option<u64>,
    #[arg(long = "N")]
    num_agents: Option<u64>,
}

fn couple(a: Couple) -> Result<i32> {
    let mut ctx = Ctx::new(&a.common, true)?;
    let n = ctx.get(a.n, "n", None)?;
    let k = ctx.get(a.k, "k", None)?;
    let num_agents = ctx.get(a.num_agents, "N", Some(5))?;

    let mut rng = ctx.rng();
    let start = sample_uniform_simplex(num_agents, &mut rng)?;
    let initial = ContinuousWealthState::new(
        start.wealth().iter().map(|w| w / num_agents as f64).collect(),
    )?;
    let mesh = MeshSpec::new(n)?;
    let run = coupled_paths(&initial, mesh, k as usize, &mut rng)?;
    let pass = run.sup_distance <= run.bound;
    let report = json!({
        "n": n,
        "k": k,
        "N": num_agents,
        "sup_distance": run.sup_distance,
        "bound": run.bound,
        "pass": pass,
    });
    ctx.write_json("couple.json", &report)?;
    ctx.finish("couple")?;
    println!(
        "couple: sup_distance = {} <= 2k/n = {} : {}",
        run.sup_distance,
        run.bound,
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(if pass { 0 } else { 1 })
}

#[derive(Args)]
struct MartingaleTest {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long = "N")]
    num_agents: Option<u64>,
    #[arg(long = "T")]
    horizon: Option<f64>,
    #[arg(long)]
    replicas: Option<u64>,
    /// Observable: one | exp:L | capped:CAP[,K] | indicator:LO,HI[,RAMP]
    #[arg(long)]
    g: Option<String>,
    /// equal | simplex | uniform:B | file:PATH
    #[arg(long)]
    init: Option<String>,
    /// Also dump the replica-0 path as martingale_path.csv.
    #[arg(long)]
    dump_path: bool,
}

fn martingale_test(a: MartingaleTest) -> Result<i32> {
    let mut ctx = Ctx::new(&a.common, true)?;
    let num_agents = ctx.get(a.num_agents, "N", None)?;
    let horizon = ctx.get(a.horizon, "T", Some(5.0))?;
    let replicas = ctx.get(a.replicas, "replicas", Some(200))?;
    let g_spec = ctx.get_str(a.g, "g", "exp:1");
    let init = ctx.get_str(a.init, "init", "uniform:2");

    let g = TestFunction::parse(&g_spec)?;
    let mut rng = ctx.rng();
    let initial = build_particle_state(&init, num_agents, num_agents as f64, &mut rng)?;
    let report = martingale_bound_check(&initial, &g, horizon, replicas as usize, ctx.seed)?;
    let value = serde_json::to_value(&report).expect("serializable");
    ctx.write_json("martingale_bound.json", &value)?;
    if a.dump_path {
        let mut rng0 = RngStream::new(ctx.seed, 0);
        let traj = poisson_simulate(&initial, horizon, None, &mut rng0)?;
        let path = martingale_residual(&traj, &g, initial.total())?;
        let mut buf = Vec::new();
        path.write_csv(&mut buf)?;
        ctx.write_text("martingale_path.csv", &String::from_utf8(buf).expect("utf8"))?;
    }
    ctx.finish("martingale-test")?;
    println!(
        "martingale-test: E[sup M^2] = {} vs bound {} : {}",
        report.empirical,
        report.bound,
        if report.pass { "PASS" } else { "FAIL" }
    );
    Ok(if report.pass { 0 } else { 1 })
}

#[derive(Args)]
struct KineticSolve {
    #[command(flatten)]
    common: CommonArgs,
    /// Wealth cap: `inf` or a number.
    #[arg(long)]
    w0: Option<String>,
    #[arg(long = "T")]
    horizon: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    x_max: Option<f64>,
    #[arg(long)]
    cells: Option<u64>,
    /// exp:M | truncexp:M | uniform:B | geom:P
    #[arg(long)]
    init: Option<String>,
    /// rk4 | euler
    #[arg(long)]
    integrator: Option<String>,
    #[arg(long)]
    snapshot_every: Option<f64>,
}

fn kinetic_solve_cmd(a: KineticSolve) -> Result<i32> {
    let mut ctx = Ctx::new(&a.common, false)?;
    let w0_spec = ctx.get_str(a.w0, "w0", "inf");
    let w0 = parse_w0(&w0_spec)?;
    let horizon = ctx.get(a.horizon, "T", None)?;
    let dt = ctx.get(a.dt, "dt", Some(0.05))?;
    let x_max = ctx.get(a.x_max, "x_max", Some(w0.unwrap_or(30.0)))?;
    let cells = ctx.get(a.cells, "cells", Some(3000))?;
    let init_spec = ctx.get_str(a.init, "init", "exp:1");
    let integrator_name = ctx.get_str(a.integrator, "integrator", "rk4");
    let cadence = match a.snapshot_every {
        Some(c) => Some(c),
        None => ctx.file.parse::<f64>("snapshot_every")?,
    };
    if let Some(c) = cadence {
        ctx.record("snapshot_every", c);
    }

    let integrator = match integrator_name.as_str() {
        "rk4" => Integrator::Rk4,
        "euler" => Integrator::Euler,
        other => return Err(Error::Config(format!("integrator `{other}`: rk4 | euler"))),
    };
    let config = KineticRunConfig {
        w0,
        horizon,
        dt,
        x_max,
        cells: cells as usize,
        initial: InitialDensity::parse(&init_spec)?,
        integrator,
        snapshot_every: cadence,
    };
    let run = kinetic_solve(&config)?;
    let mut files = Vec::new();
    for (idx, f) in run.snapshots.iter().enumerate() {
        let name = format!("density_{idx:04}.csv");
        let mut buf = Vec::new();
        f.write_csv(&mut buf)?;
        ctx.write_text(&name, &String::from_utf8(buf).expect("utf8"))?;
        files.push(name);
    }
    let manifest = json!({
        "times": run.times,
        "files": files,
        "clipped_mass_total": run.clipped_mass_total,
        "max_step_clip": run.max_step_clip,
        "final_mean": run.final_density().mean(),
    });
    ctx.write_json("densities.json", &manifest)?;
    ctx.finish("kinetic-solve")?;
    println!(
        "kinetic-solve: {} snapshots to t={horizon}, clipped mass {}, outputs in {}",
        run.snapshots.len(),
        run.clipped_mass_total,
        ctx.out.display()
    );
    Ok(0)
}

#[derive(Args)]
struct EquilibriaCheck {
    #[command(flatten)]
    common: CommonArgs,
    /// Wealth cap: `inf` or a number.
    #[arg(long)]
    w0: Option<String>,
    /// Mean of the exponential family member.
    #[arg(long)]
    m: Option<f64>,
    #[arg(long)]
    x_max: Option<f64>,
    #[arg(long)]
    cells: Option<u64>,
}

fn equilibria_check(a: EquilibriaCheck) -> Result<i32> {
    let mut ctx = Ctx::new(&a.common, false)?;
    let w0_spec = ctx.get_str(a.w0, "w0", "inf");
    let w0 = parse_w0(&w0_spec)?;
    let m = ctx.get(a.m, "m", Some(1.0))?;
    let x_max = ctx.get(a.x_max, "x_max", Some(w0.unwrap_or(30.0)))?;
    let cells = ctx.get(a.cells, "cells", Some(3000))?;

    let residual = equilibrium_residual(m, w0, x_max, cells as usize)?;
    let threshold = 5e-3;
    let pass = residual <= threshold;
    let report = json!({
        "m": m,
        "w0": w0_spec,
        "x_max": x_max,
        "cells": cells,
        "residual": residual,
        "threshold": threshold,
        "pass": pass,
    });
    ctx.write_json("equilibria.json", &report)?;
    ctx.finish("equilibria-check")?;
    println!(
        "equilibria-check: sup |qbar(exp(m={m}))| = {residual:e} vs {threshold:e} : {}",
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(if pass { 0 } else { 1 })
}

#[derive(Args)]
struct LaplaceCheck {
    #[command(flatten)]
    common: CommonArgs,
    /// Density to probe: exp:M | uniform:B | geom:P
    #[arg(long)]
    init: Option<String>,
    #[arg(long)]
    x_max: Option<f64>,
    #[arg(long)]
    cells: Option<u64>,
}

fn laplace_check_cmd(a: LaplaceCheck) -> Result<i32> {
    let mut ctx = Ctx::new(&a.common, false)?;
    let init_spec = ctx.get_str(a.init, "init", "exp:1");
    let x_max = ctx.get(a.x_max, "x_max", Some(30.0))?;
    let cells = ctx.get(a.cells, "cells", Some(3000))?;

    let f = InitialDensity::parse(&init_spec)?.build(None, x_max, cells as usize)?;
    let report = laplace_check(&f, &default_laplace_grid());
    let mut csv = String::from("t,transform\n");
    for (t, v) in &report.transform {
        csv.push_str(&format!("{t},{v}\n"));
    }
    ctx.write_text("transform.csv", &csv)?;
    let exponential_family = report.max_deviation <= 1e-3;
    let value = json!({
        "init": init_spec,
        "fitted_mean": report.fitted_mean,
        "max_deviation": report.max_deviation,
        "fit_threshold": 1e-3,
        "exponential_family": exponential_family,
    });
    ctx.write_json("laplace.json", &value)?;
    ctx.finish("laplace-check")?;
    println!(
        "laplace-check: fitted mean {}, max deviation {:e} (exponential family: {})",
        report.fitted_mean, report.max_deviation, exponential_family
    );
    Ok(0)
}

#[derive(Args)]
struct PartitionSample {
    #[command(flatten)]
    common: CommonArgs,
    /// uniform-composition | scaled-geometric | fixed-p-geometric | uniform-simplex
    #[arg(long)]
    kind: Option<String>,
    /// Total wealth units (uniform-composition).
    #[arg(long)]
    n: Option<u64>,
    #[arg(long = "N")]
    num_agents: Option<u64>,
    /// Total wealth W (scaled-geometric).
    #[arg(long = "W")]
    total: Option<f64>,
    #[arg(long)]
    p: Option<f64>,
}

fn partition_sample(a: PartitionSample) -> Result<i32> {
    let mut ctx = Ctx::new(&a.common, true)?;
    let kind = ctx.get_str(a.kind, "kind", "uniform-simplex");
    let num_agents = ctx.get(a.num_agents, "N", None)?;
    let mut rng = ctx.rng();
    let values: Vec<f64> = match kind.as_str() {
        "uniform-composition" => {
            let n = ctx.get(a.n, "n", None)?;
            sample_uniform_composition(n, num_agents, &mut rng)?
                .counts()
                .iter()
                .map(|&c| c as f64)
                .collect()
        }
        "scaled-geometric" => {
            let total = ctx.get(a.total, "W", None)?;
            sample_scaled_geometric(num_agents, total, &mut rng)?
                .wealth()
                .to_vec()
        }
        "fixed-p-geometric" => {
            let p = ctx.get(a.p, "p", None)?;
            sample_fixed_p_geometric(num_agents, p, &mut rng)?
                .wealth()
                .to_vec()
        }
        "uniform-simplex" => sample_uniform_simplex(num_agents, &mut rng)?.wealth().to_vec(),
        other => {
            return Err(Error::Config(format!(
                "kind `{other}`: uniform-composition | scaled-geometric | fixed-p-geometric | \
                 uniform-simplex"
            )))
        }
    };
    let mut csv = String::from("index,value\n");
    for (i, v) in values.iter().enumerate() {
        csv.push_str(&format!("{i},{v}\n"));
    }
    ctx.write_text("samples.csv", &csv)?;
    ctx.finish("partition-sample")?;
    println!(
        "partition-sample: {} values (sum {}) in {}",
        values.len(),
        values.iter().sum::<f64>(),
        ctx.out.display()
    );
    Ok(0)
}

#[derive(Args)]
struct LimitCheck {
    #[command(flatten)]
    common: CommonArgs,
    /// scaled-geometric | fixed-p-geometric | uniform-simplex
    #[arg(long)]
    sampler: Option<String>,
    /// exp1 | geom:P | delta0
    #[arg(long)]
    target: Option<String>,
    #[arg(long = "N")]
    num_agents: Option<u64>,
    #[arg(long = "W")]
    total: Option<f64>,
    #[arg(long)]
    p: Option<f64>,
    /// Total wealth units (uniform-composition; refused with any target).
    #[arg(long)]
    n: Option<u64>,
}

fn limit_check_cmd(a: LimitCheck) -> Result<i32> {
    let mut ctx = Ctx::new(&a.common, true)?;
    let sampler_name = ctx.get_str(a.sampler, "sampler", "uniform-simplex");
    let target_name = ctx.get_str(a.target, "target", "exp1");
    let num_agents = ctx.get(a.num_agents, "N", None)?;

    let sampler = match sampler_name.as_str() {
        "scaled-geometric" => SamplerSpec::ScaledGeometric {
            num_agents,
            total: ctx.get(a.total, "W", None)?,
        },
        "fixed-p-geometric" => SamplerSpec::FixedPGeometric {
            num_agents,
            p: ctx.get(a.p, "p", None)?,
        },
        "uniform-simplex" => SamplerSpec::UniformSimplex { num_agents },
        "uniform-composition" => SamplerSpec::UniformComposition {
            n: ctx.get(a.n, "n", Some(0))?,
            num_agents,
        },
        other => {
            return Err(Error::Config(format!(
                "sampler `{other}`: scaled-geometric | fixed-p-geometric | uniform-simplex"
            )))
        }
    };
    let target = if target_name == "exp1" {
        LimitTarget::ExpOne
    } else if target_name == "delta0" {
        LimitTarget::DeltaZero
    } else if let Some(rest) = target_name.strip_prefix("geom:") {
        LimitTarget::Geometric {
            p: rest
                .parse()
                .map_err(|_| Error::Config(format!("target `{target_name}`: bad p")))?,
        }
    } else {
        return Err(Error::Config(format!(
            "target `{target_name}`: exp1 | geom:P | delta0"
        )));
    };
    let mut rng = ctx.rng();
    let report = limit_check(&sampler, target, &mut rng)?;
    let value = serde_json::to_value(&report).expect("serializable");
    ctx.write_json("limit_check.json", &value)?;
    ctx.finish("limit-check")?;
    println!(
        "limit-check: {} = {} vs threshold {} : {}",
        report.statistic_kind,
        report.statistic,
        report.threshold,
        if report.pass { "PASS" } else { "FAIL" }
    );
    Ok(if report.pass { 0 } else { 1 })
}

#[derive(Args)]
struct Oracle {
    #[command(flatten)]
    common: CommonArgs,
    /// Total wealth units.
    #[arg(long)]
    n: Option<u64>,
    #[arg(long = "N")]
    num_agents: Option<u64>,
}

fn oracle(a: Oracle) -> Result<i32> {
    let mut ctx = Ctx::new(&a.common, false)?;
    let n = ctx.get(a.n, "n", None)?;
    let num_agents = ctx.get(a.num_agents, "N", None)?;

    let matrix = build_transition_matrix(n, num_agents)?;
    let row_dev = matrix.row_sum_max_dev();
    let col_dev = matrix.col_sum_max_dev();
    let pi = stationary_distribution(&matrix, STATIONARY_TOL)?;
    let uniform = 1.0 / matrix.size() as f64;
    let max_dev = pi
        .iter()
        .map(|p| (p - uniform).abs())
        .fold(0.0, f64::max);
    let pass = row_dev <= 1e-12 && col_dev <= 1e-12 && max_dev <= 1e-10;

    let mut buf = Vec::new();
    matrix.write_csv(&mut buf)?;
    ctx.write_text("matrix.csv", &String::from_utf8(buf).expect("utf8"))?;
    let mut buf = Vec::new();
    matrix.write_legend(&mut buf)?;
    ctx.write_text("matrix_legend.csv", &String::from_utf8(buf).expect("utf8"))?;

    let report = json!({
        "n": n,
        "N": num_agents,
        "states": matrix.size(),
        "row_sum_max_dev": row_dev,
        "col_sum_max_dev": col_dev,
        "stationary": if max_dev <= 1e-10 { "uniform" } else { "non-uniform" },
        "max_dev": max_dev,
        "pass": pass,
    });
    let text = serde_json::to_string_pretty(&report).expect("serializable");
    println!("{text}");
    ctx.write_json("oracle.json", &report)?;
    ctx.finish("oracle")?;
    Ok(if pass { 0 } else { 1 })
}
