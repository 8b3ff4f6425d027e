//! `srp`: validate specs, solve the limit flow, simulate, and run
//! experiment plans.
//!
//! Exit codes: 0 success, 1 validation or input failure, 2 numerical
//! non-convergence, 3 a sweep's assertion failed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use srp_core::config::{load_spec, SpecFile};
use srp_core::flow::{BoundaryPoint, FlowGrid, Resolution, SolverOptions};
use srp_core::harness::{
    closed_form_cases, convergence_sweep, coupling_sweep, flow_case, flow_driven_sweep,
    latp_validation, solve_limit, tagged_compare, write_json, write_with, ExperimentPlan,
    LatpOptions, TaggedOptions,
};
use srp_core::intensity::{assign_population, AssignmentMode, PopulationSpec};
use srp_core::measure::{EvaluationLattice, LogView};
use srp_core::srp::{simulate, simulate_flow_driven, StreamMode};
use srp_core::Error;

const EXIT_VALIDATION: u8 = 1;
const EXIT_NONCONVERGENCE: u8 = 2;
const EXIT_ASSERTION: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "srp", version, about = "Stochastic ranking process toolkit")]
struct Cli {
    /// Output directory; overrides a plan's `output_dir`.
    #[arg(long, global = true, env = "SRP_OUTPUT_DIR", value_name = "DIR")]
    out: Option<PathBuf>,

    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse and check a spec; print C_W and M_W.
    Validate {
        /// Spec TOML file.
        spec: PathBuf,
    },
    /// Solve the limit flow y_C; write flow.csv, flow.bin and solve.json.
    Solve {
        spec: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Simulate one run; write events.bin, events.csv and simulate.json.
    Simulate(SimulateArgs),
    /// Convergence sweep of a plan (original or flow-driven).
    Sweep {
        plan: PathBuf,
        #[command(flatten)]
        overrides: PlanOverrides,
        /// Simulate the flow-driven process under `--theta` instead.
        #[arg(long)]
        flow_driven: bool,
        /// Driving flow for `--flow-driven`.
        #[arg(long, value_enum, default_value_t = Theta::YC)]
        theta: Theta,
    },
    /// Decoupling of original and flow-driven copies on shared streams.
    Couple {
        plan: PathBuf,
        #[command(flatten)]
        overrides: PlanOverrides,
        #[arg(long, value_enum, default_value_t = Theta::YC)]
        theta: Theta,
    },
    /// Tagged particles against their limit paths.
    Tagged {
        plan: PathBuf,
        #[command(flatten)]
        overrides: PlanOverrides,
        /// Limit initial positions of the tagged particles.
        #[arg(long, value_delimiter = ',', default_values_t = [0.25, 0.75])]
        positions: Vec<f64>,
        /// Class of the tagged particles.
        #[arg(long, default_value_t = 0)]
        class: usize,
    },
    /// Survival probabilities: Volterra solve vs series vs Monte Carlo.
    Latp(LatpArgs),
}

#[derive(Args, Debug, Clone)]
struct SolverArgs {
    /// Time steps on [0,T].
    #[arg(long, default_value_t = 200)]
    m: usize,
    /// Steps on [0,1] for initial points.
    #[arg(long, default_value_t = 200)]
    mz: usize,
    /// Residual tolerance.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    /// Relaxation factor in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    damping: f64,
}

impl SolverArgs {
    fn options(&self) -> srp_core::Result<SolverOptions> {
        Ok(SolverOptions {
            resolution: Resolution::new(self.m, self.mz)?,
            tol: self.tol,
            max_iter: self.max_iter,
            damping: self.damping,
        })
    }
}

#[derive(Args, Debug, Clone)]
struct PlanOverrides {
    /// Replace the plan's N list.
    #[arg(long, value_delimiter = ',')]
    ns: Option<Vec<usize>>,
    /// Replace the plan's seeds per N.
    #[arg(long)]
    seeds: Option<usize>,
    /// Replace the plan's base seed.
    #[arg(long)]
    base_seed: Option<u64>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Theta {
    /// The solved limit flow.
    #[value(name = "y-c")]
    YC,
    /// θ(γ, t) = y₀(γ).
    Identity,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Dynamics {
    Original,
    FlowDriven,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Assignment {
    Stratified,
    SeededRandom,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Streams {
    Superposition,
    PerParticle,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    spec: PathBuf,
    /// Number of particles.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Dynamics::Original)]
    dynamics: Dynamics,
    /// Driving flow for flow-driven dynamics.
    #[arg(long, value_enum, default_value_t = Theta::YC)]
    theta: Theta,
    #[arg(long, value_enum, default_value_t = Assignment::Stratified)]
    assignment: Assignment,
    #[arg(long, value_enum, default_value_t = Streams::Superposition)]
    streams: Streams,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Debug)]
struct LatpArgs {
    /// Also check the kernel induced by this spec's solved flow.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Class and start position of the flow-induced kernel.
    #[arg(long, default_value_t = 0)]
    class: usize,
    #[arg(long, default_value_t = 0.5)]
    z: f64,
    /// Horizon when no spec is given.
    #[arg(long, default_value_t = 1.0)]
    horizon: f64,
    /// Grid intervals of the Volterra solve.
    #[arg(long, default_value_t = 400)]
    m: usize,
    /// Series truncation.
    #[arg(long, default_value_t = 25)]
    kmax: usize,
    /// Monte Carlo paths per kernel.
    #[arg(long, default_value_t = 10_000)]
    replicas: usize,
    /// Lattice nodes per axis.
    #[arg(long, default_value_t = 5)]
    lattice: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(EXIT_VALIDATION),
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(w) = cli.workers {
        if w == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(EXIT_VALIDATION);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_VALIDATION);
        }
    }
    match run(&cli) {
        Ok(Verdict::Pass) => ExitCode::SUCCESS,
        Ok(Verdict::Fail) => ExitCode::from(EXIT_ASSERTION),
        Err(e) => {
            eprintln!("error: {e:#}");
            let nonconv = e.chain().any(|c| {
                matches!(
                    c.downcast_ref::<Error>(),
                    Some(Error::NonConvergence { .. })
                )
            });
            if let Some(Error::NonConvergence { history, .. }) =
                e.chain().find_map(|c| c.downcast_ref::<Error>())
            {
                eprintln!("residual trace:");
                for (i, r) in history.iter().enumerate() {
                    eprintln!("  {i:4} {r:e}");
                }
            }
            ExitCode::from(if nonconv {
                EXIT_NONCONVERGENCE
            } else {
                EXIT_VALIDATION
            })
        }
    }
}

enum Verdict {
    Pass,
    Fail,
}

impl From<bool> for Verdict {
    fn from(pass: bool) -> Self {
        if pass {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

fn out_dir(cli: &Cli, fallback: Option<&Path>, default: &str) -> anyhow::Result<PathBuf> {
    let dir = cli
        .out
        .clone()
        .or_else(|| fallback.map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from(default));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn load_plan(path: &Path, o: &PlanOverrides) -> anyhow::Result<ExperimentPlan> {
    let mut plan =
        ExperimentPlan::load(path).with_context(|| format!("loading plan {}", path.display()))?;
    if o.ns.is_some() || o.seeds.is_some() {
        plan = ExperimentPlan::new(
            plan.spec_path.clone(),
            plan.spec.clone(),
            o.ns.clone().unwrap_or(plan.ns.clone()),
            o.seeds.unwrap_or(plan.seeds),
            plan.base_seed,
            plan.assignment,
            plan.test_functions.clone(),
            plan.solver,
            lattice_spec(&plan.lattice),
            plan.output_dir.clone(),
        )?;
    }
    if let Some(b) = o.base_seed {
        plan.base_seed = b;
    }
    Ok(plan)
}

/// Recovers the plan's lattice sizes from the built lattice.
fn lattice_spec(l: &EvaluationLattice) -> srp_core::measure::LatticeSpec {
    let initial = l
        .gammas
        .iter()
        .filter(|g| matches!(g, BoundaryPoint::Initial(_)))
        .count();
    srp_core::measure::LatticeSpec {
        initial,
        boundary: l.gammas.len() - initial,
        times: l.times.len(),
    }
}

/// Limit-flow cache inside `dir`, keyed by spec fingerprint.
fn cache_path(dir: &Path, spec: &PopulationSpec<f64>) -> PathBuf {
    dir.join(format!("limit-{:016x}.bin", spec.fingerprint()))
}

fn theta_for(
    theta: Theta,
    spec: &PopulationSpec<f64>,
    opts: &SolverOptions,
    dir: &Path,
) -> anyhow::Result<FlowGrid<f64>> {
    Ok(match theta {
        Theta::YC => solve_limit(spec, opts, Some(&cache_path(dir, spec)))?
            .flow()
            .clone(),
        Theta::Identity => FlowGrid::identity(spec.horizon(), opts.resolution),
    })
}

fn run(cli: &Cli) -> anyhow::Result<Verdict> {
    match &cli.command {
        Command::Validate { spec } => cmd_validate(spec),
        Command::Solve { spec, solver } => cmd_solve(cli, spec, solver),
        Command::Simulate(args) => cmd_simulate(cli, args),
        Command::Sweep {
            plan,
            overrides,
            flow_driven,
            theta,
        } => cmd_sweep(cli, plan, overrides, *flow_driven, *theta),
        Command::Couple {
            plan,
            overrides,
            theta,
        } => cmd_couple(cli, plan, overrides, *theta),
        Command::Tagged {
            plan,
            overrides,
            positions,
            class,
        } => cmd_tagged(cli, plan, overrides, positions, *class),
        Command::Latp(args) => cmd_latp(cli, args),
    }
}

fn cmd_validate(path: &Path) -> anyhow::Result<Verdict> {
    let file = SpecFile::load(path).with_context(|| format!("reading {}", path.display()))?;
    let spec = file
        .build()
        .with_context(|| format!("validating {}", path.display()))?;
    println!("valid spec: {}", path.display());
    println!("classes: {}", spec.class_count());
    for (k, c) in spec.classes().iter().enumerate() {
        let (norm, deriv) = c.field.compute_bounds(200);
        println!(
            "  class {k}: weight {}, sup |w| {norm}, sup |dw/dy| {deriv}",
            c.weight
        );
    }
    println!("horizon: {}", spec.horizon());
    println!("C_W: {}", spec.c_w());
    println!("M_W: {}", spec.m_w());
    println!("fingerprint: {:016x}", spec.fingerprint());
    Ok(Verdict::Pass)
}

#[derive(Serialize)]
struct SolveSummary {
    spec_fingerprint: String,
    m: usize,
    mz: usize,
    tol: f64,
    iterations: usize,
    residual: f64,
    damping: f64,
    projection_change: f64,
    history: Vec<f64>,
}

fn cmd_solve(cli: &Cli, path: &Path, args: &SolverArgs) -> anyhow::Result<Verdict> {
    let spec = load_spec(path).with_context(|| format!("loading {}", path.display()))?;
    let opts = args.options()?;
    let dir = out_dir(cli, None, "srp-out")?;
    let sol = srp_core::flow::solve_y_c(&spec, &opts)?;
    for (i, r) in sol.history().iter().enumerate() {
        println!("iteration {i:4}: residual {r:e}");
    }
    write_with(&dir.join("flow.csv"), |w| sol.flow().write_csv(w))?;
    sol.flow()
        .save_cache(&dir.join("flow.bin"), spec.fingerprint())?;
    write_json(
        &dir.join("solve.json"),
        &SolveSummary {
            spec_fingerprint: format!("{:016x}", spec.fingerprint()),
            m: opts.resolution.m,
            mz: opts.resolution.mz,
            tol: opts.tol,
            iterations: sol.iterations(),
            residual: sol.residual(),
            damping: sol.damping(),
            projection_change: sol.projection_change(),
            history: sol.history().to_vec(),
        },
    )?;
    println!(
        "converged in {} iterations; wrote {}",
        sol.iterations(),
        dir.display()
    );
    Ok(Verdict::Pass)
}

#[derive(Serialize)]
struct SimulateSummary {
    n: usize,
    seed: u64,
    dynamics: srp_core::srp::LogKind,
    horizon: f64,
    events: usize,
    tied_times: usize,
    identity_violations: usize,
    lemma_violations: usize,
}

fn cmd_simulate(cli: &Cli, a: &SimulateArgs) -> anyhow::Result<Verdict> {
    let spec = load_spec(&a.spec).with_context(|| format!("loading {}", a.spec.display()))?;
    let dir = out_dir(cli, None, "srp-out")?;
    let mode = match a.assignment {
        Assignment::Stratified => AssignmentMode::Stratified,
        Assignment::SeededRandom => AssignmentMode::SeededRandom,
    };
    let streams = match a.streams {
        Streams::Superposition => StreamMode::Superposition,
        Streams::PerParticle => StreamMode::PerParticle,
    };
    let assignment = assign_population(&spec, a.n, mode, a.seed)?;
    let log = match a.dynamics {
        Dynamics::Original => simulate(&spec, &assignment, a.seed, streams)?,
        Dynamics::FlowDriven => {
            let theta = theta_for(a.theta, &spec, &a.solver.options()?, &dir)?;
            simulate_flow_driven(&spec, &assignment, &theta, a.seed, streams)?
        }
    };
    let tied_times = log.validate()?;
    log.save(&dir.join("events.bin"))?;
    write_with(&dir.join("events.csv"), |w| log.write_csv(w))?;
    let view = LogView::new(&log);
    let eval = view.evaluate(
        &EvaluationLattice::default_for(spec.horizon()),
        spec.class_count(),
    )?;
    let identity_violations = eval.identity_violations().len();
    let mut times = log.times().to_vec();
    times.push(spec.horizon());
    let lemma_violations = if a.n <= 10_000 {
        view.lemma_violations(&times)?
    } else {
        view.lemma_violations(&[spec.horizon()])?
    };
    let summary = SimulateSummary {
        n: a.n,
        seed: a.seed,
        dynamics: log.kind(),
        horizon: spec.horizon(),
        events: log.len(),
        tied_times,
        identity_violations,
        lemma_violations,
    };
    write_json(&dir.join("simulate.json"), &summary)?;
    println!("{} events; wrote {}", log.len(), dir.display());
    if identity_violations + lemma_violations > 0 {
        bail!("exact identities failed: {identity_violations} lattice points, {lemma_violations} positions");
    }
    Ok(Verdict::Pass)
}

fn cmd_sweep(
    cli: &Cli,
    path: &Path,
    o: &PlanOverrides,
    flow_driven: bool,
    theta: Theta,
) -> anyhow::Result<Verdict> {
    let plan = load_plan(path, o)?;
    let dir = out_dir(cli, plan.output_dir.as_deref(), "srp-out")?;
    let rep = if flow_driven {
        let flow = theta_for(theta, &plan.spec, &plan.solver, &dir)?;
        flow_driven_sweep(&plan, &flow)?
    } else {
        let limit = solve_limit(
            &plan.spec,
            &plan.solver,
            Some(&cache_path(&dir, &plan.spec)),
        )?;
        convergence_sweep(&plan, &limit)?
    };
    let stem = if flow_driven { "flow-sweep" } else { "sweep" };
    write_with(&dir.join(format!("{stem}.csv")), |w| rep.write_rows_csv(w))?;
    write_json(&dir.join(format!("{stem}.json")), &rep)?;
    for s in &rep.series {
        let means: Vec<String> = s
            .levels
            .iter()
            .map(|l| format!("{}:{:.4}", l.n, l.stats.mean))
            .collect();
        println!(
            "{}: [{}] slope {}",
            s.series,
            means.join(" "),
            s.slope
                .map_or("n/a".to_string(), |f| format!("{:.3}", f.slope))
        );
    }
    println!("{}", if rep.pass { "PASS" } else { "FAIL" });
    Ok(rep.pass.into())
}

fn cmd_couple(cli: &Cli, path: &Path, o: &PlanOverrides, theta: Theta) -> anyhow::Result<Verdict> {
    let plan = load_plan(path, o)?;
    let dir = out_dir(cli, plan.output_dir.as_deref(), "srp-out")?;
    let flow = theta_for(theta, &plan.spec, &plan.solver, &dir)?;
    let rep = coupling_sweep(&plan, &flow)?;
    write_with(&dir.join("couple.csv"), |w| rep.write_rows_csv(w))?;
    write_json(&dir.join("couple.json"), &rep)?;
    for l in &rep.levels {
        println!(
            "N={}: decoupled fraction {:.5} ± {:.5}",
            l.n, l.stats.mean, l.stats.se
        );
    }
    println!("{}", if rep.pass { "PASS" } else { "FAIL" });
    Ok(rep.pass.into())
}

fn cmd_tagged(
    cli: &Cli,
    path: &Path,
    o: &PlanOverrides,
    positions: &[f64],
    class: usize,
) -> anyhow::Result<Verdict> {
    let plan = load_plan(path, o)?;
    let dir = out_dir(cli, plan.output_dir.as_deref(), "srp-out")?;
    let limit = solve_limit(
        &plan.spec,
        &plan.solver,
        Some(&cache_path(&dir, &plan.spec)),
    )?;
    let opts = TaggedOptions {
        positions: positions.to_vec(),
        class,
    };
    let rep = tagged_compare(&plan, &limit, &opts)?;
    write_with(&dir.join("tagged.csv"), |w| rep.write_rows_csv(w))?;
    write_json(&dir.join("tagged.json"), &rep)?;
    for t in &rep.tags {
        let means: Vec<String> = t
            .levels
            .iter()
            .map(|l| format!("{}:{:.4}", l.n, l.stats.mean))
            .collect();
        println!("tag {}: sup gap [{}]", t.tag, means.join(" "));
    }
    if let Some(c) = rep.correlation {
        println!(
            "jump-count correlation at N={}: {:.3} (SE {:.3})",
            c.n, c.r, c.se
        );
    }
    println!("{}", if rep.pass { "PASS" } else { "FAIL" });
    Ok(rep.pass.into())
}

fn cmd_latp(cli: &Cli, a: &LatpArgs) -> anyhow::Result<Verdict> {
    let dir = out_dir(cli, None, "srp-out")?;
    let (horizon, mut cases) = match &a.spec {
        Some(path) => {
            let spec = load_spec(path).with_context(|| format!("loading {}", path.display()))?;
            let limit = solve_limit(
                &spec,
                &SolverOptions::default(),
                Some(&cache_path(&dir, &spec)),
            )?;
            let h = spec.horizon();
            (h, vec![flow_case(&spec, &limit, a.class, a.z)?])
        }
        None => (a.horizon, Vec::new()),
    };
    let mut all = closed_form_cases(horizon);
    all.append(&mut cases);
    let opts = LatpOptions {
        m: a.m,
        kmax: a.kmax,
        replicas: a.replicas,
        lattice: a.lattice,
        seed: a.seed,
    };
    let rep = latp_validation(&all, horizon, &opts)?;
    write_with(&dir.join("latp.csv"), |w| rep.write_rows_csv(w))?;
    write_json(&dir.join("latp.json"), &rep)?;
    for c in &rep.cases {
        println!(
            "{}: series gap {:.2e} (tol {:.2e}), max MC z {:.2} {}",
            c.case,
            c.max_series_gap,
            c.series_tol,
            c.max_mc_z,
            if c.pass { "ok" } else { "FAIL" }
        );
    }
    println!("{}", if rep.pass { "PASS" } else { "FAIL" });
    Ok(rep.pass.into())
}
