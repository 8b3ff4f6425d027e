//! N-sweeps: convergence of `φ^N` to the limit, the flow-driven variant,
//! and decoupling of the coupled pair.

use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;

use super::plan::ExperimentPlan;
use super::stats::{decrease_check, mean_se, ols, pooled_se, DecreaseCheck, MeanSe, SlopeFit};
use crate::error::{Error, Result};
use crate::flow::{solve_y_c, BoundaryPoint, FlowGrid, LimitSolution, PhiTable, SolverOptions};
use crate::intensity::{assign_population, PopulationSpec};
use crate::measure::{curve_distance, sup_distance, LogView, SupDistance};
use crate::srp::{simulate, simulate_coupled, simulate_flow_driven, EventLog, LogKind, StreamMode};

/// Largest fitted log-log slope accepted as convergence.
pub const SLOPE_THRESHOLD: f64 = -0.3;

/// Name of the series holding `sup |Y^N_C - θ|` in flow-driven reports.
pub const CURVE_SERIES: &str = "curve";

/// Solves `y_C`, reusing a cached flow under `cache` when one exists for
/// the same spec and resolution.
pub fn solve_limit(
    spec: &PopulationSpec<f64>,
    opts: &SolverOptions,
    cache: Option<&Path>,
) -> Result<LimitSolution<f64>> {
    let fp = spec.fingerprint();
    if let Some(path) = cache {
        if path.exists() {
            match FlowGrid::load_cache(path, fp, opts.resolution) {
                Ok(flow) => {
                    let sol = LimitSolution::from_flow(spec, flow)?;
                    if sol.residual() < opts.tol {
                        log::info!("loaded cached flow from {}", path.display());
                        return Ok(sol);
                    }
                    log::warn!(
                        "cached flow at {} has residual {:e}; re-solving",
                        path.display(),
                        sol.residual()
                    );
                }
                Err(e) => log::warn!("ignoring cache {}: {e}", path.display()),
            }
        }
    }
    let sol = solve_y_c(spec, opts)?;
    if let Some(path) = cache {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        sol.flow().save_cache(path, fp)?;
    }
    Ok(sol)
}

/// One `(N, seed, series)` distance.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ReplicaRow {
    pub n: usize,
    pub seed_index: usize,
    pub seed: u64,
    pub series: String,
    pub distance: f64,
    pub gamma: BoundaryPoint,
    pub t: f64,
    pub resolution: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Level {
    pub n: usize,
    #[serde(flatten)]
    pub stats: MeanSe,
}

/// Aggregate of one series over the `N` sweep.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SeriesSummary {
    pub series: String,
    pub levels: Vec<Level>,
    /// Fit of `ln(mean)` against `ln N`; absent if a mean is not positive.
    pub slope: Option<SlopeFit>,
    pub decrease: DecreaseCheck,
    /// Strict decrease, endpoint drop beyond 2 pooled SE, slope at most
    /// [`SLOPE_THRESHOLD`].
    pub converges: bool,
}

/// Verdict that a series does *not* go to zero.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct PlateauCheck {
    /// `min_N (mean - 2 SE)`.
    pub floor: f64,
    /// Endpoint drop in pooled-SE units.
    pub endpoint_z: f64,
    /// Floor positive and no endpoint drop beyond 2 pooled SE.
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ConvergenceReport {
    pub kind: LogKind,
    pub spec_hash: u64,
    /// Lattice points (over all replicas) where the exact curve/φ identity
    /// failed; expected 0.
    pub identity_violations: usize,
    pub series: Vec<SeriesSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plateau: Option<PlateauCheck>,
    pub pass: bool,
    #[serde(skip)]
    pub rows: Vec<ReplicaRow>,
}

impl ConvergenceReport {
    /// Aggregates raw rows. Flow-driven reports expect the curve series to
    /// plateau and every other series to converge.
    pub fn summarize(
        kind: LogKind,
        spec_hash: u64,
        identity_violations: usize,
        rows: Vec<ReplicaRow>,
    ) -> Self {
        let mut names: Vec<String> = Vec::new();
        for r in &rows {
            if !names.contains(&r.series) {
                names.push(r.series.clone());
            }
        }
        let mut series = Vec::new();
        let mut plateau = None;
        for name in names {
            let mut ns: Vec<usize> = rows
                .iter()
                .filter(|r| r.series == name)
                .map(|r| r.n)
                .collect();
            ns.sort_unstable();
            ns.dedup();
            let levels: Vec<Level> = ns
                .iter()
                .map(|&n| {
                    let xs: Vec<f64> = rows
                        .iter()
                        .filter(|r| r.series == name && r.n == n)
                        .map(|r| r.distance)
                        .collect();
                    Level {
                        n,
                        stats: mean_se(&xs),
                    }
                })
                .collect();
            let stats: Vec<MeanSe> = levels.iter().map(|l| l.stats).collect();
            let slope = if stats.iter().all(|s| s.mean > 0.0) {
                let x: Vec<f64> = levels.iter().map(|l| (l.n as f64).ln()).collect();
                let y: Vec<f64> = stats.iter().map(|s| s.mean.ln()).collect();
                ols(&x, &y, 0.95)
            } else {
                None
            };
            let decrease = decrease_check(&stats);
            let converges = decrease.strictly_decreasing
                && decrease.significant
                && slope.is_some_and(|f| f.slope <= SLOPE_THRESHOLD);
            if kind == LogKind::FlowDriven && name == CURVE_SERIES {
                let floor = stats
                    .iter()
                    .map(|s| s.mean - 2.0 * s.se)
                    .fold(f64::INFINITY, f64::min);
                plateau = Some(PlateauCheck {
                    floor,
                    endpoint_z: decrease.endpoint_z,
                    pass: floor > 0.0 && !(decrease.endpoint_z > 2.0),
                });
            }
            series.push(SeriesSummary {
                series: name,
                levels,
                slope,
                decrease,
                converges,
            });
        }
        let pass = identity_violations == 0
            && series
                .iter()
                .filter(|s| !(kind == LogKind::FlowDriven && s.series == CURVE_SERIES))
                .all(|s| s.converges)
            && plateau.is_none_or(|p| p.pass);
        Self {
            kind,
            spec_hash,
            identity_violations,
            series,
            plateau,
            pass,
            rows,
        }
    }

    pub fn series(&self, name: &str) -> Option<&SeriesSummary> {
        self.series.iter().find(|s| s.series == name)
    }

    /// Raw rows as CSV.
    pub fn write_rows_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "n,seed_index,seed,series,distance,gamma_tag,gamma_coord,t,resolution"
        )?;
        for r in &self.rows {
            let (tag, coord) = gamma_parts(r.gamma);
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.n, r.seed_index, r.seed, r.series, r.distance, tag, coord, r.t, r.resolution
            )?;
        }
        Ok(())
    }

    /// Parses rows written by [`write_rows_csv`](Self::write_rows_csv).
    pub fn read_rows_csv<R: BufRead>(input: R) -> Result<Vec<ReplicaRow>> {
        let mut rows = Vec::new();
        for (i, line) in input.lines().enumerate().skip(1) {
            let line = line?;
            let bad = |what: &str| Error::Format(format!("rows csv line {}: bad {what}", i + 1));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(bad("field count"));
            }
            let num = |k: usize, what: &str| f[k].parse::<f64>().map_err(|_| bad(what));
            let coord = num(6, "gamma_coord")?;
            rows.push(ReplicaRow {
                n: f[0].parse().map_err(|_| bad("n"))?,
                seed_index: f[1].parse().map_err(|_| bad("seed_index"))?,
                seed: f[2].parse().map_err(|_| bad("seed"))?,
                series: f[3].to_string(),
                distance: num(4, "distance")?,
                gamma: match f[5] {
                    "initial" => BoundaryPoint::Initial(coord),
                    "boundary" => BoundaryPoint::Boundary(coord),
                    _ => return Err(bad("gamma_tag")),
                },
                t: num(7, "t")?,
                resolution: num(8, "resolution")?,
            });
        }
        Ok(rows)
    }
}

pub(crate) fn gamma_parts(g: BoundaryPoint) -> (&'static str, f64) {
    match g {
        BoundaryPoint::Initial(z) => ("initial", z),
        BoundaryPoint::Boundary(t) => ("boundary", t),
    }
}

/// Runs `f` for every `(N, seed index)` in parallel; results come back in
/// plan order.
pub(crate) fn for_replicas<T: Send>(
    plan: &ExperimentPlan,
    f: impl Fn(usize, usize, u64) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let jobs: Vec<(usize, usize)> = plan
        .ns
        .iter()
        .flat_map(|&n| (0..plan.seeds).map(move |s| (n, s)))
        .collect();
    jobs.par_iter()
        .map(|&(n, s)| f(n, s, plan.replica_seed(n, s)))
        .collect()
}

fn row(n: usize, s: usize, seed: u64, series: String, d: SupDistance) -> ReplicaRow {
    ReplicaRow {
        n,
        seed_index: s,
        seed,
        series,
        distance: d.value,
        gamma: d.gamma,
        t: d.t,
        resolution: d.resolution,
    }
}

fn distances(
    plan: &ExperimentPlan,
    log: &EventLog,
    phi: &PhiTable<f64>,
    theta: Option<&FlowGrid<f64>>,
    (n, s, seed): (usize, usize, u64),
) -> Result<(usize, Vec<ReplicaRow>)> {
    let eval = LogView::new(log).evaluate(&plan.lattice, plan.spec.class_count())?;
    let violations = eval.identity_violations().len();
    let mut rows = Vec::with_capacity(plan.test_functions.len() + 1);
    for h in &plan.test_functions {
        let d = sup_distance(&eval, &plan.spec, phi, h)?;
        rows.push(row(n, s, seed, h.to_string(), d));
    }
    if let Some(theta) = theta {
        rows.push(row(
            n,
            s,
            seed,
            CURVE_SERIES.to_string(),
            curve_distance(&eval, theta)?,
        ));
    }
    Ok((violations, rows))
}

fn collect(
    kind: LogKind,
    plan: &ExperimentPlan,
    parts: Vec<(usize, Vec<ReplicaRow>)>,
) -> ConvergenceReport {
    let violations = parts.iter().map(|p| p.0).sum();
    let rows = parts.into_iter().flat_map(|p| p.1).collect();
    ConvergenceReport::summarize(kind, plan.spec.fingerprint(), violations, rows)
}

/// Simulates the original process for every `(N, seed)` and measures the
/// lattice sup-distance of `φ^N(h)` to `φ_{y_C}(h)` for each test function.
pub fn convergence_sweep(
    plan: &ExperimentPlan,
    limit: &LimitSolution<f64>,
) -> Result<ConvergenceReport> {
    check_limit(plan, limit)?;
    let parts = for_replicas(plan, |n, s, seed| {
        let a = assign_population(&plan.spec, n, plan.assignment, seed)?;
        let log = simulate(&plan.spec, &a, seed, StreamMode::Superposition)?;
        distances(plan, &log, limit.phi_table(), None, (n, s, seed))
    })?;
    Ok(collect(LogKind::Original, plan, parts))
}

/// As [`convergence_sweep`] for the flow-driven process under `θ`, measured
/// against `φ_θ`; the extra `curve` series is `sup |Y^{N,θ}_C - θ|`.
pub fn flow_driven_sweep(
    plan: &ExperimentPlan,
    theta: &FlowGrid<f64>,
) -> Result<ConvergenceReport> {
    let phi = PhiTable::build(&plan.spec, theta)?;
    let parts = for_replicas(plan, |n, s, seed| {
        let a = assign_population(&plan.spec, n, plan.assignment, seed)?;
        let log = simulate_flow_driven(&plan.spec, &a, theta, seed, StreamMode::Superposition)?;
        distances(plan, &log, &phi, Some(theta), (n, s, seed))
    })?;
    Ok(collect(LogKind::FlowDriven, plan, parts))
}

fn check_limit(plan: &ExperimentPlan, limit: &LimitSolution<f64>) -> Result<()> {
    let fp = plan.spec.fingerprint();
    if limit.fingerprint() != fp {
        return Err(Error::SpecMismatch {
            left: limit.fingerprint(),
            right: fp,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CouplingRow {
    pub n: usize,
    pub seed_index: usize,
    pub seed: u64,
    pub decoupled: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CouplingReport {
    pub spec_hash: u64,
    pub position_independent: bool,
    pub levels: Vec<Level>,
    pub decrease: DecreaseCheck,
    /// Position-independent specs: every fraction exactly 0. Otherwise:
    /// no level rises beyond 2 pooled SE over its predecessor and the
    /// endpoint drop exceeds 2 pooled SE.
    pub pass: bool,
    #[serde(skip)]
    pub rows: Vec<CouplingRow>,
}

impl CouplingReport {
    pub fn write_rows_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "n,seed_index,seed,decoupled,fraction")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.n, r.seed_index, r.seed, r.decoupled, r.fraction
            )?;
        }
        Ok(())
    }
}

/// Decoupled fraction `#{i : σ_i <= T}/N` of the original/flow-driven pair
/// under `θ`, per `(N, seed)`.
pub fn coupling_sweep(plan: &ExperimentPlan, theta: &FlowGrid<f64>) -> Result<CouplingReport> {
    let rows = for_replicas(plan, |n, s, seed| {
        let a = assign_population(&plan.spec, n, plan.assignment, seed)?;
        let (_, _, rec) = simulate_coupled(&plan.spec, &a, theta, seed)?;
        Ok(CouplingRow {
            n,
            seed_index: s,
            seed,
            decoupled: rec.decoupled_count(),
            fraction: rec.decoupled_fraction(),
        })
    })?;
    let levels: Vec<Level> = plan
        .ns
        .iter()
        .map(|&n| {
            let xs: Vec<f64> = rows
                .iter()
                .filter(|r| r.n == n)
                .map(|r| r.fraction)
                .collect();
            Level {
                n,
                stats: mean_se(&xs),
            }
        })
        .collect();
    let stats: Vec<MeanSe> = levels.iter().map(|l| l.stats).collect();
    let decrease = decrease_check(&stats);
    let position_independent = plan.spec.is_position_independent();
    let pass = if position_independent {
        rows.iter().all(|r| r.decoupled == 0)
    } else {
        let no_rise = stats
            .windows(2)
            .all(|w| w[1].mean - w[0].mean <= 2.0 * pooled_se(&w[0], &w[1]));
        no_rise && decrease.significant
    };
    Ok(CouplingReport {
        spec_hash: plan.spec.fingerprint(),
        position_independent,
        levels,
        decrease,
        pass,
        rows,
    })
}
