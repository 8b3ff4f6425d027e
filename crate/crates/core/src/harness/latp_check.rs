//! Three-way check of survival probabilities: Volterra solve, series and
//! Monte Carlo.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::{tilde_w, LimitSolution};
use crate::intensity::PopulationSpec;
use crate::latp::{
    default_envelope, derivative_bound_check, sample_arrivals, survival_series, survival_solve,
    uniform_grid, DerivativeReport, LatpIntensity,
};
use crate::stream::derive_seed;

/// A named hazard kernel on `[0, T]`.
#[derive(Debug, Clone)]
pub struct LatpCase {
    pub name: String,
    pub omega: LatpIntensity<f64>,
}

impl LatpCase {
    pub fn new(name: impl Into<String>, omega: LatpIntensity<f64>) -> Self {
        Self {
            name: name.into(),
            omega,
        }
    }
}

/// `ω ≡ 0`, `ω ≡ 2` and `ω(s,t) = 1 + s` on `[0, T]`.
pub fn closed_form_cases(horizon: f64) -> Vec<LatpCase> {
    vec![
        LatpCase::new("zero", LatpIntensity::zero()),
        LatpCase::new("constant-2", LatpIntensity::constant(2.0)),
        LatpCase::new(
            "one-plus-s",
            LatpIntensity::from_fn(|s, _| 1.0 + s, 1.0 + horizon),
        ),
    ]
}

/// Kernel seen by a class-`class` particle started at `z` when positions
/// follow the solved flow.
pub fn flow_case(
    spec: &PopulationSpec<f64>,
    limit: &LimitSolution<f64>,
    class: usize,
    z: f64,
) -> Result<LatpCase> {
    let field = &spec
        .classes()
        .get(class)
        .ok_or_else(|| Error::domain("class", format!("no class {class}")))?
        .field;
    Ok(LatpCase::new(
        format!("flow-class{class}-z{z}"),
        tilde_w(limit.flow(), field, z),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatpOptions {
    /// Grid intervals of the Volterra solve, `h = T/m`.
    pub m: usize,
    /// Series truncation.
    pub kmax: usize,
    pub replicas: usize,
    /// Lattice nodes per axis, `{0, T/(k-1), ..., T}`, pairs `s <= t`.
    pub lattice: usize,
    pub seed: u64,
}

impl Default for LatpOptions {
    fn default() -> Self {
        Self {
            m: 400,
            kmax: 25,
            replicas: 10_000,
            lattice: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct LatpRow {
    pub case: String,
    pub s: f64,
    pub t: f64,
    pub solve: f64,
    pub series: f64,
    pub mc: f64,
    /// `√(p(1-p)/R)` with `p` from the solve.
    pub mc_se: f64,
    pub series_ok: bool,
    pub mc_ok: bool,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct LatpCaseSummary {
    pub case: String,
    pub max_series_gap: f64,
    pub series_tol: f64,
    /// Largest `|mc - solve| / se` (0 where `se = 0` and the gap is 0).
    pub max_mc_z: f64,
    pub derivative: DerivativeReport,
    pub derivative_tol: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct LatpReport {
    pub h: f64,
    pub cases: Vec<LatpCaseSummary>,
    pub pass: bool,
    #[serde(skip)]
    pub rows: Vec<LatpRow>,
}

impl LatpReport {
    pub fn write_rows_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "case,s,t,solve,series,mc,mc_se,series_ok,mc_ok")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.case, r.s, r.t, r.solve, r.series, r.mc, r.mc_se, r.series_ok, r.mc_ok
            )?;
        }
        Ok(())
    }
}

/// Runs every case on the `(s, t)` lattice. Tolerances:
/// `|series - solve| <= 1e-5 + 5h²`, `|mc - solve| <= 4 SE`, and the
/// derivative bounds within `10h·max(1, ‖ω‖²)`.
pub fn latp_validation(cases: &[LatpCase], horizon: f64, opts: &LatpOptions) -> Result<LatpReport> {
    if opts.m == 0 || opts.lattice < 2 || opts.replicas == 0 {
        return Err(Error::domain(
            "latp validation",
            "m, replicas must be positive and lattice >= 2",
        ));
    }
    let h = horizon / opts.m as f64;
    let grid = uniform_grid(horizon, opts.m);
    if !opts.m.is_multiple_of(opts.lattice - 1) {
        return Err(Error::domain(
            "latp validation",
            "lattice nodes must fall on the solve grid",
        ));
    }
    let nodes: Vec<usize> = (0..opts.lattice)
        .map(|k| k * opts.m / (opts.lattice - 1))
        .collect();
    let pairs: Vec<(usize, usize)> = nodes
        .iter()
        .flat_map(|&i| nodes.iter().filter(move |&&j| j >= i).map(move |&j| (i, j)))
        .collect();
    let series_tol = 1e-5 + 5.0 * h * h;
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for (ci, case) in cases.iter().enumerate() {
        let omega = &case.omega;
        let table = survival_solve(omega, &grid)?;
        let series: Vec<f64> = pairs
            .par_iter()
            .map(|&(i, j)| survival_series(omega, grid[i], grid[j], opts.kmax, h))
            .collect::<Result<_>>()?;
        let survived = monte_carlo(omega, horizon, &grid, &pairs, opts, ci as u64)?;
        let mut max_gap = 0.0f64;
        let mut max_z = 0.0f64;
        let mut ok = true;
        for (k, &(i, j)) in pairs.iter().enumerate() {
            let p = table.get(i, j);
            let mc = survived[k] as f64 / opts.replicas as f64;
            let se = (p * (1.0 - p) / opts.replicas as f64).max(0.0).sqrt();
            let gap = (series[k] - p).abs();
            let mc_gap = (mc - p).abs();
            let series_ok = gap <= series_tol;
            let mc_ok = mc_gap <= 4.0 * se + 1e-12;
            max_gap = max_gap.max(gap);
            let z = if se > 0.0 {
                mc_gap / se
            } else if mc_gap > 1e-12 {
                f64::INFINITY
            } else {
                0.0
            };
            max_z = max_z.max(z);
            ok &= series_ok && mc_ok;
            rows.push(LatpRow {
                case: case.name.clone(),
                s: grid[i],
                t: grid[j],
                solve: p,
                series: series[k],
                mc,
                mc_se: se,
                series_ok,
                mc_ok,
            });
        }
        let derivative = derivative_bound_check(&table, omega);
        let derivative_tol = 10.0 * h * omega.sup_norm().powi(2).max(1.0);
        let pass =
            ok && derivative.passes(derivative_tol) && table.invariant_violations(1e-12).is_empty();
        summaries.push(LatpCaseSummary {
            case: case.name.clone(),
            max_series_gap: max_gap,
            series_tol,
            max_mc_z: max_z,
            derivative,
            derivative_tol,
            pass,
        });
    }
    let pass = summaries.iter().all(|s| s.pass);
    Ok(LatpReport {
        h,
        cases: summaries,
        pass,
        rows,
    })
}

/// Survivor counts for each lattice pair over `replicas` sampled paths,
/// drawn in fixed-size chunks with derived seeds.
fn monte_carlo(
    omega: &LatpIntensity<f64>,
    horizon: f64,
    grid: &[f64],
    pairs: &[(usize, usize)],
    opts: &LatpOptions,
    case: u64,
) -> Result<Vec<u64>> {
    const CHUNK: usize = 1000;
    let chunks = opts.replicas.div_ceil(CHUNK);
    let envelope = default_envelope(omega);
    let parts: Vec<Vec<u64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, &[case, c as u64]));
            let mut counts = vec![0u64; pairs.len()];
            let len = CHUNK.min(opts.replicas - c * CHUNK);
            for _ in 0..len {
                let path = sample_arrivals(omega, horizon, envelope, &mut rng)?;
                for (k, &(i, j)) in pairs.iter().enumerate() {
                    if path.survives(grid[i], grid[j]) {
                        counts[k] += 1;
                    }
                }
            }
            Ok(counts)
        })
        .collect::<Result<_>>()?;
    let mut total = vec![0u64; pairs.len()];
    for p in parts {
        for (t, c) in total.iter_mut().zip(p) {
            *t += c;
        }
    }
    Ok(total)
}
