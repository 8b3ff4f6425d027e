//! Tagged particles against their limit dynamics.

use std::io::Write;

use rayon::prelude::*;

use super::plan::ExperimentPlan;
use super::stats::{decrease_check, mean_se, pearson, DecreaseCheck};
use super::sweep::Level;
use crate::error::{Error, Result};
use crate::flow::{tagged_limit_path, BoundaryPoint, FlowGrid, LimitSolution, TaggedPath};
use crate::intensity::{assign_population, PopulationAssignment};
use crate::srp::{simulate, EventLog, StreamMode};
use crate::stream::{derive_seed, CandidateStream};

/// Tagged-particle settings.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaggedOptions {
    /// Limit initial positions `y_i`, one per tagged particle.
    pub positions: Vec<f64>,
    /// Class of every tagged particle.
    #[serde(default)]
    pub class: usize,
}

impl Default for TaggedOptions {
    fn default() -> Self {
        Self {
            positions: vec![0.25, 0.75],
            class: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TaggedRow {
    pub n: usize,
    pub seed_index: usize,
    pub seed: u64,
    pub tag: usize,
    /// `y^N_i`.
    pub initial: f64,
    /// `sup_t |Y^N_i(t) - Y_i(t)|`.
    pub sup_diff: f64,
    pub jumps: usize,
    pub limit_jumps: usize,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TagSummary {
    pub tag: usize,
    pub levels: Vec<Level>,
    pub decrease: DecreaseCheck,
}

/// Correlation of the jump counts of tags 0 and 1 across seeds at the
/// largest `N`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct CorrelationCheck {
    pub n: usize,
    pub r: f64,
    /// `√((1 - r²)/(k - 2))` for `k` seeds.
    pub se: f64,
    /// `|r| <= 4 SE`.
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TaggedReport {
    pub tags: Vec<TagSummary>,
    /// Absent with fewer than two tags or when a count has no variance.
    pub correlation: Option<CorrelationCheck>,
    /// Tag 0 strictly decreasing with an endpoint drop beyond 2 pooled SE,
    /// and the correlation check when present.
    pub pass: bool,
    #[serde(skip)]
    pub rows: Vec<TaggedRow>,
}

impl TaggedReport {
    pub fn write_rows_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "n,seed_index,seed,tag,initial,sup_diff,jumps,limit_jumps"
        )?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.n, r.seed_index, r.seed, r.tag, r.initial, r.sup_diff, r.jumps, r.limit_jumps
            )?;
        }
        Ok(())
    }
}

/// Relabels particles so that particle `l` has the tagged class and the
/// slot closest to `positions[l] · N`.
pub fn place_tagged(a: &mut PopulationAssignment, class: usize, positions: &[f64]) -> Result<()> {
    let n = a.n();
    if positions.len() > n {
        return Err(Error::domain(
            "tagged",
            format!("{} tags for N = {n}", positions.len()),
        ));
    }
    for (l, &y) in positions.iter().enumerate() {
        if !(0.0..=1.0).contains(&y) {
            return Err(Error::domain(
                "tagged",
                format!("position {y} outside [0,1]"),
            ));
        }
        let best = (l..n)
            .filter(|&j| a.class_of(j) == class)
            .min_by(|&i, &j| {
                let di = (a.position(i) - y).abs();
                let dj = (a.position(j) - y).abs();
                di.total_cmp(&dj).then(a.slot_of(i).cmp(&a.slot_of(j)))
            })
            .ok_or_else(|| Error::Stream(format!("no free class-{class} particle for tag {l}")))?;
        a.swap_labels(l, best);
    }
    Ok(())
}

/// Exact `sup_t |Y^N_l(t) - Y_l(t)|`: between breakpoints the finite-`N`
/// position is constant and the limit position monotone, so both one-sided
/// values at each breakpoint suffice.
pub fn tagged_sup_diff(log: &EventLog, tag: usize, path: &TaggedPath, flow: &FlowGrid<f64>) -> f64 {
    let n = log.n() as f64;
    let limit = |t: f64, left: bool| {
        let k = if left {
            path.jumps.partition_point(|&s| s < t)
        } else {
            path.jumps.partition_point(|&s| s <= t)
        };
        let g = match k {
            0 => BoundaryPoint::Initial(path.y0),
            k => BoundaryPoint::Boundary(path.jumps[k - 1]),
        };
        flow.value_unchecked(g, t)
    };
    let mut rank = log.initial_slots()[tag] as f64;
    let mut sup = (rank / n - limit(0.0, false)).abs();
    let (times, particles, ranks) = (log.times(), log.particles(), log.pre_ranks());
    let mut breaks: Vec<f64> = times.iter().chain(&path.jumps).copied().collect();
    breaks.push(log.horizon());
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let mut e = 0;
    for &b in &breaks {
        sup = sup.max((rank / n - limit(b, true)).abs());
        while e < times.len() && times[e] <= b {
            if particles[e] as usize == tag {
                rank = 0.0;
            } else if ranks[e] as f64 > rank {
                rank += 1.0;
            }
            e += 1;
        }
        sup = sup.max((rank / n - limit(b, false)).abs());
    }
    sup
}

/// For each `(N, seed)`, simulates with per-particle streams and compares
/// every tagged particle with the limit path driven by the same stream.
/// Replica seeds depend only on the seed index, so each tagged particle
/// sees the same candidates at every `N`.
pub fn tagged_compare(
    plan: &ExperimentPlan,
    limit: &LimitSolution<f64>,
    opts: &TaggedOptions,
) -> Result<TaggedReport> {
    let spec = &plan.spec;
    let field = &spec
        .classes()
        .get(opts.class)
        .ok_or_else(|| Error::domain("tagged", format!("no class {}", opts.class)))?
        .field;
    if opts.positions.is_empty() {
        return Err(Error::domain("tagged", "no tagged positions"));
    }
    let flow = limit.flow();
    let jobs: Vec<(usize, usize)> = plan
        .ns
        .iter()
        .flat_map(|&n| (0..plan.seeds).map(move |s| (n, s)))
        .collect();
    let rows: Vec<Vec<TaggedRow>> = jobs
        .par_iter()
        .map(|&(n, s)| {
            let seed = derive_seed(plan.base_seed, &[s as u64]);
            let mut a = assign_population(spec, n, plan.assignment, seed)?;
            place_tagged(&mut a, opts.class, &opts.positions)?;
            let log = simulate(spec, &a, seed, StreamMode::PerParticle)?;
            let mut out = Vec::with_capacity(opts.positions.len());
            for (l, &y) in opts.positions.iter().enumerate() {
                let mut stream = CandidateStream::new(seed, l as u64, field.sup_norm())?;
                let path = tagged_limit_path(flow, field, y, &mut stream)?;
                out.push(TaggedRow {
                    n,
                    seed_index: s,
                    seed,
                    tag: l,
                    initial: a.position(l),
                    sup_diff: tagged_sup_diff(&log, l, &path, flow),
                    jumps: log.particles().iter().filter(|&&p| p as usize == l).count(),
                    limit_jumps: path.jumps.len(),
                });
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let rows: Vec<TaggedRow> = rows.into_iter().flatten().collect();
    let tags: Vec<TagSummary> = (0..opts.positions.len())
        .map(|l| {
            let levels: Vec<Level> = plan
                .ns
                .iter()
                .map(|&n| {
                    let xs: Vec<f64> = rows
                        .iter()
                        .filter(|r| r.n == n && r.tag == l)
                        .map(|r| r.sup_diff)
                        .collect();
                    Level {
                        n,
                        stats: mean_se(&xs),
                    }
                })
                .collect();
            let stats: Vec<_> = levels.iter().map(|l| l.stats).collect();
            TagSummary {
                tag: l,
                decrease: decrease_check(&stats),
                levels,
            }
        })
        .collect();
    let n_max = *plan.ns.last().expect("plan has N values");
    let correlation = if opts.positions.len() >= 2 {
        let counts = |tag: usize| -> Vec<f64> {
            rows.iter()
                .filter(|r| r.n == n_max && r.tag == tag)
                .map(|r| r.jumps as f64)
                .collect()
        };
        let (x, y) = (counts(0), counts(1));
        pearson(&x, &y).filter(|_| x.len() > 2).map(|r| {
            let se = ((1.0 - r * r) / (x.len() - 2) as f64).sqrt();
            CorrelationCheck {
                n: n_max,
                r,
                se,
                pass: r.abs() <= 4.0 * se,
            }
        })
    } else {
        None
    };
    let d = tags[0].decrease;
    let pass = d.strictly_decreasing && d.significant && correlation.is_none_or(|c| c.pass);
    Ok(TaggedReport {
        tags,
        correlation,
        pass,
        rows,
    })
}
