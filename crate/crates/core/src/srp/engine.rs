//! Exact thinning simulation of the ranking process.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::index::RankIndex;
use super::log::{EventLog, LogKind};
use crate::error::{Error, Result};
use crate::flow::{BoundaryPoint, FlowGrid};
use crate::intensity::{PopulationAssignment, PopulationSpec};
use crate::stream::{Candidate, CandidateStream, Superposition};

/// Relative slack allowed above the envelope before acceptance is a fault.
const ENVELOPE_SLACK: f64 = 1e-12;

/// How candidates are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StreamMode {
    /// One global clock at rate `Σ M_i`, particle drawn proportionally to
    /// `M_i`.
    #[default]
    Superposition,
    /// One stream per particle (stream id = particle index), merged by time.
    /// A particle's candidates then do not depend on `N`, which the coupled
    /// and tagged experiments rely on.
    PerParticle,
}

/// Per-particle decoupling times of a coupled run.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CouplingRecord {
    /// First candidate time accepted by exactly one of the two models;
    /// `None` when the two jump sequences agree on `[0, T]`.
    pub sigma: Vec<Option<f64>>,
}

impl CouplingRecord {
    pub fn decoupled_count(&self) -> usize {
        self.sigma.iter().filter(|s| s.is_some()).count()
    }

    /// `#{i : σ_i <= T} / N`.
    pub fn decoupled_fraction(&self) -> f64 {
        self.decoupled_count() as f64 / self.sigma.len() as f64
    }
}

/// Live state of one system: ranks plus last reset points.
#[derive(Debug, Clone)]
pub struct ParticleSystem {
    index: RankIndex,
    classes: Vec<u32>,
    initial: Vec<f64>,
    last_jump: Vec<f64>,
}

impl ParticleSystem {
    pub fn new(assignment: &PopulationAssignment) -> Result<Self> {
        let n = assignment.n();
        Ok(Self {
            index: RankIndex::new(assignment.slots())?,
            classes: assignment.classes().to_vec(),
            initial: (0..n).map(|i| assignment.position(i)).collect(),
            last_jump: vec![f64::NAN; n],
        })
    }

    pub fn n(&self) -> usize {
        self.classes.len()
    }

    pub fn rank_of(&self, particle: usize) -> Result<u32> {
        self.index.rank_of(particle)
    }

    /// `Y_i = r_i / N`.
    pub fn position(&self, particle: usize) -> Result<f64> {
        Ok(self.rank_of(particle)? as f64 / self.n() as f64)
    }

    /// Last reset point: the initial point before the first jump, the
    /// boundary point of the last jump afterwards.
    pub fn gamma(&self, particle: usize) -> BoundaryPoint {
        let t = self.last_jump[particle];
        if t.is_nan() {
            BoundaryPoint::Initial(self.initial[particle])
        } else {
            BoundaryPoint::Boundary(t)
        }
    }

    /// Moves `particle` to the top at time `t`; returns its pre-jump rank.
    pub fn move_to_front(&mut self, particle: usize, t: f64) -> Result<u32> {
        let r = self.index.move_to_front(particle)?;
        self.last_jump[particle] = t;
        Ok(r)
    }

    pub fn ranks(&self) -> Vec<u32> {
        self.index.ranks()
    }
}

/// Where the hazard of a particle is evaluated.
#[derive(Debug, Clone, Copy)]
enum Policy<'a> {
    /// At the particle's own position `Y_i(s-)`.
    Original,
    /// Along `θ` from its last reset point.
    FlowDriven(&'a FlowGrid<f64>),
}

impl Policy<'_> {
    fn kind(&self) -> LogKind {
        match self {
            Policy::Original => LogKind::Original,
            Policy::FlowDriven(_) => LogKind::FlowDriven,
        }
    }

    fn argument(&self, sys: &ParticleSystem, i: usize, t: f64) -> Result<f64> {
        match self {
            Policy::Original => sys.position(i),
            Policy::FlowDriven(theta) => Ok(theta.value_unchecked(sys.gamma(i), t).clamp(0.0, 1.0)),
        }
    }
}

struct Model<'a> {
    spec: &'a PopulationSpec<f64>,
    envelopes: Vec<f64>,
    policy: Policy<'a>,
    sys: ParticleSystem,
    log: EventLog,
}

impl<'a> Model<'a> {
    fn new(
        spec: &'a PopulationSpec<f64>,
        assignment: &PopulationAssignment,
        policy: Policy<'a>,
    ) -> Result<Self> {
        check_assignment(spec, assignment)?;
        if let Policy::FlowDriven(theta) = policy {
            if theta.horizon() != spec.horizon() {
                return Err(Error::domain(
                    "flow",
                    format!(
                        "flow horizon {} differs from spec horizon {}",
                        theta.horizon(),
                        spec.horizon()
                    ),
                ));
            }
        }
        Ok(Self {
            spec,
            envelopes: envelopes(spec, assignment),
            policy,
            sys: ParticleSystem::new(assignment)?,
            log: EventLog::start(
                policy.kind(),
                spec.horizon(),
                spec.fingerprint(),
                assignment,
            ),
        })
    }

    /// Decides a candidate for particle `i`; a breach of the envelope is a
    /// hard fault.
    fn accepts(&self, i: usize, c: Candidate) -> Result<bool> {
        let y = self.policy.argument(&self.sys, i, c.time)?;
        let k = self.sys.classes[i] as usize;
        let rate = self.spec.classes()[k].field.rate(y, c.time);
        let m = self.envelopes[i];
        if rate > m * (1.0 + ENVELOPE_SLACK) || !rate.is_finite() {
            return Err(Error::EnvelopeBreach {
                rate,
                envelope: m,
                time: c.time,
            });
        }
        Ok(c.mark < rate)
    }

    fn jump(&mut self, i: usize, t: f64) -> Result<()> {
        let r = self.sys.move_to_front(i, t)?;
        self.log.push(t, i as u32, r);
        Ok(())
    }
}

fn check_assignment(spec: &PopulationSpec<f64>, a: &PopulationAssignment) -> Result<()> {
    if let Some(&k) = a
        .classes()
        .iter()
        .find(|&&k| k as usize >= spec.class_count())
    {
        return Err(Error::domain(
            "assignment",
            format!("class index {k} out of range"),
        ));
    }
    Ok(())
}

/// `M_i = ‖w_i‖`.
fn envelopes(spec: &PopulationSpec<f64>, a: &PopulationAssignment) -> Vec<f64> {
    a.classes()
        .iter()
        .map(|&k| spec.classes()[k as usize].field.sup_norm())
        .collect()
}

/// Heap entry ordered so that `BinaryHeap` pops the earliest time first,
/// ties by particle index.
#[derive(Debug, Clone, Copy)]
struct Pending {
    time: f64,
    particle: usize,
    mark: f64,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.particle.cmp(&self.particle))
    }
}

/// Per-particle streams merged by time.
struct Merged {
    streams: Vec<CandidateStream>,
    heap: BinaryHeap<Pending>,
}

impl Merged {
    fn new(seed: u64, rates: &[f64]) -> Result<Self> {
        let mut streams = Vec::with_capacity(rates.len());
        let mut heap = BinaryHeap::with_capacity(rates.len());
        for (i, &r) in rates.iter().enumerate() {
            let mut s = CandidateStream::new(seed, i as u64, r)?;
            if let Some(c) = s.next_candidate() {
                heap.push(Pending {
                    time: c.time,
                    particle: i,
                    mark: c.mark,
                });
            }
            streams.push(s);
        }
        Ok(Self { streams, heap })
    }

    fn next_candidate(&mut self) -> Option<(usize, Candidate)> {
        let p = self.heap.pop()?;
        if let Some(c) = self.streams[p.particle].next_candidate() {
            self.heap.push(Pending {
                time: c.time,
                particle: p.particle,
                mark: c.mark,
            });
        }
        Some((
            p.particle,
            Candidate {
                time: p.time,
                mark: p.mark,
            },
        ))
    }
}

#[allow(clippy::large_enum_variant)]
enum Source {
    Global(Superposition),
    Merged(Merged),
}

impl Source {
    fn new(mode: StreamMode, seed: u64, rates: &[f64]) -> Result<Self> {
        Ok(match mode {
            StreamMode::Superposition => Source::Global(Superposition::new(seed, rates.to_vec())?),
            StreamMode::PerParticle => Source::Merged(Merged::new(seed, rates)?),
        })
    }

    fn next_candidate(&mut self) -> Option<(usize, Candidate)> {
        match self {
            Source::Global(s) => s.next_candidate(),
            Source::Merged(m) => m.next_candidate(),
        }
    }
}

fn run(mut model: Model<'_>, seed: u64, mode: StreamMode) -> Result<EventLog> {
    let horizon = model.spec.horizon();
    let mut source = Source::new(mode, seed, &model.envelopes)?;
    let mut prev = f64::NEG_INFINITY;
    let mut ties = 0usize;
    while let Some((i, c)) = source.next_candidate() {
        if c.time > horizon {
            break;
        }
        if c.time == prev {
            ties += 1;
        }
        prev = c.time;
        if model.accepts(i, c)? {
            model.jump(i, c.time)?;
        }
    }
    if ties > 0 {
        log::warn!("{ties} candidates shared a time stamp; resolved in stream order");
    }
    Ok(model.log)
}

/// Simulates the original process up to the spec horizon.
pub fn simulate(
    spec: &PopulationSpec<f64>,
    assignment: &PopulationAssignment,
    seed: u64,
    mode: StreamMode,
) -> Result<EventLog> {
    run(Model::new(spec, assignment, Policy::Original)?, seed, mode)
}

/// Simulates the flow-driven process: hazards are evaluated at
/// `θ(γ_i(s-), s)` instead of the particle's position.
pub fn simulate_flow_driven(
    spec: &PopulationSpec<f64>,
    assignment: &PopulationAssignment,
    theta: &FlowGrid<f64>,
    seed: u64,
    mode: StreamMode,
) -> Result<EventLog> {
    run(
        Model::new(spec, assignment, Policy::FlowDriven(theta))?,
        seed,
        mode,
    )
}

/// Runs both models on the same per-particle candidate streams and records
/// when each particle first sees the two models disagree.
pub fn simulate_coupled(
    spec: &PopulationSpec<f64>,
    assignment: &PopulationAssignment,
    theta: &FlowGrid<f64>,
    seed: u64,
) -> Result<(EventLog, EventLog, CouplingRecord)> {
    let mut original = Model::new(spec, assignment, Policy::Original)?;
    let mut driven = Model::new(spec, assignment, Policy::FlowDriven(theta))?;
    let horizon = spec.horizon();
    let mut source = Merged::new(seed, &original.envelopes)?;
    let mut sigma = vec![None; assignment.n()];
    while let Some((i, c)) = source.next_candidate() {
        if c.time > horizon {
            break;
        }
        let a = original.accepts(i, c)?;
        let b = driven.accepts(i, c)?;
        if a != b && sigma[i].is_none() {
            sigma[i] = Some(c.time);
        }
        if a {
            original.jump(i, c.time)?;
        }
        if b {
            driven.jump(i, c.time)?;
        }
    }
    Ok((original.log, driven.log, CouplingRecord { sigma }))
}
