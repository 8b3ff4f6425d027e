//! Empirical objects recomputed from event logs: characteristic curves,
//! distribution functions, empirical measures and lattice sup-distances.
//!
//! Positions are compared in integer slot units wherever possible so that
//! the exact identities can be checked with zero tolerance.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::flow::{gamma_compare, BoundaryPoint, FlowGrid, PhiTable};
use crate::intensity::PopulationSpec;
use crate::srp::{EventLog, RankIndex};

/// Test function `h` on the rate family, reduced to one weight per class.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TestFunction {
    /// `h ≡ 1`.
    One,
    /// `h(w) = 1{w = w_k}`.
    ClassIndicator(usize),
    /// `h(w) = min(‖w‖, M)`.
    NormCapped(f64),
    /// One value per class.
    Tabulated(Vec<f64>),
}

impl TestFunction {
    /// `h(w_k)` for every class `k`.
    pub fn weights(&self, spec: &PopulationSpec<f64>) -> Result<Vec<f64>> {
        let k = spec.class_count();
        match self {
            TestFunction::One => Ok(vec![1.0; k]),
            TestFunction::ClassIndicator(c) => {
                if *c >= k {
                    return Err(Error::domain(
                        "test function",
                        format!("class {c} but the spec has {k} classes"),
                    ));
                }
                Ok((0..k).map(|j| if j == *c { 1.0 } else { 0.0 }).collect())
            }
            TestFunction::NormCapped(m) => Ok(spec
                .classes()
                .iter()
                .map(|cl| cl.field.sup_norm().min(*m))
                .collect()),
            TestFunction::Tabulated(v) => {
                if v.len() != k {
                    return Err(Error::domain(
                        "test function",
                        format!("{} values for {k} classes", v.len()),
                    ));
                }
                Ok(v.clone())
            }
        }
    }

    /// `C_h = max_k |h(w_k)|`.
    pub fn bound(&self, spec: &PopulationSpec<f64>) -> Result<f64> {
        Ok(self
            .weights(spec)?
            .iter()
            .fold(0.0f64, |a, h| a.max(h.abs())))
    }
}

impl fmt::Display for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TestFunction::One => write!(f, "one"),
            TestFunction::ClassIndicator(k) => write!(f, "class:{k}"),
            TestFunction::NormCapped(m) => write!(f, "norm-cap:{m}"),
            TestFunction::Tabulated(v) => {
                let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                write!(f, "table:{}", parts.join(","))
            }
        }
    }
}

impl FromStr for TestFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::domain("test function", format!("cannot parse `{s}`"));
        let s = s.trim();
        if s == "one" {
            return Ok(TestFunction::One);
        }
        let (head, rest) = s.split_once(':').ok_or_else(bad)?;
        match head {
            "class" => rest
                .parse()
                .map(TestFunction::ClassIndicator)
                .map_err(|_| bad()),
            "norm-cap" => {
                let m: f64 = rest.parse().map_err(|_| bad())?;
                if !(m >= 0.0) {
                    return Err(bad());
                }
                Ok(TestFunction::NormCapped(m))
            }
            "table" => rest
                .split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|_| bad()))
                .collect::<Result<Vec<_>>>()
                .map(TestFunction::Tabulated),
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for TestFunction {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TestFunction> for String {
    fn from(h: TestFunction) -> String {
        h.to_string()
    }
}

/// `⌈x⌉`, except that values within rounding noise of an integer snap to
/// it, so `N · (3/10)` counts as exactly `0.3 N`.
pub fn ceil_snap(x: f64) -> u64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r.max(0.0) as u64
    } else {
        x.ceil().max(0.0) as u64
    }
}

/// Slot threshold `c` of `γ`: particles with initial slot `>= c` lie at or
/// below `y₀`. Zero for boundary points.
pub fn threshold(n: usize, gamma: BoundaryPoint) -> u64 {
    match gamma {
        BoundaryPoint::Initial(z) => ceil_snap(n as f64 * z).min(n as u64),
        BoundaryPoint::Boundary(_) => 0,
    }
}

/// Test points `(γ, t)`; only admissible pairs `t >= t₀(γ)` are evaluated.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvaluationLattice {
    pub gammas: Vec<BoundaryPoint>,
    pub times: Vec<f64>,
}

/// Lattice sizes as written in plans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatticeSpec {
    /// Initial points `z = j/(initial-1)`.
    pub initial: usize,
    /// Boundary points `t₀ = T j/boundary`, `j = 1..=boundary`.
    pub boundary: usize,
    /// Times `t = T k/(times-1)`.
    pub times: usize,
}

impl Default for LatticeSpec {
    fn default() -> Self {
        Self {
            initial: 11,
            boundary: 10,
            times: 21,
        }
    }
}

impl EvaluationLattice {
    pub fn new(gammas: Vec<BoundaryPoint>, mut times: Vec<f64>, horizon: f64) -> Result<Self> {
        if gammas.is_empty() || times.is_empty() {
            return Err(Error::domain(
                "lattice",
                "needs at least one point and one time",
            ));
        }
        for g in &gammas {
            g.check(g.t0(), horizon)?;
        }
        if let Some(t) = times.iter().find(|t| !(0.0..=horizon).contains(*t)) {
            return Err(Error::domain(
                "lattice",
                format!("time {t} outside [0, {horizon}]"),
            ));
        }
        times.sort_by(f64::total_cmp);
        times.dedup();
        Ok(Self { gammas, times })
    }

    pub fn uniform(horizon: f64, spec: LatticeSpec) -> Result<Self> {
        if spec.initial < 2 || spec.times < 2 {
            return Err(Error::domain(
                "lattice",
                "at least two initial points and two times",
            ));
        }
        let mut gammas: Vec<BoundaryPoint> = (0..spec.initial)
            .map(|j| BoundaryPoint::Initial(j as f64 / (spec.initial - 1) as f64))
            .collect();
        gammas.extend(
            (1..=spec.boundary)
                .map(|j| BoundaryPoint::Boundary(horizon * j as f64 / spec.boundary as f64)),
        );
        let times = (0..spec.times)
            .map(|k| horizon * k as f64 / (spec.times - 1) as f64)
            .collect();
        Self::new(gammas, times, horizon)
    }

    /// Default lattice: 21 points of the initial/boundary set, 21 times.
    pub fn default_for(horizon: f64) -> Self {
        Self::uniform(horizon, LatticeSpec::default()).expect("default lattice is valid")
    }

    /// Admissible `(γ index, t index)` pairs.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.gammas.iter().enumerate().flat_map(move |(g, gamma)| {
            self.times
                .iter()
                .enumerate()
                .filter(move |(_, t)| gamma.is_admissible(**t))
                .map(move |(k, _)| (g, k))
        })
    }
}

/// Integer data of one lattice point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointEval {
    pub gamma: BoundaryPoint,
    pub t: f64,
    /// Slot threshold `c` of `γ`.
    pub threshold: u64,
    /// Slot steps of the characteristic curve: `Y_C = y₀ + steps/N`.
    pub steps: u64,
    /// `#{j : Y_j(t₀) >= y₀}`.
    pub set: u64,
    /// Members of the set without a jump in `(t₀, t]`, per class.
    pub survivors: Vec<u64>,
}

impl PointEval {
    pub fn curve(&self, n: usize) -> f64 {
        self.gamma.y0() + self.steps as f64 / n as f64
    }

    pub fn phi(&self, n: usize, h: &[f64]) -> f64 {
        let s: f64 = self
            .survivors
            .iter()
            .zip(h)
            .map(|(&c, &w)| c as f64 * w)
            .sum();
        s / n as f64
    }

    pub fn survivor_total(&self) -> u64 {
        self.survivors.iter().sum()
    }

    /// `Y_C = y₀ + [N(1-y₀)]/N - φ(1)` and `#set = [N(1-y₀)]`, in slot
    /// units.
    pub fn identity_holds(&self, n: usize) -> bool {
        self.set == n as u64 - self.threshold && self.steps + self.survivor_total() == self.set
    }
}

/// All lattice points of one log.
#[derive(Debug, Clone)]
pub struct LatticeEval {
    pub n: usize,
    pub spec_hash: u64,
    pub lattice: EvaluationLattice,
    pub points: Vec<PointEval>,
}

impl LatticeEval {
    /// Lattice points at which the exact identity fails.
    pub fn identity_violations(&self) -> Vec<&PointEval> {
        self.points
            .iter()
            .filter(|p| !p.identity_holds(self.n))
            .collect()
    }
}

/// Per-particle view of a log for repeated queries.
#[derive(Debug, Clone)]
pub struct LogView<'a> {
    log: &'a EventLog,
    jumps: Vec<Vec<f64>>,
}

impl<'a> LogView<'a> {
    pub fn new(log: &'a EventLog) -> Self {
        Self {
            log,
            jumps: log.jumps_by_particle(),
        }
    }

    pub fn log(&self) -> &EventLog {
        self.log
    }

    pub fn n(&self) -> usize {
        self.log.n()
    }

    /// Whether particle `j` jumps in `(a, t]`.
    fn jumps_in(&self, j: usize, a: f64, t: f64) -> bool {
        let js = &self.jumps[j];
        let k = js.partition_point(|&s| s <= a);
        k < js.len() && js[k] <= t
    }

    /// Last jump of `j` at or before `t`.
    fn last_jump(&self, j: usize, t: f64) -> Option<f64> {
        let js = &self.jumps[j];
        match js.partition_point(|&s| s <= t) {
            0 => None,
            k => Some(js[k - 1]),
        }
    }

    fn in_set(&self, j: usize, c: u64) -> bool {
        self.log.initial_slots()[j] as u64 >= c
    }

    /// Slot steps of `Y_C(γ, t)`, obtained by running the curve through the
    /// log: an event whose pre-jump slot is at or below the curve pushes the
    /// curve down one slot.
    pub fn curve_steps(&self, gamma: BoundaryPoint, t: f64) -> Result<u64> {
        gamma.check(t, self.log.horizon())?;
        let c = threshold(self.n(), gamma);
        let mut k = 0u64;
        let ranks = self.log.pre_ranks();
        for &r in &ranks[self.log.count_until(gamma.t0())..self.log.count_until(t)] {
            if r as u64 >= c + k {
                k += 1;
            }
        }
        Ok(k)
    }

    /// `Y^N_C(γ, t)`.
    pub fn char_curve(&self, gamma: BoundaryPoint, t: f64) -> Result<f64> {
        Ok(gamma.y0() + self.curve_steps(gamma, t)? as f64 / self.n() as f64)
    }

    /// Members of the summation set of `γ` that have not jumped in
    /// `(t₀, t]`, counted per class.
    pub fn survivors(&self, gamma: BoundaryPoint, t: f64, classes: usize) -> Result<Vec<u64>> {
        gamma.check(t, self.log.horizon())?;
        let c = threshold(self.n(), gamma);
        let mut out = vec![0u64; classes];
        for j in 0..self.n() {
            if self.in_set(j, c) && !self.jumps_in(j, gamma.t0(), t) {
                let k = self.log.classes()[j] as usize;
                if k >= classes {
                    return Err(Error::domain("log", format!("class {k} out of range")));
                }
                out[k] += 1;
            }
        }
        Ok(out)
    }

    /// `φ^N(h, γ, t)` for per-class weights `h`.
    pub fn phi_n(&self, h: &[f64], gamma: BoundaryPoint, t: f64) -> Result<f64> {
        let s = self.survivors(gamma, t, h.len())?;
        let total: f64 = s.iter().zip(h).map(|(&c, &w)| c as f64 * w).sum();
        Ok(total / self.n() as f64)
    }

    /// `∫ h dμ^N_t` over `W x [y, 1]`.
    pub fn mu_query(&self, h: &[f64], y: f64, t: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&y) || !(0.0..=self.log.horizon()).contains(&t) {
            return Err(Error::domain("query", format!("(y, t) = ({y}, {t})")));
        }
        let ranks = self.log.ranks_at(t)?;
        let c = ceil_snap(self.n() as f64 * y);
        let mut acc = 0.0;
        for (j, &r) in ranks.iter().enumerate() {
            if r as u64 >= c {
                let k = self.log.classes()[j] as usize;
                acc += *h.get(k).ok_or_else(|| {
                    Error::domain("test function", format!("no weight for class {k}"))
                })?;
            }
        }
        Ok(acc / self.n() as f64)
    }

    /// Evaluates every admissible lattice point.
    pub fn evaluate(&self, lattice: &EvaluationLattice, classes: usize) -> Result<LatticeEval> {
        let n = self.n();
        let horizon = self.log.horizon();
        let ranks = self.log.pre_ranks();
        let times = self.log.times();
        if let Some(&k) = self.log.classes().iter().find(|&&k| k as usize >= classes) {
            return Err(Error::domain("log", format!("class {k} out of range")));
        }
        let mut points = Vec::new();
        let mut next_jump = vec![f64::INFINITY; n];
        for &gamma in &lattice.gammas {
            let t0 = gamma.t0();
            let c = threshold(n, gamma);
            for (j, nj) in next_jump.iter_mut().enumerate() {
                let js = &self.jumps[j];
                let k = js.partition_point(|&s| s <= t0);
                *nj = js.get(k).copied().unwrap_or(f64::INFINITY);
            }
            let set = (0..n).filter(|&j| self.in_set(j, c)).count() as u64;
            let mut e = self.log.count_until(t0);
            let mut steps = 0u64;
            for &t in lattice.times.iter().filter(|&&t| t >= t0) {
                gamma.check(t, horizon)?;
                while e < times.len() && times[e] <= t {
                    if ranks[e] as u64 >= c + steps {
                        steps += 1;
                    }
                    e += 1;
                }
                let mut survivors = vec![0u64; classes];
                for j in 0..n {
                    if self.in_set(j, c) && next_jump[j] > t {
                        survivors[self.log.classes()[j] as usize] += 1;
                    }
                }
                points.push(PointEval {
                    gamma,
                    t,
                    threshold: c,
                    steps,
                    set,
                    survivors,
                });
            }
        }
        Ok(LatticeEval {
            n,
            spec_hash: self.log.spec_hash(),
            lattice: lattice.clone(),
            points,
        })
    }

    /// Checks that every particle sits on the characteristic curve started
    /// from its own last reset point, at each of `times`. The rank side
    /// comes from replaying the log through a [`RankIndex`]; the curve side
    /// counts distinct particles from the per-particle jump lists. Returns
    /// the number of `(particle, time)` mismatches, plus one per time at
    /// which the ranks are not a permutation.
    pub fn lemma_violations(&self, times: &[f64]) -> Result<usize> {
        let n = self.n();
        let mut sorted = times.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut idx = RankIndex::new(self.log.initial_slots())?;
        let particles = self.log.particles();
        let mut e = 0;
        let mut bad = 0;
        let slots = self.log.initial_slots();
        for &t in &sorted {
            while e < self.log.len() && self.log.times()[e] <= t {
                idx.move_to_front(particles[e] as usize)?;
                e += 1;
            }
            let ranks = idx.ranks();
            let mut seen = vec![false; n];
            for &r in &ranks {
                if seen[r as usize] {
                    bad += 1;
                    break;
                }
                seen[r as usize] = true;
            }
            let last: Vec<Option<f64>> = (0..n).map(|j| self.last_jump(j, t)).collect();
            let mut jumped_times: Vec<f64> = last.iter().flatten().copied().collect();
            jumped_times.sort_by(f64::total_cmp);
            // jumped_below[s]: particles with initial slot >= s that jumped
            let mut jumped_below = vec![0u64; n + 1];
            for j in 0..n {
                if last[j].is_some() {
                    jumped_below[slots[j] as usize] += 1;
                }
            }
            for s in (0..n).rev() {
                jumped_below[s] += jumped_below[s + 1];
            }
            for i in 0..n {
                let predicted = match last[i] {
                    None => slots[i] as u64 + jumped_below[slots[i] as usize + 1],
                    Some(tau) => {
                        (jumped_times.len() - jumped_times.partition_point(|&s| s <= tau)) as u64
                    }
                };
                if predicted != ranks[i] as u64 {
                    bad += 1;
                }
            }
        }
        Ok(bad)
    }
}

/// `Y^N_C(γ, t)` from a log.
pub fn char_curve(log: &EventLog, gamma: BoundaryPoint, t: f64) -> Result<f64> {
    LogView::new(log).char_curve(gamma, t)
}

/// `φ^N(h, γ, t)` from a log.
pub fn phi_n(
    log: &EventLog,
    spec: &PopulationSpec<f64>,
    h: &TestFunction,
    gamma: BoundaryPoint,
    t: f64,
) -> Result<f64> {
    check_hash(log.spec_hash(), spec)?;
    LogView::new(log).phi_n(&h.weights(spec)?, gamma, t)
}

/// `∫ h dμ^N_t` over `W x [y, 1]` from a log.
pub fn mu_query(
    log: &EventLog,
    spec: &PopulationSpec<f64>,
    h: &TestFunction,
    y: f64,
    t: f64,
) -> Result<f64> {
    check_hash(log.spec_hash(), spec)?;
    LogView::new(log).mu_query(&h.weights(spec)?, y, t)
}

fn check_hash(hash: u64, spec: &PopulationSpec<f64>) -> Result<()> {
    let fp = spec.fingerprint();
    if hash != fp {
        return Err(Error::SpecMismatch {
            left: hash,
            right: fp,
        });
    }
    Ok(())
}

/// A lattice sup with its location and the off-lattice resolution bound.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SupDistance {
    pub value: f64,
    pub gamma: BoundaryPoint,
    pub t: f64,
    /// Largest difference of the limit between neighbouring lattice points.
    /// By monotonicity in both arguments this bounds how much the sup can
    /// move between lattice points.
    pub resolution: f64,
}

/// `max |φ^N(h,γ,t) - φ(h,γ,t)|` over the lattice, `φ` read from `phi`
/// (a limit solution's table or `φ_θ`).
pub fn sup_distance(
    eval: &LatticeEval,
    spec: &PopulationSpec<f64>,
    phi: &PhiTable<f64>,
    h: &TestFunction,
) -> Result<SupDistance> {
    check_hash(eval.spec_hash, spec)?;
    let w = h.weights(spec)?;
    lattice_sup(eval, |p| {
        Ok((p.phi(eval.n, &w), phi.phi(&w, p.gamma, p.t)?))
    })
}

/// `max |Y^N_C(γ,t) - θ(γ,t)|` over the lattice.
pub fn curve_distance(eval: &LatticeEval, theta: &FlowGrid<f64>) -> Result<SupDistance> {
    lattice_sup(eval, |p| Ok((p.curve(eval.n), theta.value(p.gamma, p.t)?)))
}

fn lattice_sup(
    eval: &LatticeEval,
    f: impl Fn(&PointEval) -> Result<(f64, f64)>,
) -> Result<SupDistance> {
    let mut best = SupDistance {
        value: f64::NEG_INFINITY,
        gamma: BoundaryPoint::Initial(0.0),
        t: 0.0,
        resolution: 0.0,
    };
    let lat = &eval.lattice;
    let nt = lat.times.len();
    let mut limit = vec![f64::NAN; lat.gammas.len() * nt];
    for p in &eval.points {
        let (emp, lim) = f(p)?;
        let d = (emp - lim).abs();
        if d > best.value {
            best.value = d;
            best.gamma = p.gamma;
            best.t = p.t;
        }
        let g = lat
            .gammas
            .iter()
            .position(|g| *g == p.gamma)
            .expect("point from lattice");
        let k = lat
            .times
            .iter()
            .position(|t| *t == p.t)
            .expect("point from lattice");
        limit[g * nt + k] = lim;
    }
    if eval.points.is_empty() {
        return Err(Error::domain("lattice", "no admissible points"));
    }
    let mut order: Vec<usize> = (0..lat.gammas.len()).collect();
    order.sort_by(|&a, &b| gamma_compare(&lat.gammas[a], &lat.gammas[b]));
    let mut res = 0.0f64;
    for &g in &order {
        for k in 1..nt {
            let d = (limit[g * nt + k] - limit[g * nt + k - 1]).abs();
            if d.is_finite() {
                res = res.max(d);
            }
        }
    }
    for w in order.windows(2) {
        for k in 0..nt {
            let d = (limit[w[1] * nt + k] - limit[w[0] * nt + k]).abs();
            if d.is_finite() {
                res = res.max(d);
            }
        }
    }
    best.resolution = res;
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intensity::{assign_population, AssignmentMode, IntensityField};
    use crate::srp::{simulate, StreamMode};

    fn affine() -> PopulationSpec<f64> {
        PopulationSpec::uniform_mixture(vec![
            (0.5, IntensityField::affine(0.5, 2.0, 0.0, 1.0).unwrap()),
            (0.5, IntensityField::affine(2.0, -1.5, 0.0, 1.0).unwrap()),
        ])
        .unwrap()
    }

    fn run(spec: &PopulationSpec<f64>, n: usize, seed: u64) -> EventLog {
        let a = assign_population(spec, n, AssignmentMode::Stratified, 0).unwrap();
        simulate(spec, &a, seed, StreamMode::Superposition).unwrap()
    }

    #[test]
    fn test_function_strings_roundtrip() {
        for s in ["one", "class:1", "norm-cap:1.5", "table:0.5,2"] {
            let h: TestFunction = s.parse().unwrap();
            assert_eq!(h.to_string(), s);
        }
        assert!("class:x".parse::<TestFunction>().is_err());
        assert!("nope".parse::<TestFunction>().is_err());
        let spec = affine();
        assert_eq!(
            TestFunction::NormCapped(1.0).weights(&spec).unwrap(),
            vec![1.0, 1.0]
        );
        assert_eq!(TestFunction::NormCapped(3.0).bound(&spec).unwrap(), 2.5);
        assert!(TestFunction::ClassIndicator(2).weights(&spec).is_err());
    }

    #[test]
    fn snapping() {
        assert_eq!(ceil_snap(100.0 * 0.3), 30);
        assert_eq!(ceil_snap(30.2), 31);
        assert_eq!(ceil_snap(0.0), 0);
    }

    #[test]
    fn curve_start_and_bottom() {
        let spec = affine();
        let log = run(&spec, 30, 1);
        let v = LogView::new(&log);
        for z in [0.0, 0.3, 0.55] {
            assert_eq!(v.char_curve(BoundaryPoint::Initial(z), 0.0).unwrap(), z);
        }
        assert_eq!(
            v.char_curve(BoundaryPoint::Boundary(0.4), 0.4).unwrap(),
            0.0
        );
        for t in [0.0, 0.5, 1.0] {
            assert_eq!(v.char_curve(BoundaryPoint::Initial(1.0), t).unwrap(), 1.0);
        }
        assert!(v.char_curve(BoundaryPoint::Boundary(0.5), 0.2).is_err());
    }

    #[test]
    fn phi_at_start_counts_the_set() {
        let spec = affine();
        let log = run(&spec, 40, 2);
        let one = TestFunction::One;
        for z in [0.0, 0.25, 0.3, 1.0] {
            let v = phi_n(&log, &spec, &one, BoundaryPoint::Initial(z), 0.0).unwrap();
            assert_eq!(v * 40.0, (40.0 * (1.0 - z)).round());
        }
    }

    #[test]
    fn identity_and_lemma_hold_exactly() {
        let spec = affine();
        for n in [1, 2, 10, 57] {
            let log = run(&spec, n, 3);
            let v = LogView::new(&log);
            let lat = EvaluationLattice::default_for(1.0);
            let eval = v.evaluate(&lat, 2).unwrap();
            assert!(eval.identity_violations().is_empty());
            let mut times = log.times().to_vec();
            times.extend([0.0, 0.5, 1.0]);
            assert_eq!(v.lemma_violations(&times).unwrap(), 0);
            for p in &eval.points {
                assert_eq!(p.steps, v.curve_steps(p.gamma, p.t).unwrap());
                let s = v.survivors(p.gamma, p.t, 2).unwrap();
                assert_eq!(s, p.survivors);
            }
        }
    }

    #[test]
    fn validate_detects_a_tampered_rank() {
        let spec = affine();
        let log = run(&spec, 12, 4);
        assert!(log.len() > 3);
        let mut bytes = Vec::new();
        log.write_binary(&mut bytes).unwrap();
        // last word of the file is the final pre-jump rank
        let at = bytes.len() - 4;
        let r = u32::from_le_bytes(bytes[at..].try_into().unwrap());
        bytes[at..].copy_from_slice(&((r + 1) % 12).to_le_bytes());
        let tampered = EventLog::read_binary(&bytes[..]).unwrap();
        assert!(matches!(tampered.validate(), Err(Error::Format(_))));
    }

    #[test]
    fn mu_query_marginal_is_constant() {
        let spec = affine();
        let log = run(&spec, 25, 5);
        let v = LogView::new(&log);
        let h = [0.3, 1.7];
        let m0 = v.mu_query(&h, 0.0, 0.0).unwrap();
        for t in [0.2, 0.7, 1.0] {
            assert_eq!(v.mu_query(&h, 0.0, t).unwrap(), m0);
        }
        // at y = Y_C(γ,t) the upper set is exactly the curve's set
        let g = BoundaryPoint::Boundary(0.3);
        let y = v.char_curve(g, 0.8).unwrap();
        let above = v.mu_query(&[1.0, 1.0], y, 0.8).unwrap();
        let steps = v.curve_steps(g, 0.8).unwrap();
        assert_eq!((above * 25.0).round() as u64, 25 - steps);
    }

    #[test]
    fn spec_mismatch_is_reported() {
        let spec = affine();
        let log = run(&spec, 5, 1);
        let other = PopulationSpec::single(IntensityField::constant(1.0, 1.0).unwrap()).unwrap();
        assert!(matches!(
            phi_n(
                &log,
                &other,
                &TestFunction::One,
                BoundaryPoint::Initial(0.0),
                0.5
            ),
            Err(Error::SpecMismatch { .. })
        ));
    }
}
