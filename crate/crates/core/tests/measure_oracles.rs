use srp_core::flow::{solve_y_c, BoundaryPoint, Resolution, SolverOptions};
use srp_core::intensity::{assign_population, AssignmentMode, IntensityField, PopulationSpec};
use srp_core::measure::{curve_distance, sup_distance, EvaluationLattice, LogView, TestFunction};
use srp_core::srp::{simulate, EventLog, StreamMode};

const MARKER: usize = usize::MAX;

fn affine() -> PopulationSpec<f64> {
    PopulationSpec::uniform_mixture(vec![
        (0.5, IntensityField::affine(0.5, 2.0, 0.0, 1.0).unwrap()),
        (0.5, IntensityField::affine(2.0, -1.5, 0.0, 1.0).unwrap()),
    ])
    .unwrap()
}

fn run(spec: &PopulationSpec<f64>, n: usize, seed: u64) -> EventLog {
    let a = assign_population(spec, n, AssignmentMode::SeededRandom, seed).unwrap();
    simulate(spec, &a, seed, StreamMode::Superposition).unwrap()
}

/// Top-to-bottom particle list after every event at or before `t`, with
/// an optional marker inserted at `(index, time)`. Returns the list.
fn replay(log: &EventLog, t: f64, marker: Option<(usize, f64)>) -> Vec<usize> {
    let mut order = vec![0usize; log.n()];
    for (p, &r) in log.initial_slots().iter().enumerate() {
        order[r as usize] = p;
    }
    let mut placed = false;
    let place = |order: &mut Vec<usize>, placed: &mut bool, now: f64| {
        if let Some((idx, t0)) = marker {
            if !*placed && now > t0 {
                order.insert(idx, MARKER);
                *placed = true;
            }
        }
    };
    for e in log.events().take_while(|e| e.time <= t) {
        place(&mut order, &mut placed, e.time);
        let at = order
            .iter()
            .position(|&p| p == e.particle as usize)
            .unwrap();
        order.remove(at);
        order.insert(0, e.particle as usize);
    }
    place(&mut order, &mut placed, f64::INFINITY);
    order
}

/// Slot steps of the curve through `(γ, t)`: the marker starts just above
/// slot `⌈N z⌉` (or at the top at time `t₀`) and drops one slot whenever a
/// particle below it jumps.
fn marker_steps(log: &EventLog, gamma: BoundaryPoint, t: f64) -> u64 {
    let n = log.n();
    let start = match gamma {
        BoundaryPoint::Initial(z) => (n as f64 * z).round() as usize,
        BoundaryPoint::Boundary(_) => 0,
    };
    let marker_time = match gamma {
        BoundaryPoint::Initial(_) => -1.0,
        BoundaryPoint::Boundary(t0) => t0,
    };
    let order = replay(log, t, Some((start, marker_time)));
    (order.iter().position(|&p| p == MARKER).unwrap() - start) as u64
}

fn lattice_10x10() -> (Vec<BoundaryPoint>, Vec<f64>) {
    let mut gammas: Vec<BoundaryPoint> = (0..5)
        .map(|j| BoundaryPoint::Initial(j as f64 / 5.0))
        .collect();
    gammas.extend((1..=5).map(|j| BoundaryPoint::Boundary(j as f64 / 5.0 - 0.1)));
    let times = (0..10).map(|k| k as f64 / 9.0).collect();
    (gammas, times)
}

#[test]
fn curve_matches_a_marker_replay() {
    let spec = affine();
    for seed in 0..4 {
        let log = run(&spec, 50, seed);
        let view = LogView::new(&log);
        let (gammas, times) = lattice_10x10();
        let mut checked = 0;
        for &g in &gammas {
            for &t in times.iter().filter(|&&t| t >= g.t0()) {
                assert_eq!(
                    view.curve_steps(g, t).unwrap(),
                    marker_steps(&log, g, t),
                    "{g:?} at {t}"
                );
                checked += 1;
            }
        }
        assert!(checked > 60);
    }
}

#[test]
fn lattice_evaluation_agrees_with_pointwise_queries() {
    let spec = affine();
    let log = run(&spec, 80, 9);
    let view = LogView::new(&log);
    let (gammas, times) = lattice_10x10();
    let lattice = EvaluationLattice::new(gammas, times, 1.0).unwrap();
    let eval = view.evaluate(&lattice, 2).unwrap();
    assert!(eval.identity_violations().is_empty());
    for p in &eval.points {
        assert_eq!(p.steps, view.curve_steps(p.gamma, p.t).unwrap());
        assert_eq!(p.survivors, view.survivors(p.gamma, p.t, 2).unwrap());
    }
}

#[test]
fn empirical_measure_matches_a_rank_count() {
    let spec = affine();
    let log = run(&spec, 50, 3);
    let view = LogView::new(&log);
    let h = [1.0, 0.0];
    for t in [0.0, 0.25, 0.5, 1.0] {
        let order = replay(&log, t, None);
        for j in 0..=10 {
            // positions at or below y = j/10 are slots >= 5j
            let count = order[5 * j..]
                .iter()
                .filter(|&&p| log.classes()[p] == 0)
                .count();
            let got = view.mu_query(&h, j as f64 / 10.0, t).unwrap();
            assert_eq!(
                (got * 50.0).round() as usize,
                count,
                "y = {}, t = {t}",
                j as f64 / 10.0
            );
        }
    }
}

#[test]
fn curves_are_monotone() {
    let spec = affine();
    let log = run(&spec, 200, 5);
    let view = LogView::new(&log);
    let times: Vec<f64> = (0..=20).map(|k| k as f64 / 20.0).collect();
    for j in 0..=10 {
        let g = BoundaryPoint::Initial(j as f64 / 10.0);
        let ys: Vec<f64> = times
            .iter()
            .map(|&t| view.char_curve(g, t).unwrap())
            .collect();
        assert!(
            ys.windows(2).all(|w| w[0] <= w[1]),
            "z = {}",
            j as f64 / 10.0
        );
        assert!(ys.iter().all(|&y| (0.0..=1.0).contains(&y)));
    }
    for &t in &times {
        let ys: Vec<f64> = (0..=10)
            .map(|j| {
                view.char_curve(BoundaryPoint::Initial(j as f64 / 10.0), t)
                    .unwrap()
            })
            .collect();
        assert!(ys.windows(2).all(|w| w[0] <= w[1]), "t = {t}");
    }
}

#[test]
fn zero_rates_stay_within_one_slot_of_the_limit() {
    let spec = PopulationSpec::single(IntensityField::constant(0.0, 1.0).unwrap()).unwrap();
    let opts = SolverOptions {
        resolution: Resolution::new(40, 40).unwrap(),
        ..SolverOptions::default()
    };
    let limit = solve_y_c(&spec, &opts).unwrap();
    let lattice = EvaluationLattice::default_for(1.0);
    for n in [7, 30, 101] {
        let log = run(&spec, n, 1);
        assert!(log.is_empty());
        let eval = LogView::new(&log).evaluate(&lattice, 1).unwrap();
        let d = sup_distance(&eval, &spec, limit.phi_table(), &TestFunction::One).unwrap();
        assert!(d.value <= 1.0 / n as f64 + 1e-12, "N = {n}: {}", d.value);
        let c = curve_distance(&eval, limit.flow()).unwrap();
        assert!(c.value <= 1.0 / n as f64 + 1e-12, "N = {n}: {}", c.value);
    }
}
