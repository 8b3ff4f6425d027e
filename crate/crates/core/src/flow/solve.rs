use std::sync::Arc;

use super::{BoundaryPoint, FlowGrid, PhiTable, Resolution};
use crate::error::{Error, Result};
use crate::intensity::{IntensityField, PopulationSpec};
use crate::latp::{survival_solve, uniform_grid, LatpIntensity, SurvivalTable};
use crate::scalar::Real;

/// Fixed-point iteration settings.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SolverOptions {
    pub resolution: Resolution,
    /// Stop once the sup-grid residual `|θ - (1 - φ_θ)|` is below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Relaxation `α` in `θ ← (1-α)θ + α(1-φ_θ)`.
    pub damping: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            resolution: Resolution { m: 200, mz: 200 },
            tol: 1e-8,
            max_iter: 500,
            damping: 1.0,
        }
    }
}

/// Solved limit flow `y_C` with the survivor tables of that flow.
#[derive(Debug, Clone)]
pub struct LimitSolution<S> {
    fingerprint: u64,
    flow: FlowGrid<S>,
    phi: PhiTable<S>,
    history: Vec<f64>,
    damping: f64,
    projection: f64,
}

impl<S: Real> LimitSolution<S> {
    /// Wraps a given flow (for example one loaded from a cache) and
    /// evaluates its survivor tables and residual.
    pub fn from_flow(spec: &PopulationSpec<S>, flow: FlowGrid<S>) -> Result<Self> {
        let phi = PhiTable::build(spec, &flow)?;
        let residual = flow.max_abs_diff(&phi.fixed_point_image(&flow))?.as_f64();
        Ok(Self {
            fingerprint: spec.fingerprint(),
            flow,
            phi,
            history: vec![residual],
            damping: 1.0,
            projection: 0.0,
        })
    }

    pub fn flow(&self) -> &FlowGrid<S> {
        &self.flow
    }

    pub fn phi_table(&self) -> &PhiTable<S> {
        &self.phi
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Residual after each completed iteration; the last entry is the
    /// residual of the returned flow.
    pub fn history(&self) -> &[f64] {
        &self.history
    }

    pub fn residual(&self) -> f64 {
        *self.history.last().expect("at least one iteration")
    }

    pub fn iterations(&self) -> usize {
        self.history.len()
    }

    /// Damping in effect when the iteration stopped.
    pub fn damping(&self) -> f64 {
        self.damping
    }

    /// Largest change made by the final isotonic projection.
    pub fn projection_change(&self) -> f64 {
        self.projection
    }

    pub fn y_c(&self, gamma: BoundaryPoint, t: f64) -> Result<S> {
        self.flow.value(gamma, t)
    }

    /// `φ_{y_C}(h, γ, t)`, i.e. `μ_t(h ⊗ 1[y_C(γ,t), 1])`.
    pub fn phi(&self, h: &[S], gamma: BoundaryPoint, t: f64) -> Result<S> {
        self.phi.phi(h, gamma, t)
    }

    /// Survival table of the class-`k` particle started at `z` under the
    /// solved flow.
    pub fn survival_table(
        &self,
        spec: &PopulationSpec<S>,
        k: usize,
        z: S,
    ) -> Result<SurvivalTable<S>> {
        let class = spec
            .classes()
            .get(k)
            .ok_or_else(|| Error::domain("class", format!("no class {k}")))?;
        let omega = tilde_w(&self.flow, &class.field, z);
        survival_solve(
            &omega,
            &uniform_grid(self.flow.horizon(), self.flow.resolution().m),
        )
    }
}

/// Hazard kernel seen by a particle of rate field `w` that starts at `z`
/// when positions follow the flow `θ`:
/// `ω(0, t) = w(θ((z,0), t), t)` and `ω(s, t) = w(θ((0,s), t), t)` for `s > 0`.
pub fn tilde_w<S: Real>(theta: &FlowGrid<S>, w: &IntensityField<S>, z: S) -> LatpIntensity<S> {
    let flow = Arc::new(theta.clone());
    let field = Arc::new(w.clone());
    let (f1, w1) = (Arc::clone(&flow), Arc::clone(&field));
    let z = z.as_f64();
    LatpIntensity::split(
        move |t| w1.rate(f1.value_unchecked(BoundaryPoint::Initial(z), t), t),
        move |s, t| {
            field.rate(
                flow.value_unchecked(BoundaryPoint::Boundary(s.as_f64()), t),
                t,
            )
        },
        w.sup_norm(),
    )
}

/// Picard iteration for the flow `y_C = 1 - φ_{y_C}(W, ·, ·)` started from
/// `θ₀(γ, t) = y₀(γ)`.
///
/// If the residual rises twice in a row at `α = 1`, damping drops to 0.5
/// for the remaining iterations.
pub fn solve_y_c<S: Real>(
    spec: &PopulationSpec<S>,
    opts: &SolverOptions,
) -> Result<LimitSolution<S>> {
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(Error::domain(
            "damping",
            format!("{} not in (0,1]", opts.damping),
        ));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::domain(
            "tolerance",
            format!("{} must be positive", opts.tol),
        ));
    }
    let res = Resolution::new(opts.resolution.m, opts.resolution.mz)?;
    let mut theta = FlowGrid::identity(spec.horizon(), res);
    let mut alpha = opts.damping;
    let mut history = Vec::new();
    for n in 0..opts.max_iter {
        let phi = PhiTable::build(spec, &theta)?;
        let image = phi.fixed_point_image(&theta);
        let residual = theta.max_abs_diff(&image)?.as_f64();
        history.push(residual);
        log::debug!("picard iteration {n}: residual {residual:e} (alpha {alpha})");
        if residual < opts.tol {
            let projection = theta.isotonic_project().as_f64();
            if projection > 0.0 {
                log::info!("isotonic projection moved the flow by {projection:e}");
            }
            let (phi, residual) = if projection > 0.0 {
                let phi = PhiTable::build(spec, &theta)?;
                let r = theta.max_abs_diff(&phi.fixed_point_image(&theta))?.as_f64();
                (phi, r)
            } else {
                (phi, residual)
            };
            *history.last_mut().expect("pushed above") = residual;
            return Ok(LimitSolution {
                fingerprint: spec.fingerprint(),
                flow: theta,
                phi,
                history,
                damping: alpha,
                projection,
            });
        }
        let k = history.len();
        if alpha == 1.0
            && k >= 3
            && history[k - 1] > history[k - 2]
            && history[k - 2] > history[k - 3]
        {
            log::warn!("residual rising at iteration {n}; switching to damping 0.5");
            alpha = 0.5;
        }
        let a = S::lit(alpha);
        let keep = S::one() - a;
        let lerp = |dst: &mut [S], src: &[S]| {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = keep * *d + a * *s;
            }
        };
        lerp(theta.initial_mut(), image.initial_values());
        lerp(theta.boundary_mut(), image.boundary_values());
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        last: history.last().copied().unwrap_or(f64::NAN),
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intensity::IntensityField;

    fn opts(m: usize, mz: usize) -> SolverOptions {
        SolverOptions {
            resolution: Resolution { m, mz },
            ..SolverOptions::default()
        }
    }

    #[test]
    fn zero_rates_converge_immediately() {
        let spec = PopulationSpec::single(IntensityField::constant(0.0, 1.0).unwrap()).unwrap();
        let sol = solve_y_c(&spec, &opts(20, 10)).unwrap();
        assert_eq!(sol.iterations(), 1);
        assert!(sol.residual() < 1e-15);
        assert_eq!(sol.y_c(BoundaryPoint::Initial(0.3), 1.0).unwrap(), 0.3);
        assert_eq!(sol.y_c(BoundaryPoint::Boundary(0.5), 1.0).unwrap(), 0.0);
    }

    #[test]
    fn unit_rate_closed_form() {
        let spec = PopulationSpec::single(IntensityField::constant(1.0, 1.0).unwrap()).unwrap();
        let sol = solve_y_c(&spec, &opts(200, 20)).unwrap();
        let h: f64 = 1.0 / 200.0;
        let bound = 10.0 * (h * h + 1e-8);
        let v = sol.y_c(BoundaryPoint::Initial(0.5), 1.0).unwrap();
        assert!((v - (1.0 - 0.5 * (-1.0f64).exp())).abs() < bound, "{v}");
        let v = sol.y_c(BoundaryPoint::Boundary(0.25), 0.75).unwrap();
        assert!((v - (1.0 - (-0.5f64).exp())).abs() < bound, "{v}");
        assert!(sol.residual() < 1e-8);
    }

    #[test]
    fn residual_identity_and_invariants() {
        let spec = PopulationSpec::uniform_mixture(vec![
            (0.5, IntensityField::affine(0.5, 2.0, 0.0, 1.0).unwrap()),
            (0.5, IntensityField::affine(2.0, -1.5, 0.0, 1.0).unwrap()),
        ])
        .unwrap();
        let sol = solve_y_c(&spec, &opts(40, 20)).unwrap();
        assert!(sol.residual() < 1e-8);
        assert!(sol.flow().invariant_violations(0.0).is_empty());
        for (g, t) in [
            (BoundaryPoint::Initial(0.35), 0.6),
            (BoundaryPoint::Boundary(0.3), 0.9),
        ] {
            let lhs: f64 = sol.y_c(g, t).unwrap() + sol.phi(&[1.0, 1.0], g, t).unwrap();
            // off-grid both sides are interpolated, so allow interpolation error
            assert!((lhs - 1.0).abs() < 1e-3, "{lhs}");
        }
        for b in 0..=40 {
            for k in b..=40 {
                let t = sol.flow().t(k);
                let g = BoundaryPoint::Boundary(sol.flow().t(b));
                let lhs = sol.y_c(g, t).unwrap() + sol.phi(&[1.0, 1.0], g, t).unwrap();
                assert!((lhs - 1.0).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn damping_reaches_same_fixed_point() {
        let spec = PopulationSpec::uniform_mixture(vec![
            (0.5, IntensityField::affine(0.5, 2.0, 0.0, 1.0).unwrap()),
            (0.5, IntensityField::affine(2.0, -1.5, 0.0, 1.0).unwrap()),
        ])
        .unwrap();
        let a = solve_y_c(&spec, &opts(40, 20)).unwrap();
        let b = solve_y_c(
            &spec,
            &SolverOptions {
                damping: 0.5,
                ..opts(40, 20)
            },
        )
        .unwrap();
        assert!(a.flow().max_abs_diff(b.flow()).unwrap() < 2e-8);
        assert!(b.iterations() > a.iterations());
    }

    #[test]
    fn iteration_cap_reports_history() {
        let spec =
            PopulationSpec::single(IntensityField::affine(0.5, 2.0, 0.0, 1.0).unwrap()).unwrap();
        let err = solve_y_c(
            &spec,
            &SolverOptions {
                max_iter: 2,
                ..opts(20, 10)
            },
        )
        .unwrap_err();
        match err {
            Error::NonConvergence {
                iterations,
                history,
                ..
            } => {
                assert_eq!(iterations, 2);
                assert_eq!(history.len(), 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tilde_w_examples() {
        let res = Resolution::new(20, 10).unwrap();
        let theta =
            FlowGrid::<f64>::from_fn(1.0, res, |g, t| (g.y0() + 0.5 * (t - g.t0())).min(1.0));
        let c = IntensityField::constant(2.5, 1.0).unwrap();
        let omega = tilde_w(&theta, &c, 0.3);
        assert_eq!(omega.rate(0.0, 0.7), 2.5);
        assert_eq!(omega.rate(0.4, 0.7), 2.5);
        // w(y,t) = y reads the flow itself
        let y = IntensityField::affine(0.0, 1.0, 0.0, 1.0).unwrap();
        let identity = FlowGrid::<f64>::identity(1.0, res);
        let omega = tilde_w(&identity, &y, 0.3);
        assert!((omega.rate(0.0, 0.65) - 0.3).abs() < 1e-15);
        // s > 0 slices do not depend on z
        let a = tilde_w(&theta, &y, 0.5);
        let b = tilde_w(&theta, &y, 0.9);
        for (s, t) in [(0.1, 0.2), (0.35, 0.8), (0.5, 1.0)] {
            assert_eq!(a.rate(s, t), b.rate(s, t));
        }
        assert_ne!(a.rate(0.0, 0.5), b.rate(0.0, 0.5));
    }
}
