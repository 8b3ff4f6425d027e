use rayon::prelude::*;

use super::{BoundaryPoint, FlowGrid};
use crate::error::{Error, Result};
use crate::intensity::{PopulationClass, PopulationSpec};
use crate::latp::SurvivalCore;
use crate::quad::trapezoid_cumulative;
use crate::scalar::Real;

/// Per-class survivor masses of a flow on its grid.
///
/// `Φ_k(γ, t)` is the mass of class-`k` particles (relative to the class
/// weight) that sit downstream of `γ` at `t₀(γ)` and have not jumped in
/// `(t₀, t]` when every particle's hazard is evaluated along the flow:
/// * initial `γ = (y₀, 0)`: `∫_{y₀}^1 ρ_k(z) e^{-∫_0^t w_k(θ((z,0),u),u)du} dz`;
/// * boundary `γ = (0, t₀)`: `∫_0^1 ρ_k(z) P(no arrival in (t₀,t]) dz` for
///   the last-arrival-time process with kernel `w̃`.
///
/// The boundary part uses that the renewal kernel does not depend on `z`:
/// averaging the Volterra equation over `ρ_k` gives a single equation per
/// class whose source is the averaged first-arrival density.
#[derive(Debug, Clone)]
pub struct PhiTable<S> {
    weights: Vec<S>,
    /// One table per class, stored with the node layout of a flow grid.
    masses: Vec<FlowGrid<S>>,
}

impl<S: Real> PhiTable<S> {
    pub fn build(spec: &PopulationSpec<S>, theta: &FlowGrid<S>) -> Result<Self> {
        if (theta.horizon() - spec.horizon()).abs() > S::lit(1e-12) * spec.horizon() {
            return Err(Error::Grid(format!(
                "flow horizon {} differs from spec horizon {}",
                theta.horizon(),
                spec.horizon()
            )));
        }
        let masses = spec
            .classes()
            .par_iter()
            .map(|class| class_masses(class, theta))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            weights: spec.classes().iter().map(|c| c.weight).collect(),
            masses,
        })
    }

    pub fn class_count(&self) -> usize {
        self.weights.len()
    }

    /// Grid tables of `Φ_k`.
    pub fn class_table(&self, k: usize) -> &FlowGrid<S> {
        &self.masses[k]
    }

    /// `Φ_k(γ, t)` (relative to `p_k`).
    pub fn class_mass(&self, k: usize, gamma: BoundaryPoint, t: f64) -> Result<S> {
        self.masses[k].value(gamma, t)
    }

    /// `φ_θ(h, γ, t) = Σ_k p_k h_k Φ_k(γ, t)` for per-class weights `h`.
    pub fn phi(&self, h: &[S], gamma: BoundaryPoint, t: f64) -> Result<S> {
        if h.len() != self.weights.len() {
            return Err(Error::domain(
                "test function",
                format!(
                    "{} class weights for {} classes",
                    h.len(),
                    self.weights.len()
                ),
            ));
        }
        let mut acc = S::zero();
        for (k, (p, hk)) in self.weights.iter().zip(h).enumerate() {
            acc = acc + *p * *hk * self.masses[k].value(gamma, t)?;
        }
        Ok(acc)
    }

    /// `1 - φ_θ(1, ·, ·)` on every grid node, with the start values pinned
    /// to `y₀` exactly.
    pub(crate) fn fixed_point_image(&self, like: &FlowGrid<S>) -> FlowGrid<S> {
        let res = like.resolution();
        let (m, mz) = (res.m, res.mz);
        let mut initial = vec![S::zero(); (mz + 1) * (m + 1)];
        let mut boundary = vec![S::zero(); (m + 1) * (m + 1)];
        for (k, p) in self.weights.iter().enumerate() {
            let t = &self.masses[k];
            for (acc, v) in initial.iter_mut().zip(t.initial_values()) {
                *acc = *acc + *p * *v;
            }
            for (acc, v) in boundary.iter_mut().zip(t.boundary_values()) {
                *acc = *acc + *p * *v;
            }
        }
        let clamp = |v: S| (S::one() - v).max(S::zero()).min(S::one());
        for j in 0..=mz {
            for k in 0..=m {
                let idx = j * (m + 1) + k;
                initial[idx] = if k == 0 {
                    like.z(j)
                } else {
                    clamp(initial[idx])
                };
            }
        }
        for b in 0..=m {
            for k in 0..=m {
                let idx = b * (m + 1) + k;
                boundary[idx] = if k <= b {
                    S::zero()
                } else {
                    clamp(boundary[idx])
                };
            }
        }
        FlowGrid::from_tables(like.horizon(), res, initial, boundary)
    }
}

fn class_masses<S: Real>(class: &PopulationClass<S>, theta: &FlowGrid<S>) -> Result<FlowGrid<S>> {
    let res = theta.resolution();
    let (m, mz) = (res.m, res.mz);
    let h = theta.dt();
    let w = &class.field;
    let half = S::lit(0.5);

    // first-arrival survival and density along each initial characteristic
    let mut surv = vec![S::zero(); (mz + 1) * (m + 1)];
    let mut dens = vec![S::zero(); (mz + 1) * (m + 1)];
    let mut rates = vec![S::zero(); m + 1];
    for j in 0..=mz {
        for (k, r) in rates.iter_mut().enumerate() {
            *r = w.rate(theta.initial_node(j, k), theta.t(k));
        }
        let cum = trapezoid_cumulative(&rates, h);
        for k in 0..=m {
            let e = (-cum[k]).exp();
            surv[j * (m + 1) + k] = e;
            dens[j * (m + 1) + k] = rates[k] * e;
        }
    }
    // exact ρ-mass of each z-cell, integrand by the cell trapezoid
    let cell: Vec<S> = (0..mz)
        .map(|j| class.density.mass(theta.z(j), theta.z(j + 1)))
        .collect();
    let mut initial = vec![S::zero(); (mz + 1) * (m + 1)];
    let mut source = vec![S::zero(); m + 1];
    for k in 0..=m {
        let mut tail = S::zero();
        let mut g = S::zero();
        for j in (0..mz).rev() {
            let a = j * (m + 1) + k;
            let b = (j + 1) * (m + 1) + k;
            tail = tail + cell[j] * half * (surv[a] + surv[b]);
            g = g + cell[j] * half * (dens[a] + dens[b]);
            initial[a] = tail;
        }
        source[k] = g;
    }
    let averaged_first: Vec<S> = (0..=m).map(|k| initial[k]).collect();
    let core = SurvivalCore::solve_with_source(h, averaged_first, &source, |i, j| {
        w.rate(theta.boundary_node(i, j), theta.t(j))
    })?;
    let boundary = core.survival_rows(h, S::one());
    Ok(FlowGrid::from_tables(
        theta.horizon(),
        res,
        initial,
        boundary,
    ))
}

/// `φ_θ(h, γ, t)` for a single query. Builds the full table; use
/// [`PhiTable`] directly for repeated queries.
pub fn phi_theta<S: Real>(
    theta: &FlowGrid<S>,
    spec: &PopulationSpec<S>,
    h: &[S],
    gamma: BoundaryPoint,
    t: f64,
) -> Result<S> {
    gamma.check(t, spec.horizon().as_f64())?;
    PhiTable::build(spec, theta)?.phi(h, gamma, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::Resolution;
    use crate::intensity::IntensityField;

    fn constant_spec(c: f64) -> PopulationSpec<f64> {
        PopulationSpec::single(IntensityField::constant(c, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn zero_elapsed_time_gives_tail_mass() {
        let spec = constant_spec(1.3);
        let theta = FlowGrid::identity(1.0, Resolution::new(20, 10).unwrap());
        for y0 in [0.0, 0.3, 0.7, 1.0] {
            let v = phi_theta(&theta, &spec, &[1.0], BoundaryPoint::Initial(y0), 0.0).unwrap();
            assert!((v - (1.0 - y0)).abs() < 1e-14);
        }
        let v = phi_theta(&theta, &spec, &[1.0], BoundaryPoint::Boundary(0.4), 0.4).unwrap();
        assert_eq!(v, 1.0);
        assert!(phi_theta(&theta, &spec, &[1.0], BoundaryPoint::Boundary(0.4), 0.3).is_err());
    }

    #[test]
    fn constant_rate_closed_form() {
        let c = 2.0;
        let spec = constant_spec(c);
        let res = Resolution::new(200, 20).unwrap();
        let h = 1.0 / 200.0;
        // θ is irrelevant when w ignores position
        let theta = FlowGrid::from_fn(1.0, res, |g, t| (g.y0() + 0.3 * (t - g.t0())).min(1.0));
        let table = PhiTable::build(&spec, &theta).unwrap();
        for (y0, t) in [(0.0, 1.0), (0.5, 0.5), (0.3, 0.25)] {
            let v = table.phi(&[1.0], BoundaryPoint::Initial(y0), t).unwrap();
            let exact = (1.0 - y0) * (-c * t).exp();
            assert!(
                (v - exact).abs() < c * c * h * h,
                "{y0} {t}: {v} vs {exact}"
            );
        }
    }

    #[test]
    fn two_class_mixture_closed_form() {
        let (c1, c2) = (0.5, 3.0);
        let spec = PopulationSpec::uniform_mixture(vec![
            (0.5, IntensityField::constant(c1, 1.0).unwrap()),
            (0.5, IntensityField::constant(c2, 1.0).unwrap()),
        ])
        .unwrap();
        let res = Resolution::new(200, 10).unwrap();
        let h: f64 = 1.0 / 200.0;
        let table = PhiTable::build(&spec, &FlowGrid::identity(1.0, res)).unwrap();
        for (t0, t) in [(0.2, 0.9), (0.5, 1.0), (0.0, 0.6)] {
            let v = table
                .phi(&[1.0, 1.0], BoundaryPoint::Boundary(t0), t)
                .unwrap();
            let exact = 0.5 * (-c1 * (t - t0)).exp() + 0.5 * (-c2 * (t - t0)).exp();
            assert!(
                (v - exact).abs() < 10.0 * c2 * c2 * h * h,
                "{t0} {t}: {v} vs {exact}"
            );
        }
        // class indicator picks one component
        let v = table
            .phi(&[0.0, 1.0], BoundaryPoint::Boundary(0.5), 1.0)
            .unwrap();
        assert!((v - 0.5 * (-c2 * 0.5f64).exp()).abs() < 10.0 * c2 * c2 * h * h);
        assert!(table
            .phi(&[1.0], BoundaryPoint::Boundary(0.5), 1.0)
            .is_err());
    }

    #[test]
    fn monotone_in_time_and_order() {
        let spec = PopulationSpec::uniform_mixture(vec![
            (0.5, IntensityField::affine(0.5, 2.0, 0.0, 1.0).unwrap()),
            (0.5, IntensityField::affine(2.0, -1.5, 0.0, 1.0).unwrap()),
        ])
        .unwrap();
        let res = Resolution::new(40, 20).unwrap();
        let theta = FlowGrid::identity(1.0, res);
        let table = PhiTable::build(&spec, &theta).unwrap();
        let one = [1.0, 1.0];
        for k in 0..40 {
            let t = k as f64 / 40.0;
            let tn = (k + 1) as f64 / 40.0;
            for g in [BoundaryPoint::Initial(0.25), BoundaryPoint::Boundary(0.0)] {
                assert!(table.phi(&one, g, tn).unwrap() <= table.phi(&one, g, t).unwrap() + 1e-15);
            }
            let mut prev = f64::INFINITY;
            let mut gammas: Vec<BoundaryPoint> = (0..=k)
                .rev()
                .map(|b| BoundaryPoint::Boundary(b as f64 / 40.0))
                .collect();
            gammas.extend((0..=20).map(|j| BoundaryPoint::Initial(j as f64 / 20.0)));
            for g in gammas {
                let v = table.phi(&one, g, t).unwrap();
                assert!(v <= prev + 1e-12);
                prev = v;
            }
        }
    }
}
