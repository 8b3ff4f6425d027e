use super::{BoundaryPoint, LimitSolution};
use crate::intensity::PopulationSpec;
use crate::scalar::Real;

/// Largest gap between `y_C(γ, t)` and
/// `y₀ + ∫_{t₀}^t ∫_{z >= y_C(γ,s)} w(z, s) μ_s(dw dz) ds` on the grid.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct OdeReport {
    pub max_residual: f64,
    pub at: BoundaryPoint,
    pub t: f64,
}

/// Evaluates the integral form of the flow equation on every grid node.
///
/// The spatial integral is a Stieltjes sum over the grid's characteristic
/// positions at time `s`: the class-`k` mass between neighbouring curves is
/// the difference of `p_k Φ_k`, weighted by `w_k` at the midpoint position.
/// The time integral is a trapezoid over the grid.
pub fn verify_ode_form<S: Real>(sol: &LimitSolution<S>, spec: &PopulationSpec<S>) -> OdeReport {
    let flow = sol.flow();
    let res = flow.resolution();
    let (m, mz) = (res.m, res.mz);
    let phi = sol.phi_table();
    let classes = spec.classes();
    let h = flow.dt().as_f64();

    // inner[b][k] for boundary rows, inner_init[j][k] for initial rows
    let mut inner_bnd = vec![0.0f64; (m + 1) * (m + 1)];
    let mut inner_init = vec![0.0f64; (mz + 1) * (m + 1)];
    let mut pos = Vec::with_capacity(m + mz + 2);
    let mut mass = Vec::with_capacity(m + mz + 2);
    for k in 0..=m {
        let t = flow.t(k);
        pos.clear();
        mass.clear();
        for b in (0..=k).rev() {
            pos.push(flow.boundary_node(b, k).as_f64());
            mass.push(
                classes
                    .iter()
                    .enumerate()
                    .map(|(c, cl)| (cl.weight * phi.class_table(c).boundary_node(b, k)).as_f64())
                    .collect::<Vec<_>>(),
            );
        }
        for j in 0..=mz {
            pos.push(flow.initial_node(j, k).as_f64());
            mass.push(
                classes
                    .iter()
                    .enumerate()
                    .map(|(c, cl)| (cl.weight * phi.class_table(c).initial_node(j, k)).as_f64())
                    .collect::<Vec<_>>(),
            );
        }
        // suffix sums from the bottom of the order upwards
        let len = pos.len();
        let mut acc = 0.0;
        let mut suffix = vec![0.0f64; len];
        for l in (0..len).rev() {
            if l + 1 < len {
                let mid = S::lit(0.5 * (pos[l] + pos[l + 1]));
                for (c, cl) in classes.iter().enumerate() {
                    let dm = mass[l][c] - mass[l + 1][c];
                    acc += dm * cl.field.rate(mid, t).as_f64();
                }
            }
            suffix[l] = acc;
        }
        for (l, b) in (0..=k).rev().enumerate() {
            inner_bnd[b * (m + 1) + k] = suffix[l];
        }
        for j in 0..=mz {
            inner_init[j * (m + 1) + k] = suffix[k + 1 + j];
        }
    }

    let mut report = OdeReport {
        max_residual: 0.0,
        at: BoundaryPoint::Initial(0.0),
        t: 0.0,
    };
    let mut check =
        |gamma: BoundaryPoint, row: &[f64], start: usize, values: &dyn Fn(usize) -> f64| {
            let mut integral = 0.0;
            for k in start..=m {
                if k > start {
                    integral += 0.5 * h * (row[k - 1] + row[k]);
                }
                let r = (values(k) - (gamma.y0() + integral)).abs();
                if r > report.max_residual {
                    report.max_residual = r;
                    report.at = gamma;
                    report.t = flow.t(k).as_f64();
                }
            }
        };
    for j in 0..=mz {
        let row = &inner_init[j * (m + 1)..(j + 1) * (m + 1)];
        check(BoundaryPoint::Initial(flow.z(j).as_f64()), row, 0, &|k| {
            flow.initial_node(j, k).as_f64()
        });
    }
    for b in 0..=m {
        let row = &inner_bnd[b * (m + 1)..(b + 1) * (m + 1)];
        check(BoundaryPoint::Boundary(flow.t(b).as_f64()), row, b, &|k| {
            flow.boundary_node(b, k).as_f64()
        });
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{solve_y_c, Resolution, SolverOptions};
    use crate::intensity::IntensityField;

    fn solve(spec: &PopulationSpec<f64>, m: usize, mz: usize) -> LimitSolution<f64> {
        solve_y_c(
            spec,
            &SolverOptions {
                resolution: Resolution { m, mz },
                ..SolverOptions::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn zero_rates_have_zero_residual() {
        let spec = PopulationSpec::single(IntensityField::constant(0.0, 1.0).unwrap()).unwrap();
        assert_eq!(
            verify_ode_form(&solve(&spec, 20, 10), &spec).max_residual,
            0.0
        );
    }

    #[test]
    fn unit_rate_matches_closed_form() {
        let spec = PopulationSpec::single(IntensityField::constant(1.0, 1.0).unwrap()).unwrap();
        let r = verify_ode_form(&solve(&spec, 100, 20), &spec);
        assert!(r.max_residual < 1.0 / 100.0, "{r:?}");
    }

    #[test]
    fn affine_residual_shrinks_under_refinement() {
        let spec = PopulationSpec::uniform_mixture(vec![
            (0.5, IntensityField::affine(0.5, 2.0, 0.0, 1.0).unwrap()),
            (0.5, IntensityField::affine(2.0, -1.5, 0.0, 1.0).unwrap()),
        ])
        .unwrap();
        let coarse = verify_ode_form(&solve(&spec, 20, 20), &spec).max_residual;
        let fine = verify_ode_form(&solve(&spec, 40, 40), &spec).max_residual;
        assert!(coarse >= 2.0 * fine, "{coarse} vs {fine}");
    }
}
