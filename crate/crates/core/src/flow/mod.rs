//! Flows on the initial/boundary set and the limit fixed-point problem.
//!
//! A point `γ` is either an initial point `(z, 0)` (a particle that started
//! at position `z` and has not jumped) or a boundary point `(0, t₀)` (a
//! particle that last jumped to the top at `t₀`). A flow assigns to each
//! admissible `(γ, t)`, `t >= t₀(γ)`, the position reached at time `t`.

mod grid;
mod ode;
mod phi;
mod solve;
mod tagged;

use std::cmp::Ordering;

pub use grid::{FlowGrid, Resolution};
pub use ode::{verify_ode_form, OdeReport};
pub use phi::{phi_theta, PhiTable};
pub use solve::{solve_y_c, tilde_w, LimitSolution, SolverOptions};
pub use tagged::{tagged_limit_path, TaggedPath};

use crate::error::{Error, Result};

/// A point of the initial/boundary set.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "tag", content = "coord", rename_all = "kebab-case")]
pub enum BoundaryPoint {
    /// `(z, 0)`, `z` in `[0,1]`.
    Initial(f64),
    /// `(0, t₀)`, `t₀` in `[0,T]`.
    Boundary(f64),
}

impl BoundaryPoint {
    /// Initial position `y₀(γ)`.
    pub fn y0(&self) -> f64 {
        match *self {
            BoundaryPoint::Initial(z) => z,
            BoundaryPoint::Boundary(_) => 0.0,
        }
    }

    /// Start time `t₀(γ)`.
    pub fn t0(&self) -> f64 {
        match *self {
            BoundaryPoint::Initial(_) => 0.0,
            BoundaryPoint::Boundary(t) => t,
        }
    }

    /// Scalar that realizes the total order: later boundary points are
    /// larger, every boundary point is above `(0,0)`, and among initial
    /// points smaller `z` is larger.
    pub fn order_key(&self) -> f64 {
        // `+ 0.0` folds -0.0 into 0.0 so the shared corner compares equal
        match *self {
            BoundaryPoint::Initial(z) => -z + 0.0,
            BoundaryPoint::Boundary(t) => t + 0.0,
        }
    }

    pub fn is_admissible(&self, t: f64) -> bool {
        t >= self.t0()
    }

    pub(crate) fn check(&self, t: f64, horizon: f64) -> Result<()> {
        let ok = match *self {
            BoundaryPoint::Initial(z) => (0.0..=1.0).contains(&z),
            BoundaryPoint::Boundary(s) => (0.0..=horizon).contains(&s),
        };
        if !ok {
            return Err(Error::domain(
                "boundary point",
                format!("{self:?} outside the set"),
            ));
        }
        if !(t >= self.t0() && t <= horizon) {
            return Err(Error::domain(
                "time",
                format!("t = {t} not in [{}, {horizon}] for {self:?}", self.t0()),
            ));
        }
        Ok(())
    }
}

/// Compares two points in the total order of the initial/boundary set.
pub fn gamma_compare(a: &BoundaryPoint, b: &BoundaryPoint) -> Ordering {
    a.order_key().total_cmp(&b.order_key())
}
