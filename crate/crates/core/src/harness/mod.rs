//! Desk-scale experiments: N-sweeps against the limit, coupling decay,
//! tagged particles and point-process validation. Every report is a pure
//! function of the plan and its seeds.

mod latp_check;
mod plan;
pub mod stats;
mod sweep;
mod tagged;

use std::io::Write;
use std::path::Path;

pub use latp_check::{
    closed_form_cases, flow_case, latp_validation, LatpCase, LatpCaseSummary, LatpOptions,
    LatpReport, LatpRow,
};
pub use plan::{ExperimentPlan, PlanFile, SolverEntry};
pub use sweep::{
    convergence_sweep, coupling_sweep, flow_driven_sweep, solve_limit, ConvergenceReport,
    CouplingReport, CouplingRow, Level, PlateauCheck, ReplicaRow, SeriesSummary, CURVE_SERIES,
    SLOPE_THRESHOLD,
};
pub use tagged::{
    place_tagged, tagged_compare, tagged_sup_diff, TagSummary, TaggedOptions, TaggedReport,
    TaggedRow,
};

use crate::error::Result;

/// Writes `value` as pretty JSON with a trailing newline.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| crate::error::Error::Format(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Creates `path` and hands a buffered writer to `f`.
pub fn write_with(path: &Path, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    f(&mut out)?;
    out.flush()?;
    Ok(())
}
