//! Experiment plans.
//!
//! ```toml
//! spec = "affine.toml"          # relative to the plan file
//! ns = [100, 400, 1600, 6400]
//! seeds = 20
//! base_seed = 1
//! assignment = "stratified"     # or "seeded-random"
//! test_functions = ["one", "class:0"]
//! output_dir = "out/affine"     # optional, relative to the plan file
//!
//! [solver]
//! m = 200
//! mz = 200
//! tol = 1e-8
//!
//! [lattice]
//! initial = 11
//! boundary = 10
//! times = 21
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{line_of, load_spec};
use crate::error::{Error, Result};
use crate::flow::{Resolution, SolverOptions};
use crate::intensity::{AssignmentMode, PopulationSpec};
use crate::measure::{EvaluationLattice, LatticeSpec, TestFunction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    pub spec: PathBuf,
    pub ns: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub assignment: AssignmentMode,
    #[serde(default = "default_test_functions")]
    pub test_functions: Vec<TestFunction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub solver: SolverEntry,
    #[serde(default)]
    pub lattice: LatticeSpec,
}

fn default_seeds() -> usize {
    20
}

fn default_test_functions() -> Vec<TestFunction> {
    vec![TestFunction::One]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverEntry {
    pub m: usize,
    pub mz: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
}

impl Default for SolverEntry {
    fn default() -> Self {
        let d = SolverOptions::default();
        Self {
            m: d.resolution.m,
            mz: d.resolution.mz,
            tol: d.tol,
            max_iter: d.max_iter,
            damping: d.damping,
        }
    }
}

impl SolverEntry {
    pub fn options(&self) -> Result<SolverOptions> {
        Ok(SolverOptions {
            resolution: Resolution::new(self.m, self.mz)?,
            tol: self.tol,
            max_iter: self.max_iter,
            damping: self.damping,
        })
    }
}

/// A validated plan with its spec loaded.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub spec_path: PathBuf,
    pub spec: PopulationSpec<f64>,
    pub ns: Vec<usize>,
    pub seeds: usize,
    pub base_seed: u64,
    pub assignment: AssignmentMode,
    pub test_functions: Vec<TestFunction>,
    pub solver: SolverOptions,
    pub lattice: EvaluationLattice,
    pub output_dir: Option<PathBuf>,
}

impl PlanFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            line: e.span().map(|s| line_of(text, s.start)),
            msg: e.message().to_string(),
        })
    }

    /// Loads the spec (relative paths resolve against `base`) and checks the
    /// plan invariants.
    pub fn resolve(&self, base: &Path) -> Result<ExperimentPlan> {
        let spec_path = base.join(&self.spec);
        let spec = load_spec(&spec_path)?;
        ExperimentPlan::new(
            spec_path,
            spec,
            self.ns.clone(),
            self.seeds,
            self.base_seed,
            self.assignment,
            self.test_functions.clone(),
            self.solver.options()?,
            self.lattice,
            self.output_dir.as_ref().map(|d| base.join(d)),
        )
    }
}

impl ExperimentPlan {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        spec_path: PathBuf,
        spec: PopulationSpec<f64>,
        ns: Vec<usize>,
        seeds: usize,
        base_seed: u64,
        assignment: AssignmentMode,
        test_functions: Vec<TestFunction>,
        solver: SolverOptions,
        lattice: LatticeSpec,
        output_dir: Option<PathBuf>,
    ) -> Result<Self> {
        if ns.is_empty() || ns[0] == 0 || ns.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Plan(format!(
                "ns must be positive and strictly increasing, got {ns:?}"
            )));
        }
        if seeds < 2 {
            return Err(Error::Plan(format!(
                "need at least 2 seeds per N, got {seeds}"
            )));
        }
        if test_functions.is_empty() {
            return Err(Error::Plan("no test functions".into()));
        }
        for h in &test_functions {
            h.weights(&spec)
                .map_err(|e| Error::Plan(format!("test function `{h}`: {e}")))?;
        }
        let lattice = EvaluationLattice::uniform(spec.horizon(), lattice)?;
        Ok(Self {
            spec_path,
            spec,
            ns,
            seeds,
            base_seed,
            assignment,
            test_functions,
            solver,
            lattice,
            output_dir,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        PlanFile::parse(&text)?.resolve(base)
    }

    /// Seed of replica `s` at particle count `n`.
    pub fn replica_seed(&self, n: usize, s: usize) -> u64 {
        crate::stream::derive_seed(self.base_seed, &[n as u64, s as u64])
    }
}
