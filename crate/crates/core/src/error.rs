use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} out of domain: {detail}")]
    Domain { what: &'static str, detail: String },

    #[error("invalid spec at `{path}`: {msg}")]
    InvalidSpec { path: String, msg: String },

    #[error("config parse error{}: {msg}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse { line: Option<usize>, msg: String },

    #[error("rate {rate} exceeds thinning envelope {envelope} at t={time}")]
    EnvelopeBreach { rate: f64, envelope: f64, time: f64 },

    #[error("fixed-point iteration did not converge in {iterations} iterations (last residual {last:e})")]
    NonConvergence {
        iterations: usize,
        last: f64,
        history: Vec<f64>,
    },

    #[error("grid: {0}")]
    Grid(String),

    #[error("spec fingerprint mismatch: {left:016x} vs {right:016x}")]
    SpecMismatch { left: u64, right: u64 },

    #[error("unknown particle {0}")]
    UnknownParticle(usize),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("experiment plan: {0}")]
    Plan(String),

    #[error("candidate stream misconfiguration: {0}")]
    Stream(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn domain(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            what,
            detail: detail.into(),
        }
    }

    pub(crate) fn spec(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::InvalidSpec {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
