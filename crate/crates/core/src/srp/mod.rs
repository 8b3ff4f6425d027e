//! Finite-N stochastic ranking process: the original dynamics, the
//! flow-driven variant and their coupling.

mod engine;
mod index;
mod log;

pub use engine::{
    simulate, simulate_coupled, simulate_flow_driven, CouplingRecord, ParticleSystem, StreamMode,
};
pub use index::RankIndex;
pub use log::{Event, EventLog, LogKind};
