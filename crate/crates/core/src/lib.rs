//! Serial production line model: a chain of transport equations coupled
//! through buffer queues, discretized with an upwind scheme, monitored with a
//! discrete Lyapunov function and driven by boundary feedback on the inflow.

pub mod cli;
pub mod config;
pub mod discretization;
pub mod error;
pub mod experiments;
pub mod feedback;
pub mod lyapunov;
pub mod network;
pub mod oracle;
pub mod output;
pub mod scenario;
pub mod simulate;
pub mod state;

pub use discretization::{step, CouplingMode};
pub use error::{ConfigIssue, ExperimentError, ModelError, ValidationError};
pub use feedback::{kappa_bound, FeedbackLaw};
pub use lyapunov::{discrete_v, LyapunovWeights};
pub use network::{validate_network, CoordConvention, GridSpec, NetworkSpec, ValidatedConfig};
pub use scenario::Scenario;
pub use simulate::{simulate, RunConfig, Trajectory};
pub use state::SimState;
