//! Configuration, initial data, study drivers and persistence.

pub mod config;
pub mod initial;
pub mod io;
pub mod studies;

pub use config::{Branch, RunConfig};
pub use initial::{initial_condition, InitialKind};
pub use io::{read_snapshot, write_csv, write_snapshot, Snapshot};
pub use studies::{
    check_identities, epsilon_sweep, run_single, self_convergence, simulate, stability_pair, ConvergenceReport,
    IdentityReport, RunOutcome, StabilityReport, SweepReport,
};
