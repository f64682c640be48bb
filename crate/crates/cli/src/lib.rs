//! Scenario-driven front end for the `stemlight` solvers.

pub mod artifacts;
pub mod error;
pub mod plotdata;
pub mod run;
pub mod scenario;

pub use error::CliError;
pub use plotdata::emit_plotdata;
pub use run::{run, RunOptions, RunReport};
pub use scenario::{parse_scenario, parse_scenario_str, Kind, Scenario};
