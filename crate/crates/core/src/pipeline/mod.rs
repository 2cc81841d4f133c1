//! Commands over a persistent, locked run directory.

mod commands;
mod config;
mod rundir;

pub use commands::*;
pub use config::{ClassifierConfig, IssueSection, MapperConfig, Overrides, RunConfig, SimulatorSection, SlotConfig};
pub use rundir::{RunDir, RunManifest, StageRecord, MANIFEST};
