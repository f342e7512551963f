//! Scenario-driven simulation, sweeps, multiplier tuning and result files.

pub mod engine;
pub mod output;
pub mod scenario;
pub mod sweep;
pub mod tune;

pub use engine::{run, scenario_hash, stream, LearningRow, RunResult, Stream};
pub use scenario::{ChannelSpec, CostSpec, Mode, MultiHop, PolicySpec, Scenario, SingleHop, TopologySpec, TrafficSpec, SCHEMA_VERSION};
pub use sweep::{set_axis, sweep, Job, SweepRow};
pub use tune::{adapt_multipliers, Targets, TuneRecord};
