//! Machine model: an in-order core with an L1 cache, MSHR-limited
//! prefetching, per-run frequency, and an activity-based power model.

mod cache;
mod config;
mod power;
mod schedule;
mod sim;

pub use cache::Cache;
pub use config::{
    ghz_to_mhz, ns_to_ps, ConfigError, L1Config, MachineConfig, PowerConfig, ReplacementPolicy, VoltageCurve,
};
pub use power::{power, PowerError};
pub use schedule::{build_schedule, slice_count, Charge, Mode, PhaseRun, PhaseSchedule, PhaseTarget};
pub use sim::{count_slices, normalize, simulate, RunRecord, SimError, SimReport, Totals};
