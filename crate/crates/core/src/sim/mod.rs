// SPDX-License-Identifier: Apache-2.0

pub mod clock;
pub mod config;
pub mod engine;
pub mod export;
pub mod presets;

pub use clock::SimClock;
pub use config::{MarketMode, ScenarioConfig, TopologyRef};
pub use engine::{init_scenario, run_to_completion, Event, EventKind, IntervalReport, RunResult, RunSummary, Simulation};
pub use export::export_run;
pub use presets::{preset_config, run_all, run_preset, run_sweep, sweep_configs, PresetOutcome, PRESETS};
