// SPDX-License-Identifier: Apache-2.0

//! Feeder topology, relay limits, storage and synthetic profiles.

pub mod battery;
pub mod flows;
pub mod profiles;
pub mod topology;

pub use battery::{battery_step, BatterySpec, BatteryState};
pub use flows::{check_feeder_limits, relay_capacity, relay_flows, FeederFlows, FeederViolation, Transfer};
pub use profiles::{synth_profiles, DayShape, ProsumerProfile};
pub use topology::{default_microgrid, Feeder, FeederId, FeederTopology, ProsumerId, ProsumerSpec, Relay, Role};
