// SPDX-License-Identifier: Apache-2.0

//! Deterministic transactive energy market simulator.

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod attacks;
pub mod error;
pub mod grid;
pub mod hvac;
pub mod market;
pub mod net;
pub mod rng;
pub mod sim;
pub mod units;

pub use error::{ConfigError, GridError, HvacError, MarketError, NetError, SimError, SimResult};
pub use units::{Energy, Money, Price, SimTime};
