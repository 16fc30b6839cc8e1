// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

use crate::units::Energy;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("unknown prosumer id {0}")]
    UnknownProsumer(u32),
    #[error("unknown feeder id {0}")]
    UnknownFeeder(u32),
    #[error("overcharge: soc {soc} + {delta} exceeds capacity {capacity}")]
    Overcharge { soc: Energy, delta: Energy, capacity: Energy },
    #[error("overdraw: soc {soc} cannot supply {delta}")]
    Overdraw { soc: Energy, delta: Energy },
    #[error("rate-limit breach: |{delta}| exceeds {limit}")]
    RateLimit { delta: Energy, limit: Energy },
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HvacError {
    #[error("invalid hvac parameters: {0}")]
    InvalidParams(String),
    #[error("non-positive sigma: sigma_t={sigma_t}, sigma_p={sigma_p}")]
    NonPositiveSigma { sigma_t: f64, sigma_p: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MarketError {
    #[error("bids span several intervals ({0} and {1})")]
    MixedIntervals(u32, u32),
    #[error("stale interval {interval} (current {current})")]
    StaleInterval { interval: u32, current: u32 },
    #[error("interval {interval} outside prediction window {window} at interval {current}")]
    OutsideWindow { interval: u32, window: u32, current: u32 },
    #[error("offer has an empty interval set")]
    EmptyIntervals,
    #[error("non-positive quantity")]
    NonPositiveQuantity,
    #[error("dangling offer reference {0}")]
    DanglingOffer(u64),
    #[error("interval {0} already finalized")]
    AlreadyFinalized(u32),
    #[error("solution for finalized interval {0} rejected")]
    SolutionAfterFinalization(u32),
    #[error("solution references offer {offer} not older than entry {entry}")]
    FutureReference { offer: u64, entry: u64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetError {
    #[error("unregistered endpoint {0}")]
    UnregisteredEndpoint(String),
    #[error("invalid link model: {0}")]
    InvalidLink(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("unknown topology '{0}'")]
    UnknownTopology(String),
    #[error("invalid field `{field}`: {reason}")]
    InvalidField { field: String, reason: String },
    #[error("non-positive horizon")]
    NonPositiveHorizon,
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Hvac(#[from] HvacError),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("clock past horizon ({0} intervals)")]
    PastHorizon(u32),
    #[error("run halted at interval {interval}: {reason}")]
    Halted { interval: u32, reason: String },
    #[error("export failed: {0}")]
    Export(#[from] std::io::Error),
}

pub type SimResult<T> = Result<T, SimError>;
