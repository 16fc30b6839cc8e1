// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::GridError;
use crate::grid::battery::BatterySpec;
use crate::hvac::HvacParams;
use crate::units::Energy;

pub type ProsumerId = u32;
pub type FeederId = u32;

pub const DEFAULT_RELAY_LIMIT_KW: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Producer,
    Consumer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProsumerSpec {
    pub id: ProsumerId,
    pub role: Role,
    pub feeder_id: FeederId,
    /// 1-based position along the feeder's chain, counted from the relay.
    #[serde(default)]
    pub chain_position: u32,
    /// kWh per interval; repeats when the run is longer than the profile.
    #[serde(default)]
    pub generation_profile: Vec<Energy>,
    #[serde(default)]
    pub load_profile: Vec<Energy>,
    #[serde(default)]
    pub battery: Option<BatterySpec>,
    #[serde(default)]
    pub hvac: Option<HvacParams>,
}

impl ProsumerSpec {
    pub fn generation_at(&self, interval: u32) -> Energy {
        profile_at(&self.generation_profile, interval)
    }

    pub fn load_at(&self, interval: u32) -> Energy {
        profile_at(&self.load_profile, interval)
    }

    pub fn is_producer(&self) -> bool {
        self.role == Role::Producer
    }
}

fn profile_at(profile: &[Energy], interval: u32) -> Energy {
    if profile.is_empty() {
        Energy::ZERO
    } else {
        profile[interval as usize % profile.len()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feeder {
    pub id: FeederId,
}

/// Overcurrent relay between a feeder's prosumer chain and the backbone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Relay {
    pub feeder_id: FeederId,
    pub limit_kw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeederTopology {
    pub feeders: Vec<Feeder>,
    pub relays: Vec<Relay>,
    pub prosumers: Vec<ProsumerSpec>,
}

impl FeederTopology {
    pub fn validate(&self) -> Result<(), GridError> {
        let feeder_ids: BTreeSet<FeederId> = self.feeders.iter().map(|f| f.id).collect();
        if feeder_ids.len() != self.feeders.len() {
            return Err(GridError::InvalidTopology("duplicate feeder id".into()));
        }
        let mut relayed = BTreeSet::new();
        for relay in &self.relays {
            if !feeder_ids.contains(&relay.feeder_id) {
                return Err(GridError::UnknownFeeder(relay.feeder_id));
            }
            if !relayed.insert(relay.feeder_id) {
                return Err(GridError::InvalidTopology(format!(
                    "feeder {} has more than one relay",
                    relay.feeder_id
                )));
            }
            if !(relay.limit_kw >= 0.0) {
                return Err(GridError::InvalidTopology(format!(
                    "relay on feeder {} has a negative limit",
                    relay.feeder_id
                )));
            }
        }
        if relayed.len() != feeder_ids.len() {
            return Err(GridError::InvalidTopology("every feeder needs a relay".into()));
        }
        let mut ids = BTreeSet::new();
        for p in &self.prosumers {
            if !ids.insert(p.id) {
                return Err(GridError::InvalidTopology(format!("duplicate prosumer id {}", p.id)));
            }
            if !feeder_ids.contains(&p.feeder_id) {
                return Err(GridError::UnknownFeeder(p.feeder_id));
            }
            if p.generation_profile.iter().any(|g| g.wh() < 0) || p.load_profile.iter().any(|l| l.wh() < 0) {
                return Err(GridError::InvalidTopology(format!("prosumer {} has a negative profile value", p.id)));
            }
            if p.role == Role::Consumer && p.generation_profile.iter().any(|g| g.is_positive()) {
                return Err(GridError::InvalidTopology(format!("consumer {} has generation", p.id)));
            }
            if let Some(b) = &p.battery {
                b.validate().map_err(|e| GridError::InvalidTopology(format!("prosumer {}: {e}", p.id)))?;
            }
        }
        Ok(())
    }

    pub fn prosumer(&self, id: ProsumerId) -> Option<&ProsumerSpec> {
        self.prosumers.iter().find(|p| p.id == id)
    }

    pub fn feeder_of(&self, id: ProsumerId) -> Result<FeederId, GridError> {
        self.prosumer(id).map(|p| p.feeder_id).ok_or(GridError::UnknownProsumer(id))
    }

    /// Prosumer id to feeder id lookup table.
    pub fn feeder_index(&self) -> BTreeMap<ProsumerId, FeederId> {
        self.prosumers.iter().map(|p| (p.id, p.feeder_id)).collect()
    }

    pub fn relay_limit_kw(&self, feeder: FeederId) -> Option<f64> {
        self.relays.iter().find(|r| r.feeder_id == feeder).map(|r| r.limit_kw)
    }

    pub fn count_role(&self, role: Role) -> usize {
        self.prosumers.iter().filter(|p| p.role == role).count()
    }

    pub fn prosumers_on(&self, feeder: FeederId) -> impl Iterator<Item = &ProsumerSpec> {
        self.prosumers.iter().filter(move |p| p.feeder_id == feeder)
    }
}

/// Chain layout of each feeder from the relay outward. `P` marks a producer
/// junction, `C` a consumer junction.
const DEFAULT_LAYOUT: [&str; 11] = [
    "PPCCCCCCC",
    "CCCCCCCCCCCCCCCC",
    "CCCCC",
    "CCCCCCCCCCCCC",
    "CCCCCCCC",
    "C",
    "PCCCCCCCCCC",
    "CCCCCCCCCCCCCCCCP",
    "CCCCC",
    "CCCCCCCCCCPCC",
    "CCCC",
];

/// The 11-feeder microgrid: 102 prosumers, 5 producers on feeders 1, 7, 8
/// and 10, and a 20 kW relay on every feeder. Profiles are left empty.
pub fn default_microgrid() -> FeederTopology {
    let mut prosumers = Vec::with_capacity(102);
    let mut next_id = 1;
    for (idx, layout) in DEFAULT_LAYOUT.iter().enumerate() {
        let feeder_id = idx as FeederId + 1;
        for (pos, kind) in layout.chars().enumerate() {
            let role = if kind == 'P' { Role::Producer } else { Role::Consumer };
            prosumers.push(ProsumerSpec {
                id: next_id,
                role,
                feeder_id,
                chain_position: pos as u32 + 1,
                generation_profile: Vec::new(),
                load_profile: Vec::new(),
                battery: None,
                hvac: None,
            });
            next_id += 1;
        }
    }
    FeederTopology {
        feeders: (1..=11).map(|id| Feeder { id }).collect(),
        relays: (1..=11)
            .map(|feeder_id| Relay { feeder_id, limit_kw: DEFAULT_RELAY_LIMIT_KW })
            .collect(),
        prosumers,
    }
}
