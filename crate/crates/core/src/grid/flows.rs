// SPDX-License-Identifier: Apache-2.0

//! Relay flows induced by a set of bilateral trades.
//!
//! A trade between prosumers on different feeders crosses both relays; a trade
//! inside one feeder crosses none. Net flow per feeder is exports minus
//! imports, and the relay sees its magnitude averaged over the interval.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::GridError;
use crate::grid::topology::{FeederId, FeederTopology, ProsumerId};
use crate::units::Energy;

/// One delivery of energy from a seller to a buyer within an interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transfer {
    pub from: ProsumerId,
    pub to: ProsumerId,
    pub energy: Energy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FeederFlows {
    /// Signed net export per feeder (positive leaves the feeder).
    pub net: BTreeMap<FeederId, Energy>,
    pub interval_seconds: u32,
}

impl FeederFlows {
    pub fn zero(topology: &FeederTopology, interval_seconds: u32) -> Self {
        FeederFlows {
            net: topology.feeders.iter().map(|f| (f.id, Energy::ZERO)).collect(),
            interval_seconds,
        }
    }

    /// Relay flow magnitude on `feeder` in kW.
    pub fn kw(&self, feeder: FeederId) -> f64 {
        self.net.get(&feeder).copied().unwrap_or_default().abs().to_kw(self.interval_seconds)
    }

    pub fn magnitudes_kw(&self) -> BTreeMap<FeederId, f64> {
        self.net.keys().map(|f| (*f, self.kw(*f))).collect()
    }

    /// Elementwise sum; both operands must come from the same topology.
    pub fn combine(&self, other: &FeederFlows) -> FeederFlows {
        let mut net = self.net.clone();
        for (f, e) in &other.net {
            *net.entry(*f).or_default() += *e;
        }
        FeederFlows { net, interval_seconds: self.interval_seconds }
    }
}

pub fn relay_flows<I>(trades: I, topology: &FeederTopology, interval_seconds: u32) -> Result<FeederFlows, GridError>
where
    I: IntoIterator<Item = Transfer>,
{
    let index = topology.feeder_index();
    let mut flows = FeederFlows::zero(topology, interval_seconds);
    for t in trades {
        let src = *index.get(&t.from).ok_or(GridError::UnknownProsumer(t.from))?;
        let dst = *index.get(&t.to).ok_or(GridError::UnknownProsumer(t.to))?;
        if src == dst {
            continue;
        }
        *flows.net.entry(src).or_default() += t.energy;
        *flows.net.entry(dst).or_default() -= t.energy;
    }
    Ok(flows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeederViolation {
    pub feeder_id: FeederId,
    pub flow_kw: f64,
    pub limit_kw: f64,
}

/// Feeders whose relay flow strictly exceeds the limit. A flow exactly at the
/// limit is admitted. The comparison is done in Wh to avoid rounding.
pub fn check_feeder_limits(flows: &FeederFlows, topology: &FeederTopology) -> Vec<FeederViolation> {
    let mut out = Vec::new();
    for relay in &topology.relays {
        let net = flows.net.get(&relay.feeder_id).copied().unwrap_or_default().abs();
        let cap = relay_capacity(relay.limit_kw, flows.interval_seconds);
        if net > cap {
            out.push(FeederViolation {
                feeder_id: relay.feeder_id,
                flow_kw: flows.kw(relay.feeder_id),
                limit_kw: relay.limit_kw,
            });
        }
    }
    out
}

/// Energy a relay admits over one interval.
pub fn relay_capacity(limit_kw: f64, interval_seconds: u32) -> Energy {
    Energy::from_kw(limit_kw, interval_seconds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::topology::default_microgrid;

    fn t(from: ProsumerId, to: ProsumerId, kwh: f64) -> Transfer {
        Transfer { from, to, energy: Energy::from_kwh(kwh) }
    }

    #[test]
    fn no_trades_no_flow() {
        let topo = default_microgrid();
        let flows = relay_flows(Vec::new(), &topo, 900).unwrap();
        assert!(flows.magnitudes_kw().values().all(|v| *v == 0.0));
        assert!(check_feeder_limits(&flows, &topo).is_empty());
    }

    #[test]
    fn intra_feeder_trade_stays_local() {
        let topo = default_microgrid();
        // ids 1 and 3 are both on feeder 1
        let flows = relay_flows([t(1, 3, 5.0)], &topo, 900).unwrap();
        assert_eq!(flows.kw(1), 0.0);
    }

    #[test]
    fn cross_feeder_trade_loads_both_relays() {
        let topo = default_microgrid();
        // id 10 is the first consumer on feeder 2
        assert_eq!(topo.feeder_of(10).unwrap(), 2);
        let flows = relay_flows([t(1, 10, 5.0)], &topo, 900).unwrap();
        assert_eq!(flows.kw(1), 20.0);
        assert_eq!(flows.kw(2), 20.0);
        assert!(check_feeder_limits(&flows, &topo).is_empty());
    }

    #[test]
    fn limit_boundary_and_violation() {
        let topo = default_microgrid();
        let at_limit = relay_flows([t(1, 10, 5.0)], &topo, 900).unwrap();
        assert!(check_feeder_limits(&at_limit, &topo).is_empty());
        let over = relay_flows([t(1, 10, 6.25)], &topo, 900).unwrap();
        assert_eq!(over.kw(1), 25.0);
        let v = check_feeder_limits(&over, &topo);
        assert_eq!(v.len(), 2);
        assert_eq!(v[0].feeder_id, 1);
        assert_eq!(v[0].flow_kw, 25.0);
    }

    #[test]
    fn unknown_prosumer() {
        let topo = default_microgrid();
        assert_eq!(relay_flows([t(1, 999, 1.0)], &topo, 900), Err(GridError::UnknownProsumer(999)));
    }

    #[test]
    fn opposite_trades_cancel() {
        let topo = default_microgrid();
        let flows = relay_flows([t(1, 10, 3.0), t(11, 2, 3.0)], &topo, 900).unwrap();
        assert_eq!(flows.kw(1), 0.0);
        assert_eq!(flows.kw(2), 0.0);
    }
}
