// SPDX-License-Identifier: Apache-2.0

//! Solution checking and best-solution selection.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::MarketError;
use crate::grid::{check_feeder_limits, relay_flows, FeederId, ProsumerId};
use crate::market::auction::Side;
use crate::market::ledger::{Ledger, Solution};
use crate::market::solver::{offer_availability, GridContext};
use crate::units::{Energy, Price};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    OverFill { offer: u64, filled: Energy, available: Energy },
    NonPositiveQuantity { offer: u64 },
    WrongInterval { offer: u64, interval: u32, target: u32 },
    IntervalMembership { offer: u64, interval: u32 },
    SideMismatch { offer: u64 },
    OwnerMismatch { offer: u64, expected: ProsumerId, found: ProsumerId },
    Reservation { sell_offer: u64, buy_offer: u64, price: Price },
    FeederLimit { feeder_id: FeederId, flow_kw: f64, limit_kw: f64 },
    Battery { owner: ProsumerId, discharge: Energy, limit: Energy },
    Objective { stated: Energy, actual: Energy },
    UnknownProsumer { id: ProsumerId },
    Dangling { offer: u64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::OverFill { offer, filled, available } => {
                write!(f, "over-fill: offer {offer} filled {filled} of {available} kWh")
            }
            Violation::NonPositiveQuantity { offer } => write!(f, "non-positive match quantity on offer {offer}"),
            Violation::WrongInterval { offer, interval, target } => {
                write!(f, "match on offer {offer} delivers in {interval}, solution targets {target}")
            }
            Violation::IntervalMembership { offer, interval } => {
                write!(f, "interval membership: offer {offer} does not cover {interval}")
            }
            Violation::SideMismatch { offer } => write!(f, "offer {offer} used on the wrong side"),
            Violation::OwnerMismatch { offer, expected, found } => {
                write!(f, "offer {offer} belongs to {expected}, match names {found}")
            }
            Violation::Reservation { sell_offer, buy_offer, price } => {
                write!(f, "reservation: price {price} outside bounds of offers {sell_offer}/{buy_offer}")
            }
            Violation::FeederLimit { feeder_id, flow_kw, limit_kw } => {
                write!(f, "feeder limit: feeder {feeder_id} at {flow_kw:.3} kW exceeds {limit_kw:.3} kW")
            }
            Violation::Battery { owner, discharge, limit } => {
                write!(f, "battery: prosumer {owner} discharges {discharge} kWh, limit {limit}")
            }
            Violation::Objective { stated, actual } => write!(f, "objective {stated} does not match fills {actual}"),
            Violation::UnknownProsumer { id } => write!(f, "unknown prosumer {id}"),
            Violation::Dangling { offer } => write!(f, "dangling offer reference {offer}"),
        }
    }
}

/// Checks a solution against the ledger. Returns every violation found; an
/// empty list means valid. A reference to an offer missing from the ledger
/// is an error rather than a violation.
pub fn validate_solution(
    ledger: &Ledger,
    solution: &Solution,
    ctx: &GridContext<'_>,
) -> Result<Vec<Violation>, MarketError> {
    for r in solution.offer_refs() {
        if ledger.offer(r).is_none() {
            return Err(MarketError::DanglingOffer(r));
        }
    }
    let target = solution.target_interval;
    let mut out = Vec::new();
    let mut filled: BTreeMap<u64, Energy> = BTreeMap::new();
    let mut discharge: BTreeMap<ProsumerId, Energy> = BTreeMap::new();

    for m in &solution.matches {
        let sell = ledger.offer(m.sell_offer).expect("checked above");
        let buy = ledger.offer(m.buy_offer).expect("checked above");
        if !m.quantity.is_positive() {
            out.push(Violation::NonPositiveQuantity { offer: m.sell_offer });
        }
        if m.interval != target {
            out.push(Violation::WrongInterval { offer: m.sell_offer, interval: m.interval, target });
        }
        for (p, side, owner) in [(sell, Side::Sell, m.seller_id), (buy, Side::Buy, m.buyer_id)] {
            if p.offer.side != side {
                out.push(Violation::SideMismatch { offer: p.seq });
            }
            if p.offer.owner_id != owner {
                out.push(Violation::OwnerMismatch { offer: p.seq, expected: p.offer.owner_id, found: owner });
            }
            if !p.offer.covers(m.interval) {
                out.push(Violation::IntervalMembership { offer: p.seq, interval: m.interval });
            }
        }
        let lo_ok = sell.offer.reservation_price.is_none_or(|r| m.price >= r);
        let hi_ok = buy.offer.reservation_price.is_none_or(|r| m.price <= r);
        if !(lo_ok && hi_ok) {
            out.push(Violation::Reservation { sell_offer: m.sell_offer, buy_offer: m.buy_offer, price: m.price });
        }
        *filled.entry(m.sell_offer).or_default() += m.quantity;
        *filled.entry(m.buy_offer).or_default() += m.quantity;
        if sell.offer.from_storage(m.interval) {
            *discharge.entry(sell.offer.owner_id).or_default() += m.quantity;
        }
    }
    for b in &solution.bulk {
        *filled.entry(b.buy_offer).or_default() += b.quantity;
    }

    for (&seq, &q) in &filled {
        let posted = ledger.offer(seq).expect("checked above");
        let available = offer_availability(posted, ledger, target, ctx.batteries);
        if q > available {
            out.push(Violation::OverFill { offer: seq, filled: q, available });
        }
    }
    for (&owner, &d) in &discharge {
        let limit = ctx.batteries.discharge_limit(owner);
        if d > limit {
            out.push(Violation::Battery { owner, discharge: d, limit });
        }
    }
    let actual: Energy = solution.matches.iter().map(|m| m.quantity).sum();
    if actual != solution.objective {
        out.push(Violation::Objective { stated: solution.objective, actual });
    }
    match relay_flows(solution.matches.iter().map(|m| m.transfer()), ctx.topology, ctx.interval_seconds) {
        Ok(flows) => {
            for v in check_feeder_limits(&flows, ctx.topology) {
                out.push(Violation::FeederLimit { feeder_id: v.feeder_id, flow_kw: v.flow_kw, limit_kw: v.limit_kw });
            }
        }
        Err(crate::error::GridError::UnknownProsumer(id)) => out.push(Violation::UnknownProsumer { id }),
        Err(_) => {}
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub seq: u64,
    pub objective: Energy,
    pub valid: bool,
}

/// Valid candidate with the largest objective; ties go to the earliest seq.
pub fn select_best_solution(candidates: &[ScoredCandidate]) -> Option<u64> {
    candidates
        .iter()
        .filter(|c| c.valid)
        .min_by_key(|c| (std::cmp::Reverse(c.objective), c.seq))
        .map(|c| c.seq)
}

/// Validates every solution posted for `interval`.
pub fn score_candidates(
    ledger: &Ledger,
    interval: u32,
    ctx: &GridContext<'_>,
) -> Vec<(ScoredCandidate, Vec<Violation>)> {
    ledger
        .solutions_for(interval)
        .into_iter()
        .map(|(seq, sol)| {
            let violations = match validate_solution(ledger, sol, ctx) {
                Ok(v) => v,
                Err(MarketError::DanglingOffer(offer)) => vec![Violation::Dangling { offer }],
                Err(_) => vec![Violation::Dangling { offer: seq }],
            };
            (ScoredCandidate { seq, objective: sol.objective, valid: violations.is_empty() }, violations)
        })
        .collect()
}
