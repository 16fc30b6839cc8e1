// SPDX-License-Identifier: Apache-2.0

//! Declarative attack scenarios.
//!
//! Attacks act at two points only: on a bid or offer right after its owner
//! forms it, and on the copy of an offer notified to one solver. With no
//! scenarios configured the layer draws nothing and changes nothing.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::grid::{FeederTopology, ProsumerId, Role};
use crate::market::auction::{Bid, Side};
use crate::market::ledger::{Offer, PostedOffer};
use crate::net::{Endpoint, Message, MessageKind};
use crate::rng::{self, StreamRng};
use crate::units::{Energy, Price};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SaturateMode {
    High,
    Low,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackKind {
    BidScale {
        price_factor: f64,
        qty_factor: f64,
    },
    BidSaturate {
        mode: SaturateMode,
        /// Currency per kWh.
        price_bound: f64,
        /// kWh per bid.
        qty_bound: f64,
    },
    MessageDrop {
        drop_prob: f64,
        kinds: Vec<MessageKind>,
    },
    SolverPartition {
        target_solver: u32,
        inner: Box<AttackScenario>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "select", rename_all = "snake_case", deny_unknown_fields)]
pub enum Targets {
    All,
    Ids { ids: Vec<ProsumerId> },
    /// Seeded subset of the consumers, `round(fraction * consumers)` strong.
    Fraction { fraction: f64 },
}

/// Half-open interval range `[start, end)`; an absent end runs to the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActiveRange {
    #[serde(default)]
    pub start: u32,
    #[serde(default)]
    pub end: Option<u32>,
}

impl ActiveRange {
    pub fn always() -> Self {
        ActiveRange { start: 0, end: None }
    }

    pub fn contains(&self, k: u32) -> bool {
        k >= self.start && self.end.is_none_or(|e| k < e)
    }
}

impl Default for ActiveRange {
    fn default() -> Self {
        ActiveRange::always()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackScenario {
    #[serde(default)]
    pub name: Option<String>,
    pub kind: AttackKind,
    #[serde(default = "default_targets")]
    pub targets: Targets,
    #[serde(default)]
    pub active_intervals: ActiveRange,
}

fn default_targets() -> Targets {
    Targets::All
}

impl AttackScenario {
    pub fn label(&self, index: usize) -> String {
        self.name.clone().unwrap_or_else(|| format!("attack{index}"))
    }

    pub fn validate(&self, horizon: u32, solver_count: u32) -> Result<(), ConfigError> {
        let bad = |field: &str, reason: &str| {
            Err(ConfigError::InvalidField { field: format!("attack_list.{field}"), reason: reason.to_string() })
        };
        match &self.kind {
            AttackKind::BidScale { price_factor, qty_factor } => {
                if !(*price_factor >= 0.0) || !(*qty_factor >= 0.0) {
                    return bad("kind", "scale factors must be >= 0");
                }
            }
            AttackKind::BidSaturate { price_bound, qty_bound, .. } => {
                if !(*price_bound >= 0.0) || !(*qty_bound >= 0.0) {
                    return bad("kind", "saturation bounds must be >= 0");
                }
            }
            AttackKind::MessageDrop { drop_prob, .. } => {
                if !(0.0..=1.0).contains(drop_prob) {
                    return bad("kind.drop_prob", "must be in [0, 1]");
                }
            }
            AttackKind::SolverPartition { target_solver, inner } => {
                if *target_solver >= solver_count {
                    return bad("kind.target_solver", &format!("unknown solver {target_solver}"));
                }
                if matches!(inner.kind, AttackKind::SolverPartition { .. }) {
                    return bad("kind.inner", "partitions do not nest");
                }
                inner.validate(horizon, solver_count)?;
            }
        }
        if let Targets::Fraction { fraction } = self.targets {
            if !(0.0..=1.0).contains(&fraction) {
                return bad("targets.fraction", "must be in [0, 1]");
            }
        }
        let r = self.active_intervals;
        if let Some(end) = r.end {
            if end <= r.start || end > horizon {
                return bad("active_intervals", "range must be nonempty and within the horizon");
            }
        } else if r.start >= horizon {
            return bad("active_intervals", "start beyond horizon");
        }
        Ok(())
    }
}

/// Scales price and quantity; a zero quantity removes the bid.
pub fn apply_bid_scale(bid: &Bid, price_factor: f64, qty_factor: f64) -> Option<Bid> {
    let quantity = bid.quantity.scale(qty_factor);
    if !quantity.is_positive() {
        return None;
    }
    Some(Bid { price: bid.price.scale(price_factor), quantity, ..bid.clone() })
}

/// Replaces price and quantity with the bounds. `mode` records the direction
/// for reporting; the price is the bound either way.
pub fn apply_bid_saturate(bid: &Bid, _mode: SaturateMode, price_bound: f64, qty_bound: f64) -> Option<Bid> {
    let quantity = Energy::from_kwh(qty_bound);
    quantity.is_positive().then(|| Bid { price: Price::from_f64(price_bound), quantity, ..bid.clone() })
}

/// Seeded Bernoulli drop for messages of a listed kind.
pub fn apply_message_drop(kind: MessageKind, drop_prob: f64, kinds: &[MessageKind], rng: &mut StreamRng) -> bool {
    if !kinds.contains(&kind) {
        return false;
    }
    rng.gen::<f64>() < drop_prob
}

/// Applies `inner` to the copy of an offer notified to `solver`, leaving
/// every other solver's copy untouched.
pub fn apply_solver_partition(
    solver: u32,
    target_solver: u32,
    offer: &PostedOffer,
    inner: impl FnOnce(&Offer) -> Option<Offer>,
) -> Option<PostedOffer> {
    if solver != target_solver {
        return Some(offer.clone());
    }
    inner(&offer.offer).map(|o| PostedOffer { offer: o, ..offer.clone() })
}

fn scale_offer(offer: &Offer, price_factor: f64, qty_factor: f64) -> Option<Offer> {
    let quantity = offer.quantity.scale(qty_factor);
    quantity.is_positive().then(|| Offer {
        quantity,
        reservation_price: offer.reservation_price.map(|p| p.scale(price_factor)),
        ..offer.clone()
    })
}

fn saturate_offer(offer: &Offer, price_bound: f64, qty_bound: f64) -> Option<Offer> {
    let quantity = Energy::from_kwh(qty_bound);
    quantity.is_positive().then(|| Offer {
        quantity,
        reservation_price: Some(Price::from_f64(price_bound)),
        ..offer.clone()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackAction {
    Scaled,
    Saturated,
    Removed,
    Dropped,
    Partitioned,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackEvent {
    pub interval: u32,
    pub attack: usize,
    pub owner: Option<ProsumerId>,
    pub action: AttackAction,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackRow {
    pub interval: u32,
    pub manipulated: u64,
    pub dropped: u64,
    pub affected_owners: u64,
}

/// Every manipulation, in order. Per-interval counts derive from this log.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackReport {
    pub events: Vec<AttackEvent>,
}

impl AttackReport {
    pub fn rows(&self, horizon: u32) -> Vec<AttackRow> {
        let mut rows: Vec<AttackRow> = (0..horizon).map(|interval| AttackRow { interval, ..Default::default() }).collect();
        let mut owners: BTreeMap<u32, BTreeSet<ProsumerId>> = BTreeMap::new();
        for e in &self.events {
            let Some(row) = rows.get_mut(e.interval as usize) else { continue };
            match e.action {
                AttackAction::Dropped => row.dropped += 1,
                _ => row.manipulated += 1,
            }
            if let Some(o) = e.owner {
                owners.entry(e.interval).or_default().insert(o);
            }
        }
        for (k, set) in owners {
            if let Some(row) = rows.get_mut(k as usize) {
                row.affected_owners = set.len() as u64;
            }
        }
        rows
    }

    pub fn to_csv(&self, horizon: u32) -> String {
        let mut s = String::from("interval,manipulated,dropped,affected_owners\n");
        for r in self.rows(horizon) {
            let _ = writeln!(s, "{},{},{},{}", r.interval, r.manipulated, r.dropped, r.affected_owners);
        }
        s
    }

    pub fn count(&self, action: AttackAction) -> usize {
        self.events.iter().filter(|e| e.action == action).count()
    }
}

#[derive(Debug, Clone)]
struct Armed {
    scenario: AttackScenario,
    targets: Option<BTreeSet<ProsumerId>>,
    inner_targets: Option<BTreeSet<ProsumerId>>,
    drop_rng: StreamRng,
}

fn resolve(targets: &Targets, consumers: &[ProsumerId], rng: &mut StreamRng) -> Option<BTreeSet<ProsumerId>> {
    match targets {
        Targets::All => None,
        Targets::Ids { ids } => Some(ids.iter().copied().collect()),
        Targets::Fraction { fraction } => {
            let n = (fraction * consumers.len() as f64).round() as usize;
            let mut pool = consumers.to_vec();
            pool.shuffle(rng);
            Some(pool.into_iter().take(n).collect())
        }
    }
}

fn hits(targets: &Option<BTreeSet<ProsumerId>>, owner: ProsumerId) -> bool {
    targets.as_ref().is_none_or(|t| t.contains(&owner))
}

/// Runtime state for the configured scenarios.
#[derive(Debug, Clone)]
pub struct AttackLayer {
    armed: Vec<Armed>,
    report: AttackReport,
}

impl AttackLayer {
    pub fn new(scenarios: &[AttackScenario], seed: u64, topology: &FeederTopology) -> Self {
        let mut consumers: Vec<ProsumerId> =
            topology.prosumers.iter().filter(|p| p.role == Role::Consumer).map(|p| p.id).collect();
        consumers.sort_unstable();
        let armed = scenarios
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut pick = rng::stream(seed, &format!("{}/{i}/targets", rng::ATTACKS));
                let targets = resolve(&s.targets, &consumers, &mut pick);
                let inner_targets = match &s.kind {
                    AttackKind::SolverPartition { inner, .. } => resolve(&inner.targets, &consumers, &mut pick),
                    _ => None,
                };
                Armed {
                    scenario: s.clone(),
                    targets,
                    inner_targets,
                    drop_rng: rng::stream(seed, &format!("{}/{i}/drops", rng::ATTACKS)),
                }
            })
            .collect();
        AttackLayer { armed, report: AttackReport::default() }
    }

    pub fn none() -> Self {
        AttackLayer { armed: Vec::new(), report: AttackReport::default() }
    }

    pub fn is_empty(&self) -> bool {
        self.armed.is_empty()
    }

    pub fn report(&self) -> &AttackReport {
        &self.report
    }

    /// Resolved target set of scenario `index`; `None` means everyone.
    pub fn targets(&self, index: usize) -> Option<&BTreeSet<ProsumerId>> {
        self.armed.get(index).and_then(|a| a.targets.as_ref())
    }

    pub fn any_active(&self, k: u32) -> bool {
        self.armed.iter().any(|a| a.scenario.active_intervals.contains(k))
    }

    fn log(&mut self, interval: u32, attack: usize, owner: Option<ProsumerId>, action: AttackAction) {
        self.report.events.push(AttackEvent { interval, attack, owner, action });
    }

    /// Bid-formation interception for the centralized market. Only buy
    /// bids of targeted owners are touched.
    pub fn transform_bid(&mut self, k: u32, bid: Bid) -> Option<Bid> {
        let mut current = bid;
        for i in 0..self.armed.len() {
            let a = &self.armed[i];
            if !a.scenario.active_intervals.contains(k) || current.side != Side::Buy || !hits(&a.targets, current.owner_id) {
                continue;
            }
            let owner = current.owner_id;
            let (out, action) = match a.scenario.kind {
                AttackKind::BidScale { price_factor, qty_factor } => {
                    let r = apply_bid_scale(&current, price_factor, qty_factor);
                    let act = if r.is_some() { AttackAction::Scaled } else { AttackAction::Removed };
                    (r, act)
                }
                AttackKind::BidSaturate { mode, price_bound, qty_bound } => {
                    let r = apply_bid_saturate(&current, mode, price_bound, qty_bound);
                    let act = if r.is_some() { AttackAction::Saturated } else { AttackAction::Removed };
                    (r, act)
                }
                _ => continue,
            };
            self.log(k, i, Some(owner), action);
            current = out?;
        }
        Some(current)
    }

    /// Offer-formation interception for the ledger market.
    pub fn transform_offer(&mut self, k: u32, offer: Offer) -> Option<Offer> {
        let mut current = offer;
        for i in 0..self.armed.len() {
            let a = &self.armed[i];
            if !a.scenario.active_intervals.contains(k) || current.side != Side::Buy || !hits(&a.targets, current.owner_id) {
                continue;
            }
            let owner = current.owner_id;
            let (out, action) = match a.scenario.kind {
                AttackKind::BidScale { price_factor, qty_factor } => {
                    let r = scale_offer(&current, price_factor, qty_factor);
                    let act = if r.is_some() { AttackAction::Scaled } else { AttackAction::Removed };
                    (r, act)
                }
                AttackKind::BidSaturate { price_bound, qty_bound, .. } => {
                    let r = saturate_offer(&current, price_bound, qty_bound);
                    let act = if r.is_some() { AttackAction::Saturated } else { AttackAction::Removed };
                    (r, act)
                }
                _ => continue,
            };
            self.log(k, i, Some(owner), action);
            current = out?;
        }
        Some(current)
    }

    /// Whether an active drop attack suppresses `msg`. Draws only for
    /// messages the attack actually covers.
    pub fn should_drop(&mut self, k: u32, msg: &Message) -> bool {
        let owner = match msg.src {
            Endpoint::Prosumer(id) => Some(id),
            _ => None,
        };
        for i in 0..self.armed.len() {
            let a = &mut self.armed[i];
            let AttackKind::MessageDrop { drop_prob, ref kinds } = a.scenario.kind else { continue };
            if !a.scenario.active_intervals.contains(k) {
                continue;
            }
            let targeted = match (&a.targets, owner) {
                (None, _) => true,
                (Some(t), Some(o)) => t.contains(&o),
                (Some(_), None) => false,
            };
            if targeted && apply_message_drop(msg.kind, drop_prob, kinds, &mut a.drop_rng) {
                self.log(k, i, owner, AttackAction::Dropped);
                return true;
            }
        }
        false
    }

    /// Notification interception: returns the copy `solver` receives, or
    /// `None` when the partition suppresses it.
    pub fn transform_notification(&mut self, k: u32, solver: u32, posted: PostedOffer) -> Option<PostedOffer> {
        let mut current = posted;
        for i in 0..self.armed.len() {
            let a = &mut self.armed[i];
            let AttackKind::SolverPartition { target_solver, ref inner } = a.scenario.kind else { continue };
            if solver != target_solver || !a.scenario.active_intervals.contains(k) {
                continue;
            }
            let owner = current.offer.owner_id;
            if !hits(&a.inner_targets, owner) {
                continue;
            }
            let inner_kind = inner.kind.clone();
            let out = match inner_kind {
                AttackKind::BidScale { price_factor, qty_factor } if current.offer.side == Side::Buy => {
                    apply_solver_partition(solver, target_solver, &current, |o| scale_offer(o, price_factor, qty_factor))
                }
                AttackKind::BidSaturate { price_bound, qty_bound, .. } if current.offer.side == Side::Buy => {
                    apply_solver_partition(solver, target_solver, &current, |o| saturate_offer(o, price_bound, qty_bound))
                }
                AttackKind::MessageDrop { drop_prob, ref kinds } => {
                    if apply_message_drop(MessageKind::Offer, drop_prob, kinds, &mut a.drop_rng) {
                        None
                    } else {
                        continue;
                    }
                }
                _ => continue,
            };
            self.log(k, i, Some(owner), AttackAction::Partitioned);
            current = out?;
        }
        Some(current)
    }
}
