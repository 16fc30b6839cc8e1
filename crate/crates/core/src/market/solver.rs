// SPDX-License-Identifier: Apache-2.0

//! Matching solvers for the ledger market.
//!
//! A solver reduces the open offers for one delivery interval to per-offer
//! fill totals and then pairs buyers with sellers. The exact strategy solves
//! the fill totals as a linear program. All of its constraints are
//! prefix or group sums: relay limits and battery discharge group sellers by
//! feeder and owner, and price compatibility reduces to one prefix inequality
//! per buyer reservation, because a buyer may take from every seller whose
//! ask is not above its own. Both families are laminar, so the constraint
//! matrix is totally unimodular and the LP optimum is integral in Wh.

use std::collections::BTreeMap;

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use serde::{Deserialize, Serialize};

use crate::grid::{relay_capacity, BatteryState, FeederId, FeederTopology, ProsumerId};
use crate::market::auction::Side;
use crate::market::ledger::{Ledger, Match, PostedOffer, Solution};
use crate::units::{Energy, Price};

/// Battery state and per-offer stored energy visible to solvers and validators.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BatteryBook {
    pub states: BTreeMap<ProsumerId, BatteryState>,
    /// Energy held in storage per battery-backed offer seq.
    pub lots: BTreeMap<u64, Energy>,
}

impl BatteryBook {
    pub fn lot(&self, seq: u64) -> Energy {
        self.lots.get(&seq).copied().unwrap_or_default()
    }

    /// Most the owner can discharge in one interval.
    pub fn discharge_limit(&self, owner: ProsumerId) -> Energy {
        self.states
            .get(&owner)
            .map(|b| b.soc.min(b.spec.max_discharge_rate))
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GridContext<'a> {
    pub topology: &'a FeederTopology,
    pub interval_seconds: u32,
    pub batteries: &'a BatteryBook,
}

impl<'a> GridContext<'a> {
    pub fn relay_energy(&self, feeder: FeederId) -> Option<Energy> {
        self.topology.relay_limit_kw(feeder).map(|kw| relay_capacity(kw, self.interval_seconds))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "price")]
pub enum PricingRule {
    /// Midpoint of the pair's reservations; a missing side uses the default.
    Midpoint(Price),
    Fixed(Price),
    /// The seller's reservation, or the default when it has none.
    Ask(Price),
}

impl PricingRule {
    pub fn price(&self, sell: Option<Price>, buy: Option<Price>) -> Price {
        match *self {
            PricingRule::Fixed(p) => p,
            PricingRule::Ask(default) => sell.unwrap_or(default),
            PricingRule::Midpoint(default) => {
                let raw = Price::midpoint(sell.unwrap_or(default), buy.unwrap_or(default));
                let lo = sell.unwrap_or(Price::from_micros(i64::MIN));
                let hi = buy.unwrap_or(Price::from_micros(i64::MAX));
                if lo > hi {
                    raw
                } else {
                    raw.max(lo).min(hi)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverStrategy {
    #[default]
    Exact,
    Greedy,
}

/// One offer reduced to what a solver needs for a single interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub seq: u64,
    pub owner: ProsumerId,
    pub side: Side,
    pub feeder: FeederId,
    pub available: Energy,
    pub reservation: Option<Price>,
    pub from_storage: bool,
    pub expiry: u32,
}

impl Candidate {
    fn ask_key(&self) -> i64 {
        self.reservation.map_or(i64::MIN, Price::micros)
    }

    fn bid_key(&self) -> i64 {
        self.reservation.map_or(i64::MAX, Price::micros)
    }
}

/// Energy an offer can still deliver in `target`, given what the ledger has
/// already finalized and, for deliveries out of storage, the stored lot.
pub fn offer_availability(posted: &PostedOffer, ledger: &Ledger, target: u32, batteries: &BatteryBook) -> Energy {
    if !posted.offer.covers(target) {
        return Energy::ZERO;
    }
    let left = posted.offer.quantity - ledger.finalized_fill(posted.seq);
    let left = if posted.offer.from_storage(target) { left.min(batteries.lot(posted.seq)) } else { left };
    left.max(Energy::ZERO)
}

/// Builds candidates from a solver's view of the offers. Offers of unknown
/// prosumers and offers with nothing left are skipped.
pub fn candidates(view: &[PostedOffer], ledger: &Ledger, target: u32, ctx: &GridContext<'_>) -> Vec<Candidate> {
    let mut out = Vec::new();
    for p in view {
        let Ok(feeder) = ctx.topology.feeder_of(p.offer.owner_id) else { continue };
        let available = offer_availability(p, ledger, target, ctx.batteries);
        if !available.is_positive() {
            continue;
        }
        out.push(Candidate {
            seq: p.seq,
            owner: p.offer.owner_id,
            side: p.offer.side,
            feeder,
            available,
            reservation: p.offer.reservation_price,
            from_storage: p.offer.from_storage(target),
            expiry: p.offer.last_interval().unwrap_or(target),
        });
    }
    out.sort_by_key(|c| c.seq);
    out
}

/// Checks per-offer fill totals against every aggregate constraint.
pub fn allocation_feasible(cands: &[Candidate], fills: &[i64], ctx: &GridContext<'_>) -> bool {
    if fills.len() != cands.len() {
        return false;
    }
    let mut sell_total = 0i64;
    let mut buy_total = 0i64;
    let mut feeder_net: BTreeMap<FeederId, i64> = BTreeMap::new();
    let mut discharge: BTreeMap<ProsumerId, i64> = BTreeMap::new();
    for (c, &x) in cands.iter().zip(fills) {
        if x < 0 || x > c.available.wh() {
            return false;
        }
        match c.side {
            Side::Sell => {
                sell_total += x;
                *feeder_net.entry(c.feeder).or_default() += x;
                if c.from_storage {
                    *discharge.entry(c.owner).or_default() += x;
                }
            }
            Side::Buy => {
                buy_total += x;
                *feeder_net.entry(c.feeder).or_default() -= x;
            }
        }
    }
    if sell_total != buy_total {
        return false;
    }
    for (f, net) in &feeder_net {
        if let Some(limit) = ctx.relay_energy(*f) {
            if net.abs() > limit.wh() {
                return false;
            }
        }
    }
    for (owner, d) in &discharge {
        if *d > ctx.batteries.discharge_limit(*owner).wh() {
            return false;
        }
    }
    let mut thresholds: Vec<i64> = cands.iter().filter(|c| c.side == Side::Buy).map(Candidate::bid_key).collect();
    thresholds.sort_unstable();
    thresholds.dedup();
    for r in thresholds {
        let demand: i64 = cands
            .iter()
            .zip(fills)
            .filter(|(c, _)| c.side == Side::Buy && c.bid_key() <= r)
            .map(|(_, x)| *x)
            .sum();
        let supply: i64 = cands
            .iter()
            .zip(fills)
            .filter(|(c, _)| c.side == Side::Sell && c.ask_key() <= r)
            .map(|(_, x)| *x)
            .sum();
        if demand > supply {
            return false;
        }
    }
    // sellers priced above every buyer cannot trade
    let top = cands.iter().filter(|c| c.side == Side::Buy).map(Candidate::bid_key).max();
    cands.iter().zip(fills).all(|(c, &x)| c.side == Side::Buy || x == 0 || top.is_some_and(|t| c.ask_key() <= t))
}

fn seller_priority(cands: &[Candidate]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (&cands[a], &cands[b]);
        match (x.side, y.side) {
            (Side::Sell, Side::Sell) => (!x.from_storage, x.expiry, x.ask_key(), x.seq)
                .cmp(&(!y.from_storage, y.expiry, y.ask_key(), y.seq)),
            (Side::Buy, Side::Buy) => (std::cmp::Reverse(x.bid_key()), x.seq).cmp(&(std::cmp::Reverse(y.bid_key()), y.seq)),
            (Side::Sell, Side::Buy) => std::cmp::Ordering::Less,
            (Side::Buy, Side::Sell) => std::cmp::Ordering::Greater,
        }
    });
    let n = cands.len() as f64;
    let mut w = vec![0.0; cands.len()];
    for (rank, &i) in order.iter().enumerate() {
        w[i] = (n - rank as f64) / n;
    }
    w
}

/// Builds the allocation program. `objective` gives per-candidate weights;
/// `min_total` optionally pins the traded volume from below.
fn build_problem(
    cands: &[Candidate],
    ctx: &GridContext<'_>,
    objective: &[f64],
    min_total: Option<f64>,
    integer: bool,
) -> (Problem, Vec<microlp::Variable>) {
    let mut p = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<_> = cands
        .iter()
        .zip(objective)
        .map(|(c, &w)| {
            if integer {
                p.add_integer_var(w, (0, c.available.wh().min(i32::MAX as i64) as i32))
            } else {
                p.add_var(w, (0.0, c.available.wh() as f64))
            }
        })
        .collect();
    let sign = |c: &Candidate| if c.side == Side::Sell { 1.0 } else { -1.0 };
    let balance: Vec<_> = cands.iter().zip(&vars).map(|(c, &v)| (v, sign(c))).collect();
    p.add_constraint(balance.as_slice(), ComparisonOp::Eq, 0.0);

    let mut feeders: BTreeMap<FeederId, Vec<(microlp::Variable, f64)>> = BTreeMap::new();
    let mut owners: BTreeMap<ProsumerId, Vec<(microlp::Variable, f64)>> = BTreeMap::new();
    for (c, &v) in cands.iter().zip(&vars) {
        feeders.entry(c.feeder).or_default().push((v, sign(c)));
        if c.from_storage {
            owners.entry(c.owner).or_default().push((v, 1.0));
        }
    }
    for (f, terms) in &feeders {
        if let Some(limit) = ctx.relay_energy(*f) {
            let l = limit.wh() as f64;
            p.add_constraint(terms.as_slice(), ComparisonOp::Le, l);
            p.add_constraint(terms.as_slice(), ComparisonOp::Ge, -l);
        }
    }
    for (owner, terms) in &owners {
        p.add_constraint(terms.as_slice(), ComparisonOp::Le, ctx.batteries.discharge_limit(*owner).wh() as f64);
    }
    let mut thresholds: Vec<i64> = cands.iter().filter(|c| c.side == Side::Buy).map(Candidate::bid_key).collect();
    thresholds.sort_unstable();
    thresholds.dedup();
    for &r in &thresholds {
        let terms: Vec<_> = cands
            .iter()
            .zip(&vars)
            .filter_map(|(c, &v)| match c.side {
                Side::Buy if c.bid_key() <= r => Some((v, 1.0)),
                Side::Sell if c.ask_key() <= r => Some((v, -1.0)),
                _ => None,
            })
            .collect();
        p.add_constraint(terms.as_slice(), ComparisonOp::Le, 0.0);
    }
    let top = thresholds.last().copied();
    for (c, &v) in cands.iter().zip(&vars) {
        if c.side == Side::Sell && top.is_none_or(|t| c.ask_key() > t) {
            p.add_constraint([(v, 1.0)].as_slice(), ComparisonOp::Eq, 0.0);
        }
    }
    if let Some(total) = min_total {
        let terms: Vec<_> = cands.iter().zip(&vars).filter(|(c, _)| c.side == Side::Sell).map(|(_, &v)| (v, 1.0)).collect();
        p.add_constraint(terms.as_slice(), ComparisonOp::Ge, total);
    }
    (p, vars)
}

fn solve_rounded(
    cands: &[Candidate],
    ctx: &GridContext<'_>,
    objective: &[f64],
    min_total: Option<f64>,
) -> Option<Vec<i64>> {
    for integer in [false, true] {
        let (p, vars) = build_problem(cands, ctx, objective, min_total, integer);
        let Ok(outcome) = p.solve() else { continue };
        let Some(sol) = outcome.solution() else { continue };
        let fills: Vec<i64> = vars.iter().map(|&v| sol.var_value(v).round() as i64).collect();
        if allocation_feasible(cands, &fills, ctx) {
            return Some(fills);
        }
    }
    None
}

fn sell_total(cands: &[Candidate], fills: &[i64]) -> i64 {
    cands.iter().zip(fills).filter(|(c, _)| c.side == Side::Sell).map(|(_, x)| *x).sum()
}

/// Maximum-volume fill totals; among maximal allocations prefers stored and
/// soon-expiring energy and high-reservation buyers.
pub fn exact_allocation(cands: &[Candidate], ctx: &GridContext<'_>) -> Vec<i64> {
    if cands.is_empty() {
        return Vec::new();
    }
    let volume: Vec<f64> = cands.iter().map(|c| if c.side == Side::Sell { 1.0 } else { 0.0 }).collect();
    let Some(first) = solve_rounded(cands, ctx, &volume, None) else {
        return greedy_allocation(cands, ctx);
    };
    let total = sell_total(cands, &first);
    let greedy = greedy_allocation(cands, ctx);
    let best = if sell_total(cands, &greedy) > total { greedy } else { first };
    let total = sell_total(cands, &best);
    if total == 0 {
        return best;
    }
    let weights = seller_priority(cands);
    match solve_rounded(cands, ctx, &weights, Some(total as f64 - 0.25)) {
        Some(refined) if sell_total(cands, &refined) == total => refined,
        _ => best,
    }
}

/// Buyers in descending reservation take from sellers in ascending
/// reservation, bounded by relay headroom and battery discharge.
pub fn greedy_allocation(cands: &[Candidate], ctx: &GridContext<'_>) -> Vec<i64> {
    let mut buyers: Vec<usize> = (0..cands.len()).filter(|&i| cands[i].side == Side::Buy).collect();
    buyers.sort_by_key(|&i| (std::cmp::Reverse(cands[i].bid_key()), cands[i].seq));
    let mut sellers: Vec<usize> = (0..cands.len()).filter(|&i| cands[i].side == Side::Sell).collect();
    sellers.sort_by_key(|&i| (cands[i].ask_key(), !cands[i].from_storage, cands[i].expiry, cands[i].seq));
    let mut fills = vec![0i64; cands.len()];
    let mut net: BTreeMap<FeederId, i64> = BTreeMap::new();
    let mut discharged: BTreeMap<ProsumerId, i64> = BTreeMap::new();
    for &b in &buyers {
        for &s in &sellers {
            let (buyer, seller) = (&cands[b], &cands[s]);
            if seller.ask_key() > buyer.bid_key() {
                break;
            }
            let mut q = (buyer.available.wh() - fills[b]).min(seller.available.wh() - fills[s]);
            if seller.feeder != buyer.feeder {
                if let Some(l) = ctx.relay_energy(seller.feeder) {
                    q = q.min(l.wh() - net.get(&seller.feeder).copied().unwrap_or(0));
                }
                if let Some(l) = ctx.relay_energy(buyer.feeder) {
                    q = q.min(l.wh() + net.get(&buyer.feeder).copied().unwrap_or(0));
                }
            }
            if seller.from_storage {
                let used = discharged.get(&seller.owner).copied().unwrap_or(0);
                q = q.min(ctx.batteries.discharge_limit(seller.owner).wh() - used);
            }
            if q <= 0 {
                continue;
            }
            fills[b] += q;
            fills[s] += q;
            *net.entry(seller.feeder).or_default() += q;
            *net.entry(buyer.feeder).or_default() -= q;
            if seller.from_storage {
                *discharged.entry(seller.owner).or_default() += q;
            }
        }
    }
    fills
}

/// Turns fill totals into pairwise matches. Buyers in ascending reservation
/// each draw from compatible sellers in ascending reservation, which always
/// succeeds when the prefix conditions hold.
pub fn pair_fills(
    cands: &[Candidate],
    fills: &[i64],
    target: u32,
    pricing: PricingRule,
) -> Vec<Match> {
    let mut buyers: Vec<usize> = (0..cands.len()).filter(|&i| cands[i].side == Side::Buy && fills[i] > 0).collect();
    buyers.sort_by_key(|&i| (cands[i].bid_key(), cands[i].seq));
    let mut sellers: Vec<usize> = (0..cands.len()).filter(|&i| cands[i].side == Side::Sell && fills[i] > 0).collect();
    sellers.sort_by_key(|&i| (cands[i].ask_key(), cands[i].seq));
    let mut left: Vec<i64> = fills.to_vec();
    let mut matches = Vec::new();
    for &b in &buyers {
        for &s in &sellers {
            if left[b] == 0 {
                break;
            }
            if cands[s].ask_key() > cands[b].bid_key() || left[s] == 0 {
                continue;
            }
            let q = left[b].min(left[s]);
            left[b] -= q;
            left[s] -= q;
            matches.push(Match {
                seller_id: cands[s].owner,
                buyer_id: cands[b].owner,
                sell_offer: cands[s].seq,
                buy_offer: cands[b].seq,
                interval: target,
                quantity: Energy::from_wh(q),
                price: pricing.price(cands[s].reservation, cands[b].reservation),
            });
        }
    }
    matches.sort_by_key(|m| (m.buy_offer, m.sell_offer));
    matches
}

pub fn allocate(cands: &[Candidate], ctx: &GridContext<'_>, strategy: SolverStrategy) -> Vec<i64> {
    match strategy {
        SolverStrategy::Exact => exact_allocation(cands, ctx),
        SolverStrategy::Greedy => greedy_allocation(cands, ctx),
    }
}

/// Matches the offers a solver knows about for `target`. An empty solution
/// is a valid outcome.
pub fn solver_match(
    solver_id: u32,
    view: &[PostedOffer],
    ledger: &Ledger,
    target: u32,
    ctx: &GridContext<'_>,
    strategy: SolverStrategy,
    pricing: PricingRule,
) -> Solution {
    let cands = candidates(view, ledger, target, ctx);
    let fills = allocate(&cands, ctx, strategy);
    Solution::from_matches(solver_id, target, pair_fills(&cands, &fills, target, pricing))
}
