// SPDX-License-Identifier: Apache-2.0

//! DSO-run scenarios: fixed local price and first-come-first-served picking.

use std::collections::BTreeMap;

use crate::grid::FeederId;
use crate::market::auction::Side;
use crate::market::ledger::{BulkFill, Match, Solution};
use crate::market::solver::{exact_allocation, pair_fills, Candidate, GridContext, PricingRule};
use crate::units::{Energy, Price};

/// Every trade at `p`. Sellers asking at most `p` and buyers bidding at least
/// `p` are matched for maximum volume; all remaining demand goes to the bulk
/// supplier at `p`.
pub fn fixed_price_match(solver_id: u32, cands: &[Candidate], target: u32, p: Price, ctx: &GridContext<'_>) -> Solution {
    let eligible: Vec<Candidate> = cands
        .iter()
        .filter(|c| match c.side {
            Side::Sell => c.reservation.is_none_or(|r| r <= p),
            Side::Buy => c.reservation.is_none_or(|r| r >= p),
        })
        .map(|c| Candidate { reservation: None, ..c.clone() })
        .collect();
    let fills = exact_allocation(&eligible, ctx);
    let matches = pair_fills(&eligible, &fills, target, PricingRule::Fixed(p));
    let mut solution = Solution::from_matches(solver_id, target, matches);
    solution.bulk = residual_bulk(cands, &solution.matches, p);
    solution
}

fn residual_bulk(cands: &[Candidate], matches: &[Match], p: Price) -> Vec<BulkFill> {
    let mut local: BTreeMap<u64, Energy> = BTreeMap::new();
    for m in matches {
        *local.entry(m.buy_offer).or_default() += m.quantity;
    }
    cands
        .iter()
        .filter(|c| c.side == Side::Buy)
        .filter_map(|c| {
            let rest = c.available - local.get(&c.seq).copied().unwrap_or_default();
            rest.is_positive().then_some(BulkFill { buyer_id: c.owner, buy_offer: c.seq, quantity: rest, price: p })
        })
        .collect()
}

/// Buyers in post order each take from the earliest-posted compatible sell
/// offers until satisfied. Trades clear at the seller's ask and never push
/// a relay past its limit.
pub fn fcfs_match(solver_id: u32, cands: &[Candidate], target: u32, default_price: Price, ctx: &GridContext<'_>) -> Solution {
    let mut sells: Vec<&Candidate> = cands.iter().filter(|c| c.side == Side::Sell).collect();
    sells.sort_by_key(|c| c.seq);
    let mut buys: Vec<&Candidate> = cands.iter().filter(|c| c.side == Side::Buy).collect();
    buys.sort_by_key(|c| c.seq);
    let mut left: BTreeMap<u64, i64> = sells.iter().map(|s| (s.seq, s.available.wh())).collect();
    let mut net: BTreeMap<FeederId, i64> = BTreeMap::new();
    let mut discharged: BTreeMap<u32, i64> = BTreeMap::new();
    let rule = PricingRule::Ask(default_price);
    let mut matches = Vec::new();
    for b in buys {
        let mut need = b.available.wh();
        for s in &sells {
            if need == 0 {
                break;
            }
            let price = rule.price(s.reservation, b.reservation);
            if b.reservation.is_some_and(|r| price > r) {
                continue;
            }
            let mut q = need.min(left[&s.seq]);
            if s.feeder != b.feeder {
                if let Some(l) = ctx.relay_energy(s.feeder) {
                    q = q.min(l.wh() - net.get(&s.feeder).copied().unwrap_or(0));
                }
                if let Some(l) = ctx.relay_energy(b.feeder) {
                    q = q.min(l.wh() + net.get(&b.feeder).copied().unwrap_or(0));
                }
            }
            if s.from_storage {
                q = q.min(ctx.batteries.discharge_limit(s.owner).wh() - discharged.get(&s.owner).copied().unwrap_or(0));
            }
            if q <= 0 {
                continue;
            }
            need -= q;
            *left.get_mut(&s.seq).expect("seller present") -= q;
            *net.entry(s.feeder).or_default() += q;
            *net.entry(b.feeder).or_default() -= q;
            if s.from_storage {
                *discharged.entry(s.owner).or_default() += q;
            }
            matches.push(Match {
                seller_id: s.owner,
                buyer_id: b.owner,
                sell_offer: s.seq,
                buy_offer: b.seq,
                interval: target,
                quantity: Energy::from_wh(q),
                price,
            });
        }
    }
    Solution::from_matches(solver_id, target, matches)
}

/// Share of consumed energy that was traded locally; zero when nothing was consumed.
pub fn market_efficiency(local: Energy, consumed: Energy) -> f64 {
    if !consumed.is_positive() {
        return 0.0;
    }
    (local.wh() as f64 / consumed.wh() as f64).clamp(0.0, 1.0)
}
