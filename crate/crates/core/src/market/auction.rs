// SPDX-License-Identifier: Apache-2.0

//! Uniform-price double auction for one interval.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{MarketError, NetError};
use crate::grid::ProsumerId;
use crate::net::{Endpoint, Message, MessageKind, Network, Payload};
use crate::units::{Energy, Money, Price, SimTime};

/// Owner id used for the bulk-supply ladder; prosumer ids start at 1.
pub const BULK_SUPPLIER: ProsumerId = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Buy,
    Sell,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Buy => "buy",
            Side::Sell => "sell",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bid {
    pub owner_id: ProsumerId,
    pub side: Side,
    pub price: Price,
    pub quantity: Energy,
    pub interval: u32,
    pub submit_seq: u64,
}

impl Bid {
    pub fn is_valid(&self) -> bool {
        self.quantity.is_positive() && self.price >= Price::ZERO
    }
}

/// Buy side descending by price, sell side ascending; ties keep submit order.
fn priority(a: &Bid, b: &Bid) -> Ordering {
    match a.side {
        Side::Buy => b.price.cmp(&a.price).then(a.submit_seq.cmp(&b.submit_seq)),
        Side::Sell => a.price.cmp(&b.price).then(a.submit_seq.cmp(&b.submit_seq)),
    }
}

fn check_single_interval(bids: &[Bid]) -> Result<(), MarketError> {
    if let Some(first) = bids.first() {
        if let Some(other) = bids.iter().find(|b| b.interval != first.interval) {
            return Err(MarketError::MixedIntervals(first.interval, other.interval));
        }
    }
    Ok(())
}

/// Step curves with one breakpoint per distinct price.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemandCurve {
    pub buy: Vec<(Price, Energy)>,
    pub sell: Vec<(Price, Energy)>,
}

impl DemandCurve {
    /// Cumulative quantity buyers want at `price` (bids priced at or above it).
    pub fn demand_at(&self, price: Price) -> Energy {
        self.buy.iter().take_while(|(p, _)| *p >= price).last().map(|(_, q)| *q).unwrap_or_default()
    }

    /// Cumulative quantity sellers offer at `price` (asks at or below it).
    pub fn supply_at(&self, price: Price) -> Energy {
        self.sell.iter().take_while(|(p, _)| *p <= price).last().map(|(_, q)| *q).unwrap_or_default()
    }

    pub fn is_empty(&self) -> bool {
        self.buy.is_empty() && self.sell.is_empty()
    }
}

fn cumulate<'a>(bids: impl Iterator<Item = &'a Bid>) -> Vec<(Price, Energy)> {
    let mut out: Vec<(Price, Energy)> = Vec::new();
    let mut cum = Energy::ZERO;
    for b in bids {
        cum += b.quantity;
        match out.last_mut() {
            Some((p, q)) if *p == b.price => *q = cum,
            _ => out.push((b.price, cum)),
        }
    }
    out
}

pub fn build_demand_curve(bids: &[Bid]) -> Result<DemandCurve, MarketError> {
    check_single_interval(bids)?;
    let (buys, sells) = sorted_sides(bids);
    Ok(DemandCurve { buy: cumulate(buys.iter()), sell: cumulate(sells.iter()) })
}

fn sorted_sides(bids: &[Bid]) -> (Vec<Bid>, Vec<Bid>) {
    let mut buys: Vec<Bid> = bids.iter().filter(|b| b.side == Side::Buy && b.is_valid()).cloned().collect();
    let mut sells: Vec<Bid> = bids.iter().filter(|b| b.side == Side::Sell && b.is_valid()).cloned().collect();
    buys.sort_by(priority);
    sells.sort_by(priority);
    (buys, sells)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fill {
    pub submit_seq: u64,
    pub owner_id: ProsumerId,
    pub side: Side,
    pub bid_price: Price,
    pub filled: Energy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClearingResult {
    pub interval: u32,
    pub clearing_price: Option<Price>,
    pub matched_quantity: Energy,
    pub fills: Vec<Fill>,
    pub marginal_buy: Option<Price>,
    pub marginal_sell: Option<Price>,
}

impl ClearingResult {
    pub fn no_clear(interval: u32) -> Self {
        ClearingResult {
            interval,
            clearing_price: None,
            matched_quantity: Energy::ZERO,
            fills: Vec::new(),
            marginal_buy: None,
            marginal_sell: None,
        }
    }

    pub fn filled(&self, side: Side) -> Energy {
        self.fills.iter().filter(|f| f.side == side).map(|f| f.filled).sum()
    }

    fn payments(&self, side: Side) -> Money {
        let p = self.clearing_price.unwrap_or_default();
        self.fills.iter().filter(|f| f.side == side).map(|f| p.cost(f.filled)).sum()
    }

    pub fn paid_by_buyers(&self) -> Money {
        self.payments(Side::Buy)
    }

    pub fn received_by_sellers(&self) -> Money {
        self.payments(Side::Sell)
    }

    pub fn fill_of(&self, owner: ProsumerId, side: Side) -> Energy {
        self.fills.iter().filter(|f| f.owner_id == owner && f.side == side).map(|f| f.filled).sum()
    }
}

/// Clears at the largest crossing quantity of the two step curves. The price
/// is the midpoint of the last matched buy and sell; only the marginal bids
/// can be partially filled.
pub fn clear_double_auction(interval: u32, bids: &[Bid]) -> Result<ClearingResult, MarketError> {
    check_single_interval(bids)?;
    if let Some(b) = bids.first() {
        if b.interval != interval {
            return Err(MarketError::MixedIntervals(interval, b.interval));
        }
    }
    let (buys, sells) = sorted_sides(bids);
    let mut bi = 0;
    let mut si = 0;
    let mut buy_left = buys.first().map(|b| b.quantity).unwrap_or_default();
    let mut sell_left = sells.first().map(|b| b.quantity).unwrap_or_default();
    let mut buy_filled = vec![Energy::ZERO; buys.len()];
    let mut sell_filled = vec![Energy::ZERO; sells.len()];
    let mut matched = Energy::ZERO;
    let mut marginal: Option<(usize, usize)> = None;

    while bi < buys.len() && si < sells.len() && buys[bi].price >= sells[si].price {
        let q = buy_left.min(sell_left);
        buy_filled[bi] += q;
        sell_filled[si] += q;
        buy_left -= q;
        sell_left -= q;
        matched += q;
        marginal = Some((bi, si));
        if buy_left == Energy::ZERO {
            bi += 1;
            buy_left = buys.get(bi).map(|b| b.quantity).unwrap_or_default();
        }
        if sell_left == Energy::ZERO {
            si += 1;
            sell_left = sells.get(si).map(|b| b.quantity).unwrap_or_default();
        }
    }

    let Some((mb, ms)) = marginal else {
        return Ok(ClearingResult::no_clear(interval));
    };
    let marginal_buy = buys[mb].price;
    let marginal_sell = sells[ms].price;
    let mut fills = Vec::new();
    for (b, q) in buys.iter().zip(&buy_filled).chain(sells.iter().zip(&sell_filled)) {
        if q.is_positive() {
            fills.push(Fill {
                submit_seq: b.submit_seq,
                owner_id: b.owner_id,
                side: b.side,
                bid_price: b.price,
                filled: *q,
            });
        }
    }
    Ok(ClearingResult {
        interval,
        clearing_price: Some(Price::midpoint(marginal_buy, marginal_sell)),
        matched_quantity: matched,
        fills,
        marginal_buy: Some(marginal_buy),
        marginal_sell: Some(marginal_sell),
    })
}

/// Broadcasts the cleared price (or a no-clear marker) to every participant.
pub fn publish_clearing(
    result: &ClearingResult,
    participants: &[ProsumerId],
    network: &mut Network,
    now: SimTime,
) -> Result<Vec<u64>, NetError> {
    let mut ids = Vec::with_capacity(participants.len());
    for p in participants {
        let msg = Message::new(
            Endpoint::Market,
            Endpoint::Prosumer(*p),
            MessageKind::Clearing,
            now,
            Payload::Clearing { interval: result.interval, price: result.clearing_price },
        );
        ids.push(network.send(msg)?);
    }
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::LinkModel;

    fn bid(seq: u64, side: Side, price: f64, kwh: f64) -> Bid {
        Bid {
            owner_id: seq as ProsumerId + 1,
            side,
            price: Price::from_f64(price),
            quantity: Energy::from_kwh(kwh),
            interval: 0,
            submit_seq: seq,
        }
    }

    #[test]
    fn empty_curve() {
        let c = build_demand_curve(&[]).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn buy_curve_sorted_and_cumulative() {
        let c = build_demand_curve(&[bid(0, Side::Buy, 0.10, 5.0), bid(1, Side::Buy, 0.20, 3.0)]).unwrap();
        assert_eq!(
            c.buy,
            vec![(Price::from_f64(0.20), Energy::from_kwh(3.0)), (Price::from_f64(0.10), Energy::from_kwh(8.0))]
        );
        assert_eq!(c.demand_at(Price::from_f64(0.15)), Energy::from_kwh(3.0));
        assert_eq!(c.demand_at(Price::from_f64(0.05)), Energy::from_kwh(8.0));
        assert_eq!(c.demand_at(Price::from_f64(0.25)), Energy::ZERO);
    }

    #[test]
    fn duplicate_prices_merge() {
        let c = build_demand_curve(&[bid(0, Side::Buy, 0.10, 5.0), bid(1, Side::Buy, 0.10, 2.0)]).unwrap();
        assert_eq!(c.buy, vec![(Price::from_f64(0.10), Energy::from_kwh(7.0))]);
    }

    #[test]
    fn mixed_intervals_rejected() {
        let mut b = bid(1, Side::Buy, 0.1, 1.0);
        b.interval = 3;
        assert_eq!(build_demand_curve(&[bid(0, Side::Buy, 0.1, 1.0), b]), Err(MarketError::MixedIntervals(0, 3)));
    }

    #[test]
    fn simple_cross() {
        let r = clear_double_auction(0, &[bid(0, Side::Buy, 0.10, 5.0), bid(1, Side::Sell, 0.06, 5.0)]).unwrap();
        assert_eq!(r.matched_quantity, Energy::from_kwh(5.0));
        assert_eq!(r.clearing_price, Some(Price::from_f64(0.08)));
        assert_eq!(r.paid_by_buyers(), r.received_by_sellers());
    }

    #[test]
    fn no_cross() {
        let r = clear_double_auction(0, &[bid(0, Side::Buy, 0.05, 5.0), bid(1, Side::Sell, 0.07, 5.0)]).unwrap();
        assert_eq!(r.matched_quantity, Energy::ZERO);
        assert_eq!(r.clearing_price, None);
        assert!(r.fills.is_empty());
    }

    #[test]
    fn marginal_pair_sets_price() {
        let bids = [
            bid(0, Side::Buy, 0.10, 5.0),
            bid(1, Side::Buy, 0.08, 5.0),
            bid(2, Side::Sell, 0.06, 5.0),
            bid(3, Side::Sell, 0.09, 5.0),
        ];
        let r = clear_double_auction(0, &bids).unwrap();
        assert_eq!(r.matched_quantity, Energy::from_kwh(5.0));
        assert_eq!(r.clearing_price, Some(Price::from_f64(0.08)));
        assert_eq!(r.marginal_buy, Some(Price::from_f64(0.10)));
        assert_eq!(r.marginal_sell, Some(Price::from_f64(0.06)));
    }

    #[test]
    fn partial_fill_on_marginal_only() {
        let bids = [bid(0, Side::Buy, 0.20, 4.0), bid(1, Side::Buy, 0.15, 4.0), bid(2, Side::Sell, 0.05, 6.0)];
        let r = clear_double_auction(0, &bids).unwrap();
        assert_eq!(r.matched_quantity, Energy::from_kwh(6.0));
        assert_eq!(r.fill_of(1, Side::Buy), Energy::from_kwh(4.0));
        assert_eq!(r.fill_of(2, Side::Buy), Energy::from_kwh(2.0));
    }

    #[test]
    fn publish_reaches_every_participant() {
        let participants: Vec<ProsumerId> = (1..=102).collect();
        let mut net = Network::new(LinkModel::ideal(), 7);
        net.register_all(participants.iter().map(|p| Endpoint::Prosumer(*p)));
        net.register(Endpoint::Market);
        let r = ClearingResult::no_clear(4);
        let ids = publish_clearing(&r, &participants, &mut net, SimTime::from_secs(60)).unwrap();
        assert_eq!(ids.len(), 102);
        let delivered = net.deliver_due(SimTime::from_secs(61));
        assert_eq!(delivered.len(), 102);
        assert!(delivered
            .iter()
            .all(|m| matches!(m.payload, Payload::Clearing { price: None, interval: 4 })));
    }
}
