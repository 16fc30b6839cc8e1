// SPDX-License-Identifier: Apache-2.0

//! Append-only market ledger.
//!
//! The ledger is the single source of truth for the decentralized market:
//! offers, candidate solutions and DSO finalizations are appended in a strict
//! sequence, and [`Ledger::replay`] rebuilds identical state from the entry
//! list alone.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::MarketError;
use crate::grid::{ProsumerId, Transfer};
use crate::market::auction::Side;
use crate::units::{Energy, Price};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Offer {
    pub owner_id: ProsumerId,
    pub side: Side,
    pub quantity: Energy,
    /// Sorted, unique delivery intervals.
    pub intervals: Vec<u32>,
    pub reservation_price: Option<Price>,
    /// Energy is generated in the first interval and can be held in the
    /// owner's battery for delivery in later ones.
    #[serde(default)]
    pub battery_backed: bool,
}

impl Offer {
    pub fn new(owner_id: ProsumerId, side: Side, quantity: Energy, intervals: impl IntoIterator<Item = u32>) -> Self {
        let set: BTreeSet<u32> = intervals.into_iter().collect();
        Offer {
            owner_id,
            side,
            quantity,
            intervals: set.into_iter().collect(),
            reservation_price: None,
            battery_backed: false,
        }
    }

    pub fn with_reservation(mut self, price: Price) -> Self {
        self.reservation_price = Some(price);
        self
    }

    pub fn with_battery(mut self) -> Self {
        self.battery_backed = true;
        self
    }

    pub fn covers(&self, interval: u32) -> bool {
        self.intervals.binary_search(&interval).is_ok()
    }

    pub fn first_interval(&self) -> Option<u32> {
        self.intervals.first().copied()
    }

    pub fn last_interval(&self) -> Option<u32> {
        self.intervals.last().copied()
    }

    /// Whether a fill in `interval` must come out of storage.
    pub fn from_storage(&self, interval: u32) -> bool {
        self.side == Side::Sell && self.battery_backed && self.first_interval().is_some_and(|f| interval > f)
    }
}

/// An offer as recorded on the ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostedOffer {
    pub seq: u64,
    pub posted_interval: u32,
    pub window: u32,
    pub offer: Offer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub seller_id: ProsumerId,
    pub buyer_id: ProsumerId,
    pub sell_offer: u64,
    pub buy_offer: u64,
    pub interval: u32,
    pub quantity: Energy,
    pub price: Price,
}

impl Match {
    pub fn transfer(&self) -> Transfer {
        Transfer { from: self.seller_id, to: self.buyer_id, energy: self.quantity }
    }
}

/// Residual demand served by the bulk supplier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BulkFill {
    pub buyer_id: ProsumerId,
    pub buy_offer: u64,
    pub quantity: Energy,
    pub price: Price,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub solver_id: u32,
    pub target_interval: u32,
    pub matches: Vec<Match>,
    pub objective: Energy,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bulk: Vec<BulkFill>,
}

impl Solution {
    pub fn empty(solver_id: u32, target_interval: u32) -> Self {
        Solution { solver_id, target_interval, matches: Vec::new(), objective: Energy::ZERO, bulk: Vec::new() }
    }

    pub fn from_matches(solver_id: u32, target_interval: u32, matches: Vec<Match>) -> Self {
        let objective = matches.iter().map(|m| m.quantity).sum();
        Solution { solver_id, target_interval, matches, objective, bulk: Vec::new() }
    }

    pub fn offer_refs(&self) -> impl Iterator<Item = u64> + '_ {
        self.matches
            .iter()
            .flat_map(|m| [m.sell_offer, m.buy_offer])
            .chain(self.bulk.iter().map(|b| b.buy_offer))
    }

    pub fn filled_by_offer(&self) -> BTreeMap<u64, Energy> {
        let mut out: BTreeMap<u64, Energy> = BTreeMap::new();
        for m in &self.matches {
            *out.entry(m.sell_offer).or_default() += m.quantity;
            *out.entry(m.buy_offer).or_default() += m.quantity;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finalization {
    pub interval: u32,
    pub solution_seq: Option<u64>,
    pub objective: Energy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "lowercase")]
pub enum EntryPayload {
    Offer(PostedOffer),
    Solution(Solution),
    Finalization(Finalization),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub seq: u64,
    pub author: String,
    #[serde(flatten)]
    pub payload: EntryPayload,
}

impl LedgerEntry {
    pub fn kind(&self) -> &'static str {
        match self.payload {
            EntryPayload::Offer(_) => "offer",
            EntryPayload::Solution(_) => "solution",
            EntryPayload::Finalization(_) => "finalization",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ledger {
    entries: Vec<LedgerEntry>,
    offers: BTreeMap<u64, usize>,
    solutions: BTreeMap<u32, Vec<u64>>,
    by_seq: BTreeMap<u64, usize>,
    finalized: BTreeMap<u32, Finalization>,
    finalized_fill: BTreeMap<u64, Energy>,
}

impl Ledger {
    pub fn new() -> Self {
        Ledger::default()
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn next_seq(&self) -> u64 {
        self.entries.last().map_or(0, |e| e.seq + 1)
    }

    fn push(&mut self, author: &str, payload: EntryPayload) -> u64 {
        let seq = self.next_seq();
        self.by_seq.insert(seq, self.entries.len());
        self.entries.push(LedgerEntry { seq, author: author.to_string(), payload });
        seq
    }

    /// Appends an offer posted during `current` with the owner's prediction
    /// window `window`; the current interval counts as part of the window.
    pub fn post_offer(&mut self, offer: Offer, current: u32, window: u32, author: &str) -> Result<u64, MarketError> {
        check_offer(&offer, current, window)?;
        let seq = self.next_seq();
        self.offers.insert(seq, self.entries.len());
        let posted = PostedOffer { seq, posted_interval: current, window, offer };
        Ok(self.push(author, EntryPayload::Offer(posted)))
    }

    pub fn offer(&self, seq: u64) -> Option<&PostedOffer> {
        self.offers.get(&seq).and_then(|&i| match &self.entries[i].payload {
            EntryPayload::Offer(p) => Some(p),
            _ => None,
        })
    }

    pub fn offers(&self) -> impl Iterator<Item = &PostedOffer> {
        self.offers.values().filter_map(|&i| match &self.entries[i].payload {
            EntryPayload::Offer(p) => Some(p),
            _ => None,
        })
    }

    /// Offers covering `interval` that still have unfinalized quantity.
    pub fn open_offers(&self, interval: u32) -> Vec<PostedOffer> {
        self.offers()
            .filter(|p| p.offer.covers(interval) && self.remaining(p.seq).is_positive())
            .cloned()
            .collect()
    }

    /// Quantity of an offer not yet consumed by finalized solutions.
    pub fn remaining(&self, seq: u64) -> Energy {
        match self.offer(seq) {
            Some(p) => p.offer.quantity - self.finalized_fill.get(&seq).copied().unwrap_or_default(),
            None => Energy::ZERO,
        }
    }

    pub fn finalized_fill(&self, seq: u64) -> Energy {
        self.finalized_fill.get(&seq).copied().unwrap_or_default()
    }

    pub fn append_solution(&mut self, solution: Solution, author: &str) -> Result<u64, MarketError> {
        if self.finalized.contains_key(&solution.target_interval) {
            return Err(MarketError::SolutionAfterFinalization(solution.target_interval));
        }
        let next = self.next_seq();
        for r in solution.offer_refs() {
            if self.offer(r).is_none() {
                return Err(MarketError::DanglingOffer(r));
            }
            if r >= next {
                return Err(MarketError::FutureReference { offer: r, entry: next });
            }
        }
        let interval = solution.target_interval;
        let seq = self.push(author, EntryPayload::Solution(solution));
        self.solutions.entry(interval).or_default().push(seq);
        Ok(seq)
    }

    pub fn solution(&self, seq: u64) -> Option<&Solution> {
        self.by_seq.get(&seq).and_then(|&i| match &self.entries[i].payload {
            EntryPayload::Solution(s) => Some(s),
            _ => None,
        })
    }

    /// Candidate solutions for `interval` in posting order.
    pub fn solutions_for(&self, interval: u32) -> Vec<(u64, &Solution)> {
        self.solutions
            .get(&interval)
            .map(|seqs| seqs.iter().filter_map(|&s| self.solution(s).map(|sol| (s, sol))).collect())
            .unwrap_or_default()
    }

    pub fn finalize_interval(
        &mut self,
        interval: u32,
        solution_seq: Option<u64>,
        author: &str,
    ) -> Result<u64, MarketError> {
        if self.finalized.contains_key(&interval) {
            return Err(MarketError::AlreadyFinalized(interval));
        }
        let objective = match solution_seq {
            Some(s) => {
                let sol = self.solution(s).ok_or(MarketError::DanglingOffer(s))?;
                let fills = sol.filled_by_offer();
                let bulk: Vec<(u64, Energy)> = sol.bulk.iter().map(|b| (b.buy_offer, b.quantity)).collect();
                let objective = sol.objective;
                for (seq, q) in fills.into_iter().chain(bulk) {
                    *self.finalized_fill.entry(seq).or_default() += q;
                }
                objective
            }
            None => Energy::ZERO,
        };
        let fin = Finalization { interval, solution_seq, objective };
        self.finalized.insert(interval, fin.clone());
        Ok(self.push(author, EntryPayload::Finalization(fin)))
    }

    pub fn finalization(&self, interval: u32) -> Option<&Finalization> {
        self.finalized.get(&interval)
    }

    pub fn is_finalized(&self, interval: u32) -> bool {
        self.finalized.contains_key(&interval)
    }

    /// Matches of the solution finalized for `interval`.
    pub fn finalized_solution(&self, interval: u32) -> Option<&Solution> {
        self.finalized.get(&interval).and_then(|f| f.solution_seq).and_then(|s| self.solution(s))
    }

    pub fn dump_jsonl(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(&serde_json::to_string(e).expect("ledger entries serialize"));
            s.push('\n');
        }
        s
    }

    /// Rebuilds a ledger by re-applying every entry in order.
    pub fn replay(entries: &[LedgerEntry]) -> Result<Ledger, MarketError> {
        let mut ledger = Ledger::new();
        for e in entries {
            let expected = ledger.next_seq();
            if e.seq != expected {
                return Err(MarketError::FutureReference { offer: e.seq, entry: expected });
            }
            match &e.payload {
                EntryPayload::Offer(p) => {
                    ledger.post_offer(p.offer.clone(), p.posted_interval, p.window, &e.author)?;
                }
                EntryPayload::Solution(s) => {
                    ledger.append_solution(s.clone(), &e.author)?;
                }
                EntryPayload::Finalization(f) => {
                    ledger.finalize_interval(f.interval, f.solution_seq, &e.author)?;
                }
            }
        }
        Ok(ledger)
    }

    pub fn parse_jsonl(text: &str) -> Result<Vec<LedgerEntry>, serde_json::Error> {
        text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
    }
}

fn check_offer(offer: &Offer, current: u32, window: u32) -> Result<(), MarketError> {
    if !offer.quantity.is_positive() {
        return Err(MarketError::NonPositiveQuantity);
    }
    if offer.intervals.is_empty() {
        return Err(MarketError::EmptyIntervals);
    }
    for &t in &offer.intervals {
        if t < current {
            return Err(MarketError::StaleInterval { interval: t, current });
        }
        if t >= current + window.max(1) {
            return Err(MarketError::OutsideWindow { interval: t, window, current });
        }
    }
    Ok(())
}
