// SPDX-License-Identifier: Apache-2.0

//! Centralized double auction and the ledger-mediated decentralized market.

pub mod auction;
pub mod dso;
pub mod ledger;
pub mod solver;
pub mod validate;

pub use auction::{build_demand_curve, clear_double_auction, publish_clearing, Bid, ClearingResult, DemandCurve, Side, BULK_SUPPLIER};
pub use dso::{fcfs_match, fixed_price_match, market_efficiency};
pub use ledger::{BulkFill, EntryPayload, Finalization, Ledger, LedgerEntry, Match, Offer, PostedOffer, Solution};
pub use solver::{solver_match, BatteryBook, Candidate, GridContext, PricingRule, SolverStrategy};
pub use validate::{score_candidates, select_best_solution, validate_solution, ScoredCandidate, Violation};
