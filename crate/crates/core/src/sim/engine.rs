// SPDX-License-Identifier: Apache-2.0

//! Interval-stepped orchestration of agents, markets, network and attacks.
//!
//! Each interval runs in a fixed order relative to its start time `T`:
//! bids or offers are formed and sent at `T`, the market collects them at
//! `T+60s`, solver notifications are collected at `T+120s`, solutions at
//! `T+180s`, after which the interval is finalized and settled.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analytics::{zscore_detector, CurveSnapshot, DetectionAlert, MetricRow, MetricSeries};
use crate::attacks::{AttackLayer, AttackReport};
use crate::error::{SimError, SimResult};
use crate::grid::{battery_step, synth_profiles, BatterySpec, BatteryState, FeederTopology, ProsumerId, Role};
use crate::hvac::{HvacController, HvacParams, HvacState, PriceHistory, HISTORY_LEN, SEED_P_MEAN, SEED_SIGMA_P};
use crate::market::auction::{build_demand_curve, clear_double_auction, Bid, Side, BULK_SUPPLIER};
use crate::market::dso::{fcfs_match, fixed_price_match, market_efficiency};
use crate::market::ledger::{Ledger, LedgerEntry, Offer, PostedOffer, Solution};
use crate::market::solver::{candidates, solver_match, BatteryBook, GridContext, PricingRule};
use crate::market::validate::{score_candidates, select_best_solution};
use crate::net::{
    capture_traffic_summary, Endpoint, Message, MessageKind, NetStats, Network, Payload, TrafficEntry, TrafficRecord,
};
use crate::rng;
use crate::sim::clock::SimClock;
use crate::sim::config::{MarketMode, ScenarioConfig};
use crate::units::{Energy, Price, SimTime};

const COLLECT_BIDS: u64 = 60;
const COLLECT_NOTIFY: u64 = 120;
const COLLECT_SOLUTIONS: u64 = 180;
const WORKSTATIONS: u32 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    BidFormed { owner: ProsumerId, side: Side, price: Price, quantity: Energy },
    BidSubmitted { owner: ProsumerId, side: Side, price: Price, quantity: Energy },
    BidRemoved { owner: ProsumerId },
    Clearing { price: Option<Price>, matched: Energy },
    OfferFormed { owner: ProsumerId, side: Side, quantity: Energy, intervals: Vec<u32> },
    OfferPosted { seq: u64, owner: ProsumerId, side: Side, quantity: Energy },
    OfferRejected { owner: ProsumerId, reason: String },
    SolutionPosted { seq: u64, solver: u32, objective: Energy },
    SolutionRejected { seq: u64, violations: Vec<String> },
    Finalized { solution_seq: Option<u64>, objective: Energy },
    Settled { local: Energy, bulk: Energy, consumed: Energy },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub interval: u32,
    pub time_us: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocRow {
    pub interval: u32,
    pub prosumer_id: ProsumerId,
    pub soc: Energy,
    pub stranded: Energy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HvacRow {
    pub interval: u32,
    pub prosumer_id: ProsumerId,
    pub t_current: f64,
    pub t_set: f64,
    pub bid_price: Option<f64>,
    pub bid: Energy,
    pub filled: Energy,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FinalStates {
    pub hvac: BTreeMap<ProsumerId, HvacState>,
    pub batteries: BTreeMap<ProsumerId, Energy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub intervals: u32,
    pub total_traded_kwh: Energy,
    pub local_kwh: Energy,
    pub bulk_kwh: Energy,
    pub consumed_kwh: Energy,
    pub efficiency: f64,
    pub alert_count: usize,
    pub clearing_price_std: f64,
    pub network: NetStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: ScenarioConfig,
    pub topology: FeederTopology,
    pub metric_series: MetricSeries,
    pub curves: Vec<CurveSnapshot>,
    pub event_log: Vec<Event>,
    pub ledger: Option<Vec<LedgerEntry>>,
    pub traffic: Vec<TrafficRecord>,
    pub delivered: Vec<TrafficEntry>,
    pub attack_report: AttackReport,
    pub alerts: Vec<DetectionAlert>,
    pub soc_rows: Vec<SocRow>,
    pub hvac_rows: Vec<HvacRow>,
    pub final_states: FinalStates,
    pub summary: RunSummary,
}

impl RunResult {
    /// Finalized matches per interval, the object compared across runs.
    pub fn finalized_solutions(&self) -> BTreeMap<u32, Option<Solution>> {
        let Some(entries) = &self.ledger else { return BTreeMap::new() };
        let Ok(ledger) = Ledger::replay(entries) else { return BTreeMap::new() };
        (0..self.summary.intervals).map(|k| (k, ledger.finalized_solution(k).cloned())).collect()
    }
}

/// What one `step_interval` call produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalReport {
    pub interval: u32,
    pub metrics: MetricRow,
}

#[derive(Debug, Clone)]
struct Agent {
    id: ProsumerId,
    role: Role,
    hvac: Option<HvacController>,
    buy_reservation: Option<Price>,
    sell_reservation: Option<Price>,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    config: ScenarioConfig,
    clock: SimClock,
    topology: FeederTopology,
    agents: BTreeMap<ProsumerId, Agent>,
    network: Network,
    attacks: AttackLayer,
    ledger: Ledger,
    book: BatteryBook,
    stranded: BTreeMap<ProsumerId, Energy>,
    fresh_offers: BTreeMap<ProsumerId, u64>,
    views: Vec<BTreeMap<u64, PostedOffer>>,
    bid_seq: u64,
    metrics: MetricSeries,
    curves: Vec<CurveSnapshot>,
    events: Vec<Event>,
    soc_rows: Vec<SocRow>,
    hvac_rows: Vec<HvacRow>,
}

fn uniform(rng: &mut rng::StreamRng, range: (f64, f64)) -> f64 {
    if range.1 > range.0 {
        rng.gen_range(range.0..range.1)
    } else {
        range.0
    }
}

fn halted(k: u32, reason: impl std::fmt::Display) -> SimError {
    SimError::Halted { interval: k, reason: reason.to_string() }
}

impl Simulation {
    pub fn new(config: ScenarioConfig) -> SimResult<Self> {
        Self::with_base_dir(config, None)
    }

    /// Like [`Simulation::new`], resolving relative topology paths from `base_dir`.
    pub fn with_base_dir(config: ScenarioConfig, base_dir: Option<&Path>) -> SimResult<Self> {
        let mut topology = config.validate_all(base_dir)?;
        let horizon = config.horizon();
        let seed = config.rng_seed;
        let per_day = config.intervals_per_day;

        let profiles = synth_profiles(seed, &topology, &config.profiles, per_day);
        let b = &config.batteries;
        for p in &mut topology.prosumers {
            if p.load_profile.is_empty() && p.generation_profile.is_empty() {
                if let Some(profile) = profiles.get(&p.id) {
                    p.load_profile = profile.load.clone();
                    p.generation_profile = profile.generation.clone();
                }
            }
            if b.enabled && p.role == Role::Producer && p.battery.is_none() {
                p.battery = Some(BatterySpec {
                    capacity: Energy::from_kwh(b.capacity_kwh),
                    max_charge_rate: Energy::from_kwh(b.max_charge_kwh),
                    max_discharge_rate: Energy::from_kwh(b.max_discharge_kwh),
                    efficiency: b.efficiency,
                    initial_soc: Energy::from_kwh(b.initial_soc_kwh),
                });
            }
        }
        topology.prosumers.sort_by_key(|p| p.id);

        let mut agent_rng = rng::stream(seed, rng::AGENTS);
        let c = &config.centralized;
        let o = &config.offers;
        let mut agents = BTreeMap::new();
        let mut book = BatteryBook::default();
        let mut stranded = BTreeMap::new();
        for p in &topology.prosumers {
            let t_target = uniform(&mut agent_rng, c.t_target_range);
            let rated = uniform(&mut agent_rng, c.rated_kw_range);
            let drift = uniform(&mut agent_rng, c.drift_range);
            let cooling = uniform(&mut agent_rng, c.cooling_range);
            let t_offset = uniform(&mut agent_rng, (-0.5, 1.5));
            let levels = o.reservation_levels as i64;
            let level = agent_rng.gen_range(-levels..=levels) as f64;
            let offset = o.reservation_step * level;
            let hvac = if p.role == Role::Consumer && config.market_mode == MarketMode::Centralized {
                let params = p.hvac.clone().unwrap_or(HvacParams {
                    t_target,
                    t_min: t_target - c.comfort_below_c,
                    t_max: t_target + c.comfort_above_c,
                    sigma_t: c.sigma_t,
                    rated_power_kw: rated,
                    mode: Default::default(),
                    drift_coeff: drift,
                    cooling_per_interval: cooling,
                });
                let history = PriceHistory::new(HISTORY_LEN, SEED_P_MEAN, SEED_SIGMA_P).with_sigma_floor(c.sigma_floor);
                let t0 = params.t_target + t_offset;
                Some(HvacController::new(params, t0, history)?)
            } else {
                None
            };
            let buy_reservation = o.buy_reservation.map(|r| Price::from_f64((r + offset).max(0.0)));
            let sell_reservation = o.sell_reservation.map(|r| Price::from_f64((r + offset).max(0.0)));
            if let Some(spec) = &p.battery {
                stranded.insert(p.id, spec.initial_soc);
                book.states.insert(p.id, BatteryState::new(spec.clone()));
            }
            agents.insert(p.id, Agent { id: p.id, role: p.role, hvac, buy_reservation, sell_reservation });
        }

        let mut network = Network::new(config.network_params.clone(), seed).with_noise(config.noise.clone());
        network.register_all(topology.prosumers.iter().map(|p| Endpoint::Prosumer(p.id)));
        network.register_all([Endpoint::Market, Endpoint::Ledger, Endpoint::Dso]);
        network.register_all((0..config.solvers()).map(Endpoint::Solver));
        network.register_all((0..WORKSTATIONS).map(Endpoint::Workstation));

        let attacks = AttackLayer::new(&config.attack_list, seed, &topology);
        let views = vec![BTreeMap::new(); config.solvers() as usize];
        let _ = horizon;
        Ok(Simulation {
            clock: SimClock::new(per_day, config.interval_seconds),
            config,
            topology,
            agents,
            network,
            attacks,
            ledger: Ledger::new(),
            book,
            stranded,
            fresh_offers: BTreeMap::new(),
            views,
            bid_seq: 0,
            metrics: MetricSeries::default(),
            curves: Vec::new(),
            events: Vec::new(),
            soc_rows: Vec::new(),
            hvac_rows: Vec::new(),
        })
    }

    pub fn clock(&self) -> &SimClock {
        &self.clock
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn topology(&self) -> &FeederTopology {
        &self.topology
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn batteries(&self) -> &BatteryBook {
        &self.book
    }

    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    pub fn hvac_states(&self) -> BTreeMap<ProsumerId, HvacState> {
        self.agents.values().filter_map(|a| a.hvac.as_ref().map(|h| (a.id, h.state.clone()))).collect()
    }

    pub fn network_stats(&self) -> NetStats {
        self.network.stats()
    }

    pub fn is_done(&self) -> bool {
        self.clock.interval_index >= self.config.horizon()
    }

    fn event(&mut self, k: u32, time: SimTime, kind: EventKind) {
        self.events.push(Event { interval: k, time_us: time.micros(), kind });
    }

    fn next_seq(&mut self) -> u64 {
        let s = self.bid_seq;
        self.bid_seq += 1;
        s
    }

    /// Sends through the attack layer and the link.
    fn transmit(&mut self, k: u32, msg: Message) -> SimResult<()> {
        if self.attacks.should_drop(k, &msg) {
            self.network.suppress(msg)?;
        } else {
            self.network.send(msg)?;
        }
        Ok(())
    }

    pub fn step_interval(&mut self) -> SimResult<IntervalReport> {
        let k = self.clock.interval_index;
        if self.is_done() {
            return Err(SimError::PastHorizon(self.config.horizon()));
        }
        let row = match self.config.market_mode {
            MarketMode::Centralized => self.step_centralized(k)?,
            _ => self.step_decentralized(k)?,
        };
        self.metrics.rows.push(row.clone());
        self.clock.advance();
        Ok(IntervalReport { interval: k, metrics: row })
    }

    fn outdoor_temperature(&self, k: u32) -> f64 {
        let c = &self.config.centralized;
        let hour = self.clock.hour_of(k);
        // triangle wave: coolest 12 h before the peak
        let mut d = (hour - c.outdoor_peak_hour).abs();
        if d > 12.0 {
            d = 24.0 - d;
        }
        c.outdoor_max_c - (c.outdoor_max_c - c.outdoor_min_c) * d / 12.0
    }

    fn step_centralized(&mut self, k: u32) -> SimResult<MetricRow> {
        let t0 = self.clock.start_of(k);
        let secs = self.config.interval_seconds;
        let mut formed = Vec::new();
        let ids: Vec<ProsumerId> = self.agents.keys().copied().collect();
        let mut hvac_bids: BTreeMap<ProsumerId, (Option<f64>, Energy)> = BTreeMap::new();
        for id in &ids {
            let agent = self.agents.get_mut(id).expect("agent exists");
            let bid = match (&mut agent.hvac, agent.role) {
                (Some(ctrl), _) => {
                    let formed_bid = ctrl.form_bid(secs).map_err(|e| halted(k, e))?;
                    hvac_bids.insert(*id, (formed_bid.map(|b| b.0), formed_bid.map_or(Energy::ZERO, |b| b.1)));
                    formed_bid.map(|(p, q)| (Side::Buy, Price::from_f64(p), q))
                }
                (None, Role::Producer) => {
                    let gen = self.topology.prosumer(*id).map_or(Energy::ZERO, |p| p.generation_at(k));
                    gen.is_positive().then(|| (Side::Sell, Price::from_f64(self.config.centralized.producer_price), gen))
                }
                (None, Role::Consumer) => None,
            };
            if let Some((side, price, quantity)) = bid {
                let seq = self.next_seq();
                formed.push(Bid { owner_id: *id, side, price, quantity, interval: k, submit_seq: seq });
            }
        }
        for b in formed.clone() {
            self.event(k, t0, EventKind::BidFormed { owner: b.owner_id, side: b.side, price: b.price, quantity: b.quantity });
            let owner = b.owner_id;
            match self.attacks.transform_bid(k, b) {
                Some(b) => {
                    self.event(k, t0, EventKind::BidSubmitted { owner, side: b.side, price: b.price, quantity: b.quantity });
                    let msg = Message::new(Endpoint::Prosumer(owner), Endpoint::Market, MessageKind::Bid, t0, Payload::Bid(b));
                    self.transmit(k, msg)?;
                }
                None => self.event(k, t0, EventKind::BidRemoved { owner }),
            }
        }
        let mut bulk = Vec::new();
        for step in self.config.centralized.bulk_ladder.clone() {
            let seq = self.next_seq();
            bulk.push(Bid {
                owner_id: BULK_SUPPLIER,
                side: Side::Sell,
                price: Price::from_f64(step.price),
                quantity: Energy::from_kwh(step.kwh),
                interval: k,
                submit_seq: seq,
            });
        }
        self.network.inject_background_traffic(self.config.background_rate, t0, secs)?;

        let t_bids = t0.plus_micros(COLLECT_BIDS * SimTime::MICROS_PER_SEC);
        let mut received: Vec<Bid> = Vec::new();
        for m in self.network.deliver_due(t_bids) {
            if let Payload::Bid(b) = m.payload {
                if b.interval == k {
                    received.push(b);
                }
            }
        }
        let every = self.config.curve_every;
        if every > 0 && k.is_multiple_of(every) {
            let formed_all: Vec<Bid> = formed.iter().chain(&bulk).cloned().collect();
            let received_all: Vec<Bid> = received.iter().chain(&bulk).cloned().collect();
            for (stage, bids) in [("formed", formed_all), ("received", received_all)] {
                let curve = build_demand_curve(&bids).map_err(|e| halted(k, e))?;
                self.curves.push(CurveSnapshot { interval: k, stage: stage.into(), curve });
            }
        }
        let mut book = received.clone();
        book.extend(bulk);
        let result = clear_double_auction(k, &book).map_err(|e| halted(k, e))?;
        self.event(k, t_bids, EventKind::Clearing { price: result.clearing_price, matched: result.matched_quantity });

        let consumers: Vec<ProsumerId> = self.agents.values().filter(|a| a.hvac.is_some()).map(|a| a.id).collect();
        for id in &consumers {
            let msg = Message::new(
                Endpoint::Market,
                Endpoint::Prosumer(*id),
                MessageKind::Clearing,
                t_bids,
                Payload::Clearing { interval: k, price: result.clearing_price },
            );
            self.transmit(k, msg)?;
        }
        let t_notify = t0.plus_micros(COLLECT_NOTIFY * SimTime::MICROS_PER_SEC);
        for m in self.network.deliver_due(t_notify) {
            if let (Endpoint::Prosumer(id), Payload::Clearing { interval, price: Some(p) }) = (m.dst, &m.payload) {
                if *interval == k {
                    if let Some(ctrl) = self.agents.get_mut(&id).and_then(|a| a.hvac.as_mut()) {
                        ctrl.on_clearing(p.as_f64()).map_err(|e| halted(k, e))?;
                    }
                }
            }
        }

        let outdoor = self.outdoor_temperature(k);
        let mut setpoints = Vec::new();
        for id in &consumers {
            let filled = result.fill_of(*id, Side::Buy);
            let ctrl = self.agents.get_mut(id).and_then(|a| a.hvac.as_mut()).expect("hvac agent");
            let (bid_price, bid) = hvac_bids.get(id).copied().unwrap_or((None, Energy::ZERO));
            ctrl.advance_temperature(outdoor, filled.is_positive());
            setpoints.push(ctrl.state.t_set);
            self.hvac_rows.push(HvacRow {
                interval: k,
                prosumer_id: *id,
                t_current: ctrl.state.t_current,
                t_set: ctrl.state.t_set,
                bid_price,
                bid,
                filled,
            });
        }
        let bulk_kwh: Energy = result.fills.iter().filter(|f| f.side == Side::Sell && f.owner_id == BULK_SUPPLIER).map(|f| f.filled).sum();
        let local_kwh = result.filled(Side::Sell) - bulk_kwh;
        let consumed = result.filled(Side::Buy);
        let t_settle = t0.plus_micros(COLLECT_SOLUTIONS * SimTime::MICROS_PER_SEC);
        self.event(k, t_settle, EventKind::Settled { local: local_kwh, bulk: bulk_kwh, consumed });

        let buys: Vec<&Bid> = received.iter().filter(|b| b.side == Side::Buy).collect();
        Ok(MetricRow {
            interval: k,
            clearing_price: result.clearing_price,
            matched_kwh: result.matched_quantity,
            local_kwh,
            bulk_kwh,
            consumed_kwh: consumed,
            mean_setpoint: (!setpoints.is_empty()).then(|| setpoints.iter().sum::<f64>() / setpoints.len() as f64),
            attack_active: self.attacks.any_active(k),
            bid_qty_kwh: buys.iter().map(|b| b.quantity).sum(),
            mean_bid_price: mean_price(buys.iter().map(|b| b.price)),
            traffic_bytes: 0,
        })
    }

    /// Offers each prosumer posts at step `k`.
    fn form_offers(&self, k: u32) -> Vec<Offer> {
        let w = self.config.window();
        let h = self.config.horizon();
        let targets: Vec<u32> = if k == 0 { (0..w.min(h)).collect() } else if k + w - 1 < h { vec![k + w - 1] } else { vec![] };
        let mut out = Vec::new();
        for p in &self.topology.prosumers {
            let agent = &self.agents[&p.id];
            match p.role {
                Role::Consumer => {
                    for &t in &targets {
                        let q = p.load_at(t);
                        if q.is_positive() {
                            let mut o = Offer::new(p.id, Side::Buy, q, [t]);
                            o.reservation_price = agent.buy_reservation;
                            out.push(o);
                        }
                    }
                }
                Role::Producer if self.book.states.contains_key(&p.id) => {
                    let q = p.generation_at(k);
                    if q.is_positive() {
                        let last = (k + w - 1).min(h - 1);
                        let mut o = Offer::new(p.id, Side::Sell, q, k..=last).with_battery();
                        o.reservation_price = agent.sell_reservation;
                        out.push(o);
                    }
                }
                Role::Producer => {
                    for &t in &targets {
                        let q = p.generation_at(t);
                        if q.is_positive() {
                            let mut o = Offer::new(p.id, Side::Sell, q, [t]);
                            o.reservation_price = agent.sell_reservation;
                            out.push(o);
                        }
                    }
                }
            }
        }
        out
    }

    fn step_decentralized(&mut self, k: u32) -> SimResult<MetricRow> {
        let t0 = self.clock.start_of(k);
        let secs = self.config.interval_seconds;
        let w = self.config.window();
        let at = |s: u64| t0.plus_micros(s * SimTime::MICROS_PER_SEC);

        for offer in self.form_offers(k) {
            let owner = offer.owner_id;
            self.event(
                k,
                t0,
                EventKind::OfferFormed { owner, side: offer.side, quantity: offer.quantity, intervals: offer.intervals.clone() },
            );
            if let Some(o) = self.attacks.transform_offer(k, offer) {
                let msg = Message::new(Endpoint::Prosumer(owner), Endpoint::Ledger, MessageKind::Offer, t0, Payload::Offer(o));
                self.transmit(k, msg)?;
            }
        }
        self.network.inject_background_traffic(self.config.background_rate, t0, secs)?;

        let mut posted_buys: Vec<Offer> = Vec::new();
        self.fresh_offers.clear();
        for m in self.network.deliver_due(at(COLLECT_BIDS)) {
            let (Payload::Offer(o), Endpoint::Prosumer(author)) = (m.payload, m.src) else { continue };
            match self.ledger.post_offer(o.clone(), k, w, &format!("prosumer:{author}")) {
                Ok(seq) => {
                    self.event(k, at(COLLECT_BIDS), EventKind::OfferPosted { seq, owner: o.owner_id, side: o.side, quantity: o.quantity });
                    if o.side == Side::Buy {
                        posted_buys.push(o.clone());
                    }
                    if o.battery_backed && o.first_interval() == Some(k) {
                        self.fresh_offers.insert(o.owner_id, seq);
                    }
                    let posted = self.ledger.offer(seq).cloned().expect("just posted");
                    for s in 0..self.config.solvers() {
                        if let Some(copy) = self.attacks.transform_notification(k, s, posted.clone()) {
                            let msg = Message::new(
                                Endpoint::Ledger,
                                Endpoint::Solver(s),
                                MessageKind::Offer,
                                at(COLLECT_BIDS),
                                Payload::OfferNotify(copy),
                            );
                            self.transmit(k, msg)?;
                        }
                    }
                }
                Err(e) => self.event(k, at(COLLECT_BIDS), EventKind::OfferRejected { owner: o.owner_id, reason: e.to_string() }),
            }
        }
        for m in self.network.deliver_due(at(COLLECT_NOTIFY)) {
            if let (Payload::OfferNotify(p), Endpoint::Solver(s)) = (m.payload, m.dst) {
                if let Some(view) = self.views.get_mut(s as usize) {
                    view.insert(p.seq, p);
                }
            }
        }

        let default_price = Price::from_f64(self.config.dso.default_price);
        let solutions: Vec<(Endpoint, Solution)> = {
            let ctx = GridContext { topology: &self.topology, interval_seconds: secs, batteries: &self.book };
            match self.config.market_mode {
                MarketMode::DecentralizedAuction => (0..self.config.solvers())
                    .map(|s| {
                        let view: Vec<PostedOffer> =
                            self.views[s as usize].values().filter(|p| p.offer.covers(k)).cloned().collect();
                        let rule = PricingRule::Midpoint(default_price);
                        (Endpoint::Solver(s), solver_match(s, &view, &self.ledger, k, &ctx, self.config.solver_strategy, rule))
                    })
                    .collect(),
                MarketMode::DecentralizedFixedPrice => {
                    let cands = candidates(&self.ledger.open_offers(k), &self.ledger, k, &ctx);
                    let p = Price::from_f64(self.config.dso.fixed_price);
                    vec![(Endpoint::Dso, fixed_price_match(0, &cands, k, p, &ctx))]
                }
                MarketMode::DecentralizedFcfs => {
                    let cands = candidates(&self.ledger.open_offers(k), &self.ledger, k, &ctx);
                    vec![(Endpoint::Dso, fcfs_match(0, &cands, k, default_price, &ctx))]
                }
                MarketMode::Centralized => unreachable!("centralized mode has its own step"),
            }
        };
        for (src, sol) in solutions {
            let msg = Message::new(src, Endpoint::Ledger, MessageKind::Solution, at(COLLECT_NOTIFY), Payload::Solution(sol));
            self.transmit(k, msg)?;
        }
        for m in self.network.deliver_due(at(COLLECT_SOLUTIONS)) {
            let Payload::Solution(sol) = m.payload else { continue };
            let solver = sol.solver_id;
            let objective = sol.objective;
            match self.ledger.append_solution(sol, &m.src.to_string()) {
                Ok(seq) => self.event(k, at(COLLECT_SOLUTIONS), EventKind::SolutionPosted { seq, solver, objective }),
                Err(e) => self.event(
                    k,
                    at(COLLECT_SOLUTIONS),
                    EventKind::SolutionRejected { seq: self.ledger.next_seq(), violations: vec![e.to_string()] },
                ),
            }
        }

        let scored = {
            let ctx = GridContext { topology: &self.topology, interval_seconds: secs, batteries: &self.book };
            score_candidates(&self.ledger, k, &ctx)
        };
        for (c, v) in &scored {
            if !v.is_empty() {
                let violations = v.iter().map(ToString::to_string).collect();
                self.event(k, at(COLLECT_SOLUTIONS), EventKind::SolutionRejected { seq: c.seq, violations });
            }
        }
        let scores: Vec<_> = scored.iter().map(|(c, _)| *c).collect();
        let best = select_best_solution(&scores);
        self.ledger.finalize_interval(k, best, "dso")?;
        let finalized = self.ledger.finalized_solution(k).cloned().unwrap_or_else(|| Solution::empty(0, k));
        self.event(k, at(COLLECT_SOLUTIONS), EventKind::Finalized { solution_seq: best, objective: finalized.objective });

        let parties: BTreeSet<ProsumerId> = finalized.matches.iter().flat_map(|m| [m.seller_id, m.buyer_id]).collect();
        for p in parties {
            let msg = Message::new(
                Endpoint::Dso,
                Endpoint::Prosumer(p),
                MessageKind::Finalize,
                at(COLLECT_SOLUTIONS),
                Payload::Finalize { interval: k, matched: true },
            );
            self.transmit(k, msg)?;
        }

        self.settle_batteries(k, &finalized)?;

        let mut bought: BTreeMap<ProsumerId, Energy> = BTreeMap::new();
        for m in &finalized.matches {
            *bought.entry(m.buyer_id).or_default() += m.quantity;
        }
        let mut consumed = Energy::ZERO;
        let mut bulk = Energy::ZERO;
        for p in self.topology.prosumers.iter().filter(|p| p.role == Role::Consumer) {
            let load = p.load_at(k);
            consumed += load;
            bulk += (load - bought.get(&p.id).copied().unwrap_or_default()).max(Energy::ZERO);
        }
        let local = finalized.objective;
        self.event(k, at(COLLECT_SOLUTIONS), EventKind::Settled { local, bulk, consumed });

        for view in &mut self.views {
            view.retain(|_, p| p.offer.last_interval().is_some_and(|l| l > k));
        }

        Ok(MetricRow {
            interval: k,
            clearing_price: weighted_price(&finalized),
            matched_kwh: local,
            local_kwh: local,
            bulk_kwh: bulk,
            consumed_kwh: consumed,
            mean_setpoint: None,
            attack_active: self.attacks.any_active(k),
            bid_qty_kwh: posted_buys.iter().map(|o| o.quantity).sum(),
            mean_bid_price: mean_price(posted_buys.iter().filter_map(|o| o.reservation_price)),
            traffic_bytes: 0,
        })
    }

    /// Charges unsold fresh generation into storage lots, retires expired
    /// lots and applies the net change through `battery_step`.
    fn settle_batteries(&mut self, k: u32, finalized: &Solution) -> SimResult<()> {
        let owners: Vec<ProsumerId> = self.book.states.keys().copied().collect();
        for owner in owners {
            let gen = self.topology.prosumer(owner).map_or(Energy::ZERO, |p| p.generation_at(k));
            let fresh = self.fresh_offers.get(&owner).copied();
            let mut fresh_fill = Energy::ZERO;
            let mut discharge = Energy::ZERO;
            for m in finalized.matches.iter().filter(|m| m.seller_id == owner) {
                if Some(m.sell_offer) == fresh {
                    fresh_fill += m.quantity;
                } else if self.ledger.offer(m.sell_offer).is_some_and(|p| p.offer.from_storage(k)) {
                    discharge += m.quantity;
                    let lot = self.book.lots.entry(m.sell_offer).or_default();
                    *lot -= m.quantity;
                    if lot.wh() < 0 {
                        return Err(halted(k, format!("lot of offer {} overdrawn", m.sell_offer)));
                    }
                }
            }
            let expired: Vec<u64> = self
                .book
                .lots
                .keys()
                .copied()
                .filter(|seq| {
                    self.ledger.offer(*seq).is_some_and(|p| p.offer.owner_id == owner && p.offer.last_interval().is_none_or(|l| l <= k))
                })
                .collect();
            for seq in expired {
                let rest = self.book.lots.remove(&seq).unwrap_or_default();
                *self.stranded.entry(owner).or_default() += rest;
            }
            self.book.lots.retain(|_, q| q.is_positive());

            let state = self.book.states[&owner].clone();
            let spec = &state.spec;
            let stranded = self.stranded.get(&owner).copied().unwrap_or_default();
            let drain = stranded.min((spec.max_discharge_rate - discharge).max(Energy::ZERO));
            let storable = fresh
                .and_then(|seq| self.ledger.offer(seq))
                .is_some_and(|p| p.offer.last_interval().is_some_and(|l| l > k));
            let stored = if storable {
                (gen - fresh_fill)
                    .max(Energy::ZERO)
                    .scale(spec.efficiency)
                    .min(spec.max_charge_rate)
                    .min(spec.capacity - state.soc + discharge + drain)
                    .max(Energy::ZERO)
            } else {
                Energy::ZERO
            };
            let delta = stored - discharge - drain;
            let next = battery_step(&state, delta).map_err(|e| halted(k, e))?;
            self.stranded.insert(owner, stranded - drain);
            if let (true, Some(seq)) = (stored.is_positive(), fresh) {
                self.book.lots.insert(seq, stored);
            }
            let held: Energy = self
                .book
                .lots
                .iter()
                .filter(|(seq, _)| self.ledger.offer(**seq).is_some_and(|p| p.offer.owner_id == owner))
                .map(|(_, q)| *q)
                .sum();
            if held + self.stranded[&owner] != next.soc {
                return Err(halted(k, format!("battery {owner}: lots {held} + stranded do not match soc {}", next.soc)));
            }
            self.soc_rows.push(SocRow { interval: k, prosumer_id: owner, soc: next.soc, stranded: self.stranded[&owner] });
            self.book.states.insert(owner, next);
        }
        Ok(())
    }

    /// Runs the remaining intervals and assembles the result.
    pub fn run_to_completion(mut self) -> SimResult<RunResult> {
        while !self.is_done() {
            self.step_interval()?;
        }
        self.finish()
    }

    fn finish(mut self) -> SimResult<RunResult> {
        let horizon = self.clock.interval_index;
        self.network.flush();
        let end = self.clock.start_of(horizon);
        let delivered: Vec<TrafficEntry> = self.network.delivered_log().to_vec();
        let interval_us = self.config.interval_seconds as u64 * SimTime::MICROS_PER_SEC;
        for e in delivered.iter().filter(|e| e.send_time < end) {
            let k = (e.send_time.micros() / interval_us) as usize;
            if let Some(row) = self.metrics.rows.get_mut(k) {
                row.traffic_bytes += e.bytes as u64;
            }
        }
        let traffic = capture_traffic_summary(&delivered, end);
        let det = &self.config.detector;
        let mut alerts = Vec::new();
        for &signal in &det.signals {
            alerts.extend(zscore_detector(&self.metrics.signal(signal), signal, det.window, det.threshold)?);
        }
        let local: Energy = self.metrics.rows.iter().map(|r| r.local_kwh).sum();
        let bulk: Energy = self.metrics.rows.iter().map(|r| r.bulk_kwh).sum();
        let consumed: Energy = self.metrics.rows.iter().map(|r| r.consumed_kwh).sum();
        let summary = RunSummary {
            intervals: horizon,
            total_traded_kwh: crate::analytics::total_energy_traded(&self.metrics),
            local_kwh: local,
            bulk_kwh: bulk,
            consumed_kwh: consumed,
            efficiency: market_efficiency(local, consumed),
            alert_count: alerts.len(),
            clearing_price_std: self.metrics.clearing_price_std(),
            network: self.network.stats(),
        };
        let final_states = FinalStates {
            hvac: self.hvac_states(),
            batteries: self.book.states.iter().map(|(id, b)| (*id, b.soc)).collect(),
        };
        Ok(RunResult {
            ledger: self.config.market_mode.is_decentralized().then(|| self.ledger.entries().to_vec()),
            config: self.config,
            topology: self.topology,
            metric_series: self.metrics,
            curves: self.curves,
            event_log: self.events,
            traffic,
            delivered,
            attack_report: self.attacks.report().clone(),
            alerts,
            soc_rows: self.soc_rows,
            hvac_rows: self.hvac_rows,
            final_states,
            summary,
        })
    }
}

fn mean_price(prices: impl Iterator<Item = Price>) -> Option<Price> {
    let (sum, n) = prices.fold((0i128, 0i128), |(s, n), p| (s + p.micros() as i128, n + 1));
    (n > 0).then(|| Price::from_micros((sum / n) as i64))
}

fn weighted_price(s: &Solution) -> Option<Price> {
    let q: i128 = s.matches.iter().map(|m| m.quantity.wh() as i128).sum();
    if q == 0 {
        return None;
    }
    let v: i128 = s.matches.iter().map(|m| m.price.micros() as i128 * m.quantity.wh() as i128).sum();
    Some(Price::from_micros((v / q) as i64))
}

/// Validates the config, runs every interval and returns the result.
pub fn run_to_completion(config: ScenarioConfig) -> SimResult<RunResult> {
    Simulation::new(config)?.run_to_completion()
}

/// Convenience alias matching the scenario vocabulary.
pub fn init_scenario(config: ScenarioConfig) -> SimResult<Simulation> {
    Simulation::new(config)
}
