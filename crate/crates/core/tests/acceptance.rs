// SPDX-License-Identifier: Apache-2.0

//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints exactly one PASS/FAIL line; exits non-zero on any FAIL.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tmsim::analytics::{demand_curve_delta, Signal};
use tmsim::attacks::AttackAction;
use tmsim::grid::{relay_capacity, relay_flows, Feeder, FeederTopology, ProsumerSpec, Relay, Role};
use tmsim::hvac::{compute_bid_price, compute_setpoint, HvacMode, HvacParams, PriceHistory};
use tmsim::market::auction::{build_demand_curve, clear_double_auction, Bid, Side};
use tmsim::market::ledger::{Ledger, Offer};
use tmsim::market::solver::{solver_match, BatteryBook, GridContext, PricingRule, SolverStrategy};
use tmsim::market::validate::validate_solution;
use tmsim::sim::engine::EventKind;
use tmsim::sim::presets::ATTACK_ONSET;
use tmsim::sim::{run_preset, MarketMode, PresetOutcome, RunResult, ScenarioConfig, Simulation, TopologyRef};
use tmsim::{Energy, Price};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:?}, limit {limit:?}"))
}

// ---------------------------------------------------------------- 1

fn controller_identities() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let t_target = rng.gen_range(18.0..26.0);
        let params = HvacParams {
            t_target,
            t_min: t_target - rng.gen_range(0.5..4.0),
            t_max: t_target + rng.gen_range(0.5..4.0),
            sigma_t: rng.gen_range(0.2..3.0),
            rated_power_kw: 4.0,
            mode: HvacMode::Cooling,
            drift_coeff: 0.08,
            cooling_per_interval: 1.5,
        };
        let prices: Vec<f64> = (0..rng.gen_range(2..50)).map(|_| rng.gen_range(0.02..0.4)).collect();
        let history = PriceHistory::from_prices(&prices);
        let p_mean = history.p_mean();
        let sigma_p = history.effective_sigma_p();

        let at_mean = compute_setpoint(&params, &history, p_mean).map_err(|e| e.to_string())?;
        ensure(at_mean == params.t_target, || format!("case {i}: setpoint at p_mean {at_mean} != {}", params.t_target))?;
        let at_target = compute_bid_price(&params, &history, params.t_target).map_err(|e| e.to_string())?;
        ensure(at_target == p_mean, || format!("case {i}: bid at t_target {at_target} != {p_mean}"))?;

        // stay inside the comfort band so neither side clamps
        let u: f64 = rng.gen_range(-0.95..0.95);
        let p_clear = p_mean + u * params.sigma_t * sigma_p;
        if p_clear <= 0.0 {
            continue;
        }
        let t_set = compute_setpoint(&params, &history, p_clear).map_err(|e| e.to_string())?;
        let back = compute_bid_price(&params, &history, t_set).map_err(|e| e.to_string())?;
        let rel = (back - p_clear).abs() / p_clear.abs();
        worst = worst.max(rel);
        ensure(rel <= 1e-9, || format!("case {i}: round trip {p_clear} -> {t_set} -> {back} (rel {rel:e})"))?;
    }
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!("1000 parameterizations, worst round-trip error {worst:.1e}"))
}

// ---------------------------------------------------------------- 2

/// Largest quantity tradable at one uniform price, trying every bid price.
fn brute_force_volume(bids: &[Bid]) -> Energy {
    let prices: BTreeSet<Price> = bids.iter().map(|b| b.price).collect();
    prices
        .into_iter()
        .map(|p| {
            let supply: Energy = bids.iter().filter(|b| b.side == Side::Sell && b.price <= p).map(|b| b.quantity).sum();
            let demand: Energy = bids.iter().filter(|b| b.side == Side::Buy && b.price >= p).map(|b| b.quantity).sum();
            supply.min(demand)
        })
        .max()
        .unwrap_or(Energy::ZERO)
}

fn auction_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut cleared = 0;
    for i in 0..1000 {
        let n_buy = rng.gen_range(0..=8);
        let n_sell = rng.gen_range(0..=8);
        let mut bids = Vec::new();
        for j in 0..n_buy + n_sell {
            let side = if j < n_buy { Side::Buy } else { Side::Sell };
            bids.push(Bid {
                owner_id: j as u32 + 1,
                side,
                // coarse grid so ties and equal prices are common
                price: Price::from_micros(rng.gen_range(1..=20) * 10_000),
                quantity: Energy::from_wh(rng.gen_range(1..=10) * 250),
                interval: 0,
                submit_seq: j as u64,
            });
        }
        let r = clear_double_auction(0, &bids).map_err(|e| e.to_string())?;
        let expected = brute_force_volume(&bids);
        ensure(r.matched_quantity == expected, || format!("case {i}: matched {} != oracle {expected}", r.matched_quantity))?;
        ensure(r.filled(Side::Buy) == r.filled(Side::Sell), || format!("case {i}: fills unbalanced"))?;
        if let Some(p) = r.clearing_price {
            cleared += 1;
            let filled = |side| r.fills.iter().filter(move |f| f.side == side && f.filled.is_positive());
            let marginal_sell = filled(Side::Sell).map(|f| f.bid_price).max().expect("filled sell");
            let marginal_buy = filled(Side::Buy).map(|f| f.bid_price).min().expect("filled buy");
            ensure(marginal_sell <= p && p <= marginal_buy, || {
                format!("case {i}: price {p} outside [{marginal_sell}, {marginal_buy}]")
            })?;
            let paid: i128 = filled(Side::Buy).map(|f| p.micros() as i128 * f.filled.wh() as i128).sum();
            let received: i128 = filled(Side::Sell).map(|f| p.micros() as i128 * f.filled.wh() as i128).sum();
            ensure(paid == received && r.paid_by_buyers() == r.received_by_sellers(), || {
                format!("case {i}: budget {paid} vs {received}")
            })?;
            ensure(r.paid_by_buyers().0 == paid, || format!("case {i}: reported payment differs from oracle"))?;
        } else {
            ensure(expected == Energy::ZERO, || format!("case {i}: no price but oracle volume {expected}"))?;
        }
    }
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!("1000 instances, {cleared} cleared, volume and budget exact"))
}

// ---------------------------------------------------------------- 3

struct MatchCase {
    topology: FeederTopology,
    offers: Vec<Offer>,
    relay_kwh: i64,
}

fn match_case(rng: &mut ChaCha8Rng) -> MatchCase {
    let n = rng.gen_range(2..=6);
    let limit_kw = [4.0, 8.0, 20.0][rng.gen_range(0..3)];
    let reservations = [None, Some(0.08), Some(0.10), Some(0.12)];
    let mut prosumers = Vec::new();
    let mut offers = Vec::new();
    for i in 0..n {
        let id = i as u32 + 1;
        let side = if rng.gen_bool(0.5) { Side::Buy } else { Side::Sell };
        prosumers.push(ProsumerSpec {
            id,
            role: if side == Side::Sell { Role::Producer } else { Role::Consumer },
            feeder_id: rng.gen_range(1..=2),
            chain_position: 1,
            generation_profile: vec![],
            load_profile: vec![],
            battery: None,
            hvac: None,
        });
        let mut o = Offer::new(id, side, Energy::from_kwh(rng.gen_range(1..=4) as f64), [0]);
        o.reservation_price = reservations[rng.gen_range(0..4)].map(Price::from_f64);
        offers.push(o);
    }
    let topology = FeederTopology {
        feeders: vec![Feeder { id: 1 }, Feeder { id: 2 }],
        relays: vec![Relay { feeder_id: 1, limit_kw }, Relay { feeder_id: 2, limit_kw }],
        prosumers,
    };
    MatchCase { topology, offers, relay_kwh: relay_capacity(limit_kw, 900).wh() / 1000 }
}

fn compatible(sell: &Offer, buy: &Offer) -> bool {
    match (sell.reservation_price, buy.reservation_price) {
        (Some(a), Some(b)) => a <= b,
        _ => true,
    }
}

/// Edmonds-Karp on a dense matrix; tiny graphs only.
fn max_flow(cap: &mut [Vec<i64>], s: usize, t: usize) -> i64 {
    let n = cap.len();
    let mut flow = 0;
    loop {
        let mut prev = vec![usize::MAX; n];
        prev[s] = s;
        let mut queue = std::collections::VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                if prev[v] == usize::MAX && cap[u][v] > 0 {
                    prev[v] = u;
                    queue.push_back(v);
                }
            }
        }
        if prev[t] == usize::MAX {
            return flow;
        }
        let mut push = i64::MAX;
        let mut v = t;
        while v != s {
            push = push.min(cap[prev[v]][v]);
            v = prev[v];
        }
        v = t;
        while v != s {
            cap[prev[v]][v] -= push;
            cap[v][prev[v]] += push;
            v = prev[v];
        }
        flow += push;
    }
}

/// Best total over every whole-kWh fill vector that balances, respects the
/// relays and can be paired along compatible (seller, buyer) edges.
fn exhaustive_objective(case: &MatchCase) -> i64 {
    let offers = &case.offers;
    let qty: Vec<i64> = offers.iter().map(|o| o.quantity.wh() / 1000).collect();
    let feeder: Vec<u32> = offers
        .iter()
        .map(|o| case.topology.prosumer(o.owner_id).expect("owner").feeder_id)
        .collect();
    let n = offers.len();
    let mut best = 0;
    let mut fills = vec![0i64; n];
    loop {
        let sell: i64 = (0..n).filter(|&i| offers[i].side == Side::Sell).map(|i| fills[i]).sum();
        let buy: i64 = (0..n).filter(|&i| offers[i].side == Side::Buy).map(|i| fills[i]).sum();
        let relays_ok = [1, 2].iter().all(|&f| {
            let net: i64 = (0..n)
                .filter(|&i| feeder[i] == f)
                .map(|i| if offers[i].side == Side::Sell { fills[i] } else { -fills[i] })
                .sum();
            net.abs() <= case.relay_kwh
        });
        if sell == buy && sell > best && relays_ok {
            let (s, t) = (n, n + 1);
            let mut cap = vec![vec![0i64; n + 2]; n + 2];
            for i in 0..n {
                match offers[i].side {
                    Side::Sell => cap[s][i] = fills[i],
                    Side::Buy => cap[i][t] = fills[i],
                }
                for j in 0..n {
                    if offers[i].side == Side::Sell && offers[j].side == Side::Buy && compatible(&offers[i], &offers[j]) {
                        cap[i][j] = i64::MAX / 4;
                    }
                }
            }
            if max_flow(&mut cap, s, t) == sell {
                best = sell;
            }
        }
        // odometer over 0..=qty[i]
        let mut i = 0;
        while i < n {
            fills[i] += 1;
            if fills[i] <= qty[i] {
                break;
            }
            fills[i] = 0;
            i += 1;
        }
        if i == n {
            return best;
        }
    }
}

fn matching_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut total = 0;
    for i in 0..500 {
        let case = match_case(&mut rng);
        let mut ledger = Ledger::new();
        for o in &case.offers {
            ledger.post_offer(o.clone(), 0, 2, "test").map_err(|e| e.to_string())?;
        }
        let book = BatteryBook::default();
        let ctx = GridContext { topology: &case.topology, interval_seconds: 900, batteries: &book };
        let view = ledger.open_offers(0);
        let rule = PricingRule::Midpoint(Price::from_f64(0.10));
        let sol = solver_match(0, &view, &ledger, 0, &ctx, SolverStrategy::Exact, rule);
        let expected = exhaustive_objective(&case);
        ensure(sol.objective.wh() == expected * 1000, || {
            format!("case {i}: exact objective {} != exhaustive {expected} kWh", sol.objective)
        })?;
        let seq = ledger.append_solution(sol.clone(), "solver:0").map_err(|e| e.to_string())?;
        // validity is judged against the ledger as the DSO sees it, before finalizing
        let violations = validate_solution(&ledger, &sol, &ctx).map_err(|e| e.to_string())?;
        ensure(violations.is_empty(), || format!("case {i}: solution invalid: {violations:?}"))?;
        ledger.finalize_interval(0, Some(seq), "dso").map_err(|e| e.to_string())?;
        ensure(ledger.finalized_solution(0) == Some(&sol), || format!("case {i}: finalized a different solution"))?;
        total += expected;
    }
    within(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!("500 instances, {total} kWh matched in total, all finalized solutions valid"))
}

// ---------------------------------------------------------------- 4

fn prediction_window(sweep: &PresetOutcome) -> Outcome {
    let totals = |battery: bool| -> Vec<(i64, Energy)> {
        sweep
            .runs
            .iter()
            .filter(|(_, r)| r.config.batteries.enabled == battery)
            .map(|(_, r)| (r.config.prediction_window, r.summary.total_traded_kwh))
            .collect()
    };
    let plain = totals(false);
    let stored = totals(true);
    ensure(plain.len() == 12 && stored.len() == 12, || format!("expected 12+12 runs, got {}+{}", plain.len(), stored.len()))?;
    ensure(plain.iter().map(|(w, _)| *w).eq(2..=13), || "windows are not 2..13".into())?;
    ensure(plain.iter().all(|(_, t)| *t == plain[0].1), || format!("totals without batteries differ: {plain:?}"))?;
    ensure(stored.windows(2).all(|p| p[0].1 <= p[1].1), || format!("battery totals decrease: {stored:?}"))?;
    ensure(stored[11].1 > stored[0].1, || format!("window 13 {} not above window 2 {}", stored[11].1, stored[0].1))?;
    ensure(sweep.table.1.lines().count() == 25, || "sweep table is not 24 rows".into())?;
    Ok(format!(
        "no batteries: {} kWh at every window; batteries: {} -> {} kWh",
        plain[0].1, stored[0].1, stored[11].1
    ))
}

// ---------------------------------------------------------------- 5

fn feeder_safety(runs: &[&RunResult]) -> Outcome {
    let mut intervals = 0;
    let mut peak = 0.0f64;
    for r in runs {
        assert!(r.config.market_mode.is_decentralized());
        for (k, sol) in r.finalized_solutions() {
            let Some(sol) = sol else { continue };
            intervals += 1;
            let flows = relay_flows(sol.matches.iter().map(|m| m.transfer()), &r.topology, r.config.interval_seconds)
                .map_err(|e| e.to_string())?;
            for relay in &r.topology.relays {
                let kw = flows.kw(relay.feeder_id).abs();
                peak = peak.max(kw);
                ensure(kw <= relay.limit_kw, || {
                    format!("{} interval {k}: feeder {} carries {kw} kW > {}", r.config.name, relay.feeder_id, relay.limit_kw)
                })?;
            }
        }
    }
    Ok(format!("{} runs, {intervals} finalized intervals, peak relay flow {peak:.3} kW", runs.len()))
}

// ---------------------------------------------------------------- 6

fn scripted_battery() -> Result<(Energy, Energy), String> {
    let spec = |id, role, gen: Vec<f64>, load: Vec<f64>| ProsumerSpec {
        id,
        role,
        feeder_id: 1,
        chain_position: id,
        generation_profile: gen.into_iter().map(Energy::from_kwh).collect(),
        load_profile: load.into_iter().map(Energy::from_kwh).collect(),
        battery: None,
        hvac: None,
    };
    let topology = FeederTopology {
        feeders: vec![Feeder { id: 1 }],
        relays: vec![Relay { feeder_id: 1, limit_kw: 20.0 }],
        prosumers: vec![spec(1, Role::Producer, vec![10.0, 0.0], vec![]), spec(2, Role::Consumer, vec![], vec![5.0, 5.0])],
    };
    let mut config = ScenarioConfig {
        topology_ref: TopologyRef::Inline(topology),
        market_mode: MarketMode::DecentralizedAuction,
        horizon: 2,
        prediction_window: 2,
        ..ScenarioConfig::default()
    };
    config.batteries.enabled = true;
    config.detector.window = 2;
    let r = Simulation::new(config).and_then(Simulation::run_to_completion).map_err(|e| e.to_string())?;
    let delivered = r.metric_series.rows[1].local_kwh;
    let soc_before = r.soc_rows.iter().find(|s| s.interval == 0).map(|s| s.soc).unwrap_or_default();
    let soc_after = r.soc_rows.iter().find(|s| s.interval == 1).map(|s| s.soc).unwrap_or_default();
    ensure(r.metric_series.rows[0].local_kwh == Energy::from_kwh(5.0), || "first interval did not trade 5 kWh".into())?;
    Ok((delivered, soc_before - soc_after))
}

fn battery_feasibility(runs: &[&RunResult]) -> Outcome {
    let mut rows = 0;
    for r in runs {
        for s in &r.soc_rows {
            let cap = r.topology.prosumer(s.prosumer_id).and_then(|p| p.battery.as_ref()).map(|b| b.capacity).expect("battery");
            rows += 1;
            ensure(s.soc >= Energy::ZERO && s.soc <= cap, || {
                format!("{} interval {} prosumer {}: soc {} outside [0, {cap}]", r.config.name, s.interval, s.prosumer_id, s.soc)
            })?;
        }
    }
    ensure(rows > 0, || "no battery trajectories were recorded".into())?;
    let (delivered, draw) = scripted_battery()?;
    ensure(delivered == draw && delivered == Energy::from_kwh(5.0), || {
        format!("scripted: delivered {delivered} but battery drew {draw}")
    })?;
    Ok(format!("{rows} SoC samples within bounds; scripted draw {draw} kWh = delivered {delivered} kWh"))
}

// ---------------------------------------------------------------- 7

/// Independent trailing z-score: alerts at points whose window (including
/// the point) has nonzero spread and |z| above the threshold.
fn oracle_alerts(xs: &[f64], window: usize, threshold: f64) -> Vec<usize> {
    (window - 1..xs.len())
        .filter(|&k| {
            let w = &xs[k + 1 - window..=k];
            let mean = w.iter().sum::<f64>() / window as f64;
            let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / window as f64;
            var > 0.0 && ((xs[k] - mean) / var.sqrt()).abs() > threshold
        })
        .collect()
}

fn profit_attack(outcome: &PresetOutcome) -> Outcome {
    let r = outcome.run("attacked").ok_or("missing attacked run")?;
    let mut worst_excess = f64::NEG_INFINITY;
    let mut checked = 0;
    let curves: BTreeMap<(u32, &str), _> = r.curves.iter().map(|c| ((c.interval, c.stage.as_str()), &c.curve)).collect();
    for k in 0..r.summary.intervals {
        let (Some(formed), Some(received)) = (curves.get(&(k, "formed")), curves.get(&(k, "received"))) else { continue };
        let compromised: BTreeSet<u32> = r
            .attack_report
            .events
            .iter()
            .filter(|e| e.interval == k && matches!(e.action, AttackAction::Scaled | AttackAction::Removed))
            .filter_map(|e| e.owner)
            .collect();
        let delta = demand_curve_delta(formed, received);
        if k < ATTACK_ONSET {
            ensure(delta == 0.0 && compromised.is_empty(), || format!("interval {k}: curve changed before onset"))?;
            continue;
        }
        let compromised_bids: Vec<Bid> = r
            .event_log
            .iter()
            .filter(|e| e.interval == k)
            .filter_map(|e| match &e.kind {
                EventKind::BidFormed { owner, side: Side::Buy, price, quantity } if compromised.contains(owner) => Some(Bid {
                    owner_id: *owner,
                    side: Side::Buy,
                    price: *price,
                    quantity: *quantity,
                    interval: k,
                    submit_seq: 0,
                }),
                _ => None,
            })
            .collect();
        let c = build_demand_curve(&compromised_bids).map_err(|e| e.to_string())?;
        let prices: BTreeSet<Price> = formed.buy.iter().chain(&received.buy).map(|(p, _)| *p).collect();
        let mut share = 0.0f64;
        for p in prices {
            let gap = (formed.demand_at(p) - received.demand_at(p)).abs();
            let bound = c.demand_at(p);
            ensure(gap <= bound, || format!("interval {k} price {p}: |delta| {gap} > compromised {bound}"))?;
            share = share.max(bound.kwh() / formed.demand_at(p).kwh().max(1e-9));
        }
        ensure(delta <= share, || format!("interval {k}: delta {delta} > compromised share {share}"))?;
        worst_excess = worst_excess.max(delta - share);
        checked += 1;
    }
    ensure(checked > 0, || "no attacked intervals had curve snapshots".into())?;
    ensure(r.attack_report.count(AttackAction::Scaled) > 0, || "the attack never fired".into())?;
    let det = &r.config.detector;
    ensure(det.threshold == 3.0, || "detector threshold is not 3.0".into())?;
    ensure(r.alerts.is_empty(), || format!("{} alerts raised: {:?}", r.alerts.len(), r.alerts))?;
    for signal in &det.signals {
        let oracle = oracle_alerts(&r.metric_series.signal(*signal), det.window, det.threshold);
        ensure(oracle.is_empty(), || format!("oracle z-score alerts on {signal:?}: {oracle:?}"))?;
    }
    Ok(format!("{checked} attacked intervals within the compromised-quantity bound; zero alerts"))
}

// ---------------------------------------------------------------- 8

fn disruption_attack(outcome: &PresetOutcome) -> Outcome {
    let base = outcome.run("baseline").ok_or("missing baseline run")?;
    let att = outcome.run("attacked").ok_or("missing attacked run")?;
    let share = {
        let consumers = att.topology.count_role(Role::Consumer) as f64;
        let targeted: BTreeSet<u32> = att.attack_report.events.iter().filter_map(|e| e.owner).collect();
        targeted.len() as f64 / consumers
    };
    ensure(share >= 0.5, || format!("only {share:.2} of consumers targeted"))?;
    let (sb, sa) = (base.summary.clearing_price_std, att.summary.clearing_price_std);
    ensure(sa > sb, || format!("price std {sa} not above baseline {sb}"))?;
    ensure(att.config.detector.threshold == 3.0, || "detector threshold is not 3.0".into())?;
    ensure(!att.alerts.is_empty(), || "no detector alerts".into())?;
    let oracle = oracle_alerts(&att.metric_series.signal(Signal::BidQtyZ), att.config.detector.window, 3.0);
    let reported: Vec<usize> =
        att.alerts.iter().filter(|a| a.signal == Signal::BidQtyZ).map(|a| a.interval as usize).collect();
    ensure(oracle == reported, || format!("alerts {reported:?} differ from oracle {oracle:?}"))?;
    Ok(format!(
        "{:.0}% targeted; price std {sb:.4} -> {sa:.4}; {} alert(s), first at interval {}",
        share * 100.0,
        att.alerts.len(),
        att.alerts[0].interval
    ))
}

// ---------------------------------------------------------------- 9

fn mitigation(outcome: &PresetOutcome) -> Outcome {
    let base = outcome.run("baseline").ok_or("missing baseline run")?;
    let att = outcome.run("attacked").ok_or("missing attacked run")?;
    ensure(att.config.solvers() == 3, || "not a 3-solver run".into())?;
    let a = base.finalized_solutions();
    let b = att.finalized_solutions();
    ensure(a.len() == base.summary.intervals as usize && a.len() == b.len(), || "interval counts differ".into())?;
    for (k, sa) in &a {
        let sb = &b[k];
        let key = |s: &Option<tmsim::market::ledger::Solution>| s.as_ref().map(|s| (s.matches.clone(), s.objective));
        ensure(key(sa) == key(sb), || format!("interval {k}: finalized solutions differ"))?;
    }
    let rejected = att.event_log.iter().filter(|e| matches!(e.kind, EventKind::SolutionRejected { .. })).count();
    ensure(rejected > 0, || "the partitioned solver never produced a rejected solution".into())?;
    let partitioned = att.attack_report.count(AttackAction::Partitioned);
    Ok(format!("{} intervals identical; {partitioned} notifications corrupted, {rejected} solutions rejected", a.len()))
}

// ---------------------------------------------------------------- 10

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).expect("readable") {
            let p = entry.expect("entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).expect("prefix").to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).expect("readable"));
            }
        }
    }
    out
}

fn determinism(first: &Path, replay: &dyn Fn(&str, &Path) -> Result<(), String>) -> Outcome {
    let mut files = 0;
    for name in tmsim::sim::PRESETS {
        let again = tempfile::tempdir().map_err(|e| e.to_string())?;
        replay(name, again.path())?;
        let a = tree(&first.join(name));
        let b = tree(again.path());
        ensure(!a.is_empty(), || format!("{name}: no files written"))?;
        ensure(a.keys().eq(b.keys()), || format!("{name}: file sets differ"))?;
        for (path, bytes) in &a {
            ensure(&b[path] == bytes, || format!("{name}: {path} differs between runs"))?;
        }
        files += a.len();
    }
    Ok(format!("4 presets replayed, {files} files byte-identical"))
}

// ---------------------------------------------------------------- 11

fn conservation(runs: &[&RunResult]) -> Outcome {
    let mut messages = 0;
    for r in runs {
        let s = &r.summary.network;
        ensure(s.sent == s.delivered + s.dropped(), || format!("{}: sent {} != {} + {}", r.config.name, s.sent, s.delivered, s.dropped()))?;
        ensure(s.delivered == r.delivered.len() as u64, || format!("{}: delivered log length differs", r.config.name))?;
        let bytes: u64 = r.delivered.iter().map(|e| e.bytes as u64).sum();
        let summary_bytes: u64 = r.traffic.iter().map(|t| t.total_bytes).sum();
        let summary_packets: u64 = r.traffic.iter().map(|t| t.packet_count).sum();
        ensure(bytes == summary_bytes && summary_packets == s.delivered, || {
            format!("{}: capture {summary_bytes} B / {summary_packets} pkts vs delivered {bytes} B / {}", r.config.name, s.delivered)
        })?;
        let metric_bytes: u64 = r.metric_series.rows.iter().map(|m| m.traffic_bytes).sum();
        ensure(metric_bytes == bytes, || format!("{}: per-interval traffic {metric_bytes} != {bytes}", r.config.name))?;
        messages += s.sent;
    }
    Ok(format!("{} runs, {messages} messages, byte totals reconcile", runs.len()))
}

// ----------------------------------------------------------------

fn main() {
    let out = tempfile::tempdir().expect("tempdir");
    let run = |name: &str, dir: &Path| run_preset(name, dir, None, &[]).map_err(|e| format!("{name}: {e}"));

    let sweep_start = Instant::now();
    let presets: Result<BTreeMap<&str, PresetOutcome>, String> =
        tmsim::sim::PRESETS.iter().map(|n| run(n, &out.path().join(n)).map(|o| (*n, o))).collect();
    let setup_time = sweep_start.elapsed();

    let mut failures = 0;
    let mut report = |n: u32, title: &str, f: &dyn Fn() -> Outcome| {
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match result {
            Ok(detail) => println!("criterion {n:>2} PASS  {title}: {detail}"),
            Err(why) => {
                failures += 1;
                println!("criterion {n:>2} FAIL  {title}: {why}");
            }
        }
    };

    report(1, "controller identities", &controller_identities);
    report(2, "auction oracle equivalence", &auction_oracle);
    report(3, "decentralized matching oracle", &matching_oracle);

    let presets = match presets {
        Ok(p) => p,
        Err(e) => {
            for (n, title) in [(4, "prediction window"), (5, "feeder safety"), (6, "battery feasibility"), (7, "profit attack")]
                .into_iter()
                .chain([(8, "disruption attack"), (9, "multi-solver mitigation"), (10, "determinism"), (11, "network conservation")])
            {
                report(n, title, &|| Err(format!("preset run failed: {e}")));
            }
            std::process::exit(1);
        }
    };
    let sweep = &presets["prediction-sweep"];
    let decentralized: Vec<&RunResult> = sweep
        .runs
        .iter()
        .chain(&presets["solver-mitigation"].runs)
        .map(|(_, r)| r)
        .collect();
    let all: Vec<&RunResult> = presets.values().flat_map(|o| o.runs.iter().map(|(_, r)| r)).collect();

    report(4, "prediction window", &|| {
        within(setup_time, Duration::from_secs(300))?;
        prediction_window(sweep)
    });
    report(5, "feeder safety", &|| feeder_safety(&decentralized));
    report(6, "battery feasibility", &|| battery_feasibility(&all));
    report(7, "profit attack", &|| profit_attack(&presets["profit-attack"]));
    report(8, "disruption attack", &|| disruption_attack(&presets["disruption-attack"]));
    report(9, "multi-solver mitigation", &|| mitigation(&presets["solver-mitigation"]));
    report(10, "determinism", &|| determinism(out.path(), &|name, dir| run(name, dir).map(|_| ())));
    report(11, "network conservation", &|| conservation(&all));

    if failures > 0 {
        println!("{failures} criterion(s) failed");
        std::process::exit(1);
    }
    println!("all 11 criteria passed");
}
