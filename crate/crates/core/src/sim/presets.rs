// SPDX-License-Identifier: Apache-2.0

//! Named experiment presets and cartesian override sweeps.
//!
//! A preset is only a list of labelled [`ScenarioConfig`]s plus a table that
//! summarizes their results; each config runs exactly as `run` would.

use std::fmt::Write as _;
use std::path::Path;

use crate::analytics::write_file;
use crate::attacks::{ActiveRange, AttackKind, AttackScenario, SaturateMode, Targets};
use crate::error::{ConfigError, SimError, SimResult};
use crate::sim::config::{MarketMode, ScenarioConfig};
use crate::sim::engine::{RunResult, Simulation};
use crate::sim::export::export_run;

pub const PRESETS: [&str; 4] = ["prediction-sweep", "profit-attack", "disruption-attack", "solver-mitigation"];

pub const ATTACK_HORIZON: i64 = 192;
pub const ATTACK_ONSET: u32 = 120;
pub const SATURATED_KWH: f64 = 2.0;

#[derive(Debug, Clone)]
pub struct PresetOutcome {
    pub name: String,
    pub runs: Vec<(String, RunResult)>,
    /// Summary table file name and contents.
    pub table: (String, String),
}

impl PresetOutcome {
    pub fn run(&self, label: &str) -> Option<&RunResult> {
        self.runs.iter().find(|(l, _)| l == label).map(|(_, r)| r)
    }
}

fn unknown(name: &str) -> SimError {
    SimError::Config(ConfigError::InvalidField {
        field: "preset".into(),
        reason: format!("unknown preset `{name}`; available: {}", PRESETS.join(", ")),
    })
}

fn attack_base(seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        market_mode: MarketMode::Centralized,
        horizon: ATTACK_HORIZON,
        rng_seed: seed,
        ..ScenarioConfig::default()
    }
}

fn from_onset(name: &str, kind: AttackKind, targets: Targets) -> AttackScenario {
    AttackScenario {
        name: Some(name.into()),
        kind,
        targets,
        active_intervals: ActiveRange { start: ATTACK_ONSET, end: None },
    }
}

/// Profit attack: halve price and quantity of a tenth of the consumers.
pub fn profit_attack() -> AttackScenario {
    from_onset(
        "profit",
        AttackKind::BidScale { price_factor: 0.5, qty_factor: 0.5 },
        Targets::Fraction { fraction: 0.1 },
    )
}

/// Disruption attack: push most consumers' bids to the price ceiling.
pub fn disruption_attack() -> AttackScenario {
    from_onset(
        "disruption",
        AttackKind::BidSaturate { mode: SaturateMode::High, price_bound: 10.0, qty_bound: SATURATED_KWH },
        Targets::Fraction { fraction: 0.6 },
    )
}

/// Labelled configs a preset is made of.
pub fn preset_config(name: &str, seed: u64) -> SimResult<Vec<(String, ScenarioConfig)>> {
    let runs = match name {
        "prediction-sweep" => {
            let mut v = Vec::new();
            for battery in [false, true] {
                for w in 2..=13 {
                    let mut c = ScenarioConfig { prediction_window: w, rng_seed: seed, ..ScenarioConfig::default() };
                    c.name = format!("window-{w:02}-{}", if battery { "battery" } else { "no-battery" });
                    c.batteries.enabled = battery;
                    v.push((c.name.clone(), c));
                }
            }
            v
        }
        "profit-attack" | "disruption-attack" => {
            let base = ScenarioConfig { name: "baseline".into(), ..attack_base(seed) };
            let attack = if name == "profit-attack" { profit_attack() } else { disruption_attack() };
            let attacked = ScenarioConfig { name: "attacked".into(), attack_list: vec![attack], ..base.clone() };
            vec![("baseline".into(), base), ("attacked".into(), attacked)]
        }
        "solver-mitigation" => {
            let base = ScenarioConfig { name: "baseline".into(), solver_count: 3, rng_seed: seed, ..ScenarioConfig::default() };
            let inner = AttackScenario {
                name: Some("saturate-view".into()),
                kind: AttackKind::BidSaturate { mode: SaturateMode::High, price_bound: 10.0, qty_bound: SATURATED_KWH },
                targets: Targets::All,
                active_intervals: ActiveRange::default(),
            };
            let partition = AttackScenario {
                name: Some("partition".into()),
                kind: AttackKind::SolverPartition { target_solver: 1, inner: Box::new(inner) },
                targets: Targets::All,
                active_intervals: ActiveRange::default(),
            };
            let attacked = ScenarioConfig { name: "attacked".into(), attack_list: vec![partition], ..base.clone() };
            vec![("baseline".into(), base), ("attacked".into(), attacked)]
        }
        other => return Err(unknown(other)),
    };
    Ok(runs)
}

/// Runs labelled configs on up to `available_parallelism` threads, keeping input order.
pub fn run_all(configs: Vec<(String, ScenarioConfig)>, base_dir: Option<&Path>) -> SimResult<Vec<(String, RunResult)>> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(configs.len().max(1));
    let mut slots: Vec<Option<SimResult<RunResult>>> = (0..configs.len()).map(|_| None).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                let Some((_, cfg)) = configs.get(i) else { break };
                let r = Simulation::with_base_dir(cfg.clone(), base_dir).and_then(Simulation::run_to_completion);
                results.lock().expect("no poisoned runs")[i] = Some(r);
            });
        }
    });
    configs
        .into_iter()
        .zip(slots)
        .map(|((label, _), r)| r.expect("every run finished").map(|r| (label, r)))
        .collect()
}

fn sweep_table(runs: &[(String, RunResult)]) -> String {
    let mut s = String::from("window,battery,total_kwh\n");
    for (_, r) in runs {
        let _ = writeln!(s, "{},{},{}", r.config.prediction_window, r.config.batteries.enabled, r.summary.total_traded_kwh);
    }
    s
}

/// Per-interval comparison of the finalized matches of two runs.
pub fn solution_diff(baseline: &RunResult, attacked: &RunResult) -> String {
    let a = baseline.finalized_solutions();
    let b = attacked.finalized_solutions();
    let mut s = String::from("interval,baseline_kwh,attacked_kwh,identical\n");
    for (k, base) in &a {
        let att = b.get(k).cloned().flatten();
        let energy = |x: &Option<crate::market::ledger::Solution>| x.as_ref().map_or(crate::Energy::ZERO, |s| s.objective);
        let same = base.as_ref().map(|s| (&s.matches, s.objective)) == att.as_ref().map(|s| (&s.matches, s.objective));
        let _ = writeln!(s, "{k},{},{},{same}", energy(base), energy(&att));
    }
    s
}

fn pair_table(baseline: &RunResult, attacked: &RunResult) -> String {
    let mut s = String::from("run,total_kwh,clearing_price_std,alerts\n");
    for (label, r) in [("baseline", baseline), ("attacked", attacked)] {
        let _ = writeln!(
            s,
            "{label},{},{:.6},{}",
            r.summary.total_traded_kwh, r.summary.clearing_price_std, r.summary.alert_count
        );
    }
    s
}

/// Runs a preset, writes every run under `out/<label>/` plus the summary table.
pub fn run_preset(name: &str, out: &Path, seed: Option<u64>, overrides: &[String]) -> SimResult<PresetOutcome> {
    let configs = preset_config(name, seed.unwrap_or(ScenarioConfig::default().rng_seed))?
        .into_iter()
        .map(|(label, c)| c.with_overrides(overrides).map(|c| (label, c)))
        .collect::<Result<Vec<_>, _>>()?;
    let runs = run_all(configs, None)?;
    for (label, r) in &runs {
        export_run(r, &out.join(label))?;
    }
    let table = match name {
        "prediction-sweep" => ("sweep.csv".to_string(), sweep_table(&runs)),
        "solver-mitigation" => ("solution_diff.csv".to_string(), solution_diff(&runs[0].1, &runs[1].1)),
        _ => ("comparison.csv".to_string(), pair_table(&runs[0].1, &runs[1].1)),
    };
    write_file(out, &table.0, &table.1)?;
    Ok(PresetOutcome { name: name.into(), runs, table })
}

/// Cartesian product of `key=v1,v2,...` axes applied over `base`.
pub fn sweep_configs(base: &ScenarioConfig, axes: &[String]) -> SimResult<Vec<(String, ScenarioConfig)>> {
    let mut combos: Vec<Vec<String>> = vec![Vec::new()];
    for axis in axes {
        let (key, values) = axis.split_once('=').ok_or_else(|| {
            SimError::Config(ConfigError::InvalidField { field: axis.clone(), reason: "expected key=v1,v2,...".into() })
        })?;
        let mut next = Vec::new();
        for combo in &combos {
            for v in values.split(',') {
                let mut c = combo.clone();
                c.push(format!("{}={}", key.trim(), v.trim()));
                next.push(c);
            }
        }
        combos = next;
    }
    combos
        .into_iter()
        .map(|overrides| {
            let label = if overrides.is_empty() { "base".to_string() } else { overrides.join("_").replace(['=', '.', '/'], "-") };
            base.with_overrides(&overrides).map(|c| (label, c)).map_err(SimError::from)
        })
        .collect()
}

/// Runs a sweep, exporting each point under `out/<label>/` and `sweep.csv`.
pub fn run_sweep(
    base: &ScenarioConfig,
    axes: &[String],
    out: &Path,
    base_dir: Option<&Path>,
) -> SimResult<Vec<(String, RunResult)>> {
    let runs = run_all(sweep_configs(base, axes)?, base_dir)?;
    let mut s = String::from("label,total_kwh,efficiency,alerts\n");
    for (label, r) in &runs {
        export_run(r, &out.join(label))?;
        let _ = writeln!(s, "{label},{},{:.6},{}", r.summary.total_traded_kwh, r.summary.efficiency, r.summary.alert_count);
    }
    write_file(out, "sweep.csv", &s)?;
    Ok(runs)
}
