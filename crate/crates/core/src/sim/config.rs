// SPDX-License-Identifier: Apache-2.0

//! Scenario configuration as a JSON document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::analytics::{Signal, DEFAULT_DETECTOR_THRESHOLD, DEFAULT_DETECTOR_WINDOW};
use crate::attacks::AttackScenario;
use crate::error::ConfigError;
use crate::grid::{default_microgrid, DayShape, FeederTopology};
use crate::market::SolverStrategy;
use crate::net::{LinkModel, NoiseModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MarketMode {
    Centralized,
    DecentralizedFixedPrice,
    DecentralizedFcfs,
    DecentralizedAuction,
}

impl MarketMode {
    pub fn is_decentralized(self) -> bool {
        self != MarketMode::Centralized
    }
}

/// A built-in topology name, a path to a topology JSON file, or an inline topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TopologyRef {
    Name(String),
    Inline(FeederTopology),
}

impl Default for TopologyRef {
    fn default() -> Self {
        TopologyRef::Name("default".into())
    }
}

impl TopologyRef {
    /// Resolves names and paths. Relative paths are taken from `base_dir`.
    pub fn load(&self, base_dir: Option<&Path>) -> Result<FeederTopology, ConfigError> {
        let topo = match self {
            TopologyRef::Inline(t) => t.clone(),
            TopologyRef::Name(name) if name == "default" || name == "microgrid-102" => default_microgrid(),
            TopologyRef::Name(name) => {
                let mut path = PathBuf::from(name);
                if path.is_relative() {
                    if let Some(base) = base_dir {
                        path = base.join(path);
                    }
                }
                if !path.is_file() {
                    return Err(ConfigError::UnknownTopology(name.clone()));
                }
                let text = std::fs::read_to_string(&path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?
            }
        };
        topo.validate()
            .map_err(|e| ConfigError::InvalidField { field: "topology_ref".into(), reason: e.to_string() })?;
        Ok(topo)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatteryConfig {
    /// Attach a battery to every producer that has none in the topology.
    pub enabled: bool,
    pub capacity_kwh: f64,
    pub max_charge_kwh: f64,
    pub max_discharge_kwh: f64,
    pub efficiency: f64,
    pub initial_soc_kwh: f64,
}

impl Default for BatteryConfig {
    fn default() -> Self {
        BatteryConfig {
            enabled: false,
            capacity_kwh: 40.0,
            max_charge_kwh: 5.0,
            max_discharge_kwh: 5.0,
            efficiency: 1.0,
            initial_soc_kwh: 0.0,
        }
    }
}

/// Reservation prices for offers in the ledger market. Each prosumer gets
/// `base + step * n` with `n` drawn uniformly from `-levels..=levels`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OfferConfig {
    pub buy_reservation: Option<f64>,
    pub sell_reservation: Option<f64>,
    pub reservation_step: f64,
    pub reservation_levels: u32,
}

impl Default for OfferConfig {
    fn default() -> Self {
        OfferConfig {
            buy_reservation: Some(0.12),
            sell_reservation: Some(0.05),
            reservation_step: 0.005,
            reservation_levels: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DsoConfig {
    /// Price used when a trade has no reservation to anchor it.
    pub default_price: f64,
    /// Local price in fixed-price mode.
    pub fixed_price: f64,
    /// Price of energy bought from the bulk supplier in ledger modes.
    pub bulk_price: f64,
}

impl Default for DsoConfig {
    fn default() -> Self {
        DsoConfig { default_price: 0.10, fixed_price: 0.10, bulk_price: 0.15 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderStep {
    pub kwh: f64,
    pub price: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CentralizedConfig {
    /// Ask of local producers, currency per kWh.
    pub producer_price: f64,
    /// Bulk supplier offer, one sell bid per step each interval.
    pub bulk_ladder: Vec<LadderStep>,
    pub outdoor_min_c: f64,
    pub outdoor_max_c: f64,
    pub outdoor_peak_hour: f64,
    /// Target temperatures are drawn from this range.
    pub t_target_range: (f64, f64),
    pub comfort_below_c: f64,
    pub comfort_above_c: f64,
    pub sigma_t: f64,
    pub rated_kw_range: (f64, f64),
    pub drift_range: (f64, f64),
    pub cooling_range: (f64, f64),
    /// Lower bound on the price deviation used by the controllers.
    pub sigma_floor: f64,
}

impl Default for CentralizedConfig {
    fn default() -> Self {
        CentralizedConfig {
            producer_price: 0.03,
            bulk_ladder: vec![
                LadderStep { kwh: 40.0, price: 0.06 },
                LadderStep { kwh: 30.0, price: 0.09 },
                LadderStep { kwh: 30.0, price: 0.12 },
                LadderStep { kwh: 1000.0, price: 0.30 },
            ],
            outdoor_min_c: 24.0,
            outdoor_max_c: 34.0,
            outdoor_peak_hour: 15.0,
            t_target_range: (21.0, 23.0),
            comfort_below_c: 2.0,
            comfort_above_c: 3.0,
            sigma_t: 1.5,
            rated_kw_range: (3.0, 5.0),
            drift_range: (0.06, 0.10),
            cooling_range: (1.0, 2.0),
            sigma_floor: 0.001,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub window: usize,
    pub threshold: f64,
    pub signals: Vec<Signal>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            window: DEFAULT_DETECTOR_WINDOW,
            threshold: DEFAULT_DETECTOR_THRESHOLD,
            signals: vec![Signal::BidQtyZ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub topology_ref: TopologyRef,
    pub market_mode: MarketMode,
    /// Number of intervals to run.
    pub horizon: i64,
    pub intervals_per_day: u32,
    pub interval_seconds: u32,
    pub prediction_window: i64,
    pub rng_seed: u64,
    pub attack_list: Vec<AttackScenario>,
    pub solver_count: i64,
    pub solver_strategy: SolverStrategy,
    pub network_params: LinkModel,
    pub noise: NoiseModel,
    /// Background messages injected per interval.
    pub background_rate: u32,
    pub profiles: DayShape,
    pub batteries: BatteryConfig,
    pub offers: OfferConfig,
    pub dso: DsoConfig,
    pub centralized: CentralizedConfig,
    pub detector: DetectorConfig,
    /// Record demand-curve snapshots every this many intervals (0 disables).
    pub curve_every: u32,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "default".into(),
            topology_ref: TopologyRef::default(),
            market_mode: MarketMode::DecentralizedAuction,
            horizon: 96,
            intervals_per_day: 96,
            interval_seconds: 900,
            prediction_window: 2,
            rng_seed: 42,
            attack_list: Vec::new(),
            solver_count: 1,
            solver_strategy: SolverStrategy::Exact,
            network_params: LinkModel::default(),
            noise: NoiseModel::default(),
            background_rate: 20,
            profiles: DayShape::default(),
            batteries: BatteryConfig::default(),
            offers: OfferConfig::default(),
            dso: DsoConfig::default(),
            centralized: CentralizedConfig::default(),
            detector: DetectorConfig::default(),
            curve_every: 1,
        }
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::InvalidField { field: field.into(), reason: reason.into() }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text)
            .map_err(|e| ConfigError::Parse(format!("line {} column {}: {e}", e.line(), e.column())))
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn horizon(&self) -> u32 {
        self.horizon.max(0) as u32
    }

    pub fn window(&self) -> u32 {
        self.prediction_window.max(1) as u32
    }

    pub fn solvers(&self) -> u32 {
        self.solver_count.max(1) as u32
    }

    /// Schema-level invariants that do not need the topology.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.horizon <= 0 {
            return Err(ConfigError::NonPositiveHorizon);
        }
        if self.horizon > u32::MAX as i64 {
            return Err(invalid("horizon", "too large"));
        }
        if self.prediction_window < 1 {
            return Err(invalid("prediction_window", "must be at least 1 (the current interval counts)"));
        }
        if self.solver_count < 1 {
            return Err(invalid("solver_count", "must be at least 1"));
        }
        if self.intervals_per_day == 0 {
            return Err(invalid("intervals_per_day", "must be positive"));
        }
        if self.interval_seconds < 240 {
            return Err(invalid("interval_seconds", "must leave room for the four market phases (>= 240)"));
        }
        self.network_params.validate().map_err(|e| invalid("network_params", e.to_string()))?;
        if self.network_params.base_latency + self.network_params.jitter >= 60.0 {
            return Err(invalid("network_params", "latency must stay below the 60 s phase spacing"));
        }
        if !(0.0..=1.0).contains(&self.noise.web_fraction) {
            return Err(invalid("noise.web_fraction", "must be in [0, 1]"));
        }
        if self.detector.window < 2 {
            return Err(invalid("detector.window", "must be at least 2"));
        }
        let b = &self.batteries;
        if [b.capacity_kwh, b.max_charge_kwh, b.max_discharge_kwh, b.initial_soc_kwh].iter().any(|x| !(*x >= 0.0))
            || b.initial_soc_kwh > b.capacity_kwh
            || !(b.efficiency > 0.0 && b.efficiency <= 1.0)
        {
            return Err(invalid("batteries", "capacities and rates must be >= 0, soc within capacity, efficiency in (0, 1]"));
        }
        if self.dso.fixed_price < 0.0 || self.dso.default_price < 0.0 || self.dso.bulk_price < 0.0 {
            return Err(invalid("dso", "prices must be >= 0"));
        }
        let c = &self.centralized;
        if !(c.t_target_range.0 <= c.t_target_range.1) || !(c.comfort_below_c > 0.0) || !(c.comfort_above_c > 0.0) {
            return Err(invalid("centralized", "comfort band must be nonempty on both sides of the target"));
        }
        if !(c.sigma_t > 0.0) || !(c.rated_kw_range.0 > 0.0) || !(c.rated_kw_range.0 <= c.rated_kw_range.1) {
            return Err(invalid("centralized", "sigma_t and rated power must be positive"));
        }
        if !(c.sigma_floor >= 0.0) {
            return Err(invalid("centralized.sigma_floor", "must be >= 0"));
        }
        let horizon = self.horizon();
        for a in &self.attack_list {
            a.validate(horizon, self.solvers())?;
        }
        Ok(())
    }

    /// Full validation including topology resolution.
    pub fn validate_all(&self, base_dir: Option<&Path>) -> Result<FeederTopology, ConfigError> {
        self.validate()?;
        self.topology_ref.load(base_dir)
    }

    /// Applies `key=value` overrides with dotted paths. The value is parsed
    /// as JSON and taken as a plain string when that fails.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self, ConfigError> {
        let mut doc = serde_json::to_value(self).expect("config serializes");
        for o in overrides {
            let (key, raw) = o
                .as_ref()
                .split_once('=')
                .ok_or_else(|| invalid(o.as_ref(), "override must be KEY=VALUE"))?;
            let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut doc, key, value)?;
        }
        serde_json::from_value(doc).map_err(|e| ConfigError::Parse(e.to_string()))
    }
}

fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<(), ConfigError> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = doc;
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| invalid(key, "array index expected"))?;
                let len = items.len();
                let slot = items.get_mut(idx).ok_or_else(|| invalid(key, format!("index {idx} out of range ({len})")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(invalid(key, "path goes through a scalar")),
        };
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = ScenarioConfig::default();
        assert!(c.validate().is_ok());
        assert_eq!(c.validate_all(None).unwrap().prosumers.len(), 102);
    }

    #[test]
    fn horizon_and_window() {
        let c = ScenarioConfig { horizon: 0, ..Default::default() };
        assert_eq!(c.validate().unwrap_err().to_string(), "non-positive horizon");
        let c = ScenarioConfig { prediction_window: 0, ..Default::default() };
        assert!(c.validate().unwrap_err().to_string().contains("prediction_window"));
    }

    #[test]
    fn unknown_topology() {
        let c = ScenarioConfig { topology_ref: TopologyRef::Name("nowhere.json".into()), ..Default::default() };
        assert_eq!(c.validate_all(None), Err(ConfigError::UnknownTopology("nowhere.json".into())));
    }

    #[test]
    fn overrides() {
        let c = ScenarioConfig::default()
            .with_overrides(&["rng_seed=7", "batteries.enabled=true", "name=sweep", "dso.fixed_price=0.2"])
            .unwrap();
        assert_eq!(c.rng_seed, 7);
        assert!(c.batteries.enabled);
        assert_eq!(c.name, "sweep");
        assert_eq!(c.dso.fixed_price, 0.2);
        assert!(ScenarioConfig::default().with_overrides(&["nonsense=1"]).is_err());
        assert!(ScenarioConfig::default().with_overrides(&["missing_equals"]).is_err());
    }

    #[test]
    fn json_round_trip_and_partial_documents() {
        let c = ScenarioConfig::default();
        assert_eq!(ScenarioConfig::from_json(&c.to_json()).unwrap(), c);
        let partial = ScenarioConfig::from_json(r#"{"market_mode": "centralized", "horizon": 4}"#).unwrap();
        assert_eq!(partial.market_mode, MarketMode::Centralized);
        assert_eq!(partial.rng_seed, 42);
        let err = ScenarioConfig::from_json("{\n  \"horizon\": \"x\"\n}").unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }
}
