// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use crate::error::GridError;
use crate::units::Energy;

fn unit_efficiency() -> f64 {
    1.0
}

/// Storage attached to a producer. Rates are kWh per interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatterySpec {
    pub capacity: Energy,
    pub max_charge_rate: Energy,
    pub max_discharge_rate: Energy,
    /// Fraction of charged energy that ends up stored.
    #[serde(default = "unit_efficiency")]
    pub efficiency: f64,
    #[serde(default)]
    pub initial_soc: Energy,
}

impl BatterySpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.capacity.wh() < 0 || self.max_charge_rate.wh() < 0 || self.max_discharge_rate.wh() < 0 {
            return Err("battery capacity and rates must be non-negative".into());
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err("battery efficiency must be in (0, 1]".into());
        }
        if self.initial_soc.wh() < 0 || self.initial_soc > self.capacity {
            return Err("initial soc outside [0, capacity]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryState {
    pub spec: BatterySpec,
    pub soc: Energy,
}

impl BatteryState {
    pub fn new(spec: BatterySpec) -> Self {
        let soc = spec.initial_soc;
        BatteryState { spec, soc }
    }

    pub fn headroom(&self) -> Energy {
        self.spec.capacity - self.soc
    }
}

/// Applies a signed energy change (positive charges). Rejects, never clamps.
pub fn battery_step(state: &BatteryState, delta: Energy) -> Result<BatteryState, GridError> {
    let limit = if delta.wh() >= 0 { state.spec.max_charge_rate } else { state.spec.max_discharge_rate };
    if delta.abs() > limit {
        return Err(GridError::RateLimit { delta, limit });
    }
    let soc = state.soc + delta;
    if soc.wh() < 0 {
        return Err(GridError::Overdraw { soc: state.soc, delta });
    }
    if soc > state.spec.capacity {
        return Err(GridError::Overcharge { soc: state.soc, delta, capacity: state.spec.capacity });
    }
    Ok(BatteryState { spec: state.spec.clone(), soc })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn battery(soc: f64) -> BatteryState {
        BatteryState {
            spec: BatterySpec {
                capacity: Energy::from_kwh(10.0),
                max_charge_rate: Energy::from_kwh(4.0),
                max_discharge_rate: Energy::from_kwh(4.0),
                efficiency: 1.0,
                initial_soc: Energy::ZERO,
            },
            soc: Energy::from_kwh(soc),
        }
    }

    #[test]
    fn zero_delta_is_identity() {
        assert_eq!(battery_step(&battery(5.0), Energy::ZERO).unwrap().soc, Energy::from_kwh(5.0));
    }

    #[test]
    fn charge_adds() {
        assert_eq!(battery_step(&battery(2.0), Energy::from_kwh(3.0)).unwrap().soc, Energy::from_kwh(5.0));
    }

    #[test]
    fn overdraw_rejected() {
        let err = battery_step(&battery(1.0), Energy::from_kwh(-2.0)).unwrap_err();
        assert!(matches!(err, GridError::Overdraw { .. }));
        assert!(err.to_string().starts_with("overdraw"));
    }

    #[test]
    fn overcharge_rejected() {
        let err = battery_step(&battery(8.0), Energy::from_kwh(3.0)).unwrap_err();
        assert!(matches!(err, GridError::Overcharge { .. }));
    }

    #[test]
    fn rate_limit_rejected() {
        let err = battery_step(&battery(0.0), Energy::from_kwh(5.0)).unwrap_err();
        assert!(matches!(err, GridError::RateLimit { .. }));
    }
}
