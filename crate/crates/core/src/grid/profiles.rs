// SPDX-License-Identifier: Apache-2.0

//! Synthetic diurnal load and generation profiles.
//!
//! Shapes are built from quadratic bumps only (no transcendental functions) so
//! generated values are bit-identical on every platform.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::grid::topology::{FeederTopology, ProsumerId, Role};
use crate::rng;
use crate::units::Energy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DayShape {
    /// Consumer baseline, kWh per interval.
    pub consumer_base_kwh: f64,
    pub morning_peak_kwh: f64,
    pub morning_peak_hour: f64,
    pub evening_peak_kwh: f64,
    pub evening_peak_hour: f64,
    /// Producer output at solar noon, kWh per interval.
    pub producer_peak_kwh: f64,
    pub sunrise_hour: f64,
    pub sunset_hour: f64,
    /// Per-prosumer scale is drawn from `1 ± prosumer_spread`.
    pub prosumer_spread: f64,
    /// Per-interval multiplicative noise `1 ± interval_noise`.
    pub interval_noise: f64,
}

impl Default for DayShape {
    fn default() -> Self {
        DayShape {
            consumer_base_kwh: 0.15,
            morning_peak_kwh: 0.25,
            morning_peak_hour: 7.5,
            evening_peak_kwh: 0.45,
            evening_peak_hour: 19.0,
            producer_peak_kwh: 25.0,
            sunrise_hour: 6.0,
            sunset_hour: 20.0,
            prosumer_spread: 0.3,
            interval_noise: 0.1,
        }
    }
}

fn bump(hour: f64, center: f64, half_width: f64) -> f64 {
    let x = (hour - center) / half_width;
    (1.0 - x * x).max(0.0)
}

impl DayShape {
    pub fn consumption_envelope(&self, hour: f64) -> f64 {
        self.consumer_base_kwh
            + self.morning_peak_kwh * bump(hour, self.morning_peak_hour, 2.0)
            + self.evening_peak_kwh * bump(hour, self.evening_peak_hour, 3.0)
    }

    pub fn production_envelope(&self, hour: f64) -> f64 {
        let noon = 0.5 * (self.sunrise_hour + self.sunset_hour);
        let half = 0.5 * (self.sunset_hour - self.sunrise_hour);
        self.producer_peak_kwh * bump(hour, noon, half)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProsumerProfile {
    pub load: Vec<Energy>,
    pub generation: Vec<Energy>,
}

/// Hour of day at the midpoint of interval `k`.
pub fn interval_hour(k: u32, intervals_per_day: u32) -> f64 {
    (k as f64 + 0.5) * 24.0 / intervals_per_day as f64
}

pub fn synth_profiles(
    seed: u64,
    topology: &FeederTopology,
    shape: &DayShape,
    intervals_per_day: u32,
) -> BTreeMap<ProsumerId, ProsumerProfile> {
    let mut rng = rng::stream(seed, rng::PROFILES);
    let mut ids: Vec<(ProsumerId, Role)> = topology.prosumers.iter().map(|p| (p.id, p.role)).collect();
    ids.sort();
    let mut out = BTreeMap::new();
    for (id, role) in ids {
        let spread = shape.prosumer_spread;
        let scale = if spread > 0.0 { rng.gen_range(1.0 - spread..=1.0 + spread) } else { 1.0 };
        let mut series = Vec::with_capacity(intervals_per_day as usize);
        for k in 0..intervals_per_day {
            let hour = interval_hour(k, intervals_per_day);
            let noise = if shape.interval_noise > 0.0 {
                rng.gen_range(1.0 - shape.interval_noise..=1.0 + shape.interval_noise)
            } else {
                1.0
            };
            let base = match role {
                Role::Consumer => shape.consumption_envelope(hour),
                Role::Producer => shape.production_envelope(hour),
            };
            series.push(Energy::from_kwh((base * scale * noise).max(0.0)));
        }
        let zeros = vec![Energy::ZERO; intervals_per_day as usize];
        let profile = match role {
            Role::Consumer => ProsumerProfile { load: series, generation: zeros },
            Role::Producer => ProsumerProfile { load: zeros, generation: series },
        };
        out.insert(id, profile);
    }
    out
}

/// Writes the interval-major CSV `interval,prosumer_id,load_kwh,gen_kwh`.
pub fn profiles_csv(topology: &FeederTopology, intervals: u32) -> String {
    let mut s = String::from("interval,prosumer_id,load_kwh,gen_kwh\n");
    for k in 0..intervals {
        for p in &topology.prosumers {
            let _ = writeln!(s, "{k},{},{},{}", p.id, p.load_at(k), p.generation_at(k));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::topology::default_microgrid;

    #[test]
    fn consumers_never_generate() {
        let topo = default_microgrid();
        let profiles = synth_profiles(42, &topo, &DayShape::default(), 96);
        for p in topo.prosumers.iter().filter(|p| p.role == Role::Consumer) {
            assert!(profiles[&p.id].generation.iter().all(|g| *g == Energy::ZERO));
            assert!(profiles[&p.id].load.iter().all(|l| l.wh() >= 0));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let topo = default_microgrid();
        let a = synth_profiles(42, &topo, &DayShape::default(), 96);
        let b = synth_profiles(42, &topo, &DayShape::default(), 96);
        let c = synth_profiles(43, &topo, &DayShape::default(), 96);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn midday_production_exceeds_midnight() {
        let topo = default_microgrid();
        let profiles = synth_profiles(42, &topo, &DayShape::default(), 96);
        let total_at = |k: usize| -> Energy { profiles.values().map(|p| p.generation[k]).sum() };
        assert!(total_at(52) > total_at(0));
        assert_eq!(total_at(0), Energy::ZERO);
        // the envelope bounds the generated data from above
        let shape = DayShape::default();
        let bound = shape.production_envelope(interval_hour(52, 96)) * 1.3 * 1.1 * 5.0;
        assert!(total_at(52).kwh() <= bound + 1e-9);
    }

    #[test]
    fn consumption_peaks_morning_and_evening() {
        let shape = DayShape::default();
        let night = shape.consumption_envelope(3.0);
        assert!(shape.consumption_envelope(7.5) > night);
        assert!(shape.consumption_envelope(19.0) > shape.consumption_envelope(13.0));
    }
}
