// SPDX-License-Identifier: Apache-2.0

//! Run metrics, demand-curve comparison, a trailing z-score detector and
//! the CSV/JSONL exports.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::market::auction::DemandCurve;
use crate::units::{Energy, Price};

pub const CURVE_EPSILON_KWH: f64 = 1e-9;
pub const DEFAULT_DETECTOR_WINDOW: usize = 96;
pub const DEFAULT_DETECTOR_THRESHOLD: f64 = 3.0;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub interval: u32,
    pub clearing_price: Option<Price>,
    pub matched_kwh: Energy,
    pub local_kwh: Energy,
    pub bulk_kwh: Energy,
    pub consumed_kwh: Energy,
    pub mean_setpoint: Option<f64>,
    pub attack_active: bool,
    /// Buy-side quantity the market received this interval.
    pub bid_qty_kwh: Energy,
    pub mean_bid_price: Option<Price>,
    pub traffic_bytes: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub rows: Vec<MetricRow>,
}

impl MetricSeries {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn signal(&self, signal: Signal) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| match signal {
                Signal::BidQtyZ => r.bid_qty_kwh.kwh(),
                Signal::BidPriceZ => r.mean_bid_price.map_or(0.0, Price::as_f64),
                Signal::TrafficZ => r.traffic_bytes as f64,
            })
            .collect()
    }

    /// Population standard deviation of the cleared prices (intervals that cleared).
    pub fn clearing_price_std(&self) -> f64 {
        let prices: Vec<f64> = self.rows.iter().filter_map(|r| r.clearing_price.map(Price::as_f64)).collect();
        population_std(&prices)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "interval,clearing_price,matched_kwh,local_kwh,bulk_kwh,consumed_kwh,mean_setpoint,attack_active,bid_qty_kwh,mean_bid_price,traffic_bytes\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.interval,
                r.clearing_price.map(|p| p.to_string()).unwrap_or_default(),
                r.matched_kwh,
                r.local_kwh,
                r.bulk_kwh,
                r.consumed_kwh,
                r.mean_setpoint.map(|t| format!("{t:.4}")).unwrap_or_default(),
                u8::from(r.attack_active),
                r.bid_qty_kwh,
                r.mean_bid_price.map(|p| p.to_string()).unwrap_or_default(),
                r.traffic_bytes,
            );
        }
        s
    }
}

fn population_std(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

pub fn total_energy_traded(series: &MetricSeries) -> Energy {
    series.rows.iter().map(|r| r.matched_kwh).sum()
}

/// Largest relative gap between the buy sides of two curves, evaluated on
/// the union of their breakpoints.
pub fn demand_curve_delta(baseline: &DemandCurve, attacked: &DemandCurve) -> f64 {
    curve_gaps(baseline, attacked)
        .into_iter()
        .map(|(_, base, att)| (att - base).abs() / base.max(CURVE_EPSILON_KWH))
        .fold(0.0, f64::max)
}

/// `(price, baseline kWh, attacked kWh)` at every buy-side breakpoint of
/// either curve, ascending in price.
pub fn curve_gaps(baseline: &DemandCurve, attacked: &DemandCurve) -> Vec<(Price, f64, f64)> {
    let prices: BTreeSet<Price> = baseline.buy.iter().chain(&attacked.buy).map(|(p, _)| *p).collect();
    prices
        .into_iter()
        .map(|p| (p, baseline.demand_at(p).kwh(), attacked.demand_at(p).kwh()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signal {
    #[serde(alias = "bid_qty")]
    BidQtyZ,
    #[serde(alias = "bid_price")]
    BidPriceZ,
    #[serde(alias = "traffic")]
    TrafficZ,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionAlert {
    pub interval: u32,
    pub signal: Signal,
    pub z_value: f64,
    pub threshold: f64,
}

/// Trailing z-score. The window ends at and includes the current point, so
/// an alert at `k` depends only on intervals `k - window + 1 ..= k`. The
/// first `window - 1` points only warm up; a flat window never alerts.
pub fn zscore_detector(
    series: &[f64],
    signal: Signal,
    window: usize,
    threshold: f64,
) -> Result<Vec<DetectionAlert>, ConfigError> {
    if window < 2 {
        return Err(ConfigError::InvalidField { field: "detector.window".into(), reason: "must be at least 2".into() });
    }
    let mut alerts = Vec::new();
    for k in window.saturating_sub(1)..series.len() {
        let w = &series[k + 1 - window..=k];
        let n = window as f64;
        let mean = w.iter().sum::<f64>() / n;
        let std = population_std(w);
        if std <= 1e-12 * mean.abs().max(1.0) {
            continue;
        }
        let z = (series[k] - mean) / std;
        if z.abs() > threshold {
            alerts.push(DetectionAlert { interval: k as u32, signal, z_value: z, threshold });
        }
    }
    Ok(alerts)
}

pub fn alerts_csv(alerts: &[DetectionAlert]) -> String {
    let mut s = String::from("interval,signal,z_value,threshold\n");
    for a in alerts {
        let sig = serde_json::to_value(a.signal).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        let _ = writeln!(s, "{},{},{:.6},{}", a.interval, sig, a.z_value, a.threshold);
    }
    s
}

/// One demand-curve snapshot for `demand_curves.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSnapshot {
    pub interval: u32,
    /// `formed` (as the agents built them) or `received` (what the market saw).
    pub stage: String,
    pub curve: DemandCurve,
}

pub fn curves_csv(snapshots: &[CurveSnapshot]) -> String {
    let mut s = String::from("interval,side,price,cumulative_kwh,stage\n");
    for snap in snapshots {
        for (side, steps) in [("buy", &snap.curve.buy), ("sell", &snap.curve.sell)] {
            for (p, q) in steps {
                let _ = writeln!(s, "{},{side},{p},{q},{}", snap.interval, snap.stage);
            }
        }
    }
    s
}

/// Writes `contents` under `dir`, creating the directory.
pub fn write_file(dir: &Path, name: &str, contents: &str) -> io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(points: &[(f64, f64)]) -> DemandCurve {
        DemandCurve {
            buy: points.iter().map(|&(p, q)| (Price::from_f64(p), Energy::from_kwh(q))).collect(),
            sell: Vec::new(),
        }
    }

    #[test]
    fn delta_examples() {
        let base = curve(&[(0.20, 10.0), (0.15, 30.0), (0.10, 50.0)]);
        assert_eq!(demand_curve_delta(&base, &base), 0.0);
        // a 5 kWh bid at 0.10 halved: 2.5 kWh gone at the bottom price
        let att = curve(&[(0.20, 10.0), (0.15, 30.0), (0.10, 47.5)]);
        assert!((demand_curve_delta(&base, &att) - 0.05).abs() < 1e-12);
        let empty = DemandCurve::default();
        assert!(demand_curve_delta(&empty, &att) > 1e9);
        assert_eq!(demand_curve_delta(&empty, &empty), 0.0);
    }

    #[test]
    fn detector_examples() {
        let flat = vec![0.10; 200];
        assert!(zscore_detector(&flat, Signal::BidQtyZ, 96, 3.0).unwrap().is_empty());
        let mut spike = vec![0.10; 40];
        spike.push(10.0);
        let alerts = zscore_detector(&spike, Signal::BidQtyZ, 40, 3.0).unwrap();
        assert_eq!(alerts.len(), 1);
        assert_eq!(alerts[0].interval, 40);
        // 39 equal points and one outlier: z = sqrt(39)
        assert!((alerts[0].z_value - 39f64.sqrt()).abs() < 1e-9);
        assert!(zscore_detector(&spike, Signal::BidQtyZ, 1, 3.0).is_err());
    }

    #[test]
    fn totals() {
        assert_eq!(total_energy_traded(&MetricSeries::default()), Energy::ZERO);
        let rows = [5.0, 7.0]
            .iter()
            .enumerate()
            .map(|(i, q)| MetricRow { interval: i as u32, matched_kwh: Energy::from_kwh(*q), ..Default::default() })
            .collect();
        assert_eq!(total_energy_traded(&MetricSeries { rows }), Energy::from_kwh(12.0));
    }
}
