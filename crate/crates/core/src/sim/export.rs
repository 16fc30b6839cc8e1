// SPDX-License-Identifier: Apache-2.0

//! Writes a [`RunResult`] to a directory of CSV and JSONL files.

use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use crate::analytics::{alerts_csv, curves_csv, write_file};
use crate::grid::profiles::profiles_csv;
use crate::net::TrafficRecord;
use crate::sim::engine::RunResult;

pub fn traffic_csv(records: &[TrafficRecord]) -> String {
    let mut s = String::from("bucket_start,src,dst,protocol_tag,packet_count,total_bytes\n");
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.bucket_start,
            r.src,
            r.dst,
            r.protocol_tag,
            r.packet_count,
            r.total_bytes
        );
    }
    s
}

fn jsonl<T: serde::Serialize>(items: &[T]) -> String {
    let mut s = String::new();
    for item in items {
        s.push_str(&serde_json::to_string(item).expect("serializable"));
        s.push('\n');
    }
    s
}

/// Writes every output file of `result` under `dir` and returns their paths.
pub fn export_run(result: &RunResult, dir: &Path) -> io::Result<Vec<PathBuf>> {
    let horizon = result.summary.intervals;
    let mut out = vec![
        write_file(dir, "metrics.csv", &result.metric_series.to_csv())?,
        write_file(dir, "demand_curves.csv", &curves_csv(&result.curves))?,
        write_file(dir, "traffic.csv", &traffic_csv(&result.traffic))?,
        write_file(dir, "attacks.csv", &result.attack_report.to_csv(horizon))?,
        write_file(dir, "alerts.csv", &alerts_csv(&result.alerts))?,
        write_file(dir, "events.jsonl", &jsonl(&result.event_log))?,
        write_file(dir, "profiles.csv", &profiles_csv(&result.topology, horizon))?,
        write_file(dir, "config.json", &result.config.to_json())?,
        write_file(dir, "summary.json", &serde_json::to_string_pretty(&result.summary).expect("serializable"))?,
    ];
    if let Some(entries) = &result.ledger {
        out.push(write_file(dir, "ledger.jsonl", &jsonl(entries))?);
    }
    if !result.hvac_rows.is_empty() {
        let mut s = String::from("interval,prosumer_id,t_current,t_set,bid_price,bid_kwh,filled_kwh\n");
        for r in &result.hvac_rows {
            let _ = writeln!(
                s,
                "{},{},{:.4},{:.4},{},{},{}",
                r.interval,
                r.prosumer_id,
                r.t_current,
                r.t_set,
                r.bid_price.map(|p| format!("{p:.6}")).unwrap_or_default(),
                r.bid,
                r.filled
            );
        }
        out.push(write_file(dir, "hvac.csv", &s)?);
    }
    if !result.soc_rows.is_empty() {
        let mut s = String::from("interval,prosumer_id,soc_kwh,stranded_kwh\n");
        for r in &result.soc_rows {
            let _ = writeln!(s, "{},{},{},{}", r.interval, r.prosumer_id, r.soc, r.stranded);
        }
        out.push(write_file(dir, "soc.csv", &s)?);
    }
    Ok(out)
}
