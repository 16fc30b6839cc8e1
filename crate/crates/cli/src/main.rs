// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tmsim::sim::{export_run, run_preset, run_sweep, RunSummary, ScenarioConfig, Simulation};
use tmsim::SimError;

#[derive(Parser, Debug)]
#[command(name = "tmsim", version, about = "Deterministic transactive energy market simulator")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand, Debug)]
enum Verb {
    /// Run one scenario and write its exports.
    Run(RunArgs),
    /// Check a config without running it.
    Validate {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        #[arg(long = "override", value_name = "K=V")]
        overrides: Vec<String>,
    },
    /// Run a named experiment preset.
    Preset {
        #[arg(long, value_name = "NAME")]
        preset: String,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, value_name = "N")]
        seed: Option<u64>,
        #[arg(long = "override", value_name = "K=V")]
        overrides: Vec<String>,
    },
    /// Run the cartesian product of `--override key=v1,v2,...` axes.
    Sweep(RunArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Scenario JSON; built-in defaults when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    #[arg(long = "override", value_name = "K=V")]
    overrides: Vec<String>,
}

fn load(config: Option<&Path>, seed: Option<u64>) -> Result<(ScenarioConfig, Option<PathBuf>), SimError> {
    let (mut c, base) = match config {
        Some(p) => (ScenarioConfig::from_file(p)?, p.parent().map(Path::to_path_buf)),
        None => (ScenarioConfig::default(), None),
    };
    if let Some(s) = seed {
        c.rng_seed = s;
    }
    Ok((c, base))
}

fn summary_line(label: &str, s: &RunSummary) -> String {
    format!(
        "{label}: intervals={} total_traded_kwh={} efficiency={:.4} alerts={} sent={} delivered={} dropped={}",
        s.intervals,
        s.total_traded_kwh,
        s.efficiency,
        s.alert_count,
        s.network.sent,
        s.network.delivered,
        s.network.dropped()
    )
}

fn execute(verb: Verb) -> Result<(), SimError> {
    match verb {
        Verb::Run(a) => {
            let (c, base) = load(a.config.as_deref(), a.seed)?;
            let c = c.with_overrides(&a.overrides)?;
            let result = Simulation::with_base_dir(c, base.as_deref())?.run_to_completion()?;
            export_run(&result, &a.out)?;
            let label = if result.config.name.is_empty() { "run" } else { result.config.name.as_str() };
            println!("{}", summary_line(label, &result.summary));
        }
        Verb::Validate { config, overrides } => {
            let c = ScenarioConfig::from_file(&config)?.with_overrides(&overrides)?;
            let topo = c.validate_all(config.parent())?;
            println!(
                "{}: ok ({} prosumers, {} feeders, {} intervals)",
                config.display(),
                topo.prosumers.len(),
                topo.feeders.len(),
                c.horizon
            );
        }
        Verb::Preset { preset, out, seed, overrides } => {
            let outcome = run_preset(&preset, &out, seed, &overrides)?;
            for (label, r) in &outcome.runs {
                println!("{}", summary_line(label, &r.summary));
            }
            println!("{}: {} runs, table {}", preset, outcome.runs.len(), out.join(&outcome.table.0).display());
        }
        Verb::Sweep(a) => {
            let (c, base) = load(a.config.as_deref(), a.seed)?;
            let runs = run_sweep(&c, &a.overrides, &a.out, base.as_deref())?;
            for (label, r) in &runs {
                println!("{}", summary_line(label, &r.summary));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.verb) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            // 2 for bad input, 1 for failures during a run or export
            ExitCode::from(if matches!(e, SimError::Config(_)) { 2 } else { 1 })
        }
    }
}
