//! Command-line surface: `run`, `sweep` and `compare`.
//!
//! Exit codes: 0 on success, 1 for configuration or input errors, 2 when
//! the simulator trips one of its own invariants.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MoviError, Result};
use crate::metrics::{self, Comparison, Report};
use crate::scenario::{Mode, Scenario};
use crate::sim;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Parser)]
#[command(
    name = "movi",
    version,
    about = "Server-coordinated P2P video-on-demand simulator"
)]
pub struct Cli {
    /// Increase log output on stderr (-v, -vv).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario and write its report.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Run a scenario over several node counts and seeds.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        /// Comma-separated node counts.
        #[arg(long, value_delimiter = ',', default_value = "1,5,10,20,30")]
        nodes: Vec<u32>,
        /// Seeds per node count, starting at the scenario seed.
        #[arg(long, default_value_t = 5)]
        seeds: u32,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Run a scenario server-only and with P2P enabled, and diff the two.
    Compare {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Resolved options for a single run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: PathBuf,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub verbosity: u8,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scenario.as_os_str().is_empty() {
            return Err(MoviError::config("scenario path is empty"));
        }
        if self.out.as_ref().is_some_and(|p| p.as_os_str().is_empty()) {
            return Err(MoviError::config("output path is empty"));
        }
        Ok(())
    }
}

fn load(path: &Path, seed: Option<u64>) -> Result<Scenario> {
    let mut scenario = Scenario::load(path)?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    Ok(scenario)
}

fn write_out(out: Option<&Path>, body: &[u8]) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, body).map_err(|source| MoviError::Io {
            path: path.display().to_string(),
            source,
        }),
        None => {
            use std::io::Write;
            std::io::stdout()
                .write_all(body)
                .map_err(|source| MoviError::Io {
                    path: "<stdout>".into(),
                    source,
                })
        }
    }
}

pub fn run_scenario(config: &RunConfig) -> Result<Report> {
    config.validate()?;
    let scenario = load(&config.scenario, config.seed)?;
    if config.verbosity > 0 {
        eprintln!(
            "running {} nodes, mode {}, seed {}",
            scenario.node_count, scenario.mode, scenario.seed
        );
    }
    sim::run(&scenario)
}

fn render_report(report: &Report, format: Format) -> Result<Vec<u8>> {
    Ok(match format {
        Format::Json => {
            let mut s = report.to_json();
            s.push('\n');
            s.into_bytes()
        }
        Format::Csv => {
            let mut buf = Vec::new();
            report.write_nodes_csv(&mut buf)?;
            buf
        }
    })
}

pub fn cmd_run(config: &RunConfig) -> Result<Report> {
    let report = run_scenario(config)?;
    write_out(
        config.out.as_deref(),
        &render_report(&report, config.format)?,
    )?;
    if config.verbosity > 0 {
        eprintln!(
            "server {} B, peers {} B, improvement {:?}",
            report.global.server_bytes, report.global.peer_bytes, report.global.improvement
        );
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub node_count: u32,
    pub seed: u64,
    pub improvement: Option<f64>,
    pub mean_startup_delay_s: Option<f64>,
    pub mean_stall_total_s: Option<f64>,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMean {
    pub node_count: u32,
    pub runs: u32,
    pub mean_improvement: Option<f64>,
    pub mean_startup_delay_s: Option<f64>,
    pub mean_stall_total_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub base_seed: u64,
    pub rows: Vec<SweepRow>,
    pub means: Vec<SweepMean>,
}

/// Runs `base` at every node count with `seeds` consecutive seeds starting
/// at the scenario's own seed. Runs execute in parallel; rows come back in
/// `(count, seed)` order.
pub fn sweep(base: &Scenario, counts: &[u32], seeds: u32) -> Result<SweepSummary> {
    if counts.is_empty() || counts.contains(&0) {
        return Err(MoviError::config("sweep node counts must be >= 1"));
    }
    if seeds == 0 {
        return Err(MoviError::config("sweep needs at least one seed"));
    }
    if base.layout.square_side_m.is_none() || base.start_offsets.is_some() {
        return Err(MoviError::config(
            "sweep needs a generated layout (square_side_m) and generated join times (offset_range_s)",
        ));
    }
    let points: Vec<(u32, u64)> = counts
        .iter()
        .flat_map(|&c| (0..seeds as u64).map(move |k| (c, base.seed.wrapping_add(k))))
        .collect();
    let rows = points
        .par_iter()
        .map(|&(count, seed)| {
            let mut s = base.clone();
            s.node_count = count;
            s.seed = seed;
            let r = sim::run(&s)?;
            Ok(SweepRow {
                node_count: count,
                seed,
                improvement: r.global.improvement,
                mean_startup_delay_s: r.mean_startup_delay(),
                mean_stall_total_s: r.mean_stall_total(),
                truncated: r.global.truncated,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut means = Vec::new();
    for &count in counts {
        let group: Vec<&SweepRow> = rows.iter().filter(|r| r.node_count == count).collect();
        means.push(SweepMean {
            node_count: count,
            runs: group.len() as u32,
            mean_improvement: metrics::mean(group.iter().filter_map(|r| r.improvement)),
            mean_startup_delay_s: metrics::mean(
                group.iter().filter_map(|r| r.mean_startup_delay_s),
            ),
            mean_stall_total_s: metrics::mean(group.iter().filter_map(|r| r.mean_stall_total_s)),
        });
    }
    Ok(SweepSummary {
        base_seed: base.seed,
        rows,
        means,
    })
}

fn render_sweep(summary: &SweepSummary, format: Format) -> Result<Vec<u8>> {
    Ok(match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(summary).expect("sweep serializes");
            s.push('\n');
            s.into_bytes()
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for row in &summary.rows {
                w.serialize(row)?;
            }
            w.into_inner().map_err(|e| MoviError::Io {
                path: "<csv>".into(),
                source: e.into_error(),
            })?
        }
    })
}

/// Runs the scenario twice with the same seed, server-only then P2P.
pub fn compare_modes(scenario: &Scenario) -> Result<Comparison> {
    let mut baseline = scenario.clone();
    baseline.mode = Mode::ServerOnly;
    let mut candidate = scenario.clone();
    candidate.mode = Mode::P2p;
    let (a, b) = rayon::join(|| sim::run(&baseline), || sim::run(&candidate));
    metrics::compare(&a?, &b?)
}

fn execute(cli: Cli) -> Result<()> {
    let verbosity = cli.verbose;
    match cli.command {
        Command::Run {
            scenario,
            seed,
            out,
            format,
        } => {
            cmd_run(&RunConfig {
                scenario,
                seed,
                out,
                format,
                verbosity,
            })?;
        }
        Command::Sweep {
            scenario,
            nodes,
            seeds,
            out,
            format,
        } => {
            let base = load(&scenario, None)?;
            let summary = sweep(&base, &nodes, seeds)?;
            if verbosity > 0 {
                for m in &summary.means {
                    eprintln!(
                        "{:>4} nodes: mean improvement {:?}",
                        m.node_count, m.mean_improvement
                    );
                }
            }
            write_out(out.as_deref(), &render_sweep(&summary, format)?)?;
        }
        Command::Compare {
            scenario,
            seed,
            out,
        } => {
            let s = load(&scenario, seed)?;
            let cmp = compare_modes(&s)?;
            let mut body = serde_json::to_string_pretty(&cmp).expect("comparison serializes");
            body.push('\n');
            write_out(out.as_deref(), body.as_bytes())?;
        }
    }
    Ok(())
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
