//! `rrdps`: simulate, analyze, scan and check passive RRDPS runs.
//!
//! Exit codes: 0 success, 1 internal failure, 2 configuration error,
//! 3 input parse error, 4 no key.

mod analyze;
mod config;
mod csvio;
mod error;
mod output;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use rrdps_core::kernel::simulate_run;
use rrdps_core::oracle::{equivalence_report, BoundaryRule};
use rrdps_core::scanner::{scan, ScanError};
use rrdps_core::SiftTally;
use serde::Serialize;

use crate::analyze::{FilePhases, SeededPhases, Status};
use crate::config::{RunConfig, Vth};
use crate::error::CliError;
use crate::output::{unix_ms, Manifest, Outputs};

#[derive(Parser)]
#[command(
    name = "rrdps",
    version,
    about = "Passive RRDPS simulator and finite-key analyzer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML configuration; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of blocks `N_em`.
    #[arg(long)]
    blocks: Option<u64>,
}

#[derive(Args, Clone)]
struct KeyArgs {
    /// Photon threshold: `auto` or an integer.
    #[arg(long)]
    vth: Option<Vth>,
    /// Error-correction efficiency.
    #[arg(long = "f")]
    ec_efficiency: Option<f64>,
    /// Security exponent (failure probability 2^-s).
    #[arg(long = "s")]
    security_exponent: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a run and write its click stream.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Filter, sift and bound an event stream or a stored tally.
    Analyze {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        key: KeyArgs,
        #[arg(long, conflicts_with = "tally", required_unless_present = "tally")]
        events: Option<PathBuf>,
        #[arg(long)]
        tally: Option<PathBuf>,
        /// Alice's phases as `block,phases`; regenerated from the seed if absent.
        #[arg(long, requires = "events")]
        phases: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Key rate against block size over one continuous train per trial.
    Scan {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        key: KeyArgs,
        /// Comma-separated block sizes.
        #[arg(long, value_delimiter = ',')]
        l_list: Option<Vec<usize>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exact passive-versus-active comparison over all small phase patterns.
    Oracle {
        #[arg(long, default_value_t = 8)]
        l_max: usize,
        #[arg(long, default_value_t = BoundaryRule::default())]
        boundary_rule: BoundaryRule,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(run: &RunArgs, key: Option<&KeyArgs>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(run.config.as_deref())?;
    if let Some(seed) = run.seed {
        cfg.seed = seed;
    }
    if let Some(blocks) = run.blocks {
        cfg.blocks = blocks;
    }
    if let Some(key) = key {
        if let Some(v) = key.vth {
            cfg.photon_threshold = v;
        }
        if let Some(f) = key.ec_efficiency {
            cfg.ec_efficiency = f;
        }
        if let Some(s) = key.security_exponent {
            cfg.security_exponent = s;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn finish<C: Serialize>(
    out: Outputs,
    command: &str,
    seed: Option<u64>,
    config: &C,
    started: u128,
) -> Result<(), CliError> {
    let manifest = Manifest {
        command,
        args: std::env::args().skip(1).collect(),
        version: env!("CARGO_PKG_VERSION"),
        seed,
        config,
        started_unix_ms: started,
        finished_unix_ms: unix_ms(),
        outputs: out.digests().to_vec(),
    };
    out.finish(&manifest).context("writing manifest.json")?;
    Ok(())
}

fn write_json<T: Serialize>(w: &mut dyn Write, value: &T) -> Result<(), CliError> {
    serde_json::to_writer_pretty(&mut *w, value).map_err(|e| CliError::Internal(e.into()))?;
    writeln!(w)?;
    Ok(())
}

fn simulate(run: RunArgs, out_dir: &Path) -> Result<(), CliError> {
    let started = unix_ms();
    let cfg = load(&run, None)?;
    let result = simulate_run(&cfg.experiment()).map_err(|e| CliError::Config(e.to_string()))?;
    let mut out = Outputs::create(out_dir)?;
    out.write("events.csv", |w| csvio::write_events(w, &result.events))?;
    finish(out, "simulate", Some(cfg.seed), &cfg, started)?;
    eprintln!(
        "{} blocks, {} events -> {}",
        result.blocks_emitted(),
        result.events.len(),
        out_dir.join("events.csv").display()
    );
    Ok(())
}

fn read_tally(path: &Path) -> Result<SiftTally, CliError> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| CliError::parse(path, e.line() as u64, e.to_string()))
}

fn analyze_cmd(
    run: RunArgs,
    key: KeyArgs,
    events: Option<PathBuf>,
    tally: Option<PathBuf>,
    phases: Option<PathBuf>,
    out_dir: Option<PathBuf>,
) -> Result<(), CliError> {
    let started = unix_ms();
    let cfg = load(&run, Some(&key))?;
    let exp = cfg.experiment();
    let tally = match (events, tally) {
        (_, Some(path)) => read_tally(&path)?,
        (Some(path), None) => {
            let events = csvio::read_events(&path, exp.block_size, exp.blocks)?;
            match phases {
                Some(phase_path) => {
                    let record = csvio::read_phases(&phase_path, exp.block_size)?;
                    if let Some(e) = events.iter().find(|e| !record.contains_key(&e.block_id)) {
                        return Err(CliError::parse(
                            &phase_path,
                            0,
                            format!("no phases for block {}", e.block_id),
                        ));
                    }
                    analyze::sift_events(&events, &exp, &FilePhases(record))?
                }
                None => analyze::sift_events(&events, &exp, &SeededPhases(exp.clone()))?,
            }
        }
        (None, None) => {
            return Err(CliError::Config(
                "either --events or --tally is required".into(),
            ))
        }
    };
    let report = analyze::report(&tally, &cfg.analysis(), cfg.photon_threshold.0)?;

    let mut text =
        serde_json::to_string_pretty(&report).map_err(|e| CliError::Internal(e.into()))?;
    text.push('\n');
    if let Some(dir) = out_dir {
        let mut out = Outputs::create(&dir)?;
        out.write("tally.json", |w| write_json(w, &tally))?;
        out.write::<std::io::Error>("report.json", |w| w.write_all(text.as_bytes()))?;
        finish(out, "analyze", Some(cfg.seed), &cfg, started)?;
    }
    print!("{text}");
    match report.status {
        Status::Key => Ok(()),
        Status::NoKey => Err(CliError::NoKey(report.reason.unwrap_or_default())),
    }
}

fn scan_cmd(
    run: RunArgs,
    key: KeyArgs,
    l_list: Option<Vec<usize>>,
    out_dir: &Path,
) -> Result<(), CliError> {
    let started = unix_ms();
    let mut cfg = load(&run, Some(&key))?;
    if let Some(list) = l_list {
        cfg.block_sizes = list;
    }
    let result = scan(&cfg.scan()).map_err(|e| match e {
        ScanError::Sift(e) => CliError::Internal(e.into()),
        other => CliError::Config(other.to_string()),
    })?;
    let mut out = Outputs::create(out_dir)?;
    out.write("curve.csv", |w| csvio::write_curve(w, &result.points))?;
    out.write("summary.csv", |w| csvio::write_summary(w, &result.curve))?;
    out.write("optima.csv", |w| csvio::write_optima(w, &result.optima))?;
    finish(out, "scan", Some(cfg.seed), &cfg, started)?;
    for o in &result.optima {
        println!(
            "d = {} km: optimal L = {}, v_th = {}, e_b = {:.4}, e_ph = {:.5}, rate = {:.3e}",
            o.distance_km, o.block_size, o.v_th, o.bit_error, o.phase_error, o.key_rate_per_pulse
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct OracleSettings {
    l_max: usize,
    boundary_rule: BoundaryRule,
}

fn oracle_cmd(l_max: usize, rule: BoundaryRule, out_dir: Option<PathBuf>) -> Result<(), CliError> {
    let started = unix_ms();
    if !(3..=8).contains(&l_max) {
        return Err(CliError::Config(format!(
            "--l-max must lie in 3..=8, got {l_max}"
        )));
    }
    let report = equivalence_report(l_max, rule).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(dir) = out_dir {
        let mut out = Outputs::create(&dir)?;
        out.write("oracle.json", |w| write_json(w, &report))?;
        finish(
            out,
            "oracle",
            None,
            &OracleSettings {
                l_max,
                boundary_rule: rule,
            },
            started,
        )?;
    }
    println!(
        "{} patterns, L = 3..={l_max}, rule {rule}: max TV {:e}, max shift deviation {:e}, {}",
        report.patterns_tested,
        report.max_tv_distance,
        report.max_shift_uniformity_deviation,
        if report.all_within_tolerance {
            "within tolerance"
        } else {
            "OUT OF TOLERANCE"
        }
    );
    for r in &report.rules {
        println!(
            "  {:<14} max TV {:e}, {} patterns at or above {:e}",
            r.boundary_rule.to_string(),
            r.max_tv_distance,
            r.patterns_above_tolerance,
            report.tv_tolerance
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { run, out } => simulate(run, &out),
        Command::Analyze {
            run,
            key,
            events,
            tally,
            phases,
            out,
        } => analyze_cmd(run, key, events, tally, phases, out),
        Command::Scan {
            run,
            key,
            l_list,
            out,
        } => scan_cmd(run, key, l_list, &out),
        Command::Oracle {
            l_max,
            boundary_rule,
            out,
        } => oracle_cmd(l_max, boundary_rule, out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rrdps: {e:#}");
            ExitCode::from(e.exit_code())
        }
    }
}
