//! Command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Parser, Subcommand};
use log::LevelFilter;

use crate::config::ScenarioConfig;
use crate::ledger::blocks_to_jsonl;
use crate::protocol::{attack_suite, run_election, AttackType, SecurityVerdict, VerdictStatus};
use crate::trace::verify_trace;
use crate::PartyId;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_ABORTED: i32 = 2;
pub const EXIT_CORRUPT_TRACE: i32 = 3;
pub const EXIT_ATTACK_FAILED: i32 = 4;

pub const LOG_ENV: &str = "QVOTE_LOG";

#[derive(Debug, Parser)]
#[command(
    name = "qvote",
    version,
    about = "Simulate and attack a self-tallying blockchain election"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one election and write report.json, trace.jsonl and chain.jsonl.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run adversary scenarios and print a verdict table.
    Attack {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "type", value_name = "TYPE", value_parser = parse_attack)]
        attack: AttackType,
    },
    /// Replay a trace file and check every digest and the tally.
    Verify { path: PathBuf },
}

fn parse_attack(s: &str) -> Result<AttackType, String> {
    s.parse()
}

/// Configures logging from `QVOTE_LOG` (`quiet`, `info` or `debug`).
pub fn init_logging() {
    let level = match std::env::var(LOG_ENV).as_deref() {
        Ok("quiet") => LevelFilter::Off,
        Ok("info") => LevelFilter::Info,
        Ok("debug") => LevelFilter::Debug,
        _ => LevelFilter::Warn,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
}

/// Parses `args` (program name first) and runs the command, returning the
/// process exit code.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{e}");
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    match cli.command {
        Command::Run {
            config,
            seed,
            out: dir,
        } => cmd_run(&config, seed, &dir, out, err),
        Command::Attack { config, attack } => cmd_attack(&config, attack, out, err),
        Command::Verify { path } => cmd_verify(&path, out, err),
    }
}

fn load(path: &Path, err: &mut dyn Write) -> Option<ScenarioConfig> {
    match ScenarioConfig::load(path) {
        Ok(config) => Some(config),
        Err(e) => {
            let _ = writeln!(err, "error: {}: {e}", path.display());
            None
        }
    }
}

pub fn cmd_run(
    config_path: &Path,
    seed: Option<u64>,
    out_dir: &Path,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let Some(mut config) = load(config_path, err) else {
        return EXIT_ERROR;
    };
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let outcome = match run_election(&config) {
        Ok(outcome) => outcome,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_ERROR;
        }
    };
    let chain = outcome.blockchain.read_chain(PartyId::Outsider(1));
    let written = (|| -> anyhow::Result<()> {
        std::fs::create_dir_all(out_dir)
            .with_context(|| format!("cannot create {}", out_dir.display()))?;
        let files = [
            ("report.json", outcome.report.to_json()),
            ("trace.jsonl", outcome.trace.to_jsonl()),
            ("chain.jsonl", blocks_to_jsonl(&chain)),
        ];
        for (name, body) in files {
            let path = out_dir.join(name);
            std::fs::write(&path, body)
                .with_context(|| format!("cannot write {}", path.display()))?;
        }
        Ok(())
    })();
    if let Err(e) = written {
        let _ = writeln!(err, "error: {e:#}");
        return EXIT_ERROR;
    }

    let report = &outcome.report;
    for warning in &report.warnings {
        let _ = writeln!(err, "warning: {warning}");
    }
    match (&report.aborted, report.tally) {
        (Some(abort), _) => {
            let culprits: Vec<String> = abort.culprits.iter().map(|p| p.to_string()).collect();
            let _ = writeln!(
                out,
                "aborted ({}): {} [culprits: {}] seed {}",
                serde_json::to_value(abort.reason)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_owned))
                    .unwrap_or_default(),
                abort.detail,
                culprits.join(", "),
                report.seed
            );
            EXIT_ABORTED
        }
        (None, Some(tally)) => {
            let _ = writeln!(
                out,
                "tally {tally} of {} voters, seed {}",
                report.n_voters, report.seed
            );
            EXIT_OK
        }
        (None, None) => {
            let _ = writeln!(err, "error: election ended without a tally");
            EXIT_ERROR
        }
    }
}

/// Fixed-width verdict table.
pub fn render_table(verdicts: &[SecurityVerdict]) -> String {
    let rows: Vec<(String, String, &str)> = verdicts
        .iter()
        .map(|v| {
            (
                v.property.to_string(),
                v.status.to_string(),
                v.evidence.as_str(),
            )
        })
        .collect();
    let w0 = rows.iter().map(|r| r.0.len()).chain([8]).max().unwrap_or(8);
    let w1 = rows.iter().map(|r| r.1.len()).chain([6]).max().unwrap_or(6);
    let mut table = format!("{:<w0$}  {:<w1$}  evidence\n", "property", "status");
    for (property, status, evidence) in rows {
        table.push_str(&format!("{property:<w0$}  {status:<w1$}  {evidence}\n"));
    }
    table
}

pub fn cmd_attack(
    config_path: &Path,
    attack: AttackType,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let Some(config) = load(config_path, err) else {
        return EXIT_ERROR;
    };
    let verdicts = match attack_suite(&config, attack) {
        Ok(verdicts) => verdicts,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_ERROR;
        }
    };
    let _ = out.write_all(render_table(&verdicts).as_bytes());
    let passed = verdicts
        .iter()
        .filter(|v| v.status == VerdictStatus::Pass)
        .count();
    let _ = writeln!(out, "{passed}/{} pass", verdicts.len());
    if verdicts.iter().any(|v| v.status == VerdictStatus::Fail) {
        EXIT_ATTACK_FAILED
    } else {
        EXIT_OK
    }
}

pub fn cmd_verify(path: &Path, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let bytes = match std::fs::read(path) {
        Ok(bytes) => bytes,
        Err(e) => {
            let _ = writeln!(err, "error: cannot read {}: {e}", path.display());
            return EXIT_ERROR;
        }
    };
    match verify_trace(&bytes) {
        Ok(summary) => {
            let tally = summary
                .tally
                .map_or_else(|| "none".to_owned(), |t| t.to_string());
            let _ = writeln!(
                out,
                "ok: {} events, {} blocks, tally {tally}",
                summary.events,
                summary.blocks.len()
            );
            EXIT_OK
        }
        Err(e) => {
            let _ = writeln!(err, "corrupt trace: {e}");
            EXIT_CORRUPT_TRACE
        }
    }
}
