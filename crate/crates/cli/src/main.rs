//! surfmix: experiments on biased monotone-surface dynamics.
//!
//! Usage: surfmix <subcommand> --config PATH [--seed U64] [--threads N] [--out DIR]
//!
//! Subcommands: sample, couple, hit, drift, mix-exact, slow, lemmas.
//! Exit codes: 0 success, 2 config error, 3 resource cap exceeded,
//! 4 a verification subcommand found violations (reported before exiting).

mod commands;
mod config;

use commands::{CliError, Ctx};
use std::path::PathBuf;
use std::process::ExitCode;

const USAGE: &str = "usage: surfmix <sample|couple|hit|drift|mix-exact|slow|lemmas> \
--config PATH [--seed U64] [--threads N] [--out DIR]";

struct Args {
    subcommand: String,
    config_path: PathBuf,
    seed: Option<u64>,
    threads: Option<usize>,
    out_dir: PathBuf,
}

fn parse_args(argv: &[String]) -> Result<Args, String> {
    let mut it = argv.iter();
    let subcommand = it.next().ok_or(USAGE)?.clone();
    let mut config_path = None;
    let mut seed = None;
    let mut threads = None;
    let mut out_dir = PathBuf::from(".");
    while let Some(flag) = it.next() {
        let mut value = || {
            it.next()
                .cloned()
                .ok_or_else(|| format!("{flag}: missing value"))
        };
        match flag.as_str() {
            "--config" => config_path = Some(PathBuf::from(value()?)),
            "--seed" => {
                seed = Some(
                    value()?
                        .parse::<u64>()
                        .map_err(|_| "--seed: expected u64")?,
                )
            }
            "--threads" => {
                threads = Some(
                    value()?
                        .parse::<usize>()
                        .map_err(|_| "--threads: expected integer")?,
                )
            }
            "--out" => out_dir = PathBuf::from(value()?),
            other => return Err(format!("unknown flag {other}\n{USAGE}")),
        }
    }
    Ok(Args {
        subcommand,
        config_path: config_path.ok_or(format!("--config is required\n{USAGE}"))?,
        seed,
        threads,
        out_dir,
    })
}

fn run() -> Result<i32, (i32, String)> {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let args = parse_args(&argv).map_err(|e| (2, e))?;

    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| (2, format!("--threads: {e}")))?;
    }

    let raw = std::fs::read_to_string(&args.config_path).map_err(|e| {
        (
            2,
            format!("config error: {}: {e}", args.config_path.display()),
        )
    })?;
    let config: serde_json::Value = serde_json::from_str(&raw).map_err(|e| {
        (
            2,
            format!("config error: {}: {e}", args.config_path.display()),
        )
    })?;
    let ctx = Ctx {
        config: &config,
        config_hash: config::config_hash(&config),
        out_dir: &args.out_dir,
        seed_override: args.seed,
    };

    let outcome = match args.subcommand.as_str() {
        "sample" => commands::cmd_sample(&ctx),
        "couple" => commands::cmd_couple(&ctx),
        "hit" => commands::cmd_hit(&ctx),
        "drift" => commands::cmd_drift(&ctx),
        "mix-exact" => commands::cmd_mix_exact(&ctx),
        "slow" => commands::cmd_slow(&ctx),
        "lemmas" => commands::cmd_lemmas(&ctx),
        other => return Err((2, format!("unknown subcommand {other:?}\n{USAGE}"))),
    };
    outcome.map_err(|e| match e {
        CliError::Config(msg) => (2, msg),
        CliError::Cap(msg) => (3, msg),
        CliError::Io(msg) => (2, format!("io error: {msg}")),
    })
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code as u8),
        Err((code, msg)) => {
            eprintln!("{msg}");
            ExitCode::from(code as u8)
        }
    }
}
