//! `notrade` — experiments on optimal trading with small proportional costs.
//!
//! Usage: `notrade <subcommand> --config <file> [--out <dir>] [--threads N] [--seed N]`

mod config;
mod experiments;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use config::{parse_config, ExperimentKind};

const USAGE: &str = "\
notrade — no-trade band experiments for small proportional transaction costs

USAGE:
    notrade <subcommand> --config <file> [--out <dir>] [--threads N] [--seed N]

SUBCOMMANDS:
    band          no-trade corridor plot data for the configured market/claim
    welfare       band-policy certainty equivalents, loss and its 2/3-1/3 split
    scaling       welfare loss against a ladder of spreads (needs eps_list)
    price         indifference price of a claim in the Black-Scholes market
    hedge         basis-risk hedging error and incomplete-market corrections
    semistatic    optimal static hedge position in a second claim
    shadow-check  shadow-price drift, containment and optimality diagnostics

OPTIONS:
    --config <file>   configuration file (required); INI-style sections
                      [market], [preference], [claim], [claim2], [numerics], [output]
    --out <dir>       output directory (default '.')
    --threads <N>     worker threads (default: [numerics] threads, else all cores)
    --seed <N>        override [numerics] seed
    --help            this message

CONFIG DEFAULTS:
    [numerics] horizon = 1.0, n_steps = 10000 per unit year, n_paths = 10000,
    threads = 0 (all cores), window = 0 (1% of the grid), n_claims = 1,
    interval_lo/hi = -10/10. 'seed' is mandatory; 'eps' is required except for
    'scaling', which takes 'eps_list = e1,e2,e3,...' (three or more values).

OUTPUTS:
    <prefix>_report.txt   human-readable summary
    <prefix>_report.kv    machine-readable key/value report (stable field order;
                          the timestamp sits on a leading '# timestamp =' line)
    <prefix>_*.csv        plot data, depending on the subcommand

Re-running with an identical configuration reproduces every numeric output
byte for byte, at any thread count.";

struct CliArgs {
    kind: ExperimentKind,
    config_path: PathBuf,
    out_dir: PathBuf,
    threads: Option<usize>,
    seed: Option<u64>,
}

/// `Ok(None)` means help was requested; print the usage text and exit clean.
fn parse_args(args: &[String]) -> Result<Option<CliArgs>, String> {
    if args.is_empty() {
        return Err(USAGE.to_string());
    }
    if args[0] == "--help" || args[0] == "-h" {
        return Ok(None);
    }
    let kind = ExperimentKind::parse(&args[0])
        .ok_or_else(|| format!("unknown subcommand '{}'\n\n{USAGE}", args[0]))?;
    let mut config_path = None;
    let mut out_dir = PathBuf::from(".");
    let mut threads = None;
    let mut seed = None;
    let mut it = args[1..].iter();
    while let Some(flag) = it.next() {
        match flag.as_str() {
            "--config" => {
                let v = it.next().ok_or("--config needs a file path")?;
                config_path = Some(PathBuf::from(v));
            }
            "--out" => {
                let v = it.next().ok_or("--out needs a directory")?;
                out_dir = PathBuf::from(v);
            }
            "--threads" => {
                let v = it.next().ok_or("--threads needs a count")?;
                threads = Some(v.parse::<usize>().map_err(|_| format!("--threads: '{v}' is not an integer"))?);
            }
            "--seed" => {
                let v = it.next().ok_or("--seed needs an integer")?;
                seed = Some(v.parse::<u64>().map_err(|_| format!("--seed: '{v}' is not an integer"))?);
            }
            "--help" | "-h" => return Ok(None),
            other => return Err(format!("unknown option '{other}'\n\n{USAGE}")),
        }
    }
    let config_path = config_path.ok_or_else(|| format!("missing --config\n\n{USAGE}"))?;
    Ok(Some(CliArgs { kind, config_path, out_dir, threads, seed }))
}

fn run() -> Result<(), String> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(cli) = parse_args(&args)? else {
        println!("{USAGE}");
        return Ok(());
    };
    let text = std::fs::read_to_string(&cli.config_path)
        .map_err(|e| format!("cannot read config '{}': {e}", cli.config_path.display()))?;
    let mut cfg = parse_config(cli.kind, &text).map_err(|e| format!("config: {e}"))?;
    if let Some(seed) = cli.seed {
        cfg.numerics.seed = seed;
        for (k, v) in cfg.echo.iter_mut() {
            if k == "config.numerics.seed" {
                *v = seed.to_string();
            }
        }
    }
    let threads = cli.threads.unwrap_or(cfg.numerics.threads);
    if threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().ok();
    }
    let out = experiments::run(&cfg, &cli.out_dir)?;
    for f in &out.files {
        println!("wrote {}", f.display());
    }
    if out.warnings > 0 {
        eprintln!("completed with {} warning(s); see the report", out.warnings);
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("{msg}");
            ExitCode::FAILURE
        }
    }
}
