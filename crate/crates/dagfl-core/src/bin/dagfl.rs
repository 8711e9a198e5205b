//! Command-line front end: run experiments, verify ledger exports, benchmark
//! policies, and re-emit ledgers from replay logs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dagfl_core::config::{ConfigError, RunConfig, SpeedFactors};
use dagfl_core::ledger::{self, Digest, Verdict};
use dagfl_core::sim::{self, metrics_csv, replay_jsonl, trace_csv, Policy};

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_VERIFICATION: u8 = 3;

#[derive(Parser)]
#[command(
    name = "dagfl",
    about = "DAG-ledger asynchronous federated learning simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Flat key = value configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out_dir` from the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Enable the per-candidate selection trace CSV.
    #[arg(long)]
    trace: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its artifacts to the output directory.
    Run(RunArgs),
    /// Verify a ledger export against a trusted tip digest.
    Verify {
        /// JSON-lines ledger export.
        export: PathBuf,
        /// Trusted tip digest, lowercase hex.
        tip_digest: String,
    },
    /// Benchmark policies over a batch of seeds and emit a comparison table.
    Bench {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated policies (dag-afl, centralized, independent,
        /// sync-fedavg, pure-async).
        #[arg(long, value_delimiter = ',')]
        policies: Vec<String>,
        /// Seeds per policy, starting at the configured seed.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
    /// Re-emit the JSON-lines ledger from a replay log.
    ExportDag {
        /// Replay log (JSON lines) produced by `run`.
        replay: PathBuf,
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run(args) => cmd_run(args),
        Command::Verify { export, tip_digest } => cmd_verify(&export, &tip_digest),
        Command::Bench {
            run,
            policies,
            seeds,
        } => cmd_bench(run, &policies, seeds),
        Command::ExportDag { replay, out } => cmd_export_dag(&replay, out.as_deref()),
    }
}

fn load_config(args: &RunArgs) -> Result<RunConfig, ConfigError> {
    let mut config = match &args.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = &args.out {
        config.out_dir = out.display().to_string();
    }
    if args.trace {
        config.trace = true;
    }
    Ok(config)
}

fn usage_error(err: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(EXIT_USAGE)
}

fn runtime_error(err: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(EXIT_RUNTIME)
}

fn cmd_run(args: RunArgs) -> ExitCode {
    let mut config = match load_config(&args) {
        Ok(c) => c,
        Err(e) => return usage_error(e),
    };
    // Pin the drawn speed factors so the emitted config reproduces the run.
    config.speed_factors = SpeedFactors::Explicit(sim::resolve_speed_factors(&config));
    let out_dir = PathBuf::from(&config.out_dir);
    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        return runtime_error(format!("cannot create {}: {e}", out_dir.display()));
    }
    let output = match sim::run_policy(&config, config.policy) {
        Ok(o) => o,
        Err(e) => return runtime_error(e),
    };
    let write = |name: &str, contents: String| -> std::io::Result<()> {
        std::fs::write(out_dir.join(name), contents)
    };
    let result = write("effective.config", config.effective_text())
        .and_then(|_| write("metrics.csv", metrics_csv(&output.metrics)))
        .and_then(|_| write("summary.json", output.summary.to_json()))
        .and_then(|_| write("replay.jsonl", replay_jsonl(&output.replay)));
    if let Err(e) = result {
        return runtime_error(e);
    }
    if let Some(ledger) = &output.ledger {
        if let Err(e) = write("ledger.jsonl", ledger.export_jsonl()) {
            return runtime_error(e);
        }
    }
    if let Some(registry) = &output.registry {
        if let Err(e) = write("registry.csv", registry.to_csv()) {
            return runtime_error(e);
        }
    }
    if config.trace {
        if let Err(e) = write("trace.csv", trace_csv(&output.trace)) {
            return runtime_error(e);
        }
    }
    println!(
        "{} finished: final mean accuracy {:.4}, {} ({} uploads/sec)",
        config.policy.name(),
        output.summary.final_mean_accuracy,
        output.summary.terminated_by,
        output.summary.uploads_per_sec,
    );
    ExitCode::SUCCESS
}

fn cmd_verify(export: &Path, tip_digest: &str) -> ExitCode {
    let digest = match Digest::from_hex(tip_digest) {
        Some(d) => d,
        None => return usage_error("tip digest must be 64 hex characters"),
    };
    let text = match std::fs::read_to_string(export) {
        Ok(t) => t,
        Err(e) => return runtime_error(format!("cannot read {}: {e}", export.display())),
    };
    let records = match ledger::parse_export(&text) {
        Ok(r) => r,
        Err(e) => return runtime_error(e),
    };
    let path = match ledger::path_from_export(&records, &digest) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("verification failed: {e}");
            return ExitCode::from(EXIT_VERIFICATION);
        }
    };
    match ledger::verify_path(&path, &digest) {
        Ok(Verdict::Accepted) => {
            println!("accepted");
            ExitCode::SUCCESS
        }
        Ok(Verdict::TamperedAt(id)) => {
            println!("tampered-at({id})");
            ExitCode::from(EXIT_VERIFICATION)
        }
        Err(e) => runtime_error(e),
    }
}

fn cmd_bench(args: RunArgs, policies: &[String], seeds: u64) -> ExitCode {
    let config = match load_config(&args) {
        Ok(c) => c,
        Err(e) => return usage_error(e),
    };
    if policies.is_empty() {
        return usage_error("at least one policy is required");
    }
    if seeds == 0 {
        return usage_error("need at least one seed");
    }
    let parsed: Result<Vec<Policy>, String> = policies
        .iter()
        .map(|name| Policy::from_name(name).ok_or_else(|| format!("unknown policy `{name}`")))
        .collect();
    let policies = match parsed {
        Ok(p) => p,
        Err(e) => return usage_error(e),
    };

    // (seed, time_to_target, final_accuracy)
    type BenchRow = (u64, Option<f64>, f64);
    let mut rows = Vec::new();
    for &policy in &policies {
        // Seeds are independent deterministic runs; fan them out.
        let results: Vec<Result<BenchRow, String>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..seeds)
                .map(|offset| {
                    let mut run_config = config.clone();
                    run_config.seed = config.seed + offset;
                    scope.spawn(move || {
                        let seed = run_config.seed;
                        sim::run_policy(&run_config, policy)
                            .map(|out| {
                                (
                                    seed,
                                    out.summary.time_to_target,
                                    out.summary.final_mean_accuracy,
                                )
                            })
                            .map_err(|e| {
                                format!("{policy:?} seed {seed}: {e}", policy = policy.name())
                            })
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("bench worker"))
                .collect()
        });
        for result in results {
            match result {
                Ok((seed, ttt, acc)) => rows.push((policy, seed, ttt, acc)),
                Err(e) => return runtime_error(e),
            }
        }
    }

    let mut csv = String::from("policy,seed,time_to_target,final_accuracy\n");
    for (policy, seed, ttt, acc) in &rows {
        let ttt = ttt.map(|t| t.to_string()).unwrap_or_default();
        csv.push_str(&format!("{},{seed},{ttt},{acc}\n", policy.name()));
    }
    for &policy in &policies {
        let of_policy: Vec<_> = rows.iter().filter(|r| r.0 == policy).collect();
        let ttt_median = median_time(of_policy.iter().map(|r| r.2));
        let acc_median = median(of_policy.iter().map(|r| r.3));
        let ttt = ttt_median.map(|t| t.to_string()).unwrap_or_default();
        csv.push_str(&format!("{},median,{ttt},{acc_median}\n", policy.name()));
    }

    let out_dir = PathBuf::from(&config.out_dir);
    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        return runtime_error(format!("cannot create {}: {e}", out_dir.display()));
    }
    if let Err(e) = std::fs::write(out_dir.join("bench.csv"), &csv) {
        return runtime_error(e);
    }
    print!("{csv}");
    ExitCode::SUCCESS
}

fn median(values: impl Iterator<Item = f64>) -> f64 {
    let mut sorted: Vec<f64> = values.collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Median of times where "never reached" counts as infinity; returns `None`
/// when the median itself is unreached.
fn median_time(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let mut sorted: Vec<f64> = values.map(|v| v.unwrap_or(f64::INFINITY)).collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let m = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    m.is_finite().then_some(m)
}

fn cmd_export_dag(replay: &Path, out: Option<&Path>) -> ExitCode {
    let text = match std::fs::read_to_string(replay) {
        Ok(t) => t,
        Err(e) => return runtime_error(format!("cannot read {}: {e}", replay.display())),
    };
    let rows = match sim::parse_replay(&text) {
        Ok(r) => r,
        Err(e) => return runtime_error(format!("malformed replay: {e}")),
    };
    let ledger = match sim::ledger_from_replay(&rows) {
        Ok(l) => l,
        Err(e) => return runtime_error(e),
    };
    let export = ledger.export_jsonl();
    match out {
        Some(path) => {
            if let Err(e) = std::fs::write(path, export) {
                return runtime_error(e);
            }
        }
        None => print!("{export}"),
    }
    ExitCode::SUCCESS
}
