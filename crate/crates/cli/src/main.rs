use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use owa_pto_cli::experiment::test_means;
use owa_pto_cli::output::{preamble, write_csv};
use owa_pto_cli::scaling::log_log_slope;
use owa_pto_cli::{
    run_experiment, run_scaling, run_verify, write_dataset, CliError, CliResult, RunConfig,
    ScalingConfig, Suite, VerifyOptions,
};

#[derive(Parser)]
#[command(name = "owa-pto", version, about = "Predict-then-optimize experiments through OWA optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate every configured method and seed.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run this single seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated method names.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        /// Concurrent runs.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Run oracle and property checks; all suites when none are named.
    Verify {
        /// Any of: owa, geometry, solvers, gradients, rank.
        suites: Vec<String>,
        #[arg(long, default_value_t = 200)]
        cases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Time the QP and Moreau portfolio layers over the number of scenarios.
    Scaling {
        #[arg(long, value_delimiter = ',', default_value = "2,3,4,5,6,7")]
        ms: Vec<usize>,
        #[arg(long, default_value_t = 20)]
        samples: usize,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Write the dataset of a config and seed in the columnar text format.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output file; defaults to `<out>/<task>_seed<k>.dataset.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(path: &Path) -> CliResult<RunConfig> {
    RunConfig::load(path)
}

fn cmd_run(
    config: PathBuf,
    seed: Option<u64>,
    out: Option<PathBuf>,
    methods: Option<Vec<String>>,
    jobs: Option<usize>,
) -> CliResult<()> {
    let mut cfg = load(&config)?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = out {
        cfg.out = o;
    }
    if let Some(m) = methods {
        cfg.methods = m;
    }
    if let Some(j) = jobs {
        cfg.jobs = j;
    }
    cfg.validate()?;
    let summary = run_experiment(&cfg)?;
    let rows: Vec<_> = summary.rows().cloned().collect();
    let metric = match cfg.task {
        owa_pto_cli::TaskTag::Rank => "violation",
        _ => "regret_pct",
    };
    for (method, v) in test_means(&rows, metric) {
        println!("{method:<24} {metric} {v:.4}");
    }
    if let Some(path) = summary.files.last() {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_verify(suites: Vec<String>, cases: usize, seed: u64) -> CliResult<()> {
    let suites = if suites.is_empty() {
        Suite::ALL.to_vec()
    } else {
        suites.iter().map(|s| s.parse()).collect::<CliResult<Vec<Suite>>>()?
    };
    let opts = VerifyOptions {
        cases,
        seed,
        ..Default::default()
    };
    let report = run_verify(&suites, &opts);
    print!("{}", report.to_csv());
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::VerifyFailed(report.failures()))
    }
}

fn cmd_scaling(ms: Vec<usize>, samples: usize, repeats: usize, seed: u64, out: PathBuf) -> CliResult<()> {
    let cfg = ScalingConfig {
        ms,
        samples,
        repeats,
        seed,
        ..Default::default()
    };
    let rows = run_scaling(&cfg)?;
    for r in &rows {
        println!("{:<11} m={} constraints={:<5} {:>12.6}s  {}", r.route, r.m, r.constraints, r.seconds_per_sample, r.status);
    }
    for route in ["owa_moreau", "owa_qp"] {
        if let Some(s) = log_log_slope(&rows, route) {
            println!("{route}: log-log slope {s:.2}");
        }
    }
    let echo = format!(
        "ms = {:?}\nn = {}\nsamples = {}\nrepeats = {}\nqp_epsilon = {}",
        cfg.ms, cfg.n, cfg.samples, cfg.repeats, cfg.qp_epsilon
    );
    let path = out.join("scaling.csv");
    write_csv(&path, &preamble(&[seed], &echo), &rows)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_gen(config: PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> CliResult<()> {
    let cfg = load(&config)?;
    let seed = seed.unwrap_or(cfg.seeds[0]);
    let path = out.unwrap_or_else(|| cfg.out.join(format!("{}_seed{seed}.dataset.csv", cfg.task.name())));
    write_dataset(&cfg, seed, &path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            seed,
            out,
            methods,
            jobs,
        } => cmd_run(config, seed, out, methods, jobs),
        Command::Verify { suites, cases, seed } => cmd_verify(suites, cases, seed),
        Command::Scaling {
            ms,
            samples,
            repeats,
            seed,
            out,
        } => cmd_scaling(ms, samples, repeats, seed, out),
        Command::Gen { config, seed, out } => cmd_gen(config, seed, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
