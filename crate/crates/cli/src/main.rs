use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use provi::harness::{
    check_bounds, fit_rate_summaries, run_experiment, BoundReport, Experiment, ExperimentConfig, RateFit,
    RateMetric, Summary,
};

/// Environment variable naming the default output directory.
const OUT_DIR_ENV: &str = "PROVI_OUT_DIR";

/// Output directory used when neither `--out`, the config, nor the environment names one.
const DEFAULT_OUT_DIR: &str = "provi-out";

/// Provably convergent black-box variational inference experiments.
#[derive(Debug, Parser)]
#[command(name = "provi", version, about)]
struct Cli {
    /// Worker threads for replications (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment and write per-run CSVs plus summary.json.
    Run {
        config: PathBuf,
        /// Output directory [default: config `output.dir`, then $PROVI_OUT_DIR, then provi-out].
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Override the optimizer seed.
        #[arg(long, value_name = "N")]
        seed: Option<u64>,
    },
    /// Check the estimator's quadratic noise bound on a grid around the reference.
    CheckBounds {
        config: PathBuf,
        /// Print the full report as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Fit the log-log convergence slope over summaries from a ladder of iteration counts.
    Rates {
        #[arg(required = true, num_args = 1..)]
        summaries: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Metric::DistSq)]
        metric: Metric,
        /// Fail unless the slope is at least this value.
        #[arg(long, value_name = "SLOPE", allow_hyphen_values = true)]
        expect_min: Option<f64>,
        /// Fail unless the slope is at most this value.
        #[arg(long, value_name = "SLOPE", allow_hyphen_values = true)]
        expect_max: Option<f64>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Metric {
    DistSq,
    ElboGap,
}

impl From<Metric> for RateMetric {
    fn from(m: Metric) -> Self {
        match m {
            Metric::DistSq => RateMetric::FinalDistSq,
            Metric::ElboGap => RateMetric::FinalElboGap,
        }
    }
}

/// How a subcommand ended, mapped onto the process exit code.
enum Outcome {
    Pass,
    Fail,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Run { config, out, seed } => cmd_run(&config, out, seed),
        Command::CheckBounds { config, json } => cmd_check_bounds(&config, json),
        Command::Rates {
            summaries,
            metric,
            expect_min,
            expect_max,
            json,
        } => cmd_rates(&summaries, metric.into(), expect_min, expect_max, json),
    };
    match result {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::Fail) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn cmd_run(path: &Path, out: Option<PathBuf>, seed: Option<u64>) -> provi::error::Result<Outcome> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = seed {
        config.optimizer.seed = seed;
    }
    let out = out
        .or_else(|| config.output.dir.clone())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    let summary = run_experiment(&config, Some(&out))?;
    print_run(&summary, &out);
    Ok(if summary.envelope_check.checked && !summary.envelope_check.pass {
        Outcome::Fail
    } else {
        Outcome::Pass
    })
}

fn print_run(s: &Summary, out: &Path) {
    println!(
        "{} (d={}) {:?}+{:?}: T={}, {} replication(s)",
        s.model, s.dim, s.algorithm, s.estimator, s.iterations, s.replications
    );
    let fm = &s.final_metrics;
    if let Some(d) = &fm.dist_sq {
        println!("  final {} dist_sq: {:.6e} ± {}", fm.iterate, d.mean, fmt_se(d.se));
    }
    if let Some(g) = &fm.elbo_gap {
        let tag = if fm.gap_relative { " (relative)" } else { "" };
        println!("  final {} elbo gap{tag}: {:.6e} ± {}", fm.iterate, g.mean, fmt_se(g.se));
    }
    if !s.diverged.is_empty() {
        println!("  diverged replications: {}", s.diverged.len());
    }
    let check = &s.envelope_check;
    if check.checked {
        let verdict = if check.pass { "PASS" } else { "FAIL" };
        println!("  envelope check: {verdict} ({} violation(s))", check.violations.len());
    } else if let Some(note) = &check.note {
        println!("  envelope check skipped: {note}");
    }
    println!("  wrote {}", out.join("summary.json").display());
}

fn fmt_se(se: Option<f64>) -> String {
    se.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2e}"))
}

fn cmd_check_bounds(path: &Path, json: bool) -> provi::error::Result<Outcome> {
    let config = ExperimentConfig::load(path)?;
    let exp = Experiment::prepare(&config)?;
    let report = check_bounds(&exp)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        print_bounds(&report);
    }
    Ok(if report.pass { Outcome::Pass } else { Outcome::Fail })
}

fn print_bounds(r: &BoundReport) {
    println!(
        "{:?} estimator: a={:.6e}, b={:.6e}, {} points × {} samples{}",
        r.estimator,
        r.a,
        r.b,
        r.points.len(),
        r.samples_per_point,
        if r.exact_reference { "" } else { " (approximate reference)" }
    );
    println!("{:>5} {:>13} {:>13} {:>11} {:>13}  ok", "point", "dist_sq", "measured", "se", "bound");
    for p in &r.points {
        println!(
            "{:>5} {:>13.6e} {:>13.6e} {:>11.3e} {:>13.6e}  {}",
            p.index,
            p.dist_sq,
            p.measured,
            p.std_err,
            p.bound,
            if p.pass { "yes" } else { "NO" }
        );
    }
    let verdict = if r.pass { "PASS" } else { "FAIL" };
    println!("{verdict}: {} failure(s), worst margin {:.3e}", r.failures(), r.worst_margin());
}

fn cmd_rates(
    paths: &[PathBuf],
    metric: RateMetric,
    expect_min: Option<f64>,
    expect_max: Option<f64>,
    json: bool,
) -> provi::error::Result<Outcome> {
    let summaries = paths.iter().map(|p| Summary::load(p)).collect::<Result<Vec<_>, _>>()?;
    let fit = fit_rate_summaries(&summaries, metric)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&fit).expect("fit serializes"));
    } else {
        print_rates(&fit, metric);
    }
    let low_ok = expect_min.map_or(true, |lo| fit.slope >= lo);
    let high_ok = expect_max.map_or(true, |hi| fit.slope <= hi);
    if expect_min.is_some() || expect_max.is_some() {
        let verdict = if low_ok && high_ok { "PASS" } else { "FAIL" };
        let lo = expect_min.map_or("-inf".to_string(), |v| v.to_string());
        let hi = expect_max.map_or("inf".to_string(), |v| v.to_string());
        eprintln!("{verdict}: slope {:.4} expected in [{lo}, {hi}]", fit.slope);
    }
    Ok(if low_ok && high_ok { Outcome::Pass } else { Outcome::Fail })
}

fn print_rates(fit: &RateFit, metric: RateMetric) {
    println!("{:>10} {:>14} {:>11}", "T", metric.name(), "se");
    for p in &fit.points {
        println!("{:>10} {:>14.6e} {:>11.3e}", p.iterations, p.value, p.std_err);
    }
    if fit.dropped > 0 {
        println!("({} non-positive point(s) dropped)", fit.dropped);
    }
    println!(
        "slope {:.4} ± {:.4} (95% CI [{:.4}, {:.4}])",
        fit.slope, fit.slope_se, fit.ci_low, fit.ci_high
    );
}
