use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use epsel_cli::config::Mode;
use epsel_cli::{emit_report, run_experiment, CliError, ExperimentConfig};

/// EP-based sparse recovery experiments: simulation, state-evolution
/// prediction, SE/MC comparison, threshold sweeps, and identity diagnostics.
#[derive(Debug, Parser)]
#[command(name = "epsel", version, about)]
struct Cli {
    /// Execution mode: simulate | se | compare | sweep | diagnose.
    /// Falls back to the config file's mode when omitted.
    mode: Option<String>,

    /// Path to the experiment config (JSON).
    #[arg(long)]
    config: PathBuf,

    /// Override the signal dimension N.
    #[arg(long)]
    n: Option<usize>,

    /// Override the compression rate delta.
    #[arg(long)]
    delta: Option<f64>,

    /// Override the noise variance sigma^2.
    #[arg(long)]
    sigma2: Option<f64>,

    /// Override the base seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Override the trial count.
    #[arg(long)]
    trials: Option<usize>,

    /// Override the mode (same values as the positional argument).
    #[arg(long = "mode")]
    mode_flag: Option<String>,

    /// Override the output directory.
    #[arg(long)]
    out: Option<String>,
}

fn resolve_mode(cli: &Cli, config: &mut ExperimentConfig) -> Result<(), CliError> {
    let requested = match (&cli.mode, &cli.mode_flag) {
        (Some(a), Some(b)) if a != b => {
            return Err(CliError::Validation(vec![format!(
                "mode: positional '{a}' conflicts with --mode '{b}'"
            )]));
        }
        (Some(a), _) => Some(a),
        (None, Some(b)) => Some(b),
        (None, None) => None,
    };
    if let Some(name) = requested {
        match Mode::parse(name) {
            Some(mode) => config.mode = mode,
            None => {
                return Err(CliError::Validation(vec![format!(
                    "mode: unknown mode '{name}' (expected simulate|se|compare|sweep|diagnose)"
                )]));
            }
        }
    }
    Ok(())
}

fn apply_overrides(cli: &Cli, config: &mut ExperimentConfig) {
    if let Some(n) = cli.n {
        config.n = n;
    }
    if let Some(delta) = cli.delta {
        config.delta = delta;
    }
    if let Some(sigma2) = cli.sigma2 {
        config.sigma2 = sigma2;
    }
    if let Some(seed) = cli.seed {
        config.base_seed = seed;
    }
    if let Some(trials) = cli.trials {
        config.trials = trials;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
}

fn print_summary(result: &epsel_cli::ResultSet) {
    println!(
        "mode={} N={} M={} delta={} sigma2={}",
        result.config.mode,
        result.config.n,
        result.m,
        result.realized_delta,
        result.config.sigma2,
    );
    if !result.trials.is_empty() {
        println!(
            "trials_ok={}/{}",
            result.trials.iter().filter(|t| !t.failed).count(),
            result.trials.len()
        );
    }
    for row in &result.aggregate {
        let mc = row
            .mc_mean
            .map(|m| format!("mc={m:.6}"))
            .unwrap_or_else(|| "mc=-".to_string());
        let se = row
            .se_pred
            .map(|p| format!("se={p:.6}"))
            .unwrap_or_else(|| "se=-".to_string());
        let dev = row
            .rel_dev
            .map(|d| format!("rel_dev={d:.4}"))
            .unwrap_or_default();
        println!("iter={} {mc} {se} {dev}", row.iter);
    }
    if let Some(sweep) = &result.sweep {
        for row in &sweep.rows {
            println!(
                "{}={} fixed_points={} attractor_mse={:.6e} unique={}",
                sweep.axis, row.axis_value, row.fp_count, row.attractor_mse, row.unique
            );
        }
        match sweep.threshold_estimate {
            Some(v) => println!("threshold_estimate({})={v}", sweep.axis),
            None => println!("threshold_estimate({}): none in range", sweep.axis),
        }
    }
    if let Some(diag) = &result.diagnose {
        for (family, count) in &diag.family_pass_counts {
            println!(
                "identity={family} pass_seeds={count}/{}",
                diag.reports.len()
            );
        }
        println!(
            "all_identities_pass={}/{} seeds",
            diag.seeds_all_pass,
            diag.reports.len()
        );
    }
    if result.failed_trials > 0 {
        println!("failed_trials={}", result.failed_trials);
    }
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    let mut config = ExperimentConfig::from_path(&cli.config)?;
    resolve_mode(&cli, &mut config)?;
    apply_overrides(&cli, &mut config);
    let result = run_experiment(&config)?;
    let written = emit_report(&result, &config.formats)?;
    print_summary(&result);
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Ok(threads) = std::env::var("EPSEL_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
