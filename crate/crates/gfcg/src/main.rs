use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gfcg::config::{parse_config, ExperimentSpec};
use gfcg::error::{Error, Result};
use gfcg::experiment::{
    metrics_from_samples_csv, method_name, run_experiment, run_sweep, RunOptions,
};
use gfcg::metrics::MetricsReport;
use gfcg::report::render_value;
use gfcg::verify::run_verification;

#[derive(Parser)]
#[command(
    name = "gfcg",
    version,
    about = "Guided diffusion sampling over analytic Gaussian-mixture worlds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its artifacts.
    Sample {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for samples.csv, diagnostics.csv, report.csv, SVGs.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the base seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the chain count from the config.
        #[arg(long)]
        chains: Option<usize>,
        /// Overwrite existing artifacts in the output directory.
        #[arg(long)]
        force: bool,
        /// Run chains sequentially instead of in parallel.
        #[arg(long)]
        serial: bool,
    },
    /// Vary one numeric axis and report one row per value.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Field to vary (alpha, beta, tau, t_start, cadence, omega_cfg, ...).
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values, e.g. "0,0.4,0.8,1.2".
        #[arg(long)]
        values: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        chains: Option<usize>,
        #[arg(long)]
        force: bool,
        #[arg(long)]
        serial: bool,
    },
    /// Run the brute-force oracle suite; non-zero exit on any violation.
    Verify {
        /// Monte Carlo draws per posterior-mean probe.
        #[arg(long, default_value_t = 1_000_000)]
        draws: usize,
    },
    /// Recompute the report from an existing samples.csv.
    Metrics {
        #[arg(long)]
        config: PathBuf,
        /// Directory holding samples.csv; report.csv is rewritten with --force.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
}

fn load_spec(
    path: &PathBuf,
    seed: Option<u64>,
    chains: Option<usize>,
) -> Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.clone(), e))?;
    let mut spec = parse_config(&text)?;
    if let Some(s) = seed {
        spec.base_seed = s;
    }
    if let Some(c) = chains {
        spec.chains = c;
    }
    spec.validate()?;
    Ok(spec)
}

fn print_metrics(method: &str, m: &MetricsReport) {
    let recall = m
        .recall
        .map(render_value)
        .unwrap_or_else(|| "n/a".to_string());
    println!(
        "method={method} precision={} recall={recall} frechet={} nfe_mean={}",
        render_value(m.precision),
        render_value(m.frechet),
        render_value(m.nfe_mean)
    );
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sample {
            config,
            out,
            seed,
            chains,
            force,
            serial,
        } => {
            let spec = load_spec(&config, seed, chains)?;
            let opts = RunOptions {
                out_dir: out,
                force,
                parallel: !serial,
            };
            let (metrics, results) = run_experiment(&spec, &opts)?;
            print_metrics(&method_name(spec.guidance.method), &metrics);
            println!(
                "chains={} seed={} out={}",
                results.len(),
                spec.base_seed,
                opts.out_dir
                    .as_deref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_else(|| "(none)".into())
            );
            Ok(())
        }
        Command::Sweep {
            config,
            axis,
            values,
            out,
            seed,
            chains,
            force,
            serial,
        } => {
            let spec = load_spec(&config, seed, chains)?;
            let parsed: Result<Vec<f64>> = values
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::argument(format!("invalid axis value \"{v}\"")))
                })
                .collect();
            let opts = RunOptions {
                out_dir: out,
                force,
                parallel: !serial,
            };
            let rows = run_sweep(&spec, &axis, &parsed?, &opts)?;
            for row in &rows {
                println!(
                    "{} {axis}={} precision={} frechet={} nfe_mean={}",
                    row.method,
                    render_value(row.axis_value.unwrap_or(f64::NAN)),
                    render_value(row.precision),
                    render_value(row.frechet),
                    render_value(row.nfe_mean)
                );
            }
            Ok(())
        }
        Command::Verify { draws } => {
            let report = run_verification(draws)?;
            print!("{}", report.render());
            if report.all_passed() {
                Ok(())
            } else {
                Err(Error::Verification(
                    "one or more oracle checks failed".into(),
                ))
            }
        }
        Command::Metrics { config, out, force } => {
            let spec = load_spec(&config, None, None)?;
            let samples_path = out.join("samples.csv");
            let csv = std::fs::read_to_string(&samples_path)
                .map_err(|e| Error::io(samples_path, e))?;
            let metrics = metrics_from_samples_csv(&spec, &csv)?;
            print_metrics(&method_name(spec.guidance.method), &metrics);
            let report_path = out.join("report.csv");
            if force || !report_path.exists() {
                gfcg::report::write_report_csv(
                    &report_path,
                    &[gfcg::report::ReportRow {
                        method: method_name(spec.guidance.method),
                        axis_value: None,
                        precision: metrics.precision,
                        recall: metrics.recall,
                        frechet: metrics.frechet,
                        nfe_mean: metrics.nfe_mean,
                        chains: spec.chains,
                        seed: spec.base_seed,
                    }],
                )?;
            } else {
                eprintln!(
                    "note: {} exists; pass --force to rewrite it",
                    report_path.display()
                );
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are successes; bad arguments are not.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
