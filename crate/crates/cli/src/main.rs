//! `sparsespan`: sparse SSD spanning from the command line.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::ConfigFile;

#[derive(Debug, Parser)]
#[command(name = "sparsespan", version, about = "Sparse second-order stochastic dominance spanning")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Seed for every random draw [default: 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads [default: available parallelism]
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Flat TOML file of `flag-name = value` pairs; flags take precedence
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, or `-` to print the main JSON document to stdout [default: -]
    #[arg(long, global = true)]
    pub out: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Greedy sparse spanning set and its diversification loss
    Span(SpanArgs),
    /// Diversification loss along the greedy path for several support sizes
    LossCurve(LossCurveArgs),
    /// Subsampling confidence interval for the diversification loss
    Ci(CiArgs),
    /// Block-bootstrap test that a candidate portfolio does not dominate a benchmark
    TestDominance(DominanceArgs),
    /// Rolling-window out-of-sample backtest of the sparse strategy and 1/N
    Backtest(BacktestArgs),
    /// Performance measures for return series
    Metrics(MetricsArgs),
    /// Monte Carlo selection experiments
    Mc(McArgs),
    /// Factor regressions with plain or Newey-West standard errors
    Regress(RegressArgs),
}

#[derive(Debug, Args, Clone)]
pub struct SpanningArgs {
    /// Return panel CSV (`date,ASSET1,...`)
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Largest support size [default: 10]
    #[arg(long)]
    pub q_max: Option<usize>,
    /// Outcome grid points [default: 10]
    #[arg(long)]
    pub n1: Option<usize>,
    /// Mixture weight resolution [default: 5]
    #[arg(long)]
    pub n2: Option<usize>,
    /// Loss at or below which selection stops [default: 1e-6]
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Greedy iteration cap [default: ceil(q_max * ln(T + 1))]
    #[arg(long)]
    pub iteration_cap: Option<usize>,
    /// `empirical` (stop at q_max assets) or `theory` (run to the iteration cap) [default: empirical]
    #[arg(long)]
    pub mode: Option<String>,
    /// First date of the estimation window (YYYY-MM or YYYY-MM-DD) [default: first panel date]
    #[arg(long)]
    pub start: Option<String>,
    /// Window length in periods; assets with gaps in the window are dropped [default: rest of panel]
    #[arg(long)]
    pub length: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SpanArgs {
    #[command(flatten)]
    pub spanning: SpanningArgs,
    /// Write the LP of the loss-attaining utility on the selected support in LP format
    #[arg(long)]
    pub lp_dump: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LossCurveArgs {
    #[command(flatten)]
    pub spanning: SpanningArgs,
    /// Comma-separated support sizes [default: 1..=q_max]
    #[arg(long)]
    pub q_values: Option<String>,
    /// Attach a subsampling interval to every point [default: false]
    #[arg(long)]
    pub with_ci: Option<bool>,
    /// Significance level for the intervals [default: 0.05]
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CiArgs {
    #[command(flatten)]
    pub spanning: SpanningArgs,
    /// Significance level [default: 0.05]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Subsample length b_T [default: floor(T^0.6)]
    #[arg(long)]
    pub subsample_length: Option<usize>,
    /// Supremum over `utilities` or single-ramp `thresholds` [default: utilities]
    #[arg(long)]
    pub supremum: Option<String>,
    /// Drop utilities placing weight on grid points below this return [default: none]
    #[arg(long)]
    pub trim_below: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DominanceArgs {
    /// Return panel CSV
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Benchmark portfolio: `ASSET` or `ASSET:w,ASSET:w,...`
    #[arg(long)]
    pub benchmark: Option<String>,
    /// Candidate dominating portfolio, same syntax as --benchmark
    #[arg(long)]
    pub candidate: Option<String>,
    /// Bootstrap replications [default: 1000]
    #[arg(long)]
    pub replications: Option<usize>,
    /// Circular block length [default: ceil(T^(1/3))]
    #[arg(long)]
    pub block_length: Option<usize>,
    /// Comma-separated thresholds [default: 10 points over the pooled range]
    #[arg(long)]
    pub z_grid: Option<String>,
    /// Recenter bootstrap differentials at the sample differential [default: true]
    #[arg(long)]
    pub recenter: Option<bool>,
}

#[derive(Debug, Args)]
pub struct BacktestArgs {
    #[command(flatten)]
    pub spanning: SpanningArgs,
    /// Training window in periods [default: 240]
    #[arg(long)]
    pub window: Option<usize>,
    /// Periods between rebalances [default: 1]
    #[arg(long)]
    pub step: Option<usize>,
    /// Proportional transaction cost [default: 0.0035]
    #[arg(long)]
    pub trc: Option<f64>,
    /// Comma-separated subset of `sparse-ssd,one-over-n` [default: both]
    #[arg(long)]
    pub strategies: Option<String>,
    /// CSV with an `RF` column aligned by date [default: zero risk-free rate]
    #[arg(long)]
    pub rf: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// CSV of strategy return series, one column per strategy
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Column used as benchmark for the UP ratio and opportunity cost [default: none]
    #[arg(long)]
    pub benchmark: Option<String>,
    /// CSV with an `RF` column aligned by date [default: zero risk-free rate]
    #[arg(long)]
    pub rf: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct McArgs {
    /// Design: 1 (independent assets) or 2 (two dominating blocks) [default: 2]
    #[arg(long)]
    pub experiment: Option<u8>,
    /// Largest support size [default: 10]
    #[arg(long)]
    pub q: Option<usize>,
    /// Observations per replication [default: 1000]
    #[arg(long)]
    pub t: Option<usize>,
    /// Replications [default: 50]
    #[arg(long)]
    pub reps: Option<usize>,
    /// Assets in experiment 1 [default: 49]
    #[arg(long)]
    pub n_assets: Option<usize>,
    /// Outcome grid points [default: 10]
    #[arg(long)]
    pub n1: Option<usize>,
    /// Mixture weight resolution [default: 5]
    #[arg(long)]
    pub n2: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RegressArgs {
    /// CSV of return series to explain, one column per series
    #[arg(long)]
    pub returns: Option<PathBuf>,
    /// CSV of factors, optionally with an `RF` column
    #[arg(long)]
    pub factors: Option<PathBuf>,
    /// Comma-separated factor columns [default: every factor column except RF]
    #[arg(long)]
    pub model: Option<String>,
    /// Standard errors: `plain` or `newey-west` [default: newey-west]
    #[arg(long)]
    pub se: Option<String>,
    /// Newey-West lags [default: floor(0.75 T^(1/3))]
    #[arg(long)]
    pub nw_lags: Option<usize>,
    /// Subtract RF from the returns when the factor file has it [default: true]
    #[arg(long)]
    pub excess: Option<bool>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .filter_map(|c| c.downcast_ref::<sparsespan_core::Error>())
        .any(|e| e.is_numerical());
    if numerical {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let result = ConfigFile::load(cli.common.config.as_deref()).and_then(|cfg| commands::dispatch(&cli, &cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
