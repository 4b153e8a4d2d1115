//! `drm`: fit cohort trends to repeated cross-sectional surveys.

mod commands;
mod config;
mod output;
mod svg;
mod tables;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use drm_core::verify::VerifyOptions;

use crate::commands::{FitArgs, SimulateArgs};
use crate::config::Config;

#[derive(Parser)]
#[command(name = "drm", version, about = "Cohort trend estimation from repeated cross-sectional surveys")]
struct Cli {
    /// Base directory for outputs when no explicit path is given.
    #[arg(long, global = true, env = "DRM_OUTPUT_DIR", default_value = "drm-output")]
    output_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a survey data file and write tables and figures.
    Fit(FitCmd),
    /// Write a synthetic survey data file from a preset or scenario file.
    Simulate(SimulateCmd),
    /// Check the solver against the dense reference and recovery cases.
    Verify(VerifyCmd),
    /// Re-render the figures of an output directory from its tables.
    Report {
        /// Directory written by `drm fit`.
        dir: PathBuf,
    },
}

#[derive(Args)]
struct FitCmd {
    /// Survey records (CSV with a header row).
    data: PathBuf,
    /// TOML configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory [default: the output directory itself].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fit every [r_v, r_u] pair of the configured batch.
    #[arg(long)]
    batch: bool,
    #[arg(long)]
    r_u: Option<f64>,
    #[arg(long)]
    r_v: Option<f64>,
    #[arg(long)]
    delta_u: Option<f64>,
    #[arg(long)]
    delta_v: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    damping: Option<f64>,
    /// Cells with at most this many records are dropped.
    #[arg(long)]
    n_exc: Option<usize>,
    /// 1: all cohort segments, 2: segments with two or more data cells.
    #[arg(long)]
    domain: Option<u8>,
    #[arg(long)]
    weight_by_count: bool,
    #[arg(long)]
    sex: Option<String>,
    #[arg(long)]
    delta_age: Option<usize>,
    #[arg(long)]
    delta_year: Option<usize>,
    /// Birth year of the tracked cohort.
    #[arg(long)]
    cohort: Option<i64>,
    /// Also write the stacked design matrix.
    #[arg(long)]
    dump_system: bool,
}

impl FitCmd {
    fn config(&self) -> anyhow::Result<Config> {
        let mut c = Config::load(self.config.as_deref())?;
        let it = &mut c.iteration;
        macro_rules! set {
            ($($flag:expr => $field:expr),* $(,)?) => {$( if let Some(v) = $flag.clone() { $field = v; } )*};
        }
        set!(
            self.r_u => it.r_u,
            self.r_v => it.r_v,
            self.delta_u => it.delta_u,
            self.delta_v => it.delta_v,
            self.lambda1 => it.lambda1_init,
            self.lambda2 => it.lambda2_init,
            self.max_iter => it.max_iter,
            self.damping => it.damping,
            self.n_exc => c.ingest.n_exc,
            self.domain => c.ingest.domain,
            self.delta_age => c.clusters.delta_age,
            self.delta_year => c.clusters.delta_year,
        );
        if self.sex.is_some() {
            c.ingest.sex = self.sex.clone();
        }
        if self.cohort.is_some() {
            c.output.cohort = self.cohort;
        }
        c.ingest.weight_by_count |= self.weight_by_count;
        c.output.dump_system |= self.dump_system;
        Ok(c)
    }
}

#[derive(Args)]
struct SimulateCmd {
    /// One of: stationary, linear-age, paper.
    #[arg(long)]
    preset: Option<String>,
    /// TOML scenario file.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Data file to write [default: <output dir>/<scenario name>.csv].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the true C-trends and levels to this CSV.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyCmd {
    #[arg(long, default_value_t = 20)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Relative distortion applied to the solver output, to see the checks fail.
    #[arg(long, default_value_t = 0.0)]
    perturb: f64,
    #[arg(long)]
    json: bool,
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Fit(cmd) => {
            let config = cmd.config()?;
            let out = cmd.out.clone().unwrap_or_else(|| cli.output_dir.clone());
            commands::cmd_fit(FitArgs { data: cmd.data, config, out, batch: cmd.batch })
        }
        Command::Simulate(cmd) => commands::cmd_simulate(SimulateArgs {
            preset: cmd.preset,
            scenario: cmd.scenario,
            seed: cmd.seed,
            out: cmd.out,
            truth: cmd.truth,
            output_dir: cli.output_dir,
        }),
        Command::Verify(cmd) => commands::cmd_verify(
            VerifyOptions { instances: cmd.instances, seed: cmd.seed, perturb: cmd.perturb },
            cmd.json,
        ),
        Command::Report { dir } => commands::cmd_report(&dir),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
