use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use coxhoa::Error;
use coxhoa_cli::commands::{
    cmd_ci, cmd_simstudy, cmd_test, error_report, exit_code, render, write_json, CiArgs, DataArgs,
    SimstudyOverrides, TestArgs, DEFAULT_SEED,
};
use coxhoa_cli::study::Method;

#[derive(Parser)]
#[command(name = "coxhoa", version, about = "Cox regression inference beyond first order")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test ψ = ψ0 on one dataset.
    Test(TestCmd),
    /// Bootstrap confidence interval by test inversion.
    Ci(CiCmd),
    /// Simulation study from a TOML or JSON config.
    Simstudy(SimCmd),
}

#[derive(Args)]
struct DataFlags {
    /// CSV with header `time,status,<covariates...>[,stratum]`.
    #[arg(long)]
    data: PathBuf,
    /// Interest covariate: name or 0-based index.
    #[arg(long, default_value = "0")]
    psi: String,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    psi0: f64,
}

impl DataFlags {
    fn into_args(self) -> DataArgs {
        DataArgs {
            data: self.data,
            psi: self.psi,
            psi0: self.psi0,
        }
    }
}

#[derive(Args)]
struct TestCmd {
    #[command(flatten)]
    data: DataFlags,
    /// Comma-separated: first-order, bootstrap, rstar, fixed-riskset, all.
    #[arg(long, default_value = "first-order")]
    method: String,
    #[arg(long = "B", default_value_t = coxhoa::bootstrap::DEFAULT_B)]
    b: usize,
    #[arg(long = "R", default_value_t = coxhoa::hoa::DEFAULT_R)]
    r: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CiCmd {
    #[command(flatten)]
    data: DataFlags,
    /// Per-tail level; the interval has coverage 1 − 2α.
    #[arg(long, default_value_t = 0.025)]
    alpha: f64,
    #[arg(long = "B", default_value_t = coxhoa::bootstrap::DEFAULT_B)]
    b: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimCmd {
    #[arg(long)]
    config: PathBuf,
    #[arg(long = "B")]
    b: Option<usize>,
    #[arg(long = "R")]
    r: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    method: Option<String>,
    /// Output directory for report.json, tail_table.csv, records.csv and the checkpoint.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Test(c) => {
            let args = TestArgs {
                data: c.data.into_args(),
                methods: Method::parse_list(&c.method)?,
                b: c.b,
                r: c.r,
                seed: c.seed,
            };
            emit(&cmd_test(&args)?, c.out)
        }
        Command::Ci(c) => {
            let args = CiArgs {
                data: c.data.into_args(),
                alpha: c.alpha,
                b: c.b,
                seed: c.seed,
            };
            emit(&cmd_ci(&args)?, c.out)
        }
        Command::Simstudy(c) => {
            let overrides = SimstudyOverrides {
                b: c.b,
                r: c.r,
                seed: c.seed,
                methods: c.method.as_deref().map(Method::parse_list).transpose()?,
            };
            let report = cmd_simstudy(&c.config, &overrides, c.out.as_deref())?;
            if c.out.is_none() {
                print!("{}", render(&report));
            }
            Ok(())
        }
    }
}

fn emit(report: &serde_json::Value, out: Option<PathBuf>) -> Result<(), Error> {
    match out {
        Some(path) => write_json(report, &path),
        None => {
            print!("{}", render(report));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprint!("{}", render(&error_report(&e)));
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
