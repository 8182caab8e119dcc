//! `twqr`: quantile regression with two-way cluster-robust inference.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 numerical failure.

mod fit;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use twqr::crve::CrveKind;
use twqr::montecarlo::{nongaussian_demo, McError};
use twqr::simulate::{run_grid, write_report_csv, SimulateConfig};

use fit::{run_fit, to_csv, FitRequest};

#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub fn input(message: String) -> Self {
        CliError { code: 2, message }
    }

    pub fn numeric(message: String) -> Self {
        CliError { code: 3, message }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::input(format!("{}: {e}", path.display()))
    }
}

impl From<McError> for CliError {
    fn from(e: McError) -> Self {
        match e {
            McError::InvalidConfig(_) => CliError::input(e.to_string()),
            other => CliError::numeric(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "twqr", version, about = "Quantile regression with two-way cluster-robust inference")]
struct Cli {
    /// Worker threads for parallel replications.
    #[arg(long, global = true, env = "TWQR_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a quantile regression on a long-format CSV panel and test each coefficient.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        tau: f64,
        /// Variance estimator; repeatable (ctw, cg, ch, ci, ctw2).
        #[arg(long = "crve", default_value = "ctw")]
        crve: Vec<CrveKind>,
        /// Kernel bandwidth; the rule of thumb is used when omitted.
        #[arg(long, allow_negative_numbers = true)]
        bandwidth: Option<f64>,
        /// Null value for every coefficient, or one per coefficient (comma separated).
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        null: Vec<f64>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        #[arg(long, default_value = "g")]
        g_col: String,
        #[arg(long, default_value = "h")]
        h_col: String,
        #[arg(long, default_value = "y")]
        y_col: String,
        /// Regressor columns; defaults to every other column.
        #[arg(long = "x-col")]
        x_cols: Vec<String>,
        /// Prepend a constant regressor.
        #[arg(long)]
        intercept: bool,
    },
    /// Run rejection-frequency experiments from a JSON config.
    Simulate {
        config: PathBuf,
        /// Output directory for report.csv and report.json.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sample the scalar median regression with a product-normal limit.
    DemoNongaussian {
        #[arg(long = "G", default_value_t = 100)]
        g: usize,
        #[arg(long = "H", default_value_t = 100)]
        h: usize,
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        c: f64,
        #[arg(long, default_value_t = 2000)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for samples.csv and summary.json.
        #[arg(long)]
        out: PathBuf,
    },
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("serializable");
    v.push(b'\n');
    v
}

#[derive(Serialize)]
struct DemoSummaryFile<'a> {
    #[serde(rename = "G")]
    g: usize,
    #[serde(rename = "H")]
    h: usize,
    c: f64,
    reps: usize,
    seed: u64,
    failures: usize,
    summary: &'a twqr::montecarlo::DemoSummary,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit { input, tau, crve, bandwidth, null, format, g_col, h_col, y_col, x_cols, intercept } => {
            let req = FitRequest { input, tau, kinds: crve, bandwidth, null, g_col, h_col, y_col, x_cols, intercept };
            let resp = run_fit(&req)?;
            let out = match format {
                Format::Json => json_bytes(&resp),
                Format::Csv => to_csv(&resp).into_bytes(),
            };
            std::io::stdout().write_all(&out).map_err(|e| CliError::input(e.to_string()))
        }
        Command::Simulate { config, out, seed } => {
            let text = fs::read_to_string(&config).map_err(|e| CliError::io(&config, e))?;
            let mut cfg = SimulateConfig::from_json(&text)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.design_points()?;
            let reports = run_grid(&cfg)?;
            create_dir(&out)?;
            let mut csv = Vec::new();
            write_report_csv(&reports, &mut csv).map_err(|e| CliError::input(e.to_string()))?;
            write_file(&out.join("report.csv"), &csv)?;
            write_file(&out.join("report.json"), &json_bytes(&reports))?;
            for (i, r) in reports.iter().enumerate() {
                if r.failures > 0 {
                    eprintln!("design {i}: {} of {} replications failed", r.failures, r.config.reps);
                }
            }
            Ok(())
        }
        Command::DemoNongaussian { g, h, c, reps, seed, out } => {
            let demo = nongaussian_demo(g, h, c, reps, seed)?;
            create_dir(&out)?;
            let mut samples = String::from("empirical,reference\n");
            for (e, r) in demo.empirical.iter().zip(&demo.reference) {
                samples.push_str(&format!("{e:?},{r:?}\n"));
            }
            write_file(&out.join("samples.csv"), samples.as_bytes())?;
            let summary = DemoSummaryFile {
                g,
                h,
                c,
                reps,
                seed,
                failures: demo.failures,
                summary: &demo.summary,
            };
            write_file(&out.join("summary.json"), &json_bytes(&summary))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.threads {
        Some(0) => Err(CliError::input("--threads must be positive".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| run(cli)),
            Err(e) => Err(CliError::input(e.to_string())),
        },
        None => run(cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
