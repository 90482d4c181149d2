//! The `dualcon` command line.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use dualcon_core::mi_oracle::{sweep, SweepConfig};
use dualcon_core::trainer::evaluate;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::formats::{self, sig};
use crate::gradcheck::gradient_suite;
use crate::pipeline::{self, Prepared};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const SWEEP_FILE: &str = "bound_sweep.csv";
pub const GRAD_FILE: &str = "grad_check.csv";
pub const FEATURES_FILE: &str = "features.csv";
pub const DATA_CONFIG_FILE: &str = "data.cfg";
pub const TRAIN_DATA_FILE: &str = "train.csv";
pub const TEST_DATA_FILE: &str = "test.csv";

#[derive(Parser, Debug)]
#[command(
    name = "dualcon",
    version,
    about = "Double-contrast semi-supervised training and checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value`, applied after the config file (repeatable).
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Directory for every file the command writes.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train and write metrics.csv and checkpoint.bin.
    Train(Common),
    /// Print the test accuracy of a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to checkpoint.bin in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Check the contrast-loss bound on random discrete joints.
    VerifyBound {
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        joints: usize,
        #[arg(long, default_value_t = 5)]
        max_outcomes: usize,
        #[arg(long, default_value_t = 4)]
        max_n: usize,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Finite-difference check of every loss and model gradient.
    GradCheck {
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 1e-5)]
        h: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write the test-set features of a checkpoint.
    ExportFeatures {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write the effective data config and the generated samples.
    MakeData(Common),
}

/// Parses `args` (program name first) and runs the command. Human-readable
/// results go to `out`, diagnostics to stderr. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            let code = e.exit_code();
            if code == 2 {
                eprintln!("run `dualcon --help` for usage");
            }
            code
        }
    }
}

fn say(out: &mut dyn Write, text: String) -> Result<()> {
    writeln!(out, "{text}").map_err(|e| Error::io("<stdout>", e))
}

fn out_dir(dir: &Path) -> Result<&Path> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(dir)
}

fn load(common: &Common) -> Result<RunConfig> {
    RunConfig::load(common.config.as_deref(), &common.overrides)
}

fn checkpoint_for(
    common: &Common,
    explicit: &Option<PathBuf>,
) -> Result<dualcon_core::model::ModelParams> {
    let path = explicit
        .clone()
        .unwrap_or_else(|| common.out.join(CHECKPOINT_FILE));
    checkpoint::load(&path)
}

fn check_width(params: &dualcon_core::model::ModelParams, prepared: &Prepared) -> Result<()> {
    let (want, got) = (prepared.train.sample_width(), params.dims.input);
    if want != got {
        return Err(Error::Config(format!(
            "checkpoint expects {got} input values per sample but the data has {want}"
        )));
    }
    Ok(())
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Train(common) => {
            let cfg = load(&common)?;
            let dir = out_dir(&common.out)?;
            let prepared = pipeline::prepare(&cfg)?;
            let result = pipeline::train_to_csv(&cfg, &prepared, &dir.join(METRICS_FILE))?;
            checkpoint::save(&result.params, &dir.join(CHECKPOINT_FILE))?;
            let acc = evaluate(&result.params, &prepared.test)?;
            say(out, format!("test_acc = {}", sig(acc, 9)))
        }
        Command::Eval { common, checkpoint } => {
            let cfg = load(&common)?;
            let params = checkpoint_for(&common, &checkpoint)?;
            let prepared = pipeline::prepare(&cfg)?;
            check_width(&params, &prepared)?;
            let acc = evaluate(&params, &prepared.test)?;
            say(out, format!("test_acc = {}", sig(acc, 9)))
        }
        Command::VerifyBound {
            out: dir,
            joints,
            max_outcomes,
            max_n,
            tol,
            seed,
        } => {
            let rows = sweep(&SweepConfig {
                joints,
                max_outcomes,
                max_n,
                tol,
                seed,
            })?;
            let dir = out_dir(&dir)?;
            formats::write_text(&dir.join(SWEEP_FILE), &formats::render_sweep(&rows))?;
            let failed = rows.iter().filter(|r| !r.report.pass).count();
            if let Some(r) = rows.iter().find(|r| !r.report.pass) {
                return Err(Error::Verification(format!(
                    "{failed} of {} joints violate the bound; first: seed {} ({}x{}, n = {}), gap {}",
                    rows.len(),
                    r.seed,
                    r.m_r,
                    r.m_s,
                    r.n,
                    sig(r.report.gap, 17)
                )));
            }
            let min_gap = rows
                .iter()
                .map(|r| r.report.gap)
                .fold(f64::INFINITY, f64::min);
            say(
                out,
                format!(
                    "{} joints pass, smallest gap {}",
                    rows.len(),
                    sig(min_gap, 6)
                ),
            )
        }
        Command::GradCheck {
            out: dir,
            h,
            tol,
            seed,
        } => {
            let cases = gradient_suite(seed, h, tol)?;
            let mut csv = String::from("case,max_rel_error,compared,excluded,pass\n");
            for c in &cases {
                let r = &c.report;
                csv.push_str(&format!(
                    "\"{}\",{},{},{},{}\n",
                    c.name,
                    sig(r.max_rel_error, 6),
                    r.compared,
                    r.excluded,
                    r.pass
                ));
            }
            let dir = out_dir(&dir)?;
            formats::write_text(&dir.join(GRAD_FILE), &csv)?;
            if let Some(c) = cases.iter().find(|c| !c.report.pass) {
                return Err(Error::Verification(format!(
                    "gradient check {:?}: max relative error {} at coordinate {:?}",
                    c.name,
                    sig(c.report.max_rel_error, 6),
                    c.report.non_finite_at.or(c.report.worst_index)
                )));
            }
            let worst = cases
                .iter()
                .map(|c| c.report.max_rel_error)
                .fold(0.0, f64::max);
            say(
                out,
                format!(
                    "{} gradient checks pass, worst relative error {}",
                    cases.len(),
                    sig(worst, 3)
                ),
            )
        }
        Command::ExportFeatures { common, checkpoint } => {
            let cfg = load(&common)?;
            let params = checkpoint_for(&common, &checkpoint)?;
            let prepared = pipeline::prepare(&cfg)?;
            check_width(&params, &prepared)?;
            let dir = out_dir(&common.out)?;
            let path = dir.join(FEATURES_FILE);
            formats::write_text(&path, &formats::render_features(&params, &prepared.test)?)?;
            say(out, format!("wrote {}", path.display()))
        }
        Command::MakeData(common) => {
            let cfg = load(&common)?;
            let prepared = pipeline::prepare(&cfg)?;
            let dir = out_dir(&common.out)?;
            let text: String = cfg
                .pairs()
                .into_iter()
                .filter(|(k, _)| k.starts_with("data.") || *k == "seed")
                .map(|(k, v)| format!("{k} = {v}\n"))
                .collect();
            formats::write_text(&dir.join(DATA_CONFIG_FILE), &text)?;
            formats::write_text(
                &dir.join(TRAIN_DATA_FILE),
                &formats::render_dataset(&prepared.train),
            )?;
            formats::write_text(
                &dir.join(TEST_DATA_FILE),
                &formats::render_dataset(&prepared.test),
            )?;
            say(
                out,
                format!(
                    "wrote {} training and {} test samples to {}",
                    prepared.train.len(),
                    prepared.test.len(),
                    dir.display()
                ),
            )
        }
    }
}
