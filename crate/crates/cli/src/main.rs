use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use disco_cli::config::{HeldOut, Overrides, RunConfig};
use disco_cli::eval::{self, Oracle};
use disco_cli::infer::{self, InferArgs};
use disco_cli::{exit_code, report, train, GRADCHECK_FAILED};
use disco_core::data::load_manifest;
use disco_core::error::{Error, Result};
use disco_core::gradcheck;
use disco_core::model::ModelConfig;
use disco_core::train::CameraParams;

/// Stereo disparity estimation: training, evaluation and inference.
#[derive(Parser)]
#[command(name = "disco", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes checkpoints and train.log into the output directory.
    Train {
        #[command(flatten)]
        common: Common,
        /// Overrides `run.out_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Compute EPE and 3PE on the held-out split or a manifest.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Directory for eval.txt and eval.json.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, required_unless_present = "oracle")]
        checkpoint: Option<PathBuf>,
        /// Score a synthetic prediction instead of a model.
        #[arg(long, value_enum)]
        oracle: Option<Oracle>,
        /// Dataset manifest; defaults to the config's held-out split.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Predict a disparity map for one stereo pair.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        left: PathBuf,
        #[arg(long)]
        right: PathBuf,
        /// Output disparity PFM.
        #[arg(long)]
        out: PathBuf,
        /// Pad inputs to a multiple of 16 and crop the result back.
        #[arg(long)]
        auto_pad: bool,
        /// Focal length in pixels; with --baseline also writes depth.
        #[arg(long, requires = "baseline")]
        focal: Option<f64>,
        /// Baseline in meters.
        #[arg(long, requires = "focal")]
        baseline: Option<f64>,
        /// Depth PFM path; defaults to <out>.depth.pfm.
        #[arg(long)]
        depth_out: Option<PathBuf>,
    },
    /// Finite-difference gradient checks in double precision.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Op name or "all".
        #[arg(long, default_value = "all")]
        scope: String,
        #[arg(long, default_value_t = gradcheck::SEEDS)]
        seeds: u64,
        /// Scale conv2d weight gradients (self-test of the checker).
        #[arg(long, hide = true)]
        perturb: Option<f64>,
    },
    /// Receptive fields of the dilated blocks.
    Rf {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common, out: Option<PathBuf>) -> Result<RunConfig> {
    let path = common.config.as_deref().ok_or_else(|| Error::config("--config is required"))?;
    RunConfig::load(path, &Overrides { seed: common.seed, out_dir: out })
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Train { common, out, resume } => {
            let cfg = load_config(&common, out)?;
            train::run(&cfg, resume.as_deref())?;
        }
        Command::Eval { common, out, checkpoint, oracle, manifest } => {
            let cfg = match &common.config {
                Some(_) => Some(load_config(&common, out.clone())?),
                None => None,
            };
            let samples = match (&manifest, &cfg) {
                (Some(m), _) => load_manifest(m)?,
                (None, Some(c)) => match c.data.heldout {
                    HeldOut::None => return Err(Error::config("config has no held-out split; pass --manifest")),
                    _ => c.data.heldout::<f32>()?,
                },
                (None, None) => return Err(Error::config("eval needs --config or --manifest")),
            };
            let report = match (oracle, checkpoint) {
                (Some(o), _) => eval::oracle_report(&samples, o)?,
                (None, Some(ck)) => eval::model_report(&ck, &samples)?,
                (None, None) => unreachable!("clap requires one of --checkpoint, --oracle"),
            };
            print!("{}", report.to_kv_text());
            let out_dir = out.or_else(|| cfg.map(|c| c.out_dir));
            if let Some(dir) = out_dir {
                eval::write_report(&report, &dir)?;
            }
        }
        Command::Infer { common: _, checkpoint, left, right, out, auto_pad, focal, baseline, depth_out } => {
            let camera = match (focal, baseline) {
                (Some(f), Some(b)) => Some(CameraParams::new(f, b)?),
                _ => None,
            };
            let args = InferArgs { checkpoint, left, right, out, auto_pad, camera, depth_out };
            for p in infer::run(&args)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Gradcheck { common: _, scope, seeds, perturb } => {
            let rows = gradcheck::run(&scope, seeds, perturb)?;
            print!("{}", report::gradcheck_table(&rows));
            if !rows.iter().all(|r| r.passed()) {
                return Ok(GRADCHECK_FAILED);
            }
        }
        Command::Rf { common } => {
            let model = match &common.config {
                Some(p) => rf_model(p, common.seed)?,
                None => ModelConfig::default(),
            };
            print!("{}", report::receptive_fields(&model));
        }
    }
    Ok(0)
}

fn rf_model(path: &Path, seed: Option<u64>) -> Result<ModelConfig> {
    // The seed does not affect receptive fields; supply one so configs
    // without run.seed are still accepted here.
    Ok(RunConfig::load(path, &Overrides { seed: seed.or(Some(0)), out_dir: None })?.model)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
