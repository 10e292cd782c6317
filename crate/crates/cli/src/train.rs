use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use disco_core::checkpoint::Checkpoint;
use disco_core::error::{Error, Result, ResultExt};
use disco_core::model::Model;
use disco_core::train::{evaluate, Trainer};
use disco_core::{DType, Real};

use crate::config::RunConfig;

/// Summary printed as the last line of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub iterations: u64,
    /// Best held-out EPE and the iteration it was reached at.
    pub best: Option<(f64, u64)>,
    pub final_checkpoint: PathBuf,
}

impl TrainSummary {
    pub fn line(&self) -> String {
        match self.best {
            Some((epe, it)) => format!(
                "done iterations={} best_epe={epe:.4} best_iter={it} checkpoint={}",
                self.iterations,
                self.final_checkpoint.display()
            ),
            None => format!("done iterations={} best_epe=n/a checkpoint={}", self.iterations, self.final_checkpoint.display()),
        }
    }
}

pub fn run(cfg: &RunConfig, resume: Option<&Path>) -> Result<TrainSummary> {
    match cfg.model.precision {
        DType::F32 => run_typed::<f32>(cfg, resume),
        DType::F64 => run_typed::<f64>(cfg, resume),
    }
}

fn run_typed<T: Real>(cfg: &RunConfig, resume: Option<&Path>) -> Result<TrainSummary> {
    let out = &cfg.out_dir;
    fs::create_dir_all(out).context(out.display().to_string())?;
    fs::write(out.join("config.txt"), cfg.to_text()).context("writing resolved config")?;

    let mut trainer = match resume {
        Some(p) => {
            let ck = Checkpoint::<T>::load(p)?;
            if ck.config != cfg.model {
                return Err(Error::config(format!("{} was trained with a different model configuration", p.display())));
            }
            ck.trainer(cfg.train.clone())?
        }
        None => Trainer::new(Model::new(cfg.model.clone())?, cfg.train.clone())?,
    };
    let loader = cfg.data.loader::<T>(cfg.train.batch_size, cfg.seed)?;
    let heldout = cfg.data.heldout::<T>()?;

    let log_path = out.join("train.log");
    let mut log = if resume.is_some() {
        fs::OpenOptions::new().append(true).create(true).open(&log_path)
    } else {
        File::create(&log_path)
    }
    .context(log_path.display().to_string())?;
    let mut emit = |line: &str, echo: bool| -> Result<()> {
        writeln!(log, "{line}").context("writing train.log")?;
        if echo {
            println!("{line}");
        }
        Ok(())
    };

    let save = |trainer: &Trainer<T>, name: &str| -> Result<PathBuf> {
        let path = out.join(name);
        let mut ck = Checkpoint::from_trainer(trainer);
        ck.extra.set("run.seed", cfg.seed);
        ck.save(&path)?;
        Ok(path)
    };

    let total = cfg.train.iterations;
    let mut best: Option<(f64, u64)> = None;
    while trainer.iteration < total {
        let batch = loader.batch(trainer.iteration)?;
        let report = trainer.step(&batch)?;
        let done = trainer.iteration;
        emit(&report.log_line(), done % cfg.log_every == 0 || done == total)?;
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
            save(&trainer, &format!("ckpt_{done:06}.bin"))?;
        }
        let eval_now = done == total || (cfg.eval_every > 0 && done % cfg.eval_every == 0);
        if eval_now && !heldout.is_empty() {
            let r = evaluate(&trainer.model, &heldout, None).context(format!("held-out evaluation at iteration {done}"))?;
            emit(&format!("eval iter={done} epe={:.4} three_pe={:.2}", r.epe, r.three_pe), true)?;
            if best.is_none_or(|(e, _)| r.epe < e) {
                best = Some((r.epe, done));
                save(&trainer, "best.bin")?;
            }
        }
    }
    if total == 0 && !heldout.is_empty() {
        let r = evaluate(&trainer.model, &heldout, None)?;
        best = Some((r.epe, 0));
    }
    let final_checkpoint = save(&trainer, "final.bin")?;
    let summary = TrainSummary { iterations: trainer.iteration, best, final_checkpoint };
    emit(&summary.line(), true)?;
    Ok(summary)
}
