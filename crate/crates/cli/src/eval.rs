use std::fs;
use std::path::Path;
use std::time::Instant;

use disco_core::checkpoint::{stored_dtype, Checkpoint};
use disco_core::data::StereoSample;
use disco_core::error::{Error, Result, ResultExt};
use disco_core::train::{evaluate, EvalReport, LossWeights};
use disco_core::{DType, Real, Tensor};

/// Replace the model with a synthetic prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Oracle {
    /// The ground truth itself.
    Gt,
    /// Ground truth plus one pixel.
    #[value(name = "gt+1")]
    GtPlusOne,
}

pub fn oracle_report(samples: &[StereoSample<f32>], oracle: Oracle) -> Result<EvalReport> {
    let t0 = Instant::now();
    let offset = match oracle {
        Oracle::Gt => 0.0,
        Oracle::GtPlusOne => 1.0,
    };
    let preds: Vec<Tensor<f32>> = samples.iter().map(|s| s.gt.map(|v| v + offset)).collect();
    let items: Vec<_> = preds.into_iter().zip(samples).map(|(p, s)| (p, &s.gt, s.valid.as_slice())).collect();
    let mut r = EvalReport::from_predictions(&items)?;
    r.seconds = t0.elapsed().as_secs_f64();
    Ok(r)
}

pub fn model_report(checkpoint: &Path, samples: &[StereoSample<f32>]) -> Result<EvalReport> {
    let bytes = fs::read(checkpoint).context(checkpoint.display().to_string())?;
    match stored_dtype(&bytes)? {
        DType::F32 => typed(&bytes, samples),
        DType::F64 => typed::<f64>(&bytes, &samples.iter().map(|s| s.cast()).collect::<Vec<_>>()),
    }
    .context(checkpoint.display().to_string())
}

fn typed<T: Real>(bytes: &[u8], samples: &[StereoSample<T>]) -> Result<EvalReport> {
    let model = Checkpoint::<T>::decode(bytes)?.model()?;
    if let Some(s) = samples.first() {
        let (c, _, _) = s.dims();
        if c != model.config.in_channels {
            return Err(Error::config(format!(
                "checkpoint expects {} image channels but the dataset has {c}",
                model.config.in_channels
            )));
        }
    }
    evaluate(&model, samples, Some(&LossWeights::default()))
}

/// Write `eval.txt` and `eval.json` into `out`.
pub fn write_report(report: &EvalReport, out: &Path) -> Result<()> {
    fs::create_dir_all(out).context(out.display().to_string())?;
    fs::write(out.join("eval.txt"), report.to_kv_text()).context("writing eval.txt")?;
    fs::write(out.join("eval.json"), report.to_json()?).context("writing eval.json")?;
    Ok(())
}
