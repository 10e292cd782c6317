//! Run configuration: a flat `key = value` file with `run.`, `model.`,
//! `optim.` and `data.` sections.

use std::fs;
use std::path::{Path, PathBuf};

use disco_core::data::{load_manifest, mix_seed, AugmentConfig, Dataset, Layout, Loader, RdsConfig, StereoSample};
use disco_core::error::{Error, Result, ResultExt};
use disco_core::kv::KvMap;
use disco_core::model::ModelConfig;
use disco_core::train::{AdamConfig, LossWeights, TrainConfig};
use disco_core::Real;

const RUN_KEYS: [&str; 5] = ["seed", "out_dir", "checkpoint_every", "eval_every", "log_every"];
const OPTIM_KEYS: [&str; 10] = [
    "iterations",
    "batch_size",
    "lr",
    "beta1",
    "beta2",
    "eps",
    "decay_factor",
    "decay_boundaries",
    "loss_weights",
    "refined_weight",
];
const DATA_KEYS: [&str; 20] = [
    "source",
    "manifest",
    "samples",
    "rds.height",
    "rds.width",
    "rds.channels",
    "rds.density",
    "rds.layout",
    "rds.max_disparity",
    "rds.occlusion",
    "heldout.source",
    "heldout.manifest",
    "heldout.samples",
    "augment",
    "augment.crop",
    "augment.brightness",
    "augment.gamma",
    "augment.color",
    "heldout.seed",
    "heldout.crop",
];

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    /// Generated stereograms; `samples` bounds the stream.
    Rds { rds: RdsConfig, samples: Option<usize> },
    Manifest(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum HeldOut {
    Rds { rds: RdsConfig, samples: usize },
    Manifest(PathBuf),
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub train: Source,
    pub heldout: HeldOut,
    /// Center crop applied to every held-out sample.
    pub heldout_crop: Option<(usize, usize)>,
    pub augment: Option<AugmentConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Root of every random stream in the run.
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Write `ckpt_<iter>.bin` every this many iterations; 0 disables.
    pub checkpoint_every: u64,
    /// Evaluate on the held-out split every this many iterations; 0 means
    /// only at the end.
    pub eval_every: u64,
    /// Print every n-th training log line to stdout (the log file gets all).
    pub log_every: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path, over: &Overrides) -> Result<Self> {
        let text = fs::read_to_string(path).context(path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base, over).context(path.display().to_string())
    }

    /// Parse config text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path, over: &Overrides) -> Result<Self> {
        let kv = KvMap::parse(text)?;
        let unknown: Vec<String> = kv
            .keys()
            .filter(|k| !["run.", "model.", "optim.", "data."].iter().any(|p| k.starts_with(p)))
            .cloned()
            .chain(kv.unknown_keys("run.", &RUN_KEYS))
            .chain(kv.unknown_keys("optim.", &OPTIM_KEYS))
            .chain(kv.unknown_keys("data.", &DATA_KEYS))
            .collect();
        if let Some(k) = unknown.first() {
            return Err(Error::config(format!("unknown key {k}")));
        }
        let run = kv.section("run");
        let seed = match over.seed {
            Some(s) => s,
            None => run.require::<u64>("seed")?,
        };
        let model_kv = kv.section("model");
        let mut model = ModelConfig::from_kv(&model_kv, ModelConfig::default())?;
        if !model_kv.contains("seed") {
            model.seed = seed;
        }
        let out_dir = match &over.out_dir {
            Some(p) => p.clone(),
            None => base.join(run.get_or("out_dir", "out".to_string())?),
        };
        Ok(RunConfig {
            seed,
            out_dir,
            checkpoint_every: run.get_or("checkpoint_every", 0)?,
            eval_every: run.get_or("eval_every", 0)?,
            log_every: run.get_or("log_every", 1)?.max(1),
            model,
            train: train_config(&kv.section("optim"))?,
            data: data_config(&kv.section("data"), base, seed)?,
        })
    }

    /// The fully resolved configuration as config text.
    pub fn to_text(&self) -> String {
        let mut kv = self.model.to_kv().with_prefix("model");
        kv.set("run.seed", self.seed);
        kv.set("run.out_dir", self.out_dir.display());
        kv.set("run.checkpoint_every", self.checkpoint_every);
        kv.set("run.eval_every", self.eval_every);
        kv.set("run.log_every", self.log_every);
        let t = &self.train;
        kv.set("optim.iterations", t.iterations);
        kv.set("optim.batch_size", t.batch_size);
        kv.set("optim.lr", t.lr);
        kv.set("optim.beta1", t.adam.beta1);
        kv.set("optim.beta2", t.adam.beta2);
        kv.set("optim.eps", t.adam.eps);
        kv.set("optim.decay_factor", t.decay_factor);
        kv.set_list("optim.decay_boundaries", &t.schedule().boundaries);
        kv.set_list("optim.loss_weights", &t.weights.scales);
        kv.set("optim.refined_weight", t.weights.refined);
        kv.to_text()
    }
}

fn train_config(kv: &KvMap) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        iterations: kv.get_or("iterations", d.iterations)?,
        batch_size: kv.get_or("batch_size", d.batch_size)?,
        lr: kv.get_or("lr", d.lr)?,
        adam: AdamConfig {
            beta1: kv.get_or("beta1", d.adam.beta1)?,
            beta2: kv.get_or("beta2", d.adam.beta2)?,
            eps: kv.get_or("eps", d.adam.eps)?,
        },
        decay_factor: kv.get_or("decay_factor", d.decay_factor)?,
        decay_boundaries: kv.get_list("decay_boundaries")?,
        weights: LossWeights {
            scales: kv.get_list("loss_weights")?.unwrap_or(d.weights.scales),
            refined: kv.get_or("refined_weight", d.weights.refined)?,
        },
    };
    cfg.validate()?;
    Ok(cfg)
}

fn range(kv: &KvMap, key: &str, default: (f64, f64)) -> Result<(f64, f64)> {
    match kv.get_list::<f64>(key)? {
        None => Ok(default),
        Some(v) if v.len() == 2 => Ok((v[0], v[1])),
        Some(_) => Err(Error::config(format!("data.{key} needs two values `lo, hi`"))),
    }
}

fn data_config(kv: &KvMap, base: &Path, seed: u64) -> Result<DataConfig> {
    let d = RdsConfig::default();
    let rds = RdsConfig {
        height: kv.get_or("rds.height", d.height)?,
        width: kv.get_or("rds.width", d.width)?,
        channels: kv.get_or("rds.channels", d.channels)?,
        density: kv.get_or("rds.density", d.density)?,
        layout: match kv.raw("rds.layout") {
            Some(s) => Layout::parse(s)?,
            None => d.layout,
        },
        max_disparity: kv.get_or("rds.max_disparity", d.max_disparity)?,
        occlusion: kv.get_or("rds.occlusion", d.occlusion)?,
        seed: mix_seed(seed, 1),
    };
    let path = |key: &str| -> Result<PathBuf> { Ok(base.join(kv.require::<String>(key)?)) };
    let source = kv.get_or("source", "rds".to_string())?;
    let train = match source.as_str() {
        "rds" => {
            rds.validate()?;
            Source::Rds { rds: rds.clone(), samples: kv.get("samples")? }
        }
        "manifest" => Source::Manifest(path("manifest")?),
        other => return Err(Error::config(format!("data.source must be rds or manifest, got {other:?}"))),
    };
    let default_heldout = if source == "rds" { "rds" } else { "none" };
    let heldout = match kv.get_or("heldout.source", default_heldout.to_string())?.as_str() {
        "rds" => {
            rds.validate()?;
            let hseed = kv.get_or("heldout.seed", mix_seed(seed, 2))?;
            HeldOut::Rds { rds: rds.with_seed(hseed), samples: kv.get_or("heldout.samples", 32)? }
        }
        "manifest" => HeldOut::Manifest(path("heldout.manifest")?),
        "none" => HeldOut::None,
        other => return Err(Error::config(format!("data.heldout.source must be rds, manifest or none, got {other:?}"))),
    };
    let size = |key: &str| -> Result<Option<(usize, usize)>> {
        match kv.get_list::<usize>(key)? {
            None => Ok(None),
            Some(v) if v.len() == 2 && v[0] > 0 && v[1] > 0 => Ok(Some((v[0], v[1]))),
            Some(_) => Err(Error::config(format!("data.{key} needs positive `height, width`"))),
        }
    };
    let heldout_crop = size("heldout.crop")?;
    let augment = if kv.get_or("augment", false)? {
        let a = AugmentConfig::default();
        let crop = size("augment.crop")?.or(a.crop);
        let cfg = AugmentConfig {
            crop,
            brightness: range(kv, "augment.brightness", a.brightness)?,
            gamma: range(kv, "augment.gamma", a.gamma)?,
            color: range(kv, "augment.color", a.color)?,
        };
        cfg.validate()?;
        Some(cfg)
    } else {
        None
    };
    Ok(DataConfig { train, heldout, heldout_crop, augment })
}

impl DataConfig {
    pub fn loader<T: Real>(&self, batch_size: usize, seed: u64) -> Result<Loader<T>> {
        let dataset = match &self.train {
            Source::Rds { rds, samples } => Dataset::Generated { rds: rds.clone(), len: *samples },
            Source::Manifest(p) => Dataset::Samples(load_manifest(p)?.iter().map(|s| s.cast()).collect()),
        };
        let loader = Loader::new(dataset, batch_size, mix_seed(seed, 3))?;
        Ok(match &self.augment {
            Some(a) => loader.with_augment(a.clone()),
            None => loader,
        })
    }

    pub fn heldout<T: Real>(&self) -> Result<Vec<StereoSample<T>>> {
        let samples = match &self.heldout {
            HeldOut::Rds { rds, samples } => Dataset::Generated { rds: rds.clone(), len: Some(*samples) }.take(*samples)?,
            HeldOut::Manifest(p) => load_manifest(p)?.iter().map(|s| s.cast()).collect(),
            HeldOut::None => Vec::new(),
        };
        let Some((ch, cw)) = self.heldout_crop else { return Ok(samples) };
        samples
            .iter()
            .map(|s| {
                let (_, h, w) = s.dims();
                if ch > h || cw > w {
                    return Err(Error::config(format!("data.heldout.crop {ch}x{cw} exceeds a {h}x{w} sample")));
                }
                s.crop((h - ch) / 2, (w - cw) / 2, ch, cw)
            })
            .collect()
    }
}
