//! Binary checkpoint container.
//!
//! ```text
//! magic      8 bytes  "DISCOCKP"
//! version    u32      1
//! meta       u32 length + UTF-8 key = value text (model.* keys plus extras)
//! dtype      u8       0 = f32, 1 = f64
//! params     table
//! optimizer  u8 flag; when 1: u64 step, then the m table and the v table
//! iteration  u64
//! checksum   u64      FNV-1a over every preceding byte
//!
//! table      u32 count, then per entry: u16 name length, name bytes,
//!            u8 rank, u64 per dim, values little-endian
//! ```
//! All integers are little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result, ResultExt};
use crate::kv::KvMap;
use crate::model::{Model, ModelConfig};
use crate::params::ParamStore;
use crate::tensor::{DType, Real, Tensor};
use crate::train::{Adam, TrainConfig, Trainer};

const MAGIC: &[u8; 8] = b"DISCOCKP";
const VERSION: u32 = 1;

/// Saved Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState<T> {
    pub step: u64,
    pub m: ParamStore<T>,
    pub v: ParamStore<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub config: ModelConfig,
    /// Additional metadata stored next to the model config.
    pub extra: KvMap,
    pub params: ParamStore<T>,
    pub optim: Option<OptimState<T>>,
    /// Training steps completed.
    pub iteration: u64,
}

impl<T: Real> Checkpoint<T> {
    pub fn from_model(model: &Model<T>) -> Self {
        Checkpoint {
            config: model.config.clone(),
            extra: KvMap::new(),
            params: model.params.clone(),
            optim: None,
            iteration: 0,
        }
    }

    pub fn from_trainer(t: &Trainer<T>) -> Self {
        Checkpoint {
            optim: Some(OptimState { step: t.optim.step, m: t.optim.m.clone(), v: t.optim.v.clone() }),
            iteration: t.iteration,
            ..Self::from_model(&t.model)
        }
    }

    /// The model, with every parameter checked against the config's layout.
    pub fn model(&self) -> Result<Model<T>> {
        Model::from_parts(self.config.clone(), self.params.clone())
    }

    /// Resume training. Optimizer moments, when present, must match the
    /// parameter layout.
    pub fn trainer(&self, config: TrainConfig) -> Result<Trainer<T>> {
        let model = self.model()?;
        let mut t = Trainer::new(model, config)?;
        if let Some(o) = &self.optim {
            for store in [&o.m, &o.v] {
                for (name, m) in store.iter() {
                    match t.model.params.get(name) {
                        Some(p) if p.shape() == m.shape() => {}
                        _ => return Err(Error::config(format!("optimizer state for {name} does not match the model"))),
                    }
                }
            }
            t.optim = Adam { config: t.config.adam, m: o.m.clone(), v: o.v.clone(), step: o.step };
        }
        t.iteration = self.iteration;
        Ok(t)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let mut meta = self.config.to_kv().with_prefix("model");
        meta.extend(self.extra.clone());
        let text = meta.to_text();
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.push(match T::DTYPE {
            DType::F32 => 0,
            DType::F64 => 1,
        });
        write_table(&mut out, &self.params);
        match &self.optim {
            None => out.push(0),
            Some(o) => {
                out.push(1);
                out.extend_from_slice(&o.step.to_le_bytes());
                write_table(&mut out, &o.m);
                write_table(&mut out, &o.v);
            }
        }
        out.extend_from_slice(&self.iteration.to_le_bytes());
        let sum = fnv(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        out
    }

    /// Decode, converting stored values to `T` when the file holds the other
    /// precision. Parameters are validated against the stored config.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 12 {
            return Err(Error::parse(bytes.len(), "file too short for a checkpoint"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
        let mut r = Reader { bytes: body, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::parse(0, "not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::parse(8, format!("unsupported checkpoint version {version}")));
        }
        if fnv(body) != stored {
            return Err(Error::parse(body.len(), "checksum mismatch (file is corrupt or truncated)"));
        }
        let len = r.u32()? as usize;
        let at = r.pos;
        let text = std::str::from_utf8(r.take(len)?).map_err(|_| Error::parse(at, "metadata is not UTF-8"))?;
        let meta = KvMap::parse(text)?;
        let config = ModelConfig::from_kv(&meta.section("model"), ModelConfig::default())?;
        let mut extra = KvMap::new();
        for k in meta.keys().filter(|k| !k.starts_with("model.")) {
            extra.set(k.clone(), meta.raw(k).expect("listed key"));
        }
        let at = r.pos;
        let dtype = match r.u8()? {
            0 => DType::F32,
            1 => DType::F64,
            other => return Err(Error::parse(at, format!("unknown dtype tag {other}"))),
        };
        let params = r.table(dtype)?;
        let at = r.pos;
        let optim = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                Some(OptimState { step, m: r.table(dtype)?, v: r.table(dtype)? })
            }
            other => return Err(Error::parse(at, format!("bad optimizer flag {other}"))),
        };
        let iteration = r.u64()?;
        if r.pos != body.len() {
            return Err(Error::parse(r.pos, "trailing bytes before checksum"));
        }
        let ck = Checkpoint { config, extra, params, optim, iteration };
        ck.model()?;
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        // Write-then-rename so an interrupted save never leaves a torn file.
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.encode()).context(tmp.display().to_string())?;
        fs::rename(&tmp, path).context(path.display().to_string())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).context(path.display().to_string())?;
        Self::decode(&bytes).context(path.display().to_string())
    }
}

/// Precision a checkpoint file was written in, without decoding it.
pub fn stored_dtype(bytes: &[u8]) -> Result<DType> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::parse(0, "not a checkpoint (bad magic)"));
    }
    r.u32()?;
    let len = r.u32()? as usize;
    r.take(len)?;
    let at = r.pos;
    match r.u8()? {
        0 => Ok(DType::F32),
        1 => Ok(DType::F64),
        other => Err(Error::parse(at, format!("unknown dtype tag {other}"))),
    }
}

fn write_table<T: Real>(out: &mut Vec<u8>, store: &ParamStore<T>) {
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            v.write_le(out);
        }
    }
}

fn fnv(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf29ce484222325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::parse(self.pos, format!("need {n} bytes, {} left", self.bytes.len() - self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn table<T: Real>(&mut self, dtype: DType) -> Result<ParamStore<T>> {
        let n = self.u32()?;
        let mut store = ParamStore::new();
        for _ in 0..n {
            let nlen = u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")) as usize;
            let at = self.pos;
            let name = std::str::from_utf8(self.take(nlen)?)
                .map_err(|_| Error::parse(at, "parameter name is not UTF-8"))?
                .to_string();
            let rank = self.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(self.u64()? as usize);
            }
            let count: usize = shape.iter().product();
            let raw = self.take(count.checked_mul(dtype.size()).ok_or_else(|| Error::parse(at, "tensor too large"))?)?;
            let data: Vec<T> = match dtype {
                DType::F32 => raw.chunks_exact(4).map(|c| T::lit(f32::read_le(c) as f64)).collect(),
                DType::F64 => raw.chunks_exact(8).map(|c| T::lit(f64::read_le(c))).collect(),
            };
            store.insert(name, Tensor::new(shape, data)?);
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            res_blocks_half: 1,
            res_blocks_quarter: 1,
            encoder_widths: vec![8, 8, 8],
            decoder_widths: vec![8, 8, 8, 8, 4],
            growth: 4,
            max_disparity: 4,
            feature_width: 8,
            base_width: 4,
            fusion_width: 8,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let model = Model::<f32>::new(tiny()).unwrap();
        let mut ck = Checkpoint::from_model(&model);
        ck.extra.set("note", "hello");
        ck.iteration = 42;
        let back = Checkpoint::<f32>::decode(&ck.encode()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn corruption_detected() {
        let model = Model::<f32>::new(tiny()).unwrap();
        let mut bytes = Checkpoint::from_model(&model).encode();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(Checkpoint::<f32>::decode(&bytes).is_err());
        assert!(Checkpoint::<f32>::decode(b"DISCOCKP").is_err());
    }

    #[test]
    fn layout_checked_against_config() {
        let model = Model::<f32>::new(tiny()).unwrap();
        let mut ck = Checkpoint::from_model(&model);
        ck.config.growth = 5;
        assert!(Checkpoint::<f32>::decode(&ck.encode()).is_err());
    }
}
