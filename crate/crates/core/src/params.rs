//! Named parameter storage and binding of parameters into a [`Graph`].
//!
//! Parameters are addressed by dotted paths such as
//! `estim.enc1.dense.layer2.conv.weight`. A model never declares its
//! parameters up front: layers request them by path and shape while building
//! the graph. During initialization missing entries are created (each from an
//! RNG seeded by the model seed and the path, so creation order is
//! irrelevant); afterwards every request is checked against the stored shape.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{ConvSpec, DeconvSpec, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Zero-mean normal with std `sqrt(2 / fan_in)`.
    HeNormal { fan_in: usize },
    Zeros,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    map: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { map: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        self.map.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.map.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.map.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.map.values().map(Tensor::numel).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore { map: self.map.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }

    /// Fail unless `other` has exactly the same names and shapes.
    pub fn check_layout<U: Real>(&self, other: &ParamStore<U>) -> Result<()> {
        for (name, t) in &self.map {
            match other.map.get(name) {
                None => return Err(Error::config(format!("missing parameter {name}"))),
                Some(o) if o.shape() != t.shape() => {
                    return Err(Error::config(format!(
                        "parameter {name} has shape {:?}, expected {:?}",
                        o.shape(),
                        t.shape()
                    )))
                }
                _ => {}
            }
        }
        if let Some(extra) = other.map.keys().find(|k| !self.map.contains_key(*k)) {
            return Err(Error::config(format!("unexpected parameter {extra}")));
        }
        Ok(())
    }
}

fn path_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a over the path, folded with the model seed.
    let mut h: u64 = 0xcbf29ce484222325 ^ seed.wrapping_mul(0x9e3779b97f4a7c15);
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

pub fn init_tensor<T: Real>(shape: &[usize], init: Init, seed: u64, name: &str) -> Tensor<T> {
    match init {
        Init::Zeros => Tensor::zeros(shape.to_vec()),
        Init::HeNormal { fan_in } => {
            let std = (2.0 / fan_in.max(1) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            let mut rng = ChaCha8Rng::seed_from_u64(path_seed(seed, name));
            Tensor::from_fn(shape.to_vec(), |_| T::lit(normal.sample(&mut rng)))
        }
    }
}

enum Source<'a, T> {
    Init { store: ParamStore<T>, seed: u64 },
    Bind(&'a ParamStore<T>),
}

/// Graph-building context: the graph plus the parameter binding.
pub struct Ctx<'a, T: Real> {
    pub graph: &'a mut Graph<T>,
    source: Source<'a, T>,
    bound: BTreeMap<String, Var>,
    trainable: bool,
    pub alpha: T,
}

impl<'a, T: Real> Ctx<'a, T> {
    /// Bind an existing store. With `trainable`, parameters are graph
    /// variables and receive gradients.
    pub fn bind(graph: &'a mut Graph<T>, store: &'a ParamStore<T>, trainable: bool) -> Self {
        Ctx { graph, source: Source::Bind(store), bound: BTreeMap::new(), trainable, alpha: T::one() }
    }

    /// Create parameters on first use.
    pub fn init(graph: &'a mut Graph<T>, seed: u64) -> Self {
        Ctx {
            graph,
            source: Source::Init { store: ParamStore::new(), seed },
            bound: BTreeMap::new(),
            trainable: false,
            alpha: T::one(),
        }
    }

    pub fn with_alpha(mut self, alpha: T) -> Self {
        self.alpha = alpha;
        self
    }

    /// The store built by an [`Ctx::init`] context.
    pub fn into_initialized(self) -> Option<ParamStore<T>> {
        match self.source {
            Source::Init { store, .. } => Some(store),
            Source::Bind(_) => None,
        }
    }

    /// Parameter handles created so far, by path.
    pub fn bound(&self) -> &BTreeMap<String, Var> {
        &self.bound
    }

    pub fn into_bound(self) -> BTreeMap<String, Var> {
        self.bound
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            if self.graph.shape(v) != shape {
                return Err(Error::config(format!(
                    "parameter {name} requested with shape {shape:?}, bound as {:?}",
                    self.graph.shape(v)
                )));
            }
            return Ok(v);
        }
        let value = match &mut self.source {
            Source::Bind(store) => {
                let t = store.get(name).ok_or_else(|| Error::config(format!("missing parameter {name}")))?;
                if t.shape() != shape {
                    return Err(Error::config(format!(
                        "parameter {name} has shape {:?}, layer expects {shape:?}",
                        t.shape()
                    )));
                }
                t.clone()
            }
            Source::Init { store, seed } => {
                let t = init_tensor::<T>(shape, init, *seed, name);
                store.insert(name, t.clone());
                t
            }
        };
        let v = if self.trainable { self.graph.variable(value) } else { self.graph.constant(value) };
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    /// Convolution with bias; parameters at `{name}.weight` / `{name}.bias`.
    pub fn conv(&mut self, name: &str, x: Var, spec: &ConvSpec) -> Result<Var> {
        let fan_in = spec.in_channels * spec.kernel * spec.kernel;
        let w = self.param(&format!("{name}.weight"), &spec.weight_shape(), Init::HeNormal { fan_in })?;
        let b = self.param(&format!("{name}.bias"), &[spec.out_channels], Init::Zeros)?;
        self.graph.conv2d(x, w, Some(b), spec).map_err(|e| e.context(name.to_string()))
    }

    /// Convolution whose weights start at zero; used for output heads.
    pub fn conv_zero(&mut self, name: &str, x: Var, spec: &ConvSpec) -> Result<Var> {
        let w = self.param(&format!("{name}.weight"), &spec.weight_shape(), Init::Zeros)?;
        let b = self.param(&format!("{name}.bias"), &[spec.out_channels], Init::Zeros)?;
        self.graph.conv2d(x, w, Some(b), spec).map_err(|e| e.context(name.to_string()))
    }

    pub fn deconv(&mut self, name: &str, x: Var, spec: &DeconvSpec) -> Result<Var> {
        let fan_in = spec.in_channels * spec.kernel * spec.kernel / (spec.stride * spec.stride).max(1);
        self.deconv_init(name, x, spec, Init::HeNormal { fan_in })
    }

    pub fn deconv_zero(&mut self, name: &str, x: Var, spec: &DeconvSpec) -> Result<Var> {
        self.deconv_init(name, x, spec, Init::Zeros)
    }

    fn deconv_init(&mut self, name: &str, x: Var, spec: &DeconvSpec, init: Init) -> Result<Var> {
        let w = self.param(&format!("{name}.weight"), &spec.weight_shape(), init)?;
        let b = self.param(&format!("{name}.bias"), &[spec.out_channels], Init::Zeros)?;
        self.graph.deconv2d(x, w, Some(b), spec).map_err(|e| e.context(name.to_string()))
    }

    pub fn elu(&mut self, x: Var) -> Result<Var> {
        self.graph.elu(x, self.alpha)
    }

    pub fn channels(&self, x: Var) -> usize {
        self.graph.shape(x)[1]
    }

    pub fn spatial(&self, x: Var) -> (usize, usize) {
        let s = self.graph.shape(x);
        (s[2], s[3])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_order_independent() {
        let a: Tensor<f32> = init_tensor(&[4, 3], Init::HeNormal { fan_in: 3 }, 7, "x.weight");
        let _ = init_tensor::<f32>(&[2], Init::HeNormal { fan_in: 1 }, 7, "y.weight");
        let b: Tensor<f32> = init_tensor(&[4, 3], Init::HeNormal { fan_in: 3 }, 7, "x.weight");
        assert_eq!(a, b);
        let c: Tensor<f32> = init_tensor(&[4, 3], Init::HeNormal { fan_in: 3 }, 8, "x.weight");
        assert_ne!(a, c);
    }

    #[test]
    fn shared_names_share_vars() {
        let mut g = Graph::<f64>::new();
        let mut ctx = Ctx::init(&mut g, 1);
        let a = ctx.param("w", &[2, 2], Init::Zeros).unwrap();
        let b = ctx.param("w", &[2, 2], Init::Zeros).unwrap();
        assert_eq!(a, b);
        assert!(ctx.param("w", &[3], Init::Zeros).is_err());
        let store = ctx.into_initialized().unwrap();
        assert_eq!(store.count(), 4);
    }

    #[test]
    fn bind_checks_shapes() {
        let mut store = ParamStore::<f64>::new();
        store.insert("w", Tensor::zeros([2, 2]));
        let mut g = Graph::new();
        let mut ctx = Ctx::bind(&mut g, &store, true);
        let err = ctx.param("w", &[4], Init::Zeros).unwrap_err();
        assert!(err.to_string().contains("w has shape [2, 2]"), "{err}");
        assert!(ctx.param("missing", &[1], Init::Zeros).is_err());
    }
}
