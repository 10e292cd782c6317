//! Adam with bias correction and a step-decay learning-rate schedule.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Optimizer state: first and second moments per parameter path.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub m: ParamStore<T>,
    pub v: ParamStore<T>,
    /// Number of updates applied so far.
    pub step: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config, m: ParamStore::new(), v: ParamStore::new(), step: 0 }
    }

    /// Apply one update. Every gradient must be finite; the first offending
    /// parameter aborts the step before anything is modified.
    pub fn update(&mut self, params: &mut ParamStore<T>, grads: &BTreeMap<String, Tensor<T>>, lr: f64) -> Result<()> {
        for (name, g) in grads {
            let p = params.get(name).ok_or_else(|| Error::config(format!("gradient for unknown parameter {name}")))?;
            if p.shape() != g.shape() {
                return Err(Error::shape("adam", format!("{name}: parameter {:?}, gradient {:?}", p.shape(), g.shape())));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite { op: format!("gradient of {name}") });
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let (b1, b2) = (T::lit(beta1), T::lit(beta2));
        let (ob1, ob2) = (T::lit(1.0 - beta1), T::lit(1.0 - beta2));
        let (step_size, c2s, eps) = (T::lit(lr / c1), T::lit(c2.sqrt()), T::lit(eps));
        for (name, g) in grads {
            let shape = g.shape().to_vec();
            if self.m.get(name).is_none() {
                self.m.insert(name.clone(), Tensor::zeros(shape.clone()));
                self.v.insert(name.clone(), Tensor::zeros(shape));
            }
            let m = self.m.get_mut(name).expect("inserted").data_mut();
            let v = self.v.get_mut(name).expect("inserted").data_mut();
            let p = params.get_mut(name).expect("checked").data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = b1 * m[i] + ob1 * gi;
                v[i] = b2 * v[i] + ob2 * gi * gi;
                p[i] -= step_size * m[i] / (v[i].sqrt() / c2s + eps);
            }
        }
        Ok(())
    }
}

/// `base * factor^k` where `k` counts boundaries at or below the step.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StepSchedule {
    pub base: f64,
    pub factor: f64,
    pub boundaries: Vec<u64>,
}

impl StepSchedule {
    pub fn constant(base: f64) -> Self {
        StepSchedule { base, factor: 1.0, boundaries: Vec::new() }
    }

    /// Halve at one and two thirds of `total` iterations.
    pub fn thirds(base: f64, total: u64) -> Self {
        let b: Vec<u64> = [total / 3, 2 * total / 3].into_iter().filter(|&b| b > 0).collect();
        StepSchedule { base, factor: 0.5, boundaries: b }
    }

    /// Learning rate for 0-based iteration `it`.
    pub fn lr_at(&self, it: u64) -> f64 {
        let k = self.boundaries.iter().filter(|&&b| it >= b).count();
        self.base * self.factor.powi(k as i32)
    }
}
