//! Adam with decoupled weight decay, and an early-stopping controller.

use crate::error::{Error, Result};
use crate::layers::Param;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

struct Moments {
    name: String,
    m: Tensor,
    v: Tensor,
}

pub struct Adam {
    config: AdamConfig,
    step: u64,
    moments: Vec<Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config, step: 0, moments: Vec::new() }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update over `params`, which must be passed in the same order every step.
    ///
    /// `theta -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)`.
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut [&mut Param]) -> Result<()> {
        if let Some(p) = params.iter().find(|p| !p.grad.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient for `{}`", p.name)));
        }
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| Moments {
                    name: p.name.clone(),
                    m: Tensor::zeros(p.value.shape()),
                    v: Tensor::zeros(p.value.shape()),
                })
                .collect();
        }
        if self.moments.len() != params.len()
            || self.moments.iter().zip(params.iter()).any(|(m, p)| m.name != p.name)
        {
            return Err(Error::State("optimizer called with a different parameter set".into()));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps, weight_decay } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (mom, p) in self.moments.iter_mut().zip(params.iter_mut()) {
            let dtype = p.value.dtype();
            let grads = p.grad.data();
            let m = mom.m.data_mut();
            let v = mom.v.data_mut();
            for (i, theta) in p.value.data_mut().iter_mut().enumerate() {
                let g = grads[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *theta = dtype.round(*theta - lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * *theta));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MonitorMode {
    #[default]
    Min,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

#[derive(Clone, Debug)]
pub struct EarlyStopper {
    patience: usize,
    mode: MonitorMode,
    best: Option<f64>,
    since_best: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize, mode: MonitorMode) -> Self {
        EarlyStopper { patience, mode, best: None, since_best: 0 }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn epochs_since_best(&self) -> usize {
        self.since_best
    }

    /// Whether `metric` strictly beats the best seen so far.
    pub fn improves(&self, metric: f64) -> bool {
        match (self.best, self.mode) {
            (None, _) => true,
            (Some(b), MonitorMode::Min) => metric < b,
            (Some(b), MonitorMode::Max) => metric > b,
        }
    }

    /// Record one epoch. Stops once `patience` consecutive epochs fail to improve
    /// (`patience = 0` stops at the first non-improvement).
    pub fn update(&mut self, metric: f64) -> Result<StopDecision> {
        if !metric.is_finite() {
            return Err(Error::Numeric(format!("early-stopping metric {metric} is not finite")));
        }
        if self.improves(metric) {
            self.best = Some(metric);
            self.since_best = 0;
            return Ok(StopDecision::Continue);
        }
        self.since_best += 1;
        Ok(if self.since_best >= self.patience { StopDecision::Stop } else { StopDecision::Continue })
    }
}
