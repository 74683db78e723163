use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_base: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub warmup_fraction: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Overrides the global seed when set.
    pub seed: Option<u64>,
    /// train : val : test.
    pub split_ratio: [u32; 3],
    pub decision_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_base: 1e-4,
            weight_decay: 0.01,
            epochs: 20,
            warmup_fraction: 0.10,
            batch_size: 32,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: None,
            split_ratio: [8, 1, 1],
            decision_threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let field = |f: &str| format!("train.{f}");
        if !(self.lr_base > 0.0 && self.lr_base.is_finite()) {
            return Err(Error::config(field("lr_base"), "must be > 0"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config(field("weight_decay"), "must be >= 0"));
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return Err(Error::config(field("warmup_fraction"), "must be in (0, 1)"));
        }
        if self.batch_size < 1 {
            return Err(Error::config(field("batch_size"), "must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(Error::config(field("beta1"), "must be in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config(field("beta2"), "must be in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::config(field("eps"), "must be > 0"));
        }
        if self.split_ratio.iter().any(|&r| r == 0) {
            return Err(Error::config(field("split_ratio"), "ratios must be positive"));
        }
        if !(self.decision_threshold > 0.0 && self.decision_threshold < 1.0) {
            return Err(Error::config(field("decision_threshold"), "must be in (0, 1)"));
        }
        Ok(())
    }
}

/// Number of linear warmup steps for a run of `total_steps`.
pub fn warmup_steps(total_steps: usize, cfg: &TrainConfig) -> usize {
    (cfg.warmup_fraction * total_steps as f64).round() as usize
}

/// Linear warmup to `lr_base`, then half-cosine decay towards zero.
pub fn lr_at(step: usize, total_steps: usize, cfg: &TrainConfig) -> f64 {
    let w = warmup_steps(total_steps, cfg);
    if step < w {
        return cfg.lr_base * (step + 1) as f64 / w as f64;
    }
    let span = total_steps.saturating_sub(w).max(1) as f64;
    let progress = (step - w) as f64 / span;
    cfg.lr_base * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Adam moments for every parameter tensor.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub m: ClassifierParams,
    pub v: ClassifierParams,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &ClassifierParams) -> Self {
        Self {
            m: ClassifierParams::zeros(&params.arch),
            v: ClassifierParams::zeros(&params.arch),
            step: 0,
        }
    }
}

/// One AdamW update with decoupled weight decay on weight matrices only.
pub fn adamw_step(
    params: &mut ClassifierParams,
    grads: &ClassifierParams,
    state: &mut OptimizerState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::Training(format!(
            "non-finite gradient at step {}",
            state.step + 1
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let specs = ClassifierParams::specs(&params.arch);
    let tensors = params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut().into_iter().zip(state.v.tensors_mut()))
        .zip(&specs);
    for (((theta, g), (m, v)), spec) in tensors {
        let decay = if spec.decay { cfg.weight_decay } else { 0.0 };
        for i in 0..theta.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            theta[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps) + lr * decay * theta[i];
        }
    }
    Ok(())
}
