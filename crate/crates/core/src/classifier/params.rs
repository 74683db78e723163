use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture of the detector head.
///
/// `input_dim == 0` in a config means "take it from the embeddings".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierArch {
    pub input_dim: usize,
    pub hidden: usize,
    pub mlp_hidden: usize,
    pub dropout_rate: f64,
}

impl Default for ClassifierArch {
    fn default() -> Self {
        Self {
            input_dim: 0,
            hidden: 512,
            mlp_hidden: 512,
            dropout_rate: 0.5,
        }
    }
}

impl ClassifierArch {
    pub fn validate(&self) -> Result<()> {
        if self.hidden < 1 {
            return Err(Error::config("classifier.hidden", "must be >= 1"));
        }
        if self.mlp_hidden < 1 {
            return Err(Error::config("classifier.mlp_hidden", "must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config("classifier.dropout_rate", "must be in [0, 1)"));
        }
        Ok(())
    }

    pub fn with_input_dim(&self, input_dim: usize) -> Self {
        Self {
            input_dim,
            ..self.clone()
        }
    }

    /// Width of the MLP input: both directions' final states.
    pub fn feature_dim(&self) -> usize {
        2 * self.hidden
    }
}

/// Weights of one LSTM direction. Gate blocks are stacked in the order
/// input, forget, cell, output, each `hidden` rows tall.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// `4H x D`, row-major.
    pub w_ih: Vec<f64>,
    /// `4H x H`, row-major.
    pub w_hh: Vec<f64>,
    /// `4H`.
    pub bias: Vec<f64>,
}

impl LstmParams {
    fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            w_ih: vec![0.0; 4 * hidden * input_dim],
            w_hh: vec![0.0; 4 * hidden * hidden],
            bias: vec![0.0; 4 * hidden],
        }
    }
}

/// All trainable parameters. The same struct holds gradients and optimizer
/// moments, which keeps every per-tensor loop shape-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub arch: ClassifierArch,
    pub fwd: LstmParams,
    pub bwd: LstmParams,
    /// `M x 2H`.
    pub mlp_w1: Vec<f64>,
    pub mlp_b1: Vec<f64>,
    /// `1 x M`.
    pub mlp_w2: Vec<f64>,
    /// length 1.
    pub mlp_b2: Vec<f64>,
}

/// Name, shape and whether weight decay applies (matrices yes, biases no).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub decay: bool,
}

impl ClassifierParams {
    pub fn zeros(arch: &ClassifierArch) -> Self {
        let (d, h, m) = (arch.input_dim, arch.hidden, arch.mlp_hidden);
        Self {
            arch: arch.clone(),
            fwd: LstmParams::zeros(d, h),
            bwd: LstmParams::zeros(d, h),
            mlp_w1: vec![0.0; m * 2 * h],
            mlp_b1: vec![0.0; m],
            mlp_w2: vec![0.0; m],
            mlp_b2: vec![0.0; 1],
        }
    }

    /// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero except the
    /// forget-gate bias, which starts at 1.
    pub fn init<R: Rng + ?Sized>(arch: &ClassifierArch, rng: &mut R) -> Self {
        let mut p = Self::zeros(arch);
        let (d, h, m) = (arch.input_dim, arch.hidden, arch.mlp_hidden);
        let mut fill = |v: &mut [f64], fan_in: usize| {
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            v.iter_mut().for_each(|x| *x = rng.gen_range(-bound..bound));
        };
        for dir in [&mut p.fwd, &mut p.bwd] {
            fill(&mut dir.w_ih, d);
            fill(&mut dir.w_hh, h);
            dir.bias[h..2 * h].iter_mut().for_each(|b| *b = 1.0);
        }
        fill(&mut p.mlp_w1, 2 * h);
        fill(&mut p.mlp_w2, m);
        p
    }

    /// Tensor layout in checkpoint order.
    pub fn specs(arch: &ClassifierArch) -> Vec<TensorSpec> {
        let (d, h, m) = (arch.input_dim, arch.hidden, arch.mlp_hidden);
        let spec = |name: &str, shape: Vec<usize>, decay| TensorSpec {
            name: name.into(),
            shape,
            decay,
        };
        vec![
            spec("fwd.w_ih", vec![4 * h, d], true),
            spec("fwd.w_hh", vec![4 * h, h], true),
            spec("fwd.bias", vec![4 * h], false),
            spec("bwd.w_ih", vec![4 * h, d], true),
            spec("bwd.w_hh", vec![4 * h, h], true),
            spec("bwd.bias", vec![4 * h], false),
            spec("mlp.w1", vec![m, 2 * h], true),
            spec("mlp.b1", vec![m], false),
            spec("mlp.w2", vec![1, m], true),
            spec("mlp.b2", vec![1], false),
        ]
    }

    pub fn tensors(&self) -> [&[f64]; 10] {
        [
            &self.fwd.w_ih,
            &self.fwd.w_hh,
            &self.fwd.bias,
            &self.bwd.w_ih,
            &self.bwd.w_hh,
            &self.bwd.bias,
            &self.mlp_w1,
            &self.mlp_b1,
            &self.mlp_w2,
            &self.mlp_b2,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 10] {
        [
            &mut self.fwd.w_ih,
            &mut self.fwd.w_hh,
            &mut self.fwd.bias,
            &mut self.bwd.w_ih,
            &mut self.bwd.w_hh,
            &mut self.bwd.bias,
            &mut self.mlp_w1,
            &mut self.mlp_b1,
            &mut self.mlp_w2,
            &mut self.mlp_b2,
        ]
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ClassifierParams, scale: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            dst.iter_mut().zip(src).for_each(|(a, b)| *a += scale * b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x = 0.0);
        }
    }
}
