//! Bidirectional-LSTM single-source detector.
//!
//! A single-layer Bi-LSTM reads the embedding sequence; the two directions'
//! final hidden states are concatenated and passed through
//! `Linear(2H, M) -> ReLU -> dropout -> Linear(M, 1) -> sigmoid`.
//! The output is P(single-source). Forward and backward passes are written
//! out by hand so that every gradient can be checked against finite
//! differences.

mod checkpoint;
mod params;

use rand::Rng;

use crate::embeddings::EmbeddingSequence;
use crate::error::{Error, Result};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
    CheckpointHeader, CheckpointMetrics,
};
pub use params::{ClassifierArch, ClassifierParams, LstmParams, TensorSpec};

/// Probability clamp used by the loss.
pub const BCE_CLAMP: f64 = 1e-7;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy with `p` clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce_loss(p: f64, y: f64) -> f64 {
    let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Per-step activations of one LSTM direction, in processing order.
#[derive(Debug, Clone)]
pub struct DirectionTrace {
    /// Input row consumed at each processing step.
    pub order: Vec<usize>,
    /// `T x H` each.
    pub input_gate: Vec<f64>,
    pub forget_gate: Vec<f64>,
    pub cell_candidate: Vec<f64>,
    pub output_gate: Vec<f64>,
    pub cell: Vec<f64>,
    pub hidden: Vec<f64>,
    pub hidden_size: usize,
}

impl DirectionTrace {
    pub fn steps(&self) -> usize {
        self.order.len()
    }

    pub fn hidden_at(&self, step: usize) -> &[f64] {
        &self.hidden[step * self.hidden_size..(step + 1) * self.hidden_size]
    }

    pub fn last_hidden(&self) -> &[f64] {
        self.hidden_at(self.steps() - 1)
    }
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `T x D` input, widened to f64.
    pub input: Vec<f64>,
    pub fwd: DirectionTrace,
    pub bwd: DirectionTrace,
    /// `2H` concatenated final states.
    pub feature: Vec<f64>,
    /// `M` pre-activations of the first dense layer.
    pub pre_relu: Vec<f64>,
    /// `M` dropout multipliers (0 or 1/(1-rate); all 1 in eval mode).
    pub dropout_mask: Vec<f64>,
    pub logit: f64,
    pub probability: f64,
}

pub enum ForwardMode<'a, R: Rng + ?Sized> {
    Train(&'a mut R),
    Eval,
}

fn check_input(params: &ClassifierParams, seq: &EmbeddingSequence) -> Result<()> {
    if seq.dim != params.arch.input_dim {
        return Err(Error::Shape(format!(
            "sequence dim {} but classifier expects {}",
            seq.dim, params.arch.input_dim
        )));
    }
    if seq.n_frames == 0 {
        return Err(Error::Shape("empty sequence".into()));
    }
    Ok(())
}

fn widen(seq: &EmbeddingSequence) -> Vec<f64> {
    seq.frames.iter().map(|&x| x as f64).collect()
}

/// `out[r] += sum_c w[r, c] * x[c]` for a row-major `rows x x.len()` matrix.
fn matvec_acc(out: &mut [f64], w: &[f64], x: &[f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out[c] += sum_r w[r, c] * v[r]`.
fn matvec_t_acc(out: &mut [f64], w: &[f64], v: &[f64]) {
    let cols = out.len();
    for (row, &vr) in w.chunks_exact(cols).zip(v) {
        if vr != 0.0 {
            out.iter_mut().zip(row).for_each(|(o, a)| *o += a * vr);
        }
    }
}

/// `g[r, c] += v[r] * x[c]`.
fn outer_acc(g: &mut [f64], v: &[f64], x: &[f64]) {
    let cols = x.len();
    for (row, &vr) in g.chunks_exact_mut(cols).zip(v) {
        if vr != 0.0 {
            row.iter_mut().zip(x).for_each(|(o, b)| *o += vr * b);
        }
    }
}

fn run_direction(p: &LstmParams, input: &[f64], dim: usize, hidden: usize, reverse: bool) -> DirectionTrace {
    let steps = input.len() / dim;
    let order: Vec<usize> = if reverse {
        (0..steps).rev().collect()
    } else {
        (0..steps).collect()
    };
    let h = hidden;
    let mut tr = DirectionTrace {
        order,
        input_gate: Vec::with_capacity(steps * h),
        forget_gate: Vec::with_capacity(steps * h),
        cell_candidate: Vec::with_capacity(steps * h),
        output_gate: Vec::with_capacity(steps * h),
        cell: Vec::with_capacity(steps * h),
        hidden: Vec::with_capacity(steps * h),
        hidden_size: h,
    };
    let mut h_prev = vec![0.0; h];
    let mut c_prev = vec![0.0; h];
    let mut z = vec![0.0; 4 * h];
    for s in 0..steps {
        let t = tr.order[s];
        z.copy_from_slice(&p.bias);
        matvec_acc(&mut z, &p.w_ih, &input[t * dim..(t + 1) * dim]);
        matvec_acc(&mut z, &p.w_hh, &h_prev);
        for k in 0..h {
            let i = sigmoid(z[k]);
            let f = sigmoid(z[h + k]);
            let g = z[2 * h + k].tanh();
            let o = sigmoid(z[3 * h + k]);
            let c = f * c_prev[k] + i * g;
            let hk = o * c.tanh();
            tr.input_gate.push(i);
            tr.forget_gate.push(f);
            tr.cell_candidate.push(g);
            tr.output_gate.push(o);
            tr.cell.push(c);
            tr.hidden.push(hk);
            c_prev[k] = c;
            h_prev[k] = hk;
        }
    }
    tr
}

/// Runs one LSTM direction from zero state. With `reverse` the sequence is
/// consumed from its last frame to its first; the returned hidden states are
/// in processing order.
pub fn lstm_direction_forward(
    p: &LstmParams,
    hidden: usize,
    seq: &EmbeddingSequence,
    reverse: bool,
) -> Result<DirectionTrace> {
    if p.w_ih.len() != 4 * hidden * seq.dim {
        return Err(Error::Shape(format!(
            "w_ih has {} entries, expected 4*{hidden}*{}",
            p.w_ih.len(),
            seq.dim
        )));
    }
    Ok(run_direction(p, &widen(seq), seq.dim, hidden, reverse))
}

fn head(params: &ClassifierParams, fwd: DirectionTrace, bwd: DirectionTrace, input: Vec<f64>, mask: Vec<f64>) -> ForwardTrace {
    let arch = &params.arch;
    let mut feature = Vec::with_capacity(arch.feature_dim());
    feature.extend_from_slice(fwd.last_hidden());
    feature.extend_from_slice(bwd.last_hidden());
    let mut pre_relu = params.mlp_b1.clone();
    matvec_acc(&mut pre_relu, &params.mlp_w1, &feature);
    let logit = params.mlp_b2[0]
        + pre_relu
            .iter()
            .zip(&mask)
            .zip(&params.mlp_w2)
            .map(|((a, m), w)| a.max(0.0) * m * w)
            .sum::<f64>();
    ForwardTrace {
        input,
        fwd,
        bwd,
        feature,
        pre_relu,
        dropout_mask: mask,
        logit,
        probability: sigmoid(logit),
    }
}

/// Forward pass with an explicit dropout mask (length `mlp_hidden`).
pub fn forward_with_mask(
    params: &ClassifierParams,
    seq: &EmbeddingSequence,
    mask: Vec<f64>,
) -> Result<ForwardTrace> {
    check_input(params, seq)?;
    if mask.len() != params.arch.mlp_hidden {
        return Err(Error::Shape(format!(
            "dropout mask length {} != mlp_hidden {}",
            mask.len(),
            params.arch.mlp_hidden
        )));
    }
    let input = widen(seq);
    let (d, h) = (params.arch.input_dim, params.arch.hidden);
    let fwd = run_direction(&params.fwd, &input, d, h, false);
    let bwd = run_direction(&params.bwd, &input, d, h, true);
    Ok(head(params, fwd, bwd, input, mask))
}

/// Inverted-dropout mask: each unit kept with probability `1 - rate` and
/// scaled by `1 / (1 - rate)`.
pub fn draw_dropout_mask<R: Rng + ?Sized>(n: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    if rate <= 0.0 {
        return vec![1.0; n];
    }
    let keep = 1.0 / (1.0 - rate);
    (0..n)
        .map(|_| if rng.gen_bool(1.0 - rate) { keep } else { 0.0 })
        .collect()
}

/// Full forward pass. Train mode draws a dropout mask from the given stream;
/// eval mode is deterministic.
pub fn forward<R: Rng + ?Sized>(
    params: &ClassifierParams,
    seq: &EmbeddingSequence,
    mode: ForwardMode<'_, R>,
) -> Result<(f64, ForwardTrace)> {
    let mask = match mode {
        ForwardMode::Train(rng) => {
            draw_dropout_mask(params.arch.mlp_hidden, params.arch.dropout_rate, rng)
        }
        ForwardMode::Eval => vec![1.0; params.arch.mlp_hidden],
    };
    let trace = forward_with_mask(params, seq, mask)?;
    Ok((trace.probability, trace))
}

/// Eval-mode probability of single-source.
pub fn predict(params: &ClassifierParams, seq: &EmbeddingSequence) -> Result<f64> {
    forward::<rand_chacha::ChaCha8Rng>(params, seq, ForwardMode::Eval).map(|(p, _)| p)
}

fn backprop_direction(
    p: &LstmParams,
    g: &mut LstmParams,
    tr: &DirectionTrace,
    input: &[f64],
    dim: usize,
    d_last: &[f64],
) {
    let h = tr.hidden_size;
    let mut dh = d_last.to_vec();
    let mut dc = vec![0.0; h];
    let mut dz = vec![0.0; 4 * h];
    let zeros = vec![0.0; h];
    for s in (0..tr.steps()).rev() {
        let at = |v: &[f64], k: usize| v[s * h + k];
        let c_prev: &[f64] = if s > 0 { &tr.cell[(s - 1) * h..s * h] } else { &zeros };
        for k in 0..h {
            let (i, f, gg, o) = (
                at(&tr.input_gate, k),
                at(&tr.forget_gate, k),
                at(&tr.cell_candidate, k),
                at(&tr.output_gate, k),
            );
            let tc = at(&tr.cell, k).tanh();
            let d_o = dh[k] * tc;
            let dck = dc[k] + dh[k] * o * (1.0 - tc * tc);
            dz[k] = dck * gg * i * (1.0 - i);
            dz[h + k] = dck * c_prev[k] * f * (1.0 - f);
            dz[2 * h + k] = dck * i * (1.0 - gg * gg);
            dz[3 * h + k] = d_o * o * (1.0 - o);
            dc[k] = dck * f;
        }
        let t = tr.order[s];
        outer_acc(&mut g.w_ih, &dz, &input[t * dim..(t + 1) * dim]);
        g.bias.iter_mut().zip(&dz).for_each(|(b, d)| *b += d);
        dh.iter_mut().for_each(|x| *x = 0.0);
        if s > 0 {
            outer_acc(&mut g.w_hh, &dz, tr.hidden_at(s - 1));
            matvec_t_acc(&mut dh, &p.w_hh, &dz);
        }
    }
}

/// Accumulates `scale * d bce(p, target) / d params` into `grads`.
///
/// `target` is normally 0 or 1; soft targets are accepted. The trace must come
/// from a forward pass over the same `params`.
pub fn backward_into(
    params: &ClassifierParams,
    trace: &ForwardTrace,
    target: f64,
    scale: f64,
    grads: &mut ClassifierParams,
) {
    let arch = &params.arch;
    let (d, h, m) = (arch.input_dim, arch.hidden, arch.mlp_hidden);
    let d_logit = scale * (trace.probability - target);
    grads.mlp_b2[0] += d_logit;
    let mut d_pre = vec![0.0; m];
    for j in 0..m {
        let a = trace.pre_relu[j];
        let act = a.max(0.0) * trace.dropout_mask[j];
        grads.mlp_w2[j] += d_logit * act;
        if a > 0.0 {
            d_pre[j] = d_logit * params.mlp_w2[j] * trace.dropout_mask[j];
        }
    }
    outer_acc(&mut grads.mlp_w1, &d_pre, &trace.feature);
    grads.mlp_b1.iter_mut().zip(&d_pre).for_each(|(b, x)| *b += x);
    let mut d_feature = vec![0.0; 2 * h];
    matvec_t_acc(&mut d_feature, &params.mlp_w1, &d_pre);
    backprop_direction(&params.fwd, &mut grads.fwd, &trace.fwd, &trace.input, d, &d_feature[..h]);
    backprop_direction(&params.bwd, &mut grads.bwd, &trace.bwd, &trace.input, d, &d_feature[h..]);
}

/// Gradients of `bce_loss(p, target)` with respect to every parameter.
pub fn backward(params: &ClassifierParams, trace: &ForwardTrace, target: f64) -> ClassifierParams {
    let mut grads = ClassifierParams::zeros(&params.arch);
    backward_into(params, trace, target, 1.0, &mut grads);
    grads
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn arch(d: usize, h: usize, m: usize) -> ClassifierArch {
        ClassifierArch {
            input_dim: d,
            hidden: h,
            mlp_hidden: m,
            dropout_rate: 0.5,
        }
    }

    fn random_seq(t: usize, d: usize, rng: &mut ChaCha8Rng) -> EmbeddingSequence {
        EmbeddingSequence::new((0..t * d).map(|_| rng.gen_range(-1.0..1.0)).collect(), t, d, 0.01).unwrap()
    }

    #[test]
    fn zero_network_outputs_half() {
        let a = arch(3, 4, 5);
        let p = ClassifierParams::zeros(&a);
        let seq = random_seq(4, 3, &mut ChaCha8Rng::seed_from_u64(0));
        let tr = lstm_direction_forward(&p.fwd, 4, &seq, false).unwrap();
        assert!(tr.hidden.iter().all(|&x| x == 0.0));
        assert_eq!(predict(&p, &seq).unwrap(), 0.5);
    }

    #[test]
    fn single_step_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = arch(3, 2, 2);
        let p = ClassifierParams::init(&a, &mut rng);
        let seq = random_seq(1, 3, &mut rng);
        let tr = lstm_direction_forward(&p.fwd, 2, &seq, false).unwrap();
        let x: Vec<f64> = seq.frames.iter().map(|&v| v as f64).collect();
        let s = |v: f64| 1.0 / (1.0 + (-v).exp());
        for k in 0..2 {
            let pre = |gate: usize| {
                let r = gate * 2 + k;
                p.fwd.bias[r] + (0..3).map(|c| p.fwd.w_ih[r * 3 + c] * x[c]).sum::<f64>()
            };
            let c = s(pre(0)) * pre(2).tanh();
            let h = s(pre(3)) * c.tanh();
            assert!((tr.hidden[k] - h).abs() < 1e-14);
            assert!((tr.cell[k] - c).abs() < 1e-14);
        }
    }

    #[test]
    fn reversal_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = arch(3, 4, 2);
        let p = ClassifierParams::init(&a, &mut rng);
        let seq = random_seq(6, 3, &mut rng);
        let backward_dir = lstm_direction_forward(&p.fwd, 4, &seq, true).unwrap();
        let forward_on_reversed = lstm_direction_forward(&p.fwd, 4, &seq.reversed(), false).unwrap();
        assert_eq!(backward_dir.hidden, forward_on_reversed.hidden);
    }

    #[test]
    fn dim_mismatch_is_shape_error() {
        let p = ClassifierParams::zeros(&arch(3, 2, 2));
        let seq = random_seq(2, 4, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(predict(&p, &seq), Err(Error::Shape(_))));
    }

    #[test]
    fn eval_is_deterministic_and_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ClassifierParams::init(&arch(5, 6, 7), &mut rng);
        let seq = random_seq(9, 5, &mut rng);
        let a = predict(&p, &seq).unwrap();
        let b = predict(&p, &seq).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(a > 0.0 && a < 1.0);
    }

    #[test]
    fn bce_cases() {
        assert!((bce_loss(0.5, 1.0) - std::f64::consts::LN_2).abs() < 1e-12);
        let bound = -(BCE_CLAMP).ln();
        assert!((bound - 16.118).abs() < 1e-3);
        assert!(bce_loss(1.0, 1.0) <= bound && bce_loss(0.0, 0.0) <= bound);
        assert!(bce_loss(0.9, 1.0) < bce_loss(0.6, 1.0));
        assert!(bce_loss(0.1, 0.0) < bce_loss(0.4, 0.0));
    }

    #[test]
    fn output_bias_gradient_is_p_minus_y() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = ClassifierParams::init(&arch(3, 4, 5), &mut rng);
        let seq = random_seq(5, 3, &mut rng);
        let (prob, tr) = forward(&p, &seq, ForwardMode::Train(&mut rng)).unwrap();
        for y in [0.0, 1.0] {
            assert_eq!(backward(&p, &tr, y).mlp_b2[0], prob - y);
        }
    }

    #[test]
    fn stationary_point_has_zero_gradient() {
        let p = ClassifierParams::zeros(&arch(3, 4, 5));
        let seq = random_seq(5, 3, &mut ChaCha8Rng::seed_from_u64(3));
        let (prob, tr) = forward::<ChaCha8Rng>(&p, &seq, ForwardMode::Eval).unwrap();
        let g = backward(&p, &tr, prob);
        assert!(g.tensors().iter().all(|t| t.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn dropout_expectation_matches_eval() {
        // small weights keep the sigmoid close to linear in the logit
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut p = ClassifierParams::init(&arch(3, 4, 16), &mut rng);
        p.mlp_w2.iter_mut().for_each(|w| *w *= 0.1);
        let seq = random_seq(4, 3, &mut rng);
        let eval = predict(&p, &seq).unwrap();
        let n = 10_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let (pr, _) = forward(&p, &seq, ForwardMode::Train(&mut rng)).unwrap();
            sum += pr;
            sum_sq += pr * pr;
        }
        let mean = sum / n as f64;
        let se = ((sum_sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - eval).abs() < 4.0 * se + 1e-4, "mean {mean} eval {eval} se {se}");
    }

    #[test]
    fn input_permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let d = 5;
        let p = ClassifierParams::init(&arch(d, 4, 3), &mut rng);
        let seq = random_seq(7, d, &mut rng);
        let perm = [3usize, 0, 4, 1, 2];
        let mut permuted_seq = seq.clone();
        for t in 0..seq.n_frames {
            for (j, &src) in perm.iter().enumerate() {
                permuted_seq.frames[t * d + j] = seq.frames[t * d + src];
            }
        }
        let mut q = p.clone();
        for (dst, src) in [(&mut q.fwd.w_ih, &p.fwd.w_ih), (&mut q.bwd.w_ih, &p.bwd.w_ih)] {
            for r in 0..16 {
                for (j, &s) in perm.iter().enumerate() {
                    dst[r * d + j] = src[r * d + s];
                }
            }
        }
        let a = predict(&p, &seq).unwrap();
        let b = predict(&q, &permuted_seq).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    fn loss_at(p: &ClassifierParams, seq: &EmbeddingSequence, mask: &[f64], y: f64) -> f64 {
        bce_loss(forward_with_mask(p, seq, mask.to_vec()).unwrap().probability, y)
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = arch(3, 4, 6);
        let p = ClassifierParams::init(&a, &mut rng);
        let seq = random_seq(5, 3, &mut rng);
        let mask = vec![2.0, 0.0, 2.0, 2.0, 0.0, 2.0];
        for y in [0.0, 1.0] {
            let tr = forward_with_mask(&p, &seq, mask.clone()).unwrap();
            let g = backward(&p, &tr, y);
            let eps = 1e-4;
            for (ti, spec) in ClassifierParams::specs(&a).iter().enumerate() {
                let mut worst = 0.0f64;
                for k in 0..g.tensors()[ti].len() {
                    let mut plus = p.clone();
                    plus.tensors_mut()[ti][k] += eps;
                    let mut minus = p.clone();
                    minus.tensors_mut()[ti][k] -= eps;
                    let numeric = (loss_at(&plus, &seq, &mask, y) - loss_at(&minus, &seq, &mask, y)) / (2.0 * eps);
                    let analytic = g.tensors()[ti][k];
                    let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
                    worst = worst.max(rel);
                }
                assert!(worst < 1e-3, "{} y={y}: max relative error {worst:e}", spec.name);
            }
        }
    }

    proptest! {
        #[test]
        fn probability_strictly_inside_unit_interval(seed in 0u64..500, t in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = ClassifierParams::init(&arch(3, 3, 4), &mut rng);
            let seq = random_seq(t, 3, &mut rng);
            let prob = predict(&p, &seq).unwrap();
            prop_assert!(prob > 0.0 && prob < 1.0);
        }
    }
}
