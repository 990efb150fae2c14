//! Two-layer feed-forward encoder with ReLU, inverted dropout, and analytic
//! gradients for the confidence-weighted group softmax loss.
//!
//! Layout: `emb = W2^T relu(W1^T x + b1) + b2`, weights stored row-major
//! (`w1[i*hidden + j]`, `w2[j*emb + m]`). Dropout scales kept layer-1 units
//! by `1/(1-p)` at train time so eval mode needs no rescaling.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

const INIT_STD: f64 = 0.05;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Feature dimension; 0 means "fill in from the dataset".
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub embedding_dim: usize,
    pub dropout_rate: f64,
    pub l2_scale: f64,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            input_dim: 0,
            hidden_dim: 128,
            embedding_dim: 64,
            dropout_rate: 0.2,
            l2_scale: 1e-4,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.embedding_dim == 0 {
            return Err(Error::InvalidConfig(format!(
                "encoder dimensions must be positive, got {}x{}x{}",
                self.input_dim, self.hidden_dim, self.embedding_dim
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout_rate must be in [0,1), got {}",
                self.dropout_rate
            )));
        }
        if self.l2_scale < 0.0 {
            return Err(Error::InvalidConfig("l2_scale must be nonnegative".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Weights and biases of the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub embedding_dim: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Initializes weights i.i.d. Normal(0, 0.05^2) and biases zero,
/// deterministically from `cfg.seed`.
pub fn init_params(cfg: &EncoderConfig) -> Result<EncoderParams> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| normal.sample(&mut rng)).collect() };
    Ok(EncoderParams {
        input_dim: cfg.input_dim,
        hidden_dim: cfg.hidden_dim,
        embedding_dim: cfg.embedding_dim,
        w1: draw(cfg.input_dim * cfg.hidden_dim),
        b1: vec![0.0; cfg.hidden_dim],
        w2: draw(cfg.hidden_dim * cfg.embedding_dim),
        b2: vec![0.0; cfg.embedding_dim],
    })
}

/// Forward mode: eval is deterministic, train draws a dropout mask.
pub enum Mode<'a> {
    Eval,
    Train {
        dropout_rate: f64,
        rng: &'a mut ChaCha8Rng,
    },
}

/// Cached intermediate values of one forward pass, enough to backpropagate.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub x: Vec<f64>,
    h_pre: Vec<f64>,
    /// relu(h_pre) with the dropout scale already applied.
    h: Vec<f64>,
    /// Per-unit dropout scale: 1 in eval mode, 0 or 1/(1-p) in train mode.
    scale: Vec<f64>,
    pub emb: Vec<f64>,
}

pub fn forward_cached(
    params: &EncoderParams,
    x: &[f64],
    mut mode: Mode<'_>,
) -> Result<ForwardCache> {
    if x.len() != params.input_dim {
        return Err(Error::DimensionMismatch(format!(
            "encoder expects {} inputs, got {}",
            params.input_dim,
            x.len()
        )));
    }
    let (h_len, e_len) = (params.hidden_dim, params.embedding_dim);
    let mut h_pre = params.b1.clone();
    for (i, &xi) in x.iter().enumerate() {
        let row = &params.w1[i * h_len..(i + 1) * h_len];
        for (j, &w) in row.iter().enumerate() {
            h_pre[j] += xi * w;
        }
    }
    let scale: Vec<f64> = match &mut mode {
        Mode::Eval => vec![1.0; h_len],
        Mode::Train { dropout_rate, rng } => {
            if *dropout_rate == 0.0 {
                vec![1.0; h_len]
            } else {
                let keep = 1.0 - *dropout_rate;
                (0..h_len)
                    .map(|_| if rng.random_bool(keep) { 1.0 / keep } else { 0.0 })
                    .collect()
            }
        }
    };
    let h: Vec<f64> = h_pre
        .iter()
        .zip(&scale)
        .map(|(&v, &s)| v.max(0.0) * s)
        .collect();
    let mut emb = params.b2.clone();
    for (j, &hj) in h.iter().enumerate() {
        if hj == 0.0 {
            continue;
        }
        let row = &params.w2[j * e_len..(j + 1) * e_len];
        for (m, &w) in row.iter().enumerate() {
            emb[m] += hj * w;
        }
    }
    Ok(ForwardCache {
        x: x.to_vec(),
        h_pre,
        h,
        scale,
        emb,
    })
}

/// Embedding of `x` under `params`.
pub fn forward(params: &EncoderParams, x: &[f64], mode: Mode<'_>) -> Result<Vec<f64>> {
    Ok(forward_cached(params, x, mode)?.emb)
}

/// Cosine similarity; zero vectors map to 0 by convention.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// `v / ||v||`, or all zeros for a zero vector.
pub fn l2_normalize(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        vec![0.0; v.len()]
    } else {
        v.iter().map(|x| x / norm).collect()
    }
}

/// Parameter-shaped gradient accumulator.
#[derive(Debug, Clone)]
pub struct EncoderGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl EncoderGrads {
    pub fn zeros(params: &EncoderParams) -> Self {
        EncoderGrads {
            w1: vec![0.0; params.w1.len()],
            b1: vec![0.0; params.b1.len()],
            w2: vec![0.0; params.w2.len()],
            b2: vec![0.0; params.b2.len()],
        }
    }
}

/// Accumulates parameter gradients for one cached forward pass given
/// dLoss/dEmbedding.
pub fn backprop_embedding(
    params: &EncoderParams,
    cache: &ForwardCache,
    d_emb: &[f64],
    grads: &mut EncoderGrads,
) {
    let (h_len, e_len) = (params.hidden_dim, params.embedding_dim);
    let mut d_h = vec![0.0; h_len];
    for j in 0..h_len {
        let hj = cache.h[j];
        let row = &params.w2[j * e_len..(j + 1) * e_len];
        let grow = &mut grads.w2[j * e_len..(j + 1) * e_len];
        let mut acc = 0.0;
        for m in 0..e_len {
            grow[m] += hj * d_emb[m];
            acc += row[m] * d_emb[m];
        }
        d_h[j] = acc;
    }
    for (m, &g) in d_emb.iter().enumerate() {
        grads.b2[m] += g;
    }
    // through dropout scale and relu
    let mut d_h_pre = vec![0.0; h_len];
    for j in 0..h_len {
        if cache.h_pre[j] > 0.0 {
            d_h_pre[j] = d_h[j] * cache.scale[j];
        }
    }
    for (i, &xi) in cache.x.iter().enumerate() {
        let grow = &mut grads.w1[i * h_len..(i + 1) * h_len];
        for j in 0..h_len {
            grow[j] += xi * d_h_pre[j];
        }
    }
    for (j, &g) in d_h_pre.iter().enumerate() {
        grads.b1[j] += g;
    }
}

/// One group's cached forward passes plus the loss weighting it needs.
///
/// `candidates[target]` is the paired positive; the rest are negatives.
/// `candidate_conf` holds each candidate's confidence in its estimated label.
pub struct GroupTerm {
    pub anchor: ForwardCache,
    pub candidates: Vec<ForwardCache>,
    pub candidate_conf: Vec<f64>,
    pub target: usize,
    pub eta: f64,
}

/// Analytic gradient of the mean group loss plus the L2 penalty
/// `l2_scale/2 * (||W1||^2 + ||W2||^2)` (biases excluded).
///
/// Returns the total loss alongside the gradient; both are computed from the
/// same softmax pass so they always agree.
pub fn backward(
    params: &EncoderParams,
    terms: &[GroupTerm],
    l2_scale: f64,
) -> (f64, EncoderGrads) {
    let mut grads = EncoderGrads::zeros(params);
    let mut data_loss = 0.0;
    let inv_n = if terms.is_empty() { 0.0 } else { 1.0 / terms.len() as f64 };

    for term in terms {
        let ea = &term.anchor.emb;
        let na = ea.iter().map(|x| x * x).sum::<f64>().sqrt();
        let r: Vec<f64> = term
            .candidates
            .iter()
            .map(|c| cosine_similarity(ea, &c.emb))
            .collect();
        let z: Vec<f64> = r
            .iter()
            .zip(&term.candidate_conf)
            .map(|(&ri, &ci)| term.eta * ci * ri)
            .collect();
        let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = z.iter().map(|&zi| (zi - zmax).exp()).collect();
        let denom: f64 = exps.iter().sum();
        let p: Vec<f64> = exps.iter().map(|&e| e / denom).collect();
        data_loss += -(p[term.target].ln()) * inv_n;

        let mut d_ea = vec![0.0; ea.len()];
        for (idx, cand) in term.candidates.iter().enumerate() {
            let dz = (p[idx] - if idx == term.target { 1.0 } else { 0.0 }) * inv_n;
            let dr = dz * term.eta * term.candidate_conf[idx];
            let ec = &cand.emb;
            let nc = ec.iter().map(|x| x * x).sum::<f64>().sqrt();
            if na == 0.0 || nc == 0.0 {
                continue; // cosine defined as 0 there; no gradient flows
            }
            let inv = 1.0 / (na * nc);
            let mut d_ec = vec![0.0; ec.len()];
            for m in 0..ea.len() {
                d_ea[m] += dr * (ec[m] * inv - r[idx] * ea[m] / (na * na));
                d_ec[m] = dr * (ea[m] * inv - r[idx] * ec[m] / (nc * nc));
            }
            backprop_embedding(params, cand, &d_ec, &mut grads);
        }
        backprop_embedding(params, &term.anchor, &d_ea, &mut grads);
    }

    let mut penalty = 0.0;
    if l2_scale > 0.0 {
        for (g, &w) in grads.w1.iter_mut().zip(&params.w1) {
            *g += l2_scale * w;
            penalty += w * w;
        }
        for (g, &w) in grads.w2.iter_mut().zip(&params.w2) {
            *g += l2_scale * w;
            penalty += w * w;
        }
        penalty *= 0.5 * l2_scale;
    }
    (data_loss + penalty, grads)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Decaying-average-of-squared-gradients scheme, decay 0.95, eps 1e-6.
    #[default]
    Adadelta,
    /// Plain SGD fallback for debugging and the monotone-descent checks.
    Sgd,
}

const ADADELTA_RHO: f64 = 0.95;
const ADADELTA_EPS: f64 = 1e-6;

/// Per-coordinate optimizer state (squared-gradient and squared-update
/// running averages; unused for SGD).
pub struct OptimizerState {
    acc_grad: EncoderGrads,
    acc_delta: EncoderGrads,
}

impl OptimizerState {
    pub fn new(params: &EncoderParams) -> Self {
        OptimizerState {
            acc_grad: EncoderGrads::zeros(params),
            acc_delta: EncoderGrads::zeros(params),
        }
    }
}

/// Applies one optimizer step in place.
pub fn apply_update(
    params: &mut EncoderParams,
    grads: &EncoderGrads,
    state: &mut OptimizerState,
    kind: OptimizerKind,
    learning_rate: f64,
) {
    let tensors: [(&mut Vec<f64>, &Vec<f64>, &mut Vec<f64>, &mut Vec<f64>); 4] = [
        (&mut params.w1, &grads.w1, &mut state.acc_grad.w1, &mut state.acc_delta.w1),
        (&mut params.b1, &grads.b1, &mut state.acc_grad.b1, &mut state.acc_delta.b1),
        (&mut params.w2, &grads.w2, &mut state.acc_grad.w2, &mut state.acc_delta.w2),
        (&mut params.b2, &grads.b2, &mut state.acc_grad.b2, &mut state.acc_delta.b2),
    ];
    for (theta, g, acc_g, acc_d) in tensors {
        match kind {
            OptimizerKind::Sgd => {
                for (t, &gi) in theta.iter_mut().zip(g) {
                    *t -= learning_rate * gi;
                }
            }
            OptimizerKind::Adadelta => {
                for i in 0..theta.len() {
                    let gi = g[i];
                    acc_g[i] = ADADELTA_RHO * acc_g[i] + (1.0 - ADADELTA_RHO) * gi * gi;
                    let delta =
                        -((acc_d[i] + ADADELTA_EPS).sqrt() / (acc_g[i] + ADADELTA_EPS).sqrt()) * gi;
                    acc_d[i] = ADADELTA_RHO * acc_d[i] + (1.0 - ADADELTA_RHO) * delta * delta;
                    theta[i] += learning_rate * delta;
                }
            }
        }
    }
}

/// Embedding function used by the confidence machinery: raw features at the
/// start of training, the current encoder afterwards.
pub trait Embed {
    fn embed(&self, x: &[f64]) -> Vec<f64>;
}

/// Identity embedding over raw feature vectors.
pub struct RawFeatures;

impl Embed for RawFeatures {
    fn embed(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }
}

/// Eval-mode encoder as an embedding function.
pub struct EvalEncoder<'a>(pub &'a EncoderParams);

impl Embed for EvalEncoder<'_> {
    fn embed(&self, x: &[f64]) -> Vec<f64> {
        forward(self.0, x, Mode::Eval).expect("dimension checked by caller")
    }
}

/// Writes params as a text checkpoint: a dimensions header line followed by
/// row-major weight rows and bias lines. Values use shortest round-trip float
/// formatting, so save/load is bit-exact.
pub fn save_checkpoint(params: &EncoderParams, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!(
        "{} {} {}\n",
        params.input_dim, params.hidden_dim, params.embedding_dim
    ));
    let mut push_rows = |data: &[f64], cols: usize| {
        for row in data.chunks(cols) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
    };
    push_rows(&params.w1, params.hidden_dim);
    push_rows(&params.b1, params.b1.len());
    push_rows(&params.w2, params.embedding_dim);
    push_rows(&params.b2, params.b2.len());
    let mut f = std::fs::File::create(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    f.write_all(out.as_bytes()).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<EncoderParams> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let bad = |line: usize, msg: &str| Error::Parse {
        file: path.display().to_string(),
        line,
        message: msg.to_string(),
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad(1, "empty checkpoint"))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| bad(1, "bad dimension header")))
        .collect::<Result<_>>()?;
    if dims.len() != 3 {
        return Err(bad(1, "expected `input hidden embedding` header"));
    }
    let (d_in, d_h, d_e) = (dims[0], dims[1], dims[2]);
    let mut values = Vec::with_capacity(d_in * d_h + d_h + d_h * d_e + d_e);
    for (idx, line) in lines.enumerate() {
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| bad(idx + 2, "bad weight value"))?;
            values.push(v);
        }
    }
    let expected = d_in * d_h + d_h + d_h * d_e + d_e;
    if values.len() != expected {
        return Err(Error::DimensionMismatch(format!(
            "checkpoint {} holds {} values, header implies {}",
            path.display(),
            values.len(),
            expected
        )));
    }
    let w1 = values.drain(..d_in * d_h).collect();
    let b1 = values.drain(..d_h).collect();
    let w2 = values.drain(..d_h * d_e).collect();
    let b2 = values;
    Ok(EncoderParams {
        input_dim: d_in,
        hidden_dim: d_h,
        embedding_dim: d_e,
        w1,
        b1,
        w2,
        b2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> EncoderConfig {
        EncoderConfig {
            input_dim: 2,
            hidden_dim: 2,
            embedding_dim: 2,
            dropout_rate: 0.0,
            l2_scale: 0.0,
            learning_rate: 0.1,
            seed: 3,
        }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let cfg = tiny_cfg();
        let a = init_params(&cfg).unwrap();
        let b = init_params(&cfg).unwrap();
        assert_eq!(a, b);
        let mut cfg2 = cfg;
        cfg2.seed = 4;
        let c = init_params(&cfg2).unwrap();
        assert_ne!(a, c);
        assert!(a.b1.iter().all(|&v| v == 0.0));
        assert!(a.b2.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_hidden_dim_is_rejected() {
        let mut cfg = tiny_cfg();
        cfg.hidden_dim = 0;
        assert!(init_params(&cfg).is_err());
    }

    #[test]
    fn zero_params_give_zero_embedding() {
        let mut p = init_params(&tiny_cfg()).unwrap();
        p.w1.iter_mut().for_each(|w| *w = 0.0);
        p.w2.iter_mut().for_each(|w| *w = 0.0);
        let e = forward(&p, &[1.0, -2.0], Mode::Eval).unwrap();
        assert_eq!(e, vec![0.0, 0.0]);
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let p = init_params(&tiny_cfg()).unwrap();
        let a = forward(&p, &[0.3, 0.7], Mode::Eval).unwrap();
        let b = forward(&p, &[0.3, 0.7], Mode::Eval).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn hand_computed_forward() {
        // h = relu(W1^T x + b1), e = W2^T h + b2 with
        // W1 = [[1, -1], [2, 0]], b1 = [0.5, -0.5],
        // W2 = [[1, 0], [1, 1]],  b2 = [0, 0.25], x = [1, 2].
        let p = EncoderParams {
            input_dim: 2,
            hidden_dim: 2,
            embedding_dim: 2,
            w1: vec![1.0, -1.0, 2.0, 0.0],
            b1: vec![0.5, -0.5],
            w2: vec![1.0, 0.0, 1.0, 1.0],
            b2: vec![0.0, 0.25],
        };
        // h_pre = [1*1+2*2+0.5, 1*(-1)+2*0-0.5] = [5.5, -1.5] -> h = [5.5, 0]
        // e = [5.5*1 + 0*1 + 0, 5.5*0 + 0*1 + 0.25] = [5.5, 0.25]
        let e = forward(&p, &[1.0, 2.0], Mode::Eval).unwrap();
        assert!((e[0] - 5.5).abs() < 1e-12);
        assert!((e[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let p = init_params(&tiny_cfg()).unwrap();
        assert!(forward(&p, &[1.0], Mode::Eval).is_err());
    }

    #[test]
    #[allow(clippy::approx_constant)] // 0.70711 is the documented example value
    fn cosine_basics() {
        assert!((cosine_similarity(&[2.0, 1.0], &[2.0, 1.0]) - 1.0).abs() < 1e-12);
        assert!(cosine_similarity(&[1.0, 0.0], &[0.0, 3.0]).abs() < 1e-12);
        let r = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]);
        assert!((r - 1.0 / 2f64.sqrt()).abs() < 1e-9);
        assert!((r - 0.70711).abs() < 1e-5);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 2.0]), 0.0);
    }

    #[test]
    fn cosine_is_symmetric_and_scale_invariant() {
        let a = [0.3, -0.8, 0.1];
        let b = [1.2, 0.4, -0.9];
        let ab = cosine_similarity(&a, &b);
        assert!((ab - cosine_similarity(&b, &a)).abs() < 1e-15);
        let a3: Vec<f64> = a.iter().map(|v| v * 3.5).collect();
        assert!((cosine_similarity(&a3, &b) - ab).abs() < 1e-12);
    }

    #[test]
    fn dropout_zero_train_equals_eval() {
        let p = init_params(&tiny_cfg()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let train = forward(
            &p,
            &[0.4, -0.2],
            Mode::Train {
                dropout_rate: 0.0,
                rng: &mut rng,
            },
        )
        .unwrap();
        let eval = forward(&p, &[0.4, -0.2], Mode::Eval).unwrap();
        assert_eq!(train, eval);
    }

    #[test]
    fn dropout_scales_kept_units() {
        let p = EncoderParams {
            input_dim: 1,
            hidden_dim: 1,
            embedding_dim: 1,
            w1: vec![1.0],
            b1: vec![0.0],
            w2: vec![1.0],
            b2: vec![0.0],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..64 {
            let e = forward(
                &p,
                &[1.0],
                Mode::Train {
                    dropout_rate: 0.5,
                    rng: &mut rng,
                },
            )
            .unwrap();
            seen.insert(format!("{}", e[0]));
        }
        // only 0 (dropped) or 2 (kept, scaled by 1/(1-0.5)) can occur
        assert!(seen.iter().all(|s| s == "0" || s == "2"), "{seen:?}");
        assert_eq!(seen.len(), 2);
    }

    #[test]
    fn pure_l2_gradient_is_scaled_weights() {
        let p = init_params(&tiny_cfg()).unwrap();
        let (loss, grads) = backward(&p, &[], 0.3);
        let expect: f64 = 0.15
            * (p.w1.iter().map(|w| w * w).sum::<f64>()
                + p.w2.iter().map(|w| w * w).sum::<f64>());
        assert!((loss - expect).abs() < 1e-12);
        for (g, w) in grads.w1.iter().zip(&p.w1) {
            assert!((g - 0.3 * w).abs() < 1e-12);
        }
        for (g, w) in grads.w2.iter().zip(&p.w2) {
            assert!((g - 0.3 * w).abs() < 1e-12);
        }
        assert!(grads.b1.iter().all(|&g| g == 0.0));
        assert!(grads.b2.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn zero_confidence_loss_is_constant_with_zero_gradient() {
        // all candidate confidences 0 => logits all 0 => p uniform, no gradient
        let p = init_params(&tiny_cfg()).unwrap();
        let anchor = forward_cached(&p, &[1.0, 0.0], Mode::Eval).unwrap();
        let cands: Vec<ForwardCache> = [[0.0, 1.0], [1.0, 1.0], [0.5, -0.5]]
            .iter()
            .map(|x| forward_cached(&p, x, Mode::Eval).unwrap())
            .collect();
        let n = cands.len();
        let term = GroupTerm {
            anchor,
            candidates: cands,
            candidate_conf: vec![0.0; n],
            target: 0,
            eta: 10.0,
        };
        let (loss, grads) = backward(&p, &[term], 0.0);
        assert!((loss - (n as f64).ln()).abs() < 1e-12);
        for g in grads
            .w1
            .iter()
            .chain(&grads.b1)
            .chain(&grads.w2)
            .chain(&grads.b2)
        {
            assert!(g.abs() < 1e-12);
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        use rand_distr::{Distribution, Normal};
        let normal = Normal::new(0.0, 0.5).unwrap();
        for seed in 0..6u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (d_in, d_h, d_e) = (
                rng.random_range(2..5usize),
                rng.random_range(2..5usize),
                rng.random_range(2..5usize),
            );
            let mut params = EncoderParams {
                input_dim: d_in,
                hidden_dim: d_h,
                embedding_dim: d_e,
                w1: (0..d_in * d_h).map(|_| normal.sample(&mut rng)).collect(),
                b1: (0..d_h).map(|_| normal.sample(&mut rng)).collect(),
                w2: (0..d_h * d_e).map(|_| normal.sample(&mut rng)).collect(),
                b2: (0..d_e).map(|_| normal.sample(&mut rng)).collect(),
            };
            let n_cands = rng.random_range(2..5usize);
            let anchor_x: Vec<f64> = (0..d_in).map(|_| rng.random_range(-1.0..1.0)).collect();
            let cand_x: Vec<Vec<f64>> = (0..n_cands)
                .map(|_| (0..d_in).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let confs: Vec<f64> = (0..n_cands).map(|_| rng.random_range(0.1..1.0)).collect();
            let eta = rng.random_range(1.0..8.0);
            let l2 = if seed % 2 == 0 { 0.0 } else { 1e-3 };

            let loss_of = |p: &EncoderParams| -> f64 {
                let anchor = forward_cached(p, &anchor_x, Mode::Eval).unwrap();
                let cands: Vec<ForwardCache> = cand_x
                    .iter()
                    .map(|x| forward_cached(p, x, Mode::Eval).unwrap())
                    .collect();
                let term = GroupTerm {
                    anchor,
                    candidates: cands,
                    candidate_conf: confs.clone(),
                    target: 0,
                    eta,
                };
                backward(p, &[term], l2).0
            };

            let anchor = forward_cached(&params, &anchor_x, Mode::Eval).unwrap();
            let cands: Vec<ForwardCache> = cand_x
                .iter()
                .map(|x| forward_cached(&params, x, Mode::Eval).unwrap())
                .collect();
            let term = GroupTerm {
                anchor,
                candidates: cands,
                candidate_conf: confs.clone(),
                target: 0,
                eta,
            };
            let (_, grads) = backward(&params, &[term], l2);

            let step = 1e-5;
            let mut check = |tensor: fn(&mut EncoderParams) -> &mut Vec<f64>, grad: &[f64]| {
                for i in 0..grad.len() {
                    let orig = tensor(&mut params)[i];
                    tensor(&mut params)[i] = orig + step;
                    let plus = loss_of(&params);
                    tensor(&mut params)[i] = orig - step;
                    let minus = loss_of(&params);
                    tensor(&mut params)[i] = orig;
                    let fd = (plus - minus) / (2.0 * step);
                    let diff = (fd - grad[i]).abs();
                    let tol = 1e-6f64.max(1e-4 * grad[i].abs().max(fd.abs()));
                    assert!(
                        diff <= tol,
                        "seed {seed}: grad {} vs fd {} (diff {diff})",
                        grad[i],
                        fd
                    );
                }
            };
            check(|p| &mut p.w1, &grads.w1);
            check(|p| &mut p.b1, &grads.b1);
            check(|p| &mut p.w2, &grads.w2);
            check(|p| &mut p.b2, &grads.b2);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let cfg = EncoderConfig {
            input_dim: 3,
            hidden_dim: 4,
            embedding_dim: 2,
            seed: 11,
            ..EncoderConfig::default()
        };
        let p = init_params(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.txt");
        save_checkpoint(&p, &path).unwrap();
        let q = load_checkpoint(&path).unwrap();
        assert_eq!(p, q);
    }
}
