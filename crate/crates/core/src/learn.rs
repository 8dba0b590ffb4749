//! Hybrid 1D+2D convolutional classifier over PR matrices, trained from
//! scratch in f64 with hand-written backpropagation, plus a kNN baseline.
//!
//! Architecture: three 3x3 same-padding conv layers (16, 32, 64 filters) with
//! ReLU, one 2x2 max-pool, two more conv layers (128, 256), global average
//! pooling to 256 features; in parallel the flattened n^2 input goes through
//! one affine layer to 256 features. Both halves concatenate to 512 and pass
//! through dense ReLU layers of width 128, 64, 32 with dropout 0.2 each, then
//! an affine layer to the class count and softmax.
//!
//! All parameters live in one flat `Vec<f64>` with a layout derived from
//! `(n, classes)`; gradients mirror it, which keeps Adam, serialization, and
//! the finite-difference gradient check straightforward.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::standard_normal;
use crate::matrices::DistanceMatrix;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("model expects {expected}x{expected} input, got {got}x{got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("invalid model dimensions: n={n}, classes={classes} (need n >= 4, classes >= 2)")]
    InvalidDims { n: usize, classes: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("training needs at least 2 classes, found {0}")]
    TooFewClasses(usize),
    #[error("class {label} has {got} samples; at least {min} required")]
    ClassTooSmall {
        label: String,
        got: usize,
        min: usize,
    },
    #[error("unknown class label {0} (model was trained on different classes)")]
    UnknownLabel(String),
    #[error("non-finite training loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("k={k} exceeds training set size {len}")]
    BadK { k: usize, len: usize },
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error("model file {path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

const KERNEL: usize = 3;
const CONV_CHANNELS: [(usize, usize); 5] = [(1, 16), (16, 32), (32, 64), (64, 128), (128, 256)];
const CONV_FEATURES: usize = 256;
const FLAT_FEATURES: usize = 256;
const FC_WIDTHS: [usize; 3] = [128, 64, 32];
const DROPOUT_RATE: f64 = 0.2;

/// Min-max scaling constants fitted on the training split and applied
/// identically at inference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub lo: f64,
    pub hi: f64,
}

impl Normalization {
    pub fn identity() -> Self {
        Self { lo: 0.0, hi: 1.0 }
    }

    fn apply(&self, v: f64) -> f64 {
        let span = self.hi - self.lo;
        if span > 0.0 {
            (v - self.lo) / span
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    offset: usize,
    len: usize,
}

struct Alloc {
    offset: usize,
}

impl Alloc {
    fn seg(&mut self, len: usize) -> Segment {
        let s = Segment {
            offset: self.offset,
            len,
        };
        self.offset += len;
        s
    }
}

/// Parameter layout derived from (n, classes): offsets of every weight and
/// bias block in the flat parameter vector. Weight blocks precede their bias
/// blocks, which `grads_two` relies on.
#[derive(Debug, Clone)]
struct Layout {
    pooled: usize,
    conv_w: [Segment; 5],
    conv_b: [Segment; 5],
    flat_w: Segment,
    flat_b: Segment,
    fc_w: [Segment; 3],
    fc_b: [Segment; 3],
    out_w: Segment,
    out_b: Segment,
    total: usize,
}

impl Layout {
    fn new(n: usize, classes: usize) -> Self {
        let mut a = Alloc { offset: 0 };
        let conv_w = CONV_CHANNELS.map(|(ci, co)| a.seg(ci * KERNEL * KERNEL * co));
        let conv_b = CONV_CHANNELS.map(|(_, co)| a.seg(co));
        let flat_w = a.seg(n * n * FLAT_FEATURES);
        let flat_b = a.seg(FLAT_FEATURES);
        let mut fc_in = CONV_FEATURES + FLAT_FEATURES;
        let mut fc_w = [Segment { offset: 0, len: 0 }; 3];
        for (i, width) in FC_WIDTHS.iter().enumerate() {
            fc_w[i] = a.seg(fc_in * width);
            fc_in = *width;
        }
        let fc_b = FC_WIDTHS.map(|width| a.seg(width));
        let out_w = a.seg(FC_WIDTHS[2] * classes);
        let out_b = a.seg(classes);
        Layout {
            pooled: n / 2,
            conv_w,
            conv_b,
            flat_w,
            flat_b,
            fc_w,
            fc_b,
            out_w,
            out_b,
            total: a.offset,
        }
    }
}

/// Weights of the two-branch classifier.
#[derive(Debug, Clone)]
pub struct HybridModel {
    pub n: usize,
    pub classes: usize,
    /// Class index -> label; empty until trained (or set by the caller).
    pub class_labels: Vec<String>,
    pub seed: u64,
    pub norm: Normalization,
    params: Vec<f64>,
    layout: Layout,
}

/// He-normal initialization: zero-mean normal with variance 2/fan-in, zero
/// biases; deterministic per seed.
pub fn init_model(n: usize, classes: usize, seed: u64) -> Result<HybridModel, LearnError> {
    if n < 4 || classes < 2 {
        return Err(LearnError::InvalidDims { n, classes });
    }
    let layout = Layout::new(n, classes);
    let mut params = vec![0.0f64; layout.total];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    fn fill_normal(p: &mut [f64], seg: Segment, fan_in: usize, rng: &mut ChaCha8Rng) {
        let std = (2.0 / fan_in as f64).sqrt();
        for v in &mut p[seg.offset..seg.offset + seg.len] {
            *v = std * standard_normal(rng);
        }
    }
    for (i, (ci, _)) in CONV_CHANNELS.iter().enumerate() {
        fill_normal(&mut params, layout.conv_w[i], ci * KERNEL * KERNEL, &mut rng);
    }
    fill_normal(&mut params, layout.flat_w, n * n, &mut rng);
    let mut fc_in = CONV_FEATURES + FLAT_FEATURES;
    for (i, width) in FC_WIDTHS.iter().enumerate() {
        fill_normal(&mut params, layout.fc_w[i], fc_in, &mut rng);
        fc_in = *width;
    }
    fill_normal(&mut params, layout.out_w, FC_WIDTHS[2], &mut rng);

    Ok(HybridModel {
        n,
        classes,
        class_labels: Vec::new(),
        seed,
        norm: Normalization::identity(),
        params,
        layout,
    })
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

struct Tape {
    input: Vec<f64>,
    conv_out: Vec<Vec<f64>>, // post-ReLU, HWC
    pool_out: Vec<f64>,
    pool_argmax: Vec<usize>,
    concat: Vec<f64>,
    fc_out: Vec<Vec<f64>>,       // post ReLU + dropout
    dropout_mask: Vec<Vec<f64>>, // multiplier per unit (1/keep or 0); empty in eval
    logits: Vec<f64>,
}

fn conv_forward(
    input: &[f64],
    h: usize,
    cin: usize,
    cout: usize,
    weights: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let w = h;
    let mut out = vec![0.0f64; h * w * cout];
    for y in 0..h {
        for x in 0..w {
            let o = &mut out[(y * w + x) * cout..][..cout];
            o.copy_from_slice(bias);
            for dy in 0..KERNEL {
                let iy = (y + dy).wrapping_sub(1);
                if iy >= h {
                    continue;
                }
                for dx in 0..KERNEL {
                    let ix = (x + dx).wrapping_sub(1);
                    if ix >= w {
                        continue;
                    }
                    let inp = &input[(iy * w + ix) * cin..][..cin];
                    for (ci, &v) in inp.iter().enumerate() {
                        let wrow = &weights[((ci * KERNEL + dy) * KERNEL + dx) * cout..][..cout];
                        for (oo, &ww) in o.iter_mut().zip(wrow) {
                            *oo += v * ww;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Backward pass of one conv layer; returns d(input) and accumulates weight
/// and bias gradients.
fn conv_backward(
    input: &[f64],
    dout: &[f64],
    h: usize,
    cin: usize,
    cout: usize,
    weights: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
) -> Vec<f64> {
    let w = h;
    let mut din = vec![0.0f64; h * w * cin];
    for y in 0..h {
        for x in 0..w {
            let g = &dout[(y * w + x) * cout..][..cout];
            for (bb, &gg) in gb.iter_mut().zip(g) {
                *bb += gg;
            }
            for dy in 0..KERNEL {
                let iy = (y + dy).wrapping_sub(1);
                if iy >= h {
                    continue;
                }
                for dx in 0..KERNEL {
                    let ix = (x + dx).wrapping_sub(1);
                    if ix >= w {
                        continue;
                    }
                    let in_base = (iy * w + ix) * cin;
                    for ci in 0..cin {
                        let v = input[in_base + ci];
                        let wbase = ((ci * KERNEL + dy) * KERNEL + dx) * cout;
                        let wrow = &weights[wbase..][..cout];
                        let gwrow = &mut gw[wbase..][..cout];
                        let mut dot = 0.0;
                        for co in 0..cout {
                            let gg = g[co];
                            gwrow[co] += v * gg;
                            dot += wrow[co] * gg;
                        }
                        din[in_base + ci] += dot;
                    }
                }
            }
        }
    }
    din
}

fn relu_inplace(v: &mut [f64]) {
    for x in v.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

fn dense_forward(input: &[f64], weights: &[f64], bias: &[f64], out_dim: usize) -> Vec<f64> {
    let mut out = bias.to_vec();
    for (i, &v) in input.iter().enumerate() {
        let wrow = &weights[i * out_dim..][..out_dim];
        for (o, &w) in out.iter_mut().zip(wrow) {
            *o += v * w;
        }
    }
    out
}

fn dense_backward(
    input: &[f64],
    dout: &[f64],
    weights: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
) -> Vec<f64> {
    let out_dim = dout.len();
    for (b, &g) in gb.iter_mut().zip(dout) {
        *b += g;
    }
    let mut din = vec![0.0f64; input.len()];
    for (i, &v) in input.iter().enumerate() {
        let wrow = &weights[i * out_dim..][..out_dim];
        let gwrow = &mut gw[i * out_dim..][..out_dim];
        let mut dot = 0.0;
        for o in 0..out_dim {
            let g = dout[o];
            gwrow[o] += v * g;
            dot += wrow[o] * g;
        }
        din[i] = dot;
    }
    din
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Disjoint mutable views of a weight and its bias segment in the gradient
/// vector; valid because every weight block precedes its bias block.
fn grads_two(grads: &mut [f64], w: Segment, b: Segment) -> (&mut [f64], &mut [f64]) {
    debug_assert!(w.offset + w.len <= b.offset);
    let (left, right) = grads.split_at_mut(b.offset);
    (&mut left[w.offset..w.offset + w.len], &mut right[..b.len])
}

impl HybridModel {
    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Flattened, normalized input from a PR matrix.
    fn prepare_input(&self, pr: &DistanceMatrix) -> Result<Vec<f64>, LearnError> {
        if pr.n() != self.n {
            return Err(LearnError::ShapeMismatch {
                expected: self.n,
                got: pr.n(),
            });
        }
        Ok(pr.values.iter().map(|&v| self.norm.apply(v)).collect())
    }

    fn seg(&self, s: Segment) -> &[f64] {
        &self.params[s.offset..s.offset + s.len]
    }

    /// Full forward pass. Dropout is active only when a rng is supplied.
    fn forward_tape(&self, input: &[f64], mut dropout: Option<&mut ChaCha8Rng>) -> Tape {
        let n = self.n;
        let lay = &self.layout;
        let keep = 1.0 - DROPOUT_RATE;

        // Conv stack A at n x n.
        let mut conv_out: Vec<Vec<f64>> = Vec::with_capacity(5);
        for i in 0..3 {
            let (ci, co) = CONV_CHANNELS[i];
            let src: &[f64] = if i == 0 { input } else { &conv_out[i - 1] };
            let mut out =
                conv_forward(src, n, ci, co, self.seg(lay.conv_w[i]), self.seg(lay.conv_b[i]));
            relu_inplace(&mut out);
            conv_out.push(out);
        }

        // Max pool 2x2 stride 2.
        let p = lay.pooled;
        let channels = CONV_CHANNELS[2].1;
        let a3 = &conv_out[2];
        let mut pool_out = vec![0.0f64; p * p * channels];
        let mut pool_argmax = vec![0usize; p * p * channels];
        for y in 0..p {
            for x in 0..p {
                for c in 0..channels {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let idx = ((2 * y + dy) * n + (2 * x + dx)) * channels + c;
                            if a3[idx] > best {
                                best = a3[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    pool_out[(y * p + x) * channels + c] = best;
                    pool_argmax[(y * p + x) * channels + c] = best_idx;
                }
            }
        }

        // Conv stack B at p x p.
        for i in 3..5 {
            let (ci, co) = CONV_CHANNELS[i];
            let src: &[f64] = if i == 3 { &pool_out } else { &conv_out[i - 1] };
            let mut out =
                conv_forward(src, p, ci, co, self.seg(lay.conv_w[i]), self.seg(lay.conv_b[i]));
            relu_inplace(&mut out);
            conv_out.push(out);
        }

        // Global average pool.
        let pixels = (p * p) as f64;
        let top = &conv_out[4];
        let mut gap = vec![0.0f64; CONV_FEATURES];
        for px in 0..(p * p) {
            for c in 0..CONV_FEATURES {
                gap[c] += top[px * CONV_FEATURES + c];
            }
        }
        for g in gap.iter_mut() {
            *g /= pixels;
        }

        // Flat branch: affine n^2 -> 256.
        let flat_out =
            dense_forward(input, self.seg(lay.flat_w), self.seg(lay.flat_b), FLAT_FEATURES);

        let mut concat = Vec::with_capacity(CONV_FEATURES + FLAT_FEATURES);
        concat.extend_from_slice(&gap);
        concat.extend_from_slice(&flat_out);

        // Dense head with ReLU + dropout.
        let mut fc_out: Vec<Vec<f64>> = Vec::with_capacity(3);
        let mut dropout_mask: Vec<Vec<f64>> = Vec::with_capacity(3);
        for i in 0..3 {
            let src: &[f64] = if i == 0 { &concat } else { &fc_out[i - 1] };
            let mut out =
                dense_forward(src, self.seg(lay.fc_w[i]), self.seg(lay.fc_b[i]), FC_WIDTHS[i]);
            relu_inplace(&mut out);
            if let Some(rng) = dropout.as_deref_mut() {
                let mask: Vec<f64> = (0..out.len())
                    .map(|_| {
                        if rng.gen::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    })
                    .collect();
                for (o, m) in out.iter_mut().zip(&mask) {
                    *o *= m;
                }
                dropout_mask.push(mask);
            }
            fc_out.push(out);
        }

        let logits =
            dense_forward(&fc_out[2], self.seg(lay.out_w), self.seg(lay.out_b), self.classes);

        Tape {
            input: input.to_vec(),
            conv_out,
            pool_out,
            pool_argmax,
            concat,
            fc_out,
            dropout_mask,
            logits,
        }
    }

    /// Cross-entropy loss and parameter gradients (accumulated into `grads`).
    fn backward(&self, tape: &Tape, label: usize, grads: &mut [f64]) -> f64 {
        let lay = &self.layout;
        let n = self.n;
        let p = lay.pooled;
        let probs = softmax(&tape.logits);
        let loss = -probs[label].max(1e-300).ln();

        let mut dlogits = probs;
        dlogits[label] -= 1.0;

        // Output layer.
        let mut dhead = {
            let (gw, gb) = grads_two(grads, lay.out_w, lay.out_b);
            dense_backward(&tape.fc_out[2], &dlogits, self.seg(lay.out_w), gw, gb)
        };

        // Dense head in reverse: dropout, then ReLU, then the affine map.
        for i in (0..3).rev() {
            if !tape.dropout_mask.is_empty() {
                for (d, m) in dhead.iter_mut().zip(&tape.dropout_mask[i]) {
                    *d *= m;
                }
            }
            for (d, &o) in dhead.iter_mut().zip(&tape.fc_out[i]) {
                if o == 0.0 {
                    *d = 0.0;
                }
            }
            let input: &[f64] = if i == 0 { &tape.concat } else { &tape.fc_out[i - 1] };
            let (gw, gb) = grads_two(grads, lay.fc_w[i], lay.fc_b[i]);
            dhead = dense_backward(input, &dhead, self.seg(lay.fc_w[i]), gw, gb);
        }

        let (dgap, dflat) = dhead.split_at(CONV_FEATURES);

        // Flat branch backward; d(input) of the branch is not needed.
        {
            let (gw, gb) = grads_two(grads, lay.flat_w, lay.flat_b);
            let _ = dense_backward(&tape.input, dflat, self.seg(lay.flat_w), gw, gb);
        }

        // GAP backward into the top conv activation.
        let pixels = (p * p) as f64;
        let mut dcur = vec![0.0f64; p * p * CONV_FEATURES];
        for px in 0..(p * p) {
            for c in 0..CONV_FEATURES {
                dcur[px * CONV_FEATURES + c] = dgap[c] / pixels;
            }
        }

        // Conv stack B backward.
        for i in (3..5).rev() {
            let (ci, co) = CONV_CHANNELS[i];
            for (d, &o) in dcur.iter_mut().zip(&tape.conv_out[i]) {
                if o == 0.0 {
                    *d = 0.0;
                }
            }
            let input: &[f64] = if i == 3 { &tape.pool_out } else { &tape.conv_out[i - 1] };
            let (gw, gb) = grads_two(grads, lay.conv_w[i], lay.conv_b[i]);
            dcur = conv_backward(input, &dcur, p, ci, co, self.seg(lay.conv_w[i]), gw, gb);
        }

        // Pool backward: route gradient to each window's argmax.
        let mut dpool_in = vec![0.0f64; n * n * CONV_CHANNELS[2].1];
        for (out_idx, &in_idx) in tape.pool_argmax.iter().enumerate() {
            dpool_in[in_idx] += dcur[out_idx];
        }
        dcur = dpool_in;

        // Conv stack A backward.
        for i in (0..3).rev() {
            let (ci, co) = CONV_CHANNELS[i];
            for (d, &o) in dcur.iter_mut().zip(&tape.conv_out[i]) {
                if o == 0.0 {
                    *d = 0.0;
                }
            }
            let input: &[f64] = if i == 0 { &tape.input } else { &tape.conv_out[i - 1] };
            let (gw, gb) = grads_two(grads, lay.conv_w[i], lay.conv_b[i]);
            dcur = conv_backward(input, &dcur, n, ci, co, self.seg(lay.conv_w[i]), gw, gb);
        }

        loss
    }
}

/// Class probabilities for one PR matrix. Dropout is drawn from `seed` when
/// `train_mode` is set; eval mode is deterministic.
pub fn forward(
    model: &HybridModel,
    pr: &DistanceMatrix,
    train_mode: bool,
    seed: u64,
) -> Result<Vec<f64>, LearnError> {
    let input = model.prepare_input(pr)?;
    let tape = if train_mode {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        model.forward_tape(&input, Some(&mut rng))
    } else {
        model.forward_tape(&input, None)
    };
    Ok(softmax(&tape.logits))
}

/// Pre-softmax logits (eval mode unless a dropout seed is supplied); used by
/// the dropout-expectation and permutation-sensitivity checks.
pub fn forward_logits(
    model: &HybridModel,
    pr: &DistanceMatrix,
    dropout_seed: Option<u64>,
) -> Result<Vec<f64>, LearnError> {
    let input = model.prepare_input(pr)?;
    let tape = match dropout_seed {
        Some(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            model.forward_tape(&input, Some(&mut rng))
        }
        None => model.forward_tape(&input, None),
    };
    Ok(tape.logits)
}

/// Loss and full analytic gradient for one sample, dropout disabled.
pub fn loss_and_grads(
    model: &HybridModel,
    pr: &DistanceMatrix,
    label: usize,
) -> Result<(f64, Vec<f64>), LearnError> {
    let input = model.prepare_input(pr)?;
    let tape = model.forward_tape(&input, None);
    let mut grads = vec![0.0f64; model.param_count()];
    let loss = model.backward(&tape, label, &mut grads);
    Ok((loss, grads))
}

fn loss_only(model: &HybridModel, input: &[f64], label: usize) -> f64 {
    let tape = model.forward_tape(input, None);
    let probs = softmax(&tape.logits);
    -probs[label].max(1e-300).ln()
}

/// Compare analytic gradients against central finite differences (step 1e-5)
/// over `samples` randomly chosen parameters; returns the maximum relative
/// error. Parameters where both gradients are tiny are judged by an absolute
/// criterion of 1e-7 instead of the ratio, since finite-difference noise
/// dominates there.
pub fn gradient_check(
    model: &HybridModel,
    pr: &DistanceMatrix,
    label: usize,
    samples: usize,
    seed: u64,
) -> Result<f64, LearnError> {
    let (_, analytic) = loss_and_grads(model, pr, label)?;
    gradient_check_against(model, pr, label, &analytic, samples, seed)
}

/// Same as [`gradient_check`] but against a caller-supplied gradient vector,
/// so a corrupted gradient can be shown to trip the check.
pub fn gradient_check_against(
    model: &HybridModel,
    pr: &DistanceMatrix,
    label: usize,
    analytic: &[f64],
    samples: usize,
    seed: u64,
) -> Result<f64, LearnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = model.param_count();
    let indices: Vec<usize> = (0..samples).map(|_| rng.gen_range(0..count)).collect();
    gradient_check_indices(model, pr, label, analytic, &indices)
}

/// Finite-difference comparison restricted to specific parameter indices.
pub fn gradient_check_indices(
    model: &HybridModel,
    pr: &DistanceMatrix,
    label: usize,
    analytic: &[f64],
    indices: &[usize],
) -> Result<f64, LearnError> {
    let input = model.prepare_input(pr)?;
    let mut probe = model.clone();
    let h = 1e-5;
    let mut max_rel: f64 = 0.0;
    for &idx in indices {
        let orig = probe.params[idx];
        let central = |probe: &mut HybridModel, step: f64| {
            probe.params[idx] = orig + step;
            let up = loss_only(probe, &input, label);
            probe.params[idx] = orig - step;
            let down = loss_only(probe, &input, label);
            probe.params[idx] = orig;
            (up - down) / (2.0 * step)
        };
        let numeric = central(&mut probe, h);
        let refined = central(&mut probe, h / 2.0);
        // For a smooth loss the two step sizes agree to O(h^2); a large gap
        // means the perturbation crosses a ReLU kink, where the finite
        // difference itself is invalid as a referee. Such parameters are
        // excluded, like the zero-gradient case below.
        let fd_scale = numeric.abs().max(refined.abs());
        if fd_scale > 1e-8 && (numeric - refined).abs() > 1e-3 * fd_scale {
            continue;
        }
        let a = analytic[idx];
        let denom = a.abs().max(refined.abs());
        // Central differences at h=1e-5 carry ~1e-10 absolute noise, so the
        // ratio is meaningless for tiny gradients (ReLU-dead paths); those
        // fall back to an absolute criterion that still catches corruption.
        let err = if denom < 1e-5 {
            if (a - refined).abs() > 1e-7 {
                1.0
            } else {
                0.0
            }
        } else {
            (a - refined).abs() / denom
        };
        max_rel = max_rel.max(err);
    }
    Ok(max_rel)
}

/// Index of the first output-layer bias parameter; used by tests that corrupt
/// a gradient on purpose.
pub fn output_bias_index(model: &HybridModel) -> usize {
    model.layout.out_b.offset
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Fraction of each class assigned to the training split.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 1e-3,
            batch_size: 8,
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), LearnError> {
        if self.epochs == 0 {
            return Err(LearnError::InvalidConfig("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(LearnError::InvalidConfig("learning rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(LearnError::InvalidConfig("batch size must be >= 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(LearnError::InvalidConfig(
                "train fraction must be in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainMetrics {
    /// Mean training loss before any update.
    pub initial_loss: f64,
    /// Mean training loss per epoch.
    pub epoch_loss: Vec<f64>,
    pub train_accuracy: f64,
    /// Accuracy on the held-out split; trivially 1.0 when the split is empty.
    pub test_accuracy: f64,
    pub train_size: usize,
    pub test_size: usize,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
    lr: f64,
}

impl Adam {
    fn new(count: usize, lr: f64) -> Self {
        Adam {
            m: vec![0.0; count],
            v: vec![0.0; count],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let bc1 = 1.0 - B1.powi(self.t as i32);
        let bc2 = 1.0 - B2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * g;
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * g * g;
            params[i] -= self.lr * (self.m[i] / bc1) / ((self.v[i] / bc2).sqrt() + EPS);
        }
    }
}

fn shuffle<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

/// Sorted distinct labels; indices into this list are the class ids.
fn class_index(dataset: &[(DistanceMatrix, String)]) -> Vec<String> {
    let mut labels: Vec<String> = dataset.iter().map(|(_, l)| l.clone()).collect();
    labels.sort();
    labels.dedup();
    labels
}

/// Deterministic stratified split: (train indices, test indices).
fn stratified_split(
    dataset: &[(DistanceMatrix, String)],
    labels: &[String],
    train_fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for label in labels {
        let mut members: Vec<usize> = dataset
            .iter()
            .enumerate()
            .filter(|(_, (_, l))| l == label)
            .map(|(i, _)| i)
            .collect();
        shuffle(&mut members, &mut rng);
        let test_count = (((1.0 - train_fraction) * members.len() as f64).round() as usize)
            .min(members.len().saturating_sub(1));
        test_idx.extend_from_slice(&members[..test_count]);
        train_idx.extend_from_slice(&members[test_count..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    (train_idx, test_idx)
}

/// Held-out indices for a (dataset, config); the same split [`train`] makes,
/// so baselines can score identical samples.
pub fn heldout_indices(dataset: &[(DistanceMatrix, String)], config: &TrainConfig) -> Vec<usize> {
    let labels = class_index(dataset);
    stratified_split(dataset, &labels, config.train_fraction, config.seed).1
}

/// Train the hybrid model on labeled PR matrices with a stratified split.
/// Deterministic for a fixed (dataset, config): batch order and the dropout
/// stream both derive from the config seed.
pub fn train(
    dataset: &[(DistanceMatrix, String)],
    config: &TrainConfig,
) -> Result<(HybridModel, TrainMetrics), LearnError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(LearnError::EmptyDataset);
    }
    let labels = class_index(dataset);
    if labels.len() < 2 {
        return Err(LearnError::TooFewClasses(labels.len()));
    }
    let n = dataset[0].0.n();
    for (m, _) in dataset {
        if m.n() != n {
            return Err(LearnError::ShapeMismatch {
                expected: n,
                got: m.n(),
            });
        }
    }
    // A held-out split needs enough per-class data to be meaningful.
    let min_per_class = if config.train_fraction < 1.0 { 5 } else { 1 };
    for label in &labels {
        let got = dataset.iter().filter(|(_, l)| l == label).count();
        if got < min_per_class {
            return Err(LearnError::ClassTooSmall {
                label: label.clone(),
                got,
                min: min_per_class,
            });
        }
    }

    let (train_idx, test_idx) =
        stratified_split(dataset, &labels, config.train_fraction, config.seed);

    // Normalization constants from the training split only.
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &i in &train_idx {
        for &v in &dataset[i].0.values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let mut model = init_model(n, labels.len(), config.seed)?;
    model.class_labels = labels.clone();
    model.norm = Normalization { lo, hi };

    let inputs: Vec<Vec<f64>> = dataset
        .iter()
        .map(|(m, _)| m.values.iter().map(|&v| model.norm.apply(v)).collect())
        .collect();
    let targets: Vec<usize> = dataset
        .iter()
        .map(|(_, l)| labels.iter().position(|x| x == l).expect("label indexed"))
        .collect();

    let mut train_rng = ChaCha8Rng::seed_from_u64(config.seed);
    train_rng.set_stream(2);
    let mut adam = Adam::new(model.param_count(), config.learning_rate);
    let mut grads = vec![0.0f64; model.param_count()];

    let initial_loss = train_idx
        .iter()
        .map(|&i| loss_only(&model, &inputs[i], targets[i]))
        .sum::<f64>()
        / train_idx.len() as f64;

    let mut epoch_loss = Vec::with_capacity(config.epochs);
    let mut order = train_idx.clone();
    for epoch in 0..config.epochs {
        shuffle(&mut order, &mut train_rng);
        let mut epoch_total = 0.0;
        for batch in order.chunks(config.batch_size) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let mut batch_loss = 0.0;
            for &i in batch {
                let tape = model.forward_tape(&inputs[i], Some(&mut train_rng));
                batch_loss += model.backward(&tape, targets[i], &mut grads);
            }
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| *g *= scale);
            adam.step(&mut model.params, &grads);
            epoch_total += batch_loss;
        }
        let mean = epoch_total / train_idx.len() as f64;
        if !mean.is_finite() {
            return Err(LearnError::NonFiniteLoss { epoch });
        }
        epoch_loss.push(mean);
    }

    let accuracy_over = |idx: &[usize]| -> f64 {
        if idx.is_empty() {
            return 1.0;
        }
        let correct = idx
            .iter()
            .filter(|&&i| {
                let tape = model.forward_tape(&inputs[i], None);
                argmax(&tape.logits) == targets[i]
            })
            .count();
        correct as f64 / idx.len() as f64
    };

    let metrics = TrainMetrics {
        initial_loss,
        train_accuracy: accuracy_over(&train_idx),
        test_accuracy: accuracy_over(&test_idx),
        epoch_loss,
        train_size: train_idx.len(),
        test_size: test_idx.len(),
    };
    Ok((model, metrics))
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Evaluation and baseline
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalMetrics {
    pub accuracy: f64,
    /// confusion[true_class][predicted_class]
    pub confusion: Vec<Vec<usize>>,
    pub per_class: Vec<ClassMetrics>,
}

/// Eval-mode metrics of a trained model on labeled PR matrices.
pub fn evaluate(
    model: &HybridModel,
    dataset: &[(DistanceMatrix, String)],
) -> Result<EvalMetrics, LearnError> {
    if dataset.is_empty() {
        return Err(LearnError::EmptyDataset);
    }
    let k = model.class_labels.len();
    let mut confusion = vec![vec![0usize; k]; k];
    for (m, label) in dataset {
        let truth = model
            .class_labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| LearnError::UnknownLabel(label.clone()))?;
        let probs = forward(model, m, false, 0)?;
        confusion[truth][argmax(&probs)] += 1;
    }
    let total: usize = confusion.iter().flatten().sum();
    let correct: usize = (0..k).map(|i| confusion[i][i]).sum();
    let per_class = model
        .class_labels
        .iter()
        .enumerate()
        .map(|(i, label)| {
            let predicted: usize = (0..k).map(|t| confusion[t][i]).sum();
            let actual: usize = confusion[i].iter().sum();
            ClassMetrics {
                label: label.clone(),
                precision: if predicted == 0 {
                    0.0
                } else {
                    confusion[i][i] as f64 / predicted as f64
                },
                recall: if actual == 0 {
                    0.0
                } else {
                    confusion[i][i] as f64 / actual as f64
                },
            }
        })
        .collect();
    Ok(EvalMetrics {
        accuracy: correct as f64 / total as f64,
        confusion,
        per_class,
    })
}

/// Majority vote among the k nearest training matrices under Frobenius
/// distance; ties break toward the label with the smallest mean distance.
pub fn knn_baseline(
    train_set: &[(DistanceMatrix, String)],
    test_pr: &DistanceMatrix,
    k: usize,
) -> Result<String, LearnError> {
    if train_set.is_empty() {
        return Err(LearnError::EmptyDataset);
    }
    if k == 0 || k > train_set.len() {
        return Err(LearnError::BadK {
            k,
            len: train_set.len(),
        });
    }
    let mut scored: Vec<(f64, &str)> = train_set
        .iter()
        .map(|(m, label)| {
            m.frobenius_distance(test_pr)
                .map(|d| (d, label.as_str()))
                .ok_or(LearnError::ShapeMismatch {
                    expected: test_pr.n(),
                    got: m.n(),
                })
        })
        .collect::<Result<_, _>>()?;
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
    let nearest = &scored[..k];

    let mut tally: Vec<(&str, usize, f64)> = Vec::new(); // label, votes, total dist
    for &(d, label) in nearest {
        match tally.iter_mut().find(|(l, _, _)| *l == label) {
            Some(entry) => {
                entry.1 += 1;
                entry.2 += d;
            }
            None => tally.push((label, 1, d)),
        }
    }
    for entry in tally.iter_mut() {
        entry.2 /= entry.1 as f64;
    }
    tally.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.total_cmp(&b.2)).then(a.0.cmp(b.0)));
    Ok(tally[0].0.to_string())
}

// ---------------------------------------------------------------------------
// Model file
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    n: usize,
    classes: usize,
    class_labels: Vec<String>,
    seed: u64,
    norm: Normalization,
    params: Vec<f64>,
}

pub fn save_model(model: &HybridModel, path: &Path) -> Result<(), LearnError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| LearnError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    let file = ModelFile {
        format: "hybrid-cnn/1".into(),
        n: model.n,
        classes: model.classes,
        class_labels: model.class_labels.clone(),
        seed: model.seed,
        norm: model.norm,
        params: model.params.clone(),
    };
    let json = serde_json::to_string(&file).expect("model serializes");
    std::fs::write(path, json).map_err(|source| LearnError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<HybridModel, LearnError> {
    let raw = std::fs::read_to_string(path).map_err(|source| LearnError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let file: ModelFile = serde_json::from_str(&raw).map_err(|e| LearnError::Malformed {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if file.format != "hybrid-cnn/1" {
        return Err(LearnError::Malformed {
            path: path.to_path_buf(),
            message: format!("unknown format {}", file.format),
        });
    }
    let layout = Layout::new(file.n, file.classes);
    if file.params.len() != layout.total {
        return Err(LearnError::Malformed {
            path: path.to_path_buf(),
            message: format!(
                "parameter count {} does not match architecture ({} expected)",
                file.params.len(),
                layout.total
            ),
        });
    }
    Ok(HybridModel {
        n: file.n,
        classes: file.classes,
        class_labels: file.class_labels,
        seed: file.seed,
        norm: file.norm,
        params: file.params,
        layout,
    })
}
