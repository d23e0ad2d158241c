//! Fixed-family convolutional network: `conv_layers` same-padded 5×5
//! convolutions with leaky-rectifier activations, one 2×2 max-pool, and a
//! dense head producing J+1 logits.
//!
//! Parameters live in one flat vector, in this order:
//! for each conv layer, weights `[out][in][ky][kx]` then bias `[out]`;
//! then dense weights `[class][feature]` and dense bias `[class]`. Pooled
//! features are flattened channel-major (`[channel][y][x]`).

use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::grid::ImageGrid;
use crate::neuralnet::real::{gemm, Real};
use crate::rng::Rng;

pub const ALLOWED_DEPTHS: [usize; 6] = [1, 3, 5, 7, 9, 11];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Architecture {
    pub conv_layers: usize,
    pub filters: usize,
    pub kernel: usize,
    pub leaky_slope: f64,
    pub input_width: usize,
    pub input_height: usize,
    /// J + 1 output classes.
    pub classes: usize,
}

impl Architecture {
    /// 32 filters of 5×5, leaky slope 0.01.
    pub fn new(conv_layers: usize, input_width: usize, input_height: usize, locations: usize) -> Self {
        Self {
            conv_layers,
            filters: 32,
            kernel: 5,
            leaky_slope: 0.01,
            input_width,
            input_height,
            classes: locations + 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !ALLOWED_DEPTHS.contains(&self.conv_layers) {
            return Err(invalid(
                "conv_layers",
                format!("{} not in {ALLOWED_DEPTHS:?}", self.conv_layers),
            ));
        }
        if self.filters == 0 || self.kernel.is_multiple_of(2) {
            return Err(invalid("architecture", "need filters > 0 and an odd kernel"));
        }
        if self.input_width < 2 || self.input_height < 2 {
            return Err(invalid("architecture", "input must be at least 2x2"));
        }
        if self.classes < 2 {
            return Err(invalid("architecture", "need at least two classes"));
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return Err(invalid("leaky_slope", "must be in [0, 1)"));
        }
        Ok(())
    }

    pub fn pooled_width(&self) -> usize {
        self.input_width / 2
    }

    pub fn pooled_height(&self) -> usize {
        self.input_height / 2
    }

    pub fn feature_count(&self) -> usize {
        self.filters * self.pooled_width() * self.pooled_height()
    }

    pub fn layout(&self) -> Layout {
        let kk = self.kernel * self.kernel;
        let mut conv = Vec::with_capacity(self.conv_layers);
        let mut offset = 0;
        for l in 0..self.conv_layers {
            let inputs = if l == 0 { 1 } else { self.filters };
            let weights = offset;
            offset += self.filters * inputs * kk;
            let bias = offset;
            offset += self.filters;
            conv.push(ConvSlot {
                inputs,
                weights,
                bias,
            });
        }
        let dense_weights = offset;
        offset += self.classes * self.feature_count();
        let dense_bias = offset;
        offset += self.classes;
        Layout {
            conv,
            dense_weights,
            dense_bias,
            total: offset,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layout().total
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvSlot {
    pub inputs: usize,
    pub weights: usize,
    pub bias: usize,
}

/// Offsets of every parameter block in the flat vector.
#[derive(Debug, Clone)]
pub struct Layout {
    pub conv: Vec<ConvSlot>,
    pub dense_weights: usize,
    pub dense_bias: usize,
    pub total: usize,
}

/// Weights, Adam moments, step counter and input normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState<T: Real> {
    pub arch: Architecture,
    pub params: Vec<T>,
    pub first_moment: Vec<T>,
    pub second_moment: Vec<T>,
    pub step: u64,
    pub input_mean: f64,
    pub input_std: f64,
}

impl<T: Real> NetworkState<T> {
    /// Fan-in scaled uniform initialization; biases start at zero.
    pub fn init(arch: Architecture, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
        let layout = arch.layout();
        let mut params = vec![T::zero(); layout.total];
        let kk = arch.kernel * arch.kernel;
        for slot in &layout.conv {
            let fan_in = (slot.inputs * kk) as f64;
            let bound = (6.0 / fan_in).sqrt();
            for p in &mut params[slot.weights..slot.bias] {
                *p = T::from_f64((rng.random::<f64>() * 2.0 - 1.0) * bound);
            }
        }
        let bound = (1.0 / arch.feature_count() as f64).sqrt();
        for p in &mut params[layout.dense_weights..layout.dense_bias] {
            *p = T::from_f64((rng.random::<f64>() * 2.0 - 1.0) * bound);
        }
        Ok(Self::from_params(arch, params))
    }

    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        Ok(Self::from_params(arch, vec![T::zero(); arch.parameter_count()]))
    }

    pub fn from_params(arch: Architecture, params: Vec<T>) -> Self {
        let n = params.len();
        Self {
            arch,
            params,
            first_moment: vec![T::zero(); n],
            second_moment: vec![T::zero(); n],
            step: 0,
            input_mean: 0.0,
            input_std: 1.0,
        }
    }

    pub fn set_normalization(&mut self, mean: f64, std: f64) -> Result<()> {
        if !(std > 0.0 && std.is_finite() && mean.is_finite()) {
            return Err(invalid("normalization", "std must be positive and finite"));
        }
        self.input_mean = mean;
        self.input_std = std;
        Ok(())
    }

    fn check_input(&self, g: &ImageGrid) -> Result<()> {
        if g.width() != self.arch.input_width || g.height() != self.arch.input_height {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.arch.input_width, self.arch.input_height),
                got: format!("{}x{}", g.width(), g.height()),
            });
        }
        Ok(())
    }

    fn normalized(&self, g: &ImageGrid) -> Vec<T> {
        let inv = 1.0 / self.input_std;
        g.pixels()
            .iter()
            .map(|&v| T::from_f64((v as f64 - self.input_mean) * inv))
            .collect()
    }

    /// Logits and softmax posteriors for one image.
    pub fn forward(&self, g: &ImageGrid) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_input(g)?;
        let layout = self.arch.layout();
        let trace = forward_trace(&self.arch, &layout, &self.params, self.normalized(g));
        let logits: Vec<f64> = trace.logits.iter().map(|v| v.as_f64()).collect();
        let post = softmax(&logits);
        Ok((logits, post))
    }

    /// Distance from the nearest point where the network is not
    /// differentiable in its parameters: the smallest |pre-activation| and
    /// the smallest gap between a pooled maximum and its runner-up.
    pub fn kink_margin(&self, g: &ImageGrid) -> Result<f64> {
        self.check_input(g)?;
        let arch = &self.arch;
        let t = forward_trace(arch, &arch.layout(), &self.params, self.normalized(g));
        let mut margin = f64::INFINITY;
        for z in t.pre.iter().flatten() {
            margin = margin.min(z.as_f64().abs());
        }
        let last = t.pre.last().expect("at least one conv layer");
        let (w, hw) = (arch.input_width, arch.input_width * arch.input_height);
        for c in 0..arch.filters {
            for py in 0..arch.pooled_height() {
                for px in 0..arch.pooled_width() {
                    let mut v: Vec<f64> = [(0, 0), (0, 1), (1, 0), (1, 1)]
                        .iter()
                        .map(|(dy, dx)| last[c * hw + (2 * py + dy) * w + 2 * px + dx].as_f64())
                        .collect();
                    v.sort_by(|a, b| b.total_cmp(a));
                    margin = margin.min(v[0] - v[1]);
                }
            }
        }
        Ok(margin)
    }
}

/// Numerically stable softmax (max logit subtracted).
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// ln softmax(z)_y, stable.
pub fn log_softmax_at(z: &[f64], y: usize) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z[y] - lse
}

/// ∂(-ln softmax(z)_y)/∂z = softmax(z) - onehot(y).
pub fn logit_gradient(z: &[f64], y: usize) -> Vec<f64> {
    let mut p = softmax(z);
    p[y] -= 1.0;
    p
}

struct Trace<T> {
    /// Input of each conv layer (C×H×W).
    inputs: Vec<Vec<T>>,
    /// Pre-activation of each conv layer (F×H×W).
    pre: Vec<Vec<T>>,
    /// Index (within the last activation) selected by each pooled unit.
    pool_argmax: Vec<usize>,
    features: Vec<T>,
    logits: Vec<T>,
}

fn im2col<T: Real>(input: &[T], channels: usize, w: usize, h: usize, k: usize, col: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = w * h;
    for c in 0..channels {
        let plane = &input[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((c * k + ky) * k + kx) * hw..][..hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    let out = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    for (x, o) in out.iter_mut().enumerate() {
                        let sx = x as isize + dx;
                        *o = if sx < 0 || sx >= w as isize {
                            T::zero()
                        } else {
                            src[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(col: &[T], channels: usize, w: usize, h: usize, k: usize, out: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = w * h;
    out.iter_mut().for_each(|v| *v = T::zero());
    for c in 0..channels {
        let plane = &mut out[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((c * k + ky) * k + kx) * hw..][..hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x as isize + dx;
                        if sx >= 0 && sx < w as isize {
                            plane[sy as usize * w + sx as usize] = plane[sy as usize * w + sx as usize] + row[y * w + x];
                        }
                    }
                }
            }
        }
    }
}

fn forward_trace<T: Real>(arch: &Architecture, layout: &Layout, params: &[T], input: Vec<T>) -> Trace<T> {
    let (w, h, k) = (arch.input_width, arch.input_height, arch.kernel);
    let hw = w * h;
    let f = arch.filters;
    let slope = T::from_f64(arch.leaky_slope);
    let mut inputs = Vec::with_capacity(arch.conv_layers);
    let mut pre = Vec::with_capacity(arch.conv_layers);
    let mut x = input;
    let mut col = Vec::new();
    for slot in &layout.conv {
        let ckk = slot.inputs * k * k;
        col.resize(ckk * hw, T::zero());
        im2col(&x, slot.inputs, w, h, k, &mut col);
        let mut z = vec![T::zero(); f * hw];
        for (o, plane) in z.chunks_mut(hw).enumerate() {
            let b = params[slot.bias + o];
            plane.iter_mut().for_each(|v| *v = b);
        }
        gemm(f, ckk, hw, &params[slot.weights..slot.bias], false, &col, false, &mut z, T::one());
        let act: Vec<T> = z.iter().map(|&v| if v > T::zero() { v } else { v * slope }).collect();
        inputs.push(std::mem::replace(&mut x, act));
        pre.push(z);
    }
    let (pw, ph) = (arch.pooled_width(), arch.pooled_height());
    let mut features = Vec::with_capacity(f * pw * ph);
    let mut pool_argmax = Vec::with_capacity(f * pw * ph);
    for c in 0..f {
        let plane = &x[c * hw..(c + 1) * hw];
        for py in 0..ph {
            for px in 0..pw {
                let mut best = (2 * py) * w + 2 * px;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = (2 * py + dy) * w + 2 * px + dx;
                    if plane[idx] > plane[best] {
                        best = idx;
                    }
                }
                features.push(plane[best]);
                pool_argmax.push(c * hw + best);
            }
        }
    }
    let p = features.len();
    let mut logits: Vec<T> = params[layout.dense_bias..layout.dense_bias + arch.classes].to_vec();
    gemm(
        arch.classes,
        p,
        1,
        &params[layout.dense_weights..layout.dense_bias],
        false,
        &features,
        false,
        &mut logits,
        T::one(),
    );
    Trace {
        inputs,
        pre,
        pool_argmax,
        features,
        logits,
    }
}

/// Accumulates `weight · ∂loss/∂θ` into `grad` given ∂loss/∂z.
fn backward<T: Real>(
    arch: &Architecture,
    layout: &Layout,
    params: &[T],
    trace: &Trace<T>,
    dlogits: &[T],
    grad: &mut [T],
) {
    let (w, h, k) = (arch.input_width, arch.input_height, arch.kernel);
    let hw = w * h;
    let f = arch.filters;
    let p = trace.features.len();
    let slope = T::from_f64(arch.leaky_slope);
    // dense head
    {
        let (dw, rest) = grad[layout.dense_weights..].split_at_mut(layout.dense_bias - layout.dense_weights);
        gemm(arch.classes, 1, p, dlogits, false, &trace.features, false, dw, T::one());
        for (b, &d) in rest[..arch.classes].iter_mut().zip(dlogits) {
            *b = *b + d;
        }
    }
    let mut dfeat = vec![T::zero(); p];
    gemm(
        1,
        arch.classes,
        p,
        dlogits,
        false,
        &params[layout.dense_weights..layout.dense_bias],
        false,
        &mut dfeat,
        T::zero(),
    );
    // unpool into the last activation
    let mut dact = vec![T::zero(); f * hw];
    for (&idx, &d) in trace.pool_argmax.iter().zip(&dfeat) {
        dact[idx] = dact[idx] + d;
    }
    let mut col = Vec::new();
    let mut dcol = Vec::new();
    for (l, slot) in layout.conv.iter().enumerate().rev() {
        // through the activation
        let dz: Vec<T> = dact
            .iter()
            .zip(&trace.pre[l])
            .map(|(&d, &z)| if z > T::zero() { d } else { d * slope })
            .collect();
        let ckk = slot.inputs * k * k;
        col.resize(ckk * hw, T::zero());
        im2col(&trace.inputs[l], slot.inputs, w, h, k, &mut col);
        {
            let (dw, db) = grad[slot.weights..slot.bias + f].split_at_mut(slot.bias - slot.weights);
            gemm(f, hw, ckk, &dz, false, &col, true, dw, T::one());
            for (o, plane) in dz.chunks(hw).enumerate() {
                db[o] = db[o] + plane.iter().copied().sum::<T>();
            }
        }
        if l == 0 {
            break;
        }
        dcol.resize(ckk * hw, T::zero());
        gemm(ckk, f, hw, &params[slot.weights..slot.bias], true, &dz, false, &mut dcol, T::zero());
        dact.resize(slot.inputs * hw, T::zero());
        col2im(&dcol, slot.inputs, w, h, k, &mut dact);
    }
}

/// Samples per parallel work unit; fixed so results do not depend on the
/// thread count.
const CHUNK: usize = 8;

/// Weighted cross-entropy Σ_i weight_i·(-ln Pr(H_{y_i}|g_i)) and its gradient.
pub fn weighted_loss_and_gradient<T: Real>(
    batch: &[(&ImageGrid, usize)],
    weights: &[f64],
    state: &NetworkState<T>,
) -> Result<(f64, Vec<T>)> {
    if batch.is_empty() || batch.len() != weights.len() {
        return Err(invalid("batch", "need a nonempty batch with one weight per sample"));
    }
    for (g, y) in batch {
        state.check_input(g)?;
        if *y >= state.arch.classes {
            return Err(Error::LabelOutOfRange {
                label: *y,
                max: state.arch.classes - 1,
            });
        }
    }
    let arch = state.arch;
    let layout = arch.layout();
    let partials: Vec<(f64, Vec<T>)> = batch
        .par_chunks(CHUNK)
        .zip(weights.par_chunks(CHUNK))
        .map(|(samples, ws)| {
            let mut grad = vec![T::zero(); layout.total];
            let mut loss = 0.0;
            for ((g, y), &wt) in samples.iter().zip(ws) {
                let trace = forward_trace(&arch, &layout, &state.params, state.normalized(g));
                let z: Vec<f64> = trace.logits.iter().map(|v| v.as_f64()).collect();
                loss -= wt * log_softmax_at(&z, *y);
                let dz: Vec<T> = logit_gradient(&z, *y)
                    .into_iter()
                    .map(|d| T::from_f64(d * wt))
                    .collect();
                backward(&arch, &layout, &state.params, &trace, &dz, &mut grad);
            }
            (loss, grad)
        })
        .collect();
    let mut total = vec![T::zero(); layout.total];
    let mut loss = 0.0;
    for (l, g) in partials {
        loss += l;
        for (t, v) in total.iter_mut().zip(g) {
            *t = *t + v;
        }
    }
    Ok((loss, total))
}

/// Mean cross-entropy over the batch and its gradient.
pub fn loss_and_gradient<T: Real>(
    batch: &[(&ImageGrid, usize)],
    state: &NetworkState<T>,
) -> Result<(f64, Vec<T>)> {
    let w = vec![1.0 / batch.len().max(1) as f64; batch.len()];
    weighted_loss_and_gradient(batch, &w, state)
}

/// Mean cross-entropy without gradients.
pub fn mean_cross_entropy<T: Real>(
    samples: &[(ImageGrid, usize)],
    state: &NetworkState<T>,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(invalid("samples", "empty evaluation set"));
    }
    let losses: Result<Vec<f64>> = samples
        .par_iter()
        .map(|(g, y)| {
            let (z, _) = state.forward(g)?;
            if *y >= z.len() {
                return Err(Error::LabelOutOfRange {
                    label: *y,
                    max: z.len() - 1,
                });
            }
            Ok(-log_softmax_at(&z, *y))
        })
        .collect();
    Ok(losses?.iter().sum::<f64>() / samples.len() as f64)
}
