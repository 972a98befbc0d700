use super::scalar::{gemm, Scalar, View};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ShapeError {
    #[error("observation has {got} values, network expects {expected}")]
    Input { expected: usize, got: usize },
    #[error("invalid architecture: {0}")]
    Arch(String),
}

/// Network shape: two convolutions, two hidden dense layers, policy and value heads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchSpec {
    pub in_channels: usize,
    pub side: usize,
    pub conv_channels: usize,
    pub kernel: usize,
    pub strides: [usize; 2],
    pub hidden: usize,
    pub n_actions: usize,
}

/// Tensor slots in parameter order.
pub const TENSOR_NAMES: [&str; 12] = [
    "conv1.weight",
    "conv1.bias",
    "conv2.weight",
    "conv2.bias",
    "fc1.weight",
    "fc1.bias",
    "fc2.weight",
    "fc2.bias",
    "pi.weight",
    "pi.bias",
    "v.weight",
    "v.bias",
];

const C1W: usize = 0;
const C1B: usize = 1;
const C2W: usize = 2;
const C2B: usize = 3;
const F1W: usize = 4;
const F1B: usize = 5;
const F2W: usize = 6;
const F2B: usize = 7;
const PIW: usize = 8;
const PIB: usize = 9;
const VW: usize = 10;
const VB: usize = 11;

impl ArchSpec {
    /// Default network for an environment with the given observation slices and action count.
    pub fn for_env(slices: usize, n_actions: usize) -> Self {
        Self {
            in_channels: slices,
            side: crate::env::Observation::SIDE,
            conv_channels: 32,
            kernel: 3,
            strides: [2, 2],
            hidden: 128,
            n_actions,
        }
    }

    pub fn validate(&self) -> Result<(), ShapeError> {
        let fields = [
            self.in_channels,
            self.side,
            self.conv_channels,
            self.kernel,
            self.strides[0],
            self.strides[1],
            self.hidden,
            self.n_actions,
        ];
        if fields.iter().any(|&v| v == 0 || v > 1 << 16) {
            return Err(ShapeError::Arch(format!("extents must lie in 1..=65536: {self:?}")));
        }
        if self.kernel % 2 == 0 {
            return Err(ShapeError::Arch("kernel size must be odd".into()));
        }
        Ok(())
    }

    fn conv_out(&self, side: usize, stride: usize) -> usize {
        let pad = self.kernel / 2;
        (side + 2 * pad - self.kernel) / stride + 1
    }

    /// Feature-map sides after each convolution.
    pub fn map_sides(&self) -> [usize; 2] {
        let s1 = self.conv_out(self.side, self.strides[0]);
        [s1, self.conv_out(s1, self.strides[1])]
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.side * self.side
    }

    pub fn features(&self) -> usize {
        let s = self.map_sides()[1];
        self.conv_channels * s * s
    }

    pub fn tensor_shapes(&self) -> [Vec<usize>; 12] {
        let (c, k, h, p) = (self.conv_channels, self.kernel, self.hidden, self.n_actions);
        [
            vec![c, self.in_channels, k, k],
            vec![c],
            vec![c, c, k, k],
            vec![c],
            vec![h, self.features()],
            vec![h],
            vec![h, h],
            vec![h],
            vec![p, h],
            vec![p],
            vec![1, h],
            vec![1],
        ]
    }

    fn offsets(&self) -> [usize; 13] {
        let mut out = [0; 13];
        for (i, s) in self.tensor_shapes().iter().enumerate() {
            out[i + 1] = out[i] + s.iter().product::<usize>();
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.offsets()[12]
    }
}

/// Action probabilities and state value for one observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution {
    pub probs: Vec<f64>,
    pub value: f64,
}

/// Flat parameter vector with its architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams<T = f32> {
    pub arch: ArchSpec,
    pub data: Vec<T>,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Log-probabilities from logits.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, std: f64) -> f64 {
    loop {
        let v: f64 = StandardNormal.sample(rng);
        if v.abs() <= 2.0 {
            return v * std;
        }
    }
}

/// Row-major `rows × cols` matrix with orthonormal rows or columns, times `gain`.
fn orthogonal<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, gain: f64) -> Vec<f64> {
    let (n, len) = (rows.min(cols), rows.max(cols));
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(n);
    while q.len() < n {
        let mut v: Vec<f64> = (0..len).map(|_| StandardNormal.sample(rng)).collect();
        for u in &q {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            q.push(v);
        }
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = gain * if rows <= cols { q[r][c] } else { q[c][r] };
        }
    }
    out
}

impl<T: Scalar> PolicyParams<T> {
    pub fn zeros(arch: ArchSpec) -> Result<Self, ShapeError> {
        arch.validate()?;
        Ok(Self {
            arch,
            data: vec![T::zero(); arch.param_count()],
        })
    }

    /// Orthogonal dense layers (gain √2 hidden, 0.01 policy head, 1 value head),
    /// truncated-normal kernels, zero biases.
    pub fn init<R: Rng + ?Sized>(arch: ArchSpec, rng: &mut R) -> Result<Self, ShapeError> {
        let mut p = Self::zeros(arch)?;
        let shapes = arch.tensor_shapes();
        for slot in [C1W, C2W] {
            let fan_in: usize = shapes[slot][1..].iter().product();
            let std = (2.0 / fan_in as f64).sqrt();
            for v in p.tensor_mut(slot) {
                *v = T::of_f64(truncated_normal(rng, std));
            }
        }
        for (slot, gain) in [(F1W, 2f64.sqrt()), (F2W, 2f64.sqrt()), (PIW, 0.01), (VW, 1.0)] {
            let w = orthogonal(rng, shapes[slot][0], shapes[slot][1], gain);
            for (d, s) in p.tensor_mut(slot).iter_mut().zip(w) {
                *d = T::of_f64(s);
            }
        }
        Ok(p)
    }

    pub fn tensor(&self, slot: usize) -> &[T] {
        let o = self.arch.offsets();
        &self.data[o[slot]..o[slot + 1]]
    }

    pub fn tensor_mut(&mut self, slot: usize) -> &mut [T] {
        let o = self.arch.offsets();
        &mut self.data[o[slot]..o[slot + 1]]
    }

    pub fn cast<U: Scalar>(&self) -> PolicyParams<U> {
        PolicyParams {
            arch: self.arch,
            data: self.data.iter().map(|v| U::of_f64(v.into_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Batched forward pass over `inputs` laid out as `[batch][channel][side][side]`.
    pub fn forward_batch(&self, inputs: &[T], batch: usize) -> Result<Cache<T>, ShapeError> {
        let a = self.arch;
        if inputs.len() != batch * a.input_len() {
            return Err(ShapeError::Input {
                expected: batch * a.input_len(),
                got: inputs.len(),
            });
        }
        let [s1, s2] = a.map_sides();
        let (c, k, h, p) = (a.conv_channels, a.kernel, a.hidden, a.n_actions);
        let plane0 = a.side * a.side;
        let cols1 = im2col(
            inputs,
            Planes {
                channels: a.in_channels,
                c_stride: plane0,
                b_stride: a.in_channels * plane0,
            },
            batch,
            a.side,
            s1,
            k,
            a.strides[0],
        );
        let n1 = batch * s1 * s1;
        let mut a1 = vec![T::zero(); c * n1];
        conv_apply(
            self.tensor(C1W),
            self.tensor(C1B),
            &cols1,
            a.in_channels * k * k,
            n1,
            &mut a1,
        );
        let cols2 = im2col(
            &a1,
            Planes {
                channels: c,
                c_stride: n1,
                b_stride: s1 * s1,
            },
            batch,
            s1,
            s2,
            k,
            a.strides[1],
        );
        let n2 = batch * s2 * s2;
        let mut a2 = vec![T::zero(); c * n2];
        conv_apply(self.tensor(C2W), self.tensor(C2B), &cols2, c * k * k, n2, &mut a2);
        let f = a.features();
        let hw2 = s2 * s2;
        let mut flat = vec![T::zero(); batch * f];
        for ch in 0..c {
            for b in 0..batch {
                let src = &a2[ch * n2 + b * hw2..ch * n2 + (b + 1) * hw2];
                flat[b * f + ch * hw2..b * f + (ch + 1) * hw2].copy_from_slice(src);
            }
        }
        let h1 = dense(&flat, batch, f, self.tensor(F1W), self.tensor(F1B), h, true);
        let h2 = dense(&h1, batch, h, self.tensor(F2W), self.tensor(F2B), h, true);
        let logits = dense(&h2, batch, h, self.tensor(PIW), self.tensor(PIB), p, false);
        let values = dense(&h2, batch, h, self.tensor(VW), self.tensor(VB), 1, false);
        Ok(Cache {
            batch,
            cols1,
            a1,
            cols2,
            a2,
            flat,
            h1,
            h2,
            logits,
            values,
        })
    }

    /// Gradient of a loss with respect to all parameters, given its gradient
    /// with respect to the logits `[batch][P]` and values `[batch]`.
    pub fn backward(&self, cache: &Cache<T>, dlogits: &[T], dvalues: &[T]) -> Vec<T> {
        let a = self.arch;
        let b = cache.batch;
        let [s1, s2] = a.map_sides();
        let (c, k, h, p) = (a.conv_channels, a.kernel, a.hidden, a.n_actions);
        let f = a.features();
        assert_eq!(dlogits.len(), b * p);
        assert_eq!(dvalues.len(), b);
        let o = a.offsets();
        let mut g = vec![T::zero(); a.param_count()];
        let gslots = &mut g[..];

        let mut dh2 = vec![T::zero(); b * h];
        dense_back(
            &cache.h2,
            dlogits,
            b,
            h,
            p,
            self.tensor(PIW),
            slot_mut(gslots, &o, PIW, PIB),
            &mut dh2,
        );
        dense_back(
            &cache.h2,
            dvalues,
            b,
            h,
            1,
            self.tensor(VW),
            slot_mut(gslots, &o, VW, VB),
            &mut dh2,
        );
        relu_mask(&mut dh2, &cache.h2);
        let mut dh1 = vec![T::zero(); b * h];
        dense_back(
            &cache.h1,
            &dh2,
            b,
            h,
            h,
            self.tensor(F2W),
            slot_mut(gslots, &o, F2W, F2B),
            &mut dh1,
        );
        relu_mask(&mut dh1, &cache.h1);
        let mut dflat = vec![T::zero(); b * f];
        dense_back(
            &cache.flat,
            &dh1,
            b,
            f,
            h,
            self.tensor(F1W),
            slot_mut(gslots, &o, F1W, F1B),
            &mut dflat,
        );

        let hw2 = s2 * s2;
        let n2 = b * hw2;
        let mut da2 = vec![T::zero(); c * n2];
        for ch in 0..c {
            for bi in 0..b {
                da2[ch * n2 + bi * hw2..ch * n2 + (bi + 1) * hw2]
                    .copy_from_slice(&dflat[bi * f + ch * hw2..bi * f + (ch + 1) * hw2]);
            }
        }
        relu_mask(&mut da2, &cache.a2);
        let rows2 = c * k * k;
        {
            let (gw, gb) = slot_mut(gslots, &o, C2W, C2B);
            conv_back_params(&da2, &cache.cols2, c, rows2, n2, gw, gb);
        }
        let mut dcols2 = vec![T::zero(); rows2 * n2];
        gemm(
            View::rm(self.tensor(C2W), c, rows2).t(),
            View::rm(&da2, c, n2),
            T::zero(),
            &mut dcols2,
        );
        let n1 = b * s1 * s1;
        let mut da1 = vec![T::zero(); c * n1];
        col2im(
            &dcols2,
            Planes {
                channels: c,
                c_stride: n1,
                b_stride: s1 * s1,
            },
            b,
            s1,
            s2,
            k,
            a.strides[1],
            &mut da1,
        );
        relu_mask(&mut da1, &cache.a1);
        let (gw, gb) = slot_mut(gslots, &o, C1W, C1B);
        conv_back_params(&da1, &cache.cols1, c, a.in_channels * k * k, n1, gw, gb);
        g
    }

    /// Logits and value per sample as `f64`.
    pub fn evaluate(&self, inputs: &[T], batch: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>), ShapeError> {
        let cache = self.forward_batch(inputs, batch)?;
        let p = self.arch.n_actions;
        let logits = (0..batch)
            .map(|i| cache.logits[i * p..(i + 1) * p].iter().map(|v| v.into_f64()).collect())
            .collect();
        Ok((logits, cache.values.iter().map(|v| v.into_f64()).collect()))
    }

    /// Probabilities and value for one observation.
    pub fn forward(&self, obs: &[T]) -> Result<ActionDistribution, ShapeError> {
        let (logits, values) = self.evaluate(obs, 1)?;
        Ok(ActionDistribution {
            probs: softmax(&logits[0]),
            value: values[0],
        })
    }

    /// Probabilities for each of `batch` inputs.
    pub fn probs_batch(&self, inputs: &[T], batch: usize) -> Result<Vec<Vec<f64>>, ShapeError> {
        Ok(self.evaluate(inputs, batch)?.0.iter().map(|l| softmax(l)).collect())
    }
}

/// Softmax of one logit row.
pub fn probs_from_logits(logits: &[f64]) -> Vec<f64> {
    softmax(logits)
}

fn slot_mut<'a, T>(g: &'a mut [T], o: &[usize; 13], w: usize, b: usize) -> (&'a mut [T], &'a mut [T]) {
    debug_assert_eq!(b, w + 1);
    let (head, tail) = g[o[w]..o[b + 1]].split_at_mut(o[b] - o[w]);
    (head, tail)
}

/// Intermediate activations kept for the backward pass.
pub struct Cache<T> {
    pub batch: usize,
    cols1: Vec<T>,
    a1: Vec<T>,
    cols2: Vec<T>,
    a2: Vec<T>,
    flat: Vec<T>,
    h1: Vec<T>,
    h2: Vec<T>,
    /// `[batch][P]`.
    pub logits: Vec<T>,
    pub values: Vec<T>,
}

impl<T: Scalar> Cache<T> {
    /// Fraction of hidden pre-activations clipped to zero by ReLU.
    pub fn relu_zero_fraction(&self) -> f64 {
        let all = self.a1.iter().chain(&self.a2).chain(&self.h1).chain(&self.h2);
        let (mut z, mut n) = (0usize, 0usize);
        for v in all {
            n += 1;
            if *v == T::zero() {
                z += 1;
            }
        }
        z as f64 / n.max(1) as f64
    }
}

#[derive(Clone, Copy)]
struct Planes {
    channels: usize,
    c_stride: usize,
    b_stride: usize,
}

/// Unfolds `k×k` patches into `[channels·k·k][batch·out·out]`.
fn im2col<T: Scalar>(src: &[T], pl: Planes, batch: usize, side: usize, out: usize, k: usize, stride: usize) -> Vec<T> {
    let pad = (k / 2) as isize;
    let n = batch * out * out;
    let mut cols = vec![T::zero(); pl.channels * k * k * n];
    for c in 0..pl.channels {
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((c * k + ky) * k + kx) * n..][..n];
                for b in 0..batch {
                    let plane = &src[c * pl.c_stride + b * pl.b_stride..][..side * side];
                    for oy in 0..out {
                        let iy = (oy * stride + ky) as isize - pad;
                        if iy < 0 || iy >= side as isize {
                            continue;
                        }
                        let dst = &mut row[(b * out + oy) * out..][..out];
                        let srow = &plane[iy as usize * side..][..side];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad;
                            if ix >= 0 && ix < side as isize {
                                *d = srow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: accumulates column gradients back onto the input planes.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(
    cols: &[T],
    pl: Planes,
    batch: usize,
    side: usize,
    out: usize,
    k: usize,
    stride: usize,
    dst: &mut [T],
) {
    let pad = (k / 2) as isize;
    let n = batch * out * out;
    for c in 0..pl.channels {
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((c * k + ky) * k + kx) * n..][..n];
                for b in 0..batch {
                    let base = c * pl.c_stride + b * pl.b_stride;
                    for oy in 0..out {
                        let iy = (oy * stride + ky) as isize - pad;
                        if iy < 0 || iy >= side as isize {
                            continue;
                        }
                        let srow = &row[(b * out + oy) * out..][..out];
                        for (ox, v) in srow.iter().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad;
                            if ix >= 0 && ix < side as isize {
                                let i = base + iy as usize * side + ix as usize;
                                dst[i] = dst[i] + *v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `out[co][n] = relu(w[co]·cols[:, n] + bias[co])`.
fn conv_apply<T: Scalar>(w: &[T], bias: &[T], cols: &[T], rows: usize, n: usize, out: &mut [T]) {
    let co = bias.len();
    for (c, chunk) in out.chunks_mut(n).enumerate() {
        chunk.iter_mut().for_each(|v| *v = bias[c]);
    }
    gemm(View::rm(w, co, rows), View::rm(cols, rows, n), T::one(), out);
    out.iter_mut().for_each(|v| *v = v.max(T::zero()));
}

fn conv_back_params<T: Scalar>(dz: &[T], cols: &[T], co: usize, rows: usize, n: usize, gw: &mut [T], gb: &mut [T]) {
    gemm(View::rm(dz, co, n), View::rm(cols, rows, n).t(), T::one(), gw);
    for (c, g) in gb.iter_mut().enumerate() {
        *g = dz[c * n..(c + 1) * n].iter().fold(*g, |s, &v| s + v);
    }
}

/// `y[b][o] = act(x[b]·w[o] + bias[o])` with `w` stored `[out][in]`.
fn dense<T: Scalar>(x: &[T], batch: usize, inp: usize, w: &[T], bias: &[T], out: usize, relu: bool) -> Vec<T> {
    let mut y = vec![T::zero(); batch * out];
    for row in y.chunks_mut(out) {
        row.copy_from_slice(bias);
    }
    gemm(View::rm(x, batch, inp), View::rm(w, out, inp).t(), T::one(), &mut y);
    if relu {
        y.iter_mut().for_each(|v| *v = v.max(T::zero()));
    }
    y
}

/// Accumulates weight and bias gradients and adds the input gradient into `dx`.
#[allow(clippy::too_many_arguments)]
fn dense_back<T: Scalar>(
    x: &[T],
    dy: &[T],
    batch: usize,
    inp: usize,
    out: usize,
    w: &[T],
    (gw, gb): (&mut [T], &mut [T]),
    dx: &mut [T],
) {
    gemm(View::rm(dy, batch, out).t(), View::rm(x, batch, inp), T::one(), gw);
    for row in dy.chunks(out) {
        for (g, &v) in gb.iter_mut().zip(row) {
            *g = *g + v;
        }
    }
    gemm(View::rm(dy, batch, out), View::rm(w, out, inp), T::one(), dx);
}

fn relu_mask<T: Scalar>(d: &mut [T], act: &[T]) {
    for (g, &a) in d.iter_mut().zip(act) {
        if a <= T::zero() {
            *g = T::zero();
        }
    }
}
