//! Network layers with hand-written reverse-mode derivatives.
//!
//! Every layer is generic over [`Scalar`] so the gradient checker can run
//! the identical code in f64. The f32 instantiation of the convolutions
//! additionally dispatches to an AVX2+FMA compilation of the same loop body
//! when the CPU supports it; results then differ from the portable path only
//! by rounding (fused multiply-adds), which training tolerances absorb.
//! Channel statistics and parameter-gradient reductions accumulate in f64
//! over the batch and row dimensions regardless of the element type.

use std::any::TypeId;
use std::sync::OnceLock;

use rand::Rng;

use super::tensor::{Scalar, Tensor};
use crate::rng::rng_from;

fn avx2_available() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        static AVAILABLE: OnceLock<bool> = OnceLock::new();
        *AVAILABLE.get_or_init(|| {
            std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma")
        })
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

fn cast_slice<T: 'static>(x: &[T]) -> Option<&[f32]> {
    (TypeId::of::<T>() == TypeId::of::<f32>())
        .then(|| unsafe { std::slice::from_raw_parts(x.as_ptr().cast::<f32>(), x.len()) })
}

fn cast_slice_mut<T: 'static>(x: &mut [T]) -> Option<&mut [f32]> {
    (TypeId::of::<T>() == TypeId::of::<f32>())
        .then(|| unsafe { std::slice::from_raw_parts_mut(x.as_mut_ptr().cast::<f32>(), x.len()) })
}

/// out[i] += a[i] · w. Each element is independent, so this vectorizes.
#[inline(always)]
fn saxpy<T: Scalar, const FMA: bool>(out: &mut [T], a: &[T], w: T) {
    for (o, &v) in out.iter_mut().zip(a) {
        if FMA {
            *o = v.mul_add(w, *o);
        } else {
            *o = *o + v * w;
        }
    }
}

/// Dot product with eight independent accumulators so the sum vectorizes;
/// the combine order is fixed, keeping results run-to-run identical.
#[inline(always)]
fn dot<T: Scalar, const FMA: bool>(a: &[T], b: &[T]) -> T {
    const LANES: usize = 8;
    let mut acc = [T::zero(); LANES];
    let chunks = a.len() / LANES;
    for i in 0..chunks {
        for l in 0..LANES {
            let (x, y) = (a[i * LANES + l], b[i * LANES + l]);
            if FMA {
                acc[l] = x.mul_add(y, acc[l]);
            } else {
                acc[l] = acc[l] + x * y;
            }
        }
    }
    let mut tail = T::zero();
    for i in chunks * LANES..a.len() {
        tail = tail + a[i] * b[i];
    }
    let mut total = tail;
    for v in acc {
        total += v;
    }
    total
}

/// Sum of a slice accumulated in f64 across eight fixed-order lanes.
#[inline(always)]
fn sum_f64<T: Scalar>(a: &[T]) -> f64 {
    const LANES: usize = 8;
    let mut acc = [0.0f64; LANES];
    let chunks = a.len() / LANES;
    for i in 0..chunks {
        for l in 0..LANES {
            acc[l] += a[i * LANES + l].to_f64();
        }
    }
    let mut total = 0.0;
    for i in chunks * LANES..a.len() {
        total += a[i].to_f64();
    }
    for v in acc {
        total += v;
    }
    total
}

/// Σ (a[i] − shift)², accumulated like [`sum_f64`].
#[inline(always)]
fn sum_sq_f64<T: Scalar>(a: &[T], shift: f64) -> f64 {
    const LANES: usize = 8;
    let mut acc = [0.0f64; LANES];
    let chunks = a.len() / LANES;
    for i in 0..chunks {
        for l in 0..LANES {
            let d = a[i * LANES + l].to_f64() - shift;
            acc[l] += d * d;
        }
    }
    let mut total = 0.0;
    for i in chunks * LANES..a.len() {
        let d = a[i].to_f64() - shift;
        total += d * d;
    }
    for v in acc {
        total += v;
    }
    total
}

#[derive(Debug, Clone, Copy)]
struct ConvShape {
    n: usize,
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    k: usize,
}

/// Column range [xs, xe) of output positions whose shifted input column
/// x + dx stays inside the row.
#[inline(always)]
fn shift_range(w: usize, dx: isize) -> (usize, usize) {
    let xs = (-dx).max(0) as usize;
    let xe = ((w as isize - dx).min(w as isize)).max(0) as usize;
    (xs, xe.max(xs))
}

#[inline(always)]
fn conv_forward_body<T: Scalar, const FMA: bool>(
    s: &ConvShape,
    x: &[T],
    wgt: &[T],
    bias: &[T],
    out: &mut [T],
) {
    let p = (s.k / 2) as isize;
    let hw = s.h * s.w;
    for n in 0..s.n {
        for co in 0..s.c_out {
            let oplane = &mut out[(n * s.c_out + co) * hw..][..hw];
            oplane.fill(bias[co]);
            for ci in 0..s.c_in {
                let xplane = &x[(n * s.c_in + ci) * hw..][..hw];
                let wbase = (co * s.c_in + ci) * s.k * s.k;
                for y in 0..s.h {
                    for ky in 0..s.k {
                        let iy = y as isize + ky as isize - p;
                        if iy < 0 || iy >= s.h as isize {
                            continue;
                        }
                        let irow = &xplane[iy as usize * s.w..][..s.w];
                        for kx in 0..s.k {
                            let dx = kx as isize - p;
                            let (xs, xe) = shift_range(s.w, dx);
                            if xs == xe {
                                continue;
                            }
                            let wv = wgt[wbase + ky * s.k + kx];
                            let orow = &mut oplane[y * s.w + xs..y * s.w + xe];
                            let src = (xs as isize + dx) as usize..(xe as isize + dx) as usize;
                            saxpy::<T, FMA>(orow, &irow[src], wv);
                        }
                    }
                }
            }
        }
    }
}

#[inline(always)]
fn conv_backward_input_body<T: Scalar, const FMA: bool>(
    s: &ConvShape,
    dy: &[T],
    wgt: &[T],
    dx_out: &mut [T],
) {
    let p = (s.k / 2) as isize;
    let hw = s.h * s.w;
    for n in 0..s.n {
        for ci in 0..s.c_in {
            let dxplane = &mut dx_out[(n * s.c_in + ci) * hw..][..hw];
            for co in 0..s.c_out {
                let dyplane = &dy[(n * s.c_out + co) * hw..][..hw];
                let wbase = (co * s.c_in + ci) * s.k * s.k;
                for y in 0..s.h {
                    let dyrow = &dyplane[y * s.w..][..s.w];
                    for ky in 0..s.k {
                        let iy = y as isize + ky as isize - p;
                        if iy < 0 || iy >= s.h as isize {
                            continue;
                        }
                        for kx in 0..s.k {
                            let dxs = kx as isize - p;
                            let (xs, xe) = shift_range(s.w, dxs);
                            if xs == xe {
                                continue;
                            }
                            let wv = wgt[wbase + ky * s.k + kx];
                            let dst = (xs as isize + dxs) as usize..(xe as isize + dxs) as usize;
                            let drow = &mut dxplane[iy as usize * s.w..][..s.w];
                            saxpy::<T, FMA>(&mut drow[dst], &dyrow[xs..xe], wv);
                        }
                    }
                }
            }
        }
    }
}

/// Weight and bias gradients. Row dot products run in the element type;
/// accumulation across rows and samples is f64.
#[inline(always)]
fn conv_backward_params_body<T: Scalar, const FMA: bool>(
    s: &ConvShape,
    x: &[T],
    dy: &[T],
    dw_acc: &mut [f64],
    db_acc: &mut [f64],
) {
    let p = (s.k / 2) as isize;
    let hw = s.h * s.w;
    for n in 0..s.n {
        for co in 0..s.c_out {
            let dyplane = &dy[(n * s.c_out + co) * hw..][..hw];
            db_acc[co] += sum_f64(dyplane);
            for ci in 0..s.c_in {
                let xplane = &x[(n * s.c_in + ci) * hw..][..hw];
                let wbase = (co * s.c_in + ci) * s.k * s.k;
                for y in 0..s.h {
                    let dyrow = &dyplane[y * s.w..][..s.w];
                    for ky in 0..s.k {
                        let iy = y as isize + ky as isize - p;
                        if iy < 0 || iy >= s.h as isize {
                            continue;
                        }
                        let xrow = &xplane[iy as usize * s.w..][..s.w];
                        for kx in 0..s.k {
                            let dx = kx as isize - p;
                            let (xs, xe) = shift_range(s.w, dx);
                            if xs == xe {
                                continue;
                            }
                            let src = (xs as isize + dx) as usize..(xe as isize + dx) as usize;
                            let d = dot::<T, FMA>(&dyrow[xs..xe], &xrow[src]);
                            dw_acc[wbase + ky * s.k + kx] += d.to_f64();
                        }
                    }
                }
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
mod wide {
    use super::*;

    #[target_feature(enable = "avx2", enable = "fma")]
    pub unsafe fn conv_forward(s: &ConvShape, x: &[f32], w: &[f32], b: &[f32], out: &mut [f32]) {
        conv_forward_body::<f32, true>(s, x, w, b, out);
    }

    #[target_feature(enable = "avx2", enable = "fma")]
    pub unsafe fn conv_backward_input(s: &ConvShape, dy: &[f32], w: &[f32], dx: &mut [f32]) {
        conv_backward_input_body::<f32, true>(s, dy, w, dx);
    }

    #[target_feature(enable = "avx2", enable = "fma")]
    pub unsafe fn conv_backward_params(
        s: &ConvShape,
        x: &[f32],
        dy: &[f32],
        dw: &mut [f64],
        db: &mut [f64],
    ) {
        conv_backward_params_body::<f32, true>(s, x, dy, dw, db);
    }
}

/// Same-padding stride-1 convolution with an odd square kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv<T> {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    /// Weights, laid out `[c_out][c_in][ky][kx]`.
    pub w: Vec<T>,
    pub b: Vec<T>,
}

impl<T: Scalar> Conv<T> {
    fn shape(&self, x: &Tensor<T>) -> ConvShape {
        assert_eq!(x.c, self.c_in, "conv input channels");
        ConvShape { n: x.n, c_in: self.c_in, c_out: self.c_out, h: x.h, w: x.w, k: self.k }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let s = self.shape(x);
        let mut out = Tensor::zeros(x.n, self.c_out, x.h, x.w);
        match (
            cast_slice(&x.data),
            cast_slice(&self.w),
            cast_slice(&self.b),
            cast_slice_mut(&mut out.data),
        ) {
            (Some(xs), Some(ws), Some(bs), Some(os)) if avx2_available() => unsafe {
                wide::conv_forward(&s, xs, ws, bs, os);
            },
            (Some(xs), Some(ws), Some(bs), Some(os)) => {
                conv_forward_body::<f32, false>(&s, xs, ws, bs, os);
            }
            _ => conv_forward_body::<T, false>(&s, &x.data, &self.w, &self.b, &mut out.data),
        }
        out
    }

    /// Gradient w.r.t. the input.
    pub fn backward_input(&self, x_shape: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
        let s = self.shape(x_shape);
        assert_eq!(dy.c, self.c_out, "conv grad channels");
        let mut dx = Tensor::zeros(s.n, s.c_in, s.h, s.w);
        match (cast_slice(&dy.data), cast_slice(&self.w), cast_slice_mut(&mut dx.data)) {
            (Some(dys), Some(ws), Some(dxs)) if avx2_available() => unsafe {
                wide::conv_backward_input(&s, dys, ws, dxs);
            },
            (Some(dys), Some(ws), Some(dxs)) => {
                conv_backward_input_body::<f32, false>(&s, dys, ws, dxs);
            }
            _ => conv_backward_input_body::<T, false>(&s, &dy.data, &self.w, &mut dx.data),
        }
        dx
    }

    /// Gradients w.r.t. weights and bias, in f64.
    pub fn backward_params(&self, x: &Tensor<T>, dy: &Tensor<T>) -> (Vec<f64>, Vec<f64>) {
        let s = self.shape(x);
        assert_eq!(dy.c, self.c_out, "conv grad channels");
        let mut dw = vec![0.0f64; self.w.len()];
        let mut db = vec![0.0f64; self.b.len()];
        match (cast_slice(&x.data), cast_slice(&dy.data)) {
            (Some(xs), Some(dys)) if avx2_available() => unsafe {
                wide::conv_backward_params(&s, xs, dys, &mut dw, &mut db);
            },
            (Some(xs), Some(dys)) => {
                conv_backward_params_body::<f32, false>(&s, xs, dys, &mut dw, &mut db);
            }
            _ => conv_backward_params_body::<T, false>(&s, &x.data, &dy.data, &mut dw, &mut db),
        }
        (dw, db)
    }
}

/// Per-channel batch normalization. Parameters live in the element type;
/// running statistics always in f64 (persisted as f32).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub c: usize,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
}

/// What the backward pass needs from a training-mode forward.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub xhat: Tensor<T>,
    pub invstd: Vec<f64>,
}

/// Batch statistics from one training-mode forward, ready to be folded
/// into the running estimates.
#[derive(Debug, Clone)]
pub struct BnStats {
    pub mean: Vec<f64>,
    pub unbiased_var: Vec<f64>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn identity(c: usize) -> Self {
        BatchNorm {
            c,
            gamma: vec![T::one(); c],
            beta: vec![T::zero(); c],
            running_mean: vec![0.0; c],
            running_var: vec![1.0; c],
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    /// Normalizes with batch statistics. Mutates nothing: the returned
    /// [`BnStats`] can be folded into the running estimates separately,
    /// so inference with batch statistics leaves the layer untouched.
    pub fn batch_forward(&self, x: &Tensor<T>) -> (Tensor<T>, BnCache<T>, BnStats) {
        assert_eq!(x.c, self.c, "batch-norm channels");
        let m = (x.n * x.h * x.w) as f64;
        let mut y = Tensor::zeros(x.n, x.c, x.h, x.w);
        let mut xhat = Tensor::zeros(x.n, x.c, x.h, x.w);
        let mut invstd = vec![0.0f64; self.c];
        let mut stats =
            BnStats { mean: vec![0.0; self.c], unbiased_var: vec![0.0; self.c] };
        for c in 0..self.c {
            let mut total = 0.0;
            for n in 0..x.n {
                total += sum_f64(x.plane(n, c));
            }
            let mean = total / m;
            let mut sq = 0.0;
            for n in 0..x.n {
                sq += sum_sq_f64(x.plane(n, c), mean);
            }
            let var = sq / m;
            let istd = 1.0 / (var + self.eps).sqrt();
            invstd[c] = istd;
            stats.mean[c] = mean;
            stats.unbiased_var[c] = if m > 1.0 { sq / (m - 1.0) } else { var };
            let (mean_t, istd_t) = (T::from_f64(mean), T::from_f64(istd));
            let (g, b) = (self.gamma[c], self.beta[c]);
            for n in 0..x.n {
                let xp = x.plane(n, c);
                let hw = x.h * x.w;
                let base = (n * x.c + c) * hw;
                for i in 0..hw {
                    let xh = (xp[i] - mean_t) * istd_t;
                    xhat.data[base + i] = xh;
                    y.data[base + i] = xh * g + b;
                }
            }
        }
        (y, BnCache { xhat, invstd }, stats)
    }

    /// Momentum-weighted update of the running estimates.
    pub fn fold_running(&mut self, stats: &BnStats) {
        for c in 0..self.c {
            self.running_mean[c] =
                (1.0 - self.momentum) * self.running_mean[c] + self.momentum * stats.mean[c];
            self.running_var[c] = (1.0 - self.momentum) * self.running_var[c]
                + self.momentum * stats.unbiased_var[c];
        }
    }

    pub fn forward_eval(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c, self.c, "batch-norm channels");
        let mut y = Tensor::zeros(x.n, x.c, x.h, x.w);
        for c in 0..self.c {
            let istd = 1.0 / (self.running_var[c] + self.eps).sqrt();
            let (mean_t, istd_t) = (T::from_f64(self.running_mean[c]), T::from_f64(istd));
            let (g, b) = (self.gamma[c], self.beta[c]);
            for n in 0..x.n {
                let xp = x.plane(n, c);
                let yp = y.plane_mut(n, c);
                for (o, &v) in yp.iter_mut().zip(xp) {
                    *o = (v - mean_t) * istd_t * g + b;
                }
            }
        }
        y
    }

    /// Training-mode gradients through the batch statistics.
    pub fn backward(&self, cache: &BnCache<T>, dy: &Tensor<T>) -> (Tensor<T>, Vec<f64>, Vec<f64>) {
        let x = &cache.xhat;
        assert_eq!(dy.c, self.c, "batch-norm grad channels");
        let m = (dy.n * dy.h * dy.w) as f64;
        let mut dx = Tensor::zeros(dy.n, dy.c, dy.h, dy.w);
        let mut dgamma = vec![0.0f64; self.c];
        let mut dbeta = vec![0.0f64; self.c];
        for c in 0..self.c {
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for n in 0..dy.n {
                let dyp = dy.plane(n, c);
                sum_dy += sum_f64(dyp);
                sum_dy_xhat += dot::<T, false>(dyp, x.plane(n, c)).to_f64();
            }
            dgamma[c] = sum_dy_xhat;
            dbeta[c] = sum_dy;
            let scale = T::from_f64(self.gamma[c].to_f64() * cache.invstd[c]);
            let mean_dy = T::from_f64(sum_dy / m);
            let mean_dy_xhat = T::from_f64(sum_dy_xhat / m);
            for n in 0..dy.n {
                let dyp = dy.plane(n, c);
                let xp = x.plane(n, c);
                let hw = dy.h * dy.w;
                let base = (n * dy.c + c) * hw;
                for i in 0..hw {
                    dx.data[base + i] = scale * (dyp[i] - mean_dy - xp[i] * mean_dy_xhat);
                }
            }
        }
        (dx, dgamma, dbeta)
    }
}

/// y = max(0, x); returns the activation mask for the backward pass.
pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Vec<u8>) {
    let mut y = x.clone();
    let mut mask = vec![0u8; x.data.len()];
    for (v, m) in y.data.iter_mut().zip(&mut mask) {
        if *v > T::zero() {
            *m = 1;
        } else {
            *v = T::zero();
        }
    }
    (y, mask)
}

pub fn relu_backward<T: Scalar>(dy: &Tensor<T>, mask: &[u8]) -> Tensor<T> {
    let mut dx = dy.clone();
    for (v, &m) in dx.data.iter_mut().zip(mask) {
        if m == 0 {
            *v = T::zero();
        }
    }
    dx
}

/// Whole-channel dropout: each (sample, channel) plane is either kept and
/// rescaled by 1/(1−p) or zeroed. Masks come from the seed alone; p = 0
/// draws nothing and is the identity.
pub fn spatial_dropout_forward<T: Scalar>(x: &Tensor<T>, p: f64, seed: u64) -> (Tensor<T>, Vec<T>) {
    if p == 0.0 {
        return (x.clone(), vec![T::one(); x.n * x.c]);
    }
    let mut rng = rng_from(seed);
    let keep_scale = T::from_f64(1.0 / (1.0 - p));
    let mut scales = Vec::with_capacity(x.n * x.c);
    for _ in 0..x.n * x.c {
        let keep: f64 = rng.gen();
        scales.push(if keep < p { T::zero() } else { keep_scale });
    }
    let mut y = x.clone();
    for n in 0..x.n {
        for c in 0..x.c {
            let s = scales[n * x.c + c];
            for v in y.plane_mut(n, c) {
                *v *= s;
            }
        }
    }
    (y, scales)
}

pub fn spatial_dropout_backward<T: Scalar>(dy: &Tensor<T>, scales: &[T]) -> Tensor<T> {
    let mut dx = dy.clone();
    for n in 0..dy.n {
        for c in 0..dy.c {
            let s = scales[n * dy.c + c];
            for v in dx.plane_mut(n, c) {
                *v *= s;
            }
        }
    }
    dx
}
