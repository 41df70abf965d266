//! One-dimensional fast transforms backing the depth integrator.
//!
//! The integrator only ever needs the type-I discrete sine transform. It is
//! computed by embedding the input in an odd-symmetric sequence of length
//! `2(n + 1)` and taking a complex DFT of that sequence: power-of-two lengths
//! run through an iterative radix-2 FFT directly, every other length goes
//! through Bluestein's chirp-z reduction, which rewrites a DFT of arbitrary
//! length as a circular convolution evaluated with power-of-two FFTs.
//!
//! Transforms operate on small batches: `LANES` complex sequences ride side
//! by side in split re/im planes (element `i` of lane `l` sits at
//! `plane[i * LANES + l]`), so the butterfly inner loops are straight-line
//! code over short contiguous runs and vectorize. Two real sequences are
//! packed into each complex lane and separated afterwards via the conjugate
//! symmetry of real-input DFTs, halving the transform count again.

use std::f64::consts::PI;
use std::sync::OnceLock;

/// Twiddle tables for a radix-2 FFT of size `n`, expanded per stage so the
/// butterfly loop zips straight through them: stage `s` (block length
/// `4 << s`) holds `wr[k] + i·wi[k] = e^(-2πik/len)` for `k < len/2`.
struct Twiddles {
    stages: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Twiddles {
    fn new(n: usize) -> Twiddles {
        let mut stages = Vec::new();
        let mut len = 4;
        while len <= n {
            let half = len / 2;
            let mut wr = Vec::with_capacity(half);
            let mut wi = Vec::with_capacity(half);
            for k in 0..half {
                let angle = -2.0 * PI * k as f64 / len as f64;
                wr.push(angle.cos());
                wi.push(angle.sin());
            }
            stages.push((wr, wi));
            len <<= 1;
        }
        Twiddles { stages }
    }
}

/// Scales the per-group butterfly loop shared by both FFT orders: slices the
/// group into its lower and upper halves across both planes.
macro_rules! group_halves {
    ($re:ident, $im:ident, $base:ident, $len:ident, $half:ident, $LANES:ident) => {{
        let s = $base * $LANES;
        let (re_a, re_b) = $re[s..s + $len * $LANES].split_at_mut($half * $LANES);
        let (im_a, im_b) = $im[s..s + $len * $LANES].split_at_mut($half * $LANES);
        (re_a, re_b, im_a, im_b)
    }};
}

/// Decimation-in-time radix-2 FFT over `LANES` interleaved complex
/// sequences. With `permute`, the input is bit-reversed first and the result
/// comes out in natural order; without it, the input is expected already
/// bit-reversed (as produced by [`fft_dif_lanes`]). `inverse` conjugates the
/// twiddles; no normalization is applied.
#[inline(always)]
fn fft_dit_lanes<const LANES: usize>(
    re: &mut [f64],
    im: &mut [f64],
    n: usize,
    tw: &Twiddles,
    inverse: bool,
    permute: bool,
) {
    debug_assert!(n.is_power_of_two());
    debug_assert_eq!(re.len(), n * LANES);
    debug_assert_eq!(im.len(), n * LANES);
    if n <= 1 {
        return;
    }
    if permute {
        let shift = usize::BITS - n.trailing_zeros();
        for i in 0..n {
            let j = i.reverse_bits() >> shift;
            if i < j {
                for l in 0..LANES {
                    re.swap(i * LANES + l, j * LANES + l);
                    im.swap(i * LANES + l, j * LANES + l);
                }
            }
        }
    }
    // First stage has unit twiddles and touches the planes independently.
    for plane in [&mut *re, &mut *im] {
        for pair in plane.chunks_exact_mut(2 * LANES) {
            let (a, b) = pair.split_at_mut(LANES);
            for l in 0..LANES {
                let t = b[l];
                b[l] = a[l] - t;
                a[l] += t;
            }
        }
    }
    let sign = if inverse { -1.0 } else { 1.0 };
    let mut len = 4;
    for (wr_stage, wi_stage) in &tw.stages {
        if len > n {
            break;
        }
        let half = len / 2;
        let mut base = 0;
        while base < n {
            let (re_a, re_b, im_a, im_b) = group_halves!(re, im, base, len, half, LANES);
            for k in 0..half {
                let wr = wr_stage[k];
                let wi = wi_stage[k] * sign;
                let o = k * LANES;
                let ra: &mut [f64; LANES] = (&mut re_a[o..o + LANES]).try_into().unwrap();
                let ia: &mut [f64; LANES] = (&mut im_a[o..o + LANES]).try_into().unwrap();
                let rb: &mut [f64; LANES] = (&mut re_b[o..o + LANES]).try_into().unwrap();
                let ib: &mut [f64; LANES] = (&mut im_b[o..o + LANES]).try_into().unwrap();
                for l in 0..LANES {
                    let tr = rb[l] * wr - ib[l] * wi;
                    let ti = rb[l] * wi + ib[l] * wr;
                    let ar = ra[l];
                    let ai = ia[l];
                    ra[l] = ar + tr;
                    ia[l] = ai + ti;
                    rb[l] = ar - tr;
                    ib[l] = ai - ti;
                }
            }
            base += len;
        }
        len <<= 1;
    }
}

/// Decimation-in-frequency radix-2 FFT (forward only): natural-order input,
/// bit-reversed output. Composing it with an unpermuted inverse
/// [`fft_dit_lanes`] evaluates a circular convolution with no reordering
/// pass at all.
#[inline(always)]
fn fft_dif_lanes<const LANES: usize>(re: &mut [f64], im: &mut [f64], n: usize, tw: &Twiddles) {
    debug_assert!(n.is_power_of_two());
    debug_assert_eq!(re.len(), n * LANES);
    debug_assert_eq!(im.len(), n * LANES);
    if n <= 1 {
        return;
    }
    let mut len = n;
    for (wr_stage, wi_stage) in tw.stages[..stage_count(n)].iter().rev() {
        let half = len / 2;
        let mut base = 0;
        while base < n {
            let (re_a, re_b, im_a, im_b) = group_halves!(re, im, base, len, half, LANES);
            for k in 0..half {
                let wr = wr_stage[k];
                let wi = wi_stage[k];
                let o = k * LANES;
                let ra: &mut [f64; LANES] = (&mut re_a[o..o + LANES]).try_into().unwrap();
                let ia: &mut [f64; LANES] = (&mut im_a[o..o + LANES]).try_into().unwrap();
                let rb: &mut [f64; LANES] = (&mut re_b[o..o + LANES]).try_into().unwrap();
                let ib: &mut [f64; LANES] = (&mut im_b[o..o + LANES]).try_into().unwrap();
                for l in 0..LANES {
                    let ar = ra[l];
                    let ai = ia[l];
                    let br = rb[l];
                    let bi = ib[l];
                    let tr = ar - br;
                    let ti = ai - bi;
                    ra[l] = ar + br;
                    ia[l] = ai + bi;
                    rb[l] = tr * wr - ti * wi;
                    ib[l] = tr * wi + ti * wr;
                }
            }
            base += len;
        }
        len >>= 1;
    }
    // Final pairs stage, unit twiddles.
    for plane in [&mut *re, &mut *im] {
        for pair in plane.chunks_exact_mut(2 * LANES) {
            let (a, b) = pair.split_at_mut(LANES);
            for l in 0..LANES {
                let t = b[l];
                b[l] = a[l] - t;
                a[l] += t;
            }
        }
    }
}

/// Number of twiddled stages (lengths 4..=n) an FFT of size `n` runs.
fn stage_count(n: usize) -> usize {
    (n.trailing_zeros() as usize).saturating_sub(1)
}

/// Rotates the leading positions of the batch by per-position complex
/// factors: `(re + i·im)[p] ← (re + i·im)[p] · (cr[p] + i·ci[p])`.
#[inline(always)]
fn rotate_all<const LANES: usize>(re: &mut [f64], im: &mut [f64], cr: &[f64], ci: &[f64]) {
    let lanes = re.chunks_exact_mut(LANES).zip(im.chunks_exact_mut(LANES));
    for ((rs, is), (&r, &c)) in lanes.zip(cr.iter().zip(ci.iter())) {
        let rs: &mut [f64; LANES] = rs.try_into().unwrap();
        let is: &mut [f64; LANES] = is.try_into().unwrap();
        for l in 0..LANES {
            let a = rs[l];
            let b = is[l];
            rs[l] = a * r - b * c;
            is[l] = a * c + b * r;
        }
    }
}

enum DftKind {
    /// Length is a power of two: direct radix-2.
    Pow2,
    /// Arbitrary length via Bluestein: `X_k = c_k · Σ_n (x_n c_n) b_(k−n)`
    /// with the chirp `c_k = e^(-iπk²/len)` and `b = conj(c)` extended
    /// symmetrically, so the sum is a circular convolution of size
    /// `m ≥ 2·len − 1` carried by two power-of-two FFTs. The kernel's FFT is
    /// precomputed with the inverse-FFT normalization folded in.
    Bluestein {
        m: usize,
        chirp_re: Vec<f64>,
        chirp_im: Vec<f64>,
        kernel_re: Vec<f64>,
        kernel_im: Vec<f64>,
    },
}

/// A forward DFT of fixed length with precomputed tables.
pub struct DftPlan {
    len: usize,
    tw: Twiddles,
    kind: DftKind,
}

impl DftPlan {
    pub fn new(len: usize) -> DftPlan {
        assert!(len >= 1, "transform length must be at least 1");
        if len.is_power_of_two() {
            return DftPlan { len, tw: Twiddles::new(len), kind: DftKind::Pow2 };
        }
        let m = (2 * len - 1).next_power_of_two();
        let tw = Twiddles::new(m);
        // The chirp exponent k² grows past where the angle stays accurate in
        // one multiply; reduce it modulo 2·len first (e^(-iπk²/len) has
        // period 2·len in k²), keeping every table entry a small exact angle.
        let two_len = 2 * len as u64;
        let mut chirp_re = Vec::with_capacity(len);
        let mut chirp_im = Vec::with_capacity(len);
        for k in 0..len as u64 {
            let q = (k * k) % two_len;
            let angle = -PI * q as f64 / len as f64;
            chirp_re.push(angle.cos());
            chirp_im.push(angle.sin());
        }
        let mut kernel_re = vec![0.0; m];
        let mut kernel_im = vec![0.0; m];
        for k in 0..len {
            kernel_re[k] = chirp_re[k];
            kernel_im[k] = -chirp_im[k];
            if k != 0 {
                kernel_re[m - k] = chirp_re[k];
                kernel_im[m - k] = -chirp_im[k];
            }
        }
        // The kernel spectrum is kept in the decimation-in-frequency output
        // order; the convolution multiplies and inverts in that same order,
        // so no reordering pass ever runs.
        fft_dif_lanes::<1>(&mut kernel_re, &mut kernel_im, m, &tw);
        let norm = 1.0 / m as f64;
        for v in kernel_re.iter_mut().chain(kernel_im.iter_mut()) {
            *v *= norm;
        }
        DftPlan { len, tw, kind: DftKind::Bluestein { m, chirp_re, chirp_im, kernel_re, kernel_im } }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Working buffer size per lane: the FFT size the plan actually runs.
    fn work_len(&self) -> usize {
        match &self.kind {
            DftKind::Pow2 => self.len,
            DftKind::Bluestein { m, .. } => *m,
        }
    }

    /// Forward DFT over the lane batch. Buffers hold `work_len() · LANES`
    /// values with the input in positions `0..len` and zeros beyond.
    #[inline(always)]
    fn forward_lanes<const LANES: usize>(&self, re: &mut [f64], im: &mut [f64]) {
        match &self.kind {
            DftKind::Pow2 => fft_dit_lanes::<LANES>(re, im, self.len, &self.tw, false, true),
            DftKind::Bluestein { m, chirp_re, chirp_im, kernel_re, kernel_im } => {
                rotate_all::<LANES>(re, im, chirp_re, chirp_im);
                fft_dif_lanes::<LANES>(re, im, *m, &self.tw);
                rotate_all::<LANES>(re, im, kernel_re, kernel_im);
                fft_dit_lanes::<LANES>(re, im, *m, &self.tw, true, false);
                rotate_all::<LANES>(re, im, chirp_re, chirp_im);
            }
        }
    }

    /// Forward DFT of a single complex sequence of length `len`.
    pub fn forward(&self, re: &mut Vec<f64>, im: &mut Vec<f64>) {
        assert_eq!(re.len(), self.len);
        assert_eq!(im.len(), self.len);
        let work = self.work_len();
        re.resize(work, 0.0);
        im.resize(work, 0.0);
        dispatch_forward::<1>(self, re, im);
        re.truncate(self.len);
        im.truncate(self.len);
    }
}

/// Reusable transform working storage; zeroed and refilled per batch.
#[derive(Default)]
pub struct Scratch {
    re: Vec<f64>,
    im: Vec<f64>,
}

impl Scratch {
    fn ensure(&mut self, len: usize) -> (&mut [f64], &mut [f64]) {
        if self.re.len() < len {
            self.re.resize(len, 0.0);
            self.im.resize(len, 0.0);
        }
        let re = &mut self.re[..len];
        let im = &mut self.im[..len];
        re.fill(0.0);
        im.fill(0.0);
        (re, im)
    }
}

/// Equal-length real sequences addressed with strides: element `i` of
/// sequence `s` is `data[i * elem_stride + s * seq_stride]`.
pub struct SrcBatch<'a> {
    pub data: &'a [f64],
    pub elem_stride: usize,
    pub seq_stride: usize,
}

/// Mutable counterpart of [`SrcBatch`] for transform output.
pub struct OutBatch<'a> {
    pub data: &'a mut [f64],
    pub elem_stride: usize,
    pub seq_stride: usize,
}

/// Fast type-I discrete sine transform of length `n`:
///
/// `S_k = Σ_{i=1..n} x_i · sin(π·i·k / (n + 1))`, for `k = 1..n`.
///
/// The transform is its own inverse up to the factor `2 / (n + 1)`.
pub struct DstPlan {
    n: usize,
    /// Odd-extension length, `2(n + 1)`.
    ext: usize,
    dft: DftPlan,
}

impl DstPlan {
    pub fn new(n: usize) -> DstPlan {
        assert!(n >= 1, "transform length must be at least 1");
        let ext = 2 * (n + 1);
        DstPlan { n, ext, dft: DftPlan::new(ext) }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Transforms up to `2·LANES` sequences at once, multiplying every output
    /// by `scale`. Lanes beyond `count` are zero and ignored.
    ///
    /// Every dispatch tier runs the same scalar operation order per
    /// sequence, so results are bit-identical whichever unit executes them.
    pub fn apply_batch<const LANES: usize>(
        &self,
        src: SrcBatch<'_>,
        dst: OutBatch<'_>,
        count: usize,
        scale: f64,
        scratch: &mut Scratch,
    ) {
        assert!(count >= 1 && count <= 2 * LANES, "batch holds up to {} sequences", 2 * LANES);
        #[cfg(target_arch = "x86_64")]
        if wide_lanes_available() {
            // SAFETY: guarded by runtime detection of avx2 + fma.
            unsafe { self.apply_batch_wide::<LANES>(src, dst, count, scale, scratch) };
            return;
        }
        self.apply_batch_impl::<LANES>(src, dst, count, scale, scratch);
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2", enable = "fma")]
    unsafe fn apply_batch_wide<const LANES: usize>(
        &self,
        src: SrcBatch<'_>,
        dst: OutBatch<'_>,
        count: usize,
        scale: f64,
        scratch: &mut Scratch,
    ) {
        self.apply_batch_impl::<LANES>(src, dst, count, scale, scratch);
    }

    #[inline(always)]
    fn apply_batch_impl<const LANES: usize>(
        &self,
        src: SrcBatch<'_>,
        dst: OutBatch<'_>,
        count: usize,
        scale: f64,
        scratch: &mut Scratch,
    ) {
        let (re, im) = scratch.ensure(self.dft.work_len() * LANES);
        match &self.dft.kind {
            DftKind::Pow2 => {
                self.pack_plain::<LANES>(&src, count, re, im);
                fft_dit_lanes::<LANES>(re, im, self.ext, &self.dft.tw, false, true);
                self.unpack_plain::<LANES>(dst, count, scale, re, im);
            }
            DftKind::Bluestein { m, chirp_re, chirp_im, kernel_re, kernel_im } => {
                self.pack_chirped::<LANES>(&src, count, re, im, chirp_re, chirp_im);
                fft_dif_lanes::<LANES>(re, im, *m, &self.dft.tw);
                rotate_all::<LANES>(re, im, kernel_re, kernel_im);
                fft_dit_lanes::<LANES>(re, im, *m, &self.dft.tw, true, false);
                self.unpack_chirped::<LANES>(dst, count, scale, re, im, chirp_re, chirp_im);
            }
        }
    }

    /// Odd extension into the work buffer: `v[0] = v[n+1] = 0`,
    /// `v[i+1] = x_i`, `v[ext−1−i] = −x_i`. Even-numbered sequences ride in
    /// the real plane, odd ones in the imaginary plane of the same lane.
    #[inline(always)]
    fn pack_plain<const LANES: usize>(
        &self,
        src: &SrcBatch<'_>,
        count: usize,
        re: &mut [f64],
        im: &mut [f64],
    ) {
        for s in 0..count {
            let lane = s >> 1;
            let plane: &mut [f64] = if s & 1 == 0 { &mut *re } else { &mut *im };
            for i in 0..self.n {
                let v = src.data[i * src.elem_stride + s * src.seq_stride];
                plane[(i + 1) * LANES + lane] = v;
                plane[(self.ext - 1 - i) * LANES + lane] = -v;
            }
        }
    }

    /// Odd extension with Bluestein's input chirp folded in. The chirp is
    /// symmetric across the extension (`c[ext−p] = c[p]` since `ext` is
    /// even), so each element is rotated once and written to both mirror
    /// positions.
    #[inline(always)]
    fn pack_chirped<const LANES: usize>(
        &self,
        src: &SrcBatch<'_>,
        count: usize,
        re: &mut [f64],
        im: &mut [f64],
        cr: &[f64],
        ci: &[f64],
    ) {
        for lane in 0..count.div_ceil(2) {
            let s_re = 2 * lane;
            let s_im = s_re + 1;
            for i in 0..self.n {
                let v1 = src.data[i * src.elem_stride + s_re * src.seq_stride];
                let v2 = if s_im < count {
                    src.data[i * src.elem_stride + s_im * src.seq_stride]
                } else {
                    0.0
                };
                let r = cr[i + 1];
                let c = ci[i + 1];
                let ar = v1 * r - v2 * c;
                let ai = v1 * c + v2 * r;
                let p1 = (i + 1) * LANES + lane;
                let p2 = (self.ext - 1 - i) * LANES + lane;
                re[p1] = ar;
                im[p1] = ai;
                re[p2] = -ar;
                im[p2] = -ai;
            }
        }
    }

    /// For the odd extension, `S_k = −Im(Y_k)/2`; splitting the packed pair
    /// via `Y1 = (Z_k + conj(Z_(ext−k)))/2` and
    /// `Y2 = (Z_k − conj(Z_(ext−k)))/(2i)` leaves plain differences of the
    /// stored planes.
    #[inline(always)]
    fn unpack_plain<const LANES: usize>(
        &self,
        dst: OutBatch<'_>,
        count: usize,
        scale: f64,
        re: &[f64],
        im: &[f64],
    ) {
        let q = scale * 0.25;
        for s in 0..count {
            let lane = s >> 1;
            for k in 1..=self.n {
                let pk = k * LANES + lane;
                let pm = (self.ext - k) * LANES + lane;
                let v = if s & 1 == 0 { im[pm] - im[pk] } else { re[pk] - re[pm] };
                dst.data[(k - 1) * dst.elem_stride + s * dst.seq_stride] = v * q;
            }
        }
    }

    /// Same reduction as [`Self::unpack_plain`] with Bluestein's output chirp
    /// applied on the fly (again using `c[ext−k] = c[k]`).
    #[inline(always)]
    fn unpack_chirped<const LANES: usize>(
        &self,
        dst: OutBatch<'_>,
        count: usize,
        scale: f64,
        re: &[f64],
        im: &[f64],
        cr: &[f64],
        ci: &[f64],
    ) {
        let q = scale * 0.25;
        for lane in 0..count.div_ceil(2) {
            let s_re = 2 * lane;
            let s_im = s_re + 1;
            for k in 1..=self.n {
                let pk = k * LANES + lane;
                let pm = (self.ext - k) * LANES + lane;
                let r = cr[k];
                let c = ci[k];
                let zi_k = re[pk] * c + im[pk] * r;
                let zi_m = re[pm] * c + im[pm] * r;
                dst.data[(k - 1) * dst.elem_stride + s_re * dst.seq_stride] = (zi_m - zi_k) * q;
                if s_im < count {
                    let zr_k = re[pk] * r - im[pk] * c;
                    let zr_m = re[pm] * r - im[pm] * c;
                    dst.data[(k - 1) * dst.elem_stride + s_im * dst.seq_stride] =
                        (zr_k - zr_m) * q;
                }
            }
        }
    }

    /// Unnormalized forward transform of one sequence.
    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut out = vec![0.0; self.n];
        let mut scratch = Scratch::default();
        self.apply_batch::<1>(
            SrcBatch { data: x, elem_stride: 1, seq_stride: 0 },
            OutBatch { data: &mut out, elem_stride: 1, seq_stride: 0 },
            1,
            1.0,
            &mut scratch,
        );
        out
    }

    /// Inverse transform: `transform` scaled by `2 / (n + 1)`.
    pub fn inverse(&self, s: &[f64]) -> Vec<f64> {
        assert_eq!(s.len(), self.n);
        let mut out = vec![0.0; self.n];
        let mut scratch = Scratch::default();
        self.apply_batch::<1>(
            SrcBatch { data: s, elem_stride: 1, seq_stride: 0 },
            OutBatch { data: &mut out, elem_stride: 1, seq_stride: 0 },
            1,
            2.0 / (self.n as f64 + 1.0),
            &mut scratch,
        );
        out
    }
}

/// Monomorphic dispatch used by the single-sequence paths.
fn dispatch_forward<const LANES: usize>(plan: &DftPlan, re: &mut [f64], im: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if wide_lanes_available() {
        // SAFETY: guarded by runtime detection of avx2 + fma.
        unsafe { forward_wide::<LANES>(plan, re, im) };
        return;
    }
    plan.forward_lanes::<LANES>(re, im);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2", enable = "fma")]
unsafe fn forward_wide<const LANES: usize>(plan: &DftPlan, re: &mut [f64], im: &mut [f64]) {
    plan.forward_lanes::<LANES>(re, im);
}

/// Whether the wider vector units are worth dispatching to on this machine.
#[cfg(target_arch = "x86_64")]
fn wide_lanes_available() -> bool {
    static AVAILABLE: OnceLock<bool> = OnceLock::new();
    *AVAILABLE.get_or_init(|| {
        std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma")
    })
}

#[cfg(test)]
pub(crate) fn naive_dst1(x: &[f64]) -> Vec<f64> {
    let p = (x.len() + 1) as f64;
    (1..=x.len())
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(i, &v)| v * (PI * (i + 1) as f64 * k as f64 / p).sin())
                .sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive_seed, rng_from};
    use rand::Rng;

    fn random_vector(n: usize, stream: u64) -> Vec<f64> {
        let mut rng = rng_from(derive_seed(0x5eed_f00d, "fft-test", &[stream, n as u64]));
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn naive_dft(re: &[f64], im: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = re.len();
        let mut or = vec![0.0; n];
        let mut oi = vec![0.0; n];
        for k in 0..n {
            for j in 0..n {
                let angle = -2.0 * PI * (j * k % n) as f64 / n as f64;
                let (s, c) = angle.sin_cos();
                or[k] += re[j] * c - im[j] * s;
                oi[k] += re[j] * s + im[j] * c;
            }
        }
        (or, oi)
    }

    #[test]
    fn dft_matches_naive_for_mixed_lengths() {
        for &n in &[1usize, 2, 3, 4, 5, 6, 8, 12, 16, 31, 32, 97, 107] {
            let plan = DftPlan::new(n);
            let mut re = random_vector(n, 1);
            let mut im = random_vector(n, 2);
            let (er, ei) = naive_dft(&re, &im);
            plan.forward(&mut re, &mut im);
            let norm = er.iter().chain(ei.iter()).fold(1.0f64, |a, v| a.max(v.abs()));
            for k in 0..n {
                assert!(
                    (re[k] - er[k]).abs() / norm < 1e-12 && (im[k] - ei[k]).abs() / norm < 1e-12,
                    "length {n} bin {k}: got {}+{}i, want {}+{}i",
                    re[k],
                    im[k],
                    er[k],
                    ei[k]
                );
            }
        }
    }

    #[test]
    fn dst_matches_naive_across_lengths() {
        for &n in &[1usize, 2, 3, 4, 5, 6, 7, 8, 10, 15, 16, 31, 32, 47, 62, 63, 64] {
            let plan = DstPlan::new(n);
            let x = random_vector(n, 3);
            let want = naive_dst1(&x);
            let got = plan.transform(&x);
            let norm = want.iter().fold(1.0f64, |a, v| a.max(v.abs()));
            for k in 0..n {
                assert!(
                    (got[k] - want[k]).abs() / norm < 1e-12,
                    "length {n} bin {k}: got {} want {}",
                    got[k],
                    want[k]
                );
            }
        }
    }

    #[test]
    fn dst_matches_naive_at_solver_lengths() {
        // The sizes the 240×320 depth solve actually runs (interior 238×318).
        for &n in &[238usize, 318] {
            let plan = DstPlan::new(n);
            let x = random_vector(n, 4);
            let want = naive_dst1(&x);
            let got = plan.transform(&x);
            let norm = want.iter().fold(1.0f64, |a, v| a.max(v.abs()));
            let worst = got
                .iter()
                .zip(&want)
                .map(|(g, w)| (g - w).abs() / norm)
                .fold(0.0f64, f64::max);
            assert!(worst < 1e-12, "length {n}: worst relative error {worst:e}");
        }
    }

    #[test]
    fn inverse_round_trips() {
        for &n in &[7usize, 63, 100, 238] {
            let plan = DstPlan::new(n);
            let x = random_vector(n, 5);
            let back = plan.inverse(&plan.transform(&x));
            let worst = back
                .iter()
                .zip(&x)
                .map(|(b, v)| (b - v).abs())
                .fold(0.0f64, f64::max);
            assert!(worst < 1e-12, "length {n}: worst round-trip error {worst:e}");
        }
    }

    #[test]
    fn batched_transform_matches_single_sequences() {
        // Eight sequences packed as the four complex lanes of one batch, read
        // and written column-wise from a row-major matrix.
        let n = 30;
        let cols = 11;
        let plan = DstPlan::new(n);
        let matrix = random_vector(n * cols, 6);
        let mut out = vec![0.0; n * cols];
        let mut scratch = Scratch::default();
        for start in [0usize, 8] {
            let count = (cols - start).min(8);
            plan.apply_batch::<4>(
                SrcBatch { data: &matrix[start..], elem_stride: cols, seq_stride: 1 },
                OutBatch { data: &mut out[start..], elem_stride: cols, seq_stride: 1 },
                count,
                3.5,
                &mut scratch,
            );
        }
        for s in 0..cols {
            let column: Vec<f64> = (0..n).map(|i| matrix[i * cols + s]).collect();
            let want = plan.transform(&column);
            for k in 0..n {
                let got = out[k * cols + s];
                assert!(
                    (got - 3.5 * want[k]).abs() < 1e-12 * (1.0 + want[k].abs()),
                    "sequence {s} bin {k}: got {got} want {}",
                    3.5 * want[k]
                );
            }
        }
    }
}
