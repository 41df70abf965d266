//! Significance tests and density estimates for the ablation analysis.
//!
//! Two two-sided location tests (Welch's t and Mann–Whitney U) plus a
//! Gaussian kernel density estimate and a plain histogram. The tests carry a
//! significance flag evaluated against the Bonferroni-corrected threshold
//! used by the data-ablation study: five comparisons against the reference
//! fraction at a family α of 0.01, so a single comparison is significant
//! below 0.01 / 5 = 0.002.

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::{Error, Result};

/// Family-wise significance level for the ablation comparisons.
pub const SIGNIFICANCE_ALPHA: f64 = 0.01;

/// Number of comparisons in the ablation family (fractions tested against
/// the reference).
pub const BONFERRONI_M: usize = 5;

/// Per-comparison threshold `alpha / m`.
pub fn bonferroni_threshold(alpha: f64, m: usize) -> f64 {
    assert!(m > 0, "cannot correct for zero comparisons");
    alpha / m as f64
}

/// The corrected threshold every [`TestResult`] is flagged against.
pub fn corrected_alpha() -> f64 {
    bonferroni_threshold(SIGNIFICANCE_ALPHA, BONFERRONI_M)
}

/// Outcome of a two-sample location test.
#[derive(Debug, Clone, PartialEq)]
pub struct TestResult {
    /// t for the t-tests, U = min(U₁, U₂) for Mann–Whitney.
    pub statistic: f64,
    /// Two-sided p-value in [0, 1].
    pub p_value: f64,
    /// `p_value < corrected_alpha()`.
    pub significant: bool,
}

impl TestResult {
    fn new(statistic: f64, p_value: f64) -> TestResult {
        let p = p_value.clamp(0.0, 1.0);
        TestResult {
            statistic,
            p_value: p,
            significant: p < corrected_alpha(),
        }
    }
}

fn check_samples(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "two-sample test needs at least 2 values per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "two-sample test requires finite values".into(),
        ));
    }
    Ok(())
}

/// Mean and unbiased (n−1) variance.
fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let ss: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, ss / (n - 1.0))
}

fn t_p_value(t: f64, df: f64) -> Result<f64> {
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::Numeric(format!("t distribution with df = {df}: {e}")))?;
    Ok((2.0 * dist.sf(t.abs())).min(1.0))
}

/// Handles the degenerate two-constant-samples case shared by both t-test
/// variants: equal means are a defined p = 1, unequal means are the p → 0
/// limit (reported with a warning since no finite statistic exists).
fn degenerate_t(ma: f64, mb: f64) -> TestResult {
    if ma == mb {
        TestResult::new(0.0, 1.0)
    } else {
        log::warn!(
            "both samples have zero variance with unequal means; \
             reporting the p = 0 limit"
        );
        TestResult::new(if ma > mb { f64::INFINITY } else { f64::NEG_INFINITY }, 0.0)
    }
}

/// Welch's two-sided t-test (unequal variances, Welch–Satterthwaite degrees
/// of freedom). The default test of the ablation study.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TestResult> {
    check_samples(a, b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    if va == 0.0 && vb == 0.0 {
        return Ok(degenerate_t(ma, mb));
    }
    let (wa, wb) = (va / na, vb / nb);
    let se2 = wa + wb;
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (wa * wa / (na - 1.0) + wb * wb / (nb - 1.0));
    Ok(TestResult::new(t, t_p_value(t, df)?))
}

/// Pooled-variance Student's t-test, the classical equal-variance variant.
/// On equal-variance, equal-size samples it coincides with
/// [`welch_t_test`] (same statistic and degrees of freedom).
pub fn pooled_t_test(a: &[f64], b: &[f64]) -> Result<TestResult> {
    check_samples(a, b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    if va == 0.0 && vb == 0.0 {
        return Ok(degenerate_t(ma, mb));
    }
    let sp2 = ((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0);
    let t = (ma - mb) / (sp2 * (1.0 / na + 1.0 / nb)).sqrt();
    Ok(TestResult::new(t, t_p_value(t, na + nb - 2.0)?))
}

// ---------------------------------------------------------------------------
// Mann–Whitney U
// ---------------------------------------------------------------------------

/// Exact enumeration is used while the number of arrangements
/// C(n₁+n₂, n₁) stays below this; C(20, 10) = 184 756 is the largest
/// balanced case inside, so samples up to 10 + 10 are always exact.
const EXACT_ENUM_LIMIT: u64 = 200_000;

/// C(n, k), saturating at `u64::MAX` once it passes the enumeration limit
/// (beyond which the exact value no longer matters).
fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    let mut c = 1u128;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
        if c > EXACT_ENUM_LIMIT as u128 {
            return u64::MAX;
        }
    }
    c as u64
}

/// Doubled U₁ of the values at `sel` versus the rest of `pooled`: 2 per
/// strict win, 1 per tie, so the result is exact in integers.
fn doubled_u1(pooled: &[f64], sel: &[bool]) -> u64 {
    let mut u2 = 0u64;
    for (i, &ai) in pooled.iter().enumerate() {
        if !sel[i] {
            continue;
        }
        for (j, &bj) in pooled.iter().enumerate() {
            if sel[j] {
                continue;
            }
            if ai > bj {
                u2 += 2;
            } else if ai == bj {
                u2 += 1;
            }
        }
    }
    u2
}

/// Visits every k-subset of `0..n` in lexicographic order.
fn for_each_combination(n: usize, k: usize, mut visit: impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        visit(&idx);
        // Rightmost position that can still advance.
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Exact two-sided p: the proportion of arrangements at least as extreme as
/// the observed U₁, doubled and capped at 1.
fn mwu_exact_p(pooled: &[f64], n1: usize, observed_u2: u64) -> f64 {
    let n = pooled.len();
    let mut le = 0u64;
    let mut ge = 0u64;
    let mut total = 0u64;
    let mut sel = vec![false; n];
    for_each_combination(n, n1, |idx| {
        sel.iter_mut().for_each(|s| *s = false);
        for &i in idx {
            sel[i] = true;
        }
        let u2 = doubled_u1(pooled, &sel);
        if u2 <= observed_u2 {
            le += 1;
        }
        if u2 >= observed_u2 {
            ge += 1;
        }
        total += 1;
    });
    (2.0 * le.min(ge) as f64 / total as f64).min(1.0)
}

/// Normal approximation with tie correction and a 0.5 continuity
/// correction, for sample sizes beyond exact enumeration.
fn mwu_normal_p(pooled: &[f64], n1: usize, n2: usize, u1: f64) -> f64 {
    let n = (n1 + n2) as f64;
    let mut sorted = pooled.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let mu = n1 as f64 * n2 as f64 / 2.0;
    let sigma2 = n1 as f64 * n2 as f64 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if sigma2 <= 0.0 {
        // Every pooled value identical: the statistic is constant.
        return 1.0;
    }
    let d = u1 - mu;
    let z = if d.abs() <= 0.5 { 0.0 } else { (d.abs() - 0.5) / sigma2.sqrt() };
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (2.0 * normal.sf(z)).min(1.0)
}

/// Mann–Whitney U test, two-sided. Reports U = min(U₁, U₂). Ties count a
/// half toward U. Small samples (≤ ~10 per group) get an exact permutation
/// p-value; larger ones the tie-corrected normal approximation.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<TestResult> {
    check_samples(a, b)?;
    let (n1, n2) = (a.len(), b.len());
    let mut pooled = Vec::with_capacity(n1 + n2);
    pooled.extend_from_slice(a);
    pooled.extend_from_slice(b);
    let sel: Vec<bool> = (0..n1 + n2).map(|i| i < n1).collect();
    let u2_obs = doubled_u1(&pooled, &sel);
    let u1 = u2_obs as f64 / 2.0;
    let u = u1.min(n1 as f64 * n2 as f64 - u1);
    let p = if binomial((n1 + n2) as u64, n1 as u64) <= EXACT_ENUM_LIMIT {
        mwu_exact_p(&pooled, n1, u2_obs)
    } else {
        mwu_normal_p(&pooled, n1, n2, u1)
    };
    Ok(TestResult::new(u, p))
}

// ---------------------------------------------------------------------------
// Density estimates
// ---------------------------------------------------------------------------

/// Number of points in a KDE support grid.
const KDE_POINTS: usize = 513;

/// How many bandwidths of padding the support extends past the data. Five
/// keeps the truncated tail mass (~6e-7) far below the 1e-3 normalization
/// tolerance.
const KDE_PAD: f64 = 5.0;

/// A kernel density estimate sampled on a uniform support grid.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeCurve {
    pub support: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

impl KdeCurve {
    /// Trapezoid integral of the density over the support; ≈ 1 by
    /// construction.
    pub fn integral(&self) -> f64 {
        trapezoid(&self.support, &self.density)
    }
}

pub(crate) fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0)
        .sum()
}

/// Gaussian kernel density estimate with a fixed bandwidth, evaluated on a
/// uniform grid padded [`KDE_PAD`] bandwidths past the data range.
pub fn gaussian_kde(values: &[f64], bandwidth: f64) -> Result<KdeCurve> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("KDE of an empty sample".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("KDE requires finite values".into()));
    }
    if !(bandwidth.is_finite() && bandwidth > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "KDE bandwidth must be positive, got {bandwidth}"
        )));
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min) - KDE_PAD * bandwidth;
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + KDE_PAD * bandwidth;
    let step = (hi - lo) / (KDE_POINTS - 1) as f64;
    let norm = 1.0 / (values.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    let support: Vec<f64> = (0..KDE_POINTS).map(|i| lo + i as f64 * step).collect();
    let density = support
        .iter()
        .map(|&x| {
            norm * values
                .iter()
                .map(|&v| {
                    let z = (x - v) / bandwidth;
                    (-0.5 * z * z).exp()
                })
                .sum::<f64>()
        })
        .collect();
    Ok(KdeCurve { support, density, bandwidth })
}

/// Silverman's rule-of-thumb bandwidth, used where no bandwidth is
/// prescribed (violin outlines). Falls back to a tiny positive width for
/// constant samples.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 1e-9;
    }
    let (_, var) = mean_var(values);
    let sd = var.sqrt();
    if sd == 0.0 {
        return 1e-9;
    }
    1.06 * sd * (values.len() as f64).powf(-0.2)
}

/// Fixed-width histogram with bin edges aligned to multiples of the width.
/// The straightforward reading of a "bin width" — emitted alongside the KDE
/// so the two interpretations can be compared.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// Left edge of the first bin (a multiple of `bin_width`).
    pub left: f64,
    pub bin_width: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn edge(&self, i: usize) -> f64 {
        self.left + i as f64 * self.bin_width
    }

    /// Per-bin probability density: count / (n · width). Sums×width to 1.
    pub fn density(&self) -> Vec<f64> {
        let n: u64 = self.counts.iter().sum();
        let scale = 1.0 / (n as f64 * self.bin_width);
        self.counts.iter().map(|&c| c as f64 * scale).collect()
    }
}

pub fn histogram(values: &[f64], bin_width: f64) -> Result<Histogram> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("histogram of an empty sample".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("histogram requires finite values".into()));
    }
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "histogram bin width must be positive, got {bin_width}"
        )));
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let left = (min / bin_width).floor() * bin_width;
    let bins = (((max - left) / bin_width).floor() as usize + 1).max(1);
    let mut counts = vec![0u64; bins];
    for &v in values {
        let i = (((v - left) / bin_width).floor() as usize).min(bins - 1);
        counts[i] += 1;
    }
    Ok(Histogram { left, bin_width, counts })
}
