//! Quantitative analysis of trained models: depth-map alignment and scale
//! fitting, the two-class error taxonomy, per-coordinate validation MSE
//! distributions, significance tests, and the data-ablation driver.
//!
//! The depth comparison pipeline mirrors how a reconstruction is scored
//! against a reference: translate the reference to the cross-correlation
//! optimum, fit a depth scale to it, then report mean absolute pixelwise
//! error in micrometres — split into pixels where the reference is exactly
//! zero (false contact) and pixels inside the true contact region.

mod ablation;
pub mod stats;

pub use ablation::{run_ablation, AblationConfig, AblationReport, AblationRow, AblationTests};
pub use stats::{
    bonferroni_threshold, corrected_alpha, gaussian_kde, histogram, mann_whitney_u,
    pooled_t_test, silverman_bandwidth, welch_t_test, Histogram, KdeCurve, TestResult,
};

use crate::dataset::{Dataset, Sample};
use crate::grid::{DepthMap, GradientMap, TactileImage};
use crate::touchnet::{self, ForwardMode, Scalar, TouchNetModel};
use crate::{poisson, Error, Result};

/// KDE bandwidth for per-coordinate MSE distributions. MSE values on the
/// normalized gradient scale concentrate in a few hundredths, so the curve
/// is resolved at 1.5e-3.
pub const MSE_KDE_BANDWIDTH: f64 = 0.0015;

// ---------------------------------------------------------------------------
// Alignment
// ---------------------------------------------------------------------------

/// Finds the integer translation of `ground_truth` that best overlaps
/// `predicted`, as the argmax of their zero-padded 2-D cross-correlation.
///
/// The returned `(shift_x, shift_y)` is the translation to apply to the
/// ground truth: if the ground truth is the prediction moved by (+3, −2)
/// pixels, the result is (−3, +2). Exact ties are broken by smaller
/// `shift_x² + shift_y²`, then lexicographically on `(shift_x, shift_y)`.
pub fn align_xcorr(predicted: &DepthMap, ground_truth: &DepthMap) -> Result<(i64, i64)> {
    if predicted.rows != ground_truth.rows || predicted.cols != ground_truth.cols {
        return Err(Error::InvalidArgument(format!(
            "alignment needs equal dimensions, got {}x{} vs {}x{}",
            predicted.rows, predicted.cols, ground_truth.rows, ground_truth.cols
        )));
    }
    if ground_truth.values.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidArgument(
            "alignment is undefined against an identically zero ground truth".into(),
        ));
    }
    let (rows, cols) = (predicted.rows as i64, predicted.cols as i64);
    let p = &predicted.values;
    let g = &ground_truth.values;
    let mut best: Option<(f64, i64, (i64, i64))> = None;
    for sy in -(rows - 1)..rows {
        // Overlap rows of the shifted ground truth with the prediction.
        let r0 = sy.max(0);
        let r1 = (rows + sy).min(rows);
        for sx in -(cols - 1)..cols {
            let c0 = sx.max(0);
            let c1 = (cols + sx).min(cols);
            let mut acc = 0.0f64;
            for r in r0..r1 {
                let pr = (r * cols) as usize;
                let gr = ((r - sy) * cols - sx) as i64;
                for c in c0..c1 {
                    acc += p[pr + c as usize] * g[(gr + c) as usize];
                }
            }
            let mag = sx * sx + sy * sy;
            let candidate = (acc, mag, (sx, sy));
            let better = match &best {
                None => true,
                Some((bv, bm, bs)) => {
                    acc > *bv
                        || (acc == *bv && (mag < *bm || (mag == *bm && (sx, sy) < *bs)))
                }
            };
            if better {
                best = Some((candidate.0, candidate.1, candidate.2));
            }
        }
    }
    let (_, _, shift) = best.expect("non-empty shift range");
    Ok(shift)
}

/// Ground truth translated by `(shift_x, shift_y)` pixels, zero-filled where
/// the source falls outside the frame — consistent with the zero padding the
/// alignment search assumes.
fn translate(map: &DepthMap, shift_x: i64, shift_y: i64) -> DepthMap {
    let (rows, cols) = (map.rows as i64, map.cols as i64);
    let mut values = vec![0.0; map.values.len()];
    for r in 0..rows {
        let src_r = r - shift_y;
        if src_r < 0 || src_r >= rows {
            continue;
        }
        for c in 0..cols {
            let src_c = c - shift_x;
            if src_c < 0 || src_c >= cols {
                continue;
            }
            values[(r * cols + c) as usize] = map.values[(src_r * cols + src_c) as usize];
        }
    }
    DepthMap {
        values,
        ..map.clone()
    }
}

// ---------------------------------------------------------------------------
// Depth adjustment
// ---------------------------------------------------------------------------

/// Least-squares depth scale: the s minimizing MSE(s·gt, pred), in closed
/// form ⟨gt, pred⟩ / ⟨gt, gt⟩. The result is clamped to [0.5, 2.0] — a
/// fit outside that range means the reconstruction is not credibly the same
/// surface, and is logged as a warning.
pub fn fit_depth_scale(aligned_gt: &DepthMap, predicted: &DepthMap) -> Result<f64> {
    if aligned_gt.rows != predicted.rows || aligned_gt.cols != predicted.cols {
        return Err(Error::InvalidArgument(format!(
            "scale fit needs equal dimensions, got {}x{} vs {}x{}",
            aligned_gt.rows, aligned_gt.cols, predicted.rows, predicted.cols
        )));
    }
    let gg: f64 = aligned_gt.values.iter().map(|v| v * v).sum();
    if gg == 0.0 {
        return Err(Error::InvalidArgument(
            "depth scale is undefined against an identically zero ground truth".into(),
        ));
    }
    let gp: f64 = aligned_gt
        .values
        .iter()
        .zip(&predicted.values)
        .map(|(g, p)| g * p)
        .sum();
    let s = gp / gg;
    if !(0.5..=2.0).contains(&s) {
        log::warn!("fitted depth scale {s:.4} outside [0.5, 2.0]; clamping");
    }
    Ok(s.clamp(0.5, 2.0))
}

/// Alternative adjustment: a uniform additive offset on the contact region
/// (pixels where gt > 0), the c minimizing the contact-region MSE of
/// gt + c versus pred. Zero pixels stay zero so the error taxonomy keeps
/// its meaning.
pub fn fit_depth_offset(aligned_gt: &DepthMap, predicted: &DepthMap) -> Result<f64> {
    if aligned_gt.rows != predicted.rows || aligned_gt.cols != predicted.cols {
        return Err(Error::InvalidArgument(format!(
            "offset fit needs equal dimensions, got {}x{} vs {}x{}",
            aligned_gt.rows, aligned_gt.cols, predicted.rows, predicted.cols
        )));
    }
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for (g, p) in aligned_gt.values.iter().zip(&predicted.values) {
        if *g > 0.0 {
            sum += p - g;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InvalidArgument(
            "depth offset is undefined: ground truth has no contact region".into(),
        ));
    }
    Ok(sum / n as f64)
}

/// Which depth adjustment [`evaluate_reconstruction`] applies to the
/// aligned ground truth before scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthAdjust {
    /// Uniform scale (the default; preserves zero pixels by construction).
    Scale,
    /// Uniform offset on the contact region only.
    Offset,
}

// ---------------------------------------------------------------------------
// Error taxonomy
// ---------------------------------------------------------------------------

/// Absolute pixelwise depth errors in µm, split by whether the reference is
/// exactly zero there (class 1: spurious depth where nothing touched) or
/// positive (class 2: error inside the true contact region).
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub rows: usize,
    pub cols: usize,
    /// Per-pixel |pred − gt| in µm, row-major.
    pub error_um: Vec<f64>,
    /// Mean absolute error over pixels with reference exactly 0 (µm);
    /// 0.0 when the class is empty.
    pub type1_um: f64,
    /// Mean absolute error over pixels with positive reference (µm).
    pub type2_um: f64,
    /// Count-weighted mean of the two classes — exactly
    /// `(n1·type1 + n2·type2)/(n1 + n2)`.
    pub overall_um: f64,
    /// The class populations, for distribution plots.
    pub type1_values: Vec<f64>,
    pub type2_values: Vec<f64>,
}

impl ErrorReport {
    pub fn type1_count(&self) -> usize {
        self.type1_values.len()
    }

    pub fn type2_count(&self) -> usize {
        self.type2_values.len()
    }
}

/// Compares a reconstruction against an already aligned, already
/// depth-adjusted reference. Inputs are millimetres; the report is in µm.
pub fn error_report(predicted: &DepthMap, adjusted_gt: &DepthMap) -> Result<ErrorReport> {
    if predicted.rows != adjusted_gt.rows || predicted.cols != adjusted_gt.cols {
        return Err(Error::InvalidArgument(format!(
            "error report needs equal dimensions, got {}x{} vs {}x{}",
            predicted.rows, predicted.cols, adjusted_gt.rows, adjusted_gt.cols
        )));
    }
    let n = predicted.values.len();
    let mut error_um = Vec::with_capacity(n);
    let mut type1_values = Vec::new();
    let mut type2_values = Vec::new();
    let mut sums = [0.0f64; 2];
    for (p, g) in predicted.values.iter().zip(&adjusted_gt.values) {
        let e = (p - g).abs() * 1000.0;
        error_um.push(e);
        if *g == 0.0 {
            type1_values.push(e);
            sums[0] += e;
        } else {
            type2_values.push(e);
            sums[1] += e;
        }
    }
    let mean = |sum: f64, count: usize| if count == 0 { 0.0 } else { sum / count as f64 };
    let (n1, n2) = (type1_values.len(), type2_values.len());
    let type1_um = mean(sums[0], n1);
    let type2_um = mean(sums[1], n2);
    // Built from the class means so the decomposition identity holds to the
    // last bit, not merely to rounding.
    let overall_um = (n1 as f64 * type1_um + n2 as f64 * type2_um) / (n1 + n2) as f64;
    Ok(ErrorReport {
        rows: predicted.rows,
        cols: predicted.cols,
        error_um,
        type1_um,
        type2_um,
        overall_um,
        type1_values,
        type2_values,
    })
}

/// Truncates a display population at its 95th percentile (linear-interpolated
/// quantile). Used only for plots — a handful of extreme class-1 pixels
/// otherwise swallow the vertical axis. Means are always computed on the
/// full population.
pub fn display_truncate_p95(values: &[f64]) -> Vec<f64> {
    if values.len() < 2 {
        return values.to_vec();
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (sorted.len() - 1) as f64 * 0.95;
    let lo = sorted[h.floor() as usize];
    let hi = sorted[h.ceil() as usize];
    let q = lo + (h - h.floor()) * (hi - lo);
    values.iter().copied().filter(|&v| v <= q).collect()
}

// ---------------------------------------------------------------------------
// Per-coordinate validation MSE
// ---------------------------------------------------------------------------

/// Per-coordinate validation MSEs with their summary statistics and KDE.
#[derive(Debug, Clone, PartialEq)]
pub struct MseDistribution {
    /// One mean gradient-MSE per validation coordinate, in ascending
    /// plan-index order.
    pub values: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (n − 1); 0 for a single coordinate.
    pub std: f64,
    /// Gaussian KDE at bandwidth [`MSE_KDE_BANDWIDTH`].
    pub kde: KdeCurve,
}

impl MseDistribution {
    pub fn from_values(values: Vec<f64>) -> Result<MseDistribution> {
        if values.is_empty() {
            return Err(Error::InvalidArgument(
                "MSE distribution needs at least one coordinate".into(),
            ));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        let kde = gaussian_kde(&values, MSE_KDE_BANDWIDTH)?;
        Ok(MseDistribution { values, mean, std, kde })
    }
}

/// Shared core: one mean-over-frames MSE per validation coordinate, with the
/// prediction supplied as a closure so a perfect predictor (labels fed back)
/// can be scored without a model.
fn per_coordinate_values(
    predict: &mut dyn FnMut(&Sample) -> Result<GradientMap>,
    dataset: &Dataset,
    val_indices: &[usize],
    fov_filter: bool,
) -> Result<Vec<f64>> {
    if val_indices.is_empty() {
        return Err(Error::InvalidArgument("empty validation set".into()));
    }
    let wanted: std::collections::BTreeSet<usize> = val_indices.iter().copied().collect();
    let mut by_coord: std::collections::BTreeMap<usize, Vec<&Sample>> =
        std::collections::BTreeMap::new();
    for s in &dataset.samples {
        if wanted.contains(&s.plan_index) {
            by_coord.entry(s.plan_index).or_default().push(s);
        }
    }
    let mut values = Vec::new();
    for (_, samples) in by_coord {
        let probe = &samples[0].probe;
        if fov_filter && !dataset.geometry.in_fov(probe.x_mm, probe.y_mm) {
            continue;
        }
        let mut acc = 0.0;
        for s in &samples {
            acc += predict(s)?.mse(&s.label)?;
        }
        values.push(acc / samples.len() as f64);
    }
    if values.is_empty() {
        return Err(Error::InvalidArgument(
            "no validation coordinates remain (none captured, or all outside the field of view)"
                .into(),
        ));
    }
    Ok(values)
}

/// Gradient-prediction MSE at each validation probe coordinate: the mean
/// over that coordinate's frames of the per-frame gradient MSE, in
/// eval mode. `fov_filter` drops coordinates whose probe centre lies
/// outside the camera window.
pub fn per_coordinate_mse<T: Scalar>(
    model: &TouchNetModel<T>,
    dataset: &Dataset,
    val_indices: &[usize],
    fov_filter: bool,
) -> Result<MseDistribution> {
    let mut predict =
        |s: &Sample| touchnet::forward(model, &s.image, ForwardMode::Eval, 0);
    let values = per_coordinate_values(&mut predict, dataset, val_indices, fov_filter)?;
    MseDistribution::from_values(values)
}

// ---------------------------------------------------------------------------
// Reconstruction
// ---------------------------------------------------------------------------

/// Full inference: image → predicted gradients → integrated depth map,
/// clamped at zero (indentation depth cannot be negative; solver
/// undershoot below zero is noise, not signal).
pub fn reconstruct_depth<T: Scalar>(
    model: &TouchNetModel<T>,
    image: &TactileImage,
    pitch_mm: f64,
) -> Result<DepthMap> {
    let g = touchnet::forward(model, image, ForwardMode::Eval, 0)?;
    let mut depth = poisson::integrate(&g, pitch_mm)?;
    for v in &mut depth.values {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(depth)
}

/// The adjustment [`evaluate_reconstruction`] applied, with its fitted
/// value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DepthAdjustment {
    Scale(f64),
    Offset(f64),
}

/// Outcome of scoring a reconstruction against a reference depth map.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthComparison {
    pub shift_x_px: i64,
    pub shift_y_px: i64,
    pub adjustment: DepthAdjustment,
    pub report: ErrorReport,
}

/// The full comparison pipeline: align the reference to the prediction by
/// cross-correlation, fit the depth adjustment on the aligned pair, then
/// report the two-class error taxonomy.
pub fn evaluate_reconstruction(
    predicted: &DepthMap,
    ground_truth: &DepthMap,
    adjust: DepthAdjust,
) -> Result<DepthComparison> {
    let (sx, sy) = align_xcorr(predicted, ground_truth)?;
    let mut aligned = translate(ground_truth, sx, sy);
    let adjustment = match adjust {
        DepthAdjust::Scale => {
            let s = fit_depth_scale(&aligned, predicted)?;
            for v in &mut aligned.values {
                *v *= s;
            }
            DepthAdjustment::Scale(s)
        }
        DepthAdjust::Offset => {
            let c = fit_depth_offset(&aligned, predicted)?;
            for v in &mut aligned.values {
                if *v > 0.0 {
                    *v = (*v + c).max(0.0);
                }
            }
            DepthAdjustment::Offset(c)
        }
    };
    let report = error_report(predicted, &aligned)?;
    Ok(DepthComparison {
        shift_x_px: sx,
        shift_y_px: sy,
        adjustment,
        report,
    })
}
