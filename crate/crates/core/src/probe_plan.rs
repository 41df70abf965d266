//! Probing coordinate plans: grid generation, train/validation subsetting,
//! and CSV (de)serialization.
//!
//! A plan is the list of (x, y, indentation depth) positions at which a
//! spherical probe tip presses the sensor. Plans are exchanged as CSV with a
//! fixed `x_mm,y_mm,depth_mm` header; plan-level metadata (spacing, extent,
//! frames per indentation) rides in `# key = value` comment lines so that a
//! written plan reads back identically.

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};

/// One commanded probe location in printer millimeters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbePoint {
    pub x_mm: f64,
    pub y_mm: f64,
    /// Commanded indentation depth below the touch plane; never negative.
    pub depth_mm: f64,
}

/// An ordered list of probe locations plus the geometry it was generated for.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbePlan {
    pub points: Vec<ProbePoint>,
    pub spacing_mm: f64,
    pub extent_mm: (f64, f64),
    pub frames_per_indent: u32,
}

/// Train/validation coordinate split. The validation holdout is drawn once
/// per (plan, seed) and shared by every training fraction, so models trained
/// at different fractions are evaluated on identical coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanSplit {
    /// Sorted plan indices used for training.
    pub train_indices: Vec<usize>,
    /// Sorted plan indices held out for validation.
    pub val_indices: Vec<usize>,
    pub fraction_p: f64,
    pub seed: u64,
}

/// Fraction of coordinates reserved for validation.
pub const VALIDATION_FRACTION: f64 = 0.20;
/// Largest permitted training fraction; more would overlap the holdout.
pub const MAX_TRAIN_FRACTION: f64 = 0.80;

fn axis_count(extent: f64, spacing: f64) -> usize {
    // Inclusive endpoints. The tiny relative and absolute slop absorbs cases
    // like 16.0/0.1 = 159.999... so that exact multiples count as on-grid.
    (extent / spacing * (1.0 + 1e-12) + 1e-9).floor() as usize + 1
}

/// Generate a rectangular grid plan with inclusive endpoints, ordered
/// y-major then x (row by row), every point at the same commanded depth.
pub fn generate_grid(
    extent_mm: (f64, f64),
    spacing_mm: f64,
    depth_mm: f64,
    frames_per_indent: u32,
) -> Result<ProbePlan> {
    if !(spacing_mm > 0.0) || !spacing_mm.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "grid spacing must be positive, got {spacing_mm}"
        )));
    }
    if !(extent_mm.0 > 0.0 && extent_mm.1 > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "grid extent must be positive, got {:?}",
            extent_mm
        )));
    }
    if !(depth_mm >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "probe depth must be non-negative, got {depth_mm}"
        )));
    }
    if frames_per_indent == 0 {
        return Err(Error::InvalidArgument(
            "frames_per_indent must be at least 1".into(),
        ));
    }
    let nx = axis_count(extent_mm.0, spacing_mm);
    let ny = axis_count(extent_mm.1, spacing_mm);
    let mut points = Vec::with_capacity(nx * ny);
    for iy in 0..ny {
        let y_mm = iy as f64 * spacing_mm;
        for ix in 0..nx {
            points.push(ProbePoint {
                x_mm: ix as f64 * spacing_mm,
                y_mm,
                depth_mm,
            });
        }
    }
    Ok(ProbePlan {
        points,
        spacing_mm,
        extent_mm,
        frames_per_indent,
    })
}

/// Draw a train/validation split: a fixed 20% validation holdout determined
/// by the seed alone, then `fraction_p` of all coordinates sampled uniformly
/// from the remaining 80%. Subsets at different fractions are independent
/// draws (not nested); only the holdout is shared.
pub fn split_plan(plan: &ProbePlan, fraction_p: f64, seed: u64) -> Result<PlanSplit> {
    if !(fraction_p > 0.0) || !fraction_p.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "training fraction must be positive, got {fraction_p}"
        )));
    }
    if fraction_p > MAX_TRAIN_FRACTION + 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "training fraction {fraction_p} exceeds {MAX_TRAIN_FRACTION}; \
             larger fractions would overlap the validation holdout"
        )));
    }
    let n = plan.points.len();
    if n == 0 {
        return Err(Error::InvalidArgument("cannot split an empty plan".into()));
    }
    let n_val = (VALIDATION_FRACTION * n as f64).round() as usize;
    let n_train = (fraction_p * n as f64).round() as usize;

    // Holdout depends only on the seed so it is identical for every fraction.
    let mut val_rng = rng_from(derive_seed(seed, "plan-split-val", &[]));
    let mut val_indices = rand::seq::index::sample(&mut val_rng, n, n_val).into_vec();
    val_indices.sort_unstable();

    let in_val = {
        let mut mask = vec![false; n];
        for &i in &val_indices {
            mask[i] = true;
        }
        mask
    };
    let pool: Vec<usize> = (0..n).filter(|&i| !in_val[i]).collect();
    debug_assert!(n_train <= pool.len());

    // The training stream also absorbs the fraction so different fractions
    // draw independent subsets under the same seed.
    let mut train_rng = rng_from(derive_seed(seed, "plan-split-train", &[fraction_p.to_bits()]));
    let picks = rand::seq::index::sample(&mut train_rng, pool.len(), n_train);
    let mut train_indices: Vec<usize> = picks.iter().map(|i| pool[i]).collect();
    train_indices.sort_unstable();

    Ok(PlanSplit {
        train_indices,
        val_indices,
        fraction_p,
        seed,
    })
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

const PLAN_HEADER: &str = "x_mm,y_mm,depth_mm";
const SPLIT_HEADER: &str = "index,role";

/// Serialize a plan: metadata comments, fixed header, one point per line,
/// values at 6 decimal places.
pub fn write_plan_csv(plan: &ProbePlan) -> String {
    let mut out = String::new();
    out.push_str(&format!("# spacing_mm = {:.6}\n", plan.spacing_mm));
    out.push_str(&format!(
        "# extent_mm = {:.6},{:.6}\n",
        plan.extent_mm.0, plan.extent_mm.1
    ));
    out.push_str(&format!("# frames_per_indent = {}\n", plan.frames_per_indent));
    out.push_str(PLAN_HEADER);
    out.push('\n');
    for p in &plan.points {
        out.push_str(&format!("{:.6},{:.6},{:.6}\n", p.x_mm, p.y_mm, p.depth_mm));
    }
    out
}

struct CsvMeta {
    entries: Vec<(String, String)>,
}

/// Split leading `# key = value` comments from the body; body lines keep
/// their 1-based physical line numbers for error reporting.
fn take_meta(text: &str) -> (CsvMeta, Vec<(usize, &str)>) {
    let mut entries = Vec::new();
    let mut body = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if body.is_empty() && line.starts_with('#') {
            if let Some((k, v)) = line[1..].split_once('=') {
                entries.push((k.trim().to_string(), v.trim().to_string()));
            }
            continue;
        }
        body.push((line_no, line));
    }
    (CsvMeta { entries }, body)
}

fn meta_value<'a>(meta: &'a CsvMeta, key: &str) -> Option<&'a str> {
    meta.entries
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
}

fn parse_field(s: &str, line: usize, what: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("expected a number for {what}, got {s:?}"),
    })
}

/// Parse a plan CSV. Metadata comments are honored when present; otherwise
/// spacing is inferred from the smallest positive coordinate gap, extent from
/// the bounding box, and frames_per_indent defaults to 30.
pub fn read_plan_csv(text: &str) -> Result<ProbePlan> {
    let (meta, body) = take_meta(text);
    let Some(&(header_no, header)) = body.first() else {
        return Err(Error::Parse {
            line: 1,
            message: format!("missing header line {PLAN_HEADER:?}"),
        });
    };
    if header != PLAN_HEADER {
        return Err(Error::Parse {
            line: header_no,
            message: format!("expected header {PLAN_HEADER:?}, got {header:?}"),
        });
    }
    let mut points = Vec::with_capacity(body.len() - 1);
    for &(line_no, line) in &body[1..] {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 3 comma-separated values, got {}", fields.len()),
            });
        }
        let x_mm = parse_field(fields[0], line_no, "x_mm")?;
        let y_mm = parse_field(fields[1], line_no, "y_mm")?;
        let depth_mm = parse_field(fields[2], line_no, "depth_mm")?;
        if !(x_mm.is_finite() && y_mm.is_finite() && depth_mm.is_finite()) {
            return Err(Error::Parse {
                line: line_no,
                message: "coordinates must be finite".into(),
            });
        }
        if depth_mm < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "line {line_no}: negative probe depth {depth_mm}"
            )));
        }
        points.push(ProbePoint { x_mm, y_mm, depth_mm });
    }

    for (i, a) in points.iter().enumerate() {
        for b in &points[..i] {
            if a == b {
                return Err(Error::InvalidArgument(format!(
                    "duplicate probe point ({}, {}, {})",
                    a.x_mm, a.y_mm, a.depth_mm
                )));
            }
        }
    }

    let spacing_mm = match meta_value(&meta, "spacing_mm") {
        Some(v) => parse_field(v, 1, "spacing_mm metadata")?,
        None => infer_spacing(&points),
    };
    let extent_mm = match meta_value(&meta, "extent_mm") {
        Some(v) => {
            let (a, b) = v.split_once(',').ok_or(Error::Parse {
                line: 1,
                message: format!("extent_mm metadata needs two values, got {v:?}"),
            })?;
            (
                parse_field(a, 1, "extent_mm")?,
                parse_field(b, 1, "extent_mm")?,
            )
        }
        None => (
            points.iter().map(|p| p.x_mm).fold(0.0, f64::max),
            points.iter().map(|p| p.y_mm).fold(0.0, f64::max),
        ),
    };
    let frames_per_indent = match meta_value(&meta, "frames_per_indent") {
        Some(v) => v.parse::<u32>().map_err(|_| Error::Parse {
            line: 1,
            message: format!("frames_per_indent metadata must be a positive integer, got {v:?}"),
        })?,
        None => 30,
    };
    if frames_per_indent == 0 {
        return Err(Error::InvalidArgument(
            "frames_per_indent must be at least 1".into(),
        ));
    }

    Ok(ProbePlan {
        points,
        spacing_mm,
        extent_mm,
        frames_per_indent,
    })
}

fn infer_spacing(points: &[ProbePoint]) -> f64 {
    let mut best = f64::INFINITY;
    for axis in 0..2 {
        let mut vals: Vec<f64> = points
            .iter()
            .map(|p| if axis == 0 { p.x_mm } else { p.y_mm })
            .collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for w in vals.windows(2) {
            let d = w[1] - w[0];
            if d > 1e-9 && d < best {
                best = d;
            }
        }
    }
    if best.is_finite() {
        best
    } else {
        1.0
    }
}

/// Serialize a split: one `index,role` row per plan index that appears in the
/// split, ascending, with the fraction and seed carried as metadata.
pub fn write_split_csv(split: &PlanSplit) -> String {
    let mut rows: Vec<(usize, &str)> = split
        .train_indices
        .iter()
        .map(|&i| (i, "train"))
        .chain(split.val_indices.iter().map(|&i| (i, "val")))
        .collect();
    rows.sort_unstable();
    let mut out = String::new();
    out.push_str(&format!("# fraction_p = {}\n", split.fraction_p));
    out.push_str(&format!("# seed = {}\n", split.seed));
    out.push_str(SPLIT_HEADER);
    out.push('\n');
    for (i, role) in rows {
        out.push_str(&format!("{i},{role}\n"));
    }
    out
}

pub fn read_split_csv(text: &str) -> Result<PlanSplit> {
    let (meta, body) = take_meta(text);
    let Some(&(header_no, header)) = body.first() else {
        return Err(Error::Parse {
            line: 1,
            message: format!("missing header line {SPLIT_HEADER:?}"),
        });
    };
    if header != SPLIT_HEADER {
        return Err(Error::Parse {
            line: header_no,
            message: format!("expected header {SPLIT_HEADER:?}, got {header:?}"),
        });
    }
    let mut train_indices = Vec::new();
    let mut val_indices = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for &(line_no, line) in &body[1..] {
        let (idx, role) = line.split_once(',').ok_or(Error::Parse {
            line: line_no,
            message: "expected index,role".into(),
        })?;
        let idx: usize = idx.trim().parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("expected an integer index, got {idx:?}"),
        })?;
        if !seen.insert(idx) {
            return Err(Error::Parse {
                line: line_no,
                message: format!("duplicate index {idx}"),
            });
        }
        match role.trim() {
            "train" => train_indices.push(idx),
            "val" => val_indices.push(idx),
            other => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("unknown role {other:?} (expected train or val)"),
                })
            }
        }
    }
    train_indices.sort_unstable();
    val_indices.sort_unstable();
    let fraction_p = match meta_value(&meta, "fraction_p") {
        Some(v) => parse_field(v, 1, "fraction_p metadata")?,
        None => 0.0,
    };
    let seed = match meta_value(&meta, "seed") {
        Some(v) => v.parse().unwrap_or(0),
        None => 0,
    };
    Ok(PlanSplit {
        train_indices,
        val_indices,
        fraction_p,
        seed,
    })
}
