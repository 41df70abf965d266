//! Capture orchestration and dataset persistence.
//!
//! A capture run walks a probe plan, presses to a ladder of depths at each
//! coordinate, and pairs every frame with an analytic gradient label — the
//! label comes from the contact geometry, never from the sensor, which is
//! what makes the data usable for supervision without manual annotation.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{GradientMap, GridBlob, TactileImage};
use crate::probe_plan::{
    read_plan_csv, read_split_csv, write_plan_csv, write_split_csv, PlanSplit, ProbePlan,
    ProbePoint,
};
use crate::rng::derive_seed;
use crate::sensor_sim::{render, IlluminationModel, SensorGeometry};

/// Current dataset directory format. Bump when the layout changes shape.
pub const DATASET_FORMAT_VERSION: u32 = 1;

/// One captured frame: the image the sensor produced at a known press depth,
/// plus the gradient field that press must have induced.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: TactileImage,
    /// Analytic spherical-cap gradients, quantized through f32 so the
    /// in-memory label and the persisted grid file agree bit for bit.
    pub label: GradientMap,
    pub probe: ProbePoint,
    /// Instantaneous press depth for this frame, in (0, probe.depth_mm].
    pub frame_depth_mm: f64,
    pub plan_index: usize,
}

/// A full capture: every executed probe point contributes exactly
/// `plan.frames_per_indent` consecutive samples, ordered by plan index then
/// frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub geometry: SensorGeometry,
    pub probe_radius_mm: f64,
    pub seed: u64,
    pub plan: ProbePlan,
    pub split: PlanSplit,
    /// Digest of the backend's optics description, when it has one.
    pub illumination_sha256: Option<String>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn frames_per_indent(&self) -> usize {
        self.plan.frames_per_indent as usize
    }

    /// Plan indices for which every frame is present.
    pub fn completed_plan_indices(&self) -> Vec<usize> {
        let frames = self.frames_per_indent().max(1);
        let mut counts = std::collections::BTreeMap::<usize, usize>::new();
        for s in &self.samples {
            *counts.entry(s.plan_index).or_default() += 1;
        }
        counts.into_iter().filter(|&(_, n)| n == frames).map(|(i, _)| i).collect()
    }
}

/// Everything a backend needs to produce one frame.
#[derive(Debug, Clone)]
pub struct FrameContext<'a> {
    pub plan_index: usize,
    /// 1-based frame number within the indentation.
    pub frame_index: usize,
    pub probe: &'a ProbePoint,
    pub frame_depth_mm: f64,
    /// Per-frame noise seed, derived from the run seed so that interrupted
    /// and uninterrupted captures agree frame by frame.
    pub seed: u64,
}

/// Source of sensor frames: the simulator, or a callback bridging to real
/// hardware (one image per press barrier).
pub trait SensorBackend {
    fn capture_frame(&mut self, ctx: &FrameContext, label: &GradientMap) -> Result<TactileImage>;

    /// Bytes describing the optics, hashed into the manifest when present.
    fn provenance(&self) -> Option<Vec<u8>> {
        None
    }
}

/// Renders frames photometrically from the analytic label.
#[derive(Debug, Clone)]
pub struct SimulatorBackend {
    pub illumination: IlluminationModel,
}

impl SensorBackend for SimulatorBackend {
    fn capture_frame(&mut self, ctx: &FrameContext, label: &GradientMap) -> Result<TactileImage> {
        render(label, &self.illumination, ctx.seed)
    }

    fn provenance(&self) -> Option<Vec<u8>> {
        // Digest what persistence would store: f32 gains, so the hash is
        // stable across a save/load of the illumination model.
        let il = &self.illumination;
        let mut bytes = Vec::new();
        bytes.extend((il.rows as u32).to_le_bytes());
        bytes.extend((il.cols as u32).to_le_bytes());
        for dir in &il.light_dirs {
            for v in dir {
                bytes.extend(v.to_bits().to_le_bytes());
            }
        }
        for ch in &il.gains {
            for &g in ch {
                bytes.extend((g as f32).to_bits().to_le_bytes());
            }
        }
        bytes.extend_from_slice(&il.baseline);
        bytes.extend(il.noise_sigma.to_bits().to_le_bytes());
        Some(bytes)
    }
}

/// Adapts a closure (e.g. a real-sensor grabber) to the backend interface.
pub struct CallbackBackend<F>(pub F);

impl<F> SensorBackend for CallbackBackend<F>
where
    F: FnMut(&FrameContext) -> Result<TactileImage>,
{
    fn capture_frame(&mut self, ctx: &FrameContext, _label: &GradientMap) -> Result<TactileImage> {
        (self.0)(ctx)
    }
}

/// A capture that stopped early: whatever completed is kept so the run can
/// resume without repeating work.
#[derive(Debug)]
pub struct CaptureFailure {
    /// Plan indices captured in full before the failure.
    pub completed_points: Vec<usize>,
    pub partial: Dataset,
    pub source: Error,
}

impl fmt::Display for CaptureFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "capture halted after {} of {} points: {}",
            self.completed_points.len(),
            self.partial.plan.points.len(),
            self.source
        )
    }
}

impl std::error::Error for CaptureFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

impl From<Box<CaptureFailure>> for Error {
    fn from(f: Box<CaptureFailure>) -> Error {
        Error::Protocol(f.to_string())
    }
}

/// Press depth of frame `k` (1-based) out of `frames`: equally spaced steps
/// ending exactly at the commanded depth.
pub fn frame_depth(depth_mm: f64, frame_index: usize, frames: usize) -> f64 {
    depth_mm * (frame_index as f64 / frames as f64)
}

/// Noise seed for one frame, independent of capture order.
pub fn frame_seed(run_seed: u64, plan_index: usize, frame_index: usize) -> u64 {
    derive_seed(run_seed, "capture/frame", &[plan_index as u64, frame_index as u64])
}

/// The supervision target for a press: the gradient field of a spherical cap
/// indenting the gel at `probe_xy` to `frame_depth`. Shared with the
/// simulator, so simulated images and labels can never drift apart.
pub fn make_label(
    probe_xy: (f64, f64),
    frame_depth_mm: f64,
    probe_radius_mm: f64,
    geometry: &SensorGeometry,
) -> Result<GradientMap> {
    let height = crate::sensor_sim::indent_sphere(probe_xy, frame_depth_mm, probe_radius_mm, geometry)?;
    crate::sensor_sim::gradients_of(&height)
}

fn check_split(plan: &ProbePlan, split: &PlanSplit) -> Result<()> {
    let n = plan.points.len();
    let all = split.train_indices.iter().chain(&split.val_indices);
    let mut seen = BTreeSet::new();
    for &i in all {
        if i >= n {
            return Err(Error::InvalidArgument(format!(
                "split references point {i} of a {n}-point plan"
            )));
        }
        if !seen.insert(i) {
            return Err(Error::InvalidArgument(format!(
                "split assigns point {i} to both train and validation"
            )));
        }
    }
    Ok(())
}

/// Captures the full plan in order. On a backend failure the error carries
/// every fully captured point, and [`capture_resume`] finishes the rest.
pub fn capture(
    plan: &ProbePlan,
    split: &PlanSplit,
    backend: &mut dyn SensorBackend,
    geometry: &SensorGeometry,
    probe_radius_mm: f64,
    seed: u64,
) -> std::result::Result<Dataset, Box<CaptureFailure>> {
    let base = Dataset {
        geometry: geometry.clone(),
        probe_radius_mm,
        seed,
        plan: plan.clone(),
        split: split.clone(),
        illumination_sha256: backend.provenance().map(|b| sha256_hex(&b)),
        samples: Vec::new(),
    };
    capture_into(base, backend, &BTreeSet::new())
}

/// Finishes an interrupted capture. With the same seeds the result is
/// indistinguishable from a run that never failed.
pub fn capture_resume(
    partial: Dataset,
    backend: &mut dyn SensorBackend,
) -> std::result::Result<Dataset, Box<CaptureFailure>> {
    let done: BTreeSet<usize> = partial.completed_plan_indices().into_iter().collect();
    capture_into(partial, backend, &done)
}

fn capture_into(
    mut ds: Dataset,
    backend: &mut dyn SensorBackend,
    skip: &BTreeSet<usize>,
) -> std::result::Result<Dataset, Box<CaptureFailure>> {
    let fail = |ds: &Dataset, source: Error| {
        Box::new(CaptureFailure {
            completed_points: ds.completed_plan_indices(),
            partial: ds.clone(),
            source,
        })
    };
    if let Err(e) = ds.geometry.validate() {
        return Err(fail(&ds, e));
    }
    if let Err(e) = check_split(&ds.plan, &ds.split) {
        return Err(fail(&ds, e));
    }
    let frames = ds.plan.frames_per_indent as usize;
    if frames == 0 {
        return Err(fail(&ds, Error::InvalidArgument("plan requests zero frames per indent".into())));
    }
    // Keep only complete points; a previous failure may have left a stub.
    ds.samples.retain(|s| skip.contains(&s.plan_index));

    let points: Vec<(usize, ProbePoint)> = ds
        .plan
        .points
        .iter()
        .enumerate()
        .filter(|(i, _)| !skip.contains(i))
        .map(|(i, p)| (i, *p))
        .collect();
    for (plan_index, probe) in points {
        let mut point_samples = Vec::with_capacity(frames);
        for frame_index in 1..=frames {
            let depth = frame_depth(probe.depth_mm, frame_index, frames);
            let ctx = FrameContext {
                plan_index,
                frame_index,
                probe: &probe,
                frame_depth_mm: depth,
                seed: frame_seed(ds.seed, plan_index, frame_index),
            };
            let result = make_label((probe.x_mm, probe.y_mm), depth, ds.probe_radius_mm, &ds.geometry)
                .and_then(|mut label| {
                    label.quantize_f32();
                    let image = backend.capture_frame(&ctx, &label)?;
                    Ok(Sample {
                        image,
                        label,
                        probe,
                        frame_depth_mm: depth,
                        plan_index,
                    })
                });
            match result {
                Ok(sample) => point_samples.push(sample),
                Err(e) => return Err(fail(&ds, e)),
            }
        }
        ds.samples.extend(point_samples);
    }
    ds.samples.sort_by(|a, b| {
        (a.plan_index, a.frame_depth_mm).partial_cmp(&(b.plan_index, b.frame_depth_mm)).unwrap()
    });
    Ok(ds)
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_png(path: &Path, img: &TactileImage) -> Result<()> {
    let buf = image::RgbImage::from_raw(img.cols as u32, img.rows as u32, img.pixels.clone())
        .expect("pixel buffer matches dimensions by construction");
    buf.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    })
}

fn read_png(path: &Path) -> Result<TactileImage> {
    let img = image::open(path)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Format(format!("{}: {other}", path.display())),
        })?
        .to_rgb8();
    TactileImage::new(img.height() as usize, img.width() as usize, img.into_raw())
}

/// Writes `manifest.txt`, `plan.csv`, `split.csv`, and one PNG + grid file
/// pair per sample. File numbering is `plan_index · frames + frame − 1`, so
/// partial datasets keep stable names and a resumed save overwrites cleanly.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    let images = dir.join("images");
    let labels = dir.join("labels");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    fs::create_dir_all(&labels).map_err(|e| Error::io(&labels, e))?;

    let plan_csv = write_plan_csv(&ds.plan);
    let split_csv = write_split_csv(&ds.split);
    write_text(&dir.join("plan.csv"), &plan_csv)?;
    write_text(&dir.join("split.csv"), &split_csv)?;

    let frames = ds.frames_per_indent().max(1);
    let mut per_point = std::collections::BTreeMap::<usize, usize>::new();
    for s in &ds.samples {
        let k = per_point.entry(s.plan_index).or_insert(0);
        *k += 1;
        let file_index = s.plan_index * frames + (*k - 1);
        write_png(&images.join(format!("{file_index:06}.png")), &s.image)?;
        s.label.to_blob().write_file(&labels.join(format!("{file_index:06}.grid")))?;
    }

    let g = &ds.geometry;
    let mut manifest = String::new();
    manifest.push_str(&format!("format_version = {DATASET_FORMAT_VERSION}\n"));
    manifest.push_str(&format!("seed = {}\n", ds.seed));
    manifest.push_str(&format!("probe_radius_mm = {}\n", ds.probe_radius_mm));
    manifest.push_str(&format!("frames_per_indent = {}\n", ds.plan.frames_per_indent));
    manifest.push_str(&format!("point_count = {}\n", ds.plan.points.len()));
    manifest.push_str(&format!("sample_count = {}\n", ds.samples.len()));
    manifest.push_str(&format!("geometry_rows = {}\n", g.rows));
    manifest.push_str(&format!("geometry_cols = {}\n", g.cols));
    manifest.push_str(&format!("geometry_pitch_mm = {}\n", g.pitch_mm));
    manifest.push_str(&format!("geometry_extent_mm = {} {}\n", g.extent_mm.0, g.extent_mm.1));
    manifest.push_str(&format!(
        "geometry_fov_offset_mm = {} {}\n",
        g.fov_offset_mm.0, g.fov_offset_mm.1
    ));
    manifest.push_str(&format!(
        "illumination_sha256 = {}\n",
        ds.illumination_sha256.as_deref().unwrap_or("-")
    ));
    manifest.push_str(&format!("plan_sha256 = {}\n", sha256_hex(plan_csv.as_bytes())));
    manifest.push_str(&format!("split_sha256 = {}\n", sha256_hex(split_csv.as_bytes())));
    manifest.push_str(&format!("manifest_sha256 = {}\n", sha256_hex(manifest.as_bytes())));
    write_text(&dir.join("manifest.txt"), &manifest)
}

struct Manifest {
    keys: std::collections::BTreeMap<String, String>,
}

impl Manifest {
    fn parse(text: &str) -> Result<Manifest> {
        let mut keys = std::collections::BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(Error::Parse {
                line: idx + 1,
                message: format!("manifest line is not `key = value`: {line:?}"),
            })?;
            keys.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Manifest { keys })
    }

    fn get(&self, key: &str) -> Result<&str> {
        self.keys
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Format(format!("manifest is missing {key}")))
    }

    fn parse_value<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?
            .parse()
            .map_err(|_| Error::Format(format!("manifest {key} is not a valid value")))
    }

    fn pair(&self, key: &str) -> Result<(f64, f64)> {
        let raw = self.get(key)?;
        let mut it = raw.split_whitespace().map(str::parse::<f64>);
        match (it.next(), it.next(), it.next()) {
            (Some(Ok(a)), Some(Ok(b)), None) => Ok((a, b)),
            _ => Err(Error::Format(format!("manifest {key} is not two numbers: {raw:?}"))),
        }
    }
}

/// Loads a dataset directory, verifying the format version, the manifest
/// digest, and the plan/split digests before touching any sample.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join("manifest.txt");
    let text = read_text(&manifest_path)?;
    let manifest = Manifest::parse(&text)?;

    // Version gates everything else: an old layout must fail by version, not
    // by whatever key or checksum happens to mismatch first.
    let version: u32 = manifest.parse_value("format_version")?;
    if version != DATASET_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "dataset format version {version} is not supported (reader expects {DATASET_FORMAT_VERSION})"
        )));
    }
    let declared = manifest.get("manifest_sha256")?;
    let body = text
        .split("manifest_sha256")
        .next()
        .expect("split always yields a first element");
    if sha256_hex(body.as_bytes()) != declared {
        return Err(Error::Format("manifest checksum mismatch — file corrupted".into()));
    }

    let plan_csv = read_text(&dir.join("plan.csv"))?;
    if sha256_hex(plan_csv.as_bytes()) != manifest.get("plan_sha256")? {
        return Err(Error::Format("plan.csv does not match its manifest digest".into()));
    }
    let split_csv = read_text(&dir.join("split.csv"))?;
    if sha256_hex(split_csv.as_bytes()) != manifest.get("split_sha256")? {
        return Err(Error::Format("split.csv does not match its manifest digest".into()));
    }
    let plan = read_plan_csv(&plan_csv)?;
    let split = read_split_csv(&split_csv)?;

    let geometry = SensorGeometry {
        rows: manifest.parse_value("geometry_rows")?,
        cols: manifest.parse_value("geometry_cols")?,
        pitch_mm: manifest.parse_value("geometry_pitch_mm")?,
        extent_mm: manifest.pair("geometry_extent_mm")?,
        fov_offset_mm: manifest.pair("geometry_fov_offset_mm")?,
    };
    geometry.validate()?;

    let point_count: usize = manifest.parse_value("point_count")?;
    if point_count != plan.points.len() {
        return Err(Error::Format(format!(
            "manifest lists {point_count} points but plan.csv holds {}",
            plan.points.len()
        )));
    }
    let sample_count: usize = manifest.parse_value("sample_count")?;
    let illumination_sha256 = match manifest.get("illumination_sha256")? {
        "-" => None,
        hex => Some(hex.to_string()),
    };

    let frames = plan.frames_per_indent as usize;
    let mut samples = Vec::with_capacity(sample_count);
    for (plan_index, probe) in plan.points.iter().enumerate() {
        let first = dir.join("images").join(format!("{:06}.png", plan_index * frames));
        if !first.exists() {
            continue;
        }
        for frame_index in 1..=frames {
            let file_index = plan_index * frames + frame_index - 1;
            let image = read_png(&dir.join("images").join(format!("{file_index:06}.png")))?;
            let blob = GridBlob::read_file(&dir.join("labels").join(format!("{file_index:06}.grid")))?;
            let label = GradientMap::from_blob(&blob)?;
            samples.push(Sample {
                image,
                label,
                probe: *probe,
                frame_depth_mm: frame_depth(probe.depth_mm, frame_index, frames),
                plan_index,
            });
        }
    }
    if samples.len() != sample_count {
        return Err(Error::Format(format!(
            "manifest promises {sample_count} samples but {} were found",
            samples.len()
        )));
    }
    let seed = manifest.parse_value("seed")?;
    Ok(Dataset {
        geometry,
        probe_radius_mm: manifest.parse_value("probe_radius_mm")?,
        seed,
        plan,
        split,
        illumination_sha256,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe_plan::{generate_grid, split_plan};
    use crate::sensor_sim::{gradients_of, indent_sphere};

    fn small_setup(frames: u32) -> (ProbePlan, PlanSplit, SensorGeometry) {
        // 3x3 points on the desk-scale sensor, away from the edges.
        let geometry = SensorGeometry::desk();
        let mut plan = generate_grid((2.0, 2.0), 1.0, 1.0, frames).unwrap();
        for p in &mut plan.points {
            p.x_mm += 7.0;
            p.y_mm += 8.0;
        }
        let split = split_plan(&plan, 0.5, 7).unwrap();
        (plan, split, geometry)
    }

    fn sim_backend(geometry: &SensorGeometry, noise: bool) -> SimulatorBackend {
        let mut illumination = IlluminationModel::default_for(geometry).unwrap();
        if !noise {
            illumination.noise_sigma = 0.0;
        }
        SimulatorBackend { illumination }
    }

    #[test]
    fn nine_points_at_30_frames_gives_270_samples() {
        let (plan, split, geometry) = small_setup(30);
        let mut backend = sim_backend(&geometry, true);
        let ds = capture(&plan, &split, &mut backend, &geometry, 2.0, 11).unwrap();
        assert_eq!(ds.samples.len(), 270);
        // Ordered by point then depth; each ladder ends exactly at the
        // commanded depth.
        for (i, s) in ds.samples.iter().enumerate() {
            assert_eq!(s.plan_index, i / 30);
            let k = i % 30 + 1;
            assert_eq!(s.frame_depth_mm, frame_depth(s.probe.depth_mm, k, 30));
        }
        assert_eq!(ds.samples[29].frame_depth_mm, 1.0);
        assert_eq!(ds.completed_plan_indices(), (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn capture_is_deterministic_in_the_seed() {
        let (plan, split, geometry) = small_setup(3);
        let mut backend = sim_backend(&geometry, true);
        let a = capture(&plan, &split, &mut backend, &geometry, 2.0, 5).unwrap();
        let b = capture(&plan, &split, &mut backend, &geometry, 2.0, 5).unwrap();
        assert_eq!(a, b);
        let c = capture(&plan, &split, &mut backend, &geometry, 2.0, 6).unwrap();
        assert_ne!(a, c, "different seed must change the noise");
    }

    #[test]
    fn labels_are_the_analytic_cap_gradients() {
        let (plan, split, geometry) = small_setup(4);
        let mut backend = sim_backend(&geometry, true);
        let ds = capture(&plan, &split, &mut backend, &geometry, 2.0, 3).unwrap();
        for s in &ds.samples {
            let height =
                indent_sphere((s.probe.x_mm, s.probe.y_mm), s.frame_depth_mm, 2.0, &geometry)
                    .unwrap();
            let mut expect = gradients_of(&height).unwrap();
            expect.quantize_f32();
            assert_eq!(s.label, expect);
        }
    }

    #[test]
    fn noise_free_rendering_of_labels_reproduces_the_images() {
        let (plan, split, geometry) = small_setup(3);
        let mut backend = sim_backend(&geometry, false);
        let ds = capture(&plan, &split, &mut backend, &geometry, 2.0, 9).unwrap();
        for (i, s) in ds.samples.iter().enumerate() {
            let k = i % 3 + 1;
            let again =
                render(&s.label, &backend.illumination, frame_seed(ds.seed, s.plan_index, k))
                    .unwrap();
            assert_eq!(again, s.image, "sample {i} is not self-consistent");
        }
    }

    #[test]
    fn zero_depth_label_is_flat() {
        let geometry = SensorGeometry::desk();
        let label = make_label((8.0, 9.0), 0.0, 2.0, &geometry).unwrap();
        assert!(label.gx.iter().chain(&label.gy).all(|&v| v == 0.0));
    }

    #[test]
    fn labels_are_antisymmetric_about_the_probe_centre() {
        // (8, 9) is the centre of the desk sensor's imaged window, so pixel
        // (r, c) mirrors to (rows-1-r, cols-1-c) across it. Mirrored pixel
        // positions differ in the last ulp (16 − x vs −(x − 8)), so allow
        // rounding dust — five orders below any pitch-scale asymmetry.
        let geometry = SensorGeometry::desk();
        let label = make_label((8.0, 9.0), 0.8, 2.0, &geometry).unwrap();
        let (rows, cols) = (geometry.rows, geometry.cols);
        for r in 0..rows {
            for c in 0..cols {
                let gx = label.gx[r * cols + c];
                let gx_mirror = label.gx[r * cols + (cols - 1 - c)];
                assert!((gx + gx_mirror).abs() < 1e-9, "gx at ({r},{c}): {gx} vs {gx_mirror}");
                let gy = label.gy[r * cols + c];
                let gy_mirror = label.gy[(rows - 1 - r) * cols + c];
                assert!((gy + gy_mirror).abs() < 1e-9, "gy at ({r},{c}): {gy} vs {gy_mirror}");
            }
        }
    }

    #[test]
    fn label_steepness_grows_with_depth() {
        let geometry = SensorGeometry::desk();
        let mut last = -1.0;
        for i in 1..=19 {
            let depth = 0.1 * i as f64;
            let label = make_label((8.0, 9.0), depth, 2.0, &geometry).unwrap();
            let peak = label.gx.iter().chain(&label.gy).fold(0.0f64, |m, &v| m.max(v.abs()));
            assert!(peak > last, "max |g| fell from {last} to {peak} at depth {depth}");
            last = peak;
        }
    }

    /// Backend that fails at a chosen plan index, once.
    struct Tripwire {
        inner: SimulatorBackend,
        trip_at: usize,
        armed: bool,
    }

    impl SensorBackend for Tripwire {
        fn capture_frame(
            &mut self,
            ctx: &FrameContext,
            label: &GradientMap,
        ) -> Result<TactileImage> {
            if self.armed && ctx.plan_index == self.trip_at {
                self.armed = false;
                return Err(Error::Timeout { seconds: 5.0 });
            }
            self.inner.capture_frame(ctx, label)
        }

        fn provenance(&self) -> Option<Vec<u8>> {
            self.inner.provenance()
        }
    }

    #[test]
    fn failed_capture_keeps_completed_points_and_resumes_identically() {
        let (plan, split, geometry) = small_setup(3);
        let mut clean = sim_backend(&geometry, true);
        let uninterrupted = capture(&plan, &split, &mut clean, &geometry, 2.0, 21).unwrap();

        let mut tripwire =
            Tripwire { inner: sim_backend(&geometry, true), trip_at: 5, armed: true };
        let failure = capture(&plan, &split, &mut tripwire, &geometry, 2.0, 21).unwrap_err();
        assert_eq!(failure.completed_points, vec![0, 1, 2, 3, 4]);
        assert_eq!(failure.partial.samples.len(), 15);
        assert!(matches!(failure.source, Error::Timeout { .. }));

        // The tripwire disarmed itself, so resuming completes the plan.
        let resumed = capture_resume(failure.partial, &mut tripwire).unwrap();
        assert_eq!(resumed, uninterrupted);
    }

    #[test]
    fn datasets_round_trip_through_a_directory() {
        let (plan, split, geometry) = small_setup(30);
        let mut backend = sim_backend(&geometry, true);
        let ds = capture(&plan, &split, &mut backend, &geometry, 2.0, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(ds, loaded);
    }

    #[test]
    fn partial_datasets_round_trip_too() {
        let (plan, split, geometry) = small_setup(3);
        let mut tripwire =
            Tripwire { inner: sim_backend(&geometry, true), trip_at: 4, armed: true };
        let failure = capture(&plan, &split, &mut tripwire, &geometry, 2.0, 21).unwrap_err();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&failure.partial, dir.path()).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(failure.partial, loaded);
        // And the reloaded partial resumes to the full dataset.
        let resumed = capture_resume(loaded, &mut tripwire).unwrap();
        let mut clean = sim_backend(&geometry, true);
        assert_eq!(resumed, capture(&plan, &split, &mut clean, &geometry, 2.0, 21).unwrap());
    }

    #[test]
    fn tampered_label_file_is_rejected() {
        let (plan, split, geometry) = small_setup(2);
        let mut backend = sim_backend(&geometry, true);
        let ds = capture(&plan, &split, &mut backend, &geometry, 2.0, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let victim = dir.path().join("labels").join("000003.grid");
        let mut bytes = fs::read(&victim).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        fs::write(&victim, bytes).unwrap();
        match load_dataset(dir.path()) {
            Err(Error::Format(msg)) => assert!(msg.contains("checksum"), "{msg}"),
            other => panic!("expected checksum failure, got {other:?}"),
        }
    }

    #[test]
    fn unsupported_manifest_version_is_an_explicit_error() {
        let (plan, split, geometry) = small_setup(2);
        let mut backend = sim_backend(&geometry, true);
        let ds = capture(&plan, &split, &mut backend, &geometry, 2.0, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let manifest = dir.path().join("manifest.txt");
        let text = fs::read_to_string(&manifest).unwrap();
        fs::write(&manifest, text.replace("format_version = 1", "format_version = 0")).unwrap();
        match load_dataset(dir.path()) {
            Err(Error::Format(msg)) => {
                assert!(msg.contains("version 0"), "{msg}");
            }
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn tampered_manifest_is_a_checksum_error() {
        let (plan, split, geometry) = small_setup(2);
        let mut backend = sim_backend(&geometry, true);
        let ds = capture(&plan, &split, &mut backend, &geometry, 2.0, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let manifest = dir.path().join("manifest.txt");
        let text = fs::read_to_string(&manifest).unwrap();
        fs::write(&manifest, text.replace("seed = 11", "seed = 12")).unwrap();
        match load_dataset(dir.path()) {
            Err(Error::Format(msg)) => assert!(msg.contains("manifest checksum"), "{msg}"),
            other => panic!("expected manifest checksum error, got {other:?}"),
        }
    }
}
