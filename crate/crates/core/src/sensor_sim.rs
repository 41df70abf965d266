//! Photometric simulator of a vision-based tactile sensor.
//!
//! A rigid spherical probe pressed into the gel produces a spherical-cap
//! height field; its surface gradients are shaded through a three-light
//! Lambertian model with per-channel directional lights and a spatially
//! non-uniform gain, yielding the kind of RGB frame a real sensor camera
//! would deliver. Arbitrary objects (given as height fields on the sensor
//! grid) render through the same path.
//!
//! Everything here is a pure function of its inputs and an explicit seed,
//! so captures are reproducible bit for bit.

use crate::error::{Error, Result};
use crate::grid::{GradientMap, GridBlob, HeightField, TactileImage, Units};
use crate::rng::rng_from;
use rand::Rng;
use std::f64::consts::PI;
use std::path::Path;

/// Physical layout of the simulated sensor: the probe-reachable active area
/// and the camera window onto it.
///
/// Probe coordinates live in the active area `[0, extent_x] × [0, extent_y]`
/// (millimetres). The camera sees a `cols × rows` window of square pixels of
/// side `pitch_mm`; pixel `(r, c)` is the cell centred at
/// `fov_offset + (c + 0.5, r + 0.5) · pitch`. The window need not cover the
/// whole active area — probes outside it are legal and produce partially or
/// fully clipped contacts.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorGeometry {
    pub rows: usize,
    pub cols: usize,
    pub pitch_mm: f64,
    pub extent_mm: (f64, f64),
    pub fov_offset_mm: (f64, f64),
}

impl SensorGeometry {
    /// DIGIT-like default: 16 × 18 mm active area imaged at 160 × 120 with
    /// 0.1 mm pixels. The window covers the full width and the central
    /// 12 mm of the height.
    pub fn digit_like() -> Self {
        SensorGeometry {
            rows: 120,
            cols: 160,
            pitch_mm: 0.1,
            extent_mm: (16.0, 18.0),
            fov_offset_mm: (0.0, 3.0),
        }
    }

    /// Same sensor at half resolution (80 × 60, 0.2 mm pixels): the default
    /// for end-to-end runs that must stay cheap on a laptop CPU.
    pub fn desk() -> Self {
        SensorGeometry {
            rows: 60,
            cols: 80,
            pitch_mm: 0.2,
            extent_mm: (16.0, 18.0),
            fov_offset_mm: (0.0, 3.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::InvalidArgument("sensor resolution must be non-zero".into()));
        }
        if !(self.pitch_mm.is_finite() && self.pitch_mm > 0.0) {
            return Err(Error::InvalidArgument("pixel pitch must be positive".into()));
        }
        if !(self.extent_mm.0 > 0.0 && self.extent_mm.1 > 0.0) {
            return Err(Error::InvalidArgument("sensor extent must be positive".into()));
        }
        Ok(())
    }

    /// World position (mm) of the centre of pixel `(r, c)`.
    pub fn pixel_center_mm(&self, r: usize, c: usize) -> (f64, f64) {
        (
            self.fov_offset_mm.0 + (c as f64 + 0.5) * self.pitch_mm,
            self.fov_offset_mm.1 + (r as f64 + 0.5) * self.pitch_mm,
        )
    }

    /// Whether a probe centre lands inside the camera window (borders
    /// included).
    pub fn in_fov(&self, x_mm: f64, y_mm: f64) -> bool {
        let (x0, y0) = self.fov_offset_mm;
        let x1 = x0 + self.cols as f64 * self.pitch_mm;
        let y1 = y0 + self.rows as f64 * self.pitch_mm;
        x_mm >= x0 && x_mm <= x1 && y_mm >= y0 && y_mm <= y1
    }
}

/// Spherical-cap indentation of a probe of radius `probe_radius_mm` pressed
/// `depth_mm` into the gel at `center_xy_mm` (active-area coordinates).
///
/// Height at a pixel a distance `r` from the centre is
/// `max(0, depth − R + sqrt(max(0, R² − r²)))`: the cap apex reaches exactly
/// `depth_mm` and the contact circle has radius `sqrt(R² − (R − depth)²)`.
/// Centres outside the camera window are allowed — the cap is clipped — but
/// must lie within the active area.
pub fn indent_sphere(
    center_xy_mm: (f64, f64),
    depth_mm: f64,
    probe_radius_mm: f64,
    geometry: &SensorGeometry,
) -> Result<HeightField> {
    geometry.validate()?;
    if !(probe_radius_mm.is_finite() && probe_radius_mm > 0.0) {
        return Err(Error::InvalidArgument("probe radius must be positive".into()));
    }
    if !depth_mm.is_finite() || depth_mm < 0.0 || depth_mm > probe_radius_mm {
        return Err(Error::InvalidArgument(format!(
            "indentation depth {depth_mm} mm outside [0, probe radius {probe_radius_mm} mm]"
        )));
    }
    let (cx, cy) = center_xy_mm;
    if !(cx.is_finite() && cy.is_finite())
        || cx < 0.0
        || cx > geometry.extent_mm.0
        || cy < 0.0
        || cy > geometry.extent_mm.1
    {
        return Err(Error::InvalidArgument(format!(
            "probe centre ({cx}, {cy}) mm outside the {} x {} mm active area",
            geometry.extent_mm.0, geometry.extent_mm.1
        )));
    }
    let r2 = probe_radius_mm * probe_radius_mm;
    let mut values = vec![0.0; geometry.rows * geometry.cols];
    for r in 0..geometry.rows {
        for c in 0..geometry.cols {
            let (px, py) = geometry.pixel_center_mm(r, c);
            let d2 = (px - cx) * (px - cx) + (py - cy) * (py - cy);
            let h = depth_mm - probe_radius_mm + (r2 - d2).max(0.0).sqrt();
            values[r * geometry.cols + c] = h.max(0.0);
        }
    }
    HeightField::new(geometry.rows, geometry.cols, geometry.pitch_mm, values)
}

/// Surface slopes of a height field: central differences in the interior,
/// one-sided at the borders, in mm per mm.
pub fn gradients_of(height: &HeightField) -> Result<GradientMap> {
    let (rows, cols) = (height.rows, height.cols);
    if rows < 3 || cols < 3 {
        return Err(Error::InvalidArgument(format!(
            "gradient stencil needs at least 3x3 pixels, got {rows}x{cols}"
        )));
    }
    let h = height.pitch_mm;
    let v = &height.values;
    let mut gx = vec![0.0; rows * cols];
    let mut gy = vec![0.0; rows * cols];
    for r in 0..rows {
        let row = r * cols;
        gx[row] = (v[row + 1] - v[row]) / h;
        for c in 1..cols - 1 {
            gx[row + c] = (v[row + c + 1] - v[row + c - 1]) / (2.0 * h);
        }
        gx[row + cols - 1] = (v[row + cols - 1] - v[row + cols - 2]) / h;
    }
    for c in 0..cols {
        gy[c] = (v[cols + c] - v[c]) / h;
        for r in 1..rows - 1 {
            gy[r * cols + c] = (v[(r + 1) * cols + c] - v[(r - 1) * cols + c]) / (2.0 * h);
        }
        let last = (rows - 1) * cols;
        gy[last + c] = (v[last + c] - v[last - cols + c]) / h;
    }
    GradientMap::new(rows, cols, gx, gy)
}

/// Per-channel directional lights, spatial gain, ambient baseline, and
/// sensor noise — everything between the gel surface and the 8-bit frame.
#[derive(Debug, Clone, PartialEq)]
pub struct IlluminationModel {
    pub rows: usize,
    pub cols: usize,
    /// Unit light directions for R, G, B.
    pub light_dirs: [[f64; 3]; 3],
    /// Per-channel gain field, row-major `rows × cols`, strictly positive.
    pub gains: [Vec<f64>; 3],
    /// Ambient baseline frame, row-major interleaved RGB.
    pub baseline: Vec<u8>,
    /// Standard deviation of additive Gaussian pixel noise, in 8-bit counts.
    pub noise_sigma: f64,
}

impl IlluminationModel {
    /// Three lights at azimuths 0°, 120°, 240° and 45° elevation (one per
    /// channel), a radial gain falloff `0.45 · (1 − 0.4 (r/r_max)²)`, a flat
    /// baseline of 18 counts, and 2.0 counts of noise.
    pub fn default_for(geometry: &SensorGeometry) -> Result<Self> {
        geometry.validate()?;
        let (rows, cols) = (geometry.rows, geometry.cols);
        let elevation = 45.0f64.to_radians();
        let mut light_dirs = [[0.0; 3]; 3];
        for (channel, dirs) in light_dirs.iter_mut().enumerate() {
            let azimuth = 2.0 * PI * channel as f64 / 3.0;
            *dirs = [
                azimuth.cos() * elevation.cos(),
                azimuth.sin() * elevation.cos(),
                elevation.sin(),
            ];
        }
        let center = ((cols as f64 - 1.0) / 2.0, (rows as f64 - 1.0) / 2.0);
        let r_max = (center.0 * center.0 + center.1 * center.1).sqrt().max(1.0);
        let mut gain = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                let dx = c as f64 - center.0;
                let dy = r as f64 - center.1;
                let ratio = (dx * dx + dy * dy).sqrt() / r_max;
                gain[r * cols + c] = 0.45 * (1.0 - 0.4 * ratio * ratio);
            }
        }
        let model = IlluminationModel {
            rows,
            cols,
            light_dirs,
            gains: [gain.clone(), gain.clone(), gain],
            baseline: vec![18; rows * cols * 3],
            noise_sigma: 2.0,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::InvalidArgument("illumination grid must be non-empty".into()));
        }
        for dirs in &self.light_dirs {
            let norm = (dirs[0] * dirs[0] + dirs[1] * dirs[1] + dirs[2] * dirs[2]).sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "light direction must be a unit vector, |l| = {norm}"
                )));
            }
        }
        let n = self.rows * self.cols;
        for gain in &self.gains {
            if gain.len() != n {
                return Err(Error::InvalidArgument("gain field dimensions mismatch".into()));
            }
            if !gain.iter().all(|&g| g.is_finite() && g > 0.0) {
                return Err(Error::InvalidArgument(
                    "gain field must be strictly positive".into(),
                ));
            }
        }
        if self.baseline.len() != n * 3 {
            return Err(Error::InvalidArgument("baseline frame dimensions mismatch".into()));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::InvalidArgument("noise sigma must be non-negative".into()));
        }
        Ok(())
    }

    /// Serializes gains and baseline as one six-channel grid file next to a
    /// small text config holding the light directions and noise sigma.
    pub fn save(&self, grid_path: &Path, config_path: &Path) -> Result<()> {
        let n = self.rows * self.cols;
        let mut data = vec![0.0f32; n * 6];
        for i in 0..n {
            for ch in 0..3 {
                data[i * 6 + ch] = self.gains[ch][i] as f32;
                data[i * 6 + 3 + ch] = f32::from(self.baseline[i * 3 + ch]);
            }
        }
        GridBlob::new(self.rows, self.cols, 6, Units::Dimensionless, data)?.write_file(grid_path)?;
        let mut config = String::new();
        for (name, dirs) in ["light_r", "light_g", "light_b"].iter().zip(&self.light_dirs) {
            config.push_str(&format!("{name} = {} {} {}\n", dirs[0], dirs[1], dirs[2]));
        }
        config.push_str(&format!("noise_sigma = {}\n", self.noise_sigma));
        std::fs::write(config_path, config)
            .map_err(|e| Error::io(config_path, e))?;
        Ok(())
    }

    pub fn load(grid_path: &Path, config_path: &Path) -> Result<Self> {
        let blob = GridBlob::read_file(grid_path)?;
        if blob.channels != 6 {
            return Err(Error::Format(format!(
                "illumination grid has {} channels, expected 6",
                blob.channels
            )));
        }
        let n = blob.rows * blob.cols;
        let mut gains = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let mut baseline = vec![0u8; n * 3];
        for i in 0..n {
            for ch in 0..3 {
                gains[ch][i] = f64::from(blob.data[i * 6 + ch]);
                baseline[i * 3 + ch] = blob.data[i * 6 + 3 + ch].round().clamp(0.0, 255.0) as u8;
            }
        }
        let text = std::fs::read_to_string(config_path)
            .map_err(|e| Error::io(config_path, e))?;
        let mut light_dirs = [[0.0; 3]; 3];
        let mut seen_dirs = [false; 3];
        let mut noise_sigma = None;
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: idx + 1,
                message: format!("expected key = value, got {line:?}"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let parse = |v: &str| -> Result<f64> {
                v.parse().map_err(|_| Error::Parse {
                    line: idx + 1,
                    message: format!("bad number {v:?}"),
                })
            };
            match key {
                "light_r" | "light_g" | "light_b" => {
                    let parts: Vec<&str> = value.split_whitespace().collect();
                    if parts.len() != 3 {
                        return Err(Error::Parse {
                            line: idx + 1,
                            message: format!("{key} needs three components"),
                        });
                    }
                    let ch = match key {
                        "light_r" => 0,
                        "light_g" => 1,
                        _ => 2,
                    };
                    for (slot, part) in light_dirs[ch].iter_mut().zip(parts) {
                        *slot = parse(part)?;
                    }
                    seen_dirs[ch] = true;
                }
                "noise_sigma" => noise_sigma = Some(parse(value)?),
                _ => {
                    return Err(Error::Parse {
                        line: idx + 1,
                        message: format!("unknown key {key:?}"),
                    });
                }
            }
        }
        if !seen_dirs.iter().all(|&s| s) {
            return Err(Error::Format("illumination config missing light directions".into()));
        }
        let model = IlluminationModel {
            rows: blob.rows,
            cols: blob.cols,
            light_dirs,
            gains,
            baseline,
            noise_sigma: noise_sigma
                .ok_or_else(|| Error::Format("illumination config missing noise_sigma".into()))?,
        };
        model.validate()?;
        Ok(model)
    }
}

/// Shades a gradient map into an 8-bit RGB frame.
///
/// Per pixel the unit surface normal is `(−gx, −gy, 1)/|·|`; each channel
/// gets `clamp(baseline + gain · max(0, n·l) · 255, 0, 255)` plus Gaussian
/// noise of the configured sigma, rounded to 8 bits. Noise is drawn from the
/// seed in row-major pixel order, R then G then B within a pixel, so frames
/// are bit-identical across runs.
pub fn render(
    gradients: &GradientMap,
    illumination: &IlluminationModel,
    seed: u64,
) -> Result<TactileImage> {
    if gradients.rows != illumination.rows || gradients.cols != illumination.cols {
        return Err(Error::InvalidArgument(format!(
            "gradient map {}x{} does not match illumination {}x{}",
            gradients.rows, gradients.cols, illumination.rows, illumination.cols
        )));
    }
    let n = gradients.rows * gradients.cols;
    let mut pixels = vec![0u8; n * 3];
    let mut noise = GaussianNoise::new(seed, illumination.noise_sigma);
    for i in 0..n {
        let gx = gradients.gx[i];
        let gy = gradients.gy[i];
        let inv_norm = 1.0 / (1.0 + gx * gx + gy * gy).sqrt();
        let normal = [-gx * inv_norm, -gy * inv_norm, inv_norm];
        for ch in 0..3 {
            let l = &illumination.light_dirs[ch];
            let lambert = (normal[0] * l[0] + normal[1] * l[1] + normal[2] * l[2]).max(0.0);
            let shade = f64::from(illumination.baseline[i * 3 + ch])
                + illumination.gains[ch][i] * lambert * 255.0;
            let value = shade.clamp(0.0, 255.0) + noise.sample();
            pixels[i * 3 + ch] = value.round().clamp(0.0, 255.0) as u8;
        }
    }
    TactileImage::new(gradients.rows, gradients.cols, pixels)
}

/// Presses an arbitrary object profile (a height field on the sensor grid)
/// into the gel: the profile is shifted in the plane, then lowered so that
/// exactly `indent_depth_mm` of it penetrates the gel surface.
///
/// Returns the rendered frame together with the effective ground-truth
/// height field `max(0, shifted_profile − (peak − indent_depth))`.
pub fn render_object(
    object: &HeightField,
    pose_shift_xy_mm: (f64, f64),
    indent_depth_mm: f64,
    illumination: &IlluminationModel,
    seed: u64,
) -> Result<(TactileImage, HeightField)> {
    if !(indent_depth_mm.is_finite() && indent_depth_mm >= 0.0) {
        return Err(Error::InvalidArgument("indent depth must be non-negative".into()));
    }
    let (rows, cols) = (object.rows, object.cols);
    let shifted = shift_bilinear(object, pose_shift_xy_mm)?;
    let peak = shifted.iter().fold(0.0f64, |a, &v| a.max(v));
    if peak <= 0.0 {
        return Err(Error::InvalidArgument(
            "pose shift pushed the object profile entirely off the sensor".into(),
        ));
    }
    let offset = peak - indent_depth_mm;
    let values: Vec<f64> = shifted.iter().map(|&v| (v - offset).max(0.0)).collect();
    let effective = HeightField::new(rows, cols, object.pitch_mm, values)?;
    let image = render(&gradients_of(&effective)?, illumination, seed)?;
    Ok((image, effective))
}

/// Translates a height field by a millimetre offset with bilinear sampling;
/// pixels pulled from outside the source read as zero.
fn shift_bilinear(field: &HeightField, shift_mm: (f64, f64)) -> Result<Vec<f64>> {
    if !(shift_mm.0.is_finite() && shift_mm.1.is_finite()) {
        return Err(Error::InvalidArgument("pose shift must be finite".into()));
    }
    let (rows, cols) = (field.rows, field.cols);
    let (dx, dy) = (shift_mm.0 / field.pitch_mm, shift_mm.1 / field.pitch_mm);
    let sample = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= rows as isize || c >= cols as isize {
            0.0
        } else {
            field.values[r as usize * cols + c as usize]
        }
    };
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let src_x = c as f64 - dx;
            let src_y = r as f64 - dy;
            let x0 = src_x.floor();
            let y0 = src_y.floor();
            let fx = src_x - x0;
            let fy = src_y - y0;
            let (x0, y0) = (x0 as isize, y0 as isize);
            let v = sample(y0, x0) * (1.0 - fx) * (1.0 - fy)
                + sample(y0, x0 + 1) * fx * (1.0 - fy)
                + sample(y0 + 1, x0) * (1.0 - fx) * fy
                + sample(y0 + 1, x0 + 1) * fx * fy;
            out[r * cols + c] = v;
        }
    }
    Ok(out)
}

/// Box–Muller Gaussian sampler over the deterministic stream cipher;
/// one uniform pair per sample keeps the draw order independent of use.
struct GaussianNoise {
    rng: rand_chacha::ChaCha8Rng,
    sigma: f64,
}

impl GaussianNoise {
    fn new(seed: u64, sigma: f64) -> Self {
        GaussianNoise { rng: rng_from(seed), sigma }
    }

    fn sample(&mut self) -> f64 {
        if self.sigma == 0.0 {
            return 0.0;
        }
        let u1: f64 = 1.0 - self.rng.gen::<f64>();
        let u2: f64 = self.rng.gen();
        self.sigma * (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poisson;
    use proptest::prelude::*;

    fn cap_centered(depth: f64) -> (HeightField, (f64, f64), SensorGeometry) {
        let geom = SensorGeometry::digit_like();
        let center = (8.0, 9.0);
        let field = indent_sphere(center, depth, 2.0, &geom).unwrap();
        (field, center, geom)
    }

    #[test]
    fn zero_depth_means_no_contact() {
        let (field, _, _) = cap_centered(0.0);
        assert!(field.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn contact_circle_radius_matches_cap_geometry() {
        // depth 0.5 at R = 2 gives a contact circle of sqrt(4 - 2.25) mm.
        let (field, center, geom) = cap_centered(0.5);
        let expected = (4.0f64 - 2.25).sqrt();
        let mut max_contact_r = 0.0f64;
        let mut min_free_r = f64::INFINITY;
        for r in 0..field.rows {
            for c in 0..field.cols {
                let (px, py) = geom.pixel_center_mm(r, c);
                let dist = ((px - center.0).powi(2) + (py - center.1).powi(2)).sqrt();
                if field.at(r, c) > 0.0 {
                    max_contact_r = max_contact_r.max(dist);
                } else {
                    min_free_r = min_free_r.min(dist);
                }
            }
        }
        assert!(max_contact_r < expected, "contact at {max_contact_r}, circle {expected}");
        assert!(max_contact_r > expected - 2.0 * geom.pitch_mm);
        assert!(min_free_r >= expected);
    }

    #[test]
    fn peak_height_equals_depth_at_probe_centre() {
        // Centre the probe exactly on a pixel centre so the apex is sampled.
        let geom = SensorGeometry::digit_like();
        let center = geom.pixel_center_mm(60, 80);
        let field = indent_sphere(center, 0.5, 2.0, &geom).unwrap();
        assert_eq!(field.at(60, 80), 0.5);
        assert_eq!(field.max_value(), 0.5);
    }

    #[test]
    fn rejects_depth_and_centre_violations() {
        let geom = SensorGeometry::digit_like();
        for bad in [
            indent_sphere((8.0, 9.0), 2.5, 2.0, &geom),
            indent_sphere((8.0, 9.0), -0.1, 2.0, &geom),
            indent_sphere((-1.0, 9.0), 0.5, 2.0, &geom),
            indent_sphere((8.0, 18.5), 0.5, 2.0, &geom),
        ] {
            assert!(matches!(bad, Err(Error::InvalidArgument(_))));
        }
        // Outside the camera window but inside the active area is fine: the
        // window starts at y = 3 mm, so a probe at y = 2 mm shows only the
        // far rim of its contact circle.
        let clipped = indent_sphere((8.0, 2.0), 1.0, 2.0, &geom).unwrap();
        assert!(clipped.max_value() > 0.0);
        assert!(clipped.max_value() < 1.0);
    }

    #[test]
    fn gradients_of_affine_fields_are_exact() {
        let geom = SensorGeometry::desk();
        let (rows, cols, h) = (geom.rows, geom.cols, geom.pitch_mm);
        let constant = HeightField::new(rows, cols, h, vec![0.7; rows * cols]).unwrap();
        let g = gradients_of(&constant).unwrap();
        assert!(g.gx.iter().chain(&g.gy).all(|&v| v == 0.0));

        let slope = 0.3;
        let plane: Vec<f64> = (0..rows * cols).map(|i| slope * ((i % cols) as f64) * h).collect();
        let g = gradients_of(&HeightField::new(rows, cols, h, plane).unwrap()).unwrap();
        for (i, (&gx, &gy)) in g.gx.iter().zip(&g.gy).enumerate() {
            assert!((gx - slope).abs() < 1e-12, "pixel {i}: gx = {gx}");
            assert!(gy.abs() < 1e-12);
        }
    }

    #[test]
    fn cap_gradients_match_analytic_slopes_away_from_crease() {
        // The cap profile's third radial derivative is 12r/(4 − r²)^(5/2),
        // so the central-difference truncation error h²·|g'''|/6 stays under
        // 1e-3 at 0.05 mm pitch for radii up to ~1.35 mm; the band between
        // there and the 1.732 mm contact circle is excluded as the crease
        // region.
        let geom = SensorGeometry {
            rows: 96,
            cols: 96,
            pitch_mm: 0.05,
            extent_mm: (4.8, 4.8),
            fov_offset_mm: (0.0, 0.0),
        };
        let center = (2.4, 2.4);
        let field = indent_sphere(center, 1.0, 2.0, &geom).unwrap();
        let g = gradients_of(&field).unwrap();
        let mut checked = 0;
        for r in 0..field.rows {
            for c in 0..field.cols {
                let (px, py) = geom.pixel_center_mm(r, c);
                let (dx, dy) = (px - center.0, py - center.1);
                let dist = (dx * dx + dy * dy).sqrt();
                if dist > 1.35 {
                    continue;
                }
                let denom = (4.0 - dist * dist).sqrt();
                let i = r * field.cols + c;
                assert!((g.gx[i] - (-dx / denom)).abs() < 1e-3, "gx at r={dist}");
                assert!((g.gy[i] - (-dy / denom)).abs() < 1e-3, "gy at r={dist}");
                checked += 1;
            }
        }
        assert!(checked > 500, "crease margin left only {checked} interior pixels");
    }

    #[test]
    fn gradients_need_a_full_stencil() {
        let tiny = HeightField::new(2, 5, 0.1, vec![0.0; 10]).unwrap();
        assert!(matches!(gradients_of(&tiny), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn integrating_cap_gradients_recovers_the_cap() {
        // Closure between the simulator and the depth integrator: a cap well
        // inside the grid survives the gradient → depth round trip to within
        // 1% of its apex over the cap interior. The error concentrates in a
        // ring at the contact circle, where the slope kink defeats any fixed
        // finite-difference stencil; that ring is bounded separately.
        let geom = SensorGeometry {
            rows: 64,
            cols: 64,
            pitch_mm: 0.07,
            extent_mm: (4.48, 4.48),
            fov_offset_mm: (0.0, 0.0),
        };
        let center = (2.24, 2.24);
        let field = indent_sphere(center, 1.0, 2.0, &geom).unwrap();
        let g = gradients_of(&field).unwrap();
        let z = poisson::integrate(&g, geom.pitch_mm).unwrap();
        let contact_r = 3.0f64.sqrt();
        let mut worst_interior = 0.0f64;
        let mut worst_anywhere = 0.0f64;
        for r in 0..geom.rows {
            for c in 0..geom.cols {
                let (px, py) = geom.pixel_center_mm(r, c);
                let dist = ((px - center.0).powi(2) + (py - center.1).powi(2)).sqrt();
                let e = (z.at(r, c) - field.at(r, c)).abs();
                worst_anywhere = worst_anywhere.max(e);
                if dist < contact_r - 2.0 * geom.pitch_mm {
                    worst_interior = worst_interior.max(e);
                }
            }
        }
        let peak = field.max_value();
        assert!(worst_interior < 0.01 * peak, "interior error {worst_interior} mm");
        assert!(worst_anywhere < 0.05 * peak, "crease-ring error {worst_anywhere} mm");
    }

    #[test]
    fn deeper_presses_nest_shallower_ones() {
        let (shallow, _, _) = cap_centered(0.4);
        let (deep, _, _) = cap_centered(0.9);
        let mut grew = false;
        for (s, d) in shallow.values.iter().zip(&deep.values) {
            assert!(d >= s);
            grew |= d > s;
        }
        assert!(grew);
    }

    proptest! {
        #[test]
        fn monotone_in_depth_everywhere(
            cx in 0.0f64..16.0,
            cy in 0.0f64..18.0,
            d1 in 0.0f64..2.0,
            d2 in 0.0f64..2.0,
        ) {
            let geom = SensorGeometry::desk();
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            let a = indent_sphere((cx, cy), lo, 2.0, &geom).unwrap();
            let b = indent_sphere((cx, cy), hi, 2.0, &geom).unwrap();
            let mut contacts = (0usize, 0usize);
            for (va, vb) in a.values.iter().zip(&b.values) {
                prop_assert!(vb >= va);
                contacts.0 += usize::from(*va > 0.0);
                contacts.1 += usize::from(*vb > 0.0);
            }
            prop_assert!(contacts.1 >= contacts.0);
        }
    }

    #[test]
    fn rendering_is_deterministic_in_the_seed() {
        let (field, _, geom) = cap_centered(0.8);
        let ill = IlluminationModel::default_for(&geom).unwrap();
        let g = gradients_of(&field).unwrap();
        let a = render(&g, &ill, 77).unwrap();
        let b = render(&g, &ill, 77).unwrap();
        let c = render(&g, &ill, 78).unwrap();
        assert_eq!(a.pixels, b.pixels);
        assert_ne!(a.pixels, c.pixels);
    }

    #[test]
    fn flat_noise_free_frame_matches_shading_formula() {
        let geom = SensorGeometry::desk();
        let mut ill = IlluminationModel::default_for(&geom).unwrap();
        ill.noise_sigma = 0.0;
        let g = GradientMap::zeros(geom.rows, geom.cols).unwrap();
        let frame = render(&g, &ill, 0).unwrap();
        let lambert = 45.0f64.to_radians().sin();
        for i in 0..geom.rows * geom.cols {
            for ch in 0..3 {
                let expected = (18.0 + ill.gains[ch][i] * lambert * 255.0)
                    .clamp(0.0, 255.0)
                    .round() as u8;
                assert_eq!(frame.pixels[i * 3 + ch], expected, "pixel {i} channel {ch}");
            }
        }
    }

    #[test]
    fn gradient_sign_flip_mirrors_shading_for_an_x_light() {
        // Channel R's light has a positive x-component (azimuth 0), so a
        // surface tilting towards −x faces it and brightens.
        let geom = SensorGeometry::desk();
        let mut ill = IlluminationModel::default_for(&geom).unwrap();
        ill.noise_sigma = 0.0;
        let n = geom.rows * geom.cols;
        let toward = GradientMap::new(geom.rows, geom.cols, vec![-0.5; n], vec![0.0; n]).unwrap();
        let away = GradientMap::new(geom.rows, geom.cols, vec![0.5; n], vec![0.0; n]).unwrap();
        let mean_r = |img: &TactileImage| {
            img.pixels.chunks_exact(3).map(|p| f64::from(p[0])).sum::<f64>() / n as f64
        };
        let bright = mean_r(&render(&toward, &ill, 0).unwrap());
        let dark = mean_r(&render(&away, &ill, 0).unwrap());
        assert!(bright > dark + 10.0, "towards {bright}, away {dark}");
    }

    #[test]
    fn render_rejects_dimension_mismatch() {
        let geom = SensorGeometry::desk();
        let ill = IlluminationModel::default_for(&geom).unwrap();
        let g = GradientMap::zeros(10, 10).unwrap();
        assert!(matches!(render(&g, &ill, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn object_presses_penetrate_by_the_requested_depth() {
        let geom = SensorGeometry::desk();
        let ill = IlluminationModel::default_for(&geom).unwrap();
        let object = indent_sphere((8.0, 9.0), 1.8, 2.0, &geom).unwrap();
        let (_, effective) = render_object(&object, (0.0, 0.0), 0.6, &ill, 3).unwrap();
        assert!((effective.max_value() - 0.6).abs() < 1e-12);
        // Shallower press contacts a smaller patch of the same object.
        let (_, shallow) = render_object(&object, (0.0, 0.0), 0.2, &ill, 3).unwrap();
        let count = |f: &HeightField| f.values.iter().filter(|&&v| v > 0.0).count();
        assert!(count(&shallow) < count(&effective));
    }

    #[test]
    fn object_shift_translates_the_ground_truth() {
        let geom = SensorGeometry::desk();
        let ill = IlluminationModel::default_for(&geom).unwrap();
        let object = indent_sphere((8.0, 9.0), 1.5, 2.0, &geom).unwrap();
        let (_, base) = render_object(&object, (0.0, 0.0), 0.5, &ill, 3).unwrap();
        // 1 mm = 5 pixels at 0.2 mm pitch: an exact-grid translation.
        let (_, shifted) = render_object(&object, (1.0, 0.0), 0.5, &ill, 3).unwrap();
        for r in 0..geom.rows {
            for c in 5..geom.cols {
                assert!(
                    (shifted.at(r, c) - base.at(r, c - 5)).abs() < 1e-12,
                    "pixel ({r}, {c})"
                );
            }
        }
    }

    #[test]
    fn object_fully_off_grid_is_rejected() {
        let geom = SensorGeometry::desk();
        let ill = IlluminationModel::default_for(&geom).unwrap();
        let object = indent_sphere((8.0, 9.0), 1.0, 2.0, &geom).unwrap();
        let shifted_out = render_object(&object, (40.0, 0.0), 0.5, &ill, 3);
        assert!(matches!(shifted_out, Err(Error::InvalidArgument(_))));
        let (_, zero_depth) = render_object(&object, (0.0, 0.0), 0.0, &ill, 3).unwrap();
        assert!(zero_depth.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn illumination_round_trips_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let geom = SensorGeometry::desk();
        let ill = IlluminationModel::default_for(&geom).unwrap();
        let grid = dir.path().join("illumination.grid");
        let config = dir.path().join("illumination.txt");
        ill.save(&grid, &config).unwrap();
        let back = IlluminationModel::load(&grid, &config).unwrap();
        assert_eq!(back.rows, ill.rows);
        assert_eq!(back.light_dirs, ill.light_dirs);
        assert_eq!(back.baseline, ill.baseline);
        assert_eq!(back.noise_sigma, ill.noise_sigma);
        for ch in 0..3 {
            for (a, b) in back.gains[ch].iter().zip(&ill.gains[ch]) {
                assert!((a - b).abs() < 1e-6, "gain quantization drift");
            }
        }
    }
}
