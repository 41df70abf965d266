//! Pixel-grid field types shared across the pipeline and their binary file
//! format.
//!
//! Every raster quantity in the pipeline — indentation height fields, depth
//! maps, gradient labels, network tensors at rest — is persisted in one
//! self-describing container so that any tool (or language) can read any
//! artifact:
//!
//! ```text
//! magic "3DCGRID1"
//! u32 rows, u32 cols, u32 channels          (little endian)
//! u8  units tag: 0 = mm, 1 = µm, 2 = dimensionless
//! rows·cols·channels 32-bit LE floats, row-major, channel-interleaved
//! u32 CRC-32 of all preceding bytes          (IEEE polynomial)
//! ```
//!
//! In-memory field types keep `f64` values for numerical headroom; the file
//! format quantizes to `f32` on write.

use crate::error::{Error, Result};
use std::io::Read;
use std::path::Path;
use std::sync::OnceLock;

pub const GRID_MAGIC: &[u8; 8] = b"3DCGRID1";

// ---------------------------------------------------------------------------
// CRC-32 (IEEE 802.3, reflected polynomial 0xEDB88320)
// ---------------------------------------------------------------------------

fn crc_table() -> &'static [u32; 256] {
    static TABLE: OnceLock<[u32; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = [0u32; 256];
        for (i, entry) in table.iter_mut().enumerate() {
            let mut c = i as u32;
            for _ in 0..8 {
                c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
            }
            *entry = c;
        }
        table
    })
}

/// CRC-32 checksum as used by the grid and checkpoint file trailers.
pub fn crc32(bytes: &[u8]) -> u32 {
    let table = crc_table();
    let mut c = 0xFFFF_FFFFu32;
    for &b in bytes {
        c = table[((c ^ b as u32) & 0xFF) as usize] ^ (c >> 8);
    }
    c ^ 0xFFFF_FFFF
}

// ---------------------------------------------------------------------------
// Units + raw blob
// ---------------------------------------------------------------------------

/// Physical interpretation of the stored values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Units {
    Millimeters,
    Micrometers,
    Dimensionless,
}

impl Units {
    pub fn tag(self) -> u8 {
        match self {
            Units::Millimeters => 0,
            Units::Micrometers => 1,
            Units::Dimensionless => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Units::Millimeters),
            1 => Ok(Units::Micrometers),
            2 => Ok(Units::Dimensionless),
            other => Err(Error::Format(format!("unknown units tag {other}"))),
        }
    }
}

/// Raw contents of a grid file: dimensions, units, and `f32` samples in
/// row-major, channel-interleaved order (`data[(r*cols + c)*channels + ch]`).
#[derive(Debug, Clone, PartialEq)]
pub struct GridBlob {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub units: Units,
    pub data: Vec<f32>,
}

impl GridBlob {
    pub fn new(rows: usize, cols: usize, channels: usize, units: Units, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 || channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "grid dimensions must be positive, got {rows}x{cols}x{channels}"
            )));
        }
        if data.len() != rows * cols * channels {
            return Err(Error::InvalidArgument(format!(
                "grid data length {} does not match {rows}x{cols}x{channels}",
                data.len()
            )));
        }
        Ok(GridBlob { rows, cols, channels, units, data })
    }

    /// Serialize to the on-disk byte layout, including the CRC trailer.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 13 + self.data.len() * 4 + 4);
        out.extend_from_slice(GRID_MAGIC);
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        out.extend_from_slice(&(self.channels as u32).to_le_bytes());
        out.push(self.units.tag());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Parse and checksum-verify the on-disk byte layout.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        const HEADER: usize = 8 + 4 + 4 + 4 + 1;
        if bytes.len() < HEADER + 4 {
            return Err(Error::Format(format!(
                "grid file truncated: {} bytes is shorter than any valid file",
                bytes.len()
            )));
        }
        if &bytes[0..8] != GRID_MAGIC {
            return Err(Error::Format(
                "not a grid file (bad magic; expected \"3DCGRID1\")".into(),
            ));
        }
        let rd_u32 = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let rows = rd_u32(8) as usize;
        let cols = rd_u32(12) as usize;
        let channels = rd_u32(16) as usize;
        let units = Units::from_tag(bytes[20])?;
        let n = rows
            .checked_mul(cols)
            .and_then(|v| v.checked_mul(channels))
            .ok_or_else(|| Error::Format("grid dimensions overflow".into()))?;
        let expected = HEADER + n * 4 + 4;
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "grid file length {} does not match header ({rows}x{cols}x{channels} needs {expected})",
                bytes.len()
            )));
        }
        let body_end = HEADER + n * 4;
        let stored_crc = rd_u32(body_end);
        let actual_crc = crc32(&bytes[..body_end]);
        if stored_crc != actual_crc {
            return Err(Error::Format(format!(
                "grid file checksum mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"
            )));
        }
        let mut data = Vec::with_capacity(n);
        for i in 0..n {
            let at = HEADER + i * 4;
            data.push(f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()));
        }
        GridBlob::new(rows, cols, channels, units, data)
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

// ---------------------------------------------------------------------------
// Domain field types
// ---------------------------------------------------------------------------

fn check_field(rows: usize, cols: usize, len: usize, what: &str) -> Result<()> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument(format!(
            "{what} dimensions must be positive, got {rows}x{cols}"
        )));
    }
    if len != rows * cols {
        return Err(Error::InvalidArgument(format!(
            "{what} has {len} values, expected {rows}x{cols} = {}",
            rows * cols
        )));
    }
    Ok(())
}

/// Indentation height of the gel surface in mm on the sensor pixel grid.
/// Zero means undisturbed gel; values are never negative.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightField {
    pub rows: usize,
    pub cols: usize,
    pub pitch_mm: f64,
    /// Row-major, `values[r * cols + c]`.
    pub values: Vec<f64>,
}

impl HeightField {
    pub fn new(rows: usize, cols: usize, pitch_mm: f64, values: Vec<f64>) -> Result<Self> {
        check_field(rows, cols, values.len(), "height field")?;
        if !(pitch_mm > 0.0) {
            return Err(Error::InvalidArgument(format!("pitch must be positive, got {pitch_mm}")));
        }
        Ok(HeightField { rows, cols, pitch_mm, values })
    }

    pub fn zeros(rows: usize, cols: usize, pitch_mm: f64) -> Result<Self> {
        Self::new(rows, cols, pitch_mm, vec![0.0; rows * cols])
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    pub fn to_blob(&self) -> GridBlob {
        GridBlob::new(
            self.rows,
            self.cols,
            1,
            Units::Millimeters,
            self.values.iter().map(|&v| v as f32).collect(),
        )
        .expect("dimensions validated at construction")
    }

    pub fn from_blob(blob: &GridBlob, pitch_mm: f64) -> Result<Self> {
        if blob.channels != 1 {
            return Err(Error::Format(format!(
                "expected a 1-channel grid for a height field, got {} channels",
                blob.channels
            )));
        }
        Self::new(blob.rows, blob.cols, pitch_mm, blob.data.iter().map(|&v| v as f64).collect())
    }
}

/// Per-pixel indentation depth. Same layout as [`HeightField`] but carries a
/// units tag: reconstruction outputs are mm, error maps are µm.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub rows: usize,
    pub cols: usize,
    pub pitch_mm: f64,
    pub units: Units,
    pub values: Vec<f64>,
}

impl DepthMap {
    pub fn new(rows: usize, cols: usize, pitch_mm: f64, units: Units, values: Vec<f64>) -> Result<Self> {
        check_field(rows, cols, values.len(), "depth map")?;
        if !(pitch_mm > 0.0) {
            return Err(Error::InvalidArgument(format!("pitch must be positive, got {pitch_mm}")));
        }
        Ok(DepthMap { rows, cols, pitch_mm, units, values })
    }

    pub fn zeros(rows: usize, cols: usize, pitch_mm: f64) -> Result<Self> {
        Self::new(rows, cols, pitch_mm, Units::Millimeters, vec![0.0; rows * cols])
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn from_height_field(h: &HeightField) -> Self {
        DepthMap {
            rows: h.rows,
            cols: h.cols,
            pitch_mm: h.pitch_mm,
            units: Units::Millimeters,
            values: h.values.clone(),
        }
    }

    pub fn to_blob(&self) -> GridBlob {
        GridBlob::new(
            self.rows,
            self.cols,
            1,
            self.units,
            self.values.iter().map(|&v| v as f32).collect(),
        )
        .expect("dimensions validated at construction")
    }

    pub fn from_blob(blob: &GridBlob, pitch_mm: f64) -> Result<Self> {
        if blob.channels != 1 {
            return Err(Error::Format(format!(
                "expected a 1-channel grid for a depth map, got {} channels",
                blob.channels
            )));
        }
        Self::new(
            blob.rows,
            blob.cols,
            pitch_mm,
            blob.units,
            blob.data.iter().map(|&v| v as f64).collect(),
        )
    }
}

/// Surface slope field: per-pixel ∂z/∂x and ∂z/∂y (dimensionless mm/mm).
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMap {
    pub rows: usize,
    pub cols: usize,
    /// Row-major, `gx[r * cols + c]`.
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
}

impl GradientMap {
    pub fn new(rows: usize, cols: usize, gx: Vec<f64>, gy: Vec<f64>) -> Result<Self> {
        check_field(rows, cols, gx.len(), "gradient map (x channel)")?;
        check_field(rows, cols, gy.len(), "gradient map (y channel)")?;
        Ok(GradientMap { rows, cols, gx, gy })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, vec![0.0; rows * cols], vec![0.0; rows * cols])
    }

    /// Mean squared difference across both channels.
    pub fn mse(&self, other: &GradientMap) -> Result<f64> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::InvalidArgument(format!(
                "gradient map dimensions differ: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let n = (self.rows * self.cols * 2) as f64;
        let mut acc = 0.0f64;
        for (a, b) in self.gx.iter().zip(&other.gx) {
            let d = a - b;
            acc += d * d;
        }
        for (a, b) in self.gy.iter().zip(&other.gy) {
            let d = a - b;
            acc += d * d;
        }
        Ok(acc / n)
    }

    /// Quantize every value through `f32`, the precision at which labels are
    /// persisted. Capture runs this once so that in-memory labels, saved
    /// labels, and the images rendered from them agree bit-exactly.
    pub fn quantize_f32(&mut self) {
        for v in self.gx.iter_mut().chain(self.gy.iter_mut()) {
            *v = *v as f32 as f64;
        }
    }

    pub fn to_blob(&self) -> GridBlob {
        let n = self.rows * self.cols;
        let mut data = Vec::with_capacity(n * 2);
        for i in 0..n {
            data.push(self.gx[i] as f32);
            data.push(self.gy[i] as f32);
        }
        GridBlob::new(self.rows, self.cols, 2, Units::Dimensionless, data)
            .expect("dimensions validated at construction")
    }

    pub fn from_blob(blob: &GridBlob) -> Result<Self> {
        if blob.channels != 2 {
            return Err(Error::Format(format!(
                "expected a 2-channel grid for a gradient map, got {} channels",
                blob.channels
            )));
        }
        let n = blob.rows * blob.cols;
        let mut gx = Vec::with_capacity(n);
        let mut gy = Vec::with_capacity(n);
        for i in 0..n {
            gx.push(blob.data[2 * i] as f64);
            gy.push(blob.data[2 * i + 1] as f64);
        }
        Self::new(blob.rows, blob.cols, gx, gy)
    }
}

/// Divergence of a gradient field: ∂gx/∂x + ∂gy/∂y per pixel, in 1/mm.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceField {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl DivergenceField {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        check_field(rows, cols, values.len(), "divergence field")?;
        Ok(DivergenceField { rows, cols, values })
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }
}

/// An 8-bit RGB sensor frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TactileImage {
    pub rows: usize,
    pub cols: usize,
    /// Row-major RGB, `pixels[(r * cols + c) * 3 + ch]`.
    pub pixels: Vec<u8>,
}

impl TactileImage {
    pub fn new(rows: usize, cols: usize, pixels: Vec<u8>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if pixels.len() != rows * cols * 3 {
            return Err(Error::InvalidArgument(format!(
                "image has {} bytes, expected {rows}x{cols}x3 = {}",
                pixels.len(),
                rows * cols * 3
            )));
        }
        Ok(TactileImage { rows, cols, pixels })
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> [u8; 3] {
        let i = (r * self.cols + c) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crc32_matches_reference_check_value() {
        // The canonical CRC-32 test vector.
        assert_eq!(crc32(b"123456789"), 0xCBF4_3926);
        assert_eq!(crc32(b""), 0);
    }

    #[test]
    fn blob_round_trips_bit_exactly() {
        let blob = GridBlob::new(
            2,
            3,
            2,
            Units::Dimensionless,
            (0..12).map(|i| i as f32 * 0.25 - 1.0).collect(),
        )
        .unwrap();
        let bytes = blob.to_bytes();
        let back = GridBlob::from_bytes(&bytes).unwrap();
        assert_eq!(back, blob);
        // Byte-level identity as well: serialize the parsed copy.
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn tampered_blob_is_rejected_by_checksum() {
        let blob = GridBlob::new(4, 4, 1, Units::Millimeters, vec![1.5; 16]).unwrap();
        let mut bytes = blob.to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x01;
        let err = GridBlob::from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, Error::Format(ref m) if m.contains("checksum")), "{err}");
    }

    #[test]
    fn bad_magic_truncation_and_units_are_rejected() {
        let blob = GridBlob::new(2, 2, 1, Units::Millimeters, vec![0.0; 4]).unwrap();
        let good = blob.to_bytes();

        let mut bad_magic = good.clone();
        bad_magic[7] = b'9';
        assert!(matches!(GridBlob::from_bytes(&bad_magic), Err(Error::Format(_))));

        assert!(matches!(GridBlob::from_bytes(&good[..good.len() - 1]), Err(Error::Format(_))));
        assert!(matches!(GridBlob::from_bytes(&good[..10]), Err(Error::Format(_))));

        let mut bad_units = good;
        bad_units[20] = 7;
        // Units byte is covered by the CRC, so either error is structural.
        assert!(GridBlob::from_bytes(&bad_units).is_err());

        assert!(matches!(Units::from_tag(3), Err(Error::Format(_))));
    }

    #[test]
    fn gradient_map_blob_interleaves_channels() {
        let g = GradientMap::new(1, 2, vec![1.0, 2.0], vec![-1.0, -2.0]).unwrap();
        let blob = g.to_blob();
        assert_eq!(blob.data, vec![1.0f32, -1.0, 2.0, -2.0]);
        let back = GradientMap::from_blob(&blob).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn depth_map_preserves_units_through_blob() {
        let d = DepthMap::new(2, 2, 0.1, Units::Micrometers, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let blob = d.to_blob();
        assert_eq!(blob.units, Units::Micrometers);
        let back = DepthMap::from_blob(&blob, 0.1).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn field_constructors_validate_shapes() {
        assert!(HeightField::new(2, 2, 0.1, vec![0.0; 3]).is_err());
        assert!(HeightField::new(0, 2, 0.1, vec![]).is_err());
        assert!(HeightField::new(2, 2, 0.0, vec![0.0; 4]).is_err());
        assert!(GradientMap::new(2, 2, vec![0.0; 4], vec![0.0; 3]).is_err());
        assert!(TactileImage::new(2, 2, vec![0; 11]).is_err());
    }

    #[test]
    fn f32_quantization_is_idempotent() {
        let mut g = GradientMap::new(1, 1, vec![0.1234567890123], vec![-0.9876543210987]).unwrap();
        g.quantize_f32();
        let once = g.clone();
        g.quantize_f32();
        assert_eq!(g, once);
        // And a blob round trip is exact after quantization.
        let back = GradientMap::from_blob(&once.to_blob()).unwrap();
        assert_eq!(back, once);
    }
}
