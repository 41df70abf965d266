//! Ground-truth depth maps from triangle meshes.
//!
//! Test objects arrive as STL files (or are generated procedurally below);
//! casting a ray through every pixel of a grid gives the top-surface height
//! field, expressed as the indentation profile a rigid press of that face
//! would make: height above the mesh's lowest point along the view axis,
//! zero where nothing is hit.

use crate::error::{Error, Result};
use crate::grid::{DepthMap, Units};

/// Indexed triangle soup in millimetres. Facet normals are implied by the
/// counter-clockwise winding; nothing stored in a file is trusted.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len() as u32;
        for t in &self.triangles {
            if t.iter().any(|&i| i >= n) {
                return Err(Error::InvalidArgument(format!(
                    "triangle references vertex {} of {n}",
                    t.iter().max().unwrap()
                )));
            }
        }
        Ok(())
    }

    pub fn bounding_box(&self) -> Option<([f64; 3], [f64; 3])> {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for a in 0..3 {
                lo[a] = lo[a].min(v[a]);
                hi[a] = hi[a].max(v[a]);
            }
        }
        if self.vertices.is_empty() {
            None
        } else {
            Some((lo, hi))
        }
    }

    pub fn translated(&self, offset: [f64; 3]) -> TriangleMesh {
        TriangleMesh {
            vertices: self
                .vertices
                .iter()
                .map(|v| [v[0] + offset[0], v[1] + offset[1], v[2] + offset[2]])
                .collect(),
            triangles: self.triangles.clone(),
        }
    }

    pub fn merged(parts: &[TriangleMesh]) -> TriangleMesh {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for part in parts {
            let base = vertices.len() as u32;
            vertices.extend_from_slice(&part.vertices);
            triangles.extend(part.triangles.iter().map(|t| [t[0] + base, t[1] + base, t[2] + base]));
        }
        TriangleMesh { vertices, triangles }
    }
}

fn triangle_area(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    let e1 = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let e2 = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let cx = e1[1] * e2[2] - e1[2] * e2[1];
    let cy = e1[2] * e2[0] - e1[0] * e2[2];
    let cz = e1[0] * e2[1] - e1[1] * e2[0];
    0.5 * (cx * cx + cy * cy + cz * cz).sqrt()
}

/// Assembles an indexed mesh from facet soup, welding vertices that share an
/// exact 32-bit float representation and dropping zero-area facets.
fn weld(facets: Vec<[[f32; 3]; 3]>) -> TriangleMesh {
    let mut index = std::collections::HashMap::<[u32; 3], u32>::new();
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for facet in facets {
        let mut tri = [0u32; 3];
        for (slot, corner) in tri.iter_mut().zip(facet) {
            let key = [corner[0].to_bits(), corner[1].to_bits(), corner[2].to_bits()];
            *slot = *index.entry(key).or_insert_with(|| {
                vertices.push([f64::from(corner[0]), f64::from(corner[1]), f64::from(corner[2])]);
                (vertices.len() - 1) as u32
            });
        }
        let area = triangle_area(
            vertices[tri[0] as usize],
            vertices[tri[1] as usize],
            vertices[tri[2] as usize],
        );
        if area > 1e-12 {
            triangles.push(tri);
        }
    }
    TriangleMesh { vertices, triangles }
}

/// Parses binary or ASCII STL. Binary is recognized by its exact size
/// (84-byte preamble plus fifty bytes per facet); anything else starting
/// with `solid` is tried as ASCII. Stored facet normals are ignored.
pub fn parse_stl(bytes: &[u8]) -> Result<TriangleMesh> {
    if bytes.len() >= 84 {
        let count = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
        if bytes.len() == 84 + 50 * count {
            return Ok(parse_binary(&bytes[84..], count));
        }
    }
    let looks_ascii = bytes
        .iter()
        .position(|b| !b.is_ascii_whitespace())
        .map(|i| bytes[i..].len() >= 5 && bytes[i..i + 5].eq_ignore_ascii_case(b"solid"))
        .unwrap_or(false);
    if looks_ascii {
        if let Ok(text) = std::str::from_utf8(bytes) {
            return parse_ascii(text);
        }
    }
    if bytes.len() >= 84 {
        let count = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
        let actual = (bytes.len() - 84) / 50;
        return Err(Error::Parse {
            line: 0,
            message: format!("binary facet count {count} but file holds {actual} records"),
        });
    }
    Err(Error::Format("not a binary or ASCII STL file".into()))
}

fn parse_binary(records: &[u8], count: usize) -> TriangleMesh {
    let mut facets = Vec::with_capacity(count);
    for rec in records.chunks_exact(50) {
        let mut facet = [[0.0f32; 3]; 3];
        // Twelve little-endian floats per record: normal (skipped), then
        // three vertices; two attribute bytes trail.
        for (v, corner) in facet.iter_mut().enumerate() {
            for a in 0..3 {
                let off = 12 + v * 12 + a * 4;
                corner[a] = f32::from_le_bytes(rec[off..off + 4].try_into().unwrap());
            }
        }
        facets.push(facet);
    }
    weld(facets)
}

fn parse_ascii(text: &str) -> Result<TriangleMesh> {
    let mut facets = Vec::new();
    let mut corners: Vec<[f32; 3]> = Vec::new();
    let mut in_solid = false;
    let mut closed = false;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let mut words = raw.split_whitespace();
        let Some(head) = words.next() else { continue };
        match head.to_ascii_lowercase().as_str() {
            "solid" => in_solid = true,
            "endsolid" => {
                closed = true;
                break;
            }
            "facet" | "outer" | "endloop" => {}
            "endfacet" => {
                if corners.len() != 3 {
                    return Err(Error::Parse {
                        line,
                        message: format!("facet closed with {} vertices", corners.len()),
                    });
                }
                facets.push([corners[0], corners[1], corners[2]]);
                corners.clear();
            }
            "vertex" => {
                let mut corner = [0.0f32; 3];
                for slot in &mut corner {
                    let word = words.next().ok_or(Error::Parse {
                        line,
                        message: "vertex needs three coordinates".into(),
                    })?;
                    *slot = word.parse().map_err(|_| Error::Parse {
                        line,
                        message: format!("bad coordinate {word:?}"),
                    })?;
                }
                corners.push(corner);
            }
            other => {
                return Err(Error::Parse {
                    line,
                    message: format!("unexpected token {other:?}"),
                });
            }
        }
    }
    if !in_solid || !closed {
        return Err(Error::Parse {
            line: 0,
            message: "missing solid/endsolid".into(),
        });
    }
    Ok(weld(facets))
}

/// Serializes a mesh as binary STL (normals recomputed from winding).
pub fn to_binary_stl(mesh: &TriangleMesh) -> Vec<u8> {
    let mut out = vec![0u8; 80];
    out.extend((mesh.triangles.len() as u32).to_le_bytes());
    for t in &mesh.triangles {
        let [a, b, c] = [
            mesh.vertices[t[0] as usize],
            mesh.vertices[t[1] as usize],
            mesh.vertices[t[2] as usize],
        ];
        let e1 = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let e2 = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        let mut n = [
            e1[1] * e2[2] - e1[2] * e2[1],
            e1[2] * e2[0] - e1[0] * e2[2],
            e1[0] * e2[1] - e1[1] * e2[0],
        ];
        let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        if norm > 0.0 {
            for v in &mut n {
                *v /= norm;
            }
        }
        for v in n {
            out.extend((v as f32).to_le_bytes());
        }
        for corner in [a, b, c] {
            for v in corner {
                out.extend((v as f32).to_le_bytes());
            }
        }
        out.extend([0u8; 2]);
    }
    out
}

/// Raster grid for the ray cast: pixel `(r, c)` is the cell centred at
/// `origin + (c + 0.5, r + 0.5) · pitch` in the view plane.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub pitch_mm: f64,
    pub origin_mm: (f64, f64),
}

/// Axis the rays travel along (looking down the negative direction).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewAxis {
    X,
    Y,
    Z,
}

impl ViewAxis {
    /// Maps a world vertex into (u, v, height) view coordinates.
    fn project(self, p: [f64; 3]) -> (f64, f64, f64) {
        match self {
            ViewAxis::Z => (p[0], p[1], p[2]),
            ViewAxis::X => (p[1], p[2], p[0]),
            ViewAxis::Y => (p[0], p[2], p[1]),
        }
    }
}

/// Casts one ray per pixel along the negative view axis and reports the top
/// surface as indentation depth: height of the highest hit above the mesh's
/// lowest point along that axis, 0 where no triangle is struck.
pub fn mesh_to_depthmap(mesh: &TriangleMesh, grid: &GridSpec, axis: ViewAxis) -> Result<DepthMap> {
    mesh.validate()?;
    if grid.rows == 0 || grid.cols == 0 || !(grid.pitch_mm > 0.0 && grid.pitch_mm.is_finite()) {
        return Err(Error::InvalidArgument("grid must be non-empty with positive pitch".into()));
    }
    let (lo, hi) = mesh
        .bounding_box()
        .ok_or_else(|| Error::InvalidArgument("mesh has no vertices".into()))?;
    let (blo, bhi) = (axis.project(lo), axis.project(hi));
    // Projected bounding boxes keep their axis ranges under coordinate
    // permutation, so min/max per view coordinate is just a component pick.
    let u_range = (blo.0.min(bhi.0), blo.0.max(bhi.0));
    let v_range = (blo.1.min(bhi.1), blo.1.max(bhi.1));
    let floor_h = blo.2.min(bhi.2);
    let grid_u = (grid.origin_mm.0, grid.origin_mm.0 + grid.cols as f64 * grid.pitch_mm);
    let grid_v = (grid.origin_mm.1, grid.origin_mm.1 + grid.rows as f64 * grid.pitch_mm);
    if u_range.1 < grid_u.0 || u_range.0 > grid_u.1 || v_range.1 < grid_v.0 || v_range.0 > grid_v.1 {
        return Err(Error::InvalidArgument(
            "mesh bounding box does not overlap the grid footprint".into(),
        ));
    }

    let caster = RayCaster::new(mesh, grid, axis);
    let mut values = vec![0.0; grid.rows * grid.cols];
    let mut any = false;
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            if let Some(top) = caster.top_hit(r, c) {
                values[r * grid.cols + c] = top - floor_h;
                any = true;
            }
        }
    }
    if !any {
        return Err(Error::InvalidArgument(
            "no grid ray intersects the mesh".into(),
        ));
    }
    DepthMap::new(grid.rows, grid.cols, grid.pitch_mm, Units::Millimeters, values)
}

/// Per-pixel triangle buckets plus Möller–Trumbore intersection for rays
/// along the negative view axis.
struct RayCaster<'a> {
    grid: &'a GridSpec,
    verts: Vec<(f64, f64, f64)>,
    triangles: &'a [[u32; 3]],
    buckets: Vec<Vec<u32>>,
}

impl<'a> RayCaster<'a> {
    fn new(mesh: &'a TriangleMesh, grid: &'a GridSpec, axis: ViewAxis) -> Self {
        let verts: Vec<(f64, f64, f64)> = mesh.vertices.iter().map(|&v| axis.project(v)).collect();
        let mut buckets = vec![Vec::new(); grid.rows * grid.cols];
        let inv = 1.0 / grid.pitch_mm;
        for (i, t) in mesh.triangles.iter().enumerate() {
            let (mut ulo, mut uhi) = (f64::INFINITY, f64::NEG_INFINITY);
            let (mut vlo, mut vhi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &vi in t {
                let (u, v, _) = verts[vi as usize];
                ulo = ulo.min(u);
                uhi = uhi.max(u);
                vlo = vlo.min(v);
                vhi = vhi.max(v);
            }
            // Pixel centres sit at half-integer multiples of the pitch, so a
            // triangle spanning [ulo, uhi] can only catch columns whose
            // centre lies inside; the ±0.5 shift converts to index space.
            let c0 = (((ulo - grid.origin_mm.0) * inv - 0.5).ceil().max(0.0)) as usize;
            let c1 = ((uhi - grid.origin_mm.0) * inv - 0.5).floor();
            let r0 = (((vlo - grid.origin_mm.1) * inv - 0.5).ceil().max(0.0)) as usize;
            let r1 = ((vhi - grid.origin_mm.1) * inv - 0.5).floor();
            if c1 < 0.0 || r1 < 0.0 {
                continue;
            }
            let c1 = (c1 as usize).min(grid.cols.saturating_sub(1));
            let r1 = (r1 as usize).min(grid.rows.saturating_sub(1));
            for r in r0..=r1.max(r0).min(grid.rows.saturating_sub(1)) {
                for c in c0..=c1.max(c0).min(grid.cols.saturating_sub(1)) {
                    if r < grid.rows && c < grid.cols {
                        buckets[r * grid.cols + c].push(i as u32);
                    }
                }
            }
        }
        RayCaster { grid, verts, triangles: &mesh.triangles, buckets }
    }

    fn pixel_uv(&self, r: usize, c: usize) -> (f64, f64) {
        (
            self.grid.origin_mm.0 + (c as f64 + 0.5) * self.grid.pitch_mm,
            self.grid.origin_mm.1 + (r as f64 + 0.5) * self.grid.pitch_mm,
        )
    }

    /// Height of the highest surface crossed by the pixel's ray, if any;
    /// coincident triangles resolve to the maximum.
    fn top_hit(&self, r: usize, c: usize) -> Option<f64> {
        let (u, v) = self.pixel_uv(r, c);
        let mut top = f64::NEG_INFINITY;
        for &ti in &self.buckets[r * self.grid.cols + c] {
            if let Some(h) = self.intersect(ti as usize, u, v) {
                top = top.max(h);
            }
        }
        (top > f64::NEG_INFINITY).then_some(top)
    }

    /// All intersection heights (for parity checks), unsorted.
    fn all_hits(&self, r: usize, c: usize) -> Vec<f64> {
        let (u, v) = self.pixel_uv(r, c);
        self.buckets[r * self.grid.cols + c]
            .iter()
            .filter_map(|&ti| self.intersect(ti as usize, u, v))
            .collect()
    }

    /// Möller–Trumbore specialized to a downward ray at (u, v): determinant
    /// below 1e-9 counts as parallel, boundary hits (u, v barycentric 0/1)
    /// are included.
    fn intersect(&self, ti: usize, u: f64, v: f64) -> Option<f64> {
        let [i0, i1, i2] = self.triangles[ti];
        let a = self.verts[i0 as usize];
        let b = self.verts[i1 as usize];
        let c = self.verts[i2 as usize];
        let e1 = (b.0 - a.0, b.1 - a.1, b.2 - a.2);
        let e2 = (c.0 - a.0, c.1 - a.1, c.2 - a.2);
        // Ray origin (u, v, 0) with direction (0, 0, −1); pvec = dir × e2.
        let pvec = (e2.1, -e2.0, 0.0);
        let det = e1.0 * pvec.0 + e1.1 * pvec.1;
        if det.abs() < 1e-9 {
            return None;
        }
        let inv_det = 1.0 / det;
        let tvec = (u - a.0, v - a.1, -a.2);
        let bu = (tvec.0 * pvec.0 + tvec.1 * pvec.1) * inv_det;
        if !(0.0..=1.0).contains(&bu) {
            return None;
        }
        let qvec = (
            tvec.1 * e1.2 - tvec.2 * e1.1,
            tvec.2 * e1.0 - tvec.0 * e1.2,
            tvec.0 * e1.1 - tvec.1 * e1.0,
        );
        let bv = -qvec.2 * inv_det;
        if bv < 0.0 || bu + bv > 1.0 {
            return None;
        }
        let t = (e2.0 * qvec.0 + e2.1 * qvec.1 + e2.2 * qvec.2) * inv_det;
        // Height of the hit: origin height 0 minus t along (0,0,−1).
        Some(-t)
    }
}

/// Counts ray–surface crossings per pixel; watertight meshes give even
/// counts wherever the ray is not tangent.
pub fn hit_parity(mesh: &TriangleMesh, grid: &GridSpec, axis: ViewAxis) -> Result<Vec<usize>> {
    mesh.validate()?;
    let caster = RayCaster::new(mesh, grid, axis);
    let mut counts = vec![0usize; grid.rows * grid.cols];
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            counts[r * grid.cols + c] = caster.all_hits(r, c).len();
        }
    }
    Ok(counts)
}

/// Surface of revolution around the vertical axis through the origin: the
/// profile runs from the top down as (radius, height) pairs; radius-zero
/// entries become pole vertices. The profile should start and end on the
/// axis for a watertight solid.
pub fn lathe(profile: &[(f64, f64)], segments: usize) -> Result<TriangleMesh> {
    if profile.len() < 2 || segments < 3 {
        return Err(Error::InvalidArgument(
            "lathe needs at least two profile points and three segments".into(),
        ));
    }
    let mut vertices = Vec::new();
    let mut ring_starts = Vec::new();
    for &(radius, height) in profile {
        if radius < 0.0 {
            return Err(Error::InvalidArgument("profile radius must be non-negative".into()));
        }
        if radius == 0.0 {
            ring_starts.push((vertices.len(), 1usize));
            vertices.push([0.0, 0.0, height]);
        } else {
            ring_starts.push((vertices.len(), segments));
            for s in 0..segments {
                let angle = 2.0 * std::f64::consts::PI * s as f64 / segments as f64;
                vertices.push([radius * angle.cos(), radius * angle.sin(), height]);
            }
        }
    }
    let mut triangles = Vec::new();
    for w in ring_starts.windows(2) {
        let [(a0, an), (b0, bn)] = [w[0], w[1]];
        for s in 0..segments {
            let s1 = (s + 1) % segments;
            let (a, a1) = (a0 + s % an, a0 + s1 % an);
            let (b, b1) = (b0 + s % bn, b0 + s1 % bn);
            if a != a1 {
                triangles.push([a as u32, b as u32, a1 as u32]);
            }
            if b != b1 {
                triangles.push([a1 as u32, b as u32, b1 as u32]);
            }
        }
    }
    let mesh = TriangleMesh { vertices, triangles };
    mesh.validate()?;
    Ok(mesh)
}

/// Triangulated sheet sampling `height(x, y)` on an `nx × ny` lattice over a
/// rectangle centred at the origin. Top surface only — not watertight.
pub fn heightfield_mesh(
    height: impl Fn(f64, f64) -> f64,
    size_mm: (f64, f64),
    nx: usize,
    ny: usize,
) -> Result<TriangleMesh> {
    if nx < 2 || ny < 2 {
        return Err(Error::InvalidArgument("sheet needs at least a 2x2 lattice".into()));
    }
    let mut vertices = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let x = (i as f64 / (nx - 1) as f64 - 0.5) * size_mm.0;
            let y = (j as f64 / (ny - 1) as f64 - 0.5) * size_mm.1;
            vertices.push([x, y, height(x, y)]);
        }
    }
    let mut triangles = Vec::new();
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let a = (j * nx + i) as u32;
            let b = a + 1;
            let c = a + nx as u32;
            let d = c + 1;
            triangles.push([a, b, c]);
            triangles.push([b, d, c]);
        }
    }
    Ok(TriangleMesh { vertices, triangles })
}

/// Solid hemisphere: apex up, flat base on the z = 0 plane, centred on the
/// origin. Watertight.
pub fn hemisphere(radius: f64, segments: usize) -> Result<TriangleMesh> {
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::InvalidArgument("hemisphere radius must be positive".into()));
    }
    let arcs = (segments / 2).max(3);
    let mut profile = vec![(0.0, radius)];
    for k in 1..=arcs {
        let angle = std::f64::consts::FRAC_PI_2 * k as f64 / arcs as f64;
        profile.push((radius * angle.sin(), radius * angle.cos()));
    }
    profile.push((0.0, 0.0));
    lathe(&profile, segments)
}

/// Two 2 mm-radius hemispheres 5 mm apart on a shared base line — a 10 mm
/// footprint test object with two separated contact patches.
pub fn hemispheres_object() -> TriangleMesh {
    let bump = hemisphere(2.0, 96).unwrap();
    TriangleMesh::merged(&[bump.translated([-2.5, 0.0, 0.0]), bump.translated([2.5, 0.0, 0.0])])
}

/// A pill lying flat: half-capsule top surface over a 6 mm spine with 2 mm
/// radius (10 × 4 mm footprint).
pub fn pill_object() -> TriangleMesh {
    let (radius, half_spine) = (2.0, 3.0);
    heightfield_mesh(
        |x, y| {
            let dx = (x.abs() - half_spine).max(0.0);
            let d2 = dx * dx + y * y;
            (radius * radius - d2).max(0.0).sqrt()
        },
        (10.4, 4.4),
        105,
        45,
    )
    .unwrap()
}

/// A pawn silhouette of revolution: 6.4 mm base disc, narrow neck, ball
/// top, 8 mm tall. Watertight.
pub fn pawn_object() -> TriangleMesh {
    let profile = [
        (0.0, 8.0),
        (0.9, 7.8),
        (1.5, 7.3),
        (1.7, 6.6),
        (1.4, 5.9),
        (0.9, 5.4),
        (0.8, 4.6),
        (0.9, 3.8),
        (1.3, 3.0),
        (2.1, 2.2),
        (2.9, 1.5),
        (3.2, 0.9),
        (3.2, 0.0),
        (0.0, 0.0),
    ];
    lathe(&profile, 96).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_cube() -> TriangleMesh {
        // Eight corners, twelve facets, outward winding.
        let v = [
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [1.0, 0.0, 1.0],
            [1.0, 1.0, 1.0],
            [0.0, 1.0, 1.0],
        ];
        let t: [[u32; 3]; 12] = [
            [0, 2, 1],
            [0, 3, 2],
            [4, 5, 6],
            [4, 6, 7],
            [0, 1, 5],
            [0, 5, 4],
            [2, 3, 7],
            [2, 7, 6],
            [1, 2, 6],
            [1, 6, 5],
            [3, 0, 4],
            [3, 4, 7],
        ];
        TriangleMesh { vertices: v.to_vec(), triangles: t.to_vec() }
    }

    #[test]
    fn binary_cube_round_trips_with_welding() {
        let bytes = to_binary_stl(&unit_cube());
        assert_eq!(bytes.len(), 84 + 50 * 12);
        let mesh = parse_stl(&bytes).unwrap();
        assert_eq!(mesh.triangles.len(), 12);
        assert_eq!(mesh.vertices.len(), 8);
    }

    #[test]
    fn ascii_single_facet_parses() {
        let text = "solid demo\n facet normal 0 0 1\n  outer loop\n   vertex 0 0 0\n   vertex 1 0 0\n   vertex 0 1 0\n  endloop\n endfacet\nendsolid demo\n";
        let mesh = parse_stl(text.as_bytes()).unwrap();
        assert_eq!(mesh.triangles.len(), 1);
        assert_eq!(mesh.vertices.len(), 3);
    }

    #[test]
    fn facet_count_mismatch_is_a_parse_error() {
        let mut bytes = to_binary_stl(&unit_cube());
        bytes[80..84].copy_from_slice(&100u32.to_le_bytes());
        match parse_stl(&bytes) {
            Err(Error::Parse { message, .. }) => {
                assert!(message.contains("100") && message.contains("12"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn garbage_is_a_format_error() {
        assert!(matches!(parse_stl(b"not an stl"), Err(Error::Format(_))));
    }

    #[test]
    fn degenerate_facets_are_filtered() {
        let mesh = TriangleMesh {
            vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            triangles: vec![[0, 1, 2], [0, 1, 1]],
        };
        let parsed = parse_stl(&to_binary_stl(&mesh)).unwrap();
        assert_eq!(parsed.triangles.len(), 1);
    }

    #[test]
    fn cube_face_maps_to_its_proudness() {
        // A 1 mm cube viewed from above: every pixel inside the footprint
        // reads the full 1 mm the face stands proud of the base plane.
        let grid = GridSpec { rows: 8, cols: 8, pitch_mm: 0.1, origin_mm: (0.1, 0.1) };
        let map = mesh_to_depthmap(&unit_cube(), &grid, ViewAxis::Z).unwrap();
        assert!(map.values.iter().all(|&v| v == 1.0));
        // Sideways view: the square face again, 1 mm proud.
        let side = mesh_to_depthmap(&unit_cube(), &grid, ViewAxis::X).unwrap();
        assert!(side.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn pixels_off_the_footprint_read_zero() {
        let grid = GridSpec { rows: 10, cols: 30, pitch_mm: 0.1, origin_mm: (-1.0, 0.2) };
        let map = mesh_to_depthmap(&unit_cube(), &grid, ViewAxis::Z).unwrap();
        assert_eq!(map.at(0, 0), 0.0);
        assert_eq!(map.at(5, 15), 1.0);
    }

    #[test]
    fn hemisphere_profile_matches_the_analytic_dome() {
        let mesh = hemisphere(5.0, 512).unwrap();
        let grid = GridSpec { rows: 104, cols: 104, pitch_mm: 0.1, origin_mm: (-5.2, -5.2) };
        let map = mesh_to_depthmap(&mesh, &grid, ViewAxis::Z).unwrap();
        for r in 0..grid.rows {
            for c in 0..grid.cols {
                let x = grid.origin_mm.0 + (c as f64 + 0.5) * grid.pitch_mm;
                let y = grid.origin_mm.1 + (r as f64 + 0.5) * grid.pitch_mm;
                let analytic = (25.0 - x * x - y * y).max(0.0).sqrt();
                assert!(
                    (map.at(r, c) - analytic).abs() <= 0.5 * grid.pitch_mm,
                    "({r},{c}): cast {} analytic {analytic}",
                    map.at(r, c)
                );
            }
        }
        let center = map.at(52, 52);
        assert!(center > map.at(52, 90));
        assert!((center - 5.0).abs() < 0.01);
    }

    #[test]
    fn watertight_solids_have_even_ray_parity() {
        let mesh = hemisphere(3.0, 64).unwrap();
        // Jittered origin keeps rays off the lathe's edge lattice.
        let grid = GridSpec { rows: 40, cols: 40, pitch_mm: 0.17, origin_mm: (-3.4131, -3.3917) };
        let counts = hit_parity(&mesh, &grid, ViewAxis::Z).unwrap();
        assert!(counts.iter().all(|&c| c % 2 == 0));
        assert!(counts.iter().any(|&c| c == 2));
    }

    #[test]
    fn refining_the_grid_is_consistent() {
        // Halving the pitch re-samples the surface a quarter coarse-pitch
        // away from each coarse centre; wherever the coarse estimate has
        // converged (pixel and neighbours all in contact), the fine sample
        // may move by at most one coarse pitch of local slope.
        let mesh = hemisphere(4.0, 256).unwrap();
        let p = 0.2;
        let coarse = GridSpec { rows: 44, cols: 44, pitch_mm: p, origin_mm: (-4.4, -4.4) };
        let fine = GridSpec { rows: 88, cols: 88, pitch_mm: p / 2.0, origin_mm: (-4.4, -4.4) };
        let dc = mesh_to_depthmap(&mesh, &coarse, ViewAxis::Z).unwrap();
        let df = mesh_to_depthmap(&mesh, &fine, ViewAxis::Z).unwrap();
        let mut checked = 0;
        for r in 1..coarse.rows - 1 {
            for c in 1..coarse.cols - 1 {
                let neighbours =
                    [dc.at(r, c - 1), dc.at(r, c + 1), dc.at(r - 1, c), dc.at(r + 1, c)];
                if dc.at(r, c) == 0.0 || neighbours.iter().any(|&n| n == 0.0) {
                    continue;
                }
                let slope = ((neighbours[1] - neighbours[0]).abs()
                    + (neighbours[3] - neighbours[2]).abs())
                    / (2.0 * p);
                let delta = (df.at(2 * r, 2 * c) - dc.at(r, c)).abs();
                assert!(
                    delta <= p * (slope + 1.0),
                    "({r},{c}): coarse {} fine {} slope {slope}",
                    dc.at(r, c),
                    df.at(2 * r, 2 * c)
                );
                checked += 1;
            }
        }
        assert!(checked > 1000, "only {checked} converged pixels compared");
    }

    #[test]
    fn disjoint_mesh_and_grid_is_an_error() {
        let grid = GridSpec { rows: 8, cols: 8, pitch_mm: 0.1, origin_mm: (50.0, 50.0) };
        assert!(matches!(
            mesh_to_depthmap(&unit_cube(), &grid, ViewAxis::Z),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn test_objects_land_in_a_10mm_footprint_with_expected_peaks() {
        let grid = GridSpec { rows: 60, cols: 60, pitch_mm: 0.2, origin_mm: (-6.0, -6.0) };
        let center_of = |x: f64, y: f64| -> (usize, usize) {
            (((y + 6.0) / 0.2 - 0.5).round() as usize, ((x + 6.0) / 0.2 - 0.5).round() as usize)
        };

        let two = mesh_to_depthmap(&hemispheres_object(), &grid, ViewAxis::Z).unwrap();
        let (lo, hi) = hemispheres_object().bounding_box().unwrap();
        assert!(hi[0] - lo[0] <= 10.0 + 1e-9 && hi[1] - lo[1] <= 10.0 + 1e-9);
        let (r, c) = center_of(-2.5, 0.0);
        assert!((two.at(r, c) - 2.0).abs() < 0.02);
        let (r, c) = center_of(2.5, 0.0);
        assert!((two.at(r, c) - 2.0).abs() < 0.02);
        let (r, c) = center_of(0.0, 0.0);
        assert_eq!(two.at(r, c), 0.0, "saddle between the bumps touches nothing");

        let pill = mesh_to_depthmap(&pill_object(), &grid, ViewAxis::Z).unwrap();
        let (r, c) = center_of(0.0, 0.0);
        assert!((pill.at(r, c) - 2.0).abs() < 0.02);
        let (r, c) = center_of(0.0, 3.0);
        assert_eq!(pill.at(r, c), 0.0);

        let pawn = mesh_to_depthmap(&pawn_object(), &grid, ViewAxis::Z).unwrap();
        let (r, c) = center_of(0.0, 0.0);
        assert!((pawn.at(r, c) - 8.0).abs() < 0.05, "apex {}", pawn.at(r, c));
        let (lo, hi) = pawn_object().bounding_box().unwrap();
        assert!(hi[0] - lo[0] <= 10.0 && hi[1] - lo[1] <= 10.0);
    }

    #[test]
    fn procedural_objects_survive_stl_round_trips() {
        for mesh in [hemispheres_object(), pawn_object()] {
            let parsed = parse_stl(&to_binary_stl(&mesh)).unwrap();
            assert_eq!(parsed.triangles.len(), mesh.triangles.len());
            // Welding may renumber, but the surface area must survive.
            let area = |m: &TriangleMesh| -> f64 {
                m.triangles
                    .iter()
                    .map(|t| {
                        triangle_area(
                            m.vertices[t[0] as usize],
                            m.vertices[t[1] as usize],
                            m.vertices[t[2] as usize],
                        )
                    })
                    .sum()
            };
            assert!((area(&parsed) - area(&mesh)).abs() < 1e-3 * area(&mesh));
        }
    }
}
