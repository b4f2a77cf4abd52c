//! Triangle template meshes with UV layouts.
//!
//! The template mesh anchors every Gaussian: a UV coordinate is looked up in
//! the mesh's UV charts and barycentrically interpolated to a 3D surface
//! point. Lookups are accelerated by a uniform grid over UV space.

use nalgebra::{Vector2, Vector3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("line {line}: malformed record: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("line {line}: face corner has no texture coordinate index")]
    MissingTexCoords { line: usize },
    #[error("line {line}: index {index} out of range ({kind} count is {count})")]
    IndexOutOfRange {
        line: usize,
        index: isize,
        kind: &'static str,
        count: usize,
    },
    #[error("mesh has {vertices} vertices and {faces} faces; need at least 3 and 1")]
    EmptyMesh { vertices: usize, faces: usize },
}

/// Triangle mesh with one UV coordinate per face corner.
#[derive(Debug, Clone)]
pub struct TemplateMesh {
    pub vertices: Vec<Vector3<f64>>,
    /// Vertex indices, three per face.
    pub faces: Vec<[u32; 3]>,
    /// UV coordinates per face corner, parallel to `faces`.
    pub corner_uvs: Vec<[Vector2<f64>; 3]>,
}

impl TemplateMesh {
    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// 3D positions of a face's corners.
    pub fn face_positions(&self, face: usize) -> [Vector3<f64>; 3] {
        let f = self.faces[face];
        [
            self.vertices[f[0] as usize],
            self.vertices[f[1] as usize],
            self.vertices[f[2] as usize],
        ]
    }
}

/// Parse Wavefront-OBJ text into a template mesh.
///
/// Recognizes `v`, `vt`, and `f` records; `vn`, `o`, `g`, `s`, `usemtl`,
/// `mtllib`, and comments are ignored. Faces must reference texture
/// coordinates (`f v/vt ...`); polygons are fan-triangulated. Negative
/// (relative) indices are resolved against the current element counts.
pub fn parse_obj(text: &str) -> Result<TemplateMesh, MeshError> {
    let mut positions: Vec<Vector3<f64>> = Vec::new();
    let mut texcoords: Vec<Vector2<f64>> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    let mut corner_uvs: Vec<[Vector2<f64>; 3]> = Vec::new();

    for (line_no, raw_line) in text.lines().enumerate() {
        let line = line_no + 1;
        let content = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        };
        let mut tokens = content.split_whitespace();
        let Some(keyword) = tokens.next() else {
            continue;
        };
        match keyword {
            "v" => {
                let p = parse_floats::<3>(&mut tokens, line, "vertex position")?;
                positions.push(Vector3::new(p[0], p[1], p[2]));
            }
            "vt" => {
                let mut vals = [0.0f64; 2];
                for (i, v) in vals.iter_mut().enumerate() {
                    let tok = tokens.next().ok_or_else(|| MeshError::MalformedRecord {
                        line,
                        message: format!("texture coordinate needs 2 components, got {i}"),
                    })?;
                    *v = tok.parse().map_err(|_| MeshError::MalformedRecord {
                        line,
                        message: format!("not a number: {tok:?}"),
                    })?;
                }
                // Optional third component ignored.
                let uv = Vector2::new(vals[0], vals[1]);
                if !(0.0..=1.0).contains(&uv.x) || !(0.0..=1.0).contains(&uv.y) {
                    return Err(MeshError::MalformedRecord {
                        line,
                        message: format!(
                            "texture coordinate ({}, {}) outside [0,1]^2",
                            uv.x, uv.y
                        ),
                    });
                }
                texcoords.push(uv);
            }
            "f" => {
                let mut corners: Vec<(u32, Vector2<f64>)> = Vec::new();
                for tok in tokens {
                    let mut parts = tok.split('/');
                    let v_str = parts.next().unwrap_or("");
                    let vt_str = parts.next().unwrap_or("");
                    if vt_str.is_empty() {
                        return Err(MeshError::MissingTexCoords { line });
                    }
                    let vi = resolve_index(v_str, positions.len(), line, "vertex")?;
                    let ti = resolve_index(vt_str, texcoords.len(), line, "texture coordinate")?;
                    corners.push((vi as u32, texcoords[ti]));
                }
                if corners.len() < 3 {
                    return Err(MeshError::MalformedRecord {
                        line,
                        message: format!("face has {} corners, need at least 3", corners.len()),
                    });
                }
                for k in 1..corners.len() - 1 {
                    faces.push([corners[0].0, corners[k].0, corners[k + 1].0]);
                    corner_uvs.push([corners[0].1, corners[k].1, corners[k + 1].1]);
                }
            }
            _ => {}
        }
    }

    if positions.len() < 3 || faces.is_empty() {
        return Err(MeshError::EmptyMesh {
            vertices: positions.len(),
            faces: faces.len(),
        });
    }
    for p in &positions {
        if !p.iter().all(|c| c.is_finite()) {
            return Err(MeshError::MalformedRecord {
                line: 0,
                message: "non-finite vertex position".into(),
            });
        }
    }
    Ok(TemplateMesh {
        vertices: positions,
        faces,
        corner_uvs,
    })
}

fn parse_floats<const N: usize>(
    tokens: &mut std::str::SplitWhitespace<'_>,
    line: usize,
    what: &str,
) -> Result<[f64; N], MeshError> {
    let mut out = [0.0f64; N];
    for (i, v) in out.iter_mut().enumerate() {
        let tok = tokens.next().ok_or_else(|| MeshError::MalformedRecord {
            line,
            message: format!("{what} needs {N} components, got {i}"),
        })?;
        *v = tok.parse().map_err(|_| MeshError::MalformedRecord {
            line,
            message: format!("not a number: {tok:?}"),
        })?;
    }
    Ok(out)
}

fn resolve_index(
    token: &str,
    count: usize,
    line: usize,
    kind: &'static str,
) -> Result<usize, MeshError> {
    let idx: isize = token.parse().map_err(|_| MeshError::MalformedRecord {
        line,
        message: format!("not an index: {token:?}"),
    })?;
    let resolved = if idx > 0 {
        (idx - 1) as usize
    } else if idx < 0 {
        let back = (-idx) as usize;
        if back > count {
            return Err(MeshError::IndexOutOfRange {
                line,
                index: idx,
                kind,
                count,
            });
        }
        count - back
    } else {
        return Err(MeshError::IndexOutOfRange {
            line,
            index: 0,
            kind,
            count,
        });
    };
    if resolved >= count {
        return Err(MeshError::IndexOutOfRange {
            line,
            index: idx,
            kind,
            count,
        });
    }
    Ok(resolved)
}

/// Result of a UV→surface lookup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceSample {
    pub position: Vector3<f64>,
    pub face: usize,
    pub barycentric: [f64; 3],
}

/// Uniform-grid acceleration structure over the mesh's UV triangles.
///
/// Queries return the lowest face id containing the point, matching a
/// brute-force scan over all faces in order.
#[derive(Debug, Clone)]
pub struct UvChartIndex {
    mesh: TemplateMesh,
    cells_per_axis: usize,
    /// Candidate face ids per cell, each list sorted ascending.
    cells: Vec<Vec<u32>>,
    /// Zero-area UV triangles skipped during the build.
    pub degenerate_uv_triangles: usize,
}

/// Default cell count per axis for a face count, ⌈√(2F)⌉.
pub fn default_grid_cells(face_count: usize) -> usize {
    ((2 * face_count) as f64).sqrt().ceil().max(1.0) as usize
}

/// Build the uniform UV grid. Zero-area UV triangles are skipped and counted,
/// not treated as errors.
pub fn build_uv_index(mesh: &TemplateMesh, grid_cells: usize) -> UvChartIndex {
    assert!(grid_cells >= 1, "grid_cells must be positive");
    let n = grid_cells;
    let mut cells: Vec<Vec<u32>> = vec![Vec::new(); n * n];
    let mut degenerate = 0usize;

    for (face, uvs) in mesh.corner_uvs.iter().enumerate() {
        if uv_triangle_area2(uvs) == 0.0 {
            degenerate += 1;
            continue;
        }
        let (min_u, max_u) = min_max(uvs[0].x, uvs[1].x, uvs[2].x);
        let (min_v, max_v) = min_max(uvs[0].y, uvs[1].y, uvs[2].y);
        let c0 = cell_of(min_u, n);
        let c1 = cell_of(max_u, n);
        let r0 = cell_of(min_v, n);
        let r1 = cell_of(max_v, n);
        for r in r0..=r1 {
            for c in c0..=c1 {
                cells[r * n + c].push(face as u32);
            }
        }
    }

    UvChartIndex {
        mesh: mesh.clone(),
        cells_per_axis: n,
        cells,
        degenerate_uv_triangles: degenerate,
    }
}

fn min_max(a: f64, b: f64, c: f64) -> (f64, f64) {
    (a.min(b).min(c), a.max(b).max(c))
}

#[inline]
fn cell_of(coord: f64, n: usize) -> usize {
    ((coord * n as f64) as isize).clamp(0, n as isize - 1) as usize
}

/// Twice the signed area of a UV triangle.
fn uv_triangle_area2(uvs: &[Vector2<f64>; 3]) -> f64 {
    let e1 = uvs[1] - uvs[0];
    let e2 = uvs[2] - uvs[0];
    e1.x * e2.y - e1.y * e2.x
}

/// Barycentric weights of `p` in the UV triangle, or None if outside.
/// Boundary points (weights of exactly zero) count as inside.
fn uv_barycentric(uvs: &[Vector2<f64>; 3], p: Vector2<f64>) -> Option<[f64; 3]> {
    let denom = uv_triangle_area2(uvs);
    if denom == 0.0 {
        return None;
    }
    let e2 = uvs[2] - uvs[0];
    let e1 = uvs[1] - uvs[0];
    let d = p - uvs[0];
    let wb = (d.x * e2.y - d.y * e2.x) / denom;
    let wc = (e1.x * d.y - e1.y * d.x) / denom;
    let wa = 1.0 - wb - wc;
    if wa >= 0.0 && wb >= 0.0 && wc >= 0.0 {
        Some([wa, wb, wc])
    } else {
        None
    }
}

impl UvChartIndex {
    pub fn mesh(&self) -> &TemplateMesh {
        &self.mesh
    }

    /// Map a UV point to the template surface. Returns None for gutter
    /// points. Overlapping charts resolve to the lowest face id.
    pub fn uv_to_surface(&self, x_uv: Vector2<f64>) -> Option<SurfaceSample> {
        debug_assert!(
            (0.0..=1.0).contains(&x_uv.x) && (0.0..=1.0).contains(&x_uv.y),
            "query outside [0,1]^2"
        );
        let n = self.cells_per_axis;
        let cell = &self.cells[cell_of(x_uv.y, n) * n + cell_of(x_uv.x, n)];
        for &face in cell {
            let face = face as usize;
            if let Some(w) = uv_barycentric(&self.mesh.corner_uvs[face], x_uv) {
                let [pa, pb, pc] = self.mesh.face_positions(face);
                return Some(SurfaceSample {
                    position: pa * w[0] + pb * w[1] + pc * w[2],
                    face,
                    barycentric: w,
                });
            }
        }
        None
    }

    /// Reference lookup scanning every face in order; used to validate the
    /// grid in tests.
    pub fn uv_to_surface_bruteforce(&self, x_uv: Vector2<f64>) -> Option<SurfaceSample> {
        for face in 0..self.mesh.face_count() {
            let uvs = &self.mesh.corner_uvs[face];
            if uv_triangle_area2(uvs) == 0.0 {
                continue;
            }
            if let Some(w) = uv_barycentric(uvs, x_uv) {
                let [pa, pb, pc] = self.mesh.face_positions(face);
                return Some(SurfaceSample {
                    position: pa * w[0] + pb * w[1] + pc * w[2],
                    face,
                    barycentric: w,
                });
            }
        }
        None
    }
}

/// Regular grid of UV sample points at texel centers.
#[derive(Debug, Clone)]
pub struct UvGrid {
    pub resolution: u32,
    /// All R² texel-center coordinates, row-major with `u` fastest.
    pub coords: Vec<Vector2<f64>>,
    /// True where the point lies inside a UV chart.
    pub valid_mask: Vec<bool>,
}

impl UvGrid {
    pub fn valid_count(&self) -> usize {
        self.valid_mask.iter().filter(|&&m| m).count()
    }

    /// Iterator over the valid coordinates.
    pub fn valid_coords(&self) -> impl Iterator<Item = Vector2<f64>> + '_ {
        self.coords
            .iter()
            .zip(self.valid_mask.iter())
            .filter(|(_, &m)| m)
            .map(|(&c, _)| c)
    }
}

/// Sample an R×R grid of texel centers ((i+0.5)/R, (j+0.5)/R) and mark which
/// land on a chart.
pub fn sample_uv_grid(index: &UvChartIndex, resolution: u32) -> UvGrid {
    assert!(resolution >= 1, "resolution must be positive");
    let r = resolution as usize;
    let mut coords = Vec::with_capacity(r * r);
    let mut valid_mask = Vec::with_capacity(r * r);
    for j in 0..r {
        for i in 0..r {
            let uv = Vector2::new(
                (i as f64 + 0.5) / resolution as f64,
                (j as f64 + 0.5) / resolution as f64,
            );
            coords.push(uv);
            valid_mask.push(index.uv_to_surface(uv).is_some());
        }
    }
    UvGrid {
        resolution,
        coords,
        valid_mask,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Two triangles covering the unit square, lying in the z=0 plane.
    pub(crate) fn unit_square_obj() -> &'static str {
        "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\n\
         vt 0 0\nvt 1 0\nvt 1 1\nvt 0 1\n\
         f 1/1 2/2 3/3\nf 1/1 3/3 4/4\n"
    }

    #[test]
    fn parses_counts_from_simple_obj() {
        let obj = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\n\
                   vt 0 0\nvt 1 0\nvt 1 1\nvt 0 1\n\
                   f 1/1 2/2 3/3\nf 1/1 3/3 4/4\n";
        let mesh = parse_obj(obj).unwrap();
        assert_eq!(mesh.vertices.len(), 4);
        assert_eq!(mesh.faces.len(), 2);
        assert_eq!(mesh.corner_uvs.len(), 2);
    }

    #[test]
    fn face_without_texcoords_is_an_error() {
        let obj = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nf 1 2 3\n";
        match parse_obj(obj) {
            Err(MeshError::MissingTexCoords { line }) => assert_eq!(line, 5),
            other => panic!("expected MissingTexCoords, got {other:?}"),
        }
    }

    #[test]
    fn quad_faces_fan_triangulate() {
        let mesh = parse_obj(
            "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\n\
             vt 0 0\nvt 1 0\nvt 1 1\nvt 0 1\n\
             f 1/1 2/2 3/3 4/4\n",
        )
        .unwrap();
        assert_eq!(mesh.faces, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn out_of_range_index_is_an_error() {
        let obj = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nf 1/1 2/1 9/1\n";
        assert!(matches!(
            parse_obj(obj),
            Err(MeshError::IndexOutOfRange { index: 9, .. })
        ));
    }

    #[test]
    fn negative_indices_resolve_relative() {
        let mesh = parse_obj(
            "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nf -3/-3 -2/-2 -1/-1\n",
        )
        .unwrap();
        assert_eq!(mesh.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn uv_outside_unit_square_is_rejected() {
        let obj = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 1.5\nvt 1 0\nvt 0 1\nf 1/1 2/2 3/3\n";
        assert!(matches!(
            parse_obj(obj),
            Err(MeshError::MalformedRecord { line: 4, .. })
        ));
    }

    #[test]
    fn malformed_vertex_reports_line() {
        let obj = "v 0 zero 0\n";
        match parse_obj(obj) {
            Err(MeshError::MalformedRecord { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected MalformedRecord, got {other:?}"),
        }
    }

    #[test]
    fn single_triangle_hit_and_gutter() {
        let mesh = parse_obj(
            "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nf 1/1 2/2 3/3\n",
        )
        .unwrap();
        let index = build_uv_index(&mesh, 4);
        let hit = index.uv_to_surface(Vector2::new(0.1, 0.1)).unwrap();
        assert_eq!(hit.face, 0);
        assert!(index.uv_to_surface(Vector2::new(0.9, 0.9)).is_none());
    }

    #[test]
    fn degenerate_uv_triangles_are_counted_not_fatal() {
        let mesh = parse_obj(
            "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\n\
             f 1/1 2/1 3/1\nf 1/1 2/2 3/3\n",
        )
        .unwrap();
        let index = build_uv_index(&mesh, 4);
        assert_eq!(index.degenerate_uv_triangles, 1);
        assert_eq!(index.uv_to_surface(Vector2::new(0.2, 0.2)).unwrap().face, 1);
    }

    #[test]
    fn corner_query_returns_vertex_exactly() {
        let mesh = parse_obj(unit_square_obj()).unwrap();
        let index = build_uv_index(&mesh, default_grid_cells(mesh.face_count()));
        let hit = index.uv_to_surface(Vector2::new(0.0, 0.0)).unwrap();
        assert_eq!(hit.position, Vector3::new(0.0, 0.0, 0.0));
        let hit = index.uv_to_surface(Vector2::new(1.0, 1.0)).unwrap();
        assert_eq!(hit.position, Vector3::new(1.0, 1.0, 0.0));
        assert_eq!(hit.face, 0, "shared diagonal tie-breaks to lowest face id");
    }

    #[test]
    fn centroid_query_averages_vertices() {
        let mesh = parse_obj(
            "v 0 0 0\nv 3 0 0\nv 0 3 3\nvt 0 0\nvt 1 0\nvt 0 1\nf 1/1 2/2 3/3\n",
        )
        .unwrap();
        let index = build_uv_index(&mesh, 2);
        let hit = index
            .uv_to_surface(Vector2::new(1.0 / 3.0, 1.0 / 3.0))
            .unwrap();
        let expect = Vector3::new(1.0, 1.0, 1.0);
        assert!((hit.position - expect).norm() < 1e-12);
        for w in hit.barycentric {
            assert!((w - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn full_coverage_grid_r2() {
        let mesh = parse_obj(unit_square_obj()).unwrap();
        let index = build_uv_index(&mesh, 2);
        let grid = sample_uv_grid(&index, 2);
        assert_eq!(grid.coords.len(), 4);
        assert_eq!(grid.valid_count(), 4);
        let pts: Vec<(f64, f64)> = grid.coords.iter().map(|c| (c.x, c.y)).collect();
        assert_eq!(
            pts,
            vec![(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)]
        );
    }

    #[test]
    fn grid_point_counts_match_resolution() {
        let mesh = parse_obj(unit_square_obj()).unwrap();
        let index = build_uv_index(&mesh, 2);
        assert_eq!(sample_uv_grid(&index, 256).coords.len(), 65_536);
        assert_eq!(sample_uv_grid(&index, 512).coords.len(), 262_144);
    }

    /// Random well-formed mesh in UV space for property tests.
    fn random_mesh(seed: u64, n_tris: usize) -> TemplateMesh {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        let mut corner_uvs = Vec::new();
        for t in 0..n_tris {
            let base = (t * 3) as u32;
            let uvs: [Vector2<f64>; 3] = std::array::from_fn(|_| {
                Vector2::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0))
            });
            for uv in uvs {
                vertices.push(Vector3::new(
                    uv.x,
                    uv.y,
                    rng.gen_range(-1.0..1.0),
                ));
            }
            faces.push([base, base + 1, base + 2]);
            corner_uvs.push(uvs);
        }
        TemplateMesh {
            vertices,
            faces,
            corner_uvs,
        }
    }

    #[test]
    fn grid_index_matches_bruteforce_on_random_meshes() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for seed in 0..5 {
            let mesh = random_mesh(seed, 40);
            let index = build_uv_index(&mesh, default_grid_cells(mesh.face_count()));
            for _ in 0..2_000 {
                let p = Vector2::new(rng.gen_range(0.0..=1.0), rng.gen_range(0.0..=1.0));
                let fast = index.uv_to_surface(p);
                let slow = index.uv_to_surface_bruteforce(p);
                match (fast, slow) {
                    (None, None) => {}
                    (Some(a), Some(b)) => {
                        assert_eq!(a.face, b.face, "face mismatch at {p:?}");
                        assert_eq!(a.position, b.position);
                    }
                    other => panic!("hit/miss mismatch at {p:?}: {other:?}"),
                }
            }
        }
    }

    proptest! {
        #[test]
        fn barycentric_weights_reconstruct_query(
            seed in 0u64..20,
            ux in 0.0f64..1.0,
            vy in 0.0f64..1.0,
        ) {
            let mesh = random_mesh(seed, 20);
            let index = build_uv_index(&mesh, default_grid_cells(mesh.face_count()));
            let p = Vector2::new(ux, vy);
            if let Some(hit) = index.uv_to_surface(p) {
                let uvs = &mesh.corner_uvs[hit.face];
                let recon = uvs[0] * hit.barycentric[0]
                    + uvs[1] * hit.barycentric[1]
                    + uvs[2] * hit.barycentric[2];
                prop_assert!((recon - p).norm() < 1e-7);
                let sum: f64 = hit.barycentric.iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-9);
                prop_assert!(hit.barycentric.iter().all(|&w| w >= 0.0));
            }
        }
    }

    #[test]
    fn grid_is_resolution_monotone() {
        let mesh = random_mesh(7, 30);
        let index = build_uv_index(&mesh, default_grid_cells(mesh.face_count()));
        let r = 32u32;
        let coarse = sample_uv_grid(&index, r);
        let fine = sample_uv_grid(&index, 2 * r);
        let fine_valid: Vec<Vector2<f64>> = fine.valid_coords().collect();
        for c in coarse.valid_coords() {
            let near = fine_valid
                .iter()
                .any(|f| (f - c).amax() <= 1.0 / r as f64);
            assert!(near, "no fine valid point within 1/R of {c:?}");
        }
    }
}
