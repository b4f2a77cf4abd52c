//! Procedural templates and attribute maps for tests, benchmarks, and the
//! fixture generator. Everything here is deterministic in its inputs.

use crate::maps::{AttributeMaps, CH_COLOR, CH_OPACITY, CH_SCALE};

/// Two triangles spanning [-extent, extent]² in the z = 0 plane, with UVs
/// covering the full unit square.
pub fn plane_obj(extent: f64) -> String {
    let e = extent;
    format!(
        "v {0} {1} 0\nv {2} {1} 0\nv {2} {3} 0\nv {0} {3} 0\n\
         vt 0 0\nvt 1 0\nvt 1 1\nvt 0 1\n\
         f 1/1 2/2 3/3\nf 1/1 3/3 4/4\n",
        -e, -e, e, e
    )
}

/// Latitude-longitude sphere, y-up, with UVs covering the full unit square
/// (u wraps in azimuth, v runs pole to pole).
pub fn sphere_obj(radius: f64, segments: u32, rings: u32) -> String {
    sphere_obj_uv_band(radius, segments, rings, 0.0, 1.0)
}

/// Sphere with its v coordinates remapped into [v_lo, v_hi]; building block
/// for multi-chart layouts.
fn sphere_obj_uv_band(radius: f64, segments: u32, rings: u32, v_lo: f64, v_hi: f64) -> String {
    let mut v_lines = String::new();
    let mut vt_lines = String::new();
    let mut f_lines = String::new();
    for j in 0..=rings {
        let theta = std::f64::consts::PI * j as f64 / rings as f64;
        for i in 0..=segments {
            let phi = std::f64::consts::TAU * i as f64 / segments as f64;
            let x = radius * theta.sin() * phi.cos();
            let y = radius * theta.cos();
            let z = radius * theta.sin() * phi.sin();
            v_lines.push_str(&format!("v {x:.9} {y:.9} {z:.9}\n"));
            let u = i as f64 / segments as f64;
            let v = v_lo + (v_hi - v_lo) * j as f64 / rings as f64;
            vt_lines.push_str(&format!("vt {u:.9} {v:.9}\n"));
        }
    }
    let cols = segments + 1;
    for j in 0..rings {
        for i in 0..segments {
            let a = j * cols + i + 1;
            let b = j * cols + i + 2;
            let c = (j + 1) * cols + i + 2;
            let d = (j + 1) * cols + i + 1;
            f_lines.push_str(&format!("f {a}/{a} {b}/{b} {c}/{c}\n"));
            f_lines.push_str(&format!("f {a}/{a} {c}/{c} {d}/{d}\n"));
        }
    }
    format!("{v_lines}{vt_lines}{f_lines}")
}

/// Two concentric spheres sharing one UV atlas: the outer shell occupies
/// v ∈ [0.01, 0.49] and the inner shell v ∈ [0.51, 0.99], separated by a
/// gutter.
pub fn two_shell_obj(r_outer: f64, r_inner: f64, segments: u32, rings: u32) -> String {
    let outer = sphere_obj_uv_band(r_outer, segments, rings, 0.01, 0.49);
    let inner = sphere_obj_uv_band(r_inner, segments, rings, 0.51, 0.99);
    // Re-index the inner shell's faces past the outer shell's elements.
    let offset = ((segments + 1) * (rings + 1)) as usize;
    let mut out = String::new();
    let mut inner_faces = String::new();
    for line in outer.lines() {
        out.push_str(line);
        out.push('\n');
    }
    for line in inner.lines() {
        if let Some(rest) = line.strip_prefix("f ") {
            let mut rebuilt = String::from("f");
            for tok in rest.split_whitespace() {
                let mut parts = tok.split('/');
                let vi: usize = parts.next().unwrap().parse().unwrap();
                let ti: usize = parts.next().unwrap().parse().unwrap();
                rebuilt.push_str(&format!(" {}/{}", vi + offset, ti + offset));
            }
            inner_faces.push_str(&rebuilt);
            inner_faces.push('\n');
        } else {
            out.push_str(line);
            out.push('\n');
        }
    }
    out.push_str(&inner_faces);
    out
}

/// Raw maps with a smooth sinusoidal color pattern, solid opacity, and
/// zero position, scale, and rotation channels. The pattern's phases derive
/// from the seed.
pub fn textured_maps(resolution: u32, color_amp: f64, freq: f64, seed: u64) -> AttributeMaps {
    let mut maps = AttributeMaps::zeros(resolution, resolution);
    let mut lcg = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut phase = || {
        lcg = lcg.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (lcg >> 34) as f64 / (1u64 << 30) as f64 * std::f64::consts::TAU
    };
    let (p0, p1, p2) = (phase(), phase(), phase());
    let r = resolution as usize;
    for y in 0..r {
        for x in 0..r {
            let u = (x as f64 + 0.5) / resolution as f64;
            let v = (y as f64 + 0.5) / resolution as f64;
            let w = std::f64::consts::TAU * freq;
            maps.set(y, x, CH_COLOR, (color_amp * ((w * u + p0).sin() * (w * v).cos())) as f32);
            maps.set(y, x, CH_COLOR + 1, (color_amp * ((w * (u + v) + p1).sin())) as f32);
            maps.set(y, x, CH_COLOR + 2, (color_amp * ((w * v + p2).cos())) as f32);
            maps.set(y, x, CH_OPACITY, 3.0);
        }
    }
    maps
}

/// Set all three raw scale channels to one value.
pub fn set_scale_raw(maps: &mut AttributeMaps, raw: f64) {
    let (h, w) = (maps.height() as usize, maps.width() as usize);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                maps.set(y, x, CH_SCALE + c, raw as f32);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_uv_index, default_grid_cells, parse_obj, sample_uv_grid};

    #[test]
    fn plane_covers_the_whole_grid() {
        let mesh = parse_obj(&plane_obj(0.5)).unwrap();
        let index = build_uv_index(&mesh, default_grid_cells(mesh.face_count()));
        let grid = sample_uv_grid(&index, 16);
        assert_eq!(grid.valid_count(), 256);
    }

    #[test]
    fn sphere_covers_the_whole_grid() {
        let mesh = parse_obj(&sphere_obj(0.5, 24, 16)).unwrap();
        let index = build_uv_index(&mesh, default_grid_cells(mesh.face_count()));
        let grid = sample_uv_grid(&index, 32);
        assert_eq!(grid.valid_count(), 32 * 32);
        // Anchors live on the sphere.
        for uv in grid.valid_coords().take(50) {
            let p = index.uv_to_surface(uv).unwrap().position;
            assert!((p.norm() - 0.5).abs() < 0.03, "|p| = {}", p.norm());
        }
    }

    #[test]
    fn two_shell_charts_map_to_their_radii() {
        let mesh = parse_obj(&two_shell_obj(0.5, 0.35, 16, 12)).unwrap();
        let index = build_uv_index(&mesh, default_grid_cells(mesh.face_count()));
        let outer = index
            .uv_to_surface(nalgebra::Vector2::new(0.5, 0.25))
            .unwrap();
        assert!((outer.position.norm() - 0.5).abs() < 0.03);
        let inner = index
            .uv_to_surface(nalgebra::Vector2::new(0.5, 0.75))
            .unwrap();
        assert!((inner.position.norm() - 0.35).abs() < 0.03);
        // The gutter band separates the charts.
        assert!(index
            .uv_to_surface(nalgebra::Vector2::new(0.5, 0.5))
            .is_none());
    }

    #[test]
    fn textured_maps_are_deterministic_per_seed() {
        let a = textured_maps(8, 2.0, 1.5, 42);
        let b = textured_maps(8, 2.0, 1.5, 42);
        let c = textured_maps(8, 2.0, 1.5, 43);
        assert_eq!(a.data(), b.data());
        assert_ne!(a.data(), c.data());
    }
}
