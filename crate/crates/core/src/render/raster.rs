//! Tile-based alpha-compositing rasterizer with an analytic backward pass.
//!
//! Gaussians are depth-sorted once per frame (ties broken by index), binned
//! into screen tiles, and composited front-to-back per pixel. The influence
//! bounding box of each splat is wide enough that pixels outside it are
//! provably below the alpha skip threshold, so the output is independent of
//! tile size and worker count. The backward pass replays each pixel's
//! fragment list and walks it back-to-front, so nothing per-fragment is
//! stored between passes; per-tile gradient buffers are reduced in fixed
//! tile order for bitwise reproducibility.

use nalgebra::Vector3;
use rayon::prelude::*;
use thiserror::Error;

use super::camera::{Camera, CameraError};
use super::project::{
    project_detailed, projection_backward, SplatAccum, ALPHA_CLAMP, ALPHA_SATURATION, ALPHA_SKIP,
};
use crate::image::ImageBuf;
use crate::maps::{GaussianGradients, GaussianSet};

pub const DEFAULT_TILE_SIZE: usize = 16;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("background channel {0} = {1} outside [0,1]")]
    InvalidBackground(usize, f64),
    #[error("gradient shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Camera(#[from] CameraError),
}

/// What each Gaussian contributes as "color" during compositing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderMode {
    Color,
    /// Each Gaussian's color is replaced by (u, v, 0), exposing which part
    /// of the template's UV space covers each pixel.
    UvCoords,
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    /// H×W×3 composited color in [0,1] (given in-range inputs).
    pub color: ImageBuf,
    /// H×W accumulated opacity in [0,1].
    pub alpha: ImageBuf,
    /// H×W alpha-weighted expected depth, meters; 0 where nothing rendered.
    pub depth: ImageBuf,
    pub mode: RenderMode,
}

struct RasterSplat {
    orig: u32,
    u: f64,
    v: f64,
    conic: (f64, f64, f64),
    radius: f64,
    depth: f64,
    color: [f64; 3],
    opacity: f64,
}

struct BinnedScene {
    splats: Vec<RasterSplat>,
    tiles_x: usize,
    tiles_y: usize,
    /// Indices into `splats` per tile, front-to-back.
    bins: Vec<Vec<u32>>,
}

fn validate_background(background: [f64; 3]) -> Result<(), RenderError> {
    for (i, b) in background.iter().enumerate() {
        if !(0.0..=1.0).contains(b) {
            return Err(RenderError::InvalidBackground(i, *b));
        }
    }
    Ok(())
}

fn prepare(
    gaussians: &GaussianSet,
    cam: &Camera,
    mode: RenderMode,
    tile_size: usize,
) -> BinnedScene {
    let mut splats: Vec<RasterSplat> = Vec::with_capacity(gaussians.len());
    for i in 0..gaussians.len() {
        let Some(d) = project_detailed(
            gaussians.positions[i],
            gaussians.scales[i],
            gaussians.rotations[i],
            gaussians.opacities[i],
            cam,
        ) else {
            continue;
        };
        let color = match mode {
            RenderMode::Color => [
                gaussians.colors[i].x,
                gaussians.colors[i].y,
                gaussians.colors[i].z,
            ],
            RenderMode::UvCoords => [gaussians.uvs[i].x, gaussians.uvs[i].y, 0.0],
        };
        splats.push(RasterSplat {
            orig: i as u32,
            u: d.mean2d.x,
            v: d.mean2d.y,
            conic: d.conic,
            radius: d.radius,
            depth: d.depth,
            color,
            opacity: gaussians.opacities[i],
        });
    }
    splats.sort_by(|a, b| {
        a.depth
            .partial_cmp(&b.depth)
            .unwrap()
            .then(a.orig.cmp(&b.orig))
    });

    let tiles_x = (cam.width as usize).div_ceil(tile_size);
    let tiles_y = (cam.height as usize).div_ceil(tile_size);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (si, s) in splats.iter().enumerate() {
        let Some((x0, x1, y0, y1)) = pixel_bounds(s, cam.width, cam.height) else {
            continue;
        };
        for ty in y0 / tile_size..=y1 / tile_size {
            for tx in x0 / tile_size..=x1 / tile_size {
                bins[ty * tiles_x + tx].push(si as u32);
            }
        }
    }
    BinnedScene {
        splats,
        tiles_x,
        tiles_y,
        bins,
    }
}

/// Inclusive pixel bounds influenced by a splat, or None if empty.
fn pixel_bounds(s: &RasterSplat, width: u32, height: u32) -> Option<(usize, usize, usize, usize)> {
    let x0 = (s.u - s.radius - 0.5).ceil().max(0.0) as isize;
    let x1 = (s.u + s.radius - 0.5).floor().min(width as f64 - 1.0) as isize;
    let y0 = (s.v - s.radius - 0.5).ceil().max(0.0) as isize;
    let y1 = (s.v + s.radius - 0.5).floor().min(height as f64 - 1.0) as isize;
    if x0 > x1 || y0 > y1 || x1 < 0 || y1 < 0 {
        return None;
    }
    Some((x0 as usize, x1 as usize, y0 as usize, y1 as usize))
}

/// Render with the default tile size.
pub fn render(
    gaussians: &GaussianSet,
    cam: &Camera,
    mode: RenderMode,
    background: [f64; 3],
) -> Result<RenderOutput, RenderError> {
    render_with_tile_size(gaussians, cam, mode, background, DEFAULT_TILE_SIZE)
}

/// Render with an explicit tile size. Output is identical for any tile size;
/// the parameter exists so tests can assert exactly that.
pub fn render_with_tile_size(
    gaussians: &GaussianSet,
    cam: &Camera,
    mode: RenderMode,
    background: [f64; 3],
    tile_size: usize,
) -> Result<RenderOutput, RenderError> {
    assert!(tile_size >= 1);
    cam.validate()?;
    validate_background(background)?;

    let scene = prepare(gaussians, cam, mode, tile_size);
    let (w, h) = (cam.width as usize, cam.height as usize);
    let mut color = ImageBuf::zeros(h, w, 3);
    let mut alpha = ImageBuf::zeros(h, w, 1);
    let mut depth = ImageBuf::zeros(h, w, 1);

    let band = tile_size * w;
    let color_bands = color.data_mut().par_chunks_mut(band * 3);
    let alpha_bands = alpha.data_mut().par_chunks_mut(band);
    let depth_bands = depth.data_mut().par_chunks_mut(band);

    color_bands
        .zip(alpha_bands)
        .zip(depth_bands)
        .enumerate()
        .for_each(|(ty, ((cband, aband), dband))| {
            let y_start = ty * tile_size;
            let rows = (h - y_start).min(tile_size);
            for tx in 0..scene.tiles_x {
                let list = &scene.bins[ty * scene.tiles_x + tx];
                let x_start = tx * tile_size;
                let cols = (w - x_start).min(tile_size);
                for ry in 0..rows {
                    let py = y_start + ry;
                    for cx in 0..cols {
                        let px = x_start + cx;
                        let (rgb, a, d) = composite_pixel(&scene.splats, list, px, py, background);
                        let ci = (ry * w + px) * 3;
                        cband[ci] = rgb[0];
                        cband[ci + 1] = rgb[1];
                        cband[ci + 2] = rgb[2];
                        aband[ry * w + px] = a;
                        dband[ry * w + px] = d;
                    }
                }
            }
        });

    Ok(RenderOutput {
        color,
        alpha,
        depth,
        mode,
    })
}

/// Front-to-back composite of one pixel. Returns (color, alpha, depth).
#[inline]
fn composite_pixel(
    splats: &[RasterSplat],
    list: &[u32],
    px: usize,
    py: usize,
    background: [f64; 3],
) -> ([f64; 3], f64, f64) {
    let cx = px as f64 + 0.5;
    let cy = py as f64 + 0.5;
    let mut transmittance = 1.0f64;
    let mut rgb = [0.0f64; 3];
    let mut wsum = 0.0f64;
    let mut dsum = 0.0f64;
    for &si in list {
        let s = &splats[si as usize];
        let dx = cx - s.u;
        let dy = cy - s.v;
        if dx.abs() > s.radius || dy.abs() > s.radius {
            continue;
        }
        let power = -0.5 * (s.conic.0 * dx * dx + s.conic.2 * dy * dy) - s.conic.1 * dx * dy;
        let g = power.exp();
        let a = (s.opacity * g).min(ALPHA_CLAMP);
        if a < ALPHA_SKIP {
            continue;
        }
        let wgt = a * transmittance;
        rgb[0] += wgt * s.color[0];
        rgb[1] += wgt * s.color[1];
        rgb[2] += wgt * s.color[2];
        wsum += wgt;
        dsum += wgt * s.depth;
        transmittance *= 1.0 - a;
        if 1.0 - transmittance > ALPHA_SATURATION {
            break;
        }
    }
    for k in 0..3 {
        rgb[k] += transmittance * background[k];
    }
    let depth = if wsum > 0.0 { dsum / wsum } else { 0.0 };
    (rgb, 1.0 - transmittance, depth)
}

/// One composited fragment of the backward replay.
#[derive(Clone, Copy)]
struct Fragment {
    list_pos: u32,
    alpha: f64,
    gauss: f64,
    dx: f64,
    dy: f64,
    t_before: f64,
    clamped: bool,
}

/// Gradients of `sum(grad_color ⊙ color) + sum(grad_alpha ⊙ alpha)` with
/// respect to every Gaussian attribute. Culled Gaussians get zeros; in
/// UV mode the color slot stays zero because the composited "colors" are
/// the Gaussians' fixed UV coordinates.
pub fn render_backward(
    gaussians: &GaussianSet,
    cam: &Camera,
    mode: RenderMode,
    background: [f64; 3],
    grad_color: &ImageBuf,
    grad_alpha: &ImageBuf,
) -> Result<GaussianGradients, RenderError> {
    cam.validate()?;
    validate_background(background)?;
    let (w, h) = (cam.width as usize, cam.height as usize);
    if grad_color.height() != h || grad_color.width() != w || grad_color.channels() != 3 {
        return Err(RenderError::ShapeMismatch(format!(
            "grad_color is {}x{}x{}, camera is {}x{}x3",
            grad_color.height(),
            grad_color.width(),
            grad_color.channels(),
            h,
            w
        )));
    }
    if grad_alpha.height() != h || grad_alpha.width() != w || grad_alpha.channels() != 1 {
        return Err(RenderError::ShapeMismatch(format!(
            "grad_alpha is {}x{}x{}, camera is {}x{}x1",
            grad_alpha.height(),
            grad_alpha.width(),
            grad_alpha.channels(),
            h,
            w
        )));
    }

    let tile_size = DEFAULT_TILE_SIZE;
    let scene = prepare(gaussians, cam, mode, tile_size);
    let n_tiles = scene.tiles_x * scene.tiles_y;

    // Per-tile accumulators, computed in parallel, reduced in tile order.
    let tile_accums: Vec<Vec<SplatAccum>> = (0..n_tiles)
        .into_par_iter()
        .map(|tile| {
            let list = &scene.bins[tile];
            let mut acc = vec![SplatAccum::default(); list.len()];
            if list.is_empty() {
                return acc;
            }
            let ty = tile / scene.tiles_x;
            let tx = tile % scene.tiles_x;
            let y_start = ty * tile_size;
            let x_start = tx * tile_size;
            let rows = (h - y_start).min(tile_size);
            let cols = (w - x_start).min(tile_size);
            let mut fragments: Vec<Fragment> = Vec::with_capacity(list.len());
            for ry in 0..rows {
                let py = y_start + ry;
                for cx in 0..cols {
                    let px = x_start + cx;
                    backward_pixel(
                        &scene.splats,
                        list,
                        px,
                        py,
                        background,
                        grad_color.pixel(py, px),
                        grad_alpha.get(py, px, 0),
                        &mut fragments,
                        &mut acc,
                    );
                }
            }
            acc
        })
        .collect();

    let mut global = vec![SplatAccum::default(); scene.splats.len()];
    for (tile, accs) in tile_accums.iter().enumerate() {
        for (k, &si) in scene.bins[tile].iter().enumerate() {
            global[si as usize].add(&accs[k]);
        }
    }

    let mut grads = GaussianGradients::zeros(gaussians.len());
    for (s, acc) in scene.splats.iter().zip(global.iter()) {
        let i = s.orig as usize;
        let detail = project_detailed(
            gaussians.positions[i],
            gaussians.scales[i],
            gaussians.rotations[i],
            gaussians.opacities[i],
            cam,
        )
        .expect("splat was projectable in forward");
        let proj = projection_backward(&detail, gaussians.scales[i], acc, cam);
        grads.positions[i] = proj.dposition;
        grads.scales[i] = proj.dscale;
        grads.rotations[i] = proj.drotation;
        grads.opacities[i] = acc.dopacity;
        if mode == RenderMode::Color {
            grads.colors[i] = Vector3::new(acc.dcolor[0], acc.dcolor[1], acc.dcolor[2]);
        }
    }
    Ok(grads)
}

/// Replay one pixel front-to-back, then walk the fragments back-to-front
/// accumulating gradients.
#[allow(clippy::too_many_arguments)]
#[inline]
fn backward_pixel(
    splats: &[RasterSplat],
    list: &[u32],
    px: usize,
    py: usize,
    background: [f64; 3],
    g_color: &[f64],
    g_alpha: f64,
    fragments: &mut Vec<Fragment>,
    acc: &mut [SplatAccum],
) {
    let cx = px as f64 + 0.5;
    let cy = py as f64 + 0.5;
    fragments.clear();
    let mut transmittance = 1.0f64;
    for (pos, &si) in list.iter().enumerate() {
        let s = &splats[si as usize];
        let dx = cx - s.u;
        let dy = cy - s.v;
        if dx.abs() > s.radius || dy.abs() > s.radius {
            continue;
        }
        let power = -0.5 * (s.conic.0 * dx * dx + s.conic.2 * dy * dy) - s.conic.1 * dx * dy;
        let g = power.exp();
        let raw = s.opacity * g;
        let a = raw.min(ALPHA_CLAMP);
        if a < ALPHA_SKIP {
            continue;
        }
        fragments.push(Fragment {
            list_pos: pos as u32,
            alpha: a,
            gauss: g,
            dx,
            dy,
            t_before: transmittance,
            clamped: raw > ALPHA_CLAMP,
        });
        transmittance *= 1.0 - a;
        if 1.0 - transmittance > ALPHA_SATURATION {
            break;
        }
    }
    // Suffix sums start from the background term.
    let t_end = transmittance;
    let mut suffix = [
        t_end * background[0],
        t_end * background[1],
        t_end * background[2],
    ];
    let mut suffix_alpha = 0.0f64;
    for f in fragments.iter().rev() {
        let s = &splats[list[f.list_pos as usize] as usize];
        let one_minus = 1.0 - f.alpha;
        let wgt = f.alpha * f.t_before;

        let mut d_alpha = g_alpha * (f.t_before - suffix_alpha / one_minus);
        for k in 0..3 {
            d_alpha += g_color[k] * (f.t_before * s.color[k] - suffix[k] / one_minus);
        }

        let a = &mut acc[f.list_pos as usize];
        for k in 0..3 {
            a.dcolor[k] += g_color[k] * wgt;
            suffix[k] += wgt * s.color[k];
        }
        suffix_alpha += wgt;

        if f.clamped {
            continue;
        }
        a.dopacity += d_alpha * f.gauss;
        let d_gauss = d_alpha * s.opacity;
        let d_power = d_gauss * f.gauss;
        a.dconic_a += d_power * (-0.5 * f.dx * f.dx);
        a.dconic_b += d_power * (-f.dx * f.dy);
        a.dconic_c += d_power * (-0.5 * f.dy * f.dy);
        let ddx = d_power * (-(s.conic.0 * f.dx + s.conic.1 * f.dy));
        let ddy = d_power * (-(s.conic.1 * f.dx + s.conic.2 * f.dy));
        a.du -= ddx;
        a.dv -= ddy;
    }
}

/// Forward-only depth and camera-space normal maps.
///
/// Normals come from central differences of the back-projected depth and are
/// zero wherever the pixel or one of its four neighbors has alpha below 0.5,
/// and on the image border.
pub fn render_depth_normals(
    gaussians: &GaussianSet,
    cam: &Camera,
) -> Result<(ImageBuf, ImageBuf), RenderError> {
    let out = render(gaussians, cam, RenderMode::Color, [0.0, 0.0, 0.0])?;
    let (w, h) = (cam.width as usize, cam.height as usize);
    let mut normals = ImageBuf::zeros(h, w, 3);

    let back_project = |x: usize, y: usize| -> Vector3<f64> {
        let d = out.depth.get(y, x, 0);
        Vector3::new(
            (x as f64 + 0.5 - cam.cx) * d / cam.fx,
            (y as f64 + 0.5 - cam.cy) * d / cam.fy,
            d,
        )
    };
    let solid = |x: usize, y: usize| out.alpha.get(y, x, 0) >= 0.5;

    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            if !(solid(x, y) && solid(x - 1, y) && solid(x + 1, y) && solid(x, y - 1) && solid(x, y + 1))
            {
                continue;
            }
            let dh = back_project(x + 1, y) - back_project(x - 1, y);
            let dv = back_project(x, y + 1) - back_project(x, y - 1);
            let n = dv.cross(&dh);
            let norm = n.norm();
            if norm > 0.0 {
                let n = n / norm;
                normals.set(y, x, 0, n.x);
                normals.set(y, x, 1, n.y);
                normals.set(y, x, 2, n.z);
            }
        }
    }
    Ok((out.depth, normals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::GaussianSet;
    use approx::assert_relative_eq;
    use nalgebra::{Matrix3, Vector2, Vector4};

    fn test_camera(size: u32) -> Camera {
        Camera {
            fx: size as f64 * 1.5,
            fy: size as f64 * 1.5,
            cx: size as f64 / 2.0,
            cy: size as f64 / 2.0,
            width: size,
            height: size,
            znear: 0.1,
            zfar: 10.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    fn single_gaussian(opacity_raw_target: f64, color: [f64; 3]) -> GaussianSet {
        // Large enough on screen that the center pixel sees G ≈ 1.
        GaussianSet {
            positions: vec![Vector3::new(0.0, 0.0, 1.0)],
            scales: vec![Vector3::new(0.3, 0.3, 0.3)],
            rotations: vec![Vector4::new(1.0, 0.0, 0.0, 0.0)],
            colors: vec![Vector3::new(color[0], color[1], color[2])],
            opacities: vec![opacity_raw_target],
            uvs: vec![Vector2::new(0.3, 0.7)],
            anchors: vec![Vector3::zeros()],
        }
    }

    #[test]
    fn empty_scene_is_background() {
        let cam = test_camera(8);
        let out = render(&GaussianSet::default(), &cam, RenderMode::Color, [0.2, 0.4, 0.6])
            .unwrap();
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(out.color.pixel(y, x), &[0.2, 0.4, 0.6]);
                assert_eq!(out.alpha.get(y, x, 0), 0.0);
                assert_eq!(out.depth.get(y, x, 0), 0.0);
            }
        }
    }

    #[test]
    fn invalid_background_is_rejected() {
        let cam = test_camera(8);
        assert!(matches!(
            render(&GaussianSet::default(), &cam, RenderMode::Color, [0.0, 1.5, 0.0]),
            Err(RenderError::InvalidBackground(1, _))
        ));
    }

    #[test]
    fn single_opaque_gaussian_shines_through_one_percent() {
        // Opacity chosen far into the clamp: center alpha = 0.99.
        let cam = test_camera(33);
        let set = single_gaussian(0.9999999, [0.0, 0.0, 0.0]);
        let out = render(&set, &cam, RenderMode::Color, [1.0, 1.0, 1.0]).unwrap();
        let c = out.color.pixel(16, 16);
        for k in 0..3 {
            assert_relative_eq!(c[k], 0.01, max_relative = 1e-9);
        }
        assert_relative_eq!(out.alpha.get(16, 16, 0), 0.99, max_relative = 1e-9);
        assert_relative_eq!(out.depth.get(16, 16, 0), 1.0, max_relative = 1e-9);
    }

    #[test]
    fn two_gaussian_composite_matches_hand_computation() {
        let cam = test_camera(33);
        let mut set = single_gaussian(0.6, [1.0, 0.0, 0.0]);
        set.positions.push(Vector3::new(0.0, 0.0, 2.0));
        set.scales.push(Vector3::new(0.6, 0.6, 0.6));
        set.rotations.push(Vector4::new(1.0, 0.0, 0.0, 0.0));
        set.colors.push(Vector3::new(0.0, 1.0, 0.0));
        set.opacities.push(0.8);
        set.uvs.push(Vector2::new(0.5, 0.5));
        set.anchors.push(Vector3::zeros());

        let out = render(&set, &cam, RenderMode::Color, [0.0, 0.0, 1.0]).unwrap();
        // Alphas at the exact center: G = 1 only at the pixel center if the
        // mean lands there; compute the same way the renderer does.
        let d1 = project_detailed(set.positions[0], set.scales[0], set.rotations[0], 1.0, &cam)
            .unwrap();
        let d2 = project_detailed(set.positions[1], set.scales[1], set.rotations[1], 1.0, &cam)
            .unwrap();
        let eval = |d: &crate::render::project::SplatDetail, op: f64| {
            let dx = 16.5 - d.mean2d.x;
            let dy = 16.5 - d.mean2d.y;
            let p = -0.5 * (d.conic.0 * dx * dx + d.conic.2 * dy * dy) - d.conic.1 * dx * dy;
            (op * p.exp()).min(ALPHA_CLAMP)
        };
        let a1 = eval(&d1, 0.6);
        let a2 = eval(&d2, 0.8);
        let expect_r = a1 * 1.0;
        let expect_g = (1.0 - a1) * a2 * 1.0;
        let expect_b = (1.0 - a1) * (1.0 - a2) * 1.0;
        let c = out.color.pixel(16, 16);
        assert_relative_eq!(c[0], expect_r, max_relative = 1e-12);
        assert_relative_eq!(c[1], expect_g, max_relative = 1e-12);
        assert_relative_eq!(c[2], expect_b, max_relative = 1e-12);

        // Swapping the two depths (keeping everything else) changes which
        // color wins the front of the composite.
        let mut swapped = set.clone();
        swapped.positions.swap(0, 1);
        let out2 = render(&swapped, &cam, RenderMode::Color, [0.0, 0.0, 1.0]).unwrap();
        assert!(out2.color.max_abs_diff(&out.color) > 1e-3);
    }

    #[test]
    fn permuting_input_order_does_not_change_output() {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let cam = test_camera(32);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let set = random_scene(&mut rng, 12);
        let base = render(&set, &cam, RenderMode::Color, [1.0, 1.0, 1.0]).unwrap();

        let mut order: Vec<usize> = (0..set.len()).collect();
        order.shuffle(&mut rng);
        let permuted = GaussianSet {
            positions: order.iter().map(|&i| set.positions[i]).collect(),
            scales: order.iter().map(|&i| set.scales[i]).collect(),
            rotations: order.iter().map(|&i| set.rotations[i]).collect(),
            colors: order.iter().map(|&i| set.colors[i]).collect(),
            opacities: order.iter().map(|&i| set.opacities[i]).collect(),
            uvs: order.iter().map(|&i| set.uvs[i]).collect(),
            anchors: order.iter().map(|&i| set.anchors[i]).collect(),
        };
        let out = render(&permuted, &cam, RenderMode::Color, [1.0, 1.0, 1.0]).unwrap();
        assert!(out.color.max_abs_diff(&base.color) < 1e-6);
        assert!(out.alpha.max_abs_diff(&base.alpha) < 1e-6);
    }

    fn random_scene(rng: &mut impl rand::Rng, n: usize) -> GaussianSet {
        let mut set = GaussianSet::default();
        for _ in 0..n {
            set.positions.push(Vector3::new(
                rng.gen_range(-0.25..0.25),
                rng.gen_range(-0.25..0.25),
                rng.gen_range(0.7..2.5),
            ));
            set.scales.push(Vector3::new(
                rng.gen_range(0.01..0.08),
                rng.gen_range(0.01..0.08),
                rng.gen_range(0.01..0.08),
            ));
            let q = Vector4::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            set.rotations.push(q / q.norm());
            set.colors.push(Vector3::new(
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
            ));
            set.opacities.push(rng.gen_range(0.2..0.95));
            set.uvs
                .push(Vector2::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)));
            set.anchors.push(Vector3::zeros());
        }
        set
    }

    #[test]
    fn alpha_stays_in_unit_interval_and_background_is_linear() {
        use rand::SeedableRng;
        let cam = test_camera(24);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..5 {
            let set = random_scene(&mut rng, 20);
            let black = render(&set, &cam, RenderMode::Color, [0.0, 0.0, 0.0]).unwrap();
            let bg = [0.3, 0.5, 0.9];
            let tinted = render(&set, &cam, RenderMode::Color, bg).unwrap();
            for y in 0..24 {
                for x in 0..24 {
                    let a = black.alpha.get(y, x, 0);
                    assert!((0.0..=1.0).contains(&a));
                    for k in 0..3 {
                        let lin = black.color.get(y, x, k) + (1.0 - a) * bg[k];
                        assert_relative_eq!(tinted.color.get(y, x, k), lin, epsilon = 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn uv_mode_overrides_colors_but_not_alpha() {
        let cam = test_camera(32);
        let set = single_gaussian(0.7, [0.1, 0.9, 0.4]);
        let color = render(&set, &cam, RenderMode::Color, [1.0, 1.0, 1.0]).unwrap();
        let uv = render(&set, &cam, RenderMode::UvCoords, [1.0, 1.0, 1.0]).unwrap();
        assert_eq!(uv.alpha.max_abs_diff(&color.alpha), 0.0);
        // Center pixel: alpha-blend of (u, v, 0) with white.
        let a = uv.alpha.get(16, 16, 0);
        let expect = [
            a * 0.3 + (1.0 - a),
            a * 0.7 + (1.0 - a),
            (1.0 - a),
        ];
        let c = uv.color.pixel(16, 16);
        for k in 0..3 {
            assert_relative_eq!(c[k], expect[k], max_relative = 1e-12);
        }
    }

    #[test]
    fn output_is_independent_of_tile_size() {
        use rand::SeedableRng;
        let cam = test_camera(40);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let set = random_scene(&mut rng, 30);
        let r8 = render_with_tile_size(&set, &cam, RenderMode::Color, [0.5, 0.5, 0.5], 8).unwrap();
        let r16 = render_with_tile_size(&set, &cam, RenderMode::Color, [0.5, 0.5, 0.5], 16).unwrap();
        let r32 = render_with_tile_size(&set, &cam, RenderMode::Color, [0.5, 0.5, 0.5], 32).unwrap();
        assert_eq!(r8.color.max_abs_diff(&r16.color), 0.0);
        assert_eq!(r16.color.max_abs_diff(&r32.color), 0.0);
        assert_eq!(r8.alpha.max_abs_diff(&r32.alpha), 0.0);
        assert_eq!(r8.depth.max_abs_diff(&r32.depth), 0.0);
    }

    #[test]
    fn render_is_deterministic_across_thread_counts() {
        use rand::SeedableRng;
        let cam = test_camera(40);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let set = random_scene(&mut rng, 25);
        let grad_c = ImageBuf::filled(40, 40, 3, 0.37);
        let grad_a = ImageBuf::filled(40, 40, 1, -0.21);

        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                let out = render(&set, &cam, RenderMode::Color, [1.0, 1.0, 1.0]).unwrap();
                let g = render_backward(
                    &set,
                    &cam,
                    RenderMode::Color,
                    [1.0, 1.0, 1.0],
                    &grad_c,
                    &grad_a,
                )
                .unwrap();
                (out, g)
            })
        };
        let (o1, g1) = run(1);
        let (o4, g4) = run(4);
        assert_eq!(o1.color.data(), o4.color.data());
        assert_eq!(o1.alpha.data(), o4.alpha.data());
        for i in 0..g1.len() {
            assert_eq!(g1.positions[i], g4.positions[i]);
            assert_eq!(g1.scales[i], g4.scales[i]);
            assert_eq!(g1.rotations[i], g4.rotations[i]);
            assert_eq!(g1.colors[i], g4.colors[i]);
            assert_eq!(g1.opacities[i], g4.opacities[i]);
        }
    }

    #[test]
    fn zero_upstream_gradients_give_zero_attribute_gradients() {
        let cam = test_camera(16);
        let set = single_gaussian(0.5, [0.5, 0.5, 0.5]);
        let g = render_backward(
            &set,
            &cam,
            RenderMode::Color,
            [0.0, 0.0, 0.0],
            &ImageBuf::zeros(16, 16, 3),
            &ImageBuf::zeros(16, 16, 1),
        )
        .unwrap();
        assert_eq!(g.positions[0], Vector3::zeros());
        assert_eq!(g.scales[0], Vector3::zeros());
        assert_eq!(g.rotations[0], Vector4::zeros());
        assert_eq!(g.colors[0], Vector3::zeros());
        assert_eq!(g.opacities[0], 0.0);
    }

    #[test]
    fn unit_color_gradient_on_center_pixel_returns_alpha() {
        let cam = test_camera(33);
        let set = single_gaussian(0.6, [0.2, 0.3, 0.4]);
        let mut grad_c = ImageBuf::zeros(33, 33, 3);
        grad_c.set(16, 16, 0, 1.0);
        let g = render_backward(
            &set,
            &cam,
            RenderMode::Color,
            [0.0, 0.0, 0.0],
            &grad_c,
            &ImageBuf::zeros(33, 33, 1),
        )
        .unwrap();
        let out = render(&set, &cam, RenderMode::Color, [0.0, 0.0, 0.0]).unwrap();
        assert_relative_eq!(g.colors[0].x, out.alpha.get(16, 16, 0), max_relative = 1e-12);
        assert_eq!(g.colors[0].y, 0.0);
        assert_eq!(g.colors[0].z, 0.0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let cam = test_camera(16);
        let set = single_gaussian(0.5, [0.5, 0.5, 0.5]);
        assert!(matches!(
            render_backward(
                &set,
                &cam,
                RenderMode::Color,
                [0.0, 0.0, 0.0],
                &ImageBuf::zeros(8, 16, 3),
                &ImageBuf::zeros(16, 16, 1),
            ),
            Err(RenderError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn backward_matches_finite_differences_on_small_scene() {
        use rand::{Rng, SeedableRng};
        let cam = test_camera(24);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let set = random_scene(&mut rng, 6);
        let mut grad_c = ImageBuf::zeros(24, 24, 3);
        let mut grad_a = ImageBuf::zeros(24, 24, 1);
        for v in grad_c.data_mut().iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        for v in grad_a.data_mut().iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let bg = [1.0, 1.0, 1.0];
        let loss = |s: &GaussianSet| -> f64 {
            let out = render(s, &cam, RenderMode::Color, bg).unwrap();
            let mut total = 0.0;
            for (c, g) in out.color.data().iter().zip(grad_c.data().iter()) {
                total += c * g;
            }
            for (a, g) in out.alpha.data().iter().zip(grad_a.data().iter()) {
                total += a * g;
            }
            total
        };
        let grads =
            render_backward(&set, &cam, RenderMode::Color, bg, &grad_c, &grad_a).unwrap();

        let h = 1e-5;
        let mut checked = 0usize;
        for i in 0..set.len() {
            for k in 0..3 {
                let mut plus = set.clone();
                plus.positions[i][k] += h;
                let mut minus = set.clone();
                minus.positions[i][k] -= h;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let g = grads.positions[i][k];
                if g.abs() > 1e-5 {
                    assert_relative_eq!(g, fd, max_relative = 2e-3, epsilon = 1e-6);
                    checked += 1;
                }
            }
            let mut plus = set.clone();
            plus.opacities[i] += h;
            let mut minus = set.clone();
            minus.opacities[i] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let g = grads.opacities[i];
            if g.abs() > 1e-5 {
                assert_relative_eq!(g, fd, max_relative = 2e-3, epsilon = 1e-6);
                checked += 1;
            }
        }
        assert!(checked > 10, "finite-difference check exercised {checked} partials");
    }

    #[test]
    fn depth_normals_of_fronto_parallel_sheet_point_at_camera() {
        // A wall of overlapping opaque Gaussians at z = 2.
        let cam = test_camera(48);
        let mut set = GaussianSet::default();
        for gy in -6..=6 {
            for gx in -6..=6 {
                set.positions
                    .push(Vector3::new(gx as f64 * 0.08, gy as f64 * 0.08, 2.0));
                set.scales.push(Vector3::new(0.06, 0.06, 0.01));
                set.rotations.push(Vector4::new(1.0, 0.0, 0.0, 0.0));
                set.colors.push(Vector3::new(0.8, 0.8, 0.8));
                set.opacities.push(0.95);
                set.uvs.push(Vector2::new(0.5, 0.5));
                set.anchors.push(Vector3::zeros());
            }
        }
        let (depth, normals) = render_depth_normals(&set, &cam).unwrap();
        let n = normals.pixel(24, 24);
        assert!((n[0]).abs() < 0.05 && (n[1]).abs() < 0.05);
        assert!((n[2] + 1.0).abs() < 0.05, "normal z = {}", n[2]);
        assert_relative_eq!(depth.get(24, 24, 0), 2.0, max_relative = 1e-2);

        let (_, empty_normals) =
            render_depth_normals(&GaussianSet::default(), &cam).unwrap();
        assert!(empty_normals.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_gaussian_depth_is_its_distance() {
        let cam = test_camera(33);
        let mut set = single_gaussian(0.9, [1.0, 1.0, 1.0]);
        set.positions[0].z = 1.7;
        let (depth, _) = render_depth_normals(&set, &cam).unwrap();
        assert!((depth.get(16, 16, 0) - 1.7).abs() < 1e-3);
    }
}
