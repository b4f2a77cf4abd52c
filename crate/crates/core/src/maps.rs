//! Raw attribute maps, bilinear lookup, and per-attribute activations.
//!
//! A map stack holds 14 channels of raw (pre-activation) scalars per texel:
//! position offset (3), scale (3), rotation (4), color (3), opacity (1).
//! Gaussians query the maps at their UV coordinate via bilinear
//! interpolation, then each attribute is squashed into its valid domain.
//! All activation math runs in double precision; the maps themselves are
//! stored and optimized in single precision.

use nalgebra::{Vector2, Vector3, Vector4};
use thiserror::Error;

use crate::mesh::{UvChartIndex, UvGrid};

/// Number of channels in a raw attribute map stack.
pub const CHANNELS: usize = 14;
/// Channel layout offsets.
pub const CH_POSITION: usize = 0;
pub const CH_SCALE: usize = 3;
pub const CH_ROTATION: usize = 6;
pub const CH_COLOR: usize = 10;
pub const CH_OPACITY: usize = 13;

#[derive(Debug, Error)]
pub enum MapsError {
    #[error("coordinate ({0}, {1}) outside [0,1]^2")]
    CoordOutOfDomain(f64, f64),
    #[error("raw map value at index {0} is not finite")]
    NonFiniteValue(usize),
    #[error("no valid grid point; cannot assemble Gaussians")]
    EmptyGaussianSet,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// H×W×14 stack of raw attribute scalars, row-major, channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeMaps {
    height: u32,
    width: u32,
    data: Vec<f32>,
}

impl AttributeMaps {
    pub fn zeros(height: u32, width: u32) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height as usize * width as usize * CHANNELS],
        }
    }

    pub fn from_vec(height: u32, width: u32, data: Vec<f32>) -> Result<Self, MapsError> {
        if data.len() != height as usize * width as usize * CHANNELS {
            return Err(MapsError::ShapeMismatch(format!(
                "expected {}x{}x{} = {} values, got {}",
                height,
                width,
                CHANNELS,
                height as usize * width as usize * CHANNELS,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(MapsError::NonFiniteValue(bad));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[inline]
    pub fn idx(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width as usize + x) * CHANNELS + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[self.idx(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, value: f32) {
        let i = self.idx(y, x, c);
        self.data[i] = value;
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// One channel plane as f64 values (used by the map-space regularizers).
    pub fn channel_plane(&self, c0: usize, count: usize) -> Vec<f64> {
        let hw = self.height as usize * self.width as usize;
        let mut out = Vec::with_capacity(hw * count);
        for t in 0..hw {
            for c in 0..count {
                out.push(self.data[t * CHANNELS + c0 + c] as f64);
            }
        }
        out
    }
}

/// Gradients of a scalar loss with respect to every raw map value.
/// Accumulated in double precision.
#[derive(Debug, Clone)]
pub struct MapGradients {
    pub height: u32,
    pub width: u32,
    pub data: Vec<f64>,
}

impl MapGradients {
    pub fn zeros(height: u32, width: u32) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height as usize * width as usize * CHANNELS],
        }
    }

    #[inline]
    pub fn add(&mut self, y: usize, x: usize, c: usize, value: f64) {
        let i = (y * self.width as usize + x) * CHANNELS + c;
        self.data[i] += value;
    }

    pub fn add_assign(&mut self, other: &MapGradients) {
        assert_eq!(self.data.len(), other.data.len(), "gradient shape");
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += *b;
        }
    }
}

/// Constants bounding the activated position offsets and scales.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ActivationConfig {
    /// Maximum position offset from the template anchor, meters.
    pub gamma_pos: f64,
    /// Scales are capped at exp(-s_max).
    pub s_max: f64,
    /// Raw zero activates to roughly exp(-s_init).
    pub s_init: f64,
}

impl Default for ActivationConfig {
    fn default() -> Self {
        Self {
            gamma_pos: 0.25,
            s_max: 3.0,
            s_init: 5.0,
        }
    }
}

impl ActivationConfig {
    pub fn validate(&self) -> Result<(), MapsError> {
        if !(self.gamma_pos > 0.0) {
            return Err(MapsError::ShapeMismatch(
                "gamma_pos must be positive".into(),
            ));
        }
        if !(self.s_max < self.s_init) {
            return Err(MapsError::ShapeMismatch(
                "s_max must be below s_init".into(),
            ));
        }
        Ok(())
    }
}

/// Activated per-Gaussian attributes plus each Gaussian's fixed UV
/// coordinate and template anchor. Structure-of-arrays.
#[derive(Debug, Clone, Default)]
pub struct GaussianSet {
    pub positions: Vec<Vector3<f64>>,
    pub scales: Vec<Vector3<f64>>,
    /// Unit quaternions as (w, x, y, z).
    pub rotations: Vec<Vector4<f64>>,
    pub colors: Vec<Vector3<f64>>,
    pub opacities: Vec<f64>,
    pub uvs: Vec<Vector2<f64>>,
    pub anchors: Vec<Vector3<f64>>,
}

impl GaussianSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Numerically stable ln(1 + e^x).
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic function clamped into the open interval (0, 1).
///
/// The clamp only binds where the exact value is within one ulp of 0 or 1,
/// keeping opacities strictly inside the Beta regularizer's support for
/// arbitrarily large raw inputs.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

#[inline]
fn sigmoid_unclamped(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// μ = v + γ_pos · tanh(raw).
pub fn activate_position(
    raw: Vector3<f64>,
    anchor: Vector3<f64>,
    cfg: &ActivationConfig,
) -> Vector3<f64> {
    anchor + Vector3::new(raw.x.tanh(), raw.y.tanh(), raw.z.tanh()) * cfg.gamma_pos
}

/// d(activated position)/d(raw), per component.
pub fn activate_position_grad(raw: Vector3<f64>, cfg: &ActivationConfig) -> Vector3<f64> {
    Vector3::new(
        cfg.gamma_pos * (1.0 - raw.x.tanh().powi(2)),
        cfg.gamma_pos * (1.0 - raw.y.tanh().powi(2)),
        cfg.gamma_pos * (1.0 - raw.z.tanh().powi(2)),
    )
}

/// s = exp(-s_max - softplus(-(raw - s_init) - s_max)), per component.
///
/// Strictly increasing in raw, bounded by (0, e^{-s_max}]; the result is
/// floored at the smallest positive normal so extreme raw values never
/// collapse a scale to exactly zero.
pub fn activate_scale(raw: Vector3<f64>, cfg: &ActivationConfig) -> Vector3<f64> {
    raw.map(|r| activate_scale_scalar(r, cfg))
}

#[inline]
pub fn activate_scale_scalar(raw: f64, cfg: &ActivationConfig) -> f64 {
    let s = (-cfg.s_max - softplus(-(raw - cfg.s_init) - cfg.s_max)).exp();
    s.max(f64::MIN_POSITIVE)
}

/// d(activated scale)/d(raw) = s · sigmoid(-(raw - s_init) - s_max).
pub fn activate_scale_grad(raw: Vector3<f64>, cfg: &ActivationConfig) -> Vector3<f64> {
    raw.map(|r| {
        let s = activate_scale_scalar(r, cfg);
        s * sigmoid_unclamped(-(r - cfg.s_init) - cfg.s_max)
    })
}

/// L2-normalize into a unit quaternion; a raw zero vector maps to identity.
pub fn activate_rotation(raw: Vector4<f64>) -> Vector4<f64> {
    let n = raw.norm();
    if n == 0.0 {
        Vector4::new(1.0, 0.0, 0.0, 0.0)
    } else {
        raw / n
    }
}

/// Pull an upstream gradient w.r.t. the unit quaternion back to the raw
/// 4-vector: (g - q (q·g)) / ‖raw‖. Zero raw input gets zero gradient.
pub fn activate_rotation_grad(raw: Vector4<f64>, upstream: Vector4<f64>) -> Vector4<f64> {
    let n = raw.norm();
    if n == 0.0 {
        return Vector4::zeros();
    }
    let q = raw / n;
    (upstream - q * q.dot(&upstream)) / n
}

/// σ = sigmoid(raw), strictly inside (0, 1).
#[inline]
pub fn activate_opacity(raw: f64) -> f64 {
    sigmoid(raw)
}

#[inline]
pub fn activate_opacity_grad(raw: f64) -> f64 {
    let s = sigmoid_unclamped(raw);
    s * (1.0 - s)
}

/// Per-channel sigmoid color in [0, 1].
pub fn activate_color(raw: Vector3<f64>) -> Vector3<f64> {
    raw.map(sigmoid_unclamped)
}

pub fn activate_color_grad(raw: Vector3<f64>) -> Vector3<f64> {
    raw.map(|r| {
        let s = sigmoid_unclamped(r);
        s * (1.0 - s)
    })
}

/// The four texels and weights of one bilinear lookup.
///
/// Texel centers sit at ((i+0.5)/W, (j+0.5)/H); coordinates beyond the
/// outermost centers clamp to the edge.
#[derive(Debug, Clone, Copy)]
pub struct BilinearFootprint {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
    /// Weights for (x0,y0), (x1,y0), (x0,y1), (x1,y1); they sum to 1.
    pub w: [f64; 4],
}

pub fn bilinear_footprint(height: u32, width: u32, uv: Vector2<f64>) -> BilinearFootprint {
    let (x0, x1, fx) = axis_footprint(uv.x, width);
    let (y0, y1, fy) = axis_footprint(uv.y, height);
    BilinearFootprint {
        x0,
        x1,
        y0,
        y1,
        w: [
            (1.0 - fx) * (1.0 - fy),
            fx * (1.0 - fy),
            (1.0 - fx) * fy,
            fx * fy,
        ],
    }
}

#[inline]
fn axis_footprint(coord: f64, size: u32) -> (usize, usize, f64) {
    let n = size as f64;
    let x = coord * n - 0.5;
    let i0 = x.floor();
    let frac = x - i0;
    let i0 = i0 as isize;
    let a = i0.clamp(0, size as isize - 1) as usize;
    let b = (i0 + 1).clamp(0, size as isize - 1) as usize;
    (a, b, frac)
}

/// Bilinear lookup of all 14 channels at each coordinate.
pub fn grid_sample(
    maps: &AttributeMaps,
    coords: &[Vector2<f64>],
) -> Result<Vec<[f64; CHANNELS]>, MapsError> {
    let mut out = Vec::with_capacity(coords.len());
    for &uv in coords {
        if !(0.0..=1.0).contains(&uv.x) || !(0.0..=1.0).contains(&uv.y) {
            return Err(MapsError::CoordOutOfDomain(uv.x, uv.y));
        }
        let fp = bilinear_footprint(maps.height(), maps.width(), uv);
        let mut row = [0.0f64; CHANNELS];
        let corners = [
            (fp.y0, fp.x0, fp.w[0]),
            (fp.y0, fp.x1, fp.w[1]),
            (fp.y1, fp.x0, fp.w[2]),
            (fp.y1, fp.x1, fp.w[3]),
        ];
        for (y, x, w) in corners {
            if w == 0.0 {
                continue;
            }
            let base = maps.idx(y, x, 0);
            for c in 0..CHANNELS {
                row[c] += w * maps.data()[base + c] as f64;
            }
        }
        out.push(row);
    }
    Ok(out)
}

/// Scatter per-lookup channel gradients back to the map texels.
pub fn grid_sample_backward(
    maps: &AttributeMaps,
    coords: &[Vector2<f64>],
    row_grads: &[[f64; CHANNELS]],
    out: &mut MapGradients,
) {
    assert_eq!(coords.len(), row_grads.len(), "gradient rows");
    for (&uv, grads) in coords.iter().zip(row_grads.iter()) {
        let fp = bilinear_footprint(maps.height(), maps.width(), uv);
        let corners = [
            (fp.y0, fp.x0, fp.w[0]),
            (fp.y0, fp.x1, fp.w[1]),
            (fp.y1, fp.x0, fp.w[2]),
            (fp.y1, fp.x1, fp.w[3]),
        ];
        for (y, x, w) in corners {
            if w == 0.0 {
                continue;
            }
            for c in 0..CHANNELS {
                out.add(y, x, c, w * grads[c]);
            }
        }
    }
}

/// Raw 14-channel row → activated Gaussian attributes.
fn activate_row(
    row: &[f64; CHANNELS],
    anchor: Vector3<f64>,
    cfg: &ActivationConfig,
) -> (Vector3<f64>, Vector3<f64>, Vector4<f64>, Vector3<f64>, f64) {
    let raw_pos = Vector3::new(row[CH_POSITION], row[CH_POSITION + 1], row[CH_POSITION + 2]);
    let raw_scale = Vector3::new(row[CH_SCALE], row[CH_SCALE + 1], row[CH_SCALE + 2]);
    let raw_rot = Vector4::new(
        row[CH_ROTATION],
        row[CH_ROTATION + 1],
        row[CH_ROTATION + 2],
        row[CH_ROTATION + 3],
    );
    let raw_color = Vector3::new(row[CH_COLOR], row[CH_COLOR + 1], row[CH_COLOR + 2]);
    (
        activate_position(raw_pos, anchor, cfg),
        activate_scale(raw_scale, cfg),
        activate_rotation(raw_rot),
        activate_color(raw_color),
        activate_opacity(row[CH_OPACITY]),
    )
}

/// Instantiate one Gaussian per valid grid point: GridSample the maps at the
/// point's UV coordinate, activate every attribute, and anchor the position
/// to the template surface.
pub fn assemble_gaussians(
    maps: &AttributeMaps,
    grid: &UvGrid,
    index: &UvChartIndex,
    cfg: &ActivationConfig,
) -> Result<GaussianSet, MapsError> {
    cfg.validate()?;
    let coords: Vec<Vector2<f64>> = grid.valid_coords().collect();
    if coords.is_empty() {
        return Err(MapsError::EmptyGaussianSet);
    }
    let rows = grid_sample(maps, &coords)?;

    let mut set = GaussianSet::default();
    set.positions.reserve(coords.len());
    for (uv, row) in coords.iter().zip(rows.iter()) {
        let anchor = index
            .uv_to_surface(*uv)
            .expect("valid grid point must hit a chart")
            .position;
        let (pos, scale, rot, color, opacity) = activate_row(row, anchor, cfg);
        set.positions.push(pos);
        set.scales.push(scale);
        set.rotations.push(rot);
        set.colors.push(color);
        set.opacities.push(opacity);
        set.uvs.push(*uv);
        set.anchors.push(anchor);
    }
    Ok(set)
}

/// Per-Gaussian gradients w.r.t. the activated attributes, in the order
/// produced by [`assemble_gaussians`].
#[derive(Debug, Clone)]
pub struct GaussianGradients {
    pub positions: Vec<Vector3<f64>>,
    pub scales: Vec<Vector3<f64>>,
    pub rotations: Vec<Vector4<f64>>,
    pub colors: Vec<Vector3<f64>>,
    pub opacities: Vec<f64>,
}

impl GaussianGradients {
    pub fn zeros(n: usize) -> Self {
        Self {
            positions: vec![Vector3::zeros(); n],
            scales: vec![Vector3::zeros(); n],
            rotations: vec![Vector4::zeros(); n],
            colors: vec![Vector3::zeros(); n],
            opacities: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn add_assign(&mut self, other: &GaussianGradients) {
        assert_eq!(self.len(), other.len(), "gradient count");
        for i in 0..self.len() {
            self.positions[i] += other.positions[i];
            self.scales[i] += other.scales[i];
            self.rotations[i] += other.rotations[i];
            self.colors[i] += other.colors[i];
            self.opacities[i] += other.opacities[i];
        }
    }
}

/// Chain per-Gaussian attribute gradients through the activations and the
/// bilinear lookup, accumulating into raw map gradients.
pub fn assemble_backward(
    maps: &AttributeMaps,
    grid: &UvGrid,
    cfg: &ActivationConfig,
    grads: &GaussianGradients,
    out: &mut MapGradients,
) -> Result<(), MapsError> {
    let coords: Vec<Vector2<f64>> = grid.valid_coords().collect();
    if coords.len() != grads.len() {
        return Err(MapsError::ShapeMismatch(format!(
            "{} gradients for {} valid grid points",
            grads.len(),
            coords.len()
        )));
    }
    let rows = grid_sample(maps, &coords)?;

    let mut row_grads = vec![[0.0f64; CHANNELS]; coords.len()];
    for i in 0..coords.len() {
        let row = &rows[i];
        let rg = &mut row_grads[i];

        let raw_pos = Vector3::new(row[CH_POSITION], row[CH_POSITION + 1], row[CH_POSITION + 2]);
        let dpos = activate_position_grad(raw_pos, cfg);
        for k in 0..3 {
            rg[CH_POSITION + k] = grads.positions[i][k] * dpos[k];
        }

        let raw_scale = Vector3::new(row[CH_SCALE], row[CH_SCALE + 1], row[CH_SCALE + 2]);
        let dscale = activate_scale_grad(raw_scale, cfg);
        for k in 0..3 {
            rg[CH_SCALE + k] = grads.scales[i][k] * dscale[k];
        }

        let raw_rot = Vector4::new(
            row[CH_ROTATION],
            row[CH_ROTATION + 1],
            row[CH_ROTATION + 2],
            row[CH_ROTATION + 3],
        );
        let drot = activate_rotation_grad(raw_rot, grads.rotations[i]);
        for k in 0..4 {
            rg[CH_ROTATION + k] = drot[k];
        }

        let raw_color = Vector3::new(row[CH_COLOR], row[CH_COLOR + 1], row[CH_COLOR + 2]);
        let dcolor = activate_color_grad(raw_color);
        for k in 0..3 {
            rg[CH_COLOR + k] = grads.colors[i][k] * dcolor[k];
        }

        rg[CH_OPACITY] = grads.opacities[i] * activate_opacity_grad(row[CH_OPACITY]);
    }

    grid_sample_backward(maps, &coords, &row_grads, out);
    Ok(())
}
