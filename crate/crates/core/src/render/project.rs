//! Perspective projection of 3D Gaussians to screen-space 2D Gaussians.
//!
//! A Gaussian's world covariance R(q)·diag(s²)·R(q)ᵀ is pushed through the
//! camera rotation and the local affine approximation of the pinhole
//! projection (the Jacobian J), giving a 2x2 screen covariance. A small
//! isotropic dilation keeps the footprint at least a fraction of a pixel
//! wide.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3, Vector4};

use super::camera::Camera;

/// Low-pass dilation added to both cov2d diagonal entries, px².
pub const COV2D_DILATION: f64 = 0.3;
/// Per-sample alpha ceiling.
pub const ALPHA_CLAMP: f64 = 0.99;
/// Contributions below this alpha are skipped.
pub const ALPHA_SKIP: f64 = 1.0 / 255.0;
/// Front-to-back compositing stops once accumulated alpha exceeds this.
pub const ALPHA_SATURATION: f64 = 0.9999;

/// Screen-space footprint of one Gaussian.
#[derive(Debug, Clone, Copy)]
pub struct Projected {
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    pub depth: f64,
}

/// Full projection state kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct SplatDetail {
    pub mean2d: Vector2<f64>,
    pub depth: f64,
    /// cov2d entries (a, b, c) with b the off-diagonal.
    pub cov: (f64, f64, f64),
    /// Inverse covariance entries (conic) in the same layout.
    pub conic: (f64, f64, f64),
    /// Pixel radius beyond which alpha provably falls below the skip
    /// threshold; used for binning and per-pixel inclusion.
    pub radius: f64,
    pub p_view: Vector3<f64>,
    pub jacobian: [[f64; 3]; 2],
    /// View-space 3D covariance W·Σ·Wᵀ.
    pub m_view: Matrix3<f64>,
    pub rot: Matrix3<f64>,
    pub q_unit: Vector4<f64>,
    pub q_norm: f64,
}

/// Rotation matrix of a unit quaternion (w, x, y, z).
pub fn quaternion_to_matrix(q: Vector4<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// ∂R/∂q_k for a unit quaternion, k in {w, x, y, z}.
fn quaternion_matrix_grads(q: Vector4<f64>) -> [Matrix3<f64>; 4] {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    [
        Matrix3::new(0.0, -2.0 * z, 2.0 * y, 2.0 * z, 0.0, -2.0 * x, -2.0 * y, 2.0 * x, 0.0),
        Matrix3::new(
            0.0, 2.0 * y, 2.0 * z, 2.0 * y, -4.0 * x, -2.0 * w, 2.0 * z, 2.0 * w, -4.0 * x,
        ),
        Matrix3::new(
            -4.0 * y, 2.0 * x, 2.0 * w, 2.0 * x, 0.0, 2.0 * z, -2.0 * w, 2.0 * z, -4.0 * y,
        ),
        Matrix3::new(
            -4.0 * z, -2.0 * w, 2.0 * x, 2.0 * w, -4.0 * z, 2.0 * y, 2.0 * x, 2.0 * y, 0.0,
        ),
    ]
}

pub(crate) fn project_detailed(
    position: Vector3<f64>,
    scale: Vector3<f64>,
    rotation: Vector4<f64>,
    opacity: f64,
    cam: &Camera,
) -> Option<SplatDetail> {
    let p = cam.to_view(position);
    if !(p.z >= cam.znear && p.z <= cam.zfar) {
        return None;
    }

    let q_norm = rotation.norm();
    let q_unit = if q_norm == 0.0 {
        Vector4::new(1.0, 0.0, 0.0, 0.0)
    } else {
        rotation / q_norm
    };
    let rot = quaternion_to_matrix(q_unit);
    let sigma3 = rot * Matrix3::from_diagonal(&scale.map(|s| s * s)) * rot.transpose();
    let m_view = cam.rotation * sigma3 * cam.rotation.transpose();

    let iz = 1.0 / p.z;
    let iz2 = iz * iz;
    let jacobian = [
        [cam.fx * iz, 0.0, -cam.fx * p.x * iz2],
        [0.0, cam.fy * iz, -cam.fy * p.y * iz2],
    ];
    // V = J M Jᵀ + dilation·I, built from the 2x3 Jacobian rows.
    let jm = [
        [
            jacobian[0][0] * m_view[(0, 0)] + jacobian[0][1] * m_view[(1, 0)] + jacobian[0][2] * m_view[(2, 0)],
            jacobian[0][0] * m_view[(0, 1)] + jacobian[0][1] * m_view[(1, 1)] + jacobian[0][2] * m_view[(2, 1)],
            jacobian[0][0] * m_view[(0, 2)] + jacobian[0][1] * m_view[(1, 2)] + jacobian[0][2] * m_view[(2, 2)],
        ],
        [
            jacobian[1][0] * m_view[(0, 0)] + jacobian[1][1] * m_view[(1, 0)] + jacobian[1][2] * m_view[(2, 0)],
            jacobian[1][0] * m_view[(0, 1)] + jacobian[1][1] * m_view[(1, 1)] + jacobian[1][2] * m_view[(2, 1)],
            jacobian[1][0] * m_view[(0, 2)] + jacobian[1][1] * m_view[(1, 2)] + jacobian[1][2] * m_view[(2, 2)],
        ],
    ];
    let a = jm[0][0] * jacobian[0][0] + jm[0][1] * jacobian[0][1] + jm[0][2] * jacobian[0][2]
        + COV2D_DILATION;
    let b = jm[0][0] * jacobian[1][0] + jm[0][1] * jacobian[1][1] + jm[0][2] * jacobian[1][2];
    let c = jm[1][0] * jacobian[1][0] + jm[1][1] * jacobian[1][1] + jm[1][2] * jacobian[1][2]
        + COV2D_DILATION;

    let det = a * c - b * b;
    if det <= 0.0 {
        return None;
    }
    let inv_det = 1.0 / det;
    let conic = (c * inv_det, -b * inv_det, a * inv_det);

    let mean2d = Vector2::new(cam.fx * p.x * iz + cam.cx, cam.fy * p.y * iz + cam.cy);

    // Largest screen-space standard deviation.
    let lambda_max = 0.5 * (a + c) + (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let sigma_max = lambda_max.sqrt();

    // Whole-image cull: 3σ footprint entirely off screen.
    let r_cull = 3.0 * sigma_max;
    let (w, h) = (cam.width as f64, cam.height as f64);
    if mean2d.x + r_cull < 0.0
        || mean2d.x - r_cull > w
        || mean2d.y + r_cull < 0.0
        || mean2d.y - r_cull > h
    {
        return None;
    }

    // Influence radius: outside it, alpha is provably below the skip
    // threshold, so the bounding box never changes the composite.
    let ln_term = (opacity / ALPHA_SKIP).ln();
    if !(ln_term > 0.0) {
        return None;
    }
    let radius = (2.0 * ln_term).sqrt() * sigma_max + 1.0;

    Some(SplatDetail {
        mean2d,
        depth: p.z,
        cov: (a, b, c),
        conic,
        radius,
        p_view: p,
        jacobian,
        m_view,
        rot,
        q_unit,
        q_norm,
    })
}

/// Project one Gaussian, or None when it lies outside the depth range or its
/// 3σ footprint misses the image.
pub fn project_gaussian(
    position: Vector3<f64>,
    scale: Vector3<f64>,
    rotation: Vector4<f64>,
    cam: &Camera,
) -> Option<Projected> {
    // Opacity 1.0 disables the influence-radius cull.
    let d = project_detailed(position, scale, rotation, 1.0, cam)?;
    Some(Projected {
        mean2d: d.mean2d,
        cov2d: Matrix2::new(d.cov.0, d.cov.1, d.cov.1, d.cov.2),
        depth: d.depth,
    })
}

/// Per-splat gradient sums accumulated over pixels.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct SplatAccum {
    pub du: f64,
    pub dv: f64,
    pub dconic_a: f64,
    pub dconic_b: f64,
    pub dconic_c: f64,
    pub dopacity: f64,
    pub dcolor: [f64; 3],
}

impl SplatAccum {
    pub fn add(&mut self, o: &SplatAccum) {
        self.du += o.du;
        self.dv += o.dv;
        self.dconic_a += o.dconic_a;
        self.dconic_b += o.dconic_b;
        self.dconic_c += o.dconic_c;
        self.dopacity += o.dopacity;
        for k in 0..3 {
            self.dcolor[k] += o.dcolor[k];
        }
    }
}

/// Gradients of the loss w.r.t. one Gaussian's world-space attributes.
pub(crate) struct ProjectionGrads {
    pub dposition: Vector3<f64>,
    pub dscale: Vector3<f64>,
    pub drotation: Vector4<f64>,
}

/// Pull (mean2d, conic) gradients back to (position, scale, rotation).
pub(crate) fn projection_backward(
    detail: &SplatDetail,
    scale: Vector3<f64>,
    acc: &SplatAccum,
    cam: &Camera,
) -> ProjectionGrads {
    let (a, b, c) = detail.cov;
    let det = a * c - b * b;
    let inv_det2 = 1.0 / (det * det);
    let (g_ia, g_ib, g_ic) = (acc.dconic_a, acc.dconic_b, acc.dconic_c);

    // conic = (c, -b, a)/det; differentiate each entry w.r.t. (a, b, c).
    let da = inv_det2
        * (-c * c * g_ia + b * c * g_ib + (det - a * c) * g_ic);
    let db = inv_det2
        * (2.0 * b * c * g_ia - (det + 2.0 * b * b) * g_ib + 2.0 * a * b * g_ic);
    let dc = inv_det2
        * ((det - a * c) * g_ia + a * b * g_ib - a * a * g_ic);

    // Symmetric gradient matrix for V; the off-diagonal b appears twice.
    let gv = Matrix2::new(da, 0.5 * db, 0.5 * db, dc);

    // V = J M Jᵀ: dM = Jᵀ GV J, dJ = 2 GV J M.
    let j = &detail.jacobian;
    let jmat = nalgebra::Matrix2x3::new(
        j[0][0], j[0][1], j[0][2], j[1][0], j[1][1], j[1][2],
    );
    let dm = jmat.transpose() * gv * jmat;
    let dj = 2.0 * gv * jmat * detail.m_view;

    // M = W Σ Wᵀ: dΣ = Wᵀ dM W.
    let dsigma = cam.rotation.transpose() * dm * cam.rotation;

    // Σ = R D Rᵀ with D = diag(s²).
    let rot = &detail.rot;
    let rtgr = rot.transpose() * dsigma * rot;
    let dscale = Vector3::new(
        2.0 * scale.x * rtgr[(0, 0)],
        2.0 * scale.y * rtgr[(1, 1)],
        2.0 * scale.z * rtgr[(2, 2)],
    );
    let d_diag = Matrix3::from_diagonal(&scale.map(|s| s * s));
    let dr = 2.0 * dsigma * rot * d_diag;
    let rq = quaternion_matrix_grads(detail.q_unit);
    let mut dq_unit = Vector4::zeros();
    for k in 0..4 {
        dq_unit[k] = dr.component_mul(&rq[k]).sum();
    }
    // Through the internal normalization q_unit = q/‖q‖.
    let drotation = if detail.q_norm == 0.0 {
        Vector4::zeros()
    } else {
        (dq_unit - detail.q_unit * detail.q_unit.dot(&dq_unit)) / detail.q_norm
    };

    // Mean gradient: projection u = fx·px/pz + cx, v = fy·py/pz + cy,
    // plus the dependence of J on the view-space point.
    let p = detail.p_view;
    let iz = 1.0 / p.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let mut dp = Vector3::new(
        acc.du * cam.fx * iz,
        acc.dv * cam.fy * iz,
        -acc.du * cam.fx * p.x * iz2 - acc.dv * cam.fy * p.y * iz2,
    );
    // J00 = fx/z, J02 = -fx·x/z², J11 = fy/z, J12 = -fy·y/z².
    dp.x += dj[(0, 2)] * (-cam.fx * iz2);
    dp.y += dj[(1, 2)] * (-cam.fy * iz2);
    dp.z += dj[(0, 0)] * (-cam.fx * iz2)
        + dj[(0, 2)] * (2.0 * cam.fx * p.x * iz3)
        + dj[(1, 1)] * (-cam.fy * iz2)
        + dj[(1, 2)] * (2.0 * cam.fy * p.y * iz3);

    ProjectionGrads {
        dposition: cam.rotation.transpose() * dp,
        dscale,
        drotation,
    }
}
