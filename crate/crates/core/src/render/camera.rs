//! Pinhole cameras and pose construction.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CameraError {
    #[error("invalid camera: {0}")]
    Invalid(String),
}

/// Pinhole camera: intrinsics in pixels, world-to-camera rigid transform,
/// image size, and the depth range used for culling.
///
/// Camera space follows the usual vision convention: +x right, +y down,
/// +z forward (into the scene). Pixel (px, py) has its center at
/// (px + 0.5, py + 0.5).
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub znear: f64,
    pub zfar: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Camera {
    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(CameraError::Invalid("focal lengths must be positive".into()));
        }
        if !(0.0 < self.znear && self.znear < self.zfar) {
            return Err(CameraError::Invalid(
                "need 0 < znear < zfar".into(),
            ));
        }
        if self.width == 0 || self.height == 0 {
            return Err(CameraError::Invalid("image size must be at least 1x1".into()));
        }
        let det = self.rotation.determinant();
        if (det - 1.0).abs() > 1e-6 {
            return Err(CameraError::Invalid(format!(
                "rotation determinant {det} is not 1"
            )));
        }
        Ok(())
    }

    /// World point into camera space.
    #[inline]
    pub fn to_view(&self, p: Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Camera center in world space.
    pub fn position(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Camera placed at `eye` looking at `target`, with `up` steadying the
    /// roll. Produces a proper rotation with image-y pointing against `up`.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        fx: f64,
        fy: f64,
        width: u32,
        height: u32,
        znear: f64,
        zfar: f64,
    ) -> Self {
        let forward = (target - eye).normalize();
        let down = (forward * forward.dot(&up) - up).normalize();
        let right = down.cross(&forward);
        let rotation = Matrix3::from_rows(&[
            right.transpose(),
            down.transpose(),
            forward.transpose(),
        ]);
        let translation = -(rotation * eye);
        Camera {
            fx,
            fy,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            znear,
            zfar,
            rotation,
            translation,
        }
    }
}

/// JSON wire format: intrinsics plus a 4x4 row-major world-to-camera matrix.
#[derive(Debug, Serialize, Deserialize)]
pub struct CameraJson {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub znear: f64,
    pub zfar: f64,
    pub world_to_camera: [[f64; 4]; 4],
}

impl From<&Camera> for CameraJson {
    fn from(cam: &Camera) -> Self {
        let mut m = [[0.0; 4]; 4];
        for r in 0..3 {
            for c in 0..3 {
                m[r][c] = cam.rotation[(r, c)];
            }
            m[r][3] = cam.translation[r];
        }
        m[3][3] = 1.0;
        CameraJson {
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            width: cam.width,
            height: cam.height,
            znear: cam.znear,
            zfar: cam.zfar,
            world_to_camera: m,
        }
    }
}

impl TryFrom<CameraJson> for Camera {
    type Error = CameraError;

    fn try_from(j: CameraJson) -> Result<Self, CameraError> {
        let m = j.world_to_camera;
        let rotation = Matrix3::new(
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        );
        let cam = Camera {
            fx: j.fx,
            fy: j.fy,
            cx: j.cx,
            cy: j.cy,
            width: j.width,
            height: j.height,
            znear: j.znear,
            zfar: j.zfar,
            rotation,
            translation: Vector3::new(m[0][3], m[1][3], m[2][3]),
        };
        cam.validate()?;
        Ok(cam)
    }
}

/// T cameras on a horizontal circle around `center`, all looking at it.
/// `elevation_deg` lifts the circle above the center's horizontal plane.
pub fn orbit_cameras(
    center: Vector3<f64>,
    radius: f64,
    elevation_deg: f64,
    frames: u32,
    fx: f64,
    width: u32,
    height: u32,
    znear: f64,
    zfar: f64,
) -> Vec<Camera> {
    let phi = elevation_deg.to_radians();
    (0..frames)
        .map(|t| {
            let theta = std::f64::consts::TAU * t as f64 / frames as f64;
            let eye = center
                + Vector3::new(
                    radius * phi.cos() * theta.sin(),
                    radius * phi.sin(),
                    radius * phi.cos() * theta.cos(),
                );
            Camera::look_at(
                eye,
                center,
                Vector3::new(0.0, 1.0, 0.0),
                fx,
                fx,
                width,
                height,
                znear,
                zfar,
            )
        })
        .collect()
}
