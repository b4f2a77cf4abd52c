//! File formats: GGUV attribute maps, GGOS optimizer state, PFM and PNG
//! images, camera JSON, and 3DGS-style PLY point clouds.

pub mod gguv;
pub mod pfm;
pub mod ply;
pub mod png;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad file format: {0}")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Png(#[from] image::ImageError),
}

use crate::render::{Camera, CameraJson};
use std::path::Path;

pub fn read_camera_json(path: &Path) -> Result<Camera, IoError> {
    let text = std::fs::read_to_string(path)?;
    let j: CameraJson = serde_json::from_str(&text)?;
    j.try_into()
        .map_err(|e: crate::render::CameraError| IoError::Format(e.to_string()))
}

pub fn write_camera_json(path: &Path, cam: &Camera) -> Result<(), IoError> {
    let j = CameraJson::from(cam);
    std::fs::write(path, serde_json::to_string_pretty(&j)?)?;
    Ok(())
}
