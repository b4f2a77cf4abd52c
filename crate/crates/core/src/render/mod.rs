//! Differentiable splatting renderer: camera model, projection, and the
//! tile-based rasterizer.

pub mod camera;
pub mod project;
pub mod raster;

pub use camera::{orbit_cameras, Camera, CameraError, CameraJson};
pub use project::{project_gaussian, Projected};
pub use raster::{
    render, render_backward, render_depth_normals, render_with_tile_size, RenderError, RenderMode,
    RenderOutput,
};
