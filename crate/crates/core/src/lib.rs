//! Template-rigged UV-space Gaussian splatting.
//!
//! A triangle template mesh with a UV layout anchors a set of 3D Gaussians.
//! Raw per-Gaussian attributes live in 14-channel UV maps that are sampled
//! bilinearly, activated into valid ranges, and rendered by a differentiable
//! tile-based CPU rasterizer. Regularization losses (position, scale, Beta
//! opacity, and total variation on alpha-unblended UV renderings) and an
//! Adam-based inverse-rendering fitter exercise the full gradient chain from
//! pixels back to map texels.

pub mod bench;
pub mod fit;
pub mod image;
pub mod io;
pub mod losses;
pub mod maps;
pub mod mesh;
pub mod metrics;
pub mod render;
pub mod synth;

pub use image::ImageBuf;
pub use maps::{ActivationConfig, AttributeMaps, GaussianSet};
pub use mesh::{build_uv_index, parse_obj, sample_uv_grid, TemplateMesh, UvChartIndex, UvGrid};
pub use render::{Camera, RenderMode, RenderOutput};
