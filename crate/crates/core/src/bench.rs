//! Timing harness: per-resolution medians for representation generation,
//! forward rendering, and the backward pass.

use std::time::Instant;

use nalgebra::Vector3;
use serde::Serialize;

use crate::fit::FitError;
use crate::image::ImageBuf;
use crate::maps::{assemble_gaussians, ActivationConfig, AttributeMaps};
use crate::mesh::{sample_uv_grid, UvChartIndex};
use crate::render::{render, render_backward, Camera, RenderMode};

#[derive(Debug, Clone, Serialize)]
pub struct BenchEntry {
    pub resolution: u32,
    pub gaussian_count: usize,
    pub gen_ms: f64,
    pub render_ms: f64,
    pub backward_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub machine: String,
    pub repetitions: u32,
    pub entries: Vec<BenchEntry>,
}

fn median(samples: &mut [f64]) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len();
    if n % 2 == 1 {
        samples[n / 2]
    } else {
        0.5 * (samples[n / 2 - 1] + samples[n / 2])
    }
}

fn machine_descriptor() -> String {
    let cores = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    format!(
        "{} {} ({} logical cores)",
        std::env::consts::OS,
        std::env::consts::ARCH,
        cores
    )
}

/// Time generation, rendering, and the backward pass at each image
/// resolution with a fixed Gaussian count. Two warm-up repetitions per
/// phase are excluded; medians over `repetitions` timed runs are reported.
pub fn run_bench(
    maps: &AttributeMaps,
    index: &UvChartIndex,
    uv_resolution: u32,
    act_cfg: &ActivationConfig,
    resolutions: &[u32],
    repetitions: u32,
) -> Result<BenchReport, FitError> {
    if repetitions < 10 {
        return Err(FitError::InvalidConfig(format!(
            "need at least 10 repetitions, got {repetitions}"
        )));
    }
    if resolutions.is_empty() {
        return Err(FitError::InvalidConfig("no resolutions given".into()));
    }
    let grid = sample_uv_grid(index, uv_resolution);
    let mut entries = Vec::new();
    for &res in resolutions {
        if res == 0 {
            return Err(FitError::InvalidConfig("resolution 0".into()));
        }
        let cam = Camera::look_at(
            Vector3::new(0.0, 0.0, 1.5),
            Vector3::zeros(),
            Vector3::new(0.0, 1.0, 0.0),
            1.2 * res as f64,
            1.2 * res as f64,
            res,
            res,
            0.05,
            20.0,
        );
        let background = [1.0, 1.0, 1.0];
        let set = assemble_gaussians(maps, &grid, index, act_cfg)?;
        let grad_color = ImageBuf::filled(res as usize, res as usize, 3, 1e-3);
        let grad_alpha = ImageBuf::zeros(res as usize, res as usize, 1);

        let mut gen_ms = Vec::with_capacity(repetitions as usize);
        let mut render_ms = Vec::with_capacity(repetitions as usize);
        let mut backward_ms = Vec::with_capacity(repetitions as usize);
        for rep in 0..repetitions + 2 {
            let t0 = Instant::now();
            let fresh = assemble_gaussians(maps, &grid, index, act_cfg)?;
            let t1 = Instant::now();
            let out = render(&fresh, &cam, RenderMode::Color, background)?;
            let t2 = Instant::now();
            let grads = render_backward(
                &fresh,
                &cam,
                RenderMode::Color,
                background,
                &grad_color,
                &grad_alpha,
            )?;
            let t3 = Instant::now();
            std::hint::black_box((&out, &grads));
            if rep >= 2 {
                gen_ms.push((t1 - t0).as_secs_f64() * 1e3);
                render_ms.push((t2 - t1).as_secs_f64() * 1e3);
                backward_ms.push((t3 - t2).as_secs_f64() * 1e3);
            }
        }
        entries.push(BenchEntry {
            resolution: res,
            gaussian_count: set.len(),
            gen_ms: median(&mut gen_ms),
            render_ms: median(&mut render_ms),
            backward_ms: median(&mut backward_ms),
        });
    }
    Ok(BenchReport {
        machine: machine_descriptor(),
        repetitions,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_uv_index, default_grid_cells, parse_obj};
    use crate::synth;

    #[test]
    fn report_has_positive_medians_and_matching_counts() {
        let mesh = parse_obj(&synth::sphere_obj(0.5, 12, 8)).unwrap();
        let index = build_uv_index(&mesh, default_grid_cells(mesh.face_count()));
        let maps = synth::textured_maps(16, 2.0, 1.0, 1);
        let report = run_bench(
            &maps,
            &index,
            16,
            &ActivationConfig::default(),
            &[32, 64],
            10,
        )
        .unwrap();
        assert_eq!(report.entries.len(), 2);
        let grid = sample_uv_grid(&index, 16);
        for e in &report.entries {
            assert_eq!(e.gaussian_count, grid.valid_count());
            assert!(e.gen_ms > 0.0 && e.render_ms > 0.0 && e.backward_ms > 0.0);
        }
        assert_eq!(report.repetitions, 10);
    }

    #[test]
    fn too_few_repetitions_is_an_error() {
        let mesh = parse_obj(&synth::plane_obj(0.5)).unwrap();
        let index = build_uv_index(&mesh, 2);
        let maps = synth::textured_maps(8, 1.0, 1.0, 1);
        assert!(run_bench(
            &maps,
            &index,
            8,
            &ActivationConfig::default(),
            &[32],
            9
        )
        .is_err());
    }
}
