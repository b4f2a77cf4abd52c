//! Generate a self-contained demo scene under ./fixtures: a sphere template,
//! textured reference maps, zero-initialized maps, eight target views with
//! cameras, and a ready-to-run fit config.
//!
//! Run: cargo run --release --example make_fixtures [out_dir]

use std::path::PathBuf;

use nalgebra::Vector3;

use uvsplat::fit::FitConfig;
use uvsplat::io::{gguv, pfm, write_camera_json};
use uvsplat::losses::LossWeights;
use uvsplat::maps::{assemble_gaussians, ActivationConfig, AttributeMaps};
use uvsplat::mesh::{build_uv_index, default_grid_cells, parse_obj, sample_uv_grid};
use uvsplat::render::{orbit_cameras, render, RenderMode};
use uvsplat::synth;

fn main() {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| "fixtures".into());
    std::fs::create_dir_all(&out).expect("create output directory");

    let obj = synth::sphere_obj(0.5, 48, 32);
    let template = out.join("sphere.obj");
    std::fs::write(&template, &obj).unwrap();

    let mesh = parse_obj(&obj).unwrap();
    let index = build_uv_index(&mesh, default_grid_cells(mesh.face_count()));
    let res = 64u32;
    let grid = sample_uv_grid(&index, res);

    let mut reference = synth::textured_maps(res, 2.0, 2.0, 123);
    synth::set_scale_raw(&mut reference, 1.5);
    gguv::write_maps(&out.join("reference.gguv"), &reference).unwrap();
    gguv::write_maps(&out.join("zeros.gguv"), &AttributeMaps::zeros(res, res)).unwrap();

    let act = ActivationConfig::default();
    let set = assemble_gaussians(&reference, &grid, &index, &act).unwrap();
    println!("template: {} faces, {} gaussians", mesh.face_count(), set.len());

    let cams = orbit_cameras(Vector3::zeros(), 1.6, 15.0, 8, 192.0, 128, 128, 0.05, 20.0);
    let mut targets = Vec::new();
    for (i, cam) in cams.iter().enumerate() {
        let img = render(&set, cam, RenderMode::Color, [1.0, 1.0, 1.0])
            .unwrap()
            .color;
        let cam_path = out.join(format!("camera_{i:03}.json"));
        let img_path = out.join(format!("view_{i:03}.pfm"));
        write_camera_json(&cam_path, cam).unwrap();
        pfm::write_pfm(&img_path, &img).unwrap();
        targets.push((cam_path, img_path));
    }

    let fit = FitConfig {
        learning_rate: 0.01,
        iterations: 2000,
        map_resolution: res,
        uv_resolution: res,
        loss_weights: LossWeights {
            lambda_p: 0.1,
            lambda_s: 0.05,
            lambda_o: 1.0,
            lambda_uv: 100.0,
        },
        opacity_enabled_from: Some(0),
        stop_at_psnr: Some(30.0),
        ..FitConfig::default()
    };
    let config = serde_json::json!({
        "template": template,
        "targets": targets
            .iter()
            .map(|(c, i)| serde_json::json!({"camera": c, "image": i}))
            .collect::<Vec<_>>(),
        "background": [1.0, 1.0, 1.0],
        "activation": act,
        "fit": fit,
        "out_maps": out.join("fitted.gguv"),
        "out_history": out.join("history.json"),
        "out_state": out.join("state.ggos"),
    });
    std::fs::write(
        out.join("fit_config.json"),
        serde_json::to_string_pretty(&config).unwrap(),
    )
    .unwrap();
    println!("wrote fixtures to {}", out.display());
    println!("next: uvsplat fit --config {}/fit_config.json", out.display());
}
