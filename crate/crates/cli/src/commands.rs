//! Subcommand implementations and their argument/config types.

use std::path::{Path, PathBuf};

use clap::Args;
use nalgebra::Vector3;
use serde::Deserialize;

use uvsplat::fit::{fit_maps, FitConfig, FitError, TargetSet};
use uvsplat::io::{gguv, pfm, ply, png, read_camera_json, write_camera_json, IoError};
use uvsplat::maps::{assemble_gaussians, ActivationConfig, AttributeMaps};
use uvsplat::mesh::{build_uv_index, default_grid_cells, parse_obj, sample_uv_grid, UvChartIndex};
use uvsplat::metrics::epi_strip;
use uvsplat::render::{orbit_cameras, render, Camera, RenderMode};
use uvsplat::{ImageBuf, UvGrid};

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration, unreadable inputs, invalid flags.
    Config(String),
    /// The optimization diverged.
    Numerical(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "{m}"),
            CliError::Numerical(m) => write!(f, "{m}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        match e {
            FitError::NonFiniteLoss { .. } => CliError::Numerical(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

fn config_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Config(e.to_string())
}

/// Flags shared by every scene-consuming command.
#[derive(Debug, Args)]
pub struct SceneArgs {
    /// Template mesh (Wavefront OBJ with texture coordinates).
    #[arg(long)]
    pub template: PathBuf,
    /// GGUV attribute maps.
    #[arg(long)]
    pub maps: PathBuf,
    /// UV sampling resolution (one Gaussian per valid texel).
    #[arg(long, default_value_t = 64)]
    pub uv_res: u32,
    /// Background color "R,G,B" in [0,1].
    #[arg(long, default_value = "1,1,1")]
    pub background: String,
    /// Maximum position offset from the template, meters.
    #[arg(long, default_value_t = 0.25)]
    pub gamma_pos: f64,
    /// Scale cap parameter (scales stay below exp(-s_max)).
    #[arg(long, default_value_t = 3.0)]
    pub s_max: f64,
    /// Scale default parameter (raw zero maps near exp(-s_init)).
    #[arg(long, default_value_t = 5.0)]
    pub s_init: f64,
}

pub struct Scene {
    pub index: UvChartIndex,
    pub maps: AttributeMaps,
    pub grid: UvGrid,
    pub act: ActivationConfig,
    pub background: [f64; 3],
}

impl SceneArgs {
    pub fn load(&self) -> Result<Scene, CliError> {
        let obj = std::fs::read_to_string(&self.template)
            .map_err(|e| CliError::Config(format!("template {}: {e}", self.template.display())))?;
        let mesh = parse_obj(&obj).map_err(config_err)?;
        let index = build_uv_index(&mesh, default_grid_cells(mesh.face_count()));
        let maps = gguv::read_maps(&self.maps)
            .map_err(|e| CliError::Config(format!("maps {}: {e}", self.maps.display())))?;
        if self.uv_res < 1 {
            return Err(CliError::Config("uv-res must be at least 1".into()));
        }
        let grid = sample_uv_grid(&index, self.uv_res);
        let act = ActivationConfig {
            gamma_pos: self.gamma_pos,
            s_max: self.s_max,
            s_init: self.s_init,
        };
        act.validate().map_err(config_err)?;
        Ok(Scene {
            index,
            maps,
            grid,
            act,
            background: parse_triplet(&self.background)?,
        })
    }
}

fn parse_triplet(text: &str) -> Result<[f64; 3], CliError> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        return Err(CliError::Config(format!(
            "expected three comma-separated values, got {text:?}"
        )));
    }
    let mut out = [0.0; 3];
    for (i, p) in parts.iter().enumerate() {
        out[i] = p
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("not a number: {p:?}")))?;
    }
    Ok(out)
}

// ---------------------------------------------------------------- fit ----

#[derive(Debug, Args)]
pub struct FitArgs {
    /// JSON config describing the template, targets, and fit settings.
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Deserialize)]
struct FitFileConfig {
    template: PathBuf,
    targets: Vec<TargetEntry>,
    background: [f64; 3],
    #[serde(default)]
    activation: Option<ActivationConfig>,
    fit: FitConfig,
    #[serde(default)]
    init_maps: Option<PathBuf>,
    out_maps: PathBuf,
    out_history: PathBuf,
    #[serde(default)]
    out_state: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct TargetEntry {
    camera: PathBuf,
    image: PathBuf,
}

fn read_target_image(path: &Path) -> Result<ImageBuf, CliError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    let img = match ext.as_str() {
        "pfm" => pfm::read_pfm(path)?,
        "png" => png::read_png(path)?,
        other => {
            return Err(CliError::Config(format!(
                "unsupported target image format {other:?} ({})",
                path.display()
            )))
        }
    };
    Ok(img)
}

pub fn cmd_fit(args: FitArgs, seed_override: Option<u64>) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Config(format!("config {}: {e}", args.config.display())))?;
    let mut cfg: FitFileConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("config {}: {e}", args.config.display())))?;
    if let Some(seed) = seed_override {
        cfg.fit.seed = seed;
    }
    // Staged losses default to the first growth event when unset.
    if let Some(&(first_growth, _)) = cfg.fit.grow_schedule.first() {
        if cfg.fit.uv_tv_enabled_from.is_none() {
            cfg.fit.uv_tv_enabled_from = Some(first_growth);
        }
        if cfg.fit.opacity_enabled_from.is_none() {
            cfg.fit.opacity_enabled_from = Some(first_growth);
        }
    }
    cfg.fit.validate()?;

    let obj = std::fs::read_to_string(&cfg.template)
        .map_err(|e| CliError::Config(format!("template {}: {e}", cfg.template.display())))?;
    let mesh = parse_obj(&obj).map_err(config_err)?;
    let index = build_uv_index(&mesh, default_grid_cells(mesh.face_count()));

    let mut views = Vec::with_capacity(cfg.targets.len());
    for t in &cfg.targets {
        let cam = read_camera_json(&t.camera)?;
        let img = read_target_image(&t.image)?;
        views.push((cam, img));
    }
    let targets = TargetSet {
        views,
        background: cfg.background,
    };
    let act = cfg.activation.unwrap_or_default();
    let init = match &cfg.init_maps {
        Some(p) => Some(gguv::read_maps(p)?),
        None => None,
    };

    let result = fit_maps(&targets, &index, &act, &cfg.fit, init)?;

    gguv::write_maps(&cfg.out_maps, &result.maps)?;
    let mut history_json = String::from("[\n");
    for (i, rec) in result.history.iter().enumerate() {
        history_json.push_str("  ");
        history_json.push_str(&serde_json::to_string(rec).map_err(config_err)?);
        if i + 1 < result.history.len() {
            history_json.push(',');
        }
        history_json.push('\n');
    }
    history_json.push_str("]\n");
    std::fs::write(&cfg.out_history, history_json).map_err(config_err)?;
    if let Some(p) = &cfg.out_state {
        gguv::write_optimizer_state(p, &result.state)?;
    }
    let last = result.history.last();
    println!(
        "fit finished: {} iterations, final psnr {:.2} dB, maps -> {}",
        result.history.len(),
        last.map(|r| r.psnr).unwrap_or(f64::NAN),
        cfg.out_maps.display()
    );
    Ok(())
}

// ------------------------------------------------------------- render ----

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    /// Camera JSON file.
    #[arg(long)]
    pub camera: PathBuf,
    /// What to write: color, uv, or depth.
    #[arg(long, default_value = "color")]
    pub mode: String,
    /// Output PNG path.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional float PFM of the same data.
    #[arg(long)]
    pub pfm_out: Option<PathBuf>,
    /// Optional alpha-map PFM sidecar.
    #[arg(long)]
    pub alpha_out: Option<PathBuf>,
}

pub fn cmd_render(args: RenderArgs) -> Result<(), CliError> {
    let scene = args.scene.load()?;
    let cam = read_camera_json(&args.camera)?;
    let set = assemble_gaussians(&scene.maps, &scene.grid, &scene.index, &scene.act)
        .map_err(config_err)?;
    let (mode, depth_view) = match args.mode.as_str() {
        "color" => (RenderMode::Color, false),
        "uv" => (RenderMode::UvCoords, false),
        "depth" => (RenderMode::Color, true),
        other => {
            return Err(CliError::Config(format!(
                "unknown mode {other:?} (use color|uv|depth)"
            )))
        }
    };
    let out = render(&set, &cam, mode, scene.background).map_err(config_err)?;
    if depth_view {
        // Normalize depth over covered pixels for the PNG; PFM keeps meters.
        let (h, w) = (out.depth.height(), out.depth.width());
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for y in 0..h {
            for x in 0..w {
                if out.alpha.get(y, x, 0) > 0.0 {
                    let d = out.depth.get(y, x, 0);
                    lo = lo.min(d);
                    hi = hi.max(d);
                }
            }
        }
        let mut gray = ImageBuf::zeros(h, w, 1);
        if hi > lo {
            for y in 0..h {
                for x in 0..w {
                    if out.alpha.get(y, x, 0) > 0.0 {
                        gray.set(y, x, 0, (out.depth.get(y, x, 0) - lo) / (hi - lo));
                    }
                }
            }
        }
        png::write_png(&args.out, &gray)?;
        if let Some(p) = &args.pfm_out {
            pfm::write_pfm(p, &out.depth)?;
        }
    } else {
        png::write_png(&args.out, &out.color)?;
        if let Some(p) = &args.pfm_out {
            pfm::write_pfm(p, &out.color)?;
        }
    }
    if let Some(p) = &args.alpha_out {
        pfm::write_pfm(p, &out.alpha)?;
    }
    Ok(())
}

// -------------------------------------------------------------- orbit ----

#[derive(Debug, Args)]
pub struct OrbitArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    /// Orbit center "x,y,z", meters.
    #[arg(long, default_value = "0,0,0")]
    pub center: String,
    /// Orbit radius, meters.
    #[arg(long)]
    pub radius: f64,
    /// Elevation above the horizontal plane, degrees.
    #[arg(long, default_value_t = 0.0)]
    pub elevation: f64,
    /// Number of frames.
    #[arg(long, default_value_t = 8)]
    pub frames: u32,
    /// Rendered image side length, pixels.
    #[arg(long, default_value_t = 256)]
    pub size: u32,
    /// Focal length in pixels.
    #[arg(long)]
    pub focal: Option<f64>,
    /// Output directory for frame_###.png and camera_###.json.
    #[arg(long)]
    pub out: PathBuf,
}

fn orbit_path(args: &OrbitArgs) -> Result<Vec<Camera>, CliError> {
    if args.radius <= 0.0 {
        return Err(CliError::Config("radius must be positive".into()));
    }
    if args.frames == 0 {
        return Err(CliError::Config("frames must be at least 1".into()));
    }
    let center = parse_triplet(&args.center)?;
    let focal = args.focal.unwrap_or(1.2 * args.size as f64);
    Ok(orbit_cameras(
        Vector3::new(center[0], center[1], center[2]),
        args.radius,
        args.elevation,
        args.frames,
        focal,
        args.size,
        args.size,
        (args.radius * 0.05).min(0.05),
        args.radius * 10.0,
    ))
}

pub fn cmd_orbit(args: OrbitArgs) -> Result<(), CliError> {
    let scene = args.scene.load()?;
    let cams = orbit_path(&args)?;
    let set = assemble_gaussians(&scene.maps, &scene.grid, &scene.index, &scene.act)
        .map_err(config_err)?;
    std::fs::create_dir_all(&args.out).map_err(config_err)?;
    for (i, cam) in cams.iter().enumerate() {
        let out = render(&set, cam, RenderMode::Color, scene.background).map_err(config_err)?;
        png::write_png(&args.out.join(format!("frame_{i:03}.png")), &out.color)?;
        write_camera_json(&args.out.join(format!("camera_{i:03}.json")), cam)?;
    }
    println!("wrote {} frames to {}", cams.len(), args.out.display());
    Ok(())
}

// ---------------------------------------------------------------- epi ----

#[derive(Debug, Args)]
pub struct EpiArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    #[arg(long, default_value = "0,0,0")]
    pub center: String,
    #[arg(long)]
    pub radius: f64,
    #[arg(long, default_value_t = 0.0)]
    pub elevation: f64,
    /// Number of camera steps (strip rows).
    #[arg(long, default_value_t = 64)]
    pub frames: u32,
    #[arg(long, default_value_t = 256)]
    pub size: u32,
    #[arg(long)]
    pub focal: Option<f64>,
    /// Line segment "row,col_start,col_end" (end exclusive).
    #[arg(long)]
    pub line: String,
    /// Output strip PNG.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_epi(args: EpiArgs) -> Result<(), CliError> {
    let scene = args.scene.load()?;
    let orbit = OrbitArgs {
        scene: args.scene,
        center: args.center.clone(),
        radius: args.radius,
        elevation: args.elevation,
        frames: args.frames,
        size: args.size,
        focal: args.focal,
        out: PathBuf::new(),
    };
    let cams = orbit_path(&orbit)?;
    let line = parse_triplet(&args.line)?;
    let (row, c0, c1) = (line[0] as usize, line[1] as usize, line[2] as usize);
    let set = assemble_gaussians(&scene.maps, &scene.grid, &scene.index, &scene.act)
        .map_err(config_err)?;
    let strip = epi_strip(
        |cam| {
            render(&set, cam, RenderMode::Color, scene.background)
                .expect("validated scene renders")
                .color
        },
        &cams,
        row,
        c0,
        c1,
    )
    .map_err(config_err)?;
    png::write_png(&args.out, &strip.image)?;
    println!(
        "wrote {}x{} EPI strip to {}",
        strip.image.height(),
        strip.image.width(),
        args.out.display()
    );
    Ok(())
}

// -------------------------------------------------------------- bench ----

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    /// Comma-separated image side lengths, e.g. "512,1024".
    #[arg(long, default_value = "512,1024")]
    pub resolutions: String,
    /// Timed repetitions per resolution (warm-ups excluded), at least 10.
    #[arg(long, default_value_t = 30)]
    pub reps: u32,
    /// Output report JSON.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_bench(args: BenchArgs) -> Result<(), CliError> {
    let scene = args.scene.load()?;
    let resolutions: Vec<u32> = args
        .resolutions
        .split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| CliError::Config(format!("bad resolution {t:?}")))
        })
        .collect::<Result<_, _>>()?;
    if args.reps < 10 {
        return Err(CliError::Config(format!(
            "reps must be at least 10, got {}",
            args.reps
        )));
    }
    let report = uvsplat::bench::run_bench(
        &scene.maps,
        &scene.index,
        args.scene.uv_res,
        &scene.act,
        &resolutions,
        args.reps,
    )?;
    std::fs::write(
        &args.out,
        serde_json::to_string_pretty(&report).map_err(config_err)?,
    )
    .map_err(config_err)?;
    for e in &report.entries {
        println!(
            "{:>5}px  {:>7} gaussians  gen {:.2} ms  render {:.2} ms  backward {:.2} ms",
            e.resolution, e.gaussian_count, e.gen_ms, e.render_ms, e.backward_ms
        );
    }
    Ok(())
}

// ---------------------------------------------------------- export-ply ----

#[derive(Debug, Args)]
pub struct PlyArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    /// Output PLY path.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_export_ply(args: PlyArgs) -> Result<(), CliError> {
    let scene = args.scene.load()?;
    let set = assemble_gaussians(&scene.maps, &scene.grid, &scene.index, &scene.act)
        .map_err(config_err)?;
    ply::write_ply(&args.out, &set)?;
    println!("wrote {} gaussians to {}", set.len(), args.out.display());
    Ok(())
}
