//! Inverse-rendering fitter: optimize raw attribute maps with Adam against
//! multi-view photometric targets, with the map-space and Gaussian-space
//! regularizers, staged enabling of the opacity and UV-TV terms, and
//! progressive UV-density growth.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::ImageBuf;
use crate::losses::{
    reg_opacity, reg_opacity_backward, reg_position, reg_position_backward, reg_scale,
    reg_scale_backward, total_generator_loss, uv_tv_loss, LossBreakdown, LossWeights,
    DEFAULT_EPS_ALPHA,
};
use crate::maps::{
    assemble_backward, assemble_gaussians, ActivationConfig, AttributeMaps, GaussianGradients,
    MapGradients, MapsError, CHANNELS,
};
use crate::mesh::{sample_uv_grid, UvChartIndex, UvGrid};
use crate::render::{render, render_backward, RenderError, RenderMode};
use crate::render::Camera;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("no target views")]
    EmptyTargets,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite loss at step {step}: first non-finite term is {term}")]
    NonFiniteLoss { step: u64, term: &'static str },
    #[error(transparent)]
    Maps(#[from] MapsError),
    #[error(transparent)]
    Render(#[from] RenderError),
}

/// Everything the fit loop needs to know, mirrored by the CLI's JSON config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub iterations: u64,
    pub loss_weights: LossWeights,
    pub photometric_weight: f64,
    /// Side length of the square attribute maps.
    pub map_resolution: u32,
    /// Initial UV sampling resolution.
    pub uv_resolution: u32,
    /// Iteration from which the UV-TV loss contributes; absent = never.
    pub uv_tv_enabled_from: Option<u64>,
    /// Iteration from which the opacity regularizer contributes; absent = never.
    pub opacity_enabled_from: Option<u64>,
    /// (iteration, uv_resolution) pairs with strictly increasing resolutions.
    pub grow_schedule: Vec<(u64, u32)>,
    /// Alpha threshold below which pixels leave the TV mask.
    pub eps_alpha: f64,
    /// Stop early once the photometric PSNR reaches this value, dB.
    pub stop_at_psnr: Option<f64>,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.0025,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            iterations: 1000,
            loss_weights: LossWeights::default(),
            photometric_weight: 1.0,
            map_resolution: 64,
            uv_resolution: 64,
            uv_tv_enabled_from: None,
            opacity_enabled_from: None,
            grow_schedule: Vec::new(),
            eps_alpha: DEFAULT_EPS_ALPHA,
            stop_at_psnr: None,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), FitError> {
        if !(self.learning_rate > 0.0) {
            return Err(FitError::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(FitError::InvalidConfig(format!(
                    "{name} must be in [0,1), got {b}"
                )));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(FitError::InvalidConfig("adam_eps must be positive".into()));
        }
        if self.map_resolution == 0 || self.uv_resolution == 0 {
            return Err(FitError::InvalidConfig("resolutions must be positive".into()));
        }
        if !(self.photometric_weight >= 0.0) {
            return Err(FitError::InvalidConfig(
                "photometric_weight must be nonnegative".into(),
            ));
        }
        self.loss_weights
            .validate()
            .map_err(FitError::InvalidConfig)?;
        let mut prev = self.uv_resolution;
        for (it, res) in &self.grow_schedule {
            if *res <= prev {
                return Err(FitError::InvalidConfig(format!(
                    "grow_schedule resolutions must strictly increase ({prev} -> {res} at iteration {it})"
                )));
            }
            prev = *res;
        }
        Ok(())
    }
}

/// Multi-view photometric supervision.
#[derive(Debug, Clone)]
pub struct TargetSet {
    pub views: Vec<(Camera, ImageBuf)>,
    pub background: [f64; 3],
}

impl TargetSet {
    pub fn validate(&self) -> Result<(), FitError> {
        if self.views.is_empty() {
            return Err(FitError::EmptyTargets);
        }
        for (i, (cam, img)) in self.views.iter().enumerate() {
            cam.validate().map_err(RenderError::from)?;
            if img.height() != cam.height as usize
                || img.width() != cam.width as usize
                || img.channels() != 3
            {
                return Err(FitError::ShapeMismatch(format!(
                    "view {i}: image {}x{}x{} vs camera {}x{}",
                    img.height(),
                    img.width(),
                    img.channels(),
                    cam.height,
                    cam.width
                )));
            }
        }
        Ok(())
    }
}

/// Adam first/second moments, stored in single precision like the maps.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub height: u32,
    pub width: u32,
    pub step: u64,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

impl OptimizerState {
    pub fn new(height: u32, width: u32) -> Self {
        let n = height as usize * width as usize * CHANNELS;
        Self {
            height,
            width,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(
    maps: &mut AttributeMaps,
    grads: &MapGradients,
    state: &mut OptimizerState,
    cfg: &FitConfig,
) -> Result<(), FitError> {
    let n = maps.data().len();
    if grads.data.len() != n || state.m.len() != n {
        return Err(FitError::ShapeMismatch(format!(
            "maps have {} values, grads {}, state {}",
            n,
            grads.data.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.adam_beta1.powi(t);
    let bc2 = 1.0 - cfg.adam_beta2.powi(t);
    let data = maps.data_mut();
    for i in 0..n {
        let g = grads.data[i];
        let m = cfg.adam_beta1 * state.m[i] as f64 + (1.0 - cfg.adam_beta1) * g;
        let v = cfg.adam_beta2 * state.v[i] as f64 + (1.0 - cfg.adam_beta2) * g * g;
        state.m[i] = m as f32;
        state.v[i] = v as f32;
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        data[i] = (data[i] as f64 - cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps))
            as f32;
    }
    Ok(())
}

/// Resample the UV grid at a strictly higher resolution over the same charts.
/// The maps are untouched, so attributes at any fixed UV coordinate are
/// unchanged.
pub fn grow_density(
    index: &UvChartIndex,
    grid: &UvGrid,
    new_resolution: u32,
) -> Result<UvGrid, FitError> {
    if new_resolution <= grid.resolution {
        return Err(FitError::InvalidConfig(format!(
            "growth must increase resolution ({} -> {new_resolution})",
            grid.resolution
        )));
    }
    Ok(sample_uv_grid(index, new_resolution))
}

/// One history row: the loss breakdown at a step plus the photometric PSNR.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub step: u64,
    #[serde(flatten)]
    pub losses: LossBreakdown,
    pub psnr: f64,
    pub gaussians: usize,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub maps: AttributeMaps,
    pub history: Vec<HistoryRecord>,
    pub final_grid: UvGrid,
    pub state: OptimizerState,
}

struct ViewPass {
    sq_err: f64,
    tv: f64,
    grads: GaussianGradients,
}

/// One full evaluation of the staged generator loss and its map gradient.
pub struct StepEval {
    pub losses: LossBreakdown,
    pub psnr: f64,
    pub gaussians: usize,
    pub map_grads: MapGradients,
}

/// Assemble, render every view, accumulate all loss terms (terms with zero
/// weight are skipped where expensive), and pull gradients back to the raw
/// maps. The UV-TV term renders against a white background as its
/// unblending assumes.
pub fn evaluate_maps(
    maps: &AttributeMaps,
    grid: &UvGrid,
    index: &UvChartIndex,
    act_cfg: &ActivationConfig,
    targets: &TargetSet,
    weights: &LossWeights,
    photometric_weight: f64,
    eps_alpha: f64,
) -> Result<StepEval, FitError> {
    let n_views = targets.views.len();
    let pixel_count: usize = targets
        .views
        .iter()
        .map(|(c, _)| c.width as usize * c.height as usize * 3)
        .sum();
    let white = [1.0, 1.0, 1.0];
    let uv_on = weights.lambda_uv > 0.0;

    let set = assemble_gaussians(maps, grid, index, act_cfg)?;
    let photo_scale = 2.0 * photometric_weight / pixel_count as f64;
    let passes: Vec<Result<ViewPass, FitError>> = targets
        .views
        .par_iter()
        .map(|(cam, target)| {
            let out = render(&set, cam, RenderMode::Color, targets.background)?;
            let (h, w) = (out.color.height(), out.color.width());
            let mut grad_color = ImageBuf::zeros(h, w, 3);
            let mut sq_err = 0.0;
            for (i, (c, t)) in out
                .color
                .data()
                .iter()
                .zip(target.data().iter())
                .enumerate()
            {
                let d = c - t;
                sq_err += d * d;
                grad_color.data_mut()[i] = photo_scale * d;
            }
            let mut grads = render_backward(
                &set,
                cam,
                RenderMode::Color,
                targets.background,
                &grad_color,
                &ImageBuf::zeros(h, w, 1),
            )?;

            let mut tv = 0.0;
            if uv_on {
                let uv_out = render(&set, cam, RenderMode::UvCoords, white)?;
                let upstream = weights.lambda_uv / n_views as f64;
                let (tv_v, g_uv, g_alpha) =
                    uv_tv_loss(&uv_out.color, &uv_out.alpha, eps_alpha, upstream);
                tv = tv_v;
                let uv_grads =
                    render_backward(&set, cam, RenderMode::UvCoords, white, &g_uv, &g_alpha)?;
                grads.add_assign(&uv_grads);
            }
            Ok(ViewPass { sq_err, tv, grads })
        })
        .collect();

    let mut sq_err_total = 0.0;
    let mut tv_total = 0.0;
    let mut gauss_grads = GaussianGradients::zeros(set.len());
    for pass in passes {
        let pass = pass?;
        sq_err_total += pass.sq_err;
        tv_total += pass.tv;
        gauss_grads.add_assign(&pass.grads);
    }
    let mse = sq_err_total / pixel_count as f64;
    let photo = photometric_weight * mse;
    let tv_mean = tv_total / n_views as f64;

    let reg_opac_val = reg_opacity(&set.opacities, 1e-3);
    if weights.lambda_o > 0.0 {
        let d = reg_opacity_backward(&set.opacities, 1e-3, weights.lambda_o);
        for (g, dv) in gauss_grads.opacities.iter_mut().zip(d) {
            *g += dv;
        }
    }
    let reg_pos_val = reg_position(maps);
    let reg_scale_val = reg_scale(maps);
    let losses = total_generator_loss(
        photo,
        reg_pos_val,
        reg_scale_val,
        reg_opac_val,
        tv_mean,
        weights,
    );
    let psnr = if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    };

    let mut map_grads = MapGradients::zeros(maps.height(), maps.width());
    assemble_backward(maps, grid, act_cfg, &gauss_grads, &mut map_grads)?;
    reg_position_backward(maps, weights.lambda_p, &mut map_grads);
    reg_scale_backward(maps, weights.lambda_s, &mut map_grads);

    Ok(StepEval {
        losses,
        psnr,
        gaussians: set.len(),
        map_grads,
    })
}

/// Run the fit loop: assemble → render every view → photometric and
/// regularizer losses → backward → Adam. Growth events rebuild the UV grid
/// and reset the optimizer state.
pub fn fit_maps(
    targets: &TargetSet,
    index: &UvChartIndex,
    act_cfg: &ActivationConfig,
    fit_cfg: &FitConfig,
    initial_maps: Option<AttributeMaps>,
) -> Result<FitResult, FitError> {
    targets.validate()?;
    fit_cfg.validate()?;
    act_cfg.validate()?;

    let mut maps = match initial_maps {
        Some(m) => {
            if m.height() != fit_cfg.map_resolution || m.width() != fit_cfg.map_resolution {
                return Err(FitError::ShapeMismatch(format!(
                    "initial maps are {}x{}, config says {}",
                    m.height(),
                    m.width(),
                    fit_cfg.map_resolution
                )));
            }
            m
        }
        None => AttributeMaps::zeros(fit_cfg.map_resolution, fit_cfg.map_resolution),
    };
    let mut grid = sample_uv_grid(index, fit_cfg.uv_resolution);
    let mut state = OptimizerState::new(maps.height(), maps.width());
    let mut history = Vec::with_capacity(fit_cfg.iterations as usize);

    for it in 0..fit_cfg.iterations {
        if let Some(&(_, res)) = fit_cfg.grow_schedule.iter().find(|(at, _)| *at == it) {
            grid = grow_density(index, &grid, res)?;
            state = OptimizerState::new(maps.height(), maps.width());
        }
        let uv_on = fit_cfg.uv_tv_enabled_from.map_or(false, |k| it >= k);
        let opac_on = fit_cfg.opacity_enabled_from.map_or(false, |k| it >= k);
        let effective = LossWeights {
            lambda_o: if opac_on { fit_cfg.loss_weights.lambda_o } else { 0.0 },
            lambda_uv: if uv_on { fit_cfg.loss_weights.lambda_uv } else { 0.0 },
            ..fit_cfg.loss_weights
        };

        let eval = evaluate_maps(
            &maps,
            &grid,
            index,
            act_cfg,
            targets,
            &effective,
            fit_cfg.photometric_weight,
            fit_cfg.eps_alpha,
        )?;
        for (value, term) in [
            (eval.losses.adv, "photometric"),
            (eval.losses.reg_pos, "reg_pos"),
            (eval.losses.reg_scale, "reg_scale"),
            (eval.losses.reg_opac, "reg_opac"),
            (eval.losses.uv_tv, "uv_tv"),
            (eval.losses.total, "total"),
        ] {
            if !value.is_finite() {
                return Err(FitError::NonFiniteLoss { step: it, term });
            }
        }
        history.push(HistoryRecord {
            step: it,
            losses: eval.losses,
            psnr: eval.psnr,
            gaussians: eval.gaussians,
        });

        if let Some(threshold) = fit_cfg.stop_at_psnr {
            if eval.psnr >= threshold {
                break;
            }
        }

        adam_step(&mut maps, &eval.map_grads, &mut state, fit_cfg)?;
    }

    Ok(FitResult {
        maps,
        history,
        final_grid: grid,
        state,
    })
}
