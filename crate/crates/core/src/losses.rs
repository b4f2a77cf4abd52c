//! Generator-side loss terms: position/scale regularizers, the Beta opacity
//! regularizer, the UV total-variation loss with alpha-unblending, and the
//! non-saturating adversarial loss as a pure function of scores.

use serde::{Deserialize, Serialize};

use crate::image::ImageBuf;
use crate::maps::{softplus, AttributeMaps, MapGradients, CH_POSITION, CH_SCALE};

/// Weights of the aggregated generator loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_p: f64,
    pub lambda_s: f64,
    pub lambda_o: f64,
    pub lambda_uv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_p: 0.1,
            lambda_s: 0.05,
            lambda_o: 1.0,
            lambda_uv: 100.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("lambda_p", self.lambda_p),
            ("lambda_s", self.lambda_s),
            ("lambda_o", self.lambda_o),
            ("lambda_uv", self.lambda_uv),
        ] {
            if !(v >= 0.0) {
                return Err(format!("{name} must be nonnegative, got {v}"));
            }
        }
        Ok(())
    }
}

/// One evaluation of the aggregated loss, component by component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub adv: f64,
    pub reg_pos: f64,
    pub reg_scale: f64,
    pub reg_opac: f64,
    pub uv_tv: f64,
    pub total: f64,
}

/// total = adv + λ_p·reg_pos + λ_s·reg_scale + λ_o·reg_opac + λ_uv·uv_tv.
pub fn total_generator_loss(
    adv: f64,
    reg_pos: f64,
    reg_scale: f64,
    reg_opac: f64,
    uv_tv: f64,
    weights: &LossWeights,
) -> LossBreakdown {
    LossBreakdown {
        adv,
        reg_pos,
        reg_scale,
        reg_opac,
        uv_tv,
        total: adv
            + weights.lambda_p * reg_pos
            + weights.lambda_s * reg_scale
            + weights.lambda_o * reg_opac
            + weights.lambda_uv * uv_tv,
    }
}

/// Mean of squared raw position offsets; keeps Gaussians near the template.
pub fn reg_position(maps: &AttributeMaps) -> f64 {
    mean_of_squares(maps, CH_POSITION, 3)
}

/// Mean of squared raw scales; keeps activated scales near their default.
pub fn reg_scale(maps: &AttributeMaps) -> f64 {
    mean_of_squares(maps, CH_SCALE, 3)
}

fn mean_of_squares(maps: &AttributeMaps, c0: usize, count: usize) -> f64 {
    let h = maps.height() as usize;
    let w = maps.width() as usize;
    let n = (h * w * count) as f64;
    let mut sum = 0.0;
    for y in 0..h {
        for x in 0..w {
            for c in 0..count {
                let v = maps.get(y, x, c0 + c) as f64;
                sum += v * v;
            }
        }
    }
    sum / n
}

/// Accumulate `upstream · d(mean of squares)/d(map)` for a channel block.
fn mean_of_squares_backward(
    maps: &AttributeMaps,
    c0: usize,
    count: usize,
    upstream: f64,
    out: &mut MapGradients,
) {
    let h = maps.height() as usize;
    let w = maps.width() as usize;
    let n = (h * w * count) as f64;
    let k = 2.0 * upstream / n;
    for y in 0..h {
        for x in 0..w {
            for c in 0..count {
                out.add(y, x, c0 + c, k * maps.get(y, x, c0 + c) as f64);
            }
        }
    }
}

pub fn reg_position_backward(maps: &AttributeMaps, upstream: f64, out: &mut MapGradients) {
    mean_of_squares_backward(maps, CH_POSITION, 3, upstream, out);
}

pub fn reg_scale_backward(maps: &AttributeMaps, upstream: f64, out: &mut MapGradients) {
    mean_of_squares_backward(maps, CH_SCALE, 3, upstream, out);
}

/// Beta(0.5, 0.5) negative log-likelihood of activated opacities, up to its
/// additive constant: mean of ½(ln(σ+ε) + ln(1-σ+ε)). Maximal at σ = 0.5 and
/// decreasing toward both 0 and 1, pushing opacities to the extremes.
pub fn reg_opacity(opacities: &[f64], eps: f64) -> f64 {
    if opacities.is_empty() {
        return 0.0;
    }
    let sum: f64 = opacities
        .iter()
        .map(|&s| 0.5 * ((s + eps).ln() + (1.0 - s + eps).ln()))
        .sum();
    sum / opacities.len() as f64
}

/// d(reg_opacity)/dσ_i, scaled by `upstream`.
pub fn reg_opacity_backward(opacities: &[f64], eps: f64, upstream: f64) -> Vec<f64> {
    let n = opacities.len().max(1) as f64;
    opacities
        .iter()
        .map(|&s| upstream * 0.5 * (1.0 / (s + eps) - 1.0 / (1.0 - s + eps)) / n)
        .collect()
}

/// Pixels more transparent than this are excluded from the TV loss.
pub const DEFAULT_EPS_ALPHA: f64 = 0.05;

/// Reverse the alpha compositing of a white-background UV rendering:
/// R' = (R - (1 - α)) / α where α ≥ `eps_alpha`; the mask is false elsewhere.
///
/// The caller must have rendered against a white background.
pub fn unblend_uv(
    r_uv: &ImageBuf,
    r_alpha: &ImageBuf,
    eps_alpha: f64,
) -> (ImageBuf, Vec<bool>) {
    assert_eq!(r_uv.channels(), 3, "UV rendering must have 3 channels");
    assert!(
        r_alpha.height() == r_uv.height() && r_alpha.width() == r_uv.width(),
        "alpha shape mismatch"
    );
    let (h, w) = (r_uv.height(), r_uv.width());
    let mut out = ImageBuf::zeros(h, w, 3);
    let mut mask = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let a = r_alpha.get(y, x, 0);
            if a >= eps_alpha {
                mask[y * w + x] = true;
                for c in 0..3 {
                    out.set(y, x, c, (r_uv.get(y, x, c) - (1.0 - a)) / a);
                }
            }
        }
    }
    (out, mask)
}

/// Anisotropic L1 total variation over 4-neighbor pairs where both pixels
/// are valid, normalized by the number of such pairs. Zero without any valid
/// pair.
pub fn tv_uv(r_uv_prime: &ImageBuf, valid_mask: &[bool]) -> f64 {
    let (h, w, c) = (r_uv_prime.height(), r_uv_prime.width(), r_uv_prime.channels());
    assert_eq!(valid_mask.len(), h * w, "mask length");
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for y in 0..h {
        for x in 0..w {
            if !valid_mask[y * w + x] {
                continue;
            }
            if x + 1 < w && valid_mask[y * w + x + 1] {
                pairs += 1;
                for ch in 0..c {
                    sum += (r_uv_prime.get(y, x, ch) - r_uv_prime.get(y, x + 1, ch)).abs();
                }
            }
            if y + 1 < h && valid_mask[(y + 1) * w + x] {
                pairs += 1;
                for ch in 0..c {
                    sum += (r_uv_prime.get(y, x, ch) - r_uv_prime.get(y + 1, x, ch)).abs();
                }
            }
        }
    }
    if pairs == 0 {
        0.0
    } else {
        sum / pairs as f64
    }
}

/// Subgradient of [`tv_uv`] w.r.t. the unblended rendering (zero at ties).
pub fn tv_uv_backward(r_uv_prime: &ImageBuf, valid_mask: &[bool], upstream: f64) -> ImageBuf {
    let (h, w, c) = (r_uv_prime.height(), r_uv_prime.width(), r_uv_prime.channels());
    let mut grad = ImageBuf::zeros(h, w, c);
    let mut pairs = 0usize;
    for y in 0..h {
        for x in 0..w {
            if !valid_mask[y * w + x] {
                continue;
            }
            if x + 1 < w && valid_mask[y * w + x + 1] {
                pairs += 1;
            }
            if y + 1 < h && valid_mask[(y + 1) * w + x] {
                pairs += 1;
            }
        }
    }
    if pairs == 0 {
        return grad;
    }
    let k = upstream / pairs as f64;
    for y in 0..h {
        for x in 0..w {
            if !valid_mask[y * w + x] {
                continue;
            }
            if x + 1 < w && valid_mask[y * w + x + 1] {
                for ch in 0..c {
                    let s = (r_uv_prime.get(y, x, ch) - r_uv_prime.get(y, x + 1, ch)).signum();
                    if s != 0.0 {
                        *grad.pixel_mut(y, x).get_mut(ch).unwrap() += k * s;
                        *grad.pixel_mut(y, x + 1).get_mut(ch).unwrap() -= k * s;
                    }
                }
            }
            if y + 1 < h && valid_mask[(y + 1) * w + x] {
                for ch in 0..c {
                    let s = (r_uv_prime.get(y, x, ch) - r_uv_prime.get(y + 1, x, ch)).signum();
                    if s != 0.0 {
                        *grad.pixel_mut(y, x).get_mut(ch).unwrap() += k * s;
                        *grad.pixel_mut(y + 1, x).get_mut(ch).unwrap() -= k * s;
                    }
                }
            }
        }
    }
    grad
}

/// Full UV-TV term: unblend, take TV, and return the loss together with the
/// gradients w.r.t. the raw UV rendering and its alpha map.
pub fn uv_tv_loss(
    r_uv: &ImageBuf,
    r_alpha: &ImageBuf,
    eps_alpha: f64,
    upstream: f64,
) -> (f64, ImageBuf, ImageBuf) {
    let (prime, mask) = unblend_uv(r_uv, r_alpha, eps_alpha);
    let loss = tv_uv(&prime, &mask);
    let grad_prime = tv_uv_backward(&prime, &mask, upstream);
    let (h, w) = (r_uv.height(), r_uv.width());
    let mut grad_uv = ImageBuf::zeros(h, w, 3);
    let mut grad_alpha = ImageBuf::zeros(h, w, 1);
    for y in 0..h {
        for x in 0..w {
            if !mask[y * w + x] {
                continue;
            }
            let a = r_alpha.get(y, x, 0);
            let mut ga = 0.0;
            for c in 0..3 {
                let g = grad_prime.get(y, x, c);
                // R' = (R - 1 + α)/α: ∂R'/∂R = 1/α, ∂R'/∂α = (1 - R)/α².
                grad_uv.set(y, x, c, g / a);
                ga += g * (1.0 - r_uv.get(y, x, c)) / (a * a);
            }
            grad_alpha.set(y, x, 0, ga);
        }
    }
    (loss, grad_uv, grad_alpha)
}

/// Non-saturating adversarial loss for the generator: mean softplus(-score).
pub fn generator_adv_loss(d_scores: &[f64]) -> f64 {
    if d_scores.is_empty() {
        return 0.0;
    }
    d_scores.iter().map(|&s| softplus(-s)).sum::<f64>() / d_scores.len() as f64
}

/// d(generator_adv_loss)/d(score_i), scaled by `upstream`.
pub fn generator_adv_loss_backward(d_scores: &[f64], upstream: f64) -> Vec<f64> {
    let n = d_scores.len().max(1) as f64;
    d_scores
        .iter()
        .map(|&s| {
            let sig = if s >= 0.0 {
                let e = (-s).exp();
                e / (1.0 + e)
            } else {
                1.0 / (1.0 + s.exp())
            };
            -upstream * sig / n
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    #[test]
    fn mean_square_regularizers_match_hand_values() {
        let maps = AttributeMaps::zeros(2, 2);
        assert_eq!(reg_position(&maps), 0.0);
        assert_eq!(reg_scale(&maps), 0.0);

        let mut maps = AttributeMaps::zeros(2, 2);
        for y in 0..2 {
            for x in 0..2 {
                for c in 0..3 {
                    maps.set(y, x, CH_POSITION + c, 1.0);
                }
            }
        }
        assert_eq!(reg_position(&maps), 1.0);

        // Homogeneity of degree two.
        for v in maps.data_mut().iter_mut() {
            *v *= 3.0;
        }
        assert_relative_eq!(reg_position(&maps), 9.0, epsilon = 1e-12);
    }

    #[test]
    fn opacity_regularizer_peaks_at_half_and_is_symmetric() {
        assert_relative_eq!(reg_opacity(&[0.5], 0.0), 0.5f64.ln(), epsilon = 1e-12);
        let eps = 1e-3;
        let mid = reg_opacity(&[0.5], eps);
        let hi = reg_opacity(&[0.9], eps);
        let ext = reg_opacity(&[0.99], eps);
        assert!(mid > hi && hi > ext);
        assert_relative_eq!(
            reg_opacity(&[0.73], eps),
            reg_opacity(&[0.27], eps),
            epsilon = 1e-12
        );
        for sigma in [0.1, 0.3, 0.7, 0.9, 0.999] {
            assert!(reg_opacity(&[sigma], eps) < reg_opacity(&[0.5], eps));
        }
    }

    #[test]
    fn opacity_regularizer_gradient_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let eps = 1e-3;
        let sigmas: Vec<f64> = (0..20).map(|_| rng.gen_range(0.05..0.95)).collect();
        let grads = reg_opacity_backward(&sigmas, eps, 1.0);
        let h = 1e-7;
        for i in 0..sigmas.len() {
            let mut plus = sigmas.clone();
            plus[i] += h;
            let mut minus = sigmas.clone();
            minus[i] -= h;
            let fd = (reg_opacity(&plus, eps) - reg_opacity(&minus, eps)) / (2.0 * h);
            assert_relative_eq!(grads[i], fd, max_relative = 1e-5);
        }
    }

    #[test]
    fn unblend_is_identity_at_full_opacity() {
        let mut uv = ImageBuf::zeros(2, 2, 3);
        for (i, v) in uv.data_mut().iter_mut().enumerate() {
            *v = i as f64 * 0.05;
        }
        let alpha = ImageBuf::filled(2, 2, 1, 1.0);
        let (prime, mask) = unblend_uv(&uv, &alpha, DEFAULT_EPS_ALPHA);
        assert!(mask.iter().all(|&m| m));
        assert!(prime.max_abs_diff(&uv) < 1e-12);
    }

    #[test]
    fn unblend_inverts_the_over_operator() {
        let f = [0.3, 0.6, 0.1];
        let a = 0.5;
        let mut uv = ImageBuf::zeros(1, 1, 3);
        for c in 0..3 {
            uv.set(0, 0, c, a * f[c] + (1.0 - a) * 1.0);
        }
        let alpha = ImageBuf::filled(1, 1, 1, a);
        let (prime, mask) = unblend_uv(&uv, &alpha, DEFAULT_EPS_ALPHA);
        assert!(mask[0]);
        for c in 0..3 {
            assert_relative_eq!(prime.get(0, 0, c), f[c], epsilon = 1e-6);
        }
    }

    #[test]
    fn unblend_masks_out_transparent_pixels() {
        let uv = ImageBuf::filled(2, 2, 3, 1.0);
        let alpha = ImageBuf::zeros(2, 2, 1);
        let (_, mask) = unblend_uv(&uv, &alpha, DEFAULT_EPS_ALPHA);
        assert!(mask.iter().all(|&m| !m));
    }

    #[test]
    fn tv_of_constant_image_is_zero() {
        let img = ImageBuf::filled(4, 4, 3, 0.37);
        let mask = vec![true; 16];
        assert_eq!(tv_uv(&img, &mask), 0.0);
    }

    #[test]
    fn tv_of_ramp_matches_closed_form() {
        let (h, w) = (4usize, 5usize);
        let delta = 0.01;
        let mut img = ImageBuf::filled(h, w, 3, 0.2);
        for y in 0..h {
            for x in 0..w {
                img.set(y, x, 0, delta * x as f64);
            }
        }
        let mask = vec![true; h * w];
        let horizontal_pairs = h * (w - 1);
        let all_pairs = horizontal_pairs + (h - 1) * w;
        let expect = delta * horizontal_pairs as f64 / all_pairs as f64;
        assert_relative_eq!(tv_uv(&img, &mask), expect, epsilon = 1e-9);
    }

    #[test]
    fn tv_with_checkerboard_mask_is_zero() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let mut img = ImageBuf::zeros(4, 4, 3);
        for v in img.data_mut().iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        let mask: Vec<bool> = (0..16).map(|i| (i / 4 + i % 4) % 2 == 0).collect();
        assert_eq!(tv_uv(&img, &mask), 0.0);
    }

    #[test]
    fn tv_is_translation_invariant() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut img = ImageBuf::zeros(5, 5, 3);
        for v in img.data_mut().iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        let mask: Vec<bool> = (0..25).map(|_| rng.gen_bool(0.8)).collect();
        let base = tv_uv(&img, &mask);
        let mut shifted = img.clone();
        for v in shifted.data_mut().iter_mut() {
            *v += 5.0;
        }
        assert_relative_eq!(tv_uv(&shifted, &mask), base, epsilon = 1e-12);
    }

    #[test]
    fn uv_tv_gradients_match_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(14);
        let (h, w) = (5usize, 4usize);
        let mut alpha = ImageBuf::zeros(h, w, 1);
        for v in alpha.data_mut().iter_mut() {
            // Away from the eps_alpha boundary.
            *v = if rng.gen_bool(0.8) {
                rng.gen_range(0.3..1.0)
            } else {
                0.01
            };
        }
        let mut uv = ImageBuf::zeros(h, w, 3);
        for v in uv.data_mut().iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        let (loss0, grad_uv, grad_alpha) = uv_tv_loss(&uv, &alpha, DEFAULT_EPS_ALPHA, 1.0);
        assert!(loss0 > 0.0);

        let h_step = 1e-7;
        for idx in (0..uv.data().len()).step_by(5) {
            let mut plus = uv.clone();
            plus.data_mut()[idx] += h_step;
            let mut minus = uv.clone();
            minus.data_mut()[idx] -= h_step;
            let (lp, _, _) = uv_tv_loss(&plus, &alpha, DEFAULT_EPS_ALPHA, 1.0);
            let (lm, _, _) = uv_tv_loss(&minus, &alpha, DEFAULT_EPS_ALPHA, 1.0);
            let fd = (lp - lm) / (2.0 * h_step);
            let g = grad_uv.data()[idx];
            // Skip finite differences that straddle an L1 kink.
            if (fd - g).abs() > 1e-5 && fd.abs() > 1e-9 {
                let (l2p, _, _) = uv_tv_loss(&plus, &alpha, DEFAULT_EPS_ALPHA, 1.0);
                assert!(
                    (l2p - lp).abs() < 1e-12,
                    "non-deterministic loss evaluation"
                );
                continue;
            }
            assert_relative_eq!(g, fd, max_relative = 1e-5, epsilon = 1e-9);
        }

        for idx in (0..alpha.data().len()).step_by(3) {
            if alpha.data()[idx] < DEFAULT_EPS_ALPHA {
                continue;
            }
            let mut plus = alpha.clone();
            plus.data_mut()[idx] += h_step;
            let mut minus = alpha.clone();
            minus.data_mut()[idx] -= h_step;
            let (lp, _, _) = uv_tv_loss(&uv, &plus, DEFAULT_EPS_ALPHA, 1.0);
            let (lm, _, _) = uv_tv_loss(&uv, &minus, DEFAULT_EPS_ALPHA, 1.0);
            let fd = (lp - lm) / (2.0 * h_step);
            let g = grad_alpha.data()[idx];
            if (fd - g).abs() > 1e-5 && fd.abs() > 1e-9 {
                continue;
            }
            assert_relative_eq!(g, fd, max_relative = 1e-4, epsilon = 1e-9);
        }
    }

    #[test]
    fn adversarial_loss_matches_softplus_values() {
        assert_relative_eq!(generator_adv_loss(&[0.0]), 2.0f64.ln(), epsilon = 1e-12);
        assert!(generator_adv_loss(&[1e4]) < 1e-9);
        assert_relative_eq!(
            generator_adv_loss(&[-3.0]),
            (1.0 + 3.0f64.exp()).ln(),
            epsilon = 1e-12
        );
        assert_relative_eq!(generator_adv_loss(&[-3.0]), 3.0486, max_relative = 1e-4);
        // Decreasing in scores.
        assert!(generator_adv_loss(&[1.0]) < generator_adv_loss(&[0.5]));
    }

    #[test]
    fn total_loss_respects_weights() {
        let w = LossWeights::default();
        let b = total_generator_loss(0.0, 0.0, 0.0, 0.0, 0.0, &w);
        assert_eq!(b.total, 0.0);

        let b = total_generator_loss(1.0, 2.0, 0.0, 0.0, 0.0, &w);
        assert_relative_eq!(b.total, 1.2, epsilon = 1e-12);

        let zero = LossWeights {
            lambda_p: 0.0,
            lambda_s: 0.0,
            lambda_o: 0.0,
            lambda_uv: 0.0,
        };
        let b = total_generator_loss(0.7, 5.0, 5.0, 5.0, 5.0, &zero);
        assert_eq!(b.total, 0.7);

        // Invariant: total recomposes from the parts.
        let b = total_generator_loss(0.3, 1.5, 2.5, -0.7, 0.01, &w);
        let recompose = b.adv
            + w.lambda_p * b.reg_pos
            + w.lambda_s * b.reg_scale
            + w.lambda_o * b.reg_opac
            + w.lambda_uv * b.uv_tv;
        assert_relative_eq!(b.total, recompose, epsilon = 1e-9);
    }

    #[test]
    fn map_regularizer_gradients_match_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let mut maps = AttributeMaps::zeros(3, 3);
        for v in maps.data_mut().iter_mut() {
            *v = rng.gen_range(-2.0..2.0f32);
        }
        let mut grads = MapGradients::zeros(3, 3);
        reg_position_backward(&maps, 1.0, &mut grads);
        reg_scale_backward(&maps, 0.5, &mut grads);

        let h = 1e-3f32;
        for idx in 0..maps.data().len() {
            let orig = maps.data()[idx];
            maps.data_mut()[idx] = orig + h;
            let plus = reg_position(&maps) + 0.5 * reg_scale(&maps);
            maps.data_mut()[idx] = orig - h;
            let minus = reg_position(&maps) + 0.5 * reg_scale(&maps);
            maps.data_mut()[idx] = orig;
            let h_eff = (orig + h) as f64 - (orig - h) as f64;
            let fd = (plus - minus) / h_eff;
            assert_relative_eq!(grads.data[idx], fd, max_relative = 1e-4, epsilon = 1e-9);
        }
    }
}
