//! Image-quality metrics and the spatio-temporal consistency strip.

use thiserror::Error;

use crate::image::ImageBuf;
use crate::render::Camera;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("image shapes differ: {0}x{1}x{2} vs {3}x{4}x{5}")]
    ShapeMismatch(usize, usize, usize, usize, usize, usize),
    #[error("line row {row}, cols [{col_start}, {col_end}) not inside a {width}x{height} image")]
    LineOutOfBounds {
        row: usize,
        col_start: usize,
        col_end: usize,
        width: usize,
        height: usize,
    },
    #[error("camera path needs at least 2 entries, got {0}")]
    PathTooShort(usize),
}

fn check_shapes(a: &ImageBuf, b: &ImageBuf) -> Result<(), MetricsError> {
    if !a.same_shape(b) {
        return Err(MetricsError::ShapeMismatch(
            a.height(),
            a.width(),
            a.channels(),
            b.height(),
            b.width(),
            b.channels(),
        ));
    }
    Ok(())
}

/// 10·log10(peak²/MSE) in decibels; +inf for identical images.
pub fn psnr(a: &ImageBuf, b: &ImageBuf, peak: f64) -> Result<f64, MetricsError> {
    check_shapes(a, b)?;
    let mse: f64 = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (peak * peak / mse).log10())
    }
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in w.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in w.iter_mut() {
        *v /= sum;
    }
    w
}

/// Mean structural similarity with the standard 11x11 Gaussian window
/// (stdev 1.5, k1 = 0.01, k2 = 0.03, peak 1), averaged over channels.
/// Windows are evaluated only where they fit entirely inside the image.
pub fn ssim(a: &ImageBuf, b: &ImageBuf) -> Result<f64, MetricsError> {
    check_shapes(a, b)?;
    let (h, w, ch) = (a.height(), a.width(), a.channels());
    assert!(
        h >= SSIM_WINDOW && w >= SSIM_WINDOW,
        "image smaller than the SSIM window"
    );
    let window = gaussian_window();
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);

    let mut total = 0.0;
    for c in 0..ch {
        // Five moment planes (a, b, a², b², ab), then separable blurs.
        let mut pa = vec![0.0; h * w];
        let mut pb = vec![0.0; h * w];
        let mut paa = vec![0.0; h * w];
        let mut pbb = vec![0.0; h * w];
        let mut pab = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let av = a.get(y, x, c);
                let bv = b.get(y, x, c);
                let i = y * w + x;
                pa[i] = av;
                pb[i] = bv;
                paa[i] = av * av;
                pbb[i] = bv * bv;
                pab[i] = av * bv;
            }
        }

        let blur = |src: &[f64]| -> Vec<f64> {
            let half = SSIM_WINDOW / 2;
            let mut tmp = vec![0.0; h * w];
            // Horizontal, valid region only.
            for y in 0..h {
                for x in half..w - half {
                    let mut s = 0.0;
                    for (k, wt) in window.iter().enumerate() {
                        s += wt * src[y * w + x + k - half];
                    }
                    tmp[y * w + x] = s;
                }
            }
            let mut out = vec![0.0; h * w];
            for y in half..h - half {
                for x in half..w - half {
                    let mut s = 0.0;
                    for (k, wt) in window.iter().enumerate() {
                        s += wt * tmp[(y + k - half) * w + x];
                    }
                    out[y * w + x] = s;
                }
            }
            out
        };

        let ma = blur(&pa);
        let mb = blur(&pb);
        let maa = blur(&paa);
        let mbb = blur(&pbb);
        let mab = blur(&pab);

        let half = SSIM_WINDOW / 2;
        let mut sum = 0.0;
        let mut count = 0usize;
        for y in half..h - half {
            for x in half..w - half {
                let i = y * w + x;
                let mu_a = ma[i];
                let mu_b = mb[i];
                let var_a = maa[i] - mu_a * mu_a;
                let var_b = mbb[i] - mu_b * mu_b;
                let cov = mab[i] - mu_a * mu_b;
                let s = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                    / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
                sum += s;
                count += 1;
            }
        }
        total += sum / count as f64;
    }
    Ok(total / ch as f64)
}

/// Spatio-temporal strip: one fixed horizontal line segment stacked over a
/// camera path. Row t holds the line's pixels from the t-th rendering.
#[derive(Debug, Clone)]
pub struct EpiStrip {
    /// T×L×3 image; T camera steps, L segment pixels.
    pub image: ImageBuf,
}

/// Render every camera on the path and stack the pixels of the line segment
/// (`row`, columns `col_start..col_end`).
pub fn epi_strip<F>(
    render_view: F,
    camera_path: &[Camera],
    row: usize,
    col_start: usize,
    col_end: usize,
) -> Result<EpiStrip, MetricsError>
where
    F: Fn(&Camera) -> ImageBuf,
{
    if camera_path.len() < 2 {
        return Err(MetricsError::PathTooShort(camera_path.len()));
    }
    for cam in camera_path {
        if row >= cam.height as usize
            || col_start >= col_end
            || col_end > cam.width as usize
        {
            return Err(MetricsError::LineOutOfBounds {
                row,
                col_start,
                col_end,
                width: cam.width as usize,
                height: cam.height as usize,
            });
        }
    }
    let t = camera_path.len();
    let l = col_end - col_start;
    let mut image = ImageBuf::zeros(t, l, 3);
    for (ti, cam) in camera_path.iter().enumerate() {
        let frame = render_view(cam);
        assert_eq!(frame.channels(), 3, "renderer must produce 3 channels");
        for (xi, x) in (col_start..col_end).enumerate() {
            for c in 0..3 {
                image.set(ti, xi, c, frame.get(row, x, c));
            }
        }
    }
    Ok(EpiStrip { image })
}
