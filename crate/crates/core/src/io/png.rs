//! 8-bit PNG output of linear [0,1] images, sRGB-encoded after clamping,
//! plus the inverse decode for reading fit targets.

use std::path::Path;

use super::IoError;
use crate::image::ImageBuf;

/// Linear [0,1] to the sRGB transfer curve.
#[inline]
pub fn srgb_encode(linear: f64) -> f64 {
    let c = linear.clamp(0.0, 1.0);
    if c <= 0.003_130_8 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

#[inline]
pub fn srgb_decode(encoded: f64) -> f64 {
    let c = encoded.clamp(0.0, 1.0);
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

/// Write a 3-channel linear image as an sRGB PNG, or a 1-channel image as a
/// grayscale PNG.
pub fn write_png(path: &Path, img: &ImageBuf) -> Result<(), IoError> {
    let (h, w) = (img.height() as u32, img.width() as u32);
    match img.channels() {
        3 => {
            let mut out = image::RgbImage::new(w, h);
            for y in 0..img.height() {
                for x in 0..img.width() {
                    let px = img.pixel(y, x);
                    out.put_pixel(
                        x as u32,
                        y as u32,
                        image::Rgb([
                            to_u8(px[0]),
                            to_u8(px[1]),
                            to_u8(px[2]),
                        ]),
                    );
                }
            }
            out.save(path)?;
        }
        1 => {
            let mut out = image::GrayImage::new(w, h);
            for y in 0..img.height() {
                for x in 0..img.width() {
                    out.put_pixel(x as u32, y as u32, image::Luma([to_u8(img.get(y, x, 0))]));
                }
            }
            out.save(path)?;
        }
        c => {
            return Err(IoError::Format(format!(
                "PNG output supports 1 or 3 channels, got {c}"
            )))
        }
    }
    Ok(())
}

#[inline]
fn to_u8(linear: f64) -> u8 {
    (srgb_encode(linear) * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Read a PNG back into a linear 3-channel image.
pub fn read_png(path: &Path) -> Result<ImageBuf, IoError> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = ImageBuf::zeros(h, w, 3);
    for y in 0..h {
        for x in 0..w {
            let p = img.get_pixel(x as u32, y as u32);
            for c in 0..3 {
                out.set(y, x, c, srgb_decode(p[c] as f64 / 255.0));
            }
        }
    }
    Ok(out)
}
