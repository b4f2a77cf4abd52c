//! Portable FloatMap images: `PF` (RGB) and `Pf` (grayscale), rows stored
//! bottom-to-top, little-endian f32 (negative scale field).

use std::io::{BufRead, Read, Write};
use std::path::Path;

use super::IoError;
use crate::image::ImageBuf;

pub fn write_pfm(path: &Path, img: &ImageBuf) -> Result<(), IoError> {
    let channels = img.channels();
    if channels != 1 && channels != 3 {
        return Err(IoError::Format(format!(
            "PFM supports 1 or 3 channels, got {channels}"
        )));
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let tag = if channels == 3 { "PF" } else { "Pf" };
    write!(out, "{}\n{} {}\n-1.0\n", tag, img.width(), img.height())?;
    let mut buf = Vec::with_capacity(img.width() * channels * 4);
    for y in (0..img.height()).rev() {
        buf.clear();
        for x in 0..img.width() {
            for c in 0..channels {
                buf.extend_from_slice(&(img.get(y, x, c) as f32).to_le_bytes());
            }
        }
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_pfm(path: &Path) -> Result<ImageBuf, IoError> {
    let mut input = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut header = String::new();
    input.read_line(&mut header)?;
    let channels = match header.trim() {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(IoError::Format(format!("not a PFM file: {other:?}"))),
    };
    let mut dims = String::new();
    input.read_line(&mut dims)?;
    let mut parts = dims.split_whitespace();
    let w: usize = parts
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| IoError::Format("bad PFM dimensions".into()))?;
    let h: usize = parts
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| IoError::Format("bad PFM dimensions".into()))?;
    let mut scale_line = String::new();
    input.read_line(&mut scale_line)?;
    let scale: f64 = scale_line
        .trim()
        .parse()
        .map_err(|_| IoError::Format("bad PFM scale".into()))?;
    let little_endian = scale < 0.0;
    let mut bytes = vec![0u8; h * w * channels * 4];
    input.read_exact(&mut bytes)?;
    let mut img = ImageBuf::zeros(h, w, channels);
    let mut i = 0;
    for y in (0..h).rev() {
        for x in 0..w {
            for c in 0..channels {
                let b = [bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]];
                let v = if little_endian {
                    f32::from_le_bytes(b)
                } else {
                    f32::from_be_bytes(b)
                };
                img.set(y, x, c, v as f64);
                i += 4;
            }
        }
    }
    Ok(img)
}
