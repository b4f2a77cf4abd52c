//! GGUV map checkpoints and GGOS optimizer-state checkpoints.
//!
//! GGUV: magic `GGUV`, u32 version = 1, u32 H, u32 W, u32 C = 14, then
//! H·W·C little-endian f32 values, row-major, channel-last.
//!
//! GGOS: magic `GGOS`, the same header, a u64 step counter, then the first-
//! and second-moment planes in the same layout.

use std::io::{Read, Write};
use std::path::Path;

use super::IoError;
use crate::fit::OptimizerState;
use crate::maps::{AttributeMaps, CHANNELS};

const GGUV_MAGIC: &[u8; 4] = b"GGUV";
const GGOS_MAGIC: &[u8; 4] = b"GGOS";
const VERSION: u32 = 1;

fn write_header<W: Write>(out: &mut W, magic: &[u8; 4], h: u32, w: u32) -> Result<(), IoError> {
    out.write_all(magic)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&h.to_le_bytes())?;
    out.write_all(&w.to_le_bytes())?;
    out.write_all(&(CHANNELS as u32).to_le_bytes())?;
    Ok(())
}

fn read_header<R: Read>(input: &mut R, magic: &[u8; 4]) -> Result<(u32, u32), IoError> {
    let mut m = [0u8; 4];
    input.read_exact(&mut m)?;
    if &m != magic {
        return Err(IoError::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&m),
            String::from_utf8_lossy(magic)
        )));
    }
    let mut u32buf = [0u8; 4];
    input.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(IoError::Format(format!("unsupported version {version}")));
    }
    input.read_exact(&mut u32buf)?;
    let h = u32::from_le_bytes(u32buf);
    input.read_exact(&mut u32buf)?;
    let w = u32::from_le_bytes(u32buf);
    input.read_exact(&mut u32buf)?;
    let c = u32::from_le_bytes(u32buf);
    if c as usize != CHANNELS {
        return Err(IoError::Format(format!(
            "expected {CHANNELS} channels, file has {c}"
        )));
    }
    if h == 0 || w == 0 {
        return Err(IoError::Format("zero-sized maps".into()));
    }
    Ok((h, w))
}

fn write_f32s<W: Write>(out: &mut W, values: &[f32]) -> Result<(), IoError> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

fn read_f32s<R: Read>(input: &mut R, count: usize) -> Result<Vec<f32>, IoError> {
    let mut buf = vec![0u8; count * 4];
    input.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

pub fn write_maps(path: &Path, maps: &AttributeMaps) -> Result<(), IoError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_header(&mut out, GGUV_MAGIC, maps.height(), maps.width())?;
    write_f32s(&mut out, maps.data())?;
    out.flush()?;
    Ok(())
}

pub fn read_maps(path: &Path) -> Result<AttributeMaps, IoError> {
    let mut input = std::io::BufReader::new(std::fs::File::open(path)?);
    let (h, w) = read_header(&mut input, GGUV_MAGIC)?;
    let data = read_f32s(&mut input, h as usize * w as usize * CHANNELS)?;
    AttributeMaps::from_vec(h, w, data).map_err(|e| IoError::Format(e.to_string()))
}

pub fn write_optimizer_state(path: &Path, state: &OptimizerState) -> Result<(), IoError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_header(&mut out, GGOS_MAGIC, state.height, state.width)?;
    out.write_all(&state.step.to_le_bytes())?;
    write_f32s(&mut out, &state.m)?;
    write_f32s(&mut out, &state.v)?;
    out.flush()?;
    Ok(())
}

pub fn read_optimizer_state(path: &Path) -> Result<OptimizerState, IoError> {
    let mut input = std::io::BufReader::new(std::fs::File::open(path)?);
    let (h, w) = read_header(&mut input, GGOS_MAGIC)?;
    let mut u64buf = [0u8; 8];
    input.read_exact(&mut u64buf)?;
    let step = u64::from_le_bytes(u64buf);
    let n = h as usize * w as usize * CHANNELS;
    let m = read_f32s(&mut input, n)?;
    let v = read_f32s(&mut input, n)?;
    Ok(OptimizerState {
        height: h,
        width: w,
        step,
        m,
        v,
    })
}
