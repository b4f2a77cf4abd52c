//! Binary PLY export in the layout common splatting viewers expect:
//! one vertex per Gaussian with x,y,z, f_dc_0..2, opacity, scale_0..2,
//! rot_0..3. Color is stored as degree-0 SH coefficients, opacity as a
//! logit, and scales as logs; import inverts all three.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use nalgebra::{Vector2, Vector3, Vector4};

use super::IoError;
use crate::maps::GaussianSet;

/// Degree-0 spherical-harmonic basis constant.
pub const SH_C0: f64 = 0.282_094_791_77;

const PROPERTIES: [&str; 14] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
];

pub fn write_ply(path: &Path, set: &GaussianSet) -> Result<(), IoError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(
        out,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n",
        set.len()
    )?;
    for p in PROPERTIES {
        writeln!(out, "property float {p}")?;
    }
    writeln!(out, "end_header")?;

    let mut buf = Vec::with_capacity(PROPERTIES.len() * 4);
    for i in 0..set.len() {
        buf.clear();
        let push = |buf: &mut Vec<u8>, v: f64| buf.extend_from_slice(&(v as f32).to_le_bytes());
        for k in 0..3 {
            push(&mut buf, set.positions[i][k]);
        }
        for k in 0..3 {
            push(&mut buf, (set.colors[i][k] - 0.5) / SH_C0);
        }
        let sigma = set.opacities[i];
        push(&mut buf, (sigma / (1.0 - sigma)).ln());
        for k in 0..3 {
            push(&mut buf, set.scales[i][k].ln());
        }
        for k in 0..4 {
            push(&mut buf, set.rotations[i][k]);
        }
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

/// Read back a PLY written by [`write_ply`]. UV coordinates and anchors are
/// not part of the format and come back as zeros.
pub fn read_ply(path: &Path) -> Result<GaussianSet, IoError> {
    let mut input = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut line = String::new();
    input.read_line(&mut line)?;
    if line.trim() != "ply" {
        return Err(IoError::Format("not a PLY file".into()));
    }
    let mut count = 0usize;
    let mut props: Vec<String> = Vec::new();
    loop {
        line.clear();
        if input.read_line(&mut line)? == 0 {
            return Err(IoError::Format("unexpected end of header".into()));
        }
        let t = line.trim();
        if t == "end_header" {
            break;
        } else if let Some(rest) = t.strip_prefix("element vertex ") {
            count = rest
                .parse()
                .map_err(|_| IoError::Format("bad vertex count".into()))?;
        } else if let Some(rest) = t.strip_prefix("property float ") {
            props.push(rest.to_string());
        } else if t.starts_with("format ") && t != "format binary_little_endian 1.0" {
            return Err(IoError::Format(format!("unsupported {t}")));
        }
    }
    let find = |name: &str| -> Result<usize, IoError> {
        props
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| IoError::Format(format!("missing property {name}")))
    };
    let idx: Vec<usize> = PROPERTIES
        .iter()
        .map(|p| find(p))
        .collect::<Result<_, _>>()?;

    let stride = props.len() * 4;
    let mut bytes = vec![0u8; count * stride];
    input.read_exact(&mut bytes)?;

    let mut set = GaussianSet::default();
    for v in 0..count {
        let at = |p: usize| -> f64 {
            let o = v * stride + idx[p] * 4;
            f32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as f64
        };
        set.positions.push(Vector3::new(at(0), at(1), at(2)));
        set.colors
            .push(Vector3::new(at(3), at(4), at(5)).map(|f| f * SH_C0 + 0.5));
        let logit = at(6);
        set.opacities.push(1.0 / (1.0 + (-logit).exp()));
        set.scales
            .push(Vector3::new(at(7).exp(), at(8).exp(), at(9).exp()));
        set.rotations
            .push(Vector4::new(at(10), at(11), at(12), at(13)));
        set.uvs.push(Vector2::zeros());
        set.anchors.push(Vector3::zeros());
    }
    Ok(set)
}
