//! Binary little-endian PLY in the layout used by 3DGS training code.
//!
//! Opacity is stored as a logit and scale as the natural log of the standard
//! deviation; both are activated on read. Higher-order SH coefficients
//! (`f_rest_*`) are laid out channel-major.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gaussian::{sh_basis_count, sh_degree_for_basis_count, GaussianPrimitive, GaussianSet};

pub const LOGIT_CLAMP: f64 = 15.0;

pub fn logit(alpha: f64) -> f64 {
    (alpha / (1.0 - alpha)).ln().clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn property_names(degree: u32) -> Vec<String> {
    let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rest = 3 * (sh_basis_count(degree) - 1);
    names.extend((0..rest).map(|i| format!("f_rest_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    names
}

fn header(count: usize, degree: u32) -> String {
    let mut h = format!("ply\nformat binary_little_endian 1.0\nelement vertex {count}\n");
    for name in property_names(degree) {
        h.push_str("property float ");
        h.push_str(&name);
        h.push('\n');
    }
    h.push_str("end_header\n");
    h
}

/// Exact size in bytes of an encoded file.
pub fn encoded_size(count: usize, degree: u32) -> usize {
    header(count, degree).len() + count * property_names(degree).len() * 4
}

/// Encodes `set` with SH truncated or zero-padded to `degree`.
pub fn encode_gaussian_ply(set: &GaussianSet, degree: u32) -> Result<Vec<u8>> {
    if degree > 3 {
        return Err(Error::InvalidArgument(format!("SH degree {degree} exceeds 3")));
    }
    let basis = sh_basis_count(degree);
    let mut out = header(set.len(), degree).into_bytes();
    out.reserve(set.len() * property_names(degree).len() * 4);
    let mut put = |v: f64| out.extend_from_slice(&(v as f32).to_le_bytes());
    for g in &set.primitives {
        g.center.iter().for_each(|&v| put(v));
        (0..3).for_each(|_| put(0.0));
        let coeff = |k: usize, c: usize| g.sh.get(k).map_or(0.0, |rgb| rgb[c]);
        (0..3).for_each(|c| put(coeff(0, c)));
        for c in 0..3 {
            for k in 1..basis {
                put(coeff(k, c));
            }
        }
        put(logit(g.opacity));
        g.scale.iter().for_each(|&s| put(s.ln()));
        g.rotation.iter().for_each(|&v| put(v));
    }
    Ok(out)
}

pub fn write_gaussian_ply(set: &GaussianSet, path: impl AsRef<Path>, degree: u32) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_gaussian_ply(set, degree)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_gaussian_ply(path: impl AsRef<Path>) -> Result<GaussianSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_gaussian_ply(&bytes)
}

pub fn decode_gaussian_ply(bytes: &[u8]) -> Result<GaussianSet> {
    const END: &[u8] = b"end_header\n";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| Error::Format("missing end_header".into()))?;
    let header = std::str::from_utf8(&bytes[..end])
        .map_err(|_| Error::Format("header is not UTF-8".into()))?;
    let body = &bytes[end + END.len()..];

    let mut lines = header.lines().map(str::trim).filter(|l| !l.is_empty());
    if lines.next() != Some("ply") {
        return Err(Error::Format("missing 'ply' magic".into()));
    }
    let mut count: Option<usize> = None;
    let mut names: Vec<String> = Vec::new();
    let mut in_vertex = false;
    for line in lines {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["format", "binary_little_endian", _] => {}
            ["format", fmt, _] => return Err(Error::UnsupportedFormat(format!("format {fmt}"))),
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", "vertex", n] => {
                count = Some(
                    n.parse()
                        .map_err(|_| Error::Format(format!("bad vertex count '{n}'")))?,
                );
                in_vertex = true;
            }
            ["element", name, _] => {
                return Err(Error::UnsupportedFormat(format!("element '{name}'")));
            }
            ["property", ty, name] if in_vertex => {
                if !matches!(*ty, "float" | "float32") {
                    return Err(Error::UnsupportedFormat(format!(
                        "property '{name}' has type {ty}, only float is supported"
                    )));
                }
                names.push(name.to_string());
            }
            _ => return Err(Error::Format(format!("unexpected header line '{line}'"))),
        }
    }
    let count = count.ok_or_else(|| Error::Format("missing 'element vertex'".into()))?;
    let find = |name: &str| -> Result<usize> {
        names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Format(format!("missing required property '{name}'")))
    };
    let idx = |list: &[&str]| -> Result<Vec<usize>> { list.iter().map(|n| find(n)).collect() };
    let center = idx(&["x", "y", "z"])?;
    let dc = idx(&["f_dc_0", "f_dc_1", "f_dc_2"])?;
    let opacity = find("opacity")?;
    let scale = idx(&["scale_0", "scale_1", "scale_2"])?;
    let rot = idx(&["rot_0", "rot_1", "rot_2", "rot_3"])?;
    let rest_count = names.iter().filter(|n| n.starts_with("f_rest_")).count();
    if rest_count % 3 != 0 {
        return Err(Error::Format(format!("{rest_count} f_rest properties is not a multiple of 3")));
    }
    let basis = rest_count / 3 + 1;
    if sh_degree_for_basis_count(basis).is_none() {
        return Err(Error::Format(format!("{rest_count} f_rest properties match no SH degree")));
    }
    let rest: Vec<usize> = (0..rest_count)
        .map(|i| find(&format!("f_rest_{i}")))
        .collect::<Result<_>>()?;

    let stride = names.len() * 4;
    if body.len() < count * stride {
        return Err(Error::Format(format!(
            "body holds {} bytes, expected {}",
            body.len(),
            count * stride
        )));
    }
    let primitives = body
        .chunks_exact(stride)
        .take(count)
        .map(|rec| {
            let f = |i: usize| f32::from_le_bytes(rec[i * 4..i * 4 + 4].try_into().unwrap()) as f64;
            let mut sh = vec![[0.0; 3]; basis];
            for c in 0..3 {
                sh[0][c] = f(dc[c]);
                for k in 1..basis {
                    sh[k][c] = f(rest[c * (basis - 1) + k - 1]);
                }
            }
            let q = [f(rot[0]), f(rot[1]), f(rot[2]), f(rot[3])];
            let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            let rotation = if norm > 0.0 { q.map(|v| v / norm) } else { q };
            GaussianPrimitive {
                center: [f(center[0]), f(center[1]), f(center[2])],
                opacity: sigmoid(f(opacity)),
                scale: [f(scale[0]).exp(), f(scale[1]).exp(), f(scale[2]).exp()],
                rotation,
                sh,
            }
        })
        .collect();
    Ok(GaussianSet::new(primitives))
}
