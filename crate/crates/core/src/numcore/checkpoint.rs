//! Binary checkpoint format.
//!
//! ```text
//! GRELA1\n
//! <name> <ndim> <d1> ... <dk>\n   followed by d1*...*dk little-endian f64
//! ... one block per parameter, sorted by name
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{GresError, Result};

pub const MAGIC: &[u8] = b"GRELA1\n";

pub fn encode<'a>(entries: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    let mut entries: Vec<_> = entries.into_iter().collect();
    entries.sort_by(|a, b| a.0.cmp(b.0));
    for (name, tensor) in entries {
        let dims: Vec<String> = tensor.shape().iter().map(ToString::to_string).collect();
        writeln!(out, "{} {} {}", name, dims.len(), dims.join(" ")).expect("vec write");
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bad = |reason: String| GresError::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut rest = bytes
        .strip_prefix(MAGIC)
        .ok_or_else(|| bad("missing GRELA1 magic".into()))?;
    let mut out: Vec<(String, Tensor)> = Vec::new();
    while !rest.is_empty() {
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("unterminated header line".into()))?;
        let header =
            std::str::from_utf8(&rest[..nl]).map_err(|_| bad("header is not utf-8".into()))?;
        rest = &rest[nl + 1..];
        let mut fields = header.split(' ');
        let name = fields
            .next()
            .filter(|n| !n.is_empty())
            .ok_or_else(|| bad("empty name".into()))?;
        let ndim: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| bad(format!("bad ndim for {name}")))?;
        let shape: Vec<usize> = fields
            .map(|f| f.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad(format!("bad dimension for {name}")))?;
        if shape.len() != ndim {
            return Err(bad(format!("{name}: ndim {ndim} but {} dims", shape.len())));
        }
        let numel: usize = shape.iter().product();
        let nbytes = numel * 8;
        if rest.len() < nbytes {
            return Err(bad(format!("{name}: truncated data")));
        }
        let data = rest[..nbytes]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        rest = &rest[nbytes..];
        if out.iter().any(|(n, _)| n == name) {
            return Err(bad(format!("duplicate parameter {name}")));
        }
        let tensor = Tensor::new(shape, data).map_err(|e| bad(e.to_string()))?;
        out.push((name.to_string(), tensor));
    }
    Ok(out)
}

pub fn save(params: &ParamSet, path: &Path) -> Result<()> {
    let bytes = encode(params.sorted().map(|p| (p.name.as_str(), &p.tensor)));
    fs::write(path, bytes).map_err(|e| GresError::io(path, e))
}

pub fn read(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = fs::read(path).map_err(|e| GresError::io(path, e))?;
    decode(&bytes, path)
}

/// Loads a checkpoint into an already-registered parameter set.
pub fn load_into(params: &mut ParamSet, path: &Path) -> Result<()> {
    params.assign(read(path)?)
}
