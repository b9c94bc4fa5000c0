//! Flat binary checkpoint files.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! u64                      layer count L
//! L × (u64 rows, u64 cols) weight shape of each layer
//! per layer:
//!   rows·cols × f64        weight, row-major
//!   cols × f64             bias
//! ```
//!
//! The split index and dropout rate are not stored; callers supply them when
//! rebuilding an [`MlpParams`].

use std::path::Path;

use super::{Layer, MlpParams};
use crate::error::{Error, Result};
use crate::ndcore::Matrix;

pub fn encode(params: &MlpParams) -> Vec<u8> {
    let layers = params.layers();
    let mut out = Vec::with_capacity(8 + 16 * layers.len() + 8 * params.param_count());
    out.extend_from_slice(&(layers.len() as u64).to_le_bytes());
    for l in layers {
        out.extend_from_slice(&(l.in_dim() as u64).to_le_bytes());
        out.extend_from_slice(&(l.out_dim() as u64).to_le_bytes());
    }
    for l in layers {
        for v in l.weight.as_slice().iter().chain(&l.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn u64(&mut self, what: &str) -> Result<u64> {
        let end = self.pos + 8;
        let chunk = self.bytes.get(self.pos..end).ok_or_else(|| {
            Error::format(
                format!("byte {}", self.pos),
                format!("truncated checkpoint while reading {what}"),
            )
        })?;
        self.pos = end;
        Ok(u64::from_le_bytes(chunk.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        let at = self.pos;
        let v = f64::from_bits(self.u64("parameter")?);
        if !v.is_finite() {
            return Err(Error::format(
                format!("byte {at}"),
                "non-finite parameter value",
            ));
        }
        Ok(v)
    }
}

/// Parses the layer list. Rejects truncated input, trailing bytes, zero-sized
/// layers and non-finite values.
pub fn decode_layers(bytes: &[u8]) -> Result<Vec<Layer>> {
    let mut r = Reader { bytes, pos: 0 };
    let count = r.u64("layer count")?;
    // each layer needs at least 16 header bytes; bound before allocating
    if count == 0 || count > (bytes.len() as u64) / 16 {
        return Err(Error::format(
            "byte 0",
            format!("implausible layer count {count} for a {}-byte file", bytes.len()),
        ));
    }
    let mut shapes = Vec::with_capacity(count as usize);
    let mut payload: u64 = 0;
    for i in 0..count {
        let at = r.pos;
        let rows = r.u64("layer rows")?;
        let cols = r.u64("layer cols")?;
        if rows == 0 || cols == 0 {
            return Err(Error::format(
                format!("byte {at}"),
                format!("layer {i} has empty shape {rows}x{cols}"),
            ));
        }
        let n = rows
            .checked_mul(cols)
            .and_then(|w| w.checked_add(cols))
            .and_then(|n| n.checked_mul(8))
            .and_then(|b| payload.checked_add(b))
            .ok_or_else(|| Error::format(format!("byte {at}"), "layer shape overflows"))?;
        payload = n;
        shapes.push((rows as usize, cols as usize));
    }
    let expected = (r.pos as u64).checked_add(payload);
    if expected != Some(bytes.len() as u64) {
        return Err(Error::format(
            format!("byte {}", bytes.len().min(r.pos)),
            format!(
                "header describes {} payload bytes but {} remain",
                payload,
                bytes.len() - r.pos
            ),
        ));
    }
    let mut layers = Vec::with_capacity(shapes.len());
    for (rows, cols) in shapes {
        let mut w = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            w.push(r.f64()?);
        }
        let mut b = Vec::with_capacity(cols);
        for _ in 0..cols {
            b.push(r.f64()?);
        }
        layers.push(Layer {
            weight: Matrix::from_vec(rows, cols, w)?,
            bias: b,
        });
    }
    Ok(layers)
}

pub fn decode(bytes: &[u8], split_index: usize, dropout_rate: f64) -> Result<MlpParams> {
    MlpParams::from_layers(decode_layers(bytes)?, split_index, dropout_rate)
}

pub fn save(path: &Path, params: &MlpParams) -> Result<()> {
    std::fs::write(path, encode(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path, split_index: usize, dropout_rate: f64) -> Result<MlpParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, split_index, dropout_rate).map_err(|e| e.context(path.display().to_string()))
}
