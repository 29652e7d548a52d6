use std::path::Path;

use super::EvalError;
use crate::autodiff::{Graph, Tensor};
use crate::mixing::{mix_vars, Codec, FrozenCodec, Mask};
use crate::models::{ModelParams, IMAGE_CHANNELS, IMAGE_SIZE, PIXELS};

/// Grid image `[3, (R+1)·16, (C+1)·16]`.
///
/// Cell `(0, j)` shows column source `j`, cell `(i, 0)` row source `i`, and
/// cell `(i, j)` decodes the feature of row source `i` with chunk
/// `chunk` replaced by that of column source `j`. The corner stays black.
pub fn transfer_grid_with<C: Codec + ?Sized>(
    codec: &mut C,
    rows: &Tensor,
    cols: &Tensor,
    chunk: usize,
) -> Result<Tensor, EvalError> {
    let layout = codec.layout();
    if chunk >= layout.chunks {
        return Err(EvalError::InvalidArgument(format!(
            "chunk {chunk} out of range 0..{}",
            layout.chunks
        )));
    }
    let (r, c) = (rows.shape()[0], cols.shape()[0]);
    if r == 0 || c == 0 {
        return Err(EvalError::InvalidArgument("grid needs at least one row and one column".into()));
    }
    let mut g = Graph::new();
    let rv = g.constant(rows.clone());
    let cv = g.constant(cols.clone());
    let fr = codec.encode(&mut g, rv)?;
    let fc = codec.encode(&mut g, cv)?;
    let width = layout.width();
    let (fr, fc) = (g.value(fr).clone(), g.value(fc).clone());
    let mut top = Vec::with_capacity(r * c * width);
    let mut left = Vec::with_capacity(r * c * width);
    for i in 0..r {
        for j in 0..c {
            top.extend_from_slice(&fc.data()[j * width..(j + 1) * width]);
            left.extend_from_slice(&fr.data()[i * width..(i + 1) * width]);
        }
    }
    let mut bits = vec![0u8; layout.chunks];
    bits[chunk] = 1;
    let mask = Mask::new(bits)?;
    let masks = vec![mask; r * c];
    let a = g.constant(Tensor::new([r * c, width], top)?);
    let b = g.constant(Tensor::new([r * c, width], left)?);
    let mixed = mix_vars(&mut g, layout, a, b, &masks)?;
    let cells = codec.decode(&mut g, mixed)?;
    let cells = g.value(cells).clone();

    let (h, w) = ((r + 1) * IMAGE_SIZE, (c + 1) * IMAGE_SIZE);
    let mut out = Tensor::zeros([IMAGE_CHANNELS, h, w]);
    let mut paste = |cell_row: usize, cell_col: usize, px: &[f64]| {
        let data = out.data_mut();
        for ch in 0..IMAGE_CHANNELS {
            for y in 0..IMAGE_SIZE {
                for x in 0..IMAGE_SIZE {
                    let v = px[ch * IMAGE_SIZE * IMAGE_SIZE + y * IMAGE_SIZE + x];
                    data[ch * h * w + (cell_row * IMAGE_SIZE + y) * w + cell_col * IMAGE_SIZE + x] = v;
                }
            }
        }
    };
    for j in 0..c {
        paste(0, j + 1, &cols.data()[j * PIXELS..(j + 1) * PIXELS]);
    }
    for i in 0..r {
        paste(i + 1, 0, &rows.data()[i * PIXELS..(i + 1) * PIXELS]);
        for j in 0..c {
            let k = i * c + j;
            paste(i + 1, j + 1, &cells.data()[k * PIXELS..(k + 1) * PIXELS]);
        }
    }
    Ok(out)
}

/// [`transfer_grid_with`] on trained networks in inference mode.
pub fn transfer_grid(params: &ModelParams, rows: &Tensor, cols: &Tensor, chunk: usize) -> Result<Tensor, EvalError> {
    transfer_grid_with(&mut FrozenCodec::new(params), rows, cols, chunk)
}

/// `[0, 1]` to a byte, rounding half up.
pub fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Binary PPM (P6, maxval 255) of a `[3, H, W]` image.
pub fn ppm_bytes(image: &Tensor) -> Result<Vec<u8>, EvalError> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(EvalError::InvalidArgument(format!("expected a [3, H, W] image, got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * h * w);
    let d = image.data();
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out.push(to_byte(d[c * h * w + y * w + x]));
            }
        }
    }
    Ok(out)
}

/// Parses a P6 file written by [`ppm_bytes`] into `(width, height, rgb)`.
pub fn parse_ppm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), EvalError> {
    let bad = |m: &str| EvalError::InvalidArgument(format!("ppm: {m}"));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).to_string());
    }
    pos += 1;
    if fields[0] != "P6" || fields[3] != "255" {
        return Err(bad("expected P6 with maxval 255"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("height"))?;
    let body = bytes.get(pos..).ok_or_else(|| bad("missing body"))?;
    if body.len() != 3 * w * h {
        return Err(bad("body length"));
    }
    Ok((w, h, body.to_vec()))
}

pub fn write_ppm(path: &Path, image: &Tensor) -> Result<(), EvalError> {
    std::fs::write(path, ppm_bytes(image)?).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}
