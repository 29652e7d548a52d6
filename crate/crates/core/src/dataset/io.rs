//! Data files and the manifest.
//!
//! Data file: `"CMDATA1\n"`, count u32, factor count u32, one cardinality
//! u32 per factor, then per image 768 f32 pixels (CHW) and one u32 label
//! per factor. Little-endian throughout.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::{DatasetError, FactorLabels, Split};
use crate::models::PIXELS;

pub const DATA_MAGIC: &[u8] = b"CMDATA1\n";

pub fn header_bytes(factors: usize) -> usize {
    DATA_MAGIC.len() + 4 * (2 + factors)
}

pub fn record_bytes(factors: usize) -> usize {
    4 * (PIXELS + factors)
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_split(path: &Path, split: &Split, cardinalities: &[usize]) -> Result<(), DatasetError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut buf = Vec::with_capacity(header_bytes(cardinalities.len()) + split.len() * record_bytes(cardinalities.len()));
    buf.extend_from_slice(DATA_MAGIC);
    buf.extend_from_slice(&(split.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(cardinalities.len() as u32).to_le_bytes());
    for &c in cardinalities {
        buf.extend_from_slice(&(c as u32).to_le_bytes());
    }
    for i in 0..split.len() {
        for &p in split.pixels(i) {
            buf.extend_from_slice(&(p as f32).to_le_bytes());
        }
        for &l in split.labels()[i].values() {
            buf.extend_from_slice(&(l as u32).to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8], DatasetError> {
        if self.pos + n > self.bytes.len() {
            return Err(DatasetError::Format {
                path: self.path.display().to_string(),
                msg: format!("truncated while reading {what} at byte {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize, DatasetError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

/// Reads one data file, returning the split and its factor cardinalities.
pub fn read_split(path: &Path) -> Result<(Split, Vec<usize>), DatasetError> {
    let mut bytes = Vec::new();
    File::open(path)
        .map_err(io_err(path))?
        .read_to_end(&mut bytes)
        .map_err(io_err(path))?;
    let fmt = |msg: String| DatasetError::Format {
        path: path.display().to_string(),
        msg,
    };
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    let magic = r.take(DATA_MAGIC.len(), "magic")?;
    if magic != DATA_MAGIC {
        return Err(fmt(format!(
            "bad magic: expected {:?}, found {:?}",
            String::from_utf8_lossy(DATA_MAGIC),
            String::from_utf8_lossy(magic)
        )));
    }
    let count = r.u32("count")?;
    let factors = r.u32("factor count")?;
    let mut cards = Vec::with_capacity(factors);
    for _ in 0..factors {
        cards.push(r.u32("cardinality")?);
    }
    let expected = header_bytes(factors) + count * record_bytes(factors);
    if bytes.len() != expected {
        return Err(fmt(format!(
            "{count} records need {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let mut pixels = Vec::with_capacity(count * PIXELS);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let raw = r.take(4 * PIXELS, "pixels")?;
        pixels.extend(raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64));
        let mut l = Vec::with_capacity(factors);
        for (f, &card) in cards.iter().enumerate() {
            let v = r.u32("label")?;
            if v >= card {
                return Err(fmt(format!("image {i}: label {v} of factor {f} exceeds cardinality {card}")));
            }
            l.push(v);
        }
        labels.push(FactorLabels::new(l));
    }
    Ok((Split::new(pixels, labels)?, cards))
}
