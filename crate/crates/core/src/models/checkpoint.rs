//! Binary checkpoint format.
//!
//! ```text
//! "CHUNKMIX1\n"
//! repeated: name_len u32 | name bytes | rank u32 | extents u32* | payload f64*
//! name_len == 0 terminates the tensor list
//! meta_len u32 | UTF-8 metadata (key=value lines, starting with chunks and chunk_dim)
//! ```
//!
//! All integers and floats are little-endian. Batch-norm running statistics
//! are stored as ordinary tensors named `<layer>.running_mean` and
//! `<layer>.running_var`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ChunkLayout, ModelError, ModelParams, Network};
use crate::autodiff::Tensor;

pub const CHECKPOINT_MAGIC: &[u8] = b"CHUNKMIX1\n";

/// Parameters plus the free-form metadata block stored with them.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub metadata: String,
}

fn named_tensors(net: &Network) -> Vec<(String, Tensor)> {
    let mut out: Vec<(String, Tensor)> = net.params().to_vec();
    for (name, s) in net.stats_names().into_iter().zip(net.stats()) {
        out.push((format!("{name}.running_mean"), Tensor::new([s.mean.len()], s.mean.clone()).expect("1-d")));
        out.push((format!("{name}.running_var"), Tensor::new([s.var.len()], s.var.clone()).expect("1-d")));
    }
    out
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> ModelError + '_ {
    move |source| ModelError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_u32<W: Write>(w: &mut W, v: usize) -> std::io::Result<()> {
    let v = u32::try_from(v).map_err(|_| std::io::Error::other("value exceeds u32"))?;
    w.write_all(&v.to_le_bytes())
}

/// Writes `params` followed by `extra_metadata` (appended after the
/// `chunks`/`chunk_dim` lines).
pub fn write_checkpoint<W: Write>(w: &mut W, params: &ModelParams, extra_metadata: &str) -> std::io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    for net in params.networks() {
        for (name, t) in named_tensors(net) {
            write_u32(w, name.len())?;
            w.write_all(name.as_bytes())?;
            write_u32(w, t.rank())?;
            for &e in t.shape() {
                write_u32(w, e)?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    write_u32(w, 0)?;
    let layout = params.layout();
    let mut meta = format!("chunks={}\nchunk_dim={}\n", layout.chunks, layout.dim);
    meta.push_str(extra_metadata);
    write_u32(w, meta.len())?;
    w.write_all(meta.as_bytes())
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &ModelParams, extra_metadata: &str) -> Result<(), ModelError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(&mut w, params, extra_metadata).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

struct Cursor<R> {
    inner: R,
}

impl<R: Read> Cursor<R> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>, ModelError> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => ModelError::Checkpoint(format!("truncated while reading {what}")),
            _ => ModelError::Checkpoint(format!("read error in {what}: {e}")),
        })?;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<usize, ModelError> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

fn meta_value(meta: &str, key: &str) -> Result<usize, ModelError> {
    meta.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .ok_or_else(|| ModelError::Checkpoint(format!("metadata lacks {key}")))?
        .trim()
        .parse()
        .map_err(|_| ModelError::Checkpoint(format!("metadata {key} is not an integer")))
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<Checkpoint, ModelError> {
    let mut c = Cursor { inner: r };
    let magic = c.bytes(CHECKPOINT_MAGIC.len(), "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(ModelError::Checkpoint(format!(
            "bad magic: expected {:?}, found {:?}",
            String::from_utf8_lossy(CHECKPOINT_MAGIC),
            String::from_utf8_lossy(&magic)
        )));
    }
    let mut tensors: BTreeMap<String, Tensor> = BTreeMap::new();
    loop {
        let name_len = c.u32("name length")?;
        if name_len == 0 {
            break;
        }
        let name = String::from_utf8(c.bytes(name_len, "name")?)
            .map_err(|_| ModelError::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = c.u32("rank")?;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32("extent")?);
        }
        let len: usize = shape.iter().product();
        let raw = c.bytes(len * 8, &name)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data)?;
        if tensors.insert(name.clone(), t).is_some() {
            return Err(ModelError::Checkpoint(format!("duplicate tensor {name}")));
        }
    }
    let meta_len = c.u32("metadata length")?;
    let metadata = String::from_utf8(c.bytes(meta_len, "metadata")?)
        .map_err(|_| ModelError::Checkpoint("metadata is not UTF-8".into()))?;
    let layout = ChunkLayout::new(meta_value(&metadata, "chunks")?, meta_value(&metadata, "chunk_dim")?)?;

    let mut params = ModelParams::init(layout, 0);
    for net in [
        &mut params.encoder,
        &mut params.decoder,
        &mut params.discriminator,
        &mut params.classifier,
    ] {
        fill(net, &mut tensors)?;
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(ModelError::Checkpoint(format!("unexpected tensor {extra}")));
    }
    Ok(Checkpoint { params, metadata })
}

fn take(tensors: &mut BTreeMap<String, Tensor>, name: &str, shape: &[usize]) -> Result<Tensor, ModelError> {
    let t = tensors
        .remove(name)
        .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor {name}")))?;
    if t.shape() != shape {
        return Err(ModelError::Checkpoint(format!(
            "tensor {name} has shape {:?}, expected {shape:?}",
            t.shape()
        )));
    }
    Ok(t)
}

fn fill(net: &mut Network, tensors: &mut BTreeMap<String, Tensor>) -> Result<(), ModelError> {
    for (name, slot) in net.params_mut() {
        *slot = take(tensors, name, &slot.shape().to_vec())?;
    }
    let names = net.stats_names();
    for (name, s) in names.iter().zip(net.stats_mut()) {
        let ch = [s.mean.len()];
        s.mean = take(tensors, &format!("{name}.running_mean"), &ch)?.into_data();
        s.var = take(tensors, &format!("{name}.running_var"), &ch)?.into_data();
    }
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, ModelError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    read_checkpoint(BufReader::new(file))
}
