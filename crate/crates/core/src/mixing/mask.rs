use rand::Rng;

use super::MixError;
use crate::models::{ChunkLayout, ChunkedFeature};

/// One selector bit per chunk: 1 keeps the chunk of the first operand.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask {
    bits: Vec<u8>,
}

impl Mask {
    pub fn new(bits: Vec<u8>) -> Result<Self, MixError> {
        if bits.is_empty() {
            return Err(MixError::InvalidArgument("mask needs at least one bit".into()));
        }
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(MixError::InvalidArgument(format!("mask bit {b} is not 0 or 1")));
        }
        Ok(Mask { bits })
    }

    pub fn ones(n: usize) -> Self {
        Mask { bits: vec![1; n.max(1)] }
    }

    pub fn zeros(n: usize) -> Self {
        Mask { bits: vec![0; n.max(1)] }
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Flat selector of length `n·d`, each bit repeated `d` times.
    pub fn expand(&self, d: usize) -> Vec<f64> {
        self.bits
            .iter()
            .flat_map(|&b| std::iter::repeat_n(b as f64, d))
            .collect()
    }

    pub fn complement(&self) -> Mask {
        Mask {
            bits: self.bits.iter().map(|b| 1 - b).collect(),
        }
    }
}

/// `n` independent fair bits.
pub fn sample_mask<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Result<Mask, MixError> {
    if n == 0 {
        return Err(MixError::InvalidArgument("mask needs at least one bit".into()));
    }
    Ok(Mask {
        bits: (0..n).map(|_| rng.random_bool(0.5) as u8).collect(),
    })
}

fn select(a: &ChunkedFeature, b: &ChunkedFeature, m: &Mask) -> Result<ChunkedFeature, MixError> {
    if a.layout() != b.layout() {
        return Err(MixError::LayoutMismatch {
            lhs: a.layout(),
            rhs: b.layout(),
        });
    }
    if m.len() != a.chunks() {
        return Err(MixError::MaskLength {
            mask: m.len(),
            chunks: a.chunks(),
        });
    }
    let mut out = b.clone();
    for (i, &bit) in m.bits().iter().enumerate() {
        if bit == 1 {
            out.chunk_mut(i).copy_from_slice(a.chunk(i));
        }
    }
    Ok(out)
}

/// Chunk `i` of `f1` where `m[i] = 1`, of `f2` otherwise.
pub fn mix(f1: &ChunkedFeature, f2: &ChunkedFeature, m: &Mask) -> Result<ChunkedFeature, MixError> {
    select(f1, f2, m)
}

/// Chunk `i` of `f3` where `m[i] = 1`, of `f1` otherwise.
pub fn unmix(f3: &ChunkedFeature, f1: &ChunkedFeature, m: &Mask) -> Result<ChunkedFeature, MixError> {
    select(f3, f1, m)
}

/// Stacked selectors `[B, n·d]` for a batch of masks.
pub(crate) fn selector(layout: ChunkLayout, masks: &[Mask]) -> Result<Vec<f64>, MixError> {
    let mut out = Vec::with_capacity(masks.len() * layout.width());
    for m in masks {
        if m.len() != layout.chunks {
            return Err(MixError::MaskLength {
                mask: m.len(),
                chunks: layout.chunks,
            });
        }
        out.extend(m.expand(layout.dim));
    }
    Ok(out)
}
