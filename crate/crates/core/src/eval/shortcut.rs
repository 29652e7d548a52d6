use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::EvalError;
use crate::autodiff::{Graph, Tensor};
use crate::dataset::gather;
use crate::mixing::{mix_vars, sample_mask, Codec, FrozenCodec, Mask};
use crate::models::ModelParams;

pub const SENSITIVITY_FLOOR: f64 = 1e-3;
pub const CHANCE_CEILING: f64 = 0.55;
pub const DEFAULT_PAIRS: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct ChunkInfo {
    /// Mean squared pixel change of the decoding when the chunk is swapped.
    pub sensitivity: f64,
    /// Held-out accuracy of the mask classifier on this chunk's bit.
    pub accuracy: f64,
    pub dead: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShortcutReport {
    pub chunks: Vec<ChunkInfo>,
}

impl ShortcutReport {
    pub fn dead_count(&self) -> usize {
        self.chunks.iter().filter(|c| c.dead).count()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("chunk\tsensitivity\tcls_acc\tdead\n");
        for (i, c) in self.chunks.iter().enumerate() {
            let _ = writeln!(out, "{i}\t{:.6e}\t{:.4}\t{}", c.sensitivity, c.accuracy, c.dead as u8);
        }
        out
    }
}

fn decode_features<C: Codec + ?Sized>(codec: &mut C, f: Tensor) -> Result<Tensor, EvalError> {
    let mut g = Graph::new();
    let v = g.constant(f);
    let x = codec.decode(&mut g, v)?;
    Ok(g.value(x).clone())
}

fn mix_rows<C: Codec + ?Sized>(codec: &C, a: &Tensor, b: &Tensor, masks: &[Mask]) -> Result<Tensor, EvalError> {
    let mut g = Graph::new();
    let (va, vb) = (g.constant(a.clone()), g.constant(b.clone()));
    let m = mix_vars(&mut g, codec.layout(), va, vb, masks)?;
    Ok(g.value(m).clone())
}

/// Per-chunk diagnostics over `pairs` random image pairs drawn from
/// `images`. `classify(x1, x2, x3)` returns per-chunk probabilities
/// `[B, n]` that the chunk of `x3` came from `x1`.
pub fn shortcut_report_with<C, F>(
    codec: &mut C,
    mut classify: F,
    images: &Tensor,
    pairs: usize,
    seed: u64,
) -> Result<ShortcutReport, EvalError>
where
    C: Codec + ?Sized,
    F: FnMut(&Tensor, &Tensor, &Tensor) -> Result<Tensor, EvalError>,
{
    let count = images.shape()[0];
    if count < 2 || pairs == 0 {
        return Err(EvalError::InvalidArgument(format!(
            "need at least 2 images and 1 pair, got {count} and {pairs}"
        )));
    }
    let layout = codec.layout();
    let n = layout.chunks;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut ia, mut ib) = (Vec::with_capacity(pairs), Vec::with_capacity(pairs));
    while ia.len() < pairs {
        let a = rng.random_range(0..count);
        let b = rng.random_range(0..count);
        if a != b {
            ia.push(a);
            ib.push(b);
        }
    }
    let xa = gather(images, &ia);
    let xb = gather(images, &ib);
    let mut g = Graph::new();
    let (va, vb) = (g.constant(xa.clone()), g.constant(xb.clone()));
    let fa = codec.encode(&mut g, va)?;
    let fb = codec.encode(&mut g, vb)?;
    let (fa, fb) = (g.value(fa).clone(), g.value(fb).clone());

    let base = decode_features(codec, fa.clone())?;
    let mut chunks = Vec::with_capacity(n);
    let mut sens = Vec::with_capacity(n);
    for i in 0..n {
        // keep everything from a except chunk i
        let mut bits = vec![1u8; n];
        bits[i] = 0;
        let masks = vec![Mask::new(bits)?; pairs];
        let swapped = decode_features(codec, mix_rows(codec, &fa, &fb, &masks)?)?;
        let d: f64 = base
            .data()
            .iter()
            .zip(swapped.data())
            .map(|(p, q)| (p - q) * (p - q))
            .sum();
        sens.push(d / base.numel() as f64);
    }

    let masks: Vec<Mask> = (0..pairs).map(|_| sample_mask(&mut rng, n)).collect::<Result<_, _>>()?;
    let x3 = decode_features(codec, mix_rows(codec, &fa, &fb, &masks)?)?;
    let probs = classify(&xa, &xb, &x3)?;
    if probs.shape() != [pairs, n] {
        return Err(EvalError::InvalidArgument(format!(
            "classifier returned {:?}, expected [{pairs}, {n}]",
            probs.shape()
        )));
    }
    for (i, &s) in sens.iter().enumerate() {
        let hits = (0..pairs)
            .filter(|&p| (probs.data()[p * n + i] > 0.5) == (masks[p].bits()[i] == 1))
            .count();
        let accuracy = hits as f64 / pairs as f64;
        chunks.push(ChunkInfo {
            sensitivity: s,
            accuracy,
            dead: s < SENSITIVITY_FLOOR && accuracy < CHANCE_CEILING,
        });
    }
    Ok(ShortcutReport { chunks })
}

/// [`shortcut_report_with`] on `params`. Encoder and decoder normalize with
/// batch statistics, so that networks whose running statistics were never
/// updated are measured meaningfully; the classifier runs in inference
/// mode.
pub fn shortcut_report(params: &ModelParams, images: &Tensor, pairs: usize, seed: u64) -> Result<ShortcutReport, EvalError> {
    shortcut_report_with(
        &mut FrozenCodec::with_batch_stats(params),
        |a, b, c| Ok(params.classify(a, b, c)?),
        images,
        pairs,
        seed,
    )
}
