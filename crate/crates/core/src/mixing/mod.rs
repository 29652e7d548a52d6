//! The mix/unmix cycle and its losses.
//!
//! ```
//! use chunkmix::mixing::{mix, unmix, Mask};
//! use chunkmix::models::ChunkedFeature;
//!
//! let f1 = ChunkedFeature::from_chunks(&[&[1.0, 1.0], &[2.0, 2.0]]).unwrap();
//! let f2 = ChunkedFeature::from_chunks(&[&[3.0, 3.0], &[4.0, 4.0]]).unwrap();
//! let m = Mask::new(vec![1, 0]).unwrap();
//! let f12 = mix(&f1, &f2, &m).unwrap();
//! assert_eq!(f12.values(), &[1.0, 1.0, 4.0, 4.0]);
//! assert_eq!(unmix(&f12, &f1, &m).unwrap(), f1);
//! ```

mod check;
mod cycle;
mod losses;
mod mask;
#[cfg(test)]
mod tests;

pub use check::cycle_gradient_check;
pub use cycle::{
    forward_cycle, forward_mix, mix_vars, run_cycle, Codec, CycleOutput, CycleTensors, FrozenCodec, IdentityCodec, MixOutput,
    NetCodec,
};
pub use losses::{
    d_loss_logits, g_loss_logits, loss_cls, loss_cls_logits, loss_gan, loss_gan_logits, loss_mix, total_objective,
    ClsLoss, GanLosses, LossTerms, Toggles, Weights, PROB_CLAMP,
};
pub use mask::{mix, sample_mask, unmix, Mask};

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::models::{ChunkLayout, ModelError};

#[derive(Debug, Error)]
pub enum MixError {
    #[error("chunk layouts differ: {lhs:?} vs {rhs:?}")]
    LayoutMismatch { lhs: ChunkLayout, rhs: ChunkLayout },
    #[error("mask has {mask} bits for {chunks} chunks")]
    MaskLength { mask: usize, chunks: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{what} {value} outside (0, 1)")]
    OutOfRange { what: String, value: f64 },
    #[error("{0} is enabled but was not computed")]
    MissingTerm(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}
