//! Encoder, decoder, discriminator and mask classifier, plus the chunked
//! feature layout they share.

mod checkpoint;
mod feature;
mod nets;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use feature::{ChunkLayout, ChunkedFeature};
pub use nets::{ForwardMode, NetKind, Network, IMAGE_CHANNELS, IMAGE_SIZE, LEAK, PIXELS, WIDTHS};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, Tensor};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Images pushed through a network per inference graph.
const INFER_BATCH: usize = 128;

/// Parameters of all four networks.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    layout: ChunkLayout,
    pub encoder: Network,
    pub decoder: Network,
    pub discriminator: Network,
    pub classifier: Network,
}

impl ModelParams {
    /// Fresh parameters drawn deterministically from `seed`.
    pub fn init(layout: ChunkLayout, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let width = layout.width();
        ModelParams {
            layout,
            encoder: Network::init(NetKind::Encoder, IMAGE_CHANNELS, width, &mut rng),
            decoder: Network::init(NetKind::Decoder, 0, width, &mut rng),
            discriminator: Network::init(NetKind::Discriminator, IMAGE_CHANNELS, 1, &mut rng),
            classifier: Network::init(NetKind::Classifier, 3 * IMAGE_CHANNELS, layout.chunks, &mut rng),
        }
    }

    pub fn layout(&self) -> ChunkLayout {
        self.layout
    }

    pub fn networks(&self) -> [&Network; 4] {
        [&self.encoder, &self.decoder, &self.discriminator, &self.classifier]
    }

    pub fn param_count(&self) -> usize {
        self.networks().iter().map(|n| n.param_count()).sum()
    }

    /// Encoder features `[B, n·d]` in inference mode.
    pub fn encode_tensor(&self, images: &Tensor) -> Result<Tensor, ModelError> {
        check_images(images, IMAGE_CHANNELS)?;
        batched(images, |g, x| {
            let w = self.encoder.bind(g, false);
            self.encoder.forward_infer(g, &w, x)
        })
    }

    pub fn encode(&self, images: &Tensor) -> Result<Vec<ChunkedFeature>, ModelError> {
        let t = self.encode_tensor(images)?;
        t.data()
            .chunks_exact(self.layout.width())
            .map(|row| ChunkedFeature::new(self.layout, row.to_vec()))
            .collect()
    }

    /// Decoded images `[B, 3, 16, 16]` from `[B, n·d]` features.
    pub fn decode_tensor(&self, features: &Tensor) -> Result<Tensor, ModelError> {
        if features.rank() != 2 || features.shape()[1] != self.layout.width() {
            return Err(ModelError::InvalidInput(format!(
                "expected [batch, {}] features, got {:?}",
                self.layout.width(),
                features.shape()
            )));
        }
        batched(features, |g, f| {
            let w = self.decoder.bind(g, false);
            self.decoder.forward_infer(g, &w, f)
        })
    }

    pub fn decode(&self, features: &[ChunkedFeature]) -> Result<Tensor, ModelError> {
        let t = features_to_tensor(self.layout, features)?;
        self.decode_tensor(&t)
    }

    /// Discriminator probability that each image is real.
    pub fn discriminate(&self, images: &Tensor) -> Result<Vec<f64>, ModelError> {
        check_images(images, IMAGE_CHANNELS)?;
        let out = batched(images, |g, x| {
            let w = self.discriminator.bind(g, false);
            let logits = self.discriminator.forward_infer(g, &w, x)?;
            Ok(g.sigmoid(logits))
        })?;
        Ok(out.into_data())
    }

    /// Per-chunk probabilities `[B, n]` that the chunk of `x3` came from
    /// `x1`.
    pub fn classify(&self, x1: &Tensor, x2: &Tensor, x3: &Tensor) -> Result<Tensor, ModelError> {
        for x in [x1, x2, x3] {
            check_images(x, IMAGE_CHANNELS)?;
        }
        if x1.shape() != x2.shape() || x1.shape() != x3.shape() {
            return Err(ModelError::InvalidInput(format!(
                "classifier inputs differ in extent: {:?} {:?} {:?}",
                x1.shape(),
                x2.shape(),
                x3.shape()
            )));
        }
        let mut g = Graph::new();
        let vars = [g.constant(x1.clone()), g.constant(x2.clone()), g.constant(x3.clone())];
        let stacked = g.concat_channels(&vars)?;
        let stacked = g.value(stacked).clone();
        batched(&stacked, |g, x| {
            let w = self.classifier.bind(g, false);
            let logits = self.classifier.forward_infer(g, &w, x)?;
            Ok(g.sigmoid(logits))
        })
    }
}

pub(crate) fn check_images(images: &Tensor, channels: usize) -> Result<(), ModelError> {
    let s = images.shape();
    if s.len() != 4 || s[1] != channels || s[2] != IMAGE_SIZE || s[3] != IMAGE_SIZE {
        return Err(ModelError::InvalidInput(format!(
            "expected [batch, {channels}, {IMAGE_SIZE}, {IMAGE_SIZE}] images, got {s:?}"
        )));
    }
    Ok(())
}

/// Stacks features into a `[B, n·d]` tensor.
pub fn features_to_tensor(layout: ChunkLayout, features: &[ChunkedFeature]) -> Result<Tensor, ModelError> {
    let mut data = Vec::with_capacity(features.len() * layout.width());
    for f in features {
        if f.layout() != layout {
            return Err(ModelError::InvalidInput(format!(
                "feature layout {:?} does not match model layout {layout:?}",
                f.layout()
            )));
        }
        data.extend_from_slice(f.values());
    }
    Ok(Tensor::new([features.len(), layout.width()], data)?)
}

/// Runs `f` over slices of at most `INFER_BATCH` rows and stacks the
/// results.
fn batched<F>(input: &Tensor, f: F) -> Result<Tensor, ModelError>
where
    F: Fn(&mut Graph, crate::autodiff::Var) -> Result<crate::autodiff::Var, ModelError>,
{
    let rows = input.shape()[0];
    let row_len = input.numel() / rows.max(1);
    let mut out_shape = Vec::new();
    let mut data = Vec::new();
    for start in (0..rows).step_by(INFER_BATCH) {
        let end = (start + INFER_BATCH).min(rows);
        let mut shape = input.shape().to_vec();
        shape[0] = end - start;
        let part = Tensor::new(shape, input.data()[start * row_len..end * row_len].to_vec())?;
        let mut g = Graph::new();
        let x = g.constant(part);
        let y = f(&mut g, x)?;
        let value = g.value(y);
        out_shape = value.shape().to_vec();
        data.extend_from_slice(value.data());
    }
    if out_shape.is_empty() {
        return Err(ModelError::InvalidInput("empty batch".into()));
    }
    out_shape[0] = rows;
    Ok(Tensor::new(out_shape, data)?)
}
