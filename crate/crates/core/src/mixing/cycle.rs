use super::mask::selector;
use super::{Mask, MixError};
use crate::autodiff::{Graph, Tensor, Var};
use crate::models::{ChunkLayout, ForwardMode, ModelParams, Network};


/// Image ↔ chunked-feature maps used by the cycle.
pub trait Codec {
    fn layout(&self) -> ChunkLayout;
    /// `[B, C, H, W]` images to `[B, n·d]` features.
    fn encode(&mut self, g: &mut Graph, x: Var) -> Result<Var, MixError>;
    /// `[B, n·d]` features to images.
    fn decode(&mut self, g: &mut Graph, f: Var) -> Result<Var, MixError>;
}

/// Encoder and decoder networks with parameters already bound to a graph.
pub struct NetCodec<'a> {
    layout: ChunkLayout,
    encoder: &'a mut Network,
    enc_w: &'a [Var],
    decoder: &'a mut Network,
    dec_w: &'a [Var],
    mode: ForwardMode,
}

impl<'a> NetCodec<'a> {
    pub fn new(
        layout: ChunkLayout,
        encoder: &'a mut Network,
        enc_w: &'a [Var],
        decoder: &'a mut Network,
        dec_w: &'a [Var],
        mode: ForwardMode,
    ) -> Self {
        NetCodec {
            layout,
            encoder,
            enc_w,
            decoder,
            dec_w,
            mode,
        }
    }
}

impl Codec for NetCodec<'_> {
    fn layout(&self) -> ChunkLayout {
        self.layout
    }

    fn encode(&mut self, g: &mut Graph, x: Var) -> Result<Var, MixError> {
        Ok(self.encoder.forward(g, self.enc_w, x, self.mode)?)
    }

    fn decode(&mut self, g: &mut Graph, f: Var) -> Result<Var, MixError> {
        Ok(self.decoder.forward(g, self.dec_w, f, self.mode)?)
    }
}

/// Fixed networks, bound into whichever graph they are called with.
#[derive(Clone, Copy, Debug)]
pub struct FrozenCodec<'a> {
    params: &'a ModelParams,
    batch_stats: bool,
}

impl<'a> FrozenCodec<'a> {
    /// Batch norm uses the stored running statistics.
    pub fn new(params: &'a ModelParams) -> Self {
        FrozenCodec {
            params,
            batch_stats: false,
        }
    }

    /// Batch norm uses the statistics of each batch passed in.
    pub fn with_batch_stats(params: &'a ModelParams) -> Self {
        FrozenCodec {
            params,
            batch_stats: true,
        }
    }
}

impl Codec for FrozenCodec<'_> {
    fn layout(&self) -> ChunkLayout {
        self.params.layout()
    }

    fn encode(&mut self, g: &mut Graph, x: Var) -> Result<Var, MixError> {
        let net = &self.params.encoder;
        let w = net.bind(g, false);
        Ok(if self.batch_stats {
            net.forward_batch_stats(g, &w, x)?
        } else {
            net.forward_infer(g, &w, x)?
        })
    }

    fn decode(&mut self, g: &mut Graph, f: Var) -> Result<Var, MixError> {
        let net = &self.params.decoder;
        let w = net.bind(g, false);
        Ok(if self.batch_stats {
            net.forward_batch_stats(g, &w, f)?
        } else {
            net.forward_infer(g, &w, f)?
        })
    }
}

/// Flattening stub: the feature is the image itself.
#[derive(Clone, Debug)]
pub struct IdentityCodec {
    layout: ChunkLayout,
    image: Vec<usize>,
}

impl IdentityCodec {
    /// `image` is the per-sample extent, whose product must equal `n·d`.
    pub fn new(layout: ChunkLayout, image: &[usize]) -> Result<Self, MixError> {
        let size: usize = image.iter().product();
        if size != layout.width() {
            return Err(MixError::InvalidArgument(format!(
                "identity codec needs n*d = {size}, got {}",
                layout.width()
            )));
        }
        Ok(IdentityCodec {
            layout,
            image: image.to_vec(),
        })
    }
}

impl Codec for IdentityCodec {
    fn layout(&self) -> ChunkLayout {
        self.layout
    }

    fn encode(&mut self, g: &mut Graph, x: Var) -> Result<Var, MixError> {
        let batch = g.shape(x)[0];
        Ok(g.reshape(x, &[batch, self.layout.width()])?)
    }

    fn decode(&mut self, g: &mut Graph, f: Var) -> Result<Var, MixError> {
        let mut shape = vec![g.shape(f)[0]];
        shape.extend_from_slice(&self.image);
        Ok(g.reshape(f, &shape)?)
    }
}

/// `S ⊙ a + (1 − S) ⊙ b` with `S` the expanded masks, one per row.
pub fn mix_vars(g: &mut Graph, layout: ChunkLayout, a: Var, b: Var, masks: &[Mask]) -> Result<Var, MixError> {
    let expected = [masks.len(), layout.width()];
    for v in [a, b] {
        if g.shape(v) != expected {
            return Err(MixError::Shape(format!(
                "expected features {expected:?}, got {:?}",
                g.shape(v)
            )));
        }
    }
    let sel = selector(layout, masks)?;
    let inv: Vec<f64> = sel.iter().map(|s| 1.0 - s).collect();
    let sel = g.constant(Tensor::new(expected, sel)?);
    let inv = g.constant(Tensor::new(expected, inv)?);
    let ka = g.mul(a, sel)?;
    let kb = g.mul(b, inv)?;
    Ok(g.add(ka, kb)?)
}

/// Steps one to three: `f1`, `f2`, their mix and its decoding `x3`.
#[derive(Clone, Copy, Debug)]
pub struct MixOutput {
    pub f1: Var,
    pub f2: Var,
    pub f12: Var,
    pub x3: Var,
}

/// All intermediates of the six-step cycle.
#[derive(Clone, Copy, Debug)]
pub struct CycleOutput {
    pub f1: Var,
    pub f2: Var,
    pub f12: Var,
    pub x3: Var,
    pub f3: Var,
    pub f31: Var,
    pub x4: Var,
}

fn check_pair(g: &Graph, x1: Var, x2: Var, masks: &[Mask]) -> Result<(), MixError> {
    if g.shape(x1) != g.shape(x2) {
        return Err(MixError::Shape(format!(
            "image batches differ: {:?} vs {:?}",
            g.shape(x1),
            g.shape(x2)
        )));
    }
    if g.shape(x1).first() != Some(&masks.len()) {
        return Err(MixError::Shape(format!(
            "{} masks for a batch of {:?}",
            masks.len(),
            g.shape(x1)
        )));
    }
    Ok(())
}

pub fn forward_mix<C: Codec + ?Sized>(
    codec: &mut C,
    g: &mut Graph,
    x1: Var,
    x2: Var,
    masks: &[Mask],
) -> Result<MixOutput, MixError> {
    check_pair(g, x1, x2, masks)?;
    let layout = codec.layout();
    let f1 = codec.encode(g, x1)?;
    let f2 = codec.encode(g, x2)?;
    let f12 = mix_vars(g, layout, f1, f2, masks)?;
    let x3 = codec.decode(g, f12)?;
    Ok(MixOutput { f1, f2, f12, x3 })
}

/// Encode, mix, decode, re-encode, unmix with `f1`, decode.
pub fn forward_cycle<C: Codec + ?Sized>(
    codec: &mut C,
    g: &mut Graph,
    x1: Var,
    x2: Var,
    masks: &[Mask],
) -> Result<CycleOutput, MixError> {
    let MixOutput { f1, f2, f12, x3 } = forward_mix(codec, g, x1, x2, masks)?;
    let f3 = codec.encode(g, x3)?;
    let f31 = mix_vars(g, codec.layout(), f3, f1, masks)?;
    let x4 = codec.decode(g, f31)?;
    Ok(CycleOutput {
        f1,
        f2,
        f12,
        x3,
        f3,
        f31,
        x4,
    })
}

/// Cycle intermediates as plain tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct CycleTensors {
    pub f1: Tensor,
    pub f2: Tensor,
    pub f12: Tensor,
    pub x3: Tensor,
    pub f3: Tensor,
    pub f31: Tensor,
    pub x4: Tensor,
}

impl CycleTensors {
    pub fn from_graph(g: &Graph, c: &CycleOutput) -> Self {
        let v = |x: Var| g.value(x).clone();
        CycleTensors {
            f1: v(c.f1),
            f2: v(c.f2),
            f12: v(c.f12),
            x3: v(c.x3),
            f3: v(c.f3),
            f31: v(c.f31),
            x4: v(c.x4),
        }
    }
}

/// Runs the cycle on trained networks with running batch-norm statistics.
pub fn run_cycle(params: &ModelParams, x1: &Tensor, x2: &Tensor, masks: &[Mask]) -> Result<CycleTensors, MixError> {
    let mut g = Graph::new();
    let a = g.constant(x1.clone());
    let b = g.constant(x2.clone());
    let mut codec = FrozenCodec::new(params);
    let out = forward_cycle(&mut codec, &mut g, a, b, masks)?;
    Ok(CycleTensors::from_graph(&g, &out))
}
