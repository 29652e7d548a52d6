//! Desk-scale convolutional networks for 16×16 RGB images.
//!
//! Encoder, discriminator and classifier share one topology: three
//! stride-2 3×3 convolutions (16→8→4→2, widths 32/64/128), each followed by
//! batch norm and a leaky ReLU, then a dense layer. The decoder runs the
//! same stages backwards with nearest-neighbour upsampling in front of each
//! stride-1 convolution and ends in a sigmoid.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ModelError;
use crate::autodiff::{BatchNormMode, Graph, RunningStats, Tensor, Var};

pub const IMAGE_SIZE: usize = 16;
pub const IMAGE_CHANNELS: usize = 3;
pub const PIXELS: usize = IMAGE_CHANNELS * IMAGE_SIZE * IMAGE_SIZE;
pub const WIDTHS: [usize; 3] = [32, 64, 128];
pub const LEAK: f64 = 0.2;
const INIT_STD: f64 = 0.02;
/// Spatial extent after the three stride-2 stages.
const BOTTLENECK: usize = IMAGE_SIZE / 8;
const FLAT: usize = WIDTHS[2] * BOTTLENECK * BOTTLENECK;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NetKind {
    Encoder,
    Decoder,
    Discriminator,
    Classifier,
}

impl NetKind {
    pub fn prefix(self) -> &'static str {
        match self {
            NetKind::Encoder => "enc",
            NetKind::Decoder => "dec",
            NetKind::Discriminator => "dsc",
            NetKind::Classifier => "cls",
        }
    }
}

/// How batch-norm layers treat statistics during a forward pass.
pub(crate) enum StatsMode<'a> {
    /// Batch statistics, folded into the running statistics.
    Update(&'a mut [RunningStats]),
    /// Batch statistics, running statistics untouched.
    Batch,
    /// Stored running statistics.
    Running(&'a [RunningStats]),
}

impl StatsMode<'_> {
    fn layer(&mut self, i: usize) -> BatchNormMode<'_> {
        match self {
            StatsMode::Update(s) => BatchNormMode::Train(Some(&mut s[i])),
            StatsMode::Batch => BatchNormMode::Train(None),
            StatsMode::Running(s) => BatchNormMode::Infer(&s[i]),
        }
    }
}

/// Parameters and batch-norm buffers of one network.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    kind: NetKind,
    in_channels: usize,
    outputs: usize,
    params: Vec<(String, Tensor)>,
    stats: Vec<RunningStats>,
}

fn normal_tensor<R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor {
    let dist = Normal::new(0.0, INIT_STD).expect("valid std");
    Tensor::from_fn(shape.to_vec(), |_| dist.sample(rng))
}

impl Network {
    /// Conv-stack net over `in_channels`-channel images with `outputs` dense
    /// outputs, or the decoder from `outputs`-wide features when
    /// `kind == Decoder`.
    pub fn init<R: Rng>(kind: NetKind, in_channels: usize, outputs: usize, rng: &mut R) -> Self {
        let p = kind.prefix();
        let mut params = Vec::new();
        let mut stats = Vec::new();
        let bn = |params: &mut Vec<(String, Tensor)>, stats: &mut Vec<RunningStats>, name: String, ch: usize| {
            params.push((format!("{name}.scale"), Tensor::full([ch], 1.0)));
            params.push((format!("{name}.shift"), Tensor::zeros([ch])));
            stats.push(RunningStats::new(ch));
        };
        match kind {
            NetKind::Decoder => {
                params.push((format!("{p}.fc.weight"), normal_tensor(rng, &[outputs, FLAT])));
                params.push((format!("{p}.fc.bias"), Tensor::zeros([FLAT])));
                bn(&mut params, &mut stats, format!("{p}.bn0"), WIDTHS[2]);
                let chans = [WIDTHS[2], WIDTHS[1], WIDTHS[0], IMAGE_CHANNELS];
                for stage in 0..3 {
                    let (cin, cout) = (chans[stage], chans[stage + 1]);
                    params.push((
                        format!("{p}.conv{}.weight", stage + 1),
                        normal_tensor(rng, &[cout, cin, 3, 3]),
                    ));
                    if stage < 2 {
                        bn(&mut params, &mut stats, format!("{p}.bn{}", stage + 1), cout);
                    }
                }
                params.push((format!("{p}.conv3.bias"), Tensor::zeros([IMAGE_CHANNELS])));
            }
            _ => {
                let mut cin = in_channels;
                for (stage, &cout) in WIDTHS.iter().enumerate() {
                    params.push((
                        format!("{p}.conv{}.weight", stage + 1),
                        normal_tensor(rng, &[cout, cin, 3, 3]),
                    ));
                    bn(&mut params, &mut stats, format!("{p}.bn{}", stage + 1), cout);
                    cin = cout;
                }
                params.push((format!("{p}.fc.weight"), normal_tensor(rng, &[FLAT, outputs])));
                params.push((format!("{p}.fc.bias"), Tensor::zeros([outputs])));
            }
        }
        Network {
            kind,
            in_channels,
            outputs,
            params,
            stats,
        }
    }

    pub fn kind(&self) -> NetKind {
        self.kind
    }

    pub fn params(&self) -> &[(String, Tensor)] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [(String, Tensor)] {
        &mut self.params
    }

    pub fn stats(&self) -> &[RunningStats] {
        &self.stats
    }

    pub fn stats_mut(&mut self) -> &mut [RunningStats] {
        &mut self.stats
    }

    /// Names of the batch-norm layers owning each entry of [`Self::stats`].
    pub fn stats_names(&self) -> Vec<String> {
        let p = self.kind.prefix();
        match self.kind {
            NetKind::Decoder => (0..3).map(|i| format!("{p}.bn{i}")).collect(),
            _ => (1..=3).map(|i| format!("{p}.bn{i}")).collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Records every parameter as a graph leaf, differentiable when
    /// `trainable`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|(_, t)| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect()
    }

    /// Forward pass updating running statistics when `update_stats`.
    pub fn forward_train(&mut self, g: &mut Graph, bound: &[Var], x: Var, update_stats: bool) -> Result<Var, ModelError> {
        let mode = if update_stats {
            StatsMode::Update(&mut self.stats)
        } else {
            StatsMode::Batch
        };
        forward(self.kind, self.in_channels, self.outputs, g, bound, x, mode)
    }

    /// Forward pass with running statistics.
    pub fn forward_infer(&self, g: &mut Graph, bound: &[Var], x: Var) -> Result<Var, ModelError> {
        forward(
            self.kind,
            self.in_channels,
            self.outputs,
            g,
            bound,
            x,
            StatsMode::Running(&self.stats),
        )
    }

    /// Forward pass normalizing with the statistics of `x` itself, leaving
    /// the running statistics untouched.
    pub fn forward_batch_stats(&self, g: &mut Graph, bound: &[Var], x: Var) -> Result<Var, ModelError> {
        forward(self.kind, self.in_channels, self.outputs, g, bound, x, StatsMode::Batch)
    }

    pub fn forward(&mut self, g: &mut Graph, bound: &[Var], x: Var, mode: ForwardMode) -> Result<Var, ModelError> {
        match mode {
            ForwardMode::Train => self.forward_train(g, bound, x, true),
            ForwardMode::TrainFrozenStats => self.forward_train(g, bound, x, false),
            ForwardMode::Infer => self.forward_infer(g, bound, x),
        }
    }
}

/// Batch-norm behaviour of a network call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForwardMode {
    Train,
    TrainFrozenStats,
    Infer,
}

fn forward(
    kind: NetKind,
    in_channels: usize,
    outputs: usize,
    g: &mut Graph,
    w: &[Var],
    x: Var,
    mut stats: StatsMode<'_>,
) -> Result<Var, ModelError> {
    let shape = g.shape(x).to_vec();
    match kind {
        NetKind::Decoder => {
            if shape.len() != 2 || shape[1] != outputs {
                return Err(ModelError::InvalidInput(format!(
                    "decoder expects [batch, {outputs}] features, got {shape:?}"
                )));
            }
            let batch = shape[0];
            let h = g.matmul(x, w[0])?;
            let h = g.add_channel_bias(h, w[1])?;
            let h = g.reshape(h, &[batch, WIDTHS[2], BOTTLENECK, BOTTLENECK])?;
            let h = g.batchnorm(h, w[2], w[3], stats.layer(0))?;
            let mut h = g.leaky_relu(h, LEAK)?;
            // Each stage owns [conv weight, bn scale, bn shift]; the last
            // stage has [conv weight, bias] instead.
            for stage in 0..3 {
                let base = 4 + 3 * stage;
                let up = g.upsample2x(h)?;
                let c = g.conv2d(up, w[base], 1, 1)?;
                h = if stage < 2 {
                    let n = g.batchnorm(c, w[base + 1], w[base + 2], stats.layer(stage + 1))?;
                    g.leaky_relu(n, LEAK)?
                } else {
                    let b = g.add_channel_bias(c, w[base + 1])?;
                    g.sigmoid(b)
                };
            }
            Ok(h)
        }
        _ => {
            if shape.len() != 4 || shape[1] != in_channels || shape[2] != IMAGE_SIZE || shape[3] != IMAGE_SIZE {
                return Err(ModelError::InvalidInput(format!(
                    "{} expects [batch, {in_channels}, {IMAGE_SIZE}, {IMAGE_SIZE}] images, got {shape:?}",
                    kind.prefix()
                )));
            }
            let batch = shape[0];
            let mut h = x;
            for stage in 0..3 {
                let c = g.conv2d(h, w[3 * stage], 2, 1)?;
                let n = g.batchnorm(c, w[3 * stage + 1], w[3 * stage + 2], stats.layer(stage))?;
                h = g.leaky_relu(n, LEAK)?;
            }
            let flat = g.reshape(h, &[batch, FLAT])?;
            let y = g.matmul(flat, w[9])?;
            Ok(g.add_channel_bias(y, w[10])?)
        }
    }
}
