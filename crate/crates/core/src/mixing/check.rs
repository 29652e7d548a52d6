//! Finite-difference check through a miniature full cycle.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::{forward_cycle, loss_cls, loss_gan, loss_mix, Codec, Mask, MixError};
use crate::autodiff::gradcheck::{grad_check_multi, DEFAULT_STEP};
use crate::autodiff::{AutodiffError, Graph, Precision, Tensor, Var};
use crate::models::ChunkLayout;

/// Dense encoder and decoder over 1×2×2 images with `n = d = 2`.
struct TinyCodec {
    enc_w: Var,
    enc_b: Var,
    dec_w: Var,
    dec_b: Var,
}

impl Codec for TinyCodec {
    fn layout(&self) -> ChunkLayout {
        ChunkLayout { chunks: 2, dim: 2 }
    }

    fn encode(&mut self, g: &mut Graph, x: Var) -> Result<Var, MixError> {
        let b = g.shape(x)[0];
        let flat = g.reshape(x, &[b, 4])?;
        let h = g.matmul(flat, self.enc_w)?;
        let h = g.add_channel_bias(h, self.enc_b)?;
        Ok(g.leaky_relu(h, 0.2)?)
    }

    fn decode(&mut self, g: &mut Graph, f: Var) -> Result<Var, MixError> {
        let b = g.shape(f)[0];
        let h = g.matmul(f, self.dec_w)?;
        let h = g.add_channel_bias(h, self.dec_b)?;
        let h = g.sigmoid(h);
        Ok(g.reshape(h, &[b, 1, 2, 2])?)
    }
}

fn tiny_objective(g: &mut Graph, v: &[Var], masks: &[Mask]) -> Result<Var, MixError> {
    let (x1, x2) = (v[0], v[1]);
    let mut codec = TinyCodec {
        enc_w: v[2],
        enc_b: v[3],
        dec_w: v[4],
        dec_b: v[5],
    };
    let (dsc_w, cls_w) = (v[6], v[7]);
    let c = forward_cycle(&mut codec, g, x1, x2, masks)?;
    let batch = masks.len();

    let score = |g: &mut Graph, x: Var| -> Result<Var, MixError> {
        let flat = g.reshape(x, &[batch, 4])?;
        let z = g.matmul(flat, dsc_w)?;
        Ok(g.sigmoid(z))
    };
    let s_real = score(g, x1)?;
    let s_fake = score(g, c.x3)?;
    let gan = loss_gan(g, s_real, s_fake)?;

    let stacked = g.concat_channels(&[x1, x2, c.x3])?;
    let flat = g.reshape(stacked, &[batch, 12])?;
    let z = g.matmul(flat, cls_w)?;
    let y = g.sigmoid(z);
    let cls = loss_cls(g, y, masks)?;

    let l_m = loss_mix(g, c.x4, x1)?;
    let a = g.add(l_m, gan.g_loss)?;
    let b = g.add(a, cls.loss)?;
    Ok(g.add(b, gan.d_loss)?)
}

/// Largest relative error between backprop and central differences of
/// `L_M + g_loss + L_C + d_loss` through the cycle, over images and all
/// weights.
pub fn cycle_gradient_check(seed: u64) -> Result<f64, MixError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixel = Uniform::new(0.1, 0.9).expect("valid range");
    let weight = Normal::new(0.0, 0.8).expect("valid std");
    let mut draw = |shape: &[usize], d: &dyn Fn(&mut ChaCha8Rng) -> f64| Tensor::from_fn(shape.to_vec(), |_| d(&mut rng));
    let inputs = vec![
        draw(&[2, 1, 2, 2], &|r| pixel.sample(r)),
        draw(&[2, 1, 2, 2], &|r| pixel.sample(r)),
        draw(&[4, 4], &|r| weight.sample(r)),
        draw(&[4], &|r| weight.sample(r)),
        draw(&[4, 4], &|r| weight.sample(r)),
        draw(&[4], &|r| weight.sample(r)),
        draw(&[4, 1], &|r| weight.sample(r)),
        draw(&[12, 2], &|r| weight.sample(r)),
    ];
    let masks = [Mask::new(vec![1, 0])?, Mask::new(vec![0, 1])?];
    let err = grad_check_multi(
        |g, v| {
            tiny_objective(g, v, &masks).map_err(|e| match e {
                MixError::Autodiff(a) => a,
                other => AutodiffError::InvalidArgument {
                    op: "cycle",
                    msg: other.to_string(),
                },
            })
        },
        &inputs,
        DEFAULT_STEP,
        Precision::F64,
    )?;
    Ok(err)
}
