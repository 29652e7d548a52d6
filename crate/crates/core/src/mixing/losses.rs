use super::{Mask, MixError};
use crate::autodiff::{Graph, Tensor, Var};

/// Probabilities are clamped into `[PROB_CLAMP, 1 − PROB_CLAMP]` before
/// taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

fn batch_of(g: &Graph, v: Var) -> usize {
    g.shape(v).first().copied().unwrap_or(1).max(1)
}

/// Mean over the batch of the per-sample squared L2 distance.
pub fn loss_mix(g: &mut Graph, x4: Var, x1: Var) -> Result<Var, MixError> {
    if g.shape(x4) != g.shape(x1) {
        return Err(MixError::Shape(format!(
            "loss_mix: {:?} vs {:?}",
            g.shape(x4),
            g.shape(x1)
        )));
    }
    let batch = batch_of(g, x1);
    let d = g.sub(x4, x1)?;
    let sq = g.mul(d, d)?;
    let s = g.sum(sq);
    Ok(g.mul_scalar(s, 1.0 / batch as f64))
}

/// Discriminator and generator losses.
#[derive(Clone, Copy, Debug)]
pub struct GanLosses {
    pub d_loss: Var,
    pub g_loss: Var,
}

fn check_open_unit(g: &Graph, v: Var, what: &str) -> Result<(), MixError> {
    if let Some(&s) = g.value(v).data().iter().find(|s| !(**s > 0.0 && **s < 1.0)) {
        return Err(MixError::OutOfRange {
            what: what.to_string(),
            value: s,
        });
    }
    Ok(())
}

/// `d_loss = −mean[log s_real + log(1 − s_fake)]`, `g_loss = −mean log s_fake`.
pub fn loss_gan(g: &mut Graph, s_real: Var, s_fake: Var) -> Result<GanLosses, MixError> {
    check_open_unit(g, s_real, "real score")?;
    check_open_unit(g, s_fake, "fake score")?;
    let log_real = g.log(s_real)?;
    let neg_fake = g.mul_scalar(s_fake, -1.0);
    let one_minus = g.add_scalar(neg_fake, 1.0);
    let log_not_fake = g.log(one_minus)?;
    let log_fake = g.log(s_fake)?;
    let a = g.mean(log_real);
    let b = g.mean(log_not_fake);
    let ab = g.add(a, b)?;
    let d_loss = g.mul_scalar(ab, -1.0);
    let m = g.mean(log_fake);
    let g_loss = g.mul_scalar(m, -1.0);
    Ok(GanLosses { d_loss, g_loss })
}

/// [`loss_gan`] from discriminator logits, using `−log σ(z) = softplus(−z)`
/// and `−log(1 − σ(z)) = softplus(z)`.
pub fn loss_gan_logits(g: &mut Graph, z_real: Var, z_fake: Var) -> Result<GanLosses, MixError> {
    let d_loss = d_loss_logits(g, z_real, z_fake)?;
    let g_loss = g_loss_logits(g, z_fake);
    Ok(GanLosses { d_loss, g_loss })
}

pub fn d_loss_logits(g: &mut Graph, z_real: Var, z_fake: Var) -> Result<Var, MixError> {
    let neg_real = g.mul_scalar(z_real, -1.0);
    let a = g.softplus(neg_real);
    let a = g.mean(a);
    let b = g.softplus(z_fake);
    let b = g.mean(b);
    Ok(g.add(a, b)?)
}

pub fn g_loss_logits(g: &mut Graph, z_fake: Var) -> Var {
    let neg = g.mul_scalar(z_fake, -1.0);
    let sp = g.softplus(neg);
    g.mean(sp)
}

/// Classifier loss and the number of probabilities that hit the clamp.
#[derive(Clone, Copy, Debug)]
pub struct ClsLoss {
    pub loss: Var,
    pub clamped: usize,
}

fn mask_tensor(g: &Graph, y: Var, masks: &[Mask]) -> Result<Tensor, MixError> {
    let shape = g.shape(y).to_vec();
    let n = masks.first().map_or(0, |m| m.len());
    if shape.len() != 2 || shape[0] != masks.len() || shape[1] != n || masks.iter().any(|m| m.len() != n) {
        return Err(MixError::Shape(format!(
            "classifier output {shape:?} does not match {} masks of {n} bits",
            masks.len()
        )));
    }
    let data = masks.iter().flat_map(|m| m.bits().iter().map(|&b| b as f64)).collect();
    Ok(Tensor::new(shape, data)?)
}

/// Binary cross-entropy between per-chunk probabilities `y` `[B, n]` and
/// the masks, summed over chunks and averaged over the batch.
pub fn loss_cls(g: &mut Graph, y: Var, masks: &[Mask]) -> Result<ClsLoss, MixError> {
    let m = mask_tensor(g, y, masks)?;
    check_open_or_closed_unit(g, y)?;
    let clamped = g
        .value(y)
        .data()
        .iter()
        .filter(|&&v| !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&v))
        .count();
    let batch = batch_of(g, y);
    let not_m = Tensor::new(m.shape(), m.data().iter().map(|b| 1.0 - b).collect())?;
    let m = g.constant(m);
    let not_m = g.constant(not_m);
    let yc = g.clamp(y, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let log_y = g.log(yc)?;
    let neg = g.mul_scalar(yc, -1.0);
    let one_minus = g.add_scalar(neg, 1.0);
    let log_not_y = g.log(one_minus)?;
    let a = g.mul(m, log_y)?;
    let b = g.mul(not_m, log_not_y)?;
    let ab = g.add(a, b)?;
    let s = g.sum(ab);
    let loss = g.mul_scalar(s, -1.0 / batch as f64);
    Ok(ClsLoss { loss, clamped })
}

fn check_open_or_closed_unit(g: &Graph, v: Var) -> Result<(), MixError> {
    if let Some(&s) = g.value(v).data().iter().find(|s| !(**s >= 0.0 && **s <= 1.0)) {
        return Err(MixError::OutOfRange {
            what: "classifier probability".into(),
            value: s,
        });
    }
    Ok(())
}

/// [`loss_cls`] from classifier logits: `Σ softplus(z) − m·z` over chunks,
/// averaged over the batch.
pub fn loss_cls_logits(g: &mut Graph, z: Var, masks: &[Mask]) -> Result<Var, MixError> {
    let m = mask_tensor(g, z, masks)?;
    let batch = batch_of(g, z);
    let m = g.constant(m);
    let sp = g.softplus(z);
    let mz = g.mul(m, z)?;
    let d = g.sub(sp, mz)?;
    let s = g.sum(d);
    Ok(g.mul_scalar(s, 1.0 / batch as f64))
}

/// Which loss terms take part in training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Toggles {
    /// Mixing loss on the full cycle.
    pub mix_cycle: bool,
    /// Plain autoencoder reconstruction `‖Dec(Enc(x1)) − x1‖²`, weighted by λ_M.
    pub plain_recon: bool,
    pub gan: bool,
    pub cls: bool,
}

impl Toggles {
    pub const ALL: Toggles = Toggles {
        mix_cycle: true,
        plain_recon: false,
        gan: true,
        cls: true,
    };
}

impl Default for Toggles {
    fn default() -> Self {
        Toggles::ALL
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Weights {
    pub lambda_m: f64,
    pub lambda_g: f64,
    pub lambda_c: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights {
            lambda_m: 1.0,
            lambda_g: 1.0,
            lambda_c: 1.0,
        }
    }
}

/// Loss terms computed for one step; absent terms are `None`.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossTerms {
    pub l_m: Option<Var>,
    pub recon: Option<Var>,
    pub g_loss: Option<Var>,
    pub l_c: Option<Var>,
    pub d_loss: Option<Var>,
}

/// `λ_M·L_M + λ_G·g_loss + λ_C·L_C` over the enabled terms, and the
/// discriminator loss when the adversarial term is on.
pub fn total_objective(
    g: &mut Graph,
    terms: &LossTerms,
    weights: Weights,
    toggles: Toggles,
) -> Result<(Var, Option<Var>), MixError> {
    for (name, w) in [
        ("lambda_m", weights.lambda_m),
        ("lambda_g", weights.lambda_g),
        ("lambda_c", weights.lambda_c),
    ] {
        if !(w >= 0.0 && w.is_finite()) {
            return Err(MixError::InvalidArgument(format!("{name} must be a finite non-negative number, got {w}")));
        }
    }
    let parts = [
        (toggles.mix_cycle, terms.l_m, weights.lambda_m, "L_M"),
        (toggles.plain_recon, terms.recon, weights.lambda_m, "reconstruction"),
        (toggles.gan, terms.g_loss, weights.lambda_g, "g_loss"),
        (toggles.cls, terms.l_c, weights.lambda_c, "L_C"),
    ];
    let mut total = g.constant(Tensor::scalar(0.0));
    for (on, term, w, name) in parts {
        if !on {
            continue;
        }
        let term = term.ok_or(MixError::MissingTerm(name))?;
        let weighted = g.mul_scalar(term, w);
        total = g.add(total, weighted)?;
    }
    let dsc = if toggles.gan {
        Some(terms.d_loss.ok_or(MixError::MissingTerm("d_loss"))?)
    } else {
        None
    };
    Ok((total, dsc))
}
