//! Alternating min-max training of encoder, decoder and classifier against
//! the discriminator.
//!
//! Each step draws two independent image batches and one mask per pair,
//! runs the mix path once, updates the discriminator on the detached `x3`,
//! then updates encoder, decoder and classifier jointly on the weighted
//! objective with the freshly updated discriminator held fixed.

mod adam;
mod config;
mod suite;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use config::{AblationRow, TrainConfig, DEFAULT_BATCH, DEFAULT_EPOCHS};
pub use suite::{ablation_suite, AblationReport, AblationResult};

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{Graph, Tensor, Var};
use crate::dataset::gather;
use crate::mixing::{
    d_loss_logits, forward_mix, g_loss_logits, loss_cls_logits, loss_mix, mix_vars, sample_mask, total_objective,
    Codec, LossTerms, Mask, MixError, NetCodec,
};
use crate::models::{save_checkpoint, ForwardMode, ModelError, ModelParams, Network};

pub const LOG_HEADER: &str = "step\tL_M\tg_loss\td_loss\tL_C\tcls_acc\twall_ms";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOG_FILE: &str = "train_log.tsv";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("non-finite loss at step {step}: {snapshot}")]
    NonFinite { step: usize, snapshot: String },
    #[error(transparent)]
    Mix(#[from] MixError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<crate::autodiff::AutodiffError> for TrainError {
    fn from(e: crate::autodiff::AutodiffError) -> Self {
        TrainError::Mix(MixError::Autodiff(e))
    }
}

/// Scalars recorded for one step. Terms that were not computed are `None`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepStats {
    pub l_m: Option<f64>,
    pub recon: Option<f64>,
    pub g_loss: Option<f64>,
    pub d_loss: Option<f64>,
    pub l_c: Option<f64>,
    pub cls_acc: Option<f64>,
    pub d_real: Option<f64>,
    pub d_fake: Option<f64>,
}

impl StepStats {
    fn snapshot(&self) -> String {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |x| x.to_string());
        format!(
            "L_M={} recon={} g_loss={} d_loss={} L_C={}",
            f(self.l_m),
            f(self.recon),
            f(self.g_loss),
            f(self.d_loss),
            f(self.l_c)
        )
    }

    fn finite(&self) -> bool {
        [self.l_m, self.recon, self.g_loss, self.d_loss, self.l_c]
            .iter()
            .flatten()
            .all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub stats: StepStats,
    pub wall_ms: u64,
}

/// Append-only per-step log.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub seed: u64,
    pub rows: Vec<LogRow>,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"))
}

impl LogRow {
    /// TSV line; the `L_M` column holds the plain reconstruction term on
    /// rows that train without the cycle.
    pub fn to_tsv(&self) -> String {
        let s = &self.stats;
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.step,
            cell(s.l_m.or(s.recon)),
            cell(s.g_loss),
            cell(s.d_loss),
            cell(s.l_c),
            cell(s.cls_acc),
            self.wall_ms
        )
    }
}

impl TrainLog {
    pub fn to_tsv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(LOG_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(out, "{}", r.to_tsv());
        }
        out
    }

    pub fn last(&self) -> Option<&LogRow> {
        self.rows.last()
    }
}

/// Side effects of [`train`].
#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Directory receiving the checkpoint (after every epoch) and the log.
    pub out_dir: Option<PathBuf>,
    /// Stored in the checkpoint metadata; defaults to the config rendering.
    pub config_echo: Option<String>,
    /// Record elapsed milliseconds in `wall_ms`; when off the column is 0
    /// so that repeated runs produce identical logs.
    pub wall_time: bool,
    /// One line per epoch on stderr.
    pub progress: bool,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Parameters, optimizer state and RNG of one training run.
pub struct Trainer {
    config: TrainConfig,
    params: ModelParams,
    min_state: AdamState,
    d_state: AdamState,
    rng: ChaCha8Rng,
    step: usize,
}

fn tensors(nets: &[&Network]) -> Vec<Tensor> {
    nets.iter().flat_map(|n| n.params().iter().map(|(_, t)| t.clone())).collect()
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let params = ModelParams::init(config.layout, config.seed);
        Ok(Self::with_params(config, params))
    }

    /// Starts from existing parameters (fresh optimizer state).
    pub fn with_params(config: TrainConfig, params: ModelParams) -> Self {
        let min_nets = min_player(&params, &config);
        let min_state = AdamState::new(tensors(&min_nets).iter());
        let d_state = AdamState::new(params.discriminator.params().iter().map(|(_, t)| t));
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Trainer {
            config,
            params,
            min_state,
            d_state,
            rng,
            step: 0,
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn sample_masks(&mut self, batch: usize) -> Vec<Mask> {
        (0..batch)
            .map(|_| sample_mask(&mut self.rng, self.config.layout.chunks).expect("chunks >= 1"))
            .collect()
    }

    /// One discriminator update followed by one min-player update.
    pub fn step(&mut self, x1: &Tensor, x2: &Tensor, masks: &[Mask]) -> Result<StepStats, TrainError> {
        let cfg = self.config.clone();
        let t = cfg.toggles;
        let layout = cfg.layout;
        let need_mix = t.mix_cycle || t.gan || t.cls;
        let mut stats = StepStats::default();

        let mut g = Graph::with_precision(cfg.precision);
        let xv1 = g.constant(x1.clone());
        let xv2 = g.constant(x2.clone());
        let enc_w = self.params.encoder.bind(&mut g, true);
        let dec_w = self.params.decoder.bind(&mut g, true);
        let mut terms = LossTerms::default();
        let mut x3 = None;
        {
            let mut codec = NetCodec::new(
                layout,
                &mut self.params.encoder,
                &enc_w,
                &mut self.params.decoder,
                &dec_w,
                ForwardMode::Train,
            );
            let f1 = if need_mix {
                let m = forward_mix(&mut codec, &mut g, xv1, xv2, masks)?;
                x3 = Some(m.x3);
                if t.mix_cycle {
                    let f3 = codec.encode(&mut g, m.x3)?;
                    let f31 = mix_vars(&mut g, layout, f3, m.f1, masks)?;
                    let x4 = codec.decode(&mut g, f31)?;
                    terms.l_m = Some(loss_mix(&mut g, x4, xv1)?);
                }
                m.f1
            } else {
                codec.encode(&mut g, xv1)?
            };
            if t.plain_recon {
                let xr = codec.decode(&mut g, f1)?;
                terms.recon = Some(loss_mix(&mut g, xr, xv1)?);
            }
        }

        if t.gan {
            let x3 = x3.expect("mix path ran");
            let fake = g.value(x3).clone();
            let (d_loss, d_real, d_fake) = self.discriminator_step(x1, &fake)?;
            stats.d_loss = Some(d_loss);
            stats.d_real = Some(d_real);
            stats.d_fake = Some(d_fake);
            if !d_loss.is_finite() {
                return Err(TrainError::NonFinite {
                    step: self.step,
                    snapshot: stats.snapshot(),
                });
            }
            let dsc_w = self.params.discriminator.bind(&mut g, false);
            let z = self
                .params
                .discriminator
                .forward(&mut g, &dsc_w, x3, ForwardMode::TrainFrozenStats)?;
            terms.g_loss = Some(g_loss_logits(&mut g, z));
        }

        let mut cls_w = Vec::new();
        if t.cls {
            let x3 = x3.expect("mix path ran");
            cls_w = self.params.classifier.bind(&mut g, true);
            let stacked = g.concat_channels(&[xv1, xv2, x3])?;
            let z = self
                .params
                .classifier
                .forward(&mut g, &cls_w, stacked, ForwardMode::Train)?;
            terms.l_c = Some(loss_cls_logits(&mut g, z, masks)?);
            let logits = g.value(z).data();
            let bits = masks.iter().flat_map(|m| m.bits().iter());
            let hits = logits.iter().zip(bits).filter(|(z, &b)| (**z > 0.0) == (b == 1)).count();
            stats.cls_acc = Some(hits as f64 / logits.len() as f64);
        }

        let value = |g: &Graph, v: Option<Var>| v.map(|v| g.value(v).data()[0]);
        stats.l_m = value(&g, terms.l_m);
        stats.recon = value(&g, terms.recon);
        stats.g_loss = value(&g, terms.g_loss);
        stats.l_c = value(&g, terms.l_c);
        if !stats.finite() {
            return Err(TrainError::NonFinite {
                step: self.step,
                snapshot: stats.snapshot(),
            });
        }
        if let Some(d) = stats.d_loss {
            // already minimized by the discriminator update; recorded for completeness
            terms.d_loss = Some(g.constant(Tensor::scalar(d)));
        }
        let (objective, _) = total_objective(&mut g, &terms, cfg.weights, t)?;
        g.backward(objective)?;

        let mut grads: Vec<Tensor> = Vec::new();
        for w in enc_w.iter().chain(&dec_w).chain(&cls_w) {
            grads.push(g.grad(*w).expect("trainable"));
        }
        let mut slots: Vec<&mut Tensor> = Vec::new();
        slots.extend(self.params.encoder.params_mut().iter_mut().map(|(_, t)| t));
        slots.extend(self.params.decoder.params_mut().iter_mut().map(|(_, t)| t));
        if t.cls {
            slots.extend(self.params.classifier.params_mut().iter_mut().map(|(_, t)| t));
        }
        adam_step(&mut slots, &grads, &mut self.min_state, cfg.adam);
        self.step += 1;
        Ok(stats)
    }

    /// Updates only the discriminator; returns `(d_loss, mean D(real),
    /// mean D(fake))` measured before the update.
    pub fn discriminator_step(&mut self, real: &Tensor, fake: &Tensor) -> Result<(f64, f64, f64), TrainError> {
        let mut g = Graph::with_precision(self.config.precision);
        let w = self.params.discriminator.bind(&mut g, true);
        let r = g.constant(real.clone());
        let f = g.constant(fake.clone());
        let zr = self.params.discriminator.forward(&mut g, &w, r, ForwardMode::Train)?;
        let zf = self.params.discriminator.forward(&mut g, &w, f, ForwardMode::Train)?;
        let d_loss = d_loss_logits(&mut g, zr, zf)?;
        let mean_sigmoid = |z: &Tensor| z.data().iter().map(|v| 1.0 / (1.0 + (-v).exp())).sum::<f64>() / z.numel() as f64;
        let d_real = mean_sigmoid(g.value(zr));
        let d_fake = mean_sigmoid(g.value(zf));
        let loss = g.value(d_loss).data()[0];
        if !loss.is_finite() {
            return Ok((loss, d_real, d_fake));
        }
        g.backward(d_loss)?;
        let grads: Vec<Tensor> = w.iter().map(|&v| g.grad(v).expect("trainable")).collect();
        let mut slots: Vec<&mut Tensor> = self.params.discriminator.params_mut().iter_mut().map(|(_, t)| t).collect();
        adam_step(&mut slots, &grads, &mut self.d_state, self.config.adam);
        Ok((loss, d_real, d_fake))
    }
}

fn min_player<'a>(params: &'a ModelParams, config: &TrainConfig) -> Vec<&'a Network> {
    let mut nets = vec![&params.encoder, &params.decoder];
    if config.toggles.cls {
        nets.push(&params.classifier);
    }
    nets
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: TrainLog,
}

fn write_atomic(path: &Path, f: impl FnOnce(&Path) -> Result<(), TrainError>) -> Result<(), TrainError> {
    let tmp = path.with_extension("tmp");
    f(&tmp)?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

/// Trains on `images` (`[N, 3, 16, 16]`) for `config.epochs` epochs.
pub fn train(config: &TrainConfig, images: &Tensor, options: &TrainOptions) -> Result<TrainOutcome, TrainError> {
    let n = images.shape().first().copied().unwrap_or(0);
    if n < 2 {
        return Err(TrainError::Config(format!("need at least 2 training images, got {n}")));
    }
    let mut trainer = Trainer::new(config.clone())?;
    let batch = config.batch.min(n);
    let steps_per_epoch = n / batch;
    let echo = options.config_echo.clone().unwrap_or_else(|| config.to_text());
    let start = Instant::now();
    let mut log = TrainLog {
        seed: config.seed,
        rows: Vec::new(),
    };
    let mut log_file = match &options.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
            let path = dir.join(LOG_FILE);
            let mut f = std::io::BufWriter::new(std::fs::File::create(&path).map_err(io_err(&path))?);
            writeln!(f, "{LOG_HEADER}").map_err(io_err(&path))?;
            Some((f, path))
        }
        None => None,
    };
    let mut order1: Vec<usize> = (0..n).collect();
    let mut order2: Vec<usize> = (0..n).collect();
    for epoch in 0..config.epochs {
        order1.shuffle(&mut trainer.rng);
        order2.shuffle(&mut trainer.rng);
        for s in 0..steps_per_epoch {
            let idx1 = &order1[s * batch..(s + 1) * batch];
            let idx2 = &order2[s * batch..(s + 1) * batch];
            let x1 = gather(images, idx1);
            let x2 = gather(images, idx2);
            let masks = trainer.sample_masks(batch);
            let step = trainer.steps_done();
            let stats = trainer.step(&x1, &x2, &masks)?;
            let wall_ms = if options.wall_time {
                start.elapsed().as_millis() as u64
            } else {
                0
            };
            let row = LogRow { step, stats, wall_ms };
            if let Some((f, path)) = &mut log_file {
                writeln!(f, "{}", row.to_tsv()).map_err(io_err(path))?;
            }
            log.rows.push(row);
        }
        if let Some((f, path)) = &mut log_file {
            f.flush().map_err(io_err(path))?;
        }
        if let Some(dir) = &options.out_dir {
            let meta = format!("{echo}epoch = {}\n", epoch + 1);
            let path = dir.join(CHECKPOINT_FILE);
            write_atomic(&path, |tmp| Ok(save_checkpoint(tmp, trainer.params(), &meta)?))?;
        }
        if options.progress {
            if let Some(r) = log.last() {
                eprintln!("epoch {}/{}  {}", epoch + 1, config.epochs, r.stats.snapshot());
            }
        }
    }
    if let Some(dir) = &options.out_dir {
        if config.epochs == 0 {
            let path = dir.join(CHECKPOINT_FILE);
            write_atomic(&path, |tmp| Ok(save_checkpoint(tmp, trainer.params(), &echo)?))?;
        }
    }
    Ok(TrainOutcome {
        params: trainer.into_params(),
        log,
    })
}
