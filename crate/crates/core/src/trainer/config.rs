use super::{AdamConfig, TrainError};
use crate::autodiff::Precision;
use crate::mixing::{Toggles, Weights};
use crate::models::ChunkLayout;

pub const DEFAULT_EPOCHS: usize = 40;
pub const DEFAULT_BATCH: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub weights: Weights,
    pub toggles: Toggles,
    pub layout: ChunkLayout,
    pub epochs: usize,
    pub batch: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            weights: Weights::default(),
            toggles: Toggles::ALL,
            layout: ChunkLayout::default(),
            epochs: DEFAULT_EPOCHS,
            batch: DEFAULT_BATCH,
            adam: AdamConfig::default(),
            seed: 0,
            precision: Precision::F64,
        }
    }
}

impl TrainConfig {
    /// Default settings with a heavier mixing term, `λ_M = 30`.
    pub fn heavy_mixing() -> Self {
        TrainConfig {
            weights: Weights {
                lambda_m: 30.0,
                ..Weights::default()
            },
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let t = self.toggles;
        if !(t.mix_cycle || t.plain_recon || t.gan || t.cls) {
            return Err(TrainError::Config("at least one loss toggle must be enabled".into()));
        }
        let w = self.weights;
        for (k, v) in [("lambda_m", w.lambda_m), ("lambda_g", w.lambda_g), ("lambda_c", w.lambda_c)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(TrainError::Config(format!("{k} must be finite and non-negative, got {v}")));
            }
        }
        if self.batch < 2 {
            return Err(TrainError::Config(format!("batch must be at least 2, got {}", self.batch)));
        }
        let a = self.adam;
        if !(a.lr > 0.0 && a.lr.is_finite()) {
            return Err(TrainError::Config(format!("lr must be positive, got {}", a.lr)));
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            return Err(TrainError::Config("beta1 and beta2 must lie in [0, 1)".into()));
        }
        if self.layout.chunks == 0 || self.layout.dim == 0 {
            return Err(TrainError::Config("chunks and chunk_dim must be positive".into()));
        }
        Ok(())
    }

    /// Canonical `key = value` rendering, readable by the CLI config parser.
    pub fn to_text(&self) -> String {
        let t = self.toggles;
        let names: Vec<&str> = [
            (t.mix_cycle, "mix_cycle"),
            (t.plain_recon, "plain_recon"),
            (t.gan, "gan"),
            (t.cls, "cls"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, n)| *n)
        .collect();
        format!(
            "lambda_m = {}\nlambda_g = {}\nlambda_c = {}\ntoggles = {}\nchunks = {}\nchunk_dim = {}\n\
             epochs = {}\nbatch = {}\nlr = {}\nbeta1 = {}\nseed = {}\nprecision = {}\n",
            self.weights.lambda_m,
            self.weights.lambda_g,
            self.weights.lambda_c,
            names.join(","),
            self.layout.chunks,
            self.layout.dim,
            self.epochs,
            self.batch,
            self.adam.lr,
            self.adam.beta1,
            self.seed,
            match self.precision {
                Precision::F64 => "f64",
                Precision::F32 => "f32",
            }
        )
    }
}

/// The eight method rows of the ablation table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AblationRow {
    Random,
    ClsGan,
    Ae,
    AeClsGan,
    Mix,
    MixCls,
    MixGan,
    MixClsGan,
}

impl AblationRow {
    pub const ALL: [AblationRow; 8] = [
        AblationRow::Random,
        AblationRow::ClsGan,
        AblationRow::Ae,
        AblationRow::AeClsGan,
        AblationRow::Mix,
        AblationRow::MixCls,
        AblationRow::MixGan,
        AblationRow::MixClsGan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationRow::Random => "Random",
            AblationRow::ClsGan => "C+G",
            AblationRow::Ae => "AE",
            AblationRow::AeClsGan => "AE+C+G",
            AblationRow::Mix => "MIX",
            AblationRow::MixCls => "MIX+C",
            AblationRow::MixGan => "MIX+G",
            AblationRow::MixClsGan => "MIX+C+G",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.name().eq_ignore_ascii_case(name))
    }

    /// Training configuration, `None` for the untrained baseline.
    pub fn config(self, base: &TrainConfig) -> Option<TrainConfig> {
        let t = |mix_cycle, plain_recon, gan, cls| Toggles {
            mix_cycle,
            plain_recon,
            gan,
            cls,
        };
        let toggles = match self {
            AblationRow::Random => return None,
            AblationRow::ClsGan => t(false, false, true, true),
            AblationRow::Ae => t(false, true, false, false),
            AblationRow::AeClsGan => t(false, true, true, true),
            AblationRow::Mix => t(true, false, false, false),
            AblationRow::MixCls => t(true, false, false, true),
            AblationRow::MixGan => t(true, false, true, false),
            AblationRow::MixClsGan => t(true, false, true, true),
        };
        let mut cfg = TrainConfig { toggles, ..base.clone() };
        if self == AblationRow::Ae {
            // a single chunk as wide as the whole feature
            cfg.layout = ChunkLayout {
                chunks: 1,
                dim: base.layout.width(),
            };
        }
        Some(cfg)
    }
}
