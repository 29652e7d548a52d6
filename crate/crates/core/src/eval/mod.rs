//! Retrieval mAP, linear probes, attribute-transfer grids, shortcut
//! diagnostics and the chunk-size sweep. This is the only module that
//! reads factor labels.

mod grid;
mod probe;
mod retrieval;
mod shortcut;
#[cfg(test)]
mod tests;

pub use grid::{parse_ppm, ppm_bytes, to_byte, transfer_grid, transfer_grid_with, write_ppm};
pub use probe::{
    fit_raw, hinge_bias, hinge_loss, linear_probe, probe_factor, unit_variance_scales, ProbeModel, VARIANCE_EPS,
};
pub use retrieval::{
    average_precision, best_chunk_table, factor_name, query_average_precision, retrieval_map, ChunkTable,
};
pub use shortcut::{
    shortcut_report, shortcut_report_with, ChunkInfo, ShortcutReport, CHANCE_CEILING, DEFAULT_PAIRS,
    SENSITIVITY_FLOOR,
};

use std::fmt::Write as _;

use thiserror::Error;

use crate::dataset::{Dataset, FactorLabels, Split};
use crate::mixing::MixError;
use crate::models::{ChunkLayout, ModelError, ModelParams};
use crate::trainer::{train, AblationRow, TrainConfig, TrainError, TrainOptions};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("factor {factor} has a single class")]
    SingleClass { factor: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mix(#[from] MixError),
    #[error("training failed: {0}")]
    Train(Box<TrainError>),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<TrainError> for EvalError {
    fn from(e: TrainError) -> Self {
        EvalError::Train(Box::new(e))
    }
}

impl From<crate::autodiff::AutodiffError> for EvalError {
    fn from(e: crate::autodiff::AutodiffError) -> Self {
        EvalError::Mix(MixError::Autodiff(e))
    }
}

/// Encoded features, one row per image, with the images' labels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    layout: ChunkLayout,
    values: Vec<f64>,
    labels: Vec<FactorLabels>,
}

impl FeatureMatrix {
    pub fn new(layout: ChunkLayout, values: Vec<f64>, labels: Vec<FactorLabels>) -> Result<Self, EvalError> {
        if values.len() != labels.len() * layout.width() {
            return Err(EvalError::InvalidArgument(format!(
                "{} values for {} rows of width {}",
                values.len(),
                labels.len(),
                layout.width()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EvalError::InvalidArgument(format!(
                "non-finite feature in row {}",
                i / layout.width()
            )));
        }
        Ok(FeatureMatrix { layout, values, labels })
    }

    /// Encodes every image of `split` with `params`.
    pub fn encode(params: &ModelParams, split: &Split) -> Result<Self, EvalError> {
        let t = params.encode_tensor(split.images())?;
        Self::new(params.layout(), t.into_data(), split.labels().to_vec())
    }

    pub fn layout(&self) -> ChunkLayout {
        self.layout
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.layout.width();
        &self.values[i * w..(i + 1) * w]
    }

    pub fn rows(&self) -> Vec<&[f64]> {
        self.values.chunks_exact(self.layout.width()).collect()
    }

    pub fn factor_count(&self) -> usize {
        self.labels.first().map_or(0, |l| l.values().len())
    }

    pub fn factor(&self, f: usize) -> Result<Vec<usize>, EvalError> {
        if f >= self.factor_count() {
            return Err(EvalError::InvalidArgument(format!(
                "factor {f} out of range 0..{}",
                self.factor_count()
            )));
        }
        Ok(self.labels.iter().map(|l| l.values()[f]).collect())
    }
}

/// Test-split best-chunk table of `params`.
pub fn evaluate_retrieval(params: &ModelParams, data: &Dataset) -> Result<ChunkTable, EvalError> {
    best_chunk_table(&FeatureMatrix::encode(params, &data.test)?)
}

/// Probe accuracy per factor, fitted on train features and scored on test.
pub fn evaluate_probes(params: &ModelParams, data: &Dataset) -> Result<Vec<f64>, EvalError> {
    let train = FeatureMatrix::encode(params, &data.train)?;
    let test = FeatureMatrix::encode(params, &data.test)?;
    (0..train.factor_count()).map(|f| probe_factor(&train, &test, f)).collect()
}

pub fn probes_tsv(accuracies: &[f64]) -> String {
    let mut out = String::from("factor\taccuracy\n");
    for (f, a) in accuracies.iter().enumerate() {
        let _ = writeln!(out, "{}\t{a:.4}", factor_name(f));
    }
    out
}

pub const DEFAULT_CHUNK_SIZES: [usize; 6] = [2, 4, 8, 16, 32, 64];

/// Average best-chunk mAP per chunk size.
#[derive(Clone, Debug, PartialEq)]
pub struct SizeCurve {
    pub points: Vec<(usize, f64)>,
}

impl SizeCurve {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("chunk_size\tavg_map\n");
        for (d, m) in &self.points {
            let _ = writeln!(out, "{d}\t{m:.4}");
        }
        out
    }

    /// Curve maximum minus the value at the largest size.
    pub fn plateau_gap(&self) -> f64 {
        let max = self.points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        self.points.last().map_or(0.0, |p| max - p.1)
    }
}

/// Trains the full model once per chunk size (chunk count from `base`) and
/// records the average best-chunk mAP on the test split.
pub fn chunk_size_ablation(
    data: &Dataset,
    sizes: &[usize],
    base: &TrainConfig,
    mut on_point: impl FnMut(usize, f64),
) -> Result<SizeCurve, EvalError> {
    let mut points = Vec::with_capacity(sizes.len());
    for &d in sizes {
        let mut cfg = AblationRow::MixClsGan.config(base).expect("trained row");
        cfg.layout = ChunkLayout::new(base.layout.chunks, d)?;
        let out = train(&cfg, data.train.images(), &TrainOptions::default())?;
        let avg = evaluate_retrieval(&out.params, data)?.average();
        on_point(d, avg);
        points.push((d, avg));
    }
    Ok(SizeCurve { points })
}
