//! Procedural toy images with ground-truth factor labels.
//!
//! Each image is a flat-colored shape on a gray 16×16 background. The
//! factors are shape, hue, horizontal position and size; every combination
//! is repeated with a random vertical jitter of at most one pixel. Labels
//! exist for evaluation only: the trainer consumes [`Split::images`].
//!
//! ```
//! use chunkmix::dataset::{generate, FactorSpec};
//!
//! let data = generate(&FactorSpec::default(), 7, 5).unwrap();
//! assert_eq!((data.train.len(), data.test.len()), (288, 72));
//! ```

mod io;
mod render;

pub use io::{header_bytes, read_split, record_bytes, write_split, DATA_MAGIC};
pub use render::{render, render_jittered, BACKGROUND};

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::models::{IMAGE_CHANNELS, IMAGE_SIZE, PIXELS};

pub const TRAIN_FILE: &str = "train.bin";
pub const TEST_FILE: &str = "test.bin";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const DEFAULT_COPIES: usize = 25;
pub const FACTOR_NAMES: [&str; 4] = ["shape", "hue", "x_position", "size"];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid labels: {0}")]
    Labels(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Disk,
    Square,
    Triangle,
}

/// Values each factor can take. Labels index into these lists.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorSpec {
    pub shapes: Vec<Shape>,
    pub hues: Vec<[f32; 3]>,
    /// Horizontal offsets of the shape centre from the image centre.
    pub x_positions: Vec<i32>,
    /// Disk radius, square half-extent, triangle half-height.
    pub sizes: Vec<u32>,
    /// Vertical jitter is drawn uniformly from `-jitter..=jitter`.
    pub jitter: i32,
}

impl Default for FactorSpec {
    fn default() -> Self {
        FactorSpec {
            shapes: vec![Shape::Disk, Shape::Square, Shape::Triangle],
            hues: vec![[0.9, 0.1, 0.1], [0.1, 0.9, 0.1], [0.1, 0.1, 0.9], [0.9, 0.9, 0.1]],
            x_positions: vec![-4, 0, 4],
            sizes: vec![3, 5],
            jitter: 1,
        }
    }
}

impl FactorSpec {
    pub fn cardinalities(&self) -> Vec<usize> {
        vec![self.shapes.len(), self.hues.len(), self.x_positions.len(), self.sizes.len()]
    }

    pub fn combinations(&self) -> usize {
        self.cardinalities().iter().product()
    }

    /// Labels of combination `index` in row-major factor order.
    pub fn combination(&self, index: usize) -> FactorLabels {
        let cards = self.cardinalities();
        let mut rest = index;
        let mut values = vec![0; cards.len()];
        for (f, &c) in cards.iter().enumerate().rev() {
            values[f] = rest % c;
            rest /= c;
        }
        FactorLabels::new(values)
    }

    pub fn check(&self, labels: &FactorLabels) -> Result<(), DatasetError> {
        let cards = self.cardinalities();
        if labels.values().len() != cards.len() {
            return Err(DatasetError::Labels(format!(
                "expected {} factors, got {}",
                cards.len(),
                labels.values().len()
            )));
        }
        for ((&v, &c), name) in labels.values().iter().zip(&cards).zip(FACTOR_NAMES) {
            if v >= c {
                return Err(DatasetError::Labels(format!("{name} label {v} out of range 0..{c}")));
            }
        }
        Ok(())
    }
}

/// One label per factor.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FactorLabels(Vec<usize>);

impl FactorLabels {
    pub fn new(values: Vec<usize>) -> Self {
        FactorLabels(values)
    }

    pub fn values(&self) -> &[usize] {
        &self.0
    }
}

/// Images `[N, 3, 16, 16]` with labels aligned by index.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    images: Tensor,
    labels: Vec<FactorLabels>,
}

impl Split {
    pub fn new(pixels: Vec<f64>, labels: Vec<FactorLabels>) -> Result<Self, DatasetError> {
        if pixels.len() != labels.len() * PIXELS {
            return Err(DatasetError::InvalidArgument(format!(
                "{} pixels for {} labels",
                pixels.len(),
                labels.len()
            )));
        }
        let images = Tensor::new([labels.len(), IMAGE_CHANNELS, IMAGE_SIZE, IMAGE_SIZE], pixels)
            .map_err(|e| DatasetError::InvalidArgument(e.to_string()))?;
        Ok(Split { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[FactorLabels] {
        &self.labels
    }

    pub fn pixels(&self, i: usize) -> &[f64] {
        &self.images.data()[i * PIXELS..(i + 1) * PIXELS]
    }

    /// Labels of factor `f` for every image.
    pub fn factor(&self, f: usize) -> Vec<usize> {
        self.labels.iter().map(|l| l.values()[f]).collect()
    }
}

/// Stacks the images at `indices` into `[B, 3, 16, 16]`.
pub fn gather(images: &Tensor, indices: &[usize]) -> Tensor {
    let mut data = Vec::with_capacity(indices.len() * PIXELS);
    for &i in indices {
        data.extend_from_slice(&images.data()[i * PIXELS..(i + 1) * PIXELS]);
    }
    Tensor::new([indices.len(), IMAGE_CHANNELS, IMAGE_SIZE, IMAGE_SIZE], data).expect("pixel count")
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub seed: u64,
    pub copies_per_combo: usize,
    pub cardinalities: Vec<usize>,
    pub train_count: usize,
    pub test_count: usize,
    pub header_bytes: usize,
    pub record_bytes: usize,
}

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let cards: Vec<String> = self.cardinalities.iter().map(|c| c.to_string()).collect();
        format!(
            "format=CMDATA1\nseed={}\ncopies_per_combo={}\nfactors={}\ncardinalities={}\n\
             train_file={TRAIN_FILE}\ntrain_count={}\ntest_file={TEST_FILE}\ntest_count={}\n\
             header_bytes={}\nrecord_bytes={}\n",
            self.seed,
            self.copies_per_combo,
            FACTOR_NAMES[..self.cardinalities.len().min(FACTOR_NAMES.len())].join(","),
            cards.join(","),
            self.train_count,
            self.test_count,
            self.header_bytes,
            self.record_bytes
        )
    }

    pub fn parse(text: &str, path: &str) -> Result<Self, DatasetError> {
        let fmt = |msg: String| DatasetError::Format {
            path: path.to_string(),
            msg,
        };
        let mut kv = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| fmt(format!("line {}: expected key=value", i + 1)))?;
            kv.insert(k.trim(), v.trim());
        }
        let get = |k: &str| kv.get(k).copied().ok_or_else(|| fmt(format!("missing key {k}")));
        let num = |k: &str| -> Result<usize, DatasetError> {
            get(k)?.parse().map_err(|_| fmt(format!("{k} is not a number")))
        };
        if get("format")? != "CMDATA1" {
            return Err(fmt(format!("expected format CMDATA1, found {}", get("format")?)));
        }
        let cardinalities = get("cardinalities")?
            .split(',')
            .map(|c| c.parse().map_err(|_| fmt(format!("bad cardinality {c:?}"))))
            .collect::<Result<Vec<usize>, _>>()?;
        let m = DatasetManifest {
            seed: get("seed")?.parse().map_err(|_| fmt("seed is not a number".into()))?,
            copies_per_combo: num("copies_per_combo")?,
            train_count: num("train_count")?,
            test_count: num("test_count")?,
            header_bytes: num("header_bytes")?,
            record_bytes: num("record_bytes")?,
            cardinalities,
        };
        if m.header_bytes != header_bytes(m.cardinalities.len()) || m.record_bytes != record_bytes(m.cardinalities.len()) {
            return Err(fmt("header_bytes/record_bytes disagree with the factor count".into()));
        }
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Split,
    pub test: Split,
    pub manifest: DatasetManifest,
}

/// Copies of each combination that go to the test split.
pub fn test_copies(copies: usize) -> usize {
    if copies < 2 {
        0
    } else {
        ((copies as f64 * 0.2).round() as usize).clamp(1, copies - 1)
    }
}

/// Renders `copies` jittered instances of every combination and splits
/// each combination 80/20 between train and test.
pub fn generate(spec: &FactorSpec, seed: u64, copies: usize) -> Result<Dataset, DatasetError> {
    if copies == 0 {
        return Err(DatasetError::InvalidArgument("copies_per_combo must be at least 1".into()));
    }
    if spec.cardinalities().contains(&0) {
        return Err(DatasetError::InvalidArgument("every factor needs at least one value".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_test = test_copies(copies);
    let (mut train_px, mut train_lb) = (Vec::new(), Vec::new());
    let (mut test_px, mut test_lb) = (Vec::new(), Vec::new());
    for combo in 0..spec.combinations() {
        let labels = spec.combination(combo);
        let jitters: Vec<i32> = (0..copies).map(|_| rng.random_range(-spec.jitter..=spec.jitter)).collect();
        let mut order: Vec<usize> = (0..copies).collect();
        order.shuffle(&mut rng);
        let mut is_test = vec![false; copies];
        for &k in &order[..n_test] {
            is_test[k] = true;
        }
        for (k, &j) in jitters.iter().enumerate() {
            let px = render_jittered(spec, &labels, j)?;
            let (dst_px, dst_lb) = if is_test[k] {
                (&mut test_px, &mut test_lb)
            } else {
                (&mut train_px, &mut train_lb)
            };
            dst_px.extend(px.iter().map(|&p| p as f64));
            dst_lb.push(labels.clone());
        }
    }
    let cards = spec.cardinalities();
    let manifest = DatasetManifest {
        seed,
        copies_per_combo: copies,
        train_count: train_lb.len(),
        test_count: test_lb.len(),
        header_bytes: header_bytes(cards.len()),
        record_bytes: record_bytes(cards.len()),
        cardinalities: cards,
    };
    Ok(Dataset {
        train: Split::new(train_px, train_lb)?,
        test: Split::new(test_px, test_lb)?,
        manifest,
    })
}

impl Dataset {
    /// Writes the two data files and the manifest into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), DatasetError> {
        std::fs::create_dir_all(dir).map_err(|source| DatasetError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        write_split(&dir.join(TRAIN_FILE), &self.train, &self.manifest.cardinalities)?;
        write_split(&dir.join(TEST_FILE), &self.test, &self.manifest.cardinalities)?;
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, self.manifest.to_text()).map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Reads a dataset directory written by [`Dataset::write`].
pub fn load(dir: &Path) -> Result<Dataset, DatasetError> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&mpath).map_err(|source| DatasetError::Io {
        path: mpath.display().to_string(),
        source,
    })?;
    let manifest = DatasetManifest::parse(&text, &mpath.display().to_string())?;
    let mut splits = Vec::new();
    for (file, count) in [(TRAIN_FILE, manifest.train_count), (TEST_FILE, manifest.test_count)] {
        let path = dir.join(file);
        let (split, cards) = read_split(&path)?;
        if cards != manifest.cardinalities || split.len() != count {
            return Err(DatasetError::Format {
                path: path.display().to_string(),
                msg: format!(
                    "file holds {} images with cardinalities {cards:?}, manifest says {count} with {:?}",
                    split.len(),
                    manifest.cardinalities
                ),
            });
        }
        splits.push(split);
    }
    let test = splits.pop().expect("two splits");
    let train = splits.pop().expect("two splits");
    Ok(Dataset { train, test, manifest })
}

#[cfg(test)]
mod tests;
