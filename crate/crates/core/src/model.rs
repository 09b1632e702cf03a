//! Pluggable per-pixel segmenter and the reference patch-feature multinomial
//! logistic regression trained by class-weighted cross-entropy with plain SGD.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{ClassId, GrayRaster, LabelGrid, ProbabilityGrid};
use crate::scalar::Scalar;
use crate::weights::ClassWeights;

/// Probabilities are clamped to this floor before taking the log.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmenterConfig {
    pub patch_size: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub include_unknown_as_class: bool,
    /// Optimize on intensity features shifted by the training-region mean.
    /// The returned parameters act on the unshifted features.
    pub center_features: bool,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            patch_size: 15,
            learning_rate: 0.001,
            batch_size: 64,
            max_epochs: 50,
            seed: 0,
            include_unknown_as_class: true,
            center_features: true,
        }
    }
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 3 || self.patch_size % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "patch_size must be odd and >= 3, got {}",
                self.patch_size
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::InvalidConfig("batch_size and max_epochs must be >= 1".into()));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        feature_dim(self.patch_size)
    }
}

/// Raw patch intensities plus patch mean and standard deviation.
pub fn feature_dim(patch_size: usize) -> usize {
    patch_size * patch_size + 2
}

/// Linear softmax model over patch features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmenterParams<T> {
    pub feature_dim: usize,
    /// `feature_dim` rows of per-class coefficients.
    pub weights: Vec<[T; 4]>,
    pub bias: [T; 4],
    pub config: SegmenterConfig,
}

impl<T: Scalar> SegmenterParams<T> {
    pub fn zeros(config: &SegmenterConfig) -> Self {
        let d = config.feature_dim();
        Self {
            feature_dim: d,
            weights: vec![[T::zero(); 4]; d],
            bias: [T::zero(); 4],
            config: config.clone(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.bias.iter().chain(self.weights.iter().flatten()).all(|v| v.is_finite())
    }

    pub fn logits(&self, features: &[T]) -> [T; 4] {
        let mut z = self.bias;
        for (x, row) in features.iter().zip(&self.weights) {
            for k in 0..4 {
                z[k] = z[k] + *x * row[k];
            }
        }
        z
    }

    pub fn probabilities(&self, features: &[T]) -> [T; 4] {
        softmax(self.logits(features))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
        let params: Self = serde_json::from_str(&text)?;
        params.config.validate()?;
        if params.weights.len() != params.feature_dim || params.feature_dim != params.config.feature_dim() {
            return Err(Error::InvalidConfig("parameter shape disagrees with feature_dim".into()));
        }
        if !params.is_finite() {
            return Err(Error::InvalidConfig("non-finite parameters".into()));
        }
        Ok(params)
    }
}

/// Gradient with the same shape as [`SegmenterParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient<T> {
    pub weights: Vec<[T; 4]>,
    pub bias: [T; 4],
}

pub fn softmax<T: Scalar>(z: [T; 4]) -> [T; 4] {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    let e = z.map(|v| (v - m).exp());
    let s = e[0] + e[1] + e[2] + e[3];
    e.map(|v| v / s)
}

/// Training or evaluation samples: `features` is row-major `labels.len() x feature_dim`.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a, T> {
    pub features: &'a [T],
    pub labels: &'a [ClassId],
}

impl<'a, T: Scalar> Batch<'a, T> {
    pub fn new(features: &'a [T], labels: &'a [ClassId]) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if features.len() % labels.len() != 0 {
            return Err(Error::DimensionMismatch(format!(
                "{} feature values for {} samples",
                features.len(),
                labels.len()
            )));
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.len() / self.labels.len()
    }

    pub fn sample(&self, i: usize) -> &'a [T] {
        let d = self.dim();
        &self.features[i * d..(i + 1) * d]
    }
}

/// How zero probabilities on the true class are handled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClampPolicy {
    /// Clamp to [`PROBABILITY_FLOOR`] before the log.
    Floor,
    /// Report `ZeroProbability` instead.
    Strict,
}

/// Mean over the batch of `lambda[label] * -ln p[label]`.
pub fn weighted_ce_loss<T: Scalar>(
    probs: &[[T; 4]],
    labels: &[ClassId],
    w: &ClassWeights<T>,
    policy: ClampPolicy,
) -> Result<T> {
    if labels.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if probs.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} probability vectors for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let floor = T::from_f64_lossy(PROBABILITY_FLOOR);
    let mut total = T::zero();
    for (i, (p, &y)) in probs.iter().zip(labels).enumerate() {
        if !crate::raster::check_probability_vector(p) {
            return Err(Error::InvalidProbability(format!("sample {i}: {p:?}")));
        }
        let py = p[y.index()];
        if py <= T::zero() && policy == ClampPolicy::Strict {
            return Err(Error::ZeroProbability(i));
        }
        total = total - w.get(y) * py.max(floor).ln();
    }
    Ok(total / T::from_usize_lossy(labels.len()))
}

/// Per-sample contribution: returns the weighted loss and adds `scale * dL/dz` into `dz`.
#[inline]
fn sample_loss_and_dlogits<T: Scalar>(p: &[T; 4], y: ClassId, lambda: T, floor: T, scale: T, dz: &mut [T; 4]) -> T {
    let py = p[y.index()];
    if py < floor {
        // clamped region: loss is constant in the logits
        return -lambda * floor.ln();
    }
    for k in 0..4 {
        let target = if k == y.index() { T::one() } else { T::zero() };
        dz[k] = lambda * (p[k] - target) * scale;
    }
    -lambda * py.ln()
}

/// Analytic gradient of the batch-mean weighted cross-entropy of the softmax-linear model.
pub fn loss_gradient<T: Scalar>(params: &SegmenterParams<T>, batch: &Batch<'_, T>, w: &ClassWeights<T>) -> Result<Gradient<T>> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if batch.dim() != params.feature_dim {
        return Err(Error::DimensionMismatch(format!(
            "batch has {} features, model expects {}",
            batch.dim(),
            params.feature_dim
        )));
    }
    let mut grad = Gradient {
        weights: vec![[T::zero(); 4]; params.feature_dim],
        bias: [T::zero(); 4],
    };
    accumulate_batch(params, batch, w, &mut grad);
    Ok(grad)
}

/// Adds the batch gradient into `grad` and returns the summed (not averaged) loss.
fn accumulate_batch<T: Scalar>(params: &SegmenterParams<T>, batch: &Batch<'_, T>, w: &ClassWeights<T>, grad: &mut Gradient<T>) -> T {
    let floor = T::from_f64_lossy(PROBABILITY_FLOOR);
    let scale = T::one() / T::from_usize_lossy(batch.len());
    let mut total = T::zero();
    for (i, &y) in batch.labels.iter().enumerate() {
        let x = batch.sample(i);
        let p = params.probabilities(x);
        let mut dz = [T::zero(); 4];
        total = total + sample_loss_and_dlogits(&p, y, w.get(y), floor, scale, &mut dz);
        for k in 0..4 {
            grad.bias[k] = grad.bias[k] + dz[k];
        }
        for (xd, g) in x.iter().zip(grad.weights.iter_mut()) {
            for k in 0..4 {
                g[k] = g[k] + *xd * dz[k];
            }
        }
    }
    total
}

/// Raster intensities scaled to [0,1], kept for fast patch extraction.
#[derive(Debug, Clone)]
pub struct FeatureSource<T> {
    width: usize,
    height: usize,
    values: Vec<T>,
}

impl<T: Scalar> FeatureSource<T> {
    pub fn new(raster: &GrayRaster) -> Self {
        let scale = T::one() / T::from_f64_lossy(255.0);
        Self {
            width: raster.width(),
            height: raster.height(),
            values: raster.values().iter().map(|&v| T::from_f64_lossy(v as f64) * scale).collect(),
        }
    }

    /// Writes the `patch_size² + 2` features of pixel `(col,row)` into `out`,
    /// replicating edge pixels outside the raster.
    pub fn fill(&self, col: usize, row: usize, patch_size: usize, out: &mut [T]) {
        let half = (patch_size / 2) as isize;
        let n = patch_size * patch_size;
        let (w, h) = (self.width as isize, self.height as isize);
        let mut k = 0;
        for dr in -half..=half {
            let r = (row as isize + dr).clamp(0, h - 1) as usize;
            let line = &self.values[r * self.width..(r + 1) * self.width];
            for dc in -half..=half {
                let c = (col as isize + dc).clamp(0, w - 1) as usize;
                out[k] = line[c];
                k += 1;
            }
        }
        let nt = T::from_usize_lossy(n);
        let mean = out[..n].iter().copied().sum::<T>() / nt;
        let var = out[..n].iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nt;
        out[n] = mean;
        out[n + 1] = var.sqrt();
    }
}

pub fn extract_features<T: Scalar>(raster: &GrayRaster, pixel: (usize, usize), patch_size: usize) -> Result<Vec<T>> {
    let (col, row) = pixel;
    if col >= raster.width() || row >= raster.height() {
        return Err(Error::OutOfBounds {
            col,
            row,
            width: raster.width(),
            height: raster.height(),
        });
    }
    if patch_size == 0 || patch_size % 2 == 0 {
        return Err(Error::InvalidConfig(format!("patch_size must be odd, got {patch_size}")));
    }
    let mut out = vec![T::zero(); feature_dim(patch_size)];
    FeatureSource::new(raster).fill(col, row, patch_size, &mut out);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport<T> {
    pub epoch_losses: Vec<T>,
    pub final_loss: T,
    pub epochs_run: usize,
    pub weights: ClassWeights<T>,
    pub seed: u64,
    pub samples: usize,
    /// Training always runs to `max_epochs`.
    pub early_stopping: bool,
}

#[derive(Serialize)]
struct EpochRecord {
    epoch: usize,
    loss: f64,
}

impl<T: Scalar> TrainReport<T> {
    /// One JSON record per epoch.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for (i, l) in self.epoch_losses.iter().enumerate() {
            out.push_str(&serde_json::to_string(&EpochRecord {
                epoch: i + 1,
                loss: l.to_f64_lossy(),
            })?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_jsonl()?.as_bytes())?;
        Ok(())
    }
}

/// Interface a segmentation backend offers to the workflow.
pub trait Segmenter<T: Scalar> {
    type Params: Clone + Serialize;

    /// Fit on the pixels selected by `region` (all pixels when `None`).
    fn fit(
        &self,
        raster: &GrayRaster,
        mask: &LabelGrid,
        region: Option<&[bool]>,
        weights: &ClassWeights<T>,
    ) -> Result<(Self::Params, TrainReport<T>)>;

    fn predict(&self, params: &Self::Params, raster: &GrayRaster) -> Result<ProbabilityGrid<T>>;
}

/// The patch-feature logistic-regression reference backend.
#[derive(Debug, Clone, Default)]
pub struct LogisticSegmenter {
    pub config: SegmenterConfig,
}

impl LogisticSegmenter {
    pub fn new(config: SegmenterConfig) -> Self {
        Self { config }
    }
}

impl<T: Scalar> Segmenter<T> for LogisticSegmenter {
    type Params = SegmenterParams<T>;

    fn fit(
        &self,
        raster: &GrayRaster,
        mask: &LabelGrid,
        region: Option<&[bool]>,
        weights: &ClassWeights<T>,
    ) -> Result<(SegmenterParams<T>, TrainReport<T>)> {
        train_in_region(raster, mask, region, weights, &self.config)
    }

    fn predict(&self, params: &SegmenterParams<T>, raster: &GrayRaster) -> Result<ProbabilityGrid<T>> {
        predict(params, raster)
    }
}

/// Train on every pixel of `train_mask`.
pub fn train<T: Scalar>(
    raster: &GrayRaster,
    train_mask: &LabelGrid,
    w: &ClassWeights<T>,
    cfg: &SegmenterConfig,
) -> Result<(SegmenterParams<T>, TrainReport<T>)> {
    train_in_region(raster, train_mask, None, w, cfg)
}

/// Minibatch SGD over the pixels inside `region`; Unknown pixels take part as
/// the background class unless the config excludes them.
pub fn train_in_region<T: Scalar>(
    raster: &GrayRaster,
    mask: &LabelGrid,
    region: Option<&[bool]>,
    w: &ClassWeights<T>,
    cfg: &SegmenterConfig,
) -> Result<(SegmenterParams<T>, TrainReport<T>)> {
    cfg.validate()?;
    if raster.width() != mask.width() || raster.height() != mask.height() {
        return Err(Error::DimensionMismatch(format!(
            "raster {}x{} vs mask {}x{}",
            raster.width(),
            raster.height(),
            mask.width(),
            mask.height()
        )));
    }
    if let Some(r) = region {
        if r.len() != mask.len() {
            return Err(Error::DimensionMismatch("region mask size".into()));
        }
    }
    let labels = mask.labels();
    let mut samples: Vec<u32> = Vec::new();
    let mut present = [0u64; 4];
    for (i, &c) in labels.iter().enumerate() {
        if region.is_some_and(|r| !r[i]) {
            continue;
        }
        if c == ClassId::Unknown && !cfg.include_unknown_as_class {
            continue;
        }
        present[c.index()] += 1;
        samples.push(i as u32);
    }
    for class in ClassId::ANNOTATED {
        if present[class.index()] == 0 {
            return Err(Error::MissingClass(class.name().to_string()));
        }
    }

    let source = FeatureSource::<T>::new(raster);
    let d = cfg.feature_dim();
    // every intensity-valued feature (patch values and patch mean) shares one shift
    let shift = if cfg.center_features {
        let total: f64 = samples.iter().map(|&i| raster.values()[i as usize] as f64).sum();
        T::from_f64_lossy(total / samples.len() as f64 / 255.0)
    } else {
        T::zero()
    };
    let mut params = SegmenterParams::<T>::zeros(cfg);
    let mut grad = Gradient {
        weights: vec![[T::zero(); 4]; d],
        bias: [T::zero(); 4],
    };
    let mut feat = vec![T::zero(); cfg.batch_size * d];
    let mut batch_labels = Vec::with_capacity(cfg.batch_size);
    let lr = T::from_f64_lossy(cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let width = mask.width();
    let mut epoch_losses = Vec::with_capacity(cfg.max_epochs);

    for epoch in 0..cfg.max_epochs {
        samples.shuffle(&mut rng);
        let mut epoch_total = T::zero();
        for chunk in samples.chunks(cfg.batch_size) {
            batch_labels.clear();
            for (j, &idx) in chunk.iter().enumerate() {
                let idx = idx as usize;
                let row = &mut feat[j * d..(j + 1) * d];
                source.fill(idx % width, idx / width, cfg.patch_size, row);
                for v in &mut row[..d - 1] {
                    *v = *v - shift;
                }
                batch_labels.push(labels[idx]);
            }
            let batch = Batch {
                features: &feat[..chunk.len() * d],
                labels: &batch_labels,
            };
            for g in grad.weights.iter_mut() {
                *g = [T::zero(); 4];
            }
            grad.bias = [T::zero(); 4];
            epoch_total = epoch_total + accumulate_batch(&params, &batch, w, &mut grad);
            for (p, g) in params.weights.iter_mut().zip(&grad.weights) {
                for k in 0..4 {
                    p[k] = p[k] - lr * g[k];
                }
            }
            for k in 0..4 {
                params.bias[k] = params.bias[k] - lr * grad.bias[k];
            }
        }
        let epoch_loss = epoch_total / T::from_usize_lossy(samples.len());
        epoch_losses.push(epoch_loss);
        log::debug!("epoch {} loss {}", epoch + 1, epoch_loss);
        if !epoch_loss.is_finite() || !params.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: epoch + 1,
                losses: epoch_losses.iter().map(|l| l.to_f64_lossy()).collect(),
            });
        }
    }
    // fold the shift into the bias: W·(x - s) + b = W·x + (b - W·s)
    for row in &params.weights[..d - 1] {
        for k in 0..4 {
            params.bias[k] = params.bias[k] - row[k] * shift;
        }
    }
    let report = TrainReport {
        final_loss: *epoch_losses.last().expect("at least one epoch"),
        epochs_run: epoch_losses.len(),
        epoch_losses,
        weights: *w,
        seed: cfg.seed,
        samples: samples.len(),
        early_stopping: false,
    };
    Ok((params, report))
}

/// Rows per parallel work unit during prediction.
const PREDICT_ROWS_PER_TILE: usize = 16;

/// Softmax probabilities at every pixel. Rows are processed in parallel
/// tiles; each pixel depends only on its own patch.
pub fn predict<T: Scalar>(params: &SegmenterParams<T>, raster: &GrayRaster) -> Result<ProbabilityGrid<T>> {
    if !params.is_finite() {
        return Err(Error::InvalidConfig("non-finite parameters".into()));
    }
    let source = FeatureSource::<T>::new(raster);
    let (w, h) = (raster.width(), raster.height());
    let patch = params.config.patch_size;
    let mut probs = vec![[T::zero(); 4]; w * h];
    probs
        .par_chunks_mut(w * PREDICT_ROWS_PER_TILE)
        .enumerate()
        .for_each(|(tile, out)| {
            let mut feat = vec![T::zero(); params.feature_dim];
            for (k, p) in out.iter_mut().enumerate() {
                let idx = tile * w * PREDICT_ROWS_PER_TILE + k;
                source.fill(idx % w, idx / w, patch, &mut feat);
                *p = params.probabilities(&feat);
            }
        });
    ProbabilityGrid::new(w, h, probs, *raster.geo())
}

/// Most probable class per pixel; ties resolve toward the lower class code.
pub fn argmax_labels<T: Scalar>(p: &ProbabilityGrid<T>) -> LabelGrid {
    let labels = p
        .probs()
        .iter()
        .map(|v| {
            let mut best = 0;
            for k in 1..4 {
                if v[k] > v[best] {
                    best = k;
                }
            }
            ClassId::ALL[best]
        })
        .collect();
    LabelGrid::new(p.width(), p.height(), labels, *p.geo()).expect("dimensions carried over")
}
