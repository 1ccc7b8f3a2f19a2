//! Class attention head: one 1×1 filter per object class over a feature
//! volume, global average pooling to image-level scores, independent
//! per-class logistic losses, and a plain full-batch gradient-descent
//! trainer.
//!
//! The head covers only object classes. Background has no filter; its cues
//! come from thresholding later on.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{normalize_slice, ClassId, ScoreMap, ScoreVolume, BACKGROUND, IGNORE};

/// Probabilities are clamped to this distance from 0 and 1 inside logs.
pub const PROB_EPS: f64 = 1e-7;

/// Standard deviation of the Gaussian used to initialize filter weights.
pub const INIT_STD: f64 = 0.01;

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn clamped_ln(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS).ln()
}

/// K×H×W feature volume, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVolume {
    channels: usize,
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl FeatureVolume {
    pub fn new(channels: usize, width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::InvalidDimensions { width, height });
        }
        if data.len() != channels * width * height {
            return Err(Error::LengthMismatch {
                expected: channels * width * height,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite feature value".into()));
        }
        Ok(Self {
            channels,
            width,
            height,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn channel(&self, k: usize) -> &[f32] {
        let plane = self.width * self.height;
        &self.data[k * plane..(k + 1) * plane]
    }

    /// Spatial mean of every channel.
    pub fn channel_means(&self) -> Vec<f64> {
        let n = (self.width * self.height) as f64;
        (0..self.channels)
            .map(|k| self.channel(k).iter().map(|&v| v as f64).sum::<f64>() / n)
            .collect()
    }
}

/// Per-class 1×1 filters and biases over `channels` feature channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassFilterBank {
    classes: Vec<ClassId>,
    channels: usize,
    weights: Vec<Vec<f32>>,
    biases: Vec<f32>,
}

impl ClassFilterBank {
    pub fn new(classes: Vec<ClassId>, weights: Vec<Vec<f32>>, biases: Vec<f32>) -> Result<Self> {
        let channels = weights.first().map_or(0, Vec::len);
        if channels == 0 {
            return Err(Error::InvalidParameter("filter bank needs K >= 1".into()));
        }
        if weights.len() != classes.len() || biases.len() != classes.len() {
            return Err(Error::ClassSetMismatch(format!(
                "{} classes, {} filters, {} biases",
                classes.len(),
                weights.len(),
                biases.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| w.len() != channels) {
            return Err(Error::ChannelMismatch {
                expected: channels,
                actual: w.len(),
            });
        }
        Ok(Self {
            classes,
            channels,
            weights,
            biases,
        })
    }

    pub fn zeros(classes: Vec<ClassId>, channels: usize) -> Result<Self> {
        let n = classes.len();
        Self::new(classes, vec![vec![0.0; channels]; n], vec![0.0; n])
    }

    /// Zero-mean Gaussian weights with standard deviation [`INIT_STD`],
    /// zero biases. Deterministic in `seed`.
    pub fn init_gaussian(classes: Vec<ClassId>, channels: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("finite std");
        let weights = classes
            .iter()
            .map(|_| {
                (0..channels)
                    .map(|_| normal.sample(&mut rng) as f32)
                    .collect()
            })
            .collect();
        let n = classes.len();
        Self::new(classes, weights, vec![0.0; n])
    }

    pub fn classes(&self) -> &[ClassId] {
        &self.classes
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn weights(&self) -> &[Vec<f32>] {
        &self.weights
    }

    pub fn biases(&self) -> &[f32] {
        &self.biases
    }

    fn raw_score(&self, i: usize, means: &[f64]) -> f64 {
        self.weights[i]
            .iter()
            .zip(means)
            .map(|(&w, &m)| w as f64 * m)
            .sum::<f64>()
            + self.biases[i] as f64
    }

    fn check_channels(&self, f: &FeatureVolume) -> Result<()> {
        if f.channels != self.channels {
            return Err(Error::ChannelMismatch {
                expected: self.channels,
                actual: f.channels,
            });
        }
        Ok(())
    }
}

/// Image-level scores: raw GAP output and its logistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub classes: Vec<ClassId>,
    pub raw: Vec<f64>,
    pub prob: Vec<f64>,
}

impl ClassScores {
    pub fn from_raw(classes: Vec<ClassId>, raw: Vec<f64>) -> Self {
        let prob = raw.iter().map(|&z| logistic(z)).collect();
        Self { classes, raw, prob }
    }

    /// Classes predicted present (probability above one half).
    pub fn predicted(&self) -> BTreeSet<ClassId> {
        self.classes
            .iter()
            .zip(&self.prob)
            .filter(|(_, &p)| p > 0.5)
            .map(|(&c, _)| c)
            .collect()
    }
}

/// Object labels present in an image, over the label space
/// `0..num_labels` with `0` as background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageTags {
    present: BTreeSet<ClassId>,
    num_labels: usize,
}

impl ImageTags {
    pub fn new(present: impl IntoIterator<Item = ClassId>, num_labels: usize) -> Result<Self> {
        if num_labels == 0 || num_labels > IGNORE as usize {
            return Err(Error::InvalidParameter(format!(
                "label space size {num_labels} outside 1..=255"
            )));
        }
        let present: BTreeSet<ClassId> = present.into_iter().collect();
        if present.contains(&BACKGROUND) {
            return Err(Error::InvalidParameter(
                "background cannot be an image tag".into(),
            ));
        }
        if let Some(&label) = present.iter().find(|&&c| c as usize >= num_labels) {
            return Err(Error::LabelOutOfRange { label, num_labels });
        }
        Ok(Self {
            present,
            num_labels,
        })
    }

    pub fn present(&self) -> &BTreeSet<ClassId> {
        &self.present
    }

    pub fn contains(&self, c: ClassId) -> bool {
        self.present.contains(&c)
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    /// The object classes `1..num_labels`.
    pub fn object_classes(&self) -> Vec<ClassId> {
        (1..self.num_labels as ClassId).collect()
    }

    /// Background plus the present classes, ascending.
    pub fn candidates(&self) -> Vec<ClassId> {
        std::iter::once(BACKGROUND)
            .chain(self.present.iter().copied())
            .collect()
    }
}

/// Attention volume `V_c(m) = w_c · F(m) + b_c` and GAP scores.
pub fn head_forward(f: &FeatureVolume, w: &ClassFilterBank) -> Result<(ScoreVolume, ClassScores)> {
    w.check_channels(f)?;
    let plane = f.width * f.height;
    let mut maps = Vec::with_capacity(w.classes.len());
    let mut raw = Vec::with_capacity(w.classes.len());
    for (weights, &bias) in w.weights.iter().zip(&w.biases) {
        let mut acc = vec![bias as f64; plane];
        for (k, &wk) in weights.iter().enumerate() {
            for (a, &v) in acc.iter_mut().zip(f.channel(k)) {
                *a += wk as f64 * v as f64;
            }
        }
        raw.push(acc.iter().sum::<f64>() / plane as f64);
        maps.push(ScoreMap::new(
            f.width,
            f.height,
            acc.into_iter().map(|v| v as f32).collect(),
        )?);
    }
    let volume = ScoreVolume::new(f.width, f.height, w.classes.clone(), maps)?;
    Ok((volume, ClassScores::from_raw(w.classes.clone(), raw)))
}

fn check_covers_objects(classes: &[ClassId], tags: &ImageTags) -> Result<()> {
    if classes != tags.object_classes().as_slice() {
        return Err(Error::ClassSetMismatch(format!(
            "scores cover {classes:?}, label space has object classes 1..{}",
            tags.num_labels()
        )));
    }
    Ok(())
}

/// Mean over classes of the binary cross-entropy between the predicted
/// probability and the tag indicator.
pub fn classification_loss(scores: &ClassScores, tags: &ImageTags) -> Result<f64> {
    check_covers_objects(&scores.classes, tags)?;
    if scores.classes.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = scores
        .classes
        .iter()
        .zip(&scores.prob)
        .map(|(&c, &p)| {
            if tags.contains(c) {
                -clamped_ln(p)
            } else {
                -clamped_ln(1.0 - p)
            }
        })
        .sum();
    Ok(total / scores.classes.len() as f64)
}

/// Gradient of [`classification_loss`] with respect to the filter bank.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterGradient {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

impl FilterGradient {
    fn zeros(classes: usize, channels: usize) -> Self {
        Self {
            weights: vec![vec![0.0; channels]; classes],
            biases: vec![0.0; classes],
        }
    }

    fn add_scaled(&mut self, other: &FilterGradient, scale: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
        for (x, y) in self.biases.iter_mut().zip(&other.biases) {
            *x += scale * y;
        }
    }
}

fn grad_from_means(w: &ClassFilterBank, means: &[f64], tags: &ImageTags) -> FilterGradient {
    let n = w.classes.len() as f64;
    let mut g = FilterGradient::zeros(w.classes.len(), w.channels);
    for (i, &c) in w.classes.iter().enumerate() {
        let target = if tags.contains(c) { 1.0 } else { 0.0 };
        let delta = (logistic(w.raw_score(i, means)) - target) / n;
        for (gk, &m) in g.weights[i].iter_mut().zip(means) {
            *gk = delta * m;
        }
        g.biases[i] = delta;
    }
    g
}

/// Analytic gradient of the per-image classification loss. The log clamp is
/// ignored, so the result is exact wherever probabilities stay inside
/// `[PROB_EPS, 1 - PROB_EPS]`.
pub fn classification_grad(
    f: &FeatureVolume,
    w: &ClassFilterBank,
    tags: &ImageTags,
) -> Result<FilterGradient> {
    w.check_channels(f)?;
    check_covers_objects(&w.classes, tags)?;
    Ok(grad_from_means(w, &f.channel_means(), tags))
}

/// Trained filters together with the dataset loss after each update
/// (`losses[0]` is the loss at initialization).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedHead {
    pub bank: ClassFilterBank,
    pub losses: Vec<f64>,
}

fn dataset_loss(w: &ClassFilterBank, means: &[Vec<f64>], tags: &[&ImageTags]) -> f64 {
    let total: f64 = means
        .iter()
        .zip(tags)
        .map(|(m, t)| {
            let raw = (0..w.classes.len()).map(|i| w.raw_score(i, m)).collect();
            let scores = ClassScores::from_raw(w.classes.clone(), raw);
            classification_loss(&scores, t).expect("classes checked by caller")
        })
        .sum();
    total / means.len() as f64
}

/// Full-batch gradient descent on the mean classification loss over the
/// dataset.
pub fn train_head(
    dataset: &[(FeatureVolume, ImageTags)],
    lr: f64,
    steps: usize,
    seed: u64,
) -> Result<TrainedHead> {
    let (first_f, first_t) = dataset.first().ok_or(Error::EmptyDataset)?;
    let channels = first_f.channels;
    let classes = first_t.object_classes();
    for (f, t) in dataset {
        if f.channels != channels {
            return Err(Error::ChannelMismatch {
                expected: channels,
                actual: f.channels,
            });
        }
        if t.num_labels() != first_t.num_labels() {
            return Err(Error::ClassSetMismatch(
                "records disagree on label space size".into(),
            ));
        }
    }
    if !lr.is_finite() || lr < 0.0 {
        return Err(Error::InvalidParameter(format!("learning rate {lr}")));
    }
    let mut bank = ClassFilterBank::init_gaussian(classes, channels, seed)?;
    let means: Vec<Vec<f64>> = dataset.iter().map(|(f, _)| f.channel_means()).collect();
    let tags: Vec<&ImageTags> = dataset.iter().map(|(_, t)| t).collect();
    let scale = 1.0 / dataset.len() as f64;

    let mut losses = Vec::with_capacity(steps + 1);
    losses.push(dataset_loss(&bank, &means, &tags));
    for _ in 0..steps {
        let mut g = FilterGradient::zeros(bank.classes.len(), channels);
        for (m, t) in means.iter().zip(&tags) {
            g.add_scaled(&grad_from_means(&bank, m, t), scale);
        }
        for (w, gw) in bank.weights.iter_mut().zip(&g.weights) {
            for (x, d) in w.iter_mut().zip(gw) {
                *x = (*x as f64 - lr * d) as f32;
            }
        }
        for (b, d) in bank.biases.iter_mut().zip(&g.biases) {
            *b = (*b as f64 - lr * d) as f32;
        }
        losses.push(dataset_loss(&bank, &means, &tags));
    }
    Ok(TrainedHead { bank, losses })
}

/// Fraction of (image, class) presence decisions the head gets right.
pub fn tag_accuracy(bank: &ClassFilterBank, dataset: &[(FeatureVolume, ImageTags)]) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    for (f, t) in dataset {
        let (_, scores) = head_forward(f, bank)?;
        let predicted = scores.predicted();
        for &c in &scores.classes {
            correct += usize::from(predicted.contains(&c) == t.contains(c));
            total += 1;
        }
    }
    Ok(correct as f64 / total.max(1) as f64)
}

/// Slices of the present classes, each min-max normalized.
pub fn extract_attention(v: &ScoreVolume, tags: &ImageTags) -> Result<ScoreVolume> {
    let present: Vec<ClassId> = tags.present().iter().copied().collect();
    let selected = v.select(&present)?;
    let maps = selected.maps().iter().map(normalize_slice).collect();
    ScoreVolume::new(v.width(), v.height(), present, maps)
}
