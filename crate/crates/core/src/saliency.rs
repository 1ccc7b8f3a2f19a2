//! Hierarchical saliency by iterative erasing.
//!
//! A class-agnostic detector usually fires on one dominant object. Erasing
//! the pixels it already claimed (replacing them with the dataset mean
//! color) and rescoring lets it find the next object; rounds are merged by
//! pointwise maximum.

mod external;

pub use external::{ExternalDetector, ExternalDetectorConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{box_blur, fuse_max, normalize_slice, ScoreMap};

pub type Rgb = [u8; 3];

pub const MID_GRAY: Rgb = [128, 128, 128];

/// Erase thresholds for the first and second erasing round.
pub const DEFAULT_THRESHOLDS: [f32; 2] = [0.7, 0.8];

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDimensions { width, height });
        }
        if data.len() != 3 * width * height {
            return Err(Error::LengthMismatch {
                expected: 3 * width * height,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, color: Rgb) -> Result<Self> {
        Self::new(width, height, color.repeat(width * height))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, i: usize) -> Rgb {
        [self.data[3 * i], self.data[3 * i + 1], self.data[3 * i + 2]]
    }

    pub fn set_pixel(&mut self, i: usize, color: Rgb) {
        self.data[3 * i..3 * i + 3].copy_from_slice(&color);
    }

    pub fn pixels(&self) -> impl Iterator<Item = Rgb> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }
}

/// Anything that turns an image into a normalized, same-sized saliency map.
///
/// Implementations may keep mutable state and need not be `Sync`; each
/// worker owns its own detector.
pub trait SaliencyDetector {
    fn score(&mut self, image: &RgbImage) -> Result<ScoreMap>;
}

impl<D: SaliencyDetector + ?Sized> SaliencyDetector for Box<D> {
    fn score(&mut self, image: &RgbImage) -> Result<ScoreMap> {
        (**self).score(image)
    }
}

/// Runs the detector and enforces its output contract.
pub fn checked_score(det: &mut dyn SaliencyDetector, image: &RgbImage) -> Result<ScoreMap> {
    let s = det.score(image)?;
    if s.dims() != image.dims() {
        return Err(Error::Detector(format!(
            "output is {:?}, image is {:?}",
            s.dims(),
            image.dims()
        )));
    }
    if s.is_normalized() {
        return Ok(s);
    }
    s.into_normalized()
        .map_err(|e| Error::Detector(e.to_string()))
}

/// Which map decides the pixels erased in a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EraseSource {
    /// Threshold the fused map accumulated so far and erase the original
    /// image.
    #[default]
    Fused,
    /// Threshold only the previous round's raw detector output and erase
    /// on top of the previously erased image.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErasePolicy {
    /// One threshold per erasing round.
    pub thresholds: Vec<f32>,
    pub mean_pixel: Rgb,
    #[serde(default)]
    pub source: EraseSource,
}

impl Default for ErasePolicy {
    fn default() -> Self {
        Self {
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            mean_pixel: MID_GRAY,
            source: EraseSource::Fused,
        }
    }
}

impl ErasePolicy {
    pub fn validate(&self) -> Result<()> {
        match self.thresholds.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
            Some(t) => Err(Error::InvalidParameter(format!(
                "erase threshold {t} outside (0, 1]"
            ))),
            None => Ok(()),
        }
    }
}

/// Replaces every pixel whose saliency is strictly above `threshold` with
/// `mean_pixel`.
pub fn erase(image: &RgbImage, s: &ScoreMap, threshold: f32, mean_pixel: Rgb) -> Result<RgbImage> {
    s.ensure_same_dims(image.dims())?;
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "erase threshold {threshold} outside (0, 1]"
        )));
    }
    let mut out = image.clone();
    for (i, &v) in s.data().iter().enumerate() {
        if v > threshold {
            out.set_pixel(i, mean_pixel);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalSaliency {
    /// Fused map after the last round.
    pub fused: ScoreMap,
    /// Fused map after each round; `rounds[0]` is the raw first detection.
    pub rounds: Vec<ScoreMap>,
}

pub fn hierarchical_saliency(
    image: &RgbImage,
    det: &mut dyn SaliencyDetector,
    policy: &ErasePolicy,
) -> Result<HierarchicalSaliency> {
    policy.validate()?;
    let first = checked_score(det, image)?;
    let mut rounds = vec![first.clone()];
    let mut fused = first.clone();
    let mut raw = first;
    let mut erased = image.clone();
    for &t in &policy.thresholds {
        erased = match policy.source {
            EraseSource::Fused => erase(image, &fused, t, policy.mean_pixel)?,
            EraseSource::Raw => erase(&erased, &raw, t, policy.mean_pixel)?,
        };
        raw = checked_score(det, &erased)?;
        fused = fuse_max(&fused, &raw)?;
        rounds.push(fused.clone());
    }
    Ok(HierarchicalSaliency { fused, rounds })
}

/// Built-in detector: distance from the mean image color, box-blurred and
/// min-max normalized.
pub fn contrast_saliency(image: &RgbImage, blur_radius: usize) -> ScoreMap {
    let n = (image.width * image.height) as f64;
    let mut mean = [0f64; 3];
    for p in image.pixels() {
        for (m, &c) in mean.iter_mut().zip(&p) {
            *m += c as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let dist: Vec<f64> = image
        .pixels()
        .map(|p| {
            p.iter()
                .zip(&mean)
                .map(|(&c, &m)| (c as f64 - m).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let blurred = box_blur(&dist, image.width, image.height, blur_radius);
    let map = ScoreMap::new(
        image.width,
        image.height,
        blurred.into_iter().map(|v| v as f32).collect(),
    )
    .expect("dimensions come from a valid image");
    normalize_slice(&map)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ContrastDetector {
    pub blur_radius: usize,
}

impl SaliencyDetector for ContrastDetector {
    fn score(&mut self, image: &RgbImage) -> Result<ScoreMap> {
        Ok(contrast_saliency(image, self.blur_radius))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Zeros;

    impl SaliencyDetector for Zeros {
        fn score(&mut self, image: &RgbImage) -> Result<ScoreMap> {
            ScoreMap::zeros(image.width(), image.height())
        }
    }

    struct WrongSize;

    impl SaliencyDetector for WrongSize {
        fn score(&mut self, _: &RgbImage) -> Result<ScoreMap> {
            ScoreMap::zeros(1, 1)
        }
    }

    fn gradient_image() -> RgbImage {
        RgbImage::new(3, 1, vec![10, 20, 30, 40, 50, 60, 70, 80, 90]).unwrap()
    }

    #[test]
    fn erase_is_strict() {
        let img = gradient_image();
        let s = ScoreMap::new_normalized(3, 1, vec![0.75, 0.7, 0.0]).unwrap();
        let out = erase(&img, &s, 0.7, [1, 2, 3]).unwrap();
        assert_eq!(out.pixel(0), [1, 2, 3]);
        assert_eq!(out.pixel(1), img.pixel(1));
        assert_eq!(out.pixel(2), img.pixel(2));
        let none = erase(&img, &ScoreMap::zeros(3, 1).unwrap(), 0.7, MID_GRAY).unwrap();
        assert_eq!(none, img);
        assert!(erase(&img, &ScoreMap::zeros(2, 1).unwrap(), 0.7, MID_GRAY).is_err());
    }

    #[test]
    fn zero_detector_is_fixed_point() {
        let img = gradient_image();
        let h = hierarchical_saliency(&img, &mut Zeros, &ErasePolicy::default()).unwrap();
        assert_eq!(h.rounds.len(), 3);
        assert!(h.fused.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_policy_is_single_pass() {
        let img = gradient_image();
        let policy = ErasePolicy {
            thresholds: vec![],
            ..ErasePolicy::default()
        };
        let mut det = ContrastDetector::default();
        let h = hierarchical_saliency(&img, &mut det, &policy).unwrap();
        assert_eq!(h.rounds.len(), 1);
        assert_eq!(h.fused, contrast_saliency(&img, 0));
    }

    #[test]
    fn detector_contract_checked() {
        let img = gradient_image();
        let err = hierarchical_saliency(&img, &mut WrongSize, &ErasePolicy::default());
        assert!(matches!(err, Err(Error::Detector(_))));
    }

    #[test]
    fn contrast_examples() {
        let flat = RgbImage::filled(4, 4, [9, 9, 9]).unwrap();
        assert!(contrast_saliency(&flat, 2).data().iter().all(|&v| v == 0.0));

        let mut img = RgbImage::filled(8, 8, [0, 0, 0]).unwrap();
        for y in 3..6 {
            for x in 2..5 {
                img.set_pixel(y * 8 + x, [255, 255, 255]);
            }
        }
        for r in [0, 1] {
            let s = contrast_saliency(&img, r);
            let (best, _) = s
                .data()
                .iter()
                .enumerate()
                .fold((0, f32::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
            let (x, y) = (best % 8, best / 8);
            assert!((2..5).contains(&x) && (3..6).contains(&y));
        }
        let raw = contrast_saliency(&img, 0);
        assert!(raw.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn box_blur_matches_naive_window() {
        let vals: Vec<f64> = (0..20).map(|i| ((i * 7) % 5) as f64).collect();
        let fast = box_blur(&vals, 5, 4, 1);
        for y in 0..4i64 {
            for x in 0..5i64 {
                let mut sum = 0.0;
                let mut n = 0.0;
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (xx, yy) = (x + dx, y + dy);
                        if (0..5).contains(&xx) && (0..4).contains(&yy) {
                            sum += vals[(yy * 5 + xx) as usize];
                            n += 1.0;
                        }
                    }
                }
                assert!((fast[(y * 5 + x) as usize] - sum / n).abs() < 1e-12);
            }
        }
    }
}
