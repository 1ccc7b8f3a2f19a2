//! Synthetic multi-object scenes with known ground truth.
//!
//! Each scene holds a few flat-colored, non-overlapping shapes of distinct
//! classes on a noisy background. Alongside the image the generator writes
//! the ground-truth label map, a raw attention volume peaked near each
//! shape's centroid, and a small feature volume for head training.
//!
//! [`OracleDetector`] is a saliency detector that fires on exactly one
//! shape: the strongest one still visible in the image it is given.

use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::FeatureVolume;
use crate::io::container::{write_tensor, Tensor};
use crate::io::manifest::{mean_pixel, DatasetManifest, Record};
use crate::io::png::{write_label_png, write_rgb_png};
use crate::saliency::{Rgb, RgbImage, SaliencyDetector};
use crate::tensor::{box_blur, ClassId, LabelMap, ScoreMap, ScoreVolume, BACKGROUND, IGNORE};

pub const SYNTH_FILE: &str = "synth.json";
pub const MANIFEST_FILE: &str = "manifest.json";

const PLACEMENT_ATTEMPTS: usize = 2000;
const FEATURE_NOISE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Disc,
    Square,
    Triangle,
    Diamond,
}

impl ShapeKind {
    /// Whether offset `(dx, dy)` from the center falls inside a shape of
    /// circumradius `r`.
    fn contains(self, dx: f64, dy: f64, r: f64) -> bool {
        match self {
            ShapeKind::Disc => dx * dx + dy * dy <= r * r,
            ShapeKind::Square => dx.abs().max(dy.abs()) <= 0.72 * r,
            ShapeKind::Diamond => dx.abs() + dy.abs() <= r,
            ShapeKind::Triangle => {
                // apex up, base below the center
                let h = 1.5 * r;
                let top = -r;
                if dy < top || dy > top + h {
                    return false;
                }
                dx.abs() <= (dy - top) / h * r * 3f64.sqrt() / 2.0
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStyle {
    pub name: String,
    pub kind: ShapeKind,
    pub color: Rgb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    pub classes: Vec<ClassStyle>,
    pub min_shapes: usize,
    pub max_shapes: usize,
    pub min_radius: usize,
    pub max_radius: usize,
    pub background: Rgb,
    /// Per-channel uniform background noise amplitude.
    pub noise: u8,
    /// Attention Gaussian width relative to the shape's effective radius.
    pub attention_spread: f64,
    pub attention_blur: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            classes: vec![
                ClassStyle {
                    name: "disc".into(),
                    kind: ShapeKind::Disc,
                    color: [220, 40, 40],
                },
                ClassStyle {
                    name: "square".into(),
                    kind: ShapeKind::Square,
                    color: [40, 200, 60],
                },
                ClassStyle {
                    name: "triangle".into(),
                    kind: ShapeKind::Triangle,
                    color: [50, 80, 230],
                },
            ],
            min_shapes: 1,
            max_shapes: 2,
            min_radius: 7,
            max_radius: 12,
            background: [100, 100, 100],
            noise: 10,
            attention_spread: 0.8,
            attention_blur: 2,
        }
    }
}

impl SynthSpec {
    /// Every scene has exactly two shapes.
    pub fn two_shape() -> Self {
        Self {
            min_shapes: 2,
            max_shapes: 2,
            ..Self::default()
        }
    }

    pub fn label_space(&self) -> Vec<String> {
        std::iter::once("background".to_string())
            .chain(self.classes.iter().map(|c| c.name.clone()))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.classes.is_empty() || self.classes.len() > 254 {
            return bad(format!("{} classes, need 1..=254", self.classes.len()));
        }
        if self.min_shapes == 0 || self.min_shapes > self.max_shapes {
            return bad(format!(
                "shape count range {}..={} is empty or starts at zero",
                self.min_shapes, self.max_shapes
            ));
        }
        if self.max_shapes > 3 || self.max_shapes > self.classes.len() {
            return bad(format!(
                "at most 3 shapes of distinct classes per scene, asked for {}",
                self.max_shapes
            ));
        }
        if self.min_radius < 3 || self.min_radius > self.max_radius {
            return bad(format!(
                "radius range {}..={} invalid (minimum 3)",
                self.min_radius, self.max_radius
            ));
        }
        if 2 * self.max_radius + 2 > self.width.min(self.height) {
            return bad(format!(
                "radius {} does not fit a {}x{} canvas",
                self.max_radius, self.width, self.height
            ));
        }
        if !(self.attention_spread > 0.0 && self.attention_spread.is_finite()) {
            return bad(format!(
                "attention spread {} must be positive",
                self.attention_spread
            ));
        }
        for (i, c) in self.classes.iter().enumerate() {
            if c.color == self.background {
                return bad(format!("class {:?} has the background color", c.name));
            }
            if self.classes[..i].iter().any(|o| o.color == c.color) {
                return bad(format!(
                    "class {:?} shares a color with another class",
                    c.name
                ));
            }
        }
        Ok(())
    }

    fn contrast(&self, class: ClassId) -> f64 {
        let c = self.classes[class as usize - 1].color;
        c.iter()
            .zip(&self.background)
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeMeta {
    pub class: ClassId,
    pub kind: ShapeKind,
    pub center: [f64; 2],
    pub radius: usize,
    pub area: usize,
    /// Area times color contrast against the background.
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub id: String,
    /// Strongest first; ties go to the lower class id.
    pub shapes: Vec<ShapeMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthMetadata {
    pub seed: u64,
    pub spec: SynthSpec,
    pub scenes: Vec<SceneMeta>,
}

impl SynthMetadata {
    /// Reads `synth.json` from a generated dataset directory.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(SYNTH_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Manifest {
            path,
            message: e.to_string(),
        })
    }
}

/// One scene in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub meta: SceneMeta,
    pub image: RgbImage,
    pub ground_truth: LabelMap,
    /// Raw attention over classes `1..=|Z|`; absent classes are all zero.
    pub attention: ScoreVolume,
    pub features: FeatureVolume,
}

fn sort_by_strength(shapes: &mut [ShapeMeta]) {
    shapes.sort_by(|a, b| {
        b.strength
            .total_cmp(&a.strength)
            .then(a.class.cmp(&b.class))
    });
}

struct Placed {
    class: ClassId,
    center: [f64; 2],
    radius: usize,
}

fn place_shapes(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Placed>> {
    let n = rng.random_range(spec.min_shapes..=spec.max_shapes);
    let mut classes: Vec<ClassId> = sample(rng, spec.classes.len(), n)
        .into_iter()
        .map(|i| i as ClassId + 1)
        .collect();
    classes.sort_unstable();
    let gap = (2 * spec.attention_blur + 2) as f64;
    for _ in 0..PLACEMENT_ATTEMPTS {
        let mut placed: Vec<Placed> = Vec::with_capacity(n);
        for &class in &classes {
            let radius = rng.random_range(spec.min_radius..=spec.max_radius);
            let r = radius as f64;
            let cx = rng.random_range(r + 1.0..=spec.width as f64 - r - 1.0);
            let cy = rng.random_range(r + 1.0..=spec.height as f64 - r - 1.0);
            placed.push(Placed {
                class,
                center: [cx, cy],
                radius,
            });
        }
        let clear = placed.iter().enumerate().all(|(i, a)| {
            placed[..i].iter().all(|b| {
                let d = (a.center[0] - b.center[0]).hypot(a.center[1] - b.center[1]);
                d >= (a.radius + b.radius) as f64 + gap
            })
        });
        if clear {
            return Ok(placed);
        }
    }
    Err(Error::InvalidParameter(format!(
        "could not place {n} shapes on a {}x{} canvas; enlarge it or shrink the radii",
        spec.width, spec.height
    )))
}

fn render_scene(spec: &SynthSpec, id: String, rng: &mut ChaCha8Rng) -> Result<Scene> {
    let (w, h) = (spec.width, spec.height);
    let plane = w * h;
    let placed = place_shapes(spec, rng)?;

    let mut labels = vec![BACKGROUND; plane];
    let mut masks: Vec<Vec<f64>> = Vec::with_capacity(placed.len());
    for p in &placed {
        let kind = spec.classes[p.class as usize - 1].kind;
        let mut mask = vec![0.0; plane];
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = (x as f64 + 0.5 - p.center[0], y as f64 + 0.5 - p.center[1]);
                if kind.contains(dx, dy, p.radius as f64) {
                    mask[y * w + x] = 1.0;
                    labels[y * w + x] = p.class;
                }
            }
        }
        masks.push(mask);
    }

    let mut image = RgbImage::filled(w, h, spec.background)?;
    let amp = spec.noise as i16;
    for i in 0..plane {
        let px = spec.background.map(|c| {
            let jitter = if amp > 0 {
                rng.random_range(-amp..=amp)
            } else {
                0
            };
            (c as i16 + jitter).clamp(0, 255) as u8
        });
        image.set_pixel(i, px);
    }
    for (i, &l) in labels.iter().enumerate() {
        if l != BACKGROUND {
            image.set_pixel(i, spec.classes[l as usize - 1].color);
        }
    }

    let num_classes = spec.classes.len();
    let mut attention = vec![0f32; num_classes * plane];
    let mut features = vec![0f32; num_classes * plane];
    let mut shapes = Vec::with_capacity(placed.len());
    for (p, mask) in placed.iter().zip(&masks) {
        let area = mask.iter().filter(|&&v| v > 0.0).count();
        let (mut sx, mut sy) = (0.0, 0.0);
        for (i, _) in mask.iter().enumerate().filter(|(_, &v)| v > 0.0) {
            sx += (i % w) as f64 + 0.5;
            sy += (i / w) as f64 + 0.5;
        }
        let (cx, cy) = (sx / area as f64, sy / area as f64);
        let sigma = spec.attention_spread * (area as f64 / std::f64::consts::PI).sqrt();
        let blurred = box_blur(mask, w, h, spec.attention_blur);
        let raw: Vec<f64> = blurred
            .iter()
            .enumerate()
            .map(|(i, &b)| {
                let (dx, dy) = ((i % w) as f64 + 0.5 - cx, (i / w) as f64 + 0.5 - cy);
                b * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let peak = raw.iter().copied().fold(0.0, f64::max);
        let c = p.class as usize - 1;
        for (dst, v) in attention[c * plane..(c + 1) * plane].iter_mut().zip(&raw) {
            *dst = (v / peak) as f32;
        }
        let soft = box_blur(mask, w, h, 1);
        for (dst, v) in features[c * plane..(c + 1) * plane].iter_mut().zip(&soft) {
            *dst = *v as f32;
        }
        shapes.push(ShapeMeta {
            class: p.class,
            kind: spec.classes[c].kind,
            center: [cx, cy],
            radius: p.radius,
            area,
            strength: area as f64 * spec.contrast(p.class),
        });
    }
    for f in features.iter_mut() {
        *f += rng.random_range(0.0..FEATURE_NOISE) as f32;
    }
    sort_by_strength(&mut shapes);

    Ok(Scene {
        meta: SceneMeta { id, shapes },
        image,
        ground_truth: LabelMap::new(w, h, labels)?,
        attention: ScoreVolume::from_channel_major(w, h, 1, &attention)?,
        features: FeatureVolume::new(num_classes, w, h, features)?,
    })
}

/// Generates `count` scenes in memory. The output depends only on `spec`,
/// `count` and `seed`.
pub fn generate_scenes(spec: &SynthSpec, count: usize, seed: u64) -> Result<Vec<Scene>> {
    spec.validate()?;
    if count == 0 {
        return Err(Error::InvalidParameter(
            "scene count must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let digits = (count - 1).to_string().len().max(4);
    (0..count)
        .map(|i| render_scene(spec, format!("scene_{i:0digits$}"), &mut rng))
        .collect()
}

/// Writes a generated dataset under `out` and returns its manifest.
///
/// Layout: `images/`, `ground_truth/`, `attention/`, `features/`, plus
/// `manifest.json` and `synth.json` at the top level.
pub fn generate_dataset(
    out: &Path,
    spec: &SynthSpec,
    count: usize,
    seed: u64,
) -> Result<DatasetManifest> {
    let scenes = generate_scenes(spec, count, seed)?;
    let mut records = Vec::with_capacity(scenes.len());
    for s in &scenes {
        let id = &s.meta.id;
        let rel = |dir: &str, ext: &str| PathBuf::from(dir).join(format!("{id}.{ext}"));
        let rec = Record {
            id: id.clone(),
            image: rel("images", "png"),
            tags: s
                .meta
                .shapes
                .iter()
                .map(|m| m.class)
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .collect(),
            ground_truth: Some(rel("ground_truth", "png")),
            saliency: None,
            attention: Some(rel("attention", "dct")),
            features: Some(rel("features", "dct")),
            prediction: None,
        };
        write_rgb_png(&out.join(&rec.image), &s.image)?;
        write_label_png(
            &out.join(rec.ground_truth.as_ref().expect("set above")),
            &s.ground_truth,
        )?;
        write_tensor(
            &out.join(rec.attention.as_ref().expect("set above")),
            &Tensor::from_volume(&s.attention),
        )?;
        write_tensor(
            &out.join(rec.features.as_ref().expect("set above")),
            &Tensor::from_features(&s.features),
        )?;
        records.push(rec);
    }
    let mean = mean_pixel(scenes.iter().map(|s| &s.image))?;
    let manifest = DatasetManifest::new(spec.label_space(), mean, records, out.to_path_buf());
    manifest.save(&out.join(MANIFEST_FILE))?;

    let meta = SynthMetadata {
        seed,
        spec: spec.clone(),
        scenes: scenes.into_iter().map(|s| s.meta).collect(),
    };
    let mut text = serde_json::to_string_pretty(&meta)?;
    text.push('\n');
    let path = out.join(SYNTH_FILE);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Saliency detector that knows the scene layout. It outputs 1 on the
/// visible pixels of the strongest still-visible shape and 0 elsewhere.
/// A pixel stays visible while it keeps its class color.
#[derive(Debug, Clone)]
pub struct OracleDetector {
    width: usize,
    height: usize,
    /// `(color, contrast, pixel indices)` per shape.
    shapes: Vec<(Rgb, f64, Vec<usize>)>,
}

impl OracleDetector {
    pub fn new(spec: &SynthSpec, ground_truth: &LabelMap) -> Result<Self> {
        let mut shapes = Vec::new();
        for class in 1..=spec.classes.len() as ClassId {
            let pixels: Vec<usize> = ground_truth
                .data()
                .iter()
                .enumerate()
                .filter(|(_, &l)| l == class)
                .map(|(i, _)| i)
                .collect();
            if !pixels.is_empty() {
                shapes.push((
                    spec.classes[class as usize - 1].color,
                    spec.contrast(class),
                    pixels,
                ));
            }
        }
        if let Some(&l) = ground_truth
            .data()
            .iter()
            .find(|&&l| l != BACKGROUND && l != IGNORE && l as usize > spec.classes.len())
        {
            return Err(Error::LabelOutOfRange {
                label: l,
                num_labels: spec.classes.len() + 1,
            });
        }
        Ok(Self {
            width: ground_truth.width(),
            height: ground_truth.height(),
            shapes,
        })
    }
}

impl SaliencyDetector for OracleDetector {
    fn score(&mut self, image: &RgbImage) -> Result<ScoreMap> {
        if image.dims() != (self.width, self.height) {
            return Err(Error::DimensionMismatch {
                expected: (self.width, self.height),
                actual: image.dims(),
            });
        }
        let mut best: Option<(f64, Vec<usize>)> = None;
        for (color, contrast, pixels) in &self.shapes {
            let visible: Vec<usize> = pixels
                .iter()
                .copied()
                .filter(|&i| image.pixel(i) == *color)
                .collect();
            let strength = visible.len() as f64 * contrast;
            if strength > 0.0 && best.as_ref().is_none_or(|(b, _)| strength > *b) {
                best = Some((strength, visible));
            }
        }
        let mut data = vec![0f32; self.width * self.height];
        if let Some((_, visible)) = best {
            for i in visible {
                data[i] = 1.0;
            }
        }
        ScoreMap::new_normalized(self.width, self.height, data)
    }
}
