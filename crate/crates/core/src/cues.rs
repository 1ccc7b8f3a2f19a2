//! Pixel-level cues from attention and saliency.
//!
//! Every present class gets a per-pixel score `h(A^c(m), S(m))`. A pixel
//! whose best score is below `gamma` becomes background; otherwise it takes
//! the best-scoring class. The adapt step replaces cues with a network's
//! own prediction restricted to the image's tags plus background.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::ImageTags;
use crate::tensor::{ClassId, LabelMap, ScoreMap, ScoreVolume, BACKGROUND};

/// Default background threshold.
pub const DEFAULT_GAMMA: f32 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combiner {
    #[default]
    Harmonic,
    Arithmetic,
    Geometric,
}

impl std::str::FromStr for Combiner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "harmonic" => Ok(Combiner::Harmonic),
            "arithmetic" => Ok(Combiner::Arithmetic),
            "geometric" => Ok(Combiner::Geometric),
            other => Err(Error::InvalidParameter(format!(
                "unknown combiner {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for Combiner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Combiner::Harmonic => "harmonic",
            Combiner::Arithmetic => "arithmetic",
            Combiner::Geometric => "geometric",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CueConfig {
    pub gamma: f32,
    #[serde(default)]
    pub combiner: Combiner,
}

impl Default for CueConfig {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            combiner: Combiner::Harmonic,
        }
    }
}

impl CueConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "gamma {} outside (0, 1)",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Combines an attention score and a saliency score, both in `[0, 1]`.
/// The harmonic mean of `(0, 0)` is taken as its limit, `0`.
pub fn combine(a: f32, s: f32, combiner: Combiner) -> f32 {
    // Evaluated in f64 (products of f32 values are exact there) and rounded
    // once, so HM <= GM <= AM survives the rounding.
    let (a, s) = (a as f64, s as f64);
    let v = match combiner {
        Combiner::Harmonic => {
            let sum = a + s;
            if sum > 0.0 {
                2.0 * a * s / sum
            } else {
                0.0
            }
        }
        Combiner::Arithmetic => 0.5 * (a + s),
        Combiner::Geometric => (a * s).sqrt(),
    };
    v as f32
}

/// Label map from normalized attention slices (one per present class) and a
/// normalized saliency map.
pub fn discover_cues(
    attn: &ScoreVolume,
    s: &ScoreMap,
    tags: &ImageTags,
    cfg: &CueConfig,
) -> Result<LabelMap> {
    cfg.validate()?;
    s.ensure_same_dims(attn.dims())?;
    let mut classes: Vec<ClassId> = attn.classes().to_vec();
    classes.sort_unstable();
    if classes.iter().ne(tags.present().iter()) {
        return Err(Error::ClassSetMismatch(format!(
            "attention covers {:?}, tags are {:?}",
            attn.classes(),
            tags.present()
        )));
    }
    let slices: Vec<(ClassId, &[f32])> = attn.iter().map(|(c, m)| (c, m.data())).collect();
    let data = s
        .data()
        .iter()
        .enumerate()
        .map(|(i, &sal)| {
            let mut best: Option<(ClassId, f32)> = None;
            for &(c, a) in &slices {
                let h = combine(a[i], sal, cfg.combiner);
                best = match best {
                    Some((bc, bh)) if bh > h || (bh == h && bc < c) => Some((bc, bh)),
                    _ => Some((c, h)),
                };
            }
            match best {
                Some((c, h)) if h >= cfg.gamma => c,
                _ => BACKGROUND,
            }
        })
        .collect();
    LabelMap::new(s.width(), s.height(), data)
}

/// Per-pixel argmax over background and the present classes only.
pub fn adapt_cues(pred: &ScoreVolume, tags: &ImageTags) -> Result<LabelMap> {
    for c in 0..tags.num_labels() as ClassId {
        if pred.get(c).is_none() {
            return Err(Error::MissingClass(c));
        }
    }
    let restricted = pred.select(&tags.candidates())?;
    crate::tensor::argmax_map(&restricted)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(d: &[f32]) -> ScoreMap {
        ScoreMap::new_normalized(d.len(), 1, d.to_vec()).unwrap()
    }

    #[test]
    fn combine_examples() {
        assert_eq!(combine(0.5, 0.5, Combiner::Harmonic), 0.5);
        assert_eq!(combine(1.0, 0.0, Combiner::Harmonic), 0.0);
        assert_eq!(combine(0.0, 0.0, Combiner::Harmonic), 0.0);
        assert!((combine(0.2, 0.8, Combiner::Harmonic) - 0.32).abs() < 1e-7);
        assert_eq!(combine(0.2, 0.8, Combiner::Arithmetic), 0.5);
        assert!((combine(0.2, 0.8, Combiner::Geometric) - 0.4).abs() < 1e-7);
    }

    #[test]
    fn two_pixel_example() {
        let attn =
            ScoreVolume::new(2, 1, vec![1, 2], vec![row(&[0.9, 0.1]), row(&[0.2, 0.8])]).unwrap();
        let s = row(&[0.8, 0.5]);
        let tags = ImageTags::new([1, 2], 3).unwrap();
        let m = discover_cues(&attn, &s, &tags, &CueConfig::default()).unwrap();
        assert_eq!(m.data(), &[1, 2]);
    }

    #[test]
    fn zero_saliency_is_background() {
        let attn = ScoreVolume::new(2, 1, vec![1], vec![row(&[1.0, 0.6])]).unwrap();
        let tags = ImageTags::new([1], 2).unwrap();
        let m = discover_cues(&attn, &row(&[0.0, 0.0]), &tags, &CueConfig::default()).unwrap();
        assert_eq!(m.data(), &[0, 0]);
    }

    #[test]
    fn gamma_boundary_is_foreground() {
        let attn = ScoreVolume::new(1, 1, vec![1], vec![row(&[0.4])]).unwrap();
        let tags = ImageTags::new([1], 2).unwrap();
        let m = discover_cues(&attn, &row(&[0.4]), &tags, &CueConfig::default()).unwrap();
        assert_eq!(m.data(), &[1]);
    }

    #[test]
    fn class_set_must_match_tags() {
        let attn = ScoreVolume::new(1, 1, vec![1], vec![row(&[0.4])]).unwrap();
        let tags = ImageTags::new([1, 2], 3).unwrap();
        assert!(discover_cues(&attn, &row(&[0.4]), &tags, &CueConfig::default()).is_err());
        let bad = CueConfig {
            gamma: 1.0,
            ..CueConfig::default()
        };
        assert!(
            discover_cues(&attn, &row(&[0.4]), &ImageTags::new([1], 2).unwrap(), &bad).is_err()
        );
    }

    #[test]
    fn adapt_prefers_present_class_over_absent_peak() {
        // class 2 is absent but strongest; class 1 beats background
        let pred = ScoreVolume::new(
            1,
            1,
            vec![0, 1, 2],
            vec![row(&[0.2]), row(&[0.3]), row(&[0.5])],
        )
        .unwrap();
        let tags = ImageTags::new([1], 3).unwrap();
        assert_eq!(adapt_cues(&pred, &tags).unwrap().data(), &[1]);
        let none = ImageTags::new([], 3).unwrap();
        assert_eq!(adapt_cues(&pred, &none).unwrap().data(), &[0]);
        let short = pred.select(&[0, 1]).unwrap();
        assert!(matches!(
            adapt_cues(&short, &tags),
            Err(Error::MissingClass(2))
        ));
    }
}
