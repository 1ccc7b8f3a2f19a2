//! VOC-style segmentation evaluation.
//!
//! Counts are accumulated over the whole dataset before dividing, pixels
//! labelled 255 in the ground truth are skipped, and classes that never
//! occur in either ground truth or prediction are left out of the mean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ClassId, LabelMap, IGNORE};

/// Rows are ground truth, columns are prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, gt: ClassId, pred: ClassId) -> u64 {
        self.counts[gt as usize * self.num_classes + pred as usize]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one image. Ignore pixels in `gt` are skipped; ignore in `pred`
    /// is an error. On error the matrix is left untouched.
    pub fn accumulate(&mut self, gt: &LabelMap, pred: &LabelMap) -> Result<()> {
        if gt.dims() != pred.dims() {
            return Err(Error::DimensionMismatch {
                expected: gt.dims(),
                actual: pred.dims(),
            });
        }
        gt.validate(self.num_classes)?;
        if let Some(i) = pred.data().iter().position(|&p| p == IGNORE) {
            return Err(Error::IgnoreInPrediction(i));
        }
        pred.validate(self.num_classes)?;
        for (&g, &p) in gt.data().iter().zip(pred.data()) {
            if g != IGNORE {
                self.counts[g as usize * self.num_classes + p as usize] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::ClassSetMismatch(format!(
                "merging {}-class matrix into {}-class matrix",
                other.num_classes, self.num_classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    fn row_sum(&self, c: usize) -> u64 {
        self.counts[c * self.num_classes..(c + 1) * self.num_classes]
            .iter()
            .sum()
    }

    fn col_sum(&self, c: usize) -> u64 {
        (0..self.num_classes)
            .map(|r| self.counts[r * self.num_classes + c])
            .sum()
    }

    fn diag(&self, c: usize) -> u64 {
        self.counts[c * self.num_classes + c]
    }

    pub fn iou(&self) -> IouReport {
        let per_class: Vec<Option<f64>> = (0..self.num_classes)
            .map(|c| {
                let tp = self.diag(c);
                let denom = self.row_sum(c) + self.col_sum(c) - tp;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect();
        let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
        let mean =
            (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        IouReport { per_class, mean }
    }

    pub fn pixel_accuracy(&self) -> Option<f64> {
        let total = self.total();
        (total > 0)
            .then(|| (0..self.num_classes).map(|c| self.diag(c)).sum::<u64>() as f64 / total as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IouReport {
    /// `None` where the class appears in neither ground truth nor prediction.
    pub per_class: Vec<Option<f64>>,
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CueQuality {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CueCounts {
    pub hit: u64,
    pub claimed: u64,
    pub actual: u64,
}

impl CueCounts {
    pub fn tally(gt: &LabelMap, cues: &LabelMap, class: ClassId) -> Result<Self> {
        if gt.dims() != cues.dims() {
            return Err(Error::DimensionMismatch {
                expected: gt.dims(),
                actual: cues.dims(),
            });
        }
        let mut out = Self::default();
        for (&g, &p) in gt.data().iter().zip(cues.data()) {
            let (is_g, is_p) = (g == class, p == class);
            out.hit += u64::from(is_g && is_p);
            out.claimed += u64::from(is_p);
            out.actual += u64::from(is_g);
        }
        Ok(out)
    }

    pub fn add(&mut self, other: CueCounts) {
        self.hit += other.hit;
        self.claimed += other.claimed;
        self.actual += other.actual;
    }

    pub fn quality(&self) -> CueQuality {
        CueQuality {
            precision: (self.claimed > 0).then(|| self.hit as f64 / self.claimed as f64),
            recall: (self.actual > 0).then(|| self.hit as f64 / self.actual as f64),
        }
    }
}

/// Precision and recall of the pixels `cues` assigns to `class`.
pub fn cue_quality(gt: &LabelMap, cues: &LabelMap, class: ClassId) -> Result<CueQuality> {
    Ok(CueCounts::tally(gt, cues, class)?.quality())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub id: ClassId,
    pub name: String,
    pub iou: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub images: usize,
    pub pixels: u64,
    pub miou: Option<f64>,
    pub pixel_accuracy: Option<f64>,
    pub classes: Vec<ClassReport>,
    pub confusion: ConfusionMatrix,
}

impl EvalReport {
    /// `cue_counts[c]` are the per-class tallies over the same images.
    pub fn build(
        cm: ConfusionMatrix,
        cue_counts: &[CueCounts],
        names: &[String],
        images: usize,
    ) -> Self {
        let iou = cm.iou();
        let classes = (0..cm.num_classes())
            .map(|c| {
                let q = cue_counts
                    .get(c)
                    .map(CueCounts::quality)
                    .unwrap_or_default();
                ClassReport {
                    id: c as ClassId,
                    name: names.get(c).cloned().unwrap_or_else(|| format!("class{c}")),
                    iou: iou.per_class[c],
                    precision: q.precision,
                    recall: q.recall,
                }
            })
            .collect();
        Self {
            images,
            pixels: cm.total(),
            miou: iou.mean,
            pixel_accuracy: cm.pixel_accuracy(),
            classes,
            confusion: cm,
        }
    }

    pub fn table(&self) -> String {
        let pct = |v: Option<f64>| {
            v.map_or_else(|| "     -".to_string(), |x| format!("{:6.2}", 100.0 * x))
        };
        let mut out = format!(
            "{:<16} {:>6} {:>6} {:>6}\n",
            "class", "IoU%", "prec%", "rec%"
        );
        for c in &self.classes {
            out += &format!(
                "{:<16} {} {} {}\n",
                c.name,
                pct(c.iou),
                pct(c.precision),
                pct(c.recall)
            );
        }
        out += &format!(
            "{:<16} {}\n{:<16} {}\n",
            "mIoU",
            pct(self.miou),
            "pixel acc",
            pct(self.pixel_accuracy)
        );
        out
    }
}
