use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::ImageTags;
use crate::io::png::read_rgb_png;
use crate::saliency::{Rgb, RgbImage, MID_GRAY};
use crate::tensor::ClassId;

/// One image of a weakly labelled dataset. Paths are relative to the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub image: PathBuf,
    pub tags: Vec<ClassId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saliency: Option<PathBuf>,
    /// Raw attention volume over the object classes, `[|Z|, H, W]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention: Option<PathBuf>,
    /// Feature volume `[K, H, W]` for head training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<PathBuf>,
    /// Softmax prediction volume over the full label space, `[|L|, H, W]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// Label names, background first.
    pub label_space: Vec<String>,
    #[serde(default = "default_mean")]
    pub mean_pixel: Rgb,
    pub records: Vec<Record>,
    #[serde(skip)]
    root: PathBuf,
}

fn default_mean() -> Rgb {
    MID_GRAY
}

impl DatasetManifest {
    pub fn new(
        label_space: Vec<String>,
        mean_pixel: Rgb,
        records: Vec<Record>,
        root: PathBuf,
    ) -> Self {
        Self {
            label_space,
            mean_pixel,
            records,
            root,
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn num_labels(&self) -> usize {
        self.label_space.len()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.root.join(p)
    }

    pub fn tags(&self, r: &Record) -> Result<ImageTags> {
        ImageTags::new(r.tags.iter().copied(), self.num_labels())
    }

    /// Loads and validates a manifest: tags must be object classes of the
    /// label space, ids unique, and every referenced file present.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate().map_err(|message| Error::Manifest {
            path: path.to_path_buf(),
            message,
        })?;
        Ok(m)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.label_space.len() < 2 || self.label_space.len() > 255 {
            return Err(format!(
                "label space needs background plus 1..=254 classes, has {} entries",
                self.label_space.len()
            ));
        }
        let mut ids = BTreeSet::new();
        for r in &self.records {
            if !ids.insert(r.id.as_str()) {
                return Err(format!("duplicate record id {:?}", r.id));
            }
            if let Some(&t) = r
                .tags
                .iter()
                .find(|&&t| t == 0 || t as usize >= self.label_space.len())
            {
                return Err(format!("record {:?}: tag {t} is not an object class", r.id));
            }
            let paths = [
                Some(&r.image),
                r.ground_truth.as_ref(),
                r.saliency.as_ref(),
                r.attention.as_ref(),
                r.features.as_ref(),
                r.prediction.as_ref(),
            ];
            for p in paths.into_iter().flatten() {
                if !self.resolve(p).is_file() {
                    return Err(format!("record {:?}: missing file {}", r.id, p.display()));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Per-channel mean over every pixel of every image, rounded half up.
pub fn mean_pixel<'a>(images: impl IntoIterator<Item = &'a RgbImage>) -> Result<Rgb> {
    let mut sums = [0u64; 3];
    let mut count = 0u64;
    for img in images {
        for p in img.pixels() {
            for (s, &c) in sums.iter_mut().zip(&p) {
                *s += c as u64;
            }
        }
        count += (img.width() * img.height()) as u64;
    }
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    // floor((2 * sum + count) / (2 * count)) == round-half-up(sum / count)
    Ok(sums.map(|s| ((2 * s + count) / (2 * count)) as u8))
}

pub fn dataset_mean_pixel(manifest: &DatasetManifest) -> Result<Rgb> {
    if manifest.records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let images = manifest
        .records
        .iter()
        .map(|r| read_rgb_png(&manifest.resolve(&r.image)))
        .collect::<Result<Vec<_>>>()?;
    mean_pixel(&images)
}
