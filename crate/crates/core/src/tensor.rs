//! Dense score maps, score volumes and label maps, plus the pointwise
//! arithmetic every other module builds on.
//!
//! Scores are stored as `f32`. Reductions (sums, softmax denominators)
//! accumulate in `f64` so results do not depend on traversal order at the
//! tolerances the rest of the crate works with.

use crate::error::{Error, Result};

/// Index into the label space. `0` is background; [`IGNORE`] marks pixels
/// excluded from losses and evaluation.
pub type ClassId = u8;

pub const BACKGROUND: ClassId = 0;
pub const IGNORE: ClassId = 255;

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidDimensions { width, height });
    }
    Ok(())
}

/// H×W grid of scores, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    width: usize,
    height: usize,
    data: Vec<f32>,
    normalized: bool,
}

impl ScoreMap {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height {
            return Err(Error::LengthMismatch {
                expected: width * height,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
            normalized: false,
        })
    }

    /// Builds a map and flags it normalized after checking every score lies
    /// in `[0, 1]`.
    pub fn new_normalized(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        let map = Self::new(width, height, data)?;
        map.into_normalized()
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Ok(Self::new(width, height, vec![0.0; width * height])?.mark_normalized())
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self> {
        let map = Self::new(width, height, vec![value; width * height])?;
        Ok(if (0.0..=1.0).contains(&value) {
            map.mark_normalized()
        } else {
            map
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f32,
    ) -> Result<Self> {
        check_dims(width, height)?;
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    /// Flags the map normalized if every score is in `[0, 1]`.
    pub fn into_normalized(self) -> Result<Self> {
        if let Some(i) = self.data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParameter(format!(
                "score {} at pixel {i} outside [0, 1]",
                self.data[i]
            )));
        }
        Ok(self.mark_normalized())
    }

    fn mark_normalized(mut self) -> Self {
        self.normalized = true;
        self
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn ensure_same_dims(&self, other: (usize, usize)) -> Result<()> {
        if self.dims() != other {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                actual: other,
            });
        }
        Ok(())
    }
}

/// Stack of equally sized score maps keyed by class id.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVolume {
    width: usize,
    height: usize,
    classes: Vec<ClassId>,
    maps: Vec<ScoreMap>,
}

impl ScoreVolume {
    pub fn new(
        width: usize,
        height: usize,
        classes: Vec<ClassId>,
        maps: Vec<ScoreMap>,
    ) -> Result<Self> {
        check_dims(width, height)?;
        if classes.len() != maps.len() {
            return Err(Error::ClassSetMismatch(format!(
                "{} class ids for {} maps",
                classes.len(),
                maps.len()
            )));
        }
        for (i, c) in classes.iter().enumerate() {
            if classes[..i].contains(c) {
                return Err(Error::DuplicateClass(*c));
            }
        }
        for m in &maps {
            m.ensure_same_dims((width, height))
                .map_err(|_| Error::DimensionMismatch {
                    expected: (width, height),
                    actual: m.dims(),
                })?;
        }
        Ok(Self {
            width,
            height,
            classes,
            maps,
        })
    }

    pub fn empty(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, Vec::new(), Vec::new())
    }

    /// Volume with channel `i` mapped to class id `first + i`, built from a
    /// channel-major buffer.
    pub fn from_channel_major(
        width: usize,
        height: usize,
        first: ClassId,
        data: &[f32],
    ) -> Result<Self> {
        check_dims(width, height)?;
        let plane = width * height;
        if !data.len().is_multiple_of(plane) {
            return Err(Error::LengthMismatch {
                expected: plane * (data.len() / plane + 1),
                actual: data.len(),
            });
        }
        let count = data.len() / plane;
        if first as usize + count > IGNORE as usize {
            return Err(Error::InvalidParameter(format!(
                "{count} channels starting at class {first} exceed the class id range"
            )));
        }
        let classes = (0..count).map(|i| first + i as ClassId).collect();
        let maps = data
            .chunks_exact(plane)
            .map(|c| ScoreMap::new(width, height, c.to_vec()))
            .collect::<Result<_>>()?;
        Self::new(width, height, classes, maps)
    }

    pub fn to_channel_major(&self) -> Vec<f32> {
        self.maps
            .iter()
            .flat_map(|m| m.data().iter().copied())
            .collect()
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

    pub fn classes(&self) -> &[ClassId] {
        &self.classes
    }

    pub fn maps(&self) -> &[ScoreMap] {
        &self.maps
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn get(&self, class: ClassId) -> Option<&ScoreMap> {
        self.classes
            .iter()
            .position(|&c| c == class)
            .map(|i| &self.maps[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (ClassId, &ScoreMap)> {
        self.classes.iter().copied().zip(self.maps.iter())
    }

    /// Sub-volume holding only `classes`, in the given order.
    pub fn select(&self, classes: &[ClassId]) -> Result<Self> {
        let maps = classes
            .iter()
            .map(|&c| self.get(c).cloned().ok_or(Error::MissingClass(c)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.width, self.height, classes.to_vec(), maps)
    }
}

/// H×W grid of class indices with 255 reserved as "ignore".
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelMap {
    width: usize,
    height: usize,
    data: Vec<ClassId>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, data: Vec<ClassId>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height {
            return Err(Error::LengthMismatch {
                expected: width * height,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, label: ClassId) -> Result<Self> {
        Self::new(width, height, vec![label; width * height])
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

    pub fn data(&self) -> &[ClassId] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> ClassId {
        self.data[y * self.width + x]
    }

    /// Checks every non-ignore label is below `num_labels`.
    pub fn validate(&self, num_labels: usize) -> Result<()> {
        match self
            .data
            .iter()
            .find(|&&l| l != IGNORE && l as usize >= num_labels)
        {
            Some(&label) => Err(Error::LabelOutOfRange { label, num_labels }),
            None => Ok(()),
        }
    }

    pub fn count(&self, label: ClassId) -> usize {
        self.data.iter().filter(|&&l| l == label).count()
    }
}

/// Min-max rescales a slice into `[0, 1]`, computed in `f64` and rounded
/// once. A constant slice maps to all zeros.
pub fn normalize_slice(m: &ScoreMap) -> ScoreMap {
    let (lo, hi) = m
        .data
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let (lo, range) = (lo as f64, hi as f64 - lo as f64);
    let data = if range > 0.0 {
        m.data
            .iter()
            .map(|&v| ((v as f64 - lo) / range).clamp(0.0, 1.0) as f32)
            .collect()
    } else {
        vec![0.0; m.data.len()]
    };
    ScoreMap {
        width: m.width,
        height: m.height,
        data,
        normalized: true,
    }
}

pub fn fuse_max(a: &ScoreMap, b: &ScoreMap) -> Result<ScoreMap> {
    a.ensure_same_dims(b.dims())?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x.max(*y)).collect();
    Ok(ScoreMap {
        width: a.width,
        height: a.height,
        data,
        normalized: a.normalized && b.normalized,
    })
}

/// Bilinear resampling with half-pixel-center alignment: output pixel `x`
/// samples source coordinate `(x + 0.5) * in / out - 0.5`, clamped to the
/// source grid.
pub fn resize_bilinear(m: &ScoreMap, new_w: usize, new_h: usize) -> Result<ScoreMap> {
    check_dims(new_w, new_h)?;
    if (new_w, new_h) == m.dims() {
        return Ok(m.clone());
    }
    let xs = sample_positions(m.width, new_w);
    let ys = sample_positions(m.height, new_h);
    let mut data = Vec::with_capacity(new_w * new_h);
    for &(y0, y1, ty) in &ys {
        let r0 = &m.data[y0 * m.width..(y0 + 1) * m.width];
        let r1 = &m.data[y1 * m.width..(y1 + 1) * m.width];
        for &(x0, x1, tx) in &xs {
            let top = r0[x0] as f64 * (1.0 - tx) + r0[x1] as f64 * tx;
            let bottom = r1[x0] as f64 * (1.0 - tx) + r1[x1] as f64 * tx;
            data.push((top * (1.0 - ty) + bottom * ty) as f32);
        }
    }
    Ok(ScoreMap {
        width: new_w,
        height: new_h,
        data,
        normalized: m.normalized,
    })
}

fn sample_positions(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Per-pixel exp-normalization across channels.
pub fn softmax_volume(v: &ScoreVolume) -> Result<ScoreVolume> {
    if v.is_empty() {
        return Err(Error::InvalidParameter(
            "softmax needs at least one channel".into(),
        ));
    }
    let n = v.width * v.height;
    let mut out: Vec<Vec<f32>> = vec![Vec::with_capacity(n); v.len()];
    let mut exps = vec![0f64; v.len()];
    for i in 0..n {
        let peak = v
            .maps
            .iter()
            .map(|m| m.data[i] as f64)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0f64;
        for (e, m) in exps.iter_mut().zip(&v.maps) {
            *e = (m.data[i] as f64 - peak).exp();
            denom += *e;
        }
        for (o, e) in out.iter_mut().zip(&exps) {
            o.push((e / denom) as f32);
        }
    }
    let maps = out
        .into_iter()
        .map(|data| ScoreMap {
            width: v.width,
            height: v.height,
            data,
            normalized: true,
        })
        .collect();
    Ok(ScoreVolume {
        width: v.width,
        height: v.height,
        classes: v.classes.clone(),
        maps,
    })
}

/// Per-pixel class id with the highest score. Ties go to the lowest class
/// id regardless of channel order.
pub fn argmax_map(v: &ScoreVolume) -> Result<LabelMap> {
    if v.is_empty() {
        return Err(Error::InvalidParameter(
            "argmax needs at least one channel".into(),
        ));
    }
    let n = v.width * v.height;
    let data = (0..n)
        .map(|i| {
            let mut best = (v.classes[0], v.maps[0].data[i]);
            for (&c, m) in v.classes.iter().zip(&v.maps).skip(1) {
                let s = m.data[i];
                if s > best.1 || (s == best.1 && c < best.0) {
                    best = (c, s);
                }
            }
            best.0
        })
        .collect();
    LabelMap::new(v.width, v.height, data)
}

/// Test-time multi-scale fusion: resample every volume to `width`×`height`
/// and keep the per-class pointwise maximum. All volumes must list the same
/// classes.
pub fn fuse_multiscale(
    volumes: &[ScoreVolume],
    width: usize,
    height: usize,
) -> Result<ScoreVolume> {
    let (first, rest) = volumes
        .split_first()
        .ok_or_else(|| Error::InvalidParameter("no volumes to fuse".into()))?;
    let resize_all = |v: &ScoreVolume| -> Result<Vec<ScoreMap>> {
        v.maps
            .iter()
            .map(|m| resize_bilinear(m, width, height))
            .collect()
    };
    let mut maps = resize_all(first)?;
    for v in rest {
        if v.classes != first.classes {
            return Err(Error::ClassSetMismatch(format!(
                "{:?} vs {:?}",
                first.classes, v.classes
            )));
        }
        for (acc, m) in maps.iter_mut().zip(resize_all(v)?) {
            *acc = fuse_max(acc, &m)?;
        }
    }
    ScoreVolume::new(width, height, first.classes.clone(), maps)
}

/// Mean over the (2r+1)² window clipped to the image.
pub(crate) fn box_blur(values: &[f64], width: usize, height: usize, radius: usize) -> Vec<f64> {
    if radius == 0 {
        return values.to_vec();
    }
    // summed-area table with a zero row/column border
    let stride = width + 1;
    let mut sat = vec![0f64; stride * (height + 1)];
    for y in 0..height {
        let mut row = 0f64;
        for x in 0..width {
            row += values[y * width + x];
            sat[(y + 1) * stride + x + 1] = sat[y * stride + x + 1] + row;
        }
    }
    let mut out = Vec::with_capacity(values.len());
    for y in 0..height {
        let (y0, y1) = (y.saturating_sub(radius), (y + radius + 1).min(height));
        for x in 0..width {
            let (x0, x1) = (x.saturating_sub(radius), (x + radius + 1).min(width));
            let sum = sat[y1 * stride + x1] - sat[y0 * stride + x1] - sat[y1 * stride + x0]
                + sat[y0 * stride + x0];
            out.push(sum / ((y1 - y0) * (x1 - x0)) as f64);
        }
    }
    out
}
