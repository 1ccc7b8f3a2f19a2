//! `DCT1` tensor container.
//!
//! ```text
//! offset  size        field
//! 0       4           magic "DCT1"
//! 4       1           element type: 0 = f32, 1 = u8
//! 5       3           reserved, zero
//! 8       4           rank (u32 LE, >= 2)
//! 12      8 * rank    dims (u64 LE), outermost first
//! ...     n * esize   payload, little-endian, row-major
//! ```
//!
//! Volumes are stored channel-major as `[C, H, W]`, single maps as
//! `[H, W]`. No bytes may follow the payload.

use std::path::Path;

use crate::error::{Error, FormatError, Result};
use crate::head::{ClassFilterBank, FeatureVolume};
use crate::tensor::{ClassId, LabelMap, ScoreMap, ScoreVolume};

pub const MAGIC: [u8; 4] = *b"DCT1";
const HEADER_FIXED: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl TensorData {
    fn code(&self) -> u8 {
        match self {
            TensorData::F32(_) => 0,
            TensorData::U8(_) => 1,
        }
    }

    fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<u64>,
    data: TensorData,
}

fn element_count(dims: &[u64]) -> Result<usize, FormatError> {
    let n = dims
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d))
        .ok_or(FormatError::DimOverflow)?;
    usize::try_from(n).map_err(|_| FormatError::DimOverflow)
}

impl Tensor {
    pub fn new(dims: Vec<u64>, data: TensorData) -> Result<Self, FormatError> {
        if dims.len() < 2 {
            return Err(FormatError::BadRank(dims.len() as u32));
        }
        let n = element_count(&dims)?;
        if n != data.len() {
            return Err(FormatError::UnexpectedShape(format!(
                "dims {dims:?} hold {n} elements, payload has {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> &[u64] {
        &self.dims
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn encode(&self) -> Vec<u8> {
        let esize = match self.data {
            TensorData::F32(_) => 4,
            TensorData::U8(_) => 1,
        };
        let mut out =
            Vec::with_capacity(HEADER_FIXED + 8 * self.dims.len() + esize * self.data.len());
        out.extend_from_slice(&MAGIC);
        out.push(self.data.code());
        out.extend_from_slice(&[0; 3]);
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U8(v) => out.extend_from_slice(v),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        let truncated = |needed: usize| FormatError::Truncated {
            needed: needed as u64,
            found: bytes.len() as u64,
        };
        if bytes.len() < 4 {
            return Err(truncated(HEADER_FIXED));
        }
        let magic: [u8; 4] = bytes[..4].try_into().expect("length checked");
        if magic != MAGIC {
            return Err(FormatError::BadMagic(magic));
        }
        if bytes.len() < HEADER_FIXED {
            return Err(truncated(HEADER_FIXED));
        }
        let code = bytes[4];
        let esize = match code {
            0 => 4,
            1 => 1,
            other => return Err(FormatError::UnknownElementType(other)),
        };
        if bytes[5..8] != [0, 0, 0] {
            return Err(FormatError::UnexpectedShape(
                "reserved header bytes are not zero".into(),
            ));
        }
        let rank = u32::from_le_bytes(bytes[8..12].try_into().expect("length checked"));
        if rank < 2 {
            return Err(FormatError::BadRank(rank));
        }
        let header = (rank as usize)
            .checked_mul(8)
            .and_then(|d| d.checked_add(HEADER_FIXED))
            .ok_or(FormatError::DimOverflow)?;
        if bytes.len() < header {
            return Err(truncated(header));
        }
        let dims: Vec<u64> = bytes[HEADER_FIXED..header]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let n = element_count(&dims)?;
        let total = n
            .checked_mul(esize)
            .and_then(|p| p.checked_add(header))
            .ok_or(FormatError::DimOverflow)?;
        if bytes.len() < total {
            return Err(truncated(total));
        }
        if bytes.len() > total {
            return Err(FormatError::TrailingBytes((bytes.len() - total) as u64));
        }
        let payload = &bytes[header..total];
        let data = match code {
            0 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
                    .collect(),
            ),
            _ => TensorData::U8(payload.to_vec()),
        };
        Ok(Self { dims, data })
    }

    fn f32_shape(&self, rank: usize, what: &str) -> Result<(&[f32], Vec<usize>), FormatError> {
        match &self.data {
            TensorData::F32(v) if self.dims.len() == rank => {
                Ok((v, self.dims.iter().map(|&d| d as usize).collect()))
            }
            _ => Err(FormatError::UnexpectedShape(format!(
                "{what} needs rank-{rank} f32, found rank {} {}",
                self.dims.len(),
                if matches!(self.data, TensorData::F32(_)) {
                    "f32"
                } else {
                    "u8"
                }
            ))),
        }
    }

    pub fn from_score_map(m: &ScoreMap) -> Self {
        Self {
            dims: vec![m.height() as u64, m.width() as u64],
            data: TensorData::F32(m.data().to_vec()),
        }
    }

    pub fn to_score_map(&self) -> Result<ScoreMap> {
        let (v, d) = self.f32_shape(2, "score map")?;
        ScoreMap::new(d[1], d[0], v.to_vec())
    }

    pub fn from_volume(v: &ScoreVolume) -> Self {
        Self {
            dims: vec![v.len() as u64, v.height() as u64, v.width() as u64],
            data: TensorData::F32(v.to_channel_major()),
        }
    }

    /// Channel `i` becomes class `first + i`: attention volumes start at 1,
    /// prediction volumes over the full label space start at 0.
    pub fn to_volume(&self, first: ClassId) -> Result<ScoreVolume> {
        let (v, d) = self.f32_shape(3, "score volume")?;
        if d[0] == 0 {
            return ScoreVolume::empty(d[2], d[1]);
        }
        ScoreVolume::from_channel_major(d[2], d[1], first, v)
    }

    pub fn from_features(f: &FeatureVolume) -> Self {
        Self {
            dims: vec![f.channels() as u64, f.height() as u64, f.width() as u64],
            data: TensorData::F32(f.data().to_vec()),
        }
    }

    pub fn to_features(&self) -> Result<FeatureVolume> {
        let (v, d) = self.f32_shape(3, "feature volume")?;
        FeatureVolume::new(d[0], d[2], d[1], v.to_vec())
    }

    /// `[|Z|, K + 1]`: each row is a class filter followed by its bias.
    pub fn from_filter_bank(w: &ClassFilterBank) -> Self {
        let data = w
            .weights()
            .iter()
            .zip(w.biases())
            .flat_map(|(row, &b)| row.iter().copied().chain(std::iter::once(b)))
            .collect();
        Self {
            dims: vec![w.classes().len() as u64, w.channels() as u64 + 1],
            data: TensorData::F32(data),
        }
    }

    /// Rows map to object classes `1..=rows`.
    pub fn to_filter_bank(&self) -> Result<ClassFilterBank> {
        let (v, d) = self.f32_shape(2, "filter bank")?;
        if d[1] < 2 {
            return Err(FormatError::UnexpectedShape(
                "filter bank rows need K >= 1 plus a bias".into(),
            )
            .into());
        }
        let rows: Vec<&[f32]> = v.chunks_exact(d[1]).collect();
        let weights = rows.iter().map(|r| r[..d[1] - 1].to_vec()).collect();
        let biases = rows.iter().map(|r| r[d[1] - 1]).collect();
        let classes = (1..=d[0]).map(|c| c as ClassId).collect();
        ClassFilterBank::new(classes, weights, biases)
    }

    pub fn from_label_map(m: &LabelMap) -> Self {
        Self {
            dims: vec![m.height() as u64, m.width() as u64],
            data: TensorData::U8(m.data().to_vec()),
        }
    }

    pub fn to_label_map(&self) -> Result<LabelMap> {
        match &self.data {
            TensorData::U8(v) if self.dims.len() == 2 => {
                LabelMap::new(self.dims[1] as usize, self.dims[0] as usize, v.clone())
            }
            _ => Err(FormatError::UnexpectedShape("label map needs rank-2 u8".into()).into()),
        }
    }
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, t.encode()).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Tensor::decode(&bytes)?)
}
