//! PNG codecs for label maps (indexed, VOC palette), RGB images and
//! grayscale saliency maps.

use std::io::Cursor;
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use crate::error::{Error, FormatError, Result};
use crate::saliency::RgbImage;
use crate::tensor::{LabelMap, ScoreMap};

/// The standard 256-entry VOC palette, flattened RGB. Each of the low
/// three bits of the index feeds one channel, most significant bit first.
pub fn voc_palette() -> [[u8; 3]; 256] {
    let mut palette = [[0u8; 3]; 256];
    for (i, entry) in palette.iter_mut().enumerate() {
        let mut c = i;
        for j in 0..8 {
            for (ch, value) in entry.iter_mut().enumerate() {
                *value |= (((c >> ch) & 1) as u8) << (7 - j);
            }
            c >>= 3;
        }
    }
    palette
}

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::Format(FormatError::Png(e.to_string()))
}

fn dims_u32(width: usize, height: usize) -> Result<(u32, u32)> {
    match (u32::try_from(width), u32::try_from(height)) {
        (Ok(w), Ok(h)) => Ok((w, h)),
        _ => Err(FormatError::DimOverflow.into()),
    }
}

fn encode(
    width: usize,
    height: usize,
    color: ColorType,
    depth: BitDepth,
    palette: Option<Vec<u8>>,
    data: &[u8],
) -> Result<Vec<u8>> {
    let (w, h) = dims_u32(width, height)?;
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w, h);
        enc.set_color(color);
        enc.set_depth(depth);
        if let Some(p) = palette {
            enc.set_palette(p);
        }
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(data).map_err(png_err)?;
        writer.finish().map_err(png_err)?;
    }
    Ok(out)
}

struct Decoded {
    width: usize,
    height: usize,
    color: ColorType,
    depth: BitDepth,
    data: Vec<u8>,
}

fn decode(bytes: &[u8]) -> Result<Decoded> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(Transformations::IDENTITY);
    let mut reader = dec.read_info().map_err(png_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or(FormatError::DimOverflow)?;
    let mut data = vec![0; size];
    let frame = reader.next_frame(&mut data).map_err(png_err)?;
    data.truncate(frame.buffer_size());
    Ok(Decoded {
        width: frame.width as usize,
        height: frame.height as usize,
        color: frame.color_type,
        depth: frame.bit_depth,
        data,
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_label_png(m: &LabelMap) -> Result<Vec<u8>> {
    let palette = voc_palette().concat();
    encode(
        m.width(),
        m.height(),
        ColorType::Indexed,
        BitDepth::Eight,
        Some(palette),
        m.data(),
    )
}

/// Decodes an 8-bit indexed PNG into raw palette indices.
pub fn decode_label_png(bytes: &[u8]) -> Result<LabelMap> {
    let d = decode(bytes)?;
    if d.color != ColorType::Indexed || d.depth != BitDepth::Eight {
        return Err(FormatError::Png(format!(
            "label maps must be 8-bit indexed, found {:?} {:?}",
            d.color, d.depth
        ))
        .into());
    }
    LabelMap::new(d.width, d.height, d.data)
}

pub fn write_label_png(path: &Path, m: &LabelMap) -> Result<()> {
    write_file(path, &encode_label_png(m)?)
}

pub fn read_label_png(path: &Path) -> Result<LabelMap> {
    decode_label_png(&read_file(path)?).map_err(|e| with_path(path, e))
}

pub fn encode_rgb_png(img: &RgbImage) -> Result<Vec<u8>> {
    encode(
        img.width(),
        img.height(),
        ColorType::Rgb,
        BitDepth::Eight,
        None,
        img.data(),
    )
}

pub fn decode_rgb_png(bytes: &[u8]) -> Result<RgbImage> {
    let d = decode(bytes)?;
    let data = match (d.color, d.depth) {
        (ColorType::Rgb, BitDepth::Eight) => d.data,
        (ColorType::Rgba, BitDepth::Eight) => d
            .data
            .chunks_exact(4)
            .flat_map(|p| [p[0], p[1], p[2]])
            .collect(),
        (ColorType::Grayscale, BitDepth::Eight) => d.data.iter().flat_map(|&v| [v, v, v]).collect(),
        (c, b) => {
            return Err(FormatError::Png(format!("unsupported image format {c:?} {b:?}")).into())
        }
    };
    RgbImage::new(d.width, d.height, data)
}

pub fn write_rgb_png(path: &Path, img: &RgbImage) -> Result<()> {
    write_file(path, &encode_rgb_png(img)?)
}

pub fn read_rgb_png(path: &Path) -> Result<RgbImage> {
    decode_rgb_png(&read_file(path)?).map_err(|e| with_path(path, e))
}

/// 8-bit grayscale rendering of a normalized map, rounding to nearest.
pub fn encode_gray_png(m: &ScoreMap) -> Result<Vec<u8>> {
    let data: Vec<u8> = m
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    encode(
        m.width(),
        m.height(),
        ColorType::Grayscale,
        BitDepth::Eight,
        None,
        &data,
    )
}

/// Reads an 8- or 16-bit grayscale PNG and rescales it to `[0, 1]`.
pub fn decode_gray_png(bytes: &[u8]) -> Result<ScoreMap> {
    let d = decode(bytes)?;
    let data: Vec<f32> = match (d.color, d.depth) {
        (ColorType::Grayscale, BitDepth::Eight) => {
            d.data.iter().map(|&v| v as f32 / 255.0).collect()
        }
        (ColorType::Grayscale, BitDepth::Sixteen) => d
            .data
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f32 / 65535.0)
            .collect(),
        (c, b) => {
            return Err(
                FormatError::Png(format!("saliency must be grayscale, found {c:?} {b:?}")).into(),
            )
        }
    };
    ScoreMap::new_normalized(d.width, d.height, data)
}

pub fn write_gray_png(path: &Path, m: &ScoreMap) -> Result<()> {
    write_file(path, &encode_gray_png(m)?)
}

pub fn read_gray_png(path: &Path) -> Result<ScoreMap> {
    decode_gray_png(&read_file(path)?).map_err(|e| with_path(path, e))
}

fn with_path(path: &Path, e: Error) -> Error {
    match e {
        Error::Format(f) => Error::Manifest {
            path: path.to_path_buf(),
            message: f.to_string(),
        },
        other => other,
    }
}
