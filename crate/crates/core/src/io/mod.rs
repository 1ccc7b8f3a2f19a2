//! On-disk formats: PNG codecs, the `DCT1` tensor container, dataset
//! manifests and the synthetic dataset generator.

pub mod container;
pub mod manifest;
pub mod png;
pub mod synth;

pub use container::{read_tensor, write_tensor, Tensor, TensorData};
pub use manifest::{dataset_mean_pixel, mean_pixel, DatasetManifest, Record};
pub use png::{
    read_gray_png, read_label_png, read_rgb_png, voc_palette, write_gray_png, write_label_png,
    write_rgb_png,
};
