//! Image I/O, bicubic degradation, patch sampling and augmentation.

mod image;
mod manifest;
mod resize;
mod sample;
mod synthetic;

pub use image::{decode_png, load_png, quantize, save_png, to_u8};
pub use manifest::{degrade, ingest, sha256_hex, DatasetManifest, Degradation, ImageEntry, IngestIssue, BICUBIC_KERNEL};
pub use resize::{bicubic_downscale, bicubic_resize, bicubic_upscale, modcrop};
pub use sample::{augment, crop_pair, sample_patch, sample_rng, Dihedral, ImagePair, PairSample};
pub use synthetic::synthetic_image;
