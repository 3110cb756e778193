use std::fs::File;
use std::io::{BufWriter, Cursor};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn format_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

/// Decodes an 8-bit PNG into a `(1, 3, H, W)` tensor in `[0, 1]`.
///
/// Gray images are replicated to three channels, palettes are expanded and
/// alpha is dropped. 16-bit images are rejected.
pub fn decode_png<T: Scalar>(bytes: &[u8], path: &Path) -> Result<Tensor<T>> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| format_err(path, e.to_string()))?;
    if reader.info().bit_depth == BitDepth::Sixteen {
        return Err(format_err(path, "16-bit PNG is not supported, expected 8-bit"));
    }
    let (color, depth) = reader.output_color_type();
    if depth != BitDepth::Eight {
        return Err(format_err(path, format!("unsupported bit depth {depth:?}")));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| format_err(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| format_err(path, e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let (stride, gray) = match color {
        ColorType::Grayscale => (1, true),
        ColorType::GrayscaleAlpha => (2, true),
        ColorType::Rgb => (3, false),
        ColorType::Rgba => (4, false),
        ColorType::Indexed => return Err(format_err(path, "palette was not expanded")),
    };
    let line = info.line_size;
    Ok(Tensor::from_fn([1, 3, h, w], |_, c, y, x| {
        let px = y * line + x * stride;
        let v = if gray { buf[px] } else { buf[px + c] };
        T::of(v as f64 / 255.0)
    }))
}

pub fn load_png<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes, path)
}

/// `[0, 1]` to `0..=255`: clamp, scale, round half away from zero.
pub fn to_u8<T: Scalar>(v: T) -> u8 {
    (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Snaps every value to the nearest representable 8-bit level.
pub fn quantize<T: Scalar>(image: &Tensor<T>) -> Tensor<T> {
    image.map(|v| T::of(to_u8(v) as f64 / 255.0))
}

/// Writes the first image of a 3-channel batch as an 8-bit RGB PNG.
pub fn save_png<T: Scalar>(image: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let s = image.shape();
    if s.c != 3 || s.n < 1 {
        return Err(Error::shape("save_png", format!("expected (1, 3, H, W), got {s}")));
    }
    let mut bytes = Vec::with_capacity(3 * s.h * s.w);
    for y in 0..s.h {
        for x in 0..s.w {
            for c in 0..3 {
                bytes.push(to_u8(image.at(0, c, y, x)));
            }
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), s.w as u32, s.h as u32);
    enc.set_color(ColorType::Rgb);
    enc.set_depth(BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| format_err(path, e.to_string()))?;
    writer
        .write_image_data(&bytes)
        .and_then(|_| writer.finish())
        .map_err(|e| format_err(path, e.to_string()))
}
