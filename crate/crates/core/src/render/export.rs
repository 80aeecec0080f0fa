//! 8-bit image export. Quantization is `floor(255 v + 0.5)` after clamping
//! to `[0, 1]`, so exported bytes are bit-exact across platforms.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    #[default]
    Ppm,
    Png,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Ppm => "ppm",
            ImageFormat::Png => "png",
        }
    }
}

impl FromStr for ImageFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ppm" => Ok(ImageFormat::Ppm),
            "png" => Ok(ImageFormat::Png),
            _ => Err(Error::Config(format!("unknown image format `{s}` (expected ppm or png)"))),
        }
    }
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Interleaved RGB bytes, row-major. Single-channel images are replicated
/// to gray.
fn rgb_bytes(img: &Image) -> Result<Vec<u8>> {
    if img.channels != 3 && img.channels != 1 {
        return Err(Error::Shape(format!("cannot export a {}-channel image", img.channels)));
    }
    let mut out = Vec::with_capacity(3 * img.plane_len());
    for y in 0..img.height {
        for x in 0..img.width {
            for c in 0..3 {
                out.push(quantize(img.at(c.min(img.channels - 1), y, x)));
            }
        }
    }
    Ok(out)
}

/// Binary PPM (P6, maxval 255).
pub fn encode_ppm(img: &Image) -> Result<Vec<u8>> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(rgb_bytes(img)?);
    Ok(out)
}

pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Format(format!("png: {e}")))?;
        writer
            .write_image_data(&rgb_bytes(img)?)
            .map_err(|e| Error::Format(format!("png: {e}")))?;
    }
    Ok(out)
}

pub fn write_image(path: &Path, img: &Image, format: ImageFormat) -> Result<()> {
    let bytes = match format {
        ImageFormat::Ppm => encode_ppm(img)?,
        ImageFormat::Png => encode_png(img)?,
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
