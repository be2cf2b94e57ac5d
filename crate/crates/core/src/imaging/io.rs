//! PNG/JPEG ingestion and PNG emission.
//!
//! Rendered scenes carry their scene description in an `iTXt` chunk so an
//! uploaded frame can be paired with an oracle backend without a side file.

use std::io::Cursor;
use std::path::Path;

use image::ImageFormat;

use super::RasterImage;
use crate::error::{Error, Result};

/// `iTXt` keyword holding a rendered scene's JSON description.
pub const SCENE_KEYWORD: &str = "seatwatch:scene";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameFormat {
    Png,
    Jpeg,
}

pub fn sniff_format(bytes: &[u8]) -> Option<FrameFormat> {
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        Some(FrameFormat::Png)
    } else if bytes.starts_with(&[0xFF, 0xD8, 0xFF]) {
        Some(FrameFormat::Jpeg)
    } else {
        None
    }
}

/// Decodes PNG or JPEG bytes into 8-bit RGB, dropping any alpha channel.
pub fn decode_image(bytes: &[u8]) -> Result<RasterImage> {
    let format = sniff_format(bytes)
        .ok_or_else(|| Error::Decode("not a PNG or JPEG stream".into()))?;
    let image_format = match format {
        FrameFormat::Png => ImageFormat::Png,
        FrameFormat::Jpeg => {
            // The JPEG decoder pads truncated scans instead of failing.
            if !jpeg_has_eoi(bytes) {
                return Err(Error::Decode("truncated JPEG: missing end-of-image marker".into()));
            }
            ImageFormat::Jpeg
        }
    };
    let decoded = image::load_from_memory_with_format(bytes, image_format)
        .map_err(|e| Error::Decode(e.to_string()))?;
    let rgb = decoded.to_rgb8();
    let (w, h) = rgb.dimensions();
    let pixels = rgb.pixels().map(|p| p.0).collect();
    RasterImage::new(w, h, pixels)
}

fn jpeg_has_eoi(bytes: &[u8]) -> bool {
    let trimmed = match bytes.iter().rposition(|&b| b != 0) {
        Some(i) => &bytes[..=i],
        None => return false,
    };
    trimmed.ends_with(&[0xFF, 0xD9])
}

pub fn load_image(path: &Path) -> Result<RasterImage> {
    let bytes = std::fs::read(path)?;
    decode_image(&bytes)
}

/// Encodes as an 8-bit RGB PNG with the given `iTXt` entries. Output is
/// byte-stable for identical input.
pub fn encode_png(img: &RasterImage, text: &[(&str, &str)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, img.width(), img.height());
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        for (key, value) in text {
            encoder
                .add_itxt_chunk(key.to_string(), value.to_string())
                .map_err(|e| Error::Encode(e.to_string()))?;
        }
        let mut writer = encoder.write_header().map_err(|e| Error::Encode(e.to_string()))?;
        let data: Vec<u8> = img.pixels().iter().flatten().copied().collect();
        writer.write_image_data(&data).map_err(|e| Error::Encode(e.to_string()))?;
        writer.finish().map_err(|e| Error::Encode(e.to_string()))?;
    }
    Ok(out)
}

pub fn encode_jpeg(img: &RasterImage, quality: u8) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let data: Vec<u8> = img.pixels().iter().flatten().copied().collect();
    let encoder = image::codecs::jpeg::JpegEncoder::new_with_quality(&mut out, quality);
    image::ImageEncoder::write_image(
        encoder,
        &data,
        img.width(),
        img.height(),
        image::ExtendedColorType::Rgb8,
    )
    .map_err(|e| Error::Encode(e.to_string()))?;
    Ok(out)
}

pub fn save_png(path: &Path, img: &RasterImage, text: &[(&str, &str)]) -> Result<()> {
    std::fs::write(path, encode_png(img, text)?)?;
    Ok(())
}

/// Reads a textual chunk (`iTXt`, then `tEXt`) from PNG bytes. Returns `None`
/// for non-PNG input or when the keyword is absent.
pub fn png_text(bytes: &[u8], keyword: &str) -> Option<String> {
    if sniff_format(bytes) != Some(FrameFormat::Png) {
        return None;
    }
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let reader = decoder.read_info().ok()?;
    let info = reader.info();
    for chunk in &info.utf8_text {
        if chunk.keyword == keyword {
            return chunk.get_text().ok();
        }
    }
    info.uncompressed_latin1_text
        .iter()
        .find(|c| c.keyword == keyword)
        .map(|c| c.text.clone())
}
