//! PNG encoding of the conditioning images.
//!
//! * depth: 16-bit grayscale, `round(depth_m * 1000)`, 0 = background,
//!   covered pixels clamped to `1..=65535`.
//! * semantic: 8-bit RGB, 0 = background, covered channels stored as
//!   `1 + round(c * 254)` so a covered pixel is never black.
//! * skeleton: 8-bit RGB as drawn.

use super::raster::{DepthMap, SemanticMap};
use super::skeleton::RgbImage;
use super::RenderError;
use std::path::Path;

fn io_err(path: &Path, e: impl std::fmt::Display) -> RenderError {
    RenderError::Image(format!("{}: {e}", path.display()))
}

pub fn encode_png(
    width: u32,
    height: u32,
    color: png::ColorType,
    depth: png::BitDepth,
    data: &[u8],
) -> Result<Vec<u8>, RenderError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width, height);
        enc.set_color(color);
        enc.set_depth(depth);
        let mut writer = enc
            .write_header()
            .map_err(|e| RenderError::Image(e.to_string()))?;
        writer
            .write_image_data(data)
            .map_err(|e| RenderError::Image(e.to_string()))?;
    }
    Ok(out)
}

pub fn depth_to_u16(depth: &DepthMap) -> Vec<u16> {
    depth
        .data
        .iter()
        .map(|d| {
            if d.is_finite() {
                (d * 1000.0).round().clamp(1.0, 65535.0) as u16
            } else {
                0
            }
        })
        .collect()
}

pub fn encode_depth_png(depth: &DepthMap) -> Result<Vec<u8>, RenderError> {
    let bytes: Vec<u8> = depth_to_u16(depth)
        .into_iter()
        .flat_map(u16::to_be_bytes)
        .collect();
    encode_png(
        depth.width,
        depth.height,
        png::ColorType::Grayscale,
        png::BitDepth::Sixteen,
        &bytes,
    )
}

pub fn semantic_to_rgb(semantic: &SemanticMap, depth: &DepthMap) -> RgbImage {
    let mut img = RgbImage::black(semantic.width, semantic.height);
    for (i, (c, d)) in semantic.data.iter().zip(&depth.data).enumerate() {
        if d.is_finite() {
            let px = c.map(|v| 1 + (v.clamp(0.0, 1.0) * 254.0).round() as u8);
            img.data[i * 3..i * 3 + 3].copy_from_slice(&px);
        }
    }
    img
}

pub fn encode_rgb_png(img: &RgbImage) -> Result<Vec<u8>, RenderError> {
    encode_png(
        img.width,
        img.height,
        png::ColorType::Rgb,
        png::BitDepth::Eight,
        &img.data,
    )
}

fn decode(bytes: &[u8]) -> Result<(png::OutputInfo, Vec<u8>), RenderError> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| RenderError::Image(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| RenderError::Image(e.to_string()))?;
    buf.truncate(info.buffer_size());
    Ok((info, buf))
}

pub fn decode_rgb_png(bytes: &[u8]) -> Result<RgbImage, RenderError> {
    let (info, buf) = decode(bytes)?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(RenderError::Image(format!(
            "expected 8-bit RGB, got {:?} {:?}",
            info.color_type, info.bit_depth
        )));
    }
    Ok(RgbImage {
        width: info.width,
        height: info.height,
        data: buf,
    })
}

/// Returns `(width, height, values)` of a 16-bit grayscale PNG.
pub fn decode_depth_png(bytes: &[u8]) -> Result<(u32, u32, Vec<u16>), RenderError> {
    let (info, buf) = decode(bytes)?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(RenderError::Image("expected 16-bit grayscale".into()));
    }
    let values = buf
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect();
    Ok((info.width, info.height, values))
}

pub fn read_rgb_png(path: &Path) -> Result<RgbImage, RenderError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    decode_rgb_png(&bytes)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), RenderError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_png_round_trip() {
        let depth = DepthMap {
            width: 3,
            height: 2,
            data: vec![f64::INFINITY, 2.0, 0.0001, 1.2345, 70.0, f64::INFINITY],
        };
        let (w, h, v) = decode_depth_png(&encode_depth_png(&depth).unwrap()).unwrap();
        assert_eq!((w, h), (3, 2));
        assert_eq!(v, vec![0, 2000, 1, 1235, 65535, 0]);
    }

    #[test]
    fn covered_semantic_never_black() {
        let depth = DepthMap {
            width: 2,
            height: 1,
            data: vec![1.0, f64::INFINITY],
        };
        let sem = SemanticMap {
            width: 2,
            height: 1,
            data: vec![[0.0; 3], [0.0; 3]],
        };
        let img = semantic_to_rgb(&sem, &depth);
        assert_eq!(img.pixel(0, 0), [1, 1, 1]);
        assert_eq!(img.pixel(1, 0), [0, 0, 0]);
        let back = decode_rgb_png(&encode_rgb_png(&img).unwrap()).unwrap();
        assert_eq!(back, img);
    }
}
