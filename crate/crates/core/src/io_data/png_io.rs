//! PNG containers: 16-bit depth (meters x 256) and 8-bit RGB images.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use png::{BitDepth, ColorType, Compression, Decoder, Encoder, Filter};

use crate::error::{Error, Result};
use crate::raster::{DepthMap, Grid, ImageFrame};

/// Stored units per meter.
pub const DEPTH_UNITS_PER_METER: f64 = 256.0;

/// Largest depth the container can hold, in meters.
pub const MAX_STORABLE_DEPTH: f64 = u16::MAX as f64 / DEPTH_UNITS_PER_METER;

/// Quantize meters to stored units.
#[inline]
pub fn depth_to_units(m: f64) -> u16 {
    (m * DEPTH_UNITS_PER_METER).round().clamp(0.0, u16::MAX as f64) as u16
}

#[inline]
pub fn units_to_depth(v: u16) -> f64 {
    v as f64 / DEPTH_UNITS_PER_METER
}

/// Round-trip a map through the container's quantization without touching disk.
pub fn quantize_depth(d: &DepthMap) -> DepthMap {
    d.map(|m| units_to_depth(depth_to_units(m)))
        .expect("quantized depth stays finite and non-negative")
}

struct Decoded {
    width: usize,
    height: usize,
    color: ColorType,
    depth: BitDepth,
    bytes: Vec<u8>,
}

fn decode(path: &Path) -> Result<Decoded> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::BadFormat {
        path: path.to_path_buf(),
        reason,
    };
    let mut reader = Decoder::new(BufReader::new(file))
        .read_info()
        .map_err(|e| bad(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| bad("image too large".into()))?;
    let mut bytes = vec![0; size];
    let info = reader.next_frame(&mut bytes).map_err(|e| bad(e.to_string()))?;
    bytes.truncate(info.buffer_size());
    Ok(Decoded {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        depth: info.bit_depth,
        bytes,
    })
}

fn encode(path: &Path, width: usize, height: usize, color: ColorType, depth: BitDepth, data: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let to_io = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
    let mut enc = Encoder::new(&mut out, width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    enc.set_compression(Compression::Balanced);
    enc.set_filter(Filter::Sub);
    let mut writer = enc.write_header().map_err(to_io)?;
    writer.write_image_data(data).map_err(to_io)?;
    writer.finish().map_err(to_io)?;
    out.flush().map_err(|e| Error::io(path, e))
}

fn bit_count(d: BitDepth) -> u8 {
    match d {
        BitDepth::One => 1,
        BitDepth::Two => 2,
        BitDepth::Four => 4,
        BitDepth::Eight => 8,
        BitDepth::Sixteen => 16,
    }
}

/// Read a 16-bit single-channel PNG; stored 0 stays invalid.
pub fn load_depth_png(path: impl AsRef<Path>) -> Result<DepthMap> {
    let path = path.as_ref();
    let img = decode(path)?;
    if img.color != ColorType::Grayscale {
        return Err(Error::BadFormat {
            path: path.to_path_buf(),
            reason: format!("expected single-channel grayscale, found {:?}", img.color),
        });
    }
    if img.depth != BitDepth::Sixteen {
        return Err(Error::BitDepthMismatch {
            path: path.to_path_buf(),
            expected: 16,
            found: bit_count(img.depth),
        });
    }
    let values = img
        .bytes
        .chunks_exact(2)
        .map(|b| units_to_depth(u16::from_be_bytes([b[0], b[1]])))
        .collect();
    DepthMap::new(img.width, img.height, values)
}

/// Write `d` as a 16-bit PNG; depths beyond [`MAX_STORABLE_DEPTH`] saturate.
pub fn save_depth_png(d: &DepthMap, path: impl AsRef<Path>) -> Result<()> {
    let data: Vec<u8> = d
        .values()
        .iter()
        .flat_map(|&m| depth_to_units(m).to_be_bytes())
        .collect();
    encode(
        path.as_ref(),
        d.width(),
        d.height(),
        ColorType::Grayscale,
        BitDepth::Sixteen,
        &data,
    )
}

/// Read an 8-bit PNG as RGB in [0, 1]. Gray is replicated, alpha dropped.
pub fn load_image_png(path: impl AsRef<Path>) -> Result<ImageFrame> {
    let path = path.as_ref();
    let img = decode(path)?;
    if img.depth != BitDepth::Eight {
        return Err(Error::BitDepthMismatch {
            path: path.to_path_buf(),
            expected: 8,
            found: bit_count(img.depth),
        });
    }
    let channels = match img.color {
        ColorType::Grayscale => 1,
        ColorType::GrayscaleAlpha => 2,
        ColorType::Rgb => 3,
        ColorType::Rgba => 4,
        ColorType::Indexed => {
            return Err(Error::BadFormat {
                path: path.to_path_buf(),
                reason: "indexed color is not supported".into(),
            })
        }
    };
    let pixels = img
        .bytes
        .chunks_exact(channels)
        .map(|p| {
            let f = |b: u8| b as f64 / 255.0;
            if channels < 3 {
                [f(p[0]); 3]
            } else {
                [f(p[0]), f(p[1]), f(p[2])]
            }
        })
        .collect();
    ImageFrame::from_grid(Grid::from_vec(img.width, img.height, pixels)?)
}

pub fn save_image_png(img: &ImageFrame, path: impl AsRef<Path>) -> Result<()> {
    let data: Vec<u8> = img
        .grid()
        .as_slice()
        .iter()
        .flat_map(|p| p.map(|c| (c * 255.0).round() as u8))
        .collect();
    encode(path.as_ref(), img.width(), img.height(), ColorType::Rgb, BitDepth::Eight, &data)
}

/// Write an 8-bit single-channel PNG.
pub fn save_gray_png(values: &Grid<u8>, path: impl AsRef<Path>) -> Result<()> {
    encode(
        path.as_ref(),
        values.width(),
        values.height(),
        ColorType::Grayscale,
        BitDepth::Eight,
        values.as_slice(),
    )
}
