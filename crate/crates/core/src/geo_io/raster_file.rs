use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::codecs::png::PngEncoder;
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat, ImageReader};
use log::warn;

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, Mask};

use super::GeoTransform;

/// A raster read from disk together with its georeferencing.
#[derive(Debug, Clone)]
pub struct LoadedRaster<T> {
    pub raster: T,
    pub transform: GeoTransform,
    /// False when no sidecar existed and the identity transform was assumed.
    pub transform_found: bool,
}

/// Sidecar path: `.png` pairs with `.pgw`, `.pgm` with `.pmw`.
pub fn world_file_path(path: &Path) -> PathBuf {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let mut chars = ext.chars();
    let sidecar = match (chars.next(), chars.next_back()) {
        (Some(first), Some(last)) => format!("{first}{last}w"),
        (Some(first), None) => format!("{first}w"),
        _ => "wld".to_string(),
    };
    path.with_extension(sidecar)
}

fn format_of(path: &Path) -> Result<ImageFormat> {
    match ImageFormat::from_path(path) {
        Ok(f @ (ImageFormat::Png | ImageFormat::Pnm)) => Ok(f),
        _ => Err(Error::file(path, "unsupported raster format (expected .png or .pgm)")),
    }
}

fn write_gray(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let format = format_of(path)?;
    let file = fs::File::create(path).map_err(|e| Error::file(path, e))?;
    let mut out = BufWriter::new(file);
    let (w, h) = (width as u32, height as u32);
    let res = match format {
        ImageFormat::Png => PngEncoder::new(&mut out).write_image(pixels, w, h, ExtendedColorType::L8),
        _ => PnmEncoder::new(&mut out)
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Ascii))
            .write_image(pixels, w, h, ExtendedColorType::L8),
    };
    res.map_err(|e| Error::file(path, e))?;
    std::io::Write::flush(&mut out).map_err(|e| Error::file(path, e))
}

fn read_gray(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    format_of(path)?;
    let reader = ImageReader::open(path)
        .map_err(|e| Error::file(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::file(path, e))?;
    let img = reader.decode().map_err(|e| Error::file(path, e))?;
    let img = match img {
        image::DynamicImage::ImageLuma8(g) => g,
        other => {
            return Err(Error::file(
                path,
                format!("expected 8-bit grayscale, found {:?}", other.color()),
            ))
        }
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok((w, h, img.into_raw()))
}

fn write_sidecar(path: &Path, gt: &GeoTransform) -> Result<()> {
    let side = world_file_path(path);
    fs::write(&side, gt.to_world_file()).map_err(|e| Error::file(&side, e))
}

fn read_sidecar(path: &Path) -> Result<(GeoTransform, bool)> {
    let side = world_file_path(path);
    match fs::read_to_string(&side) {
        Ok(text) => Ok((
            GeoTransform::from_world_file(&text).map_err(|e| Error::file(&side, e))?,
            true,
        )),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            warn!("{}: no world file, assuming identity transform", side.display());
            Ok((GeoTransform::identity(), false))
        }
        Err(e) => Err(Error::file(&side, e)),
    }
}

/// Writes class codes as 8-bit gray values plus the world-file sidecar.
pub fn write_raster(mask: &Mask, gt: &GeoTransform, path: &Path) -> Result<()> {
    write_gray(path, mask.width(), mask.height(), mask.labels())?;
    write_sidecar(path, gt)
}

pub fn read_raster(path: &Path) -> Result<LoadedRaster<Mask>> {
    let (w, h, pixels) = read_gray(path)?;
    let raster = Mask::new(w, h, pixels).map_err(|e| Error::file(path, e))?;
    let (transform, transform_found) = read_sidecar(path)?;
    Ok(LoadedRaster {
        raster,
        transform,
        transform_found,
    })
}

/// Writes positives as 255 and negatives as 0.
pub fn write_binary_raster(mask: &BinaryMask, gt: &GeoTransform, path: &Path) -> Result<()> {
    let pixels: Vec<u8> = mask.bits().iter().map(|&b| b * 255).collect();
    write_gray(path, mask.width(), mask.height(), &pixels)?;
    write_sidecar(path, gt)
}

/// Reads a binary raster; 0 is negative, 1 and 255 are positive.
pub fn read_binary_raster(path: &Path) -> Result<LoadedRaster<BinaryMask>> {
    let (w, h, pixels) = read_gray(path)?;
    let mut bits = Vec::with_capacity(pixels.len());
    for (i, &v) in pixels.iter().enumerate() {
        bits.push(match v {
            0 => 0,
            1 | 255 => 1,
            bad => {
                return Err(Error::file(
                    path,
                    format!("value {bad} at pixel ({}, {}) is not a binary code (0, 1 or 255)", i % w, i / w),
                ))
            }
        });
    }
    let raster = BinaryMask::new(w, h, bits)?;
    let (transform, transform_found) = read_sidecar(path)?;
    Ok(LoadedRaster {
        raster,
        transform,
        transform_found,
    })
}
