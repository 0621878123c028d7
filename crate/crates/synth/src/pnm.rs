//! Binary PPM images (P6) and PGM masks (P5, 0 = background, 255 = foreground).

use std::fs;
use std::path::Path;

use gres_core::raster::{Mask, RgbImage};
use gres_core::{GresError, Result};
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageFormat};

fn encode(
    data: &[u8],
    h: usize,
    w: usize,
    subtype: PnmSubtype,
    color: ExtendedColorType,
) -> Vec<u8> {
    let mut buf = Vec::new();
    PnmEncoder::new(&mut buf)
        .with_subtype(subtype)
        .write_image(data, w as u32, h as u32, color)
        .expect("in-memory PNM encoding of a well-sized buffer");
    buf
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    encode(
        &img.data,
        img.height,
        img.width,
        PnmSubtype::Pixmap(SampleEncoding::Binary),
        ExtendedColorType::Rgb8,
    )
}

pub fn encode_pgm(mask: &Mask) -> Vec<u8> {
    let bytes: Vec<u8> = mask.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
    encode(
        &bytes,
        mask.height,
        mask.width,
        PnmSubtype::Graymap(SampleEncoding::Binary),
        ExtendedColorType::L8,
    )
}

fn decode(bytes: &[u8], path: &Path) -> Result<DynamicImage> {
    image::load_from_memory_with_format(bytes, ImageFormat::Pnm).map_err(|e| GresError::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<RgbImage> {
    match decode(bytes, path)? {
        DynamicImage::ImageRgb8(img) => {
            let (w, h) = img.dimensions();
            RgbImage::new(h as usize, w as usize, img.into_raw())
        }
        other => Err(GresError::Format {
            path: path.to_path_buf(),
            reason: format!("expected an 8-bit RGB pixmap, found {:?}", other.color()),
        }),
    }
}

pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<Mask> {
    let fmt_err = |reason: String| GresError::Format {
        path: path.to_path_buf(),
        reason,
    };
    let DynamicImage::ImageLuma8(img) = decode(bytes, path)? else {
        return Err(fmt_err("expected an 8-bit graymap".into()));
    };
    let (w, h) = img.dimensions();
    let data = img
        .into_raw()
        .into_iter()
        .map(|v| match v {
            0 => Ok(false),
            255 => Ok(true),
            v => Err(fmt_err(format!("mask value {v} is neither 0 nor 255"))),
        })
        .collect::<Result<Vec<bool>>>()?;
    Mask::new(h as usize, w as usize, data)
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    fs::write(path, encode_ppm(img)).map_err(|e| GresError::io(path, e))
}

pub fn write_pgm(path: &Path, mask: &Mask) -> Result<()> {
    fs::write(path, encode_pgm(mask)).map_err(|e| GresError::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    decode_ppm(&fs::read(path).map_err(|e| GresError::io(path, e))?, path)
}

pub fn read_pgm(path: &Path) -> Result<Mask> {
    decode_pgm(&fs::read(path).map_err(|e| GresError::io(path, e))?, path)
}
