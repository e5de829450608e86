//! Image and depth-map file formats.
//!
//! Depth is stored either as a 16-bit PNG of raw sensor units (multiplied by
//! a scale to get meters, 0 = invalid) or as a lossless `.npy` array of `f64`
//! meters with shape `[height, width]`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use npyz::WriterBuilder;

use crate::depth::{AssignmentMap, DepthMap};
use crate::error::{Error, Result};
use crate::image::{to_gray, GrayImage};

/// Raw-to-meters factor used by default for 16-bit depth output.
pub const DEFAULT_DEPTH_SCALE: f64 = 1.0 / 5000.0;

const PALETTE: [[u8; 3]; 12] = [
    [230, 25, 75],
    [60, 180, 75],
    [0, 130, 200],
    [255, 225, 25],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [170, 110, 40],
];

fn image_err(path: &Path, source: image::ImageError) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

fn is_npy(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("npy"))
}

/// Loads any supported image as normalized luma.
pub fn read_image(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(buf) => {
            GrayImage::from_vec(w, h, buf.into_raw().into_iter().map(|v| v as f32 / 255.0).collect())
        }
        DynamicImage::ImageLuma16(buf) => {
            GrayImage::from_vec(w, h, buf.into_raw().into_iter().map(|v| v as f32 / 65535.0).collect())
        }
        other => to_gray(w, h, other.to_rgb32f().as_raw()),
    }
}

/// Writes a normalized image as 16-bit grayscale PNG.
pub fn write_image(path: &Path, img: &GrayImage) -> Result<()> {
    let raw: Vec<u16> = img
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(img.width() as u32, img.height() as u32, raw).expect("buffer sized to image");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| image_err(path, e))
}

/// Width and height of an image or depth file without decoding pixels.
pub fn file_dims(path: &Path) -> Result<(usize, usize)> {
    if is_npy(path) {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let npy = npyz::NpyFile::new(BufReader::new(f)).map_err(|e| Error::io(path, e))?;
        return match npy.shape() {
            [h, w] => Ok((*w as usize, *h as usize)),
            s => Err(Error::Format(format!(
                "{}: expected a 2-D array, got shape {s:?}",
                path.display()
            ))),
        };
    }
    let (w, h) = image::image_dimensions(path).map_err(|e| image_err(path, e))?;
    Ok((w as usize, h as usize))
}

/// Loads a depth map in meters. `scale` converts raw PNG units and is
/// ignored for `.npy` files, which already hold meters.
pub fn read_depth(path: &Path, scale: f64) -> Result<DepthMap> {
    if is_npy(path) {
        return read_depth_npy(path);
    }
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw: Vec<u16> = match img {
        DynamicImage::ImageLuma16(buf) => buf.into_raw(),
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(u16::from).collect(),
        _ => {
            return Err(Error::Format(format!(
                "{}: depth images must be single-channel",
                path.display()
            )))
        }
    };
    DepthMap::from_vec(w, h, raw.into_iter().map(|v| v as f64 * scale).collect())
}

/// Writes depth as 16-bit raw units; invalid and out-of-range pixels become 0.
pub fn write_depth_png(path: &Path, depth: &DepthMap, scale: f64) -> Result<()> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::invalid("depth scale must be positive"));
    }
    let mut clipped = 0usize;
    let raw: Vec<u16> = depth
        .data()
        .iter()
        .map(|&z| {
            if z <= 0.0 {
                return 0;
            }
            let r = (z / scale).round();
            if r > u16::MAX as f64 {
                clipped += 1;
                0
            } else {
                r as u16
            }
        })
        .collect();
    if clipped > 0 {
        log::warn!(
            "{}: {clipped} depths exceed the 16-bit range and were dropped",
            path.display()
        );
    }
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(depth.width() as u32, depth.height() as u32, raw).expect("buffer sized to map");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| image_err(path, e))
}

pub fn write_depth_npy(path: &Path, depth: &DepthMap) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = npyz::WriteOptions::new()
        .default_dtype()
        .shape(&[depth.height() as u64, depth.width() as u64])
        .writer(BufWriter::new(f))
        .begin_nd()
        .map_err(|e| Error::io(path, e))?;
    w.extend(depth.data().iter().copied()).map_err(|e| Error::io(path, e))?;
    w.finish().map_err(|e| Error::io(path, e))
}

pub fn read_depth_npy(path: &Path) -> Result<DepthMap> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let npy = npyz::NpyFile::new(&bytes[..]).map_err(|e| Error::io(path, e))?;
    let (w, h) = match npy.shape() {
        [h, w] => (*w as usize, *h as usize),
        s => {
            return Err(Error::Format(format!(
                "{}: expected a 2-D array, got shape {s:?}",
                path.display()
            )))
        }
    };
    if npy.order() != npyz::Order::C {
        return Err(Error::Format(format!(
            "{}: Fortran-ordered arrays are not supported",
            path.display()
        )));
    }
    let data: Vec<f64> = match npy.dtype() {
        npyz::DType::Plain(t) if t.type_char() == npyz::TypeChar::Float && t.size_field() == 4 => npy
            .into_vec::<f32>()
            .map_err(|e| Error::io(path, e))?
            .into_iter()
            .map(f64::from)
            .collect(),
        _ => npy.into_vec::<f64>().map_err(|e| Error::io(path, e))?,
    };
    DepthMap::from_vec(w, h, data)
}

/// Color of a motion index in assignment visualizations.
pub fn motion_color(index: u16) -> [u8; 3] {
    PALETTE[index as usize % PALETTE.len()]
}

/// One color per motion index; unassigned pixels are black.
pub fn write_assignment_png(path: &Path, assignment: &AssignmentMap) -> Result<()> {
    let (w, h) = assignment.dims();
    let raw: Vec<u8> = assignment
        .data()
        .iter()
        .flat_map(|a| a.map_or([0, 0, 0], motion_color))
        .collect();
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(w as u32, h as u32, raw).expect("buffer sized to map");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| image_err(path, e))
}
