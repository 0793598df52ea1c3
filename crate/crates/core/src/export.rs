//! Point clouds from rendered depth, and binary PLY I/O.
//!
//! PLY files are `binary_little_endian 1.0` with one `vertex` element made
//! of `float x, y, z` followed by `uchar red, green, blue`; clouds hold f32
//! coordinates and 8-bit colors, exactly what the file stores.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::data::{atomic_write, encode_rgb_png, quantize, DataError};
use crate::raster::{DepthMap, RgbImage};
use crate::rendering::Camera;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("depth is {depth:?} but image is {image:?}")]
    Dimension { image: (usize, usize), depth: (usize, usize) },
    #[error("camera is {camera:?} but image is {image:?}")]
    CameraSize { image: (usize, usize), camera: (usize, usize) },
    #[error("{path}: {message}")]
    Ply { path: PathBuf, message: String },
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CloudPoint {
    pub position: [f32; 3],
    pub color: [u8; 3],
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<CloudPoint>,
}

/// World point seen at the center of pixel `(u, v)` at camera-frame depth
/// `z`: `pose · (z·(u+0.5−cx)/fx, z·(v+0.5−cy)/fy, z)`. This inverts the
/// pixel-ray convention, in which depth is the ray parameter along the
/// z-normalized direction.
pub fn pixel_to_world(camera: &Camera, u: f64, v: f64, z: f64) -> [f64; 3] {
    camera.camera_to_world([z * (u + 0.5 - camera.cx) / camera.fx, z * (v + 0.5 - camera.cy) / camera.fy, z])
}

/// Lifts every pixel with positive finite depth via [`pixel_to_world`].
pub fn backproject(image: &RgbImage, depth: &DepthMap, camera: &Camera) -> Result<PointCloud, ExportError> {
    let size = (image.width(), image.height());
    if !image.same_size(depth) {
        return Err(ExportError::Dimension {
            image: size,
            depth: (depth.width(), depth.height()),
        });
    }
    if size != (camera.width, camera.height) {
        return Err(ExportError::CameraSize {
            image: size,
            camera: (camera.width, camera.height),
        });
    }
    let mut points = Vec::new();
    for v in 0..size.1 {
        for u in 0..size.0 {
            let z = *depth.get(u, v);
            if !(z > 0.0 && z.is_finite()) {
                continue;
            }
            points.push(CloudPoint {
                position: pixel_to_world(camera, u as f64, v as f64, z).map(|c| c as f32),
                color: image.get(u, v).map(quantize),
            });
        }
    }
    Ok(PointCloud { points })
}

const PROPERTIES: &str = "property float x\nproperty float y\nproperty float z\n\
                          property uchar red\nproperty uchar green\nproperty uchar blue\n";

pub fn encode_ply(cloud: &PointCloud) -> Vec<u8> {
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    let _ = write!(header, "element vertex {}\n{PROPERTIES}end_header\n", cloud.points.len());
    let mut out = header.into_bytes();
    out.reserve(cloud.points.len() * 15);
    for p in &cloud.points {
        for c in p.position {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out.extend_from_slice(&p.color);
    }
    out
}

pub fn decode_ply(bytes: &[u8]) -> Result<PointCloud, String> {
    const END: &[u8] = b"end_header\n";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or("missing end_header")?
        + END.len();
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| "header is not text")?;
    let mut lines = header.lines();
    if lines.next() != Some("ply") || lines.next() != Some("format binary_little_endian 1.0") {
        return Err("expected a binary little-endian PLY".into());
    }
    let count: usize = lines
        .next()
        .and_then(|l| l.strip_prefix("element vertex "))
        .and_then(|n| n.trim().parse().ok())
        .ok_or("expected 'element vertex N'")?;
    let props: String = lines.take_while(|l| *l != "end_header").map(|l| format!("{l}\n")).collect();
    if props != PROPERTIES {
        return Err("unsupported vertex properties".into());
    }
    let body = &bytes[end..];
    if body.len() != count * 15 {
        return Err(format!("expected {} vertex bytes, found {}", count * 15, body.len()));
    }
    let points = body
        .chunks_exact(15)
        .map(|r| {
            let f = |k: usize| f32::from_le_bytes([r[4 * k], r[4 * k + 1], r[4 * k + 2], r[4 * k + 3]]);
            CloudPoint {
                position: [f(0), f(1), f(2)],
                color: [r[12], r[13], r[14]],
            }
        })
        .collect();
    Ok(PointCloud { points })
}

pub fn write_ply(cloud: &PointCloud, path: &Path) -> Result<(), ExportError> {
    Ok(atomic_write(path, &encode_ply(cloud))?)
}

pub fn read_ply(path: &Path) -> Result<PointCloud, ExportError> {
    let bytes = std::fs::read(path).map_err(|e| ExportError::Ply {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    decode_ply(&bytes).map_err(|message| ExportError::Ply {
        path: path.to_path_buf(),
        message,
    })
}

/// 8-bit RGB PNG; channels are clamped to `[0, 1]` and rounded.
pub fn write_png(image: &RgbImage, path: &Path) -> Result<(), ExportError> {
    Ok(atomic_write(path, &encode_rgb_png(image))?)
}
