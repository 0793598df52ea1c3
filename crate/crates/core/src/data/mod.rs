//! Dataset layout, file codecs and the synthetic scene generator.
//!
//! A dataset directory holds
//!
//! ```text
//! camera.json          camera intrinsics, bounds and pose
//! images/000001.png    8-bit RGB frames, numbered 1..T
//! depth/000001.pfm     32-bit float depth (single channel)
//! masks/000001.png     8-bit tool masks, nonzero = tool (optional)
//! ```

mod pfm;
mod synth;

pub use pfm::{decode_pfm, encode_pfm, FloatMap};
pub use synth::{
    oracle_render, synth_scene, AnalyticScene, BlobSpec, CorruptionSpec, PlaneSpec, SynthOutput, SynthSceneSpec,
};

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::ImageFormat;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{DepthMap, RgbImage};
use crate::refinement::Mask;
use crate::rendering::{Camera, RenderError};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("frame {frame}: missing {kind} file {path}")]
    MissingFile {
        frame: usize,
        kind: &'static str,
        path: PathBuf,
    },
    #[error("missing {0}")]
    MissingPath(PathBuf),
    #[error("frame {frame}: {kind} is {found:?}, camera is {expected:?}")]
    Dimension {
        frame: usize,
        kind: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("frame indices are not contiguous from 1: expected {expected}, found {found}")]
    NonContiguous { expected: usize, found: usize },
    #[error("dataset has no frames")]
    Empty,
    #[error("invalid scene: {0}")]
    InvalidSpec(String),
    #[error("blob leaves the view frustum at t = {0}")]
    BlobOutsideFrustum(f64),
    #[error("bad file format: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Render(#[from] RenderError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// How frame index `i` of `T` maps to a time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeRule {
    /// `t = i / T`; the first frame sits at `1/T`.
    #[default]
    IndexOverCount,
    /// `t = (i − 1) / (T − 1)`, spanning `[0, 1]`; a single frame gets 0.
    Span,
}

impl TimeRule {
    pub fn time(self, index: usize, count: usize) -> f64 {
        match self {
            TimeRule::IndexOverCount => index as f64 / count as f64,
            TimeRule::Span if count <= 1 => 0.0,
            TimeRule::Span => (index - 1) as f64 / (count - 1) as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    /// 1-based position in the sequence.
    pub index: usize,
    pub time: f64,
    pub image: RgbImage,
    pub depth: DepthMap,
    pub mask: Option<Mask>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub camera: Camera,
    pub frames: Vec<Frame>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn pixels_per_frame(&self) -> usize {
        self.camera.width * self.camera.height
    }

    pub fn has_masks(&self) -> bool {
        !self.frames.is_empty() && self.frames.iter().all(|f| f.mask.is_some())
    }

    pub fn validate(&self) -> Result<(), DataError> {
        self.camera.validate()?;
        if self.frames.is_empty() {
            return Err(DataError::Empty);
        }
        let expected = (self.camera.width, self.camera.height);
        for (k, f) in self.frames.iter().enumerate() {
            if f.index != k + 1 {
                return Err(DataError::NonContiguous {
                    expected: k + 1,
                    found: f.index,
                });
            }
            let check = |kind, found: (usize, usize)| {
                if found != expected {
                    Err(DataError::Dimension {
                        frame: f.index,
                        kind,
                        expected,
                        found,
                    })
                } else {
                    Ok(())
                }
            };
            check("image", (f.image.width(), f.image.height()))?;
            check("depth", (f.depth.width(), f.depth.height()))?;
            if let Some(m) = &f.mask {
                check("mask", (m.width(), m.height()))?;
            }
        }
        Ok(())
    }

    /// Reassigns frame times under `rule`.
    pub fn retime(&mut self, rule: TimeRule) {
        let n = self.frames.len();
        for f in &mut self.frames {
            f.time = rule.time(f.index, n);
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadOptions {
    pub time_rule: TimeRule,
    /// Fail when any frame lacks a mask. Otherwise a missing `masks/`
    /// directory leaves every frame without one.
    pub require_masks: bool,
}

pub fn frame_name(index: usize, ext: &str) -> String {
    format!("{index:06}.{ext}")
}

fn frame_indices(dir: &Path) -> Result<Vec<usize>, DataError> {
    let entries = fs::read_dir(dir).map_err(|_| DataError::MissingPath(dir.to_path_buf()))?;
    let mut indices = Vec::new();
    for e in entries {
        let e = e.map_err(io_err(dir))?;
        let name = e.file_name();
        let name = name.to_string_lossy();
        if let Some(stem) = name.strip_suffix(".png") {
            if let Ok(i) = stem.parse::<usize>() {
                indices.push(i);
            }
        }
    }
    indices.sort_unstable();
    Ok(indices)
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(io_err(path))
}

pub fn decode_rgb_png(bytes: &[u8]) -> Result<RgbImage, DataError> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| DataError::Format(e.to_string()))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img
        .pixels()
        .map(|p| [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0])
        .collect();
    Ok(RgbImage::from_vec(w as usize, h as usize, data))
}

/// 8-bit quantization: `round(255 · clamp(c, 0, 1))`.
pub fn quantize(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_rgb_png(img: &RgbImage) -> Vec<u8> {
    let raw: Vec<u8> = img.as_slice().iter().flat_map(|c| c.map(quantize)).collect();
    encode_png(img.width(), img.height(), raw, image::ColorType::Rgb8)
}

pub fn decode_mask_png(bytes: &[u8]) -> Result<Mask, DataError> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| DataError::Format(e.to_string()))?
        .to_luma8();
    let (w, h) = img.dimensions();
    Ok(Mask::from_bytes(w as usize, h as usize, img.as_raw()))
}

pub fn encode_mask_png(mask: &Mask) -> Vec<u8> {
    let raw: Vec<u8> = mask.grid().as_slice().iter().map(|&v| v * 255).collect();
    encode_png(mask.width(), mask.height(), raw, image::ColorType::L8)
}

fn encode_png(width: usize, height: usize, raw: Vec<u8>, color: image::ColorType) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    image::write_buffer_with_format(&mut out, &raw, width as u32, height as u32, color, ImageFormat::Png)
        .expect("in-memory PNG encoding");
    out.into_inner()
}

/// Depth maps are stored as f32; values are rounded on write.
pub fn encode_depth_pfm(depth: &DepthMap) -> Vec<u8> {
    encode_pfm(&FloatMap {
        width: depth.width(),
        height: depth.height(),
        channels: 1,
        data: depth.as_slice().iter().map(|&d| d as f32).collect(),
    })
}

pub fn decode_depth_pfm(bytes: &[u8]) -> Result<DepthMap, DataError> {
    let map = decode_pfm(bytes)?;
    if map.channels != 1 {
        return Err(DataError::Format("depth must be a single-channel Pf map".into()));
    }
    Ok(DepthMap::from_vec(map.width, map.height, map.data.into_iter().map(f64::from).collect()))
}

pub fn read_depth(path: &Path) -> Result<DepthMap, DataError> {
    decode_depth_pfm(&read_file(path)?)
}

pub fn load_camera(path: &Path) -> Result<Camera, DataError> {
    let text = fs::read_to_string(path).map_err(|_| DataError::MissingPath(path.to_path_buf()))?;
    let camera: Camera = serde_json::from_str(&text).map_err(|e| DataError::Format(format!("{}: {e}", path.display())))?;
    camera.validate()?;
    Ok(camera)
}

pub fn load_dataset(dir: &Path, options: &LoadOptions) -> Result<Dataset, DataError> {
    let camera = load_camera(&dir.join("camera.json"))?;
    let indices = frame_indices(&dir.join("images"))?;
    if indices.is_empty() {
        return Err(DataError::Empty);
    }
    for (k, &i) in indices.iter().enumerate() {
        if i != k + 1 {
            return Err(DataError::NonContiguous { expected: k + 1, found: i });
        }
    }
    let count = indices.len();
    let mask_dir = dir.join("masks");
    let masks_present = options.require_masks || mask_dir.is_dir();
    let expected = (camera.width, camera.height);
    let mut frames = Vec::with_capacity(count);
    for i in 1..=count {
        let read = |sub: &str, ext: &str, kind: &'static str| {
            let path = dir.join(sub).join(frame_name(i, ext));
            if !path.is_file() {
                return Err(DataError::MissingFile { frame: i, kind, path });
            }
            read_file(&path)
        };
        let sized = |kind, found: (usize, usize)| {
            if found == expected {
                Ok(())
            } else {
                Err(DataError::Dimension {
                    frame: i,
                    kind,
                    expected,
                    found,
                })
            }
        };
        let image = decode_rgb_png(&read("images", "png", "image")?)?;
        sized("image", (image.width(), image.height()))?;
        let depth = decode_depth_pfm(&read("depth", "pfm", "depth")?)?;
        sized("depth", (depth.width(), depth.height()))?;
        let mask = if masks_present {
            let m = decode_mask_png(&read("masks", "png", "mask")?)?;
            sized("mask", (m.width(), m.height()))?;
            Some(m)
        } else {
            None
        };
        frames.push(Frame {
            index: i,
            time: options.time_rule.time(i, count),
            image,
            depth,
            mask,
        });
    }
    Ok(Dataset { camera, frames })
}

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    let tmp = temp_sibling(path);
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        io_err(path)(e)
    })
}

fn temp_sibling(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp-{}", std::process::id()))
}

/// Populates a fresh sibling directory with `fill`, then swaps it in for
/// `dir`, replacing any previous contents. Nothing appears at `dir` if
/// `fill` fails.
pub fn write_dir_atomically(
    dir: &Path,
    fill: impl FnOnce(&Path) -> Result<(), DataError>,
) -> Result<(), DataError> {
    if let Some(parent) = dir.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let tmp = temp_sibling(dir);
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(io_err(&tmp))?;
    }
    fs::create_dir(&tmp).map_err(io_err(&tmp))?;
    if let Err(e) = fill(&tmp) {
        let _ = fs::remove_dir_all(&tmp);
        return Err(e);
    }
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::rename(&tmp, dir).map_err(io_err(dir))
}

/// Writes the dataset files into an existing directory.
pub fn write_dataset_into(dataset: &Dataset, dir: &Path) -> Result<(), DataError> {
    let camera = serde_json::to_string_pretty(&dataset.camera).expect("camera serializes");
    fs::write(dir.join("camera.json"), camera).map_err(io_err(dir))?;
    let with_masks = dataset.frames.iter().any(|f| f.mask.is_some());
    let subdirs: &[&str] = if with_masks { &["images", "depth", "masks"] } else { &["images", "depth"] };
    for sub in subdirs {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(io_err(&p))?;
    }
    for f in &dataset.frames {
        let put = |sub: &str, ext: &str, bytes: Vec<u8>| {
            let p = dir.join(sub).join(frame_name(f.index, ext));
            fs::write(&p, bytes).map_err(io_err(&p))
        };
        put("images", "png", encode_rgb_png(&f.image))?;
        put("depth", "pfm", encode_depth_pfm(&f.depth))?;
        if let Some(m) = &f.mask {
            put("masks", "png", encode_mask_png(m))?;
        }
    }
    Ok(())
}

pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<(), DataError> {
    dataset.validate()?;
    write_dir_atomically(dir, |tmp| write_dataset_into(dataset, tmp))
}

/// Reads `dir/%06d.pfm` for frames `1..=count`.
pub fn load_depth_dir(dir: &Path, count: usize) -> Result<Vec<DepthMap>, DataError> {
    (1..=count)
        .map(|i| {
            let path = dir.join(frame_name(i, "pfm"));
            if !path.is_file() {
                return Err(DataError::MissingFile { frame: i, kind: "depth", path });
            }
            read_depth(&path)
        })
        .collect()
}

pub fn write_depth_dir(dir: &Path, depths: &[DepthMap]) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (k, d) in depths.iter().enumerate() {
        let p = dir.join(frame_name(k + 1, "pfm"));
        fs::write(&p, encode_depth_pfm(d)).map_err(io_err(&p))?;
    }
    Ok(())
}

/// Depth map with every value rounded to the nearest f32, i.e. exactly what
/// survives a PFM round trip.
pub fn round_to_f32(depth: &DepthMap) -> DepthMap {
    depth.map(|&d| d as f32 as f64)
}
