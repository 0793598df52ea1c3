//! Mask-guided depth refinement.
//!
//! Residuals between the network's depth and the supervision depth are split
//! into tool (foreground) and tissue (background) regions. Within each
//! region the pixels holding the largest `α` fraction of residuals have their
//! supervision depth replaced by the network's prediction.
//!
//! Selection order is ascending residual with row-major pixel index as the
//! secondary key; the last `⌈α·N⌉` entries of that order are replaced, so
//! among equal residuals the higher-index pixels are taken first.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{DepthMap, Grid};

#[derive(Debug, Error, PartialEq)]
pub enum RefineError {
    #[error("size mismatch: {what} is {found:?}, expected {expected:?}")]
    Dimension {
        what: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("alpha {0} outside [0, 1]")]
    InvalidAlpha(f64),
    #[error("{0:?} region is empty: nothing to refine")]
    EmptyRegion(Region),
    #[error("mask value {value} at pixel {index} is not 0 or 1")]
    NonBinaryMask { index: usize, value: u8 },
    #[error("degenerate box ({u0}, {v0}, {u1}, {v1})")]
    DegenerateBox { u0: i64, v0: i64, u1: i64, v1: i64 },
    #[error("box ({u0}, {v0}, {u1}, {v1}) does not intersect a {width}x{height} image")]
    BoxOutside {
        u0: i64,
        v0: i64,
        u1: i64,
        v1: i64,
        width: usize,
        height: usize,
    },
}

/// Binary tool mask: 1 = surgical tool (foreground), 0 = tissue.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask(Grid<u8>);

impl Mask {
    pub fn new(grid: Grid<u8>) -> Result<Self, RefineError> {
        if let Some((index, &value)) = grid.as_slice().iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(RefineError::NonBinaryMask { index, value });
        }
        Ok(Self(grid))
    }

    /// Any nonzero byte counts as tool.
    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Self {
        Self(Grid::from_vec(width, height, bytes.iter().map(|&b| u8::from(b != 0)).collect()))
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        Self(Grid::from_fn(width, height, |u, v| u8::from(f(u, v))))
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self(Grid::filled(width, height, 0))
    }

    pub fn grid(&self) -> &Grid<u8> {
        &self.0
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    #[inline]
    pub fn is_tool_index(&self, index: usize) -> bool {
        self.0.as_slice()[index] == 1
    }

    pub fn count(&self, region: Region) -> usize {
        let tools = self.0.as_slice().iter().filter(|&&v| v == 1).count();
        match region {
            Region::Foreground => tools,
            Region::Background => self.0.len() - tools,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    Foreground,
    Background,
}

impl Region {
    #[inline]
    fn contains(self, mask: &Mask, index: usize) -> bool {
        mask.is_tool_index(index) == (self == Region::Foreground)
    }
}

/// `|pred − ref|` restricted to one region; zero elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualMap {
    pub values: DepthMap,
    pub region: Region,
    mask: Mask,
}

impl ResidualMap {
    pub fn region_len(&self) -> usize {
        self.mask.count(self.region)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub enabled: bool,
    pub alpha: f64,
    /// Iteration after which refinement runs (once).
    pub trigger_iteration: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            alpha: 0.1,
            trigger_iteration: 400,
        }
    }
}

fn check_alpha(alpha: f64) -> Result<(), RefineError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(RefineError::InvalidAlpha(alpha));
    }
    Ok(())
}

fn check_size<T>(what: &'static str, expected: (usize, usize), grid: &Grid<T>) -> Result<(), RefineError> {
    let found = (grid.width(), grid.height());
    if found != expected {
        return Err(RefineError::Dimension { what, expected, found });
    }
    Ok(())
}

/// `⌈α·n⌉`, snapping products that are integral up to rounding.
pub fn replace_count(alpha: f64, n: usize) -> usize {
    let x = alpha * n as f64;
    let r = x.round();
    if (x - r).abs() <= 1e-9 * (n.max(1) as f64) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

pub fn residual_map(
    pred: &DepthMap,
    reference: &DepthMap,
    mask: &Mask,
    region: Region,
) -> Result<ResidualMap, RefineError> {
    let size = (reference.width(), reference.height());
    check_size("prediction", size, pred)?;
    check_size("mask", size, mask.grid())?;
    let values: Vec<f64> = pred
        .as_slice()
        .iter()
        .zip(reference.as_slice())
        .enumerate()
        .map(|(i, (p, r))| if region.contains(mask, i) { (p - r).abs() } else { 0.0 })
        .collect();
    Ok(ResidualMap {
        values: DepthMap::from_vec(size.0, size.1, values),
        region,
        mask: mask.clone(),
    })
}

/// The last-`α` quantile of one region's residuals.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    /// Smallest selected residual; `+∞` when nothing is selected.
    pub threshold: f64,
    /// Selected pixel indices (row-major), in ascending selection order.
    pub pixels: Vec<usize>,
}

pub fn quantile_threshold(residuals: &ResidualMap, alpha: f64) -> Result<Selection, RefineError> {
    check_alpha(alpha)?;
    let values = residuals.values.as_slice();
    let mut members: Vec<usize> = (0..values.len())
        .filter(|&i| residuals.region.contains(&residuals.mask, i))
        .collect();
    if members.is_empty() {
        return Err(RefineError::EmptyRegion(residuals.region));
    }
    members.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let k = replace_count(alpha, members.len());
    let pixels = members.split_off(members.len() - k);
    let threshold = pixels.first().map_or(f64::INFINITY, |&i| values[i]);
    Ok(Selection { threshold, pixels })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Refined {
    pub depth: DepthMap,
    pub replaced_fg: usize,
    pub replaced_bg: usize,
}

/// Replaces each region's last-`α` residual pixels of `reference` with `pred`.
/// Empty regions are skipped.
pub fn refine_depth(
    reference: &DepthMap,
    pred: &DepthMap,
    mask: &Mask,
    alpha: f64,
) -> Result<Refined, RefineError> {
    check_alpha(alpha)?;
    let mut depth = reference.clone();
    let mut counts = [0usize; 2];
    for (slot, region) in [Region::Foreground, Region::Background].into_iter().enumerate() {
        let res = residual_map(pred, reference, mask, region)?;
        let sel = match quantile_threshold(&res, alpha) {
            Ok(s) => s,
            Err(RefineError::EmptyRegion(_)) => continue,
            Err(e) => return Err(e),
        };
        for &i in &sel.pixels {
            depth.as_mut_slice()[i] = pred.as_slice()[i];
        }
        counts[slot] = sel.pixels.len();
    }
    Ok(Refined {
        depth,
        replaced_fg: counts[0],
        replaced_bg: counts[1],
    })
}

/// Pixel box with inclusive corners.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxPrompt {
    pub u0: i64,
    pub v0: i64,
    pub u1: i64,
    pub v1: i64,
}

/// Per-frame box prompt as stored in a prompt file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameBox {
    pub frame: usize,
    #[serde(flatten)]
    pub bounds: BoxPrompt,
}

/// Rasterizes a box prompt (clipped to the image) as a tool mask.
pub fn box_to_mask(b: BoxPrompt, width: usize, height: usize) -> Result<Mask, RefineError> {
    let BoxPrompt { u0, v0, u1, v1 } = b;
    if u0 > u1 || v0 > v1 {
        return Err(RefineError::DegenerateBox { u0, v0, u1, v1 });
    }
    let (w, h) = (width as i64, height as i64);
    if u1 < 0 || v1 < 0 || u0 >= w || v0 >= h {
        return Err(RefineError::BoxOutside {
            u0,
            v0,
            u1,
            v1,
            width,
            height,
        });
    }
    Ok(Mask::from_fn(width, height, |u, v| {
        let (u, v) = (u as i64, v as i64);
        u >= u0 && u <= u1 && v >= v0 && v <= v1
    }))
}
