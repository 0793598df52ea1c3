//! Image quality metrics and the evaluation report.
//!
//! SSIM is computed on ITU-R BT.601 luma (`0.299 R + 0.587 G + 0.114 B`)
//! with an 11×11 Gaussian window (σ = 1.5, normalized to sum 1),
//! `C1 = 0.01²`, `C2 = 0.03²` for a data range of 1, averaged over every
//! window position that fits entirely inside the image (no padding).

use std::fmt::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::data::Dataset;
use crate::fields::RadianceField;
use crate::raster::{Grid, RgbImage};
use crate::rendering::{render_frame, RenderError, SampleMode};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Column shown for the perceptual metric this crate does not compute.
pub const NOT_COMPUTED: &str = "not computed";

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("image sizes differ: {0:?} vs {1:?}")]
    Dimension((usize, usize), (usize, usize)),
    #[error("image {0:?} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")]
    TooSmall((usize, usize)),
    #[error("max_val must be positive, got {0}")]
    InvalidMax(f64),
    #[error("frame {0} is not in the dataset")]
    UnknownFrame(usize),
    #[error(transparent)]
    Render(#[from] RenderError),
}

fn same_size(a: &RgbImage, b: &RgbImage) -> Result<(), MetricError> {
    if a.same_size(b) {
        Ok(())
    } else {
        Err(MetricError::Dimension((a.width(), a.height()), (b.width(), b.height())))
    }
}

/// `10·log10(max_val² / MSE)` over all channels; identical images give
/// `f64::INFINITY`.
pub fn psnr(a: &RgbImage, b: &RgbImage, max_val: f64) -> Result<f64, MetricError> {
    same_size(a, b)?;
    if !(max_val > 0.0) {
        return Err(MetricError::InvalidMax(max_val));
    }
    let sum: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (0..3).map(|k| (x[k] - y[k]).powi(2)).sum::<f64>())
        .sum();
    let mse = sum / (3 * a.len()).max(1) as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_val * max_val / mse).log10())
}

pub fn luma(img: &RgbImage) -> Grid<f64> {
    img.map(|c| 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2])
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let total: f64 = g.iter().sum();
    g.iter().map(|v| v / total).collect()
}

/// Value of the SSIM formula for given local statistics.
pub fn ssim_from_stats(mu_a: f64, mu_b: f64, var_a: f64, var_b: f64, cov: f64) -> f64 {
    ((2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2))
        / ((mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2))
}

pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64, MetricError> {
    same_size(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(MetricError::TooSmall((w, h)));
    }
    let (ya, yb) = (luma(a), luma(b));
    let g = gaussian_window();
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for v in 0..oh {
        for u in 0..ow {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for j in 0..SSIM_WINDOW {
                for i in 0..SSIM_WINDOW {
                    let wt = g[i] * g[j];
                    let (x, y) = (*ya.get(u + i, v + j), *yb.get(u + i, v + j));
                    ma += wt * x;
                    mb += wt * y;
                    saa += wt * x * x;
                    sbb += wt * y * y;
                    sab += wt * x * y;
                }
            }
            total += ssim_from_stats(ma, mb, saa - ma * ma, sbb - mb * mb, sab - ma * mb);
        }
    }
    Ok(total / (ow * oh) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameMetrics {
    pub frame: usize,
    pub psnr: f64,
    pub ssim: f64,
}

/// Aggregate values are arithmetic means of the per-frame values.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
    pub frames: Vec<FrameMetrics>,
}

fn fmt_metric(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.3}")
    }
}

impl MetricReport {
    pub fn from_frames(frames: Vec<FrameMetrics>) -> Self {
        let n = frames.len().max(1) as f64;
        Self {
            psnr: frames.iter().map(|f| f.psnr).sum::<f64>() / n,
            ssim: frames.iter().map(|f| f.ssim).sum::<f64>() / n,
            frames,
        }
    }

    /// Tab-separated summary row under `label`, then one row per frame.
    /// Values have three decimals; an exact match prints `inf`.
    pub fn to_tsv(&self, label: &str) -> String {
        let header = "PSNR ↑\tSSIM ↑\tLPIPS ↓";
        let mut s = format!("method\t{header}\n");
        let _ = writeln!(s, "{label}\t{}\t{}\t{NOT_COMPUTED}", fmt_metric(self.psnr), fmt_metric(self.ssim));
        let _ = writeln!(s, "\nframe\t{header}");
        for f in &self.frames {
            let _ = writeln!(s, "{}\t{}\t{}\t{NOT_COMPUTED}", f.frame, fmt_metric(f.psnr), fmt_metric(f.ssim));
        }
        s
    }
}

/// Renders each selected frame (all when `subset` is `None`) in midpoint
/// mode and scores it against the dataset image.
pub fn evaluate<F: RadianceField + ?Sized>(
    field: &F,
    dataset: &Dataset,
    m: usize,
    subset: Option<&[usize]>,
) -> Result<MetricReport, MetricError> {
    let indices: Vec<usize> = match subset {
        Some(s) => s.to_vec(),
        None => (1..=dataset.len()).collect(),
    };
    let frames = indices
        .par_iter()
        .map(|&i| {
            let f = dataset
                .frames
                .get(i.wrapping_sub(1))
                .ok_or(MetricError::UnknownFrame(i))?;
            let (img, _) = render_frame(field, &dataset.camera, f.time, m, SampleMode::Midpoint, 0)?;
            Ok(FrameMetrics {
                frame: i,
                psnr: psnr(&img, &f.image, 1.0)?,
                ssim: ssim(&img, &f.image)?,
            })
        })
        .collect::<Result<Vec<_>, MetricError>>()?;
    Ok(MetricReport::from_frames(frames))
}
