//! Synthetic dynamic scene: a static textured plane behind one emissive
//! Gaussian blob that moves along a sinusoidal path.
//!
//! Density is `σ(x, t) = σ_p(x) + σ_b(x, t)` with
//!
//! ```text
//! σ_p(x)    = plane.density · sigmoid((z − plane.depth) / plane.softness)
//! σ_b(x, t) = blob.density · exp(−|x − μ(t)|² / (2 r²))
//! μ(t)      = blob.center + blob.amplitude · sin(2π · blob.cycles · t)
//! ```
//!
//! and color is the density-weighted mix of the plane texture
//! `base + amplitude · (sin(2πf x) + cos(2πf y)) / 2` (clamped to `[0, 1]`)
//! and the blob's constant color. Coordinates are world coordinates.

use std::f64::consts::TAU;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{round_to_f32, DataError, Dataset, Frame, TimeRule};
use crate::fields::{FieldOutput, RadianceField};
use crate::raster::{DepthMap, RgbImage};
use crate::refinement::{replace_count, Mask};
use crate::rendering::{Camera, Ray, IDENTITY_POSE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneSpec {
    pub depth: f64,
    pub density: f64,
    pub softness: f64,
    pub base_color: [f64; 3],
    pub texture_amplitude: [f64; 3],
    /// Texture cycles per scene unit.
    pub texture_frequency: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub center: [f64; 3],
    pub radius: f64,
    pub density: f64,
    pub color: [f64; 3],
    pub amplitude: [f64; 3],
    /// Full oscillations over `t ∈ [0, 1]`.
    pub cycles: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    /// Fraction of each frame's pixels whose depth is perturbed.
    pub fraction: f64,
    pub min_offset: f64,
    pub max_offset: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSceneSpec {
    pub camera: Camera,
    pub frames: usize,
    pub plane: PlaneSpec,
    pub blob: BlobSpec,
    /// Pixels whose blob opacity exceeds this are tool pixels.
    pub mask_threshold: f64,
    pub corruption: CorruptionSpec,
    /// Quadrature samples per ray for the reference renders.
    pub dense_samples: usize,
    pub time_rule: TimeRule,
}

impl Default for SynthSceneSpec {
    fn default() -> Self {
        Self {
            camera: Camera {
                fx: 52.0,
                fy: 52.0,
                cx: 24.0,
                cy: 24.0,
                width: 48,
                height: 48,
                near: 1.0,
                far: 3.0,
                pose: IDENTITY_POSE,
            },
            frames: 16,
            plane: PlaneSpec {
                depth: 2.2,
                density: 12.0,
                softness: 0.08,
                base_color: [0.72, 0.38, 0.34],
                texture_amplitude: [0.22, 0.2, 0.14],
                texture_frequency: 1.2,
            },
            blob: BlobSpec {
                center: [0.0, 0.0, 1.6],
                radius: 0.13,
                density: 30.0,
                color: [0.85, 0.88, 0.92],
                amplitude: [0.25, 0.12, 0.1],
                cycles: 1.0,
            },
            mask_threshold: 0.5,
            corruption: CorruptionSpec {
                fraction: 0.1,
                min_offset: 0.25,
                max_offset: 0.6,
            },
            dense_samples: 2048,
            time_rule: TimeRule::IndexOverCount,
        }
    }
}

pub const MIN_DENSE_SAMPLES: usize = 1024;

/// Number of evenly spaced times at which the blob path is checked.
const PATH_CHECKS: usize = 256;

impl SynthSceneSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::InvalidSpec(m.into()));
        self.camera.validate()?;
        if self.frames == 0 {
            return bad("need at least one frame");
        }
        let p = &self.plane;
        if !(p.density >= 0.0 && p.softness > 0.0 && p.texture_frequency.is_finite()) {
            return bad("plane needs density >= 0 and softness > 0");
        }
        let b = &self.blob;
        if !(b.density >= 0.0 && b.radius > 0.0 && b.cycles.is_finite()) {
            return bad("blob needs density >= 0 and radius > 0");
        }
        let unit = |c: &[f64; 3]| c.iter().all(|v| (0.0..=1.0).contains(v));
        if !unit(&p.base_color) || !unit(&b.color) {
            return bad("colors must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.mask_threshold) {
            return bad("mask threshold outside [0, 1]");
        }
        let c = &self.corruption;
        if !(0.0..=1.0).contains(&c.fraction) || !(c.min_offset > 0.0 && c.min_offset <= c.max_offset) {
            return bad("corruption needs fraction in [0, 1] and 0 < min_offset <= max_offset");
        }
        if self.dense_samples < MIN_DENSE_SAMPLES {
            return bad("dense_samples below 1024");
        }
        if b.density > 0.0 {
            let scene = AnalyticScene::new(self);
            let cam = &self.camera;
            for k in 0..=PATH_CHECKS {
                let t = k as f64 / PATH_CHECKS as f64;
                let mu = scene.blob_center(t);
                let z = cam.world_to_camera(mu)[2];
                let [u, v] = cam.project(mu);
                let inside = z - 3.0 * b.radius >= cam.near
                    && z + 3.0 * b.radius <= cam.far
                    && (0.0..=cam.width as f64).contains(&u)
                    && (0.0..=cam.height as f64).contains(&v);
                if !inside {
                    return Err(DataError::BlobOutsideFrustum(t));
                }
            }
        }
        Ok(())
    }
}

/// Closed-form density and color of a [`SynthSceneSpec`].
#[derive(Clone, Copy, Debug)]
pub struct AnalyticScene<'a> {
    spec: &'a SynthSceneSpec,
}

impl<'a> AnalyticScene<'a> {
    pub fn new(spec: &'a SynthSceneSpec) -> Self {
        Self { spec }
    }

    pub fn blob_center(&self, t: f64) -> [f64; 3] {
        let b = &self.spec.blob;
        let phase = (TAU * b.cycles * t).sin();
        std::array::from_fn(|k| b.center[k] + b.amplitude[k] * phase)
    }

    pub fn plane_density(&self, x: [f64; 3]) -> f64 {
        let p = &self.spec.plane;
        p.density / (1.0 + (-(x[2] - p.depth) / p.softness).exp())
    }

    pub fn plane_color(&self, x: [f64; 3]) -> [f64; 3] {
        let p = &self.spec.plane;
        let f = TAU * p.texture_frequency;
        let pattern = 0.5 * ((f * x[0]).sin() + (f * x[1]).cos());
        std::array::from_fn(|k| (p.base_color[k] + p.texture_amplitude[k] * pattern).clamp(0.0, 1.0))
    }

    pub fn blob_density(&self, x: [f64; 3], center: [f64; 3]) -> f64 {
        let b = &self.spec.blob;
        let d2: f64 = (0..3).map(|k| (x[k] - center[k]).powi(2)).sum();
        b.density * (-d2 / (2.0 * b.radius * b.radius)).exp()
    }

    /// `(σ, c, σ_blob)` at `x` for a blob centered at `center`.
    fn sample(&self, x: [f64; 3], center: [f64; 3]) -> (f64, [f64; 3], f64) {
        let sp = self.plane_density(x);
        let sb = self.blob_density(x, center);
        let cp = self.plane_color(x);
        let total = sp + sb;
        let color = if total > 0.0 {
            let cb = self.spec.blob.color;
            std::array::from_fn(|k| (sp * cp[k] + sb * cb[k]) / total)
        } else {
            cp
        };
        (total, color, sb)
    }

    pub fn density_color(&self, x: [f64; 3], t: f64) -> (f64, [f64; 3]) {
        let (s, c, _) = self.sample(x, self.blob_center(t));
        (s, c)
    }
}

impl RadianceField for AnalyticScene<'_> {
    fn query_batch(&self, points: &[[f64; 3]], _dir: [f64; 3], t: f64) -> Vec<FieldOutput> {
        let center = self.blob_center(t);
        points
            .iter()
            .map(|&x| {
                let (density, color, _) = self.sample(x, center);
                FieldOutput { color, density }
            })
            .collect()
    }
}

/// Brute-force midpoint quadrature along one ray: `m` samples at stratum
/// centers, the first `m − 1` shaded, transmittance as a running product.
/// Also returns the blob's own opacity `1 − exp(−Σ σ_b Δ)`.
fn trace(scene: &AnalyticScene, ray: &Ray, center: [f64; 3], m: usize) -> ([f64; 3], f64, f64) {
    let width = (ray.far - ray.near) / m as f64;
    let mut transmittance = 1.0;
    let mut blob_optical = 0.0;
    let mut color = [0.0; 3];
    let mut depth = 0.0;
    for j in 0..m - 1 {
        let s = ray.near + (j as f64 + 0.5) * width;
        let (sigma, c, sb) = scene.sample(ray.at(s), center);
        let alpha = 1.0 - (-sigma * width).exp();
        let w = transmittance * alpha;
        for k in 0..3 {
            color[k] += w * c[k];
        }
        depth += w * s;
        transmittance *= 1.0 - alpha;
        blob_optical += sb * width;
    }
    (color, depth, 1.0 - (-blob_optical).exp())
}

fn trace_frame(
    spec: &SynthSceneSpec,
    camera: &Camera,
    t: f64,
    m: usize,
) -> Result<(RgbImage, DepthMap, Vec<f64>), DataError> {
    let scene = AnalyticScene::new(spec);
    let center = scene.blob_center(t);
    let (w, h) = (camera.width, camera.height);
    let pixels: Vec<([f64; 3], f64, f64)> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let ray = camera.pixel_ray((i % w) as f64, (i / w) as f64)?;
            Ok(trace(&scene, &ray, center, m))
        })
        .collect::<Result<_, DataError>>()?;
    Ok((
        RgbImage::from_vec(w, h, pixels.iter().map(|p| p.0).collect()),
        DepthMap::from_vec(w, h, pixels.iter().map(|p| p.1).collect()),
        pixels.iter().map(|p| p.2).collect(),
    ))
}

/// Reference image and depth of the analytic scene at time `t`, viewed
/// through `camera`, with `dense_m` midpoint samples per ray.
pub fn oracle_render(
    spec: &SynthSceneSpec,
    camera: &Camera,
    t: f64,
    dense_m: usize,
) -> Result<(RgbImage, DepthMap), DataError> {
    spec.validate()?;
    camera.validate()?;
    if dense_m < MIN_DENSE_SAMPLES {
        return Err(DataError::InvalidSpec(format!("dense_m {dense_m} below {MIN_DENSE_SAMPLES}")));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(DataError::InvalidSpec(format!("time {t} outside [0, 1]")));
    }
    let (img, depth, _) = trace_frame(spec, camera, t, dense_m)?;
    Ok((img, depth))
}

/// A generated dataset together with its uncorrupted depths. Depths are
/// rounded to f32 so they survive the on-disk format unchanged.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthOutput {
    pub dataset: Dataset,
    pub oracle_depths: Vec<DepthMap>,
}

pub fn synth_scene<R: Rng + ?Sized>(spec: &SynthSceneSpec, rng: &mut R) -> Result<SynthOutput, DataError> {
    spec.validate()?;
    let cam = &spec.camera;
    let n_pixels = cam.width * cam.height;
    let corrupt = replace_count(spec.corruption.fraction, n_pixels);
    let mut frames = Vec::with_capacity(spec.frames);
    let mut oracle_depths = Vec::with_capacity(spec.frames);
    for i in 1..=spec.frames {
        let t = spec.time_rule.time(i, spec.frames);
        let (image, depth, opacity) = trace_frame(spec, cam, t, spec.dense_samples)?;
        let exact = round_to_f32(&depth);
        let mut noisy = exact.clone();
        for p in sample(rng, n_pixels, corrupt) {
            let c = &spec.corruption;
            let magnitude = rng.gen_range(c.min_offset..=c.max_offset);
            let d = &mut noisy.as_mut_slice()[p];
            let lowered = *d - magnitude;
            *d = if rng.gen::<bool>() && lowered > 0.0 { lowered } else { *d + magnitude } as f32 as f64;
        }
        let mask = Mask::from_fn(cam.width, cam.height, |u, v| opacity[v * cam.width + u] > spec.mask_threshold);
        frames.push(Frame {
            index: i,
            time: t,
            image,
            depth: noisy,
            mask: Some(mask),
        });
        oracle_depths.push(exact);
    }
    Ok(SynthOutput {
        dataset: Dataset {
            camera: cam.clone(),
            frames,
        },
        oracle_depths,
    })
}
