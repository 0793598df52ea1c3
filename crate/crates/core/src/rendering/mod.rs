//! Pinhole ray generation, stratified sampling, and the emission-absorption
//! quadrature that turns field samples into a pixel color and depth.

mod batch;
mod camera;
mod quadrature;

pub use batch::{render_batch, RayOutput, RenderTape};
pub use camera::{Camera, Ray, IDENTITY_POSE};
pub use quadrature::{render_color_depth, render_weights, stratified_samples, SampleMode};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::fields::{FieldError, RadianceField};
use crate::raster::{DepthMap, RgbImage};

pub const DEFAULT_SAMPLES_PER_RAY: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum RenderError {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("pixel ({u}, {v}) outside the image")]
    PixelOutOfBounds { u: f64, v: f64 },
    #[error("need at least 2 samples per ray, got {0}")]
    TooFewSamples(usize),
    #[error("invalid ray bounds near {near}, far {far}")]
    InvalidBounds { near: f64, far: f64 },
    #[error("negative density {value} at sample {index}")]
    NegativeDensity { index: usize, value: f64 },
    #[error("non-positive interval {value} at sample {index}")]
    NonPositiveDelta { index: usize, value: f64 },
    #[error("{what}: expected length {expected}, found {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("time {0} outside [0, 1]")]
    TimeOutOfRange(f64),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Full per-ray quadrature record.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderSample {
    /// All `m` ray parameters, ascending.
    pub s_values: Vec<f64>,
    /// Densities at the first `m − 1` samples.
    pub densities: Vec<f64>,
    pub colors: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub color: [f64; 3],
    pub depth: f64,
}

/// Renders one ray through `field` at time `t` with `m` samples.
pub fn render_ray<F: RadianceField + ?Sized, R: Rng + ?Sized>(
    field: &F,
    ray: &Ray,
    t: f64,
    m: usize,
    mode: SampleMode,
    rng: &mut R,
) -> Result<RenderSample, RenderError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(RenderError::TimeOutOfRange(t));
    }
    let s_values = stratified_samples(ray.near, ray.far, m, mode, rng)?;
    Ok(shade(field, ray, t, s_values))
}

fn shade<F: RadianceField + ?Sized>(field: &F, ray: &Ray, t: f64, s_values: Vec<f64>) -> RenderSample {
    let n = s_values.len() - 1;
    let points: Vec<[f64; 3]> = s_values[..n].iter().map(|&s| ray.at(s)).collect();
    let deltas: Vec<f64> = s_values.windows(2).map(|w| w[1] - w[0]).collect();
    let out = field.query_batch(&points, ray.direction, t);
    let densities: Vec<f64> = out.iter().map(|o| o.density).collect();
    let colors: Vec<[f64; 3]> = out.iter().map(|o| o.color).collect();
    let mut weights = vec![0.0; n];
    quadrature::weights_into(&densities, &deltas, &mut weights, None);
    let (color, depth) = quadrature::composite(&weights, &colors, &s_values);
    RenderSample {
        s_values,
        densities,
        colors,
        weights,
        color,
        depth,
    }
}

/// Renders every pixel (row-major). Stratified mode seeds one generator per
/// row from `seed`, so output never depends on the thread count.
pub fn render_frame<F: RadianceField + ?Sized>(
    field: &F,
    camera: &Camera,
    t: f64,
    m: usize,
    mode: SampleMode,
    seed: u64,
) -> Result<(RgbImage, DepthMap), RenderError> {
    camera.validate()?;
    if !(0.0..=1.0).contains(&t) {
        return Err(RenderError::TimeOutOfRange(t));
    }
    if m < 2 {
        return Err(RenderError::TooFewSamples(m));
    }
    let (w, h) = (camera.width, camera.height);
    let rows: Vec<Vec<([f64; 3], f64)>> = (0..h)
        .into_par_iter()
        .map(|v| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (v as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            (0..w)
                .map(|u| {
                    let ray = camera.pixel_ray(u as f64, v as f64)?;
                    let s = render_ray(field, &ray, t, m, mode, &mut rng)?;
                    Ok((s.color, s.depth))
                })
                .collect::<Result<Vec<_>, RenderError>>()
        })
        .collect::<Result<_, _>>()?;
    let flat: Vec<([f64; 3], f64)> = rows.into_iter().flatten().collect();
    let image = RgbImage::from_vec(w, h, flat.iter().map(|p| p.0).collect());
    let depth = DepthMap::from_vec(w, h, flat.iter().map(|p| p.1).collect());
    Ok((image, depth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{EncodingConfig, FieldConfig, FieldOutput, FieldParams};

    struct Vacuum;
    impl RadianceField for Vacuum {
        fn query_batch(&self, points: &[[f64; 3]], _: [f64; 3], _: f64) -> Vec<FieldOutput> {
            vec![
                FieldOutput {
                    color: [0.7, 0.2, 0.9],
                    density: 0.0
                };
                points.len()
            ]
        }
    }

    /// Opaque half-space `z ≥ z0`, red.
    struct Wall(f64);
    impl RadianceField for Wall {
        fn query_batch(&self, points: &[[f64; 3]], _: [f64; 3], _: f64) -> Vec<FieldOutput> {
            points
                .iter()
                .map(|p| FieldOutput {
                    color: [1.0, 0.0, 0.0],
                    density: if p[2] >= self.0 { 1e4 } else { 0.0 },
                })
                .collect()
        }
    }

    fn cam(w: usize, h: usize) -> Camera {
        Camera {
            fx: 2.0 * w as f64,
            fy: 2.0 * w as f64,
            cx: w as f64 / 2.0,
            cy: h as f64 / 2.0,
            width: w,
            height: h,
            near: 1.0,
            far: 2.0,
            pose: IDENTITY_POSE,
        }
    }

    #[test]
    fn vacuum_frame_is_black() {
        let (img, depth) = render_frame(&Vacuum, &cam(2, 2), 0.5, 8, SampleMode::Midpoint, 0).unwrap();
        assert!(img.as_slice().iter().all(|c| *c == [0.0; 3]));
        assert!(depth.as_slice().iter().all(|d| *d == 0.0));
    }

    #[test]
    fn wall_depth_within_one_interval() {
        let m = 64;
        let (img, depth) = render_frame(&Wall(1.5), &cam(4, 4), 0.0, m, SampleMode::Midpoint, 0).unwrap();
        let step = 1.0 / m as f64;
        for (c, d) in img.as_slice().iter().zip(depth.as_slice()) {
            assert!((c[0] - 1.0).abs() < 1e-8);
            assert!((d - 1.5).abs() <= step, "depth {d}");
        }
    }

    #[test]
    fn stratified_frame_is_seeded() {
        let c = cam(3, 2);
        let a = render_frame(&Wall(1.3), &c, 0.0, 16, SampleMode::Stratified, 4).unwrap();
        let b = render_frame(&Wall(1.3), &c, 0.0, 16, SampleMode::Stratified, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn deterministic_neural_frame() {
        let cfg = FieldConfig {
            encoding: EncodingConfig {
                levels_position: 2,
                levels_direction: 1,
                levels_time: 1,
                include_input: true,
            },
            width: 8,
            depth: 2,
            skip_layer: None,
        };
        let p = FieldParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(3));
        let a = render_frame(&p, &cam(4, 3), 0.25, 8, SampleMode::Midpoint, 0).unwrap();
        let b = render_frame(&p, &cam(4, 3), 0.25, 8, SampleMode::Midpoint, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn low_density_field_renders_dark() {
        let cfg = FieldConfig {
            encoding: EncodingConfig {
                levels_position: 2,
                levels_direction: 1,
                levels_time: 1,
                include_input: true,
            },
            width: 8,
            depth: 2,
            skip_layer: None,
        };
        let mut p = FieldParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(3));
        let last = p.theta.layers().len() - 1;
        let l = p.theta.layer_mut(last);
        for i in 0..l.fan_in {
            l.weight[3 * l.fan_in + i] = 0.0;
        }
        l.bias[3] = -40.0;
        let ray = cam(4, 4).pixel_ray(1.0, 2.0).unwrap();
        let s = render_ray(&p, &ray, 0.3, 32, SampleMode::Midpoint, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(s.color.iter().all(|c| *c < 1e-12));
    }

    #[test]
    fn batch_matches_single_ray_render() {
        let cfg = FieldConfig {
            encoding: EncodingConfig {
                levels_position: 3,
                levels_direction: 1,
                levels_time: 2,
                include_input: true,
            },
            width: 12,
            depth: 3,
            skip_layer: Some(2),
        };
        let p = FieldParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(8));
        let c = cam(4, 4);
        let rays = [c.pixel_ray(0.0, 1.0).unwrap(), c.pixel_ray(3.0, 2.0).unwrap()];
        let times = [0.2, 0.9];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (out, _) = render_batch(&p, &rays, &times, 16, SampleMode::Midpoint, &mut rng).unwrap();
        for (i, ray) in rays.iter().enumerate() {
            let s = render_ray(&p, ray, times[i], 16, SampleMode::Midpoint, &mut rng).unwrap();
            assert!((s.depth - out[i].depth).abs() < 1e-13);
            for k in 0..3 {
                assert!((s.color[k] - out[i].color[k]).abs() < 1e-13);
            }
        }
    }
}
