//! Optimization loop: per-ray color and depth supervision, Adam updates on
//! both networks, and a one-off depth refinement event.

mod checkpoint;
mod log;

pub use checkpoint::{load_model, save_model, ModelCheckpoint};
pub use log::{LogRecord, RefinementEvent, TrainLog};

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Dataset};
use crate::diffcore::{adam_step, AdamConfig, AdamState, DiffError};
use crate::fields::{FieldConfig, FieldGrads, FieldParams};
use crate::raster::DepthMap;
use crate::refinement::{refine_depth, RefineConfig, RefineError};
use crate::rendering::{render_batch, render_frame, Ray, RenderError, SampleMode};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },
    #[error("non-finite gradient at iteration {iteration}")]
    NonFiniteGradient { iteration: usize },
    #[error("refinement needs a tool mask for every frame; frame {0} has none")]
    MissingMask(usize),
    #[error("non-finite loss input")]
    NonFiniteInput,
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Refine(#[from] RefineError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_rays: usize,
    pub samples_per_ray: usize,
    pub refine: RefineConfig,
    pub adam: AdamConfig,
    pub model: FieldConfig,
    pub seed: u64,
    pub color_weight: f64,
    pub depth_weight: f64,
    /// Iterations per log record.
    pub log_interval: usize,
    /// Checkpoint every this many iterations (and always at the end).
    pub checkpoint_interval: Option<usize>,
    /// Rays per gradient chunk. Chunks are evaluated in parallel and summed
    /// in a fixed order, so results do not depend on the thread count.
    pub chunk_rays: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            batch_rays: 512,
            samples_per_ray: 32,
            refine: RefineConfig::default(),
            adam: AdamConfig::default(),
            model: FieldConfig::default(),
            seed: 0,
            color_weight: 1.0,
            depth_weight: 1.0,
            log_interval: 50,
            checkpoint_interval: None,
            chunk_rays: 128,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.iterations == 0 || self.batch_rays == 0 || self.chunk_rays == 0 || self.log_interval == 0 {
            return bad("iterations, batch_rays, chunk_rays and log_interval must be positive".into());
        }
        if self.samples_per_ray < 2 {
            return bad(format!("samples_per_ray must be at least 2, got {}", self.samples_per_ray));
        }
        if self.checkpoint_interval == Some(0) {
            return bad("checkpoint_interval must be positive".into());
        }
        if !(self.color_weight >= 0.0 && self.depth_weight >= 0.0) {
            return bad("loss weights must be non-negative".into());
        }
        let a = &self.adam;
        if !(a.learning_rate > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.epsilon > 0.0) {
            return bad("invalid Adam hyperparameters".into());
        }
        let r = &self.refine;
        if r.enabled {
            if !(0.0..=1.0).contains(&r.alpha) {
                return bad(format!("refine.alpha {} outside [0, 1]", r.alpha));
            }
            if r.trigger_iteration == 0 || r.trigger_iteration > self.iterations {
                return bad(format!(
                    "refine.trigger_iteration {} must lie in 1..={}",
                    r.trigger_iteration, self.iterations
                ));
            }
        }
        let m = &self.model;
        if m.width == 0 || m.depth == 0 {
            return bad("model width and depth must be positive".into());
        }
        Ok(())
    }
}

/// Initial weights for `config`, drawn from a generator seeded with
/// `config.seed` on stream 1 (ray batches use stream 0).
pub fn initial_params(config: &TrainConfig) -> FieldParams {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    FieldParams::init(&config.model, &mut rng)
}

/// One supervised ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RaySample {
    pub ray: Ray,
    pub time: f64,
    pub color: [f64; 3],
    pub depth: f64,
    /// Zero-based frame position.
    pub frame: usize,
    pub u: usize,
    pub v: usize,
}

/// Draws `n` (frame, pixel) pairs uniformly with replacement.
pub fn ray_batch<R: Rng + ?Sized>(dataset: &Dataset, n: usize, rng: &mut R) -> Result<Vec<RaySample>, TrainError> {
    if dataset.is_empty() || dataset.pixels_per_frame() == 0 {
        return Err(DataError::Empty.into());
    }
    let w = dataset.camera.width;
    let total = dataset.len() * dataset.pixels_per_frame();
    (0..n)
        .map(|_| {
            let k = rng.gen_range(0..total);
            let (frame, pixel) = (k / dataset.pixels_per_frame(), k % dataset.pixels_per_frame());
            let (u, v) = (pixel % w, pixel / w);
            let f = &dataset.frames[frame];
            Ok(RaySample {
                ray: dataset.camera.pixel_ray(u as f64, v as f64)?,
                time: f.time,
                color: *f.image.get(u, v),
                depth: *f.depth.get(u, v),
                frame,
                u,
                v,
            })
        })
        .collect()
}

/// Per-ray objective `color_weight·‖Ĉ − C‖² + depth_weight·|D̂ − D|`.
pub fn loss(
    pred_c: [f64; 3],
    pred_d: f64,
    gt_c: [f64; 3],
    gt_d: f64,
    color_weight: f64,
    depth_weight: f64,
) -> Result<f64, TrainError> {
    let (c, d) = loss_terms(pred_c, pred_d, gt_c, gt_d)?;
    Ok(color_weight * c + depth_weight * d)
}

fn loss_terms(pred_c: [f64; 3], pred_d: f64, gt_c: [f64; 3], gt_d: f64) -> Result<(f64, f64), TrainError> {
    let all = pred_c.iter().chain(&gt_c).chain([&pred_d, &gt_d]);
    if all.into_iter().any(|v| !v.is_finite()) {
        return Err(TrainError::NonFiniteInput);
    }
    let c: f64 = (0..3).map(|k| (pred_c[k] - gt_c[k]).powi(2)).sum();
    Ok((c, (pred_d - gt_d).abs()))
}

/// Gradient of [`loss`] with respect to `(pred_c, pred_d)`. The depth term's
/// subgradient at an exact fit is 0.
pub fn loss_gradient(
    pred_c: [f64; 3],
    pred_d: f64,
    gt_c: [f64; 3],
    gt_d: f64,
    color_weight: f64,
    depth_weight: f64,
) -> ([f64; 3], f64) {
    let gc = std::array::from_fn(|k| 2.0 * color_weight * (pred_c[k] - gt_c[k]));
    let diff = pred_d - gt_d;
    let gd = if diff > 0.0 {
        depth_weight
    } else if diff < 0.0 {
        -depth_weight
    } else {
        0.0
    };
    (gc, gd)
}

struct ChunkResult {
    color_loss: f64,
    depth_loss: f64,
    grads: FieldGrads,
}

fn chunk_step(
    params: &FieldParams,
    samples: &[RaySample],
    config: &TrainConfig,
    scale: f64,
    seed: u64,
) -> Result<ChunkResult, TrainError> {
    let rays: Vec<Ray> = samples.iter().map(|s| s.ray).collect();
    let times: Vec<f64> = samples.iter().map(|s| s.time).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (out, tape) = render_batch(params, &rays, &times, config.samples_per_ray, SampleMode::Stratified, &mut rng)?;
    let mut color_loss = 0.0;
    let mut depth_loss = 0.0;
    let mut gc = Vec::with_capacity(samples.len());
    let mut gd = Vec::with_capacity(samples.len());
    for (o, s) in out.iter().zip(samples) {
        let (c, d) = loss_terms(o.color, o.depth, s.color, s.depth).map_err(|_| TrainError::NonFiniteLoss { iteration: 0 })?;
        color_loss += c;
        depth_loss += d;
        let (c_grad, d_grad) = loss_gradient(o.color, o.depth, s.color, s.depth, config.color_weight, config.depth_weight);
        gc.push(c_grad.map(|g| g * scale));
        gd.push(d_grad * scale);
    }
    let mut grads = params.zero_grads();
    tape.backward(&gc, &gd, &mut grads)?;
    Ok(ChunkResult {
        color_loss,
        depth_loss,
        grads,
    })
}

/// Everything `train` produces.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: FieldParams,
    /// Optimizer state for `[theta, phi]`.
    pub adam: [AdamState; 2],
    pub log: TrainLog,
    /// Supervision depths after refinement (unchanged when it is disabled).
    pub depths: Vec<DepthMap>,
}

/// Hooks for progress reporting and periodic checkpoints.
pub trait TrainObserver {
    fn record(&mut self, _record: &LogRecord) {}
    fn checkpoint(&mut self, _iteration: usize, _params: &FieldParams, _adam: &[AdamState; 2]) -> Result<(), TrainError> {
        Ok(())
    }
}

impl TrainObserver for () {}

pub fn train(config: &TrainConfig, dataset: Dataset, params: FieldParams) -> Result<TrainOutcome, TrainError> {
    train_with(config, dataset, params, &mut ())
}

/// Runs `config.iterations` Adam steps. Iteration `k` (1-based) samples a
/// fresh batch, averages the per-ray objective over it and updates both
/// networks; right after iteration `refine.trigger_iteration` every frame is
/// rendered in midpoint mode and its supervision depth refined.
pub fn train_with(
    config: &TrainConfig,
    mut dataset: Dataset,
    mut params: FieldParams,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    dataset.validate()?;
    params.validate().map_err(|e| TrainError::Config(e.to_string()))?;
    if config.refine.enabled {
        if let Some(f) = dataset.frames.iter().find(|f| f.mask.is_none()) {
            return Err(TrainError::MissingMask(f.index));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = [
        AdamState::new(&params.theta, config.adam),
        AdamState::new(&params.phi, config.adam),
    ];
    let mut log = TrainLog::default();
    let start = Instant::now();
    let scale = 1.0 / config.batch_rays as f64;
    let (mut color_acc, mut depth_acc, mut acc_n) = (0.0, 0.0, 0usize);

    for iteration in 1..=config.iterations {
        let batch = ray_batch(&dataset, config.batch_rays, &mut rng)?;
        let chunks: Vec<(&[RaySample], u64)> =
            batch.chunks(config.chunk_rays).map(|c| (c, rng.gen::<u64>())).collect();
        let results: Vec<ChunkResult> = chunks
            .par_iter()
            .map(|(c, seed)| chunk_step(&params, c, config, scale, *seed))
            .collect::<Result<_, _>>()
            .map_err(|e| match e {
                TrainError::NonFiniteLoss { .. } => TrainError::NonFiniteLoss { iteration },
                other => other,
            })?;
        let mut grads = params.zero_grads();
        let (mut color_loss, mut depth_loss) = (0.0, 0.0);
        for r in &results {
            grads.add_assign(&r.grads);
            color_loss += r.color_loss;
            depth_loss += r.depth_loss;
        }
        color_loss *= scale;
        depth_loss *= scale;
        if !(color_loss.is_finite() && depth_loss.is_finite()) {
            return Err(TrainError::NonFiniteLoss { iteration });
        }
        let [theta_state, phi_state] = &mut adam;
        for (p, g, s) in [(&mut params.theta, &grads.theta, theta_state), (&mut params.phi, &grads.phi, phi_state)] {
            adam_step(p, g, s).map_err(|e| match e {
                DiffError::NonFiniteGradient { .. } => TrainError::NonFiniteGradient { iteration },
                other => other.into(),
            })?;
        }

        color_acc += color_loss;
        depth_acc += depth_loss;
        acc_n += 1;
        if iteration % config.log_interval == 0 || iteration == config.iterations {
            let record = LogRecord {
                iteration,
                color_loss: color_acc / acc_n as f64,
                depth_loss: depth_acc / acc_n as f64,
            };
            log.push(record, start.elapsed().as_secs_f64());
            observer.record(&record);
            (color_acc, depth_acc, acc_n) = (0.0, 0.0, 0);
        }

        if config.refine.enabled && iteration == config.refine.trigger_iteration {
            let event = refine_dataset(&params, &mut dataset, config.samples_per_ray, config.refine.alpha, iteration)?;
            log.refinement = Some(event);
        }

        let periodic = config.checkpoint_interval.is_some_and(|n| iteration % n == 0);
        if periodic || iteration == config.iterations {
            observer.checkpoint(iteration, &params, &adam)?;
        }
    }

    Ok(TrainOutcome {
        params,
        adam,
        log,
        depths: dataset.frames.into_iter().map(|f| f.depth).collect(),
    })
}

/// Midpoint-renders every frame's depth and refines its supervision depth
/// in place.
pub fn refine_dataset(
    params: &FieldParams,
    dataset: &mut Dataset,
    samples_per_ray: usize,
    alpha: f64,
    iteration: usize,
) -> Result<RefinementEvent, TrainError> {
    let mut replaced = Vec::with_capacity(dataset.len());
    for f in &mut dataset.frames {
        let mask = f.mask.as_ref().ok_or(TrainError::MissingMask(f.index))?;
        let (_, pred) = render_frame(params, &dataset.camera, f.time, samples_per_ray, SampleMode::Midpoint, 0)?;
        let r = refine_depth(&f.depth, &pred, mask, alpha)?;
        f.depth = r.depth;
        replaced.push((r.replaced_fg, r.replaced_bg));
    }
    Ok(RefinementEvent { iteration, replaced })
}
