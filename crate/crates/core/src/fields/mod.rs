//! Scene representation: a time-free canonical radiance field queried
//! through a time-conditioned displacement field.
//!
//! The canonical network maps `[γ(x) | γ(d)]` to four raw outputs: three
//! color logits squashed by a sigmoid and a density logit passed through a
//! softplus. The displacement network maps `[γ(x) | γ(t)]` to an offset `Δx`,
//! and a dynamic query evaluates the canonical field at `x + Δx`.

mod encoding;

pub use encoding::{encode_backward, encode_into, encoded_len, positional_encode};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::{sigmoid, Activation, DiffError, Matrix, MlpShape, ParamStore, Skip, Tape};

/// Tolerance on `‖d‖ = 1` for query directions.
pub const UNIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum FieldError {
    #[error("view direction is not unit length (norm {0})")]
    NonUnitDirection(f64),
    #[error("time {0} outside [0, 1]")]
    TimeOutOfRange(f64),
    #[error("network does not match encoding: {0}")]
    Architecture(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncodingConfig {
    pub levels_position: usize,
    pub levels_direction: usize,
    pub levels_time: usize,
    pub include_input: bool,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self {
            levels_position: 10,
            levels_direction: 4,
            levels_time: 10,
            include_input: true,
        }
    }
}

impl EncodingConfig {
    pub fn position_width(&self) -> usize {
        encoded_len(3, self.levels_position, self.include_input)
    }
    pub fn direction_width(&self) -> usize {
        encoded_len(3, self.levels_direction, self.include_input)
    }
    pub fn time_width(&self) -> usize {
        encoded_len(1, self.levels_time, self.include_input)
    }
}

/// Network architecture shared by the canonical and displacement MLPs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldConfig {
    pub encoding: EncodingConfig,
    /// Hidden units per layer.
    pub width: usize,
    /// Number of hidden layers.
    pub depth: usize,
    /// Hidden layer of the canonical network that also receives `γ(x)`.
    pub skip_layer: Option<usize>,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            encoding: EncodingConfig::default(),
            width: 256,
            depth: 8,
            skip_layer: Some(5),
        }
    }
}

impl FieldConfig {
    pub fn theta_shape(&self) -> MlpShape {
        let enc = &self.encoding;
        MlpShape {
            input: enc.position_width() + enc.direction_width(),
            width: self.width,
            depth: self.depth,
            output: 4,
            hidden_activation: Activation::Relu,
            output_activation: Activation::Identity,
            skip: self
                .skip_layer
                .filter(|&l| l > 0 && l <= self.depth)
                .map(|layer| Skip {
                    layer,
                    input_prefix: enc.position_width(),
                }),
        }
    }

    pub fn phi_shape(&self) -> MlpShape {
        let enc = &self.encoding;
        MlpShape {
            input: enc.position_width() + enc.time_width(),
            width: self.width,
            depth: self.depth,
            output: 3,
            hidden_activation: Activation::Relu,
            output_activation: Activation::Identity,
            skip: None,
        }
    }
}

/// All learnable weights: the canonical network `theta` and the
/// displacement network `phi`.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldParams {
    pub theta: ParamStore,
    pub phi: ParamStore,
    pub encoding: EncodingConfig,
}

/// Gradient buffers shaped like [`FieldParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct FieldGrads {
    pub theta: ParamStore,
    pub phi: ParamStore,
}

impl FieldGrads {
    pub fn add_assign(&mut self, other: &FieldGrads) {
        self.theta.add_assign(&other.theta);
        self.phi.add_assign(&other.phi);
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldOutput {
    pub color: [f64; 3],
    pub density: f64,
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

#[inline]
fn head(raw: &[f64]) -> FieldOutput {
    FieldOutput {
        color: [sigmoid(raw[0]), sigmoid(raw[1]), sigmoid(raw[2])],
        density: softplus(raw[3]),
    }
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn check_direction(d: [f64; 3]) -> Result<(), FieldError> {
    let n = norm(d);
    if (n - 1.0).abs() > UNIT_TOLERANCE {
        return Err(FieldError::NonUnitDirection(n));
    }
    Ok(())
}

fn check_time(t: f64) -> Result<(), FieldError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(FieldError::TimeOutOfRange(t));
    }
    Ok(())
}

/// A volumetric scene that can be queried at a batch of points sharing one
/// view direction and time.
pub trait RadianceField: Sync {
    fn query_batch(&self, points: &[[f64; 3]], dir: [f64; 3], t: f64) -> Vec<FieldOutput>;
}

impl FieldParams {
    pub fn init<R: Rng + ?Sized>(config: &FieldConfig, rng: &mut R) -> Self {
        let theta = ParamStore::init(&config.theta_shape(), rng);
        let phi = ParamStore::init(&config.phi_shape(), rng);
        Self {
            theta,
            phi,
            encoding: config.encoding,
        }
    }

    pub fn zeros(config: &FieldConfig) -> Self {
        Self {
            theta: ParamStore::zeros(&config.theta_shape()),
            phi: ParamStore::zeros(&config.phi_shape()),
            encoding: config.encoding,
        }
    }

    /// Checks that the networks' input and output widths fit the encoding.
    pub fn validate(&self) -> Result<(), FieldError> {
        let e = &self.encoding;
        let want_theta = e.position_width() + e.direction_width();
        let want_phi = e.position_width() + e.time_width();
        if self.theta.input_width() != want_theta || self.theta.output_width() != 4 {
            return Err(FieldError::Architecture(format!(
                "canonical network is {}→{}, expected {want_theta}→4",
                self.theta.input_width(),
                self.theta.output_width()
            )));
        }
        if self.phi.input_width() != want_phi || self.phi.output_width() != 3 {
            return Err(FieldError::Architecture(format!(
                "displacement network is {}→{}, expected {want_phi}→3",
                self.phi.input_width(),
                self.phi.output_width()
            )));
        }
        Ok(())
    }

    pub fn zero_grads(&self) -> FieldGrads {
        FieldGrads {
            theta: self.theta.zeros_like(),
            phi: self.phi.zeros_like(),
        }
    }

    fn theta_input(&self, points: &[[f64; 3]], dirs: &[[f64; 3]]) -> Matrix {
        let e = &self.encoding;
        let (pw, dw) = (e.position_width(), e.direction_width());
        let mut m = Matrix::zeros(points.len(), pw + dw);
        for (r, (p, d)) in points.iter().zip(dirs).enumerate() {
            let row = m.row_mut(r);
            encode_into(p, e.levels_position, e.include_input, &mut row[..pw]);
            encode_into(d, e.levels_direction, e.include_input, &mut row[pw..]);
        }
        m
    }

    fn phi_input(&self, points: &[[f64; 3]], times: &[f64]) -> Matrix {
        let e = &self.encoding;
        let (pw, tw) = (e.position_width(), e.time_width());
        let mut m = Matrix::zeros(points.len(), pw + tw);
        for (r, (p, &t)) in points.iter().zip(times).enumerate() {
            let row = m.row_mut(r);
            encode_into(p, e.levels_position, e.include_input, &mut row[..pw]);
            encode_into(&[t], e.levels_time, e.include_input, &mut row[pw..]);
        }
        m
    }

    /// F_θ(x, d): color and density of the canonical field.
    pub fn canonical_query(&self, x: [f64; 3], d: [f64; 3]) -> Result<FieldOutput, FieldError> {
        check_direction(d)?;
        let raw = self.theta.infer_batch(&self.theta_input(&[x], &[d]))?;
        Ok(head(raw.row(0)))
    }

    /// G_φ(x, t): offset from `x` at time `t` to its canonical position.
    pub fn displacement_query(&self, x: [f64; 3], t: f64) -> Result<[f64; 3], FieldError> {
        check_time(t)?;
        let out = self.phi.infer_batch(&self.phi_input(&[x], &[t]))?;
        let r = out.row(0);
        Ok([r[0], r[1], r[2]])
    }

    /// F_θ(x + G_φ(x, t), d).
    pub fn dynamic_query(&self, x: [f64; 3], d: [f64; 3], t: f64) -> Result<FieldOutput, FieldError> {
        check_direction(d)?;
        let dx = self.displacement_query(x, t)?;
        self.canonical_query([x[0] + dx[0], x[1] + dx[1], x[2] + dx[2]], d)
    }

    /// Batched dynamic query without a tape; one time per point.
    pub fn dynamic_query_batch(
        &self,
        points: &[[f64; 3]],
        dirs: &[[f64; 3]],
        times: &[f64],
    ) -> Result<Vec<FieldOutput>, FieldError> {
        let disp = self.phi.infer_batch(&self.phi_input(points, times))?;
        let warped = warp(points, &disp);
        let raw = self.theta.infer_batch(&self.theta_input(&warped, dirs))?;
        Ok((0..raw.rows()).map(|r| head(raw.row(r))).collect())
    }

    /// Batched dynamic query recording everything needed for the reverse sweep.
    pub fn dynamic_forward(
        &self,
        points: &[[f64; 3]],
        dirs: &[[f64; 3]],
        times: &[f64],
    ) -> Result<(Vec<FieldOutput>, DynamicTape<'_>), FieldError> {
        let (disp, phi_tape) = self.phi.forward_batch(&self.phi_input(points, times))?;
        let warped = warp(points, &disp);
        let (raw, theta_tape) = self.theta.forward_batch(&self.theta_input(&warped, dirs))?;
        let out = (0..raw.rows()).map(|r| head(raw.row(r))).collect();
        Ok((
            out,
            DynamicTape {
                params: self,
                phi_tape,
                theta_tape,
                raw,
            },
        ))
    }
}

fn warp(points: &[[f64; 3]], disp: &Matrix) -> Vec<[f64; 3]> {
    points
        .iter()
        .enumerate()
        .map(|(r, p)| {
            let d = disp.row(r);
            [p[0] + d[0], p[1] + d[1], p[2] + d[2]]
        })
        .collect()
}

impl RadianceField for FieldParams {
    fn query_batch(&self, points: &[[f64; 3]], dir: [f64; 3], t: f64) -> Vec<FieldOutput> {
        let dirs = vec![dir; points.len()];
        let times = vec![t; points.len()];
        self.dynamic_query_batch(points, &dirs, &times)
            .expect("validated field parameters")
    }
}

/// Recorded batched dynamic query.
pub struct DynamicTape<'a> {
    params: &'a FieldParams,
    phi_tape: Tape<'a>,
    theta_tape: Tape<'a>,
    raw: Matrix,
}

impl DynamicTape<'_> {
    /// Accumulates into `grads` the gradient of `Σ ⟨color_grad, c⟩ + density_grad·σ`.
    pub fn backward(
        &self,
        color_grad: &[[f64; 3]],
        density_grad: &[f64],
        grads: &mut FieldGrads,
    ) -> Result<(), FieldError> {
        let n = self.raw.rows();
        let mut g_raw = Matrix::zeros(n, 4);
        for r in 0..n {
            let raw = self.raw.row(r);
            let g = g_raw.row_mut(r);
            for c in 0..3 {
                let s = sigmoid(raw[c]);
                g[c] = color_grad[r][c] * s * (1.0 - s);
            }
            g[3] = density_grad[r] * sigmoid(raw[3]);
        }
        let g_in = self
            .theta_tape
            .backward_into(&g_raw, &mut grads.theta, true)?
            .expect("input gradient requested");

        let e = &self.params.encoding;
        let pw = e.position_width();
        let theta_in = self.theta_tape.input();
        let mut g_disp = Matrix::zeros(n, 3);
        for r in 0..n {
            encode_backward(
                &theta_in.row(r)[..pw],
                &g_in.row(r)[..pw],
                3,
                e.levels_position,
                e.include_input,
                g_disp.row_mut(r),
            );
        }
        self.phi_tape.backward_into(&g_disp, &mut grads.phi, false)?;
        Ok(())
    }

    /// ReLU sign pattern of both networks.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut p = self.phi_tape.relu_pattern();
        p.extend(self.theta_tape.relu_pattern());
        p
    }
}
