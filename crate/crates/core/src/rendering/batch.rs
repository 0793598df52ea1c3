use rand::Rng;

use super::camera::Ray;
use super::quadrature::{composite, fill_samples, weights_into, SampleMode};
use super::RenderError;
use crate::fields::{DynamicTape, FieldGrads, FieldParams};

/// Rendered color and depth of one ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayOutput {
    pub color: [f64; 3],
    pub depth: f64,
}

/// Forward record of a differentiable batch render.
pub struct RenderTape<'a> {
    field: DynamicTape<'a>,
    rays: usize,
    per_ray: usize,
    s_values: Vec<f64>,
    deltas: Vec<f64>,
    colors: Vec<[f64; 3]>,
    weights: Vec<f64>,
    trans_after: Vec<f64>,
}

/// Renders every ray through the dynamic field at its own time, keeping
/// what the reverse sweep needs. Each ray takes `m` samples; the first
/// `m − 1` are shaded.
pub fn render_batch<'a, R: Rng + ?Sized>(
    params: &'a FieldParams,
    rays: &[Ray],
    times: &[f64],
    m: usize,
    mode: SampleMode,
    rng: &mut R,
) -> Result<(Vec<RayOutput>, RenderTape<'a>), RenderError> {
    if rays.len() != times.len() {
        return Err(RenderError::LengthMismatch {
            what: "times",
            expected: rays.len(),
            found: times.len(),
        });
    }
    if let Some(&t) = times.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(RenderError::TimeOutOfRange(t));
    }
    if m < 2 {
        return Err(RenderError::TooFewSamples(m));
    }
    let n = m - 1;
    let mut s_values = vec![0.0; rays.len() * m];
    let mut deltas = Vec::with_capacity(rays.len() * n);
    let mut points = Vec::with_capacity(rays.len() * n);
    let mut dirs = Vec::with_capacity(rays.len() * n);
    let mut point_times = Vec::with_capacity(rays.len() * n);
    for (r, (ray, &t)) in rays.iter().zip(times).enumerate() {
        let s = &mut s_values[r * m..(r + 1) * m];
        fill_samples(ray.near, ray.far, mode, rng, s)?;
        for j in 0..n {
            points.push(ray.at(s[j]));
            deltas.push(s[j + 1] - s[j]);
        }
        dirs.extend(std::iter::repeat_n(ray.direction, n));
        point_times.extend(std::iter::repeat_n(t, n));
    }
    let (field_out, field_tape) = params.dynamic_forward(&points, &dirs, &point_times)?;

    let total = rays.len() * n;
    let densities: Vec<f64> = field_out.iter().map(|o| o.density).collect();
    let colors: Vec<[f64; 3]> = field_out.iter().map(|o| o.color).collect();
    let mut weights = vec![0.0; total];
    let mut trans_after = vec![0.0; total];
    let mut out = Vec::with_capacity(rays.len());
    for r in 0..rays.len() {
        let span = r * n..(r + 1) * n;
        weights_into(
            &densities[span.clone()],
            &deltas[span.clone()],
            &mut weights[span.clone()],
            Some(&mut trans_after[span.clone()]),
        );
        let (color, depth) = composite(&weights[span.clone()], &colors[span], &s_values[r * m..(r + 1) * m]);
        out.push(RayOutput { color, depth });
    }
    Ok((
        out,
        RenderTape {
            field: field_tape,
            rays: rays.len(),
            per_ray: n,
            s_values,
            deltas,
            colors,
            weights,
            trans_after,
        },
    ))
}

impl RenderTape<'_> {
    /// Accumulates into `grads` the gradient of
    /// `Σ_r ⟨color_grad_r, Ĉ_r⟩ + depth_grad_r · D̂_r`.
    pub fn backward(
        &self,
        color_grad: &[[f64; 3]],
        depth_grad: &[f64],
        grads: &mut FieldGrads,
    ) -> Result<(), RenderError> {
        if color_grad.len() != self.rays || depth_grad.len() != self.rays {
            return Err(RenderError::LengthMismatch {
                what: "output gradient",
                expected: self.rays,
                found: color_grad.len().min(depth_grad.len()),
            });
        }
        let n = self.per_ray;
        let m = n + 1;
        let total = self.rays * n;
        let mut d_color = vec![[0.0; 3]; total];
        let mut d_density = vec![0.0; total];
        let mut gw = vec![0.0; n];
        for r in 0..self.rays {
            let gc = color_grad[r];
            let gd = depth_grad[r];
            let base = r * n;
            let s = &self.s_values[r * m..(r + 1) * m];
            for j in 0..n {
                let c = self.colors[base + j];
                gw[j] = gc[0] * c[0] + gc[1] * c[1] + gc[2] * c[2] + gd * s[j];
                let w = self.weights[base + j];
                d_color[base + j] = [gc[0] * w, gc[1] * w, gc[2] * w];
            }
            // ∂w_j/∂σ_j = Δ_j T_{j+1}; ∂w_k/∂σ_j = −Δ_j w_k for k > j.
            let mut later = 0.0;
            for j in (0..n).rev() {
                let i = base + j;
                d_density[i] = self.deltas[i] * (gw[j] * self.trans_after[i] - later);
                later += gw[j] * self.weights[i];
            }
        }
        self.field.backward(&d_color, &d_density, grads)?;
        Ok(())
    }

    /// ReLU sign pattern over every shaded sample.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.field.relu_pattern()
    }
}
