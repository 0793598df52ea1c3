use super::matrix::Matrix;
use super::mlp::ParamStore;
use super::DiffError;

/// Gradients smaller than this are compared in absolute terms.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// `|a - b| / max(|a|, |b|, RELATIVE_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Largest relative error between the taped parameter gradients of
/// `⟨mlp(input), probe_grad⟩` and central differences with the given step.
///
/// Parameters whose ±step perturbation flips any ReLU unit are skipped: the
/// objective is not differentiable across that kink.
pub fn finite_diff_check(
    params: &ParamStore,
    input: &[f64],
    probe_grad: &[f64],
    step: f64,
) -> Result<f64, DiffError> {
    if !(step > 0.0) {
        return Err(DiffError::InvalidStep(step));
    }
    let x = Matrix::row_vector(input);
    let probe = Matrix::row_vector(probe_grad);
    let (_, tape) = params.forward_batch(&x)?;
    let (grads, _) = tape.backward(&probe)?;
    let pattern = tape.relu_pattern();
    let analytic: Vec<f64> = grads.values().collect();

    let objective = |p: &ParamStore| -> Result<(f64, Vec<bool>), DiffError> {
        let (y, t) = p.forward_batch(&x)?;
        let v = y.as_slice().iter().zip(probe_grad).map(|(a, b)| a * b).sum();
        Ok((v, t.relu_pattern()))
    };

    let mut worst = 0.0_f64;
    let mut probe_params = params.clone();
    for (i, &a) in analytic.iter().enumerate() {
        let original = *probe_params.value_mut(i);
        *probe_params.value_mut(i) = original + step;
        let (plus, pat_plus) = objective(&probe_params)?;
        *probe_params.value_mut(i) = original - step;
        let (minus, pat_minus) = objective(&probe_params)?;
        *probe_params.value_mut(i) = original;
        if pat_plus != pattern || pat_minus != pattern {
            continue;
        }
        let numeric = (plus - minus) / (2.0 * step);
        worst = worst.max(relative_error(a, numeric));
    }
    Ok(worst)
}
