use serde::{Deserialize, Serialize};

use super::mlp::ParamStore;
use super::DiffError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment accumulators for one [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: ParamStore,
    pub second_moment: ParamStore,
}

impl AdamState {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
        }
    }
}

/// One bias-corrected Adam update.
///
/// Gradients are validated before anything is touched, so a rejected update
/// leaves both `params` and `state` unchanged. An all-zero gradient advances
/// the moments and the step counter but leaves `params` untouched.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &ParamStore,
    state: &mut AdamState,
) -> Result<(), DiffError> {
    if !params.same_shape(grads)
        || !params.same_shape(&state.first_moment)
        || !params.same_shape(&state.second_moment)
    {
        return Err(DiffError::GradShape);
    }
    if let Some(layer) = grads.first_non_finite() {
        return Err(DiffError::NonFiniteGradient { layer });
    }
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let frozen = grads.is_all_zero();

    let n = params.layers().len();
    for k in 0..n {
        let g = &grads.layers()[k];
        let grad_iter = g.weight.iter().chain(&g.bias);
        let m = state.first_moment.layer_mut(k);
        let m_iter = m.weight.iter_mut().chain(m.bias.iter_mut());
        let v = state.second_moment.layer_mut(k);
        let v_iter = v.weight.iter_mut().chain(v.bias.iter_mut());
        let p = params.layer_mut(k);
        let p_iter = p.weight.iter_mut().chain(p.bias.iter_mut());
        for (((gv, mv), vv), pv) in grad_iter.zip(m_iter).zip(v_iter).zip(p_iter) {
            *mv = beta1 * *mv + (1.0 - beta1) * gv;
            *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
            if !frozen {
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *pv -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::mlp::{Activation, Layer};

    fn scalar(p: f64) -> ParamStore {
        let mut l = Layer::zeros(1, 1, Activation::Identity);
        l.weight[0] = p;
        ParamStore::new(vec![l], None).unwrap()
    }

    #[test]
    fn zero_gradient_fresh_state_is_noop() {
        let mut p = scalar(0.7);
        let g = p.zeros_like();
        let mut s = AdamState::new(&p, AdamConfig::default());
        adam_step(&mut p, &g, &mut s).unwrap();
        assert_eq!(p, scalar(0.7));
        assert_eq!(s.step, 1);
    }

    #[test]
    fn zero_gradient_with_momentum_is_noop() {
        let mut p = scalar(0.0);
        let mut s = AdamState::new(&p, AdamConfig::default());
        let mut g = scalar(1.0);
        adam_step(&mut p, &g, &mut s).unwrap();
        let before = p.clone();
        g.scale(0.0);
        adam_step(&mut p, &g, &mut s).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step, 2);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar(0.0);
        let g = scalar(1.0);
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let mut s = AdamState::new(&p, cfg);
        adam_step(&mut p, &g, &mut s).unwrap();
        let v = p.layers()[0].weight[0];
        // m̂ = 1, v̂ = 1: p = -0.1 / (1 + 1e-8)
        assert!((v + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn deterministic_on_clones() {
        let mut p1 = scalar(0.3);
        let g = scalar(-0.25);
        let mut s1 = AdamState::new(&p1, AdamConfig::default());
        let mut p2 = p1.clone();
        let mut s2 = s1.clone();
        for _ in 0..5 {
            adam_step(&mut p1, &g, &mut s1).unwrap();
            adam_step(&mut p2, &g, &mut s2).unwrap();
        }
        assert_eq!(p1, p2);
        assert_eq!(s1, s2);
    }

    #[test]
    fn non_finite_gradient_rejected_without_mutation() {
        let mut p = ParamStore::new(
            vec![
                Layer::zeros(1, 2, Activation::Relu),
                Layer::zeros(2, 1, Activation::Identity),
            ],
            None,
        )
        .unwrap();
        let mut g = p.zeros_like();
        g.layer_mut(1).bias[0] = f64::NAN;
        let mut s = AdamState::new(&p, AdamConfig::default());
        let before = (p.clone(), s.clone());
        assert!(matches!(
            adam_step(&mut p, &g, &mut s),
            Err(DiffError::NonFiniteGradient { layer: 1 })
        ));
        assert_eq!((p, s), before);
    }
}
