use rand::Rng;

use super::RenderError;

/// How sample positions are placed inside each stratum.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleMode {
    /// One uniform draw per stratum.
    Stratified,
    /// Stratum centers; no randomness.
    Midpoint,
}

/// `m` ascending ray parameters, one per equal-width stratum of `[near, far]`.
pub fn stratified_samples<R: Rng + ?Sized>(
    near: f64,
    far: f64,
    m: usize,
    mode: SampleMode,
    rng: &mut R,
) -> Result<Vec<f64>, RenderError> {
    let mut out = vec![0.0; m];
    fill_samples(near, far, mode, rng, &mut out)?;
    Ok(out)
}

pub(crate) fn fill_samples<R: Rng + ?Sized>(
    near: f64,
    far: f64,
    mode: SampleMode,
    rng: &mut R,
    out: &mut [f64],
) -> Result<(), RenderError> {
    let m = out.len();
    if m < 2 {
        return Err(RenderError::TooFewSamples(m));
    }
    if !(near < far) {
        return Err(RenderError::InvalidBounds { near, far });
    }
    let width = (far - near) / m as f64;
    for (j, s) in out.iter_mut().enumerate() {
        let offset = match mode {
            SampleMode::Midpoint => 0.5,
            SampleMode::Stratified => rng.gen::<f64>(),
        };
        *s = near + (j as f64 + offset) * width;
    }
    Ok(())
}

/// Volume-rendering weights
/// `w_j = (1 − exp(−σ_j Δ_j)) · exp(−Σ_{k<j} σ_k Δ_k)`.
pub fn render_weights(densities: &[f64], deltas: &[f64]) -> Result<Vec<f64>, RenderError> {
    if densities.len() != deltas.len() {
        return Err(RenderError::LengthMismatch {
            what: "deltas",
            expected: densities.len(),
            found: deltas.len(),
        });
    }
    if let Some(i) = densities.iter().position(|&s| !(s >= 0.0)) {
        return Err(RenderError::NegativeDensity { index: i, value: densities[i] });
    }
    if let Some(i) = deltas.iter().position(|&d| !(d > 0.0)) {
        return Err(RenderError::NonPositiveDelta { index: i, value: deltas[i] });
    }
    let mut w = vec![0.0; densities.len()];
    weights_into(densities, deltas, &mut w, None);
    Ok(w)
}

/// Unchecked weights; optionally records the transmittance after each
/// sample, `T_{j+1} = exp(−Σ_{k≤j} σ_k Δ_k)`.
#[inline]
pub(crate) fn weights_into(
    densities: &[f64],
    deltas: &[f64],
    weights: &mut [f64],
    mut trans_after: Option<&mut [f64]>,
) {
    let mut optical = 0.0_f64;
    for j in 0..densities.len() {
        let tau = densities[j] * deltas[j];
        let transmittance = (-optical).exp();
        weights[j] = -(-tau).exp_m1() * transmittance;
        optical += tau;
        if let Some(t) = trans_after.as_deref_mut() {
            t[j] = (-optical).exp();
        }
    }
}

/// `Ĉ = Σ w_j c_j` and `D̂ = Σ w_j s_j`; `s_values` carries one more entry
/// than `weights`.
pub fn render_color_depth(
    weights: &[f64],
    colors: &[[f64; 3]],
    s_values: &[f64],
) -> Result<([f64; 3], f64), RenderError> {
    let n = weights.len();
    if colors.len() != n {
        return Err(RenderError::LengthMismatch {
            what: "colors",
            expected: n,
            found: colors.len(),
        });
    }
    if s_values.len() != n + 1 {
        return Err(RenderError::LengthMismatch {
            what: "s_values",
            expected: n + 1,
            found: s_values.len(),
        });
    }
    Ok(composite(weights, colors, s_values))
}

#[inline]
pub(crate) fn composite(weights: &[f64], colors: &[[f64; 3]], s_values: &[f64]) -> ([f64; 3], f64) {
    let mut c = [0.0; 3];
    let mut d = 0.0;
    for j in 0..weights.len() {
        let w = weights[j];
        c[0] += w * colors[j][0];
        c[1] += w * colors[j][1];
        c[2] += w * colors[j][2];
        d += w * s_values[j];
    }
    (c, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn strata_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let s = stratified_samples(0.0, 1.0, 4, SampleMode::Stratified, &mut rng).unwrap();
            for (j, v) in s.iter().enumerate() {
                assert!(*v >= j as f64 / 4.0 && *v <= (j + 1) as f64 / 4.0);
            }
            assert!(s.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn seeded_and_midpoint() {
        let a = stratified_samples(0.0, 1.0, 8, SampleMode::Stratified, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = stratified_samples(0.0, 1.0, 8, SampleMode::Stratified, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        let mid = stratified_samples(0.0, 1.0, 4, SampleMode::Midpoint, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(mid, vec![0.125, 0.375, 0.625, 0.875]);
        assert!(stratified_samples(0.0, 1.0, 1, SampleMode::Midpoint, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn weight_examples() {
        assert_eq!(render_weights(&[0.0; 3], &[0.1; 3]).unwrap(), vec![0.0; 3]);
        let w = render_weights(&[2.0], &[0.5]).unwrap();
        assert!((w[0] - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!((w[0] - 0.63212).abs() < 1e-5);
        let w = render_weights(&[1.0, 1.0], &[0.5, 0.5]).unwrap();
        assert!((w[0] - 0.39347).abs() < 1e-5);
        assert!((w[1] - 0.23865).abs() < 1e-5);
        assert!(render_weights(&[-1.0], &[0.5]).is_err());
        assert!(render_weights(&[1.0], &[0.0]).is_err());
        assert!(render_weights(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn color_depth_examples() {
        let (c, d) = render_color_depth(&[0.0, 0.0], &[[1.0, 1.0, 1.0]; 2], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((c, d), ([0.0; 3], 0.0));

        let w = render_weights(&[40.0], &[0.5]).unwrap();
        let (c, d) = render_color_depth(&w, &[[1.0, 0.0, 0.0]], &[1.5, 2.0]).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-8 && c[1] == 0.0 && c[2] == 0.0);
        assert!((d - 1.5).abs() < 1e-8);

        let (c, d) = render_color_depth(
            &[0.5, 0.5],
            &[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            &[1.0, 2.0, 3.0],
        )
        .unwrap();
        assert_eq!(c, [0.5, 0.5, 0.0]);
        assert_eq!(d, 1.5);
        assert!(render_color_depth(&[0.5], &[[0.0; 3]], &[1.0]).is_err());
    }

    #[test]
    fn opaque_sample_occludes() {
        let w = render_weights(&[1.0, 40.0, 3.0, 5.0], &[0.1, 0.5, 0.2, 0.2]).unwrap();
        assert!(w[2] < 1e-8 && w[3] < 1e-8);
    }

    proptest! {
        #[test]
        fn transmittance_identity(v in prop::collection::vec((0.0f64..20.0, 1e-3f64..1.0), 1..64)) {
            let (s, d): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let w = render_weights(&s, &d).unwrap();
            let total: f64 = s.iter().zip(&d).map(|(a, b)| a * b).sum();
            prop_assert!((w.iter().sum::<f64>() - (1.0 - (-total).exp())).abs() < 1e-12);
            prop_assert!(w.iter().all(|x| (0.0..=1.0).contains(x)));
        }

        #[test]
        fn monotone_in_one_density(
            v in prop::collection::vec((0.0f64..5.0, 1e-3f64..1.0), 2..16),
            pick in any::<prop::sample::Index>(),
            bump in 0.0f64..5.0,
        ) {
            let (s, d): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let j = pick.index(s.len());
            let before = render_weights(&s, &d).unwrap();
            let mut s2 = s.clone();
            s2[j] += bump;
            let after = render_weights(&s2, &d).unwrap();
            prop_assert!(after[j] >= before[j]);
            for k in j + 1..s.len() {
                prop_assert!(after[k] <= before[k]);
            }
        }

        #[test]
        fn color_bounded_by_weight_sum(
            v in prop::collection::vec((0.0f64..10.0, 1e-3f64..1.0, 0.0f64..=1.0), 1..32),
        ) {
            let s: Vec<f64> = v.iter().map(|x| x.0).collect();
            let d: Vec<f64> = v.iter().map(|x| x.1).collect();
            let cols: Vec<[f64; 3]> = v.iter().map(|x| [x.2, 1.0 - x.2, 0.5]).collect();
            let w = render_weights(&s, &d).unwrap();
            let mut sv = vec![0.0];
            for dv in &d { sv.push(sv.last().unwrap() + dv); }
            let (c, _) = render_color_depth(&w, &cols, &sv).unwrap();
            let total: f64 = w.iter().sum();
            prop_assert!(c.iter().all(|x| *x >= 0.0 && *x <= total + 1e-15 && *x <= 1.0));
        }
    }
}
