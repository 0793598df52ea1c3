use std::f64::consts::PI;

/// Width of the encoding of a `dim`-component input.
pub fn encoded_len(dim: usize, levels: usize, include_input: bool) -> usize {
    dim * 2 * levels + if include_input { dim } else { 0 }
}

/// Sinusoidal lifting of `v`.
///
/// Layout: `[v (if include_input)]`, then for each level ℓ ascending the block
/// `[sin(2^ℓ π v_0), …, sin(2^ℓ π v_k), cos(2^ℓ π v_0), …, cos(2^ℓ π v_k)]`.
pub fn positional_encode(v: &[f64], levels: usize, include_input: bool) -> Vec<f64> {
    let mut out = vec![0.0; encoded_len(v.len(), levels, include_input)];
    encode_into(v, levels, include_input, &mut out);
    out
}

/// Writes the encoding of `v` into `out`, which must have the encoded length.
///
/// Higher frequencies come from the double-angle recurrence on the level-0
/// pair, which keeps every level in exact phase with level 0.
pub fn encode_into(v: &[f64], levels: usize, include_input: bool, out: &mut [f64]) {
    let k = v.len();
    debug_assert_eq!(out.len(), encoded_len(k, levels, include_input));
    let mut offset = 0;
    if include_input {
        out[..k].copy_from_slice(v);
        offset = k;
    }
    if levels == 0 {
        return;
    }
    for (i, &x) in v.iter().enumerate() {
        let (mut s, mut c) = (PI * x).sin_cos();
        for l in 0..levels {
            let base = offset + l * 2 * k;
            out[base + i] = s.clamp(-1.0, 1.0);
            out[base + k + i] = c.clamp(-1.0, 1.0);
            let s2 = 2.0 * s * c;
            let c2 = (c - s) * (c + s);
            s = s2;
            c = c2;
        }
    }
}

/// Pulls a gradient on the encoding back onto the raw input.
///
/// `encoded` is the forward encoding of the input (the sin/cos values are
/// reused as the derivative factors) and `grad` is ∂L/∂encoding.
pub fn encode_backward(
    encoded: &[f64],
    grad: &[f64],
    dim: usize,
    levels: usize,
    include_input: bool,
    out: &mut [f64],
) {
    debug_assert_eq!(out.len(), dim);
    let mut offset = 0;
    if include_input {
        out.copy_from_slice(&grad[..dim]);
        offset = dim;
    } else {
        out.iter_mut().for_each(|g| *g = 0.0);
    }
    let mut freq = PI;
    for l in 0..levels {
        let base = offset + l * 2 * dim;
        for i in 0..dim {
            let s = encoded[base + i];
            let c = encoded[base + dim + i];
            out[i] += freq * (grad[base + i] * c - grad[base + dim + i] * s);
        }
        freq *= 2.0;
    }
}
