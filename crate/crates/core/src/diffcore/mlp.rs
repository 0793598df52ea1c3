use rand::Rng;

use super::matrix::{accumulate_weight_grad, affine, back_input, Matrix};
use super::DiffError;

/// Per-layer nonlinearity applied after the affine map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Sigmoid),
            _ => None,
        }
    }

    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activated output `y`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Fully-connected layer: `y = act(W x + b)`, `W` stored `fan_out × fan_in` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn zeros(fan_in: usize, fan_out: usize, activation: Activation) -> Self {
        Self {
            fan_in,
            fan_out,
            weight: vec![0.0; fan_in * fan_out],
            bias: vec![0.0; fan_out],
            activation,
        }
    }
}

/// Concatenates the first `input_prefix` columns of the network input onto
/// the input of layer `layer`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Skip {
    pub layer: usize,
    pub input_prefix: usize,
}

/// Shape of a plain MLP: `depth` hidden layers of `width` units, then a
/// `output`-wide head.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MlpShape {
    pub input: usize,
    pub width: usize,
    pub depth: usize,
    pub output: usize,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub skip: Option<Skip>,
}

/// The weights of one MLP. Layer `k + 1` consumes the output of layer `k`,
/// widened by the skip prefix when `skip.layer == k + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    layers: Vec<Layer>,
    skip: Option<Skip>,
}

impl ParamStore {
    pub fn new(layers: Vec<Layer>, skip: Option<Skip>) -> Result<Self, DiffError> {
        if layers.is_empty() {
            return Err(DiffError::Empty);
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weight.len() != l.fan_in * l.fan_out || l.bias.len() != l.fan_out {
                return Err(DiffError::Shape {
                    layer: i,
                    expected: l.fan_in * l.fan_out,
                    found: l.weight.len(),
                });
            }
        }
        if let Some(s) = skip {
            if s.layer == 0 || s.layer >= layers.len() || s.input_prefix > layers[0].fan_in {
                return Err(DiffError::InvalidSkip {
                    layer: s.layer,
                    prefix: s.input_prefix,
                });
            }
        }
        for k in 1..layers.len() {
            let mut expected = layers[k - 1].fan_out;
            if let Some(s) = skip.filter(|s| s.layer == k) {
                expected += s.input_prefix;
            }
            if layers[k].fan_in != expected {
                return Err(DiffError::Shape {
                    layer: k,
                    expected,
                    found: layers[k].fan_in,
                });
            }
        }
        Ok(Self { layers, skip })
    }

    /// Weights uniform in ±1/√fan_in, biases zero.
    pub fn init<R: Rng + ?Sized>(shape: &MlpShape, rng: &mut R) -> Self {
        let mut store = Self::zeros(shape);
        for layer in &mut store.layers {
            let bound = 1.0 / (layer.fan_in as f64).sqrt();
            for w in &mut layer.weight {
                *w = rng.gen_range(-bound..=bound);
            }
        }
        store
    }

    pub fn zeros(shape: &MlpShape) -> Self {
        let mut layers = Vec::with_capacity(shape.depth + 1);
        let mut fan_in = shape.input;
        for k in 0..shape.depth {
            if let Some(s) = shape.skip.filter(|s| s.layer == k) {
                fan_in += s.input_prefix;
            }
            layers.push(Layer::zeros(fan_in, shape.width, shape.hidden_activation));
            fan_in = shape.width;
        }
        if let Some(s) = shape.skip.filter(|s| s.layer == shape.depth) {
            fan_in += s.input_prefix;
        }
        layers.push(Layer::zeros(fan_in, shape.output, shape.output_activation));
        Self::new(layers, shape.skip).expect("MlpShape yields a consistent store")
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.fan_in, l.fan_out, l.activation))
                .collect(),
            skip: self.skip,
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_mut(&mut self, index: usize) -> &mut Layer {
        &mut self.layers[index]
    }

    pub fn skip(&self) -> Option<Skip> {
        self.skip
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn same_shape(&self, other: &ParamStore) -> bool {
        self.skip == other.skip
            && self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.fan_in == b.fan_in && a.fan_out == b.fan_out)
    }

    /// First layer holding a NaN or infinite value.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.layers.iter().position(|l| {
            l.weight.iter().chain(&l.bias).any(|v| !v.is_finite())
        })
    }

    pub fn is_all_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|&v| v == 0.0))
    }

    /// Elementwise `self += other`. Panics on shape mismatch.
    pub fn add_assign(&mut self, other: &ParamStore) {
        assert!(self.same_shape(other), "parameter shape mismatch");
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.iter_mut().zip(&b.weight).for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weight.iter_mut().chain(l.bias.iter_mut()).for_each(|v| *v *= factor);
        }
    }

    /// Every parameter in layer order: weights then bias per layer.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(&l.bias).copied())
    }

    /// Mutable access to the `index`-th parameter in [`values`](Self::values) order.
    pub fn value_mut(&mut self, mut index: usize) -> &mut f64 {
        for l in &mut self.layers {
            if index < l.weight.len() {
                return &mut l.weight[index];
            }
            index -= l.weight.len();
            if index < l.bias.len() {
                return &mut l.bias[index];
            }
            index -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    fn check_input(&self, cols: usize) -> Result<(), DiffError> {
        if cols != self.input_width() {
            return Err(DiffError::Shape {
                layer: 0,
                expected: self.input_width(),
                found: cols,
            });
        }
        Ok(())
    }

    /// Batched forward pass; rows of `input` are independent samples.
    pub fn forward_batch(&self, input: &Matrix) -> Result<(Matrix, Tape<'_>), DiffError> {
        self.check_input(input.cols())?;
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut h = input.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            if let Some(s) = self.skip.filter(|s| s.layer == k) {
                h = h.hcat_prefix(input, s.input_prefix);
            }
            let mut y = affine(&h, &layer.weight, &layer.bias);
            if layer.activation != Activation::Identity {
                let act = layer.activation;
                y.as_mut_slice().iter_mut().for_each(|v| *v = act.apply(*v));
            }
            layer_inputs.push(h);
            h = y;
        }
        let tape = Tape {
            params: self,
            layer_inputs,
            output: h.clone(),
        };
        Ok((h, tape))
    }

    /// Batched forward pass without recording a tape.
    pub fn infer_batch(&self, input: &Matrix) -> Result<Matrix, DiffError> {
        self.check_input(input.cols())?;
        let mut h = input.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            if let Some(s) = self.skip.filter(|s| s.layer == k) {
                h = h.hcat_prefix(input, s.input_prefix);
            }
            let mut y = affine(&h, &layer.weight, &layer.bias);
            if layer.activation != Activation::Identity {
                let act = layer.activation;
                y.as_mut_slice().iter_mut().for_each(|v| *v = act.apply(*v));
            }
            h = y;
        }
        Ok(h)
    }
}

/// Record of one batched forward pass: the input fed to every layer (after
/// any skip concatenation) and the final output.
#[derive(Clone, Debug)]
pub struct Tape<'a> {
    params: &'a ParamStore,
    layer_inputs: Vec<Matrix>,
    output: Matrix,
}

impl<'a> Tape<'a> {
    pub fn params(&self) -> &'a ParamStore {
        self.params
    }

    pub fn input(&self) -> &Matrix {
        &self.layer_inputs[0]
    }

    pub fn output(&self) -> &Matrix {
        &self.output
    }

    /// Re-runs the forward pass from the recorded input.
    pub fn replay(&self) -> Matrix {
        self.params
            .infer_batch(self.input())
            .expect("tape input matches its own parameters")
    }

    /// Sign pattern of every ReLU unit; equal patterns mean no kink was crossed.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for (k, layer) in self.params.layers.iter().enumerate() {
            if layer.activation != Activation::Relu {
                continue;
            }
            let y = self.layer_output(k);
            for r in 0..y.rows() {
                out.extend(y.row(r)[..layer.fan_out].iter().map(|&v| v > 0.0));
            }
        }
        out
    }

    /// Activated output of layer `k`; for hidden layers this is the leading
    /// block of the next layer's recorded input.
    fn layer_output(&self, k: usize) -> &Matrix {
        if k + 1 == self.layer_inputs.len() {
            &self.output
        } else {
            &self.layer_inputs[k + 1]
        }
    }

    /// Accumulates parameter gradients of `⟨output, output_grad⟩` into
    /// `grads` and returns the input gradient when `want_input` is set.
    pub fn backward_into(
        &self,
        output_grad: &Matrix,
        grads: &mut ParamStore,
        want_input: bool,
    ) -> Result<Option<Matrix>, DiffError> {
        let p = self.params;
        let last = p.layers.len() - 1;
        if output_grad.rows() != self.output.rows() || output_grad.cols() != self.output.cols() {
            return Err(DiffError::Shape {
                layer: last,
                expected: self.output.cols(),
                found: output_grad.cols(),
            });
        }
        if !grads.same_shape(p) {
            return Err(DiffError::GradShape);
        }
        let rows = output_grad.rows();
        let mut g = output_grad.clone();
        let mut skip_grad: Option<Matrix> = None;
        for k in (0..=last).rev() {
            let layer = &p.layers[k];
            if layer.activation != Activation::Identity {
                let y = self.layer_output(k);
                let act = layer.activation;
                for r in 0..rows {
                    let yr = &y.row(r)[..layer.fan_out];
                    g.row_mut(r)
                        .iter_mut()
                        .zip(yr)
                        .for_each(|(gv, &yv)| *gv *= act.derivative_from_output(yv));
                }
            }
            let dl = &mut grads.layers[k];
            for r in 0..rows {
                dl.bias.iter_mut().zip(g.row(r)).for_each(|(b, gv)| *b += gv);
            }
            accumulate_weight_grad(&g, &self.layer_inputs[k], &mut dl.weight);
            if k == 0 && !want_input {
                break;
            }
            let gin = back_input(&g, &layer.weight, layer.fan_in);
            g = match p.skip.filter(|s| s.layer == k) {
                Some(s) => {
                    let prev = layer.fan_in - s.input_prefix;
                    skip_grad = Some(gin.columns(prev, layer.fan_in));
                    gin.columns(0, prev)
                }
                None => gin,
            };
        }
        if !want_input {
            return Ok(None);
        }
        if let Some(sg) = skip_grad {
            for r in 0..rows {
                g.row_mut(r)
                    .iter_mut()
                    .zip(sg.row(r))
                    .for_each(|(a, b)| *a += b);
            }
        }
        Ok(Some(g))
    }

    /// Parameter and input gradients of `⟨output, output_grad⟩`.
    pub fn backward(&self, output_grad: &Matrix) -> Result<(ParamStore, Matrix), DiffError> {
        let mut grads = self.params.zeros_like();
        let input_grad = self
            .backward_into(output_grad, &mut grads, true)?
            .expect("input gradient requested");
        Ok((grads, input_grad))
    }
}

/// Single-sample forward pass.
pub fn mlp_forward<'a>(
    params: &'a ParamStore,
    input: &[f64],
) -> Result<(Vec<f64>, Tape<'a>), DiffError> {
    let (out, tape) = params.forward_batch(&Matrix::row_vector(input))?;
    Ok((out.into_vec(), tape))
}

/// Single-sample backward pass.
pub fn mlp_backward(tape: &Tape<'_>, output_grad: &[f64]) -> Result<(ParamStore, Vec<f64>), DiffError> {
    let (grads, gin) = tape.backward(&Matrix::row_vector(output_grad))?;
    Ok((grads, gin.into_vec()))
}
