//! Dense layers, MSE loss, Adam, and a finite-difference gradient checker.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Largest `f64` strictly below one.
const ONE_BELOW: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    #[inline]
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Logistic function, clamped so the result stays inside the open unit interval.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    let y = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    y.clamp(f64::MIN_POSITIVE, ONE_BELOW)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators for one parameter matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Matrix,
    pub v: Matrix,
    pub t: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize, config: AdamConfig) -> Self {
        Self {
            m: Matrix::zeros(rows, cols),
            v: Matrix::zeros(rows, cols),
            t: 0,
            config,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut Matrix, grads: &Matrix, state: &mut AdamState) -> Result<()> {
    if params.shape() != grads.shape() {
        return Err(Error::shape("adam_step", params.shape(), grads.shape()));
    }
    if state.m.shape() != params.shape() {
        return Err(Error::shape("adam_step", params.shape(), state.m.shape()));
    }
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    state.t += 1;
    let t = state.t as i32;
    let m_corr = 1.0 - beta1.powi(t);
    let v_corr = 1.0 - beta2.powi(t);
    let p = params.as_mut_slice();
    let g = grads.as_slice();
    let m = state.m.as_mut_slice();
    let v = state.v.as_mut_slice();
    for i in 0..p.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        let m_hat = m[i] / m_corr;
        let v_hat = v[i] / v_corr;
        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Mean over every element of the squared differences.
pub fn mse(x: &Matrix, x_hat: &Matrix) -> Result<f64> {
    if x.shape() != x_hat.shape() {
        return Err(Error::shape("mse", x.shape(), x_hat.shape()));
    }
    if x.is_empty() {
        return Err(Error::Usage("mse of an empty matrix".into()));
    }
    let sum: f64 = x
        .as_slice()
        .iter()
        .zip(x_hat.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / x.len() as f64)
}

/// Per-row MSE: one reconstruction error per sample.
pub fn per_sample_mse(x: &Matrix, x_hat: &Matrix) -> Result<Vec<f64>> {
    if x.shape() != x_hat.shape() {
        return Err(Error::shape("per_sample_mse", x.shape(), x_hat.shape()));
    }
    let width = x.cols() as f64;
    Ok(x.iter_rows()
        .zip(x_hat.iter_rows())
        .map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / width)
        .collect())
}

/// Gradient of [`mse`] with respect to `x_hat`.
pub fn mse_grad(x: &Matrix, x_hat: &Matrix) -> Result<Matrix> {
    if x.shape() != x_hat.shape() {
        return Err(Error::shape("mse_grad", x.shape(), x_hat.shape()));
    }
    let n = x.len() as f64;
    x_hat.zip(x, |h, t| 2.0 * (h - t) / n)
}

#[derive(Clone, Debug)]
struct ForwardCache {
    input: Matrix,
    pre: Matrix,
    output: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub input: Option<Matrix>,
    pub weights: Matrix,
    pub bias: Matrix,
}

#[derive(Clone, Debug)]
pub struct DenseLayer {
    weights: Matrix,
    bias: Matrix,
    activation: Activation,
    weight_opt: AdamState,
    bias_opt: AdamState,
    cache: Option<ForwardCache>,
}

impl DenseLayer {
    /// Glorot-uniform weights in ±√(6/(in+out)), zero bias.
    pub fn new<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        adam: AdamConfig,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let data = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-limit..=limit))
            .collect();
        let weights = Matrix::from_vec(in_dim, out_dim, data).expect("length matches");
        Self::from_parts(weights, Matrix::zeros(1, out_dim), activation, adam)
            .expect("shapes built consistently")
    }

    pub fn from_parts(
        weights: Matrix,
        bias: Matrix,
        activation: Activation,
        adam: AdamConfig,
    ) -> Result<Self> {
        if bias.rows() != 1 || bias.cols() != weights.cols() {
            return Err(Error::shape("DenseLayer", weights.shape(), bias.shape()));
        }
        Ok(Self {
            weight_opt: AdamState::new(weights.rows(), weights.cols(), adam),
            bias_opt: AdamState::new(1, bias.cols(), adam),
            weights,
            bias,
            activation,
            cache: None,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn bias(&self) -> &Matrix {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut Matrix {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut Matrix {
        &mut self.bias
    }

    pub fn optimizer_steps(&self) -> u64 {
        self.weight_opt.t
    }

    fn pre_activation(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim() {
            return Err(Error::shape(
                "dense_forward",
                x.shape(),
                self.weights.shape(),
            ));
        }
        let mut pre = x.matmul(&self.weights)?;
        pre.add_row_vector(&self.bias)?;
        Ok(pre)
    }

    /// Forward pass that keeps what `backward` needs.
    pub fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        let pre = self.pre_activation(x)?;
        let act = self.activation;
        let output = pre.map(|v| act.apply(v));
        self.cache = Some(ForwardCache {
            input: x.clone(),
            pre,
            output: output.clone(),
        });
        Ok(output)
    }

    /// Forward pass without touching the cache.
    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        let act = self.activation;
        Ok(self.pre_activation(x)?.map(|v| act.apply(v)))
    }

    pub fn backward(&self, upstream: &Matrix) -> Result<LayerGrads> {
        self.backward_inner(upstream, true)
    }

    pub(crate) fn backward_inner(&self, upstream: &Matrix, want_input: bool) -> Result<LayerGrads> {
        let cache = self.cache.as_ref().ok_or_else(|| {
            Error::Usage("dense_backward called before a matching forward".into())
        })?;
        if upstream.shape() != cache.output.shape() {
            return Err(Error::shape(
                "dense_backward",
                upstream.shape(),
                cache.output.shape(),
            ));
        }
        let act = self.activation;
        let mut delta = upstream.clone();
        for ((d, &x), &y) in delta
            .as_mut_slice()
            .iter_mut()
            .zip(cache.pre.as_slice())
            .zip(cache.output.as_slice())
        {
            *d *= act.derivative(x, y);
        }
        let weights = cache.input.matmul_tn(&delta)?;
        let bias = delta.column_sums();
        let input = if want_input {
            Some(delta.matmul_nt(&self.weights)?)
        } else {
            None
        };
        Ok(LayerGrads {
            input,
            weights,
            bias,
        })
    }

    pub fn apply_gradients(&mut self, grads: &LayerGrads) -> Result<()> {
        adam_step(&mut self.weights, &grads.weights, &mut self.weight_opt)?;
        adam_step(&mut self.bias, &grads.bias, &mut self.bias_opt)
    }
}

/// Gradients for every layer of a stack plus the gradient at its input.
#[derive(Clone, Debug, PartialEq)]
pub struct StackGrads {
    pub input: Option<Matrix>,
    pub layers: Vec<LayerGrads>,
}

/// An ordered chain of dense layers: an encoder or one decoder.
#[derive(Clone, Debug)]
pub struct LayerStack {
    layers: Vec<DenseLayer>,
}

impl LayerStack {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config(
                "a layer stack needs at least one layer".into(),
            ));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Config(format!(
                    "layer widths do not chain: {} -> {}",
                    pair[0].out_dim(),
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Builds layers for `dims[0] -> dims[1] -> ... -> dims[n]`. The last
    /// layer gets `output_activation`, the others `hidden_activation`.
    pub fn build<R: Rng + ?Sized>(
        dims: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
        adam: AdamConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(format!("invalid layer dims {dims:?}")));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n {
                    output_activation
                } else {
                    hidden_activation
                };
                DenseLayer::new(dims[i], dims[i + 1], act, adam, rng)
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        let mut h = self.layers[0].forward(x)?;
        for layer in &mut self.layers[1..] {
            h = layer.forward(&h)?;
        }
        Ok(h)
    }

    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        let mut h = self.layers[0].infer(x)?;
        for layer in &self.layers[1..] {
            h = layer.infer(&h)?;
        }
        Ok(h)
    }

    /// Back-propagates `upstream` through the cached forward pass. The
    /// gradient at the stack input is only computed when `want_input`.
    pub fn backward(&self, upstream: &Matrix, want_input: bool) -> Result<StackGrads> {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut carry = upstream.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let need = i > 0 || want_input;
            let g = layer.backward_inner(&carry, need)?;
            if i > 0 {
                carry = g.input.clone().expect("requested");
            }
            grads.push(g);
        }
        grads.reverse();
        let input = if want_input {
            grads[0].input.clone()
        } else {
            None
        };
        Ok(StackGrads {
            input,
            layers: grads,
        })
    }

    pub fn apply_gradients(&mut self, grads: &StackGrads) -> Result<()> {
        if grads.layers.len() != self.layers.len() {
            return Err(Error::Usage(
                "gradient count does not match layer count".into(),
            ));
        }
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            layer.apply_gradients(g)?;
        }
        Ok(())
    }

    /// Total number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights().len() + l.bias().len())
            .sum()
    }
}

/// Worst relative disagreement between analytic and central-difference
/// gradients of `mse(target, stack(x))` over every weight and bias.
pub fn gradcheck(stack: &mut LayerStack, x: &Matrix, target: &Matrix) -> Result<f64> {
    gradcheck_with(stack, x, target, |s, upstream| s.backward(upstream, false))
}

/// [`gradcheck`] with a caller-supplied analytic gradient routine.
pub fn gradcheck_with<F>(
    stack: &mut LayerStack,
    x: &Matrix,
    target: &Matrix,
    analytic: F,
) -> Result<f64>
where
    F: Fn(&LayerStack, &Matrix) -> Result<StackGrads>,
{
    const H: f64 = 1e-5;
    let out = stack.forward(x)?;
    let upstream = mse_grad(target, &out)?;
    let grads = analytic(stack, &upstream)?;

    let loss = |s: &LayerStack| -> Result<f64> { mse(target, &s.infer(x)?) };
    let mut worst = 0.0f64;
    for li in 0..stack.layers.len() {
        for which in 0..2 {
            let n = if which == 0 {
                stack.layers[li].weights.len()
            } else {
                stack.layers[li].bias.len()
            };
            for idx in 0..n {
                fn param(s: &mut LayerStack, li: usize, which: usize, idx: usize) -> &mut f64 {
                    let layer = &mut s.layers[li];
                    if which == 0 {
                        &mut layer.weights.as_mut_slice()[idx]
                    } else {
                        &mut layer.bias.as_mut_slice()[idx]
                    }
                }
                let orig = *param(stack, li, which, idx);
                *param(stack, li, which, idx) = orig + H;
                let plus = loss(stack)?;
                *param(stack, li, which, idx) = orig - H;
                let minus = loss(stack)?;
                *param(stack, li, which, idx) = orig;
                let numeric = (plus - minus) / (2.0 * H);
                let g = &grads.layers[li];
                let analytic = if which == 0 {
                    g.weights.as_slice()[idx]
                } else {
                    g.bias.as_slice()[idx]
                };
                let denom = analytic.abs().max(numeric.abs()).max(1e-8);
                worst = worst.max((analytic - numeric).abs() / denom);
            }
        }
    }
    Ok(worst)
}
