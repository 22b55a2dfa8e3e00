use crate::error::{Error, Result};
use crate::linalg::{ensure_finite, Matrix, RngStream};

use super::Activation;

/// Values kept from the most recent [`Dense::forward`] call.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseCache {
    pub input: Vec<f64>,
    pub pre_activation: Vec<f64>,
    pub output: Vec<f64>,
}

/// Fully connected layer `y = act(W x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    weights: Matrix,
    bias: Option<Vec<f64>>,
    activation: Activation,
    cache: Option<DenseCache>,
}

impl Dense {
    pub fn new(weights: Matrix, bias: Option<Vec<f64>>, activation: Activation) -> Result<Self> {
        ensure_finite(weights.as_slice(), "dense weights")?;
        if let Some(b) = &bias {
            if b.len() != weights.rows() {
                return Err(Error::DimensionMismatch {
                    expected: weights.rows(),
                    got: b.len(),
                });
            }
            ensure_finite(b, "dense bias")?;
        }
        Ok(Self {
            weights,
            bias,
            activation,
            cache: None,
        })
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn init(
        inputs: usize,
        outputs: usize,
        activation: Activation,
        bias: bool,
        rng: &mut RngStream,
    ) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = Matrix::from_fn(outputs, inputs, |_, _| {
            (2.0 * rng.next_uniform() - 1.0) * limit
        });
        Self {
            weights,
            bias: bias.then(|| vec![0.0; outputs]),
            activation,
            cache: None,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn set_activation(&mut self, activation: Activation) {
        self.activation = activation;
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Matrix {
        &mut self.weights
    }

    pub fn bias(&self) -> Option<&[f64]> {
        self.bias.as_deref()
    }

    pub fn bias_mut(&mut self) -> Option<&mut [f64]> {
        self.bias.as_deref_mut()
    }

    pub fn has_bias(&self) -> bool {
        self.bias.is_some()
    }

    /// Drops the additive term; the layer then maps 0 to `act(0)`.
    pub fn strip_bias(&mut self) {
        self.bias = None;
    }

    pub fn cache(&self) -> Option<&DenseCache> {
        self.cache.as_ref()
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    fn pre_activation(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.weights.matvec(x)?;
        if let Some(b) = &self.bias {
            for (zi, bi) in z.iter_mut().zip(b) {
                *zi += bi;
            }
        }
        Ok(z)
    }

    /// Forward pass that fills the layer cache.
    pub fn forward(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        let pre_activation = self.pre_activation(x)?;
        let output = self.activation.apply(&pre_activation);
        self.cache = Some(DenseCache {
            input: x.to_vec(),
            pre_activation,
            output: output.clone(),
        });
        Ok(output)
    }

    /// Forward pass without touching the cache.
    pub fn infer(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.activation.apply(&self.pre_activation(x)?))
    }

    /// Accumulates parameter gradients into `grads` (weights, then bias) and
    /// returns the gradient with respect to the layer input.
    pub fn backward(&self, grad_out: &[f64], grads: &mut [Vec<f64>]) -> Result<Vec<f64>> {
        let cache = self.cache.as_ref().ok_or(Error::MissingForwardCache(0))?;
        if grad_out.len() != self.outputs() {
            return Err(Error::DimensionMismatch {
                expected: self.outputs(),
                got: grad_out.len(),
            });
        }
        let dz = self
            .activation
            .backprop(&cache.pre_activation, &cache.output, grad_out);
        let n_in = self.inputs();
        {
            let gw = &mut grads[0];
            for (row, &d) in gw.chunks_exact_mut(n_in).zip(&dz) {
                if d == 0.0 {
                    continue;
                }
                for (g, &x) in row.iter_mut().zip(&cache.input) {
                    *g += d * x;
                }
            }
        }
        if self.bias.is_some() {
            for (g, d) in grads[1].iter_mut().zip(&dz) {
                *g += d;
            }
        }
        self.weights.matvec_t(&dz)
    }

    /// Gradient with respect to the input only, for frozen layers.
    pub fn backward_input(&self, grad_out: &[f64]) -> Result<Vec<f64>> {
        let cache = self.cache.as_ref().ok_or(Error::MissingForwardCache(0))?;
        let dz = self
            .activation
            .backprop(&cache.pre_activation, &cache.output, grad_out);
        self.weights.matvec_t(&dz)
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut v = vec![self.weights.as_slice()];
        if let Some(b) = &self.bias {
            v.push(b.as_slice());
        }
        v
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = vec![self.weights.as_mut_slice()];
        if let Some(b) = &mut self.bias {
            v.push(b.as_mut_slice());
        }
        v
    }
}

/// Per-ROI merge of a two-channel feature map: `out[r] = k0·f[r,0] + k1·f[r,1] + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMerge {
    /// `[k0, k1, b]`.
    params: Vec<f64>,
    cache: Option<Vec<[f64; 2]>>,
}

impl ChannelMerge {
    pub fn new(kernel: [f64; 2], bias: f64) -> Self {
        Self {
            params: vec![kernel[0], kernel[1], bias],
            cache: None,
        }
    }

    pub fn init(rng: &mut RngStream) -> Self {
        let limit = (6.0f64 / 3.0).sqrt();
        let k0 = (2.0 * rng.next_uniform() - 1.0) * limit;
        let k1 = (2.0 * rng.next_uniform() - 1.0) * limit;
        Self::new([k0, k1], 0.0)
    }

    pub fn kernel(&self) -> [f64; 2] {
        [self.params[0], self.params[1]]
    }

    pub fn bias(&self) -> f64 {
        self.params[2]
    }

    fn apply(&self, f: &[[f64; 2]]) -> Vec<f64> {
        f.iter()
            .map(|c| self.params[0] * c[0] + self.params[1] * c[1] + self.params[2])
            .collect()
    }

    pub fn forward(&mut self, f: &[[f64; 2]]) -> Vec<f64> {
        self.cache = Some(f.to_vec());
        self.apply(f)
    }

    pub fn infer(&self, f: &[[f64; 2]]) -> Vec<f64> {
        self.apply(f)
    }

    /// Accumulates `[dk0, dk1, db]` into `grads[0]`.
    pub fn backward(&self, grad_out: &[f64], grads: &mut [Vec<f64>]) -> Result<()> {
        let f = self.cache.as_ref().ok_or(Error::MissingForwardCache(0))?;
        if f.len() != grad_out.len() {
            return Err(Error::DimensionMismatch {
                expected: f.len(),
                got: grad_out.len(),
            });
        }
        let g = &mut grads[0];
        for (c, &d) in f.iter().zip(grad_out) {
            g[0] += d * c[0];
            g[1] += d * c[1];
            g[2] += d;
        }
        Ok(())
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        vec![&self.params]
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.params]
    }
}

/// Stack of dense layers applied in order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sequential {
    pub layers: Vec<Dense>,
}

impl Sequential {
    pub fn new(layers: Vec<Dense>) -> Self {
        Self { layers }
    }

    /// Builds `dims.len() - 1` layers; `activations` has one entry per layer.
    pub fn init(dims: &[usize], activations: &[Activation], bias: bool, rng: &mut RngStream) -> Self {
        assert_eq!(dims.len(), activations.len() + 1);
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &a)| Dense::init(w[0], w[1], a, bias, rng))
            .collect();
        Self { layers }
    }

    pub fn forward(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        let mut h = x.to_vec();
        for layer in &mut self.layers {
            h = layer.forward(&h)?;
        }
        Ok(h)
    }

    pub fn infer(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut h = x.to_vec();
        for layer in &self.layers {
            h = layer.infer(&h)?;
        }
        Ok(h)
    }

    /// Backpropagates through all layers; `grads` is aligned with [`Parameterized::param_slices`].
    pub fn backward(&self, grad_out: &[f64], grads: &mut [Vec<f64>]) -> Result<Vec<f64>> {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut k = 0;
        for layer in &self.layers {
            offsets.push(k);
            k += 1 + usize::from(layer.has_bias());
        }
        let mut g = grad_out.to_vec();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let end = offsets[idx] + 1 + usize::from(layer.has_bias());
            g = layer
                .backward(&g, &mut grads[offsets[idx]..end])
                .map_err(|e| match e {
                    Error::MissingForwardCache(_) => Error::MissingForwardCache(idx),
                    other => other,
                })?;
        }
        Ok(g)
    }
}

/// Anything exposing its trainable parameters as an ordered list of slices.
pub trait Parameterized {
    fn param_slices(&self) -> Vec<&[f64]>;
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.param_slices().iter().map(|s| vec![0.0; s.len()]).collect()
    }

    fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    fn flat_params(&self) -> Vec<f64> {
        self.param_slices().concat()
    }
}

impl Parameterized for Dense {
    fn param_slices(&self) -> Vec<&[f64]> {
        Dense::param_slices(self)
    }
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        Dense::param_slices_mut(self)
    }
}

impl Parameterized for ChannelMerge {
    fn param_slices(&self) -> Vec<&[f64]> {
        ChannelMerge::param_slices(self)
    }
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        ChannelMerge::param_slices_mut(self)
    }
}

impl Parameterized for Sequential {
    fn param_slices(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.param_slices()).collect()
    }
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.param_slices_mut())
            .collect()
    }
}

/// Elementwise `acc += scale * g`.
pub fn accumulate(acc: &mut [Vec<f64>], g: &[Vec<f64>], scale: f64) {
    for (a, b) in acc.iter_mut().zip(g) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += scale * y;
        }
    }
}

pub fn scale_grads(g: &mut [Vec<f64>], scale: f64) {
    for v in g {
        for x in v.iter_mut() {
            *x *= scale;
        }
    }
}
