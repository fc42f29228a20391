use rand::Rng;

use super::matrix::{gemm, gemm_at_b, Matrix};
use crate::error::{Error, Result};

/// A named block of trainable values with a same-sized gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
}

impl ParamTensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            values: vec![0.0; n],
            grad: vec![0.0; n],
        }
    }

    pub fn from_values(shape: &[usize], values: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != values.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!(
                "shape {shape:?} does not hold {} values",
                values.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            grad: vec![0.0; n],
            values,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Anything owning trainable tensors.
pub trait Parameterized {
    fn params(&self) -> Vec<&ParamTensor>;
    fn params_mut(&mut self) -> Vec<&mut ParamTensor>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Overwrites values with `tau * source + (1 - tau) * self`.
    fn soft_update_from(&mut self, source: &Self, tau: f64)
    where
        Self: Sized,
    {
        for (dst, src) in self.params_mut().into_iter().zip(source.params()) {
            debug_assert_eq!(dst.shape(), src.shape());
            for (d, s) in dst.values.iter_mut().zip(&src.values) {
                *d = tau * s + (1.0 - tau) * *d;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Gelu,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Gelu => {
                let u = GELU_C * (z + 0.044715 * z * z * z);
                0.5 * z * (1.0 + u.tanh())
            }
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Gelu => {
                let u = GELU_C * (z + 0.044715 * z * z * z);
                let t = u.tanh();
                let du = GELU_C * (1.0 + 3.0 * 0.044715 * z * z);
                0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * du
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Gelu => "gelu",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "identity" => Some(Activation::Identity),
            "relu" => Some(Activation::Relu),
            "gelu" => Some(Activation::Gelu),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// Row-major `[out, in]`.
    pub weight: ParamTensor,
    pub bias: ParamTensor,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let mut weight = ParamTensor::zeros(&[out_dim, in_dim]);
        let mut bias = ParamTensor::zeros(&[out_dim]);
        for w in weight.values.iter_mut().chain(bias.values.iter_mut()) {
            *w = rng.gen_range(-bound..bound);
        }
        Self { weight, bias }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    fn forward(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.rows(), self.out_dim());
        for i in 0..x.rows() {
            out.row_mut(i).copy_from_slice(&self.bias.values);
        }
        gemm(
            1.0,
            x.data(),
            x.shape(),
            &self.weight.values,
            (self.out_dim(), self.in_dim()),
            true,
            1.0,
            out.data_mut(),
        );
        out
    }
}

#[derive(Debug, Clone)]
struct ForwardCache {
    inputs: Vec<Matrix>,
    pre_activations: Vec<Matrix>,
}

/// Fully connected network. Hidden layers share one activation; the last layer
/// uses `output_activation`.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Linear>,
    hidden_activation: Activation,
    output_activation: Activation,
    cache: Option<ForwardCache>,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
            && self.hidden_activation == other.hidden_activation
            && self.output_activation == other.output_activation
    }
}

impl Mlp {
    /// `sizes = [in, h1, ..., out]`.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("invalid layer sizes {sizes:?}")));
        }
        let layers = sizes
            .windows(2)
            .map(|w| Linear::new(w[0], w[1], rng))
            .collect();
        Ok(Self {
            layers,
            hidden_activation,
            output_activation,
            cache: None,
        })
    }

    pub fn from_layers(
        layers: Vec<Linear>,
        hidden_activation: Activation,
        output_activation: Activation,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("an mlp needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(Error::Shape(format!(
                    "layer dims do not chain: {} -> {}",
                    w[0].out_dim(),
                    w[1].in_dim()
                )));
            }
        }
        Ok(Self {
            layers,
            hidden_activation,
            output_activation,
            cache: None,
        })
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Linear] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn output_activation(&self) -> Activation {
        self.output_activation
    }

    fn activation_of(&self, k: usize) -> Activation {
        if k + 1 == self.layers.len() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {}",
                self.in_dim(),
                x.cols()
            )));
        }
        Ok(())
    }

    /// Forward pass without caching.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut h = x.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            let act = self.activation_of(k);
            h = layer.forward(&h);
            if act != Activation::Identity {
                h.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
            }
        }
        Ok(h)
    }

    /// Forward pass that keeps the activations needed by [`Mlp::backward`].
    pub fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for k in 0..self.layers.len() {
            let act = self.activation_of(k);
            let z = self.layers[k].forward(&h);
            let out = if act == Activation::Identity {
                z.clone()
            } else {
                z.map(|v| act.apply(v))
            };
            inputs.push(h);
            pre_activations.push(z);
            h = out;
        }
        self.cache = Some(ForwardCache {
            inputs,
            pre_activations,
        });
        Ok(h)
    }

    /// Backpropagates `upstream` through the cached forward pass, accumulating
    /// parameter gradients. Returns the gradient with respect to the input.
    pub fn backward(&mut self, upstream: &Matrix) -> Result<Matrix> {
        self.backprop(upstream, true)
    }

    /// Like [`Mlp::backward`] but leaves parameter gradients untouched.
    pub fn input_grad(&mut self, upstream: &Matrix) -> Result<Matrix> {
        self.backprop(upstream, false)
    }

    fn backprop(&mut self, upstream: &Matrix, accumulate: bool) -> Result<Matrix> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("backward called without a cached forward pass".into()))?;
        let rows = cache.inputs[0].rows();
        if upstream.shape() != (rows, self.out_dim()) {
            return Err(Error::Shape(format!(
                "upstream gradient {:?} does not match output {:?}",
                upstream.shape(),
                (rows, self.out_dim())
            )));
        }
        let mut g = upstream.clone();
        for k in (0..self.layers.len()).rev() {
            let act = self.activation_of(k);
            if act != Activation::Identity {
                let z = &cache.pre_activations[k];
                for (gv, &zv) in g.data_mut().iter_mut().zip(z.data()) {
                    *gv *= act.derivative(zv);
                }
            }
            let x = &cache.inputs[k];
            let layer = &mut self.layers[k];
            let (out_dim, in_dim) = (layer.out_dim(), layer.in_dim());
            if accumulate {
                gemm_at_b(1.0, g.data(), g.shape(), x.data(), in_dim, &mut layer.weight.grad);
                for i in 0..rows {
                    for (b, &gv) in layer.bias.grad.iter_mut().zip(g.row(i)) {
                        *b += gv;
                    }
                }
            }
            let mut gx = Matrix::zeros(rows, in_dim);
            gemm(
                1.0,
                g.data(),
                g.shape(),
                &layer.weight.values,
                (out_dim, in_dim),
                false,
                0.0,
                gx.data_mut(),
            );
            g = gx;
        }
        Ok(g)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

impl Parameterized for Mlp {
    fn params(&self) -> Vec<&ParamTensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}
