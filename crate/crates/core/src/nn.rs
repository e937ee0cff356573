//! Dense feed-forward networks over a flat parameter vector, with
//! reverse-mode gradients for training and forward-mode tangents for exact
//! latent Jacobians.
//!
//! Samples are matrix columns. Each layer stores its weight matrix
//! column-major (`n_out x n_in`) followed by its bias inside one shared
//! `Vec<f64>`, so optimisers, checkpoints and finite-difference checks all
//! operate on a plain slice.

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut, DVector};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// `ln(1 + e^x)`, the smooth rectifier.
    Softplus,
    Tanh,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Softplus => "softplus",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "softplus" => Some(Activation::Softplus),
            "tanh" => Some(Activation::Tanh),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }

    pub fn code(self) -> u32 {
        match self {
            Activation::Softplus => 0,
            Activation::Tanh => 1,
            Activation::Identity => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Activation::Softplus),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Softplus => {
                if x > 0.0 {
                    x + (-x).exp().ln_1p()
                } else {
                    x.exp().ln_1p()
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Softplus => {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub activation: Activation,
    /// Offset of the weight block; the bias follows it.
    pub offset: usize,
}

impl Dense {
    pub fn n_params(&self) -> usize {
        self.n_out * (self.n_in + 1)
    }

    pub fn weights<'a>(&self, params: &'a [f64]) -> DMatrixView<'a, f64> {
        DMatrixView::from_slice(&params[self.offset..self.offset + self.n_out * self.n_in], self.n_out, self.n_in)
    }

    pub fn weights_mut<'a>(&self, params: &'a mut [f64]) -> DMatrixViewMut<'a, f64> {
        DMatrixViewMut::from_slice(
            &mut params[self.offset..self.offset + self.n_out * self.n_in],
            self.n_out,
            self.n_in,
        )
    }

    pub fn bias<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        let start = self.offset + self.n_out * self.n_in;
        &params[start..start + self.n_out]
    }

    pub fn bias_mut<'a>(&self, params: &'a mut [f64]) -> &'a mut [f64] {
        let start = self.offset + self.n_out * self.n_in;
        &mut params[start..start + self.n_out]
    }

    /// Pre-activation `W x + b` for every column of `x`.
    pub fn affine(&self, params: &[f64], x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = self.weights(params) * x;
        let b = self.bias(params);
        for mut col in z.column_iter_mut() {
            for (zi, bi) in col.iter_mut().zip(b) {
                *zi += bi;
            }
        }
        z
    }
}

/// A stack of dense layers; the last layer is always linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Inputs and pre-activations of every layer, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    inputs: Vec<DMatrix<f64>>,
    pre: Vec<DMatrix<f64>>,
    pub output: DMatrix<f64>,
}

impl Mlp {
    /// Lays out `n_in -> hidden... -> n_out` starting at `offset`.
    pub fn new(n_in: usize, hidden: &[usize], n_out: usize, activation: Activation, offset: usize) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut off = offset;
        let mut prev = n_in;
        for (k, &w) in hidden.iter().chain(std::iter::once(&n_out)).enumerate() {
            let act = if k == hidden.len() { Activation::Identity } else { activation };
            let layer = Dense { n_in: prev, n_out: w, activation: act, offset: off };
            off += layer.n_params();
            prev = w;
            layers.push(layer);
        }
        Self { layers }
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn n_out(&self) -> usize {
        self.layers.last().map_or(0, |l| l.n_out)
    }

    pub fn offset(&self) -> usize {
        self.layers[0].offset
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Dense::n_params).sum()
    }

    pub fn end(&self) -> usize {
        self.offset() + self.n_params()
    }

    /// Uniform fan-in initialisation, zero biases.
    pub fn init(&self, params: &mut [f64], rng: &mut impl Rng) {
        for layer in &self.layers {
            let bound = 1.0 / (layer.n_in as f64).sqrt();
            let w_end = layer.offset + layer.n_in * layer.n_out;
            for w in &mut params[layer.offset..w_end] {
                *w = rng.random_range(-bound..bound);
            }
            layer.bias_mut(params).fill(0.0);
        }
    }

    pub fn predict(&self, params: &[f64], x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut a = x.clone();
        for layer in &self.layers {
            let mut z = layer.affine(params, &a);
            if layer.activation != Activation::Identity {
                z.apply(|v| *v = layer.activation.apply(*v));
            }
            a = z;
        }
        a
    }

    pub fn forward(&self, params: &[f64], x: &DMatrix<f64>) -> Tape {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        for layer in &self.layers {
            let z = layer.affine(params, &a);
            let next = if layer.activation == Activation::Identity {
                z.clone()
            } else {
                z.map(|v| layer.activation.apply(v))
            };
            inputs.push(a);
            pre.push(z);
            a = next;
        }
        Tape { inputs, pre, output: a }
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to the network input.
    pub fn backward(&self, params: &[f64], tape: &Tape, d_out: DMatrix<f64>, grad: &mut [f64]) -> DMatrix<f64> {
        let mut d = d_out;
        for (l, layer) in self.layers.iter().enumerate().rev() {
            if layer.activation != Activation::Identity {
                let act = layer.activation;
                d.zip_apply(&tape.pre[l], |g, z| *g *= act.derivative(z));
            }
            layer
                .weights_mut(grad)
                .gemm(1.0, &d, &tape.inputs[l].transpose(), 1.0);
            let gb = layer.bias_mut(grad);
            for col in d.column_iter() {
                for (g, x) in gb.iter_mut().zip(col.iter()) {
                    *g += x;
                }
            }
            d = layer.weights(params).tr_mul(&d);
        }
        d
    }

    /// Value and forward-mode tangent at a single input.
    ///
    /// `tangent` holds input-space directions as columns; the result holds
    /// the corresponding output-space directions, i.e. `J * tangent`.
    pub fn tangent(&self, params: &[f64], x: &DVector<f64>, tangent: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let mut a = x.clone();
        let mut t = tangent.clone();
        for layer in &self.layers {
            let w = layer.weights(params);
            let mut z = &w * &a;
            for (zi, bi) in z.iter_mut().zip(layer.bias(params)) {
                *zi += bi;
            }
            t = &w * &t;
            if layer.activation != Activation::Identity {
                for (r, zr) in z.iter().enumerate() {
                    let s = layer.activation.derivative(*zr);
                    t.row_mut(r).scale_mut(s);
                }
                z.apply(|v| *v = layer.activation.apply(*v));
            }
            a = z;
        }
        (a, t)
    }
}

/// Adaptive-moment gradient descent.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n_params: usize, step_size: f64) -> Self {
        Self { step_size, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *p -= self.step_size * mhat / (vhat.sqrt() + self.eps);
        }
    }
}
