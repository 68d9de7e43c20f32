//! Fully connected, batch-norm and element-wise layers with hand-written
//! backward passes. Each layer caches what its backward pass needs during a
//! training forward call; `*_infer` variants are pure and take `&self`.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::tensor::{matmul, matmul_a_bt, matmul_at_b_acc, Tensor};
use crate::error::{Error, Result};

/// Anything that owns tensors worth checkpointing.
///
/// Visiting order must be stable: it defines checkpoint layout.
pub trait Module {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor));

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, t| t.zero_grad());
    }
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// `y = x·W + b` for `x[N×D_in]`, `W[D_in×D_out]`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, d_in) = x.expect_2d("linear input")?;
    let (w_in, d_out) = weight.expect_2d("linear weight")?;
    if d_in != w_in {
        return Err(Error::Dimension(format!("linear: input has {d_in} columns, weight expects {w_in}")));
    }
    if bias.len() != d_out {
        return Err(Error::Dimension(format!("linear: bias has {} entries, expected {d_out}", bias.len())));
    }
    let mut y = matmul(x.data(), weight.data(), n, d_in, d_out);
    for row in y.chunks_exact_mut(d_out) {
        for (v, b) in row.iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
    Tensor::new(vec![n, d_out], y)
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
    input: Option<Tensor>,
}

impl Linear {
    /// Uniform fan-in initialisation, bias zero.
    pub fn new(d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        let bound = (1.0 / d_in as f64).sqrt() * 3f64.sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let w = (0..d_in * d_out).map(|_| dist.sample(rng)).collect();
        Self {
            weight: Tensor::param(&[d_in, d_out], w).expect("consistent shape"),
            bias: Tensor::param(&[d_out], vec![0.0; d_out]).expect("consistent shape"),
            input: None,
        }
    }

    pub fn from_params(weight: Tensor, bias: Tensor) -> Result<Self> {
        let (_, d_out) = weight.expect_2d("linear weight")?;
        if bias.len() != d_out {
            return Err(Error::Dimension("bias/weight mismatch".into()));
        }
        let mut weight = weight;
        let mut bias = bias;
        weight.requires_grad = true;
        bias.requires_grad = true;
        Ok(Self { weight, bias, input: None })
    }

    pub fn d_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn d_out(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = linear(x, &self.weight, &self.bias)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn forward_infer(&self, x: &Tensor) -> Result<Tensor> {
        linear(x, &self.weight, &self.bias)
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let x = self.input.take().ok_or(Error::Pipeline("linear backward before forward".into()))?;
        let (n, d_in) = x.expect_2d("linear cache")?;
        let d_out = self.d_out();
        if dy.shape() != [n, d_out] {
            return Err(Error::Dimension(format!("linear backward: dy {:?}", dy.shape())));
        }
        matmul_at_b_acc(self.weight.grad_mut(), x.data(), dy.data(), n, d_in, d_out);
        let gb = self.bias.grad_mut();
        for row in dy.data().chunks_exact(d_out) {
            for (g, v) in gb.iter_mut().zip(row) {
                *g += v;
            }
        }
        let dx = matmul_a_bt(dy.data(), self.weight.data(), n, d_out, d_in);
        Tensor::new(vec![n, d_in], dx)
    }
}

impl Module for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

#[derive(Clone, Debug)]
struct BnCache {
    mode: Mode,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    n: usize,
}

/// Batch normalisation over rows of an `N×D` tensor.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache>,
}

impl BatchNorm {
    pub const DEFAULT_MOMENTUM: f64 = 0.1;
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Tensor::param(&[dim], vec![1.0; dim]).expect("consistent shape"),
            beta: Tensor::param(&[dim], vec![0.0; dim]).expect("consistent shape"),
            running_mean: Tensor::zeros(&[dim]),
            running_var: Tensor::filled(&[dim], 1.0),
            momentum: Self::DEFAULT_MOMENTUM,
            eps: Self::DEFAULT_EPS,
            cache: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &Tensor) -> Result<(usize, usize)> {
        let (n, d) = x.expect_2d("batch-norm input")?;
        if d != self.dim() {
            return Err(Error::Dimension(format!("batch-norm expects {} features, got {d}", self.dim())));
        }
        if !(self.eps > 0.0) || self.running_var.data().iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Config("batch-norm needs eps > 0 and positive running variance".into()));
        }
        Ok((n, d))
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (n, d) = self.check(x)?;
        let (xhat, inv_std) = match mode {
            Mode::Train => {
                if n < 2 {
                    return Err(Error::BatchSize(n));
                }
                let mut mean = vec![0.0; d];
                for row in x.data().chunks_exact(d) {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let mut var = vec![0.0; d];
                for row in x.data().chunks_exact(d) {
                    for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s /= n as f64);
                let unbiased = n as f64 / (n as f64 - 1.0);
                let mom = self.momentum;
                for j in 0..d {
                    let rm = &mut self.running_mean.data_mut()[j];
                    *rm = (1.0 - mom) * *rm + mom * mean[j];
                    let rv = &mut self.running_var.data_mut()[j];
                    *rv = (1.0 - mom) * *rv + mom * var[j] * unbiased;
                }
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
                let mut xhat = x.data().to_vec();
                for row in xhat.chunks_exact_mut(d) {
                    for j in 0..d {
                        row[j] = (row[j] - mean[j]) * inv_std[j];
                    }
                }
                (xhat, inv_std)
            }
            Mode::Infer => {
                let inv_std: Vec<f64> =
                    self.running_var.data().iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
                let xhat = self.normalize_running(x.data(), d, &inv_std);
                (xhat, inv_std)
            }
        };
        let y = self.affine(&xhat, d);
        self.cache = Some(BnCache { mode, xhat, inv_std, n });
        Tensor::new(vec![n, d], y)
    }

    pub fn forward_infer(&self, x: &Tensor) -> Result<Tensor> {
        let (n, d) = self.check(x)?;
        let inv_std: Vec<f64> = self.running_var.data().iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let xhat = self.normalize_running(x.data(), d, &inv_std);
        Tensor::new(vec![n, d], self.affine(&xhat, d))
    }

    fn normalize_running(&self, x: &[f64], d: usize, inv_std: &[f64]) -> Vec<f64> {
        let mean = self.running_mean.data();
        let mut xhat = x.to_vec();
        for row in xhat.chunks_exact_mut(d) {
            for j in 0..d {
                row[j] = (row[j] - mean[j]) * inv_std[j];
            }
        }
        xhat
    }

    fn affine(&self, xhat: &[f64], d: usize) -> Vec<f64> {
        let (g, b) = (self.gamma.data(), self.beta.data());
        let mut y = xhat.to_vec();
        for row in y.chunks_exact_mut(d) {
            for j in 0..d {
                row[j] = row[j] * g[j] + b[j];
            }
        }
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let cache = self.cache.take().ok_or(Error::Pipeline("batch-norm backward before forward".into()))?;
        let (n, d) = (cache.n, self.dim());
        if dy.shape() != [n, d] {
            return Err(Error::Dimension(format!("batch-norm backward: dy {:?}", dy.shape())));
        }
        let mut dgamma = vec![0.0; d];
        let mut dbeta = vec![0.0; d];
        for (row, xh) in dy.data().chunks_exact(d).zip(cache.xhat.chunks_exact(d)) {
            for j in 0..d {
                dgamma[j] += row[j] * xh[j];
                dbeta[j] += row[j];
            }
        }
        let gamma = self.gamma.data().to_vec();
        let mut dx = vec![0.0; n * d];
        match cache.mode {
            Mode::Train => {
                // dx = γ·inv_std/N · (N·dy − Σdy − x̂·Σ(dy·x̂))
                let nf = n as f64;
                for i in 0..n {
                    for j in 0..d {
                        let k = i * d + j;
                        dx[k] = gamma[j] * cache.inv_std[j] / nf
                            * (nf * dy.data()[k] - dbeta[j] - cache.xhat[k] * dgamma[j]);
                    }
                }
            }
            Mode::Infer => {
                for i in 0..n {
                    for j in 0..d {
                        let k = i * d + j;
                        dx[k] = dy.data()[k] * gamma[j] * cache.inv_std[j];
                    }
                }
            }
        }
        for (g, v) in self.gamma.grad_mut().iter_mut().zip(&dgamma) {
            *g += v;
        }
        for (g, v) in self.beta.grad_mut().iter_mut().zip(&dbeta) {
            *g += v;
        }
        Tensor::new(vec![n, d], dx)
    }
}

impl Module for BatchNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        f(join(prefix, "gamma"), &self.gamma);
        f(join(prefix, "beta"), &self.beta);
        f(join(prefix, "running_mean"), &self.running_mean);
        f(join(prefix, "running_var"), &self.running_var);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "gamma"), &mut self.gamma);
        f(join(prefix, "beta"), &mut self.beta);
        f(join(prefix, "running_mean"), &mut self.running_mean);
        f(join(prefix, "running_var"), &mut self.running_var);
    }
}

/// Element-wise non-linearities.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    /// `x / (1 + |x|)`, the smooth stand-in for `sign` during training.
    Softsign,
    /// `+1` if `x > 0`, else `-1`. Inference only.
    Sign,
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(0.0),
            Activation::Softsign => v / (1.0 + v.abs()),
            Activation::Sign => {
                if v > 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }

    pub fn forward(self, x: &Tensor) -> Tensor {
        x.map(|v| self.apply(v))
    }

    /// `dL/dx` given the layer input `x`, its output `y` and `dL/dy`.
    pub fn backward(self, x: &Tensor, y: &Tensor, dy: &Tensor) -> Result<Tensor> {
        if x.shape() != dy.shape() || y.shape() != dy.shape() {
            return Err(Error::Dimension("activation backward shape mismatch".into()));
        }
        let grad = |i: usize| -> f64 {
            let (xv, yv) = (x.data()[i], y.data()[i]);
            match self {
                Activation::Tanh => 1.0 - yv * yv,
                Activation::Relu => {
                    if xv > 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                }
                Activation::Softsign => {
                    let d = 1.0 + xv.abs();
                    1.0 / (d * d)
                }
                Activation::Sign => unreachable!(),
            }
        };
        if self == Activation::Sign {
            return Err(Error::UnsupportedGradient("sign activation"));
        }
        let data = (0..dy.len()).map(|i| dy.data()[i] * grad(i)).collect();
        Tensor::new(dy.shape().to_vec(), data)
    }
}

pub fn tanh_act(x: &Tensor) -> Tensor {
    Activation::Tanh.forward(x)
}

pub fn relu_act(x: &Tensor) -> Tensor {
    Activation::Relu.forward(x)
}

pub fn softsign_act(x: &Tensor) -> Tensor {
    Activation::Softsign.forward(x)
}

pub fn sign_act(x: &Tensor) -> Tensor {
    Activation::Sign.forward(x)
}
