use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::tensor::{matmul, matmul_a_bt, matmul_at_b_acc};
use crate::numerics::{Activation, Linear, Module, Tensor};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::param(shape, (0..n).map(|_| rng.random_range(-bound..bound)).collect()).expect("consistent shape")
}

#[derive(Clone, Debug)]
struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    rh: Vec<f64>,
}

/// Gated recurrent layer:
/// `z = σ(x·Wz + h·Uz + bz)`, `r = σ(x·Wr + h·Ur + br)`,
/// `n = tanh(x·Wn + (r⊙h)·Un + bn)`, `h' = (1−z)⊙n + z⊙h`.
#[derive(Clone, Debug)]
pub struct GruLayer {
    d_in: usize,
    hidden: usize,
    w: [Tensor; 3],
    u: [Tensor; 3],
    b: [Tensor; 3],
    cache: Vec<StepCache>,
    batch: usize,
}

const GATES: [&str; 3] = ["z", "r", "n"];

impl GruLayer {
    pub fn new(d_in: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w = std::array::from_fn(|_| uniform(&[d_in, hidden], bound, rng));
        let u = std::array::from_fn(|_| uniform(&[hidden, hidden], bound, rng));
        let b = std::array::from_fn(|_| uniform(&[hidden], bound, rng));
        Self { d_in, hidden, w, u, b, cache: Vec::new(), batch: 0 }
    }

    fn step(&self, x: &[f64], h_prev: &[f64], bsz: usize) -> StepCache {
        let (d, h) = (self.d_in, self.hidden);
        let pre = |g: usize, hv: &[f64]| {
            let mut a = matmul(x, self.w[g].data(), bsz, d, h);
            let c = matmul(hv, self.u[g].data(), bsz, h, h);
            for (i, v) in a.iter_mut().enumerate() {
                *v += c[i] + self.b[g].data()[i % h];
            }
            a
        };
        let z: Vec<f64> = pre(0, h_prev).into_iter().map(sigmoid).collect();
        let r: Vec<f64> = pre(1, h_prev).into_iter().map(sigmoid).collect();
        let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
        let n: Vec<f64> = pre(2, &rh).into_iter().map(f64::tanh).collect();
        StepCache { x: x.to_vec(), h_prev: h_prev.to_vec(), z, r, n, rh }
    }

    fn output(c: &StepCache) -> Vec<f64> {
        (0..c.z.len()).map(|i| (1.0 - c.z[i]) * c.n[i] + c.z[i] * c.h_prev[i]).collect()
    }

    /// Runs a sequence of `B×d_in` inputs from a zero state; returns every hidden state.
    pub fn forward(&mut self, xs: &[Vec<f64>], bsz: usize) -> Vec<Vec<f64>> {
        self.cache.clear();
        self.batch = bsz;
        let mut h = vec![0.0; bsz * self.hidden];
        let mut out = Vec::with_capacity(xs.len());
        for x in xs {
            let c = self.step(x, &h, bsz);
            h = Self::output(&c);
            self.cache.push(c);
            out.push(h.clone());
        }
        out
    }

    pub fn forward_infer(&self, xs: &[Vec<f64>], bsz: usize) -> Vec<Vec<f64>> {
        let mut h = vec![0.0; bsz * self.hidden];
        xs.iter()
            .map(|x| {
                h = Self::output(&self.step(x, &h, bsz));
                h.clone()
            })
            .collect()
    }

    /// Back-propagation through time. `dhs[t]` is the loss gradient on the
    /// `t`-th hidden state; returns gradients on the inputs.
    pub fn backward(&mut self, dhs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if dhs.len() != self.cache.len() {
            return Err(Error::Pipeline("recurrent backward does not match the cached sequence".into()));
        }
        let (d, h, bsz) = (self.d_in, self.hidden, self.batch);
        let mut carry = vec![0.0; bsz * h];
        let mut dxs = vec![Vec::new(); dhs.len()];
        for t in (0..dhs.len()).rev() {
            let c = &self.cache[t];
            let dh: Vec<f64> = dhs[t].iter().zip(&carry).map(|(a, b)| a + b).collect();
            let mut dh_prev: Vec<f64> = dh.iter().zip(&c.z).map(|(g, z)| g * z).collect();
            let da_n: Vec<f64> = (0..dh.len()).map(|i| dh[i] * (1.0 - c.z[i]) * (1.0 - c.n[i] * c.n[i])).collect();
            let da_z: Vec<f64> =
                (0..dh.len()).map(|i| dh[i] * (c.h_prev[i] - c.n[i]) * c.z[i] * (1.0 - c.z[i])).collect();
            let drh = matmul_a_bt(&da_n, self.u[2].data(), bsz, h, h);
            let da_r: Vec<f64> = (0..dh.len()).map(|i| drh[i] * c.h_prev[i] * c.r[i] * (1.0 - c.r[i])).collect();
            for i in 0..dh_prev.len() {
                dh_prev[i] += drh[i] * c.r[i];
            }
            let mut dx = vec![0.0; bsz * d];
            for (g, da) in [&da_z, &da_r, &da_n].into_iter().enumerate() {
                matmul_at_b_acc(self.w[g].grad_mut(), &c.x, da, bsz, d, h);
                let h_in = if g == 2 { &c.rh } else { &c.h_prev };
                matmul_at_b_acc(self.u[g].grad_mut(), h_in, da, bsz, h, h);
                let gb = self.b[g].grad_mut();
                for (i, v) in da.iter().enumerate() {
                    gb[i % h] += v;
                }
                for (acc, v) in dx.iter_mut().zip(matmul_a_bt(da, self.w[g].data(), bsz, h, d)) {
                    *acc += v;
                }
                if g < 2 {
                    for (acc, v) in dh_prev.iter_mut().zip(matmul_a_bt(da, self.u[g].data(), bsz, h, h)) {
                        *acc += v;
                    }
                }
            }
            dxs[t] = dx;
            carry = dh_prev;
        }
        self.cache.clear();
        Ok(dxs)
    }
}

impl Module for GruLayer {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        for (g, name) in GATES.iter().enumerate() {
            f(format!("{prefix}.w{name}"), &self.w[g]);
            f(format!("{prefix}.u{name}"), &self.u[g]);
            f(format!("{prefix}.b{name}"), &self.b[g]);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        for (g, name) in GATES.iter().enumerate() {
            f(format!("{prefix}.w{name}"), &mut self.w[g]);
            f(format!("{prefix}.u{name}"), &mut self.u[g]);
            f(format!("{prefix}.b{name}"), &mut self.b[g]);
        }
    }
}

/// Sequence classifier over `[query, top-1, …, top-4]` feature vectors:
/// query-relative neighbour encoding, input standardisation, two stacked
/// recurrent layers, `FC → ReLU → FC(3)`.
#[derive(Clone, Debug)]
pub struct EtsClassifier {
    d_in: usize,
    mean: Tensor,
    std: Tensor,
    layers: [GruLayer; 2],
    fc: Linear,
    out: Linear,
    /// 1 for labels seen in training, 0 for labels never to predict.
    present: Tensor,
    head_cache: Option<(Tensor, Tensor)>,
}

pub const SEQ_LEN: usize = 5;

impl EtsClassifier {
    pub fn new(d_in: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let layers = [GruLayer::new(d_in, hidden, rng), GruLayer::new(hidden, hidden, rng)];
        Self {
            d_in,
            mean: Tensor::zeros(&[2 * d_in]),
            std: Tensor::filled(&[2 * d_in], 1.0),
            layers,
            fc: Linear::new(hidden, hidden, rng),
            out: Linear::new(hidden, 3, rng),
            present: Tensor::filled(&[3], 1.0),
            head_cache: None,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.d_in
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].hidden
    }

    pub fn set_present(&mut self, present: [bool; 3]) {
        for (m, p) in self.present.data_mut().iter_mut().zip(present) {
            *m = if p { 1.0 } else { 0.0 };
        }
    }

    pub fn is_present(&self, label: usize) -> bool {
        self.present.data()[label] != 0.0
    }

    /// Step `t`, feature `k` of a flattened sequence as the network sees it:
    /// the query as is, every neighbour as its offset from the query.
    fn encoded(&self, s: &[f64], t: usize, k: usize) -> f64 {
        let d = self.d_in;
        if t == 0 {
            s[k]
        } else {
            s[t * d + k] - s[k]
        }
    }

    /// Sets the standardisation statistics from flattened `SEQ_LEN × d`
    /// sequences, separately for the query step and the neighbour offsets.
    pub fn fit_standardization(&mut self, seqs: &[Vec<f64>]) {
        let d = self.d_in;
        if seqs.is_empty() {
            return;
        }
        let counts = [seqs.len() as f64, (seqs.len() * (SEQ_LEN - 1)) as f64];
        let row = |t: usize| usize::from(t > 0);
        let mut mean = vec![0.0; 2 * d];
        for s in seqs {
            for t in 0..SEQ_LEN {
                for k in 0..d {
                    mean[row(t) * d + k] += self.encoded(s, t, k);
                }
            }
        }
        for (i, m) in mean.iter_mut().enumerate() {
            *m /= counts[i / d];
        }
        let mut var = vec![0.0; 2 * d];
        for s in seqs {
            for t in 0..SEQ_LEN {
                for k in 0..d {
                    let i = row(t) * d + k;
                    var[i] += (self.encoded(s, t, k) - mean[i]).powi(2);
                }
            }
        }
        let std: Vec<f64> = var.iter().enumerate().map(|(i, v)| (v / counts[i / d]).sqrt().max(1e-6)).collect();
        self.mean = Tensor::new(vec![2 * d], mean).expect("consistent shape");
        self.std = Tensor::new(vec![2 * d], std).expect("consistent shape");
    }

    /// Time-major standardised inputs from flattened sequences.
    fn steps(&self, seqs: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let d = self.d_in;
        if let Some(s) = seqs.iter().find(|s| s.len() != SEQ_LEN * d) {
            return Err(Error::Dimension(format!("sequence of {} values, expected {SEQ_LEN}×{d}", s.len())));
        }
        let (mean, std) = (self.mean.data(), self.std.data());
        Ok((0..SEQ_LEN)
            .map(|t| {
                let off = usize::from(t > 0) * d;
                seqs.iter()
                    .flat_map(|s| (0..d).map(move |k| (self.encoded(s, t, k) - mean[off + k]) / std[off + k]))
                    .collect()
            })
            .collect())
    }

    pub fn forward(&mut self, seqs: &[&[f64]]) -> Result<Tensor> {
        let bsz = seqs.len();
        let h1 = self.layers[0].forward(&self.steps(seqs)?, bsz);
        let h2 = self.layers[1].forward(&h1, bsz);
        let last = Tensor::new(vec![bsz, self.hidden()], h2[SEQ_LEN - 1].clone())?;
        let pre = self.fc.forward(&last)?;
        let act = Activation::Relu.forward(&pre);
        let logits = self.out.forward(&act)?;
        self.head_cache = Some((pre, act));
        Ok(logits)
    }

    pub fn logits(&self, seqs: &[&[f64]]) -> Result<Tensor> {
        let bsz = seqs.len();
        let h1 = self.layers[0].forward_infer(&self.steps(seqs)?, bsz);
        let h2 = self.layers[1].forward_infer(&h1, bsz);
        let last = Tensor::new(vec![bsz, self.hidden()], h2[SEQ_LEN - 1].clone())?;
        let act = Activation::Relu.forward(&self.fc.forward_infer(&last)?);
        self.out.forward_infer(&act)
    }

    pub fn backward(&mut self, d_logits: &Tensor) -> Result<()> {
        let (pre, act) = self.head_cache.take().ok_or(Error::Pipeline("classifier backward before forward".into()))?;
        let d_act = self.out.backward(d_logits)?;
        let d_pre = Activation::Relu.backward(&pre, &act, &d_act)?;
        let d_last = self.fc.backward(&d_pre)?;
        let mut dh2 = vec![vec![0.0; d_last.len()]; SEQ_LEN];
        dh2[SEQ_LEN - 1] = d_last.into_data();
        let dh1 = self.layers[1].backward(&dh2)?;
        self.layers[0].backward(&dh1)?;
        Ok(())
    }
}

impl Module for EtsClassifier {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        f(format!("{prefix}input.mean"), &self.mean);
        f(format!("{prefix}input.std"), &self.std);
        self.layers[0].visit(&format!("{prefix}gru1"), f);
        self.layers[1].visit(&format!("{prefix}gru2"), f);
        self.fc.visit(&format!("{prefix}head.fc"), f);
        self.out.visit(&format!("{prefix}head.out"), f);
        f(format!("{prefix}head.present"), &self.present);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(format!("{prefix}input.mean"), &mut self.mean);
        f(format!("{prefix}input.std"), &mut self.std);
        self.layers[0].visit_mut(&format!("{prefix}gru1"), f);
        self.layers[1].visit_mut(&format!("{prefix}gru2"), f);
        self.fc.visit_mut(&format!("{prefix}head.fc"), f);
        self.out.visit_mut(&format!("{prefix}head.out"), f);
        f(format!("{prefix}head.present"), &mut self.present);
    }
}
