use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Linear, Module, Tensor};

/// Strided patch-mixing layer: each non-overlapping `ph × pw` patch is
/// flattened, mapped through a shared linear layer and rectified.
#[derive(Clone, Debug)]
pub struct PatchMix {
    pub ph: usize,
    pub pw: usize,
    pub linear: Linear,
    cache: Option<(Vec<usize>, Tensor)>,
}

impl PatchMix {
    pub fn new(ph: usize, pw: usize, in_c: usize, out_c: usize, rng: &mut impl Rng) -> Self {
        let mut linear = Linear::new(ph * pw * in_c, out_c, rng);
        // He scaling for the ReLU that follows.
        linear.weight.scale(2f64.sqrt());
        Self { ph, pw, linear, cache: None }
    }

    /// Weights that average each channel over its patch (requires `in_c == out_c`).
    pub fn averaging(ph: usize, pw: usize, channels: usize) -> Self {
        let d_in = ph * pw * channels;
        let mut w = vec![0.0; d_in * channels];
        for p in 0..ph * pw {
            for c in 0..channels {
                w[(p * channels + c) * channels + c] = 1.0 / (ph * pw) as f64;
            }
        }
        let linear = Linear::from_params(
            Tensor::new(vec![d_in, channels], w).expect("consistent shape"),
            Tensor::zeros(&[channels]),
        )
        .expect("consistent shape");
        Self { ph, pw, linear, cache: None }
    }

    pub fn in_channels(&self) -> usize {
        self.linear.d_in() / (self.ph * self.pw)
    }

    pub fn out_channels(&self) -> usize {
        self.linear.d_out()
    }

    fn patches(&self, x: &Tensor) -> Result<(Tensor, [usize; 3])> {
        let s = x.shape();
        if s.len() != 4 {
            return Err(Error::Dimension(format!("feature map must be N×H×W×C, got {s:?}")));
        }
        let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
        if c != self.in_channels() || h % self.ph != 0 || w % self.pw != 0 {
            return Err(Error::Dimension(format!(
                "patch-mix {}x{} over {} channels cannot consume {h}x{w}x{c}",
                self.ph,
                self.pw,
                self.in_channels()
            )));
        }
        let (ho, wo) = (h / self.ph, w / self.pw);
        let d = self.ph * self.pw * c;
        let src = x.data();
        let mut out = vec![0.0; n * ho * wo * d];
        for b in 0..n {
            for i in 0..ho {
                for j in 0..wo {
                    let row = ((b * ho + i) * wo + j) * d;
                    for dy in 0..self.ph {
                        let y = i * self.ph + dy;
                        for dx in 0..self.pw {
                            let xx = j * self.pw + dx;
                            let from = ((b * h + y) * w + xx) * c;
                            let to = row + (dy * self.pw + dx) * c;
                            out[to..to + c].copy_from_slice(&src[from..from + c]);
                        }
                    }
                }
            }
        }
        Ok((Tensor::new(vec![n * ho * wo, d], out)?, [n, ho, wo]))
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (p, [n, ho, wo]) = self.patches(x)?;
        let z = self.linear.forward(&p)?;
        let y = z.map(|v| v.max(0.0));
        self.cache = Some((x.shape().to_vec(), z));
        y.reshape(vec![n, ho, wo, self.out_channels()])
    }

    pub fn forward_infer(&self, x: &Tensor) -> Result<Tensor> {
        let (p, [n, ho, wo]) = self.patches(x)?;
        let y = self.linear.forward_infer(&p)?.map(|v| v.max(0.0));
        y.reshape(vec![n, ho, wo, self.out_channels()])
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let (in_shape, z) = self.cache.take().ok_or(Error::Pipeline("patch-mix backward before forward".into()))?;
        if dy.len() != z.len() {
            return Err(Error::Dimension("patch-mix backward: gradient shape".into()));
        }
        let dz: Vec<f64> = dy.data().iter().zip(z.data()).map(|(g, v)| if *v > 0.0 { *g } else { 0.0 }).collect();
        let dz = Tensor::new(z.shape().to_vec(), dz)?;
        let dp = self.linear.backward(&dz)?;
        let (n, h, w, c) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
        let (ho, wo) = (h / self.ph, w / self.pw);
        let d = self.ph * self.pw * c;
        let mut dx = vec![0.0; n * h * w * c];
        let src = dp.data();
        for b in 0..n {
            for i in 0..ho {
                for j in 0..wo {
                    let row = ((b * ho + i) * wo + j) * d;
                    for dy_ in 0..self.ph {
                        for dx_ in 0..self.pw {
                            let to = ((b * h + i * self.ph + dy_) * w + j * self.pw + dx_) * c;
                            let from = row + (dy_ * self.pw + dx_) * c;
                            dx[to..to + c].copy_from_slice(&src[from..from + c]);
                        }
                    }
                }
            }
        }
        Tensor::new(in_shape, dx)
    }
}

impl Module for PatchMix {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.linear.visit(prefix, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.linear.visit_mut(prefix, f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::check_gradients;
    use crate::rng::substream;

    #[test]
    fn averaging_weights_reproduce_average_pooling() {
        let mix = PatchMix::averaging(2, 2, 1);
        let x = Tensor::new(vec![1, 4, 2, 1], vec![1.0, 2.0, 3.0, 4.0, 0.0, 8.0, 2.0, 2.0]).unwrap();
        let y = mix.forward_infer(&x).unwrap();
        assert_eq!(y.shape(), &[1, 2, 1, 1]);
        assert_eq!(y.data(), &[2.5, 3.0]);
    }

    #[test]
    fn gradient_check() {
        let mut rng = substream(3, "init");
        let mut mix = PatchMix::new(2, 2, 2, 3, &mut rng);
        let x0: Vec<f64> = (0..2 * 4 * 4 * 2).map(|i| ((i * 37) % 17) as f64 / 8.0 - 1.0).collect();
        let w: Vec<f64> = (0..2 * 2 * 2 * 3).map(|i| ((i * 5) % 7) as f64 - 3.0).collect();
        let err = check_gradients(
            |v| {
                let x = Tensor::new(vec![2, 4, 4, 2], v.to_vec()).unwrap();
                let y = mix.forward(&x).unwrap();
                let val = y.data().iter().zip(&w).map(|(a, b)| a * b).sum();
                let dy = Tensor::new(y.shape().to_vec(), w.clone()).unwrap();
                (val, mix.backward(&dy).unwrap().into_data())
            },
            &x0,
            1e-6,
        );
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn rejects_indivisible_maps() {
        let mix = PatchMix::new(2, 2, 1, 1, &mut substream(0, "x"));
        let x = Tensor::zeros(&[1, 3, 2, 1]);
        assert!(mix.forward_infer(&x).is_err());
    }
}
