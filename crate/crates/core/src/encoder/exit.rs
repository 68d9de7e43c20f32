use rand::Rng;

use crate::error::{Error, Result};
use crate::hamming::HashCode;
use crate::numerics::{Activation, BatchNorm, Linear, Mode, Module, Tensor};

/// Output of one hash-exit block for a batch.
#[derive(Clone, Debug)]
pub struct ExitOutput {
    pub stage: u8,
    /// Pre-(soft)sign activation, `N×L`.
    pub embedding: Tensor,
    /// `softsign(embedding)` in train mode, `sign(embedding)` at inference.
    pub hash: Tensor,
    /// Identity logits of the training classifier (train mode only).
    pub logits: Option<Tensor>,
}

impl ExitOutput {
    pub fn code_len(&self) -> usize {
        self.embedding.cols()
    }

    /// Packed codes, one per row: bit set iff the embedding entry is positive.
    pub fn codes(&self) -> Result<Vec<HashCode>> {
        (0..self.embedding.rows()).map(|i| HashCode::from_signs_of(self.embedding.row(i), self.stage)).collect()
    }
}

#[derive(Clone, Debug)]
struct Bridge {
    fc: Linear,
    bn: BatchNorm,
    pre_tanh: Option<Tensor>,
    post_tanh: Option<Tensor>,
}

/// Hash-exit block.
///
/// Stages 1–2: `FC(hidden) → BN → tanh → FC(L) → BN → sign`.
/// Stages 3–4: `BN(L) → sign`, with an `FC(L)` in front only when the code
/// length differs from the stage width. A linear identity classifier sits on
/// the hash feature during training.
#[derive(Clone, Debug)]
pub struct HashExit {
    pub stage: u8,
    bridge: Option<Bridge>,
    proj: Option<Linear>,
    bn: BatchNorm,
    pub classifier: Linear,
    cache: Option<(Tensor, Tensor)>,
}

impl HashExit {
    pub fn new(stage: u8, d_in: usize, hidden: usize, code_len: usize, classes: usize, rng: &mut impl Rng) -> Self {
        let (bridge, proj) = if stage <= 2 {
            let bridge = Bridge { fc: Linear::new(d_in, hidden, rng), bn: BatchNorm::new(hidden), pre_tanh: None, post_tanh: None };
            (Some(bridge), Some(Linear::new(hidden, code_len, rng)))
        } else if code_len != d_in {
            (None, Some(Linear::new(d_in, code_len, rng)))
        } else {
            (None, None)
        };
        Self { stage, bridge, proj, bn: BatchNorm::new(code_len), classifier: Linear::new(code_len, classes, rng), cache: None }
    }

    pub fn input_dim(&self) -> usize {
        match (&self.bridge, &self.proj) {
            (Some(b), _) => b.fc.d_in(),
            (None, Some(p)) => p.d_in(),
            (None, None) => self.bn.dim(),
        }
    }

    pub fn code_len(&self) -> usize {
        self.bn.dim()
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<ExitOutput> {
        self.check_input(x)?;
        let mut h = x.clone();
        if let Some(b) = self.bridge.as_mut() {
            let z = b.bn.forward(&b.fc.forward(&h)?, mode)?;
            let t = Activation::Tanh.forward(&z);
            b.pre_tanh = Some(z);
            b.post_tanh = Some(t.clone());
            h = t;
        }
        if let Some(p) = self.proj.as_mut() {
            h = p.forward(&h)?;
        }
        let embedding = self.bn.forward(&h, mode)?;
        embedding.ensure_finite("hash-exit embedding")?;
        let (hash, logits) = match mode {
            Mode::Train => {
                let hash = Activation::Softsign.forward(&embedding);
                let logits = self.classifier.forward(&hash)?;
                (hash, Some(logits))
            }
            Mode::Infer => (Activation::Sign.forward(&embedding), None),
        };
        self.cache = Some((embedding.clone(), hash.clone()));
        Ok(ExitOutput { stage: self.stage, embedding, hash, logits })
    }

    /// Inference pass that leaves the block untouched.
    pub fn forward_infer(&self, x: &Tensor) -> Result<ExitOutput> {
        self.check_input(x)?;
        let mut h = x.clone();
        if let Some(b) = &self.bridge {
            h = Activation::Tanh.forward(&b.bn.forward_infer(&b.fc.forward_infer(&h)?)?);
        }
        if let Some(p) = &self.proj {
            h = p.forward_infer(&h)?;
        }
        let embedding = self.bn.forward_infer(&h)?;
        embedding.ensure_finite("hash-exit embedding")?;
        let hash = Activation::Sign.forward(&embedding);
        Ok(ExitOutput { stage: self.stage, embedding, hash, logits: None })
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, d) = x.expect_2d("hash-exit input")?;
        if d != self.input_dim() {
            return Err(Error::Config(format!(
                "stage-{} exit expects {}-dim features, got {d}",
                self.stage,
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Back-propagates gradients on the hash feature and on the logits
    /// (either may be absent) and returns `dL/dinput`.
    pub fn backward(&mut self, d_hash: Option<&Tensor>, d_logits: Option<&Tensor>) -> Result<Tensor> {
        let (embedding, hash) = self.cache.take().ok_or(Error::Pipeline("hash-exit backward before forward".into()))?;
        let mut g = Tensor::zeros(hash.shape());
        if let Some(d) = d_hash {
            g.add_assign(d)?;
        }
        if let Some(d) = d_logits {
            g.add_assign(&self.classifier.backward(d)?)?;
        }
        let mut g = Activation::Softsign.backward(&embedding, &hash, &g)?;
        g = self.bn.backward(&g)?;
        if let Some(p) = self.proj.as_mut() {
            g = p.backward(&g)?;
        }
        if let Some(b) = self.bridge.as_mut() {
            let z = b.pre_tanh.take().ok_or(Error::Pipeline("bridge cache".into()))?;
            let t = b.post_tanh.take().ok_or(Error::Pipeline("bridge cache".into()))?;
            g = Activation::Tanh.backward(&z, &t, &g)?;
            g = b.bn.backward(&g)?;
            g = b.fc.backward(&g)?;
        }
        Ok(g)
    }
}

impl Module for HashExit {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        if let Some(b) = &self.bridge {
            b.fc.visit(&format!("{prefix}.bridge_fc"), f);
            b.bn.visit(&format!("{prefix}.bridge_bn"), f);
        }
        if let Some(p) = &self.proj {
            p.visit(&format!("{prefix}.proj"), f);
        }
        self.bn.visit(&format!("{prefix}.bn"), f);
        self.classifier.visit(&format!("{prefix}.classifier"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        if let Some(b) = self.bridge.as_mut() {
            b.fc.visit_mut(&format!("{prefix}.bridge_fc"), f);
            b.bn.visit_mut(&format!("{prefix}.bridge_bn"), f);
        }
        if let Some(p) = self.proj.as_mut() {
            p.visit_mut(&format!("{prefix}.proj"), f);
        }
        self.bn.visit_mut(&format!("{prefix}.bn"), f);
        self.classifier.visit_mut(&format!("{prefix}.classifier"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::check_gradients;
    use crate::rng::substream;

    fn input(n: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = substream(seed, "exit-test");
        Tensor::new(vec![n, d], (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn paper_dims_code_lengths() {
        let mut rng = substream(1, "init");
        let e1 = HashExit::new(1, 1024, 512, 256, 10, &mut rng);
        let e4 = HashExit::new(4, 2048, 512, 2048, 10, &mut rng);
        let x = input(2, 1024, 2);
        assert_eq!(e1.forward_infer(&x).unwrap().code_len(), 256);
        let x = input(2, 2048, 3);
        assert_eq!(e4.forward_infer(&x).unwrap().code_len(), 2048);
    }

    #[test]
    fn codomains() {
        let mut rng = substream(1, "init");
        let mut e = HashExit::new(2, 16, 8, 12, 5, &mut rng);
        let x = input(6, 16, 4);
        let train = e.forward(&x, Mode::Train).unwrap();
        assert!(train.hash.data().iter().all(|v| v.abs() < 1.0));
        assert_eq!(train.logits.as_ref().unwrap().shape(), &[6, 5]);
        let infer = e.forward_infer(&x).unwrap();
        assert!(infer.hash.data().iter().all(|v| *v == 1.0 || *v == -1.0));
        assert!(infer.logits.is_none());
        // code bits equal sign(embedding)
        for (i, code) in infer.codes().unwrap().iter().enumerate() {
            assert_eq!(code.unpack(), infer.hash.row(i));
        }
    }

    #[test]
    fn wrong_input_dimension() {
        let e = HashExit::new(3, 16, 8, 16, 5, &mut substream(1, "init"));
        assert!(matches!(e.forward_infer(&input(2, 15, 1)), Err(Error::Config(_))));
    }

    #[test]
    fn gradient_check_both_block_kinds() {
        for (stage, d_in, code) in [(1u8, 6usize, 4usize), (3, 5, 5), (4, 5, 3)] {
            let mut e = HashExit::new(stage, d_in, 7, code, 3, &mut substream(stage as u64, "init"));
            let x0 = input(5, d_in, 10 + stage as u64);
            let wh: Vec<f64> = (0..5 * code).map(|i| ((i * 3) % 5) as f64 - 2.0).collect();
            let wl: Vec<f64> = (0..15).map(|i| ((i * 7) % 4) as f64 - 1.5).collect();
            let err = check_gradients(
                |v| {
                    let x = Tensor::new(vec![5, d_in], v.to_vec()).unwrap();
                    let out = e.forward(&x, Mode::Train).unwrap();
                    let logits = out.logits.unwrap();
                    let val: f64 = out.hash.data().iter().zip(&wh).map(|(a, b)| a * b).sum::<f64>()
                        + logits.data().iter().zip(&wl).map(|(a, b)| a * b * a).sum::<f64>();
                    let dh = Tensor::new(vec![5, code], wh.clone()).unwrap();
                    let dl = Tensor::new(vec![5, 3], logits.data().iter().zip(&wl).map(|(a, b)| 2.0 * a * b).collect()).unwrap();
                    (val, e.backward(Some(&dh), Some(&dl)).unwrap().into_data())
                },
                x0.data(),
                1e-6,
            );
            assert!(err < 1e-4, "stage {stage}: {err}");
        }
    }
}
