//! Training objective: batch-hard triplet, identity classifier and the
//! top-k ranking regularizer, summed over the four exits.

pub mod classifier;
pub mod ranking;
pub mod sampler;
pub mod triplet;

use serde::{Deserialize, Serialize};

use crate::encoder::{ExitGrads, ForwardOutput};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub use classifier::classifier_nll;
pub use ranking::{ranking_regularizer, RankingConfig, RankingLoss};
pub use sampler::{PkBatch, PkSampler};
pub use triplet::triplet_batch_hard;

/// A scalar loss and its gradient with respect to the input.
#[derive(Clone, Debug)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub triplet: f64,
    pub classifier: f64,
    pub ranking: f64,
    pub margin: f64,
    pub top_k: usize,
    pub normalize_gram: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { triplet: 0.35, classifier: 1.0, ranking: 100.0, margin: 0.2, top_k: 5, normalize_gram: true }
    }
}

impl LossWeights {
    pub fn ranking_config(&self) -> RankingConfig {
        RankingConfig { top_k: self.top_k, normalize: self.normalize_gram }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ExitLoss {
    pub triplet: f64,
    pub classifier: f64,
    pub ranking: f64,
    /// Weighted sum of the three terms.
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct CombinedLoss {
    pub total: f64,
    pub per_exit: Vec<ExitLoss>,
    pub grads: Vec<ExitGrads>,
}

/// Per exit: `w_t·triplet(pooled) + w_c·nll(logits) + w_r·ranking(pooled, hash)`.
/// Terms with zero weight are skipped.
pub fn combined_loss(out: &ForwardOutput, labels: &[u32], w: &LossWeights) -> Result<CombinedLoss> {
    if out.exits.len() != out.pooled.len() {
        return Err(Error::Dimension("exit outputs not aligned with pooled features".into()));
    }
    let mut total = 0.0;
    let mut per_exit = Vec::with_capacity(out.exits.len());
    let mut grads = Vec::with_capacity(out.exits.len());
    for (exit, pooled) in out.exits.iter().zip(&out.pooled) {
        let mut term = ExitLoss::default();
        let mut g = ExitGrads::default();
        if w.triplet != 0.0 {
            let mut l = triplet_batch_hard(pooled, labels, w.margin)?;
            term.triplet = l.value;
            l.grad.scale(w.triplet);
            g.d_pooled = Some(l.grad);
        }
        if w.classifier != 0.0 {
            let logits = exit.logits.as_ref().ok_or(Error::Pipeline("classifier loss needs train-mode logits".into()))?;
            let mut l = classifier_nll(logits, labels)?;
            term.classifier = l.value;
            l.grad.scale(w.classifier);
            g.d_logits = Some(l.grad);
        }
        if w.ranking != 0.0 {
            let mut l = ranking_regularizer(pooled, &exit.hash, w.ranking_config())?;
            term.ranking = l.value;
            l.d_ori.scale(w.ranking);
            l.d_hash.scale(w.ranking);
            match g.d_pooled.as_mut() {
                Some(d) => d.add_assign(&l.d_ori)?,
                None => g.d_pooled = Some(l.d_ori),
            }
            g.d_hash = Some(l.d_hash);
        }
        term.total = w.triplet * term.triplet + w.classifier * term.classifier + w.ranking * term.ranking;
        if !term.total.is_finite() {
            return Err(Error::NonFinite(format!("stage-{} loss", exit.stage)));
        }
        total += term.total;
        per_exit.push(term);
        grads.push(g);
    }
    Ok(CombinedLoss { total, per_exit, grads })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{Encoder, EncoderConfig, Preset};
    use crate::numerics::{check_gradients, Mode, Module};
    use crate::rng::substream;
    use rand::Rng;

    fn toy_batch(n: usize, seed: u64) -> Tensor {
        let mut rng = substream(seed, "loss-input");
        Tensor::new(vec![n, 32, 16, 3], (0..n * 32 * 16 * 3).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn triplet_only_reduces_to_sum_over_exits() {
        let mut enc = Encoder::new(EncoderConfig::preset(Preset::Toy, 4), &mut substream(1, "init")).unwrap();
        let labels = [0, 0, 1, 1, 2, 2, 3, 3];
        let out = enc.forward_all(&toy_batch(8, 2), Mode::Train).unwrap();
        let w = LossWeights { classifier: 0.0, ranking: 0.0, triplet: 1.0, ..LossWeights::default() };
        let c = combined_loss(&out, &labels, &w).unwrap();
        let want: f64 = out.pooled.iter().map(|p| triplet_batch_hard(p, &labels, 0.2).unwrap().value).sum();
        assert!((c.total - want).abs() < 1e-15);
    }

    #[test]
    fn needs_train_logits() {
        let enc = Encoder::new(EncoderConfig::preset(Preset::Toy, 4), &mut substream(1, "init")).unwrap();
        let out = enc.forward_infer(&toy_batch(8, 2)).unwrap();
        assert!(matches!(combined_loss(&out, &[0, 0, 1, 1, 2, 2, 3, 3], &LossWeights::default()), Err(Error::Pipeline(_))));
    }

    /// Full objective through the whole network on an 8-sample batch.
    #[test]
    fn end_to_end_gradient_check_on_exit_weights() {
        let mut enc = Encoder::new(EncoderConfig::preset(Preset::Toy, 4), &mut substream(5, "init")).unwrap();
        let x = toy_batch(8, 6);
        let labels = [0, 0, 1, 1, 2, 2, 3, 3];
        let w = LossWeights { margin: 50.0, ..LossWeights::default() };
        for name in ["exit2.proj.weight", "exit4.bn.gamma", "stage1.mix.weight"] {
            let mut theta0 = Vec::new();
            enc.visit("", &mut |n, t| {
                if n == name {
                    theta0 = t.data()[..40].to_vec();
                }
            });
            assert_eq!(theta0.len(), 40);
            let err = check_gradients(
                |v| {
                    enc.visit_mut("", &mut |n, t| {
                        if n == name {
                            t.data_mut()[..40].copy_from_slice(v);
                        }
                    });
                    enc.zero_grad();
                    let out = enc.forward_all(&x, Mode::Train).unwrap();
                    let c = combined_loss(&out, &labels, &w).unwrap();
                    enc.backward(&c.grads).unwrap();
                    let mut g = Vec::new();
                    enc.visit("", &mut |n, t| {
                        if n == name {
                            g = t.grad().unwrap()[..40].to_vec();
                        }
                    });
                    (c.total, g)
                },
                &theta0,
                1e-6,
            );
            assert!(err < 1e-4, "{name}: {err}");
        }
    }
}
