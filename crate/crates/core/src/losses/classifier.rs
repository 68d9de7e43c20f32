use super::LossGrad;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
pub fn classifier_nll(logits: &Tensor, labels: &[u32]) -> Result<LossGrad> {
    let (n, classes) = logits.expect_2d("logits")?;
    if labels.len() != n {
        return Err(Error::Dimension(format!("{} labels for {n} logit rows", labels.len())));
    }
    let mut value = 0.0;
    let mut grad = vec![0.0; n * classes];
    for (i, &label) in labels.iter().enumerate() {
        let y = label as usize;
        if y >= classes {
            return Err(Error::Label { label: y, classes });
        }
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        value += log_z - row[y];
        let g = &mut grad[i * classes..(i + 1) * classes];
        for (c, gv) in g.iter_mut().enumerate() {
            *gv = ((row[c] - log_z).exp() - if c == y { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    Ok(LossGrad { value: value / n as f64, grad: Tensor::new(vec![n, classes], grad)? })
}
