use super::LossGrad;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn distance_matrix(feats: &Tensor) -> Vec<f64> {
    let n = feats.rows();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = euclidean(feats.row(i), feats.row(j));
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Per-anchor hardest positive and hardest negative; lowest index wins ties.
pub fn hardest_pairs(dist: &[f64], labels: &[u32]) -> Result<Vec<(usize, usize)>> {
    let n = labels.len();
    (0..n)
        .map(|a| {
            let mut pos: Option<usize> = None;
            let mut neg: Option<usize> = None;
            for j in 0..n {
                if j == a {
                    continue;
                }
                let d = dist[a * n + j];
                if labels[j] == labels[a] {
                    if pos.is_none_or(|p| d > dist[a * n + p]) {
                        pos = Some(j);
                    }
                } else if neg.is_none_or(|q| d < dist[a * n + q]) {
                    neg = Some(j);
                }
            }
            match (pos, neg) {
                (Some(p), Some(q)) => Ok((p, q)),
                (None, _) => Err(Error::Sampling(format!("anchor {a} (identity {}) has no positive", labels[a]))),
                (_, None) => Err(Error::Sampling("batch holds a single identity".into())),
            }
        })
        .collect()
}

/// Batch-hard triplet loss, averaged over anchors, on Euclidean distances.
pub fn triplet_batch_hard(feats: &Tensor, labels: &[u32], margin: f64) -> Result<LossGrad> {
    let (n, dim) = feats.expect_2d("triplet features")?;
    if labels.len() != n {
        return Err(Error::Dimension(format!("{} labels for {n} features", labels.len())));
    }
    let dist = distance_matrix(feats);
    let pairs = hardest_pairs(&dist, labels)?;
    let mut value = 0.0;
    let mut grad = vec![0.0; n * dim];
    let scale = 1.0 / n as f64;
    for (a, &(p, q)) in pairs.iter().enumerate() {
        let hinge = dist[a * n + p] - dist[a * n + q] + margin;
        if hinge <= 0.0 {
            continue;
        }
        value += hinge;
        // ∂d(a,b)/∂a = (a − b)/d; zero at coincident points.
        for (other, sign) in [(p, 1.0), (q, -1.0)] {
            let d = dist[a * n + other];
            if d <= 0.0 {
                continue;
            }
            for k in 0..dim {
                let g = sign * scale * (feats.data()[a * dim + k] - feats.data()[other * dim + k]) / d;
                grad[a * dim + k] += g;
                grad[other * dim + k] -= g;
            }
        }
    }
    Ok(LossGrad { value: value * scale, grad: Tensor::new(vec![n, dim], grad)? })
}
