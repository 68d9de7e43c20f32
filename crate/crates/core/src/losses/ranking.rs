use super::triplet::euclidean;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankingConfig {
    /// Neighbours per anchor whose similarities are matched.
    pub top_k: usize,
    /// Use cosine similarity (row-normalised Gram entries); otherwise raw
    /// inner products divided by the feature width.
    pub normalize: bool,
}

impl Default for RankingConfig {
    fn default() -> Self {
        Self { top_k: 5, normalize: true }
    }
}

#[derive(Clone, Debug)]
pub struct RankingLoss {
    pub value: f64,
    pub d_ori: Tensor,
    pub d_hash: Tensor,
}

/// The `top_k` nearest other rows of each anchor by Euclidean distance on
/// `feats`; lowest index wins ties.
pub fn nearest_neighbors(feats: &Tensor, top_k: usize) -> Vec<Vec<usize>> {
    let n = feats.rows();
    (0..n)
        .map(|i| {
            let mut cand: Vec<(f64, usize)> =
                (0..n).filter(|&j| j != i).map(|j| (euclidean(feats.row(i), feats.row(j)), j)).collect();
            cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            cand.into_iter().take(top_k).map(|(_, j)| j).collect()
        })
        .collect()
}

pub(crate) fn unit_rows(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (x.rows(), x.cols());
    let mut out = x.data().to_vec();
    let mut norms = vec![0.0; n];
    for i in 0..n {
        let row = &mut out[i * d..(i + 1) * d];
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        norms[i] = norm;
        if norm > 1e-12 {
            row.iter_mut().for_each(|v| *v /= norm);
        } else {
            row.fill(0.0);
        }
    }
    (out, norms)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Side {
    rows: Vec<f64>,
    norms: Vec<f64>,
    d: usize,
    normalize: bool,
}

impl Side {
    fn new(x: &Tensor, normalize: bool) -> Self {
        let d = x.cols();
        if normalize {
            let (rows, norms) = unit_rows(x);
            Self { rows, norms, d, normalize }
        } else {
            Self { rows: x.data().to_vec(), norms: Vec::new(), d, normalize }
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.d..(i + 1) * self.d]
    }

    fn sim(&self, i: usize, j: usize) -> f64 {
        let s = dot(self.row(i), self.row(j));
        if self.normalize {
            s
        } else {
            s / self.d as f64
        }
    }

    /// Maps `dL/dsim`-weighted accumulations on the (unit) rows back to the raw rows.
    fn input_grad(&self, acc: Vec<f64>) -> Vec<f64> {
        if !self.normalize {
            return acc.into_iter().map(|g| g / self.d as f64).collect();
        }
        let mut out = acc;
        for i in 0..self.norms.len() {
            let norm = self.norms[i];
            let u = self.row(i);
            let g = &mut out[i * self.d..(i + 1) * self.d];
            if norm <= 1e-12 {
                g.fill(0.0);
                continue;
            }
            let proj = dot(u, g);
            for k in 0..self.d {
                g[k] = (g[k] - u[k] * proj) / norm;
            }
        }
        out
    }
}

/// Mean over each anchor's `top_k` neighbour pairs of
/// `(sim_ori(i, j) − sim_hash(i, j))²`. Neighbours are chosen on `feat_ori`.
pub fn ranking_regularizer(feat_ori: &Tensor, feat_hash: &Tensor, cfg: RankingConfig) -> Result<RankingLoss> {
    let (n, _) = feat_ori.expect_2d("ranking original features")?;
    let (nh, _) = feat_hash.expect_2d("ranking hash features")?;
    if n != nh {
        return Err(Error::Dimension(format!("{n} original rows vs {nh} hash rows")));
    }
    if cfg.top_k == 0 || n < cfg.top_k + 1 {
        return Err(Error::Sampling(format!("ranking needs at least {} rows, got {n}", cfg.top_k + 1)));
    }
    let ori = Side::new(feat_ori, cfg.normalize);
    let hash = Side::new(feat_hash, cfg.normalize);
    let neighbors = nearest_neighbors(feat_ori, cfg.top_k);
    let count = (n * cfg.top_k) as f64;
    let mut value = 0.0;
    let mut acc_o = vec![0.0; ori.rows.len()];
    let mut acc_h = vec![0.0; hash.rows.len()];
    for (i, nb) in neighbors.iter().enumerate() {
        let mut nb = nb.clone();
        nb.sort_unstable();
        for j in nb {
            let diff = ori.sim(i, j) - hash.sim(i, j);
            value += diff * diff;
            let w = 2.0 * diff / count;
            for (side, acc, sign) in [(&ori, &mut acc_o, 1.0), (&hash, &mut acc_h, -1.0)] {
                let d = side.d;
                for k in 0..d {
                    acc[i * d + k] += sign * w * side.rows[j * d + k];
                    acc[j * d + k] += sign * w * side.rows[i * d + k];
                }
            }
        }
    }
    Ok(RankingLoss {
        value: value / count,
        d_ori: Tensor::new(feat_ori.shape().to_vec(), ori.input_grad(acc_o))?,
        d_hash: Tensor::new(feat_hash.shape().to_vec(), hash.input_grad(acc_h))?,
    })
}
