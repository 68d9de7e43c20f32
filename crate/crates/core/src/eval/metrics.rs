use crate::error::{Error, Result};

/// Average precision and first-hit rank of one ranked list of gallery ids.
/// `None` when the list holds no positive.
pub fn average_precision(ranked: &[u32], query_id: u32) -> Option<(f64, usize)> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    let mut first = None;
    for (r, &id) in ranked.iter().enumerate() {
        if id == query_id {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
            first.get_or_insert(r);
        }
    }
    first.map(|f| (sum / hits as f64, f))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalMetrics {
    /// `cmc[k]`: fraction of valid queries with a positive within the top `k + 1`.
    pub cmc: Vec<f64>,
    pub map: f64,
    pub valid: usize,
    /// Queries without any gallery positive.
    pub excluded: usize,
}

impl RetrievalMetrics {
    pub fn rank(&self, k: usize) -> f64 {
        self.cmc[(k - 1).min(self.cmc.len() - 1)]
    }
}

/// Aggregates per-query `(AP, first-hit rank)` outcomes into CMC and mAP.
pub fn aggregate(outcomes: &[Option<(f64, usize)>], max_rank: usize) -> Result<RetrievalMetrics> {
    let valid: Vec<(f64, usize)> = outcomes.iter().flatten().copied().collect();
    if valid.is_empty() {
        return Err(Error::Evaluation("no query has a gallery positive".into()));
    }
    let n = valid.len() as f64;
    let mut cmc = vec![0.0; max_rank.max(1)];
    for &(_, first) in &valid {
        for c in cmc.iter_mut().skip(first) {
            *c += 1.0;
        }
    }
    cmc.iter_mut().for_each(|c| *c /= n);
    let map = valid.iter().map(|v| v.0).sum::<f64>() / n;
    Ok(RetrievalMetrics { cmc, map, valid: valid.len(), excluded: outcomes.len() - valid.len() })
}

/// CMC curve up to `max_rank` and mAP over ranked gallery id lists.
pub fn cmc_map(rankings: &[Vec<u32>], query_ids: &[u32], max_rank: usize) -> Result<RetrievalMetrics> {
    if rankings.len() != query_ids.len() {
        return Err(Error::Dimension(format!("{} rankings for {} queries", rankings.len(), query_ids.len())));
    }
    let outcomes: Vec<_> = rankings.iter().zip(query_ids).map(|(r, &q)| average_precision(r, q)).collect();
    aggregate(&outcomes, max_rank)
}
