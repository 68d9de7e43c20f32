use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::error::{Error, Result};

/// One P×K batch: `p` identities with `k` samples each, grouped by identity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PkBatch {
    pub indices: Vec<usize>,
    pub labels: Vec<u32>,
    pub p: usize,
    pub k: usize,
}

/// Draws identity-balanced batches from a labelled training split.
#[derive(Clone, Debug)]
pub struct PkSampler {
    groups: BTreeMap<u32, Vec<usize>>,
    p: usize,
    k: usize,
}

impl PkSampler {
    pub fn new(labels: &[u32], p: usize, k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::Sampling(format!("K = {k} leaves anchors without positives")));
        }
        if p < 2 {
            return Err(Error::Sampling(format!("P = {p} leaves anchors without negatives")));
        }
        let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            groups.entry(l).or_default().push(i);
        }
        // identities seen once cannot supply a distinct positive
        groups.retain(|_, v| v.len() >= 2);
        if groups.len() < p {
            return Err(Error::Sampling(format!(
                "{} identities with at least two samples, batch needs {p}",
                groups.len()
            )));
        }
        Ok(Self { groups, p, k })
    }

    pub fn identities(&self) -> usize {
        self.groups.len()
    }

    /// One pass over the identities in random order; the remainder that
    /// does not fill a batch is dropped. Identities with fewer than `k`
    /// samples are topped up with replacement.
    pub fn epoch(&self, rng: &mut impl Rng) -> Vec<PkBatch> {
        let mut ids: Vec<u32> = self.groups.keys().copied().collect();
        ids.shuffle(rng);
        ids.chunks_exact(self.p)
            .map(|chunk| {
                let mut indices = Vec::with_capacity(self.p * self.k);
                let mut labels = Vec::with_capacity(self.p * self.k);
                for id in chunk {
                    let pool = &self.groups[id];
                    let mut pick: Vec<usize> = pool.choose_multiple(rng, self.k.min(pool.len())).copied().collect();
                    while pick.len() < self.k {
                        pick.push(*pool.choose(rng).expect("non-empty group"));
                    }
                    indices.extend(pick);
                    labels.extend(std::iter::repeat_n(*id, self.k));
                }
                PkBatch { indices, labels, p: self.p, k: self.k }
            })
            .collect()
    }
}
