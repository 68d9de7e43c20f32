use super::code::{hamming_words, HashCode};
use crate::error::{Error, Result};

/// Row-major `count × dim` matrix of `f32` embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::Dimension(format!("{} values do not form rows of {dim}", data.len())));
        }
        Ok(Self { dim, data })
    }

    pub fn from_f64(dim: usize, data: &[f64]) -> Result<Self> {
        Self::new(dim, data.iter().map(|&v| v as f32).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        let data = rows.iter().flat_map(|&r| self.row(r).iter().copied()).collect();
        Self { dim: self.dim, data }
    }
}

/// All codes of one exit stage; every code shares one length.
#[derive(Clone, Debug, PartialEq)]
pub struct StageCodes {
    pub stage: u8,
    pub len: usize,
    pub codes: Vec<HashCode>,
}

impl StageCodes {
    pub fn new(stage: u8, codes: Vec<HashCode>) -> Result<Self> {
        let len = codes.first().map(HashCode::len).ok_or(Error::Retrieval("no codes".into()))?;
        if let Some(c) = codes.iter().find(|c| c.len() != len || c.stage() != stage) {
            return Err(Error::Encoding(format!(
                "stage {stage} code of length {} (stage {}) mixed with length {len}",
                c.len(),
                c.stage()
            )));
        }
        Ok(Self { stage, len, codes })
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self { stage: self.stage, len: self.len, codes: rows.iter().map(|&r| self.codes[r].clone()).collect() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Neighbor {
    /// Position in the gallery arrays.
    pub position: usize,
    pub id: u32,
    pub distance: u32,
}

/// Optional query-side filtering.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct QueryFilter {
    /// Market-1501 style junk removal: drop gallery entries sharing both the
    /// query's identity and its source (camera).
    pub exclude_same_source: Option<(u32, u32)>,
    /// Leave-one-out: ignore this gallery position (query drawn from the gallery).
    pub exclude_position: Option<usize>,
}

impl QueryFilter {
    fn keeps(&self, pos: usize, id: u32, source: u32) -> bool {
        if self.exclude_position == Some(pos) {
            return false;
        }
        !matches!(self.exclude_same_source, Some((qi, qs)) if qi == id && qs == source)
    }
}

/// Per-stage packed codes with aligned identity and source ids.
#[derive(Clone, Debug, PartialEq)]
pub struct GalleryIndex {
    stages: Vec<StageCodes>,
    ids: Vec<u32>,
    sources: Vec<u32>,
    embeddings: Option<EmbeddingMatrix>,
}

impl GalleryIndex {
    pub fn new(stages: Vec<StageCodes>, ids: Vec<u32>, sources: Vec<u32>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Retrieval("empty gallery".into()));
        }
        if sources.len() != ids.len() {
            return Err(Error::Dimension("source ids not aligned with identity ids".into()));
        }
        for s in &stages {
            if s.codes.len() != ids.len() {
                return Err(Error::Dimension(format!(
                    "stage {} has {} codes for {} gallery entries",
                    s.stage,
                    s.codes.len(),
                    ids.len()
                )));
            }
        }
        Ok(Self { stages, ids, sources, embeddings: None })
    }

    pub fn with_embeddings(mut self, emb: EmbeddingMatrix) -> Result<Self> {
        if emb.count() != self.ids.len() {
            return Err(Error::Dimension("embeddings not aligned with gallery".into()));
        }
        self.embeddings = Some(emb);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn sources(&self) -> &[u32] {
        &self.sources
    }

    pub fn embeddings(&self) -> Option<&EmbeddingMatrix> {
        self.embeddings.as_ref()
    }

    pub fn stages(&self) -> &[StageCodes] {
        &self.stages
    }

    pub fn stage(&self, stage: u8) -> Result<&StageCodes> {
        self.stages
            .iter()
            .find(|s| s.stage == stage)
            .ok_or_else(|| Error::Retrieval(format!("index holds no stage-{stage} codes")))
    }

    /// Distances from `query` to every kept gallery entry, in gallery order.
    pub fn scan(&self, query: &HashCode, filter: &QueryFilter) -> Result<Vec<Neighbor>> {
        let codes = self.stage(query.stage())?;
        if codes.len != query.len() {
            return Err(Error::Metric(format!(
                "query length {} does not match stage-{} length {}",
                query.len(),
                codes.stage,
                codes.len
            )));
        }
        let q = query.words();
        Ok(codes
            .codes
            .iter()
            .enumerate()
            .filter(|(pos, _)| filter.keeps(*pos, self.ids[*pos], self.sources[*pos]))
            .map(|(pos, c)| Neighbor { position: pos, id: self.ids[pos], distance: hamming_words(q, c.words()) })
            .collect())
    }

    /// The `k` nearest entries by Hamming distance; ties go to the lower position.
    pub fn topk(&self, query: &HashCode, k: usize) -> Result<Vec<Neighbor>> {
        self.topk_filtered(query, k, &QueryFilter::default())
    }

    pub fn topk_filtered(&self, query: &HashCode, k: usize, filter: &QueryFilter) -> Result<Vec<Neighbor>> {
        let mut all = self.scan(query, filter)?;
        if all.is_empty() {
            return Err(Error::Retrieval("gallery is empty after filtering".into()));
        }
        let key = |n: &Neighbor| (n.distance, n.position);
        if k < all.len() {
            all.select_nth_unstable_by_key(k, key);
            all.truncate(k);
        }
        all.sort_unstable_by_key(key);
        Ok(all)
    }

    /// Full ranking of the gallery.
    pub fn rank(&self, query: &HashCode, filter: &QueryFilter) -> Result<Vec<Neighbor>> {
        let n = self.len();
        self.topk_filtered(query, n, filter)
    }
}
