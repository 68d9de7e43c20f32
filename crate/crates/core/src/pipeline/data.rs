//! Planted-difficulty synthetic data and the `HRD1` split files.
//!
//! `HRD1`: magic, little-endian `u32` H, W, C and count, then
//! `count × H·W·C` `f32` values, `count` `u32` identity ids, `count` `u32`
//! source ids and `count` kind bytes (0 easy, 1 hard, 2 impossible).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::encoder::N_PARTS;
use crate::error::{Error, Result};
use crate::hamming::read_embeddings;
use crate::numerics::Tensor;
use crate::rng::{stream, substream};

pub const DATA_MAGIC: &[u8; 4] = b"HRD1";
pub const SPLITS: [&str; 5] = ["train", "val_query", "val_gallery", "query", "gallery"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleKind {
    Easy,
    Hard,
    Impossible,
}

impl SampleKind {
    fn byte(self) -> u8 {
        self as u8
    }

    fn from_byte(b: u8) -> Option<Self> {
        [SampleKind::Easy, SampleKind::Hard, SampleKind::Impossible].get(b as usize).copied()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticDatasetSpec {
    /// Disjoint identity pools for training, threshold calibration and testing.
    pub train_identities: usize,
    pub val_identities: usize,
    pub test_identities: usize,
    pub train_per_identity: usize,
    pub query_per_identity: usize,
    pub gallery_per_identity: usize,
    /// `[H, W, C]`; H must split into four bands.
    pub shape: [usize; 3],
    pub sigma_between: f64,
    pub sigma_within: f64,
    /// Share of samples blended with the identity's fixed confusable twin.
    pub hard_fraction: f64,
    /// Share of samples that are mostly foreign signal.
    pub impossible_fraction: f64,
    /// Weight range of the true identity in a hard blend.
    pub hard_mix: [f64; 2],
    /// Weight of the true identity in an impossible sample.
    pub impossible_keep: f64,
    pub sources: u32,
    /// Scale of the per-source nuisance pattern added to every sample.
    pub sigma_source: f64,
    /// Apply the hard/impossible composition to gallery splits as well.
    pub plant_gallery: bool,
}

impl Default for SyntheticDatasetSpec {
    fn default() -> Self {
        Self {
            train_identities: 128,
            val_identities: 32,
            test_identities: 64,
            train_per_identity: 10,
            query_per_identity: 5,
            gallery_per_identity: 6,
            shape: [32, 16, 3],
            sigma_between: 1.0,
            sigma_within: 0.35,
            hard_fraction: 0.27,
            impossible_fraction: 0.03,
            hard_mix: [0.55, 0.6],
            impossible_keep: 0.15,
            sources: 6,
            sigma_source: 0.0,
            plant_gallery: true,
        }
    }
}

impl SyntheticDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Data(m));
        if self.train_identities < 2 || self.val_identities < 2 || self.test_identities < 2 {
            return bad("every split needs at least two identities".into());
        }
        if self.train_per_identity < 2 || self.query_per_identity == 0 || self.gallery_per_identity == 0 {
            return bad("per-identity sample counts too small".into());
        }
        if self.shape.contains(&0) || !self.shape[0].is_multiple_of(N_PARTS) {
            return bad(format!("shape {:?} must be positive with H divisible by {N_PARTS}", self.shape));
        }
        let fr = [self.hard_fraction, self.impossible_fraction];
        if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || fr.iter().sum::<f64>() > 1.0 {
            return bad(format!("fractions {fr:?} must lie in [0, 1] and sum to at most 1"));
        }
        if !(self.sigma_between > 0.0) || !(self.sigma_within >= 0.0) || !(self.sigma_source >= 0.0) {
            return bad("σ_between must be positive, σ_within and σ_source non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.hard_mix[0]) || !(self.hard_mix[0] <= self.hard_mix[1] && self.hard_mix[1] <= 1.0) {
            return bad(format!("hard_mix {:?} must be an ordered range in [0, 1]", self.hard_mix));
        }
        if !(0.0..=1.0).contains(&self.impossible_keep) || self.sources == 0 {
            return bad("impossible_keep must lie in [0, 1] and sources must be positive".into());
        }
        Ok(())
    }

    pub fn sample_len(&self) -> usize {
        self.shape.iter().product()
    }
}

/// One split: `count` maps of shape `[H, W, C]`, stored as `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub shape: [usize; 3],
    pub data: Vec<f32>,
    pub ids: Vec<u32>,
    pub sources: Vec<u32>,
    pub kinds: Vec<SampleKind>,
}

impl Split {
    fn empty(shape: [usize; 3]) -> Self {
        Self { shape, data: Vec::new(), ids: Vec::new(), sources: Vec::new(), kinds: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let n = self.sample_len();
        &self.data[i * n..(i + 1) * n]
    }

    /// `[n, H, W, C]` tensor of the selected samples.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        let data = indices.iter().flat_map(|&i| self.sample(i).iter().map(|&v| f64::from(v))).collect();
        let [h, w, c] = self.shape;
        Tensor::new(vec![indices.len(), h, w, c], data)
    }

    pub fn kind_counts(&self) -> BTreeMap<SampleKind, usize> {
        let mut m = BTreeMap::new();
        for &k in &self.kinds {
            *m.entry(k).or_default() += 1;
        }
        m
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.data.len() * 4 + self.len() * 9);
        out.extend_from_slice(DATA_MAGIC);
        for v in [self.shape[0], self.shape[1], self.shape[2], self.len()] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.ids.iter().chain(&self.sources) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend(self.kinds.iter().map(|k| k.byte()));
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::Format { path: path.to_path_buf(), reason: reason.to_string() };
        if bytes.get(..4) != Some(DATA_MAGIC.as_slice()) {
            return Err(bad("missing HRD1 magic"));
        }
        let u32_at = |i: usize| -> Result<usize> {
            bytes
                .get(i..i + 4)
                .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
                .ok_or_else(|| bad("truncated header"))
        };
        let shape = [u32_at(4)?, u32_at(8)?, u32_at(12)?];
        let count = u32_at(16)?;
        let per = shape.iter().product::<usize>();
        let expected = 20 + count * per * 4 + count * 9;
        if bytes.len() != expected {
            return Err(bad(&format!("expected {expected} bytes, found {}", bytes.len())));
        }
        let mut at = 20;
        let data: Vec<f32> = bytes[at..at + count * per * 4]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        at += count * per * 4;
        let mut words = bytes[at..at + count * 8].chunks_exact(4).map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")));
        let ids: Vec<u32> = words.by_ref().take(count).collect();
        let sources: Vec<u32> = words.collect();
        at += count * 8;
        let kinds = bytes[at..].iter().map(|&b| SampleKind::from_byte(b).ok_or_else(|| bad("unknown sample kind"))).collect::<Result<_>>()?;
        Ok(Self { shape, data, ids, sources, kinds })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Split,
    pub val_query: Split,
    pub val_gallery: Split,
    pub query: Split,
    pub gallery: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub count: usize,
    pub identities: usize,
    pub easy: usize,
    pub hard: usize,
    pub impossible: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: Option<u64>,
    pub spec: Option<SyntheticDatasetSpec>,
    pub shape: [usize; 3],
    pub splits: BTreeMap<String, SplitSummary>,
}

impl Dataset {
    pub fn split(&self, name: &str) -> Option<&Split> {
        match name {
            "train" => Some(&self.train),
            "val_query" => Some(&self.val_query),
            "val_gallery" => Some(&self.val_gallery),
            "query" => Some(&self.query),
            "gallery" => Some(&self.gallery),
            _ => None,
        }
    }

    /// Training identities relabelled `0..n` in order of first appearance.
    pub fn train_classes(&self) -> (Vec<u32>, usize) {
        let mut map: BTreeMap<u32, u32> = BTreeMap::new();
        let labels = self
            .train
            .ids
            .iter()
            .map(|id| {
                let next = map.len() as u32;
                *map.entry(*id).or_insert(next)
            })
            .collect();
        (labels, map.len())
    }

    pub fn meta(&self, seed: Option<u64>, spec: Option<&SyntheticDatasetSpec>) -> DatasetMeta {
        let splits = SPLITS
            .iter()
            .map(|&name| {
                let s = self.split(name).expect("known split");
                let counts = s.kind_counts();
                let get = |k| counts.get(&k).copied().unwrap_or(0);
                let identities = s.ids.iter().collect::<std::collections::BTreeSet<_>>().len();
                let summary = SplitSummary {
                    count: s.len(),
                    identities,
                    easy: get(SampleKind::Easy),
                    hard: get(SampleKind::Hard),
                    impossible: get(SampleKind::Impossible),
                };
                (name.to_string(), summary)
            })
            .collect();
        DatasetMeta { seed, spec: spec.cloned(), shape: self.train.shape, splits }
    }

    pub fn save(&self, dir: &Path, meta: &DatasetMeta) -> Result<()> {
        fs::create_dir_all(dir)?;
        for name in SPLITS {
            fs::write(split_path(dir, name), self.split(name).expect("known split").encode())?;
        }
        let json = serde_json::to_string_pretty(meta).map_err(|e| Error::Data(e.to_string()))?;
        fs::write(dir.join("meta.json"), json + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<Split> {
            let path = split_path(dir, name);
            if !path.exists() {
                return Err(Error::MissingArtifact { path, hint: "run `gen-data` first".into() });
            }
            Split::decode(&fs::read(&path)?, &path)
        };
        let ds = Self {
            train: read("train")?,
            val_query: read("val_query")?,
            val_gallery: read("val_gallery")?,
            query: read("query")?,
            gallery: read("gallery")?,
        };
        if SPLITS.iter().any(|n| ds.split(n).expect("known split").shape != ds.train.shape) {
            return Err(Error::Data("splits disagree on the sample shape".into()));
        }
        Ok(ds)
    }
}

pub fn split_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.hrd"))
}

struct Generator<'a, R: Rng> {
    spec: &'a SyntheticDatasetSpec,
    rng: R,
    prototypes: Vec<Vec<f32>>,
    source_maps: Vec<Vec<f32>>,
}

impl<R: Rng> Generator<'_, R> {
    fn prototype(&mut self) -> Vec<f32> {
        self.pattern(self.spec.sigma_between)
    }

    /// Per-band channel means plus a finer texture, both scaled by `sigma`.
    fn pattern(&mut self, sigma: f64) -> Vec<f32> {
        let [h, w, c] = self.spec.shape;
        if sigma == 0.0 {
            return vec![0.0; h * w * c];
        }
        let normal = Normal::new(0.0, sigma).expect("positive sigma");
        let bands: Vec<f64> = (0..N_PARTS * c).map(|_| normal.sample(&mut self.rng)).collect();
        let band_h = h / N_PARTS;
        let mut out = Vec::with_capacity(h * w * c);
        for y in 0..h {
            for _ in 0..w {
                for ch in 0..c {
                    let t = 0.5 * normal.sample(&mut self.rng);
                    out.push((bands[(y / band_h) * c + ch] + t) as f32);
                }
            }
        }
        out
    }

    fn noisy(&mut self, base: impl Iterator<Item = f64>) -> Vec<f32> {
        let sigma = self.spec.sigma_within;
        base.map(|v| {
            let n = if sigma > 0.0 { Normal::new(0.0, sigma).expect("sigma").sample(&mut self.rng) } else { 0.0 };
            (v + n) as f32
        })
        .collect()
    }

    /// Composition by exact count, assigned to positions in random order.
    fn kinds(&mut self, n: usize, planted: bool) -> Vec<SampleKind> {
        let mut kinds = vec![SampleKind::Easy; n];
        if planted {
            let hard = (self.spec.hard_fraction * n as f64).round() as usize;
            let imp = ((self.spec.impossible_fraction * n as f64).round() as usize).min(n - hard.min(n));
            for (i, k) in kinds.iter_mut().enumerate() {
                if i < hard {
                    *k = SampleKind::Hard;
                } else if i < hard + imp {
                    *k = SampleKind::Impossible;
                }
            }
            kinds.shuffle(&mut self.rng);
        }
        kinds
    }

    fn split(&mut self, ids: &[u32], per_identity: usize, planted: bool) -> Split {
        let mut split = Split::empty(self.spec.shape);
        let kinds = self.kinds(ids.len() * per_identity, planted);
        let mut i = 0;
        for &id in ids {
            for _ in 0..per_identity {
                let kind = kinds[i];
                i += 1;
                let source = self.rng.random_range(0..self.spec.sources);
                let own = self.prototypes[id as usize].clone();
                let sample = match kind {
                    SampleKind::Easy => self.noisy(own.iter().map(|&v| f64::from(v))),
                    SampleKind::Hard => {
                        let other = self.prototypes[twin(ids, id) as usize].clone();
                        let [lo, hi] = self.spec.hard_mix;
                        let a = if hi > lo { self.rng.random_range(lo..=hi) } else { lo };
                        self.noisy(own.iter().zip(&other).map(|(&x, &y)| a * f64::from(x) + (1.0 - a) * f64::from(y)))
                    }
                    SampleKind::Impossible => {
                        let foreign = self.prototype();
                        let k = self.spec.impossible_keep;
                        self.noisy(own.iter().zip(&foreign).map(|(&x, &y)| k * f64::from(x) + (1.0 - k) * f64::from(y)))
                    }
                };
                split.data.extend(sample.iter().zip(&self.source_maps[source as usize]).map(|(v, n)| v + n));
                split.ids.push(id);
                split.sources.push(source);
                split.kinds.push(kind);
            }
        }
        split
    }
}

/// Fixed confusable partner of `id` within its pool: positions pair up as
/// (0, 1), (2, 3), ...; an odd last identity pairs with its predecessor.
pub fn twin(pool: &[u32], id: u32) -> u32 {
    let pos = pool.iter().position(|&p| p == id).expect("identity in pool");
    match pool.get(pos ^ 1) {
        Some(&t) => t,
        None => pool[pos - 1],
    }
}

/// Deterministic dataset for `seed`. Identity ids are global: training
/// identities first, then validation, then test. Gallery splits hold easy
/// samples only unless `plant_gallery` is set.
pub fn gen_data(spec: &SyntheticDatasetSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let total = spec.train_identities + spec.val_identities + spec.test_identities;
    let mut g = Generator { spec, rng: substream(seed, stream::DATA), prototypes: Vec::with_capacity(total), source_maps: Vec::new() };
    for _ in 0..total {
        let p = g.prototype();
        g.prototypes.push(p);
    }
    for _ in 0..spec.sources {
        let m = g.pattern(spec.sigma_source);
        g.source_maps.push(m);
    }
    let range = |a: usize, b: usize| (a as u32..b as u32).collect::<Vec<_>>();
    let train_ids = range(0, spec.train_identities);
    let val_ids = range(spec.train_identities, spec.train_identities + spec.val_identities);
    let test_ids = range(spec.train_identities + spec.val_identities, total);
    Ok(Dataset {
        train: g.split(&train_ids, spec.train_per_identity, true),
        val_query: g.split(&val_ids, spec.query_per_identity, true),
        val_gallery: g.split(&val_ids, spec.gallery_per_identity, spec.plant_gallery),
        query: g.split(&test_ids, spec.query_per_identity, true),
        gallery: g.split(&test_ids, spec.gallery_per_identity, spec.plant_gallery),
    })
}

/// Builds a dataset from external feature files: `{split}.hre` (`HRE1`)
/// plus `{split}.labels` with one `identity source` pair per line, for all
/// five splits. Each feature vector is reshaped to `shape`.
pub fn ingest_embeddings(dir: &Path, shape: [usize; 3]) -> Result<Dataset> {
    let read = |name: &str| -> Result<Split> {
        let emb_path = dir.join(format!("{name}.hre"));
        let label_path = dir.join(format!("{name}.labels"));
        for p in [&emb_path, &label_path] {
            if !p.exists() {
                return Err(Error::MissingArtifact { path: p.clone(), hint: "embedding directory is incomplete".into() });
            }
        }
        let emb = read_embeddings(&emb_path)?;
        if emb.dim() != shape.iter().product::<usize>() {
            return Err(Error::Data(format!("{name}: feature width {} does not fill shape {shape:?}", emb.dim())));
        }
        let mut split = Split::empty(shape);
        for (n, line) in fs::read_to_string(&label_path)?.lines().enumerate() {
            let bad = || Error::Format { path: label_path.clone(), reason: format!("line {}: expected `identity source`", n + 1) };
            let mut cols = line.split_whitespace();
            split.ids.push(cols.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?);
            split.sources.push(cols.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?);
        }
        if split.ids.len() != emb.count() {
            return Err(Error::Data(format!("{name}: {} labels for {} features", split.ids.len(), emb.count())));
        }
        split.data = emb.data().to_vec();
        split.kinds = vec![SampleKind::Easy; split.ids.len()];
        Ok(split)
    };
    Ok(Dataset {
        train: read("train")?,
        val_query: read("val_query")?,
        val_gallery: read("val_gallery")?,
        query: read("query")?,
        gallery: read("gallery")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamming::{write_embeddings, EmbeddingMatrix};

    fn small() -> SyntheticDatasetSpec {
        SyntheticDatasetSpec {
            train_identities: 6,
            val_identities: 3,
            test_identities: 4,
            train_per_identity: 10,
            query_per_identity: 5,
            gallery_per_identity: 2,
            shape: [8, 4, 2],
            hard_fraction: 0.2,
            impossible_fraction: 0.1,
            ..Default::default()
        }
    }

    #[test]
    fn composition_matches_by_count() {
        let spec = SyntheticDatasetSpec { hard_fraction: 0.2, impossible_fraction: 0.1, ..small() };
        let ds = gen_data(&spec, 1).unwrap();
        let c = ds.train.kind_counts();
        assert_eq!((c[&SampleKind::Easy], c[&SampleKind::Hard], c[&SampleKind::Impossible]), (42, 12, 6));
        assert_eq!(ds.gallery.kind_counts().len(), 3);
        let easy_gallery = gen_data(&SyntheticDatasetSpec { plant_gallery: false, ..spec.clone() }, 1).unwrap();
        assert_eq!(easy_gallery.gallery.kind_counts().len(), 1);
        let meta = ds.meta(Some(1), Some(&spec));
        assert_eq!(meta.splits["query"].hard, 4);
    }

    #[test]
    fn zero_noise_easy_samples_equal_prototypes() {
        let spec = SyntheticDatasetSpec { sigma_within: 0.0, sigma_source: 0.0, hard_fraction: 0.0, impossible_fraction: 0.0, ..small() };
        let ds = gen_data(&spec, 2).unwrap();
        let first = |s: &Split, id: u32| s.sample(s.ids.iter().position(|&i| i == id).unwrap()).to_vec();
        for id in 9..13 {
            assert_eq!(first(&ds.query, id), first(&ds.gallery, id));
        }
    }

    #[test]
    fn identities_are_disjoint_across_pools() {
        let ds = gen_data(&small(), 3).unwrap();
        let set = |s: &Split| s.ids.iter().copied().collect::<std::collections::BTreeSet<_>>();
        assert!(set(&ds.train).is_disjoint(&set(&ds.query)));
        assert!(set(&ds.val_query).is_disjoint(&set(&ds.gallery)));
        assert_eq!(set(&ds.query), set(&ds.gallery));
        let (labels, n) = ds.train_classes();
        assert_eq!(n, 6);
        assert!(labels.iter().all(|&l| l < 6));
    }

    #[test]
    fn seeded_files_are_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for dir in [a.path(), b.path()] {
            let ds = gen_data(&small(), 9).unwrap();
            ds.save(dir, &ds.meta(Some(9), Some(&small()))).unwrap();
        }
        for name in SPLITS {
            assert_eq!(fs::read(split_path(a.path(), name)).unwrap(), fs::read(split_path(b.path(), name)).unwrap());
        }
        let loaded = Dataset::load(a.path()).unwrap();
        assert_eq!(loaded, gen_data(&small(), 9).unwrap());
    }

    #[test]
    fn rejects_degenerate_specs() {
        assert!(gen_data(&SyntheticDatasetSpec { train_identities: 0, ..small() }, 1).is_err());
        assert!(gen_data(&SyntheticDatasetSpec { shape: [6, 4, 2], ..small() }, 1).is_err());
        assert!(gen_data(&SyntheticDatasetSpec { hard_fraction: 0.7, impossible_fraction: 0.4, ..small() }, 1).is_err());
        assert!(matches!(Dataset::load(Path::new("/nonexistent")), Err(Error::MissingArtifact { .. })));
    }

    #[test]
    fn ingests_embedding_directories() {
        let dir = tempfile::tempdir().unwrap();
        for name in SPLITS {
            let emb = EmbeddingMatrix::new(8, (0..24).map(|v| v as f32).collect()).unwrap();
            write_embeddings(&dir.path().join(format!("{name}.hre")), &emb).unwrap();
            fs::write(dir.path().join(format!("{name}.labels")), "0 1\n0 2\n1 1\n").unwrap();
        }
        let ds = ingest_embeddings(dir.path(), [4, 1, 2]).unwrap();
        assert_eq!(ds.query.len(), 3);
        assert_eq!(ds.gallery.sample(2), &[16.0, 17.0, 18.0, 19.0, 20.0, 21.0, 22.0, 23.0]);
        assert!(ingest_embeddings(dir.path(), [4, 2, 2]).is_err());
        fs::remove_file(dir.path().join("val_query.labels")).unwrap();
        assert!(matches!(ingest_embeddings(dir.path(), [4, 1, 2]), Err(Error::MissingArtifact { .. })));
    }
}
