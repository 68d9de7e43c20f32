//! Brute-force timing of packed Hamming against dense `f32` Euclidean search.

use std::hint::black_box;
use std::time::Instant;

use rand::Rng;
use serde::Serialize;

use super::code::{hamming_words, words_for};
use crate::rng::substream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceKind {
    Hamming,
    Euclidean,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub kind: DistanceKind,
    pub len: usize,
    pub n_gallery: usize,
    pub n_queries: usize,
    pub pairs: u64,
    pub total_secs: f64,
    pub per_pair_secs: f64,
    pub per_query_secs: f64,
}

/// One row of the bit-length timing table.
#[derive(Clone, Debug, Serialize)]
pub struct TimingRow {
    pub len: usize,
    pub binary_us: f64,
    pub continuous_us: f64,
    pub ratio: f64,
}

pub fn euclidean(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f32>().sqrt()
}

/// Times a full scan of `n_queries` against `n_gallery` random vectors.
///
/// One untimed warm-up pass over a few queries precedes the measurement.
pub fn bench(kind: DistanceKind, len: usize, n_gallery: usize, n_queries: usize, seed: u64) -> BenchReport {
    let mut rng = substream(seed, "bench");
    let (total_secs, pairs) = match kind {
        DistanceKind::Hamming => {
            let w = words_for(len);
            let gallery: Vec<u64> = (0..n_gallery * w).map(|_| rng.random()).collect();
            let queries: Vec<u64> = (0..n_queries * w).map(|_| rng.random()).collect();
            let scan = |q: &[u64]| -> u64 { gallery.chunks_exact(w).map(|g| u64::from(hamming_words(q, g))).sum() };
            for q in queries.chunks_exact(w).take(4) {
                black_box(scan(black_box(q)));
            }
            let start = Instant::now();
            let mut acc = 0u64;
            for q in queries.chunks_exact(w) {
                acc = acc.wrapping_add(scan(black_box(q)));
            }
            black_box(acc);
            (start.elapsed().as_secs_f64(), (n_gallery * n_queries) as u64)
        }
        DistanceKind::Euclidean => {
            let gallery: Vec<f32> = (0..n_gallery * len).map(|_| rng.random_range(-1.0..1.0)).collect();
            let queries: Vec<f32> = (0..n_queries * len).map(|_| rng.random_range(-1.0..1.0)).collect();
            let scan = |q: &[f32]| -> f32 { gallery.chunks_exact(len).map(|g| euclidean(q, g)).sum() };
            for q in queries.chunks_exact(len).take(4) {
                black_box(scan(black_box(q)));
            }
            let start = Instant::now();
            let mut acc = 0f32;
            for q in queries.chunks_exact(len) {
                acc += scan(black_box(q));
            }
            black_box(acc);
            (start.elapsed().as_secs_f64(), (n_gallery * n_queries) as u64)
        }
    };
    BenchReport {
        kind,
        len,
        n_gallery,
        n_queries,
        pairs,
        total_secs,
        per_pair_secs: total_secs / pairs.max(1) as f64,
        per_query_secs: total_secs / n_queries.max(1) as f64,
    }
}

/// Bit-length sweep: binary vs continuous per-pair time in microseconds.
pub fn timing_table(lengths: &[usize], n_gallery: usize, n_queries: usize, seed: u64) -> Vec<TimingRow> {
    lengths
        .iter()
        .map(|&len| {
            let b = bench(DistanceKind::Hamming, len, n_gallery, n_queries, seed);
            let c = bench(DistanceKind::Euclidean, len, n_gallery, n_queries, seed);
            TimingRow {
                len,
                binary_us: b.per_pair_secs * 1e6,
                continuous_us: c.per_pair_secs * 1e6,
                ratio: c.per_pair_secs / b.per_pair_secs.max(f64::MIN_POSITIVE),
            }
        })
        .collect()
}

pub fn timing_csv(rows: &[TimingRow]) -> String {
    let mut out = String::from("length,binary_us_per_pair,continuous_us_per_pair,speedup\n");
    for r in rows {
        out.push_str(&format!("{},{:.6},{:.6},{:.1}\n", r.len, r.binary_us, r.continuous_us, r.ratio));
    }
    out
}
