//! Packed binary codes, popcount Hamming distance, brute-force gallery search,
//! the on-disk code formats and a timing benchmark.

pub mod bench;
pub mod code;
pub mod index;
pub mod io;

pub use bench::{bench, timing_csv, timing_table, BenchReport, DistanceKind, TimingRow};
pub use code::{hamming_distance, HashCode};
pub use index::{EmbeddingMatrix, GalleryIndex, Neighbor, QueryFilter, StageCodes};
pub use io::{read_codes, read_embeddings, write_codes, write_embeddings, CodeFile};
