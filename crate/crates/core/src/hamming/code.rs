use crate::error::{Error, Result};

/// A binary code of logical length `len`, packed LSB-first into 64-bit words.
///
/// Bit `i` lives in word `i / 64` at position `i % 64`, and is set iff the
/// `i`-th sign is `+1`. Padding bits past `len` are always zero.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct HashCode {
    words: Vec<u64>,
    len: usize,
    stage: u8,
}

pub fn words_for(len: usize) -> usize {
    len.div_ceil(64)
}

impl HashCode {
    /// Packs a vector of exact `±1` values.
    pub fn pack(signs: &[f64], stage: u8) -> Result<Self> {
        if signs.is_empty() {
            return Err(Error::Encoding("empty code".into()));
        }
        let mut words = vec![0u64; words_for(signs.len())];
        for (i, &s) in signs.iter().enumerate() {
            if s == 1.0 {
                words[i / 64] |= 1u64 << (i % 64);
            } else if s != -1.0 {
                return Err(Error::Encoding(format!("value {s} at position {i} is not ±1")));
            }
        }
        Ok(Self { words, len: signs.len(), stage })
    }

    /// Binarises real values with `x > 0 → 1`, everything else `→ -1`.
    pub fn from_signs_of(values: &[f64], stage: u8) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Encoding("empty code".into()));
        }
        let mut words = vec![0u64; words_for(values.len())];
        for (i, &v) in values.iter().enumerate() {
            if v > 0.0 {
                words[i / 64] |= 1u64 << (i % 64);
            }
        }
        Ok(Self { words, len: values.len(), stage })
    }

    pub fn from_words(words: Vec<u64>, len: usize, stage: u8) -> Result<Self> {
        if len == 0 || words.len() != words_for(len) {
            return Err(Error::Encoding(format!("{} words cannot hold {len} bits", words.len())));
        }
        let rem = len % 64;
        if rem != 0 && words[words.len() - 1] >> rem != 0 {
            return Err(Error::Encoding("padding bits must be zero".into()));
        }
        Ok(Self { words, len, stage })
    }

    /// Little-endian bytes, `ceil(len / 8)` of them.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.len.div_ceil(8);
        self.words.iter().flat_map(|w| w.to_le_bytes()).take(n).collect()
    }

    pub fn from_bytes(bytes: &[u8], len: usize, stage: u8) -> Result<Self> {
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::Encoding(format!("{} bytes cannot hold {len} bits", bytes.len())));
        }
        let mut words = vec![0u64; words_for(len)];
        for (i, b) in bytes.iter().enumerate() {
            words[i / 8] |= u64::from(*b) << (8 * (i % 8));
        }
        Self::from_words(words, len, stage)
    }

    pub fn unpack(&self) -> Vec<f64> {
        (0..self.len).map(|i| if self.bit(i) { 1.0 } else { -1.0 }).collect()
    }

    pub fn bit(&self, i: usize) -> bool {
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn stage(&self) -> u8 {
        self.stage
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn complement(&self) -> Self {
        let mut words: Vec<u64> = self.words.iter().map(|w| !w).collect();
        let rem = self.len % 64;
        if rem != 0 {
            let last = words.len() - 1;
            words[last] &= (1u64 << rem) - 1;
        }
        Self { words, len: self.len, stage: self.stage }
    }
}

/// Popcount of the XOR of two equally sized word slices.
#[inline]
pub fn hamming_words(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

pub fn hamming_distance(a: &HashCode, b: &HashCode) -> Result<u32> {
    if a.len != b.len {
        return Err(Error::Metric(format!("code lengths differ: {} vs {}", a.len, b.len)));
    }
    Ok(hamming_words(&a.words, &b.words))
}
