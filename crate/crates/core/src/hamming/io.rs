//! Binary code and embedding files.
//!
//! Code file (`HRC1`): magic, little-endian `u32` stage, length `L` and count,
//! then `count × L/8` code bytes, `count` `u32` identity ids and `count` `u32`
//! source ids. Embedding file (`HRE1`): magic, `u32` dim and count, then
//! `count × dim` little-endian `f32`.

use std::fs;
use std::path::Path;

use super::code::HashCode;
use super::index::{EmbeddingMatrix, StageCodes};
use crate::error::{Error, Result};

pub const CODE_MAGIC: &[u8; 4] = b"HRC1";
pub const EMBEDDING_MAGIC: &[u8; 4] = b"HRE1";

#[derive(Clone, Debug, PartialEq)]
pub struct CodeFile {
    pub codes: StageCodes,
    pub ids: Vec<u32>,
    pub sources: Vec<u32>,
}

pub fn encode_codes(file: &CodeFile) -> Result<Vec<u8>> {
    let StageCodes { stage, len, codes } = &file.codes;
    if len % 8 != 0 {
        return Err(Error::Encoding(format!("code length {len} is not a whole number of bytes")));
    }
    if file.ids.len() != codes.len() || file.sources.len() != codes.len() {
        return Err(Error::Dimension("id arrays not aligned with codes".into()));
    }
    let mut out = Vec::with_capacity(16 + codes.len() * (len / 8 + 8));
    out.extend_from_slice(CODE_MAGIC);
    for v in [u32::from(*stage), *len as u32, codes.len() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for c in codes {
        out.extend_from_slice(&c.to_bytes());
    }
    for v in file.ids.iter().chain(&file.sources) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.buf.get(self.at..self.at + n)?;
        self.at += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
}

pub fn decode_codes(bytes: &[u8], path: &Path) -> Result<CodeFile> {
    let bad = |reason: &str| Error::Format { path: path.to_path_buf(), reason: reason.to_string() };
    let mut r = Reader { buf: bytes, at: 0 };
    if r.take(4) != Some(CODE_MAGIC.as_slice()) {
        return Err(bad("missing HRC1 magic"));
    }
    let (stage, len, count) = match (r.u32(), r.u32(), r.u32()) {
        (Some(s), Some(l), Some(c)) => (s, l as usize, c as usize),
        _ => return Err(bad("truncated header")),
    };
    if len == 0 || len % 8 != 0 || stage > u32::from(u8::MAX) {
        return Err(bad("bad stage or code length"));
    }
    let mut codes = Vec::with_capacity(count);
    for _ in 0..count {
        let b = r.take(len / 8).ok_or_else(|| bad("truncated codes"))?;
        codes.push(HashCode::from_bytes(b, len, stage as u8)?);
    }
    let mut read_ids = || (0..count).map(|_| r.u32()).collect::<Option<Vec<u32>>>();
    let ids = read_ids().ok_or_else(|| bad("truncated identity ids"))?;
    let sources = read_ids().ok_or_else(|| bad("truncated source ids"))?;
    if r.at != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    let codes = if count == 0 {
        StageCodes { stage: stage as u8, len, codes }
    } else {
        StageCodes::new(stage as u8, codes)?
    };
    Ok(CodeFile { codes, ids, sources })
}

pub fn write_codes(path: &Path, file: &CodeFile) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, encode_codes(file)?)?;
    Ok(())
}

pub fn read_codes(path: &Path) -> Result<CodeFile> {
    if !path.exists() {
        return Err(Error::MissingArtifact { path: path.to_path_buf(), hint: "HRC1 code file".into() });
    }
    decode_codes(&fs::read(path)?, path)
}

pub fn encode_embeddings(emb: &EmbeddingMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + emb.data().len() * 4);
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&(emb.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(emb.count() as u32).to_le_bytes());
    for v in emb.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_embeddings(bytes: &[u8], path: &Path) -> Result<EmbeddingMatrix> {
    let bad = |reason: &str| Error::Format { path: path.to_path_buf(), reason: reason.to_string() };
    let mut r = Reader { buf: bytes, at: 0 };
    if r.take(4) != Some(EMBEDDING_MAGIC.as_slice()) {
        return Err(bad("missing HRE1 magic"));
    }
    let (dim, count) = match (r.u32(), r.u32()) {
        (Some(d), Some(c)) if d > 0 => (d as usize, c as usize),
        _ => return Err(bad("bad header")),
    };
    let body = r.take(dim * count * 4).ok_or_else(|| bad("truncated values"))?;
    if r.at != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    let data = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    EmbeddingMatrix::new(dim, data)
}

pub fn write_embeddings(path: &Path, emb: &EmbeddingMatrix) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, encode_embeddings(emb))?;
    Ok(())
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    if !path.exists() {
        return Err(Error::MissingArtifact { path: path.to_path_buf(), hint: "HRE1 embedding file".into() });
    }
    decode_embeddings(&fs::read(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn code_file_layout_is_exact() {
        let a = HashCode::pack(&[[1.0; 8], [-1.0; 8]].concat(), 3).unwrap();
        let b = a.complement();
        let file = CodeFile {
            codes: StageCodes::new(3, vec![a, b]).unwrap(),
            ids: vec![5, 6],
            sources: vec![1, 2],
        };
        let bytes = encode_codes(&file).unwrap();
        let expected: Vec<u8> = [
            b"HRC1".to_vec(),
            3u32.to_le_bytes().to_vec(),
            16u32.to_le_bytes().to_vec(),
            2u32.to_le_bytes().to_vec(),
            vec![0xff, 0x00, 0x00, 0xff],
            5u32.to_le_bytes().to_vec(),
            6u32.to_le_bytes().to_vec(),
            1u32.to_le_bytes().to_vec(),
            2u32.to_le_bytes().to_vec(),
        ]
        .concat();
        assert_eq!(bytes, expected);
        assert_eq!(decode_codes(&bytes, Path::new("x")).unwrap(), file);
        assert!(decode_codes(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
    }

    #[test]
    fn embedding_file_round_trip() {
        let emb = EmbeddingMatrix::new(3, vec![0.5, -1.25, f32::MIN_POSITIVE, 7.0, 8.0, 9.0]).unwrap();
        let bytes = encode_embeddings(&emb);
        assert_eq!(&bytes[..4], b"HRE1");
        assert_eq!(bytes.len(), 12 + 24);
        assert_eq!(decode_embeddings(&bytes, Path::new("x")).unwrap(), emb);
    }

    #[test]
    fn odd_lengths_cannot_be_written() {
        let file = CodeFile {
            codes: StageCodes::new(1, vec![HashCode::pack(&[1.0; 12], 1).unwrap()]).unwrap(),
            ids: vec![0],
            sources: vec![0],
        };
        assert!(encode_codes(&file).is_err());
    }
}
