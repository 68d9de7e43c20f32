//! Checkpoints: a `key = value` text manifest plus one blob of little-endian
//! `f64` values, concatenated in manifest order.
//!
//! ```text
//! format = hashreid-checkpoint/1
//! epoch = 100
//! seed = 7
//! tensor = stage1.mix.weight 48x32
//! tensor = stage1.mix.bias 32
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::layers::Module;
use super::tensor::Tensor;
use crate::error::{Error, Result};

const FORMAT: &str = "hashreid-checkpoint/1";

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<NamedTensor>,
}

pub fn manifest_path(stem: &Path) -> PathBuf {
    stem.with_extension("manifest")
}

pub fn blob_path(stem: &Path) -> PathBuf {
    stem.with_extension("bin")
}

impl Checkpoint {
    pub fn capture(module: &dyn Module, meta: BTreeMap<String, String>) -> Self {
        let mut tensors = Vec::new();
        module.visit("", &mut |name, t| {
            tensors.push(NamedTensor { name, shape: t.shape().to_vec(), data: t.data().to_vec() });
        });
        Self { meta, tensors }
    }

    /// Copies values into `module`; names and shapes must match exactly.
    pub fn restore(&self, module: &mut dyn Module) -> Result<()> {
        let mut idx = 0usize;
        let mut err = None;
        module.visit_mut("", &mut |name, t| {
            if err.is_some() {
                return;
            }
            match self.tensors.get(idx) {
                Some(nt) if nt.name == name && nt.shape == t.shape() => {
                    t.data_mut().copy_from_slice(&nt.data);
                }
                Some(nt) => {
                    err = Some(format!("expected {name} {:?}, found {} {:?}", t.shape(), nt.name, nt.shape))
                }
                None => err = Some(format!("checkpoint ends before {name}")),
            }
            idx += 1;
        });
        if let Some(e) = err {
            return Err(Error::Config(format!("checkpoint does not fit model: {e}")));
        }
        if idx != self.tensors.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} tensors, model has {idx}",
                self.tensors.len()
            )));
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(String::as_str)
    }

    pub fn save(&self, stem: &Path) -> Result<()> {
        let mut manifest = format!("format = {FORMAT}\n");
        for (k, v) in &self.meta {
            if k.contains(['=', '\n']) || k.trim() != k || k == "tensor" || k == "format" || v.contains('\n') {
                return Err(Error::Config(format!("unsupported manifest entry {k:?}")));
            }
            manifest.push_str(&format!("{k} = {v}\n"));
        }
        let mut blob = Vec::with_capacity(self.tensors.iter().map(|t| t.data.len() * 8).sum());
        for t in &self.tensors {
            let dims: Vec<String> = t.shape.iter().map(usize::to_string).collect();
            manifest.push_str(&format!("tensor = {} {}\n", t.name, dims.join("x")));
            for v in &t.data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        if let Some(dir) = stem.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(manifest_path(stem), manifest)?;
        fs::write(blob_path(stem), blob)?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let mpath = manifest_path(stem);
        let bpath = blob_path(stem);
        for p in [&mpath, &bpath] {
            if !p.exists() {
                return Err(Error::MissingArtifact { path: p.clone(), hint: "checkpoint".into() });
            }
        }
        let bad = |reason: String| Error::Format { path: mpath.clone(), reason };
        let text = fs::read_to_string(&mpath)?;
        let blob = fs::read(&bpath)?;
        let mut ckpt = Checkpoint::default();
        let mut offset = 0usize;
        let mut saw_format = false;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once(" = ").ok_or_else(|| bad(format!("bad line {line:?}")))?;
            match k {
                "format" if v == FORMAT => saw_format = true,
                "format" => return Err(bad(format!("unknown format {v}"))),
                "tensor" => {
                    let (name, dims) = v.rsplit_once(' ').ok_or_else(|| bad(format!("bad tensor line {v:?}")))?;
                    let shape = dims
                        .split('x')
                        .map(|d| d.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|e| bad(format!("bad shape {dims}: {e}")))?;
                    let n: usize = shape.iter().product();
                    let end = offset + n * 8;
                    if end > blob.len() {
                        return Err(bad("blob shorter than manifest".into()));
                    }
                    let data = blob[offset..end]
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                        .collect();
                    offset = end;
                    ckpt.tensors.push(NamedTensor { name: name.to_string(), shape, data });
                }
                _ => {
                    ckpt.meta.insert(k.to_string(), v.to_string());
                }
            }
        }
        if !saw_format {
            return Err(bad("missing format line".into()));
        }
        if offset != blob.len() {
            return Err(bad(format!("blob has {} trailing bytes", blob.len() - offset)));
        }
        Ok(ckpt)
    }

    pub fn tensor(&self, name: &str) -> Option<Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .and_then(|t| Tensor::new(t.shape.clone(), t.data.clone()).ok())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::layers::{BatchNorm, Linear};
    use crate::rng::substream;

    struct Pair {
        lin: Linear,
        bn: BatchNorm,
    }

    impl Module for Pair {
        fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
            self.lin.visit(&format!("{prefix}lin"), f);
            self.bn.visit(&format!("{prefix}bn"), f);
        }
        fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
            self.lin.visit_mut(&format!("{prefix}lin"), f);
            self.bn.visit_mut(&format!("{prefix}bn"), f);
        }
    }

    fn pair(seed: u64) -> Pair {
        let mut bn = BatchNorm::new(3);
        bn.running_var.data_mut().copy_from_slice(&[0.1, 1.0 / 3.0, std::f64::consts::PI]);
        Pair { lin: Linear::new(4, 3, &mut substream(seed, "init")), bn }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("model");
        let src = pair(1);
        let mut meta = BTreeMap::new();
        meta.insert("seed".into(), "1".into());
        meta.insert("epoch".into(), "10".into());
        let ckpt = Checkpoint::capture(&src, meta);
        ckpt.save(&stem).unwrap();
        let loaded = Checkpoint::load(&stem).unwrap();
        assert_eq!(loaded, ckpt);

        let mut dst = pair(2);
        loaded.restore(&mut dst).unwrap();
        let bits = |p: &Pair| {
            let mut v = Vec::new();
            p.visit("", &mut |_, t| v.extend(t.data().iter().map(|x| x.to_bits())));
            v
        };
        assert_eq!(bits(&src), bits(&dst));
        assert_eq!(loaded.get("epoch"), Some("10"));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let ckpt = Checkpoint::capture(&Linear::new(3, 2, &mut substream(0, "x")), BTreeMap::new());
        let mut other = Linear::new(2, 2, &mut substream(0, "x"));
        assert!(ckpt.restore(&mut other).is_err());
    }

    #[test]
    fn missing_files_name_the_artifact() {
        let dir = tempfile::tempdir().unwrap();
        match Checkpoint::load(&dir.path().join("nope")) {
            Err(Error::MissingArtifact { path, .. }) => assert!(path.ends_with("nope.manifest")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
