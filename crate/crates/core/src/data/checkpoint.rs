//! "WAE1" checkpoint container.
//!
//! Layout (all integers little-endian u32):
//! `magic "WAE1" | version | entry count | entries | metadata length | metadata`,
//! where each entry is `name length | UTF-8 name | rank | dims | f32 payload`
//! and the metadata block is UTF-8 `key=value` lines.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::pipeline::{Pipeline, PipelineKind};
use crate::tensor::{Real, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"WAE1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor<f32>)>,
    pub metadata: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    fn meta_parse<V: std::str::FromStr>(&self, key: &str) -> Result<V> {
        self.meta(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::invalid(format!("checkpoint metadata lacks a valid `{key}`")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend(CHECKPOINT_VERSION.to_le_bytes());
        out.extend((self.tensors.len() as u32).to_le_bytes());
        let mut seen = HashSet::new();
        for (name, t) in &self.tensors {
            if !seen.insert(name.as_str()) {
                return Err(Error::invalid(format!("duplicate tensor name `{name}`")));
            }
            out.extend((name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend(4u32.to_le_bytes());
            for d in t.shape() {
                out.extend((d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend(v.to_le_bytes());
            }
        }
        let mut meta = String::new();
        for (k, v) in &self.metadata {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::invalid(format!(
                    "metadata entry `{k}` not representable"
                )));
            }
            meta.push_str(&format!("{k}={v}\n"));
        }
        out.extend((meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader {
            bytes,
            pos: 0,
            path,
        };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(r.err_at(0, "bad magic, expected WAE1"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(r.err_at(4, format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        let mut seen = HashSet::new();
        for _ in 0..count {
            let at = r.pos;
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| r.err_at(at, "tensor name is not UTF-8"))?
                .to_string();
            if !seen.insert(name.clone()) {
                return Err(r.err_at(at, format!("duplicate tensor name `{name}`")));
            }
            let rank = r.u32()? as usize;
            if rank > 4 {
                return Err(r.err_at(r.pos - 4, format!("rank {rank} > 4")));
            }
            let mut shape = [1usize; 4];
            for i in 0..rank {
                shape[4 - rank + i] = r.u32()? as usize;
            }
            let n: usize = shape.iter().product();
            let raw = r.take(
                n.checked_mul(4)
                    .ok_or_else(|| r.err_at(at, "tensor too large"))?,
            )?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            tensors.push((name, Tensor::from_vec(shape, data)?));
        }
        let at = r.pos;
        let len = r.u32()? as usize;
        let text =
            std::str::from_utf8(r.take(len)?).map_err(|_| r.err_at(at, "metadata is not UTF-8"))?;
        let mut metadata = BTreeMap::new();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| r.err_at(at, format!("metadata line `{line}` lacks `=`")))?;
            metadata.insert(k.to_string(), v.to_string());
        }
        if r.pos != bytes.len() {
            return Err(r.err_at(r.pos, "trailing bytes after metadata"));
        }
        Ok(Self { tensors, metadata })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err_at(&self, offset: usize, msg: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.display().to_string(),
            offset: offset as u64,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.err_at(self.pos, format!("truncated: wanted {n} more bytes"))),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Writes to a temporary file in the target directory, then renames.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(&bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    Checkpoint::from_bytes(&bytes, path)
}

/// Checkpoint of a pipeline plus the metadata needed to rebuild it.
pub fn pipeline_checkpoint<T: Real>(
    p: &Pipeline<T>,
    extra: &BTreeMap<String, String>,
) -> Checkpoint {
    let tensors = p
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.cast::<f32>()))
        .collect();
    let mut metadata = extra.clone();
    metadata.insert("kind".into(), p.kind.to_string());
    metadata.insert("channels".into(), p.image_channels().to_string());
    metadata.insert("classes".into(), p.classifier.classes().to_string());
    metadata.insert("completed_stage".into(), p.completed_stage.to_string());
    Checkpoint { tensors, metadata }
}

pub fn save_pipeline<T: Real>(
    p: &Pipeline<T>,
    extra: &BTreeMap<String, String>,
    path: &Path,
) -> Result<()> {
    save_checkpoint(&pipeline_checkpoint(p, extra), path)
}

/// Rebuilds a pipeline from a checkpoint written by [`save_pipeline`].
pub fn load_pipeline<T: Real>(path: &Path) -> Result<(Pipeline<T>, Checkpoint)> {
    let ckpt = load_checkpoint(path)?;
    let kind: PipelineKind = ckpt
        .meta("kind")
        .ok_or_else(|| Error::invalid("checkpoint metadata lacks `kind`"))?
        .parse()?;
    let channels: usize = ckpt.meta_parse("channels")?;
    let classes: usize = ckpt.meta_parse("classes")?;
    let mut p = Pipeline::<T>::new(kind, channels, classes, &mut crate::training::seeded_rng(0));
    let cast: Vec<(String, Tensor<T>)> = ckpt
        .tensors
        .iter()
        .map(|(n, t)| (n.clone(), t.cast()))
        .collect();
    p.load_tensors(&cast)?;
    p.completed_stage = ckpt.meta_parse("completed_stage")?;
    Ok((p, ckpt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::random_tensor;

    fn sample() -> Checkpoint {
        let mut metadata = BTreeMap::new();
        metadata.insert("stage".into(), "2".into());
        metadata.insert("seed".into(), "17".into());
        Checkpoint {
            tensors: vec![
                ("a.weight".into(), random_tensor([4, 3, 3, 3], 1)),
                ("a.bias".into(), random_tensor([1, 4, 1, 1], 2)),
            ],
            metadata,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.wae");
        let c = sample();
        save_checkpoint(&c, &p).unwrap();
        let back = load_checkpoint(&p).unwrap();
        assert_eq!(back.metadata, c.metadata);
        for ((n1, t1), (n2, t2)) in c.tensors.iter().zip(&back.tensors) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            assert!(t1
                .data()
                .iter()
                .zip(t2.data())
                .all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn corrupted_magic_rejected() {
        let mut b = sample().to_bytes().unwrap();
        b[0] = b'X';
        let err = Checkpoint::from_bytes(&b, Path::new("x"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("bad magic"), "{err}");
    }

    #[test]
    fn truncation_and_bad_version_rejected() {
        let b = sample().to_bytes().unwrap();
        for cut in [3, 10, 40, b.len() - 1] {
            assert!(
                Checkpoint::from_bytes(&b[..cut], Path::new("x")).is_err(),
                "cut {cut}"
            );
        }
        let mut v = b.clone();
        v[4] = 9;
        assert!(Checkpoint::from_bytes(&v, Path::new("x"))
            .unwrap_err()
            .to_string()
            .contains("version"));
    }

    #[test]
    fn duplicates_rejected_both_ways() {
        let mut c = sample();
        c.tensors
            .push(("a.bias".into(), Tensor::zeros([1, 1, 1, 1])));
        assert!(c.to_bytes().is_err());
        // hand-build a file with a duplicate entry
        let mut b = Vec::new();
        b.extend_from_slice(CHECKPOINT_MAGIC);
        b.extend(1u32.to_le_bytes());
        b.extend(2u32.to_le_bytes());
        for _ in 0..2 {
            b.extend(1u32.to_le_bytes());
            b.push(b'x');
            b.extend(1u32.to_le_bytes());
            b.extend(1u32.to_le_bytes());
            b.extend(0f32.to_le_bytes());
        }
        b.extend(0u32.to_le_bytes());
        assert!(Checkpoint::from_bytes(&b, Path::new("x"))
            .unwrap_err()
            .to_string()
            .contains("duplicate"));
    }

    #[test]
    fn empty_map_loads_empty() {
        let c = Checkpoint::default();
        let back = Checkpoint::from_bytes(&c.to_bytes().unwrap(), Path::new("x")).unwrap();
        assert!(back.tensors.is_empty() && back.metadata.is_empty());
    }

    #[test]
    fn pipeline_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.wae");
        let mut p = Pipeline::<f32>::new(
            PipelineKind::Wae,
            3,
            10,
            &mut crate::training::seeded_rng(9),
        );
        p.completed_stage = 2;
        save_pipeline(&p, &BTreeMap::new(), &path).unwrap();
        let (q, _) = load_pipeline::<f32>(&path).unwrap();
        assert_eq!(p, q);
    }
}
