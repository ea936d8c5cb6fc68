//! Checkpoint files and run configuration.
//!
//! Layout: `IDADCKPT`, u32 version, u64 descriptor length, TOML descriptor,
//! u32 tensor count, then per tensor (u32 name length, name, u32 rank, u64
//! extents, f64 values), all little-endian, and a trailing FNV-1a 64 checksum
//! of every preceding byte.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::models::{ImplicitModel, ModelKind};
use crate::nets::{CriticNet, DesignTransform, ParamStore};
use crate::rng::fnv1a;
use crate::tensor_ad::Tensor;
use crate::train::{build_networks, Designer, Method, TraceSummary, TrainConfig, Trained};

pub const MAGIC: &[u8; 8] = b"IDADCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum StoreError {
    #[error("bad magic: not an iDAD checkpoint")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("truncated checkpoint: {0}")]
    Truncated(String),
    #[error("checksum mismatch: stored {stored:016x}, computed {computed:016x}")]
    ChecksumMismatch { stored: u64, computed: u64 },
    #[error("invalid descriptor: {0}")]
    Descriptor(String),
    #[error("tensor `{name}`: {detail}")]
    Tensor { name: String, detail: String },
}

/// Writes through a temporary sibling and renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Human-readable part of a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Descriptor {
    pub model: ModelKind,
    pub method: Method,
    pub design_transform: DesignTransform,
    pub final_objective: f64,
    pub summary: TraceSummary,
    pub config: TrainConfig,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub descriptor: Descriptor,
    /// Named tensors in canonical (sorted) order; names are `designer/...` or `critic/...`.
    pub tensors: BTreeMap<String, Tensor>,
}

/// Networks restored from a checkpoint.
#[derive(Debug, Clone)]
pub struct Restored {
    pub config: TrainConfig,
    pub designer: Designer,
    pub critic: Option<CriticNet>,
}

fn collect(prefix: &str, store: &ParamStore, out: &mut BTreeMap<String, Tensor>) {
    for (name, t) in store.iter() {
        out.insert(format!("{prefix}/{name}"), t.clone());
    }
}

fn fill(prefix: &str, store: &mut ParamStore, tensors: &BTreeMap<String, Tensor>, used: &mut usize) -> Result<()> {
    let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
    for name in names {
        let key = format!("{prefix}/{name}");
        let src = tensors
            .get(&key)
            .ok_or_else(|| StoreError::Tensor { name: key.clone(), detail: "missing".into() })?;
        let dst = store.by_name_mut(&name).expect("name taken from the store");
        if dst.shape() != src.shape() {
            return Err(StoreError::Tensor {
                name: key,
                detail: format!("shape {:?} does not match the architecture's {:?}", src.shape(), dst.shape()),
            }
            .into());
        }
        *dst = src.clone();
        *used += 1;
    }
    Ok(())
}

impl Checkpoint {
    pub fn from_trained(trained: &Trained, model: &dyn ImplicitModel) -> Self {
        let mut tensors = BTreeMap::new();
        collect("designer", trained.designer.store(), &mut tensors);
        if let Some(c) = &trained.critic {
            collect("critic", c.store(), &mut tensors);
        }
        let entries = tensors
            .iter()
            .map(|(name, t)| TensorEntry { name: name.clone(), shape: t.shape().to_vec() })
            .collect();
        Checkpoint {
            descriptor: Descriptor {
                model: model.info().kind,
                method: trained.config.method,
                design_transform: model.design_transform(),
                final_objective: trained.summary.final_objective,
                summary: trained.summary.clone(),
                config: trained.config.clone(),
                tensors: entries,
            },
            tensors,
        }
    }

    /// Rebuilds the networks for `model` and loads the stored weights into them.
    pub fn restore(&self, model: &dyn ImplicitModel) -> Result<Restored> {
        let d = &self.descriptor;
        if model.info().kind != d.model {
            return Err(Error::Config(format!(
                "checkpoint was trained on {}, not {}",
                d.model.name(),
                model.info().kind.name()
            )));
        }
        let (mut designer, mut critic) = build_networks(&d.config, model)?;
        let mut used = 0;
        fill("designer", designer.store_mut(), &self.tensors, &mut used)?;
        if let Some(c) = critic.as_mut() {
            fill("critic", c.store_mut(), &self.tensors, &mut used)?;
        }
        if used != self.tensors.len() {
            return Err(StoreError::Descriptor(format!(
                "{} stored tensors do not belong to the architecture",
                self.tensors.len() - used
            ))
            .into());
        }
        Ok(Restored { config: d.config.clone(), designer, critic })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let text = toml::to_string(&self.descriptor).map_err(|e| StoreError::Descriptor(e.to_string()))?;
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        b.extend_from_slice(&(text.len() as u64).to_le_bytes());
        b.extend_from_slice(text.as_bytes());
        b.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            b.extend_from_slice(&(name.len() as u32).to_le_bytes());
            b.extend_from_slice(name.as_bytes());
            b.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &e in t.shape() {
                b.extend_from_slice(&(e as u64).to_le_bytes());
            }
            for v in t.data() {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        let sum = fnv1a(&b);
        b.extend_from_slice(&sum.to_le_bytes());
        Ok(b)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..8] != MAGIC {
            return Err(StoreError::BadMagic.into());
        }
        let mut r = Reader { bytes, pos: 8 };
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(StoreError::UnsupportedVersion { found: version, supported: FORMAT_VERSION }.into());
        }
        let len = r.u64("descriptor length")? as usize;
        let text = std::str::from_utf8(r.take(len, "descriptor")?)
            .map_err(|e| StoreError::Descriptor(e.to_string()))?;
        let count = r.u32("tensor count")? as usize;
        let mut tensors = BTreeMap::new();
        for k in 0..count {
            let what = format!("tensor record {k}");
            let name_len = r.u32(&what)? as usize;
            let name = String::from_utf8(r.take(name_len, &what)?.to_vec())
                .map_err(|e| StoreError::Descriptor(e.to_string()))?;
            let rank = r.u32(&what)? as usize;
            let shape = (0..rank).map(|_| r.u64(&what).map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let raw = r.take(numel.checked_mul(8).ok_or_else(|| StoreError::Truncated(what.clone()))?, &what)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            let t = Tensor::new(shape, data).map_err(|e| StoreError::Tensor { name: name.clone(), detail: e.to_string() })?;
            tensors.insert(name, t);
        }
        let body_end = r.pos;
        let stored = r.u64("checksum")?;
        if r.pos != bytes.len() {
            return Err(StoreError::Descriptor(format!("{} trailing bytes after the checksum", bytes.len() - r.pos)).into());
        }
        let computed = fnv1a(&bytes[..body_end]);
        if stored != computed {
            return Err(StoreError::ChecksumMismatch { stored, computed }.into());
        }
        let descriptor: Descriptor = toml::from_str(text).map_err(|e| StoreError::Descriptor(e.to_string()))?;
        let listed: Vec<(&str, &[usize])> = descriptor.tensors.iter().map(|e| (e.name.as_str(), e.shape.as_slice())).collect();
        let actual: Vec<(&str, &[usize])> = tensors.iter().map(|(n, t)| (n.as_str(), t.shape())).collect();
        if listed != actual {
            return Err(StoreError::Descriptor("tensor list does not match the records".into()).into());
        }
        Ok(Checkpoint { descriptor, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        atomic_write(path.as_ref(), &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| StoreError::Truncated(format!("{what} ends past the end of the file")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

/// A preset name, or a path to a TOML config file.
pub fn load_config(name_or_path: &str) -> Result<TrainConfig> {
    if Path::new(name_or_path).is_file() {
        return TrainConfig::from_toml_str(&std::fs::read_to_string(name_or_path)?);
    }
    TrainConfig::preset(name_or_path)
}

/// Trains nothing; pairs a restored checkpoint with a freshly built model.
pub fn open_checkpoint(path: impl AsRef<Path>) -> Result<(Checkpoint, Arc<dyn ImplicitModel>, Restored)> {
    let ck = Checkpoint::load(path)?;
    let streams = crate::rng::SeedStreams::new(ck.descriptor.config.seed);
    let model = ck.descriptor.config.model.build(&streams.child("model"))?;
    let restored = ck.restore(model.as_ref())?;
    Ok((ck, model, restored))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::{train, Method};

    fn tiny(method: Method) -> (Trained, Arc<dyn ImplicitModel>) {
        let mut c = TrainConfig::preset("linear_gaussian_desk").unwrap().with_method(method);
        c.steps = 3;
        c.batch_size = 8;
        let model = c.model.build(&crate::rng::SeedStreams::new(c.seed).child("model")).unwrap();
        (train(c).unwrap(), model)
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        for method in [Method::Idad, Method::Dad, Method::Static] {
            let (t, m) = tiny(method);
            let ck = Checkpoint::from_trained(&t, m.as_ref());
            let a = ck.to_bytes().unwrap();
            let back = Checkpoint::from_bytes(&a).unwrap();
            assert_eq!(back, ck);
            assert_eq!(back.to_bytes().unwrap(), a);
            let r = back.restore(m.as_ref()).unwrap();
            assert_eq!(r.designer.store(), t.designer.store());
            assert_eq!(r.critic.as_ref().map(|c| c.store()), t.critic.as_ref().map(|c| c.store()));
        }
    }

    fn bytes() -> Vec<u8> {
        let (t, m) = tiny(Method::Idad);
        Checkpoint::from_trained(&t, m.as_ref()).to_bytes().unwrap()
    }

    fn store_err(r: Result<Checkpoint>) -> StoreError {
        match r {
            Err(Error::Store(e)) => e,
            other => panic!("expected a store error, got {other:?}"),
        }
    }

    #[test]
    fn corruption_is_detected() {
        let good = bytes();
        let mut b = good.clone();
        b[0] ^= 0xff;
        assert_eq!(store_err(Checkpoint::from_bytes(&b)), StoreError::BadMagic);

        let mut b = good.clone();
        b[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
        let e = store_err(Checkpoint::from_bytes(&b));
        assert_eq!(e, StoreError::UnsupportedVersion { found: 2, supported: 1 });
        assert!(e.to_string().contains('2') && e.to_string().contains('1'));

        let b = &good[..good.len() - 100];
        assert!(matches!(store_err(Checkpoint::from_bytes(b)), StoreError::Truncated(_)));

        let mut b = good.clone();
        let n = b.len();
        b[n - 20] ^= 0x01;
        assert!(matches!(store_err(Checkpoint::from_bytes(&b)), StoreError::ChecksumMismatch { .. }));
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.idad");
        let (t, m) = tiny(Method::Idad);
        Checkpoint::from_trained(&t, m.as_ref()).save(&path).unwrap();
        let first = std::fs::read(&path).unwrap();
        Checkpoint::load(&path).unwrap().save(&path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
        let (ck, _, restored) = open_checkpoint(&path).unwrap();
        assert_eq!(ck.descriptor.method, Method::Idad);
        assert!(restored.critic.is_some());
    }

    #[test]
    fn wrong_model_is_rejected() {
        let (t, m) = tiny(Method::Idad);
        let ck = Checkpoint::from_trained(&t, m.as_ref());
        let pk = crate::models::PkModel::new();
        assert!(matches!(ck.restore(&pk), Err(Error::Config(_))));
    }

    #[test]
    fn configs_resolve_from_presets_and_files() {
        assert_eq!(load_config("pk_desk").unwrap().name, "pk_desk");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        let mut c = TrainConfig::preset("pk_desk").unwrap();
        c.steps = 17;
        std::fs::write(&path, c.to_toml_string()).unwrap();
        assert_eq!(load_config(path.to_str().unwrap()).unwrap().steps, 17);
        assert!(load_config("nope").is_err());
    }
}
