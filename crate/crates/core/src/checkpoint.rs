//! The `LACP` checkpoint container.
//!
//! Layout: the four bytes `LACP`, a little-endian `u32` format version, a
//! little-endian `u64` header length, a JSON header, then every tensor's
//! values as little-endian `f64` in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cells::ParamStore;
use crate::critic::{ValueConfig, ValueNet};
use crate::embedder::{EmbedConfig, EmbedModel};
use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::policy::{PolicyConfig, PolicyNet};

pub const MAGIC: &[u8; 4] = b"LACP";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Policy,
    Value,
    Embed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub kind: ModelKind,
    pub dtype: String,
    pub tensors: Vec<TensorEntry>,
    /// The model's own configuration.
    pub model: Value,
    /// Free-form snapshot of the run that produced the checkpoint.
    pub run: Value,
}

pub fn to_bytes(kind: ModelKind, model: Value, run: Value, store: &ParamStore) -> Result<Vec<u8>> {
    let header = Header {
        kind,
        dtype: "f64".into(),
        tensors: store
            .entries()
            .iter()
            .map(|e| TensorEntry {
                name: e.name().to_string(),
                shape: e.value().shape().to_vec(),
            })
            .collect(),
        model,
        run,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + 8 * store.num_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for e in store.entries() {
        for x in e.value().data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Checkpoint("unexpected end of file".into()));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

pub fn from_bytes(mut bytes: &[u8]) -> Result<(Header, ParamStore)> {
    if take(&mut bytes, 4)? != MAGIC {
        return Err(Error::Checkpoint("not an LACP checkpoint".into()));
    }
    let version = u32::from_le_bytes(take(&mut bytes, 4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let len = u64::from_le_bytes(take(&mut bytes, 8)?.try_into().expect("8 bytes"));
    let header: Header = serde_json::from_slice(take(&mut bytes, len as usize)?)?;
    if header.dtype != "f64" {
        return Err(Error::Checkpoint(format!("unsupported dtype {}", header.dtype)));
    }
    let mut store = ParamStore::new();
    for t in &header.tensors {
        let n: usize = t.shape.iter().product();
        let raw = take(&mut bytes, 8 * n)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        store.add(t.name.clone(), Tensor::new(t.shape.clone(), data)?)?;
    }
    if !bytes.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len())));
    }
    Ok((header, store))
}

pub fn save(path: &Path, kind: ModelKind, model: Value, run: Value, store: &ParamStore) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, to_bytes(kind, model, run, store)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Header, ParamStore)> {
    if !path.exists() {
        return Err(Error::MissingCheckpoint(path.to_path_buf()));
    }
    from_bytes(&fs::read(path)?)
}

fn load_kind(path: &Path, kind: ModelKind) -> Result<(Header, ParamStore)> {
    let (h, s) = load(path)?;
    if h.kind != kind {
        return Err(Error::Checkpoint(format!(
            "{} holds a {:?} model, expected {:?}",
            path.display(),
            h.kind,
            kind
        )));
    }
    Ok((h, s))
}

/// Models that can be written to and read from checkpoints.
pub trait Persist: Sized {
    fn save_checkpoint(&self, path: &Path, run: Value) -> Result<()>;
    fn load_checkpoint(path: &Path) -> Result<Self>;
}

impl Persist for PolicyNet {
    fn save_checkpoint(&self, path: &Path, run: Value) -> Result<()> {
        save(path, ModelKind::Policy, serde_json::to_value(&self.config)?, run, &self.store)
    }

    fn load_checkpoint(path: &Path) -> Result<Self> {
        let (h, s) = load_kind(path, ModelKind::Policy)?;
        PolicyNet::from_store(serde_json::from_value::<PolicyConfig>(h.model)?, s)
    }
}

impl Persist for ValueNet {
    fn save_checkpoint(&self, path: &Path, run: Value) -> Result<()> {
        save(path, ModelKind::Value, serde_json::to_value(&self.config)?, run, &self.store)
    }

    fn load_checkpoint(path: &Path) -> Result<Self> {
        let (h, s) = load_kind(path, ModelKind::Value)?;
        ValueNet::from_store(serde_json::from_value::<ValueConfig>(h.model)?, s)
    }
}

impl Persist for EmbedModel {
    fn save_checkpoint(&self, path: &Path, run: Value) -> Result<()> {
        save(path, ModelKind::Embed, serde_json::to_value(&self.config)?, run, &self.store)
    }

    fn load_checkpoint(path: &Path) -> Result<Self> {
        let (h, s) = load_kind(path, ModelKind::Embed)?;
        EmbedModel::from_store(serde_json::from_value::<EmbedConfig>(h.model)?, s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn policy() -> PolicyNet {
        PolicyNet::new(PolicyConfig::new(10, 6), &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let p = policy();
        let bytes = to_bytes(ModelKind::Policy, serde_json::to_value(&p.config).unwrap(), Value::Null, &p.store).unwrap();
        let (h, s) = from_bytes(&bytes).unwrap();
        assert_eq!(h.kind, ModelKind::Policy);
        for id in p.store.ids() {
            let a: Vec<u64> = p.store.value(id).data().iter().map(|x| x.to_bits()).collect();
            let b: Vec<u64> = s.value(id).data().iter().map(|x| x.to_bits()).collect();
            assert_eq!(a, b);
            assert_eq!(p.store.entry(id).name(), s.entry(id).name());
        }
        let again = to_bytes(ModelKind::Policy, h.model, h.run, &s).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn version_and_magic_are_checked() {
        let p = policy();
        let mut bytes = to_bytes(ModelKind::Policy, Value::Null, Value::Null, &p.store).unwrap();
        bytes[4] = 2;
        assert!(matches!(
            from_bytes(&bytes),
            Err(Error::VersionMismatch { found: 2, expected: 1 })
        ));
        bytes[0] = b'X';
        assert!(matches!(from_bytes(&bytes), Err(Error::Checkpoint(_))));
        let short = to_bytes(ModelKind::Policy, Value::Null, Value::Null, &p.store).unwrap();
        assert!(from_bytes(&short[..short.len() - 1]).is_err());
    }
}
