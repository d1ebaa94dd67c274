//! JSON checkpoints: `{format_version, config, params: {name: {shape, data}}}`.
//!
//! Floats are written as shortest round-trip decimals, so a load restores
//! every value bit-for-bit. Writes go to a temporary file in the target
//! directory and are renamed into place.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint<C> {
    pub format_version: u32,
    pub config: C,
    pub params: BTreeMap<String, Tensor>,
}

impl<C> Checkpoint<C> {
    pub fn new(config: C, store: &ParamStore) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            config,
            params: store
                .iter()
                .map(|(n, p)| (n.to_string(), p.value.clone()))
                .collect(),
        }
    }

    pub fn to_store(&self) -> ParamStore {
        let mut store = ParamStore::new();
        for (n, t) in &self.params {
            store.insert(n, t.clone());
        }
        store
    }
}

/// Atomically writes `contents` to `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn save_checkpoint<C: Serialize>(store: &ParamStore, config: &C, path: &Path) -> Result<()> {
    let ckpt = Checkpoint::new(config, store);
    let text = serde_json::to_string(&ckpt)?;
    write_atomic(path, text.as_bytes())
}

pub fn load_checkpoint<C: DeserializeOwned>(path: &Path) -> Result<(C, ParamStore)> {
    let fail = |reason: String| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(|e| fail(e.to_string()))?;
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| fail(e.to_string()))?;
    match raw.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == FORMAT_VERSION as u64 => {}
        Some(v) => return Err(fail(format!("format_version {v} is not supported (expected {FORMAT_VERSION})"))),
        None => return Err(fail("missing format_version".into())),
    }
    let ckpt: Checkpoint<C> = serde_json::from_value(raw).map_err(|e| fail(e.to_string()))?;
    let store = ckpt.to_store();
    Ok((ckpt.config, store))
}

/// Loads a checkpoint into an existing store, requiring identical names and
/// shapes. On error `target` is left untouched.
pub fn load_checkpoint_into<C: DeserializeOwned>(path: &Path, target: &mut ParamStore) -> Result<C> {
    let (config, store) = load_checkpoint(path)?;
    target.load_values(&store).map_err(|e| Error::Checkpoint {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(config)
}
