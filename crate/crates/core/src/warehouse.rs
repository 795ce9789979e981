//! ID-keyed blob storage with pluggable backends.
//!
//! The warehouse hands out a fresh random [`DataId`] for every stored
//! blob and can place blobs in RAM or on local disk. Adding another
//! backend means implementing [`StorageBackend`] and registering it; the
//! warehouse itself does not change.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::DataId;

#[derive(Debug, Error)]
pub enum WarehouseError {
    #[error("no datum stored under id {0}")]
    NotFound(DataId),
    #[error("backend {0:?} is unavailable: {1}")]
    BackendUnavailable(StorageBackendKind, String),
    #[error("refusing to store an empty blob")]
    EmptyBlob,
}

/// Which physical store holds a datum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StorageBackendKind {
    Memory,
    LocalFile,
}

/// Write/read/remove contract every backend fulfils.
pub trait StorageBackend: Send + Sync {
    fn write(&self, id: &DataId, blob: &[u8]) -> io::Result<()>;
    fn read(&self, id: &DataId) -> io::Result<Option<Vec<u8>>>;
    fn remove(&self, id: &DataId) -> io::Result<()>;
}

struct MemoryBackend {
    blobs: RwLock<HashMap<DataId, Vec<u8>>>,
}

impl StorageBackend for MemoryBackend {
    fn write(&self, id: &DataId, blob: &[u8]) -> io::Result<()> {
        self.blobs.write().unwrap().insert(id.clone(), blob.to_vec());
        Ok(())
    }

    fn read(&self, id: &DataId) -> io::Result<Option<Vec<u8>>> {
        Ok(self.blobs.read().unwrap().get(id).cloned())
    }

    fn remove(&self, id: &DataId) -> io::Result<()> {
        self.blobs.write().unwrap().remove(id);
        Ok(())
    }
}

/// Stores each blob as `<root>/<hex-id>.blob`.
struct LocalFileBackend {
    root: PathBuf,
}

impl LocalFileBackend {
    fn path_for(&self, id: &DataId) -> PathBuf {
        self.root.join(format!("{}.blob", id))
    }
}

impl StorageBackend for LocalFileBackend {
    fn write(&self, id: &DataId, blob: &[u8]) -> io::Result<()> {
        fs::write(self.path_for(id), blob)
    }

    fn read(&self, id: &DataId) -> io::Result<Option<Vec<u8>>> {
        match fs::read(self.path_for(id)) {
            Ok(bytes) => Ok(Some(bytes)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn remove(&self, id: &DataId) -> io::Result<()> {
        match fs::remove_file(self.path_for(id)) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(e),
        }
    }
}

/// Thread-safe store mapping ids to blobs across backends.
pub struct Warehouse {
    index: RwLock<HashMap<DataId, StorageBackendKind>>,
    memory: MemoryBackend,
    localfile: Option<LocalFileBackend>,
    rng: Mutex<ChaCha20Rng>,
}

impl Warehouse {
    /// Warehouse with only the in-memory backend.
    pub fn in_memory() -> Self {
        Self::build(None)
    }

    /// Warehouse with both backends; `root` is created if missing.
    pub fn with_root(root: impl AsRef<Path>) -> io::Result<Self> {
        fs::create_dir_all(root.as_ref())?;
        Ok(Self::build(Some(root.as_ref().to_path_buf())))
    }

    fn build(root: Option<PathBuf>) -> Self {
        Self {
            index: RwLock::new(HashMap::new()),
            memory: MemoryBackend { blobs: RwLock::new(HashMap::new()) },
            localfile: root.map(|root| LocalFileBackend { root }),
            rng: Mutex::new(ChaCha20Rng::from_entropy()),
        }
    }

    /// Fix the id-generation stream; used by the deterministic harness.
    pub fn reseed(&self, seed: u64) {
        *self.rng.lock().unwrap() = ChaCha20Rng::seed_from_u64(seed);
    }

    fn backend(&self, kind: StorageBackendKind) -> Result<&dyn StorageBackend, WarehouseError> {
        match kind {
            StorageBackendKind::Memory => Ok(&self.memory),
            StorageBackendKind::LocalFile => self
                .localfile
                .as_ref()
                .map(|b| b as &dyn StorageBackend)
                .ok_or_else(|| {
                    WarehouseError::BackendUnavailable(
                        kind,
                        "no warehouse root configured".to_string(),
                    )
                }),
        }
    }

    /// Stores a blob and returns the fresh id that names it.
    pub fn put(&self, blob: &[u8], kind: StorageBackendKind) -> Result<DataId, WarehouseError> {
        if blob.is_empty() {
            return Err(WarehouseError::EmptyBlob);
        }
        let backend = self.backend(kind)?;
        let id = loop {
            let candidate = DataId::random(&mut *self.rng.lock().unwrap());
            let mut index = self.index.write().unwrap();
            if !index.contains_key(&candidate) {
                index.insert(candidate.clone(), kind);
                break candidate;
            }
        };
        if let Err(e) = backend.write(&id, blob) {
            self.index.write().unwrap().remove(&id);
            return Err(WarehouseError::BackendUnavailable(kind, e.to_string()));
        }
        Ok(id)
    }

    /// Returns the stored blob, byte for byte.
    pub fn get(&self, id: &DataId) -> Result<Vec<u8>, WarehouseError> {
        let kind = *self
            .index
            .read()
            .unwrap()
            .get(id)
            .ok_or_else(|| WarehouseError::NotFound(id.clone()))?;
        match self.backend(kind)?.read(id) {
            Ok(Some(bytes)) => Ok(bytes),
            Ok(None) => Err(WarehouseError::NotFound(id.clone())),
            Err(e) => Err(WarehouseError::BackendUnavailable(kind, e.to_string())),
        }
    }

    /// Removes a datum. Unknown ids are a no-op.
    pub fn delete(&self, id: &DataId) {
        let kind = self.index.write().unwrap().remove(id);
        if let Some(kind) = kind {
            if let Ok(backend) = self.backend(kind) {
                let _ = backend.remove(id);
            }
        }
    }
}
