//! File-backed record store: one JSON record per file plus an index manifest.
//!
//! Record layout: `{"version":1,"id":..,"kind":..,"sha256":..,"payload":<value>}` where
//! `sha256` is the hex digest of the payload text exactly as written.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};

use super::DataError;

pub const STORE_FORMAT_VERSION: u32 = 1;
/// Environment variable naming the store root directory.
pub const STORE_ENV: &str = "CITYAGENT_STORE";

const INDEX_FILE: &str = "index.json";
const RECORD_DIR: &str = "records";

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

#[derive(Serialize)]
struct RecordOut<'a> {
    version: u32,
    id: &'a str,
    kind: &'a str,
    sha256: &'a str,
    payload: &'a RawValue,
}

#[derive(Deserialize)]
struct RecordIn {
    version: u32,
    id: String,
    kind: String,
    sha256: String,
    payload: Box<RawValue>,
}

/// Index entry for one record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordHeader {
    pub kind: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug)]
pub struct FileStore {
    root: PathBuf,
    index_lock: Mutex<()>,
}

fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    let dir = path.parent().expect("store paths have a parent");
    let tmp = dir.join(format!(
        ".tmp-{}-{}",
        std::process::id(),
        TEMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    let mut f = fs::File::create(&tmp).map_err(|e| DataError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| DataError::io(&tmp, e))?;
    f.sync_all().map_err(|e| DataError::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| DataError::io(path, e))
}

impl FileStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, DataError> {
        let root = root.into();
        let records = root.join(RECORD_DIR);
        fs::create_dir_all(&records).map_err(|e| DataError::io(&records, e))?;
        Ok(Self {
            root,
            index_lock: Mutex::new(()),
        })
    }

    /// Opens the root named by [`STORE_ENV`], falling back to `default`.
    pub fn from_env(default: impl Into<PathBuf>) -> Result<Self, DataError> {
        match std::env::var_os(STORE_ENV) {
            Some(root) => Self::open(PathBuf::from(root)),
            None => Self::open(default),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn record_path(&self, id: &str) -> PathBuf {
        self.root.join(RECORD_DIR).join(format!("{id}.json"))
    }

    /// Stores `value` under a content-derived id (`<kind>-<digest prefix>`) and returns it.
    pub fn store<T: Serialize>(&self, kind: &str, value: &T) -> Result<String, DataError> {
        let payload =
            serde_json::to_string(value).map_err(|e| DataError::Invalid(e.to_string()))?;
        let id = format!("{kind}-{}", &sha256_hex(&payload)[..16]);
        self.put_text(&id, kind, payload)?;
        Ok(id)
    }

    /// Stores `value` under an explicit id, replacing any previous record.
    pub fn put<T: Serialize>(&self, id: &str, kind: &str, value: &T) -> Result<(), DataError> {
        let payload =
            serde_json::to_string(value).map_err(|e| DataError::Invalid(e.to_string()))?;
        self.put_text(id, kind, payload)
    }

    fn put_text(&self, id: &str, kind: &str, payload: String) -> Result<(), DataError> {
        if !valid_id(id) || !valid_id(kind) {
            return Err(DataError::Invalid(format!(
                "ids and kinds use [A-Za-z0-9._-] only: {id:?} / {kind:?}"
            )));
        }
        let sha256 = sha256_hex(&payload);
        let raw = RawValue::from_string(payload).map_err(|e| DataError::Invalid(e.to_string()))?;
        let record = serde_json::to_vec(&RecordOut {
            version: STORE_FORMAT_VERSION,
            id,
            kind,
            sha256: &sha256,
            payload: &raw,
        })
        .map_err(|e| DataError::Invalid(e.to_string()))?;
        write_atomic(&self.record_path(id), &record)?;
        let _guard = self.index_lock.lock().unwrap_or_else(|e| e.into_inner());
        let mut index = self.read_index()?;
        index.insert(
            id.to_string(),
            RecordHeader {
                kind: kind.to_string(),
                sha256,
                bytes: record.len(),
            },
        );
        let text =
            serde_json::to_vec_pretty(&index).map_err(|e| DataError::Invalid(e.to_string()))?;
        write_atomic(&self.root.join(INDEX_FILE), &text)
    }

    pub fn load<T: DeserializeOwned>(&self, id: &str) -> Result<T, DataError> {
        let (_, payload) = self.load_raw(id)?;
        serde_json::from_str(&payload).map_err(|e| DataError::Corrupt {
            id: id.to_string(),
            reason: e.to_string(),
        })
    }

    /// Kind and verified payload text of a record.
    pub fn load_raw(&self, id: &str) -> Result<(String, String), DataError> {
        if !valid_id(id) {
            return Err(DataError::NotFound(id.to_string()));
        }
        let path = self.record_path(id);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(DataError::NotFound(id.to_string()))
            }
            Err(e) => return Err(DataError::io(&path, e)),
        };
        let corrupt = |reason: String| DataError::Corrupt {
            id: id.to_string(),
            reason,
        };
        let rec: RecordIn = serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))?;
        if rec.version != STORE_FORMAT_VERSION {
            return Err(corrupt(format!(
                "unsupported record version {}",
                rec.version
            )));
        }
        if rec.id != id {
            return Err(corrupt(format!("record claims id {:?}", rec.id)));
        }
        if sha256_hex(rec.payload.get()) != rec.sha256 {
            return Err(corrupt("checksum mismatch".into()));
        }
        Ok((rec.kind, rec.payload.get().to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        valid_id(id) && self.record_path(id).is_file()
    }

    fn read_index(&self) -> Result<BTreeMap<String, RecordHeader>, DataError> {
        let path = self.root.join(INDEX_FILE);
        match fs::read_to_string(&path) {
            Ok(t) => serde_json::from_str(&t).map_err(|e| DataError::Corrupt {
                id: INDEX_FILE.into(),
                reason: e.to_string(),
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(BTreeMap::new()),
            Err(e) => Err(DataError::io(&path, e)),
        }
    }

    /// Index entries, optionally restricted to one kind, in id order.
    pub fn list(&self, kind: Option<&str>) -> Result<Vec<(String, RecordHeader)>, DataError> {
        let _guard = self.index_lock.lock().unwrap_or_else(|e| e.into_inner());
        Ok(self
            .read_index()?
            .into_iter()
            .filter(|(_, h)| kind.is_none_or(|k| h.kind == k))
            .collect())
    }
}
