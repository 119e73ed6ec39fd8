// SPDX-License-Identifier: Apache-2.0

//! Object store abstraction.
//!
//! Everything in the data plane is built from three primitives: an atomic
//! put-if-absent, range reads of immutable objects, and idempotent delete.
//! Two backends ship here:
//!
//! - [`MemoryStore`]: a map guarded by a mutex, with optional latency and
//!   crash injection through a [`FaultProfile`]. This is the default for tests.
//! - [`FsStore`]: one file per object under a root directory. Put-if-absent is
//!   a temp-file write followed by a hard link, which fails if the target name
//!   already exists, so the one-winner property also holds across processes.
//!
//! The store never retries internally. A [`StoreError::TransientIo`] is
//! surfaced to the caller unchanged.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("invalid object key {key:?}: {reason}")]
    InvalidKey { key: String, reason: &'static str },

    #[error("object not found: {0}")]
    NotFound(String),

    #[error("range [{offset}, {offset}+{length}) out of bounds for {key} ({size} bytes)")]
    RangeOutOfBounds {
        key: String,
        offset: u64,
        length: u64,
        size: u64,
    },

    #[error("transient i/o error: {0}")]
    TransientIo(String),
}

impl StoreError {
    pub fn is_not_found(&self) -> bool {
        matches!(self, StoreError::NotFound(_))
    }

    pub fn is_transient(&self) -> bool {
        matches!(self, StoreError::TransientIo(_))
    }
}

/// A slash-separated object path.
///
/// Components are restricted to `[A-Za-z0-9._-]+`, and `.`/`..` are rejected,
/// so a key maps onto a relative file path without escaping the store root.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ObjectKey(String);

impl ObjectKey {
    pub fn new(path: impl Into<String>) -> Result<Self, StoreError> {
        let path = path.into();
        validate_key(&path)?;
        Ok(ObjectKey(path))
    }

    /// Appends one or more slash-separated segments.
    pub fn join(&self, suffix: &str) -> Result<Self, StoreError> {
        ObjectKey::new(format!("{}/{}", self.0, suffix))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Final path component.
    pub fn file_name(&self) -> &str {
        self.0.rsplit('/').next().unwrap_or(&self.0)
    }

    /// True if `self` lies strictly below `prefix` in the key hierarchy.
    pub fn is_under(&self, prefix: &ObjectKey) -> bool {
        self.0.len() > prefix.0.len()
            && self.0.starts_with(&prefix.0)
            && self.0.as_bytes()[prefix.0.len()] == b'/'
    }
}

fn validate_key(path: &str) -> Result<(), StoreError> {
    let fail = |reason| {
        Err(StoreError::InvalidKey {
            key: path.to_string(),
            reason,
        })
    };
    if path.is_empty() {
        return fail("empty key");
    }
    if path.starts_with('/') {
        return fail("leading slash");
    }
    for component in path.split('/') {
        if component.is_empty() {
            return fail("empty path component");
        }
        if component == "." || component == ".." {
            return fail("relative path component");
        }
        if !component
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'.' || b == b'_' || b == b'-')
        {
            return fail("component outside [A-Za-z0-9._-]");
        }
    }
    Ok(())
}

impl fmt::Display for ObjectKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for ObjectKey {
    type Error = StoreError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        ObjectKey::new(value)
    }
}

impl From<ObjectKey> for String {
    fn from(key: ObjectKey) -> Self {
        key.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PutOutcome {
    Created,
    AlreadyExists,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectMeta {
    pub key: ObjectKey,
    pub size: u64,
}

pub trait ObjectStore: Send + Sync + fmt::Debug {
    /// Creates `key` with `data` only if no object of that name exists.
    ///
    /// Among any set of concurrent callers for one key exactly one observes
    /// [`PutOutcome::Created`]; the others leave the store untouched.
    fn put_if_absent(&self, key: &ObjectKey, data: &[u8]) -> Result<PutOutcome, StoreError>;

    /// Unconditional overwrite. Only used for single-writer objects such as
    /// consumer watermarks; readers still observe either the old or the new
    /// content in full.
    fn put(&self, key: &ObjectKey, data: &[u8]) -> Result<(), StoreError>;

    fn get(&self, key: &ObjectKey) -> Result<Vec<u8>, StoreError>;

    fn get_range(&self, key: &ObjectKey, offset: u64, length: u64)
        -> Result<Vec<u8>, StoreError>;

    fn size(&self, key: &ObjectKey) -> Result<u64, StoreError>;

    /// All objects strictly below `prefix`, in lexicographic key order.
    fn list(&self, prefix: &ObjectKey) -> Result<Vec<ObjectMeta>, StoreError>;

    /// Removes `key`. Deleting a missing key succeeds.
    fn delete(&self, key: &ObjectKey) -> Result<(), StoreError>;
}

fn check_range(key: &ObjectKey, offset: u64, length: u64, size: u64) -> Result<(), StoreError> {
    match offset.checked_add(length) {
        Some(end) if end <= size => Ok(()),
        _ => Err(StoreError::RangeOutOfBounds {
            key: key.to_string(),
            offset,
            length,
            size,
        }),
    }
}

/// Latency model for injected store delays, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Latency {
    #[default]
    Zero,
    Fixed { secs: f64 },
    Uniform { lo: f64, hi: f64 },
    Exponential { mean: f64 },
}

impl Latency {
    pub fn validate(&self) -> Result<(), String> {
        let ok = match *self {
            Latency::Zero => true,
            Latency::Fixed { secs } => secs >= 0.0 && secs.is_finite(),
            Latency::Uniform { lo, hi } => lo >= 0.0 && hi >= lo && hi.is_finite(),
            Latency::Exponential { mean } => mean >= 0.0 && mean.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(format!("invalid latency {self:?}"))
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Duration {
        let secs = match *self {
            Latency::Zero => 0.0,
            Latency::Fixed { secs } => secs,
            Latency::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            Latency::Exponential { mean } => {
                let u: f64 = rng.random();
                -mean * (1.0 - u).ln()
            }
        };
        Duration::from_secs_f64(secs.max(0.0))
    }
}

/// Fault and latency injection for [`MemoryStore`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FaultProfile {
    #[serde(default)]
    pub put_latency: Latency,
    #[serde(default)]
    pub get_latency: Latency,
    /// Probability that a successful put reports `TransientIo` to its caller
    /// even though the object was written.
    #[serde(default)]
    pub crash_after_put_probability: f64,
}

impl FaultProfile {
    pub fn validate(&self) -> Result<(), String> {
        self.put_latency.validate()?;
        self.get_latency.validate()?;
        if !(0.0..=1.0).contains(&self.crash_after_put_probability) {
            return Err(format!(
                "crash_after_put_probability {} outside [0, 1]",
                self.crash_after_put_probability
            ));
        }
        Ok(())
    }
}

/// In-memory backend. Cheap to clone; clones share the same objects.
#[derive(Clone)]
pub struct MemoryStore {
    objects: Arc<Mutex<BTreeMap<ObjectKey, Arc<Vec<u8>>>>>,
    faults: Arc<FaultProfile>,
    rng: Arc<Mutex<ChaCha8Rng>>,
}

impl fmt::Debug for MemoryStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MemoryStore")
            .field("objects", &self.objects.lock().unwrap().len())
            .field("faults", &self.faults)
            .finish()
    }
}

impl Default for MemoryStore {
    fn default() -> Self {
        Self::new()
    }
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::with_faults(FaultProfile::default(), 0).expect("default profile is valid")
    }

    pub fn with_faults(faults: FaultProfile, seed: u64) -> Result<Self, StoreError> {
        faults.validate().map_err(StoreError::TransientIo)?;
        Ok(MemoryStore {
            objects: Arc::default(),
            faults: Arc::new(faults),
            rng: Arc::new(Mutex::new(ChaCha8Rng::seed_from_u64(seed))),
        })
    }

    fn delay(&self, latency: Latency) {
        if latency == Latency::Zero {
            return;
        }
        let d = latency.sample(&mut *self.rng.lock().unwrap());
        if !d.is_zero() {
            std::thread::sleep(d);
        }
    }

    fn crash_after_put(&self) -> bool {
        let p = self.faults.crash_after_put_probability;
        p > 0.0 && self.rng.lock().unwrap().random::<f64>() < p
    }

    fn lookup(&self, key: &ObjectKey) -> Result<Arc<Vec<u8>>, StoreError> {
        self.objects
            .lock()
            .unwrap()
            .get(key)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(key.to_string()))
    }

    /// Number of stored objects.
    pub fn len(&self) -> usize {
        self.objects.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ObjectStore for MemoryStore {
    fn put_if_absent(&self, key: &ObjectKey, data: &[u8]) -> Result<PutOutcome, StoreError> {
        self.delay(self.faults.put_latency);
        let outcome = {
            let mut objects = self.objects.lock().unwrap();
            if objects.contains_key(key) {
                PutOutcome::AlreadyExists
            } else {
                objects.insert(key.clone(), Arc::new(data.to_vec()));
                PutOutcome::Created
            }
        };
        if outcome == PutOutcome::Created && self.crash_after_put() {
            return Err(StoreError::TransientIo(format!(
                "connection lost after writing {key}"
            )));
        }
        Ok(outcome)
    }

    fn put(&self, key: &ObjectKey, data: &[u8]) -> Result<(), StoreError> {
        self.delay(self.faults.put_latency);
        self.objects
            .lock()
            .unwrap()
            .insert(key.clone(), Arc::new(data.to_vec()));
        if self.crash_after_put() {
            return Err(StoreError::TransientIo(format!(
                "connection lost after writing {key}"
            )));
        }
        Ok(())
    }

    fn get(&self, key: &ObjectKey) -> Result<Vec<u8>, StoreError> {
        self.delay(self.faults.get_latency);
        Ok(self.lookup(key)?.as_ref().clone())
    }

    fn get_range(
        &self,
        key: &ObjectKey,
        offset: u64,
        length: u64,
    ) -> Result<Vec<u8>, StoreError> {
        self.delay(self.faults.get_latency);
        let data = self.lookup(key)?;
        check_range(key, offset, length, data.len() as u64)?;
        Ok(data[offset as usize..(offset + length) as usize].to_vec())
    }

    fn size(&self, key: &ObjectKey) -> Result<u64, StoreError> {
        Ok(self.lookup(key)?.len() as u64)
    }

    fn list(&self, prefix: &ObjectKey) -> Result<Vec<ObjectMeta>, StoreError> {
        self.delay(self.faults.get_latency);
        let objects = self.objects.lock().unwrap();
        Ok(objects
            .range(prefix.clone()..)
            .skip_while(|(k, _)| *k == prefix)
            .take_while(|(k, _)| k.as_str().starts_with(prefix.as_str()))
            .filter(|(k, _)| k.is_under(prefix))
            .map(|(k, v)| ObjectMeta {
                key: k.clone(),
                size: v.len() as u64,
            })
            .collect())
    }

    fn delete(&self, key: &ObjectKey) -> Result<(), StoreError> {
        self.delay(self.faults.put_latency);
        self.objects.lock().unwrap().remove(key);
        Ok(())
    }
}

/// Filesystem backend rooted at a directory.
///
/// Temporary files carry a `~` in their name, which is outside the key
/// alphabet, so they can never be mistaken for objects.
#[derive(Debug, Clone)]
pub struct FsStore {
    root: PathBuf,
}

impl FsStore {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_err)?;
        Ok(FsStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path_of(&self, key: &ObjectKey) -> PathBuf {
        key.as_str().split('/').fold(self.root.clone(), |p, c| p.join(c))
    }

    fn write_temp(&self, target: &Path, data: &[u8]) -> Result<PathBuf, StoreError> {
        let dir = target.parent().expect("object paths have a parent");
        fs::create_dir_all(dir).map_err(io_err)?;
        let name = target.file_name().unwrap().to_string_lossy();
        let tmp = dir.join(format!(
            "{name}~{:016x}.tmp",
            rand::rng().random::<u64>()
        ));
        let mut file = fs::File::create(&tmp).map_err(io_err)?;
        file.write_all(data).map_err(io_err)?;
        file.sync_data().map_err(io_err)?;
        Ok(tmp)
    }

    fn walk(&self, dir: &Path, out: &mut Vec<ObjectMeta>) -> Result<(), StoreError> {
        let entries = match fs::read_dir(dir) {
            Ok(entries) => entries,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(()),
            Err(e) => return Err(io_err(e)),
        };
        for entry in entries {
            let entry = entry.map_err(io_err)?;
            let name = entry.file_name();
            let name = name.to_string_lossy();
            if name.contains('~') {
                continue;
            }
            let file_type = entry.file_type().map_err(io_err)?;
            if file_type.is_dir() {
                self.walk(&entry.path(), out)?;
            } else if file_type.is_file() {
                let rel = entry
                    .path()
                    .strip_prefix(&self.root)
                    .expect("walk stays under root")
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy().into_owned())
                    .collect::<Vec<_>>()
                    .join("/");
                // Foreign files that do not form valid keys are ignored.
                if let Ok(key) = ObjectKey::new(rel) {
                    let size = entry.metadata().map_err(io_err)?.len();
                    out.push(ObjectMeta { key, size });
                }
            }
        }
        Ok(())
    }
}

fn io_err(e: io::Error) -> StoreError {
    StoreError::TransientIo(e.to_string())
}

fn read_err(key: &ObjectKey, e: io::Error) -> StoreError {
    if e.kind() == io::ErrorKind::NotFound {
        StoreError::NotFound(key.to_string())
    } else {
        io_err(e)
    }
}

impl ObjectStore for FsStore {
    fn put_if_absent(&self, key: &ObjectKey, data: &[u8]) -> Result<PutOutcome, StoreError> {
        let target = self.path_of(key);
        let tmp = self.write_temp(&target, data)?;
        let linked = fs::hard_link(&tmp, &target);
        let _ = fs::remove_file(&tmp);
        match linked {
            Ok(()) => Ok(PutOutcome::Created),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Ok(PutOutcome::AlreadyExists),
            Err(e) => Err(io_err(e)),
        }
    }

    fn put(&self, key: &ObjectKey, data: &[u8]) -> Result<(), StoreError> {
        let target = self.path_of(key);
        let tmp = self.write_temp(&target, data)?;
        fs::rename(&tmp, &target).map_err(|e| {
            let _ = fs::remove_file(&tmp);
            io_err(e)
        })
    }

    fn get(&self, key: &ObjectKey) -> Result<Vec<u8>, StoreError> {
        fs::read(self.path_of(key)).map_err(|e| read_err(key, e))
    }

    fn get_range(
        &self,
        key: &ObjectKey,
        offset: u64,
        length: u64,
    ) -> Result<Vec<u8>, StoreError> {
        let mut file = fs::File::open(self.path_of(key)).map_err(|e| read_err(key, e))?;
        let size = file.metadata().map_err(io_err)?.len();
        check_range(key, offset, length, size)?;
        file.seek(SeekFrom::Start(offset)).map_err(io_err)?;
        let mut buf = vec![0u8; length as usize];
        file.read_exact(&mut buf).map_err(io_err)?;
        Ok(buf)
    }

    fn size(&self, key: &ObjectKey) -> Result<u64, StoreError> {
        fs::metadata(self.path_of(key))
            .map(|m| m.len())
            .map_err(|e| read_err(key, e))
    }

    fn list(&self, prefix: &ObjectKey) -> Result<Vec<ObjectMeta>, StoreError> {
        let mut out = Vec::new();
        self.walk(&self.path_of(prefix), &mut out)?;
        out.sort_by(|a, b| a.key.cmp(&b.key));
        Ok(out)
    }

    fn delete(&self, key: &ObjectKey) -> Result<(), StoreError> {
        match fs::remove_file(self.path_of(key)) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(io_err(e)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Barrier;

    fn key(s: &str) -> ObjectKey {
        ObjectKey::new(s).unwrap()
    }

    fn backends() -> Vec<(Arc<dyn ObjectStore>, Option<tempfile::TempDir>)> {
        let dir = tempfile::tempdir().unwrap();
        vec![
            (Arc::new(MemoryStore::new()), None),
            (Arc::new(FsStore::new(dir.path()).unwrap()), Some(dir)),
        ]
    }

    #[test]
    fn key_validation() {
        assert!(ObjectKey::new("ns/manifest/00000001.manifest").is_ok());
        assert!(ObjectKey::new("a-b_c.d").is_ok());
        for bad in ["", "/abs", "a//b", "a/../b", "a/./b", "a/b c", "a/é", "a/b/", "x~y"] {
            assert!(ObjectKey::new(bad).is_err(), "{bad:?} should be rejected");
        }
    }

    #[test]
    fn is_under_respects_component_boundaries() {
        assert!(key("ns/data/p1/x").is_under(&key("ns/data")));
        assert!(!key("ns/database").is_under(&key("ns/data")));
        assert!(!key("ns/data").is_under(&key("ns/data")));
    }

    #[test]
    fn put_if_absent_is_immutable() {
        for (store, _dir) in backends() {
            let k = key("m/00000001.manifest");
            assert_eq!(store.put_if_absent(&k, b"b1").unwrap(), PutOutcome::Created);
            assert_eq!(
                store.put_if_absent(&k, b"b2").unwrap(),
                PutOutcome::AlreadyExists
            );
            assert_eq!(store.get(&k).unwrap(), b"b1");
        }
    }

    #[test]
    fn distinct_keys_all_created() {
        for (store, _dir) in backends() {
            for i in 0..8 {
                let k = key(&format!("k/{i}"));
                assert_eq!(store.put_if_absent(&k, &[i]).unwrap(), PutOutcome::Created);
            }
        }
    }

    #[test]
    fn concurrent_put_if_absent_has_one_winner() {
        for (store, _dir) in backends() {
            for round in 0..10 {
                let k = key(&format!("race/{round}"));
                let barrier = Arc::new(Barrier::new(16));
                let handles: Vec<_> = (0..16u8)
                    .map(|i| {
                        let store = store.clone();
                        let barrier = barrier.clone();
                        let k = k.clone();
                        std::thread::spawn(move || {
                            barrier.wait();
                            (i, store.put_if_absent(&k, &[i; 64]).unwrap())
                        })
                    })
                    .collect();
                let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
                let winners: Vec<_> = results
                    .iter()
                    .filter(|(_, o)| *o == PutOutcome::Created)
                    .collect();
                assert_eq!(winners.len(), 1);
                assert_eq!(store.get(&k).unwrap(), vec![winners[0].0; 64]);
            }
        }
    }

    #[test]
    fn range_reads() {
        for (store, _dir) in backends() {
            let k = key("obj/a");
            store.put_if_absent(&k, b"abcdef").unwrap();
            assert_eq!(store.get_range(&k, 2, 3).unwrap(), b"cde");
            assert_eq!(store.get_range(&k, 0, 6).unwrap(), store.get(&k).unwrap());
            assert_eq!(store.get_range(&k, 6, 0).unwrap(), b"");
            assert!(matches!(
                store.get_range(&k, 4, 3),
                Err(StoreError::RangeOutOfBounds { .. })
            ));
            assert!(matches!(
                store.get_range(&k, u64::MAX, 2),
                Err(StoreError::RangeOutOfBounds { .. })
            ));
            assert!(store.get_range(&key("obj/none"), 0, 1).unwrap_err().is_not_found());
            assert_eq!(store.size(&k).unwrap(), 6);
        }
    }

    #[test]
    fn delete_is_idempotent() {
        for (store, _dir) in backends() {
            let k = key("d/x");
            store.put_if_absent(&k, b"x").unwrap();
            store.delete(&k).unwrap();
            assert!(store.get(&k).unwrap_err().is_not_found());
            store.delete(&k).unwrap();
            store.delete(&key("d/never")).unwrap();
        }
    }

    #[test]
    fn list_is_lexicographic_and_scoped() {
        for (store, _dir) in backends() {
            for name in ["ns/m/00000002", "ns/m/00000010", "ns/m/00000001", "ns/mx/1", "ns/n/1"] {
                store.put_if_absent(&key(name), name.as_bytes()).unwrap();
            }
            let listed: Vec<_> = store
                .list(&key("ns/m"))
                .unwrap()
                .into_iter()
                .map(|m| m.key.to_string())
                .collect();
            assert_eq!(listed, ["ns/m/00000001", "ns/m/00000002", "ns/m/00000010"]);
            assert!(store.list(&key("ns/empty")).unwrap().is_empty());
        }
    }

    #[test]
    fn overwrite_put_replaces_content() {
        for (store, _dir) in backends() {
            let k = key("w/c.wm");
            store.put(&k, b"one").unwrap();
            store.put(&k, b"two").unwrap();
            assert_eq!(store.get(&k).unwrap(), b"two");
        }
    }

    #[test]
    fn crash_after_put_still_writes() {
        let store = MemoryStore::with_faults(
            FaultProfile {
                crash_after_put_probability: 1.0,
                ..FaultProfile::default()
            },
            7,
        )
        .unwrap();
        let k = key("c/1");
        assert!(store.put_if_absent(&k, b"x").unwrap_err().is_transient());
        assert_eq!(store.get(&k).unwrap(), b"x");
        // A losing put is not a write, so it reports normally.
        assert_eq!(store.put_if_absent(&k, b"y").unwrap(), PutOutcome::AlreadyExists);
    }

    #[test]
    fn invalid_fault_profile_rejected() {
        let bad = FaultProfile {
            crash_after_put_probability: 1.5,
            ..FaultProfile::default()
        };
        assert!(MemoryStore::with_faults(bad, 0).is_err());
        let bad = FaultProfile {
            get_latency: Latency::Uniform { lo: 0.2, hi: 0.1 },
            ..FaultProfile::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn fs_store_skips_temp_files() {
        let dir = tempfile::tempdir().unwrap();
        let store = FsStore::new(dir.path()).unwrap();
        store.put_if_absent(&key("a/b"), b"1").unwrap();
        fs::write(dir.path().join("a").join("b~dead.tmp"), b"junk").unwrap();
        let listed = store.list(&key("a")).unwrap();
        assert_eq!(listed.len(), 1);
        assert_eq!(listed[0].key, key("a/b"));
    }
}
