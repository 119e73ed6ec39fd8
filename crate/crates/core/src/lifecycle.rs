// SPDX-License-Identifier: Apache-2.0

//! Consumer watermarks and storage reclamation.
//!
//! Each consumer publishes a watermark object `<ns>/watermarks/<id>.wm`
//! naming the oldest manifest version and step it may still need. The global
//! watermark is the minimum over all of them. Reclaim trims the manifest list
//! below the minimum step, deletes manifest versions below the minimum
//! version, and sweeps TGB objects that are committed but no longer listed.

use serde::{Deserialize, Serialize};

use crate::manifest::{
    self, build_trim, latest, list_versions, manifest_key, try_commit, CommitOutcome,
    ManifestError,
};
use crate::object_store::{ObjectKey, ObjectStore, StoreError};
use crate::tgb_format::{data_prefix, parse_tgb_key};

const WATERMARK_SUFFIX: &str = ".wm";
const TRIM_RETRIES: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum LifecycleError {
    #[error(transparent)]
    Store(#[from] StoreError),

    #[error(transparent)]
    Manifest(#[from] ManifestError),

    #[error("malformed watermark {key}: {reason}")]
    MalformedWatermark { key: String, reason: String },

    #[error("trim commit lost {0} races in a row")]
    TrimContention(usize),
}

/// A consumer's checkpointed position. `step` is the next TGB step the
/// consumer will read, so every step below it is done.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Watermark {
    pub consumer_id: String,
    pub version: u64,
    pub step: u64,
}

pub fn watermark_prefix(namespace: &ObjectKey) -> ObjectKey {
    namespace.join("watermarks").expect("static component")
}

pub fn watermark_key(namespace: &ObjectKey, consumer_id: &str) -> Result<ObjectKey, StoreError> {
    watermark_prefix(namespace).join(&format!("{consumer_id}{WATERMARK_SUFFIX}"))
}

/// Canonical JSON with sorted keys.
pub fn encode_watermark(w: &Watermark) -> Vec<u8> {
    let value = serde_json::to_value(w).expect("watermark is always representable");
    serde_json::to_vec(&value).expect("value serializes")
}

pub fn decode_watermark(bytes: &[u8]) -> Result<Watermark, serde_json::Error> {
    serde_json::from_slice(bytes)
}

/// Publishes (or replaces) a consumer's watermark.
pub fn write_watermark(
    store: &dyn ObjectStore,
    namespace: &ObjectKey,
    w: &Watermark,
) -> Result<(), LifecycleError> {
    store.put(&watermark_key(namespace, &w.consumer_id)?, &encode_watermark(w))?;
    Ok(())
}

/// Withdraws a consumer so it no longer holds back reclamation.
pub fn remove_watermark(
    store: &dyn ObjectStore,
    namespace: &ObjectKey,
    consumer_id: &str,
) -> Result<(), LifecycleError> {
    store.delete(&watermark_key(namespace, consumer_id)?)?;
    Ok(())
}

pub fn read_watermarks(
    store: &dyn ObjectStore,
    namespace: &ObjectKey,
) -> Result<Vec<Watermark>, LifecycleError> {
    let mut out = Vec::new();
    for meta in store.list(&watermark_prefix(namespace))? {
        if !meta.key.file_name().ends_with(WATERMARK_SUFFIX) {
            continue;
        }
        let bytes = match store.get(&meta.key) {
            Ok(b) => b,
            // Withdrawn between list and get.
            Err(e) if e.is_not_found() => continue,
            Err(e) => return Err(e.into()),
        };
        let w = decode_watermark(&bytes).map_err(|e| LifecycleError::MalformedWatermark {
            key: meta.key.to_string(),
            reason: e.to_string(),
        })?;
        out.push(w);
    }
    Ok(out)
}

/// Minimum version and minimum step over all watermarks, or `None` when no
/// consumer has checkpointed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GlobalWatermark {
    pub version: u64,
    pub step: u64,
}

pub fn global_watermark(
    store: &dyn ObjectStore,
    namespace: &ObjectKey,
) -> Result<Option<GlobalWatermark>, LifecycleError> {
    let marks = read_watermarks(store, namespace)?;
    Ok(marks
        .iter()
        .map(|w| w.version)
        .min()
        .zip(marks.iter().map(|w| w.step).min())
        .map(|(version, step)| GlobalWatermark { version, step }))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ReclaimOptions {
    /// Report what would be removed without changing anything.
    pub dry_run: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ReclaimReport {
    pub dry_run: bool,
    pub watermark: Option<GlobalWatermark>,
    pub trim_floor_before: u64,
    pub trim_floor_after: u64,
    /// Version of the trim commit, if one was made.
    pub trim_version: Option<u64>,
    pub manifests_deleted: u64,
    pub tgbs_deleted: u64,
    pub bytes_freed: u64,
}

/// Runs one reclamation pass.
///
/// Without any watermark nothing is provably unneeded, so the pass is a
/// no-op. Objects staged by producers but not yet committed are never
/// touched; their owners adopt them on restart.
pub fn reclaim(
    store: &dyn ObjectStore,
    namespace: &ObjectKey,
    options: ReclaimOptions,
) -> Result<ReclaimReport, LifecycleError> {
    let mut report = ReclaimReport {
        dry_run: options.dry_run,
        ..ReclaimReport::default()
    };
    let Some(wm) = global_watermark(store, namespace)? else {
        return Ok(report);
    };
    report.watermark = Some(wm);
    let Some(mut current) = latest(store, namespace)? else {
        return Ok(report);
    };
    report.trim_floor_before = current.trim_floor;
    report.trim_floor_after = current.trim_floor;

    let target = wm.step.min(current.end_step());
    if options.dry_run {
        report.trim_floor_after = target.max(current.trim_floor);
    } else {
        let mut lost = 0;
        while target > current.trim_floor {
            let candidate = build_trim(&current, target)?;
            match try_commit(store, namespace, &candidate)? {
                CommitOutcome::Committed(v) => {
                    report.trim_version = Some(v);
                    current = candidate;
                }
                CommitOutcome::Conflict => {
                    lost += 1;
                    if lost >= TRIM_RETRIES {
                        return Err(LifecycleError::TrimContention(lost));
                    }
                    current = latest(store, namespace)?.unwrap_or(current);
                }
            }
        }
        report.trim_floor_after = current.trim_floor;
    }

    // Manifests a checkpointed consumer could still restore from stay.
    let keep_from = wm.version.min(current.version);
    for v in list_versions(store, namespace)? {
        if v >= keep_from {
            break;
        }
        let key = manifest_key(namespace, v)?;
        report.bytes_freed += delete_counted(store, &key, options.dry_run)?;
        report.manifests_deleted += 1;
    }

    // TGB objects: committed (seq at or below the owner's offset) and absent
    // from the retained list of the newest manifest.
    let live: std::collections::HashSet<&ObjectKey> = current
        .tgb_list
        .iter()
        .filter(|d| d.step_index >= report.trim_floor_after)
        .flat_map(|d| d.object_keys.iter())
        .collect();
    for meta in store.list(&data_prefix(namespace))? {
        let Some((producer, seq)) = parse_tgb_key(namespace, &meta.key) else {
            continue;
        };
        let committed = current
            .committed_offset(&producer)
            .is_some_and(|c| seq <= c);
        if committed && !live.contains(&meta.key) {
            report.bytes_freed += delete_counted(store, &meta.key, options.dry_run)?;
            report.tgbs_deleted += 1;
        }
    }
    Ok(report)
}

fn delete_counted(store: &dyn ObjectStore, key: &ObjectKey, dry_run: bool) -> Result<u64, LifecycleError> {
    let size = match store.size(key) {
        Ok(s) => s,
        Err(e) if e.is_not_found() => return Ok(0),
        Err(e) => return Err(e.into()),
    };
    if !dry_run {
        store.delete(key)?;
    }
    Ok(size)
}

/// Object counts and bytes under a namespace, by category.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorageCensus {
    pub manifest_count: u64,
    pub manifest_bytes: u64,
    pub tgb_count: u64,
    pub tgb_bytes: u64,
    pub watermark_count: u64,
    pub watermark_bytes: u64,
    pub other_count: u64,
    pub other_bytes: u64,
}

impl StorageCensus {
    pub fn total_bytes(&self) -> u64 {
        self.manifest_bytes + self.tgb_bytes + self.watermark_bytes + self.other_bytes
    }
}

pub fn storage_census(
    store: &dyn ObjectStore,
    namespace: &ObjectKey,
) -> Result<StorageCensus, LifecycleError> {
    let mut c = StorageCensus::default();
    let manifests = manifest::manifest_prefix(namespace);
    let data = data_prefix(namespace);
    let marks = watermark_prefix(namespace);
    for meta in store.list(namespace)? {
        let (count, bytes) = if meta.key.is_under(&manifests) {
            (&mut c.manifest_count, &mut c.manifest_bytes)
        } else if meta.key.is_under(&data) {
            (&mut c.tgb_count, &mut c.tgb_bytes)
        } else if meta.key.is_under(&marks) {
            (&mut c.watermark_count, &mut c.watermark_bytes)
        } else {
            (&mut c.other_count, &mut c.other_bytes)
        };
        *count += 1;
        *bytes += meta.size;
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::{build_candidate, Manifest, TgbDescriptor};
    use crate::object_store::MemoryStore;
    use crate::tgb_format::{encode_tgb, tgb_key, MeshSpec};

    fn ns() -> ObjectKey {
        ObjectKey::new("ns").unwrap()
    }

    fn commit_tgbs(store: &MemoryStore, producer: &str, seqs: std::ops::Range<u64>) {
        let mesh = MeshSpec::new(1, 1).unwrap();
        let base = latest(store, &ns()).unwrap().unwrap_or_else(Manifest::genesis);
        let mut descs = Vec::new();
        for seq in seqs {
            let key = tgb_key(&ns(), producer, seq).unwrap();
            let bytes = encode_tgb(&[vec![seq as u8; 10]], mesh).unwrap();
            store.put_if_absent(&key, &bytes).unwrap();
            descs.push(TgbDescriptor {
                step_index: 0,
                object_keys: vec![key],
                mesh,
                total_bytes: bytes.len() as u64,
                producer_id: producer.into(),
                producer_seq: seq,
            });
        }
        let cand = build_candidate(&base, &descs, producer).unwrap();
        assert_eq!(try_commit(store, &ns(), &cand).unwrap(), CommitOutcome::Committed(cand.version));
    }

    fn mark(store: &MemoryStore, id: &str, version: u64, step: u64) {
        let w = Watermark {
            consumer_id: id.into(),
            version,
            step,
        };
        write_watermark(store, &ns(), &w).unwrap();
    }

    #[test]
    fn watermark_encoding_is_canonical() {
        let w = Watermark {
            consumer_id: "c0".into(),
            version: 3,
            step: 17,
        };
        let bytes = encode_watermark(&w);
        assert_eq!(bytes, br#"{"consumer_id":"c0","step":17,"version":3}"#);
        assert_eq!(decode_watermark(&bytes).unwrap(), w);
    }

    #[test]
    fn global_watermark_is_componentwise_min() {
        let store = MemoryStore::new();
        assert_eq!(global_watermark(&store, &ns()).unwrap(), None);
        mark(&store, "a", 5, 2);
        mark(&store, "b", 3, 9);
        assert_eq!(
            global_watermark(&store, &ns()).unwrap(),
            Some(GlobalWatermark { version: 3, step: 2 })
        );
        remove_watermark(&store, &ns(), "b").unwrap();
        assert_eq!(
            global_watermark(&store, &ns()).unwrap(),
            Some(GlobalWatermark { version: 5, step: 2 })
        );
    }

    #[test]
    fn reclaim_without_watermarks_does_nothing() {
        let store = MemoryStore::new();
        commit_tgbs(&store, "p", 0..3);
        let before = storage_census(&store, &ns()).unwrap();
        let r = reclaim(&store, &ns(), ReclaimOptions::default()).unwrap();
        assert_eq!(r.manifests_deleted + r.tgbs_deleted, 0);
        assert_eq!(storage_census(&store, &ns()).unwrap(), before);
    }

    #[test]
    fn reclaim_trims_and_sweeps_below_watermark() {
        let store = MemoryStore::new();
        commit_tgbs(&store, "p", 0..3); // v1, steps 0..3
        commit_tgbs(&store, "q", 0..2); // v2, steps 3..5
        commit_tgbs(&store, "p", 3..4); // v3, step 5
        // staged but uncommitted
        let staged = tgb_key(&ns(), "p", 4).unwrap();
        store.put_if_absent(&staged, b"x").unwrap();
        mark(&store, "c", 2, 4);

        let dry = reclaim(&store, &ns(), ReclaimOptions { dry_run: true }).unwrap();
        assert_eq!(dry.trim_floor_after, 4);
        assert_eq!(dry.trim_version, None);
        assert_eq!(dry.tgbs_deleted, 4);
        assert_eq!(latest(&store, &ns()).unwrap().unwrap().version, 3);

        let r = reclaim(&store, &ns(), ReclaimOptions::default()).unwrap();
        assert_eq!(r.trim_version, Some(4));
        assert_eq!(r.trim_floor_after, 4);
        assert_eq!(r.manifests_deleted, 1);
        assert_eq!(r.tgbs_deleted, 4);
        assert!(r.bytes_freed > 0);
        assert_eq!(list_versions(&store, &ns()).unwrap(), vec![2, 3, 4]);
        let m = latest(&store, &ns()).unwrap().unwrap();
        assert_eq!(m.trim_floor, 4);
        assert_eq!(m.producer_states.len(), 2);
        for d in &m.tgb_list {
            assert!(store.get(d.primary_key()).is_ok());
        }
        assert!(store.get(&staged).is_ok());
        // Trim commits never register a producer.
        assert!(!m.producer_states.contains_key("__gc__"));

        // A second pass finds nothing left.
        let again = reclaim(&store, &ns(), ReclaimOptions::default()).unwrap();
        assert_eq!(again.trim_version, None);
        assert_eq!(again.tgbs_deleted, 0);
    }

    #[test]
    fn census_counts_by_category() {
        let store = MemoryStore::new();
        commit_tgbs(&store, "p", 0..2);
        mark(&store, "c", 1, 0);
        let c = storage_census(&store, &ns()).unwrap();
        assert_eq!(c.manifest_count, 1);
        assert_eq!(c.tgb_count, 2);
        assert_eq!(c.watermark_count, 1);
        assert_eq!(c.other_count, 0);
        assert_eq!(c.total_bytes(), store.list(&ns()).unwrap().iter().map(|m| m.size).sum::<u64>());
    }
}
