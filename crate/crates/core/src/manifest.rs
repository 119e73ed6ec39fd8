// SPDX-License-Identifier: Apache-2.0

//! Versioned manifests and the conditional-put commit protocol.
//!
//! A manifest is an immutable object named `<ns>/manifest/<version:08>.manifest`.
//! Writing version `v + 1` with put-if-absent is the whole commit: at most
//! one candidate can claim a version number, and a loser rebases onto the
//! winner and tries again. Each manifest carries the full retained TGB list
//! (dense step indices starting at `trim_floor`) and a per-producer map of
//! committed offsets, which is what lets a producer tell after a lost race
//! or a crash which of its TGBs are already in.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::object_store::{ObjectKey, ObjectStore, PutOutcome, StoreError};
use crate::tgb_format::MeshSpec;

/// Versions are zero-padded to this many digits in object names.
pub const VERSION_DIGITS: usize = 8;
pub const MAX_VERSION: u64 = 99_999_999;
const AMBIGUOUS_REREADS: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error(transparent)]
    Store(#[from] StoreError),

    #[error("manifest version {0} exceeds the {VERSION_DIGITS}-digit name space")]
    VersionOverflow(u64),

    #[error("manifest schema violation: {0}")]
    SchemaViolation(String),

    #[error("manifest version {0} not found")]
    VersionNotFound(u64),

    #[error("producer {producer_id} seq {seq} is not above committed offset {committed}")]
    StaleSequence {
        producer_id: String,
        seq: u64,
        committed: u64,
    },

    #[error("producer {producer_id}: expected seq {expected}, got {actual}")]
    SequenceGap {
        producer_id: String,
        expected: u64,
        actual: u64,
    },

    #[error("descriptor from producer {found} in a commit by {expected}")]
    ForeignDescriptor { expected: String, found: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TgbDescriptor {
    pub step_index: u64,
    pub object_keys: Vec<ObjectKey>,
    pub mesh: MeshSpec,
    pub total_bytes: u64,
    pub producer_id: String,
    pub producer_seq: u64,
}

impl TgbDescriptor {
    /// The object holding the TGB. Single-object TGBs are the only layout
    /// written here, so this is always the first key.
    pub fn primary_key(&self) -> &ObjectKey {
        &self.object_keys[0]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProducerState {
    pub producer_id: String,
    /// Highest `producer_seq` committed so far.
    pub committed_offset: u64,
    pub last_commit_version: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u64,
    pub trim_floor: u64,
    pub tgb_list: Vec<TgbDescriptor>,
    pub producer_states: BTreeMap<String, ProducerState>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommitOutcome {
    Committed(u64),
    Conflict,
}

impl Manifest {
    /// The implicit version 0 of every namespace. It is never written.
    pub fn genesis() -> Self {
        Manifest {
            version: 0,
            trim_floor: 0,
            tgb_list: Vec::new(),
            producer_states: BTreeMap::new(),
        }
    }

    /// One past the last step index in the list.
    pub fn end_step(&self) -> u64 {
        self.trim_floor + self.tgb_list.len() as u64
    }

    /// Descriptor at global step `step`, if retained in this version.
    pub fn step(&self, step: u64) -> Option<&TgbDescriptor> {
        step.checked_sub(self.trim_floor)
            .and_then(|i| self.tgb_list.get(i as usize))
    }

    pub fn committed_offset(&self, producer_id: &str) -> Option<u64> {
        self.producer_states
            .get(producer_id)
            .map(|s| s.committed_offset)
    }

    /// Producer count used for pacing: every producer that ever committed.
    pub fn producer_count(&self) -> usize {
        self.producer_states.len().max(1)
    }

    fn validate(&self) -> Result<(), ManifestError> {
        let fail = |msg: String| Err(ManifestError::SchemaViolation(msg));
        if self.version > MAX_VERSION {
            return Err(ManifestError::VersionOverflow(self.version));
        }
        let mut seen = HashSet::new();
        for (i, d) in self.tgb_list.iter().enumerate() {
            let expected = self.trim_floor + i as u64;
            if d.step_index != expected {
                return fail(format!(
                    "step index {} at position {i}, expected {expected}",
                    d.step_index
                ));
            }
            if d.object_keys.is_empty() {
                return fail(format!("step {} has no object keys", d.step_index));
            }
            if !seen.insert((d.producer_id.as_str(), d.producer_seq)) {
                return fail(format!(
                    "duplicate descriptor ({}, {})",
                    d.producer_id, d.producer_seq
                ));
            }
            match self.committed_offset(&d.producer_id) {
                Some(off) if off >= d.producer_seq => {}
                _ => {
                    return fail(format!(
                        "descriptor ({}, {}) beyond recorded producer state",
                        d.producer_id, d.producer_seq
                    ))
                }
            }
        }
        for (id, state) in &self.producer_states {
            if *id != state.producer_id {
                return fail(format!("producer map key {id} holds state for {}", state.producer_id));
            }
            if state.last_commit_version > self.version {
                return fail(format!("producer {id} committed in future version"));
            }
        }
        Ok(())
    }
}

/// `<ns>/manifest/<version:08>.manifest`
pub fn manifest_key(namespace: &ObjectKey, version: u64) -> Result<ObjectKey, ManifestError> {
    if version > MAX_VERSION {
        return Err(ManifestError::VersionOverflow(version));
    }
    Ok(namespace.join(&format!("manifest/{version:08}.manifest"))?)
}

pub fn manifest_prefix(namespace: &ObjectKey) -> ObjectKey {
    namespace.join("manifest").expect("static suffix is a valid key")
}

pub fn parse_manifest_version(key: &ObjectKey) -> Option<u64> {
    let digits = key.file_name().strip_suffix(".manifest")?;
    if digits.len() != VERSION_DIGITS || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Canonical encoding: JSON with lexicographically sorted keys and no
/// insignificant whitespace.
pub fn encode_manifest(m: &Manifest) -> Vec<u8> {
    // serde_json::Value keeps object keys in a BTreeMap, which gives the
    // sorted order.
    let value = serde_json::to_value(m).expect("manifest is always representable");
    serde_json::to_vec(&value).expect("value serializes")
}

pub fn decode_manifest(bytes: &[u8]) -> Result<Manifest, ManifestError> {
    let m: Manifest = serde_json::from_slice(bytes)
        .map_err(|e| ManifestError::SchemaViolation(e.to_string()))?;
    m.validate()?;
    Ok(m)
}

/// Reads and decodes one manifest version.
pub fn read_version(
    store: &dyn ObjectStore,
    namespace: &ObjectKey,
    version: u64,
) -> Result<Manifest, ManifestError> {
    let bytes = match store.get(&manifest_key(namespace, version)?) {
        Ok(b) => b,
        Err(e) if e.is_not_found() => return Err(ManifestError::VersionNotFound(version)),
        Err(e) => return Err(e.into()),
    };
    let m = decode_manifest(&bytes)?;
    if m.version != version {
        return Err(ManifestError::SchemaViolation(format!(
            "object for version {version} holds version {}",
            m.version
        )));
    }
    Ok(m)
}

/// Same as [`read_version`] but maps a missing object to `None`.
pub fn probe_version(
    store: &dyn ObjectStore,
    namespace: &ObjectKey,
    version: u64,
) -> Result<Option<Manifest>, ManifestError> {
    match read_version(store, namespace, version) {
        Ok(m) => Ok(Some(m)),
        Err(ManifestError::VersionNotFound(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Versions currently present, ascending.
pub fn list_versions(
    store: &dyn ObjectStore,
    namespace: &ObjectKey,
) -> Result<Vec<u64>, ManifestError> {
    Ok(store
        .list(&manifest_prefix(namespace))?
        .iter()
        .filter_map(|m| parse_manifest_version(&m.key))
        .collect())
}

/// Highest committed manifest, or `None` for a namespace with no commits.
///
/// Starts from the highest listed version and probes upward, so a listing
/// that lags behind recent commits still returns something at least as new
/// as the latest version at call time.
pub fn latest(
    store: &dyn ObjectStore,
    namespace: &ObjectKey,
) -> Result<Option<Manifest>, ManifestError> {
    let mut versions = list_versions(store, namespace)?;
    let mut current = None;
    while let Some(v) = versions.pop() {
        // A listed version can vanish under a concurrent reclaim; fall back
        // to the next one down.
        if let Some(m) = probe_version(store, namespace, v)? {
            current = Some(m);
            break;
        }
    }
    let Some(mut current) = current else {
        return Ok(None);
    };
    while current.version < MAX_VERSION {
        match probe_version(store, namespace, current.version + 1)? {
            Some(next) => current = next,
            None => break,
        }
    }
    Ok(Some(current))
}

/// Builds version `base.version + 1` by appending `new_tgbs` for `producer_id`.
///
/// The new descriptors must carry consecutive sequence numbers continuing
/// right after the producer's committed offset in `base`; step indices are
/// reassigned densely after the base list. An empty `new_tgbs` yields a
/// version bump with no other change.
pub fn build_candidate(
    base: &Manifest,
    new_tgbs: &[TgbDescriptor],
    producer_id: &str,
) -> Result<Manifest, ManifestError> {
    let version = base.version + 1;
    if version > MAX_VERSION {
        return Err(ManifestError::VersionOverflow(version));
    }
    let committed = base.committed_offset(producer_id);
    let first = committed.map_or(0, |c| c + 1);
    for (expected, d) in (first..).zip(new_tgbs) {
        if d.producer_id != producer_id {
            return Err(ManifestError::ForeignDescriptor {
                expected: producer_id.to_string(),
                found: d.producer_id.clone(),
            });
        }
        if let Some(c) = committed {
            if d.producer_seq <= c {
                return Err(ManifestError::StaleSequence {
                    producer_id: producer_id.to_string(),
                    seq: d.producer_seq,
                    committed: c,
                });
            }
        }
        if d.producer_seq != expected {
            return Err(ManifestError::SequenceGap {
                producer_id: producer_id.to_string(),
                expected,
                actual: d.producer_seq,
            });
        }
    }

    let mut candidate = base.clone();
    candidate.version = version;
    for (step, d) in (base.end_step()..).zip(new_tgbs) {
        let mut d = d.clone();
        d.step_index = step;
        candidate.tgb_list.push(d);
    }
    if let Some(last) = new_tgbs.last() {
        candidate.producer_states.insert(
            producer_id.to_string(),
            ProducerState {
                producer_id: producer_id.to_string(),
                committed_offset: last.producer_seq,
                last_commit_version: version,
            },
        );
    }
    Ok(candidate)
}

/// The part of `local` that `manifest` does not already contain, judged by
/// the producer's committed offset.
pub fn uncommitted(
    manifest: &Manifest,
    local: &[TgbDescriptor],
    producer_id: &str,
) -> Vec<TgbDescriptor> {
    match manifest.committed_offset(producer_id) {
        Some(c) => local.iter().filter(|d| d.producer_seq > c).cloned().collect(),
        None => local.to_vec(),
    }
}

/// Re-targets local TGBs onto a newer manifest, dropping the ones the winner
/// already includes.
pub fn rebase(
    winner: &Manifest,
    local: &[TgbDescriptor],
    producer_id: &str,
) -> Result<Manifest, ManifestError> {
    build_candidate(winner, &uncommitted(winner, local, producer_id), producer_id)
}

/// Builds a candidate that drops every descriptor below `floor`.
pub fn build_trim(base: &Manifest, floor: u64) -> Result<Manifest, ManifestError> {
    let version = base.version + 1;
    if version > MAX_VERSION {
        return Err(ManifestError::VersionOverflow(version));
    }
    let floor = floor.clamp(base.trim_floor, base.end_step());
    let mut candidate = base.clone();
    candidate.version = version;
    candidate.trim_floor = floor;
    candidate.tgb_list.drain(..(floor - base.trim_floor) as usize);
    Ok(candidate)
}

/// Attempts to publish `candidate` as its version.
///
/// A transient error from the store leaves the outcome unknown, so the
/// target object is re-read: identical bytes mean the write landed, anything
/// else is treated as a lost race. If the re-reads keep failing the error is
/// returned and the caller must re-read the manifest before trying again.
pub fn try_commit(
    store: &dyn ObjectStore,
    namespace: &ObjectKey,
    candidate: &Manifest,
) -> Result<CommitOutcome, ManifestError> {
    let key = manifest_key(namespace, candidate.version)?;
    let bytes = encode_manifest(candidate);
    match store.put_if_absent(&key, &bytes) {
        Ok(PutOutcome::Created) => Ok(CommitOutcome::Committed(candidate.version)),
        Ok(PutOutcome::AlreadyExists) => Ok(CommitOutcome::Conflict),
        Err(e) if e.is_transient() => resolve_ambiguous(store, &key, &bytes, candidate.version, e),
        Err(e) => Err(e.into()),
    }
}

fn resolve_ambiguous(
    store: &dyn ObjectStore,
    key: &ObjectKey,
    bytes: &[u8],
    version: u64,
    mut last_err: StoreError,
) -> Result<CommitOutcome, ManifestError> {
    for _ in 0..AMBIGUOUS_REREADS {
        match store.get(key) {
            Ok(found) if found == bytes => return Ok(CommitOutcome::Committed(version)),
            Ok(_) => return Ok(CommitOutcome::Conflict),
            Err(e) if e.is_not_found() => return Ok(CommitOutcome::Conflict),
            Err(e) if e.is_transient() => last_err = e,
            Err(e) => return Err(e.into()),
        }
    }
    Err(last_err.into())
}

/// Summary of a full walk over the retained version chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryReport {
    pub first_version: u64,
    pub latest_version: u64,
    pub versions_checked: usize,
}

/// Verifies the linearization invariants across every retained version:
/// consecutive version numbers, each list extends its predecessor by a
/// suffix (after an optional trim), and committed offsets never decrease.
pub fn check_history(
    store: &dyn ObjectStore,
    namespace: &ObjectKey,
) -> Result<Option<HistoryReport>, String> {
    let versions = list_versions(store, namespace).map_err(|e| e.to_string())?;
    let Some(&first) = versions.first() else {
        return Ok(None);
    };
    let mut prev: Option<Manifest> = None;
    for (i, &v) in versions.iter().enumerate() {
        if v != first + i as u64 {
            return Err(format!("version gap before {v}"));
        }
        let m = read_version(store, namespace, v).map_err(|e| e.to_string())?;
        if let Some(p) = &prev {
            if m.trim_floor < p.trim_floor {
                return Err(format!("version {v} lowers trim floor"));
            }
            for d in &m.tgb_list {
                if let Some(old) = p.step(d.step_index) {
                    if old != d {
                        return Err(format!("version {v} rewrites step {}", d.step_index));
                    }
                }
            }
            if m.end_step() < p.end_step() {
                return Err(format!("version {v} drops tail entries"));
            }
            if m.trim_floor > p.end_step() {
                return Err(format!("version {v} trims past its predecessor's end"));
            }
            for (id, state) in &p.producer_states {
                match m.producer_states.get(id) {
                    Some(s) if s.committed_offset >= state.committed_offset => {}
                    _ => return Err(format!("version {v} regresses producer {id}")),
                }
            }
        }
        prev = Some(m);
    }
    Ok(Some(HistoryReport {
        first_version: first,
        latest_version: *versions.last().unwrap(),
        versions_checked: versions.len(),
    }))
}
