// SPDX-License-Identifier: Apache-2.0

//! Per-commit cost of persisting producer state.
//!
//! Runs paired single-TGB commits into two namespaces. The measured arm
//! commits normally, carrying the producer-state map. The control arm
//! commits the same descriptors in manifests whose producer-state map is left
//! empty (dummy metadata). Manifests in the control namespace do not satisfy
//! the offset invariants, so that arm reads them back without validation; it
//! exists only for this measurement.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::manifest::{
    self, build_candidate, encode_manifest, latest, manifest_key, CommitOutcome, Manifest, ManifestError,
    TgbDescriptor,
};
use crate::object_store::{ObjectKey, ObjectStore, PutOutcome, StoreError};
use crate::tgb_format::{encode_tgb, tgb_key, MeshSpec};

#[derive(Debug, thiserror::Error)]
pub enum OverheadError {
    #[error(transparent)]
    Store(#[from] StoreError),

    #[error(transparent)]
    Manifest(#[from] ManifestError),

    #[error(transparent)]
    Format(#[from] crate::tgb_format::FormatError),

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("unexpected conflict in a single-writer namespace at version {0}")]
    UnexpectedConflict(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadConfig {
    /// Commits per arm.
    pub commits: usize,
    /// Producer ids the commits rotate through, which sets the size of the
    /// producer-state map in the measured arm.
    pub producers: usize,
    pub payload_bytes: usize,
}

impl Default for OverheadConfig {
    fn default() -> Self {
        OverheadConfig {
            commits: 100,
            producers: 8,
            payload_bytes: 1024,
        }
    }
}

/// Latency summary in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub count: usize,
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
}

impl LatencySummary {
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let pick = |q: f64| sorted[((q * (sorted.len() - 1) as f64).round() as usize).min(sorted.len() - 1)];
        LatencySummary {
            count: sorted.len(),
            mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
            p50: pick(0.5),
            p95: pick(0.95),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadReport {
    /// Per-commit latency from reading the latest manifest through the
    /// conditional put, i.e. the fragile window.
    pub with_state: LatencySummary,
    pub dummy_metadata: LatencySummary,
    /// Relative increase of mean commit latency, in percent.
    pub overhead_pct: f64,
    pub with_state_manifest_bytes: u64,
    pub dummy_metadata_manifest_bytes: u64,
}

fn latest_unchecked(store: &dyn ObjectStore, namespace: &ObjectKey) -> Result<Manifest, OverheadError> {
    let Some(mut v) = manifest::list_versions(store, namespace)?.last().copied() else {
        return Ok(Manifest::genesis());
    };
    loop {
        match store.get(&manifest_key(namespace, v + 1)?) {
            Ok(_) => v += 1,
            Err(e) if e.is_not_found() => break,
            Err(e) => return Err(e.into()),
        }
    }
    let bytes = store.get(&manifest_key(namespace, v)?)?;
    serde_json::from_slice(&bytes).map_err(|e| ManifestError::SchemaViolation(e.to_string()).into())
}

struct Arm {
    namespace: ObjectKey,
    dummy: bool,
    samples: Vec<f64>,
    last_bytes: u64,
}

impl Arm {
    fn commit(&mut self, store: &dyn ObjectStore, desc: &TgbDescriptor) -> Result<(), OverheadError> {
        let t0 = Instant::now();
        let base = if self.dummy {
            latest_unchecked(store, &self.namespace)?
        } else {
            latest(store, &self.namespace)?.unwrap_or_else(Manifest::genesis)
        };
        let mut desc = desc.clone();
        let mut candidate = if self.dummy {
            let mut m = base.clone();
            m.version += 1;
            desc.step_index = m.end_step();
            m.tgb_list.push(desc);
            m
        } else {
            build_candidate(&base, std::slice::from_ref(&desc), &desc.producer_id)?
        };
        if self.dummy {
            candidate.producer_states.clear();
        }
        let bytes = encode_manifest(&candidate);
        let outcome = match store.put_if_absent(&manifest_key(&self.namespace, candidate.version)?, &bytes)? {
            PutOutcome::Created => CommitOutcome::Committed(candidate.version),
            PutOutcome::AlreadyExists => CommitOutcome::Conflict,
        };
        let t1 = Instant::now();
        if outcome == CommitOutcome::Conflict {
            return Err(OverheadError::UnexpectedConflict(candidate.version));
        }
        self.samples.push((t1 - t0).as_secs_f64());
        self.last_bytes = bytes.len() as u64;
        Ok(())
    }
}

/// Runs `config.commits` paired commits under `namespace/state` and
/// `namespace/dummy`, alternating arms so drift affects both equally.
pub fn measure_commit_overhead(
    store: Arc<dyn ObjectStore>,
    namespace: &ObjectKey,
    config: &OverheadConfig,
) -> Result<OverheadReport, OverheadError> {
    if config.commits == 0 || config.producers == 0 {
        return Err(OverheadError::ConfigInvalid("commits and producers must be at least 1".into()));
    }
    let mesh = MeshSpec::new(1, 1)?;
    let mut arms = [("state", false), ("dummy", true)].map(|(name, dummy)| Arm {
        namespace: namespace.join(name).expect("static component"),
        dummy,
        samples: Vec::with_capacity(config.commits),
        last_bytes: 0,
    });
    let mut seqs = vec![0u64; config.producers];
    for i in 0..config.commits {
        let p = i % config.producers;
        let producer_id = format!("p{p:03}");
        let payload = vec![(i % 251) as u8; config.payload_bytes];
        let bytes = encode_tgb(&[payload], mesh)?;
        for arm in arms.iter_mut() {
            let key = tgb_key(&arm.namespace, &producer_id, seqs[p])?;
            store.put_if_absent(&key, &bytes)?;
            let desc = TgbDescriptor {
                step_index: 0,
                object_keys: vec![key],
                mesh,
                total_bytes: bytes.len() as u64,
                producer_id: producer_id.clone(),
                producer_seq: seqs[p],
            };
            arm.commit(store.as_ref(), &desc)?;
        }
        // Alternate which arm goes first.
        arms.swap(0, 1);
        seqs[p] += 1;
    }
    let (state, dummy) = if arms[0].dummy { (&arms[1], &arms[0]) } else { (&arms[0], &arms[1]) };
    let with_state = LatencySummary::from_samples(&state.samples);
    let dummy_metadata = LatencySummary::from_samples(&dummy.samples);
    let overhead_pct = if dummy_metadata.mean > 0.0 {
        100.0 * (with_state.mean - dummy_metadata.mean) / dummy_metadata.mean
    } else {
        0.0
    };
    Ok(OverheadReport {
        with_state,
        dummy_metadata,
        overhead_pct,
        with_state_manifest_bytes: state.last_bytes,
        dummy_metadata_manifest_bytes: dummy.last_bytes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::object_store::MemoryStore;

    #[test]
    fn latency_summary_quantiles() {
        let s = LatencySummary::from_samples(&[4.0, 1.0, 3.0, 2.0, 5.0]);
        assert_eq!(s.count, 5);
        assert_eq!(s.mean, 3.0);
        assert_eq!(s.p50, 3.0);
        assert_eq!(s.p95, 5.0);
        assert_eq!(LatencySummary::from_samples(&[]), LatencySummary::default());
    }

    #[test]
    fn both_arms_commit_every_input() {
        let store: Arc<dyn ObjectStore> = Arc::new(MemoryStore::new());
        let ns = ObjectKey::new("bench").unwrap();
        let config = OverheadConfig {
            commits: 12,
            producers: 3,
            payload_bytes: 16,
        };
        let r = measure_commit_overhead(store.clone(), &ns, &config).unwrap();
        assert_eq!(r.with_state.count, 12);
        assert_eq!(r.dummy_metadata.count, 12);
        assert!(r.with_state_manifest_bytes > r.dummy_metadata_manifest_bytes);
        let m = latest(store.as_ref(), &ns.join("state").unwrap()).unwrap().unwrap();
        assert_eq!(m.tgb_list.len(), 12);
        assert_eq!(m.producer_states.len(), 3);
        manifest::check_history(store.as_ref(), &ns.join("state").unwrap()).unwrap();
        let d = latest_unchecked(store.as_ref(), &ns.join("dummy").unwrap()).unwrap();
        assert_eq!(d.tgb_list.len(), 12);
        assert!(d.producer_states.is_empty());
    }
}
