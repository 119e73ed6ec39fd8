// SPDX-License-Identifier: Apache-2.0

//! End-to-end reclamation: produce, consume, checkpoint, reclaim, restore.

use std::sync::Arc;
use std::time::Duration;

use batchplane::clock::{Clock, ManualClock};
use batchplane::consumer::{ConsumerClient, ConsumerConfig, ConsumerError, Poll, RankSpec};
use batchplane::lifecycle::{reclaim, storage_census, write_watermark, ReclaimOptions, Watermark};
use batchplane::manifest::{latest, list_versions};
use batchplane::object_store::{MemoryStore, ObjectKey, ObjectStore};
use batchplane::producer::{ProducerClient, ProducerConfig};
use batchplane::tgb_format::{tgb_key, MeshSpec};

struct Fixture {
    store: Arc<dyn ObjectStore>,
    clock: Arc<dyn Clock>,
    namespace: ObjectKey,
}

impl Fixture {
    /// One producer commits 40 TGBs, four per commit.
    fn new() -> Self {
        let store: Arc<dyn ObjectStore> = Arc::new(MemoryStore::new());
        let manual = Arc::new(ManualClock::new());
        let clock: Arc<dyn Clock> = manual.clone();
        let namespace = ObjectKey::new("life").unwrap();
        let mut p = ProducerClient::open(store.clone(), clock.clone(), namespace.clone(), "p", ProducerConfig::default()).unwrap();
        for round in 0..10 {
            for k in 0..4 {
                p.write_tgb(&[format!("tgb {}", round * 4 + k)], MeshSpec::new(1, 1).unwrap()).unwrap();
            }
            manual.advance(Duration::from_secs(1));
            p.finalize(clock.now() + Duration::from_secs(10)).unwrap();
        }
        Fixture { store, clock, namespace }
    }

    fn consumer(&self, id: &str) -> ConsumerClient {
        let spec = RankSpec::new(0, 1, 1, 1, 1, 1).unwrap();
        ConsumerClient::open(self.store.clone(), self.clock.clone(), self.namespace.clone(), id, spec, ConsumerConfig::default())
            .unwrap()
    }

    fn restore(&self, id: &str) -> Result<ConsumerClient, ConsumerError> {
        let spec = RankSpec::new(0, 1, 1, 1, 1, 1).unwrap();
        ConsumerClient::restore(self.store.clone(), self.clock.clone(), self.namespace.clone(), id, spec, ConsumerConfig::default())
    }
}

fn advance(c: &mut ConsumerClient, steps: u64) {
    for _ in 0..steps {
        assert!(matches!(c.next_batch().unwrap(), Poll::Ready(_)));
    }
}

#[test]
fn two_consumers_hold_back_reclamation_to_the_slower() {
    let f = Fixture::new();
    let mut slow = f.consumer("slow");
    let mut fast = f.consumer("fast");
    advance(&mut slow, 10);
    advance(&mut fast, 30);
    slow.checkpoint().unwrap();
    fast.checkpoint().unwrap();
    let before = storage_census(f.store.as_ref(), &f.namespace).unwrap();

    let dry = reclaim(f.store.as_ref(), &f.namespace, ReclaimOptions { dry_run: true }).unwrap();
    assert_eq!(storage_census(f.store.as_ref(), &f.namespace).unwrap(), before);
    let report = reclaim(f.store.as_ref(), &f.namespace, ReclaimOptions::default()).unwrap();
    assert_eq!(report.trim_floor_after, 10);
    assert_eq!(report.tgbs_deleted, 10);
    assert_eq!(dry.tgbs_deleted, report.tgbs_deleted);
    assert_eq!(dry.bytes_freed, report.bytes_freed);

    for seq in 0..40 {
        let exists = f.store.get(&tgb_key(&f.namespace, "p", seq).unwrap()).is_ok();
        assert_eq!(exists, seq >= 10, "seq {seq}");
    }
    let m = latest(f.store.as_ref(), &f.namespace).unwrap().unwrap();
    assert_eq!(m.trim_floor, 10);
    assert_eq!(m.end_step(), 40);
    let w = report.watermark.unwrap();
    assert!(list_versions(f.store.as_ref(), &f.namespace).unwrap().iter().all(|&v| v >= w.version));

    let mut restored = f.restore("slow").unwrap();
    let Poll::Ready(b) = restored.next_batch().unwrap() else { panic!("no batch after reclaim") };
    assert_eq!(b.step, 10);
    assert_eq!(b.bytes, b"tgb 10");

    // Idempotent once converged.
    let again = reclaim(f.store.as_ref(), &f.namespace, ReclaimOptions::default()).unwrap();
    assert_eq!((again.tgbs_deleted, again.manifests_deleted, again.trim_version), (0, 0, None));
}

#[test]
fn watermark_below_trim_floor_is_reported() {
    let f = Fixture::new();
    let mut c = f.consumer("c");
    advance(&mut c, 20);
    c.checkpoint().unwrap();
    reclaim(f.store.as_ref(), &f.namespace, ReclaimOptions::default()).unwrap();
    // A stale watermark forged behind the floor must not silently skip data.
    let m = latest(f.store.as_ref(), &f.namespace).unwrap().unwrap();
    write_watermark(
        f.store.as_ref(),
        &f.namespace,
        &Watermark {
            consumer_id: "c".into(),
            version: m.version,
            step: 5,
        },
    )
    .unwrap();
    assert!(matches!(f.restore("c"), Err(ConsumerError::StepReclaimed { step: 5, trim_floor: 20 })));
}

#[test]
fn reclaim_without_checkpoints_keeps_everything() {
    let f = Fixture::new();
    let before = storage_census(f.store.as_ref(), &f.namespace).unwrap();
    let report = reclaim(f.store.as_ref(), &f.namespace, ReclaimOptions::default()).unwrap();
    assert_eq!(report.watermark, None);
    assert_eq!(storage_census(f.store.as_ref(), &f.namespace).unwrap(), before);
    assert_eq!(before.tgb_count, 40);
}
