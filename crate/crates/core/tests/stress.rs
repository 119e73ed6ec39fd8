// SPDX-License-Identifier: Apache-2.0

//! Real-thread producer stress against latency-injected stores.

use std::sync::{Arc, Barrier};
use std::time::Duration;

use batchplane::clock::{Clock, SystemClock};
use batchplane::dac::DacParams;
use batchplane::object_store::{FsStore, ObjectKey, ObjectStore, PutOutcome};
use batchplane::producer::{ProducerClient, ProducerConfig};
use batchplane::sim::{census_verdict, stress_real, StressConfig};
use batchplane::tgb_format::MeshSpec;

#[test]
fn sixteen_producers_stay_within_twice_the_conflict_budget() {
    let config = StressConfig {
        n_producers: 16,
        duration: Duration::from_secs(30),
        warmup: Duration::from_secs(10),
        interarrival: Duration::from_millis(250),
        params: DacParams::default(),
        seed: 16,
        ..StressConfig::default()
    };
    let report = stress_real(&config).unwrap();
    let r = &report.result;
    println!(
        "attempts {} conflicts {} conflict rate {:.4} committed {}",
        r.attempts, r.conflicts, r.conflict_rate, r.committed_tgbs
    );
    assert!(r.attempts >= 50, "too few attempts to judge: {}", r.attempts);
    assert!(r.conflict_rate <= 2.0 * config.params.epsilon, "conflict rate {}", r.conflict_rate);
    assert!(report.census.exactly_once, "{:?}", report.census);
    assert_eq!(report.census.written, r.committed_tgbs);
}

#[test]
fn racing_finalizers_both_drain() {
    let store: Arc<dyn ObjectStore> = Arc::new(batchplane::object_store::MemoryStore::new());
    let clock: Arc<dyn Clock> = Arc::new(SystemClock::new());
    let namespace = ObjectKey::new("race").unwrap();
    let barrier = Arc::new(Barrier::new(2));
    let handles: Vec<_> = (0..2)
        .map(|i| {
            let (store, clock, namespace, barrier) = (store.clone(), clock.clone(), namespace.clone(), barrier.clone());
            std::thread::spawn(move || {
                let id = format!("f{i}");
                let mut p = ProducerClient::open(store, clock.clone(), namespace, id.clone(), ProducerConfig::default()).unwrap();
                for seq in 0..20 {
                    p.write_tgb(&[format!("{id}:{seq}")], MeshSpec::new(1, 1).unwrap()).unwrap();
                }
                barrier.wait();
                p.finalize(clock.now() + Duration::from_secs(10)).unwrap();
                assert!(p.pending().is_empty());
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    let v = census_verdict(store.as_ref(), &namespace, 40).unwrap();
    assert!(v.exactly_once, "{v:?}");
}

#[test]
fn fs_store_put_if_absent_has_one_winner() {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(FsStore::new(dir.path()).unwrap());
    let key = ObjectKey::new("ns/manifest/00000001.manifest").unwrap();
    let barrier = Arc::new(Barrier::new(16));
    let handles: Vec<_> = (0..16u8)
        .map(|i| {
            let (store, key, barrier) = (store.clone(), key.clone(), barrier.clone());
            std::thread::spawn(move || {
                barrier.wait();
                (i, store.put_if_absent(&key, &[i; 64]).unwrap())
            })
        })
        .collect();
    let outcomes: Vec<(u8, PutOutcome)> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    let winners: Vec<u8> = outcomes
        .iter()
        .filter(|(_, o)| *o == PutOutcome::Created)
        .map(|(i, _)| *i)
        .collect();
    assert_eq!(winners.len(), 1);
    assert_eq!(store.get(&key).unwrap(), vec![winners[0]; 64]);
}
