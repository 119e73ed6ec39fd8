// SPDX-License-Identifier: Apache-2.0

//! Producer client.
//!
//! A producer writes TGB objects independently, then publishes them through
//! the manifest commit protocol with adaptive pacing. [`ProducerClient::tick`]
//! is a cooperatively driven step of the commit loop: the caller decides when
//! to call it and supplies the current time, which keeps the controller
//! testable under simulated clocks.
//!
//! Resumption state lives in the manifest's producer map, so a restarted
//! process calls [`ProducerClient::open`] with the same `producer_id` and
//! continues after the last committed sequence number. Objects staged by a
//! previous incarnation but never committed are adopted back into the pending
//! list.

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::clock::Clock;
use crate::dac::{DacError, DacParams, DacState};
use crate::lifecycle::{self, LifecycleError};
use crate::manifest::{
    self, build_candidate, latest, probe_version, try_commit, CommitOutcome, Manifest,
    ManifestError, TgbDescriptor,
};
use crate::object_store::{ObjectKey, ObjectStore, PutOutcome, StoreError};
use crate::tgb_format::{
    self, decode_footer, encode_tgb, tgb_key, FormatError, MeshSpec, TAIL_PROBE_LEN,
};

#[derive(Debug, thiserror::Error)]
pub enum ProducerError {
    #[error(transparent)]
    Store(#[from] StoreError),

    #[error(transparent)]
    Manifest(#[from] ManifestError),

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error(transparent)]
    Dac(#[from] DacError),

    #[error(transparent)]
    Lifecycle(#[from] LifecycleError),

    #[error("invalid producer id {0:?}")]
    InvalidProducerId(String),

    #[error("lag {lag} reached max_lag {max_lag}")]
    LagExceeded { lag: u64, max_lag: u64 },

    #[error("deadline exceeded with {pending} TGBs still pending")]
    DeadlineExceeded { pending: usize },

    #[error("seq {seq} already holds different bytes; another process shares this producer id")]
    SeqCollision { seq: u64 },

    #[error("injected crash at {0:?}")]
    Crashed(CrashPoint),

    #[error("client crashed earlier and must be reopened")]
    Poisoned,
}

/// Points where a test harness can kill the client.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum CrashPoint {
    /// TGB object written, not yet tracked as pending.
    AfterTgbWrite,
    /// Conditional put issued, outcome not yet processed.
    MidCommit,
    /// Commit succeeded, pending list not yet cleared.
    AfterCommit,
}

/// Returns `true` to crash at the given point.
pub type CrashHook = Box<dyn FnMut(CrashPoint) -> bool + Send>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SampleOutcome {
    Committed,
    Conflict,
}

/// One measured fragile window, in clock time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FragileWindowSample {
    pub started_at: Duration,
    pub ended_at: Duration,
    pub outcome: SampleOutcome,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TickOutcome {
    Committed { version: u64, tgbs: usize },
    /// The current manifest already held every pending TGB.
    AlreadyCommitted,
    Conflict,
    /// The attempt failed with an unresolved store error; pending is kept.
    TransientFailure(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickReport {
    pub attempted: bool,
    pub outcome: Option<TickOutcome>,
    /// Gap in force after this tick, in seconds.
    pub new_gap: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ProducerStats {
    pub tgbs_written: u64,
    pub attempts: u64,
    pub commits: u64,
    pub conflicts: u64,
    pub transient_failures: u64,
    pub committed_tgbs: u64,
    pub samples: Vec<FragileWindowSample>,
}

#[derive(Debug, Clone, Default)]
pub struct ProducerConfig {
    pub params: DacParams,
    /// Cap on TGBs this producer may hold ahead of the slowest checkpoint.
    pub max_lag: Option<u64>,
    /// Seed for the jitter sampler. Defaults to a hash of the producer id.
    pub seed: Option<u64>,
}

pub struct ProducerClient {
    store: Arc<dyn ObjectStore>,
    clock: Arc<dyn Clock>,
    namespace: ObjectKey,
    producer_id: String,
    next_seq: u64,
    pending: Vec<TgbDescriptor>,
    base: Manifest,
    dac: DacState,
    params: DacParams,
    max_lag: Option<u64>,
    watermark_step: Option<u64>,
    t_last: Duration,
    rng: ChaCha8Rng,
    crash_hook: Option<CrashHook>,
    poisoned: bool,
    stats: ProducerStats,
}

impl fmt::Debug for ProducerClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProducerClient")
            .field("namespace", &self.namespace)
            .field("producer_id", &self.producer_id)
            .field("next_seq", &self.next_seq)
            .field("pending", &self.pending.len())
            .field("base_version", &self.base.version)
            .field("dac", &self.dac)
            .finish()
    }
}

fn seed_from_id(id: &str) -> u64 {
    // FNV-1a
    id.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

impl ProducerClient {
    /// Opens (or reopens) a producer, recovering its committed offset from
    /// the latest manifest and re-adopting staged but uncommitted objects.
    pub fn open(
        store: Arc<dyn ObjectStore>,
        clock: Arc<dyn Clock>,
        namespace: ObjectKey,
        producer_id: impl Into<String>,
        config: ProducerConfig,
    ) -> Result<Self, ProducerError> {
        let producer_id = producer_id.into();
        if producer_id.contains('/')
            || producer_id.starts_with("__")
            || namespace.join(&producer_id).is_err()
        {
            return Err(ProducerError::InvalidProducerId(producer_id));
        }
        config.params.validate()?;
        let base = latest(store.as_ref(), &namespace)?.unwrap_or_else(Manifest::genesis);
        let next_seq = base.committed_offset(&producer_id).map_or(0, |c| c + 1);
        let seed = config.seed.unwrap_or_else(|| seed_from_id(&producer_id));
        let t_last = clock.now();
        let mut client = ProducerClient {
            store,
            clock,
            namespace,
            producer_id,
            next_seq,
            pending: Vec::new(),
            dac: DacState {
                n_producers: base.producer_count() as u64,
                ..DacState::default()
            },
            base,
            params: config.params,
            max_lag: config.max_lag,
            watermark_step: None,
            t_last,
            rng: ChaCha8Rng::seed_from_u64(seed),
            crash_hook: None,
            poisoned: false,
            stats: ProducerStats::default(),
        };
        client.adopt_staged()?;
        if client.max_lag.is_some() {
            client.refresh_watermark()?;
        }
        Ok(client)
    }

    /// Installs a crash-injection hook (tests and harnesses only).
    pub fn set_crash_hook(&mut self, hook: CrashHook) {
        self.crash_hook = Some(hook);
    }

    pub fn producer_id(&self) -> &str {
        &self.producer_id
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn pending(&self) -> &[TgbDescriptor] {
        &self.pending
    }

    pub fn base(&self) -> &Manifest {
        &self.base
    }

    pub fn dac(&self) -> &DacState {
        &self.dac
    }

    pub fn stats(&self) -> &ProducerStats {
        &self.stats
    }

    fn adopt_staged(&mut self) -> Result<(), ProducerError> {
        let prefix = tgb_format::data_prefix(&self.namespace).join(&self.producer_id)?;
        for meta in self.store.list(&prefix)? {
            let Some((_, seq)) = tgb_format::parse_tgb_key(&self.namespace, &meta.key) else {
                continue;
            };
            if seq < self.next_seq {
                continue;
            }
            if seq != self.next_seq {
                break;
            }
            match self.validate_staged(&meta.key, meta.size)? {
                Some(mesh) => {
                    self.pending.push(TgbDescriptor {
                        step_index: 0,
                        object_keys: vec![meta.key.clone()],
                        mesh,
                        total_bytes: meta.size,
                        producer_id: self.producer_id.clone(),
                        producer_seq: seq,
                    });
                    self.next_seq += 1;
                }
                None => {
                    // Unreadable leftovers can never be referenced; clear the
                    // name so the sequence number can be produced again.
                    self.store.delete(&meta.key)?;
                    break;
                }
            }
        }
        Ok(())
    }

    /// Mesh of a staged object if its footer is intact and accounts for
    /// exactly the object's length.
    fn validate_staged(&self, key: &ObjectKey, size: u64) -> Result<Option<MeshSpec>, ProducerError> {
        let probe = size.min(TAIL_PROBE_LEN);
        let tail = self.store.get_range(key, size - probe, probe)?;
        let decoded = match decode_footer(&tail) {
            Err(FormatError::TruncatedFooter { needed, .. }) if needed <= size => {
                decode_footer(&self.store.get_range(key, size - needed, needed)?)
            }
            other => other,
        };
        let Ok(footer) = decoded else {
            return Ok(None);
        };
        if footer.entries.is_empty() || footer.object_len() != size {
            return Ok(None);
        }
        Ok(Some(footer.mesh))
    }

    /// TGBs this producer holds ahead of the slowest checkpoint: everything
    /// pending plus its committed TGBs at or after the minimum watermark step.
    pub fn lag(&self) -> u64 {
        let committed_ahead = match self.watermark_step {
            Some(step) => self
                .base
                .tgb_list
                .iter()
                .filter(|d| d.step_index >= step && d.producer_id == self.producer_id)
                .count() as u64,
            None => 0,
        };
        self.pending.len() as u64 + committed_ahead
    }

    fn refresh_watermark(&mut self) -> Result<(), ProducerError> {
        let marks = lifecycle::read_watermarks(self.store.as_ref(), &self.namespace)?;
        self.watermark_step = marks.iter().map(|w| w.step).min();
        Ok(())
    }

    fn refresh_lag_view(&mut self) -> Result<(), ProducerError> {
        if let Some(m) = latest(self.store.as_ref(), &self.namespace)? {
            self.absorb(m);
        }
        self.refresh_watermark()
    }

    fn check_alive(&self) -> Result<(), ProducerError> {
        if self.poisoned {
            Err(ProducerError::Poisoned)
        } else {
            Ok(())
        }
    }

    fn crash_at(&mut self, point: CrashPoint) -> Result<(), ProducerError> {
        if let Some(hook) = self.crash_hook.as_mut() {
            if hook(point) {
                self.poisoned = true;
                return Err(ProducerError::Crashed(point));
            }
        }
        Ok(())
    }

    /// Writes one TGB object and stages it for the next commit. Returns its
    /// sequence number. Fails with `LagExceeded` instead of blocking when the
    /// producer is `max_lag` TGBs ahead of the slowest checkpoint.
    pub fn write_tgb<S: AsRef<[u8]>>(
        &mut self,
        slices: &[S],
        mesh: MeshSpec,
    ) -> Result<u64, ProducerError> {
        self.check_alive()?;
        if let Some(max_lag) = self.max_lag {
            if self.lag() >= max_lag {
                self.refresh_lag_view()?;
                let lag = self.lag();
                if lag >= max_lag {
                    return Err(ProducerError::LagExceeded { lag, max_lag });
                }
            }
        }
        let seq = self.next_seq;
        let bytes = encode_tgb(slices, mesh)?;
        let key = tgb_key(&self.namespace, &self.producer_id, seq)?;
        if self.store.put_if_absent(&key, &bytes)? == PutOutcome::AlreadyExists
            && self.store.get(&key)? != bytes
        {
            return Err(ProducerError::SeqCollision { seq });
        }
        self.crash_at(CrashPoint::AfterTgbWrite)?;
        self.pending.push(TgbDescriptor {
            step_index: 0,
            object_keys: vec![key],
            mesh,
            total_bytes: bytes.len() as u64,
            producer_id: self.producer_id.clone(),
            producer_seq: seq,
        });
        self.next_seq += 1;
        self.stats.tgbs_written += 1;
        Ok(seq)
    }

    /// Like [`write_tgb`](Self::write_tgb), but waits out `LagExceeded` by
    /// ticking and polling until `timeout` elapses.
    pub fn write_tgb_blocking<S: AsRef<[u8]>>(
        &mut self,
        slices: &[S],
        mesh: MeshSpec,
        poll: Duration,
        timeout: Duration,
    ) -> Result<u64, ProducerError> {
        let deadline = self.clock.now() + timeout;
        loop {
            match self.write_tgb(slices, mesh) {
                Err(ProducerError::LagExceeded { .. }) if self.clock.now() < deadline => {
                    let now = self.clock.now();
                    self.tick(now)?;
                    self.clock.sleep(poll);
                }
                other => return other,
            }
        }
    }

    /// Adopts a newer manifest view and drops pending TGBs it already holds.
    fn absorb(&mut self, m: Manifest) {
        if m.version < self.base.version {
            return;
        }
        self.pending = manifest::uncommitted(&m, &self.pending, &self.producer_id);
        if let Some(c) = m.committed_offset(&self.producer_id) {
            // Another process sharing this id may have committed ahead of us.
            self.next_seq = self.next_seq.max(c + 1);
        }
        self.base = m;
    }

    /// Earliest time `tick` will attempt a commit, or None with nothing
    /// pending. Drivers should wake then rather than on a fixed grid, which
    /// would re-align producers.
    pub fn next_attempt_at(&self) -> Option<Duration> {
        (!self.pending.is_empty()).then(|| self.t_last + Duration::from_secs_f64(self.dac.gap))
    }

    /// One step of the commit loop. Attempts a commit only when TGBs are
    /// pending and `now - t_last >= gap`.
    pub fn tick(&mut self, now: Duration) -> Result<TickReport, ProducerError> {
        self.check_alive()?;
        let gate = self.t_last + Duration::from_secs_f64(self.dac.gap);
        if self.pending.is_empty() || now < gate {
            return Ok(TickReport {
                attempted: false,
                outcome: None,
                new_gap: self.dac.gap,
            });
        }
        self.run_attempt()
    }

    fn run_attempt(&mut self) -> Result<TickReport, ProducerError> {
        let started_at = self.clock.now();
        let result = self.attempt();
        let ended_at = self.clock.now();
        let outcome = match result {
            Ok(o) => o,
            Err(ProducerError::Store(e)) | Err(ProducerError::Manifest(ManifestError::Store(e)))
                if e.is_transient() =>
            {
                TickOutcome::TransientFailure(e.to_string())
            }
            Err(e) => return Err(e),
        };
        self.stats.attempts += 1;
        match &outcome {
            TickOutcome::Committed { tgbs, .. } => {
                self.stats.commits += 1;
                self.stats.committed_tgbs += *tgbs as u64;
            }
            TickOutcome::Conflict => self.stats.conflicts += 1,
            TickOutcome::TransientFailure(_) => self.stats.transient_failures += 1,
            TickOutcome::AlreadyCommitted => {}
        }
        let sample_outcome = match outcome {
            TickOutcome::Conflict => Some(SampleOutcome::Conflict),
            TickOutcome::Committed { .. } => Some(SampleOutcome::Committed),
            _ => None,
        };
        if let Some(o) = sample_outcome {
            self.stats.samples.push(FragileWindowSample {
                started_at,
                ended_at,
                outcome: o,
            });
        }
        // The estimate is updated whatever the outcome.
        self.dac
            .observe((ended_at - started_at).as_secs_f64(), self.params.alpha);
        let (u, phase): (f64, f64) = (self.rng.random(), self.rng.random());
        let new_gap = self
            .dac
            .recompute_phased(self.base.producer_count() as u64, &self.params, u, phase)?;
        self.t_last = self.clock.now();
        Ok(TickReport {
            attempted: true,
            outcome: Some(outcome),
            new_gap,
        })
    }

    /// Reads the current manifest, appends pending TGBs, and tries to claim
    /// the next version. On conflict, rebases onto the winner.
    fn attempt(&mut self) -> Result<TickOutcome, ProducerError> {
        if let Some(current) = latest(self.store.as_ref(), &self.namespace)? {
            self.absorb(current);
        }
        if self.pending.is_empty() {
            return Ok(TickOutcome::AlreadyCommitted);
        }
        let candidate = build_candidate(&self.base, &self.pending, &self.producer_id)?;
        let outcome = try_commit(self.store.as_ref(), &self.namespace, &candidate);
        self.crash_at(CrashPoint::MidCommit)?;
        match outcome? {
            CommitOutcome::Committed(version) => {
                self.crash_at(CrashPoint::AfterCommit)?;
                let tgbs = self.pending.len();
                self.pending.clear();
                self.base = candidate;
                if self.max_lag.is_some() {
                    self.refresh_watermark()?;
                }
                Ok(TickOutcome::Committed { version, tgbs })
            }
            CommitOutcome::Conflict => {
                let winner = match probe_version(self.store.as_ref(), &self.namespace, candidate.version)? {
                    Some(w) => Some(w),
                    None => latest(self.store.as_ref(), &self.namespace)?,
                };
                if let Some(w) = winner {
                    self.absorb(w);
                }
                if self.max_lag.is_some() {
                    self.refresh_watermark()?;
                }
                Ok(TickOutcome::Conflict)
            }
        }
    }

    /// Drains pending TGBs before shutdown, pacing attempts by the duty
    /// budget only. On deadline the staged objects stay in the store for a
    /// later incarnation to adopt.
    pub fn finalize(&mut self, deadline: Duration) -> Result<(), ProducerError> {
        self.check_alive()?;
        loop {
            if self.pending.is_empty() {
                return Ok(());
            }
            let now = self.clock.now();
            if now >= deadline {
                return Err(ProducerError::DeadlineExceeded {
                    pending: self.pending.len(),
                });
            }
            let gate = self.t_last + Duration::from_secs_f64(self.dac.drain_gap(&self.params));
            if now < gate {
                self.clock.sleep((gate - now).min(deadline - now));
                continue;
            }
            self.run_attempt()?;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use crate::lifecycle::{write_watermark, Watermark};
    use crate::manifest::check_history;
    use crate::object_store::MemoryStore;

    fn setup() -> (Arc<MemoryStore>, Arc<ManualClock>, ObjectKey) {
        (
            Arc::new(MemoryStore::new()),
            Arc::new(ManualClock::new()),
            ObjectKey::new("ns").unwrap(),
        )
    }

    fn open(store: &Arc<MemoryStore>, clock: &Arc<ManualClock>, ns: &ObjectKey, id: &str) -> ProducerClient {
        ProducerClient::open(store.clone(), clock.clone(), ns.clone(), id, ProducerConfig::default()).unwrap()
    }

    fn mesh() -> MeshSpec {
        MeshSpec::new(1, 1).unwrap()
    }

    fn payload(id: &str, seq: u64) -> Vec<Vec<u8>> {
        vec![format!("{id}:{seq}").into_bytes()]
    }

    #[test]
    fn write_then_tick_commits() {
        let (store, clock, ns) = setup();
        let mut p = open(&store, &clock, &ns, "p0");
        assert!(!p.tick(clock.now()).unwrap().attempted);
        for _ in 0..3 {
            let seq = p.next_seq();
            p.write_tgb(&payload("p0", seq), mesh()).unwrap();
        }
        let r = p.tick(clock.now()).unwrap();
        assert_eq!(r.outcome, Some(TickOutcome::Committed { version: 1, tgbs: 3 }));
        assert!(p.pending().is_empty());
        let m = latest(store.as_ref(), &ns).unwrap().unwrap();
        assert_eq!(m.tgb_list.len(), 3);
        assert_eq!(m.committed_offset("p0"), Some(2));
        // Nothing pending: no attempt.
        assert!(!p.tick(clock.now()).unwrap().attempted);
    }

    #[test]
    fn gap_gates_attempts() {
        let (store, clock, ns) = setup();
        let mut p = open(&store, &clock, &ns, "p0");
        p.dac.tau_hat = Some(1.0);
        p.dac.recompute(1, &p.params.clone(), 0.0).unwrap();
        assert_eq!(p.dac.gap, 1.0);
        p.t_last = clock.now();
        p.write_tgb(&payload("p0", 0), mesh()).unwrap();
        assert!(!p.tick(clock.now()).unwrap().attempted);
        clock.advance(Duration::from_millis(999));
        assert!(!p.tick(clock.now()).unwrap().attempted);
        clock.advance(Duration::from_millis(1));
        assert!(p.tick(clock.now()).unwrap().attempted);
    }

    #[test]
    fn loser_rebases_onto_winner() {
        let (store, clock, ns) = setup();
        let mut a = open(&store, &clock, &ns, "a");
        let mut b = open(&store, &clock, &ns, "b");
        a.write_tgb(&payload("a", 0), mesh()).unwrap();
        b.write_tgb(&payload("b", 0), mesh()).unwrap();
        // Make b build on a stale base by committing a directly underneath.
        let cand = build_candidate(&Manifest::genesis(), a.pending(), "a").unwrap();
        assert_eq!(try_commit(store.as_ref(), &ns, &cand).unwrap(), CommitOutcome::Committed(1));
        let r = b.tick(clock.now()).unwrap();
        assert_eq!(r.outcome, Some(TickOutcome::Committed { version: 2, tgbs: 1 }));
        // a's view is stale; its next attempt finds its TGB already in.
        let r = a.tick(clock.now()).unwrap();
        assert_eq!(r.outcome, Some(TickOutcome::AlreadyCommitted));
        let m = latest(store.as_ref(), &ns).unwrap().unwrap();
        assert_eq!(m.tgb_list.len(), 2);
        check_history(store.as_ref(), &ns).unwrap();
    }

    #[test]
    fn producer_count_feeds_pacing() {
        let (store, clock, ns) = setup();
        for id in ["a", "b", "c"] {
            let mut p = open(&store, &clock, &ns, id);
            p.write_tgb(&payload(id, 0), mesh()).unwrap();
            p.tick(clock.now()).unwrap();
        }
        let mut p = open(&store, &clock, &ns, "a");
        p.write_tgb(&payload("a", 1), mesh()).unwrap();
        p.tick(clock.now()).unwrap();
        assert_eq!(p.dac().n_producers, 3);
    }

    #[test]
    fn crash_points_recover_on_reopen() {
        for point in [CrashPoint::AfterTgbWrite, CrashPoint::MidCommit, CrashPoint::AfterCommit] {
            let (store, clock, ns) = setup();
            let mut p = open(&store, &clock, &ns, "p");
            p.write_tgb(&payload("p", 0), mesh()).unwrap();
            p.set_crash_hook(Box::new(move |at| at == point));
            let err = match point {
                CrashPoint::AfterTgbWrite => p.write_tgb(&payload("p", 1), mesh()).unwrap_err(),
                _ => p.tick(clock.now()).unwrap_err(),
            };
            assert!(matches!(err, ProducerError::Crashed(at) if at == point));
            assert!(matches!(p.tick(clock.now()), Err(ProducerError::Poisoned)));
            drop(p);

            let mut p = open(&store, &clock, &ns, "p");
            while p.next_seq() < 3 {
                let seq = p.next_seq();
                p.write_tgb(&payload("p", seq), mesh()).unwrap();
            }
            p.finalize(clock.now() + Duration::from_secs(60)).unwrap();
            let m = latest(store.as_ref(), &ns).unwrap().unwrap();
            let seqs: Vec<u64> = m.tgb_list.iter().map(|d| d.producer_seq).collect();
            assert_eq!(seqs, vec![0, 1, 2], "{point:?}");
            for d in &m.tgb_list {
                assert_eq!(store.get(d.primary_key()).unwrap(), encode_tgb(&payload("p", d.producer_seq), mesh()).unwrap());
            }
            check_history(store.as_ref(), &ns).unwrap();
        }
    }

    #[test]
    fn truncated_staged_object_is_reproduced() {
        let (store, clock, ns) = setup();
        let key = tgb_key(&ns, "p", 0).unwrap();
        let mut bytes = encode_tgb(&payload("p", 0), mesh()).unwrap();
        bytes.remove(0);
        store.put_if_absent(&key, &bytes).unwrap();
        let mut p = open(&store, &clock, &ns, "p");
        assert_eq!(p.next_seq(), 0);
        assert!(store.get(&key).is_err());
        p.write_tgb(&payload("p", 0), mesh()).unwrap();
    }

    #[test]
    fn seq_collision_is_detected() {
        let (store, clock, ns) = setup();
        let mut a = open(&store, &clock, &ns, "p");
        let mut b = open(&store, &clock, &ns, "p");
        a.write_tgb(&payload("x", 0), mesh()).unwrap();
        assert!(matches!(
            b.write_tgb(&payload("y", 0), mesh()),
            Err(ProducerError::SeqCollision { seq: 0 })
        ));
    }

    #[test]
    fn max_lag_blocks_until_checkpoint_advances() {
        let (store, clock, ns) = setup();
        let config = ProducerConfig {
            max_lag: Some(2),
            ..ProducerConfig::default()
        };
        let w = Watermark { consumer_id: "c".into(), version: 0, step: 0 };
        write_watermark(store.as_ref(), &ns, &w).unwrap();
        let mut p = ProducerClient::open(store.clone(), clock.clone(), ns.clone(), "p", config).unwrap();
        p.write_tgb(&payload("p", 0), mesh()).unwrap();
        p.write_tgb(&payload("p", 1), mesh()).unwrap();
        assert!(matches!(
            p.write_tgb(&payload("p", 2), mesh()),
            Err(ProducerError::LagExceeded { lag: 2, max_lag: 2 })
        ));
        p.tick(clock.now()).unwrap();
        // Committed TGBs stay counted while the consumer sits before them.
        assert_eq!(p.lag(), 2);
        assert!(p.write_tgb(&payload("p", 2), mesh()).is_err());
        let w = Watermark { consumer_id: "c".into(), version: 1, step: 2 };
        write_watermark(store.as_ref(), &ns, &w).unwrap();
        assert_eq!(p.write_tgb(&payload("p", 2), mesh()).unwrap(), 2);
    }

    #[test]
    fn finalize_respects_deadline() {
        let (store, clock, ns) = setup();
        let mut p = open(&store, &clock, &ns, "p");
        p.write_tgb(&payload("p", 0), mesh()).unwrap();
        let before = store.list(&ns).unwrap();
        assert!(matches!(
            p.finalize(clock.now()),
            Err(ProducerError::DeadlineExceeded { pending: 1 })
        ));
        assert_eq!(store.list(&ns).unwrap(), before);
        p.finalize(clock.now() + Duration::from_secs(1)).unwrap();
        assert!(p.pending().is_empty());
    }

    #[test]
    fn rejects_reserved_ids() {
        let (store, clock, ns) = setup();
        for id in ["__gc__", "a/b", "", ".."] {
            assert!(matches!(
                ProducerClient::open(store.clone(), clock.clone(), ns.clone(), id, ProducerConfig::default()),
                Err(ProducerError::InvalidProducerId(_))
            ));
        }
    }
}
