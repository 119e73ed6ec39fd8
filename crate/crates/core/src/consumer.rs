// SPDX-License-Identifier: Apache-2.0

//! Consumer client.
//!
//! Every rank runs its own consumer. A rank derives its `(d, c)` coordinates
//! from its rank number and the mesh, walks the manifest's TGB list step by
//! step, and fetches only its own slice of each TGB with one range read.
//! Because the list order is fixed once committed, the byte stream a rank
//! sees is a pure function of its starting cursor and its coordinates.
//!
//! Rank layout is fixed: DP outermost, then CP, TP, PP innermost, so
//! `rank = d·(C·tp·pp) + c·(tp·pp) + t·pp + p`. Trainers must build their
//! device mesh in the same order.

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::lifecycle::{self, LifecycleError, Watermark};
use crate::manifest::{self, decode_manifest, encode_manifest, manifest_key, Manifest, ManifestError, TgbDescriptor};
use crate::object_store::{ObjectKey, ObjectStore, StoreError};
use crate::tgb_format::{decode_footer, footer_span, FooterIndex, FormatError, MeshSpec, TAIL_PROBE_LEN};

#[derive(Debug, thiserror::Error)]
pub enum ConsumerError {
    #[error(transparent)]
    Store(#[from] StoreError),

    #[error(transparent)]
    Manifest(#[from] ManifestError),

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error(transparent)]
    Lifecycle(#[from] LifecycleError),

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("cannot remap {axis} from {from} to {to}: ratio is not a power of two")]
    UnsupportedRemap { axis: &'static str, from: u32, to: u32 },

    #[error("step {step} was reclaimed (trim floor {trim_floor})")]
    StepReclaimed { step: u64, trim_floor: u64 },

    #[error("no watermark for consumer {0:?}")]
    WatermarkMissing(String),

    #[error("cursor is inside a remap block (sub-step {sub}); checkpoint at a block boundary")]
    UnalignedCheckpoint { sub: u64 },

    #[error("TGBs in the block at step {step} disagree on mesh")]
    MixedMesh { step: u64 },

    #[error("invalid consumer id {0:?}")]
    InvalidConsumerId(String),
}

/// A rank's place in the training mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankSpec {
    pub rank: u32,
    pub world_size: u32,
    pub dp: u32,
    pub cp: u32,
    pub tp: u32,
    pub pp: u32,
}

impl RankSpec {
    pub fn new(rank: u32, world_size: u32, dp: u32, cp: u32, tp: u32, pp: u32) -> Result<Self, ConsumerError> {
        let spec = RankSpec { rank, world_size, dp, cp, tp, pp };
        spec.validate()?;
        Ok(spec)
    }

    /// Reads `RANK` and `WORLD_SIZE` from the environment.
    pub fn from_env(dp: u32, cp: u32, tp: u32, pp: u32) -> Result<Self, ConsumerError> {
        let var = |name: &str| -> Result<u32, ConsumerError> {
            std::env::var(name)
                .map_err(|_| ConsumerError::InvalidTopology(format!("{name} is not set")))?
                .parse()
                .map_err(|_| ConsumerError::InvalidTopology(format!("{name} is not a number")))
        };
        Self::new(var("RANK")?, var("WORLD_SIZE")?, dp, cp, tp, pp)
    }

    pub fn validate(&self) -> Result<(), ConsumerError> {
        let degrees = [self.dp, self.cp, self.tp, self.pp];
        if degrees.contains(&0) {
            return Err(ConsumerError::InvalidTopology("mesh degrees must be at least 1".into()));
        }
        let product = degrees.iter().try_fold(1u32, |acc, &x| acc.checked_mul(x));
        if product != Some(self.world_size) {
            return Err(ConsumerError::InvalidTopology(format!(
                "world_size {} != dp·cp·tp·pp = {}·{}·{}·{}",
                self.world_size, self.dp, self.cp, self.tp, self.pp
            )));
        }
        if self.rank >= self.world_size {
            return Err(ConsumerError::InvalidTopology(format!(
                "rank {} outside world_size {}",
                self.rank, self.world_size
            )));
        }
        Ok(())
    }

    pub fn mesh(&self) -> MeshSpec {
        MeshSpec { dp: self.dp, cp: self.cp }
    }
}

/// `(d, c)` coordinates of a rank under the canonical layout.
pub fn project(spec: &RankSpec) -> Result<(u32, u32), ConsumerError> {
    spec.validate()?;
    let inner = spec.tp * spec.pp;
    Ok((spec.rank / (spec.cp * inner), (spec.rank / inner) % spec.cp))
}

/// How a reader mesh consumes TGBs written for a different mesh.
///
/// Along each of DP and CP the reader degree is the writer degree times
/// (`r`) or divided by (`q`) a power of two. A block of `r_d·r_c` consecutive
/// TGBs yields `q_d·q_c` logical steps. When an axis grows, reader
/// coordinate `x` reads writer slice `x mod W` from TGB `x / W` of the block.
/// When it shrinks, logical sub-step `j` makes reader coordinate `x` read
/// writer slice `q·x + j`, so the first sub-step takes the even slice groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RemapPlan {
    pub writer: MeshSpec,
    pub reader: MeshSpec,
    pub r_d: u32,
    pub q_d: u32,
    pub r_c: u32,
    pub q_c: u32,
}

fn axis_ratio(axis: &'static str, from: u32, to: u32) -> Result<(u32, u32), ConsumerError> {
    let unsupported = ConsumerError::UnsupportedRemap { axis, from, to };
    if from == 0 || to == 0 {
        return Err(unsupported);
    }
    let (big, small) = (from.max(to), from.min(to));
    if big % small != 0 || !(big / small).is_power_of_two() {
        return Err(unsupported);
    }
    Ok(if to >= from { (to / from, 1) } else { (1, from / to) })
}

impl RemapPlan {
    pub fn new(writer: MeshSpec, reader: MeshSpec) -> Result<Self, ConsumerError> {
        let (r_d, q_d) = axis_ratio("dp", writer.dp, reader.dp)?;
        let (r_c, q_c) = axis_ratio("cp", writer.cp, reader.cp)?;
        Ok(RemapPlan { writer, reader, r_d, q_d, r_c, q_c })
    }

    pub fn is_identity(&self) -> bool {
        self.writer == self.reader
    }

    pub fn tgbs_per_block(&self) -> u64 {
        self.r_d as u64 * self.r_c as u64
    }

    pub fn steps_per_block(&self) -> u64 {
        self.q_d as u64 * self.q_c as u64
    }

    /// For logical sub-step `sub` of a block and reader coordinates `(d, c)`:
    /// the TGB offset within the block and the writer slice to read.
    pub fn locate(&self, sub: u64, d: u32, c: u32) -> (u64, u32, u32) {
        let j_d = (sub / self.q_c as u64) as u32;
        let j_c = (sub % self.q_c as u64) as u32;
        let (t_d, wd) = if self.r_d > 1 {
            (d / self.writer.dp, d % self.writer.dp)
        } else {
            (0, self.q_d * d + j_d)
        };
        let (t_c, wc) = if self.r_c > 1 {
            (c / self.writer.cp, c % self.writer.cp)
        } else {
            (0, self.q_c * c + j_c)
        };
        (t_d as u64 * self.r_c as u64 + t_c as u64, wd, wc)
    }
}

/// Plan for a reader moving from `old_spec`'s mesh (the one the TGBs were
/// written for) to `new_spec`'s. TP and PP never matter.
pub fn remap(old_spec: &RankSpec, new_spec: &RankSpec) -> Result<RemapPlan, ConsumerError> {
    RemapPlan::new(old_spec.mesh(), new_spec.mesh())
}

/// Consumer position: the manifest version in hand and the next step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cursor {
    pub version: u64,
    pub step: u64,
}

#[derive(Debug, Clone)]
pub struct ConsumerConfig {
    pub poll_interval: Duration,
    /// Logical steps fetched ahead in the background; 0 disables prefetch.
    pub prefetch_depth: usize,
}

impl Default for ConsumerConfig {
    fn default() -> Self {
        ConsumerConfig {
            poll_interval: Duration::from_millis(200),
            prefetch_depth: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub bytes: Vec<u8>,
    /// First TGB step of the block this batch came from.
    pub step: u64,
    /// Logical sub-step within the block (always 0 without remapping).
    pub sub_step: u64,
    pub tgb_key: ObjectKey,
    /// Writer slice that was read.
    pub slice: (u32, u32),
    pub range: (u64, u64),
    /// Cursor after this batch.
    pub cursor: Cursor,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Poll {
    Ready(Batch),
    NotYetAvailable,
}

type SliceId = (ObjectKey, u32, u32);
type FooterCache = Arc<Mutex<HashMap<ObjectKey, Arc<FooterIndex>>>>;

/// Shared between the client and its prefetch worker.
#[derive(Debug)]
struct Fetcher {
    store: Arc<dyn ObjectStore>,
    footers: FooterCache,
    bytes_read: AtomicU64,
}

impl Fetcher {
    fn footer(&self, key: &ObjectKey, size: u64) -> Result<Arc<FooterIndex>, ConsumerError> {
        if let Some(f) = self.footers.lock().unwrap().get(key) {
            return Ok(f.clone());
        }
        let probe = size.min(TAIL_PROBE_LEN);
        let mut tail = self.store.get_range(key, size - probe, probe)?;
        self.bytes_read.fetch_add(tail.len() as u64, Ordering::Relaxed);
        let span = footer_span(&tail)?;
        if span > tail.len() as u64 {
            if span > size {
                return Err(FormatError::TruncatedFooter { needed: span, available: size }.into());
            }
            tail = self.store.get_range(key, size - span, span)?;
            self.bytes_read.fetch_add(tail.len() as u64, Ordering::Relaxed);
        }
        let footer = Arc::new(decode_footer(&tail)?);
        self.footers
            .lock()
            .unwrap()
            .entry(key.clone())
            .or_insert(footer.clone());
        Ok(footer)
    }

    fn slice(&self, key: &ObjectKey, size: u64, d: u32, c: u32) -> Result<((u64, u64), Vec<u8>), ConsumerError> {
        let footer = self.footer(key, size)?;
        let (offset, len) = footer.slice_range(d, c)?;
        let bytes = self.store.get_range(key, offset, len)?;
        self.bytes_read.fetch_add(bytes.len() as u64, Ordering::Relaxed);
        Ok(((offset, len), bytes))
    }
}

#[derive(Default)]
struct PrefetchState {
    ready: HashMap<SliceId, ((u64, u64), Vec<u8>)>,
    inflight: HashSet<SliceId>,
}

struct Prefetcher {
    jobs: Option<Sender<(SliceId, u64)>>,
    state: Arc<(Mutex<PrefetchState>, Condvar)>,
    worker: Option<JoinHandle<()>>,
}

impl Prefetcher {
    fn spawn(fetcher: Arc<Fetcher>) -> Self {
        let (tx, rx) = mpsc::channel::<(SliceId, u64)>();
        let state: Arc<(Mutex<PrefetchState>, Condvar)> = Arc::default();
        let shared = state.clone();
        let worker = std::thread::spawn(move || {
            for (id, size) in rx {
                let result = fetcher.slice(&id.0, size, id.1, id.2);
                let (lock, cv) = &*shared;
                let mut s = lock.lock().unwrap();
                s.inflight.remove(&id);
                // Failures are dropped; the foreground read surfaces them.
                if let Ok(r) = result {
                    s.ready.insert(id, r);
                }
                cv.notify_all();
            }
        });
        Prefetcher {
            jobs: Some(tx),
            state,
            worker: Some(worker),
        }
    }

    fn request(&self, id: SliceId, size: u64) {
        let mut s = self.state.0.lock().unwrap();
        if s.ready.contains_key(&id) || !s.inflight.insert(id.clone()) {
            return;
        }
        drop(s);
        if let Some(tx) = &self.jobs {
            let _ = tx.send((id, size));
        }
    }

    /// Takes a prefetched slice, waiting if it is still in flight.
    fn take(&self, id: &SliceId) -> Option<((u64, u64), Vec<u8>)> {
        let (lock, cv) = &*self.state;
        let mut s = lock.lock().unwrap();
        while s.inflight.contains(id) {
            s = cv.wait(s).unwrap();
        }
        s.ready.remove(id)
    }
}

impl Drop for Prefetcher {
    fn drop(&mut self) {
        self.jobs.take();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

pub struct ConsumerClient {
    consumer_id: String,
    namespace: ObjectKey,
    spec: RankSpec,
    coords: (u32, u32),
    clock: Arc<dyn Clock>,
    config: ConsumerConfig,
    manifest: Manifest,
    step: u64,
    sub: u64,
    fetcher: Arc<Fetcher>,
    prefetcher: Option<Prefetcher>,
    /// Position up to which prefetch jobs were issued.
    prefetch_mark: (u64, u64),
    last_latest: Option<Duration>,
    last_checkpoint: Option<Watermark>,
    payload_bytes: u64,
}

impl std::fmt::Debug for ConsumerClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConsumerClient")
            .field("consumer_id", &self.consumer_id)
            .field("namespace", &self.namespace)
            .field("spec", &self.spec)
            .field("cursor", &self.cursor())
            .field("sub", &self.sub)
            .finish()
    }
}

impl ConsumerClient {
    /// A consumer starting at the beginning of the namespace.
    pub fn open(
        store: Arc<dyn ObjectStore>,
        clock: Arc<dyn Clock>,
        namespace: ObjectKey,
        consumer_id: impl Into<String>,
        spec: RankSpec,
        config: ConsumerConfig,
    ) -> Result<Self, ConsumerError> {
        Self::build(store, clock, namespace, consumer_id.into(), spec, config, Manifest::genesis(), 0)
    }

    /// Resumes from the consumer's persisted watermark.
    pub fn restore(
        store: Arc<dyn ObjectStore>,
        clock: Arc<dyn Clock>,
        namespace: ObjectKey,
        consumer_id: impl Into<String>,
        spec: RankSpec,
        config: ConsumerConfig,
    ) -> Result<Self, ConsumerError> {
        let consumer_id = consumer_id.into();
        let key = lifecycle::watermark_key(&namespace, &consumer_id)
            .map_err(|_| ConsumerError::InvalidConsumerId(consumer_id.clone()))?;
        let bytes = match store.get(&key) {
            Ok(b) => b,
            Err(e) if e.is_not_found() => return Err(ConsumerError::WatermarkMissing(consumer_id)),
            Err(e) => return Err(e.into()),
        };
        let wm = lifecycle::decode_watermark(&bytes).map_err(|e| LifecycleError::MalformedWatermark {
            key: key.to_string(),
            reason: e.to_string(),
        })?;
        let manifest = if wm.version == 0 {
            Manifest::genesis()
        } else {
            manifest::read_version(store.as_ref(), &namespace, wm.version)?
        };
        let floor = manifest::latest(store.as_ref(), &namespace)?
            .map_or(0, |m| m.trim_floor)
            .max(manifest.trim_floor);
        if wm.step < floor {
            return Err(ConsumerError::StepReclaimed { step: wm.step, trim_floor: floor });
        }
        if wm.step > manifest.end_step() {
            return Err(LifecycleError::MalformedWatermark {
                key: key.to_string(),
                reason: format!("step {} past the end of version {}", wm.step, wm.version),
            }
            .into());
        }
        let mut client = Self::build(store, clock, namespace, consumer_id, spec, config, manifest, wm.step)?;
        client.last_checkpoint = Some(wm);
        Ok(client)
    }

    /// Restores if a watermark exists, otherwise starts from the beginning.
    pub fn restore_or_open(
        store: Arc<dyn ObjectStore>,
        clock: Arc<dyn Clock>,
        namespace: ObjectKey,
        consumer_id: impl Into<String>,
        spec: RankSpec,
        config: ConsumerConfig,
    ) -> Result<Self, ConsumerError> {
        let consumer_id = consumer_id.into();
        match Self::restore(store.clone(), clock.clone(), namespace.clone(), consumer_id.clone(), spec, config.clone()) {
            Err(ConsumerError::WatermarkMissing(_)) => Self::open(store, clock, namespace, consumer_id, spec, config),
            other => other,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        store: Arc<dyn ObjectStore>,
        clock: Arc<dyn Clock>,
        namespace: ObjectKey,
        consumer_id: String,
        spec: RankSpec,
        config: ConsumerConfig,
        manifest: Manifest,
        step: u64,
    ) -> Result<Self, ConsumerError> {
        if consumer_id.is_empty() || lifecycle::watermark_key(&namespace, &consumer_id).is_err() {
            return Err(ConsumerError::InvalidConsumerId(consumer_id));
        }
        let coords = project(&spec)?;
        let fetcher = Arc::new(Fetcher {
            store,
            footers: FooterCache::default(),
            bytes_read: AtomicU64::new(0),
        });
        let prefetcher = (config.prefetch_depth > 0).then(|| Prefetcher::spawn(fetcher.clone()));
        Ok(ConsumerClient {
            consumer_id,
            namespace,
            spec,
            coords,
            clock,
            config,
            manifest,
            step,
            sub: 0,
            fetcher,
            prefetcher,
            prefetch_mark: (step, 0),
            last_latest: None,
            last_checkpoint: None,
            payload_bytes: 0,
        })
    }

    pub fn consumer_id(&self) -> &str {
        &self.consumer_id
    }

    pub fn spec(&self) -> &RankSpec {
        &self.spec
    }

    pub fn coords(&self) -> (u32, u32) {
        self.coords
    }

    pub fn cursor(&self) -> Cursor {
        Cursor {
            version: self.manifest.version,
            step: self.step,
        }
    }

    /// Logical sub-step within the current remap block.
    pub fn sub_step(&self) -> u64 {
        self.sub
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    /// Every byte fetched from the store: manifests, footers, and slices.
    pub fn bytes_read(&self) -> u64 {
        self.fetcher.bytes_read.load(Ordering::Relaxed)
    }

    /// Slice bytes handed to the caller.
    pub fn payload_bytes(&self) -> u64 {
        self.payload_bytes
    }

    pub fn cached_footers(&self) -> usize {
        self.fetcher.footers.lock().unwrap().len()
    }

    /// Descriptors and slice coordinates for the block at `step`, if the
    /// current manifest holds all of it.
    fn block_at(&self, step: u64) -> Result<Option<(RemapPlan, Vec<&TgbDescriptor>)>, ConsumerError> {
        let Some(first) = self.manifest.step(step) else {
            return Ok(None);
        };
        let plan = RemapPlan::new(first.mesh, self.spec.mesh())?;
        let n = plan.tgbs_per_block();
        if step + n > self.manifest.end_step() {
            return Ok(None);
        }
        let descs: Vec<&TgbDescriptor> = (step..step + n).filter_map(|s| self.manifest.step(s)).collect();
        if descs.iter().any(|d| d.mesh != first.mesh) {
            return Err(ConsumerError::MixedMesh { step });
        }
        Ok(Some((plan, descs)))
    }

    /// Returns the rank's next slice, or `NotYetAvailable` if no committed
    /// manifest exposes the next step yet.
    pub fn next_batch(&mut self) -> Result<Poll, ConsumerError> {
        loop {
            if self.step < self.manifest.trim_floor {
                return Err(ConsumerError::StepReclaimed {
                    step: self.step,
                    trim_floor: self.manifest.trim_floor,
                });
            }
            if let Some((plan, descs)) = self.block_at(self.step)? {
                let (offset, wd, wc) = plan.locate(self.sub, self.coords.0, self.coords.1);
                let desc = descs[offset as usize];
                let key = desc.primary_key().clone();
                let id = (key.clone(), wd, wc);
                let prefetched = self.prefetcher.as_ref().and_then(|p| p.take(&id));
                let (range, bytes) = match prefetched {
                    Some(r) => r,
                    None => self.fetcher.slice(&key, desc.total_bytes, wd, wc)?,
                };
                let (step, sub_step) = (self.step, self.sub);
                self.sub += 1;
                if self.sub == plan.steps_per_block() {
                    self.sub = 0;
                    self.step += plan.tgbs_per_block();
                }
                self.payload_bytes += bytes.len() as u64;
                self.schedule_prefetch()?;
                return Ok(Poll::Ready(Batch {
                    bytes,
                    step,
                    sub_step,
                    tgb_key: key,
                    slice: (wd, wc),
                    range,
                    cursor: self.cursor(),
                }));
            }
            if !self.poll()? {
                return Ok(Poll::NotYetAvailable);
            }
        }
    }

    /// Blocking convenience wrapper: polls until a batch arrives or `timeout`
    /// elapses on the client's clock.
    pub fn next_batch_blocking(&mut self, timeout: Duration) -> Result<Option<Batch>, ConsumerError> {
        let deadline = self.clock.now() + timeout;
        loop {
            if let Poll::Ready(b) = self.next_batch()? {
                return Ok(Some(b));
            }
            let now = self.clock.now();
            if now >= deadline {
                return Ok(None);
            }
            self.clock.sleep(self.config.poll_interval.min(deadline - now));
        }
    }

    fn fetch_version(&self, version: u64) -> Result<Option<Manifest>, ConsumerError> {
        let key = manifest_key(&self.namespace, version)?;
        match self.fetcher.store.get(&key) {
            Ok(bytes) => {
                self.fetcher.bytes_read.fetch_add(bytes.len() as u64, Ordering::Relaxed);
                Ok(Some(decode_manifest(&bytes)?))
            }
            Err(e) if e.is_not_found() => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    /// Looks for a newer manifest: probes the next version directly, and
    /// every `poll_interval` also lists to jump over gaps. Returns whether
    /// the view advanced.
    fn poll(&mut self) -> Result<bool, ConsumerError> {
        let mut advanced = false;
        while let Some(next) = self.fetch_version(self.manifest.version + 1)? {
            self.manifest = next;
            advanced = true;
        }
        if advanced {
            return Ok(true);
        }
        let now = self.clock.now();
        let due = self
            .last_latest
            .is_none_or(|t| now.saturating_sub(t) >= self.config.poll_interval);
        if due {
            self.last_latest = Some(now);
            return self.adopt_latest();
        }
        Ok(false)
    }

    /// Moves the view to the newest committed manifest, if newer.
    fn adopt_latest(&mut self) -> Result<bool, ConsumerError> {
        if let Some(m) = manifest::latest(self.fetcher.store.as_ref(), &self.namespace)? {
            if m.version > self.manifest.version {
                self.fetcher
                    .bytes_read
                    .fetch_add(encode_manifest(&m).len() as u64, Ordering::Relaxed);
                self.manifest = m;
                return Ok(true);
            }
        }
        Ok(false)
    }

    fn schedule_prefetch(&mut self) -> Result<(), ConsumerError> {
        let Some(prefetcher) = &self.prefetcher else {
            return Ok(());
        };
        let (mut step, mut sub) = (self.step, self.sub);
        for _ in 0..self.config.prefetch_depth {
            let Some((plan, descs)) = self.block_at(step)? else {
                break;
            };
            if (step, sub) >= self.prefetch_mark {
                let (offset, wd, wc) = plan.locate(sub, self.coords.0, self.coords.1);
                let desc = descs[offset as usize];
                prefetcher.request((desc.primary_key().clone(), wd, wc), desc.total_bytes);
            }
            sub += 1;
            if sub == plan.steps_per_block() {
                sub = 0;
                step += plan.tgbs_per_block();
            }
        }
        self.prefetch_mark = self.prefetch_mark.max((step, sub));
        Ok(())
    }

    /// Persists the cursor as this consumer's watermark. The view first moves
    /// to the newest manifest so the recorded version does not hold back
    /// manifest reclamation. A no-op when the cursor has not moved since the
    /// last checkpoint.
    pub fn checkpoint(&mut self) -> Result<Watermark, ConsumerError> {
        if self.sub != 0 {
            return Err(ConsumerError::UnalignedCheckpoint { sub: self.sub });
        }
        self.adopt_latest()?;
        let wm = Watermark {
            consumer_id: self.consumer_id.clone(),
            version: self.manifest.version,
            step: self.step,
        };
        if self.last_checkpoint.as_ref() != Some(&wm) {
            lifecycle::write_watermark(self.fetcher.store.as_ref(), &self.namespace, &wm)?;
            self.last_checkpoint = Some(wm.clone());
        }
        Ok(wm)
    }
}
