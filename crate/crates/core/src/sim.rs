// SPDX-License-Identifier: Apache-2.0

//! Discrete-event model of producers contending on the version sequence.
//!
//! Each simulated producer is a sequential process that alternates between
//! writing TGBs and commit attempts. An attempt started at `t` occupies the
//! fragile window `[t, t + tau)`, where `tau` grows linearly with the number
//! of committed manifest entries, and succeeds iff no other attempt claimed
//! the version in the meantime. The gate deciding when to attempt is the
//! commit policy under test. When the run ends producers stop writing and
//! drain what they hold, so every produced TGB is committed exactly once and
//! throughput is committed TGBs over the makespan.
//!
//! [`stress_real`] runs the actual [`ProducerClient`] against an in-memory
//! store instead and reports the same metrics.

use std::cmp::Ordering as CmpOrdering;
use std::collections::{BTreeSet, BinaryHeap, HashSet};
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clock::{Clock, SystemClock};
use crate::dac::{conflict_probability, DacParams, DacState};
use crate::lifecycle::{storage_census, StorageCensus};
use crate::manifest::{check_history, latest, Manifest, ManifestError};
use crate::object_store::{FaultProfile, Latency, MemoryStore, ObjectKey, ObjectStore, StoreError};
use crate::producer::{FragileWindowSample, ProducerClient, ProducerConfig, ProducerError, SampleOutcome};
use crate::tgb_format::MeshSpec;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error(transparent)]
    Producer(#[from] ProducerError),

    #[error(transparent)]
    Manifest(#[from] ManifestError),

    #[error(transparent)]
    Store(#[from] StoreError),

    #[error(transparent)]
    Lifecycle(#[from] crate::lifecycle::LifecycleError),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, SimError> {
    Err(SimError::ConfigInvalid(msg.into()))
}

/// Commit policy of a simulated producer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec {
    /// Attempt after every TGB.
    Naive,
    /// Attempt once `k` TGBs are pending.
    Fixed { k: u64 },
    /// Like `Fixed`, with the threshold raised by one on each conflict.
    Incr { start: u64 },
    /// Time gate between attempts: `+addend` seconds after a success,
    /// `×factor` after a conflict.
    Aimd { addend: f64, factor: f64 },
    Dac { params: DacParams },
}

impl PolicySpec {
    pub fn name(&self) -> String {
        match self {
            PolicySpec::Naive => "naive".into(),
            PolicySpec::Fixed { k } => format!("fixed{k}"),
            PolicySpec::Incr { .. } => "incr".into(),
            PolicySpec::Aimd { .. } => "aimd".into(),
            PolicySpec::Dac { .. } => "dac".into(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        match *self {
            PolicySpec::Naive => Ok(()),
            PolicySpec::Fixed { k } | PolicySpec::Incr { start: k } if k == 0 => invalid("threshold must be at least 1"),
            PolicySpec::Fixed { .. } | PolicySpec::Incr { .. } => Ok(()),
            PolicySpec::Aimd { addend, factor } => {
                if !(addend > 0.0 && addend.is_finite()) {
                    return invalid(format!("aimd addend must be positive, got {addend}"));
                }
                if !(factor > 0.0 && factor < 1.0) {
                    return invalid(format!("aimd factor must be in (0, 1), got {factor}"));
                }
                Ok(())
            }
            PolicySpec::Dac { params } => params.validate().map_err(|e| SimError::ConfigInvalid(e.to_string())),
        }
    }

    /// The five baselines plus DAC. AIMD's addend is one mean inter-arrival.
    pub fn ablation_set(mean_interarrival: f64, params: DacParams) -> Vec<PolicySpec> {
        vec![
            PolicySpec::Dac { params },
            PolicySpec::Incr { start: 10 },
            PolicySpec::Fixed { k: 100 },
            PolicySpec::Aimd {
                addend: mean_interarrival,
                factor: 0.5,
            },
            PolicySpec::Fixed { k: 10 },
            PolicySpec::Naive,
        ]
    }
}

/// Fragile window as a function of manifest size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauModel {
    /// Seconds at an empty manifest.
    pub base: f64,
    /// Extra seconds per committed entry.
    pub slope: f64,
}

impl TauModel {
    pub fn tau(&self, entries: u64) -> f64 {
        self.base + self.slope * entries as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_producers: usize,
    /// Simulated seconds.
    pub duration: f64,
    /// Attempts starting before this time are left out of rate statistics.
    pub warmup: f64,
    pub tgb_interarrival: Latency,
    pub tau_model: TauModel,
    pub seed: u64,
    /// Payload size used to report bytes per second.
    pub tgb_bytes: u64,
    /// Spacing of time-series samples, in simulated seconds.
    pub sample_interval: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_producers: 32,
            duration: 3600.0,
            warmup: 600.0,
            tgb_interarrival: Latency::Exponential { mean: 0.5 },
            tau_model: TauModel { base: 0.1, slope: 0.0 },
            seed: 0,
            tgb_bytes: 100 * 1024,
            sample_interval: 60.0,
        }
    }
}

impl SimConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_producers == 0 {
            return invalid("n_producers must be at least 1");
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return invalid("duration must be positive");
        }
        if !(self.warmup >= 0.0 && self.warmup < self.duration) {
            return invalid("warmup must be in [0, duration)");
        }
        if !(self.tau_model.base > 0.0 && self.tau_model.base.is_finite()) {
            return invalid("tau base must be positive");
        }
        if !(self.tau_model.slope >= 0.0 && self.tau_model.slope.is_finite()) {
            return invalid("tau slope must be non-negative");
        }
        if !(self.sample_interval > 0.0) {
            return invalid("sample_interval must be positive");
        }
        self.tgb_interarrival.validate().map_err(SimError::ConfigInvalid)?;
        let positive = match self.tgb_interarrival {
            Latency::Zero => false,
            Latency::Fixed { secs } => secs > 0.0,
            Latency::Uniform { hi, .. } => hi > 0.0,
            Latency::Exponential { mean } => mean > 0.0,
        };
        if !positive {
            return invalid("TGB inter-arrival must take time");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub committed_tgbs: u64,
    pub attempts: u64,
    pub successes: u64,
    pub conflicts: u64,
    /// Committed TGBs per second of makespan.
    pub throughput: f64,
    pub bytes_per_sec: f64,
    pub conflict_rate: f64,
    pub success_rate: f64,
    /// Fraction of attempts whose window saw another attempt end, won or
    /// lost. This is the event the conflict model describes.
    pub overlap_rate: f64,
}

impl SimResult {
    fn finish(&mut self, duration: f64, tgb_bytes: u64) {
        self.throughput = self.committed_tgbs as f64 / duration;
        self.bytes_per_sec = self.throughput * tgb_bytes as f64;
        if self.attempts > 0 {
            self.conflict_rate = self.conflicts as f64 / self.attempts as f64;
            self.success_rate = self.successes as f64 / self.attempts as f64;
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub t: f64,
    /// Fragile window at the current manifest size.
    pub tau: f64,
    /// Mean current gap over DAC producers (0 when none).
    pub mean_gap: f64,
    pub committed_tgbs: u64,
    /// Conflict rate of attempts ending since the previous point.
    pub window_conflict_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub policy: String,
    /// Time of the last commit, including the final drain.
    pub makespan: f64,
    pub aggregate: SimResult,
    pub per_producer: Vec<SimResult>,
    pub series: Vec<SeriesPoint>,
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Line<'a> {
    Aggregate { policy: &'a str, makespan: f64, #[serde(flatten)] result: &'a SimResult },
    Producer { policy: &'a str, producer: usize, #[serde(flatten)] result: &'a SimResult },
    Series { policy: &'a str, #[serde(flatten)] point: &'a SeriesPoint },
}

impl SimReport {
    /// One JSON object per line: the aggregate, then each producer, then
    /// the time series.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        let mut push = |line: Line| {
            out.push_str(&serde_json::to_string(&line).expect("record serializes"));
            out.push('\n');
        };
        push(Line::Aggregate { policy: &self.policy, makespan: self.makespan, result: &self.aggregate });
        for (i, r) in self.per_producer.iter().enumerate() {
            push(Line::Producer { policy: &self.policy, producer: i, result: r });
        }
        for p in &self.series {
            push(Line::Series { policy: &self.policy, point: p });
        }
        out
    }
}

enum Gate {
    Count { k: u64, grow_on_conflict: bool },
    Aimd { interval: f64, addend: f64, factor: f64 },
    Dac { params: DacParams, state: DacState },
}

impl Gate {
    fn new(spec: PolicySpec) -> Self {
        match spec {
            PolicySpec::Naive => Gate::Count { k: 1, grow_on_conflict: false },
            PolicySpec::Fixed { k } => Gate::Count { k, grow_on_conflict: false },
            PolicySpec::Incr { start } => Gate::Count { k: start, grow_on_conflict: true },
            PolicySpec::Aimd { addend, factor } => Gate::Aimd { interval: addend, addend, factor },
            PolicySpec::Dac { params } => Gate::Dac { params, state: DacState::default() },
        }
    }

    fn open(&self, pending: u64, now: f64, t_last: f64) -> bool {
        match self {
            Gate::Count { k, .. } => pending >= *k,
            Gate::Aimd { interval, .. } => pending >= 1 && now - t_last >= *interval,
            Gate::Dac { state, .. } => pending >= 1 && now - t_last >= state.gap,
        }
    }

    fn after_attempt(&mut self, success: bool, observed_tau: f64, n: u64, u: f64, phase: f64) {
        match self {
            Gate::Count { k, grow_on_conflict } => {
                if !success && *grow_on_conflict {
                    *k += 1;
                }
            }
            Gate::Aimd { interval, addend, factor } => {
                if success {
                    *interval += *addend;
                } else {
                    *interval *= *factor;
                }
            }
            Gate::Dac { params, state } => {
                state.observe(observed_tau, params.alpha);
                state.recompute_phased(n, params, u, phase).expect("parameters validated");
            }
        }
    }

    /// Earliest next attempt while draining. Count gates no longer apply
    /// since no more data arrives; DAC keeps only its duty bound.
    fn drain_open_at(&self, t_last: f64) -> f64 {
        match self {
            Gate::Count { .. } => t_last,
            Gate::Aimd { interval, .. } => t_last + interval,
            Gate::Dac { params, state } => t_last + state.drain_gap(params),
        }
    }

    fn gap(&self) -> Option<f64> {
        match self {
            Gate::Dac { state, .. } => Some(state.gap),
            _ => None,
        }
    }
}

struct InFlight {
    start: f64,
    base_version: u64,
    ends_before: u64,
    tau: f64,
}

struct SimProducer {
    gate: Gate,
    rng: ChaCha8Rng,
    pending: u64,
    t_last: f64,
    attempt: Option<InFlight>,
    stats: SimResult,
}

#[derive(Debug, PartialEq)]
struct Event {
    t: f64,
    seq: u64,
    producer: usize,
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> CmpOrdering {
        // Min-heap on (t, seq).
        other.t.total_cmp(&self.t).then(other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<CmpOrdering> {
        Some(self.cmp(other))
    }
}

fn producer_seed(seed: u64, i: usize) -> u64 {
    seed ^ (i as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

struct Engine<'a> {
    config: &'a SimConfig,
    producers: Vec<SimProducer>,
    heap: BinaryHeap<Event>,
    seq: u64,
    version: u64,
    entries: u64,
    attempt_ends: u64,
    committers: HashSet<usize>,
    series: Vec<SeriesPoint>,
    next_sample: f64,
    window: (u64, u64),
    makespan: f64,
}

impl Engine<'_> {
    fn schedule(&mut self, t: f64, producer: usize) {
        self.seq += 1;
        self.heap.push(Event { t, seq: self.seq, producer });
    }

    fn start_attempt(&mut self, i: usize, t: f64) {
        let tau = self.config.tau_model.tau(self.entries);
        self.producers[i].attempt = Some(InFlight {
            start: t,
            base_version: self.version,
            ends_before: self.attempt_ends,
            tau,
        });
        self.schedule(t + tau, i);
    }

    /// Starts an attempt if the gate is open, otherwise writes TGBs until it
    /// opens. Writes never interact with other producers, so a run of them
    /// is one event. After `duration` producers stop writing and drain.
    fn advance(&mut self, i: usize, mut t: f64) {
        let duration = self.config.duration;
        let p = &mut self.producers[i];
        if t >= duration {
            if p.pending == 0 {
                return;
            }
            let open_at = p.gate.drain_open_at(p.t_last);
            if t < open_at {
                self.schedule(open_at, i);
            } else {
                self.start_attempt(i, t);
            }
            return;
        }
        if p.gate.open(p.pending, t, p.t_last) {
            self.start_attempt(i, t);
            return;
        }
        loop {
            t += self.config.tgb_interarrival.sample(&mut p.rng).as_secs_f64();
            if t >= duration {
                self.schedule(duration, i);
                return;
            }
            p.pending += 1;
            if p.gate.open(p.pending, t, p.t_last) {
                break;
            }
        }
        self.schedule(t, i);
    }

    fn finish_attempt(&mut self, i: usize, t: f64) {
        let a = self.producers[i].attempt.take().expect("attempt in flight");
        let success = self.version == a.base_version;
        let overlap = self.attempt_ends > a.ends_before;
        self.attempt_ends += 1;
        let steady = a.start >= self.config.warmup && a.start < self.config.duration;
        let p = &mut self.producers[i];
        if success {
            self.version += 1;
            self.makespan = self.makespan.max(t);
            self.entries += p.pending;
            p.stats.committed_tgbs += p.pending;
            p.pending = 0;
            self.committers.insert(i);
        }
        if steady {
            p.stats.attempts += 1;
            if success {
                p.stats.successes += 1;
            } else {
                p.stats.conflicts += 1;
            }
            if overlap {
                p.stats.overlap_rate += 1.0;
            }
        }
        self.window.0 += 1;
        self.window.1 += u64::from(!success);
        let (u, phase): (f64, f64) = (p.rng.random(), p.rng.random());
        let n = self.committers.len().max(1) as u64;
        p.gate.after_attempt(success, a.tau, n, u, phase);
        p.t_last = t;
    }

    fn sample_until(&mut self, t: f64) {
        while self.next_sample <= t {
            let gaps: Vec<f64> = self.producers.iter().filter_map(|p| p.gate.gap()).collect();
            let mean_gap = if gaps.is_empty() { 0.0 } else { gaps.iter().sum::<f64>() / gaps.len() as f64 };
            let (n, c) = std::mem::take(&mut self.window);
            self.series.push(SeriesPoint {
                t: self.next_sample,
                tau: self.config.tau_model.tau(self.entries),
                mean_gap,
                committed_tgbs: self.entries,
                window_conflict_rate: if n == 0 { 0.0 } else { c as f64 / n as f64 },
            });
            self.next_sample += self.config.sample_interval;
        }
    }
}

/// Runs one simulation. `policies` holds one entry per producer, or a single
/// entry applied to all of them.
pub fn simulate(config: &SimConfig, policies: &[PolicySpec]) -> Result<SimReport, SimError> {
    config.validate()?;
    if policies.len() != 1 && policies.len() != config.n_producers {
        return invalid(format!(
            "expected 1 or {} policies, got {}",
            config.n_producers,
            policies.len()
        ));
    }
    for p in policies {
        p.validate()?;
    }
    let policy_of = |i: usize| policies[if policies.len() == 1 { 0 } else { i }];
    let names: BTreeSet<String> = policies.iter().map(|p| p.name()).collect();
    let producers = (0..config.n_producers)
        .map(|i| SimProducer {
            gate: Gate::new(policy_of(i)),
            rng: ChaCha8Rng::seed_from_u64(producer_seed(config.seed, i)),
            pending: 0,
            t_last: 0.0,
            attempt: None,
            stats: SimResult::default(),
        })
        .collect();
    let mut engine = Engine {
        config,
        producers,
        heap: BinaryHeap::new(),
        seq: 0,
        version: 0,
        entries: 0,
        attempt_ends: 0,
        committers: HashSet::new(),
        series: Vec::new(),
        next_sample: config.sample_interval,
        window: (0, 0),
        makespan: config.duration,
    };
    for i in 0..config.n_producers {
        engine.advance(i, 0.0);
    }
    while let Some(ev) = engine.heap.pop() {
        engine.sample_until(ev.t.min(config.duration));
        if engine.producers[ev.producer].attempt.is_some() {
            engine.finish_attempt(ev.producer, ev.t);
        }
        engine.advance(ev.producer, ev.t);
    }
    engine.sample_until(config.duration);

    let makespan = engine.makespan;
    let mut aggregate = SimResult::default();
    let mut per_producer = Vec::with_capacity(config.n_producers);
    for p in engine.producers {
        let mut r = p.stats;
        aggregate.committed_tgbs += r.committed_tgbs;
        aggregate.attempts += r.attempts;
        aggregate.successes += r.successes;
        aggregate.conflicts += r.conflicts;
        aggregate.overlap_rate += r.overlap_rate;
        r.overlap_rate = if r.attempts > 0 { r.overlap_rate / r.attempts as f64 } else { 0.0 };
        r.finish(makespan, config.tgb_bytes);
        per_producer.push(r);
    }
    if aggregate.attempts > 0 {
        aggregate.overlap_rate /= aggregate.attempts as f64;
    }
    aggregate.finish(makespan, config.tgb_bytes);
    Ok(SimReport {
        policy: names.into_iter().collect::<Vec<_>>().join("+"),
        makespan,
        aggregate,
        per_producer,
        series: engine.series,
    })
}

/// Runs each policy on its own, with every producer using it.
pub fn ablation(config: &SimConfig, policies: &[PolicySpec]) -> Result<Vec<SimReport>, SimError> {
    policies.iter().map(|p| simulate(config, std::slice::from_ref(p))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_producers: usize,
    /// Constant fragile window, seconds.
    pub tau: f64,
    /// Mean gaps to sweep.
    pub t_values: Vec<f64>,
    /// Simulated seconds per grid point, after warmup.
    pub duration: f64,
    pub warmup: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_producers: 8,
            tau: 1.0,
            t_values: vec![0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0],
            duration: 20_000.0,
            warmup: 100.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub n: usize,
    pub t: f64,
    pub tau: f64,
    pub predicted: f64,
    /// Fraction of attempts whose window saw another attempt land.
    pub overlap: f64,
    /// Fraction of attempts that actually lost their version.
    pub realized: f64,
    pub attempts: u64,
}

/// Sweeps fixed mean gaps with every producer always holding data and
/// compares the measured conflict frequency with the model.
///
/// Gaps are drawn exponentially with mean `T`, so competitor attempt starts
/// approximate the Poisson processes the model assumes.
pub fn validate_model(config: &ModelConfig) -> Result<Vec<ModelRow>, SimError> {
    if config.n_producers == 0 {
        return invalid("n_producers must be at least 1");
    }
    if !(config.tau > 0.0 && config.tau.is_finite()) {
        return invalid("tau must be positive");
    }
    if !(config.duration > 0.0 && config.warmup >= 0.0) {
        return invalid("duration must be positive and warmup non-negative");
    }
    let mut rows = Vec::new();
    for (k, &t_mean) in config.t_values.iter().enumerate() {
        if !(t_mean >= 0.0 && t_mean.is_finite()) {
            return invalid(format!("gap {t_mean} must be finite and non-negative"));
        }
        let n = config.n_producers;
        let end = config.warmup + config.duration;
        let mut rngs: Vec<ChaCha8Rng> = (0..n)
            .map(|i| ChaCha8Rng::seed_from_u64(producer_seed(config.seed ^ ((k as u64) << 32), i)))
            .collect();
        // `None` while waiting to start; `(start, base_version, ends_before)`
        // while an attempt is in flight.
        let mut inflight: Vec<Option<(f64, u64, u64)>> = vec![None; n];
        let mut heap = BinaryHeap::new();
        let mut seq = 0;
        for (i, rng) in rngs.iter_mut().enumerate() {
            seq += 1;
            let phase = rng.random::<f64>() * (t_mean + config.tau);
            heap.push(Event { t: phase, seq, producer: i });
        }
        let (mut version, mut ends) = (0u64, 0u64);
        let (mut attempts, mut overlaps, mut conflicts) = (0u64, 0u64, 0u64);
        while let Some(ev) = heap.pop() {
            let i = ev.producer;
            seq += 1;
            let Some((start, base, ends_before)) = inflight[i].take() else {
                if ev.t + config.tau <= end {
                    inflight[i] = Some((ev.t, version, ends));
                    heap.push(Event { t: ev.t + config.tau, seq, producer: i });
                }
                continue;
            };
            let success = version == base;
            let overlap = ends > ends_before;
            ends += 1;
            if success {
                version += 1;
            }
            if start >= config.warmup {
                attempts += 1;
                overlaps += u64::from(overlap);
                conflicts += u64::from(!success);
            }
            let gap = if t_mean > 0.0 {
                -t_mean * (1.0 - rngs[i].random::<f64>()).ln()
            } else {
                0.0
            };
            heap.push(Event { t: ev.t + gap, seq, producer: i });
        }
        let predicted = conflict_probability(t_mean, config.tau, n as u64)
            .map_err(|e| SimError::ConfigInvalid(e.to_string()))?;
        let frac = |x: u64| if attempts == 0 { 0.0 } else { x as f64 / attempts as f64 };
        rows.push(ModelRow {
            n,
            t: t_mean,
            tau: config.tau,
            predicted,
            overlap: frac(overlaps),
            realized: frac(conflicts),
            attempts,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressConfig {
    pub n_producers: usize,
    pub duration: Duration,
    /// Commit attempts starting before this are left out of rate statistics.
    pub warmup: Duration,
    /// Pause between TGB writes in each producer.
    pub interarrival: Duration,
    pub tgb_bytes: usize,
    pub faults: FaultProfile,
    pub params: DacParams,
    /// Time allowed for draining after `duration`.
    pub drain: Duration,
    pub seed: u64,
}

impl Default for StressConfig {
    fn default() -> Self {
        StressConfig {
            n_producers: 8,
            duration: Duration::from_secs(5),
            warmup: Duration::from_secs(1),
            interarrival: Duration::from_millis(5),
            tgb_bytes: 1024,
            faults: FaultProfile {
                put_latency: Latency::Uniform { lo: 0.002, hi: 0.004 },
                get_latency: Latency::Uniform { lo: 0.001, hi: 0.002 },
                crash_after_put_probability: 0.0,
            },
            params: DacParams::default(),
            drain: Duration::from_secs(30),
            seed: 0,
        }
    }
}

/// Exactly-once verdict over the final manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CensusVerdict {
    pub written: u64,
    pub listed: u64,
    pub unique: u64,
    pub dense: bool,
    pub history_ok: bool,
    pub exactly_once: bool,
}

/// Checks that `manifest` lists every written `(producer, seq)` exactly once
/// with dense steps, and that the version chain is consistent.
pub fn census_verdict(
    store: &dyn ObjectStore,
    namespace: &ObjectKey,
    written: u64,
) -> Result<CensusVerdict, SimError> {
    let m = latest(store, namespace)?.unwrap_or_else(Manifest::genesis);
    let unique: HashSet<(&str, u64)> = m
        .tgb_list
        .iter()
        .map(|d| (d.producer_id.as_str(), d.producer_seq))
        .collect();
    let dense = m
        .tgb_list
        .iter()
        .enumerate()
        .all(|(i, d)| d.step_index == m.trim_floor + i as u64);
    let history_ok = m.version == 0 || check_history(store, namespace).is_ok();
    let listed = m.tgb_list.len() as u64;
    let unique = unique.len() as u64;
    Ok(CensusVerdict {
        written,
        listed,
        unique,
        dense,
        history_ok,
        exactly_once: listed == written && unique == written && dense && history_ok,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressReport {
    pub result: SimResult,
    pub census: CensusVerdict,
    pub storage: StorageCensus,
}

/// Runs real producers in threads against a latency-injected in-memory
/// store, then drains them and audits the result.
pub fn stress_real(config: &StressConfig) -> Result<StressReport, SimError> {
    if config.n_producers == 0 {
        return invalid("n_producers must be at least 1");
    }
    config.params.validate().map_err(|e| SimError::ConfigInvalid(e.to_string()))?;
    let store: Arc<dyn ObjectStore> = Arc::new(MemoryStore::with_faults(config.faults.clone(), config.seed)?);
    let clock: Arc<dyn Clock> = Arc::new(SystemClock::new());
    let namespace = ObjectKey::new("stress").expect("static key");
    let mesh = MeshSpec::new(1, 1).expect("static mesh");

    let handles: Vec<_> = (0..config.n_producers)
        .map(|i| {
            let (store, clock, namespace, config) = (store.clone(), clock.clone(), namespace.clone(), config.clone());
            std::thread::spawn(move || -> Result<_, SimError> {
                let id = format!("p{i:03}");
                let producer_config = ProducerConfig {
                    params: config.params,
                    max_lag: None,
                    seed: Some(producer_seed(config.seed, i)),
                };
                let mut p = ProducerClient::open(store, clock.clone(), namespace, id.clone(), producer_config)?;
                let mut next_write = clock.now();
                while clock.now() < config.duration {
                    if clock.now() >= next_write {
                        let seq = p.next_seq();
                        let mut payload = format!("{id}:{seq}:").into_bytes();
                        payload.resize(config.tgb_bytes.max(payload.len()), b'.');
                        p.write_tgb(&[payload], mesh)?;
                        next_write += config.interarrival;
                    }
                    p.tick(clock.now())?;
                    let wake = p.next_attempt_at().map_or(next_write, |g| g.min(next_write));
                    clock.sleep_until(wake.min(config.duration));
                }
                p.finalize(config.duration + config.drain)?;
                Ok(p.stats().clone())
            })
        })
        .collect();

    let mut result = SimResult::default();
    let mut written = 0;
    for h in handles {
        let stats = h
            .join()
            .map_err(|_| SimError::ConfigInvalid("producer thread panicked".into()))??;
        written += stats.tgbs_written;
        result.committed_tgbs += stats.committed_tgbs;
        // Steady-state window only; the drain phase is excluded as in `simulate`.
        let steady = |s: &&FragileWindowSample| s.started_at >= config.warmup && s.started_at < config.duration;
        for s in stats.samples.iter().filter(steady) {
            result.attempts += 1;
            match s.outcome {
                SampleOutcome::Committed => result.successes += 1,
                SampleOutcome::Conflict => result.conflicts += 1,
            }
        }
    }
    // Competitor overlap is not observable from inside a real producer, so
    // `overlap_rate` stays 0 here.
    result.finish(config.duration.as_secs_f64(), config.tgb_bytes as u64);
    let census = census_verdict(store.as_ref(), &namespace, written)?;
    let storage = storage_census(store.as_ref(), &namespace)?;
    Ok(StressReport { result, census, storage })
}
