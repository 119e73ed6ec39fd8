// SPDX-License-Identifier: Apache-2.0

//! Command-line front end.
//!
//! Reports go to stdout as one JSON object per line; a short human summary
//! goes to stderr. Exit codes: 0 success, 1 protocol or invariant violation,
//! 2 usage error, 3 transient I/O exhaustion.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::clock::{Clock, SystemClock};
use crate::consumer::{project, ConsumerClient, ConsumerConfig, ConsumerError, Poll, RankSpec};
use crate::dac::DacParams;
use crate::lifecycle::{reclaim, LifecycleError, ReclaimOptions};
use crate::manifest::{check_history, latest, read_version, ManifestError};
use crate::object_store::{FaultProfile, FsStore, Latency, MemoryStore, ObjectKey, ObjectStore, StoreError};
use crate::overhead::{measure_commit_overhead, LatencySummary, OverheadConfig, OverheadError};
use crate::producer::{ProducerClient, ProducerConfig, ProducerError, SampleOutcome};
use crate::sim::{ablation, simulate, validate_model, ModelConfig, PolicySpec, SimConfig, SimError};
use crate::tgb_format::MeshSpec;

pub const EXIT_OK: u8 = 0;
pub const EXIT_VIOLATION: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_TRANSIENT: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "batchplane", version, about = "Transactional batch data plane on object storage")]
pub struct Cli {
    /// Store backend: `memory`, `fs:<path>`, or `remote:<endpoint>`.
    #[arg(long, global = true, default_value = "memory")]
    pub store: String,

    #[arg(long, global = true, default_value = "default")]
    pub namespace: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Summarize the latest (or a pinned) manifest.
    Inspect(InspectArgs),
    /// Run synthetic producers and report ingestion metrics.
    Produce(ProduceArgs),
    /// Run synthetic consumer ranks and report read metrics.
    Consume(ConsumeArgs),
    /// Reclaim storage below the global checkpoint watermark.
    Gc(GcArgs),
    /// Run the commit-policy simulator.
    Simulate(SimulateArgs),
    /// Compare simulated conflict rates with the analytical model.
    ValidateModel(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Show this manifest version instead of the latest.
    #[arg(long = "at-version")]
    pub at_version: Option<u64>,
    /// Also print every TGB descriptor.
    #[arg(long)]
    pub dump: bool,
    /// Verify the whole retained version chain.
    #[arg(long)]
    pub check: bool,
}

#[derive(Debug, Args)]
pub struct DacArgs {
    #[arg(long, default_value_t = 0.05)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0.5)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.2)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    pub rho: f64,
}

impl DacArgs {
    fn params(&self) -> DacParams {
        DacParams {
            delta: self.delta,
            epsilon: self.epsilon,
            alpha: self.alpha,
            rho: self.rho,
        }
    }
}

#[derive(Debug, Args)]
pub struct ProduceArgs {
    #[arg(long, default_value_t = 4)]
    pub producers: usize,
    /// Bytes per TGB, split evenly over the dp·cp slices.
    #[arg(long, default_value_t = 64 * 1024)]
    pub payload_size: usize,
    /// Seconds of production before draining.
    #[arg(long, default_value_t = 5.0)]
    pub duration: f64,
    /// Milliseconds between TGB writes per producer.
    #[arg(long, default_value_t = 10.0)]
    pub interval_ms: f64,
    #[arg(long, default_value_t = 1)]
    pub dp: u32,
    #[arg(long, default_value_t = 1)]
    pub cp: u32,
    #[arg(long)]
    pub max_lag: Option<u64>,
    #[arg(long, default_value = "p")]
    pub producer_prefix: String,
    /// Injected put latency for the memory backend, milliseconds.
    #[arg(long, default_value_t = 0.0)]
    pub put_latency_ms: f64,
    /// Injected get latency for the memory backend, milliseconds.
    #[arg(long, default_value_t = 0.0)]
    pub get_latency_ms: f64,
    /// Paired commits for the producer-state overhead measurement; 0 skips it.
    #[arg(long, default_value_t = 100)]
    pub overhead_commits: usize,
    #[command(flatten)]
    pub dac: DacArgs,
}

#[derive(Debug, Args)]
pub struct ConsumeArgs {
    /// Defaults to WORLD_SIZE, or dp·cp·tp·pp.
    #[arg(long)]
    pub world_size: Option<u32>,
    #[arg(long, default_value_t = 1)]
    pub dp: u32,
    #[arg(long, default_value_t = 1)]
    pub cp: u32,
    #[arg(long, default_value_t = 1)]
    pub tp: u32,
    #[arg(long, default_value_t = 1)]
    pub pp: u32,
    /// Defaults to RANK.
    #[arg(long, conflicts_with = "all_ranks")]
    pub rank: Option<u32>,
    #[arg(long)]
    pub all_ranks: bool,
    /// Upper bound on run time, seconds.
    #[arg(long, default_value_t = 10.0)]
    pub duration: f64,
    /// Keep polling after catching up until the duration ends.
    #[arg(long)]
    pub follow: bool,
    /// Checkpoint after every this many batches.
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Resume from each rank's watermark when one exists.
    #[arg(long)]
    pub resume: bool,
    #[arg(long, default_value = "rank")]
    pub consumer_prefix: String,
    #[arg(long, default_value_t = 2)]
    pub prefetch_depth: usize,
}

#[derive(Debug, Args)]
pub struct GcArgs {
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// TOML file with simulator settings and policies.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Omit per-producer and time-series records.
    #[arg(long)]
    pub summary: bool,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// TOML file with model-validation settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub producers: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// How simulated policies are assigned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    /// Each policy runs alone with every producer using it.
    #[default]
    Ablation,
    /// One run, producers assigned policies round-robin.
    Mixed,
}

/// Simulator config file: `SimConfig` fields at top level plus `mode` and a
/// `[[policies]]` array.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimFile {
    #[serde(flatten)]
    pub config: SimConfig,
    #[serde(default)]
    pub mode: SimMode,
    #[serde(default)]
    pub policies: Vec<PolicySpec>,
}

#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError { code: EXIT_USAGE, message: message.into() }
    }

    fn violation(message: impl Into<String>) -> Self {
        CliError { code: EXIT_VIOLATION, message: message.into() }
    }
}

fn store_code(e: &StoreError) -> u8 {
    if e.is_transient() {
        EXIT_TRANSIENT
    } else {
        EXIT_VIOLATION
    }
}

fn manifest_code(e: &ManifestError) -> u8 {
    match e {
        ManifestError::Store(s) => store_code(s),
        _ => EXIT_VIOLATION,
    }
}

macro_rules! cli_from {
    ($t:ty, $code:expr) => {
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                #[allow(clippy::redundant_closure_call)]
                let code = ($code)(&e);
                CliError { code, message: e.to_string() }
            }
        }
    };
}

cli_from!(StoreError, store_code);
cli_from!(ManifestError, manifest_code);
cli_from!(LifecycleError, |e: &LifecycleError| match e {
    LifecycleError::Store(s) => store_code(s),
    LifecycleError::Manifest(m) => manifest_code(m),
    _ => EXIT_VIOLATION,
});
cli_from!(ProducerError, |e: &ProducerError| match e {
    ProducerError::Store(s) => store_code(s),
    ProducerError::Manifest(m) => manifest_code(m),
    ProducerError::Dac(_) | ProducerError::InvalidProducerId(_) => EXIT_USAGE,
    _ => EXIT_VIOLATION,
});
cli_from!(ConsumerError, |e: &ConsumerError| match e {
    ConsumerError::Store(s) => store_code(s),
    ConsumerError::Manifest(m) => manifest_code(m),
    ConsumerError::InvalidTopology(_) | ConsumerError::UnsupportedRemap { .. } | ConsumerError::InvalidConsumerId(_) => {
        EXIT_USAGE
    }
    _ => EXIT_VIOLATION,
});
cli_from!(SimError, |e: &SimError| match e {
    SimError::ConfigInvalid(_) => EXIT_USAGE,
    _ => EXIT_VIOLATION,
});
cli_from!(OverheadError, |e: &OverheadError| match e {
    OverheadError::Store(s) => store_code(s),
    OverheadError::ConfigInvalid(_) => EXIT_USAGE,
    _ => EXIT_VIOLATION,
});

/// Builds the selected backend. The memory backend gets the given latency
/// profile; others ignore it.
pub fn open_store(selector: &str, faults: FaultProfile) -> Result<Arc<dyn ObjectStore>, CliError> {
    if selector == "memory" {
        return Ok(Arc::new(MemoryStore::with_faults(faults, 0)?));
    }
    if let Some(path) = selector.strip_prefix("fs:") {
        if path.is_empty() {
            return Err(CliError::usage("fs: needs a directory path"));
        }
        return Ok(Arc::new(
            FsStore::new(path).map_err(|e| CliError::usage(format!("cannot open {path}: {e}")))?,
        ));
    }
    if selector.starts_with("remote:") {
        return Err(CliError::usage(
            "remote backends are not built into this binary; use memory or fs:<path>",
        ));
    }
    Err(CliError::usage(format!(
        "unknown store {selector:?}; expected memory, fs:<path>, or remote:<endpoint>"
    )))
}

fn emit(value: &impl Serialize) {
    println!("{}", serde_json::to_string(value).expect("record serializes"));
}

fn millis(ms: f64) -> Latency {
    if ms > 0.0 {
        Latency::Fixed { secs: ms / 1000.0 }
    } else {
        Latency::Zero
    }
}

fn secs(s: f64, what: &str) -> Result<Duration, CliError> {
    Duration::try_from_secs_f64(s).map_err(|_| CliError::usage(format!("{what} must be a non-negative number of seconds")))
}

/// Parses arguments and runs the command. Returns the process exit code.
pub fn run_from_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let namespace = || {
        ObjectKey::new(&cli.namespace).map_err(|e| CliError::usage(format!("bad namespace: {e}")))
    };
    match &cli.command {
        Command::Inspect(a) => {
            let store = open_store(&cli.store, FaultProfile::default())?;
            cmd_inspect(store.as_ref(), &namespace()?, a)
        }
        Command::Produce(a) => {
            let faults = FaultProfile {
                put_latency: millis(a.put_latency_ms),
                get_latency: millis(a.get_latency_ms),
                crash_after_put_probability: 0.0,
            };
            let store = open_store(&cli.store, faults)?;
            cmd_produce(store, &namespace()?, a)
        }
        Command::Consume(a) => {
            let store = open_store(&cli.store, FaultProfile::default())?;
            cmd_consume(store, &namespace()?, a)
        }
        Command::Gc(a) => {
            let store = open_store(&cli.store, FaultProfile::default())?;
            cmd_gc(store.as_ref(), &namespace()?, a)
        }
        Command::Simulate(a) => cmd_simulate(a),
        Command::ValidateModel(a) => cmd_validate_model(a),
    }
}

pub fn cmd_inspect(store: &dyn ObjectStore, namespace: &ObjectKey, args: &InspectArgs) -> Result<(), CliError> {
    let manifest = match args.at_version {
        Some(v) => Some(read_version(store, namespace, v)?),
        None => latest(store, namespace)?,
    };
    let Some(m) = manifest else {
        emit(&json!({"record": "no_manifest", "namespace": namespace.as_str()}));
        eprintln!("no manifest");
        return Ok(());
    };
    let producers: serde_json::Map<String, serde_json::Value> = m
        .producer_states
        .iter()
        .map(|(id, s)| {
            (
                id.clone(),
                json!({"committed_offset": s.committed_offset, "last_commit_version": s.last_commit_version}),
            )
        })
        .collect();
    emit(&json!({
        "record": "manifest",
        "namespace": namespace.as_str(),
        "version": m.version,
        "trim_floor": m.trim_floor,
        "end_step": m.end_step(),
        "tgbs": m.tgb_list.len(),
        "producers": producers,
    }));
    eprintln!(
        "version {} steps [{}, {}) from {} producers",
        m.version,
        m.trim_floor,
        m.end_step(),
        m.producer_states.len()
    );
    if args.dump {
        for d in &m.tgb_list {
            emit(&json!({"record": "tgb", "descriptor": d}));
        }
    }
    if args.check {
        let report = check_history(store, namespace)
            .map_err(|e| CliError::violation(format!("history check failed: {e}")))?
            .ok_or_else(|| CliError::violation("no manifests retained"))?;
        emit(&json!({
            "record": "history_ok",
            "first_version": report.first_version,
            "latest_version": report.latest_version,
            "versions_checked": report.versions_checked,
        }));
        eprintln!("history ok over {} versions", report.versions_checked);
    }
    Ok(())
}

pub fn cmd_produce(store: Arc<dyn ObjectStore>, namespace: &ObjectKey, args: &ProduceArgs) -> Result<(), CliError> {
    if args.producers == 0 {
        return Err(CliError::usage("--producers must be at least 1"));
    }
    let params = args.dac.params();
    params.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let mesh = MeshSpec::new(args.dp, args.cp).map_err(|e| CliError::usage(e.to_string()))?;
    let duration = secs(args.duration, "--duration")?;
    let interval = secs(args.interval_ms / 1000.0, "--interval-ms")?;
    let clock: Arc<dyn Clock> = Arc::new(SystemClock::new());
    let slice_len = args.payload_size / mesh.slice_count();

    let handles: Vec<_> = (0..args.producers)
        .map(|i| {
            let (store, clock, namespace) = (store.clone(), clock.clone(), namespace.clone());
            let id = format!("{}{i:03}", args.producer_prefix);
            let config = ProducerConfig {
                params,
                max_lag: args.max_lag,
                seed: None,
            };
            std::thread::spawn(move || -> Result<_, ProducerError> {
                let mut p = ProducerClient::open(store, clock.clone(), namespace, id.clone(), config)?;
                let mut next_write = clock.now();
                while clock.now() < duration {
                    if clock.now() >= next_write {
                        let seq = p.next_seq();
                        let slices: Vec<Vec<u8>> = (0..mesh.slice_count())
                            .map(|k| {
                                let mut s = format!("{id}:{seq}:{k}:").into_bytes();
                                s.resize(slice_len.max(s.len()), b'.');
                                s
                            })
                            .collect();
                        match p.write_tgb(&slices, mesh) {
                            Ok(_) | Err(ProducerError::LagExceeded { .. }) => {}
                            Err(e) => return Err(e),
                        }
                        next_write += interval;
                    }
                    p.tick(clock.now())?;
                    let wake = p.next_attempt_at().map_or(next_write, |g| g.min(next_write));
                    clock.sleep_until(wake.min(duration));
                }
                p.finalize(clock.now() + Duration::from_secs(60))?;
                Ok(p.stats().clone())
            })
        })
        .collect();

    let (mut written, mut committed, mut attempts, mut conflicts) = (0, 0, 0, 0);
    let mut windows = Vec::new();
    for h in handles {
        let stats = h.join().map_err(|_| CliError::violation("producer thread panicked"))??;
        written += stats.tgbs_written;
        committed += stats.committed_tgbs;
        for s in &stats.samples {
            attempts += 1;
            conflicts += u64::from(s.outcome == SampleOutcome::Conflict);
            windows.push((s.ended_at - s.started_at).as_secs_f64());
        }
    }
    let elapsed = clock.now().as_secs_f64();
    let rate = |x: u64| if attempts == 0 { 0.0 } else { x as f64 / attempts as f64 };
    emit(&json!({
        "record": "produce",
        "producers": args.producers,
        "payload_size": args.payload_size,
        "tgbs_written": written,
        "tgbs_committed": committed,
        "elapsed_secs": elapsed,
        "throughput_tgbs_per_sec": committed as f64 / elapsed,
        "throughput_bytes_per_sec": (committed * args.payload_size as u64) as f64 / elapsed,
        "attempts": attempts,
        "conflicts": conflicts,
        "success_rate": rate(attempts - conflicts),
        "conflict_rate": rate(conflicts),
        "commit_latency_secs": LatencySummary::from_samples(&windows),
    }));
    eprintln!(
        "{committed} TGBs committed by {} producers in {elapsed:.2}s, {attempts} attempts, conflict rate {:.3}",
        args.producers,
        rate(conflicts)
    );

    if args.overhead_commits > 0 {
        let bench_ns = ObjectKey::new(format!("{}-commit-overhead", namespace.as_str()))
            .map_err(|e| CliError::usage(e.to_string()))?;
        let config = OverheadConfig {
            commits: args.overhead_commits,
            producers: args.producers,
            payload_bytes: args.payload_size,
        };
        let report = measure_commit_overhead(store, &bench_ns, &config)?;
        let mut line = serde_json::to_value(&report).expect("report serializes");
        line["record"] = json!("commit_overhead");
        emit(&line);
        eprintln!(
            "per-commit latency {:.3} ms with producer state vs {:.3} ms dummy metadata ({:+.1}%)",
            report.with_state.mean * 1e3,
            report.dummy_metadata.mean * 1e3,
            report.overhead_pct
        );
    }
    Ok(())
}

fn env_u32(name: &str) -> Result<Option<u32>, CliError> {
    match std::env::var(name) {
        Ok(v) => v
            .parse()
            .map(Some)
            .map_err(|_| CliError::usage(format!("{name}={v:?} is not a number"))),
        Err(_) => Ok(None),
    }
}

pub fn cmd_consume(store: Arc<dyn ObjectStore>, namespace: &ObjectKey, args: &ConsumeArgs) -> Result<(), CliError> {
    let world_size = match args.world_size {
        Some(w) => w,
        None => env_u32("WORLD_SIZE")?.unwrap_or(args.dp * args.cp * args.tp * args.pp),
    };
    let ranks: Vec<u32> = if args.all_ranks {
        (0..world_size).collect()
    } else {
        vec![match args.rank {
            Some(r) => r,
            None => env_u32("RANK")?.ok_or_else(|| CliError::usage("give --rank, --all-ranks, or set RANK"))?,
        }]
    };
    let specs = ranks
        .iter()
        .map(|&r| RankSpec::new(r, world_size, args.dp, args.cp, args.tp, args.pp))
        .collect::<Result<Vec<_>, _>>()?;
    let duration = secs(args.duration, "--duration")?;
    let clock: Arc<dyn Clock> = Arc::new(SystemClock::new());
    let config = ConsumerConfig {
        prefetch_depth: args.prefetch_depth,
        ..ConsumerConfig::default()
    };

    let handles: Vec<_> = specs
        .into_iter()
        .map(|spec| {
            let (store, clock, namespace, config) = (store.clone(), clock.clone(), namespace.clone(), config.clone());
            let id = format!("{}{}", args.consumer_prefix, spec.rank);
            let (follow, resume, every) = (args.follow, args.resume, args.checkpoint_every);
            std::thread::spawn(move || -> Result<serde_json::Value, ConsumerError> {
                let mut c = if resume {
                    ConsumerClient::restore_or_open(store, clock.clone(), namespace, id, spec, config)?
                } else {
                    ConsumerClient::open(store, clock.clone(), namespace, id, spec, config)?
                };
                let start_cursor = c.cursor();
                let started = Instant::now();
                let mut latencies = Vec::new();
                let mut batches = 0u64;
                while clock.now() < duration {
                    let t0 = Instant::now();
                    match c.next_batch()? {
                        Poll::Ready(_) => {
                            latencies.push(t0.elapsed().as_secs_f64());
                            batches += 1;
                            if every.is_some_and(|k| k > 0 && batches.is_multiple_of(k) && c.sub_step() == 0) {
                                c.checkpoint()?;
                            }
                        }
                        Poll::NotYetAvailable if follow => clock.sleep(Duration::from_millis(20)),
                        Poll::NotYetAvailable => break,
                    }
                }
                if every.is_some() && c.sub_step() == 0 {
                    c.checkpoint()?;
                }
                let elapsed = started.elapsed().as_secs_f64().max(1e-9);
                let (d, cc) = project(c.spec())?;
                Ok(json!({
                    "record": "consume",
                    "rank": c.spec().rank,
                    "d": d,
                    "c": cc,
                    "batches": batches,
                    "payload_bytes": c.payload_bytes(),
                    "bytes_read": c.bytes_read(),
                    "read_amplification": if c.payload_bytes() == 0 { 0.0 } else { c.bytes_read() as f64 / c.payload_bytes() as f64 },
                    "throughput_bytes_per_sec": c.payload_bytes() as f64 / elapsed,
                    "latency_secs": LatencySummary::from_samples(&latencies),
                    "start_cursor": start_cursor,
                    "end_cursor": c.cursor(),
                }))
            })
        })
        .collect();
    let mut total = 0u64;
    for h in handles {
        let line = h.join().map_err(|_| CliError::violation("consumer thread panicked"))??;
        total += line["batches"].as_u64().unwrap_or(0);
        emit(&line);
    }
    eprintln!("{} ranks consumed {total} batches", ranks.len());
    Ok(())
}

pub fn cmd_gc(store: &dyn ObjectStore, namespace: &ObjectKey, args: &GcArgs) -> Result<(), CliError> {
    let report = reclaim(store, namespace, ReclaimOptions { dry_run: args.dry_run })?;
    let mut line = serde_json::to_value(&report).expect("report serializes");
    line["record"] = json!("gc");
    emit(&line);
    eprintln!(
        "{}trim floor {} -> {}, {} manifests and {} TGBs ({} bytes) reclaimed",
        if args.dry_run { "dry run: " } else { "" },
        report.trim_floor_before,
        report.trim_floor_after,
        report.manifests_deleted,
        report.tgbs_deleted,
        report.bytes_freed
    );
    Ok(())
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let mut file = match &args.config {
        Some(p) => read_toml::<SimFile>(p)?,
        None => SimFile {
            config: SimConfig::default(),
            mode: SimMode::Ablation,
            policies: Vec::new(),
        },
    };
    if let Some(seed) = args.seed {
        file.config.seed = seed;
    }
    if file.policies.is_empty() {
        let mean = match file.config.tgb_interarrival {
            Latency::Fixed { secs } => secs,
            Latency::Exponential { mean } => mean,
            Latency::Uniform { lo, hi } => (lo + hi) / 2.0,
            Latency::Zero => 0.0,
        };
        file.policies = PolicySpec::ablation_set(mean, DacParams::default());
    }
    let reports = match file.mode {
        SimMode::Ablation => ablation(&file.config, &file.policies)?,
        SimMode::Mixed => {
            let per: Vec<PolicySpec> = (0..file.config.n_producers)
                .map(|i| file.policies[i % file.policies.len()])
                .collect();
            vec![simulate(&file.config, &per)?]
        }
    };
    for r in &reports {
        if args.summary {
            print!("{}", r.to_json_lines().lines().next().unwrap_or_default());
            println!();
        } else {
            print!("{}", r.to_json_lines());
        }
        eprintln!(
            "{:>10}: {:9.3} TGB/s, success {:.3}, {} attempts",
            r.policy, r.aggregate.throughput, r.aggregate.success_rate, r.aggregate.attempts
        );
    }
    Ok(())
}

pub fn cmd_validate_model(args: &ValidateArgs) -> Result<(), CliError> {
    let mut config = match &args.config {
        Some(p) => read_toml::<ModelConfig>(p)?,
        None => ModelConfig::default(),
    };
    if let Some(n) = args.producers {
        config.n_producers = n;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    for row in validate_model(&config)? {
        let mut line = serde_json::to_value(&row).expect("row serializes");
        line["record"] = json!("model");
        emit(&line);
        eprintln!(
            "N={} T={:<8} predicted {:.4} overlap {:.4} realized {:.4}",
            row.n, row.t, row.predicted, row.overlap, row.realized
        );
    }
    Ok(())
}
