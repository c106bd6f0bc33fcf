//! Experiment orchestration: wires Client → Cache → Estimator → Server,
//! drives the workload, and turns the logs into metrics and plot data.
//!
//! A run directory holds:
//!
//! ```text
//! run.meta         key=value description of the run
//! client.csv       client rows (ok / stale / error)
//! cache.csv        cache rows (hit / miss)
//! estimator.csv    estimator rows (estimate, ttl)
//! timeseries.csv   per-window hit fraction, error fraction, mean TTL
//! summary.csv      headline metrics
//! ```

mod report;
mod suite;
mod trace;

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::cache::{Cache, CacheStats};
use crate::estimator::{Blacklist, Estimator, EstimatorConfig, MethodPattern};
use crate::eventlog::{EventLog, LogError, LogRecord};
use crate::time::Instant;
use crate::transport::{
    serve, Clock, RealClock, Service, Simulation, TcpLink, VirtualLink,
};
use crate::ttl::{AlgorithmConfig, DEFAULT_MAX_TTL_SECS};
use crate::workload::{
    run_query_actor, run_update_actor, LedgerCounts, MetricError, PhaseShift, StalenessLedger,
    ValueServer, WorkloadConfig, INITIAL_VALUE, SET_VALUE,
};

pub use report::{
    aggregate_logs, aggregate_records, emit_plot_data, find_runs, read_run, scatter_csv, scatter_rows,
    summary_csv, timeseries_csv, timeseries_rows,
    write_scatter, LogMetrics, PlotKind, ScatterRow, TimeseriesFilter, Window,
};
pub use suite::{run_dir, run_suite, SuiteOutcome, SuiteSpec};
pub use trace::{run_trace, Trace, TraceEvent, TraceStep};

pub const DEFAULT_WINDOW: Duration = Duration::from_secs(15);

/// The predefined configuration matrix.
pub const CONFIG_IDS: [&str; 12] = [
    "static-0",
    "static-1",
    "static-10",
    "static-30",
    "dynamic-adaptive-0.1",
    "dynamic-adaptive-0.25",
    "dynamic-adaptive-0.5",
    "dynamic-updaterisk-0.1",
    "dynamic-updaterisk-0.25",
    "dynamic-updaterisk-0.5",
    "dynamic-updaterisk-0.75",
    "dynamic-updaterisk-0.90",
];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("{file}: {source}")]
    Malformed { file: PathBuf, source: LogError },
    #[error("component startup failed: {0}")]
    Startup(String),
    #[error("virtual run stalled with {0} blocked task(s)")]
    Stalled(usize),
    #[error("log/counter mismatch: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("nothing to emit")]
    Empty,
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error: 2 for bad configuration, else 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::BadConfig(_) => 2,
            _ => 1,
        }
    }
}

/// Maps a config ID such as `dynamic-updaterisk-0.1` to its algorithm.
pub fn algorithm_for(config_id: &str) -> Result<AlgorithmConfig, HarnessError> {
    let bad = |why: &str| HarnessError::BadConfig(format!("config id {config_id:?}: {why}"));
    let parse_real = |s: &str| {
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| bad("parameter is not a number"))
    };
    let alg = if let Some(beta) = config_id.strip_prefix("static-") {
        AlgorithmConfig::static_ttl(beta.parse().map_err(|_| bad("beta must be whole seconds"))?)
    } else if let Some(alpha) = config_id.strip_prefix("dynamic-adaptive-") {
        AlgorithmConfig::adaptive(parse_real(alpha)?).map_err(|e| bad(&e.to_string()))?
    } else if let Some(rho) = config_id.strip_prefix("dynamic-updaterisk-") {
        AlgorithmConfig::update_risk(parse_real(rho)?, 2).map_err(|e| bad(&e.to_string()))?
    } else {
        return Err(bad("unknown algorithm family"));
    };
    Ok(alg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClockMode {
    #[default]
    Virtual,
    Real,
}

impl fmt::Display for ClockMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClockMode::Virtual => "virtual",
            ClockMode::Real => "real",
        })
    }
}

impl std::str::FromStr for ClockMode {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "virtual" => Ok(ClockMode::Virtual),
            "real" => Ok(ClockMode::Real),
            _ => Err(HarnessError::BadConfig(format!("unknown clock mode {s:?}"))),
        }
    }
}

/// Where the update actor sends `SetValue`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpdateRoute {
    /// Straight to the server.
    #[default]
    Direct,
    /// Through the cache and estimator, which pass it through uncached.
    ViaCache,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub config_id: String,
    pub algorithm: AlgorithmConfig,
    pub workload: WorkloadConfig,
    pub clock_mode: ClockMode,
    /// Run directory to create; `None` keeps everything in memory.
    pub output_dir: Option<PathBuf>,
    pub update_route: UpdateRoute,
    pub window: Duration,
    /// One-way latency of every virtual link.
    pub link_latency: Duration,
    pub max_ttl: Option<u32>,
}

impl ExperimentConfig {
    pub fn new(config_id: &str, workload: WorkloadConfig) -> Result<Self, HarnessError> {
        workload
            .validate()
            .map_err(|e| HarnessError::BadConfig(e.to_string()))?;
        Ok(Self {
            config_id: config_id.to_owned(),
            algorithm: algorithm_for(config_id)?,
            workload,
            clock_mode: ClockMode::Virtual,
            output_dir: None,
            update_route: UpdateRoute::Direct,
            window: DEFAULT_WINDOW,
            link_latency: Duration::ZERO,
            max_ttl: Some(DEFAULT_MAX_TTL_SECS),
        })
    }

    pub fn with_output_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.output_dir = Some(dir.into());
        self
    }

    pub fn estimator_config(&self) -> EstimatorConfig {
        let mut cfg = EstimatorConfig::new(self.algorithm).with_blacklist(Blacklist::new(vec![
            MethodPattern::Exact(SET_VALUE.to_owned()),
        ]));
        cfg.max_ttl = self.max_ttl;
        cfg
    }

    fn meta(&self, start: Instant) -> String {
        let w = &self.workload;
        format!(
            "config_id={}\nparameter={}\nphase_shift={}\nseed={}\nduration_s={}\nperiod_s={}\nwindow_s={}\nclock={}\nstart_ns={}\n",
            self.config_id,
            self.algorithm.parameter(),
            w.phase_shift,
            w.seed,
            w.duration.as_secs_f64(),
            w.query.period.as_secs_f64(),
            self.window.as_secs_f64(),
            self.clock_mode,
            start.as_nanos(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub config_id: String,
    pub parameter: f64,
    pub phase_shift: PhaseShift,
    pub seed: u64,
    pub error_fraction: f64,
    pub traffic_reduction: f64,
    pub metrics: LogMetrics,
    pub windows: Vec<Window>,
}

impl ExperimentResult {
    pub fn total_queries(&self) -> u64 {
        self.metrics.total_queries
    }

    pub fn total_updates(&self) -> u64 {
        self.metrics.updates_ok
    }
}

struct RunLogs {
    client: EventLog,
    cache: EventLog,
    estimator: EventLog,
}

impl RunLogs {
    fn new() -> Self {
        Self {
            client: EventLog::in_memory(),
            cache: EventLog::in_memory(),
            estimator: EventLog::in_memory(),
        }
    }
}

struct RunOutput {
    start: Instant,
    counts: LedgerCounts,
    stats: CacheStats,
}

/// Runs one experiment to completion.
///
/// With an output directory, files are staged in a sibling temp directory
/// and renamed into place only once everything has been written, so a
/// failed run leaves no partial result behind.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    if cfg.window.is_zero() {
        return Err(HarnessError::BadConfig("window must be positive".into()));
    }
    let logs = RunLogs::new();
    let out = match cfg.clock_mode {
        ClockMode::Virtual => run_virtual(cfg, &logs)?,
        ClockMode::Real => run_real(cfg, &logs)?,
    };

    let client = logs.client.records();
    let cache = logs.cache.records();
    let estimator = logs.estimator.records();
    let metrics = aggregate_records(&client, &cache);
    check_agreement(&metrics, &out.counts, &out.stats)?;

    let windows = report::windows(
        &client,
        &cache,
        &estimator,
        out.start,
        cfg.workload.duration,
        cfg.window,
    );
    let result = ExperimentResult {
        config_id: cfg.config_id.clone(),
        parameter: cfg.algorithm.parameter(),
        phase_shift: cfg.workload.phase_shift,
        seed: cfg.workload.seed,
        error_fraction: metrics.error_fraction()?,
        traffic_reduction: metrics.traffic_reduction()?,
        metrics,
        windows,
    };

    if let Some(dir) = &cfg.output_dir {
        write_run_dir(dir, cfg, &out, &client, &cache, &estimator, &result)?;
    }
    Ok(result)
}

fn check_agreement(
    m: &LogMetrics,
    counts: &LedgerCounts,
    stats: &CacheStats,
) -> Result<(), HarnessError> {
    let get = stats.method(crate::workload::GET_VALUE);
    let pairs = [
        ("total queries", m.total_queries, counts.total_queries),
        ("stale queries", m.stale_queries, counts.stale_queries),
        ("errored queries", m.errored_queries, counts.errored_queries),
        ("applied updates", m.updates_ok, counts.updates_applied),
        ("failed updates", m.updates_failed, counts.updates_failed),
        ("cache hits", m.cache_hits, get.hits),
        ("cache misses", m.cache_misses, get.misses),
    ];
    for (what, from_logs, from_counters) in pairs {
        if from_logs != from_counters {
            return Err(HarnessError::Inconsistent(format!(
                "{what}: logs say {from_logs}, counters say {from_counters}"
            )));
        }
    }
    Ok(())
}

fn run_virtual(cfg: &ExperimentConfig, logs: &RunLogs) -> Result<RunOutput, HarnessError> {
    let sim = Simulation::new();
    let vclock = sim.clock();
    let clock: Arc<dyn Clock> = Arc::new(vclock.clone());
    let latency = cfg.link_latency;
    let link = |target: Arc<dyn Service>| -> Arc<dyn Service> {
        Arc::new(VirtualLink::new(target, vclock.clone(), latency))
    };

    let server = Arc::new(ValueServer::default());
    let estimator = Arc::new(Estimator::new(
        cfg.estimator_config(),
        link(server.clone()),
        clock.clone(),
        Some(logs.estimator.clone()),
    ));
    let cache = Arc::new(Cache::new(
        link(estimator.clone()),
        clock.clone(),
        Some(logs.cache.clone()),
    ));
    let ledger = Arc::new(StalenessLedger::new(INITIAL_VALUE.to_vec()));
    let query_link = link(cache.clone());
    let update_link = match cfg.update_route {
        UpdateRoute::Direct => link(server.clone()),
        UpdateRoute::ViaCache => query_link.clone(),
    };

    let start = sim.now();
    let end = start.saturating_add(cfg.workload.duration);
    sim.spawn(run_query_actor(
        cfg.workload.clone(),
        clock.clone(),
        query_link,
        ledger.clone(),
        Some(logs.client.clone()),
    ));
    sim.spawn(run_update_actor(
        cfg.workload.clone(),
        clock.clone(),
        update_link,
        ledger.clone(),
        Some(logs.client.clone()),
    ));
    let est = estimator.clone();
    sim.spawn(async move { est.run_housekeeping(Some(end)).await });

    let unfinished = sim.run();
    if unfinished > 0 {
        return Err(HarnessError::Stalled(unfinished));
    }
    cache.expire_scan(sim.now());
    Ok(RunOutput {
        start,
        counts: ledger.counts(),
        stats: cache.snapshot_stats(),
    })
}

const TCP_TIMEOUT: Duration = Duration::from_secs(5);

fn run_real(cfg: &ExperimentConfig, logs: &RunLogs) -> Result<RunOutput, HarnessError> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| HarnessError::Startup(e.to_string()))?;
    rt.block_on(async {
        let startup = |e: std::io::Error| HarnessError::Startup(e.to_string());
        let loopback = "127.0.0.1:0".parse().expect("loopback address");
        let clock: Arc<dyn Clock> = Arc::new(RealClock::new());

        let server = Arc::new(ValueServer::default());
        let server_srv = serve(loopback, server.clone()).await.map_err(startup)?;
        let to_server: Arc<dyn Service> =
            Arc::new(TcpLink::new(server_srv.local_addr(), TCP_TIMEOUT));
        let estimator = Arc::new(Estimator::new(
            cfg.estimator_config(),
            to_server,
            clock.clone(),
            Some(logs.estimator.clone()),
        ));
        let est_srv = serve(loopback, estimator.clone()).await.map_err(startup)?;
        let cache = Arc::new(Cache::new(
            Arc::new(TcpLink::new(est_srv.local_addr(), TCP_TIMEOUT)),
            clock.clone(),
            Some(logs.cache.clone()),
        ));
        let cache_srv = serve(loopback, cache.clone()).await.map_err(startup)?;

        let ledger = Arc::new(StalenessLedger::new(INITIAL_VALUE.to_vec()));
        let query_link: Arc<dyn Service> =
            Arc::new(TcpLink::new(cache_srv.local_addr(), TCP_TIMEOUT));
        let update_addr = match cfg.update_route {
            UpdateRoute::Direct => server_srv.local_addr(),
            UpdateRoute::ViaCache => cache_srv.local_addr(),
        };
        let update_link: Arc<dyn Service> = Arc::new(TcpLink::new(update_addr, TCP_TIMEOUT));

        let start = clock.now();
        let end = start.saturating_add(cfg.workload.duration);
        let query = tokio::spawn(run_query_actor(
            cfg.workload.clone(),
            clock.clone(),
            query_link,
            ledger.clone(),
            Some(logs.client.clone()),
        ));
        let update = tokio::spawn(run_update_actor(
            cfg.workload.clone(),
            clock.clone(),
            update_link,
            ledger.clone(),
            Some(logs.client.clone()),
        ));
        let est = estimator.clone();
        let housekeeping = tokio::spawn(async move { est.run_housekeeping(Some(end)).await });
        for task in [query, update, housekeeping] {
            task.await
                .map_err(|e| HarnessError::Startup(format!("workload task failed: {e}")))?;
        }

        cache_srv.shutdown().await;
        est_srv.shutdown().await;
        server_srv.shutdown().await;
        cache.expire_scan(clock.now());
        Ok(RunOutput {
            start,
            counts: ledger.counts(),
            stats: cache.snapshot_stats(),
        })
    })
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), HarnessError> {
    std::fs::write(path, contents).map_err(|e| HarnessError::io(path, e))
}

fn log_bytes(records: &[LogRecord]) -> Vec<u8> {
    let mut buf = Vec::new();
    crate::eventlog::write_records(&mut buf, records).expect("writing to a Vec cannot fail");
    buf
}

fn write_run_dir(
    dir: &Path,
    cfg: &ExperimentConfig,
    out: &RunOutput,
    client: &[LogRecord],
    cache: &[LogRecord],
    estimator: &[LogRecord],
    result: &ExperimentResult,
) -> Result<(), HarnessError> {
    let parent = dir
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    let name = dir
        .file_name()
        .ok_or_else(|| HarnessError::BadConfig(format!("bad output dir {}", dir.display())))?;
    let mut staging_name = std::ffi::OsString::from(".");
    staging_name.push(name);
    staging_name.push(".partial");
    let staging = parent.join(staging_name);

    let stage = || -> Result<(), HarnessError> {
        if staging.exists() {
            std::fs::remove_dir_all(&staging).map_err(|e| HarnessError::io(&staging, e))?;
        }
        std::fs::create_dir(&staging).map_err(|e| HarnessError::io(&staging, e))?;
        write_file(&staging.join("run.meta"), cfg.meta(out.start).as_bytes())?;
        write_file(&staging.join("client.csv"), &log_bytes(client))?;
        write_file(&staging.join("cache.csv"), &log_bytes(cache))?;
        write_file(&staging.join("estimator.csv"), &log_bytes(estimator))?;
        write_file(
            &staging.join("timeseries.csv"),
            report::timeseries_csv(&result.windows).as_bytes(),
        )?;
        write_file(
            &staging.join("summary.csv"),
            report::summary_csv(std::slice::from_ref(result)).as_bytes(),
        )?;
        if dir.exists() {
            std::fs::remove_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        }
        std::fs::rename(&staging, dir).map_err(|e| HarnessError::io(dir, e))
    };
    stage().inspect_err(|_| {
        let _ = std::fs::remove_dir_all(&staging);
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predefined_ids_parse() {
        for id in CONFIG_IDS {
            algorithm_for(id).unwrap();
        }
        assert_eq!(
            algorithm_for("dynamic-updaterisk-0.90").unwrap(),
            AlgorithmConfig::update_risk(0.9, 2).unwrap()
        );
        assert_eq!(algorithm_for("static-10").unwrap(), AlgorithmConfig::static_ttl(10));
    }

    #[test]
    fn bad_ids_are_config_errors() {
        for id in ["static-x", "dynamic-adaptive--1", "dynamic-updaterisk-1.0", "lru-5"] {
            let err = algorithm_for(id).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{id}");
        }
    }

    fn short(id: &str, phase: PhaseShift, seed: u64) -> ExperimentConfig {
        let wl = WorkloadConfig::standard(Duration::from_secs(120), phase, seed);
        ExperimentConfig::new(id, wl).unwrap()
    }

    #[test]
    fn static_zero_is_exactly_neutral() {
        let r = run_experiment(&short("static-0", PhaseShift::Pi, 1)).unwrap();
        assert_eq!(r.error_fraction, 0.0);
        assert_eq!(r.traffic_reduction, 0.0);
        assert!(r.total_queries() > 0);
        assert_eq!(r.windows.len(), 8);
    }

    #[test]
    fn routing_updates_through_the_cache_is_equivalent() {
        let mut direct = short("static-1", PhaseShift::Pi4, 2);
        let r1 = run_experiment(&direct).unwrap();
        direct.update_route = UpdateRoute::ViaCache;
        let r2 = run_experiment(&direct).unwrap();
        assert_eq!(r1.metrics, r2.metrics);
    }

    #[test]
    fn latency_does_not_break_agreement() {
        let mut cfg = short("dynamic-adaptive-0.5", PhaseShift::Zero, 3);
        cfg.link_latency = Duration::from_millis(3);
        let r = run_experiment(&cfg).unwrap();
        assert!(r.metrics.total_queries > 0);
    }

    #[test]
    fn run_dir_is_complete_and_reaggregates() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("run");
        let r = run_experiment(&short("static-10", PhaseShift::Pi2, 1).with_output_dir(&dir)).unwrap();
        for f in ["run.meta", "client.csv", "cache.csv", "estimator.csv", "timeseries.csv", "summary.csv"] {
            assert!(dir.join(f).is_file(), "{f}");
        }
        let again = aggregate_logs(&dir).unwrap();
        assert_eq!(again, r);
        assert!(!tmp.path().join(".run.partial").exists());
    }
}
