//! Metrics from logs, per-window time series, and CSV output.

use std::collections::HashMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Duration;

use super::{ExperimentResult, HarnessError, CONFIG_IDS};
use crate::eventlog::{read_records, Component, LogRecord, Outcome};
use crate::time::Instant;
use crate::workload::{ratio, MetricError, PhaseShift, GET_VALUE, SET_VALUE};

/// Counts recomputed purely from client and cache logs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LogMetrics {
    pub total_queries: u64,
    pub stale_queries: u64,
    pub errored_queries: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub updates_ok: u64,
    pub updates_failed: u64,
}

impl LogMetrics {
    pub fn error_fraction(&self) -> Result<f64, MetricError> {
        ratio(self.stale_queries, self.total_queries)
    }

    pub fn traffic_reduction(&self) -> Result<f64, MetricError> {
        ratio(self.cache_hits, self.cache_hits + self.cache_misses)
    }
}

pub fn aggregate_records(client: &[LogRecord], cache: &[LogRecord]) -> LogMetrics {
    let mut m = LogMetrics::default();
    for r in client.iter().chain(cache) {
        match (r.component, r.method.as_str(), r.outcome) {
            (Component::Client, GET_VALUE, Outcome::Ok) => m.total_queries += 1,
            (Component::Client, GET_VALUE, Outcome::Stale) => {
                m.total_queries += 1;
                m.stale_queries += 1;
            }
            (Component::Client, GET_VALUE, Outcome::Error) => m.errored_queries += 1,
            (Component::Client, SET_VALUE, Outcome::Ok) => m.updates_ok += 1,
            (Component::Client, SET_VALUE, Outcome::Error) => m.updates_failed += 1,
            (Component::Cache, GET_VALUE, Outcome::Hit) => m.cache_hits += 1,
            (Component::Cache, GET_VALUE, Outcome::Miss) => m.cache_misses += 1,
            _ => {}
        }
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub start_s: f64,
    pub hit_fraction: f64,
    pub error_fraction: f64,
    pub mean_ttl: f64,
}

#[derive(Default, Clone, Copy)]
struct Bucket {
    hits: u64,
    lookups: u64,
    stale: u64,
    answered: u64,
    ttl_sum: u64,
    estimates: u64,
}

fn frac(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Fixed windows covering `[0, duration)`; an empty window reports zeros.
pub(super) fn windows(
    client: &[LogRecord],
    cache: &[LogRecord],
    estimator: &[LogRecord],
    start: Instant,
    duration: Duration,
    window: Duration,
) -> Vec<Window> {
    let w = window.as_nanos();
    let n = duration.as_nanos().div_ceil(w).max(1) as usize;
    let mut buckets = vec![Bucket::default(); n];
    let index = |at: Instant| {
        let i = at.saturating_duration_since(start).as_nanos() / w;
        (i as usize).min(n - 1)
    };
    for r in client.iter().chain(cache).chain(estimator) {
        if r.method != GET_VALUE {
            continue;
        }
        let b = &mut buckets[index(r.at)];
        match (r.component, r.outcome) {
            (Component::Cache, Outcome::Hit) => {
                b.hits += 1;
                b.lookups += 1;
            }
            (Component::Cache, Outcome::Miss) => b.lookups += 1,
            (Component::Client, Outcome::Ok) => b.answered += 1,
            (Component::Client, Outcome::Stale) => {
                b.stale += 1;
                b.answered += 1;
            }
            (Component::Estimator, Outcome::Estimate) => {
                b.ttl_sum += u64::from(r.value.unwrap_or(0));
                b.estimates += 1;
            }
            _ => {}
        }
    }
    buckets
        .iter()
        .enumerate()
        .map(|(i, b)| Window {
            start_s: (i as u128 * w) as f64 / 1e9,
            hit_fraction: frac(b.hits, b.lookups),
            error_fraction: frac(b.stale, b.answered),
            mean_ttl: frac(b.ttl_sum, b.estimates),
        })
        .collect()
}

pub fn timeseries_csv(windows: &[Window]) -> String {
    let mut out = String::from("window_start_s,hit_fraction,error_fraction,mean_ttl\n");
    for w in windows {
        out.push_str(&format!(
            "{:.6},{:.6},{:.6},{:.6}\n",
            w.start_s, w.hit_fraction, w.error_fraction, w.mean_ttl
        ));
    }
    out
}

pub fn summary_csv(results: &[ExperimentResult]) -> String {
    let mut out = String::from(
        "config_id,parameter,phase_shift,seed,error_fraction,traffic_reduction,total_queries,stale_queries,errored_queries,cache_hits,cache_misses,total_updates,failed_updates\n",
    );
    for r in results {
        let m = &r.metrics;
        out.push_str(&format!(
            "{},{},{},{},{:.6},{:.6},{},{},{},{},{},{},{}\n",
            r.config_id,
            r.parameter,
            r.phase_shift,
            r.seed,
            r.error_fraction,
            r.traffic_reduction,
            m.total_queries,
            m.stale_queries,
            m.errored_queries,
            m.cache_hits,
            m.cache_misses,
            m.updates_ok,
            m.updates_failed,
        ));
    }
    out
}

fn read_log(path: &Path) -> Result<Vec<LogRecord>, HarnessError> {
    let f = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    read_records(BufReader::new(f)).map_err(|source| HarnessError::Malformed {
        file: path.to_owned(),
        source,
    })
}

fn read_meta(path: &Path) -> Result<HashMap<String, String>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(text
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_owned(), v.trim().to_owned()))
        .collect())
}

/// Recomputes a run's result from the files in its run directory.
pub fn aggregate_logs(dir: &Path) -> Result<ExperimentResult, HarnessError> {
    let meta_path = dir.join("run.meta");
    let meta = read_meta(&meta_path)?;
    let field = |k: &str| {
        meta.get(k).map(String::as_str).ok_or_else(|| {
            HarnessError::BadConfig(format!("{}: missing {k}", meta_path.display()))
        })
    };
    let bad = |k: &str| HarnessError::BadConfig(format!("{}: bad {k}", meta_path.display()));
    let secs = |k: &str| -> Result<Duration, HarnessError> {
        field(k)?
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite() && *v > 0.0)
            .map(Duration::from_secs_f64)
            .ok_or_else(|| bad(k))
    };

    let config_id = field("config_id")?.to_owned();
    let parameter = field("parameter")?.parse().map_err(|_| bad("parameter"))?;
    let phase_shift: PhaseShift = field("phase_shift")?.parse().map_err(|_| bad("phase_shift"))?;
    let seed = field("seed")?.parse().map_err(|_| bad("seed"))?;
    let start = Instant::from_nanos(field("start_ns")?.parse().map_err(|_| bad("start_ns"))?);
    let duration = secs("duration_s")?;
    let window = secs("window_s")?;

    let client = read_log(&dir.join("client.csv"))?;
    let cache = read_log(&dir.join("cache.csv"))?;
    let estimator = read_log(&dir.join("estimator.csv"))?;
    let metrics = aggregate_records(&client, &cache);
    Ok(ExperimentResult {
        config_id,
        parameter,
        phase_shift,
        seed,
        error_fraction: metrics.error_fraction()?,
        traffic_reduction: metrics.traffic_reduction()?,
        metrics,
        windows: windows(&client, &cache, &estimator, start, duration, window),
    })
}

/// Every run directory (one holding `run.meta`) under `root`, sorted.
pub fn find_runs(root: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_owned()];
    while let Some(dir) = stack.pop() {
        if dir.join("run.meta").is_file() {
            out.push(dir);
            continue;
        }
        let entries = std::fs::read_dir(&dir).map_err(|e| HarnessError::io(&dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| HarnessError::io(&dir, e))?;
            let hidden = entry.file_name().to_string_lossy().starts_with('.');
            if entry.path().is_dir() && !hidden {
                stack.push(entry.path());
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Loads every run under `root`.
pub fn read_run(root: &Path) -> Result<Vec<ExperimentResult>, HarnessError> {
    find_runs(root)?.iter().map(|d| aggregate_logs(d)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterRow {
    pub config_id: String,
    pub parameter: f64,
    pub phase_shift: PhaseShift,
    pub traffic_reduction: f64,
    pub error_fraction: f64,
    pub runs: usize,
}

fn config_rank(id: &str) -> usize {
    CONFIG_IDS
        .iter()
        .position(|c| *c == id)
        .unwrap_or(CONFIG_IDS.len())
}

/// Means over seeds, one row per (config, phase), in matrix order.
pub fn scatter_rows(results: &[ExperimentResult]) -> Vec<ScatterRow> {
    let mut groups: Vec<(String, PhaseShift, f64, Vec<&ExperimentResult>)> = Vec::new();
    for r in results {
        match groups
            .iter_mut()
            .find(|g| g.0 == r.config_id && g.1 == r.phase_shift)
        {
            Some(g) => g.3.push(r),
            None => groups.push((r.config_id.clone(), r.phase_shift, r.parameter, vec![r])),
        }
    }
    groups.sort_by(|a, b| {
        (config_rank(&a.0), &a.0, a.1).cmp(&(config_rank(&b.0), &b.0, b.1))
    });
    groups
        .into_iter()
        .map(|(config_id, phase_shift, parameter, mut runs)| {
            runs.sort_by_key(|r| r.seed);
            let n = runs.len() as f64;
            ScatterRow {
                config_id,
                parameter,
                phase_shift,
                traffic_reduction: runs.iter().map(|r| r.traffic_reduction).sum::<f64>() / n,
                error_fraction: runs.iter().map(|r| r.error_fraction).sum::<f64>() / n,
                runs: runs.len(),
            }
        })
        .collect()
}

pub fn scatter_csv(rows: &[ScatterRow]) -> String {
    let mut out = String::from("config_id,parameter,phase_shift,traffic_reduction,error_fraction\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6}\n",
            r.config_id, r.parameter, r.phase_shift, r.traffic_reduction, r.error_fraction
        ));
    }
    out
}

pub fn write_scatter(path: &Path, rows: &[ScatterRow]) -> Result<(), HarnessError> {
    if rows.is_empty() {
        return Err(HarnessError::Empty);
    }
    std::fs::write(path, scatter_csv(rows)).map_err(|e| HarnessError::io(path, e))
}

#[derive(Debug, Clone, Default)]
pub struct TimeseriesFilter {
    pub config_id: Option<String>,
    pub phase_shift: Option<PhaseShift>,
}

impl TimeseriesFilter {
    fn accepts(&self, r: &ExperimentResult) -> bool {
        self.config_id.as_ref().is_none_or(|c| *c == r.config_id)
            && self.phase_shift.is_none_or(|p| p == r.phase_shift)
    }
}

/// Window-by-window mean over every matching run.
pub fn timeseries_rows(results: &[ExperimentResult], filter: &TimeseriesFilter) -> Vec<Window> {
    let runs: Vec<&ExperimentResult> = results.iter().filter(|r| filter.accepts(r)).collect();
    let Some(n) = runs.iter().map(|r| r.windows.len()).max() else {
        return Vec::new();
    };
    (0..n)
        .map(|i| {
            let ws: Vec<&Window> = runs.iter().filter_map(|r| r.windows.get(i)).collect();
            let k = ws.len() as f64;
            Window {
                start_s: ws[0].start_s,
                hit_fraction: ws.iter().map(|w| w.hit_fraction).sum::<f64>() / k,
                error_fraction: ws.iter().map(|w| w.error_fraction).sum::<f64>() / k,
                mean_ttl: ws.iter().map(|w| w.mean_ttl).sum::<f64>() / k,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Scatter,
    Timeseries,
}

impl std::str::FromStr for PlotKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scatter" => Ok(PlotKind::Scatter),
            "timeseries" => Ok(PlotKind::Timeseries),
            _ => Err(HarnessError::BadConfig(format!("unknown plot kind {s:?}"))),
        }
    }
}

/// Writes plot data for `results`. Nothing is written when there is no data.
pub fn emit_plot_data(
    results: &[ExperimentResult],
    kind: PlotKind,
    filter: &TimeseriesFilter,
    out: &Path,
) -> Result<usize, HarnessError> {
    match kind {
        PlotKind::Scatter => {
            let rows = scatter_rows(results);
            write_scatter(out, &rows)?;
            Ok(rows.len())
        }
        PlotKind::Timeseries => {
            let rows = timeseries_rows(results, filter);
            if rows.is_empty() {
                return Err(HarnessError::Empty);
            }
            std::fs::write(out, timeseries_csv(&rows)).map_err(|e| HarnessError::io(out, e))?;
            Ok(rows.len())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(text: &str) -> Vec<LogRecord> {
        read_records(text.as_bytes()).unwrap()
    }

    #[test]
    fn hand_written_log_reduction() {
        let cache = rows(
            "1,cache,GetValue,hit,\n2,cache,GetValue,miss,\n3,cache,GetValue,miss,\n3,cache,GetValue,hit,\n4,cache,GetValue,miss,\n",
        );
        let est = rows("2,estimator,GetValue,estimate,1\n");
        let mut all = cache.clone();
        all.extend(est);
        let m = aggregate_records(&[], &all);
        assert_eq!((m.cache_hits, m.cache_misses), (2, 3));
        assert_eq!(m.traffic_reduction(), Ok(0.4));
    }

    #[test]
    fn windows_cover_duration_without_gaps() {
        let ws = windows(&[], &[], &[], Instant::ZERO, Duration::from_secs(1800), Duration::from_secs(15));
        assert_eq!(ws.len(), 120);
        assert_eq!(ws[1].start_s, 15.0);
        assert!(ws.iter().all(|w| w.hit_fraction == 0.0 && w.mean_ttl == 0.0));
    }

    #[test]
    fn window_values() {
        let s = 1_000_000_000u64;
        let client = rows(&format!("{},client,GetValue,ok,\n{},client,GetValue,stale,\n", s, 16 * s));
        let cache = rows(&format!("{},cache,GetValue,hit,\n{},cache,GetValue,miss,\n", s, 2 * s));
        let est = rows(&format!("{},estimator,GetValue,estimate,4\n{},estimator,GetValue,estimate,1\n", 2 * s, 3 * s));
        let ws = windows(&client, &cache, &est, Instant::ZERO, Duration::from_secs(30), Duration::from_secs(15));
        assert_eq!(ws[0].hit_fraction, 0.5);
        assert_eq!(ws[0].error_fraction, 0.0);
        assert_eq!(ws[0].mean_ttl, 2.5);
        assert_eq!(ws[1].error_fraction, 1.0);
    }

    #[test]
    fn empty_results_write_nothing() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("scatter.csv");
        assert!(matches!(
            emit_plot_data(&[], PlotKind::Scatter, &TimeseriesFilter::default(), &out),
            Err(HarnessError::Empty)
        ));
        assert!(!out.exists());
    }
}
