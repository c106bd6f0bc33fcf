//! Timestamped CSV observability rows.
//!
//! Every component emits rows of the form
//! `<nanos>,<component>,<method>,<outcome>,<value>`:
//!
//! ```text
//! 1500000000,estimator,GetValue,estimate,5
//! 1500000000,cache,GetValue,hit,
//! 1500000000,client,GetValue,stale,
//! ```
//!
//! The value column is only populated for estimator rows.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;
use std::sync::Arc;

use parking_lot::Mutex;
use thiserror::Error;

use crate::time::Instant;
use crate::transport::frame::validate_method;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Component {
    Client,
    Cache,
    Estimator,
}

impl Component {
    pub fn as_str(self) -> &'static str {
        match self {
            Component::Client => "client",
            Component::Cache => "cache",
            Component::Estimator => "estimator",
        }
    }
}

impl FromStr for Component {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "client" => Ok(Component::Client),
            "cache" => Ok(Component::Cache),
            "estimator" => Ok(Component::Estimator),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Estimate,
    Hit,
    Miss,
    Ok,
    Stale,
    Error,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Estimate => "estimate",
            Outcome::Hit => "hit",
            Outcome::Miss => "miss",
            Outcome::Ok => "ok",
            Outcome::Stale => "stale",
            Outcome::Error => "error",
        }
    }

    fn belongs_to(self, c: Component) -> bool {
        matches!(
            (c, self),
            (Component::Estimator, Outcome::Estimate)
                | (Component::Cache, Outcome::Hit | Outcome::Miss)
                | (Component::Client, Outcome::Ok | Outcome::Stale | Outcome::Error)
        )
    }
}

impl FromStr for Outcome {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Ok(match s {
            "estimate" => Outcome::Estimate,
            "hit" => Outcome::Hit,
            "miss" => Outcome::Miss,
            "ok" => Outcome::Ok,
            "stale" => Outcome::Stale,
            "error" => Outcome::Error,
            _ => return Err(()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogRecord {
    pub at: Instant,
    pub component: Component,
    pub method: String,
    pub outcome: Outcome,
    /// TTL seconds on estimator rows, absent otherwise.
    pub value: Option<u32>,
}

impl LogRecord {
    pub fn estimate(at: Instant, method: &str, ttl: u32) -> Self {
        Self {
            at,
            component: Component::Estimator,
            method: method.to_owned(),
            outcome: Outcome::Estimate,
            value: Some(ttl),
        }
    }

    pub fn cache(at: Instant, method: &str, hit: bool) -> Self {
        Self {
            at,
            component: Component::Cache,
            method: method.to_owned(),
            outcome: if hit { Outcome::Hit } else { Outcome::Miss },
            value: None,
        }
    }

    pub fn client(at: Instant, method: &str, outcome: Outcome) -> Self {
        Self {
            at,
            component: Component::Client,
            method: method.to_owned(),
            outcome,
            value: None,
        }
    }

    fn check(&self) -> Result<(), &'static str> {
        validate_method(&self.method, true)?;
        if !self.outcome.belongs_to(self.component) {
            return Err("outcome does not belong to component");
        }
        if (self.component == Component::Estimator) != self.value.is_some() {
            return Err("value column only on estimator rows");
        }
        Ok(())
    }

    /// Parses one row, without the trailing newline.
    pub fn parse_row(line: &str) -> Result<Self, &'static str> {
        let fields: Vec<&str> = line.split(',').collect();
        let [nanos, component, method, outcome, value] = fields[..] else {
            return Err("expected 5 fields");
        };
        if nanos.is_empty() || !nanos.bytes().all(|b| b.is_ascii_digit()) {
            return Err("bad timestamp");
        }
        let at = Instant::from_nanos(nanos.parse().map_err(|_| "bad timestamp")?);
        let component = component.parse().map_err(|_| "unknown component")?;
        let outcome = outcome.parse().map_err(|_| "unknown outcome")?;
        let value = if value.is_empty() {
            None
        } else if value.bytes().all(|b| b.is_ascii_digit()) {
            Some(value.parse().map_err(|_| "bad value")?)
        } else {
            return Err("bad value");
        };
        let rec = LogRecord {
            at,
            component,
            method: method.to_owned(),
            outcome,
            value,
        };
        rec.check()?;
        Ok(rec)
    }
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},",
            self.at.as_nanos(),
            self.component.as_str(),
            self.method,
            self.outcome.as_str()
        )?;
        if let Some(v) = self.value {
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("invalid log record: {0}")]
    InvalidRecord(&'static str),
    #[error("log sink write failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed log row {row}: {reason}")]
    Malformed { row: usize, reason: String },
}

enum Sink {
    Memory(Vec<LogRecord>),
    Writer(Box<dyn Write + Send>),
}

struct Inner {
    sink: Sink,
    failed: Option<std::io::Error>,
}

/// Append-serialized sink shared by the components of one topology.
///
/// A write failure does not interrupt request handling: it is remembered
/// and reported by [`EventLog::finish`].
#[derive(Clone)]
pub struct EventLog {
    inner: Arc<Mutex<Inner>>,
}

impl EventLog {
    pub fn in_memory() -> Self {
        Self::with_sink(Sink::Memory(Vec::new()))
    }

    pub fn to_writer(w: impl Write + Send + 'static) -> Self {
        Self::with_sink(Sink::Writer(Box::new(std::io::BufWriter::new(w))))
    }

    fn with_sink(sink: Sink) -> Self {
        Self {
            inner: Arc::new(Mutex::new(Inner { sink, failed: None })),
        }
    }

    pub fn record(&self, rec: LogRecord) -> Result<(), LogError> {
        rec.check().map_err(LogError::InvalidRecord)?;
        let mut inner = self.inner.lock();
        let inner = &mut *inner;
        match &mut inner.sink {
            Sink::Memory(rows) => rows.push(rec),
            Sink::Writer(w) => {
                if inner.failed.is_none() {
                    let row = format!("{rec}\n");
                    if let Err(e) = w.write_all(row.as_bytes()) {
                        inner.failed = Some(e);
                    }
                }
            }
        }
        Ok(())
    }

    pub fn log_estimate(&self, at: Instant, method: &str, ttl: u32) -> Result<(), LogError> {
        self.record(LogRecord::estimate(at, method, ttl))
    }

    pub fn log_cache(&self, at: Instant, method: &str, hit: bool) -> Result<(), LogError> {
        self.record(LogRecord::cache(at, method, hit))
    }

    pub fn log_client(&self, at: Instant, method: &str, outcome: Outcome) -> Result<(), LogError> {
        self.record(LogRecord::client(at, method, outcome))
    }

    /// Rows held by an in-memory log, in append order.
    pub fn records(&self) -> Vec<LogRecord> {
        match &self.inner.lock().sink {
            Sink::Memory(rows) => rows.clone(),
            Sink::Writer(_) => Vec::new(),
        }
    }

    /// Flushes and reports the first write failure, if any.
    pub fn finish(&self) -> Result<(), LogError> {
        let mut inner = self.inner.lock();
        if let Some(e) = inner.failed.take() {
            return Err(e.into());
        }
        if let Sink::Writer(w) = &mut inner.sink {
            w.flush()?;
        }
        Ok(())
    }
}

pub fn write_records<W: Write>(mut w: W, records: &[LogRecord]) -> std::io::Result<()> {
    for r in records {
        writeln!(w, "{r}")?;
    }
    w.flush()
}

/// Reads a CSV log, reporting the 1-based row number of the first bad row.
pub fn read_records<R: BufRead>(r: R) -> Result<Vec<LogRecord>, LogError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let rec = LogRecord::parse_row(&line).map_err(|reason| LogError::Malformed {
            row: i + 1,
            reason: reason.to_owned(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimate_row_format() {
        let rec = LogRecord::estimate(Instant::from_nanos(1_500_000_000), "GetValue", 5);
        assert_eq!(rec.to_string(), "1500000000,estimator,GetValue,estimate,5");
        let zero = LogRecord::estimate(Instant::from_nanos(1), "GetValue", 0);
        assert!(zero.to_string().ends_with(",0"));
    }

    #[test]
    fn cache_and_client_rows_have_empty_value() {
        assert_eq!(
            LogRecord::cache(Instant::from_nanos(7), "GetValue", true).to_string(),
            "7,cache,GetValue,hit,"
        );
        assert_eq!(
            LogRecord::client(Instant::from_nanos(7), "SetValue", Outcome::Ok).to_string(),
            "7,client,SetValue,ok,"
        );
    }

    #[test]
    fn comma_in_method_rejected() {
        let log = EventLog::in_memory();
        let err = log.log_estimate(Instant::ZERO, "Get,Value", 1).unwrap_err();
        assert!(matches!(err, LogError::InvalidRecord(_)));
        assert!(log.records().is_empty());
    }

    #[test]
    fn parse_round_trip_and_errors() {
        let row = "1500000000,estimator,GetValue,estimate,5";
        assert_eq!(LogRecord::parse_row(row).unwrap().to_string(), row);
        assert!(LogRecord::parse_row("1,cache,GetValue,estimate,").is_err());
        assert!(LogRecord::parse_row("1,cache,GetValue,hit,3").is_err());
        assert!(LogRecord::parse_row("x,cache,GetValue,hit,").is_err());
        assert!(LogRecord::parse_row("1,cache,GetValue,hit").is_err());
    }

    #[test]
    fn malformed_row_reports_row_number() {
        let text = "1,cache,GetValue,hit,\n2,cache,GetValue,bogus,\n";
        match read_records(text.as_bytes()) {
            Err(LogError::Malformed { row, .. }) => assert_eq!(row, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    struct FailingWriter;

    impl Write for FailingWriter {
        fn write(&mut self, _: &[u8]) -> std::io::Result<usize> {
            Err(std::io::Error::other("disk full"))
        }
        fn flush(&mut self) -> std::io::Result<()> {
            Err(std::io::Error::other("disk full"))
        }
    }

    #[test]
    fn write_failure_surfaces_on_finish() {
        let log = EventLog::to_writer(FailingWriter);
        // buffered; the failure shows at flush time
        log.log_cache(Instant::ZERO, "GetValue", false).unwrap();
        assert!(log.finish().is_err());
    }
}
