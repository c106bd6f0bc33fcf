//! The Value Service and its two-actor client workload.
//!
//! The server holds one opaque value behind `GetValue` / `SetValue`. A query
//! actor reads it through the cache path and an update actor overwrites it,
//! each pacing itself with delays drawn from a sinusoidally modulated rate.
//! A shared [`StalenessLedger`] holds the value the server is known to hold,
//! so the query actor can tell whether each answer was stale.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, TAU};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use futures::future::BoxFuture;
use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson};
use thiserror::Error;

use crate::cache::CacheStats;
use crate::eventlog::{EventLog, Outcome};
use crate::time::Instant;
use crate::transport::{Clock, Message, Service, Status, TransportError};

pub const GET_VALUE: &str = "GetValue";
pub const SET_VALUE: &str = "SetValue";
pub const INITIAL_VALUE: &[u8] = b"0";

#[derive(Default)]
struct ServerState {
    value: Vec<u8>,
    set_count: u64,
}

/// Single-value server. `SetValue` calls are applied in arrival order.
pub struct ValueServer {
    state: Mutex<ServerState>,
}

impl Default for ValueServer {
    fn default() -> Self {
        Self::new(INITIAL_VALUE.to_vec())
    }
}

impl ValueServer {
    pub fn new(initial: Vec<u8>) -> Self {
        Self {
            state: Mutex::new(ServerState {
                value: initial,
                set_count: 0,
            }),
        }
    }

    pub fn value(&self) -> Vec<u8> {
        self.state.lock().value.clone()
    }

    pub fn set_count(&self) -> u64 {
        self.state.lock().set_count
    }

    pub fn handle(&self, req: &Message) -> Message {
        match req.method.as_str() {
            GET_VALUE => Message::response_to(req, Status::Ok, self.value()),
            SET_VALUE => {
                let mut s = self.state.lock();
                s.value = req.payload.clone();
                s.set_count += 1;
                Message::response_to(req, Status::Ok, Vec::new())
            }
            other => Message::error_response(req, format!("unknown method {other}")),
        }
    }
}

impl Service for ValueServer {
    fn call(&self, req: Message) -> BoxFuture<'_, Result<Message, TransportError>> {
        let resp = self.handle(&req);
        Box::pin(async move { Ok(resp) })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum WorkloadError {
    #[error("sinusoid rate must stay positive: mean {mean} - |amplitude {amplitude}| <= 0")]
    NonPositiveRate { mean: f64, amplitude: f64 },
    #[error("sinusoid period must be positive")]
    ZeroPeriod,
    #[error("unknown phase shift {0:?} (expected 0, pi4, pi2 or pi)")]
    UnknownPhase(String),
}

/// `rate(t) = mean + amplitude * sin(2πt / period + phase)`, in requests/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinusoidConfig {
    pub mean_rate: f64,
    pub amplitude: f64,
    pub period: Duration,
    pub phase: f64,
}

impl SinusoidConfig {
    pub fn new(mean_rate: f64, amplitude: f64, period: Duration) -> Self {
        Self {
            mean_rate,
            amplitude,
            period,
            phase: 0.0,
        }
    }

    pub fn constant(rate: f64) -> Self {
        Self::new(rate, 0.0, Duration::from_secs(1))
    }

    pub fn with_phase(mut self, phase: f64) -> Self {
        self.phase = phase;
        self
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.period.is_zero() {
            return Err(WorkloadError::ZeroPeriod);
        }
        let min = self.mean_rate - self.amplitude.abs();
        if min.is_nan() || min <= 0.0 {
            return Err(WorkloadError::NonPositiveRate {
                mean: self.mean_rate,
                amplitude: self.amplitude,
            });
        }
        Ok(())
    }

    pub fn rate_at(&self, t_secs: f64) -> f64 {
        self.mean_rate
            + self.amplitude * (TAU * t_secs / self.period.as_secs_f64() + self.phase).sin()
    }
}

/// Offset applied to the update sinusoid relative to the query sinusoid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PhaseShift {
    Zero,
    Pi4,
    Pi2,
    Pi,
}

impl PhaseShift {
    pub const ALL: [PhaseShift; 4] = [
        PhaseShift::Zero,
        PhaseShift::Pi4,
        PhaseShift::Pi2,
        PhaseShift::Pi,
    ];

    pub fn radians(self) -> f64 {
        match self {
            PhaseShift::Zero => 0.0,
            PhaseShift::Pi4 => FRAC_PI_4,
            PhaseShift::Pi2 => FRAC_PI_2,
            PhaseShift::Pi => PI,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            PhaseShift::Zero => "0",
            PhaseShift::Pi4 => "pi4",
            PhaseShift::Pi2 => "pi2",
            PhaseShift::Pi => "pi",
        }
    }
}

impl fmt::Display for PhaseShift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for PhaseShift {
    type Err = WorkloadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PhaseShift::ALL
            .into_iter()
            .find(|p| p.label() == s)
            .ok_or_else(|| WorkloadError::UnknownPhase(s.to_owned()))
    }
}

/// How inter-request delays are drawn from the instantaneous rate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum DelayModel {
    /// Exponential inter-arrival time, rounded to whole milliseconds.
    #[default]
    Exponential,
    /// Poisson-distributed integer milliseconds with the same mean.
    Poisson,
}

/// Delay until the next request in whole milliseconds, at least 1.
pub fn next_delay<R: Rng + ?Sized>(
    cfg: &SinusoidConfig,
    model: DelayModel,
    t_secs: f64,
    rng: &mut R,
) -> u64 {
    let rate = cfg.rate_at(t_secs);
    debug_assert!(rate > 0.0);
    let mean_ms = 1000.0 / rate;
    let ms = match model {
        DelayModel::Exponential => Exp::new(1.0 / mean_ms)
            .expect("positive rate")
            .sample(rng)
            .round(),
        DelayModel::Poisson => Poisson::new(mean_ms).expect("positive rate").sample(rng),
    };
    (ms as u64).max(1)
}

pub const QUERY_MEAN_RATE: f64 = 5.5;
pub const QUERY_AMPLITUDE: f64 = 4.5;
pub const UPDATE_MEAN_RATE: f64 = 0.575;
pub const UPDATE_AMPLITUDE: f64 = 0.525;
pub const FULL_PERIOD: Duration = Duration::from_secs(1800);
pub const DESK_PERIOD: Duration = Duration::from_secs(300);

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadConfig {
    pub query: SinusoidConfig,
    /// Base update sinusoid; `phase_shift` is added on top.
    pub update: SinusoidConfig,
    pub duration: Duration,
    pub seed: u64,
    pub phase_shift: PhaseShift,
    pub delay_model: DelayModel,
}

impl WorkloadConfig {
    /// Standard query/update ranges with period equal to `duration`.
    pub fn standard(duration: Duration, phase_shift: PhaseShift, seed: u64) -> Self {
        Self {
            query: SinusoidConfig::new(QUERY_MEAN_RATE, QUERY_AMPLITUDE, duration),
            update: SinusoidConfig::new(UPDATE_MEAN_RATE, UPDATE_AMPLITUDE, duration),
            duration,
            seed,
            phase_shift,
            delay_model: DelayModel::default(),
        }
    }

    pub fn full_scale(phase_shift: PhaseShift, seed: u64) -> Self {
        Self::standard(FULL_PERIOD, phase_shift, seed)
    }

    pub fn desk_scale(phase_shift: PhaseShift, seed: u64) -> Self {
        Self::standard(DESK_PERIOD, phase_shift, seed)
    }

    pub fn query_sinusoid(&self) -> SinusoidConfig {
        self.query
    }

    pub fn update_sinusoid(&self) -> SinusoidConfig {
        self.update
            .with_phase(self.update.phase + self.phase_shift.radians())
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        self.query.validate()?;
        self.update.validate()
    }

    /// Independent random stream per actor, derived from the seed.
    pub fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

pub const QUERY_STREAM: u64 = 0;
pub const UPDATE_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LedgerCounts {
    pub total_queries: u64,
    pub stale_queries: u64,
    pub errored_queries: u64,
    pub updates_applied: u64,
    pub updates_failed: u64,
}

#[derive(Default)]
struct LedgerInner {
    expected: Vec<u8>,
    counts: LedgerCounts,
}

/// Ground truth shared by the two actors.
///
/// `total_queries` counts queries that received a value; errored queries
/// are tallied separately.
pub struct StalenessLedger {
    inner: Mutex<LedgerInner>,
}

impl StalenessLedger {
    pub fn new(initial: Vec<u8>) -> Self {
        Self {
            inner: Mutex::new(LedgerInner {
                expected: initial,
                counts: LedgerCounts::default(),
            }),
        }
    }

    pub fn expected(&self) -> Vec<u8> {
        self.inner.lock().expected.clone()
    }

    pub fn counts(&self) -> LedgerCounts {
        self.inner.lock().counts
    }

    /// Records a completed query; returns whether it was stale.
    pub fn record_query(&self, expected: &[u8], got: &[u8]) -> bool {
        let stale = expected != got;
        let mut inner = self.inner.lock();
        inner.counts.total_queries += 1;
        if stale {
            inner.counts.stale_queries += 1;
        }
        stale
    }

    pub fn record_query_error(&self) {
        self.inner.lock().counts.errored_queries += 1;
    }

    /// Called only after the server acknowledged `value`.
    pub fn record_update(&self, value: Vec<u8>) {
        let mut inner = self.inner.lock();
        inner.expected = value;
        inner.counts.updates_applied += 1;
    }

    pub fn record_update_failure(&self) {
        self.inner.lock().counts.updates_failed += 1;
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("metric undefined over zero requests")]
    NoRequests,
}

pub fn error_fraction(counts: &LedgerCounts) -> Result<f64, MetricError> {
    ratio(counts.stale_queries, counts.total_queries)
}

/// Share of `GetValue` requests answered by the cache.
pub fn traffic_reduction(stats: &CacheStats) -> Result<f64, MetricError> {
    let m = stats.method(GET_VALUE);
    ratio(m.hits, m.hits + m.misses)
}

pub fn ratio(num: u64, den: u64) -> Result<f64, MetricError> {
    if den == 0 {
        return Err(MetricError::NoRequests);
    }
    Ok(num as f64 / den as f64)
}

fn elapsed_secs(now: Instant, start: Instant) -> f64 {
    now.saturating_duration_since(start).as_secs_f64()
}

/// Issues `GetValue` through `link` until `duration` has elapsed since the
/// actor started, comparing every answer with the ledger.
pub async fn run_query_actor(
    cfg: WorkloadConfig,
    clock: Arc<dyn Clock>,
    link: Arc<dyn Service>,
    ledger: Arc<StalenessLedger>,
    log: Option<EventLog>,
) {
    let sinusoid = cfg.query_sinusoid();
    let mut rng = cfg.rng(QUERY_STREAM);
    let start = clock.now();
    let end = start.saturating_add(cfg.duration);
    let mut now = start;
    while now < end {
        let expected = ledger.expected();
        let outcome = match link.call(Message::request(GET_VALUE, Vec::new())).await {
            Ok(resp) if resp.is_ok_response() => {
                if ledger.record_query(&expected, &resp.payload) {
                    Outcome::Stale
                } else {
                    Outcome::Ok
                }
            }
            _ => {
                ledger.record_query_error();
                Outcome::Error
            }
        };
        if let Some(log) = &log {
            let _ = log.log_client(clock.now(), GET_VALUE, outcome);
        }
        let delay = next_delay(
            &sinusoid,
            cfg.delay_model,
            elapsed_secs(clock.now(), start),
            &mut rng,
        );
        now = clock.now().saturating_add(Duration::from_millis(delay));
        if now >= end {
            break;
        }
        clock.sleep_until(now).await;
    }
}

/// Writes fresh values straight to the server until `duration` has elapsed.
///
/// A failed write is retried once. The ledger only moves after an ack.
pub async fn run_update_actor(
    cfg: WorkloadConfig,
    clock: Arc<dyn Clock>,
    link: Arc<dyn Service>,
    ledger: Arc<StalenessLedger>,
    log: Option<EventLog>,
) {
    let sinusoid = cfg.update_sinusoid();
    let mut rng = cfg.rng(UPDATE_STREAM);
    let start = clock.now();
    let end = start.saturating_add(cfg.duration);
    let mut counter: u64 = 0;

    // The first write happens after one delay, not at t = 0.
    let mut now = start.saturating_add(Duration::from_millis(next_delay(
        &sinusoid,
        cfg.delay_model,
        0.0,
        &mut rng,
    )));
    while now < end {
        clock.sleep_until(now).await;
        counter += 1;
        let value = counter.to_string().into_bytes();
        let mut acked = false;
        for _ in 0..2 {
            match link.call(Message::request(SET_VALUE, value.clone())).await {
                Ok(resp) if resp.is_ok_response() => {
                    acked = true;
                    break;
                }
                _ => {}
            }
        }
        if acked {
            ledger.record_update(value);
        } else {
            ledger.record_update_failure();
        }
        if let Some(log) = &log {
            let outcome = if acked { Outcome::Ok } else { Outcome::Error };
            let _ = log.log_client(clock.now(), SET_VALUE, outcome);
        }
        let delay = next_delay(
            &sinusoid,
            cfg.delay_model,
            elapsed_secs(clock.now(), start),
            &mut rng,
        );
        now = clock.now().saturating_add(Duration::from_millis(delay));
    }
}
