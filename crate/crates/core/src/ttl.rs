//! TTL estimation algorithms.
//!
//! Three estimators over an explicit per-key [`ObservationHistory`]:
//!
//! * **Static** always answers `beta` seconds.
//! * **Adaptive** answers `(now - last_change) * alpha`.
//! * **Update-risk** answers `-(bud / k) * ln(1 - rho)`, where `bud` is the
//!   time since the k-th most recent observed change.
//!
//! All arithmetic runs on real-valued seconds; the result is floored to whole
//! seconds and clamped to an optional upper cap. A dynamic estimator that has
//! not yet seen the history it needs answers 0 ("do not cache").

use std::collections::VecDeque;
use std::fmt;

use thiserror::Error;

use crate::digest::Digest;
use crate::time::Instant;

/// Default upper clamp for estimates, in seconds.
pub const DEFAULT_MAX_TTL_SECS: u32 = 30;

/// Whole seconds a response may be cached. Zero means "do not cache".
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct TtlEstimate(pub u32);

impl TtlEstimate {
    pub const ZERO: TtlEstimate = TtlEstimate(0);

    pub fn seconds(self) -> u32 {
        self.0
    }

    pub fn is_cacheable(self) -> bool {
        self.0 > 0
    }

    /// Floors a real-valued estimate and clamps it to `[0, cap]`.
    fn from_real(raw: f64, cap: Option<u32>) -> Self {
        // `as` saturates and maps NaN to 0.
        let secs = raw.floor() as u32;
        TtlEstimate(match cap {
            Some(cap) => secs.min(cap),
            None => secs,
        })
    }
}

impl fmt::Display for TtlEstimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TtlError {
    #[error("observation at {now} precedes last recorded change at {last}")]
    NonMonotonic { now: Instant, last: Instant },
    #[error("invalid algorithm configuration: {0}")]
    InvalidConfig(String),
}

/// Per-key record of response digests and the instants they changed.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationHistory {
    last_digest: Option<Digest>,
    changes: VecDeque<Instant>,
    depth: usize,
    last_touched: Option<Instant>,
}

impl ObservationHistory {
    /// Empty history retaining at most `depth` change timestamps.
    pub fn new(depth: usize) -> Self {
        let depth = depth.max(1);
        Self {
            last_digest: None,
            changes: VecDeque::with_capacity(depth),
            depth,
            last_touched: None,
        }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn last_digest(&self) -> Option<Digest> {
        self.last_digest
    }

    pub fn last_touched(&self) -> Option<Instant> {
        self.last_touched
    }

    /// Change timestamps, oldest first.
    pub fn change_timestamps(&self) -> impl ExactSizeIterator<Item = Instant> + '_ {
        self.changes.iter().copied()
    }

    pub fn change_count(&self) -> usize {
        self.changes.len()
    }

    /// Most recent change instant.
    pub fn last_change(&self) -> Option<Instant> {
        self.changes.back().copied()
    }

    /// The k-th most recent change instant (`k = 1` is the latest).
    pub fn kth_most_recent_change(&self, k: usize) -> Option<Instant> {
        if k == 0 || k > self.changes.len() {
            return None;
        }
        self.changes.get(self.changes.len() - k).copied()
    }

    /// Records a fresh response digest seen at `now`.
    ///
    /// The first observation and every digest that differs from the previous
    /// one count as a change. Returns whether a change was recorded.
    pub fn observe(&mut self, now: Instant, digest: Digest) -> Result<bool, TtlError> {
        if let Some(last) = self.last_change() {
            if now < last {
                return Err(TtlError::NonMonotonic { now, last });
            }
        }
        self.last_touched = Some(now);
        if self.last_digest == Some(digest) {
            return Ok(false);
        }
        self.last_digest = Some(digest);
        // Two different digests at the same instant collapse into one change.
        if self.last_change() != Some(now) {
            if self.changes.len() == self.depth {
                self.changes.pop_front();
            }
            self.changes.push_back(now);
        }
        Ok(true)
    }

    /// Consuming variant of [`observe`](Self::observe).
    pub fn observed(mut self, now: Instant, digest: Digest) -> Result<Self, TtlError> {
        self.observe(now, digest)?;
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Static {
    pub beta: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adaptive {
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateRisk {
    pub rho: f64,
    pub k: usize,
}

impl UpdateRisk {
    pub const DEFAULT_K: usize = 2;

    pub fn new(rho: f64) -> Self {
        Self {
            rho,
            k: Self::DEFAULT_K,
        }
    }
}

/// Selected estimation algorithm and its parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlgorithmConfig {
    Static(Static),
    Adaptive(Adaptive),
    UpdateRisk(UpdateRisk),
}

impl AlgorithmConfig {
    pub fn static_ttl(beta: u32) -> Self {
        AlgorithmConfig::Static(Static { beta })
    }

    pub fn adaptive(alpha: f64) -> Result<Self, TtlError> {
        Self::Adaptive(Adaptive { alpha }).validated()
    }

    pub fn update_risk(rho: f64, k: usize) -> Result<Self, TtlError> {
        Self::UpdateRisk(UpdateRisk { rho, k }).validated()
    }

    pub fn validated(self) -> Result<Self, TtlError> {
        match self {
            AlgorithmConfig::Static(_) => {}
            AlgorithmConfig::Adaptive(Adaptive { alpha }) => {
                if !(alpha.is_finite() && alpha > 0.0) {
                    return Err(TtlError::InvalidConfig(format!(
                        "adaptive alpha must be a positive real, got {alpha}"
                    )));
                }
            }
            AlgorithmConfig::UpdateRisk(UpdateRisk { rho, k }) => {
                if !(0.0..1.0).contains(&rho) {
                    return Err(TtlError::InvalidConfig(format!(
                        "update-risk rho must lie in [0, 1), got {rho}"
                    )));
                }
                if k == 0 {
                    return Err(TtlError::InvalidConfig(
                        "update-risk k must be at least 1".into(),
                    ));
                }
            }
        }
        Ok(self)
    }

    /// History depth this algorithm needs.
    pub fn history_depth(&self) -> usize {
        match self {
            AlgorithmConfig::Static(_) => 1,
            AlgorithmConfig::Adaptive(_) => 1,
            AlgorithmConfig::UpdateRisk(u) => u.k.max(1),
        }
    }

    /// Pre-floor estimate in real seconds, `None` when history is insufficient.
    pub fn raw_estimate(&self, history: &ObservationHistory, now: Instant) -> Option<f64> {
        match *self {
            AlgorithmConfig::Static(Static { beta }) => Some(f64::from(beta)),
            AlgorithmConfig::Adaptive(Adaptive { alpha }) => {
                let last = history.last_change()?;
                Some(elapsed_secs(now, last) * alpha)
            }
            AlgorithmConfig::UpdateRisk(UpdateRisk { rho, k }) => {
                let kth = history.kth_most_recent_change(k)?;
                let bud = elapsed_secs(now, kth);
                Some(-(bud / k as f64) * (1.0 - rho).ln())
            }
        }
    }

    pub fn estimate(
        &self,
        history: &ObservationHistory,
        now: Instant,
        cap: Option<u32>,
    ) -> TtlEstimate {
        match self {
            AlgorithmConfig::Static(cfg) => estimate_static(cfg, history, now),
            AlgorithmConfig::Adaptive(cfg) => estimate_adaptive(cfg, history, now, cap),
            AlgorithmConfig::UpdateRisk(cfg) => estimate_update_risk(cfg, history, now, cap),
        }
    }

    /// The parameter as a real, for reporting.
    pub fn parameter(&self) -> f64 {
        match *self {
            AlgorithmConfig::Static(Static { beta }) => f64::from(beta),
            AlgorithmConfig::Adaptive(Adaptive { alpha }) => alpha,
            AlgorithmConfig::UpdateRisk(UpdateRisk { rho, .. }) => rho,
        }
    }
}

fn elapsed_secs(now: Instant, since: Instant) -> f64 {
    now.saturating_duration_since(since).as_nanos() as f64 / 1e9
}

/// `beta`, regardless of history. The static cap does not apply.
pub fn estimate_static(cfg: &Static, _history: &ObservationHistory, _now: Instant) -> TtlEstimate {
    TtlEstimate(cfg.beta)
}

pub fn estimate_adaptive(
    cfg: &Adaptive,
    history: &ObservationHistory,
    now: Instant,
    cap: Option<u32>,
) -> TtlEstimate {
    match history.last_change() {
        None => TtlEstimate::ZERO,
        Some(last) => TtlEstimate::from_real(elapsed_secs(now, last) * cfg.alpha, cap),
    }
}

pub fn estimate_update_risk(
    cfg: &UpdateRisk,
    history: &ObservationHistory,
    now: Instant,
    cap: Option<u32>,
) -> TtlEstimate {
    let Some(kth) = history.kth_most_recent_change(cfg.k) else {
        return TtlEstimate::ZERO;
    };
    let bud = elapsed_secs(now, kth);
    TtlEstimate::from_real(-(bud / cfg.k as f64) * (1.0 - cfg.rho).ln(), cap)
}
