//! Estimator sidecar, co-deployed with the server.
//!
//! Every request is forwarded upstream; the Estimator never answers from a
//! local store. The fresh response is digested, the per-key history is
//! updated, and the response goes back with `cache-control: max-age=N`
//! computed from the updated history. Blacklisted methods pass through with
//! `max-age=0` and leave no trace in the table.

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use dashmap::DashMap;
use futures::future::BoxFuture;
use thiserror::Error;

use crate::cache_control::{max_age_value, CACHE_CONTROL};
use crate::digest::{CacheKey, Digest};
use crate::eventlog::EventLog;
use crate::time::Instant;
use crate::transport::frame::validate_method;
use crate::transport::{Clock, Message, Service, TransportError};
use crate::ttl::{AlgorithmConfig, ObservationHistory, TtlEstimate, DEFAULT_MAX_TTL_SECS};

pub const DEFAULT_HOUSEKEEPING_AFTER: Duration = Duration::from_secs(300);

#[derive(Debug, Error, PartialEq)]
#[error("config line {line}: {reason}")]
pub struct ConfigError {
    pub line: usize,
    pub reason: String,
}

impl ConfigError {
    fn new(line: usize, reason: impl Into<String>) -> Self {
        Self {
            line,
            reason: reason.into(),
        }
    }
}

/// Exact method name, or a prefix when written with a trailing `*`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MethodPattern {
    Exact(String),
    Prefix(String),
}

impl MethodPattern {
    pub fn parse(s: &str) -> Result<Self, String> {
        let (pat, name) = match s.strip_suffix('*') {
            Some(prefix) => (MethodPattern::Prefix(prefix.to_owned()), prefix),
            None => (MethodPattern::Exact(s.to_owned()), s),
        };
        validate_method(name, matches!(pat, MethodPattern::Exact(_)))
            .map_err(|e| format!("invalid method pattern {s:?}: {e}"))?;
        Ok(pat)
    }

    pub fn matches(&self, method: &str) -> bool {
        match self {
            MethodPattern::Exact(m) => m == method,
            MethodPattern::Prefix(p) => method.starts_with(p.as_str()),
        }
    }
}

impl fmt::Display for MethodPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MethodPattern::Exact(m) => f.write_str(m),
            MethodPattern::Prefix(p) => write!(f, "{p}*"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Blacklist(Vec<MethodPattern>);

impl Blacklist {
    pub fn new(patterns: Vec<MethodPattern>) -> Self {
        Self(patterns)
    }

    pub fn parse<'a>(items: impl IntoIterator<Item = &'a str>) -> Result<Self, String> {
        items
            .into_iter()
            .map(MethodPattern::parse)
            .collect::<Result<_, _>>()
            .map(Self)
    }

    pub fn contains(&self, method: &str) -> bool {
        self.0.iter().any(|p| p.matches(method))
    }

    pub fn patterns(&self) -> &[MethodPattern] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub algorithm: AlgorithmConfig,
    pub blacklist: Blacklist,
    pub housekeeping_after: Duration,
    /// Upper clamp for dynamic estimates; `None` is unbounded.
    pub max_ttl: Option<u32>,
}

impl EstimatorConfig {
    pub fn new(algorithm: AlgorithmConfig) -> Self {
        Self {
            algorithm,
            blacklist: Blacklist::default(),
            housekeeping_after: DEFAULT_HOUSEKEEPING_AFTER,
            max_ttl: Some(DEFAULT_MAX_TTL_SECS),
        }
    }

    pub fn with_blacklist(mut self, blacklist: Blacklist) -> Self {
        self.blacklist = blacklist;
        self
    }

    /// Parses flat `key=value` text.
    ///
    /// ```text
    /// algorithm=updaterisk      # static | adaptive | updaterisk
    /// parameter=0.1             # beta, alpha or rho
    /// k=2                       # updaterisk only
    /// blacklist=SetValue        # repeatable, comma lists allowed, trailing * = prefix
    /// housekeeping_after_s=300
    /// max_ttl_s=30              # or "unbounded"
    /// ```
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut algorithm: Option<(usize, String)> = None;
        let mut parameter: Option<(usize, String)> = None;
        let mut k: Option<(usize, usize)> = None;
        let mut patterns = Vec::new();
        let mut housekeeping_after = DEFAULT_HOUSEKEEPING_AFTER;
        let mut max_ttl = Some(DEFAULT_MAX_TTL_SECS);

        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| ConfigError::new(line_no, "expected key=value"))?;
            match key {
                "algorithm" => algorithm = Some((line_no, value.to_owned())),
                "parameter" => parameter = Some((line_no, value.to_owned())),
                "k" => {
                    let v = value
                        .parse()
                        .map_err(|_| ConfigError::new(line_no, "k must be a positive integer"))?;
                    k = Some((line_no, v));
                }
                "blacklist" => {
                    for item in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                        patterns.push(
                            MethodPattern::parse(item).map_err(|e| ConfigError::new(line_no, e))?,
                        );
                    }
                }
                "housekeeping_after_s" => {
                    let secs: u64 = value.parse().map_err(|_| {
                        ConfigError::new(line_no, "housekeeping_after_s must be whole seconds")
                    })?;
                    if secs == 0 {
                        return Err(ConfigError::new(line_no, "housekeeping_after_s must be > 0"));
                    }
                    housekeeping_after = Duration::from_secs(secs);
                }
                "max_ttl_s" => {
                    max_ttl = if value == "unbounded" {
                        None
                    } else {
                        Some(value.parse().map_err(|_| {
                            ConfigError::new(line_no, "max_ttl_s must be whole seconds or 'unbounded'")
                        })?)
                    };
                }
                other => return Err(ConfigError::new(line_no, format!("unknown key {other:?}"))),
            }
        }

        let (alg_line, alg) = algorithm.ok_or_else(|| ConfigError::new(0, "missing algorithm"))?;
        let (param_line, param) =
            parameter.ok_or_else(|| ConfigError::new(0, "missing parameter"))?;
        let algorithm = match alg.as_str() {
            "static" => {
                let beta = param.parse().map_err(|_| {
                    ConfigError::new(param_line, "static parameter must be whole seconds")
                })?;
                AlgorithmConfig::static_ttl(beta)
            }
            "adaptive" => {
                let alpha = parse_real(&param, param_line)?;
                AlgorithmConfig::adaptive(alpha)
                    .map_err(|e| ConfigError::new(param_line, e.to_string()))?
            }
            "updaterisk" => {
                let rho = parse_real(&param, param_line)?;
                let (k_line, k) = k.unwrap_or((param_line, 2));
                AlgorithmConfig::update_risk(rho, k)
                    .map_err(|e| ConfigError::new(k_line, e.to_string()))?
            }
            other => {
                return Err(ConfigError::new(
                    alg_line,
                    format!("unknown algorithm {other:?}"),
                ))
            }
        };
        if let (Some((line, _)), false) = (k, matches!(algorithm, AlgorithmConfig::UpdateRisk(_))) {
            return Err(ConfigError::new(line, "k only applies to updaterisk"));
        }

        Ok(Self {
            algorithm,
            blacklist: Blacklist::new(patterns),
            housekeeping_after,
            max_ttl,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        match self.algorithm {
            AlgorithmConfig::Static(s) => {
                out.push_str(&format!("algorithm=static\nparameter={}\n", s.beta))
            }
            AlgorithmConfig::Adaptive(a) => {
                out.push_str(&format!("algorithm=adaptive\nparameter={}\n", a.alpha))
            }
            AlgorithmConfig::UpdateRisk(u) => out.push_str(&format!(
                "algorithm=updaterisk\nparameter={}\nk={}\n",
                u.rho, u.k
            )),
        }
        for p in self.blacklist.patterns() {
            out.push_str(&format!("blacklist={p}\n"));
        }
        out.push_str(&format!(
            "housekeeping_after_s={}\n",
            self.housekeeping_after.as_secs()
        ));
        match self.max_ttl {
            Some(cap) => out.push_str(&format!("max_ttl_s={cap}\n")),
            None => out.push_str("max_ttl_s=unbounded\n"),
        }
        out
    }
}

fn parse_real(s: &str, line: usize) -> Result<f64, ConfigError> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| ConfigError::new(line, format!("{s:?} is not a real number")))
}

pub struct Estimator {
    config: EstimatorConfig,
    table: DashMap<CacheKey, ObservationHistory>,
    upstream: Arc<dyn Service>,
    clock: Arc<dyn Clock>,
    log: Option<EventLog>,
}

impl Estimator {
    pub fn new(
        config: EstimatorConfig,
        upstream: Arc<dyn Service>,
        clock: Arc<dyn Clock>,
        log: Option<EventLog>,
    ) -> Self {
        Self {
            config,
            table: DashMap::new(),
            upstream,
            clock,
            log,
        }
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    pub fn table_len(&self) -> usize {
        self.table.len()
    }

    pub fn history(&self, key: &CacheKey) -> Option<ObservationHistory> {
        self.table.get(key).map(|h| h.clone())
    }

    pub async fn handle_request(&self, req: Message) -> Result<Message, TransportError> {
        let method = req.method.clone();
        let blacklisted = self.config.blacklist.contains(&method);
        let key = CacheKey::for_request(&req.method, &req.payload);

        let mut resp = self.upstream.call(req).await?;
        if !resp.is_ok_response() {
            return Ok(resp);
        }

        let (now, ttl) = if blacklisted {
            (self.clock.now(), TtlEstimate::ZERO)
        } else {
            let digest = Digest::of(&resp.payload);
            let depth = self.config.algorithm.history_depth();
            let mut history = self
                .table
                .entry(key)
                .or_insert_with(|| ObservationHistory::new(depth));
            // Read the clock under the entry lock so per-key observations
            // are applied in a monotonic order.
            let now = self.clock.now();
            match history.observe(now, digest) {
                Ok(_) => (
                    now,
                    self.config
                        .algorithm
                        .estimate(&history, now, self.config.max_ttl),
                ),
                Err(_) => (now, TtlEstimate::ZERO),
            }
        };

        resp.set_metadata(CACHE_CONTROL, max_age_value(ttl.seconds()));
        if let Some(log) = &self.log {
            let _ = log.log_estimate(now, &method, ttl.seconds());
        }
        Ok(resp)
    }

    /// Drops every history untouched for longer than the housekeeping window.
    pub fn housekeeping_sweep(&self, now: Instant) -> usize {
        let window = self.config.housekeeping_after;
        let before = self.table.len();
        self.table.retain(|_, h| match h.last_touched() {
            Some(t) => now.saturating_duration_since(t) <= window,
            None => false,
        });
        before - self.table.len()
    }

    /// Sweeps every `housekeeping_after / 10` until `until` (forever if `None`).
    pub async fn run_housekeeping(&self, until: Option<Instant>) {
        let interval = (self.config.housekeeping_after / 10).max(Duration::from_millis(1));
        loop {
            let next = self.clock.now().saturating_add(interval);
            if until.is_some_and(|u| next >= u) {
                return;
            }
            self.clock.sleep_until(next).await;
            self.housekeeping_sweep(self.clock.now());
        }
    }
}

impl Service for Estimator {
    fn call(&self, req: Message) -> BoxFuture<'_, Result<Message, TransportError>> {
        Box::pin(self.handle_request(req))
    }
}
