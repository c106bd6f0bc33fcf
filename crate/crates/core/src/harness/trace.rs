//! Scripted micro-traces through the full virtual-time topology.
//!
//! Instead of drawing delays from the sinusoids, the query and update
//! actors follow an explicit timetable. Useful for checking the event loop
//! against a hand-stepped model.

use std::sync::Arc;

use parking_lot::Mutex;

use super::HarnessError;
use crate::cache::Cache;
use crate::cache_control::{parse_max_age, CACHE_CONTROL};
use crate::estimator::{Estimator, EstimatorConfig};
use crate::time::Instant;
use crate::transport::{Clock, Message, Service, Simulation, VirtualLink};
use crate::ttl::AlgorithmConfig;
use crate::workload::{StalenessLedger, ValueServer, GET_VALUE, INITIAL_VALUE, SET_VALUE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceEvent {
    Query(Instant),
    Update(Instant),
}

impl TraceEvent {
    pub fn at(self) -> Instant {
        match self {
            TraceEvent::Query(t) | TraceEvent::Update(t) => t,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub algorithm: AlgorithmConfig,
    pub max_ttl: Option<u32>,
    pub events: Vec<TraceEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceStep {
    Query {
        at: Instant,
        hit: bool,
        stale: bool,
        /// `max-age` handed out by the estimator, on misses only.
        ttl: Option<u32>,
    },
    /// `value` is the n-th update, rendered as decimal.
    Update { at: Instant, value: u64 },
}

impl TraceStep {
    pub fn at(&self) -> Instant {
        match *self {
            TraceStep::Query { at, .. } | TraceStep::Update { at, .. } => at,
        }
    }
}

/// Runs `trace` and returns one step per event, in time order.
///
/// Event instants must be pairwise distinct.
pub fn run_trace(trace: &Trace) -> Result<Vec<TraceStep>, HarnessError> {
    let mut times: Vec<Instant> = trace.events.iter().map(|e| e.at()).collect();
    times.sort();
    if times.windows(2).any(|w| w[0] == w[1]) {
        return Err(HarnessError::BadConfig(
            "trace events must have distinct instants".into(),
        ));
    }

    let sim = Simulation::new();
    let vclock = sim.clock();
    let clock: Arc<dyn Clock> = Arc::new(vclock.clone());
    let link = |t: Arc<dyn Service>| -> Arc<dyn Service> {
        Arc::new(VirtualLink::new(t, vclock.clone(), std::time::Duration::ZERO))
    };
    let server = Arc::new(ValueServer::default());
    let mut est_cfg = EstimatorConfig::new(trace.algorithm);
    est_cfg.max_ttl = trace.max_ttl;
    let estimator = Arc::new(Estimator::new(est_cfg, link(server.clone()), clock.clone(), None));
    let cache = Arc::new(Cache::new(link(estimator), clock.clone(), None));
    let ledger = Arc::new(StalenessLedger::new(INITIAL_VALUE.to_vec()));
    let steps = Arc::new(Mutex::new(Vec::new()));

    let queries: Vec<Instant> = trace
        .events
        .iter()
        .filter_map(|e| match e {
            TraceEvent::Query(t) => Some(*t),
            _ => None,
        })
        .collect();
    let updates: Vec<Instant> = trace
        .events
        .iter()
        .filter_map(|e| match e {
            TraceEvent::Update(t) => Some(*t),
            _ => None,
        })
        .collect();

    {
        let (vclock, cache, ledger, steps) = (vclock.clone(), cache.clone(), ledger.clone(), steps.clone());
        let mut queries = queries;
        queries.sort();
        sim.spawn(async move {
            for at in queries {
                vclock.sleep_until_virtual(at).await;
                let expected = ledger.expected();
                let hits_before = cache.snapshot_stats().hits;
                let resp = cache
                    .call(Message::request(GET_VALUE, Vec::new()))
                    .await
                    .expect("in-process topology does not fail");
                let hit = cache.snapshot_stats().hits > hits_before;
                let stale = ledger.record_query(&expected, &resp.payload);
                let ttl = if hit {
                    None
                } else {
                    resp.metadata(CACHE_CONTROL).and_then(parse_max_age)
                };
                steps.lock().push(TraceStep::Query { at, hit, stale, ttl });
            }
        });
    }
    {
        let (vclock, server, ledger, steps) = (vclock.clone(), server.clone(), ledger.clone(), steps.clone());
        let mut updates = updates;
        updates.sort();
        sim.spawn(async move {
            for (n, at) in updates.into_iter().enumerate() {
                vclock.sleep_until_virtual(at).await;
                let value = n as u64 + 1;
                let bytes = value.to_string().into_bytes();
                let resp = server
                    .call(Message::request(SET_VALUE, bytes.clone()))
                    .await
                    .expect("in-process server does not fail");
                debug_assert!(resp.is_ok_response());
                ledger.record_update(bytes);
                steps.lock().push(TraceStep::Update { at, value });
            }
        });
    }

    let unfinished = sim.run();
    if unfinished > 0 {
        return Err(HarnessError::Stalled(unfinished));
    }
    let mut steps = std::mem::take(&mut *steps.lock());
    steps.sort_by_key(|s| s.at());
    Ok(steps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn update_after_cached_read_yields_a_stale_hit() {
        let s = Instant::from_secs;
        let trace = Trace {
            algorithm: AlgorithmConfig::static_ttl(10),
            max_ttl: Some(30),
            events: vec![
                TraceEvent::Query(s(1)),
                TraceEvent::Update(s(2)),
                TraceEvent::Query(s(3)),
            ],
        };
        let steps = run_trace(&trace).unwrap();
        assert_eq!(
            steps,
            vec![
                TraceStep::Query { at: s(1), hit: false, stale: false, ttl: Some(10) },
                TraceStep::Update { at: s(2), value: 1 },
                TraceStep::Query { at: s(3), hit: true, stale: true, ttl: None },
            ]
        );
    }

    #[test]
    fn simultaneous_events_are_rejected() {
        let trace = Trace {
            algorithm: AlgorithmConfig::static_ttl(1),
            max_ttl: None,
            events: vec![TraceEvent::Query(Instant::ZERO), TraceEvent::Update(Instant::ZERO)],
        };
        assert!(run_trace(&trace).is_err());
    }
}
