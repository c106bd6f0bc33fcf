//! Cache and Estimator properties over the in-process topology.

use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use proptest::prelude::*;

use softbreaker::cache::Cache;
use softbreaker::cache_control::{parse_max_age, CACHE_CONTROL};
use softbreaker::estimator::{Blacklist, Estimator, EstimatorConfig};
use softbreaker::transport::{service_fn, Clock, Message, Service, Simulation, Status};
use softbreaker::{AlgorithmConfig, Instant};

/// Upstream whose value can be replaced between calls; records every request.
struct Backend {
    value: Mutex<Vec<u8>>,
    seen: Mutex<Vec<Message>>,
}

impl Backend {
    fn new() -> Arc<Self> {
        Arc::new(Self {
            value: Mutex::new(b"0".to_vec()),
            seen: Mutex::new(Vec::new()),
        })
    }

    fn service(self: &Arc<Self>) -> Arc<dyn Service> {
        let me = self.clone();
        Arc::new(service_fn(move |req: Message| {
            me.seen.lock().push(req.clone());
            Ok(Message::response_to(&req, Status::Ok, me.value.lock().clone()))
        }))
    }
}

#[derive(Debug, Clone)]
enum Step {
    Get { key: u8, after_ms: u64 },
    Change,
}

fn steps() -> impl Strategy<Value = Vec<Step>> {
    prop::collection::vec(
        prop_oneof![
            3 => (0u8..3, 0u64..4000).prop_map(|(key, after_ms)| Step::Get { key, after_ms }),
            1 => Just(Step::Change),
        ],
        1..40,
    )
}

struct Run {
    responses: Vec<(Message, Vec<u8>)>,
    forwarded: usize,
    est_table: usize,
}

fn drive(alg: AlgorithmConfig, steps: Vec<Step>, with_cache: bool) -> Run {
    let sim = Simulation::new();
    let clock: Arc<dyn Clock> = Arc::new(sim.clock());
    let backend = Backend::new();
    let est = Arc::new(Estimator::new(
        EstimatorConfig::new(alg),
        backend.service(),
        clock.clone(),
        None,
    ));
    let front: Arc<dyn Service> = if with_cache {
        Arc::new(Cache::new(est.clone(), clock, None))
    } else {
        est.clone()
    };
    let vclock = sim.clock();
    let b = backend.clone();
    let responses = sim
        .block_on(async move {
            let mut out = Vec::new();
            let mut n = 0u64;
            for s in steps {
                match s {
                    Step::Change => {
                        n += 1;
                        *b.value.lock() = n.to_string().into_bytes();
                    }
                    Step::Get { key, after_ms } => {
                        vclock.sleep(Duration::from_millis(after_ms)).await;
                        let resp = front
                            .call(Message::request(format!("Get{key}"), Vec::new()))
                            .await
                            .unwrap();
                        out.push((resp, b.value.lock().clone()));
                    }
                }
            }
            out
        })
        .unwrap();
    let forwarded = backend.seen.lock().len();
    Run {
        responses,
        forwarded,
        est_table: est.table_len(),
    }
}

fn algorithms() -> impl Strategy<Value = AlgorithmConfig> {
    prop_oneof![
        (0u32..5).prop_map(AlgorithmConfig::static_ttl),
        (0.05f64..2.0).prop_map(|a| AlgorithmConfig::adaptive(a).unwrap()),
        (0.0f64..0.95, 1usize..4).prop_map(|(r, k)| AlgorithmConfig::update_risk(r, k).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn estimator_always_answers_fresh(alg in algorithms(), steps in steps()) {
        let run = drive(alg, steps, false);
        for (resp, current) in &run.responses {
            prop_assert_eq!(&resp.payload, current);
            prop_assert!(resp.metadata(CACHE_CONTROL).and_then(parse_max_age).is_some());
        }
        prop_assert_eq!(run.forwarded, run.responses.len());
        prop_assert!(run.est_table <= 3);
    }

    #[test]
    fn zero_ttl_cache_is_pass_through(steps in steps()) {
        let run = drive(AlgorithmConfig::static_ttl(0), steps, true);
        prop_assert_eq!(run.forwarded, run.responses.len());
        for (resp, current) in &run.responses {
            prop_assert_eq!(&resp.payload, current);
        }
    }

    #[test]
    fn cached_answers_are_earlier_upstream_answers(alg in algorithms(), steps in steps()) {
        let run = drive(alg, steps, true);
        prop_assert!(run.forwarded <= run.responses.len());
        let mut served: Vec<Vec<u8>> = Vec::new();
        for (resp, current) in &run.responses {
            prop_assert!(resp.is_ok_response());
            prop_assert!(served.contains(&resp.payload) || &resp.payload == current);
            served.push(resp.payload.clone());
        }
    }
}

#[test]
fn estimate_reflects_the_change_carried_by_the_same_response() {
    let sim = Simulation::new();
    let clock: Arc<dyn Clock> = Arc::new(sim.clock());
    let backend = Backend::new();
    let est = Arc::new(Estimator::new(
        EstimatorConfig::new(AlgorithmConfig::adaptive(1.0).unwrap()),
        backend.service(),
        clock,
        None,
    ));
    let vclock = sim.clock();
    let b = backend.clone();
    let ttls = sim
        .block_on(async move {
            let mut ttls = Vec::new();
            for (at, change) in [(0, false), (20, false), (21, true), (25, false)] {
                vclock.sleep_until_virtual(Instant::from_secs(at)).await;
                if change {
                    *b.value.lock() = b"x".to_vec();
                }
                let r = est.call(Message::request("GetValue", Vec::new())).await.unwrap();
                ttls.push(r.metadata(CACHE_CONTROL).and_then(parse_max_age).unwrap());
            }
            ttls
        })
        .unwrap();
    assert_eq!(ttls, [0, 20, 0, 4]);
}

#[test]
fn blacklisted_methods_leave_no_trace() {
    let sim = Simulation::new();
    let backend = Backend::new();
    let cfg = EstimatorConfig::new(AlgorithmConfig::static_ttl(30))
        .with_blacklist(Blacklist::parse(["Set*"]).unwrap());
    let est = Arc::new(Estimator::new(cfg, backend.service(), Arc::new(sim.clock()), None));
    let e = est.clone();
    sim.block_on(async move {
        for i in 0..50u8 {
            let r = e.call(Message::request("SetValue", vec![i])).await.unwrap();
            assert_eq!(r.metadata(CACHE_CONTROL), Some("max-age=0"));
        }
    })
    .unwrap();
    assert_eq!(est.table_len(), 0);
    assert_eq!(backend.seen.lock().len(), 50);
}

#[test]
fn housekeeping_bounds_the_table() {
    let sim = Simulation::new();
    let backend = Backend::new();
    let mut cfg = EstimatorConfig::new(AlgorithmConfig::adaptive(0.1).unwrap());
    cfg.housekeeping_after = Duration::from_secs(60);
    let est = Arc::new(Estimator::new(cfg, backend.service(), Arc::new(sim.clock()), None));
    let (e, vclock) = (est.clone(), sim.clock());
    let end = Instant::from_secs(600);
    let sweeper = est.clone();
    sim.spawn(async move { sweeper.run_housekeeping(Some(end)).await });
    let max_after_sweep = sim
        .block_on(async move {
            // a new key every 10 s; at most the last 60 s worth survive a sweep
            let mut max = 0;
            for i in 0..55u64 {
                vclock.sleep_until_virtual(Instant::from_secs(i * 10)).await;
                e.call(Message::request(format!("K{i}"), Vec::new())).await.unwrap();
                max = max.max(e.table_len());
            }
            max
        })
        .unwrap();
    // keys idle for more than the window are gone between two 6 s sweeps
    assert!(max_after_sweep <= 8, "{max_after_sweep}");
    let left = est.table_len();
    assert_eq!(est.housekeeping_sweep(Instant::from_secs(10_000)), left);
    assert_eq!(est.table_len(), 0);
}
