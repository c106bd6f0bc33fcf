use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use softbreaker::cache::{Cache, CacheStats};
use softbreaker::cache_control::CACHE_CONTROL;
use softbreaker::estimator::{Blacklist, Estimator, EstimatorConfig};
use softbreaker::harness::{run_experiment, ClockMode, ExperimentConfig};
use softbreaker::transport::{
    serve, Clock, Message, RealClock, Service, Simulation, TcpLink, VirtualLink,
};
use softbreaker::workload::{PhaseShift, ValueServer, WorkloadConfig};
use softbreaker::AlgorithmConfig;

fn estimator_config(alg: AlgorithmConfig) -> EstimatorConfig {
    EstimatorConfig::new(alg).with_blacklist(Blacklist::parse(["SetValue"]).unwrap())
}

fn script() -> Vec<Message> {
    vec![
        Message::request("GetValue", Vec::new()),
        Message::request("GetValue", Vec::new()),
        Message::request("SetValue", b"5".to_vec()),
        Message::request("GetValue", Vec::new()),
        Message::request("Unknown", Vec::new()),
        Message::request("GetValue", Vec::new()),
    ]
}

/// What the client can observe: status, body and the TTL annotation.
type Seen = Vec<(bool, Vec<u8>, Option<String>)>;

fn observe(resp: &Message) -> (bool, Vec<u8>, Option<String>) {
    (
        resp.is_ok_response(),
        resp.payload.clone(),
        resp.metadata(CACHE_CONTROL).map(str::to_owned),
    )
}

fn run_virtual(alg: AlgorithmConfig) -> (Seen, CacheStats) {
    let sim = Simulation::new();
    let clock: Arc<dyn Clock> = Arc::new(sim.clock());
    let link = |t: Arc<dyn Service>| -> Arc<dyn Service> {
        Arc::new(VirtualLink::new(t, sim.clock(), Duration::ZERO))
    };
    let server = Arc::new(ValueServer::default());
    let est = Arc::new(Estimator::new(estimator_config(alg), link(server), clock.clone(), None));
    let cache = Arc::new(Cache::new(link(est), clock, None));
    let c = cache.clone();
    let seen = sim
        .block_on(async move {
            let mut seen = Vec::new();
            for req in script() {
                seen.push(observe(&c.call(req).await.unwrap()));
            }
            seen
        })
        .unwrap();
    (seen, cache.snapshot_stats())
}

async fn tcp_topology(alg: AlgorithmConfig) -> (SocketAddr, Arc<Cache>, Arc<Estimator>) {
    let any: SocketAddr = "127.0.0.1:0".parse().unwrap();
    let clock: Arc<dyn Clock> = Arc::new(RealClock::new());
    let server = serve(any, Arc::new(ValueServer::default())).await.unwrap();
    let est = Arc::new(Estimator::new(
        estimator_config(alg),
        Arc::new(TcpLink::new(server.local_addr(), Duration::from_secs(5))),
        clock.clone(),
        None,
    ));
    let est_srv = serve(any, est.clone()).await.unwrap();
    let cache = Arc::new(Cache::new(
        Arc::new(TcpLink::new(est_srv.local_addr(), Duration::from_secs(5))),
        clock,
        None,
    ));
    let cache_srv = serve(any, cache.clone()).await.unwrap();
    // dropping the handles leaves the servers running for the rest of the test
    (cache_srv.local_addr(), cache, est)
}

async fn run_tcp(alg: AlgorithmConfig) -> (Seen, CacheStats) {
    let (addr, cache, _) = tcp_topology(alg).await;
    let client = TcpLink::new(addr, Duration::from_secs(5));
    let mut seen = Vec::new();
    for (i, req) in script().into_iter().enumerate() {
        let resp = client.call(req.with_id(i as u64 + 1)).await.unwrap();
        assert_eq!(resp.id, i as u64 + 1);
        seen.push(observe(&resp));
    }
    (seen, cache.snapshot_stats())
}

#[tokio::test]
async fn tcp_and_virtual_backends_agree() {
    // Every step finishes well inside one second, so both clocks see the
    // same ages for these algorithms.
    for alg in [
        AlgorithmConfig::static_ttl(30),
        AlgorithmConfig::static_ttl(0),
        AlgorithmConfig::adaptive(0.5).unwrap(),
    ] {
        let (v_seen, v_stats) = run_virtual(alg);
        let (t_seen, t_stats) = run_tcp(alg).await;
        assert_eq!(v_seen, t_seen, "{alg:?}");
        assert_eq!(v_stats, t_stats, "{alg:?}");
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_clients_share_one_cache() {
    let (addr, cache, est) = tcp_topology(AlgorithmConfig::static_ttl(30)).await;
    let clients = 8;
    let per_client = 50;
    let barrier = Arc::new(tokio::sync::Barrier::new(clients));
    let mut tasks = Vec::new();
    for _ in 0..clients {
        let barrier = barrier.clone();
        tasks.push(tokio::spawn(async move {
            let link = TcpLink::new(addr, Duration::from_secs(5));
            barrier.wait().await;
            for _ in 0..per_client {
                let resp = link.call(Message::request("GetValue", Vec::new())).await.unwrap();
                assert!(resp.is_ok_response());
                assert_eq!(resp.payload, b"0");
            }
        }));
    }
    for t in tasks {
        t.await.unwrap();
    }
    let stats = cache.snapshot_stats();
    assert_eq!(stats.hits + stats.misses, (clients * per_client) as u64);
    assert!(stats.misses >= 1 && stats.misses < clients as u64 + 1);
    assert_eq!(est.table_len(), 1);
}

#[test]
fn short_real_clock_experiment() {
    let wl = WorkloadConfig::standard(Duration::from_secs(2), PhaseShift::Pi, 1);
    let mut cfg = ExperimentConfig::new("static-1", wl).unwrap();
    cfg.clock_mode = ClockMode::Real;
    let r = run_experiment(&cfg).unwrap();
    assert!(r.total_queries() > 0);
    assert_eq!(r.metrics.errored_queries, 0);
    assert!(r.traffic_reduction > 0.0);
}
