//! Caching sidecars that act as a soft circuit breaker between services.
//!
//! A [`cache::Cache`] sits next to the client and answers repeated requests
//! from memory while a response is fresh. An [`estimator::Estimator`] sits
//! next to the server, always fetches the freshest response, tracks when
//! responses change, and annotates each one with a `cache-control:
//! max-age=N` estimate produced by one of the [`ttl`] algorithms.
//!
//! The [`workload`] and [`harness`] modules drive a single-value service
//! through the Cache → Estimator → Server chain under sinusoidal Poisson
//! load and measure the resulting staleness and traffic reduction, either
//! on a virtual clock or over loopback TCP.

pub mod cache;
pub mod cache_control;
pub mod digest;
pub mod estimator;
pub mod eventlog;
pub mod harness;
pub mod time;
pub mod transport;
pub mod ttl;
pub mod workload;

pub use digest::{CacheKey, Digest};
pub use time::Instant;
pub use ttl::{AlgorithmConfig, ObservationHistory, TtlEstimate};
