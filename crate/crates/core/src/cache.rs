//! Client-side Cache sidecar.
//!
//! Answers a request from memory while a fresh entry exists for its
//! [`CacheKey`], otherwise forwards it upstream and stores the response for
//! the `max-age` the Estimator attached. Expiry is absolute: an entry
//! stored at arrival time `t` with `max-age=N` serves requests strictly
//! before `t + N`.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use dashmap::mapref::entry::Entry;
use dashmap::DashMap;
use futures::future::BoxFuture;
use parking_lot::Mutex;

use crate::cache_control::{parse_max_age, CACHE_CONTROL};
use crate::digest::CacheKey;
use crate::eventlog::EventLog;
use crate::time::Instant;
use crate::transport::{Clock, Message, Service, TransportError};

#[derive(Debug, Clone)]
pub struct CacheEntry {
    pub response: Message,
    pub expires_at: Instant,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MethodStats {
    pub hits: u64,
    pub misses: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub insertions: u64,
    pub expirations: u64,
    pub by_method: BTreeMap<String, MethodStats>,
}

impl CacheStats {
    pub fn method(&self, method: &str) -> MethodStats {
        self.by_method.get(method).copied().unwrap_or_default()
    }

    fn count(&mut self, method: &str, hit: bool) {
        let m = self.by_method.entry(method.to_owned()).or_default();
        if hit {
            self.hits += 1;
            m.hits += 1;
        } else {
            self.misses += 1;
            m.misses += 1;
        }
    }
}

pub struct Cache {
    store: DashMap<CacheKey, CacheEntry>,
    stats: Mutex<CacheStats>,
    upstream: Arc<dyn Service>,
    clock: Arc<dyn Clock>,
    log: Option<EventLog>,
}

impl Cache {
    pub fn new(upstream: Arc<dyn Service>, clock: Arc<dyn Clock>, log: Option<EventLog>) -> Self {
        Self {
            store: DashMap::new(),
            stats: Mutex::new(CacheStats::default()),
            upstream,
            clock,
            log,
        }
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }

    pub fn entry(&self, key: &CacheKey) -> Option<CacheEntry> {
        self.store.get(key).map(|e| e.clone())
    }

    pub fn snapshot_stats(&self) -> CacheStats {
        self.stats.lock().clone()
    }

    /// Looks up a fresh entry, dropping it if it has expired.
    fn lookup(&self, key: CacheKey, now: Instant) -> Option<Message> {
        match self.store.entry(key) {
            Entry::Occupied(e) if now < e.get().expires_at => Some(e.get().response.clone()),
            Entry::Occupied(e) => {
                e.remove();
                self.stats.lock().expirations += 1;
                None
            }
            Entry::Vacant(_) => None,
        }
    }

    fn record(&self, now: Instant, method: &str, hit: bool) {
        self.stats.lock().count(method, hit);
        if let Some(log) = &self.log {
            let _ = log.log_cache(now, method, hit);
        }
    }

    pub async fn handle_request(&self, req: Message) -> Result<Message, TransportError> {
        let key = CacheKey::for_request(&req.method, &req.payload);
        let arrival = self.clock.now();

        if let Some(resp) = self.lookup(key, arrival) {
            self.record(arrival, &req.method, true);
            return Ok(resp.with_id(req.id));
        }
        self.record(arrival, &req.method, false);

        let id = req.id;
        let resp = self.upstream.call(req).await?;
        if resp.is_ok_response() {
            let max_age = resp.metadata(CACHE_CONTROL).and_then(parse_max_age);
            if let Some(n) = max_age.filter(|&n| n >= 1) {
                let expires_at = arrival.saturating_add(Duration::from_secs(u64::from(n)));
                self.store.insert(
                    key,
                    CacheEntry {
                        response: resp.clone(),
                        expires_at,
                    },
                );
                self.stats.lock().insertions += 1;
            }
        }
        Ok(resp.with_id(id))
    }

    /// Removes every entry that is no longer fresh at `now`.
    pub fn expire_scan(&self, now: Instant) -> usize {
        let before = self.store.len();
        self.store.retain(|_, e| now < e.expires_at);
        let removed = before - self.store.len();
        self.stats.lock().expirations += removed as u64;
        removed
    }
}

impl Service for Cache {
    fn call(&self, req: Message) -> BoxFuture<'_, Result<Message, TransportError>> {
        Box::pin(self.handle_request(req))
    }
}
