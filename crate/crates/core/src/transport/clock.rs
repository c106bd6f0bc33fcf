use std::sync::Arc;

use futures::future::BoxFuture;

use crate::time::Instant;

/// Monotonic time source shared by every component of a topology.
pub trait Clock: Send + Sync {
    /// Non-decreasing across successive calls from one caller.
    fn now(&self) -> Instant;

    /// Completes once `now() >= deadline`.
    fn sleep_until(&self, deadline: Instant) -> BoxFuture<'static, ()>;
}

impl<C: Clock + ?Sized> Clock for Arc<C> {
    fn now(&self) -> Instant {
        (**self).now()
    }

    fn sleep_until(&self, deadline: Instant) -> BoxFuture<'static, ()> {
        (**self).sleep_until(deadline)
    }
}

/// Wall-clock backed monotonic clock; instants count from construction.
///
/// `sleep_until` needs a Tokio runtime.
#[derive(Debug, Clone)]
pub struct RealClock {
    origin: std::time::Instant,
}

impl RealClock {
    pub fn new() -> Self {
        Self {
            origin: std::time::Instant::now(),
        }
    }
}

impl Default for RealClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for RealClock {
    fn now(&self) -> Instant {
        Instant::from_nanos(self.origin.elapsed().as_nanos() as u64)
    }

    fn sleep_until(&self, deadline: Instant) -> BoxFuture<'static, ()> {
        let target = self.origin + std::time::Duration::from_nanos(deadline.as_nanos());
        Box::pin(tokio::time::sleep_until(target.into()))
    }
}
