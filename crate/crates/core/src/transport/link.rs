use std::sync::Arc;
use std::time::Duration;

use futures::future::BoxFuture;
use thiserror::Error;

use super::clock::Clock;
use super::frame::{DecodeError, EncodeError, Message};
use super::sim::VirtualClock;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("timed out after {0:?}")]
    Timeout(Duration),
    #[error("connection closed by peer")]
    Closed,
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error("response id {got} does not match request id {expected}")]
    IdMismatch { expected: u64, got: u64 },
    #[error("handler failed: {0}")]
    Handler(String),
}

/// Unary request handler and forwarding interface.
///
/// Every call resolves exactly once: a response (OK or ERROR status) or a
/// transport error. Responses echo the request id.
pub trait Service: Send + Sync {
    fn call(&self, req: Message) -> BoxFuture<'_, Result<Message, TransportError>>;
}

impl<S: Service + ?Sized> Service for Arc<S> {
    fn call(&self, req: Message) -> BoxFuture<'_, Result<Message, TransportError>> {
        (**self).call(req)
    }
}

pub struct ServiceFn<F>(F);

/// Wraps a synchronous closure as a [`Service`].
pub fn service_fn<F>(f: F) -> ServiceFn<F>
where
    F: Fn(Message) -> Result<Message, TransportError> + Send + Sync,
{
    ServiceFn(f)
}

impl<F> Service for ServiceFn<F>
where
    F: Fn(Message) -> Result<Message, TransportError> + Send + Sync,
{
    fn call(&self, req: Message) -> BoxFuture<'_, Result<Message, TransportError>> {
        let out = (self.0)(req);
        Box::pin(async move { out })
    }
}

/// In-process link with a fixed one-way latency on the virtual timeline.
///
/// The request reaches `target` at `now + latency` and the response comes
/// back `latency` after the handler completes. Zero latency never yields.
pub struct VirtualLink {
    target: Arc<dyn Service>,
    clock: VirtualClock,
    latency: Duration,
}

impl VirtualLink {
    pub fn new(target: Arc<dyn Service>, clock: VirtualClock, latency: Duration) -> Self {
        Self {
            target,
            clock,
            latency,
        }
    }
}

impl Service for VirtualLink {
    fn call(&self, req: Message) -> BoxFuture<'_, Result<Message, TransportError>> {
        Box::pin(async move {
            if !self.latency.is_zero() {
                self.clock.sleep(self.latency).await;
            }
            let resp = self.target.call(req).await;
            if !self.latency.is_zero() {
                let at = self.clock.now() + self.latency;
                self.clock.sleep_until(at).await;
            }
            resp
        })
    }
}
