//! Unary request/response plumbing: message frames, clocks, and the two
//! interchangeable link backends (virtual-time and TCP).

mod clock;
pub mod frame;
mod link;
pub mod sim;
pub mod tcp;

pub use clock::{Clock, RealClock};
pub use frame::{decode, encode, DecodeError, EncodeError, Kind, Message, Status};
pub use link::{service_fn, Service, ServiceFn, TransportError, VirtualLink};
pub use sim::{Simulation, VirtualClock};
pub use tcp::{serve, ServerHandle, TcpLink};
