//! 128-bit content digests used for response change detection and cache keys.

use std::fmt;

use xxhash_rust::xxh3::{xxh3_128, Xxh3};

/// Stable, non-cryptographic 128-bit digest (XXH3-128).
///
/// Two different payloads that collide are treated as "unchanged"; that risk
/// is accepted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest(pub u128);

impl Digest {
    pub fn of(bytes: &[u8]) -> Self {
        Digest(xxh3_128(bytes))
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

/// Identity of an equivalent request: digest over `method ‖ 0x00 ‖ payload`.
///
/// Request metadata does not participate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CacheKey(pub Digest);

impl CacheKey {
    pub fn for_request(method: &str, payload: &[u8]) -> Self {
        let mut hasher = Xxh3::new();
        hasher.update(method.as_bytes());
        hasher.update(&[0u8]);
        hasher.update(payload);
        CacheKey(Digest(hasher.digest128()))
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}
