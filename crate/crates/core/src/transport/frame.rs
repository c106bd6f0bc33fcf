//! Unary message model and its length-prefixed binary frame.
//!
//! Layout (all integers big-endian):
//!
//! ```text
//! u32  total remaining length
//! u8   kind          0x00 request, 0x01 response
//! u8   status        0x00 OK, 0x01 ERROR   (responses only)
//! u16  method length, method bytes (ASCII)
//! u64  request id    (echoed in the response)
//! u16  metadata pair count
//!      per pair: u16 key length, key bytes, u16 value length, value bytes
//! u32  payload length, payload bytes
//! ```
//!
//! Encoding is canonical: every frame accepted by [`decode`] re-encodes to
//! the same bytes.

use thiserror::Error;

/// Largest accepted value of the leading length field.
pub const MAX_FRAME_LEN: usize = 16 * 1024 * 1024;

const KIND_REQUEST: u8 = 0x00;
const KIND_RESPONSE: u8 = 0x01;
const STATUS_OK: u8 = 0x00;
const STATUS_ERROR: u8 = 0x01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Status {
    Ok,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Kind {
    Request,
    Response(Status),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub kind: Kind,
    pub id: u64,
    pub method: String,
    pub metadata: Vec<(String, String)>,
    pub payload: Vec<u8>,
}

impl Message {
    pub fn request(method: impl Into<String>, payload: impl Into<Vec<u8>>) -> Self {
        Message {
            kind: Kind::Request,
            id: 0,
            method: method.into(),
            metadata: Vec::new(),
            payload: payload.into(),
        }
    }

    /// A response echoing the method and id of `req`.
    pub fn response_to(req: &Message, status: Status, payload: impl Into<Vec<u8>>) -> Self {
        Message {
            kind: Kind::Response(status),
            id: req.id,
            method: req.method.clone(),
            metadata: Vec::new(),
            payload: payload.into(),
        }
    }

    pub fn error_response(req: &Message, reason: impl AsRef<str>) -> Self {
        Self::response_to(req, Status::Error, reason.as_ref().as_bytes().to_vec())
    }

    pub fn with_id(mut self, id: u64) -> Self {
        self.id = id;
        self
    }

    pub fn is_request(&self) -> bool {
        self.kind == Kind::Request
    }

    pub fn status(&self) -> Option<Status> {
        match self.kind {
            Kind::Request => None,
            Kind::Response(s) => Some(s),
        }
    }

    pub fn is_ok_response(&self) -> bool {
        self.kind == Kind::Response(Status::Ok)
    }

    pub fn metadata(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Replaces the first pair with `key`, or appends one.
    pub fn set_metadata(&mut self, key: impl Into<String>, value: impl Into<String>) {
        let key = key.into();
        let value = value.into();
        match self.metadata.iter_mut().find(|(k, _)| *k == key) {
            Some(pair) => pair.1 = value,
            None => self.metadata.push((key, value)),
        }
    }

    pub fn encoded_len(&self) -> usize {
        let status = usize::from(!self.is_request());
        4 + 1
            + status
            + 2
            + self.method.len()
            + 8
            + 2
            + self
                .metadata
                .iter()
                .map(|(k, v)| 4 + k.len() + v.len())
                .sum::<usize>()
            + 4
            + self.payload.len()
    }

    pub fn validate(&self) -> Result<(), EncodeError> {
        validate_method(&self.method, self.is_request()).map_err(|reason| EncodeError::Invalid {
            field: "method",
            reason,
        })?;
        if self.metadata.len() > usize::from(u16::MAX) {
            return Err(EncodeError::Invalid {
                field: "metadata",
                reason: "more than 65535 pairs",
            });
        }
        for (k, v) in &self.metadata {
            validate_key(k).map_err(|reason| EncodeError::Invalid {
                field: "metadata key",
                reason,
            })?;
            validate_value(v).map_err(|reason| EncodeError::Invalid {
                field: "metadata value",
                reason,
            })?;
        }
        if self.encoded_len() - 4 > MAX_FRAME_LEN {
            return Err(EncodeError::Invalid {
                field: "payload",
                reason: "frame exceeds 16 MiB",
            });
        }
        Ok(())
    }
}

/// Method names: ASCII without commas or line breaks; non-empty for requests.
pub fn validate_method(method: &str, required: bool) -> Result<(), &'static str> {
    if required && method.is_empty() {
        return Err("empty");
    }
    if method.len() > usize::from(u16::MAX) {
        return Err("longer than 65535 bytes");
    }
    if !method.is_ascii() {
        return Err("not ASCII");
    }
    if method.bytes().any(|b| matches!(b, b',' | b'\n' | b'\r')) {
        return Err("contains a comma or line break");
    }
    Ok(())
}

fn validate_key(key: &str) -> Result<(), &'static str> {
    if key.is_empty() {
        return Err("empty");
    }
    if key.len() > usize::from(u16::MAX) {
        return Err("longer than 65535 bytes");
    }
    if !key.is_ascii() {
        return Err("not ASCII");
    }
    if key.bytes().any(|b| b.is_ascii_uppercase()) {
        return Err("not lowercase");
    }
    Ok(())
}

fn validate_value(value: &str) -> Result<(), &'static str> {
    if value.len() > usize::from(u16::MAX) {
        return Err("longer than 65535 bytes");
    }
    if !value.is_ascii() {
        return Err("not ASCII");
    }
    Ok(())
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EncodeError {
    #[error("invalid {field}: {reason}")]
    Invalid {
        field: &'static str,
        reason: &'static str,
    },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("truncated frame: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("declared frame length {0} exceeds the 16 MiB limit")]
    Oversize(usize),
    #[error("unknown kind byte {0:#04x}")]
    UnknownKind(u8),
    #[error("unknown status byte {0:#04x}")]
    UnknownStatus(u8),
    #[error("invalid method: {0}")]
    InvalidMethod(&'static str),
    #[error("invalid metadata: {0}")]
    InvalidMetadata(&'static str),
    #[error("{0} trailing bytes after frame")]
    TrailingBytes(usize),
    #[error("declared length leaves {0} unused bytes inside the frame")]
    LengthMismatch(usize),
}

pub fn encode(m: &Message) -> Result<Vec<u8>, EncodeError> {
    m.validate()?;
    let total = m.encoded_len();
    let mut out = Vec::with_capacity(total);
    out.extend_from_slice(&((total - 4) as u32).to_be_bytes());
    match m.kind {
        Kind::Request => out.push(KIND_REQUEST),
        Kind::Response(status) => {
            out.push(KIND_RESPONSE);
            out.push(match status {
                Status::Ok => STATUS_OK,
                Status::Error => STATUS_ERROR,
            });
        }
    }
    put_str16(&mut out, &m.method);
    out.extend_from_slice(&m.id.to_be_bytes());
    out.extend_from_slice(&(m.metadata.len() as u16).to_be_bytes());
    for (k, v) in &m.metadata {
        put_str16(&mut out, k);
        put_str16(&mut out, v);
    }
    out.extend_from_slice(&(m.payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&m.payload);
    debug_assert_eq!(out.len(), total);
    Ok(out)
}

fn put_str16(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_be_bytes());
    out.extend_from_slice(s.as_bytes());
}

/// Reads the leading length field; `Ok(None)` when fewer than 4 bytes exist.
pub fn declared_len(header: &[u8]) -> Result<Option<usize>, DecodeError> {
    let Some(bytes) = header.get(..4) else {
        return Ok(None);
    };
    let len = u32::from_be_bytes(bytes.try_into().expect("4 bytes")) as usize;
    if len > MAX_FRAME_LEN {
        return Err(DecodeError::Oversize(len));
    }
    Ok(Some(len))
}

/// Parses exactly one frame from `bytes`.
pub fn decode(bytes: &[u8]) -> Result<Message, DecodeError> {
    let len = declared_len(bytes)?.ok_or(DecodeError::Truncated {
        needed: 4,
        available: bytes.len(),
    })?;
    let end = 4 + len;
    if bytes.len() < end {
        return Err(DecodeError::Truncated {
            needed: end,
            available: bytes.len(),
        });
    }
    if bytes.len() > end {
        return Err(DecodeError::TrailingBytes(bytes.len() - end));
    }
    let mut r = Reader {
        buf: &bytes[4..],
        pos: 0,
    };
    let kind = match r.u8()? {
        KIND_REQUEST => Kind::Request,
        KIND_RESPONSE => Kind::Response(match r.u8()? {
            STATUS_OK => Status::Ok,
            STATUS_ERROR => Status::Error,
            other => return Err(DecodeError::UnknownStatus(other)),
        }),
        other => return Err(DecodeError::UnknownKind(other)),
    };
    let method = r.str16().map_err(|e| e.or_invalid(DecodeError::InvalidMethod("not ASCII")))?;
    validate_method(&method, kind == Kind::Request).map_err(DecodeError::InvalidMethod)?;
    let id = r.u64()?;
    let pairs = r.u16()?;
    let mut metadata = Vec::with_capacity(usize::from(pairs).min(64));
    for _ in 0..pairs {
        let k = r
            .str16()
            .map_err(|e| e.or_invalid(DecodeError::InvalidMetadata("key not ASCII")))?;
        validate_key(&k).map_err(DecodeError::InvalidMetadata)?;
        let v = r
            .str16()
            .map_err(|e| e.or_invalid(DecodeError::InvalidMetadata("value not ASCII")))?;
        metadata.push((k, v));
    }
    let plen = r.u32()? as usize;
    let payload = r.take(plen)?.to_vec();
    if r.pos != r.buf.len() {
        return Err(DecodeError::LengthMismatch(r.buf.len() - r.pos));
    }
    Ok(Message {
        kind,
        id,
        method,
        metadata,
        payload,
    })
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

enum StrError {
    Decode(DecodeError),
    NotAscii,
}

impl StrError {
    fn or_invalid(self, invalid: DecodeError) -> DecodeError {
        match self {
            StrError::Decode(e) => e,
            StrError::NotAscii => invalid,
        }
    }
}

impl From<DecodeError> for StrError {
    fn from(e: DecodeError) -> Self {
        StrError::Decode(e)
    }
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let remaining = self.buf.len() - self.pos;
        if n > remaining {
            return Err(DecodeError::Truncated {
                needed: 4 + self.pos + n,
                available: 4 + self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn str16(&mut self) -> Result<String, StrError> {
        let n = usize::from(self.u16()?);
        let raw = self.take(n)?;
        if !raw.is_ascii() {
            return Err(StrError::NotAscii);
        }
        Ok(String::from_utf8(raw.to_vec()).expect("ASCII is UTF-8"))
    }
}
