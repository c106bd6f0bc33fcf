//! Framed unary protocol over TCP.

use std::net::SocketAddr;
use std::panic::AssertUnwindSafe;
use std::sync::Arc;
use std::time::Duration;

use futures::future::BoxFuture;
use futures::FutureExt;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{oneshot, Mutex};
use tokio::task::JoinHandle;

use super::frame::{declared_len, decode, encode, Kind, Message, Status};
use super::link::{Service, TransportError};

/// Reads one frame; `Ok(None)` on clean EOF before the length prefix.
pub async fn read_frame(stream: &mut TcpStream) -> Result<Option<Message>, TransportError> {
    let mut header = [0u8; 4];
    match stream.read_exact(&mut header).await {
        Ok(_) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = declared_len(&header)?.expect("4-byte header");
    let mut buf = vec![0u8; 4 + len];
    buf[..4].copy_from_slice(&header);
    stream.read_exact(&mut buf[4..]).await.map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            TransportError::Closed
        } else {
            e.into()
        }
    })?;
    Ok(Some(decode(&buf)?))
}

pub async fn write_frame(stream: &mut TcpStream, m: &Message) -> Result<(), TransportError> {
    let bytes = encode(m)?;
    stream.write_all(&bytes).await?;
    Ok(())
}

/// Handle to a running listener. Dropping it leaves the server running.
pub struct ServerHandle {
    local_addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<()>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Stops accepting connections. In-flight connections finish on their own.
    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = (&mut self.task).await;
    }
}

/// Binds `addr` and serves frames with `handler`.
///
/// Connections are handled concurrently; frames on one connection are
/// handled in order. A failing or panicking handler produces an ERROR
/// response and the connection stays open.
pub async fn serve(addr: SocketAddr, handler: Arc<dyn Service>) -> std::io::Result<ServerHandle> {
    let listener = TcpListener::bind(addr).await?;
    let local_addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        // A dropped handle closes the channel without asking for a stop.
        let stop = async move {
            if rx.await.is_err() {
                std::future::pending::<()>().await;
            }
        };
        tokio::pin!(stop);
        loop {
            tokio::select! {
                _ = &mut stop => break,
                accepted = listener.accept() => {
                    let Ok((stream, _)) = accepted else { continue };
                    let _ = stream.set_nodelay(true);
                    tokio::spawn(serve_connection(stream, handler.clone()));
                }
            }
        }
    });
    Ok(ServerHandle {
        local_addr,
        shutdown: Some(tx),
        task,
    })
}

async fn serve_connection(mut stream: TcpStream, handler: Arc<dyn Service>) {
    loop {
        let req = match read_frame(&mut stream).await {
            Ok(Some(req)) if req.is_request() => req,
            // EOF, garbage or a stray response: drop this connection only.
            _ => return,
        };
        // Handlers may panic before returning their future, so the call
        // itself goes inside the guarded block.
        let outcome = AssertUnwindSafe(async { handler.call(req.clone()).await })
            .catch_unwind()
            .await;
        let mut resp = match outcome {
            Ok(Ok(resp)) => resp,
            Ok(Err(e)) => Message::error_response(&req, e.to_string()),
            Err(_) => Message::error_response(&req, "handler panicked"),
        };
        if resp.kind == Kind::Request {
            resp = Message::error_response(&req, "handler returned a request");
        }
        resp.id = req.id;
        if encode(&resp).is_err() {
            resp = Message::response_to(&req, Status::Error, b"unencodable response".to_vec());
        }
        if write_frame(&mut stream, &resp).await.is_err() {
            return;
        }
    }
}

/// Client side of the TCP protocol, usable as a forwarding [`Service`].
///
/// One persistent connection, reconnected lazily after any failure. Calls
/// through the same link are serialized.
pub struct TcpLink {
    addr: SocketAddr,
    timeout: Duration,
    conn: Mutex<Option<TcpStream>>,
}

impl TcpLink {
    pub fn new(addr: SocketAddr, timeout: Duration) -> Self {
        Self {
            addr,
            timeout,
            conn: Mutex::new(None),
        }
    }

    async fn exchange(&self, req: &Message) -> Result<Message, TransportError> {
        let mut guard = self.conn.lock().await;
        if guard.is_none() {
            let stream = TcpStream::connect(self.addr).await?;
            stream.set_nodelay(true)?;
            *guard = Some(stream);
        }
        let stream = guard.as_mut().expect("connected");
        let result = async {
            write_frame(stream, req).await?;
            read_frame(stream).await?.ok_or(TransportError::Closed)
        }
        .await;
        if result.is_err() {
            *guard = None;
        }
        let resp = result?;
        if resp.id != req.id {
            *guard = None;
            return Err(TransportError::IdMismatch {
                expected: req.id,
                got: resp.id,
            });
        }
        Ok(resp)
    }
}

impl Service for TcpLink {
    fn call(&self, req: Message) -> BoxFuture<'_, Result<Message, TransportError>> {
        Box::pin(async move {
            match tokio::time::timeout(self.timeout, self.exchange(&req)).await {
                Ok(r) => r,
                Err(_) => {
                    // A timed-out exchange may leave a late reply in the socket.
                    if let Ok(mut g) = self.conn.try_lock() {
                        *g = None;
                    }
                    Err(TransportError::Timeout(self.timeout))
                }
            }
        })
    }
}
