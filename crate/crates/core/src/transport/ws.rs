//! WebSocket flavour of the request/reply layer. Each message carries one
//! JSON envelope payload exactly as the framed TCP transport would, minus
//! the length prefix (WebSocket frames the message).

use std::net::TcpStream;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use tracing::debug;
use tungstenite::{Message, WebSocket};

use super::client::resolve;
use super::envelope::ErrorReply;
use super::server::{respond, ServerHandle, Service, POLL};
use super::{Envelope, TransportError};

/// Time a peer gets to complete the opening handshake.
pub const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(1);

fn ws_err(e: tungstenite::Error) -> TransportError {
    use tungstenite::Error as E;
    match e {
        E::ConnectionClosed | E::AlreadyClosed => TransportError::Closed,
        E::Io(io) => super::client::map_io(io),
        other => TransportError::WebSocket(other.to_string()),
    }
}

fn is_timeout(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io)
        if matches!(io.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut))
}

/// Serve `service` over WebSocket. Binary requests get binary replies and
/// text requests get text replies; payloads that fail to parse get an error
/// reply without an id.
pub fn serve_ws(bind: &str, name: &str, service: Arc<dyn Service>) -> Result<ServerHandle, TransportError> {
    ServerHandle::spawn_with(bind, name, move |stream, stop| {
        if let Err(e) = serve_ws_connection(stream, service.as_ref(), &stop) {
            debug!("websocket connection closed: {e}");
        }
    })
}

fn serve_ws_connection(stream: TcpStream, service: &dyn Service, stop: &AtomicBool) -> Result<(), TransportError> {
    stream.set_read_timeout(Some(HANDSHAKE_TIMEOUT)).map_err(TransportError::Io)?;
    stream.set_write_timeout(Some(HANDSHAKE_TIMEOUT)).map_err(TransportError::Io)?;
    let mut ws = tungstenite::accept(stream)
        .map_err(|e| TransportError::WebSocket(format!("handshake failed: {e}")))?;
    ws.get_mut().set_read_timeout(Some(POLL)).map_err(TransportError::Io)?;
    ws.get_mut().set_write_timeout(None).map_err(TransportError::Io)?;
    let mut session = service.open_session();
    loop {
        if stop.load(Ordering::SeqCst) {
            let _ = ws.close(None);
            return Ok(());
        }
        let msg = match ws.read() {
            Ok(m) => m,
            Err(e) if is_timeout(&e) => continue,
            Err(e) => return Err(ws_err(e)),
        };
        let (payload, binary) = match msg {
            Message::Binary(p) => (p, true),
            Message::Text(t) => (t.into_bytes(), false),
            Message::Close(_) => return Ok(()),
            _ => continue,
        };
        let reply = match Envelope::from_payload(&payload) {
            Ok(req) => respond(session.as_mut(), &req),
            Err(e) => ErrorReply::new("protocol", e.to_string()).to_envelope(),
        };
        let bytes = reply.to_payload()?;
        let out = if binary {
            Message::Binary(bytes)
        } else {
            Message::Text(String::from_utf8(bytes).expect("serde_json emits UTF-8"))
        };
        ws.send(out).map_err(ws_err)?;
    }
}

/// Client end of a WebSocket request/reply connection, with the same id
/// discipline as [`super::Connection`].
pub struct WsConnection {
    ws: WebSocket<TcpStream>,
    last_id: u64,
    broken: bool,
}

impl std::fmt::Debug for WsConnection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WsConnection")
            .field("last_id", &self.last_id)
            .field("broken", &self.broken)
            .finish()
    }
}

impl WsConnection {
    pub fn connect(addr: &str, timeout: Duration) -> Result<Self, TransportError> {
        let host = addr.trim_start_matches("ws://").trim_end_matches('/');
        let peer = resolve(host)?;
        let stream = TcpStream::connect_timeout(&peer, timeout)
            .map_err(|e| TransportError::Connect(format!("{host}: {e}")))?;
        stream.set_nodelay(true).ok();
        stream.set_read_timeout(Some(timeout)).map_err(TransportError::Io)?;
        stream.set_write_timeout(Some(timeout)).map_err(TransportError::Io)?;
        let (ws, _resp) = tungstenite::client(format!("ws://{host}/"), stream)
            .map_err(|e| TransportError::Connect(format!("websocket handshake with {host}: {e}")))?;
        Ok(Self {
            ws,
            last_id: 0,
            broken: false,
        })
    }

    pub fn is_broken(&self) -> bool {
        self.broken
    }

    /// Send one binary message and wait for the reply carrying the same id.
    pub fn request_with_id(&mut self, envelope: Envelope, timeout: Duration) -> Result<Envelope, TransportError> {
        if self.broken {
            return Err(TransportError::Closed);
        }
        let id = envelope
            .id
            .ok_or_else(|| TransportError::Protocol("request without id".into()))?;
        if id <= self.last_id {
            return Err(TransportError::Protocol(format!(
                "request id {id} does not exceed previous id {}",
                self.last_id
            )));
        }
        self.last_id = id;
        let result = self.exchange(&envelope, id, timeout);
        if let Err(e) = &result {
            if !matches!(e, TransportError::Remote { .. }) {
                self.broken = true;
            }
        }
        result?.into_result()
    }

    pub fn request(&mut self, envelope: Envelope, timeout: Duration) -> Result<Envelope, TransportError> {
        let id = self.last_id + 1;
        self.request_with_id(envelope.with_id(id), timeout)
    }

    fn exchange(&mut self, envelope: &Envelope, id: u64, timeout: Duration) -> Result<Envelope, TransportError> {
        let payload = envelope.to_payload()?;
        self.ws.send(Message::Binary(payload)).map_err(ws_err)?;
        let deadline = Instant::now() + timeout;
        loop {
            let now = Instant::now();
            if now >= deadline {
                return Err(TransportError::Timeout);
            }
            self.ws
                .get_mut()
                .set_read_timeout(Some((deadline - now).max(Duration::from_millis(1))))
                .map_err(TransportError::Io)?;
            let msg = match self.ws.read() {
                Ok(m) => m,
                Err(e) if is_timeout(&e) => return Err(TransportError::Timeout),
                Err(e) => return Err(ws_err(e)),
            };
            let bytes = match msg {
                Message::Binary(b) => b,
                Message::Text(t) => t.into_bytes(),
                Message::Close(_) => return Err(TransportError::Closed),
                _ => continue,
            };
            let reply = Envelope::from_payload(&bytes)?;
            return match reply.id {
                Some(got) if got == id => Ok(reply),
                // error replies to unparseable requests carry no id
                None if reply.is_error() => Ok(reply),
                got => Err(TransportError::IdMismatch { expected: id, got }),
            };
        }
    }
}

impl Drop for WsConnection {
    fn drop(&mut self) {
        if !self.broken {
            let _ = self.ws.close(None);
            let _ = self.ws.flush();
        }
    }
}
