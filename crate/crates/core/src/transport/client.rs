use std::io::{ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use super::frame::{frame_payload, FrameDecoder};
use super::{Envelope, TransportError};

pub const DEFAULT_CONNECT_TIMEOUT: Duration = Duration::from_secs(2);

pub(crate) fn resolve(addr: &str) -> Result<SocketAddr, TransportError> {
    addr.to_socket_addrs()
        .map_err(TransportError::Io)?
        .next()
        .ok_or_else(|| TransportError::Connect(format!("{addr} did not resolve")))
}

/// Client end of a framed request/reply connection. Requests strictly
/// alternate with replies; ids increase by one per request starting at 1.
/// After a timeout or protocol error the connection is poisoned and every
/// later request fails with [`TransportError::Closed`].
#[derive(Debug)]
pub struct Connection {
    stream: TcpStream,
    decoder: FrameDecoder,
    last_id: u64,
    broken: bool,
    peer: SocketAddr,
}

impl Connection {
    pub fn connect(addr: &str, timeout: Duration) -> Result<Self, TransportError> {
        let peer = resolve(addr)?;
        let stream = TcpStream::connect_timeout(&peer, timeout)
            .map_err(|e| TransportError::Connect(format!("{addr}: {e}")))?;
        stream.set_nodelay(true).ok();
        Ok(Self {
            stream,
            decoder: FrameDecoder::new(),
            last_id: 0,
            broken: false,
            peer,
        })
    }

    pub fn peer(&self) -> SocketAddr {
        self.peer
    }

    pub fn is_broken(&self) -> bool {
        self.broken
    }

    pub fn last_id(&self) -> u64 {
        self.last_id
    }

    /// Send `envelope` with the next request id and wait for its reply.
    /// Error replies are returned as [`TransportError::Remote`].
    pub fn request(&mut self, envelope: Envelope, timeout: Duration) -> Result<Envelope, TransportError> {
        let id = self.last_id + 1;
        self.request_with_id(envelope.with_id(id), timeout)
    }

    /// Like [`Connection::request`] but with a caller-chosen id, which must
    /// exceed every id used before on this connection.
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
        if matches!(
            result,
            Err(TransportError::Timeout
                | TransportError::Closed
                | TransportError::Io(_)
                | TransportError::Protocol(_)
                | TransportError::Oversize { .. }
                | TransportError::IdMismatch { .. })
        ) {
            self.broken = true;
        }
        result?.into_result()
    }

    fn exchange(&mut self, envelope: &Envelope, id: u64, timeout: Duration) -> Result<Envelope, TransportError> {
        let bytes = frame_payload(&envelope.to_payload()?)?;
        self.stream.write_all(&bytes).map_err(map_io)?;
        let deadline = Instant::now() + timeout;
        let mut chunk = [0u8; 64 * 1024];
        loop {
            if let Some(reply) = self.decoder.next_envelope()? {
                return match reply.id {
                    Some(got) if got == id => Ok(reply),
                    got => Err(TransportError::IdMismatch { expected: id, got }),
                };
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(TransportError::Timeout);
            }
            self.stream
                .set_read_timeout(Some((deadline - now).max(Duration::from_millis(1))))
                .map_err(TransportError::Io)?;
            match self.stream.read(&mut chunk) {
                Ok(0) => return Err(TransportError::Closed),
                Ok(n) => self.decoder.push(&chunk[..n]),
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                    return Err(TransportError::Timeout)
                }
                Err(e) if e.kind() == ErrorKind::Interrupted => continue,
                Err(e) => return Err(map_io(e)),
            }
        }
    }
}

pub(crate) fn map_io(e: std::io::Error) -> TransportError {
    match e.kind() {
        ErrorKind::BrokenPipe
        | ErrorKind::ConnectionReset
        | ErrorKind::ConnectionAborted
        | ErrorKind::UnexpectedEof
        | ErrorKind::NotConnected => TransportError::Closed,
        ErrorKind::WouldBlock | ErrorKind::TimedOut => TransportError::Timeout,
        _ => TransportError::Io(e),
    }
}
