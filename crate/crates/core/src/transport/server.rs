use std::io::{ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use tracing::{debug, warn};

use super::envelope::ErrorReply;
use super::frame::{frame_payload, FrameDecoder};
use super::{Envelope, TransportError};

/// Per-connection request handler. Requests on one connection are handled
/// serially, in arrival order.
pub trait Session: Send {
    /// Produce the reply for `req`. The caller stamps the reply with the
    /// request id.
    fn handle(&mut self, req: &Envelope) -> Result<Envelope, ErrorReply>;
}

/// A service opens one [`Session`] per accepted connection.
pub trait Service: Send + Sync + 'static {
    fn open_session(&self) -> Box<dyn Session>;
}

/// Stateless request handler shared by every connection.
pub trait Handler: Send + Sync + 'static {
    fn handle(&self, req: &Envelope) -> Result<Envelope, ErrorReply>;
}

struct Shared<H: ?Sized>(Arc<H>);

impl<H: Handler + ?Sized> Session for Shared<H> {
    fn handle(&mut self, req: &Envelope) -> Result<Envelope, ErrorReply> {
        self.0.handle(req)
    }
}

impl<H: Handler + ?Sized> Service for Shared<H> {
    fn open_session(&self) -> Box<dyn Session> {
        Box::new(Shared(self.0.clone()))
    }
}

/// Serve one shared handler on every connection.
pub fn shared<H: Handler>(handler: Arc<H>) -> Arc<dyn Service> {
    Arc::new(Shared(handler))
}

struct FnHandler<F>(F);

impl<F> Handler for FnHandler<F>
where
    F: Fn(&Envelope) -> Result<Envelope, ErrorReply> + Send + Sync + 'static,
{
    fn handle(&self, req: &Envelope) -> Result<Envelope, ErrorReply> {
        (self.0)(req)
    }
}

/// Wrap a stateless handler function as a service.
pub fn stateless<F>(f: F) -> Arc<dyn Service>
where
    F: Fn(&Envelope) -> Result<Envelope, ErrorReply> + Send + Sync + 'static,
{
    shared(Arc::new(FnHandler(f)))
}

/// Reply to one request: stamp the id, map handler errors to error replies.
pub(crate) fn respond(session: &mut dyn Session, req: &Envelope) -> Envelope {
    let mut reply = match session.handle(req) {
        Ok(r) => r,
        Err(e) => e.to_envelope(),
    };
    reply.id = req.id;
    reply
}

pub(crate) const POLL: Duration = Duration::from_millis(20);

/// Running listener. Dropping it stops accepting and closes every
/// connection within one poll interval.
#[derive(Debug)]
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn addr_string(&self) -> String {
        self.addr.to_string()
    }

    pub fn shutdown(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    pub(crate) fn spawn_with<F>(bind: &str, name: &str, per_conn: F) -> Result<Self, TransportError>
    where
        F: Fn(TcpStream, Arc<AtomicBool>) + Send + Sync + 'static,
    {
        let listener = TcpListener::bind(bind)
            .map_err(|e| TransportError::Connect(format!("bind {bind}: {e}")))?;
        listener.set_nonblocking(true).map_err(TransportError::Io)?;
        let addr = listener.local_addr().map_err(TransportError::Io)?;
        let stop = Arc::new(AtomicBool::new(false));
        let stop_accept = stop.clone();
        let per_conn = Arc::new(per_conn);
        let thread_name = name.to_owned();
        let accept = std::thread::Builder::new()
            .name(format!("{name}-accept"))
            .spawn(move || {
                while !stop_accept.load(Ordering::SeqCst) {
                    match listener.accept() {
                        Ok((stream, peer)) => {
                            debug!(%peer, service = %thread_name, "accepted");
                            let stop = stop_accept.clone();
                            let handler = per_conn.clone();
                            let _ = stream.set_nonblocking(false);
                            let _ = stream.set_nodelay(true);
                            let spawned = std::thread::Builder::new()
                                .name(format!("{thread_name}-conn"))
                                .spawn(move || handler(stream, stop));
                            if let Err(e) = spawned {
                                warn!("failed to spawn connection thread: {e}");
                            }
                        }
                        Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(2)),
                        Err(e) => {
                            warn!("accept failed: {e}");
                            std::thread::sleep(Duration::from_millis(10));
                        }
                    }
                }
            })
            .map_err(TransportError::Io)?;
        Ok(Self {
            addr,
            stop,
            accept: Some(accept),
        })
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Serve `service` over length-prefixed frames on `bind` (use port 0 for
/// an ephemeral port).
pub fn serve(bind: &str, name: &str, service: Arc<dyn Service>) -> Result<ServerHandle, TransportError> {
    ServerHandle::spawn_with(bind, name, move |stream, stop| {
        let session = service.open_session();
        if let Err(e) = serve_connection(stream, session, &stop) {
            debug!("connection closed: {e}");
        }
    })
}

fn serve_connection(
    mut stream: TcpStream,
    mut session: Box<dyn Session>,
    stop: &AtomicBool,
) -> Result<(), TransportError> {
    stream.set_read_timeout(Some(POLL)).map_err(TransportError::Io)?;
    let mut decoder = FrameDecoder::new();
    let mut chunk = [0u8; 64 * 1024];
    loop {
        // Protocol errors (oversize length, bad JSON) end the connection.
        while let Some(req) = decoder.next_envelope()? {
            if stop.load(Ordering::SeqCst) {
                return Ok(());
            }
            let reply = respond(session.as_mut(), &req);
            let bytes = match reply.to_payload().and_then(|p| frame_payload(&p)) {
                Ok(b) => b,
                Err(e) => {
                    let mut err = ErrorReply::new("internal", e.to_string()).to_envelope();
                    err.id = req.id;
                    frame_payload(&err.to_payload()?)?
                }
            };
            stream.write_all(&bytes).map_err(super::client::map_io)?;
        }
        if stop.load(Ordering::SeqCst) {
            return Ok(());
        }
        match stream.read(&mut chunk) {
            Ok(0) => return Ok(()),
            Ok(n) => decoder.push(&chunk[..n]),
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted) => {}
            Err(e) => return Err(TransportError::Io(e)),
        }
    }
}
