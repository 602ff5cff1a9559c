use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::transport::{Connection, Envelope, TransportError, WsConnection};

/// Wire protocol of a policy server.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// One binary WebSocket message per direction.
    Ws,
    /// One length-prefixed frame per direction over TCP.
    Mq,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Ws => "ws",
            Protocol::Mq => "mq",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ws" => Ok(Protocol::Ws),
            "mq" => Ok(Protocol::Mq),
            other => Err(format!("unknown protocol {other:?} (expected ws or mq)")),
        }
    }
}

enum Link {
    Ws(WsConnection),
    Mq(Connection),
}

/// Client side of one policy protocol. Both variants send the byte-identical
/// JSON document; only the framing differs. A broken link is re-established
/// on the next call.
pub struct PolicyAdapter {
    protocol: Protocol,
    addr: String,
    connect_timeout: Duration,
    link: Option<Link>,
}

impl fmt::Debug for PolicyAdapter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PolicyAdapter")
            .field("protocol", &self.protocol)
            .field("addr", &self.addr)
            .field("connected", &self.link.is_some())
            .finish()
    }
}

impl PolicyAdapter {
    /// Connect eagerly so protocol mismatches surface right away.
    pub fn connect(protocol: Protocol, addr: &str, connect_timeout: Duration) -> Result<Self, TransportError> {
        let mut a = Self {
            protocol,
            addr: addr.to_owned(),
            connect_timeout,
            link: None,
        };
        a.ensure_link()?;
        Ok(a)
    }

    pub fn protocol(&self) -> Protocol {
        self.protocol
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }

    fn ensure_link(&mut self) -> Result<&mut Link, TransportError> {
        if self.link.is_none() {
            self.link = Some(match self.protocol {
                Protocol::Ws => Link::Ws(WsConnection::connect(&self.addr, self.connect_timeout)?),
                Protocol::Mq => Link::Mq(Connection::connect(&self.addr, self.connect_timeout)?),
            });
        }
        Ok(self.link.as_mut().expect("just connected"))
    }

    /// Send one request and wait for its reply. The envelope id must be set
    /// and increase from call to call.
    pub fn call(&mut self, req: Envelope, timeout: Duration) -> Result<Envelope, TransportError> {
        let link = self.ensure_link()?;
        let (result, broken) = match link {
            Link::Ws(c) => {
                let r = c.request_with_id(req, timeout);
                (r, c.is_broken())
            }
            Link::Mq(c) => {
                let r = c.request_with_id(req, timeout);
                (r, c.is_broken())
            }
        };
        if broken {
            self.link = None;
        }
        result
    }
}
