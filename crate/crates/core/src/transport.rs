//! Blocking request/response over one TCP connection per exchange.

use std::io;
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use thiserror::Error;

use crate::codec::{read_frame, write_frame, ProtocolError};
use crate::protocol::{ErrorReply, Message};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("connect to {addr}: {source}")]
    Connect { addr: String, source: io::Error },
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("server closed the connection without replying")]
    NoReply,
    #[error("server error {:?}: {}", .0.kind, .0.message)]
    Server(ErrorReply),
}

impl TransportError {
    /// Network-level failures worth retrying; in-band server errors are not.
    pub fn is_transient(&self) -> bool {
        matches!(
            self,
            TransportError::Connect { .. } | TransportError::Io(_) | TransportError::NoReply
        ) || matches!(self, TransportError::Protocol(ProtocolError::Io(_)))
    }
}

#[derive(Clone, Debug)]
pub struct Endpoint {
    pub addr: String,
    pub timeout: Duration,
}

impl Endpoint {
    pub fn new(addr: impl Into<String>) -> Self {
        Endpoint {
            addr: addr.into(),
            timeout: Duration::from_secs(60),
        }
    }

    /// Sends `msg` and returns the reply. Server `Error` replies become
    /// [`TransportError::Server`].
    pub fn call(&self, msg: &Message) -> Result<Message, TransportError> {
        match self.exchange(msg)? {
            Message::Error(e) => Err(TransportError::Server(e)),
            other => Ok(other),
        }
    }

    /// Like [`call`](Self::call) but returns `Error` replies as messages.
    pub fn exchange(&self, msg: &Message) -> Result<Message, TransportError> {
        let addr = self
            .addr
            .to_socket_addrs()
            .map_err(|source| TransportError::Connect {
                addr: self.addr.clone(),
                source,
            })?
            .next()
            .ok_or_else(|| TransportError::Connect {
                addr: self.addr.clone(),
                source: io::Error::new(io::ErrorKind::NotFound, "no address"),
            })?;
        let stream = TcpStream::connect_timeout(&addr, self.timeout).map_err(|source| {
            TransportError::Connect {
                addr: self.addr.clone(),
                source,
            }
        })?;
        stream.set_read_timeout(Some(self.timeout))?;
        stream.set_write_timeout(Some(self.timeout))?;
        stream.set_nodelay(true)?;
        write_frame(&stream, msg)?;
        read_frame(&stream)?.ok_or(TransportError::NoReply)
    }
}
