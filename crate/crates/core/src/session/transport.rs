//! Ordered, reliable frame transports.

use std::collections::VecDeque;
use std::io::{self, Read, Write};
use std::net::TcpStream;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use thiserror::Error;

use super::wire::{self, WireError, HEADER_LEN};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("timed out waiting for the peer")]
    Timeout,
    #[error("peer closed the connection")]
    Closed,
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

/// Moves whole encoded frames.
pub trait Transport: Send {
    fn send(&mut self, frame: &[u8]) -> Result<(), TransportError>;
    fn recv(&mut self, timeout: Duration) -> Result<Vec<u8>, TransportError>;
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn send(&mut self, frame: &[u8]) -> Result<(), TransportError> {
        (**self).send(frame)
    }

    fn recv(&mut self, timeout: Duration) -> Result<Vec<u8>, TransportError> {
        (**self).recv(timeout)
    }
}

/// One end of an in-memory channel pair.
pub struct ChannelTransport {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

pub fn channel_pair() -> (ChannelTransport, ChannelTransport) {
    let (a_tx, b_rx) = mpsc::channel();
    let (b_tx, a_rx) = mpsc::channel();
    (ChannelTransport { tx: a_tx, rx: a_rx }, ChannelTransport { tx: b_tx, rx: b_rx })
}

impl Transport for ChannelTransport {
    fn send(&mut self, frame: &[u8]) -> Result<(), TransportError> {
        self.tx.send(frame.to_vec()).map_err(|_| TransportError::Closed)
    }

    fn recv(&mut self, timeout: Duration) -> Result<Vec<u8>, TransportError> {
        self.rx.recv_timeout(timeout).map_err(|e| match e {
            RecvTimeoutError::Timeout => TransportError::Timeout,
            RecvTimeoutError::Disconnected => TransportError::Closed,
        })
    }
}

/// Frames over a TCP stream.
pub struct TcpTransport {
    stream: TcpStream,
}

impl TcpTransport {
    pub fn new(stream: TcpStream) -> io::Result<Self> {
        stream.set_nodelay(true)?;
        Ok(Self { stream })
    }
}

impl Transport for TcpTransport {
    fn send(&mut self, frame: &[u8]) -> Result<(), TransportError> {
        self.stream.write_all(frame)?;
        Ok(())
    }

    fn recv(&mut self, timeout: Duration) -> Result<Vec<u8>, TransportError> {
        self.stream.set_read_timeout(Some(timeout.max(Duration::from_millis(1))))?;
        let mut frame = vec![0u8; HEADER_LEN];
        read_full(&mut self.stream, &mut frame)?;
        let (_, len) = wire::parse_header(&frame)?;
        frame.resize(HEADER_LEN + len + 4, 0);
        read_full(&mut self.stream, &mut frame[HEADER_LEN..])?;
        Ok(frame)
    }
}

fn read_full(s: &mut TcpStream, buf: &mut [u8]) -> Result<(), TransportError> {
    s.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => TransportError::Timeout,
        io::ErrorKind::UnexpectedEof | io::ErrorKind::ConnectionReset => TransportError::Closed,
        _ => TransportError::Io(e),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Direction {
    Sent,
    Received,
}

pub type Transcript = Vec<(Direction, Vec<u8>)>;

/// Records every frame passing through the wrapped transport.
pub struct Recording<T> {
    inner: T,
    log: Arc<Mutex<Transcript>>,
}

impl<T> Recording<T> {
    pub fn new(inner: T) -> (Self, Arc<Mutex<Transcript>>) {
        let log = Arc::new(Mutex::new(Vec::new()));
        (
            Self {
                inner,
                log: log.clone(),
            },
            log,
        )
    }
}

impl<T: Transport> Transport for Recording<T> {
    fn send(&mut self, frame: &[u8]) -> Result<(), TransportError> {
        self.log.lock().unwrap().push((Direction::Sent, frame.to_vec()));
        self.inner.send(frame)
    }

    fn recv(&mut self, timeout: Duration) -> Result<Vec<u8>, TransportError> {
        let f = self.inner.recv(timeout)?;
        self.log.lock().unwrap().push((Direction::Received, f.clone()));
        Ok(f)
    }
}

/// Silently discards the outgoing frame with the given zero-based index.
pub struct Dropping<T> {
    inner: T,
    drop_index: usize,
    sent: usize,
}

impl<T> Dropping<T> {
    pub fn new(inner: T, drop_index: usize) -> Self {
        Self {
            inner,
            drop_index,
            sent: 0,
        }
    }
}

impl<T: Transport> Transport for Dropping<T> {
    fn send(&mut self, frame: &[u8]) -> Result<(), TransportError> {
        let i = self.sent;
        self.sent += 1;
        if i == self.drop_index {
            return Ok(());
        }
        self.inner.send(frame)
    }

    fn recv(&mut self, timeout: Duration) -> Result<Vec<u8>, TransportError> {
        self.inner.recv(timeout)
    }
}

/// Replays a fixed list of incoming frames and swallows outgoing ones.
/// Once the script is exhausted, `recv` reports a timeout.
pub struct Scripted {
    incoming: VecDeque<Vec<u8>>,
    pub sent: Vec<Vec<u8>>,
}

impl Scripted {
    pub fn new(incoming: Vec<Vec<u8>>) -> Self {
        Self {
            incoming: incoming.into(),
            sent: Vec::new(),
        }
    }
}

impl Transport for Scripted {
    fn send(&mut self, frame: &[u8]) -> Result<(), TransportError> {
        self.sent.push(frame.to_vec());
        Ok(())
    }

    fn recv(&mut self, _timeout: Duration) -> Result<Vec<u8>, TransportError> {
        self.incoming.pop_front().ok_or(TransportError::Timeout)
    }
}
