//! Abstract duplex byte-stream transport, so the same master runs over a
//! serial adapter bridge, a network socket, or an in-memory pipe pair in
//! tests. Receive deadlines are wall-clock: a response window is a property
//! of the physical link, not of simulated time.

use std::collections::VecDeque;
use std::io;
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::mpsc;
use std::time::Duration;

pub trait Transport: Send {
    /// Writes one complete frame.
    fn send(&mut self, frame: &[u8]) -> io::Result<()>;

    /// Reads up to `buf.len()` bytes, waiting at most `timeout`.
    /// `Ok(0)` means the peer closed; a deadline expiry surfaces as
    /// [`io::ErrorKind::TimedOut`].
    fn recv(&mut self, buf: &mut [u8], timeout: Duration) -> io::Result<usize>;
}

pub struct TcpTransport {
    stream: TcpStream,
}

impl TcpTransport {
    pub fn connect(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self { stream })
    }

    pub fn from_stream(stream: TcpStream) -> io::Result<Self> {
        stream.set_nodelay(true)?;
        Ok(Self { stream })
    }
}

impl Transport for TcpTransport {
    fn send(&mut self, frame: &[u8]) -> io::Result<()> {
        use io::Write;
        self.stream.write_all(frame)?;
        self.stream.flush()
    }

    fn recv(&mut self, buf: &mut [u8], timeout: Duration) -> io::Result<usize> {
        use io::Read;
        // A zero timeout would mean "block forever" to the socket layer.
        self.stream
            .set_read_timeout(Some(timeout.max(Duration::from_millis(1))))?;
        match self.stream.read(buf) {
            Ok(n) => Ok(n),
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                Err(io::Error::new(io::ErrorKind::TimedOut, "read timed out"))
            }
            Err(e) => Err(e),
        }
    }
}

/// In-memory duplex byte stream built from two crossed channels.
pub struct PipeTransport {
    tx: mpsc::Sender<Vec<u8>>,
    rx: mpsc::Receiver<Vec<u8>>,
    pending: VecDeque<u8>,
}

/// Creates a connected transport pair; bytes written to one side are read
/// from the other.
pub fn pipe() -> (PipeTransport, PipeTransport) {
    let (tx_a, rx_b) = mpsc::channel();
    let (tx_b, rx_a) = mpsc::channel();
    (
        PipeTransport {
            tx: tx_a,
            rx: rx_a,
            pending: VecDeque::new(),
        },
        PipeTransport {
            tx: tx_b,
            rx: rx_b,
            pending: VecDeque::new(),
        },
    )
}

impl Transport for PipeTransport {
    fn send(&mut self, frame: &[u8]) -> io::Result<()> {
        self.tx
            .send(frame.to_vec())
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "pipe peer dropped"))
    }

    fn recv(&mut self, buf: &mut [u8], timeout: Duration) -> io::Result<usize> {
        if self.pending.is_empty() {
            match self.rx.recv_timeout(timeout) {
                Ok(chunk) => self.pending.extend(chunk),
                Err(mpsc::RecvTimeoutError::Timeout) => {
                    return Err(io::Error::new(io::ErrorKind::TimedOut, "read timed out"))
                }
                Err(mpsc::RecvTimeoutError::Disconnected) => return Ok(0),
            }
        }
        let n = buf.len().min(self.pending.len());
        for slot in buf.iter_mut().take(n) {
            *slot = self.pending.pop_front().unwrap();
        }
        Ok(n)
    }
}
