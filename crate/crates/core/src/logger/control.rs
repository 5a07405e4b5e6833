//! The minimal power-logging control protocol: one ASCII line, `start`
//! (optionally `start <label>`) or `stop`, terminated by LF or by the
//! connection closing. The client disconnects right after sending, so the
//! server never writes a single byte back.
//!
//! The stream listener is the primary form; an optional datagram listener
//! accepts the same one-line payload. Both bind to loopback unless
//! configured otherwise — the protocol carries no authentication and is
//! meant for a fully controlled lab network.

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use super::{parse_command_line, Logger};

const ACCEPT_POLL: Duration = Duration::from_millis(25);
const CLIENT_READ_TIMEOUT: Duration = Duration::from_secs(2);
const MAX_LINE_BYTES: usize = 256;

#[derive(Debug, Clone)]
pub struct ControlServerConfig {
    pub listen: SocketAddr,
    /// Also accept the same payload as single datagrams on the same port.
    pub enable_udp: bool,
}

impl Default for ControlServerConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:9595".parse().unwrap(),
            enable_udp: false,
        }
    }
}

/// Running control endpoint; dropping it (or calling [`shutdown`]) stops
/// the listener threads.
///
/// [`shutdown`]: ControlServer::shutdown
pub struct ControlServer {
    local_addr: SocketAddr,
    stop: Arc<AtomicBool>,
    threads: Vec<std::thread::JoinHandle<()>>,
}

impl ControlServer {
    /// Binds the endpoint and starts serving. A bind failure is a startup
    /// error — the daemon must not come up half-listening.
    pub fn start(config: ControlServerConfig, logger: Logger) -> io::Result<Self> {
        let listener = TcpListener::bind(config.listen)?;
        listener.set_nonblocking(true)?;
        let local_addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let mut threads = Vec::new();

        {
            let stop = stop.clone();
            let logger = logger.clone();
            threads.push(std::thread::spawn(move || {
                accept_loop(listener, logger, stop)
            }));
        }

        if config.enable_udp {
            let socket = UdpSocket::bind(local_addr)?;
            socket.set_read_timeout(Some(ACCEPT_POLL))?;
            let stop = stop.clone();
            let logger = logger.clone();
            threads.push(std::thread::spawn(move || {
                datagram_loop(socket, logger, stop)
            }));
        }

        Ok(Self {
            local_addr,
            stop,
            threads,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn shutdown(mut self) {
        self.stop_threads();
    }

    fn stop_threads(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for handle in self.threads.drain(..) {
            let _ = handle.join();
        }
    }
}

impl Drop for ControlServer {
    fn drop(&mut self) {
        self.stop_threads();
    }
}

fn accept_loop(listener: TcpListener, logger: Logger, stop: Arc<AtomicBool>) {
    loop {
        if stop.load(Ordering::SeqCst) {
            return;
        }
        match listener.accept() {
            Ok((stream, peer)) => {
                let logger = logger.clone();
                // Handle each client on its own thread; connections are
                // one-shot and the client has typically already hung up.
                std::thread::spawn(move || handle_client(stream, peer, logger));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                std::thread::sleep(ACCEPT_POLL);
            }
            Err(e) => {
                log::error!("control accept failed: {e}");
                std::thread::sleep(ACCEPT_POLL);
            }
        }
    }
}

/// Reads one line (or up to EOF) and applies it. Never writes to the stream.
fn handle_client(mut stream: TcpStream, peer: SocketAddr, logger: Logger) {
    let _ = stream.set_read_timeout(Some(CLIENT_READ_TIMEOUT));
    let mut line = Vec::with_capacity(64);
    let mut byte = [0u8; 1];
    loop {
        match stream.read(&mut byte) {
            Ok(0) => break,
            Ok(_) => {
                if byte[0] == b'\n' {
                    break;
                }
                if line.len() >= MAX_LINE_BYTES {
                    log::warn!("control line from {peer} exceeds {MAX_LINE_BYTES} bytes; ignored");
                    return;
                }
                line.push(byte[0]);
            }
            Err(e) => {
                log::warn!("control read from {peer} failed: {e}");
                return;
            }
        }
    }
    apply_line(&line, &peer.to_string(), &logger);
}

fn datagram_loop(socket: UdpSocket, logger: Logger, stop: Arc<AtomicBool>) {
    let mut buf = [0u8; MAX_LINE_BYTES + 2];
    loop {
        if stop.load(Ordering::SeqCst) {
            return;
        }
        match socket.recv_from(&mut buf) {
            Ok((n, peer)) => apply_line(&buf[..n], &peer.to_string(), &logger),
            Err(e)
                if e.kind() == io::ErrorKind::WouldBlock
                    || e.kind() == io::ErrorKind::TimedOut =>
            {
                continue
            }
            Err(e) => {
                log::error!("control datagram receive failed: {e}");
                return;
            }
        }
    }
}

fn apply_line(raw: &[u8], peer: &str, logger: &Logger) {
    let Ok(text) = std::str::from_utf8(raw) else {
        log::warn!("control line from {peer} is not UTF-8; ignored");
        return;
    };
    match parse_command_line(text) {
        Some(command) => match logger.apply_command(&command) {
            Ok(outcome) => log::info!("control {command:?} from {peer}: {outcome:?}"),
            Err(e) => log::error!("control {command:?} from {peer} failed: {e}"),
        },
        None => log::warn!("unparseable control line from {peer}: {text:?} (ignored)"),
    }
}

/// Fire-and-forget client matching the protocol's reference behaviour:
/// sends exactly one line, closes the write side, and never reads.
pub fn send_command(endpoint: impl ToSocketAddrs, line: &str) -> io::Result<()> {
    let mut stream = TcpStream::connect(endpoint)?;
    stream.write_all(line.as_bytes())?;
    if !line.ends_with('\n') {
        stream.write_all(b"\n")?;
    }
    stream.flush()?;
    stream.shutdown(std::net::Shutdown::Both)?;
    Ok(())
}
