//! Minimal HTTP stub server with a token-bucket rate cap: the known-capacity
//! system under test for calibration and ladder tests. Requests beyond the
//! cap are answered `503`, so the generator sees them as errors.

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

const ACCEPT_POLL: Duration = Duration::from_millis(20);

#[derive(Debug, Clone)]
pub struct StubConfig {
    /// Sustained requests per second this stub will accept; `None` means
    /// uncapped, `Some(0.0)` rejects everything.
    pub cap_rps: Option<f64>,
    /// Artificial service delay before each response.
    pub response_delay: Duration,
    pub body: &'static str,
}

impl Default for StubConfig {
    fn default() -> Self {
        Self {
            cap_rps: None,
            response_delay: Duration::ZERO,
            body: "ok",
        }
    }
}

#[derive(Debug, Default)]
pub struct StubCounters {
    pub served_ok: AtomicU64,
    pub rejected: AtomicU64,
}

struct TokenBucket {
    tokens: f64,
    last_refill: Instant,
    rate: f64,
    burst: f64,
}

impl TokenBucket {
    fn new(rate: f64) -> Self {
        Self {
            tokens: 0.0,
            last_refill: Instant::now(),
            rate,
            burst: (rate * 0.02).max(1.0),
        }
    }

    fn take(&mut self) -> bool {
        let now = Instant::now();
        self.tokens = (self.tokens + self.rate * (now - self.last_refill).as_secs_f64())
            .min(self.burst);
        self.last_refill = now;
        if self.tokens >= 1.0 {
            self.tokens -= 1.0;
            true
        } else {
            false
        }
    }
}

/// A running stub; dropping it shuts the listener down.
pub struct StubServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    counters: Arc<StubCounters>,
    accept_thread: Option<std::thread::JoinHandle<()>>,
}

impl StubServer {
    pub fn start(config: StubConfig) -> io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let counters = Arc::new(StubCounters::default());
        let bucket = config.cap_rps.map(|rate| Arc::new(Mutex::new(TokenBucket::new(rate))));

        let accept_stop = stop.clone();
        let accept_counters = counters.clone();
        let accept_thread = std::thread::spawn(move || loop {
            if accept_stop.load(Ordering::SeqCst) {
                return;
            }
            match listener.accept() {
                Ok((stream, _)) => {
                    let config = config.clone();
                    let bucket = bucket.clone();
                    let counters = accept_counters.clone();
                    let stop = accept_stop.clone();
                    std::thread::spawn(move || serve_connection(stream, config, bucket, counters, stop));
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                    std::thread::sleep(ACCEPT_POLL);
                }
                Err(_) => return,
            }
        });

        Ok(Self {
            addr,
            stop,
            counters,
            accept_thread: Some(accept_thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}/", self.addr)
    }

    pub fn counters(&self) -> &StubCounters {
        &self.counters
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(handle) = self.accept_thread.take() {
            let _ = handle.join();
        }
    }
}

fn serve_connection(
    mut stream: TcpStream,
    config: StubConfig,
    bucket: Option<Arc<Mutex<TokenBucket>>>,
    counters: Arc<StubCounters>,
    stop: Arc<AtomicBool>,
) {
    let _ = stream.set_nodelay(true);
    let _ = stream.set_read_timeout(Some(Duration::from_millis(500)));
    let mut head = Vec::with_capacity(256);
    let mut byte = [0u8; 1];
    loop {
        if stop.load(Ordering::SeqCst) {
            return;
        }
        head.clear();
        // Read one request head; keep-alive clients send the next request
        // on the same connection.
        loop {
            match stream.read(&mut byte) {
                Ok(0) => return,
                Ok(_) => {
                    head.push(byte[0]);
                    if head.ends_with(b"\r\n\r\n") {
                        break;
                    }
                    if head.len() > 16 * 1024 {
                        return;
                    }
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock
                    || e.kind() == io::ErrorKind::TimedOut =>
                {
                    if stop.load(Ordering::SeqCst) || head.is_empty() {
                        return;
                    }
                }
                Err(_) => return,
            }
        }

        if !config.response_delay.is_zero() {
            std::thread::sleep(config.response_delay);
        }
        let admitted = match &bucket {
            Some(bucket) => bucket.lock().unwrap().take(),
            None => true,
        };
        let response = if admitted {
            counters.served_ok.fetch_add(1, Ordering::Relaxed);
            format!(
                "HTTP/1.1 200 OK\r\nContent-Length: {}\r\nConnection: keep-alive\r\n\r\n{}",
                config.body.len(),
                config.body
            )
        } else {
            counters.rejected.fetch_add(1, Ordering::Relaxed);
            "HTTP/1.1 503 Service Unavailable\r\nContent-Length: 0\r\nConnection: keep-alive\r\n\r\n"
                .to_string()
        };
        if stream.write_all(response.as_bytes()).is_err() {
            return;
        }
    }
}
