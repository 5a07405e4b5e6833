//! Built-in open-loop constant-rate HTTP load generator: a desk-scale
//! stand-in for a heavyweight benchmark client.
//!
//! Open loop means the request schedule is fixed up front — request `i`
//! fires at `start + i / rate` regardless of how the target keeps up — so a
//! slowing target shows up as errors and a lower achieved rate, never as a
//! silently reduced offered load. Workers share the schedule through an
//! atomic index; each owns one keep-alive connection.

use std::io::{self, Read, Write};
use std::net::TcpStream;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HttpGenError {
    #[error("rate must be non-negative, got {0}")]
    NegativeRate(f64),
    #[error("duration must be positive, got {0:?}")]
    NonPositiveDuration(Duration),
    #[error("invalid target url {url}: {reason}")]
    BadUrl { url: String, reason: String },
}

#[derive(Debug, Clone)]
pub struct HttpWorkload {
    pub url: String,
    /// Target request rate in requests per second; 0 means idle.
    pub rate_rps: f64,
    pub duration: Duration,
    pub timeout: Duration,
    pub connections: usize,
}

impl HttpWorkload {
    pub fn new(url: impl Into<String>, rate_rps: f64, duration: Duration) -> Self {
        Self {
            url: url.into(),
            rate_rps,
            duration,
            timeout: Duration::from_secs(2),
            connections: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GenerateOutcome {
    /// Completed requests with a 2xx status.
    pub request_count: u64,
    /// Everything else: non-2xx statuses, timeouts, connection failures.
    pub errors: u64,
    pub achieved_rate_rps: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Target {
    host: String,
    port: u16,
    path: String,
}

fn parse_target(raw: &str) -> Result<Target, HttpGenError> {
    let url = url::Url::parse(raw).map_err(|e| HttpGenError::BadUrl {
        url: raw.to_string(),
        reason: e.to_string(),
    })?;
    if url.scheme() != "http" {
        return Err(HttpGenError::BadUrl {
            url: raw.to_string(),
            reason: format!("unsupported scheme {:?}", url.scheme()),
        });
    }
    let host = url
        .host_str()
        .ok_or_else(|| HttpGenError::BadUrl {
            url: raw.to_string(),
            reason: "missing host".to_string(),
        })?
        .to_string();
    Ok(Target {
        port: url.port().unwrap_or(80),
        path: if url.path().is_empty() {
            "/".to_string()
        } else {
            url.path().to_string()
        },
        host,
    })
}

/// One GET over a kept-alive connection; reconnects when the pooled
/// connection is stale or absent. Returns the status code.
fn fetch_once(
    connection: &mut Option<TcpStream>,
    target: &Target,
    timeout: Duration,
) -> io::Result<u16> {
    let deadline = Instant::now() + timeout;
    for attempt in 0..2 {
        if connection.is_none() {
            let stream = TcpStream::connect((target.host.as_str(), target.port))?;
            stream.set_nodelay(true)?;
            *connection = Some(stream);
        }
        let stream = connection.as_mut().unwrap();
        let remaining = deadline
            .checked_duration_since(Instant::now())
            .ok_or_else(|| io::Error::new(io::ErrorKind::TimedOut, "request timed out"))?;
        stream.set_read_timeout(Some(remaining.max(Duration::from_millis(1))))?;
        stream.set_write_timeout(Some(remaining.max(Duration::from_millis(1))))?;

        let request = format!(
            "GET {} HTTP/1.1\r\nHost: {}\r\nConnection: keep-alive\r\n\r\n",
            target.path, target.host
        );
        match stream
            .write_all(request.as_bytes())
            .and_then(|()| read_response(stream))
        {
            Ok(status) => return Ok(status),
            Err(e) => {
                // A dead pooled connection gets one fresh retry; a failure
                // on a fresh connection is the real answer.
                *connection = None;
                if attempt == 1 || e.kind() == io::ErrorKind::TimedOut {
                    return Err(e);
                }
            }
        }
    }
    unreachable!("loop either returns a status or an error")
}

/// Reads one HTTP/1.1 response (status line, headers, `Content-Length`
/// body) and leaves the stream positioned for the next request.
fn read_response(stream: &mut TcpStream) -> io::Result<u16> {
    let mut head = Vec::with_capacity(256);
    let mut byte = [0u8; 1];
    while !head.ends_with(b"\r\n\r\n") {
        match stream.read(&mut byte)? {
            0 => return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "peer closed")),
            _ => head.push(byte[0]),
        }
        if head.len() > 16 * 1024 {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                "oversized response head",
            ));
        }
    }
    let text = String::from_utf8_lossy(&head);
    let status: u16 = text
        .split_whitespace()
        .nth(1)
        .and_then(|code| code.parse().ok())
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "bad status line"))?;
    let content_length: usize = text
        .lines()
        .find_map(|line| {
            let (name, value) = line.split_once(':')?;
            name.eq_ignore_ascii_case("content-length")
                .then(|| value.trim().parse().ok())?
        })
        .unwrap_or(0);
    let mut remaining = content_length;
    let mut chunk = [0u8; 1024];
    while remaining > 0 {
        let n = stream.read(&mut chunk[..remaining.min(chunk.len())])?;
        if n == 0 {
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "short body"));
        }
        remaining -= n;
    }
    Ok(status)
}

/// Runs the workload to completion and reports aggregate counts. A zero
/// rate sleeps for the duration and returns zero counts (the idle point).
pub fn generate(workload: &HttpWorkload) -> Result<GenerateOutcome, HttpGenError> {
    if workload.rate_rps < 0.0 {
        return Err(HttpGenError::NegativeRate(workload.rate_rps));
    }
    if workload.duration.is_zero() {
        return Err(HttpGenError::NonPositiveDuration(workload.duration));
    }
    if workload.rate_rps == 0.0 {
        std::thread::sleep(workload.duration);
        return Ok(GenerateOutcome::default());
    }
    let target = parse_target(&workload.url)?;
    let duration_s = workload.duration.as_secs_f64();
    let total_requests = (workload.rate_rps * duration_s).floor() as u64;
    let workers = workload.connections.max(1);

    let next_index = AtomicU64::new(0);
    let ok_count = AtomicU64::new(0);
    let error_count = AtomicU64::new(0);
    let start = Instant::now();

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| {
                let mut connection: Option<TcpStream> = None;
                loop {
                    let index = next_index.fetch_add(1, Ordering::Relaxed);
                    if index >= total_requests {
                        return;
                    }
                    let deadline = start + Duration::from_secs_f64(index as f64 / workload.rate_rps);
                    if let Some(wait) = deadline.checked_duration_since(Instant::now()) {
                        std::thread::sleep(wait);
                    }
                    match fetch_once(&mut connection, &target, workload.timeout) {
                        Ok(status) if (200..300).contains(&status) => {
                            ok_count.fetch_add(1, Ordering::Relaxed);
                        }
                        Ok(_) | Err(_) => {
                            error_count.fetch_add(1, Ordering::Relaxed);
                        }
                    }
                }
            });
        }
    });

    let request_count = ok_count.into_inner();
    Ok(GenerateOutcome {
        request_count,
        errors: error_count.into_inner(),
        achieved_rate_rps: request_count as f64 / duration_s,
    })
}
