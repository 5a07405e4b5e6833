//! Monotonic time sources for the polling and orchestration loops.
//!
//! Everything that schedules work takes a [`Clock`] so the same code runs
//! against wall time in production and against [`SimClock`] in accelerated
//! tests. Response-window timeouts on transports stay on real time; only
//! scheduling goes through the clock.

use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

/// A monotonic clock measured from an arbitrary epoch.
pub trait Clock: Send + Sync {
    /// Time elapsed since the clock's epoch.
    fn now(&self) -> Duration;

    /// Blocks (or advances simulated time) until `deadline` is reached.
    /// Returns immediately if the deadline is already in the past.
    fn sleep_until(&self, deadline: Duration);

    fn sleep(&self, duration: Duration) {
        let deadline = self.now() + duration;
        self.sleep_until(deadline);
    }

    fn now_secs(&self) -> f64 {
        self.now().as_secs_f64()
    }
}

pub type SharedClock = Arc<dyn Clock>;

/// Wall-clock time based on [`Instant`].
pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self {
            origin: Instant::now(),
        }
    }

    pub fn shared() -> SharedClock {
        Arc::new(Self::new())
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep_until(&self, deadline: Duration) {
        let now = self.origin.elapsed();
        if deadline > now {
            std::thread::sleep(deadline - now);
        }
    }
}

/// Simulated clock where sleeping jumps time forward instead of waiting.
///
/// `sleep_until` advances the shared instant to the requested deadline, so a
/// single sleeping driver (the poll loop) pulls the whole pipeline through
/// simulated time as fast as the threads can exchange messages. Components
/// that only *read* the clock (the emulator advancing its profile) observe a
/// monotonic value.
pub struct SimClock {
    now: Mutex<Duration>,
}

impl SimClock {
    pub fn new() -> Self {
        Self {
            now: Mutex::new(Duration::ZERO),
        }
    }

    pub fn shared() -> Arc<SimClock> {
        Arc::new(Self::new())
    }

    /// Manually advances simulated time by `delta`.
    pub fn advance(&self, delta: Duration) {
        let mut now = self.now.lock().unwrap();
        *now += delta;
    }
}

impl Default for SimClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SimClock {
    fn now(&self) -> Duration {
        *self.now.lock().unwrap()
    }

    fn sleep_until(&self, deadline: Duration) {
        let mut now = self.now.lock().unwrap();
        if *now < deadline {
            *now = deadline;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sim_clock_jumps_forward_and_never_back() {
        let clock = SimClock::new();
        assert_eq!(clock.now(), Duration::ZERO);
        clock.sleep_until(Duration::from_secs(5));
        assert_eq!(clock.now(), Duration::from_secs(5));
        clock.sleep_until(Duration::from_secs(3));
        assert_eq!(clock.now(), Duration::from_secs(5));
        clock.advance(Duration::from_millis(250));
        assert_eq!(clock.now(), Duration::from_millis(5250));
    }

    #[test]
    fn system_clock_is_monotonic() {
        let clock = SystemClock::new();
        let a = clock.now();
        let b = clock.now();
        assert!(b >= a);
    }

    #[test]
    fn system_clock_sleep_until_past_deadline_returns() {
        let clock = SystemClock::new();
        clock.sleep_until(Duration::ZERO);
    }
}
