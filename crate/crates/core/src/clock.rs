//! Time source abstraction so rate limiting, retry backoff, and date
//! stamping can run against a simulated clock in tests.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use chrono::NaiveDate;

/// A monotonic clock plus a calendar date source.
///
/// `now` reports time elapsed since an arbitrary epoch fixed at clock
/// construction; only differences are meaningful.
pub trait Clock: Send + Sync {
    fn now(&self) -> Duration;
    fn sleep(&self, duration: Duration);
    fn today(&self) -> NaiveDate;
}

/// Wall-clock implementation used outside of tests.
pub struct SystemClock {
    start: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        SystemClock { start: Instant::now() }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.start.elapsed()
    }

    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }

    fn today(&self) -> NaiveDate {
        chrono::Utc::now().date_naive()
    }
}

/// Simulated clock: `sleep` advances time instantly. Shared freely across
/// threads; all arithmetic happens under one lock so observed timestamps
/// are consistent.
pub struct SimClock {
    elapsed: Mutex<Duration>,
    today: NaiveDate,
}

impl SimClock {
    pub fn new(today: NaiveDate) -> Self {
        SimClock {
            elapsed: Mutex::new(Duration::ZERO),
            today,
        }
    }

    /// Fixed date chosen so "current year" logic resolves deterministically.
    pub fn at_2018() -> Self {
        Self::new(NaiveDate::from_ymd_opt(2018, 6, 1).unwrap())
    }

    pub fn advance(&self, duration: Duration) {
        *self.elapsed.lock().unwrap() += duration;
    }
}

impl Clock for SimClock {
    fn now(&self) -> Duration {
        *self.elapsed.lock().unwrap()
    }

    fn sleep(&self, duration: Duration) {
        self.advance(duration);
    }

    fn today(&self) -> NaiveDate {
        self.today
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sim_clock_advances_on_sleep() {
        let clock = SimClock::at_2018();
        assert_eq!(clock.now(), Duration::ZERO);
        clock.sleep(Duration::from_millis(250));
        clock.sleep(Duration::from_millis(250));
        assert_eq!(clock.now(), Duration::from_millis(500));
        assert_eq!(clock.today(), NaiveDate::from_ymd_opt(2018, 6, 1).unwrap());
    }

    #[test]
    fn system_clock_is_monotonic() {
        let clock = SystemClock::new();
        let a = clock.now();
        let b = clock.now();
        assert!(b >= a);
    }
}
