use std::sync::atomic::{AtomicI64, Ordering};

use chrono::{TimeZone, Utc};

use crate::domain::Timestamp;

pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        Utc::now()
    }
}

/// Externally driven clock with millisecond resolution. Never moves backwards.
#[derive(Debug)]
pub struct ManualClock {
    millis: AtomicI64,
}

impl ManualClock {
    pub fn new(start: Timestamp) -> Self {
        Self { millis: AtomicI64::new(start.timestamp_millis()) }
    }

    /// Starts at [`sim_epoch`].
    pub fn at_epoch() -> Self {
        Self::new(sim_epoch())
    }

    /// Moves the clock to `t`; earlier instants are ignored. Returns the
    /// resulting time.
    pub fn set(&self, t: Timestamp) -> Timestamp {
        let target = t.timestamp_millis();
        let prev = self.millis.fetch_max(target, Ordering::SeqCst);
        from_millis(prev.max(target))
    }

    pub fn advance(&self, seconds: f64) -> Timestamp {
        let delta = (seconds * 1000.0).round() as i64;
        from_millis(self.millis.fetch_add(delta.max(0), Ordering::SeqCst) + delta.max(0))
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Timestamp {
        from_millis(self.millis.load(Ordering::SeqCst))
    }
}

fn from_millis(ms: i64) -> Timestamp {
    Utc.timestamp_millis_opt(ms).single().expect("timestamp in range")
}

/// Time zero of simulated runs: 2024-01-01T00:00:00Z.
pub fn sim_epoch() -> Timestamp {
    Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()
}

/// `seconds` after [`sim_epoch`], rounded to the millisecond.
pub fn sim_time(seconds: f64) -> Timestamp {
    sim_epoch() + seconds_to_duration(seconds)
}

/// Seconds elapsed from `from` to `to`, millisecond resolution.
pub fn seconds_between(from: Timestamp, to: Timestamp) -> f64 {
    (to - from).num_milliseconds() as f64 / 1000.0
}

pub fn seconds_to_duration(seconds: f64) -> chrono::Duration {
    chrono::Duration::milliseconds((seconds * 1000.0).round() as i64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manual_clock_is_monotone() {
        let clock = ManualClock::at_epoch();
        assert_eq!(clock.now(), sim_epoch());
        assert_eq!(clock.advance(1.5), sim_time(1.5));
        assert_eq!(clock.set(sim_time(1.0)), sim_time(1.5));
        assert_eq!(clock.set(sim_time(10.0)), sim_time(10.0));
        assert_eq!(seconds_between(sim_epoch(), clock.now()), 10.0);
    }
}
