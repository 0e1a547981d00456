//! Per-node clocks.
//!
//! Two models are provided. [`NodeClock::interval_now`] is a
//! bounded-uncertainty clock returning `[earliest, latest]` around true time.
//! [`LocalClock`] and [`DriftTimer`] model plain local timers whose rate is
//! off by a bounded fraction; they can measure durations but say nothing
//! about other nodes' clocks.

use core::fmt;
use core::time::Duration;

use crate::rng::SeededRng;
use crate::time::{nanos, SimTime};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TimeInterval {
    pub earliest: SimTime,
    pub latest: SimTime,
}

impl TimeInterval {
    pub fn new(earliest: SimTime, latest: SimTime) -> Self {
        debug_assert!(earliest <= latest);
        TimeInterval { earliest, latest }
    }

    pub fn point(t: SimTime) -> Self {
        TimeInterval { earliest: t, latest: t }
    }

    pub fn contains(&self, t: SimTime) -> bool {
        self.earliest <= t && t <= self.latest
    }

    pub fn width(&self) -> Duration {
        self.latest - self.earliest
    }
}

impl fmt::Display for TimeInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}]", self.earliest, self.latest)
    }
}

/// True iff `t1` was certainly recorded more than `delta` before `now` was read:
/// `t1.latest + delta < now.earliest`.
pub fn is_older_than(t1: TimeInterval, delta: Duration, now: TimeInterval) -> bool {
    t1.latest + delta < now.earliest
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClockConfig {
    /// Healthy readings lie within [true - max_error, true + max_error].
    pub max_error: Duration,
    pub monotonic: bool,
    /// Fraction of `max_error` by which each side of a reading may shrink.
    pub jitter: f64,
    /// Fault injection: from this instant the reported time advances at
    /// `broken_rate` times true speed, so the bounds stop containing true time.
    pub broken_from: Option<SimTime>,
    pub broken_rate: f64,
}

impl Default for ClockConfig {
    fn default() -> Self {
        ClockConfig {
            max_error: Duration::from_micros(50),
            monotonic: true,
            jitter: 0.9,
            broken_from: None,
            broken_rate: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NodeClock {
    cfg: ClockConfig,
    rng: SeededRng,
    last: Option<TimeInterval>,
}

impl NodeClock {
    pub fn new(cfg: ClockConfig, rng: SeededRng) -> Self {
        NodeClock { cfg, rng, last: None }
    }

    pub fn config(&self) -> &ClockConfig {
        &self.cfg
    }

    pub fn break_from(&mut self, at: SimTime, rate: f64) {
        self.cfg.broken_from = Some(at);
        self.cfg.broken_rate = rate;
    }

    pub fn is_broken_at(&self, now: SimTime) -> bool {
        matches!(self.cfg.broken_from, Some(b) if now >= b)
    }

    /// Reads the clock at true time `now`.
    pub fn interval_now(&mut self, now: SimTime) -> TimeInterval {
        let err = nanos(self.cfg.max_error) as i128;
        let base: i128 = match self.cfg.broken_from {
            Some(b) if now >= b => {
                let since = (now.as_nanos() - b.as_nanos()) as f64;
                b.as_nanos() as i128 + (since * self.cfg.broken_rate) as i128
            }
            _ => now.as_nanos() as i128,
        };
        // Each side of the interval is shrunk by a random amount so readings
        // vary but stay inside [truth - err, truth + err].
        let (below, above) = if err > 0 && self.cfg.jitter > 0.0 {
            let span = err as f64 * self.cfg.jitter.min(1.0);
            let lo = err - (span * self.rng.unit()) as i128;
            let hi = err - (span * self.rng.unit()) as i128;
            (lo, hi)
        } else {
            (err, err)
        };
        let clamp = |x: i128| SimTime::from_nanos(x.clamp(0, u64::MAX as i128) as u64);
        let mut reading = TimeInterval::new(clamp(base - below), clamp(base + above));
        if self.cfg.monotonic {
            if let Some(prev) = self.last {
                reading.earliest = reading.earliest.max(prev.earliest);
                reading.latest = reading.latest.max(prev.latest);
            }
            self.last = Some(reading);
        }
        reading
    }
}

/// A node-local monotonic clock that runs `1 + rate` times true speed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalClock {
    pub rate: f64,
}

impl LocalClock {
    pub fn new(rate: f64) -> Self {
        debug_assert!(rate > -1.0);
        LocalClock { rate }
    }

    pub fn now(&self, true_now: SimTime) -> SimTime {
        let t = true_now.as_nanos() as f64;
        SimTime::from_nanos((t * (1.0 + self.rate)) as u64)
    }

    pub fn start_timer(&self, true_now: SimTime) -> DriftTimer {
        DriftTimer {
            start_local: self.now(true_now),
            clock: *self,
        }
    }
}

/// Measures elapsed time on a drifting [`LocalClock`].
///
/// With drift bounded by `epsilon` over a measured duration `delta`
/// (`|rate| <= epsilon / delta`, error scaling linearly with the measured
/// duration), a reading of `delta + epsilon` implies at least `delta` of true
/// time passed and a reading below `delta - epsilon` implies less than
/// `delta` passed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriftTimer {
    start_local: SimTime,
    clock: LocalClock,
}

impl DriftTimer {
    pub fn elapsed(&self, true_now: SimTime) -> Duration {
        self.clock.now(true_now) - self.start_local
    }

    pub fn elapsed_at_least(&self, true_now: SimTime, d: Duration) -> bool {
        self.elapsed(true_now) >= d
    }

    pub fn elapsed_less_than(&self, true_now: SimTime, d: Duration) -> bool {
        self.elapsed(true_now) < d
    }

    /// Time until `elapsed_at_least(d)` can become true, in true time
    /// (rounded up by a nanosecond so a wakeup lands after the threshold).
    pub fn true_time_until(&self, true_now: SimTime, d: Duration) -> Duration {
        let remaining = d.saturating_sub(self.elapsed(true_now));
        if remaining.is_zero() {
            return Duration::ZERO;
        }
        let scaled = nanos(remaining) as f64 / (1.0 + self.clock.rate);
        Duration::from_nanos(scaled as u64 + 1)
    }
}

/// Maximum drift rate for a bound of `epsilon` while measuring `delta`.
pub fn max_drift_rate(epsilon: Duration, delta: Duration) -> f64 {
    if delta.is_zero() {
        return 0.0;
    }
    nanos(epsilon) as f64 / nanos(delta) as f64
}
