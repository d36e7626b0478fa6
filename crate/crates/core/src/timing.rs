//! Region timing.
//!
//! On x86-64 hosts with an invariant timestamp counter, timestamps are taken
//! with `lfence; rdtsc; lfence` so that the read is ordered against the work
//! being measured. Ticks are converted to nanoseconds using a ratio calibrated
//! once per process against the monotonic clock. Hosts without an invariant
//! counter (or with `OLAPBENCH_TIMER=wallclock`) fall back to the monotonic
//! clock, and [`Clock::source`] reports which one is in use.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimerSource {
    Tsc,
    WallClock,
}

impl TimerSource {
    pub fn as_str(self) -> &'static str {
        match self {
            TimerSource::Tsc => "tsc",
            TimerSource::WallClock => "wallclock",
        }
    }
}

/// An opaque point in time taken from a [`Clock`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Stamp(u64);

#[derive(Debug)]
pub struct Clock {
    source: TimerSource,
    ns_per_tick: f64,
    origin: Instant,
}

static GLOBAL: OnceLock<Clock> = OnceLock::new();

impl Clock {
    pub fn global() -> &'static Clock {
        GLOBAL.get_or_init(Clock::calibrate)
    }

    fn calibrate() -> Clock {
        let forced_wall = std::env::var("OLAPBENCH_TIMER")
            .map(|v| v.eq_ignore_ascii_case("wallclock"))
            .unwrap_or(false);
        let origin = Instant::now();
        if forced_wall || !tsc::invariant() {
            return Clock {
                source: TimerSource::WallClock,
                ns_per_tick: 1.0,
                origin,
            };
        }
        let t0 = Instant::now();
        let c0 = tsc::read();
        std::thread::sleep(Duration::from_millis(20));
        let c1 = tsc::read();
        let elapsed = t0.elapsed().as_nanos() as f64;
        let ticks = c1.wrapping_sub(c0) as f64;
        if ticks <= 0.0 {
            return Clock {
                source: TimerSource::WallClock,
                ns_per_tick: 1.0,
                origin,
            };
        }
        Clock {
            source: TimerSource::Tsc,
            ns_per_tick: elapsed / ticks,
            origin,
        }
    }

    pub fn source(&self) -> TimerSource {
        self.source
    }

    #[inline]
    pub fn now(&self) -> Stamp {
        match self.source {
            TimerSource::Tsc => Stamp(tsc::read()),
            TimerSource::WallClock => Stamp(self.origin.elapsed().as_nanos() as u64),
        }
    }

    /// Nanoseconds between two stamps; zero if `end` precedes `start`.
    #[inline]
    pub fn ns_between(&self, start: Stamp, end: Stamp) -> u64 {
        let ticks = end.0.saturating_sub(start.0);
        match self.source {
            TimerSource::Tsc => (ticks as f64 * self.ns_per_tick).round() as u64,
            TimerSource::WallClock => ticks,
        }
    }

    #[inline]
    pub fn elapsed_ns(&self, start: Stamp) -> u64 {
        self.ns_between(start, self.now())
    }
}

/// Runs `f` and returns its result together with the elapsed nanoseconds.
pub fn timed<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let clock = Clock::global();
    let start = clock.now();
    let out = f();
    (out, clock.elapsed_ns(start))
}

#[cfg(target_arch = "x86_64")]
mod tsc {
    use std::arch::x86_64::{__cpuid, _mm_lfence, _rdtsc};

    pub fn invariant() -> bool {
        // CPUID.80000007H:EDX[8]
        let max_ext = __cpuid(0x8000_0000).eax;
        if max_ext < 0x8000_0007 {
            return false;
        }
        __cpuid(0x8000_0007).edx & (1 << 8) != 0
    }

    #[inline(always)]
    pub fn read() -> u64 {
        unsafe {
            _mm_lfence();
            let t = _rdtsc();
            _mm_lfence();
            t
        }
    }
}

#[cfg(not(target_arch = "x86_64"))]
mod tsc {
    pub fn invariant() -> bool {
        false
    }

    pub fn read() -> u64 {
        0
    }
}
