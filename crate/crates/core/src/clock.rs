//! Time sources shared by every loop in the stack.
//!
//! All periodic components (simulator ticker, teleop loop, recorder, broker,
//! latency injection) read time through [`Clock`]. Two implementations exist:
//!
//! * [`SystemClock`] follows the wall clock and really sleeps. Its epoch is
//!   the Unix epoch, so separate processes on one host agree on timestamps.
//! * [`VirtualClock`] is an accelerated clock: sleeping advances virtual time
//!   immediately and runs registered advance hooks (the simulator uses one to
//!   step the world on its 250 Hz grid). It assumes a single logical flow of
//!   control at any instant, e.g. one control loop plus request handlers that
//!   only run while that loop is blocked on them. Under that assumption every
//!   run is bit-for-bit reproducible.

use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use parking_lot::Mutex;

pub trait Clock: Send + Sync {
    /// Time elapsed since the clock's epoch.
    fn now(&self) -> Duration;

    /// Block until `deadline` (relative to the epoch). Returns immediately
    /// when the deadline is already in the past.
    fn sleep_until(&self, deadline: Duration);

    fn sleep(&self, d: Duration) {
        self.sleep_until(self.now() + d);
    }

    /// True for clocks whose time does not follow the wall clock.
    fn is_virtual(&self) -> bool {
        false
    }

    /// Register a callback invoked with the new time whenever a virtual clock
    /// advances. Real clocks ignore hooks; returns false in that case.
    fn on_advance(&self, _hook: Box<dyn Fn(Duration) + Send + Sync>) -> bool {
        false
    }

    fn now_ms(&self) -> f64 {
        self.now().as_secs_f64() * 1e3
    }
}

pub type SharedClock = Arc<dyn Clock>;

#[derive(Debug, Clone)]
pub struct SystemClock {
    start: Instant,
    /// Unix time at `start`; later readings advance monotonically from it.
    base: Duration,
}

impl SystemClock {
    pub fn new() -> Self {
        Self {
            start: Instant::now(),
            base: SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default(),
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
        self.base + self.start.elapsed()
    }

    fn sleep_until(&self, deadline: Duration) {
        // thread::sleep overshoots by up to a scheduler quantum; sleep most of
        // the way and spin the last stretch so 12 ms ticks stay on grid.
        const SPIN: Duration = Duration::from_micros(300);
        loop {
            let now = self.now();
            if now >= deadline {
                return;
            }
            let left = deadline - now;
            if left > SPIN {
                std::thread::sleep(left - SPIN);
            } else {
                std::thread::yield_now();
            }
        }
    }
}

type Hook = Box<dyn Fn(Duration) + Send + Sync>;

#[derive(Default)]
pub struct VirtualClock {
    now: Mutex<Duration>,
    hooks: Mutex<Vec<Arc<Hook>>>,
    // Serializes advances so hooks observe times in order.
    advancing: Mutex<()>,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn shared() -> Arc<Self> {
        Arc::new(Self::new())
    }

    fn advance_to(&self, t: Duration) {
        let _guard = self.advancing.lock();
        {
            let mut now = self.now.lock();
            if t <= *now {
                return;
            }
            *now = t;
        }
        let hooks: Vec<Arc<Hook>> = self.hooks.lock().clone();
        for hook in hooks {
            hook(t);
        }
    }
}

impl std::fmt::Debug for VirtualClock {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VirtualClock")
            .field("now", &*self.now.lock())
            .field("hooks", &self.hooks.lock().len())
            .finish()
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> Duration {
        *self.now.lock()
    }

    fn sleep_until(&self, deadline: Duration) {
        self.advance_to(deadline);
    }

    fn is_virtual(&self) -> bool {
        true
    }

    fn on_advance(&self, hook: Box<dyn Fn(Duration) + Send + Sync>) -> bool {
        self.hooks.lock().push(Arc::new(hook));
        true
    }
}

/// Tick period for a loop rate. Rates whose period lies within 10 us of a
/// whole millisecond snap to it, so 83.3 Hz becomes an exact 12 ms tick.
pub fn period_from_rate(rate_hz: f64) -> Duration {
    assert!(rate_hz > 0.0 && rate_hz.is_finite(), "rate must be positive");
    let ms = 1e3 / rate_hz;
    if (ms - ms.round()).abs() < 0.01 {
        Duration::from_millis(ms.round() as u64)
    } else {
        Duration::from_secs_f64(ms / 1e3)
    }
}

/// Fixed-period deadline generator. Deadlines stay on the grid
/// `anchor + k * period`; ticks that are already a full period late are
/// skipped and counted as missed.
#[derive(Debug, Clone)]
pub struct Ticker {
    anchor: Duration,
    period: Duration,
    index: u64,
    missed: u64,
}

impl Ticker {
    pub fn new(anchor: Duration, period: Duration) -> Self {
        assert!(!period.is_zero(), "ticker period must be positive");
        Self {
            anchor,
            period,
            index: 0,
            missed: 0,
        }
    }

    pub fn from_rate(anchor: Duration, rate_hz: f64) -> Self {
        Self::new(anchor, period_from_rate(rate_hz))
    }

    pub fn period(&self) -> Duration {
        self.period
    }

    pub fn next_deadline(&self) -> Duration {
        self.anchor + self.period * u32::try_from(self.index).expect("tick index overflow")
    }

    pub fn missed(&self) -> u64 {
        self.missed
    }

    /// Sleep until the next deadline and return the tick index.
    pub fn wait(&mut self, clock: &dyn Clock) -> u64 {
        let now = clock.now();
        // Skip ticks we are already more than one period late for.
        while now >= self.next_deadline() + self.period {
            self.index += 1;
            self.missed += 1;
        }
        clock.sleep_until(self.next_deadline());
        let idx = self.index;
        self.index += 1;
        idx
    }

    /// Restart the grid at `anchor`.
    pub fn reanchor(&mut self, anchor: Duration) {
        self.anchor = anchor;
        self.index = 0;
    }
}
