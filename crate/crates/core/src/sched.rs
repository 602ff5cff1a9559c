//! Runs several fixed-rate loops side by side.
//!
//! On a real clock every loop gets its own thread and ticker. On a virtual
//! clock the loops are interleaved on the calling thread in deadline order
//! (ties go to the loop listed first), which keeps the single-flow-of-control
//! assumption of [`VirtualClock`](crate::clock::VirtualClock) intact and makes
//! the interleaving reproducible.

use std::ops::ControlFlow;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

use crate::clock::{Clock, SharedClock, Ticker};

pub trait Periodic: Send {
    fn period(&self) -> Duration;

    /// One tick at clock time `now`. `Break` ends the whole run.
    fn tick(&mut self, index: u64, now: Duration) -> ControlFlow<()>;

    /// Called once after the run ends, with the final missed-tick count.
    fn finish(&mut self, _missed: u64) {}
}

/// Why [`run_periodic`] returned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunEnd {
    /// A loop returned `Break`.
    Finished,
    /// The `until` deadline was reached.
    Deadline,
    /// The stop flag was raised.
    Stopped,
}

/// Run `tasks` on one grid anchored at the current clock time until a task
/// breaks, the run has lasted `duration`, or `stop` is set.
pub fn run_periodic(
    clock: &SharedClock,
    tasks: &mut [&mut dyn Periodic],
    duration: Option<Duration>,
    stop: &AtomicBool,
) -> RunEnd {
    let start = clock.now();
    let until = duration.map(|d| start + d);
    if clock.is_virtual() {
        run_interleaved(clock.as_ref(), tasks, start, until, stop)
    } else {
        run_threaded(clock.as_ref(), tasks, start, until, stop)
    }
}

fn run_interleaved(
    clock: &dyn Clock,
    tasks: &mut [&mut dyn Periodic],
    start: Duration,
    until: Option<Duration>,
    stop: &AtomicBool,
) -> RunEnd {
    let mut tickers: Vec<Ticker> = tasks.iter().map(|t| Ticker::new(start, t.period())).collect();
    let end = loop {
        if stop.load(Ordering::SeqCst) {
            break RunEnd::Stopped;
        }
        let Some((i, deadline)) = tickers
            .iter()
            .map(Ticker::next_deadline)
            .enumerate()
            .min_by_key(|&(i, d)| (d, i))
        else {
            break RunEnd::Finished;
        };
        if until.is_some_and(|u| deadline >= u) {
            clock.sleep_until(until.unwrap_or(deadline));
            break RunEnd::Deadline;
        }
        let index = tickers[i].wait(clock);
        if tasks[i].tick(index, clock.now()).is_break() {
            break RunEnd::Finished;
        }
    };
    for (task, ticker) in tasks.iter_mut().zip(&tickers) {
        task.finish(ticker.missed());
    }
    end
}

fn run_threaded(
    clock: &dyn Clock,
    tasks: &mut [&mut dyn Periodic],
    start: Duration,
    until: Option<Duration>,
    stop: &AtomicBool,
) -> RunEnd {
    let done = AtomicBool::new(false);
    let ends: Vec<RunEnd> = std::thread::scope(|s| {
        let handles: Vec<_> = tasks
            .iter_mut()
            .map(|task| {
                let done = &done;
                s.spawn(move || {
                    let mut ticker = Ticker::new(start, task.period());
                    let end = loop {
                        if done.load(Ordering::SeqCst) {
                            break RunEnd::Finished;
                        }
                        if stop.load(Ordering::SeqCst) {
                            break RunEnd::Stopped;
                        }
                        let deadline = ticker.next_deadline();
                        if until.is_some_and(|u| deadline >= u) {
                            break RunEnd::Deadline;
                        }
                        // Sleep in short slices so a finished sibling or the
                        // stop flag is noticed promptly.
                        while clock.now() + Duration::from_millis(50) < deadline {
                            if done.load(Ordering::SeqCst) || stop.load(Ordering::SeqCst) {
                                break;
                            }
                            clock.sleep(Duration::from_millis(20));
                        }
                        if done.load(Ordering::SeqCst) || stop.load(Ordering::SeqCst) {
                            continue;
                        }
                        let index = ticker.wait(clock);
                        if task.tick(index, clock.now()).is_break() {
                            done.store(true, Ordering::SeqCst);
                            break RunEnd::Finished;
                        }
                    };
                    task.finish(ticker.missed());
                    end
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("periodic task panicked")).collect()
    });
    if let Some(u) = until {
        clock.sleep_until(u);
    }
    if ends.contains(&RunEnd::Stopped) {
        RunEnd::Stopped
    } else if ends.contains(&RunEnd::Finished) {
        RunEnd::Finished
    } else {
        RunEnd::Deadline
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::{SystemClock, VirtualClock};
    use std::sync::Arc;

    struct Counter {
        period: Duration,
        seen: Vec<(u64, Duration)>,
        stop_after: Option<usize>,
        missed: u64,
    }

    impl Counter {
        fn new(ms: u64) -> Self {
            Self {
                period: Duration::from_millis(ms),
                seen: Vec::new(),
                stop_after: None,
                missed: 0,
            }
        }
    }

    impl Periodic for Counter {
        fn period(&self) -> Duration {
            self.period
        }

        fn tick(&mut self, index: u64, now: Duration) -> ControlFlow<()> {
            self.seen.push((index, now));
            if self.stop_after.is_some_and(|n| self.seen.len() >= n) {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        }

        fn finish(&mut self, missed: u64) {
            self.missed = missed;
        }
    }

    #[test]
    fn interleaves_on_virtual_clock_in_deadline_order() {
        let clock: SharedClock = VirtualClock::shared();
        let mut fast = Counter::new(12);
        let mut slow = Counter::new(30);
        let end = run_periodic(
            &clock,
            &mut [&mut fast, &mut slow],
            Some(Duration::from_millis(120)),
            &AtomicBool::new(false),
        );
        assert_eq!(end, RunEnd::Deadline);
        assert_eq!(fast.seen.len(), 10);
        assert_eq!(slow.seen.len(), 4);
        assert!(fast.seen.iter().all(|&(i, t)| t == Duration::from_millis(12 * i)));
        assert_eq!(clock.now(), Duration::from_millis(120));
    }

    #[test]
    fn a_breaking_task_ends_the_run() {
        let clock: SharedClock = VirtualClock::shared();
        let mut a = Counter::new(10);
        let mut b = Counter::new(25);
        b.stop_after = Some(2);
        let end = run_periodic(&clock, &mut [&mut a, &mut b], None, &AtomicBool::new(false));
        assert_eq!(end, RunEnd::Finished);
        assert_eq!(clock.now(), Duration::from_millis(25));
        assert_eq!(a.seen.len(), 3);
    }

    #[test]
    fn threaded_run_on_real_clock() {
        let clock: SharedClock = Arc::new(SystemClock::new());
        let mut a = Counter::new(10);
        let mut b = Counter::new(15);
        let end = run_periodic(
            &clock,
            &mut [&mut a, &mut b],
            Some(Duration::from_millis(100)),
            &AtomicBool::new(false),
        );
        assert_eq!(end, RunEnd::Deadline);
        assert!((9..=10).contains(&a.seen.len()), "{}", a.seen.len());
        assert!((6..=7).contains(&b.seen.len()), "{}", b.seen.len());
    }
}
