use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Weak};
use std::thread::JoinHandle;
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::clock::{period_from_rate, SharedClock};
use crate::simworld::{JointState, SimConfig, SimError, TcpPose, World, WorldState};

#[derive(Debug)]
struct Inner {
    world: World,
    target: JointState,
    /// Simulator ticks applied since the clock epoch.
    ticks: u64,
}

/// Arm reading served by `arm.state`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReading {
    pub q: [f64; 6],
    pub tcp: TcpPose,
    pub q_target: [f64; 6],
    pub sim_time: f64,
}

/// Gripper reading served by `grip.state`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GripReading {
    pub g: f64,
    pub width_mm: f64,
    /// Contact force (N) last reported by the contact model.
    pub force: f64,
    pub g_target: f64,
    pub force_limit: f64,
    pub speed: f64,
    pub holding: bool,
}

/// Simulated world shared by the device services.
///
/// Only the simulator driver advances time, on a fixed grid of
/// `1 / tick_hz` steps derived from the clock; requests merely read state or
/// replace the joint target.
pub struct SharedWorld {
    inner: Mutex<Inner>,
    config: SimConfig,
    clock: SharedClock,
    dt: Duration,
}

impl std::fmt::Debug for SharedWorld {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SharedWorld").field("dt", &self.dt).finish_non_exhaustive()
    }
}

impl SharedWorld {
    pub fn new(config: SimConfig, clock: SharedClock) -> Result<Arc<Self>, SimError> {
        let world = World::new(config.clone())?;
        let target = world.state().joints;
        let dt = period_from_rate(config.tick_hz);
        let ticks = (clock.now().as_nanos() / dt.as_nanos()) as u64;
        Ok(Arc::new(Self {
            inner: Mutex::new(Inner { world, target, ticks }),
            config,
            clock,
            dt,
        }))
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn clock(&self) -> &SharedClock {
        &self.clock
    }

    pub fn tick_period(&self) -> Duration {
        self.dt
    }

    /// Apply every simulator tick due up to clock time `t`.
    pub fn advance_to(&self, t: Duration) {
        let due = (t.as_nanos() / self.dt.as_nanos()) as u64;
        let dt = self.dt.as_secs_f64();
        let mut inner = self.inner.lock();
        while inner.ticks < due {
            let target = inner.target;
            // target is validated on entry, step cannot fail
            let _ = inner.world.step(&target, dt);
            inner.ticks += 1;
        }
    }

    /// Start stepping the world from the clock: a hook on virtual clocks, a
    /// ticker thread on real ones.
    pub fn start_driver(self: &Arc<Self>) -> SimDriver {
        let weak: Weak<Self> = Arc::downgrade(self);
        if self.clock.is_virtual() {
            let registered = self.clock.on_advance(Box::new(move |t| {
                if let Some(w) = weak.upgrade() {
                    w.advance_to(t);
                }
            }));
            debug_assert!(registered);
            return SimDriver { stop: None, thread: None };
        }
        let stop = Arc::new(AtomicBool::new(false));
        let stop_t = stop.clone();
        let clock = self.clock.clone();
        let dt = self.dt;
        let thread = std::thread::Builder::new()
            .name("sim-ticker".into())
            .spawn(move || {
                let mut next = clock.now();
                while !stop_t.load(Ordering::SeqCst) {
                    let Some(w) = weak.upgrade() else { break };
                    w.advance_to(clock.now());
                    drop(w);
                    next += dt;
                    clock.sleep_until(next);
                }
            })
            .expect("spawn simulator ticker");
        SimDriver {
            stop: Some(stop),
            thread: Some(thread),
        }
    }

    pub fn command_arm(&self, q: &[f64; 6]) -> Result<[f64; 6], SimError> {
        if q.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite);
        }
        let clamped = self.config.arm.clamp(q);
        self.inner.lock().target.q = clamped;
        Ok(clamped)
    }

    /// Set the gripper closure target; returns the force limit after
    /// clamping to the gripper's range.
    pub fn command_gripper(&self, g: f64, force: Option<f64>, speed: Option<f64>) -> Result<f64, SimError> {
        if !g.is_finite() || !(0.0..=1.0).contains(&g) {
            return Err(SimError::Config(format!("gripper closure {g} outside [0, 1]")));
        }
        let mut inner = self.inner.lock();
        inner.target.g = g;
        let f = match force {
            Some(f) if f.is_finite() => inner.world.set_gripper_force(f),
            _ => inner.world.state().gripper.force_limit,
        };
        if let Some(s) = speed.filter(|s| s.is_finite()) {
            inner.world.set_gripper_speed(s);
        }
        Ok(f)
    }

    pub fn arm_reading(&self) -> ArmReading {
        let inner = self.inner.lock();
        let s = inner.world.state();
        ArmReading {
            q: s.joints.q,
            tcp: s.tcp,
            q_target: inner.target.q,
            sim_time: s.sim_time,
        }
    }

    pub fn grip_reading(&self) -> GripReading {
        let inner = self.inner.lock();
        let s = inner.world.state();
        GripReading {
            g: s.joints.g,
            width_mm: self.config.gripper.width(s.joints.g) * 1e3,
            force: s.gripper.contact_force,
            g_target: inner.target.g,
            force_limit: s.gripper.force_limit,
            speed: s.gripper.speed,
            holding: s.gripper.held.is_some(),
        }
    }

    pub fn snapshot(&self) -> WorldState {
        self.inner.lock().world.snapshot()
    }

    pub fn target(&self) -> JointState {
        self.inner.lock().target
    }

    /// Re-scatter objects from `seed` and home the arm (target included).
    pub fn reset(&self, seed: u64, n_objects: usize) -> Result<(), SimError> {
        let mut inner = self.inner.lock();
        inner.world.reset(seed, n_objects)?;
        inner.target = inner.world.state().joints;
        Ok(())
    }

    /// Run `f` against the world under the lock (scenario setup in tests).
    pub fn with_world<R>(&self, f: impl FnOnce(&mut World) -> R) -> R {
        let mut inner = self.inner.lock();
        let r = f(&mut inner.world);
        inner.target = inner.world.state().joints;
        r
    }
}

/// Keeps the simulator ticking; dropping it stops a real-time ticker.
#[derive(Debug)]
pub struct SimDriver {
    stop: Option<Arc<AtomicBool>>,
    thread: Option<JoinHandle<()>>,
}

impl Drop for SimDriver {
    fn drop(&mut self) {
        if let Some(stop) = &self.stop {
            stop.store(true, Ordering::SeqCst);
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::{Clock, VirtualClock};

    #[test]
    fn virtual_driver_integrates_commands_on_the_tick_grid() {
        let clock = VirtualClock::shared();
        let world = SharedWorld::new(SimConfig::default(), clock.clone()).unwrap();
        let _driver = world.start_driver();
        let mut q = [0.0; 6];
        q[0] = 1.0;
        world.command_arm(&q).unwrap();
        clock.sleep(Duration::from_millis(250));
        let r = world.arm_reading();
        // 62 ticks of 4 ms at 2 rad/s
        assert!((r.q[0] - 0.5).abs() <= 2.0 * 0.004 + 1e-12, "{}", r.q[0]);
        assert_eq!(r.q_target[0], 1.0);
    }

    #[test]
    fn requests_do_not_advance_time() {
        let clock = VirtualClock::shared();
        let world = SharedWorld::new(SimConfig::default(), clock.clone()).unwrap();
        let _driver = world.start_driver();
        let t0 = world.arm_reading().sim_time;
        for _ in 0..10 {
            world.command_arm(&[0.3; 6]).unwrap();
            let _ = world.grip_reading();
        }
        assert_eq!(world.arm_reading().sim_time, t0);
        assert_eq!(clock.now(), Duration::ZERO);
    }

    #[test]
    fn gripper_range_and_force_clamp() {
        let world = SharedWorld::new(SimConfig::default(), VirtualClock::shared()).unwrap();
        assert!(world.command_gripper(1.2, None, None).is_err());
        assert_eq!(world.command_gripper(0.5, Some(100.0), Some(0.1)).unwrap(), 50.0);
        assert_eq!(world.command_gripper(0.5, Some(0.5), None).unwrap(), 2.0);
    }
}
