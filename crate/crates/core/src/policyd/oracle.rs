//! Scripted grasper with privileged world access.
//!
//! This policy cheats: every chunk is planned from the full simulator state
//! read over `world.debug`, not from the observation images. It exists to
//! exercise the deployment plumbing and the evaluation harness end to end,
//! not to stand in for a learned model.

use std::time::Duration;

use super::policies::Policy;
use super::PolicyError;
use crate::devices::{Endpoint, Observation};
use crate::simworld::kinematics::fk_unchecked;
use crate::simworld::{solve_top_down, ObjectStatus, SimConfig, SimObject, TcpPose, WorldState};

#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    /// Travel height between grapes, m.
    pub hover_z: f64,
    /// Height while carrying to the box, m.
    pub carry_z: f64,
    /// Duration of one action row, s.
    pub step_s: f64,
    /// Fraction of the joint velocity limit used by interpolated moves.
    pub speed_fraction: f64,
    /// Rows repeating the goal after every segment.
    pub settle_rows: usize,
    /// Closure beyond the grape diameter, m.
    pub squeeze: f64,
    /// Horizontal distance below which the tool counts as over a grape, m.
    pub xy_tol: f64,
    pub z_tol: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            hover_z: 0.08,
            carry_z: 0.10,
            step_s: 0.05,
            speed_fraction: 0.6,
            settle_rows: 2,
            squeeze: 0.0005,
            xy_tol: 0.003,
            z_tol: 0.003,
        }
    }
}

/// Pure planner: world state in, action rows out.
#[derive(Debug, Clone)]
pub struct OraclePlanner {
    sim: SimConfig,
    config: OracleConfig,
    world_addr: Option<String>,
}

impl OraclePlanner {
    pub fn new(sim: SimConfig, config: OracleConfig) -> Self {
        Self {
            sim,
            config,
            world_addr: None,
        }
    }

    /// Planner that fetches world state from the arm service at `addr`.
    pub fn with_world(mut self, addr: impl Into<String>) -> Self {
        self.world_addr = Some(addr.into());
        self
    }

    pub fn config(&self) -> &OracleConfig {
        &self.config
    }

    pub fn session(&self) -> Result<OracleSession, PolicyError> {
        let addr = self
            .world_addr
            .clone()
            .ok_or_else(|| PolicyError::Config("oracle needs a world endpoint".into()))?;
        Ok(OracleSession {
            planner: self.clone(),
            world: Endpoint::new(addr, Duration::from_secs(2)),
        })
    }

    /// Tool over the box at carry height, gripper open.
    pub fn park_pose(&self) -> [f64; 7] {
        let (cx, cy) = self.sim.box_region.center();
        let q = solve_top_down(&self.sim.arm, cx, cy, self.config.carry_z).expect("box is reachable");
        [q[0], q[1], q[2], q[3], q[4], q[5], 0.0]
    }

    /// Closure that leaves `squeeze` of interference on a grape.
    pub fn grip_for(&self, diameter: f64) -> f64 {
        (1.0 - (diameter - self.config.squeeze) / self.sim.gripper.stroke).clamp(0.0, 1.0)
    }

    /// Plan the next `horizon` rows from `world`.
    ///
    /// The task is replayed in plan space: deliver whatever is held, open a
    /// stray closure, then visit the remaining free grapes nearest-first
    /// (hover, descend, close, lift, carry, open). Once nothing is left the
    /// rows park over the box.
    pub fn plan(&self, world: &WorldState, horizon: usize) -> Vec<[f64; 7]> {
        let mut d = Draft {
            planner: self,
            q: world.joints.q,
            g: world.joints.g,
            rows: Vec::with_capacity(horizon),
            limit: horizon,
        };
        let mut free: Vec<&SimObject> = world
            .objects
            .iter()
            .filter(|o| o.status == ObjectStatus::Free && self.reachable(o))
            .collect();

        if world.gripper.held.is_some() {
            d.deliver();
        } else if world.gripper.closing && world.gripper.target_g > world.joints.g {
            // Let the closure in progress settle; the world decides whether
            // it caught anything.
            d.grip(world.gripper.target_g);
            d.deliver();
        } else if world.joints.g > 0.02 {
            d.grip(0.0);
        }

        while !d.full() {
            let tcp = d.tcp();
            let Some(pos) = nearest(&free, &tcp) else { break };
            let grape = free.swap_remove(pos);
            d.pick(grape);
            d.deliver();
        }
        let park = self.park_pose();
        d.rows.resize(horizon, park);
        d.rows.truncate(horizon);
        d.rows
    }

    fn reachable(&self, o: &SimObject) -> bool {
        let top = o.center[2] + 0.5 * o.diameter;
        solve_top_down(&self.sim.arm, o.center[0], o.center[1], top).is_ok()
            && solve_top_down(&self.sim.arm, o.center[0], o.center[1], self.config.hover_z).is_ok()
    }
}

fn nearest(free: &[&SimObject], tcp: &TcpPose) -> Option<usize> {
    free.iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            let da = (a.center[0] - tcp.x).hypot(a.center[1] - tcp.y);
            let db = (b.center[0] - tcp.x).hypot(b.center[1] - tcp.y);
            da.total_cmp(&db).then(a.id.cmp(&b.id))
        })
        .map(|(i, _)| i)
}

struct Draft<'a> {
    planner: &'a OraclePlanner,
    q: [f64; 6],
    g: f64,
    rows: Vec<[f64; 7]>,
    limit: usize,
}

impl Draft<'_> {
    fn full(&self) -> bool {
        self.rows.len() >= self.limit
    }

    fn push(&mut self, q: [f64; 6], g: f64) {
        self.rows.push([q[0], q[1], q[2], q[3], q[4], q[5], g]);
    }

    fn tcp(&self) -> TcpPose {
        fk_unchecked(&self.planner.sim.arm, &self.q)
    }

    /// Joint-space straight line to the top-down pose at `(x, y, z)`.
    fn move_to(&mut self, x: f64, y: f64, z: f64) {
        if self.full() {
            return;
        }
        let arm = &self.planner.sim.arm;
        let Ok(goal) = solve_top_down(arm, x, y, z) else { return };
        let cfg = &self.planner.config;
        let steps = (0..6)
            .map(|i| (goal[i] - self.q[i]).abs() / (cfg.speed_fraction * arm.max_joint_velocity[i] * cfg.step_s))
            .fold(0.0f64, f64::max)
            .ceil() as usize;
        if steps == 0 || (0..6).all(|i| (goal[i] - self.q[i]).abs() < 1e-6) {
            self.q = goal;
            return;
        }
        let start = self.q;
        for s in 1..=steps {
            let a = s as f64 / steps as f64;
            let q = std::array::from_fn(|i| start[i] + a * (goal[i] - start[i]));
            self.push(q, self.g);
        }
        for _ in 0..cfg.settle_rows {
            self.push(goal, self.g);
        }
        self.q = goal;
    }

    fn grip(&mut self, target: f64) {
        if self.full() || (target - self.g).abs() < 1e-6 {
            self.g = target;
            return;
        }
        let cfg = &self.planner.config;
        let rate = self.planner.sim.gripper.closing_rate;
        let rows = ((target - self.g).abs() / (rate * cfg.step_s)).ceil() as usize + cfg.settle_rows;
        for _ in 0..rows {
            self.push(self.q, target);
        }
        self.g = target;
    }

    fn pick(&mut self, grape: &SimObject) {
        let cfg = self.planner.config.clone();
        let [gx, gy, gz] = grape.center;
        let top = gz + 0.5 * grape.diameter;
        let tcp = self.tcp();
        if (gx - tcp.x).hypot(gy - tcp.y) > cfg.xy_tol {
            if tcp.z < cfg.hover_z - cfg.z_tol {
                self.move_to(tcp.x, tcp.y, cfg.hover_z);
            }
            self.move_to(gx, gy, cfg.hover_z);
        }
        self.move_to(gx, gy, top);
        self.grip(self.planner.grip_for(grape.diameter));
    }

    /// Lift, carry over the box and open.
    fn deliver(&mut self) {
        let cfg = self.planner.config.clone();
        let (bx, by) = self.planner.sim.box_region.center();
        let tcp = self.tcp();
        if tcp.z < cfg.carry_z - cfg.z_tol {
            self.move_to(tcp.x, tcp.y, cfg.carry_z);
        }
        self.move_to(bx, by, cfg.carry_z);
        self.grip(0.0);
    }
}

/// One connection's oracle: fetches world state per call.
pub struct OracleSession {
    planner: OraclePlanner,
    world: Endpoint,
}

impl Policy for OracleSession {
    fn infer(&mut self, _obs: &Observation, horizon: usize) -> Result<Vec<[f64; 7]>, PolicyError> {
        let world = self
            .world
            .world_debug()
            .map_err(|e| PolicyError::World(e.to_string()))?;
        Ok(self.planner.plan(&world, horizon))
    }
}
