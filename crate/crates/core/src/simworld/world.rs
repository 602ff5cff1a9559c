use serde::{Deserialize, Serialize};

use super::config::{Rect, SimConfig};
use super::kinematics::{fk_unchecked, solve_top_down, TcpPose};
use super::scatter::scatter_objects;
use super::SimError;

/// Six arm joint angles (radians) plus normalized gripper closure
/// (0 fully open, 1 fully closed).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JointState {
    pub q: [f64; 6],
    pub g: f64,
}

impl JointState {
    pub fn new(q: [f64; 6], g: f64) -> Self {
        Self { q, g }
    }

    pub fn to_array(&self) -> [f64; 7] {
        let mut out = [0.0; 7];
        out[..6].copy_from_slice(&self.q);
        out[6] = self.g;
        out
    }

    pub fn from_array(v: &[f64; 7]) -> Self {
        let mut q = [0.0; 6];
        q.copy_from_slice(&v[..6]);
        Self { q, g: v[6] }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().all(|v| v.is_finite()) && self.g.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectStatus {
    Free,
    Held,
    Deposited,
    Dropped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimObject {
    pub id: u32,
    pub center: [f64; 3],
    pub diameter: f64,
    pub status: ObjectStatus,
}

/// Gripper bookkeeping carried inside the world state.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GripperState {
    pub target_g: f64,
    /// Commanded force limit, already clamped to the gripper's range.
    pub force_limit: f64,
    pub speed: f64,
    /// Last reported contact force in newtons.
    pub contact_force: f64,
    /// A closing motion is in progress; the grasp predicate runs when it
    /// settles.
    pub closing: bool,
    pub held: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub joints: JointState,
    pub tcp: TcpPose,
    pub objects: Vec<SimObject>,
    pub box_region: Rect,
    pub workspace: Rect,
    pub sim_time: f64,
    pub rng_seed: u64,
    pub gripper: GripperState,
    /// Number of objects that reached the box so far.
    pub deposits: u32,
    pub drops: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissReason {
    NoObject,
    TooFar,
    HeightBand,
    /// Closure narrower than the admissible window would crush the object.
    Crush,
    TooWide,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "lowercase")]
pub enum GraspOutcome {
    Held { object: u32, force: f64 },
    Miss { reason: MissReason },
}

impl GraspOutcome {
    pub fn is_held(&self) -> bool {
        matches!(self, GraspOutcome::Held { .. })
    }
}

/// Owns the configuration and the mutable state; the only writer of the
/// state is [`World::step`] (and the reset helpers).
#[derive(Debug, Clone)]
pub struct World {
    config: SimConfig,
    state: WorldState,
}

const GRIP_SETTLE_EPS: f64 = 1e-9;
const GEOM_EPS: f64 = 1e-9;

impl World {
    /// Empty world at the zero joint pose, gripper open.
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        let joints = JointState::default();
        let tcp = fk_unchecked(&config.arm, &joints.q);
        let state = WorldState {
            joints,
            tcp,
            objects: Vec::new(),
            box_region: config.box_region,
            workspace: config.workspace,
            sim_time: 0.0,
            rng_seed: 0,
            gripper: GripperState {
                force_limit: config.gripper.force_max,
                ..GripperState::default()
            },
            deposits: 0,
            drops: 0,
        };
        Ok(Self { config, state })
    }

    /// Scatter the configured objects from `seed` and move the arm home.
    pub fn reset(&mut self, seed: u64, n_objects: usize) -> Result<(), SimError> {
        let objects = scatter_objects(&self.config, seed, n_objects, self.config.objects.min_separation)?;
        let home = self.home_pose()?;
        let tcp = fk_unchecked(&self.config.arm, &home.q);
        self.state = WorldState {
            joints: home,
            tcp,
            objects,
            box_region: self.config.box_region,
            workspace: self.config.workspace,
            sim_time: self.state.sim_time,
            rng_seed: seed,
            gripper: GripperState {
                target_g: 0.0,
                force_limit: self.config.gripper.force_max,
                ..GripperState::default()
            },
            deposits: 0,
            drops: 0,
        };
        Ok(())
    }

    /// Tool above the workspace centre, pointing down, gripper open.
    pub fn home_pose(&self) -> Result<JointState, SimError> {
        let (cx, cy) = self.config.workspace.center();
        let q = solve_top_down(&self.config.arm, cx, cy, self.config.home_height)?;
        Ok(JointState::new(q, 0.0))
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn snapshot(&self) -> WorldState {
        self.state.clone()
    }

    /// Replace the state wholesale (test scenarios and restores).
    pub fn set_state(&mut self, mut state: WorldState) {
        state.tcp = fk_unchecked(&self.config.arm, &state.joints.q);
        self.state = state;
    }

    pub fn set_objects(&mut self, objects: Vec<SimObject>) {
        self.state.objects = objects;
        self.state.gripper.held = None;
    }

    /// Teleport the arm (no rate limiting). Used to build scenarios.
    pub fn set_joints(&mut self, joints: JointState) -> Result<(), SimError> {
        if !joints.is_finite() {
            return Err(SimError::NonFinite);
        }
        let q = self.config.arm.clamp(&joints.q);
        self.state.joints = JointState::new(q, joints.g.clamp(0.0, 1.0));
        self.state.gripper.target_g = self.state.joints.g;
        self.state.tcp = fk_unchecked(&self.config.arm, &q);
        self.track_held();
        Ok(())
    }

    pub fn set_gripper_force(&mut self, force: f64) -> f64 {
        let f = self.config.gripper.clamp_force(force);
        self.state.gripper.force_limit = f;
        f
    }

    pub fn set_gripper_speed(&mut self, speed: f64) {
        self.state.gripper.speed = speed;
    }

    /// Advance by `dt` seconds toward `target` under per-joint velocity
    /// limits. On error the state is left untouched.
    pub fn step(&mut self, target: &JointState, dt: f64) -> Result<(), SimError> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(SimError::BadTimeStep(dt));
        }
        if !target.is_finite() {
            return Err(SimError::NonFinite);
        }
        let arm = &self.config.arm;
        let goal = arm.clamp(&target.q);
        let mut q = self.state.joints.q;
        for i in 0..6 {
            let max = arm.max_joint_velocity[i] * dt;
            let delta = (goal[i] - q[i]).clamp(-max, max);
            q[i] += delta;
        }
        let q = arm.clamp(&q);

        let grip = &self.config.gripper;
        let goal_g = target.g.clamp(0.0, 1.0);
        if goal_g > self.state.joints.g + GRIP_SETTLE_EPS {
            self.state.gripper.closing = true;
        } else if goal_g < self.state.joints.g - GRIP_SETTLE_EPS {
            self.state.gripper.closing = false;
        }
        self.state.gripper.target_g = goal_g;
        let max_dg = grip.closing_rate * dt;
        let g = self.state.joints.g + (goal_g - self.state.joints.g).clamp(-max_dg, max_dg);

        self.state.joints = JointState::new(q, g);
        self.state.tcp = fk_unchecked(arm, &q);
        self.state.sim_time += dt;
        self.track_held();
        self.update_contact();
        Ok(())
    }

    fn track_held(&mut self) {
        if let Some(id) = self.state.gripper.held {
            let tcp = self.state.tcp;
            if let Some(obj) = self.state.objects.iter_mut().find(|o| o.id == id) {
                obj.center = [tcp.x, tcp.y, tcp.z];
            }
        }
    }

    fn update_contact(&mut self) {
        let grip = self.config.gripper.clone();
        let width = grip.width(self.state.joints.g);
        let settled = (self.state.joints.g - self.state.gripper.target_g).abs() <= GRIP_SETTLE_EPS;

        if let Some(id) = self.state.gripper.held {
            let Some(idx) = self.state.objects.iter().position(|o| o.id == id) else {
                self.state.gripper.held = None;
                return;
            };
            let diameter = self.state.objects[idx].diameter;
            if width > diameter + self.config.grasp.approach_margin + GEOM_EPS {
                let [x, y, _] = self.state.objects[idx].center;
                let obj = &mut self.state.objects[idx];
                if self.state.box_region.contains(x, y) {
                    obj.status = ObjectStatus::Deposited;
                    obj.center[2] = 0.5 * diameter;
                    self.state.deposits += 1;
                } else {
                    obj.status = ObjectStatus::Dropped;
                    obj.center[2] = 0.5 * diameter;
                    self.state.drops += 1;
                }
                self.state.gripper.held = None;
                self.state.gripper.contact_force = 0.0;
                self.state.gripper.closing = false;
            } else {
                self.state.gripper.contact_force = self.contact_force(diameter, width);
                if settled {
                    self.state.gripper.closing = false;
                }
            }
            return;
        }

        if self.state.gripper.closing && settled {
            self.state.gripper.closing = false;
            match self.attempt_grasp(self.state.gripper.target_g) {
                GraspOutcome::Held { object, force } => {
                    if let Some(obj) = self.state.objects.iter_mut().find(|o| o.id == object) {
                        obj.status = ObjectStatus::Held;
                    }
                    self.state.gripper.held = Some(object);
                    self.state.gripper.contact_force = force;
                    self.track_held();
                }
                GraspOutcome::Miss { .. } => self.state.gripper.contact_force = 0.0,
            }
        } else if self.state.gripper.held.is_none() {
            self.state.gripper.contact_force = 0.0;
        }
    }

    fn contact_force(&self, diameter: f64, width: f64) -> f64 {
        let grip = &self.config.gripper;
        let squeeze = (diameter - width).max(0.0);
        (grip.contact_stiffness * squeeze)
            .min(grip.force_max)
            .min(self.state.gripper.force_limit)
            .min(grip.force_ceiling())
    }

    /// Grasp-success predicate for a commanded closure against the free
    /// object nearest the tool (horizontally). Does not modify the world.
    pub fn attempt_grasp(&self, commanded_g: f64) -> GraspOutcome {
        let tcp = self.state.tcp;
        let Some(obj) = self
            .state
            .objects
            .iter()
            .filter(|o| o.status == ObjectStatus::Free)
            .min_by(|a, b| {
                let da = (a.center[0] - tcp.x).hypot(a.center[1] - tcp.y);
                let db = (b.center[0] - tcp.x).hypot(b.center[1] - tcp.y);
                da.total_cmp(&db)
            })
        else {
            return GraspOutcome::Miss {
                reason: MissReason::NoObject,
            };
        };
        let p = &self.config.grasp;
        let grip = &self.config.gripper;
        let horizontal = (obj.center[0] - tcp.x).hypot(obj.center[1] - tcp.y);
        if horizontal > p.grasp_radius + GEOM_EPS {
            return GraspOutcome::Miss {
                reason: MissReason::TooFar,
            };
        }
        let top = obj.center[2] + 0.5 * obj.diameter;
        if (tcp.z - top).abs() > p.grasp_height_band + GEOM_EPS {
            return GraspOutcome::Miss {
                reason: MissReason::HeightBand,
            };
        }
        let w = grip.width(commanded_g.clamp(0.0, 1.0));
        if w < obj.diameter - grip.active_window() - GEOM_EPS {
            return GraspOutcome::Miss {
                reason: MissReason::Crush,
            };
        }
        if w > obj.diameter + p.approach_margin + GEOM_EPS {
            return GraspOutcome::Miss {
                reason: MissReason::TooWide,
            };
        }
        GraspOutcome::Held {
            object: obj.id,
            force: self.contact_force(obj.diameter, w),
        }
    }

    /// Objects that are still on the table and graspable.
    pub fn free_objects(&self) -> impl Iterator<Item = &SimObject> {
        self.state
            .objects
            .iter()
            .filter(|o| o.status == ObjectStatus::Free)
    }
}
