use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointAxis {
    /// Rotation about the vertical (or current z) axis.
    Yaw,
    /// Rotation about the current y axis; positive angles raise the link.
    Pitch,
    /// Rotation about the current link (x) axis.
    Roll,
}

/// Serial 6-DoF arm. Links sit after joints 1, 2 and 3 (shoulder, elbow,
/// wrist pitch); the remaining wrist joints are co-located at the tool point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmModel {
    pub link_lengths: [f64; 3],
    pub joint_axes: [JointAxis; 6],
    pub joint_limits: [[f64; 2]; 6],
    pub max_joint_velocity: [f64; 6],
    pub reach: f64,
}

impl Default for ArmModel {
    fn default() -> Self {
        const LIM: f64 = 3.05;
        Self {
            link_lengths: [0.425, 0.395, 0.102],
            joint_axes: [
                JointAxis::Yaw,
                JointAxis::Pitch,
                JointAxis::Pitch,
                JointAxis::Pitch,
                JointAxis::Roll,
                JointAxis::Yaw,
            ],
            joint_limits: [[-LIM, LIM]; 6],
            max_joint_velocity: [2.0; 6],
            reach: 0.922,
        }
    }
}

impl ArmModel {
    pub fn validate(&self) -> Result<(), SimError> {
        let sum: f64 = self.link_lengths.iter().sum();
        if self.link_lengths.iter().any(|l| !(*l > 0.0)) {
            return Err(SimError::Config("link lengths must be positive".into()));
        }
        if (sum - self.reach).abs() > 1e-9 {
            return Err(SimError::Config(format!(
                "reach {} does not equal the sum of link lengths {}",
                self.reach, sum
            )));
        }
        for (i, [lo, hi]) in self.joint_limits.iter().enumerate() {
            if !(lo < hi) {
                return Err(SimError::Config(format!("joint {i} limits are empty")));
            }
        }
        if self.max_joint_velocity.iter().any(|v| !(*v > 0.0)) {
            return Err(SimError::Config("joint velocities must be positive".into()));
        }
        Ok(())
    }

    pub fn clamp(&self, q: &[f64; 6]) -> [f64; 6] {
        let mut out = *q;
        for (v, [lo, hi]) in out.iter_mut().zip(self.joint_limits) {
            *v = v.clamp(lo, hi);
        }
        out
    }

    pub fn within_limits(&self, q: &[f64; 6]) -> bool {
        q.iter()
            .zip(self.joint_limits)
            .all(|(v, [lo, hi])| *v >= lo && *v <= hi)
    }

    /// True for the default joint layout that the closed-form top-down
    /// solver understands.
    pub fn is_standard_layout(&self) -> bool {
        self.joint_axes == ArmModel::default().joint_axes
    }

    /// Pitch sum at which the tool points straight down.
    pub const TOOL_DOWN: f64 = -FRAC_PI_2;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GripperModel {
    /// Full opening in meters.
    pub stroke: f64,
    pub force_min: f64,
    pub force_max: f64,
    /// N/m of squeeze beyond the object diameter.
    pub contact_stiffness: f64,
    pub compliant_extension: bool,
    /// Extra admissible closure (m) granted by the compliant extension.
    pub compliance_window: f64,
    /// Admissible closure (m) of the bare rigid fingers.
    pub rigid_window: f64,
    /// Contact force ceiling (N) with the compliant extension fitted.
    pub force_cap_soft: f64,
    /// Normalized closure per second.
    pub closing_rate: f64,
}

impl Default for GripperModel {
    fn default() -> Self {
        Self {
            stroke: 0.052,
            force_min: 2.0,
            force_max: 50.0,
            contact_stiffness: 2000.0,
            compliant_extension: true,
            compliance_window: 0.006,
            rigid_window: 0.001,
            force_cap_soft: 8.0,
            closing_rate: 2.0,
        }
    }
}

impl GripperModel {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(0.0 < self.force_min && self.force_min < self.force_max) {
            return Err(SimError::Config("need 0 < force_min < force_max".into()));
        }
        if !(self.stroke > 0.0) {
            return Err(SimError::Config("stroke must be positive".into()));
        }
        if !(self.compliance_window >= 0.0 && self.rigid_window >= 0.0) {
            return Err(SimError::Config("closure windows must be non-negative".into()));
        }
        if self.rigid_window >= self.compliance_window {
            return Err(SimError::Config(
                "rigid_window must be smaller than compliance_window".into(),
            ));
        }
        if !(self.force_cap_soft > 0.0 && self.force_cap_soft < self.force_max) {
            return Err(SimError::Config("need 0 < force_cap_soft < force_max".into()));
        }
        if !(self.closing_rate > 0.0) {
            return Err(SimError::Config("closing_rate must be positive".into()));
        }
        Ok(())
    }

    /// Opening width in meters for a normalized closure (0 open, 1 closed).
    pub fn width(&self, g: f64) -> f64 {
        self.stroke * (1.0 - g)
    }

    /// Normalized closure that produces opening width `w`.
    pub fn closure_for_width(&self, w: f64) -> f64 {
        (1.0 - w / self.stroke).clamp(0.0, 1.0)
    }

    pub fn clamp_force(&self, f: f64) -> f64 {
        f.clamp(self.force_min, self.force_max)
    }

    pub fn active_window(&self) -> f64 {
        if self.compliant_extension {
            self.compliance_window
        } else {
            self.rigid_window
        }
    }

    pub fn force_ceiling(&self) -> f64 {
        if self.compliant_extension {
            self.force_cap_soft
        } else {
            self.force_max
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspParams {
    pub grasp_radius: f64,
    pub grasp_height_band: f64,
    pub approach_margin: f64,
}

impl Default for GraspParams {
    fn default() -> Self {
        Self {
            grasp_radius: 0.015,
            grasp_height_band: 0.020,
            approach_margin: 0.004,
        }
    }
}

/// Axis-aligned rectangle on the table plane, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    pub fn inflate(&self, m: f64) -> Rect {
        Rect::new(self.x_min - m, self.y_min - m, self.x_max + m, self.y_max + m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    Grape,
    Cherry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectConfig {
    pub kind: ObjectKind,
    pub diameter_min: f64,
    pub diameter_max: f64,
    pub count: usize,
    pub min_separation: f64,
}

impl ObjectConfig {
    pub fn grapes() -> Self {
        Self {
            kind: ObjectKind::Grape,
            diameter_min: 0.018,
            diameter_max: 0.024,
            count: 10,
            min_separation: 0.030,
        }
    }

    pub fn cherries() -> Self {
        Self {
            kind: ObjectKind::Cherry,
            diameter_min: 0.020,
            diameter_max: 0.026,
            count: 10,
            min_separation: 0.032,
        }
    }
}

impl Default for ObjectConfig {
    fn default() -> Self {
        Self::grapes()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraConfig {
    pub width: u32,
    pub height: u32,
    /// Ground footprint of the wrist camera, meters.
    pub wrist_window: [f64; 2],
    /// Side length of the images handed to policies and the recorder.
    pub output_size: u32,
    pub rate_hz: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            width: 640,
            height: 480,
            wrist_window: [0.10, 0.075],
            output_size: 224,
            rate_hz: 30.0,
        }
    }
}

/// Everything the simulator needs; loadable from a JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub arm: ArmModel,
    pub gripper: GripperModel,
    pub grasp: GraspParams,
    pub workspace: Rect,
    pub box_region: Rect,
    pub objects: ObjectConfig,
    pub camera: CameraConfig,
    /// Height the home pose holds the tool above the table.
    pub home_height: f64,
    /// Simulator integration rate.
    pub tick_hz: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            arm: ArmModel::default(),
            gripper: GripperModel::default(),
            grasp: GraspParams::default(),
            workspace: Rect::new(0.30, -0.15, 0.70, 0.15),
            box_region: Rect::new(0.61, 0.08, 0.69, 0.14),
            objects: ObjectConfig::default(),
            camera: CameraConfig::default(),
            home_height: 0.15,
            tick_hz: 250.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.arm.validate()?;
        self.gripper.validate()?;
        let ws = &self.workspace;
        if !(ws.width() > 0.0 && ws.height() > 0.0) {
            return Err(SimError::Config("workspace is empty".into()));
        }
        let b = &self.box_region;
        if !(ws.contains(b.x_min, b.y_min) && ws.contains(b.x_max, b.y_max)) {
            return Err(SimError::Config(
                "box region must lie inside the workspace (it is rendered by the base camera)"
                    .into(),
            ));
        }
        let o = &self.objects;
        if !(o.diameter_min > 0.0 && o.diameter_min <= o.diameter_max) {
            return Err(SimError::Config("bad object diameter range".into()));
        }
        if o.diameter_max > self.gripper.stroke {
            return Err(SimError::Config("objects wider than the gripper stroke".into()));
        }
        if !(self.tick_hz > 0.0) {
            return Err(SimError::Config("tick_hz must be positive".into()));
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
        let cfg: SimConfig = serde_json::from_str(&text)
            .map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Meters per pixel of the base camera.
    pub fn base_scale(&self) -> f64 {
        self.workspace.width() / self.camera.width as f64
    }

    pub fn wrist_scale(&self) -> f64 {
        self.camera.wrist_window[0] / self.camera.width as f64
    }
}
