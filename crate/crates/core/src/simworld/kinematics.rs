//! Forward kinematics and the closed-form top-down solver used to place the
//! tool above table objects.

use serde::{Deserialize, Serialize};

use super::config::{ArmModel, JointAxis};
use super::SimError;

/// Tool centre point: position in meters plus heading about the vertical.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TcpPose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

type Mat3 = [[f64; 3]; 3];

const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn joint_rotation(axis: JointAxis, q: f64) -> Mat3 {
    let (s, c) = q.sin_cos();
    match axis {
        JointAxis::Yaw => [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
        // rotation about +y by -q, so a positive pitch lifts the link
        JointAxis::Pitch => [[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]],
        JointAxis::Roll => [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]],
    }
}

/// Compose the joint chain and return the tool pose.
///
/// Yaw is the heading of the tool y axis minus a quarter turn, which equals
/// `q0 + q5` for the standard arm held horizontal and stays well defined when
/// the tool points straight down.
pub fn forward_kinematics(arm: &ArmModel, q: &[f64; 6]) -> Result<TcpPose, SimError> {
    if q.iter().any(|v| !v.is_finite()) {
        return Err(SimError::NonFinite);
    }
    if !arm.within_limits(q) {
        return Err(SimError::LimitViolation { q: *q });
    }
    Ok(fk_unchecked(arm, q))
}

pub(crate) fn fk_unchecked(arm: &ArmModel, q: &[f64; 6]) -> TcpPose {
    let mut rot = IDENTITY;
    let mut pos = [0.0f64; 3];
    for (i, (&axis, &angle)) in arm.joint_axes.iter().zip(q).enumerate() {
        rot = mat_mul(&rot, &joint_rotation(axis, angle));
        // links follow the shoulder, elbow and wrist-pitch joints
        if (1..=3).contains(&i) {
            let len = arm.link_lengths[i - 1];
            for (p, r) in pos.iter_mut().zip(rot.iter()) {
                *p += r[0] * len;
            }
        }
    }
    TcpPose {
        x: pos[0],
        y: pos[1],
        z: pos[2],
        yaw: (-rot[0][1]).atan2(rot[1][1]),
    }
}

/// Joint angles placing the tool at `(x, y, z)` pointing straight down
/// (elbow-up branch, wrist roll and yaw zero). Only defined for the standard
/// yaw/pitch/pitch/pitch/roll/yaw layout.
pub fn solve_top_down(arm: &ArmModel, x: f64, y: f64, z: f64) -> Result<[f64; 6], SimError> {
    if !arm.is_standard_layout() {
        return Err(SimError::Unreachable(
            "top-down solver needs the standard joint layout".into(),
        ));
    }
    let [l1, l2, l3] = arm.link_lengths;
    let base = y.atan2(x);
    let r = x.hypot(y);
    // wrist sits one tool link above the tool point
    let zw = z + l3;
    let d2 = r * r + zw * zw;
    let c2 = (d2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
    if !(-1.0..=1.0).contains(&c2) {
        return Err(SimError::Unreachable(format!(
            "({x:.3}, {y:.3}, {z:.3}) is outside the reachable shell"
        )));
    }
    let elbow = -c2.acos();
    let shoulder = zw.atan2(r) - (l2 * elbow.sin()).atan2(l1 + l2 * elbow.cos());
    let wrist = ArmModel::TOOL_DOWN - shoulder - elbow;
    let q = [base, shoulder, elbow, wrist, 0.0, 0.0];
    if !arm.within_limits(&q) {
        return Err(SimError::Unreachable(format!(
            "solution for ({x:.3}, {y:.3}, {z:.3}) violates joint limits"
        )));
    }
    Ok(q)
}
