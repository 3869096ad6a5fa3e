//! Forward and closed-form inverse kinematics for a yaw + three-pitch + wrist-roll arm.
//!
//! Joint 1 yaws the whole arm about the base z-axis. Joints 2, 3 and 4 are
//! parallel pitch axes, so only their partial sums `θ2 + θ3` and
//! `θ2 + θ3 + θ4` enter the position. Joint 5 rolls the tool about its own
//! approach axis and does not move the tool tip.
//!
//! Position of the tool tip in the base frame:
//!
//! ```text
//! reach = a2·cos θ2 + a3·cos θ23 + d6·sin θ234
//! px    = cos θ1 · reach
//! py    = sin θ1 · reach
//! pz    = d1 + a2·sin θ2 + a3·sin θ23 − d6·cos θ234
//! ```
//!
//! The third rotation column is the approach (tool) axis, which is the unit
//! vector along the `d6` offset above: `(cos θ1 sin θ234, sin θ1 sin θ234, −cos θ234)`.

use std::f64::consts::{PI, TAU};

pub use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KinematicsError {
    #[error("invalid arm geometry: {0}")]
    InvalidGeometry(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("target out of reach: wrist-center distance {distance:.6} mm outside [{min:.6}, {max:.6}] mm")]
    OutOfReach { distance: f64, min: f64, max: f64 },
    #[error("target lies on the base axis; base yaw is undefined")]
    Singular,
}

/// Link lengths in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmGeometry {
    /// Base to shoulder height.
    pub d1: f64,
    /// Upper arm.
    pub a2: f64,
    /// Forearm.
    pub a3: f64,
    /// Wrist to tool tip.
    pub d6: f64,
}

impl ArmGeometry {
    pub fn new(d1: f64, a2: f64, a3: f64, d6: f64) -> Result<Self, KinematicsError> {
        let geom = Self { d1, a2, a3, d6 };
        geom.validate()?;
        Ok(geom)
    }

    pub fn validate(&self) -> Result<(), KinematicsError> {
        for (name, v) in [("d1", self.d1), ("a2", self.a2), ("a3", self.a3), ("d6", self.d6)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(KinematicsError::InvalidGeometry(format!(
                    "{name} must be finite and > 0, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Maximum tool-tip distance from the shoulder.
    pub fn max_reach(&self) -> f64 {
        self.a2 + self.a3 + self.d6
    }
}

/// Wraps an angle into `(−π, π]`.
pub fn normalize_angle(angle: f64) -> f64 {
    let wrapped = angle.rem_euclid(TAU);
    if wrapped > PI {
        wrapped - TAU
    } else {
        // Maps −0.0 to +0.0.
        wrapped + 0.0
    }
}

/// Five joint angles in radians, each wrapped to `(−π, π]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 5]", into = "[f64; 5]")]
pub struct JointAngles([f64; 5]);

impl JointAngles {
    pub fn new(angles: [f64; 5]) -> Result<Self, KinematicsError> {
        if angles.iter().any(|a| !a.is_finite()) {
            return Err(KinematicsError::NonFinite("joint angles"));
        }
        Ok(Self(angles.map(normalize_angle)))
    }

    pub fn zero() -> Self {
        Self([0.0; 5])
    }

    pub fn as_array(&self) -> [f64; 5] {
        self.0
    }

    /// Angle of joint `i`, 1-based to match the usual joint numbering.
    pub fn theta(&self, i: usize) -> f64 {
        self.0[i - 1]
    }

    pub fn theta23(&self) -> f64 {
        self.0[1] + self.0[2]
    }

    pub fn theta234(&self) -> f64 {
        self.0[1] + self.0[2] + self.0[3]
    }
}

impl TryFrom<[f64; 5]> for JointAngles {
    type Error = KinematicsError;

    fn try_from(value: [f64; 5]) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<JointAngles> for [f64; 5] {
    fn from(value: JointAngles) -> Self {
        value.0
    }
}

/// Tool pose in the base frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    /// Millimetres.
    pub position: Vector3<f64>,
}

impl Pose {
    /// Unit vector of the tool approach axis.
    pub fn approach(&self) -> Vector3<f64> {
        self.rotation.column(2).into_owned()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Elbow {
    #[default]
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkRequest {
    /// Tool-tip target in millimetres.
    pub target: Vector3<f64>,
    /// Desired cumulative pitch `θ2 + θ3 + θ4`; zero points the tool straight down.
    pub pitch: f64,
    pub elbow: Elbow,
}

impl IkRequest {
    pub fn new(target: Vector3<f64>) -> Self {
        Self { target, pitch: 0.0, elbow: Elbow::Up }
    }

    pub fn with_pitch(mut self, pitch: f64) -> Self {
        self.pitch = pitch;
        self
    }

    pub fn with_elbow(mut self, elbow: Elbow) -> Self {
        self.elbow = elbow;
        self
    }
}

pub fn forward_kinematics(joints: &JointAngles, geom: &ArmGeometry) -> Pose {
    let (s1, c1) = joints.theta(1).sin_cos();
    let (s2, c2) = joints.theta(2).sin_cos();
    let (s23, c23) = joints.theta23().sin_cos();
    let (s234, c234) = joints.theta234().sin_cos();
    let (s5, c5) = joints.theta(5).sin_cos();

    #[rustfmt::skip]
    let rotation = Matrix3::new(
        c1 * c234 * c5 + s1 * s5, -c1 * c234 * s5 + s1 * c5, c1 * s234,
        s1 * c234 * c5 - c1 * s5, -s1 * c234 * s5 - c1 * c5, s1 * s234,
        s234 * c5,                -s234 * s5,                -c234,
    );

    let reach = geom.a2 * c2 + geom.a3 * c23 + geom.d6 * s234;
    let position = Vector3::new(
        c1 * reach,
        s1 * reach,
        geom.d1 + geom.a2 * s2 + geom.a3 * s23 - geom.d6 * c234,
    );

    Pose { rotation, position }
}

/// Solves for joints 1–4 given the tool-tip target and cumulative pitch; joint 5 is set to zero.
pub fn inverse_kinematics(
    req: &IkRequest,
    geom: &ArmGeometry,
) -> Result<JointAngles, KinematicsError> {
    let t = req.target;
    if !(t.x.is_finite() && t.y.is_finite() && t.z.is_finite()) {
        return Err(KinematicsError::NonFinite("IK target"));
    }
    if !req.pitch.is_finite() {
        return Err(KinematicsError::NonFinite("IK pitch"));
    }
    if t.x == 0.0 && t.y == 0.0 {
        return Err(KinematicsError::Singular);
    }

    let theta1 = t.y.atan2(t.x);
    let radial = t.x.hypot(t.y);

    // Wrist center in the arm's vertical plane, relative to the shoulder.
    let (sp, cp) = req.pitch.sin_cos();
    let wr = radial - geom.d6 * sp;
    let wz = t.z - geom.d1 + geom.d6 * cp;

    let (a2, a3) = (geom.a2, geom.a3);
    let dist = wr.hypot(wz);
    let max = a2 + a3;
    let min = (a2 - a3).abs();
    let tol = 1e-9 * max;
    if dist > max + tol || dist < min - tol {
        return Err(KinematicsError::OutOfReach { distance: dist, min, max });
    }

    let cos3 = ((wr * wr + wz * wz - a2 * a2 - a3 * a3) / (2.0 * a2 * a3)).clamp(-1.0, 1.0);
    let sin3_mag = (1.0 - cos3 * cos3).max(0.0).sqrt();
    let sin3 = match req.elbow {
        Elbow::Up => -sin3_mag,
        Elbow::Down => sin3_mag,
    };
    let theta3 = sin3.atan2(cos3);
    let theta2 = wz.atan2(wr) - (a3 * sin3).atan2(a2 + a3 * cos3);
    let theta4 = req.pitch - theta2 - theta3;

    JointAngles::new([theta1, theta2, theta3, theta4, 0.0])
}
