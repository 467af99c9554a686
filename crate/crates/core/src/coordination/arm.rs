//! Kinematic model of the 4-DoF painting arm: shoulder yaw about the canvas
//! normal, a planar shoulder-pitch/elbow pair, and a wrist that keeps the
//! brush normal to the canvas.
//!
//! Platform frame: x, y in the canvas plane (same axes as the canvas), z
//! along the outward canvas normal. The shoulder sits at the platform
//! reference point and the canvas is the plane z = -canvas_standoff.

use std::f64::consts::FRAC_PI_2;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::CoordinationError;
use crate::geometry::Vec2;

pub const JOINTS: usize = 4;
pub type Joints = [f64; JOINTS];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmMode {
    /// Folded, servos unpowered.
    Rest,
    Prep,
    Painting,
    Dipping,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmState {
    pub mode: ArmMode,
    pub joints: Joints,
    pub stabilizer_engaged: bool,
}

impl ArmState {
    pub fn at_rest(geom: &ArmGeometry) -> Self {
        Self { mode: ArmMode::Rest, joints: geom.rest, stabilizer_engaged: false }
    }

    pub fn powered(&self) -> bool {
        self.mode != ArmMode::Rest
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmGeometry {
    pub links_m: [f64; 2],
    pub joint_min: Joints,
    pub joint_max: Joints,
    /// Trained power-off configuration.
    pub rest: Joints,
    /// Trained waypoints from prep to the brush sitting in the paint cup;
    /// the last entry is the dip configuration.
    pub dip_waypoints: Vec<Joints>,
    /// In-plane brush point relative to the platform reference, meters.
    pub brush_offset_m: [f64; 2],
    pub canvas_standoff_m: f64,
    /// Gap between the brush tip and the canvas in prep.
    pub prep_clearance_m: f64,
    pub joint_speed_rad_s: f64,
}

impl Default for ArmGeometry {
    fn default() -> Self {
        Self {
            links_m: [0.20, 0.18],
            joint_min: [-3.2, -1.8, 0.0, -3.3],
            joint_max: [3.2, 1.8, 2.9, 3.3],
            rest: [-FRAC_PI_2, -0.6, 2.6, -0.4],
            dip_waypoints: vec![[-2.4, 0.3, 1.6, -0.4], [-2.6, 0.6, 1.2, -0.2]],
            brush_offset_m: [0.0, -0.10],
            canvas_standoff_m: 0.22,
            prep_clearance_m: 0.04,
            joint_speed_rad_s: 1.5,
        }
    }
}

impl ArmGeometry {
    pub fn reach(&self) -> f64 {
        self.links_m[0] + self.links_m[1]
    }

    pub fn within_limits(&self, q: &Joints) -> bool {
        (0..JOINTS).all(|j| q[j] >= self.joint_min[j] - 1e-12 && q[j] <= self.joint_max[j] + 1e-12)
    }

    pub fn validate(&self) -> Result<(), CoordinationError> {
        if self.links_m.iter().any(|l| !(*l > 0.0)) || self.joint_speed_rad_s <= 0.0 {
            return Err(CoordinationError::Config("arm links and joint speed must be positive".into()));
        }
        if (self.reach() - 0.38).abs() > 1e-9 {
            return Err(CoordinationError::Config(format!("arm reach {:.4} m, expected 0.38 m", self.reach())));
        }
        if !(self.prep_clearance_m > 0.0 && self.prep_clearance_m < self.canvas_standoff_m) {
            return Err(CoordinationError::Config("prep clearance must lie between 0 and the canvas standoff".into()));
        }
        for (name, q) in std::iter::once(("rest", &self.rest)).chain(self.dip_waypoints.iter().map(|q| ("dip", q))) {
            if !self.within_limits(q) {
                return Err(CoordinationError::Config(format!("trained {name} configuration {q:?} violates joint limits")));
            }
        }
        if self.dip_waypoints.is_empty() {
            return Err(CoordinationError::Config("no dip waypoints trained".into()));
        }
        for mode in [ArmMode::Prep, ArmMode::Painting] {
            self.configuration(mode, 0.0)?;
        }
        Ok(())
    }

    /// Brush tip target in the platform frame, with the drift offset added
    /// to the vertical coordinate.
    pub fn tip_target(&self, mode: ArmMode, drift_m: f64) -> Vector3<f64> {
        let gap = if mode == ArmMode::Painting { 0.0 } else { self.prep_clearance_m };
        Vector3::new(self.brush_offset_m[0], self.brush_offset_m[1] + drift_m, -(self.canvas_standoff_m - gap))
    }

    /// Joint configuration for a mode; prep and painting come from IK.
    pub fn configuration(&self, mode: ArmMode, drift_m: f64) -> Result<Joints, CoordinationError> {
        match mode {
            ArmMode::Rest => Ok(self.rest),
            ArmMode::Dipping => Ok(*self.dip_waypoints.last().expect("validated")),
            ArmMode::Prep | ArmMode::Painting => {
                let q = arm_ik(self, &self.tip_target(mode, drift_m))?;
                if !self.within_limits(&q) {
                    return Err(CoordinationError::JointLimit { configuration: q });
                }
                Ok(q)
            }
        }
    }

    /// In-plane brush position relative to the platform.
    pub fn brush_point(&self, q: &Joints) -> Vec2 {
        let p = arm_fk(self, q);
        Vec2::new(p.x, p.y)
    }
}

pub fn arm_fk(geom: &ArmGeometry, q: &Joints) -> Vector3<f64> {
    let [l1, l2] = geom.links_m;
    let r = l1 * q[1].cos() + l2 * (q[1] + q[2]).cos();
    let d = l1 * q[1].sin() + l2 * (q[1] + q[2]).sin();
    Vector3::new(r * q[0].cos(), r * q[0].sin(), -d)
}

/// Brush axis angle in the arm plane; canvas-normal is pi/2.
pub fn brush_axis_angle(q: &Joints) -> f64 {
    q[1] + q[2] + q[3]
}

/// Elbow-down analytic IK with the brush held normal to the canvas.
pub fn arm_ik(geom: &ArmGeometry, target: &Vector3<f64>) -> Result<Joints, CoordinationError> {
    let [l1, l2] = geom.links_m;
    let r = target.x.hypot(target.y);
    let d = -target.z;
    let dist = r.hypot(d);
    if dist > l1 + l2 + 1e-12 || dist < (l1 - l2).abs() - 1e-12 {
        let deficit = if dist > l1 + l2 { dist - (l1 + l2) } else { (l1 - l2).abs() - dist };
        return Err(CoordinationError::Unreachable { distance: dist, deficit });
    }
    let yaw = if r < 1e-12 { 0.0 } else { target.y.atan2(target.x) };
    let c2 = ((dist * dist - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)).clamp(-1.0, 1.0);
    let q2 = c2.acos();
    let q1 = d.atan2(r) - (l2 * q2.sin()).atan2(l1 + l2 * c2);
    Ok([yaw, q1, q2, FRAC_PI_2 - q1 - q2])
}

/// Piecewise-linear joint trajectory; `times[0]` is zero.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct JointTrajectory {
    pub waypoints: Vec<Joints>,
    pub times: Vec<f64>,
}

impl JointTrajectory {
    pub fn is_empty(&self) -> bool {
        self.waypoints.len() < 2
    }

    pub fn duration(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    pub fn end(&self) -> Option<Joints> {
        self.waypoints.last().copied()
    }

    pub fn sample(&self, t: f64) -> Joints {
        let n = self.waypoints.len();
        if n == 0 {
            return [0.0; JOINTS];
        }
        if t <= 0.0 || n == 1 {
            return self.waypoints[0];
        }
        let k = self.times.partition_point(|&s| s <= t);
        if k >= n {
            return self.waypoints[n - 1];
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let s = (t - t0) / (t1 - t0);
        let (a, b) = (self.waypoints[k - 1], self.waypoints[k]);
        std::array::from_fn(|j| a[j] + s * (b[j] - a[j]))
    }

    fn push(&mut self, q: Joints, speed: f64) {
        match self.waypoints.last() {
            None => {
                self.waypoints.push(q);
                self.times.push(0.0);
            }
            Some(prev) => {
                let step = (0..JOINTS).map(|j| (q[j] - prev[j]).abs()).fold(0.0, f64::max);
                if step == 0.0 {
                    return;
                }
                let t = self.duration() + (step / speed).max(0.02);
                self.waypoints.push(q);
                self.times.push(t);
            }
        }
    }
}

const APPROACH_SAMPLES: usize = 8;

/// Modes visited going from `from` to `to`; everything routes via prep.
pub fn route(from: ArmMode, to: ArmMode) -> Vec<ArmMode> {
    if from == to {
        Vec::new()
    } else if from == ArmMode::Prep || to == ArmMode::Prep {
        vec![to]
    } else {
        log::info!("arm transition {from:?} -> {to:?} rerouted via prep");
        vec![ArmMode::Prep, to]
    }
}

/// Joint-space trajectory from the current arm configuration to `to`.
/// Approach and retreat between prep and painting follow the canvas
/// normal; other legs interpolate through the trained waypoints.
pub fn arm_transition(
    geom: &ArmGeometry,
    from: &ArmState,
    to: ArmMode,
    drift_m: f64,
) -> Result<JointTrajectory, CoordinationError> {
    let mut traj = JointTrajectory::default();
    let legs = route(from.mode, to);
    if legs.is_empty() {
        return Ok(traj);
    }
    let speed = geom.joint_speed_rad_s;
    traj.push(from.joints, speed);
    let mut mode = from.mode;
    for next in legs {
        match (mode, next) {
            (ArmMode::Prep, ArmMode::Painting) | (ArmMode::Painting, ArmMode::Prep) => {
                let (a, b) = (geom.tip_target(mode, drift_m), geom.tip_target(next, drift_m));
                for k in 1..=APPROACH_SAMPLES {
                    let s = k as f64 / APPROACH_SAMPLES as f64;
                    let q = arm_ik(geom, &(a + (b - a) * s))?;
                    traj.push(q, speed);
                }
            }
            (ArmMode::Prep, ArmMode::Dipping) => {
                for q in &geom.dip_waypoints {
                    traj.push(*q, speed);
                }
            }
            (ArmMode::Dipping, ArmMode::Prep) => {
                for q in geom.dip_waypoints.iter().rev().skip(1) {
                    traj.push(*q, speed);
                }
                traj.push(geom.configuration(ArmMode::Prep, drift_m)?, speed);
            }
            _ => traj.push(geom.configuration(next, drift_m)?, speed),
        }
        mode = next;
    }
    if let Some(q) = traj.waypoints.iter().find(|q| !geom.within_limits(q)) {
        return Err(CoordinationError::JointLimit { configuration: *q });
    }
    Ok(traj)
}
