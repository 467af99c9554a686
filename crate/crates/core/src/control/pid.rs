//! Dual-space PID for manual and fallback operation: task-space PID wrench,
//! tension distribution, then cable-space damping.

use serde::{Deserialize, Serialize};

use super::model::{position_of, velocity_of, Control, PlantModel, State};
use super::tension::{distribute, TensionLimits};
use super::ControlError;
use crate::geometry::{cable_geometry, structure_matrix, Vec2, CABLES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub kd: f64,
    pub ki: f64,
    /// Bound on each component of the integrated error, m s.
    pub integral_limit: f64,
    /// Cable-space damping, N s/m.
    pub cable_damping: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self { kp: 600.0, kd: 150.0, ki: 100.0, integral_limit: 0.05, cable_damping: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidOutput {
    pub tensions: Control,
    /// Wrench could not be produced or the damping term hit a limit.
    pub saturated: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DualSpacePid {
    pub gains: PidGains,
    integral: Vec2,
}

impl DualSpacePid {
    pub fn new(gains: PidGains) -> Self {
        Self { gains, integral: Vec2::zeros() }
    }

    pub fn reset(&mut self) {
        self.integral = Vec2::zeros();
    }

    pub fn integral(&self) -> Vec2 {
        self.integral
    }

    pub fn step(
        &mut self,
        model: &PlantModel,
        limits: &TensionLimits,
        target: Vec2,
        target_velocity: Vec2,
        estimate: &State,
        dt: f64,
    ) -> Result<PidOutput, ControlError> {
        if !model.geometry.in_workspace(&target) {
            return Err(ControlError::Workspace { x: target.x, y: target.y });
        }
        let p = position_of(estimate);
        let v = velocity_of(estimate);
        let e = target - p;
        let ed = target_velocity - v;
        let g = self.gains;
        let f = e * g.kp + ed * g.kd + self.integral * g.ki - model.gravity_vector() * model.mass;
        let cables = cable_geometry(&model.geometry, &p)?;
        let w = structure_matrix(&model.geometry, &cables);
        let dist = distribute(&w, &f, &limits.mid(), limits);
        let mut u = dist.tensions;
        for i in 0..CABLES {
            let rate = -cables[i].unit_direction.dot(&v);
            u[i] += g.cable_damping * rate;
        }
        let (u, clamped) = limits.clamp(&u);
        let saturated = clamped || !dist.feasible;
        if !saturated {
            let lim = Vec2::repeat(g.integral_limit);
            self.integral = (self.integral + e * dt).sup(&-lim).inf(&lim);
        }
        Ok(PidOutput { tensions: u, saturated })
    }
}
