use serde::{Deserialize, Serialize};

use crate::geometry::{RobotGeometry, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SafetyLevel {
    Ok,
    /// Deviation large enough to pause the program and hold.
    Soft,
    /// Deviation or position requiring an abort and controlled descent.
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyThresholds {
    pub soft_m: f64,
    pub hard_m: f64,
}

impl Default for SafetyThresholds {
    fn default() -> Self {
        Self { soft_m: 0.10, hard_m: 0.20 }
    }
}

/// Classifies the estimate against the nominal and the workspace.
pub fn safety_monitor(
    geometry: &RobotGeometry,
    estimate: &Vec2,
    nominal: &Vec2,
    thresholds: &SafetyThresholds,
) -> SafetyLevel {
    let deviation = (estimate - nominal).norm();
    if !deviation.is_finite() || deviation >= thresholds.hard_m || !geometry.contains(estimate, 0.0) {
        SafetyLevel::Hard
    } else if deviation >= thresholds.soft_m || !geometry.in_workspace(estimate) {
        SafetyLevel::Soft
    } else {
        SafetyLevel::Ok
    }
}
