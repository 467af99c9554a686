//! Trajectory-tracking control: offline nominal and gain synthesis, the
//! precomputed estimator, tension distribution, PID fallback and safety.

mod estimator;
mod ilqg;
mod model;
mod observer;
mod pid;
mod riccati;
mod safety;
mod schedule;
mod tension;

pub use estimator::{estimator_precompute, EstimatorNoise, EstimatorStep, NoiseLevels, ObsCov, ObsGain};
pub use ilqg::{
    reference_controls, reference_states, solve_nominal, tracking_gains, CostWeights, IlqgOptions, NominalTrajectory,
};
pub use model::{position_of, state, velocity_of, Control, Obs, ObsMatrix, PlantModel, RobotSensor, State, NU, NX, NZ};
pub use observer::quasi_static_estimate;
pub use pid::{DualSpacePid, PidGains, PidOutput};
pub use riccati::{lqr_backward_pass, riccati_sweep, LqrWeights, StageExpansion, SweepResult};
pub use safety::{safety_monitor, SafetyLevel, SafetyThresholds};
pub use schedule::{synthesize, synthesize_segmented, GainSchedule, OnlineOutput, ScheduleExecutor, ScheduleStep, Synthesis};
pub use tension::{distribute, gravity_compensation, Distribution, GravityCompensation, TensionLimits};

use crate::geometry::GeometryError;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ControlError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("gain synthesis failed at step {step}: control Hessian is not positive definite")]
    Synthesis { step: usize },
    #[error("estimator covariance lost positive definiteness at step {step}")]
    Conditioning { step: usize },
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("schedule index {index} out of range for {len} steps")]
    Index { index: usize, len: usize },
    #[error("target ({x:.3}, {y:.3}) m is outside the workspace")]
    Workspace { x: f64, y: f64 },
}
