//! Session conductor: arm sequencing, settle pauses, re-dipping, thermal
//! pauses and drift compensation around the CDPR trajectory.

pub mod arm;
mod mission;
mod plan;
mod session;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use arm::{arm_fk, arm_ik, arm_transition, ArmGeometry, ArmMode, ArmState, JointTrajectory, Joints};
pub use mission::{
    program_schedule, run_mission, Mission, MissionConfig, MissionError, MissionOutcome, RobotBelief, Snapshot, TickRecord, TracePoint, TRACE_SCHEMA,
};
pub use plan::{build_motion_plan, Leg, LegKind, MotionPlan};
pub use session::{
    session_tick, AbortReason, Command, OperatorCommand, PauseReason, Session, SessionState, TickInputs,
};

use crate::format::{read_string, write_bytes, FormatError};

pub const EVENT_SCHEMA: &str = "muralbot.events/1";

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum CoordinationError {
    #[error("target is {distance:.4} m from the shoulder, {deficit:.4} m outside the reachable annulus")]
    Unreachable { distance: f64, deficit: f64 },
    #[error("configuration {configuration:?} violates joint limits")]
    JointLimit { configuration: Joints },
    #[error("invalid coordination config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub tick_hz: f64,
    /// Pause between arriving at a stroke and moving the arm in.
    pub settle_before_engage_s: f64,
    /// Pause between stabilizer engagement and the first deposition.
    pub settle_after_engage_s: f64,
    pub dip_distance_m: f64,
    /// Time the brush sits in the cup.
    pub dip_dwell_s: f64,
    pub thermal_pause_c: f64,
    pub thermal_resume_c: f64,
    pub drift_rate_m_per_h: f64,
    /// Resume a soft-limit hold once safety has been clear this long;
    /// `None` waits for the operator.
    pub soft_auto_resume_s: Option<f64>,
    pub arm: ArmGeometry,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            tick_hz: 100.0,
            settle_before_engage_s: 1.0,
            settle_after_engage_s: 2.0,
            dip_distance_m: 0.5,
            dip_dwell_s: 0.5,
            thermal_pause_c: 65.0,
            thermal_resume_c: 50.0,
            drift_rate_m_per_h: 0.01,
            soft_auto_resume_s: Some(2.0),
            arm: ArmGeometry::default(),
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), CoordinationError> {
        if !(self.tick_hz > 0.0) || self.settle_before_engage_s < 0.0 || self.settle_after_engage_s < 0.0 {
            return Err(CoordinationError::Config("tick rate must be positive and settle pauses non-negative".into()));
        }
        if !(self.dip_distance_m > 0.0) {
            return Err(CoordinationError::Config("dip distance must be positive".into()));
        }
        if self.thermal_resume_c >= self.thermal_pause_c {
            return Err(CoordinationError::Config("thermal resume threshold must be below the pause threshold".into()));
        }
        self.arm.validate()
    }

    pub fn tick_s(&self) -> f64 {
        1.0 / self.tick_hz
    }

    pub fn drift(&self, clock_s: f64) -> f64 {
        drift_compensation(clock_s, self.drift_rate_m_per_h)
    }
}

/// Upward offset added to the arm's paint target as the session runs.
pub fn drift_compensation(clock_s: f64, rate_m_per_h: f64) -> f64 {
    rate_m_per_h * clock_s.max(0.0) / 3600.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    Transition { from: SessionState, to: SessionState, cause: String },
    ArmMove { from: ArmMode, to: ArmMode, duration_s: f64 },
    Stabilizer { engaged: bool },
    Dip { painted_m: f64 },
    ProgramStart { program: usize, color: String },
    ProgramEnd { program: usize },
    GravityDescent,
    Note { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    pub events: Vec<Event>,
}

impl EventLog {
    pub fn push(&mut self, t: f64, kind: EventKind) {
        log::debug!("t={t:.3} {kind:?}");
        self.events.push(Event { t, kind });
    }

    pub fn transitions(&self) -> impl Iterator<Item = (f64, &SessionState, &SessionState)> {
        self.events.iter().filter_map(|e| match &e.kind {
            EventKind::Transition { from, to, .. } => Some((e.t, from, to)),
            _ => None,
        })
    }

    /// One JSON object per line after a schema line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{{\"schema\":\"{EVENT_SCHEMA}\"}}")?;
        for e in &self.events {
            serde_json::to_writer(&mut out, e)?;
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), FormatError> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        write_bytes(path, &buf)
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        Self::parse(&read_string(path)?, &path.display().to_string())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self, FormatError> {
        let mut lines = text.lines();
        let head = lines.next().unwrap_or_default();
        if !head.contains(EVENT_SCHEMA) {
            return Err(FormatError::Schema { path: origin.into(), expected: EVENT_SCHEMA.into(), found: head.into() });
        }
        let events = lines
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| FormatError::parse(origin, format!("line {}: {e}", i + 2)))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { events })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drift_is_one_centimeter_per_hour() {
        assert_eq!(drift_compensation(0.0, 0.01), 0.0);
        assert!((drift_compensation(3600.0, 0.01) - 0.01).abs() < 1e-15);
        let half = 0.01 * 1800.0 / 3600.0;
        assert!((SessionConfig::default().drift(1800.0) - half).abs() < 1e-15);
    }

    #[test]
    fn event_log_round_trips() {
        let mut log = EventLog::default();
        log.push(0.0, EventKind::Transition { from: SessionState::Idle, to: SessionState::Traveling, cause: "start".into() });
        log.push(1.5, EventKind::Transition {
            from: SessionState::Painting,
            to: SessionState::Paused(PauseReason::Thermal),
            cause: "servo 66.0 C".into(),
        });
        log.push(2.0, EventKind::Dip { painted_m: 0.52 });
        let mut buf = Vec::new();
        log.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert_eq!(EventLog::parse(&text, "mem").unwrap(), log);
        assert!(EventLog::parse("{}\n", "mem").is_err());
    }

    #[test]
    fn config_rejects_inverted_thermal_band() {
        let c = SessionConfig { thermal_resume_c: 70.0, ..SessionConfig::default() };
        assert!(c.validate().is_err());
        SessionConfig::default().validate().unwrap();
    }
}
