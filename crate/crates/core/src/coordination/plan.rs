//! Platform motion for one program, with stationary dwells where the arm
//! works so the tracking schedule is synthesized around them.

use super::arm::{arm_transition, ArmMode, ArmState};
use super::{CoordinationError, SessionConfig};
use crate::artwork::PaintProgram;
use crate::geometry::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LegKind {
    Travel,
    /// Dwell at a stroke start: settle, engage, settle.
    Engage,
    Stroke,
    /// Dwell at a stroke end: withdraw and possibly dip.
    Release,
}

/// Half-open step range `[start, end)` of the plan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leg {
    pub kind: LegKind,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionPlan {
    pub color: String,
    pub dt: f64,
    /// Platform reference targets, one per control step.
    pub targets: Vec<Vec2>,
    /// Brush path the targets were derived from.
    pub brush: Vec<Vec2>,
    pub legs: Vec<Leg>,
}

impl MotionPlan {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.targets.len().saturating_sub(1) as f64 * self.dt
    }

    pub fn leg_at(&self, step: usize) -> Option<usize> {
        self.legs.iter().position(|l| step >= l.start && step < l.end)
    }

    pub fn strokes(&self) -> impl Iterator<Item = &Leg> {
        self.legs.iter().filter(|l| l.kind == LegKind::Stroke)
    }
}

fn arm_time(cfg: &SessionConfig, from: ArmMode, to: ArmMode) -> Result<f64, CoordinationError> {
    let q = cfg.arm.configuration(from, 0.0)?;
    let s = ArmState { mode: from, joints: q, stabilizer_engaged: false };
    Ok(arm_transition(&cfg.arm, &s, to, 0.0)?.duration())
}

/// Lays out the program with dwells sized for the nominal arm timings.
/// Dips are predicted from the program's stroke lengths; the session
/// decides at run time and holds in place if a dwell runs out.
pub fn build_motion_plan(program: &PaintProgram, cfg: &SessionConfig) -> Result<MotionPlan, CoordinationError> {
    let dt = program.dt();
    let margin = 0.2;
    let engage = cfg.settle_before_engage_s + arm_time(cfg, ArmMode::Prep, ArmMode::Painting)? + cfg.settle_after_engage_s;
    let release = arm_time(cfg, ArmMode::Painting, ArmMode::Prep)?;
    let dip = arm_time(cfg, ArmMode::Prep, ArmMode::Dipping)? + cfg.dip_dwell_s + arm_time(cfg, ArmMode::Dipping, ArmMode::Prep)?;
    let offset = Vec2::new(cfg.arm.brush_offset_m[0], cfg.arm.brush_offset_m[1]);

    let mut brush: Vec<Vec2> = Vec::new();
    let mut legs = Vec::new();
    let mut painted = 0.0;
    let mut push_leg = |brush: &mut Vec<Vec2>, kind: LegKind, pts: &[Vec2]| {
        if pts.is_empty() {
            return;
        }
        let start = brush.len();
        brush.extend_from_slice(pts);
        legs.push(Leg { kind, start, end: brush.len() });
    };
    for seg in &program.segments {
        let s = &seg.trajectory.samples;
        if s.is_empty() {
            continue;
        }
        // Each trajectory begins where the previous one ended.
        let body = if brush.is_empty() { &s[..] } else { &s[1..] };
        if !seg.engaged {
            push_leg(&mut brush, LegKind::Travel, body);
            continue;
        }
        let at = |secs: f64| vec![s[0]; (secs / dt).ceil() as usize];
        push_leg(&mut brush, LegKind::Engage, &at(engage + margin));
        push_leg(&mut brush, LegKind::Stroke, &s[1..]);
        painted += seg.trajectory.arc_length();
        let mut hold = release + margin;
        if painted >= cfg.dip_distance_m {
            hold += dip;
            painted = 0.0;
        }
        let end = *s.last().expect("non-empty");
        push_leg(&mut brush, LegKind::Release, &vec![end; (hold / dt).ceil() as usize]);
    }
    let targets = brush.iter().map(|b| b - offset).collect();
    Ok(MotionPlan { color: program.color.clone(), dt, targets, brush, legs })
}
