use serde::{Deserialize, Serialize};

use super::arm::{arm_transition, ArmMode, ArmState, JointTrajectory};
use super::plan::{LegKind, MotionPlan};
use super::{EventKind, EventLog, SessionConfig};
use crate::control::SafetyLevel;
use crate::simulator::SERVOS;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PauseReason {
    /// Soft limit: hold position.
    Hold,
    Thermal,
    /// The control layer rejected a command.
    Fault(String),
    Operator,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortReason {
    HardLimit,
    EStop,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Idle,
    Traveling,
    StartPainting,
    Painting,
    StopPainting,
    Refilling,
    Paused(PauseReason),
    Aborted(AbortReason),
}

impl SessionState {
    pub fn name(&self) -> &'static str {
        match self {
            SessionState::Idle => "idle",
            SessionState::Traveling => "traveling",
            SessionState::StartPainting => "start_painting",
            SessionState::Painting => "painting",
            SessionState::StopPainting => "stop_painting",
            SessionState::Refilling => "refilling",
            SessionState::Paused(_) => "paused",
            SessionState::Aborted(_) => "aborted",
        }
    }

    fn active(&self) -> bool {
        !matches!(self, SessionState::Idle | SessionState::Paused(_) | SessionState::Aborted(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorCommand {
    Pause,
    Resume,
    EStop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickInputs {
    /// Simulation time, seconds.
    pub time: f64,
    pub safety: SafetyLevel,
    pub servo_temps: [f64; SERVOS],
    /// Paint laid down since the previous tick, meters.
    pub deposited_m: f64,
    pub control_fault: Option<String>,
    pub operator: Option<OperatorCommand>,
    pub start_program: Option<usize>,
}

impl TickInputs {
    pub fn nominal(time: f64) -> Self {
        Self {
            time,
            safety: SafetyLevel::Ok,
            servo_temps: [25.0; SERVOS],
            deposited_m: 0.0,
            control_fault: None,
            operator: None,
            start_program: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    MoveArm { to: ArmMode, duration_s: f64 },
    GravityDescent,
    ProgramComplete { program: usize },
}

#[derive(Debug, Clone, PartialEq)]
struct ArmMotion {
    traj: JointTrajectory,
    start: f64,
    from: ArmMode,
    to: ArmMode,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Refill {
    Out,
    Dwell(f64),
    Back,
}

/// Single writer of the session state; ticked at the coordinator rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub state: SessionState,
    pub painted_distance_since_dip: f64,
    pub program: usize,
    /// Index of the plan step the platform is tracking.
    pub cursor: usize,
    /// Seconds since the first program started.
    pub clock: f64,
    /// Time of the latest tick; events are stamped with it.
    pub now: f64,
    pub arm: ArmState,
    pub log: EventLog,
    leg: usize,
    started_at: Option<f64>,
    entered_at: f64,
    motion: Option<ArmMotion>,
    engaged_at: Option<f64>,
    refill: Refill,
    resume_to: Option<SessionState>,
    clear_since: Option<f64>,
    stroke_painted: f64,
}

impl Session {
    pub fn new(cfg: &SessionConfig) -> Self {
        Self {
            state: SessionState::Idle,
            painted_distance_since_dip: 0.0,
            program: 0,
            cursor: 0,
            clock: 0.0,
            now: 0.0,
            arm: ArmState::at_rest(&cfg.arm),
            log: EventLog::default(),
            leg: 0,
            started_at: None,
            entered_at: 0.0,
            motion: None,
            engaged_at: None,
            refill: Refill::Out,
            resume_to: None,
            clear_since: None,
            stroke_painted: 0.0,
        }
    }

    /// Paint is laid only while painting with the stabilizer engaged.
    pub fn depositing(&self) -> bool {
        self.state == SessionState::Painting && self.arm.stabilizer_engaged
    }

    pub fn arm_powered(&self) -> bool {
        self.arm.powered() || self.motion.is_some()
    }

    pub fn arm_moving(&self) -> bool {
        self.motion.is_some()
    }

    /// Whether the platform may move on to the next plan step.
    pub fn may_advance(&self, plan: &MotionPlan) -> bool {
        let Some(leg) = plan.legs.get(self.leg) else { return false };
        let matches = matches!(
            (&self.state, leg.kind),
            (SessionState::Traveling, LegKind::Travel)
                | (SessionState::StartPainting, LegKind::Engage)
                | (SessionState::Painting, LegKind::Stroke)
                | (SessionState::StopPainting | SessionState::Refilling, LegKind::Release)
        );
        // Leaving a dwell early runs out its remaining (stationary) steps.
        matches && self.cursor + 1 < leg.end
    }

    /// Called once per control step after the tracking step at `cursor`.
    pub fn advance(&mut self, plan: &MotionPlan) {
        if self.may_advance(plan) {
            self.cursor += 1;
        }
    }

    fn goto(&mut self, to: SessionState, cause: impl Into<String>) {
        let from = std::mem::replace(&mut self.state, to.clone());
        self.log.push(self.now, EventKind::Transition { from, to, cause: cause.into() });
        self.entered_at = self.clock;
    }

    fn move_arm(&mut self, to: ArmMode, cfg: &SessionConfig, cmds: &mut Vec<Command>) {
        let drift = cfg.drift(self.clock);
        let traj = match arm_transition(&cfg.arm, &self.arm, to, drift) {
            Ok(t) => t,
            Err(e) => {
                self.log.push(self.now, EventKind::Note { message: format!("arm transition failed: {e}") });
                self.goto(SessionState::Paused(PauseReason::Fault(e.to_string())), "arm transition failed");
                return;
            }
        };
        if self.arm.stabilizer_engaged {
            self.arm.stabilizer_engaged = false;
            self.log.push(self.now, EventKind::Stabilizer { engaged: false });
        }
        let duration_s = traj.duration();
        self.log.push(self.now, EventKind::ArmMove { from: self.arm.mode, to, duration_s });
        cmds.push(Command::MoveArm { to, duration_s });
        self.motion = Some(ArmMotion { traj, start: self.clock, from: self.arm.mode, to });
    }

    /// Starts a move toward `to` unless the arm is busy or already there.
    /// Returns true once the arm rests in `to`.
    fn ensure_arm(&mut self, to: ArmMode, cfg: &SessionConfig, cmds: &mut Vec<Command>) -> bool {
        if self.motion.is_some() {
            return false;
        }
        if self.arm.mode == to {
            return true;
        }
        self.move_arm(to, cfg, cmds);
        false
    }

    fn update_arm(&mut self) {
        let Some(m) = &self.motion else { return };
        let t = self.clock - m.start;
        self.arm.joints = m.traj.sample(t);
        if t + 1e-9 < m.traj.duration() {
            return;
        }
        let (from, to) = (m.from, m.to);
        if let Some(end) = m.traj.end() {
            self.arm.joints = end;
        }
        self.arm.mode = to;
        self.motion = None;
        log::trace!("arm {from:?} -> {to:?} done");
        if to == ArmMode::Painting {
            self.arm.stabilizer_engaged = true;
            self.log.push(self.now, EventKind::Stabilizer { engaged: true });
            if self.state == SessionState::StartPainting {
                self.engaged_at = Some(self.clock);
            }
        }
    }

    fn pause(&mut self, reason: PauseReason, cause: String) {
        if self.resume_to.is_none() {
            self.resume_to = Some(self.state.clone());
        }
        self.clear_since = None;
        self.goto(SessionState::Paused(reason), cause);
    }

    fn abort(&mut self, reason: AbortReason, cause: &str, cmds: &mut Vec<Command>) {
        self.motion = None;
        self.arm.stabilizer_engaged = false;
        self.goto(SessionState::Aborted(reason), cause);
        self.log.push(self.now, EventKind::GravityDescent);
        cmds.push(Command::GravityDescent);
    }

    fn resume(&mut self, cause: &str) {
        let to = match self.resume_to.take() {
            Some(SessionState::Painting | SessionState::StartPainting) => SessionState::StartPainting,
            Some(SessionState::StopPainting | SessionState::Refilling) => SessionState::StopPainting,
            Some(s @ SessionState::Traveling) => s,
            _ => SessionState::Traveling,
        };
        self.engaged_at = None;
        self.refill = Refill::Out;
        self.goto(to, cause);
    }

    /// Ends a stroke boundary: dip if due, then travel on or finish.
    fn after_release(&mut self, plan: &MotionPlan, cfg: &SessionConfig, cmds: &mut Vec<Command>) {
        if self.painted_distance_since_dip >= cfg.dip_distance_m {
            self.refill = Refill::Out;
            self.goto(SessionState::Refilling, format!("painted {:.3} m since last dip", self.painted_distance_since_dip));
            return;
        }
        if self.leg + 1 < plan.legs.len() {
            self.leg += 1;
            self.goto(SessionState::Traveling, "next stroke");
        } else {
            self.log.push(self.now, EventKind::ProgramEnd { program: self.program });
            cmds.push(Command::ProgramComplete { program: self.program });
            self.goto(SessionState::Idle, "program complete, awaiting color change");
            self.ensure_arm(ArmMode::Rest, cfg, cmds);
        }
    }

    pub fn tick(&mut self, plan: &MotionPlan, inputs: &TickInputs, cfg: &SessionConfig) -> Vec<Command> {
        let mut cmds = Vec::new();
        self.now = inputs.time;
        if let Some(t0) = self.started_at {
            self.clock = inputs.time - t0;
        }
        self.update_arm();
        if matches!(self.state, SessionState::Aborted(_)) {
            return cmds;
        }
        if inputs.operator == Some(OperatorCommand::EStop) {
            self.abort(AbortReason::EStop, "operator e-stop", &mut cmds);
            return cmds;
        }
        if inputs.safety == SafetyLevel::Hard {
            self.abort(AbortReason::HardLimit, "hard limit: deviation or workspace", &mut cmds);
            return cmds;
        }
        self.painted_distance_since_dip += inputs.deposited_m;
        self.stroke_painted += inputs.deposited_m;

        let hottest = inputs.servo_temps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if self.state.active() {
            if let Some(msg) = &inputs.control_fault {
                self.pause(PauseReason::Fault(msg.clone()), format!("control fault: {msg}"));
            } else if hottest >= cfg.thermal_pause_c {
                self.pause(PauseReason::Thermal, format!("servo temperature {hottest:.1} C"));
            } else if inputs.safety == SafetyLevel::Soft {
                self.pause(PauseReason::Hold, "soft limit: deviation".into());
            } else if inputs.operator == Some(OperatorCommand::Pause) {
                self.pause(PauseReason::Operator, "operator pause".into());
            }
        }

        match self.state.clone() {
            SessionState::Idle => {
                if let Some(p) = inputs.start_program {
                    self.started_at.get_or_insert(inputs.time);
                    self.clock = inputs.time - self.started_at.expect("set");
                    self.program = p;
                    self.cursor = 0;
                    self.leg = 0;
                    self.painted_distance_since_dip = 0.0;
                    self.log.push(self.now, EventKind::ProgramStart { program: p, color: plan.color.clone() });
                    self.goto(SessionState::Traveling, "program start");
                    self.ensure_arm(ArmMode::Prep, cfg, &mut cmds);
                }
            }
            SessionState::Traveling => {
                self.ensure_arm(ArmMode::Prep, cfg, &mut cmds);
                let leg = plan.legs.get(self.leg);
                let arrived = match leg {
                    Some(l) if l.kind == LegKind::Travel => self.cursor + 1 >= l.end,
                    _ => true,
                };
                if arrived {
                    if leg.is_some_and(|l| l.kind == LegKind::Travel) {
                        self.leg += 1;
                    }
                    self.engaged_at = None;
                    self.goto(SessionState::StartPainting, "at stroke start");
                }
            }
            SessionState::StartPainting => match self.engaged_at {
                None => {
                    if self.motion.is_none() && self.arm.mode == ArmMode::Prep {
                        if self.clock - self.entered_at >= cfg.settle_before_engage_s - 1e-9 {
                            self.move_arm(ArmMode::Painting, cfg, &mut cmds);
                        }
                    } else if self.motion.is_none() && self.arm.mode == ArmMode::Painting {
                        // Engaged without a recorded time: restart the settle from here.
                        self.engaged_at = Some(self.clock);
                    } else {
                        self.ensure_arm(ArmMode::Prep, cfg, &mut cmds);
                    }
                }
                Some(te) => {
                    if self.clock - te >= cfg.settle_after_engage_s - 1e-9 {
                        if plan.legs.get(self.leg).is_some_and(|l| l.kind == LegKind::Engage) {
                            self.leg += 1;
                        }
                        self.stroke_painted = 0.0;
                        self.goto(SessionState::Painting, "brush settled on canvas");
                    }
                }
            },
            SessionState::Painting => {
                let done = plan.legs.get(self.leg).map_or(true, |l| self.cursor + 1 >= l.end);
                if done {
                    if self.stroke_painted > cfg.dip_distance_m {
                        self.log.push(self.now, EventKind::Note {
                            message: format!(
                                "stroke of {:.3} m exceeds the dip distance; dipping at this boundary",
                                self.stroke_painted
                            ),
                        });
                    }
                    self.leg += 1;
                    self.goto(SessionState::StopPainting, "stroke complete");
                    self.move_arm(ArmMode::Prep, cfg, &mut cmds);
                }
            }
            SessionState::StopPainting => {
                if self.ensure_arm(ArmMode::Prep, cfg, &mut cmds) {
                    self.after_release(plan, cfg, &mut cmds);
                }
            }
            SessionState::Refilling => match self.refill {
                Refill::Out => {
                    if self.ensure_arm(ArmMode::Dipping, cfg, &mut cmds) {
                        self.refill = Refill::Dwell(self.clock);
                    }
                }
                Refill::Dwell(since) => {
                    if self.clock - since >= cfg.dip_dwell_s - 1e-9 {
                        self.refill = Refill::Back;
                        self.ensure_arm(ArmMode::Prep, cfg, &mut cmds);
                    }
                }
                Refill::Back => {
                    if self.ensure_arm(ArmMode::Prep, cfg, &mut cmds) {
                        self.log.push(self.now, EventKind::Dip { painted_m: self.painted_distance_since_dip });
                        self.painted_distance_since_dip = 0.0;
                        self.refill = Refill::Out;
                        if self.leg + 1 < plan.legs.len() {
                            self.leg += 1;
                            self.goto(SessionState::Traveling, "brush refilled");
                        } else {
                            self.log.push(self.now, EventKind::ProgramEnd { program: self.program });
                            cmds.push(Command::ProgramComplete { program: self.program });
                            self.goto(SessionState::Idle, "program complete, awaiting color change");
                            self.ensure_arm(ArmMode::Rest, cfg, &mut cmds);
                        }
                    }
                }
            },
            SessionState::Paused(reason) => {
                let parked = match reason {
                    PauseReason::Thermal => self.ensure_arm(ArmMode::Rest, cfg, &mut cmds),
                    _ if self.arm.mode == ArmMode::Rest => self.motion.is_none(),
                    _ => self.ensure_arm(ArmMode::Prep, cfg, &mut cmds),
                };
                let operator_resume = inputs.operator == Some(OperatorCommand::Resume);
                let clear = inputs.safety == SafetyLevel::Ok && inputs.control_fault.is_none();
                if clear {
                    self.clear_since.get_or_insert(self.clock);
                } else {
                    self.clear_since = None;
                }
                let ready = parked
                    && clear
                    && match reason {
                        PauseReason::Thermal => hottest <= cfg.thermal_resume_c,
                        PauseReason::Hold => {
                            operator_resume
                                || cfg.soft_auto_resume_s.is_some_and(|s| {
                                    self.clear_since.is_some_and(|c| self.clock - c >= s - 1e-9)
                                })
                        }
                        PauseReason::Fault(_) | PauseReason::Operator => operator_resume,
                    };
                if ready {
                    let cause = match reason {
                        PauseReason::Thermal => format!("servos cooled to {hottest:.1} C"),
                        _ if operator_resume => "operator resume".into(),
                        _ => "deviation cleared".into(),
                    };
                    self.resume(&cause);
                }
            }
            SessionState::Aborted(_) => {}
        }
        cmds
    }
}

/// Functional form of [`Session::tick`].
pub fn session_tick(
    session: &Session,
    plan: &MotionPlan,
    inputs: &TickInputs,
    cfg: &SessionConfig,
) -> (Session, Vec<Command>) {
    let mut next = session.clone();
    let cmds = next.tick(plan, inputs, cfg);
    (next, cmds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coordination::plan::build_motion_plan;
    use crate::coordination::plan::fixtures::two_stroke_program;
    use crate::coordination::EventKind;
    use crate::simulator::{update_servo_temps, ThermalModel};

    struct Run {
        session: Session,
        cursors: Vec<usize>,
        commands: Vec<(f64, Command)>,
        /// (clock, deposited, stabilizer) per tick.
        ticks: Vec<(f64, f64, bool)>,
    }

    /// Perfect tracking: the platform is always at the plan step.
    fn drive(plan: &MotionPlan, cfg: &SessionConfig, mut inject: impl FnMut(&Session, &mut TickInputs)) -> Run {
        let mut s = Session::new(cfg);
        let per_tick = (cfg.tick_s() / plan.dt).round() as usize;
        let thermal = ThermalModel::default();
        let mut temps = [thermal.ambient_c; SERVOS];
        let (mut cursors, mut commands, mut ticks) = (vec![0], Vec::new(), Vec::new());
        let mut deposited = 0.0;
        let mut started = false;
        for k in 0..4_000_000usize {
            let prev = s.cursor;
            s.advance(plan);
            if s.cursor != prev {
                cursors.push(s.cursor);
            }
            if s.depositing() {
                deposited += (plan.brush[s.cursor] - plan.brush[prev]).norm();
            }
            temps = update_servo_temps(&temps, s.arm_powered(), plan.dt, &thermal);
            if k % per_tick == 0 {
                let t = k as f64 * plan.dt;
                let mut inputs = TickInputs { deposited_m: deposited, servo_temps: temps, ..TickInputs::nominal(t) };
                if !started {
                    inputs.start_program = Some(0);
                    started = true;
                }
                inject(&s, &mut inputs);
                temps = inputs.servo_temps;
                let stab = s.arm.stabilizer_engaged;
                for c in s.tick(plan, &inputs, cfg) {
                    commands.push((s.clock, c));
                }
                ticks.push((s.clock, deposited, stab));
                deposited = 0.0;
                if matches!(s.state, SessionState::Aborted(_))
                    || (s.state == SessionState::Idle && commands.iter().any(|(_, c)| matches!(c, Command::ProgramComplete { .. })))
                {
                    break;
                }
            }
        }
        Run { session: s, cursors, commands, ticks }
    }

    /// No plan step skipped or repeated, and every stroke fully traversed.
    fn assert_consecutive(cursors: &[usize], plan: &MotionPlan) {
        let last = *cursors.last().unwrap();
        assert!(cursors.iter().copied().eq(0..=last));
        assert!(last + 1 >= plan.strokes().last().unwrap().end);
    }

    fn transition_times(log: &EventLog, to: &SessionState) -> Vec<f64> {
        log.transitions().filter(|(_, _, t)| *t == to).map(|(t, _, _)| t).collect()
    }

    #[test]
    fn nominal_program_visits_every_state_in_order() {
        let cfg = SessionConfig::default();
        let plan = build_motion_plan(&two_stroke_program(), &cfg).unwrap();
        let run = drive(&plan, &cfg, |_, _| {});
        let s = &run.session;
        assert_eq!(s.state, SessionState::Idle);
        let names: Vec<&str> = s.log.transitions().map(|(_, _, to)| to.name()).collect();
        assert_eq!(
            names,
            [
                "traveling", "start_painting", "painting", "stop_painting", "traveling", "start_painting", "painting",
                "stop_painting", "refilling", "idle"
            ]
        );
        // Every plan step visited exactly once, in order.
        assert_consecutive(&run.cursors, &plan);
        // Paint only while the stabilizer is engaged.
        assert!(run.ticks.iter().all(|&(_, d, stab)| d == 0.0 || stab));
        let painted: f64 = run.ticks.iter().map(|t| t.1).sum();
        assert!((painted - 0.8).abs() < 1e-9, "{painted}");
        let dips: Vec<f64> = s
            .log
            .events
            .iter()
            .filter_map(|e| if let EventKind::Dip { painted_m } = e.kind { Some(painted_m) } else { None })
            .collect();
        assert_eq!(dips.len(), 1);
        assert!((dips[0] - 0.8).abs() < 1e-9);
    }

    #[test]
    fn settle_pauses_bracket_engagement() {
        let cfg = SessionConfig::default();
        let plan = build_motion_plan(&two_stroke_program(), &cfg).unwrap();
        let s = drive(&plan, &cfg, |_, _| {}).session;
        let starts = transition_times(&s.log, &SessionState::StartPainting);
        let paints = transition_times(&s.log, &SessionState::Painting);
        let engage_moves: Vec<f64> = s
            .log
            .events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::ArmMove { to: ArmMode::Painting, .. }))
            .map(|e| e.t)
            .collect();
        let engaged: Vec<f64> = s
            .log
            .events
            .iter()
            .filter(|e| e.kind == EventKind::Stabilizer { engaged: true })
            .map(|e| e.t)
            .collect();
        assert_eq!(starts.len(), 2);
        for i in 0..2 {
            assert!(engage_moves[i] - starts[i] >= 1.0 - 1e-9);
            assert!(paints[i] - engaged[i] >= 2.0 - 1e-9);
            assert!(engaged[i] > engage_moves[i]);
        }
    }

    #[test]
    fn thermal_pause_resumes_at_the_same_cursor() {
        let cfg = SessionConfig::default();
        let plan = build_motion_plan(&two_stroke_program(), &cfg).unwrap();
        let mut fired = false;
        let run = drive(&plan, &cfg, |s, inp| {
            if !fired && s.state == SessionState::Painting && s.cursor > plan.legs[1].start + 150 {
                inp.servo_temps = [66.0; SERVOS];
                fired = true;
            }
        });
        let s = &run.session;
        assert_eq!(s.state, SessionState::Idle);
        let paused = transition_times(&s.log, &SessionState::Paused(PauseReason::Thermal));
        assert_eq!(paused.len(), 1);
        let resumed: Vec<(f64, &SessionState)> =
            s.log.transitions().filter(|(_, f, _)| matches!(f, SessionState::Paused(_))).map(|(t, _, to)| (t, to)).collect();
        assert_eq!(resumed.len(), 1);
        assert_eq!(resumed[0].1, &SessionState::StartPainting);
        // Cooling from 66 C to 50 C takes minutes with the default model.
        assert!(resumed[0].0 - paused[0] > 60.0);
        assert_consecutive(&run.cursors, &plan);
        assert!(run.ticks.iter().all(|&(_, d, stab)| d == 0.0 || stab));
        let painted: f64 = run.ticks.iter().map(|t| t.1).sum();
        assert!((painted - 0.8).abs() < 1e-9);
    }

    #[test]
    fn hard_limit_aborts_with_gravity_descent() {
        let cfg = SessionConfig::default();
        let plan = build_motion_plan(&two_stroke_program(), &cfg).unwrap();
        let run = drive(&plan, &cfg, |s, inp| {
            if s.state == SessionState::Painting {
                inp.safety = SafetyLevel::Hard;
            }
        });
        assert_eq!(run.session.state, SessionState::Aborted(AbortReason::HardLimit));
        assert!(run.commands.iter().any(|(_, c)| *c == Command::GravityDescent));
        assert!(!run.session.arm.stabilizer_engaged);
    }

    #[test]
    fn soft_limit_holds_then_resumes() {
        let cfg = SessionConfig::default();
        let plan = build_motion_plan(&two_stroke_program(), &cfg).unwrap();
        let mut window = None;
        let run = drive(&plan, &cfg, |s, inp| {
            if s.state == SessionState::Painting && window.is_none() {
                window = Some(s.clock);
            }
            if window.is_some_and(|w| s.clock < w + 0.5) {
                inp.safety = SafetyLevel::Soft;
            }
        });
        let s = &run.session;
        assert_eq!(s.state, SessionState::Idle);
        let held = transition_times(&s.log, &SessionState::Paused(PauseReason::Hold));
        assert_eq!(held.len(), 1);
        assert_consecutive(&run.cursors, &plan);
    }

    #[test]
    fn operator_estop_aborts_within_one_tick() {
        let cfg = SessionConfig::default();
        let plan = build_motion_plan(&two_stroke_program(), &cfg).unwrap();
        for target in ["traveling", "start_painting", "painting", "stop_painting", "refilling"] {
            let mut sent = None;
            let run = drive(&plan, &cfg, |s, inp| {
                if s.state.name() == target && sent.is_none() {
                    inp.operator = Some(OperatorCommand::EStop);
                    sent = Some(s.clock);
                }
            });
            assert_eq!(run.session.state, SessionState::Aborted(AbortReason::EStop), "{target}");
            let at = transition_times(&run.session.log, &SessionState::Aborted(AbortReason::EStop))[0];
            assert!(at - sent.unwrap() <= cfg.tick_s() + 1e-9, "{target}");
        }
    }

    #[test]
    fn functional_tick_leaves_input_untouched() {
        let cfg = SessionConfig::default();
        let plan = build_motion_plan(&two_stroke_program(), &cfg).unwrap();
        let s = Session::new(&cfg);
        let inputs = TickInputs { start_program: Some(0), ..TickInputs::nominal(0.0) };
        let (next, cmds) = session_tick(&s, &plan, &inputs, &cfg);
        assert_eq!(s.state, SessionState::Idle);
        assert_eq!(next.state, SessionState::Traveling);
        assert!(matches!(cmds[0], Command::MoveArm { to: ArmMode::Prep, .. }));
    }
}
