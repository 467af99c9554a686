//! Closed-loop painting run: simulator, tracking executor, coordinator and
//! canvas stepped together on the simulation clock, one control step at a time.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::plan::{build_motion_plan, LegKind, MotionPlan};
use super::session::{AbortReason, Command, OperatorCommand, Session, SessionState, TickInputs};
use super::{CoordinationError, EventLog, SessionConfig};
use crate::artwork::{retime, CornerPolicy, PaintProgram, RetimeLimits};
use crate::calibration::{CalibrationError, HomographyMap};
use crate::control::{
    gravity_compensation, position_of, quasi_static_estimate, safety_monitor, synthesize_segmented, velocity_of,
    Control, ControlError, CostWeights, DualSpacePid, GainSchedule, IlqgOptions, NoiseLevels, PidGains, PlantModel,
    RobotSensor, SafetyLevel, SafetyThresholds, ScheduleExecutor, State, TensionLimits,
};
use crate::format::{fmt_f64, read_csv_rows, write_bytes, FormatError};
use crate::geometry::{Vec2, CABLES};
use crate::simulator::{CanvasRaster, Fault, FaultKind, SimError, Simulator, SERVOS};

#[derive(Debug, thiserror::Error)]
pub enum MissionError {
    #[error(transparent)]
    Coordination(#[from] CoordinationError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error("{0}")]
    Config(String),
    #[error("mission exceeded {0:.0} s of simulated time")]
    Timeout(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MissionConfig {
    pub session: SessionConfig,
    pub safety: SafetyThresholds,
    pub limits: TensionLimits,
    pub weights: CostWeights,
    pub ilqg: IlqgOptions,
    pub noise: NoiseLevels,
    pub pid: PidGains,
    /// Manual-mode approach to each program start.
    pub approach_speed_m_s: f64,
    pub approach_tolerance_m: f64,
    /// Operator time to swap paint between programs.
    pub color_swap_s: f64,
    /// Net downward force left after gravity compensation during descent.
    pub descent_force_n: f64,
    pub max_descent_s: f64,
    pub max_duration_s: f64,
    /// Joystick speed limit in manual mode.
    pub manual_speed_m_s: f64,
}

impl Default for MissionConfig {
    fn default() -> Self {
        Self {
            session: SessionConfig::default(),
            safety: SafetyThresholds::default(),
            limits: TensionLimits::default(),
            weights: CostWeights::default(),
            ilqg: IlqgOptions::default(),
            noise: NoiseLevels::default(),
            pid: PidGains::default(),
            approach_speed_m_s: 0.1,
            approach_tolerance_m: 0.003,
            color_swap_s: 30.0,
            descent_force_n: 0.2,
            max_descent_s: 120.0,
            max_duration_s: 7200.0,
            manual_speed_m_s: 0.1,
        }
    }
}

/// What the robot believes about itself.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotBelief {
    pub plant: PlantModel,
    pub sensor: RobotSensor,
    /// True-to-believed task-space map applied to every target.
    pub map: Option<HomographyMap>,
}

/// Coordinator-rate record of the run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TickRecord {
    pub t: f64,
    pub program: usize,
    pub state: &'static str,
    pub cursor: usize,
    pub stabilizer: bool,
    pub arm_powered: bool,
    pub deposited_m: f64,
    pub safety: SafetyLevel,
    /// Largest estimate-to-nominal distance during the tick, meters.
    pub deviation: f64,
    pub max_servo_c: f64,
    /// True platform position.
    pub platform: [f64; 2],
    pub estimate: [f64; 2],
    /// True-frame reference for the platform.
    pub reference: [f64; 2],
    pub brush: [f64; 2],
}

/// Platform tracking sample while the session follows the plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TracePoint {
    pub t: f64,
    pub reference: [f64; 2],
    pub measured: [f64; 2],
}

#[derive(Debug)]
pub struct MissionOutcome {
    pub log: EventLog,
    pub canvas: CanvasRaster,
    pub ticks: Vec<TickRecord>,
    pub trace: Vec<TracePoint>,
    /// (t, true height) from the abort onwards.
    pub descent: Vec<(f64, f64)>,
    pub aborted: Option<AbortReason>,
    pub programs_completed: usize,
    pub duration_s: f64,
}

pub const TRACE_SCHEMA: &str = "muralbot.trace/1";

impl MissionOutcome {
    pub fn write_trace_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# schema {TRACE_SCHEMA}")?;
        writeln!(out, "t,x_ref,y_ref,x_meas,y_meas")?;
        for p in &self.trace {
            let f = [p.t, p.reference[0], p.reference[1], p.measured[0], p.measured[1]].map(fmt_f64);
            writeln!(out, "{}", f.join(","))?;
        }
        Ok(())
    }

    pub fn save_trace(&self, path: &Path) -> Result<(), FormatError> {
        let mut buf = Vec::new();
        self.write_trace_csv(&mut buf).expect("writing to memory");
        write_bytes(path, &buf)
    }
}

impl TracePoint {
    pub fn load_csv(path: &Path) -> Result<Vec<TracePoint>, FormatError> {
        read_csv_rows(path, TRACE_SCHEMA)?
            .into_iter()
            .enumerate()
            .map(|(n, r)| match r[..] {
                [t, xr, yr, xm, ym] => Ok(TracePoint { t, reference: [xr, yr], measured: [xm, ym] }),
                _ => Err(FormatError::parse(path, format!("row {}: expected 5 columns", n + 1))),
            })
            .collect()
    }
}

fn arr(v: &Vec2) -> [f64; 2] {
    [v.x, v.y]
}

fn tensions(u: &Control) -> [f64; CABLES] {
    std::array::from_fn(|i| u[i])
}

/// Latest state of the run, as published to an operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub phase: String,
    pub session: SessionState,
    pub program: Option<usize>,
    pub estimate: [f64; 2],
    pub velocity: [f64; 2],
    pub tensions: [f64; CABLES],
    pub servo_temps: [f64; SERVOS],
    pub safety: SafetyLevel,
}

enum Phase {
    /// Manual mode: the PID follows a target moved by the jog velocity.
    Hold { target: Vec2, velocity: Vec2 },
    /// Paint change before `program`.
    Swap { program: usize, target: Vec2, until: f64 },
    /// Manual-mode move to the start of `program`.
    Approach { program: usize, path: Vec<Vec2>, k: usize, t0: f64 },
    Paint { program: usize, exec: ScheduleExecutor, parked: bool, starting: bool },
    Descent { t0: f64 },
    Done,
}

impl Phase {
    fn name(&self) -> &'static str {
        match self {
            Phase::Hold { .. } => "hold",
            Phase::Swap { .. } => "swap",
            Phase::Approach { .. } => "approach",
            Phase::Paint { .. } => "paint",
            Phase::Descent { .. } => "descent",
            Phase::Done => "done",
        }
    }

    fn program(&self) -> Option<usize> {
        match self {
            Phase::Swap { program, .. } | Phase::Approach { program, .. } | Phase::Paint { program, .. } => {
                Some(*program)
            }
            _ => None,
        }
    }
}

/// A painting run that advances one control step per [`Mission::step`].
/// Between programs, and before [`Mission::start`], it holds station in
/// manual mode and can be jogged.
pub struct Mission<R> {
    robot: RobotBelief,
    sim: Simulator<R>,
    cfg: MissionConfig,
    faults: Vec<Fault>,
    heat_applied: Vec<bool>,
    plans: Vec<MotionPlan>,
    /// Believed-frame targets per plan.
    commanded: Vec<Vec<Vec2>>,
    schedules: Vec<GainSchedule>,
    idle_plan: MotionPlan,
    phase: Phase,
    pid: DualSpacePid,
    canvas: CanvasRaster,
    session: Session,
    ticks: Vec<TickRecord>,
    trace: Vec<TracePoint>,
    descent: Vec<(f64, f64)>,
    per_tick: usize,
    step: usize,
    estimate: State,
    tensions: Control,
    deposited: f64,
    last_brush: Option<Vec2>,
    worst: SafetyLevel,
    last_level: SafetyLevel,
    /// Largest estimate-to-nominal distance since the last tick.
    deviation: f64,
    fault: Option<String>,
    operator: Option<OperatorCommand>,
    aborted: Option<AbortReason>,
    completed: usize,
}

impl<R: Rng> Mission<R> {
    /// Builds the plans and synthesizes a schedule for every program.
    pub fn new(
        robot: RobotBelief,
        sim: Simulator<R>,
        programs: &[PaintProgram],
        canvas: CanvasRaster,
        faults: Vec<Fault>,
        cfg: MissionConfig,
    ) -> Result<Self, MissionError> {
        Self::with_schedules(robot, sim, programs, None, canvas, faults, cfg)
    }

    /// As [`Mission::new`], reusing schedules from [`program_schedule`] when
    /// given, one per program.
    pub fn with_schedules(
        robot: RobotBelief,
        mut sim: Simulator<R>,
        programs: &[PaintProgram],
        schedules: Option<Vec<GainSchedule>>,
        canvas: CanvasRaster,
        faults: Vec<Fault>,
        cfg: MissionConfig,
    ) -> Result<Self, MissionError> {
        cfg.session.validate()?;
        let dt = robot.plant.dt;
        if (sim.config.timestep - dt).abs() > 1e-12 {
            return Err(MissionError::Config(format!(
                "simulator timestep {} s differs from the controller's {} s",
                sim.config.timestep, dt
            )));
        }
        let per_tick = (cfg.session.tick_s() / dt).round() as usize;
        if per_tick == 0 || (per_tick as f64 * dt - cfg.session.tick_s()).abs() > 1e-9 {
            return Err(MissionError::Config("coordinator tick must be a whole number of control steps".into()));
        }
        if let Some(s) = &schedules {
            if s.len() != programs.len() {
                return Err(MissionError::Config(format!("{} gain schedules for {} programs", s.len(), programs.len())));
            }
        }
        let mut given = schedules.map(|v| v.into_iter());
        let mut plans = Vec::with_capacity(programs.len());
        let mut commanded = Vec::with_capacity(programs.len());
        let mut schedules = Vec::with_capacity(programs.len());
        for (i, p) in programs.iter().enumerate() {
            let (plan, targets) = plan_program(&robot, p, &cfg)?;
            let schedule = match given.as_mut().and_then(|g| g.next()) {
                Some(s) => {
                    if s.steps.len() != targets.len() || (s.dt - dt).abs() > 1e-12 {
                        return Err(MissionError::Config(format!(
                            "gain schedule {i} has {} steps at {} s; program `{}` needs {} at {} s",
                            s.steps.len(),
                            s.dt,
                            p.color,
                            targets.len(),
                            dt
                        )));
                    }
                    s
                }
                None => synthesize_plan(&robot, &plan, &targets, &cfg)?,
            };
            log::info!("program {i} ({}): {} steps", plan.color, targets.len());
            plans.push(plan);
            commanded.push(targets);
            schedules.push(schedule);
        }
        let z0 = robot.sensor.measurement(&sim.measure()?);
        let estimate = quasi_static_estimate(&robot.plant.geometry, &z0, Some(sim.state.position))?;
        let idle_plan = MotionPlan { color: String::new(), dt, targets: Vec::new(), brush: Vec::new(), legs: Vec::new() };
        let hold = position_of(&estimate);
        Ok(Self {
            heat_applied: vec![false; faults.len()],
            session: Session::new(&cfg.session),
            pid: DualSpacePid::new(cfg.pid),
            robot,
            sim,
            cfg,
            faults,
            plans,
            commanded,
            schedules,
            idle_plan,
            phase: Phase::Hold { target: hold, velocity: Vec2::zeros() },
            canvas,
            ticks: Vec::new(),
            trace: Vec::new(),
            descent: Vec::new(),
            per_tick,
            step: 0,
            estimate,
            tensions: Control::zeros(),
            deposited: 0.0,
            last_brush: None,
            worst: SafetyLevel::Ok,
            last_level: SafetyLevel::Ok,
            deviation: 0.0,
            fault: None,
            operator: None,
            aborted: None,
            completed: 0,
        })
    }

    /// Begins the programs from manual hold. Returns false when there is
    /// nothing to start.
    pub fn start(&mut self) -> bool {
        if !matches!(self.phase, Phase::Hold { .. }) || self.completed >= self.plans.len() {
            return false;
        }
        let program = self.completed;
        self.pid.reset();
        self.phase = if program == 0 {
            self.approach(program)
        } else {
            let target = position_of(&self.estimate);
            Phase::Swap { program, target, until: self.sim.time + self.cfg.color_swap_s }
        };
        true
    }

    /// Queues an operator command for the next coordinator tick.
    pub fn operator(&mut self, cmd: OperatorCommand) {
        self.operator = Some(cmd);
    }

    /// Sets the manual jog velocity, clamped to the manual speed limit.
    /// Ignored outside manual hold; returns whether it was applied.
    pub fn jog(&mut self, velocity: Vec2) -> bool {
        let limit = self.cfg.manual_speed_m_s;
        match &mut self.phase {
            Phase::Hold { velocity: v, .. } => {
                let speed = velocity.norm();
                *v = if speed > limit { velocity * (limit / speed) } else { velocity };
                true
            }
            _ => false,
        }
    }

    /// Current jog setpoint, when in manual hold.
    pub fn jog_velocity(&self) -> Option<Vec2> {
        match &self.phase {
            Phase::Hold { velocity, .. } => Some(*velocity),
            _ => None,
        }
    }

    /// In manual hold, not aborted.
    pub fn holding(&self) -> bool {
        matches!(self.phase, Phase::Hold { .. })
    }

    /// Running programs or descending.
    pub fn busy(&self) -> bool {
        !matches!(self.phase, Phase::Hold { .. } | Phase::Done)
    }

    pub fn finished(&self) -> bool {
        matches!(self.phase, Phase::Done)
    }

    pub fn programs_remaining(&self) -> usize {
        self.plans.len() - self.completed
    }

    pub fn time(&self) -> f64 {
        self.sim.time
    }

    pub fn estimate(&self) -> &State {
        &self.estimate
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn simulator(&self) -> &Simulator<R> {
        &self.sim
    }

    pub fn simulator_mut(&mut self) -> &mut Simulator<R> {
        &mut self.sim
    }

    pub fn ticks_per_second(&self) -> f64 {
        self.cfg.session.tick_hz
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            t: self.sim.time,
            phase: self.phase.name().into(),
            session: self.session.state.clone(),
            program: self.phase.program(),
            estimate: arr(&position_of(&self.estimate)),
            velocity: arr(&velocity_of(&self.estimate)),
            tensions: tensions(&self.tensions),
            servo_temps: self.sim.servo_temperatures,
            safety: self.last_level,
        }
    }

    pub fn finish(self) -> (MissionOutcome, Simulator<R>) {
        let out = MissionOutcome {
            log: self.session.log,
            canvas: self.canvas,
            ticks: self.ticks,
            trace: self.trace,
            descent: self.descent,
            aborted: self.aborted,
            programs_completed: self.completed,
            duration_s: self.sim.time,
        };
        (out, self.sim)
    }

    /// One control step of whatever the run is doing.
    pub fn step(&mut self) -> Result<(), MissionError> {
        let phase = std::mem::replace(&mut self.phase, Phase::Done);
        self.phase = match phase {
            Phase::Hold { target, velocity } => self.hold_step(target, velocity)?,
            Phase::Swap { program, target, until } => {
                if self.manual_step(target, Vec2::zeros(), None)? {
                    self.begin_descent()
                } else if self.sim.time >= until - 1e-9 {
                    self.pid.reset();
                    self.approach(program)
                } else {
                    Phase::Swap { program, target, until }
                }
            }
            Phase::Approach { program, path, k, t0 } => self.approach_step(program, path, k, t0)?,
            Phase::Paint { program, exec, parked, starting } => self.paint_step(program, exec, parked, starting)?,
            Phase::Descent { t0 } => self.descent_step(t0)?,
            Phase::Done => Phase::Done,
        };
        Ok(())
    }

    fn approach(&self, program: usize) -> Phase {
        let dt = self.robot.plant.dt;
        let from = position_of(&self.estimate);
        let to = self.commanded[program][0];
        let limits = RetimeLimits { v_max: self.cfg.approach_speed_m_s, a_max: 0.2, dt, corner: CornerPolicy::Stop };
        let path = match retime(&[from, to], &limits) {
            Ok(t) if (to - from).norm() > 1e-6 => t.samples,
            _ => vec![to],
        };
        Phase::Approach { program, path, k: 0, t0: self.sim.time }
    }

    fn begin_descent(&mut self) -> Phase {
        self.aborted = Some(match &self.session.state {
            SessionState::Aborted(r) => r.clone(),
            _ => AbortReason::HardLimit,
        });
        self.descent.push((self.sim.time, self.sim.state.position.y));
        Phase::Descent { t0: self.sim.time }
    }

    fn measure_z(&mut self) -> Result<crate::control::Obs, MissionError> {
        let m = self.sim.measure()?;
        Ok(self.robot.sensor.measurement(&m))
    }

    fn apply_faults(&mut self) {
        let t = self.sim.time;
        self.sim.external_force = Vec2::zeros();
        for (i, f) in self.faults.iter().enumerate() {
            match f.kind {
                FaultKind::Push { force_n } if f.active_at(t) => self.sim.external_force += Vec2::new(force_n[0], force_n[1]),
                FaultKind::ServoHeat { temperature_c } if !self.heat_applied[i] && t >= f.start_s => {
                    self.sim.servo_temperatures = [temperature_c; SERVOS];
                    self.heat_applied[i] = true;
                }
                _ => {}
            }
        }
    }

    fn brush_position(&self) -> Vec2 {
        self.sim.state.position + self.cfg.session.arm.brush_point(&self.session.arm.joints)
    }

    /// One plant step with `u`, then paint and, on the tick boundary, the
    /// coordinator. Returns the coordinator's commands.
    fn plant_step(
        &mut self,
        u: &Control,
        program: Option<usize>,
        reference: Vec2,
        start: Option<usize>,
    ) -> Result<Vec<Command>, MissionError> {
        self.apply_faults();
        self.tensions = *u;
        self.sim.step(&tensions(u), self.session.arm_powered())?;
        self.step += 1;
        let plan = program.and_then(|i| self.plans.get(i)).unwrap_or(&self.idle_plan);
        if self.session.depositing() {
            let b = self.sim.state.position + self.cfg.session.arm.brush_point(&self.session.arm.joints);
            if let Some(a) = self.last_brush {
                if self.step % self.per_tick == 0 {
                    if let Some(d) = self.canvas.deposit_paint(a, b, &plan.color, 1.0) {
                        self.deposited += d.distance;
                    }
                    self.last_brush = Some(b);
                }
            } else {
                self.last_brush = Some(b);
            }
        } else {
            self.last_brush = None;
        }
        if self.step % self.per_tick != 0 {
            return Ok(Vec::new());
        }
        let temps = self.sim.servo_temperatures;
        let inputs = TickInputs {
            time: self.sim.time,
            safety: self.worst,
            servo_temps: temps,
            deposited_m: self.deposited,
            control_fault: self.fault.take(),
            operator: self.operator.take(),
            start_program: start,
        };
        let cmds = self.session.tick(plan, &inputs, &self.cfg.session);
        let following = matches!(self.session.state, SessionState::Traveling | SessionState::Painting);
        if following {
            self.trace.push(TracePoint { t: self.sim.time, reference: arr(&reference), measured: arr(&self.sim.state.position) });
        }
        self.ticks.push(TickRecord {
            t: self.sim.time,
            program: self.session.program,
            state: self.session.state.name(),
            cursor: self.session.cursor,
            stabilizer: self.session.arm.stabilizer_engaged,
            arm_powered: self.session.arm_powered(),
            deposited_m: self.deposited,
            safety: self.worst,
            deviation: self.deviation,
            max_servo_c: temps.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            platform: arr(&self.sim.state.position),
            estimate: arr(&position_of(&self.estimate)),
            reference: arr(&reference),
            brush: arr(&self.brush_position()),
        });
        self.deposited = 0.0;
        self.last_level = self.worst;
        self.worst = SafetyLevel::Ok;
        self.deviation = 0.0;
        Ok(cmds)
    }

    /// Manual-mode PID step toward a believed-frame target. Returns true when
    /// the coordinator called for a descent.
    fn manual_step(&mut self, target: Vec2, velocity: Vec2, program: Option<usize>) -> Result<bool, MissionError> {
        let dt = self.robot.plant.dt;
        let z = self.measure_z()?;
        self.estimate = quasi_static_estimate(&self.robot.plant.geometry, &z, Some(position_of(&self.estimate)))?;
        let out = self.pid.step(&self.robot.plant, &self.cfg.limits, target, velocity, &self.estimate, dt)?;
        self.watch(position_of(&self.estimate), &target);
        let truth_ref = self.truth_of(&target);
        let cmds = self.plant_step(&out.tensions, program, truth_ref, None)?;
        Ok(cmds.contains(&Command::GravityDescent))
    }

    fn hold_step(&mut self, target: Vec2, velocity: Vec2) -> Result<Phase, MissionError> {
        let next = target + velocity * self.robot.plant.dt;
        // The jog stops at the workspace boundary.
        let (target, velocity) =
            if self.robot.plant.geometry.in_workspace(&next) { (next, velocity) } else { (target, Vec2::zeros()) };
        if self.manual_step(target, velocity, None)? {
            return Ok(self.begin_descent());
        }
        Ok(Phase::Hold { target, velocity })
    }

    fn approach_step(&mut self, program: usize, path: Vec<Vec2>, k: usize, t0: f64) -> Result<Phase, MissionError> {
        let dt = self.robot.plant.dt;
        let end = *path.last().expect("non-empty path");
        let (target, vel) = if k + 1 < path.len() { (path[k], (path[k + 1] - path[k]) / dt) } else { (end, Vec2::zeros()) };
        if self.manual_step(target, vel, Some(program))? {
            return Ok(self.begin_descent());
        }
        let k = k + 1;
        let settled = (position_of(&self.estimate) - end).norm() < self.cfg.approach_tolerance_m
            && velocity_of(&self.estimate).norm() < 0.005;
        let hold_s = 0.5;
        let elapsed = self.sim.time - t0;
        if k >= path.len() && elapsed >= hold_s && (settled || elapsed > hold_s + 20.0) {
            self.session.cursor = 0;
            let mut exec = ScheduleExecutor::new();
            exec.reset(self.estimate - self.schedules[program].steps[0].x_nominal);
            self.pid.reset();
            return Ok(Phase::Paint { program, exec, parked: false, starting: true });
        }
        Ok(Phase::Approach { program, path, k, t0 })
    }

    fn paint_step(
        &mut self,
        program: usize,
        mut exec: ScheduleExecutor,
        mut parked: bool,
        starting: bool,
    ) -> Result<Phase, MissionError> {
        let schedule = &self.schedules[program];
        let plan = &self.plans[program];
        let k = self.session.cursor.min(schedule.len() - 1);
        let step = schedule.steps[k].clone();
        let hold = !self.session.may_advance(plan) && velocity_of(&step.x_nominal).norm() > 1e-3;
        let z = self.measure_z()?;
        // The filter trusts its model and lags a large unmodeled push, so
        // the limits are checked on the position solved from the cables.
        let direct = quasi_static_estimate(&self.robot.plant.geometry, &z, Some(position_of(&self.estimate)));
        let nominal = position_of(&step.x_nominal);
        // Repeating a moving step would keep pushing along the path, so a
        // hold there parks on the step's position instead.
        let u = if hold {
            let est = direct.clone()?;
            self.estimate = est;
            parked = true;
            let dt = self.robot.plant.dt;
            self.pid.step(&self.robot.plant, &self.cfg.limits, nominal, Vec2::zeros(), &est, dt)?.tensions
        } else {
            if parked {
                exec.reset(self.estimate - step.x_nominal);
                self.pid.reset();
                parked = false;
            }
            match exec.online_step(&self.schedules[program], k, &z) {
                Ok(out) => {
                    self.estimate = out.estimate;
                    out.tensions
                }
                Err(e) => {
                    self.fault = Some(e.to_string());
                    step.u_nominal
                }
            }
        };
        let direct = direct.map(|s| position_of(&s)).unwrap_or_else(|_| position_of(&self.estimate));
        self.watch(direct, &nominal);
        let reference = self.plans[program].targets[k];
        let cmds = self.plant_step(&u, Some(program), reference, starting.then_some(program))?;
        let starting = starting && self.step % self.per_tick != 0;
        self.session.advance(&self.plans[program]);
        for c in cmds {
            match c {
                Command::GravityDescent => return Ok(self.begin_descent()),
                Command::ProgramComplete { .. } => {
                    self.completed += 1;
                    self.pid.reset();
                    let here = position_of(&self.estimate);
                    return Ok(if self.completed < self.plans.len() {
                        Phase::Swap { program: self.completed, target: here, until: self.sim.time + self.cfg.color_swap_s }
                    } else {
                        Phase::Hold { target: here, velocity: Vec2::zeros() }
                    });
                }
                Command::MoveArm { .. } => {}
            }
        }
        Ok(Phase::Paint { program, exec, parked, starting })
    }

    fn descent_step(&mut self, t0: f64) -> Result<Phase, MissionError> {
        if self.sim.time - t0 >= self.cfg.max_descent_s {
            return Ok(Phase::Done);
        }
        let z = self.measure_z()?;
        let plant = &self.robot.plant;
        let Ok(est) = quasi_static_estimate(&plant.geometry, &z, Some(position_of(&self.estimate))) else {
            return Ok(Phase::Done);
        };
        self.estimate = est;
        let p = position_of(&est);
        if !plant.geometry.in_workspace(&p) {
            return Ok(Phase::Done);
        }
        let down = Vec2::new(0.0, -self.cfg.descent_force_n);
        let gc = gravity_compensation(&plant.geometry, &p, plant.mass, plant.gravity, &self.cfg.limits, down)?;
        match self.plant_step(&gc.tensions, None, p, None) {
            Ok(_) => {}
            Err(MissionError::Simulation(SimError::Escaped { .. })) => return Ok(Phase::Done),
            Err(e) => return Err(e),
        }
        self.descent.push((self.sim.time, self.sim.state.position.y));
        Ok(Phase::Descent { t0 })
    }

    /// Safety check of `est` against `nominal`.
    fn watch(&mut self, est: Vec2, nominal: &Vec2) {
        let level = safety_monitor(&self.robot.plant.geometry, &est, nominal, &self.cfg.safety);
        self.worst = self.worst.max(level);
        self.deviation = self.deviation.max((est - nominal).norm());
    }

    /// Best guess of the true position of a believed-frame target.
    fn truth_of(&self, believed: &Vec2) -> Vec2 {
        match &self.robot.map {
            Some(m) => m.invert(believed).unwrap_or(*believed),
            None => *believed,
        }
    }
}

fn plan_program(robot: &RobotBelief, program: &PaintProgram, cfg: &MissionConfig) -> Result<(MotionPlan, Vec<Vec2>), MissionError> {
    let dt = robot.plant.dt;
    if (program.dt() - dt).abs() > 1e-12 {
        return Err(MissionError::Config(format!(
            "program `{}` sampled at {} s, controller at {} s",
            program.color,
            program.dt(),
            dt
        )));
    }
    let plan = build_motion_plan(program, &cfg.session)?;
    let targets = match &robot.map {
        Some(m) => plan.targets.iter().map(|p| m.apply(p)).collect::<Result<Vec<_>, _>>()?,
        None => plan.targets.clone(),
    };
    Ok((plan, targets))
}

fn synthesize_plan(
    robot: &RobotBelief,
    plan: &MotionPlan,
    targets: &[Vec2],
    cfg: &MissionConfig,
) -> Result<GainSchedule, MissionError> {
    // Split the solve in the middle of dwells, where the nominal is at rest.
    let breaks: Vec<usize> = plan
        .legs
        .iter()
        .filter(|l| matches!(l.kind, LegKind::Engage | LegKind::Release))
        .map(|l| (l.start + l.end) / 2)
        .collect();
    let synth = synthesize_segmented(&robot.plant, targets, &breaks, &cfg.limits, &cfg.weights, &cfg.ilqg, &cfg.noise)?;
    log::debug!("{}: {} iLQG iterations, converged {}", plan.color, synth.nominal.iterations, synth.nominal.converged);
    Ok(synth.schedule)
}

/// The gain schedule [`Mission::new`] would synthesize for `program`.
pub fn program_schedule(robot: &RobotBelief, program: &PaintProgram, cfg: &MissionConfig) -> Result<GainSchedule, MissionError> {
    let (plan, targets) = plan_program(robot, program, cfg)?;
    synthesize_plan(robot, &plan, &targets, cfg)
}

/// Paints `programs` in order on `canvas`. Aborted runs return normally with
/// `aborted` set; the caller decides how to report them.
pub fn run_mission<R: Rng>(
    robot: &RobotBelief,
    sim: Simulator<R>,
    programs: &[PaintProgram],
    canvas: CanvasRaster,
    faults: &[Fault],
    cfg: &MissionConfig,
) -> Result<MissionOutcome, MissionError> {
    let mut mission = Mission::new(robot.clone(), sim, programs, canvas, faults.to_vec(), cfg.clone())?;
    mission.start();
    while mission.busy() {
        if mission.time() > cfg.max_duration_s {
            return Err(MissionError::Timeout(cfg.max_duration_s));
        }
        mission.step()?;
    }
    Ok(mission.finish().0)
}
