use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{CaptureLabel, ClientFrame, ClientMsg, Frame, Mode, ServerFrame, ServerMsg};
use crate::calibration::{CaptureSet, CapturedPoint};
use crate::control::{position_of, velocity_of};
use crate::coordination::{Mission, MissionError, OperatorCommand, SessionState};
use crate::geometry::Vec2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConsoleConfig {
    pub state_hz: f64,
    /// Setpoint is zeroed after this long without a live joystick command.
    pub joystick_timeout_s: f64,
    /// Captures are refused above this estimated speed.
    pub capture_speed_m_s: f64,
    /// Pending joystick commands kept; older ones are dropped.
    pub joystick_queue: usize,
    /// True canvas positions of the calibration grid, by id.
    pub grid: Vec<[f64; 2]>,
}

impl Default for ConsoleConfig {
    fn default() -> Self {
        Self { state_hz: 10.0, joystick_timeout_s: 0.25, capture_speed_m_s: 0.005, joystick_queue: 16, grid: Vec::new() }
    }
}

/// Protocol state around a [`Mission`]. Feed lines with [`receive`], advance
/// with [`step`] once per control step, and send what [`drain_outbox`] returns.
///
/// [`receive`]: ConsoleServer::receive
/// [`step`]: ConsoleServer::step
/// [`drain_outbox`]: ConsoleServer::drain_outbox
pub struct ConsoleServer<R> {
    mission: Mission<R>,
    cfg: ConsoleConfig,
    mode: Mode,
    queue: VecDeque<ClientFrame>,
    outbox: Vec<ServerFrame>,
    last_in: Option<u64>,
    ack: Option<u64>,
    seq_out: u64,
    joystick_at: Option<f64>,
    next_update: f64,
    captures: CaptureSet,
    dropped: usize,
    last_state: SessionState,
}

impl<R: Rng> ConsoleServer<R> {
    pub fn new(mission: Mission<R>, cfg: ConsoleConfig) -> Self {
        let last_state = mission.session().state.clone();
        let next_update = mission.time();
        Self {
            mission,
            cfg,
            mode: Mode::Idle,
            queue: VecDeque::new(),
            outbox: Vec::new(),
            last_in: None,
            ack: None,
            seq_out: 0,
            joystick_at: None,
            next_update,
            captures: CaptureSet::default(),
            dropped: 0,
            last_state,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn mission(&self) -> &Mission<R> {
        &self.mission
    }

    pub fn mission_mut(&mut self) -> &mut Mission<R> {
        &mut self.mission
    }

    pub fn into_mission(self) -> Mission<R> {
        self.mission
    }

    pub fn captures(&self) -> &CaptureSet {
        &self.captures
    }

    /// Joystick commands discarded because the queue was full.
    pub fn dropped_joystick(&self) -> usize {
        self.dropped
    }

    pub fn drain_outbox(&mut self) -> Vec<ServerFrame> {
        std::mem::take(&mut self.outbox)
    }

    fn send(&mut self, msg: ServerMsg) {
        self.seq_out += 1;
        self.outbox.push(Frame { seq: self.seq_out, timestamp: self.mission.time(), msg });
    }

    fn alarm(&mut self, ack: Option<u64>, message: impl Into<String>) {
        let message = message.into();
        log::warn!("console alarm: {message}");
        self.send(ServerMsg::Alarm { ack, message });
    }

    /// Queues one line from the client.
    pub fn receive(&mut self, line: &str) {
        if line.trim().is_empty() {
            return;
        }
        let frame = match ClientFrame::parse(line) {
            Ok(f) => f,
            Err(e) => return self.alarm(None, format!("malformed frame: {e}")),
        };
        if let Some(last) = self.last_in {
            if frame.seq <= last {
                return self.alarm(Some(frame.seq), format!("seq {} is not above {last}; frame dropped", frame.seq));
            }
        }
        self.last_in = Some(frame.seq);
        if matches!(frame.msg, ClientMsg::JoystickCmd { .. }) {
            let pending = self.queue.iter().filter(|f| matches!(f.msg, ClientMsg::JoystickCmd { .. })).count();
            if pending >= self.cfg.joystick_queue.max(1) {
                let oldest = self.queue.iter().position(|f| matches!(f.msg, ClientMsg::JoystickCmd { .. }));
                if let Some(i) = oldest {
                    self.queue.remove(i);
                    self.dropped += 1;
                }
            }
        }
        self.queue.push_back(frame);
    }

    fn act(&mut self, frame: ClientFrame) {
        let seq = frame.seq;
        match frame.msg {
            ClientMsg::JoystickCmd { velocity, deadman } => {
                if !deadman {
                    return;
                }
                if self.mode != Mode::Manual || !self.mission.holding() {
                    return self.alarm(Some(seq), "joystick ignored outside manual mode");
                }
                self.mission.jog(Vec2::new(velocity[0], velocity[1]));
                self.joystick_at = Some(self.mission.time());
                self.ack = Some(seq);
            }
            ClientMsg::CapturePoint { label } => self.capture(seq, label),
            ClientMsg::SetMode { mode } => self.set_mode(seq, mode),
            ClientMsg::Pause => self.forward(seq, OperatorCommand::Pause),
            ClientMsg::Resume => self.forward(seq, OperatorCommand::Resume),
            ClientMsg::EStop => {
                self.mission.jog(Vec2::zeros());
                self.forward(seq, OperatorCommand::EStop);
            }
        }
    }

    fn forward(&mut self, seq: u64, cmd: OperatorCommand) {
        self.mission.operator(cmd);
        self.ack = Some(seq);
    }

    fn capture(&mut self, seq: u64, label: CaptureLabel) {
        if self.mode != Mode::Manual {
            return self.alarm(Some(seq), "capture requires manual mode");
        }
        let est = *self.mission.estimate();
        let speed = velocity_of(&est).norm();
        if speed >= self.cfg.capture_speed_m_s {
            return self.alarm(Some(seq), format!("capture refused: platform moving at {:.1} mm/s", speed * 1e3));
        }
        let (grid, truth) = match label {
            CaptureLabel::Grid(id) => match self.cfg.grid.get(id) {
                Some(p) => (Some(id), Vec2::new(p[0], p[1])),
                None => return self.alarm(Some(seq), format!("unknown grid id {id}")),
            },
            CaptureLabel::Position(p) => (None, Vec2::new(p[0], p[1])),
        };
        let point = CapturedPoint { grid, true_position: truth, estimate: position_of(&est) };
        let existing = grid.and_then(|g| self.captures.points.iter().position(|p| p.grid == Some(g)));
        let overwritten = existing.is_some();
        match existing {
            Some(i) => self.captures.points[i] = point,
            None => self.captures.points.push(point),
        }
        self.ack = Some(seq);
        self.send(ServerMsg::CaptureAck {
            ack: seq,
            grid,
            true_position: [truth.x, truth.y],
            estimate: [point.estimate.x, point.estimate.y],
            overwritten,
        });
    }

    fn set_mode(&mut self, seq: u64, mode: Mode) {
        if self.mission.finished() {
            return self.alarm(Some(seq), "session aborted; no mode changes");
        }
        match mode {
            Mode::Manual | Mode::Idle => {
                if self.mission.busy() {
                    return self.alarm(Some(seq), "programs are running; pause or e-stop instead");
                }
                self.mission.jog(Vec2::zeros());
                self.joystick_at = None;
            }
            Mode::Auto => {
                if self.mode != Mode::Auto && !self.mission.start() {
                    return self.alarm(Some(seq), "no program left to run");
                }
            }
        }
        self.mode = mode;
        self.ack = Some(seq);
        self.send(ServerMsg::ModeAck { ack: seq, mode });
    }

    /// Acts on queued frames, then advances the mission one control step.
    pub fn step(&mut self) -> Result<(), MissionError> {
        while let Some(f) = self.queue.pop_front() {
            self.act(f);
        }
        let now = self.mission.time();
        if self.joystick_at.is_some_and(|t| now - t > self.cfg.joystick_timeout_s) {
            log::info!("joystick silent for {:.0} ms; setpoint zeroed", self.cfg.joystick_timeout_s * 1e3);
            self.mission.jog(Vec2::zeros());
            self.joystick_at = None;
        }
        self.mission.step()?;
        let state = self.mission.session().state.clone();
        if state != self.last_state {
            if matches!(state, SessionState::Paused(_) | SessionState::Aborted(_)) {
                self.alarm(None, format!("session {}: {state:?}", state.name()));
            }
            self.last_state = state;
        }
        if self.mode == Mode::Auto && !self.mission.busy() {
            self.mode = Mode::Idle;
        }
        if self.mission.time() >= self.next_update - 1e-9 {
            self.next_update += 1.0 / self.cfg.state_hz;
            let state = self.mission.snapshot();
            self.send(ServerMsg::StateUpdate { ack: self.ack, mode: self.mode, state });
        }
        Ok(())
    }
}
