//! Server side of the operator console: newline-delimited JSON frames over
//! any byte stream, a transport-agnostic server, and a TCP transport.

mod server;
mod tcp;

pub use server::{ConsoleConfig, ConsoleServer};
pub use tcp::{serve_tcp, ServeError, TcpOptions};

use serde::{Deserialize, Serialize};

use crate::coordination::Snapshot;

pub const PROTOCOL: &str = "muralbot.console/1";

/// One line on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame<M> {
    pub seq: u64,
    pub timestamp: f64,
    #[serde(flatten)]
    pub msg: M,
}

impl<M: Serialize> Frame<M> {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("frames serialize");
        s.push('\n');
        s
    }
}

impl<M: serde::de::DeserializeOwned> Frame<M> {
    pub fn parse(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line.trim())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Manual,
    Auto,
    Idle,
}

/// True position of a captured point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptureLabel {
    /// Index into the server's grid.
    Grid(usize),
    /// Explicit canvas position, meters.
    Position([f64; 2]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload")]
pub enum ClientMsg {
    /// Velocity setpoint in m/s. Ignored unless `deadman` is held.
    JoystickCmd { velocity: [f64; 2], deadman: bool },
    CapturePoint { label: CaptureLabel },
    SetMode { mode: Mode },
    Pause,
    Resume,
    EStop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload")]
pub enum ServerMsg {
    StateUpdate {
        /// Latest client seq the server has acted on.
        ack: Option<u64>,
        mode: Mode,
        #[serde(flatten)]
        state: Snapshot,
    },
    CaptureAck {
        ack: u64,
        grid: Option<usize>,
        true_position: [f64; 2],
        estimate: [f64; 2],
        overwritten: bool,
    },
    ModeAck {
        ack: u64,
        mode: Mode,
    },
    Alarm {
        ack: Option<u64>,
        message: String,
    },
}

pub type ClientFrame = Frame<ClientMsg>;
pub type ServerFrame = Frame<ServerMsg>;
