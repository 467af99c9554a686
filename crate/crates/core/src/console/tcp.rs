use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::sync::mpsc::{self, TryRecvError, TrySendError};
use std::time::{Duration, Instant};

use rand::Rng;

use super::ConsoleServer;
use crate::coordination::MissionError;

#[derive(Debug, Clone, PartialEq)]
pub struct TcpOptions {
    /// Simulated seconds per wall second; `None` runs unpaced.
    pub speed: Option<f64>,
    /// Stop after this much simulated time.
    pub max_sim_s: Option<f64>,
}

impl Default for TcpOptions {
    fn default() -> Self {
        Self { speed: Some(1.0), max_sim_s: None }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("console socket: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Mission(#[from] MissionError),
}

/// Serves one client on `listener` until it disconnects, the mission ends,
/// or the time limit passes. Socket I/O runs on helper threads; the control
/// loop only polls channels, and outgoing frames are dropped if the client
/// stops reading.
pub fn serve_tcp<R: Rng>(
    listener: &TcpListener,
    server: &mut ConsoleServer<R>,
    opts: &TcpOptions,
) -> Result<(), ServeError> {
    let (stream, peer) = listener.accept()?;
    log::info!("console client {peer}");
    stream.set_nodelay(true)?;
    let reader = BufReader::new(stream.try_clone()?);
    let mut writer = stream;
    let (in_tx, in_rx) = mpsc::channel::<String>();
    std::thread::spawn(move || {
        for line in reader.lines() {
            let Ok(line) = line else { break };
            if in_tx.send(line).is_err() {
                break;
            }
        }
    });
    let (out_tx, out_rx) = mpsc::sync_channel::<String>(1024);
    let writer_thread = std::thread::spawn(move || {
        for line in out_rx {
            if writer.write_all(line.as_bytes()).is_err() {
                break;
            }
        }
        let _ = writer.shutdown(std::net::Shutdown::Both);
    });

    let wall0 = Instant::now();
    let sim0 = server.mission().time();
    let mut dropped = 0usize;
    let result = loop {
        let mut gone = false;
        loop {
            match in_rx.try_recv() {
                Ok(line) => server.receive(&line),
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => {
                    gone = true;
                    break;
                }
            }
        }
        if gone {
            log::info!("console client disconnected");
            break Ok(());
        }
        if let Err(e) = server.step() {
            break Err(e.into());
        }
        for f in server.drain_outbox() {
            match out_tx.try_send(f.to_line()) {
                Ok(()) => {}
                Err(TrySendError::Full(_)) => dropped += 1,
                Err(TrySendError::Disconnected(_)) => gone = true,
            }
        }
        let elapsed = server.mission().time() - sim0;
        if gone || server.mission().finished() || opts.max_sim_s.is_some_and(|m| elapsed >= m) {
            break Ok(());
        }
        if let Some(speed) = opts.speed {
            let ahead = elapsed / speed - wall0.elapsed().as_secs_f64();
            if ahead > 0.002 {
                std::thread::sleep(Duration::from_secs_f64(ahead));
            }
        }
    };
    if dropped > 0 {
        log::warn!("{dropped} outgoing frames dropped; client not reading");
    }
    drop(out_tx);
    let _ = writer_thread.join();
    result
}
