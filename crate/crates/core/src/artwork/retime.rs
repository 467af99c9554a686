//! Trapezoidal retiming of polyline chains into uniformly sampled
//! trajectories.

use serde::{Deserialize, Serialize};

use super::ArtworkError;
use crate::geometry::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CornerPolicy {
    /// Come to rest at every corner and dwell for two samples. Bounds the
    /// full 2D acceleration.
    Stop,
    /// Pass corners at `v_max * max(0, cos(turn / 2))`. Bounds only the
    /// tangential acceleration; sampled corners are cut.
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetimeLimits {
    pub v_max: f64,
    pub a_max: f64,
    pub dt: f64,
    pub corner: CornerPolicy,
}

impl Default for RetimeLimits {
    fn default() -> Self {
        Self { v_max: 0.25, a_max: 0.5, dt: 0.001, corner: CornerPolicy::Stop }
    }
}

impl RetimeLimits {
    pub fn validate(&self) -> Result<(), ArtworkError> {
        if !(self.v_max > 0.0 && self.a_max > 0.0 && self.dt > 0.0) {
            return Err(ArtworkError::Invalid(format!(
                "retiming limits must be positive (v_max {}, a_max {}, dt {})",
                self.v_max, self.a_max, self.dt
            )));
        }
        Ok(())
    }
}

/// Positions sampled every `dt`, starting at t = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub samples: Vec<Vec2>,
}

impl Trajectory {
    pub fn duration(&self) -> f64 {
        self.dt * self.samples.len().saturating_sub(1) as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        self.dt * k as f64
    }

    pub fn velocities(&self) -> Vec<Vec2> {
        self.samples.windows(2).map(|w| (w[1] - w[0]) / self.dt).collect()
    }

    pub fn accelerations(&self) -> Vec<Vec2> {
        self.velocities().windows(2).map(|w| (w[1] - w[0]) / self.dt).collect()
    }

    pub fn arc_length(&self) -> f64 {
        polyline_length(&self.samples)
    }
}

pub fn polyline_length(points: &[Vec2]) -> f64 {
    points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Motion along one straight piece from speed `v0` to `v1`.
#[derive(Debug, Clone, Copy)]
struct Piece {
    from: Vec2,
    dir: Vec2,
    length: f64,
    v0: f64,
    v1: f64,
    peak: f64,
    a: f64,
    t_acc: f64,
    t_cruise: f64,
    t_dec: f64,
}

impl Piece {
    fn new(from: Vec2, to: Vec2, v0: f64, v1: f64, v_max: f64, a: f64) -> Self {
        let d = to - from;
        let length = d.norm();
        let peak = ((2.0 * a * length + v0 * v0 + v1 * v1) / 2.0).sqrt().min(v_max).max(v0.max(v1));
        let t_acc = (peak - v0) / a;
        let t_dec = (peak - v1) / a;
        let d_acc = (peak * peak - v0 * v0) / (2.0 * a);
        let d_dec = (peak * peak - v1 * v1) / (2.0 * a);
        let cruise = (length - d_acc - d_dec).max(0.0);
        let t_cruise = if peak > 0.0 { cruise / peak } else { 0.0 };
        Self { from, dir: if length > 0.0 { d / length } else { Vec2::zeros() }, length, v0, v1, peak, a, t_acc, t_cruise, t_dec }
    }

    fn duration(&self) -> f64 {
        self.t_acc + self.t_cruise + self.t_dec
    }

    fn distance_at(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, self.duration());
        let s = if t <= self.t_acc {
            self.v0 * t + 0.5 * self.a * t * t
        } else if t <= self.t_acc + self.t_cruise {
            let d_acc = self.v0 * self.t_acc + 0.5 * self.a * self.t_acc * self.t_acc;
            d_acc + self.peak * (t - self.t_acc)
        } else {
            let r = (self.duration() - t).max(0.0);
            self.length - (self.v1 * r + 0.5 * self.a * r * r)
        };
        s.clamp(0.0, self.length)
    }

    fn position_at(&self, t: f64) -> Vec2 {
        self.from + self.dir * self.distance_at(t)
    }
}

enum Phase {
    Move(Piece),
    Dwell { at: Vec2, duration: f64 },
}

impl Phase {
    fn duration(&self) -> f64 {
        match self {
            Phase::Move(p) => p.duration(),
            Phase::Dwell { duration, .. } => *duration,
        }
    }

    fn position_at(&self, t: f64) -> Vec2 {
        match self {
            Phase::Move(p) => p.position_at(t),
            Phase::Dwell { at, .. } => *at,
        }
    }
}

/// Drops repeated points and merges collinear interior vertices.
fn simplify(path: &[Vec2]) -> Vec<Vec2> {
    let mut pts: Vec<Vec2> = Vec::with_capacity(path.len());
    for p in path {
        if pts.last().map_or(true, |q| (p - q).norm() > 1e-12) {
            pts.push(*p);
        }
    }
    let mut out: Vec<Vec2> = Vec::with_capacity(pts.len());
    for (i, p) in pts.iter().enumerate() {
        if i > 0 && i + 1 < pts.len() {
            let a = pts[i] - out[out.len() - 1];
            let b = pts[i + 1] - pts[i];
            let cross = a.x * b.y - a.y * b.x;
            if cross.abs() <= 1e-12 * a.norm() * b.norm() && a.dot(&b) > 0.0 {
                continue;
            }
        }
        out.push(*p);
    }
    out
}

fn turn_angle(a: Vec2, b: Vec2) -> f64 {
    let c = (a.dot(&b) / (a.norm() * b.norm())).clamp(-1.0, 1.0);
    c.acos()
}

/// Retimes a polyline chain with rest at both ends.
pub fn retime(path: &[Vec2], limits: &RetimeLimits) -> Result<Trajectory, ArtworkError> {
    limits.validate()?;
    if path.is_empty() {
        return Err(ArtworkError::Invalid("cannot retime an empty path".into()));
    }
    let pts = simplify(path);
    if pts.len() == 1 {
        return Ok(Trajectory { dt: limits.dt, samples: vec![pts[0]] });
    }
    // Planned a hair under the limits: finite differences of sampled
    // positions carry rounding of order ulp(x) / dt^2.
    let (v, a) = (limits.v_max * (1.0 - 1e-7), limits.a_max * (1.0 - 1e-7));
    let n = pts.len();
    let mut cap = vec![0.0; n];
    if limits.corner == CornerPolicy::Cosine {
        for i in 1..n - 1 {
            let th = turn_angle(pts[i] - pts[i - 1], pts[i + 1] - pts[i]);
            cap[i] = v * (th / 2.0).cos().max(0.0);
        }
    }
    // Forward and backward reachability passes on vertex speeds.
    let lens: Vec<f64> = pts.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
    let mut speed = cap.clone();
    for i in 1..n {
        speed[i] = speed[i].min((speed[i - 1].powi(2) + 2.0 * a * lens[i - 1]).sqrt());
    }
    for i in (0..n - 1).rev() {
        speed[i] = speed[i].min((speed[i + 1].powi(2) + 2.0 * a * lens[i]).sqrt());
    }
    let mut phases = Vec::with_capacity(2 * n);
    for i in 0..n - 1 {
        phases.push(Phase::Move(Piece::new(pts[i], pts[i + 1], speed[i], speed[i + 1], v, a)));
        if i + 2 < n && speed[i + 1] == 0.0 {
            phases.push(Phase::Dwell { at: pts[i + 1], duration: 2.0 * limits.dt });
        }
    }
    let total: f64 = phases.iter().map(Phase::duration).sum();
    let steps = (total / limits.dt - 1e-9).ceil().max(1.0) as usize;
    let mut samples = Vec::with_capacity(steps + 1);
    let mut phase = 0;
    let mut start = 0.0;
    for k in 0..=steps {
        let t = k as f64 * limits.dt;
        while phase + 1 < phases.len() && t > start + phases[phase].duration() {
            start += phases[phase].duration();
            phase += 1;
        }
        samples.push(phases[phase].position_at(t - start));
    }
    *samples.last_mut().expect("non-empty") = pts[n - 1];
    Ok(Trajectory { dt: limits.dt, samples })
}

/// Closed-form rest-to-rest duration of a straight segment.
pub fn trapezoid_duration(length: f64, v_max: f64, a_max: f64) -> f64 {
    if length >= v_max * v_max / a_max {
        length / v_max + v_max / a_max
    } else {
        2.0 * (length / a_max).sqrt()
    }
}
