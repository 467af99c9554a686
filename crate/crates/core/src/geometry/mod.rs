//! Planar cable-robot geometry: anchor/attachment layout, cable kinematics,
//! winch payout models and the winch-diameter sensitivity analysis.
//!
//! Cable indices follow the corner order bottom-left, bottom-right,
//! top-right, top-left (counter-clockwise). Platform orientation is fixed to
//! the identity, so a platform pose is just a position in the world frame.

mod config;
mod kinematics;
pub mod routing;
mod winch;

pub use config::{GeometryConfig, GEOMETRY_SCHEMA};
pub use kinematics::{
    cable_geometry, cable_distances, forward_kinematics, forward_kinematics_from_lengths,
    structure_matrix, CableState, FkSolution, LengthKind,
};
pub use winch::{diameter_sensitivity, fit_quadratic, GroundTruthWinch, WinchModel};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

pub type Vec2 = Vector2<f64>;

/// Number of cables on the planar robot.
pub const CABLES: usize = 4;

/// Default clearance kept between the platform and the frame edges.
pub const DEFAULT_WORKSPACE_MARGIN: f64 = 0.05;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("singular configuration: cable {cable} has length {distance:.3e} m")]
    Singular { cable: usize, distance: f64 },
    #[error("invalid geometry: {0}")]
    Invalid(String),
    #[error("forward kinematics did not converge after {iterations} iterations (residual {residual:.3e} m)")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("forward kinematics residual {residual:.3e} m exceeds {threshold:.1e} m")]
    Inconsistent { residual: f64, threshold: f64 },
}

/// Anchor and attachment layout of the robot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotGeometry {
    /// Base pulley locations in the world frame.
    pub anchors: [Vec2; CABLES],
    /// Platform attachment (or platform pulley) locations in the platform frame.
    pub attachments: [Vec2; CABLES],
    /// 1 for a direct cable, 2 for a cable routed through a platform pulley.
    pub routing_ratio: [u8; CABLES],
    pub winch_nominal_diameter: [f64; CABLES],
    pub frame_width: f64,
    pub frame_height: f64,
    pub workspace_margin: f64,
}

impl RobotGeometry {
    /// Rectangular frame with anchors at its corners and a rectangular
    /// attachment pattern of `attach_width` x `attach_height` centred on the
    /// platform origin.
    pub fn rectangular(
        frame_width: f64,
        frame_height: f64,
        attach_width: f64,
        attach_height: f64,
    ) -> Self {
        let (hw, hh) = (attach_width / 2.0, attach_height / 2.0);
        Self {
            anchors: [
                Vec2::new(0.0, 0.0),
                Vec2::new(frame_width, 0.0),
                Vec2::new(frame_width, frame_height),
                Vec2::new(0.0, frame_height),
            ],
            attachments: [
                Vec2::new(-hw, -hh),
                Vec2::new(hw, -hh),
                Vec2::new(hw, hh),
                Vec2::new(-hw, hh),
            ],
            routing_ratio: [1; CABLES],
            winch_nominal_diameter: [0.0115; CABLES],
            frame_width,
            frame_height,
            workspace_margin: DEFAULT_WORKSPACE_MARGIN,
        }
    }

    /// The 5.8 m x 3.7 m layout with 2:1 pulleys on the top two cables.
    /// The attachment rectangle is a configurable default, not a measured value.
    pub fn full_scale() -> Self {
        let mut g = Self::rectangular(5.8, 3.7, 0.6, 0.4);
        g.routing_ratio = [1, 1, 2, 2];
        g
    }

    /// The 3 m x 2.4 m test robot, all cables direct.
    pub fn test_scale() -> Self {
        Self::rectangular(3.0, 2.4, 0.3, 0.2)
    }

    pub fn with_routing(mut self, ratio: [u8; CABLES]) -> Self {
        self.routing_ratio = ratio;
        self
    }

    pub fn with_diameters(mut self, d: [f64; CABLES]) -> Self {
        self.winch_nominal_diameter = d;
        self
    }

    pub fn ratio(&self, cable: usize) -> f64 {
        f64::from(self.routing_ratio[cable])
    }

    pub fn center(&self) -> Vec2 {
        Vec2::new(self.frame_width / 2.0, self.frame_height / 2.0)
    }

    /// Checks the layout invariants. Anchors may deviate from a perfect
    /// rectangle by up to 2% of the frame diagonal, which leaves room for
    /// as-built placement error.
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.frame_width > 0.0 && self.frame_height > 0.0) {
            return Err(GeometryError::Invalid("frame dimensions must be positive".into()));
        }
        if self.workspace_margin < 0.0 || 2.0 * self.workspace_margin >= self.frame_width.min(self.frame_height) {
            return Err(GeometryError::Invalid("workspace margin leaves no workspace".into()));
        }
        for (i, d) in self.winch_nominal_diameter.iter().enumerate() {
            if !(*d > 0.0) {
                return Err(GeometryError::Invalid(format!("winch {i} diameter must be positive")));
            }
        }
        for (i, r) in self.routing_ratio.iter().enumerate() {
            if !matches!(r, 1 | 2) {
                return Err(GeometryError::Invalid(format!("cable {i} routing ratio must be 1 or 2")));
            }
        }
        let tol = 0.02 * self.frame_width.hypot(self.frame_height);
        check_rectangle("anchors", &self.anchors, tol)?;
        let attach_scale = (self.attachments[2] - self.attachments[0]).norm();
        check_rectangle("attachments", &self.attachments, 0.02 * attach_scale.max(1e-3))?;
        Ok(())
    }

    /// True if `x` lies in the frame rectangle shrunk by `margin`.
    pub fn contains(&self, x: &Vec2, margin: f64) -> bool {
        x.x >= margin
            && x.y >= margin
            && x.x <= self.frame_width - margin
            && x.y <= self.frame_height - margin
    }

    pub fn in_workspace(&self, x: &Vec2) -> bool {
        self.contains(x, self.workspace_margin)
    }
}

fn check_rectangle(what: &str, pts: &[Vec2; CABLES], tol: f64) -> Result<(), GeometryError> {
    // Corner order must be counter-clockwise: BL, BR, TR, TL. A zero-size
    // attachment pattern (all corners coincident) is allowed.
    let span = (pts[2] - pts[0]).norm().max((pts[3] - pts[1]).norm());
    if span < 1e-12 {
        return Ok(());
    }
    let expected = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
    let c = pts.iter().fold(Vec2::zeros(), |a, p| a + p) / 4.0;
    for (i, (p, (sx, sy))) in pts.iter().zip(expected).enumerate() {
        let d = p - c;
        let sign_ok = |v: f64, s: f64| v * s >= -tol;
        if !sign_ok(d.x, sx) || !sign_ok(d.y, sy) {
            return Err(GeometryError::Invalid(format!("{what}: corner {i} out of order")));
        }
    }
    let w0 = pts[1].x - pts[0].x;
    let w1 = pts[2].x - pts[3].x;
    let h0 = pts[3].y - pts[0].y;
    let h1 = pts[2].y - pts[1].y;
    if w0.min(w1) < 1e-6 || h0.min(h1) < 1e-6 {
        return Err(GeometryError::Invalid(format!("{what}: degenerate rectangle")));
    }
    let skew = [
        (pts[0].y - pts[1].y).abs(),
        (pts[2].y - pts[3].y).abs(),
        (pts[0].x - pts[3].x).abs(),
        (pts[1].x - pts[2].x).abs(),
        (w0 - w1).abs(),
        (h0 - h1).abs(),
    ];
    if skew.iter().any(|s| *s > tol) {
        return Err(GeometryError::Invalid(format!("{what}: corners do not form a rectangle")));
    }
    Ok(())
}

/// Platform position and velocity in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlatformState {
    pub position: Vec2,
    pub velocity: Vec2,
}

impl PlatformState {
    pub fn at_rest(position: Vec2) -> Self {
        Self { position, velocity: Vec2::zeros() }
    }
}
