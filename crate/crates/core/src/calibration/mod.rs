//! Winch calibration from motor angles, grid excitation, and the
//! task-space homography correction.

pub mod ablation;
mod excitation;
mod homography;
mod solver;

pub use excitation::{drag_excitation, generate_grid_excitation, record_dataset, GridExcitation, DRAG_RATE_HZ};
pub use homography::{
    apply_homography, build_piecewise_map, build_single_map, fit_homography, warp_trajectory, unwarp_trajectory,
    HomographyMap, Section, HOMOGRAPHY_SCHEMA,
};
pub use solver::{evaluate_model, rms, solve_joint, solve_proprioceptive, JointWeights, SolverOptions};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::format::{self, FormatError};
use crate::geometry::{GeometryError, Vec2, WinchModel, CABLES};
use crate::simulator::Measurement;

pub const DATASET_SCHEMA: &str = "muralbot.calibration-data/1";
pub const WINCH_SCHEMA: &str = "muralbot.winch/1";
pub const CAPTURE_SCHEMA: &str = "muralbot.captures/1";
pub const MIN_SAMPLES: usize = 50;

#[derive(Debug, thiserror::Error)]
pub enum CalibrationError {
    #[error("dataset has {found} samples; at least {needed} are required")]
    TooFewSamples { found: usize, needed: usize },
    #[error("timestamps are not monotone at sample {index}")]
    NonMonotoneTime { index: usize },
    #[error("underdetermined calibration (insufficient excitation); weak directions: {}", directions.join("; "))]
    Underdetermined { directions: Vec<String> },
    #[error("solver diverged; cost trace {trace:?}")]
    Diverged { trace: Vec<f64> },
    #[error("winch {cable} payout is not monotone over the observed angle range")]
    NonMonotonePayout { cable: usize },
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("point ({x:.4}, {y:.4}) lies outside every map section")]
    OutOfMap { x: f64, y: f64 },
    #[error("grid is incomplete; missing (row, col) points {holes:?}")]
    MissingGridPoints { holes: Vec<(usize, usize)> },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    ManualStage1,
    GridStage2,
}

impl Provenance {
    pub fn tag(self) -> &'static str {
        match self {
            Provenance::ManualStage1 => "manual-stage-1",
            Provenance::GridStage2 => "grid-stage-2",
        }
    }

    fn from_tag(s: &str) -> Option<Self> {
        match s {
            "manual-stage-1" => Some(Provenance::ManualStage1),
            "grid-stage-2" => Some(Provenance::GridStage2),
            _ => None,
        }
    }
}

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Rect {
    pub fn new(min: Vec2, max: Vec2) -> Self {
        Self { min: [min.x, min.y], max: [max.x, max.y] }
    }

    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn height(&self) -> f64 {
        self.max[1] - self.min[1]
    }

    pub fn contains(&self, p: &Vec2, eps: f64) -> bool {
        p.x >= self.min[0] - eps && p.x <= self.max[0] + eps && p.y >= self.min[1] - eps && p.y <= self.max[1] + eps
    }

    /// Distance from `p` to the rectangle, zero inside.
    pub fn distance(&self, p: &Vec2) -> f64 {
        let dx = (self.min[0] - p.x).max(p.x - self.max[0]).max(0.0);
        let dy = (self.min[1] - p.y).max(p.y - self.max[1]).max(0.0);
        dx.hypot(dy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationSample {
    pub t: f64,
    pub theta: [f64; CABLES],
    /// Operator-provided true position, when available.
    pub label: Option<Vec2>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationDataset {
    pub provenance: Provenance,
    pub samples: Vec<CalibrationSample>,
}

impl CalibrationDataset {
    pub fn from_measurements(provenance: Provenance, log: &[Measurement]) -> Self {
        let samples = log.iter().map(|m| CalibrationSample { t: m.timestamp, theta: m.winch_angles, label: None }).collect();
        Self { provenance, samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labelled(&self) -> usize {
        self.samples.iter().filter(|s| s.label.is_some()).count()
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        if self.samples.len() < MIN_SAMPLES {
            return Err(CalibrationError::TooFewSamples { found: self.samples.len(), needed: MIN_SAMPLES });
        }
        for (i, w) in self.samples.windows(2).enumerate() {
            if !(w[1].t >= w[0].t) {
                return Err(CalibrationError::NonMonotoneTime { index: i + 1 });
            }
        }
        if self.samples.iter().any(|s| s.theta.iter().any(|v| !v.is_finite())) {
            return Err(CalibrationError::Invalid("non-finite winch angle in dataset".into()));
        }
        Ok(())
    }

    /// Angle range per cable.
    pub fn theta_range(&self) -> ([f64; CABLES], [f64; CABLES]) {
        let mut lo = [f64::INFINITY; CABLES];
        let mut hi = [f64::NEG_INFINITY; CABLES];
        for s in &self.samples {
            for i in 0..CABLES {
                lo[i] = lo[i].min(s.theta[i]);
                hi[i] = hi[i].max(s.theta[i]);
            }
        }
        (lo, hi)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# schema {DATASET_SCHEMA}\n# provenance {}\nt,theta1,theta2,theta3,theta4,x_label,y_label\n",
            self.provenance.tag()
        );
        for s in &self.samples {
            let (lx, ly) = s.label.map_or(("nan".to_string(), "nan".to_string()), |l| (format::fmt_f64(l.x), format::fmt_f64(l.y)));
            let th: Vec<String> = s.theta.iter().map(|v| format::fmt_f64(*v)).collect();
            out.push_str(&format!("{},{},{lx},{ly}\n", format::fmt_f64(s.t), th.join(",")));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), FormatError> {
        format::write_bytes(path, self.to_csv().as_bytes())
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self, FormatError> {
        let mut lines: Vec<&str> = text.lines().collect();
        if lines.len() < 2 {
            return Err(FormatError::parse(path, "truncated calibration dataset"));
        }
        let tag = lines.remove(1);
        let provenance = tag
            .strip_prefix("# provenance ")
            .and_then(|t| Provenance::from_tag(t.trim()))
            .ok_or_else(|| FormatError::parse(path, format!("bad provenance line `{tag}`")))?;
        let rows = format::parse_csv_rows(path, &lines.join("\n"), DATASET_SCHEMA)?;
        let samples = rows
            .into_iter()
            .enumerate()
            .map(|(n, r)| {
                if r.len() != 7 && r.len() != 5 {
                    return Err(FormatError::parse(path, format!("row {}: expected 5 or 7 columns", n + 1)));
                }
                let label = (r.len() == 7 && r[5].is_finite() && r[6].is_finite()).then(|| Vec2::new(r[5], r[6]));
                Ok(CalibrationSample { t: r[0], theta: [r[1], r[2], r[3], r[4]], label })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { provenance, samples })
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        Self::parse(path, &format::read_string(path)?)
    }
}

/// Operator-captured correspondence: where the platform truly was and where
/// the robot believed it was.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapturedPoint {
    pub grid: Option<usize>,
    pub true_position: Vec2,
    pub estimate: Vec2,
}

/// Input of the exteroceptive stage.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CaptureSet {
    pub points: Vec<CapturedPoint>,
}

impl CaptureSet {
    /// (true, measured) pairs for the homography builders.
    pub fn pairs(&self) -> Vec<(Vec2, Vec2)> {
        self.points.iter().map(|p| (p.true_position, p.estimate)).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# schema {CAPTURE_SCHEMA}\ngrid,x_true,y_true,x_est,y_est\n");
        for p in &self.points {
            let g = p.grid.map_or("nan".to_string(), |g| g.to_string());
            let v = [p.true_position.x, p.true_position.y, p.estimate.x, p.estimate.y].map(format::fmt_f64);
            out.push_str(&format!("{g},{}\n", v.join(",")));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), FormatError> {
        format::write_bytes(path, self.to_csv().as_bytes())
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self, FormatError> {
        let rows = format::parse_csv_rows(path, text, CAPTURE_SCHEMA)?;
        let points = rows
            .into_iter()
            .enumerate()
            .map(|(n, r)| {
                if r.len() != 5 {
                    return Err(FormatError::parse(path, format!("row {}: expected 5 columns", n + 1)));
                }
                let grid = (r[0].is_finite() && r[0] >= 0.0).then_some(r[0] as usize);
                Ok(CapturedPoint { grid, true_position: Vec2::new(r[1], r[2]), estimate: Vec2::new(r[3], r[4]) })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { points })
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        Self::parse(path, &format::read_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub iterations: usize,
    pub converged: bool,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub gradient_norm: f64,
    pub cost_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub schema: String,
    pub provenance: Option<Provenance>,
    pub winch: WinchModel,
    pub positions: Vec<[f64; 2]>,
    /// RMS of the length residuals, meters.
    pub residual_rms: f64,
    pub report: ConvergenceReport,
}

impl CalibrationResult {
    pub fn save(&self, path: &Path) -> Result<(), FormatError> {
        format::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        let r: CalibrationResult = format::read_json(path)?;
        format::check_schema(path, &r.schema, WINCH_SCHEMA)?;
        Ok(r)
    }

    pub fn position(&self, k: usize) -> Vec2 {
        Vec2::new(self.positions[k][0], self.positions[k][1])
    }

    /// Human-readable summary with a histogram of absolute length residuals.
    pub fn summary(&self, residuals: &[f64]) -> String {
        let mut s = format!(
            "iterations: {}\nconverged: {}\ncost: {:.6e} -> {:.6e}\nresidual rms: {:.3} mm\n",
            self.report.iterations,
            self.report.converged,
            self.report.initial_cost,
            self.report.final_cost,
            self.residual_rms * 1e3
        );
        for (i, p) in self.winch.p.iter().enumerate() {
            s.push_str(&format!("winch {i}: p0 {:.6} p1 {:.6e} p2 {:.6e}\n", p[0], p[1], p[2]));
        }
        let edges = [0.0, 0.5e-3, 1e-3, 2e-3, 5e-3, 1e-2, f64::INFINITY];
        s.push_str("residual histogram (mm):\n");
        for w in edges.windows(2) {
            let n = residuals.iter().filter(|r| r.abs() >= w[0] && r.abs() < w[1]).count();
            let label = if w[1].is_finite() { format!("{:>4}-{:<4}", w[0] * 1e3, w[1] * 1e3) } else { format!("{:>4}+    ", w[0] * 1e3) };
            s.push_str(&format!("  {label} {n:>6} {}\n", "#".repeat((60 * n).div_ceil(residuals.len().max(1)))));
        }
        s
    }
}
