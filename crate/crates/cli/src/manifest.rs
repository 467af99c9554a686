use std::path::{Path, PathBuf};

use muralbot::artwork::{CompileOptions, RetimeLimits};
use muralbot::calibration::{JointWeights, Rect};
use muralbot::console::ConsoleConfig;
use muralbot::coordination::MissionConfig;
use muralbot::format::FormatError;
use muralbot::geometry::{RobotGeometry, Vec2};
use muralbot::simulator::Scenario;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const MANIFEST_SCHEMA: &str = "muralbot.manifest/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryPreset {
    TestScale,
    FullScale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GeometrySource {
    Preset(GeometryPreset),
    File(PathBuf),
}

/// Calibration data collection layout in canvas meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationPlan {
    pub drag_region: Rect,
    pub drag_duration_s: f64,
    pub stage2_region: Rect,
    pub stage2_spacing_m: f64,
    pub capture_region: Rect,
    pub capture_rows: usize,
    pub capture_cols: usize,
    /// Std of a synthetic capture's position estimate per axis.
    pub capture_noise_std_m: f64,
    pub joint_weights: JointWeights,
}

impl Default for CalibrationPlan {
    fn default() -> Self {
        let r = |x0: f64, y0: f64, x1: f64, y1: f64| Rect::new(Vec2::new(x0, y0), Vec2::new(x1, y1));
        Self {
            drag_region: r(0.4, 0.3, 2.6, 1.8),
            drag_duration_s: 180.0,
            stage2_region: r(0.4, 0.3, 2.6, 2.1),
            stage2_spacing_m: 0.3,
            capture_region: r(0.5, 0.4, 2.5, 2.0),
            capture_rows: 3,
            capture_cols: 3,
            capture_noise_std_m: 3e-4,
            joint_weights: JointWeights::default(),
        }
    }
}

impl CalibrationPlan {
    pub fn grid(&self) -> Vec<Vec2> {
        muralbot::calibration::ablation::capture_grid(&self.capture_region, self.capture_rows, self.capture_cols)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PaintPlan {
    pub stepover_m: f64,
    pub hatch_angle_deg: f64,
    pub v_max_m_s: f64,
    pub a_max_m_s2: f64,
    pub brush_width_m: f64,
    pub raster_px_per_m: f64,
}

impl Default for PaintPlan {
    fn default() -> Self {
        Self { stepover_m: 0.025, hatch_angle_deg: 0.0, v_max_m_s: 0.25, a_max_m_s2: 0.5, brush_width_m: 0.03, raster_px_per_m: 100.0 }
    }
}

impl PaintPlan {
    pub fn compile_options(&self, dt: f64) -> CompileOptions {
        CompileOptions {
            stepover: self.stepover_m,
            angle: self.hatch_angle_deg.to_radians(),
            limits: RetimeLimits { v_max: self.v_max_m_s, a_max: self.a_max_m_s2, dt, ..RetimeLimits::default() },
        }
    }
}

/// One run: which robot, which plant, which artwork, where the artifacts go.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    #[serde(default = "default_geometry")]
    pub geometry: GeometrySource,
    #[serde(default)]
    pub scenario: Option<PathBuf>,
    #[serde(default)]
    pub artwork: Option<PathBuf>,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub calibration: CalibrationPlan,
    #[serde(default)]
    pub paint: PaintPlan,
    #[serde(default)]
    pub mission: MissionConfig,
    #[serde(default)]
    pub console: ConsoleConfig,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base: PathBuf,
}

fn default_geometry() -> GeometrySource {
    GeometrySource::Preset(GeometryPreset::TestScale)
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl Default for RunManifest {
    fn default() -> Self {
        Self {
            schema: MANIFEST_SCHEMA.to_string(),
            geometry: default_geometry(),
            scenario: None,
            artwork: None,
            out_dir: default_out(),
            seed: 0,
            calibration: CalibrationPlan::default(),
            paint: PaintPlan::default(),
            mission: MissionConfig::default(),
            console: ConsoleConfig::default(),
            base: PathBuf::from("."),
        }
    }
}

impl RunManifest {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.resolve(&self.out_dir).join(name)
    }

    /// Geometry the robot is designed to and believes in. Presets take the
    /// drum diameter from the winch the scenario builds with.
    pub fn nominal_geometry(&self, scenario: &Scenario) -> Result<RobotGeometry, FormatError> {
        let preset = match &self.geometry {
            GeometrySource::Preset(GeometryPreset::TestScale) => RobotGeometry::test_scale(),
            GeometrySource::Preset(GeometryPreset::FullScale) => RobotGeometry::full_scale(),
            GeometrySource::File(p) => return RobotGeometry::load(&self.resolve(p)),
        };
        Ok(preset.with_diameters([scenario.winch.base_diameter_m; muralbot::geometry::CABLES]))
    }

    pub fn scenario(&self) -> Result<Scenario, FormatError> {
        match &self.scenario {
            Some(p) => Scenario::load(&self.resolve(p)),
            None => Ok(Scenario::default()),
        }
    }

    /// Seeded streams, one per purpose, so adding a draw in one command
    /// does not shift another's.
    pub fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(stream);
        r
    }
}

/// Files each command reads and writes inside `out_dir`.
pub mod artifact {
    pub const TRUTH_GEOMETRY: &str = "truth-geometry.toml";
    pub const TAPE: &str = "tape.json";
    pub const STAGE1_DATA: &str = "stage1.csv";
    pub const STAGE2_DATA: &str = "stage2.csv";
    pub const JOINT_DATA: &str = "joint.csv";
    pub const CAPTURES: &str = "captures.csv";
    pub const WINCH_STAGE1: &str = "winch-stage1.json";
    pub const WINCH_STAGE2: &str = "winch.json";
    pub const WINCH_JOINT: &str = "winch-joint.json";
    pub const HOMOGRAPHY: &str = "homography.json";
    pub const PROGRAMS: &str = "programs.csv";
    pub const GAINS_INDEX: &str = "gains.json";
    pub const CANVAS: &str = "canvas.png";
    pub const TRACE: &str = "trace.csv";
    pub const EVENTS: &str = "events.jsonl";
    pub const SUMMARY: &str = "summary.json";

    pub fn gains(i: usize) -> String {
        format!("gains-{i}.bin")
    }

    pub fn report(artifact: &str) -> String {
        let stem = artifact.rsplit_once('.').map_or(artifact, |(s, _)| s);
        format!("{stem}-report.txt")
    }
}
