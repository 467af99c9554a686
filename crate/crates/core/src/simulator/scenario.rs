use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{SimConfig, ThermalModel};
use crate::format::{self, FormatError};
use crate::geometry::{GroundTruthWinch, RobotGeometry, Vec2, CABLES};

pub const SCENARIO_SCHEMA: &str = "muralbot.scenario/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaultKind {
    /// External force on the platform for the fault window.
    Push { force_n: [f64; 2] },
    /// Sets every servo temperature at the fault start.
    ServoHeat { temperature_c: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fault {
    pub start_s: f64,
    #[serde(default)]
    pub duration_s: f64,
    #[serde(flatten)]
    pub kind: FaultKind,
}

impl Fault {
    pub fn active_at(&self, t: f64) -> bool {
        t >= self.start_s && t < self.start_s + self.duration_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinchSpec {
    pub base_diameter_m: f64,
    pub cable_thickness_m: f64,
    pub wraps_per_layer: f64,
    pub zero_offset_m: f64,
}

/// Scenario file: plant parameters, injected miscalibration and faults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema: String,
    #[serde(default)]
    pub seed: u64,
    pub platform_mass_kg: f64,
    #[serde(default = "default_gravity")]
    pub gravity_m_s2: f64,
    pub viscous_damping_n_s_m: f64,
    #[serde(default = "default_dt")]
    pub timestep_s: f64,
    #[serde(default)]
    pub length_noise_std_m: f64,
    #[serde(default)]
    pub velocity_noise_std_m_s: f64,
    #[serde(default)]
    pub disturbance_force_std_n: f64,
    /// Uniform range of injected anchor placement error magnitude.
    #[serde(default)]
    pub anchor_error_range_m: [f64; 2],
    /// Explicit anchor offsets; take precedence over the random range.
    #[serde(default)]
    pub anchor_offsets_m: Option<[[f64; 2]; CABLES]>,
    pub winch: WinchSpec,
    #[serde(default)]
    pub thermal: Option<ThermalModel>,
    #[serde(default)]
    pub faults: Vec<Fault>,
}

fn default_gravity() -> f64 {
    9.81
}

fn default_dt() -> f64 {
    0.001
}

impl Default for Scenario {
    fn default() -> Self {
        let c = SimConfig::default();
        let w = c.ground_truth_winches[0];
        Self {
            schema: SCENARIO_SCHEMA.to_string(),
            seed: 0,
            platform_mass_kg: c.platform_mass,
            gravity_m_s2: c.gravity,
            viscous_damping_n_s_m: c.viscous_damping,
            timestep_s: c.timestep,
            length_noise_std_m: 0.0,
            velocity_noise_std_m_s: 0.0,
            disturbance_force_std_n: 0.0,
            anchor_error_range_m: [0.0, 0.0],
            anchor_offsets_m: None,
            winch: WinchSpec {
                base_diameter_m: w.base_diameter,
                cable_thickness_m: w.cable_thickness,
                wraps_per_layer: w.wraps_per_layer,
                zero_offset_m: w.zero_offset,
            },
            thermal: None,
            faults: Vec::new(),
        }
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, FormatError> {
        let s: Scenario = format::read_toml(path)?;
        format::check_schema(path, &s.schema, SCENARIO_SCHEMA)?;
        s.sim_config().validate().map_err(|e| FormatError::parse(path, e))?;
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<(), FormatError> {
        format::write_toml(path, self)
    }

    pub fn sim_config(&self) -> SimConfig {
        let w = GroundTruthWinch {
            base_diameter: self.winch.base_diameter_m,
            cable_thickness: self.winch.cable_thickness_m,
            wraps_per_layer: self.winch.wraps_per_layer,
            zero_offset: self.winch.zero_offset_m,
        };
        let rms_range = (self.anchor_error_range_m[0] + self.anchor_error_range_m[1]) / 2.0;
        SimConfig {
            platform_mass: self.platform_mass_kg,
            gravity: self.gravity_m_s2,
            viscous_damping: self.viscous_damping_n_s_m,
            timestep: self.timestep_s,
            length_noise_std: self.length_noise_std_m,
            velocity_noise_std: self.velocity_noise_std_m_s,
            disturbance_force_std: self.disturbance_force_std_n,
            ground_truth_winches: [w; CABLES],
            anchor_error_std: rms_range,
            thermal: self.thermal.unwrap_or_default(),
        }
    }

    /// As-built geometry: the nominal layout with anchor placement error.
    pub fn truth_geometry<R: Rng>(&self, nominal: &RobotGeometry, rng: &mut R) -> RobotGeometry {
        let mut g = nominal.clone();
        let offsets = match self.anchor_offsets_m {
            Some(o) => o.map(|[x, y]| Vec2::new(x, y)),
            None => {
                let [lo, hi] = self.anchor_error_range_m;
                std::array::from_fn(|_| {
                    if hi <= 0.0 {
                        return Vec2::zeros();
                    }
                    let mag = rng.gen_range(lo..=hi);
                    let ang = rng.gen_range(0.0..std::f64::consts::TAU);
                    Vec2::new(ang.cos(), ang.sin()) * mag
                })
            }
        };
        for (a, o) in g.anchors.iter_mut().zip(offsets) {
            *a += o;
        }
        g
    }

    /// Net external force of all push faults active at `t`.
    pub fn push_force(&self, t: f64) -> Vec2 {
        self.faults
            .iter()
            .filter(|f| f.active_at(t))
            .filter_map(|f| match f.kind {
                FaultKind::Push { force_n } => Some(Vec2::new(force_n[0], force_n[1])),
                _ => None,
            })
            .sum()
    }
}
