//! Ground-truth plant: planar point-mass platform under cable tensions,
//! sensor synthesis, servo heating and paint deposition.

mod canvas;
mod scenario;

pub use canvas::{CanvasRaster, DepositResult, Rgb};
pub use scenario::{Fault, FaultKind, Scenario, SCENARIO_SCHEMA};

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::format::{self, FormatError};
use crate::geometry::{
    cable_geometry, structure_matrix, GeometryError, GroundTruthWinch, PlatformState, RobotGeometry, Vec2, CABLES,
};

/// Number of arm servos with temperature feedback.
pub const SERVOS: usize = 4;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SimError {
    #[error("platform left the frame at ({x:.3}, {y:.3}) m")]
    Escaped { x: f64, y: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("invalid simulator configuration: {0}")]
    Config(String),
}

/// First-order servo heating model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalModel {
    pub ambient_c: f64,
    /// Heating rate while the arm is powered, degC/s.
    pub heat_rate_c_per_s: f64,
    /// Newtonian cooling coefficient, 1/s.
    pub cooling_per_s: f64,
}

impl Default for ThermalModel {
    fn default() -> Self {
        Self { ambient_c: 25.0, heat_rate_c_per_s: 0.05, cooling_per_s: 0.001 }
    }
}

impl ThermalModel {
    /// Temperature the servos approach when powered continuously.
    pub fn active_equilibrium(&self) -> f64 {
        self.ambient_c + self.heat_rate_c_per_s / self.cooling_per_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub platform_mass: f64,
    /// Magnitude of gravity, acting along -y.
    pub gravity: f64,
    pub viscous_damping: f64,
    pub timestep: f64,
    pub length_noise_std: f64,
    pub velocity_noise_std: f64,
    pub disturbance_force_std: f64,
    pub ground_truth_winches: [GroundTruthWinch; CABLES],
    pub anchor_error_std: f64,
    pub thermal: ThermalModel,
}

impl Default for SimConfig {
    fn default() -> Self {
        let winch = GroundTruthWinch {
            base_diameter: 0.030,
            cable_thickness: 0.0003,
            wraps_per_layer: 12.0,
            zero_offset: 0.2,
        };
        Self {
            platform_mass: 12.0,
            gravity: 9.81,
            viscous_damping: 2.0,
            timestep: 0.001,
            length_noise_std: 0.0,
            velocity_noise_std: 0.0,
            disturbance_force_std: 0.0,
            ground_truth_winches: [winch; CABLES],
            anchor_error_std: 0.0,
            thermal: ThermalModel::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if !(self.timestep > 0.0) {
            return bad("timestep must be positive");
        }
        if !(self.platform_mass > 0.0) {
            return bad("platform mass must be positive");
        }
        let stds = [
            self.length_noise_std,
            self.velocity_noise_std,
            self.disturbance_force_std,
            self.anchor_error_std,
            self.viscous_damping,
        ];
        if stds.iter().any(|s| !(*s >= 0.0)) {
            return bad("noise, error and damping parameters must be non-negative");
        }
        for w in &self.ground_truth_winches {
            w.validate()?;
        }
        Ok(())
    }

    pub fn gravity_vector(&self) -> Vec2 {
        Vec2::new(0.0, -self.gravity)
    }

    /// Winch set whose zero offset is below the shortest effective cable
    /// length reachable in `geom`, keeping angles non-negative.
    pub fn with_winches(mut self, w: GroundTruthWinch) -> Self {
        self.ground_truth_winches = [w; CABLES];
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: PlatformState,
    pub acceleration: Vec2,
    /// At least one negative tension command was raised to zero.
    pub clamped: bool,
}

/// Semi-implicit Euler step of the platform under `tensions` plus an
/// external force `disturbance`.
pub fn step(
    geom: &RobotGeometry,
    state: &PlatformState,
    tensions: &[f64; CABLES],
    config: &SimConfig,
    dt: f64,
    disturbance: Vec2,
) -> Result<StepOutcome, SimError> {
    let clamped = tensions.iter().any(|u| *u < 0.0);
    let u = nalgebra::Vector4::from_fn(|i, _| tensions[i].max(0.0));
    let cables = cable_geometry(geom, &state.position)?;
    let force = structure_matrix(geom, &cables) * u + disturbance;
    let m = config.platform_mass;
    let acceleration = force / m + config.gravity_vector() - state.velocity * (config.viscous_damping / m);
    let velocity = state.velocity + acceleration * dt;
    let position = state.position + velocity * dt;
    if !geom.contains(&position, 0.0) {
        return Err(SimError::Escaped { x: position.x, y: position.y });
    }
    Ok(StepOutcome { state: PlatformState { position, velocity }, acceleration, clamped })
}

/// One synthesized sensor frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub timestamp: f64,
    pub winch_angles: [f64; CABLES],
    /// Effective (routing-scaled) cable lengths.
    pub cable_lengths: [f64; CABLES],
    pub cable_velocities: [f64; CABLES],
    pub servo_temperatures: [f64; SERVOS],
}

pub fn measure<R: Rng>(
    geom: &RobotGeometry,
    state: &PlatformState,
    config: &SimConfig,
    timestamp: f64,
    servo_temperatures: [f64; SERVOS],
    rng: &mut R,
) -> Result<Measurement, SimError> {
    let cables = cable_geometry(geom, &state.position)?;
    let mut noise = |std: f64| if std > 0.0 { std * rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
    let mut out = Measurement {
        timestamp,
        winch_angles: [0.0; CABLES],
        cable_lengths: [0.0; CABLES],
        cable_velocities: [0.0; CABLES],
        servo_temperatures,
    };
    for i in 0..CABLES {
        let ratio = geom.ratio(i);
        out.cable_lengths[i] = cables[i].effective_length + noise(config.length_noise_std);
        out.cable_velocities[i] =
            -ratio * cables[i].unit_direction.dot(&state.velocity) + noise(config.velocity_noise_std);
        out.winch_angles[i] = config.ground_truth_winches[i].angle(out.cable_lengths[i]);
    }
    Ok(out)
}

pub fn update_servo_temps(temps: &[f64; SERVOS], arm_active: bool, dt: f64, model: &ThermalModel) -> [f64; SERVOS] {
    let heat = if arm_active { model.heat_rate_c_per_s } else { 0.0 };
    temps.map(|t| t + dt * (heat - model.cooling_per_s * (t - model.ambient_c)))
}

/// Plant with its own noise source and clock.
pub struct Simulator<R> {
    pub geometry: RobotGeometry,
    pub config: SimConfig,
    pub state: PlatformState,
    pub servo_temperatures: [f64; SERVOS],
    pub time: f64,
    /// External force applied in addition to the random disturbance.
    pub external_force: Vec2,
    rng: R,
}

impl<R: Rng> Simulator<R> {
    pub fn new(geometry: RobotGeometry, config: SimConfig, initial: PlatformState, rng: R) -> Result<Self, SimError> {
        config.validate()?;
        let ambient = config.thermal.ambient_c;
        Ok(Self {
            geometry,
            config,
            state: initial,
            servo_temperatures: [ambient; SERVOS],
            time: 0.0,
            external_force: Vec2::zeros(),
            rng,
        })
    }

    pub fn step(&mut self, tensions: &[f64; CABLES], arm_active: bool) -> Result<StepOutcome, SimError> {
        let dt = self.config.timestep;
        let std = self.config.disturbance_force_std;
        let w = if std > 0.0 {
            let n = Normal::new(0.0, std).expect("finite std");
            Vec2::new(n.sample(&mut self.rng), n.sample(&mut self.rng))
        } else {
            Vec2::zeros()
        };
        let out = step(&self.geometry, &self.state, tensions, &self.config, dt, w + self.external_force)?;
        self.state = out.state;
        self.servo_temperatures = update_servo_temps(&self.servo_temperatures, arm_active, dt, &self.config.thermal);
        self.time += dt;
        Ok(out)
    }

    pub fn measure(&mut self) -> Result<Measurement, SimError> {
        measure(&self.geometry, &self.state, &self.config, self.time, self.servo_temperatures, &mut self.rng)
    }

    pub fn rng(&mut self) -> &mut R {
        &mut self.rng
    }
}

pub const MEASUREMENT_SCHEMA: &str = "muralbot.measurements/1";
pub const MEASUREMENT_COLUMNS: &str =
    "t,theta1,theta2,theta3,theta4,l1,l2,l3,l4,ldot1,ldot2,ldot3,ldot4,T1,T2,T3,T4";

/// Writes a measurement log: schema line, header, then one row per frame in
/// the column order of [`MEASUREMENT_COLUMNS`].
pub fn write_measurements<W: Write>(mut out: W, log: &[Measurement]) -> std::io::Result<()> {
    writeln!(out, "# schema {MEASUREMENT_SCHEMA}")?;
    writeln!(out, "{MEASUREMENT_COLUMNS}")?;
    for m in log {
        let fields = std::iter::once(m.timestamp)
            .chain(m.winch_angles)
            .chain(m.cable_lengths)
            .chain(m.cable_velocities)
            .chain(m.servo_temperatures)
            .map(format::fmt_f64)
            .collect::<Vec<_>>();
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

pub fn read_measurements(path: &Path) -> Result<Vec<Measurement>, FormatError> {
    let rows = format::read_csv_rows(path, MEASUREMENT_SCHEMA)?;
    rows.into_iter()
        .enumerate()
        .map(|(n, r)| {
            if r.len() != 17 {
                return Err(FormatError::parse(path, format!("row {}: expected 17 columns", n + 1)));
            }
            let arr = |o: usize| -> [f64; 4] { std::array::from_fn(|i| r[o + i]) };
            Ok(Measurement {
                timestamp: r[0],
                winch_angles: arr(1),
                cable_lengths: arr(5),
                cable_velocities: arr(9),
                servo_temperatures: arr(13),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quiet() -> SimConfig {
        SimConfig { viscous_damping: 0.0, ..SimConfig::default() }
    }

    #[test]
    fn free_fall_single_step() {
        let g = RobotGeometry::test_scale();
        let s = PlatformState::at_rest(g.center());
        let out = step(&g, &s, &[0.0; 4], &quiet(), 0.001, Vec2::zeros()).unwrap();
        assert!(out.state.velocity.x.abs() < 1e-15);
        assert!((out.state.velocity.y + 0.00981).abs() < 1e-15);
    }

    #[test]
    fn symmetric_top_tensions_have_no_horizontal_force() {
        let g = RobotGeometry::test_scale();
        let s = PlatformState::at_rest(g.center());
        let out = step(&g, &s, &[0.0, 0.0, 40.0, 40.0], &quiet(), 0.001, Vec2::zeros()).unwrap();
        assert_eq!(out.acceleration.x, 0.0);
    }

    #[test]
    fn negative_tension_is_clamped_and_reported() {
        let g = RobotGeometry::test_scale();
        let s = PlatformState::at_rest(g.center());
        let a = step(&g, &s, &[-5.0, 0.0, 0.0, 0.0], &quiet(), 0.001, Vec2::zeros()).unwrap();
        let b = step(&g, &s, &[0.0; 4], &quiet(), 0.001, Vec2::zeros()).unwrap();
        assert!(a.clamped && !b.clamped);
        assert_eq!(a.state, b.state);
    }

    #[test]
    fn escape_is_an_error() {
        let g = RobotGeometry::test_scale();
        let s = PlatformState { position: Vec2::new(1.5, 0.0005), velocity: Vec2::new(0.0, -1.0) };
        assert!(matches!(step(&g, &s, &[0.0; 4], &quiet(), 0.001, Vec2::zeros()), Err(SimError::Escaped { .. })));
    }

    #[test]
    fn free_fall_energy_drift_is_bounded() {
        // Frame large enough that the platform never reaches an edge in 10 s.
        let g = RobotGeometry::rectangular(2000.0, 2000.0, 0.0, 0.0);
        let cfg = quiet();
        let mut s = PlatformState { position: g.center(), velocity: Vec2::new(0.3, 0.0) };
        let energy = |s: &PlatformState| 0.5 * s.velocity.norm_squared() + cfg.gravity * s.position.y;
        let e0 = energy(&s);
        let mut peak_kinetic: f64 = 0.0;
        for _ in 0..10_000 {
            s = step(&g, &s, &[0.0; 4], &cfg, 0.001, Vec2::zeros()).unwrap().state;
            peak_kinetic = peak_kinetic.max(0.5 * s.velocity.norm_squared());
        }
        let drift = (energy(&s) - e0).abs();
        assert!(drift / peak_kinetic < 1e-3, "relative drift {}", drift / peak_kinetic);
    }

    #[test]
    fn thermal_equilibrium_and_approach() {
        let m = ThermalModel::default();
        let t = update_servo_temps(&[m.ambient_c; 4], false, 0.1, &m);
        assert_eq!(t, [m.ambient_c; 4]);

        let eq = m.active_equilibrium();
        let mut temps = [m.ambient_c; 4];
        let dt = 0.5;
        let mut prev = temps[0];
        for k in 1..=4000 {
            temps = update_servo_temps(&temps, true, dt, &m);
            assert!(temps[0] > prev && temps[0] < eq);
            prev = temps[0];
            if k == 2000 {
                // Closed-form first-order response; Euler error is O(dt * k_cool).
                let exact = eq - (eq - m.ambient_c) * (-m.cooling_per_s * 1000.0).exp();
                assert!((temps[0] - exact).abs() < 0.05, "{} vs {}", temps[0], exact);
            }
        }
        let peak = temps[0];
        let cooled = update_servo_temps(&temps, false, 10.0, &m);
        assert!(cooled[0] < peak && cooled[0] > m.ambient_c);
    }

    #[test]
    fn noiseless_measurement_is_analytic() {
        let g = RobotGeometry::full_scale();
        let cfg = SimConfig::default();
        let s = PlatformState { position: Vec2::new(2.0, 1.5), velocity: Vec2::new(0.1, -0.05) };
        let m = measure(&g, &s, &cfg, 0.0, [25.0; 4], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let cables = cable_geometry(&g, &s.position).unwrap();
        for i in 0..4 {
            assert!((m.cable_lengths[i] - cables[i].effective_length).abs() < 1e-12);
            let v = -g.ratio(i) * cables[i].unit_direction.dot(&s.velocity);
            assert!((m.cable_velocities[i] - v).abs() < 1e-12);
            let back = cfg.ground_truth_winches[i].length(m.winch_angles[i]);
            assert!((back - m.cable_lengths[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn measurement_noise_statistics() {
        let g = RobotGeometry::test_scale();
        let cfg = SimConfig { length_noise_std: 0.001, ..SimConfig::default() };
        let s = PlatformState::at_rest(g.center());
        let truth = cable_geometry(&g, &s.position).unwrap()[0].effective_length;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let samples: Vec<f64> = (0..10_000)
            .map(|_| measure(&g, &s, &cfg, 0.0, [25.0; 4], &mut rng).unwrap().cable_lengths[0] - truth)
            .collect();
        let (_, std) = crate::geometry::routing::mean_std(&samples);
        assert!((std - 0.001).abs() < 0.0001, "std {std}");
    }

    #[test]
    fn seeded_streams_are_identical() {
        let run = || {
            let g = RobotGeometry::test_scale();
            let cfg = SimConfig { length_noise_std: 0.001, disturbance_force_std: 0.5, ..SimConfig::default() };
            let mut sim =
                Simulator::new(g.clone(), cfg, PlatformState::at_rest(g.center()), ChaCha8Rng::seed_from_u64(7)).unwrap();
            (0..200)
                .map(|_| {
                    sim.step(&[60.0, 60.0, 80.0, 80.0], true).unwrap();
                    sim.measure().unwrap()
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn measurement_csv_round_trip() {
        let m = Measurement {
            timestamp: 0.25,
            winch_angles: [1.0, 2.0, 3.0, 4.0],
            cable_lengths: [0.5, 0.6, 0.7, 0.8],
            cable_velocities: [0.01, -0.02, 0.0, 0.1],
            servo_temperatures: [30.0, 31.0, 32.0, 33.0],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let mut buf = Vec::new();
        write_measurements(&mut buf, &[m, m]).unwrap();
        std::fs::write(&path, &buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), MEASUREMENT_COLUMNS);
        assert_eq!(read_measurements(&path).unwrap(), vec![m, m]);
    }
}
