//! Comparison of the calibration pipelines on a simulated robot with
//! layered winches and misplaced anchors.
//!
//! Execution is quasi-static: the controller drives the winches to the
//! angles its model associates with a target, and the platform settles
//! where the as-built cables put it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    build_piecewise_map, build_single_map, drag_excitation, generate_grid_excitation, record_dataset, solve_joint,
    solve_proprioceptive, warp_trajectory, CalibrationError, CalibrationSample, HomographyMap, JointWeights, Provenance,
    Rect, SolverOptions, DRAG_RATE_HZ,
};
use crate::artwork::RetimeLimits;
use crate::evaluation::tracking_error;
use crate::geometry::{
    cable_distances, forward_kinematics_from_lengths, GroundTruthWinch, LengthKind, RobotGeometry, Vec2, WinchModel, CABLES,
};
use crate::simulator::{Scenario, SimConfig};

/// As-built robot seen through a believed model.
#[derive(Debug, Clone)]
pub struct QuasiStaticRobot {
    pub truth: RobotGeometry,
    pub winches: [GroundTruthWinch; CABLES],
    pub nominal: RobotGeometry,
    pub belief: WinchModel,
}

impl QuasiStaticRobot {
    /// Encoder angles with the platform at true position `x`.
    pub fn truth_angles(&self, x: &Vec2) -> Result<[f64; CABLES], CalibrationError> {
        let d = cable_distances(&self.truth, x)?;
        Ok(std::array::from_fn(|i| self.winches[i].angle(self.truth.ratio(i) * d[i])))
    }

    /// Position the robot believes it is at for encoder angles `theta`.
    pub fn believed_position(&self, theta: &[f64; CABLES], hint: Option<Vec2>) -> Result<Vec2, CalibrationError> {
        let l = self.belief.lengths(theta);
        Ok(forward_kinematics_from_lengths(&self.nominal, &l, LengthKind::Distance, hint)?.position)
    }

    /// True resting position after commanding the believed position `target`.
    pub fn execute(&self, target: &Vec2, hint: Option<Vec2>) -> Result<Vec2, CalibrationError> {
        let d = cable_distances(&self.nominal, target)?;
        let mut lengths = [0.0; CABLES];
        for i in 0..CABLES {
            let theta = self
                .belief
                .angle(i, d[i])
                .ok_or_else(|| CalibrationError::Invalid(format!("winch {i} model cannot reach {:.4} m", d[i])))?;
            lengths[i] = self.winches[i].length(theta) / self.truth.ratio(i);
        }
        Ok(forward_kinematics_from_lengths(&self.truth, &lengths, LengthKind::Distance, hint.or(Some(*target)))?.position)
    }

    pub fn execute_path(&self, targets: &[Vec2]) -> Result<Vec<Vec2>, CalibrationError> {
        let mut hint = None;
        targets
            .iter()
            .map(|t| {
                let x = self.execute(t, hint)?;
                hint = Some(x);
                Ok(x)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub seed: u64,
    pub anchor_error_range_m: [f64; 2],
    pub length_noise_std_m: f64,
    /// Std of the operator-captured position estimate per axis.
    pub capture_noise_std_m: f64,
    pub drag_region: Rect,
    pub drag_duration_s: f64,
    pub stage2_region: Rect,
    pub stage2_spacing_m: f64,
    /// Region spanned by the exteroceptive capture grid.
    pub capture_region: Rect,
    pub capture_rows: usize,
    pub capture_cols: usize,
    pub test_region: Rect,
    pub weights: JointWeights,
}

impl AblationConfig {
    /// Layout for the 3 m x 2.4 m test robot with a 3 x 3 capture grid.
    pub fn test_scale(seed: u64) -> Self {
        let r = |x0: f64, y0: f64, x1: f64, y1: f64| Rect::new(Vec2::new(x0, y0), Vec2::new(x1, y1));
        Self {
            seed,
            anchor_error_range_m: [0.005, 0.020],
            length_noise_std_m: 2e-4,
            capture_noise_std_m: 3e-4,
            drag_region: r(0.4, 0.3, 2.6, 1.8),
            drag_duration_s: 180.0,
            stage2_region: r(0.4, 0.3, 2.6, 2.1),
            stage2_spacing_m: 0.3,
            capture_region: r(0.5, 0.4, 2.5, 2.0),
            capture_rows: 3,
            capture_cols: 3,
            test_region: r(0.6, 0.5, 2.4, 1.9),
            weights: JointWeights::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub proprio_ate_m: f64,
    pub joint_ate_m: f64,
    pub single_ate_m: f64,
    pub piecewise_ate_m: f64,
    pub stage1_rms_m: f64,
    pub stage2_rms_m: f64,
    pub test_points: usize,
}

impl AblationReport {
    pub fn ordering_holds(&self) -> bool {
        self.piecewise_ate_m <= self.single_ate_m && self.single_ate_m <= self.joint_ate_m && self.joint_ate_m <= self.proprio_ate_m
    }

    pub fn improvement(&self) -> f64 {
        self.proprio_ate_m / self.piecewise_ate_m
    }
}

/// Serpentine through `region` sampled every `step` meters.
pub fn serpentine(region: &Rect, rows: usize, step: f64) -> Vec<Vec2> {
    let mut corners = Vec::new();
    for j in 0..rows {
        let y = region.min[1] + region.height() * j as f64 / (rows - 1).max(1) as f64;
        let (a, b) = (Vec2::new(region.min[0], y), Vec2::new(region.max[0], y));
        if j % 2 == 0 {
            corners.extend([a, b]);
        } else {
            corners.extend([b, a]);
        }
    }
    let mut out = vec![corners[0]];
    for w in corners.windows(2) {
        let n = ((w[1] - w[0]).norm() / step).ceil().max(1.0) as usize;
        out.extend((1..=n).map(|k| w[0] + (w[1] - w[0]) * (k as f64 / n as f64)));
    }
    out
}

pub fn capture_grid(region: &Rect, rows: usize, cols: usize) -> Vec<Vec2> {
    let mut v = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            v.push(Vec2::new(
                region.min[0] + region.width() * c as f64 / (cols - 1) as f64,
                region.min[1] + region.height() * r as f64 / (rows - 1) as f64,
            ));
        }
    }
    v
}

/// Operator captures: the robot is jogged to each true grid point and its
/// own position estimate is recorded.
pub fn capture_pairs<R: Rng>(
    robot: &QuasiStaticRobot,
    points: &[Vec2],
    noise_std: f64,
    rng: &mut R,
) -> Result<Vec<(Vec2, Vec2)>, CalibrationError> {
    points
        .iter()
        .map(|g| {
            let theta = robot.truth_angles(g)?;
            let est = robot.believed_position(&theta, Some(*g))?;
            let n = Vec2::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)) * noise_std;
            Ok((*g, est + n))
        })
        .collect()
}

pub fn run_ablation(nominal: &RobotGeometry, sim: &SimConfig, config: &AblationConfig) -> Result<AblationReport, CalibrationError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let scenario = Scenario { anchor_error_range_m: config.anchor_error_range_m, ..Scenario::default() };
    let truth = scenario.truth_geometry(nominal, &mut rng);
    let sim = SimConfig { length_noise_std: config.length_noise_std_m, ..sim.clone() };
    let options = SolverOptions::default();
    let dt = 1.0 / DRAG_RATE_HZ;

    let drag = drag_excitation(&config.drag_region, config.drag_duration_s, DRAG_RATE_HZ, config.seed);
    let sim_err = |e: crate::simulator::SimError| CalibrationError::Invalid(e.to_string());
    let stage1 = record_dataset(&truth, &sim, &drag, dt, Provenance::ManualStage1, &mut rng).map_err(sim_err)?;
    // Initial lengths are tape-measured at the start pose.
    let d0 = cable_distances(&truth, &drag[0])?;
    let init = WinchModel::initial_guess(&nominal.winch_nominal_diameter, &nominal.routing_ratio, &d0, &stage1.samples[0].theta);
    let s1 = solve_proprioceptive(&stage1, nominal, &init, &options)?;

    let limits = RetimeLimits { dt: 0.01, ..RetimeLimits::default() };
    let grid = generate_grid_excitation(nominal, &config.stage2_region, config.stage2_spacing_m, &limits)?;
    let stride = (dt / limits.dt).round() as usize;
    let pts: Vec<Vec2> = grid.trajectory.samples.iter().step_by(stride).copied().collect();
    let stage2 = record_dataset(&truth, &sim, &pts, dt, Provenance::GridStage2, &mut rng).map_err(sim_err)?;
    let s2 = solve_proprioceptive(&stage2, nominal, &s1.winch, &options)?;

    let robot = QuasiStaticRobot { truth: truth.clone(), winches: sim.ground_truth_winches, nominal: nominal.clone(), belief: s2.winch };
    let grid_points = capture_grid(&config.capture_region, config.capture_rows, config.capture_cols);
    let pairs = capture_pairs(&robot, &grid_points, config.capture_noise_std_m, &mut rng)?;

    let mut joint_data = stage2.clone();
    let t_end = joint_data.samples.last().map_or(0.0, |s| s.t);
    for (k, (g, _)) in pairs.iter().enumerate() {
        joint_data.samples.push(CalibrationSample { t: t_end + (k + 1) as f64 * dt, theta: robot.truth_angles(g)?, label: Some(*g) });
    }
    let joint = solve_joint(&joint_data, nominal, &s1.winch, &config.weights, &options)?;

    let test = serpentine(&config.test_region, 5, 0.01);
    let ate = |robot: &QuasiStaticRobot, map: Option<&HomographyMap>| -> Result<f64, CalibrationError> {
        let cmd = match map {
            Some(m) => warp_trajectory(m, &test)?,
            None => test.clone(),
        };
        let reached = robot.execute_path(&cmd)?;
        Ok(tracking_error(&reached, &test).expect("aligned").ate)
    };
    let joint_robot = QuasiStaticRobot { belief: joint.winch, ..robot.clone() };
    Ok(AblationReport {
        proprio_ate_m: ate(&robot, None)?,
        joint_ate_m: ate(&joint_robot, None)?,
        single_ate_m: ate(&robot, Some(&build_single_map(&pairs)?))?,
        piecewise_ate_m: ate(&robot, Some(&build_piecewise_map(&pairs)?))?,
        stage1_rms_m: s1.residual_rms,
        stage2_rms_m: s2.residual_rms,
        test_points: test.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_belief_executes_exactly() {
        let geom = RobotGeometry::test_scale().with_diameters([0.03; 4]);
        // A single layer makes the ground truth exactly linear.
        let w = GroundTruthWinch { wraps_per_layer: 1e4, ..SimConfig::default().ground_truth_winches[0] };
        let belief = WinchModel::from_coefficients([[w.zero_offset, w.base_diameter / 2.0, 0.0]; CABLES]);
        let robot = QuasiStaticRobot { truth: geom.clone(), winches: [w; CABLES], nominal: geom.clone(), belief };
        let x = Vec2::new(0.3, 0.3);
        let theta = robot.truth_angles(&x).unwrap();
        assert!((robot.believed_position(&theta, None).unwrap() - x).norm() < 1e-9);
        assert!((robot.execute(&x, None).unwrap() - x).norm() < 1e-9);
    }

    #[test]
    fn serpentine_and_grid_shapes() {
        let r = Rect::new(Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.5));
        let s = serpentine(&r, 3, 0.1);
        assert_eq!(s.first(), Some(&Vec2::new(0.0, 0.0)));
        assert!((s.last().unwrap() - Vec2::new(1.0, 0.5)).norm() < 1e-12);
        assert!(s.windows(2).all(|w| (w[1] - w[0]).norm() <= 0.1 + 1e-12));
        assert_eq!(capture_grid(&r, 3, 3).len(), 9);
    }
}
