//! Calibration data collection: a simulated operator drag for stage 1 and
//! a boustrophedon grid for stage 2.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CalibrationDataset, CalibrationError, CalibrationSample, Provenance, Rect};
use crate::artwork::{retime, RetimeLimits, Trajectory};
use crate::geometry::{PlatformState, RobotGeometry, Vec2};
use crate::simulator::{measure, SimConfig, SimError, SERVOS};

pub const DRAG_RATE_HZ: f64 = 20.0;

/// Smooth random path filling `region`: a few incommensurate sinusoids per
/// axis, sampled at `rate_hz`.
pub fn drag_excitation(region: &Rect, duration_s: f64, rate_hz: f64, seed: u64) -> Vec<Vec2> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut axis = || -> Vec<(f64, f64, f64)> {
        (0..3).map(|j| (1.0 / (j + 1) as f64, rng.gen_range(0.01..0.06) * (j + 1) as f64, rng.gen_range(0.0..std::f64::consts::TAU))).collect()
    };
    let (ax, ay) = (axis(), axis());
    let eval = |terms: &[(f64, f64, f64)], t: f64| {
        let total: f64 = terms.iter().map(|(a, _, _)| a).sum();
        terms.iter().map(|(a, f, ph)| a * (std::f64::consts::TAU * f * t + ph).sin()).sum::<f64>() / total
    };
    let n = (duration_s * rate_hz).round() as usize;
    let (cx, cy) = ((region.min[0] + region.max[0]) / 2.0, (region.min[1] + region.max[1]) / 2.0);
    (0..n)
        .map(|k| {
            let t = k as f64 / rate_hz;
            Vec2::new(cx + eval(&ax, t) * region.width() / 2.0, cy + eval(&ay, t) * region.height() / 2.0)
        })
        .collect()
}

/// Samples the winch encoders of the as-built robot along `positions`.
/// Velocities are finite differences of the positions.
pub fn record_dataset<R: Rng>(
    truth: &RobotGeometry,
    config: &SimConfig,
    positions: &[Vec2],
    dt: f64,
    provenance: Provenance,
    rng: &mut R,
) -> Result<CalibrationDataset, SimError> {
    let temps = [config.thermal.ambient_c; SERVOS];
    let samples = positions
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let v = if k == 0 { Vec2::zeros() } else { (p - positions[k - 1]) / dt };
            let m = measure(truth, &PlatformState { position: *p, velocity: v }, config, k as f64 * dt, temps, rng)?;
            Ok(CalibrationSample { t: m.timestamp, theta: m.winch_angles, label: None })
        })
        .collect::<Result<_, SimError>>()?;
    Ok(CalibrationDataset { provenance, samples })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridExcitation {
    /// Grid vertices in visiting order.
    pub vertices: Vec<Vec2>,
    pub trajectory: Trajectory,
}

fn grid_lines(lo: f64, hi: f64, spacing: f64) -> Vec<f64> {
    let n = ((hi - lo) / spacing - 1e-9).ceil() as usize + 1;
    (0..n).map(|j| (lo + j as f64 * spacing).min(hi)).collect()
}

pub fn generate_grid_excitation(
    geom: &RobotGeometry,
    workspace: &Rect,
    spacing: f64,
    limits: &RetimeLimits,
) -> Result<GridExcitation, CalibrationError> {
    let (w, h) = (workspace.width(), workspace.height());
    if !(w > 0.0 && h > 0.0) {
        return Err(CalibrationError::Invalid("grid workspace has zero area".into()));
    }
    if !(spacing > 0.0) || spacing > w + 1e-12 || spacing > h + 1e-12 {
        return Err(CalibrationError::Invalid(format!("grid spacing {spacing} m does not fit a {w} x {h} m workspace")));
    }
    for p in [Vec2::new(workspace.min[0], workspace.min[1]), Vec2::new(workspace.max[0], workspace.max[1])] {
        if !geom.in_workspace(&p) {
            return Err(CalibrationError::Invalid(format!("grid corner ({}, {}) is outside the frame margins", p.x, p.y)));
        }
    }
    let xs = grid_lines(workspace.min[0], workspace.max[0], spacing);
    let ys = grid_lines(workspace.min[1], workspace.max[1], spacing);
    let mut vertices = Vec::with_capacity(xs.len() * ys.len());
    for (j, y) in ys.iter().enumerate() {
        let row = xs.iter().map(|x| Vec2::new(*x, *y));
        if j % 2 == 0 {
            vertices.extend(row);
        } else {
            vertices.extend(row.rev());
        }
    }
    let trajectory = retime(&vertices, limits).map_err(|e| CalibrationError::Invalid(e.to_string()))?;
    Ok(GridExcitation { vertices, trajectory })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full() -> RobotGeometry {
        RobotGeometry::full_scale()
    }

    fn rect(x: f64, y: f64, w: f64, h: f64) -> Rect {
        Rect::new(Vec2::new(x, y), Vec2::new(x + w, y + h))
    }

    #[test]
    fn five_by_five_serpentine() {
        let g = generate_grid_excitation(&full(), &rect(1.0, 0.8, 2.0, 2.0), 0.5, &RetimeLimits::default()).unwrap();
        assert_eq!(g.vertices.len(), 25);
        // Rows alternate direction; consecutive vertices are one spacing apart.
        assert!(g.vertices.windows(2).all(|w| ((w[1] - w[0]).norm() - 0.5).abs() < 1e-12));
        assert_eq!(g.vertices[4], Vec2::new(3.0, 0.8));
        assert_eq!(g.vertices[5], Vec2::new(3.0, 1.3));
        assert_eq!(*g.trajectory.samples.last().unwrap(), *g.vertices.last().unwrap());
    }

    #[test]
    fn spacing_equal_to_size_visits_corners() {
        let g = generate_grid_excitation(&full(), &rect(1.0, 0.8, 2.0, 2.0), 2.0, &RetimeLimits::default()).unwrap();
        assert_eq!(g.vertices.len(), 4);
    }

    #[test]
    fn bad_workspaces_are_rejected() {
        let lim = RetimeLimits::default();
        assert!(generate_grid_excitation(&full(), &rect(1.0, 0.8, 2.0, 0.0), 0.5, &lim).is_err());
        assert!(generate_grid_excitation(&full(), &rect(1.0, 0.8, 2.0, 2.0), 2.5, &lim).is_err());
        assert!(generate_grid_excitation(&full(), &rect(-1.0, 0.8, 2.0, 2.0), 0.5, &lim).is_err());
    }

    #[test]
    fn drag_stays_in_region_and_is_smooth() {
        let r = rect(0.5, 0.3, 2.0, 1.5);
        let path = drag_excitation(&r, 180.0, DRAG_RATE_HZ, 3);
        assert_eq!(path.len(), 3600);
        assert!(path.iter().all(|p| r.contains(p, 1e-12)));
        let max_step = path.windows(2).map(|w| (w[1] - w[0]).norm()).fold(0.0, f64::max);
        assert!(max_step < 0.05, "{max_step}");
        assert_eq!(path, drag_excitation(&r, 180.0, DRAG_RATE_HZ, 3));
    }
}
