use nalgebra::{Matrix2, Matrix2x4};

use super::{GeometryError, RobotGeometry, Vec2, WinchModel, CABLES};

const SINGULAR_DISTANCE: f64 = 1e-9;

/// Per-cable geometric quantities at a platform position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CableState {
    /// Straight-line distance from the platform attachment to the anchor.
    pub distance: f64,
    /// Unit vector from the attachment toward the anchor.
    pub unit_direction: Vec2,
    /// Cable length consumed by this run: `routing_ratio * distance`.
    pub effective_length: f64,
}

/// Which convention a set of cable lengths is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LengthKind {
    /// Plain attachment-to-anchor distance.
    Distance,
    /// Distance scaled by the routing ratio.
    Effective,
}

pub fn cable_geometry(geom: &RobotGeometry, x: &Vec2) -> Result<[CableState; CABLES], GeometryError> {
    let mut out = [CableState {
        distance: 0.0,
        unit_direction: Vec2::zeros(),
        effective_length: 0.0,
    }; CABLES];
    for (i, c) in out.iter_mut().enumerate() {
        let delta = geom.anchors[i] - (x + geom.attachments[i]);
        let distance = delta.norm();
        if distance < SINGULAR_DISTANCE {
            return Err(GeometryError::Singular { cable: i, distance });
        }
        *c = CableState {
            distance,
            unit_direction: delta / distance,
            effective_length: geom.ratio(i) * distance,
        };
    }
    Ok(out)
}

pub fn cable_distances(geom: &RobotGeometry, x: &Vec2) -> Result<[f64; CABLES], GeometryError> {
    Ok(cable_geometry(geom, x)?.map(|c| c.distance))
}

/// Structure matrix whose columns are `routing_ratio_i * d_i`; the net cable
/// force on the platform is `W * u` for tensions `u`.
pub fn structure_matrix(geom: &RobotGeometry, cables: &[CableState; CABLES]) -> Matrix2x4<f64> {
    let mut w = Matrix2x4::zeros();
    for (i, c) in cables.iter().enumerate() {
        w.set_column(i, &(c.unit_direction * geom.ratio(i)));
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FkSolution {
    pub position: Vec2,
    /// RMS of the per-cable length residuals at the solution, meters.
    pub residual: f64,
    pub iterations: usize,
}

const FK_MAX_ITERS: usize = 100;

/// Least-squares platform position from four measured cable lengths.
pub fn forward_kinematics_from_lengths(
    geom: &RobotGeometry,
    lengths: &[f64; CABLES],
    kind: LengthKind,
    initial: Option<Vec2>,
) -> Result<FkSolution, GeometryError> {
    let scale = |i: usize| match kind {
        LengthKind::Distance => 1.0,
        LengthKind::Effective => geom.ratio(i),
    };
    let residuals = |x: &Vec2| -> Result<([f64; CABLES], [Vec2; CABLES]), GeometryError> {
        let cables = cable_geometry(geom, x)?;
        let mut r = [0.0; CABLES];
        let mut j = [Vec2::zeros(); CABLES];
        for i in 0..CABLES {
            r[i] = lengths[i] - scale(i) * cables[i].distance;
            // d(distance)/dx = -unit_direction
            j[i] = cables[i].unit_direction * scale(i);
        }
        Ok((r, j))
    };
    let cost = |r: &[f64; CABLES]| r.iter().map(|v| v * v).sum::<f64>();

    let mut x = initial.unwrap_or_else(|| geom.center());
    let (mut r, mut jac) = residuals(&x)?;
    let mut c = cost(&r);
    let mut lambda = 1e-6;
    for it in 0..FK_MAX_ITERS {
        let mut jtj = Matrix2::zeros();
        let mut jtr = Vec2::zeros();
        for i in 0..CABLES {
            jtj += jac[i] * jac[i].transpose();
            jtr += jac[i] * r[i];
        }
        if jtr.norm() < 1e-15 {
            return Ok(FkSolution { position: x, residual: (c / CABLES as f64).sqrt(), iterations: it });
        }
        let mut accepted = false;
        for _ in 0..30 {
            let damped = jtj + Matrix2::identity() * lambda * (1.0 + jtj.trace());
            let Some(step) = damped.lu().solve(&(-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let candidate = x + step;
            match residuals(&candidate) {
                Ok((rn, jn)) if cost(&rn) <= c => {
                    let converged = step.norm() < 1e-14 * (1.0 + x.norm()) || c - cost(&rn) < 1e-30;
                    x = candidate;
                    r = rn;
                    jac = jn;
                    c = cost(&r);
                    lambda = (lambda * 0.1).max(1e-12);
                    accepted = true;
                    if converged {
                        return Ok(FkSolution {
                            position: x,
                            residual: (c / CABLES as f64).sqrt(),
                            iterations: it + 1,
                        });
                    }
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        if !accepted {
            // No descent direction left: at a (numerical) minimum.
            return Ok(FkSolution { position: x, residual: (c / CABLES as f64).sqrt(), iterations: it });
        }
    }
    Err(GeometryError::NotConverged { iterations: FK_MAX_ITERS, residual: (c / CABLES as f64).sqrt() })
}

/// Platform position from winch angles through a calibrated winch model.
/// The model maps angle to plain cable distance.
pub fn forward_kinematics(
    geom: &RobotGeometry,
    model: &WinchModel,
    theta: &[f64; CABLES],
) -> Result<FkSolution, GeometryError> {
    let lengths = std::array::from_fn(|i| model.length(i, theta[i]));
    forward_kinematics_from_lengths(geom, &lengths, LengthKind::Distance, None)
}
