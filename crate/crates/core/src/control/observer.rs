//! Schedule-free state observer from one measurement frame, used by modes
//! that run without a nominal trajectory.

use nalgebra::{Matrix2, Matrix4x2};

use super::model::{state, Obs, State};
use super::ControlError;
use crate::geometry::{cable_geometry, forward_kinematics_from_lengths, LengthKind, RobotGeometry, Vec2, CABLES};

/// Position by forward kinematics on the distances, velocity by least squares
/// on the distance rates.
pub fn quasi_static_estimate(geometry: &RobotGeometry, z: &Obs, hint: Option<Vec2>) -> Result<State, ControlError> {
    let d: [f64; CABLES] = std::array::from_fn(|i| z[i]);
    let fk = forward_kinematics_from_lengths(geometry, &d, LengthKind::Distance, hint)?;
    let cables = cable_geometry(geometry, &fk.position)?;
    // rate_i = -u_i . v
    let j = Matrix4x2::from_fn(|r, c| -cables[r].unit_direction[c]);
    let jtj: Matrix2<f64> = j.transpose() * j;
    let rates = nalgebra::Vector4::from_fn(|i, _| z[CABLES + i]);
    let v = jtj.lu().solve(&(j.transpose() * rates)).unwrap_or_else(Vec2::zeros);
    Ok(state(fk.position, v))
}
