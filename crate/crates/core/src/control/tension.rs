//! Tension distribution for the redundantly actuated platform.

use nalgebra::{DMatrix, DVector, Matrix2x4, Vector4};
use serde::{Deserialize, Serialize};

use super::ControlError;
use crate::geometry::{cable_geometry, structure_matrix, RobotGeometry, Vec2, CABLES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TensionLimits {
    pub min_n: f64,
    pub max_n: f64,
}

impl Default for TensionLimits {
    fn default() -> Self {
        Self { min_n: 5.0, max_n: 150.0 }
    }
}

impl TensionLimits {
    pub fn validate(&self) -> Result<(), ControlError> {
        if !(self.min_n >= 0.0 && self.max_n > self.min_n && self.max_n.is_finite()) {
            return Err(ControlError::Infeasible(format!(
                "tension limits [{}, {}] N are not a valid range",
                self.min_n, self.max_n
            )));
        }
        Ok(())
    }

    pub fn mid(&self) -> Vector4<f64> {
        Vector4::repeat((self.min_n + self.max_n) / 2.0)
    }

    pub fn clamp(&self, u: &Vector4<f64>) -> (Vector4<f64>, bool) {
        let c = u.map(|v| v.clamp(self.min_n, self.max_n));
        let clamped = (c - u).amax() > 0.0;
        (c, clamped)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distribution {
    pub tensions: Vector4<f64>,
    /// The wrench is exactly achievable within the limits.
    pub feasible: bool,
}

const BOUND_TOL: f64 = 1e-9;

#[derive(Clone, Copy, PartialEq)]
enum Active {
    Free,
    Low,
    High,
}

fn active_sets() -> impl Iterator<Item = [Active; CABLES]> {
    (0..3usize.pow(CABLES as u32)).map(|mut code| {
        std::array::from_fn(|_| {
            let s = [Active::Free, Active::Low, Active::High][code % 3];
            code /= 3;
            s
        })
    })
}

/// Solves min |u - u_ref|^2 subject to W u = f and the box. When no box-feasible
/// solution exists, returns the least-squares wrench fit inside the box.
pub fn distribute(w: &Matrix2x4<f64>, f: &Vec2, u_ref: &Vector4<f64>, limits: &TensionLimits) -> Distribution {
    let scale = 1.0 + f.norm() + w.amax() * limits.max_n;
    let mut best: Option<(f64, Vector4<f64>)> = None;
    for set in active_sets() {
        let free: Vec<usize> = (0..CABLES).filter(|&i| set[i] == Active::Free).collect();
        let mut u = *u_ref;
        for i in 0..CABLES {
            match set[i] {
                Active::Low => u[i] = limits.min_n,
                Active::High => u[i] = limits.max_n,
                Active::Free => {}
            }
        }
        // Residual wrench the free cables must provide, measured at u_ref.
        let resid = f - w * u;
        if !free.is_empty() {
            let wf = DMatrix::from_fn(2, free.len(), |r, c| w[(r, free[c])]);
            let rhs = DVector::from_column_slice(resid.as_slice());
            let Ok(pinv) = wf.clone().pseudo_inverse(1e-12) else { continue };
            let du = pinv * rhs;
            for (c, &i) in free.iter().enumerate() {
                u[i] += du[c];
            }
        }
        if (w * u - f).norm() > 1e-9 * scale {
            continue;
        }
        if u.iter().any(|&v| v < limits.min_n - BOUND_TOL || v > limits.max_n + BOUND_TOL) {
            continue;
        }
        let cost = (u - u_ref).norm_squared();
        if best.map_or(true, |(c, _)| cost < c) {
            best = Some((cost, u));
        }
    }
    if let Some((_, u)) = best {
        return Distribution { tensions: limits.clamp(&u).0, feasible: true };
    }
    Distribution { tensions: least_squares_in_box(w, f, u_ref, limits), feasible: false }
}

/// min |W u - f|^2 + eps |u - u_ref|^2 over the box, by enumerating active sets.
fn least_squares_in_box(w: &Matrix2x4<f64>, f: &Vec2, u_ref: &Vector4<f64>, limits: &TensionLimits) -> Vector4<f64> {
    let eps = 1e-9;
    let objective = |u: &Vector4<f64>| (w * u - f).norm_squared() + eps * (u - u_ref).norm_squared();
    let h = w.transpose() * w + nalgebra::Matrix4::identity() * eps;
    let g = w.transpose() * f + u_ref * eps;
    let mut best = (f64::INFINITY, limits.clamp(u_ref).0);
    for set in active_sets() {
        let free: Vec<usize> = (0..CABLES).filter(|&i| set[i] == Active::Free).collect();
        let mut u = Vector4::zeros();
        for i in 0..CABLES {
            u[i] = match set[i] {
                Active::Low => limits.min_n,
                Active::High => limits.max_n,
                Active::Free => 0.0,
            };
        }
        if !free.is_empty() {
            let hf = DMatrix::from_fn(free.len(), free.len(), |r, c| h[(free[r], free[c])]);
            let rhs = DVector::from_fn(free.len(), |r, _| {
                let i = free[r];
                g[i] - (0..CABLES).filter(|j| set[*j] != Active::Free).map(|j| h[(i, j)] * u[j]).sum::<f64>()
            });
            let Some(sol) = hf.cholesky().map(|c| c.solve(&rhs)) else { continue };
            for (c, &i) in free.iter().enumerate() {
                u[i] = sol[c];
            }
        }
        if u.iter().any(|&v| v < limits.min_n - BOUND_TOL || v > limits.max_n + BOUND_TOL) {
            continue;
        }
        let u = limits.clamp(&u).0;
        let o = objective(&u);
        if o < best.0 {
            best = (o, u);
        }
    }
    best.1
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GravityCompensation {
    pub tensions: Vector4<f64>,
    /// False when the hold wrench cannot be produced; tensions are then the
    /// closest achievable.
    pub feasible: bool,
}

/// Minimum-norm tensions that hold the platform against gravity with a small
/// downward bias `descent_force` (zero for a pure hold).
pub fn gravity_compensation(
    geometry: &RobotGeometry,
    position: &Vec2,
    mass: f64,
    gravity: f64,
    limits: &TensionLimits,
    descent_force: Vec2,
) -> Result<GravityCompensation, ControlError> {
    let cables = cable_geometry(geometry, position)?;
    let w = structure_matrix(geometry, &cables);
    let f = descent_force + Vec2::new(0.0, mass * gravity);
    let d = distribute(&w, &f, &Vector4::zeros(), limits);
    Ok(GravityCompensation { tensions: d.tensions, feasible: d.feasible })
}
