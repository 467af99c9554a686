//! Iterative LQR for the nominal tension trajectory along a desired path.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use super::model::{position_of, state, velocity_of, Control, PlantModel, State};
use super::riccati::{riccati_sweep, StageExpansion};
use super::tension::{distribute, TensionLimits};
use super::ControlError;
use crate::geometry::{cable_geometry, structure_matrix, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub position: f64,
    pub velocity: f64,
    /// Weight on deviation from the static tension distribution.
    pub effort: f64,
    /// Terminal state weight relative to the running weight.
    pub terminal_scale: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self { position: 1e5, velocity: 1e2, effort: 1e-2, terminal_scale: 10.0 }
    }
}

impl CostWeights {
    pub fn q(&self) -> Matrix4<f64> {
        Matrix4::from_diagonal(&Vector4::new(self.position, self.position, self.velocity, self.velocity))
    }

    pub fn r(&self) -> Matrix4<f64> {
        Matrix4::identity() * self.effort
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IlqgOptions {
    pub max_iterations: usize,
    /// Stop when the relative cost decrease falls below this.
    pub tolerance: f64,
    /// Fraction of the tension range kept free at each end for feedback.
    pub limit_margin: f64,
    pub penalty_weight: f64,
    pub max_penalty_doublings: usize,
}

impl Default for IlqgOptions {
    fn default() -> Self {
        Self { max_iterations: 50, tolerance: 1e-6, limit_margin: 0.05, penalty_weight: 0.1, max_penalty_doublings: 10 }
    }
}

impl IlqgOptions {
    /// Limits the nominal is planned against.
    pub fn planning_limits(&self, limits: &TensionLimits) -> TensionLimits {
        let m = self.limit_margin * (limits.max_n - limits.min_n);
        TensionLimits { min_n: limits.min_n + m, max_n: limits.max_n - m }
    }
}

/// Desired states r_0..r_N sampled at the model timestep, consistent with
/// the discrete dynamics and starting at rest.
pub fn reference_states(path: &[Vec2], dt: f64) -> Vec<State> {
    let mut out = Vec::with_capacity(path.len());
    for (k, p) in path.iter().enumerate() {
        let v = if k == 0 { Vec2::zeros() } else { (p - path[k - 1]) / dt };
        out.push(state(*p, v));
    }
    out
}

/// Static tensions producing the reference acceleration at each step.
pub fn reference_controls(
    model: &PlantModel,
    reference: &[State],
    limits: &TensionLimits,
) -> Result<Vec<Control>, ControlError> {
    let mut out = Vec::with_capacity(reference.len().saturating_sub(1));
    for k in 0..reference.len().saturating_sub(1) {
        let (x, xn) = (&reference[k], &reference[k + 1]);
        let a = (velocity_of(xn) - velocity_of(x)) / model.dt;
        let f = (a - model.gravity_vector()) * model.mass + velocity_of(x) * model.damping;
        let cables = cable_geometry(&model.geometry, &position_of(x))?;
        let w = structure_matrix(&model.geometry, &cables);
        out.push(distribute(&w, &f, &Control::zeros(), limits).tensions);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct NominalTrajectory {
    pub reference: Vec<State>,
    pub reference_controls: Vec<Control>,
    /// x*_0..x*_N.
    pub states: Vec<State>,
    /// u*_0..u*_{N-1}.
    pub controls: Vec<Control>,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Penalty weight in force at the end; doubled while the nominal
    /// leaves the planning band.
    pub penalty_weight: f64,
}

struct Problem<'a> {
    model: &'a PlantModel,
    reference: &'a [State],
    u_ref: &'a [Control],
    q: Matrix4<f64>,
    r: Matrix4<f64>,
    q_final: Matrix4<f64>,
    band: TensionLimits,
    limits: TensionLimits,
    penalty: f64,
}

impl Problem<'_> {
    fn band_violation(&self, u: &Control) -> Control {
        u.map(|v| {
            if v < self.band.min_n {
                v - self.band.min_n
            } else if v > self.band.max_n {
                v - self.band.max_n
            } else {
                0.0
            }
        })
    }

    fn cost(&self, xs: &[State], us: &[Control]) -> f64 {
        let mut j = 0.0;
        for k in 0..us.len() {
            let dx = xs[k] - self.reference[k];
            let du = us[k] - self.u_ref[k];
            j += dx.dot(&(self.q * dx)) + du.dot(&(self.r * du)) + self.penalty * self.band_violation(&us[k]).norm_squared();
        }
        let dx = xs[us.len()] - self.reference[us.len()];
        j + dx.dot(&(self.q_final * dx))
    }

    fn rollout(
        &self,
        xs: &[State],
        us: &[Control],
        gains: &[DMatrix<f64>],
        ff: &[DVector<f64>],
        alpha: f64,
    ) -> Option<(Vec<State>, Vec<Control>)> {
        let mut nx = Vec::with_capacity(xs.len());
        let mut nu = Vec::with_capacity(us.len());
        nx.push(xs[0]);
        for k in 0..us.len() {
            let dx = DVector::from_column_slice((nx[k] - xs[k]).as_slice());
            let du = &ff[k] * alpha + &gains[k] * dx;
            let u = self.limits.clamp(&(us[k] + Vector4::from_column_slice(du.as_slice()))).0;
            let next = self.model.dynamics(&nx[k], &u).ok()?;
            if !next.iter().all(|v| v.is_finite()) {
                return None;
            }
            nu.push(u);
            nx.push(next);
        }
        Some((nx, nu))
    }

    fn sweep(&self, xs: &[State], us: &[Control], reg: f64) -> Result<super::riccati::SweepResult, ControlError> {
        let n = us.len();
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        let mut stages = Vec::with_capacity(n);
        for k in 0..n {
            let (ak, bk) = self.model.linearize(&xs[k], &us[k])?;
            a.push(to_d(&ak));
            b.push(to_d(&bk));
            let viol = self.band_violation(&us[k]);
            let active = viol.map(|v| if v != 0.0 { 2.0 * self.penalty } else { 0.0 });
            let l_x = self.q * (xs[k] - self.reference[k]) * 2.0;
            let l_u = self.r * (us[k] - self.u_ref[k]) * 2.0 + viol * (2.0 * self.penalty);
            let l_uu = self.r * 2.0 + Matrix4::from_diagonal(&active);
            stages.push(StageExpansion {
                l_x: DVector::from_column_slice(l_x.as_slice()),
                l_u: DVector::from_column_slice(l_u.as_slice()),
                l_xx: to_d(&(self.q * 2.0)),
                l_uu: to_d(&l_uu),
            });
        }
        let tx = self.q_final * (xs[n] - self.reference[n]) * 2.0;
        riccati_sweep(&a, &b, &stages, &DVector::from_column_slice(tx.as_slice()), &to_d(&(self.q_final * 2.0)), reg)
    }
}

pub(crate) fn to_d(m: &Matrix4<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(4, 4, m.as_slice())
}

/// Solves for the nominal `(x*, u*)` tracking `path` (one sample per model
/// timestep, platform at rest at `path[0]`).
pub fn solve_nominal(
    model: &PlantModel,
    path: &[Vec2],
    limits: &TensionLimits,
    weights: &CostWeights,
    options: &IlqgOptions,
) -> Result<NominalTrajectory, ControlError> {
    limits.validate()?;
    if path.len() < 2 {
        return Err(ControlError::Infeasible("desired trajectory needs at least two samples".into()));
    }
    for p in path {
        if !model.geometry.in_workspace(p) {
            return Err(ControlError::Workspace { x: p.x, y: p.y });
        }
    }
    let band = options.planning_limits(limits);
    band.validate()?;
    let reference = reference_states(path, model.dt);
    let u_ref = reference_controls(model, &reference, &band)?;
    let mut prob = Problem {
        model,
        reference: &reference,
        u_ref: &u_ref,
        q: weights.q(),
        r: weights.r(),
        q_final: weights.q() * weights.terminal_scale,
        band,
        limits: *limits,
        penalty: options.penalty_weight,
    };

    let n = u_ref.len();
    let zero_gains = vec![DMatrix::zeros(4, 4); n];
    let zero_ff = vec![DVector::zeros(4); n];
    let (mut xs, mut us) = prob
        .rollout(&reference, &u_ref, &zero_gains, &zero_ff, 0.0)
        .ok_or_else(|| ControlError::Infeasible("initial rollout left the frame".into()))?;
    let mut total_iterations = 0;
    let mut converged = false;
    for _ in 0..=options.max_penalty_doublings {
        let mut cost = prob.cost(&xs, &us);
        let mut reg = 1e-9;
        converged = false;
        for _ in 0..options.max_iterations {
            total_iterations += 1;
            let sweep = match prob.sweep(&xs, &us, reg) {
                Ok(s) => s,
                Err(ControlError::Synthesis { step }) => {
                    reg *= 10.0;
                    if reg > 1e6 {
                        return Err(ControlError::Synthesis { step });
                    }
                    continue;
                }
                Err(e) => return Err(e),
            };
            let mut accepted = None;
            let mut alpha = 1.0;
            for _ in 0..12 {
                if let Some((nx, nu)) = prob.rollout(&xs, &us, &sweep.gains, &sweep.feedforward, alpha) {
                    let c = prob.cost(&nx, &nu);
                    if c < cost {
                        accepted = Some((nx, nu, c));
                        break;
                    }
                }
                alpha *= 0.5;
            }
            match accepted {
                Some((nx, nu, c)) => {
                    let rel = (cost - c) / cost.max(1e-300);
                    xs = nx;
                    us = nu;
                    cost = c;
                    reg = (reg / 10.0).max(1e-9);
                    if rel < options.tolerance {
                        converged = true;
                        break;
                    }
                }
                None => {
                    // No descent from here: already at a (local) optimum.
                    if sweep.expected_decrease.abs() <= options.tolerance * cost.max(1e-300) || reg > 1e3 {
                        converged = true;
                        break;
                    }
                    reg *= 10.0;
                }
            }
        }
        if us.iter().all(|u| prob.band_violation(u).norm() < 1e-9) {
            break;
        }
        prob.penalty *= 2.0;
    }
    let cost = prob.cost(&xs, &us);
    let penalty_weight = prob.penalty;
    Ok(NominalTrajectory {
        reference,
        reference_controls: u_ref,
        states: xs,
        controls: us,
        cost,
        iterations: total_iterations,
        converged,
        penalty_weight,
    })
}

/// Feedback gains about a fixed nominal for the tracking cost.
pub fn tracking_gains(
    model: &PlantModel,
    nominal: &NominalTrajectory,
    weights: &CostWeights,
) -> Result<Vec<Matrix4<f64>>, ControlError> {
    let prob = Problem {
        model,
        reference: &nominal.states,
        u_ref: &nominal.controls,
        q: weights.q(),
        r: weights.r(),
        q_final: weights.q() * weights.terminal_scale,
        band: TensionLimits { min_n: f64::NEG_INFINITY, max_n: f64::INFINITY },
        limits: TensionLimits { min_n: f64::NEG_INFINITY, max_n: f64::INFINITY },
        penalty: 0.0,
    };
    let sweep = prob.sweep(&nominal.states, &nominal.controls, 0.0)?;
    Ok(sweep.gains.iter().map(|k| Matrix4::from_column_slice(k.as_slice())).collect())
}
