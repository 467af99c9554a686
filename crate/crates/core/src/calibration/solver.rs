//! Levenberg–Marquardt on winch coefficients and per-sample platform
//! positions. Each position touches only its own four residuals, so the
//! normal equations are reduced onto the 12 winch coefficients with a Schur
//! complement.

use nalgebra::{Matrix2, SMatrix, SVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{CalibrationDataset, CalibrationError, CalibrationResult, ConvergenceReport, WINCH_SCHEMA};
use crate::geometry::{forward_kinematics_from_lengths, LengthKind, RobotGeometry, Vec2, WinchModel, CABLES};

const NP: usize = 3 * CABLES;
type ParamVec = SVector<f64, NP>;
type ParamMat = SMatrix<f64, NP, NP>;
type Coupling = SMatrix<f64, 2, NP>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Relative cost change below which the solve stops.
    pub tolerance: f64,
    /// Smallest accepted eigenvalue ratio of the scaled reduced system.
    pub rank_tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { max_iterations: 200, tolerance: 1e-10, rank_tolerance: 1e-12 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointWeights {
    pub proprio: f64,
    pub extero: f64,
}

impl Default for JointWeights {
    fn default() -> Self {
        Self { proprio: 0.94, extero: 0.06 }
    }
}

/// Angles are centred and scaled per cable so the three coefficient columns
/// are well conditioned; `theta = center + scale * tau`.
#[derive(Debug, Clone, Copy)]
struct AngleScaling {
    center: [f64; CABLES],
    scale: [f64; CABLES],
}

impl AngleScaling {
    fn new(data: &CalibrationDataset) -> Self {
        let (lo, hi) = data.theta_range();
        Self {
            center: std::array::from_fn(|i| (lo[i] + hi[i]) / 2.0),
            scale: std::array::from_fn(|i| ((hi[i] - lo[i]) / 2.0).max(1.0)),
        }
    }

    fn tau(&self, i: usize, theta: f64) -> f64 {
        (theta - self.center[i]) / self.scale[i]
    }

    fn to_scaled(&self, w: &WinchModel) -> ParamVec {
        let mut q = ParamVec::zeros();
        for i in 0..CABLES {
            let [p0, p1, p2] = w.p[i];
            let (c, s) = (self.center[i], self.scale[i]);
            q[3 * i] = p0 + p1 * c + p2 * c * c;
            q[3 * i + 1] = (p1 + 2.0 * p2 * c) * s;
            q[3 * i + 2] = p2 * s * s;
        }
        q
    }

    fn to_model(&self, q: &ParamVec) -> WinchModel {
        WinchModel::from_coefficients(std::array::from_fn(|i| {
            let (q0, q1, q2) = (q[3 * i], q[3 * i + 1], q[3 * i + 2]);
            let (c, s) = (self.center[i], self.scale[i]);
            let p2 = q2 / (s * s);
            let p1 = q1 / s - 2.0 * p2 * c;
            let p0 = q0 - q1 * c / s + p2 * c * c;
            [p0, p1, p2]
        }))
    }
}

struct Problem<'a> {
    data: &'a CalibrationDataset,
    geom: &'a RobotGeometry,
    scaling: AngleScaling,
    /// Square roots of the residual weights.
    sp: f64,
    se: f64,
}

struct Normal {
    cost: f64,
    u: Vec<Matrix2<f64>>,
    w: Vec<Coupling>,
    v: ParamMat,
    gx: Vec<Vec2>,
    gq: ParamVec,
}

impl Problem<'_> {
    fn phi(&self, i: usize, theta: f64) -> [f64; 3] {
        let t = self.scaling.tau(i, theta);
        [1.0, t, t * t]
    }

    fn length_residual(&self, k: usize, i: usize, x: &Vec2, q: &ParamVec) -> (f64, Vec2) {
        let s = &self.data.samples[k];
        let phi = self.phi(i, s.theta[i]);
        let model = q[3 * i] * phi[0] + q[3 * i + 1] * phi[1] + q[3 * i + 2] * phi[2];
        let v = self.geom.anchors[i] - (x + self.geom.attachments[i]);
        let d = v.norm();
        (model - d, v / d)
    }

    fn cost(&self, x: &[Vec2], q: &ParamVec) -> f64 {
        let mut c = 0.0;
        for (k, s) in self.data.samples.iter().enumerate() {
            for i in 0..CABLES {
                c += (self.sp * self.length_residual(k, i, &x[k], q).0).powi(2);
            }
            if let Some(l) = s.label {
                c += (self.se * (x[k] - l)).norm_squared();
            }
        }
        c
    }

    fn normal(&self, x: &[Vec2], q: &ParamVec) -> Normal {
        let n = x.len();
        let mut out = Normal {
            cost: 0.0,
            u: vec![Matrix2::zeros(); n],
            w: vec![Coupling::zeros(); n],
            v: ParamMat::zeros(),
            gx: vec![Vec2::zeros(); n],
            gq: ParamVec::zeros(),
        };
        let sp2 = self.sp * self.sp;
        for (k, s) in self.data.samples.iter().enumerate() {
            for i in 0..CABLES {
                let (r, dir) = self.length_residual(k, i, &x[k], q);
                let phi = self.phi(i, s.theta[i]);
                out.cost += sp2 * r * r;
                out.u[k] += dir * dir.transpose() * sp2;
                out.gx[k] += dir * (sp2 * r);
                for a in 0..3 {
                    out.gq[3 * i + a] += sp2 * phi[a] * r;
                    for b in 0..3 {
                        out.v[(3 * i + a, 3 * i + b)] += sp2 * phi[a] * phi[b];
                    }
                    out.w[k][(0, 3 * i + a)] += sp2 * dir.x * phi[a];
                    out.w[k][(1, 3 * i + a)] += sp2 * dir.y * phi[a];
                }
            }
            if let Some(l) = s.label {
                let se2 = self.se * self.se;
                let e = x[k] - l;
                out.cost += se2 * e.norm_squared();
                out.u[k] += Matrix2::identity() * se2;
                out.gx[k] += e * se2;
            }
        }
        out
    }
}

fn describe_direction(v: &ParamVec) -> String {
    let names = ["offset", "slope", "curvature"];
    let parts: Vec<String> = (0..NP)
        .filter(|j| v[*j].abs() > 0.3)
        .map(|j| format!("{:+.2}*winch{}.{}", v[j], j / 3, names[j % 3]))
        .collect();
    parts.join(" ")
}

/// Reduced system S = V - sum W' U^-1 W, b = -gq + sum W' U^-1 gx.
fn reduce(nrm: &Normal, lambda: f64) -> Option<(ParamMat, ParamVec, Vec<Matrix2<f64>>)> {
    let mut s = nrm.v;
    for j in 0..NP {
        s[(j, j)] += lambda * nrm.v[(j, j)].max(1e-12);
    }
    let mut b = -nrm.gq;
    let mut uinv = Vec::with_capacity(nrm.u.len());
    for k in 0..nrm.u.len() {
        let mut u = nrm.u[k];
        for j in 0..2 {
            u[(j, j)] += lambda * nrm.u[k][(j, j)].max(1e-12);
        }
        let ui = u.try_inverse()?;
        let wt_ui = nrm.w[k].transpose() * ui;
        s -= wt_ui * nrm.w[k];
        b += wt_ui * nrm.gx[k];
        uinv.push(ui);
    }
    Some((s, b, uinv))
}

fn check_rank(nrm: &Normal, tol: f64) -> Result<(), CalibrationError> {
    let (s, _, _) = reduce(nrm, 0.0).ok_or_else(|| CalibrationError::Underdetermined {
        directions: vec!["a platform position is unconstrained".into()],
    })?;
    let d = ParamVec::from_fn(|j, _| 1.0 / s[(j, j)].max(1e-300).sqrt());
    let scaled = ParamMat::from_fn(|a, b| s[(a, b)] * d[a] * d[b]);
    let eig = SymmetricEigen::new(scaled);
    let max = eig.eigenvalues.max();
    let weak: Vec<String> = (0..NP)
        .filter(|j| !(eig.eigenvalues[*j] > tol * max))
        .map(|j| describe_direction(&eig.eigenvectors.column(j).into_owned()))
        .collect();
    if weak.is_empty() {
        Ok(())
    } else {
        Err(CalibrationError::Underdetermined { directions: weak })
    }
}

fn solve(
    data: &CalibrationDataset,
    geom: &RobotGeometry,
    init: &WinchModel,
    sp: f64,
    se: f64,
    options: &SolverOptions,
) -> Result<CalibrationResult, CalibrationError> {
    data.validate()?;
    geom.validate()?;
    let scaling = AngleScaling::new(data);
    let prob = Problem { data, geom, scaling, sp, se };
    let mut q = scaling.to_scaled(init);
    let mut x = Vec::with_capacity(data.len());
    let mut hint = None;
    for s in &data.samples {
        let lengths = init.lengths(&s.theta);
        let fk = forward_kinematics_from_lengths(geom, &lengths, LengthKind::Distance, hint)?;
        hint = Some(fk.position);
        x.push(fk.position);
    }

    let mut nrm = prob.normal(&x, &q);
    if !nrm.cost.is_finite() {
        return Err(CalibrationError::Diverged { trace: vec![nrm.cost] });
    }
    check_rank(&nrm, options.rank_tolerance)?;
    let initial_cost = nrm.cost;
    let mut trace = vec![nrm.cost];
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    'outer: while iterations < options.max_iterations {
        iterations += 1;
        loop {
            let step = reduce(&nrm, lambda).and_then(|(s, b, uinv)| {
                let dq = s.cholesky()?.solve(&b);
                let dx: Vec<Vec2> = (0..x.len()).map(|k| uinv[k] * (-nrm.gx[k] - nrm.w[k] * dq)).collect();
                Some((dq, dx))
            });
            if let Some((dq, dx)) = step {
                let q_new = q + dq;
                let x_new: Vec<Vec2> = x.iter().zip(&dx).map(|(a, b)| a + b).collect();
                let c_new = prob.cost(&x_new, &q_new);
                if c_new.is_finite() && c_new < nrm.cost {
                    let drop = nrm.cost - c_new;
                    q = q_new;
                    x = x_new;
                    nrm = prob.normal(&x, &q);
                    trace.push(nrm.cost);
                    lambda = (lambda * 0.1).max(1e-15);
                    if drop <= options.tolerance * nrm.cost.max(1e-300) {
                        converged = true;
                        break 'outer;
                    }
                    break;
                }
            }
            lambda *= 10.0;
            if lambda > 1e16 {
                // No descent at any damping: numerically stationary.
                converged = true;
                break 'outer;
            }
        }
    }
    if !nrm.cost.is_finite() {
        return Err(CalibrationError::Diverged { trace });
    }

    let winch = scaling.to_model(&q);
    let (lo, hi) = data.theta_range();
    for i in 0..CABLES {
        if !(winch.slope(i, lo[i]) > 0.0 && winch.slope(i, hi[i]) > 0.0) {
            return Err(CalibrationError::NonMonotonePayout { cable: i });
        }
    }
    let mut sq = 0.0;
    for k in 0..x.len() {
        for i in 0..CABLES {
            sq += prob.length_residual(k, i, &x[k], &q).0.powi(2);
        }
    }
    let gradient_norm = (nrm.gq.norm_squared() + nrm.gx.iter().map(|g| g.norm_squared()).sum::<f64>()).sqrt();
    Ok(CalibrationResult {
        schema: WINCH_SCHEMA.to_string(),
        provenance: Some(data.provenance),
        winch,
        positions: x.iter().map(|p| [p.x, p.y]).collect(),
        residual_rms: (sq / (CABLES * x.len()) as f64).sqrt(),
        report: ConvergenceReport { iterations, converged, initial_cost, final_cost: nrm.cost, gradient_norm, cost_trace: trace },
    })
}

/// Length residuals of `model` on `data` with positions from forward
/// kinematics, returned with those positions.
pub fn evaluate_model(
    data: &CalibrationDataset,
    geom: &RobotGeometry,
    model: &WinchModel,
) -> Result<(Vec<f64>, Vec<Vec2>), CalibrationError> {
    let mut residuals = Vec::with_capacity(CABLES * data.len());
    let mut positions = Vec::with_capacity(data.len());
    let mut hint = None;
    for s in &data.samples {
        let lengths = model.lengths(&s.theta);
        let fk = forward_kinematics_from_lengths(geom, &lengths, LengthKind::Distance, hint)?;
        hint = Some(fk.position);
        let d = crate::geometry::cable_distances(geom, &fk.position)?;
        residuals.extend((0..CABLES).map(|i| lengths[i] - d[i]));
        positions.push(fk.position);
    }
    Ok((residuals, positions))
}

pub fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len().max(1) as f64).sqrt()
}

/// Length-only calibration. Cost is the mean squared length residual.
pub fn solve_proprioceptive(
    data: &CalibrationDataset,
    geom: &RobotGeometry,
    init: &WinchModel,
    options: &SolverOptions,
) -> Result<CalibrationResult, CalibrationError> {
    let sp = (1.0 / (CABLES * data.len().max(1)) as f64).sqrt();
    solve(data, geom, init, sp, 0.0, options)
}

/// Length residuals weighted `proprio / (4 N)` plus position-label
/// residuals weighted `extero / (2 M)` over the `M` labelled samples.
pub fn solve_joint(
    data: &CalibrationDataset,
    geom: &RobotGeometry,
    init: &WinchModel,
    weights: &JointWeights,
    options: &SolverOptions,
) -> Result<CalibrationResult, CalibrationError> {
    let m = data.labelled();
    if m < 4 {
        return Err(CalibrationError::Invalid(format!("joint calibration needs at least 4 labelled samples, found {m}")));
    }
    if !(weights.proprio > 0.0) || !(weights.extero >= 0.0) {
        return Err(CalibrationError::Invalid("joint weights must be proprio > 0 and extero >= 0".into()));
    }
    let sp = (weights.proprio / (CABLES * data.len()) as f64).sqrt();
    let se = (weights.extero / (2 * m) as f64).sqrt();
    solve(data, geom, init, sp, se, options).inspect_err(|e| {
        if matches!(e, CalibrationError::NonMonotonePayout { .. }) {
            log::warn!("exteroceptive weight {} drove the winch model outside monotone payout", weights.extero);
        }
    })
}
