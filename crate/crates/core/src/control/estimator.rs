//! Offline Kalman gain recursion, reduced to an affine update per step so the
//! online estimator is three matrix-vector products.

use nalgebra::{Matrix4, SMatrix, Vector4};
use serde::{Deserialize, Serialize};

use super::model::{Obs, ObsMatrix, NZ};
use super::ControlError;

pub type ObsCov = SMatrix<f64, NZ, NZ>;
pub type ObsGain = SMatrix<f64, 4, NZ>;

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorNoise {
    pub process: Matrix4<f64>,
    pub measurement: ObsCov,
    pub initial: Matrix4<f64>,
}

/// Noise levels in physical units, turned into covariances for a given step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevels {
    /// Unmodelled force on the platform, N.
    pub force_std_n: f64,
    pub length_std_m: f64,
    pub rate_std_m_s: f64,
    pub initial_position_std_m: f64,
    pub initial_velocity_std_m_s: f64,
}

impl Default for NoiseLevels {
    fn default() -> Self {
        Self {
            force_std_n: 20.0,
            length_std_m: 0.002,
            rate_std_m_s: 0.01,
            initial_position_std_m: 0.01,
            initial_velocity_std_m_s: 0.01,
        }
    }
}

impl NoiseLevels {
    pub fn covariances(&self, mass: f64, dt: f64) -> EstimatorNoise {
        let dv = self.force_std_n / mass * dt;
        let dp = dv * dt;
        let process = Matrix4::from_diagonal(&Vector4::new(dp * dp, dp * dp, dv * dv, dv * dv));
        let mut measurement = ObsCov::zeros();
        for i in 0..4 {
            measurement[(i, i)] = self.length_std_m.powi(2).max(1e-12);
            measurement[(4 + i, 4 + i)] = self.rate_std_m_s.powi(2).max(1e-12);
        }
        let (ip, iv) = (self.initial_position_std_m.powi(2), self.initial_velocity_std_m_s.powi(2));
        EstimatorNoise { process, measurement, initial: Matrix4::from_diagonal(&Vector4::new(ip, ip, iv, iv)) }
    }
}

/// Affine estimator for step k: `dx_k = x_gain dx_{k-1} + z_gain z_k + offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorStep {
    pub x_gain: Matrix4<f64>,
    pub z_gain: ObsGain,
    pub offset: Vector4<f64>,
    pub covariance: Matrix4<f64>,
}

/// Runs the covariance recursion along the nominal. `closed_loop[k]` is the
/// deviation transition from k to k+1 (`A_k + B_k K_k` under feedback) and
/// `h[k]`, `z_nominal[k]` the measurement linearization at k.
pub fn estimator_precompute(
    closed_loop: &[Matrix4<f64>],
    h: &[ObsMatrix],
    z_nominal: &[Obs],
    noise: &EstimatorNoise,
) -> Result<Vec<EstimatorStep>, ControlError> {
    let n = h.len();
    assert_eq!(z_nominal.len(), n);
    assert!(closed_loop.len() + 1 >= n);
    let mut out = Vec::with_capacity(n);
    let mut p = noise.initial;
    for k in 0..n {
        let transition = if k == 0 { Matrix4::identity() } else { closed_loop[k - 1] };
        let prior = if k == 0 { p } else { transition * p * transition.transpose() + noise.process };
        let s = h[k] * prior * h[k].transpose() + noise.measurement;
        let s = (s + s.transpose()) * 0.5;
        let chol = s.cholesky().ok_or(ControlError::Conditioning { step: k })?;
        let l: ObsGain = chol.solve(&(h[k] * prior)).transpose();
        let i_lh = Matrix4::identity() - l * h[k];
        let post = i_lh * prior * i_lh.transpose() + l * noise.measurement * l.transpose();
        p = (post + post.transpose()) * 0.5;
        if p.cholesky().is_none() || !p.iter().all(|v| v.is_finite()) {
            return Err(ControlError::Conditioning { step: k });
        }
        out.push(EstimatorStep { x_gain: i_lh * transition, z_gain: l, offset: -l * z_nominal[k], covariance: p });
    }
    Ok(out)
}
