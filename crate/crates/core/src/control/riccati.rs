//! Discrete-time Riccati sweeps over dense matrices.

use nalgebra::{DMatrix, DVector};

use super::ControlError;

/// Quadratic expansion of one stage cost around the current nominal.
#[derive(Debug, Clone)]
pub struct StageExpansion {
    pub l_x: DVector<f64>,
    pub l_u: DVector<f64>,
    pub l_xx: DMatrix<f64>,
    pub l_uu: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    /// Feedback gains, `u = u* + K (x - x*)`.
    pub gains: Vec<DMatrix<f64>>,
    /// Feedforward corrections.
    pub feedforward: Vec<DVector<f64>>,
    /// Predicted first-order cost change at unit step.
    pub expected_decrease: f64,
}

/// Backward pass for `x_{k+1} = A_k x_k + B_k u_k` with stage expansions at
/// k = 0..N-1 and a terminal expansion. `reg` is added to `Q_uu`.
pub fn riccati_sweep(
    a: &[DMatrix<f64>],
    b: &[DMatrix<f64>],
    stages: &[StageExpansion],
    terminal_x: &DVector<f64>,
    terminal_xx: &DMatrix<f64>,
    reg: f64,
) -> Result<SweepResult, ControlError> {
    let n = a.len();
    assert_eq!(b.len(), n);
    assert_eq!(stages.len(), n);
    let mut v_x = terminal_x.clone();
    let mut v_xx = terminal_xx.clone();
    let mut gains = vec![DMatrix::zeros(0, 0); n];
    let mut ff = vec![DVector::zeros(0); n];
    let mut expected = 0.0;
    for k in (0..n).rev() {
        let (ak, bk, s) = (&a[k], &b[k], &stages[k]);
        let at = ak.transpose();
        let bt = bk.transpose();
        let q_x = &s.l_x + &at * &v_x;
        let q_u = &s.l_u + &bt * &v_x;
        let q_xx = &s.l_xx + &at * &v_xx * ak;
        let mut q_uu = &s.l_uu + &bt * &v_xx * bk;
        let q_ux = &bt * &v_xx * ak;
        for i in 0..q_uu.nrows() {
            q_uu[(i, i)] += reg;
        }
        let q_uu = (&q_uu + q_uu.transpose()) * 0.5;
        let chol = q_uu.clone().cholesky().ok_or(ControlError::Synthesis { step: k })?;
        let kk = -chol.solve(&q_ux);
        let kf = -chol.solve(&q_u);
        if !kk.iter().chain(kf.iter()).all(|v| v.is_finite()) {
            return Err(ControlError::Synthesis { step: k });
        }
        expected += q_u.dot(&kf);
        let kt = kk.transpose();
        v_x = &q_x + &kt * &q_uu * &kf + &kt * &q_u + q_ux.transpose() * &kf;
        let vxx = &q_xx + &kt * &q_uu * &kk + &kt * &q_ux + q_ux.transpose() * &kk;
        v_xx = (&vxx + vxx.transpose()) * 0.5;
        gains[k] = kk;
        ff[k] = kf;
    }
    Ok(SweepResult { gains, feedforward: ff, expected_decrease: expected })
}

/// Quadratic weights for a pure LQR problem `sum x'Qx + u'Ru + x_N'Q_f x_N`.
#[derive(Debug, Clone)]
pub struct LqrWeights {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub q_final: DMatrix<f64>,
}

/// Time-varying LQR gains, `u_k = K_k x_k`.
pub fn lqr_backward_pass(
    models: &[(DMatrix<f64>, DMatrix<f64>)],
    weights: &LqrWeights,
) -> Result<Vec<DMatrix<f64>>, ControlError> {
    let nx = weights.q.nrows();
    let nu = weights.r.nrows();
    let stage = StageExpansion {
        l_x: DVector::zeros(nx),
        l_u: DVector::zeros(nu),
        l_xx: &weights.q * 2.0,
        l_uu: &weights.r * 2.0,
    };
    let (a, b): (Vec<_>, Vec<_>) = models.iter().cloned().unzip();
    let stages = vec![stage; models.len()];
    let r = riccati_sweep(&a, &b, &stages, &DVector::zeros(nx), &(&weights.q_final * 2.0), 0.0)?;
    Ok(r.gains)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn scalar_gain_converges_to_closed_form_dare() {
        let (a, b, q, r) = (1.05f64, 0.3, 2.0, 0.5);
        // Positive root of b^2 P^2 + (r - a^2 r - q b^2) P - q r = 0.
        let qa = b * b;
        let qb = r * (1.0 - a * a) - q * b * b;
        let qc = -q * r;
        let p = (-qb + (qb * qb - 4.0 * qa * qc).sqrt()) / (2.0 * qa);
        let k_inf = -(b * p * a) / (r + b * b * p);
        let models = vec![(scalar(a), scalar(b)); 400];
        let w = LqrWeights { q: scalar(q), r: scalar(r), q_final: scalar(q) };
        let gains = lqr_backward_pass(&models, &w).unwrap();
        assert!((gains[0][(0, 0)] - k_inf).abs() < 1e-10, "{} vs {}", gains[0][(0, 0)], k_inf);
    }

    /// Structure-preserving doubling for the infinite-horizon DARE.
    fn dare_doubling(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> DMatrix<f64> {
        let n = a.nrows();
        let eye = DMatrix::<f64>::identity(n, n);
        let mut ak = a.clone();
        let mut gk = b * r.clone().try_inverse().unwrap() * b.transpose();
        let mut hk = q.clone();
        for _ in 0..60 {
            let w = (&eye + &gk * &hk).try_inverse().unwrap();
            let a_next = &ak * &w * &ak;
            let g_next = &gk + &ak * &w * &gk * ak.transpose();
            let h_next = &hk + ak.transpose() * &hk * &w * &ak;
            ak = a_next;
            gk = g_next;
            hk = h_next;
        }
        hk
    }

    #[test]
    fn double_integrator_matches_doubling_solution() {
        let dt = 0.01;
        let a = DMatrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.5 * dt * dt, dt]);
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![10.0, 1.0]));
        let r = scalar(0.1);
        let p = dare_doubling(&a, &b, &q, &r);
        let k_inf = -(&r + b.transpose() * &p * &b).try_inverse().unwrap() * b.transpose() * &p * &a;
        let models = vec![(a, b); 5000];
        let gains = lqr_backward_pass(&models, &LqrWeights { q: q.clone(), r, q_final: q }).unwrap();
        let diff = (&gains[0] - &k_inf).amax() / k_inf.amax();
        assert!(diff < 1e-8, "relative gain error {diff}");
    }

    #[test]
    fn indefinite_control_hessian_names_step() {
        let models = vec![(scalar(1.0), scalar(1.0)); 5];
        let w = LqrWeights { q: scalar(0.0), r: scalar(-1.0), q_final: scalar(0.0) };
        match lqr_backward_pass(&models, &w) {
            Err(ControlError::Synthesis { step }) => assert_eq!(step, 4),
            other => panic!("{other:?}"),
        }
    }
}
