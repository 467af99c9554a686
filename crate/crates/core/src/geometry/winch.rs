use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{GeometryError, CABLES};

/// Quadratic cable-length model `l(theta) = p0 + p1*theta + p2*theta^2`,
/// one coefficient triple per cable. The output is the plain
/// attachment-to-anchor distance; routing ratios are absorbed into the
/// coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WinchModel {
    /// `p[cable] = [p0 (m), p1 (m/rad), p2 (m/rad^2)]`
    pub p: [[f64; 3]; CABLES],
}

impl WinchModel {
    pub fn from_coefficients(p: [[f64; 3]; CABLES]) -> Self {
        Self { p }
    }

    /// Initial guess: no curvature, slope from the nominal winch radius
    /// divided by the routing ratio, intercept from measured initial
    /// distances at initial angles.
    pub fn initial_guess(
        nominal_diameter: &[f64; CABLES],
        routing_ratio: &[u8; CABLES],
        initial_distance: &[f64; CABLES],
        initial_theta: &[f64; CABLES],
    ) -> Self {
        let p = std::array::from_fn(|i| {
            let p1 = nominal_diameter[i] / 2.0 / f64::from(routing_ratio[i]);
            [initial_distance[i] - p1 * initial_theta[i], p1, 0.0]
        });
        Self { p }
    }

    pub fn length(&self, cable: usize, theta: f64) -> f64 {
        let [p0, p1, p2] = self.p[cable];
        p0 + theta * (p1 + theta * p2)
    }

    /// d l / d theta.
    pub fn slope(&self, cable: usize, theta: f64) -> f64 {
        let [_, p1, p2] = self.p[cable];
        p1 + 2.0 * p2 * theta
    }

    pub fn lengths(&self, theta: &[f64; CABLES]) -> [f64; CABLES] {
        std::array::from_fn(|i| self.length(i, theta[i]))
    }

    /// Inverse on the increasing branch. `None` if no angle of positive slope
    /// produces `length`.
    pub fn angle(&self, cable: usize, length: f64) -> Option<f64> {
        let [p0, p1, p2] = self.p[cable];
        let c = p0 - length;
        if p2.abs() < 1e-300 {
            return (p1 > 0.0).then(|| -c / p1);
        }
        let disc = p1 * p1 - 4.0 * p2 * c;
        if disc < 0.0 {
            return None;
        }
        // Root with slope sqrt(disc) > 0; written to avoid cancellation.
        let sq = disc.sqrt();
        let theta = if p1 >= 0.0 { -2.0 * c / (p1 + sq) } else { (sq - p1) / (2.0 * p2) };
        (self.slope(cable, theta) > 0.0).then_some(theta)
    }

    /// Monotone payout over `[lo, hi]` for every cable.
    pub fn is_monotone_on(&self, lo: &[f64; CABLES], hi: &[f64; CABLES]) -> bool {
        (0..CABLES).all(|i| self.slope(i, lo[i]) > 0.0 && self.slope(i, hi[i]) > 0.0)
    }
}

/// Least-squares quadratic through `(theta, length)` samples.
pub fn fit_quadratic(samples: &[(f64, f64)]) -> Option<[f64; 3]> {
    let mut ata = Matrix3::zeros();
    let mut atb = Vector3::zeros();
    for &(t, l) in samples {
        let row = Vector3::new(1.0, t, t * t);
        ata += row * row.transpose();
        atb += row * l;
    }
    let sol = ata.cholesky()?.solve(&atb);
    Some([sol[0], sol[1], sol[2]])
}

/// Layered winding: within layer `k` the payout rate is
/// `0.5 * (base_diameter + 2 k cable_thickness)` per radian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthWinch {
    pub base_diameter: f64,
    pub cable_thickness: f64,
    pub wraps_per_layer: f64,
    /// Length at `theta = 0`, meters.
    pub zero_offset: f64,
}

impl GroundTruthWinch {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.base_diameter > 0.0) || self.cable_thickness < 0.0 || !(self.wraps_per_layer > 0.0) {
            return Err(GeometryError::Invalid("ground-truth winch parameters out of range".into()));
        }
        Ok(())
    }

    fn layer_span(&self) -> f64 {
        2.0 * PI * self.wraps_per_layer
    }

    fn layer_slope(&self, k: f64) -> f64 {
        0.5 * (self.base_diameter + 2.0 * k * self.cable_thickness)
    }

    /// Payout accumulated over the first `k` complete layers.
    fn layers_payout(&self, k: f64) -> f64 {
        self.layer_span() * (0.5 * self.base_diameter * k + self.cable_thickness * k * (k - 1.0) / 2.0)
    }

    fn layer_of(&self, theta: f64) -> f64 {
        (theta / self.layer_span()).floor().max(0.0)
    }

    pub fn slope(&self, theta: f64) -> f64 {
        self.layer_slope(self.layer_of(theta))
    }

    pub fn length(&self, theta: f64) -> f64 {
        // Negative angles extend the innermost layer linearly.
        let k = self.layer_of(theta);
        self.zero_offset + self.layers_payout(k) + self.layer_slope(k) * (theta - k * self.layer_span())
    }

    pub fn angle(&self, length: f64) -> f64 {
        let payout = length - self.zero_offset;
        if payout <= 0.0 {
            return payout / self.layer_slope(0.0);
        }
        // Find the layer containing the payout; start from the uniform-radius
        // estimate and walk to the correct layer.
        let span = self.layer_span();
        let mut k = (payout / (span * self.layer_slope(0.0))).floor().max(0.0);
        while k > 0.0 && self.layers_payout(k) > payout {
            k -= 1.0;
        }
        while self.layers_payout(k + 1.0) <= payout {
            k += 1.0;
        }
        k * span + (payout - self.layers_payout(k)) / self.layer_slope(k)
    }
}

/// Sensitivity of cable length to winch diameter at shaft angle `theta`:
/// `d/dd (theta * d / 2) = theta / 2`, independent of the diameter itself.
pub fn diameter_sensitivity(theta: f64) -> f64 {
    theta / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn model(p: [f64; 3]) -> WinchModel {
        WinchModel::from_coefficients([p; CABLES])
    }

    #[test]
    fn intercept_at_zero() {
        let m = model([0.7, 0.01, 1e-5]);
        assert_eq!(m.length(0, 0.0), 0.7);
    }

    #[test]
    fn linear_payout_is_n_pi_d() {
        let d = 0.0115;
        let m = model([0.0, d / 2.0, 0.0]);
        let l = m.length(0, 25.0 * 2.0 * PI);
        assert!((l - 25.0 * PI * d).abs() < 1e-12);
        assert!((l - 0.90321).abs() < 1e-5);
        assert!((m.slope(0, 3.0) - d / 2.0).abs() < 1e-15);
    }

    #[test]
    fn inverse_of_quadratic() {
        let m = model([0.3, 0.006, 2e-6]);
        for l in [0.3, 0.8, 2.5] {
            let t = m.angle(0, l).unwrap();
            assert!((m.length(0, t) - l).abs() < 1e-12);
        }
        assert!(model([0.0, -1.0, 0.0]).angle(0, 1.0).is_none());
    }

    #[test]
    fn sensitivity_is_half_theta() {
        assert!((diameter_sensitivity(2.0 * PI) - PI).abs() < 1e-15);
        let s = diameter_sensitivity(25.0 * 2.0 * PI);
        assert!((s - 25.0 * PI).abs() < 1e-12);
        // 0.01 mm of diameter error over 25 rotations
        assert!((s * 1e-5 - 0.785e-3).abs() < 1e-6);
    }

    fn gt() -> GroundTruthWinch {
        GroundTruthWinch { base_diameter: 0.0115, cable_thickness: 0.0008, wraps_per_layer: 10.0, zero_offset: 0.25 }
    }

    #[test]
    fn layered_slope_steps_by_thickness() {
        let w = gt();
        let span = 2.0 * PI * w.wraps_per_layer;
        for k in 0..5 {
            let inside = (k as f64 + 0.5) * span;
            let next = (k as f64 + 1.5) * span;
            assert!((w.slope(inside) - 0.5 * (w.base_diameter + 2.0 * k as f64 * w.cable_thickness)).abs() < 1e-15);
            assert!((w.slope(next) - w.slope(inside) - w.cable_thickness).abs() < 1e-15);
        }
    }

    #[test]
    fn layered_length_is_continuous() {
        let w = gt();
        let span = 2.0 * PI * w.wraps_per_layer;
        for k in 1..6 {
            let b = k as f64 * span;
            assert!((w.length(b - 1e-9) - w.length(b + 1e-9)).abs() < 1e-9);
        }
    }

    /// Thickness chosen so 25 rotations from zero pay out the measured
    /// 1.0220 m of the 11.5 mm winch; the quadratic fit reproduces it.
    #[test]
    fn fitted_quadratic_reproduces_measured_payout() {
        let wraps = 10.0;
        // Rotations spent in layers 0, 1, 2 are 10, 10, 5, so the thickness
        // term of the payout is t * pi * (0*10 + 2*10 + 4*5).
        let base = 25.0 * PI * 0.0115;
        let t = (1.0220 - base) / (PI * 40.0);
        let w = GroundTruthWinch { base_diameter: 0.0115, cable_thickness: t, wraps_per_layer: wraps, zero_offset: 0.0 };
        let end = 25.0 * 2.0 * PI;
        assert!((w.length(end) - 1.0220).abs() < 1e-12);

        let samples: Vec<_> = (0..=500).map(|i| end * i as f64 / 500.0).map(|th| (th, w.length(th))).collect();
        let p = fit_quadratic(&samples).unwrap();
        let m = model(p);
        let payout = m.length(0, end) - m.length(0, 0.0);
        assert!((payout - 1.0220).abs() / 1.0220 < 0.01, "fit payout {payout}");
        let rms = (samples.iter().map(|(th, l)| (m.length(0, *th) - l).powi(2)).sum::<f64>() / samples.len() as f64).sqrt();
        assert!(rms < 0.01 * 1.0220);
    }

    #[test]
    fn quadratic_fit_within_one_percent_over_25_rotations() {
        let w = gt();
        let end = 25.0 * 2.0 * PI;
        let samples: Vec<_> = (0..=400).map(|i| end * i as f64 / 400.0).map(|th| (th, w.length(th))).collect();
        let m = model(fit_quadratic(&samples).unwrap());
        let total = w.length(end) - w.length(0.0);
        let worst = samples.iter().map(|(th, l)| (m.length(0, *th) - l).abs()).fold(0.0, f64::max);
        assert!(worst < 0.01 * total);
    }

    proptest! {
        #[test]
        fn ground_truth_inverse_round_trip(theta in -20.0f64..2000.0) {
            let w = gt();
            prop_assert!((w.angle(w.length(theta)) - theta).abs() * w.slope(theta) < 1e-9);
        }

        #[test]
        fn quadratic_monotone_when_slope_positive(a in 0.0f64..300.0, b in 0.0f64..300.0) {
            let m = model([0.1, 0.005, 3e-6]);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(m.length(0, lo) <= m.length(0, hi));
        }

        #[test]
        fn sensitivity_ignores_diameter(theta in 0.0f64..1e4, d1 in 1e-3f64..0.05, d2 in 1e-3f64..0.05) {
            // Finite-difference derivative of theta*d/2 in d at two diameters.
            let h = 1e-7;
            let deriv = |d: f64| ((theta * (d + h) / 2.0) - (theta * (d - h) / 2.0)) / (2.0 * h);
            prop_assert!((deriv(d1) - diameter_sensitivity(theta)).abs() < 1e-6 * (1.0 + theta));
            prop_assert!((deriv(d1) - deriv(d2)).abs() < 1e-6 * (1.0 + theta));
        }
    }
}
