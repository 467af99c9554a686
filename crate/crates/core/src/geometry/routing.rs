//! Repeatability of winch payout under effective-diameter variation.
//!
//! Each wrap of cable sits at a slightly different effective diameter. The
//! payout over a fixed shaft rotation therefore varies by
//! `diameter_sensitivity(theta) * delta_d`, a quantity with no dependence on
//! the nominal diameter. In millimeters the spread is the same for every
//! winch; as a fraction of the payout it shrinks as the diameter grows.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::diameter_sensitivity;

#[derive(Debug, Clone, PartialEq)]
pub struct PayoutExperiment {
    pub diameters: Vec<f64>,
    pub rotations: usize,
    pub repeats: usize,
    /// Std of the per-wrap effective diameter, meters.
    pub wrap_jitter_std: f64,
    /// Std of the independent length read-out noise, meters.
    pub readout_noise_std: f64,
    /// Cable thickness added to the bare drum diameter, meters.
    pub cable_thickness: f64,
}

impl Default for PayoutExperiment {
    fn default() -> Self {
        Self {
            diameters: vec![0.0115, 0.0145, 0.0180, 0.0200],
            rotations: 25,
            repeats: 10,
            wrap_jitter_std: 0.00015,
            readout_noise_std: 0.0005,
            cable_thickness: 0.001,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PayoutStats {
    pub diameter: f64,
    pub mean: f64,
    pub std: f64,
    pub std_percent: f64,
}

impl PayoutExperiment {
    /// Runs every diameter with the same per-wrap jitter draws (common random
    /// numbers per repeat); read-out noise is drawn independently.
    pub fn run(&self, seed: u64) -> Vec<PayoutStats> {
        let jitter = Normal::new(0.0, self.wrap_jitter_std.max(0.0)).expect("finite std");
        let readout = Normal::new(0.0, self.readout_noise_std.max(0.0)).expect("finite std");
        let per_wrap = diameter_sensitivity(2.0 * PI);

        let wrap_errors: Vec<Vec<f64>> = (0..self.repeats)
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9).wrapping_add(r as u64));
                (0..self.rotations).map(|_| jitter.sample(&mut rng)).collect()
            })
            .collect();

        self.diameters
            .iter()
            .enumerate()
            .map(|(di, &d)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0xA5A5_0000 + di as u64));
                let effective = d + self.cable_thickness;
                let payouts: Vec<f64> = wrap_errors
                    .iter()
                    .map(|errs| {
                        errs.iter().map(|e| per_wrap * (effective + e)).sum::<f64>() + readout.sample(&mut rng)
                    })
                    .collect();
                let (mean, std) = mean_std(&payouts);
                PayoutStats { diameter: d, mean, std, std_percent: 100.0 * std / mean }
            })
            .collect()
    }
}

/// Sample mean and (n-1) standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// Kendall rank correlation (tau-b) between two equally long sequences.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (mut concordant, mut discordant, mut ties_x, mut ties_y) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let dx = (x[i] - x[j]).signum() * f64::from(u8::from(x[i] != x[j]));
            let dy = (y[i] - y[j]).signum() * f64::from(u8::from(y[i] != y[j]));
            match (dx == 0.0, dy == 0.0) {
                (true, true) => {}
                (true, false) => ties_x += 1.0,
                (false, true) => ties_y += 1.0,
                _ if dx * dy > 0.0 => concordant += 1.0,
                _ => discordant += 1.0,
            }
        }
    }
    let denom = ((concordant + discordant + ties_x) * (concordant + discordant + ties_y)).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        (concordant - discordant) / denom
    }
}
