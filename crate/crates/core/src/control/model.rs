//! Robot-side plant model used for synthesis: the same semi-implicit Euler
//! discretization as the simulator, evaluated on the believed geometry.

use nalgebra::{Matrix2, Matrix4, SMatrix, SVector, Vector4};

use super::ControlError;
use crate::geometry::{cable_geometry, structure_matrix, RobotGeometry, Vec2, WinchModel, CABLES};
use crate::simulator::{Measurement, SimConfig};

pub const NX: usize = 4;
pub const NU: usize = 4;
pub const NZ: usize = 8;

pub type State = Vector4<f64>;
pub type Control = Vector4<f64>;
pub type Obs = SVector<f64, NZ>;
pub type ObsMatrix = SMatrix<f64, NZ, NX>;

pub fn state(position: Vec2, velocity: Vec2) -> State {
    State::new(position.x, position.y, velocity.x, velocity.y)
}

pub fn position_of(x: &State) -> Vec2 {
    Vec2::new(x[0], x[1])
}

pub fn velocity_of(x: &State) -> Vec2 {
    Vec2::new(x[2], x[3])
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    pub geometry: RobotGeometry,
    pub mass: f64,
    pub gravity: f64,
    pub damping: f64,
    pub dt: f64,
}

impl PlantModel {
    /// Model with the simulator's physical constants on `geometry`.
    pub fn from_config(geometry: RobotGeometry, config: &SimConfig) -> Self {
        Self {
            geometry,
            mass: config.platform_mass,
            gravity: config.gravity,
            damping: config.viscous_damping,
            dt: config.timestep,
        }
    }

    pub fn gravity_vector(&self) -> Vec2 {
        Vec2::new(0.0, -self.gravity)
    }

    fn acceleration(&self, x: &State, u: &Control) -> Result<Vec2, ControlError> {
        let p = position_of(x);
        let cables = cable_geometry(&self.geometry, &p)?;
        let w = structure_matrix(&self.geometry, &cables);
        Ok(w * u / self.mass + self.gravity_vector() - velocity_of(x) * (self.damping / self.mass))
    }

    pub fn dynamics(&self, x: &State, u: &Control) -> Result<State, ControlError> {
        let a = self.acceleration(x, u)?;
        let v = velocity_of(x) + a * self.dt;
        let p = position_of(x) + v * self.dt;
        Ok(state(p, v))
    }

    /// Analytic Jacobians of [`Self::dynamics`].
    pub fn linearize(&self, x: &State, u: &Control) -> Result<(Matrix4<f64>, Matrix4<f64>), ControlError> {
        let p = position_of(x);
        let cables = cable_geometry(&self.geometry, &p)?;
        let w = structure_matrix(&self.geometry, &cables);
        let mut da_dp = Matrix2::zeros();
        for (i, c) in cables.iter().enumerate() {
            let d = c.unit_direction;
            let dd_dp = -(Matrix2::identity() - d * d.transpose()) / c.distance;
            da_dp += dd_dp * (self.geometry.ratio(i) * u[i] / self.mass);
        }
        let da_dv = Matrix2::identity() * (-self.damping / self.mass);
        let da_du = w / self.mass;
        let dt = self.dt;

        let dv_dp = da_dp * dt;
        let dv_dv = Matrix2::identity() + da_dv * dt;
        let dv_du = da_du * dt;
        let dp_dp = Matrix2::identity() + dv_dp * dt;
        let dp_dv = dv_dv * dt;
        let dp_du = dv_du * dt;

        let mut a = Matrix4::zeros();
        a.fixed_view_mut::<2, 2>(0, 0).copy_from(&dp_dp);
        a.fixed_view_mut::<2, 2>(0, 2).copy_from(&dp_dv);
        a.fixed_view_mut::<2, 2>(2, 0).copy_from(&dv_dp);
        a.fixed_view_mut::<2, 2>(2, 2).copy_from(&dv_dv);
        let mut b = Matrix4::zeros();
        b.fixed_view_mut::<2, 4>(0, 0).copy_from(&dp_du);
        b.fixed_view_mut::<2, 4>(2, 0).copy_from(&dv_du);
        Ok((a, b))
    }

    /// Measurement map: plain cable distances then their rates.
    pub fn observe(&self, x: &State) -> Result<Obs, ControlError> {
        let cables = cable_geometry(&self.geometry, &position_of(x))?;
        let v = velocity_of(x);
        let mut z = Obs::zeros();
        for (i, c) in cables.iter().enumerate() {
            z[i] = c.distance;
            z[CABLES + i] = -c.unit_direction.dot(&v);
        }
        Ok(z)
    }

    pub fn observe_jacobian(&self, x: &State) -> Result<ObsMatrix, ControlError> {
        let cables = cable_geometry(&self.geometry, &position_of(x))?;
        let v = velocity_of(x);
        let mut h = ObsMatrix::zeros();
        for (i, c) in cables.iter().enumerate() {
            let d = c.unit_direction;
            h[(i, 0)] = -d.x;
            h[(i, 1)] = -d.y;
            let proj = (Matrix2::identity() - d * d.transpose()) * v / c.distance;
            h[(CABLES + i, 0)] = proj.x;
            h[(CABLES + i, 1)] = proj.y;
            h[(CABLES + i, 2)] = -d.x;
            h[(CABLES + i, 3)] = -d.y;
        }
        Ok(h)
    }
}

/// How the robot turns a raw sensor frame into the measurement vector the
/// controller consumes.
#[derive(Debug, Clone, PartialEq)]
pub enum RobotSensor {
    /// Uses the measured cable lengths directly.
    Ideal { routing_ratio: [u8; CABLES] },
    /// Converts winch angles to distances through a calibrated model.
    Calibrated { routing_ratio: [u8; CABLES], winch: WinchModel },
}

impl RobotSensor {
    pub fn measurement(&self, m: &Measurement) -> Obs {
        let mut z = Obs::zeros();
        let ratio = match self {
            RobotSensor::Ideal { routing_ratio } | RobotSensor::Calibrated { routing_ratio, .. } => routing_ratio,
        };
        for i in 0..CABLES {
            let r = f64::from(ratio[i]);
            z[i] = match self {
                RobotSensor::Ideal { .. } => m.cable_lengths[i] / r,
                RobotSensor::Calibrated { winch, .. } => winch.length(i, m.winch_angles[i]),
            };
            z[CABLES + i] = m.cable_velocities[i] / r;
        }
        z
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> PlantModel {
        PlantModel { geometry: RobotGeometry::full_scale(), mass: 12.0, gravity: 9.81, damping: 2.0, dt: 0.001 }
    }

    fn rel_err(a: f64, b: f64, scale: f64) -> f64 {
        (a - b).abs() / scale.max(1e-300)
    }

    #[test]
    fn dynamics_jacobians_match_central_differences() {
        let m = model();
        let x = State::new(2.1, 1.4, 0.2, -0.1);
        let u = Control::new(30.0, 45.0, 60.0, 55.0);
        let (a, b) = m.linearize(&x, &u).unwrap();
        let h = 1e-6;
        for j in 0..4 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let col = (m.dynamics(&xp, &u).unwrap() - m.dynamics(&xm, &u).unwrap()) / (2.0 * h);
            let scale = a.column(j).amax().max(1e-8);
            for i in 0..4 {
                assert!(rel_err(a[(i, j)], col[i], scale) < 1e-6, "A[{i},{j}] {} vs {}", a[(i, j)], col[i]);
            }
            // Dynamics are affine in u, so a large step is exact.
            let hu = 1.0;
            let mut up = u;
            let mut um = u;
            up[j] += hu;
            um[j] -= hu;
            let col = (m.dynamics(&x, &up).unwrap() - m.dynamics(&x, &um).unwrap()) / (2.0 * hu);
            let scale = b.column(j).amax();
            for i in 0..4 {
                assert!(rel_err(b[(i, j)], col[i], scale) < 1e-6, "B[{i},{j}]");
            }
        }
    }

    #[test]
    fn observation_jacobian_matches_central_differences() {
        let m = model();
        let x = State::new(3.3, 2.0, -0.15, 0.25);
        let hm = m.observe_jacobian(&x).unwrap();
        let h = 1e-6;
        for j in 0..4 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let col = (m.observe(&xp).unwrap() - m.observe(&xm).unwrap()) / (2.0 * h);
            let scale = hm.column(j).amax().max(1e-8);
            for i in 0..NZ {
                assert!(rel_err(hm[(i, j)], col[i], scale) < 1e-6, "H[{i},{j}]");
            }
        }
    }

    #[test]
    fn sensors_convert_to_plain_distances() {
        let g = RobotGeometry::full_scale();
        let meas = Measurement {
            timestamp: 0.0,
            winch_angles: [10.0; 4],
            cable_lengths: [1.0, 1.0, 2.0, 2.0],
            cable_velocities: [0.1, 0.1, 0.2, 0.2],
            servo_temperatures: [25.0; 4],
        };
        let z = RobotSensor::Ideal { routing_ratio: g.routing_ratio }.measurement(&meas);
        assert_eq!(&z.as_slice()[..4], &[1.0; 4]);
        assert_eq!(&z.as_slice()[4..], &[0.1; 4]);
        let winch = WinchModel::from_coefficients([[0.5, 0.05, 0.0]; 4]);
        let z = RobotSensor::Calibrated { routing_ratio: g.routing_ratio, winch }.measurement(&meas);
        assert!((z[0] - 1.0).abs() < 1e-15);
    }
}
