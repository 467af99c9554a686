//! Time-indexed gain schedule: synthesis, serialization and the online step.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use super::estimator::{estimator_precompute, ObsGain};
use super::ilqg::{solve_nominal, tracking_gains, CostWeights, IlqgOptions, NominalTrajectory};
use super::model::{position_of, Control, Obs, PlantModel, State};
use super::tension::{gravity_compensation, TensionLimits};
use super::{ControlError, NoiseLevels};
use crate::format::{self, FormatError};
use crate::geometry::Vec2;

const MAGIC: &[u8; 4] = b"MBGS";
const VERSION: u32 = 1;
const STEP_FLOATS: usize = 4 + 4 + 8 + 16 + 16 + 32 + 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleStep {
    pub x_nominal: State,
    pub u_nominal: Control,
    pub z_nominal: Obs,
    pub feedback: Matrix4<f64>,
    pub x_gain: Matrix4<f64>,
    pub z_gain: ObsGain,
    pub offset: Vector4<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainSchedule {
    pub dt: f64,
    pub limits: TensionLimits,
    /// Steps 0..=N; the last one holds the terminal nominal.
    pub steps: Vec<ScheduleStep>,
}

#[derive(Debug, Clone)]
pub struct Synthesis {
    pub schedule: GainSchedule,
    pub nominal: NominalTrajectory,
}

/// Nominal trajectory, feedback gains and estimator gains for `path`.
pub fn synthesize(
    model: &PlantModel,
    path: &[Vec2],
    limits: &TensionLimits,
    weights: &CostWeights,
    options: &IlqgOptions,
    noise: &NoiseLevels,
) -> Result<Synthesis, ControlError> {
    synthesize_segmented(model, path, &[], limits, weights, options, noise)
}

/// As [`synthesize`], but the nominal is optimized separately on each piece
/// of `path` split at `breaks`, which must be points where the path is at
/// rest. Gains and estimator are computed over the joined nominal.
pub fn synthesize_segmented(
    model: &PlantModel,
    path: &[Vec2],
    breaks: &[usize],
    limits: &TensionLimits,
    weights: &CostWeights,
    options: &IlqgOptions,
    noise: &NoiseLevels,
) -> Result<Synthesis, ControlError> {
    let mut cuts: Vec<usize> = breaks.iter().copied().filter(|&b| b > 0 && b + 1 < path.len()).collect();
    cuts.sort_unstable();
    cuts.dedup();
    let mut bounds = vec![0];
    bounds.extend(cuts);
    bounds.push(path.len().saturating_sub(1));
    let mut nominal: Option<NominalTrajectory> = None;
    for w in bounds.windows(2) {
        let piece = solve_nominal(model, &path[w[0]..=w[1]], limits, weights, options)?;
        nominal = Some(match nominal {
            None => piece,
            Some(mut acc) => {
                acc.reference.extend_from_slice(&piece.reference[1..]);
                acc.reference_controls.extend(piece.reference_controls);
                acc.states.extend_from_slice(&piece.states[1..]);
                acc.controls.extend(piece.controls);
                acc.cost += piece.cost;
                acc.iterations += piece.iterations;
                acc.converged &= piece.converged;
                acc.penalty_weight = acc.penalty_weight.max(piece.penalty_weight);
                acc
            }
        });
    }
    let nominal = nominal.ok_or_else(|| ControlError::Infeasible("desired trajectory needs at least two samples".into()))?;
    schedule_from_nominal(model, nominal, limits, weights, options, noise)
}

fn schedule_from_nominal(
    model: &PlantModel,
    nominal: NominalTrajectory,
    limits: &TensionLimits,
    weights: &CostWeights,
    options: &IlqgOptions,
    noise: &NoiseLevels,
) -> Result<Synthesis, ControlError> {
    // Terminal hold so the schedule covers x*_N as well.
    let last = *nominal.states.last().expect("non-empty nominal");
    let band = options.planning_limits(limits);
    let hold = gravity_compensation(&model.geometry, &position_of(&last), model.mass, model.gravity, &band, Vec2::zeros())?;
    let mut held = nominal.clone();
    held.controls.push(hold.tensions);
    held.states.push(model.dynamics(&last, &hold.tensions)?);
    let mut gains = tracking_gains(model, &held, weights)?;
    gains.truncate(held.controls.len());

    let n = held.controls.len();
    let mut closed = Vec::with_capacity(n);
    let mut h = Vec::with_capacity(n);
    let mut zn = Vec::with_capacity(n);
    for k in 0..n {
        let (a, b) = model.linearize(&held.states[k], &held.controls[k])?;
        closed.push(a + b * gains[k]);
        h.push(model.observe_jacobian(&held.states[k])?);
        zn.push(model.observe(&held.states[k])?);
    }
    let est = estimator_precompute(&closed, &h, &zn, &noise.covariances(model.mass, model.dt))?;
    let steps = (0..n)
        .map(|k| ScheduleStep {
            x_nominal: held.states[k],
            u_nominal: held.controls[k],
            z_nominal: zn[k],
            feedback: gains[k],
            x_gain: est[k].x_gain,
            z_gain: est[k].z_gain,
            offset: est[k].offset,
        })
        .collect();
    Ok(Synthesis { schedule: GainSchedule { dt: model.dt, limits: *limits, steps }, nominal })
}

impl GainSchedule {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.dt * self.steps.len().saturating_sub(1) as f64
    }

    pub fn write_binary<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&(self.steps.len() as u64).to_le_bytes())?;
        for v in [self.dt, self.limits.min_n, self.limits.max_n] {
            out.write_all(&v.to_le_bytes())?;
        }
        for d in [4u32, 4, 8] {
            out.write_all(&d.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(STEP_FLOATS * 8);
        for s in &self.steps {
            buf.clear();
            let mut push = |vals: &mut dyn Iterator<Item = f64>| {
                for v in vals {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            };
            push(&mut s.x_nominal.iter().copied());
            push(&mut s.u_nominal.iter().copied());
            push(&mut s.z_nominal.iter().copied());
            push(&mut s.feedback.transpose().iter().copied());
            push(&mut s.x_gain.transpose().iter().copied());
            push(&mut s.z_gain.transpose().iter().copied());
            push(&mut s.offset.iter().copied());
            out.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R, origin: &str) -> Result<Self, FormatError> {
        let err = |m: String| FormatError::Parse { path: origin.to_string(), message: m };
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes).map_err(|source| FormatError::Io { path: origin.to_string(), source })?;
        let mut cur = Cursor { bytes: &bytes, at: 0 };
        if cur.take(4).ok_or_else(|| err("truncated header".into()))? != MAGIC {
            return Err(err("not a gain schedule (bad magic)".into()));
        }
        let version = cur.u32().ok_or_else(|| err("truncated header".into()))?;
        if version != VERSION {
            return Err(FormatError::Schema {
                path: origin.to_string(),
                expected: format!("gain schedule v{VERSION}"),
                found: format!("v{version}"),
            });
        }
        let n = cur.u64().ok_or_else(|| err("truncated header".into()))? as usize;
        let dt = cur.f64().ok_or_else(|| err("truncated header".into()))?;
        let min_n = cur.f64().ok_or_else(|| err("truncated header".into()))?;
        let max_n = cur.f64().ok_or_else(|| err("truncated header".into()))?;
        let dims: Vec<u32> = (0..3).filter_map(|_| cur.u32()).collect();
        if dims != [4, 4, 8] {
            return Err(err(format!("unsupported dimensions {dims:?}")));
        }
        if bytes.len() - cur.at != n * STEP_FLOATS * 8 {
            return Err(err(format!("expected {n} steps, payload has {} bytes", bytes.len() - cur.at)));
        }
        let mut steps = Vec::with_capacity(n);
        for _ in 0..n {
            let v: Vec<f64> = (0..STEP_FLOATS).map(|_| cur.f64().expect("length checked")).collect();
            let mut it = v.into_iter();
            let mut take = |k: usize| -> Vec<f64> { it.by_ref().take(k).collect() };
            steps.push(ScheduleStep {
                x_nominal: Vector4::from_vec(take(4)),
                u_nominal: Vector4::from_vec(take(4)),
                z_nominal: Obs::from_vec(take(8)),
                feedback: Matrix4::from_row_slice(&take(16)),
                x_gain: Matrix4::from_row_slice(&take(16)),
                z_gain: ObsGain::from_row_slice(&take(32)),
                offset: Vector4::from_vec(take(4)),
            });
        }
        Ok(Self { dt, limits: TensionLimits { min_n, max_n }, steps })
    }

    pub fn save(&self, path: &Path) -> Result<(), FormatError> {
        let mut buf = Vec::new();
        self.write_binary(&mut buf).expect("writing to memory");
        format::write_bytes(path, &buf)
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        let file = std::fs::File::open(path)
            .map_err(|source| FormatError::Io { path: path.display().to_string(), source })?;
        Self::read_binary(std::io::BufReader::new(file), &path.display().to_string())
    }

    /// Human-readable dump with matrices in row-major order.
    pub fn save_json(&self, path: &Path) -> Result<(), FormatError> {
        let dump = ScheduleDump {
            dt: self.dt,
            limits: self.limits,
            steps: self
                .steps
                .iter()
                .map(|s| StepDump {
                    x_nominal: s.x_nominal.iter().copied().collect(),
                    u_nominal: s.u_nominal.iter().copied().collect(),
                    z_nominal: s.z_nominal.iter().copied().collect(),
                    feedback: s.feedback.transpose().iter().copied().collect(),
                    x_gain: s.x_gain.transpose().iter().copied().collect(),
                    z_gain: s.z_gain.transpose().iter().copied().collect(),
                    offset: s.offset.iter().copied().collect(),
                })
                .collect(),
        };
        format::write_json(path, &dump)
    }
}

#[derive(Serialize, Deserialize)]
struct ScheduleDump {
    dt: f64,
    limits: TensionLimits,
    steps: Vec<StepDump>,
}

#[derive(Serialize, Deserialize)]
struct StepDump {
    x_nominal: Vec<f64>,
    u_nominal: Vec<f64>,
    z_nominal: Vec<f64>,
    feedback: Vec<f64>,
    x_gain: Vec<f64>,
    z_gain: Vec<f64>,
    offset: Vec<f64>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.at..self.at + n)?;
        self.at += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }

    fn f64(&mut self) -> Option<f64> {
        Some(f64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnlineOutput {
    pub tensions: Control,
    pub clamped: bool,
    /// Estimated deviation from the nominal.
    pub deviation: State,
    pub estimate: State,
}

/// Online side of the schedule: holds the running deviation estimate.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScheduleExecutor {
    deviation: Vector4<f64>,
}

impl ScheduleExecutor {
    pub fn new() -> Self {
        Self::default()
    }

    /// Re-seeds the deviation estimate, e.g. after another mode had control.
    pub fn reset(&mut self, deviation: Vector4<f64>) {
        self.deviation = deviation;
    }

    pub fn deviation(&self) -> Vector4<f64> {
        self.deviation
    }

    /// Estimator update then feedback at step `k`.
    pub fn online_step(&mut self, schedule: &GainSchedule, k: usize, z: &Obs) -> Result<OnlineOutput, ControlError> {
        let s = schedule.steps.get(k).ok_or(ControlError::Index { index: k, len: schedule.len() })?;
        let dx = s.x_gain * self.deviation + s.z_gain * z + s.offset;
        self.deviation = dx;
        let (tensions, clamped) = schedule.limits.clamp(&(s.u_nominal + s.feedback * dx));
        Ok(OnlineOutput { tensions, clamped, deviation: dx, estimate: s.x_nominal + dx })
    }
}
