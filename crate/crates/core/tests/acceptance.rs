//! Acceptance criteria 1-9. Each test prints one `criterion N: PASS|FAIL`
//! line with its measurements, then asserts.

use std::f64::consts::PI;
use std::io::Write;
use std::time::{Duration, Instant};

use muralbot::artwork::{
    compile_program, retime, ArtworkDocument, CompileOptions, PaintProgram, PaletteEntry, RetimeLimits, Segment, Shape,
    ShapeKind, Trajectory,
};
use muralbot::calibration::ablation::{capture_grid, capture_pairs, run_ablation, AblationConfig, QuasiStaticRobot};
use muralbot::calibration::{
    apply_homography, build_piecewise_map, drag_excitation, generate_grid_excitation, record_dataset, solve_proprioceptive,
    Provenance, Rect, SolverOptions, DRAG_RATE_HZ,
};
use muralbot::control::{
    estimator_precompute, gravity_compensation, position_of, safety_monitor, state, synthesize, CostWeights, IlqgOptions,
    NoiseLevels, Obs, ObsMatrix, PlantModel, RobotSensor, SafetyLevel, SafetyThresholds, ScheduleExecutor, TensionLimits,
};
use muralbot::coordination::{
    run_mission, AbortReason, EventKind, MissionConfig, MissionOutcome, PauseReason, RobotBelief, SessionState,
};
use muralbot::evaluation::{coverage_agreement, rasterize_design};
use muralbot::geometry::routing::{kendall_tau, mean_std, PayoutExperiment};
use muralbot::geometry::{cable_distances, PlatformState, RobotGeometry, Vec2, WinchModel};
use muralbot::simulator::{CanvasRaster, Fault, FaultKind, Rgb, Scenario, SimConfig, Simulator};
use nalgebra::{Matrix4, SMatrix, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const TABLE1_TAU_MAX: f64 = 0.5;
const TABLE1_RERUNS: u64 = 20;
const TABLE1_RUNTIME: Duration = Duration::from_secs(10);

const ABLATION_IMPROVEMENT_MIN: f64 = 10.0;
const ABLATION_RUNTIME: Duration = Duration::from_secs(300);

const ESTIMATOR_SEEDS: u64 = 100;
const ESTIMATOR_HORIZON: usize = 500;
const ESTIMATOR_TOL: f64 = 1e-9;
const ESTIMATOR_RUNTIME: Duration = Duration::from_secs(30);

const TRACKING_LENGTH_M: f64 = 2.0;
const TRACKING_NOISE_M: f64 = 1e-3;
const TRACKING_RMS_MAX: f64 = 5e-3;
const TRACKING_RUNTIME: Duration = Duration::from_secs(120);

const SOFT_M: f64 = 0.10;
const HARD_M: f64 = 0.20;
const THERMAL_PAUSE_C: f64 = 65.0;

const SETTLE_BEFORE_ENGAGE_S: f64 = 1.0;
const SETTLE_AFTER_ENGAGE_S: f64 = 2.0;
const DIP_DISTANCE_M: f64 = 0.5;

const RETIME_ARTWORKS: u64 = 100;
const RETIME_SLACK: f64 = 1e-9;

const CORNER_TOL: f64 = 1e-12;
const EDGE_TOL: f64 = 1e-9;
const EDGE_POINTS: usize = 1000;

const MURAL_SECTION: [f64; 2] = [2.9, 1.85];
const MURAL_COVERAGE_MIN: f64 = 0.95;
const MURAL_RUNTIME: Duration = Duration::from_secs(600);

/// Written to the stderr handle directly so the line survives output capture.
fn verdict(n: u32, pass: bool, detail: &str) {
    let line = format!("criterion {n}: {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Rect {
    Rect::new(Vec2::new(x0, y0), Vec2::new(x1, y1))
}

// ---------------------------------------------------------------- 1

#[test]
fn criterion_1_winch_diameter_sensitivity() {
    let t = Instant::now();
    let exp = PayoutExperiment::default();
    let (mut xs, mut std_mm) = (Vec::new(), Vec::new());
    let mut pct = vec![0.0; exp.diameters.len()];
    let mut mm = vec![0.0; exp.diameters.len()];
    for seed in 0..TABLE1_RERUNS {
        for (i, s) in exp.run(seed).iter().enumerate() {
            xs.push(s.diameter);
            std_mm.push(s.std * 1e3);
            pct[i] += s.std_percent / TABLE1_RERUNS as f64;
            mm[i] += s.std * 1e3 / TABLE1_RERUNS as f64;
        }
    }
    let tau = kendall_tau(&xs, &std_mm);
    let pct_decreasing = pct.windows(2).all(|w| w[1] < w[0]);
    // Independent prediction: 25 wraps each paying out pi * (d + e) with
    // e ~ N(0, jitter), plus read-out noise.
    let predicted_mm = ((exp.rotations as f64).sqrt() * PI * exp.wrap_jitter_std).hypot(exp.readout_noise_std) * 1e3;
    let (mean_mm, _) = mean_std(&mm);
    // Mean of sample stds over 10 repeats is biased low by about 3%.
    let near_prediction = (mean_mm / predicted_mm - 1.0).abs() < 0.15;
    let elapsed = t.elapsed();
    let pass = tau.abs() < TABLE1_TAU_MAX && pct_decreasing && near_prediction && elapsed < TABLE1_RUNTIME;
    verdict(
        1,
        pass,
        &format!("tau {tau:.3}, std mm {mm:.3?} (predicted {predicted_mm:.3}), std % {pct:.4?}, {elapsed:.2?}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 2

#[test]
fn criterion_2_calibration_ablation() {
    let t = Instant::now();
    let nominal = RobotGeometry::test_scale().with_diameters([0.030; 4]);
    let mut lines = Vec::new();
    let mut pass = true;
    for seed in 0..3 {
        let r = run_ablation(&nominal, &SimConfig::default(), &AblationConfig::test_scale(seed)).unwrap();
        let ok = r.ordering_holds() && r.improvement() >= ABLATION_IMPROVEMENT_MIN;
        pass &= ok;
        lines.push(format!(
            "seed {seed}: proprio {:.2} joint {:.2} single {:.2} piecewise {:.2} mm, {:.1}x, ordering {}",
            r.proprio_ate_m * 1e3,
            r.joint_ate_m * 1e3,
            r.single_ate_m * 1e3,
            r.piecewise_ate_m * 1e3,
            r.improvement(),
            r.ordering_holds()
        ));
    }
    let elapsed = t.elapsed();
    pass &= elapsed < ABLATION_RUNTIME;
    verdict(2, pass, &format!("[{}] {elapsed:.1?}", lines.join("; ")));
    assert!(pass);
}

// ---------------------------------------------------------------- 3

/// Textbook predict/update filter on the deviation state.
struct ReferenceKalman {
    x: Vector4<f64>,
    p: Matrix4<f64>,
}

type Cov8 = SMatrix<f64, 8, 8>;

impl ReferenceKalman {
    fn step(&mut self, a: Option<&Matrix4<f64>>, q: &Matrix4<f64>, h: &ObsMatrix, r: &Cov8, innovation_base: &Obs) {
        let (x_prior, p_prior) = match a {
            Some(a) => (a * self.x, a * self.p * a.transpose() + q),
            None => (self.x, self.p),
        };
        let s = h * p_prior * h.transpose() + r;
        let k = p_prior * h.transpose() * s.try_inverse().expect("innovation covariance invertible");
        self.x = x_prior + k * (innovation_base - h * x_prior);
        self.p = (Matrix4::identity() - k * h) * p_prior;
    }
}

#[test]
fn criterion_3_affine_estimator_equivalence() {
    let t = Instant::now();
    let geom = RobotGeometry::test_scale();
    let model = PlantModel::from_config(geom.clone(), &SimConfig::default());
    let band = TensionLimits::default();
    let mut worst = 0.0f64;
    for seed in 0..ESTIMATOR_SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let noise = NoiseLevels {
            force_std_n: rng.gen_range(1.0..40.0),
            length_std_m: rng.gen_range(2e-4..5e-3),
            rate_std_m_s: rng.gen_range(1e-3..5e-2),
            initial_position_std_m: rng.gen_range(1e-3..5e-2),
            initial_velocity_std_m_s: rng.gen_range(1e-3..5e-2),
        };
        let cov = noise.covariances(model.mass, model.dt);
        // A slow random walk over the workspace with a random feedback gain.
        let mut p = Vec2::new(rng.gen_range(0.8..2.2), rng.gen_range(0.6..1.8));
        let v = Vec2::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2));
        let k_fb = Matrix4::from_fn(|_, _| rng.gen_range(-50.0..50.0));
        let (mut closed, mut hs, mut zs) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..ESTIMATOR_HORIZON {
            let x = state(p, v);
            let u = gravity_compensation(&geom, &p, model.mass, model.gravity, &band, Vec2::zeros()).unwrap().tensions;
            let (a, b) = model.linearize(&x, &u).unwrap();
            closed.push(a + b * k_fb);
            hs.push(model.observe_jacobian(&x).unwrap());
            zs.push(model.observe(&x).unwrap());
            p += v * model.dt;
        }
        let affine = estimator_precompute(&closed, &hs, &zs, &cov).unwrap();

        let meas = Normal::new(0.0, 1.0).unwrap();
        let mut truth = Vector4::zeros();
        let mut dx = Vector4::zeros();
        let mut reference = ReferenceKalman { x: Vector4::zeros(), p: cov.initial };
        for k in 0..ESTIMATOR_HORIZON {
            if k > 0 {
                truth = closed[k - 1] * truth + Vector4::from_fn(|i, _| cov.process[(i, i)].sqrt() * meas.sample(&mut rng));
            }
            let z = zs[k] + hs[k] * truth + Obs::from_fn(|i, _| cov.measurement[(i, i)].sqrt() * meas.sample(&mut rng));
            let s = &affine[k];
            dx = s.x_gain * dx + s.z_gain * z + s.offset;
            reference.step((k > 0).then(|| &closed[k - 1]), &cov.process, &hs[k], &cov.measurement, &(z - zs[k]));
            worst = worst.max((dx - reference.x).norm());
        }
    }
    let elapsed = t.elapsed();
    let pass = worst <= ESTIMATOR_TOL && elapsed < ESTIMATOR_RUNTIME;
    verdict(3, pass, &format!("max state discrepancy {worst:.3e} over {ESTIMATOR_SEEDS} seeds x {ESTIMATOR_HORIZON} steps, {elapsed:.2?}"));
    assert!(pass);
}

// ---------------------------------------------------------------- 4

/// Serpentine of total length `TRACKING_LENGTH_M` with random placement,
/// row count and row spacing, redrawn until every corner can be held
/// statically inside the planning tension band.
fn random_serpentine(rng: &mut ChaCha8Rng, model: &PlantModel) -> Vec<Vec2> {
    let band = IlqgOptions::default().planning_limits(&TensionLimits::default());
    loop {
        let pts = serpentine_candidate(rng);
        let holdable = pts.iter().all(|p| {
            gravity_compensation(&model.geometry, p, model.mass, model.gravity, &band, Vec2::zeros()).is_ok_and(|g| g.feasible)
        });
        if holdable {
            return pts;
        }
    }
}

fn serpentine_candidate(rng: &mut ChaCha8Rng) -> Vec<Vec2> {
    let rows = rng.gen_range(2..=5usize);
    let spacing = rng.gen_range(0.05..0.15);
    let width = (TRACKING_LENGTH_M - (rows - 1) as f64 * spacing) / rows as f64;
    let x0 = rng.gen_range(0.5..(2.5 - width).max(0.51));
    let y0 = rng.gen_range(0.5..(1.9 - (rows - 1) as f64 * spacing));
    let mut pts = Vec::new();
    for j in 0..rows {
        let y = y0 + j as f64 * spacing;
        let (a, b) = (Vec2::new(x0, y), Vec2::new(x0 + width, y));
        if j % 2 == 0 {
            pts.extend([a, b]);
        } else {
            pts.extend([b, a]);
        }
    }
    pts
}

#[test]
fn criterion_4_closed_loop_tracking() {
    let t = Instant::now();
    let geom = RobotGeometry::test_scale();
    let config = SimConfig { length_noise_std: TRACKING_NOISE_M, velocity_noise_std: 0.01, ..SimConfig::default() };
    let model = PlantModel::from_config(geom.clone(), &config);
    let noise = NoiseLevels { length_std_m: TRACKING_NOISE_M, rate_std_m_s: 0.01, ..NoiseLevels::default() };
    let sensor = RobotSensor::Ideal { routing_ratio: geom.routing_ratio };
    let thresholds = SafetyThresholds::default();
    let mut lines = Vec::new();
    let mut pass = true;
    for case in 0..4u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(40 + case);
        let corners = random_serpentine(&mut rng, &model);
        let traj = retime(&corners, &RetimeLimits { dt: model.dt, ..RetimeLimits::default() }).unwrap();
        let path = traj.samples;
        let syn = synthesize(&model, &path, &TensionLimits::default(), &CostWeights::default(), &IlqgOptions::default(), &noise)
            .unwrap();
        let schedule = syn.schedule;
        let mut sim = Simulator::new(geom.clone(), config.clone(), PlatformState::at_rest(path[0]), rng.clone()).unwrap();
        let mut ex = ScheduleExecutor::new();
        let (mut sq, mut soft) = (0.0, false);
        for (k, target) in path.iter().enumerate() {
            let z = sensor.measurement(&sim.measure().unwrap());
            let out = ex.online_step(&schedule, k, &z).unwrap();
            let nominal = position_of(&schedule.steps[k].x_nominal);
            soft |= safety_monitor(&geom, &position_of(&out.estimate), &nominal, &thresholds) != SafetyLevel::Ok;
            let u = out.tensions;
            sim.step(&[u[0], u[1], u[2], u[3]], false).unwrap();
            sq += (sim.state.position - target).norm_squared();
        }
        let rms = (sq / path.len() as f64).sqrt();
        let ok = rms < TRACKING_RMS_MAX && !soft;
        pass &= ok;
        lines.push(format!("case {case}: {} steps, rms {:.2} mm, soft {soft}", path.len(), rms * 1e3));
    }
    let elapsed = t.elapsed();
    pass &= elapsed < TRACKING_RUNTIME;
    verdict(4, pass, &format!("[{}] {elapsed:.1?}", lines.join("; ")));
    assert!(pass);
}

// ---------------------------------------------------------------- 5

fn line(from: Vec2, to: Vec2, n: usize) -> Trajectory {
    Trajectory { dt: 0.001, samples: (0..=n).map(|k| from + (to - from) * (k as f64 / n as f64)).collect() }
}

fn two_stroke_program(color: &str, y: f64) -> PaintProgram {
    let parts = [
        (true, line(Vec2::new(1.0, y), Vec2::new(1.3, y), 3000)),
        (false, line(Vec2::new(1.3, y), Vec2::new(1.3, y + 0.1), 1000)),
        (true, line(Vec2::new(1.3, y + 0.1), Vec2::new(1.0, y + 0.1), 3000)),
    ];
    let mut t = 0.0;
    let segments = parts
        .into_iter()
        .map(|(engaged, trajectory)| {
            let s = Segment { engaged, t_start: t, trajectory };
            t = s.t_end();
            s
        })
        .collect();
    PaintProgram { color: color.into(), segments, centerline_fallbacks: 0 }
}

fn ideal_belief(geom: &RobotGeometry, cfg: &SimConfig) -> RobotBelief {
    RobotBelief {
        plant: PlantModel::from_config(geom.clone(), cfg),
        sensor: RobotSensor::Ideal { routing_ratio: geom.routing_ratio },
        map: None,
    }
}

fn test_scale_mission(programs: &[PaintProgram], faults: &[Fault], cfg: &MissionConfig, colors: &[(String, Rgb)]) -> MissionOutcome {
    let geom = RobotGeometry::test_scale();
    let sim_cfg = SimConfig::default();
    let sim = Simulator::new(geom.clone(), sim_cfg.clone(), PlatformState::at_rest(geom.center()), ChaCha8Rng::seed_from_u64(2)).unwrap();
    let canvas = CanvasRaster::new(3.0, 2.4, 100.0, 0.03, colors);
    run_mission(&ideal_belief(&geom, &sim_cfg), sim, programs, canvas, faults, cfg).unwrap()
}

fn red() -> Vec<(String, Rgb)> {
    vec![("red".into(), Rgb(255, 0, 0))]
}

#[test]
fn criterion_5_safety_thresholds() {
    let cfg = MissionConfig::default();
    let mut lines = Vec::new();
    let mut pass = true;
    for force in [60.0, 95.0, 140.0, 200.0] {
        let push = Fault { start_s: 12.0, duration_s: 0.5, kind: FaultKind::Push { force_n: [force, 0.0] } };
        let out = test_scale_mission(&[two_stroke_program("red", 0.9)], &[push], &cfg, &red());
        let levels_follow = out.ticks.iter().all(|t| {
            let expect = if t.deviation >= HARD_M {
                SafetyLevel::Hard
            } else if t.deviation >= SOFT_M {
                SafetyLevel::Soft
            } else {
                SafetyLevel::Ok
            };
            t.safety == expect
        });
        let peak = out.ticks.iter().map(|t| t.deviation).fold(0.0, f64::max);
        let held = out.log.transitions().any(|(_, _, to)| *to == SessionState::Paused(PauseReason::Hold));
        let hard = out.aborted == Some(AbortReason::HardLimit);
        let outcome_matches = if peak >= HARD_M {
            hard
        } else if peak >= SOFT_M {
            held && !hard && out.programs_completed == 1
        } else {
            !held && !hard && out.programs_completed == 1
        };
        let mut descent_ok = true;
        if hard {
            let descended = out.log.events.iter().any(|e| e.kind == EventKind::GravityDescent);
            let monotone = out.descent.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-12);
            let dropped = out.descent.first().map_or(0.0, |d| d.1) - out.descent.last().map_or(0.0, |d| d.1);
            descent_ok = descended && monotone && out.descent.len() > 100 && dropped > 0.0;
        }
        let ok = levels_follow && outcome_matches && descent_ok;
        pass &= ok;
        lines.push(format!(
            "{force:.0} N: peak {:.3} m, hold {held}, hard {hard}, levels {levels_follow}, descent {descent_ok}",
            peak
        ));
    }

    let heat = Fault { start_s: 12.0, duration_s: 0.0, kind: FaultKind::ServoHeat { temperature_c: THERMAL_PAUSE_C + 1.0 } };
    let out = test_scale_mission(&[two_stroke_program("red", 0.9)], &[heat], &cfg, &red());
    let thermal_pauses = out.log.transitions().filter(|(_, _, to)| **to == SessionState::Paused(PauseReason::Thermal)).count();
    let paused_hot = out.ticks.windows(2).any(|w| w[0].max_servo_c >= THERMAL_PAUSE_C && w[1].state == "paused");
    let thermal_ok = thermal_pauses == 1 && paused_hot && out.aborted.is_none() && out.programs_completed == 1;
    pass &= thermal_ok;
    lines.push(format!("thermal: {thermal_pauses} pause, completed {}, {:.0} s simulated", out.programs_completed, out.duration_s));
    verdict(5, pass, &format!("[{}]", lines.join("; ")));
    assert!(pass);
}

// ---------------------------------------------------------------- 6

fn poly(color: &str, pts: &[[f64; 2]]) -> Shape {
    Shape { kind: ShapeKind::Polygon, color: color.into(), points: pts.to_vec() }
}

fn polyline(color: &str, pts: &[[f64; 2]]) -> Shape {
    Shape { kind: ShapeKind::Polyline, color: color.into(), points: pts.to_vec() }
}

fn palette() -> Vec<PaletteEntry> {
    vec![
        PaletteEntry { name: "red".into(), rgb: "#d02020".into() },
        PaletteEntry { name: "blue".into(), rgb: "#2040c0".into() },
    ]
}

fn paint_options() -> CompileOptions {
    CompileOptions { stepover: 0.025, angle: 0.0, limits: RetimeLimits { dt: 0.001, ..RetimeLimits::default() } }
}

#[test]
fn criterion_6_coordination_properties() {
    let mut doc = ArtworkDocument::new(3.0, 2.4, palette());
    doc.shapes = vec![
        poly("red", &[[1.0, 0.8], [1.25, 0.8], [1.25, 0.95], [1.0, 0.95]]),
        polyline("red", &[[1.6, 0.8], [2.0, 0.8], [2.0, 1.0]]),
        poly("blue", &[[1.7, 1.3], [1.95, 1.3], [1.82, 1.5]]),
        polyline("blue", &[[1.0, 1.5], [1.3, 1.5]]),
    ];
    let programs = compile_program(&doc, &paint_options()).unwrap();
    assert_eq!(programs.len(), 2);
    let cfg = MissionConfig { color_swap_s: 5.0, ..MissionConfig::default() };
    let out = test_scale_mission(&programs, &[], &cfg, &doc.colors().unwrap());
    let events = &out.log.events;

    // (a) settle pauses before every deposition start.
    let mut settle_ok = true;
    let mut starts = 0;
    let mut min_before = f64::INFINITY;
    let mut min_after = f64::INFINITY;
    for (i, e) in events.iter().enumerate() {
        if !matches!(&e.kind, EventKind::Transition { to: SessionState::Painting, .. }) {
            continue;
        }
        starts += 1;
        let before = &events[..i];
        let engaged = before.iter().rev().find(|e| e.kind == EventKind::Stabilizer { engaged: true });
        let arrived = before.iter().rev().find(|e| matches!(&e.kind, EventKind::Transition { to: SessionState::StartPainting, .. }));
        let (Some(engaged), Some(arrived)) = (engaged, arrived) else {
            settle_ok = false;
            continue;
        };
        let arm_in = before.iter().find(|b| {
            b.t >= arrived.t && matches!(b.kind, EventKind::ArmMove { to: muralbot::coordination::ArmMode::Painting, .. })
        });
        let Some(arm_in) = arm_in else {
            settle_ok = false;
            continue;
        };
        min_before = min_before.min(arm_in.t - arrived.t);
        min_after = min_after.min(e.t - engaged.t);
        settle_ok &= arm_in.t - arrived.t >= SETTLE_BEFORE_ENGAGE_S - 1e-9 && e.t - engaged.t >= SETTLE_AFTER_ENGAGE_S - 1e-9;
    }
    let deposits = out.ticks.iter().filter(|t| t.deposited_m > 0.0).count();
    settle_ok &= starts > 0 && deposits > 0;

    // (b) paint between dips, accumulated from the deposit record. A new
    // colour starts with a fresh load.
    let max_stroke = programs
        .iter()
        .flat_map(|p| p.segments.iter().filter(|s| s.engaged).map(|s| s.trajectory.arc_length()))
        .fold(0.0, f64::max);
    let mut resets: Vec<f64> = events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::Dip { .. } | EventKind::ProgramStart { .. }))
        .map(|e| e.t)
        .collect();
    resets.push(f64::INFINITY);
    let (mut since, mut worst_between, mut r) = (0.0f64, 0.0f64, 0);
    for tick in &out.ticks {
        while tick.t > resets[r] + 1e-9 {
            worst_between = worst_between.max(since);
            since = 0.0;
            r += 1;
        }
        since += tick.deposited_m;
    }
    worst_between = worst_between.max(since);
    let dips = events.iter().filter(|e| matches!(e.kind, EventKind::Dip { .. })).count();
    let dip_ok = worst_between <= DIP_DISTANCE_M + max_stroke + 1e-6 && dips > 0;

    // (c) exactly one Idle between the two colours.
    let start_t: Vec<f64> = events.iter().filter(|e| matches!(e.kind, EventKind::ProgramStart { .. })).map(|e| e.t).collect();
    let idles_between = out
        .log
        .transitions()
        .filter(|(t, _, to)| **to == SessionState::Idle && *t > start_t[0] && *t <= start_t[1])
        .count();
    let idle_ok = start_t.len() == 2 && idles_between == 1;

    // (d) a tick's deposit is laid with the state of the previous tick.
    let stabilized_ok = out.ticks.windows(2).all(|w| w[1].deposited_m == 0.0 || (w[0].stabilizer && w[0].state == "painting"))
        && out.ticks.first().map_or(true, |t| t.deposited_m == 0.0);

    let pass = settle_ok && dip_ok && idle_ok && stabilized_ok && out.aborted.is_none() && out.programs_completed == 2;
    verdict(
        6,
        pass,
        &format!(
            "(a) {starts} starts, min settle {min_before:.3}/{min_after:.3} s; (b) {dips} dips, max between {worst_between:.3} m vs limit {:.3}; \
             (c) {idles_between} idle; (d) {stabilized_ok}",
            DIP_DISTANCE_M + max_stroke
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 7

fn random_artwork(rng: &mut ChaCha8Rng) -> ArtworkDocument {
    let mut doc = ArtworkDocument::new(3.0, 2.4, palette());
    for _ in 0..rng.gen_range(1..=4) {
        let color = if rng.gen_bool(0.5) { "red" } else { "blue" };
        let c = Vec2::new(rng.gen_range(0.5..2.5), rng.gen_range(0.5..1.9));
        let n = rng.gen_range(3..=8usize);
        if rng.gen_bool(0.6) {
            // Star-shaped around c: every angular gap stays below a half turn.
            let angles: Vec<f64> =
                (0..n).map(|i| (i as f64 + rng.gen_range(0.0..0.4)) * std::f64::consts::TAU / n as f64).collect();
            let pts: Vec<[f64; 2]> = angles
                .iter()
                .map(|a| {
                    let r = rng.gen_range(0.05..0.3);
                    [c.x + r * a.cos(), c.y + r * a.sin()]
                })
                .collect();
            doc.shapes.push(poly(color, &pts));
        } else {
            let mut p = c;
            let mut pts = vec![[p.x, p.y]];
            for _ in 1..n {
                p += Vec2::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3));
                p = Vec2::new(p.x.clamp(0.3, 2.7), p.y.clamp(0.3, 2.1));
                pts.push([p.x, p.y]);
            }
            doc.shapes.push(polyline(color, &pts));
        }
    }
    doc
}

/// Rest-to-rest straight-line duration, from the kinematics of a
/// symmetric accelerate/cruise/decelerate profile.
fn straight_duration_oracle(length: f64, v: f64, a: f64) -> f64 {
    let accel_dist = v * v / (2.0 * a);
    if 2.0 * accel_dist <= length {
        2.0 * v / a + (length - 2.0 * accel_dist) / v
    } else {
        let v_peak = (a * length).sqrt();
        2.0 * v_peak / a
    }
}

#[test]
fn criterion_7_retiming_feasibility() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut trajectories, mut worst_v, mut worst_a) = (0usize, 0.0f64, 0.0f64);
    let mut feasible = true;
    for _ in 0..RETIME_ARTWORKS {
        let doc = random_artwork(&mut rng);
        let limits = RetimeLimits {
            v_max: rng.gen_range(0.05..0.5),
            a_max: rng.gen_range(0.1..2.0),
            dt: [0.001, 0.002, 0.005][rng.gen_range(0..3)],
            ..RetimeLimits::default()
        };
        let opts = CompileOptions { stepover: rng.gen_range(0.02..0.1), angle: rng.gen_range(0.0..PI), limits };
        for program in compile_program(&doc, &opts).unwrap() {
            for seg in &program.segments {
                trajectories += 1;
                let v = seg.trajectory.velocities().iter().map(|v| v.norm()).fold(0.0, f64::max);
                let a = seg.trajectory.accelerations().iter().map(|a| a.norm()).fold(0.0, f64::max);
                worst_v = worst_v.max(v - limits.v_max);
                worst_a = worst_a.max(a - limits.a_max);
                feasible &= v <= limits.v_max + RETIME_SLACK && a <= limits.a_max + RETIME_SLACK;
            }
        }
    }

    let mut worst_duration_steps = 0.0f64;
    for _ in 0..200 {
        let length = 10f64.powf(rng.gen_range(-3.0..0.5));
        let dir = rng.gen_range(0.0..std::f64::consts::TAU);
        let p0 = Vec2::new(rng.gen_range(0.5..1.5), rng.gen_range(0.5..1.5));
        let limits = RetimeLimits {
            v_max: rng.gen_range(0.05..0.5),
            a_max: rng.gen_range(0.1..2.0),
            dt: 0.001,
            ..RetimeLimits::default()
        };
        let traj = retime(&[p0, p0 + Vec2::new(dir.cos(), dir.sin()) * length], &limits).unwrap();
        let expected = straight_duration_oracle(length, limits.v_max, limits.a_max);
        worst_duration_steps = worst_duration_steps.max((traj.duration() - expected).abs() / limits.dt);
    }
    let durations_ok = worst_duration_steps <= 1.0;
    let pass = feasible && durations_ok;
    verdict(
        7,
        pass,
        &format!(
            "{trajectories} trajectories, worst excess v {worst_v:.2e} a {worst_a:.2e}; straight-segment duration error {worst_duration_steps:.3} dt"
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 8

#[test]
fn criterion_8_homography_exactness_and_continuity() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let grid = capture_grid(&rect(0.5, 0.4, 2.5, 2.0), 3, 3);
    let (mut corner_err, mut edge_err) = (0.0f64, 0.0f64);
    let maps = 10;
    for _ in 0..maps {
        let pairs: Vec<(Vec2, Vec2)> = grid
            .iter()
            .map(|g| (*g, g + Vec2::new(rng.gen_range(-0.02..0.02), rng.gen_range(-0.02..0.02))))
            .collect();
        let map = build_piecewise_map(&pairs).unwrap();
        assert_eq!(map.sections.len(), 4);
        for s in &map.sections {
            let h = s.matrix();
            for (t, m) in &pairs {
                if s.rect.contains(t, 0.0) && [s.rect.min[0], s.rect.max[0]].contains(&t.x) && [s.rect.min[1], s.rect.max[1]].contains(&t.y) {
                    corner_err = corner_err.max((apply_homography(&h, t) - m).norm());
                }
            }
        }
        // Shared edges: every pair of sections touching along a segment.
        let mut edges = Vec::new();
        for a in &map.sections {
            for b in &map.sections {
                if a.col + 1 == b.col && a.row == b.row {
                    let x = a.rect.max[0];
                    edges.push((a, b, Vec2::new(x, a.rect.min[1]), Vec2::new(x, a.rect.max[1])));
                }
                if a.row + 1 == b.row && a.col == b.col {
                    let y = a.rect.max[1];
                    edges.push((a, b, Vec2::new(a.rect.min[0], y), Vec2::new(a.rect.max[0], y)));
                }
            }
        }
        for k in 0..EDGE_POINTS / maps {
            let (a, b, p0, p1) = edges[k % edges.len()];
            let p = p0 + (p1 - p0) * rng.gen_range(0.0..1.0);
            edge_err = edge_err.max((apply_homography(&a.matrix(), &p) - apply_homography(&b.matrix(), &p)).norm());
        }
    }
    let pass = corner_err <= CORNER_TOL && edge_err <= EDGE_TOL;
    verdict(8, pass, &format!("corner error {corner_err:.2e} m, shared-edge disagreement {edge_err:.2e} m over {EDGE_POINTS} points"));
    assert!(pass);
}

// ---------------------------------------------------------------- 9

#[test]
fn criterion_9_end_to_end_mural_fidelity() {
    let t = Instant::now();
    let scenario = Scenario { length_noise_std_m: 2e-4, anchor_error_range_m: [0.005, 0.02], ..Scenario::default() };
    let config = scenario.sim_config();
    let nominal = RobotGeometry::full_scale().with_diameters([scenario.winch.base_diameter_m; 4]);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let truth = scenario.truth_geometry(&nominal, &mut rng);

    // Section centred on the frame.
    let c = nominal.center();
    let (w, h) = (MURAL_SECTION[0], MURAL_SECTION[1]);
    let (x0, y0) = (c.x - w / 2.0, c.y - h / 2.0);
    let at = |u: f64, v: f64| [x0 + u * w, y0 + v * h];

    // Calibration: drag stage 1, grid stage 2, then operator captures over
    // the region the platform visits while painting the section.
    let dt = 1.0 / DRAG_RATE_HZ;
    let region = rect(x0 - 0.1, y0 - 0.05, x0 + w + 0.1, y0 + h + 0.2);
    let drag = drag_excitation(&region, 180.0, DRAG_RATE_HZ, 9);
    let stage1 = record_dataset(&truth, &config, &drag, dt, Provenance::ManualStage1, &mut rng).unwrap();
    let d0 = cable_distances(&truth, &drag[0]).unwrap();
    let init = WinchModel::initial_guess(&nominal.winch_nominal_diameter, &nominal.routing_ratio, &d0, &stage1.samples[0].theta);
    let s1 = solve_proprioceptive(&stage1, &nominal, &init, &SolverOptions::default()).unwrap();
    let limits = RetimeLimits { dt: 0.01, ..RetimeLimits::default() };
    let grid = generate_grid_excitation(&nominal, &region, 0.35, &limits).unwrap();
    let stride = (dt / limits.dt).round() as usize;
    let pts: Vec<Vec2> = grid.trajectory.samples.iter().step_by(stride).copied().collect();
    let stage2 = record_dataset(&truth, &config, &pts, dt, Provenance::GridStage2, &mut rng).unwrap();
    let s2 = solve_proprioceptive(&stage2, &nominal, &s1.winch, &SolverOptions::default()).unwrap();
    let qs = QuasiStaticRobot { truth: truth.clone(), winches: config.ground_truth_winches, nominal: nominal.clone(), belief: s2.winch.clone() };
    let pairs = capture_pairs(&qs, &capture_grid(&region, 3, 3), 3e-4, &mut rng).unwrap();
    let worst_capture = pairs.iter().map(|(t, e)| (t - e).norm()).fold(0.0, f64::max);
    let map = build_piecewise_map(&pairs).unwrap();

    let mut doc = ArtworkDocument::new(nominal.frame_width, nominal.frame_height, palette());
    doc.shapes = vec![
        poly("red", &[at(0.03, 0.05), at(0.22, 0.05), at(0.22, 0.22), at(0.03, 0.22)]),
        poly("red", &[at(0.03, 0.75), at(0.16, 0.75), at(0.16, 0.95), at(0.03, 0.95)]),
        poly("red", &[at(0.45, 0.4), at(0.55, 0.4), at(0.6, 0.52), at(0.5, 0.62), at(0.4, 0.52)]),
        poly("blue", &[at(0.8, 0.05), at(0.97, 0.05), at(0.97, 0.2), at(0.8, 0.2)]),
        poly("blue", &[at(0.78, 0.7), at(0.97, 0.7), at(0.875, 0.95)]),
    ];
    let programs = compile_program(&doc, &paint_options()).unwrap();
    let robot = RobotBelief {
        plant: PlantModel::from_config(nominal.clone(), &config),
        sensor: RobotSensor::Calibrated { routing_ratio: nominal.routing_ratio, winch: s2.winch },
        map: Some(map),
    };
    let sim = Simulator::new(truth, config, PlatformState::at_rest(c), ChaCha8Rng::seed_from_u64(90)).unwrap();
    let colors = doc.colors().unwrap();
    let canvas = CanvasRaster::new(doc.width_m, doc.height_m, 100.0, 0.03, &colors);
    let cfg = MissionConfig { color_swap_s: 5.0, ..MissionConfig::default() };
    let out = run_mission(&robot, sim, &programs, canvas, &[], &cfg).unwrap();

    let design = rasterize_design(&doc, 100.0, 0.03);
    let agreement = coverage_agreement(&design, &out.canvas, 0.5).unwrap();
    let worst = agreement.iter().map(|a| a.agreement).fold(1.0, f64::min);
    let elapsed = t.elapsed();
    let pass = out.aborted.is_none() && out.programs_completed == programs.len() && worst >= MURAL_COVERAGE_MIN && elapsed < MURAL_RUNTIME;
    let per_color: Vec<String> =
        agreement.iter().map(|a| format!("{} {:.3} (spill {:.3})", a.color, a.agreement, a.spill)).collect();
    verdict(
        9,
        pass,
        &format!(
            "{w} x {h} m section, injected error up to {:.1} mm at the captures, agreement [{}], {:.0} s simulated in {elapsed:.1?}",
            worst_capture * 1e3,
            per_color.join(", "),
            out.duration_s
        ),
    );
    assert!(pass);
}
