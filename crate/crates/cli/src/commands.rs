use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use muralbot::artwork::{compile_program, read_programs_csv, write_programs_csv, ArtworkDocument, PaintProgram, RetimeLimits};
use muralbot::calibration::ablation::{capture_pairs, run_ablation, AblationConfig, QuasiStaticRobot};
use muralbot::calibration::{
    build_piecewise_map, build_single_map, drag_excitation, evaluate_model, generate_grid_excitation, record_dataset,
    solve_joint, solve_proprioceptive, CalibrationDataset, CalibrationError, CalibrationResult, CaptureSet, CapturedPoint,
    HomographyMap, Provenance, SolverOptions, DRAG_RATE_HZ,
};
use muralbot::console::{serve_tcp, ConsoleConfig, ConsoleServer, TcpOptions};
use muralbot::control::{GainSchedule, PlantModel, RobotSensor};
use muralbot::coordination::{program_schedule, Mission, MissionError, RobotBelief, TracePoint};
use muralbot::evaluation::{coverage_agreement, rasterize_design, tracking_error};
use muralbot::format::{self, FormatError};
use muralbot::geometry::{cable_distances, PlatformState, RobotGeometry, Vec2, WinchModel, CABLES};
use muralbot::simulator::{CanvasRaster, Scenario, SimConfig, Simulator};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::manifest::{artifact, RunManifest};
use crate::Failure;

type Result<T> = std::result::Result<T, Failure>;

const TAPE_SCHEMA: &str = "muralbot.tape/1";
const GAINS_SCHEMA: &str = "muralbot.gains/1";
const PATH_SCHEMA: &str = "muralbot.path/1";

// Independent random stream per purpose.
const RNG_TRUTH: u64 = 1;
const RNG_STAGE1: u64 = 2;
const RNG_STAGE2: u64 = 3;
const RNG_CAPTURE: u64 = 4;
const RNG_PLANT: u64 = 5;

fn calib_failure(e: CalibrationError) -> Failure {
    match e {
        CalibrationError::Underdetermined { .. }
        | CalibrationError::Diverged { .. }
        | CalibrationError::NonMonotonePayout { .. }
        | CalibrationError::Degenerate(_) => Failure::Numerical(e.into()),
        _ => Failure::Precondition(e.into()),
    }
}

fn mission_failure(e: MissionError) -> Failure {
    match e {
        MissionError::Control(_) | MissionError::Simulation(_) => Failure::Numerical(e.into()),
        MissionError::Calibration(c) => calib_failure(c),
        _ => Failure::Precondition(e.into()),
    }
}

fn require(path: &Path, what: &str, remedy: &str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path.to_path_buf())
    } else {
        Err(Failure::Precondition(anyhow!("{what} `{}` not found; {remedy}", path.display())))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    format::write_bytes(path, text.as_bytes())?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Tape {
    schema: String,
    /// Tape-measured cable distances at the first stage-1 sample.
    lengths_m: [f64; CABLES],
}

/// As-built robot and plant for this manifest.
struct Plant {
    nominal: RobotGeometry,
    truth: RobotGeometry,
    scenario: Scenario,
    config: SimConfig,
}

fn plant(m: &RunManifest) -> Result<Plant> {
    let scenario = m.scenario()?;
    let nominal = m.nominal_geometry(&scenario)?;
    let config = scenario.sim_config();
    let truth = scenario.truth_geometry(&nominal, &mut m.rng(RNG_TRUTH));
    Ok(Plant { nominal, truth, scenario, config })
}

pub fn sim(m: &RunManifest, captures: bool) -> Result<()> {
    let p = plant(m)?;
    if captures {
        return synthetic_captures(m, &p);
    }
    let plan = &m.calibration;
    let dt = 1.0 / DRAG_RATE_HZ;
    let sim_err = |e: muralbot::simulator::SimError| Failure::Numerical(e.into());

    let drag = drag_excitation(&plan.drag_region, plan.drag_duration_s, DRAG_RATE_HZ, m.seed);
    let stage1 = record_dataset(&p.truth, &p.config, &drag, dt, Provenance::ManualStage1, &mut m.rng(RNG_STAGE1))
        .map_err(sim_err)?;
    let tape = Tape {
        schema: TAPE_SCHEMA.into(),
        lengths_m: cable_distances(&p.truth, &drag[0]).map_err(|e| Failure::Precondition(e.into()))?,
    };

    let limits = RetimeLimits { dt: 0.01, ..RetimeLimits::default() };
    let grid = generate_grid_excitation(&p.nominal, &plan.stage2_region, plan.stage2_spacing_m, &limits).map_err(calib_failure)?;
    let stride = (dt / limits.dt).round() as usize;
    let pts: Vec<Vec2> = grid.trajectory.samples.iter().step_by(stride).copied().collect();
    let mut rng = m.rng(RNG_STAGE2);
    let stage2 = record_dataset(&p.truth, &p.config, &pts, dt, Provenance::GridStage2, &mut rng).map_err(sim_err)?;

    // Operator-labelled samples at the capture grid, appended to stage 2.
    let labels = plan.grid();
    let at_grid = record_dataset(&p.truth, &p.config, &labels, dt, Provenance::GridStage2, &mut rng).map_err(sim_err)?;
    let mut joint = stage2.clone();
    let t_end = joint.samples.last().map_or(0.0, |s| s.t);
    for (k, (mut s, g)) in at_grid.samples.into_iter().zip(&labels).enumerate() {
        s.t = t_end + (k + 1) as f64 * dt;
        s.label = Some(*g);
        joint.samples.push(s);
    }

    p.truth.save(&m.out(artifact::TRUTH_GEOMETRY))?;
    format::write_json(&m.out(artifact::TAPE), &tape)?;
    stage1.save(&m.out(artifact::STAGE1_DATA))?;
    stage2.save(&m.out(artifact::STAGE2_DATA))?;
    joint.save(&m.out(artifact::JOINT_DATA))?;
    println!(
        "seed {}: stage 1 {} samples, stage 2 {} samples, {} labelled; written to {}",
        m.seed,
        stage1.len(),
        stage2.len(),
        labels.len(),
        m.out("").display()
    );
    Ok(())
}

fn synthetic_captures(m: &RunManifest, p: &Plant) -> Result<()> {
    let path = require(
        &m.out(artifact::WINCH_STAGE2),
        "synthetic captures need the stage-2 winch model",
        "run `muralbot calibrate 2` first",
    )?;
    let belief = CalibrationResult::load(&path)?.winch;
    let robot = QuasiStaticRobot {
        truth: p.truth.clone(),
        winches: p.config.ground_truth_winches,
        nominal: p.nominal.clone(),
        belief,
    };
    let grid = m.calibration.grid();
    let pairs = capture_pairs(&robot, &grid, m.calibration.capture_noise_std_m, &mut m.rng(RNG_CAPTURE)).map_err(calib_failure)?;
    let set = CaptureSet {
        points: pairs
            .iter()
            .enumerate()
            .map(|(i, (t, e))| CapturedPoint { grid: Some(i), true_position: *t, estimate: *e })
            .collect(),
    };
    set.save(&m.out(artifact::CAPTURES))?;
    let worst = pairs.iter().map(|(t, e)| (t - e).norm()).fold(0.0, f64::max);
    println!("{} synthetic captures, largest offset {:.1} mm", set.points.len(), worst * 1e3);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Stage {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    Joint,
    Extero,
}

fn stage1_model(m: &RunManifest, stage: &str) -> Result<WinchModel> {
    let path = require(
        &m.out(artifact::WINCH_STAGE1),
        &format!("{stage} requires the stage-1 winch model"),
        "run `muralbot calibrate 1` first",
    )?;
    Ok(CalibrationResult::load(&path)?.winch)
}

fn dataset(m: &RunManifest, given: Option<&Path>, default: &str) -> Result<CalibrationDataset> {
    let path = match given {
        Some(p) => require(p, "dataset", "check the --data path")?,
        None => require(&m.out(default), "dataset", "run `muralbot sim` first or pass --data")?,
    };
    Ok(CalibrationDataset::load(&path)?)
}

pub fn calibrate(m: &RunManifest, stage: Stage, data: Option<&Path>, captures: Option<&Path>, single: bool) -> Result<()> {
    let nominal = m.nominal_geometry(&m.scenario()?)?;
    let options = SolverOptions::default();
    let (result, data, out) = match stage {
        Stage::One => {
            let data = dataset(m, data, artifact::STAGE1_DATA)?;
            let tape_path = require(&m.out(artifact::TAPE), "stage 1 needs tape-measured start lengths", "run `muralbot sim` first")?;
            let tape: Tape = format::read_json(&tape_path)?;
            format::check_schema(&tape_path, &tape.schema, TAPE_SCHEMA)?;
            let first = data.samples.first().ok_or_else(|| calib_failure(CalibrationError::TooFewSamples { found: 0, needed: 1 }))?;
            let init = WinchModel::initial_guess(&nominal.winch_nominal_diameter, &nominal.routing_ratio, &tape.lengths_m, &first.theta);
            (solve_proprioceptive(&data, &nominal, &init, &options).map_err(calib_failure)?, data, artifact::WINCH_STAGE1)
        }
        Stage::Two => {
            let init = stage1_model(m, "stage 2")?;
            let data = dataset(m, data, artifact::STAGE2_DATA)?;
            (solve_proprioceptive(&data, &nominal, &init, &options).map_err(calib_failure)?, data, artifact::WINCH_STAGE2)
        }
        Stage::Joint => {
            let init = stage1_model(m, "joint calibration")?;
            let data = dataset(m, data, artifact::JOINT_DATA)?;
            let w = &m.calibration.joint_weights;
            (solve_joint(&data, &nominal, &init, w, &options).map_err(calib_failure)?, data, artifact::WINCH_JOINT)
        }
        Stage::Extero => return extero(m, captures, single),
    };
    let (residuals, _) = evaluate_model(&data, &nominal, &result.winch).map_err(calib_failure)?;
    let summary = result.summary(&residuals);
    result.save(&m.out(out))?;
    write_text(&m.out(&artifact::report(out)), &summary)?;
    println!("{out}: residual rms {:.3} mm after {} iterations", result.residual_rms * 1e3, result.report.iterations);
    Ok(())
}

fn extero(m: &RunManifest, captures: Option<&Path>, single: bool) -> Result<()> {
    let path = match captures {
        Some(p) => require(p, "captured point file", "check the --captures path")?,
        None => require(
            &m.out(artifact::CAPTURES),
            "exteroceptive calibration requires a captured point file",
            "record one with `muralbot serve` or `muralbot sim --captures`",
        )?,
    };
    let set = CaptureSet::load(&path)?;
    let pairs = set.pairs();
    let map = if single { build_single_map(&pairs) } else { build_piecewise_map(&pairs) }.map_err(calib_failure)?;
    let mut report = format!("captures: {}\nsections: {}\n", pairs.len(), map.sections.len());
    let mut worst: f64 = 0.0;
    for (t, e) in &pairs {
        let r = (map.apply(t).map_err(calib_failure)? - e).norm();
        worst = worst.max(r);
    }
    report.push_str(&format!("largest capture residual: {worst:.3e} m\n"));
    for (i, s) in map.sections.iter().enumerate() {
        report.push_str(&format!(
            "section {i}: [{:.3}, {:.3}] x [{:.3}, {:.3}]\n",
            s.rect.min[0], s.rect.max[0], s.rect.min[1], s.rect.max[1]
        ));
    }
    map.save(&m.out(artifact::HOMOGRAPHY))?;
    write_text(&m.out(&artifact::report(artifact::HOMOGRAPHY)), &report)?;
    println!("{}: {} sections from {} captures", artifact::HOMOGRAPHY, map.sections.len(), pairs.len());
    Ok(())
}

/// Which winch model the robot converts encoder angles with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum WinchChoice {
    /// Stage-2 proprioceptive model.
    Stage2,
    Joint,
    Stage1,
    /// Measured cable lengths directly, no calibration.
    Ideal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GainsIndex {
    schema: String,
    winch: WinchChoice,
    map: bool,
    files: Vec<String>,
}

fn belief(m: &RunManifest, nominal: &RobotGeometry, config: &SimConfig, winch: WinchChoice, map: bool) -> Result<RobotBelief> {
    let sensor = match winch {
        WinchChoice::Ideal => RobotSensor::Ideal { routing_ratio: nominal.routing_ratio },
        w => {
            let (name, remedy) = match w {
                WinchChoice::Stage1 => (artifact::WINCH_STAGE1, "run `muralbot calibrate 1`"),
                WinchChoice::Joint => (artifact::WINCH_JOINT, "run `muralbot calibrate joint`"),
                _ => (artifact::WINCH_STAGE2, "run `muralbot calibrate 2`"),
            };
            let path = require(&m.out(name), "calibrated winch model", &format!("{remedy} or pass --winch ideal"))?;
            RobotSensor::Calibrated { routing_ratio: nominal.routing_ratio, winch: CalibrationResult::load(&path)?.winch }
        }
    };
    let map = if map {
        let path = require(
            &m.out(artifact::HOMOGRAPHY),
            "task-space map",
            "run `muralbot calibrate extero` or pass --no-map",
        )?;
        Some(HomographyMap::load(&path)?)
    } else {
        None
    };
    Ok(RobotBelief { plant: PlantModel::from_config(nominal.clone(), config), sensor, map })
}

fn artwork(m: &RunManifest) -> Result<ArtworkDocument> {
    let path = m.artwork.as_ref().ok_or_else(|| Failure::Precondition(anyhow!("the manifest names no artwork")))?;
    let path = require(&m.resolve(path), "artwork", "check the manifest's `artwork` path")?;
    ArtworkDocument::load(&path).map_err(|e| Failure::Precondition(e.into()))
}

pub fn gains(m: &RunManifest, winch: WinchChoice, map: Option<bool>) -> Result<()> {
    let p = plant(m)?;
    let map = map.unwrap_or_else(|| m.out(artifact::HOMOGRAPHY).exists());
    let robot = belief(m, &p.nominal, &p.config, winch, map)?;
    let doc = artwork(m)?;
    let programs = compile_program(&doc, &m.paint.compile_options(p.config.timestep)).map_err(|e| Failure::Precondition(e.into()))?;
    write_programs_csv(&m.out(artifact::PROGRAMS), &programs)?;
    // Reload so the schedules match exactly what paint will read.
    let programs = read_programs_csv(&m.out(artifact::PROGRAMS))?;
    let mut files = Vec::new();
    for (i, prog) in programs.iter().enumerate() {
        let schedule = program_schedule(&robot, prog, &m.mission).map_err(mission_failure)?;
        let name = artifact::gains(i);
        schedule.save(&m.out(&name))?;
        println!("program {i} ({}): {} steps, {:.1} s", prog.color, schedule.len(), schedule.duration());
        files.push(name);
    }
    let index = GainsIndex { schema: GAINS_SCHEMA.into(), winch, map, files };
    format::write_json(&m.out(artifact::GAINS_INDEX), &index)?;
    Ok(())
}

struct Loaded {
    programs: Vec<PaintProgram>,
    schedules: Vec<GainSchedule>,
    index: GainsIndex,
}

fn load_gains(m: &RunManifest) -> Result<Loaded> {
    let path = require(&m.out(artifact::GAINS_INDEX), "gain schedules", "run `muralbot gains` first")?;
    let index: GainsIndex = format::read_json(&path)?;
    format::check_schema(&path, &index.schema, GAINS_SCHEMA)?;
    let programs = read_programs_csv(&require(&m.out(artifact::PROGRAMS), "paint programs", "run `muralbot gains` first")?)?;
    if programs.len() != index.files.len() {
        return Err(Failure::Precondition(anyhow!(
            "{} programs but {} gain schedules; rerun `muralbot gains`",
            programs.len(),
            index.files.len()
        )));
    }
    let schedules = index
        .files
        .iter()
        .map(|f| Ok(GainSchedule::load(&require(&m.out(f), "gain schedule", "rerun `muralbot gains`")?)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(Loaded { programs, schedules, index })
}

fn canvas(m: &RunManifest, doc: &ArtworkDocument) -> Result<CanvasRaster> {
    let colors = doc.colors().map_err(|e| Failure::Precondition(e.into()))?;
    Ok(CanvasRaster::new(doc.width_m, doc.height_m, m.paint.raster_px_per_m, m.paint.brush_width_m, &colors))
}

fn mission(m: &RunManifest, p: &Plant, loaded: Option<Loaded>, robot: RobotBelief, canvas: CanvasRaster) -> Result<Mission<ChaCha8Rng>> {
    let start = PlatformState::at_rest(p.nominal.center());
    let sim = Simulator::new(p.truth.clone(), p.config.clone(), start, m.rng(RNG_PLANT)).map_err(|e| Failure::Precondition(e.into()))?;
    let (programs, schedules) = match loaded {
        Some(l) => (l.programs, Some(l.schedules)),
        None => (Vec::new(), None),
    };
    Mission::with_schedules(robot, sim, &programs, schedules, canvas, p.scenario.faults.clone(), m.mission.clone())
        .map_err(mission_failure)
}

#[derive(Debug, Serialize)]
struct PaintSummary {
    seed: u64,
    programs: usize,
    programs_completed: usize,
    aborted: Option<String>,
    duration_s: f64,
    tracking_ate_m: Option<f64>,
    tracking_max_m: Option<f64>,
}

pub fn paint(m: &RunManifest) -> Result<()> {
    let p = plant(m)?;
    let doc = artwork(m)?;
    let loaded = load_gains(m)?;
    let robot = belief(m, &p.nominal, &p.config, loaded.index.winch, loaded.index.map)?;
    let n = loaded.programs.len();
    let mut mission = mission(m, &p, Some(loaded), robot, canvas(m, &doc)?)?;
    if !mission.start() {
        return Err(Failure::Precondition(anyhow!("the artwork compiled to no programs")));
    }
    while mission.busy() {
        mission.step().map_err(mission_failure)?;
        if mission.time() > m.mission.max_duration_s {
            return Err(mission_failure(MissionError::Timeout(m.mission.max_duration_s)));
        }
    }
    let (out, _) = mission.finish();
    out.canvas.save_png(&m.out(artifact::CANVAS))?;
    out.save_trace(&m.out(artifact::TRACE))?;
    out.log.save(&m.out(artifact::EVENTS))?;
    let (meas, refs): (Vec<Vec2>, Vec<Vec2>) = out
        .trace
        .iter()
        .map(|t| (Vec2::new(t.measured[0], t.measured[1]), Vec2::new(t.reference[0], t.reference[1])))
        .unzip();
    let metrics = tracking_error(&meas, &refs).ok();
    let summary = PaintSummary {
        seed: m.seed,
        programs: n,
        programs_completed: out.programs_completed,
        aborted: out.aborted.as_ref().map(|a| format!("{a:?}")),
        duration_s: out.duration_s,
        tracking_ate_m: metrics.map(|t| t.ate),
        tracking_max_m: metrics.map(|t| t.max),
    };
    format::write_json(&m.out(artifact::SUMMARY), &summary)?;
    if let Some(reason) = &summary.aborted {
        return Err(Failure::Aborted(format!(
            "session aborted ({reason}) after {:.1} s; {} of {n} programs completed",
            out.duration_s, out.programs_completed
        )));
    }
    println!(
        "painted {n} programs in {:.1} s simulated; ATE {:.2} mm",
        out.duration_s,
        summary.tracking_ate_m.unwrap_or(0.0) * 1e3
    );
    Ok(())
}

pub struct EvalArgs<'a> {
    pub trace: Option<&'a Path>,
    pub measured: Option<&'a Path>,
    pub reference: Option<&'a Path>,
    pub design: Option<&'a Path>,
    pub canvas: Option<&'a Path>,
    pub threshold: f32,
    pub ablation: bool,
    pub report: Option<&'a Path>,
}

fn read_path(path: &Path) -> Result<Vec<(f64, Vec2)>> {
    let rows = format::read_csv_rows(&require(path, "path file", "check the path")?, PATH_SCHEMA)?;
    rows.into_iter()
        .enumerate()
        .map(|(n, r)| match r[..] {
            [t, x, y] => Ok((t, Vec2::new(x, y))),
            _ => Err(FormatError::parse(path, format!("row {}: expected t,x,y", n + 1)).into()),
        })
        .collect()
}

pub fn eval(m: &RunManifest, a: &EvalArgs) -> Result<()> {
    let mut report = serde_json::Map::new();
    let (measured, reference) = match (a.trace, a.measured, a.reference) {
        (Some(t), None, None) => {
            let trace = TracePoint::load_csv(&require(t, "trace", "run `muralbot paint` first")?)?;
            let v = |p: [f64; 2]| Vec2::new(p[0], p[1]);
            (trace.iter().map(|p| v(p.measured)).collect(), trace.iter().map(|p| v(p.reference)).collect())
        }
        (None, Some(ms), Some(rs)) => {
            let (ms, rs) = (read_path(ms)?, read_path(rs)?);
            if ms.len() == rs.len() {
                if let Some((k, _)) = ms.iter().zip(&rs).enumerate().find(|(_, (x, y))| (x.0 - y.0).abs() > 1e-9) {
                    return Err(Failure::Precondition(anyhow!("traces are not time-aligned at sample {k}")));
                }
            }
            (ms.into_iter().map(|p| p.1).collect(), rs.into_iter().map(|p| p.1).collect())
        }
        (None, None, None) => (Vec::new(), Vec::new()),
        _ => return Err(Failure::Precondition(anyhow!("pass either --trace or both --measured and --reference"))),
    };
    if !measured.is_empty() || !reference.is_empty() {
        let t = tracking_error(&measured, &reference).map_err(|e| Failure::Precondition(e.into()))?;
        println!("ATE {:.3} mm, max {:.3} mm over {} samples", t.ate * 1e3, t.max * 1e3, t.samples);
        report.insert("tracking".into(), serde_json::to_value(t).expect("serializable"));
    }
    match (a.design, a.canvas) {
        (Some(d), Some(c)) => {
            let doc = ArtworkDocument::load(&require(d, "design", "check the --design path")?).map_err(|e| Failure::Precondition(e.into()))?;
            let colors = doc.colors().map_err(|e| Failure::Precondition(e.into()))?;
            let (res, brush) = (m.paint.raster_px_per_m, m.paint.brush_width_m);
            let painted = CanvasRaster::load_png(&require(c, "painted canvas", "run `muralbot paint` first")?, res, brush, &colors)?;
            let design = rasterize_design(&doc, res, brush);
            let scores = coverage_agreement(&design, &painted, a.threshold).map_err(|e| Failure::Precondition(e.into()))?;
            for s in &scores {
                println!("{}: agreement {:.3}, spill {:.3}", s.color, s.agreement, s.spill);
            }
            report.insert("coverage".into(), serde_json::to_value(scores).expect("serializable"));
        }
        (None, None) => {}
        _ => return Err(Failure::Precondition(anyhow!("--design and --canvas go together"))),
    }
    if a.ablation {
        let scenario = m.scenario()?;
        let nominal = m.nominal_geometry(&scenario)?;
        let config = scenario.sim_config();
        let r = run_ablation(&nominal, &config, &AblationConfig::test_scale(m.seed)).map_err(calib_failure)?;
        println!(
            "ATE proprioceptive {:.2} mm, joint {:.2} mm, single {:.2} mm, piecewise {:.2} mm; ordering {}",
            r.proprio_ate_m * 1e3,
            r.joint_ate_m * 1e3,
            r.single_ate_m * 1e3,
            r.piecewise_ate_m * 1e3,
            if r.ordering_holds() { "holds" } else { "violated" }
        );
        report.insert("ablation".into(), serde_json::to_value(&r).expect("serializable"));
    }
    if report.is_empty() {
        return Err(Failure::Precondition(anyhow!("nothing to evaluate; see `muralbot eval --help`")));
    }
    if let Some(path) = a.report {
        format::write_json(path, &report)?;
    }
    Ok(())
}

pub struct ServeArgs {
    pub addr: String,
    pub speed: f64,
    pub max_sim_s: Option<f64>,
    pub winch: Option<WinchChoice>,
}

pub fn serve(m: &RunManifest, a: &ServeArgs) -> Result<()> {
    let p = plant(m)?;
    let loaded = if m.out(artifact::GAINS_INDEX).exists() { Some(load_gains(m)?) } else { None };
    let (winch, map) = match &loaded {
        Some(l) => (l.index.winch, l.index.map),
        None => {
            let w = a.winch.unwrap_or(if m.out(artifact::WINCH_STAGE2).exists() { WinchChoice::Stage2 } else { WinchChoice::Ideal });
            (w, false)
        }
    };
    let robot = belief(m, &p.nominal, &p.config, winch, map)?;
    let canvas = match &m.artwork {
        Some(_) => canvas(m, &artwork(m)?)?,
        None => CanvasRaster::new(p.nominal.frame_width, p.nominal.frame_height, m.paint.raster_px_per_m, m.paint.brush_width_m, &[]),
    };
    let mission = mission(m, &p, loaded, robot, canvas)?;
    let mut cfg: ConsoleConfig = m.console.clone();
    if cfg.grid.is_empty() {
        cfg.grid = m.calibration.grid().iter().map(|g| [g.x, g.y]).collect();
    }
    let listener = TcpListener::bind(&a.addr).with_context(|| format!("binding {}", a.addr)).map_err(Failure::Precondition)?;
    let local = listener.local_addr().map_err(|e| Failure::Precondition(e.into()))?;
    println!("listening on {local}");
    std::io::stdout().flush().ok();
    let mut server = ConsoleServer::new(mission, cfg);
    let opts = TcpOptions { speed: (a.speed > 0.0).then_some(a.speed), max_sim_s: a.max_sim_s };
    serve_tcp(&listener, &mut server, &opts).map_err(|e| match e {
        muralbot::console::ServeError::Mission(e) => mission_failure(e),
        e => Failure::Precondition(e.into()),
    })?;
    if !server.captures().points.is_empty() {
        server.captures().save(&m.out(artifact::CAPTURES))?;
        println!("{} captures saved to {}", server.captures().points.len(), m.out(artifact::CAPTURES).display());
    }
    let (out, _) = server.into_mission().finish();
    out.log.save(&m.out(artifact::EVENTS))?;
    Ok(())
}
