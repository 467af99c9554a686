mod commands;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use muralbot::format::FormatError;

use commands::{EvalArgs, ServeArgs, Stage, WinchChoice};
use manifest::{RunManifest, MANIFEST_SCHEMA};

/// Exit status classes.
#[derive(Debug)]
pub enum Failure {
    /// Missing or malformed input, or a prior stage not yet run.
    Precondition(anyhow::Error),
    /// The painting session aborted.
    Aborted(String),
    /// A solver or the simulation failed numerically.
    Numerical(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Precondition(_) => 2,
            Failure::Aborted(_) => 3,
            Failure::Numerical(_) => 4,
        }
    }
}

impl From<FormatError> for Failure {
    fn from(e: FormatError) -> Self {
        Failure::Precondition(e.into())
    }
}

#[derive(Parser)]
#[command(name = "muralbot", version, about = "Simulate, calibrate and run a mural-painting cable robot")]
struct Cli {
    /// Run manifest (TOML). Without one, built-in defaults are used.
    #[arg(long, short, global = true)]
    manifest: Option<PathBuf>,
    /// Overrides the manifest seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the manifest output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Sets any manifest value, e.g. `--set mission.color_swap_s=5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Repeat for more log output.
    #[arg(long, short, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate calibration data collection on the as-built robot.
    Sim {
        /// Write synthetic operator captures instead (needs `calibrate 2`).
        #[arg(long)]
        captures: bool,
    },
    /// Run one calibration stage.
    Calibrate {
        #[arg(value_enum)]
        stage: Stage,
        /// Dataset to use instead of the one `sim` wrote.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Captured point file for `extero`.
        #[arg(long)]
        captures: Option<PathBuf>,
        /// Fit one homography over the grid instead of one per cell.
        #[arg(long)]
        single: bool,
    },
    /// Compile the artwork and synthesize gain schedules.
    Gains {
        #[arg(long, value_enum, default_value = "stage2")]
        winch: WinchChoice,
        /// Skip the task-space map even if one exists.
        #[arg(long, conflicts_with = "map")]
        no_map: bool,
        /// Require the task-space map.
        #[arg(long)]
        map: bool,
    },
    /// Paint the artwork in simulation with the synthesized gains.
    Paint,
    /// Tracking and coverage metrics.
    Eval {
        /// Trace written by `paint`; compares its measured and reference columns.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Measured path (t,x,y).
        #[arg(long, requires = "reference")]
        measured: Option<PathBuf>,
        /// Reference path (t,x,y) on the same clock.
        #[arg(long, requires = "measured")]
        reference: Option<PathBuf>,
        /// Design artwork for coverage scoring.
        #[arg(long, requires = "canvas")]
        design: Option<PathBuf>,
        /// Painted canvas PNG.
        #[arg(long, requires = "design")]
        canvas: Option<PathBuf>,
        /// Coverage at which a pixel counts as painted.
        #[arg(long, default_value_t = 0.5)]
        threshold: f32,
        /// Run the calibration pipeline comparison.
        #[arg(long)]
        ablation: bool,
        /// Also write the metrics as JSON here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Serve the operator console over TCP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: String,
        /// Simulated seconds per wall second; 0 runs as fast as possible.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Stop after this much simulated time.
        #[arg(long)]
        max_sim_s: Option<f64>,
        /// Winch model when no gains have been synthesized.
        #[arg(long, value_enum)]
        winch: Option<WinchChoice>,
    },
}

fn set_dotted(root: &mut toml::Table, key: &str, value: toml::Value) -> anyhow::Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| anyhow!("empty key in `{key}`"))?;
    let mut t = root;
    for p in parts {
        t = t
            .entry(p)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| anyhow!("`{p}` in `{key}` is not a table"))?;
    }
    t.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn load_manifest(cli: &Cli) -> Result<RunManifest, Failure> {
    let (mut table, base) = match &cli.manifest {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display())).map_err(Failure::Precondition)?;
            let t: toml::Table = toml::from_str(&text).map_err(|e| FormatError::parse(p, e))?;
            (t, p.parent().map(Path::to_path_buf).unwrap_or_default())
        }
        None => {
            let mut t = toml::Table::new();
            t.insert("schema".into(), MANIFEST_SCHEMA.into());
            (t, PathBuf::from("."))
        }
    };
    for kv in &cli.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| Failure::Precondition(anyhow!("--set expects KEY=VALUE, got `{kv}`")))?;
        set_dotted(&mut table, k.trim(), parse_value(v.trim())).map_err(Failure::Precondition)?;
    }
    let origin = cli.manifest.clone().unwrap_or_else(|| PathBuf::from("<defaults>"));
    let mut m: RunManifest = toml::Value::Table(table).try_into().map_err(|e| FormatError::parse(&origin, e))?;
    muralbot::format::check_schema(&origin, &m.schema, MANIFEST_SCHEMA)?;
    m.base = base;
    if let Some(s) = cli.seed {
        m.seed = s;
    }
    if let Some(o) = &cli.out {
        // Relative to the working directory, like any other flag path.
        m.out_dir = std::env::current_dir().map(|d| d.join(o)).unwrap_or_else(|_| o.clone());
    }
    Ok(m)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let m = load_manifest(cli)?;
    match &cli.command {
        Command::Sim { captures } => commands::sim(&m, *captures),
        Command::Calibrate { stage, data, captures, single } => {
            commands::calibrate(&m, *stage, data.as_deref(), captures.as_deref(), *single)
        }
        Command::Gains { winch, no_map, map } => {
            let map = if *no_map { Some(false) } else if *map { Some(true) } else { None };
            commands::gains(&m, *winch, map)
        }
        Command::Paint => commands::paint(&m),
        Command::Eval { trace, measured, reference, design, canvas, threshold, ablation, report } => commands::eval(
            &m,
            &EvalArgs {
                trace: trace.as_deref(),
                measured: measured.as_deref(),
                reference: reference.as_deref(),
                design: design.as_deref(),
                canvas: canvas.as_deref(),
                threshold: *threshold,
                ablation: *ablation,
                report: report.as_deref(),
            },
        ),
        Command::Serve { addr, speed, max_sim_s, winch } => {
            commands::serve(&m, &ServeArgs { addr: addr.clone(), speed: *speed, max_sim_s: *max_sim_s, winch: *winch })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Precondition(e) => eprintln!("error: {e:#}"),
                Failure::Aborted(msg) => eprintln!("aborted: {msg}"),
                Failure::Numerical(e) => eprintln!("numerical failure: {e:#}"),
            }
            ExitCode::from(f.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_overrides_build_nested_tables() {
        let mut t = toml::Table::new();
        set_dotted(&mut t, "mission.session.tick_hz", parse_value("50.0")).unwrap();
        set_dotted(&mut t, "artwork", parse_value("art.svg")).unwrap();
        assert_eq!(t["mission"]["session"]["tick_hz"].as_float(), Some(50.0));
        assert_eq!(t["artwork"].as_str(), Some("art.svg"));
        assert!(set_dotted(&mut t, "artwork.x", parse_value("1")).is_err());
    }
}
