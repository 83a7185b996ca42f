//! Subcommands of the `evtr` binary.
//!
//! Every command is a function of its input files and the configured seed;
//! rerunning one with the same inputs rewrites byte-identical outputs.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use evtr_core::config::Config;
use evtr_core::controller::write_corrections_csv;
use evtr_core::eval::{self, ate_summary, bench_vision, write_ate_csv};
use evtr_core::sim::{
    self, read_trace_csv, run_repeat, run_teach, write_trace_csv, CorridorLayout, TraceSample,
    World,
};
use evtr_core::{EventFrame, Pose2D, TopometricMap};

#[derive(Debug, Parser)]
#[command(
    name = "evtr",
    version,
    about = "Event-camera teach-and-repeat in simulation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a path and a landmark world around it.
    World(WorldArgs),
    /// Drive the path once and record a map.
    Teach(TeachArgs),
    /// Follow a recorded map, with or without visual corrections.
    Repeat(RepeatArgs),
    /// Absolute trajectory error between a teach and a repeat trace.
    Eval(EvalArgs),
    /// Time the vision step against a recorded map.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Flat key=value config file; defaults are used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set seed=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(p) => {
                if !p.exists() {
                    bail!("config file not found: {}", p.display());
                }
                Config::load(p).with_context(|| format!("loading {}", p.display()))?
            }
            None => Config::default(),
        };
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Shape {
    Straight,
    UTrack,
}

#[derive(Debug, Args)]
pub struct WorldArgs {
    #[arg(long, value_enum, default_value_t = Shape::UTrack)]
    pub shape: Shape,
    /// Path length, m.
    #[arg(long, default_value_t = 50.0)]
    pub length: f64,
    /// Turn radius of the U-track, m.
    #[arg(long, default_value_t = 3.0)]
    pub radius: f64,
    #[arg(long, default_value_t = 100)]
    pub seed: u64,
    #[arg(long)]
    pub out_world: PathBuf,
    #[arg(long)]
    pub out_path: PathBuf,
}

#[derive(Debug, Args)]
pub struct TeachArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub world: PathBuf,
    #[arg(long)]
    pub path: PathBuf,
    /// Map output; the teach trace is written next to it.
    #[arg(long)]
    pub out_map: PathBuf,
}

#[derive(Debug, Args)]
pub struct RepeatArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub world: PathBuf,
    #[arg(long)]
    pub map: PathBuf,
    /// Defaults to the trace written next to the map by `teach`.
    #[arg(long)]
    pub teach_trace: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Odometry-only baseline.
    #[arg(long)]
    pub no_corrections: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub teach_trace: PathBuf,
    pub repeat_trace: PathBuf,
    /// Per-pose distances as CSV.
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub map: PathBuf,
}

/// How a command finished when it did not hit an input error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// The repeat run aborted before reaching the end of the path.
    RunFailed,
}

impl Status {
    pub fn exit_code(self) -> u8 {
        match self {
            Status::Ok => 0,
            Status::RunFailed => 1,
        }
    }
}

/// Exit code for commands that failed with an error.
pub const INPUT_ERROR: u8 = 2;

/// Trace written alongside a map: `route.map` gets `route.trace.csv`.
pub fn teach_trace_path(map: &Path) -> PathBuf {
    map.with_extension("trace.csv")
}

fn read_input(path: &Path, what: &str) -> Result<String> {
    if !path.exists() {
        bail!("{what} file not found: {}", path.display());
    }
    fs::read_to_string(path).with_context(|| format!("reading {what} file {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn load_trace(path: &Path, what: &str) -> Result<Vec<TraceSample>> {
    if !path.exists() {
        bail!("{what} file not found: {}", path.display());
    }
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_trace_csv(BufReader::new(f)).with_context(|| format!("parsing {}", path.display()))
}

fn load_map(path: &Path) -> Result<TopometricMap> {
    if !path.exists() {
        bail!("map file not found: {}", path.display());
    }
    TopometricMap::load(path).with_context(|| format!("loading map {}", path.display()))
}

fn truth(trace: &[TraceSample]) -> Vec<Pose2D> {
    trace.iter().map(|s| s.truth).collect()
}

pub fn run(cli: Cli, out: &mut impl Write) -> Result<Status> {
    match cli.command {
        Command::World(a) => cmd_world(&a, out),
        Command::Teach(a) => cmd_teach(&a, out),
        Command::Repeat(a) => cmd_repeat(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Bench(a) => cmd_bench(&a, out),
    }
}

pub fn cmd_world(a: &WorldArgs, out: &mut impl Write) -> Result<Status> {
    if !(a.length > 0.0 && a.length.is_finite()) {
        bail!("length must be positive");
    }
    let path = match a.shape {
        Shape::Straight => sim::Path::straight(a.length),
        Shape::UTrack => {
            if !(a.radius > 0.0 && a.radius < a.length) {
                bail!("radius must be positive and shorter than the path");
            }
            sim::Path::u_track(a.length, a.radius)
        }
    };
    let world = World::along_path(&path, a.seed, &CorridorLayout::default())?;
    fs::write(&a.out_path, path.to_text())
        .with_context(|| format!("writing {}", a.out_path.display()))?;
    fs::write(&a.out_world, world.to_text())
        .with_context(|| format!("writing {}", a.out_world.display()))?;
    writeln!(out, "path_length_m={:.3}", path.length())?;
    writeln!(out, "landmarks={}", world.landmarks.len())?;
    Ok(Status::Ok)
}

pub fn cmd_teach(a: &TeachArgs, out: &mut impl Write) -> Result<Status> {
    let cfg = a.config.load()?;
    let world = World::parse(&read_input(&a.world, "world")?).context("parsing world file")?;
    let path = sim::Path::parse(&read_input(&a.path, "path")?).context("parsing path file")?;
    let run = run_teach(&world, &path, &cfg.sim_params())?;
    run.map
        .save(&a.out_map)
        .with_context(|| format!("writing {}", a.out_map.display()))?;
    let trace_path = teach_trace_path(&a.out_map);
    let mut w = create(&trace_path)?;
    write_trace_csv(&run.trace, &mut w)?;
    w.flush()?;
    writeln!(out, "nodes={}", run.map.len())?;
    writeln!(out, "map={}", a.out_map.display())?;
    writeln!(out, "trace={}", trace_path.display())?;
    Ok(Status::Ok)
}

pub fn cmd_repeat(a: &RepeatArgs, out: &mut impl Write) -> Result<Status> {
    let cfg = a.config.load()?;
    let world = World::parse(&read_input(&a.world, "world")?).context("parsing world file")?;
    let map = load_map(&a.map)?;
    let trace_path = a
        .teach_trace
        .clone()
        .unwrap_or_else(|| teach_trace_path(&a.map));
    let teach = load_trace(&trace_path, "teach trace")?;

    let run = run_repeat(
        &world,
        &map,
        &teach,
        &cfg.sim_params(),
        cfg.controller_params(),
        !a.no_corrections,
    )?;

    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let mut w = create(&a.out_dir.join("repeat_trace.csv"))?;
    write_trace_csv(&run.trace, &mut w)?;
    w.flush()?;
    let mut w = create(&a.out_dir.join("corrections.csv"))?;
    write_corrections_csv(&run.reports, &mut w)?;
    w.flush()?;
    fs::write(a.out_dir.join("outcome.txt"), run.outcome.to_text())?;
    fs::write(a.out_dir.join("config.txt"), cfg.to_text())?;

    write!(out, "{}", run.outcome.to_text())?;
    let teach_truth = truth(&teach);
    let repeat_truth = truth(&run.trace);
    let ate = eval::ate_up_to_progress(&teach_truth, &repeat_truth, run.outcome.progress)?;
    writeln!(out, "ate_mean_m={:.6}", ate.mean)?;
    writeln!(out, "ate_max_m={:.6}", ate.max)?;
    Ok(if run.outcome.completed {
        Status::Ok
    } else {
        Status::RunFailed
    })
}

pub fn cmd_eval(a: &EvalArgs, out: &mut impl Write) -> Result<Status> {
    let teach = truth(&load_trace(&a.teach_trace, "teach trace")?);
    let repeat = truth(&load_trace(&a.repeat_trace, "repeat trace")?);
    let result = eval::ate(&teach, &repeat)?;
    write!(out, "{}", ate_summary(&result))?;
    if let Some(p) = &a.out_csv {
        let mut w = create(p)?;
        write_ate_csv(&teach, &result, &mut w)?;
        w.flush()?;
    }
    Ok(Status::Ok)
}

pub fn cmd_bench(a: &BenchArgs, out: &mut impl Write) -> Result<Status> {
    let cfg = a.config.load()?;
    let map = load_map(&a.map)?;
    // The map's own frames stand in for live frames; matching cost does not
    // depend on content.
    let frames: Vec<EventFrame> = map.nodes().iter().map(|n| n.frame.clone()).collect();
    let report = bench_vision(&map, &frames, cfg.controller_params(), cfg.bench_params())?;
    write!(out, "{}", report.to_summary())?;
    if !report.timer_overhead_ok() {
        writeln!(out, "warning: timer overhead exceeds 1% of the median")?;
    }
    Ok(Status::Ok)
}
