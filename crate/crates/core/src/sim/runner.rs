//! Scripted teach runs and closed-loop repeat runs.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::controller::{
    ControllerParams, CorrectionReport, RepeatController, TickOutcome, VelocityCommand,
};
use crate::eval::{arc_lengths, NearestIndex};
use crate::event::Event;
use crate::frame::{accumulate, EventFrame};
use crate::map::{should_record, MapGeometry, TopometricMap};
use crate::pose::Pose2D;

use super::camera::{EventRenderer, PinholeCamera};
use super::drift::{DriftModel, SimState};
use super::world::{Path, World};
use super::SimError;

const TEACH_SALT: u64 = 0x7eac_4000_0000_0001;
const REPEAT_SALT: u64 = 0x4e9e_a700_0000_0002;
const SPURIOUS_SALT: u64 = 0x5b00_0000_0000_0003;

/// Everything about a simulated run that is not controller tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct SimParams {
    pub camera: PinholeCamera,
    /// Event accumulation window, µs.
    pub tau_us: u64,
    /// Time between control ticks, µs. Windows overlap when this is
    /// shorter than `tau_us`.
    pub hop_us: u64,
    /// Upper bound on a physics and rendering sub-step, µs.
    pub max_substep_us: u64,
    /// Teach speed, m/s.
    pub speed: f64,
    pub delta_d: f64,
    pub delta_alpha: f64,
    /// Pure-pursuit lookahead of the scripted teach driver, m.
    pub lookahead: f64,
    /// Straight approach driven before the path starts so the first map
    /// frame already sees motion, m.
    pub run_up: f64,
    pub teach_drift: DriftModel,
    pub repeat_drift: DriftModel,
    pub seed: u64,
    /// Repeat runs abort when the robot is further than this from every
    /// teach ground-truth sample, m.
    pub failure_radius: f64,
    /// Mean number of uniformly scattered spurious events per window.
    pub spurious_per_frame: f64,
    /// Repeat runs abort after this multiple of the teach duration.
    pub time_limit_factor: f64,
    pub trace_interval_us: u64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            camera: PinholeCamera::default(),
            tau_us: 66_000,
            hop_us: 3_300,
            max_substep_us: 1_000,
            speed: 0.35,
            delta_d: 0.2,
            delta_alpha: 15f64.to_radians(),
            lookahead: 0.4,
            run_up: 0.3,
            teach_drift: DriftModel::NONE,
            repeat_drift: DriftModel::NONE,
            seed: 1,
            failure_radius: 0.5,
            spurious_per_frame: 0.0,
            time_limit_factor: 2.0,
            trace_interval_us: 33_000,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<(), SimError> {
        self.camera.validate()?;
        self.teach_drift.validate()?;
        self.repeat_drift.validate()?;
        let bad = |m: &str| Err(SimError::InvalidParameter(m.into()));
        if self.tau_us == 0 || self.hop_us == 0 || self.max_substep_us == 0 {
            return bad("window, hop and sub-step must be positive");
        }
        if self.hop_us > self.tau_us {
            return bad("hop longer than the window leaves events unused");
        }
        if !(self.speed > 0.0 && self.delta_d > 0.0 && self.delta_alpha > 0.0) {
            return bad("speed and recording intervals must be positive");
        }
        if !(self.lookahead > 0.0 && self.run_up >= 0.0 && self.failure_radius > 0.0) {
            return bad("lookahead and failure radius must be positive, run-up non-negative");
        }
        if !(self.spurious_per_frame >= 0.0 && self.time_limit_factor >= 1.0) {
            return bad("spurious rate must be non-negative and time limit factor at least 1");
        }
        if self.trace_interval_us == 0 {
            return bad("trace interval must be positive");
        }
        Ok(())
    }

    fn trace_every(&self) -> u64 {
        (self.trace_interval_us as f64 / self.hop_us as f64)
            .round()
            .max(1.0) as u64
    }
}

/// One row of a ground-truth trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSample {
    pub t_us: u64,
    pub truth: Pose2D,
    pub odom: Pose2D,
}

impl TraceSample {
    fn of(state: &SimState) -> Self {
        Self {
            t_us: state.t,
            truth: state.true_pose,
            odom: state.odom_pose,
        }
    }
}

pub fn write_trace_csv<W: Write>(trace: &[TraceSample], mut out: W) -> std::io::Result<()> {
    writeln!(out, "t_us,x,y,theta,odo_x,odo_y,odo_theta")?;
    for s in trace {
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            s.t_us, s.truth.x, s.truth.y, s.truth.theta, s.odom.x, s.odom.y, s.odom.theta
        )?;
    }
    Ok(())
}

pub fn read_trace_csv<R: BufRead>(input: R) -> Result<Vec<TraceSample>, SimError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if i == 0 || line.is_empty() {
            if i == 0 && !line.starts_with("t_us,") {
                return Err(SimError::Parse {
                    line: 1,
                    reason: "missing trace header".into(),
                });
            }
            continue;
        }
        let bad = || SimError::Parse {
            line: i + 1,
            reason: "expected `t_us,x,y,theta,odo_x,odo_y,odo_theta`".into(),
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(bad());
        }
        let t_us = fields[0].parse().map_err(|_| bad())?;
        let v: Vec<f64> = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad())?;
        out.push(TraceSample {
            t_us,
            truth: Pose2D::new(v[0], v[1], v[2]),
            odom: Pose2D::new(v[3], v[4], v[5]),
        });
    }
    Ok(out)
}

/// Sliding buffer of recent events.
struct EventWindow {
    events: VecDeque<Event>,
    tau_us: u64,
    width: usize,
    height: usize,
}

impl EventWindow {
    fn new(params: &SimParams) -> Self {
        Self {
            events: VecDeque::new(),
            tau_us: params.tau_us,
            width: params.camera.width,
            height: params.camera.height,
        }
    }

    fn extend(&mut self, events: &[Event]) {
        self.events.extend(events.iter().copied());
    }

    /// Frame for `[t - tau, t)`; older events are dropped.
    fn frame(&mut self, t: u64) -> Result<EventFrame, SimError> {
        let start = t.saturating_sub(self.tau_us);
        while self.events.front().is_some_and(|e| e.t < start) {
            self.events.pop_front();
        }
        Ok(accumulate(
            self.events.make_contiguous(),
            start,
            self.tau_us,
            self.width,
            self.height,
        )?)
    }
}

/// Steps physics for one hop and collects the events it produces.
struct Stepper {
    renderer: Option<EventRenderer>,
    spurious: Option<(ChaCha8Rng, Poisson<f64>)>,
    window: EventWindow,
    scratch: Vec<Event>,
    hop_us: u64,
    substeps: u64,
}

impl Stepper {
    fn new(world: &World, params: &SimParams, render: bool) -> Result<Self, SimError> {
        let renderer = if render {
            Some(EventRenderer::new(world, params.camera)?)
        } else {
            None
        };
        let rate = params.spurious_per_frame * params.hop_us as f64 / params.tau_us as f64;
        let spurious = (render && rate > 0.0).then(|| {
            (
                ChaCha8Rng::seed_from_u64(params.seed ^ SPURIOUS_SALT),
                Poisson::new(rate).expect("positive rate"),
            )
        });
        Ok(Self {
            renderer,
            spurious,
            window: EventWindow::new(params),
            scratch: Vec::new(),
            hop_us: params.hop_us,
            substeps: params.hop_us.div_ceil(params.max_substep_us),
        })
    }

    fn advance(&mut self, state: &mut SimState, cmd: VelocityCommand) {
        let t0 = state.t;
        self.scratch.clear();
        for i in 0..self.substeps {
            let dt = self.hop_us * (i + 1) / self.substeps - self.hop_us * i / self.substeps;
            let (before, ta) = (state.true_pose, state.t);
            state.step(cmd, dt);
            if let Some(r) = self.renderer.as_mut() {
                r.render(&before, &state.true_pose, ta, state.t, &mut self.scratch);
            }
        }
        if let Some((rng, dist)) = self.spurious.as_mut() {
            let n = dist.sample(rng) as usize;
            let (w, h) = (self.window.width as u32, self.window.height as u32);
            for _ in 0..n {
                self.scratch.push(Event {
                    t: rng.random_range(t0..t0 + self.hop_us),
                    u: rng.random_range(0..w),
                    v: rng.random_range(0..h),
                    p: if rng.random_bool(0.5) { 1 } else { -1 },
                });
            }
            self.scratch.sort_by_key(|e| e.t);
        }
        if self.renderer.is_some() {
            self.window.extend(&self.scratch);
        }
    }
}

#[derive(Debug, Clone)]
pub struct TeachRun {
    pub map: TopometricMap,
    /// Ground truth and odometry, sampled at the trace interval and at
    /// the end of the run.
    pub trace: Vec<TraceSample>,
}

fn pursuit_command(pose: &Pose2D, target: (f64, f64), speed: f64) -> VelocityCommand {
    let (tx, ty) = pose.inverse_transform_point(target.0, target.1);
    let l2 = tx * tx + ty * ty;
    let omega = if l2 > 1e-12 {
        2.0 * speed * ty / l2
    } else {
        0.0
    };
    VelocityCommand {
        v: speed,
        omega: omega.clamp(-1.5, 1.5),
    }
}

/// Drives the path at constant speed and records a map keyed to odometry.
pub fn run_teach(world: &World, path: &Path, params: &SimParams) -> Result<TeachRun, SimError> {
    params.validate()?;
    let mut pts = Vec::with_capacity(path.points().len() + 1);
    if params.run_up > 0.0 {
        let (x, y, _) = path.extended_point(-params.run_up);
        pts.push((x, y));
    }
    pts.extend_from_slice(path.points());
    let route = Path::new(pts)?;
    let (x0, y0, h0) = route.point_at(0.0);
    let mut state = SimState::new(
        Pose2D::new(x0, y0, h0),
        params.teach_drift,
        params.seed ^ TEACH_SALT,
    )?;
    let mut stepper = Stepper::new(world, params, true)?;
    let cam = &params.camera;
    let geometry = MapGeometry::new(
        cam.width as u32,
        cam.height as u32,
        params.tau_us,
        params.delta_d,
        params.delta_alpha,
        cam.fov_deg,
    )?;
    let mut map = TopometricMap::new(geometry);
    let mut trace = Vec::new();
    let limit_us = ((route.length() / params.speed) * params.time_limit_factor + 10.0) * 1e6;
    let (end_x, end_y, end_h) = route.point_at(route.length());
    let every = params.trace_every();
    let mut s = 0.0;
    let mut last_node: Option<Pose2D> = None;
    let mut tick = 0u64;
    loop {
        let truth = state.true_pose;
        s = route
            .project_within(truth.x, truth.y, s - 1.0, s + 1.0)
            .0
            .max(s);
        if tick.is_multiple_of(every) {
            trace.push(TraceSample::of(&state));
        }
        let passed_end = s > route.length() - params.lookahead - 0.5
            && (truth.x - end_x) * end_h.cos() + (truth.y - end_y) * end_h.sin() >= 0.0;
        if passed_end {
            if last_node.is_none_or(|l| l.distance_to(&state.odom_pose) >= params.delta_d / 2.0) {
                let frame = stepper.window.frame(state.t)?;
                map.record(frame, state.odom_pose)?;
            }
            if trace.last().is_none_or(|l| l.t_us != state.t) {
                trace.push(TraceSample::of(&state));
            }
            break;
        }
        let record = match last_node {
            None => s >= params.run_up,
            Some(last) => {
                should_record(&last, &state.odom_pose, params.delta_d, params.delta_alpha)
            }
        };
        if record {
            let frame = stepper.window.frame(state.t)?;
            map.record(frame, state.odom_pose)?;
            last_node = Some(state.odom_pose);
        }
        if state.t as f64 > limit_us {
            let index = path
                .points()
                .iter()
                .position(|&(x, y)| route.project(x, y).0 > s)
                .unwrap_or(path.points().len() - 1);
            return Err(SimError::Unreachable { index });
        }
        let (tx, ty, _) = route.extended_point(s + params.lookahead);
        stepper.advance(&mut state, pursuit_command(&truth, (tx, ty), params.speed));
        tick += 1;
    }
    Ok(TeachRun { map, trace })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Failure {
    /// Ground truth strayed beyond the failure radius from the teach run.
    Deviation {
        t_us: u64,
        distance: f64,
    },
    TimeLimit {
        t_us: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOutcome {
    pub completed: bool,
    /// Furthest fraction of the teach path length reached.
    pub progress: f64,
    pub failure: Option<Failure>,
    pub duration_us: u64,
    pub ticks: u64,
}

impl RunOutcome {
    pub fn summary(&self) -> crate::eval::RunSummary {
        crate::eval::RunSummary {
            completed: self.completed,
            progress: self.progress,
        }
    }

    /// `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "outcome={}",
            if self.completed {
                "completed"
            } else {
                "failed"
            }
        );
        let _ = writeln!(s, "length_pct={:.1}", 100.0 * self.progress);
        let _ = writeln!(s, "duration_s={:.3}", self.duration_us as f64 * 1e-6);
        let _ = writeln!(s, "ticks={}", self.ticks);
        match self.failure {
            Some(Failure::Deviation { t_us, distance }) => {
                let _ = writeln!(s, "failure=deviation");
                let _ = writeln!(s, "failure_t_s={:.3}", t_us as f64 * 1e-6);
                let _ = writeln!(s, "failure_distance_m={distance:.3}");
            }
            Some(Failure::TimeLimit { t_us }) => {
                let _ = writeln!(s, "failure=time_limit");
                let _ = writeln!(s, "failure_t_s={:.3}", t_us as f64 * 1e-6);
            }
            None => {}
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct RepeatRun {
    pub trace: Vec<TraceSample>,
    pub reports: Vec<CorrectionReport>,
    pub outcome: RunOutcome,
}

/// Repeats a taught route from the teach start pose, with or without
/// visual corrections, until the last goal is reached or the run fails.
pub fn run_repeat(
    world: &World,
    map: &TopometricMap,
    teach_trace: &[TraceSample],
    params: &SimParams,
    controller: ControllerParams,
    corrections: bool,
) -> Result<RepeatRun, SimError> {
    params.validate()?;
    let first = teach_trace
        .first()
        .ok_or_else(|| SimError::InvalidParameter("teach trace is empty".into()))?;
    let g = map.geometry();
    let cam = &params.camera;
    if (g.width as usize, g.height as usize, g.tau_us) != (cam.width, cam.height, params.tau_us) {
        return Err(SimError::InvalidParameter(format!(
            "map geometry {}x{} tau {} differs from camera {}x{} tau {}",
            g.width, g.height, g.tau_us, cam.width, cam.height, params.tau_us
        )));
    }
    let teach_truth: Vec<Pose2D> = teach_trace.iter().map(|s| s.truth).collect();
    let teach_arc = arc_lengths(&teach_truth);
    let teach_len = teach_arc.last().copied().unwrap_or(0.0).max(1e-9);
    let index = NearestIndex::new(&teach_truth.iter().map(|p| (p.x, p.y)).collect::<Vec<_>>())
        .map_err(|e| SimError::InvalidParameter(e.to_string()))?;
    let limit_us = teach_trace.last().unwrap().t_us as f64 * params.time_limit_factor + 10e6;

    let mut ctl = RepeatController::new(map, controller)?;
    let mut state = SimState::new(first.truth, params.repeat_drift, params.seed ^ REPEAT_SALT)?;
    let mut stepper = Stepper::new(world, params, corrections)?;
    let every = params.trace_every();
    let mut trace = vec![TraceSample::of(&state)];
    let mut reports = Vec::new();
    let mut progress: f64 = 0.0;
    let mut failure = None;
    let mut completed = false;
    let mut tick = 0u64;
    loop {
        let outcome = if corrections {
            let frame = stepper.window.frame(state.t)?;
            ctl.control_tick(&state.odom_pose, &frame, state.t)?
        } else {
            ctl.odom_only_tick(&state.odom_pose, state.t)?
        };
        let command = match outcome {
            TickOutcome::Complete => {
                completed = true;
                break;
            }
            TickOutcome::Drive { command, report } => {
                reports.extend(report);
                command
            }
        };
        stepper.advance(&mut state, command);
        tick += 1;
        let p = state.true_pose;
        let (j, d) = index.nearest(p.x, p.y);
        progress = progress.max(teach_arc[j] / teach_len);
        if tick.is_multiple_of(every) {
            trace.push(TraceSample::of(&state));
        }
        if d > params.failure_radius {
            failure = Some(Failure::Deviation {
                t_us: state.t,
                distance: d,
            });
            break;
        }
        if state.t as f64 > limit_us {
            failure = Some(Failure::TimeLimit { t_us: state.t });
            break;
        }
    }
    if trace.last().is_none_or(|l| l.t_us != state.t) {
        trace.push(TraceSample::of(&state));
    }
    Ok(RepeatRun {
        trace,
        reports,
        outcome: RunOutcome {
            completed,
            progress,
            failure,
            duration_us: state.t,
            ticks: tick,
        },
    })
}
