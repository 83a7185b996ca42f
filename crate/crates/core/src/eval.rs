//! Trajectory metrics and the vision-step benchmark.

use std::fmt::Write as _;
use std::hint::black_box;
use std::time::Instant;

use thiserror::Error;

use crate::controller::{
    along_path_offset, lateral_correction, ControlError, ControllerParams, RepeatController,
};
use crate::correlation::pixel_offset_to_angle;
use crate::frame::EventFrame;
use crate::map::TopometricMap;
use crate::pose::Pose2D;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Control(#[from] ControlError),
}

/// Exact nearest-neighbour lookup over planar points using a uniform grid.
///
/// Ties are broken towards the lowest point index, so results agree with a
/// linear scan.
#[derive(Debug, Clone)]
pub struct NearestIndex {
    points: Vec<(f64, f64)>,
    origin: (f64, f64),
    cell: f64,
    cols: usize,
    rows: usize,
    starts: Vec<usize>,
    entries: Vec<u32>,
}

impl NearestIndex {
    pub fn new(points: &[(f64, f64)]) -> Result<Self, EvalError> {
        if points.is_empty() {
            return Err(EvalError::InvalidArgument("no points to index".into()));
        }
        if points.iter().any(|p| !(p.0.is_finite() && p.1.is_finite())) {
            return Err(EvalError::InvalidArgument("non-finite point".into()));
        }
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for &(x, y) in points {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        // About two points per cell for evenly spread data.
        let area = ((x1 - x0) * (y1 - y0)).max(1e-12);
        let span = (x1 - x0).max(y1 - y0).max(1e-9);
        let cell = (2.0 * area / points.len() as f64)
            .sqrt()
            .max(span / 4096.0)
            .max(1e-9);
        let cols = ((x1 - x0) / cell) as usize + 1;
        let rows = ((y1 - y0) / cell) as usize + 1;
        let mut counts = vec![0usize; cols * rows + 1];
        let cell_ids: Vec<usize> = points
            .iter()
            .map(|&(x, y)| {
                let c = (((x - x0) / cell) as usize).min(cols - 1);
                let r = (((y - y0) / cell) as usize).min(rows - 1);
                r * cols + c
            })
            .collect();
        for &id in &cell_ids {
            counts[id + 1] += 1;
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let starts = counts.clone();
        let mut fill = counts;
        let mut entries = vec![0u32; points.len()];
        for (i, &id) in cell_ids.iter().enumerate() {
            entries[fill[id]] = i as u32;
            fill[id] += 1;
        }
        Ok(Self {
            points: points.to_vec(),
            origin: (x0, y0),
            cell,
            cols,
            rows,
            starts,
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of and distance to the nearest indexed point.
    pub fn nearest(&self, x: f64, y: f64) -> (usize, f64) {
        let (x0, y0) = self.origin;
        let fc = ((x - x0) / self.cell).floor();
        let fr = ((y - y0) / self.cell).floor();
        let c = fc.clamp(0.0, (self.cols - 1) as f64) as i64;
        let r = fr.clamp(0.0, (self.rows - 1) as f64) as i64;
        // Distance from the query to the grid, a lower bound for every point.
        let outside = {
            let cx0 = x0 + c as f64 * self.cell;
            let cy0 = y0 + r as f64 * self.cell;
            let dx = (cx0 - x).max(x - (cx0 + self.cell)).max(0.0);
            let dy = (cy0 - y).max(y - (cy0 + self.cell)).max(0.0);
            dx.max(dy)
        };
        let mut best = (usize::MAX, f64::INFINITY);
        let max_ring = self.cols.max(self.rows) as i64;
        for ring in 0..=max_ring {
            // Anything in this ring or beyond is at least this far away.
            let bound = outside.max((ring - 1).max(0) as f64 * self.cell);
            if bound > best.1 {
                break;
            }
            let (rlo, rhi) = (r - ring, r + ring);
            let (clo, chi) = (c - ring, c + ring);
            for rr in rlo.max(0)..=rhi.min(self.rows as i64 - 1) {
                let edge_row = rr == rlo || rr == rhi;
                let mut cc = clo.max(0);
                while cc <= chi.min(self.cols as i64 - 1) {
                    let id = rr as usize * self.cols + cc as usize;
                    for &i in &self.entries[self.starts[id]..self.starts[id + 1]] {
                        let p = self.points[i as usize];
                        let d = (p.0 - x).hypot(p.1 - y);
                        if d < best.1 || (d == best.1 && (i as usize) < best.0) {
                            best = (i as usize, d);
                        }
                    }
                    cc = if edge_row || cc == chi { cc + 1 } else { chi };
                }
            }
        }
        best
    }
}

/// Nearest-neighbour trajectory error of a repeat run against the teach run.
#[derive(Debug, Clone, PartialEq)]
pub struct AteResult {
    /// `distances[j]` belongs to teach pose `j`.
    pub distances: Vec<f64>,
    /// Repeat pose nearest to each teach pose.
    pub associations: Vec<usize>,
    pub mean: f64,
    pub max: f64,
    pub rms: f64,
}

impl AteResult {
    fn from_pairs(pairs: Vec<(usize, f64)>) -> Self {
        let n = pairs.len() as f64;
        let (associations, distances): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let mean = distances.iter().sum::<f64>() / n;
        let max = distances.iter().copied().fold(0.0, f64::max);
        let rms = (distances.iter().map(|d| d * d).sum::<f64>() / n).sqrt();
        Self {
            distances,
            associations,
            mean,
            max,
            rms,
        }
    }
}

fn check_traces(teach: &[Pose2D], repeat: &[Pose2D]) -> Result<(), EvalError> {
    if teach.is_empty() || repeat.is_empty() {
        return Err(EvalError::InvalidArgument(
            "ATE needs non-empty traces".into(),
        ));
    }
    Ok(())
}

/// For every teach pose, the translation distance to the closest repeat
/// pose. Not symmetric in its arguments.
pub fn ate(teach: &[Pose2D], repeat: &[Pose2D]) -> Result<AteResult, EvalError> {
    check_traces(teach, repeat)?;
    let pts: Vec<(f64, f64)> = repeat.iter().map(|p| (p.x, p.y)).collect();
    let index = NearestIndex::new(&pts)?;
    Ok(AteResult::from_pairs(
        teach.iter().map(|p| index.nearest(p.x, p.y)).collect(),
    ))
}

/// Linear-scan version of [`ate`].
pub fn ate_brute_force(teach: &[Pose2D], repeat: &[Pose2D]) -> Result<AteResult, EvalError> {
    check_traces(teach, repeat)?;
    Ok(AteResult::from_pairs(
        teach
            .iter()
            .map(|t| {
                let mut best = (0, f64::INFINITY);
                for (i, r) in repeat.iter().enumerate() {
                    let d = (t.x - r.x).hypot(t.y - r.y);
                    if d < best.1 {
                        best = (i, d);
                    }
                }
                best
            })
            .collect(),
    ))
}

/// Cumulative path length at each pose of a trace.
pub fn arc_lengths(trace: &[Pose2D]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(trace.len());
    for (i, p) in trace.iter().enumerate() {
        if i > 0 {
            acc += p.distance_to(&trace[i - 1]);
        }
        out.push(acc);
    }
    out
}

/// [`ate`] restricted to the teach poses within the first `fraction` of
/// the teach path length, for comparing runs at matching progress.
pub fn ate_up_to_progress(
    teach: &[Pose2D],
    repeat: &[Pose2D],
    fraction: f64,
) -> Result<AteResult, EvalError> {
    if teach.is_empty() {
        return Err(EvalError::InvalidArgument(
            "ATE needs non-empty traces".into(),
        ));
    }
    let s = arc_lengths(teach);
    let limit = s.last().unwrap() * fraction.clamp(0.0, 1.0);
    let n = s.partition_point(|&v| v <= limit).max(1);
    ate(&teach[..n], repeat)
}

/// Result of one repeat run, as used for success statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSummary {
    pub completed: bool,
    /// Completed fraction of the path length, in [0, 1].
    pub progress: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuccessRate {
    pub completed: usize,
    pub total: usize,
    /// Completed length of each failed run, percent.
    pub failed_lengths_pct: Vec<f64>,
}

impl SuccessRate {
    pub fn ratio(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.completed as f64 / self.total as f64
        }
    }
}

impl std::fmt::Display for SuccessRate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.completed, self.total)
    }
}

pub fn success_rate(runs: &[RunSummary]) -> SuccessRate {
    SuccessRate {
        completed: runs.iter().filter(|r| r.completed).count(),
        total: runs.len(),
        failed_lengths_pct: runs
            .iter()
            .filter(|r| !r.completed)
            .map(|r| 100.0 * r.progress.clamp(0.0, 1.0))
            .collect(),
    }
}

/// Latency distribution of the vision step.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub samples_us: Vec<f64>,
    pub mean_us: f64,
    pub median_us: f64,
    pub p99_us: f64,
    /// Corrections per second if the vision step ran back to back.
    pub vision_hz: f64,
    /// Vision rate capped by the frame hop of the control loop.
    pub loop_hz: f64,
    /// Median cost of timing an empty step.
    pub timer_overhead_us: f64,
}

impl BenchReport {
    fn from_samples(mut samples_us: Vec<f64>, hop_us: u64, timer_overhead_us: f64) -> Self {
        let mean_us = samples_us.iter().sum::<f64>() / samples_us.len() as f64;
        let sorted = {
            samples_us.sort_by(f64::total_cmp);
            &samples_us
        };
        let median_us = percentile(sorted, 0.5);
        let p99_us = percentile(sorted, 0.99);
        let vision_hz = 1e6 / mean_us.max(1e-3);
        let loop_hz = vision_hz.min(1e6 / hop_us as f64);
        Self {
            samples_us,
            mean_us,
            median_us,
            p99_us,
            vision_hz,
            loop_hz,
            timer_overhead_us,
        }
    }

    pub fn timer_overhead_ok(&self) -> bool {
        self.timer_overhead_us < 0.01 * self.median_us
    }

    /// `key=value` summary lines.
    pub fn to_summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "samples={}", self.samples_us.len());
        let _ = writeln!(s, "mean_us={:.3}", self.mean_us);
        let _ = writeln!(s, "median_us={:.3}", self.median_us);
        let _ = writeln!(s, "p99_us={:.3}", self.p99_us);
        let _ = writeln!(s, "vision_hz={:.1}", self.vision_hz);
        let _ = writeln!(s, "loop_hz={:.1}", self.loop_hz);
        let _ = writeln!(s, "timer_overhead_us={:.4}", self.timer_overhead_us);
        s
    }
}

/// Nearest-rank percentile of sorted data.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchParams {
    pub iterations: usize,
    pub warmup: usize,
    /// Consecutive steps matched against the same goal before moving on,
    /// so teach-side preparation is amortized as in a real run.
    pub steps_per_goal: usize,
    pub hop_us: u64,
}

impl Default for BenchParams {
    fn default() -> Self {
        Self {
            iterations: 500,
            warmup: 20,
            steps_per_goal: 173,
            hop_us: 3300,
        }
    }
}

/// Times the per-tick vision step: compression, correlation against the
/// goal's search space, and the heading and along-path arithmetic.
/// `frames` are replayed cyclically as repeat views.
pub fn bench_vision(
    map: &TopometricMap,
    frames: &[EventFrame],
    params: ControllerParams,
    bench: BenchParams,
) -> Result<BenchReport, EvalError> {
    if bench.iterations < 100 {
        return Err(EvalError::InvalidArgument(format!(
            "need at least 100 iterations, got {}",
            bench.iterations
        )));
    }
    if frames.is_empty() {
        return Err(EvalError::InvalidArgument("no frames to replay".into()));
    }
    if bench.steps_per_goal == 0 || bench.hop_us == 0 {
        return Err(EvalError::InvalidArgument(
            "steps per goal and hop must be positive".into(),
        ));
    }
    let gains = params.gains;
    let fov = map.geometry().fov_deg();
    let delta_d = map.geometry().delta_d();
    let mut ctl = RepeatController::new(map, params)?;
    let goals = ctl.goal_count();
    let mut theta_prev = 0.0;
    let mut step = |i: usize| -> Result<Pose2D, EvalError> {
        let k = if goals > 1 {
            1 + (i / bench.steps_per_goal) % (goals - 1)
        } else {
            0
        };
        let frame = &frames[i % frames.len()];
        let m = ctl.match_goal(k, frame)?;
        let res = &m.results[k - m.first];
        let theta_curr = -pixel_offset_to_angle(res.delta as f64, res.width(), fov).to_radians();
        let u = 0.5;
        let t = lateral_correction(
            theta_prev,
            theta_curr,
            u,
            gains.g_theta,
            &Pose2D::new(0.2, 0.0, 0.0),
        );
        let rhos: Vec<f64> = m.results.iter().map(|r| r.rho).collect();
        let drho = along_path_offset(
            &rhos,
            m.first as i64 - k as i64,
            u,
            gains.rho_bar.resolve(&rhos),
        );
        theta_prev = theta_curr;
        Ok(crate::controller::apply_along_path(
            &t,
            drho,
            gains.g_rho,
            delta_d,
        ))
    };
    for i in 0..bench.warmup {
        black_box(step(i)?);
    }
    let mut samples = Vec::with_capacity(bench.iterations);
    for i in 0..bench.iterations {
        let start = Instant::now();
        black_box(step(bench.warmup + i)?);
        samples.push(start.elapsed().as_secs_f64() * 1e6);
    }
    let mut empty: Vec<f64> = (0..bench.iterations)
        .map(|i| {
            let start = Instant::now();
            black_box(i);
            start.elapsed().as_secs_f64() * 1e6
        })
        .collect();
    empty.sort_by(f64::total_cmp);
    let overhead = percentile(&empty, 0.5);
    Ok(BenchReport::from_samples(samples, bench.hop_us, overhead))
}

/// Writes `j,teach_x,teach_y,repeat_index,distance_m` rows.
pub fn write_ate_csv<W: std::io::Write>(
    teach: &[Pose2D],
    result: &AteResult,
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "j,teach_x,teach_y,repeat_index,distance_m")?;
    for (j, (p, (&i, &d))) in teach
        .iter()
        .zip(result.associations.iter().zip(&result.distances))
        .enumerate()
    {
        writeln!(out, "{j},{:.6},{:.6},{i},{:.6}", p.x, p.y, d)?;
    }
    Ok(())
}

/// `key=value` summary of an ATE result.
pub fn ate_summary(result: &AteResult) -> String {
    format!(
        "poses={}\nate_mean_m={:.6}\nate_max_m={:.6}\nate_rms_m={:.6}\n",
        result.distances.len(),
        result.mean,
        result.max,
        result.rms
    )
}
