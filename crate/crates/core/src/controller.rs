//! Repeat-phase controller: odometry-driven goal pursuit with lateral and
//! along-path visual corrections.
//!
//! Goals are the map poses, re-expressed in the current odometry frame
//! through an alignment transform. Each tick the relative goal
//! `T_delta = odom^-1 * goal_k` is rotated about the robot by the
//! interpolated heading offset and rescaled by the along-path offset; the
//! alignment is then updated so the corrected goal persists for the rest of
//! the run.

use std::time::Instant;

use thiserror::Error;

use crate::correlation::{
    pixel_offset_to_angle, CorrelationEngine, CorrelationError, CorrelationResult,
    PreparedSearchSpace, SearchSpace,
};
use crate::frame::{compress, CompressedFrame, EventFrame, FrameError};
use crate::map::{MapGeometry, TopometricMap};
use crate::pose::{normalize_angle, Pose2D};

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("map needs at least one node")]
    EmptyMap,
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Correlation(#[from] CorrelationError),
    #[error("invalid controller parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
#[error("previous and current goal share a position")]
pub struct DegenerateSegment;

/// Noise floor subtracted from the peak correlations before the weighted
/// average.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RhoThreshold {
    /// Median of the current tick's peak values.
    Median,
    Constant(f64),
}

impl RhoThreshold {
    pub fn resolve(&self, rhos: &[f64]) -> f64 {
        match *self {
            RhoThreshold::Constant(v) => v,
            RhoThreshold::Median => median(rhos),
        }
    }
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectionGains {
    /// Lateral gain, applied to the heading offset in radians.
    pub g_theta: f64,
    /// Along-path gain.
    pub g_rho: f64,
    pub rho_bar: RhoThreshold,
}

impl Default for CorrectionGains {
    fn default() -> Self {
        Self {
            g_theta: 1.5e-3,
            g_rho: 1.5e-5,
            rho_bar: RhoThreshold::Median,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerParams {
    pub gains: CorrectionGains,
    /// Search-space half-width `s` in frames.
    pub search_half_width: usize,
    /// Column compression factor `M` applied before matching.
    pub compression: usize,
    /// Constant forward speed, m/s.
    pub speed: f64,
    /// Proportional gain from bearing-to-goal to angular rate.
    pub heading_gain: f64,
    /// Angular rate limit, rad/s.
    pub max_angular_rate: f64,
    /// Goal counts as reached within this distance, m.
    pub goal_tolerance: f64,
    /// Record wall-clock vision latency in reports. Off keeps reports
    /// reproducible.
    pub measure_latency: bool,
}

impl Default for ControllerParams {
    fn default() -> Self {
        Self {
            gains: CorrectionGains::default(),
            search_half_width: 4,
            compression: 8,
            speed: 0.35,
            heading_gain: 2.0,
            max_angular_rate: 1.5,
            goal_tolerance: 0.05,
            measure_latency: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VelocityCommand {
    /// Forward speed, m/s.
    pub v: f64,
    /// Angular rate, rad/s (counter-clockwise positive).
    pub omega: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoalState {
    /// Current goal index into the map.
    pub k: usize,
    /// Goal relative to the robot as last issued.
    pub t_delta: Pose2D,
    /// Progress between goals `k - 1` and `k`.
    pub u: f64,
    /// Heading offset (rad, counter-clockwise positive) last measured
    /// against goal `k - 1`.
    pub theta_prev: f64,
    /// Heading offset measured against goal `k`.
    pub theta_curr: f64,
    /// Map-to-odometry alignment accumulated from visual corrections.
    pub alignment: Pose2D,
}

/// One tick's visual correction, for tracing and benchmarking.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionReport {
    pub tick: u64,
    pub t_us: u64,
    pub k: usize,
    pub u: f64,
    /// Map index of the first candidate.
    pub first: usize,
    /// Peak shift per candidate, in sensor pixels.
    pub deltas: Vec<i32>,
    /// Peak correlation per candidate.
    pub rhos: Vec<f64>,
    pub dtheta: f64,
    pub drho: f64,
    /// Vision step wall time; zero unless latency measurement is enabled.
    pub latency_us: u64,
}

impl CorrectionReport {
    /// Peak shift and value against the current goal frame.
    pub fn goal_match(&self) -> (i32, f64) {
        let i = self.k - self.first;
        (self.deltas[i], self.rhos[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TickOutcome {
    Drive {
        command: VelocityCommand,
        report: Option<CorrectionReport>,
    },
    /// Every goal has been reached.
    Complete,
}

/// Relative transform from the odometry pose to a goal: `odom^-1 * goal`.
pub fn goal_transform(odom: &Pose2D, goal: &Pose2D) -> Pose2D {
    odom.inverse() * *goal
}

/// Projection of the robot's progress from `prev` onto the segment
/// `prev -> curr`, as a fraction of its length. Not clamped.
pub fn interpolation_factor(
    prev: &Pose2D,
    curr: &Pose2D,
    current: &Pose2D,
) -> Result<f64, DegenerateSegment> {
    let seg = goal_transform(prev, curr);
    let pos = goal_transform(prev, current);
    let len2 = seg.x * seg.x + seg.y * seg.y;
    if len2 <= f64::EPSILON * f64::EPSILON {
        return Err(DegenerateSegment);
    }
    Ok((seg.x * pos.x + seg.y * pos.y) / len2)
}

/// Interpolated heading offset `(1 - u) * theta_prev + u * theta_curr`.
pub fn interpolated_offset(theta_prev: f64, theta_curr: f64, u: f64) -> f64 {
    (1.0 - u) * theta_prev + u * theta_curr
}

/// Rotates the relative goal about the robot by `-g_theta * dtheta`.
pub fn lateral_correction(
    theta_prev: f64,
    theta_curr: f64,
    u: f64,
    g_theta: f64,
    t_delta: &Pose2D,
) -> Pose2D {
    let dtheta = interpolated_offset(theta_prev, theta_curr, u);
    Pose2D::rotation(-g_theta * dtheta) * *t_delta
}

/// Signed along-path offset in goal intervals.
///
/// `rhos[i]` is the peak correlation of the candidate at relative offset
/// `first_offset + i` from the current goal. Values at or below `rho_bar`
/// carry no weight; with no weight left the offset is zero.
pub fn along_path_offset(rhos: &[f64], first_offset: i64, u: f64, rho_bar: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &rho) in rhos.iter().enumerate() {
        let w = (rho - rho_bar).max(0.0);
        num += (first_offset + i as i64) as f64 * w;
        den += w;
    }
    if den > 0.0 {
        num / den - u
    } else {
        0.0
    }
}

/// Scales the goal translation by `(|t| - g_rho * drho * delta_d) / |t|`,
/// never below zero. Pure-rotation goals are returned unchanged.
pub fn apply_along_path(t_delta: &Pose2D, drho: f64, g_rho: f64, delta_d: f64) -> Pose2D {
    let norm = t_delta.norm();
    if norm == 0.0 {
        return *t_delta;
    }
    let scale = ((norm - g_rho * drho * delta_d) / norm).max(0.0);
    Pose2D {
        x: t_delta.x * scale,
        y: t_delta.y * scale,
        theta: t_delta.theta,
    }
}

/// Proportional point-to-pose steering at constant forward speed.
pub fn steer_towards(t_delta: &Pose2D, params: &ControllerParams) -> VelocityCommand {
    let bearing = if t_delta.norm() > 0.0 {
        t_delta.y.atan2(t_delta.x)
    } else {
        normalize_angle(t_delta.theta)
    };
    let omega =
        (params.heading_gain * bearing).clamp(-params.max_angular_rate, params.max_angular_rate);
    VelocityCommand {
        v: params.speed,
        omega,
    }
}

/// Correlation results for the candidates `first..first + results.len()`.
#[derive(Debug, Clone)]
pub struct GoalMatch {
    pub first: usize,
    pub results: Vec<CorrelationResult>,
}

/// Drives a repeat run against one map.
pub struct RepeatController {
    params: ControllerParams,
    geometry: MapGeometry,
    goals: Vec<Pose2D>,
    frames: Vec<CompressedFrame>,
    engine: CorrelationEngine,
    prepared: Option<PreparedSearchSpace>,
    prepared_k: usize,
    state: GoalState,
    tick: u64,
}

impl RepeatController {
    pub fn new(map: &TopometricMap, params: ControllerParams) -> Result<Self, ControlError> {
        if map.is_empty() {
            return Err(ControlError::EmptyMap);
        }
        if params.compression == 0 || params.compression > map.geometry().width as usize {
            return Err(ControlError::InvalidParameter(format!(
                "compression factor {} invalid for width {}",
                params.compression,
                map.geometry().width
            )));
        }
        if params.gains.g_theta < 0.0 || params.gains.g_rho < 0.0 {
            return Err(ControlError::InvalidParameter(
                "gains must be non-negative".into(),
            ));
        }
        let frames = map
            .nodes()
            .iter()
            .map(|n| compress(&n.frame, params.compression))
            .collect::<Result<Vec<_>, _>>()?;
        let k = if map.len() >= 2 { 1 } else { 0 };
        Ok(Self {
            params,
            geometry: *map.geometry(),
            goals: map.poses().collect(),
            frames,
            engine: CorrelationEngine::new(),
            prepared: None,
            prepared_k: usize::MAX,
            state: GoalState {
                k,
                t_delta: Pose2D::IDENTITY,
                u: 0.0,
                theta_prev: 0.0,
                theta_curr: 0.0,
                alignment: Pose2D::IDENTITY,
            },
            tick: 0,
        })
    }

    pub fn state(&self) -> &GoalState {
        &self.state
    }

    pub fn params(&self) -> &ControllerParams {
        &self.params
    }

    pub fn goal_count(&self) -> usize {
        self.goals.len()
    }

    /// Goal `j` in the odometry frame.
    pub fn goal(&self, j: usize) -> Pose2D {
        self.state.alignment * self.goals[j]
    }

    /// Advances past reached goals; returns false once all are reached.
    fn advance_goals(&mut self, odom: &Pose2D) -> bool {
        loop {
            let k = self.state.k;
            if k >= self.goals.len() {
                return false;
            }
            let goal = self.goal(k);
            let prev = self.goal(k.saturating_sub(1));
            let u = interpolation_factor(&prev, &goal, odom).unwrap_or(1.0);
            self.state.u = u;
            if odom.distance_to(&goal) < self.params.goal_tolerance || u >= 1.0 {
                self.state.k += 1;
                self.state.theta_prev = self.state.theta_curr;
                continue;
            }
            return true;
        }
    }

    /// Correlates `frame` against the search space around goal `k`.
    pub fn match_goal(&mut self, k: usize, frame: &EventFrame) -> Result<GoalMatch, ControlError> {
        let repeat = compress(frame, self.params.compression)?;
        if self.prepared.is_none() || self.prepared_k != k {
            let space = SearchSpace::over(&self.frames, k, self.params.search_half_width)?;
            self.prepared = Some(self.engine.prepare(&space)?);
            self.prepared_k = k;
        }
        let prepared = self.prepared.as_ref().expect("prepared above");
        let results = self.engine.correlate_prepared(prepared, &repeat)?;
        Ok(GoalMatch {
            first: prepared.first(),
            results,
        })
    }

    /// One control step with visual corrections from `frame`.
    pub fn control_tick(
        &mut self,
        odom: &Pose2D,
        frame: &EventFrame,
        t_us: u64,
    ) -> Result<TickOutcome, ControlError> {
        self.step(odom, Some(frame), t_us)
    }

    /// One control step from odometry alone (the baseline).
    pub fn odom_only_tick(
        &mut self,
        odom: &Pose2D,
        t_us: u64,
    ) -> Result<TickOutcome, ControlError> {
        self.step(odom, None, t_us)
    }

    fn step(
        &mut self,
        odom: &Pose2D,
        frame: Option<&EventFrame>,
        t_us: u64,
    ) -> Result<TickOutcome, ControlError> {
        let tick = self.tick;
        self.tick += 1;
        if !self.advance_goals(odom) {
            return Ok(TickOutcome::Complete);
        }
        let k = self.state.k;
        let goal_map = self.goals[k];
        let mut t_delta = goal_transform(odom, &(self.state.alignment * goal_map));
        let mut report = None;

        if let Some(frame) = frame {
            let started = self.params.measure_latency.then(Instant::now);
            let GoalMatch { first, results } = self.match_goal(k, frame)?;

            // Image columns grow to the right, so content appearing further
            // left (positive shift) means the robot has yawed clockwise.
            let goal_res = &results[k - first];
            let theta_curr = -pixel_offset_to_angle(
                goal_res.delta as f64,
                goal_res.width(),
                self.geometry.fov_deg(),
            )
            .to_radians();
            self.state.theta_curr = theta_curr;

            let u = self.state.u;
            let u_weight = if !(-0.5..=1.5).contains(&u) {
                u.clamp(0.0, 1.0)
            } else {
                u
            };
            let gains = self.params.gains;
            let dtheta = interpolated_offset(self.state.theta_prev, theta_curr, u_weight);
            t_delta = lateral_correction(
                self.state.theta_prev,
                theta_curr,
                u_weight,
                gains.g_theta,
                &t_delta,
            );

            let rhos: Vec<f64> = results.iter().map(|r| r.rho).collect();
            let rho_bar = gains.rho_bar.resolve(&rhos);
            let drho = along_path_offset(&rhos, first as i64 - k as i64, u, rho_bar);
            t_delta = apply_along_path(&t_delta, drho, gains.g_rho, self.geometry.delta_d());

            self.state.alignment = *odom * t_delta * goal_map.inverse();

            let latency_us = started.map_or(0, |s| s.elapsed().as_micros() as u64);
            report = Some(CorrectionReport {
                tick,
                t_us,
                k,
                u,
                first,
                deltas: results.iter().map(|r| r.delta_pixels()).collect(),
                rhos,
                dtheta,
                drho,
                latency_us,
            });
        }

        self.state.t_delta = t_delta;
        Ok(TickOutcome::Drive {
            command: steer_towards(&t_delta, &self.params),
            report,
        })
    }
}

/// Writes reports as `tick,t_us,k,u,delta_px,rho,dtheta_rad,drho,latency_us`,
/// with `delta_px` and `rho` taken against the current goal frame.
pub fn write_corrections_csv<W: std::io::Write>(
    reports: &[CorrectionReport],
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "tick,t_us,k,u,delta_px,rho,dtheta_rad,drho,latency_us")?;
    for r in reports {
        let (delta, rho) = r.goal_match();
        writeln!(
            out,
            "{},{},{},{:.6},{},{:.3},{:.9},{:.6},{}",
            r.tick, r.t_us, r.k, r.u, delta, rho, r.dtheta, r.drho, r.latency_us
        )?;
    }
    Ok(())
}
