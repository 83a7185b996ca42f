//! Point-landmark worlds, waypoint paths and their text formats.
//!
//! World file: one landmark per line as `x,y,z,salience`, plus a
//! `seed=<n>` line. Trajectory file: one waypoint per line as `x,y`.
//! Blank lines and `#` comments are ignored in both.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SimError;

/// A world point. `z` is height relative to the camera's optical axis;
/// `salience` is the probability that a pixel crossing emits an event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Landmark {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub salience: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub landmarks: Vec<Landmark>,
    pub seed: u64,
}

impl World {
    pub fn new(landmarks: Vec<Landmark>, seed: u64) -> Result<Self, SimError> {
        if landmarks.is_empty() {
            return Err(SimError::InvalidWorld(
                "world needs at least one landmark".into(),
            ));
        }
        if let Some(l) = landmarks.iter().find(|l| {
            !(0.0..=1.0).contains(&l.salience)
                || !(l.x.is_finite() && l.y.is_finite() && l.z.is_finite())
        }) {
            return Err(SimError::InvalidWorld(format!(
                "landmark ({}, {}, {}) has salience {} outside [0, 1] or non-finite position",
                l.x, l.y, l.z, l.salience
            )));
        }
        Ok(Self { landmarks, seed })
    }

    /// Axis-aligned bounds `(min_x, min_y, max_x, max_y)`.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        self.landmarks.iter().fold(
            (
                f64::INFINITY,
                f64::INFINITY,
                f64::NEG_INFINITY,
                f64::NEG_INFINITY,
            ),
            |(a, b, c, d), l| (a.min(l.x), b.min(l.y), c.max(l.x), d.max(l.y)),
        )
    }

    pub fn parse(text: &str) -> Result<Self, SimError> {
        let mut seed = None;
        let mut landmarks = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |why: &str| SimError::Parse {
                line: i + 1,
                reason: why.to_string(),
            };
            if let Some(v) = line.strip_prefix("seed=") {
                seed = Some(v.trim().parse().map_err(|_| bad("bad seed"))?);
                continue;
            }
            let f: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| bad("expected `x,y,z,salience`"))?;
            if f.len() != 4 {
                return Err(bad("expected `x,y,z,salience`"));
            }
            landmarks.push(Landmark {
                x: f[0],
                y: f[1],
                z: f[2],
                salience: f[3],
            });
        }
        let seed = seed.ok_or(SimError::Parse {
            line: 0,
            reason: "missing `seed=<n>` line".into(),
        })?;
        Self::new(landmarks, seed)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("seed={}\n", self.seed);
        for l in &self.landmarks {
            let _ = writeln!(s, "{},{},{},{}", l.x, l.y, l.z, l.salience);
        }
        s
    }

    /// Scatters vertical landmark columns along both sides of a path, like
    /// the walls and fittings of a corridor, plus sparse clutter further
    /// out. Nothing is placed within `clearance` of the path itself.
    pub fn along_path(path: &Path, seed: u64, layout: &CorridorLayout) -> Result<Self, SimError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x05ee_d0f3_011d);
        let mut landmarks = Vec::new();
        let total = path.length();
        let mut s = -layout.run_out;
        while s < total + layout.run_out {
            s += rng.random_range(layout.column_spacing.0..layout.column_spacing.1);
            let (px, py, heading) = path.extended_point(s);
            let (nx, ny) = (-heading.sin(), heading.cos());
            for side in [-1.0, 1.0] {
                let off = side * rng.random_range(layout.wall_offset.0..layout.wall_offset.1);
                let (x, y) = (px + nx * off, py + ny * off);
                if path.distance_to(x, y) < layout.clearance {
                    continue;
                }
                let n = rng.random_range(layout.column_points.0..=layout.column_points.1);
                let z0 = rng.random_range(-0.45..0.1);
                let salience = rng.random_range(0.6..1.0);
                for i in 0..n {
                    landmarks.push(Landmark {
                        x,
                        y,
                        z: z0 + 0.07 * i as f64,
                        salience,
                    });
                }
            }
            if rng.random_bool(layout.clutter_probability) {
                let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let off = side * rng.random_range(layout.wall_offset.1..layout.clutter_offset);
                let (x, y) = (px + nx * off, py + ny * off);
                if path.distance_to(x, y) >= layout.clearance {
                    landmarks.push(Landmark {
                        x,
                        y,
                        z: rng.random_range(-0.4..0.9),
                        salience: rng.random_range(0.5..1.0),
                    });
                }
            }
        }
        Self::new(landmarks, seed)
    }
}

/// Parameters of [`World::along_path`]. Ranges are half-open `(lo, hi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorridorLayout {
    pub column_spacing: (f64, f64),
    pub wall_offset: (f64, f64),
    pub column_points: (usize, usize),
    pub clutter_probability: f64,
    pub clutter_offset: f64,
    pub clearance: f64,
    /// Extra corridor length generated before the start and after the end.
    pub run_out: f64,
}

impl Default for CorridorLayout {
    fn default() -> Self {
        Self {
            column_spacing: (0.1, 0.3),
            wall_offset: (0.9, 2.2),
            column_points: (6, 16),
            clutter_probability: 0.8,
            clutter_offset: 6.0,
            clearance: 0.7,
            run_out: 12.0,
        }
    }
}

/// A polyline of waypoints with arc-length parameterization.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    points: Vec<(f64, f64)>,
    cumulative: Vec<f64>,
}

impl Path {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, SimError> {
        if points.len() < 2 {
            return Err(SimError::InvalidPath(
                "path needs at least two waypoints".into(),
            ));
        }
        let mut cumulative = vec![0.0];
        for w in points.windows(2) {
            let d = (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1);
            if d <= 1e-9 {
                return Err(SimError::InvalidPath(
                    "consecutive waypoints coincide".into(),
                ));
            }
            cumulative.push(cumulative.last().unwrap() + d);
        }
        Ok(Self { points, cumulative })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    pub fn start_heading(&self) -> f64 {
        let (a, b) = (self.points[0], self.points[1]);
        (b.1 - a.1).atan2(b.0 - a.0)
    }

    /// Point and segment heading at arc length `s`, clamped to the path.
    pub fn point_at(&self, s: f64) -> (f64, f64, f64) {
        let s = s.clamp(0.0, self.length());
        let i = match self.cumulative.partition_point(|&c| c <= s) {
            0 => 0,
            n => (n - 1).min(self.points.len() - 2),
        };
        let (a, b) = (self.points[i], self.points[i + 1]);
        let seg = self.cumulative[i + 1] - self.cumulative[i];
        let f = (s - self.cumulative[i]) / seg;
        (
            a.0 + f * (b.0 - a.0),
            a.1 + f * (b.1 - a.1),
            (b.1 - a.1).atan2(b.0 - a.0),
        )
    }

    /// Like [`point_at`](Self::point_at) but extrapolates straight past
    /// either end.
    pub fn extended_point(&self, s: f64) -> (f64, f64, f64) {
        if s < 0.0 {
            let (x, y, h) = self.point_at(0.0);
            (x + s * h.cos(), y + s * h.sin(), h)
        } else if s > self.length() {
            let (x, y, h) = self.point_at(self.length());
            let e = s - self.length();
            (x + e * h.cos(), y + e * h.sin(), h)
        } else {
            self.point_at(s)
        }
    }

    /// Closest point on segments whose arc-length span intersects
    /// `[lo, hi]`; returns `(arc_length, distance)`.
    pub fn project_within(&self, x: f64, y: f64, lo: f64, hi: f64) -> (f64, f64) {
        let mut best = (0.0, f64::INFINITY);
        for i in 0..self.points.len() - 1 {
            let (s0, s1) = (self.cumulative[i], self.cumulative[i + 1]);
            if s1 < lo || s0 > hi {
                continue;
            }
            let (a, b) = (self.points[i], self.points[i + 1]);
            let (dx, dy) = (b.0 - a.0, b.1 - a.1);
            let len2 = dx * dx + dy * dy;
            let f = (((x - a.0) * dx + (y - a.1) * dy) / len2).clamp(0.0, 1.0);
            let (cx, cy) = (a.0 + f * dx, a.1 + f * dy);
            let d = (x - cx).hypot(y - cy);
            if d < best.1 {
                best = (s0 + f * (s1 - s0), d);
            }
        }
        best
    }

    pub fn project(&self, x: f64, y: f64) -> (f64, f64) {
        self.project_within(x, y, f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn distance_to(&self, x: f64, y: f64) -> f64 {
        self.project(x, y).1
    }

    pub fn parse(text: &str) -> Result<Self, SimError> {
        let mut points = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| SimError::Parse {
                    line: i + 1,
                    reason: "expected `x,y`".into(),
                })?;
            if f.len() != 2 {
                return Err(SimError::Parse {
                    line: i + 1,
                    reason: "expected `x,y`".into(),
                });
            }
            points.push((f[0], f[1]));
        }
        Self::new(points)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (x, y) in &self.points {
            let _ = writeln!(s, "{x},{y}");
        }
        s
    }

    /// Straight path of the given length along +x.
    pub fn straight(length: f64) -> Self {
        Self::new(vec![(0.0, 0.0), (length, 0.0)]).expect("positive length")
    }

    /// A U-shaped route of about `length` meters: a long straight, a
    /// left-hand quarter arc, a cross leg, a second quarter arc and a
    /// return straight.
    pub fn u_track(length: f64, radius: f64) -> Self {
        let arc = std::f64::consts::FRAC_PI_2 * radius;
        let first = 0.32 * length;
        let cross = 0.2 * length;
        let last = length - first - cross - 2.0 * arc;
        assert!(last > 0.0, "track too short for the turn radius");
        let mut pts = vec![(0.0, 0.0), (first, 0.0)];
        let arc_steps = (arc / 0.25).ceil() as usize;
        // first arc: centre (first, radius), heading east -> north
        for i in 1..=arc_steps {
            let a = -std::f64::consts::FRAC_PI_2
                + std::f64::consts::FRAC_PI_2 * i as f64 / arc_steps as f64;
            pts.push((first + radius * a.cos(), radius + radius * a.sin()));
        }
        let (cx, cy) = (first + radius, radius + cross);
        pts.push((cx, cy));
        // second arc: centre (first, radius + cross), heading north -> west
        for i in 1..=arc_steps {
            let a = std::f64::consts::FRAC_PI_2 * i as f64 / arc_steps as f64;
            pts.push((first + radius * a.cos(), radius + cross + radius * a.sin()));
        }
        let (ex, ey) = *pts.last().unwrap();
        pts.push((ex - last, ey));
        Self::new(pts).expect("well-formed track")
    }
}
