//! Pinhole projection and motion-driven event synthesis.

use crate::event::Event;
use crate::pose::Pose2D;

use super::world::{Landmark, World};
use super::SimError;

/// Forward-facing pinhole camera at the robot origin. Image columns grow
/// to the robot's right, rows grow downwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinholeCamera {
    pub width: usize,
    pub height: usize,
    pub fov_deg: f64,
    pub near: f64,
    pub far: f64,
}

impl Default for PinholeCamera {
    fn default() -> Self {
        Self {
            width: 320,
            height: 180,
            fov_deg: 36.0,
            near: 0.05,
            far: 25.0,
        }
    }
}

impl PinholeCamera {
    pub fn new(width: usize, height: usize, fov_deg: f64) -> Result<Self, SimError> {
        let cam = Self {
            width,
            height,
            fov_deg,
            ..Self::default()
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.width == 0 || self.height == 0 {
            return Err(SimError::InvalidCamera(
                "resolution must be positive".into(),
            ));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(SimError::InvalidCamera(format!(
                "field of view {} deg outside (0, 180)",
                self.fov_deg
            )));
        }
        if !(self.near > 0.0 && self.far > self.near) {
            return Err(SimError::InvalidCamera("need 0 < near < far".into()));
        }
        Ok(())
    }

    /// Focal length in pixels (square pixels).
    pub fn focal(&self) -> f64 {
        (self.width as f64 / 2.0) / (self.fov_deg.to_radians() / 2.0).tan()
    }

    /// Angular extent of one pixel at the image centre, radians.
    pub fn pixel_angle(&self) -> f64 {
        (1.0 / self.focal()).atan()
    }

    /// Continuous image coordinates of `l` seen from `pose`, or `None`
    /// when it is behind, too close, too far or outside the image.
    pub fn project(&self, pose: &Pose2D, l: &Landmark) -> Option<(f64, f64)> {
        let (xr, yr) = pose.inverse_transform_point(l.x, l.y);
        if xr < self.near || xr > self.far {
            return None;
        }
        let f = self.focal();
        let u = self.width as f64 / 2.0 - f * yr / xr;
        let v = self.height as f64 / 2.0 - f * l.z / xr;
        (u >= 0.0 && u < self.width as f64 && v >= 0.0 && v < self.height as f64).then_some((u, v))
    }

    /// Integer pixel containing the projection.
    pub fn pixel(&self, pose: &Pose2D, l: &Landmark) -> Option<(i32, i32)> {
        self.project(pose, l)
            .map(|(u, v)| (u.floor() as i32, v.floor() as i32))
    }
}

/// A camera pose with its projection constants evaluated once.
struct Viewpoint {
    x: f64,
    y: f64,
    cos: f64,
    sin: f64,
    focal: f64,
    cam: PinholeCamera,
}

impl Viewpoint {
    fn new(cam: &PinholeCamera, pose: &Pose2D) -> Self {
        Self {
            x: pose.x,
            y: pose.y,
            cos: pose.theta.cos(),
            sin: pose.theta.sin(),
            focal: cam.focal(),
            cam: *cam,
        }
    }

    /// Same result as [`PinholeCamera::pixel`].
    #[inline]
    fn pixel(&self, l: &Landmark) -> Option<(i32, i32)> {
        let (dx, dy) = (l.x - self.x, l.y - self.y);
        let xr = self.cos * dx + self.sin * dy;
        if xr < self.cam.near || xr > self.cam.far {
            return None;
        }
        let yr = -self.sin * dx + self.cos * dy;
        let u = self.cam.width as f64 / 2.0 - self.focal * yr / xr;
        let v = self.cam.height as f64 / 2.0 - self.focal * l.z / xr;
        (u >= 0.0 && u < self.cam.width as f64 && v >= 0.0 && v < self.cam.height as f64)
            .then(|| (u.floor() as i32, v.floor() as i32))
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform draw in [0, 1) that depends only on its inputs.
fn unit_hash(seed: u64, landmark: usize, t: u64, u: i32, v: i32) -> f64 {
    let mut h = splitmix(seed);
    h = splitmix(h ^ landmark as u64);
    h = splitmix(h ^ t);
    h = splitmix(h ^ ((u as u32 as u64) << 32 | v as u32 as u64));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

const CELL: f64 = 2.0;
/// Candidate sets stay valid while the camera stays within this distance
/// and heading change of the pose they were gathered at.
const REGATHER_DIST: f64 = 0.3;
const REGATHER_ANGLE: f64 = 0.07;

/// Renders events for a world through a camera. Keeps a coarse spatial
/// index, a set of landmarks that may be visible near the current pose,
/// and their last projected pixels, so consecutive calls along a
/// trajectory only project what they need.
#[derive(Debug, Clone)]
pub struct EventRenderer {
    camera: PinholeCamera,
    landmarks: Vec<Landmark>,
    seed: u64,
    origin: (f64, f64),
    cols: usize,
    rows: usize,
    cells: Vec<Vec<u32>>,
    micro_step_us: u64,
    candidates: Vec<u32>,
    gathered_at: Option<Pose2D>,
    prev: Vec<Option<(i32, i32)>>,
    prev_pose: Option<Pose2D>,
}

impl EventRenderer {
    pub fn new(world: &World, camera: PinholeCamera) -> Result<Self, SimError> {
        camera.validate()?;
        let (x0, y0, x1, y1) = world.bounds();
        let cols = ((x1 - x0) / CELL).floor() as usize + 1;
        let rows = ((y1 - y0) / CELL).floor() as usize + 1;
        let mut cells = vec![Vec::new(); cols * rows];
        for (i, l) in world.landmarks.iter().enumerate() {
            let c = ((l.x - x0) / CELL) as usize;
            let r = ((l.y - y0) / CELL) as usize;
            cells[r * cols + c].push(i as u32);
        }
        Ok(Self {
            camera,
            landmarks: world.landmarks.clone(),
            seed: world.seed,
            origin: (x0, y0),
            cols,
            rows,
            cells,
            micro_step_us: 1000,
            candidates: Vec::new(),
            gathered_at: None,
            prev: Vec::new(),
            prev_pose: None,
        })
    }

    pub fn camera(&self) -> &PinholeCamera {
        &self.camera
    }

    fn needs_gather(&self, a: &Pose2D, b: &Pose2D) -> bool {
        let Some(g) = self.gathered_at else {
            return true;
        };
        [a, b].iter().any(|p| {
            p.distance_to(&g) > REGATHER_DIST
                || crate::pose::normalize_angle(p.theta - g.theta).abs() > REGATHER_ANGLE
        })
    }

    /// Collects every landmark that could project into the image from a
    /// pose within the regather tolerances of `a`.
    fn gather(&mut self, a: &Pose2D) {
        self.candidates.clear();
        self.gathered_at = Some(*a);
        self.prev_pose = None;
        let reach = self.camera.far + REGATHER_DIST;
        let cell_of =
            |x: f64, o: f64, n: usize| (((x - o) / CELL).floor().max(0.0) as usize).min(n - 1);
        let (ox, oy) = self.origin;
        let (c0, c1) = (
            cell_of(a.x - reach, ox, self.cols),
            cell_of(a.x + reach, ox, self.cols),
        );
        let (r0, r1) = (
            cell_of(a.y - reach, oy, self.rows),
            cell_of(a.y + reach, oy, self.rows),
        );
        let half_fov = (self.camera.fov_deg / 2.0).to_radians() + REGATHER_ANGLE;
        for r in r0..=r1 {
            for c in c0..=c1 {
                for &i in &self.cells[r * self.cols + c] {
                    let l = &self.landmarks[i as usize];
                    let (xr, yr) = a.inverse_transform_point(l.x, l.y);
                    let dist = xr.hypot(yr);
                    if dist > reach {
                        continue;
                    }
                    let keep = dist <= REGATHER_DIST + self.camera.near
                        || yr.atan2(xr).abs() <= half_fov + (REGATHER_DIST / dist).asin();
                    if keep {
                        self.candidates.push(i);
                    }
                }
            }
        }
        self.candidates.sort_unstable();
    }

    /// Appends events for the motion from `pose_t0` at `t0` to `pose_t1`
    /// at `t1` (microseconds), interpolating the pose over micro-steps of
    /// at most 1 ms. Events are in time order.
    pub fn render(
        &mut self,
        pose_t0: &Pose2D,
        pose_t1: &Pose2D,
        t0: u64,
        t1: u64,
        out: &mut Vec<Event>,
    ) {
        if t1 <= t0 || pose_t0 == pose_t1 {
            return;
        }
        if self.needs_gather(pose_t0, pose_t1) {
            self.gather(pose_t0);
        }
        let steps = (t1 - t0).div_ceil(self.micro_step_us);
        let cam = self.camera;
        let mut prev = std::mem::take(&mut self.prev);
        if self.prev_pose != Some(*pose_t0) {
            prev.clear();
            let view = Viewpoint::new(&cam, pose_t0);
            prev.extend(
                self.candidates
                    .iter()
                    .map(|&i| view.pixel(&self.landmarks[i as usize])),
            );
        }
        let dtheta = crate::pose::normalize_angle(pose_t1.theta - pose_t0.theta);
        for step in 1..=steps {
            let f = step as f64 / steps as f64;
            let pose = if step == steps {
                *pose_t1
            } else {
                Pose2D::new(
                    pose_t0.x + f * (pose_t1.x - pose_t0.x),
                    pose_t0.y + f * (pose_t1.y - pose_t0.y),
                    pose_t0.theta + f * dtheta,
                )
            };
            let ta = t0 + (t1 - t0) * (step - 1) / steps;
            let tb = t0 + (t1 - t0) * step / steps;
            let t = (ta + tb) / 2;
            let view = Viewpoint::new(&cam, &pose);
            for (slot, &i) in prev.iter_mut().zip(&self.candidates) {
                let l = &self.landmarks[i as usize];
                let next = view.pixel(l);
                if let (Some((u0, v0)), Some((u1, v1))) = (*slot, next) {
                    let (du, dv) = (u1 - u0, v1 - v0);
                    let n = du.abs().max(dv.abs());
                    let p = if du < 0 { -1 } else { 1 };
                    for j in 1..=n {
                        let u = u0 + (du as f64 * j as f64 / n as f64).round() as i32;
                        let v = v0 + (dv as f64 * j as f64 / n as f64).round() as i32;
                        if unit_hash(self.seed, i as usize, t, u, v) < l.salience {
                            out.push(Event {
                                t,
                                u: u as u32,
                                v: v as u32,
                                p,
                            });
                        }
                    }
                }
                *slot = next;
            }
        }
        self.prev = prev;
        self.prev_pose = Some(*pose_t1);
    }
}

/// Events produced by moving the camera from `pose_t0` to `pose_t1`
/// during `[t0, t1)`.
pub fn render_events(
    world: &World,
    camera: &PinholeCamera,
    pose_t0: &Pose2D,
    pose_t1: &Pose2D,
    t0: u64,
    t1: u64,
) -> Result<Vec<Event>, SimError> {
    let mut r = EventRenderer::new(world, *camera)?;
    let mut out = Vec::new();
    r.render(pose_t0, pose_t1, t0, t1, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wall_world(salience: f64) -> World {
        let mut ls = Vec::new();
        for i in 0..30 {
            let y = -3.0 + 0.2 * i as f64;
            ls.push(Landmark {
                x: 6.0,
                y,
                z: 0.1 * (i % 5) as f64 - 0.2,
                salience,
            });
        }
        World::new(ls, 11).unwrap()
    }

    #[test]
    fn focal_matches_field_of_view() {
        let cam = PinholeCamera::default();
        assert!((cam.focal() - 160.0 / 18f64.to_radians().tan()).abs() < 1e-9);
        assert!(PinholeCamera::new(320, 180, 180.0).is_err());
        assert!(PinholeCamera::new(320, 180, 0.0).is_err());
    }

    #[test]
    fn projection_geometry() {
        let cam = PinholeCamera::default();
        let ahead = Landmark {
            x: 5.0,
            y: 0.0,
            z: 0.0,
            salience: 1.0,
        };
        assert_eq!(cam.project(&Pose2D::IDENTITY, &ahead), Some((160.0, 90.0)));
        let left = Landmark {
            x: 5.0,
            y: 0.5,
            z: 0.0,
            salience: 1.0,
        };
        assert!(cam.project(&Pose2D::IDENTITY, &left).unwrap().0 < 160.0);
        let behind = Landmark {
            x: -5.0,
            y: 0.0,
            z: 0.0,
            salience: 1.0,
        };
        assert_eq!(cam.project(&Pose2D::IDENTITY, &behind), None);
    }

    #[test]
    fn viewpoint_agrees_with_camera() {
        let w = wall_world(1.0);
        let cam = PinholeCamera::default();
        for k in 0..50 {
            let pose = Pose2D::new(0.05 * k as f64, -0.02 * k as f64, 0.013 * k as f64 - 0.3);
            let view = Viewpoint::new(&cam, &pose);
            for l in &w.landmarks {
                assert_eq!(view.pixel(l), cam.pixel(&pose, l));
            }
        }
    }

    #[test]
    fn stationary_robot_emits_nothing() {
        let w = wall_world(1.0);
        let cam = PinholeCamera::default();
        let p = Pose2D::new(1.0, 0.2, 0.1);
        assert!(render_events(&w, &cam, &p, &p, 0, 66_000)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn one_pixel_rotation_moves_every_visible_landmark() {
        let w = wall_world(1.0);
        let cam = PinholeCamera::default();
        let p0 = Pose2D::IDENTITY;
        // A little over one pixel so no landmark stays inside its column.
        let p1 = Pose2D::new(0.0, 0.0, cam.pixel_angle() * 1.05);
        let events = render_events(&w, &cam, &p0, &p1, 0, 1000).unwrap();
        let mut visible = 0;
        for l in &w.landmarks {
            let (Some((u0, v0)), Some(_)) = (cam.pixel(&p0, l), cam.pixel(&p1, l)) else {
                continue;
            };
            visible += 1;
            assert!(
                events
                    .iter()
                    .any(|e| e.v as i32 == v0 && (e.u as i32 - u0).abs() == 1),
                "landmark at {u0},{v0} emitted nothing"
            );
        }
        assert!(visible > 10);
        // Turning left moves content right.
        assert!(events.iter().all(|e| e.p == 1));
    }

    #[test]
    fn rendering_is_deterministic_and_time_ordered() {
        let w = wall_world(0.5);
        let cam = PinholeCamera::default();
        let p0 = Pose2D::new(0.0, 0.0, 0.0);
        let p1 = Pose2D::new(0.5, 0.05, 0.02);
        let a = render_events(&w, &cam, &p0, &p1, 0, 66_000).unwrap();
        let b = render_events(&w, &cam, &p0, &p1, 0, 66_000).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b);
        assert!(a.windows(2).all(|e| e[0].t <= e[1].t));
        assert!(a.iter().all(|e| e.t < 66_000));
    }

    #[test]
    fn incremental_rendering_matches_fresh_renderer() {
        let path = super::super::world::Path::straight(8.0);
        let w = World::along_path(&path, 3, &Default::default()).unwrap();
        let cam = PinholeCamera::default();
        let mut kept = EventRenderer::new(&w, cam).unwrap();
        let mut a = Vec::new();
        let mut b = Vec::new();
        let mut pose = Pose2D::IDENTITY;
        for i in 0..400u64 {
            let next = Pose2D::new(pose.x + 0.01, pose.y + 0.0005, pose.theta + 0.002);
            kept.render(&pose, &next, i * 1000, (i + 1) * 1000, &mut a);
            b.extend(render_events(&w, &cam, &pose, &next, i * 1000, (i + 1) * 1000).unwrap());
            pose = next;
        }
        assert!(a.len() > 1000);
        assert_eq!(a, b);
    }

    #[test]
    fn salience_thins_events() {
        let cam = PinholeCamera::default();
        let p0 = Pose2D::IDENTITY;
        let p1 = Pose2D::new(0.0, 0.0, 0.05);
        let full = render_events(&wall_world(1.0), &cam, &p0, &p1, 0, 20_000).unwrap();
        let half = render_events(&wall_world(0.5), &cam, &p0, &p1, 0, 20_000).unwrap();
        let ratio = half.len() as f64 / full.len() as f64;
        assert!((ratio - 0.5).abs() < 0.1, "{ratio}");
    }
}
