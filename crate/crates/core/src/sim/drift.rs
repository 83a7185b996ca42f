//! Differential-drive kinematics with a drifting odometry estimate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::controller::VelocityCommand;
use crate::pose::Pose2D;

use super::SimError;

/// How wheel odometry departs from the true motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftModel {
    pub wheel_scale_left: f64,
    pub wheel_scale_right: f64,
    /// Translational noise, m per √m travelled.
    pub noise_sigma_trans: f64,
    /// Rotational noise, rad per √m travelled.
    pub noise_sigma_rot: f64,
    /// Constant heading bias, rad per m travelled.
    pub bias_rot: f64,
    /// Wheel separation used to split commands into wheel speeds, m.
    pub track_width: f64,
}

impl Default for DriftModel {
    fn default() -> Self {
        Self::NONE
    }
}

impl DriftModel {
    pub const NONE: DriftModel = DriftModel {
        wheel_scale_left: 1.0,
        wheel_scale_right: 1.0,
        noise_sigma_trans: 0.0,
        noise_sigma_rot: 0.0,
        bias_rot: 0.0,
        track_width: 0.5,
    };

    pub fn validate(&self) -> Result<(), SimError> {
        let ok = self.wheel_scale_left > 0.0
            && self.wheel_scale_right > 0.0
            && self.noise_sigma_trans >= 0.0
            && self.noise_sigma_rot >= 0.0
            && self.bias_rot.is_finite()
            && self.track_width > 0.0;
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidDrift(format!("{self:?}")))
        }
    }

    pub fn is_identity(&self) -> bool {
        self.wheel_scale_left == 1.0
            && self.wheel_scale_right == 1.0
            && self.noise_sigma_trans == 0.0
            && self.noise_sigma_rot == 0.0
            && self.bias_rot == 0.0
    }
}

/// Pose reached by driving an arc of length `ds` that turns by `dtheta`.
pub fn arc_step(pose: &Pose2D, ds: f64, dtheta: f64) -> Pose2D {
    let local = if dtheta.abs() < 1e-12 {
        Pose2D::new(ds, 0.0, dtheta)
    } else {
        let r = ds / dtheta;
        Pose2D::new(r * dtheta.sin(), r * (1.0 - dtheta.cos()), dtheta)
    };
    *pose * local
}

/// Simulated robot: ground truth and the odometry estimate.
#[derive(Debug, Clone)]
pub struct SimState {
    pub true_pose: Pose2D,
    pub odom_pose: Pose2D,
    pub t: u64,
    pub drift: DriftModel,
    rng: ChaCha8Rng,
    trans_noise: Normal<f64>,
    rot_noise: Normal<f64>,
}

impl SimState {
    pub fn new(start: Pose2D, drift: DriftModel, seed: u64) -> Result<Self, SimError> {
        drift.validate()?;
        if !start.is_finite() {
            return Err(SimError::InvalidPath("start pose is not finite".into()));
        }
        Ok(Self {
            true_pose: start,
            odom_pose: start,
            t: 0,
            drift,
            rng: ChaCha8Rng::seed_from_u64(seed),
            trans_noise: Normal::new(0.0, 1.0).expect("unit normal"),
            rot_noise: Normal::new(0.0, 1.0).expect("unit normal"),
        })
    }

    /// Applies `cmd` for `dt_us` microseconds.
    pub fn step(&mut self, cmd: VelocityCommand, dt_us: u64) {
        assert!(dt_us > 0, "step needs a positive duration");
        let dt = dt_us as f64 * 1e-6;
        self.t += dt_us;
        self.true_pose = arc_step(&self.true_pose, cmd.v * dt, cmd.omega * dt);
        if self.drift.is_identity() {
            self.odom_pose = self.true_pose;
            return;
        }
        let d = &self.drift;
        let half = cmd.omega * d.track_width / 2.0;
        let left = (cmd.v - half) * d.wheel_scale_left;
        let right = (cmd.v + half) * d.wheel_scale_right;
        let mut ds = (left + right) / 2.0 * dt;
        let mut dtheta = (right - left) / d.track_width * dt;
        let dist = ds.abs();
        dtheta += d.bias_rot * dist;
        if d.noise_sigma_trans > 0.0 {
            ds += d.noise_sigma_trans * dist.sqrt() * self.trans_noise.sample(&mut self.rng);
        }
        if d.noise_sigma_rot > 0.0 {
            dtheta += d.noise_sigma_rot * dist.sqrt() * self.rot_noise.sample(&mut self.rng);
        }
        self.odom_pose = arc_step(&self.odom_pose, ds, dtheta);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const FWD: VelocityCommand = VelocityCommand {
        v: 0.35,
        omega: 0.0,
    };

    #[test]
    fn straight_kinematics() {
        let mut s = SimState::new(Pose2D::IDENTITY, DriftModel::NONE, 1).unwrap();
        s.step(FWD, 1_000_000);
        assert!((s.true_pose.x - 0.35).abs() < 1e-12);
        assert_eq!(s.true_pose.y, 0.0);
        assert_eq!(s.t, 1_000_000);
    }

    #[test]
    fn arc_kinematics_closes_circle() {
        let mut s = SimState::new(Pose2D::IDENTITY, DriftModel::NONE, 1).unwrap();
        let cmd = VelocityCommand { v: 0.5, omega: 0.5 };
        let period = (2.0 * std::f64::consts::PI / 0.5 * 1e6) as u64;
        for _ in 0..1000 {
            s.step(cmd, period / 1000);
        }
        assert!(s.true_pose.norm() < 1e-3, "{:?}", s.true_pose);
    }

    #[test]
    fn wheel_asymmetry_bends_odometry_only() {
        let drift = DriftModel {
            wheel_scale_left: 0.99,
            wheel_scale_right: 1.01,
            ..DriftModel::NONE
        };
        let mut s = SimState::new(Pose2D::IDENTITY, drift, 1).unwrap();
        for _ in 0..100 {
            s.step(FWD, 100_000);
        }
        assert_eq!(s.true_pose.theta, 0.0);
        // 3.5 m with a 0.02 relative wheel difference over a 0.5 m track.
        let expected = 0.35 * 10.0 * 0.02 / 0.5;
        assert!(
            (s.odom_pose.theta - expected).abs() < 1e-9,
            "{}",
            s.odom_pose.theta
        );
    }

    #[test]
    fn bias_accumulates_per_metre() {
        let drift = DriftModel {
            bias_rot: 0.01,
            ..DriftModel::NONE
        };
        let mut s = SimState::new(Pose2D::IDENTITY, drift, 1).unwrap();
        for _ in 0..1000 {
            s.step(FWD, 10_000);
        }
        assert!((s.odom_pose.theta - 0.035).abs() < 1e-9);
    }

    #[test]
    fn invalid_drift_rejected() {
        let bad = DriftModel {
            wheel_scale_left: 0.0,
            ..DriftModel::NONE
        };
        assert!(SimState::new(Pose2D::IDENTITY, bad, 1).is_err());
        let bad = DriftModel {
            noise_sigma_rot: -1.0,
            ..DriftModel::NONE
        };
        assert!(SimState::new(Pose2D::IDENTITY, bad, 1).is_err());
    }

    #[test]
    fn noise_is_seeded() {
        let drift = DriftModel {
            noise_sigma_trans: 0.01,
            noise_sigma_rot: 0.01,
            ..DriftModel::NONE
        };
        let run = |seed| {
            let mut s = SimState::new(Pose2D::IDENTITY, drift, seed).unwrap();
            for _ in 0..200 {
                s.step(FWD, 5_000);
            }
            s.odom_pose
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }

    proptest! {
        #[test]
        fn identity_drift_keeps_odometry_exact(
            cmds in prop::collection::vec((-0.5f64..0.5, -1.5f64..1.5, 1u64..50_000), 1..300),
        ) {
            let mut s = SimState::new(Pose2D::new(1.0, -2.0, 0.3), DriftModel::NONE, 9).unwrap();
            for (v, omega, dt) in cmds {
                s.step(VelocityCommand { v, omega }, dt);
                prop_assert_eq!(s.odom_pose, s.true_pose);
            }
        }
    }
}
