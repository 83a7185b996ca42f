//! Flat `key=value` run configuration.
//!
//! Every tunable has a default; a config file only needs the keys it
//! changes. [`Config::to_text`] writes every key, and parsing that output
//! reproduces the same configuration.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::controller::{ControllerParams, CorrectionGains, RhoThreshold};
use crate::eval::BenchParams;
use crate::sim::{DriftModel, PinholeCamera, SimParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`")]
    InvalidValue { key: String, value: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub tau_us: u64,
    pub hop_us: u64,
    pub max_substep_us: u64,
    pub speed: f64,
    pub delta_d: f64,
    pub delta_alpha_deg: f64,
    pub width: usize,
    pub height: usize,
    pub fov_deg: f64,
    pub search_half_width: usize,
    pub compression: usize,
    pub g_theta: f64,
    pub g_rho: f64,
    pub rho_bar: RhoThreshold,
    pub heading_gain: f64,
    pub max_angular_rate: f64,
    pub goal_tolerance: f64,
    pub measure_latency: bool,
    pub lookahead: f64,
    pub run_up: f64,
    pub failure_radius: f64,
    pub time_limit_factor: f64,
    pub spurious_per_frame: f64,
    pub trace_interval_us: u64,
    pub seed: u64,
    pub teach_drift: DriftModel,
    pub repeat_drift: DriftModel,
    pub bench_iterations: usize,
    pub bench_warmup: usize,
}

impl Default for Config {
    fn default() -> Self {
        let sim = SimParams::default();
        let ctl = ControllerParams::default();
        let bench = BenchParams::default();
        Self {
            tau_us: sim.tau_us,
            hop_us: sim.hop_us,
            max_substep_us: sim.max_substep_us,
            speed: ctl.speed,
            delta_d: sim.delta_d,
            delta_alpha_deg: 15.0,
            width: sim.camera.width,
            height: sim.camera.height,
            fov_deg: sim.camera.fov_deg,
            search_half_width: ctl.search_half_width,
            compression: ctl.compression,
            g_theta: ctl.gains.g_theta,
            g_rho: ctl.gains.g_rho,
            rho_bar: ctl.gains.rho_bar,
            heading_gain: ctl.heading_gain,
            max_angular_rate: ctl.max_angular_rate,
            goal_tolerance: ctl.goal_tolerance,
            measure_latency: ctl.measure_latency,
            lookahead: sim.lookahead,
            run_up: sim.run_up,
            failure_radius: sim.failure_radius,
            time_limit_factor: sim.time_limit_factor,
            spurious_per_frame: sim.spurious_per_frame,
            trace_interval_us: sim.trace_interval_us,
            seed: sim.seed,
            teach_drift: DriftModel {
                noise_sigma_trans: 0.002,
                noise_sigma_rot: 0.001,
                ..DriftModel::NONE
            },
            repeat_drift: DriftModel {
                noise_sigma_trans: 0.005,
                noise_sigma_rot: 0.003,
                bias_rot: 0.007,
                ..DriftModel::NONE
            },
            bench_iterations: bench.iterations,
            bench_warmup: bench.warmup,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::InvalidValue {
        key: key.to_string(),
        value: value.to_string(),
    })
}

fn drift_key<'a>(d: &'a mut DriftModel, field: &str) -> Option<&'a mut f64> {
    Some(match field {
        "wheel_scale_left" => &mut d.wheel_scale_left,
        "wheel_scale_right" => &mut d.wheel_scale_right,
        "sigma_trans" => &mut d.noise_sigma_trans,
        "sigma_rot" => &mut d.noise_sigma_rot,
        "bias_rot" => &mut d.bias_rot,
        "track_width" => &mut d.track_width,
        _ => return None,
    })
}

const DRIFT_FIELDS: [&str; 6] = [
    "wheel_scale_left",
    "wheel_scale_right",
    "sigma_trans",
    "sigma_rot",
    "bias_rot",
    "track_width",
];

impl Config {
    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let (key, value) = (key.trim(), value.trim());
        match key {
            "tau_us" => self.tau_us = num(key, value)?,
            "hop_us" => self.hop_us = num(key, value)?,
            "max_substep_us" => self.max_substep_us = num(key, value)?,
            "speed" => self.speed = num(key, value)?,
            "delta_d" => self.delta_d = num(key, value)?,
            "delta_alpha_deg" => self.delta_alpha_deg = num(key, value)?,
            "width" => self.width = num(key, value)?,
            "height" => self.height = num(key, value)?,
            "fov_deg" => self.fov_deg = num(key, value)?,
            "search_half_width" => self.search_half_width = num(key, value)?,
            "compression" => self.compression = num(key, value)?,
            "g_theta" => self.g_theta = num(key, value)?,
            "g_rho" => self.g_rho = num(key, value)?,
            "rho_bar" => {
                self.rho_bar = if value == "median" {
                    RhoThreshold::Median
                } else {
                    RhoThreshold::Constant(num(key, value)?)
                }
            }
            "heading_gain" => self.heading_gain = num(key, value)?,
            "max_angular_rate" => self.max_angular_rate = num(key, value)?,
            "goal_tolerance" => self.goal_tolerance = num(key, value)?,
            "measure_latency" => self.measure_latency = num(key, value)?,
            "lookahead" => self.lookahead = num(key, value)?,
            "run_up" => self.run_up = num(key, value)?,
            "failure_radius" => self.failure_radius = num(key, value)?,
            "time_limit_factor" => self.time_limit_factor = num(key, value)?,
            "spurious_per_frame" => self.spurious_per_frame = num(key, value)?,
            "trace_interval_us" => self.trace_interval_us = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "bench_iterations" => self.bench_iterations = num(key, value)?,
            "bench_warmup" => self.bench_warmup = num(key, value)?,
            _ => {
                let slot = if let Some(f) = key.strip_prefix("teach_") {
                    drift_key(&mut self.teach_drift, f)
                } else if let Some(f) = key.strip_prefix("repeat_") {
                    drift_key(&mut self.repeat_drift, f)
                } else {
                    None
                };
                match slot {
                    Some(slot) => *slot = num(key, value)?,
                    None => return Err(ConfigError::UnknownKey(key.to_string())),
                }
            }
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::Parse {
                line: 0,
                reason: format!("expected key=value, got `{assignment}`"),
            })?;
        self.set(k, v)
    }

    /// Parses a config file on top of the defaults and validates it.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
                line: i + 1,
                reason: "expected key=value".into(),
            })?;
            cfg.set(k, v).map_err(|e| ConfigError::Parse {
                line: i + 1,
                reason: e.to_string(),
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Every key in a fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        put("tau_us", self.tau_us.to_string());
        put("hop_us", self.hop_us.to_string());
        put("max_substep_us", self.max_substep_us.to_string());
        put("speed", self.speed.to_string());
        put("delta_d", self.delta_d.to_string());
        put("delta_alpha_deg", self.delta_alpha_deg.to_string());
        put("width", self.width.to_string());
        put("height", self.height.to_string());
        put("fov_deg", self.fov_deg.to_string());
        put("search_half_width", self.search_half_width.to_string());
        put("compression", self.compression.to_string());
        put("g_theta", self.g_theta.to_string());
        put("g_rho", self.g_rho.to_string());
        put(
            "rho_bar",
            match self.rho_bar {
                RhoThreshold::Median => "median".to_string(),
                RhoThreshold::Constant(c) => c.to_string(),
            },
        );
        put("heading_gain", self.heading_gain.to_string());
        put("max_angular_rate", self.max_angular_rate.to_string());
        put("goal_tolerance", self.goal_tolerance.to_string());
        put("measure_latency", self.measure_latency.to_string());
        put("lookahead", self.lookahead.to_string());
        put("run_up", self.run_up.to_string());
        put("failure_radius", self.failure_radius.to_string());
        put("time_limit_factor", self.time_limit_factor.to_string());
        put("spurious_per_frame", self.spurious_per_frame.to_string());
        put("trace_interval_us", self.trace_interval_us.to_string());
        put("seed", self.seed.to_string());
        for (prefix, drift) in [("teach", self.teach_drift), ("repeat", self.repeat_drift)] {
            let mut d = drift;
            for f in DRIFT_FIELDS {
                let v = *drift_key(&mut d, f).expect("listed field");
                put(&format!("{prefix}_{f}"), v.to_string());
            }
        }
        put("bench_iterations", self.bench_iterations.to_string());
        put("bench_warmup", self.bench_warmup.to_string());
        s
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.delta_d.is_nan() || self.delta_d <= 0.0 {
            return invalid(format!("delta_d must be positive, got {}", self.delta_d));
        }
        if self.delta_alpha_deg.is_nan() || self.delta_alpha_deg <= 0.0 {
            return invalid(format!(
                "delta_alpha_deg must be positive, got {}",
                self.delta_alpha_deg
            ));
        }
        if self.compression == 0 || self.compression > self.width {
            return invalid(format!(
                "compression {} must be in 1..={}",
                self.compression, self.width
            ));
        }
        if !(self.g_theta >= 0.0 && self.g_rho >= 0.0) {
            return invalid("gains must be non-negative".into());
        }
        if let RhoThreshold::Constant(c) = self.rho_bar {
            if !c.is_finite() {
                return invalid("rho_bar must be finite".into());
            }
        }
        if !(self.heading_gain > 0.0 && self.max_angular_rate > 0.0 && self.goal_tolerance > 0.0) {
            return invalid(
                "heading gain, angular rate limit and goal tolerance must be positive".into(),
            );
        }
        if self.bench_iterations < 100 {
            return invalid("bench_iterations must be at least 100".into());
        }
        self.sim_params()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn sim_params(&self) -> SimParams {
        SimParams {
            camera: PinholeCamera {
                width: self.width,
                height: self.height,
                fov_deg: self.fov_deg,
                ..PinholeCamera::default()
            },
            tau_us: self.tau_us,
            hop_us: self.hop_us,
            max_substep_us: self.max_substep_us,
            speed: self.speed,
            delta_d: self.delta_d,
            delta_alpha: self.delta_alpha_deg.to_radians(),
            lookahead: self.lookahead,
            run_up: self.run_up,
            teach_drift: self.teach_drift,
            repeat_drift: self.repeat_drift,
            seed: self.seed,
            failure_radius: self.failure_radius,
            spurious_per_frame: self.spurious_per_frame,
            time_limit_factor: self.time_limit_factor,
            trace_interval_us: self.trace_interval_us,
        }
    }

    pub fn controller_params(&self) -> ControllerParams {
        ControllerParams {
            gains: CorrectionGains {
                g_theta: self.g_theta,
                g_rho: self.g_rho,
                rho_bar: self.rho_bar,
            },
            search_half_width: self.search_half_width,
            compression: self.compression,
            speed: self.speed,
            heading_gain: self.heading_gain,
            max_angular_rate: self.max_angular_rate,
            goal_tolerance: self.goal_tolerance,
            measure_latency: self.measure_latency,
        }
    }

    pub fn bench_params(&self) -> BenchParams {
        let steps_per_goal = (self.delta_d / self.speed * 1e6 / self.hop_us as f64)
            .round()
            .max(1.0) as usize;
        BenchParams {
            iterations: self.bench_iterations,
            warmup: self.bench_warmup,
            steps_per_goal,
            hop_us: self.hop_us,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_parameters() {
        let c = Config::default();
        assert_eq!(c.tau_us, 66_000);
        assert_eq!(c.speed, 0.35);
        assert_eq!(c.delta_d, 0.2);
        assert_eq!(c.delta_alpha_deg, 15.0);
        assert_eq!((c.width, c.height), (320, 180));
        assert_eq!(c.search_half_width, 4);
        assert_eq!(c.fov_deg, 36.0);
        assert_eq!(c.g_theta, 1.5e-3);
        assert_eq!(c.g_rho, 1.5e-5);
        assert_eq!(c.compression, 8);
        c.validate().unwrap();
    }

    #[test]
    fn dump_and_reload_round_trip() {
        let mut c = Config::default();
        c.set("repeat_bias_rot", "0.0123").unwrap();
        c.set("rho_bar", "42.5").unwrap();
        c.set("seed", "77").unwrap();
        assert_eq!(Config::parse(&c.to_text()).unwrap(), c);
        assert_eq!(
            Config::parse(&Config::default().to_text()).unwrap(),
            Config::default()
        );
    }

    #[test]
    fn zero_distance_interval_rejected() {
        let err = Config::parse("delta_d=0\n").unwrap_err();
        assert!(err.to_string().contains("delta_d"), "{err}");
    }

    #[test]
    fn bad_input_reported() {
        assert!(matches!(
            Config::parse("nonsense\n"),
            Err(ConfigError::Parse { line: 1, .. })
        ));
        assert!(Config::parse("g_theta=abc\n").is_err());
        assert!(Config::parse("\n\nwhat=1\n")
            .unwrap_err()
            .to_string()
            .contains("line 3"));
        assert!(Config::parse("fov_deg=200\n").is_err());
        assert!(Config::parse("compression=0\n").is_err());
        let mut c = Config::default();
        assert!(matches!(
            c.apply_override("nokey"),
            Err(ConfigError::Parse { .. })
        ));
        assert!(matches!(
            c.apply_override("zzz=1"),
            Err(ConfigError::UnknownKey(_))
        ));
        c.apply_override("teach_sigma_rot=0.5").unwrap();
        assert_eq!(c.teach_drift.noise_sigma_rot, 0.5);
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let c = Config::parse("# tuned\n\nspeed = 0.5\n").unwrap();
        assert_eq!(c.speed, 0.5);
    }

    proptest! {
        #[test]
        fn numeric_values_round_trip(
            g in 0.0f64..1.0, d in 0.01f64..5.0, bias in -0.1f64..0.1, seed in any::<u64>(),
        ) {
            let base = Config::default();
            let c = Config {
                g_theta: g,
                delta_d: d,
                repeat_drift: DriftModel { bias_rot: bias, ..base.repeat_drift },
                seed,
                ..base
            };
            prop_assert_eq!(Config::parse(&c.to_text()).unwrap(), c);
        }
    }
}
