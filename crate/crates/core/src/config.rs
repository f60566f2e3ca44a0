//! Session configuration. Every block defaults to the published values, so an
//! empty TOML file is a valid configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::coupling::CouplingConfig;
use crate::kinematics::KinematicParams;
use crate::leader::DeviceParams;
use crate::metrics::{SparcParams, SpeedParams};
use crate::netproto::{LinkModel, UdpConfig};
use crate::operators::{TraineeParams, TrainerParams};
use crate::plant::PlantParams;
use crate::task::{PoseLibrary, ScheduleConfig, TaskParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportKind {
    #[default]
    Loopback,
    Udp,
}

impl std::str::FromStr for TransportKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "loopback" => Ok(Self::Loopback),
            "udp" => Ok(Self::Udp),
            other => Err(format!("unknown transport '{other}' (expected loopback or udp)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeaderSource {
    #[default]
    Scripted,
    Ui,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimingParams {
    /// Rest before the first trial, s.
    pub start_delay_s: f64,
    /// Rest between trials of the same block, s.
    pub inter_trial_s: f64,
    /// Rest when the block or condition changes, s.
    pub block_pause_s: f64,
    /// An unconfirmed reach is abandoned after this long, s.
    pub trial_timeout_s: f64,
    /// A return to base is abandoned after this long, s.
    pub return_timeout_s: f64,
    /// Hard stop for the whole session, simulated s.
    pub max_session_s: f64,
}

impl Default for TimingParams {
    fn default() -> Self {
        Self {
            start_delay_s: 1.0,
            inter_trial_s: 1.0,
            block_pause_s: 2.0,
            trial_timeout_s: 60.0,
            return_timeout_s: 30.0,
            max_session_s: 7200.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisParams {
    pub sparc: SparcParams,
    pub speed: SpeedParams,
    /// IQR fence multiplier.
    pub outlier_k: f64,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        Self {
            sparc: SparcParams::default(),
            speed: SpeedParams::default(),
            outlier_k: 2.0,
        }
    }
}

/// Live UI link settings, used only by the WebSocket bridge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UiParams {
    /// State messages per second.
    pub rate_hz: f64,
    /// Commands accepted per connection per second; the excess is dropped.
    pub max_commands_per_s: u32,
    /// Simulated seconds per wall-clock second.
    pub speed: f64,
}

impl Default for UiParams {
    fn default() -> Self {
        Self {
            rate_hz: 50.0,
            max_commands_per_s: 200,
            speed: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub seed: u64,
    pub transport: TransportKind,
    pub leader_source: LeaderSource,
    pub output_dir: Option<PathBuf>,
    pub schedule: ScheduleConfig,
    pub timing: TimingParams,
    pub link: LinkModel,
    pub udp: UdpConfig,
    pub coupling: CouplingConfig,
    pub kinematics: KinematicParams,
    pub plant: PlantParams,
    pub device: DeviceParams,
    pub task: TaskParams,
    pub poses: PoseLibrary,
    pub trainer: TrainerParams,
    pub trainee: TraineeParams,
    pub analysis: AnalysisParams,
    pub ui: UiParams,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            transport: TransportKind::default(),
            leader_source: LeaderSource::default(),
            output_dir: None,
            schedule: ScheduleConfig::default(),
            timing: TimingParams::default(),
            link: LinkModel::default(),
            udp: UdpConfig::default(),
            coupling: CouplingConfig::default(),
            kinematics: KinematicParams::default(),
            plant: PlantParams::default(),
            device: DeviceParams::default(),
            task: TaskParams::default(),
            poses: PoseLibrary::default(),
            trainer: TrainerParams::default(),
            trainee: TraineeParams::default(),
            analysis: AnalysisParams::default(),
            ui: UiParams::default(),
        }
    }
}

impl SessionConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: SessionConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// SHA-256 over the canonical TOML rendering of the resolved config.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.kinematics
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.plant
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.device
            .limits
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.coupling.map.validate().map_err(ConfigError::Invalid)?;
        self.link.validate().map_err(ConfigError::Invalid)?;
        self.analysis
            .sparc
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.trainer.grab_distance > self.coupling.grab_radius {
            return bad(format!(
                "trainer.grab_distance {} exceeds coupling.grab_radius {}",
                self.trainer.grab_distance, self.coupling.grab_radius
            ));
        }
        if !(self.ui.rate_hz > 0.0 && self.ui.rate_hz * self.plant.dt <= 1.0) {
            return bad(format!("ui.rate_hz {} must lie in (0, 1/plant.dt]", self.ui.rate_hz));
        }
        if !(self.ui.speed > 0.0 && self.ui.speed.is_finite()) {
            return bad(format!("ui.speed {} must be > 0", self.ui.speed));
        }
        if to_micros_exact(self.plant.dt).is_none() {
            return bad(format!("plant.dt {} is not a whole number of microseconds", self.plant.dt));
        }
        if self.transport == TransportKind::Udp {
            for addr in [&self.udp.leader, &self.udp.controller, &self.udp.follower] {
                if addr.parse::<std::net::SocketAddr>().is_err() {
                    return bad(format!("udp address '{addr}' is not host:port"));
                }
            }
        }
        self.poses
            .targets(&self.kinematics)
            .map_err(|e| ConfigError::Invalid(format!("pose library: {e}")))?;
        Ok(())
    }
}

pub(crate) fn to_micros_exact(dt: f64) -> Option<u64> {
    let us = (dt * 1e6).round();
    (us >= 1.0 && ((dt * 1e6) - us).abs() < 1e-6).then_some(us as u64)
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = SessionConfig::from_toml("").unwrap();
        assert_eq!(cfg, SessionConfig::default());
        assert_eq!(cfg.coupling.gains.p_leader, 30.0);
        assert_eq!(cfg.analysis.sparc.w_max, 20.0);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = SessionConfig::default();
        cfg.seed = 7;
        cfg.link.jitter = 0.01;
        let back = SessionConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_ne!(SessionConfig::default().hash(), cfg.hash());
    }

    #[test]
    fn partial_override() {
        let cfg = SessionConfig::from_toml("seed = 3\n[coupling.gains]\np_follower = 60.0\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.coupling.gains.p_follower, 60.0);
        assert_eq!(cfg.coupling.gains.b_follower, 4.0);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(SessionConfig::from_toml("[link]\ndrop_prob = 1.5\n").is_err());
        assert!(SessionConfig::from_toml("transport = \"udp\"\n[udp]\nleader = \"nowhere\"\n").is_err());
        assert!(SessionConfig::from_toml("[plant]\ndt = 0.0000005\n").is_err());
        assert!(SessionConfig::from_toml("bogus = 1\n").is_err());
    }
}
