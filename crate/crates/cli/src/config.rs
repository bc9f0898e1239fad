use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use lfd_core::a3c::{A3cConfig, TargetMode};
use lfd_core::env::{make_game, GameConfig, GameId, WrapperConfig};
use lfd_core::gradcam::GradCamConfig;
use lfd_core::network::{LayerSet, NetworkConfig};
use lfd_core::pretrain::PretrainConfig;
use lfd_core::proxy::HumanProxy;

use crate::{CliError, Result};

/// The four training methods compared in the experiment grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    A3c,
    A3cTb,
    Pmfa3c,
    Pmfa3cTb,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::A3c, Mode::A3cTb, Mode::Pmfa3c, Mode::Pmfa3cTb];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::A3c => "a3c",
            Mode::A3cTb => "a3c_tb",
            Mode::Pmfa3c => "pmfa3c",
            Mode::Pmfa3cTb => "pmfa3c_tb",
        }
    }

    pub fn target(self) -> TargetMode {
        match self {
            Mode::A3c | Mode::Pmfa3c => TargetMode::Clip,
            Mode::A3cTb | Mode::Pmfa3cTb => TargetMode::Tb,
        }
    }

    pub fn pretrained(self) -> bool {
        matches!(self, Mode::Pmfa3c | Mode::Pmfa3cTb)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| CliError::field("mode", format!("unknown mode `{s}` (a3c|a3c_tb|pmfa3c|pmfa3c_tb)")))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Demonstration dataset for `pretrain`.
    pub demos: Option<PathBuf>,
    /// Pre-trained classifier snapshot for the pmfa3c modes.
    pub pretrained: Option<PathBuf>,
    /// Root for run directories when neither the flag nor the environment
    /// variable is set.
    pub runs_dir: Option<PathBuf>,
}

/// Everything one command needs; a single file drives every stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub mode: Mode,
    pub layers: LayerSet,
    pub seeds: Vec<u64>,
    pub game: GameConfig,
    pub wrapper: WrapperConfig,
    /// Defaults to the geometry matched to the observation size.
    pub network: Option<NetworkConfig>,
    pub a3c: A3cConfig,
    pub pretrain: PretrainConfig,
    pub proxy: HumanProxy,
    pub gradcam: GradCamConfig,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::A3c,
            layers: LayerSet::All,
            seeds: vec![0],
            game: GameConfig::small(GameId::MiniCatch),
            wrapper: WrapperConfig::default(),
            network: None,
            a3c: A3cConfig {
                step_budget: 500_000,
                ..A3cConfig::default()
            },
            pretrain: PretrainConfig::default(),
            proxy: HumanProxy::default(),
            gradcam: GradCamConfig::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(crate::io_err(path))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config always serializes")
    }

    /// Square side of the agent's observations.
    pub fn observation_side(&self) -> usize {
        self.wrapper.resize.unwrap_or_else(|| self.game.native_size())
    }

    pub fn action_count(&self) -> Result<usize> {
        Ok(make_game(&self.game).map_err(|e| CliError::field("game", e))?.actions().len())
    }

    pub fn network_config(&self) -> Result<NetworkConfig> {
        match &self.network {
            Some(n) => Ok(n.clone()),
            None => Ok(NetworkConfig::for_resolution(self.observation_side(), self.action_count()?)),
        }
    }

    /// The A3C settings for one seed of one method.
    pub fn a3c_for(&self, mode: Mode, seed: u64) -> A3cConfig {
        A3cConfig {
            target: mode.target(),
            seed,
            ..self.a3c.clone()
        }
    }

    /// Checks every section; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(CliError::field("seeds", "at least one seed is required"));
        }
        self.game.validate().map_err(|e| CliError::field("game", e))?;
        if self.wrapper.frame_skip == 0 || self.wrapper.stack == 0 {
            return Err(CliError::field("wrapper", "frame_skip and stack must be positive"));
        }
        self.a3c.validate().map_err(|e| CliError::field("a3c", e))?;
        self.pretrain.validate().map_err(|e| CliError::field("pretrain", e))?;
        self.proxy.validate().map_err(|e| CliError::field("proxy", e))?;
        let net = self.network_config()?;
        net.validate().map_err(|e| CliError::field("network", e))?;
        if net.resolution != self.observation_side() {
            return Err(CliError::field(
                "network.resolution",
                format!("{} does not match the {}-pixel observations", net.resolution, self.observation_side()),
            ));
        }
        if net.stack != self.wrapper.stack {
            return Err(CliError::field(
                "network.stack",
                format!("{} does not match wrapper.stack {}", net.stack, self.wrapper.stack),
            ));
        }
        if net.actions != self.action_count()? {
            return Err(CliError::field(
                "network.actions",
                format!("{} but the game has {}", net.actions, self.action_count()?),
            ));
        }
        Ok(())
    }

    /// Additional requirement for training a given method.
    pub fn validate_for_training(&self, mode: Mode) -> Result<()> {
        self.validate()?;
        if mode.pretrained() && self.paths.pretrained.is_none() {
            return Err(CliError::field(
                "paths.pretrained",
                format!("mode {mode} needs a pre-trained classifier snapshot"),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c = RunConfig::from_toml(
            r#"
            mode = "pmfa3c_tb"
            seeds = [0, 1, 2]
            [game]
            id = "mini_pellets"
            cell_px = 1
            [a3c]
            workers = 4
            "#,
        )
        .unwrap();
        assert_eq!(c.mode, Mode::Pmfa3cTb);
        assert_eq!(c.game.id, GameId::MiniPellets);
        assert_eq!(c.a3c.workers, 4);
        assert_eq!(c.a3c.gamma, 0.99);
        let err = c.validate_for_training(c.mode).unwrap_err().to_string();
        assert!(err.contains("paths.pretrained"), "{err}");
    }

    #[test]
    fn field_errors_name_the_field() {
        let mut c = RunConfig::default();
        c.seeds.clear();
        assert!(c.validate().unwrap_err().to_string().starts_with("seeds:"));
        let mut c = RunConfig::default();
        c.a3c.workers = 0;
        assert!(c.validate().unwrap_err().to_string().starts_with("a3c:"));
        let mut c = RunConfig::default();
        c.network = Some(NetworkConfig::compact(42, 3));
        assert!(c.validate().unwrap_err().to_string().starts_with("network"));
        assert!(RunConfig::from_toml("mode = \"dqn\"").is_err());
    }

    #[test]
    fn modes_map_to_targets() {
        assert_eq!(Mode::A3c.target(), TargetMode::Clip);
        assert_eq!(Mode::Pmfa3cTb.target(), TargetMode::Tb);
        assert!(Mode::Pmfa3c.pretrained() && !Mode::A3cTb.pretrained());
        assert_eq!("a3c_tb".parse::<Mode>().unwrap(), Mode::A3cTb);
    }
}
