//! Run profiles and the flat `key = value` override format.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, QNetConfig};
use crate::belief::SequenceTrainConfig;
use crate::encoder::RoiSpec;
use crate::error::{Error, Result};
use crate::shield::ShieldConfig;
use crate::sim::{DynamicsFitConfig, LayoutKind, NoiseConfig, RewardParams, TtcConfig, WorldConfig};

/// What the shield is fed about the pedestrians.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShieldPerception {
    /// Exact pedestrian history with constant-velocity extrapolation.
    GroundTruth,
    /// Noisy history through the future model, current position from the variant's perception.
    NoisyBelief,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShieldDynamics {
    Analytic,
    Learned,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSize {
    pub episodes: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub name: String,
    pub seed: u64,
    pub layout: LayoutKind,
    pub world: WorldConfig,
    pub reward: RewardParams,
    pub noise: NoiseConfig,
    pub qnet: QNetConfig,
    pub agent: AgentConfig,
    pub shield: ShieldConfig,
    pub shield_perception: ShieldPerception,
    pub shield_dynamics: ShieldDynamics,
    pub ttc: TtcConfig,
    pub dynamics_data: DatasetSize,
    pub dynamics_fit: DynamicsFitConfig,
    pub pedestrian_data: DatasetSize,
    pub belief_fit: SequenceTrainConfig,
    pub future_fit: SequenceTrainConfig,
    pub eval_episodes: usize,
    pub checkpoint_every: usize,
}

impl Profile {
    /// Full-size network, 500 training episodes.
    pub fn full() -> Self {
        Self {
            name: "full".into(),
            seed: 0,
            layout: LayoutKind::FourWay,
            world: WorldConfig::default(),
            reward: RewardParams::default(),
            noise: NoiseConfig::default(),
            qnet: QNetConfig::full(),
            agent: AgentConfig::default(),
            shield: ShieldConfig::default(),
            shield_perception: ShieldPerception::NoisyBelief,
            shield_dynamics: ShieldDynamics::Analytic,
            ttc: TtcConfig::default(),
            dynamics_data: DatasetSize {
                episodes: 2000,
                steps: 100,
            },
            dynamics_fit: DynamicsFitConfig::default(),
            pedestrian_data: DatasetSize {
                episodes: 2000,
                steps: 400,
            },
            belief_fit: SequenceTrainConfig::belief(),
            future_fit: SequenceTrainConfig::future(),
            eval_episodes: 200,
            checkpoint_every: 25,
        }
    }

    /// 40x30 grid, 16 filters, 150 training episodes.
    pub fn desk() -> Self {
        let full = Self::full();
        Self {
            name: "desk".into(),
            qnet: QNetConfig::desk(),
            agent: AgentConfig {
                episodes: 150,
                train_every: 4,
                ..full.agent
            },
            pedestrian_data: DatasetSize {
                episodes: 500,
                steps: 400,
            },
            eval_episodes: 100,
            ..full
        }
    }

    pub fn named(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::Config(format!(
                "unknown profile `{other}` (expected desk or full)"
            ))),
        }
    }

    pub fn roi(&self) -> RoiSpec {
        RoiSpec::with_grid(self.qnet.rows, self.qnet.cols)
    }

    /// Parses `key = value` lines; a `profile` key picks the base, other keys override it.
    pub fn parse(text: &str) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        let mut p = match pairs.get("profile") {
            Some(name) => Self::named(name)?,
            None => Self::desk(),
        };
        for (k, v) in &pairs {
            if k != "profile" {
                p.set(k, v)?;
            }
        }
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.agent.validate()?;
        self.shield.validate()?;
        if self.qnet.rows == 0 || self.qnet.cols == 0 || self.qnet.filters == 0 {
            return Err(Error::Config("grid and filter counts must be positive".into()));
        }
        if self.world.initial_pedestrians_min > self.world.initial_pedestrians_max {
            return Err(Error::Config("world.initial_pedestrians_min exceeds max".into()));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
        }
        macro_rules! assign {
            ($($name:literal => $field:expr),* $(,)?) => {
                match key {
                    $($name => { $field = num(key, value)?; return Ok(()); })*
                    _ => {}
                }
            };
        }
        assign! {
            "seed" => self.seed,
            "grid.rows" => self.qnet.rows,
            "grid.cols" => self.qnet.cols,
            "agent.filters" => self.qnet.filters,
            "agent.output_relu" => self.qnet.output_relu,
            "agent.gamma" => self.agent.gamma,
            "agent.lr" => self.agent.lr,
            "agent.batch_size" => self.agent.batch_size,
            "agent.learn_start" => self.agent.learn_start,
            "agent.target_update_every" => self.agent.target_update_every,
            "agent.epsilon_start" => self.agent.epsilon_start,
            "agent.epsilon_min" => self.agent.epsilon_min,
            "agent.epsilon_decay" => self.agent.epsilon_decay,
            "agent.alpha" => self.agent.alpha,
            "agent.beta_start" => self.agent.beta_start,
            "agent.episodes" => self.agent.episodes,
            "agent.buffer_capacity" => self.agent.buffer_capacity,
            "agent.train_every" => self.agent.train_every,
            "agent.double" => self.agent.double,
            "reward.near_distance" => self.reward.near_distance,
            "reward.approach_distance" => self.reward.approach_distance,
            "reward.min_distance" => self.reward.min_distance,
            "reward.danger_distance" => self.reward.danger_distance,
            "reward.slow_speed" => self.reward.slow_speed,
            "reward.speed_limit" => self.reward.speed_limit,
            "reward.progress_weight" => self.reward.progress_weight,
            "reward.speed_weight" => self.reward.speed_weight,
            "reward.proximity_penalty" => self.reward.proximity_penalty,
            "reward.approach_bonus" => self.reward.approach_bonus,
            "reward.speeding_penalty" => self.reward.speeding_penalty,
            "reward.terminal_reward" => self.reward.terminal_reward,
            "reward.slow_penalty" => self.reward.slow_penalty,
            "noise.sigma_position" => self.noise.sigma_position,
            "noise.sigma_speed" => self.noise.sigma_speed,
            "noise.sigma_heading" => self.noise.sigma_heading,
            "world.initial_pedestrians_min" => self.world.initial_pedestrians_min,
            "world.initial_pedestrians_max" => self.world.initial_pedestrians_max,
            "world.spawn_interval_steps" => self.world.spawn_interval_steps,
            "world.spawn_batch" => self.world.spawn_batch,
            "world.episode_steps" => self.world.episode_steps,
            "world.speed_limit" => self.world.speed_limit,
            "shield.distance_threshold" => self.shield.distance_threshold,
            "shield.virtual_steps" => self.shield.virtual_steps,
            "ttc.brake_below" => self.ttc.brake_below,
            "ttc.ease_below" => self.ttc.ease_below,
            "dynamics.episodes" => self.dynamics_data.episodes,
            "dynamics.steps" => self.dynamics_data.steps,
            "dynamics.epochs" => self.dynamics_fit.epochs,
            "dynamics.lr" => self.dynamics_fit.lr,
            "dynamics.max_speed_rmse" => self.dynamics_fit.speed_rmse_threshold,
            "belief.episodes" => self.pedestrian_data.episodes,
            "belief.steps" => self.pedestrian_data.steps,
            "belief.epochs" => self.belief_fit.epochs,
            "belief.lr" => self.belief_fit.lr,
            "belief.max_rmse" => self.belief_fit.max_rmse,
            "future.epochs" => self.future_fit.epochs,
            "future.lr" => self.future_fit.lr,
            "future.max_rmse" => self.future_fit.max_rmse,
            "eval.episodes" => self.eval_episodes,
            "train.checkpoint_every" => self.checkpoint_every,
        }
        match key {
            "layout.kind" => self.layout = value.parse()?,
            "shield.mode" => {
                self.shield_perception = match value {
                    "ground-truth" => ShieldPerception::GroundTruth,
                    "noisy-belief" => ShieldPerception::NoisyBelief,
                    _ => return Err(Error::Config(format!("`shield.mode`: unknown mode `{value}`"))),
                }
            }
            "shield.dynamics" => {
                self.shield_dynamics = match value {
                    "analytic" => ShieldDynamics::Analytic,
                    "learned" => ShieldDynamics::Learned,
                    _ => return Err(Error::Config(format!("`shield.dynamics`: unknown model `{value}`"))),
                }
            }
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }
}

/// Every key accepted by [`Profile::set`], plus `profile`.
pub const KEYS: &[&str] = &[
    "profile",
    "seed",
    "layout.kind",
    "grid.rows",
    "grid.cols",
    "agent.filters",
    "agent.output_relu",
    "agent.gamma",
    "agent.lr",
    "agent.batch_size",
    "agent.learn_start",
    "agent.target_update_every",
    "agent.epsilon_start",
    "agent.epsilon_min",
    "agent.epsilon_decay",
    "agent.alpha",
    "agent.beta_start",
    "agent.episodes",
    "agent.buffer_capacity",
    "agent.train_every",
    "agent.double",
    "reward.near_distance",
    "reward.approach_distance",
    "reward.min_distance",
    "reward.danger_distance",
    "reward.slow_speed",
    "reward.speed_limit",
    "reward.progress_weight",
    "reward.speed_weight",
    "reward.proximity_penalty",
    "reward.approach_bonus",
    "reward.speeding_penalty",
    "reward.terminal_reward",
    "reward.slow_penalty",
    "noise.sigma_position",
    "noise.sigma_speed",
    "noise.sigma_heading",
    "world.initial_pedestrians_min",
    "world.initial_pedestrians_max",
    "world.spawn_interval_steps",
    "world.spawn_batch",
    "world.episode_steps",
    "world.speed_limit",
    "shield.mode",
    "shield.dynamics",
    "shield.distance_threshold",
    "shield.virtual_steps",
    "ttc.brake_below",
    "ttc.ease_below",
    "dynamics.episodes",
    "dynamics.steps",
    "dynamics.epochs",
    "dynamics.lr",
    "dynamics.max_speed_rmse",
    "belief.episodes",
    "belief.steps",
    "belief.epochs",
    "belief.lr",
    "belief.max_rmse",
    "future.epochs",
    "future.lr",
    "future.max_rmse",
    "eval.episodes",
    "train.checkpoint_every",
];

fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key `{k}`", n + 1)));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_desk_profile() {
        assert_eq!(Profile::parse("").unwrap(), Profile::desk());
        assert_eq!(Profile::parse("# nothing\n\n").unwrap(), Profile::desk());
    }

    #[test]
    fn overrides_apply() {
        let p = Profile::parse(
            "profile = full\nlayout.kind = three-way\nreward.terminal_reward = 2.5 # comment\nshield.mode = ground-truth\nagent.double = false\n",
        )
        .unwrap();
        assert_eq!(p.name, "full");
        assert_eq!(p.qnet.rows, 80);
        assert_eq!(p.layout, LayoutKind::ThreeWay);
        assert_eq!(p.reward.terminal_reward, 2.5);
        assert_eq!(p.shield_perception, ShieldPerception::GroundTruth);
        assert!(!p.agent.double);
    }

    #[test]
    fn bad_input_is_a_config_error() {
        for text in [
            "nonsense",
            "grid.rows = many",
            "unknown.key = 1",
            "seed = 1\nseed = 2",
            "profile = huge",
            "agent.epsilon_min = 3",
            "shield.mode = psychic",
        ] {
            assert!(matches!(Profile::parse(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn every_listed_key_is_accepted() {
        for &k in KEYS {
            let v = match k {
                "profile" => "desk",
                "layout.kind" => "four-way",
                "shield.mode" => "noisy-belief",
                "shield.dynamics" => "analytic",
                "agent.output_relu" | "agent.double" => "true",
                "agent.epsilon_min" | "agent.beta_start" | "agent.gamma" => "0.5",
                _ => "3",
            };
            let mut p = Profile::desk();
            if k != "profile" {
                p.set(k, v).unwrap_or_else(|e| panic!("{k}: {e}"));
            }
        }
    }

    #[test]
    fn desk_profile_shape() {
        let d = Profile::desk();
        assert_eq!((d.qnet.rows, d.qnet.cols, d.qnet.filters), (40, 30, 16));
        assert_eq!(d.agent.episodes, 150);
        assert_eq!(d.eval_episodes, 100);
        assert_eq!(d.roi().ego_cell(), (32, 15));
    }
}
