//! Agent variants, the per-step control pipeline, training and evaluation.

mod episode;
mod experiment;
mod train;

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agent::DqnAgent;
use crate::belief::{BeliefModel, FutureModel};
use crate::config::{Profile, ShieldDynamics, ShieldPerception};
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, NetworkParams};
use crate::sim::{IntersectionLayout, LayoutKind, LayoutParams, LearnedDynamics};

pub use episode::{run_episode, Driver, EpisodeMetrics, EpisodeRun, Outcome, TraceRow};
pub use experiment::{run_experiment, ExperimentResult, ExperimentRow, METRICS_HEADER};
pub use train::{train_variant, TrainLog, TRAIN_LOG_HEADER};

pub const BELIEF_CHECKPOINT: &str = "belief.sdqn";
pub const FUTURE_CHECKPOINT: &str = "future.sdqn";
pub const DYNAMICS_CHECKPOINT: &str = "dynamics.sdqn";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentVariant {
    RuleBased,
    Rl,
    BeliefUpdate,
    CollisionDetector,
    Srl,
}

impl AgentVariant {
    pub const ALL: [AgentVariant; 5] = [
        AgentVariant::RuleBased,
        AgentVariant::Rl,
        AgentVariant::BeliefUpdate,
        AgentVariant::CollisionDetector,
        AgentVariant::Srl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::RuleBased => "rule-based",
            Self::Rl => "rl",
            Self::BeliefUpdate => "belief-update",
            Self::CollisionDetector => "collision-detector",
            Self::Srl => "srl",
        }
    }

    pub fn uses_belief_filter(self) -> bool {
        matches!(self, Self::BeliefUpdate | Self::Srl)
    }

    pub fn uses_shield(self) -> bool {
        matches!(self, Self::CollisionDetector | Self::Srl)
    }

    pub fn learns(self) -> bool {
        self != Self::RuleBased
    }

    /// File name of the variant's trained Q-network.
    pub fn checkpoint(self) -> String {
        format!("agent-{}.sdqn", self.name())
    }
}

impl fmt::Display for AgentVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AgentVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

/// Trained perception and dynamics models shared by every variant.
#[derive(Debug, Clone, Default)]
pub struct Models {
    pub belief: Option<Arc<BeliefModel>>,
    pub future: Option<Arc<FutureModel>>,
    pub dynamics: Option<Arc<LearnedDynamics>>,
}

impl Models {
    /// Fails with the name of the first checkpoint `variant` needs but lacks.
    pub fn check(&self, variant: AgentVariant, profile: &Profile) -> Result<()> {
        if variant.uses_belief_filter() && self.belief.is_none() {
            return Err(Error::MissingModel(BELIEF_CHECKPOINT.into()));
        }
        if variant.uses_shield() {
            if profile.shield_perception == ShieldPerception::NoisyBelief && self.future.is_none() {
                return Err(Error::MissingModel(FUTURE_CHECKPOINT.into()));
            }
            if profile.shield_dynamics == ShieldDynamics::Learned && self.dynamics.is_none() {
                return Err(Error::MissingModel(DYNAMICS_CHECKPOINT.into()));
            }
        }
        Ok(())
    }

    /// Loads from `dir` every shared model that any of `variants` needs.
    pub fn load(dir: &Path, profile: &Profile, variants: &[AgentVariant]) -> Result<Self> {
        let mut models = Self::default();
        if variants.iter().any(|v| v.uses_belief_filter()) {
            models.belief = Some(Arc::new(BeliefModel::from_checkpoint(&load_checkpoint(
                dir,
                BELIEF_CHECKPOINT,
            )?)?));
        }
        if variants.iter().any(|v| v.uses_shield()) {
            if profile.shield_perception == ShieldPerception::NoisyBelief {
                models.future = Some(Arc::new(FutureModel::from_checkpoint(&load_checkpoint(
                    dir,
                    FUTURE_CHECKPOINT,
                )?)?));
            }
            if profile.shield_dynamics == ShieldDynamics::Learned {
                let c = load_checkpoint(dir, DYNAMICS_CHECKPOINT)?;
                models.dynamics = Some(Arc::new(LearnedDynamics::from_checkpoint(&c)?));
            }
        }
        Ok(models)
    }
}

/// Reads `dir/name`, reporting an absent file as a missing model.
pub fn load_checkpoint(dir: &Path, name: &str) -> Result<Checkpoint> {
    let path = dir.join(name);
    if !path.exists() {
        return Err(Error::MissingModel(path.display().to_string()));
    }
    Checkpoint::load(path)
}

/// The trained Q-network of a learning variant.
pub fn load_agent(dir: &Path, profile: &Profile, variant: AgentVariant) -> Result<NetworkParams> {
    DqnAgent::load_online(&profile.qnet, &load_checkpoint(dir, &variant.checkpoint())?)
}

/// Profile, intersection and trained models for a batch of episodes.
#[derive(Debug, Clone)]
pub struct Setup {
    pub profile: Profile,
    pub layout: Arc<IntersectionLayout>,
    pub models: Models,
}

impl Setup {
    pub fn new(profile: Profile, models: Models) -> Self {
        let layout = Arc::new(IntersectionLayout::new(LayoutParams::for_kind(profile.layout)));
        Self {
            profile,
            layout,
            models,
        }
    }

    pub fn with_layout(&self, kind: LayoutKind) -> Self {
        Self {
            layout: Arc::new(IntersectionLayout::new(LayoutParams::for_kind(kind))),
            ..self.clone()
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent per-episode seed derived from a base seed.
pub fn episode_seed(base: u64, episode: u64) -> u64 {
    splitmix64(splitmix64(base) ^ episode)
}
