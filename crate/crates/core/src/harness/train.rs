use serde::Serialize;

use super::{episode_seed, run_episode, AgentVariant, Driver, Outcome, Setup};
use crate::agent::DqnAgent;
use crate::error::{Error, Result};

const TRAIN_SALT: u64 = 0x7A1E_5EED_0000_0001;

pub const TRAIN_LOG_HEADER: &str = "episode,steps,return,epsilon,beta,loss_mean,shield_interventions,outcome";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainLog {
    pub episode: usize,
    pub steps: u64,
    pub episode_return: f64,
    pub epsilon: f64,
    pub beta: f64,
    pub loss_mean: Option<f64>,
    pub shield_interventions: u64,
    pub outcome: Outcome,
}

impl TrainLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6},{},{},{}",
            self.episode,
            self.steps,
            self.episode_return,
            self.epsilon,
            self.beta,
            self.loss_mean.map_or(String::new(), |l| format!("{l:.6}")),
            self.shield_interventions,
            self.outcome.name()
        )
    }
}

/// Trains a fresh agent with the variant's wiring; `on_episode` sees every episode's log.
pub fn train_variant(
    setup: &Setup,
    variant: AgentVariant,
    seed: u64,
    mut on_episode: impl FnMut(&TrainLog, &DqnAgent) -> Result<()>,
) -> Result<DqnAgent> {
    if !variant.learns() {
        return Err(Error::Config(format!("the {variant} variant has nothing to train")));
    }
    let p = &setup.profile;
    let mut agent = DqnAgent::new(p.agent, p.qnet.clone(), p.world.episode_steps as f64, seed)?;
    for e in 0..p.agent.episodes {
        let epsilon = p.agent.epsilon(e);
        let run = run_episode(
            setup,
            variant,
            Driver::Learning {
                agent: &mut agent,
                epsilon,
            },
            episode_seed(seed ^ TRAIN_SALT, e as u64),
            e as u64,
            false,
        )?;
        agent.end_episode(run.metrics.steps);
        let log = TrainLog {
            episode: e,
            steps: run.metrics.steps,
            episode_return: run.metrics.episode_return,
            epsilon,
            beta: agent.beta.beta(agent.env_steps()),
            loss_mean: run.mean_loss,
            shield_interventions: run.metrics.shield_interventions,
            outcome: run.metrics.outcome,
        };
        on_episode(&log, &agent)?;
    }
    Ok(agent)
}
