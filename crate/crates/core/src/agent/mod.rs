//! Double DQN with proportional prioritized replay.

pub mod qnet;
pub mod replay;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{weighted_mse, Checkpoint, NetworkParams, Optimizer, Tensor};

pub use qnet::{
    action_index, argmax, ddqn_target, dqn_target, pack, q_values, select_action, AgentState, QNetConfig, ACTIONS,
};
pub use replay::{importance_weights, sample_probability, ReplayBuffer, SumTree, PRIORITY_EPSILON};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub gamma: f64,
    pub lr: f32,
    pub batch_size: usize,
    pub learn_start: usize,
    pub target_update_every: u64,
    pub epsilon_start: f64,
    pub epsilon_min: f64,
    pub epsilon_decay: f64,
    pub alpha: f64,
    pub beta_start: f64,
    pub episodes: usize,
    pub buffer_capacity: usize,
    /// Environment steps between gradient steps.
    pub train_every: u64,
    /// Bootstraps through the target network (double DQN) instead of the online one.
    pub double: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            lr: 0.00025,
            batch_size: 32,
            learn_start: 750,
            target_update_every: 5000,
            epsilon_start: 1.0,
            epsilon_min: 0.05,
            epsilon_decay: 0.99,
            alpha: 0.6,
            beta_start: 0.4,
            episodes: 500,
            buffer_capacity: 10_000,
            train_every: 1,
            double: true,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.gamma > 0.0
            && self.lr > 0.0
            && self.batch_size > 0
            && self.learn_start > 0
            && self.target_update_every > 0
            && self.epsilon_start > 0.0
            && self.epsilon_min > 0.0
            && self.epsilon_decay > 0.0
            && self.alpha > 0.0
            && self.beta_start > 0.0
            && self.episodes > 0
            && self.buffer_capacity > 0
            && self.train_every > 0;
        if !positive || self.epsilon_min > self.epsilon_start || self.gamma > 1.0 || self.beta_start > 1.0 {
            return Err(Error::Config(format!("invalid agent config {self:?}")));
        }
        Ok(())
    }

    /// `max(epsilon_min, epsilon_start * epsilon_decay^episode)`.
    pub fn epsilon(&self, episode: usize) -> f64 {
        (self.epsilon_start * self.epsilon_decay.powi(episode as i32)).max(self.epsilon_min)
    }
}

/// Linear anneal of the importance exponent to 1 over the expected number of
/// training steps, estimated from the running mean episode length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaSchedule {
    pub start: f64,
    pub episodes: usize,
    mean_length: f64,
    completed: usize,
}

impl BetaSchedule {
    pub fn new(start: f64, episodes: usize, initial_length: f64) -> Self {
        Self {
            start,
            episodes,
            mean_length: initial_length,
            completed: 0,
        }
    }

    pub fn record_episode(&mut self, steps: u64) {
        self.completed += 1;
        self.mean_length += (steps as f64 - self.mean_length) / self.completed as f64;
    }

    pub fn expected_steps(&self) -> f64 {
        self.episodes as f64 * self.mean_length
    }

    pub fn beta(&self, step: u64) -> f64 {
        (self.start + (1.0 - self.start) * step as f64 / self.expected_steps().max(1.0)).min(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: AgentState,
    pub action: usize,
    pub reward: f64,
    pub next_state: AgentState,
    pub terminal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainStats {
    pub loss: f64,
    pub mean_abs_td: f64,
    pub beta: f64,
}

/// Bootstrap targets for a batch; `target = None` bootstraps on the online net.
pub fn batch_targets(
    online: &NetworkParams,
    target: Option<&NetworkParams>,
    batch: &[&Transition],
    gamma: f64,
    cfg: &QNetConfig,
) -> Result<Vec<f64>> {
    let next: Vec<&AgentState> = batch.iter().map(|t| &t.next_state).collect();
    let online_next = q_values(online, &next, cfg)?;
    let target_next = match target {
        Some(t) => Some(q_values(t, &next, cfg)?),
        None => None,
    };
    Ok(batch
        .iter()
        .enumerate()
        .map(|(i, t)| match &target_next {
            Some(tq) => ddqn_target(t.reward, &online_next[i], &tq[i], t.terminal, gamma),
            None => dqn_target(t.reward, &online_next[i], t.terminal, gamma),
        })
        .collect())
}

/// `ddqn_target - Q_online(state, action)`.
pub fn td_error(
    t: &Transition,
    online: &NetworkParams,
    target: &NetworkParams,
    gamma: f64,
    cfg: &QNetConfig,
) -> Result<f64> {
    let y = batch_targets(online, Some(target), &[t], gamma, cfg)?[0];
    let q = q_values(online, &[&t.state], cfg)?[0][t.action] as f64;
    Ok(y - q)
}

#[derive(Debug, Clone)]
pub struct DqnAgent {
    pub config: AgentConfig,
    pub net_config: QNetConfig,
    pub online: NetworkParams,
    pub target: NetworkParams,
    pub buffer: ReplayBuffer<Transition>,
    pub beta: BetaSchedule,
    optimizer: Optimizer,
    env_steps: u64,
    train_steps: u64,
    rng: ChaCha8Rng,
}

impl DqnAgent {
    pub fn new(config: AgentConfig, net_config: QNetConfig, initial_episode_length: f64, seed: u64) -> Result<Self> {
        config.validate()?;
        let online = net_config.build(seed)?;
        let target = online.clone();
        Ok(Self {
            buffer: ReplayBuffer::new(config.buffer_capacity, config.alpha, config.learn_start),
            beta: BetaSchedule::new(config.beta_start, config.episodes, initial_episode_length),
            optimizer: Optimizer::rmsprop(config.lr),
            env_steps: 0,
            train_steps: 0,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5_5A5A_0F0F_F0F0),
            config,
            net_config,
            online,
            target,
        })
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    pub fn q_values(&self, state: &AgentState) -> Result<[f32; 4]> {
        Ok(q_values(&self.online, &[state], &self.net_config)?[0])
    }

    /// Epsilon-greedy action index.
    pub fn act(&mut self, state: &AgentState, epsilon: f64) -> Result<usize> {
        let q = self.q_values(state)?;
        Ok(select_action(&q, epsilon, &mut self.rng))
    }

    /// Stores a transition, trains on schedule and syncs the target network every
    /// `target_update_every` environment steps.
    pub fn observe(&mut self, t: Transition) -> Result<Option<TrainStats>> {
        self.buffer.push(t);
        self.env_steps += 1;
        let stats = if self.buffer.ready() && self.env_steps.is_multiple_of(self.config.train_every) {
            Some(self.train_step()?)
        } else {
            None
        };
        if self.env_steps.is_multiple_of(self.config.target_update_every) {
            self.target.copy_from(&self.online)?;
        }
        Ok(stats)
    }

    /// One importance-weighted gradient step on a prioritized minibatch.
    pub fn train_step(&mut self) -> Result<TrainStats> {
        let beta = self.beta.beta(self.env_steps);
        let sample = self.buffer.sample(self.config.batch_size, &mut self.rng)?;
        let weights = importance_weights(&sample.probabilities, self.buffer.len(), beta);
        let target = self.config.double.then_some(&self.target);
        let ys = batch_targets(&self.online, target, &sample.items, self.config.gamma, &self.net_config)?;
        let states: Vec<&AgentState> = sample.items.iter().map(|t| &t.state).collect();
        let (grid, speed) = pack(&states, &self.net_config)?;
        let (pred, tape) = self.online.forward(&grid, Some(&speed))?;
        let n = ACTIONS.len();
        let mut goal = pred.data().to_vec();
        let mut mask = vec![0.0f32; goal.len()];
        let mut tds = Vec::with_capacity(ys.len());
        for (i, (t, &y)) in sample.items.iter().zip(&ys).enumerate() {
            let k = i * n + t.action;
            tds.push(y - pred.data()[k] as f64);
            goal[k] = y as f32;
            mask[k] = weights[i] as f32;
        }
        let shape = pred.shape().to_vec();
        let (loss, grad) = weighted_mse(&pred, &Tensor::new(shape.clone(), goal)?, &Tensor::new(shape, mask)?)?;
        let grads = self.online.backward(&tape, &grad)?;
        let indices = sample.indices.clone();
        self.optimizer.step(&mut self.online, &grads)?;
        self.buffer.update_priorities(&indices, &tds);
        self.train_steps += 1;
        Ok(TrainStats {
            loss: loss as f64 * n as f64,
            mean_abs_td: tds.iter().map(|d| d.abs()).sum::<f64>() / tds.len() as f64,
            beta,
        })
    }

    pub fn end_episode(&mut self, steps: u64) {
        self.beta.record_episode(steps);
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_network(&self.online)
    }

    /// Greedy evaluation copy of a stored online network.
    pub fn load_online(net_config: &QNetConfig, c: &Checkpoint) -> Result<NetworkParams> {
        let mut net = net_config.build(0)?;
        c.apply_to(&mut net)?;
        Ok(net)
    }
}
