//! Q-network layout, input packing and the pure target/action rules.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::StateTensor;
use crate::error::Result;
use crate::nn::{NetworkBuilder, NetworkParams, Tensor};

/// Throttle for each action index.
pub const ACTIONS: [f64; 4] = [-1.0, -0.4, 0.2, 1.0];

/// Index of the action whose throttle is closest to `throttle`.
pub fn action_index(throttle: f64) -> usize {
    let mut best = 0;
    for (i, a) in ACTIONS.iter().enumerate() {
        if (a - throttle).abs() < (ACTIONS[best] - throttle).abs() {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetConfig {
    pub rows: usize,
    pub cols: usize,
    pub filters: usize,
    pub hidden: Vec<usize>,
    /// Applies ReLU to the Q outputs as well.
    pub output_relu: bool,
    /// Divisor for the relative-speed layer and the ego speed input.
    pub speed_scale: f32,
    /// Divisor for the relative-heading layer.
    pub heading_scale: f32,
}

impl QNetConfig {
    pub fn full() -> Self {
        Self {
            rows: 80,
            cols: 60,
            filters: 64,
            hidden: vec![512, 256, 64],
            output_relu: false,
            speed_scale: 10.0,
            heading_scale: 180.0,
        }
    }

    pub fn desk() -> Self {
        Self {
            rows: 40,
            cols: 30,
            filters: 16,
            ..Self::full()
        }
    }

    /// Three conv/ReLU stages, each followed by a 5x5 stride-3 average pool while the
    /// activation is still at least 5x5; then the ego speed joins the dense stack.
    pub fn build(&self, seed: u64) -> Result<NetworkParams> {
        let mut b = NetworkBuilder::new(&[3, self.rows, self.cols]).aux(1);
        let (mut h, mut w) = (self.rows, self.cols);
        for _ in 0..3 {
            b = b.conv2d(self.filters, (3, 3), (1, 1)).relu();
            if h >= 5 && w >= 5 {
                b = b.avgpool2d((5, 5), (3, 3));
                h = (h - 5) / 3 + 1;
                w = (w - 5) / 3 + 1;
            }
        }
        b = b.flatten().concat_aux();
        for &u in &self.hidden {
            b = b.dense(u).relu();
        }
        b = b.dense(ACTIONS.len());
        if self.output_relu {
            b = b.relu();
        }
        b.build(seed)
    }
}

/// Scaled, sparsely stored network input: nonzero grid entries plus ego speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub entries: Vec<(u32, f32)>,
    pub speed: f32,
}

impl AgentState {
    pub fn new(tensor: &StateTensor, ego_speed: f64, cfg: &QNetConfig) -> Self {
        let n = tensor.rows * tensor.cols;
        let entries = tensor
            .data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, &v)| {
                let v = match i / n {
                    0 => v,
                    1 => v / cfg.speed_scale,
                    _ => v / cfg.heading_scale,
                };
                (i as u32, v)
            })
            .collect();
        Self {
            entries,
            speed: ego_speed as f32 / cfg.speed_scale,
        }
    }

    fn write(&self, out: &mut [f32]) {
        for &(i, v) in &self.entries {
            out[i as usize] = v;
        }
    }
}

/// Dense `[B, 3, R, C]` grid batch and `[B, 1]` speed batch.
pub fn pack(states: &[&AgentState], cfg: &QNetConfig) -> Result<(Tensor, Tensor)> {
    let per = 3 * cfg.rows * cfg.cols;
    let mut grid = vec![0.0; per * states.len()];
    for (s, chunk) in states.iter().zip(grid.chunks_mut(per)) {
        s.write(chunk);
    }
    let speed = states.iter().map(|s| s.speed).collect();
    Ok((
        Tensor::new(vec![states.len(), 3, cfg.rows, cfg.cols], grid)?,
        Tensor::new(vec![states.len(), 1], speed)?,
    ))
}

/// Q-values, one row of four per state.
pub fn q_values(net: &NetworkParams, states: &[&AgentState], cfg: &QNetConfig) -> Result<Vec<[f32; 4]>> {
    if states.is_empty() {
        return Ok(Vec::new());
    }
    let (grid, speed) = pack(states, cfg)?;
    let out = net.infer(&grid, Some(&speed))?;
    Ok(out
        .data()
        .chunks(ACTIONS.len())
        .map(|c| [c[0], c[1], c[2], c[3]])
        .collect())
}

/// First index of the largest value.
pub fn argmax(q: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate() {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// `r` if terminal, else `r + gamma * max_a q_next[a]`.
pub fn dqn_target(reward: f64, next_q: &[f32], terminal: bool, gamma: f64) -> f64 {
    if terminal {
        return reward;
    }
    reward + gamma * next_q[argmax(next_q)] as f64
}

/// The online values pick the bootstrap action, the target values score it.
pub fn ddqn_target(reward: f64, next_online: &[f32], next_target: &[f32], terminal: bool, gamma: f64) -> f64 {
    if terminal {
        return reward;
    }
    reward + gamma * next_target[argmax(next_online)] as f64
}

/// Uniform random action with probability `epsilon`, else greedy.
pub fn select_action<R: Rng + ?Sized>(q: &[f32], epsilon: f64, rng: &mut R) -> usize {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        rng.random_range(0..q.len())
    } else {
        argmax(q)
    }
}
