use serde::{Deserialize, Serialize};

use super::world::{Events, WorldState, DT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    /// Pedestrian distance below which the proximity branch applies (m).
    pub near_distance: f64,
    /// Remaining route distance inside which the approach bonus ramps up (m).
    pub approach_distance: f64,
    /// Distance at which the proximity penalty saturates (m).
    pub min_distance: f64,
    /// Distance at or below which the proximity penalty doubles (m).
    pub danger_distance: f64,
    /// Speeds under this are penalized as dawdling (m/s).
    pub slow_speed: f64,
    /// Speed limit (m/s).
    pub speed_limit: f64,
    pub progress_weight: f64,
    pub speed_weight: f64,
    pub proximity_penalty: f64,
    pub approach_bonus: f64,
    pub speeding_penalty: f64,
    /// Magnitude of the collision penalty and goal bonus.
    pub terminal_reward: f64,
    pub slow_penalty: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            near_distance: 7.0,
            approach_distance: 25.0,
            min_distance: 1.0,
            danger_distance: 2.0,
            slow_speed: 1.5,
            speed_limit: 10.0,
            progress_weight: 0.005,
            speed_weight: 0.005,
            proximity_penalty: -0.25,
            approach_bonus: 0.2,
            speeding_penalty: -0.5,
            terminal_reward: 1.5,
            slow_penalty: -0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardBranch {
    Far,
    Near,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminalCause {
    Collision,
    Goal,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RewardOutcome {
    pub reward: f64,
    pub terminal: bool,
    pub cause: Option<TerminalCause>,
    pub branch: RewardBranch,
    /// Closest front-corner-to-pedestrian distance (infinite without pedestrians).
    pub clearance: f64,
}

impl RewardParams {
    /// Proximity-branch reward at clearance `d <= near_distance`.
    pub fn near_reward(&self, d: f64) -> f64 {
        let span = self.near_distance - self.min_distance;
        let r = self.proximity_penalty * (self.near_distance - d.max(self.min_distance)) / span;
        if d <= self.danger_distance {
            2.0 * r
        } else {
            r
        }
    }

    /// Free-driving reward given normalized progress, remaining distance and speed.
    pub fn far_reward(&self, progress: f64, remaining: f64, speed: f64) -> f64 {
        let mut r =
            self.progress_weight * progress + self.speed_weight * speed.min(self.speed_limit) / self.speed_limit;
        if remaining < self.approach_distance {
            r += self.approach_bonus * (self.approach_distance - remaining) / self.approach_distance;
        }
        if speed < self.slow_speed {
            r += self.slow_penalty;
        }
        if speed > self.speed_limit {
            r += self.speeding_penalty;
        }
        r
    }

    pub fn normalized_progress(&self, remaining_before: f64, remaining_after: f64) -> f64 {
        ((remaining_before - remaining_after) / (self.speed_limit * DT)).clamp(-1.0, 1.0)
    }
}

/// Closest distance from the ego's front corners to any pedestrian.
pub fn front_clearance(world: &WorldState) -> f64 {
    let (fr, fl) = world.ego.footprint().front_corners();
    world
        .pedestrians
        .iter()
        .map(|p| fr.dist(p.position).min(fl.dist(p.position)))
        .fold(f64::INFINITY, f64::min)
}

pub fn compute_reward(
    before: &WorldState,
    after: &WorldState,
    events: &Events,
    params: &RewardParams,
) -> RewardOutcome {
    let clearance = front_clearance(after);
    let (mut reward, branch) = if clearance > params.near_distance {
        let progress = params.normalized_progress(before.remaining_distance(), after.remaining_distance());
        (
            params.far_reward(progress, after.remaining_distance(), after.ego.speed),
            RewardBranch::Far,
        )
    } else {
        (params.near_reward(clearance), RewardBranch::Near)
    };
    let cause = if events.collision.is_some() {
        reward = -params.terminal_reward;
        Some(TerminalCause::Collision)
    } else if events.goal {
        reward += params.terminal_reward;
        Some(TerminalCause::Goal)
    } else if events.timeout {
        Some(TerminalCause::Timeout)
    } else {
        None
    };
    RewardOutcome {
        reward,
        terminal: cause.is_some(),
        cause,
        branch,
        clearance,
    }
}
