use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AgentVariant, Models, Setup};
use crate::agent::{action_index, q_values, AgentState, DqnAgent, Transition, ACTIONS};
use crate::belief::{ObservationHistory, ObservationWindow};
use crate::config::{Profile, ShieldDynamics, ShieldPerception};
use crate::encoder::encode_state_tensor;
use crate::error::{Error, Result};
use crate::nn::NetworkParams;
use crate::shield::{FuturePredictor, Shield, ShieldDecision, ShieldView};
use crate::sim::{
    apply_noise, compute_reward, observe_exact, ttc_rule, EgoDynamics, NoisyObservation, ObservedPedestrian, Vec2,
    WorldState,
};

const NOISE_SALT: u64 = 0xD1B5_4A32_D192_ED03;

/// Who picks the nominated throttle.
pub enum Driver<'a> {
    /// Time-to-collision rule on raw noisy observations.
    Rule,
    /// Greedy on a trained Q-network.
    Greedy(&'a NetworkParams),
    /// Epsilon-greedy on a learning agent that is fed every transition.
    Learning { agent: &'a mut DqnAgent, epsilon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Success,
    Collision,
    Timeout,
    /// Reached the goal but exceeded the speed limit on the way.
    SpeedViolation,
}

impl Outcome {
    pub fn name(self) -> &'static str {
        match self {
            Self::Success => "success",
            Self::Collision => "collision",
            Self::Timeout => "timeout",
            Self::SpeedViolation => "speed-violation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub outcome: Outcome,
    pub speed_violation: bool,
    pub steps: u64,
    /// Episode duration (s).
    pub crossing_time: f64,
    pub avg_speed: f64,
    /// Over steps with at least one pedestrian; infinite if there were none.
    pub min_distance: f64,
    pub avg_distance: f64,
    pub shield_interventions: u64,
    pub episode_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub episode: u64,
    pub step: u64,
    pub time: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub nominated: f64,
    pub executed: f64,
    pub intervened: bool,
    /// Smallest predicted footprint distance over the shield window.
    pub shield_min_distance: Option<f64>,
    pub shield_pedestrian: Option<u32>,
    pub reward: f64,
    /// Ground-truth footprint distance to the closest pedestrian after the step.
    pub closest_distance: Option<f64>,
    pub collision: bool,
    pub goal: bool,
    pub timeout: bool,
    pub speed_violation: bool,
    pub pedestrians: Vec<[f64; 2]>,
}

#[derive(Debug, Clone)]
pub struct EpisodeRun {
    pub metrics: EpisodeMetrics,
    pub trace: Vec<TraceRow>,
    /// Mean training loss over the episode's gradient steps, if any ran.
    pub mean_loss: Option<f64>,
}

/// What the agent sees at one step.
struct Perceived {
    noisy: NoisyObservation,
    windows: Vec<ObservationWindow>,
    exact_windows: Vec<ObservationWindow>,
    pedestrians: Vec<ObservedPedestrian>,
}

struct Pipeline<'a> {
    variant: AgentVariant,
    profile: &'a Profile,
    models: &'a Models,
    shield: Option<Shield>,
    noise_rng: ChaCha8Rng,
    noisy_history: ObservationHistory,
    exact_history: ObservationHistory,
}

impl Pipeline<'_> {
    fn perceive(&mut self, world: &WorldState) -> Result<Perceived> {
        let noisy = apply_noise(world, &self.profile.noise, &mut self.noise_rng);
        self.noisy_history.update(&noisy);
        let windows = self.noisy_history.windows(&noisy);
        let exact_windows = if self.shield.is_some() && self.profile.shield_perception == ShieldPerception::GroundTruth
        {
            let exact = observe_exact(world);
            self.exact_history.update(&exact);
            self.exact_history.windows(&exact)
        } else {
            Vec::new()
        };
        let pedestrians = match (self.variant.uses_belief_filter(), &self.models.belief) {
            (true, Some(b)) => b.perceive(&windows)?.iter().map(|p| p.as_observed()).collect(),
            _ => noisy.pedestrians.clone(),
        };
        Ok(Perceived {
            noisy,
            windows,
            exact_windows,
            pedestrians,
        })
    }

    fn state(&self, world: &WorldState, p: &Perceived) -> AgentState {
        let tensor = encode_state_tensor(&p.pedestrians, &world.ego, &self.profile.roi());
        AgentState::new(&tensor, world.ego.speed, &self.profile.qnet)
    }

    fn filter(&self, world: &WorldState, p: &Perceived, nominated: f64) -> Result<Option<ShieldDecision>> {
        let Some(shield) = &self.shield else {
            return Ok(None);
        };
        let (windows, current): (&[ObservationWindow], Vec<Vec2>) = match self.profile.shield_perception {
            ShieldPerception::GroundTruth => (&p.exact_windows, p.exact_windows.iter().map(|w| w.current()).collect()),
            ShieldPerception::NoisyBelief => (&p.windows, p.pedestrians.iter().map(|q| q.position).collect()),
        };
        let view = ShieldView {
            ego: &world.ego,
            route: &world.layout.route,
            windows,
            current: &current,
        };
        shield.filter_action(nominated, &view).map(Some)
    }
}

fn build_shield(variant: AgentVariant, profile: &Profile, models: &Models) -> Result<Option<Shield>> {
    if !variant.uses_shield() {
        return Ok(None);
    }
    let dynamics: Arc<dyn EgoDynamics + Send + Sync> = match (profile.shield_dynamics, &models.dynamics) {
        (ShieldDynamics::Analytic, _) => Arc::new(profile.world.dynamics),
        (ShieldDynamics::Learned, Some(d)) => d.clone(),
        (ShieldDynamics::Learned, None) => return Err(Error::MissingModel(super::DYNAMICS_CHECKPOINT.into())),
    };
    let predictor = match (profile.shield_perception, &models.future) {
        (ShieldPerception::GroundTruth, _) => FuturePredictor::ConstantVelocity,
        (ShieldPerception::NoisyBelief, Some(f)) => FuturePredictor::Learned(f.clone()),
        (ShieldPerception::NoisyBelief, None) => return Err(Error::MissingModel(super::FUTURE_CHECKPOINT.into())),
    };
    Shield::new(profile.shield, dynamics, predictor).map(Some)
}

fn closest_distance(world: &WorldState) -> Option<f64> {
    let rect = world.ego.footprint();
    world
        .pedestrians
        .iter()
        .map(|p| rect.distance_to(p.position))
        .min_by(f64::total_cmp)
}

/// Runs one episode: noise, optional belief update, encoding, nomination, optional
/// shield, execution. Deterministic in `seed` (and the driver's own state).
pub fn run_episode(
    setup: &Setup,
    variant: AgentVariant,
    mut driver: Driver,
    seed: u64,
    episode: u64,
    record_trace: bool,
) -> Result<EpisodeRun> {
    let (profile, models) = (&setup.profile, &setup.models);
    models.check(variant, profile)?;
    if variant == AgentVariant::RuleBased && !matches!(driver, Driver::Rule) {
        return Err(Error::Config("the rule-based variant takes no Q-network".into()));
    }
    if variant != AgentVariant::RuleBased && matches!(driver, Driver::Rule) {
        return Err(Error::MissingModel(variant.checkpoint()));
    }
    let mut pipe = Pipeline {
        variant,
        profile,
        models,
        shield: build_shield(variant, profile, models)?,
        noise_rng: ChaCha8Rng::seed_from_u64(seed ^ NOISE_SALT),
        noisy_history: ObservationHistory::new(),
        exact_history: ObservationHistory::new(),
    };
    let mut world = WorldState::reset(setup.layout.clone(), profile.world, seed);
    let mut seen = pipe.perceive(&world)?;
    let needs_state = !matches!(driver, Driver::Rule);
    let mut state = needs_state.then(|| pipe.state(&world, &seen));

    let mut trace = Vec::new();
    let (mut speed_sum, mut dist_sum, mut dist_n) = (0.0, 0.0, 0u64);
    let mut min_distance = f64::INFINITY;
    let (mut interventions, mut episode_return, mut violation) = (0u64, 0.0, false);
    let (mut loss_sum, mut loss_n) = (0.0, 0u64);
    loop {
        let nominated = match &mut driver {
            Driver::Rule => ttc_rule(
                &world.ego,
                &seen.noisy.pedestrians,
                &profile.ttc,
                &profile.world.dynamics,
            ),
            Driver::Greedy(net) => {
                let q = q_values(net, &[state.as_ref().expect("state")], &profile.qnet)?;
                ACTIONS[crate::agent::argmax(&q[0])]
            }
            Driver::Learning { agent, epsilon } => ACTIONS[agent.act(state.as_ref().expect("state"), *epsilon)?],
        };
        let decision = pipe.filter(&world, &seen, nominated)?;
        let executed = decision.map_or(nominated, |d| d.executed);
        let intervened = decision.is_some_and(|d| d.intervened);
        interventions += intervened as u64;

        let before = world.clone();
        let events = world.step(executed)?;
        let r = compute_reward(&before, &world, &events, &profile.reward);
        episode_return += r.reward;
        violation |= events.speed_violation;
        speed_sum += world.ego.speed;
        let closest = closest_distance(&world);
        if let Some(d) = closest {
            min_distance = min_distance.min(d);
            dist_sum += d;
            dist_n += 1;
        }

        let terminal = events.terminal();
        if !terminal || needs_state {
            seen = pipe.perceive(&world)?;
        }
        if let Driver::Learning { agent, .. } = &mut driver {
            let next = pipe.state(&world, &seen);
            let t = Transition {
                state: state.replace(next.clone()).expect("state"),
                action: action_index(executed),
                reward: r.reward,
                next_state: next,
                terminal,
            };
            if let Some(s) = agent.observe(t)? {
                loss_sum += s.loss;
                loss_n += 1;
            }
        } else if needs_state && !terminal {
            state = Some(pipe.state(&world, &seen));
        }

        if record_trace {
            trace.push(TraceRow {
                episode,
                step: world.step_index,
                time: world.time(),
                x: world.ego.position.x,
                y: world.ego.position.y,
                heading: world.ego.heading,
                speed: world.ego.speed,
                nominated,
                executed,
                intervened,
                shield_min_distance: decision
                    .and_then(|d| d.check.min_distance.is_finite().then_some(d.check.min_distance)),
                shield_pedestrian: decision.and_then(|d| d.check.offending.map(|o| o.1)),
                reward: r.reward,
                closest_distance: closest,
                collision: events.collision.is_some(),
                goal: events.goal,
                timeout: events.timeout,
                speed_violation: events.speed_violation,
                pedestrians: world.pedestrians.iter().map(|p| [p.position.x, p.position.y]).collect(),
            });
        }
        if terminal {
            let outcome = if events.collision.is_some() {
                Outcome::Collision
            } else if events.goal {
                if violation {
                    Outcome::SpeedViolation
                } else {
                    Outcome::Success
                }
            } else {
                Outcome::Timeout
            };
            let steps = world.step_index;
            let metrics = EpisodeMetrics {
                outcome,
                speed_violation: violation,
                steps,
                crossing_time: world.time(),
                avg_speed: speed_sum / steps as f64,
                min_distance,
                avg_distance: if dist_n > 0 {
                    dist_sum / dist_n as f64
                } else {
                    f64::INFINITY
                },
                shield_interventions: interventions,
                episode_return,
            };
            return Ok(EpisodeRun {
                metrics,
                trace,
                mean_loss: (loss_n > 0).then(|| loss_sum / loss_n as f64),
            });
        }
    }
}
