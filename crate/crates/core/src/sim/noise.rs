use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::geometry::{wrap_360, Vec2};
use super::world::{EgoState, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Per-axis position noise (m).
    pub sigma_position: f64,
    pub sigma_speed: f64,
    /// Degrees.
    pub sigma_heading: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            sigma_position: 1.0,
            sigma_speed: 0.2,
            sigma_heading: 10.0,
        }
    }
}

impl NoiseConfig {
    pub fn none() -> Self {
        Self {
            sigma_position: 0.0,
            sigma_speed: 0.0,
            sigma_heading: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservedPedestrian {
    pub id: u32,
    pub position: Vec2,
    pub speed: f64,
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyObservation {
    pub ego: EgoState,
    pub pedestrians: Vec<ObservedPedestrian>,
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
}

/// Ground truth with independent Gaussian noise on every pedestrian field.
pub fn apply_noise<R: Rng + ?Sized>(world: &WorldState, cfg: &NoiseConfig, rng: &mut R) -> NoisyObservation {
    let pedestrians = world
        .pedestrians
        .iter()
        .map(|p| ObservedPedestrian {
            id: p.id,
            position: Vec2::new(
                p.position.x + gaussian(rng, cfg.sigma_position),
                p.position.y + gaussian(rng, cfg.sigma_position),
            ),
            speed: p.speed + gaussian(rng, cfg.sigma_speed),
            heading: wrap_360(p.heading + gaussian(rng, cfg.sigma_heading)),
        })
        .collect();
    NoisyObservation {
        ego: world.ego,
        pedestrians,
    }
}

pub fn observe_exact(world: &WorldState) -> NoisyObservation {
    NoisyObservation {
        ego: world.ego,
        pedestrians: world
            .pedestrians
            .iter()
            .map(|p| ObservedPedestrian {
                id: p.id,
                position: p.position,
                speed: p.speed,
                heading: wrap_360(p.heading),
            })
            .collect(),
    }
}
