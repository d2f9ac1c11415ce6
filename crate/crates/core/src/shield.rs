//! Rollout safety shield: holds the nominated throttle for a short virtual window,
//! interpolates pedestrians toward their predicted positions and substitutes full
//! braking when any pedestrian comes too close to the ego footprint.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::belief::{constant_velocity_predict, FutureModel, ObservationWindow, FUTURE_STEPS};
use crate::error::{Error, Result};
use crate::sim::{EgoDynamics, EgoState, Polyline, Vec2, DT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShieldConfig {
    pub virtual_steps: usize,
    pub virtual_dt: f64,
    /// Footprint-to-pedestrian distance below which a collision is predicted (m).
    pub distance_threshold: f64,
    pub fallback_throttle: f64,
}

impl Default for ShieldConfig {
    fn default() -> Self {
        Self {
            virtual_steps: FUTURE_STEPS,
            virtual_dt: DT,
            distance_threshold: 0.5,
            fallback_throttle: -1.0,
        }
    }
}

impl ShieldConfig {
    pub fn window(&self) -> f64 {
        self.virtual_steps as f64 * self.virtual_dt
    }

    pub fn validate(&self) -> Result<()> {
        if self.virtual_steps == 0 || !(self.distance_threshold > 0.0) || !(self.virtual_dt > 0.0) {
            return Err(Error::Config(format!("invalid shield config {self:?}")));
        }
        Ok(())
    }
}

/// Ego states after each of the virtual steps with `throttle` held.
pub fn rollout_ego(
    ego: &EgoState,
    route: &Polyline,
    throttle: f64,
    dynamics: &dyn EgoDynamics,
    cfg: &ShieldConfig,
) -> Vec<EgoState> {
    let mut state = *ego;
    (0..cfg.virtual_steps)
        .map(|_| {
            state = dynamics.advance(&state, route, throttle);
            state
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PedestrianTrajectory {
    pub id: u32,
    pub positions: Vec<Vec2>,
}

/// Straight constant-speed path from `current` reaching `endpoint` on the last step.
pub fn interpolate(id: u32, current: Vec2, endpoint: Vec2, steps: usize) -> PedestrianTrajectory {
    PedestrianTrajectory {
        id,
        positions: (1..=steps)
            .map(|k| current.lerp(endpoint, k as f64 / steps as f64))
            .collect(),
    }
}

/// Source of pedestrian endpoints at the end of the virtual window.
#[derive(Debug, Clone)]
pub enum FuturePredictor {
    ConstantVelocity,
    Learned(Arc<FutureModel>),
}

impl FuturePredictor {
    pub fn endpoints(&self, windows: &[ObservationWindow], steps: usize) -> Result<Vec<Vec2>> {
        match self {
            Self::ConstantVelocity => Ok(windows.iter().map(|w| constant_velocity_predict(w, steps)).collect()),
            Self::Learned(m) => {
                if steps != FUTURE_STEPS {
                    return Err(Error::Config(format!(
                        "future model predicts {FUTURE_STEPS} steps ahead, shield asks for {steps}"
                    )));
                }
                m.predict(windows)
            }
        }
    }
}

/// Interpolated trajectories from each pedestrian's perceived position `current[i]`
/// toward the predicted endpoint of `windows[i]`.
pub fn rollout_pedestrians(
    windows: &[ObservationWindow],
    current: &[Vec2],
    predictor: &FuturePredictor,
    cfg: &ShieldConfig,
) -> Result<Vec<PedestrianTrajectory>> {
    if windows.len() != current.len() {
        return Err(Error::Config(format!(
            "{} windows but {} perceived positions",
            windows.len(),
            current.len()
        )));
    }
    let ends = predictor.endpoints(windows, cfg.virtual_steps)?;
    Ok(windows
        .iter()
        .zip(current)
        .zip(ends)
        .map(|((w, &c), e)| interpolate(w.id, c, e, cfg.virtual_steps))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CollisionCheck {
    /// First `(virtual step, pedestrian id)` under the threshold; steps count from 1.
    pub offending: Option<(usize, u32)>,
    /// Smallest footprint distance seen over the window, infinite with no pedestrians.
    pub min_distance: f64,
}

impl CollisionCheck {
    pub fn collides(&self) -> bool {
        self.offending.is_some()
    }
}

pub fn predicts_collision(
    ego: &[EgoState],
    pedestrians: &[PedestrianTrajectory],
    cfg: &ShieldConfig,
) -> Result<CollisionCheck> {
    let mut check = CollisionCheck {
        offending: None,
        min_distance: f64::INFINITY,
    };
    for p in pedestrians {
        if p.positions.len() != ego.len() {
            return Err(Error::LengthMismatch {
                ego: ego.len(),
                pedestrian: p.id as usize,
                got: p.positions.len(),
            });
        }
    }
    for (k, e) in ego.iter().enumerate() {
        let rect = e.footprint();
        for p in pedestrians {
            let d = rect.distance_to(p.positions[k]);
            check.min_distance = check.min_distance.min(d);
            if d < cfg.distance_threshold && check.offending.is_none() {
                check.offending = Some((k + 1, p.id));
            }
        }
    }
    Ok(check)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShieldDecision {
    pub nominated: f64,
    pub executed: f64,
    pub intervened: bool,
    pub check: CollisionCheck,
}

/// Everything the shield needs about the current scene.
#[derive(Debug, Clone, Copy)]
pub struct ShieldView<'a> {
    pub ego: &'a EgoState,
    pub route: &'a Polyline,
    pub windows: &'a [ObservationWindow],
    /// Perceived current position per window.
    pub current: &'a [Vec2],
}

#[derive(Clone)]
pub struct Shield {
    pub config: ShieldConfig,
    pub dynamics: Arc<dyn EgoDynamics + Send + Sync>,
    pub predictor: FuturePredictor,
}

impl std::fmt::Debug for Shield {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Shield")
            .field("config", &self.config)
            .field("predictor", &self.predictor)
            .finish_non_exhaustive()
    }
}

impl Shield {
    pub fn new(
        config: ShieldConfig,
        dynamics: Arc<dyn EgoDynamics + Send + Sync>,
        predictor: FuturePredictor,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            dynamics,
            predictor,
        })
    }

    /// Passes `nominated` through unless its rollout predicts a collision, in which
    /// case the fallback throttle is executed unchecked.
    pub fn filter_action(&self, nominated: f64, view: &ShieldView) -> Result<ShieldDecision> {
        let ego = rollout_ego(view.ego, view.route, nominated, self.dynamics.as_ref(), &self.config);
        let peds = rollout_pedestrians(view.windows, view.current, &self.predictor, &self.config)?;
        let check = predicts_collision(&ego, &peds, &self.config)?;
        let intervened = check.collides();
        Ok(ShieldDecision {
            nominated,
            executed: if intervened {
                self.config.fallback_throttle
            } else {
                nominated
            },
            intervened,
            check,
        })
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::sim::{AnalyticDynamics, IntersectionLayout};

    fn straight() -> Polyline {
        Polyline::new(vec![Vec2::new(-50.0, 0.0), Vec2::new(50.0, 0.0)])
    }

    fn ego_at(route: &Polyline, x: f64, speed: f64) -> EgoState {
        let progress = route.project(Vec2::new(x, 0.0));
        EgoState {
            position: route.point_at(progress),
            heading: route.heading_at(progress),
            speed,
            progress,
            route_index: route.segment_at(progress),
        }
    }

    fn still(id: u32, p: Vec2) -> ObservationWindow {
        ObservationWindow {
            id,
            rows: [[p.x, p.y, 0.0, 0.0]; 3],
        }
    }

    fn shield() -> Shield {
        Shield::new(
            ShieldConfig::default(),
            Arc::new(AnalyticDynamics::default()),
            FuturePredictor::ConstantVelocity,
        )
        .unwrap()
    }

    #[test]
    fn window_covers_half_a_second() {
        let c = ShieldConfig::default();
        assert!(c.window() >= 0.5);
        assert!(c.validate().is_ok());
        assert!(ShieldConfig {
            distance_threshold: 0.0,
            ..c
        }
        .validate()
        .is_err());
    }

    #[test]
    fn ego_rollouts() {
        let r = straight();
        let cfg = ShieldConfig::default();
        let dyn_ = AnalyticDynamics::default();
        let stopped = ego_at(&r, 0.0, 0.0);
        let t = rollout_ego(&stopped, &r, -1.0, &dyn_, &cfg);
        assert_eq!(t.len(), 8);
        assert!(t.iter().all(|e| e.position == stopped.position));
        let moving = ego_at(&r, 0.0, 6.0);
        let t = rollout_ego(&moving, &r, 0.0, &dyn_, &cfg);
        for (k, e) in t.iter().enumerate() {
            assert!((e.position.x - 0.4 * (k + 1) as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn interpolation_examples() {
        let t = interpolate(1, Vec2::ZERO, Vec2::new(0.8, 0.0), 8);
        for (k, p) in t.positions.iter().enumerate() {
            assert!(p.dist(Vec2::new(0.1 * (k + 1) as f64, 0.0)) < 1e-12);
        }
        let steps: Vec<f64> = std::iter::once(Vec2::ZERO)
            .chain(t.positions.iter().copied())
            .collect::<Vec<_>>()
            .windows(2)
            .map(|w| w[0].dist(w[1]))
            .collect();
        assert!(steps.iter().all(|d| (d - 0.1).abs() < 1e-12));
        let p = Vec2::new(3.0, -1.0);
        assert!(interpolate(2, p, p, 8).positions.iter().all(|&q| q == p));
    }

    #[test]
    fn collision_examples() {
        let r = straight();
        let cfg = ShieldConfig::default();
        let ego = rollout_ego(&ego_at(&r, 0.0, 5.0), &r, 0.0, &AnalyticDynamics::default(), &cfg);
        assert!(!predicts_collision(&ego, &[], &cfg).unwrap().collides());
        let hit = interpolate(4, Vec2::new(2.0, 0.0), Vec2::new(2.0, 0.0), 8);
        assert_eq!(predicts_collision(&ego, &[hit], &cfg).unwrap().offending, Some((1, 4)));
        let clear = interpolate(5, Vec2::new(10.0, 5.0), Vec2::new(10.0, 5.0), 8);
        let c = predicts_collision(&ego, &[clear], &cfg).unwrap();
        assert!(!c.collides() && c.min_distance > 4.0);
        let short = interpolate(6, Vec2::ZERO, Vec2::ZERO, 3);
        assert!(matches!(
            predicts_collision(&ego, &[short], &cfg),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn filter_examples() {
        let r = straight();
        let s = shield();
        let e = ego_at(&r, 0.0, 5.0);
        let empty = ShieldView {
            ego: &e,
            route: &r,
            windows: &[],
            current: &[],
        };
        let d = s.filter_action(1.0, &empty).unwrap();
        assert_eq!((d.executed, d.intervened), (1.0, false));
        let w = [still(1, Vec2::new(2.0, 0.0))];
        let view = ShieldView {
            windows: &w,
            current: &[Vec2::new(2.0, 0.0)],
            ..empty
        };
        let d = s.filter_action(1.0, &view).unwrap();
        assert_eq!((d.executed, d.intervened), (-1.0, true));
        let d = s.filter_action(-1.0, &view).unwrap();
        assert_eq!((d.executed, d.intervened), (-1.0, true));
    }

    #[test]
    fn learned_predictor_requires_matching_horizon() {
        let m = FutureModel(crate::belief::SequenceRegressor {
            net: crate::belief::sequence_network(2, 0).unwrap(),
            input_norm: crate::norm::Normalizer::identity(12),
            output_norm: crate::norm::Normalizer::identity(2),
        });
        let p = FuturePredictor::Learned(Arc::new(m));
        assert!(p.endpoints(&[], 5).is_err());
        assert!(p.endpoints(&[still(0, Vec2::ZERO)], FUTURE_STEPS).is_ok());
    }

    proptest! {
        #[test]
        fn braking_never_travels_farther_and_passthrough_is_exact(
            progress in 0.0f64..40.0,
            speed in 0.0f64..12.0,
            throttle in -1.0f64..1.0,
            px in -15.0f64..15.0,
            py in -15.0f64..15.0,
            vx in -1.5f64..1.5,
            vy in -1.5f64..1.5,
        ) {
            let layout = IntersectionLayout::four_way();
            let route = &layout.route;
            let e = EgoState::at_progress(&layout, progress, speed);
            let p = Vec2::new(px, py);
            let prev = p - Vec2::new(vx, vy) * (2.0 * DT);
            let mid = p - Vec2::new(vx, vy) * DT;
            let w = [ObservationWindow { id: 0, rows: [[prev.x, prev.y, 0.0, 0.0], [mid.x, mid.y, 0.0, 0.0], [p.x, p.y, 0.0, 0.0]] }];
            let s = shield();
            let view = ShieldView { ego: &e, route, windows: &w, current: &[p] };
            let d = s.filter_action(throttle, &view).unwrap();
            if d.intervened {
                let dyn_ = AnalyticDynamics::default();
                let nominated = rollout_ego(&e, route, throttle, &dyn_, &s.config);
                let executed = rollout_ego(&e, route, d.executed, &dyn_, &s.config);
                prop_assert!(executed.last().unwrap().progress <= nominated.last().unwrap().progress);
            } else {
                prop_assert_eq!(d.executed.to_bits(), throttle.to_bits());
            }
        }
    }
}
