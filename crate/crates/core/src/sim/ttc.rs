use serde::{Deserialize, Serialize};

use super::dynamics::AnalyticDynamics;
use super::noise::{observe_exact, ObservedPedestrian};
use super::world::{EgoState, WorldState, DT, EGO_WIDTH};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TtcConfig {
    pub brake_below: f64,
    pub ease_below: f64,
    /// Lateral miss distance that still counts as a conflict (m).
    pub conflict_radius: f64,
    /// Cruise cap as a fraction of the limit.
    pub cruise_fraction: f64,
    pub speed_limit: f64,
}

impl Default for TtcConfig {
    fn default() -> Self {
        Self {
            brake_below: 2.0,
            ease_below: 4.0,
            conflict_radius: EGO_WIDTH / 2.0 + 0.3,
            cruise_fraction: 0.9,
            speed_limit: 10.0,
        }
    }
}

/// Time until the ego front bumper passes within `conflict_radius` of the pedestrian
/// at closest approach, both holding their velocities. Infinite if they never close in.
pub fn time_to_collision(ego: &EgoState, ped: &ObservedPedestrian, conflict_radius: f64) -> f64 {
    let bumper = ego.footprint().front_center();
    let rel_p = ped.position - bumper;
    let ped_v = super::geometry::Vec2::from_heading(ped.heading) * ped.speed;
    let rel_v = ped_v - ego.velocity();
    let vv = rel_v.dot(rel_v);
    if vv < 1e-12 {
        return f64::INFINITY;
    }
    let t = -rel_p.dot(rel_v) / vv;
    if t <= 0.0 {
        return f64::INFINITY;
    }
    let miss = (rel_p + rel_v * t).norm();
    if miss < conflict_radius {
        t
    } else {
        f64::INFINITY
    }
}

/// Hand-tuned braking rule over whatever pedestrian estimates it is given.
pub fn ttc_rule(
    ego: &EgoState,
    pedestrians: &[ObservedPedestrian],
    cfg: &TtcConfig,
    dynamics: &AnalyticDynamics,
) -> f64 {
    let ttc = pedestrians
        .iter()
        .map(|p| time_to_collision(ego, p, cfg.conflict_radius))
        .fold(f64::INFINITY, f64::min);
    if ttc < cfg.brake_below {
        -1.0
    } else if ttc < cfg.ease_below {
        -0.4
    } else {
        let cap = cfg.cruise_fraction * cfg.speed_limit;
        ((cap - ego.speed) / (dynamics.drive_accel * DT)).clamp(0.0, 1.0)
    }
}

/// The rule applied to ground truth.
pub fn ttc_rule_policy(world: &WorldState, cfg: &TtcConfig) -> f64 {
    ttc_rule(
        &world.ego,
        &observe_exact(world).pedestrians,
        cfg,
        &world.config.dynamics,
    )
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::sim::{IntersectionLayout, Pedestrian, Vec2, WorldConfig};

    fn world(speed: f64) -> WorldState {
        let mut w = WorldState::empty(Arc::new(IntersectionLayout::four_way()), WorldConfig::default(), 0);
        w.ego.speed = speed;
        w
    }

    fn ahead(w: &WorldState, dist: f64, speed: f64, heading: f64) -> Pedestrian {
        let bumper = w.ego.footprint().front_center();
        Pedestrian {
            id: 0,
            position: bumper + Vec2::from_heading(w.ego.heading) * dist,
            speed,
            heading,
            destination: Vec2::ZERO,
            crosswalk: 0,
        }
    }

    #[test]
    fn empty_scene_accelerates() {
        assert_eq!(ttc_rule_policy(&world(0.0), &TtcConfig::default()), 1.0);
    }

    #[test]
    fn static_pedestrian_ahead_forces_braking() {
        let mut w = world(5.0);
        let p = ahead(&w, 3.0, 0.0, 0.0);
        w.pedestrians.push(p);
        let obs = observe_exact(&w).pedestrians;
        assert!((time_to_collision(&w.ego, &obs[0], 1.3) - 0.6).abs() < 1e-9);
        assert_eq!(ttc_rule_policy(&w, &TtcConfig::default()), -1.0);
    }

    #[test]
    fn receding_pedestrian_is_ignored() {
        let mut w = world(1.0);
        let h = w.ego.heading;
        let p = ahead(&w, 3.0, 1.8, h);
        w.pedestrians.push(p);
        assert_eq!(ttc_rule_policy(&w, &TtcConfig::default()), 1.0);
    }

    #[test]
    fn cruise_is_capped() {
        let w = world(9.0);
        assert_eq!(ttc_rule_policy(&w, &TtcConfig::default()), 0.0);
        let w = world(8.9);
        let t = ttc_rule_policy(&w, &TtcConfig::default());
        let v = w.config.dynamics.next_speed(8.9, t);
        assert!((v - 9.0).abs() < 1e-9);
    }
}
