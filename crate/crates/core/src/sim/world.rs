use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dynamics::{AnalyticDynamics, EgoDynamics};
use super::geometry::{OrientedRect, Vec2};
use super::layout::{IntersectionLayout, ROUTE_WAYPOINTS};
use crate::error::{Error, Result};

pub const FPS: f64 = 15.0;
pub const DT: f64 = 1.0 / FPS;
pub const EGO_LENGTH: f64 = 4.5;
pub const EGO_WIDTH: f64 = 2.0;
pub const GOAL_INDEX: usize = ROUTE_WAYPOINTS - 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub initial_pedestrians_min: usize,
    pub initial_pedestrians_max: usize,
    pub spawn_interval_steps: u64,
    pub spawn_batch: usize,
    pub pedestrian_speed_min: f64,
    pub pedestrian_speed_max: f64,
    pub episode_steps: u64,
    /// Speed above which a step counts as a violation (m/s).
    pub speed_limit: f64,
    pub collision_radius: f64,
    /// Pedestrians stop and turn back instead of stepping closer than this to the ego.
    pub yield_distance: f64,
    /// Minimum spawn distance from the ego footprint.
    pub spawn_clearance: f64,
    pub dynamics: AnalyticDynamics,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            initial_pedestrians_min: 5,
            initial_pedestrians_max: 30,
            spawn_interval_steps: 150,
            spawn_batch: 5,
            pedestrian_speed_min: 0.2,
            pedestrian_speed_max: 1.8,
            episode_steps: 675,
            speed_limit: 10.0,
            collision_radius: 0.3,
            yield_distance: 0.6,
            spawn_clearance: 2.0,
            dynamics: AnalyticDynamics::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    /// Center of the footprint.
    pub position: Vec2,
    /// Degrees, counter-clockwise from +x.
    pub heading: f64,
    pub speed: f64,
    /// Arc length travelled along the route.
    pub progress: f64,
    pub route_index: usize,
}

impl EgoState {
    pub fn at_progress(layout: &IntersectionLayout, progress: f64, speed: f64) -> Self {
        let route = &layout.route;
        let progress = progress.clamp(0.0, route.length());
        let route_index = if progress >= route.length() {
            GOAL_INDEX
        } else {
            route.segment_at(progress)
        };
        Self {
            position: route.point_at(progress),
            heading: route.heading_at(progress),
            speed,
            progress,
            route_index,
        }
    }

    pub fn footprint(&self) -> OrientedRect {
        OrientedRect {
            center: self.position,
            heading: self.heading,
            length: EGO_LENGTH,
            width: EGO_WIDTH,
        }
    }

    pub fn velocity(&self) -> Vec2 {
        Vec2::from_heading(self.heading) * self.speed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pedestrian {
    pub id: u32,
    pub position: Vec2,
    /// Walking speed (m/s), fixed at spawn.
    pub speed: f64,
    /// Degrees toward `destination`.
    pub heading: f64,
    pub destination: Vec2,
    pub crosswalk: usize,
}

impl Pedestrian {
    pub fn velocity(&self) -> Vec2 {
        Vec2::from_heading(self.heading) * self.speed
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Events {
    /// Id of the pedestrian hit this step.
    pub collision: Option<u32>,
    pub goal: bool,
    pub timeout: bool,
    pub speed_violation: bool,
    pub spawned: usize,
}

impl Events {
    pub fn terminal(&self) -> bool {
        self.collision.is_some() || self.goal || self.timeout
    }
}

#[derive(Debug, Clone)]
pub struct WorldState {
    pub step_index: u64,
    pub ego: EgoState,
    pub pedestrians: Vec<Pedestrian>,
    pub layout: Arc<IntersectionLayout>,
    pub config: WorldConfig,
    pub terminal: bool,
    next_id: u32,
    rng: ChaCha8Rng,
}

impl WorldState {
    /// Fresh episode: ego parked at the route start with a random crowd on the crosswalks.
    pub fn reset(layout: Arc<IntersectionLayout>, config: WorldConfig, seed: u64) -> Self {
        let ego = EgoState::at_progress(&layout, 0.0, 0.0);
        let mut world = Self {
            step_index: 0,
            ego,
            pedestrians: Vec::new(),
            layout,
            config,
            terminal: false,
            next_id: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let n = world
            .rng
            .random_range(config.initial_pedestrians_min..=config.initial_pedestrians_max);
        world.spawn(n);
        world
    }

    /// Same as [`WorldState::reset`] but without pedestrians.
    pub fn empty(layout: Arc<IntersectionLayout>, config: WorldConfig, seed: u64) -> Self {
        let mut w = Self::reset(layout, config, seed);
        w.pedestrians.clear();
        w
    }

    pub fn time(&self) -> f64 {
        self.step_index as f64 / FPS
    }

    pub fn remaining_distance(&self) -> f64 {
        (self.layout.route.length() - self.ego.progress).max(0.0)
    }

    /// Adds `n` pedestrians at random crosswalk positions clear of the ego.
    pub fn spawn(&mut self, n: usize) -> usize {
        let footprint = self.ego.footprint();
        let mut added = 0;
        for _ in 0..n {
            for _attempt in 0..1000 {
                let cw_index = self.rng.random_range(0..self.layout.crosswalks.len());
                let cw = self.layout.crosswalks[cw_index];
                let t: f64 = self.rng.random();
                let position = cw.point_at(t);
                if footprint.distance_to(position) < self.config.spawn_clearance {
                    continue;
                }
                let destination = self.pick_destination(cw_index, t);
                let speed = self
                    .rng
                    .random_range(self.config.pedestrian_speed_min..=self.config.pedestrian_speed_max);
                self.pedestrians.push(Pedestrian {
                    id: self.next_id,
                    position,
                    speed,
                    heading: (destination - position).heading(),
                    destination,
                    crosswalk: cw_index,
                });
                self.next_id += 1;
                added += 1;
                break;
            }
        }
        added
    }

    fn pick_destination(&mut self, crosswalk: usize, from: f64) -> Vec2 {
        let cw = self.layout.crosswalks[crosswalk];
        let min_gap = (2.0 / cw.length()).min(0.5);
        loop {
            let t: f64 = self.rng.random();
            if (t - from).abs() >= min_gap {
                return cw.point_at(t);
            }
        }
    }

    /// Advances one 1/15 s step under `throttle` in `[-1, 1]`.
    pub fn step(&mut self, throttle: f64) -> Result<Events> {
        if self.terminal {
            return Err(Error::StepAfterTerminal);
        }
        if !throttle.is_finite() {
            return Err(Error::NonFinite("throttle".into()));
        }
        let throttle = throttle.clamp(-1.0, 1.0);
        self.ego = self.config.dynamics.advance(&self.ego, &self.layout.route, throttle);
        self.step_index += 1;
        self.move_pedestrians();

        let mut events = Events::default();
        if self.step_index.is_multiple_of(self.config.spawn_interval_steps) {
            events.spawned = self.spawn(self.config.spawn_batch);
        }
        let footprint = self.ego.footprint();
        events.collision = self
            .pedestrians
            .iter()
            .map(|p| (footprint.distance_to(p.position), p.id))
            .filter(|&(d, _)| d < self.config.collision_radius)
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, id)| id);
        events.goal = self.ego.route_index == GOAL_INDEX;
        events.timeout = self.step_index >= self.config.episode_steps;
        events.speed_violation = self.ego.speed > self.config.speed_limit;
        self.terminal = events.terminal();
        Ok(events)
    }

    fn move_pedestrians(&mut self) {
        let footprint = self.ego.footprint();
        let yield_distance = self.config.yield_distance;
        for i in 0..self.pedestrians.len() {
            let p = self.pedestrians[i];
            let to = p.destination - p.position;
            let dist = to.norm();
            let reach = p.speed * DT;
            let arrived = dist <= reach;
            let candidate = if arrived {
                p.destination
            } else {
                p.position + to * (reach / dist)
            };
            let near_next = footprint.distance_to(candidate);
            if near_next < yield_distance && near_next < footprint.distance_to(p.position) {
                let cw = self.layout.crosswalks[p.crosswalk];
                let back = if (cw.b - cw.a).dot(to) > 0.0 { cw.a } else { cw.b };
                let ped = &mut self.pedestrians[i];
                ped.destination = back;
                if back != ped.position {
                    ped.heading = (back - ped.position).heading();
                }
                continue;
            }
            let destination = if arrived {
                let cw = self.layout.crosswalks[p.crosswalk];
                let t = (candidate - cw.a).dot(cw.b - cw.a) / (cw.length() * cw.length());
                self.pick_destination(p.crosswalk, t)
            } else {
                p.destination
            };
            let ped = &mut self.pedestrians[i];
            ped.position = candidate;
            ped.destination = destination;
            ped.heading = (destination - candidate).heading();
        }
    }
}
