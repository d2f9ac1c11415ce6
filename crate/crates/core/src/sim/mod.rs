//! Fixed-step 2-D intersection world: path-locked ego, crosswalk pedestrians,
//! sensor noise, reward and a time-to-collision baseline.

pub mod dynamics;
pub mod geometry;
pub mod layout;
pub mod noise;
pub mod render;
pub mod reward;
pub mod ttc;
pub mod world;

pub use dynamics::{
    collect_dynamics_dataset, fit_dynamics_model, AnalyticDynamics, DynamicsDataset, DynamicsFitConfig, EgoDynamics,
    LearnedDynamics,
};
pub use geometry::{wrap_180, wrap_360, OrientedRect, Polyline, Vec2};
pub use layout::{Crosswalk, IntersectionLayout, LayoutKind, LayoutParams};
pub use noise::{apply_noise, observe_exact, NoiseConfig, NoisyObservation, ObservedPedestrian};
pub use render::render_frame;
pub use reward::{compute_reward, RewardBranch, RewardOutcome, RewardParams, TerminalCause};
pub use ttc::{time_to_collision, ttc_rule, ttc_rule_policy, TtcConfig};
pub use world::{EgoState, Events, Pedestrian, WorldConfig, WorldState, DT, EGO_LENGTH, EGO_WIDTH, FPS};
