use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::geometry::{Polyline, Vec2};
use super::layout::IntersectionLayout;
use super::world::{EgoState, DT, GOAL_INDEX};
use crate::error::{Error, Result};
use crate::nn::regress::{self, RegressionConfig, Samples};
use crate::nn::{Checkpoint, NetworkBuilder, NetworkParams, Optimizer, Tensor};
use crate::norm::{Normalizer, Scaling};

/// Advances an ego state one step along its route.
pub trait EgoDynamics {
    fn advance(&self, ego: &EgoState, route: &Polyline, throttle: f64) -> EgoState;
}

/// Piecewise-linear throttle response with no drag and no reverse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticDynamics {
    pub drive_accel: f64,
    pub brake_decel: f64,
    pub max_speed: f64,
}

impl Default for AnalyticDynamics {
    fn default() -> Self {
        Self {
            drive_accel: 3.5,
            brake_decel: 8.0,
            max_speed: 12.0,
        }
    }
}

impl AnalyticDynamics {
    pub fn next_speed(&self, speed: f64, throttle: f64) -> f64 {
        let a = if throttle >= 0.0 {
            self.drive_accel * throttle
        } else {
            self.brake_decel * throttle
        };
        (speed + a * DT).clamp(0.0, self.max_speed)
    }
}

fn place(route: &Polyline, progress: f64, speed: f64) -> EgoState {
    let progress = progress.clamp(0.0, route.length());
    let route_index = if progress >= route.length() {
        GOAL_INDEX
    } else {
        route.segment_at(progress)
    };
    EgoState {
        position: route.point_at(progress),
        heading: route.heading_at(progress),
        speed,
        progress,
        route_index,
    }
}

impl EgoDynamics for AnalyticDynamics {
    fn advance(&self, ego: &EgoState, route: &Polyline, throttle: f64) -> EgoState {
        let speed = self.next_speed(ego.speed, throttle);
        place(route, ego.progress + speed * DT, speed)
    }
}

pub const DYNAMICS_INPUTS: usize = 5;
pub const DYNAMICS_OUTPUTS: usize = 3;

/// `(throttle, x, y, speed, curvature)` rows and the next `(x, y, speed)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsDataset {
    pub inputs: Vec<[f64; DYNAMICS_INPUTS]>,
    pub targets: Vec<[f64; DYNAMICS_OUTPUTS]>,
}

fn features(ego: &EgoState, route: &Polyline, throttle: f64) -> [f64; DYNAMICS_INPUTS] {
    [
        throttle,
        ego.position.x,
        ego.position.y,
        ego.speed,
        route.curvature_at(ego.route_index),
    ]
}

/// Random-throttle rollouts from random route positions and speeds.
pub fn collect_dynamics_dataset(
    layout: &IntersectionLayout,
    dynamics: &AnalyticDynamics,
    episodes: usize,
    steps: usize,
    seed: u64,
) -> DynamicsDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let route = &layout.route;
    let random_state = |rng: &mut ChaCha8Rng| {
        let progress = rng.random_range(0.0..route.length());
        let speed = rng.random_range(0.0..=dynamics.max_speed);
        place(route, progress, speed)
    };
    let mut inputs = Vec::with_capacity(episodes * steps);
    let mut targets = Vec::with_capacity(episodes * steps);
    for _ in 0..episodes {
        let mut ego = random_state(&mut rng);
        for _ in 0..steps {
            let throttle = rng.random_range(-1.0..=1.0);
            let next = dynamics.advance(&ego, route, throttle);
            inputs.push(features(&ego, route, throttle));
            targets.push([next.position.x, next.position.y, next.speed]);
            ego = if next.route_index == GOAL_INDEX {
                random_state(&mut rng)
            } else {
                next
            };
        }
    }
    DynamicsDataset { inputs, targets }
}

impl DynamicsDataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Per-step change `(dx, dy, dspeed)` the surrogate is trained on.
    pub fn residuals(&self) -> Vec<[f64; DYNAMICS_OUTPUTS]> {
        self.inputs
            .iter()
            .zip(&self.targets)
            .map(|(i, t)| [t[0] - i[1], t[1] - i[2], t[2] - i[3]])
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicsFitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub holdout_fraction: f64,
    pub seed: u64,
    pub speed_rmse_threshold: f64,
}

impl Default for DynamicsFitConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            lr: 1e-4,
            holdout_fraction: 0.1,
            seed: 0,
            speed_rmse_threshold: 0.05,
        }
    }
}

/// Dense surrogate of the ego dynamics.
#[derive(Debug, Clone)]
pub struct LearnedDynamics {
    pub net: NetworkParams,
    pub input_norm: Normalizer,
    pub output_norm: Normalizer,
    pub max_speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DynamicsReport {
    pub train_loss: f64,
    pub holdout_speed_rmse: f64,
    pub holdout_position_rmse: f64,
    pub holdout_position_max: f64,
    pub epochs_run: usize,
}

pub fn dynamics_network(seed: u64) -> Result<NetworkParams> {
    NetworkBuilder::new(&[DYNAMICS_INPUTS])
        .dense(32)
        .relu()
        .dense(32)
        .relu()
        .dense(16)
        .relu()
        .dense(DYNAMICS_OUTPUTS)
        .build(seed)
}

impl LearnedDynamics {
    pub fn untrained(data: &DynamicsDataset, max_speed: f64, seed: u64) -> Result<Self> {
        Ok(Self {
            net: dynamics_network(seed)?,
            input_norm: Normalizer::fit(&data.inputs, Scaling::MinMax).quantized(),
            output_norm: Normalizer::fit(&data.residuals(), Scaling::MinMax).quantized(),
            max_speed,
        })
    }

    /// Predicted next `(x, y, speed)`.
    pub fn predict(&self, row: &[f64; DYNAMICS_INPUTS]) -> Result<[f64; DYNAMICS_OUTPUTS]> {
        Ok(self.predict_many(std::slice::from_ref(row))?[0])
    }

    pub fn predict_many(&self, rows: &[[f64; DYNAMICS_INPUTS]]) -> Result<Vec<[f64; DYNAMICS_OUTPUTS]>> {
        let flat: Vec<f32> = rows
            .iter()
            .flat_map(|r| self.input_norm.transform(r))
            .map(|v| v as f32)
            .collect();
        let out = regress::predict(&self.net, &flat, 4096)?;
        Ok(rows
            .iter()
            .zip(out.chunks(DYNAMICS_OUTPUTS))
            .map(|(r, o)| {
                let o: Vec<f64> = o.iter().map(|&v| v as f64).collect();
                let d = self.output_norm.inverse(&o);
                [r[1] + d[0], r[2] + d[1], (r[3] + d[2]).clamp(0.0, self.max_speed)]
            })
            .collect())
    }

    pub fn evaluate(
        &self,
        inputs: &[[f64; DYNAMICS_INPUTS]],
        targets: &[[f64; DYNAMICS_OUTPUTS]],
    ) -> Result<(f64, f64, f64)> {
        let pred = self.predict_many(inputs)?;
        let n = pred.len() as f64;
        let mut speed_se = 0.0;
        let mut pos_se = 0.0;
        let mut pos_max = 0.0f64;
        for (p, t) in pred.iter().zip(targets) {
            speed_se += (p[2] - t[2]).powi(2);
            let e = Vec2::new(p[0], p[1]).dist(Vec2::new(t[0], t[1]));
            pos_se += e * e;
            pos_max = pos_max.max(e);
        }
        Ok(((speed_se / n).sqrt(), (pos_se / n).sqrt(), pos_max))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::from_network(&self.net);
        self.input_norm.write(&mut c, "norm.input");
        self.output_norm.write(&mut c, "norm.output");
        c.push("meta.max_speed", Tensor::scalar(self.max_speed as f32));
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let mut net = dynamics_network(0)?;
        c.apply_to(&mut net)?;
        let max_speed = c
            .get("meta.max_speed")
            .map(|t| t.data()[0] as f64)
            .ok_or_else(|| Error::Checkpoint("missing `meta.max_speed`".into()))?;
        Ok(Self {
            net,
            input_norm: Normalizer::read(c, "norm.input")?,
            output_norm: Normalizer::read(c, "norm.output")?,
            max_speed,
        })
    }
}

impl EgoDynamics for LearnedDynamics {
    fn advance(&self, ego: &EgoState, route: &Polyline, throttle: f64) -> EgoState {
        let row = features(ego, route, throttle);
        let Ok([x, y, speed]) = self.predict(&row) else {
            return AnalyticDynamics::default().advance(ego, route, throttle);
        };
        let position = Vec2::new(x, y);
        let progress = route.project(position).max(ego.progress);
        let mut next = place(route, progress, speed);
        next.position = position;
        next
    }
}

impl<D: EgoDynamics + ?Sized> EgoDynamics for Arc<D> {
    fn advance(&self, ego: &EgoState, route: &Polyline, throttle: f64) -> EgoState {
        (**self).advance(ego, route, throttle)
    }
}

/// Fits the surrogate; fails if the held-out speed RMSE stays above the threshold.
pub fn fit_dynamics_model(
    data: &DynamicsDataset,
    cfg: &DynamicsFitConfig,
    max_speed: f64,
    mut log: impl FnMut(usize, f64),
) -> Result<(LearnedDynamics, DynamicsReport)> {
    let n = data.len();
    let holdout = ((n as f64 * cfg.holdout_fraction) as usize).clamp(1, n.saturating_sub(1));
    let split = n - holdout;
    let train = DynamicsDataset {
        inputs: data.inputs[..split].to_vec(),
        targets: data.targets[..split].to_vec(),
    };
    let mut model = LearnedDynamics::untrained(&train, max_speed, cfg.seed)?;
    let xs: Vec<f32> = train
        .inputs
        .iter()
        .flat_map(|r| model.input_norm.transform(r))
        .map(|v| v as f32)
        .collect();
    let ys: Vec<f32> = train
        .residuals()
        .iter()
        .flat_map(|r| model.output_norm.transform(r))
        .map(|v| v as f32)
        .collect();
    let mut opt = Optimizer::adam(cfg.lr);
    let rcfg = RegressionConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
    };
    let history = regress::fit(
        &mut model.net,
        &mut opt,
        Samples {
            inputs: &xs,
            targets: &ys,
        },
        rcfg,
        |epoch, loss, _| {
            log(epoch, loss);
            true
        },
    )?;
    let (speed, pos, pos_max) = model.evaluate(&data.inputs[split..], &data.targets[split..])?;
    let report = DynamicsReport {
        train_loss: *history.last().unwrap_or(&f64::NAN),
        holdout_speed_rmse: speed,
        holdout_position_rmse: pos,
        holdout_position_max: pos_max,
        epochs_run: history.len(),
    };
    if !(speed < cfg.speed_rmse_threshold) {
        return Err(Error::NonConvergence {
            model: "dynamics".into(),
            metric: "held-out speed RMSE".into(),
            value: speed,
            threshold: cfg.speed_rmse_threshold,
        });
    }
    Ok((model, report))
}
