//! Recurrent denoising of short pedestrian observation windows, plus a
//! future-position predictor and an analytic constant-velocity baseline.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::regress::{self, RegressionConfig, Samples};
use crate::nn::{Checkpoint, NetworkBuilder, NetworkParams, Optimizer};
use crate::norm::{Normalizer, Scaling};
use crate::sim::{
    apply_noise, wrap_360, IntersectionLayout, NoiseConfig, NoisyObservation, ObservedPedestrian, Vec2, WorldConfig,
    WorldState, DT,
};

pub const HISTORY: usize = 3;
pub const FEATURES: usize = 4;
/// Prediction horizon in steps (8/15 s).
pub const FUTURE_STEPS: usize = 8;
pub const HIDDEN: usize = 32;

/// Rows `t-2, t-1, t`; columns `x, y, speed, heading` (degrees).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationWindow {
    pub id: u32,
    pub rows: [[f64; FEATURES]; HISTORY],
}

impl ObservationWindow {
    pub fn from_rows(id: u32, rows: &[[f64; FEATURES]]) -> Result<Self> {
        let rows: [[f64; FEATURES]; HISTORY] = rows
            .try_into()
            .map_err(|_| Error::MalformedWindow(format!("expected {HISTORY} rows, got {}", rows.len())))?;
        let w = Self { id, rows };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::MalformedWindow(format!(
                "pedestrian {} has non-finite entries",
                self.id
            )));
        }
        Ok(())
    }

    pub fn position(&self, row: usize) -> Vec2 {
        Vec2::new(self.rows[row][0], self.rows[row][1])
    }

    pub fn current(&self) -> Vec2 {
        self.position(HISTORY - 1)
    }

    /// Positions plus velocity components, row by row.
    pub fn features(&self) -> [f64; HISTORY * FEATURES] {
        let mut out = [0.0; HISTORY * FEATURES];
        for (i, r) in self.rows.iter().enumerate() {
            let v = Vec2::from_heading(r[3]) * r[2];
            out[i * FEATURES..(i + 1) * FEATURES].copy_from_slice(&[r[0], r[1], v.x, v.y]);
        }
        out
    }

    pub fn translated(&self, by: Vec2) -> Self {
        let mut w = *self;
        for r in &mut w.rows {
            r[0] += by.x;
            r[1] += by.y;
        }
        w
    }
}

/// Least-squares velocity over the window, extrapolated `steps` ahead of the latest sample.
pub fn constant_velocity_predict(window: &ObservationWindow, steps: usize) -> Vec2 {
    let first = window.position(0);
    let last = window.current();
    let velocity = (last - first) * (1.0 / ((HISTORY - 1) as f64 * DT));
    last + velocity * (steps as f64 * DT)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerceivedState {
    pub id: u32,
    pub position: Vec2,
    pub speed: f64,
    /// Degrees in `[0, 360)`.
    pub heading: f64,
}

impl PerceivedState {
    pub fn as_observed(&self) -> ObservedPedestrian {
        ObservedPedestrian {
            id: self.id,
            position: self.position,
            speed: self.speed,
            heading: self.heading,
        }
    }
}

/// Rolling three-step observation history per pedestrian, back-filled at first sight.
#[derive(Debug, Clone, Default)]
pub struct ObservationHistory {
    tracks: BTreeMap<u32, [[f64; FEATURES]; HISTORY]>,
}

impl ObservationHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, obs: &NoisyObservation) {
        for p in &obs.pedestrians {
            let row = [p.position.x, p.position.y, p.speed, p.heading];
            self.tracks
                .entry(p.id)
                .and_modify(|rows| {
                    rows.rotate_left(1);
                    rows[HISTORY - 1] = row;
                })
                .or_insert([row; HISTORY]);
        }
    }

    /// Windows for the pedestrians in `obs`, in observation order.
    pub fn windows(&self, obs: &NoisyObservation) -> Vec<ObservationWindow> {
        obs.pedestrians
            .iter()
            .filter_map(|p| {
                self.tracks
                    .get(&p.id)
                    .map(|rows| ObservationWindow { id: p.id, rows: *rows })
            })
            .collect()
    }
}

/// One pedestrian followed for a whole episode.
#[derive(Debug, Clone, PartialEq)]
pub struct PedestrianTrack {
    pub clean: Vec<[f64; FEATURES]>,
    pub noisy: Vec<[f64; FEATURES]>,
}

impl PedestrianTrack {
    pub fn window(&self, t: usize) -> ObservationWindow {
        let mut rows = [[0.0; FEATURES]; HISTORY];
        for (i, row) in rows.iter_mut().enumerate() {
            let k = (t + i).saturating_sub(HISTORY - 1);
            *row = self.noisy[k];
        }
        ObservationWindow { id: 0, rows }
    }

    pub fn clean_position(&self, t: usize) -> Vec2 {
        Vec2::new(self.clean[t][0], self.clean[t][1])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PedestrianDataset {
    pub tracks: Vec<PedestrianTrack>,
}

pub const DATASET_HEADER: &str = "episode,step,clean_x,clean_y,clean_v,clean_th,noisy_x,noisy_y,noisy_v,noisy_th";

impl PedestrianDataset {
    pub fn rows(&self) -> usize {
        self.tracks.iter().map(|t| t.clean.len()).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(DATASET_HEADER);
        s.push('\n');
        for (e, t) in self.tracks.iter().enumerate() {
            for (i, (c, n)) in t.clean.iter().zip(&t.noisy).enumerate() {
                let _ = writeln!(
                    s,
                    "{e},{i},{},{},{},{},{},{},{},{}",
                    c[0], c[1], c[2], c[3], n[0], n[1], n[2], n[3]
                );
            }
        }
        s
    }

    /// Splits off the last `fraction` of episodes.
    pub fn split(&self, fraction: f64) -> (PedestrianDataset, PedestrianDataset) {
        let n = self.tracks.len();
        let held = ((n as f64 * fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
        let cut = n - held.min(n);
        (
            PedestrianDataset {
                tracks: self.tracks[..cut].to_vec(),
            },
            PedestrianDataset {
                tracks: self.tracks[cut..].to_vec(),
            },
        )
    }
}

/// One pedestrian per episode walking the layout's crosswalks, observed with and without noise.
pub fn collect_pedestrian_dataset(
    layout: &Arc<IntersectionLayout>,
    episodes: usize,
    steps: usize,
    noise: &NoiseConfig,
    seed: u64,
) -> PedestrianDataset {
    let config = WorldConfig {
        initial_pedestrians_min: 1,
        initial_pedestrians_max: 1,
        spawn_interval_steps: u64::MAX,
        episode_steps: u64::MAX,
        ..WorldConfig::default()
    };
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15);
    let tracks = (0..episodes)
        .map(|e| {
            let mut world = WorldState::reset(layout.clone(), config, seed.wrapping_add(e as u64));
            let mut clean = Vec::with_capacity(steps);
            let mut noisy = Vec::with_capacity(steps);
            for i in 0..steps {
                if i > 0 {
                    world.step(-1.0).expect("unbounded episode");
                }
                let p = world.pedestrians[0];
                clean.push([p.position.x, p.position.y, p.speed, wrap_360(p.heading)]);
                let o = apply_noise(&world, noise, &mut noise_rng).pedestrians[0];
                noisy.push([o.position.x, o.position.y, o.speed, o.heading]);
            }
            PedestrianTrack { clean, noisy }
        })
        .collect();
    PedestrianDataset { tracks }
}

/// LSTM over a normalized window followed by a linear head.
#[derive(Debug, Clone)]
pub struct SequenceRegressor {
    pub net: NetworkParams,
    pub input_norm: Normalizer,
    pub output_norm: Normalizer,
}

pub fn sequence_network(outputs: usize, seed: u64) -> Result<NetworkParams> {
    NetworkBuilder::new(&[HISTORY, FEATURES])
        .lstm(HIDDEN)
        .dense(outputs)
        .build(seed)
}

impl SequenceRegressor {
    fn outputs(&self) -> usize {
        self.output_norm.len()
    }

    /// Denormalized outputs, one row per window.
    pub fn predict_raw(&self, windows: &[ObservationWindow]) -> Result<Vec<Vec<f64>>> {
        for w in windows {
            w.validate()?;
        }
        if windows.is_empty() {
            return Ok(Vec::new());
        }
        let flat: Vec<f32> = windows
            .iter()
            .flat_map(|w| self.input_norm.transform(&w.features()))
            .map(|v| v as f32)
            .collect();
        let out = regress::predict(&self.net, &flat, 1024)?;
        Ok(out
            .chunks(self.outputs())
            .map(|o| {
                let o: Vec<f64> = o.iter().map(|&v| v as f64).collect();
                self.output_norm.inverse(&o)
            })
            .collect())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::from_network(&self.net);
        self.input_norm.write(&mut c, "norm.input");
        self.output_norm.write(&mut c, "norm.output");
        c
    }

    pub fn from_checkpoint(c: &Checkpoint, outputs: usize) -> Result<Self> {
        let mut net = sequence_network(outputs, 0)?;
        c.apply_to(&mut net)?;
        let output_norm = Normalizer::read(c, "norm.output")?;
        if output_norm.len() != outputs {
            return Err(Error::Checkpoint(format!(
                "expected {outputs} outputs, checkpoint normalizes {}",
                output_norm.len()
            )));
        }
        Ok(Self {
            net,
            input_norm: Normalizer::read(c, "norm.input")?,
            output_norm,
        })
    }
}

/// Estimates the current state of each pedestrian from its window.
#[derive(Debug, Clone)]
pub struct BeliefModel(pub SequenceRegressor);

impl BeliefModel {
    pub const OUTPUTS: usize = 4;

    pub fn perceive(&self, windows: &[ObservationWindow]) -> Result<Vec<PerceivedState>> {
        let raw = self.0.predict_raw(windows)?;
        Ok(windows
            .iter()
            .zip(raw)
            .map(|(w, o)| {
                let c = w.current();
                let v = Vec2::new(o[2], o[3]);
                PerceivedState {
                    id: w.id,
                    position: Vec2::new(c.x + o[0], c.y + o[1]),
                    speed: v.norm(),
                    heading: if v.norm() > 0.0 {
                        v.heading()
                    } else {
                        wrap_360(w.rows[HISTORY - 1][3])
                    },
                }
            })
            .collect())
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        SequenceRegressor::from_checkpoint(c, Self::OUTPUTS).map(Self)
    }
}

/// Predicts each pedestrian's position [`FUTURE_STEPS`] ahead.
#[derive(Debug, Clone)]
pub struct FutureModel(pub SequenceRegressor);

impl FutureModel {
    pub const OUTPUTS: usize = 2;

    pub fn predict(&self, windows: &[ObservationWindow]) -> Result<Vec<Vec2>> {
        let raw = self.0.predict_raw(windows)?;
        Ok(windows
            .iter()
            .zip(raw)
            .map(|(w, o)| w.current() + Vec2::new(o[0], o[1]))
            .collect())
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        SequenceRegressor::from_checkpoint(c, Self::OUTPUTS).map(Self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub holdout_fraction: f64,
    pub seed: u64,
    /// Training fails if the held-out per-axis position RMSE ends above this (m).
    pub max_rmse: f64,
}

impl SequenceTrainConfig {
    pub fn belief() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            lr: 1e-4,
            holdout_fraction: 0.1,
            seed: 0,
            max_rmse: 1.0 / 1.2,
        }
    }

    pub fn future() -> Self {
        Self {
            max_rmse: 0.6,
            ..Self::belief()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SequenceReport {
    pub train_loss: f64,
    /// Per-axis position RMSE of the model on held-out episodes (m).
    pub holdout_rmse: f64,
    /// Same metric for the raw latest noisy sample.
    pub baseline_rmse: f64,
    pub epochs_run: usize,
}

fn belief_target(track: &PedestrianTrack, t: usize, w: &ObservationWindow) -> Vec<f64> {
    let c = w.current();
    let clean = track.clean[t];
    let v = Vec2::from_heading(clean[3]) * clean[2];
    vec![clean[0] - c.x, clean[1] - c.y, v.x, v.y]
}

fn future_target(track: &PedestrianTrack, t: usize, w: &ObservationWindow) -> Vec<f64> {
    let c = w.current();
    let f = track.clean_position(t + FUTURE_STEPS);
    vec![f.x - c.x, f.y - c.y]
}

type Target = fn(&PedestrianTrack, usize, &ObservationWindow) -> Vec<f64>;

/// `(window, target position index, track index)` samples of a dataset.
fn samples(data: &PedestrianDataset, horizon: usize) -> Vec<(ObservationWindow, usize, usize)> {
    let mut out = Vec::new();
    for (k, track) in data.tracks.iter().enumerate() {
        for t in 0..track.clean.len().saturating_sub(horizon) {
            out.push((track.window(t), t, k));
        }
    }
    out
}

/// Per-axis RMSE between predicted and clean positions at `t + horizon`.
pub fn position_rmse(
    data: &PedestrianDataset,
    horizon: usize,
    predict: impl Fn(&[ObservationWindow]) -> Result<Vec<Vec2>>,
) -> Result<f64> {
    let s = samples(data, horizon);
    let windows: Vec<ObservationWindow> = s.iter().map(|x| x.0).collect();
    let pred = predict(&windows)?;
    let se: f64 = s
        .iter()
        .zip(&pred)
        .map(|((_, t, k), p)| {
            let truth = data.tracks[*k].clean_position(t + horizon);
            (p.x - truth.x).powi(2) + (p.y - truth.y).powi(2)
        })
        .sum();
    Ok((se / (2.0 * s.len() as f64)).sqrt())
}

fn train_sequence(
    data: &PedestrianDataset,
    cfg: &SequenceTrainConfig,
    horizon: usize,
    outputs: usize,
    target: Target,
    log: &mut dyn FnMut(usize, f64),
) -> Result<(SequenceRegressor, PedestrianDataset)> {
    let (train, held) = data.split(cfg.holdout_fraction);
    let s = samples(&train, horizon);
    if s.is_empty() {
        return Err(Error::Config("pedestrian dataset has no usable samples".into()));
    }
    let feats: Vec<[f64; HISTORY * FEATURES]> = s.iter().map(|x| x.0.features()).collect();
    let targets: Vec<Vec<f64>> = s.iter().map(|(w, t, k)| target(&train.tracks[*k], *t, w)).collect();
    let input_norm = Normalizer::fit(&feats, Scaling::ZScore).quantized();
    let output_norm = Normalizer::fit(&targets, Scaling::ZScore).quantized();
    let xs: Vec<f32> = feats
        .iter()
        .flat_map(|f| input_norm.transform(f))
        .map(|v| v as f32)
        .collect();
    let ys: Vec<f32> = targets
        .iter()
        .flat_map(|t| output_norm.transform(t))
        .map(|v| v as f32)
        .collect();
    let mut model = SequenceRegressor {
        net: sequence_network(outputs, cfg.seed)?,
        input_norm,
        output_norm,
    };
    let mut opt = Optimizer::adam(cfg.lr);
    regress::fit(
        &mut model.net,
        &mut opt,
        Samples {
            inputs: &xs,
            targets: &ys,
        },
        RegressionConfig {
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            seed: cfg.seed,
        },
        |e, l, _| {
            log(e, l);
            true
        },
    )?;
    Ok((model, held))
}

fn finish(name: &str, rmse: f64, cfg: &SequenceTrainConfig) -> Result<()> {
    if !(rmse <= cfg.max_rmse) {
        return Err(Error::NonConvergence {
            model: name.into(),
            metric: "held-out position RMSE".into(),
            value: rmse,
            threshold: cfg.max_rmse,
        });
    }
    Ok(())
}

/// Trains the belief model; `log(epoch, loss)` is called after every epoch.
pub fn train_belief_model(
    data: &PedestrianDataset,
    cfg: &SequenceTrainConfig,
    mut log: impl FnMut(usize, f64),
) -> Result<(BeliefModel, SequenceReport)> {
    let mut last = f64::NAN;
    let (model, held) = train_sequence(data, cfg, 0, BeliefModel::OUTPUTS, belief_target, &mut |e, l| {
        last = l;
        log(e, l)
    })?;
    let model = BeliefModel(model);
    let rmse = position_rmse(&held, 0, |w| {
        Ok(model.perceive(w)?.iter().map(|p| p.position).collect())
    })?;
    let baseline = position_rmse(&held, 0, |w| Ok(w.iter().map(|w| w.current()).collect()))?;
    let report = SequenceReport {
        train_loss: last,
        holdout_rmse: rmse,
        baseline_rmse: baseline,
        epochs_run: cfg.epochs,
    };
    finish("belief", rmse, cfg)?;
    Ok((model, report))
}

/// Trains the future-position model on clean positions [`FUTURE_STEPS`] ahead.
pub fn train_future_model(
    data: &PedestrianDataset,
    cfg: &SequenceTrainConfig,
    mut log: impl FnMut(usize, f64),
) -> Result<(FutureModel, SequenceReport)> {
    let mut last = f64::NAN;
    let (model, held) = train_sequence(
        data,
        cfg,
        FUTURE_STEPS,
        FutureModel::OUTPUTS,
        future_target,
        &mut |e, l| {
            last = l;
            log(e, l)
        },
    )?;
    let model = FutureModel(model);
    let rmse = position_rmse(&held, FUTURE_STEPS, |w| model.predict(w))?;
    let baseline = position_rmse(&held, FUTURE_STEPS, |w| Ok(w.iter().map(|w| w.current()).collect()))?;
    let report = SequenceReport {
        train_loss: last,
        holdout_rmse: rmse,
        baseline_rmse: baseline,
        epochs_run: cfg.epochs,
    };
    finish("future", rmse, cfg)?;
    Ok((model, report))
}
