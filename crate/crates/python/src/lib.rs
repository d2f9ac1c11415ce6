//! Python bindings: profiles, the intersection world, the state encoder, the
//! replay and target math, and episode/experiment runs.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use safe_dqn::agent::{ddqn_target as ddqn, importance_weights as is_weights, sample_probability as per_probs};
use safe_dqn::config::Profile as CoreProfile;
use safe_dqn::encoder::encode_state_tensor;
use safe_dqn::harness::{
    load_agent, run_episode as core_run_episode, run_experiment as core_run_experiment, AgentVariant, Driver,
    EpisodeMetrics, Models, Setup,
};
use safe_dqn::nn::NetworkParams;
use safe_dqn::sim::{compute_reward, observe_exact, IntersectionLayout, LayoutKind, LayoutParams, WorldState};
use safe_dqn::Error;

create_exception!(safe_dqn_py, SafeDqnError, PyException);

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config(msg) => PyValueError::new_err(msg),
        other => SafeDqnError::new_err(other.to_string()),
    }
}

/// A run configuration: built-in `desk` or `full` profile plus `key = value` overrides.
#[pyclass(module = "safe_dqn_py", name = "Profile")]
struct Profile {
    inner: CoreProfile,
}

#[pymethods]
impl Profile {
    #[new]
    #[pyo3(signature = (name = "desk"))]
    fn new(name: &str) -> PyResult<Self> {
        CoreProfile::named(name).map(|inner| Self { inner }).map_err(to_py)
    }

    /// Parses the text of a config file.
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        CoreProfile::parse(text).map(|inner| Self { inner }).map_err(to_py)
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.set(key, value).map_err(to_py)?;
        self.inner.validate().map_err(to_py)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn grid(&self) -> (usize, usize) {
        (self.inner.qnet.rows, self.inner.qnet.cols)
    }

    #[getter]
    fn episodes(&self) -> usize {
        self.inner.agent.episodes
    }

    fn __repr__(&self) -> String {
        format!(
            "Profile(name={:?}, grid={}x{}, episodes={})",
            self.inner.name, self.inner.qnet.rows, self.inner.qnet.cols, self.inner.agent.episodes
        )
    }
}

fn parse_layout(layout: &str) -> PyResult<LayoutKind> {
    layout.parse().map_err(to_py)
}

fn parse_variant(variant: &str) -> PyResult<AgentVariant> {
    variant.parse().map_err(to_py)
}

/// The intersection world with a path-locked ego and crosswalk pedestrians.
#[pyclass(module = "safe_dqn_py")]
struct World {
    profile: CoreProfile,
    state: WorldState,
}

#[pymethods]
impl World {
    #[new]
    #[pyo3(signature = (seed = 0, layout = "four-way", profile = None, empty = false))]
    fn new(seed: u64, layout: &str, profile: Option<&Profile>, empty: bool) -> PyResult<Self> {
        let profile = profile.map_or_else(CoreProfile::desk, |p| p.inner.clone());
        let layout = Arc::new(IntersectionLayout::new(LayoutParams::for_kind(parse_layout(layout)?)));
        let state = if empty {
            WorldState::empty(layout, profile.world, seed)
        } else {
            WorldState::reset(layout, profile.world, seed)
        };
        Ok(Self { profile, state })
    }

    /// Advances one step; returns the event flags and the step reward.
    fn step<'py>(&mut self, py: Python<'py>, throttle: f64) -> PyResult<Bound<'py, PyDict>> {
        let before = self.state.clone();
        let events = self.state.step(throttle).map_err(to_py)?;
        let r = compute_reward(&before, &self.state, &events, &self.profile.reward);
        let d = PyDict::new(py);
        d.set_item("reward", r.reward)?;
        d.set_item("collision", events.collision.is_some())?;
        d.set_item("goal", events.goal)?;
        d.set_item("timeout", events.timeout)?;
        d.set_item("speed_violation", events.speed_violation)?;
        d.set_item("terminal", events.terminal())?;
        Ok(d)
    }

    /// `(x, y, heading_deg, speed)` of the ego.
    #[getter]
    fn ego(&self) -> (f64, f64, f64, f64) {
        let e = &self.state.ego;
        (e.position.x, e.position.y, e.heading, e.speed)
    }

    /// `(id, x, y, speed, heading_deg)` per pedestrian.
    #[getter]
    fn pedestrians(&self) -> Vec<(u32, f64, f64, f64, f64)> {
        observe_exact(&self.state)
            .pedestrians
            .iter()
            .map(|p| (p.id, p.position.x, p.position.y, p.speed, p.heading))
            .collect()
    }

    #[getter]
    fn time(&self) -> f64 {
        self.state.time()
    }

    #[getter]
    fn remaining_distance(&self) -> f64 {
        self.state.remaining_distance()
    }

    /// Encodes the exact scene as a `[3][rows][cols]` nested list.
    fn encode(&self) -> Vec<Vec<Vec<f32>>> {
        let spec = self.profile.roi();
        let t = encode_state_tensor(&observe_exact(&self.state).pedestrians, &self.state.ego, &spec);
        (0..3)
            .map(|layer| t.layer(layer).chunks(t.cols).map(<[f32]>::to_vec).collect())
            .collect()
    }
}

/// Sampling probabilities `p_i^alpha / sum_k p_k^alpha`.
#[pyfunction]
#[pyo3(signature = (priorities, alpha = 0.6))]
fn sample_probability(priorities: Vec<f64>, alpha: f64) -> PyResult<Vec<f64>> {
    per_probs(&priorities, alpha).map_err(to_py)
}

/// Importance-sampling weights normalized by their maximum.
#[pyfunction]
fn importance_weights(probabilities: Vec<f64>, buffer_len: usize, beta: f64) -> Vec<f64> {
    is_weights(&probabilities, buffer_len, beta)
}

/// Double-DQN target: the online net picks the action, the target net scores it.
#[pyfunction]
#[pyo3(signature = (reward, next_online, next_target, terminal = false, gamma = 0.95))]
fn ddqn_target(reward: f64, next_online: [f32; 4], next_target: [f32; 4], terminal: bool, gamma: f64) -> f64 {
    ddqn(reward, &next_online, &next_target, terminal, gamma)
}

fn metrics_dict<'py>(py: Python<'py>, m: &EpisodeMetrics) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("outcome", m.outcome.name())?;
    d.set_item("speed_violation", m.speed_violation)?;
    d.set_item("steps", m.steps)?;
    d.set_item("crossing_time", m.crossing_time)?;
    d.set_item("avg_speed", m.avg_speed)?;
    d.set_item("min_distance", m.min_distance)?;
    d.set_item("avg_distance", m.avg_distance)?;
    d.set_item("shield_interventions", m.shield_interventions)?;
    d.set_item("episode_return", m.episode_return)?;
    Ok(d)
}

fn setup_for(
    variant: AgentVariant,
    profile: Option<&Profile>,
    layout: &str,
    models: Option<PathBuf>,
) -> PyResult<(Setup, Option<NetworkParams>)> {
    let profile = profile.map_or_else(CoreProfile::desk, |p| p.inner.clone());
    let kind = parse_layout(layout)?;
    let (shared, net) = match (&models, variant.learns()) {
        (_, false) => (Models::default(), None),
        (Some(dir), true) => (
            Models::load(dir, &profile, &[variant]).map_err(to_py)?,
            Some(load_agent(dir, &profile, variant).map_err(to_py)?),
        ),
        (None, true) => {
            return Err(SafeDqnError::new_err(format!(
                "the {variant} variant needs a models directory"
            )))
        }
    };
    Ok((Setup::new(profile, shared).with_layout(kind), net))
}

/// Runs one evaluation episode and returns its metrics.
#[pyfunction]
#[pyo3(signature = (variant = "rule-based", seed = 0, layout = "four-way", profile = None, models = None))]
fn run_episode<'py>(
    py: Python<'py>,
    variant: &str,
    seed: u64,
    layout: &str,
    profile: Option<&Profile>,
    models: Option<PathBuf>,
) -> PyResult<Bound<'py, PyDict>> {
    let variant = parse_variant(variant)?;
    let (setup, net) = setup_for(variant, profile, layout, models)?;
    let driver = match &net {
        Some(n) => Driver::Greedy(n),
        None => Driver::Rule,
    };
    let run = py
        .detach(|| core_run_episode(&setup, variant, driver, seed, 0, false))
        .map_err(to_py)?;
    metrics_dict(py, &run.metrics)
}

/// Runs `episodes` evaluation episodes and returns the aggregate row.
#[pyfunction]
#[pyo3(signature = (variant = "rule-based", episodes = 20, seed = 0, layout = "four-way", profile = None, models = None))]
fn run_experiment<'py>(
    py: Python<'py>,
    variant: &str,
    episodes: usize,
    seed: u64,
    layout: &str,
    profile: Option<&Profile>,
    models: Option<PathBuf>,
) -> PyResult<Bound<'py, PyDict>> {
    let variant = parse_variant(variant)?;
    let (setup, net) = setup_for(variant, profile, layout, models)?;
    let result = py
        .detach(|| core_run_experiment(&setup, variant, net.as_ref(), episodes, seed, false))
        .map_err(to_py)?;
    let row = &result.row;
    let d = PyDict::new(py);
    d.set_item("variant", row.variant.name())?;
    d.set_item("episodes", row.episodes)?;
    d.set_item("success_pct", row.success_pct)?;
    d.set_item("collision_pct", row.collision_pct)?;
    d.set_item("timeout_pct", row.timeout_pct)?;
    d.set_item("speed_violation_pct", row.speed_violation_pct)?;
    d.set_item("crossing_time", row.crossing_time)?;
    d.set_item("avg_speed", row.avg_speed)?;
    d.set_item("avg_distance", row.avg_distance)?;
    d.set_item("min_distance", row.min_distance)?;
    d.set_item("interventions", row.interventions)?;
    d.set_item("csv", row.csv_row())?;
    Ok(d)
}

/// Runs the built-in invariant suites: `(name, passed, detail)` per suite.
#[pyfunction]
fn selfcheck(py: Python<'_>) -> Vec<(String, bool, String)> {
    py.detach(safe_dqn::selfcheck::run_all)
        .into_iter()
        .map(|r| (r.name.to_string(), r.passed, r.detail))
        .collect()
}

#[pymodule]
pub fn safe_dqn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SafeDqnError", m.py().get_type::<SafeDqnError>())?;
    m.add_class::<Profile>()?;
    m.add_class::<World>()?;
    m.add_function(wrap_pyfunction!(sample_probability, m)?)?;
    m.add_function(wrap_pyfunction!(importance_weights, m)?)?;
    m.add_function(wrap_pyfunction!(ddqn_target, m)?)?;
    m.add_function(wrap_pyfunction!(run_episode, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(selfcheck, m)?)?;
    Ok(())
}
