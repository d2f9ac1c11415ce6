use rayon::prelude::*;
use serde::Serialize;

use super::{episode_seed, run_episode, AgentVariant, Driver, EpisodeMetrics, Outcome, Setup, TraceRow};
use crate::error::Result;
use crate::nn::NetworkParams;
use crate::sim::LayoutKind;

pub const METRICS_HEADER: &str = "variant,layout,episodes,success_pct,collision_pct,timeout_pct,\
speed_violation_pct,crossing_time_s,avg_speed_mps,avg_closest_distance_m,min_closest_distance_m,\
shield_interventions_per_episode";

/// Aggregate over one variant's evaluation episodes, in result-table column order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentRow {
    pub variant: AgentVariant,
    pub layout: LayoutKind,
    pub episodes: usize,
    pub success_pct: f64,
    pub collision_pct: f64,
    pub timeout_pct: f64,
    pub speed_violation_pct: f64,
    /// Mean over episodes that reached the goal; NaN if none did.
    pub crossing_time: f64,
    pub avg_speed: f64,
    pub avg_distance: f64,
    pub min_distance: f64,
    pub interventions: f64,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

impl ExperimentRow {
    pub fn from_metrics(variant: AgentVariant, layout: LayoutKind, m: &[EpisodeMetrics]) -> Self {
        let pct = |o: Outcome| 100.0 * m.iter().filter(|e| e.outcome == o).count() as f64 / m.len().max(1) as f64;
        Self {
            variant,
            layout,
            episodes: m.len(),
            success_pct: pct(Outcome::Success),
            collision_pct: pct(Outcome::Collision),
            timeout_pct: pct(Outcome::Timeout),
            speed_violation_pct: pct(Outcome::SpeedViolation),
            crossing_time: mean(
                m.iter()
                    .filter(|e| matches!(e.outcome, Outcome::Success | Outcome::SpeedViolation))
                    .map(|e| e.crossing_time),
            ),
            avg_speed: mean(m.iter().map(|e| e.avg_speed)),
            avg_distance: mean(m.iter().map(|e| e.avg_distance).filter(|d| d.is_finite())),
            min_distance: m.iter().map(|e| e.min_distance).fold(f64::INFINITY, f64::min),
            interventions: mean(m.iter().map(|e| e.shield_interventions as f64)),
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.2},{:.2},{:.2},{:.2},{:.4},{:.4},{:.4},{:.4},{:.4}",
            self.variant,
            self.layout,
            self.episodes,
            self.success_pct,
            self.collision_pct,
            self.timeout_pct,
            self.speed_violation_pct,
            self.crossing_time,
            self.avg_speed,
            self.avg_distance,
            self.min_distance,
            self.interventions
        )
    }

    pub fn table_header() -> String {
        format!(
            "{:<20} {:>8} {:>10} {:>11} {:>15} {:>15} {:>15} {:>16}",
            "Agent",
            "Success",
            "Collisions",
            "Out of time",
            "Speed violation",
            "Crossing time s",
            "Crossing m/s",
            "Closest ped. m"
        )
    }

    pub fn table_row(&self) -> String {
        format!(
            "{:<20} {:>7.0}% {:>9.0}% {:>10.0}% {:>14.0}% {:>15.2} {:>15.2} {:>16.2}",
            self.variant.name(),
            self.success_pct,
            self.collision_pct,
            self.timeout_pct,
            self.speed_violation_pct,
            self.crossing_time,
            self.avg_speed,
            self.avg_distance
        )
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub row: ExperimentRow,
    pub episodes: Vec<EpisodeMetrics>,
    /// Per-step rows of every episode, in episode order; empty unless requested.
    pub trace: Vec<TraceRow>,
}

/// Evaluates `episodes` independent episodes in parallel; results are joined in
/// episode order so output does not depend on scheduling.
pub fn run_experiment(
    setup: &Setup,
    variant: AgentVariant,
    q: Option<&NetworkParams>,
    episodes: usize,
    base_seed: u64,
    record_trace: bool,
) -> Result<ExperimentResult> {
    let runs: Vec<_> = (0..episodes as u64)
        .into_par_iter()
        .map(|i| {
            let driver = match q {
                Some(net) => Driver::Greedy(net),
                None => Driver::Rule,
            };
            run_episode(setup, variant, driver, episode_seed(base_seed, i), i, record_trace)
        })
        .collect::<Result<_>>()?;
    let metrics: Vec<EpisodeMetrics> = runs.iter().map(|r| r.metrics).collect();
    Ok(ExperimentResult {
        row: ExperimentRow::from_metrics(variant, setup.layout.kind(), &metrics),
        episodes: metrics,
        trace: runs.into_iter().flat_map(|r| r.trace).collect(),
    })
}
