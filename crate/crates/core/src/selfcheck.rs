//! Fast invariant suites run by the `selfcheck` subcommand.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::{ddqn_target, dqn_target, importance_weights, ReplayBuffer};
use crate::belief::ObservationWindow;
use crate::config::Profile;
use crate::encoder::{encode_state_tensor, RoiSpec};
use crate::error::Result;
use crate::harness::{run_episode, AgentVariant, Driver, Models, Setup};
use crate::nn::gradcheck::{gradient_check, half_squared_error};
use crate::nn::{NetworkBuilder, Tensor};
use crate::shield::{FuturePredictor, Shield, ShieldConfig, ShieldView};
use crate::sim::{AnalyticDynamics, EgoState, ObservedPedestrian, Polyline, Vec2};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn result(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

fn gradients() -> Result<CheckResult> {
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dense = NetworkBuilder::new(&[4]).dense(5).tanh().dense(2).build(seed)?;
        let x = Tensor::from_vec(uniform(&mut rng, 4));
        let t = Tensor::from_vec(uniform(&mut rng, 2).into_iter().map(f64::from).collect());
        worst = worst.max(gradient_check(&dense, &x, None, &half_squared_error(t))?);

        let conv = NetworkBuilder::new(&[1, 6, 5])
            .conv2d(2, (3, 3), (1, 1))
            .avgpool2d((2, 2), (2, 2))
            .tanh()
            .flatten()
            .dense(2)
            .build(seed)?;
        let x = Tensor::new(vec![1, 6, 5], uniform(&mut rng, 30))?;
        let t = Tensor::from_vec(uniform(&mut rng, 2).into_iter().map(f64::from).collect());
        worst = worst.max(gradient_check(&conv, &x, None, &half_squared_error(t))?);

        let lstm = NetworkBuilder::new(&[3, 2]).lstm(3).dense(2).build(seed)?;
        let x = Tensor::new(vec![3, 2], uniform(&mut rng, 6))?;
        let t = Tensor::from_vec(uniform(&mut rng, 2).into_iter().map(f64::from).collect());
        worst = worst.max(gradient_check(&lstm, &x, None, &half_squared_error(t))?);
    }
    Ok(result(
        "gradients",
        worst < 1e-4,
        format!("max relative error {worst:.2e}"),
    ))
}

fn replay() -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut b = ReplayBuffer::new(8, 0.6, 1);
    for i in 0..8 {
        b.push(i);
    }
    let tds: Vec<f64> = (0..8).map(|i| (i + 1) as f64).collect();
    b.update_priorities(&(0..8).collect::<Vec<_>>(), &tds);
    let draws = 20_000;
    let mut counts = [0usize; 8];
    for _ in 0..draws / 4 {
        for &i in &b.sample(4, &mut rng)?.indices {
            counts[i] += 1;
        }
    }
    let worst = (0..8)
        .map(|i| (counts[i] as f64 / draws as f64 - b.probability(i)).abs())
        .fold(0.0, f64::max);
    let w = importance_weights(&[0.75, 0.25], 2, 1.0);
    let weights_ok = (w[0] - 1.0 / 3.0).abs() < 1e-9 && (w[1] - 1.0).abs() < 1e-9;
    let tree_ok = b.tree().consistency_error() < 1e-9;
    Ok(result(
        "replay",
        worst < 0.02 && weights_ok && tree_ok,
        format!("max frequency error {worst:.4}"),
    ))
}

fn double_q() -> CheckResult {
    let online = [0.2, 0.5, 0.1, 0.0];
    let target = [1.0, 2.0, 9.9, 0.0];
    let double = ddqn_target(1.0, &online, &target, false, 0.95);
    let single = dqn_target(1.0, &target, false, 0.95);
    result(
        "double-q",
        (double - 2.9).abs() < 1e-6 && (single - 10.405).abs() < 1e-6,
        format!("decoupled {double:.4}, coupled {single:.4}"),
    )
}

fn shield() -> Result<CheckResult> {
    let route = Polyline::new((0..=50).map(|i| Vec2::new(i as f64, 0.0)).collect());
    let ego = EgoState {
        position: Vec2::new(2.25, 0.0),
        heading: 0.0,
        speed: 5.0,
        progress: 2.25,
        route_index: 2,
    };
    let shield = Shield::new(
        ShieldConfig::default(),
        Arc::new(AnalyticDynamics::default()),
        FuturePredictor::ConstantVelocity,
    )?;
    let empty = ShieldView {
        ego: &ego,
        route: &route,
        windows: &[],
        current: &[],
    };
    let free = shield.filter_action(1.0, &empty)?;
    let ahead = Vec2::new(7.0, 0.0);
    let windows = [ObservationWindow::from_rows(0, &[[ahead.x, ahead.y, 0.0, 0.0]; 3])?];
    let blocked = shield.filter_action(
        1.0,
        &ShieldView {
            windows: &windows,
            current: &[ahead],
            ..empty
        },
    )?;
    let passed = !free.intervened && free.executed == 1.0 && blocked.intervened && blocked.executed == -1.0;
    Ok(result(
        "shield",
        passed,
        format!("blocked min distance {:.3} m", blocked.check.min_distance),
    ))
}

fn encoder() -> CheckResult {
    let spec = RoiSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    for _ in 0..200 {
        let ego = EgoState {
            position: Vec2::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)),
            heading: rng.random_range(0.0..360.0),
            speed: rng.random_range(0.0..12.0),
            progress: 0.0,
            route_index: 0,
        };
        let peds: Vec<ObservedPedestrian> = (0..6)
            .map(|i| ObservedPedestrian {
                id: i,
                position: ego.position + Vec2::new(rng.random_range(-25.0..25.0), rng.random_range(-25.0..25.0)),
                speed: rng.random_range(0.0..2.0),
                heading: rng.random_range(0.0..360.0),
            })
            .collect();
        let base = encode_state_tensor(&peds, &ego, &spec);
        let (angle, shift) = (
            rng.random_range(0.0..360.0f64),
            Vec2::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)),
        );
        let rotate = |p: Vec2| {
            let (s, c) = angle.to_radians().sin_cos();
            Vec2::new(c * p.x - s * p.y, s * p.x + c * p.y) + shift
        };
        let moved_ego = EgoState {
            position: rotate(ego.position),
            heading: ego.heading + angle,
            ..ego
        };
        let moved: Vec<ObservedPedestrian> = peds
            .iter()
            .map(|p| ObservedPedestrian {
                position: rotate(p.position),
                heading: p.heading + angle,
                ..*p
            })
            .collect();
        if encode_state_tensor(&moved, &moved_ego, &spec) != base {
            mismatches += 1;
        }
    }
    result(
        "encoder",
        mismatches == 0,
        format!("{mismatches} of 200 transforms changed the encoding"),
    )
}

fn determinism() -> Result<CheckResult> {
    let setup = Setup::new(Profile::desk(), Models::default());
    let a = run_episode(&setup, AgentVariant::RuleBased, Driver::Rule, 11, 0, true)?;
    let b = run_episode(&setup, AgentVariant::RuleBased, Driver::Rule, 11, 0, true)?;
    let same = a.metrics == b.metrics && a.trace == b.trace;
    Ok(result("determinism", same, format!("{} steps", a.metrics.steps)))
}

type Suite = fn() -> Result<CheckResult>;

/// Runs every suite; a suite that errors counts as failed.
pub fn run_all() -> Vec<CheckResult> {
    let suites: [(&'static str, Suite); 6] = [
        ("gradients", gradients),
        ("replay", replay),
        ("double-q", || Ok(double_q())),
        ("shield", shield),
        ("encoder", || Ok(encoder())),
        ("determinism", determinism),
    ];
    suites
        .into_iter()
        .map(|(name, suite)| suite().unwrap_or_else(|e| result(name, false, e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_suite_passes() {
        for r in run_all() {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }
}
