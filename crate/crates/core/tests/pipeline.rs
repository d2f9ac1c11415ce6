use std::sync::{Arc, OnceLock};

use safe_dqn::belief::{collect_pedestrian_dataset, train_belief_model, train_future_model, SequenceTrainConfig};
use safe_dqn::config::Profile;
use safe_dqn::harness::{
    run_episode, run_experiment, AgentVariant, Driver, EpisodeMetrics, ExperimentRow, Models, Outcome, Setup, TraceRow,
};
use safe_dqn::nn::{bias_key, NetworkParams};
use safe_dqn::sim::{IntersectionLayout, LayoutParams};

/// Quick, barely trained perception models: enough to exercise the wiring.
fn rough_models() -> &'static Models {
    static MODELS: OnceLock<Models> = OnceLock::new();
    MODELS.get_or_init(|| {
        let profile = Profile::desk();
        let layout = Arc::new(IntersectionLayout::new(LayoutParams::for_kind(profile.layout)));
        let data = collect_pedestrian_dataset(&layout, 20, 80, &profile.noise, 1);
        let cfg = SequenceTrainConfig {
            epochs: 1,
            max_rmse: f64::INFINITY,
            ..SequenceTrainConfig::belief()
        };
        let (belief, _) = train_belief_model(&data, &cfg, |_, _| {}).unwrap();
        let (future, _) = train_future_model(&data, &cfg, |_, _| {}).unwrap();
        Models {
            belief: Some(Arc::new(belief)),
            future: Some(Arc::new(future)),
            dynamics: None,
        }
    })
}

/// A Q-network that always prefers action `action`.
fn constant_policy(profile: &Profile, action: usize) -> NetworkParams {
    let mut net = profile.qnet.build(0).unwrap();
    let last = net
        .layers()
        .iter()
        .rev()
        .find(|l| l.kind.is_trainable())
        .unwrap()
        .name
        .clone();
    for t in net.weights_mut().values_mut() {
        t.fill(0.0);
    }
    net.weights_mut().get_mut(&bias_key(&last)).unwrap().data_mut()[action] = 1.0;
    net
}

fn metrics_from_trace(rows: &[TraceRow]) -> EpisodeMetrics {
    let last = rows.last().unwrap();
    let violation = rows.iter().any(|r| r.speed_violation);
    let outcome = match (last.collision, last.goal) {
        (true, _) => Outcome::Collision,
        (false, true) if violation => Outcome::SpeedViolation,
        (false, true) => Outcome::Success,
        _ => Outcome::Timeout,
    };
    let distances: Vec<f64> = rows.iter().filter_map(|r| r.closest_distance).collect();
    EpisodeMetrics {
        outcome,
        speed_violation: violation,
        steps: rows.len() as u64,
        crossing_time: last.time,
        avg_speed: rows.iter().map(|r| r.speed).sum::<f64>() / rows.len() as f64,
        min_distance: distances.iter().copied().fold(f64::INFINITY, f64::min),
        avg_distance: if distances.is_empty() {
            f64::INFINITY
        } else {
            distances.iter().sum::<f64>() / distances.len() as f64
        },
        shield_interventions: rows.iter().filter(|r| r.intervened).count() as u64,
        episode_return: rows.iter().map(|r| r.reward).sum(),
    }
}

#[test]
fn trace_reproduces_the_metrics_row() {
    let profile = Profile::desk();
    let setup = Setup::new(profile.clone(), rough_models().clone());
    let net = constant_policy(&profile, 2);
    for (variant, q) in [(AgentVariant::RuleBased, None), (AgentVariant::Srl, Some(&net))] {
        let result = run_experiment(&setup, variant, q, 6, 21, true).unwrap();
        let rebuilt: Vec<EpisodeMetrics> = (0..6u64)
            .map(|e| {
                let rows: Vec<TraceRow> = result.trace.iter().filter(|r| r.episode == e).cloned().collect();
                metrics_from_trace(&rows)
            })
            .collect();
        for (a, b) in rebuilt.iter().zip(&result.episodes) {
            assert_eq!(a.outcome, b.outcome);
            assert_eq!(a.steps, b.steps);
            assert_eq!(a.shield_interventions, b.shield_interventions);
            assert!((a.episode_return - b.episode_return).abs() < 1e-9);
            assert!((a.avg_speed - b.avg_speed).abs() < 1e-9);
        }
        let row = ExperimentRow::from_metrics(variant, setup.layout.kind(), &rebuilt);
        assert_eq!(row.csv_row(), result.row.csv_row(), "{variant}");
    }
}

#[test]
fn shielded_run_executes_the_shield_decision() {
    let profile = Profile::desk();
    let setup = Setup::new(profile.clone(), rough_models().clone());
    let net = constant_policy(&profile, 3);
    let mut interventions = 0;
    for seed in 0..4 {
        let run = run_episode(&setup, AgentVariant::Srl, Driver::Greedy(&net), seed, seed, true).unwrap();
        for r in &run.trace {
            assert_eq!(r.nominated, 1.0);
            let expected = if r.intervened {
                profile.shield.fallback_throttle
            } else {
                r.nominated
            };
            assert_eq!(r.executed, expected, "episode {} step {}", r.episode, r.step);
            if let Some(d) = r.shield_min_distance {
                assert_eq!(r.intervened, d < profile.shield.distance_threshold);
            }
        }
        interventions += run.metrics.shield_interventions;
    }
    assert!(interventions > 0, "crowded scenes should trigger the shield");
}

#[test]
fn shielded_agent_crosses_an_empty_intersection() {
    let mut profile = Profile::desk();
    profile.world.initial_pedestrians_min = 0;
    profile.world.initial_pedestrians_max = 0;
    profile.world.spawn_interval_steps = u64::MAX;
    let setup = Setup::new(profile.clone(), rough_models().clone());
    let net = constant_policy(&profile, 2);
    let run = run_episode(&setup, AgentVariant::Srl, Driver::Greedy(&net), 3, 0, false).unwrap();
    assert_eq!(run.metrics.outcome, Outcome::Success);
    assert_eq!(run.metrics.shield_interventions, 0);
    assert!(run.metrics.crossing_time < 45.0, "{}", run.metrics.crossing_time);
}

#[test]
fn learning_variants_need_their_models() {
    let profile = Profile::desk();
    let setup = Setup::new(profile.clone(), Models::default());
    let net = constant_policy(&profile, 1);
    for v in [
        AgentVariant::BeliefUpdate,
        AgentVariant::CollisionDetector,
        AgentVariant::Srl,
    ] {
        assert!(
            run_episode(&setup, v, Driver::Greedy(&net), 0, 0, false).is_err(),
            "{v}"
        );
    }
    assert!(run_episode(&setup, AgentVariant::Rl, Driver::Greedy(&net), 0, 0, false).is_ok());
}
