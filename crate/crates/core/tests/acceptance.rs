//! End-to-end acceptance suite. Each test prints one `PASS`/`FAIL` line straight to
//! stdout so the verdicts show up even when libtest captures output.
//!
//! The desk-scale training fixture (perception models plus four learning agents) is
//! built once and shared; every test holds a global lock so the timed checks do not
//! compete for the CPU with training.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::{Arc, Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use safe_dqn::agent::{ddqn_target, dqn_target, importance_weights, ReplayBuffer, PRIORITY_EPSILON};
use safe_dqn::belief::{
    collect_pedestrian_dataset, train_belief_model, train_future_model, BeliefModel, ObservationWindow, SequenceReport,
    SequenceTrainConfig,
};
use safe_dqn::config::{Profile, ShieldPerception};
use safe_dqn::encoder::encode_state_tensor;
use safe_dqn::harness::{run_experiment, train_variant, AgentVariant, ExperimentRow, Models, Setup};
use safe_dqn::nn::gradcheck::{gradient_check, half_squared_error};
use safe_dqn::nn::{NetworkBuilder, NetworkParams, Tensor};
use safe_dqn::shield::{predicts_collision, rollout_ego, rollout_pedestrians, FuturePredictor, ShieldConfig};
use safe_dqn::sim::{
    collect_dynamics_dataset, fit_dynamics_model, AnalyticDynamics, DynamicsFitConfig, EgoDynamics, EgoState,
    IntersectionLayout, LayoutKind, LayoutParams, ObservedPedestrian, Vec2,
};

const DT: f64 = 1.0 / 15.0;

fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(criterion: u32, name: &str, passed: bool, detail: &str) {
    let tag = if passed { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "{tag} criterion {criterion:>2} {name}: {detail}").unwrap();
    out.flush().unwrap();
    assert!(passed, "criterion {criterion} {name}: {detail}");
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

fn gradient_error(net: &NetworkParams, x: Tensor<f32>, rng: &mut ChaCha8Rng) -> f64 {
    let shape = net.output_shape().to_vec();
    let n = shape.iter().product();
    let target = Tensor::new(shape, uniform(rng, n).into_iter().map(f64::from).collect()).unwrap();
    gradient_check(net, &x, None, &half_squared_error(target)).unwrap()
}

#[test]
fn gradients_match_finite_differences() {
    let _g = serial();
    let start = Instant::now();
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);

        let n = rng.random_range(2..7);
        let dense = NetworkBuilder::new(&[n])
            .dense(rng.random_range(2..9))
            .tanh()
            .dense(rng.random_range(1..5))
            .build(seed)
            .unwrap();
        let x = Tensor::from_vec(uniform(&mut rng, n));
        let e = gradient_error(&dense, x, &mut rng);
        worst.entry("dense").and_modify(|w| *w = w.max(e)).or_insert(e);

        let (c, h, w) = (rng.random_range(1..3), rng.random_range(4..8), rng.random_range(4..8));
        let conv = NetworkBuilder::new(&[c, h, w])
            .conv2d(rng.random_range(1..4), (3, 3), (1, 1))
            .tanh()
            .flatten()
            .dense(2)
            .build(seed)
            .unwrap();
        let x = Tensor::new(vec![c, h, w], uniform(&mut rng, c * h * w)).unwrap();
        let e = gradient_error(&conv, x, &mut rng);
        worst.entry("conv").and_modify(|w| *w = w.max(e)).or_insert(e);

        let (h, w) = (rng.random_range(6..10), rng.random_range(6..10));
        let pool = NetworkBuilder::new(&[c, h, w])
            .conv2d(2, (3, 3), (1, 1))
            .avgpool2d((2, 2), (2, 2))
            .tanh()
            .flatten()
            .dense(2)
            .build(seed)
            .unwrap();
        let x = Tensor::new(vec![c, h, w], uniform(&mut rng, c * h * w)).unwrap();
        let e = gradient_error(&pool, x, &mut rng);
        worst.entry("pool").and_modify(|w| *w = w.max(e)).or_insert(e);

        let (steps, features) = (rng.random_range(1..5), rng.random_range(1..5));
        let lstm = NetworkBuilder::new(&[steps, features])
            .lstm(rng.random_range(1..6))
            .dense(2)
            .build(seed)
            .unwrap();
        let x = Tensor::new(vec![steps, features], uniform(&mut rng, steps * features)).unwrap();
        let e = gradient_error(&lstm, x, &mut rng);
        worst.entry("lstm").and_modify(|w| *w = w.max(e)).or_insert(e);
    }
    let elapsed = start.elapsed();
    let passed = worst.values().all(|&e| e < 1e-4) && elapsed < Duration::from_secs(60);
    let detail = worst
        .iter()
        .map(|(k, v)| format!("{k} {v:.2e}"))
        .collect::<Vec<_>>()
        .join(", ");
    verdict(
        1,
        "gradient check",
        passed,
        &format!("max relative error {detail}; {:.1} s", elapsed.as_secs_f64()),
    );
}

#[test]
fn prioritized_replay_frequencies() {
    let _g = serial();
    let alpha = 0.6;
    let tds = [0.1, 0.5, 1.0, 2.0, 0.05, 3.0, 0.7, 1.5];
    let mut buffer = ReplayBuffer::new(8, alpha, 1);
    for i in 0..8 {
        buffer.push(i);
    }
    buffer.update_priorities(&(0..8).collect::<Vec<_>>(), &tds);

    let mass: Vec<f64> = tds
        .iter()
        .map(|d: &f64| (d.abs() + PRIORITY_EPSILON).powf(alpha))
        .collect();
    let total: f64 = mass.iter().sum();
    let expected: Vec<f64> = mass.iter().map(|m| m / total).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (draws, batch) = (100_000, 32);
    let mut counts = [0usize; 8];
    for _ in 0..draws / batch {
        for &i in &buffer.sample(batch, &mut rng).unwrap().indices {
            counts[i] += 1;
        }
    }
    let worst = (0..8)
        .map(|i| (counts[i] as f64 / draws as f64 - expected[i]).abs())
        .fold(0.0, f64::max);

    // N = 2, beta = 1: raw weights 1/(2 * 0.75) and 1/(2 * 0.25), divided by the larger.
    let w = importance_weights(&[0.75, 0.25], 2, 1.0);
    let weight_err = (w[0] - 1.0 / 3.0).abs().max((w[1] - 1.0).abs());
    let passed = worst <= 0.02 && weight_err <= 1e-9;
    verdict(
        2,
        "prioritized replay",
        passed,
        &format!(
            "max frequency error {worst:.4} over {draws} draws; weights {:?}, error {weight_err:.1e}",
            w
        ),
    );
}

#[test]
fn double_q_target_is_decoupled() {
    let _g = serial();
    let online = [0.2, 0.5, 0.1, 0.0];
    let target = [1.0, 2.0, 9.9, 0.0];
    let double = ddqn_target(1.0, &online, &target, false, 0.95);
    let single = dqn_target(1.0, &target, false, 0.95);
    // The online net picks action 1; the target net scores it at 2.0.
    let passed = (double - (1.0 + 0.95 * 2.0)).abs() < 1e-6 && (double - (1.0 + 0.95 * 9.9)).abs() > 1.0;
    verdict(
        3,
        "double-Q decoupling",
        passed,
        &format!("target {double:.6} (coupled target {single:.6})"),
    );
}

/// Arc-length parametrized route, rebuilt from its waypoints.
struct OracleRoute {
    points: Vec<(f64, f64)>,
    cumulative: Vec<f64>,
}

impl OracleRoute {
    fn new(points: &[Vec2]) -> Self {
        let points: Vec<(f64, f64)> = points.iter().map(|p| (p.x, p.y)).collect();
        let mut cumulative = vec![0.0];
        for w in points.windows(2) {
            let last = *cumulative.last().unwrap();
            cumulative.push(last + (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1));
        }
        Self { points, cumulative }
    }

    fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    fn segment(&self, s: f64) -> usize {
        let mut i = 0;
        while i + 2 < self.points.len() && self.cumulative[i + 1] <= s {
            i += 1;
        }
        i
    }

    /// Position and heading (radians) at arc length `s`.
    fn pose(&self, s: f64) -> ((f64, f64), f64) {
        let s = s.clamp(0.0, self.length());
        let i = self.segment(s);
        let (a, b) = (self.points[i], self.points[i + 1]);
        let t = (s - self.cumulative[i]) / (self.cumulative[i + 1] - self.cumulative[i]);
        (
            (a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t),
            (b.1 - a.1).atan2(b.0 - a.0),
        )
    }
}

fn oracle_speed(speed: f64, throttle: f64) -> f64 {
    let accel = if throttle >= 0.0 {
        3.5 * throttle
    } else {
        8.0 * throttle
    };
    (speed + accel * DT).clamp(0.0, 12.0)
}

/// Distance from `p` to the 4.5 m x 2.0 m ego rectangle centred at `c` facing `heading`.
fn oracle_rect_distance(c: (f64, f64), heading: f64, p: (f64, f64)) -> f64 {
    let (dx, dy) = (p.0 - c.0, p.1 - c.1);
    let (s, co) = heading.sin_cos();
    let along = dx * co + dy * s;
    let across = -dx * s + dy * co;
    let du = (along.abs() - 2.25).max(0.0);
    let dv = (across.abs() - 1.0).max(0.0);
    (du * du + dv * dv).sqrt()
}

#[test]
fn shield_matches_brute_force_rollout() {
    let _g = serial();
    let start = Instant::now();
    let layout = IntersectionLayout::new(LayoutParams::for_kind(LayoutKind::FourWay));
    let route = &layout.route;
    let oracle_route = OracleRoute::new(route.points());
    let cfg = ShieldConfig::default();
    let dynamics = AnalyticDynamics::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (scenes, mut agree, mut predicted) = (10_000, 0, 0);
    for _ in 0..scenes {
        let progress = rng.random_range(0.0..oracle_route.length());
        let speed = rng.random_range(0.0..=12.0);
        let throttle = rng.random_range(-1.0..=1.0);
        let ((x, y), heading) = oracle_route.pose(progress);
        let ego = EgoState {
            position: Vec2::new(x, y),
            heading: heading.to_degrees(),
            speed,
            progress,
            route_index: oracle_route.segment(progress),
        };

        let mut ego_poses = Vec::with_capacity(8);
        let (mut s, mut v) = (progress, speed);
        for _ in 0..8 {
            v = oracle_speed(v, throttle);
            s = (s + v * DT).min(oracle_route.length());
            ego_poses.push(oracle_route.pose(s));
        }

        let (cx, cy) = ego_poses[3].0;
        let mut windows = Vec::new();
        let mut current = Vec::new();
        let mut walkers = Vec::new();
        for id in 0..rng.random_range(1..6) {
            let p0 = (cx + rng.random_range(-8.0..8.0), cy + rng.random_range(-8.0..8.0));
            let walk_speed = rng.random_range(0.0..2.5);
            let walk_heading: f64 = rng.random_range(0.0..360.0);
            let (sin, cos) = walk_heading.to_radians().sin_cos();
            let vel = (walk_speed * cos, walk_speed * sin);
            let row = |k: f64| [p0.0 + vel.0 * k * DT, p0.1 + vel.1 * k * DT, walk_speed, walk_heading];
            windows.push(ObservationWindow::from_rows(id, &[row(-2.0), row(-1.0), row(0.0)]).unwrap());
            current.push(Vec2::new(p0.0, p0.1));
            walkers.push((p0, vel));
        }

        let truth = ego_poses.iter().enumerate().any(|(k, &(c, h))| {
            let k = (k + 1) as f64;
            walkers
                .iter()
                .any(|&(p0, vel)| oracle_rect_distance(c, h, (p0.0 + vel.0 * k * DT, p0.1 + vel.1 * k * DT)) < 0.5)
        });

        let ego_states = rollout_ego(&ego, route, throttle, &dynamics, &cfg);
        let peds = rollout_pedestrians(&windows, &current, &FuturePredictor::ConstantVelocity, &cfg).unwrap();
        let shield = predicts_collision(&ego_states, &peds, &cfg).unwrap().collides();
        agree += usize::from(shield == truth);
        predicted += usize::from(truth);
    }
    let elapsed = start.elapsed();
    let passed = agree == scenes && elapsed < Duration::from_secs(60);
    verdict(
        4,
        "shield oracle equivalence",
        passed,
        &format!(
            "{agree}/{scenes} scenes agree ({predicted} with a true collision); {:.1} s",
            elapsed.as_secs_f64()
        ),
    );
}

struct Trained {
    profile: Profile,
    models: Models,
    belief_report: SequenceReport,
    nets: BTreeMap<AgentVariant, NetworkParams>,
    training_time: Duration,
}

fn desk_fixture() -> &'static Trained {
    static FIXTURE: OnceLock<Trained> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let start = Instant::now();
        let profile = Profile::desk();
        let layout = Arc::new(IntersectionLayout::new(LayoutParams::for_kind(profile.layout)));
        let size = profile.pedestrian_data;
        let data = collect_pedestrian_dataset(&layout, size.episodes, size.steps, &profile.noise, profile.seed);
        let belief_cfg = SequenceTrainConfig {
            seed: profile.seed,
            ..profile.belief_fit
        };
        let (belief, belief_report) = train_belief_model(&data, &belief_cfg, |_, _| {}).unwrap();
        let future_cfg = SequenceTrainConfig {
            seed: profile.seed,
            ..profile.future_fit
        };
        let (future, _) = train_future_model(&data, &future_cfg, |_, _| {}).unwrap();
        let models = Models {
            belief: Some(Arc::new(belief)),
            future: Some(Arc::new(future)),
            dynamics: None,
        };
        let setup = Setup::new(profile.clone(), models.clone());
        let mut nets = BTreeMap::new();
        for v in AgentVariant::ALL.into_iter().filter(|v| v.learns()) {
            let agent = train_variant(&setup, v, profile.seed, |_, _| Ok(())).unwrap();
            nets.insert(v, agent.online.clone());
        }
        Trained {
            profile,
            models,
            belief_report,
            nets,
            training_time: start.elapsed(),
        }
    })
}

fn evaluate(fixture: &Trained, profile: &Profile, variant: AgentVariant) -> ExperimentRow {
    let setup = Setup::new(profile.clone(), fixture.models.clone());
    let eval_seed = profile.seed.wrapping_add(1);
    run_experiment(
        &setup,
        variant,
        fixture.nets.get(&variant),
        profile.eval_episodes,
        eval_seed,
        false,
    )
    .unwrap()
    .row
}

fn collisions(row: &ExperimentRow) -> usize {
    (row.collision_pct * row.episodes as f64 / 100.0).round() as usize
}

#[test]
fn shielded_agents_do_not_collide() {
    let _g = serial();
    let fixture = desk_fixture();
    let start = Instant::now();
    let noisy = fixture.profile.clone();
    let exact = Profile {
        shield_perception: ShieldPerception::GroundTruth,
        ..noisy.clone()
    };
    let mut rows = Vec::new();
    for v in [AgentVariant::CollisionDetector, AgentVariant::Srl] {
        rows.push(("ground-truth", evaluate(fixture, &exact, v)));
        rows.push(("noisy-belief", evaluate(fixture, &noisy, v)));
    }
    let eval_time = start.elapsed();
    let passed = rows.iter().all(|(mode, row)| match *mode {
        "ground-truth" => collisions(row) == 0,
        _ => row.collision_pct <= 2.0,
    }) && fixture.training_time <= Duration::from_secs(2 * 3600)
        && eval_time <= Duration::from_secs(600);
    let detail = rows
        .iter()
        .map(|(mode, r)| format!("{} {mode} {}/{}", r.variant, collisions(r), r.episodes))
        .collect::<Vec<_>>()
        .join(", ");
    verdict(
        5,
        "shield zero collisions",
        passed,
        &format!(
            "collision episodes: {detail}; training {:.0} s, eval {:.0} s",
            fixture.training_time.as_secs_f64(),
            eval_time.as_secs_f64()
        ),
    );
}

#[test]
fn variants_follow_the_expected_ordering() {
    let _g = serial();
    let fixture = desk_fixture();
    let rows: BTreeMap<AgentVariant, ExperimentRow> = AgentVariant::ALL
        .into_iter()
        .map(|v| (v, evaluate(fixture, &fixture.profile, v)))
        .collect();
    let c = |v: AgentVariant| rows[&v].collision_pct;
    let best_success = rows.values().map(|r| r.success_pct).fold(f64::MIN, f64::max);
    let ordered = c(AgentVariant::RuleBased) > c(AgentVariant::Rl)
        && c(AgentVariant::Rl) >= c(AgentVariant::BeliefUpdate)
        && c(AgentVariant::BeliefUpdate) >= c(AgentVariant::Srl);
    let passed = ordered && rows[&AgentVariant::Srl].success_pct >= best_success;
    let detail = rows
        .values()
        .map(|r| {
            format!(
                "{} success {:.0}% collision {:.0}%",
                r.variant, r.success_pct, r.collision_pct
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    verdict(6, "directional ordering", passed, &detail);
}

/// Value at the newest of three equally spaced samples of the least-squares line through them.
fn least_squares_current(a: f64, b: f64, c: f64) -> f64 {
    let ts = [-2.0, -1.0, 0.0];
    let ys = [a, b, c];
    let t_mean = ts.iter().sum::<f64>() / 3.0;
    let y_mean = ys.iter().sum::<f64>() / 3.0;
    let cov: f64 = ts.iter().zip(&ys).map(|(t, y)| (t - t_mean) * (y - y_mean)).sum();
    let var: f64 = ts.iter().map(|t| (t - t_mean).powi(2)).sum();
    y_mean + cov / var * (0.0 - t_mean)
}

#[test]
fn belief_model_denoises_positions() {
    let _g = serial();
    let fixture = desk_fixture();
    let belief: &BeliefModel = fixture.models.belief.as_deref().unwrap();
    let profile = &fixture.profile;
    let layout = Arc::new(IntersectionLayout::new(LayoutParams::for_kind(profile.layout)));
    let fresh = collect_pedestrian_dataset(&layout, 50, profile.pedestrian_data.steps, &profile.noise, 0xB01D_FACE);

    let (mut model_se, mut raw_se, mut ls_se, mut n) = (0.0, 0.0, 0.0, 0usize);
    for track in &fresh.tracks {
        let windows: Vec<ObservationWindow> = (2..track.noisy.len())
            .map(|t| ObservationWindow::from_rows(0, &track.noisy[t - 2..=t]).unwrap())
            .collect();
        let perceived = belief.perceive(&windows).unwrap();
        for (t, p) in (2..track.noisy.len()).zip(&perceived) {
            let truth = track.clean[t];
            let rows = &track.noisy[t - 2..=t];
            let ls_x = least_squares_current(rows[0][0], rows[1][0], rows[2][0]);
            let ls_y = least_squares_current(rows[0][1], rows[1][1], rows[2][1]);
            model_se += (p.position.x - truth[0]).powi(2) + (p.position.y - truth[1]).powi(2);
            raw_se += (rows[2][0] - truth[0]).powi(2) + (rows[2][1] - truth[1]).powi(2);
            ls_se += (ls_x - truth[0]).powi(2) + (ls_y - truth[1]).powi(2);
            n += 2;
        }
    }
    let rmse = (model_se / n as f64).sqrt();
    let raw = (raw_se / n as f64).sqrt();
    let ls = (ls_se / n as f64).sqrt();
    let passed = rmse <= 0.5 && raw / rmse >= 2.0 && rmse <= 1.25 * ls;
    verdict(
        7,
        "belief denoising",
        passed,
        &format!(
            "per-axis RMSE {rmse:.4} m, raw {raw:.4} m (factor {:.2}), least-squares line {ls:.4} m; \
             training hold-out {:.4} m",
            raw / rmse,
            fixture.belief_report.holdout_rmse
        ),
    );
}

#[test]
fn dynamics_surrogate_tracks_analytic_motion() {
    let _g = serial();
    let profile = Profile::desk();
    let layout = IntersectionLayout::new(LayoutParams::for_kind(profile.layout));
    let size = profile.dynamics_data;
    let analytic = profile.world.dynamics;
    let data = collect_dynamics_dataset(&layout, &analytic, size.episodes, size.steps, profile.seed);
    let cfg = DynamicsFitConfig {
        seed: profile.seed,
        ..profile.dynamics_fit
    };
    let (model, _) = fit_dynamics_model(&data, &cfg, analytic.max_speed, |_, _| {}).unwrap();

    let route = &layout.route;
    let oracle_route = OracleRoute::new(route.points());
    let mut rng = ChaCha8Rng::seed_from_u64(0xD1_7A);
    let (mut worst, mut sum) = (0.0f64, 0.0);
    let states = 1000;
    for _ in 0..states {
        // Stay one full-speed step short of the goal so the next state is on the route.
        let progress = rng.random_range(0.0..oracle_route.length() - 12.0 * DT);
        let speed = rng.random_range(0.0..=12.0);
        let throttle = rng.random_range(-1.0..=1.0);
        let ((x, y), heading) = oracle_route.pose(progress);
        let ego = EgoState {
            position: Vec2::new(x, y),
            heading: heading.to_degrees(),
            speed,
            progress,
            route_index: oracle_route.segment(progress),
        };
        let next_speed = oracle_speed(speed, throttle);
        let ((ox, oy), _) = oracle_route.pose(progress + next_speed * DT);
        let next = model.advance(&ego, route, throttle);
        let err = (next.position.x - ox).hypot(next.position.y - oy);
        worst = worst.max(err);
        sum += err;
    }
    let passed = worst < 0.05;
    verdict(
        8,
        "dynamics surrogate",
        passed,
        &format!(
            "position error over {states} held-out states: max {worst:.4} m, mean {:.4} m",
            sum / states as f64
        ),
    );
}

#[test]
fn encoder_is_rigid_motion_invariant() {
    let _g = serial();
    let spec = Profile::desk().roi();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (trials, mut mismatches, mut occupied) = (10_000, 0, 0);
    for _ in 0..trials {
        let ego = EgoState {
            position: Vec2::new(rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0)),
            heading: rng.random_range(0.0..360.0),
            speed: rng.random_range(0.0..12.0),
            progress: 0.0,
            route_index: 0,
        };
        let peds: Vec<ObservedPedestrian> = (0..rng.random_range(1..8))
            .map(|id| ObservedPedestrian {
                id,
                position: ego.position + Vec2::new(rng.random_range(-14.0..14.0), rng.random_range(-14.0..14.0)),
                speed: rng.random_range(0.0..2.5),
                heading: rng.random_range(0.0..360.0),
            })
            .collect();
        let angle: f64 = rng.random_range(-180.0..180.0);
        let shift = (rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0));
        let (s, c) = angle.to_radians().sin_cos();
        let moved = |p: Vec2| Vec2::new(c * p.x - s * p.y + shift.0, s * p.x + c * p.y + shift.1);
        let ego2 = EgoState {
            position: moved(ego.position),
            heading: ego.heading + angle,
            ..ego
        };
        let peds2: Vec<ObservedPedestrian> = peds
            .iter()
            .map(|p| ObservedPedestrian {
                position: moved(p.position),
                heading: p.heading + angle,
                ..*p
            })
            .collect();
        let base = encode_state_tensor(&peds, &ego, &spec);
        let after = encode_state_tensor(&peds2, &ego2, &spec);
        let same_bits = base.data.len() == after.data.len()
            && base
                .data
                .iter()
                .zip(&after.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
            && base == after;
        mismatches += usize::from(!same_bits);
        occupied += usize::from(base.data.iter().any(|&v| v != 0.0));
    }
    verdict(
        9,
        "encoder invariance",
        mismatches == 0,
        &format!("{mismatches} of {trials} transforms changed the encoding ({occupied} scenes occupied the grid)"),
    );
}

const TINY_CONFIG: &str = "\
belief.episodes = 40
belief.steps = 120
belief.epochs = 2
belief.max_rmse = 100
future.epochs = 2
future.max_rmse = 100
dynamics.episodes = 20
dynamics.steps = 60
dynamics.epochs = 3
dynamics.max_speed_rmse = 100
shield.dynamics = learned
agent.episodes = 2
agent.learn_start = 64
world.episode_steps = 150
eval.episodes = 3
";

fn run_pipeline(dir: &Path) -> Vec<String> {
    let config = dir.join("tiny.cfg");
    fs::write(&config, TINY_CONFIG).unwrap();
    let out = dir.join("out");
    let steps: [&[&str]; 6] = [
        &["belief-train", "--dataset", "pedestrians.csv"],
        &["future-train"],
        &["dynamics-fit"],
        &["train", "--variant", "all"],
        &["eval", "--variant", "all"],
        &["render", "--episode", "1", "--variant", "srl"],
    ];
    let mut failures = Vec::new();
    for args in steps {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_safe-dqn"));
        cmd.current_dir(dir)
            .arg("--config")
            .arg(&config)
            .args(["--seed", "5", "--out"])
            .arg(&out)
            .args(args);
        if args[0] == "render" {
            cmd.arg("--episode-trace").arg(out.join("episodes.jsonl"));
        }
        let status = cmd.output().unwrap().status;
        if !status.success() {
            failures.push(format!("{} exited with {status}", args[0]));
        }
    }
    failures
}

fn collect_files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                files.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    files
}

#[test]
fn cli_runs_repeat_byte_for_byte() {
    let _g = serial();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut failures = run_pipeline(a.path());
    failures.extend(run_pipeline(b.path()));
    let (fa, fb) = (collect_files(a.path()), collect_files(b.path()));
    let differing: Vec<&String> = fa.keys().filter(|k| fb.get(*k) != fa.get(*k)).collect();
    let outputs = fa
        .keys()
        .filter(|k| k.ends_with(".csv") || k.ends_with(".jsonl"))
        .count();
    let passed = failures.is_empty() && fa.len() == fb.len() && differing.is_empty() && outputs >= 6;
    verdict(
        10,
        "determinism",
        passed,
        &format!(
            "{} files compared ({outputs} CSV/JSONL), differing {:?}, failed steps {:?}",
            fa.len(),
            differing,
            failures
        ),
    );
}
