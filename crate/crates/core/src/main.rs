//! `safe-dqn`: fit the perception and dynamics models, train the agents, evaluate and render.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use safe_dqn::agent::DqnAgent;
use safe_dqn::belief::{collect_pedestrian_dataset, train_belief_model, train_future_model, SequenceTrainConfig};
use safe_dqn::config::Profile;
use safe_dqn::harness::{
    load_agent, run_experiment, train_variant, AgentVariant, ExperimentRow, Models, Setup, TraceRow, BELIEF_CHECKPOINT,
    DYNAMICS_CHECKPOINT, FUTURE_CHECKPOINT, METRICS_HEADER, TRAIN_LOG_HEADER,
};
use safe_dqn::sim::{
    collect_dynamics_dataset, fit_dynamics_model, render_frame, DynamicsFitConfig, IntersectionLayout, LayoutKind,
    LayoutParams, OrientedRect, Vec2, EGO_LENGTH, EGO_WIDTH,
};
use safe_dqn::{selfcheck, Error, Result};

const AFTER_HELP: &str = "\
Without --config the built-in desk profile is used: 40x30 grid, 16 filters, 150 training
episodes, training every 4 steps, 100 evaluation episodes, noisy-belief shield with analytic
dynamics, four-way layout, seed 0. A config file holds `key = value` lines; `profile = full`
switches to the 80x60 grid, 64 filters and 500 episodes, and any other key overrides one value.

Exit status: 0 on success, 2 on a usage or config error, 3 when a fitted model or a self-check
misses its acceptance threshold.";

#[derive(Parser)]
#[command(name = "safe-dqn", version, about, after_help = AFTER_HELP)]
struct Cli {
    /// `key = value` run configuration (defaults to the built-in desk profile).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed; overrides the profile's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ModelDir {
    /// Directory holding trained checkpoints (defaults to --out).
    #[arg(long)]
    models: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the learned ego dynamics model and save dynamics.sdqn.
    DynamicsFit,
    /// Train the belief model and save belief.sdqn.
    BeliefTrain {
        /// Also write the pedestrian dataset as CSV.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Train the future pedestrian position model and save future.sdqn.
    FutureTrain {
        /// Also write the pedestrian dataset as CSV.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Train learning agents with double DQN and prioritized replay.
    Train {
        /// A learning variant or `all`.
        #[arg(long, default_value = "all")]
        variant: String,
        #[command(flatten)]
        models: ModelDir,
    },
    /// Evaluate variants; writes metrics.csv and episodes.jsonl.
    Eval {
        /// A variant or `all`.
        #[arg(long, default_value = "all")]
        variant: String,
        /// four-way or three-way (defaults to the profile's layout).
        #[arg(long)]
        layout: Option<String>,
        /// Episodes per variant (defaults to the profile's eval.episodes).
        #[arg(long)]
        episodes: Option<usize>,
        #[command(flatten)]
        models: ModelDir,
    },
    /// Render one episode of an episodes.jsonl trace to PPM frames.
    Render {
        #[arg(long)]
        episode_trace: PathBuf,
        /// Episode index (defaults to the first in the trace).
        #[arg(long)]
        episode: Option<u64>,
        /// Variant to render (defaults to the first in the trace).
        #[arg(long)]
        variant: Option<String>,
        /// Pixels per metre.
        #[arg(long, default_value_t = 4.0)]
        scale: f64,
    },
    /// Run the built-in invariant suites.
    Selfcheck,
}

/// One step of one evaluated episode in episodes.jsonl.
#[derive(Serialize, Deserialize)]
struct TraceLine {
    variant: AgentVariant,
    layout: LayoutKind,
    #[serde(flatten)]
    row: TraceRow,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) | Error::MissingModel(_) => 2,
                Error::NonConvergence { .. } => 3,
                _ => 1,
            })
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut profile = match &cli.config {
        Some(path) => Profile::load(path)?,
        None => Profile::desk(),
    };
    if let Some(seed) = cli.seed {
        profile.seed = seed;
    }
    let out = cli.out;
    match cli.command {
        Command::DynamicsFit => dynamics_fit(&profile, &out),
        Command::BeliefTrain { dataset } => sequence_train(&profile, &out, dataset.as_deref(), false),
        Command::FutureTrain { dataset } => sequence_train(&profile, &out, dataset.as_deref(), true),
        Command::Train { variant, models } => train(profile, &out, &variant, &models.dir(&out)),
        Command::Eval {
            variant,
            layout,
            episodes,
            models,
        } => eval(profile, &out, &variant, layout.as_deref(), episodes, &models.dir(&out)),
        Command::Render {
            episode_trace,
            episode,
            variant,
            scale,
        } => render(&out, &episode_trace, episode, variant.as_deref(), scale),
        Command::Selfcheck => Ok(selfcheck_cmd()),
    }
}

impl ModelDir {
    fn dir(&self, out: &Path) -> PathBuf {
        self.models.clone().unwrap_or_else(|| out.to_path_buf())
    }
}

fn layout_for(profile: &Profile) -> Arc<IntersectionLayout> {
    Arc::new(IntersectionLayout::new(LayoutParams::for_kind(profile.layout)))
}

fn dynamics_fit(profile: &Profile, out: &Path) -> Result<ExitCode> {
    fs::create_dir_all(out)?;
    let layout = layout_for(profile);
    let size = profile.dynamics_data;
    let dynamics = &profile.world.dynamics;
    let data = collect_dynamics_dataset(&layout, dynamics, size.episodes, size.steps, profile.seed);
    let cfg = DynamicsFitConfig {
        seed: profile.seed,
        ..profile.dynamics_fit
    };
    eprintln!("fitting dynamics on {} transitions", data.len());
    let (model, report) = fit_dynamics_model(&data, &cfg, dynamics.max_speed, |epoch, loss| {
        if (epoch + 1) % 20 == 0 {
            eprintln!("epoch {:>4}  loss {loss:.6}", epoch + 1);
        }
    })?;
    model.to_checkpoint().save(out.join(DYNAMICS_CHECKPOINT))?;
    println!(
        "held-out speed RMSE {:.4} m/s, position RMSE {:.4} m (max {:.4} m)",
        report.holdout_speed_rmse, report.holdout_position_rmse, report.holdout_position_max
    );
    Ok(ExitCode::SUCCESS)
}

fn sequence_train(profile: &Profile, out: &Path, dataset: Option<&Path>, future: bool) -> Result<ExitCode> {
    fs::create_dir_all(out)?;
    let layout = layout_for(profile);
    let size = profile.pedestrian_data;
    let data = collect_pedestrian_dataset(&layout, size.episodes, size.steps, &profile.noise, profile.seed);
    if let Some(path) = dataset {
        fs::write(path, data.to_csv())?;
    }
    let log = |epoch: usize, loss: f64| eprintln!("epoch {:>3}  loss {loss:.6}", epoch + 1);
    let (ckpt, name, report) = if future {
        let cfg = SequenceTrainConfig {
            seed: profile.seed,
            ..profile.future_fit
        };
        let (m, r) = train_future_model(&data, &cfg, log)?;
        (m.0.to_checkpoint(), FUTURE_CHECKPOINT, r)
    } else {
        let cfg = SequenceTrainConfig {
            seed: profile.seed,
            ..profile.belief_fit
        };
        let (m, r) = train_belief_model(&data, &cfg, log)?;
        (m.0.to_checkpoint(), BELIEF_CHECKPOINT, r)
    };
    ckpt.save(out.join(name))?;
    println!(
        "held-out position RMSE {:.4} m, raw-observation baseline {:.4} m",
        report.holdout_rmse, report.baseline_rmse
    );
    Ok(ExitCode::SUCCESS)
}

fn parse_variants(s: &str, learners_only: bool) -> Result<Vec<AgentVariant>> {
    if s == "all" {
        return Ok(AgentVariant::ALL
            .into_iter()
            .filter(|v| !learners_only || v.learns())
            .collect());
    }
    s.split(',').map(|v| v.trim().parse()).collect()
}

fn train(profile: Profile, out: &Path, variant: &str, model_dir: &Path) -> Result<ExitCode> {
    let variants = parse_variants(variant, true)?;
    if let Some(v) = variants.iter().find(|v| !v.learns()) {
        return Err(Error::Config(format!("the {v} variant has nothing to train")));
    }
    fs::create_dir_all(out)?;
    let models = Models::load(model_dir, &profile, &variants)?;
    let every = profile.checkpoint_every.max(1);
    let seed = profile.seed;
    let setup = Setup::new(profile, models);
    for v in variants {
        let mut log = BufWriter::new(File::create(out.join(format!("train-{}.csv", v.name())))?);
        writeln!(log, "{TRAIN_LOG_HEADER}")?;
        let ckpt = out.join(v.checkpoint());
        let episodes = setup.profile.agent.episodes;
        eprintln!("training {v} for {episodes} episodes");
        let agent = train_variant(&setup, v, seed, |entry, agent: &DqnAgent| {
            writeln!(log, "{}", entry.csv_row())?;
            if (entry.episode + 1) % every == 0 {
                log.flush()?;
                agent.to_checkpoint().save(&ckpt)?;
                eprintln!(
                    "{v} episode {:>4}  return {:>8.2}  epsilon {:.3}  {}",
                    entry.episode + 1,
                    entry.episode_return,
                    entry.epsilon,
                    entry.outcome.name()
                );
            }
            Ok(())
        })?;
        agent.to_checkpoint().save(&ckpt)?;
        log.flush()?;
    }
    Ok(ExitCode::SUCCESS)
}

fn eval(
    profile: Profile,
    out: &Path,
    variant: &str,
    layout: Option<&str>,
    episodes: Option<usize>,
    model_dir: &Path,
) -> Result<ExitCode> {
    let variants = parse_variants(variant, false)?;
    let kind: LayoutKind = match layout {
        Some(s) => s.parse()?,
        None => profile.layout,
    };
    let episodes = episodes.unwrap_or(profile.eval_episodes);
    let seed = profile.seed;
    let models = Models::load(model_dir, &profile, &variants)?;
    let mut nets = Vec::with_capacity(variants.len());
    for &v in &variants {
        nets.push(if v.learns() {
            Some(load_agent(model_dir, &profile, v)?)
        } else {
            None
        });
    }
    let setup = Setup::new(profile, models).with_layout(kind);
    fs::create_dir_all(out)?;
    let mut csv = BufWriter::new(File::create(out.join("metrics.csv"))?);
    let mut jsonl = BufWriter::new(File::create(out.join("episodes.jsonl"))?);
    writeln!(csv, "{METRICS_HEADER}")?;
    let mut rows: Vec<ExperimentRow> = Vec::new();
    for (&v, net) in variants.iter().zip(&nets) {
        let result = run_experiment(&setup, v, net.as_ref(), episodes, seed, true)?;
        writeln!(csv, "{}", result.row.csv_row())?;
        for row in result.trace {
            let line = TraceLine {
                variant: v,
                layout: kind,
                row,
            };
            serde_json::to_writer(&mut jsonl, &line).map_err(|e| Error::Trace(e.to_string()))?;
            writeln!(jsonl)?;
        }
        rows.push(result.row);
    }
    csv.flush()?;
    jsonl.flush()?;
    println!("{} layout, {episodes} episodes per variant", kind);
    println!("{}", ExperimentRow::table_header());
    for row in &rows {
        println!("{}", row.table_row());
    }
    Ok(ExitCode::SUCCESS)
}

fn render(out: &Path, trace: &Path, episode: Option<u64>, variant: Option<&str>, scale: f64) -> Result<ExitCode> {
    let want: Option<AgentVariant> = variant.map(str::parse).transpose()?;
    let file = File::open(trace).map_err(|e| Error::Config(format!("cannot read {}: {e}", trace.display())))?;
    let mut selected: Option<(AgentVariant, u64)> = None;
    let mut layouts: Vec<(LayoutKind, Arc<IntersectionLayout>)> = Vec::new();
    let mut frames = 0usize;
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: TraceLine = serde_json::from_str(&line).map_err(|e| Error::Trace(format!("line {}: {e}", n + 1)))?;
        if want.is_some_and(|v| v != t.variant) || episode.is_some_and(|e| e != t.row.episode) {
            continue;
        }
        let key = *selected.get_or_insert((t.variant, t.row.episode));
        if key != (t.variant, t.row.episode) {
            continue;
        }
        let layout = match layouts.iter().find(|(k, _)| *k == t.layout) {
            Some((_, l)) => l.clone(),
            None => {
                let l = Arc::new(IntersectionLayout::new(LayoutParams::for_kind(t.layout)));
                layouts.push((t.layout, l.clone()));
                l
            }
        };
        let ego = OrientedRect {
            center: Vec2::new(t.row.x, t.row.y),
            heading: t.row.heading,
            length: EGO_LENGTH,
            width: EGO_WIDTH,
        };
        let peds: Vec<Vec2> = t.row.pedestrians.iter().map(|p| Vec2::new(p[0], p[1])).collect();
        let dir = out.join("frames").join(format!("ep{}", t.row.episode));
        fs::create_dir_all(&dir)?;
        fs::write(
            dir.join(format!("{:04}.ppm", t.row.step)),
            render_frame(&layout, &ego, &peds, scale),
        )?;
        frames += 1;
    }
    match selected {
        Some((v, e)) => println!("rendered {frames} frames of {v} episode {e}"),
        None => return Err(Error::Trace("no matching episode in the trace".into())),
    }
    Ok(ExitCode::SUCCESS)
}

fn selfcheck_cmd() -> ExitCode {
    let results = selfcheck::run_all();
    for r in &results {
        println!("{} {:<12} {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    if results.iter().all(|r| r.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    }
}
