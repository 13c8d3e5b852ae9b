use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use splatdrive::bench::{run_bench, BenchOptions};
use splatdrive::config::{write_fixture, SimulatorConfig};
use splatdrive::env::{scripted, DrivingEnv, Task, World};
use splatdrive::physics::Controls;
use splatdrive::proto::Server;
use splatdrive::render::{render_with, PinholeCamera};
use splatdrive::rl::{evaluate, train, PolicyParams, TrainOptions};
use splatdrive::track::ExportFormat;

#[derive(Parser)]
#[command(name = "splatdrive", version, about = "Headless driving simulator over Gaussian splat scenes")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Simulator config file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the scenario and PPO seeds from the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Load and normalize assets and poses, printing a summary; `ingest fixtures` writes a synthetic scene.
    Ingest(IngestArgs),
    /// Place road blocks along the pose spline and export them.
    BuildTrack {
        #[command(flatten)]
        common: Common,
        /// Output path; `.obj` writes a mesh, anything else JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render the scene from one capture camera.
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        pose_index: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one episode and print its outcome.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Driver::LaneKeep)]
        policy: Driver,
        /// Policy checkpoint; implies `--policy checkpoint`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Per-step CSV reward trace.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Save the last ego camera frame as PNG.
        #[arg(long)]
        frame: Option<PathBuf>,
    },
    /// Train a PPO policy on the configured scenario.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        total_steps: Option<usize>,
        /// Updates between checkpoints (0: only the final one).
        #[arg(long, default_value_t = 0)]
        checkpoint_every: usize,
        /// Updates between greedy evaluations (0: none).
        #[arg(long, default_value_t = 0)]
        eval_every: usize,
    },
    /// Evaluate a checkpoint with the mean action.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 50)]
        episodes: usize,
        /// First evaluation seed; defaults to 10000 so training seeds are not reused.
        #[arg(long, default_value_t = 10_000)]
        base_seed: u64,
    },
    /// Serve environments over TCP until interrupted.
    Serve {
        #[command(flatten)]
        common: Common,
        /// Overrides `server.bind`.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Measure lockstep simulate-and-render throughput.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 5.0)]
        duration: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also render a copy of the scene with doubled splat count and log the frame-time ratio.
        #[arg(long)]
        scaling: bool,
    },
}

#[derive(Args)]
#[command(args_conflicts_with_subcommands = true)]
struct IngestArgs {
    #[command(subcommand)]
    fixtures: Option<IngestCmd>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the normalized, cropped assets and gravity-aligned poses summary as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum IngestCmd {
    /// Write a synthetic fixture scene (poses, PLY assets, config.toml).
    Fixtures {
        #[arg(long, value_enum, default_value_t = TaskArg::StraightSmall)]
        task: TaskArg,
        #[arg(long)]
        out: PathBuf,
        /// Multiplier on environment splat count.
        #[arg(long, default_value_t = 1.0)]
        density: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    StraightSmall,
    TurnLarge,
    AgentSmall,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::StraightSmall => Task::StraightSmall,
            TaskArg::TurnLarge => Task::TurnLarge,
            TaskArg::AgentSmall => Task::AgentSmall,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Driver {
    Straight,
    LaneKeep,
    Brake,
    Checkpoint,
}

fn load(common: &Common) -> Result<SimulatorConfig> {
    let mut cfg = SimulatorConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.scenario.seed = s;
        cfg.ppo.seed = s;
    }
    Ok(cfg)
}

fn world(cfg: &SimulatorConfig) -> Result<Arc<World>> {
    Ok(Arc::new(cfg.build_world().context("building world")?))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Ingest(a) => ingest(a),
        Cmd::BuildTrack { common, out } => {
            let cfg = load(&common)?;
            let w = world(&cfg)?;
            let fmt = if out.extension().is_some_and(|e| e.eq_ignore_ascii_case("obj")) {
                ExportFormat::Obj
            } else {
                ExportFormat::Json
            };
            w.track.export(&out, fmt)?;
            println!(
                "{}",
                json!({"blocks": w.track.blocks.len(), "length_m": w.length(), "out": out})
            );
            Ok(())
        }
        Cmd::Render { common, pose_index, out } => {
            let cfg = load(&common)?;
            let w = world(&cfg)?;
            let Some(p) = w.poses.poses.get(pose_index) else {
                bail!("pose index {pose_index} out of range (0..{})", w.poses.len());
            };
            let pose = nalgebra::Isometry3::from_parts(p.position.into(), p.rotation);
            let r = &cfg.render;
            let cam = PinholeCamera::from_fov(r.width, r.height, r.fov_deg.to_radians(), pose);
            let fb = render_with(std::slice::from_ref(&w.env_scene), &cam, r.background, &r.raster);
            fb.save_png(&out)?;
            println!("{}", json!({"pose": p.label, "width": fb.width, "height": fb.height, "out": out}));
            Ok(())
        }
        Cmd::Simulate { common, policy, checkpoint, trace, frame } => {
            let cfg = load(&common)?;
            let w = world(&cfg)?;
            let mut env = DrivingEnv::new(w, cfg.scenario.clone())?;
            let params = match (&checkpoint, policy) {
                (Some(p), _) => Some(PolicyParams::load(p)?.0),
                (None, Driver::Checkpoint) => bail!("--policy checkpoint needs --checkpoint"),
                _ => None,
            };
            let seed = cfg.scenario.seed;
            let (result, rewards) = match &params {
                Some(p) => scripted::run_episode(&mut env, seed, p.controller())?,
                None => {
                    let f: fn(&[f64; splatdrive::env::OBS_DIM]) -> Controls = match policy {
                        Driver::Straight => scripted::straight,
                        Driver::Brake => scripted::brake,
                        _ => scripted::lane_keep,
                    };
                    scripted::run_episode(&mut env, seed, f)?
                }
            };
            if let Some(path) = trace {
                let mut text = String::from("step,reward,cumulative\n");
                let mut acc = 0.0;
                for (i, r) in rewards.iter().enumerate() {
                    acc += r;
                    text.push_str(&format!("{i},{r},{acc}\n"));
                }
                std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
            }
            if let Some(path) = frame {
                env.render_ego_view().save_png(&path)?;
            }
            println!(
                "{}",
                json!({"seed": seed, "outcome": result.outcome, "steps": result.steps, "total_reward": result.total_reward})
            );
            Ok(())
        }
        Cmd::Train { common, out_dir, total_steps, checkpoint_every, eval_every } => {
            let cfg = load(&common)?;
            let w = world(&cfg)?;
            let mut ppo = cfg.ppo.clone();
            if let Some(n) = total_steps {
                ppo.total_env_steps = n;
            }
            std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            let out = train(
                w,
                &cfg.scenario,
                &ppo,
                &TrainOptions {
                    checkpoint_dir: Some(out_dir.clone()),
                    checkpoint_every,
                    curve_path: Some(out_dir.join("curve.csv")),
                    eval_every,
                    eval_episodes: 50,
                    eval_seed: 10_000,
                    target_accuracy: None,
                },
            )?;
            let final_path = out_dir.join("policy.json");
            out.params.save(&final_path, &ppo)?;
            println!(
                "{}",
                json!({"updates": out.updates, "env_steps": out.env_steps, "checkpoint": final_path, "evals": out.evals})
            );
            Ok(())
        }
        Cmd::Eval { common, checkpoint, episodes, base_seed } => {
            let cfg = load(&common)?;
            let w = world(&cfg)?;
            let (params, _) = PolicyParams::load(&checkpoint)?;
            let rep = evaluate(&params, w, &cfg.scenario, episodes, base_seed)?;
            println!("accuracy: {:.1}% over {episodes} episodes", rep.accuracy);
            Ok(())
        }
        Cmd::Serve { common, bind } => {
            let cfg = load(&common)?;
            let w = world(&cfg)?;
            let addr = bind.unwrap_or_else(|| cfg.server.bind.clone());
            let server = Server::bind(&addr, w, cfg.scenario.clone()).with_context(|| format!("binding {addr}"))?;
            log::info!("listening on {}", server.local_addr()?);
            server.run()?;
            Ok(())
        }
        Cmd::Bench { common, duration, out, scaling } => {
            let cfg = load(&common)?;
            let w = world(&cfg)?;
            let r = &cfg.render;
            let opts = BenchOptions {
                duration: Duration::from_secs_f64(duration),
                width: r.width,
                height: r.height,
                fov_deg: r.fov_deg,
                background: r.background,
                render: r.raster.clone(),
                seed: cfg.scenario.seed,
            };
            let report = run_bench(Arc::clone(&w), &cfg.scenario, &opts)?;
            let mut doc = serde_json::to_value(&report)?;
            if scaling {
                let doubled = doubled_world(&w);
                let big = run_bench(Arc::new(doubled), &cfg.scenario, &opts)?;
                let ratio = big.p50_frame_ms / report.p50_frame_ms;
                log::info!(
                    "scaling: {} -> {} gaussians, p50 {:.2} -> {:.2} ms (x{ratio:.2})",
                    report.gaussians,
                    big.gaussians,
                    report.p50_frame_ms,
                    big.p50_frame_ms
                );
                doc["scaling"] = json!({"gaussians": big.gaussians, "p50_frame_ms": big.p50_frame_ms, "ratio": ratio});
            }
            let text = serde_json::to_string_pretty(&doc)?;
            println!("{text}");
            if let Some(p) = out {
                std::fs::write(&p, &text).with_context(|| format!("writing {}", p.display()))?;
            }
            Ok(())
        }
    }
}

/// Environment duplicated in place, so each pixel sees twice the splats.
fn doubled_world(w: &World) -> World {
    let mut out = w.clone();
    let mut gs = w.env_scene.gaussians.to_vec();
    gs.extend_from_slice(&w.env_scene.gaussians);
    out.env_scene.gaussians = Arc::new(gs);
    out
}

fn ingest(a: IngestArgs) -> Result<()> {
    if let Some(IngestCmd::Fixtures { task, out, density }) = a.fixtures {
        let path = write_fixture(&out, task.into(), density)?;
        println!("{}", json!({"config": path}));
        return Ok(());
    }
    let Some(config) = a.config else {
        bail!("ingest needs --config or the `fixtures` subcommand");
    };
    let cfg = SimulatorConfig::load(&config)?;
    let w = world(&cfg)?;
    let summary = json!({
        "env_gaussians": w.env_scene.len(),
        "ego_gaussians": w.ego_scene.len(),
        "agent_gaussians": w.agent_scene.as_ref().map(|s| s.len()),
        "poses": w.poses.len(),
        "gravity": [w.gravity.x, w.gravity.y, w.gravity.z],
        "spline_length_m": w.length(),
    });
    if let Some(out) = &a.out {
        write_summary(out, &summary, &w)?;
    }
    println!("{summary}");
    Ok(())
}

fn write_summary(out: &Path, summary: &serde_json::Value, w: &World) -> Result<()> {
    let doc = json!({
        "summary": summary,
        "poses": splatdrive::pose::to_manifest(&w.poses),
    });
    std::fs::write(out, serde_json::to_string_pretty(&doc)?).with_context(|| format!("writing {}", out.display()))
}
