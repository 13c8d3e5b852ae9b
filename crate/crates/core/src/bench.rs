//! Lockstep simulate-and-render throughput measurement.

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::env::{scripted, DrivingEnv, EnvError, ObsMode, ScenarioConfig, World};
use crate::render::{render_with, PinholeCamera, RenderOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub avg_fps: f64,
    pub p50_frame_ms: f64,
    pub p99_frame_ms: f64,
    /// Process high-water resident set; 0 where the platform does not expose it.
    pub peak_rss_mb: f64,
    /// Gaussians submitted per frame (environment plus agents).
    pub gaussians: usize,
    pub steps: u64,
    pub frames: u64,
    pub episodes: u64,
    pub wall_s: f64,
    pub width: u32,
    pub height: u32,
    pub threads: usize,
}

impl BenchReport {
    pub fn is_consistent(&self) -> bool {
        let fps = self.frames as f64 / self.wall_s;
        [self.avg_fps, self.p50_frame_ms, self.p99_frame_ms, self.peak_rss_mb, self.wall_s]
            .iter()
            .all(|v| v.is_finite())
            && (self.avg_fps - fps).abs() <= 0.01 * fps
            && self.frames == self.steps
    }
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub duration: Duration,
    pub width: u32,
    pub height: u32,
    pub fov_deg: f64,
    pub background: [f64; 3],
    pub render: RenderOptions,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            duration: Duration::from_secs(1),
            width: 640,
            height: 360,
            fov_deg: 90.0,
            background: crate::env::SKY,
            render: RenderOptions::default(),
            seed: 0,
        }
    }
}

/// Reads `VmHWM` from `/proc/self/status`.
pub fn peak_rss_mb() -> f64 {
    std::fs::read_to_string("/proc/self/status")
        .ok()
        .and_then(|s| {
            s.lines()
                .find_map(|l| l.strip_prefix("VmHWM:"))
                .and_then(|v| v.trim().trim_end_matches("kB").trim().parse::<f64>().ok())
        })
        .map_or(0.0, |kb| kb / 1024.0)
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (q * (sorted.len() - 1) as f64).round() as usize;
    sorted[rank.min(sorted.len() - 1)]
}

/// Drives the lane-keeping controller, rendering the ego view after every
/// physics step, until `duration` has elapsed. Finished episodes restart with
/// the next seed. At least one frame is always produced.
pub fn run_bench(world: Arc<World>, scenario: &ScenarioConfig, opts: &BenchOptions) -> Result<BenchReport, EnvError> {
    let mut sc = scenario.clone();
    sc.obs_mode = ObsMode::Vector;
    sc.image_size = [opts.width, opts.height];
    sc.camera_fov_deg = opts.fov_deg;
    let mut env = DrivingEnv::new(world, sc)?;
    let mut seed = opts.seed;
    env.reset(seed);
    let mut frame_ms = Vec::new();
    let mut gaussians = 0;
    let mut steps = 0u64;
    let mut episodes = 1u64;
    let start = Instant::now();
    while frame_ms.is_empty() || start.elapsed() < opts.duration {
        let obs = env.observation_vector();
        let t = env.step(scripted::lane_keep(&obs))?;
        steps += 1;
        let t0 = Instant::now();
        let scenes = env.visible_scenes();
        gaussians = scenes.iter().map(|s| s.len()).sum();
        let cam: PinholeCamera = env.camera();
        std::hint::black_box(render_with(&scenes, &cam, opts.background, &opts.render));
        frame_ms.push(t0.elapsed().as_secs_f64() * 1e3);
        if t.terminated || t.truncated {
            seed += 1;
            episodes += 1;
            env.reset(seed);
        }
    }
    let wall_s = start.elapsed().as_secs_f64();
    let frames = frame_ms.len() as u64;
    frame_ms.sort_by(f64::total_cmp);
    Ok(BenchReport {
        avg_fps: frames as f64 / wall_s,
        p50_frame_ms: percentile(&frame_ms, 0.5),
        p99_frame_ms: percentile(&frame_ms, 0.99),
        peak_rss_mb: peak_rss_mb(),
        gaussians,
        steps,
        frames,
        episodes,
        wall_s,
        width: opts.width,
        height: opts.height,
        threads: rayon::current_num_threads(),
    })
}
