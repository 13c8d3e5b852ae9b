//! Episodic driving tasks on a splat scene.
//!
//! A [`World`] bundles the immutable pieces (normalized scene, track,
//! vehicle, assets) and is shared behind an `Arc`. Each [`DrivingEnv`] owns
//! its episode state, so any number of environments can run in parallel.

use std::sync::Arc;

use nalgebra::{Isometry3, Translation3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixtures::{self, FixtureKind};
use crate::geom::{frame_rotation, Obb, Quat, Vec3};
use crate::physics::{
    step_fixed, ContactEvent, ContactKind, Controls, PhysicsError, PhysicsWorld, VehicleConfig,
    VehicleState, DEFAULT_DT,
};
use crate::pose::{normalize_scene, PoseError, PoseSet, DEFAULT_GRAVITY};
use crate::render::{look_along, render, Framebuffer, PinholeCamera};
use crate::spline::{RoadSpline, SplineError};
use crate::splat::{Aabb, SplatScene};
use crate::track::{place_blocks, Track, TrackConfig, TrackError};

pub const OBS_DIM: usize = 12;
pub const RAY_COUNT: usize = 7;
pub const RAY_RANGE: f64 = 50.0;
/// Lead-distance value reported when no agent is ahead.
pub const NO_LEAD: f64 = 100.0;

pub const OBS_NAMES: [&str; OBS_DIM] = [
    "speed",
    "lateral_offset",
    "heading_error",
    "distance_to_goal",
    "ray_-90",
    "ray_-60",
    "ray_-30",
    "ray_0",
    "ray_30",
    "ray_60",
    "ray_90",
    "lead_distance",
];

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("step called after the episode finished")]
    EpisodeFinished,
    #[error("step called before reset")]
    NotReset,
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("pose data: {0}")]
    Pose(#[from] PoseError),
    #[error("spline: {0}")]
    Spline(#[from] SplineError),
    #[error("track: {0}")]
    Track(#[from] TrackError),
    #[error("physics: {0}")]
    Physics(#[from] PhysicsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    StraightSmall,
    TurnLarge,
    AgentSmall,
}

impl Task {
    pub fn fixture_kind(self) -> FixtureKind {
        match self {
            Task::TurnLarge => FixtureKind::LTurn,
            Task::StraightSmall | Task::AgentSmall => FixtureKind::Straight,
        }
    }

    pub fn has_agent(self) -> bool {
        self == Task::AgentSmall
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsMode {
    Image,
    #[default]
    Vector,
    Both,
}

impl ObsMode {
    pub fn wants_image(self) -> bool {
        matches!(self, ObsMode::Image | ObsMode::Both)
    }

    pub fn wants_vector(self) -> bool {
        matches!(self, ObsMode::Vector | ObsMode::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub goal: f64,
    pub collision: f64,
    /// Progress reward is `progress_scale * Δs / spline_length`.
    pub progress_scale: f64,
    pub time_penalty: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            goal: 1.0,
            collision: -1.0,
            progress_scale: 1.0,
            time_penalty: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub task: Task,
    pub spawn_s: f64,
    /// Defaults to 6 m before the end of the spline.
    pub goal_s: Option<f64>,
    pub goal_half_extents: [f64; 3],
    /// Defaults to 15 m ahead of the spawn point.
    pub agent_initial_s: Option<f64>,
    pub agent_speed: f64,
    pub max_steps: u32,
    pub obs_mode: ObsMode,
    pub image_size: [u32; 2],
    /// Horizontal field of view of the ego front camera, degrees.
    pub camera_fov_deg: f64,
    /// Spawn lateral jitter as a fraction of the road half-width.
    pub spawn_jitter: f64,
    pub seed: u64,
    pub reward: RewardConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            task: Task::StraightSmall,
            spawn_s: 4.0,
            goal_s: None,
            goal_half_extents: [1.0, 2.0, 2.0],
            agent_initial_s: None,
            agent_speed: 4.0,
            max_steps: 3000,
            obs_mode: ObsMode::Vector,
            image_size: [84, 84],
            camera_fov_deg: 90.0,
            spawn_jitter: 0.1,
            seed: 0,
            reward: RewardConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn for_task(task: Task) -> Self {
        Self {
            task,
            ..Default::default()
        }
    }

    pub fn goal_s_for(&self, length: f64) -> f64 {
        self.goal_s.unwrap_or(length - 6.0)
    }

    pub fn agent_s_for(&self) -> f64 {
        self.agent_initial_s.unwrap_or(self.spawn_s + 15.0)
    }

    pub fn validate(&self, length: f64) -> Result<(), EnvError> {
        let bad = |m: String| Err(EnvError::InvalidScenario(m));
        let goal_s = self.goal_s_for(length);
        if !(0.0 <= self.spawn_s && self.spawn_s < goal_s && goal_s <= length) {
            return bad(format!(
                "need 0 <= spawn_s < goal_s <= length, got spawn_s={} goal_s={goal_s} length={length}",
                self.spawn_s
            ));
        }
        if self.max_steps == 0 {
            return bad("max_steps must be > 0".into());
        }
        if self.image_size[0] < 8 || self.image_size[1] < 8 {
            return bad("image_size must be at least 8x8".into());
        }
        if !(self.camera_fov_deg > 0.0 && self.camera_fov_deg < 180.0) {
            return bad("camera_fov_deg must be in (0, 180)".into());
        }
        if !(0.0..=1.0).contains(&self.spawn_jitter) {
            return bad("spawn_jitter must be in [0, 1]".into());
        }
        if self.agent_speed < 0.0 || !self.agent_speed.is_finite() {
            return bad("agent_speed must be >= 0".into());
        }
        if self.task.has_agent() {
            let a = self.agent_s_for();
            if !(a > self.spawn_s && a <= length) {
                return bad(format!("agent_initial_s {a} must lie ahead of spawn_s and on the spline"));
            }
        }
        Ok(())
    }
}

/// Raw inputs for [`World::build`].
#[derive(Debug, Clone)]
pub struct WorldInputs {
    pub env: SplatScene,
    pub ego: SplatScene,
    pub agent: Option<SplatScene>,
    pub poses: PoseSet,
    /// Applied to the ego asset in its local frame.
    pub ego_crop: Option<Aabb>,
    pub track: TrackConfig,
    pub vehicle: VehicleConfig,
    pub gravity: f64,
}

/// Immutable simulation assets shared by environments.
#[derive(Debug, Clone)]
pub struct World {
    pub env_scene: SplatScene,
    pub ego_scene: SplatScene,
    pub agent_scene: Option<SplatScene>,
    pub poses: PoseSet,
    pub track: Track,
    pub vehicle: VehicleConfig,
    pub gravity: Vec3,
    pub dt: f64,
    /// Front camera position in the ego body frame.
    pub camera_mount: Vec3,
}

impl World {
    /// Normalizes the scene to the first camera, derives gravity, builds the
    /// spline and the collider track.
    pub fn build(inputs: WorldInputs) -> Result<World, EnvError> {
        inputs.vehicle.validate()?;
        let ego = match &inputs.ego_crop {
            Some(b) => inputs.ego.crop(b),
            None => inputs.ego,
        };
        let (env_scene, poses) = normalize_scene(&inputs.env, &inputs.poses)?;
        let poses = poses.derive_gravity(inputs.gravity)?;
        let gravity = poses.gravity.expect("set by derive_gravity");
        let spline = RoadSpline::from_poses(&poses)?;
        let v = &inputs.vehicle;
        let track = place_blocks(&spline, &inputs.track, v.width(), v.height())?;
        let ride = v.ride_height(inputs.gravity);
        let camera_mount = Vec3::new(v.body_half_extents.x, 0.0, track.drop_offset() - ride);
        Ok(World {
            env_scene,
            ego_scene: ego,
            agent_scene: inputs.agent,
            poses,
            track,
            vehicle: inputs.vehicle,
            gravity,
            dt: DEFAULT_DT,
            camera_mount,
        })
    }

    /// In-memory fixture world for `task` with default track and vehicle.
    pub fn fixture(task: Task) -> Result<World, EnvError> {
        Self::fixture_with(task, 1.0, TrackConfig::default(), VehicleConfig::default())
    }

    pub fn fixture_with(
        task: Task,
        density: f64,
        track: TrackConfig,
        vehicle: VehicleConfig,
    ) -> Result<World, EnvError> {
        let fx = fixtures::fixture(task.fixture_kind(), density, vehicle.body_half_extents);
        World::build(WorldInputs {
            env: fx.env,
            ego: fx.ego,
            agent: Some(fx.agent),
            poses: fx.poses,
            ego_crop: Some(fx.ego_crop),
            track,
            vehicle,
            gravity: DEFAULT_GRAVITY,
        })
    }

    pub fn spline(&self) -> &RoadSpline {
        &self.track.spline
    }

    pub fn length(&self) -> f64 {
        self.track.spline.total_length()
    }

    /// Body pose of a vehicle resting on the road at arc length `s`, shifted
    /// `lateral` meters to the left.
    pub fn road_pose(&self, s: f64, lateral: f64, height_above_road: f64) -> (Vec3, Quat) {
        let smp = self.spline().eval_clamped(s);
        let left = smp.up.cross(&smp.tangent);
        let road = smp.position - smp.up * self.track.drop_offset();
        let pos = road + left * lateral + smp.up * height_above_road;
        (pos, frame_rotation(&smp.tangent, &left, &smp.up))
    }

    /// World-from-camera pose of the ego front camera.
    pub fn ego_camera_pose(&self, state: &VehicleState) -> Isometry3<f64> {
        let pos = state.position + state.orientation * self.camera_mount;
        look_along(pos, &state.forward(), &state.up())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentFollower {
    pub id: usize,
    /// Arc position, m.
    pub s: f64,
    pub speed: f64,
    pub body: Obb,
}

impl AgentFollower {
    /// Advances along the spline; parks at the end.
    pub fn advance(&mut self, world: &World, dt: f64) {
        let length = world.length();
        self.s = (self.s + self.speed * dt).min(length);
        if self.s >= length {
            self.speed = 0.0;
        }
        self.place(world);
    }

    /// Body box follows the spline: road level plus half the body height,
    /// forward along the tangent, up from the camera extrinsics.
    pub fn place(&mut self, world: &World) {
        let h = world.vehicle.body_half_extents;
        let (pos, rot) = world.road_pose(self.s, 0.0, h.z);
        self.body = Obb::new(pos, h, rot);
    }

    pub fn forward(&self) -> Vec3 {
        self.body.rotation * Vec3::x()
    }

    pub fn up(&self) -> Vec3 {
        self.body.rotation * Vec3::z()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Goal,
    CollisionWall,
    CollisionAgent,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub outcome: Outcome,
    pub steps: u32,
    pub total_reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub image: Option<Framebuffer>,
    pub vector: Option<[f64; OBS_DIM]>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StepInfo {
    /// The action was out of bounds and got clamped.
    pub clamped: bool,
    pub outcome: Option<Outcome>,
    pub events: Vec<ContactEvent>,
    /// Ego arc position after the step.
    pub s: f64,
    pub steps: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone)]
struct Episode {
    vehicle: VehicleState,
    agents: Vec<AgentFollower>,
    s: f64,
    steps: u32,
    total_reward: f64,
    result: Option<EpisodeResult>,
}

/// One environment instance; single-threaded.
#[derive(Debug, Clone)]
pub struct DrivingEnv {
    world: Arc<World>,
    cfg: ScenarioConfig,
    physics: PhysicsWorld,
    goal_s: f64,
    episode: Option<Episode>,
}

impl DrivingEnv {
    pub fn new(world: Arc<World>, cfg: ScenarioConfig) -> Result<Self, EnvError> {
        let length = world.length();
        cfg.validate(length)?;
        let goal_s = cfg.goal_s_for(length);
        let smp = world.spline().eval_clamped(goal_s);
        let left = smp.up.cross(&smp.tangent);
        let goal = Obb::new(
            smp.position,
            Vec3::from(cfg.goal_half_extents),
            frame_rotation(&smp.tangent, &left, &smp.up),
        );
        let physics = PhysicsWorld {
            gravity: world.gravity,
            dt: world.dt,
            floors: world.track.floor_boxes().copied().collect(),
            walls: world.track.wall_boxes().copied().collect(),
            agents: Vec::new(),
            goal: Some(goal),
        };
        Ok(Self {
            world,
            cfg,
            physics,
            goal_s,
            episode: None,
        })
    }

    pub fn world(&self) -> &Arc<World> {
        &self.world
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn goal_box(&self) -> &Obb {
        self.physics.goal.as_ref().expect("goal always set")
    }

    pub fn goal_s(&self) -> f64 {
        self.goal_s
    }

    pub fn vehicle(&self) -> Option<&VehicleState> {
        self.episode.as_ref().map(|e| &e.vehicle)
    }

    pub fn agents(&self) -> &[AgentFollower] {
        self.episode.as_ref().map(|e| e.agents.as_slice()).unwrap_or(&[])
    }

    pub fn result(&self) -> Option<EpisodeResult> {
        self.episode.as_ref().and_then(|e| e.result)
    }

    pub fn is_active(&self) -> bool {
        self.episode.as_ref().is_some_and(|e| e.result.is_none())
    }

    /// Starts a new episode. The seed only perturbs the spawn lateral offset.
    pub fn reset(&mut self, seed: u64) -> Observation {
        let w = Arc::clone(&self.world);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let jitter = self.cfg.spawn_jitter * w.track.road_half_width();
        let lateral = if jitter > 0.0 {
            rng.random_range(-jitter..=jitter)
        } else {
            0.0
        };
        let g = w.gravity.norm();
        let (pos, rot) = w.road_pose(self.cfg.spawn_s, lateral, w.vehicle.ride_height(g));
        let mut vehicle = VehicleState::at_rest(pos, rot);
        vehicle.wheel_compressions = [w.vehicle.static_compression(g); 4];
        let agents = if self.cfg.task.has_agent() {
            let mut a = AgentFollower {
                id: 0,
                s: self.cfg.agent_s_for(),
                speed: self.cfg.agent_speed,
                body: Obb::new(Vec3::zeros(), w.vehicle.body_half_extents, Quat::identity()),
            };
            a.place(&w);
            vec![a]
        } else {
            Vec::new()
        };
        let s = w.spline().project(&pos, self.cfg.spawn_s);
        self.episode = Some(Episode {
            vehicle,
            agents,
            s,
            steps: 0,
            total_reward: 0.0,
            result: None,
        });
        self.observe()
    }

    /// Advances every agent by `dt`.
    pub fn update_agents(&mut self, dt: f64) {
        let w = Arc::clone(&self.world);
        if let Some(ep) = &mut self.episode {
            for a in &mut ep.agents {
                a.advance(&w, dt);
            }
        }
    }

    pub fn step(&mut self, action: Controls) -> Result<Transition, EnvError> {
        match &self.episode {
            None => return Err(EnvError::NotReset),
            Some(ep) if ep.result.is_some() => return Err(EnvError::EpisodeFinished),
            _ => {}
        }
        let (controls, clamped) = action.clamped();
        let dt = self.world.dt;
        self.update_agents(dt);

        let w = Arc::clone(&self.world);
        let ep = self.episode.as_mut().expect("checked above");
        self.physics.agents.clear();
        self.physics.agents.extend(ep.agents.iter().map(|a| a.body));
        let mut vehicle = ep.vehicle.clone();
        vehicle.controls = controls;
        let (next, events) = match step_fixed(&vehicle, &w.vehicle, &self.physics, dt) {
            Ok(r) => r,
            Err(e) => {
                // a diverged simulation cannot continue; end the episode as a crash
                ep.steps += 1;
                ep.result = Some(EpisodeResult {
                    outcome: Outcome::CollisionWall,
                    steps: ep.steps,
                    total_reward: ep.total_reward,
                });
                return Err(e.into());
            }
        };
        ep.vehicle = next;
        ep.steps += 1;

        let s_new = w.spline().project(&ep.vehicle.position, ep.s);
        let r = &self.cfg.reward;
        let mut reward = r.progress_scale * (s_new - ep.s) / w.length() - r.time_penalty;
        ep.s = s_new;

        let hit = |k: ContactKind| events.iter().any(|e| e.kind == k);
        let outcome = if hit(ContactKind::Wall) {
            Some(Outcome::CollisionWall)
        } else if hit(ContactKind::Agent) {
            Some(Outcome::CollisionAgent)
        } else if hit(ContactKind::Goal) {
            Some(Outcome::Goal)
        } else if ep.steps >= self.cfg.max_steps {
            Some(Outcome::Timeout)
        } else {
            None
        };
        match outcome {
            Some(Outcome::Goal) => reward += r.goal,
            Some(Outcome::CollisionWall | Outcome::CollisionAgent) => reward += r.collision,
            _ => {}
        }
        ep.total_reward += reward;
        if let Some(o) = outcome {
            ep.result = Some(EpisodeResult {
                outcome: o,
                steps: ep.steps,
                total_reward: ep.total_reward,
            });
        }
        let info = StepInfo {
            clamped,
            outcome,
            events,
            s: ep.s,
            steps: ep.steps,
        };
        Ok(Transition {
            obs: self.observe(),
            reward,
            terminated: matches!(
                outcome,
                Some(Outcome::Goal | Outcome::CollisionWall | Outcome::CollisionAgent)
            ),
            truncated: outcome == Some(Outcome::Timeout),
            info,
        })
    }

    /// Observation of the current state. Panics before the first reset.
    pub fn observe(&self) -> Observation {
        let mode = self.cfg.obs_mode;
        Observation {
            image: mode.wants_image().then(|| self.render_ego_view()),
            vector: mode.wants_vector().then(|| self.observation_vector()),
        }
    }

    pub fn observation_vector(&self) -> [f64; OBS_DIM] {
        let ep = self.episode.as_ref().expect("reset before observe");
        let w = &self.world;
        let v = &ep.vehicle;
        let smp = w.spline().eval_clamped(ep.s);
        let left = smp.up.cross(&smp.tangent);
        let fwd = v.forward();
        let heading = smp.tangent.cross(&fwd).dot(&smp.up).atan2(smp.tangent.dot(&fwd));
        let mut out = [0.0; OBS_DIM];
        out[0] = v.linear_velocity.dot(&fwd);
        out[1] = (v.position - smp.position).dot(&left);
        out[2] = heading;
        out[3] = self.goal_s - ep.s;
        let rays = self.wall_rays(v);
        out[4..4 + RAY_COUNT].copy_from_slice(&rays);
        out[11] = ep
            .agents
            .iter()
            .map(|a| a.s - ep.s)
            .filter(|d| *d > 0.0)
            .fold(NO_LEAD, f64::min);
        out
    }

    /// Distances along 7 horizontal body-plane rays from the body center,
    /// −90° (right) to +90° (left), against the wall boxes.
    pub fn wall_rays(&self, v: &VehicleState) -> [f64; RAY_COUNT] {
        let origin = v.position;
        let mut out = [RAY_RANGE; RAY_COUNT];
        let near: Vec<&Obb> = self
            .physics
            .walls
            .iter()
            .filter(|b| (b.center - origin).norm() <= RAY_RANGE + b.bounding_radius())
            .collect();
        for (k, slot) in out.iter_mut().enumerate() {
            let ang = (-90.0 + 30.0 * k as f64).to_radians();
            let dir = v.orientation * Vec3::new(ang.cos(), ang.sin(), 0.0);
            for b in &near {
                if b.may_hit_segment(&origin, &dir, *slot) {
                    if let Some(t) = b.ray_hit(&origin, &dir, *slot) {
                        *slot = slot.min(t);
                    }
                }
            }
        }
        out
    }

    pub fn camera(&self) -> PinholeCamera {
        let ep = self.episode.as_ref().expect("reset before observe");
        let [wd, ht] = self.cfg.image_size;
        PinholeCamera::from_fov(
            wd,
            ht,
            self.cfg.camera_fov_deg.to_radians(),
            self.world.ego_camera_pose(&ep.vehicle),
        )
    }

    /// Scenes visible from the ego camera: environment plus placed agents.
    pub fn visible_scenes(&self) -> Vec<SplatScene> {
        let mut scenes = vec![self.world.env_scene.clone()];
        if let Some(asset) = &self.world.agent_scene {
            for a in self.agents() {
                let iso = Isometry3::from_parts(Translation3::from(a.body.center), a.body.rotation);
                scenes.push(asset.placed(iso));
            }
        }
        scenes
    }

    pub fn render_ego_view(&self) -> Framebuffer {
        render(&self.visible_scenes(), &self.camera(), SKY)
    }
}

pub const SKY: [f64; 3] = [0.62, 0.74, 0.88];

/// Scripted policies used by tests, benchmarks and the CLI.
pub mod scripted {
    use super::*;

    /// Full throttle, wheels straight.
    pub fn straight(_: &[f64; OBS_DIM]) -> Controls {
        Controls::new(1.0, 0.0, 0.0)
    }

    /// Full throttle, full left lock.
    pub fn ram_left_wall(_: &[f64; OBS_DIM]) -> Controls {
        Controls::new(1.0, 1.0, 0.0)
    }

    pub fn brake(_: &[f64; OBS_DIM]) -> Controls {
        Controls::new(0.0, 0.0, 1.0)
    }

    /// Proportional lane keeping with a speed cap.
    pub fn lane_keep(obs: &[f64; OBS_DIM]) -> Controls {
        let steer = -obs[1] - 3.0 * obs[2];
        let throttle = if obs[0] < 6.0 { 1.0 } else { 0.0 };
        Controls::new(throttle, steer, 0.0)
    }

    /// Runs one episode with `policy` and returns the result plus the reward
    /// trace.
    pub fn run_episode(
        env: &mut DrivingEnv,
        seed: u64,
        mut policy: impl FnMut(&[f64; OBS_DIM]) -> Controls,
    ) -> Result<(EpisodeResult, Vec<f64>), EnvError> {
        env.reset(seed);
        let mut rewards = Vec::new();
        loop {
            let obs = env.observation_vector();
            let t = env.step(policy(&obs))?;
            rewards.push(t.reward);
            if t.terminated || t.truncated {
                return Ok((env.result().expect("episode ended"), rewards));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::OnceLock;

    fn straight_world() -> Arc<World> {
        static W: OnceLock<Arc<World>> = OnceLock::new();
        W.get_or_init(|| Arc::new(World::fixture(Task::StraightSmall).unwrap())).clone()
    }

    fn env(task: Task) -> DrivingEnv {
        let w = if task == Task::TurnLarge {
            Arc::new(World::fixture(task).unwrap())
        } else {
            straight_world()
        };
        DrivingEnv::new(w, ScenarioConfig::for_task(task)).unwrap()
    }

    #[test]
    fn spawn_aligned_with_tangent() {
        let mut e = env(Task::StraightSmall);
        e.reset(0);
        let v = e.vehicle().unwrap();
        let t = e.world().spline().eval(4.0).unwrap().tangent;
        assert!(v.forward().dot(&t) >= 1.0 - 1e-6);
    }

    #[test]
    fn reset_is_deterministic() {
        let mut e = env(Task::StraightSmall);
        let a = e.reset(7);
        let b = e.reset(7);
        assert_eq!(a, b);
    }

    #[test]
    fn step_before_reset() {
        let mut e = env(Task::StraightSmall);
        assert!(matches!(e.step(Controls::default()), Err(EnvError::NotReset)));
    }

    #[test]
    fn idle_step_has_no_progress() {
        let mut e = env(Task::StraightSmall);
        e.reset(0);
        let t = e.step(Controls::default()).unwrap();
        assert!(!t.terminated && !t.truncated);
        assert!(t.reward.abs() < 1e-3, "{}", t.reward);
    }

    #[test]
    fn centered_ego_has_zero_offsets() {
        let mut cfg = ScenarioConfig::for_task(Task::StraightSmall);
        cfg.spawn_jitter = 0.0;
        let mut e = DrivingEnv::new(straight_world(), cfg).unwrap();
        let o = e.reset(0).vector.unwrap();
        assert!(o[1].abs() < 1e-6 && o[2].abs() < 1e-6, "{o:?}");
    }

    #[test]
    fn perpendicular_rays_span_the_road() {
        let mut e = env(Task::StraightSmall);
        let o = e.reset(3).vector.unwrap();
        let width = 2.0 * e.world().track.road_half_width();
        let t = e.world().track.config.wall_thickness;
        assert!((o[4] + o[10] - width).abs() <= 2.0 * t, "{o:?}");
    }

    #[test]
    fn agent_spawns_ahead_and_follows_spline() {
        let mut e = env(Task::AgentSmall);
        e.reset(0);
        assert!(e.agents()[0].s > e.config().spawn_s);
        e.update_agents(0.02);
        let a = &e.agents()[0];
        assert!((a.s - (19.0 + 0.08)).abs() < 1e-12);
        let smp = e.world().spline().eval(a.s).unwrap();
        assert!((a.forward() - smp.tangent).norm() < 1e-9);
    }

    #[test]
    fn agent_parks_at_end() {
        let mut e = env(Task::AgentSmall);
        e.reset(0);
        e.update_agents(1e4);
        let len = e.world().length();
        assert_eq!(e.agents()[0].s, len);
        assert_eq!(e.agents()[0].speed, 0.0);
    }

    #[test]
    fn image_shape_follows_config() {
        let mut cfg = ScenarioConfig::for_task(Task::StraightSmall);
        cfg.obs_mode = ObsMode::Image;
        cfg.image_size = [32, 24];
        let mut e = DrivingEnv::new(straight_world(), cfg).unwrap();
        let img = e.reset(0).image.unwrap();
        assert_eq!((img.width, img.height), (32, 24));
    }

    #[test]
    fn invalid_scenario_rejected() {
        let cfg = ScenarioConfig {
            spawn_s: 500.0,
            ..Default::default()
        };
        assert!(DrivingEnv::new(straight_world(), cfg).is_err());
    }
}
