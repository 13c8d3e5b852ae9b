//! TOML simulator configuration and the fixture writer that produces a
//! self-contained example scene on disk.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvError, ScenarioConfig, Task, World, WorldInputs};
use crate::fixtures::{self, FixtureKind};
use crate::physics::VehicleConfig;
use crate::pose::{self, PoseError, PoseSet, UpConvention, DEFAULT_GRAVITY};
use crate::render::RenderOptions;
use crate::rl::PpoConfig;
use crate::splat::{Aabb, SplatError, SplatScene};
use crate::track::TrackConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid value at `{key}`: {message}")]
    Invalid {
        path: String,
        key: String,
        message: String,
    },
    #[error("asset {path}: {source}")]
    Asset {
        path: String,
        #[source]
        source: SplatError,
    },
    #[error(transparent)]
    Pose(#[from] PoseError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetsConfig {
    pub env: PathBuf,
    pub ego: PathBuf,
    #[serde(default)]
    pub agent: Option<PathBuf>,
    /// Box in the ego asset's local frame; splats outside it are dropped.
    #[serde(default)]
    pub ego_crop: Option<Aabb>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseFormat {
    #[default]
    Json,
    Colmap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosesConfig {
    pub path: PathBuf,
    #[serde(default)]
    pub format: PoseFormat,
    #[serde(default)]
    pub up_convention: UpConvention,
    #[serde(default = "default_gravity")]
    pub gravity: f64,
}

fn default_gravity() -> f64 {
    DEFAULT_GRAVITY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub width: u32,
    pub height: u32,
    pub fov_deg: f64,
    pub background: [f64; 3],
    pub raster: RenderOptions,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            width: 640,
            height: 360,
            fov_deg: 90.0,
            background: crate::env::SKY,
            raster: RenderOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServerConfig {
    pub bind: String,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:7401".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulatorConfig {
    pub assets: AssetsConfig,
    pub poses: PosesConfig,
    #[serde(default)]
    pub track: TrackConfig,
    #[serde(default)]
    pub vehicle: VehicleConfig,
    #[serde(default)]
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub ppo: PpoConfig,
    #[serde(default)]
    pub render: RenderConfig,
    #[serde(default)]
    pub server: ServerConfig,
    /// Directory relative paths are resolved against; set by the loader.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl SimulatorConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// Parses TOML text; `origin` only labels diagnostics.
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::Invalid {
            path: origin.into(),
            key: String::new(),
            message: e.message().to_string(),
        })?;
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Invalid {
            path: origin.into(),
            key: e.path().to_string(),
            message: e.inner().message().to_string(),
        })?;
        cfg.validate(origin)?;
        Ok(cfg)
    }

    fn validate(&self, origin: &str) -> Result<(), ConfigError> {
        let bad = |key: &str, message: String| ConfigError::Invalid {
            path: origin.into(),
            key: key.into(),
            message,
        };
        self.track.validate().map_err(|e| bad("track", e.to_string()))?;
        self.vehicle.validate().map_err(|e| bad("vehicle", e.to_string()))?;
        self.ppo.validate().map_err(|e| bad("ppo", e.to_string()))?;
        if !(self.poses.gravity.is_finite() && self.poses.gravity > 0.0) {
            return Err(bad("poses.gravity", "must be positive".into()));
        }
        if self.render.width == 0 || self.render.height == 0 {
            return Err(bad("render", "width and height must be nonzero".into()));
        }
        if !(self.render.fov_deg > 0.0 && self.render.fov_deg < 180.0) {
            return Err(bad("render.fov_deg", "must lie in (0, 180)".into()));
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn load_poses(&self) -> Result<PoseSet, ConfigError> {
        let path = self.resolve(&self.poses.path);
        let set = match self.poses.format {
            PoseFormat::Json => pose::parse_pose_json(&path)?,
            PoseFormat::Colmap => pose::parse_colmap(&path)?,
        };
        Ok(set.with_up_convention(self.poses.up_convention))
    }

    fn load_asset(&self, p: &Path) -> Result<SplatScene, ConfigError> {
        let path = self.resolve(p);
        crate::ply::load_splat_ply(&path).map_err(|source| ConfigError::Asset {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn build_world(&self) -> Result<World, ConfigError> {
        let agent = match &self.assets.agent {
            Some(p) => Some(self.load_asset(p)?),
            None => None,
        };
        Ok(World::build(WorldInputs {
            env: self.load_asset(&self.assets.env)?,
            ego: self.load_asset(&self.assets.ego)?,
            agent,
            poses: self.load_poses()?,
            ego_crop: self.assets.ego_crop,
            track: self.track.clone(),
            vehicle: self.vehicle.clone(),
            gravity: self.poses.gravity,
        })?)
    }
}

/// Writes `poses.json`, `env.ply`, `ego.ply`, `agent.ply`, and
/// `config.toml` for a fixture task into `dir`; returns the config path.
pub fn write_fixture(dir: &Path, task: Task, density: f64) -> Result<PathBuf, ConfigError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| ConfigError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let vehicle = VehicleConfig::default();
    let fx = fixtures::fixture(task.fixture_kind(), density, vehicle.body_half_extents);
    let manifest = pose::to_manifest(&fx.poses);
    let poses_path = dir.join("poses.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&poses_path, json).map_err(io(&poses_path))?;
    for (name, scene) in [("env.ply", &fx.env), ("ego.ply", &fx.ego), ("agent.ply", &fx.agent)] {
        let p = dir.join(name);
        crate::ply::save_splat_ply(scene, &p).map_err(|source| ConfigError::Asset {
            path: p.display().to_string(),
            source,
        })?;
    }
    let c = fx.ego_crop;
    let task_name = match task {
        Task::StraightSmall => "straight_small",
        Task::TurnLarge => "turn_large",
        Task::AgentSmall => "agent_small",
    };
    let up = match fx.poses.up_convention {
        UpConvention::CameraZUp => "camera_z_up",
        UpConvention::CameraNegYUp => "camera_neg_y_up",
    };
    let kind = match fx.kind {
        FixtureKind::Straight => "straight",
        FixtureKind::LTurn => "l-turn",
    };
    let text = format!(
        "# Synthetic {kind} fixture scene.\n\
         [assets]\n\
         env = \"env.ply\"\n\
         ego = \"ego.ply\"\n\
         agent = \"agent.ply\"\n\
         ego_crop = {{ min = [{}, {}, {}], max = [{}, {}, {}] }}\n\
         \n\
         [poses]\n\
         path = \"poses.json\"\n\
         format = \"json\"\n\
         up_convention = \"{up}\"\n\
         \n\
         [scenario]\n\
         task = \"{task_name}\"\n\
         \n\
         [render]\n\
         width = 320\n\
         height = 180\n",
        c.min[0], c.min[1], c.min[2], c.max[0], c.max[1], c.max[2],
    );
    let cfg_path = dir.join("config.toml");
    std::fs::write(&cfg_path, text).map_err(io(&cfg_path))?;
    Ok(cfg_path)
}
