//! Capture-camera extrinsics: parsing, ordering, gravity, and moving the
//! scene so the first camera sits at the origin.

use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Quat, Vec3};
use crate::splat::{RigidTransform, SplatError, SplatScene};

pub const DEFAULT_GRAVITY: f64 = 9.81;

#[derive(Debug, Error)]
pub enum PoseError {
    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("pose manifest entry {index}{label}: {message}")]
    MalformedManifest {
        index: usize,
        label: String,
        message: String,
    },
    #[error("pose set is empty")]
    EmptyPoseSet,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Splat(#[from] SplatError),
}

/// Which camera-local axis points "up" in the world.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpConvention {
    /// The camera's +Z axis.
    #[default]
    CameraZUp,
    /// The camera's −Y axis (OpenCV / COLMAP cameras: x right, y down, z forward).
    CameraNegYUp,
}

impl UpConvention {
    pub fn local_up(self) -> Vec3 {
        match self {
            UpConvention::CameraZUp => Vec3::z(),
            UpConvention::CameraNegYUp => -Vec3::y(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub position: Vec3,
    /// World-from-camera rotation.
    pub rotation: Quat,
    pub up_axis: Vec3,
    pub label: String,
    pub order_key: i64,
}

impl CameraPose {
    pub fn new(position: Vec3, rotation: Quat, label: impl Into<String>, order_key: i64) -> Self {
        Self {
            position,
            rotation,
            up_axis: rotation * UpConvention::default().local_up(),
            label: label.into(),
            order_key,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseSet {
    pub poses: Vec<CameraPose>,
    pub gravity: Option<Vec3>,
    pub up_convention: UpConvention,
}

impl PoseSet {
    pub fn new(poses: Vec<CameraPose>) -> Self {
        Self {
            poses,
            gravity: None,
            up_convention: UpConvention::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Recomputes every pose's `up_axis` for the given convention.
    pub fn with_up_convention(mut self, conv: UpConvention) -> Self {
        self.up_convention = conv;
        let local = conv.local_up();
        for p in &mut self.poses {
            p.up_axis = p.rotation * local;
        }
        self
    }

    /// Sets gravity to `-g` times the first camera's up axis.
    pub fn derive_gravity(mut self, g: f64) -> Result<Self, PoseError> {
        let first = self.poses.first().ok_or(PoseError::EmptyPoseSet)?;
        self.gravity = Some(-first.up_axis.normalize() * g);
        Ok(self)
    }

    pub fn translated(&self, t: &Vec3) -> Self {
        let mut out = self.clone();
        for p in &mut out.poses {
            p.position += t;
        }
        out
    }
}

fn read_text(path: &Path) -> Result<String, PoseError> {
    std::fs::read_to_string(path).map_err(|source| PoseError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parses a COLMAP `images.txt` file (world-to-camera `qw qx qy qz tx ty tz`
/// per image). Poses are sorted by image name.
pub fn parse_colmap(images_path: impl AsRef<Path>) -> Result<PoseSet, PoseError> {
    parse_colmap_str(&read_text(images_path.as_ref())?)
}

pub fn parse_colmap_str(text: &str) -> Result<PoseSet, PoseError> {
    let mut poses = Vec::new();
    let mut lines = text.lines().enumerate();
    while let Some((idx, line)) = lines.next() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let lineno = idx + 1;
        let bad = |message: String| PoseError::MalformedLine {
            line: lineno,
            message,
        };
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 10 {
            return Err(bad(format!("expected 10 fields, found {}", toks.len())));
        }
        let mut nums = [0.0f64; 7];
        for (i, slot) in nums.iter_mut().enumerate() {
            *slot = toks[1 + i]
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| bad(format!("field {} `{}` is not a number", i + 2, toks[1 + i])))?;
        }
        let q = Quaternion::new(nums[0], nums[1], nums[2], nums[3]);
        if q.norm() < 1e-12 {
            return Err(bad("zero quaternion".into()));
        }
        let cam_from_world = UnitQuaternion::new_normalize(q);
        let t = Vector3::new(nums[4], nums[5], nums[6]);
        let position = -(cam_from_world.inverse() * t);
        let name = toks[9..].join(" ");
        poses.push(CameraPose::new(position, cam_from_world.inverse(), name, 0));
        // every image line is followed by its POINTS2D line, which may be blank
        lines.next();
    }
    if poses.is_empty() {
        return Err(PoseError::EmptyPoseSet);
    }
    poses.sort_by(|a, b| a.label.cmp(&b.label));
    for (i, p) in poses.iter_mut().enumerate() {
        p.order_key = i as i64;
    }
    Ok(PoseSet::new(poses))
}

/// One entry of the pose-manifest JSON document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub label: String,
    pub position: [f64; 3],
    /// (w, x, y, z); normalized on load.
    pub rotation: [f64; 4],
    pub order: i64,
}

/// Parses a pose manifest: a JSON list of
/// `{label, position: [x,y,z], rotation: [w,x,y,z], order}`.
pub fn parse_pose_json(path: impl AsRef<Path>) -> Result<PoseSet, PoseError> {
    parse_pose_json_str(&read_text(path.as_ref())?)
}

pub fn parse_pose_json_str(text: &str) -> Result<PoseSet, PoseError> {
    let doc: serde_json::Value =
        serde_json::from_str(text).map_err(|e| PoseError::MalformedManifest {
            index: 0,
            label: String::new(),
            message: format!("not valid JSON: {e}"),
        })?;
    let list = doc.as_array().ok_or_else(|| PoseError::MalformedManifest {
        index: 0,
        label: String::new(),
        message: "top level must be a list".into(),
    })?;
    let mut poses = Vec::with_capacity(list.len());
    for (index, v) in list.iter().enumerate() {
        let label = v
            .get("label")
            .and_then(|l| l.as_str())
            .map(|l| format!(" ({l})"))
            .unwrap_or_default();
        let bad = |message: String| PoseError::MalformedManifest {
            index,
            label: label.clone(),
            message,
        };
        let e: ManifestEntry = serde_json::from_value(v.clone()).map_err(|e| bad(e.to_string()))?;
        if e.position.iter().chain(&e.rotation).any(|x| !x.is_finite()) {
            return Err(bad("non-finite number".into()));
        }
        let [w, x, y, z] = e.rotation;
        let q = Quaternion::new(w, x, y, z);
        if q.norm() < 1e-12 {
            return Err(bad("zero rotation quaternion".into()));
        }
        poses.push(CameraPose::new(
            Vector3::from(e.position),
            UnitQuaternion::new_normalize(q),
            e.label,
            e.order,
        ));
    }
    if poses.is_empty() {
        return Err(PoseError::EmptyPoseSet);
    }
    poses.sort_by(|a, b| a.order_key.cmp(&b.order_key).then_with(|| a.label.cmp(&b.label)));
    Ok(PoseSet::new(poses))
}

/// Serializes poses back into the manifest schema.
pub fn to_manifest(poses: &PoseSet) -> Vec<ManifestEntry> {
    poses
        .poses
        .iter()
        .map(|p| {
            let q = p.rotation.quaternion();
            ManifestEntry {
                label: p.label.clone(),
                position: [p.position.x, p.position.y, p.position.z],
                rotation: [q.w, q.i, q.j, q.k],
                order: p.order_key,
            }
        })
        .collect()
}

/// Free-function form of [`PoseSet::derive_gravity`].
pub fn derive_gravity(poses: PoseSet, g: f64) -> Result<PoseSet, PoseError> {
    poses.derive_gravity(g)
}

/// Translates scene and poses together so the first camera lands on the origin.
pub fn normalize_scene(
    scene: &SplatScene,
    poses: &PoseSet,
) -> Result<(SplatScene, PoseSet), PoseError> {
    let first = poses.poses.first().ok_or(PoseError::EmptyPoseSet)?;
    if scene.is_empty() {
        return Err(SplatError::EmptyScene.into());
    }
    let shift = -first.position;
    let scene = scene.apply_rigid_transform(&RigidTransform::translation(shift))?;
    Ok((scene, poses.translated(&shift)))
}
