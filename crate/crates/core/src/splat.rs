//! Gaussian splat assets: the primitive record, scenes with a lazy rigid
//! placement, cropping, bounds, and the 3DGS PLY codec (see [`crate::ply`]).

use std::sync::Arc;

use nalgebra::{Isometry3, Point3, Quaternion, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::ply::{load_splat_ply, save_splat_ply};

/// Number of SH coefficients per channel stored for every gaussian (degree 3).
pub const SH_COEFFS: usize = 16;

#[derive(Debug, Error)]
pub enum SplatError {
    #[error("missing required PLY property `{0}`")]
    MissingField(String),
    #[error("malformed PLY header: {0}")]
    MalformedHeader(String),
    #[error("invalid value for `{field}` at vertex {vertex}")]
    InvalidValue { vertex: usize, field: String },
    #[error("scene has no gaussians")]
    EmptyScene,
    #[error("rotation quaternion is not unit length (norm {0})")]
    InvalidTransform(f64),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One splat primitive, stored in float32 exactly as it appears in the PLY.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian {
    pub mean: [f32; 3],
    /// Log of the per-axis standard deviation.
    pub scale_log: [f32; 3],
    /// Unit quaternion, (w, x, y, z).
    pub rotation: [f32; 4],
    pub opacity_logit: f32,
    /// `sh[0]` is the DC triple, `sh[1..]` the higher-order coefficients.
    pub sh: [[f32; 3]; SH_COEFFS],
}

impl Default for Gaussian {
    fn default() -> Self {
        Self {
            mean: [0.0; 3],
            scale_log: [0.0; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity_logit: 0.0,
            sh: [[0.0; 3]; SH_COEFFS],
        }
    }
}

impl Gaussian {
    pub fn mean_f64(&self) -> Vector3<f64> {
        Vector3::new(self.mean[0] as f64, self.mean[1] as f64, self.mean[2] as f64)
    }

    pub fn rotation_f64(&self) -> UnitQuaternion<f64> {
        let [w, x, y, z] = self.rotation;
        UnitQuaternion::new_normalize(Quaternion::new(w as f64, x as f64, y as f64, z as f64))
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit as f64)
    }

    pub fn scale(&self) -> Vector3<f64> {
        Vector3::new(
            (self.scale_log[0] as f64).exp(),
            (self.scale_log[1] as f64).exp(),
            (self.scale_log[2] as f64).exp(),
        )
    }

    /// Normalizes the rotation in place. Returns `false` for a zero or
    /// non-finite quaternion.
    pub fn normalize_rotation(&mut self) -> bool {
        let q = self.rotation.map(|v| v as f64);
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !n.is_finite() || n == 0.0 {
            return false;
        }
        self.rotation = q.map(|v| (v / n) as f32);
        true
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Axis-aligned box with closed bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        debug_assert!((0..3).all(|i| min[i] <= max[i]), "Aabb min must not exceed max");
        Self { min, max }
    }

    pub fn is_valid(&self) -> bool {
        (0..3).all(|i| self.min[i] <= self.max[i])
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

/// A rigid transform as supplied by callers. The quaternion is not trusted to
/// be unit length; [`SplatScene::apply_rigid_transform`] validates it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Quaternion<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Quaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Quaternion::identity(),
            translation: t,
        }
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        Self {
            rotation: *iso.rotation.quaternion(),
            translation: iso.translation.vector,
        }
    }

    pub fn to_isometry(&self) -> Result<Isometry3<f64>, SplatError> {
        let n = self.rotation.norm();
        if !n.is_finite() || (n - 1.0).abs() > 1e-6 {
            return Err(SplatError::InvalidTransform(n));
        }
        Ok(Isometry3::from_parts(
            Translation3::from(self.translation),
            UnitQuaternion::new_normalize(self.rotation),
        ))
    }
}

/// A splat asset plus its placement in the world.
///
/// Gaussian records are shared behind an [`Arc`]; re-placing a scene only
/// swaps `local_to_world` and never copies or rewrites the records.
#[derive(Debug, Clone)]
pub struct SplatScene {
    pub gaussians: Arc<Vec<Gaussian>>,
    pub local_to_world: Isometry3<f64>,
    pub sh_degree: u8,
    pub source_path: String,
}

impl SplatScene {
    pub fn new(gaussians: Vec<Gaussian>, sh_degree: u8) -> Self {
        assert!(sh_degree <= 3, "sh_degree must be 0..=3");
        Self {
            gaussians: Arc::new(gaussians),
            local_to_world: Isometry3::identity(),
            sh_degree,
            source_path: String::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn world_mean(&self, g: &Gaussian) -> Vector3<f64> {
        self.local_to_world.transform_point(&Point3::from(g.mean_f64())).coords
    }

    pub fn world_means(&self) -> impl Iterator<Item = Vector3<f64>> + '_ {
        self.gaussians.iter().map(|g| self.world_mean(g))
    }

    pub fn world_rotation(&self, g: &Gaussian) -> UnitQuaternion<f64> {
        self.local_to_world.rotation * g.rotation_f64()
    }

    /// Composes `t` after the current placement. Records are untouched.
    pub fn apply_rigid_transform(&self, t: &RigidTransform) -> Result<SplatScene, SplatError> {
        let iso = t.to_isometry()?;
        Ok(self.placed(iso * self.local_to_world))
    }

    /// Same scene records with a new placement.
    pub fn placed(&self, local_to_world: Isometry3<f64>) -> SplatScene {
        SplatScene {
            gaussians: Arc::clone(&self.gaussians),
            local_to_world,
            sh_degree: self.sh_degree,
            source_path: self.source_path.clone(),
        }
    }

    /// Keeps the gaussians whose world-space mean lies inside `bounds`; the
    /// 3σ extent is not considered. Order is preserved.
    pub fn crop(&self, bounds: &Aabb) -> SplatScene {
        let kept: Vec<Gaussian> = self
            .gaussians
            .iter()
            .filter(|g| bounds.contains(&self.world_mean(g)))
            .copied()
            .collect();
        SplatScene {
            gaussians: Arc::new(kept),
            local_to_world: self.local_to_world,
            sh_degree: self.sh_degree,
            source_path: self.source_path.clone(),
        }
    }

    /// Tight box over world-space means (covariance extent excluded).
    pub fn compute_bounds(&self) -> Result<Aabb, SplatError> {
        let mut it = self.world_means();
        let first = it.next().ok_or(SplatError::EmptyScene)?;
        let mut min = [first.x, first.y, first.z];
        let mut max = min;
        for m in it {
            for i in 0..3 {
                min[i] = min[i].min(m[i]);
                max[i] = max[i].max(m[i]);
            }
        }
        Ok(Aabb { min, max })
    }

    /// Records with the placement baked in: means and rotations in world
    /// space, scales and SH unchanged.
    pub fn baked_gaussians(&self) -> Vec<Gaussian> {
        if self.local_to_world == Isometry3::identity() {
            return self.gaussians.as_ref().clone();
        }
        self.gaussians
            .iter()
            .map(|g| {
                let m = self.world_mean(g);
                let q = self.world_rotation(g);
                let q = q.quaternion();
                Gaussian {
                    mean: [m.x as f32, m.y as f32, m.z as f32],
                    rotation: [q.w as f32, q.i as f32, q.j as f32, q.k as f32],
                    ..*g
                }
            })
            .collect()
    }
}

/// Free-function form of [`SplatScene::crop`].
pub fn crop_scene(scene: &SplatScene, bounds: &Aabb) -> SplatScene {
    scene.crop(bounds)
}

/// Free-function form of [`SplatScene::compute_bounds`].
pub fn compute_bounds(scene: &SplatScene) -> Result<Aabb, SplatError> {
    scene.compute_bounds()
}

/// Free-function form of [`SplatScene::apply_rigid_transform`].
pub fn apply_rigid_transform(
    scene: &SplatScene,
    t: &RigidTransform,
) -> Result<SplatScene, SplatError> {
    scene.apply_rigid_transform(t)
}
