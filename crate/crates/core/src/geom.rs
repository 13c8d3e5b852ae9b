//! Small geometric primitives shared by the track, physics and observation code.

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;
pub type Quat = UnitQuaternion<f64>;

/// Oriented box: a center, positive half extents along the local axes, and
/// the rotation taking local axes to world axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obb {
    pub center: Vec3,
    pub half_extents: Vec3,
    pub rotation: Quat,
}

impl Obb {
    pub fn new(center: Vec3, half_extents: Vec3, rotation: Quat) -> Self {
        Self {
            center,
            half_extents,
            rotation,
        }
    }

    /// World-space unit axes of the box (columns of its rotation matrix).
    pub fn axes(&self) -> [Vec3; 3] {
        let m = self.rotation.to_rotation_matrix();
        let m = m.matrix();
        [
            m.column(0).into_owned(),
            m.column(1).into_owned(),
            m.column(2).into_owned(),
        ]
    }

    pub fn bounding_radius(&self) -> f64 {
        self.half_extents.norm()
    }

    pub fn to_local(&self, p: &Vec3) -> Vec3 {
        self.rotation.inverse_transform_vector(&(p - self.center))
    }

    /// Closed containment test.
    pub fn contains(&self, p: &Vec3) -> bool {
        let l = self.to_local(p);
        (0..3).all(|i| l[i].abs() <= self.half_extents[i])
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let h = self.half_extents;
        let mut out = [Vec3::zeros(); 8];
        for (i, c) in out.iter_mut().enumerate() {
            let sx = if i & 1 == 0 { -1.0 } else { 1.0 };
            let sy = if i & 2 == 0 { -1.0 } else { 1.0 };
            let sz = if i & 4 == 0 { -1.0 } else { 1.0 };
            *c = self.center + self.rotation * Vec3::new(sx * h.x, sy * h.y, sz * h.z);
        }
        out
    }

    /// Slab test. Returns the smallest non-negative ray parameter at which the
    /// ray `origin + t * dir` enters (or already is inside) the box, limited to
    /// `max_t`.
    pub fn ray_hit(&self, origin: &Vec3, dir: &Vec3, max_t: f64) -> Option<f64> {
        let o = self.to_local(origin);
        let d = self.rotation.inverse_transform_vector(dir);
        let mut t_min: f64 = 0.0;
        let mut t_max = max_t;
        for i in 0..3 {
            let h = self.half_extents[i];
            if d[i].abs() < 1e-15 {
                if o[i].abs() > h {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d[i];
            let mut t0 = (-h - o[i]) * inv;
            let mut t1 = (h - o[i]) * inv;
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            t_min = t_min.max(t0);
            t_max = t_max.min(t1);
            if t_min > t_max {
                return None;
            }
        }
        Some(t_min)
    }

    /// Conservative rejection for a ray segment of length `max_t`.
    pub fn may_hit_segment(&self, origin: &Vec3, dir: &Vec3, max_t: f64) -> bool {
        let to_c = self.center - origin;
        let t = to_c.dot(dir).clamp(0.0, max_t);
        let closest = origin + dir * t;
        (closest - self.center).norm() <= self.bounding_radius()
    }
}

/// Rotation whose columns are the given right-handed orthonormal frame.
pub fn frame_rotation(x: &Vec3, y: &Vec3, z: &Vec3) -> Quat {
    let m = nalgebra::Matrix3::from_columns(&[*x, *y, *z]);
    UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(m))
}

/// Removes the component of `v` along unit vector `axis` and renormalizes.
/// Falls back to `fallback` when `v` is (nearly) parallel to `axis`.
pub fn orthonormalize_against(v: &Vec3, axis: &Vec3, fallback: &Vec3) -> Vec3 {
    let w = v - axis * v.dot(axis);
    let n = w.norm();
    if n > 1e-9 {
        w / n
    } else {
        let w = fallback - axis * fallback.dot(axis);
        w.normalize()
    }
}

/// Spherical linear interpolation between unit vectors.
pub fn slerp_unit(a: &Vec3, b: &Vec3, t: f64) -> Vec3 {
    let cos = a.dot(b).clamp(-1.0, 1.0);
    let theta = cos.acos();
    if theta < 1e-9 {
        return (a * (1.0 - t) + b * t).normalize();
    }
    let s = theta.sin();
    if s.abs() < 1e-9 {
        // antipodal; any great circle works, pick one through a perpendicular
        let perp = orthonormalize_against(&Vec3::x(), a, &Vec3::y());
        let ang = theta * t;
        return (a * ang.cos() + perp * ang.sin()).normalize();
    }
    let wa = ((1.0 - t) * theta).sin() / s;
    let wb = (t * theta).sin() / s;
    (a * wa + b * wb).normalize()
}
