//! Synthetic scenes so the whole pipeline runs without captured data.
//!
//! Two pose paths are provided: a 60 m straight road and a ~120 m L-shaped
//! road with a 10 m radius right turn. Environments are built from box-shaped
//! splat clusters (road surface, lane markings, buildings) and the vehicles
//! are box cars. Everything is expressed in a deliberately offset frame so
//! scene normalization has real work to do.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geom::{frame_rotation, Quat, Vec3};
use crate::pose::{CameraPose, PoseSet, UpConvention};
use crate::sh::SH_C0;
use crate::splat::{Aabb, Gaussian, SplatScene};

/// Where the fixture world sits before normalization.
pub const FIXTURE_OFFSET: [f64; 3] = [105.0, -42.0, 3.5];
/// Distance between consecutive fixture cameras along the path.
pub const POSE_SPACING: f64 = 2.0;
/// Road surface below the camera path.
pub const CAMERA_HEIGHT: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixtureKind {
    Straight,
    LTurn,
}

/// Generated assets plus the crop box that strips the ego's floaters.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub kind: FixtureKind,
    pub poses: PoseSet,
    pub env: SplatScene,
    pub ego: SplatScene,
    pub agent: SplatScene,
    pub ego_crop: Aabb,
}

/// Dense centerline samples `(position, unit tangent)` in the un-offset frame,
/// `step` meters apart.
pub fn centerline(kind: FixtureKind, step: f64) -> Vec<(Vec3, Vec3)> {
    let mut out = Vec::new();
    match kind {
        FixtureKind::Straight => {
            let n = (60.0 / step).round() as usize;
            for i in 0..=n {
                out.push((Vec3::new(i as f64 * step, 0.0, 0.0), Vec3::x()));
            }
        }
        FixtureKind::LTurn => {
            let (leg1, radius, leg2) = (50.0, 10.0, 55.0);
            let arc = radius * std::f64::consts::FRAC_PI_2;
            let total = leg1 + arc + leg2;
            let n = (total / step).round() as usize;
            for i in 0..=n {
                let s = (i as f64 * step).min(total);
                let sample = if s <= leg1 {
                    (Vec3::new(s, 0.0, 0.0), Vec3::x())
                } else if s <= leg1 + arc {
                    let th = (s - leg1) / radius;
                    (
                        Vec3::new(leg1 + radius * th.sin(), -radius + radius * th.cos(), 0.0),
                        Vec3::new(th.cos(), -th.sin(), 0.0),
                    )
                } else {
                    let t = s - leg1 - arc;
                    (Vec3::new(leg1 + radius, -radius - t, 0.0), -Vec3::y())
                };
                out.push(sample);
            }
        }
    }
    out
}

/// Camera poses along the path, OpenCV-style cameras (y down, z forward).
pub fn fixture_poses(kind: FixtureKind) -> PoseSet {
    let offset = Vec3::from(FIXTURE_OFFSET);
    let poses = centerline(kind, POSE_SPACING)
        .into_iter()
        .enumerate()
        .map(|(i, (p, t))| {
            let z = t;
            let y = -Vec3::z();
            let x = y.cross(&z);
            CameraPose::new(p + offset, frame_rotation(&x, &y, &z), format!("cam_{i:04}"), i as i64)
        })
        .collect();
    PoseSet::new(poses).with_up_convention(UpConvention::CameraNegYUp)
}

fn dc(rgb: [f64; 3]) -> [f32; 3] {
    rgb.map(|c| ((c - 0.5) / SH_C0) as f32)
}

fn splat(mean: Vec3, scale: [f64; 3], rot: &Quat, rgb: [f64; 3], opacity: f64) -> Gaussian {
    let q = rot.quaternion();
    let mut g = Gaussian {
        mean: [mean.x as f32, mean.y as f32, mean.z as f32],
        scale_log: scale.map(|s| s.ln() as f32),
        rotation: [q.w as f32, q.i as f32, q.j as f32, q.k as f32],
        opacity_logit: (opacity / (1.0 - opacity)).ln() as f32,
        ..Default::default()
    };
    g.sh[0] = dc(rgb);
    g
}

/// Covers the faces of a box (center `c`, half extents `h`, frame `rot`) with
/// flat splats roughly `pitch` apart. The bottom face is skipped.
fn box_shell(
    out: &mut Vec<Gaussian>,
    c: Vec3,
    h: Vec3,
    rot: &Quat,
    pitch: f64,
    rgb: [f64; 3],
    rng: &mut ChaCha8Rng,
) {
    let axes = [rot * Vec3::x(), rot * Vec3::y(), rot * Vec3::z()];
    for normal_axis in 0..3 {
        for sign in [-1.0, 1.0] {
            if normal_axis == 2 && sign < 0.0 {
                continue;
            }
            let (a, b) = ((normal_axis + 1) % 3, (normal_axis + 2) % 3);
            let na = ((2.0 * h[a] / pitch).ceil() as usize).max(1);
            let nb = ((2.0 * h[b] / pitch).ceil() as usize).max(1);
            let face_rot = frame_rotation(&axes[a], &axes[b], &axes[normal_axis]);
            let (sa, sb) = (h[a] / na as f64, h[b] / nb as f64);
            for i in 0..na {
                for j in 0..nb {
                    let u = -h[a] + (2 * i + 1) as f64 * sa;
                    let v = -h[b] + (2 * j + 1) as f64 * sb;
                    let p = c + axes[normal_axis] * (sign * h[normal_axis]) + axes[a] * u + axes[b] * v;
                    let shade = rng.random_range(0.9..1.1);
                    let col = rgb.map(|x| (x * shade).clamp(0.0, 1.0));
                    out.push(splat(p, [sa * 0.9, sb * 0.9, 0.03], &face_rot, col, 0.95));
                }
            }
        }
    }
}

/// Procedural environment: road surface, dashed center line and buildings on
/// both sides. `density` scales the splat count roughly linearly.
pub fn fixture_environment(kind: FixtureKind, density: f64) -> SplatScene {
    let mut rng = ChaCha8Rng::seed_from_u64(match kind {
        FixtureKind::Straight => 11,
        FixtureKind::LTurn => 12,
    });
    let pitch = 1.0 / density.max(1e-3).sqrt();
    let offset = Vec3::from(FIXTURE_OFFSET);
    let ground = -CAMERA_HEIGHT;
    let mut gs = Vec::new();
    let line = centerline(kind, pitch);
    let lateral_n = (7.0 / pitch).ceil() as i64;
    for (k, (p, t)) in line.iter().enumerate() {
        let left = Vec3::z().cross(t);
        let rot = frame_rotation(t, &left, &Vec3::z());
        for j in -lateral_n..=lateral_n {
            let lat = j as f64 * pitch;
            let gray = rng.random_range(0.28..0.36);
            let col = if lat.abs() > 3.0 {
                [0.35, 0.45 + 0.1 * gray, 0.3]
            } else {
                [gray, gray, gray + 0.02]
            };
            let q = p + left * lat + Vec3::new(0.0, 0.0, ground);
            gs.push(splat(q + offset, [pitch * 0.6, pitch * 0.6, 0.02], &rot, col, 0.9));
        }
        if (k as f64 * pitch) % 4.0 < 2.0 {
            let q = p + Vec3::new(0.0, 0.0, ground + 0.01);
            gs.push(splat(q + offset, [pitch * 0.5, 0.08, 0.01], &rot, [0.95, 0.95, 0.9], 0.9));
        }
    }
    let coarse = centerline(kind, 12.0);
    for (k, (p, t)) in coarse.iter().enumerate() {
        let left = Vec3::z().cross(t);
        let rot = frame_rotation(t, &left, &Vec3::z());
        for side in [-1.0, 1.0] {
            let depth = rng.random_range(2.5..4.0);
            let height = rng.random_range(3.0..8.0);
            let c = p + left * (side * (9.0 + depth)) + Vec3::new(0.0, 0.0, ground + height);
            let hue = (k as f64 * 0.37 + if side > 0.0 { 0.2 } else { 0.0 }) % 1.0;
            let rgb = [0.5 + 0.4 * hue, 0.55, 0.8 - 0.4 * hue];
            box_shell(&mut gs, c + offset, Vec3::new(4.5, depth, height), &rot, pitch, rgb, &mut rng);
        }
    }
    let mut scene = SplatScene::new(gs, 0);
    scene.source_path = format!("fixture:{kind:?}");
    scene
}

/// Box car centered on its body box, x forward, z up.
pub fn car_splat(rgb: [f64; 3], half_extents: Vec3, floaters: usize, seed: u64) -> SplatScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gs = Vec::new();
    box_shell(&mut gs, Vec3::zeros(), half_extents, &Quat::identity(), 0.25, rgb, &mut rng);
    let glass = Vec3::new(half_extents.x * 0.4, half_extents.y * 0.9, half_extents.z * 0.3);
    box_shell(
        &mut gs,
        Vec3::new(-0.2, 0.0, half_extents.z + glass.z * 0.5),
        glass,
        &Quat::identity(),
        0.25,
        [0.15, 0.2, 0.25],
        &mut rng,
    );
    for _ in 0..floaters {
        let p = Vec3::new(
            rng.random_range(-15.0..15.0),
            rng.random_range(-15.0..15.0),
            rng.random_range(3.0..10.0),
        );
        gs.push(splat(p, [0.4; 3], &Quat::identity(), [0.9, 0.9, 0.95], 0.4));
    }
    SplatScene::new(gs, 0)
}

/// Crop box that keeps the car body and drops the floaters.
pub fn car_crop(half_extents: Vec3) -> Aabb {
    let h = half_extents * 1.1;
    Aabb::new([-h.x, -h.y, -h.z], [h.x, h.y, h.z * 2.0])
}

pub fn fixture(kind: FixtureKind, density: f64, car_half_extents: Vec3) -> Fixture {
    Fixture {
        kind,
        poses: fixture_poses(kind),
        env: fixture_environment(kind, density),
        ego: car_splat([0.8, 0.15, 0.12], car_half_extents, 40, 21),
        agent: car_splat([0.15, 0.3, 0.8], car_half_extents, 0, 22),
        ego_crop: car_crop(car_half_extents),
    }
}
