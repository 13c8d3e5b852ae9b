mod common;

use common::*;
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::Rng;
use splatdrive::ply::{decode_splat_ply, encode_splat_ply, load_splat_ply, save_splat_ply};
use splatdrive::pose::{normalize_scene, parse_pose_json_str, to_manifest, CameraPose, PoseSet, UpConvention};
use splatdrive::splat::{Aabb, RigidTransform, SplatScene};

fn encode(scene: &SplatScene) -> Vec<u8> {
    let mut buf = Vec::new();
    encode_splat_ply(scene, &mut buf).unwrap();
    buf
}

#[test]
fn hundred_thousand_splats_round_trip_bit_exact() {
    let mut r = rng(1);
    let scene = random_scene(&mut r, 100_000, 3);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("big.ply");
    let t0 = std::time::Instant::now();
    save_splat_ply(&scene, &p).unwrap();
    let back = load_splat_ply(&p).unwrap();
    let elapsed = t0.elapsed();
    assert_eq!(back.sh_degree, 3);
    assert_eq!(back.len(), scene.len());
    for (a, b) in scene.gaussians.iter().zip(back.gaussians.iter()) {
        assert_eq!(a.mean.map(f32::to_bits), b.mean.map(f32::to_bits));
        assert_eq!(a.scale_log.map(f32::to_bits), b.scale_log.map(f32::to_bits));
        assert_eq!(a.opacity_logit.to_bits(), b.opacity_logit.to_bits());
        assert_eq!(a.sh, b.sh);
    }
    assert!(elapsed.as_secs_f64() < 10.0, "{elapsed:?}");
}

#[test]
fn truncated_file_is_an_error() {
    let mut r = rng(2);
    let bytes = encode(&random_scene(&mut r, 10, 1));
    assert!(decode_splat_ply(&bytes[..bytes.len() - 7]).is_err());
}

#[test]
fn normalization_moves_first_camera_to_origin() {
    let mut r = rng(3);
    let scene = random_scene(&mut r, 50, 0);
    let poses = PoseSet::new(
        (0..5)
            .map(|i| CameraPose::new(Vector3::new(10.0 + i as f64, -4.0, 2.0), random_rotation(&mut r), format!("{i}"), i))
            .collect(),
    );
    let (s2, p2) = normalize_scene(&scene, &poses).unwrap();
    assert!(p2.poses[0].position.norm() < 1e-12);
    let shift = -poses.poses[0].position;
    let before: Vec<_> = scene.world_means().collect();
    for (a, b) in before.iter().zip(s2.world_means()) {
        assert!((a + shift - b).norm() < 1e-5);
    }
}

#[test]
fn gravity_has_configured_magnitude() {
    let mut r = rng(4);
    for conv in [UpConvention::CameraZUp, UpConvention::CameraNegYUp] {
        let poses = PoseSet::new(vec![CameraPose::new(Vector3::zeros(), random_rotation(&mut r), "a", 0)])
            .with_up_convention(conv)
            .derive_gravity(9.81)
            .unwrap();
        let g = poses.gravity.unwrap();
        assert!((g.norm() - 9.81).abs() < 1e-9);
        assert!((g.normalize() + poses.poses[0].up_axis).norm() < 1e-9);
    }
}

#[test]
fn manifest_round_trip() {
    let mut r = rng(5);
    let poses = PoseSet::new(
        (0..6)
            .map(|i| CameraPose::new(Vector3::new(i as f64, 0.5, 0.0), random_rotation(&mut r), format!("img{i}"), i))
            .collect(),
    );
    let text = serde_json::to_string(&to_manifest(&poses)).unwrap();
    let back = parse_pose_json_str(&text).unwrap();
    for (a, b) in poses.poses.iter().zip(&back.poses) {
        assert_eq!(a.label, b.label);
        assert!((a.position - b.position).norm() < 1e-12);
        assert!(a.rotation.angle_to(&b.rotation) < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ply_round_trip_any_degree(seed in 0u64..1_000_000, n in 1usize..60, deg in 0u8..=3) {
        let mut r = rng(seed);
        let scene = random_scene(&mut r, n, deg);
        let back = decode_splat_ply(&encode(&scene)).unwrap();
        prop_assert_eq!(back.sh_degree, deg);
        let k = (deg as usize + 1).pow(2);
        for (a, b) in scene.gaussians.iter().zip(back.gaussians.iter()) {
            prop_assert_eq!(a.mean, b.mean);
            prop_assert_eq!(&a.sh[..k], &b.sh[..k]);
        }
    }

    #[test]
    fn crop_keeps_exactly_the_inside(seed in 0u64..1_000_000) {
        let mut r = rng(seed);
        let scene = random_scene(&mut r, 200, 0);
        let lo = [r.random_range(-3.0..0.0), r.random_range(-3.0..0.0), r.random_range(0.0..4.0)];
        let b = Aabb::new(lo, [lo[0] + 2.0, lo[1] + 2.5, lo[2] + 3.0]);
        let kept = scene.crop(&b);
        let inside = scene.world_means().filter(|m| b.contains(m)).count();
        prop_assert_eq!(kept.len(), inside);
        prop_assert!(kept.world_means().all(|m| b.contains(&m)));
    }

    #[test]
    fn rigid_transform_preserves_pairwise_distances(seed in 0u64..1_000_000) {
        let mut r = rng(seed);
        let scene = random_scene(&mut r, 20, 0);
        let moved = scene.apply_rigid_transform(&RigidTransform::from_isometry(&isometry(&mut r))).unwrap();
        let a: Vec<_> = scene.world_means().collect();
        let b: Vec<_> = moved.world_means().collect();
        for i in 0..a.len() {
            for j in 0..i {
                prop_assert!(((a[i] - a[j]).norm() - (b[i] - b[j]).norm()).abs() < 1e-4);
            }
        }
    }
}
