//! Reference implementations the library is checked against. Each one is
//! written from the definitions, deliberately slow, and shares no code with
//! the module it checks.
#![allow(dead_code)]

use nalgebra::{Isometry3, Matrix3, Point3, Translation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use std::sync::Arc;

use serde_json::{json, Value};
use splatdrive::env::{ScenarioConfig, World};
use splatdrive::geom::{Obb, Vec3};
use splatdrive::spline::RoadSpline;
use splatdrive::track::{place_blocks, Track, TrackConfig};
use splatdrive::proto::{Frame, FrameDecoder, Session};
use splatdrive::render::{PinholeCamera, RenderOptions};
use splatdrive::sh::eval_sh;
use splatdrive::splat::{Gaussian, SplatScene};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_rotation(r: &mut impl Rng) -> UnitQuaternion<f64> {
    UnitQuaternion::from_euler_angles(
        r.random_range(-3.2..3.2),
        r.random_range(-1.6..1.6),
        r.random_range(-3.2..3.2),
    )
}

/// Gaussians scattered in front of a camera at the origin looking along +z.
pub fn random_scene(r: &mut impl Rng, n: usize, sh_degree: u8) -> SplatScene {
    let gs = (0..n)
        .map(|_| {
            let q = random_rotation(r);
            let mut g = Gaussian {
                mean: [
                    r.random_range(-2.5..2.5),
                    r.random_range(-2.0..2.0),
                    r.random_range(1.0..8.0),
                ],
                scale_log: [
                    r.random_range(-3.0f32..-0.8),
                    r.random_range(-3.0f32..-0.8),
                    r.random_range(-3.0f32..-0.8),
                ],
                rotation: [q.w as f32, q.i as f32, q.j as f32, q.k as f32],
                opacity_logit: r.random_range(-2.0..4.0),
                ..Default::default()
            };
            for c in g.sh.iter_mut().take((sh_degree as usize + 1).pow(2)) {
                *c = [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
            }
            g.sh[0] = [r.random_range(-1.5..1.5), r.random_range(-1.5..1.5), r.random_range(-1.5..1.5)];
            g
        })
        .collect();
    SplatScene::new(gs, sh_degree)
}

pub fn forward_camera(w: u32, h: u32) -> PinholeCamera {
    PinholeCamera::from_fov(w, h, 70f64.to_radians(), Isometry3::identity())
}

/// Per-pixel brute force: every gaussian is tested at every pixel, with no
/// tiles and no bounding boxes. Returns clamped RGB and final transmittance.
pub fn brute_force_render(
    scenes: &[SplatScene],
    cam: &PinholeCamera,
    bg: [f64; 3],
    opts: &RenderOptions,
) -> (Vec<[f64; 3]>, Vec<f64>) {
    struct P {
        depth: f64,
        key: (usize, usize),
        mean: [f64; 2],
        inv: [f64; 3],
        color: [f64; 3],
        opacity: f64,
    }
    let view = cam.world_from_camera.inverse();
    let mut ps: Vec<P> = Vec::new();
    for (si, sc) in scenes.iter().enumerate() {
        for (gi, g) in sc.gaussians.iter().enumerate() {
            let mw = sc.local_to_world * Point3::new(g.mean[0] as f64, g.mean[1] as f64, g.mean[2] as f64);
            let pc = view * mw;
            if pc.z <= cam.near {
                continue;
            }
            let [qw, qx, qy, qz] = g.rotation.map(|v| v as f64);
            let q = UnitQuaternion::new_normalize(nalgebra::Quaternion::new(qw, qx, qy, qz));
            let rot = (view.rotation * sc.local_to_world.rotation * q).to_rotation_matrix().into_inner();
            let s2 = Matrix3::from_diagonal(&Vector3::from_fn(|i, _| (2.0 * g.scale_log[i] as f64).exp()));
            let sigma = rot * s2 * rot.transpose();
            // clamp the Jacobian's evaluation point to 1.3× the half-fov
            let cx = (pc.x / pc.z).clamp(-1.3 * cam.cx / cam.fx, 1.3 * cam.cx / cam.fx);
            let cy = (pc.y / pc.z).clamp(-1.3 * cam.cy / cam.fy, 1.3 * cam.cy / cam.fy);
            let jr0 = Vector3::new(cam.fx / pc.z, 0.0, -cam.fx * cx / pc.z);
            let jr1 = Vector3::new(0.0, cam.fy / pc.z, -cam.fy * cy / pc.z);
            let a = jr0.dot(&(sigma * jr0)) + opts.low_pass;
            let b = jr0.dot(&(sigma * jr1));
            let c = jr1.dot(&(sigma * jr1)) + opts.low_pass;
            let det = a * c - b * b;
            if det <= 0.0 {
                continue;
            }
            let dir = (mw.coords - cam.world_from_camera.translation.vector).normalize();
            let local = sc.local_to_world.rotation.inverse() * dir;
            let n = (sc.sh_degree as usize + 1).pow(2);
            let color = eval_sh(&g.sh[..n], &local, sc.sh_degree).unwrap();
            ps.push(P {
                depth: pc.z,
                key: (si, gi),
                mean: [cam.fx * pc.x / pc.z + cam.cx, cam.fy * pc.y / pc.z + cam.cy],
                inv: [c / det, -b / det, a / det],
                color,
                opacity: 1.0 / (1.0 + (-(g.opacity_logit as f64)).exp()),
            });
        }
    }
    ps.sort_by(|x, y| x.depth.total_cmp(&y.depth).then(x.key.cmp(&y.key)));
    let cut = opts.cutoff_sigma * opts.cutoff_sigma;
    let mut rgb = Vec::new();
    let mut trans = Vec::new();
    for py in 0..cam.height {
        for px in 0..cam.width {
            let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
            let mut t = 1.0;
            let mut acc = [0.0; 3];
            for p in &ps {
                let (dx, dy) = (x - p.mean[0], y - p.mean[1]);
                let m = p.inv[0] * dx * dx + 2.0 * p.inv[1] * dx * dy + p.inv[2] * dy * dy;
                if m > cut {
                    continue;
                }
                let alpha = p.opacity * (-0.5 * m).exp();
                for k in 0..3 {
                    acc[k] += alpha * t * p.color[k];
                }
                t *= 1.0 - alpha;
                if t < opts.min_transmittance {
                    break;
                }
            }
            rgb.push(std::array::from_fn(|k| (acc[k] + t * bg[k]).clamp(0.0, 1.0)));
            trans.push(t);
        }
    }
    (rgb, trans)
}

/// Analytic screen footprint of an isotropic gaussian of std `sigma` at depth
/// `z` on the optical axis: std `f·sigma/z` pixels before low-pass.
pub fn isotropic_footprint_var(f: f64, sigma: f64, z: f64, low_pass: f64) -> f64 {
    (f * sigma / z).powi(2) + low_pass
}

// ---------------------------------------------------------------------------
// Tracks

/// Random planar drive: a heading random walk with z up, 2 m between knots.
pub fn random_drive(r: &mut impl Rng, knots: usize) -> RoadSpline {
    let mut p = Vec3::new(r.random_range(-50.0..50.0), r.random_range(-50.0..50.0), r.random_range(-2.0..2.0));
    let mut heading: f64 = r.random_range(-3.0..3.0);
    let mut pts = Vec::new();
    for _ in 0..knots {
        pts.push(p);
        heading += r.random_range(-0.25..0.25);
        p += Vec3::new(heading.cos(), heading.sin(), 0.0) * 2.0;
    }
    RoadSpline::from_knots(&pts, &vec![Vec3::z(); knots]).unwrap()
}

pub fn random_track(seed: u64) -> (Track, f64) {
    let mut r = rng(seed);
    let n = r.random_range(4..40);
    let spline = random_drive(&mut r, n);
    let cfg = TrackConfig {
        spacing: r.random_range(0.3..4.0),
        ..Default::default()
    };
    let h = r.random_range(1.0..2.5);
    (place_blocks(&spline, &cfg, r.random_range(1.5..2.2), h).unwrap(), h)
}

// ---------------------------------------------------------------------------
// Box overlap

fn project_onto(b: &Obb, p: &Vector3<f64>) -> Vector3<f64> {
    let inv = b.rotation.inverse();
    let l = inv * (p - b.center);
    let c = Vector3::from_fn(|i, _| l[i].clamp(-b.half_extents[i], b.half_extents[i]));
    b.rotation * c + b.center
}

/// Euclidean distance between two boxes via Dykstra's alternating
/// projections (converges to the closest pair for convex sets).
pub fn box_distance(a: &Obb, b: &Obb) -> f64 {
    let mut x = a.center;
    let mut p = Vector3::zeros();
    let mut q = Vector3::zeros();
    for _ in 0..4000 {
        let y = project_onto(b, &(x + p));
        p += x - y;
        let nx = project_onto(a, &(y + q));
        q += y - nx;
        x = nx;
    }
    let y = project_onto(b, &x);
    (x - y).norm()
}

pub fn shrunk(b: &Obb, by: f64) -> Obb {
    Obb::new(b.center, b.half_extents.map(|h| (h - by).max(0.0)), b.rotation)
}

/// `Some(true)` when the boxes overlap with at least `margin` to spare,
/// `Some(false)` when they are more than `margin` apart, `None` in between.
pub fn overlap_oracle(a: &Obb, b: &Obb, margin: f64) -> Option<bool> {
    if box_distance(a, b) > margin {
        return Some(false);
    }
    if box_distance(&shrunk(a, margin), &shrunk(b, margin)) < 1e-9 {
        return Some(true);
    }
    None
}

/// Monte-Carlo witness: a sampled point of `a` that lies inside `b`.
pub fn mc_common_point(a: &Obb, b: &Obb, samples: usize, r: &mut impl Rng) -> bool {
    (0..samples).any(|_| {
        let l = Vector3::from_fn(|i, _| r.random_range(-1.0..1.0) * a.half_extents[i]);
        let p = a.rotation * l + a.center;
        let q = b.rotation.inverse() * (p - b.center);
        (0..3).all(|i| q[i].abs() <= b.half_extents[i])
    })
}

pub fn random_box(r: &mut impl Rng, spread: f64) -> Obb {
    Obb::new(
        Vector3::from_fn(|_, _| r.random_range(-spread..spread)),
        Vector3::from_fn(|_, _| r.random_range(0.1..1.5)),
        random_rotation(r),
    )
}

pub fn isometry(r: &mut impl Rng) -> Isometry3<f64> {
    Isometry3::from_parts(
        Translation3::new(r.random_range(-5.0..5.0), r.random_range(-5.0..5.0), r.random_range(-5.0..5.0)),
        random_rotation(r),
    )
}

// ---------------------------------------------------------------------------
// Advantage estimation and the PPO loss

/// `A_t = Σ_k (γλ)^k δ_{t+k}`, summed explicitly and stopped at the first done.
pub fn gae_oracle(rewards: &[f64], values: &[f64], dones: &[bool], bootstrap: f64, gamma: f64, lam: f64) -> Vec<f64> {
    let n = rewards.len();
    let v = |i: usize| if i < n { values[i] } else { bootstrap };
    (0..n)
        .map(|t| {
            let mut sum = 0.0;
            let mut w = 1.0;
            for k in t..n {
                let next = if dones[k] { 0.0 } else { v(k + 1) };
                sum += w * (rewards[k] + gamma * next - values[k]);
                if dones[k] {
                    break;
                }
                w *= gamma * lam;
            }
            sum
        })
        .collect()
}

/// Plain discounted return minus value, no λ and no dones.
pub fn discounted_return_minus_value(rewards: &[f64], values: &[f64], bootstrap: f64, gamma: f64) -> Vec<f64> {
    let n = rewards.len();
    (0..n)
        .map(|t| {
            let mut g = 0.0;
            for k in t..n {
                g += gamma.powi((k - t) as i32) * rewards[k];
            }
            g += gamma.powi((n - t) as i32) * bootstrap;
            g - values[t]
        })
        .collect()
}

/// Tanh MLP over the documented flat layout (row-major weights, then bias).
pub fn mlp(sizes: &[usize], theta: &[f64], x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    let mut off = 0;
    for (k, w) in sizes.windows(2).enumerate() {
        let mut out = vec![0.0; w[1]];
        for (j, o) in out.iter_mut().enumerate() {
            let mut z = theta[off + w[0] * w[1] + j];
            for i in 0..w[0] {
                z += theta[off + j * w[0] + i] * h[i];
            }
            *o = if k + 2 == sizes.len() { z } else { z.tanh() };
        }
        off += w[0] * w[1] + w[1];
        h = out;
    }
    h
}

pub struct LossInputs<'a> {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub hidden: &'a [usize],
    pub obs: &'a [f64],
    pub actions: &'a [f64],
    pub old_log_probs: &'a [f64],
    pub advantages: &'a [f64],
    pub returns: &'a [f64],
    pub clip: Option<f64>,
    pub value_coef: f64,
    pub entropy_coef: f64,
}

/// Total PPO loss `−mean(surrogate) + c_v·mean((V−R)²) − c_e·H` for the flat
/// parameter vector `[policy | log_std | value]`.
pub fn ppo_loss(inp: &LossInputs, theta: &[f64]) -> f64 {
    let mut ps = vec![inp.obs_dim];
    ps.extend_from_slice(inp.hidden);
    ps.push(inp.act_dim);
    let mut vs = vec![inp.obs_dim];
    vs.extend_from_slice(inp.hidden);
    vs.push(1);
    let count = |s: &[usize]| s.windows(2).map(|w| w[0] * w[1] + w[1]).sum::<usize>();
    let pl = count(&ps);
    let log_std = &theta[pl..pl + inp.act_dim];
    let vtheta = &theta[pl + inp.act_dim..];
    let n = inp.returns.len();
    let (mut surr, mut vloss) = (0.0, 0.0);
    for t in 0..n {
        let o = &inp.obs[t * inp.obs_dim..(t + 1) * inp.obs_dim];
        let a = &inp.actions[t * inp.act_dim..(t + 1) * inp.act_dim];
        let mean: Vec<f64> = mlp(&ps, &theta[..pl], o).iter().map(|z| z.tanh()).collect();
        let mut lp = 0.0;
        for d in 0..inp.act_dim {
            let sd = log_std[d].exp();
            let z = (a[d] - mean[d]) / sd;
            lp += -0.5 * z * z - log_std[d] - 0.5 * (2.0 * std::f64::consts::PI).ln();
        }
        let ratio = (lp - inp.old_log_probs[t]).exp();
        let adv = inp.advantages[t];
        surr += match inp.clip {
            Some(e) => (ratio * adv).min(ratio.clamp(1.0 - e, 1.0 + e) * adv),
            None => ratio * adv,
        };
        let v = mlp(&vs, vtheta, o)[0];
        vloss += (v - inp.returns[t]).powi(2);
    }
    let entropy: f64 = log_std
        .iter()
        .map(|ls| ls + 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln())
        .sum();
    -surr / n as f64 + inp.value_coef * vloss / n as f64 - inp.entropy_coef * entropy
}

pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut p = x.to_vec();
            p[i] += h;
            let mut m = x.to_vec();
            m[i] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}

pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Protocol fuzzing

/// Random messages near the valid grammar, so the fuzzer gets past the
/// JSON parser and exercises the handlers.
pub fn plausible_message(r: &mut impl Rng) -> Vec<u8> {
    let kinds = ["hello", "reset", "step", "render", "close", "nope", ""];
    let kind = kinds[r.random_range(0..kinds.len())];
    let junk = |r: &mut dyn rand::RngCore| -> Value {
        match r.random_range(0..6) {
            0 => Value::Null,
            1 => json!(r.random_range(-1e3..1e3)),
            2 => json!(r.random_range(0..3u64)),
            3 => json!("x"),
            4 => json!([1, 2]),
            _ => json!({"throttle": r.random_range(-3.0..3.0), "steer": r.random_range(-3.0..3.0)}),
        }
    };
    let mut m = json!({"type": kind});
    for key in ["version", "seed", "action", "extra"] {
        if r.random_bool(0.5) {
            m[key] = junk(r);
        }
    }
    if kind == "hello" && r.random_bool(0.7) {
        m["version"] = json!(1);
    }
    let mut bytes = serde_json::to_vec(&m).unwrap();
    if r.random_bool(0.2) && !bytes.is_empty() {
        let i = r.random_range(0..bytes.len());
        bytes[i] = r.random();
    }
    bytes
}

/// Every reply must be exactly one frame holding a JSON object with a type.
pub fn check_reply(raw: &[u8]) -> Result<(), String> {
    let mut d = FrameDecoder::default();
    d.push(raw);
    let Some(Frame::Payload(p)) = d.next_frame() else {
        return Err("reply is not one complete frame".into());
    };
    if d.buffered() != 0 {
        return Err("trailing bytes after reply frame".into());
    }
    let v: Value = serde_json::from_slice(&p).map_err(|e| e.to_string())?;
    if !v["type"].is_string() {
        return Err(format!("reply without type: {v}"));
    }
    Ok(())
}

#[derive(Debug, Default)]
pub struct FuzzStats {
    pub bytes: usize,
    pub sessions: usize,
    pub replies: usize,
}

/// Feeds `budget` bytes of raw noise, framed noise and near-valid messages
/// to fresh sessions, split at random points. A closed session is replaced.
pub fn fuzz_sessions(world: &Arc<World>, sc: &ScenarioConfig, budget: usize, seed: u64) -> Result<FuzzStats, String> {
    let mut r = rng(seed);
    let mut st = FuzzStats::default();
    let framed = |p: Vec<u8>| {
        let mut f = (p.len() as u32).to_be_bytes().to_vec();
        f.extend(p);
        f
    };
    while st.bytes < budget {
        let mut s = Session::new(world.clone(), sc.clone()).map_err(|e| e.to_string())?;
        st.sessions += 1;
        while !s.is_closed() && st.bytes < budget {
            let chunk = match r.random_range(0..4) {
                0 => (0..r.random_range(1..64)).map(|_| r.random()).collect::<Vec<u8>>(),
                1 => framed((0..r.random_range(0..200)).map(|_| r.random()).collect()),
                _ => framed(plausible_message(&mut r)),
            };
            st.bytes += chunk.len();
            let cut = r.random_range(0..=chunk.len());
            let mut out = s.feed(&chunk[..cut]);
            out.extend(s.feed(&chunk[cut..]));
            st.replies += out.len();
            for o in &out {
                check_reply(o)?;
            }
        }
    }
    Ok(st)
}

