//! Fixed-timestep vehicle dynamics: a rigid box body carried by four raycast
//! wheels, with oriented-box contact tests against walls, agents and the goal.
//!
//! Body frame: x forward, y left, z up. Wheel order is front-left,
//! front-right, rear-left, rear-right; the two front wheels steer.

use std::collections::BTreeSet;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Obb, Quat, Vec3};

pub const DEFAULT_DT: f64 = 0.02;

#[derive(Debug, Error, PartialEq)]
pub enum PhysicsError {
    #[error("simulation diverged: non-finite state at t = {0}")]
    SimulationDiverged(f64),
    #[error("step dt {got} differs from the world's fixed timestep {expected}")]
    TimestepMismatch { got: f64, expected: f64 },
    #[error("invalid vehicle config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WheelConfig {
    pub radius: f64,
    pub rest_length: f64,
    pub stiffness: f64,
    pub damping: f64,
    /// Suspension top mount points in the body frame.
    pub anchors: [Vec3; 4],
}

impl Default for WheelConfig {
    fn default() -> Self {
        Self {
            radius: 0.35,
            rest_length: 0.3,
            stiffness: 35_000.0,
            damping: 4_500.0,
            anchors: [
                Vec3::new(1.35, 0.8, -0.3),
                Vec3::new(1.35, -0.8, -0.3),
                Vec3::new(-1.35, 0.8, -0.3),
                Vec3::new(-1.35, -0.8, -0.3),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrictionConfig {
    pub longitudinal: f64,
    pub lateral: f64,
    /// Rolling resistance coefficient (force per unit normal load).
    pub rolling: f64,
}

impl Default for FrictionConfig {
    fn default() -> Self {
        Self {
            longitudinal: 1.0,
            lateral: 1.0,
            rolling: 0.015,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleConfig {
    pub mass: f64,
    pub motor_force: f64,
    pub brake_force: f64,
    /// Radians.
    pub max_steer: f64,
    /// Linear damping, 1/s.
    pub drag: f64,
    pub body_half_extents: Vec3,
    pub wheel: WheelConfig,
    pub friction: FrictionConfig,
}

impl Default for VehicleConfig {
    fn default() -> Self {
        Self {
            mass: 1500.0,
            motor_force: 2000.0,
            brake_force: 3000.0,
            max_steer: 30f64.to_radians(),
            drag: 0.05,
            body_half_extents: Vec3::new(2.25, 0.9, 0.75),
            wheel: WheelConfig::default(),
            friction: FrictionConfig::default(),
        }
    }
}

impl VehicleConfig {
    pub fn validate(&self) -> Result<(), PhysicsError> {
        let pos = [
            ("mass", self.mass),
            ("motor_force", self.motor_force),
            ("brake_force", self.brake_force),
            ("max_steer", self.max_steer),
            ("wheel.radius", self.wheel.radius),
            ("wheel.rest_length", self.wheel.rest_length),
            ("wheel.stiffness", self.wheel.stiffness),
            ("wheel.damping", self.wheel.damping),
            ("friction.longitudinal", self.friction.longitudinal),
            ("friction.lateral", self.friction.lateral),
        ];
        for (name, v) in pos {
            if !(v.is_finite() && v > 0.0) {
                return Err(PhysicsError::InvalidConfig(format!("{name} must be > 0")));
            }
        }
        if !(self.drag >= 0.0 && self.friction.rolling >= 0.0) {
            return Err(PhysicsError::InvalidConfig("drag and rolling must be >= 0".into()));
        }
        if self.max_steer >= std::f64::consts::FRAC_PI_2 {
            return Err(PhysicsError::InvalidConfig("max_steer must be < pi/2".into()));
        }
        if self.body_half_extents.iter().any(|h| !(*h > 0.0)) {
            return Err(PhysicsError::InvalidConfig("body_half_extents must be > 0".into()));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        2.0 * self.body_half_extents.y
    }

    pub fn height(&self) -> f64 {
        2.0 * self.body_half_extents.z
    }

    /// Per-wheel compression that balances gravity on flat ground.
    pub fn static_compression(&self, g: f64) -> f64 {
        (self.mass * g / (4.0 * self.wheel.stiffness)).min(self.wheel.rest_length)
    }

    /// Height of the body center above flat ground at static equilibrium.
    pub fn ride_height(&self, g: f64) -> f64 {
        let anchor_z = self.wheel.anchors.iter().map(|a| a.z).sum::<f64>() / 4.0;
        -anchor_z + self.wheel.rest_length - self.static_compression(g) + self.wheel.radius
    }

    fn inertia_body(&self) -> Matrix3<f64> {
        let d = self.body_half_extents * 2.0;
        let k = self.mass / 12.0;
        Matrix3::from_diagonal(&Vec3::new(
            k * (d.y * d.y + d.z * d.z),
            k * (d.x * d.x + d.z * d.z),
            k * (d.x * d.x + d.y * d.y),
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Controls {
    /// [-1, 1]; negative drives backwards.
    pub throttle: f64,
    /// [-1, 1]; positive steers left.
    pub steer: f64,
    /// [0, 1].
    pub brake: f64,
}

impl Controls {
    pub fn new(throttle: f64, steer: f64, brake: f64) -> Self {
        Self {
            throttle,
            steer,
            brake,
        }
    }

    /// Clamps into bounds; non-finite components become 0. Returns whether
    /// anything changed.
    pub fn clamped(&self) -> (Controls, bool) {
        let fix = |v: f64, lo: f64, hi: f64| if v.is_finite() { v.clamp(lo, hi) } else { 0.0 };
        let c = Controls {
            throttle: fix(self.throttle, -1.0, 1.0),
            steer: fix(self.steer, -1.0, 1.0),
            brake: fix(self.brake, 0.0, 1.0),
        };
        let changed = c.throttle.to_bits() != self.throttle.to_bits()
            || c.steer.to_bits() != self.steer.to_bits()
            || c.brake.to_bits() != self.brake.to_bits();
        (c, changed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub position: Vec3,
    pub orientation: Quat,
    pub linear_velocity: Vec3,
    pub angular_velocity: Vec3,
    pub wheel_compressions: [f64; 4],
    pub controls: Controls,
    /// Simulated seconds.
    pub time: f64,
}

impl VehicleState {
    pub fn at_rest(position: Vec3, orientation: Quat) -> Self {
        Self {
            position,
            orientation,
            linear_velocity: Vec3::zeros(),
            angular_velocity: Vec3::zeros(),
            wheel_compressions: [0.0; 4],
            controls: Controls::default(),
            time: 0.0,
        }
    }

    pub fn forward(&self) -> Vec3 {
        self.orientation * Vec3::x()
    }

    pub fn left(&self) -> Vec3 {
        self.orientation * Vec3::y()
    }

    pub fn up(&self) -> Vec3 {
        self.orientation * Vec3::z()
    }

    pub fn body_box(&self, cfg: &VehicleConfig) -> Obb {
        Obb::new(self.position, cfg.body_half_extents, self.orientation)
    }

    fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.linear_velocity.iter().all(|v| v.is_finite())
            && self.angular_velocity.iter().all(|v| v.is_finite())
            && self.orientation.coords.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactKind {
    Wall,
    Agent,
    Goal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactEvent {
    pub kind: ContactKind,
    pub other_id: usize,
    pub time: f64,
}

/// Colliders and gravity seen by one vehicle.
#[derive(Debug, Clone, Default)]
pub struct PhysicsWorld {
    pub gravity: Vec3,
    pub dt: f64,
    /// Surfaces the wheel rays can stand on.
    pub floors: Vec<Obb>,
    pub walls: Vec<Obb>,
    pub agents: Vec<Obb>,
    pub goal: Option<Obb>,
}

impl PhysicsWorld {
    pub fn empty(gravity: Vec3, dt: f64) -> Self {
        Self {
            gravity,
            dt,
            ..Default::default()
        }
    }
}

// ---------------------------------------------------------------------------
// Separating-axis test

fn projection_radius(b: &Obb, axes: &[Vec3; 3], l: &Vec3) -> f64 {
    b.half_extents.x * axes[0].dot(l).abs()
        + b.half_extents.y * axes[1].dot(l).abs()
        + b.half_extents.z * axes[2].dot(l).abs()
}

/// Minimum-penetration result of an overlapping box pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Penetration {
    /// Unit axis pointing from `a` towards `b`.
    pub axis: Vec3,
    pub depth: f64,
}

/// 15-axis separating-axis test. Touching boxes count as overlapping.
/// Returns the axis of least penetration when the boxes overlap.
pub fn sat_obb_penetration(a: &Obb, b: &Obb) -> Option<Penetration> {
    let aa = a.axes();
    let ba = b.axes();
    let t = b.center - a.center;
    let mut best: Option<Penetration> = None;
    let mut test = |l: Vec3| -> bool {
        let n2 = l.norm_squared();
        if n2 < 1e-12 {
            return true;
        }
        let l = l / n2.sqrt();
        let dist = t.dot(&l);
        let overlap = projection_radius(a, &aa, &l) + projection_radius(b, &ba, &l) - dist.abs();
        if overlap < 0.0 {
            return false;
        }
        if best.is_none_or(|p| overlap < p.depth) {
            let axis = if dist < 0.0 { -l } else { l };
            best = Some(Penetration {
                axis,
                depth: overlap,
            });
        }
        true
    };
    for ax in aa.iter().chain(ba.iter()) {
        if !test(*ax) {
            return None;
        }
    }
    for x in &aa {
        for y in &ba {
            if !test(x.cross(y)) {
                return None;
            }
        }
    }
    best
}

pub fn sat_obb_overlap(a: &Obb, b: &Obb) -> bool {
    let r = a.bounding_radius() + b.bounding_radius();
    if (b.center - a.center).norm_squared() > r * r {
        return false;
    }
    sat_obb_penetration(a, b).is_some()
}

// ---------------------------------------------------------------------------
// Wheels

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WheelForce {
    pub grounded: bool,
    pub compression: f64,
    /// World point the forces act at (the suspension mount).
    pub point: Vec3,
    pub suspension: Vec3,
    pub traction: Vec3,
}

impl WheelForce {
    pub fn total(&self) -> Vec3 {
        self.suspension + self.traction
    }
}

fn cast_down(floors: &[Obb], origin: &Vec3, dir: &Vec3, max_t: f64) -> Option<f64> {
    floors
        .iter()
        .filter(|f| f.may_hit_segment(origin, dir, max_t))
        .filter_map(|f| f.ray_hit(origin, dir, max_t))
        .min_by(f64::total_cmp)
}

/// Suspension and traction forces for the four wheels.
///
/// Each wheel casts a ray along `-body_up` from its mount. A hit within
/// `rest_length + radius` compresses the spring; the resulting normal load
/// bounds drive, brake, rolling and lateral friction forces.
pub fn wheel_update(
    state: &VehicleState,
    cfg: &VehicleConfig,
    floors: &[Obb],
    dt: f64,
) -> [WheelForce; 4] {
    let w = &cfg.wheel;
    let up = state.up();
    let down = -up;
    let body_fwd = state.forward();
    let (controls, _) = state.controls.clamped();
    let mass_share = cfg.mass / 4.0;
    let reach = w.rest_length + w.radius;
    let mut out = [WheelForce::default(); 4];
    for (i, anchor) in w.anchors.iter().enumerate() {
        let point = state.position + state.orientation * anchor;
        out[i].point = point;
        let Some(hit) = cast_down(floors, &point, &down, reach) else {
            continue;
        };
        let compression = (reach - hit).clamp(0.0, w.rest_length);
        let rate = (compression - state.wheel_compressions[i]) / dt;
        let load = (w.stiffness * compression + w.damping * rate).max(0.0);
        out[i].grounded = true;
        out[i].compression = compression;
        out[i].suspension = up * load;

        let steer = if i < 2 { controls.steer * cfg.max_steer } else { 0.0 };
        let heading = UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_unchecked(up), steer);
        let fwd = heading * body_fwd;
        let side = up.cross(&fwd);
        let vel = state.linear_velocity + state.angular_velocity.cross(&(point - state.position));
        let v_long = vel.dot(&fwd);
        let v_lat = vel.dot(&side);

        let stop = mass_share * v_long.abs() / dt;
        let resist = (controls.brake * cfg.brake_force / 4.0 + cfg.friction.rolling * load).min(stop);
        let drive = controls.throttle * cfg.motor_force / 4.0;
        let long_limit = cfg.friction.longitudinal * load;
        let f_long = (drive - resist * v_long.signum()).clamp(-long_limit, long_limit);
        let lat_limit = cfg.friction.lateral * load;
        let f_lat = (-v_lat * mass_share / dt).clamp(-lat_limit, lat_limit);
        out[i].traction = fwd * f_long + side * f_lat;
    }
    out
}

// ---------------------------------------------------------------------------
// Integration

/// Advances the vehicle by one fixed step.
///
/// Velocities are integrated first from gravity, wheel forces and linear drag;
/// the position then advances with the mean of the old and new velocity, which
/// is exact under constant acceleration. The orientation is integrated from the
/// updated angular velocity and renormalized. Wall overlaps are resolved by
/// pushing the body out along the least-penetration axis.
pub fn step_fixed(
    state: &VehicleState,
    cfg: &VehicleConfig,
    world: &PhysicsWorld,
    dt: f64,
) -> Result<(VehicleState, Vec<ContactEvent>), PhysicsError> {
    if dt != world.dt {
        return Err(PhysicsError::TimestepMismatch {
            got: dt,
            expected: world.dt,
        });
    }
    let wheels = wheel_update(state, cfg, &world.floors, dt);
    let mut force = Vec3::zeros();
    let mut torque = Vec3::zeros();
    for wf in &wheels {
        if wf.grounded {
            let f = wf.total();
            force += f;
            torque += (wf.point - state.position).cross(&f);
        }
    }
    let mut accel = world.gravity;
    if force != Vec3::zeros() {
        accel += force / cfg.mass;
    }
    if cfg.drag != 0.0 {
        accel -= state.linear_velocity * cfg.drag;
    }
    let v_new = state.linear_velocity + accel * dt;

    let rot = state.orientation.to_rotation_matrix();
    let inv_inertia = rot.matrix()
        * cfg.inertia_body().try_inverse().expect("positive inertia")
        * rot.matrix().transpose();
    let w_new = state.angular_velocity + inv_inertia * torque * dt;

    let mut next = state.clone();
    next.linear_velocity = v_new;
    next.angular_velocity = w_new;
    next.position = state.position + (state.linear_velocity + v_new) * (0.5 * dt);
    let q = state.orientation.quaternion();
    let omega = Quaternion::new(0.0, w_new.x, w_new.y, w_new.z);
    let dq = omega * q * (0.5 * dt);
    next.orientation = UnitQuaternion::new_normalize(q + dq);
    for (c, wf) in next.wheel_compressions.iter_mut().zip(&wheels) {
        *c = wf.compression;
    }
    next.time = state.time + dt;

    let mut seen = BTreeSet::new();
    let mut events = Vec::new();
    let mut emit = |kind, other_id, time| {
        if seen.insert((kind, other_id)) {
            events.push(ContactEvent {
                kind,
                other_id,
                time,
            });
        }
    };
    for (id, wall) in world.walls.iter().enumerate() {
        let body = next.body_box(cfg);
        let r = body.bounding_radius() + wall.bounding_radius();
        if (wall.center - body.center).norm_squared() > r * r {
            continue;
        }
        if let Some(p) = sat_obb_penetration(wall, &body) {
            next.position += p.axis * p.depth;
            let into = next.linear_velocity.dot(&p.axis);
            if into < 0.0 {
                next.linear_velocity -= p.axis * into;
            }
            emit(ContactKind::Wall, id, next.time);
        }
    }
    let body = next.body_box(cfg);
    for (id, agent) in world.agents.iter().enumerate() {
        if sat_obb_overlap(&body, agent) {
            emit(ContactKind::Agent, id, next.time);
        }
    }
    if let Some(goal) = &world.goal {
        if sat_obb_overlap(&body, goal) {
            emit(ContactKind::Goal, 0, next.time);
        }
    }
    if !next.is_finite() {
        return Err(PhysicsError::SimulationDiverged(next.time));
    }
    Ok((next, events))
}
