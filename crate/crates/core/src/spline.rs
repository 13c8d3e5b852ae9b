//! Centripetal Catmull-Rom road spline over camera positions, parameterized
//! by arc length.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{orthonormalize_against, slerp_unit, Vec3};
use crate::pose::PoseSet;

#[derive(Debug, Error, PartialEq)]
pub enum SplineError {
    #[error("a spline needs at least 2 distinct knots, got {0}")]
    TooFewKnots(usize),
    #[error("arc length {s} outside [0, {length}]")]
    OutOfRange { s: f64, length: f64 },
}

/// How the up vector between two knots is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpMode {
    /// Spherical interpolation of the two bracketing knot ups.
    #[default]
    Slerp,
    /// Up of the nearest knot in parameter space.
    Nearest,
}

/// Centripetal exponent.
const ALPHA: f64 = 0.5;
/// Relative chord tolerance for the arc table.
const CHORD_TOL: f64 = 1e-4;
const MAX_DEPTH: u32 = 24;
const MERGE_EPS: f64 = 1e-9;

// 5-point Gauss-Legendre on [-1, 1].
const GL_X: [f64; 5] = [
    0.0,
    -0.538_469_310_105_683_1,
    0.538_469_310_105_683_1,
    -0.906_179_845_938_664,
    0.906_179_845_938_664,
];
const GL_W: [f64; 5] = [
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
    0.236_926_885_056_189_1,
];

/// Sample of the spline at an arc position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplineSample {
    pub position: Vec3,
    pub tangent: Vec3,
    pub up: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadSpline {
    pub knots: Vec<Vec3>,
    pub knot_ups: Vec<Vec3>,
    /// `(u, s)` breakpoints; `u` is the global curve parameter (knot `i` at
    /// `u = i`), `s` the arc length. Strictly increasing in both.
    pub arc_table: Vec<(f64, f64)>,
    pub up_mode: UpMode,
    pub warnings: Vec<String>,
}

impl RoadSpline {
    /// Builds the spline through the pose positions in order; each pose's up
    /// axis becomes the knot up.
    pub fn from_poses(poses: &PoseSet) -> Result<Self, SplineError> {
        let knots: Vec<Vec3> = poses.poses.iter().map(|p| p.position).collect();
        let ups: Vec<Vec3> = poses.poses.iter().map(|p| p.up_axis).collect();
        Self::from_knots(&knots, &ups)
    }

    pub fn from_knots(knots: &[Vec3], ups: &[Vec3]) -> Result<Self, SplineError> {
        assert_eq!(knots.len(), ups.len(), "one up vector per knot");
        let mut warnings = Vec::new();
        let mut k: Vec<Vec3> = Vec::with_capacity(knots.len());
        let mut u: Vec<Vec3> = Vec::with_capacity(knots.len());
        for (i, (p, up)) in knots.iter().zip(ups).enumerate() {
            if let Some(last) = k.last() {
                if (p - last).norm() < MERGE_EPS {
                    warnings.push(format!("knot {i} duplicates its predecessor and was merged"));
                    continue;
                }
            }
            k.push(*p);
            u.push(up.normalize());
        }
        if k.len() < 2 {
            return Err(SplineError::TooFewKnots(k.len()));
        }
        let mut spline = RoadSpline {
            knots: k,
            knot_ups: u,
            arc_table: Vec::new(),
            up_mode: UpMode::Slerp,
            warnings,
        };
        spline.build_arc_table();
        Ok(spline)
    }

    pub fn with_up_mode(mut self, mode: UpMode) -> Self {
        self.up_mode = mode;
        self
    }

    pub fn segment_count(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn total_length(&self) -> f64 {
        self.arc_table.last().map(|e| e.1).unwrap_or(0.0)
    }

    /// Arc length at which knot `i` is attained.
    pub fn knot_arc_length(&self, i: usize) -> f64 {
        let idx = self
            .arc_table
            .binary_search_by(|e| e.0.total_cmp(&(i as f64)))
            .expect("every knot is an arc-table breakpoint");
        self.arc_table[idx].1
    }

    fn point(&self, i: isize) -> Vec3 {
        let n = self.knots.len() as isize;
        if i < 0 {
            self.knots[0] * 2.0 - self.knots[1]
        } else if i >= n {
            self.knots[(n - 1) as usize] * 2.0 - self.knots[(n - 2) as usize]
        } else {
            self.knots[i as usize]
        }
    }

    fn split_u(&self, u: f64) -> (usize, f64) {
        let segs = self.segment_count();
        let u = u.clamp(0.0, segs as f64);
        let i = (u.floor() as usize).min(segs - 1);
        (i, u - i as f64)
    }

    /// Position and derivative with respect to `u`.
    pub fn eval_u(&self, u: f64) -> (Vec3, Vec3) {
        let (i, frac) = self.split_u(u);
        let i = i as isize;
        let p = [self.point(i - 1), self.point(i), self.point(i + 1), self.point(i + 2)];
        let t0 = 0.0;
        let t1 = t0 + (p[1] - p[0]).norm().powf(ALPHA);
        let t2 = t1 + (p[2] - p[1]).norm().powf(ALPHA);
        let t3 = t2 + (p[3] - p[2]).norm().powf(ALPHA);
        let t = t1 + frac * (t2 - t1);

        let lerp = |a: &Vec3, b: &Vec3, ta: f64, tb: f64| -> (Vec3, Vec3) {
            let d = tb - ta;
            (a * ((tb - t) / d) + b * ((t - ta) / d), (b - a) / d)
        };
        let (a1, da1) = lerp(&p[0], &p[1], t0, t1);
        let (a2, da2) = lerp(&p[1], &p[2], t1, t2);
        let (a3, da3) = lerp(&p[2], &p[3], t2, t3);
        let blend = |a: &Vec3, da: &Vec3, b: &Vec3, db: &Vec3, ta: f64, tb: f64| -> (Vec3, Vec3) {
            let d = tb - ta;
            let v = a * ((tb - t) / d) + b * ((t - ta) / d);
            let dv = (b - a) / d + da * ((tb - t) / d) + db * ((t - ta) / d);
            (v, dv)
        };
        let (b1, db1) = blend(&a1, &da1, &a2, &da2, t0, t2);
        let (b2, db2) = blend(&a2, &da2, &a3, &da3, t1, t3);
        let (c, dc) = blend(&b1, &db1, &b2, &db2, t1, t2);
        // exact knot positions at segment ends
        let c = if frac == 0.0 {
            p[1]
        } else if frac == 1.0 {
            p[2]
        } else {
            c
        };
        (c, dc * (t2 - t1))
    }

    fn speed(&self, u: f64) -> f64 {
        self.eval_u(u).1.norm()
    }

    /// Gauss-Legendre arc length between parameters within one segment.
    fn gl_length(&self, a: f64, b: f64) -> f64 {
        let h = 0.5 * (b - a);
        let m = 0.5 * (a + b);
        GL_X.iter()
            .zip(GL_W)
            .map(|(x, w)| w * self.speed(m + h * x))
            .sum::<f64>()
            * h
    }

    fn subdivide(&self, a: f64, b: f64, pa: &Vec3, pb: &Vec3, depth: u32, out: &mut Vec<f64>) {
        let m = 0.5 * (a + b);
        let pm = self.eval_u(m).0;
        let whole = (pb - pa).norm();
        let halves = (pm - pa).norm() + (pb - pm).norm();
        let converged = depth >= 2 && (halves - whole).abs() <= CHORD_TOL * halves;
        if converged || depth >= MAX_DEPTH {
            out.push(b);
        } else {
            self.subdivide(a, m, pa, &pm, depth + 1, out);
            self.subdivide(m, b, &pm, pb, depth + 1, out);
        }
    }

    fn build_arc_table(&mut self) {
        let mut us = vec![0.0];
        for i in 0..self.segment_count() {
            let a = i as f64;
            let b = a + 1.0;
            let pa = self.knots[i];
            let pb = self.knots[i + 1];
            self.subdivide(a, b, &pa, &pb, 0, &mut us);
        }
        let mut table = Vec::with_capacity(us.len());
        let mut s = 0.0;
        table.push((0.0, 0.0));
        for w in us.windows(2) {
            s += self.gl_length(w[0], w[1]);
            table.push((w[1], s));
        }
        self.arc_table = table;
    }

    fn check_s(&self, s: f64) -> Result<(), SplineError> {
        let length = self.total_length();
        if !(0.0..=length).contains(&s) {
            return Err(SplineError::OutOfRange { s, length });
        }
        Ok(())
    }

    /// Curve parameter at arc length `s` (clamped into range).
    pub fn s_to_u(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, self.total_length());
        let idx = self.arc_table.partition_point(|e| e.1 < s);
        if idx == 0 {
            return 0.0;
        }
        let (ub, sb) = self.arc_table[idx.min(self.arc_table.len() - 1)];
        if sb == s {
            return ub;
        }
        let (ua, sa) = self.arc_table[idx - 1];
        let mut u = ua + (s - sa) / (sb - sa) * (ub - ua);
        for _ in 0..12 {
            let f = sa + self.gl_length(ua, u) - s;
            let sp = self.speed(u).max(1e-12);
            let next = (u - f / sp).clamp(ua, ub);
            let done = (next - u).abs() < 1e-14;
            u = next;
            if done || f.abs() < 1e-13 {
                break;
            }
        }
        u
    }

    /// Arc length at curve parameter `u`.
    pub fn u_to_s(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, self.segment_count() as f64);
        let idx = self.arc_table.partition_point(|e| e.0 < u);
        if idx == 0 {
            return 0.0;
        }
        let (ub, sb) = self.arc_table[idx.min(self.arc_table.len() - 1)];
        if ub == u {
            return sb;
        }
        let (ua, sa) = self.arc_table[idx - 1];
        sa + self.gl_length(ua, u)
    }

    fn up_at_u(&self, u: f64, tangent: &Vec3) -> Vec3 {
        let (i, frac) = self.split_u(u);
        let raw = match self.up_mode {
            UpMode::Slerp => slerp_unit(&self.knot_ups[i], &self.knot_ups[i + 1], frac),
            UpMode::Nearest => {
                if frac < 0.5 {
                    self.knot_ups[i]
                } else {
                    self.knot_ups[i + 1]
                }
            }
        };
        orthonormalize_against(&raw, tangent, &self.knot_ups[i])
    }

    pub fn sample_u(&self, u: f64) -> SplineSample {
        let (position, d) = self.eval_u(u);
        let n = d.norm();
        let tangent = if n > 1e-12 {
            d / n
        } else {
            let (i, _) = self.split_u(u);
            (self.knots[i + 1] - self.knots[i]).normalize()
        };
        let up = self.up_at_u(u, &tangent);
        SplineSample {
            position,
            tangent,
            up,
        }
    }

    /// Position, unit tangent and up vector at arc length `s`.
    pub fn eval(&self, s: f64) -> Result<SplineSample, SplineError> {
        self.check_s(s)?;
        Ok(self.sample_u(self.s_to_u(s)))
    }

    /// Like [`eval`](Self::eval) with `s` clamped into range.
    pub fn eval_clamped(&self, s: f64) -> SplineSample {
        self.sample_u(self.s_to_u(s))
    }

    /// Arc length of the curve point closest to `p`, searched by Gauss-Newton
    /// from `hint_s`.
    pub fn project(&self, p: &Vec3, hint_s: f64) -> f64 {
        let max_u = self.segment_count() as f64;
        let mut u = self.s_to_u(hint_s);
        for _ in 0..16 {
            let (c, d) = self.eval_u(u);
            let dd = d.norm_squared();
            if dd < 1e-18 {
                break;
            }
            let step = (p - c).dot(&d) / dd;
            let step = step.clamp(-0.5, 0.5);
            let next = (u + step).clamp(0.0, max_u);
            if (next - u).abs() < 1e-12 {
                u = next;
                break;
            }
            u = next;
        }
        self.u_to_s(u)
    }
}

/// Free-function form of [`RoadSpline::from_poses`].
pub fn build_spline(poses: &PoseSet) -> Result<RoadSpline, SplineError> {
    RoadSpline::from_poses(poses)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line() -> RoadSpline {
        RoadSpline::from_knots(
            &[Vec3::zeros(), Vec3::new(10.0, 0.0, 0.0)],
            &[Vec3::z(), Vec3::z()],
        )
        .unwrap()
    }

    #[test]
    fn straight_line_midpoint() {
        let s = line();
        assert!((s.total_length() - 10.0).abs() < 1e-9);
        let m = s.eval(5.0).unwrap();
        assert!((m.position - Vec3::new(5.0, 0.0, 0.0)).norm() < 1e-6);
        assert!((m.tangent - Vec3::x()).norm() < 1e-9);
    }

    #[test]
    fn start_is_first_knot_with_first_up() {
        let s = line();
        let a = s.eval(0.0).unwrap();
        assert_eq!(a.position, Vec3::zeros());
        assert!((a.up - Vec3::z()).norm() < 1e-12);
    }

    #[test]
    fn out_of_range_rejected() {
        let s = line();
        assert!(matches!(s.eval(-0.1), Err(SplineError::OutOfRange { .. })));
        assert!(matches!(s.eval(10.5), Err(SplineError::OutOfRange { .. })));
    }

    #[test]
    fn too_few_knots_after_merge() {
        let r = RoadSpline::from_knots(&[Vec3::zeros(), Vec3::zeros()], &[Vec3::z(), Vec3::z()]);
        assert_eq!(r.unwrap_err(), SplineError::TooFewKnots(1));
        let r = RoadSpline::from_knots(
            &[Vec3::zeros(), Vec3::zeros(), Vec3::x()],
            &[Vec3::z(); 3],
        )
        .unwrap();
        assert_eq!(r.knots.len(), 2);
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn midpoint_up_is_orthogonalized_slerp() {
        let s = RoadSpline::from_knots(
            &[Vec3::zeros(), Vec3::new(10.0, 0.0, 0.0)],
            &[Vec3::z(), Vec3::x()],
        )
        .unwrap();
        let m = s.eval(s.total_length() / 2.0).unwrap();
        // slerp(z, x, 0.5) = (1,0,1)/√2; Gram-Schmidt against tangent x leaves z
        let raw = Vec3::new(1.0, 0.0, 1.0).normalize();
        let expect = (raw - m.tangent * raw.dot(&m.tangent)).normalize();
        assert!((m.up - expect).norm() < 1e-9);
        assert!(m.up.dot(&m.tangent).abs() < 1e-12);
    }

    #[test]
    fn projection_recovers_arc_position() {
        let k: Vec<Vec3> = (0..8)
            .map(|i| {
                let a = i as f64 * 0.3;
                Vec3::new(20.0 * a.cos(), 20.0 * a.sin(), 0.0)
            })
            .collect();
        let s = RoadSpline::from_knots(&k, &[Vec3::z(); 8]).unwrap();
        for target in [1.0, 7.5, 20.0, 33.3] {
            let p = s.eval(target).unwrap().position + Vec3::z() * 0.5;
            assert!((s.project(&p, target + 1.5) - target).abs() < 1e-6);
        }
    }
}
