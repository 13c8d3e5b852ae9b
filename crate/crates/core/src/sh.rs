//! Real spherical-harmonic color evaluation, degrees 0 through 3, with the
//! sign conventions of the reference 3DGS implementation.

use crate::geom::Vec3;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
pub const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("SH degree {requested} needs {needed} coefficients, only {stored} stored")]
pub struct InvalidDegree {
    pub requested: u8,
    pub needed: usize,
    pub stored: usize,
}

/// Basis function values for all 16 coefficients at a unit direction.
pub fn sh_basis(dir: &Vec3) -> [f64; 16] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    [
        SH_C0,
        -SH_C1 * y,
        SH_C1 * z,
        -SH_C1 * x,
        SH_C2[0] * xy,
        SH_C2[1] * yz,
        SH_C2[2] * (2.0 * zz - xx - yy),
        SH_C2[3] * xz,
        SH_C2[4] * (xx - yy),
        SH_C3[0] * y * (3.0 * xx - yy),
        SH_C3[1] * xy * z,
        SH_C3[2] * y * (4.0 * zz - xx - yy),
        SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
        SH_C3[4] * x * (4.0 * zz - xx - yy),
        SH_C3[5] * z * (xx - yy),
        SH_C3[6] * x * (xx - 3.0 * yy),
    ]
}

/// `clamp(0.5 + Σ basis · coeff, 0, 1)` per channel, using the first
/// `(degree + 1)²` coefficients of `coeffs`.
pub fn eval_sh(coeffs: &[[f32; 3]], dir: &Vec3, degree: u8) -> Result<[f64; 3], InvalidDegree> {
    let needed = (degree as usize + 1).pow(2);
    if degree > 3 || coeffs.len() < needed {
        return Err(InvalidDegree {
            requested: degree,
            needed,
            stored: coeffs.len(),
        });
    }
    let basis = sh_basis(dir);
    let mut rgb = [0.5f64; 3];
    for (b, c) in basis.iter().zip(coeffs).take(needed) {
        for ch in 0..3 {
            rgb[ch] += b * c[ch] as f64;
        }
    }
    Ok(rgb.map(|v| v.clamp(0.0, 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_coefficients_are_mid_gray() {
        let c = [[0.0f32; 3]; 16];
        assert_eq!(eval_sh(&c, &Vec3::z(), 3).unwrap(), [0.5; 3]);
    }

    #[test]
    fn dc_term_uses_c0() {
        let mut c = [[0.0f32; 3]; 1];
        c[0] = [1.0, 0.0, 0.0];
        let rgb = eval_sh(&c, &Vec3::x(), 0).unwrap();
        assert!((rgb[0] - (0.5 + 0.282_094_79)).abs() < 1e-8);
        assert_eq!(rgb[1], 0.5);
    }

    #[test]
    fn degree_beyond_storage_rejected() {
        let c = [[0.0f32; 3]; 4];
        assert!(eval_sh(&c, &Vec3::x(), 2).is_err());
        assert!(eval_sh(&c, &Vec3::x(), 1).is_ok());
    }

    #[test]
    fn degree_one_is_odd() {
        let mut c = [[0.0f32; 3]; 4];
        c[0] = [0.3, 0.1, -0.2];
        c[2] = [0.2, -0.1, 0.05];
        let a = eval_sh(&c, &Vec3::z(), 1).unwrap();
        let b = eval_sh(&c, &-Vec3::z(), 1).unwrap();
        let dc = eval_sh(&c[..1], &Vec3::z(), 0).unwrap();
        for ch in 0..3 {
            assert!(((a[ch] - dc[ch]) + (b[ch] - dc[ch])).abs() < 1e-12);
        }
    }
}
