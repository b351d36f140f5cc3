//! Real spherical-harmonic color evaluation up to degree 3.

use crate::math::Vec3;

pub const C0: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_9;
const C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

pub const MAX_DEGREE: usize = 3;

pub fn coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Basis values at unit direction `d`, and their gradients with respect to `d`.
pub fn basis(degree: usize, d: &Vec3, values: &mut [f64], grads: Option<&mut [Vec3]>) {
    let (x, y, z) = (d.x, d.y, d.z);
    let n = coeff_count(degree);
    let mut b = [0.0; 16];
    let mut g = [Vec3::zeros(); 16];
    b[0] = C0;
    if degree >= 1 {
        b[1] = -C1 * y;
        b[2] = C1 * z;
        b[3] = -C1 * x;
        g[1] = Vec3::new(0.0, -C1, 0.0);
        g[2] = Vec3::new(0.0, 0.0, C1);
        g[3] = Vec3::new(-C1, 0.0, 0.0);
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[4] = C2[0] * x * y;
        b[5] = C2[1] * y * z;
        b[6] = C2[2] * (2.0 * zz - xx - yy);
        b[7] = C2[3] * x * z;
        b[8] = C2[4] * (xx - yy);
        g[4] = C2[0] * Vec3::new(y, x, 0.0);
        g[5] = C2[1] * Vec3::new(0.0, z, y);
        g[6] = C2[2] * Vec3::new(-2.0 * x, -2.0 * y, 4.0 * z);
        g[7] = C2[3] * Vec3::new(z, 0.0, x);
        g[8] = C2[4] * Vec3::new(2.0 * x, -2.0 * y, 0.0);
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[9] = C3[0] * y * (3.0 * xx - yy);
        b[10] = C3[1] * x * y * z;
        b[11] = C3[2] * y * (4.0 * zz - xx - yy);
        b[12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
        b[13] = C3[4] * x * (4.0 * zz - xx - yy);
        b[14] = C3[5] * z * (xx - yy);
        b[15] = C3[6] * x * (xx - 3.0 * yy);
        g[9] = C3[0] * Vec3::new(6.0 * x * y, 3.0 * xx - 3.0 * yy, 0.0);
        g[10] = C3[1] * Vec3::new(y * z, x * z, x * y);
        g[11] = C3[2] * Vec3::new(-2.0 * x * y, 4.0 * zz - xx - 3.0 * yy, 8.0 * y * z);
        g[12] = C3[3] * Vec3::new(-6.0 * x * z, -6.0 * y * z, 6.0 * zz - 3.0 * xx - 3.0 * yy);
        g[13] = C3[4] * Vec3::new(4.0 * zz - 3.0 * xx - yy, -2.0 * x * y, 8.0 * x * z);
        g[14] = C3[5] * Vec3::new(2.0 * x * z, -2.0 * y * z, xx - yy);
        g[15] = C3[6] * Vec3::new(3.0 * xx - 3.0 * yy, -6.0 * x * y, 0.0);
    }
    values[..n].copy_from_slice(&b[..n]);
    if let Some(grads) = grads {
        grads[..n].copy_from_slice(&g[..n]);
    }
}

/// Unclamped color `Σ b_i · sh_i + 0.5`.
pub fn eval_color(degree: usize, coeffs: &[Vec3], dir: &Vec3) -> Vec3 {
    let mut b = [0.0; 16];
    basis(degree, dir, &mut b, None);
    coeffs
        .iter()
        .zip(b.iter())
        .fold(Vec3::repeat(0.5), |acc, (c, w)| acc + c * *w)
}

pub fn dc_from_color(color: &Vec3) -> Vec3 {
    (color - Vec3::repeat(0.5)) / C0
}
