//! Small vector and quaternion helpers shared by the forward and backward passes.
//!
//! Quaternions are stored as `Vector4` in `(w, x, y, z)` order.

use nalgebra::{Matrix3, Vector3, Vector4};

pub type Vec3 = Vector3<f64>;
pub type Quat = Vector4<f64>;
pub type Mat3 = Matrix3<f64>;

pub const IDENTITY_QUAT: Quat = Vector4::new(1.0, 0.0, 0.0, 0.0);

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Rotation matrix of a unit quaternion (the polynomial form; no normalization).
pub fn quat_to_mat(q: &Quat) -> Mat3 {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pulls a gradient on the matrix produced by [`quat_to_mat`] back to the quaternion.
pub fn quat_to_mat_backward(q: &Quat, g: &Mat3) -> Quat {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let dw = Matrix3::new(0.0, -2.0 * z, 2.0 * y, 2.0 * z, 0.0, -2.0 * x, -2.0 * y, 2.0 * x, 0.0);
    let dx = Matrix3::new(
        0.0,
        2.0 * y,
        2.0 * z,
        2.0 * y,
        -4.0 * x,
        -2.0 * w,
        2.0 * z,
        2.0 * w,
        -4.0 * x,
    );
    let dy = Matrix3::new(
        -4.0 * y,
        2.0 * x,
        2.0 * w,
        2.0 * x,
        0.0,
        2.0 * z,
        -2.0 * w,
        2.0 * z,
        -4.0 * y,
    );
    let dz = Matrix3::new(
        -4.0 * z,
        -2.0 * w,
        2.0 * x,
        2.0 * w,
        -4.0 * z,
        2.0 * y,
        2.0 * x,
        2.0 * y,
        0.0,
    );
    Vector4::new(
        g.component_mul(&dw).sum(),
        g.component_mul(&dx).sum(),
        g.component_mul(&dy).sum(),
        g.component_mul(&dz).sum(),
    )
}

/// Hamilton product `a ⊗ b`.
pub fn quat_mul(a: &Quat, b: &Quat) -> Quat {
    Vector4::new(
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    )
}

/// Gradients of `a ⊗ b` with respect to `a` and `b`.
pub fn quat_mul_backward(a: &Quat, b: &Quat, g: &Quat) -> (Quat, Quat) {
    // out = R(b) a = L(a) b
    let ga = Vector4::new(
        b[0] * g[0] + b[1] * g[1] + b[2] * g[2] + b[3] * g[3],
        -b[1] * g[0] + b[0] * g[1] - b[3] * g[2] + b[2] * g[3],
        -b[2] * g[0] + b[3] * g[1] + b[0] * g[2] - b[1] * g[3],
        -b[3] * g[0] - b[2] * g[1] + b[1] * g[2] + b[0] * g[3],
    );
    let gb = Vector4::new(
        a[0] * g[0] + a[1] * g[1] + a[2] * g[2] + a[3] * g[3],
        -a[1] * g[0] + a[0] * g[1] + a[3] * g[2] - a[2] * g[3],
        -a[2] * g[0] - a[3] * g[1] + a[0] * g[2] + a[1] * g[3],
        -a[3] * g[0] + a[2] * g[1] - a[1] * g[2] + a[0] * g[3],
    );
    (ga, gb)
}

/// Gradient of `v / |v|` given the upstream gradient on the normalized vector.
pub fn normalize_backward<const D: usize>(
    v: &nalgebra::SVector<f64, D>,
    g: &nalgebra::SVector<f64, D>,
) -> nalgebra::SVector<f64, D> {
    let norm = v.norm();
    let n = v / norm;
    (g - n * n.dot(g)) / norm
}

/// Quaternion for a rotation of `angle` radians about `axis`.
pub fn axis_angle(axis: &Vec3, angle: f64) -> Quat {
    let a = axis.normalize() * (0.5 * angle).sin();
    Vector4::new((0.5 * angle).cos(), a.x, a.y, a.z)
}

/// Unit quaternion of a proper rotation matrix.
pub fn mat_to_quat(m: &Mat3) -> Quat {
    let r = nalgebra::Rotation3::from_matrix_unchecked(*m);
    let q = nalgebra::UnitQuaternion::from_rotation_matrix(&r);
    Vector4::new(q.w, q.i, q.j, q.k)
}

/// Rotation whose third column is `normal`, with an arbitrary tangent pair.
pub fn orientation_from_normal(normal: &Vec3) -> Quat {
    let n = normal.normalize();
    let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let a = (helper - n * n.dot(&helper)).normalize();
    let b = n.cross(&a);
    mat_to_quat(&Mat3::from_columns(&[a, b, n]))
}
