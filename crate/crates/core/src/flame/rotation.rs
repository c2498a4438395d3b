//! Rotation codecs: axis-angle (Rodrigues) with a small-angle series, the
//! continuous 6D representation decoded via Gram-Schmidt, and the
//! yaw-pitch-roll convention used by the motion metrics.

use crate::error::{Error, Result};
use crate::math::{cross3, dot3, mat_mul, normalize3, rot_x, rot_y, rot_z, scale3, sub3, Mat3, Vec3, IDENTITY3};

/// Below this rotation angle the Rodrigues coefficients switch to their
/// 2-term Taylor series to avoid dividing by a vanishing angle.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Axis-angle vector (angle = norm, axis = direction) to rotation matrix.
pub fn rodrigues(aa: Vec3) -> Mat3 {
    let theta2 = dot3(aa, aa);
    let theta = theta2.sqrt();
    // R = I + A*K + B*K^2 with K = skew(aa), A = sin(t)/t, B = (1-cos(t))/t^2
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    let (x, y, z) = (aa[0], aa[1], aa[2]);
    let k = [[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]];
    let k2 = mat_mul(&k, &k);
    let mut out = IDENTITY3;
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] += a * k[i][j] + b * k2[i][j];
        }
    }
    out
}

/// Rotation matrix to axis-angle (logarithm map).
pub fn log_rotation(r: &Mat3) -> Vec3 {
    let trace = r[0][0] + r[1][1] + r[2][2];
    let cos_t = ((trace - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos_t.acos();
    let vee = [
        (r[2][1] - r[1][2]) * 0.5,
        (r[0][2] - r[2][0]) * 0.5,
        (r[1][0] - r[0][1]) * 0.5,
    ];
    if theta < SMALL_ANGLE {
        // sin(t)/t ~= 1 here, so the vee part is already axis*angle.
        return vee;
    }
    if std::f64::consts::PI - theta < 1e-6 {
        // Near pi the vee part vanishes; recover the axis from R + I whose
        // columns are all parallel to it.
        let mut best = 0;
        for i in 1..3 {
            if r[i][i] > r[best][best] {
                best = i;
            }
        }
        let i = best;
        let axis_i = ((r[i][i] + 1.0) * 0.5).max(0.0).sqrt();
        let mut axis = [0.0; 3];
        axis[i] = axis_i;
        if axis_i > 1e-12 {
            for j in 0..3 {
                if j != i {
                    axis[j] = (r[j][i] + r[i][j]) * 0.25 / axis_i;
                }
            }
        }
        return scale3(normalize3(axis), theta);
    }
    scale3(vee, theta / theta.sin())
}

/// The 6D rotation encoding: first two columns of the matrix, column-major
/// (`[r00, r10, r20, r01, r11, r21]`). Decoding Gram-Schmidt-orthonormalizes,
/// so any finite input with a non-degenerate first column yields a proper
/// rotation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rot6d(pub [f64; 6]);

impl Rot6d {
    pub const IDENTITY: Rot6d = Rot6d([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

    pub fn from_matrix(r: &Mat3) -> Self {
        Rot6d([r[0][0], r[1][0], r[2][0], r[0][1], r[1][1], r[2][1]])
    }

    pub fn to_matrix(&self) -> Result<Mat3> {
        let a1 = [self.0[0], self.0[1], self.0[2]];
        let a2 = [self.0[3], self.0[4], self.0[5]];
        if !a1.iter().chain(&a2).all(|v| v.is_finite()) {
            return Err(Error::DegenerateRotation("non-finite 6D input".into()));
        }
        let n1 = dot3(a1, a1).sqrt();
        if n1 < 1e-12 {
            return Err(Error::DegenerateRotation(format!(
                "first 6D column is near zero (norm {n1:.3e})"
            )));
        }
        let b1 = scale3(a1, 1.0 / n1);
        let proj = dot3(b1, a2);
        let a2_orth = sub3(a2, scale3(b1, proj));
        let n2 = dot3(a2_orth, a2_orth).sqrt();
        let b2 = if n2 < 1e-12 {
            // Columns are parallel; fall back to a deterministic perpendicular
            // so decoding never fails on finite input.
            let pick = if b1[0].abs() <= b1[1].abs() && b1[0].abs() <= b1[2].abs() {
                [1.0, 0.0, 0.0]
            } else if b1[1].abs() <= b1[2].abs() {
                [0.0, 1.0, 0.0]
            } else {
                [0.0, 0.0, 1.0]
            };
            normalize3(cross3(pick, b1))
        } else {
            scale3(a2_orth, 1.0 / n2)
        };
        let b3 = cross3(b1, b2);
        Ok([
            [b1[0], b2[0], b3[0]],
            [b1[1], b2[1], b3[1]],
            [b1[2], b2[2], b3[2]],
        ])
    }
}

/// Intrinsic yaw(Y) - pitch(X) - roll(Z) composition: `R = Ry * Rx * Rz`.
pub fn yaw_pitch_roll_matrix(yaw: f64, pitch: f64, roll: f64) -> Mat3 {
    mat_mul(&rot_y(yaw), &mat_mul(&rot_x(pitch), &rot_z(roll)))
}

/// Inverse of [`yaw_pitch_roll_matrix`]. Gimbal lock (|pitch| = pi/2) folds
/// roll into yaw, which is fine for the head poses this is applied to.
pub fn matrix_to_yaw_pitch_roll(r: &Mat3) -> (f64, f64, f64) {
    let sp = (-r[1][2]).clamp(-1.0, 1.0);
    let pitch = sp.asin();
    if sp.abs() > 1.0 - 1e-9 {
        let yaw = r[0][1].atan2(r[0][0]);
        (yaw, pitch, 0.0)
    } else {
        let yaw = r[0][2].atan2(r[2][2]);
        let roll = r[1][0].atan2(r[1][1]);
        (yaw, pitch, roll)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::transpose;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn assert_mat_close(a: &Mat3, b: &Mat3, tol: f64) {
        for i in 0..3 {
            for j in 0..3 {
                assert!(
                    (a[i][j] - b[i][j]).abs() <= tol,
                    "entry ({i},{j}): {} vs {}",
                    a[i][j],
                    b[i][j]
                );
            }
        }
    }

    /// Uniform random rotation via the Shoemake quaternion construction.
    fn random_rotation(rng: &mut ChaCha8Rng) -> Mat3 {
        let u1: f64 = rng.random();
        let u2: f64 = rng.random::<f64>() * std::f64::consts::TAU;
        let u3: f64 = rng.random::<f64>() * std::f64::consts::TAU;
        let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
        let (w, x, y, z) = (a * u2.cos(), a * u2.sin(), b * u3.cos(), b * u3.sin());
        [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ]
    }

    #[test]
    fn rodrigues_basics() {
        assert_mat_close(&rodrigues([0.0; 3]), &IDENTITY3, 0.0);
        let quarter = rodrigues([0.0, 0.0, std::f64::consts::FRAC_PI_2]);
        let p = crate::math::mat_vec(&quarter, [1.0, 0.0, 0.0]);
        assert!((p[0]).abs() < 1e-15 && (p[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn log_roundtrip_random_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let r = random_rotation(&mut rng);
            let back = rodrigues(log_rotation(&r));
            assert_mat_close(&back, &r, 1e-10);
        }
    }

    #[test]
    fn log_handles_tiny_and_near_pi_angles() {
        let tiny = rodrigues([1e-10, -2e-10, 5e-11]);
        let aa = log_rotation(&tiny);
        assert!((aa[0] - 1e-10).abs() < 1e-15);

        let near_pi = rodrigues(scale3(normalize3([0.3, -0.2, 0.9]), std::f64::consts::PI - 1e-8));
        let back = rodrigues(log_rotation(&near_pi));
        assert_mat_close(&back, &near_pi, 1e-6);
    }

    #[test]
    fn rot6d_identity_and_scaling() {
        assert_mat_close(&Rot6d::IDENTITY.to_matrix().unwrap(), &IDENTITY3, 0.0);
        // Scaled columns normalize away.
        let m = Rot6d([2.0, 0.0, 0.0, 0.0, 3.0, 0.0]).to_matrix().unwrap();
        assert_mat_close(&m, &IDENTITY3, 1e-15);
    }

    #[test]
    fn rot6d_roundtrip_error_below_1e12() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..500 {
            let r = random_rotation(&mut rng);
            let back = Rot6d::from_matrix(&r).to_matrix().unwrap();
            assert_mat_close(&back, &r, 1e-12);
        }
    }

    #[test]
    fn rot6d_decode_always_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..500 {
            let noisy = Rot6d(std::array::from_fn(|_| rng.random_range(-2.0..2.0)));
            let Ok(m) = noisy.to_matrix() else { continue };
            let should_be_id = mat_mul(&m, &transpose(&m));
            assert_mat_close(&should_be_id, &IDENTITY3, 1e-6);
            let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
            assert!((det - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn rot6d_zero_first_column_errors() {
        assert!(Rot6d([0.0, 0.0, 0.0, 0.0, 1.0, 0.0]).to_matrix().is_err());
    }

    #[test]
    fn rot6d_parallel_columns_still_decode() {
        let m = Rot6d([1.0, 0.0, 0.0, 2.0, 0.0, 0.0]).to_matrix().unwrap();
        let should_be_id = mat_mul(&m, &transpose(&m));
        assert_mat_close(&should_be_id, &IDENTITY3, 1e-12);
    }

    #[test]
    fn yaw_pitch_roll_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..200 {
            let yaw = rng.random_range(-1.4..1.4);
            let pitch = rng.random_range(-1.2..1.2);
            let roll = rng.random_range(-1.4..1.4);
            let r = yaw_pitch_roll_matrix(yaw, pitch, roll);
            let (y2, p2, r2) = matrix_to_yaw_pitch_roll(&r);
            assert!((yaw - y2).abs() < 1e-10);
            assert!((pitch - p2).abs() < 1e-10);
            assert!((roll - r2).abs() < 1e-10);
        }
    }
}
