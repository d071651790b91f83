use crate::camera::Mat3;
use crate::error::{Error, Result};

/// Rotation matrix of the normalized quaternion `(w, x, y, z)`.
pub fn quat_to_rotation(q: &[f64; 4]) -> Result<Mat3> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if n < 1e-12 || !n.is_finite() {
        return Err(Error::invalid("zero quaternion"));
    }
    let [w, x, y, z] = q.map(|v| v / n);
    Ok([
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ])
}

/// `R S S^T R^T` with `S = diag(exp(log_scale))`.
pub fn build_covariance(quat: &[f64; 4], log_scale: &[f64; 3]) -> Result<Mat3> {
    let r = quat_to_rotation(quat)?;
    let s2 = log_scale.map(|v| (2.0 * v).exp());
    let mut cov = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            cov[i][j] = (0..3).map(|k| r[i][k] * s2[k] * r[j][k]).sum();
        }
    }
    Ok(cov)
}

/// Pulls `d_cov` (the full, symmetric derivative with respect to the 3x3
/// covariance) back to the quaternion and log-scales.
pub fn covariance_vjp(quat: &[f64; 4], log_scale: &[f64; 3], d_cov: &Mat3) -> Result<([f64; 4], [f64; 3])> {
    let r = quat_to_rotation(quat)?;
    let s = log_scale.map(f64::exp);
    // cov = M M^T with M = R S, so dM = (G + G^T) M.
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = r[i][j] * s[j];
        }
    }
    let mut dm = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            dm[i][j] = (0..3).map(|k| (d_cov[i][k] + d_cov[k][i]) * m[k][j]).sum();
        }
    }
    let mut dr = [[0.0; 3]; 3];
    let mut dlog = [0.0; 3];
    for j in 0..3 {
        for i in 0..3 {
            dr[i][j] = dm[i][j] * s[j];
            dlog[j] += dm[i][j] * r[i][j] * s[j];
        }
    }
    let n = (quat.iter().map(|v| v * v).sum::<f64>()).sqrt();
    let [w, x, y, z] = quat.map(|v| v / n);
    let dqn = [
        2.0 * (-z * dr[0][1] + y * dr[0][2] + z * dr[1][0] - x * dr[1][2] - y * dr[2][0] + x * dr[2][1]),
        2.0 * (y * dr[0][1] + z * dr[0][2] + y * dr[1][0] - 2.0 * x * dr[1][1] - w * dr[1][2] + z * dr[2][0]
            + w * dr[2][1]
            - 2.0 * x * dr[2][2]),
        2.0 * (-2.0 * y * dr[0][0] + x * dr[0][1] + w * dr[0][2] + x * dr[1][0] + z * dr[1][2] - w * dr[2][0]
            + z * dr[2][1]
            - 2.0 * y * dr[2][2]),
        2.0 * (-2.0 * z * dr[0][0] - w * dr[0][1] + x * dr[0][2] + w * dr[1][0] - 2.0 * z * dr[1][1]
            + y * dr[1][2]
            + x * dr[2][0]
            + y * dr[2][1]),
    ];
    let qn = [w, x, y, z];
    let dot: f64 = (0..4).map(|k| qn[k] * dqn[k]).sum();
    let dq = [0, 1, 2, 3].map(|k| (dqn[k] - qn[k] * dot) / n);
    Ok((dq, dlog))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::numeric::{central_difference, relative_error};

    fn close(a: &Mat3, b: &Mat3, tol: f64) -> bool {
        (0..3).all(|i| (0..3).all(|j| (a[i][j] - b[i][j]).abs() < tol))
    }

    #[test]
    fn identity_rotation_squares_scales() {
        let c = build_covariance(&[1.0, 0.0, 0.0, 0.0], &[1f64.ln(), 2f64.ln(), 3f64.ln()]).unwrap();
        assert!(close(&c, &[[1.0, 0.0, 0.0], [0.0, 4.0, 0.0], [0.0, 0.0, 9.0]], 1e-12));
    }

    #[test]
    fn quarter_turn_about_z_swaps_axes() {
        let h = std::f64::consts::FRAC_PI_4;
        let c = build_covariance(&[h.cos(), 0.0, 0.0, h.sin()], &[0.0, 2f64.ln(), 0.0]).unwrap();
        assert!(close(&c, &[[4.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], 1e-12));
    }

    #[test]
    fn zero_quaternion_errors() {
        assert!(build_covariance(&[0.0; 4], &[0.0; 3]).is_err());
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let q = [0.8, -0.3, 0.4, 0.2];
        let ls = [-0.5, 0.1, 0.3];
        let w = [[0.3, -1.2, 0.5], [0.7, 0.2, -0.4], [1.1, 0.6, -0.9]];
        let f = |x: &[f64]| {
            let c = build_covariance(&[x[0], x[1], x[2], x[3]], &[x[4], x[5], x[6]]).unwrap();
            (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| w[i][j] * c[i][j]).sum::<f64>()
        };
        let x = [q[0], q[1], q[2], q[3], ls[0], ls[1], ls[2]];
        let fd = central_difference(&x, 1e-6, f);
        let (dq, dl) = covariance_vjp(&q, &ls, &w).unwrap();
        let an = [dq[0], dq[1], dq[2], dq[3], dl[0], dl[1], dl[2]];
        assert!(relative_error(&an, &fd) < 1e-7, "{an:?} vs {fd:?}");
    }
}
