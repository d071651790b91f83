//! Finite-difference helpers for checking analytic gradients.

/// Central differences of `f` at `x` with step `h`.
pub fn central_difference<F>(x: &[f64], h: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Smallest denominator used by [`relative_error`].
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// `max|a - n| / max(max|a|, max|n|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    diff / inf(analytic).max(inf(numeric)).max(REL_ERROR_FLOOR)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_derivative() {
        let d = central_difference(&[2.0], 1e-5, |x| x[0].powi(3));
        assert!((d[0] - 12.0).abs() < 1e-8);
        assert!(relative_error(&[12.0], &d) < 1e-9);
    }
}
