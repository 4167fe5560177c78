use nalgebra::{Matrix3, Vector3};

/// Below this angle the trigonometric coefficients switch to their series
/// expansions; truncation error there is far below machine precision.
const SERIES_THRESHOLD: f64 = 1e-3;

pub fn skew(r: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -r.z, r.y, r.z, 0.0, -r.x, -r.y, r.x, 0.0)
}

/// `(a, b, a'/θ, b'/θ)` for `R = I + a·K + b·K²` with `K = skew(r)`.
fn coefficients(theta: f64) -> (f64, f64, f64, f64) {
    let t2 = theta * theta;
    if theta < SERIES_THRESHOLD {
        let t4 = t2 * t2;
        (
            1.0 - t2 / 6.0 + t4 / 120.0,
            0.5 - t2 / 24.0 + t4 / 720.0,
            -1.0 / 3.0 + t2 / 30.0 - t4 / 840.0,
            -1.0 / 12.0 + t2 / 180.0 - t4 / 6720.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        let half = (theta / 2.0).sin();
        let one_minus_cos = 2.0 * half * half;
        (
            s / theta,
            one_minus_cos / t2,
            (theta * c - s) / (t2 * theta),
            (theta * s - 2.0 * one_minus_cos) / (t2 * t2),
        )
    }
}

/// Axis-angle vector to rotation matrix (Rodrigues).
pub fn rodrigues(r: &Vector3<f64>) -> Matrix3<f64> {
    let (a, b, _, _) = coefficients(r.norm());
    let k = skew(r);
    Matrix3::identity() + k * a + k * k * b
}

/// Rotation matrix and its partial derivatives with respect to `r.x`,
/// `r.y`, `r.z`.
pub fn rodrigues_with_jacobian(r: &Vector3<f64>) -> (Matrix3<f64>, [Matrix3<f64>; 3]) {
    let (a, b, da, db) = coefficients(r.norm());
    let k = skew(r);
    let k2 = k * k;
    let rot = Matrix3::identity() + k * a + k2 * b;
    let jac = std::array::from_fn(|m| {
        let km = skew(&Vector3::ith(m, 1.0));
        km * a + (km * k + k * km) * b + k * (da * r[m]) + k2 * (db * r[m])
    });
    (rot, jac)
}
