//! Quadrature rules used on the production path.
//!
//! Element integrals use the three-point interior rule (exact for quadratics);
//! edge integrals use three-point Gauss-Legendre (exact up to degree five).

use crate::scalar::Scalar;

/// Barycentric points and weights (summing to one) of the degree-2 triangle rule.
pub const TRIANGLE_DEG2: [([f64; 3], f64); 3] = [
    ([2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0], 1.0 / 3.0),
    ([1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0], 1.0 / 3.0),
    ([1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0], 1.0 / 3.0),
];

const GAUSS3_OFFSET: f64 = 0.387_298_334_620_741_7; // sqrt(3/5) / 2

/// Parameters on `[0, 1]` and weights (summing to one) of three-point Gauss-Legendre.
pub const EDGE_GAUSS3: [(f64, f64); 3] = [
    (0.5 - GAUSS3_OFFSET, 5.0 / 18.0),
    (0.5, 8.0 / 18.0),
    (0.5 + GAUSS3_OFFSET, 5.0 / 18.0),
];

/// Degree-2 rule converted to the scalar type.
pub(crate) fn triangle_rule<T: Scalar>() -> [([T; 3], T); 3] {
    TRIANGLE_DEG2.map(|(b, w)| (b.map(T::lit), T::lit(w)))
}

pub(crate) fn edge_rule<T: Scalar>() -> [(T, T); 3] {
    EDGE_GAUSS3.map(|(s, w)| (T::lit(s), T::lit(w)))
}

#[inline]
pub(crate) fn interpolate<T: Scalar>(bary: [T; 3], values: [T; 3]) -> T {
    bary[0] * values[0] + bary[1] * values[1] + bary[2] * values[2]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_one() {
        let t: f64 = TRIANGLE_DEG2.iter().map(|p| p.1).sum();
        let e: f64 = EDGE_GAUSS3.iter().map(|p| p.1).sum();
        assert!((t - 1.0).abs() < 1e-15);
        assert!((e - 1.0).abs() < 1e-15);
    }

    #[test]
    fn edge_rule_integrates_quintic() {
        // \int_0^1 s^5 ds = 1/6
        let q: f64 = EDGE_GAUSS3.iter().map(|&(s, w)| w * s.powi(5)).sum();
        assert!((q - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn triangle_rule_integrates_quadratics() {
        // average of l0*l1 over a triangle is 1/12, of l0^2 is 1/6
        let q01: f64 = TRIANGLE_DEG2.iter().map(|(b, w)| w * b[0] * b[1]).sum();
        let q00: f64 = TRIANGLE_DEG2.iter().map(|(b, w)| w * b[0] * b[0]).sum();
        assert!((q01 - 1.0 / 12.0).abs() < 1e-15);
        assert!((q00 - 1.0 / 6.0).abs() < 1e-15);
    }
}
