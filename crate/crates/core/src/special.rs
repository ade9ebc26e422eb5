//! Trigamma function for complex arguments.

use num_complex::Complex64 as C64;

// B_{2k} for k = 1..8
const BERNOULLI: [f64; 8] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
];

/// psi_1(z) for Re z > 0: upward recurrence until |z| > 10, then the
/// asymptotic series 1/z + 1/(2z^2) + sum B_2k / z^(2k+1).
pub fn trigamma(z: C64) -> C64 {
    let mut z = z;
    let mut acc = C64::new(0.0, 0.0);
    while z.norm() <= 10.0 {
        acc += (z * z).inv();
        z += 1.0;
    }
    let w = z.inv();
    let w2 = w * w;
    let mut term = w * w2;
    let mut series = w + 0.5 * w2;
    for b in BERNOULLI {
        series += b * term;
        term *= w2;
    }
    acc + series
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn known_values() {
        assert!((trigamma(C64::new(1.0, 0.0)).re - PI * PI / 6.0).abs() < 1e-13);
        assert!((trigamma(C64::new(0.5, 0.0)).re - PI * PI / 2.0).abs() < 1e-12);
        // psi_1(z) + psi_1(1 - z) = pi^2 / sin^2(pi z)
        let z = C64::new(0.3, 0.7);
        let lhs = trigamma(z) + trigamma(C64::new(1.0, 0.0) - z);
        let s = (z * PI).sin();
        let rhs = PI * PI / (s * s);
        assert!((lhs - rhs).norm() < 1e-11 * rhs.norm());
    }

    #[test]
    fn recurrence_holds() {
        let z = C64::new(1.0, -3.5);
        let d = trigamma(z) - trigamma(z + 1.0) - (z * z).inv();
        assert!(d.norm() < 1e-13);
    }

    #[test]
    fn imaginary_axis_large() {
        // Re psi_1(1 - ix) ~ 1/(x^2) for large x along 1 - ix
        let x = 1e4;
        let v = trigamma(C64::new(1.0, -x)).re;
        assert!((v * x * x - 0.5).abs() < 1e-3);
    }
}
