//! Complex tridiagonal LU with partial pivoting and helpers for the
//! quadratic matrix polynomial Q(s) = s^2 C + s D + K.

use crate::circuit::ReducedSystem;
use num_complex::Complex64 as C64;

/// LU factors of a general tridiagonal matrix (LAPACK gttrf layout).
#[derive(Debug, Clone)]
pub struct TriLu {
    dl: Vec<C64>,
    d: Vec<C64>,
    du: Vec<C64>,
    du2: Vec<C64>,
    swapped: Vec<bool>,
}

impl TriLu {
    /// Factorizes the matrix with sub-diagonal `dl`, diagonal `d` and
    /// super-diagonal `du`. Exactly singular pivots are replaced by a tiny
    /// value so the factors stay usable for inverse iteration.
    pub fn new(mut dl: Vec<C64>, mut d: Vec<C64>, mut du: Vec<C64>) -> Self {
        let n = d.len();
        let scale = d.iter().chain(dl.iter()).chain(du.iter()).map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let tiny = scale * f64::EPSILON * f64::EPSILON;
        let mut du2 = vec![C64::new(0.0, 0.0); n.saturating_sub(2)];
        let mut swapped = vec![false; n.saturating_sub(1)];
        for i in 0..n.saturating_sub(1) {
            if d[i].norm() >= dl[i].norm() {
                if d[i].norm() == 0.0 {
                    d[i] = C64::new(tiny, 0.0);
                }
                let fact = dl[i] / d[i];
                dl[i] = fact;
                d[i + 1] -= fact * du[i];
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                dl[i] = fact;
                let temp = du[i];
                du[i] = d[i + 1];
                d[i + 1] = temp - fact * d[i + 1];
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] = -fact * du[i + 1];
                }
                swapped[i] = true;
            }
        }
        if n > 0 && d[n - 1].norm() == 0.0 {
            d[n - 1] = C64::new(tiny, 0.0);
        }
        TriLu { dl, d, du, du2, swapped }
    }

    pub fn solve(&self, b: &mut [C64]) {
        let n = self.d.len();
        for i in 0..n.saturating_sub(1) {
            if self.swapped[i] {
                let temp = b[i];
                b[i] = b[i + 1];
                b[i + 1] = temp - self.dl[i] * b[i];
            } else {
                b[i + 1] -= self.dl[i] * b[i];
            }
        }
        if n == 0 {
            return;
        }
        b[n - 1] /= self.d[n - 1];
        if n > 1 {
            b[n - 2] = (b[n - 2] - self.du[n - 2] * b[n - 1]) / self.d[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            b[i] = (b[i] - self.du[i] * b[i + 1] - self.du2[i] * b[i + 2]) / self.d[i];
        }
    }
}

/// Tridiagonal bands (sub, diag, super) of Q(s).
pub fn q_bands(sys: &ReducedSystem, s: C64) -> (Vec<C64>, Vec<C64>, Vec<C64>) {
    let m = sys.m;
    let s2 = s * s;
    let mut d: Vec<C64> = (0..m).map(|i| s2 * sys.c_red.diag[i] + sys.l_red_inv.diag[i]).collect();
    d[sys.boundary_index] += s * sys.damping;
    let off: Vec<C64> = (0..m - 1).map(|i| s2 * sys.c_red.off[i] + sys.l_red_inv.off[i]).collect();
    (off.clone(), d, off)
}

/// y = Q(s) x.
pub fn q_apply(sys: &ReducedSystem, s: C64, x: &[C64]) -> Vec<C64> {
    let (dl, d, du) = q_bands(sys, s);
    tri_apply(&dl, &d, &du, x)
}

/// y = Q'(s) x with Q'(s) = 2 s C + D.
pub fn dq_apply(sys: &ReducedSystem, s: C64, x: &[C64]) -> Vec<C64> {
    let m = sys.m;
    let two_s = 2.0 * s;
    let d: Vec<C64> = (0..m).map(|i| two_s * sys.c_red.diag[i]).collect();
    let off: Vec<C64> = (0..m - 1).map(|i| two_s * sys.c_red.off[i]).collect();
    let mut y = tri_apply(&off, &d, &off, x);
    y[sys.boundary_index] += sys.damping * x[sys.boundary_index];
    y
}

pub fn tri_apply(dl: &[C64], d: &[C64], du: &[C64], x: &[C64]) -> Vec<C64> {
    let n = d.len();
    (0..n)
        .map(|i| {
            let mut acc = d[i] * x[i];
            if i > 0 {
                acc += dl[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                acc += du[i] * x[i + 1];
            }
            acc
        })
        .collect()
}

pub fn norm(x: &[C64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn normalize(x: &mut [C64]) {
    let nrm = norm(x);
    if nrm > 0.0 {
        for z in x.iter_mut() {
            *z /= nrm;
        }
    }
}

/// u^H x.
pub fn dot_h(u: &[C64], x: &[C64]) -> C64 {
    u.iter().zip(x).map(|(a, b)| a.conj() * b).sum()
}

/// Smallest singular triplet of Q(s) by alternating inverse iteration
/// seeded with `v`. Returns (sigma, u, v).
pub fn smallest_singular_triplet(sys: &ReducedSystem, s: C64, v0: &[C64], sweeps: usize) -> (f64, Vec<C64>, Vec<C64>) {
    let (dl, d, du) = q_bands(sys, s);
    let conj = |x: &Vec<C64>| x.iter().map(|z| z.conj()).collect::<Vec<_>>();
    let lu_h = TriLu::new(conj(&du), conj(&d), conj(&dl));
    let lu = TriLu::new(dl, d, du);
    let mut v = v0.to_vec();
    normalize(&mut v);
    let mut u = v.clone();
    let mut sigma = f64::INFINITY;
    for _ in 0..sweeps.max(1) {
        u.copy_from_slice(&v);
        lu_h.solve(&mut u);
        normalize(&mut u);
        v.copy_from_slice(&u);
        lu.solve(&mut v);
        let g = norm(&v);
        sigma = if g > 0.0 { 1.0 / g } else { f64::INFINITY };
        normalize(&mut v);
    }
    (sigma, u, v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn lu_solves_random_like_system() {
        let n = 9;
        let dl: Vec<C64> = (0..n - 1).map(|i| c(1.0 + i as f64, 0.3 * i as f64)).collect();
        let d: Vec<C64> = (0..n).map(|i| c(0.1 * i as f64, -0.5 + 0.01 * i as f64)).collect();
        let du: Vec<C64> = (0..n - 1).map(|i| c(-0.7, 0.2 + i as f64)).collect();
        let x: Vec<C64> = (0..n).map(|i| c((i as f64).sin(), (i as f64).cos())).collect();
        let mut b = tri_apply(&dl, &d, &du, &x);
        TriLu::new(dl, d, du).solve(&mut b);
        for (a, e) in b.iter().zip(&x) {
            assert!((a - e).norm() < 1e-12);
        }
    }

    #[test]
    fn lu_one_and_two() {
        let mut b = vec![c(2.0, 0.0)];
        TriLu::new(vec![], vec![c(0.0, 4.0)], vec![]).solve(&mut b);
        assert!((b[0] - c(0.0, -0.5)).norm() < 1e-15);
        let dl = vec![c(3.0, 0.0)];
        let d = vec![c(1.0, 0.0), c(1.0, 1.0)];
        let du = vec![c(2.0, 0.0)];
        let x = vec![c(1.0, -1.0), c(0.5, 2.0)];
        let mut b = tri_apply(&dl, &d, &du, &x);
        TriLu::new(dl, d, du).solve(&mut b);
        for (a, e) in b.iter().zip(&x) {
            assert!((a - e).norm() < 1e-13);
        }
    }
}
