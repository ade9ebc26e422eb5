//! Closed-system Hamiltonian data: renormalized frequencies, impedances,
//! atom-mode and mode-mode couplings, and regime labels.

use crate::circuit::CircuitParams;
use crate::error::{domain, QedError, Result};
use crate::spectral::JjaModeSet;
use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Ultrastrong / deep strong: g/omega >= 0.1.
    A,
    /// Superstrong: g above the free spectral range.
    B,
    /// Weak.
    C,
}

impl Regime {
    pub fn label(self) -> &'static str {
        match self {
            Regime::A => "A",
            Regime::B => "B",
            Regime::C => "C",
        }
    }
}

#[derive(Debug, Clone)]
pub struct CouplingSet {
    pub omega_a_prime: f64,
    pub c_a_prime: f64,
    pub l_a_prime: f64,
    pub c_a_dprime: f64,
    pub omega_a_dprime: f64,
    /// Closed-array frequencies the couplings were built from.
    pub omega_k: Vec<f64>,
    pub omega_k_prime: Vec<f64>,
    pub z_a: f64,
    pub z_k: Vec<f64>,
    pub g_phi: Vec<f64>,
    pub g_q: Vec<f64>,
    /// K x K, row-major.
    pub xi: Vec<f64>,
    pub regimes: Vec<Regime>,
}

impl CouplingSet {
    pub fn len(&self) -> usize {
        self.omega_k.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega_k.is_empty()
    }

    pub fn xi_at(&self, k: usize, kp: usize) -> f64 {
        self.xi[k * self.len() + kp]
    }

    pub fn free_spectral_range(&self) -> Vec<f64> {
        free_spectral_range(&self.omega_k_prime)
    }
}

/// Forward difference, last value repeated.
pub fn free_spectral_range(omega: &[f64]) -> Vec<f64> {
    let n = omega.len();
    let mut out: Vec<f64> = omega.windows(2).map(|w| w[1] - w[0]).collect();
    if n == 1 {
        out.push(0.0);
    } else if n > 1 {
        out.push(out[n - 2]);
    }
    out
}

pub fn build_coupling_set(p: &CircuitParams, modes: &JjaModeSet) -> Result<CouplingSet> {
    p.validate()?;
    if modes.len() != p.n {
        return domain(format!("mode set has {} modes, circuit has N = {}", modes.len(), p.n));
    }
    let first: Vec<f64> = (0..modes.len()).map(|k| modes.first_node(k)).collect();
    couplings_from_first_node(p, &modes.frequencies, &first, None)
}

/// Core builder. `c_a_dprime_override` freezes C_A'' (used to test the
/// linear chi dependence at fixed mode shapes).
pub fn couplings_from_first_node(p: &CircuitParams, omega_k: &[f64], phi1: &[f64], c_a_dprime_override: Option<f64>) -> Result<CouplingSet> {
    let (c_a, l_a) = p.atom_elements()?;
    let kk = omega_k.len();
    let cn = p.c_g + 2.0 * p.c;
    let c0 = p.c0();
    let c_a_prime = c_a + c0;
    let l_a_prime = 1.0 / (1.0 / l_a + p.inv_l0());
    let omega_a_prime = 1.0 / (l_a_prime * c_a_prime).sqrt();
    let sum_sq: f64 = phi1.iter().map(|x| x * x).sum();
    let c_a_dprime = c_a_dprime_override.unwrap_or(c_a_prime - c0 * c0 / cn * sum_sq);
    if !(c_a_dprime > 0.0) {
        return Err(QedError::Renormalization { sum_phi1_sq: sum_sq });
    }
    let omega_a_dprime = omega_a_prime * (c_a_prime / c_a_dprime).sqrt();
    let z_a = (l_a_prime / c_a_dprime).sqrt();
    let z_k: Vec<f64> = omega_k.iter().map(|w| 1.0 / (cn * w)).collect();
    let omega_k_prime: Vec<f64> = omega_k
        .iter()
        .zip(phi1)
        .map(|(w, f)| w / (1.0 + c0 * c0 * f * f / (c_a_dprime * cn)).sqrt())
        .collect();
    let (g_phi, g_q, xi) = if p.chi == 0.0 {
        (vec![0.0; kk], vec![0.0; kk], vec![0.0; kk * kk])
    } else {
        let g_phi = (0..kk).map(|k| -p.chi * (z_a * z_k[k]).sqrt() * phi1[k] / (2.0 * p.l)).collect();
        let g_q = (0..kk)
            .map(|k| -p.chi * p.c * phi1[k] / (2.0 * cn * c_a_dprime * (z_a * z_k[k]).sqrt()))
            .collect();
        let pref = c0 * c0 / (4.0 * cn * cn * c_a_dprime);
        let a: Vec<f64> = (0..kk).map(|k| phi1[k] / z_k[k].sqrt()).collect();
        let xi: Vec<f64> = (0..kk)
            .into_par_iter()
            .flat_map_iter(|k| {
                let a = &a;
                (0..kk).map(move |kp| pref * (a[k] * a[kp]))
            })
            .collect();
        (g_phi, g_q, xi)
    };
    let mut cs = CouplingSet {
        omega_a_prime,
        c_a_prime,
        l_a_prime,
        c_a_dprime,
        omega_a_dprime,
        omega_k: omega_k.to_vec(),
        omega_k_prime,
        z_a,
        z_k,
        g_phi,
        g_q,
        xi,
        regimes: Vec::new(),
    };
    let fsr = cs.free_spectral_range();
    cs.regimes = classify_regimes(&cs, &fsr);
    Ok(cs)
}

pub fn classify_regimes(cs: &CouplingSet, fsr: &[f64]) -> Vec<Regime> {
    (0..cs.len())
        .map(|k| {
            let g = cs.g_phi[k].abs().max(cs.g_q[k].abs());
            let w = cs.omega_k_prime[k].min(cs.omega_a_dprime);
            if g >= 0.1 * w {
                Regime::A
            } else if g >= fsr[k] && g > 0.0 {
                Regime::B
            } else {
                Regime::C
            }
        })
        .collect()
}

fn sqrt_psd(a: &Mat<f64>, what: &str) -> Result<Mat<f64>> {
    let n = a.nrows();
    let eig = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| QedError::Solver(format!("eigensolver failed: {e:?}")))?;
    let s = eig.S();
    let u = eig.U();
    let scale = (0..n).map(|i| s[i].abs()).fold(0.0, f64::max);
    let mut ur = Mat::<f64>::zeros(n, n);
    for j in 0..n {
        if s[j] <= 1e-14 * scale {
            return Err(QedError::Instability(format!("{what} quadratic form not positive definite (eigenvalue {:e})", s[j])));
        }
        let r = s[j].sqrt();
        for i in 0..n {
            ur[(i, j)] = u[(i, j)] * r;
        }
    }
    let out = &ur * u.transpose();
    Ok(out)
}

/// Frequency (rad/s) of the normal mode with the largest atomic amplitude
/// of the Hamiltonian truncated to the first `k_max` array modes.
pub fn diagonalize_truncated(cs: &CouplingSet, k_max: usize) -> Result<f64> {
    if k_max < 1 || k_max > cs.len() {
        return domain(format!("k_max = {k_max} outside [1, {}]", cs.len()));
    }
    let n = k_max + 1;
    let mut v = Mat::<f64>::zeros(n, n);
    let mut t = Mat::<f64>::zeros(n, n);
    v[(0, 0)] = cs.omega_a_dprime;
    t[(0, 0)] = cs.omega_a_dprime;
    for k in 0..k_max {
        v[(k + 1, k + 1)] = cs.omega_k[k];
        t[(k + 1, k + 1)] = cs.omega_k[k];
        v[(0, k + 1)] = 2.0 * cs.g_phi[k];
        v[(k + 1, 0)] = 2.0 * cs.g_phi[k];
        t[(0, k + 1)] = -2.0 * cs.g_q[k];
        t[(k + 1, 0)] = -2.0 * cs.g_q[k];
        for kp in 0..k_max {
            t[(k + 1, kp + 1)] += 4.0 * cs.xi_at(k, kp);
        }
    }
    if t.llt(Side::Lower).is_err() {
        return Err(QedError::Instability("kinetic quadratic form not positive definite".into()));
    }
    let vh = sqrt_psd(&v, "potential")?;
    let m = &vh * &t * &vh;
    let eig = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| QedError::Solver(format!("eigensolver failed: {e:?}")))?;
    let s = eig.S();
    let y = eig.U();
    // atom amplitude of X = V^{-1/2} y
    let xs = vh.partial_piv_lu().solve(y);
    let mut best = (0usize, -1.0);
    for j in 0..n {
        let norm: f64 = (0..n).map(|i| xs[(i, j)] * xs[(i, j)]).sum::<f64>().sqrt();
        let w = xs[(0, j)].abs() / norm;
        if w > best.1 {
            best = (j, w);
        }
    }
    let w2 = s[best.0];
    if !(w2 > 0.0) {
        return Err(QedError::Instability(format!("non-positive squared frequency {w2:e}")));
    }
    Ok(w2.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{build_closed_jja, build_closed_system};
    use crate::spectral::{closed_frequencies, solve_closed_jja_modes};
    use crate::units::angular;

    fn set(n: usize, chi: f64, fa: f64) -> (CircuitParams, CouplingSet) {
        let p = CircuitParams::reference().with_n(n).with_chi(chi).with_omega_a(angular(fa));
        let modes = solve_closed_jja_modes(&build_closed_jja(&p).unwrap()).unwrap();
        let cs = build_coupling_set(&p, &modes).unwrap();
        (p, cs)
    }

    #[test]
    fn decoupled() {
        let (p, cs) = set(30, 0.0, 15e9);
        assert!(cs.g_phi.iter().chain(&cs.g_q).chain(&cs.xi).all(|&g| g == 0.0));
        assert!((cs.omega_a_dprime - p.omega_a).abs() < 1e-12 * p.omega_a);
        assert!(cs.regimes.iter().all(|&r| r == Regime::C));
    }

    #[test]
    fn renormalized_below_bare() {
        let (_, cs) = set(60, 1.0, 15e9);
        for (w, wp) in cs.omega_k.iter().zip(&cs.omega_k_prime) {
            assert!(wp <= w);
        }
    }

    #[test]
    fn xi_symmetric_with_sign() {
        let (p, cs) = set(40, 0.5, 15e9);
        let modes = solve_closed_jja_modes(&build_closed_jja(&p).unwrap()).unwrap();
        let modes_first = |k| modes.first_node(k);
        for k in 0..cs.len() {
            for kp in 0..cs.len() {
                assert_eq!(cs.xi_at(k, kp), cs.xi_at(kp, k));
                let f = modes_first(k) * modes_first(kp);
                assert!(f == 0.0 || cs.xi_at(k, kp).signum() == f.signum());
            }
        }
    }

    #[test]
    fn frozen_modes_linear_in_chi() {
        let p = CircuitParams::reference().with_n(40).with_chi(0.1);
        let modes = solve_closed_jja_modes(&build_closed_jja(&p).unwrap()).unwrap();
        let f: Vec<f64> = (0..40).map(|k| modes.first_node(k)).collect();
        let a = couplings_from_first_node(&p, &modes.frequencies, &f, Some(1e-15)).unwrap();
        let b = couplings_from_first_node(&p.clone().with_chi(0.2), &modes.frequencies, &f, Some(1e-15)).unwrap();
        // Z_A moves with chi through L_A'; divide it out
        for k in 0..40 {
            let rq = (b.g_q[k] * b.z_a.sqrt()) / (a.g_q[k] * a.z_a.sqrt());
            let rf = (b.g_phi[k] / b.z_a.sqrt()) / (a.g_phi[k] / a.z_a.sqrt());
            assert!((rq - 2.0).abs() < 1e-12 && (rf - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn full_truncation_is_closed_system() {
        for &chi in &[0.01, 0.3, 1.0] {
            let (p, cs) = set(50, chi, 15e9);
            let w = diagonalize_truncated(&cs, cs.len()).unwrap();
            let closed = closed_frequencies(&build_closed_system(&p).unwrap()).unwrap();
            let nearest = closed.iter().map(|c| (c - w).abs() / w).fold(f64::INFINITY, f64::min);
            assert!(nearest < 1e-6, "chi {chi}: {nearest:e}");
        }
    }

    #[test]
    fn truncation_without_coupling() {
        let (_, cs) = set(20, 0.0, 7e9);
        let w = diagonalize_truncated(&cs, 5).unwrap();
        assert!((w - cs.omega_a_dprime).abs() < 1e-12 * w);
        assert!(diagonalize_truncated(&cs, 0).is_err());
        assert!(diagonalize_truncated(&cs, 21).is_err());
    }

    #[test]
    fn fsr_repeats_last() {
        assert_eq!(free_spectral_range(&[1.0, 3.0, 6.0]), vec![2.0, 3.0, 3.0]);
    }
}
