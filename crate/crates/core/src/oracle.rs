//! Second-moment (covariance) propagation of the reduced linear system,
//! independent of the pole-residue machinery.
//!
//! State z = (Phi, Psi = Z0 Q) in dimensionless time:
//! Phi' = C^-1 Psi, Psi' = -K Phi - D C^-1 Psi + noise at the boundary.
//! The covariance obeys S' = A S + S A^T + q e_b e_b^T.

use crate::circuit::{build_reduced_system, CircuitParams, ReducedSystem};
use crate::dynamics::{atom_impedance, DynamicsTrace, Method};
use crate::error::{domain, QedError, Result};
use crate::units::{HBAR, K_B};
use nalgebra::{DMatrix, DVector};
use ode_solvers::{Dop853, OutputType, System};

#[derive(Debug, Clone, Copy)]
pub struct OracleOptions {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions { rtol: 1e-10, atol: 1e-10 }
    }
}

/// Drift matrix, noise strength and initial covariance.
#[derive(Debug, Clone)]
pub struct CovarianceModel {
    pub sys: ReducedSystem,
    pub z_a: f64,
    pub a: DMatrix<f64>,
    pub q: f64,
    pub s0: DMatrix<f64>,
}

impl CovarianceModel {
    pub fn new(p: &CircuitParams, temperature: f64) -> Result<Self> {
        if !(temperature >= 0.0) {
            return domain(format!("temperature must be >= 0, got {temperature}"));
        }
        let sys = build_reduced_system(p)?;
        let z_a = atom_impedance(p)?;
        let m = sys.m;
        let c = DMatrix::from_fn(m, m, |i, j| sys.c_red.get(i, j));
        let ci = c.clone().cholesky().ok_or_else(|| QedError::Solver("C_red not positive definite".into()))?.inverse();
        let k = DMatrix::from_fn(m, m, |i, j| sys.l_red_inv.get(i, j));
        let mut a = DMatrix::zeros(2 * m, 2 * m);
        a.view_mut((0, m), (m, m)).copy_from(&ci);
        a.view_mut((m, 0), (m, m)).copy_from(&(-k));
        let b = sys.boundary_index;
        for j in 0..m {
            a[(m + b, m + j)] = -sys.damping * ci[(b, j)];
        }
        let q = 2.0 * sys.z0 * sys.z0 * K_B * temperature / (HBAR * sys.omega0 * p.z_w);
        let mut s0 = DMatrix::zeros(2 * m, 2 * m);
        let at = sys.atom_index;
        s0[(at, at)] = z_a;
        s0[(m + at, m + at)] = sys.z0 * sys.z0 / z_a;
        Ok(CovarianceModel { sys, z_a, a, q, s0 })
    }

    pub fn dim(&self) -> usize {
        2 * self.sys.m
    }

    fn noise(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut qm = DMatrix::zeros(n, n);
        let idx = self.sys.m + self.sys.boundary_index;
        qm[(idx, idx)] = self.q;
        qm
    }

    pub fn occupation(&self, s: &DMatrix<f64>) -> f64 {
        let at = self.sys.atom_index;
        let m = self.sys.m;
        let r = self.z_a / self.sys.z0;
        (s[(at, at)] + r * r * s[(m + at, m + at)]) / (2.0 * self.z_a)
    }

    /// Propagator e^{Ah} and noise integral over [0, h]: Van Loan on a
    /// substep short enough that e^{-Ah} stays tame, then doubling.
    pub fn step_matrices(&self, h: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.dim();
        let rho = self.a.abs().row_sum().max().max(1e-300);
        let mut k = 0;
        while h / 2f64.powi(k) * rho > 0.5 {
            k += 1;
        }
        let hs = h / 2f64.powi(k);
        let mut big = DMatrix::zeros(2 * n, 2 * n);
        big.view_mut((0, 0), (n, n)).copy_from(&(-&self.a * hs));
        big.view_mut((0, n), (n, n)).copy_from(&(self.noise() * hs));
        big.view_mut((n, n), (n, n)).copy_from(&(self.a.transpose() * hs));
        let f = big.exp();
        let f12 = f.view((0, n), (n, n)).into_owned();
        let mut phi = f.view((n, n), (n, n)).transpose();
        let mut w = &phi * f12;
        for _ in 0..k {
            w = &w + &phi * &w * phi.transpose();
            phi = &phi * &phi;
        }
        let w = 0.5 * (&w + w.transpose());
        (phi, w)
    }
}

struct Lyapunov<'a> {
    a: &'a DMatrix<f64>,
    q: f64,
    noise_index: usize,
    n: usize,
}

impl System<f64, DVector<f64>> for Lyapunov<'_> {
    fn system(&self, _t: f64, y: &DVector<f64>, dy: &mut DVector<f64>) {
        let n = self.n;
        let s = DMatrix::from_column_slice(n, n, y.as_slice());
        let as_ = self.a * &s;
        let mut d = &as_ + as_.transpose();
        d[(self.noise_index, self.noise_index)] += self.q;
        dy.copy_from_slice(d.as_slice());
    }
}

fn trace_from(model: &CovarianceModel, t_grid: &[f64], values: Vec<f64>) -> DynamicsTrace {
    let n = t_grid.len();
    DynamicsTrace {
        t_grid: t_grid.to_vec(),
        n_a: values,
        part_initial: vec![f64::NAN; n],
        part_vacuum: vec![f64::NAN; n],
        part_thermal: vec![f64::NAN; n],
        n_a_inf: if model.q == 0.0 { Some(0.0) } else { None },
        method: Method::OdeOracle,
        max_imag: 0.0,
        warnings: Vec::new(),
    }
}

fn check_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.is_empty() {
        return domain("empty time grid");
    }
    if t_grid[0] < 0.0 || t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return domain("time grid must be non-negative and strictly increasing");
    }
    Ok(())
}

/// Adaptive Dormand-Prince 8(5,3) integration of the covariance ODE.
pub fn covariance_ode_oracle(p: &CircuitParams, t_grid: &[f64], temperature: f64) -> Result<DynamicsTrace> {
    covariance_ode_oracle_with(p, t_grid, temperature, OracleOptions::default())
}

pub fn covariance_ode_oracle_with(p: &CircuitParams, t_grid: &[f64], temperature: f64, opts: OracleOptions) -> Result<DynamicsTrace> {
    check_grid(t_grid)?;
    let model = CovarianceModel::new(p, temperature)?;
    let n = model.dim();
    let mut y = DVector::from_column_slice(model.s0.as_slice());
    let mut t = 0.0;
    let mut out = Vec::with_capacity(t_grid.len());
    for &target in t_grid {
        if target > t {
            let sys = Lyapunov { a: &model.a, q: model.q, noise_index: model.sys.m + model.sys.boundary_index, n };
            let span = target - t;
            // autonomous system: each interval runs in local time; explicit
            // first step because the automatic guess overshoots the boundary pole
            let mut stepper = Dop853::from_param(
                sys,
                0.0,
                span,
                span,
                y.clone(),
                opts.rtol,
                opts.atol,
                0.9,
                0.0,
                0.333,
                6.0,
                span,
                span.min(1e-3),
                200_000,
                1000,
                OutputType::Sparse,
            );
            stepper.integrate().map_err(|e| {
                let rho = model.a.abs().row_sum().max();
                QedError::Integrator(format!("{e:?} on [{t:.4}, {target:.4}]; explicit step bound ~ {:.3e}", 3.0 / rho))
            })?;
            y = stepper.y_out().last().cloned().ok_or_else(|| QedError::Integrator("no output".into()))?;
            t = target;
        }
        let s = DMatrix::from_column_slice(n, n, y.as_slice());
        out.push(model.occupation(&s));
    }
    Ok(trace_from(&model, t_grid, out))
}

/// Matrix-exponential propagation on the grid (exact up to expm error).
pub fn covariance_expm(p: &CircuitParams, t_grid: &[f64], temperature: f64) -> Result<DynamicsTrace> {
    check_grid(t_grid)?;
    let model = CovarianceModel::new(p, temperature)?;
    let mut s = model.s0.clone();
    let mut t = 0.0;
    let mut cache: Option<(f64, DMatrix<f64>, DMatrix<f64>)> = None;
    let mut out = Vec::with_capacity(t_grid.len());
    for &target in t_grid {
        let h = target - t;
        if h > 0.0 {
            let reuse = matches!(&cache, Some((hc, _, _)) if ((hc - h) / h).abs() < 1e-12);
            if !reuse {
                let (phi, w) = model.step_matrices(h);
                cache = Some((h, phi, w));
            }
            let (_, phi, w) = cache.as_ref().expect("cached step");
            s = phi * &s * phi.transpose() + w;
            t = target;
        }
        out.push(model.occupation(&s));
    }
    Ok(trace_from(&model, t_grid, out))
}

/// Long-time occupation by repeated doubling of the propagation interval;
/// convergence is judged on the atomic entries only.
pub fn oracle_steady_state(p: &CircuitParams, temperature: f64) -> Result<f64> {
    let model = CovarianceModel::new(p, temperature)?;
    if model.q == 0.0 {
        return Ok(0.0);
    }
    let (mut phi, mut w) = model.step_matrices(1.0);
    let mut prev = model.occupation(&w);
    for _ in 0..80 {
        w = &w + &phi * &w * phi.transpose();
        phi = &phi * &phi;
        let cur = model.occupation(&w);
        if (cur - prev).abs() <= 1e-12 * cur.abs().max(f64::MIN_POSITIVE) {
            return Ok(cur);
        }
        prev = cur;
    }
    Err(QedError::Divergence("covariance doubling did not converge at the atom".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::angular;

    #[test]
    fn decoupled_lossless_atom_stays_excited() {
        let p = CircuitParams::reference().with_n(3).with_chi(0.0).with_omega_a(angular(5e9));
        let t: Vec<f64> = (0..=20).map(|i| i as f64).collect();
        let tr = covariance_ode_oracle(&p, &t, 0.0).unwrap();
        assert!(tr.n_a.iter().all(|v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn two_routes_agree_toy() {
        let p = CircuitParams::reference().with_n(1).with_chi(1.0).with_omega_a(angular(5e9));
        let t: Vec<f64> = (0..=40).map(|i| i as f64 * 0.5).collect();
        let a = covariance_ode_oracle(&p, &t, 0.05).unwrap();
        let b = covariance_expm(&p, &t, 0.05).unwrap();
        let scale = a.n_a.iter().cloned().fold(0.0, f64::max);
        for (x, y) in a.n_a.iter().zip(&b.n_a) {
            assert!((x - y).abs() < 1e-8 * scale, "{x} {y}");
        }
    }

    #[test]
    fn bad_grid_rejected() {
        let p = CircuitParams::reference().with_n(1);
        assert!(covariance_expm(&p, &[1.0, 0.5], 0.0).is_err());
    }
}
