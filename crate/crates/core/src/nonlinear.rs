//! Cubic atomic nonlinearity U_A = Lambda Phi_A^3 at the level of classical
//! amplitudes: direct integration of the nonlinear equations of motion and
//! the first-order correction through the linear propagator.
//!
//! State per node: flux Phi (Wb) and Psi = Z0 Q (Wb), t~ = Omega0 t, so
//! C Phi'' + D Phi' + K Phi = -3 Lambda L Phi_A^2 e_A.

use crate::circuit::{build_reduced_system, CircuitParams, ReducedSystem};
use crate::error::{domain, QedError, Result};
use crate::spectral::{solve_quadratic_modes, ModeSet};
use crate::units::HBAR;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use ode_solvers::{Dop853, OutputType, System};

const BLOWUP: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearConfig {
    /// Cubic coefficient in J/Wb^3.
    pub lambda: f64,
    /// Bookkeeping parameter; it multiplies `lambda` and nothing else.
    pub lambda_scale: f64,
    /// Initial (Phi, Psi) per node of the reduced system, in Wb.
    pub initial_phi: Vec<f64>,
    pub initial_psi: Vec<f64>,
}

impl NonlinearConfig {
    /// Atom displaced by `phi_a`, everything else at rest.
    pub fn atom_displaced(m: usize, atom: usize, lambda: f64, phi_a: f64) -> Self {
        let mut initial_phi = vec![0.0; m];
        initial_phi[atom] = phi_a;
        NonlinearConfig { lambda, lambda_scale: 1.0, initial_phi, initial_psi: vec![0.0; m] }
    }

    pub fn effective_lambda(&self) -> f64 {
        self.lambda * self.lambda_scale
    }

    pub fn typical_flux(&self) -> f64 {
        self.initial_phi.iter().chain(&self.initial_psi).fold(0.0f64, |a, v| a.max(v.abs()))
    }

    /// Lambda Phi_typ^3 / (hbar omega_A).
    pub fn strength(&self, p: &CircuitParams) -> f64 {
        self.effective_lambda() * self.typical_flux().powi(3) / (HBAR * p.omega_a)
    }

    fn check(&self, m: usize) -> Result<()> {
        if self.initial_phi.len() != m || self.initial_psi.len() != m {
            return domain(format!(
                "initial amplitudes have lengths {}/{}, reduced system has {m} nodes",
                self.initial_phi.len(),
                self.initial_psi.len()
            ));
        }
        if !self.lambda.is_finite() || !self.lambda_scale.is_finite() {
            return domain("nonlinear coefficient must be finite");
        }
        if self.initial_phi.iter().chain(&self.initial_psi).any(|v| !v.is_finite()) {
            return domain("initial amplitudes must be finite");
        }
        Ok(())
    }
}

/// Time-major node amplitudes.
#[derive(Debug, Clone)]
pub struct ClassicalTrajectory {
    pub t_grid: Vec<f64>,
    pub phi: Vec<Vec<f64>>,
    pub psi: Vec<Vec<f64>>,
    pub strength: f64,
}

impl ClassicalTrajectory {
    pub fn node_phi(&self, j: usize) -> Vec<f64> {
        self.phi.iter().map(|row| row[j]).collect()
    }

    /// Largest |difference| over all times, nodes and both quadratures.
    pub fn max_abs_diff(&self, other: &ClassicalTrajectory) -> f64 {
        let d = |a: &Vec<Vec<f64>>, b: &Vec<Vec<f64>>| {
            a.iter().zip(b).flat_map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).abs())).fold(0.0, f64::max)
        };
        d(&self.phi, &other.phi).max(d(&self.psi, &other.psi))
    }

    /// Elementwise sum, used to form linear + correction.
    pub fn plus(&self, other: &ClassicalTrajectory) -> Result<ClassicalTrajectory> {
        if self.t_grid != other.t_grid {
            return domain("trajectories live on different grids");
        }
        let add = |a: &Vec<Vec<f64>>, b: &Vec<Vec<f64>>| {
            a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(u, v)| u + v).collect()).collect()
        };
        Ok(ClassicalTrajectory { t_grid: self.t_grid.clone(), phi: add(&self.phi, &other.phi), psi: add(&self.psi, &other.psi), strength: self.strength })
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

/// Dense C^-1 and K of the reduced system.
fn dense_operators(sys: &ReducedSystem) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let m = sys.m;
    let c = DMatrix::from_fn(m, m, |i, j| sys.c_red.get(i, j));
    let ci = c.cholesky().ok_or_else(|| QedError::Solver("C_red not positive definite".into()))?.inverse();
    let k = DMatrix::from_fn(m, m, |i, j| sys.l_red_inv.get(i, j));
    Ok((ci, k))
}

/// Passive energy 1/2 Psi^T C^-1 Psi + 1/2 Phi^T K Phi (Wb^2 units).
pub fn linear_energy(p: &CircuitParams, traj: &ClassicalTrajectory) -> Result<Vec<f64>> {
    let sys = build_reduced_system(p)?;
    let (ci, k) = dense_operators(&sys)?;
    Ok(traj
        .phi
        .iter()
        .zip(&traj.psi)
        .map(|(f, q)| {
            let f = DVector::from_column_slice(f);
            let q = DVector::from_column_slice(q);
            0.5 * q.dot(&(&ci * &q)) + 0.5 * f.dot(&(&k * &f))
        })
        .collect())
}

struct Cubic<'a> {
    ci: &'a DMatrix<f64>,
    k: &'a DMatrix<f64>,
    m: usize,
    atom: usize,
    boundary: usize,
    damping: f64,
    coeff: f64,
    limit: f64,
}

impl System<f64, DVector<f64>> for Cubic<'_> {
    fn system(&self, _t: f64, y: &DVector<f64>, dy: &mut DVector<f64>) {
        let m = self.m;
        let phi = y.rows(0, m);
        let psi = y.rows(m, m);
        let v = self.ci * psi;
        let f = self.k * phi;
        for i in 0..m {
            dy[i] = v[i];
            dy[m + i] = -f[i];
        }
        dy[m + self.boundary] -= self.damping * v[self.boundary];
        dy[m + self.atom] -= self.coeff * y[self.atom] * y[self.atom];
    }

    fn solout(&mut self, _t: f64, y: &DVector<f64>, _dy: &DVector<f64>) -> bool {
        let peak = y.rows(0, self.m).amax();
        !peak.is_finite() || peak > self.limit
    }
}

/// Adaptive Dormand-Prince 8(5,3) integration of the nonlinear equations
/// without noise.
pub fn integrate_nonlinear_classical(p: &CircuitParams, nl: &NonlinearConfig, t_grid: &[f64]) -> Result<ClassicalTrajectory> {
    check_grid(t_grid)?;
    let sys = build_reduced_system(p)?;
    let m = sys.m;
    nl.check(m)?;
    let (ci, k) = dense_operators(&sys)?;
    // integrate in units of the initial amplitude
    let scale = nl.typical_flux();
    let unit = if scale > 0.0 { scale } else { 1.0 };
    let coeff = 3.0 * nl.effective_lambda() * p.l * unit;
    let limit = if scale > 0.0 { BLOWUP } else { f64::INFINITY };
    let mut y = DVector::from_iterator(2 * m, nl.initial_phi.iter().chain(&nl.initial_psi).map(|v| v / unit));
    let mut t = 0.0;
    let mut traj = ClassicalTrajectory { t_grid: t_grid.to_vec(), phi: Vec::new(), psi: Vec::new(), strength: nl.strength(p) };
    for &target in t_grid {
        if target > t {
            let span = target - t;
            let rhs = Cubic { ci: &ci, k: &k, m, atom: sys.atom_index, boundary: sys.boundary_index, damping: sys.damping, coeff, limit };
            let mut stepper = Dop853::from_param(
                rhs,
                0.0,
                span,
                span,
                y.clone(),
                1e-10,
                1e-10,
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
            stepper.integrate().map_err(|e| QedError::Integrator(format!("{e:?} on [{t:.4}, {target:.4}]")))?;
            y = stepper.y_out().last().cloned().ok_or_else(|| QedError::Integrator("no output".into()))?;
            let peak = y.rows(0, m).amax() * unit;
            if !peak.is_finite() || (scale > 0.0 && peak > BLOWUP * scale) {
                return Err(QedError::Instability(format!("|Phi| = {peak:e} near t~ = {target:.4} exceeds {BLOWUP:e} x initial {scale:e}")));
            }
            t = target;
        }
        traj.phi.push(y.rows(0, m).iter().map(|v| v * unit).collect());
        traj.psi.push(y.rows(m, m).iter().map(|v| v * unit).collect());
    }
    Ok(traj)
}

/// Linear evolution from the initial amplitudes by the pole expansion:
/// Phi(t) = sum_p e^{s_p t} R_p [(s_p C + D) Phi0 + Psi0], Psi = C Phi'.
pub fn linear_classical(p: &CircuitParams, nl: &NonlinearConfig, t_grid: &[f64]) -> Result<ClassicalTrajectory> {
    check_grid(t_grid)?;
    let sys = build_reduced_system(p)?;
    nl.check(sys.m)?;
    let modes = solve_quadratic_modes(&sys)?;
    linear_from_modes(&sys, &modes, nl, t_grid, nl.strength(p))
}

fn linear_from_modes(sys: &ReducedSystem, modes: &ModeSet, nl: &NonlinearConfig, t_grid: &[f64], strength: f64) -> Result<ClassicalTrajectory> {
    let m = sys.m;
    let phi0: Vec<C64> = nl.initial_phi.iter().map(|&v| C64::new(v, 0.0)).collect();
    let cphi0 = sys.c_red.matvec_c(&phi0);
    // per pole: amplitude u^H b / d, and the two observation vectors v, C v s
    let mut terms = Vec::new();
    for pi in modes.active() {
        let s = modes.poles[pi];
        let mut b: Vec<C64> = (0..m).map(|i| s * cphi0[i] + nl.initial_psi[i]).collect();
        b[sys.boundary_index] += sys.damping * phi0[sys.boundary_index];
        let amp: C64 = modes.left[pi].iter().zip(&b).map(|(u, x)| u.conj() * x).sum::<C64>() / modes.denominators[pi];
        let v = &modes.right[pi];
        let cv = sys.c_red.matvec_c(v);
        terms.push((s, amp, v.clone(), cv));
    }
    let mut traj = ClassicalTrajectory { t_grid: t_grid.to_vec(), phi: Vec::new(), psi: Vec::new(), strength };
    for &t in t_grid {
        let mut phi = vec![C64::new(0.0, 0.0); m];
        let mut psi = vec![C64::new(0.0, 0.0); m];
        for (s, amp, v, cv) in &terms {
            let e = (s * t).exp() * amp;
            for i in 0..m {
                phi[i] += e * v[i];
                psi[i] += e * s * cv[i];
            }
        }
        traj.phi.push(phi.iter().map(|z| z.re).collect());
        traj.psi.push(psi.iter().map(|z| z.re).collect());
    }
    Ok(traj)
}

/// Response of every node to a force f(t~) applied at the atom row, from rest:
/// Phi_j = sum_p (R_p)_{j,A} I_p, Psi_j = sum_p s_p (C R_p)_{j,A} I_p with
/// I_p(t) = int_0^t e^{s_p (t - tau)} f(tau) dtau by the trapezoidal rule.
pub fn propagate_atom_force(sys: &ReducedSystem, modes: &ModeSet, t_grid: &[f64], force: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let n = t_grid.len();
    if force.len() != n {
        return domain(format!("source has {} samples, grid has {n}", force.len()));
    }
    check_uniform(t_grid)?;
    let m = sys.m;
    let a = sys.atom_index;
    let h = if n > 1 { t_grid[1] - t_grid[0] } else { 0.0 };
    let active = modes.active();
    let cols: Vec<(C64, Vec<C64>, Vec<C64>)> = active
        .iter()
        .map(|&pi| {
            let col = modes.residue_column(pi, a);
            let ccol = sys.c_red.matvec_c(&col);
            (modes.poles[pi], col, ccol)
        })
        .collect();
    let mut integrals = vec![C64::new(0.0, 0.0); cols.len()];
    let decay: Vec<C64> = cols.iter().map(|(s, _, _)| (s * h).exp()).collect();
    let mut phi_out = Vec::with_capacity(n);
    let mut psi_out = Vec::with_capacity(n);
    for step in 0..n {
        if step > 0 {
            let (f0, f1) = (force[step - 1], force[step]);
            for (ip, e) in integrals.iter_mut().zip(&decay) {
                *ip = e * *ip + 0.5 * h * (e * f0 + f1);
            }
        }
        let mut phi = vec![C64::new(0.0, 0.0); m];
        let mut psi = vec![C64::new(0.0, 0.0); m];
        for ((s, col, ccol), ip) in cols.iter().zip(&integrals) {
            for j in 0..m {
                phi[j] += col[j] * ip;
                psi[j] += s * ccol[j] * ip;
            }
        }
        phi_out.push(phi.iter().map(|z| z.re).collect());
        psi_out.push(psi.iter().map(|z| z.re).collect());
    }
    Ok((phi_out, psi_out))
}

fn check_uniform(t_grid: &[f64]) -> Result<()> {
    check_grid(t_grid)?;
    if t_grid[0] != 0.0 {
        return domain(format!("convolution grid must start at t~ = 0, starts at {}", t_grid[0]));
    }
    let n = t_grid.len();
    if n > 1 {
        let h = t_grid[1] - t_grid[0];
        if t_grid.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h) {
            return domain("convolution needs a uniform time grid");
        }
    }
    Ok(())
}

/// First-order correction driven by -3 Lambda L (Phi_A^(0))^2 evaluated on
/// the linear trajectory's grid.
pub fn first_order_correction(p: &CircuitParams, nl: &NonlinearConfig, linear: &ClassicalTrajectory) -> Result<ClassicalTrajectory> {
    let sys = build_reduced_system(p)?;
    nl.check(sys.m)?;
    if linear.phi.len() != linear.t_grid.len() || linear.phi.iter().any(|r| r.len() != sys.m) {
        return domain("linear trajectory does not match the reduced system or its grid");
    }
    let modes = solve_quadratic_modes(&sys)?;
    correction_from_modes(&sys, &modes, p, nl, linear)
}

fn correction_from_modes(sys: &ReducedSystem, modes: &ModeSet, p: &CircuitParams, nl: &NonlinearConfig, linear: &ClassicalTrajectory) -> Result<ClassicalTrajectory> {
    let coeff = -3.0 * nl.effective_lambda() * p.l;
    let force: Vec<f64> = linear.phi.iter().map(|r| coeff * r[sys.atom_index] * r[sys.atom_index]).collect();
    let (phi, psi) = propagate_atom_force(sys, modes, &linear.t_grid, &force)?;
    Ok(ClassicalTrajectory { t_grid: linear.t_grid.clone(), phi, psi, strength: nl.strength(p) })
}

/// Direct, linear and first-order trajectories for one configuration.
#[derive(Debug, Clone)]
pub struct PerturbationComparison {
    pub direct: ClassicalTrajectory,
    pub linear: ClassicalTrajectory,
    pub correction: ClassicalTrajectory,
    /// sup |direct - (linear + correction)|
    pub residual: f64,
    /// sup |direct - linear|
    pub deviation: f64,
}

pub fn compare_perturbation(p: &CircuitParams, nl: &NonlinearConfig, t_grid: &[f64]) -> Result<PerturbationComparison> {
    check_uniform(t_grid)?;
    let sys = build_reduced_system(p)?;
    nl.check(sys.m)?;
    let modes = solve_quadratic_modes(&sys)?;
    let linear = linear_from_modes(&sys, &modes, nl, t_grid, nl.strength(p))?;
    let correction = correction_from_modes(&sys, &modes, p, nl, &linear)?;
    let direct = integrate_nonlinear_classical(p, nl, t_grid)?;
    let residual = direct.max_abs_diff(&linear.plus(&correction)?);
    let deviation = direct.max_abs_diff(&linear);
    Ok(PerturbationComparison { direct, linear, correction, residual, deviation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::angular;

    fn setup(n: usize) -> (CircuitParams, ReducedSystem) {
        let p = CircuitParams::reference().with_n(n).with_chi(1.0).with_omega_a(angular(5e9));
        let sys = build_reduced_system(&p).unwrap();
        (p, sys)
    }

    fn grid(h: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64 * h).collect()
    }

    #[test]
    fn zero_lambda_is_linear() {
        let (p, sys) = setup(3);
        let nl = NonlinearConfig::atom_displaced(sys.m, sys.atom_index, 0.0, 1e-16);
        let t = grid(0.1, 200);
        let a = integrate_nonlinear_classical(&p, &nl, &t).unwrap();
        let b = linear_classical(&p, &nl, &t).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-8 * 1e-16, "{}", a.max_abs_diff(&b));
    }

    #[test]
    fn passive_energy_decreases() {
        let (p, sys) = setup(3);
        let nl = NonlinearConfig::atom_displaced(sys.m, sys.atom_index, 0.0, 1e-16);
        let t = grid(0.25, 200);
        let e = linear_energy(&p, &integrate_nonlinear_classical(&p, &nl, &t).unwrap()).unwrap();
        assert!(e.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)));
        assert!(e[e.len() - 1] < e[0]);
    }

    #[test]
    fn zero_source_zero_correction() {
        let (_, sys) = setup(2);
        let modes = solve_quadratic_modes(&sys).unwrap();
        let t = grid(0.1, 50);
        let (phi, psi) = propagate_atom_force(&sys, &modes, &t, &vec![0.0; 50]).unwrap();
        assert!(phi.iter().chain(&psi).flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn correction_is_linear_in_source() {
        let (_, sys) = setup(4);
        let modes = solve_quadratic_modes(&sys).unwrap();
        let t = grid(0.05, 400);
        let f1: Vec<f64> = t.iter().map(|x| (0.7 * x).sin()).collect();
        let f2: Vec<f64> = t.iter().map(|x| (-0.1 * x).exp()).collect();
        let sum: Vec<f64> = f1.iter().zip(&f2).map(|(a, b)| a + b).collect();
        let (a, _) = propagate_atom_force(&sys, &modes, &t, &f1).unwrap();
        let (b, _) = propagate_atom_force(&sys, &modes, &t, &f2).unwrap();
        let (c, _) = propagate_atom_force(&sys, &modes, &t, &sum).unwrap();
        let scale = c.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        for ((x, y), z) in a.iter().flatten().zip(b.iter().flatten()).zip(c.iter().flatten()) {
            assert!((x + y - z).abs() < 1e-10 * scale);
        }
    }

    #[test]
    fn nonlinearity_radiates_to_boundary() {
        let (p, sys) = setup(2);
        let nl = NonlinearConfig::atom_displaced(sys.m, sys.atom_index, 1e21, 1e-16);
        let t = grid(0.05, 200);
        let lin = linear_classical(&p, &nl, &t).unwrap();
        let corr = first_order_correction(&p, &nl, &lin).unwrap();
        let b = corr.node_phi(sys.boundary_index);
        assert!(b.iter().any(|v| v.abs() > 0.0));
    }

    #[test]
    fn escape_over_barrier_is_instability() {
        let (p, sys) = setup(1);
        let nl = NonlinearConfig::atom_displaced(sys.m, sys.atom_index, 3e23, 1e-16);
        let t = grid(0.02, 1000);
        assert!(matches!(integrate_nonlinear_classical(&p, &nl, &t), Err(QedError::Instability(_))));
    }

    #[test]
    fn grid_mismatch_rejected() {
        let (p, sys) = setup(1);
        let nl = NonlinearConfig::atom_displaced(sys.m, sys.atom_index, 1e21, 1e-16);
        let t = vec![0.0, 0.1, 0.3];
        let lin = linear_classical(&p, &nl, &t).unwrap();
        assert!(matches!(first_order_correction(&p, &nl, &lin), Err(QedError::Domain(_))));
        let bad = NonlinearConfig { initial_phi: vec![0.0; 1], ..nl };
        assert!(integrate_nonlinear_classical(&p, &bad, &[0.0, 1.0]).is_err());
    }
}
