//! Open-system poles (quadratic eigenproblem) and closed-array modes.

use crate::circuit::{bidiag_solve_lower, bidiag_solve_upper, CircuitParams, ClosedJja, ReducedSystem, SymTridiag};
use crate::error::{domain, QedError, Result};
use crate::tridiag::{dot_h, dq_apply, norm, normalize, q_apply, smallest_singular_triplet};
use faer::linalg::solvers::GeneralizedEigen;
use faer::{Mat, Side};
use num_complex::Complex64 as C64;
use std::f64::consts::PI;

/// Poles closer than this (dimensionless) are merged and flagged.
pub const MERGE_TOL: f64 = 1e-9;
/// |u^H Q' v| below this marks a defective pole.
pub const DEFECTIVE_TOL: f64 = 1e-12;
const ZERO_CLUSTER_TOL: f64 = 1e-6;

/// Poles of the propagator with their null vectors. Residues are kept in
/// rank-one form R_p = v_p u_p^H / d_p.
#[derive(Debug, Clone)]
pub struct ModeSet {
    pub m: usize,
    pub poles: Vec<C64>,
    pub right: Vec<Vec<C64>>,
    pub left: Vec<Vec<C64>>,
    /// d_p = u_p^H Q'(s_p) v_p.
    pub denominators: Vec<C64>,
    pub residual_norms: Vec<f64>,
    pub defective: Vec<bool>,
    /// Number of pencil eigenvalues represented by each entry.
    pub multiplicity: Vec<usize>,
}

impl ModeSet {
    pub fn len(&self) -> usize {
        self.poles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poles.is_empty()
    }

    /// Indices of poles usable in expansions.
    pub fn active(&self) -> Vec<usize> {
        (0..self.len()).filter(|&p| !self.defective[p]).collect()
    }

    pub fn defective_multiplicity(&self) -> usize {
        (0..self.len()).filter(|&p| self.defective[p]).map(|p| self.multiplicity[p]).sum()
    }

    pub fn residue_entry(&self, p: usize, i: usize, j: usize) -> C64 {
        self.right[p][i] * self.left[p][j].conj() / self.denominators[p]
    }

    pub fn residue_matrix(&self, p: usize) -> Mat<C64> {
        Mat::from_fn(self.m, self.m, |i, j| self.residue_entry(p, i, j))
    }

    /// Column j of R_p.
    pub fn residue_column(&self, p: usize, j: usize) -> Vec<C64> {
        let f = self.left[p][j].conj() / self.denominators[p];
        self.right[p].iter().map(|z| z * f).collect()
    }

    /// Row i of R_p.
    pub fn residue_row(&self, p: usize, i: usize) -> Vec<C64> {
        let f = self.right[p][i] / self.denominators[p];
        self.left[p].iter().map(|z| z.conj() * f).collect()
    }
}

fn companion_pencil(sys: &ReducedSystem) -> (Mat<f64>, Mat<f64>) {
    let m = sys.m;
    let n2 = 2 * m;
    let mut a = Mat::<f64>::zeros(n2, n2);
    let mut b = Mat::<f64>::zeros(n2, n2);
    for i in 0..m {
        a[(i, m + i)] = 1.0;
        b[(i, i)] = 1.0;
        a[(m + i, i)] = -sys.l_red_inv.diag[i];
        b[(m + i, m + i)] = sys.c_red.diag[i];
        if i + 1 < m {
            a[(m + i, i + 1)] = -sys.l_red_inv.off[i];
            a[(m + i + 1, i)] = -sys.l_red_inv.off[i];
            b[(m + i, m + i + 1)] = sys.c_red.off[i];
            b[(m + i + 1, m + i)] = sys.c_red.off[i];
        }
    }
    a[(m + sys.boundary_index, m + sys.boundary_index)] = -sys.damping;
    (a, b)
}

/// Eigenvalues of Q(s) only, from the standard companion matrix of the
/// Cholesky-congruent problem L^-1 Q(s) L^-T (C_red = L L^T). Used where
/// many solves are needed and vectors come from inverse iteration.
pub fn pencil_eigenvalues(sys: &ReducedSystem) -> Result<Vec<C64>> {
    let m = sys.m;
    let (d, e) = sys.c_red.cholesky()?;
    let w = congruent(&d, &e, &sys.l_red_inv);
    let mut g = vec![0.0; m];
    g[sys.boundary_index] = 1.0;
    bidiag_solve_lower(&d, &e, &mut g);
    let mut h = Mat::<f64>::zeros(2 * m, 2 * m);
    for i in 0..m {
        h[(i, m + i)] = 1.0;
        for j in 0..m {
            h[(m + i, j)] = -w[(i, j)];
            h[(m + i, m + j)] = -sys.damping * g[i] * g[j];
        }
    }
    h.eigenvalues().map_err(|e| QedError::Solver(format!("eigenvalue iteration did not converge: {e:?}")))
}

// L^-1 K L^-T for lower bidiagonal L = (d, e).
fn congruent(d: &[f64], e: &[f64], k: &SymTridiag) -> Mat<f64> {
    let n = d.len();
    let kd = k.to_dense();
    let mut y = Mat::<f64>::zeros(n, n);
    let mut col = vec![0.0; n];
    for j in 0..n {
        for i in 0..n {
            col[i] = kd[(i, j)];
        }
        bidiag_solve_lower(d, e, &mut col);
        for i in 0..n {
            y[(i, j)] = col[i];
        }
    }
    let mut w = Mat::<f64>::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            col[i] = y[(j, i)];
        }
        bidiag_solve_lower(d, e, &mut col);
        for i in 0..n {
            w[(i, j)] = col[i];
        }
    }
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (w[(i, j)] + w[(j, i)]);
            w[(i, j)] = avg;
            w[(j, i)] = avg;
        }
    }
    w
}

/// All eigenpairs of the first-companion pencil, unrefined. Vectors are
/// the top halves of the pencil eigenvectors, unit-normalized.
pub fn pencil_eigenpairs(sys: &ReducedSystem) -> Result<Vec<(C64, Vec<C64>)>> {
    let m = sys.m;
    let n2 = 2 * m;
    let (a, b) = companion_pencil(sys);
    let ge = GeneralizedEigen::new_from_real(a.as_ref(), b.as_ref())
        .map_err(|e| QedError::Solver(format!("QZ did not converge on the {n2}x{n2} pencil: {e:?}")))?;
    let sa = ge.S_a();
    let sb = ge.S_b();
    let u = ge.U();
    let mut out = Vec::with_capacity(n2);
    for i in 0..n2 {
        let beta = sb[i];
        if beta.norm() == 0.0 {
            return Err(QedError::Solver(format!("infinite eigenvalue in pencil (index {i}); B should be nonsingular")));
        }
        let s = sa[i] / beta;
        let mut v: Vec<C64> = (0..m).map(|r| u[(r, i)]).collect();
        if norm(&v) == 0.0 {
            v = (0..m).map(|r| u[(m + r, i)]).collect();
        }
        normalize(&mut v);
        out.push((s, v));
    }
    Ok(out)
}

/// Right null vector of Q(s) by inverse iteration from a fixed dense start.
pub fn null_vector(sys: &ReducedSystem, s: C64) -> Vec<C64> {
    let (dl, d, du) = crate::tridiag::q_bands(sys, s);
    let lu = crate::tridiag::TriLu::new(dl, d, du);
    let m = sys.m;
    let mut x: Vec<C64> = (0..m).map(|i| C64::new(1.0 + 0.37 * (i as f64 / m as f64), 0.0)).collect();
    for _ in 0..2 {
        lu.solve(&mut x);
        normalize(&mut x);
    }
    x
}

struct Refined {
    s: C64,
    u: Vec<C64>,
    v: Vec<C64>,
    denom: C64,
    residual: f64,
}

fn refine_pole(sys: &ReducedSystem, s0: C64, v0: &[C64]) -> Refined {
    let mut s = s0;
    let (_, mut u, mut v) = smallest_singular_triplet(sys, s, v0, 2);
    for _ in 0..4 {
        let qv = q_apply(sys, s, &v);
        let num = dot_h(&u, &qv);
        let den = dot_h(&u, &dq_apply(sys, s, &v));
        if den.norm() == 0.0 {
            break;
        }
        let ds = num / den;
        let scale = s.norm().max(1.0);
        if ds.norm() > 1e-6 * scale {
            break;
        }
        s -= ds;
        let t = smallest_singular_triplet(sys, s, &v, 2);
        u = t.1;
        v = t.2;
        if ds.norm() < 1e-15 * scale {
            break;
        }
    }
    let denom = dot_h(&u, &dq_apply(sys, s, &v));
    let residual = norm(&q_apply(sys, s, &v));
    Refined { s, u, v, denom, residual }
}

fn order_key(s: &C64) -> (f64, f64) {
    (s.im, s.re)
}

/// Solves Q(s) v = 0 for every pole; see [`ModeSet`].
pub fn solve_quadratic_modes(sys: &ReducedSystem) -> Result<ModeSet> {
    let m = sys.m;
    let mut pairs = pencil_eigenpairs(sys)?;
    pairs.sort_by(|a, b| order_key(&a.0).partial_cmp(&order_key(&b.0)).unwrap_or(std::cmp::Ordering::Equal));

    // The boundary row of K is zero, so s = 0 is always a root.
    let (zero, rest): (Vec<_>, Vec<_>) = pairs.into_iter().partition(|(s, _)| s.norm() < ZERO_CLUSTER_TOL);

    let mut set = ModeSet {
        m,
        poles: Vec::new(),
        right: Vec::new(),
        left: Vec::new(),
        denominators: Vec::new(),
        residual_norms: Vec::new(),
        defective: Vec::new(),
        multiplicity: Vec::new(),
    };

    if !zero.is_empty() {
        let mut e = vec![C64::new(0.0, 0.0); m];
        e[sys.boundary_index] = C64::new(1.0, 0.0);
        let simple = zero.len() == 1 && sys.damping > 0.0;
        let residual = norm(&q_apply(sys, C64::new(0.0, 0.0), &e));
        set.poles.push(C64::new(0.0, 0.0));
        set.right.push(e.clone());
        set.left.push(e);
        set.denominators.push(C64::new(sys.damping, 0.0));
        set.residual_norms.push(residual);
        set.defective.push(!simple);
        set.multiplicity.push(zero.len());
    }

    let mut used = vec![false; rest.len()];
    for i in 0..rest.len() {
        if used[i] {
            continue;
        }
        used[i] = true;
        let (s, ref v) = rest[i];
        let mut mult = 1;
        for j in i + 1..rest.len() {
            if !used[j] && (rest[j].0 - s).norm() < MERGE_TOL * s.norm().max(1.0) {
                used[j] = true;
                mult += 1;
            }
        }
        let r = refine_pole(sys, s, v);
        let defective = mult > 1 || r.denom.norm() < DEFECTIVE_TOL;
        set.poles.push(r.s);
        set.right.push(r.v);
        set.left.push(r.u);
        set.denominators.push(r.denom);
        set.residual_norms.push(r.residual);
        set.defective.push(defective);
        set.multiplicity.push(mult);
    }
    Ok(set)
}

/// Generalized symmetric-definite eigenpairs of (K, C) for tridiagonal
/// matrices: ascending eigenvalues and vectors with X^T C X = I.
pub fn sym_tridiag_generalized(c: &SymTridiag, k: &SymTridiag) -> Result<(Vec<f64>, Mat<f64>)> {
    let n = c.dim();
    let (d, e) = c.cholesky()?;
    let w = congruent(&d, &e, k);
    let mut col = vec![0.0; n];
    let eig = w
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| QedError::Solver(format!("symmetric eigensolver failed: {e:?}")))?;
    let s = eig.S();
    let u = eig.U();
    let vals: Vec<f64> = (0..n).map(|i| s[i]).collect();
    let mut x = Mat::<f64>::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            col[i] = u[(i, j)];
        }
        bidiag_solve_upper(&d, &e, &mut col);
        for i in 0..n {
            x[(i, j)] = col[i];
        }
    }
    Ok((vals, x))
}

/// Closed-array eigenfrequencies and modes.
#[derive(Debug, Clone)]
pub struct JjaModeSet {
    /// Angular frequencies (rad/s), ascending.
    pub frequencies: Vec<f64>,
    /// Column k is Phi_k with Phi_k^T C_JJA Phi_k' = (C_g + 2C) delta.
    pub modes: Mat<f64>,
    pub norm_capacitance: f64,
}

impl JjaModeSet {
    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    /// Phi_k at the first array node.
    pub fn first_node(&self, k: usize) -> f64 {
        self.modes[(0, k)]
    }

    pub fn mode(&self, k: usize) -> Vec<f64> {
        (0..self.modes.nrows()).map(|i| self.modes[(i, k)]).collect()
    }
}

pub fn solve_closed_jja_modes(jja: &ClosedJja) -> Result<JjaModeSet> {
    let n = jja.c.dim();
    let (vals, mut x) = sym_tridiag_generalized(&jja.c, &jja.l_inv)?;
    // X^T (C_dimless) X = I, while the convention is X^T C_SI X = C_g + 2C
    let f = (jja.norm_capacitance / jja.c_unit).sqrt();
    for k in 0..n {
        let sign = if x[(0, k)] < 0.0 { -f } else { f };
        for i in 0..n {
            x[(i, k)] *= sign;
        }
    }
    let frequencies = vals.iter().map(|&l| jja.omega0 * l.max(0.0).sqrt()).collect();
    Ok(JjaModeSet { frequencies, modes: x, norm_capacitance: jja.norm_capacitance })
}

/// Real normal-mode frequencies (rad/s) of a lossless tridiagonal system.
pub fn closed_frequencies(sys: &ClosedJja) -> Result<Vec<f64>> {
    let (vals, _) = sym_tridiag_generalized(&sys.c, &sys.l_inv)?;
    Ok(vals.iter().map(|&l| sys.omega0 * l.max(0.0).sqrt()).collect())
}

/// Boundary conditions of the large-N analytic array modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryCondition {
    /// Neumann at both ends (weak coupler).
    NN,
    /// Dirichlet at the atomic end, Neumann at the waveguide end.
    DN,
}

fn wave_argument(k: usize, bc: BoundaryCondition, n: usize) -> f64 {
    match bc {
        BoundaryCondition::NN => k as f64 * PI / n as f64,
        BoundaryCondition::DN => (k as f64 + 0.5) * PI / n as f64,
    }
}

pub fn analytic_dispersion(k: usize, bc: BoundaryCondition, p: &CircuitParams) -> Result<f64> {
    if k > p.n {
        return domain(format!("mode number {k} outside [0, {}]", p.n));
    }
    let x = wave_argument(k, bc, p.n);
    let one_minus = 1.0 - x.cos();
    Ok(p.omega0() * (one_minus / (p.c_g / (2.0 * p.c) + one_minus)).sqrt())
}

pub fn analytic_mode(k: usize, node: usize, bc: BoundaryCondition, p: &CircuitParams) -> Result<f64> {
    if k > p.n {
        return domain(format!("mode number {k} outside [0, {}]", p.n));
    }
    if node < 1 || node > p.n {
        return domain(format!("node {node} outside [1, {}]", p.n));
    }
    let x = wave_argument(k, bc, p.n);
    let amp = ((p.c_g + 2.0 * p.c) / (p.n as f64 * (p.c * (1.0 - x.cos()) + 0.5 * p.c_g))).sqrt();
    let phase = x * node as f64;
    Ok(match bc {
        BoundaryCondition::NN => amp * phase.cos(),
        BoundaryCondition::DN => amp * phase.sin(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{build_closed_jja, build_closed_system, build_reduced_system};

    fn params(n: usize, chi: f64) -> CircuitParams {
        CircuitParams::reference().with_n(n).with_chi(chi)
    }

    #[test]
    fn pole_contract_small() {
        let sys = build_reduced_system(&params(12, 1.0)).unwrap();
        let ms = solve_quadratic_modes(&sys).unwrap();
        assert_eq!(ms.defective_multiplicity(), 0);
        assert_eq!(ms.len(), 2 * sys.m);
        for p in 0..ms.len() {
            let s = ms.poles[p];
            assert!(s.re <= 1e-10, "passivity {s}");
            assert!(ms.residual_norms[p] < 1e-8, "residual {}", ms.residual_norms[p]);
            let has_conj = ms.poles.iter().any(|q| (q - s.conj()).norm() < 1e-8 * s.norm().max(1.0));
            assert!(has_conj);
        }
    }

    #[test]
    fn zero_pole_residue() {
        let sys = build_reduced_system(&params(10, 0.5)).unwrap();
        let ms = solve_quadratic_modes(&sys).unwrap();
        let z = ms.poles.iter().position(|s| s.norm() == 0.0).unwrap();
        assert!(!ms.defective[z]);
        for j in 0..sys.m {
            assert!(ms.residue_entry(z, 0, j).norm() < 1e-10);
        }
        let want = 1.0 / sys.damping;
        assert!((ms.residue_entry(z, sys.boundary_index, sys.boundary_index).re - want).abs() < 1e-12 * want);
    }

    #[test]
    fn left_vector_is_conjugate_of_right() {
        let sys = build_reduced_system(&params(8, 0.2)).unwrap();
        let ms = solve_quadratic_modes(&sys).unwrap();
        for p in ms.active() {
            let ov = dot_h(&ms.left[p], &ms.right[p].iter().map(|z| z.conj()).collect::<Vec<_>>());
            assert!((ov.norm() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn lossless_limit_is_imaginary() {
        let mut p = params(6, 0.8);
        p.z_w = f64::INFINITY;
        let sys = build_reduced_system(&p).unwrap();
        let ms = solve_quadratic_modes(&sys).unwrap();
        let z = ms.poles.iter().position(|s| s.norm() == 0.0).unwrap();
        assert!(ms.defective[z]);
        assert_eq!(ms.multiplicity[z], 2);
        for p in ms.active() {
            assert!(ms.poles[p].re.abs() < 1e-10);
        }
    }

    #[test]
    fn closed_modes_normalized() {
        let p = params(40, 0.3);
        let jja = build_closed_jja(&p).unwrap();
        let modes = solve_closed_jja_modes(&jja).unwrap();
        let c = jja.c.scaled(p.c);
        let norm_c = p.c_g + 2.0 * p.c;
        for k in 0..40 {
            assert!(modes.first_node(k) >= 0.0);
            let ck = c.matvec(&modes.mode(k));
            for k2 in 0..40 {
                let v: f64 = modes.mode(k2).iter().zip(&ck).map(|(a, b)| a * b).sum();
                let want = if k == k2 { norm_c } else { 0.0 };
                assert!((v - want).abs() < 1e-10 * norm_c);
            }
        }
        for w in modes.frequencies.windows(2) {
            assert!(w[0] <= w[1]);
        }
        assert!(*modes.frequencies.last().unwrap() <= p.band_top() * (1.0 + 1e-6));
    }

    #[test]
    fn eigenvalue_paths_agree() {
        let sys = build_reduced_system(&params(15, 0.4)).unwrap();
        let key = |a: &C64, b: &C64| (a.im, a.re).partial_cmp(&(b.im, b.re)).unwrap();
        let mut fast = pencil_eigenvalues(&sys).unwrap();
        let mut qz: Vec<C64> = pencil_eigenpairs(&sys).unwrap().into_iter().map(|x| x.0).collect();
        fast.sort_by(key);
        qz.sort_by(key);
        for (a, b) in fast.iter().zip(&qz) {
            assert!((a - b).norm() < 1e-9 * b.norm().max(1.0));
        }
    }

    #[test]
    fn dispersion_edge_values() {
        let p = params(100, 1.0);
        assert_eq!(analytic_dispersion(0, BoundaryCondition::NN, &p).unwrap(), 0.0);
        let top = analytic_dispersion(100, BoundaryCondition::NN, &p).unwrap();
        assert!((top - p.band_top()).abs() < 1e-9 * top);
        assert!(analytic_dispersion(101, BoundaryCondition::NN, &p).is_err());
        assert!(analytic_mode(1, 0, BoundaryCondition::DN, &p).is_err());
        // interlacing
        for k in 0..99 {
            let a = analytic_dispersion(k, BoundaryCondition::NN, &p).unwrap();
            let b = analytic_dispersion(k, BoundaryCondition::DN, &p).unwrap();
            let c = analytic_dispersion(k + 1, BoundaryCondition::NN, &p).unwrap();
            assert!(a < b && b < c);
        }
    }

    #[test]
    fn closed_system_matches_lossless_pencil() {
        let mut p = params(5, 0.6);
        p.c_c = 1e-30;
        p.c_w = 1e-15;
        p.z_w = f64::INFINITY;
        let closed = closed_frequencies(&build_closed_system(&p).unwrap()).unwrap();
        let sys = build_reduced_system(&p).unwrap();
        let ms = solve_quadratic_modes(&sys).unwrap();
        let mut open: Vec<f64> = ms.active().iter().map(|&i| ms.poles[i].im * sys.omega0).filter(|w| *w > 0.0).collect();
        open.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(open.len(), closed.len());
        for (a, b) in open.iter().zip(&closed) {
            assert!((a - b).abs() < 1e-8 * b);
        }
    }
}
