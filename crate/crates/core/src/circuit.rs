//! Circuit parameters and the dimensionless reduced-subspace matrices.
//!
//! Node ordering (0-based): atom = 0, array nodes 1..=N, first waveguide
//! node = N+1. In the 1-based labelling {A, 1..N, 0^W} the atom is A and
//! the waveguide node is 0^W.

use crate::error::{domain, Result};
use crate::units::{E_CHARGE, HBAR};
use faer::Mat;
use num_complex::Complex64 as C64;

/// Physical element values, all SI.
#[derive(Debug, Clone, PartialEq)]
pub struct CircuitParams {
    pub n: usize,
    pub l: f64,
    pub c: f64,
    pub c_g: f64,
    pub c_c: f64,
    /// Ground capacitance of the retained waveguide node; 0 keeps only C_c.
    pub c_w: f64,
    pub chi: f64,
    /// Atomic charging energy (J).
    pub e_c_a: f64,
    pub omega_a: f64,
    /// Waveguide impedance; `f64::INFINITY` closes the system.
    pub z_w: f64,
    pub temperature: f64,
}

impl CircuitParams {
    /// The reference parameter set: N = 1000, L = 1 nH, C = 150 fF,
    /// C_g = 0.1 fF, C_c = 100 fF, E_C/h = 15 GHz, omega_A/2pi = 15 GHz,
    /// Z_W = 50 ohm, chi = 1, T = 0.
    pub fn reference() -> Self {
        let w15 = crate::units::angular(15e9);
        CircuitParams {
            n: 1000,
            l: 1e-9,
            c: 150e-15,
            c_g: 0.1e-15,
            c_c: 100e-15,
            c_w: 0.0,
            chi: 1.0,
            e_c_a: HBAR * w15,
            omega_a: w15,
            z_w: 50.0,
            temperature: 0.0,
        }
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn with_chi(mut self, chi: f64) -> Self {
        self.chi = chi;
        self
    }

    pub fn with_omega_a(mut self, omega_a: f64) -> Self {
        self.omega_a = omega_a;
        self
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return domain("N must be at least 1");
        }
        let named = [
            ("L", self.l),
            ("C", self.c),
            ("C_g", self.c_g),
            ("C_c", self.c_c),
            ("E_C_A", self.e_c_a),
            ("omega_A", self.omega_a),
            ("Z_W", self.z_w),
        ];
        for (name, v) in named {
            if !(v > 0.0) {
                return domain(format!("{name} must be strictly positive, got {v}"));
            }
        }
        if !(self.chi >= 0.0) || !self.chi.is_finite() {
            return domain(format!("chi must be finite and >= 0, got {}", self.chi));
        }
        if !(self.c_w >= 0.0) || !self.c_w.is_finite() {
            return domain(format!("C_W must be finite and >= 0, got {}", self.c_w));
        }
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return domain(format!("temperature must be >= 0, got {}", self.temperature));
        }
        Ok(())
    }

    /// Characteristic impedance sqrt(L/C).
    pub fn z0(&self) -> f64 {
        (self.l / self.c).sqrt()
    }

    /// Plasma frequency 1/sqrt(LC).
    pub fn omega0(&self) -> f64 {
        1.0 / (self.l * self.c).sqrt()
    }

    /// Band edge 1/sqrt(L(C_g/2 + C)).
    pub fn omega_c(&self) -> f64 {
        1.0 / (self.l * (0.5 * self.c_g + self.c)).sqrt()
    }

    /// Supremum of the large-N dispersion (argument pi).
    pub fn band_top(&self) -> f64 {
        self.omega0() * (2.0 / (self.c_g / (2.0 * self.c) + 2.0)).sqrt()
    }

    pub fn atom_elements(&self) -> Result<(f64, f64)> {
        derive_atom_elements(self.e_c_a, self.omega_a)
    }

    /// Coupler capacitance chi*C.
    pub fn c0(&self) -> f64 {
        self.chi * self.c
    }

    /// Coupler inverse inductance chi/L.
    pub fn inv_l0(&self) -> f64 {
        self.chi / self.l
    }
}

/// C_A = e^2/(2 E_C), L_A = 1/(omega_A^2 C_A).
pub fn derive_atom_elements(e_c_a: f64, omega_a: f64) -> Result<(f64, f64)> {
    if !(e_c_a > 0.0) || !(omega_a > 0.0) {
        return domain("E_C_A and omega_A must be positive");
    }
    let c_a = E_CHARGE * E_CHARGE / (2.0 * e_c_a);
    let l_a = 1.0 / (omega_a * omega_a * c_a);
    Ok((c_a, l_a))
}

/// Real symmetric tridiagonal matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTridiag {
    pub diag: Vec<f64>,
    /// `off[i]` couples rows i and i+1.
    pub off: Vec<f64>,
}

impl SymTridiag {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let n = self.dim();
        Mat::from_fn(n, n, |i, j| {
            if i == j {
                self.diag[i]
            } else if i + 1 == j {
                self.off[i]
            } else if j + 1 == i {
                self.off[j]
            } else {
                0.0
            }
        })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.diag[i]
        } else if i + 1 == j {
            self.off[i]
        } else if j + 1 == i {
            self.off[j]
        } else {
            0.0
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut acc = self.diag[i] * x[i];
            if i > 0 {
                acc += self.off[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                acc += self.off[i] * x[i + 1];
            }
            y[i] = acc;
        }
        y
    }

    pub fn matvec_c(&self, x: &[C64]) -> Vec<C64> {
        let n = self.dim();
        (0..n)
            .map(|i| {
                let mut acc = x[i] * self.diag[i];
                if i > 0 {
                    acc += x[i - 1] * self.off[i - 1];
                }
                if i + 1 < n {
                    acc += x[i + 1] * self.off[i];
                }
                acc
            })
            .collect()
    }

    pub fn scaled(&self, f: f64) -> SymTridiag {
        SymTridiag {
            diag: self.diag.iter().map(|v| v * f).collect(),
            off: self.off.iter().map(|v| v * f).collect(),
        }
    }

    /// Lower bidiagonal Cholesky factor (diagonal, subdiagonal).
    pub fn cholesky(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.dim();
        let mut d = vec![0.0; n];
        let mut e = vec![0.0; n.saturating_sub(1)];
        for i in 0..n {
            let mut a = self.diag[i];
            if i > 0 {
                a -= e[i - 1] * e[i - 1];
            }
            if !(a > 0.0) {
                return Err(crate::QedError::Solver(format!(
                    "Cholesky failed at row {i}: matrix not positive definite"
                )));
            }
            d[i] = a.sqrt();
            if i + 1 < n {
                e[i] = self.off[i] / d[i];
            }
        }
        Ok((d, e))
    }
}

/// Dimensionless matrices of the atom + array + first waveguide node.
#[derive(Debug, Clone)]
pub struct ReducedSystem {
    pub m: usize,
    /// C_red in units of C.
    pub c_red: SymTridiag,
    /// L_red^-1 in units of 1/L.
    pub l_red_inv: SymTridiag,
    /// Z0/Z_W, the boundary damping coefficient.
    pub damping: f64,
    pub z0: f64,
    pub omega0: f64,
    pub boundary_index: usize,
    pub atom_index: usize,
    /// SI scale of C_red (= C).
    pub c_unit: f64,
    /// SI scale of L_red^-1 (= 1/L).
    pub inv_l_unit: f64,
}

impl ReducedSystem {
    pub fn c_dense(&self) -> Mat<f64> {
        self.c_red.to_dense()
    }

    pub fn l_inv_dense(&self) -> Mat<f64> {
        self.l_red_inv.to_dense()
    }

    /// SI capacitance and inverse-inductance matrices.
    pub fn to_si(&self) -> (Mat<f64>, Mat<f64>) {
        let c = self.c_red.scaled(self.c_unit).to_dense();
        let l = self.l_red_inv.scaled(self.inv_l_unit).to_dense();
        (c, l)
    }

    /// Dense inverse of C_red (small systems and tests).
    pub fn c_inv_dense(&self) -> Result<Mat<f64>> {
        let m = self.m;
        let (d, e) = self.c_red.cholesky()?;
        let mut inv = Mat::<f64>::zeros(m, m);
        for col in 0..m {
            let mut x = vec![0.0; m];
            x[col] = 1.0;
            bidiag_solve_lower(&d, &e, &mut x);
            bidiag_solve_upper(&d, &e, &mut x);
            for i in 0..m {
                inv[(i, col)] = x[i];
            }
        }
        Ok(inv)
    }
}

/// Solves L x = b in place, L lower bidiagonal (d, e).
pub(crate) fn bidiag_solve_lower(d: &[f64], e: &[f64], x: &mut [f64]) {
    for i in 0..d.len() {
        if i > 0 {
            x[i] -= e[i - 1] * x[i - 1];
        }
        x[i] /= d[i];
    }
}

/// Solves L^T x = b in place.
pub(crate) fn bidiag_solve_upper(d: &[f64], e: &[f64], x: &mut [f64]) {
    let n = d.len();
    for i in (0..n).rev() {
        if i + 1 < n {
            x[i] -= e[i] * x[i + 1];
        }
        x[i] /= d[i];
    }
}

// Array node n (1-based) sits between a left element (coupler for n=1,
// junction otherwise) and a right element (C_c for n=N, junction otherwise).
fn stamp_array(p: &CircuitParams, c_right_end: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = p.n;
    let mut cd = vec![0.0; n];
    let mut ld = vec![0.0; n];
    for i in 0..n {
        let (c_left, l_left) = if i == 0 { (p.c0(), p.inv_l0()) } else { (p.c, 1.0 / p.l) };
        let (c_right, l_right) = if i + 1 == n { (c_right_end, 0.0) } else { (p.c, 1.0 / p.l) };
        cd[i] = p.c_g + c_left + c_right;
        ld[i] = l_left + l_right;
    }
    let co = vec![-p.c; n - 1];
    let lo = vec![-1.0 / p.l; n - 1];
    (cd, co, ld, lo)
}

pub fn build_reduced_system(p: &CircuitParams) -> Result<ReducedSystem> {
    p.validate()?;
    let (c_a, l_a) = p.atom_elements()?;
    let n = p.n;
    let m = n + 2;
    let (cd, co, ld, lo) = stamp_array(p, p.c_c);

    let mut c_diag = Vec::with_capacity(m);
    let mut l_diag = Vec::with_capacity(m);
    let mut c_off = Vec::with_capacity(m - 1);
    let mut l_off = Vec::with_capacity(m - 1);

    c_diag.push(c_a + p.c0());
    l_diag.push(1.0 / l_a + p.inv_l0());
    c_off.push(-p.c0());
    l_off.push(-p.inv_l0());
    c_diag.extend_from_slice(&cd);
    l_diag.extend_from_slice(&ld);
    c_off.extend_from_slice(&co);
    l_off.extend_from_slice(&lo);
    c_off.push(-p.c_c);
    l_off.push(0.0);
    c_diag.push(p.c_c + p.c_w);
    l_diag.push(0.0);

    let c_red = SymTridiag { diag: c_diag, off: c_off }.scaled(1.0 / p.c);
    let l_red_inv = SymTridiag { diag: l_diag, off: l_off }.scaled(p.l);
    let z0 = p.z0();
    Ok(ReducedSystem {
        m,
        c_red,
        l_red_inv,
        damping: if p.z_w.is_infinite() { 0.0 } else { z0 / p.z_w },
        z0,
        omega0: p.omega0(),
        boundary_index: m - 1,
        atom_index: 0,
        c_unit: p.c,
        inv_l_unit: 1.0 / p.l,
    })
}

/// Array-only matrices with the coupler on the first diagonal and C_c = 0.
#[derive(Debug, Clone)]
pub struct ClosedJja {
    /// Units of C.
    pub c: SymTridiag,
    /// Units of 1/L.
    pub l_inv: SymTridiag,
    pub c_unit: f64,
    pub inv_l_unit: f64,
    pub omega0: f64,
    /// C_g + 2C, the mode normalization capacitance (SI).
    pub norm_capacitance: f64,
}

pub fn build_closed_jja(p: &CircuitParams) -> Result<ClosedJja> {
    p.validate()?;
    let (cd, co, ld, lo) = stamp_array(p, 0.0);
    Ok(ClosedJja {
        c: SymTridiag { diag: cd, off: co }.scaled(1.0 / p.c),
        l_inv: SymTridiag { diag: ld, off: lo }.scaled(p.l),
        c_unit: p.c,
        inv_l_unit: 1.0 / p.l,
        omega0: p.omega0(),
        norm_capacitance: p.c_g + 2.0 * p.c,
    })
}

/// Atom + array with the waveguide removed (C_c = 0, lossless).
pub fn build_closed_system(p: &CircuitParams) -> Result<ClosedJja> {
    p.validate()?;
    let (c_a, l_a) = p.atom_elements()?;
    let (cd, co, ld, lo) = stamp_array(p, 0.0);
    let mut c = SymTridiag { diag: vec![c_a + p.c0()], off: vec![-p.c0()] };
    let mut l = SymTridiag { diag: vec![1.0 / l_a + p.inv_l0()], off: vec![-p.inv_l0()] };
    c.diag.extend_from_slice(&cd);
    c.off.extend_from_slice(&co);
    l.diag.extend_from_slice(&ld);
    l.off.extend_from_slice(&lo);
    Ok(ClosedJja {
        c: c.scaled(1.0 / p.c),
        l_inv: l.scaled(p.l),
        c_unit: p.c,
        inv_l_unit: 1.0 / p.l,
        omega0: p.omega0(),
        norm_capacitance: p.c_g + 2.0 * p.c,
    })
}
