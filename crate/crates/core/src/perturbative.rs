//! Impedance-based Purcell rates and the second-order Lamb shift.

use crate::circuit::CircuitParams;
use crate::coupling::CouplingSet;
use crate::error::{domain, QedError, Result};
use num_complex::Complex64 as C64;
use std::f64::consts::PI;

fn check_omega(p: &CircuitParams, omega: f64) -> Result<()> {
    if !(omega > 0.0) || !omega.is_finite() {
        return domain(format!("omega must be positive, got {omega}"));
    }
    let w0 = p.omega0();
    if (omega - w0).abs() < 1e-9 * w0 {
        return Err(QedError::Singularity(format!("omega = {omega:e} within 1e-9 of the junction plasma frequency")));
    }
    Ok(())
}

/// Impedance of one parallel LC junction.
pub fn z_lc(p: &CircuitParams, omega: f64) -> C64 {
    let w0 = p.omega0();
    C64::new(0.0, omega * p.l) / (1.0 - (omega / w0).powi(2))
}

/// Impedance of one ground capacitor.
pub fn z_g(p: &CircuitParams, omega: f64) -> C64 {
    C64::new(0.0, -1.0 / (omega * p.c_g))
}

/// Effective impedance seen by the atom after the full ladder recursion.
/// `n_steps` overrides the number of array nodes (0 returns Z_ext).
pub fn z_eff_steps(p: &CircuitParams, omega: f64, n_steps: usize) -> Result<C64> {
    p.validate()?;
    check_omega(p, omega)?;
    let z_ext = C64::new(p.z_w, 0.0) + C64::new(0.0, -1.0 / (omega * p.c_c));
    if n_steps == 0 {
        return Ok(z_ext);
    }
    if p.chi == 0.0 {
        return Err(QedError::Singularity("chi = 0: coupler impedance is infinite, atom decoupled".into()));
    }
    let zlc = z_lc(p, omega);
    let yg = z_g(p, omega).inv();
    let mut z = z_ext;
    for _ in 1..n_steps {
        z = zlc + (yg + z.inv()).inv();
    }
    Ok(zlc / p.chi + (yg + z.inv()).inv())
}

pub fn z_eff(p: &CircuitParams, omega: f64) -> Result<C64> {
    z_eff_steps(p, omega, p.n)
}

/// Intermediate values Z^(n), n = 0..N-1, of the recursion (no coupler).
pub fn z_eff_history(p: &CircuitParams, omega: f64) -> Result<Vec<C64>> {
    check_omega(p, omega)?;
    let zlc = z_lc(p, omega);
    let yg = z_g(p, omega).inv();
    let mut z = C64::new(p.z_w, 0.0) + C64::new(0.0, -1.0 / (omega * p.c_c));
    let mut out = vec![z];
    for _ in 1..p.n {
        z = zlc + (yg + z.inv()).inv();
        out.push(z);
    }
    Ok(out)
}

/// sqrt(Z_LC Z_g), principal branch with Re >= 0; +i for a purely
/// imaginary result above the plasma frequency.
pub fn z_infinity(p: &CircuitParams, omega: f64) -> Result<C64> {
    check_omega(p, omega)?;
    let prod = z_lc(p, omega) * z_g(p, omega);
    let mut z = prod.sqrt();
    if z.re < 0.0 {
        z = -z;
    }
    if z.re.abs() <= 1e-15 * z.norm() && omega > p.omega0() {
        z = C64::new(0.0, z.im.abs());
    }
    Ok(z)
}

/// Gamma = Re[1/Z(omega_A)] / (2 pi C_A).
pub fn purcell_pt(p: &CircuitParams, use_infinite: bool) -> Result<f64> {
    let (c_a, _) = p.atom_elements()?;
    let z = if use_infinite { z_infinity(p, p.omega_a)? } else { z_eff(p, p.omega_a)? };
    Ok(z.inv().re / (2.0 * PI * c_a))
}

/// Sum over k of (g_Phi - g_Q)^2/(w_A'' - w'_k) - (g_Phi + g_Q)^2/(w_A'' + w'_k).
pub fn lamb_shift_pt2(cs: &CouplingSet, omega0: f64) -> Result<f64> {
    let wa = cs.omega_a_dprime;
    let mut total = 0.0;
    for k in 0..cs.omega_k_prime.len() {
        let wk = cs.omega_k_prime[k];
        let (gf, gq) = (cs.g_phi[k], cs.g_q[k]);
        if gf == 0.0 && gq == 0.0 {
            continue;
        }
        if (wa - wk).abs() < 1e-6 * omega0 {
            return Err(QedError::Resonance { k });
        }
        total += (gf - gq).powi(2) / (wa - wk) - (gf + gq).powi(2) / (wa + wk);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_case_is_external() {
        let p = CircuitParams::reference();
        let w = 0.3 * p.omega0();
        let z = z_eff_steps(&p, w, 0).unwrap();
        assert_eq!(z, C64::new(50.0, -1.0 / (w * p.c_c)));
    }

    #[test]
    fn infinite_array_limits() {
        let p = CircuitParams::reference();
        let low = z_infinity(&p, p.omega0() / 100.0).unwrap();
        let want = (p.l / p.c_g).sqrt();
        assert!((low.norm() - want).abs() < 0.01 * want);
        assert!(low.im.abs() < 1e-3 * low.re);
        let hi = z_infinity(&p, 20.0 * p.omega0()).unwrap();
        assert_eq!(hi.re, 0.0);
        assert!(hi.im > 0.0);
        assert!((hi.norm() - want / 20.0).abs() < 0.01 * want / 20.0);
        let near = z_infinity(&p, p.omega0() * (1.0 - 1e-6)).unwrap();
        assert!(near.norm() > 100.0 * want);
        assert!(z_infinity(&p, p.omega0()).is_err());
    }

    #[test]
    fn passive_admittance() {
        let p = CircuitParams::reference().with_n(200);
        for i in 1..200 {
            let w = p.omega0() * 1.2 * i as f64 / 200.0;
            if (w - p.omega0()).abs() < 1e-6 * p.omega0() {
                continue;
            }
            let z = z_eff(&p, w).unwrap();
            assert!(z.re >= -1e-9 * z.norm());
        }
    }

    #[test]
    fn above_band_infinite_rate_vanishes() {
        let p = CircuitParams::reference().with_omega_a(crate::units::angular(15e9));
        assert_eq!(purcell_pt(&p, true).unwrap(), 0.0);
    }

    #[test]
    fn decoupled_is_singular() {
        let p = CircuitParams::reference().with_chi(0.0);
        assert!(matches!(z_eff(&p, 1e10), Err(QedError::Singularity(_))));
    }
}
