//! Spontaneous-emission dynamics from the pole-residue expansion.
//!
//! Time is dimensionless, t~ = Omega0 t. The atom starts with one
//! excitation; the rest of the circuit starts empty and the boundary is
//! driven by delta-correlated thermal noise.

use crate::circuit::{build_closed_jja, build_reduced_system, CircuitParams, ReducedSystem};
use crate::coupling::build_coupling_set;
use crate::error::{domain, QedError, Result};
use crate::spectral::{solve_closed_jja_modes, solve_quadratic_modes, ModeSet};
use crate::special::trigamma;
use crate::units::{HBAR, K_B};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use std::f64::consts::PI;

const SERIES_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Modal,
    OdeOracle,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Modal => "modal",
            Method::OdeOracle => "ode-oracle",
        }
    }
}

#[derive(Debug, Clone)]
pub struct DynamicsTrace {
    pub t_grid: Vec<f64>,
    pub n_a: Vec<f64>,
    pub part_initial: Vec<f64>,
    pub part_vacuum: Vec<f64>,
    pub part_thermal: Vec<f64>,
    pub n_a_inf: Option<f64>,
    pub method: Method,
    /// Largest |Im n_A| before taking the real part.
    pub max_imag: f64,
    pub warnings: Vec<String>,
}

/// Z_A = sqrt(L_A' / C_A'') with C_A'' from the closed-array modes.
pub fn atom_impedance(p: &CircuitParams) -> Result<f64> {
    let modes = solve_closed_jja_modes(&build_closed_jja(p)?)?;
    Ok(build_coupling_set(p, &modes)?.z_a)
}

/// Residue-derived coefficients observed at node j, one row per active pole.
#[derive(Debug, Clone)]
pub struct EtaZeta {
    pub poles: Vec<C64>,
    /// Indices into the mode set.
    pub pole_index: Vec<usize>,
    /// eta[p][q] = (R_p)_{j,q}.
    pub eta: Vec<Vec<C64>>,
    /// zeta[p][q] = s_p (C_red R_p)_{j,q}.
    pub zeta: Vec<Vec<C64>>,
    pub excluded: usize,
}

pub fn eta_zeta(modes: &ModeSet, sys: &ReducedSystem, j: usize) -> Result<EtaZeta> {
    if j >= sys.m {
        return domain(format!("observation node {j} outside [0, {})", sys.m));
    }
    let active = modes.active();
    let mut out = EtaZeta { poles: vec![], pole_index: vec![], eta: vec![], zeta: vec![], excluded: modes.len() - active.len() };
    for p in active {
        let s = modes.poles[p];
        let d = modes.denominators[p];
        let cv = sys.c_red.matvec_c(&modes.right[p]);
        let (vj, cvj) = (modes.right[p][j], cv[j]);
        out.eta.push(modes.left[p].iter().map(|u| vj * u.conj() / d).collect());
        out.zeta.push(modes.left[p].iter().map(|u| s * cvj * u.conj() / d).collect());
        out.poles.push(s);
        out.pole_index.push(p);
    }
    Ok(out)
}

/// (e^z - 1)/z * t evaluated as (e^{sigma t} - 1)/sigma, with the series
/// limit for small sigma.
fn growth(sigma: C64, t: f64) -> C64 {
    if sigma.norm() < SERIES_TOL {
        return C64::new(t, 0.0) + 0.5 * sigma * t * t;
    }
    let z = sigma * t;
    let em1 = if z.norm() < 1e-3 {
        z * (1.0 + z / 2.0 * (1.0 + z / 3.0 * (1.0 + z / 4.0 * (1.0 + z / 5.0))))
    } else {
        z.exp() - 1.0
    };
    em1 / sigma
}

/// Pole data and prefactors for one parameter point.
#[derive(Debug, Clone)]
pub struct ModalModel {
    pub params: CircuitParams,
    pub sys: ReducedSystem,
    pub modes: ModeSet,
    pub z_a: f64,
    pub atom: EtaZeta,
    /// s_p (R_p C)_{A,A} and s_p^2 (C R_p C)_{A,A}.
    c_init: Vec<C64>,
    d_init: Vec<C64>,
    /// Pair weights eta_b eta_b + (Z_A/Z0)^2 zeta_b zeta_b, row-major.
    pair_weight: Vec<C64>,
}

impl ModalModel {
    pub fn new(p: &CircuitParams) -> Result<Self> {
        let sys = build_reduced_system(p)?;
        let modes = solve_quadratic_modes(&sys)?;
        let z_a = atom_impedance(p)?;
        Self::from_parts(p, sys, modes, z_a)
    }

    pub fn from_parts(p: &CircuitParams, sys: ReducedSystem, modes: ModeSet, z_a: f64) -> Result<Self> {
        let atom = eta_zeta(&modes, &sys, sys.atom_index)?;
        let a = sys.atom_index;
        let b = sys.boundary_index;
        let mut c_init = Vec::with_capacity(atom.poles.len());
        let mut d_init = Vec::with_capacity(atom.poles.len());
        for (k, &p_idx) in atom.pole_index.iter().enumerate() {
            let s = atom.poles[k];
            let cv = sys.c_red.matvec_c(&modes.right[p_idx]);
            let cu = sys.c_red.matvec_c(&modes.left[p_idx]);
            let den = modes.denominators[p_idx];
            c_init.push(s * modes.right[p_idx][a] * cu[a].conj() / den);
            d_init.push(s * s * cv[a] * cu[a].conj() / den);
        }
        let r2 = (z_a / sys.z0).powi(2);
        let n = atom.poles.len();
        let mut pair_weight = vec![C64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for k in 0..n {
                pair_weight[i * n + k] = atom.eta[i][b] * atom.eta[k][b] + r2 * atom.zeta[i][b] * atom.zeta[k][b];
            }
        }
        Ok(ModalModel { params: p.clone(), sys, modes, z_a, atom, c_init, d_init, pair_weight })
    }

    /// k_B T Z0^2 / (hbar Omega0 Z_A Z_W).
    pub fn thermal_prefactor(&self, temperature: f64) -> f64 {
        let p = &self.params;
        K_B * temperature * self.sys.z0 * self.sys.z0 / (HBAR * self.sys.omega0 * self.z_a * p.z_w)
    }

    /// ([initial, vacuum, thermal], imaginary magnitude) at one time.
    pub fn parts_at(&self, t: f64, temperature: f64) -> ([f64; 3], f64) {
        let a = self.sys.atom_index;
        let r2 = (self.z_a / self.sys.z0).powi(2);
        let e: Vec<C64> = self.atom.poles.iter().map(|s| (s * t).exp()).collect();
        let mut c1 = C64::new(0.0, 0.0);
        let mut d1 = C64::new(0.0, 0.0);
        let mut eta = C64::new(0.0, 0.0);
        let mut zeta = C64::new(0.0, 0.0);
        for k in 0..e.len() {
            c1 += e[k] * self.c_init[k];
            d1 += e[k] * self.d_init[k];
            eta += e[k] * self.atom.eta[k][a];
            zeta += e[k] * self.atom.zeta[k][a];
        }
        let initial = 0.5 * c1 * c1 + 0.5 * r2 * d1 * d1;
        let vacuum = 0.5 / r2 * eta * eta + 0.5 * zeta * zeta;
        let mut thermal = C64::new(0.0, 0.0);
        if temperature > 0.0 {
            let n = e.len();
            let poles = &self.atom.poles;
            for i in 0..n {
                for k in 0..n {
                    let w = self.pair_weight[i * n + k];
                    if w == C64::new(0.0, 0.0) {
                        continue;
                    }
                    thermal += w * growth(poles[i] + poles[k], t);
                }
            }
            thermal *= self.thermal_prefactor(temperature);
        }
        let imag = initial.im.abs().max(vacuum.im.abs()).max(thermal.im.abs());
        ([initial.re, vacuum.re, thermal.re], imag)
    }

    pub fn occupation(&self, t_grid: &[f64], temperature: f64) -> Result<DynamicsTrace> {
        if !(temperature >= 0.0) {
            return domain(format!("temperature must be >= 0, got {temperature}"));
        }
        if t_grid.iter().any(|t| !(*t >= 0.0)) {
            return domain("time grid must be non-negative");
        }
        let rows: Vec<([f64; 3], f64)> = t_grid.par_iter().map(|&t| self.parts_at(t, temperature)).collect();
        let mut trace = DynamicsTrace {
            t_grid: t_grid.to_vec(),
            n_a: rows.iter().map(|(r, _)| r[0] + r[1] + r[2]).collect(),
            part_initial: rows.iter().map(|(r, _)| r[0]).collect(),
            part_vacuum: rows.iter().map(|(r, _)| r[1]).collect(),
            part_thermal: rows.iter().map(|(r, _)| r[2]).collect(),
            n_a_inf: None,
            method: Method::Modal,
            max_imag: rows.iter().map(|(_, i)| *i).fold(0.0, f64::max),
            warnings: Vec::new(),
        };
        if self.atom.excluded > 0 {
            trace.warnings.push(format!("{} defective pole(s) excluded from the expansion", self.atom.excluded));
        }
        if temperature > 0.0 {
            if let Some(w) = self.delta_noise_warning(temperature) {
                trace.warnings.push(w);
            }
            trace.n_a_inf = self.steady_state(temperature).ok();
        } else {
            trace.n_a_inf = Some(0.0);
        }
        Ok(trace)
    }

    /// Slowest nonzero decay rate (dimensionless).
    pub fn slowest_decay(&self) -> f64 {
        self.atom.poles.iter().filter(|s| s.norm() > 1e-9 && s.re < 0.0).map(|s| -s.re).fold(f64::INFINITY, f64::min)
    }

    /// Warns unless Gamma_min hbar / (k_B T) < 0.1.
    pub fn delta_noise_warning(&self, temperature: f64) -> Option<String> {
        let ratio = HBAR * self.sys.omega0 / (K_B * temperature);
        let g = self.slowest_decay();
        if g.is_finite() && g * ratio >= 0.1 {
            Some(format!(
                "delta-correlated noise questionable: hbar Omega0/(k_B T) = {ratio:.3e}, slowest decay = {g:.3e} (product {:.3e})",
                g * ratio
            ))
        } else {
            None
        }
    }

    /// Thermal-only long-time limit.
    pub fn steady_state(&self, temperature: f64) -> Result<f64> {
        if !(temperature >= 0.0) {
            return domain(format!("temperature must be >= 0, got {temperature}"));
        }
        if temperature == 0.0 {
            return Ok(0.0);
        }
        let n = self.atom.poles.len();
        let poles = &self.atom.poles;
        let wmax = self.pair_weight.iter().map(|w| w.norm()).fold(0.0, f64::max);
        let mut total = C64::new(0.0, 0.0);
        for i in 0..n {
            for k in 0..n {
                let w = self.pair_weight[i * n + k];
                let sigma = poles[i] + poles[k];
                if sigma.re.abs() < 1e-12 {
                    if w.norm() > 1e-10 * wmax {
                        return Err(QedError::Divergence(format!(
                            "undamped pole pair ({}, {}) with residue weight {:.3e}",
                            self.atom.pole_index[i],
                            self.atom.pole_index[k],
                            w.norm()
                        )));
                    }
                    continue;
                }
                total -= w / sigma;
            }
        }
        Ok(self.thermal_prefactor(temperature) * total.re)
    }
}

pub fn atom_occupation_modal(p: &CircuitParams, t_grid: &[f64], temperature: f64) -> Result<DynamicsTrace> {
    ModalModel::new(p)?.occupation(t_grid, temperature)
}

pub fn steady_state(p: &CircuitParams, temperature: f64) -> Result<f64> {
    ModalModel::new(p)?.steady_state(temperature)
}

/// Thermal noise correlation (SI) at time separation dt (s).
pub fn noise_correlation(dt: f64, temperature: f64, z_w: f64) -> Result<f64> {
    if !(temperature > 0.0) {
        return domain(format!("temperature must be > 0, got {temperature}"));
    }
    let kt = K_B * temperature;
    let psi = trigamma(C64::new(1.0, -dt * kt / HBAR));
    Ok(kt * kt / (2.0 * PI * HBAR * z_w) * psi.re)
}

/// Integral of the correlation over all dt, by Simpson's rule after the
/// substitution x = tan(theta) in the dimensionless time x = dt k_B T / hbar.
pub fn integrated_noise(temperature: f64, z_w: f64, intervals: usize) -> Result<f64> {
    if !(temperature > 0.0) {
        return domain(format!("temperature must be > 0, got {temperature}"));
    }
    let n = intervals.max(2) + intervals % 2;
    let h = PI / n as f64;
    let f = |theta: f64| {
        let c = theta.cos();
        if c <= 0.0 {
            // Re psi_1(1 - ix) sec^2 -> 1/2 at the endpoints
            return 0.5;
        }
        let x = theta.tan();
        trigamma(C64::new(1.0, -x)).re / (c * c)
    };
    let mut sum = f(-0.5 * PI) + f(0.5 * PI);
    for i in 1..n {
        let th = -0.5 * PI + i as f64 * h;
        sum += if i % 2 == 1 { 4.0 } else { 2.0 } * f(th);
    }
    let integral_x = sum * h / 3.0;
    let kt = K_B * temperature;
    // d(dt) = hbar / (k_B T) dx
    Ok(kt * kt / (2.0 * PI * HBAR * z_w) * integral_x * HBAR / kt)
}

#[derive(Debug, Clone)]
pub struct BeatPeak {
    /// Angular frequency in units of Omega0.
    pub frequency: f64,
    pub magnitude: f64,
    /// Matching pole pair (mode-set indices) and its beat frequency.
    pub matched: Option<(usize, usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct BeatSpectrum {
    pub frequencies: Vec<f64>,
    pub magnitudes: Vec<f64>,
    pub floor: f64,
    /// Native resolution 2 pi / (n dt).
    pub resolution: f64,
    pub peaks: Vec<BeatPeak>,
}

/// FFT of n_A - mean (rectangular window, x4 zero padding). Maxima that
/// dominate two native bins on either side and exceed 10x the floor (the
/// median magnitude, bounded below by 1e-12 of the trace scale) are matched
/// to |Im s_p + Im s_m| within two native bins.
pub fn beat_spectrum(trace: &DynamicsTrace, modes: &ModeSet) -> Result<BeatSpectrum> {
    let t = &trace.t_grid;
    let n = t.len();
    if n < 8 {
        return Err(QedError::Resolution(format!("{n} samples are too few for a spectrum")));
    }
    let dt = (t[n - 1] - t[0]) / (n - 1) as f64;
    if !(dt > 0.0) || t.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.max(1.0)) {
        return domain("beat spectrum needs a uniform, increasing time grid");
    }
    let active = modes.active();
    let mut cands: Vec<(usize, usize, f64)> = Vec::new();
    for (i, &p) in active.iter().enumerate() {
        for &m in &active[i..] {
            cands.push((p, m, (modes.poles[p].im + modes.poles[m].im).abs()));
        }
    }
    let span = t[n - 1] - t[0];
    let smallest = cands.iter().map(|c| c.2).filter(|&w| w > 1e-6).fold(f64::INFINITY, f64::min);
    if smallest.is_finite() && span < 20.0 * 2.0 * PI / smallest {
        return Err(QedError::Resolution(format!(
            "time span {span:.3e} covers fewer than 20 periods of the slowest beat {smallest:.3e}; need {:.3e}",
            20.0 * 2.0 * PI / smallest
        )));
    }
    let mean = trace.n_a.iter().sum::<f64>() / n as f64;
    let padded = 4 * n;
    let mut buf: Vec<rustfft::num_complex::Complex<f64>> = (0..padded)
        .map(|i| rustfft::num_complex::Complex::new(if i < n { trace.n_a[i] - mean } else { 0.0 }, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(padded).process(&mut buf);
    let half = padded / 2 + 1;
    let bin = 2.0 * PI / (padded as f64 * dt);
    let resolution = 2.0 * PI / (n as f64 * dt);
    let frequencies: Vec<f64> = (0..half).map(|k| k as f64 * bin).collect();
    let magnitudes: Vec<f64> = buf[..half].iter().map(|z| z.norm() * dt).collect();
    let mut sorted = magnitudes.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let scale = trace.n_a.iter().fold(0.0f64, |a, v| a.max(v.abs())) * n as f64 * dt;
    let floor = sorted[half / 2].max(1e-12 * scale);
    // a peak must dominate +-2 native bins, which rejects the sinc ripple
    // of the rectangular window
    let reach = 2 * padded / n;
    let mut peaks = Vec::new();
    for k in 0..half {
        let v = magnitudes[k];
        let lo = k.saturating_sub(reach);
        let hi = (k + reach).min(half - 1);
        let dominant = (lo..=hi).all(|j| j == k || (j < k && magnitudes[j] < v) || (j > k && magnitudes[j] <= v));
        if dominant && v > 10.0 * floor {
            let f = frequencies[k];
            let matched = cands
                .iter()
                .filter(|c| (c.2 - f).abs() <= 2.0 * resolution)
                .min_by(|a, b| (a.2 - f).abs().partial_cmp(&(b.2 - f).abs()).unwrap_or(std::cmp::Ordering::Equal))
                .copied();
            peaks.push(BeatPeak { frequency: f, magnitude: v, matched });
        }
    }
    Ok(BeatSpectrum { frequencies, magnitudes, floor, resolution, peaks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::angular;

    fn model(n: usize, chi: f64) -> ModalModel {
        let p = CircuitParams::reference().with_n(n).with_chi(chi).with_omega_a(angular(5e9));
        ModalModel::new(&p).unwrap()
    }

    #[test]
    fn eta_sums_vanish() {
        let m = model(6, 0.5);
        for q in 0..m.sys.m {
            let s: C64 = m.atom.eta.iter().map(|r| r[q]).sum();
            assert!(s.norm() < 1e-8, "q {q}: {s}");
        }
    }

    #[test]
    fn one_excitation_at_start() {
        for &chi in &[1e-3, 1.0] {
            let m = model(5, chi);
            let ([a, b, c], _) = m.parts_at(0.0, 0.05);
            assert!((a + b + c - 1.0).abs() < 1e-8);
            assert_eq!(c, 0.0);
        }
    }

    #[test]
    fn trace_is_real_and_nonnegative() {
        let m = model(8, 1.0);
        let t: Vec<f64> = (0..200).map(|i| i as f64 * 0.5).collect();
        let tr = m.occupation(&t, 0.05).unwrap();
        let peak = tr.n_a.iter().cloned().fold(0.0, f64::max);
        assert!(tr.max_imag < 1e-9 * peak);
        assert!(tr.n_a.iter().all(|&x| x >= -1e-9));
    }

    #[test]
    fn growth_series_matches() {
        let s = C64::new(-3e-11, 2e-11);
        let g = growth(s, 100.0);
        assert!((g - C64::new(100.0, 0.0)).norm() < 1e-6);
        let s = C64::new(-0.2, 1.0);
        let g = growth(s, 3.0);
        assert!((g - ((s * 3.0).exp() - 1.0) / s).norm() < 1e-14);
    }

    #[test]
    fn correlation_at_zero_and_far() {
        let t = 0.05;
        let kt = K_B * t;
        let c0 = noise_correlation(0.0, t, 50.0).unwrap();
        assert!((c0 / (kt * kt / (2.0 * PI * HBAR * 50.0)) - PI * PI / 6.0).abs() < 1e-12);
        assert!(noise_correlation(1e-3, t, 50.0).unwrap().abs() < 1e-12 * c0);
        assert!(noise_correlation(0.0, -1.0, 50.0).is_err());
    }

    #[test]
    fn constant_trace_has_no_peaks() {
        let m = model(1, 1.0);
        let t: Vec<f64> = (0..16000).map(|i| i as f64 * 0.25).collect();
        let tr = DynamicsTrace {
            n_a: vec![0.7; t.len()],
            part_initial: vec![0.0; t.len()],
            part_vacuum: vec![0.0; t.len()],
            part_thermal: vec![0.0; t.len()],
            t_grid: t,
            n_a_inf: None,
            method: Method::Modal,
            max_imag: 0.0,
            warnings: vec![],
        };
        assert!(beat_spectrum(&tr, &m.modes).unwrap().peaks.is_empty());
    }
}
