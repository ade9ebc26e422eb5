//! Adiabatic continuation of the atomic mode in the coupling parameter.

use crate::circuit::{build_reduced_system, CircuitParams};
use crate::error::{domain, QedError, Result};
use crate::spectral::{null_vector, pencil_eigenvalues};
use crate::tridiag::{dot_h, dq_apply, norm, q_apply, smallest_singular_triplet};
use num_complex::Complex64 as C64;
use rayon::prelude::*;

#[derive(Debug, Clone, Copy)]
pub struct TrackerOptions {
    pub initial_steps: usize,
    pub overlap_threshold: f64,
    pub max_doublings: u32,
    pub rel_tol: f64,
}

impl Default for TrackerOptions {
    fn default() -> Self {
        TrackerOptions { initial_steps: 8, overlap_threshold: 0.5, max_doublings: 10, rel_tol: 1e-6 }
    }
}

impl TrackerOptions {
    pub fn with_steps(steps: usize) -> Self {
        TrackerOptions { initial_steps: steps, ..Default::default() }
    }
}

#[derive(Debug, Clone)]
pub struct AtomicModeTrace {
    pub chi_grid: Vec<f64>,
    /// Complex frequencies omega~ = -i s~ Omega0 (rad/s).
    pub frequencies: Vec<C64>,
    /// Per-step matching overlaps (first entry 1 for the seed).
    pub overlaps: Vec<f64>,
    pub final_mode: Vec<C64>,
    /// Final pole s~ (dimensionless).
    pub final_pole: C64,
    pub lamb_shift: f64,
    pub decay: f64,
    pub ipr: f64,
}

pub fn ipr(mode: &[C64]) -> Result<f64> {
    let n = norm(mode);
    if (n - 1.0).abs() > 1e-8 {
        return domain(format!("mode not unit-normalized (norm {n})"));
    }
    Ok(mode.iter().map(|z| z.norm_sqr() * z.norm_sqr()).sum())
}

#[derive(Debug, Clone)]
struct State {
    s: C64,
    v: Vec<C64>,
}

struct Segment {
    chis: Vec<f64>,
    states: Vec<State>,
    overlaps: Vec<f64>,
}

fn bare_state(p: &CircuitParams) -> State {
    let m = p.n + 2;
    let mut v = vec![C64::new(0.0, 0.0); m];
    v[0] = C64::new(1.0, 0.0);
    State { s: C64::new(0.0, p.omega_a / p.omega0()), v }
}

fn select(sys: &crate::circuit::ReducedSystem, poles: &[C64], prev: &[C64]) -> (usize, f64, Vec<C64>) {
    let mut best = (usize::MAX, -1.0, Vec::new());
    for (i, s) in poles.iter().enumerate() {
        if s.im < 0.0 || s.norm() < 1e-6 {
            continue;
        }
        let v = null_vector(sys, *s);
        let ov = dot_h(prev, &v).norm();
        if ov > best.1 {
            best = (i, ov, v);
        }
    }
    best
}

fn run_segment(p: &CircuitParams, chi_a: f64, chi_b: f64, steps: usize, seed: &State, thr: f64) -> Result<Segment> {
    let chis: Vec<f64> = (1..=steps).map(|i| chi_a + (chi_b - chi_a) * i as f64 / steps as f64).collect();
    let mut states = Vec::with_capacity(steps);
    let mut overlaps = Vec::with_capacity(steps);
    let mut prev = seed.clone();
    for &chi in &chis {
        let sys = build_reduced_system(&p.clone().with_chi(chi))?;
        let poles = pencil_eigenvalues(&sys)?;
        let (idx, ov, v) = select(&sys, &poles, &prev.v);
        if idx == usize::MAX || ov <= thr {
            return Err(QedError::Tracking { chi, overlap: ov.max(0.0) });
        }
        prev = State { s: poles[idx], v };
        states.push(prev.clone());
        overlaps.push(ov);
    }
    Ok(Segment { chis, states, overlaps })
}

fn polish(p: &CircuitParams, st: &State) -> Result<State> {
    let sys = build_reduced_system(p)?;
    let mut s = st.s;
    let (_, mut u, mut v) = smallest_singular_triplet(&sys, s, &st.v, 2);
    for _ in 0..4 {
        let num = dot_h(&u, &q_apply(&sys, s, &v));
        let den = dot_h(&u, &dq_apply(&sys, s, &v));
        if den.norm() == 0.0 {
            break;
        }
        let ds = num / den;
        if ds.norm() > 1e-6 * s.norm().max(1.0) {
            break;
        }
        s -= ds;
        let t = smallest_singular_triplet(&sys, s, &v, 2);
        u = t.1;
        v = t.2;
    }
    // phase fixed by the atom component
    let ph = if v[0].norm() > 0.0 { v[0].conj() / v[0].norm() } else { C64::new(1.0, 0.0) };
    for z in v.iter_mut() {
        *z *= ph;
    }
    Ok(State { s, v })
}

// Adaptive doubling of one linear segment.
fn track_segment(p: &CircuitParams, chi_a: f64, chi_b: f64, seed: &State, opts: &TrackerOptions) -> Result<Segment> {
    let mut steps = opts.initial_steps.max(1);
    let max_steps = opts.initial_steps.max(1) << opts.max_doublings;
    let mut last: Option<(Segment, C64)> = None;
    let mut last_err;
    loop {
        match run_segment(p, chi_a, chi_b, steps, seed, opts.overlap_threshold) {
            Ok(mut seg) => {
                let end = polish(&p.clone().with_chi(chi_b), seg.states.last().unwrap())?;
                let s_end = end.s;
                *seg.states.last_mut().unwrap() = end;
                if let Some((_, prev_s)) = &last {
                    if (s_end - prev_s).norm() <= opts.rel_tol * s_end.norm() {
                        return Ok(seg);
                    }
                }
                last = Some((seg, s_end));
                last_err = None;
            }
            Err(e @ QedError::Tracking { .. }) => {
                last_err = Some(e);
            }
            Err(e) => return Err(e),
        }
        if steps >= max_steps {
            return match (last_err, last) {
                (Some(e), _) => Err(e),
                (None, Some((seg, _))) => Ok(seg),
                (None, None) => unreachable!(),
            };
        }
        steps *= 2;
    }
}

fn finish(p: &CircuitParams, chis: Vec<f64>, states: Vec<State>, overlaps: Vec<f64>) -> Result<AtomicModeTrace> {
    let w0 = p.omega0();
    let frequencies: Vec<C64> = states.iter().map(|st| C64::new(0.0, -1.0) * st.s * w0).collect();
    let last = states.last().unwrap();
    let mut mode = last.v.clone();
    let nrm = norm(&mode);
    for z in mode.iter_mut() {
        *z /= nrm;
    }
    let fin = *frequencies.last().unwrap();
    Ok(AtomicModeTrace {
        chi_grid: chis,
        lamb_shift: fin.re - p.omega_a,
        decay: fin.im.abs(),
        ipr: ipr(&mode)?,
        final_pole: last.s,
        final_mode: mode,
        frequencies,
        overlaps,
    })
}

pub fn track_atomic_mode(p: &CircuitParams, chi_target: f64, initial_steps: usize) -> Result<AtomicModeTrace> {
    track_atomic_mode_with(p, chi_target, &TrackerOptions::with_steps(initial_steps))
}

pub fn track_atomic_mode_with(p: &CircuitParams, chi_target: f64, opts: &TrackerOptions) -> Result<AtomicModeTrace> {
    p.validate()?;
    if !(chi_target >= 0.0) || !chi_target.is_finite() {
        return domain("chi_target must be finite and >= 0");
    }
    if opts.initial_steps < 1 {
        return domain("initial_steps must be >= 1");
    }
    let seed = bare_state(p);
    if chi_target == 0.0 {
        return finish(p, vec![0.0], vec![seed], vec![1.0]);
    }
    let seg = track_segment(p, 0.0, chi_target, &seed, opts)?;
    let mut chis = vec![0.0];
    chis.extend(seg.chis);
    let mut states = vec![seed];
    states.extend(seg.states);
    let mut overlaps = vec![1.0];
    overlaps.extend(seg.overlaps);
    finish(p, chis, states, overlaps)
}

/// One row per grid point: (chi, Re omega~, Im omega~), rad/s.
pub fn sweep_chi(p: &CircuitParams, chi_grid: &[f64], opts: &TrackerOptions) -> Result<Vec<(f64, f64, f64)>> {
    p.validate()?;
    for w in chi_grid.windows(2) {
        if !(w[1] > w[0]) {
            return domain("chi grid must be strictly ascending");
        }
    }
    if chi_grid.first().is_some_and(|&c| c < 0.0) {
        return domain("chi grid must be non-negative");
    }
    let w0 = p.omega0();
    let mut state = bare_state(p);
    let mut chi_prev = 0.0;
    let mut rows = Vec::with_capacity(chi_grid.len());
    for &chi in chi_grid {
        if chi > chi_prev {
            let seg = track_segment(p, chi_prev, chi, &state, opts)?;
            state = seg.states.last().unwrap().clone();
            chi_prev = chi;
        }
        let w = C64::new(0.0, -1.0) * state.s * w0;
        rows.push((chi, w.re, w.im));
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct BareSweepPoint {
    pub omega_a: f64,
    /// Pole frequencies omega~ (rad/s) with Re >= 0, ascending in Re.
    pub frequencies: Vec<C64>,
    pub atomic_index: usize,
    pub ipr: f64,
}

pub fn sweep_bare_frequency(p: &CircuitParams, omega_grid: &[f64], opts: &TrackerOptions) -> Result<Vec<BareSweepPoint>> {
    p.validate()?;
    let top = 2.0 * p.omega_c();
    if omega_grid.iter().any(|&w| !(w > 0.0 && w < top)) {
        return domain("bare frequency grid must lie in (0, 2 omega_c)");
    }
    omega_grid
        .par_iter()
        .map(|&wa| {
            let q = p.clone().with_omega_a(wa);
            let tr = track_atomic_mode_with(&q, q.chi, opts)?;
            let sys = build_reduced_system(&q)?;
            let mut freqs: Vec<C64> = pencil_eigenvalues(&sys)?
                .into_iter()
                .filter(|s| s.im > 0.0)
                .map(|s| C64::new(0.0, -1.0) * s * sys.omega0)
                .collect();
            freqs.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap());
            let target = *tr.frequencies.last().unwrap();
            let atomic_index = (0..freqs.len())
                .min_by(|&a, &b| (freqs[a] - target).norm().partial_cmp(&(freqs[b] - target).norm()).unwrap())
                .unwrap_or(0);
            Ok(BareSweepPoint { omega_a: wa, frequencies: freqs, atomic_index, ipr: tr.ipr })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::angular;

    #[test]
    fn ipr_limits() {
        let mut d = vec![C64::new(0.0, 0.0); 5];
        d[2] = C64::new(0.0, 1.0);
        assert_eq!(ipr(&d).unwrap(), 1.0);
        let u = vec![C64::new(1.0 / 5f64.sqrt(), 0.0); 5];
        assert!((ipr(&u).unwrap() - 0.2).abs() < 1e-15);
        assert!(ipr(&[C64::new(2.0, 0.0)]).is_err());
    }

    #[test]
    fn zero_target_is_bare() {
        let p = CircuitParams::reference().with_n(10);
        let tr = track_atomic_mode(&p, 0.0, 4).unwrap();
        assert_eq!(tr.frequencies.len(), 1);
        let (c_a, l_a) = p.atom_elements().unwrap();
        let w = 1.0 / (c_a * l_a).sqrt();
        assert!((tr.frequencies[0].re - w).abs() < 1e-12 * w);
        assert_eq!(tr.frequencies[0].im, 0.0);
        assert_eq!(tr.ipr, 1.0);
    }

    #[test]
    fn small_system_tracks() {
        let p = CircuitParams::reference().with_n(10);
        let tr = track_atomic_mode(&p, 0.05, 4).unwrap();
        assert!(tr.overlaps.iter().all(|&o| o > 0.5));
        assert!(tr.decay >= 0.0);
        assert!(tr.ipr > 0.5);
        // outside the band: tiny decay compared with the shift
        assert!(tr.decay < 1e-2 * tr.lamb_shift.abs());
        let _ = angular(1.0);
    }

    #[test]
    fn sweep_grid_zero_is_bare() {
        let p = CircuitParams::reference().with_n(6);
        let rows = sweep_chi(&p, &[0.0], &TrackerOptions::default()).unwrap();
        assert_eq!(rows.len(), 1);
        assert!((rows[0].1 - p.omega_a).abs() < 1e-9 * p.omega_a);
    }
}
