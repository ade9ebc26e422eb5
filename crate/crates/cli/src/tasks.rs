//! One function per task; each returns the tables to be written.

use crate::config::{DynMethod, RunConfig, Task};
use crate::output::{num, Table};
use jjaqed::circuit::build_closed_jja;
use jjaqed::coupling::build_coupling_set;
use jjaqed::dynamics::{beat_spectrum, ModalModel};
use jjaqed::nonlinear::{compare_perturbation, NonlinearConfig};
use jjaqed::oracle::covariance_ode_oracle;
use jjaqed::perturbative::{lamb_shift_pt2, purcell_pt, z_eff, z_infinity};
use jjaqed::spectral::{analytic_dispersion, solve_closed_jja_modes, solve_quadratic_modes, BoundaryCondition};
use jjaqed::tracker::{sweep_bare_frequency, track_atomic_mode_with, TrackerOptions};
use jjaqed::units::hertz;
use jjaqed::{build_reduced_system, CircuitParams, QedError};
use rayon::prelude::*;
use rayon::ThreadPool;

#[derive(Debug)]
pub enum TaskError {
    Qed(QedError),
    /// Every grid point of a sweep failed; carries the first failure.
    AllFailed(usize, QedError),
}

impl From<QedError> for TaskError {
    fn from(e: QedError) -> Self {
        TaskError::Qed(e)
    }
}

type Out = Result<Vec<Table>, TaskError>;

fn ghz(omega: f64) -> String {
    num(hertz(omega) / 1e9)
}

fn flag(b: bool) -> String {
    if b { "1" } else { "0" }.into()
}

fn err_text(e: &QedError) -> String {
    format!("{}: {e}", e.class())
}

fn tracker_opts(cfg: &RunConfig) -> TrackerOptions {
    TrackerOptions {
        initial_steps: cfg.steps,
        overlap_threshold: cfg.overlap_threshold,
        max_doublings: cfg.max_doublings,
        ..Default::default()
    }
}

fn time_grid(t_end: f64, dt: f64) -> Vec<f64> {
    let n = (t_end / dt).round() as usize;
    (0..=n).map(|i| i as f64 * dt).collect()
}

/// Evaluates independent points on the pool, keeping grid order.
fn pooled<T: Send>(pool: &ThreadPool, grid: &[f64], f: impl Fn(f64) -> Result<T, QedError> + Sync + Send) -> Vec<Result<T, QedError>> {
    pool.install(|| grid.par_iter().map(|&x| f(x)).collect())
}

fn check_any<T>(results: &[Result<T, QedError>]) -> Result<(), TaskError> {
    if !results.is_empty() && results.iter().all(|r| r.is_err()) {
        let first = results.iter().find_map(|r| r.as_ref().err()).cloned().expect("non-empty");
        return Err(TaskError::AllFailed(results.len(), first));
    }
    Ok(())
}

pub fn run_task(cfg: &RunConfig, pool: &ThreadPool) -> Out {
    match cfg.task {
        Task::Modes => modes(cfg),
        Task::Jja => jja(cfg),
        Task::Track => track(cfg),
        Task::Couplings => couplings(cfg),
        Task::Perturbation => perturbation(cfg, pool),
        Task::Dynamics => dynamics(cfg, pool),
        Task::Spectrum => spectrum(cfg, pool),
        Task::SweepChi => sweep_chi(cfg, pool),
        Task::SweepOmega => sweep_omega(cfg, pool),
        Task::Impedance => impedance(cfg, pool),
        Task::Nonlinear => nonlinear(cfg),
    }
}

fn modes(cfg: &RunConfig) -> Out {
    let sys = build_reduced_system(&cfg.circuit)?;
    let ms = solve_quadratic_modes(&sys)?;
    let mut t = Table::new("modes.csv", &["index", "s_re", "s_im", "freq_ghz", "decay_per_s", "residual", "defective", "multiplicity"]);
    t.note("z0_ohm", num(sys.z0));
    t.note("omega0_rad_per_s", num(sys.omega0));
    t.note("poles", ms.len());
    for p in 0..ms.len() {
        let s = ms.poles[p];
        t.push(vec![
            p.to_string(),
            num(s.re),
            num(s.im),
            ghz(s.im * sys.omega0),
            num(-s.re * sys.omega0 + 0.0),
            num(ms.residual_norms[p]),
            flag(ms.defective[p]),
            ms.multiplicity[p].to_string(),
        ]);
    }
    Ok(vec![t])
}

fn jja(cfg: &RunConfig) -> Out {
    let p = &cfg.circuit;
    let jm = solve_closed_jja_modes(&build_closed_jja(p)?)?;
    let mut t = Table::new("jja.csv", &["k", "freq_ghz", "phi_first_node", "nn_ghz", "dn_ghz"]);
    t.note("band_top_ghz", ghz(p.band_top()));
    for k in 0..jm.len() {
        let nn = analytic_dispersion(k, BoundaryCondition::NN, p)?;
        let dn = analytic_dispersion(k, BoundaryCondition::DN, p)?;
        t.push(vec![k.to_string(), ghz(jm.frequencies[k]), num(jm.first_node(k)), ghz(nn), ghz(dn)]);
    }
    Ok(vec![t])
}

fn track(cfg: &RunConfig) -> Out {
    let tr = track_atomic_mode_with(&cfg.circuit, cfg.chi_target, &tracker_opts(cfg))?;
    let mut t = Table::new("track.csv", &["chi", "re_freq_ghz", "im_omega_per_s", "overlap"]);
    t.note("lamb_shift_ghz", ghz(tr.lamb_shift));
    t.note("decay_per_s", num(tr.decay));
    t.note("ipr", num(tr.ipr));
    for i in 0..tr.chi_grid.len() {
        t.push(vec![num(tr.chi_grid[i]), ghz(tr.frequencies[i].re), num(tr.frequencies[i].im), num(tr.overlaps[i])]);
    }
    let mut m = Table::new("track_mode.csv", &["node", "re", "im", "abs"]);
    for (j, z) in tr.final_mode.iter().enumerate() {
        m.push(vec![j.to_string(), num(z.re), num(z.im), num(z.norm())]);
    }
    Ok(vec![t, m])
}

fn couplings(cfg: &RunConfig) -> Out {
    let p = &cfg.circuit;
    let jm = solve_closed_jja_modes(&build_closed_jja(p)?)?;
    let cs = build_coupling_set(p, &jm)?;
    let fsr = cs.free_spectral_range();
    let mut t = Table::new(
        "couplings.csv",
        &["k", "omega_k_ghz", "omega_k_prime_ghz", "fsr_ghz", "phi_first_node", "z_k_ohm", "g_phi_ghz", "g_q_ghz", "xi_kk_ghz", "regime"],
    );
    t.note("omega_a_prime_ghz", ghz(cs.omega_a_prime));
    t.note("omega_a_dprime_ghz", ghz(cs.omega_a_dprime));
    t.note("c_a_prime_f", num(cs.c_a_prime));
    t.note("c_a_dprime_f", num(cs.c_a_dprime));
    t.note("l_a_prime_h", num(cs.l_a_prime));
    t.note("z_a_ohm", num(cs.z_a));
    for k in 0..cs.len() {
        t.push(vec![
            k.to_string(),
            ghz(cs.omega_k[k]),
            ghz(cs.omega_k_prime[k]),
            ghz(fsr[k]),
            num(jm.first_node(k)),
            num(cs.z_k[k]),
            ghz(cs.g_phi[k]),
            ghz(cs.g_q[k]),
            ghz(cs.xi_at(k, k)),
            cs.regimes[k].label().into(),
        ]);
    }
    Ok(vec![t])
}

struct PertRow {
    wa2: f64,
    d2: f64,
    tracked: f64,
    decay: f64,
    g_eff: f64,
    g_inf: f64,
}

fn perturbation(cfg: &RunConfig, pool: &ThreadPool) -> Out {
    let grid = &cfg.chi_grid.as_ref().expect("validated").values;
    let opts = tracker_opts(cfg);
    let res = pooled(pool, grid, |chi| {
        let p = cfg.circuit.clone().with_chi(chi);
        let cs = build_coupling_set(&p, &solve_closed_jja_modes(&build_closed_jja(&p)?)?)?;
        let d2 = lamb_shift_pt2(&cs, p.omega0())?;
        let tr = track_atomic_mode_with(&p, chi, &opts)?;
        let g_eff = if chi > 0.0 { purcell_pt(&p, false)? } else { 0.0 };
        let g_inf = purcell_pt(&p, true)?;
        Ok(PertRow { wa2: cs.omega_a_dprime, d2, tracked: p.omega_a + tr.lamb_shift, decay: tr.decay, g_eff, g_inf })
    });
    check_any(&res)?;
    let mut t = Table::new(
        "perturbation.csv",
        &["chi", "omega_a_dprime_ghz", "delta2_ghz", "perturbative_ghz", "tracked_ghz", "gamma_eff_per_s", "gamma_inf_per_s", "tracked_decay_per_s", "error"],
    );
    for (chi, r) in grid.iter().zip(&res) {
        t.push(match r {
            Ok(r) => vec![num(*chi), ghz(r.wa2), ghz(r.d2), ghz(r.wa2 + r.d2), ghz(r.tracked), num(r.g_eff), num(r.g_inf), num(r.decay), String::new()],
            Err(e) => {
                let mut row = vec![num(*chi)];
                row.extend(std::iter::repeat_n(String::new(), 7));
                row.push(err_text(e));
                row
            }
        });
    }
    t.drop_if_empty("error");
    Ok(vec![t])
}

fn dynamics(cfg: &RunConfig, pool: &ThreadPool) -> Out {
    let p = &cfg.circuit;
    let tg = time_grid(cfg.t_end, cfg.dt);
    let temp = p.temperature;
    let model = ModalModel::new(p)?;
    let (modal, oracle) = pool.install(|| -> Result<_, QedError> {
        let modal = match cfg.method {
            DynMethod::Oracle => None,
            _ => Some(model.occupation(&tg, temp)?),
        };
        let oracle = match cfg.method {
            DynMethod::Modal => None,
            _ => Some(covariance_ode_oracle(p, &tg, temp)?),
        };
        Ok((modal, oracle))
    })?;
    let mut cols = vec!["t_tilde"];
    if modal.is_some() {
        cols.extend(["n_a", "initial", "vacuum", "thermal"]);
    }
    if oracle.is_some() {
        cols.push("n_a_oracle");
    }
    let mut t = Table::new("dynamics.csv", &cols);
    t.note("temperature_k", num(temp));
    t.note("slowest_decay", num(model.slowest_decay()));
    match model.steady_state(temp) {
        Ok(v) => t.note("n_a_inf", num(v)),
        Err(e) => t.note("n_a_inf", err_text(&e)),
    }
    if let Some(m) = &modal {
        t.note("max_imag", num(m.max_imag));
        for w in &m.warnings {
            t.note("warning", w);
        }
    }
    for (i, &ti) in tg.iter().enumerate() {
        let mut row = vec![num(ti)];
        if let Some(m) = &modal {
            row.extend([num(m.n_a[i]), num(m.part_initial[i]), num(m.part_vacuum[i]), num(m.part_thermal[i])]);
        }
        if let Some(o) = &oracle {
            row.push(num(o.n_a[i]));
        }
        t.push(row);
    }
    Ok(vec![t])
}

fn spectrum(cfg: &RunConfig, pool: &ThreadPool) -> Out {
    let p = &cfg.circuit;
    let tg = time_grid(cfg.t_end, cfg.dt);
    let model = ModalModel::new(p)?;
    let trace = pool.install(|| model.occupation(&tg, p.temperature))?;
    let sp = beat_spectrum(&trace, &model.modes)?;
    let mut s = Table::new("spectrum.csv", &["frequency_over_omega0", "magnitude"]);
    s.note("floor", num(sp.floor));
    s.note("resolution", num(sp.resolution));
    for (f, m) in sp.frequencies.iter().zip(&sp.magnitudes) {
        s.push(vec![num(*f), num(*m)]);
    }
    let mut k = Table::new("peaks.csv", &["frequency_over_omega0", "magnitude", "pole_p", "pole_m", "candidate"]);
    for pk in &sp.peaks {
        k.push(match pk.matched {
            Some((a, b, c)) => vec![num(pk.frequency), num(pk.magnitude), a.to_string(), b.to_string(), num(c)],
            None => vec![num(pk.frequency), num(pk.magnitude), String::new(), String::new(), String::new()],
        });
    }
    Ok(vec![s, k])
}

fn sweep_chi(cfg: &RunConfig, pool: &ThreadPool) -> Out {
    let grid = &cfg.chi_grid.as_ref().expect("validated").values;
    let opts = tracker_opts(cfg);
    let res = pooled(pool, grid, |chi| track_atomic_mode_with(&cfg.circuit.clone().with_chi(chi), chi, &opts));
    check_any(&res)?;
    let mut t = Table::new("sweep_chi.csv", &["chi", "re_freq_ghz", "decay_per_s", "lamb_shift_ghz", "ipr", "error"]);
    for (chi, r) in grid.iter().zip(&res) {
        t.push(match r {
            Ok(tr) => {
                let w = tr.frequencies[tr.frequencies.len() - 1];
                vec![num(*chi), ghz(w.re), num(tr.decay), ghz(tr.lamb_shift), num(tr.ipr), String::new()]
            }
            Err(e) => vec![num(*chi), String::new(), String::new(), String::new(), String::new(), err_text(e)],
        });
    }
    t.drop_if_empty("error");
    Ok(vec![t])
}

fn sweep_omega(cfg: &RunConfig, pool: &ThreadPool) -> Out {
    let grid = &cfg.omega_a_grid.as_ref().expect("validated").values;
    let opts = tracker_opts(cfg);
    let res = pooled(pool, grid, |wa| {
        sweep_bare_frequency(&cfg.circuit, &[wa], &opts).map(|mut v| v.pop().expect("one point"))
    });
    check_any(&res)?;
    let mut t = Table::new("sweep_omega.csv", &["f_a_ghz", "mode", "re_freq_ghz", "im_omega_per_s", "atomic", "ipr", "error"]);
    for (wa, r) in grid.iter().zip(&res) {
        match r {
            Ok(pt) => {
                for (i, w) in pt.frequencies.iter().enumerate() {
                    t.push(vec![ghz(*wa), i.to_string(), ghz(w.re), num(w.im), flag(i == pt.atomic_index), num(pt.ipr), String::new()]);
                }
            }
            Err(e) => {
                t.push(vec![ghz(*wa), String::new(), String::new(), String::new(), String::new(), String::new(), err_text(e)]);
            }
        }
    }
    t.drop_if_empty("error");
    Ok(vec![t])
}

fn impedance(cfg: &RunConfig, pool: &ThreadPool) -> Out {
    let grid = &cfg.omega_grid.as_ref().expect("validated").values;
    let p: &CircuitParams = &cfg.circuit;
    let res = pooled(pool, grid, |w| Ok((z_eff(p, w)?.inv().re, z_infinity(p, w)?.inv().re)));
    check_any(&res)?;
    let mut t = Table::new("impedance.csv", &["omega_hz", "re_inv_zeff", "re_inv_zinf", "error"]);
    for (w, r) in grid.iter().zip(&res) {
        t.push(match r {
            Ok((a, b)) => vec![num(hertz(*w)), num(*a), num(*b), String::new()],
            Err(e) => vec![num(hertz(*w)), String::new(), String::new(), err_text(e)],
        });
    }
    t.drop_if_empty("error");
    Ok(vec![t])
}

fn nonlinear(cfg: &RunConfig) -> Out {
    let p = &cfg.circuit;
    let sys = build_reduced_system(p)?;
    let mut nl = NonlinearConfig::atom_displaced(sys.m, sys.atom_index, cfg.lambda, cfg.phi_a);
    nl.lambda_scale = cfg.lambda_scale;
    let tg = time_grid(cfg.nl_t_end, cfg.nl_dt);
    let cmp = compare_perturbation(p, &nl, &tg)?;
    let nodes = cfg.nodes.clone().unwrap_or_else(|| vec![sys.atom_index, sys.boundary_index]);
    let mut t = Table::new("nonlinear.csv", &["t_tilde", "node", "phi", "q", "phi1", "q1", "phi_direct", "q_direct"]);
    t.note("strength", num(cmp.direct.strength));
    t.note("residual_wb", num(cmp.residual));
    t.note("deviation_wb", num(cmp.deviation));
    let q = |psi: f64| num(psi / sys.z0);
    for (i, &ti) in tg.iter().enumerate() {
        for &j in &nodes {
            t.push(vec![
                num(ti),
                j.to_string(),
                num(cmp.linear.phi[i][j]),
                q(cmp.linear.psi[i][j]),
                num(cmp.correction.phi[i][j]),
                q(cmp.correction.psi[i][j]),
                num(cmp.direct.phi[i][j]),
                q(cmp.direct.psi[i][j]),
            ]);
        }
    }
    Ok(vec![t])
}
