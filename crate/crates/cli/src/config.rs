//! Run configuration: strict TOML schema, engineering-unit parsing and the
//! canonical rendering embedded in every output file.

use jjaqed::units::{angular, energy_from_hz, hertz, HBAR};
use jjaqed::CircuitParams;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Modes,
    Jja,
    Track,
    Couplings,
    Perturbation,
    Dynamics,
    Spectrum,
    SweepChi,
    SweepOmega,
    Impedance,
    Nonlinear,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Modes => "modes",
            Task::Jja => "jja",
            Task::Track => "track",
            Task::Couplings => "couplings",
            Task::Perturbation => "perturbation",
            Task::Dynamics => "dynamics",
            Task::Spectrum => "spectrum",
            Task::SweepChi => "sweep-chi",
            Task::SweepOmega => "sweep-omega",
            Task::Impedance => "impedance",
            Task::Nonlinear => "nonlinear",
        }
    }

    /// Tasks that evaluate independent grid points.
    pub fn is_sweep(self) -> bool {
        matches!(self, Task::Perturbation | Task::SweepChi | Task::SweepOmega | Task::Impedance)
    }
}

/// A number in SI units or a string such as "1 nH".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Quantity {
    Number(f64),
    Text(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dim {
    Inductance,
    Capacitance,
    Frequency,
    Temperature,
    Resistance,
}

impl Dim {
    fn base(self) -> &'static str {
        match self {
            Dim::Inductance => "H",
            Dim::Capacitance => "F",
            Dim::Frequency => "Hz",
            Dim::Temperature => "K",
            Dim::Resistance => "ohm",
        }
    }

    /// Unit names with their decimal exponent relative to the base unit.
    fn units(self) -> &'static [(&'static str, i32)] {
        match self {
            Dim::Inductance => &[("H", 0), ("mH", -3), ("uH", -6), ("nH", -9), ("pH", -12)],
            Dim::Capacitance => &[("F", 0), ("uF", -6), ("nF", -9), ("pF", -12), ("fF", -15), ("aF", -18)],
            Dim::Frequency => &[("Hz", 0), ("kHz", 3), ("MHz", 6), ("GHz", 9), ("THz", 12)],
            Dim::Temperature => &[("K", 0), ("mK", -3), ("uK", -6)],
            Dim::Resistance => &[("ohm", 0), ("Ohm", 0), ("kohm", 3), ("kOhm", 3), ("Mohm", 6)],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemaError(pub String);

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for SchemaError {}

fn schema<T>(msg: impl Into<String>) -> Result<T, SchemaError> {
    Err(SchemaError(msg.into()))
}

impl Quantity {
    pub fn resolve(&self, dim: Dim, key: &str) -> Result<f64, SchemaError> {
        let v = match self {
            Quantity::Number(x) => *x,
            Quantity::Text(s) => parse_with_unit(s.trim(), dim).ok_or_else(|| {
                let names: Vec<&str> = dim.units().iter().map(|u| u.0).collect();
                SchemaError(format!("{key}: cannot read {s:?} as a number with one of the units {}", names.join(", ")))
            })?,
        };
        if !v.is_finite() {
            return schema(format!("{key}: value must be finite"));
        }
        Ok(v)
    }

    /// SI value rendered with the base unit, exact under round trip.
    pub fn canonical(v: f64, dim: Dim) -> Quantity {
        Quantity::Text(format!("{v:e} {}", dim.base()))
    }
}

fn parse_with_unit(s: &str, dim: Dim) -> Option<f64> {
    let (num, unit) = match s.split_once(char::is_whitespace) {
        Some((a, b)) => (a.trim(), b.trim()),
        None => {
            let i = s.char_indices().rev().take_while(|(_, c)| c.is_alphabetic()).last()?.0;
            (&s[..i], &s[i..])
        }
    };
    num.parse::<f64>().ok()?;
    let shift = dim.units().iter().find(|u| u.0 == unit)?.1;
    // shift the decimal exponent so the SI value is a single correctly rounded parse
    let (mantissa, exp) = match num.split_once(['e', 'E']) {
        Some((m, e)) => (m, e.parse::<i32>().ok()?),
        None => (num, 0),
    };
    format!("{mantissa}e{}", exp + shift).parse().ok()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircuitBlock {
    #[serde(rename = "N", skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(rename = "L", skip_serializing_if = "Option::is_none")]
    pub l: Option<Quantity>,
    #[serde(rename = "C", skip_serializing_if = "Option::is_none")]
    pub c: Option<Quantity>,
    #[serde(rename = "C_g", skip_serializing_if = "Option::is_none")]
    pub c_g: Option<Quantity>,
    #[serde(rename = "C_c", skip_serializing_if = "Option::is_none")]
    pub c_c: Option<Quantity>,
    #[serde(rename = "C_W", skip_serializing_if = "Option::is_none")]
    pub c_w: Option<Quantity>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chi: Option<f64>,
    /// Charging energy given as E_C / h.
    #[serde(rename = "E_C_A", skip_serializing_if = "Option::is_none")]
    pub e_c_a: Option<Quantity>,
    /// Bare atomic frequency omega_A / 2 pi.
    #[serde(rename = "f_A", skip_serializing_if = "Option::is_none")]
    pub f_a: Option<Quantity>,
    #[serde(rename = "Z_W", skip_serializing_if = "Option::is_none")]
    pub z_w: Option<Quantity>,
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    pub t: Option<Quantity>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    #[default]
    Lin,
    Log,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeBlock {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<Quantity>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<Quantity>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop: Option<Quantity>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    #[serde(default, skip_serializing_if = "is_lin")]
    pub spacing: Spacing,
}

fn is_lin(s: &Spacing) -> bool {
    *s == Spacing::Lin
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chi: Option<RangeBlock>,
    /// Bare atomic frequencies omega_A / 2 pi.
    #[serde(rename = "f_A", skip_serializing_if = "Option::is_none")]
    pub f_a: Option<RangeBlock>,
    /// Probe frequencies for the impedance task.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f: Option<RangeBlock>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackerBlock {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chi_target: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overlap_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_doublings: Option<u32>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DynMethod {
    #[default]
    Modal,
    Oracle,
    Both,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsBlock {
    /// Dimensionless end time Omega0 t.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<DynMethod>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearBlock {
    /// J/Wb^3.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_scale: Option<f64>,
    /// Initial atomic flux (Wb).
    #[serde(rename = "phi_A", skip_serializing_if = "Option::is_none")]
    pub phi_a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nodes: Option<Vec<usize>>,
}

/// The file as written by the user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub task: Task,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default)]
    pub circuit: CircuitBlock,
    #[serde(default, skip_serializing_if = "is_default")]
    pub grid: GridBlock,
    #[serde(default, skip_serializing_if = "is_default")]
    pub tracker: TrackerBlock,
    #[serde(default, skip_serializing_if = "is_default")]
    pub dynamics: DynamicsBlock,
    #[serde(default, skip_serializing_if = "is_default")]
    pub nonlinear: NonlinearBlock,
}

fn is_default<T: Default + PartialEq>(v: &T) -> bool {
    *v == T::default()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Range {
    pub values: Vec<f64>,
    pub spec: RangeBlock,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: Task,
    pub output: PathBuf,
    pub workers: usize,
    pub circuit: CircuitParams,
    pub chi_grid: Option<Range>,
    /// Angular frequencies (rad/s).
    pub omega_a_grid: Option<Range>,
    pub omega_grid: Option<Range>,
    pub chi_target: f64,
    pub steps: usize,
    pub overlap_threshold: f64,
    pub max_doublings: u32,
    pub t_end: f64,
    pub dt: f64,
    pub method: DynMethod,
    pub lambda: f64,
    pub lambda_scale: f64,
    pub phi_a: f64,
    pub nl_t_end: f64,
    pub nl_dt: f64,
    pub nodes: Option<Vec<usize>>,
}

fn resolve_range(r: &RangeBlock, dim: Option<Dim>, key: &str) -> Result<Range, SchemaError> {
    let get = |q: &Quantity, k: &str| -> Result<f64, SchemaError> {
        match dim {
            Some(d) => q.resolve(d, k),
            None => match q {
                Quantity::Number(x) => Ok(*x),
                Quantity::Text(_) => schema(format!("{k}: expected a plain number")),
            },
        }
    };
    let canon = |v: f64| match dim {
        Some(d) => Quantity::canonical(v, d),
        None => Quantity::Number(v),
    };
    let (values, spec) = if let Some(vals) = &r.values {
        if r.start.is_some() || r.stop.is_some() || r.points.is_some() {
            return schema(format!("{key}: give either values or start/stop/points"));
        }
        let v = vals.iter().map(|q| get(q, key)).collect::<Result<Vec<_>, _>>()?;
        let spec = RangeBlock { values: Some(v.iter().map(|&x| canon(x)).collect()), ..Default::default() };
        (v, spec)
    } else {
        let (Some(a), Some(b), Some(n)) = (&r.start, &r.stop, r.points) else {
            return schema(format!("{key}: needs values or start, stop and points"));
        };
        let (a, b) = (get(a, key)?, get(b, key)?);
        if n == 0 {
            return schema(format!("{key}: points must be >= 1"));
        }
        let mut v: Vec<f64> = match r.spacing {
            Spacing::Lin => (0..n).map(|i| if n == 1 { a } else { a + (b - a) * i as f64 / (n - 1) as f64 }).collect(),
            Spacing::Log => {
                if !(a > 0.0 && b > 0.0) {
                    return schema(format!("{key}: log spacing needs positive start and stop"));
                }
                let (la, lb) = (a.ln(), b.ln());
                (0..n).map(|i| if n == 1 { a } else { (la + (lb - la) * i as f64 / (n - 1) as f64).exp() }).collect()
            }
        };
        if n > 1 {
            v[0] = a;
            v[n - 1] = b;
        }
        let spec = RangeBlock { values: None, start: Some(canon(a)), stop: Some(canon(b)), points: Some(n), spacing: r.spacing };
        (v, spec)
    };
    if values.is_empty() {
        return schema(format!("{key}: grid is empty"));
    }
    Ok(Range { values, spec })
}

fn positive(v: f64, key: &str) -> Result<f64, SchemaError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        schema(format!("{key} must be positive and finite, got {v}"))
    }
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<RawConfig, SchemaError> {
        toml::from_str(text).map_err(|e| SchemaError(e.to_string()))
    }

    pub fn resolve(&self) -> Result<RunConfig, SchemaError> {
        let c = &self.circuit;
        let mut p = CircuitParams::reference();
        let q = |o: &Option<Quantity>, dim, key: &str, dflt: f64| o.as_ref().map_or(Ok(dflt), |x| x.resolve(dim, key));
        p.n = c.n.unwrap_or(p.n);
        p.l = q(&c.l, Dim::Inductance, "circuit.L", p.l)?;
        p.c = q(&c.c, Dim::Capacitance, "circuit.C", p.c)?;
        p.c_g = q(&c.c_g, Dim::Capacitance, "circuit.C_g", p.c_g)?;
        p.c_c = q(&c.c_c, Dim::Capacitance, "circuit.C_c", p.c_c)?;
        p.c_w = q(&c.c_w, Dim::Capacitance, "circuit.C_W", p.c_w)?;
        p.chi = c.chi.unwrap_or(p.chi);
        p.e_c_a = match &c.e_c_a {
            Some(x) => energy_from_hz(x.resolve(Dim::Frequency, "circuit.E_C_A")?),
            None => p.e_c_a,
        };
        p.omega_a = match &c.f_a {
            Some(x) => angular(x.resolve(Dim::Frequency, "circuit.f_A")?),
            None => p.omega_a,
        };
        p.z_w = q(&c.z_w, Dim::Resistance, "circuit.Z_W", p.z_w)?;
        p.temperature = q(&c.t, Dim::Temperature, "circuit.T", p.temperature)?;
        p.validate().map_err(|e| SchemaError(format!("circuit: {e}")))?;

        let g = &self.grid;
        let chi_grid = g.chi.as_ref().map(|r| resolve_range(r, None, "grid.chi")).transpose()?;
        let omega_a_grid = g
            .f_a
            .as_ref()
            .map(|r| resolve_range(r, Some(Dim::Frequency), "grid.f_A"))
            .transpose()?
            .map(|r| Range { values: r.values.iter().map(|&f| angular(f)).collect(), spec: r.spec });
        let omega_grid = g
            .f
            .as_ref()
            .map(|r| resolve_range(r, Some(Dim::Frequency), "grid.f"))
            .transpose()?
            .map(|r| Range { values: r.values.iter().map(|&f| angular(f)).collect(), spec: r.spec });
        if let Some(r) = &chi_grid {
            if r.values.iter().any(|&x| !(x >= 0.0)) {
                return schema("grid.chi values must be >= 0");
            }
        }
        for (r, key) in [(&omega_a_grid, "grid.f_A"), (&omega_grid, "grid.f")] {
            if let Some(r) = r {
                if r.values.iter().any(|&x| !(x > 0.0)) {
                    return schema(format!("{key} values must be > 0"));
                }
            }
        }
        let need = match self.task {
            Task::Perturbation | Task::SweepChi => chi_grid.is_none().then_some("grid.chi"),
            Task::SweepOmega => omega_a_grid.is_none().then_some("grid.f_A"),
            Task::Impedance => omega_grid.is_none().then_some("grid.f"),
            _ => None,
        };
        if let Some(key) = need {
            return schema(format!("task {} needs {key}", self.task.name()));
        }

        let t = &self.tracker;
        let chi_target = t.chi_target.unwrap_or(p.chi);
        if !(chi_target >= 0.0 && chi_target.is_finite()) {
            return schema("tracker.chi_target must be finite and >= 0");
        }
        let steps = t.steps.unwrap_or(8);
        if steps == 0 {
            return schema("tracker.steps must be >= 1");
        }
        let overlap_threshold = t.overlap_threshold.unwrap_or(0.5);
        if !(overlap_threshold > 0.0 && overlap_threshold < 1.0) {
            return schema("tracker.overlap_threshold must lie in (0, 1)");
        }
        let d = &self.dynamics;
        let nl = &self.nonlinear;
        let workers = self.workers.unwrap_or(1);
        if workers == 0 {
            return schema("workers must be >= 1");
        }
        if let Some(nodes) = &nl.nodes {
            if let Some(&bad) = nodes.iter().find(|&&j| j > p.n + 1) {
                return schema(format!("nonlinear.nodes: node {bad} outside [0, {}]", p.n + 1));
            }
        }
        let lambda = nl.lambda.unwrap_or(1e20);
        let lambda_scale = nl.lambda_scale.unwrap_or(1.0);
        if !lambda.is_finite() || !lambda_scale.is_finite() {
            return schema("nonlinear.lambda and lambda_scale must be finite");
        }
        Ok(RunConfig {
            task: self.task,
            output: self.output.clone().unwrap_or_else(|| PathBuf::from("out")),
            workers,
            circuit: p,
            chi_grid,
            omega_a_grid,
            omega_grid,
            chi_target,
            steps,
            overlap_threshold,
            max_doublings: t.max_doublings.unwrap_or(10),
            t_end: positive(d.t_end.unwrap_or(500.0), "dynamics.t_end")?,
            dt: positive(d.dt.unwrap_or(0.5), "dynamics.dt")?,
            method: d.method.unwrap_or_default(),
            lambda,
            lambda_scale,
            phi_a: nl.phi_a.unwrap_or(1e-16),
            nl_t_end: positive(nl.t_end.unwrap_or(50.0), "nonlinear.t_end")?,
            nl_dt: positive(nl.dt.unwrap_or(0.01), "nonlinear.dt")?,
            nodes: nl.nodes.clone(),
        })
    }
}

/// Shortest decimal near `guess` that `forward` maps exactly onto `target`.
fn preimage(target: f64, guess: f64, forward: fn(f64) -> f64) -> f64 {
    (1..=17)
        .filter_map(|digits| format!("{guess:.*e}", digits - 1).parse::<f64>().ok())
        .find(|&f| forward(f) == target)
        .unwrap_or(guess)
}

impl RunConfig {
    /// Every field explicit, SI values with base units.
    pub fn to_raw(&self) -> RawConfig {
        let p = &self.circuit;
        let cq = |v, d| Some(Quantity::canonical(v, d));
        RawConfig {
            task: self.task,
            output: Some(self.output.clone()),
            workers: Some(self.workers),
            circuit: CircuitBlock {
                n: Some(p.n),
                l: cq(p.l, Dim::Inductance),
                c: cq(p.c, Dim::Capacitance),
                c_g: cq(p.c_g, Dim::Capacitance),
                c_c: cq(p.c_c, Dim::Capacitance),
                c_w: cq(p.c_w, Dim::Capacitance),
                chi: Some(p.chi),
                e_c_a: cq(preimage(p.e_c_a, p.e_c_a / (2.0 * std::f64::consts::PI * HBAR), energy_from_hz), Dim::Frequency),
                f_a: cq(preimage(p.omega_a, hertz(p.omega_a), angular), Dim::Frequency),
                z_w: cq(p.z_w, Dim::Resistance),
                t: cq(p.temperature, Dim::Temperature),
            },
            grid: GridBlock {
                chi: self.chi_grid.as_ref().map(|r| r.spec.clone()),
                f_a: self.omega_a_grid.as_ref().map(|r| r.spec.clone()),
                f: self.omega_grid.as_ref().map(|r| r.spec.clone()),
            },
            tracker: TrackerBlock {
                chi_target: Some(self.chi_target),
                steps: Some(self.steps),
                overlap_threshold: Some(self.overlap_threshold),
                max_doublings: Some(self.max_doublings),
            },
            dynamics: DynamicsBlock { t_end: Some(self.t_end), dt: Some(self.dt), method: Some(self.method) },
            nonlinear: NonlinearBlock {
                lambda: Some(self.lambda),
                lambda_scale: Some(self.lambda_scale),
                phi_a: Some(self.phi_a),
                t_end: Some(self.nl_t_end),
                dt: Some(self.nl_dt),
                nodes: self.nodes.clone(),
            },
        }
    }

    pub fn render(&self) -> String {
        toml::to_string(&self.to_raw()).expect("config serializes")
    }
}

pub fn load(text: &str) -> Result<RunConfig, SchemaError> {
    RawConfig::parse(text)?.resolve()
}
