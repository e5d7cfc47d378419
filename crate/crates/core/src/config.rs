//! Run configuration: a plain sectioned `key = value` text file.
//!
//! Parsing only checks syntax and value types; [`RunConfig::validate`] runs
//! every model validator, and [`RunConfig::build`] refuses configurations
//! that fail it. The schema is documented in `docs/config.md`.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::domain::{Basis, DomainSpec};
use crate::dynamics::{format_f64, PhaseState, Scheme, SimConfig};
use crate::error::{Error, Result};
use crate::metrics::{MetricParams, Observable};
use crate::noise::{validate_q, QReport, QSpec};
use crate::nonlinearity::{CutoffSpec, PhiReport, PhiSpec, PowerTerm};
use crate::probes::{hex, EnsembleConfig, MomentFunctional, Tolerances};

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeSettings {
    pub trajectories: usize,
    pub burn_in: f64,
    pub thin: f64,
    /// Empty means the `[sim]` mass alone.
    pub masses: Vec<f64>,
    pub observables: Vec<Observable>,
    pub functional: MomentFunctional,
    /// Large initial data for the moment probe: u_k = large_scale / k in the first four modes.
    pub large_scale: f64,
    pub pairs: usize,
    pub pair_scale: f64,
    pub fit_start: f64,
    /// Defaults to the horizon.
    pub fit_end: Option<f64>,
    pub big_r: f64,
    pub small_r: f64,
    pub hit_time: f64,
    pub radii: Vec<f64>,
    pub windows: Vec<f64>,
    /// 1-based mode of the initial tangent direction for the asf probe.
    pub xi_mode: usize,
    pub xi_scale: f64,
    pub samples: usize,
    /// Horizon of the mass-gap and observable-gap probes; defaults to the `[sim]` horizon.
    pub gap_horizon: Option<f64>,
    pub directions: usize,
    pub epsilon: f64,
    pub states: usize,
    pub paths: usize,
    pub generator_step: f64,
    pub t_over_m: f64,
    pub tolerances: Tolerances,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self {
            trajectories: 64,
            burn_in: 0.0,
            thin: 0.1,
            masses: Vec::new(),
            observables: Vec::new(),
            functional: MomentFunctional::Energy,
            large_scale: 4.0,
            pairs: 1,
            pair_scale: 1.0,
            fit_start: 0.0,
            fit_end: None,
            big_r: 1.0,
            small_r: 0.5,
            hit_time: 1.0,
            radii: vec![0.5, 1.0, 2.0],
            windows: vec![0.5, 1.0],
            xi_mode: 1,
            xi_scale: 1.0,
            samples: 256,
            gap_horizon: None,
            directions: 1,
            epsilon: 1e-5,
            states: 5,
            paths: 10_000,
            generator_step: 1e-3,
            t_over_m: 10.0,
            tolerances: Tolerances::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub lengths: Vec<f64>,
    pub modes: Vec<usize>,
    /// (coefficient, power) pairs of the signed-power sum.
    pub phi_terms: Vec<(f64, f64)>,
    pub cutoff: Option<f64>,
    pub q: QSpec,
    pub mass: f64,
    pub step: f64,
    pub horizon: f64,
    pub stride: usize,
    pub scheme: Scheme,
    pub seed: u64,
    pub initial_u: Vec<f64>,
    pub initial_v: Vec<f64>,
    pub out: PathBuf,
    /// Worker threads, 0 for one per core. Not part of the hash.
    pub workers: usize,
    pub metric_n: f64,
    pub metric_beta: f64,
    pub quad_points: usize,
    pub log_cap: f64,
    pub probe: ProbeSettings,
}

impl Default for RunConfig {
    /// Canonical model: interval of length pi, 32 modes, phi = x - x|x|^{1/2}, q_k = (1 + alpha_k)^{-2}.
    fn default() -> Self {
        Self {
            lengths: vec![std::f64::consts::PI],
            modes: vec![32],
            phi_terms: vec![(1.0, 1.0), (-1.0, 1.5)],
            cutoff: None,
            q: QSpec::Decay { sigma: 1.0, gamma: 2.0 },
            mass: 0.1,
            step: 1e-3,
            horizon: 1.0,
            stride: 1,
            scheme: Scheme::ExponentialEuler,
            seed: 0,
            initial_u: Vec::new(),
            initial_v: Vec::new(),
            out: PathBuf::from("out"),
            workers: 0,
            metric_n: 1.0,
            metric_beta: 0.05,
            quad_points: 16,
            log_cap: 700.0,
            probe: ProbeSettings::default(),
        }
    }
}

const SECTIONS: [&str; 6] = ["domain", "phi", "noise", "sim", "metric", "probe"];

fn err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn scalar<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| err(line, format!("cannot parse '{}' for key '{key}'", v.trim())))
}

fn list<T: FromStr>(line: usize, key: &str, v: &str) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| scalar(line, key, x)).collect()
}

fn opt_f64(line: usize, key: &str, v: &str) -> Result<Option<f64>> {
    match v.trim() {
        "none" | "" => Ok(None),
        s => scalar(line, key, s).map(Some),
    }
}

/// `(c, p), (c, p), ...`
fn pairs(line: usize, v: &str) -> Result<Vec<(f64, f64)>> {
    let s = v.trim();
    if s.is_empty() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    let mut rest = s;
    while !rest.is_empty() {
        let open = rest
            .strip_prefix('(')
            .ok_or_else(|| err(line, "phi terms must be written as (coefficient, power) pairs"))?;
        let close = open.find(')').ok_or_else(|| err(line, "unclosed parenthesis"))?;
        let inner: Vec<f64> = list(line, "terms", &open[..close])?;
        if inner.len() != 2 {
            return Err(err(line, "each phi term needs exactly a coefficient and a power"));
        }
        out.push((inner[0], inner[1]));
        rest = open[close + 1..].trim_start();
        if let Some(r) = rest.strip_prefix(',') {
            rest = r.trim_start();
        } else if !rest.is_empty() {
            return Err(err(line, "expected ',' between phi terms"));
        }
    }
    Ok(out)
}

fn scheme_name(s: Scheme) -> &'static str {
    match s {
        Scheme::ExponentialEuler => "exponential-euler",
        Scheme::Strang => "strang",
    }
}

fn join_f64(xs: &[f64]) -> String {
    xs.iter().map(|x| format_f64(*x)).collect::<Vec<_>>().join(", ")
}

fn observable_text(o: &Observable) -> String {
    match o {
        Observable::Constant(c) => format!("const:{}", format_f64(*c)),
        Observable::ClippedNorm { scale } => format!("norm:{}", format_f64(*scale)),
        Observable::ClippedMode { index, scale } => format!("mode:{}:{}", index + 1, format_f64(*scale)),
    }
}

fn functional_text(f: &MomentFunctional) -> String {
    match f {
        MomentFunctional::Energy => "energy".into(),
        MomentFunctional::EnergyPower(n) => format!("energy^{n}"),
        MomentFunctional::ExpEnergy(b) => format!("exp:{}", format_f64(*b)),
        MomentFunctional::Psi2 => "psi2".into(),
    }
}

/// One validator outcome.
#[derive(Clone, Debug, Serialize)]
pub struct Validation {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub config_hash: String,
    pub passed: bool,
    pub checks: Vec<Validation>,
    pub phi: Option<PhiReport>,
    pub noise: Option<QReport>,
}

impl ValidationReport {
    pub fn failures(&self) -> Vec<&Validation> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        let mut section: Option<&str> = None;
        let mut seen: BTreeMap<(String, String), usize> = BTreeMap::new();
        let mut sigma: Option<f64> = None;
        let mut gamma: Option<f64> = None;
        let mut explicit: Option<Vec<f64>> = None;
        let mut q_line = 0;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            if let Some(name) = body.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| err(line, "section header must end with ']'"))?
                    .trim();
                section = Some(
                    SECTIONS
                        .iter()
                        .find(|s| **s == name)
                        .ok_or_else(|| err(line, format!("unknown section [{name}]")))?,
                );
                continue;
            }
            let (key, v) = body
                .split_once('=')
                .ok_or_else(|| err(line, format!("expected 'key = value', found '{body}'")))?;
            let key = key.trim();
            let sec = section.ok_or_else(|| err(line, "key outside of any section"))?;
            if let Some(prev) = seen.insert((sec.to_string(), key.to_string()), line) {
                return Err(err(line, format!("key '{key}' already set on line {prev}")));
            }
            let p = &mut c.probe;
            let t = &mut p.tolerances;
            match (sec, key) {
                ("domain", "lengths") => c.lengths = list(line, key, v)?,
                ("domain", "modes") => c.modes = list(line, key, v)?,
                ("phi", "terms") => c.phi_terms = pairs(line, v)?,
                ("phi", "cutoff") => c.cutoff = opt_f64(line, key, v)?,
                ("noise", "q") => {
                    explicit = Some(list(line, key, v)?);
                    q_line = line;
                }
                ("noise", "sigma") => {
                    sigma = Some(scalar(line, key, v)?);
                    q_line = line;
                }
                ("noise", "gamma") => {
                    gamma = Some(scalar(line, key, v)?);
                    q_line = line;
                }
                ("sim", "mass") => c.mass = scalar(line, key, v)?,
                ("sim", "step") => c.step = scalar(line, key, v)?,
                ("sim", "horizon") => c.horizon = scalar(line, key, v)?,
                ("sim", "stride") => c.stride = scalar(line, key, v)?,
                ("sim", "scheme") => {
                    c.scheme = match v.trim() {
                        "exponential-euler" => Scheme::ExponentialEuler,
                        "strang" => Scheme::Strang,
                        s => return Err(err(line, format!("unknown scheme '{s}'"))),
                    }
                }
                ("sim", "seed") => c.seed = scalar(line, key, v)?,
                ("sim", "initial_u") => c.initial_u = list(line, key, v)?,
                ("sim", "initial_v") => c.initial_v = list(line, key, v)?,
                ("sim", "out") => c.out = PathBuf::from(v.trim()),
                ("sim", "workers") => c.workers = scalar(line, key, v)?,
                ("metric", "n") => c.metric_n = scalar(line, key, v)?,
                ("metric", "beta") => c.metric_beta = scalar(line, key, v)?,
                ("metric", "quad_points") => c.quad_points = scalar(line, key, v)?,
                ("metric", "log_cap") => c.log_cap = scalar(line, key, v)?,
                ("probe", "trajectories") => p.trajectories = scalar(line, key, v)?,
                ("probe", "burn_in") => p.burn_in = scalar(line, key, v)?,
                ("probe", "thin") => p.thin = scalar(line, key, v)?,
                ("probe", "masses") => p.masses = list(line, key, v)?,
                ("probe", "observables") => {
                    p.observables = if v.trim().is_empty() {
                        Vec::new()
                    } else {
                        v.split(',')
                            .map(|s| s.trim().parse().map_err(|e: Error| err(line, e.to_string())))
                            .collect::<Result<_>>()?
                    }
                }
                ("probe", "functional") => {
                    p.functional = v.trim().parse().map_err(|e: Error| err(line, e.to_string()))?
                }
                ("probe", "large_scale") => p.large_scale = scalar(line, key, v)?,
                ("probe", "pairs") => p.pairs = scalar(line, key, v)?,
                ("probe", "pair_scale") => p.pair_scale = scalar(line, key, v)?,
                ("probe", "fit_start") => p.fit_start = scalar(line, key, v)?,
                ("probe", "fit_end") => p.fit_end = opt_f64(line, key, v)?,
                ("probe", "big_r") => p.big_r = scalar(line, key, v)?,
                ("probe", "small_r") => p.small_r = scalar(line, key, v)?,
                ("probe", "hit_time") => p.hit_time = scalar(line, key, v)?,
                ("probe", "radii") => p.radii = list(line, key, v)?,
                ("probe", "windows") => p.windows = list(line, key, v)?,
                ("probe", "xi_mode") => p.xi_mode = scalar(line, key, v)?,
                ("probe", "xi_scale") => p.xi_scale = scalar(line, key, v)?,
                ("probe", "samples") => p.samples = scalar(line, key, v)?,
                ("probe", "gap_horizon") => p.gap_horizon = opt_f64(line, key, v)?,
                ("probe", "directions") => p.directions = scalar(line, key, v)?,
                ("probe", "epsilon") => p.epsilon = scalar(line, key, v)?,
                ("probe", "states") => p.states = scalar(line, key, v)?,
                ("probe", "paths") => p.paths = scalar(line, key, v)?,
                ("probe", "generator_step") => p.generator_step = scalar(line, key, v)?,
                ("probe", "t_over_m") => p.t_over_m = scalar(line, key, v)?,
                ("probe", "tol_spread") => t.spread = scalar(line, key, v)?,
                ("probe", "tol_langevin") => t.langevin_rel = scalar(line, key, v)?,
                ("probe", "tol_variance") => t.variance_rel = scalar(line, key, v)?,
                ("probe", "tol_tangent") => t.tangent_rel = scalar(line, key, v)?,
                ("probe", "tol_generator") => t.generator_rel = scalar(line, key, v)?,
                ("probe", "tol_plateau") => t.plateau_factor = scalar(line, key, v)?,
                ("probe", "tol_linear_rate") => t.linear_rate_rel = scalar(line, key, v)?,
                ("probe", "tol_gap_ratio") => t.gap_ratio = scalar(line, key, v)?,
                ("probe", "tol_invariant_ratio") => t.invariant_ratio = scalar(line, key, v)?,
                ("probe", "tol_floor") => t.floor_factor = scalar(line, key, v)?,
                ("probe", "tol_autocorrelation") => t.autocorrelation = scalar(line, key, v)?,
                _ => return Err(err(line, format!("unknown key '{key}' in [{sec}]"))),
            }
        }
        match (explicit, sigma, gamma) {
            (Some(q), None, None) => c.q = QSpec::Explicit(q),
            (None, Some(sigma), Some(gamma)) => c.q = QSpec::Decay { sigma, gamma },
            (None, None, None) => {}
            _ => {
                return Err(err(
                    q_line,
                    "noise takes either 'q' or both 'sigma' and 'gamma'",
                ))
            }
        }
        Ok(c)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Fixed key order, floats at 17 significant digits. Excludes `out` and `workers`.
    pub fn canonical(&self) -> String {
        let p = &self.probe;
        let t = &p.tolerances;
        let opt = |x: Option<f64>| x.map_or("none".to_string(), format_f64);
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("[domain] lengths", join_f64(&self.lengths));
        kv(
            "[domain] modes",
            self.modes.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(", "),
        );
        kv(
            "[phi] terms",
            self.phi_terms
                .iter()
                .map(|(c, p)| format!("({}, {})", format_f64(*c), format_f64(*p)))
                .collect::<Vec<_>>()
                .join(", "),
        );
        kv("[phi] cutoff", opt(self.cutoff));
        match &self.q {
            QSpec::Explicit(q) => kv("[noise] q", join_f64(q)),
            QSpec::Decay { sigma, gamma } => {
                kv("[noise] sigma", format_f64(*sigma));
                kv("[noise] gamma", format_f64(*gamma));
            }
        }
        kv("[sim] mass", format_f64(self.mass));
        kv("[sim] step", format_f64(self.step));
        kv("[sim] horizon", format_f64(self.horizon));
        kv("[sim] stride", self.stride.to_string());
        kv("[sim] scheme", scheme_name(self.scheme).into());
        kv("[sim] seed", self.seed.to_string());
        kv("[sim] initial_u", join_f64(&self.initial_u));
        kv("[sim] initial_v", join_f64(&self.initial_v));
        kv("[metric] n", format_f64(self.metric_n));
        kv("[metric] beta", format_f64(self.metric_beta));
        kv("[metric] quad_points", self.quad_points.to_string());
        kv("[metric] log_cap", format_f64(self.log_cap));
        kv("[probe] trajectories", p.trajectories.to_string());
        kv("[probe] burn_in", format_f64(p.burn_in));
        kv("[probe] thin", format_f64(p.thin));
        kv("[probe] masses", join_f64(&p.masses));
        kv(
            "[probe] observables",
            p.observables.iter().map(observable_text).collect::<Vec<_>>().join(", "),
        );
        kv("[probe] functional", functional_text(&p.functional));
        kv("[probe] large_scale", format_f64(p.large_scale));
        kv("[probe] pairs", p.pairs.to_string());
        kv("[probe] pair_scale", format_f64(p.pair_scale));
        kv("[probe] fit_start", format_f64(p.fit_start));
        kv("[probe] fit_end", opt(p.fit_end));
        kv("[probe] big_r", format_f64(p.big_r));
        kv("[probe] small_r", format_f64(p.small_r));
        kv("[probe] hit_time", format_f64(p.hit_time));
        kv("[probe] radii", join_f64(&p.radii));
        kv("[probe] windows", join_f64(&p.windows));
        kv("[probe] xi_mode", p.xi_mode.to_string());
        kv("[probe] xi_scale", format_f64(p.xi_scale));
        kv("[probe] samples", p.samples.to_string());
        kv("[probe] gap_horizon", opt(p.gap_horizon));
        kv("[probe] directions", p.directions.to_string());
        kv("[probe] epsilon", format_f64(p.epsilon));
        kv("[probe] states", p.states.to_string());
        kv("[probe] paths", p.paths.to_string());
        kv("[probe] generator_step", format_f64(p.generator_step));
        kv("[probe] t_over_m", format_f64(p.t_over_m));
        for (k, v) in [
            ("tol_spread", t.spread),
            ("tol_langevin", t.langevin_rel),
            ("tol_variance", t.variance_rel),
            ("tol_tangent", t.tangent_rel),
            ("tol_generator", t.generator_rel),
            ("tol_plateau", t.plateau_factor),
            ("tol_linear_rate", t.linear_rate_rel),
            ("tol_gap_ratio", t.gap_ratio),
            ("tol_invariant_ratio", t.invariant_ratio),
            ("tol_floor", t.floor_factor),
            ("tol_autocorrelation", t.autocorrelation),
        ] {
            kv(&format!("[probe] {k}"), format_f64(v));
        }
        s
    }

    /// Re-parsable text form of the configuration, including `out` and `workers`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for line in self.canonical().lines() {
            let (head, rest) = line.split_once("] ").expect("canonical lines carry a section");
            let sec = &head[1..];
            if sec != current {
                if !current.is_empty() {
                    out.push('\n');
                }
                out.push_str(&format!("[{sec}]\n"));
                current = sec;
            }
            out.push_str(rest);
            out.push('\n');
            if rest.starts_with("initial_v") {
                out.push_str(&format!("out = {}\n", self.out.display()));
                out.push_str(&format!("workers = {}\n", self.workers));
            }
        }
        out
    }

    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.canonical().as_bytes()))
    }

    fn phi(&self) -> Result<PhiSpec> {
        PhiSpec::new(self.phi_terms.iter().map(|&(c, p)| PowerTerm::new(c, p)).collect())
    }

    fn basis(&self) -> Result<Arc<Basis>> {
        Ok(Basis::new(DomainSpec::new(self.lengths.clone(), self.modes.clone())?))
    }

    /// Runs every validator; never fails, failures are listed in the report.
    pub fn validate(&self) -> ValidationReport {
        let mut checks = Vec::new();
        let mut push = |name: &str, r: std::result::Result<String, String>| {
            let (passed, detail) = match r {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            checks.push(Validation {
                name: name.to_string(),
                passed,
                detail,
            });
        };
        let basis = self.basis();
        push(
            "domain",
            basis
                .as_ref()
                .map(|b| format!("{} modes", b.len()))
                .map_err(|e| e.to_string()),
        );
        let phi = self.phi();
        let phi_report = phi.as_ref().ok().and_then(|p| p.validate().ok());
        push(
            "phi",
            match &phi {
                Err(e) => Err(e.to_string()),
                Ok(p) => p
                    .validate()
                    .map(|r| format!("lambda = {}, a_phi = {}", r.lambda, r.a_phi))
                    .map_err(|e| e.to_string()),
            },
        );
        if let Some(c) = self.cutoff {
            push(
                "cutoff",
                CutoffSpec::new(c).map(|_| format!("R = {c}")).map_err(|e| e.to_string()),
            );
        }
        let q_report = match (&basis, &phi_report) {
            (Ok(b), Some(r)) => Some(validate_q(&self.q, r.a_phi, b)),
            _ => None,
        };
        push(
            "noise",
            match &q_report {
                None => Err("needs a valid domain and phi".into()),
                Some(Ok(r)) => Ok(format!("n_bar = {}, a_Q = {}", r.n_bar, r.a_q)),
                Some(Err(e)) => Err(e.to_string()),
            },
        );
        push("sim", self.sim_checks(basis.as_ref().ok()).map(|_| "ok".into()));
        push(
            "metric",
            self.metric_params()
                .map(|p| format!("N = {}, beta = {}", p.n, p.beta))
                .map_err(|e| e.to_string()),
        );
        push("probe", self.probe_checks().map(|_| "ok".into()));
        let passed = checks.iter().all(|c| c.passed);
        ValidationReport {
            config_hash: self.hash(),
            passed,
            checks,
            phi: phi_report,
            noise: q_report.and_then(|r| r.ok()),
        }
    }

    fn sim_checks(&self, basis: Option<&Arc<Basis>>) -> std::result::Result<(), String> {
        if !(self.mass.is_finite() && self.mass >= 0.0) {
            return Err(format!("mass must be finite and nonnegative, got {}", self.mass));
        }
        if !(self.step > 0.0 && self.step.is_finite() && self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(format!("need 0 < step and 0 <= horizon, got {} and {}", self.step, self.horizon));
        }
        if self.horizon > 0.0 && self.step > self.horizon * (1.0 + 1e-12) {
            return Err(format!("step {} exceeds horizon {}", self.step, self.horizon));
        }
        if self.stride == 0 {
            return Err("stride must be at least 1".into());
        }
        if let Some(b) = basis {
            if self.initial_u.len() > b.len() || self.initial_v.len() > b.len() {
                return Err(format!("initial data has more coefficients than the {} modes", b.len()));
            }
        }
        if self.initial_u.iter().chain(&self.initial_v).any(|x| !x.is_finite()) {
            return Err("initial data must be finite".into());
        }
        Ok(())
    }

    fn probe_checks(&self) -> std::result::Result<(), String> {
        let p = &self.probe;
        let positive = [
            ("trajectories", p.trajectories),
            ("pairs", p.pairs),
            ("samples", p.samples),
            ("directions", p.directions),
            ("states", p.states),
            ("paths", p.paths),
            ("xi_mode", p.xi_mode),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(format!("{k} must be positive"));
        }
        if !(p.thin > 0.0) {
            return Err("thin must be positive".into());
        }
        if !(p.burn_in >= 0.0) {
            return Err("burn_in must be nonnegative".into());
        }
        if p.burn_in > 0.0 && p.burn_in >= self.horizon {
            return Err(format!("burn_in {} must be shorter than the horizon {}", p.burn_in, self.horizon));
        }
        if p.masses.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err("masses must be finite and nonnegative".into());
        }
        if !(p.epsilon > 0.0 && p.generator_step > 0.0 && p.t_over_m > 0.0) {
            return Err("epsilon, generator_step and t_over_m must be positive".into());
        }
        let t = &p.tolerances;
        let tols = [
            t.spread,
            t.langevin_rel,
            t.variance_rel,
            t.tangent_rel,
            t.generator_rel,
            t.plateau_factor,
            t.linear_rate_rel,
            t.gap_ratio,
            t.invariant_ratio,
            t.floor_factor,
            t.autocorrelation,
        ];
        if tols.iter().any(|x| !(*x > 0.0)) {
            return Err("tolerances must be positive".into());
        }
        for o in &p.observables {
            if let Observable::ClippedNorm { scale } | Observable::ClippedMode { scale, .. } = o {
                if !(*scale > 0.0 && scale.is_finite()) {
                    return Err(format!("observable {} has no certified Lipschitz bound", o.name()));
                }
            }
        }
        Ok(())
    }

    fn metric_params(&self) -> Result<MetricParams> {
        let lambda = self.phi()?.lambda();
        let mut p = MetricParams::new(self.metric_n, self.metric_beta, self.mass, lambda)?;
        p.quad_points = self.quad_points;
        p.log_cap = self.log_cap;
        p.validate()?;
        Ok(p)
    }

    /// Simulation and ensemble configurations; fails with `InvalidConfig`
    /// naming the first failed validator.
    pub fn build(&self) -> Result<(SimConfig, EnsembleConfig)> {
        let report = self.validate();
        if let Some(f) = report.failures().first() {
            return Err(Error::InvalidConfig(format!("{}: {}", f.name, f.detail)));
        }
        let basis = self.basis()?;
        let n = basis.len();
        let mut u = self.initial_u.clone();
        let mut v = self.initial_v.clone();
        u.resize(n, 0.0);
        v.resize(n, 0.0);
        let mut sim = SimConfig::new(&basis, self.phi()?, self.q.clone(), self.mass, self.step, self.horizon);
        sim.cutoff = self.cutoff.map(CutoffSpec::new).transpose()?;
        sim.stride = self.stride;
        sim.scheme = self.scheme;
        sim.seed = self.seed;
        sim.initial = PhaseState::from_coeffs(&basis, u, v)?;
        let p = &self.probe;
        let mut ens = EnsembleConfig::new(sim.clone(), p.trajectories)?;
        ens.burn_in = p.burn_in;
        ens.thin = p.thin;
        ens.masses = if p.masses.is_empty() { vec![self.mass] } else { p.masses.clone() };
        ens.metric = self.metric_params()?;
        ens.observables = p.observables.clone();
        ens.workers = self.workers;
        ens.tolerances = p.tolerances.clone();
        ens.config_hash = Some(report.config_hash);
        Ok((sim, ens))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CANONICAL: &str = "
# canonical model
[domain]
lengths = 3.141592653589793
modes = 16

[phi]
terms = (1, 1), (-1, 1.5)

[noise]
sigma = 1
gamma = 2

[sim]
mass = 0.1
step = 0.001
horizon = 1
seed = 7

[probe]
masses = 1, 0.1, 0.01
observables = norm:1, mode:2:0.5
";

    #[test]
    fn canonical_config_validates() {
        let c = RunConfig::parse(CANONICAL).unwrap();
        assert_eq!(c.modes, vec![16]);
        assert_eq!(c.phi_terms, vec![(1.0, 1.0), (-1.0, 1.5)]);
        assert_eq!(c.q, QSpec::Decay { sigma: 1.0, gamma: 2.0 });
        assert_eq!(c.probe.observables[1], Observable::ClippedMode { index: 1, scale: 0.5 });
        let r = c.validate();
        assert!(r.passed, "{:?}", r.failures());
        assert_eq!(r.noise.unwrap().n_bar, 2);
        let (sim, ens) = c.build().unwrap();
        assert_eq!(sim.seed, 7);
        assert_eq!(ens.masses, vec![1.0, 0.1, 0.01]);
        assert_eq!(ens.hash(), c.hash());
    }

    #[test]
    fn cubic_reaction_fails_validation_not_parsing() {
        let text = CANONICAL.replace("(-1, 1.5)", "(-1, 3)");
        let c = RunConfig::parse(&text).unwrap();
        let r = c.validate();
        assert!(!r.passed);
        let f = r.failures();
        assert_eq!(f[0].name, "phi");
        assert!(f[0].detail.contains("growth exponent 3"));
        assert!(matches!(c.build(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn malformed_input_is_a_parse_error() {
        for (text, line) in [
            ("[sim]\nmas = 1\n", 2),
            ("[sim]\nmass = one\n", 2),
            ("[simulation]\n", 1),
            ("mass = 1\n", 1),
            ("[sim]\nmass 1\n", 2),
            ("[sim]\nmass = 1\nmass = 2\n", 3),
            ("[phi]\nterms = 1, 1\n", 2),
            ("[noise]\nq = 1\nsigma = 1\n", 3),
            ("[sim]\nscheme = rk4\n", 2),
        ] {
            match RunConfig::parse(text) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text:?} gave {other:?}"),
            }
        }
    }

    #[test]
    fn text_round_trip_and_hash() {
        let mut c = RunConfig::parse(CANONICAL).unwrap();
        c.initial_u = vec![0.1, 1.0 / 3.0];
        c.probe.fit_end = Some(2.5);
        c.q = QSpec::Explicit(vec![1.0, 0.5]);
        let back = RunConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let mut d = c.clone();
        d.workers = 7;
        d.out = PathBuf::from("elsewhere");
        assert_eq!(d.hash(), c.hash());
        d.seed += 1;
        assert_ne!(d.hash(), c.hash());
    }

    #[test]
    fn comments_and_whitespace_do_not_change_the_hash() {
        let a = RunConfig::parse(CANONICAL).unwrap();
        let spaced = CANONICAL.replace("mass = 0.1", "mass   =   0.100   # wave").replace("\n\n", "\n# note\n\n");
        assert_eq!(RunConfig::parse(&spaced).unwrap().hash(), a.hash());
    }

    #[test]
    fn probe_settings_are_validated() {
        let mut c = RunConfig::parse(CANONICAL).unwrap();
        c.probe.burn_in = 2.0;
        assert!(!c.validate().passed);
        c.probe.burn_in = 0.5;
        c.probe.observables = vec![Observable::ClippedNorm { scale: 0.0 }];
        assert!(!c.validate().passed);
        c.probe.observables.clear();
        c.initial_u = vec![0.0; 17];
        assert_eq!(c.validate().failures()[0].name, "sim");
    }
}
