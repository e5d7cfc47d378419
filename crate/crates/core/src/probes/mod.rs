//! Monte Carlo experiments on ensembles of trajectories.
//!
//! Trajectories run in parallel; every reduction happens afterwards in
//! trajectory order, so reports do not depend on the worker count.

mod checks;
mod limits;
mod mixing;
pub mod stats;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::Basis;
use crate::dynamics::{format_f64, PhaseState, SimConfig};
use crate::error::{Error, Result};
use crate::metrics::{MetricParams, Observable};
use crate::noise::NoiseStream;

pub use checks::{generator_check, langevin_check, tangent_check};
pub use limits::{
    invariant_gap, invariant_sample, invariant_sample_report, observable_gap, small_mass_gap, InvariantSample,
};
pub use mixing::{
    asf_decay, contraction_estimate, irreducibility_probe, moment_bound_report, small_ball_probe, MomentFunctional,
};
pub use stats::Estimate;

/// Pass thresholds; the defaults are the declared tolerances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Uniform-in-m audits: (max - min) / max of fitted rates.
    pub spread: f64,
    pub langevin_rel: f64,
    pub variance_rel: f64,
    pub tangent_rel: f64,
    pub generator_rel: f64,
    pub plateau_factor: f64,
    pub linear_rate_rel: f64,
    /// g(m_min) < ratio * g(m_max) for the trajectory gap.
    pub gap_ratio: f64,
    /// excess(m_min) < ratio * excess(m_max) for the invariant gap.
    pub invariant_ratio: f64,
    /// marginal distance below factor * same-law floor.
    pub floor_factor: f64,
    pub autocorrelation: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            spread: 0.5,
            langevin_rel: 0.02,
            variance_rel: 0.05,
            tangent_rel: 1e-3,
            generator_rel: 0.05,
            plateau_factor: 2.0,
            linear_rate_rel: 0.1,
            gap_ratio: 0.2,
            invariant_ratio: 0.5,
            floor_factor: 2.0,
            autocorrelation: 0.2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EnsembleConfig {
    /// Basis, reaction, noise, step, horizon, initial state and seed. Its
    /// mass is used when `masses` is empty.
    pub template: SimConfig,
    pub trajectories: usize,
    pub burn_in: f64,
    /// Time between retained samples.
    pub thin: f64,
    pub masses: Vec<f64>,
    pub metric: MetricParams,
    pub observables: Vec<Observable>,
    /// Worker threads; 0 uses the global pool.
    pub workers: usize,
    pub tolerances: Tolerances,
    /// Digest of the run configuration, stamped into reports.
    pub config_hash: Option<String>,
}

impl EnsembleConfig {
    pub fn new(template: SimConfig, trajectories: usize) -> Result<Self> {
        let lambda = template.phi.lambda();
        let metric = MetricParams::new(1.0, 0.05, template.mass, lambda)?;
        Ok(Self {
            masses: vec![template.mass],
            template,
            trajectories,
            burn_in: 0.0,
            thin: 1.0,
            metric,
            observables: Vec::new(),
            workers: 0,
            tolerances: Tolerances::default(),
            config_hash: None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.trajectories == 0 {
            return Err(Error::InvalidConfig("trajectory count must be positive".into()));
        }
        if !(self.thin > 0.0) {
            return Err(Error::InvalidConfig("thinning interval must be positive".into()));
        }
        if !(self.burn_in >= 0.0) {
            return Err(Error::InvalidConfig("burn-in must be nonnegative".into()));
        }
        if self.masses.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::InvalidConfig("masses must be finite and nonnegative".into()));
        }
        self.metric.validate()
    }

    pub fn basis(&self) -> &Arc<Basis> {
        &self.template.basis
    }

    pub fn hash(&self) -> String {
        self.config_hash.clone().unwrap_or_else(|| {
            // the worker count does not change results
            let mut c = self.clone();
            c.workers = 0;
            let mut h = Sha256::new();
            h.update(format!("{:?}", c).as_bytes());
            hex(&h.finalize())
        })
    }

    /// Template at mass `m` for trajectory `i`.
    pub fn sim(&self, m: f64, i: usize) -> SimConfig {
        let mut c = self.template.clone();
        c.mass = m;
        c.trajectory = i as u64;
        c
    }

    /// Runs `f` for every trajectory index, in parallel, returning results in index order.
    pub fn ensemble<T: Send>(&self, n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
        let go = || (0..n).into_par_iter().map(&f).collect::<Vec<T>>();
        if self.workers == 0 {
            go()
        } else {
            match rayon::ThreadPoolBuilder::new().num_threads(self.workers).build() {
                Ok(pool) => pool.install(go),
                Err(_) => go(),
            }
        }
    }

    pub fn masses_or_template(&self) -> Vec<f64> {
        if self.masses.is_empty() {
            vec![self.template.mass]
        } else {
            self.masses.clone()
        }
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Gaussian state in the first `modes` modes, u and v with standard deviation `scale`.
pub fn gaussian_state(basis: &Arc<Basis>, modes: usize, scale: f64, rng: &mut NoiseStream) -> PhaseState {
    let n = basis.len();
    let k = modes.min(n);
    let z = rng.normals(2 * k);
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    for i in 0..k {
        u[i] = scale * z[i];
        v[i] = scale * z[k + i];
    }
    PhaseState::from_coeffs(basis, u, v).expect("sizes match")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassRow {
    pub mass: f64,
    pub values: BTreeMap<String, Estimate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Plot data: one CSV per series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Series {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        self.rows.push(row);
    }

    pub fn write_csv<W: Write>(&self, hash: &str, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "# config_hash={hash}")?;
        writeln!(out, "{}", self.columns.join(","))?;
        for r in &self.rows {
            let line: Vec<String> = r.iter().map(|x| format_f64(*x)).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub experiment: String,
    pub config_hash: String,
    pub per_mass: Vec<MassRow>,
    pub fitted: BTreeMap<String, Estimate>,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub series: Vec<Series>,
}

impl ProbeReport {
    pub fn new(experiment: &str, cfg: &EnsembleConfig) -> Self {
        Self {
            experiment: experiment.to_string(),
            config_hash: cfg.hash(),
            per_mass: Vec::new(),
            fitted: BTreeMap::new(),
            checks: Vec::new(),
            notes: Vec::new(),
            series: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn check(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(Check {
            name: name.to_string(),
            passed,
            detail,
        });
    }

    pub fn row(&mut self, mass: f64) -> &mut BTreeMap<String, Estimate> {
        if let Some(i) = self.per_mass.iter().position(|r| r.mass == mass) {
            return &mut self.per_mass[i].values;
        }
        self.per_mass.push(MassRow {
            mass,
            values: BTreeMap::new(),
        });
        &mut self.per_mass.last_mut().expect("just pushed").values
    }

    pub fn value(&self, mass: f64, key: &str) -> Option<Estimate> {
        self.per_mass
            .iter()
            .find(|r| r.mass == mass)
            .and_then(|r| r.values.get(key).copied())
    }

    /// Combines reports of one configuration; refuses reports whose hashes differ.
    pub fn merge(reports: &[ProbeReport]) -> Result<ProbeReport> {
        let first = reports
            .first()
            .ok_or_else(|| Error::InvalidArgument("nothing to merge".into()))?;
        if let Some(r) = reports.iter().find(|r| r.config_hash != first.config_hash) {
            return Err(Error::InvalidArgument(format!(
                "config hash mismatch: {} ({}) vs {} ({})",
                first.experiment, first.config_hash, r.experiment, r.config_hash
            )));
        }
        let mut out = ProbeReport {
            experiment: reports.iter().map(|r| r.experiment.as_str()).collect::<Vec<_>>().join("+"),
            config_hash: first.config_hash.clone(),
            per_mass: Vec::new(),
            fitted: BTreeMap::new(),
            checks: Vec::new(),
            notes: Vec::new(),
            series: Vec::new(),
        };
        for r in reports {
            for row in &r.per_mass {
                for (k, v) in &row.values {
                    out.row(row.mass).insert(format!("{}.{k}", r.experiment), *v);
                }
            }
            for (k, v) in &r.fitted {
                out.fitted.insert(format!("{}.{k}", r.experiment), *v);
            }
            for c in &r.checks {
                out.checks.push(Check {
                    name: format!("{}.{}", r.experiment, c.name),
                    ..c.clone()
                });
            }
            out.notes.extend(r.notes.iter().cloned());
        }
        Ok(out)
    }

    /// JSON report plus one CSV per series; returns the written paths.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut paths = Vec::new();
        let json = dir.join(format!("{}.json", self.experiment));
        std::fs::write(&json, serde_json::to_string_pretty(self)?)?;
        paths.push(json);
        for s in &self.series {
            let p = dir.join(format!("{}_{}.csv", self.experiment, s.name));
            let mut f = std::io::BufWriter::new(std::fs::File::create(&p)?);
            s.write_csv(&self.config_hash, &mut f)?;
            paths.push(p);
        }
        Ok(paths)
    }
}

/// Recorded times of a run with the given horizon and sampling interval.
pub(crate) fn grid_stride(step: f64, every: f64) -> usize {
    ((every / step).round() as usize).max(1)
}
