//! Path metric, distance-like functions and Wasserstein distances between
//! equal-size empirical measures.
//!
//! The infimum over paths in the metric is replaced by the straight segment,
//! so every value here is an upper bound on the true distance.

use std::io::{BufRead, Write};
use std::num::NonZeroUsize;
use std::str::FromStr;
use std::sync::Arc;

use gauss_quad::GaussLegendre;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{dot, sobolev_sq, Basis};
use crate::dynamics::{format_f64, PhaseState};
use crate::error::{Error, Result};
use crate::functionals::v_m_raw;

pub const MAX_ASSIGNMENT: usize = 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricParams {
    /// Scale N.
    pub n: f64,
    pub beta: f64,
    pub mass: f64,
    /// Growth exponent of the reaction, entering V_m.
    pub lambda: f64,
    pub quad_points: usize,
    /// Natural log of the largest value reported before flagging overflow.
    pub log_cap: f64,
}

impl MetricParams {
    pub fn new(n: f64, beta: f64, mass: f64, lambda: f64) -> Result<Self> {
        let p = Self {
            n,
            beta,
            mass,
            lambda,
            quad_points: 16,
            log_cap: 700.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.n > 0.0 && self.n.is_finite()) {
            return Err(Error::InvalidArgument(format!("metric scale N must be positive, got {}", self.n)));
        }
        // beta = 0 is kept for the exact H-distance reduction
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("beta must be nonnegative, got {}", self.beta)));
        }
        if !(self.mass >= 0.0 && self.mass.is_finite()) {
            return Err(Error::InvalidMass(self.mass));
        }
        if self.quad_points < 2 {
            return Err(Error::InvalidArgument("at least two quadrature points".into()));
        }
        Ok(())
    }

    pub fn with_beta(&self, beta: f64) -> Self {
        Self { beta, ..self.clone() }
    }

    pub fn with_mass(&self, mass: f64) -> Self {
        Self { mass, ..self.clone() }
    }

    fn nodes(&self) -> Vec<(f64, f64)> {
        // mapped from [-1, 1] to [0, 1]
        let n = NonZeroUsize::new(self.quad_points).expect("validated");
        GaussLegendre::new(n)
            .as_node_weight_pairs()
            .iter()
            .map(|&(x, w)| (0.5 * (x + 1.0), 0.5 * w))
            .collect()
    }
}

fn v_m(basis: &Basis, p: &MetricParams, s: &PhaseState) -> f64 {
    v_m_raw(basis, p.lambda, p.mass, s.u.coeffs(), s.v.coeffs())
}

/// (m|du|_{H^1}^2 + m^2|dv|^2 + |du|^2)^{1/2}
fn speed(basis: &Basis, m: f64, a: &PhaseState, b: &PhaseState) -> f64 {
    let du: Vec<f64> = a.u.coeffs().iter().zip(b.u.coeffs()).map(|(x, y)| x - y).collect();
    let mut s = dot(&du, &du);
    if m > 0.0 {
        let dv: Vec<f64> = a.v.coeffs().iter().zip(b.v.coeffs()).map(|(x, y)| x - y).collect();
        s += m * sobolev_sq(basis.eigenvalues(), &du, 1.0) + m * m * dot(&dv, &dv);
    }
    s.sqrt()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let top = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return top;
    }
    top + xs.iter().map(|x| (x - top).exp()).sum::<f64>().ln()
}

/// log of the straight-path metric; -inf for coincident states.
pub fn log_rho_beta(a: &PhaseState, b: &PhaseState, p: &MetricParams) -> f64 {
    let basis = a.basis();
    let g = speed(basis, p.mass, a, b);
    if g == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p.beta == 0.0 {
        return g.ln();
    }
    let terms: Vec<f64> = p
        .nodes()
        .iter()
        .map(|&(s, w)| {
            let x = b.axpy(s, &a.axpy(-1.0, b));
            w.ln() + p.beta * v_m(basis, p, &x)
        })
        .collect();
    // the weight e^{beta V} is at least one
    g.ln() + log_sum_exp(&terms).max(0.0)
}

pub fn rho_beta(a: &PhaseState, b: &PhaseState, p: &MetricParams) -> Result<f64> {
    let l = log_rho_beta(a, b, p);
    if l > p.log_cap || l.is_nan() {
        return Err(Error::Overflow { log_value: l });
    }
    Ok(l.exp())
}

pub fn d_n_beta(a: &PhaseState, b: &PhaseState, p: &MetricParams) -> f64 {
    let l = p.n.ln() + log_rho_beta(a, b, p);
    if l >= 0.0 {
        1.0
    } else {
        l.exp()
    }
}

fn log_bracket(x: f64, y: f64) -> f64 {
    log_sum_exp(&[0.0, x, y])
}

fn finish(d: f64, log_br: f64, cap: f64) -> Result<f64> {
    if d == 0.0 {
        return Ok(0.0);
    }
    let l = 0.5 * (d.ln() + log_br);
    if l > cap || l.is_nan() {
        return Err(Error::Overflow { log_value: l });
    }
    Ok(l.exp())
}

/// sqrt(d_N_beta [1 + e^{beta V_m(U)} + e^{beta V_m(U~)}])
pub fn dtilde_m(a: &PhaseState, b: &PhaseState, p: &MetricParams) -> Result<f64> {
    let basis = a.basis();
    let d = d_n_beta(a, b, p);
    let lb = log_bracket(p.beta * v_m(basis, p, a), p.beta * v_m(basis, p, b));
    finish(d, lb, p.log_cap)
}

/// sqrt((N|u - u~| ^ 1) [1 + e^{beta |u|^2} + e^{beta |u~|^2}])
pub fn dtilde_0(u: &[f64], w: &[f64], p: &MetricParams) -> Result<f64> {
    let diff: f64 = u.iter().zip(w).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let d = (p.n * diff).min(1.0);
    let lb = log_bracket(p.beta * dot(u, u), p.beta * dot(w, w));
    finish(d, lb, p.log_cap)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ground {
    /// |u - u~|_H
    H,
    Rho,
    DNBeta,
    DTildeM,
    DTilde0,
}

impl Ground {
    pub fn is_metric(self) -> bool {
        matches!(self, Ground::H | Ground::Rho | Ground::DNBeta)
    }

    pub fn eval(self, a: &PhaseState, b: &PhaseState, p: &MetricParams) -> Result<f64> {
        match self {
            Ground::H => Ok(speed(a.basis(), 0.0, a, b)),
            Ground::Rho => rho_beta(a, b, p),
            Ground::DNBeta => Ok(d_n_beta(a, b, p)),
            Ground::DTildeM => dtilde_m(a, b, p),
            Ground::DTilde0 => dtilde_0(a.u.coeffs(), b.u.coeffs(), p),
        }
    }
}

impl FromStr for Ground {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "h" | "H" => Ground::H,
            "rho" => Ground::Rho,
            "d" | "d_n_beta" => Ground::DNBeta,
            "dtilde" | "dtilde_m" => Ground::DTildeM,
            "dtilde0" | "dtilde_0" => Ground::DTilde0,
            other => return Err(Error::InvalidArgument(format!("unknown ground distance '{other}'"))),
        })
    }
}

/// Uniform empirical measure over phase states on one basis.
#[derive(Clone, Debug)]
pub struct EmpiricalMeasure {
    basis: Arc<Basis>,
    samples: Vec<PhaseState>,
    u_only: bool,
}

impl PartialEq for EmpiricalMeasure {
    fn eq(&self, other: &Self) -> bool {
        self.u_only == other.u_only && self.samples == other.samples
    }
}

const FILE_TAG: &str = "# kramers empirical";

impl EmpiricalMeasure {
    pub fn new(samples: Vec<PhaseState>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::InvalidArgument("empirical measure needs at least one sample".into()))?;
        let basis = Arc::clone(first.basis());
        if samples.iter().any(|s| !Arc::ptr_eq(s.basis(), &basis) && s.basis().domain() != basis.domain()) {
            return Err(Error::InvalidArgument("samples live on different bases".into()));
        }
        Ok(Self {
            basis,
            samples,
            u_only: false,
        })
    }

    /// Measure over u-fields, stored with zero velocity.
    pub fn from_fields(basis: &Arc<Basis>, fields: Vec<Vec<f64>>) -> Result<Self> {
        let n = basis.len();
        let samples = fields
            .into_iter()
            .map(|u| PhaseState::from_coeffs(basis, u, vec![0.0; n]))
            .collect::<Result<Vec<_>>>()?;
        let mut m = Self::new(samples)?;
        m.u_only = true;
        Ok(m)
    }

    /// The u-marginal.
    pub fn marginal(&self) -> Self {
        let samples = self
            .samples
            .iter()
            .map(|s| PhaseState {
                u: s.u.clone(),
                v: crate::domain::SpectralField::zeros(&self.basis),
            })
            .collect();
        Self {
            basis: Arc::clone(&self.basis),
            samples,
            u_only: true,
        }
    }

    pub fn basis(&self) -> &Arc<Basis> {
        &self.basis
    }

    pub fn samples(&self) -> &[PhaseState] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_marginal(&self) -> bool {
        self.u_only
    }

    fn header(&self) -> String {
        let d = self.basis.domain();
        let join = |xs: Vec<String>| xs.join(";");
        format!(
            "{FILE_TAG} lengths={} modes={} u_only={} samples={}",
            join(d.lengths().iter().map(|x| format_f64(*x)).collect()),
            join(d.modes_per_axis().iter().map(|x| x.to_string()).collect()),
            self.u_only,
            self.samples.len()
        )
    }

    /// One sample per line: the u coefficients, then (unless marginal) the v coefficients.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "{}", self.header())?;
        for s in &self.samples {
            let mut vals: Vec<String> = s.u.coeffs().iter().map(|x| format_f64(*x)).collect();
            if !self.u_only {
                vals.extend(s.v.coeffs().iter().map(|x| format_f64(*x)));
            }
            writeln!(out, "{}", vals.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(basis: &Arc<Basis>, input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "empty sample file".into(),
        })??;
        let u_only = header.contains("u_only=true");
        let probe = Self {
            basis: Arc::clone(basis),
            samples: Vec::new(),
            u_only,
        };
        let expect = probe.header();
        let strip = |h: &str| h.split(" samples=").next().unwrap_or("").to_string();
        if strip(&header) != strip(&expect) {
            return Err(Error::InvalidConfig(format!(
                "sample file header '{header}' does not match basis '{}'",
                strip(&expect)
            )));
        }
        let n = basis.len();
        let width = if u_only { n } else { 2 * n };
        let mut samples = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let vals = line
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    line: i + 2,
                    message: e.to_string(),
                })?;
            if vals.len() != width {
                return Err(Error::Parse {
                    line: i + 2,
                    message: format!("expected {width} values, found {}", vals.len()),
                });
            }
            let v = if u_only { vec![0.0; n] } else { vals[n..].to_vec() };
            samples.push(PhaseState::from_coeffs(basis, vals[..n].to_vec(), v)?);
        }
        let mut m = Self::new(samples)?;
        m.u_only = u_only;
        Ok(m)
    }
}

/// Row-major n x n ground-cost matrix, rows from `a`.
pub fn cost_matrix(a: &EmpiricalMeasure, b: &EmpiricalMeasure, ground: Ground, p: &MetricParams) -> Result<Vec<f64>> {
    let n = b.len();
    let rows: Vec<Result<Vec<f64>>> = a
        .samples
        .par_iter()
        .map(|x| b.samples.iter().map(|y| ground.eval(x, y, p)).collect())
        .collect();
    let mut out = Vec::with_capacity(a.len() * n);
    for r in rows {
        out.extend(r?);
    }
    Ok(out)
}

/// Minimum average cost over permutations.
pub fn assignment_cost(cost: &[f64], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let (rows, cols) = lsap::solve(n, n, &cost.to_vec(), false).expect("finite square cost matrix");
    rows.iter().zip(&cols).map(|(&i, &j)| cost[i * n + j]).sum::<f64>() / n as f64
}

pub fn wasserstein(a: &EmpiricalMeasure, b: &EmpiricalMeasure, ground: Ground, p: &MetricParams) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::EmpiricalSizeMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() > MAX_ASSIGNMENT {
        return Err(Error::SizeExceeded {
            size: a.len(),
            limit: MAX_ASSIGNMENT,
        });
    }
    let c = cost_matrix(a, b, ground, p)?;
    Ok(assignment_cost(&c, a.len()))
}

/// Bounded observables with a certified Lipschitz constant for the
/// distance-like function dtilde_0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Observable {
    Constant(f64),
    /// min(scale |u|_H, 1)
    ClippedNorm { scale: f64 },
    /// min(scale |u_k|, 1)
    ClippedMode { index: usize, scale: f64 },
}

impl Observable {
    pub fn eval(&self, s: &PhaseState) -> f64 {
        match *self {
            Observable::Constant(c) => c,
            Observable::ClippedNorm { scale } => (scale * s.u.sobolev_norm(0.0)).min(1.0),
            Observable::ClippedMode { index, scale } => (scale * s.u.coeffs()[index].abs()).min(1.0),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Observable::Constant(c) => format!("const({c})"),
            Observable::ClippedNorm { scale } => format!("clipped_norm({scale})"),
            Observable::ClippedMode { index, scale } => format!("clipped_mode({},{scale})", index + 1),
        }
    }

    /// Lipschitz constant with respect to dtilde_0 with scale N.
    ///
    /// |f(u) - f(u~)| <= min(s|u - u~|, 1) <= max(1, s/N) (N|u - u~| ^ 1), and
    /// d <= sqrt(d) <= dtilde_0 / sqrt(3) because d <= 1 and the bracket is at least 3.
    pub fn lipschitz(&self, p: &MetricParams) -> f64 {
        match *self {
            Observable::Constant(_) => 0.0,
            Observable::ClippedNorm { scale } | Observable::ClippedMode { scale, .. } => {
                (scale / p.n).max(1.0) / 3f64.sqrt()
            }
        }
    }
}

impl FromStr for Observable {
    type Err = Error;

    /// `const:<c>`, `norm:<scale>` or `mode:<k>:<scale>` with k 1-based.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad observable '{s}'"));
        let parts: Vec<&str> = s.split(':').collect();
        let num = |x: &str| x.parse::<f64>().map_err(|_| bad());
        match parts.as_slice() {
            ["const", c] => Ok(Observable::Constant(num(c)?)),
            ["norm", sc] => Ok(Observable::ClippedNorm { scale: num(sc)? }),
            ["mode", k, sc] => {
                let k: usize = k.parse().map_err(|_| bad())?;
                if k == 0 {
                    return Err(bad());
                }
                Ok(Observable::ClippedMode {
                    index: k - 1,
                    scale: num(sc)?,
                })
            }
            _ => Err(bad()),
        }
    }
}

/// |mean_A f - mean_B f| / lip, a lower bound on the Wasserstein distance for
/// any ground distance in which f is `lip`-Lipschitz.
pub fn dual_lower_bound(
    f: impl Fn(&PhaseState) -> f64,
    lip: f64,
    a: &EmpiricalMeasure,
    b: &EmpiricalMeasure,
) -> Result<f64> {
    if !(lip > 0.0) {
        return Err(Error::ZeroLipschitz);
    }
    let mean = |m: &EmpiricalMeasure| m.samples.iter().map(&f).sum::<f64>() / m.len() as f64;
    Ok((mean(a) - mean(b)).abs() / lip)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TriangleAudit {
    pub triples: usize,
    /// Smallest C with W_beta(1,3) <= C [W_{2 beta}(1,2) + W_{2 beta}(2,3)].
    pub fitted_c: f64,
    pub violations: usize,
}

/// Generalized triangle estimate for dtilde_0 between beta and 2 beta.
pub fn triangle_audit(triples: &[[EmpiricalMeasure; 3]], p: &MetricParams) -> Result<TriangleAudit> {
    let p2 = p.with_beta(2.0 * p.beta);
    let mut pairs = Vec::with_capacity(triples.len());
    for [a, b, c] in triples {
        let lhs = wasserstein(a, c, Ground::DTilde0, p)?;
        let rhs = wasserstein(a, b, Ground::DTilde0, &p2)? + wasserstein(b, c, Ground::DTilde0, &p2)?;
        pairs.push((lhs, rhs));
    }
    let fitted_c = pairs
        .iter()
        .map(|&(l, r)| if l == 0.0 { 0.0 } else if r == 0.0 { f64::INFINITY } else { l / r })
        .fold(0.0, f64::max);
    let violations = pairs.iter().filter(|&&(l, r)| l > fitted_c * r).count();
    Ok(TriangleAudit {
        triples: triples.len(),
        fitted_c,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::DomainSpec;
    use crate::noise::NoiseStream;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn basis(n: usize) -> Arc<Basis> {
        Basis::new(DomainSpec::interval(PI, n).unwrap())
    }

    fn random_state(b: &Arc<Basis>, rng: &mut NoiseStream, scale: f64) -> PhaseState {
        let n = b.len();
        let z = rng.normals(2 * n);
        let u = (0..n).map(|k| scale * z[k] / (k + 1) as f64).collect();
        let v = (0..n).map(|k| scale * z[n + k] / (k + 1) as f64).collect();
        PhaseState::from_coeffs(b, u, v).unwrap()
    }

    fn params(m: f64, beta: f64) -> MetricParams {
        MetricParams::new(4.0, beta, m, 1.5).unwrap()
    }

    #[test]
    fn rho_vanishes_on_diagonal_and_is_symmetric() {
        let b = basis(8);
        let mut rng = NoiseStream::new(1, 0);
        let p = params(0.3, 0.1);
        for _ in 0..20 {
            let x = random_state(&b, &mut rng, 1.0);
            let y = random_state(&b, &mut rng, 1.0);
            assert_eq!(rho_beta(&x, &x, &p).unwrap(), 0.0);
            let (r1, r2) = (rho_beta(&x, &y, &p).unwrap(), rho_beta(&y, &x, &p).unwrap());
            assert!((r1 - r2).abs() <= 1e-14 * r1);
        }
    }

    #[test]
    fn rho_reduces_to_h_distance() {
        let b = basis(8);
        let mut rng = NoiseStream::new(2, 0);
        let p = params(0.0, 0.0);
        let x = random_state(&b, &mut rng, 1.0);
        let y = random_state(&b, &mut rng, 1.0);
        let h = x.u.coeffs().iter().zip(y.u.coeffs()).map(|(a, c)| (a - c) * (a - c)).sum::<f64>().sqrt();
        assert_eq!(rho_beta(&x, &y, &p).unwrap(), h);
    }

    #[test]
    fn quadrature_converges() {
        // |u|^{lambda+1} limits smoothness along the path, so the canonical
        // growth needs more nodes than the polynomial case
        let b = basis(16);
        let mut rng = NoiseStream::new(3, 0);
        for (lambda, coarse) in [(1.0, 8), (1.5, 16)] {
            for _ in 0..10 {
                let x = random_state(&b, &mut rng, 0.7);
                let y = random_state(&b, &mut rng, 0.7);
                let mut p = MetricParams::new(4.0, 0.2, 0.5, lambda).unwrap();
                p.quad_points = coarse;
                let r0 = rho_beta(&x, &y, &p).unwrap();
                p.quad_points = 32;
                let r1 = rho_beta(&x, &y, &p).unwrap();
                assert!((r0 - r1).abs() < 1e-6 * r1, "{lambda}: {r0} vs {r1}");
            }
        }
    }

    #[test]
    fn rho_against_trapezoid_oracle() {
        let b = basis(6);
        let mut rng = NoiseStream::new(4, 0);
        let x = random_state(&b, &mut rng, 1.0);
        let y = random_state(&b, &mut rng, 1.0);
        let p = params(0.4, 0.3);
        let g = speed(&b, 0.4, &x, &y);
        let k = 20000;
        let f = |s: f64| (p.beta * v_m(&b, &p, &y.axpy(s, &x.axpy(-1.0, &y)))).exp();
        let mut acc = 0.5 * (f(0.0) + f(1.0));
        for i in 1..k {
            acc += f(i as f64 / k as f64);
        }
        let want = g * acc / k as f64;
        let got = rho_beta(&x, &y, &p).unwrap();
        assert!((got - want).abs() < 1e-6 * want);
    }

    #[test]
    fn overflow_is_flagged() {
        let b = basis(4);
        let mut x = PhaseState::zeros(&b);
        x.u.coeffs_mut()[0] = 100.0;
        let y = PhaseState::zeros(&b);
        let p = params(1.0, 1.0);
        assert!(matches!(rho_beta(&x, &y, &p), Err(Error::Overflow { .. })));
        assert!(matches!(dtilde_m(&x, &y, &p), Err(Error::Overflow { .. })));
        assert_eq!(d_n_beta(&x, &y, &p), 1.0);
    }

    #[test]
    fn d_clamps_and_is_monotone_in_n() {
        let b = basis(8);
        let mut rng = NoiseStream::new(5, 0);
        let x = random_state(&b, &mut rng, 1.0);
        let y = random_state(&b, &mut rng, 1.0);
        let mut p = params(0.2, 0.05);
        assert_eq!(d_n_beta(&x, &x, &p), 0.0);
        p.n = 1e6;
        assert_eq!(d_n_beta(&x, &y, &p), 1.0);
        let mut last = 0.0;
        for n in [1e-3, 1e-2, 0.1, 1.0, 10.0] {
            p.n = n;
            let d = d_n_beta(&x, &y, &p);
            assert!(d >= last && d <= 1.0);
            last = d;
        }
    }

    #[test]
    fn dtilde_examples() {
        let b = basis(4);
        let z = PhaseState::zeros(&b);
        let p = params(0.5, 0.1);
        assert_eq!(dtilde_m(&z, &z, &p).unwrap(), 0.0);
        assert_eq!(dtilde_0(&[0.0; 4], &[0.0; 4], &p).unwrap(), 0.0);
        let mut q = params(0.0, 1e-12);
        q.n = 1e9;
        let v = dtilde_0(&[1.0, 0.0], &[0.0, 1.0], &q).unwrap();
        assert!((v - 3f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn wasserstein_small_cases() {
        let b = basis(4);
        let mut rng = NoiseStream::new(6, 0);
        let p = params(0.5, 0.1);
        let xs: Vec<PhaseState> = (0..5).map(|_| random_state(&b, &mut rng, 1.0)).collect();
        let a = EmpiricalMeasure::new(xs.clone()).unwrap();
        for g in [Ground::H, Ground::Rho, Ground::DNBeta, Ground::DTildeM, Ground::DTilde0] {
            assert_eq!(wasserstein(&a, &a, g, &p).unwrap(), 0.0);
        }
        let s1 = EmpiricalMeasure::new(vec![xs[0].clone()]).unwrap();
        let s2 = EmpiricalMeasure::new(vec![xs[1].clone()]).unwrap();
        assert_eq!(
            wasserstein(&s1, &s2, Ground::DTildeM, &p).unwrap(),
            dtilde_m(&xs[0], &xs[1], &p).unwrap()
        );
        assert!(matches!(
            wasserstein(&a, &s1, Ground::H, &p),
            Err(Error::EmpiricalSizeMismatch { left: 5, right: 1 })
        ));
    }

    fn brute_force(cost: &[f64], n: usize) -> f64 {
        fn rec(cost: &[f64], n: usize, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if row == n {
                *best = best.min(acc);
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    rec(cost, n, row + 1, used, acc + cost[row * n + j], best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(cost, n, 0, &mut vec![false; n], 0.0, &mut best);
        best / n as f64
    }

    #[test]
    fn assignment_matches_permutation_search() {
        let mut rng = NoiseStream::new(7, 0);
        for n in 1..=6 {
            for _ in 0..20 {
                let c: Vec<f64> = rng.normals(n * n).iter().map(|x| x.abs()).collect();
                let a = assignment_cost(&c, n);
                assert!((a - brute_force(&c, n)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dual_bound_below_exact_transport() {
        let b = basis(6);
        let mut rng = NoiseStream::new(8, 0);
        let p = params(0.0, 0.05);
        let f = Observable::ClippedNorm { scale: 1.0 };
        for _ in 0..100 {
            let a = EmpiricalMeasure::new((0..6).map(|_| random_state(&b, &mut rng, 1.0)).collect()).unwrap();
            let c = EmpiricalMeasure::new((0..6).map(|_| random_state(&b, &mut rng, 0.5)).collect()).unwrap();
            let lb = dual_lower_bound(|s| f.eval(s), f.lipschitz(&p), &a, &c).unwrap();
            let w = wasserstein(&a, &c, Ground::DTilde0, &p).unwrap();
            assert!(lb <= w + 1e-12, "{lb} > {w}");
        }
        let a = EmpiricalMeasure::new(vec![PhaseState::zeros(&b)]).unwrap();
        let k = Observable::Constant(2.0);
        assert!(matches!(dual_lower_bound(|s| k.eval(s), k.lipschitz(&p), &a, &a), Err(Error::ZeroLipschitz)));
    }

    #[test]
    fn triangle_audit_is_finite() {
        let b = basis(6);
        let mut rng = NoiseStream::new(9, 0);
        let p = params(0.0, 0.1);
        let mut triples = Vec::new();
        for _ in 0..10 {
            let mut mk = |s: f64| {
                EmpiricalMeasure::new((0..16).map(|_| random_state(&b, &mut rng, s)).collect::<Vec<_>>()).unwrap()
            };
            triples.push([mk(1.0), mk(0.7), mk(1.2)]);
        }
        let r = triangle_audit(&triples, &p).unwrap();
        assert!(r.fitted_c.is_finite() && r.fitted_c > 0.0);
        assert_eq!(r.violations, 0);
        let same = EmpiricalMeasure::new(vec![random_state(&b, &mut rng, 1.0)]).unwrap();
        let r = triangle_audit(&[[same.clone(), same.clone(), same]], &p).unwrap();
        assert_eq!(r.fitted_c, 0.0);
    }

    #[test]
    fn empirical_csv_roundtrip() {
        let b = basis(5);
        let mut rng = NoiseStream::new(10, 0);
        let a = EmpiricalMeasure::new((0..4).map(|_| random_state(&b, &mut rng, 1.0)).collect()).unwrap();
        for m in [a.clone(), a.marginal()] {
            let mut buf = Vec::new();
            m.write_csv(&mut buf).unwrap();
            let back = EmpiricalMeasure::read_csv(&b, buf.as_slice()).unwrap();
            assert_eq!(back, m);
            let other = basis(6);
            assert!(EmpiricalMeasure::read_csv(&other, buf.as_slice()).is_err());
        }
    }

    #[test]
    fn observable_parsing() {
        assert_eq!("norm:2".parse::<Observable>().unwrap(), Observable::ClippedNorm { scale: 2.0 });
        assert_eq!(
            "mode:1:0.5".parse::<Observable>().unwrap(),
            Observable::ClippedMode { index: 0, scale: 0.5 }
        );
        assert!("mode:0:1".parse::<Observable>().is_err());
        assert!("sin".parse::<Observable>().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn dtilde_m_dominates_dtilde_0(seed in 0u64..10_000, m in 0.0f64..2.0, beta in 0.0f64..0.5, n in 0.1f64..20.0) {
            let b = basis(8);
            let mut rng = NoiseStream::new(seed, 0);
            let x = random_state(&b, &mut rng, 1.0);
            let y = random_state(&b, &mut rng, 1.0);
            let mut p = params(m, beta);
            p.n = n;
            let hi = dtilde_m(&x, &y, &p).unwrap();
            let lo = dtilde_0(x.u.coeffs(), y.u.coeffs(), &p).unwrap();
            prop_assert!(hi >= lo, "{} < {}", hi, lo);
        }

        #[test]
        fn d_is_bounded_symmetric_and_monotone_in_beta(seed in 0u64..10_000, m in 0.0f64..2.0, beta in 0.0f64..0.5) {
            let b = basis(6);
            let mut rng = NoiseStream::new(seed, 1);
            let x = random_state(&b, &mut rng, 1.0);
            let y = random_state(&b, &mut rng, 1.0);
            let p = params(m, beta);
            let d = d_n_beta(&x, &y, &p);
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert!((d - d_n_beta(&y, &x, &p)).abs() <= 1e-14);
            prop_assert!(d_n_beta(&x, &y, &p.with_beta(beta + 0.1)) >= d);
        }

        #[test]
        fn wasserstein_over_d_is_a_pseudometric(seed in 0u64..10_000) {
            let b = basis(4);
            let mut rng = NoiseStream::new(seed, 2);
            let p = params(0.5, 0.1);
            let mut mk = || EmpiricalMeasure::new((0..5).map(|_| random_state(&b, &mut rng, 1.0)).collect()).unwrap();
            let (x, y, z) = (mk(), mk(), mk());
            let w = |a: &EmpiricalMeasure, c: &EmpiricalMeasure| wasserstein(a, c, Ground::DNBeta, &p).unwrap();
            prop_assert!((w(&x, &y) - w(&y, &x)).abs() < 1e-12);
            prop_assert!(w(&x, &z) <= w(&x, &y) + w(&y, &z) + 1e-12);
            let wd = |a: &EmpiricalMeasure, c: &EmpiricalMeasure| wasserstein(a, c, Ground::DTildeM, &p).unwrap();
            prop_assert!((wd(&x, &y) - wd(&y, &x)).abs() < 1e-12);
        }
    }
}
