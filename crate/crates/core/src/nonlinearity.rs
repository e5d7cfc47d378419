//! Signed-power nonlinearities phi(x) = sum_j c_j sign(x) |x|^{p_j}, their
//! antiderivatives, growth constants, and smooth truncations.

use serde::{Deserialize, Serialize};

use crate::domain::{Basis, SpectralField};
use crate::error::{Error, Result};

const GRID_MIN: f64 = 1e-6;
const GRID_MAX: f64 = 1e6;
const GRID_POINTS: usize = 10_000;
const MARGIN: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerTerm {
    pub coefficient: f64,
    pub power: f64,
}

impl PowerTerm {
    pub fn new(coefficient: f64, power: f64) -> Self {
        Self { coefficient, power }
    }

    #[inline]
    fn value(&self, x: f64) -> f64 {
        let a = x.abs();
        let s = if self.power == 1.0 {
            x
        } else if self.power == 1.5 {
            x * a.sqrt()
        } else if self.power == 2.0 {
            x * a
        } else if self.power == 3.0 {
            x * x * x
        } else {
            x * a.powf(self.power - 1.0)
        };
        self.coefficient * s
    }

    #[inline]
    fn derivative(&self, x: f64) -> f64 {
        let a = x.abs();
        let d = if self.power == 1.0 {
            1.0
        } else if self.power == 1.5 {
            1.5 * a.sqrt()
        } else if self.power == 2.0 {
            2.0 * a
        } else if self.power == 3.0 {
            3.0 * a * a
        } else {
            self.power * a.powf(self.power - 1.0)
        };
        self.coefficient * d
    }

    fn antiderivative(&self, x: f64) -> f64 {
        let a = x.abs();
        self.coefficient * a.powf(self.power + 1.0) / (self.power + 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiSpec {
    terms: Vec<PowerTerm>,
}

impl PhiSpec {
    /// Equal powers are merged, zero coefficients dropped.
    pub fn new(terms: Vec<PowerTerm>) -> Result<Self> {
        let mut merged: Vec<PowerTerm> = Vec::new();
        for t in terms {
            if !t.coefficient.is_finite() || !t.power.is_finite() || t.power < 1.0 {
                return Err(Error::InvalidArgument(format!(
                    "term {}·|x|^{} needs a finite coefficient and power >= 1",
                    t.coefficient, t.power
                )));
            }
            match merged.iter_mut().find(|m| m.power == t.power) {
                Some(m) => m.coefficient += t.coefficient,
                None => merged.push(t),
            }
        }
        merged.retain(|t| t.coefficient != 0.0);
        merged.sort_by(|a, b| a.power.total_cmp(&b.power));
        Ok(Self { terms: merged })
    }

    pub fn zero() -> Self {
        Self { terms: Vec::new() }
    }

    pub fn linear(c: f64) -> Self {
        Self::new(vec![PowerTerm::new(c, 1.0)]).expect("finite linear term")
    }

    /// x - x|x|^{1/2}
    pub fn canonical() -> Self {
        Self::new(vec![PowerTerm::new(1.0, 1.0), PowerTerm::new(-1.0, 1.5)])
            .expect("canonical terms are valid")
    }

    pub fn terms(&self) -> &[PowerTerm] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_linear(&self) -> bool {
        self.terms.iter().all(|t| t.power == 1.0)
    }

    /// Largest power, 1 for the zero map.
    pub fn lambda(&self) -> f64 {
        self.terms.last().map_or(1.0, |t| t.power)
    }

    pub fn leading_coefficient(&self) -> f64 {
        self.terms.last().map_or(0.0, |t| t.coefficient)
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.terms.iter().map(|t| t.value(x)).sum()
    }

    #[inline]
    pub fn eval_deriv(&self, x: f64) -> f64 {
        self.terms.iter().map(|t| t.derivative(x)).sum()
    }

    /// Phi_2(x) = -int_0^x phi.
    pub fn phi2(&self, x: f64) -> f64 {
        -self.terms.iter().map(|t| t.antiderivative(x)).sum::<f64>()
    }

    pub fn validate(&self) -> Result<PhiReport> {
        validate(self)
    }

    pub fn truncate(&self, cutoff: CutoffSpec) -> TruncatedPhi {
        TruncatedPhi {
            phi: self.clone(),
            cutoff,
        }
    }
}

/// Constants certified on the validation grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiReport {
    pub lambda: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
    pub a_phi: f64,
    /// sup of |phi'| over |z| <= 1
    pub unit_lipschitz: f64,
}

fn log_grid() -> Vec<f64> {
    let (lo, hi) = (GRID_MIN.ln(), GRID_MAX.ln());
    let mut g = Vec::with_capacity(GRID_POINTS + 1);
    g.push(0.0);
    g.extend((0..GRID_POINTS).map(|i| (lo + (hi - lo) * i as f64 / (GRID_POINTS - 1) as f64).exp()));
    g
}

/// Grid maximum refined by golden-section search between the neighbours of
/// the best node.
fn refined_sup(f: impl Fn(f64) -> f64, grid: &[f64]) -> (f64, f64) {
    let vals: Vec<f64> = grid.iter().map(|&x| f(x)).collect();
    let (i, &best) = vals
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty grid");
    let lo = grid[i.saturating_sub(1)];
    let hi = grid[(i + 1).min(grid.len() - 1)];
    let (x, fx) = golden_max(&f, lo, hi);
    if fx > best {
        (x, fx)
    } else {
        (grid[i], best)
    }
}

fn golden_max(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-15 * (a.abs() + b.abs()).max(1e-300) {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc > fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

fn with_margin(x: f64) -> f64 {
    x + MARGIN * x.abs().max(1e-3)
}

fn validate(phi: &PhiSpec) -> Result<PhiReport> {
    if phi.is_zero() {
        return Err(Error::NotDissipative("phi is identically zero".into()));
    }
    let lambda = phi.lambda();
    if !(1.0..2.0).contains(&lambda) {
        return Err(Error::GrowthOutOfRange(lambda));
    }
    let lead = phi.leading_coefficient();
    if lead >= 0.0 {
        return Err(Error::NotDissipative(format!(
            "leading coefficient {lead} at power {lambda} is nonnegative"
        )));
    }
    // phi is odd, so x phi(x), phi'(x) and the ratios below are even: r >= 0 suffices.
    let grid = log_grid();

    let a_phi = derivative_sup(phi)?;
    if !a_phi.is_finite() {
        return Err(Error::UnboundedDerivative);
    }

    let a2 = 0.5 * lead.abs();
    let (_, s3) = refined_sup(|r| r * phi.eval(r) + a2 * r.powf(lambda + 1.0), &grid);
    let a3 = with_margin(s3.max(0.0)) + 1e-12;

    let (_, s1) = refined_sup(|r| phi.eval(r).abs() / (1.0 + r.powf(lambda)), &grid);
    let a1 = with_margin(s1.max(lead.abs()));

    let (_, s4) = refined_sup(
        |r| phi.eval_deriv(r).abs() / (r.powf(lambda - 1.0) + 1.0),
        &grid,
    );
    let a4 = with_margin(s4.max(lambda * lead.abs()));

    let unit: Vec<f64> = (0..=1000).map(|i| i as f64 / 1000.0).collect();
    let (_, su) = refined_sup(|r| phi.eval_deriv(r).abs(), &unit);
    let unit_lipschitz = with_margin(su);

    let report = PhiReport {
        lambda,
        a1,
        a2,
        a3,
        a4,
        a_phi,
        unit_lipschitz,
    };
    certify(phi, &report, &grid)?;
    Ok(report)
}

/// sup phi' over the real line (0 for the zero map).
pub fn derivative_sup(phi: &PhiSpec) -> Result<f64> {
    if phi.is_zero() {
        return Ok(0.0);
    }
    if phi.lambda() > 1.0 && phi.leading_coefficient() > 0.0 {
        return Err(Error::UnboundedDerivative);
    }
    if phi.lambda() == 1.0 {
        return Ok(phi.leading_coefficient());
    }
    Ok(refined_sup(|r| phi.eval_deriv(r), &log_grid()).1)
}

fn certify(phi: &PhiSpec, rep: &PhiReport, grid: &[f64]) -> Result<()> {
    let l = rep.lambda;
    for &r in grid {
        let f = phi.eval(r);
        let df = phi.eval_deriv(r);
        let tol = 1e-9 * (1.0 + r.powf(l + 1.0));
        if df > rep.a_phi + 1e-9 * (1.0 + rep.a_phi.abs()) {
            return Err(Error::BoundFitFailed(format!("phi'({r}) = {df} exceeds a_phi")));
        }
        if r * f > -rep.a2 * r.powf(l + 1.0) + rep.a3 + tol {
            return Err(Error::BoundFitFailed(format!("dissipativity fails at {r}")));
        }
        if f.abs() > rep.a1 * (1.0 + r.powf(l)) + tol {
            return Err(Error::BoundFitFailed(format!("growth bound fails at {r}")));
        }
        if df.abs() > rep.a4 * (r.powf(l - 1.0) + 1.0) + tol {
            return Err(Error::BoundFitFailed(format!("derivative bound fails at {r}")));
        }
    }
    Ok(())
}

/// Pointwise potential: Phi_2 plus a constant shift.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Potential {
    phi: PhiSpec,
    shift: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialBounds {
    pub shift: f64,
    pub c_lower: f64,
    pub c_upper: f64,
}

impl Potential {
    pub fn phi2(phi: &PhiSpec) -> Self {
        Self {
            phi: phi.clone(),
            shift: 0.0,
        }
    }

    /// Phi_1 = Phi_2 + K with K = 1 + max(0, -min Phi_2).
    pub fn phi1(phi: &PhiSpec) -> Result<(Self, PotentialBounds)> {
        let lambda = phi.lambda();
        let lead = phi.leading_coefficient();
        if lead > 0.0 {
            return Err(Error::NotDissipative("potential is unbounded below".into()));
        }
        let grid = log_grid();
        let (_, neg_min) = refined_sup(|r| -phi.phi2(r), &grid);
        let shift = 1.0 + with_margin(neg_min.max(0.0));
        let pot = Self {
            phi: phi.clone(),
            shift,
        };
        let p = lambda + 1.0;
        let tail = lead.abs() / p;
        let lower = grid[1..]
            .iter()
            .map(|&r| pot.value(r) / r.powf(p))
            .fold(f64::INFINITY, f64::min);
        let upper = grid
            .iter()
            .map(|&r| pot.value(r) / (r.powf(p) + 1.0))
            .fold(f64::NEG_INFINITY, f64::max);
        let c_lower = if phi.is_zero() {
            0.0
        } else {
            lower.min(tail) * (1.0 - MARGIN)
        };
        let c_upper = with_margin(upper.max(tail));
        if !(c_upper.is_finite() && c_lower >= 0.0) {
            return Err(Error::BoundFitFailed("potential bounds are not finite".into()));
        }
        for &r in &grid {
            let v = pot.value(r);
            let rp = r.powf(p);
            let tol = 1e-9 * (1.0 + rp);
            if v < c_lower * rp - tol || v > c_upper * (rp + 1.0) + tol {
                return Err(Error::BoundFitFailed(format!("potential bound fails at {r}")));
            }
        }
        Ok((
            pot,
            PotentialBounds {
                shift,
                c_lower,
                c_upper,
            },
        ))
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        self.phi.phi2(x) + self.shift
    }
}

/// int_O pot(u(x)) dx on the dealiased grid.
pub fn l1_potential(field: &SpectralField, pot: &Potential) -> f64 {
    integrate_potential(field.basis(), field.coeffs(), pot)
}

pub fn integrate_potential(basis: &Basis, coeffs: &[f64], pot: &Potential) -> f64 {
    let mut vals = Vec::new();
    basis.padded_values(coeffs, &mut vals);
    vals.iter_mut().for_each(|v| *v = pot.value(*v));
    basis.padded_integral(&vals)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffSpec {
    pub threshold: f64,
}

impl CutoffSpec {
    pub fn new(threshold: f64) -> Result<Self> {
        if !(threshold.is_finite() && threshold > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "cutoff threshold {threshold} must be positive"
            )));
        }
        Ok(Self { threshold })
    }

    /// theta_R with a quintic smoothstep on [R, R+1].
    pub fn theta(&self, x: f64) -> f64 {
        let t = x.abs() - self.threshold;
        if t <= 0.0 {
            1.0
        } else if t >= 1.0 {
            0.0
        } else {
            1.0 - t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
        }
    }

    pub fn theta_deriv(&self, x: f64) -> f64 {
        let t = x.abs() - self.threshold;
        if t <= 0.0 || t >= 1.0 {
            0.0
        } else {
            -30.0 * t * t * (1.0 - t) * (1.0 - t) * x.signum()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncatedPhi {
    pub phi: PhiSpec,
    pub cutoff: CutoffSpec,
}

impl TruncatedPhi {
    pub fn eval(&self, x: f64) -> f64 {
        let th = self.cutoff.theta(x);
        if th == 0.0 {
            0.0
        } else {
            self.phi.eval(x) * th
        }
    }

    pub fn eval_deriv(&self, x: f64) -> f64 {
        if x.abs() >= self.cutoff.threshold + 1.0 {
            return 0.0;
        }
        self.phi.eval_deriv(x) * self.cutoff.theta(x) + self.phi.eval(x) * self.cutoff.theta_deriv(x)
    }

    /// max |(phi theta)'| on a fine grid over the support.
    pub fn lipschitz(&self) -> f64 {
        let r = self.cutoff.threshold + 1.0;
        let grid: Vec<f64> = (0..=20_000).map(|i| r * i as f64 / 20_000.0).collect();
        with_margin(refined_sup(|x| self.eval_deriv(x).abs(), &grid).1)
    }
}

/// Pointwise map used as the reaction term of a simulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Reaction {
    Plain(PhiSpec),
    Truncated(TruncatedPhi),
}

impl Reaction {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Reaction::Plain(p) => p.eval(x),
            Reaction::Truncated(t) => t.eval(x),
        }
    }

    #[inline]
    pub fn eval_deriv(&self, x: f64) -> f64 {
        match self {
            Reaction::Plain(p) => p.eval_deriv(x),
            Reaction::Truncated(t) => t.eval_deriv(x),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Reaction::Plain(p) => p.is_zero(),
            Reaction::Truncated(t) => t.phi.is_zero(),
        }
    }

    pub fn phi(&self) -> &PhiSpec {
        match self {
            Reaction::Plain(p) => p,
            Reaction::Truncated(t) => &t.phi,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum C1Inequality {
    Growth,
    Difference,
    Dissipation,
    PotentialLower,
    PotentialUpper,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct C1Violation {
    pub inequality: C1Inequality,
    pub x: f64,
    pub y: f64,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct C1Report {
    pub checked: usize,
    pub epsilon: f64,
    pub first_violation: Option<C1Violation>,
}

impl C1Report {
    pub fn passed(&self) -> bool {
        self.first_violation.is_none()
    }
}

/// Pointwise checks of the growth, difference, dissipation and two-sided
/// potential inequalities at every sample pair.
pub fn lemma_c1_check(phi: &PhiSpec, rep: &PhiReport, samples: &[(f64, f64)]) -> C1Report {
    let l = rep.lambda;
    let kappa = (2.0 * rep.a3 / rep.a2).powf((l - 1.0) / (l + 1.0));
    // strictly inside the admissible range eps / kappa < a2 / 2
    let epsilon = 0.25 * rep.a2 * kappa;
    let big = rep.unit_lipschitz.max(2.0 * rep.a1);
    let slack = |a: f64, b: f64| 1e-12 * (a.abs() + b.abs()) + 1e-14;
    let mut first = None;
    'outer: for &(x, y) in samples {
        let ax = x.abs();
        let checks = [
            (C1Inequality::Growth, phi.eval(x).abs(), big * (ax + ax.powf(l))),
            (
                C1Inequality::Difference,
                (phi.eval(x) - phi.eval(y)).abs(),
                2f64.powf(l)
                    * rep.a4
                    * (x - y).abs()
                    * ((x - y).abs().powf(l - 1.0) + y.abs().powf(l - 1.0) + 1.0),
            ),
            (
                C1Inequality::Dissipation,
                x * phi.eval(x),
                (rep.a_phi + epsilon) * x * x - epsilon / kappa * ax.powf(l + 1.0),
            ),
            (
                C1Inequality::PotentialLower,
                -0.5 * (rep.a_phi + epsilon) * x * x
                    + epsilon / ((l + 1.0) * kappa) * ax.powf(l + 1.0),
                phi.phi2(x),
            ),
            (
                C1Inequality::PotentialUpper,
                phi.phi2(x),
                big * (x * x + ax.powf(l + 1.0)) + 0.5 * rep.a_phi * x * x,
            ),
        ];
        for (which, lhs, rhs) in checks {
            if lhs > rhs + slack(lhs, rhs) {
                first = Some(C1Violation {
                    inequality: which,
                    x,
                    y,
                    lhs,
                    rhs,
                });
                break 'outer;
            }
        }
    }
    C1Report {
        checked: samples.len(),
        epsilon,
        first_violation: first,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::DomainSpec;
    use std::f64::consts::PI;

    #[test]
    fn canonical_values() {
        let phi = PhiSpec::canonical();
        assert_eq!(phi.eval(0.0), 0.0);
        assert!(phi.eval(1.0).abs() < 1e-15);
        assert!((phi.eval(4.0) + 4.0).abs() < 1e-13);
        assert!((phi.eval(-4.0) - 4.0).abs() < 1e-13);
        assert_eq!(phi.eval_deriv(0.0), 1.0);
        assert!((phi.phi2(2.0) - (-2.0 + 0.4 * 2f64.powf(2.5))).abs() < 1e-13);
    }

    #[test]
    fn general_power_matches_fast_paths() {
        let fast = PhiSpec::new(vec![PowerTerm::new(-0.7, 1.5)]).unwrap();
        let slow = PowerTerm::new(-0.7, 1.5 + 1e-15);
        for x in [-3.0, -0.2, 0.0, 0.9, 5.5] {
            assert!((fast.eval(x) - slow.value(x)).abs() < 1e-12);
            assert!((fast.eval_deriv(x) - slow.derivative(x)).abs() < 1e-12);
        }
    }

    #[test]
    fn merges_equal_powers() {
        let p = PhiSpec::new(vec![
            PowerTerm::new(1.0, 1.0),
            PowerTerm::new(-2.0, 1.0),
            PowerTerm::new(0.0, 1.5),
        ])
        .unwrap();
        assert_eq!(p, PhiSpec::linear(-1.0));
        assert!(PhiSpec::new(vec![PowerTerm::new(1.0, 0.5)]).is_err());
    }

    #[test]
    fn validate_canonical() {
        let rep = PhiSpec::canonical().validate().unwrap();
        assert_eq!(rep.lambda, 1.5);
        assert!((rep.a_phi - 1.0).abs() < 1e-12);
        assert_eq!(rep.a2, 0.5);
        // sup_r r^2 - r^{5/2}/2 is attained at r = 64/25
        let r: f64 = 64.0 / 25.0;
        let want = r * r - 0.5 * r.powf(2.5);
        assert!((rep.a3 - want).abs() < 1e-6 * want, "{} vs {want}", rep.a3);
    }

    #[test]
    fn validate_linear() {
        let rep = PhiSpec::linear(-1.0).validate().unwrap();
        assert_eq!(rep.lambda, 1.0);
        assert_eq!(rep.a_phi, -1.0);
        assert!(rep.a3 < 1e-9);
    }

    #[test]
    fn validate_rejections() {
        let cubic = PhiSpec::new(vec![PowerTerm::new(1.0, 1.0), PowerTerm::new(-1.0, 3.0)]).unwrap();
        assert!(matches!(cubic.validate(), Err(Error::GrowthOutOfRange(l)) if l == 3.0));
        assert!(matches!(PhiSpec::linear(1.0).validate(), Err(Error::NotDissipative(_))));
        let up = PhiSpec::new(vec![PowerTerm::new(1.0, 1.5)]).unwrap();
        assert!(matches!(up.validate(), Err(Error::NotDissipative(_))));
        assert!(PhiSpec::zero().validate().is_err());
    }

    #[test]
    fn phi1_linear() {
        let (pot, b) = Potential::phi1(&PhiSpec::linear(-1.0)).unwrap();
        assert!((pot.shift() - 1.0).abs() < 1e-8);
        assert!((pot.value(2.0) - 3.0).abs() < 1e-8);
        assert!(b.c_lower <= 0.5);
    }

    #[test]
    fn phi1_canonical_shift() {
        // min of -x^2/2 + 2/5 |x|^{5/2} is -1/10 at |x| = 1
        let (pot, b) = Potential::phi1(&PhiSpec::canonical()).unwrap();
        assert!((pot.shift() - 1.1).abs() < 1e-8);
        assert!(pot.value(1.0) >= 1.0 - 1e-12);
        assert!(b.c_lower > 0.0 && b.c_upper >= 1.1);
    }

    #[test]
    fn cutoff_shape() {
        let c = CutoffSpec::new(2.0).unwrap();
        assert_eq!(c.theta(1.5), 1.0);
        assert_eq!(c.theta(-2.0), 1.0);
        assert_eq!(c.theta(3.0), 0.0);
        assert_eq!(c.theta(-7.0), 0.0);
        assert!((c.theta(2.5) - 0.5).abs() < 1e-15);
        let h = 1e-6;
        for x in [2.1, 2.5, -2.7, 2.95] {
            let fd = (c.theta(x + h) - c.theta(x - h)) / (2.0 * h);
            assert!((fd - c.theta_deriv(x)).abs() < 1e-6);
        }
        assert!(CutoffSpec::new(0.0).is_err());
    }

    #[test]
    fn truncated_agreement_and_support() {
        let phi = PhiSpec::canonical();
        let t = phi.truncate(CutoffSpec::new(3.0).unwrap());
        for i in 0..=300 {
            let x = -3.0 + 0.02 * i as f64;
            assert_eq!(t.eval(x), phi.eval(x));
        }
        for x in [4.0, 4.5, -10.0, 1e6] {
            assert_eq!(t.eval(x), 0.0);
        }
        let lip = t.lipschitz();
        assert!(lip.is_finite());
        for i in 0..10_000 {
            let x = -5.0 + 1e-3 * i as f64;
            let y = x + 1e-3;
            assert!((t.eval(x) - t.eval(y)).abs() <= lip * 1e-3 * (1.0 + 1e-9));
        }
    }

    #[test]
    fn c1_edge_cases() {
        let phi = PhiSpec::canonical();
        let rep = phi.validate().unwrap();
        let out = lemma_c1_check(&phi, &rep, &[(0.0, 0.0), (1.3, 1.3), (-2.0, -2.0)]);
        assert!(out.passed(), "{:?}", out.first_violation);
        assert_eq!(out.checked, 3);
    }

    #[test]
    fn c1_detects_inflated_claims() {
        let phi = PhiSpec::canonical();
        let mut rep = phi.validate().unwrap();
        rep.a_phi = -5.0;
        let out = lemma_c1_check(&phi, &rep, &[(0.5, 0.0)]);
        assert!(!out.passed());
    }

    #[test]
    fn l1_potential_of_zero_field() {
        let b = Basis::new(DomainSpec::new(vec![PI, 2.0], vec![3, 3]).unwrap());
        let z = SpectralField::zeros(&b);
        let phi = PhiSpec::canonical();
        assert_eq!(l1_potential(&z, &Potential::phi2(&phi)), 0.0);
        let (p1, _) = Potential::phi1(&phi).unwrap();
        assert!((l1_potential(&z, &p1) - 2.0 * PI * p1.shift()).abs() < 1e-12);
    }

    #[test]
    fn l1_potential_refinement() {
        let phi = PhiSpec::canonical();
        let (p1, _) = Potential::phi1(&phi).unwrap();
        let coarse = Basis::new(DomainSpec::interval(PI, 16).unwrap());
        let fine = Basis::new(DomainSpec::interval(PI, 32).unwrap());
        let mut c = vec![0.0; 32];
        c[0] = 1.2;
        c[1] = -0.4;
        c[2] = 0.3;
        let a = integrate_potential(&coarse, &c[..16], &p1);
        let b = integrate_potential(&fine, &c, &p1);
        assert!((a - b).abs() < 1e-5 * b.abs(), "{a} vs {b}");
    }
}
