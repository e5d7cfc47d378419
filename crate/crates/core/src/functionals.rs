//! Lyapunov and energy functionals on phase states.

use std::sync::Arc;

use crate::domain::{dot, sobolev_sq, Basis};
use crate::dynamics::PhaseState;
use crate::error::Result;
use crate::nonlinearity::{integrate_potential, PhiSpec, Potential, PotentialBounds};

#[derive(Clone, Debug)]
pub struct FunctionalContext {
    pub basis: Arc<Basis>,
    pub mass: f64,
    pub phi: PhiSpec,
    pub lambda: f64,
    pub phi1: Potential,
    pub bounds: PotentialBounds,
}

impl FunctionalContext {
    pub fn new(basis: &Arc<Basis>, mass: f64, phi: &PhiSpec) -> Result<Self> {
        let (phi1, bounds) = Potential::phi1(phi)?;
        Ok(Self {
            basis: Arc::clone(basis),
            mass,
            phi: phi.clone(),
            lambda: phi.lambda(),
            phi1,
            bounds,
        })
    }

    pub fn with_mass(&self, mass: f64) -> Self {
        Self {
            mass,
            ..self.clone()
        }
    }
}

/// m|A^{1/2}u|^2 + m^2|v|^2 + m<u,v> + |u|^2/2
pub fn psi1_raw(eigenvalues: &[f64], m: f64, u: &[f64], v: &[f64]) -> f64 {
    let mut s = 0.5 * dot(u, u);
    if m > 0.0 {
        s += m * sobolev_sq(eigenvalues, u, 1.0) + m * m * dot(v, v) + m * dot(u, v);
    }
    s
}

/// m|Au|^2 + m^2|A^{1/2}v|^2 + m<A^{1/2}u, A^{1/2}v> + |A^{1/2}u|^2/2
pub fn psi2_raw(eigenvalues: &[f64], m: f64, u: &[f64], v: &[f64]) -> f64 {
    let mut s = 0.5 * sobolev_sq(eigenvalues, u, 1.0);
    if m > 0.0 {
        let cross: f64 = eigenvalues
            .iter()
            .zip(u.iter().zip(v))
            .map(|(a, (x, y))| a * x * y)
            .sum();
        s += m * sobolev_sq(eigenvalues, u, 2.0) + m * m * sobolev_sq(eigenvalues, v, 1.0) + m * cross;
    }
    s
}

/// int |u|^p dx on the dealiased grid.
pub fn lp_integral(basis: &Basis, u: &[f64], p: f64) -> f64 {
    let mut vals = Vec::new();
    basis.padded_values(u, &mut vals);
    vals.iter_mut().for_each(|x| {
        let a = x.abs();
        *x = if p == 2.0 {
            a * a
        } else if p == 2.5 {
            a * a * a.sqrt()
        } else {
            a.powf(p)
        }
    });
    basis.padded_integral(&vals)
}

/// m|u|_{H^1}^2 + m^2|v|^2 + m|u|_{L^{lambda+1}}^{lambda+1} + |u|^2
pub fn v_m_raw(basis: &Basis, lambda: f64, m: f64, u: &[f64], v: &[f64]) -> f64 {
    let mut s = dot(u, u);
    if m > 0.0 {
        s += m * sobolev_sq(basis.eigenvalues(), u, 1.0)
            + m * m * dot(v, v)
            + m * lp_integral(basis, u, lambda + 1.0);
    }
    s
}

pub fn psi1(state: &PhaseState, ctx: &FunctionalContext) -> f64 {
    psi1_raw(ctx.basis.eigenvalues(), ctx.mass, state.u.coeffs(), state.v.coeffs())
}

pub fn psi2(state: &PhaseState, ctx: &FunctionalContext) -> f64 {
    psi2_raw(ctx.basis.eigenvalues(), ctx.mass, state.u.coeffs(), state.v.coeffs())
}

pub fn v_m(state: &PhaseState, ctx: &FunctionalContext) -> f64 {
    v_m_raw(&ctx.basis, ctx.lambda, ctx.mass, state.u.coeffs(), state.v.coeffs())
}

/// Psi_1 + 2m |Phi_1(u)|_{L^1}
pub fn energy_raw(ctx: &FunctionalContext, u: &[f64], v: &[f64]) -> f64 {
    let mut e = psi1_raw(ctx.basis.eigenvalues(), ctx.mass, u, v);
    if ctx.mass > 0.0 {
        e += 2.0 * ctx.mass * integrate_potential(&ctx.basis, u, &ctx.phi1);
    }
    e
}

pub fn energy(state: &PhaseState, ctx: &FunctionalContext) -> f64 {
    energy_raw(ctx, state.u.coeffs(), state.v.coeffs())
}

/// Smallest ratio energy / V_m and largest energy / (V_m + 1) over a sample,
/// the empirical equivalence constants between the two functionals.
pub fn fit_equivalence(states: &[PhaseState], ctx: &FunctionalContext) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for s in states {
        let e = energy(s, ctx);
        let v = v_m(s, ctx);
        if v > 0.0 {
            lo = lo.min(e / v);
        }
        hi = hi.max(e / (v + 1.0));
    }
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{DomainSpec, SpectralField};
    use std::f64::consts::PI;

    fn setup(n: usize) -> Arc<Basis> {
        Basis::new(DomainSpec::interval(PI, n).unwrap())
    }

    fn e1(b: &Arc<Basis>) -> PhaseState {
        let mut s = PhaseState::zeros(b);
        s.u.coeffs_mut()[0] = 1.0;
        s
    }

    #[test]
    fn psi_examples() {
        let b = setup(4);
        let phi = PhiSpec::canonical();
        let z = PhaseState::zeros(&b);
        let ctx = FunctionalContext::new(&b, 0.5, &phi).unwrap();
        assert_eq!(psi1(&z, &ctx), 0.0);
        assert_eq!(psi2(&z, &ctx), 0.0);
        assert_eq!(v_m(&z, &ctx), 0.0);
        assert!((psi1(&e1(&b), &ctx) - 1.0).abs() < 1e-15);
        let ctx1 = ctx.with_mass(1.0);
        assert!((psi2(&e1(&b), &ctx1) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn v_m_linear_example() {
        // L^2 = L^{lambda+1} when lambda = 1
        let b = setup(8);
        let ctx = FunctionalContext::new(&b, 1.0, &PhiSpec::linear(-1.0)).unwrap();
        assert!((v_m(&e1(&b), &ctx) - 3.0).abs() < 1e-12);
        let ctx0 = ctx.with_mass(0.0);
        let mut s = e1(&b);
        s.u.coeffs_mut()[2] = 2.0;
        s.v.coeffs_mut()[1] = 7.0;
        assert_eq!(v_m(&s, &ctx0), 5.0);
    }

    #[test]
    fn energy_at_zero_mass_is_half_norm() {
        let b = setup(6);
        let ctx = FunctionalContext::new(&b, 0.0, &PhiSpec::canonical()).unwrap();
        let mut s = e1(&b);
        s.u.coeffs_mut()[3] = -0.5;
        s.v.coeffs_mut()[0] = 3.0;
        assert_eq!(energy(&s, &ctx), 0.5 * 1.25);
    }

    #[test]
    fn energy_grows_under_scaling() {
        let b = setup(6);
        let ctx = FunctionalContext::new(&b, 0.3, &PhiSpec::canonical()).unwrap();
        let mut s = e1(&b);
        s.u.coeffs_mut()[1] = 0.4;
        let mut t = s.clone();
        t.u = SpectralField::from_coeffs(&b, s.u.coeffs().iter().map(|c| 2.0 * c).collect()).unwrap();
        assert!(energy(&t, &ctx) > energy(&s, &ctx));
    }
}
