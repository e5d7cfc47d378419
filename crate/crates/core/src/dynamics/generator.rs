//! Closed-form action of the Markov generator on the energy functionals.

use std::str::FromStr;

use crate::domain::{dot, sobolev_sq};
use crate::dynamics::PhaseState;
use crate::error::{Error, Result};
use crate::functionals::FunctionalContext;
use crate::noise::trace_moment;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeneratorFunctional {
    /// Psi_1 + 2m |Phi_1(u)|_{L^1}
    Energy,
    Psi2,
}

impl FromStr for GeneratorFunctional {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "energy" => Ok(Self::Energy),
            "psi2" => Ok(Self::Psi2),
            other => Err(Error::UnsupportedFunctional(other.to_string())),
        }
    }
}

/// L g at `state`.
///
/// For m > 0:
///   L[energy] = -|A^{1/2}u|^2 - m|v|^2 + <phi(u), u> + Tr(QQ*)
///   L[Psi_2]  = -|Au|^2 - m|A^{1/2}v|^2 + Tr(QAQ*)
///               + 2m <phi'(u) grad u, grad v> + <phi'(u) grad u, grad u>
/// For m = 0 the energy reduces to |u|^2 / 2 and Psi_2 to |A^{1/2}u|^2 / 2,
/// and the heat generator is applied to those.
pub fn generator_apply(
    g: GeneratorFunctional,
    state: &PhaseState,
    ctx: &FunctionalContext,
    q: &[f64],
) -> Result<f64> {
    let basis = &ctx.basis;
    let ev = basis.eigenvalues();
    let (u, v) = (state.u.coeffs(), state.v.coeffs());
    let m = ctx.mass;
    if !(m.is_finite() && m >= 0.0) {
        return Err(Error::InvalidMass(m));
    }
    // the reaction terms are taken against the projected phi(u), so that
    // <A v, P phi(u)> stands for <phi'(u) grad u, grad v> on the Galerkin space
    let mut grid = Vec::new();
    basis.padded_values(u, &mut grid);
    grid.iter_mut().for_each(|x| *x = ctx.phi.eval(*x));
    let mut f = Vec::new();
    basis.padded_project(&grid, &mut f);
    match g {
        GeneratorFunctional::Energy => {
            let t0 = trace_moment(q, ev, 0);
            let a = -sobolev_sq(ev, u, 1.0) + dot(&f, u);
            Ok(if m > 0.0 {
                a - m * sobolev_sq(ev, v, 0.0) + t0
            } else {
                a + 0.5 * t0
            })
        }
        GeneratorFunctional::Psi2 => {
            let t1 = trace_moment(q, ev, 1);
            let weighted = |w: &[f64]| -> f64 { ev.iter().zip(w.iter().zip(&f)).map(|(a, (x, y))| a * x * y).sum() };
            let a = -sobolev_sq(ev, u, 2.0) + weighted(u);
            Ok(if m > 0.0 {
                a - m * sobolev_sq(ev, v, 1.0) + t1 + 2.0 * m * weighted(v)
            } else {
                a + 0.5 * t1
            })
        }
    }
}
