use std::f64::consts::PI;
use std::sync::Arc;

use super::generator::{generator_apply, GeneratorFunctional};
use super::*;
use crate::domain::{sobolev_sq, DomainSpec};
use crate::functionals::{energy, psi1, psi2};
use crate::noise::{trace_moment, CoarsenedStream, Silent};
use crate::nonlinearity::PowerTerm;

fn interval(n: usize) -> Arc<Basis> {
    Basis::new(DomainSpec::interval(PI, n).unwrap())
}

fn cfg(b: &Arc<Basis>, phi: PhiSpec, q: QSpec, m: f64, h: f64, t: f64) -> SimConfig {
    SimConfig::new(b, phi, q, m, h, t)
}

fn state(b: &Arc<Basis>, u: &[(usize, f64)], v: &[(usize, f64)]) -> PhaseState {
    let mut s = PhaseState::zeros(b);
    for &(k, c) in u {
        s.u.coeffs_mut()[k] = c;
    }
    for &(k, c) in v {
        s.v.coeffs_mut()[k] = c;
    }
    s
}

#[test]
fn identical_configs_give_identical_paths() {
    let b = interval(8);
    let mut c = cfg(&b, PhiSpec::canonical(), QSpec::Decay { sigma: 1.0, gamma: 2.0 }, 0.3, 0.01, 1.0);
    c.seed = 42;
    c.initial = state(&b, &[(0, 0.5)], &[]);
    let a = simulate(&c).unwrap();
    let b2 = simulate(&c).unwrap();
    assert_eq!(a.states, b2.states);
    c.trajectory = 1;
    assert_ne!(simulate(&c).unwrap().final_state(), a.final_state());
}

#[test]
fn zero_stays_zero_without_noise() {
    let b = interval(6);
    let c = cfg(&b, PhiSpec::canonical(), QSpec::Explicit(vec![]), 1.0, 0.01, 0.5);
    let t = simulate(&c).unwrap();
    assert!(t.final_state().u.coeffs().iter().all(|&x| x == 0.0));
    assert_eq!(t.states.len(), 51);
}

#[test]
fn zero_horizon_records_initial_state_only() {
    let b = interval(4);
    let c = cfg(&b, PhiSpec::canonical(), QSpec::Explicit(vec![1.0]), 1.0, 0.01, 0.0);
    let t = simulate(&c).unwrap();
    assert_eq!(t.states.len(), 1);
    let bad = cfg(&b, PhiSpec::canonical(), QSpec::Explicit(vec![1.0]), 1.0, 0.5, 0.1);
    assert!(matches!(simulate(&bad), Err(Error::InvalidStep { .. })));
}

#[test]
fn damped_oscillator_energy_decays() {
    let b = interval(4);
    let mut c = cfg(&b, PhiSpec::zero(), QSpec::Explicit(vec![]), 1.0, 0.05, 10.0);
    c.initial = state(&b, &[(0, 1.0), (2, -0.3)], &[(1, 0.7)]);
    let t = simulate(&c).unwrap();
    let ev = b.eigenvalues();
    let en = |s: &PhaseState| sobolev_sq(ev, s.u.coeffs(), 1.0) + sobolev_sq(ev, s.v.coeffs(), 0.0);
    for w in t.states.windows(2) {
        assert!(en(&w[1]) < en(&w[0]));
    }
}

#[test]
fn linear_noiseless_mode_matches_closed_form() {
    // m = 1, alpha = 1: u'' + u' + u = 0, u(0) = 1, u'(0) = 0
    let b = interval(3);
    let mut c = cfg(&b, PhiSpec::zero(), QSpec::Explicit(vec![]), 1.0, 0.01, 3.0);
    c.initial = state(&b, &[(0, 1.0)], &[]);
    let t = simulate(&c).unwrap();
    let w = 0.75f64.sqrt();
    let exact = |t: f64| (-0.5 * t).exp() * ((w * t).cos() + 0.5 / w * (w * t).sin());
    let exact_v = |t: f64| -(-0.5 * t).exp() * (1.0 / w) * (w * t).sin();
    let fin = t.final_state();
    assert!((fin.u.coeffs()[0] - exact(3.0)).abs() < 1e-12);
    assert!((fin.v.coeffs()[0] - exact_v(3.0)).abs() < 1e-12);
}

#[test]
fn stable_linear_reaction_is_exact() {
    // m = 0, phi = -x: u_k' = -(alpha_k + 1) u_k, folded into the propagator
    let b = interval(3);
    for h in [0.02, 0.01] {
        let mut c = cfg(&b, PhiSpec::linear(-1.0), QSpec::Explicit(vec![]), 0.0, h, 1.0);
        c.initial = state(&b, &[(0, 1.0), (1, 1.0)], &[]);
        let fin = simulate(&c).unwrap().final_state().u.coeffs().to_vec();
        assert!((fin[0] - (-2.0f64).exp()).abs() < 1e-13);
        assert!((fin[1] - (-5.0f64).exp()).abs() < 1e-13);
    }
}

#[test]
fn unstable_linear_reaction_is_first_order() {
    // phi = 2x destabilises mode 1, so the reaction stays explicit:
    // u_1' = u_1, u_2' = -2 u_2
    let b = interval(3);
    let mut errs = Vec::new();
    for h in [0.02, 0.01, 0.005] {
        let mut c = cfg(&b, PhiSpec::linear(2.0), QSpec::Explicit(vec![]), 0.0, h, 1.0);
        c.initial = state(&b, &[(0, 1.0), (1, 1.0)], &[]);
        let fin = simulate(&c).unwrap().final_state().u.coeffs().to_vec();
        let e0 = (fin[0] - 1.0f64.exp()).abs();
        let e1 = (fin[1] - (-2.0f64).exp()).abs();
        errs.push(e0.max(e1));
    }
    assert!(errs[0] < 0.1);
    let r1 = errs[0] / errs[1];
    let r2 = errs[1] / errs[2];
    assert!((r1 - 2.0).abs() < 0.2 && (r2 - 2.0).abs() < 0.2, "{errs:?}");
}

#[test]
fn strang_matches_exponential_euler_in_the_limit() {
    let b = interval(8);
    let mut c = cfg(&b, PhiSpec::canonical(), QSpec::Decay { sigma: 1.0, gamma: 2.0 }, 0.5, 1e-4, 1.0);
    c.initial = state(&b, &[(0, 1.0), (1, -0.5)], &[(0, 0.3)]);
    c.seed = 3;
    let reference = simulate(&c).unwrap();
    c.step = 0.01;
    let ee = simulate_with(&c, &mut CoarsenedStream::new(3, 0, 0)).unwrap();
    c.scheme = Scheme::Strang;
    let st = simulate(&c).unwrap();
    let dist = |a: &PhaseState, b: &PhaseState| {
        a.u.coeffs().iter().zip(b.u.coeffs()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    };
    assert!(dist(st.final_state(), ee.final_state()) < 0.05);
    // the coarse runs use different Brownian paths than the reference, so
    // only check that all three stay close in size
    assert!(reference.final_state().u.sobolev_norm(0.0) < 10.0);
}

#[test]
fn blow_up_is_reported_with_last_finite_state() {
    let b = interval(4);
    let phi = PhiSpec::new(vec![PowerTerm::new(1.0, 3.0)]).unwrap();
    let mut c = cfg(&b, phi, QSpec::Explicit(vec![]), 0.0, 0.01, 10.0);
    c.initial = state(&b, &[(0, 10.0)], &[]);
    match simulate(&c) {
        Err(Error::BlowUp { step, last_finite, .. }) => {
            assert!(step > 0);
            assert!(last_finite.is_finite());
        }
        other => panic!("expected blow-up, got {other:?}"),
    }
}

#[test]
fn langevin_requires_mass_and_starts_at_zero() {
    let b = interval(4);
    let c = cfg(&b, PhiSpec::zero(), QSpec::Explicit(vec![1.0; 4]), 0.0, 0.01, 1.0);
    assert!(matches!(simulate_langevin(&c), Err(Error::ZeroMass)));
    let c = cfg(&b, PhiSpec::zero(), QSpec::Explicit(vec![1.0; 4]), 0.5, 0.01, 1.0);
    let t = simulate_langevin(&c).unwrap();
    assert_eq!(t.states[0], PhaseState::zeros(&b));
    assert!(t.final_state().v.sobolev_norm(0.0) > 0.0);
}

#[test]
fn convolution_ignores_reaction() {
    let b = interval(6);
    let mut c = cfg(&b, PhiSpec::canonical(), QSpec::Decay { sigma: 1.0, gamma: 2.0 }, 0.2, 0.01, 1.0);
    c.seed = 9;
    let g = simulate_convolution(&c).unwrap();
    c.phi = PhiSpec::zero();
    assert_eq!(g.states, simulate(&c).unwrap().states);
}

#[test]
fn shifted_with_zero_gain_equals_simulate() {
    let b = interval(8);
    let mut c = cfg(&b, PhiSpec::canonical(), QSpec::Decay { sigma: 2.0, gamma: 2.0 }, 0.4, 0.01, 1.0);
    c.seed = 5;
    c.initial = state(&b, &[(0, 0.7)], &[]);
    let (s, _) = simulate_shifted(&c, Some(0.0)).unwrap();
    assert_eq!(s.states, simulate(&c).unwrap().states);
}

#[test]
fn shifted_damps_low_modes_without_noise() {
    let b = interval(8);
    let mut c = cfg(&b, PhiSpec::linear(-1.0), QSpec::Explicit(vec![]), 0.0, 0.01, 1.0);
    c.initial = state(&b, &[(0, 1.0), (5, 1.0)], &[]);
    let plain = simulate(&c).unwrap();
    let (shift, gamma) = simulate_shifted(&c, None).unwrap();
    let (p, s) = (plain.final_state().u.coeffs(), shift.final_state().u.coeffs());
    // a_phi = -1 so n-bar = 1
    assert!(s[0].abs() < p[0].abs());
    assert!((s[5] - p[5]).abs() < 1e-15);
    assert!(gamma.final_state().u.coeffs().iter().all(|&x| x == 0.0));
}

#[test]
fn tangent_for_linear_reaction_is_the_linear_flow() {
    let b = interval(6);
    let mut c = cfg(&b, PhiSpec::linear(-2.0), QSpec::Decay { sigma: 1.0, gamma: 2.0 }, 0.3, 0.01, 1.0);
    c.seed = 1;
    let base = simulate(&c).unwrap();
    let xi = state(&b, &[(0, 1.0), (3, -2.0)], &[(1, 0.5)]);
    let j = simulate_tangent(&c, &base, &xi).unwrap();
    let mut lin = c.clone();
    lin.q = QSpec::Explicit(vec![]);
    lin.initial = xi.clone();
    let det = simulate(&lin).unwrap();
    for (a, b) in j.final_state().u.coeffs().iter().zip(det.final_state().u.coeffs()) {
        assert!((a - b).abs() < 1e-12);
    }
    let zero = simulate_tangent(&c, &base, &PhaseState::zeros(&b)).unwrap();
    assert!(zero.final_state().u.coeffs().iter().all(|&x| x == 0.0));
}

#[test]
fn tangent_matches_finite_difference() {
    let b = interval(16);
    for (m, scheme) in [(0.5, Scheme::ExponentialEuler), (0.0, Scheme::ExponentialEuler), (0.2, Scheme::Strang)] {
        let mut c = cfg(&b, PhiSpec::canonical(), QSpec::Decay { sigma: 2.0, gamma: 2.0 }, m, 0.005, 1.0);
        c.seed = 11;
        c.scheme = scheme;
        c.initial = state(&b, &[(0, 1.5), (1, -0.4)], &[(0, 0.2)]);
        let base = simulate(&c).unwrap();
        let xi = state(&b, &[(0, 0.3), (2, 1.0)], &[(1, 0.5)]);
        let j = simulate_tangent(&c, &base, &xi).unwrap();
        let eps = 1e-5;
        let mut cp = c.clone();
        cp.initial = c.initial.axpy(eps, &xi);
        let pert = simulate(&cp).unwrap();
        let fd = pert.final_state().axpy(-1.0, base.final_state()).scaled(1.0 / eps);
        let diff = fd.axpy(-1.0, j.final_state());
        let rel = diff.u.sobolev_norm(1.0) / j.final_state().u.sobolev_norm(1.0);
        assert!(rel < 1e-3, "m = {m}: {rel}");
    }
}

#[test]
fn tangent_needs_dense_base() {
    let b = interval(4);
    let mut c = cfg(&b, PhiSpec::canonical(), QSpec::Explicit(vec![1.0; 2]), 0.5, 0.01, 0.1);
    c.stride = 2;
    let base = simulate(&c).unwrap();
    assert!(matches!(
        simulate_tangent(&c, &base, &PhaseState::zeros(&b)),
        Err(Error::RecordStrideTooCoarse { stride: 2 })
    ));
}

#[test]
fn control_from_zero_costs_nothing() {
    let b = interval(6);
    let c = cfg(&b, PhiSpec::canonical(), QSpec::Decay { sigma: 1.0, gamma: 2.0 }, 0.5, 0.01, 1.0);
    let base = simulate(&c).unwrap();
    let out = simulate_control(&c, &base, &PhaseState::zeros(&b)).unwrap();
    assert_eq!(out.cost, 0.0);
    assert!(out.rho.final_state().u.coeffs().iter().all(|&x| x == 0.0));
    assert_eq!(out.modes, 2);
}

#[test]
fn control_requires_forced_low_modes() {
    let b = interval(6);
    let c = cfg(&b, PhiSpec::canonical(), QSpec::Explicit(vec![1.0, 0.0, 1.0]), 0.5, 0.01, 0.1);
    let base = simulate(&c).unwrap();
    assert!(matches!(
        simulate_control(&c, &base, &PhaseState::zeros(&b)),
        Err(Error::DegenerateLowMode { index: 2 })
    ));
}

#[test]
fn control_without_reaction_decays() {
    // phi = 0: n-bar = 1, so mode 1 is damped by alpha_1 + alpha_1, the rest by alpha_k
    let b = interval(6);
    let c = cfg(&b, PhiSpec::zero(), QSpec::Explicit(vec![1.0; 6]), 0.0, 0.001, 2.0);
    let base = simulate(&c).unwrap();
    let xi = state(&b, &[(0, 1.0), (1, 1.0)], &[]);
    let out = simulate_control(&c, &base, &xi).unwrap();
    let ctx = FunctionalContext::new(&b, 0.0, &PhiSpec::zero()).unwrap();
    let p0 = psi1(&out.rho.states[1000], &ctx);
    let p1 = psi1(&out.rho.states[2000], &ctx);
    // slowest decay is mode 1 at rate 2 (Psi_1 decays at 4) up to the mode 2 rate 4 (8)
    let rate = (p0 / p1).ln();
    assert!(rate > 3.9 && rate < 4.2, "{rate}");
    let g = gronwall_audit(&base, &out.rho, 3.9, 0.0, 1.05);
    assert_eq!(g.violations, 0);
    assert!(g.max_rate > 3.9);
}

#[test]
fn generator_closed_form_examples() {
    let b = interval(8);
    let q = vec![0.5, 1.0, 0.25];
    let qc = QSpec::Explicit(q.clone()).coefficients(&b).unwrap();
    let ctx = FunctionalContext::new(&b, 0.7, &PhiSpec::canonical()).unwrap();
    let z = PhaseState::zeros(&b);
    let t0 = trace_moment(&qc, b.eigenvalues(), 0);
    let l = generator_apply(GeneratorFunctional::Energy, &z, &ctx, &qc).unwrap();
    assert!((l - t0).abs() < 1e-15);
    let ctx0 = FunctionalContext::new(&b, 1.0, &PhiSpec::zero()).unwrap();
    let e1 = state(&b, &[(0, 1.0)], &[]);
    let l = generator_apply(GeneratorFunctional::Energy, &e1, &ctx0, &vec![0.0; 8]).unwrap();
    assert!((l + 1.0).abs() < 1e-14);
    assert!("psi1".parse::<GeneratorFunctional>().is_err());
}

/// (g(X_h) - g(x)) / h along the noiseless scheme, for small h.
fn drift_difference(ctx: &FunctionalContext, s: &PhaseState, g: GeneratorFunctional) -> f64 {
    let b = &ctx.basis;
    let h = 1e-7;
    let mut c = cfg(b, ctx.phi.clone(), QSpec::Explicit(vec![]), ctx.mass, h, h);
    c.initial = s.clone();
    let t = simulate(&c).unwrap();
    let f = |x: &PhaseState| match g {
        GeneratorFunctional::Energy => energy(x, ctx),
        GeneratorFunctional::Psi2 => psi2(x, ctx),
    };
    (f(t.final_state()) - f(s)) / h
}

#[test]
fn generator_drift_matches_noiseless_flow() {
    let b = interval(24);
    let s = state(&b, &[(0, 1.2), (1, -0.5), (2, 0.3)], &[(0, 0.4), (1, 0.8), (3, -0.2)]);
    for m in [1.0, 0.3, 0.0] {
        let ctx = FunctionalContext::new(&b, m, &PhiSpec::canonical()).unwrap();
        let zero = vec![0.0; 24];
        for g in [GeneratorFunctional::Energy, GeneratorFunctional::Psi2] {
            let want = generator_apply(g, &s, &ctx, &zero).unwrap();
            let got = drift_difference(&ctx, &s, g);
            let scale = want.abs().max(1.0);
            assert!((got - want).abs() < 2e-3 * scale, "m={m} {g:?}: {got} vs {want}");
        }
    }
}

#[test]
fn generator_trace_terms_match_exact_second_moments() {
    // phi = 0 and state 0: E g(X_h) / h -> Tr terms, from the exact covariance
    let b = interval(8);
    let q = QSpec::Decay { sigma: 1.0, gamma: 1.0 };
    let qc = q.coefficients(&b).unwrap();
    let h = 1e-6;
    for m in [0.5, 0.0] {
        let ctx = FunctionalContext::new(&b, m, &PhiSpec::zero()).unwrap();
        let table = PropagatorTable::build(b.eigenvalues(), &qc, m, h).unwrap();
        let (mut e_energy, mut e_psi2) = (0.0, 0.0);
        for (k, &a) in b.eigenvalues().iter().enumerate() {
            let (cuu, cvv, cuv) = match &table.kernels {
                Kernels::Wave(ks) => (ks[k].cov[0][0], ks[k].cov[1][1], ks[k].cov[0][1]),
                Kernels::Heat(ks) => (ks[k].var, 0.0, 0.0),
            };
            e_energy += m * a * cuu + m * m * cvv + m * cuv + 0.5 * cuu;
            e_psi2 += m * a * a * cuu + m * m * a * cvv + m * a * cuv + 0.5 * a * cuu;
        }
        let z = PhaseState::zeros(&b);
        let le = generator_apply(GeneratorFunctional::Energy, &z, &ctx, &qc).unwrap();
        let lp = generator_apply(GeneratorFunctional::Psi2, &z, &ctx, &qc).unwrap();
        // the energy also carries 2m |Phi_1(0)| |O|, constant in time
        assert!((e_energy / h - le).abs() < 1e-3 * le, "{} vs {le}", e_energy / h);
        assert!((e_psi2 / h - lp).abs() < 1e-3 * lp);
    }
}

#[test]
fn record_stride_thins_output() {
    let b = interval(4);
    let mut c = cfg(&b, PhiSpec::canonical(), QSpec::Explicit(vec![1.0, 1.0]), 1.0, 0.01, 1.0);
    c.stride = 10;
    let t = simulate(&c).unwrap();
    assert_eq!(t.states.len(), 11);
    assert!((t.times[10] - 1.0).abs() < 1e-12);
}

#[test]
fn csv_roundtrip_is_exact() {
    let b = interval(4);
    let mut c = cfg(&b, PhiSpec::canonical(), QSpec::Explicit(vec![1.0, 1.0]), 0.5, 0.01, 0.1);
    c.seed = 2;
    let t = simulate(&c).unwrap();
    let ctx = FunctionalContext::new(&b, 0.5, &PhiSpec::canonical()).unwrap();
    let mut buf = Vec::new();
    t.write_csv(&ctx, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), TrajectoryRow::HEADER);
    let rows = t.rows(&ctx);
    for (line, row) in lines.zip(&rows) {
        let vals: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(vals[0], row.t);
        assert_eq!(vals[5], row.psi1);
        assert_eq!(vals[9], row.u_linf);
    }
}

#[test]
fn noiseless_energy_is_nonincreasing() {
    let b = interval(16);
    let phi = PhiSpec::canonical();
    for m in [1.0, 0.1] {
        let mut c = cfg(&b, phi.clone(), QSpec::Explicit(vec![]), m, 0.001, 2.0);
        c.initial = state(&b, &[(0, 2.0), (1, -1.0), (2, 0.5)], &[(0, 1.0)]);
        let t = simulate(&c).unwrap();
        let ctx = FunctionalContext::new(&b, m, &phi).unwrap();
        let e: Vec<f64> = t.states.iter().map(|s| energy(s, &ctx)).collect();
        for w in e.windows(2) {
            assert!(w[1] <= w[0] + 1e-2 * c.step * w[0], "{} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn silent_source_equals_no_noise() {
    let b = interval(6);
    let mut c = cfg(&b, PhiSpec::canonical(), QSpec::Explicit(vec![]), 0.5, 0.01, 0.5);
    c.initial = state(&b, &[(0, 1.0)], &[]);
    let a = simulate(&c).unwrap();
    c.q = QSpec::Explicit(vec![1.0; 6]);
    let s = simulate_with(&c, &mut Silent).unwrap();
    assert_eq!(a.states, s.states);
}
