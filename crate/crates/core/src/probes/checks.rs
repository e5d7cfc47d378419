//! Closed-form and finite-difference consistency checks.

use crate::domain::sobolev_sq;
use crate::dynamics::generator::{generator_apply, GeneratorFunctional};
use crate::dynamics::{run, simulate, simulate_tangent, Drive, Model, PhaseState};
use crate::error::Result;
use crate::functionals::{energy, FunctionalContext};
use crate::noise::{trace_moment, NoiseSource, NoiseStream};

use super::stats::{mean_ci, Estimate};
use super::{gaussian_state, EnsembleConfig, ProbeReport, Series};

/// E|v_k(t)|^2 of the Langevin system m dv = -v dt + Q dW, v(0) = 0, against
/// q_k^2 (1 - e^{-2t/m}) / (2m), at t = `t_over_m` m.
pub fn langevin_check(cfg: &EnsembleConfig, t_over_m: f64) -> Result<ProbeReport> {
    cfg.validate()?;
    let mut rep = ProbeReport::new("linear-check", cfg);
    let basis = cfg.basis();
    let n = basis.len();
    let q = cfg.template.q.coefficients(basis)?;
    let tol = cfg.tolerances.langevin_rel;
    let mut series = Series::new("langevin", &["m", "mode", "estimate", "half_width", "exact"]);
    let mut worst: f64 = 0.0;
    for &m in &cfg.masses_or_template() {
        let t = t_over_m * m;
        // the system is linear and integrated exactly, so the step only sets
        // how often the state is recorded
        let steps = 20;
        let model = Model::langevin(basis, q.clone(), m, t / steps as f64)?;
        let finals: Vec<Result<Vec<f64>>> = cfg.ensemble(cfg.trajectories, |i| {
            let mut stream = NoiseStream::new(cfg.template.seed, i as u64);
            let zero = vec![0.0; n];
            let tr = run(&model, (&zero, &zero), steps, steps, Some(&mut stream), |_| Drive::None)?;
            Ok(tr.final_state().v.coeffs().iter().map(|x| x * x).collect())
        });
        let finals = finals.into_iter().collect::<Result<Vec<_>>>()?;
        let row = rep.row(m);
        for k in 0..n {
            let xs: Vec<f64> = finals.iter().map(|f| f[k]).collect();
            let est = mean_ci(&xs);
            let exact = q[k] * q[k] * (1.0 - (-2.0 * t / m).exp()) / (2.0 * m);
            if exact > 0.0 {
                worst = worst.max((est.value / exact - 1.0).abs());
            }
            row.insert(format!("v{}_second_moment", k + 1), est);
            series.push(vec![m, (k + 1) as f64, est.value, est.half_width, exact]);
        }
    }
    rep.fitted.insert("max_relative_error".into(), Estimate::exact(worst));
    rep.check(
        "langevin_variance",
        worst <= tol,
        format!("largest per-mode relative error {worst:.4} (tolerance {tol})"),
    );
    rep.series.push(series);
    Ok(rep)
}

/// |U|_{H^1 x H}
fn phase_norm(s: &PhaseState) -> f64 {
    let ev = s.basis().eigenvalues();
    (sobolev_sq(ev, s.u.coeffs(), 1.0) + sobolev_sq(ev, s.v.coeffs(), 0.0)).sqrt()
}

/// Tangent process against a shared-noise finite difference of the flow.
pub fn tangent_check(cfg: &EnsembleConfig, directions: usize, eps: f64) -> Result<ProbeReport> {
    cfg.validate()?;
    let mut rep = ProbeReport::new("tangent-check", cfg);
    let tol = cfg.tolerances.tangent_rel;
    let basis = cfg.basis();
    let mut worst: f64 = 0.0;
    for &m in &cfg.masses_or_template() {
        let errs: Vec<Result<f64>> = cfg.ensemble(directions, |i| {
            let mut c = cfg.sim(m, i);
            c.stride = 1;
            let mut rng = NoiseStream::lane(c.seed, i as u64, 7);
            let xi = gaussian_state(basis, 4.min(basis.len()), 1.0, &mut rng);
            let base = simulate(&c)?;
            let j = simulate_tangent(&c, &base, &xi)?;
            let mut cp = c.clone();
            cp.initial = c.initial.axpy(eps, &xi);
            let pert = simulate(&cp)?;
            let fd = pert.final_state().axpy(-1.0, base.final_state()).scaled(1.0 / eps);
            let jt = j.final_state();
            Ok(phase_norm(&fd.axpy(-1.0, jt)) / phase_norm(jt))
        });
        let errs = errs.into_iter().collect::<Result<Vec<_>>>()?;
        let top = errs.iter().cloned().fold(0.0, f64::max);
        worst = worst.max(top);
        rep.row(m).insert("max_relative_error".into(), Estimate::exact(top));
        rep.row(m).insert("mean_relative_error".into(), mean_ci(&errs));
    }
    rep.check(
        "tangent_finite_difference",
        worst <= tol,
        format!("largest relative H1 error {worst:.3e} (tolerance {tol:e}, eps {eps:e})"),
    );
    Ok(rep)
}

/// Replays a stream with every normal negated on request.
struct Antithetic {
    inner: NoiseStream,
    flip: bool,
}

impl NoiseSource for Antithetic {
    fn standard_normals(&mut self, step: u64, out: &mut [[f64; 4]]) {
        self.inner.standard_normals(step, out);
        if self.flip {
            out.iter_mut().flatten().for_each(|z| *z = -*z);
        }
    }
}

/// Short-time Ito check of the generator on the energy: (E g(X_h) - g(x)) / h
/// over antithetic pairs against the closed form, at random states.
///
/// The error is relative to max(|L g|, T_0), the trace term setting the
/// natural size of the generator.
pub fn generator_check(cfg: &EnsembleConfig, states: usize, paths: usize, h: f64) -> Result<ProbeReport> {
    cfg.validate()?;
    let mut rep = ProbeReport::new("generator-check", cfg);
    let tol = cfg.tolerances.generator_rel;
    let basis = cfg.basis();
    let q = cfg.template.q.coefficients(basis)?;
    let t0 = trace_moment(&q, basis.eigenvalues(), 0);
    let mut series = Series::new("generator", &["m", "state", "closed_form", "estimate", "half_width"]);
    let mut worst: f64 = 0.0;
    let pairs = paths.div_ceil(2);
    for &m in &cfg.masses_or_template() {
        let ctx = FunctionalContext::new(basis, m, &cfg.template.phi)?;
        let mut c = cfg.sim(m, 0);
        c.step = h;
        let model = c.model()?;
        for s in 0..states {
            let mut rng = NoiseStream::lane(c.seed, s as u64, 11);
            let x = gaussian_state(basis, 4.min(basis.len()), 1.0, &mut rng);
            let g0 = energy(&x, &ctx);
            let exact = generator_apply(GeneratorFunctional::Energy, &x, &ctx, &q)?;
            let ys: Vec<Result<f64>> = cfg.ensemble(pairs, |i| {
                let mut tot = 0.0;
                for flip in [false, true] {
                    let mut src = Antithetic {
                        inner: NoiseStream::lane(c.seed, (s * pairs + i) as u64, 12),
                        flip,
                    };
                    let tr = run(&model, (x.u.coeffs(), x.v.coeffs()), 1, 1, Some(&mut src), |_| Drive::Reaction)?;
                    tot += energy(tr.final_state(), &ctx);
                }
                Ok((0.5 * tot - g0) / h)
            });
            let ys = ys.into_iter().collect::<Result<Vec<_>>>()?;
            let est = mean_ci(&ys);
            let scale = exact.abs().max(t0);
            let rel = (est.value - exact).abs() / scale;
            worst = worst.max(rel);
            let row = rep.row(m);
            row.insert(format!("state{}_estimate", s + 1), est);
            row.insert(format!("state{}_closed_form", s + 1), Estimate::exact(exact));
            series.push(vec![m, (s + 1) as f64, exact, est.value, est.half_width]);
        }
    }
    rep.fitted.insert("max_relative_error".into(), Estimate::exact(worst));
    rep.check(
        "generator_energy",
        worst <= tol,
        format!("largest relative error {worst:.4} (tolerance {tol}, h {h:e}, {paths} paths)"),
    );
    rep.series.push(series);
    Ok(rep)
}
