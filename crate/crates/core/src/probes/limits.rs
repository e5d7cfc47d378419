//! Small-mass limit experiments: trajectories, invariant measures and observables.

use crate::dynamics::{simulate, PhaseState};
use crate::error::{Error, Result};
use crate::metrics::{dual_lower_bound, wasserstein, EmpiricalMeasure, Ground};

use super::stats::{autocorrelation, decreasing_with_tolerance, mean_ci, Estimate};
use super::{grid_stride, EnsembleConfig, ProbeReport, Series};

/// Time-averaged surrogate for the invariant measure at one mass.
#[derive(Clone, Debug)]
pub struct InvariantSample {
    pub mass: f64,
    pub measure: EmpiricalMeasure,
    pub marginal: EmpiricalMeasure,
    /// Trajectories lost to blow-up.
    pub dropped: usize,
    /// Lag-one autocorrelation of |u|_H^2 at the thinning interval, averaged over trajectories.
    pub autocorrelation: f64,
    /// Per-mode E u_k^2, with intervals from per-trajectory batch means.
    pub variances: Vec<Estimate>,
}

/// States after burn-in at the thinning interval, pooled over trajectories
/// `offset..offset + trajectories` in order and cut to `n` samples.
pub fn invariant_sample(cfg: &EnsembleConfig, m: f64, n: usize, offset: usize) -> Result<InvariantSample> {
    cfg.validate()?;
    let per = n.div_ceil(cfg.trajectories);
    let step = cfg.template.step;
    let stride = grid_stride(step, cfg.thin);
    let dt = stride as f64 * step;
    let skip = (cfg.burn_in / dt).ceil() as usize;
    let runs: Vec<Result<Vec<PhaseState>>> = cfg.ensemble(cfg.trajectories, |i| {
        let mut c = cfg.sim(m, offset + i);
        c.stride = stride;
        c.horizon = (skip + per - 1) as f64 * dt;
        let tr = simulate(&c)?;
        Ok(tr.states.into_iter().skip(skip).collect())
    });
    let mut dropped = 0;
    let mut kept = Vec::new();
    for r in runs {
        match r {
            Ok(s) => kept.push(s),
            Err(Error::BlowUp { .. }) => dropped += 1,
            Err(e) => return Err(e),
        }
    }
    if kept.is_empty() {
        return Err(Error::InvalidConfig("every trajectory blew up".into()));
    }
    let basis = cfg.basis();
    let norms: Vec<f64> = kept
        .iter()
        .map(|p| {
            let xs: Vec<f64> = p.iter().map(|s| s.u.sobolev_norm(0.0).powi(2)).collect();
            autocorrelation(&xs, 1)
        })
        .filter(|x| x.is_finite())
        .collect();
    let autocorrelation = if norms.is_empty() {
        f64::NAN
    } else {
        norms.iter().sum::<f64>() / norms.len() as f64
    };
    let variances = (0..basis.len())
        .map(|k| {
            let batch: Vec<f64> = kept
                .iter()
                .map(|p| p.iter().map(|s| s.u.coeffs()[k].powi(2)).sum::<f64>() / p.len() as f64)
                .collect();
            mean_ci(&batch)
        })
        .collect();
    let mut pooled: Vec<PhaseState> = kept.into_iter().flatten().collect();
    pooled.truncate(n);
    let measure = EmpiricalMeasure::new(pooled)?;
    Ok(InvariantSample {
        mass: m,
        marginal: measure.marginal(),
        measure,
        dropped,
        autocorrelation,
        variances,
    })
}

/// Slope c of a linear reaction phi(x) = c x.
fn linear_slope(cfg: &EnsembleConfig) -> Option<f64> {
    let phi = &cfg.template.phi;
    (phi.is_linear() || phi.is_zero()).then(|| phi.eval(1.0))
}

/// Runs [`invariant_sample`] per mass and audits thinning and, for a linear
/// reaction, the Gaussian stationary variances q_k^2 / (2 (alpha_k - c)).
pub fn invariant_sample_report(cfg: &EnsembleConfig, n: usize) -> Result<(ProbeReport, Vec<InvariantSample>)> {
    let mut rep = ProbeReport::new("invariant-sample", cfg);
    let basis = cfg.basis();
    let q = cfg.template.q.coefficients(basis)?;
    let ev = basis.eigenvalues();
    let mut out = Vec::new();
    let mut series = Series::new("variance", &["m", "mode", "estimate", "half_width", "exact"]);
    for &m in &cfg.masses_or_template() {
        let s = invariant_sample(cfg, m, n, 0)?;
        let tol = cfg.tolerances.autocorrelation;
        rep.row(m).insert("autocorrelation".into(), Estimate::exact(s.autocorrelation));
        rep.row(m).insert("dropped".into(), Estimate::exact(s.dropped as f64));
        rep.check(
            &format!("thinning_m{m}"),
            s.autocorrelation < tol,
            format!("lag-one autocorrelation {:.3} (allowed {tol})", s.autocorrelation),
        );
        let slope = linear_slope(cfg);
        let mut worst: f64 = 0.0;
        for (k, v) in s.variances.iter().enumerate() {
            rep.row(m).insert(format!("u{}_variance", k + 1), *v);
            let exact = slope.map(|c| q[k] * q[k] / (2.0 * (ev[k] - c))).unwrap_or(f64::NAN);
            if exact > 0.0 {
                worst = worst.max((v.value / exact - 1.0).abs());
            }
            series.push(vec![m, (k + 1) as f64, v.value, v.half_width, exact]);
        }
        if slope.is_some() {
            let tol = cfg.tolerances.variance_rel;
            rep.check(
                &format!("stationary_variance_m{m}"),
                worst <= tol,
                format!("largest per-mode relative error {worst:.4} (tolerance {tol})"),
            );
        }
        out.push(s);
    }
    rep.series.push(series);
    Ok((rep, out))
}

fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn sorted_desc(masses: &[f64]) -> Vec<f64> {
    let mut ms: Vec<f64> = masses.iter().cloned().filter(|&m| m > 0.0).collect();
    ms.sort_by(|a, b| b.partial_cmp(a).expect("finite masses"));
    ms
}

/// g(m) = sup_{t <= T} E |u^m(t) - u^0(t)|_H under shared noise.
pub fn small_mass_gap(cfg: &EnsembleConfig, masses: &[f64], horizon: f64) -> Result<ProbeReport> {
    cfg.validate()?;
    let ms = sorted_desc(masses);
    if ms.len() < 2 {
        return Err(Error::InvalidArgument("mass-gap needs a sweep of at least two positive masses".into()));
    }
    let mut rep = ProbeReport::new("mass-gap", cfg);
    let stride = grid_stride(cfg.template.step, cfg.thin);
    let runs: Vec<Result<Vec<Vec<f64>>>> = cfg.ensemble(cfg.trajectories, |i| {
        let mut c = cfg.sim(0.0, i);
        c.horizon = horizon;
        c.stride = stride;
        let heat = simulate(&c)?;
        let mut gaps = Vec::new();
        for &m in &ms {
            c.mass = m;
            let wave = simulate(&c)?;
            gaps.push(
                wave.states
                    .iter()
                    .zip(&heat.states)
                    .map(|(a, b)| l2_distance(a.u.coeffs(), b.u.coeffs()))
                    .collect(),
            );
        }
        Ok(gaps)
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let n_t = runs[0][0].len();
    let times: Vec<f64> = (0..n_t).map(|k| (k * stride) as f64 * cfg.template.step).collect();
    let mut gs = Vec::new();
    let mut s = Series::new("gap", &["m", "t", "mean", "half_width"]);
    for (j, &m) in ms.iter().enumerate() {
        let means: Vec<Estimate> = (0..n_t)
            .map(|k| mean_ci(&runs.iter().map(|r| r[j][k]).collect::<Vec<_>>()))
            .collect();
        for (t, e) in times.iter().zip(&means) {
            s.push(vec![m, *t, e.value, e.half_width]);
        }
        let g = means
            .iter()
            .cloned()
            .fold(Estimate::exact(0.0), |a, b| if b.value > a.value { b } else { a });
        rep.row(m).insert("g".into(), g);
        gs.push(g);
    }
    rep.series.push(s);
    let (first, last) = (gs[0], gs[gs.len() - 1]);
    let ratio = last.value / first.value;
    rep.fitted.insert("g_ratio".into(), Estimate::exact(ratio));
    rep.check(
        "decreasing_in_m",
        decreasing_with_tolerance(&gs),
        ms.iter()
            .zip(&gs)
            .map(|(m, g)| format!("g({m}) = {:.4}±{:.4}", g.value, g.half_width))
            .collect::<Vec<_>>()
            .join(", "),
    );
    let tol = cfg.tolerances.gap_ratio;
    rep.check(
        "shrinkage",
        last.hi < tol * first.lo,
        format!("g(m_min) / g(m_max) = {ratio:.4} (required < {tol}, compared on interval bounds)"),
    );
    Ok(rep)
}

/// W_{dtilde_0}(pi_1 nu^m, nu^0) per mass against the same-law floor W(nu^0, nu^0').
pub fn invariant_gap(cfg: &EnsembleConfig, masses: &[f64], n: usize) -> Result<ProbeReport> {
    cfg.validate()?;
    let ms = sorted_desc(masses);
    if ms.is_empty() {
        return Err(Error::InvalidArgument("invariant-gap needs at least one positive mass".into()));
    }
    let mut rep = ProbeReport::new("invariant-gap", cfg);
    let t = cfg.trajectories;
    let p = &cfg.metric;
    let a = invariant_sample(cfg, 0.0, n, 0)?.marginal;
    let b = invariant_sample(cfg, 0.0, n, t)?.marginal;
    if a.len() != n || b.len() != n {
        return Err(Error::EmpiricalSizeMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let floor = wasserstein(&a, &b, Ground::DTilde0, p)?;
    rep.fitted.insert("noise_floor".into(), Estimate::exact(floor));
    let mut gaps = Vec::new();
    let mut excess = Vec::new();
    for (j, &m) in ms.iter().enumerate() {
        let s = invariant_sample(cfg, m, n, (2 + j) * t)?.marginal;
        let wa = wasserstein(&s, &a, Ground::DTilde0, p)?;
        let wb = wasserstein(&s, &b, Ground::DTilde0, p)?;
        let g = Estimate::new(0.5 * (wa + wb), 0.5 * (wa - wb).abs());
        let e = Estimate::new((g.value - floor).max(0.0), g.half_width);
        rep.row(m).insert("gap".into(), g);
        rep.row(m).insert("excess".into(), e);
        gaps.push(g);
        excess.push(e);
    }
    let describe = ms
        .iter()
        .zip(&gaps)
        .map(|(m, g)| format!("W({m}) = {:.4}±{:.4}", g.value, g.half_width))
        .collect::<Vec<_>>()
        .join(", ");
    let slope = linear_slope(cfg);
    if slope.is_some() {
        let f = cfg.tolerances.floor_factor;
        rep.check(
            "within_noise_floor",
            gaps.iter().all(|g| g.value < f * floor),
            format!("{describe}; floor {floor:.4}, allowed {f}x"),
        );
    } else {
        rep.check("decreasing_in_m", decreasing_with_tolerance(&gaps), format!("{describe}; floor {floor:.4}"));
        let (first, last) = (excess[0].value, excess[excess.len() - 1].value);
        let tol = cfg.tolerances.invariant_ratio;
        rep.check(
            "shrinkage_over_floor",
            first > 0.0 && last < tol * first,
            format!("excess over floor: {first:.4} at m_max, {last:.4} at m_min (required ratio < {tol})"),
        );
    }
    Ok(rep)
}

/// sup_t |E f(u^m(t)) - E f(u^0(t))| under shared noise, for every registered observable.
pub fn observable_gap(cfg: &EnsembleConfig, masses: &[f64], horizon: f64) -> Result<ProbeReport> {
    cfg.validate()?;
    let obs = &cfg.observables;
    if obs.is_empty() {
        return Err(Error::InvalidArgument("observable-gap needs at least one observable".into()));
    }
    let p = &cfg.metric;
    for f in obs {
        let l = f.lipschitz(p);
        let ok = match f {
            crate::metrics::Observable::Constant(c) => c.is_finite(),
            crate::metrics::Observable::ClippedNorm { scale } | crate::metrics::Observable::ClippedMode { scale, .. } => {
                *scale > 0.0 && l.is_finite()
            }
        };
        if !ok {
            return Err(Error::UncertifiedObservable);
        }
    }
    let ms = sorted_desc(masses);
    let mut rep = ProbeReport::new("observable-gap", cfg);
    let stride = grid_stride(cfg.template.step, cfg.thin);
    // per path: heat and wave states at each recorded time
    let runs: Vec<Result<(Vec<PhaseState>, Vec<Vec<PhaseState>>)>> = cfg.ensemble(cfg.trajectories, |i| {
        let mut c = cfg.sim(0.0, i);
        c.horizon = horizon;
        c.stride = stride;
        let heat = simulate(&c)?.states;
        let mut waves = Vec::new();
        for &m in &ms {
            c.mass = m;
            waves.push(simulate(&c)?.states);
        }
        Ok((heat, waves))
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let n_t = runs[0].0.len();
    let mut all_ok = true;
    let mut dual_ok = true;
    let mut detail = Vec::new();
    for f in obs {
        let mut gs = Vec::new();
        for (j, &m) in ms.iter().enumerate() {
            let g = (0..n_t)
                .map(|k| {
                    let d: Vec<f64> = runs.iter().map(|r| f.eval(&r.1[j][k]) - f.eval(&r.0[k])).collect();
                    let e = mean_ci(&d);
                    Estimate::new(e.value.abs(), e.half_width)
                })
                .fold(Estimate::exact(0.0), |a, b| if b.value > a.value { b } else { a });
            rep.row(m).insert(format!("gap[{}]", f.name()), g);
            gs.push(g);
            // dual bound at the final time against the exact transport cost
            let lip = f.lipschitz(p);
            if lip > 0.0 && runs.len() <= crate::metrics::MAX_ASSIGNMENT {
                let wm = EmpiricalMeasure::new(runs.iter().map(|r| r.1[j][n_t - 1].clone()).collect())?.marginal();
                let w0 = EmpiricalMeasure::new(runs.iter().map(|r| r.0[n_t - 1].clone()).collect())?.marginal();
                let lb = dual_lower_bound(|s| f.eval(s), lip, &wm, &w0)?;
                let w = wasserstein(&wm, &w0, Ground::DTilde0, p)?;
                dual_ok &= lb <= w * (1.0 + 1e-12) + 1e-15;
                rep.row(m).insert(format!("dual_bound[{}]", f.name()), Estimate::exact(lb));
                rep.row(m).insert(format!("wasserstein[{}]", f.name()), Estimate::exact(w));
            }
        }
        if !matches!(f, crate::metrics::Observable::Constant(_)) {
            let ok = decreasing_with_tolerance(&gs);
            all_ok &= ok;
            detail.push(format!(
                "{}: {}",
                f.name(),
                gs.iter().map(|g| format!("{:.4}", g.value)).collect::<Vec<_>>().join(" > ")
            ));
        }
    }
    rep.check("decreasing_in_m", all_ok, detail.join("; "));
    rep.check(
        "dual_bound_consistent",
        dual_ok,
        "|E f(u^m) - E f(u^0)| / [f] <= W at the final time".into(),
    );
    Ok(rep)
}
