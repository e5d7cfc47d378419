//! Moment bounds, contraction, irreducibility and smoothing probes.

use std::str::FromStr;

use crate::domain::sobolev_sq;
use crate::dynamics::{low_mode_feedback, simulate, simulate_control, simulate_convolution, PhaseState};
use crate::error::{Error, Result};
use crate::functionals::{energy, psi1, psi2, v_m, FunctionalContext};
use crate::metrics::dtilde_m;
use crate::noise::NoiseStream;

use super::stats::{exp_fit, mean_ci, rate_estimate, relative_spread, wilson, Estimate};
use super::{gaussian_state, grid_stride, EnsembleConfig, ProbeReport, Series};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MomentFunctional {
    Energy,
    EnergyPower(u32),
    ExpEnergy(f64),
    Psi2,
}

impl MomentFunctional {
    fn eval(&self, s: &PhaseState, ctx: &FunctionalContext) -> Result<f64> {
        Ok(match *self {
            MomentFunctional::Energy => energy(s, ctx),
            MomentFunctional::EnergyPower(n) => energy(s, ctx).powi(n as i32),
            MomentFunctional::ExpEnergy(beta) => {
                let x = beta * energy(s, ctx);
                if x > 700.0 {
                    return Err(Error::Overflow { log_value: x });
                }
                x.exp()
            }
            MomentFunctional::Psi2 => psi2(s, ctx),
        })
    }

    pub fn name(&self) -> String {
        match self {
            MomentFunctional::Energy => "energy".into(),
            MomentFunctional::EnergyPower(n) => format!("energy^{n}"),
            MomentFunctional::ExpEnergy(b) => format!("exp({b}*energy)"),
            MomentFunctional::Psi2 => "psi2".into(),
        }
    }
}

impl FromStr for MomentFunctional {
    type Err = Error;

    /// `energy`, `energy^n`, `exp:<beta>` or `psi2`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::UnsupportedFunctional(s.to_string());
        if s == "energy" {
            return Ok(Self::Energy);
        }
        if s == "psi2" {
            return Ok(Self::Psi2);
        }
        if let Some(n) = s.strip_prefix("energy^") {
            return n.parse().map(Self::EnergyPower).map_err(|_| bad());
        }
        if let Some(b) = s.strip_prefix("exp:") {
            return b.parse().map(Self::ExpEnergy).map_err(|_| bad());
        }
        Err(bad())
    }
}

/// Decay rate of |w| for m w'' + w' + kappa w = 0 (kappa > 0).
pub fn linear_mode_rate(kappa: f64, m: f64) -> f64 {
    if m == 0.0 {
        return kappa;
    }
    let disc = 1.0 - 4.0 * m * kappa;
    if disc >= 0.0 {
        2.0 * kappa / (1.0 + disc.sqrt())
    } else {
        0.5 / m
    }
}

/// Mean of `f` over the ensemble at each recorded time, for paths started at `init`.
fn mean_series(
    cfg: &EnsembleConfig,
    m: f64,
    init: &PhaseState,
    every: f64,
    f: impl Fn(&PhaseState) -> Result<f64> + Sync + Send,
) -> Result<(Vec<f64>, Vec<Estimate>, Vec<Vec<f64>>)> {
    let runs: Vec<Result<(Vec<f64>, Vec<f64>)>> = cfg.ensemble(cfg.trajectories, |i| {
        let mut c = cfg.sim(m, i);
        c.initial = init.clone();
        c.stride = grid_stride(c.step, every);
        let tr = simulate(&c)?;
        let vals = tr.states.iter().map(&f).collect::<Result<Vec<_>>>()?;
        Ok((tr.times, vals))
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let times = runs[0].0.clone();
    let per_path: Vec<Vec<f64>> = runs.into_iter().map(|r| r.1).collect();
    let means = (0..times.len())
        .map(|j| mean_ci(&per_path.iter().map(|p| p[j]).collect::<Vec<_>>()))
        .collect();
    Ok((times, means, per_path))
}

/// Ensemble means of a functional from zero data (plateau) and from `large`
/// data (decay toward the plateau).
pub fn moment_bound_report(cfg: &EnsembleConfig, functional: MomentFunctional, large: &PhaseState) -> Result<ProbeReport> {
    cfg.validate()?;
    if cfg.burn_in >= cfg.template.horizon {
        return Err(Error::InvalidConfig("burn-in must be shorter than the horizon".into()));
    }
    let mut rep = ProbeReport::new("moments", cfg);
    let basis = cfg.basis();
    let zero = PhaseState::zeros(basis);
    let name = functional.name();
    let mut plateaus = Vec::new();
    let mut rates = Vec::new();
    for &m in &cfg.masses_or_template() {
        let ctx = FunctionalContext::new(basis, m, &cfg.template.phi)?;
        let f = |s: &PhaseState| functional.eval(s, &ctx);
        let (times, rise, paths) = mean_series(cfg, m, &zero, cfg.thin, f)?;
        let first = times.iter().position(|&t| t >= cfg.burn_in - 1e-12).unwrap_or(0);
        let averages: Vec<f64> = paths
            .iter()
            .map(|p| p[first..].iter().sum::<f64>() / (p.len() - first) as f64)
            .collect();
        let plateau = mean_ci(&averages);
        let (_, decay, _) = mean_series(cfg, m, large, cfg.thin, f)?;
        // excess over the plateau, fitted while it stays above 5% of its start
        let e0 = decay[0].value - plateau.value;
        let mut ts = Vec::new();
        let mut ex = Vec::new();
        for (t, d) in times.iter().zip(&decay) {
            let e = d.value - plateau.value;
            if e0 > 0.0 && e > 0.05 * e0 {
                ts.push(*t);
                ex.push(Estimate::new(e, d.half_width + plateau.half_width));
            } else if !ts.is_empty() {
                break;
            }
        }
        let rate = rate_estimate(&ts, &ex).unwrap_or(Estimate::new(f64::NAN, f64::NAN));
        let prefactor = exp_fit(&ts, &ex.iter().map(|e| e.value).collect::<Vec<_>>())
            .map(|(c, _)| c)
            .unwrap_or(f64::NAN);
        let row = rep.row(m);
        row.insert(format!("{name}_plateau"), plateau);
        row.insert(format!("{name}_decay_rate"), rate);
        row.insert(format!("{name}_decay_prefactor"), Estimate::exact(prefactor));
        let mut s = Series::new(&format!("m{m}"), &["t", "zero_mean", "zero_hw", "large_mean", "large_hw"]);
        for j in 0..times.len() {
            s.push(vec![times[j], rise[j].value, rise[j].half_width, decay[j].value, decay[j].half_width]);
        }
        rep.series.push(s);
        plateaus.push((m, plateau));
        rates.push((m, rate));
    }
    let hi = plateaus.iter().map(|p| p.1.value).fold(f64::NEG_INFINITY, f64::max);
    let lo = plateaus.iter().map(|p| p.1.value).fold(f64::INFINITY, f64::min);
    let factor = cfg.tolerances.plateau_factor;
    rep.fitted.insert("plateau_ratio".into(), Estimate::exact(hi / lo));
    rep.check(
        "plateau_uniform_in_m",
        hi.is_finite() && hi <= factor * lo,
        format!(
            "plateaus {} ; max/min = {:.3} (allowed {factor})",
            plateaus
                .iter()
                .map(|(m, p)| format!("m={m}: {:.4}±{:.4}", p.value, p.half_width))
                .collect::<Vec<_>>()
                .join(", "),
            hi / lo
        ),
    );
    let positive = rates.iter().all(|(_, r)| r.value - r.half_width > 0.0);
    rep.check(
        "decay_rate_positive",
        positive,
        rates
            .iter()
            .map(|(m, r)| format!("m={m}: c={:.4}±{:.4}", r.value, r.half_width))
            .collect::<Vec<_>>()
            .join(", "),
    );
    Ok(rep)
}

/// Synchronous coupling of pairs of initial states; E dtilde_m over time and
/// its fitted decay rate per mass.
pub fn contraction_estimate(
    cfg: &EnsembleConfig,
    pairs: &[(PhaseState, PhaseState)],
    fit_window: (f64, f64),
) -> Result<ProbeReport> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("contraction needs at least one pair of initial states".into()));
    }
    let mut rep = ProbeReport::new("contraction", cfg);
    let basis = cfg.basis();
    let phi = &cfg.template.phi;
    let mut rates = Vec::new();
    let n_runs = cfg.trajectories * pairs.len();
    for &m in &cfg.masses_or_template() {
        let metric = cfg.metric.with_mass(m);
        let runs: Vec<Result<(Vec<f64>, Vec<f64>)>> = cfg.ensemble(n_runs, |j| {
            let (i, p) = (j / pairs.len(), j % pairs.len());
            let mut c = cfg.sim(m, i);
            c.stride = grid_stride(c.step, cfg.thin);
            c.initial = pairs[p].0.clone();
            let a = simulate(&c)?;
            c.initial = pairs[p].1.clone();
            let b = simulate(&c)?;
            let d = a
                .states
                .iter()
                .zip(&b.states)
                .map(|(x, y)| dtilde_m(x, y, &metric))
                .collect::<Result<Vec<_>>>()?;
            Ok((a.times, d))
        });
        let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
        let times = runs[0].0.clone();
        let means: Vec<Estimate> = (0..times.len())
            .map(|k| mean_ci(&runs.iter().map(|r| r.1[k]).collect::<Vec<_>>()))
            .collect();
        let (ts, es): (Vec<f64>, Vec<Estimate>) = times
            .iter()
            .zip(&means)
            .filter(|(t, _)| **t >= fit_window.0 - 1e-12 && **t <= fit_window.1 + 1e-12)
            .map(|(t, e)| (*t, *e))
            .unzip();
        let rate = rate_estimate(&ts, &es).unwrap_or(Estimate::new(f64::NAN, f64::NAN));
        let mut s = Series::new(&format!("m{m}"), &["t", "mean_dtilde", "half_width"]);
        for (t, e) in times.iter().zip(&means) {
            s.push(vec![*t, e.value, e.half_width]);
        }
        rep.series.push(s);
        rep.row(m).insert("dtilde_rate".into(), rate);
        if phi.is_linear() {
            // the difference solves the noiseless linear system; dtilde is the
            // square root of a quantity decaying like the slowest mode
            let c = phi.eval(1.0);
            let slowest = basis
                .eigenvalues()
                .iter()
                .map(|a| linear_mode_rate(a - c, m))
                .fold(f64::INFINITY, f64::min);
            let pred = 0.5 * slowest;
            let rel = (rate.value - pred).abs() / pred;
            rep.row(m).insert("linear_prediction".into(), Estimate::exact(pred));
            rep.check(
                &format!("linear_rate_m{m}"),
                rel <= cfg.tolerances.linear_rate_rel,
                format!("fitted {:.4} vs predicted {pred:.4} (relative {rel:.3})", rate.value),
            );
        }
        rates.push((m, rate));
    }
    let values: Vec<f64> = rates.iter().map(|r| r.1.value).collect();
    let spread = relative_spread(&values);
    rep.fitted.insert("rate_spread".into(), Estimate::exact(spread));
    rep.check(
        "rates_positive",
        rates.iter().all(|(_, r)| r.value - r.half_width > 0.0),
        rates
            .iter()
            .map(|(m, r)| format!("m={m}: {:.4}±{:.4}", r.value, r.half_width))
            .collect::<Vec<_>>()
            .join(", "),
    );
    if !phi.is_linear() {
        rep.check(
            "rate_spread",
            spread < cfg.tolerances.spread,
            format!("(max - min) / max = {spread:.3} (allowed {})", cfg.tolerances.spread),
        );
    }
    Ok(rep)
}

/// Initial state with V_m < R: Gaussian in the first n-bar modes, shrunk until accepted.
fn draw_in_ball(cfg: &EnsembleConfig, ctx: &FunctionalContext, modes: usize, big_r: f64, i: usize) -> PhaseState {
    let basis = cfg.basis();
    let mut rng = NoiseStream::lane(cfg.template.seed, i as u64, 21);
    let mut scale = (big_r / (2.0 * modes as f64)).sqrt();
    loop {
        for _ in 0..32 {
            let s = gaussian_state(basis, modes, scale, &mut rng);
            if v_m(&s, ctx) < big_r {
                return s;
            }
        }
        scale *= 0.5;
    }
}

/// Frequency of {V_m(t) < r} from initial data in {V_m < R}.
pub fn irreducibility_probe(cfg: &EnsembleConfig, big_r: f64, r: f64, t: f64) -> Result<ProbeReport> {
    cfg.validate()?;
    let mut rep = ProbeReport::new("irreducibility", cfg);
    let basis = cfg.basis();
    let (modes, _) = low_mode_feedback(basis, &cfg.template.phi)?;
    let mut lows = Vec::new();
    for &m in &cfg.masses_or_template() {
        let ctx = FunctionalContext::new(basis, m, &cfg.template.phi)?;
        let hits: Vec<Result<bool>> = cfg.ensemble(cfg.trajectories, |i| {
            let mut c = cfg.sim(m, i);
            c.horizon = t;
            c.stride = c.steps()?.max(1);
            c.initial = draw_in_ball(cfg, &ctx, modes, big_r, i);
            let tr = simulate(&c)?;
            Ok(v_m(tr.final_state(), &ctx) < r)
        });
        let hits = hits.into_iter().collect::<Result<Vec<_>>>()?;
        let w = wilson(hits.iter().filter(|&&h| h).count(), hits.len());
        rep.row(m).insert("frequency".into(), w);
        lows.push((m, w));
    }
    rep.check(
        "positive_lower_bound",
        lows.iter().all(|(_, w)| w.lo > 0.0),
        lows.iter()
            .map(|(m, w)| format!("m={m}: {:.3} [{:.3}, {:.3}]", w.value, w.lo, w.hi))
            .collect::<Vec<_>>()
            .join(", "),
    );
    Ok(rep)
}

/// Probability that sup_{t <= T} |Gamma_1|_{H^2}^2 + m^2 |Gamma_2|_{H^1}^2 < r
/// for the linear convolution, over grids of r and T.
pub fn small_ball_probe(cfg: &EnsembleConfig, rs: &[f64], ts: &[f64]) -> Result<ProbeReport> {
    cfg.validate()?;
    let mut rep = ProbeReport::new("small-ball", cfg);
    let basis = cfg.basis();
    let ev = basis.eigenvalues();
    let t_max = ts.iter().cloned().fold(0.0, f64::max);
    let mut positive = true;
    let mut monotone = true;
    let mut s = Series::new("frequency", &["m", "r", "T", "p", "lo", "hi"]);
    for &m in &cfg.masses_or_template() {
        let sups: Vec<Result<Vec<f64>>> = cfg.ensemble(cfg.trajectories, |i| {
            let mut c = cfg.sim(m, i);
            c.horizon = t_max;
            c.initial = PhaseState::zeros(basis);
            let tr = simulate_convolution(&c)?;
            let mut out = Vec::new();
            for &t in ts {
                let sup = tr
                    .times
                    .iter()
                    .zip(&tr.states)
                    .filter(|(tt, _)| **tt <= t + 1e-12)
                    .map(|(_, st)| sobolev_sq(ev, st.u.coeffs(), 2.0) + m * m * sobolev_sq(ev, st.v.coeffs(), 1.0))
                    .fold(0.0, f64::max);
                out.push(sup);
            }
            Ok(out)
        });
        let sups = sups.into_iter().collect::<Result<Vec<_>>>()?;
        for (j, &t) in ts.iter().enumerate() {
            let mut last = -1.0;
            for &r in rs {
                let k = sups.iter().filter(|p| p[j] < r).count();
                let w = wilson(k, sups.len());
                positive &= w.lo > 0.0;
                monotone &= w.value >= last;
                last = w.value;
                rep.row(m).insert(format!("p(r={r},T={t})"), w);
                s.push(vec![m, r, t, w.value, w.lo, w.hi]);
            }
        }
    }
    rep.series.push(s);
    rep.check("monotone_in_r", monotone, "frequency nondecreasing in r".into());
    rep.check("positive_lower_bound", positive, "Wilson lower bound > 0 on the whole (r, T) grid".into());
    Ok(rep)
}

/// E Psi_1(rho(t)) for the controlled linearization started at `xi`.
pub fn asf_decay(cfg: &EnsembleConfig, xi: &PhaseState, fit_window: (f64, f64)) -> Result<ProbeReport> {
    cfg.validate()?;
    let mut rep = ProbeReport::new("asf", cfg);
    let basis = cfg.basis();
    let phi = &cfg.template.phi;
    let mut rates = Vec::new();
    for &m in &cfg.masses_or_template() {
        let ctx = FunctionalContext::new(basis, m, phi)?;
        let every = grid_stride(cfg.template.step, cfg.thin);
        let runs: Vec<Result<(Vec<f64>, Vec<f64>, f64, f64)>> = cfg.ensemble(cfg.trajectories, |i| {
            let mut c = cfg.sim(m, i);
            c.stride = 1;
            let base = simulate(&c)?;
            let out = simulate_control(&c, &base, xi)?;
            let (mut ts, mut ps) = (Vec::new(), Vec::new());
            for (k, s) in out.rho.states.iter().enumerate().step_by(every) {
                ts.push(out.rho.times[k]);
                ps.push(psi1(s, &ctx));
            }
            Ok((ts, ps, out.cost, out.gain))
        });
        let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
        let times = runs[0].0.clone();
        let gain = runs[0].3;
        let means: Vec<Estimate> = (0..times.len())
            .map(|k| mean_ci(&runs.iter().map(|r| r.1[k]).collect::<Vec<_>>()))
            .collect();
        let (ts, es): (Vec<f64>, Vec<Estimate>) = times
            .iter()
            .zip(&means)
            .filter(|(t, _)| **t >= fit_window.0 - 1e-12 && **t <= fit_window.1 + 1e-12)
            .map(|(t, e)| (*t, *e))
            .unzip();
        let rate = rate_estimate(&ts, &es).unwrap_or(Estimate::new(f64::NAN, f64::NAN));
        let cost2 = mean_ci(&runs.iter().map(|r| r.2 * r.2).collect::<Vec<_>>());
        let mut s = Series::new(&format!("m{m}"), &["t", "mean_psi1", "half_width"]);
        for (t, e) in times.iter().zip(&means) {
            s.push(vec![*t, e.value, e.half_width]);
        }
        rep.series.push(s);
        let row = rep.row(m);
        row.insert("psi1_rate".into(), rate);
        row.insert("control_cost_second_moment".into(), cost2);
        if phi.is_zero() {
            let (modes, _) = low_mode_feedback(basis, phi)?;
            let slowest = basis
                .eigenvalues()
                .iter()
                .enumerate()
                .map(|(k, a)| linear_mode_rate(if k < modes { a + gain } else { *a }, m))
                .fold(f64::INFINITY, f64::min);
            let pred = 2.0 * slowest;
            let rel = (rate.value - pred).abs() / pred;
            rep.row(m).insert("linear_prediction".into(), Estimate::exact(pred));
            rep.check(
                &format!("linear_rate_m{m}"),
                rel <= cfg.tolerances.linear_rate_rel,
                format!("fitted {:.4} vs predicted {pred:.4}", rate.value),
            );
        }
        rep.check(
            &format!("finite_cost_m{m}"),
            cost2.value.is_finite(),
            format!("E cost^2 = {:.4e}", cost2.value),
        );
        rates.push((m, rate));
    }
    let values: Vec<f64> = rates.iter().map(|r| r.1.value).collect();
    let spread = relative_spread(&values);
    rep.fitted.insert("rate_spread".into(), Estimate::exact(spread));
    rep.check(
        "rates_positive",
        rates.iter().all(|(_, r)| r.value - r.half_width > 0.0),
        rates
            .iter()
            .map(|(m, r)| format!("m={m}: {:.4}±{:.4}", r.value, r.half_width))
            .collect::<Vec<_>>()
            .join(", "),
    );
    if !phi.is_zero() {
        rep.check(
            "rate_spread",
            spread < cfg.tolerances.spread,
            format!("(max - min) / max = {spread:.3} (allowed {})", cfg.tolerances.spread),
        );
    }
    Ok(rep)
}
