//! Time integration of the damped wave system (m > 0), the heat limit
//! (m = 0), the linear convolution and Langevin systems, the shifted system,
//! the tangent process and the controlled linearization.

pub mod generator;
pub mod propagator;

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{linf_norm, sobolev_norm, Basis, SpectralField};
use crate::error::{Error, Result};
use crate::functionals::{psi1_raw, psi2_raw, v_m_raw, FunctionalContext};
use crate::nonlinearity::{derivative_sup, integrate_potential, CutoffSpec, PhiSpec, Reaction};
use crate::noise::{NoiseSource, NoiseStream, QSpec};

pub use propagator::{HeatKernel, Kernels, PropagatorTable, WaveKernel};

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseState {
    pub u: SpectralField,
    pub v: SpectralField,
}

impl PhaseState {
    pub fn zeros(basis: &Arc<Basis>) -> Self {
        Self {
            u: SpectralField::zeros(basis),
            v: SpectralField::zeros(basis),
        }
    }

    pub fn from_coeffs(basis: &Arc<Basis>, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        Ok(Self {
            u: SpectralField::from_coeffs(basis, u)?,
            v: SpectralField::from_coeffs(basis, v)?,
        })
    }

    pub fn basis(&self) -> &Arc<Basis> {
        self.u.basis()
    }

    pub fn is_finite(&self) -> bool {
        self.u.coeffs().iter().chain(self.v.coeffs()).all(|x| x.is_finite())
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.u.coeffs_mut().iter_mut().for_each(|c| *c *= s);
        out.v.coeffs_mut().iter_mut().for_each(|c| *c *= s);
        out
    }

    /// self + s * other
    pub fn axpy(&self, s: f64, other: &Self) -> Self {
        let mut out = self.clone();
        for (a, b) in out.u.coeffs_mut().iter_mut().zip(other.u.coeffs()) {
            *a += s * b;
        }
        for (a, b) in out.v.coeffs_mut().iter_mut().zip(other.v.coeffs()) {
            *a += s * b;
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    ExponentialEuler,
    Strang,
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub basis: Arc<Basis>,
    pub phi: PhiSpec,
    pub cutoff: Option<CutoffSpec>,
    pub q: QSpec,
    pub mass: f64,
    pub step: f64,
    pub horizon: f64,
    pub stride: usize,
    pub scheme: Scheme,
    pub initial: PhaseState,
    pub seed: u64,
    pub trajectory: u64,
}

impl SimConfig {
    /// Zero initial state, stride 1, exponential Euler, seed 0.
    pub fn new(basis: &Arc<Basis>, phi: PhiSpec, q: QSpec, mass: f64, step: f64, horizon: f64) -> Self {
        Self {
            basis: Arc::clone(basis),
            phi,
            cutoff: None,
            q,
            mass,
            step,
            horizon,
            stride: 1,
            scheme: Scheme::ExponentialEuler,
            initial: PhaseState::zeros(basis),
            seed: 0,
            trajectory: 0,
        }
    }

    pub fn reaction(&self) -> Reaction {
        match self.cutoff {
            Some(c) => Reaction::Truncated(self.phi.truncate(c)),
            None => Reaction::Plain(self.phi.clone()),
        }
    }

    pub fn steps(&self) -> Result<usize> {
        let bad = Error::InvalidStep {
            step: self.step,
            horizon: self.horizon,
        };
        if !(self.step.is_finite() && self.step > 0.0 && self.horizon.is_finite() && self.horizon >= 0.0) {
            return Err(bad);
        }
        if self.horizon > 0.0 && self.step > self.horizon * (1.0 + 1e-12) {
            return Err(bad);
        }
        if self.stride == 0 {
            return Err(Error::InvalidArgument("record stride must be at least 1".into()));
        }
        Ok((self.horizon / self.step).round() as usize)
    }

    pub fn model(&self) -> Result<Model> {
        if !(self.mass.is_finite() && self.mass >= 0.0) {
            return Err(Error::InvalidMass(self.mass));
        }
        if self.initial.u.coeffs().len() != self.basis.len() {
            return Err(Error::SizeMismatch {
                expected: self.basis.len(),
                got: self.initial.u.coeffs().len(),
            });
        }
        let q = self.q.coefficients(&self.basis)?;
        Model::new(&self.basis, self.reaction(), q, self.mass, self.step, self.scheme)
    }

    pub fn stream(&self) -> NoiseStream {
        NoiseStream::new(self.seed, self.trajectory)
    }
}

/// Everything needed to advance one system by one step, shareable across
/// threads.
#[derive(Clone, Debug)]
pub struct Model {
    basis: Arc<Basis>,
    reaction: Reaction,
    q: Vec<f64>,
    table: PropagatorTable,
    scheme: Scheme,
    /// Coefficient c of a linear reaction c x carried by the table instead of the forcing.
    shift: f64,
}

impl Model {
    pub fn new(
        basis: &Arc<Basis>,
        reaction: Reaction,
        q: Vec<f64>,
        mass: f64,
        step: f64,
        scheme: Scheme,
    ) -> Result<Self> {
        // a linear reaction is integrated exactly when every shifted mode stays stable
        let shift = match &reaction {
            Reaction::Plain(phi) if phi.is_linear() && !phi.is_zero() => {
                let c = phi.eval(1.0);
                if basis.eigenvalues().iter().all(|a| a - c > 0.0) {
                    c
                } else {
                    0.0
                }
            }
            _ => 0.0,
        };
        let stiffness: Vec<f64> = basis.eigenvalues().iter().map(|a| a - shift).collect();
        let table = PropagatorTable::build(&stiffness, &q, mass, step)?;
        Ok(Self {
            basis: Arc::clone(basis),
            reaction,
            q,
            table,
            scheme,
            shift,
        })
    }

    /// m dv = -v dt + Q dW, du = v dt.
    pub fn langevin(basis: &Arc<Basis>, q: Vec<f64>, mass: f64, step: f64) -> Result<Self> {
        if mass == 0.0 {
            return Err(Error::ZeroMass);
        }
        let zero = vec![0.0; basis.len()];
        let table = PropagatorTable::build(&zero, &q, mass, step)?;
        Ok(Self {
            basis: Arc::clone(basis),
            reaction: Reaction::Plain(PhiSpec::zero()),
            q,
            table,
            scheme: Scheme::ExponentialEuler,
            shift: 0.0,
        })
    }

    /// Same linear part and noise, no reaction term.
    pub fn linear_part(&self) -> Self {
        let table = if self.shift == 0.0 {
            self.table.clone()
        } else {
            PropagatorTable::build(self.basis.eigenvalues(), &self.q, self.mass(), self.step())
                .expect("table was built from the same parameters")
        };
        Self {
            reaction: Reaction::Plain(PhiSpec::zero()),
            table,
            shift: 0.0,
            ..self.clone()
        }
    }

    pub fn basis(&self) -> &Arc<Basis> {
        &self.basis
    }

    pub fn reaction(&self) -> &Reaction {
        &self.reaction
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn mass(&self) -> f64 {
        self.table.mass
    }

    pub fn step(&self) -> f64 {
        self.table.step
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn table(&self) -> &PropagatorTable {
        &self.table
    }

    pub fn integrator(&self) -> Integrator<'_> {
        Integrator::new(self)
    }

    /// Index n-bar and gain alpha_{n-bar} of the low-mode feedback.
    pub fn low_mode_feedback(&self) -> Result<(usize, f64)> {
        low_mode_feedback(&self.basis, self.reaction.phi())
    }
}

pub fn low_mode_feedback(basis: &Basis, phi: &PhiSpec) -> Result<(usize, f64)> {
    let a_phi = derivative_sup(phi)?;
    let n = basis
        .first_index_above(a_phi)
        .ok_or(Error::InsufficientModes { a_phi })?;
    Ok((n, basis.eigenvalues()[n - 1]))
}

/// Forcing entering m dv (or du when m = 0) besides the linear part.
#[derive(Clone, Copy, Debug)]
pub enum Drive<'b> {
    None,
    Reaction,
    /// reaction minus gain * (u - target) on the first `modes` modes
    Shifted {
        target: &'b [f64],
        gain: f64,
        modes: usize,
    },
    /// phi'(base) applied to the state
    Linearized { base_u: &'b [f64], base_v: &'b [f64] },
    /// linearization minus gain * u on the first `modes` modes
    Controlled {
        base_u: &'b [f64],
        base_v: &'b [f64],
        gain: f64,
        modes: usize,
    },
}

pub struct Integrator<'a> {
    model: &'a Model,
    grid: Vec<f64>,
    grid_b: Vec<f64>,
    f: Vec<f64>,
    hu: Vec<f64>,
    hv: Vec<f64>,
}

impl<'a> Integrator<'a> {
    pub fn new(model: &'a Model) -> Self {
        let n = model.basis.len();
        Self {
            model,
            grid: Vec::new(),
            grid_b: Vec::new(),
            f: vec![0.0; n],
            hu: vec![0.0; n],
            hv: vec![0.0; n],
        }
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    fn reaction_coeffs(&mut self, u: &[f64]) {
        let b = &self.model.basis;
        b.padded_values(u, &mut self.grid);
        let r = &self.model.reaction;
        self.grid.iter_mut().for_each(|x| *x = r.eval(*x));
        b.padded_project(&self.grid, &mut self.f);
    }

    fn linearized_coeffs(&mut self, base: &[f64], du: &[f64]) {
        let b = &self.model.basis;
        b.padded_values(base, &mut self.grid_b);
        b.padded_values(du, &mut self.grid);
        let r = &self.model.reaction;
        for (g, &x) in self.grid.iter_mut().zip(&self.grid_b) {
            *g *= r.eval_deriv(x);
        }
        b.padded_project(&self.grid, &mut self.f);
    }

    /// Returns false when the drive contributes nothing.
    fn forcing(&mut self, drive: &Drive, u: &[f64], base_u: Option<&[f64]>) -> bool {
        match *drive {
            Drive::None => return false,
            Drive::Reaction => {
                if self.model.reaction.is_zero() || self.model.shift != 0.0 {
                    return false;
                }
                self.reaction_coeffs(u);
            }
            Drive::Shifted { target, gain, modes } => {
                if self.model.reaction.is_zero() || self.model.shift != 0.0 {
                    self.f.iter_mut().for_each(|x| *x = 0.0);
                } else {
                    self.reaction_coeffs(u);
                }
                for k in 0..modes {
                    self.f[k] -= gain * (u[k] - target[k]);
                }
            }
            Drive::Linearized { base_u: b, .. } => {
                if self.model.shift != 0.0 {
                    return false;
                }
                self.linearized_coeffs(base_u.unwrap_or(b), u);
            }
            Drive::Controlled {
                base_u: b,
                gain,
                modes,
                ..
            } => {
                if self.model.shift != 0.0 {
                    self.f.iter_mut().for_each(|x| *x = 0.0);
                } else {
                    self.linearized_coeffs(base_u.unwrap_or(b), u);
                }
                for k in 0..modes {
                    self.f[k] -= gain * u[k];
                }
            }
        }
        true
    }

    /// One step of the configured scheme. `z` holds four standard normals
    /// per mode, or `None` for a noiseless step.
    pub fn step(&mut self, u: &mut [f64], v: &mut [f64], drive: &Drive, z: Option<&[[f64; 4]]>) {
        let table = &self.model.table;
        match self.model.scheme {
            Scheme::ExponentialEuler => {
                let forced = self.forcing(drive, u, None);
                let f = if forced { Some(&self.f[..]) } else { None };
                full_step(table, u, v, f, z);
            }
            Scheme::Strang => {
                half_step(table, u, v);
                let base_half = match *drive {
                    Drive::Linearized { base_u, base_v } | Drive::Controlled { base_u, base_v, .. } => {
                        self.hu.copy_from_slice(base_u);
                        self.hv.copy_from_slice(base_v);
                        half_step(table, &mut self.hu, &mut self.hv);
                        true
                    }
                    _ => false,
                };
                let hu = std::mem::take(&mut self.hu);
                let forced = self.forcing(drive, u, if base_half { Some(&hu) } else { None });
                self.hu = hu;
                if forced {
                    kick(table, u, v, &self.f);
                }
                half_step(table, u, v);
                if let Some(z) = z {
                    add_noise(table, u, v, z);
                }
            }
        }
    }
}

fn full_step(table: &PropagatorTable, u: &mut [f64], v: &mut [f64], f: Option<&[f64]>, z: Option<&[[f64; 4]]>) {
    match &table.kernels {
        Kernels::Wave(ks) => {
            for (k, kk) in ks.iter().enumerate() {
                let (x, y) = (u[k], v[k]);
                let mut nu = kk.e[0][0] * x + kk.e[0][1] * y;
                let mut nv = kk.e[1][0] * x + kk.e[1][1] * y;
                if let Some(f) = f {
                    nu += kk.force[0] * f[k];
                    nv += kk.force[1] * f[k];
                }
                if let Some(z) = z {
                    let z = &z[k];
                    nu += kk.noise[0][0] * z[0] + kk.noise[0][1] * z[1] + kk.noise[0][2] * z[2];
                    nv += kk.noise[1][0] * z[0] + kk.noise[1][1] * z[1] + kk.noise[1][2] * z[2] + kk.noise[1][3] * z[3];
                }
                u[k] = nu;
                v[k] = nv;
            }
        }
        Kernels::Heat(ks) => {
            for (k, kk) in ks.iter().enumerate() {
                let mut nu = kk.e * u[k];
                if let Some(f) = f {
                    nu += kk.force * f[k];
                }
                if let Some(z) = z {
                    let z = &z[k];
                    nu += kk.noise[0] * z[0] + kk.noise[1] * z[1] + kk.noise[2] * z[2];
                }
                u[k] = nu;
            }
        }
    }
}

fn half_step(table: &PropagatorTable, u: &mut [f64], v: &mut [f64]) {
    match &table.kernels {
        Kernels::Wave(ks) => {
            for (k, kk) in ks.iter().enumerate() {
                let (x, y) = (u[k], v[k]);
                u[k] = kk.e_half[0][0] * x + kk.e_half[0][1] * y;
                v[k] = kk.e_half[1][0] * x + kk.e_half[1][1] * y;
            }
        }
        Kernels::Heat(ks) => {
            for (k, kk) in ks.iter().enumerate() {
                u[k] *= kk.e_half;
            }
        }
    }
}

fn kick(table: &PropagatorTable, u: &mut [f64], v: &mut [f64], f: &[f64]) {
    match &table.kernels {
        Kernels::Wave(ks) => {
            for (k, kk) in ks.iter().enumerate() {
                u[k] += kk.kick[0] * f[k];
                v[k] += kk.kick[1] * f[k];
            }
        }
        Kernels::Heat(ks) => {
            for (k, kk) in ks.iter().enumerate() {
                u[k] += kk.kick * f[k];
            }
        }
    }
}

fn add_noise(table: &PropagatorTable, u: &mut [f64], v: &mut [f64], z: &[[f64; 4]]) {
    match &table.kernels {
        Kernels::Wave(ks) => {
            for (k, kk) in ks.iter().enumerate() {
                let z = &z[k];
                u[k] += kk.noise[0][0] * z[0] + kk.noise[0][1] * z[1] + kk.noise[0][2] * z[2];
                v[k] += kk.noise[1][0] * z[0] + kk.noise[1][1] * z[1] + kk.noise[1][2] * z[2] + kk.noise[1][3] * z[3];
            }
        }
        Kernels::Heat(ks) => {
            for (k, kk) in ks.iter().enumerate() {
                let z = &z[k];
                u[k] += kk.noise[0] * z[0] + kk.noise[1] * z[1] + kk.noise[2] * z[2];
            }
        }
    }
}

fn all_finite(u: &[f64], v: &[f64]) -> bool {
    u.iter().chain(v).all(|x| x.is_finite())
}

/// Recorded states of one run.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub basis: Arc<Basis>,
    pub mass: f64,
    pub step: f64,
    pub stride: usize,
    pub times: Vec<f64>,
    pub states: Vec<PhaseState>,
}

impl Trajectory {
    fn new(model: &Model, stride: usize) -> Self {
        Self {
            basis: Arc::clone(&model.basis),
            mass: model.mass(),
            step: model.step(),
            stride,
            times: Vec::new(),
            states: Vec::new(),
        }
    }

    fn record(&mut self, t: f64, u: &[f64], v: &[f64]) {
        self.times.push(t);
        self.states.push(PhaseState {
            u: SpectralField::from_coeffs(&self.basis, u.to_vec()).expect("basis size"),
            v: SpectralField::from_coeffs(&self.basis, v.to_vec()).expect("basis size"),
        });
    }

    pub fn final_state(&self) -> &PhaseState {
        self.states.last().expect("trajectory records the initial state")
    }

    pub fn rows(&self, ctx: &FunctionalContext) -> Vec<TrajectoryRow> {
        self.times
            .iter()
            .zip(&self.states)
            .map(|(&t, s)| TrajectoryRow::new(t, s, ctx))
            .collect()
    }

    /// CSV with one row per recorded state.
    pub fn write_csv<W: Write>(&self, ctx: &FunctionalContext, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "{}", TrajectoryRow::HEADER)?;
        for r in self.rows(ctx) {
            writeln!(out, "{}", r.csv())?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub u_h: f64,
    pub u_h1: f64,
    pub u_h2: f64,
    pub v_h: f64,
    pub psi1: f64,
    pub psi2: f64,
    pub v_m: f64,
    pub phi1_l1: f64,
    pub u_linf: f64,
}

impl TrajectoryRow {
    pub const HEADER: &'static str = "t,u_H,u_H1,u_H2,v_H,psi1,psi2,V_m,Phi1_L1,u_Linf";

    pub fn new(t: f64, s: &PhaseState, ctx: &FunctionalContext) -> Self {
        let ev = ctx.basis.eigenvalues();
        let (u, v) = (s.u.coeffs(), s.v.coeffs());
        let m = ctx.mass;
        Self {
            t,
            u_h: sobolev_norm(ev, u, 0.0),
            u_h1: sobolev_norm(ev, u, 1.0),
            u_h2: sobolev_norm(ev, u, 2.0),
            v_h: if m > 0.0 { sobolev_norm(ev, v, 0.0) } else { 0.0 },
            psi1: psi1_raw(ev, m, u, v),
            psi2: psi2_raw(ev, m, u, v),
            v_m: v_m_raw(&ctx.basis, ctx.lambda, m, u, v),
            phi1_l1: integrate_potential(&ctx.basis, u, &ctx.phi1),
            u_linf: linf_norm(&ctx.basis, u),
        }
    }

    pub fn csv(&self) -> String {
        [
            self.t, self.u_h, self.u_h1, self.u_h2, self.v_h, self.psi1, self.psi2, self.v_m, self.phi1_l1, self.u_linf,
        ]
        .iter()
        .map(|x| format_f64(*x))
        .collect::<Vec<_>>()
        .join(",")
    }
}

/// 17 significant digits, round-trip exact.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Generic driver: records the initial state and every `stride`-th step.
pub fn run<'b>(
    model: &Model,
    initial: (&[f64], &[f64]),
    n_steps: usize,
    stride: usize,
    mut noise: Option<&mut dyn NoiseSource>,
    mut drive: impl FnMut(usize) -> Drive<'b>,
) -> Result<Trajectory> {
    let n = model.basis.len();
    let h = model.step();
    let mut integ = model.integrator();
    let mut u = initial.0.to_vec();
    let mut v = initial.1.to_vec();
    let mut prev_u = u.clone();
    let mut prev_v = v.clone();
    let mut z = vec![[0.0; 4]; n];
    let mut traj = Trajectory::new(model, stride);
    traj.record(0.0, &u, &v);
    for step in 0..n_steps {
        prev_u.copy_from_slice(&u);
        prev_v.copy_from_slice(&v);
        let zs = match noise.as_deref_mut() {
            Some(src) => {
                src.standard_normals(step as u64, &mut z);
                Some(&z[..])
            }
            None => None,
        };
        let d = drive(step);
        integ.step(&mut u, &mut v, &d, zs);
        if !all_finite(&u, &v) {
            return Err(Error::BlowUp {
                step: step + 1,
                time: (step + 1) as f64 * h,
                last_finite: Box::new(PhaseState::from_coeffs(&model.basis, prev_u, prev_v)?),
            });
        }
        if (step + 1) % stride == 0 {
            traj.record((step + 1) as f64 * h, &u, &v);
        }
    }
    Ok(traj)
}

pub fn simulate(cfg: &SimConfig) -> Result<Trajectory> {
    let n = cfg.steps()?;
    let model = cfg.model()?;
    let mut stream = cfg.stream();
    run(
        &model,
        (cfg.initial.u.coeffs(), cfg.initial.v.coeffs()),
        n,
        cfg.stride,
        Some(&mut stream),
        |_| Drive::Reaction,
    )
}

/// Same as [`simulate`] with an arbitrary noise source.
pub fn simulate_with(cfg: &SimConfig, noise: &mut dyn NoiseSource) -> Result<Trajectory> {
    let n = cfg.steps()?;
    let model = cfg.model()?;
    run(
        &model,
        (cfg.initial.u.coeffs(), cfg.initial.v.coeffs()),
        n,
        cfg.stride,
        Some(noise),
        |_| Drive::Reaction,
    )
}

/// Linear stochastic convolution: the reaction term is dropped.
pub fn simulate_convolution(cfg: &SimConfig) -> Result<Trajectory> {
    let n = cfg.steps()?;
    let model = cfg.model()?.linear_part();
    let mut stream = cfg.stream();
    run(
        &model,
        (cfg.initial.u.coeffs(), cfg.initial.v.coeffs()),
        n,
        cfg.stride,
        Some(&mut stream),
        |_| Drive::None,
    )
}

pub fn simulate_langevin(cfg: &SimConfig) -> Result<Trajectory> {
    let n = cfg.steps()?;
    let q = cfg.q.coefficients(&cfg.basis)?;
    let model = Model::langevin(&cfg.basis, q, cfg.mass, cfg.step)?;
    let mut stream = cfg.stream();
    run(
        &model,
        (cfg.initial.u.coeffs(), cfg.initial.v.coeffs()),
        n,
        cfg.stride,
        Some(&mut stream),
        |_| Drive::None,
    )
}

/// Shifted system and its driving convolution, both on the same noise.
/// `gain` overrides alpha_{n-bar}.
pub fn simulate_shifted(cfg: &SimConfig, gain: Option<f64>) -> Result<(Trajectory, Trajectory)> {
    let n_steps = cfg.steps()?;
    let model = cfg.model()?;
    let (modes, default_gain) = model.low_mode_feedback()?;
    let gain = gain.unwrap_or(default_gain);
    let lin = model.linear_part();
    let n = cfg.basis.len();
    let mut integ = model.integrator();
    let mut integ_g = lin.integrator();
    let mut stream = cfg.stream();
    let mut z = vec![[0.0; 4]; n];
    let (mut u, mut v) = (cfg.initial.u.coeffs().to_vec(), cfg.initial.v.coeffs().to_vec());
    let (mut gu, mut gv) = (vec![0.0; n], vec![0.0; n]);
    let mut shifted = Trajectory::new(&model, cfg.stride);
    let mut gamma = Trajectory::new(&lin, cfg.stride);
    shifted.record(0.0, &u, &v);
    gamma.record(0.0, &gu, &gv);
    let h = cfg.step;
    for step in 0..n_steps {
        let prev = PhaseState::from_coeffs(&cfg.basis, u.clone(), v.clone())?;
        stream.standard_normals(step as u64, &mut z);
        let drive = Drive::Shifted {
            target: &gu,
            gain,
            modes,
        };
        integ.step(&mut u, &mut v, &drive, Some(&z));
        integ_g.step(&mut gu, &mut gv, &Drive::None, Some(&z));
        if !all_finite(&u, &v) {
            return Err(Error::BlowUp {
                step: step + 1,
                time: (step + 1) as f64 * h,
                last_finite: Box::new(prev),
            });
        }
        if (step + 1) % cfg.stride == 0 {
            let t = (step + 1) as f64 * h;
            shifted.record(t, &u, &v);
            gamma.record(t, &gu, &gv);
        }
    }
    Ok((shifted, gamma))
}

fn require_dense(base: &Trajectory) -> Result<()> {
    if base.stride != 1 {
        return Err(Error::RecordStrideTooCoarse { stride: base.stride });
    }
    Ok(())
}

/// Derivative of the discrete flow along `base` in direction `xi`.
pub fn simulate_tangent(cfg: &SimConfig, base: &Trajectory, xi: &PhaseState) -> Result<Trajectory> {
    require_dense(base)?;
    let model = cfg.model()?;
    let n_steps = base.states.len() - 1;
    run(
        &model,
        (xi.u.coeffs(), xi.v.coeffs()),
        n_steps,
        1,
        None,
        |step| {
            let s = &base.states[step];
            Drive::Linearized {
                base_u: s.u.coeffs(),
                base_v: s.v.coeffs(),
            }
        },
    )
}

#[derive(Clone, Debug)]
pub struct ControlTrajectory {
    pub rho: Trajectory,
    /// int |zeta|^2 dt with zeta = gain Q^{-1} P rho_1
    pub cost: f64,
    /// int |Q zeta|^2 dt, the second moment of the stochastic integral
    pub isometry_cost: f64,
    pub modes: usize,
    pub gain: f64,
}

/// Linearization with low-mode feedback, started from `xi`.
pub fn simulate_control(cfg: &SimConfig, base: &Trajectory, xi: &PhaseState) -> Result<ControlTrajectory> {
    require_dense(base)?;
    let model = cfg.model()?;
    let (modes, gain) = model.low_mode_feedback()?;
    let q = model.q();
    if let Some(k) = q[..modes].iter().position(|&x| x == 0.0) {
        return Err(Error::DegenerateLowMode { index: k + 1 });
    }
    let n_steps = base.states.len() - 1;
    let h = cfg.step;
    let rho = run(
        &model,
        (xi.u.coeffs(), xi.v.coeffs()),
        n_steps,
        1,
        None,
        |step| {
            let s = &base.states[step];
            Drive::Controlled {
                base_u: s.u.coeffs(),
                base_v: s.v.coeffs(),
                gain,
                modes,
            }
        },
    )?;
    let mut cost = 0.0;
    let mut iso = 0.0;
    for s in &rho.states[..n_steps] {
        let r = s.u.coeffs();
        for k in 0..modes {
            cost += h * (gain * r[k] / q[k]).powi(2);
            iso += h * (gain * r[k]).powi(2);
        }
    }
    Ok(ControlTrajectory {
        rho,
        cost,
        isometry_cost: iso,
        modes,
        gain,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GronwallAudit {
    pub checked: usize,
    pub violations: usize,
    /// largest rate c for which the bound holds at every recorded step
    pub max_rate: f64,
}

/// Checks Psi_1(rho(t_n)) <= slack Psi_1(rho(0)) exp(sum_{j<n} (-c + eb |u_j|_{H^1}^2) h)
/// along a dense base trajectory.
pub fn gronwall_audit(base: &Trajectory, rho: &Trajectory, c: f64, eps_beta: f64, slack: f64) -> GronwallAudit {
    let ev = base.basis.eigenvalues();
    let m = rho.mass;
    let h = base.step;
    let psi = |s: &PhaseState| psi1_raw(ev, m, s.u.coeffs(), s.v.coeffs());
    let p0 = psi(&rho.states[0]);
    let mut growth = 0.0;
    let mut violations = 0;
    let mut max_rate = f64::INFINITY;
    let n = rho.states.len().min(base.states.len());
    for i in 1..n {
        let u = base.states[i - 1].u.coeffs();
        growth += eps_beta * crate::domain::sobolev_sq(ev, u, 1.0) * h;
        let t = i as f64 * h;
        let pi = psi(&rho.states[i]);
        let bound = slack * p0 * (growth - c * t).exp();
        if pi > bound {
            violations += 1;
        }
        if pi > 0.0 {
            max_rate = max_rate.min(((slack * p0).ln() - pi.ln() + growth) / t);
        }
    }
    GronwallAudit {
        checked: n.saturating_sub(1),
        violations,
        max_rate,
    }
}

#[cfg(test)]
mod tests;
