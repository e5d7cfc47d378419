//! Diagonal noise operator and reproducible Gaussian streams.
//!
//! Each (seed, trajectory, lane) triple keys a ChaCha8 stream. Step `n` of a
//! run with `K` modes reads the 32-bit words starting at `8 K n`, so a given
//! (step, mode) always produces the same four standard normals regardless of
//! what was drawn before. Normals come from Box-Muller on 53-bit uniforms.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Basis, SpectralField};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum QSpec {
    /// Leading coefficients; modes past the list are unforced.
    Explicit(Vec<f64>),
    /// q_k = sigma (1 + alpha_k)^{-gamma}
    Decay { sigma: f64, gamma: f64 },
}

impl QSpec {
    pub fn coefficients(&self, basis: &Basis) -> Result<Vec<f64>> {
        match self {
            QSpec::Explicit(list) => {
                if list.len() > basis.len() {
                    return Err(Error::InvalidNoise(format!(
                        "{} coefficients for {} modes",
                        list.len(),
                        basis.len()
                    )));
                }
                if let Some(q) = list.iter().find(|q| !(q.is_finite() && **q >= 0.0)) {
                    return Err(Error::InvalidNoise(format!("coefficient {q} must be >= 0")));
                }
                let mut q = list.clone();
                q.resize(basis.len(), 0.0);
                Ok(q)
            }
            QSpec::Decay { sigma, gamma } => {
                if !(sigma.is_finite() && *sigma >= 0.0 && gamma.is_finite()) {
                    return Err(Error::InvalidNoise(format!(
                        "decay parameters sigma = {sigma}, gamma = {gamma}"
                    )));
                }
                Ok(basis
                    .eigenvalues()
                    .iter()
                    .map(|a| sigma * (1.0 + a).powf(-gamma))
                    .collect())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QReport {
    pub n_bar: usize,
    pub a_q: f64,
    pub t0: f64,
    pub t1: f64,
    pub t3: f64,
}

/// T_r = sum_k q_k^2 alpha_k^r
pub fn trace_moment(q: &[f64], eigenvalues: &[f64], r: i32) -> f64 {
    q.iter()
        .zip(eigenvalues)
        .map(|(q, a)| q * q * a.powi(r))
        .sum()
}

/// Checks that every mode up to n-bar is forced and that the third trace
/// moment converges in the continuum limit for parametric decay.
pub fn validate_q(q: &QSpec, a_phi: f64, basis: &Basis) -> Result<QReport> {
    let coeffs = q.coefficients(basis)?;
    let n_bar = basis
        .first_index_above(a_phi)
        .ok_or(Error::InsufficientModes { a_phi })?;
    if let Some(k) = coeffs[..n_bar].iter().position(|&q| q == 0.0) {
        return Err(Error::DegenerateLowMode { index: k + 1 });
    }
    if let QSpec::Decay { gamma, .. } = q {
        let d = basis.domain().dimension() as f64;
        if (2.0 / d) * (3.0 - 2.0 * gamma) >= -1.0 {
            return Err(Error::TraceDivergent { name: "Tr(Q A^3 Q*)" });
        }
    }
    let a_q = coeffs[..n_bar].iter().copied().fold(f64::INFINITY, f64::min);
    let ev = basis.eigenvalues();
    Ok(QReport {
        n_bar,
        a_q,
        t0: trace_moment(&coeffs, ev, 0),
        t1: trace_moment(&coeffs, ev, 1),
        t3: trace_moment(&coeffs, ev, 3),
    })
}

pub fn apply_q(q: &[f64], field: &SpectralField) -> SpectralField {
    let mut out = field.clone();
    out.coeffs_mut()
        .iter_mut()
        .zip(q)
        .for_each(|(c, q)| *c *= q);
    out
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Four standard normals per mode and step: the first two drive the
/// increment and its first time moment, the last two the residual.
pub trait NoiseSource {
    fn standard_normals(&mut self, step: u64, out: &mut [[f64; 4]]);
}

#[derive(Clone, Debug)]
pub struct NoiseStream {
    seed: u64,
    trajectory: u64,
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(seed: u64, trajectory: u64) -> Self {
        Self::lane(seed, trajectory, 0)
    }

    /// Independent auxiliary stream for the same trajectory.
    pub fn lane(seed: u64, trajectory: u64, lane: u64) -> Self {
        let mut state = splitmix(seed) ^ splitmix(trajectory ^ 0xA076_1D64_78BD_642F).rotate_left(17)
            ^ splitmix(lane ^ 0xE703_7ED1_A0B4_28DB).rotate_left(41);
        let mut key = [0u8; 32];
        for chunk in key.chunks_mut(8) {
            state = splitmix(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        Self {
            seed,
            trajectory,
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn trajectory(&self) -> u64 {
        self.trajectory
    }

    #[inline]
    fn uniform_open(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    fn normal_pair(&mut self) -> (f64, f64) {
        let u1 = self.uniform_open();
        let u2 = self.uniform_open();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        (r * c, r * s)
    }

    /// `n` standard normals drawn sequentially from the current position.
    pub fn normals(&mut self, n: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(n + 1);
        while out.len() < n {
            let (a, b) = self.normal_pair();
            out.push(a);
            out.push(b);
        }
        out.truncate(n);
        out
    }

    /// N(0, h) increments for the first `n_modes` modes at `step`.
    pub fn sample_increments(&mut self, step: u64, h: f64, n_modes: usize) -> Vec<f64> {
        let mut z = vec![[0.0; 4]; n_modes];
        self.standard_normals(step, &mut z);
        let s = h.sqrt();
        z.iter().map(|z| s * z[0]).collect()
    }
}

impl NoiseSource for NoiseStream {
    fn standard_normals(&mut self, step: u64, out: &mut [[f64; 4]]) {
        self.rng
            .set_word_pos(8 * out.len() as u128 * step as u128);
        for z in out.iter_mut() {
            let (a, b) = self.normal_pair();
            let (c, d) = self.normal_pair();
            *z = [a, b, c, d];
        }
    }
}

/// No noise at all.
#[derive(Clone, Copy, Debug, Default)]
pub struct Silent;

impl NoiseSource for Silent {
    fn standard_normals(&mut self, _step: u64, out: &mut [[f64; 4]]) {
        out.iter_mut().for_each(|z| *z = [0.0; 4]);
    }
}

/// Coarse-step view of a fine stream: the increment and its first time
/// moment are aggregated exactly from `2^level` fine steps; the residual
/// normals come from an independent lane.
#[derive(Clone, Debug)]
pub struct CoarsenedStream {
    fine: NoiseStream,
    residual: NoiseStream,
    level: u32,
    buf: Vec<[f64; 4]>,
    acc: Vec<(f64, f64)>,
}

impl CoarsenedStream {
    pub fn new(seed: u64, trajectory: u64, level: u32) -> Self {
        Self {
            fine: NoiseStream::new(seed, trajectory),
            residual: NoiseStream::lane(seed, trajectory, 1 + level as u64),
            level,
            buf: Vec::new(),
            acc: Vec::new(),
        }
    }
}

impl NoiseSource for CoarsenedStream {
    fn standard_normals(&mut self, step: u64, out: &mut [[f64; 4]]) {
        if self.level == 0 {
            self.fine.standard_normals(step, out);
            return;
        }
        let n = out.len();
        let factor = 1u64 << self.level;
        self.buf.resize(n, [0.0; 4]);
        // work in units where the fine step is 1: dW = z1, I = z2 / sqrt(12)
        let mut blocks: Vec<Vec<(f64, f64)>> = Vec::with_capacity(factor as usize);
        for j in 0..factor {
            self.fine.standard_normals(step * factor + j, &mut self.buf);
            blocks.push(
                self.buf
                    .iter()
                    .map(|z| (z[0], z[1] / 12f64.sqrt()))
                    .collect(),
            );
        }
        let mut tau = 1.0;
        while blocks.len() > 1 {
            blocks = blocks
                .chunks(2)
                .map(|pair| {
                    pair[0]
                        .iter()
                        .zip(&pair[1])
                        .map(|(&(w1, i1), &(w2, i2))| (w1 + w2, i1 + i2 + 0.5 * tau * (w2 - w1)))
                        .collect()
                })
                .collect();
            tau *= 2.0;
        }
        self.acc = blocks.pop().expect("one block");
        self.residual.standard_normals(step, &mut self.buf);
        let big = factor as f64;
        let sw = big.sqrt();
        let si = (big * big * big / 12.0).sqrt();
        for ((z, &(w, i)), r) in out.iter_mut().zip(&self.acc).zip(&self.buf) {
            *z = [w / sw, i / si, r[2], r[3]];
        }
    }
}
