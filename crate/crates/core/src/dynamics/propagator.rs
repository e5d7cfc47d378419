//! Exact per-mode linear propagators.
//!
//! For m > 0 each mode solves dX = M X dt + F dt + b dW with
//! M = [[0, 1], [-a/m, -1/m]] and b = (0, q/m). The exponential uses the
//! closed form in the eigenvalues mu_-, mu_+; the integrals
//! P1(h) = int_0^h e^{Ms} ds, P2(h) = int_0^h s e^{Ms} ds and the noise
//! covariance Sigma(h) = int_0^h e^{Ms} b b^T e^{M^T s} ds are obtained by
//! a Taylor series on h / 2^k followed by k doublings.
//!
//! The noise is split as xi = a1 z1 + a2 z2 + L (z3, z4): z1 and z2 are the
//! standardized Wiener increment and its first time moment over the step,
//! a1 and a2 the exact regression of xi on them, L the Cholesky factor of
//! the remaining covariance. This keeps xi exact in law at every h while
//! letting different step sizes share one Brownian path.

use crate::error::{Error, Result};

pub type Mat2 = [[f64; 2]; 2];

const I2: Mat2 = [[1.0, 0.0], [0.0, 1.0]];

fn mul(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

fn add(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [a[0][0] + b[0][0], a[0][1] + b[0][1]],
        [a[1][0] + b[1][0], a[1][1] + b[1][1]],
    ]
}

fn scale(a: &Mat2, s: f64) -> Mat2 {
    [[a[0][0] * s, a[0][1] * s], [a[1][0] * s, a[1][1] * s]]
}

fn transpose(a: &Mat2) -> Mat2 {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

fn norm(a: &Mat2) -> f64 {
    a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
}

/// e^{Mt} for M = [[0, 1], [-a/m, -1/m]].
pub fn wave_exponential(alpha: f64, m: f64, t: f64) -> Mat2 {
    let sigma = -0.5 / m;
    // discriminant of the characteristic polynomial, scaled: delta^2
    let disc = (1.0 - 4.0 * m * alpha) / (4.0 * m * m);
    let x = disc * t * t;
    if x.abs() < 1e-2 {
        // cosh and sinhc in the signed variable x = delta^2 t^2
        let (mut c, mut s, mut term_c, mut term_s) = (1.0, 1.0, 1.0, 1.0);
        for n in 1..10 {
            let nf = n as f64;
            term_c *= x / ((2.0 * nf - 1.0) * (2.0 * nf));
            term_s *= x / ((2.0 * nf) * (2.0 * nf + 1.0));
            c += term_c;
            s += term_s;
        }
        let g = (sigma * t).exp();
        let (c, s) = (g * c, g * t * s);
        return [
            [c - sigma * s, s],
            [-alpha / m * s, c + (-1.0 / m - sigma) * s],
        ];
    }
    if disc > 0.0 {
        let root = (1.0 - 4.0 * m * alpha).sqrt();
        let mu_p = -2.0 * alpha / (1.0 + root);
        let mu_m = -1.0 / m - mu_p;
        let gap = mu_p - mu_m;
        let ep = (mu_p * t).exp();
        let em = (mu_m * t).exp();
        // (e^{mu+ t} - e^{mu- t}) / gap without cancellation
        let s = -ep * (-gap * t).exp_m1() / gap;
        [
            [(-mu_m * ep + mu_p * em) / gap, s],
            [-alpha / m * s, (mu_p * ep - mu_m * em) / gap],
        ]
    } else {
        let omega = (-disc).sqrt();
        let g = (sigma * t).exp();
        let c = g * (omega * t).cos();
        let s = g * (omega * t).sin() / omega;
        [
            [c - sigma * s, s],
            [-alpha / m * s, c + (-1.0 / m - sigma) * s],
        ]
    }
}

/// Integrals P1, P2, Sigma over [0, h] (Sigma for b = (0, 1)).
#[derive(Clone, Copy, Debug)]
pub struct WaveIntegrals {
    pub e: Mat2,
    pub p1: Mat2,
    pub p2: Mat2,
    pub sigma: Mat2,
}

pub fn wave_integrals(alpha: f64, m: f64, h: f64) -> WaveIntegrals {
    let mm: Mat2 = [[0.0, 1.0], [-alpha / m, -1.0 / m]];
    let nm = norm(&mm);
    let mut k = 0u32;
    while nm * h / 2f64.powi(k as i32) > 0.25 {
        k += 1;
    }
    let tau0 = h / 2f64.powi(k as i32);
    let b: Mat2 = [[0.0, 0.0], [0.0, 1.0]];

    // Taylor series at tau0
    let mut p1 = scale(&I2, tau0);
    let mut p2 = scale(&I2, 0.5 * tau0 * tau0);
    let mut sig = scale(&b, tau0);
    let mut mpow = I2; // M^n tau^n / n!
    let mut lpow = b; // L^n(B) tau^n / n!
    for n in 1..40 {
        let nf = n as f64;
        mpow = scale(&mul(&mm, &mpow), tau0 / nf);
        let lnext = add(&mul(&mm, &lpow), &mul(&lpow, &transpose(&mm)));
        lpow = scale(&lnext, tau0 / nf);
        let t1 = scale(&mpow, tau0 / (nf + 1.0));
        let t2 = scale(&mpow, tau0 * tau0 / (nf + 2.0));
        let t3 = scale(&lpow, tau0 / (nf + 1.0));
        p1 = add(&p1, &t1);
        p2 = add(&p2, &t2);
        sig = add(&sig, &t3);
        if norm(&t1) <= 1e-18 * norm(&p1) && norm(&t3) <= 1e-18 * norm(&sig).max(1e-300) {
            break;
        }
    }
    let mut tau = tau0;
    for _ in 0..k {
        let e = wave_exponential(alpha, m, tau);
        let ep1 = mul(&e, &p1);
        p2 = add(&add(&p2, &mul(&e, &p2)), &scale(&ep1, tau));
        p1 = add(&p1, &ep1);
        sig = add(&sig, &mul(&mul(&e, &sig), &transpose(&e)));
        tau *= 2.0;
    }
    sig[0][1] = 0.5 * (sig[0][1] + sig[1][0]);
    sig[1][0] = sig[0][1];
    WaveIntegrals {
        e: wave_exponential(alpha, m, h),
        p1,
        p2,
        sigma: sig,
    }
}

/// expm1(z) / z
fn phi1(z: f64) -> f64 {
    if z.abs() < 1e-5 {
        1.0 + z / 2.0 + z * z / 6.0
    } else {
        z.exp_m1() / z
    }
}

/// int_0^1 x e^{zx} dx
fn phi_moment(z: f64) -> f64 {
    if z.abs() < 0.5 {
        let mut term = 1.0;
        let mut sum = 0.5;
        for n in 1..30 {
            term *= z / n as f64;
            sum += term / (n as f64 + 2.0);
        }
        sum
    } else {
        (z.exp() * (z - 1.0) + 1.0) / (z * z)
    }
}

/// Clamp negative eigenvalues, then lower Cholesky with u first.
fn psd_cholesky(r: &Mat2) -> Mat2 {
    let (a, b, d) = (r[0][0], 0.5 * (r[0][1] + r[1][0]), r[1][1]);
    let tr = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let (l1, l2) = (tr + rad, tr - rad);
    let (a, b, d) = if l2 < 0.0 {
        if l1 <= 0.0 {
            (0.0, 0.0, 0.0)
        } else {
            // rank-one projection onto the leading eigenvector
            let (vx, vy) = if b.abs() > 0.0 {
                let n = ((l1 - d).powi(2) + b * b).sqrt();
                ((l1 - d) / n, b / n)
            } else if a >= d {
                (1.0, 0.0)
            } else {
                (0.0, 1.0)
            };
            (l1 * vx * vx, l1 * vx * vy, l1 * vy * vy)
        }
    } else {
        (a, b, d)
    };
    let floor = 1e-300;
    if a <= floor {
        return [[0.0, 0.0], [0.0, d.max(0.0).sqrt()]];
    }
    let l00 = a.sqrt();
    let l10 = b / l00;
    let l11 = (d - l10 * l10).max(0.0).sqrt();
    [[l00, 0.0], [l10, l11]]
}

#[derive(Clone, Copy, Debug)]
pub struct WaveKernel {
    pub e: Mat2,
    pub e_half: Mat2,
    /// response of (u, v) to a constant unit forcing f in m dv = f dt
    pub force: [f64; 2],
    /// one-shot kick (0, h/m) used by the split scheme
    pub kick: [f64; 2],
    /// rows map the four standard normals to (xi_u, xi_v)
    pub noise: [[f64; 4]; 2],
    pub cov: Mat2,
}

#[derive(Clone, Copy, Debug)]
pub struct HeatKernel {
    pub e: f64,
    pub e_half: f64,
    pub force: f64,
    pub kick: f64,
    pub noise: [f64; 3],
    pub var: f64,
}

pub fn wave_kernel(alpha: f64, m: f64, q: f64, h: f64) -> WaveKernel {
    let w = wave_integrals(alpha, m, h);
    let force = [w.p1[0][1] / m, w.p1[1][1] / m];
    let qm = q / m;
    let p1b = [w.p1[0][1] * qm, w.p1[1][1] * qm];
    let p2b = [w.p2[0][1] * qm, w.p2[1][1] * qm];
    let cov = scale(&w.sigma, qm * qm);
    let a1 = [p1b[0] / h.sqrt(), p1b[1] / h.sqrt()];
    let c2 = [0.5 * h * p1b[0] - p2b[0], 0.5 * h * p1b[1] - p2b[1]];
    let s2 = (12.0 / (h * h * h)).sqrt();
    let a2 = [c2[0] * s2, c2[1] * s2];
    let mut r = cov;
    for i in 0..2 {
        for j in 0..2 {
            r[i][j] -= a1[i] * a1[j] + a2[i] * a2[j];
        }
    }
    let l = psd_cholesky(&r);
    WaveKernel {
        e: w.e,
        e_half: wave_exponential(alpha, m, 0.5 * h),
        force,
        kick: [0.0, h / m],
        noise: [
            [a1[0], a2[0], l[0][0], 0.0],
            [a1[1], a2[1], l[1][0], l[1][1]],
        ],
        cov,
    }
}

pub fn heat_kernel(alpha: f64, q: f64, h: f64) -> HeatKernel {
    let z = -alpha * h;
    let p1 = h * phi1(z);
    let p2 = h * h * phi_moment(z);
    let var = q * q * h * phi1(2.0 * z);
    let a1 = q * p1 / h.sqrt();
    let a2 = q * (0.5 * h * p1 - p2) * (12.0 / (h * h * h)).sqrt();
    let res = (var - a1 * a1 - a2 * a2).max(0.0);
    HeatKernel {
        e: z.exp(),
        e_half: (0.5 * z).exp(),
        force: p1,
        kick: h,
        noise: [a1, a2, res.sqrt()],
        var,
    }
}

#[derive(Clone, Debug)]
pub enum Kernels {
    Wave(Vec<WaveKernel>),
    Heat(Vec<HeatKernel>),
}

/// Per-mode propagators for one (m, h) pair.
#[derive(Clone, Debug)]
pub struct PropagatorTable {
    pub mass: f64,
    pub step: f64,
    pub kernels: Kernels,
}

impl PropagatorTable {
    /// `stiffness[k]` plays the role of alpha_k (zero gives the Langevin system).
    pub fn build(stiffness: &[f64], q: &[f64], mass: f64, h: f64) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidStep {
                step: h,
                horizon: f64::NAN,
            });
        }
        if !(mass.is_finite() && mass >= 0.0) {
            return Err(Error::InvalidMass(mass));
        }
        if stiffness.len() != q.len() {
            return Err(Error::SizeMismatch {
                expected: stiffness.len(),
                got: q.len(),
            });
        }
        let kernels = if mass == 0.0 {
            Kernels::Heat(
                stiffness
                    .iter()
                    .zip(q)
                    .map(|(&a, &q)| heat_kernel(a, q, h))
                    .collect(),
            )
        } else {
            Kernels::Wave(
                stiffness
                    .iter()
                    .zip(q)
                    .map(|(&a, &q)| wave_kernel(a, mass, q, h))
                    .collect(),
            )
        };
        Ok(Self {
            mass,
            step: h,
            kernels,
        })
    }

    pub fn len(&self) -> usize {
        match &self.kernels {
            Kernels::Wave(k) => k.len(),
            Kernels::Heat(k) => k.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
