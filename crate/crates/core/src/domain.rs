//! Dirichlet box, sorted sine eigenbasis, and the grid transforms used by the
//! pseudo-spectral evaluation of pointwise maps.
//!
//! Coefficient vectors are always stored in the sorted basis order (ascending
//! eigenvalue, ties broken lexicographically on the multi-index).

use std::cmp::Ordering;
use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DomainSpec {
    lengths: Vec<f64>,
    modes: Vec<usize>,
}

impl DomainSpec {
    pub fn new(lengths: Vec<f64>, modes: Vec<usize>) -> Result<Self> {
        let d = lengths.len();
        if !(1..=3).contains(&d) {
            return Err(Error::InvalidDomain(format!("dimension {d} is not 1, 2 or 3")));
        }
        if modes.len() != d {
            return Err(Error::InvalidDomain(format!(
                "{} side lengths but {} mode counts",
                d,
                modes.len()
            )));
        }
        if let Some(l) = lengths.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::InvalidDomain(format!("side length {l} must be positive")));
        }
        if modes.iter().any(|&n| n == 0) {
            return Err(Error::InvalidDomain("mode counts must be at least 1".into()));
        }
        Ok(Self { lengths, modes })
    }

    pub fn interval(length: f64, modes: usize) -> Result<Self> {
        Self::new(vec![length], vec![modes])
    }

    pub fn dimension(&self) -> usize {
        self.lengths.len()
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn modes_per_axis(&self) -> &[usize] {
        &self.modes
    }

    pub fn volume(&self) -> f64 {
        self.lengths.iter().product()
    }

    pub fn total_modes(&self) -> usize {
        self.modes.iter().product()
    }
}

/// One eigenfunction: 1-based multi-index (unused axes hold 0) and eigenvalue.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mode {
    pub index: [usize; 3],
    pub eigenvalue: f64,
}

#[derive(Clone, Debug)]
struct AxisGrid {
    nodes: usize,
    coords: Vec<f64>,
    weights: Vec<f64>,
    // nodes x modes
    synth: Vec<f64>,
    // modes x nodes, quadrature weights folded in
    analysis: Vec<f64>,
    // nodes x modes, derivative of the sine functions
    deriv: Vec<f64>,
}

impl AxisGrid {
    fn build(length: f64, modes: usize, coords: Vec<f64>, weights: Vec<f64>) -> Self {
        let nodes = coords.len();
        let norm = (2.0 / length).sqrt();
        let mut synth = vec![0.0; nodes * modes];
        let mut deriv = vec![0.0; nodes * modes];
        let mut analysis = vec![0.0; nodes * modes];
        for (j, &x) in coords.iter().enumerate() {
            for k in 0..modes {
                let kappa = (k + 1) as f64 * PI / length;
                let s = norm * (kappa * x).sin();
                synth[j * modes + k] = s;
                deriv[j * modes + k] = norm * kappa * (kappa * x).cos();
                analysis[k * nodes + j] = weights[j] * s;
            }
        }
        Self {
            nodes,
            coords,
            weights,
            synth,
            analysis,
            deriv,
        }
    }

    /// Interior collocation nodes x_j = jL/(n+1), j = 1..n.
    fn collocation(length: f64, modes: usize) -> Self {
        let dx = length / (modes + 1) as f64;
        let coords = (1..=modes).map(|j| j as f64 * dx).collect();
        Self::build(length, modes, coords, vec![dx; modes])
    }

    /// Closed grid with 2(n+1) intervals and trapezoid weights.
    fn padded(length: f64, modes: usize) -> Self {
        let intervals = 2 * (modes + 1);
        let dx = length / intervals as f64;
        let coords: Vec<f64> = (0..=intervals).map(|j| j as f64 * dx).collect();
        let mut weights = vec![dx; intervals + 1];
        weights[0] = 0.5 * dx;
        weights[intervals] = 0.5 * dx;
        let mut g = Self::build(length, modes, coords, weights);
        // sin vanishes exactly at both ends
        for k in 0..modes {
            g.synth[k] = 0.0;
            g.synth[intervals * modes + k] = 0.0;
            g.analysis[k * g.nodes] = 0.0;
            g.analysis[k * g.nodes + intervals] = 0.0;
        }
        g
    }
}

#[derive(Clone, Debug)]
struct TensorGrid {
    axes: Vec<AxisGrid>,
    shape: Vec<usize>,
    weights: Vec<f64>,
}

impl TensorGrid {
    fn new(axes: Vec<AxisGrid>) -> Self {
        let shape: Vec<usize> = axes.iter().map(|a| a.nodes).collect();
        let len: usize = shape.iter().product();
        let mut weights = vec![1.0; len];
        for (flat, w) in weights.iter_mut().enumerate() {
            let mut rem = flat;
            for a in axes.iter().rev() {
                *w *= a.weights[rem % a.nodes];
                rem /= a.nodes;
            }
        }
        Self {
            axes,
            shape,
            weights,
        }
    }

    fn len(&self) -> usize {
        self.weights.len()
    }
}

/// Contract axis `axis` of a row-major tensor with a `rows x cols` matrix.
fn apply_axis(
    input: &[f64],
    shape: &[usize],
    axis: usize,
    mat: &[f64],
    rows: usize,
    out: &mut Vec<f64>,
) {
    let cols = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    out.clear();
    out.resize(outer * rows * inner, 0.0);
    for o in 0..outer {
        let src = &input[o * cols * inner..(o + 1) * cols * inner];
        let dst = &mut out[o * rows * inner..(o + 1) * rows * inner];
        for r in 0..rows {
            let row = &mat[r * cols..(r + 1) * cols];
            let d = &mut dst[r * inner..(r + 1) * inner];
            for (c, &m) in row.iter().enumerate() {
                if m == 0.0 {
                    continue;
                }
                let s = &src[c * inner..(c + 1) * inner];
                for (di, si) in d.iter_mut().zip(s) {
                    *di += m * si;
                }
            }
        }
    }
}

fn matvec(mat: &[f64], rows: usize, x: &[f64], out: &mut Vec<f64>) {
    let cols = x.len();
    out.clear();
    out.extend((0..rows).map(|r| {
        mat[r * cols..(r + 1) * cols]
            .iter()
            .zip(x)
            .map(|(a, b)| a * b)
            .sum::<f64>()
    }));
}

/// Sorted sine eigenbasis of the Dirichlet Laplacian on a box.
#[derive(Clone, Debug)]
pub struct Basis {
    domain: DomainSpec,
    modes: Vec<Mode>,
    eigenvalues: Vec<f64>,
    // sorted position -> flat position in the coefficient tensor
    tensor_pos: Vec<usize>,
    collocation: TensorGrid,
    padded: TensorGrid,
}

/// Values of a field at grid nodes, row-major over the axes.
#[derive(Clone, Debug, PartialEq)]
pub struct GridValues {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Basis {
    pub fn new(domain: DomainSpec) -> Arc<Self> {
        let d = domain.dimension();
        let n = domain.modes_per_axis().to_vec();
        let l = domain.lengths().to_vec();
        let total = domain.total_modes();
        let mut modes = Vec::with_capacity(total);
        for flat in 0..total {
            let mut rem = flat;
            let mut index = [0usize; 3];
            for axis in (0..d).rev() {
                index[axis] = rem % n[axis] + 1;
                rem /= n[axis];
            }
            let eigenvalue = (0..d)
                .map(|a| {
                    let kappa = index[a] as f64 * PI / l[a];
                    kappa * kappa
                })
                .sum();
            modes.push(Mode { index, eigenvalue });
        }
        modes.sort_by(|a, b| {
            let scale = a.eigenvalue.abs().max(b.eigenvalue.abs());
            if (a.eigenvalue - b.eigenvalue).abs() <= 1e-12 * scale {
                a.index.cmp(&b.index)
            } else {
                a.eigenvalue.partial_cmp(&b.eigenvalue).unwrap_or(Ordering::Equal)
            }
        });
        let tensor_pos = modes
            .iter()
            .map(|m| (0..d).fold(0, |acc, a| acc * n[a] + m.index[a] - 1))
            .collect();
        let eigenvalues = modes.iter().map(|m| m.eigenvalue).collect();
        let collocation = TensorGrid::new(
            (0..d).map(|a| AxisGrid::collocation(l[a], n[a])).collect(),
        );
        let padded = TensorGrid::new((0..d).map(|a| AxisGrid::padded(l[a], n[a])).collect());
        Arc::new(Self {
            domain,
            modes,
            eigenvalues,
            tensor_pos,
            collocation,
            padded,
        })
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Smallest 1-based n with alpha_n strictly above `threshold`.
    pub fn first_index_above(&self, threshold: f64) -> Option<usize> {
        self.eigenvalues
            .iter()
            .position(|&a| a > threshold)
            .map(|p| p + 1)
    }

    /// Eigenfunction `k` (sorted position) evaluated at a point.
    pub fn eigenfunction(&self, k: usize, x: &[f64]) -> f64 {
        let m = &self.modes[k];
        let l = self.domain.lengths();
        (0..self.domain.dimension())
            .map(|a| (2.0 / l[a]).sqrt() * (m.index[a] as f64 * PI * x[a] / l[a]).sin())
            .product()
    }

    pub fn eval_point(&self, coeffs: &[f64], x: &[f64]) -> f64 {
        coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| c * self.eigenfunction(k, x))
            .sum()
    }

    fn scatter(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; self.len()];
        for (c, &p) in coeffs.iter().zip(&self.tensor_pos) {
            t[p] = *c;
        }
        t
    }

    fn gather(&self, tensor: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.tensor_pos.iter().map(|&p| tensor[p]));
    }

    fn synthesize(&self, grid: &TensorGrid, coeffs: &[f64], deriv_axis: Option<usize>, out: &mut Vec<f64>) {
        let mat = |a: usize| {
            if deriv_axis == Some(a) {
                &grid.axes[a].deriv
            } else {
                &grid.axes[a].synth
            }
        };
        if self.domain.dimension() == 1 {
            matvec(mat(0), grid.axes[0].nodes, coeffs, out);
            return;
        }
        let mut cur = self.scatter(coeffs);
        let mut shape = self.domain.modes_per_axis().to_vec();
        for a in 0..self.domain.dimension() {
            apply_axis(&cur, &shape, a, mat(a), grid.axes[a].nodes, out);
            shape[a] = grid.axes[a].nodes;
            std::mem::swap(&mut cur, out);
        }
        std::mem::swap(&mut cur, out);
    }

    fn analyze(&self, grid: &TensorGrid, values: &[f64], out: &mut Vec<f64>) {
        let n = self.domain.modes_per_axis();
        if self.domain.dimension() == 1 {
            matvec(&grid.axes[0].analysis, n[0], values, out);
            return;
        }
        let mut cur = values.to_vec();
        let mut shape = grid.shape.clone();
        let mut tmp = Vec::new();
        for a in 0..self.domain.dimension() {
            apply_axis(&cur, &shape, a, &grid.axes[a].analysis, n[a], &mut tmp);
            shape[a] = n[a];
            std::mem::swap(&mut cur, &mut tmp);
        }
        self.gather(&cur, out);
    }

    /// Values at the interior collocation nodes.
    pub fn to_grid(&self, field: &SpectralField) -> GridValues {
        let mut out = Vec::new();
        self.synthesize(&self.collocation, &field.coeffs, None, &mut out);
        GridValues {
            shape: self.collocation.shape.clone(),
            values: out,
        }
    }

    /// Inverse of [`Basis::to_grid`].
    pub fn from_grid(self: &Arc<Self>, grid: &GridValues) -> Result<SpectralField> {
        if grid.values.len() != self.collocation.len() {
            return Err(Error::SizeMismatch {
                expected: self.collocation.len(),
                got: grid.values.len(),
            });
        }
        let mut out = Vec::new();
        self.analyze(&self.collocation, &grid.values, &mut out);
        Ok(SpectralField {
            basis: Arc::clone(self),
            coeffs: out,
        })
    }

    pub fn collocation_points(&self) -> Vec<Vec<f64>> {
        tensor_points(&self.collocation)
    }

    pub fn padded_points(&self) -> Vec<Vec<f64>> {
        tensor_points(&self.padded)
    }

    pub fn padded_len(&self) -> usize {
        self.padded.len()
    }

    pub fn padded_weights(&self) -> &[f64] {
        &self.padded.weights
    }

    /// Field values on the dealiased grid (boundary nodes included).
    pub fn padded_values(&self, coeffs: &[f64], out: &mut Vec<f64>) {
        self.synthesize(&self.padded, coeffs, None, out);
    }

    /// Partial derivative along `axis` on the dealiased grid.
    pub fn padded_gradient(&self, coeffs: &[f64], axis: usize, out: &mut Vec<f64>) {
        self.synthesize(&self.padded, coeffs, Some(axis), out);
    }

    /// Galerkin projection of grid values given on the dealiased grid.
    pub fn padded_project(&self, values: &[f64], out: &mut Vec<f64>) {
        self.analyze(&self.padded, values, out);
    }

    pub fn padded_integral(&self, values: &[f64]) -> f64 {
        values.iter().zip(&self.padded.weights).map(|(v, w)| v * w).sum()
    }
}

fn tensor_points(grid: &TensorGrid) -> Vec<Vec<f64>> {
    let mut pts = Vec::with_capacity(grid.len());
    for flat in 0..grid.len() {
        let mut rem = flat;
        let mut p = vec![0.0; grid.axes.len()];
        for (a, axis) in grid.axes.iter().enumerate().rev() {
            p[a] = axis.coords[rem % axis.nodes];
            rem /= axis.nodes;
        }
        pts.push(p);
    }
    pts
}

/// Coefficients of a field in the sorted basis.
#[derive(Clone, Debug)]
pub struct SpectralField {
    basis: Arc<Basis>,
    coeffs: Vec<f64>,
}

impl PartialEq for SpectralField {
    fn eq(&self, other: &Self) -> bool {
        self.coeffs == other.coeffs && self.basis.domain == other.basis.domain
    }
}

impl SpectralField {
    pub fn zeros(basis: &Arc<Basis>) -> Self {
        Self {
            basis: Arc::clone(basis),
            coeffs: vec![0.0; basis.len()],
        }
    }

    pub fn from_coeffs(basis: &Arc<Basis>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != basis.len() {
            return Err(Error::SizeMismatch {
                expected: basis.len(),
                got: coeffs.len(),
            });
        }
        Ok(Self {
            basis: Arc::clone(basis),
            coeffs,
        })
    }

    pub fn basis(&self) -> &Arc<Basis> {
        &self.basis
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    /// ||A^{r/2} u||
    pub fn sobolev_norm(&self, r: f64) -> f64 {
        sobolev_norm(self.basis.eigenvalues(), &self.coeffs, r)
    }

    /// Keep the first `n` sorted modes.
    pub fn project(&self, n: usize) -> Result<Self> {
        if n > self.coeffs.len() {
            return Err(Error::OutOfRange {
                requested: n,
                available: self.coeffs.len(),
            });
        }
        let mut out = self.clone();
        out.coeffs[n..].iter_mut().for_each(|c| *c = 0.0);
        Ok(out)
    }

    /// Max |u| on the dealiased grid.
    pub fn linf_norm(&self) -> f64 {
        linf_norm(&self.basis, &self.coeffs)
    }

    pub fn inner(&self, other: &Self) -> f64 {
        dot(&self.coeffs, &other.coeffs)
    }
}

pub fn sobolev_norm(eigenvalues: &[f64], coeffs: &[f64], r: f64) -> f64 {
    sobolev_sq(eigenvalues, coeffs, r).sqrt()
}

/// ||A^{r/2} u||^2
pub fn sobolev_sq(eigenvalues: &[f64], coeffs: &[f64], r: f64) -> f64 {
    if r == 0.0 {
        return dot(coeffs, coeffs);
    }
    let whole = r.fract() == 0.0;
    eigenvalues
        .iter()
        .zip(coeffs)
        .map(|(&a, &c)| {
            let w = if whole { a.powi(r as i32) } else { a.powf(r) };
            w * c * c
        })
        .sum()
}

pub fn linf_norm(basis: &Basis, coeffs: &[f64]) -> f64 {
    let mut vals = Vec::new();
    basis.padded_values(coeffs, &mut vals);
    vals.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(n: usize) -> Arc<Basis> {
        Basis::new(DomainSpec::new(vec![1.0, 1.0], vec![n, n]).unwrap())
    }

    #[test]
    fn rejects_bad_domains() {
        assert!(DomainSpec::new(vec![], vec![]).is_err());
        assert!(DomainSpec::new(vec![1.0; 4], vec![2; 4]).is_err());
        assert!(DomainSpec::new(vec![-1.0], vec![2]).is_err());
        assert!(DomainSpec::new(vec![1.0], vec![0]).is_err());
        assert!(DomainSpec::new(vec![1.0, 2.0], vec![3]).is_err());
    }

    #[test]
    fn unit_square_leading_eigenvalues() {
        let b = square(4);
        let p2 = PI * PI;
        let want = [2.0 * p2, 5.0 * p2, 5.0 * p2, 8.0 * p2];
        for (got, w) in b.eigenvalues().iter().zip(want) {
            assert!((got - w).abs() < 1e-12 * w);
        }
        assert_eq!(b.modes()[1].index[..2], [1, 2]);
        assert_eq!(b.modes()[2].index[..2], [2, 1]);
    }

    #[test]
    fn interval_eigenvalues_are_squares() {
        let b = Basis::new(DomainSpec::interval(PI, 6).unwrap());
        for (k, a) in b.eigenvalues().iter().enumerate() {
            assert!((a - ((k + 1) * (k + 1)) as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn first_index_above_excludes_ties() {
        let b = Basis::new(DomainSpec::interval(PI, 6).unwrap());
        assert_eq!(b.first_index_above(1.0), Some(2));
        assert_eq!(b.first_index_above(0.5), Some(1));
        assert_eq!(b.first_index_above(40.0), None);
    }

    #[test]
    fn grid_roundtrip_3d() {
        let b = Basis::new(DomainSpec::new(vec![1.0, 2.0, 0.5], vec![3, 2, 4]).unwrap());
        let coeffs: Vec<f64> = (0..b.len()).map(|i| (i as f64 * 0.7).sin()).collect();
        let f = SpectralField::from_coeffs(&b, coeffs.clone()).unwrap();
        let back = b.from_grid(&b.to_grid(&f)).unwrap();
        for (x, y) in coeffs.iter().zip(back.coeffs()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_matches_pointwise_sum() {
        let b = square(3);
        let coeffs: Vec<f64> = (0..b.len()).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let f = SpectralField::from_coeffs(&b, coeffs.clone()).unwrap();
        let g = b.to_grid(&f);
        for (p, v) in b.collocation_points().iter().zip(&g.values) {
            assert!((b.eval_point(&coeffs, p) - v).abs() < 1e-12);
        }
        let mut pv = Vec::new();
        b.padded_values(&coeffs, &mut pv);
        for (p, v) in b.padded_points().iter().zip(&pv) {
            assert!((b.eval_point(&coeffs, p) - v).abs() < 1e-12);
        }
    }

    #[test]
    fn padded_projection_of_cube_is_exact() {
        // u = e_1 on (0, pi): u^2 = (2/pi) sin^2 x, so <u^2, e_k> vanishes for even k
        // and equals (2/pi)^{3/2} * 4 / (k (4 - k^2)) for odd k.
        let b = Basis::new(DomainSpec::interval(PI, 8).unwrap());
        let mut c = vec![0.0; 8];
        c[0] = 1.0;
        let mut vals = Vec::new();
        b.padded_values(&c, &mut vals);
        // odd powers of a sine series are integrated exactly
        let cube: Vec<f64> = vals.iter().map(|v| v * v * v).collect();
        let mut proj = Vec::new();
        b.padded_project(&cube, &mut proj);
        let s = 2.0 / PI;
        for (i, p) in proj.iter().enumerate() {
            let want = match i {
                0 => 0.75 * s,
                2 => -0.25 * s,
                _ => 0.0,
            };
            assert!((p - want).abs() < 1e-13, "k={}: {p} vs {want}", i + 1);
        }
    }

    #[test]
    fn padded_integral_of_constant_is_volume() {
        let b = Basis::new(DomainSpec::new(vec![1.5, 0.5], vec![3, 2]).unwrap());
        let ones = vec![1.0; b.padded_len()];
        assert!((b.padded_integral(&ones) - 0.75).abs() < 1e-14);
    }

    #[test]
    fn gradient_energy_matches_h1_norm() {
        let b = square(3);
        let coeffs: Vec<f64> = (0..b.len()).map(|i| (1.3 * i as f64).cos()).collect();
        let mut total = 0.0;
        let mut g = Vec::new();
        for axis in 0..2 {
            b.padded_gradient(&coeffs, axis, &mut g);
            total += b.padded_integral(&g.iter().map(|x| x * x).collect::<Vec<_>>());
        }
        let want = sobolev_sq(b.eigenvalues(), &coeffs, 1.0);
        assert!((total - want).abs() < 1e-11 * want);
    }

    #[test]
    fn sobolev_norm_of_single_mode() {
        let b = Basis::new(DomainSpec::interval(PI, 5).unwrap());
        let mut f = SpectralField::zeros(&b);
        f.coeffs_mut()[2] = 2.0;
        assert!((f.sobolev_norm(2.0) - 18.0).abs() < 1e-12);
        assert!((f.sobolev_norm(1.0) - 6.0).abs() < 1e-12);
        assert!((f.sobolev_norm(0.0) - 2.0).abs() < 1e-12);
        assert!((f.sobolev_norm(-1.0) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn project_truncates_and_checks_range() {
        let b = Basis::new(DomainSpec::interval(1.0, 4).unwrap());
        let f = SpectralField::from_coeffs(&b, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(f.project(2).unwrap().coeffs(), &[1.0, 2.0, 0.0, 0.0]);
        assert_eq!(f.project(4).unwrap(), f);
        assert!(matches!(f.project(5), Err(Error::OutOfRange { .. })));
        assert!(SpectralField::from_coeffs(&b, vec![1.0]).is_err());
    }

    #[test]
    fn linf_of_single_mode() {
        // e_1 peaks at the midpoint, which is a node of the dealiased grid
        let b = Basis::new(DomainSpec::interval(2.0, 3).unwrap());
        let f = SpectralField::from_coeffs(&b, vec![1.0, 0.0, 0.0]).unwrap();
        assert!((f.linf_norm() - 1.0).abs() < 1e-14);
    }
}
