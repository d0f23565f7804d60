//! Log-polar grids on disks and annuli.
//!
//! Nodes sit at `(t_j, θ_i)` with `t = ln ρ` uniformly spaced and
//! `θ_i = 2π i / n_theta`. Angular derivatives are spectral, radial ones
//! are fourth-order finite differences in `t`. Quadrature weights are
//! `ρ² · |cell_j| · Δθ` where the radial cells follow the fourth-order
//! Gregory end correction, so the full-grid rule integrates smooth data
//! to `O(h⁴)` and clipping to a sub-annulus is proportional to overlap.

use std::f64::consts::PI;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Concentric annulus `B_{r_outer}(center) \ B_{r_inner}(center)`; `r_inner = 0` is a disk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnulusSpec {
    pub r_inner: f64,
    pub r_outer: f64,
    pub center: [f64; 2],
}

impl AnnulusSpec {
    pub fn new(r_inner: f64, r_outer: f64, center: [f64; 2]) -> Result<Self> {
        if !(r_inner.is_finite() && r_outer.is_finite() && center.iter().all(|c| c.is_finite())) {
            return invalid("annulus radii and center must be finite");
        }
        if !(0.0 <= r_inner && r_inner < r_outer) {
            return invalid(format!("need 0 <= r_inner < r_outer, got {r_inner} and {r_outer}"));
        }
        Ok(Self { r_inner, r_outer, center })
    }

    /// Annulus centered at the origin.
    pub fn annulus(r_inner: f64, r_outer: f64) -> Result<Self> {
        Self::new(r_inner, r_outer, [0.0, 0.0])
    }

    /// Disk of radius `r` centered at the origin.
    pub fn disk(r: f64) -> Result<Self> {
        Self::new(0.0, r, [0.0, 0.0])
    }

    pub fn is_disk(&self) -> bool {
        self.r_inner == 0.0
    }

    pub fn area(&self) -> f64 {
        PI * (self.r_outer * self.r_outer - self.r_inner * self.r_inner)
    }

    /// Conformal modulus `ln(r_outer / r_inner)`; infinite for a disk.
    pub fn modulus(&self) -> f64 {
        (self.r_outer / self.r_inner).ln()
    }

    fn concentric_with(&self, other: &AnnulusSpec) -> bool {
        let scale = self.r_outer.max(other.r_outer);
        let dx = self.center[0] - other.center[0];
        let dy = self.center[1] - other.center[1];
        (dx * dx + dy * dy).sqrt() <= 1e-12 * scale
    }
}

/// Grid descriptor shared by every field sampled on it.
pub type Grid = Arc<LogPolarGrid>;

#[derive(Clone)]
pub struct LogPolarGrid {
    spec: AnnulusSpec,
    n_theta: usize,
    n_radial: usize,
    t0: f64,
    h: f64,
    disk: bool,
    edges: Vec<f64>,
    weights: Vec<f64>,
    cos: Vec<f64>,
    sin: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for LogPolarGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LogPolarGrid")
            .field("spec", &self.spec)
            .field("n_theta", &self.n_theta)
            .field("n_radial", &self.n_radial)
            .field("t0", &self.t0)
            .field("h", &self.h)
            .field("disk", &self.disk)
            .finish()
    }
}

impl PartialEq for LogPolarGrid {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
            && self.n_theta == other.n_theta
            && self.n_radial == other.n_radial
            && self.t0 == other.t0
            && self.h == other.h
            && self.disk == other.disk
    }
}

impl LogPolarGrid {
    /// Uniform grid in `t` on an annulus, both boundary circles included.
    pub fn annulus(spec: AnnulusSpec, n_theta: usize, n_radial: usize) -> Result<Grid> {
        if spec.is_disk() {
            return invalid("annulus grid needs r_inner > 0; use LogPolarGrid::disk");
        }
        Self::build(spec, n_theta, n_radial, spec.r_inner.ln(), false)
    }

    /// Graded disk grid: the innermost ring sits at `r_outer / 2^d_max` and the
    /// central disk inside it is folded into that ring's quadrature weight.
    pub fn disk(spec: AnnulusSpec, n_theta: usize, n_radial: usize, d_max: u32) -> Result<Grid> {
        if !spec.is_disk() {
            return invalid("disk grid needs r_inner = 0");
        }
        if d_max == 0 || d_max > 60 {
            return invalid(format!("d_max must lie in 1..=60, got {d_max}"));
        }
        let t_lo = spec.r_outer.ln() - d_max as f64 * std::f64::consts::LN_2;
        Self::build(spec, n_theta, n_radial, t_lo, true)
    }

    /// Annulus grid with roughly `per_octave` radial nodes per factor of two.
    pub fn annulus_per_octave(spec: AnnulusSpec, n_theta: usize, per_octave: usize) -> Result<Grid> {
        let octaves = spec.modulus() / std::f64::consts::LN_2;
        let n = ((octaves * per_octave as f64).ceil() as usize + 1).max(16);
        Self::annulus(spec, n_theta, n)
    }

    fn build(spec: AnnulusSpec, n_theta: usize, n_radial: usize, t0: f64, disk: bool) -> Result<Grid> {
        if n_theta < 4 || !n_theta.is_power_of_two() {
            return invalid(format!("n_theta must be a power of two >= 4, got {n_theta}"));
        }
        if n_radial < 2 {
            return invalid(format!("n_radial must be >= 2, got {n_radial}"));
        }
        let t1 = spec.r_outer.ln();
        let h = (t1 - t0) / (n_radial - 1) as f64;
        if !(h > 0.0) {
            return invalid("degenerate radial range");
        }
        let edges = cell_edges(t0, h, n_radial);
        let dtheta = 2.0 * PI / n_theta as f64;
        let mut weights: Vec<f64> =
            (0..n_radial).map(|j| (2.0 * (t0 + j as f64 * h)).exp() * (edges[j + 1] - edges[j]) * dtheta).collect();
        if disk {
            weights[0] += 0.5 * (2.0 * t0).exp() * dtheta;
        }
        let (cos, sin) = (0..n_theta)
            .map(|i| {
                let th = dtheta * i as f64;
                (th.cos(), th.sin())
            })
            .unzip();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n_theta);
        let ifft = planner.plan_fft_inverse(n_theta);
        Ok(Arc::new(Self { spec, n_theta, n_radial, t0, h, disk, edges, weights, cos, sin, fft, ifft }))
    }

    pub fn spec(&self) -> &AnnulusSpec {
        &self.spec
    }
    pub fn n_theta(&self) -> usize {
        self.n_theta
    }
    pub fn n_radial(&self) -> usize {
        self.n_radial
    }
    pub fn n_nodes(&self) -> usize {
        self.n_theta * self.n_radial
    }
    pub fn is_disk(&self) -> bool {
        self.disk
    }
    /// Radial step in `t`.
    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn dtheta(&self) -> f64 {
        2.0 * PI / self.n_theta as f64
    }
    pub fn t(&self, j: usize) -> f64 {
        self.t0 + j as f64 * self.h
    }
    pub fn t_range(&self) -> (f64, f64) {
        (self.t0, self.t(self.n_radial - 1))
    }
    pub fn rho(&self, j: usize) -> f64 {
        self.t(j).exp()
    }
    pub fn theta(&self, i: usize) -> f64 {
        self.dtheta() * i as f64
    }
    pub fn cos_theta(&self, i: usize) -> f64 {
        self.cos[i]
    }
    pub fn sin_theta(&self, i: usize) -> f64 {
        self.sin[i]
    }
    /// Innermost ring radius (for disks, the collocation ring near the center).
    pub fn r_min(&self) -> f64 {
        self.t0.exp()
    }
    /// Cartesian position of node `(j, i)`.
    pub fn point(&self, j: usize, i: usize) -> [f64; 2] {
        let r = self.rho(j);
        [self.spec.center[0] + r * self.cos[i], self.spec.center[1] + r * self.sin[i]]
    }

    /// Quadrature weight of every node on ring `j` over the whole grid.
    pub fn ring_weight(&self, j: usize) -> f64 {
        self.weights[j]
    }

    /// Per-node cell areas, ring-major.
    pub fn cell_areas(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_nodes());
        for w in &self.weights {
            out.extend(std::iter::repeat(*w).take(self.n_theta));
        }
        out
    }

    /// Radial cell `[lo, hi]` in `t` owned by ring `j`.
    pub fn cell(&self, j: usize) -> (f64, f64) {
        (self.edges[j], self.edges[j + 1])
    }

    /// Ring weights clipped to a concentric sub-annulus.
    pub fn clipped_ring_weights(&self, region: &AnnulusSpec) -> Result<Vec<f64>> {
        self.check_region(region)?;
        let a = if region.r_inner > 0.0 { region.r_inner.ln() } else { f64::NEG_INFINITY };
        let b = region.r_outer.ln();
        let dtheta = self.dtheta();
        let mut w: Vec<f64> = (0..self.n_radial)
            .map(|j| {
                let lo = self.edges[j].max(a);
                let hi = self.edges[j + 1].min(b);
                if hi > lo {
                    (2.0 * self.t(j)).exp() * (hi - lo) * dtheta
                } else {
                    0.0
                }
            })
            .collect();
        if self.disk {
            let rm = self.r_min();
            let outer = region.r_outer.min(rm);
            let inner = region.r_inner.min(rm);
            w[0] += 0.5 * dtheta * (outer * outer - inner * inner).max(0.0);
        }
        Ok(w)
    }

    fn check_region(&self, region: &AnnulusSpec) -> Result<()> {
        if !self.spec.concentric_with(region) {
            return Err(Error::RegionOutside("region is not concentric with the grid".into()));
        }
        let tol = 1e-12 * self.spec.r_outer;
        if region.r_outer > self.spec.r_outer + tol {
            return Err(Error::RegionOutside(format!(
                "outer radius {} exceeds grid radius {}",
                region.r_outer, self.spec.r_outer
            )));
        }
        if !self.disk && region.r_inner < self.spec.r_inner - 1e-12 * self.spec.r_inner {
            return Err(Error::RegionOutside(format!(
                "inner radius {} below grid radius {}",
                region.r_inner, self.spec.r_inner
            )));
        }
        Ok(())
    }

    /// Index of the ring closest to radius `r`.
    pub fn nearest_ring(&self, r: f64) -> usize {
        let x = ((r.ln() - self.t0) / self.h).round();
        x.clamp(0.0, (self.n_radial - 1) as f64) as usize
    }

    /// Fourier coefficients of each ring, normalized so `f(θ) = Σ ĉ_m e^{i k_m θ}`.
    pub fn ring_modes(&self, data: &[f64]) -> Vec<Complex64> {
        let n = self.n_theta;
        let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft.process(&mut buf);
        let s = 1.0 / n as f64;
        buf.iter_mut().for_each(|c| *c *= s);
        buf
    }

    /// Inverse of [`ring_modes`](Self::ring_modes); keeps the real part.
    pub fn from_ring_modes(&self, modes: &[Complex64]) -> Vec<f64> {
        let mut buf = modes.to_vec();
        self.ifft.process(&mut buf);
        buf.iter().map(|c| c.re).collect()
    }

    /// Signed wavenumber stored at FFT slot `m`; the Nyquist slot reports `n/2`.
    pub fn wavenumber(&self, m: usize) -> i64 {
        let n = self.n_theta;
        if m <= n / 2 {
            m as i64
        } else {
            m as i64 - n as i64
        }
    }

    /// Spectral `∂_θ` of ring-major scalar data (Nyquist mode dropped).
    pub fn d_theta(&self, data: &[f64]) -> Vec<f64> {
        self.spectral_apply(data, |k, n| {
            if 2 * k.unsigned_abs() as usize == n {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(0.0, k as f64)
            }
        })
    }

    /// Spectral `∂_θ²` of ring-major scalar data.
    pub fn d_theta2(&self, data: &[f64]) -> Vec<f64> {
        self.spectral_apply(data, |k, _| Complex64::new(-(k * k) as f64, 0.0))
    }

    fn spectral_apply(&self, data: &[f64], mult: impl Fn(i64, usize) -> Complex64) -> Vec<f64> {
        let n = self.n_theta;
        let mut modes = self.ring_modes(data);
        for chunk in modes.chunks_mut(n) {
            for (m, c) in chunk.iter_mut().enumerate() {
                *c *= mult(self.wavenumber(m), n);
            }
        }
        self.from_ring_modes(&modes)
    }

    /// Fourth-order `∂_t` of ring-major scalar data, one-sided at both ends.
    pub fn d_t(&self, data: &[f64]) -> Result<Vec<f64>> {
        let (nr, nt) = (self.n_radial, self.n_theta);
        if nr < 8 {
            return invalid(format!("radial stencil needs n_radial >= 8, got {nr}"));
        }
        let s = 1.0 / (12.0 * self.h);
        let at = |j: usize, i: usize| data[j * nt + i];
        let mut out = vec![0.0; data.len()];
        for i in 0..nt {
            for j in 0..nr {
                let v = if j >= 2 && j + 2 < nr {
                    -at(j + 2, i) + 8.0 * at(j + 1, i) - 8.0 * at(j - 1, i) + at(j - 2, i)
                } else if j == 0 {
                    -25.0 * at(0, i) + 48.0 * at(1, i) - 36.0 * at(2, i) + 16.0 * at(3, i) - 3.0 * at(4, i)
                } else if j == 1 {
                    -3.0 * at(0, i) - 10.0 * at(1, i) + 18.0 * at(2, i) - 6.0 * at(3, i) + at(4, i)
                } else if j == nr - 1 {
                    25.0 * at(j, i) - 48.0 * at(j - 1, i) + 36.0 * at(j - 2, i) - 16.0 * at(j - 3, i)
                        + 3.0 * at(j - 4, i)
                } else {
                    3.0 * at(j + 1, i) + 10.0 * at(j, i) - 18.0 * at(j - 1, i) + 6.0 * at(j - 2, i) - at(j - 3, i)
                };
                out[j * nt + i] = v * s;
            }
        }
        Ok(out)
    }

    /// Fourth-order `∂_t²` of ring-major scalar data.
    pub fn d_t2(&self, data: &[f64]) -> Result<Vec<f64>> {
        let (nr, nt) = (self.n_radial, self.n_theta);
        if nr < 8 {
            return invalid(format!("radial stencil needs n_radial >= 8, got {nr}"));
        }
        let s = 1.0 / (12.0 * self.h * self.h);
        let at = |j: usize, i: usize| data[j * nt + i];
        let mut out = vec![0.0; data.len()];
        let edge0 = [45.0, -154.0, 214.0, -156.0, 61.0, -10.0];
        let edge1 = [10.0, -15.0, -4.0, 14.0, -6.0, 1.0];
        for i in 0..nt {
            for j in 0..nr {
                let v = if j >= 2 && j + 2 < nr {
                    -at(j + 2, i) + 16.0 * at(j + 1, i) - 30.0 * at(j, i) + 16.0 * at(j - 1, i) - at(j - 2, i)
                } else if j < 2 {
                    let c = if j == 0 { &edge0 } else { &edge1 };
                    (0..6).map(|k| c[k] * at(k, i)).sum()
                } else {
                    let c = if j == nr - 1 { &edge0 } else { &edge1 };
                    (0..6).map(|k| c[k] * at(nr - 1 - k, i)).sum()
                };
                out[j * nt + i] = v * s;
            }
        }
        Ok(out)
    }
}

fn cell_edges(t0: f64, h: f64, n: usize) -> Vec<f64> {
    let mut e: Vec<f64> = (0..=n).map(|k| t0 + (k as f64 - 0.5) * h).collect();
    let t_last = t0 + (n - 1) as f64 * h;
    e[0] = t0;
    e[n] = t_last;
    if n >= 8 {
        e[1] = t0 + 0.375 * h;
        e[2] = t0 + 37.0 / 24.0 * h;
        e[n - 1] = t_last - 0.375 * h;
        e[n - 2] = t_last - 37.0 / 24.0 * h;
    }
    e
}

/// Real vector-valued samples on a grid; `values[(j * n_theta + i) * n_components + c]`.
#[derive(Debug, Clone)]
pub struct Field {
    grid: Grid,
    n_components: usize,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, n_components: usize, values: Vec<f64>) -> Result<Self> {
        if n_components == 0 {
            return invalid("a field needs at least one component");
        }
        if values.len() != grid.n_nodes() * n_components {
            return invalid(format!("expected {} values, got {}", grid.n_nodes() * n_components, values.len()));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return invalid(format!("non-finite value at flat index {k}"));
        }
        Ok(Self { grid, n_components, values })
    }

    pub fn zeros(grid: &Grid, n_components: usize) -> Self {
        Self { grid: grid.clone(), n_components, values: vec![0.0; grid.n_nodes() * n_components] }
    }

    /// Scalar field from a function of `(ρ, θ)` relative to the grid center.
    pub fn from_polar(grid: &Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        Self::from_polar_vec(grid, 1, |r, th, out| out[0] = f(r, th))
    }

    pub fn from_polar_vec(grid: &Grid, n_components: usize, f: impl Fn(f64, f64, &mut [f64])) -> Self {
        let mut values = vec![0.0; grid.n_nodes() * n_components];
        for j in 0..grid.n_radial() {
            let r = grid.rho(j);
            for i in 0..grid.n_theta() {
                let k = (j * grid.n_theta() + i) * n_components;
                f(r, grid.theta(i), &mut values[k..k + n_components]);
            }
        }
        Self { grid: grid.clone(), n_components, values }
    }

    /// Vector field from a function of absolute Cartesian position.
    pub fn from_xy_vec(grid: &Grid, n_components: usize, f: impl Fn(f64, f64, &mut [f64])) -> Self {
        let mut values = vec![0.0; grid.n_nodes() * n_components];
        for j in 0..grid.n_radial() {
            for i in 0..grid.n_theta() {
                let [x, y] = grid.point(j, i);
                let k = (j * grid.n_theta() + i) * n_components;
                f(x, y, &mut values[k..k + n_components]);
            }
        }
        Self { grid: grid.clone(), n_components, values }
    }

    pub fn from_xy(grid: &Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        Self::from_xy_vec(grid, 1, |x, y, out| out[0] = f(x, y))
    }

    /// Scalar field assembled from one ring-major component array.
    pub fn from_component(grid: &Grid, data: Vec<f64>) -> Result<Self> {
        Self::new(grid.clone(), 1, data)
    }

    /// Interleave ring-major component arrays into one field.
    pub fn from_components(grid: &Grid, comps: &[Vec<f64>]) -> Result<Self> {
        let nc = comps.len();
        let nn = grid.n_nodes();
        if nc == 0 || comps.iter().any(|c| c.len() != nn) {
            return invalid("component arrays must be non-empty and match the grid");
        }
        let mut values = vec![0.0; nn * nc];
        for (c, comp) in comps.iter().enumerate() {
            for (k, v) in comp.iter().enumerate() {
                values[k * nc + c] = *v;
            }
        }
        Self::new(grid.clone(), nc, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn n_components(&self) -> usize {
        self.n_components
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
    pub fn get(&self, j: usize, i: usize, c: usize) -> f64 {
        self.values[(j * self.grid.n_theta() + i) * self.n_components + c]
    }

    /// Ring-major copy of component `c`.
    pub fn component(&self, c: usize) -> Vec<f64> {
        self.values.iter().skip(c).step_by(self.n_components).copied().collect()
    }

    pub fn component_field(&self, c: usize) -> Field {
        Field { grid: self.grid.clone(), n_components: 1, values: self.component(c) }
    }

    pub fn same_grid(&self, other: &Field) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    /// Pointwise Euclidean norm over components.
    pub fn pointwise_norm(&self) -> Field {
        let values =
            self.values.chunks(self.n_components).map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
        Field { grid: self.grid.clone(), n_components: 1, values }
    }

    /// Pointwise squared norm over components.
    pub fn pointwise_norm_sq(&self) -> Field {
        let values = self.values.chunks(self.n_components).map(|c| c.iter().map(|v| v * v).sum()).collect();
        Field { grid: self.grid.clone(), n_components: 1, values }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            grid: self.grid.clone(),
            n_components: self.n_components,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> Field {
        self.map(|v| s * v)
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: f64, other: &Field) -> Result<Field> {
        if !self.same_grid(other) || self.n_components != other.n_components {
            return Err(Error::GridMismatch);
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + s * b).collect();
        Ok(Field { grid: self.grid.clone(), n_components: self.n_components, values })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Value at `(t, θ)` by cubic Lagrange interpolation in `t` and periodic cubic in `θ`.
    pub fn interpolate(&self, t: f64, theta: f64, out: &mut [f64]) {
        let g = &self.grid;
        let (nr, nt, nc) = (g.n_radial(), g.n_theta(), self.n_components);
        let x = (t - g.t(0)) / g.h();
        let jb = (x.floor() as i64 - 1).clamp(0, nr as i64 - 4) as usize;
        let wt = lagrange4(x - jb as f64);
        let y = theta.rem_euclid(2.0 * PI) / g.dtheta();
        let ib = y.floor() as i64 - 1;
        let wth = lagrange4(y - ib as f64);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (a, wa) in wt.iter().enumerate() {
            let j = jb + a;
            for (b, wb) in wth.iter().enumerate() {
                let i = (ib + b as i64).rem_euclid(nt as i64) as usize;
                let k = (j * nt + i) * nc;
                for c in 0..nc {
                    out[c] += wa * wb * self.values[k + c];
                }
            }
        }
    }

    /// Write the little-endian binary container.
    pub fn write_binary(&self, w: &mut impl Write) -> Result<()> {
        let g = &self.grid;
        let s = g.spec();
        for v in [s.r_inner, s.r_outer, s.center[0], s.center[1], g.t(0)] {
            w.write_all(&v.to_le_bytes())?;
        }
        for n in [g.n_theta(), g.n_radial(), self.n_components] {
            w.write_all(&(n as u64).to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Read a field written by [`write_binary`](Self::write_binary).
    pub fn read_binary(r: &mut impl Read) -> Result<Field> {
        let mut f8 = [0u8; 8];
        let mut next_f64 = |r: &mut dyn Read| -> Result<f64> {
            r.read_exact(&mut f8)?;
            Ok(f64::from_le_bytes(f8))
        };
        let (ri, ro, cx, cy, t_lo) = (next_f64(r)?, next_f64(r)?, next_f64(r)?, next_f64(r)?, next_f64(r)?);
        let mut u8buf = [0u8; 8];
        let mut next_u64 = |r: &mut dyn Read| -> Result<usize> {
            r.read_exact(&mut u8buf)?;
            Ok(u64::from_le_bytes(u8buf) as usize)
        };
        let (nt, nr, nc) = (next_u64(r)?, next_u64(r)?, next_u64(r)?);
        let spec = AnnulusSpec::new(ri, ro, [cx, cy])?;
        let grid = if spec.is_disk() {
            let d = ((ro.ln() - t_lo) / std::f64::consts::LN_2).round() as u32;
            LogPolarGrid::disk(spec, nt, nr, d)?
        } else {
            LogPolarGrid::annulus(spec, nt, nr)?
        };
        let mut values = vec![0.0; nt * nr * nc];
        let mut buf = [0u8; 8];
        for v in values.iter_mut() {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        Field::new(grid, nc, values)
    }

    pub fn save_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_binary(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load_binary(path: impl AsRef<Path>) -> Result<Field> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_binary(&mut f)
    }

    /// Plot-friendly CSV with columns `t, theta, c0, c1, …`.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string(), "theta".to_string()];
        header.extend((0..self.n_components).map(|c| format!("c{c}")));
        wr.write_record(&header)?;
        let g = &self.grid;
        for j in 0..g.n_radial() {
            for i in 0..g.n_theta() {
                let mut row = vec![g.t(j).to_string(), g.theta(i).to_string()];
                row.extend((0..self.n_components).map(|c| self.get(j, i, c).to_string()));
                wr.write_record(&row)?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

fn lagrange4(x: f64) -> [f64; 4] {
    // nodes 0, 1, 2, 3
    [
        -(x - 1.0) * (x - 2.0) * (x - 3.0) / 6.0,
        x * (x - 2.0) * (x - 3.0) / 2.0,
        -x * (x - 1.0) * (x - 3.0) / 2.0,
        x * (x - 1.0) * (x - 2.0) / 6.0,
    ]
}

/// Log-coordinate derivatives `(∂_t f, ∂_θ f)` of one component.
pub fn log_derivatives(f: &Field, c: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let data = f.component(c);
    let g = f.grid();
    Ok((g.d_t(&data)?, g.d_theta(&data)))
}

/// Cartesian gradient: components `2c` and `2c + 1` hold `∂_x f_c` and `∂_y f_c`.
pub fn gradient(f: &Field) -> Result<Field> {
    let g = f.grid().clone();
    let nc = f.n_components();
    let mut comps = Vec::with_capacity(2 * nc);
    for c in 0..nc {
        let (ft, fth) = log_derivatives(f, c)?;
        let (gx, gy) = to_cartesian(&g, &ft, &fth);
        comps.push(gx);
        comps.push(gy);
    }
    Field::from_components(&g, &comps)
}

/// Map log-coordinate derivatives to `(∂_x, ∂_y)`.
pub fn to_cartesian(g: &LogPolarGrid, ft: &[f64], fth: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let nt = g.n_theta();
    let mut gx = vec![0.0; ft.len()];
    let mut gy = vec![0.0; ft.len()];
    for j in 0..g.n_radial() {
        let e = (-g.t(j)).exp();
        for i in 0..nt {
            let k = j * nt + i;
            let (c, s) = (g.cos_theta(i), g.sin_theta(i));
            gx[k] = e * (c * ft[k] - s * fth[k]);
            gy[k] = e * (s * ft[k] + c * fth[k]);
        }
    }
    (gx, gy)
}

/// Second-order finite-difference gradient (central in `t` and `θ`), the
/// low-order reference for the spectral/fourth-order operator.
pub fn gradient_fd2(f: &Field) -> Result<Field> {
    let g = f.grid().clone();
    let (nr, nt) = (g.n_radial(), g.n_theta());
    if nr < 3 {
        return invalid("second-order stencil needs n_radial >= 3");
    }
    let h = g.h();
    let dth = g.dtheta();
    let mut comps = Vec::new();
    for c in 0..f.n_components() {
        let d = f.component(c);
        let at = |j: usize, i: usize| d[j * nt + i];
        let mut ft = vec![0.0; d.len()];
        let mut fth = vec![0.0; d.len()];
        for j in 0..nr {
            for i in 0..nt {
                ft[j * nt + i] = if j == 0 {
                    (-3.0 * at(0, i) + 4.0 * at(1, i) - at(2, i)) / (2.0 * h)
                } else if j == nr - 1 {
                    (3.0 * at(j, i) - 4.0 * at(j - 1, i) + at(j - 2, i)) / (2.0 * h)
                } else {
                    (at(j + 1, i) - at(j - 1, i)) / (2.0 * h)
                };
                fth[j * nt + i] = (at(j, (i + 1) % nt) - at(j, (i + nt - 1) % nt)) / (2.0 * dth);
            }
        }
        let (gx, gy) = to_cartesian(&g, &ft, &fth);
        comps.push(gx);
        comps.push(gy);
    }
    Field::from_components(&g, &comps)
}

/// Laplacian `e^{-2t}(∂_t² + ∂_θ²)` of a scalar field.
pub fn laplacian(f: &Field) -> Result<Field> {
    if f.n_components() != 1 {
        return invalid("laplacian expects a scalar field");
    }
    let g = f.grid().clone();
    let d = f.component(0);
    let ftt = g.d_t2(&d)?;
    let fthth = g.d_theta2(&d);
    let nt = g.n_theta();
    let values = (0..d.len()).map(|k| (-2.0 * g.t(k / nt)).exp() * (ftt[k] + fthth[k])).collect();
    Field::new(g, 1, values)
}

/// Split `∇f` into its radial part `∂_ρ f` and angular part `ρ⁻¹∂_θ f`.
pub fn angular_radial_split(f: &Field) -> Result<(Field, Field)> {
    let g = f.grid().clone();
    if g.is_disk() {
        return Err(Error::Unsupported(
            "angular/radial split needs an annulus grid (ρ⁻¹ is singular at the center)".into(),
        ));
    }
    let nt = g.n_theta();
    let mut radial = Vec::new();
    let mut angular = Vec::new();
    for c in 0..f.n_components() {
        let (ft, fth) = log_derivatives(f, c)?;
        radial.push(ft.iter().enumerate().map(|(k, v)| v * (-g.t(k / nt)).exp()).collect());
        angular.push(fth.iter().enumerate().map(|(k, v)| v * (-g.t(k / nt)).exp()).collect());
    }
    Ok((Field::from_components(&g, &radial)?, Field::from_components(&g, &angular)?))
}

/// `∫ f` over a concentric sub-region with overlap-clipped cells.
pub fn integrate(f: &Field, region: &AnnulusSpec) -> Result<f64> {
    if f.n_components() != 1 {
        return invalid("integrate expects a scalar field");
    }
    let g = f.grid();
    let w = g.clipped_ring_weights(region)?;
    Ok(weighted_sum(g, &w, f.values()))
}

/// `Σ_j w_j Σ_i data[j, i]` for ring-major scalar data.
pub fn weighted_sum(g: &LogPolarGrid, ring_weights: &[f64], data: &[f64]) -> f64 {
    let nt = g.n_theta();
    ring_weights
        .iter()
        .enumerate()
        .filter(|(_, w)| **w != 0.0)
        .map(|(j, w)| w * data[j * nt..(j + 1) * nt].iter().sum::<f64>())
        .sum()
}

/// Dirichlet energy `∫|∇f|²` summed over components.
pub fn dirichlet_energy(f: &Field, region: &AnnulusSpec) -> Result<f64> {
    integrate(&gradient(f)?.pointwise_norm_sq(), region)
}

/// An extension together with its measured energy ratio.
#[derive(Debug, Clone)]
pub struct Extension {
    pub field: Field,
    /// `∫_target |∇ũ|² / ∫_source |∇u|²`.
    pub energy_ratio: f64,
}

/// Empirical bound on [`Extension::energy_ratio`] for band-limited data.
pub const EXTENSION_ENERGY_BOUND: f64 = 4.0;

/// Resample `f` onto `target`; outside the source annulus the field is
/// reflected evenly in `t` and blended to the boundary-circle mean over one
/// reflected period (constant beyond it on the inner side).
pub fn restrict_extend(f: &Field, target: &Grid) -> Result<Extension> {
    let src = f.grid().clone();
    if !src.spec().concentric_with(target.spec()) {
        return Err(Error::RegionOutside("target grid is not concentric with the source".into()));
    }
    let (lo, hi) = src.t_range();
    let width = hi - lo;
    let (tt_lo, tt_hi) = target.t_range();
    if tt_hi > hi + 1e-12 && tt_hi - hi > width {
        return Err(Error::RegionOutside("outer extension beyond one reflected period".into()));
    }
    if tt_lo > hi || tt_hi < lo {
        return Err(Error::RegionOutside("target does not overlap the source".into()));
    }
    let nc = f.n_components();
    let nt = src.n_theta();
    let circle_mean =
        |j: usize| -> Vec<f64> { (0..nc).map(|c| (0..nt).map(|i| f.get(j, i, c)).sum::<f64>() / nt as f64).collect() };
    let inner_mean = circle_mean(0);
    let outer_mean = circle_mean(src.n_radial() - 1);
    let mut values = vec![0.0; target.n_nodes() * nc];
    let mut tmp = vec![0.0; nc];
    let tol = 1e-12 * (1.0 + width);
    for j in 0..target.n_radial() {
        let t = target.t(j);
        for i in 0..target.n_theta() {
            let th = target.theta(i);
            let out = &mut values[(j * target.n_theta() + i) * nc..][..nc];
            if t >= lo - tol && t <= hi + tol {
                f.interpolate(t.clamp(lo, hi), th, out);
                continue;
            }
            let (s, tr, mean) = if t < lo {
                ((lo - t) / width, 2.0 * lo - t, &inner_mean)
            } else {
                ((t - hi) / width, 2.0 * hi - t, &outer_mean)
            };
            if s >= 1.0 {
                out.copy_from_slice(mean);
                continue;
            }
            f.interpolate(tr, th, &mut tmp);
            let chi = 0.5 * (1.0 + (PI * s).cos());
            for c in 0..nc {
                out[c] = mean[c] + chi * (tmp[c] - mean[c]);
            }
        }
    }
    let field = Field::new(target.clone(), nc, values)?;
    let e_src = dirichlet_energy(f, src.spec())?;
    let e_tgt = dirichlet_energy(&field, target.spec())?;
    let energy_ratio = if e_src > 0.0 { e_tgt / e_src } else { 0.0 };
    Ok(Extension { field, energy_ratio })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ann(eps: f64, nt: usize, nr: usize) -> Grid {
        LogPolarGrid::annulus(AnnulusSpec::annulus(eps, 1.0).unwrap(), nt, nr).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(AnnulusSpec::annulus(1.0, 0.5).is_err());
        assert!(AnnulusSpec::annulus(-0.1, 0.5).is_err());
        assert!(AnnulusSpec::annulus(f64::NAN, 0.5).is_err());
        assert!(AnnulusSpec::disk(1.0).unwrap().is_disk());
    }

    #[test]
    fn area_of_annulus_and_disk() {
        for nr in [128, 300] {
            let g = ann(0.1, 128, nr);
            let one = Field::from_polar(&g, |_, _| 1.0);
            let a = integrate(&one, g.spec()).unwrap();
            assert!((a / g.spec().area() - 1.0).abs() < 1e-6, "{a}");
        }
        let d = LogPolarGrid::disk(AnnulusSpec::disk(1.0).unwrap(), 128, 128, 12).unwrap();
        let one = Field::from_polar(&d, |_, _| 1.0);
        assert!((integrate(&one, d.spec()).unwrap() - PI).abs() < 1e-3 * PI);
        let band = AnnulusSpec::annulus(0.25, 0.5).unwrap();
        let a = integrate(&one, &band).unwrap();
        assert!((a - PI * (0.25 - 0.0625)).abs() < 1e-3 * PI * 0.1875);
    }

    #[test]
    fn log_energy_is_exact_on_clipped_regions() {
        let eps = 2f64.powi(-10);
        let g = ann(eps, 16, 641);
        let e = Field::from_polar(&g, |r, _| 1.0 / (r * r));
        let v = integrate(&e, g.spec()).unwrap();
        assert!((v / (2.0 * PI * (1.0 / eps).ln()) - 1.0).abs() < 1e-12);
        let sub = AnnulusSpec::annulus(0.013, 0.4).unwrap();
        let v = integrate(&e, &sub).unwrap();
        assert!((v / (2.0 * PI * (0.4f64 / 0.013).ln()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_of_log_and_linear() {
        let g = ann(2f64.powi(-8), 64, 257);
        let f = Field::from_polar(&g, |r, _| r.ln());
        let gr = gradient(&f).unwrap().pointwise_norm();
        for j in 0..g.n_radial() {
            for i in 0..g.n_theta() {
                let rel = (gr.get(j, i, 0) * g.rho(j) - 1.0).abs();
                assert!(rel < 1e-8, "rel {rel}");
            }
        }
        let x = Field::from_xy(&g, |x, _| x);
        let gx = gradient(&x).unwrap();
        let fine = ann(2f64.powi(-8), 64, 1025);
        let xf = gradient(&Field::from_xy(&fine, |x, _| x)).unwrap();
        assert!(xf.values().chunks(2).all(|c| (c[0] - 1.0).abs() < 1e-6 && c[1].abs() < 1e-6));
        assert!(gx.values().chunks(2).all(|c| (c[0] - 1.0).abs() < 1e-4 && c[1].abs() < 1e-4));
    }

    #[test]
    fn cubic_energy_closed_form() {
        // |∇ Re z³|² = 9ρ⁴ so the energy on B_1 \ B_r is 3π(1 − r⁶).
        let g = LogPolarGrid::annulus(AnnulusSpec::annulus(1.0 / 16.0, 1.0).unwrap(), 16, 4096).unwrap();
        let f = Field::from_polar(&g, |r, th| r.powi(3) * (3.0 * th).cos());
        let e = dirichlet_energy(&f, g.spec()).unwrap();
        let exact = 3.0 * PI * (1.0 - 16f64.powi(-6));
        assert!((e / exact - 1.0).abs() < 1e-6, "{e} vs {exact}");
    }

    #[test]
    fn small_radial_grids_rejected() {
        let g = ann(0.5, 8, 7);
        assert!(gradient(&Field::zeros(&g, 1)).is_err());
    }

    #[test]
    fn split_is_pythagorean() {
        let g = ann(0.05, 32, 128);
        let f = Field::from_xy(&g, |x, y| (x * y).sin() + x * x * x);
        let (r, a) = angular_radial_split(&f).unwrap();
        let full = gradient(&f).unwrap().pointwise_norm_sq();
        for k in 0..g.n_nodes() {
            let s = r.values()[k].powi(2) + a.values()[k].powi(2);
            assert!((s - full.values()[k]).abs() <= 1e-10 * full.values()[k].max(1e-300));
        }
        let d = LogPolarGrid::disk(AnnulusSpec::disk(1.0).unwrap(), 16, 32, 6).unwrap();
        assert!(angular_radial_split(&Field::zeros(&d, 1)).is_err());
    }

    #[test]
    fn conformal_monomial_has_equal_split() {
        let g = ann(0.2, 64, 256);
        let f = Field::from_xy(&g, |x, _| x);
        let (r, a) = angular_radial_split(&f).unwrap();
        let er = integrate(&r.pointwise_norm_sq(), g.spec()).unwrap();
        let ea = integrate(&a.pointwise_norm_sq(), g.spec()).unwrap();
        assert!((er / ea - 1.0).abs() < 1e-8);
    }

    #[test]
    fn region_errors() {
        let g = ann(0.1, 16, 64);
        let one = Field::from_polar(&g, |_, _| 1.0);
        assert!(integrate(&one, &AnnulusSpec::annulus(0.05, 1.0).unwrap()).is_err());
        assert!(integrate(&one, &AnnulusSpec::annulus(0.2, 1.5).unwrap()).is_err());
        assert!(integrate(&one, &AnnulusSpec::new(0.2, 0.5, [0.1, 0.0]).unwrap()).is_err());
    }

    #[test]
    fn binary_and_csv_roundtrip() {
        let g = ann(0.1, 8, 16);
        let f = Field::from_polar_vec(&g, 2, |r, th, o| {
            o[0] = r * th.cos();
            o[1] = r.ln();
        });
        let mut buf = Vec::new();
        f.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 * 8 + 8 * f.values().len());
        let back = Field::read_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(back.values(), f.values());
        assert_eq!(**back.grid(), *g);
        let mut csv_buf = Vec::new();
        f.write_csv(&mut csv_buf).unwrap();
        let text = String::from_utf8(csv_buf).unwrap();
        assert_eq!(text.lines().count(), 1 + g.n_nodes());
        assert!(text.starts_with("t,theta,c0,c1"));
    }

    #[test]
    fn extension_matches_on_shared_nodes() {
        let eps = 2f64.powi(-6);
        let src = ann(eps, 32, 97);
        let f = Field::from_polar(&src, |r, _| r.ln());
        let same = restrict_extend(&f, &src).unwrap();
        assert!(same.field.axpy(-1.0, &f).unwrap().max_abs() < 1e-12);
        // Disk target sharing the source's radial nodes.
        let disk = LogPolarGrid::disk(AnnulusSpec::disk(1.0).unwrap(), 32, 193, 12).unwrap();
        let ext = restrict_extend(&f, &disk).unwrap();
        for j in 96..193 {
            for i in 0..32 {
                assert!((ext.field.get(j, i, 0) - disk.rho(j).ln()).abs() < 1e-12);
            }
        }
        assert!(ext.energy_ratio.is_finite());
    }

    #[test]
    fn outer_extension_limited_to_one_period() {
        let src = LogPolarGrid::annulus(AnnulusSpec::annulus(0.5, 1.0).unwrap(), 16, 32).unwrap();
        let f = Field::from_xy(&src, |x, _| x);
        let far = LogPolarGrid::annulus(AnnulusSpec::annulus(0.5, 4.0).unwrap(), 16, 64).unwrap();
        assert!(restrict_extend(&f, &far).is_err());
        let near = LogPolarGrid::annulus(AnnulusSpec::annulus(0.5, 1.5).unwrap(), 16, 64).unwrap();
        assert!(restrict_extend(&f, &near).is_ok());
    }
}
