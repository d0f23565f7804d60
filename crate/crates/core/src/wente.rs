//! Poisson and Wente-type solvers on log-polar disks and annuli, Hodge
//! splitting on disks, first-order systems `∇φ = Σ aᵢ∇^⊥bᵢ`, and the
//! conservation-law potentials of sphere-valued harmonic maps.
//!
//! Every solver works mode by mode: an FFT in `θ` turns `Δ` into
//! `e^{-2t}(∂_t² − k²)` on each Fourier coefficient.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lorentz;
use crate::numerics::{cumulative_integral, linear_fit, solve_tridiagonal};
use crate::polar_grid::{gradient, integrate, AnnulusSpec, Field, Grid, LogPolarGrid};
use crate::random::{normal, rng_tagged, Polynomial};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Condition imposed on one boundary circle.
#[derive(Debug, Clone, PartialEq)]
pub enum CircleCondition {
    Zero,
    /// Values at the grid angles `θ_i`.
    Dirichlet(Vec<f64>),
    /// Zero circle mean; every other mode has zero normal derivative.
    MeanZeroFree,
}

impl CircleCondition {
    fn mean(&self) -> f64 {
        match self {
            CircleCondition::Dirichlet(v) => v.iter().sum::<f64>() / v.len() as f64,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryCondition {
    /// Must be `None` on disk grids and `Some` on annuli.
    pub inner: Option<CircleCondition>,
    pub outer: CircleCondition,
    /// Require a zero mean on the inner circle.
    pub inner_mean_zero: bool,
    /// Require `|outer mean| ≤ K`.
    pub outer_mean_bound: Option<f64>,
}

impl BoundaryCondition {
    pub fn zero_disk() -> Self {
        Self { inner: None, outer: CircleCondition::Zero, inner_mean_zero: false, outer_mean_bound: None }
    }

    pub fn zero_annulus() -> Self {
        Self { inner: Some(CircleCondition::Zero), ..Self::zero_disk() }
    }

    pub fn dirichlet(inner: Vec<f64>, outer: Vec<f64>) -> Self {
        Self {
            inner: Some(CircleCondition::Dirichlet(inner)),
            outer: CircleCondition::Dirichlet(outer),
            inner_mean_zero: false,
            outer_mean_bound: None,
        }
    }

    /// Zero inner mean (other inner modes free) and a prescribed outer trace with `|mean| ≤ K`.
    pub fn mean_normalized(outer: Vec<f64>, k: f64) -> Self {
        Self {
            inner: Some(CircleCondition::MeanZeroFree),
            outer: CircleCondition::Dirichlet(outer),
            inner_mean_zero: true,
            outer_mean_bound: Some(k),
        }
    }

    fn validate(&self, g: &LogPolarGrid) -> Result<()> {
        match (&self.inner, g.is_disk()) {
            (Some(_), true) => return Err(Error::Incompatible("disk grids carry only an outer condition".into())),
            (None, false) => return Err(Error::Incompatible("annulus grids need an inner condition".into())),
            _ => {}
        }
        for c in self.inner.iter().chain(std::iter::once(&self.outer)) {
            if let CircleCondition::Dirichlet(v) = c {
                if v.len() != g.n_theta() {
                    return invalid(format!("trace has {} samples, grid has n_theta = {}", v.len(), g.n_theta()));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return invalid("trace contains non-finite values");
                }
            }
        }
        if self.inner_mean_zero {
            let c = self.inner.as_ref().unwrap_or(&CircleCondition::Zero);
            let scale = match c {
                CircleCondition::Dirichlet(v) => v.iter().fold(0.0f64, |m, x| m.max(x.abs())),
                _ => 0.0,
            };
            if c.mean().abs() > 1e-12 * (1.0 + scale) {
                return Err(Error::Incompatible(format!("inner mean {} must vanish", c.mean())));
            }
        }
        if let Some(k) = self.outer_mean_bound {
            if self.outer.mean().abs() > k * (1.0 + 1e-12) {
                return Err(Error::Incompatible(format!("outer mean {} exceeds K = {k}", self.outer.mean())));
            }
        }
        Ok(())
    }
}

fn trace_modes(trace: &[f64], g: &LogPolarGrid) -> Vec<Complex64> {
    g.ring_modes(trace)
}

/// Second-order solve of `Δφ = rhs` with per-mode tridiagonal systems in `t`.
/// On disks the innermost ring carries the regularity condition `∂_t φ̂_k = |k| φ̂_k`.
pub fn poisson_solve(rhs: &Field, bc: &BoundaryCondition) -> Result<Field> {
    if rhs.n_components() != 1 {
        return invalid("poisson_solve expects a scalar right-hand side");
    }
    let g = rhs.grid().clone();
    bc.validate(&g)?;
    let (nr, nt, h) = (g.n_radial(), g.n_theta(), g.h());
    if nr < 3 {
        return invalid("poisson_solve needs n_radial >= 3");
    }
    let mut src = g.ring_modes(rhs.values());
    for j in 0..nr {
        let w = (2.0 * g.t(j)).exp();
        src[j * nt..(j + 1) * nt].iter_mut().for_each(|c| *c *= w);
    }
    let modes_of = |c: &CircleCondition| match c {
        CircleCondition::Dirichlet(v) => Some(trace_modes(v, &g)),
        _ => None,
    };
    let inner_modes = bc.inner.as_ref().and_then(modes_of);
    let outer_modes = modes_of(&bc.outer);
    let a = 1.0 / (h * h);
    let columns: Vec<Vec<Complex64>> = (0..nt)
        .into_par_iter()
        .map(|m| {
            let k = g.wavenumber(m);
            let k2 = (k * k) as f64;
            let mut lower = vec![a; nr];
            let mut diag = vec![-2.0 * a - k2; nr];
            let mut upper = vec![a; nr];
            let mut r: Vec<Complex64> = (0..nr).map(|j| src[j * nt + m]).collect();
            if g.is_disk() {
                upper[0] = 2.0 * a;
                if k == 0 {
                    let r0 = r[0];
                    r[0] += r0 / h;
                } else {
                    diag[0] -= 2.0 * a * h * k.abs() as f64;
                }
            } else {
                match bc.inner.as_ref().expect("validated") {
                    CircleCondition::MeanZeroFree if k != 0 => upper[0] = 2.0 * a,
                    c => {
                        diag[0] = 1.0;
                        upper[0] = 0.0;
                        r[0] = match c {
                            CircleCondition::Dirichlet(_) => inner_modes.as_ref().expect("dirichlet")[m],
                            _ => ZERO,
                        };
                    }
                }
            }
            match &bc.outer {
                CircleCondition::MeanZeroFree if k != 0 => lower[nr - 1] = 2.0 * a,
                c => {
                    diag[nr - 1] = 1.0;
                    lower[nr - 1] = 0.0;
                    r[nr - 1] = match c {
                        CircleCondition::Dirichlet(_) => outer_modes.as_ref().expect("dirichlet")[m],
                        _ => ZERO,
                    };
                }
            }
            solve_tridiagonal(&lower, &diag, &upper, &mut r);
            r
        })
        .collect();
    let mut out = vec![ZERO; nr * nt];
    for (m, col) in columns.iter().enumerate() {
        for j in 0..nr {
            out[j * nt + m] = col[j];
        }
    }
    Field::new(g.clone(), 1, g.from_ring_modes(&out))
}

/// `a_x b_y − a_y b_x` from grid gradients.
pub fn jacobian(a: &Field, b: &Field) -> Result<Field> {
    if !a.same_grid(b) {
        return Err(Error::GridMismatch);
    }
    if a.n_components() != 1 || b.n_components() != 1 {
        return invalid("jacobian expects scalar fields");
    }
    let ga = gradient(a)?;
    let gb = gradient(b)?;
    let va = ga.values();
    let vb = gb.values();
    let values = (0..a.grid().n_nodes()).map(|k| va[2 * k] * vb[2 * k + 1] - va[2 * k + 1] * vb[2 * k]).collect();
    Field::new(a.grid().clone(), 1, values)
}

/// Which estimate a Wente solve instantiates; inferred from the boundary condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WenteLemma {
    /// Zero trace on a disk.
    Disk,
    /// Zero trace on both circles of an annulus.
    ZeroTrace,
    /// Zero inner mean, bounded outer mean.
    MeanNormalized,
    /// Arbitrary bounded traces.
    BoundedTraces,
}

impl WenteLemma {
    pub fn name(self) -> &'static str {
        match self {
            WenteLemma::Disk => "wente",
            WenteLemma::ZeroTrace => "l4",
            WenteLemma::MeanNormalized => "2.2",
            WenteLemma::BoundedTraces => "LR0",
        }
    }

    fn of(bc: &BoundaryCondition, disk: bool) -> Self {
        if disk {
            WenteLemma::Disk
        } else if bc.inner_mean_zero || bc.inner == Some(CircleCondition::MeanZeroFree) {
            WenteLemma::MeanNormalized
        } else if bc.inner == Some(CircleCondition::Zero) && bc.outer == CircleCondition::Zero {
            WenteLemma::ZeroTrace
        } else {
            WenteLemma::BoundedTraces
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WenteReport {
    pub lemma: WenteLemma,
    /// `r_inner / r_outer` (0 on disks).
    pub epsilon: f64,
    pub lambda: f64,
    pub grad_a_l2: f64,
    pub grad_b_l2: f64,
    pub phi_sup: f64,
    pub grad_phi_l2: f64,
    /// On the restricted annulus of the lemma.
    pub grad_phi_l21: f64,
    /// `‖∇φ‖_{2,1} / (‖∇a‖₂‖∇b‖₂)`.
    pub ratio: f64,
    /// `‖∇φ‖_{2,1}` over the lemma's own right-hand side.
    pub lemma_ratio: f64,
}

/// Restricted annulus of each estimate: `B_R \ B_{λr}` (λ > 1) for zero traces,
/// `B_{λR} \ B_{r/λ}` (λ < 1) for the normalized and bounded-trace variants.
pub fn restricted_region(spec: &AnnulusSpec, lemma: WenteLemma, lambda: f64) -> Result<AnnulusSpec> {
    let (r, big_r, c) = (spec.r_inner, spec.r_outer, spec.center);
    match lemma {
        WenteLemma::Disk => Ok(*spec),
        WenteLemma::ZeroTrace => {
            if !(lambda > 1.0) {
                return invalid("zero-trace estimate needs λ > 1");
            }
            AnnulusSpec::new(lambda * r, big_r, c)
        }
        _ => {
            if !(lambda > 0.0 && lambda < 1.0) {
                return invalid("normalized and bounded-trace estimates need 0 < λ < 1");
            }
            AnnulusSpec::new(r / lambda, lambda * big_r, c)
        }
    }
}

/// Solve `Δφ = a_x b_y − a_y b_x` under `bc` and measure the Wente quantities.
pub fn wente_solve(a: &Field, b: &Field, bc: &BoundaryCondition, lambda: f64) -> Result<(Field, WenteReport)> {
    let rhs = jacobian(a, b)?;
    let phi = poisson_solve(&rhs, bc)?;
    let g = a.grid();
    let spec = *g.spec();
    let lemma = WenteLemma::of(bc, g.is_disk());
    let region = restricted_region(&spec, lemma, lambda)?;
    let grad_a_l2 = lorentz::l2_norm(&gradient(a)?, &spec)?;
    let grad_b_l2 = lorentz::l2_norm(&gradient(b)?, &spec)?;
    let gphi = gradient(&phi)?;
    let grad_phi_l2 = lorentz::l2_norm(&gphi, &spec)?;
    let grad_phi_l21 = lorentz::l21_levelset(&gphi, &region)?.value;
    let phi_sup = phi.max_abs();
    let ab = grad_a_l2 * grad_b_l2;
    let lemma_rhs = match lemma {
        WenteLemma::Disk | WenteLemma::ZeroTrace => ab,
        WenteLemma::MeanNormalized => ab + grad_phi_l2 + 1.0,
        WenteLemma::BoundedTraces => ab + phi_sup,
    };
    let report = WenteReport {
        lemma,
        epsilon: spec.r_inner / spec.r_outer,
        lambda,
        grad_a_l2,
        grad_b_l2,
        phi_sup,
        grad_phi_l2,
        grad_phi_l21,
        ratio: grad_phi_l21 / ab,
        lemma_ratio: grad_phi_l21 / lemma_rhs,
    };
    Ok((phi, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lr1Report {
    pub epsilon: f64,
    pub lambda: f64,
    pub grad_a_weak: f64,
    pub grad_b_l2: f64,
    /// `‖∇φ₀‖₂` of the circle-mean profile.
    pub grad_phi0_l2: f64,
    pub grad_phi_weak: f64,
    /// `‖∇φ‖_{L²}` on the restricted annulus.
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    /// Largest `|∮ ∂_ν v|` over circles, relative to `∮|∇φ|`, for the mean-free harmonic part `v`.
    pub max_flux: f64,
}

/// Circle means `φ₀(ρ_j)` of a scalar field.
pub fn circle_means(f: &Field) -> Vec<f64> {
    let nt = f.grid().n_theta();
    f.values().chunks(nt).map(|r| r.iter().sum::<f64>() / nt as f64).collect()
}

/// Solve with the given traces and test the `L²` estimate driven by `‖∇a‖_{2,∞}`.
pub fn lr1_solve(a: &Field, b: &Field, inner: Vec<f64>, outer: Vec<f64>, lambda: f64) -> Result<Lr1Report> {
    let g = a.grid().clone();
    let spec = *g.spec();
    if g.is_disk() {
        return Err(Error::Unsupported("the weak-gradient estimate lives on annuli".into()));
    }
    let rhs = jacobian(a, b)?;
    let phi = poisson_solve(&rhs, &BoundaryCondition::dirichlet(inner, outer))?;
    let zero = poisson_solve(&rhs, &BoundaryCondition::zero_annulus())?;
    let region = restricted_region(&spec, WenteLemma::BoundedTraces, lambda)?;

    let means = circle_means(&phi);
    let dmean = profile_derivative(&g, &means);
    let phi0_sq: Vec<f64> = (0..g.n_radial()).map(|j| (dmean[j] * (-g.t(j)).exp()).powi(2)).collect();
    let weights = g.clipped_ring_weights(&spec)?;
    let e0: f64 = phi0_sq.iter().zip(&weights).map(|(v, w)| v * w * g.n_theta() as f64).sum();
    if !e0.is_finite() {
        return invalid("circle-mean profile has divergent energy");
    }
    let grad_phi0_l2 = e0.sqrt();

    let gphi = gradient(&phi)?;
    let grad_phi_weak = lorentz::lorentz_norm(&gphi, 2.0, f64::INFINITY, &spec)?.value;
    let grad_a_weak = lorentz::lorentz_norm(&gradient(a)?, 2.0, f64::INFINITY, &spec)?.value;
    let grad_b_l2 = lorentz::l2_norm(&gradient(b)?, &spec)?;
    let lhs = lorentz::l2_norm(&gphi, &region)?;
    let rhs_bound = grad_a_weak * grad_b_l2 + grad_phi0_l2 + grad_phi_weak;

    // v: harmonic, mean-free part of φ minus the zero-trace solution.
    let diff = phi.axpy(-1.0, &zero)?;
    let dm = circle_means(&diff);
    let nt = g.n_theta();
    let v: Vec<f64> = diff.values().iter().enumerate().map(|(k, x)| x - dm[k / nt]).collect();
    let vt = g.d_t(&v)?;
    let (pt, pth) = crate::polar_grid::log_derivatives(&phi, 0)?;
    let mut max_flux: f64 = 0.0;
    for j in 0..g.n_radial() {
        let flux: f64 = vt[j * nt..(j + 1) * nt].iter().sum::<f64>();
        let scale: f64 = (0..nt).map(|i| pt[j * nt + i].hypot(pth[j * nt + i])).sum::<f64>();
        if scale > 0.0 {
            max_flux = max_flux.max(flux.abs() / scale);
        }
    }
    Ok(Lr1Report {
        epsilon: spec.r_inner / spec.r_outer,
        lambda,
        grad_a_weak,
        grad_b_l2,
        grad_phi0_l2,
        grad_phi_weak,
        lhs,
        rhs: rhs_bound,
        ratio: lhs / rhs_bound,
        max_flux,
    })
}

/// Fourth-order `d/dt` of a per-ring profile.
fn profile_derivative(g: &LogPolarGrid, prof: &[f64]) -> Vec<f64> {
    let nr = prof.len();
    let s = 1.0 / (12.0 * g.h());
    (0..nr)
        .map(|j| {
            let f = |k: usize| prof[k];
            s * if j >= 2 && j + 2 < nr {
                -f(j + 2) + 8.0 * f(j + 1) - 8.0 * f(j - 1) + f(j - 2)
            } else if j == 0 {
                -25.0 * f(0) + 48.0 * f(1) - 36.0 * f(2) + 16.0 * f(3) - 3.0 * f(4)
            } else if j == 1 {
                -3.0 * f(0) - 10.0 * f(1) + 18.0 * f(2) - 6.0 * f(3) + f(4)
            } else if j == nr - 1 {
                25.0 * f(j) - 48.0 * f(j - 1) + 36.0 * f(j - 2) - 16.0 * f(j - 3) + 3.0 * f(j - 4)
            } else {
                3.0 * f(j + 1) + 10.0 * f(j) - 18.0 * f(j - 1) + 6.0 * f(j - 2) - f(j - 3)
            }
        })
        .collect()
}

/// `(ρF_ρ, ρF_θ)` of a Cartesian 2-vector stored in components `c, c + 1`.
fn log_components(f: &Field, c: usize) -> (Vec<f64>, Vec<f64>) {
    let g = f.grid();
    let nt = g.n_theta();
    let mut p = vec![0.0; g.n_nodes()];
    let mut q = vec![0.0; g.n_nodes()];
    for j in 0..g.n_radial() {
        let rho = g.rho(j);
        for i in 0..nt {
            let (fx, fy) = (f.get(j, i, c), f.get(j, i, c + 1));
            let (cs, sn) = (g.cos_theta(i), g.sin_theta(i));
            p[j * nt + i] = rho * (cs * fx + sn * fy);
            q[j * nt + i] = rho * (-sn * fx + cs * fy);
        }
    }
    (p, q)
}

/// Scalar with `(∂_tφ, ∂_θφ) ≈ (p, q)`: nonzero modes from `q`, the circle mean
/// by integrating the mean of `p` outward from the inner ring. Also returns the
/// per-ring mean of `q`, which a single-valued `φ` cannot absorb.
fn integrate_log_gradient(g: &LogPolarGrid, p: &[f64], q: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let nt = g.n_theta();
    let mut modes = g.ring_modes(q);
    let pm = circle_mean_of(g, p);
    let qm: Vec<f64> = modes.chunks(nt).map(|r| r[0].re).collect();
    let mean = cumulative_integral(&pm, g.h());
    for (j, ring) in modes.chunks_mut(nt).enumerate() {
        for (m, c) in ring.iter_mut().enumerate() {
            let k = g.wavenumber(m);
            *c = if m == 0 {
                Complex64::new(mean[j], 0.0)
            } else if 2 * k.unsigned_abs() as usize == nt {
                ZERO
            } else {
                *c / Complex64::new(0.0, k as f64)
            };
        }
    }
    (g.from_ring_modes(&modes), qm)
}

fn circle_mean_of(g: &LogPolarGrid, data: &[f64]) -> Vec<f64> {
    let nt = g.n_theta();
    data.chunks(nt).map(|r| r.iter().sum::<f64>() / nt as f64).collect()
}

/// `∇^⊥f = (−∂_y f, ∂_x f)` for each component.
pub fn perp_gradient(f: &Field) -> Result<Field> {
    let gr = gradient(f)?;
    let g = f.grid().clone();
    let mut v = gr.into_values();
    for pair in v.chunks_mut(2) {
        let (x, y) = (pair[0], pair[1]);
        pair[0] = -y;
        pair[1] = x;
    }
    Field::new(g, 2 * f.n_components(), v)
}

/// Hodge pieces `F = ∇C + ∇^⊥D` on a disk with `C = 0` on the boundary.
#[derive(Debug, Clone)]
pub struct Hodge {
    pub c: Field,
    pub d: Field,
}

/// Split a planar vector field on a disk grid. Nonzero modes of `C` come from a
/// fourth-order compact (Numerov) solve of `Ĉ'' − k²Ĉ = (ρF_ρ)^' + ik(ρF_θ)^`; `D̂`
/// then follows from the radial component, so `ρF_ρ` is reproduced exactly.
pub fn hodge_decompose(f: &Field) -> Result<Hodge> {
    let g = f.grid().clone();
    if !g.is_disk() {
        return Err(Error::Unsupported("Hodge splitting with periods on annuli is out of scope".into()));
    }
    if f.n_components() != 2 {
        return invalid("hodge_decompose expects a 2-component field");
    }
    let (nr, nt, h) = (g.n_radial(), g.n_theta(), g.h());
    let (p, q) = log_components(f, 0);
    let dp = g.d_t(&p)?;
    let pm = g.ring_modes(&p);
    let dpm = g.ring_modes(&dp);
    let qm = g.ring_modes(&q);
    let columns: Vec<Vec<Complex64>> = (0..nt)
        .into_par_iter()
        .map(|m| {
            let k = g.wavenumber(m);
            if m == 0 || 2 * k.unsigned_abs() as usize == nt {
                return vec![ZERO; nr];
            }
            let kf = k as f64;
            let s: Vec<Complex64> =
                (0..nr).map(|j| dpm[j * nt + m] + Complex64::new(0.0, kf) * qm[j * nt + m]).collect();
            let e = kf * kf * h * h / 12.0;
            let off = 1.0 - e;
            let mut lower = vec![off; nr];
            let mut diag = vec![-2.0 - 10.0 * e; nr];
            let mut upper = vec![off; nr];
            let mut r = vec![ZERO; nr];
            for j in 1..nr - 1 {
                r[j] = (s[j - 1] + s[j] * 10.0 + s[j + 1]) * (h * h / 12.0);
            }
            // Regular modes vanish like ρ^|k| at the innermost ring; the outer trace is zero.
            diag[0] = 1.0;
            upper[0] = 0.0;
            diag[nr - 1] = 1.0;
            lower[nr - 1] = 0.0;
            solve_tridiagonal(&lower, &diag, &upper, &mut r);
            r
        })
        .collect();
    let mut cm = vec![ZERO; nr * nt];
    for (m, col) in columns.iter().enumerate() {
        for j in 0..nr {
            cm[j * nt + m] = col[j];
        }
    }
    // Mean of C: Ĉ₀' = (ρF_ρ)₀ with Ĉ₀ = 0 on the outer circle.
    let p0: Vec<f64> = (0..nr).map(|j| pm[j * nt].re).collect();
    let c0 = cumulative_integral(&p0, h);
    for j in 0..nr {
        cm[j * nt] = Complex64::new(c0[j] - c0[nr - 1], 0.0);
    }
    let c_vals = g.from_ring_modes(&cm);
    // D̂_k = (∂_tĈ − (ρF_ρ)^)/(ik); D̂₀' = (ρF_θ)₀.
    let dct = g.ring_modes(&g.d_t(&c_vals)?);
    let q0: Vec<f64> = (0..nr).map(|j| qm[j * nt].re).collect();
    let d0 = cumulative_integral(&q0, h);
    let mut dm = vec![ZERO; nr * nt];
    for j in 0..nr {
        for m in 0..nt {
            let k = g.wavenumber(m);
            dm[j * nt + m] = if m == 0 {
                Complex64::new(d0[j] - d0[nr - 1], 0.0)
            } else if 2 * k.unsigned_abs() as usize == nt {
                ZERO
            } else {
                (dct[j * nt + m] - pm[j * nt + m]) / Complex64::new(0.0, k as f64)
            };
        }
    }
    let d_vals = g.from_ring_modes(&dm);
    Ok(Hodge { c: Field::new(g.clone(), 1, c_vals)?, d: Field::new(g, 1, d_vals)? })
}

/// Diagnostics of a Hodge split, all relative to `‖F‖₂²` (or `‖F‖₂` for the residual).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HodgeCheck {
    pub orthogonality: f64,
    pub energy_split: f64,
    pub residual: f64,
    pub boundary_c: f64,
}

pub fn hodge_check(f: &Field, hd: &Hodge) -> Result<HodgeCheck> {
    let spec = *f.grid().spec();
    let gc = gradient(&hd.c)?;
    let gd = perp_gradient(&hd.d)?;
    let f2 = integrate(&f.pointwise_norm_sq(), &spec)?;
    let dot = Field::new(
        f.grid().clone(),
        1,
        gc.values().chunks(2).zip(gd.values().chunks(2)).map(|(a, b)| a[0] * b[0] + a[1] * b[1]).collect(),
    )?;
    let cross = integrate(&dot, &spec)?;
    let ec = integrate(&gc.pointwise_norm_sq(), &spec)?;
    let ed = integrate(&gd.pointwise_norm_sq(), &spec)?;
    let res = f.axpy(-1.0, &gc)?.axpy(-1.0, &gd)?;
    let r2 = integrate(&res.pointwise_norm_sq(), &spec)?;
    let g = f.grid();
    let last = g.n_radial() - 1;
    let boundary_c = (0..g.n_theta()).map(|i| hd.c.get(last, i, 0).abs()).fold(0.0, f64::max);
    Ok(HodgeCheck {
        orthogonality: cross.abs() / f2,
        energy_split: (f2 - ec - ed).abs() / f2,
        residual: (r2 / f2).sqrt(),
        boundary_c,
    })
}

/// One term `a ∇^⊥b` of a first-order system; `b` may carry a period `p`
/// (its multivalued part `pθ/2π` is added analytically).
#[derive(Debug, Clone)]
pub struct FirstOrderPair {
    pub a: Field,
    pub b: Field,
    pub b_period: f64,
}

#[derive(Debug, Clone)]
pub struct FirstOrderSolution {
    pub phi: Field,
    /// `‖ρ curl G‖₂ / ‖G‖₂`.
    pub compatibility: f64,
    /// Least-squares slope of the circle-mean profile against `ln ρ`.
    pub d0: f64,
    /// `‖∇φ − G‖₂ / ‖G‖₂`.
    pub gradient_residual: f64,
    /// `Σ ‖∇aᵢ‖₂ ‖∇bᵢ‖₂`.
    pub pair_energy: f64,
}

/// Threshold on the compatibility defect above which `G` is treated as not closed.
pub const COMPATIBILITY_TOL: f64 = 1e-4;

/// `G = Σ aᵢ ∇^⊥bᵢ` as a 2-component field.
pub fn first_order_field(pairs: &[FirstOrderPair]) -> Result<Field> {
    let first = pairs.first().ok_or_else(|| Error::Invalid("no pairs given".into()))?;
    let g = first.a.grid().clone();
    let mut acc = Field::zeros(&g, 2);
    for pr in pairs {
        if !pr.a.same_grid(&first.a) || !pr.b.same_grid(&first.a) {
            return Err(Error::GridMismatch);
        }
        let pb = full_perp_gradient(&pr.b, pr.b_period)?;
        let term =
            Field::new(g.clone(), 2, pb.values().iter().enumerate().map(|(k, v)| v * pr.a.values()[k / 2]).collect())?;
        acc = acc.axpy(1.0, &term)?;
    }
    Ok(acc)
}

/// `∇^⊥(b + pθ/2π) = ∇^⊥b − (p/2π)∇ln ρ`.
fn full_perp_gradient(b: &Field, period: f64) -> Result<Field> {
    let mut pb = perp_gradient(b)?;
    if period != 0.0 {
        if b.grid().is_disk() {
            return Err(Error::Unsupported("periods need an annulus".into()));
        }
        let s = period / (2.0 * PI);
        let lg = Field::from_xy_vec(b.grid(), 2, |x, y, out| {
            let c = b.grid().spec().center;
            let (dx, dy) = (x - c[0], y - c[1]);
            let r2 = dx * dx + dy * dy;
            out[0] = dx / r2;
            out[1] = dy / r2;
        });
        pb = pb.axpy(-s, &lg)?;
    }
    Ok(pb)
}

/// Recover `φ` with `∇φ = Σ aᵢ∇^⊥bᵢ` by line integration in log-polar coordinates.
pub fn first_order_reconstruct(pairs: &[FirstOrderPair]) -> Result<FirstOrderSolution> {
    let gf = first_order_field(pairs)?;
    let g = gf.grid().clone();
    let spec = *g.spec();
    let (p, q) = log_components(&gf, 0);
    let nt = g.n_theta();
    let dqt = g.d_t(&q)?;
    let dpth = g.d_theta(&p);
    let curl = Field::new(g.clone(), 1, (0..g.n_nodes()).map(|k| (-g.t(k / nt)).exp() * (dqt[k] - dpth[k])).collect())?;
    let g_norm = lorentz::l2_norm(&gf, &spec)?;
    if g_norm == 0.0 {
        return invalid("target field vanishes identically");
    }
    let compatibility = lorentz::l2_norm(&curl, &spec)? / g_norm;
    if compatibility > COMPATIBILITY_TOL {
        return Err(Error::NotClosed(compatibility));
    }
    let (phi_vals, _) = integrate_log_gradient(&g, &p, &q);
    let phi = Field::new(g.clone(), 1, phi_vals)?;
    let means = circle_means(&phi);
    let ts: Vec<f64> = (0..g.n_radial()).map(|j| g.t(j)).collect();
    let (d0, _) = linear_fit(&ts, &means);
    let res = gradient(&phi)?.axpy(-1.0, &gf)?;
    let gradient_residual = lorentz::l2_norm(&res, &spec)? / g_norm;
    let mut pair_energy = 0.0;
    for pr in pairs {
        let ga = lorentz::l2_norm(&gradient(&pr.a)?, &spec)?;
        let gb = lorentz::l2_norm(&full_perp_gradient(&pr.b, pr.b_period)?, &spec)?;
        pair_energy += ga * gb;
    }
    Ok(FirstOrderSolution { phi, compatibility, d0, gradient_residual, pair_energy })
}

/// Potentials `b^{ij}` with `∇^⊥b^{ij} = u^j∇u^i − u^i∇u^j`, stored as an
/// antisymmetric `m × m` field (component `i·m + j`).
#[derive(Debug, Clone)]
pub struct ConservationPotential {
    pub m: usize,
    pub b: Field,
    /// Flux `∮ ⋆(u^i du^j − u^j du^i)` per `(i, j)`: the period of `b^{ij}`.
    pub period: Vec<f64>,
    /// Circulation `∮ (u^i du^j − u^j du^i)` per `(i, j)`.
    pub circulation: Vec<f64>,
}

impl ConservationPotential {
    pub fn potential(&self, i: usize, j: usize) -> Field {
        self.b.component_field(i * self.m + j)
    }

    /// Period carried by `b^{ij}` (the full potential is `b^{ij} + period·θ/2π`).
    pub fn b_period(&self, i: usize, j: usize) -> f64 {
        self.period[i * self.m + j]
    }
}

/// Tolerance on `| |u| − 1 |` for sphere-valued input.
pub const SPHERE_TOL: f64 = 1e-6;

/// Integrate the closed forms `⋆(u^i du^j − u^j du^i)` of a sphere-valued map on an annulus.
pub fn conservation_law_potential(u: &Field) -> Result<ConservationPotential> {
    let g = u.grid().clone();
    if g.is_disk() {
        return Err(Error::Unsupported("potentials are built on annulus grids".into()));
    }
    let m = u.n_components();
    let norm = u.pointwise_norm();
    let dev = norm.values().iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    if dev > SPHERE_TOL {
        return invalid(format!("map is not sphere-valued: max ||u| − 1| = {dev:.3e}"));
    }
    let derivs: Vec<(Vec<f64>, Vec<f64>)> =
        (0..m).map(|c| crate::polar_grid::log_derivatives(u, c)).collect::<Result<_>>()?;
    let comps: Vec<Vec<f64>> = (0..m).map(|c| u.component(c)).collect();
    let mut b = vec![vec![0.0; g.n_nodes()]; m * m];
    let mut period = vec![0.0; m * m];
    let mut circulation = vec![0.0; m * m];
    for i in 0..m {
        for j in i + 1..m {
            // V = u^i∇u^j − u^j∇u^i in log components: (ρV_ρ, ρV_θ) = (V_t, V_θ).
            let vt: Vec<f64> =
                (0..g.n_nodes()).map(|k| comps[i][k] * derivs[j].0[k] - comps[j][k] * derivs[i].0[k]).collect();
            let vth: Vec<f64> =
                (0..g.n_nodes()).map(|k| comps[i][k] * derivs[j].1[k] - comps[j][k] * derivs[i].1[k]).collect();
            // ∇^⊥b = −V:  ∂_θ b = ρV_ρ,  ∂_t b = −ρV_θ.
            let neg_vth: Vec<f64> = vth.iter().map(|v| -v).collect();
            let (vals, rate) = integrate_log_gradient(&g, &neg_vth, &vt);
            let kappa = rate.iter().sum::<f64>() / rate.len() as f64;
            let scale = (0..g.n_nodes()).map(|k| vt[k].hypot(vth[k])).sum::<f64>() / g.n_nodes() as f64;
            let spread = rate.iter().map(|r| (r - kappa).abs()).fold(0.0, f64::max);
            if spread > 1e-6 * scale.max(1e-300) && spread > 1e-12 {
                return invalid(format!("radius-dependent period (spread {spread:.3e}); refine the grid"));
            }
            let circ = circle_mean_of(&g, &vth);
            let circ = 2.0 * PI * circ.iter().sum::<f64>() / circ.len() as f64;
            // Flux of V through circles: ∮ V·ν ds = ∫ ρV_ρ dθ = 2πκ.
            period[i * m + j] = 2.0 * PI * kappa;
            period[j * m + i] = -2.0 * PI * kappa;
            circulation[i * m + j] = circ;
            circulation[j * m + i] = -circ;
            b[j * m + i] = vals.iter().map(|v| -v).collect();
            b[i * m + j] = vals;
        }
    }
    Ok(ConservationPotential { m, b: Field::from_components(&g, &b)?, period, circulation })
}

/// First-order pairs `(u^j, b^{ij})` whose field `Σ_j u^j∇^⊥b^{ij}` equals `∇u^i` for harmonic `u`.
pub fn sphere_pairs(u: &Field, pot: &ConservationPotential, i: usize) -> Vec<FirstOrderPair> {
    (0..pot.m)
        .filter(|&j| j != i)
        .map(|j| FirstOrderPair { a: u.component_field(j), b: pot.potential(i, j), b_period: pot.b_period(i, j) })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqhsFit {
    /// Log coefficient `d` per component.
    pub d: Vec<f64>,
    /// `‖∇u − Σ u^j∇^⊥b^{ij} − ∇^⊥c − d∇ln ρ‖₂ / ‖∇u‖₂`.
    pub residual: f64,
}

/// Fit `∇u^i − Σ_j u^j∇^⊥b^{ij} = ∇^⊥c^i + d^i ∇ln ρ` and report the misfit.
pub fn eqhs_fit(u: &Field, pot: &ConservationPotential) -> Result<EqhsFit> {
    let g = u.grid().clone();
    let spec = *g.spec();
    let gu = gradient(u)?;
    let mut d = Vec::with_capacity(pot.m);
    let mut res2 = 0.0;
    for i in 0..pot.m {
        let target = Field::from_components(&g, &[gu.component(2 * i), gu.component(2 * i + 1)])?;
        let w = target.axpy(-1.0, &first_order_field(&sphere_pairs(u, pot, i))?)?;
        let (p, q) = log_components(&w, 0);
        let pm = circle_mean_of(&g, &p);
        let di = pm.iter().sum::<f64>() / pm.len() as f64;
        // Remove d∇ln ρ (log components (d, 0)); the rest is ∇^⊥c with ∂_t c = q, ∂_θ c = d − p.
        let neg_p: Vec<f64> = p.iter().map(|v| di - v).collect();
        let (c, _) = integrate_log_gradient(&g, &q, &neg_p);
        let pc = perp_gradient(&Field::new(g.clone(), 1, c)?)?;
        let lg = Field::from_xy_vec(&g, 2, |x, y, out| {
            let (x, y) = (x - spec.center[0], y - spec.center[1]);
            let r2 = x * x + y * y;
            out[0] = di * x / r2;
            out[1] = di * y / r2;
        });
        let r = w.axpy(-1.0, &pc)?.axpy(-1.0, &lg)?;
        res2 += integrate(&r.pointwise_norm_sq(), &spec)?;
        d.push(di);
    }
    let e = integrate(&gu.pointwise_norm_sq(), &spec)?;
    Ok(EqhsFit { d, residual: (res2 / e).sqrt() })
}

/// Inverse stereographic projection `ℂ → S²`.
pub fn inverse_stereographic(x: f64, y: f64) -> [f64; 3] {
    let r2 = x * x + y * y;
    let s = 1.0 / (1.0 + r2);
    [2.0 * x * s, 2.0 * y * s, (r2 - 1.0) * s]
}

/// Rotation matrix from a uniformly random unit quaternion.
pub fn random_rotation(rng: &mut impl Rng) -> [[f64; 3]; 3] {
    let mut q = [0.0; 4];
    let mut n = 0.0;
    while n < 1e-8 {
        q = [normal(rng), normal(rng), normal(rng), normal(rng)];
        n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    let [w, x, y, z] = q.map(|v| v / n);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
        [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
        [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Rotated degree-one bubble `R · π⁻¹(z/λ)` sampled on a grid.
pub fn bubble_field(grid: &Grid, lambda: f64, rot: &[[f64; 3]; 3]) -> Field {
    Field::from_xy_vec(grid, 3, |x, y, out| {
        let v = inverse_stereographic(x / lambda, y / lambda);
        for (r, o) in rot.iter().zip(out.iter_mut()) {
            *o = r[0] * v[0] + r[1] * v[1] + r[2] * v[2];
        }
    })
}

/// Random band-limited trace `mean + Σ_{n ≤ modes} (αₙ cos nθ + βₙ sin nθ)/n`.
pub fn random_trace(rng: &mut impl Rng, n_theta: usize, modes: usize, mean: f64) -> Vec<f64> {
    let coeffs: Vec<(f64, f64)> = (0..modes).map(|_| (normal(rng), normal(rng))).collect();
    (0..n_theta)
        .map(|i| {
            let th = 2.0 * PI * i as f64 / n_theta as f64;
            mean + coeffs
                .iter()
                .enumerate()
                .map(|(n, (a, b))| {
                    let k = (n + 1) as f64;
                    (a * (k * th).cos() + b * (k * th).sin()) / k
                })
                .sum::<f64>()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WenteSweepConfig {
    pub n_theta: usize,
    pub per_octave: usize,
    /// Polynomial degree of the random `a`, `b`.
    pub degree: usize,
    /// Fourier modes of random traces.
    pub trace_modes: usize,
    /// Outer-mean bound `K`.
    pub k_bound: f64,
    /// Weight of `ln ρ` added to `a` in the weak-gradient sweep.
    pub log_weight: f64,
    /// Radial nodes and dyadic depth of disk grids.
    pub disk_radial: usize,
    pub disk_depth: u32,
}

impl Default for WenteSweepConfig {
    fn default() -> Self {
        Self {
            n_theta: 32,
            per_octave: 32,
            degree: 4,
            trace_modes: 4,
            k_bound: 1.0,
            log_weight: 0.5,
            disk_radial: 513,
            disk_depth: 16,
        }
    }
}

/// One row of the Wente sweep CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WenteRow {
    pub lemma: String,
    pub epsilon: f64,
    pub lambda: f64,
    pub seed: u64,
    pub grad_a_l2: f64,
    pub grad_b_l2: f64,
    pub phi_sup: f64,
    pub grad_phi_l2: f64,
    pub grad_phi_l21: f64,
    pub ratio: f64,
    pub lemma_ratio: f64,
}

impl WenteRow {
    fn from_report(r: &WenteReport, seed: u64) -> Self {
        Self {
            lemma: r.lemma.name().into(),
            epsilon: r.epsilon,
            lambda: r.lambda,
            seed,
            grad_a_l2: r.grad_a_l2,
            grad_b_l2: r.grad_b_l2,
            phi_sup: r.phi_sup,
            grad_phi_l2: r.grad_phi_l2,
            grad_phi_l21: r.grad_phi_l21,
            ratio: r.ratio,
            lemma_ratio: r.lemma_ratio,
        }
    }
}

/// Annulus grid `B_1 \ B_ε` sized by the sweep configuration.
pub fn sweep_grid(eps: f64, cfg: &WenteSweepConfig) -> Result<Grid> {
    LogPolarGrid::annulus_per_octave(AnnulusSpec::annulus(eps, 1.0)?, cfg.n_theta, cfg.per_octave)
}

/// Random polynomial pair for a seed, each scaled to unit gradient norm on the grid.
pub fn random_pair(seed: u64, grid: &Grid, degree: usize) -> Result<(Field, Field)> {
    let spec = *grid.spec();
    let mut out = Vec::new();
    for tag in [0x21, 0x22] {
        let mut p = Polynomial::random(&mut rng_tagged(seed, tag), degree);
        let f = p.sample(grid);
        let n = lorentz::l2_norm(&gradient(&f)?, &spec)?;
        p.scale(1.0 / n);
        out.push(p.sample(grid));
    }
    let b = out.pop().expect("two fields");
    Ok((out.pop().expect("two fields"), b))
}

/// One Wente instance for `lemma` at `(ε, seed)`.
pub fn wente_instance(lemma: WenteLemma, eps: f64, seed: u64, cfg: &WenteSweepConfig) -> Result<WenteRow> {
    let grid = if lemma == WenteLemma::Disk {
        LogPolarGrid::disk(AnnulusSpec::disk(1.0)?, cfg.n_theta, cfg.disk_radial, cfg.disk_depth)?
    } else {
        sweep_grid(eps, cfg)?
    };
    let (a, b) = random_pair(seed, &grid, cfg.degree)?;
    let nt = cfg.n_theta;
    let mut rng = rng_tagged(seed, 0x23);
    let (bc, lambda) = match lemma {
        WenteLemma::Disk => (BoundaryCondition::zero_disk(), 1.0),
        WenteLemma::ZeroTrace => (BoundaryCondition::zero_annulus(), 2.0),
        WenteLemma::MeanNormalized => {
            let mean = cfg.k_bound * (2.0 * rng.random::<f64>() - 1.0);
            (BoundaryCondition::mean_normalized(random_trace(&mut rng, nt, cfg.trace_modes, mean), cfg.k_bound), 0.5)
        }
        WenteLemma::BoundedTraces => {
            let inner = {
                let m = normal(&mut rng);
                random_trace(&mut rng, nt, cfg.trace_modes, m)
            };
            let outer = {
                let m = normal(&mut rng);
                random_trace(&mut rng, nt, cfg.trace_modes, m)
            };
            (BoundaryCondition::dirichlet(inner, outer), 0.5)
        }
    };
    let (_, rep) = wente_solve(&a, &b, &bc, lambda)?;
    Ok(WenteRow::from_report(&rep, seed))
}

/// Run every `(ε, seed)` cell; rows sorted by `(seed, ε descending)`.
pub fn wente_sweep(lemma: WenteLemma, ladder: &[f64], seeds: &[u64], cfg: &WenteSweepConfig) -> Result<Vec<WenteRow>> {
    let ladder: Vec<f64> = if lemma == WenteLemma::Disk { vec![0.0] } else { ladder.to_vec() };
    let cells: Vec<(f64, u64)> = seeds.iter().flat_map(|&s| ladder.iter().map(move |&e| (e, s))).collect();
    let mut rows = cells.par_iter().map(|&(e, s)| wente_instance(lemma, e, s, cfg)).collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.seed.cmp(&b.seed).then(b.epsilon.total_cmp(&a.epsilon)));
    Ok(rows)
}

/// One row of the weak-gradient (LR1) sweep CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lr1Row {
    pub epsilon: f64,
    pub lambda: f64,
    pub seed: u64,
    pub grad_a_weak: f64,
    pub grad_b_l2: f64,
    pub grad_phi0_l2: f64,
    pub grad_phi_weak: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub max_flux: f64,
}

/// LR1 instance: `a = polynomial + w·ln ρ` (gradient bounded only in `L^{2,∞}`), random traces.
pub fn lr1_instance(eps: f64, seed: u64, cfg: &WenteSweepConfig) -> Result<Lr1Row> {
    let grid = sweep_grid(eps, cfg)?;
    let (a, b) = random_pair(seed, &grid, cfg.degree)?;
    let w = cfg.log_weight;
    let a = a.axpy(1.0, &Field::from_polar(&grid, |r, _| w * r.ln()))?;
    let mut rng = rng_tagged(seed, 0x24);
    let nt = cfg.n_theta;
    let inner = {
        let m = normal(&mut rng);
        random_trace(&mut rng, nt, cfg.trace_modes, m)
    };
    let outer = {
        let m = normal(&mut rng);
        random_trace(&mut rng, nt, cfg.trace_modes, m)
    };
    let r = lr1_solve(&a, &b, inner, outer, 0.5)?;
    Ok(Lr1Row {
        epsilon: r.epsilon,
        lambda: r.lambda,
        seed,
        grad_a_weak: r.grad_a_weak,
        grad_b_l2: r.grad_b_l2,
        grad_phi0_l2: r.grad_phi0_l2,
        grad_phi_weak: r.grad_phi_weak,
        lhs: r.lhs,
        rhs: r.rhs,
        ratio: r.ratio,
        max_flux: r.max_flux,
    })
}

pub fn lr1_sweep(ladder: &[f64], seeds: &[u64], cfg: &WenteSweepConfig) -> Result<Vec<Lr1Row>> {
    let cells: Vec<(f64, u64)> = seeds.iter().flat_map(|&s| ladder.iter().map(move |&e| (e, s))).collect();
    let mut rows = cells.par_iter().map(|&(e, s)| lr1_instance(e, s, cfg)).collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.seed.cmp(&b.seed).then(b.epsilon.total_cmp(&a.epsilon)));
    Ok(rows)
}

/// One row of the first-order sweep CSV (rotated bubble with scale `√ε`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstOrderRow {
    pub epsilon: f64,
    pub seed: u64,
    pub component: usize,
    pub d0: f64,
    /// `|d₀| ln(1/ε)`.
    pub d0_log: f64,
    pub pair_energy: f64,
    /// `|d₀| ln(1/ε) / Σ‖∇aᵢ‖₂‖∇bᵢ‖₂`.
    pub bound_ratio: f64,
    pub compatibility: f64,
    pub gradient_residual: f64,
    /// Sup distance to the generating component after removing the mean offset.
    pub truth_error: f64,
}

/// Reconstruct every component of a rotated bubble from its conservation-law pairs.
pub fn first_order_instance(eps: f64, seed: u64, cfg: &WenteSweepConfig) -> Result<Vec<FirstOrderRow>> {
    let grid = sweep_grid(eps, cfg)?;
    let rot = random_rotation(&mut rng_tagged(seed, 0x31));
    let u = bubble_field(&grid, eps.sqrt(), &rot);
    let pot = conservation_law_potential(&u)?;
    let mut rows = Vec::new();
    for i in 0..3 {
        let sol = first_order_reconstruct(&sphere_pairs(&u, &pot, i))?;
        let ui = u.component(i);
        let diff: Vec<f64> = sol.phi.values().iter().zip(&ui).map(|(a, b)| a - b).collect();
        let off = diff.iter().sum::<f64>() / diff.len() as f64;
        let truth_error = diff.iter().map(|d| (d - off).abs()).fold(0.0, f64::max);
        let l = (1.0 / eps).ln();
        rows.push(FirstOrderRow {
            epsilon: eps,
            seed,
            component: i,
            d0: sol.d0,
            d0_log: sol.d0.abs() * l,
            pair_energy: sol.pair_energy,
            bound_ratio: sol.d0.abs() * l / sol.pair_energy,
            compatibility: sol.compatibility,
            gradient_residual: sol.gradient_residual,
            truth_error,
        });
    }
    Ok(rows)
}

pub fn first_order_sweep(ladder: &[f64], seeds: &[u64], cfg: &WenteSweepConfig) -> Result<Vec<FirstOrderRow>> {
    let cells: Vec<(f64, u64)> = seeds.iter().flat_map(|&s| ladder.iter().map(move |&e| (e, s))).collect();
    let nested = cells.par_iter().map(|&(e, s)| first_order_instance(e, s, cfg)).collect::<Result<Vec<_>>>()?;
    let mut rows: Vec<FirstOrderRow> = nested.into_iter().flatten().collect();
    rows.sort_by(|a, b| a.seed.cmp(&b.seed).then(b.epsilon.total_cmp(&a.epsilon)).then(a.component.cmp(&b.component)));
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonic_annulus::{fit_harmonic, sample};
    use crate::random::rng;

    fn disk(nt: usize, nr: usize, depth: u32) -> Grid {
        LogPolarGrid::disk(AnnulusSpec::disk(1.0).unwrap(), nt, nr, depth).unwrap()
    }

    fn annulus(eps: f64, nt: usize, nr: usize) -> Grid {
        LogPolarGrid::annulus(AnnulusSpec::annulus(eps, 1.0).unwrap(), nt, nr).unwrap()
    }

    fn max_diff(a: &Field, b: &Field) -> f64 {
        a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn reproduces_logarithm() {
        let g = annulus(2f64.powi(-8), 8, 200);
        let nt = g.n_theta();
        let bc = BoundaryCondition::dirichlet(vec![g.t(0); nt], vec![0.0; nt]);
        let phi = poisson_solve(&Field::zeros(&g, 1), &bc).unwrap();
        assert!(max_diff(&phi, &Field::from_polar(&g, |r, _| r.ln())) < 1e-8);
    }

    #[test]
    fn quadratic_on_disk() {
        let g = disk(4, 1 << 17, 20);
        let phi = poisson_solve(&Field::from_polar(&g, |_, _| 4.0), &BoundaryCondition::zero_disk()).unwrap();
        let err = max_diff(&phi, &Field::from_polar(&g, |r, _| r * r - 1.0));
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn manufactured_second_order() {
        let err = |nr: usize| {
            let g = disk(8, nr, 12);
            let rhs = Field::from_polar(&g, |r, th| -8.0 * r * th.cos());
            let phi = poisson_solve(&rhs, &BoundaryCondition::zero_disk()).unwrap();
            max_diff(&phi, &Field::from_polar(&g, |r, th| (1.0 - r * r) * r * th.cos()))
        };
        let e: Vec<f64> = [129, 257, 513].iter().map(|&n| err(n)).collect();
        for w in e.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!((order - 2.0).abs() < 0.1, "{order}");
        }
    }

    #[test]
    fn harmonic_fit_agrees_with_solver() {
        let eps = 2f64.powi(-8);
        let g = annulus(eps, 16, 1 << 16);
        let mut r = rng(11);
        let inner = random_trace(&mut r, 16, 3, 0.3);
        let outer = random_trace(&mut r, 16, 3, -0.2);
        let h = fit_harmonic(&inner, &outer, g.spec()).unwrap();
        let phi = poisson_solve(&Field::zeros(&g, 1), &BoundaryCondition::dirichlet(inner, outer)).unwrap();
        let err = max_diff(&phi, &sample(&h, &g).unwrap());
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn maximum_principle() {
        let g = annulus(0.01, 32, 256);
        let mut r = rng(3);
        for _ in 0..50 {
            let (mi, mo) = (normal(&mut r), normal(&mut r));
            let inner = random_trace(&mut r, 32, 5, mi);
            let outer = random_trace(&mut r, 32, 5, mo);
            let bound = inner.iter().chain(&outer).fold(0.0f64, |m, v| m.max(v.abs()));
            let phi = poisson_solve(&Field::zeros(&g, 1), &BoundaryCondition::dirichlet(inner, outer)).unwrap();
            assert!(phi.max_abs() <= bound * (1.0 + 1e-10));
        }
    }

    #[test]
    fn boundary_conditions_are_checked() {
        let g = annulus(0.1, 8, 32);
        let rhs = Field::zeros(&g, 1);
        assert!(matches!(poisson_solve(&rhs, &BoundaryCondition::zero_disk()), Err(Error::Incompatible(_))));
        let d = disk(8, 32, 8);
        assert!(matches!(
            poisson_solve(&Field::zeros(&d, 1), &BoundaryCondition::zero_annulus()),
            Err(Error::Incompatible(_))
        ));
        let bad = BoundaryCondition::mean_normalized(vec![2.0; 8], 1.0);
        assert!(matches!(poisson_solve(&rhs, &bad), Err(Error::Incompatible(_))));
        let mut bad = BoundaryCondition::dirichlet(vec![1.0; 8], vec![0.0; 8]);
        bad.inner_mean_zero = true;
        assert!(matches!(poisson_solve(&rhs, &bad), Err(Error::Incompatible(_))));
        assert!(poisson_solve(&rhs, &BoundaryCondition::dirichlet(vec![0.0; 4], vec![0.0; 8])).is_err());
    }

    #[test]
    fn mean_zero_free_keeps_inner_mean() {
        let g = annulus(0.05, 16, 256);
        let mut r = rng(9);
        let outer = random_trace(&mut r, 16, 3, 0.5);
        let rhs = Field::from_xy(&g, |x, y| x * y + 1.0);
        let phi = poisson_solve(&rhs, &BoundaryCondition::mean_normalized(outer, 1.0)).unwrap();
        assert!(circle_means(&phi)[0].abs() < 1e-12);
    }

    #[test]
    fn jacobian_identities() {
        let g = disk(32, 4097, 20);
        let x = Field::from_xy(&g, |x, _| x);
        let y = Field::from_xy(&g, |_, y| y);
        let j = jacobian(&x, &y).unwrap();
        assert!(j.values().iter().all(|v| (v - 1.0).abs() < 1e-6));
        let mut r = rng(4);
        let (p, q) = (Polynomial::random(&mut r, 3), Polynomial::random(&mut r, 3));
        let a = Field::from_xy(&g, |x, y| (1.0 - x * x - y * y) * p.eval(x, y));
        let b = Field::from_xy(&g, |x, y| (1.0 - x * x - y * y) * q.eval(x, y));
        let jab = jacobian(&a, &b).unwrap();
        let jba = jacobian(&b, &a).unwrap();
        assert!(jab.values().iter().zip(jba.values()).all(|(u, v)| *u == -*v));
        assert!(jacobian(&a, &a).unwrap().values().iter().all(|v| *v == 0.0));
        let total = integrate(&jab, g.spec()).unwrap();
        assert!(total.abs() < 1e-6, "{total}");
    }

    #[test]
    fn wente_on_disk_with_coordinates() {
        let g = disk(16, 2049, 16);
        let x = Field::from_xy(&g, |x, _| x);
        let y = Field::from_xy(&g, |_, y| y);
        let (phi, rep) = wente_solve(&x, &y, &BoundaryCondition::zero_disk(), 1.0).unwrap();
        assert!(max_diff(&phi, &Field::from_polar(&g, |r, _| (r * r - 1.0) / 4.0)) < 1e-5);
        assert!((rep.phi_sup - 0.25).abs() < 1e-5);
        let c = Field::from_xy(&g, |_, _| 3.0);
        let (phi, _) = wente_solve(&c, &y, &BoundaryCondition::zero_disk(), 1.0).unwrap();
        assert!(phi.max_abs() < 1e-12);
    }

    #[test]
    fn hodge_examples() {
        let g = disk(16, 4097, 30);
        let f = Field::from_xy_vec(&g, 2, |x, y, o| {
            o[0] = 2.0 * x;
            o[1] = 2.0 * y;
        });
        let hd = hodge_decompose(&f).unwrap();
        assert!(max_diff(&hd.c, &Field::from_polar(&g, |r, _| r * r - 1.0)) < 1e-8);
        let gd = gradient(&hd.d).unwrap();
        assert!(gd.max_abs() < 1e-6);
        let f = Field::from_xy_vec(&g, 2, |x, y, o| {
            o[0] = -2.0 * y;
            o[1] = 2.0 * x;
        });
        let hd = hodge_decompose(&f).unwrap();
        let ec = integrate(&gradient(&hd.c).unwrap().pointwise_norm_sq(), g.spec()).unwrap();
        assert!(ec < 1e-8);
        let d = Field::from_polar(&g, |r, _| r * r);
        let off = hd.d.get(0, 0, 0) - d.get(0, 0, 0);
        assert!(hd.d.values().iter().zip(d.values()).all(|(a, b)| (a - b - off).abs() < 1e-8));
        assert!(matches!(hodge_decompose(&Field::zeros(&annulus(0.1, 8, 32), 2)), Err(Error::Unsupported(_))));
    }

    #[test]
    fn hodge_random_fields() {
        let g = disk(16, 8193, 30);
        let mut r = rng(21);
        for _ in 0..5 {
            let (p, q) = (Polynomial::random(&mut r, 4), Polynomial::random(&mut r, 4));
            let f = Field::from_xy_vec(&g, 2, |x, y, o| {
                o[0] = p.eval(x, y);
                o[1] = q.eval(x, y);
            });
            let chk = hodge_check(&f, &hodge_decompose(&f).unwrap()).unwrap();
            assert!(chk.orthogonality < 1e-8, "{chk:?}");
            assert!(chk.energy_split < 1e-6, "{chk:?}");
            assert!(chk.residual < 1e-6, "{chk:?}");
            assert!(chk.boundary_c < 1e-12, "{chk:?}");
        }
    }

    #[test]
    fn first_order_single_pair() {
        let g = annulus(0.05, 16, 400);
        let one = Field::from_xy(&g, |_, _| 1.0);
        let b = Field::from_xy(&g, |x, y| x * x - y * y);
        let sol = first_order_reconstruct(&[FirstOrderPair { a: one.clone(), b, b_period: 0.0 }]).unwrap();
        let truth = Field::from_xy(&g, |x, y| 2.0 * x * y);
        let off = sol.phi.get(0, 0, 0) - truth.get(0, 0, 0);
        assert!(sol.phi.values().iter().zip(truth.values()).all(|(a, b)| (a - b - off).abs() < 1e-6));
        assert!(sol.d0.abs() < 1e-8);
        let bad = Field::from_xy(&g, |x, y| x * x + y * y);
        let err = first_order_reconstruct(&[FirstOrderPair { a: one, b: bad, b_period: 0.0 }]).unwrap_err();
        assert!(matches!(err, Error::NotClosed(_)));
    }

    #[test]
    fn potentials_of_simple_maps() {
        let g = annulus(0.1, 16, 128);
        let c = Field::from_xy_vec(&g, 3, |_, _, o| {
            o[0] = 0.6;
            o[1] = 0.0;
            o[2] = 0.8;
        });
        let pot = conservation_law_potential(&c).unwrap();
        assert!(pot.b.max_abs() < 1e-12 && pot.period.iter().all(|p| p.abs() < 1e-12));
        let eq = Field::from_polar_vec(&g, 3, |_, th, o| {
            o[0] = th.cos();
            o[1] = th.sin();
            o[2] = 0.0;
        });
        let pot = conservation_law_potential(&eq).unwrap();
        assert!(pot.period[1].abs() < 1e-10);
        assert!((pot.circulation[1] - 2.0 * PI).abs() < 1e-10);
        assert!((pot.circulation[3] + 2.0 * PI).abs() < 1e-10);
        let off = Field::from_xy_vec(&g, 3, |_, _, o| o.copy_from_slice(&[1.0, 1.0, 0.0]));
        assert!(conservation_law_potential(&off).is_err());
    }

    #[test]
    fn bubble_decomposition_and_reconstruction() {
        let eps = 2f64.powi(-8);
        let g = LogPolarGrid::annulus_per_octave(AnnulusSpec::annulus(eps, 1.0).unwrap(), 16, 32).unwrap();
        let rot = random_rotation(&mut rng(5));
        let u = bubble_field(&g, eps.sqrt(), &rot);
        let pot = conservation_law_potential(&u).unwrap();
        let fit = eqhs_fit(&u, &pot).unwrap();
        assert!(fit.residual < 1e-4, "{fit:?}");
        for i in 0..3 {
            let sol = first_order_reconstruct(&sphere_pairs(&u, &pot, i)).unwrap();
            let ui = u.component(i);
            let diffs: Vec<f64> = sol.phi.values().iter().zip(&ui).map(|(a, b)| a - b).collect();
            let off = diffs[0];
            let err = diffs.iter().map(|d| (d - off).abs()).fold(0.0, f64::max);
            assert!(err < 1e-4, "component {i}: {err}");
        }
    }

    #[test]
    fn lr1_trivial_cases() {
        let g = annulus(0.01, 16, 256);
        let one = Field::from_xy(&g, |_, _| 1.0);
        let nt = 16;
        let th = |i: usize| 2.0 * PI * i as f64 / nt as f64;
        let (ri, ro) = (0.01f64, 1.0f64);
        let trace = |r: f64| (0..nt).map(|i| (r + 1.0 / r) * th(i).cos() * 0.01).collect::<Vec<_>>();
        let rep = lr1_solve(&one, &one, trace(ri), trace(ro), 0.5).unwrap();
        assert!(rep.max_flux < 1e-6);
        assert!(rep.grad_phi0_l2 < 1e-10);
        let rep = lr1_solve(&one, &one, vec![ri.ln(); nt], vec![0.0; nt], 0.5).unwrap();
        assert!((rep.grad_phi0_l2 - (2.0 * PI * (1.0 / ri).ln()).sqrt()).abs() < 1e-6);
        assert!(rep.max_flux < 1e-6);
    }
}
