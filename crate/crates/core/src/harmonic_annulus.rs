//! Harmonic functions on annuli given by their Fourier data
//! `f = c₀ + d₀ ln ρ + Σ_{n≠0} (c_n ρ^{|n|} + d_n ρ^{-|n|}) e^{inθ}`,
//! with exact sampling, exact gradients and the mode-wise `L²` and `L^{2,1}`
//! estimates on shrinking annuli.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lorentz;
use crate::numerics::tanh_sinh;
use crate::polar_grid::{AnnulusSpec, Field, Grid, LogPolarGrid};
use crate::random::{normal, rng_tagged};

/// Largest admissible `|n| · ln(R/r)` before mode systems over/underflow.
pub const MODE_OVERFLOW_LIMIT: f64 = 700.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicAnnulusFunction {
    pub c0: f64,
    pub d0: f64,
    /// `n ↦ (c_n, d_n)` for `n ≠ 0`.
    pub modes: BTreeMap<i64, (Complex64, Complex64)>,
}

impl HarmonicAnnulusFunction {
    pub fn new(c0: f64, d0: f64) -> Self {
        Self { c0, d0, modes: BTreeMap::new() }
    }

    /// Add `(c, d)` at `n` and the conjugate pair at `-n` so the function stays real.
    pub fn with_real_mode(mut self, n: i64, c: Complex64, d: Complex64) -> Self {
        assert!(n != 0, "mode 0 lives in c0/d0");
        let k = n.abs();
        let (c, d) = if n > 0 { (c, d) } else { (c.conj(), d.conj()) };
        *self.modes.entry(k).or_insert((Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0))) = (c, d);
        *self.modes.entry(-k).or_insert((Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0))) = (c.conj(), d.conj());
        self
    }

    pub fn max_mode(&self) -> i64 {
        self.modes.keys().map(|n| n.abs()).max().unwrap_or(0)
    }

    /// True when `c_{-n} = conj(c_n)` and `d_{-n} = conj(d_n)` within `tol`.
    pub fn is_real(&self, tol: f64) -> bool {
        self.modes.iter().all(|(n, (c, d))| match self.modes.get(&-n) {
            Some((cm, dm)) => (c - cm.conj()).norm() <= tol && (d - dm.conj()).norm() <= tol,
            None => c.norm() <= tol && d.norm() <= tol,
        })
    }

    /// Reject modes whose powers over/underflow on `[r, R]`.
    pub fn check_range(&self, r: f64, big_r: f64) -> Result<()> {
        let span = r.ln().abs().max(big_r.ln().abs()).max((big_r / r).ln());
        for (n, (c, d)) in &self.modes {
            let x = n.abs() as f64 * span;
            if x > MODE_OVERFLOW_LIMIT && (c.norm() > 0.0 || d.norm() > 0.0) {
                return Err(Error::Overflow(x));
            }
        }
        Ok(())
    }

    /// Radial profiles `(R_n(ρ), ρ R_n'(ρ))` of every stored mode.
    fn radial(&self, rho: f64) -> Vec<(i64, Complex64, Complex64)> {
        self.modes
            .iter()
            .map(|(&n, &(c, d))| {
                let k = n.abs() as i32;
                let up = rho.powi(k);
                let down = rho.powi(-k);
                (n, c * up + d * down, (c * up - d * down) * k as f64)
            })
            .collect()
    }

    pub fn eval(&self, rho: f64, theta: f64) -> f64 {
        let mut v = self.c0 + self.d0 * rho.ln();
        for (n, r, _) in self.radial(rho) {
            v += (r * Complex64::from_polar(1.0, n as f64 * theta)).re;
        }
        v
    }

    /// `(∂_ρ f, ρ⁻¹ ∂_θ f)` at a point.
    pub fn grad_polar(&self, rho: f64, theta: f64) -> (f64, f64) {
        let mut gr = self.d0 / rho;
        let mut gt = 0.0;
        for (n, r, dr) in self.radial(rho) {
            let e = Complex64::from_polar(1.0, n as f64 * theta);
            gr += (dr * e).re / rho;
            gt += (r * e * Complex64::new(0.0, n as f64)).re / rho;
        }
        (gr, gt)
    }

    /// Mean over the circle of radius `r`.
    pub fn circle_mean(&self, r: f64) -> f64 {
        self.c0 + self.d0 * r.ln()
    }

    /// Exact `∫_{B_R \ B_r} |∇f|²` (modes are orthogonal and the cross terms cancel).
    pub fn dirichlet_energy(&self, r: f64, big_r: f64) -> Result<f64> {
        self.check_range(r, big_r)?;
        let mut e = self.d0 * self.d0 * (big_r / r).ln();
        for (n, (c, d)) in &self.modes {
            let k = n.abs() as f64;
            let c2 = scaled_sq(c.norm(), big_r, k) - scaled_sq(c.norm(), r, k);
            let d2 = scaled_sq(d.norm(), r, -k) - scaled_sq(d.norm(), big_r, -k);
            e += k * (c2 + d2);
        }
        Ok(2.0 * PI * e)
    }
}

/// `(a ρ^p)²` evaluated in log space.
fn scaled_sq(a: f64, rho: f64, p: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        (2.0 * (a.ln() + p * rho.ln())).exp()
    }
}

/// Sample the series on a grid (centered at the grid center).
pub fn sample(h: &HarmonicAnnulusFunction, grid: &Grid) -> Result<Field> {
    let (r, big_r) = (grid.r_min(), grid.spec().r_outer);
    h.check_range(r, big_r)?;
    let nt = grid.n_theta();
    let mut values = vec![0.0; grid.n_nodes()];
    for j in 0..grid.n_radial() {
        let rho = grid.rho(j);
        let base = h.c0 + h.d0 * rho.ln();
        let prof = h.radial(rho);
        for i in 0..nt {
            let mut v = base;
            for (n, rn, _) in &prof {
                let m = (n.rem_euclid(nt as i64) as usize * i) % nt;
                v += rn.re * grid.cos_theta(m) - rn.im * grid.sin_theta(m);
            }
            values[j * nt + i] = v;
        }
    }
    Field::new(grid.clone(), 1, values)
}

/// Analytic Cartesian gradient of the series on a grid.
pub fn gradient_exact(h: &HarmonicAnnulusFunction, grid: &Grid) -> Result<Field> {
    let (r, big_r) = (grid.r_min(), grid.spec().r_outer);
    h.check_range(r, big_r)?;
    let nt = grid.n_theta();
    let mut values = vec![0.0; 2 * grid.n_nodes()];
    for j in 0..grid.n_radial() {
        let rho = grid.rho(j);
        let prof = h.radial(rho);
        for i in 0..nt {
            let mut gr = h.d0 / rho;
            let mut gt = 0.0;
            for (n, rn, drn) in &prof {
                let m = (n.rem_euclid(nt as i64) as usize * i) % nt;
                let e = Complex64::new(grid.cos_theta(m), grid.sin_theta(m));
                gr += (drn * e).re / rho;
                gt += -(rn * e).im * *n as f64 / rho;
            }
            let (c, s) = (grid.cos_theta(i), grid.sin_theta(i));
            values[2 * (j * nt + i)] = c * gr - s * gt;
            values[2 * (j * nt + i) + 1] = s * gr + c * gt;
        }
    }
    Field::new(grid.clone(), 2, values)
}

/// Harmonic function on `spec` matching two circle traces sampled at `θ_i = 2πi/N`.
pub fn fit_harmonic(inner: &[f64], outer: &[f64], spec: &AnnulusSpec) -> Result<HarmonicAnnulusFunction> {
    let n = inner.len();
    if n != outer.len() || n < 2 {
        return invalid("traces must share a sample count of at least 2");
    }
    if spec.is_disk() {
        return invalid("fit_harmonic needs r_inner > 0");
    }
    let (r, big_r) = (spec.r_inner, spec.r_outer);
    let modes = |data: &[f64]| {
        let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        buf.iter().map(|c| c / n as f64).collect::<Vec<_>>()
    };
    let (a, b) = (modes(inner), modes(outer));
    let log_ratio = (big_r / r).ln();
    let d0 = (b[0].re - a[0].re) / log_ratio;
    let c0 = a[0].re - d0 * r.ln();
    let mut h = HarmonicAnnulusFunction::new(c0, d0);
    for m in 1..n {
        let (mut am, mut bm) = (a[m], b[m]);
        let k = if m <= n / 2 { m as i64 } else { m as i64 - n as i64 };
        if n % 2 == 0 && m == n / 2 {
            // Nyquist: split evenly between ±n/2.
            am *= 0.5;
            bm *= 0.5;
        }
        if am.norm() == 0.0 && bm.norm() == 0.0 {
            continue;
        }
        let kk = k.abs() as f64;
        if kk * log_ratio > MODE_OVERFLOW_LIMIT {
            return Err(Error::Overflow(kk * log_ratio));
        }
        let q = (r / big_r).powf(kk);
        let det = 1.0 - q * q;
        let cs = (bm - am * q) / det;
        let ds = (am - bm * q) / det;
        let c = cs * big_r.powf(-kk);
        let d = ds * r.powf(kk);
        h.modes.insert(k, (c, d));
        if n % 2 == 0 && m == n / 2 {
            h.modes.insert(-k, (c, d));
        }
    }
    Ok(h)
}

/// Domain `[a, b]` of the restricted annulus: `B_1 \ B_{λε}` for `λ > 1`, `B_λ \ B_{ε/λ}` for `λ < 1`.
pub fn restricted_radii(eps: f64, lambda: f64) -> Result<(f64, f64)> {
    if !(eps > 0.0 && eps < 1.0) || !(lambda > 0.0) || lambda == 1.0 {
        return invalid(format!("need 0 < ε < 1 and λ ≠ 1, got ε = {eps}, λ = {lambda}"));
    }
    let (a, b) = if lambda > 1.0 { (lambda * eps, 1.0) } else { (eps / lambda, lambda) };
    if a >= b {
        return invalid("restricted annulus is empty");
    }
    Ok((a, b))
}

/// Exact level-set `L^{2,1}` norm of `ρ^m` on the restricted annulus.
pub fn power_norm_l21(m: i32, eps: f64, lambda: f64) -> Result<f64> {
    let (a, b) = restricted_radii(eps, lambda)?;
    let area = PI * (b * b - a * a);
    let tol = 1e-13;
    let v = match m.cmp(&0) {
        std::cmp::Ordering::Equal => 4.0 * area.sqrt(),
        std::cmp::Ordering::Greater => {
            // ρ = b e^{-u}: ∫_a^b √(π(b²−ρ²)) m ρ^{m−1} dρ.
            let mf = m as f64;
            let tail = tanh_sinh(
                |u| (PI * (1.0 - (-2.0 * u).exp())).sqrt() * b * mf * (b * (-u).exp()).powi(m),
                0.0,
                (b / a).ln(),
                tol,
            );
            4.0 * (a.powi(m) * area.sqrt() + tail)
        }
        std::cmp::Ordering::Less if m == -1 => 4.0 * PI.sqrt() * (b / a).acosh(),
        std::cmp::Ordering::Less => {
            // ρ = a e^{u}: ∫_a^b √(π(ρ²−a²)) |m| ρ^{m−1} dρ.
            let mf = (-m) as f64;
            let tail = tanh_sinh(
                |u| (PI * ((2.0 * u).exp() - 1.0)).sqrt() * a * mf * (a * u.exp()).powi(m),
                0.0,
                (b / a).ln(),
                tol,
            );
            4.0 * (b.powi(m) * area.sqrt() + tail)
        }
    };
    Ok(v)
}

/// Rigorous upper bound for [`power_norm_l21`]: `4√π |m|/(|m|−1) a^{m+1}` for `m < −1`
/// and `4√π b^{m+1}` for `m ≥ 0`, where `[a, b]` is the restricted range.
pub fn power_norm_bound(m: i32, eps: f64, lambda: f64) -> Result<f64> {
    let (a, b) = restricted_radii(eps, lambda)?;
    let s = 4.0 * PI.sqrt();
    Ok(match m {
        m if m < -1 => s * (-m) as f64 / (-m - 1) as f64 * a.powi(m + 1),
        -1 => s * (2.0 * b / a).ln(),
        m => s * b.powi(m + 1),
    })
}

/// The bound as stated in the appendix estimate: `2√π a^{m+1}` (`m < −1`), `√π λ^m` (`m ≥ 0`).
pub fn stated_power_bound(m: i32, eps: f64, lambda: f64) -> Result<f64> {
    let (a, _) = restricted_radii(eps, lambda)?;
    let s = PI.sqrt();
    Ok(match m {
        m if m < -1 => 2.0 * s * a.powi(m + 1),
        -1 => f64::NAN,
        m => s * if lambda < 1.0 { lambda.powi(m) } else { 1.0 },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub ratio: f64,
    pub numerator: f64,
    pub denominator: f64,
}

/// Radial nodes per octave for restricted-annulus norms.
pub const NORM_PER_OCTAVE: usize = 48;

fn restricted_l21(h: &HarmonicAnnulusFunction, a: f64, b: f64) -> Result<f64> {
    let nt = ((4 * h.max_mode().max(8)) as usize).next_power_of_two();
    let spec = AnnulusSpec::annulus(a, b)?;
    let grid = LogPolarGrid::annulus_per_octave(spec, nt, NORM_PER_OCTAVE)?;
    let g = gradient_exact(h, &grid)?;
    Ok(lorentz::l21_levelset(&g, &spec)?.value)
}

fn mode_tol(c: Complex64, d: Complex64) -> f64 {
    1e-12 * (c.norm() + d.norm())
}

/// `‖∇h‖_{L^{2,1}(B_1\B_{λε})} / ‖∇h‖_{L²(B_1\B_ε)}` for `h` with zero outer trace and no zero mode.
pub fn lemma_l1_ratio(h: &HarmonicAnnulusFunction, eps: f64, lambda: f64) -> Result<RatioReport> {
    if !(lambda > 1.0) {
        return invalid("the outer-trace estimate needs λ > 1");
    }
    if h.c0 != 0.0 {
        return Err(Error::Normalization(format!("c0 = {} must vanish", h.c0)));
    }
    if h.d0 != 0.0 {
        return Err(Error::Normalization(format!("d0 = {} must vanish (zero inner mean and outer trace)", h.d0)));
    }
    for (n, (c, d)) in &h.modes {
        if (c + d).norm() > mode_tol(*c, *d) {
            return Err(Error::Normalization(format!("c_n + d_n = {} at n = {n} (outer trace must vanish)", c + d)));
        }
    }
    let (a, b) = restricted_radii(eps, lambda)?;
    let numerator = restricted_l21(h, a, b)?;
    let denominator = h.dirichlet_energy(eps, 1.0)?.sqrt();
    Ok(RatioReport { ratio: numerator / denominator, numerator, denominator })
}

/// `‖∇h‖_{L^{2,1}(B_λ\B_{ε/λ})} / (‖∇h‖_{L²(B_1\B_ε)} + 1)` for `h` with zero inner mean and `|outer mean| ≤ K`.
pub fn lemma_l3_ratio(h: &HarmonicAnnulusFunction, eps: f64, lambda: f64, k: f64) -> Result<RatioReport> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return invalid("the mean-normalized estimate needs 0 < λ < 1");
    }
    let inner_mean = h.circle_mean(eps);
    if inner_mean.abs() > 1e-12 * (1.0 + h.c0.abs()) {
        return Err(Error::Normalization(format!("inner circle mean c0 + d0 ln ε = {inner_mean:e} must vanish")));
    }
    if h.c0.abs() > k * (1.0 + 1e-12) {
        return Err(Error::Normalization(format!("outer circle mean |c0| = {} exceeds K = {k}", h.c0.abs())));
    }
    let (a, b) = restricted_radii(eps, lambda)?;
    let numerator = restricted_l21(h, a, b)?;
    let denominator = h.dirichlet_energy(eps, 1.0)?.sqrt() + 1.0;
    Ok(RatioReport { ratio: numerator / denominator, numerator, denominator })
}

/// Project arbitrary coefficients onto the outer-trace normalization.
pub fn project_l1(h: &HarmonicAnnulusFunction) -> HarmonicAnnulusFunction {
    let mut out = HarmonicAnnulusFunction::new(0.0, 0.0);
    for (&n, &(c, _)) in &h.modes {
        out.modes.insert(n, (c, -c));
    }
    out
}

/// Project onto the mean normalization: zero inner mean, outer mean clipped to `[-K, K]`.
pub fn project_l3(h: &HarmonicAnnulusFunction, eps: f64, k: f64) -> HarmonicAnnulusFunction {
    let mut out = h.clone();
    out.c0 = h.c0.clamp(-k, k);
    out.d0 = -out.c0 / eps.ln();
    out
}

/// Random outer-trace-normalized function with unit-order energy at every `ε`.
/// Coefficients are drawn from the seed alone, so sweeping `ε` keeps the family fixed.
pub fn random_l1(seed: u64, eps: f64, n_modes: usize) -> HarmonicAnnulusFunction {
    let mut rng = rng_tagged(seed, 0x11);
    let mut h = HarmonicAnnulusFunction::new(0.0, 0.0);
    for n in 1..=n_modes as i64 {
        let xi = Complex64::new(normal(&mut rng), normal(&mut rng)) / (n as f64);
        let c = xi * eps.powi(n as i32) / (n as f64).sqrt();
        h = h.with_real_mode(n, c, -c);
    }
    let e = h.dirichlet_energy(eps, 1.0).unwrap_or(1.0).sqrt();
    for v in h.modes.values_mut() {
        v.0 /= e;
        v.1 /= e;
    }
    h
}

/// Random mean-normalized function: outer-scale `c_n`, inner-scale `d_n`, `|c0| ≤ K`.
pub fn random_l3(seed: u64, eps: f64, n_modes: usize, k: f64) -> HarmonicAnnulusFunction {
    let mut rng = rng_tagged(seed, 0x13);
    let u: f64 = 2.0 * rand::Rng::random::<f64>(&mut rng) - 1.0;
    let c0 = k * u;
    let mut h = HarmonicAnnulusFunction::new(c0, -c0 / eps.ln());
    for n in 1..=n_modes as i64 {
        let w = 1.0 / (n as f64 * (n as f64).sqrt());
        let c = Complex64::new(normal(&mut rng), normal(&mut rng)) * w;
        let d = Complex64::new(normal(&mut rng), normal(&mut rng)) * w * eps.powi(n as i32);
        h = h.with_real_mode(n, c, d);
    }
    h
}

/// `φ_ε = ln(ρ/ε)/ln(1/ε)`: `‖∇φ_ε‖_{L^{2,1}(B_1\B_{λε})} / ‖∇φ_ε‖_{L²(B_1\B_ε)}`.
pub fn log_counterexample(eps: f64, lambda: f64) -> Result<RatioReport> {
    let l = (1.0 / eps).ln();
    let h = HarmonicAnnulusFunction::new(1.0, 1.0 / l);
    let (a, b) = restricted_radii(eps, lambda)?;
    let numerator = restricted_l21(&h, a, b)?;
    let denominator = h.dirichlet_energy(eps, 1.0)?.sqrt();
    Ok(RatioReport { ratio: numerator / denominator, numerator, denominator })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HarmonicLemma {
    /// Zero outer trace, no zero mode.
    L1,
    /// Zero inner mean, bounded outer mean.
    L3,
}

/// One row of the harmonic sweep CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lemma: String,
    pub epsilon: f64,
    pub lambda: f64,
    pub seed: u64,
    pub n_modes: usize,
    pub ratio: f64,
    pub numerator: f64,
    pub denominator: f64,
}

/// Ratios over every `(ε, seed)` cell, sorted by `(seed, ε descending)`.
pub fn sweep(
    lemma: HarmonicLemma,
    eps_ladder: &[f64],
    lambda: f64,
    seeds: &[u64],
    n_modes: usize,
    k: f64,
) -> Result<Vec<SweepRow>> {
    let cells: Vec<(f64, u64)> = seeds.iter().flat_map(|&s| eps_ladder.iter().map(move |&e| (e, s))).collect();
    let mut rows = cells
        .par_iter()
        .map(|&(eps, seed)| {
            let (name, rep) = match lemma {
                HarmonicLemma::L1 => ("l1", lemma_l1_ratio(&random_l1(seed, eps, n_modes), eps, lambda)?),
                HarmonicLemma::L3 => ("l3", lemma_l3_ratio(&random_l3(seed, eps, n_modes, k), eps, lambda, k)?),
            };
            Ok(SweepRow {
                lemma: name.into(),
                epsilon: eps,
                lambda,
                seed,
                n_modes,
                ratio: rep.ratio,
                numerator: rep.numerator,
                denominator: rep.denominator,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.seed.cmp(&b.seed).then(b.epsilon.total_cmp(&a.epsilon)));
    Ok(rows)
}
