//! Energy quantization for concentrating sphere-valued maps.
//!
//! Field-level tools (dyadic energy profiles, the weak-L² estimate, radii
//! partitions, angular energy and Pohozaev checks) work on sampled fields.
//! The bubble-tree pipeline works on synthetic sequences
//! `u_k = π⁻¹ ∘ F_k` with `F_k(z) = c z + Σ_i (λ_i / (z − a_i))^{d_i}`: ball
//! energies come from an adaptive polar cubature of the exact energy density,
//! region energies from sampled fields on local log-polar grids, and the two
//! must agree for the energy ledger to close.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::io::{Read, Write};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lorentz::lorentz_norm;
use crate::numerics::gauss_legendre;
use crate::polar_grid::{gradient, integrate, log_derivatives, weighted_sum, AnnulusSpec, Field, Grid, LogPolarGrid};

/// Energy of one degree-one sphere bubble.
pub const BUBBLE_QUANTUM: f64 = 8.0 * PI;

/// Frozen regression bound for `‖∇u‖_{2,∞} / sup_e^{1/2}`: 1.25 times the
/// largest ratio observed on `ln ρ` and the random harmonic family.
pub const WEAK_L2_C_REG: f64 = 2.15;

/// Pointwise energy density `Σ_c |∇u_c|²`.
pub fn energy_density(u: &Field) -> Result<Field> {
    Ok(gradient(u)?.pointwise_norm_sq())
}

/// `|Ω|² = Σ_{i,j} |u^i ∇u^j − u^j ∇u^i|²`, equal to `2|∇u|²` for unit-length maps.
pub fn omega_density(u: &Field) -> Result<Field> {
    let g = gradient(u)?;
    let nc = u.n_components();
    let grid = u.grid().clone();
    let values = (0..grid.n_nodes())
        .map(|k| {
            let uv = &u.values()[k * nc..(k + 1) * nc];
            let gv = &g.values()[k * 2 * nc..(k + 1) * 2 * nc];
            let mut s = 0.0;
            for i in 0..nc {
                for j in 0..nc {
                    for d in 0..2 {
                        let w = uv[i] * gv[2 * j + d] - uv[j] * gv[2 * i + d];
                        s += w * w;
                    }
                }
            }
            s
        })
        .collect();
    Field::new(grid, 1, values)
}

fn check_thick(region: &AnnulusSpec) -> Result<()> {
    if region.r_inner <= 0.0 || region.r_outer < 4.0 * region.r_inner * (1.0 - 1e-12) {
        return invalid(format!(
            "dyadic analysis needs an annulus with r_outer / r_inner >= 4, got {} / {}",
            region.r_outer, region.r_inner
        ));
    }
    Ok(())
}

/// Energies on the bands `B_{2ρ_j} \ B_{ρ_j}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DyadicEnergyProfile {
    pub radii: Vec<f64>,
    pub energies: Vec<f64>,
    pub sup_e: f64,
    /// Energy of the whole annulus.
    pub total: f64,
}

fn profile_from_density(density: &Field, region: &AnnulusSpec, step: f64) -> Result<DyadicEnergyProfile> {
    check_thick(region)?;
    let total = integrate(density, region)?;
    let mut radii = Vec::new();
    let mut energies = Vec::new();
    let mut j = 0;
    loop {
        let rho = region.r_inner * (step * j as f64).exp2();
        if 2.0 * rho > region.r_outer * (1.0 + 1e-12) {
            break;
        }
        let band = AnnulusSpec::new(rho, (2.0 * rho).min(region.r_outer), region.center)?;
        radii.push(rho);
        energies.push(integrate(density, &band)?);
        j += 1;
    }
    let sup_e = energies.iter().cloned().fold(0.0, f64::max);
    Ok(DyadicEnergyProfile { radii, energies, sup_e, total })
}

/// Dyadic energy profile of `u` over an annulus with `r_outer / r_inner ≥ 4`.
pub fn dyadic_profile(u: &Field, region: &AnnulusSpec) -> Result<DyadicEnergyProfile> {
    profile_from_density(&energy_density(u)?, region, 1.0)
}

/// Both sides of the weak-L² estimate `‖∇u‖_{2,∞} ≤ C sup_e^{1/2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakL2Report {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

/// Weak-L² norm of `∇u` against the largest dyadic band energy; bands start
/// every half octave so the supremum does not depend on where the ladder begins.
pub fn weak_l2_check(u: &Field, region: &AnnulusSpec) -> Result<WeakL2Report> {
    check_thick(region)?;
    let g = gradient(u)?;
    let profile = profile_from_density(&g.pointwise_norm_sq(), region, 0.5)?;
    if profile.sup_e <= 1e-20 {
        return Ok(WeakL2Report { lhs: 0.0, rhs: 0.0, ratio: 0.0 });
    }
    let lhs = lorentz_norm(&g, 2.0, f64::INFINITY, region)?.value;
    let rhs = profile.sup_e.sqrt();
    Ok(WeakL2Report { lhs, rhs, ratio: lhs / rhs })
}

/// Radii `r_0 < … < r_N` splitting an annulus into pieces of density mass at most `ε₀`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiiPartition {
    pub radii: Vec<f64>,
    pub energies: Vec<f64>,
    pub total: f64,
}

impl RadiiPartition {
    pub fn count(&self) -> usize {
        self.energies.len()
    }
}

/// Greedy partition: each leg's outer radius is the largest one (found by
/// bisection) whose annulus carries at most `ε₀`.
pub fn radii_partition(density: &Field, region: &AnnulusSpec, eps0: f64) -> Result<RadiiPartition> {
    if !(eps0 > 0.0) {
        return invalid(format!("eps0 must be positive, got {eps0}"));
    }
    if density.n_components() != 1 {
        return invalid("radii_partition expects a scalar density");
    }
    let g = density.grid();
    let (r0, r1) = (region.r_inner, region.r_outer);
    let mass = |a: f64, b: f64| -> Result<f64> {
        if b <= a {
            return Ok(0.0);
        }
        let w = g.clipped_ring_weights(&AnnulusSpec::new(a, b, region.center)?)?;
        Ok(weighted_sum(g, &w, density.values()))
    };
    let total = mass(r0, r1)?;
    let mut radii = vec![r0];
    let mut energies = Vec::new();
    let mut lo = r0;
    loop {
        let rest = mass(lo, r1)?;
        if rest <= eps0 {
            radii.push(r1);
            energies.push(rest);
            break;
        }
        let (mut a, mut b) = (lo, r1);
        for _ in 0..200 {
            let mid = if a > 0.0 { (a * b).sqrt() } else { 0.5 * (a + b) };
            if mass(lo, mid)? <= eps0 {
                a = mid;
            } else {
                b = mid;
            }
            if b - a <= 1e-14 * b {
                break;
            }
        }
        if a <= lo {
            a = b;
        }
        radii.push(a);
        energies.push(mass(lo, a)?);
        lo = a;
    }
    Ok(RadiiPartition { radii, energies, total })
}

/// Angular energy on `B_{R/2} \ B_{2r}` against `‖∇u‖₂ sup_e^{1/2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngularReport {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    /// Largest dyadic band mass of `|Ω|²`.
    pub sup_omega: f64,
    /// False when `sup_omega > δ`; the numbers are still reported.
    pub hypothesis_ok: bool,
}

pub fn angular_quantization_check(u: &Field, region: &AnnulusSpec, omega: &Field, delta: f64) -> Result<AngularReport> {
    check_thick(region)?;
    if !omega.same_grid(u) {
        return Err(Error::GridMismatch);
    }
    let grid = u.grid();
    let nt = grid.n_theta();
    let mut ang = vec![0.0; grid.n_nodes()];
    for c in 0..u.n_components() {
        let (_, fth) = log_derivatives(u, c)?;
        for (k, v) in fth.iter().enumerate() {
            let e = (-grid.t(k / nt)).exp();
            ang[k] += (v * e).powi(2);
        }
    }
    let inner = AnnulusSpec::new(2.0 * region.r_inner, 0.5 * region.r_outer, region.center)?;
    let lhs = integrate(&Field::from_component(grid, ang)?, &inner)?;
    let profile = dyadic_profile(u, region)?;
    let rhs = profile.total.sqrt() * profile.sup_e.sqrt();
    let sup_omega = profile_from_density(omega, region, 1.0)?.sup_e;
    let ratio = if rhs > 0.0 { lhs / rhs } else { 0.0 };
    Ok(AngularReport { lhs, rhs, ratio, sup_omega, hypothesis_ok: sup_omega <= delta })
}

/// Pohozaev balance `∮(|∂_ρu|² − |ρ⁻¹∂_θu|²) / ∮(|∂_ρu|² + |ρ⁻¹∂_θu|²)` on one ring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PohozaevReport {
    pub ring: usize,
    pub radius: f64,
    /// The requested radius was not a ring and the nearest ring was used.
    pub snapped: bool,
    /// `+1` for purely radial, `−1` for purely angular energy.
    pub signed: f64,
    pub residual: f64,
}

pub fn pohozaev_residual(u: &Field, r: f64) -> Result<PohozaevReport> {
    if !(r > 0.0 && r.is_finite()) {
        return invalid(format!("radius must be positive, got {r}"));
    }
    let g = u.grid();
    let j = g.nearest_ring(r);
    let radius = g.rho(j);
    let snapped = (radius - r).abs() > 1e-9 * r;
    let nt = g.n_theta();
    let (mut rad, mut ang) = (0.0, 0.0);
    for c in 0..u.n_components() {
        let (ft, fth) = log_derivatives(u, c)?;
        for i in 0..nt {
            rad += ft[j * nt + i].powi(2);
            ang += fth[j * nt + i].powi(2);
        }
    }
    let signed = if rad + ang > 0.0 { (rad - ang) / (rad + ang) } else { 0.0 };
    Ok(PohozaevReport { ring: j, radius, snapped, signed, residual: signed.abs() })
}

/// Inverse stereographic projection of a possibly huge complex value.
fn sphere_point(w: Complex64) -> [f64; 3] {
    if !w.is_finite() {
        return [0.0, 0.0, 1.0];
    }
    let n = w.norm_sqr();
    if n <= 1.0 {
        let s = 1.0 / (1.0 + n);
        [2.0 * w.re * s, 2.0 * w.im * s, (n - 1.0) * s]
    } else {
        let v = w.inv();
        let m = v.norm_sqr();
        let s = 1.0 / (1.0 + m);
        [2.0 * v.re * s, -2.0 * v.im * s, (1.0 - m) * s]
    }
}

/// One rational bubble term `(λ / (z − a))^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BubbleSpec {
    pub degree: u32,
    /// Root bubbles: the center. Children: offset from the parent center in parent scales.
    pub anchor: [f64; 2],
    /// Children concentrate at scale `λ_parent²`, roots at `2⁻ᵏ`.
    pub parent: Option<usize>,
}

/// `u_k = π⁻¹ ∘ F_k` on the unit disk with weak limit `π⁻¹(c z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSequence {
    pub background: Complex64,
    pub bubbles: Vec<BubbleSpec>,
    pub k: u32,
}

/// Named sequence families used by tests and the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SequenceKind {
    NoBubbles,
    Single,
    BubbleOnBubble,
    TwoBubbles,
}

impl SequenceKind {
    pub fn build(self, k: u32) -> SyntheticSequence {
        match self {
            Self::NoBubbles => SyntheticSequence::background_only(k),
            Self::Single => SyntheticSequence::single(k),
            Self::BubbleOnBubble => SyntheticSequence::bubble_on_bubble(k),
            Self::TwoBubbles => SyntheticSequence::two_bubbles(k),
        }
    }

    /// Number of bubble levels in the ground truth.
    pub fn depth(self) -> usize {
        match self {
            Self::NoBubbles => 0,
            Self::Single | Self::TwoBubbles => 1,
            Self::BubbleOnBubble => 2,
        }
    }
}

const BACKGROUND: Complex64 = Complex64::new(0.5, 0.0);
const SINGLE_CENTER: [f64; 2] = [0.1, -0.05];

impl SyntheticSequence {
    pub fn background_only(k: u32) -> Self {
        Self { background: BACKGROUND, bubbles: Vec::new(), k }
    }

    pub fn single(k: u32) -> Self {
        let bubbles = vec![BubbleSpec { degree: 1, anchor: SINGLE_CENTER, parent: None }];
        Self { background: BACKGROUND, bubbles, k }
    }

    /// A bubble at scale `λ²` sitting one parent scale away from the parent center.
    pub fn bubble_on_bubble(k: u32) -> Self {
        let mut s = Self::single(k);
        s.bubbles.push(BubbleSpec { degree: 1, anchor: [1.0, 0.0], parent: Some(0) });
        s
    }

    /// Two bubbles half a unit apart.
    pub fn two_bubbles(k: u32) -> Self {
        let bubbles = vec![
            BubbleSpec { degree: 1, anchor: [-0.25, 0.1], parent: None },
            BubbleSpec { degree: 1, anchor: [0.25, 0.1], parent: None },
        ];
        Self { background: BACKGROUND, bubbles, k }
    }

    pub fn at(&self, k: u32) -> Self {
        Self { k, ..self.clone() }
    }

    pub fn scale(&self, i: usize) -> f64 {
        match self.bubbles[i].parent {
            None => (-(self.k as f64)).exp2(),
            Some(p) => self.scale(p).powi(2),
        }
    }

    pub fn center(&self, i: usize) -> [f64; 2] {
        let b = &self.bubbles[i];
        match b.parent {
            None => b.anchor,
            Some(p) => {
                let (c, l) = (self.center(p), self.scale(p));
                [c[0] + l * b.anchor[0], c[1] + l * b.anchor[1]]
            }
        }
    }

    /// Poles of `F_k` with their scales.
    pub fn poles(&self) -> Vec<([f64; 2], f64)> {
        (0..self.bubbles.len()).map(|i| (self.center(i), self.scale(i))).collect()
    }

    pub fn total_degree(&self) -> u32 {
        self.bubbles.iter().map(|b| b.degree).sum()
    }

    fn term(&self, i: usize, z: Complex64) -> (Complex64, Complex64) {
        let a = self.center(i);
        let w = z - Complex64::new(a[0], a[1]);
        let d = self.bubbles[i].degree as i32;
        let t = (self.scale(i) / w).powi(d);
        (t, -t * d as f64 / w)
    }

    /// `(F, F')` at `z`.
    fn map(&self, z: Complex64) -> (Complex64, Complex64) {
        let mut f = self.background * z;
        let mut df = self.background;
        for i in 0..self.bubbles.len() {
            let (t, dt) = self.term(i, z);
            f += t;
            df += dt;
        }
        (f, df)
    }

    pub fn eval(&self, x: f64, y: f64) -> [f64; 3] {
        sphere_point(self.map(Complex64::new(x, y)).0)
    }

    /// Weak limit `π⁻¹(c z)`.
    pub fn limit(&self, x: f64, y: f64) -> [f64; 3] {
        sphere_point(self.background * Complex64::new(x, y))
    }

    /// Rescaled bubble `ω^i_k = π⁻¹(b_i + (λ_i / (z − a_i))^{d_i})`, attached at the
    /// value `b_i` of the remaining terms of `F_k` at its center.
    pub fn profile(&self, i: usize, x: f64, y: f64) -> [f64; 3] {
        let a = self.center(i);
        let za = Complex64::new(a[0], a[1]);
        let mut base = self.background * za;
        for j in (0..self.bubbles.len()).filter(|j| *j != i) {
            base += self.term(j, za).0;
        }
        sphere_point(base + self.term(i, Complex64::new(x, y)).0)
    }

    /// `u_k − u_∞ − Σ_i ω^i_k`.
    pub fn remainder(&self, x: f64, y: f64) -> [f64; 3] {
        let u = self.eval(x, y);
        let l = self.limit(x, y);
        let mut r = [u[0] - l[0], u[1] - l[1], u[2] - l[2]];
        for i in 0..self.bubbles.len() {
            let w = self.profile(i, x, y);
            r.iter_mut().zip(w).for_each(|(a, b)| *a -= b);
        }
        r
    }

    /// Exact energy density `8|F'|² / (1 + |F|²)²`.
    pub fn density(&self, x: f64, y: f64) -> f64 {
        let (f, df) = self.map(Complex64::new(x, y));
        let n = f.norm_sqr();
        let d = if n > 1.0 {
            let q = df / (f * f);
            8.0 * q.norm_sqr() / (1.0 + 1.0 / n).powi(2)
        } else {
            8.0 * df.norm_sqr() / (1.0 + n).powi(2)
        };
        if d.is_finite() {
            d
        } else {
            0.0
        }
    }

    /// `E(u_∞)` on the unit disk in closed form.
    pub fn limit_energy(&self) -> f64 {
        let c2 = self.background.norm_sqr();
        BUBBLE_QUANTUM * c2 / (1.0 + c2)
    }

    pub fn sample(&self, grid: &Grid) -> Field {
        Field::from_xy_vec(grid, 3, |x, y, out| out.copy_from_slice(&self.eval(x, y)))
    }

    pub fn sample_remainder(&self, grid: &Grid) -> Field {
        Field::from_xy_vec(grid, 3, |x, y, out| out.copy_from_slice(&self.remainder(x, y)))
    }

    /// `(∫ e, ∫ x e, ∫ y e)` over `B(center, radius) ∩ B_1`, absolute tolerance `tol`.
    pub fn ball_moments(&self, center: [f64; 2], radius: f64, tol: f64) -> [f64; 3] {
        BallCubature::new(self, center, radius, tol).run()
    }

    pub fn ball_energy(&self, center: [f64; 2], radius: f64, tol: f64) -> f64 {
        self.ball_moments(center, radius, tol)[0]
    }

    /// `E(u_k)` on the unit disk.
    pub fn total_energy(&self, tol: f64) -> f64 {
        self.ball_energy([0.0, 0.0], 1.0, tol)
    }

    /// `|E(u_k) − E(u_∞) − 8π Σ d_i|`.
    pub fn quantization_residual(&self, tol: f64) -> f64 {
        (self.total_energy(tol) - self.limit_energy() - BUBBLE_QUANTUM * self.total_degree() as f64).abs()
    }
}

/// Adaptive Gauss cubature on a ball in coordinates `ρ = σ R(θ)`, where
/// `R(θ)` stops at the unit circle. Cells are halved across their longer side
/// until the 5- and 4-point rules agree to `tol` times the larger of
/// the cell's area fraction and its own energy; cells near a pole are split until
/// they are smaller than half its scale.
struct BallCubature<'a> {
    seq: &'a SyntheticSequence,
    c: [f64; 2],
    s: f64,
    tol: f64,
    poles: Vec<([f64; 2], f64)>,
    gl: Vec<(f64, f64)>,
    gl_low: Vec<(f64, f64)>,
}

const CUBATURE_MAX_DEPTH: usize = 120;

impl<'a> BallCubature<'a> {
    fn new(seq: &'a SyntheticSequence, c: [f64; 2], s: f64, tol: f64) -> Self {
        Self { seq, c, s, tol, poles: seq.poles(), gl: gauss_legendre(5), gl_low: gauss_legendre(4) }
    }

    fn reach(&self, th: f64) -> f64 {
        let (e0, e1) = (th.cos(), th.sin());
        let pe = self.c[0] * e0 + self.c[1] * e1;
        let c2 = self.c[0] * self.c[0] + self.c[1] * self.c[1];
        let rm = -pe + (pe * pe + 1.0 - c2).max(0.0).sqrt();
        self.s.min(rm).max(0.0)
    }

    /// Gauss 5×5 moments and the energy gap to the 4×4 rule.
    fn cell(&self, s0: f64, s1: f64, t0: f64, t1: f64) -> ([f64; 3], f64) {
        let (sm, sh) = (0.5 * (s0 + s1), 0.5 * (s1 - s0));
        let (tm, th) = (0.5 * (t0 + t1), 0.5 * (t1 - t0));
        let mut out = [0.0; 3];
        let mut low = 0.0;
        for (rule, hi) in [(&self.gl, true), (&self.gl_low, false)] {
            for (xt, wt) in rule.iter() {
                let t = tm + th * xt;
                let r = self.reach(t);
                if r == 0.0 {
                    continue;
                }
                let (ct, st) = (t.cos(), t.sin());
                for (xs, ws) in rule.iter() {
                    let sg = sm + sh * xs;
                    let rho = sg * r;
                    let (x, y) = (self.c[0] + rho * ct, self.c[1] + rho * st);
                    let e = self.seq.density(x, y) * sg * r * r * wt * ws * sh * th;
                    if hi {
                        out[0] += e;
                        out[1] += e * x;
                        out[2] += e * y;
                    } else {
                        low += e;
                    }
                }
            }
        }
        (out, (out[0] - low).abs())
    }

    fn forced(&self, s0: f64, s1: f64, t0: f64, t1: f64) -> bool {
        let d = ((s1 - s0) * self.s).max(s1 * self.s * (t1 - t0));
        let (sm, tm) = (0.5 * (s0 + s1), 0.5 * (t0 + t1));
        let rho = sm * self.reach(tm);
        let p = [self.c[0] + rho * tm.cos(), self.c[1] + rho * tm.sin()];
        self.poles.iter().any(|(q, l)| {
            let dist = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
            d > 0.5 * l && dist < 1.5 * d + l
        })
    }

    fn adapt(&self, s0: f64, s1: f64, t0: f64, t1: f64, depth: usize, out: &mut [f64; 3]) {
        let (val, err) = self.cell(s0, s1, t0, t1);
        let frac = (s1 * s1 - s0 * s0) * (t1 - t0) / (2.0 * PI);
        let done = (err <= self.tol * frac.max(val[0].abs())) && !self.forced(s0, s1, t0, t1);
        if done || depth >= CUBATURE_MAX_DEPTH {
            out.iter_mut().zip(val).for_each(|(o, v)| *o += v);
        } else if s1 - s0 >= s1 * (t1 - t0) {
            let sm = 0.5 * (s0 + s1);
            self.adapt(s0, sm, t0, t1, depth + 1, out);
            self.adapt(sm, s1, t0, t1, depth + 1, out);
        } else {
            let tm = 0.5 * (t0 + t1);
            self.adapt(s0, s1, t0, tm, depth + 1, out);
            self.adapt(s0, s1, tm, t1, depth + 1, out);
        }
    }

    /// Angles where the ball boundary meets the unit circle, where `R(θ)` has a kink.
    fn kinks(&self) -> Vec<f64> {
        let cn = (self.c[0] * self.c[0] + self.c[1] * self.c[1]).sqrt();
        if cn == 0.0 {
            return Vec::new();
        }
        let q = (1.0 - cn * cn - self.s * self.s) / (2.0 * self.s * cn);
        if q.abs() >= 1.0 {
            return Vec::new();
        }
        let phi = self.c[1].atan2(self.c[0]);
        let w = q.acos();
        vec![(phi + w).rem_euclid(2.0 * PI), (phi - w).rem_euclid(2.0 * PI)]
    }

    fn run(&self) -> [f64; 3] {
        let mut out = [0.0; 3];
        if self.s <= 0.0 {
            return out;
        }
        let mut cuts: Vec<f64> = (0..=4).map(|q| 0.5 * PI * q as f64).collect();
        cuts.extend(self.kinks());
        cuts.sort_by(f64::total_cmp);
        for w in cuts.windows(2) {
            if w[1] - w[0] > 1e-14 {
                self.adapt(0.0, 1.0, w[0], w[1], 0, &mut out);
            }
        }
        out
    }
}

/// Thresholds and resolution for the bubble-tree pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeConfig {
    /// Concentration threshold `ε₀`.
    pub eps0: f64,
    /// Neck energy target `δ`; the scale leaves `min(δ, ε₀/2)` between `λ` and the patch.
    pub delta: f64,
    /// A concentration must persist below `domain_radius · 2^-J`.
    pub persistence_levels: u32,
    pub max_depth: usize,
    /// Resolution floor for scales and scan radii.
    pub min_scale: f64,
    pub n_theta: usize,
    pub per_octave: usize,
    /// Octaves of refinement inside leaf bubble bodies.
    pub body_depth: u32,
    /// Absolute cubature tolerance for ledger energies.
    pub tol: f64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            eps0: 1.0,
            delta: 0.5,
            persistence_levels: 6,
            max_depth: 6,
            min_scale: (-40.0f64).exp2(),
            n_theta: 128,
            per_octave: 32,
            body_depth: 20,
            tol: 1e-9,
        }
    }
}

impl TreeConfig {
    /// `ε₀ = 4π`, half a bubble quantum, with `δ = ε₀/2`.
    pub fn half_quantum() -> Self {
        Self { eps0: 4.0 * PI, delta: 2.0 * PI, persistence_levels: 4, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.eps0 > 0.0 && self.delta > 0.0 && self.min_scale > 0.0 && self.tol > 0.0) {
            return invalid("eps0, delta, min_scale and tol must be positive");
        }
        if self.max_depth == 0 || self.per_octave < 4 || self.body_depth == 0 {
            return invalid("max_depth, per_octave and body_depth are too small");
        }
        Ok(())
    }
}

/// A minimal ball carrying at least `ε₀`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub center: [f64; 2],
    pub radius: f64,
    pub energy: f64,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Concentration points of the sequence on the unit disk.
pub fn detect_concentration(seq: &SyntheticSequence, cfg: &TreeConfig) -> Vec<Detection> {
    detect_in(seq, [0.0, 0.0], 1.0, cfg)
}

/// Coarse-to-fine scan over the ladder `radius · 2⁻ᵐ`. Hits are thinned to
/// local energy maxima, refined on a lattice of half the next radius, and a hit with no
/// refined hit inside it is minimal. Minimal balls that persist below the
/// persistence radius are disjointified, smallest radius first.
fn detect_in(seq: &SyntheticSequence, dc: [f64; 2], dr: f64, cfg: &TreeConfig) -> Vec<Detection> {
    let persist = dr * (-(cfg.persistence_levels as f64)).exp2();
    let tol = cfg.eps0 * 1e-6;
    let inside = |p: [f64; 2]| dist(p, dc) <= dr && p[0] * p[0] + p[1] * p[1] < 1.0;
    let lattice = |anchors: &[[f64; 2]], reach: f64, spacing: f64| -> Vec<[f64; 2]> {
        let n = (reach / spacing).ceil() as i64;
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for a in anchors {
            let (ia, ja) = (((a[0] - dc[0]) / spacing).round() as i64, ((a[1] - dc[1]) / spacing).round() as i64);
            for i in ia - n..=ia + n {
                for j in ja - n..=ja + n {
                    let p = [dc[0] + spacing * i as f64, dc[1] + spacing * j as f64];
                    if dist(p, *a) <= reach && inside(p) && seen.insert((i, j)) {
                        out.push(p);
                    }
                }
            }
        }
        out
    };
    let mut s = 0.5 * dr;
    let mut candidates = lattice(&[dc], dr, 0.25 * dr);
    let mut minimal = Vec::new();
    let mut prev: Vec<Detection> = Vec::new();
    loop {
        let mut hits: Vec<Detection> = candidates
            .par_iter()
            .filter_map(|p| {
                let e = seq.ball_energy(*p, s, tol);
                (e >= cfg.eps0).then_some(Detection { center: *p, radius: s, energy: e })
            })
            .collect();
        hits.sort_by(|a, b| b.energy.total_cmp(&a.energy));
        let mut kept: Vec<Detection> = Vec::new();
        for h in hits {
            if kept.iter().all(|k| dist(k.center, h.center) >= s) {
                kept.push(h);
            }
        }
        for p in &prev {
            if !kept.iter().any(|h| dist(h.center, p.center) <= p.radius) {
                minimal.push(*p);
            }
        }
        if kept.is_empty() {
            break;
        }
        if 0.5 * s < cfg.min_scale {
            minimal.extend(kept);
            break;
        }
        let anchors: Vec<[f64; 2]> = kept.iter().map(|h| h.center).collect();
        candidates = lattice(&anchors, s, 0.25 * s);
        prev = kept;
        s *= 0.5;
    }
    minimal.retain(|d| d.radius <= persist * (1.0 + 1e-12));
    minimal.sort_by(|a, b| a.radius.total_cmp(&b.radius).then(b.energy.total_cmp(&a.energy)));
    let mut out: Vec<Detection> = Vec::new();
    for d in minimal {
        if out.iter().all(|o| dist(o.center, d.center) >= o.radius + d.radius) {
            out.push(d);
        }
    }
    out
}

/// Energy-weighted centroid over `B(ball_center, ball_radius)` and the scale `λ`
/// with `E(B(a, r) \ B(a, λ)) = min(δ, ε₀/2)`, found by bisection in `ln λ`.
pub fn center_and_scale(
    seq: &SyntheticSequence,
    ball_center: [f64; 2],
    ball_radius: f64,
    eps0: f64,
    delta: f64,
    floor: f64,
    tol: f64,
) -> Result<([f64; 2], f64)> {
    let m = seq.ball_moments(ball_center, ball_radius, tol);
    if !(m[0] > 0.0) {
        return invalid("center_and_scale needs a ball with positive energy");
    }
    let a = [m[1] / m[0], m[2] / m[0]];
    let target = delta.min(0.5 * eps0);
    let outer = seq.ball_energy(a, ball_radius, tol);
    let excess = |l: f64| outer - seq.ball_energy(a, l, tol) - target;
    if excess(floor) <= 0.0 {
        return Ok((a, floor));
    }
    let (mut lo, mut hi) = (floor.ln(), ball_radius.ln());
    let mut prev = f64::INFINITY;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let e = excess(mid.exp());
        if e > prev + 1e-6 * outer.max(1.0) {
            return Err(Error::Invalid("annulus energy is not monotone in the inner radius".into()));
        }
        if e > 0.0 {
            lo = mid;
            prev = e;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-8 {
            break;
        }
    }
    Ok((a, (0.5 * (lo + hi)).exp()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionTag {
    Thick,
    Bubble,
    Neck,
}

/// Tree node. A bubble node's `scale` is `λ` and `radius` its patch `μ`; its
/// first child is the neck `B(a, μ) \ B(a, λ)`. `energy` is the energy of the
/// node's own region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: usize,
    pub center: [f64; 2],
    pub scale: f64,
    pub radius: f64,
    pub tag: RegionTag,
    pub energy: f64,
    pub children: Vec<TreeNode>,
}

impl TreeNode {
    fn bubble_children(&self) -> impl Iterator<Item = &TreeNode> {
        self.children.iter().filter(|c| c.tag == RegionTag::Bubble)
    }

    fn bubble_depth(&self) -> usize {
        self.bubble_children().map(|c| 1 + c.bubble_depth()).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BubbleTree {
    pub k: u32,
    pub eps0: f64,
    pub delta: f64,
    pub root: TreeNode,
    pub total_energy: f64,
    pub limit_energy: f64,
    pub quantization_residual: f64,
    /// `|thick + Σ bodies + Σ necks − total| / total`.
    pub ledger_residual: f64,
    /// Recursion stopped at the depth cap or the resolution floor.
    pub partial: bool,
}

impl BubbleTree {
    /// Number of nested bubble levels; zero when there is no concentration.
    pub fn depth(&self) -> usize {
        self.root.bubble_depth()
    }

    /// Bubble nodes in depth-first order.
    pub fn bubbles(&self) -> Vec<&TreeNode> {
        fn walk<'a>(n: &'a TreeNode, out: &mut Vec<&'a TreeNode>) {
            for c in n.bubble_children() {
                out.push(c);
                walk(c, out);
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut out);
        out
    }

    fn neck_of(node: &TreeNode) -> Option<&TreeNode> {
        node.children.iter().find(|c| c.tag == RegionTag::Neck)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

struct Builder<'a> {
    seq: &'a SyntheticSequence,
    cfg: &'a TreeConfig,
    next_id: usize,
    partial: bool,
}

/// Largest ladder radius `2⁻ᵐ` not above `bound`.
fn ladder_floor(bound: f64) -> f64 {
    bound.log2().floor().exp2()
}

impl Builder<'_> {
    fn id(&mut self) -> usize {
        self.next_id += 1;
        self.next_id
    }

    /// Bubble nodes for the detections inside `B(dc, dr)`; `cap` bounds patch radii.
    fn level(&mut self, dets: &[Detection], dc: [f64; 2], dr: f64, cap: f64, depth: usize) -> Result<Vec<TreeNode>> {
        let mut nodes = Vec::new();
        for (n, d) in dets.iter().enumerate() {
            let sep = dets
                .iter()
                .enumerate()
                .filter(|(m, _)| *m != n)
                .map(|(_, o)| 0.5 * dist(o.center, d.center))
                .fold(f64::INFINITY, f64::min);
            let room = |p: [f64; 2]| {
                let unit = 1.0 - (p[0] * p[0] + p[1] * p[1]).sqrt();
                cap.min(sep).min(dr - dist(p, dc)).min(unit)
            };
            let bound = room(d.center);
            if !(bound > d.radius) {
                self.partial = true;
                continue;
            }
            let mu0 = ladder_floor(bound);
            let (c0, _) = center_and_scale(
                self.seq,
                d.center,
                mu0,
                self.cfg.eps0,
                self.cfg.delta,
                self.cfg.min_scale,
                self.cfg.tol,
            )?;
            let mu = ladder_floor(room(c0).min(mu0));
            let (a, lambda) =
                center_and_scale(self.seq, c0, mu, self.cfg.eps0, self.cfg.delta, self.cfg.min_scale, self.cfg.tol)?;
            let a = if dist(a, c0) < 0.5 * mu { a } else { c0 };
            if lambda <= self.cfg.min_scale {
                self.partial = true;
                continue;
            }
            let id = self.id();
            let neck_id = self.id();
            let mut kids = Vec::new();
            if depth < self.cfg.max_depth {
                let sub = detect_in(self.seq, a, lambda, self.cfg);
                kids = self.level(&sub, a, lambda, lambda / 16.0, depth + 1)?;
            } else if !detect_in(self.seq, a, lambda, self.cfg).is_empty() {
                self.partial = true;
            }
            let (neck, body) = self.energies(a, lambda, mu, &kids)?;
            let mut children = vec![TreeNode {
                id: neck_id,
                center: a,
                scale: lambda,
                radius: mu,
                tag: RegionTag::Neck,
                energy: neck,
                children: Vec::new(),
            }];
            children.extend(kids);
            nodes.push(TreeNode {
                id,
                center: a,
                scale: lambda,
                radius: mu,
                tag: RegionTag::Bubble,
                energy: body,
                children,
            });
        }
        Ok(nodes)
    }

    /// Neck energy on a grid; body energy on a grid for leaves, else by cubature minus child patches.
    fn energies(&self, a: [f64; 2], lambda: f64, mu: f64, kids: &[TreeNode]) -> Result<(f64, f64)> {
        let cfg = self.cfg;
        let neck_spec = AnnulusSpec::new(lambda, mu, a)?;
        let ng = LogPolarGrid::annulus_per_octave(neck_spec, cfg.n_theta, cfg.per_octave)?;
        let neck = integrate(&energy_density(&self.seq.sample(&ng))?, &neck_spec)?;
        let body = if kids.is_empty() {
            let body_spec = AnnulusSpec::new(0.0, lambda, a)?;
            let nr = cfg.body_depth as usize * cfg.per_octave + 1;
            let bg = LogPolarGrid::disk(body_spec, cfg.n_theta, nr, cfg.body_depth)?;
            integrate(&energy_density(&self.seq.sample(&bg))?, &body_spec)?
        } else {
            let inner = self.seq.ball_energy(a, lambda, cfg.tol);
            inner - kids.iter().map(|c| self.seq.ball_energy(c.center, c.radius, cfg.tol)).sum::<f64>()
        };
        Ok((neck, body))
    }
}

/// Bubble tree of `u_k`: detection, centering and scaling recursively inside
/// each bubble region, with a per-region energy ledger.
pub fn build_bubble_tree(seq: &SyntheticSequence, cfg: &TreeConfig) -> Result<BubbleTree> {
    cfg.validate()?;
    let mut b = Builder { seq, cfg, next_id: 0, partial: false };
    let total = seq.total_energy(cfg.tol);
    let dets = detect_concentration(seq, cfg);
    let bubbles = b.level(&dets, [0.0, 0.0], 1.0, 0.25, 1)?;
    let patches: f64 = bubbles.iter().map(|n| seq.ball_energy(n.center, n.radius, cfg.tol)).sum();
    let thick = total - patches;
    fn regions(n: &TreeNode) -> f64 {
        n.children.iter().map(|c| if c.tag == RegionTag::Neck { c.energy } else { regions(c) }).sum::<f64>() + n.energy
    }
    let resolved: f64 = bubbles.iter().map(regions).sum();
    let ledger_residual = if total > 0.0 { (thick + resolved - total).abs() / total } else { 0.0 };
    let root = TreeNode {
        id: 0,
        center: [0.0, 0.0],
        scale: 1.0,
        radius: 1.0,
        tag: RegionTag::Thick,
        energy: thick,
        children: bubbles,
    };
    Ok(BubbleTree {
        k: seq.k,
        eps0: cfg.eps0,
        delta: cfg.delta,
        root,
        total_energy: total,
        limit_energy: seq.limit_energy(),
        quantization_residual: (total - seq.limit_energy() - BUBBLE_QUANTUM * seq.total_degree() as f64).abs(),
        ledger_residual,
        partial: b.partial,
    })
}

/// Energies on `N(r) = B(a, rμ) \ B(a, λ/r)` for one bubble node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeckReport {
    pub k: u32,
    pub node_id: usize,
    pub r: f64,
    pub neck_total: f64,
    /// `‖⟨∇(u_k − u_∞ − Σ ω^i_k), X_k⟩‖²` on the neck.
    pub neck_angular: f64,
    /// `‖∂_ρ u_k‖²` on the neck; equals the raw angular energy for harmonic maps.
    pub neck_radial: f64,
    pub ledger_residual: f64,
    /// `‖⟨∇u_k, X_k⟩‖²` on the neck.
    pub neck_angular_raw: f64,
    pub inner: f64,
    pub outer: f64,
    /// `λ/r ≥ rμ`: the neck is empty and every energy is zero.
    pub empty: bool,
}

/// `X_k = ∇^⊥ min_i(λ_i + |· − a_i|)` at a point.
fn neck_field(nodes: &[([f64; 2], f64)], x: f64, y: f64) -> [f64; 2] {
    let (mut best, mut e) = (f64::INFINITY, [0.0, 0.0]);
    for (a, l) in nodes {
        let d = dist([x, y], *a);
        if l + d < best && d > 0.0 {
            best = l + d;
            e = [(x - a[0]) / d, (y - a[1]) / d];
        }
    }
    [-e[1], e[0]]
}

fn directional_energy(u: &Field, dir: &[[f64; 2]], region: &AnnulusSpec) -> Result<f64> {
    let g = gradient(u)?;
    let nc = u.n_components();
    let vals: Vec<f64> = dir
        .iter()
        .enumerate()
        .map(|(k, x)| {
            (0..nc)
                .map(|c| {
                    let gv = &g.values()[k * 2 * nc + 2 * c..k * 2 * nc + 2 * c + 2];
                    (gv[0] * x[0] + gv[1] * x[1]).powi(2)
                })
                .sum()
        })
        .collect();
    integrate(&Field::from_component(u.grid(), vals)?, region)
}

/// Neck energies of every bubble node at neck parameter `r ∈ (0, 1]`.
pub fn neck_report(tree: &BubbleTree, seq: &SyntheticSequence, r: f64, cfg: &TreeConfig) -> Result<Vec<NeckReport>> {
    if !(r > 0.0 && r <= 1.0) {
        return invalid(format!("neck parameter must lie in (0, 1], got {r}"));
    }
    let bubbles = tree.bubbles();
    let nodes: Vec<([f64; 2], f64)> = bubbles.iter().map(|b| (b.center, b.scale)).collect();
    let mut out = Vec::new();
    for b in &bubbles {
        let mu = BubbleTree::neck_of(b).map_or(b.radius, |n| n.radius);
        let (inner, outer) = (b.scale / r, r * mu);
        let mut rep = NeckReport {
            k: tree.k,
            node_id: b.id,
            r,
            neck_total: 0.0,
            neck_angular: 0.0,
            neck_radial: 0.0,
            ledger_residual: tree.ledger_residual,
            neck_angular_raw: 0.0,
            inner,
            outer,
            empty: inner >= outer,
        };
        if !rep.empty {
            let spec = AnnulusSpec::new(inner, outer, b.center)?;
            let grid = LogPolarGrid::annulus_per_octave(spec, cfg.n_theta, cfg.per_octave)?;
            let u = seq.sample(&grid);
            let rem = seq.sample_remainder(&grid);
            let mut x = Vec::with_capacity(grid.n_nodes());
            let mut radial = Vec::with_capacity(grid.n_nodes());
            for j in 0..grid.n_radial() {
                for i in 0..grid.n_theta() {
                    let p = grid.point(j, i);
                    x.push(neck_field(&nodes, p[0], p[1]));
                    radial.push([grid.cos_theta(i), grid.sin_theta(i)]);
                }
            }
            rep.neck_total = integrate(&energy_density(&u)?, &spec)?;
            rep.neck_angular = directional_energy(&rem, &x, &spec)?;
            rep.neck_angular_raw = directional_energy(&u, &x, &spec)?;
            rep.neck_radial = directional_energy(&u, &radial, &spec)?;
        }
        out.push(rep);
    }
    Ok(out)
}

/// One tree per `k` with its neck reports for every `r`, computed in parallel over `k`.
pub fn bubble_sweep(
    kind: SequenceKind,
    ks: &[u32],
    rs: &[f64],
    cfg: &TreeConfig,
) -> Result<Vec<(BubbleTree, Vec<NeckReport>)>> {
    ks.par_iter()
        .map(|&k| {
            let seq = kind.build(k);
            let tree = build_bubble_tree(&seq, cfg)?;
            let mut necks = Vec::new();
            for &r in rs {
                necks.extend(neck_report(&tree, &seq, r, cfg)?);
            }
            Ok((tree, necks))
        })
        .collect()
}

pub fn write_neck_csv(rows: &[NeckReport], w: impl Write) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_neck_csv(r: impl Read) -> Result<Vec<NeckReport>> {
    let mut rd = csv::Reader::from_reader(r);
    rd.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonic_annulus::{random_l1, sample};
    use crate::wente::inverse_stereographic;

    fn annulus(ri: f64, ro: f64, per_octave: usize) -> (Grid, AnnulusSpec) {
        let spec = AnnulusSpec::annulus(ri, ro).unwrap();
        (LogPolarGrid::annulus_per_octave(spec, 64, per_octave).unwrap(), spec)
    }

    #[test]
    fn log_profile_is_scale_invariant() {
        let (g, spec) = annulus((-10.0f64).exp2(), 1.0, 64);
        let p = dyadic_profile(&Field::from_polar(&g, |r, _| r.ln()), &spec).unwrap();
        assert_eq!(p.energies.len(), 10);
        for e in &p.energies {
            assert!((e - 2.0 * PI * std::f64::consts::LN_2).abs() < 1e-4, "{e}");
        }
        assert!(p.energies.iter().sum::<f64>() <= p.total * (1.0 + 1e-9));
        let c = dyadic_profile(&Field::from_polar(&g, |_, _| 3.0), &spec).unwrap();
        assert!(c.sup_e < 1e-20);
    }

    #[test]
    fn thin_annulus_rejected() {
        let (g, spec) = annulus(0.5, 1.0, 32);
        assert!(dyadic_profile(&Field::from_polar(&g, |r, _| r), &spec).is_err());
    }

    #[test]
    fn bubble_profile_matches_closed_form() {
        let l = (-8.0f64).exp2();
        let (g, spec) = annulus(l, 1.0, 48);
        let u = Field::from_xy_vec(&g, 3, |x, y, o| o.copy_from_slice(&inverse_stereographic(x / l, y / l)));
        let p = dyadic_profile(&u, &spec).unwrap();
        let cum = |r: f64| BUBBLE_QUANTUM * r * r / (l * l + r * r);
        for (rho, e) in p.radii.iter().zip(&p.energies) {
            let exact = cum(2.0 * rho) - cum(*rho);
            assert!((e - exact).abs() < 1e-4 * exact.max(1.0), "{rho} {e} {exact}");
        }
        assert!(p.energies.windows(2).skip(4).all(|w| w[1] < w[0]));
    }

    #[test]
    fn weak_l2_of_log() {
        for d in [6, 10] {
            let (g, spec) = annulus((-(d as f64)).exp2(), 1.0, 32);
            let w = weak_l2_check(&Field::from_polar(&g, |r, _| r.ln()), &spec).unwrap();
            assert!((w.lhs / (2.0 * PI.sqrt()) - 1.0).abs() < 0.02, "{}", w.lhs);
            assert!((w.rhs - (2.0 * PI * std::f64::consts::LN_2).sqrt()).abs() < 1e-4);
            assert!(w.ratio < WEAK_L2_C_REG);
        }
        let (g, spec) = annulus(0.01, 1.0, 32);
        let z = weak_l2_check(&Field::from_polar(&g, |_, _| 1.0), &spec).unwrap();
        assert_eq!((z.lhs, z.rhs, z.ratio), (0.0, 0.0, 0.0));
    }

    #[test]
    fn weak_l2_regression_bound_on_harmonic_family() {
        for d in [6, 9, 12] {
            let eps = (-(d as f64)).exp2();
            let (g, spec) = annulus(eps, 1.0, 32);
            for seed in 0..4 {
                let h = random_l1(seed, eps, 4);
                let w = weak_l2_check(&sample(&h, &g).unwrap(), &spec).unwrap();
                assert!(w.ratio > 0.0 && w.ratio <= WEAK_L2_C_REG, "{d} {seed} {}", w.ratio);
            }
        }
    }

    #[test]
    fn partition_of_uniform_density() {
        let (g, spec) = annulus(0.1, 1.0, 32);
        let density = Field::from_polar(&g, |_, _| 1.0);
        let total = integrate(&density, &spec).unwrap();
        let eps0 = total / 3.5;
        let p = radii_partition(&density, &spec, eps0).unwrap();
        assert!(p.count() == 4 || p.count() == 5, "{}", p.count());
        assert!(p.energies.iter().all(|e| *e <= eps0 * (1.0 + 1e-12)));
        assert!(p.radii.windows(2).all(|w| w[0] < w[1]));
        let zero = radii_partition(&Field::from_polar(&g, |_, _| 0.0), &spec, 1.0).unwrap();
        assert_eq!(zero.radii, vec![0.1, 1.0]);
    }

    #[test]
    fn angular_check_on_radial_fields() {
        let (g, spec) = annulus(1e-3, 1.0, 32);
        let u = Field::from_polar(&g, |r, _| r.ln());
        let rep = angular_quantization_check(&u, &spec, &omega_density(&u).unwrap(), 1.0).unwrap();
        assert!(rep.lhs < 1e-20 && rep.rhs > 0.0);
    }

    #[test]
    fn omega_density_is_twice_energy_for_sphere_maps() {
        let (g, _) = annulus(0.01, 1.0, 32);
        let u = Field::from_xy_vec(&g, 3, |x, y, o| o.copy_from_slice(&inverse_stereographic(4.0 * x, 4.0 * y)));
        let om = omega_density(&u).unwrap();
        let e = energy_density(&u).unwrap();
        for (a, b) in om.values().iter().zip(e.values()) {
            assert!((a - 2.0 * b).abs() < 1e-9 * b.max(1.0));
        }
    }

    #[test]
    fn pohozaev_cases() {
        let (g, _) = annulus(1e-3, 1.0, 64);
        let l = 0.03;
        let bubble = Field::from_xy_vec(&g, 3, |x, y, o| o.copy_from_slice(&inverse_stereographic(x / l, y / l)));
        for j in 0..g.n_radial() {
            assert!(pohozaev_residual(&bubble, g.rho(j)).unwrap().residual < 1e-6);
        }
        let log = pohozaev_residual(&Field::from_polar(&g, |r, _| r.ln()), 0.1).unwrap();
        assert!((log.signed - 1.0).abs() < 1e-12 && log.snapped);
        let eq = Field::from_polar_vec(&g, 3, |_, t, o| o.copy_from_slice(&[t.cos(), t.sin(), 0.0]));
        assert!((pohozaev_residual(&eq, 0.1).unwrap().signed + 1.0).abs() < 1e-12);
    }

    #[test]
    fn sequences_are_unit_length_and_shrink() {
        let s = SyntheticSequence::bubble_on_bubble(6);
        for (x, y) in [(0.0, 0.0), (0.1, -0.05), (0.3, 0.7), (0.1 + 1.0 / 64.0, -0.05)] {
            let u = s.eval(x, y);
            assert!((u.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-14);
        }
        assert!(s.at(7).scale(0) < s.scale(0) && s.at(7).scale(1) < s.scale(1));
        assert_eq!(s.scale(1), s.scale(0).powi(2));
    }

    #[test]
    fn density_matches_sampled_gradient() {
        let s = SyntheticSequence::single(4);
        let spec = AnnulusSpec::new(0.0, 0.5, [0.1, -0.05]).unwrap();
        let g = LogPolarGrid::disk(spec, 128, 641, 20).unwrap();
        let numeric = integrate(&energy_density(&s.sample(&g)).unwrap(), &spec).unwrap();
        let cub = s.ball_energy([0.1, -0.05], 0.5, 1e-10);
        assert!((numeric - cub).abs() < 1e-6 * cub, "{numeric} {cub}");
    }

    #[test]
    fn cubature_recovers_closed_forms() {
        let bg = SyntheticSequence::background_only(5);
        let e = bg.total_energy(1e-11);
        assert!((e - bg.limit_energy()).abs() < 1e-8, "{e} {}", bg.limit_energy());
        let s = SyntheticSequence { background: Complex64::new(0.0, 0.0), ..SyntheticSequence::single(20) };
        let l = s.scale(0);
        let r = 1e-3;
        let exact = BUBBLE_QUANTUM * r * r / (l * l + r * r);
        assert!((s.ball_energy(s.center(0), r, 1e-11) - exact).abs() < 1e-8);
        let m = s.ball_moments([0.1, -0.04], 0.05, 1e-11);
        assert!((m[1] / m[0] - 0.1).abs() < 1e-8 && (m[2] / m[0] + 0.05).abs() < 1e-8);
    }

    #[test]
    fn radially_symmetric_bump_is_centered_exactly() {
        let s = SyntheticSequence { background: Complex64::new(0.0, 0.0), ..SyntheticSequence::single(8) };
        let (a, _) = center_and_scale(&s, [0.1, -0.05], 0.05, 4.0 * PI, 2.0 * PI, 1e-12, 1e-11).unwrap();
        assert!(dist(a, [0.1, -0.05]) < 1e-10);
    }

    #[test]
    fn no_bubbles_gives_a_single_thick_node() {
        let cfg = TreeConfig::half_quantum();
        let s = SyntheticSequence::background_only(8);
        assert!(detect_concentration(&s, &cfg).is_empty());
        let t = build_bubble_tree(&s, &cfg).unwrap();
        assert_eq!(t.depth(), 0);
        assert!(t.root.children.is_empty() && t.ledger_residual == 0.0);
        assert!(neck_report(&t, &s, 0.5, &cfg).unwrap().is_empty());
    }

    #[test]
    fn single_detection_is_close() {
        let cfg = TreeConfig::half_quantum();
        for k in [5, 8] {
            let s = SyntheticSequence::single(k);
            let d = detect_concentration(&s, &cfg);
            assert_eq!(d.len(), 1, "{k} {d:?}");
            assert!(dist(d[0].center, s.center(0)) <= 2.0 * s.scale(0));
        }
    }

    #[test]
    fn tree_json_and_neck_csv_round_trip() {
        let cfg = TreeConfig::half_quantum();
        let s = SyntheticSequence::single(8);
        let t = build_bubble_tree(&s, &cfg).unwrap();
        assert_eq!(BubbleTree::from_json(&t.to_json().unwrap()).unwrap(), t);
        let rows = neck_report(&t, &s, 0.5, &cfg).unwrap();
        let mut buf = Vec::new();
        write_neck_csv(&rows, &mut buf).unwrap();
        assert_eq!(read_neck_csv(&buf[..]).unwrap(), rows);
    }
}
