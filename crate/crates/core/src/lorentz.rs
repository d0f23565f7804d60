//! Decreasing rearrangements and Lorentz norms on sampled fields.
//!
//! A sampled field with cell areas is a step function, so its rearrangement
//! `f*` is a staircase and `f**(t) = t⁻¹∫₀ᵗ f*` is `v_k + B_k / t` on each
//! step. Every norm below is integrated piecewise against that form, never by
//! sampling the level parameter.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::polar_grid::{AnnulusSpec, Field};

/// `f*` as `(value, measure)` steps with strictly decreasing values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRearrangement {
    pub steps: Vec<(f64, f64)>,
    pub total_measure: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormMethod {
    MaximalFunction,
    LevelSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorentzNorm {
    pub p: f64,
    /// `f64::INFINITY` encodes the weak space `L^{p,∞}`.
    pub q: f64,
    pub value: f64,
    pub method: NormMethod,
}

impl StepRearrangement {
    /// Rearrange absolute values carrying the given measures; zero-measure samples are dropped.
    pub fn from_weighted(values: &[f64], weights: &[f64]) -> Result<Self> {
        if values.len() != weights.len() {
            return invalid("values and weights differ in length");
        }
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(values.len());
        for (&v, &w) in values.iter().zip(weights) {
            if !v.is_finite() || !w.is_finite() || w < 0.0 {
                return invalid("values must be finite and weights nonnegative");
            }
            if w > 0.0 {
                pairs.push((v.abs(), w));
            }
        }
        if pairs.is_empty() {
            return invalid("empty region");
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut steps: Vec<(f64, f64)> = Vec::new();
        for (v, w) in pairs {
            match steps.last_mut() {
                Some(last) if last.0 == v => last.1 += w,
                _ => steps.push((v, w)),
            }
        }
        let total_measure = steps.iter().map(|s| s.1).sum();
        Ok(Self { steps, total_measure })
    }

    /// `f*(s)` (right-continuous convention; zero beyond the total measure).
    pub fn f_star(&self, s: f64) -> f64 {
        let mut m = 0.0;
        for &(v, w) in &self.steps {
            m += w;
            if s < m {
                return v;
            }
        }
        0.0
    }

    /// Running average `f**(t)`.
    pub fn f_star_star(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return self.steps[0].0;
        }
        let (mut m, mut s) = (0.0, 0.0);
        for &(v, w) in &self.steps {
            if t <= m + w {
                return (s + v * (t - m)) / t;
            }
            m += w;
            s += v * w;
        }
        s / t
    }

    /// `∫₀^∞ f*`.
    pub fn integral(&self) -> f64 {
        self.steps.iter().map(|(v, w)| v * w).sum()
    }

    /// Pieces `(a, b, v, B)` on which `f** = v + B / t`; the last piece is the tail `(A, ∞, 0, S)`.
    fn pieces(&self) -> Vec<(f64, f64, f64, f64)> {
        let mut out = Vec::with_capacity(self.steps.len() + 1);
        let (mut m, mut s) = (0.0, 0.0);
        for &(v, w) in &self.steps {
            out.push((m, m + w, v, (s - v * m).max(0.0)));
            m += w;
            s += v * w;
        }
        out.push((m, f64::INFINITY, 0.0, s));
        out
    }

    /// `‖f‖_{p,q} = (∫₀^∞ (t^{1/p} f**(t))^q dt/t)^{1/q}`, or the supremum for `q = ∞`.
    pub fn lorentz(&self, p: f64, q: f64) -> Result<f64> {
        if !(p > 1.0 && p.is_finite()) {
            return invalid(format!("Lorentz exponent p must lie in (1, ∞), got {p}"));
        }
        if !(q >= 1.0) {
            return invalid(format!("Lorentz exponent q must lie in [1, ∞], got {q}"));
        }
        if q.is_infinite() {
            let mut best: f64 = 0.0;
            for (_, b, v, bb) in self.pieces() {
                if b.is_finite() {
                    best = best.max(b.powf(1.0 / p) * (v + bb / b));
                }
            }
            return Ok(best);
        }
        let alpha = q / p;
        let mut total = 0.0;
        for (a, b, v, bb) in self.pieces() {
            total += piece_integral(a, b, v, bb, alpha, q);
        }
        Ok(total.powf(1.0 / q))
    }

    /// The level-set form `4 ∫₀^∞ |{|f| ≥ λ}|^{1/2} dλ` of the `L^{2,1}` norm.
    pub fn l21_levelset(&self) -> f64 {
        let mut m = 0.0;
        let mut acc = 0.0;
        for (k, &(v, w)) in self.steps.iter().enumerate() {
            m += w;
            let next = self.steps.get(k + 1).map_or(0.0, |s| s.0);
            acc += (v - next) * m.sqrt();
        }
        4.0 * acc
    }

    /// CSV with columns `cumulative_measure, value`.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["cumulative_measure", "value"])?;
        let mut m = 0.0;
        for &(v, w) in &self.steps {
            m += w;
            wr.write_record([m.to_string(), v.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// `∫_a^b t^{α−1} (v + B/t)^q dt` with `α = q/p`.
fn piece_integral(a: f64, b: f64, v: f64, bb: f64, alpha: f64, q: f64) -> f64 {
    if b.is_infinite() {
        // Tail: ∫_A^∞ S^q t^{α−q−1} dt, convergent because α < q.
        return if bb == 0.0 { 0.0 } else { bb.powf(q) * a.powf(alpha - q) / (q - alpha) };
    }
    if bb == 0.0 {
        return v.powf(q) * power_integral(a, b, alpha);
    }
    if q.fract() == 0.0 && q <= 64.0 {
        let n = q as u32;
        let mut binom = 1.0;
        let mut acc = 0.0;
        for m in 0..=n {
            acc += binom * v.powi((n - m) as i32) * bb.powi(m as i32) * power_integral(a, b, alpha - m as f64);
            binom = binom * (n - m) as f64 / (m + 1) as f64;
        }
        return acc;
    }
    // Non-integer q: Gauss-Legendre in u = ln t on sub-intervals of unit log-length.
    let (la, lb) = (a.ln(), b.ln());
    let parts = ((lb - la).ceil() as usize).max(1);
    let du = (lb - la) / parts as f64;
    let mut acc = 0.0;
    for k in 0..parts {
        let u0 = la + k as f64 * du;
        for (x, w) in GL8 {
            let u = u0 + 0.5 * du * (1.0 + x);
            let t = u.exp();
            acc += 0.5 * du * w * t.powf(alpha) * (v + bb / t).powf(q);
        }
    }
    acc
}

/// `∫_a^b t^{β−1} dt`.
fn power_integral(a: f64, b: f64, beta: f64) -> f64 {
    if beta == 0.0 {
        (b / a).ln()
    } else {
        (b.powf(beta) - a.powf(beta)) / beta
    }
}

const GL8: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (-0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
];

fn node_weights(f: &Field, region: &AnnulusSpec) -> Result<Vec<f64>> {
    let g = f.grid();
    let w = g.clipped_ring_weights(region)?;
    let nt = g.n_theta();
    Ok((0..g.n_nodes()).map(|k| w[k / nt]).collect())
}

fn magnitudes(f: &Field) -> Vec<f64> {
    if f.n_components() == 1 {
        f.values().to_vec()
    } else {
        f.pointwise_norm().into_values()
    }
}

/// Decreasing rearrangement of `|f|` over a region (vector fields use the pointwise norm).
pub fn rearrange(f: &Field, region: &AnnulusSpec) -> Result<StepRearrangement> {
    StepRearrangement::from_weighted(&magnitudes(f), &node_weights(f, region)?)
}

/// `‖f‖_{p,q}` through the maximal function `f**`.
pub fn lorentz_norm(f: &Field, p: f64, q: f64, region: &AnnulusSpec) -> Result<LorentzNorm> {
    let value = rearrange(f, region)?.lorentz(p, q)?;
    Ok(LorentzNorm { p, q, value, method: NormMethod::MaximalFunction })
}

/// `‖f‖_{2,1}` through the level-set formula.
pub fn l21_levelset(f: &Field, region: &AnnulusSpec) -> Result<LorentzNorm> {
    let value = rearrange(f, region)?.l21_levelset();
    Ok(LorentzNorm { p: 2.0, q: 1.0, value, method: NormMethod::LevelSet })
}

/// `∫ |f g|` over a region; bounded by `‖f‖_{2,1} ‖g‖_{2,∞}`.
pub fn duality_pairing(f: &Field, g: &Field, region: &AnnulusSpec) -> Result<f64> {
    if !f.same_grid(g) {
        return Err(Error::GridMismatch);
    }
    let w = node_weights(f, region)?;
    let (a, b) = (magnitudes(f), magnitudes(g));
    Ok(w.iter().zip(a.iter().zip(&b)).map(|(w, (x, y))| w * (x * y).abs()).sum())
}

/// Plain `‖f‖_{L²}` over a region (vector fields use the pointwise norm).
pub fn l2_norm(f: &Field, region: &AnnulusSpec) -> Result<f64> {
    let w = node_weights(f, region)?;
    Ok(w.iter().zip(magnitudes(f)).map(|(w, v)| w * v * v).sum::<f64>().sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polar_grid::LogPolarGrid;
    use std::f64::consts::PI;

    #[test]
    fn constant_staircase() {
        let r = StepRearrangement::from_weighted(&[2.0, -2.0, 2.0], &[0.5, 1.0, 1.5]).unwrap();
        assert_eq!(r.steps, vec![(2.0, 3.0)]);
        let v = r.lorentz(2.0, 1.0).unwrap();
        assert!((v - 4.0 * 2.0 * 3f64.sqrt()).abs() < 1e-12);
        assert!((r.l21_levelset() - v).abs() < 1e-12);
        // ‖c‖_{2,2}² = c² A ∫₀^A dt/t·t... = 2 c² A.
        assert!((r.lorentz(2.0, 2.0).unwrap() - 2.0 * (6.0f64).sqrt()).abs() < 1e-12);
        assert!((r.lorentz(2.0, f64::INFINITY).unwrap() - 2.0 * 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn indicator_steps() {
        let g = LogPolarGrid::disk(AnnulusSpec::disk(1.0).unwrap(), 16, 1025, 16).unwrap();
        let f = Field::from_polar(&g, |r, _| if r < 0.5 { 1.0 } else { 0.0 });
        let st = rearrange(&f, g.spec()).unwrap();
        assert_eq!(st.steps.len(), 2);
        assert_eq!(st.steps[0].0, 1.0);
        assert_eq!(st.steps[1].0, 0.0);
        assert!((st.steps[0].1 / (PI / 4.0) - 1.0).abs() < 2e-2);
        assert!((st.total_measure / PI - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(StepRearrangement::from_weighted(&[1.0], &[0.0]).is_err());
        let r = StepRearrangement::from_weighted(&[1.0], &[1.0]).unwrap();
        assert!(r.lorentz(1.0, 1.0).is_err());
        assert!(r.lorentz(2.0, 0.5).is_err());
    }

    #[test]
    fn non_integer_q_matches_integer_neighbours() {
        let r = StepRearrangement::from_weighted(&[3.0, 2.0, 0.5, 0.1], &[0.1, 0.4, 1.0, 2.0]).unwrap();
        let a = r.lorentz(2.0, 2.0).unwrap();
        let b = r.lorentz(2.0, 2.0 + 1e-9).unwrap();
        assert!((a - b).abs() < 1e-7 * a);
        let c = r.lorentz(3.0, 1.5).unwrap();
        let lo = r.lorentz(3.0, 2.0).unwrap();
        let hi = r.lorentz(3.0, 1.0).unwrap();
        assert!(lo <= c && c <= hi);
    }

    #[test]
    fn inverse_radius_rearrangement() {
        let eps = 2f64.powi(-6);
        let g = LogPolarGrid::annulus(AnnulusSpec::annulus(eps, 1.0).unwrap(), 256, 512).unwrap();
        let f = Field::from_polar(&g, |r, _| 1.0 / r);
        let st = rearrange(&f, g.spec()).unwrap();
        let mut m = 0.0;
        for &(v, w) in &st.steps[..st.steps.len() - 1] {
            let mid = m + 0.5 * w;
            let exact = (PI / (mid + PI * eps * eps)).sqrt();
            assert!((v / exact - 1.0).abs() < 1e-2);
            m += w;
        }
    }

    #[test]
    fn weak_norm_of_inverse_radius_on_disk() {
        let g = LogPolarGrid::disk(AnnulusSpec::disk(1.0).unwrap(), 256, 513, 16).unwrap();
        let f = Field::from_polar(&g, |r, _| 1.0 / r);
        let v = lorentz_norm(&f, 2.0, f64::INFINITY, g.spec()).unwrap().value;
        assert!((v / (2.0 * PI.sqrt()) - 1.0).abs() < 1e-2, "{v}");
    }

    #[test]
    fn staircase_csv() {
        let r = StepRearrangement::from_weighted(&[1.0, 2.0], &[1.0, 1.0]).unwrap();
        let mut out = Vec::new();
        r.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "cumulative_measure,value\n1,2\n2,1\n");
    }
}
