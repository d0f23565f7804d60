//! Experiment runners. Each writes `<out>/<experiment>.csv` (plus tree JSON
//! for the bubble demo) and returns its summary rows.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use lorentz_wente::harmonic_annulus::{self, random_l1, sample, HarmonicLemma};
use lorentz_wente::lorentz::{duality_pairing, l21_levelset, l2_norm, lorentz_norm, rearrange};
use lorentz_wente::polar_grid::{gradient, integrate, AnnulusSpec, Field, Grid, LogPolarGrid};
use lorentz_wente::quantization::{bubble_sweep, pohozaev_residual, radii_partition, weak_l2_check, WEAK_L2_C_REG};
use lorentz_wente::random::{normal, rng};
use lorentz_wente::wente::{
    first_order_sweep, inverse_stereographic, lr1_sweep, wente_sweep, WenteLemma, WenteSweepConfig,
};

use crate::config::{Experiment, SweepConfig};
use crate::summary::SummaryRow;
use crate::{table, CliError};

/// Calibration factor of the uniformity plateaus.
pub const PLATEAU_BOUND: f64 = 1.25;
pub const FIRST_ORDER_PLATEAU_BOUND: f64 = 1.5;

pub fn run(exp: Experiment, cfg: &SweepConfig, out: &Path) -> Result<Vec<SummaryRow>, CliError> {
    fs::create_dir_all(out)?;
    match exp {
        Experiment::LorentzCheck => lorentz_check(cfg, out),
        Experiment::WenteSweep => wente(cfg, out),
        Experiment::HarmonicSweep => harmonic(cfg, out),
        Experiment::Lr1Sweep => lr1(cfg, out),
        Experiment::FirstOrderSweep => first_order(cfg, out),
        Experiment::WeakL2 => weak_l2(cfg, out),
        Experiment::PartitionFuzz => partition_fuzz(cfg, out),
        Experiment::BubbleDemo => bubble_demo(cfg, out),
        Experiment::Pohozaev => pohozaev(cfg, out),
    }
}

fn csv_path(out: &Path, exp: Experiment) -> std::path::PathBuf {
    out.join(format!("{}.csv", exp.id()))
}

/// Largest `value(ε)/value(ε_max)` within each key group.
pub fn worst_plateau<T, K: PartialEq>(
    rows: &[T],
    key: impl Fn(&T) -> K,
    eps: impl Fn(&T) -> f64,
    value: impl Fn(&T) -> f64,
) -> f64 {
    let mut worst = 0.0f64;
    for (i, r) in rows.iter().enumerate() {
        let k = key(r);
        if rows[..i].iter().any(|p| key(p) == k) {
            continue;
        }
        let group: Vec<&T> = rows.iter().filter(|p| key(p) == k).collect();
        let base = group.iter().max_by(|a, b| eps(a).total_cmp(&eps(b))).map(|p| value(p)).unwrap_or(1.0);
        for p in group {
            worst = worst.max(value(p) / base);
        }
    }
    worst
}

fn wente_cfg(cfg: &SweepConfig, exp: Experiment) -> WenteSweepConfig {
    WenteSweepConfig {
        n_theta: cfg.n_theta,
        per_octave: cfg.per_octave_for(exp),
        k_bound: cfg.k_bound,
        ..WenteSweepConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LorentzRow {
    pub seed: u64,
    pub l21: f64,
    pub l22: f64,
    pub l2inf: f64,
    pub l2: f64,
    pub pairing: f64,
    pub pairing_bound: f64,
    pub duality_ok: bool,
    pub nesting_ok: bool,
    pub sandwich_ok: bool,
    pub scaling_ok: bool,
}

/// Gaussian or log-normal nodal values with a random overall scale.
fn random_field(g: &Grid, r: &mut impl Rng) -> Result<Field, CliError> {
    let heavy = r.random::<f64>() < 0.5;
    let scale = (2.0 * normal(r)).exp();
    let values = (0..g.n_nodes())
        .map(|_| {
            let z = normal(r);
            scale * if heavy { (1.5 * z).exp() } else { z }
        })
        .collect();
    Ok(Field::new(g.clone(), 1, values)?)
}

fn lorentz_check(cfg: &SweepConfig, out: &Path) -> Result<Vec<SummaryRow>, CliError> {
    let exp = Experiment::LorentzCheck;
    let spec = AnnulusSpec::annulus(0.05, 1.0)?;
    let g = LogPolarGrid::annulus_per_octave(spec, cfg.n_theta, 8)?;
    let tol = 1.0 + 1e-12;
    let rows = cfg
        .seeds
        .par_iter()
        .map(|&seed| -> Result<LorentzRow, CliError> {
            let mut r = rng(seed);
            let (f, h) = (random_field(&g, &mut r)?, random_field(&g, &mut r)?);
            let n = |f: &Field, p: f64, q: f64| lorentz_norm(f, p, q, &spec).map(|n| n.value);
            let (l21, l22, l2inf) = (n(&f, 2.0, 1.0)?, n(&f, 2.0, 2.0)?, n(&f, 2.0, f64::INFINITY)?);
            let l2 = l2_norm(&f, &spec)?;
            let pairing = duality_pairing(&f, &h, &spec)?;
            let pairing_bound = l21 * n(&h, 2.0, f64::INFINITY)?;
            let c = -3.7 * r.random::<f64>() - 0.1;
            let fc = f.scaled(c);
            let mut scaling_ok = true;
            for (p, q) in [(2.0, 1.0), (2.0, 2.0), (2.0, f64::INFINITY), (3.0, 1.5), (1.5, 4.0)] {
                let (a, b) = (n(&fc, p, q)?, c.abs() * n(&f, p, q)?);
                scaling_ok &= (a - b).abs() <= 1e-12 * b;
            }
            Ok(LorentzRow {
                seed,
                l21,
                l22,
                l2inf,
                l2,
                pairing,
                pairing_bound,
                duality_ok: pairing <= pairing_bound * tol,
                nesting_ok: l2inf <= l22 * tol && l22 <= l21 * tol,
                sandwich_ok: l2 <= l22 * tol && l22 <= 2.0 * l2,
                scaling_ok,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    table::save(&csv_path(out, exp), exp.id(), &rows)?;

    let id = exp.id();
    let count = |f: fn(&LorentzRow) -> bool| rows.iter().filter(|r| !f(r)).count() as f64;
    let mut summary = vec![
        SummaryRow::at_most(id, "duality_violations", count(|r| r.duality_ok), 0.0),
        SummaryRow::at_most(id, "nesting_violations", count(|r| r.nesting_ok), 0.0),
        SummaryRow::at_most(id, "sandwich_violations", count(|r| r.sandwich_ok), 0.0),
        SummaryRow::at_most(id, "scaling_violations", count(|r| r.scaling_ok), 0.0),
    ];
    let c = 2.5;
    let one = Field::from_polar(&g, |_, _| c);
    let exact = 4.0 * c * rearrange(&one, &spec)?.total_measure.sqrt();
    let err = [l21_levelset(&one, &spec)?.value, lorentz_norm(&one, 2.0, 1.0, &spec)?.value]
        .iter()
        .map(|v| (v - exact).abs() / exact)
        .fold(0.0, f64::max);
    summary.push(SummaryRow::at_most(id, "constant_field_error", err, 1e-10));

    // |∇ ln ρ| on B_1 \ B_{λε} against its closed form 4√π arccosh(1/(λε)).
    let lambda = cfg.lambda.unwrap_or(2.0);
    for eps in cfg.ladder() {
        let x = 1.0 / (lambda * eps);
        let domain = AnnulusSpec::annulus(eps, 1.0)?;
        let g = LogPolarGrid::annulus_per_octave(domain, cfg.n_theta, cfg.per_octave_for(exp))?;
        let grad = gradient(&Field::from_polar(&g, |r, _| r.ln()))?;
        let v = l21_levelset(&grad, &AnnulusSpec::annulus(lambda * eps, 1.0)?)?.value;
        let d = -eps.log2();
        summary.push(SummaryRow::recorded(id, format!("log_ratio_2^-{d}"), v / (4.0 * PI.sqrt() * x.ln())));
        summary.push(SummaryRow::at_most(
            id,
            format!("log_closed_form_gap_2^-{d}"),
            (v / (4.0 * PI.sqrt() * x.acosh()) - 1.0).abs(),
            1e-2,
        ));
    }
    Ok(summary)
}

fn wente_lemma(name: &str) -> WenteLemma {
    match name {
        "wente" => WenteLemma::Disk,
        "2.2" => WenteLemma::MeanNormalized,
        "LR0" => WenteLemma::BoundedTraces,
        _ => WenteLemma::ZeroTrace,
    }
}

fn wente(cfg: &SweepConfig, out: &Path) -> Result<Vec<SummaryRow>, CliError> {
    let exp = Experiment::WenteSweep;
    let lemma = wente_lemma(cfg.lemma.as_deref().unwrap_or("l4"));
    let rows = wente_sweep(lemma, &cfg.ladder(), &cfg.seeds, &wente_cfg(cfg, exp))?;
    table::save(&csv_path(out, exp), exp.id(), &rows)?;
    let id = exp.id();
    let max_ratio = rows.iter().map(|r| r.lemma_ratio).fold(0.0, f64::max);
    let mut summary = vec![SummaryRow::recorded(id, format!("{}_max_lemma_ratio", lemma.name()), max_ratio)];
    if lemma != WenteLemma::Disk {
        let plateau = worst_plateau(&rows, |r| r.seed, |r| r.epsilon, |r| r.lemma_ratio);
        summary.push(SummaryRow::at_most(id, format!("{}_plateau", lemma.name()), plateau, PLATEAU_BOUND));
    }
    Ok(summary)
}

fn harmonic(cfg: &SweepConfig, out: &Path) -> Result<Vec<SummaryRow>, CliError> {
    let exp = Experiment::HarmonicSweep;
    let (lemma, name, default_lambda) = match cfg.lemma.as_deref() {
        Some("l3") => (HarmonicLemma::L3, "l3", 0.5),
        _ => (HarmonicLemma::L1, "l1", 2.0),
    };
    let lambda = cfg.lambda.unwrap_or(default_lambda);
    let rows = harmonic_annulus::sweep(lemma, &cfg.ladder(), lambda, &cfg.seeds, cfg.n_modes, cfg.k_bound)?;
    table::save(&csv_path(out, exp), exp.id(), &rows)?;
    let plateau = worst_plateau(&rows, |r| r.seed, |r| r.epsilon, |r| r.ratio);
    let max_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    Ok(vec![
        SummaryRow::recorded(exp.id(), format!("{name}_max_ratio"), max_ratio),
        SummaryRow::at_most(exp.id(), format!("{name}_plateau"), plateau, PLATEAU_BOUND),
    ])
}

fn lr1(cfg: &SweepConfig, out: &Path) -> Result<Vec<SummaryRow>, CliError> {
    let exp = Experiment::Lr1Sweep;
    let rows = lr1_sweep(&cfg.ladder(), &cfg.seeds, &wente_cfg(cfg, exp))?;
    table::save(&csv_path(out, exp), exp.id(), &rows)?;
    let plateau = worst_plateau(&rows, |r| r.seed, |r| r.epsilon, |r| r.ratio);
    let max_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    Ok(vec![
        SummaryRow::recorded(exp.id(), "max_ratio", max_ratio),
        SummaryRow::at_most(exp.id(), "plateau", plateau, PLATEAU_BOUND),
    ])
}

fn first_order(cfg: &SweepConfig, out: &Path) -> Result<Vec<SummaryRow>, CliError> {
    let exp = Experiment::FirstOrderSweep;
    let rows = first_order_sweep(&cfg.ladder(), &cfg.seeds, &wente_cfg(cfg, exp))?;
    table::save(&csv_path(out, exp), exp.id(), &rows)?;
    let truth = rows.iter().map(|r| r.truth_error).fold(0.0, f64::max);
    let plateau = worst_plateau(&rows, |r| (r.seed, r.component), |r| r.epsilon, |r| r.bound_ratio);
    Ok(vec![
        SummaryRow::at_most(exp.id(), "max_truth_error", truth, 1e-4),
        SummaryRow::at_most(exp.id(), "bound_plateau", plateau, FIRST_ORDER_PLATEAU_BOUND),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakL2Row {
    pub family: String,
    pub epsilon: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

fn weak_l2(cfg: &SweepConfig, out: &Path) -> Result<Vec<SummaryRow>, CliError> {
    let exp = Experiment::WeakL2;
    let ladder = cfg.ladder();
    // Few enough modes that the angular grid resolves them.
    let n_modes = (cfg.n_theta / 16).min(cfg.n_modes);
    let mut families: Vec<Option<u64>> = vec![None];
    families.extend(cfg.seeds.iter().map(|&s| Some(s)));
    let cells: Vec<(Option<u64>, f64)> = families.iter().flat_map(|&f| ladder.iter().map(move |&e| (f, e))).collect();
    let rows = cells
        .par_iter()
        .map(|&(fam, eps)| -> Result<WeakL2Row, CliError> {
            let spec = AnnulusSpec::annulus(eps, 1.0)?;
            let g = LogPolarGrid::annulus_per_octave(spec, cfg.n_theta, cfg.per_octave_for(exp))?;
            let (family, u) = match fam {
                None => ("log".to_string(), Field::from_polar(&g, |r, _| r.ln())),
                Some(s) => (format!("l1-seed-{s}"), sample(&random_l1(s, eps, n_modes), &g)?),
            };
            let rep = weak_l2_check(&u, &spec)?;
            Ok(WeakL2Row { family, epsilon: eps, lhs: rep.lhs, rhs: rep.rhs, ratio: rep.ratio })
        })
        .collect::<Result<Vec<_>, _>>()?;
    table::save(&csv_path(out, exp), exp.id(), &rows)?;

    let logs: Vec<f64> = rows.iter().filter(|r| r.family == "log").map(|r| r.ratio).collect();
    let (lo, hi) = logs.iter().fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
    let modes: Vec<&WeakL2Row> = rows.iter().filter(|r| r.family != "log").collect();
    let plateau = worst_plateau(&modes, |r| r.family.clone(), |r| r.epsilon, |r| r.ratio);
    let max_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    Ok(vec![
        SummaryRow::at_most(exp.id(), "log_spread", hi / lo - 1.0, 0.05),
        SummaryRow::at_most(exp.id(), "mode_plateau", plateau, PLATEAU_BOUND),
        SummaryRow::at_most(exp.id(), "max_ratio", max_ratio, WEAK_L2_C_REG),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionRow {
    pub seed: u64,
    pub r_in: f64,
    pub total: f64,
    pub eps0: f64,
    pub count: usize,
    pub count_bound: usize,
    pub max_piece: f64,
    pub cap_ok: bool,
    pub count_ok: bool,
    pub order_ok: bool,
}

/// Noisy density with one Gaussian bump in `t = ln ρ`, cut at a random `ε₀`.
fn partition_instance(seed: u64, cfg: &SweepConfig) -> Result<PartitionRow, CliError> {
    let mut r = rng(seed);
    let r_in = (-(1.0 + 9.0 * r.random::<f64>())).exp2();
    let spec = AnnulusSpec::annulus(r_in, 1.0)?;
    let g = LogPolarGrid::annulus_per_octave(spec, cfg.n_theta, cfg.per_octave_for(Experiment::PartitionFuzz))?;
    let bump_t = r.random::<f64>() * r_in.ln();
    let bump_w = 0.05 + r.random::<f64>();
    let amp = (3.0 * normal(&mut r)).exp();
    let values = (0..g.n_nodes())
        .map(|k| {
            let t = g.t(k / g.n_theta());
            normal(&mut r).exp() * (1.0 + amp * (-((t - bump_t) / bump_w).powi(2)).exp())
        })
        .collect();
    let density = Field::new(g.clone(), 1, values)?;
    let total = integrate(&density, &spec)?;
    let eps0 = total / (0.3 + 30.0 * r.random::<f64>());
    let p = radii_partition(&density, &spec, eps0)?;
    let mut max_piece = 0.0f64;
    for w in p.radii.windows(2) {
        max_piece = max_piece.max(integrate(&density, &AnnulusSpec::annulus(w[0], w[1])?)?);
    }
    let count_bound = (total / eps0).ceil() as usize + 1;
    Ok(PartitionRow {
        seed,
        r_in,
        total,
        eps0,
        count: p.count(),
        count_bound,
        max_piece,
        cap_ok: max_piece <= eps0 * (1.0 + 1e-9),
        count_ok: p.count() <= count_bound,
        order_ok: p.radii.first() == Some(&r_in)
            && p.radii.last() == Some(&1.0)
            && p.radii.windows(2).all(|w| w[0] < w[1]),
    })
}

fn partition_fuzz(cfg: &SweepConfig, out: &Path) -> Result<Vec<SummaryRow>, CliError> {
    let exp = Experiment::PartitionFuzz;
    let rows = cfg.seeds.par_iter().map(|&s| partition_instance(s, cfg)).collect::<Result<Vec<_>, _>>()?;
    table::save(&csv_path(out, exp), exp.id(), &rows)?;
    let count = |f: fn(&PartitionRow) -> bool| rows.iter().filter(|r| !f(r)).count() as f64;
    Ok(vec![
        SummaryRow::at_most(exp.id(), "cap_violations", count(|r| r.cap_ok), 0.0),
        SummaryRow::at_most(exp.id(), "count_violations", count(|r| r.count_ok), 0.0),
        SummaryRow::at_most(exp.id(), "order_violations", count(|r| r.order_ok), 0.0),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PohozaevRow {
    pub case: String,
    pub ring: usize,
    pub radius: f64,
    pub signed: f64,
    pub residual: f64,
}

fn pohozaev(cfg: &SweepConfig, out: &Path) -> Result<Vec<SummaryRow>, CliError> {
    let exp = Experiment::Pohozaev;
    let spec = AnnulusSpec::annulus(1e-3, 1.0)?;
    let g = LogPolarGrid::annulus_per_octave(spec, cfg.n_theta, cfg.per_octave_for(exp))?;
    let l = 0.03;
    let mut rows = Vec::new();
    for deg in [1i32, 2] {
        let u = Field::from_xy_vec(&g, 3, |x, y, o| {
            let w = Complex64::new(x / l, y / l).powi(deg);
            o.copy_from_slice(&inverse_stereographic(w.re, w.im));
        });
        for j in 0..g.n_radial() {
            let p = pohozaev_residual(&u, g.rho(j))?;
            rows.push(PohozaevRow {
                case: format!("bubble-degree-{deg}"),
                ring: p.ring,
                radius: p.radius,
                signed: p.signed,
                residual: p.residual,
            });
        }
    }
    let radial = Field::from_polar(&g, |r, _| r.ln());
    let angular = Field::from_polar_vec(&g, 3, |_, t, o| o.copy_from_slice(&[t.cos(), t.sin(), 0.0]));
    for (case, u) in [("radial-control", radial), ("angular-control", angular)] {
        let p = pohozaev_residual(&u, 0.1)?;
        rows.push(PohozaevRow {
            case: case.into(),
            ring: p.ring,
            radius: p.radius,
            signed: p.signed,
            residual: p.residual,
        });
    }
    table::save(&csv_path(out, exp), exp.id(), &rows)?;
    let worst = rows.iter().filter(|r| r.case.starts_with("bubble")).map(|r| r.residual).fold(0.0, f64::max);
    let control =
        rows.iter().filter(|r| r.case.ends_with("control")).map(|r| (r.residual - 1.0).abs()).fold(0.0, f64::max);
    Ok(vec![
        SummaryRow::at_most(exp.id(), "max_bubble_residual", worst, 1e-6),
        SummaryRow::at_most(exp.id(), "control_gap", control, 1e-12),
    ])
}

fn bubble_demo(cfg: &SweepConfig, out: &Path) -> Result<Vec<SummaryRow>, CliError> {
    let exp = Experiment::BubbleDemo;
    let mut ks = cfg.ks.clone();
    ks.sort_unstable();
    ks.dedup();
    let results = bubble_sweep(cfg.kind, &ks, &cfg.rs, &cfg.tree)?;
    let mut necks = Vec::new();
    for (tree, rows) in &results {
        fs::write(out.join(format!("tree_k{}.json", tree.k)), tree.to_json()?)?;
        necks.extend(rows.iter().cloned());
    }
    table::save(&csv_path(out, exp), exp.id(), &necks)?;

    let id = exp.id();
    let (last, last_necks) = results.last().expect("ks is nonempty");
    let depth_errors = results.iter().filter(|(t, _)| t.depth() != cfg.kind.depth()).count() as f64;
    let ledger = results.iter().map(|(t, _)| t.ledger_residual).fold(0.0, f64::max);
    let angular = last_necks.iter().map(|n| n.neck_angular).fold(0.0, f64::max);
    Ok(vec![
        SummaryRow::at_most(id, "depth_errors", depth_errors, 0.0),
        SummaryRow::at_most(id, "max_ledger_residual", ledger, 1e-3),
        SummaryRow::at_most(id, "final_neck_angular", angular, 1e-2),
        SummaryRow::at_most(id, "final_quantization_residual", last.quantization_residual, 5e-2),
    ])
}
