//! Property tests for the structural invariants of the norms, the radii
//! partition, the Jacobian and the Pohozaev identity.

use num_complex::Complex64;
use proptest::prelude::*;

use lorentz_wente::lorentz::{l2_norm, lorentz_norm, StepRearrangement};
use lorentz_wente::polar_grid::{integrate, AnnulusSpec, Field, LogPolarGrid};
use lorentz_wente::quantization::{pohozaev_residual, radii_partition};
use lorentz_wente::wente::{inverse_stereographic, jacobian};

fn grid(r_in: f64, nt: usize, nr: usize) -> lorentz_wente::polar_grid::Grid {
    LogPolarGrid::annulus(AnnulusSpec::annulus(r_in, 1.0).unwrap(), nt, nr).unwrap()
}

fn staircase() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    prop::collection::vec((-50.0f64..50.0, 1e-3f64..2.0), 1..60).prop_map(|p| p.into_iter().unzip())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn lorentz_norms_nest_and_sandwich((v, w) in staircase()) {
        let st = StepRearrangement::from_weighted(&v, &w).unwrap();
        let n1 = st.lorentz(2.0, 1.0).unwrap();
        let n2 = st.lorentz(2.0, 2.0).unwrap();
        let ninf = st.lorentz(2.0, f64::INFINITY).unwrap();
        let l2 = v.iter().zip(&w).map(|(v, w)| v * v * w).sum::<f64>().sqrt();
        let tol = 1e-12 * n1.max(1e-300);
        prop_assert!(ninf <= n2 + tol && n2 <= n1 + tol);
        prop_assert!(l2 <= n2 * (1.0 + 1e-12) + 1e-300 && n2 <= 2.0 * l2 * (1.0 + 1e-12));
    }

    #[test]
    fn lorentz_norms_are_homogeneous((v, w) in staircase(), c in -1e3f64..1e3, p in 1.2f64..4.0, q in 1.0f64..6.0) {
        let a = StepRearrangement::from_weighted(&v.iter().map(|x| c * x).collect::<Vec<_>>(), &w).unwrap();
        let b = StepRearrangement::from_weighted(&v, &w).unwrap();
        let (na, nb) = (a.lorentz(p, q).unwrap(), c.abs() * b.lorentz(p, q).unwrap());
        prop_assert!((na - nb).abs() <= 1e-12 * nb.max(1e-300));
    }

    #[test]
    fn rearrangement_ignores_order((v, w) in staircase(), seed in any::<u64>()) {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        let mut s = seed | 1;
        for i in (1..idx.len()).rev() {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            idx.swap(i, (s % (i as u64 + 1)) as usize);
        }
        let pv: Vec<f64> = idx.iter().map(|&i| v[i]).collect();
        let pw: Vec<f64> = idx.iter().map(|&i| w[i]).collect();
        let a = StepRearrangement::from_weighted(&v, &w).unwrap();
        let b = StepRearrangement::from_weighted(&pv, &pw).unwrap();
        prop_assert_eq!(a.steps.len(), b.steps.len());
        for q in [1.0, 2.0, f64::INFINITY] {
            let (x, y) = (a.lorentz(2.0, q).unwrap(), b.lorentz(2.0, q).unwrap());
            prop_assert!((x - y).abs() <= 1e-13 * x.max(1e-300));
        }
    }

    #[test]
    fn grid_norms_match_sandwich(values in prop::collection::vec(-5.0f64..5.0, 8 * 16)) {
        let g = grid(0.1, 8, 16);
        let f = Field::new(g.clone(), 1, values).unwrap();
        let spec = *g.spec();
        let n2 = lorentz_norm(&f, 2.0, 2.0, &spec).unwrap().value;
        let l2 = l2_norm(&f, &spec).unwrap();
        prop_assert!(l2 <= n2 * (1.0 + 1e-12) + 1e-300 && n2 <= 2.0 * l2 * (1.0 + 1e-12));
    }

    #[test]
    fn radii_partition_caps_every_annulus(
        r_in in 1e-3f64..0.2,
        values in prop::collection::vec(0.0f64..10.0, 8 * 24),
        pieces in 0.3f64..25.0,
    ) {
        let g = grid(r_in, 8, 24);
        let spec = *g.spec();
        let density = Field::new(g.clone(), 1, values).unwrap();
        let total = integrate(&density, &spec).unwrap();
        prop_assume!(total > 0.0);
        let eps0 = total / pieces;
        let p = radii_partition(&density, &spec, eps0).unwrap();
        prop_assert!(p.count() <= (total / eps0).ceil() as usize + 1);
        prop_assert!(p.radii.windows(2).all(|w| w[0] < w[1]));
        for w in p.radii.windows(2) {
            let e = integrate(&density, &AnnulusSpec::annulus(w[0], w[1]).unwrap()).unwrap();
            prop_assert!(e <= eps0 * (1.0 + 1e-9));
        }
    }

    #[test]
    fn jacobian_is_antisymmetric(ca in prop::collection::vec(-2.0f64..2.0, 6), cb in prop::collection::vec(-2.0f64..2.0, 6)) {
        let g = grid(0.2, 16, 32);
        let poly = |c: &[f64]| {
            let c = c.to_vec();
            Field::from_xy(&g, move |x, y| c[0] * x + c[1] * y + c[2] * x * x + c[3] * x * y + c[4] * y * y + c[5] * x * x * y)
        };
        let (a, b) = (poly(&ca), poly(&cb));
        let jab = jacobian(&a, &b).unwrap();
        let jba = jacobian(&b, &a).unwrap();
        prop_assert!(jab.values().iter().zip(jba.values()).all(|(x, y)| *x == -*y));
        prop_assert!(jacobian(&a, &a).unwrap().values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn conformal_bubbles_satisfy_pohozaev(log_l in -6.0f64..0.0, deg in 1i32..3) {
        let g = LogPolarGrid::annulus_per_octave(AnnulusSpec::annulus(1e-2, 1.0).unwrap(), 64, 64).unwrap();
        let l = log_l.exp2();
        let u = Field::from_xy_vec(&g, 3, |x, y, o| {
            let w = Complex64::new(x / l, y / l).powi(deg);
            o.copy_from_slice(&inverse_stereographic(w.re, w.im));
        });
        for j in (0..g.n_radial()).step_by(7) {
            prop_assert!(pohozaev_residual(&u, g.rho(j)).unwrap().residual < 1e-6);
        }
    }
}
