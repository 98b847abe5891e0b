use std::f64::consts::TAU;

use proptest::prelude::*;
use spinlab::eigensolve::{lambda1_plus, mu1, random_smooth, EigenConfig};
use spinlab::flatmodel::{ConformalFactor, SpinStructure, TorusDomain};
use spinlab::operators::{inner, ConformalDirac, ConformalLaplace, DiracFlat, HermitianOp, LaplaceFlat};
use spinlab::testspinor::{j_prime, j_prime_radial, random_spinor_field};
use spinlab::Complex64 as C64;

fn family(eps: f64) -> ConformalFactor {
    ConformalFactor::Family { alpha: 1.0, eps }
}

/// Dirichlet energy over weighted mass, `∫|∇u|² / ∫u² f²`, after removing
/// the weighted mean.
fn rayleigh(domain: &TorusDomain, f: &[f64], u: &[f64]) -> f64 {
    let w: Vec<f64> = f.iter().map(|v| v * v).collect();
    let mean = domain.integrate(&u.iter().zip(&w).map(|(a, b)| a * b).collect::<Vec<_>>()) / domain.integrate(&w);
    let u: Vec<C64> = u.iter().map(|a| C64::new(a - mean, 0.0)).collect();
    let lu = LaplaceFlat::new(domain).apply_vec(&u);
    let energy = inner(&u, &lu).re;
    let mass: f64 = u.iter().zip(&w).map(|(a, b)| a.norm_sqr() * b).sum();
    energy / mass
}

fn mu1_of(domain: &TorusDomain, f: &ConformalFactor) -> f64 {
    mu1(&ConformalLaplace::new(domain, f).unwrap(), &EigenConfig::default()).unwrap().mu1
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn rayleigh_quotient_bounds_mu1(seed in 0u64..10_000, modes in 1i32..4) {
        let domain = TorusDomain::standard(32).unwrap();
        let f = family(0.8);
        let m = mu1_of(&domain, &f);
        let fs = f.sample(&domain).unwrap().values;
        let u = random_smooth(&domain, seed, modes);
        prop_assert!(rayleigh(&domain, &fs, &u) >= m * (1.0 - 1e-9));
    }

    #[test]
    fn j_prime_bounds_lambda1(seed in 0u64..10_000) {
        let domain = TorusDomain::standard(32).unwrap();
        let f = family(0.8);
        let lam = lambda1_plus(&ConformalDirac::new(&domain, SpinStructure::TRIVIAL, &f).unwrap(), &EigenConfig::default())
            .unwrap()
            .lambda1_plus;
        let phi = random_spinor_field(&domain, seed, 2);
        let op = DiracFlat::new(&domain, SpinStructure::TRIVIAL);
        if let Ok(r) = j_prime(&phi, &f, &op, Some(lam)) {
            prop_assert_eq!(r.above_lambda1, Some(true));
        }
    }
}

#[test]
fn twenty_admissible_spinors_dominate_lambda1() {
    let domain = TorusDomain::standard(32).unwrap();
    let op = DiracFlat::new(&domain, SpinStructure::TRIVIAL);
    for f in [family(0.8), ConformalFactor::Constant { c: 1.3 }] {
        let lam = lambda1_plus(&ConformalDirac::new(&domain, SpinStructure::TRIVIAL, &f).unwrap(), &EigenConfig::default())
            .unwrap()
            .lambda1_plus;
        let mut admissible = 0;
        let mut seed = 0;
        while admissible < 20 {
            seed += 1;
            assert!(seed < 400, "too few admissible spinors");
            if let Ok(r) = j_prime(&random_spinor_field(&domain, seed, 2), &f, &op, Some(lam)) {
                assert!(r.value >= lam * (1.0 - 1e-9), "seed {seed}: {} < {lam}", r.value);
                admissible += 1;
            }
        }
    }
}

#[test]
fn upper_bound_excess_shrinks_with_eps() {
    let excess: Vec<f64> = [0.04, 0.02, 0.01, 0.005]
        .iter()
        .map(|&eps| {
            let r = j_prime_radial(eps, 0.2, 1.0, TAU).unwrap();
            r.squared_times_vol.unwrap() - r.product_bound.unwrap()
        })
        .collect();
    for w in excess.windows(2) {
        assert!(w[1] < w[0] && w[1] > 0.0, "{excess:?}");
    }
}

#[test]
fn lambda1_converges_under_refinement() {
    // The factor is only C⁰ at r = α, so refinement converges algebraically;
    // the successive differences must contract.
    let f = family(0.8);
    let cfg = EigenConfig::default();
    let lam: Vec<f64> = [64usize, 128, 256]
        .iter()
        .map(|&n| {
            let d = TorusDomain::standard(n).unwrap();
            lambda1_plus(&ConformalDirac::new(&d, SpinStructure::TRIVIAL, &f).unwrap(), &cfg).unwrap().lambda1_plus
        })
        .collect();
    let d1 = (lam[1] - lam[0]).abs() / lam[1];
    let d2 = (lam[2] - lam[1]).abs() / lam[2];
    assert!(d1 < 1e-4 && d2 < d1 / 4.0, "{lam:?}");
}

#[test]
fn mu1_scales_with_constant_factor() {
    let domain = TorusDomain::standard(32).unwrap();
    for c in [0.5, 2.0, 3.7] {
        let m = mu1_of(&domain, &ConformalFactor::Constant { c });
        assert!((m * c * c - 1.0).abs() < 1e-9);
    }
}
