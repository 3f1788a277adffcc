use std::f64::consts::TAU;

use hslag::ambient::CompatibleMetric;
use hslag::geomcore::{hs_residual, l2_norm, ScalarField};
use hslag::models::{
    ln_eigenvalue, ln_spectrum, moment_basis, restrict_moment, rigidity_prediction, spherical_harmonic_dim,
    LnModel, Model, TorusModel,
};
use proptest::prelude::*;

#[test]
fn rigidity_counts_are_seven_for_both_models() {
    let torus = TorusModel::new(vec![1.0, 1.3], 16).unwrap();
    let ln = LnModel::new(2, 16).unwrap();
    assert_eq!(rigidity_prediction(Model::Torus(&torus)).unwrap(), 7);
    assert_eq!(rigidity_prediction(Model::Ln(&ln)).unwrap(), 7);
}

#[test]
fn ln_spectrum_lists_only_even_modes_with_circle_multiplicities() {
    for e in ln_spectrum(2, 6, 6) {
        assert_eq!((e.k + e.l) % 2, 0);
        let expected = if e.k == 0 { 1 } else { 2 } * if e.l == 0 { 1 } else { 2 };
        assert_eq!(e.multiplicity, expected, "k = {}, l = {}", e.k, e.l);
    }
}

#[test]
fn sphere_harmonic_dimensions_match_two_l_plus_one() {
    for l in 0..10 {
        assert_eq!(spherical_harmonic_dim(2, l), 2 * l + 1);
    }
}

#[test]
fn ln_stability_is_nonnegative_on_invariant_modes() {
    for e in ln_spectrum(2, 8, 8) {
        assert!(e.eigenvalue >= 0.0, "{e:?}");
    }
    // The excluded (k, l) = (0, 1) mode would be negative.
    assert!(ln_eigenvalue(2, 0, 1) < 0.0);
}

#[test]
fn torus_moment_restrictions_of_moduli_are_constant() {
    let torus = TorusModel::new(vec![1.0, 1.3], 16).unwrap();
    let imm = torus.immersion().unwrap();
    let dvol = ScalarField::constant(&imm.grid, 1.0);
    let mut constant = 0;
    for q in moment_basis(2) {
        let f = restrict_moment(&q, &imm).unwrap();
        let mean = f.values.iter().sum::<f64>() / f.values.len() as f64;
        if l2_norm(&f.map(|v| v - mean), &dvol).unwrap() < 1e-12 {
            constant += 1;
        }
    }
    // |z₁|², |z₂|² and the constant.
    assert!(constant >= 2, "{constant}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn ln_eigenvalue_matches_closed_form(k in 0u32..8, l in 0u32..8) {
        let (k2, l2) = ((k * k) as f64, (l * l) as f64);
        let expected = (k2 + l2 - 2.0).powi(2) + 4.0 * (k2 - 1.0);
        prop_assert!((ln_eigenvalue(2, k, l) - expected).abs() < 1e-12 * expected.abs().max(1.0));
    }

    #[test]
    fn torus_volume_closed_form(a in 0.3f64..3.0, b in 0.3f64..3.0) {
        let torus = TorusModel::new(vec![a, b], 8).unwrap();
        prop_assert!((torus.volume() - TAU * TAU * a * b).abs() < 1e-12 * torus.volume());
    }

    #[test]
    fn ln_is_stationary_at_every_grid(half in 4usize..10) {
        let ln = LnModel::new(2, 2 * half).unwrap();
        let r = hs_residual(&ln.immersion().unwrap(), &CompatibleMetric::flat(2)).unwrap();
        prop_assert!(r.max_abs() < 1e-9);
    }
}
