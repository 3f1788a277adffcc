use std::sync::Arc;

use hslag::fourier::FourierBasis;
use hslag::geomcore::{l2_inner, ScalarField};
use hslag::models::{LnModel, Model, TorusModel};
use hslag::operator::{
    assemble_flat_l, assemble_residual_l, eigensolve, graph_volume, kernel_basis, stability_check,
};
use nalgebra::DVector;
use proptest::prelude::*;

/// Second variation of the volume of `T²_a` along `cos(k·θ)`, per unit
/// `L²(dVol)` norm, from expanding the graph volume in action-angle
/// coordinates: `|u|⁴ + (Σ kⱼ/aⱼ²)² − 2Σ kⱼ²/aⱼ⁴` with `u = k/a`.
fn torus_symbol(a: &[f64], k: &[i64]) -> f64 {
    let u2: f64 = k.iter().zip(a).map(|(&k, a)| (k * k) as f64 / (a * a)).sum();
    let lin: f64 = k.iter().zip(a).map(|(&k, a)| k as f64 / (a * a)).sum();
    let quartic: f64 = k.iter().zip(a).map(|(&k, a)| (k * k) as f64 / a.powi(4)).sum();
    u2 * u2 + lin * lin - 2.0 * quartic
}

#[test]
fn symbol_oracle_reproduces_known_values() {
    assert!(torus_symbol(&[1.0, 1.0], &[1, 0]).abs() < 1e-15);
    assert!((torus_symbol(&[1.0, 1.0], &[2, 0]) - 12.0).abs() < 1e-12);
    assert!((torus_symbol(&[1.0, 1.3], &[1, 1]) - 4.0 / 1.69).abs() < 1e-12);
    assert!(torus_symbol(&[1.0, 1.3], &[1, -1]).abs() < 1e-12);
}

#[test]
fn flat_torus_operator_matches_symbol() {
    let a = [1.0, 1.3];
    let torus = TorusModel::new(a.to_vec(), 12).unwrap();
    let op = assemble_flat_l(Model::Torus(&torus)).unwrap();
    let grid = &op.basis.grid;
    let dvol = ScalarField::constant(grid, op.basis.density);
    for k in [[2, 0], [1, 1], [0, 2], [2, -1], [3, 1]] {
        let f = ScalarField::from_fn(grid, |x| (k[0] as f64 * x[0] + k[1] as f64 * x[1]).cos());
        let lf = op.apply(&f).unwrap();
        let rayleigh = l2_inner(&lf, &f, &dvol).unwrap() / l2_inner(&f, &f, &dvol).unwrap();
        let sigma = torus_symbol(&a, &k);
        assert!((rayleigh - sigma).abs() < 1e-6 * sigma.abs(), "k = {k:?}: {rayleigh} vs {sigma}");
        let defect = lf.sub(&f.scaled(sigma)).unwrap().max_abs();
        assert!(defect < 1e-6 * sigma.abs(), "k = {k:?}: not an eigenfunction ({defect:e})");
    }
}

#[test]
fn torus_kernel_is_the_seven_symbol_zeros() {
    let torus = TorusModel::new(vec![1.0, 1.3], 12).unwrap();
    let op = assemble_flat_l(Model::Torus(&torus)).unwrap();
    let spec = eigensolve(&op, op.dim()).unwrap();
    assert_eq!(kernel_basis(&spec).unwrap().dim(), 7);
    assert!(stability_check(&spec).stable);
    let positive = spec.eigenvalues.iter().copied().filter(|&v| v > 1e-5).fold(f64::INFINITY, f64::min);
    assert!((positive - 4.0 / 1.69).abs() < 1e-6, "{positive}");
}

#[test]
fn ln_operator_is_self_adjoint_and_stable() {
    let ln = LnModel::new(2, 12).unwrap();
    let op = assemble_residual_l(Model::Ln(&ln)).unwrap();
    assert!(op.self_adjoint);
    assert!(op.raw_asymmetry < 1e-6, "{}", op.raw_asymmetry);
    let spec = eigensolve(&op, op.dim()).unwrap();
    assert!(spec.min_eigenvalue() > -1e-6);
    assert_eq!(kernel_basis(&spec).unwrap().dim(), 7);
}

#[test]
fn graph_volume_at_zero_is_the_model_volume() {
    let torus = TorusModel::new(vec![1.0, 1.3], 12).unwrap();
    let grid = torus.grid.clone();
    let v = graph_volume(Model::Torus(&torus), &ScalarField::zeros(&grid)).unwrap();
    assert!((v - torus.volume()).abs() < 1e-12 * v);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn quadratic_form_is_nonnegative_and_kills_the_kernel(seed in 0u64..1000) {
        let torus = TorusModel::new(vec![1.0, 1.3], 12).unwrap();
        let op = assemble_flat_l(Model::Torus(&torus)).unwrap();
        let spec = eigensolve(&op, op.dim()).unwrap();
        let kernel = kernel_basis(&spec).unwrap();
        let basis: Arc<FourierBasis> = op.basis.clone();
        let c = basis.random_coefficients(3, seed);
        prop_assert!(c.dot(&op.apply_coeffs(&c)) >= -1e-8 * c.norm_squared());
        let k = &c - kernel.project_out(&c);
        let lk: DVector<f64> = op.apply_coeffs(&k);
        prop_assert!(lk.norm() < 1e-6 * k.norm().max(1.0));
    }
}
