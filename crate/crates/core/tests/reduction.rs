//! Reduction pipeline on a 12² grid: cheap enough for property tests.

use std::f64::consts::TAU;
use std::sync::{Arc, OnceLock};

use hslag::ambient::{CompatibleMetric, FrameState, MetricDescriptor};
use hslag::geomcore::{l2_inner, ScalarField};
use hslag::reduction::{FlatData, ReductionConfig, ReductionContext};
use proptest::prelude::*;

fn flat_data() -> Arc<FlatData> {
    static FLAT: OnceLock<Arc<FlatData>> = OnceLock::new();
    FLAT.get_or_init(|| Arc::new(FlatData::new(vec![1.0, 1.3], 12).unwrap())).clone()
}

fn context(metric: MetricDescriptor) -> ReductionContext {
    let config = ReductionConfig {
        grid_size: 12,
        metric,
        ..ReductionConfig::default()
    };
    ReductionContext::with_flat(config, flat_data()).unwrap()
}

/// 24² context for properties that a 12² grid aliases.
fn sheared_fine() -> ReductionContext {
    static FLAT: OnceLock<Arc<FlatData>> = OnceLock::new();
    let flat = FLAT.get_or_init(|| Arc::new(FlatData::new(vec![1.0, 1.3], 24).unwrap())).clone();
    let config = ReductionConfig {
        grid_size: 24,
        ..ReductionConfig::default()
    };
    ReductionContext::with_flat(config, flat).unwrap()
}

fn sheared() -> ReductionContext {
    context(ReductionConfig::default().metric)
}

#[test]
fn flat_ambient_metric_reduces_to_the_model_volume() {
    let ctx = context(MetricDescriptor::Flat);
    let frame = FrameState::random(&CompatibleMetric::flat(2), 5, 0.5).unwrap();
    let s = ctx.projected_solve(0.05, &frame).unwrap();
    assert!(s.converged);
    assert!(s.f_norm < 1e-10, "{}", s.f_norm);
    let k = ctx.k_eval(0.05, &frame).unwrap();
    assert!((k - TAU * TAU * 1.3).abs() < 1e-10, "{k}");
}

#[test]
fn solution_is_orthogonal_to_the_kernel() {
    let ctx = sheared();
    let frame = FrameState::random(ctx.metric(), 2, 0.5).unwrap();
    let s = ctx.projected_solve(0.05, &frame).unwrap();
    let dvol = ScalarField::constant(&ctx.basis().grid, ctx.basis().density);
    for b in ctx.flat.kernel.fields() {
        assert!(l2_inner(&s.f, &b, &dvol).unwrap().abs() < 1e-12);
    }
    assert!(s.residual_norm <= 1e-10);
}

#[test]
fn identity_gradient_matches_finite_differences() {
    // 12² aliases the variation one-form past the exactness check.
    let config = ReductionConfig {
        grid_size: 20,
        ..ReductionConfig::default()
    };
    let ctx = ReductionContext::new(config).unwrap();
    let frame = FrameState::random(ctx.metric(), 9, 0.5).unwrap();
    let r = ctx.gradient_k(0.05, &frame).unwrap();
    assert!(r.relative_disagreement < 1e-3, "{}", r.relative_disagreement);
    assert!(r.g_component < 1e-8, "{}", r.g_component);
}

#[test]
fn grid_translations_along_the_diagonal_torus_fix_k() {
    let ctx = sheared();
    let frame = FrameState::random(ctx.metric(), 227, 0.5).unwrap();
    let k0 = ctx.k_eval(0.05, &frame).unwrap();
    for m in [-2.0, 1.0, 3.0] {
        for i in ctx.g_directions() {
            let mut x = vec![0.0; ctx.frame_dim()];
            x[i] = m * TAU / 12.0;
            let k1 = ctx.k_eval(0.05, &frame.displaced(ctx.metric(), &x).unwrap()).unwrap();
            assert!((k1 - k0).abs() < 1e-13 * k0, "{k0} {k1}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn k_is_invariant_along_the_diagonal_torus(seed in 0u64..500, s in -0.5f64..0.5) {
        // At 12² a shift off the grid lattice resamples the torus and aliases
        // at the 1e-11 level.
        let ctx = sheared_fine();
        let frame = FrameState::random(ctx.metric(), seed, 0.5).unwrap();
        let k0 = ctx.k_eval(0.05, &frame).unwrap();
        for i in ctx.g_directions() {
            let mut x = vec![0.0; ctx.frame_dim()];
            x[i] = s;
            let k1 = ctx.k_eval(0.05, &frame.displaced(ctx.metric(), &x).unwrap()).unwrap();
            prop_assert!((k1 - k0).abs() < 1e-11 * k0, "{k0} {k1}");
        }
    }

    #[test]
    fn solution_shrinks_linearly_in_t(seed in 0u64..500) {
        let ctx = sheared();
        let frame = FrameState::random(ctx.metric(), seed, 0.5).unwrap();
        let a = ctx.projected_solve(0.04, &frame).unwrap();
        let b = ctx.projected_solve(0.02, &frame).unwrap();
        let ratio = a.f_norm / b.f_norm;
        prop_assert!(ratio > 1.6 && ratio < 2.5, "{ratio}");
    }

    #[test]
    fn residual_is_the_gradient_of_the_functional(seed in 0u64..500) {
        let ctx = sheared();
        let t = 0.05;
        let frame = FrameState::random(ctx.metric(), seed, 0.5).unwrap();
        let basis = ctx.basis();
        let f = basis.synthesize(&(basis.random_coefficients(3, seed) * 1e-3));
        let h = basis.synthesize(&basis.random_coefficients(2, seed + 1));
        let dvol = ScalarField::constant(&basis.grid, basis.density);
        let p = ctx.residual_p(t, &frame, &f).unwrap();
        let eps = 1e-5;
        let plus = ctx.functional_f(t, &frame, &f.add(&h.scaled(eps)).unwrap()).unwrap();
        let minus = ctx.functional_f(t, &frame, &f.sub(&h.scaled(eps)).unwrap()).unwrap();
        let fd = (plus - minus) / (2.0 * eps);
        let exact = l2_inner(&h, &p, &dvol).unwrap();
        prop_assert!((fd - exact).abs() < 1e-6 * exact.abs().max(1.0), "{fd} {exact}");
    }
}
