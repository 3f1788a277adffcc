//! End to end: minimize `K^t` over frames, check the resulting Lagrangian in
//! the ambient metric, and split its second variation.
//!
//! `cargo run --release --example optimize -- 16`

use hslag::ambient::FrameState;
use hslag::geomcore::ScalarField;
use hslag::reduction::{OptimizerConfig, ReductionConfig, ReductionContext};

fn main() -> hslag::Result<()> {
    let size: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(16);
    let ctx = ReductionContext::new(ReductionConfig {
        grid_size: size,
        ..ReductionConfig::default()
    })?;
    let t = 0.05;
    let init = FrameState::random(ctx.metric(), 11, 0.5)?;
    let r = ctx.optimize_frame(t, &init, &OptimizerConfig::default())?;
    for s in &r.trace {
        println!("step {:>2}: K = {:.12}, ‖dK‖ = {:.2e}", s.step, s.k_value, s.gradient_norm);
    }
    println!(
        "{:?} after {} restarts; ‖d*α_H‖/‖α_H‖ = {:.2e}",
        r.verdict, r.restarts, r.geometric_residual
    );

    let grid = &ctx.basis().grid;
    let dirs = [ScalarField::from_fn(grid, |x| (2.0 * x[0]).cos())];
    let q = ctx.second_variation_q(&r.state, &dirs, Some(&r.hessian))?;
    println!(
        "Q(cos 2θ₁) = {:.6}, tⁿ⟨f,ℒf⟩ = {:.6}; cross {:.1e}; frame block min {:.2e}",
        q.directions[0].quadratic_form, q.directions[0].predicted, q.max_relative_cross, q.frame_block_min
    );
    Ok(())
}
