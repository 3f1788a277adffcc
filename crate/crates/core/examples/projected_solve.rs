//! Projected solve `ΠP^t(f) = 0, f ⊥ Ker ℒ` for a sequence of `t`: the
//! solution shrinks linearly with `t` and does not depend on the initial
//! guess.
//!
//! `cargo run --release --example projected_solve -- 16`

use hslag::ambient::FrameState;
use hslag::reduction::{ReductionConfig, ReductionContext};

fn main() -> hslag::Result<()> {
    let size: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(16);
    let ctx = ReductionContext::new(ReductionConfig {
        grid_size: size,
        ..ReductionConfig::default()
    })?;
    let frame = FrameState::random(ctx.metric(), 3, 0.5)?;
    println!("{:>6} {:>12} {:>12} {:>6} {:>14}", "t", "‖f‖", "‖ΠP‖", "iters", "guess gap");
    for t in [0.08, 0.04, 0.02, 0.01] {
        let s = ctx.projected_solve(t, &frame)?;
        let guess = ctx.flat.kernel.project_out(&ctx.basis().random_coefficients(3, 1));
        let other = ctx.projected_solve_from(t, &frame, &(guess * 1e-2))?;
        let gap = (&s.coefficients - &other.coefficients).amax();
        println!(
            "{t:>6} {:>12.4e} {:>12.2e} {:>6} {gap:>14.2e}",
            s.f_norm, s.residual_norm, s.iterations
        );
    }
    Ok(())
}
