//! The reduced functional `K^t` on frames: its finite-difference gradient
//! against `Ψ^t ∘ H^t`, and the vanishing of both along the diagonal torus.
//!
//! `cargo run --release --example gradient_identity -- 16`

use hslag::ambient::FrameState;
use hslag::reduction::{ReductionConfig, ReductionContext};

fn main() -> hslag::Result<()> {
    let size: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(16);
    let ctx = ReductionContext::new(ReductionConfig {
        grid_size: size,
        ..ReductionConfig::default()
    })?;
    let t = 0.05;
    for seed in 0..3u64 {
        let frame = FrameState::random(ctx.metric(), seed, 0.5)?;
        let r = ctx.gradient_k(t, &frame)?;
        println!("frame {seed}: relative disagreement {:.2e}, G component {:.1e}", r.relative_disagreement, r.g_component);
        for (i, (a, b)) in r.finite_difference.iter().zip(&r.identity).enumerate() {
            println!("  x{i}: FD {a:>13.6e}  Ψ∘H {b:>13.6e}");
        }
    }
    Ok(())
}
