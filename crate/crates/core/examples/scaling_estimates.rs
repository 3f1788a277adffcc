//! Rescaled chart metrics `g^t` of the default perturbed metric: the ratios
//! `sup‖g^t − g₀‖/t` and `sup‖∂ᵏg^t‖/tᵏ` stay bounded as `t → 0`.
//!
//! `cargo run --release --example scaling_estimates`

use hslag::ambient::{estimate_sweep, BallSamples, ChartFamily, CompatibleMetric, FrameState};

fn main() -> hslag::Result<()> {
    let g = CompatibleMetric::shear(2, 0.05, 7)?;
    let family = ChartFamily::new(g.clone(), 2.0, 0.5)?;
    let frames = (0..5u64)
        .map(|s| FrameState::random(&g, s, 0.5))
        .collect::<hslag::Result<Vec<_>>>()?;
    let ts = [0.1, 0.05, 0.025, 0.0125];
    let report = estimate_sweep(&family, &frames, &ts, 2, &BallSamples::lattice(4, 2.0, 3))?;
    println!("{:>8} {:>3} {:>12} {:>12}", "t", "k", "sup", "ratio");
    for r in &report.rows {
        println!("{:>8} {:>3} {:>12.4e} {:>12.6}", r.t, r.k, r.sup_norm, r.ratio);
    }
    for (k, s) in report.spread.iter().enumerate() {
        println!("k = {k}: constant {:.4}, spread {s:.3}", report.constants[k]);
    }
    Ok(())
}
