//! Model Lagrangians under the flat metric: stationarity residual, volume and
//! the mean curvature form against their closed forms.
//!
//! `cargo run --release --example models -- 32`

use hslag::ambient::CompatibleMetric;
use hslag::geomcore::{hs_residual, volume};
use hslag::models::{LnModel, TorusModel};

fn main() -> hslag::Result<()> {
    let size: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(32);
    let g0 = CompatibleMetric::flat(2);

    let torus = TorusModel::new(vec![1.0, 1.3], size)?;
    let imm = torus.immersion()?;
    println!(
        "T²(1, 1.3) on {size}²: max|d*α_H| = {:.2e}, Vol = {:.12} (closed form {:.12})",
        hs_residual(&imm, &g0)?.max_abs(),
        volume(&imm, &g0)?,
        torus.volume()
    );

    let ln = LnModel::new(2, size)?;
    let imm = ln.immersion()?;
    println!(
        "L₂ on {size}²:        max|d*α_H| = {:.2e}, Vol = {:.12} (closed form {:.12})",
        hs_residual(&imm, &g0)?.max_abs(),
        volume(&imm, &g0)?,
        2.0 * std::f64::consts::PI.powi(2)
    );
    Ok(())
}
