//! Moser normalization of a closed perturbation of `ω₀` on a ball: the time-one
//! map pulls the perturbed form back to `ω₀` and fixes the origin to first
//! order.
//!
//! `cargo run --release --example moser`

use hslag::ambient::{moser_flow, pullback_defect, BallSamples, ConformalPerturbation, MoserConfig};
use nalgebra::DMatrix;

fn main() -> hslag::Result<()> {
    let form = ConformalPerturbation {
        dim: 4,
        epsilon: 0.1,
        kappa: 0.5,
    };
    let mut samples = BallSamples::lattice(4, 0.5, 3);
    samples.insert(0, vec![0.0; 4]);
    let flow = moser_flow(&form, &MoserConfig::default(), &samples)?;
    println!("{} samples, {} integrator steps", samples.len(), flow.steps);
    println!(
        "max |(φ¹)*ω − ω₀| = {:.2e}",
        pullback_defect(&form, &flow.images, &flow.jacobians)
    );
    let drift = flow.images[0].iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let jac = (&flow.jacobians[0] - DMatrix::identity(4, 4)).amax();
    println!("|φ¹(0)| = {drift:.1e}, |dφ¹(0) − I| = {jac:.1e}");
    Ok(())
}
