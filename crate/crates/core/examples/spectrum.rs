//! Spectrum of the linearized operator on L₂ against the closed form
//! `(k² + l² − 2)² + 4(k² − 1)`, and the kernel dimension on both models.
//!
//! `cargo run --release --example spectrum -- 24`

use hslag::models::{ln_spectrum, rigidity_prediction, LnModel, Model, TorusModel};
use hslag::operator::{assemble_flat_l, assemble_residual_l, eigensolve, kernel_basis};

fn main() -> hslag::Result<()> {
    let size: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(24);

    let ln = LnModel::new(2, size)?;
    let op = assemble_residual_l(Model::Ln(&ln))?;
    let spec = eigensolve(&op, op.dim())?;
    println!("L₂, {} modes", op.dim());
    println!("{:>3} {:>3} {:>5} {:>12} {:>12}", "k", "l", "mult", "closed form", "nearest");
    for e in ln_spectrum(2, 4, 4) {
        let nearest = spec
            .eigenvalues
            .iter()
            .copied()
            .min_by(|a, b| (a - e.eigenvalue).abs().total_cmp(&(b - e.eigenvalue).abs()))
            .unwrap_or(f64::NAN);
        println!("{:>3} {:>3} {:>5} {:>12.6} {:>12.6}", e.k, e.l, e.multiplicity, e.eigenvalue, nearest);
    }
    println!(
        "dim Ker = {} (predicted {}), min λ = {:.2e}",
        kernel_basis(&spec)?.dim(),
        rigidity_prediction(Model::Ln(&ln))?,
        spec.min_eigenvalue()
    );

    let torus = TorusModel::new(vec![1.0, 1.3], size)?;
    let op = assemble_flat_l(Model::Torus(&torus))?;
    let spec = eigensolve(&op, op.dim())?;
    println!(
        "T²(1, 1.3): dim Ker = {} (predicted {}), min λ = {:.2e}",
        kernel_basis(&spec)?.dim(),
        rigidity_prediction(Model::Torus(&torus))?,
        spec.min_eigenvalue()
    );
    Ok(())
}
