//! Compatible ambient metrics, unitary frames, Darboux chart families and
//! a standalone Moser-flow verifier.
//!
//! Coordinates on `ℝ²ⁿ` are interleaved `(x₁, y₁, …, xₙ, yₙ)` and the
//! standard form is `ω₀(u, v) = uᵀ Ω₀ v` with `Ω₀[2j][2j+1] = 1`. A
//! symmetric positive `G` is compatible with `ω₀` exactly when `G` is
//! symplectic; the complex structure is then `J = −G⁻¹Ω₀`.

mod frame;
mod metrics;
mod moser;

pub use frame::{
    canonical_section, chart_pullback_metric, estimate_sweep, frame_generator, unitary_frame,
    BallSamples, ChartFamily, ChartMetric, EstimateReport, EstimateRow, FrameState,
};
pub use metrics::{
    compatibilize, CompatibleMetric, ConstantMetric, Domain, FlatMetric, MatrixJet,
    MetricDescriptor, MetricEvaluator, ShearMetric, TrigPerturbation,
};
pub use moser::{
    closedness_defect, moser_flow, pullback_defect, ClosedTwoForm, ConformalPerturbation,
    MoserConfig, MoserResult, StandardForm,
};

use nalgebra::DMatrix;

/// Matrix of `ω₀` in interleaved coordinates.
pub fn omega0(dim: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(dim, dim);
    for j in 0..dim / 2 {
        m[(2 * j, 2 * j + 1)] = 1.0;
        m[(2 * j + 1, 2 * j)] = -1.0;
    }
    m
}

/// `ω₀(u, v)`.
pub fn omega0_pair(u: &[f64], v: &[f64]) -> f64 {
    u.chunks(2)
        .zip(v.chunks(2))
        .map(|(a, b)| a[0] * b[1] - a[1] * b[0])
        .sum()
}

/// Complex structure `J = −G⁻¹Ω₀` of a compatible metric matrix.
pub fn complex_structure(g: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let inv = g.clone().try_inverse()?;
    Some(-(inv * omega0(g.nrows())))
}

/// `‖J² + I‖_max` for `J = G⁻¹Ω₀`.
pub fn compatibility_defect(g: &DMatrix<f64>) -> f64 {
    match complex_structure(g) {
        Some(j) => (&j * &j + DMatrix::identity(g.nrows(), g.nrows())).amax(),
        None => f64::INFINITY,
    }
}

/// Real `2n × 2n` representation of a complex `n × n` matrix given by its
/// real and imaginary parts.
pub fn complex_to_real(re: &DMatrix<f64>, im: &DMatrix<f64>) -> DMatrix<f64> {
    let n = re.nrows();
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    for j in 0..n {
        for k in 0..n {
            let (x, y) = (re[(j, k)], im[(j, k)]);
            m[(2 * j, 2 * k)] = x;
            m[(2 * j, 2 * k + 1)] = -y;
            m[(2 * j + 1, 2 * k)] = y;
            m[(2 * j + 1, 2 * k + 1)] = x;
        }
    }
    m
}

/// Symmetric positive square root and inverse square root.
pub(crate) fn sqrt_and_inv_sqrt(m: &DMatrix<f64>) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let eig = m.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return None;
    }
    let q = &eig.eigenvectors;
    let s = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    let si = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    Some((q * s * q.transpose(), q * si * q.transpose()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn omega0_matches_pairing() {
        let u = [0.3, -1.2, 2.0, 0.5];
        let v = [1.1, 0.4, -0.7, 0.9];
        let m = omega0(4);
        let direct = (nalgebra::DVector::from_column_slice(&u).transpose()
            * &m
            * nalgebra::DVector::from_column_slice(&v))[(0, 0)];
        assert!((direct - omega0_pair(&u, &v)).abs() < 1e-15);
    }

    #[test]
    fn flat_complex_structure_rotates() {
        let j = complex_structure(&DMatrix::identity(2, 2)).unwrap();
        let v = &j * nalgebra::DVector::from_column_slice(&[1.0, 0.0]);
        assert_eq!(v.as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn real_representation_is_multiplicative() {
        let a = complex_to_real(
            &DMatrix::from_row_slice(2, 2, &[0.1, 0.2, -0.3, 0.4]),
            &DMatrix::from_row_slice(2, 2, &[0.5, -0.6, 0.7, 0.8]),
        );
        let b = complex_to_real(
            &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 2.0]),
            &DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
        );
        // (A + iA')(B + iB') computed by hand on the real and imaginary parts.
        let re = DMatrix::from_row_slice(2, 2, &[0.1, 0.2, -0.3, 0.4])
            * DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 2.0])
            - DMatrix::from_row_slice(2, 2, &[0.5, -0.6, 0.7, 0.8])
                * DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let im = DMatrix::from_row_slice(2, 2, &[0.1, 0.2, -0.3, 0.4])
            * DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])
            + DMatrix::from_row_slice(2, 2, &[0.5, -0.6, 0.7, 0.8])
                * DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 2.0]);
        assert!((a * b - complex_to_real(&re, &im)).amax() < 1e-14);
    }
}
