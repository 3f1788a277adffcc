//! Discrete linearized operator `ℒ`, its spectrum, kernel and stability.
//!
//! Operators act on the span of a [`FourierBasis`], which is orthonormal in
//! `L²(dV_{g₀|L})`; self-adjointness is therefore plain matrix symmetry.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::ambient::CompatibleMetric;
use crate::error::{Error, Result};
use crate::fourier::FourierBasis;
use crate::geomcore::{hs_residual, l2_inner, l2_norm, volume, Immersion, ScalarField};
use crate::models::{ln_graph_immersion, Model};
use crate::reduction::WeinsteinChart;

/// Largest relative asymmetry accepted before symmetrizing an assembled
/// matrix.
pub const ASSEMBLY_SYMMETRY_TOLERANCE: f64 = 1e-6;
/// Basis size up to which [`eigensolve`] uses a dense solver.
pub const DENSE_LIMIT: usize = 48 * 48;

#[derive(Clone, Debug)]
pub struct LinearOperator {
    pub basis: Arc<FourierBasis>,
    /// Matrix in the orthonormal basis.
    pub matrix: DMatrix<f64>,
    pub self_adjoint: bool,
    /// Relative asymmetry of the matrix before symmetrization.
    pub raw_asymmetry: f64,
}

fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax();
    if scale == 0.0 {
        0.0
    } else {
        (m - m.transpose()).amax() / scale
    }
}

impl LinearOperator {
    /// Wraps `matrix`; marks it self-adjoint when symmetric to `1e−12`
    /// relative.
    pub fn new(basis: Arc<FourierBasis>, matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != basis.len() || matrix.ncols() != basis.len() {
            return Err(Error::DimensionMismatch {
                expected: basis.len(),
                got: matrix.nrows(),
            });
        }
        let raw_asymmetry = relative_asymmetry(&matrix);
        Ok(Self {
            basis,
            matrix,
            self_adjoint: raw_asymmetry <= 1e-12,
            raw_asymmetry,
        })
    }

    /// Averages with the adjoint after checking the asymmetry is below
    /// `tolerance`.
    pub fn symmetrized(mut self, tolerance: f64) -> Result<Self> {
        if self.raw_asymmetry > tolerance {
            return Err(Error::NotSelfAdjoint {
                asymmetry: self.raw_asymmetry,
                tolerance,
            });
        }
        self.matrix = (&self.matrix + self.matrix.transpose()) * 0.5;
        self.self_adjoint = true;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn apply_coeffs(&self, c: &DVector<f64>) -> DVector<f64> {
        &self.matrix * c
    }

    /// Action on the band-limited part of `f`.
    pub fn apply(&self, f: &ScalarField) -> Result<ScalarField> {
        let c = self.basis.analyze(f)?;
        Ok(self.basis.synthesize(&self.apply_coeffs(&c)))
    }

    /// `‖A − B‖` in the spectral norm of the coefficient space.
    pub fn distance(&self, other: &Self) -> f64 {
        (&self.matrix - &other.matrix).clone().singular_values().max()
    }
}

/// Column-wise linearization of a field-valued map at `0` by Richardson
/// extrapolated central differences. The step for mode `k` is
/// `step / (1 + |k|²)`, keeping the graph's second derivatives comparable
/// across modes.
pub fn linearize<F>(basis: Arc<FourierBasis>, step: f64, map: F) -> Result<LinearOperator>
where
    F: Fn(&ScalarField) -> Result<ScalarField> + Sync,
{
    let columns: Vec<DVector<f64>> = (0..basis.len())
        .into_par_iter()
        .map(|m| -> Result<DVector<f64>> {
            let b = basis.basis_field(m);
            let k2: i64 = basis.modes[m].wavenumber.iter().map(|k| k * k).sum();
            let step = step / (1.0 + k2 as f64);
            let central = |h: f64| -> Result<DVector<f64>> {
                let plus = basis.analyze(&map(&b.scaled(h))?)?;
                let minus = basis.analyze(&map(&b.scaled(-h))?)?;
                Ok((plus - minus) / (2.0 * h))
            };
            let coarse = central(step)?;
            let fine = central(0.5 * step)?;
            Ok((fine * 4.0 - coarse) / 3.0)
        })
        .collect::<Result<_>>()?;
    LinearOperator::new(basis, DMatrix::from_columns(&columns))
}

/// Default directional-difference step of residual linearizations.
pub const LINEARIZATION_STEP: f64 = 1e-2;

/// `ℒ` of a model Lagrangian in `(ℂⁿ, g₀)`: the closed form
/// `Δ²f − 4Δf − 4∂²f/∂s²` on `L₂`, the linearization of
/// `f ↦ −d*α_H(Γ_{df})` on a torus.
pub fn assemble_flat_l(model: Model<'_>) -> Result<LinearOperator> {
    match model {
        Model::Ln(l) => {
            let grid = l.grid()?;
            let basis = Arc::new(FourierBasis::new(grid, 1.0, None)?);
            let diag = DVector::from_iterator(
                basis.len(),
                basis.modes.iter().map(|m| {
                    let (k, q) = (m.wavenumber[0] as f64, m.wavenumber[1] as f64);
                    let lap = k * k + q * q;
                    lap * lap - 4.0 * lap + 4.0 * k * k
                }),
            );
            LinearOperator::new(basis, DMatrix::from_diagonal(&diag))
        }
        Model::Torus(t) => {
            let chart = WeinsteinChart::with_default_delta(t.radii.clone())?;
            let g = CompatibleMetric::flat(t.n());
            let basis = Arc::new(FourierBasis::new(&t.grid, t.density(), None)?);
            linearize(basis, LINEARIZATION_STEP, |f| {
                Ok(hs_residual(&chart.graph_immersion(f)?, &g)?.scaled(-1.0))
            })?
            .symmetrized(ASSEMBLY_SYMMETRY_TOLERANCE)
        }
    }
}

/// Linearization of `f ↦ −d*α_H(Φ(Γ_{df}))` for either model, used as an
/// independent cross-check of the closed form on `L₂`.
pub fn assemble_residual_l(model: Model<'_>) -> Result<LinearOperator> {
    match model {
        Model::Torus(_) => assemble_flat_l(model),
        Model::Ln(l) => {
            let grid = l.grid()?;
            let g = CompatibleMetric::flat(2);
            let basis = Arc::new(FourierBasis::new(grid, 1.0, None)?);
            linearize(basis, LINEARIZATION_STEP, |f| {
                Ok(hs_residual(&ln_graph_immersion(f)?, &g)?.scaled(-1.0))
            })?
            .symmetrized(ASSEMBLY_SYMMETRY_TOLERANCE)
        }
    }
}

#[derive(Clone, Debug)]
pub struct SpectralData {
    pub basis: Arc<FourierBasis>,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Coefficient vectors of the eigenfields, one column each.
    pub eigenvectors: DMatrix<f64>,
    pub residuals: Vec<f64>,
    pub kernel_tol: f64,
}

impl SpectralData {
    pub fn eigenfield(&self, i: usize) -> ScalarField {
        self.basis.synthesize(&self.eigenvectors.column(i).into_owned())
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(f64::NAN)
    }
}

/// Default threshold separating numerical zeros.
pub const KERNEL_TOL: f64 = 1e-5;
/// Required ratio between the first nonzero eigenvalue and `kernel_tol`.
pub const GAP_RATIO: f64 = 100.0;

/// Lowest `count` eigenpairs of a self-adjoint operator.
pub fn eigensolve(op: &LinearOperator, count: usize) -> Result<SpectralData> {
    if op.raw_asymmetry > 1e-8 && !op.self_adjoint {
        return Err(Error::NotSelfAdjoint {
            asymmetry: op.raw_asymmetry,
            tolerance: 1e-8,
        });
    }
    let a = (&op.matrix + op.matrix.transpose()) * 0.5;
    let count = count.min(op.dim());
    let (values, vectors) = if op.dim() <= DENSE_LIMIT {
        dense_lowest(&a, count)
    } else {
        shift_invert_lowest(&a, count)?
    };
    let residuals = (0..count)
        .map(|i| {
            let v = vectors.column(i);
            (&a * v - v * values[i]).norm()
        })
        .collect();
    Ok(SpectralData {
        basis: Arc::clone(&op.basis),
        eigenvalues: values,
        eigenvectors: vectors,
        residuals,
        kernel_tol: KERNEL_TOL,
    })
}

fn dense_lowest(a: &DMatrix<f64>, count: usize) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(a.clone());
    let mut order: Vec<usize> = (0..a.nrows()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order[..count].iter().map(|&i| eig.eigenvalues[i]).collect();
    let cols: Vec<_> = order[..count].iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect();
    (values, DMatrix::from_columns(&cols))
}

/// Subspace iteration with `(A + I)⁻¹` followed by Rayleigh–Ritz. Requires
/// `A + I` positive definite, which holds for the stable operators treated
/// here; otherwise the Cholesky factorization reports the failure.
fn shift_invert_lowest(a: &DMatrix<f64>, count: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let dim = a.nrows();
    let shifted = a + DMatrix::identity(dim, dim);
    let chol = Cholesky::new(shifted).ok_or_else(|| {
        Error::Unsupported("shift-invert eigensolver needs A + I positive definite".into())
    })?;
    let block = (count + 8).min(dim);
    let mut x = DMatrix::from_fn(dim, block, |i, j| {
        // Deterministic start: low-index unit vectors plus a small ramp.
        (if i == j { 1.0 } else { 0.0 }) + 1e-3 * ((i * 7 + j * 13) % 17) as f64
    });
    let mut values = vec![0.0; count];
    for _ in 0..1000 {
        x = chol.solve(&x);
        x = x.qr().q();
        let small = x.transpose() * a * &x;
        let small = (&small + small.transpose()) * 0.5;
        let (vals, vecs) = dense_lowest(&small, block);
        x = &x * vecs;
        values.copy_from_slice(&vals[..count]);
        let vectors = x.columns(0, count).into_owned();
        let worst = (0..count)
            .map(|i| (a * vectors.column(i) - vectors.column(i) * values[i]).norm())
            .fold(0.0, f64::max);
        if worst <= 1e-10 * (1.0 + values[count - 1].abs()) {
            return Ok((values, vectors));
        }
    }
    Err(Error::NotConverged("shift-invert subspace iteration".into()))
}

/// Orthonormal kernel coefficients, with the constant first; the remaining
/// columns span the zero-mean part.
#[derive(Clone, Debug)]
pub struct KernelBasis {
    pub basis: Arc<FourierBasis>,
    pub coefficients: DMatrix<f64>,
}

impl KernelBasis {
    pub fn dim(&self) -> usize {
        self.coefficients.ncols()
    }

    pub fn fields(&self) -> Vec<ScalarField> {
        (0..self.dim())
            .map(|i| self.basis.synthesize(&self.coefficients.column(i).into_owned()))
            .collect()
    }

    /// Coefficients of the zero-mean sub-basis.
    pub fn zero_mean(&self) -> DMatrix<f64> {
        self.coefficients.columns(1, self.dim() - 1).into_owned()
    }

    pub fn zero_mean_fields(&self) -> Vec<ScalarField> {
        self.fields().into_iter().skip(1).collect()
    }

    /// `c − K Kᵀ c` in coefficient space.
    pub fn project_out(&self, c: &DVector<f64>) -> DVector<f64> {
        let k = &self.coefficients;
        c - k * (k.transpose() * c)
    }

    /// `(‖f − Π_K f‖, ‖f‖)` in `L²(dV)`; their ratio is the sine of the angle
    /// between `f` and the kernel span. Components outside the basis count as
    /// distance.
    pub fn span_distance(&self, f: &ScalarField) -> Result<(f64, f64)> {
        let dvol = ScalarField::constant(&self.basis.grid, self.basis.density);
        let c = self.basis.analyze(f)?;
        let k = &self.coefficients;
        let inside = self.basis.synthesize(&(k * (k.transpose() * c)));
        Ok((l2_norm(&f.sub(&inside)?, &dvol)?, l2_norm(f, &dvol)?))
    }
}

/// Numerical kernel `|λ| ≤ kernel_tol`, requiring the next eigenvalue to
/// exceed `GAP_RATIO · kernel_tol`.
pub fn kernel_basis(spec: &SpectralData) -> Result<KernelBasis> {
    let tol = spec.kernel_tol;
    let inside: Vec<usize> = (0..spec.eigenvalues.len())
        .filter(|&i| spec.eigenvalues[i].abs() <= tol)
        .collect();
    let inside_max = inside
        .iter()
        .map(|&i| spec.eigenvalues[i].abs())
        .fold(0.0, f64::max);
    let outside = (0..spec.eigenvalues.len())
        .filter(|i| !inside.contains(i))
        .map(|i| spec.eigenvalues[i].abs())
        .fold(f64::INFINITY, f64::min);
    if inside.is_empty() || !outside.is_finite() || outside < GAP_RATIO * tol {
        return Err(Error::NoSpectralGap {
            inside: inside_max,
            outside,
        });
    }
    let dim = spec.basis.len();
    let k = DMatrix::from_columns(
        &inside
            .iter()
            .map(|&i| spec.eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    let mut e0 = DVector::zeros(dim);
    e0[0] = 1.0;
    let c = k.transpose() * &e0;
    if c.norm() < 1.0 - 1e-6 {
        return Err(Error::Consistency(format!(
            "constants are not in the numerical kernel (overlap {:.3e})",
            c.norm()
        )));
    }
    // Orthonormal complement of c inside the kernel coordinates: the unit
    // eigenspace of I − ĉĉᵀ.
    let m = k.ncols();
    let chat = &c / c.norm();
    let proj = DMatrix::identity(m, m) - &chat * chat.transpose();
    let eig = SymmetricEigen::new(proj);
    let rest = DMatrix::from_columns(
        &(0..m)
            .filter(|&i| eig.eigenvalues[i] > 0.5)
            .map(|i| eig.eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    let zero_mean = &k * rest;
    let mut cols = vec![e0];
    for j in 0..m - 1 {
        let mut v = zero_mean.column(j).into_owned();
        v[0] = 0.0;
        cols.push(&v / v.norm());
    }
    Ok(KernelBasis {
        basis: Arc::clone(&spec.basis),
        coefficients: DMatrix::from_columns(&cols),
    })
}

/// `f − Σ ⟨f, b_i⟩ b_i` with inner products weighted by `dvol`.
pub fn project_out_kernel(f: &ScalarField, basis: &[ScalarField], dvol: &ScalarField) -> Result<ScalarField> {
    let mut out = f.clone();
    for b in basis {
        let c = l2_inner(f, b, dvol)?;
        out = out.sub(&b.scaled(c))?;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StabilityVerdict {
    pub stable: bool,
    pub min_eigenvalue: f64,
}

/// Stable iff every computed eigenvalue is `≥ −kernel_tol`.
pub fn stability_check(spec: &SpectralData) -> StabilityVerdict {
    let min = spec.min_eigenvalue();
    StabilityVerdict {
        stable: min >= -spec.kernel_tol,
        min_eigenvalue: min,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SecondVariation {
    /// `d²/ds² Vol(Φ(Γ_{s df}))` at `s = 0` from a five-point stencil.
    pub quadratic_form: f64,
    /// `⟨ℒf, f⟩`.
    pub operator_value: f64,
}

/// Volume of the graph of `df` over a model in `(ℂⁿ, g₀)`.
pub fn graph_volume(model: Model<'_>, f: &ScalarField) -> Result<f64> {
    let imm: Immersion = match model {
        Model::Torus(t) => WeinsteinChart::with_default_delta(t.radii.clone())?.graph_immersion(f)?,
        Model::Ln(_) => ln_graph_immersion(f)?,
    };
    volume(&imm, &CompatibleMetric::flat(imm.dim()))
}

/// Compares the five-point second derivative of the graph volume with
/// `⟨ℒf, f⟩`.
///
/// Errors when `eps` makes the stencil roundoff-dominated or when the three-
/// and five-point estimates disagree beyond `O(ε²)` expectations.
pub fn second_variation_consistency(
    model: Model<'_>,
    op: &LinearOperator,
    f: &ScalarField,
    eps: f64,
) -> Result<SecondVariation> {
    let c = op.basis.analyze(f)?;
    let mass = c.norm_squared();
    let operator_value = c.dot(&op.apply_coeffs(&c));
    let vol = |s: f64| graph_volume(model, &f.scaled(s));
    let v0 = vol(0.0)?;
    let (p1, m1, p2, m2) = (vol(eps)?, vol(-eps)?, vol(2.0 * eps)?, vol(-2.0 * eps)?);
    let five = (-p2 + 16.0 * p1 - 30.0 * v0 + 16.0 * m1 - m2) / (12.0 * eps * eps);
    let three = (p1 - 2.0 * v0 + m1) / (eps * eps);
    let roundoff = 64.0 * f64::EPSILON * v0.abs() / (eps * eps);
    if roundoff > 1e-6 * mass.max(f64::MIN_POSITIVE) {
        return Err(Error::InvalidParameter(format!(
            "step {eps:e} is roundoff dominated ({roundoff:.2e} vs mass {mass:.2e})"
        )));
    }
    if (five - three).abs() > 1e-2 * (five.abs() + mass) {
        return Err(Error::InvalidParameter(format!(
            "step {eps:e} is too large: stencils disagree ({three:.6e} vs {five:.6e})"
        )));
    }
    Ok(SecondVariation {
        quadratic_form: five,
        operator_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridDescriptor;

    fn synthetic(diag: &[f64]) -> LinearOperator {
        let grid = GridDescriptor::angular(1, 8).unwrap();
        let basis = Arc::new(FourierBasis::new(&grid, 1.0, None).unwrap());
        assert_eq!(basis.len(), diag.len());
        LinearOperator::new(basis, DMatrix::from_diagonal(&DVector::from_column_slice(diag))).unwrap()
    }

    #[test]
    fn negative_eigenvalue_is_unstable() {
        let op = synthetic(&[0.0, -1.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        let v = stability_check(&eigensolve(&op, 7).unwrap());
        assert!(!v.stable);
        assert_eq!(v.min_eigenvalue, -1.0);
    }

    #[test]
    fn asymmetric_matrix_is_refused() {
        let mut op = synthetic(&[1.0; 7]);
        op.matrix[(0, 1)] = 0.5;
        let op = LinearOperator::new(Arc::clone(&op.basis), op.matrix).unwrap();
        assert!(matches!(eigensolve(&op, 3), Err(Error::NotSelfAdjoint { .. })));
        assert!(op.symmetrized(1e-3).is_err());
    }

    #[test]
    fn ambiguous_kernel_has_no_gap() {
        let op = synthetic(&[0.0, 1e-4, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let spec = eigensolve(&op, 7).unwrap();
        assert!(matches!(kernel_basis(&spec), Err(Error::NoSpectralGap { .. })));
    }

    #[test]
    fn shift_invert_matches_dense() {
        let n = 40;
        let a = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                (i as f64).powi(2) * 0.1
            } else {
                0.01 / (1.0 + (i as f64 - j as f64).abs())
            }
        });
        let (dv, _) = dense_lowest(&a, 5);
        let (iv, iv_vecs) = shift_invert_lowest(&a, 5).unwrap();
        for k in 0..5 {
            assert!((dv[k] - iv[k]).abs() < 1e-10);
            let v = iv_vecs.column(k);
            assert!((&a * v - v * iv[k]).norm() < 1e-9);
        }
    }
}
