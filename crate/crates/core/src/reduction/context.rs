use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::chart::WeinsteinChart;
use super::functional::volume_and_gradient;
use crate::ambient::{ChartFamily, CompatibleMetric, FrameState, MetricDescriptor};
use crate::error::{Error, Result};
use crate::fourier::FourierBasis;
use crate::geomcore::{relative_hs_residual, Immersion, ScalarField};
use crate::models::{Model, TorusModel};
use crate::operator::{
    assemble_flat_l, eigensolve, kernel_basis, linearize, KernelBasis, LinearOperator,
    SpectralData, ASSEMBLY_SYMMETRY_TOLERANCE, LINEARIZATION_STEP,
};

/// Tolerance of the inner solves behind finite-difference stencils; tighter
/// than the user tolerance so that stencil noise stays below `1e−8`.
pub(crate) const STENCIL_SOLVE_TOLERANCE: f64 = 1e-13;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReductionConfig {
    pub radii: Vec<f64>,
    pub grid_size: usize,
    pub metric: MetricDescriptor,
    /// Radius `R` of the model ball in chart coordinates.
    pub chart_radius: f64,
    /// Largest admissible `t·R`.
    pub epsilon: f64,
    /// Target for `‖ΠP^t(f)‖_{L²}`.
    pub solve_tolerance: f64,
    pub max_iterations: usize,
    /// Use the perturbed linearization instead of the flat `ℒ⁺`.
    pub newton: bool,
    /// Step of the five-point stencils over frame coordinates.
    pub frame_step: f64,
}

impl Default for ReductionConfig {
    fn default() -> Self {
        Self {
            radii: vec![1.0, 1.3],
            grid_size: 32,
            metric: MetricDescriptor::Shear {
                amplitude: 0.05,
                seed: 7,
            },
            chart_radius: 2.0,
            epsilon: 0.5,
            solve_tolerance: 1e-10,
            max_iterations: 200,
            newton: false,
            frame_step: 1e-4,
        }
    }
}

impl ReductionConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("chart_radius", self.chart_radius),
            ("epsilon", self.epsilon),
            ("solve_tolerance", self.solve_tolerance),
            ("frame_step", self.frame_step),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be positive".into()));
        }
        let a2: f64 = self.radii.iter().map(|a| a * a).sum();
        if a2.sqrt() >= self.chart_radius {
            return Err(Error::Config(format!(
                "the model torus (|z| = {:.3}) does not fit in the chart ball of radius {}",
                a2.sqrt(),
                self.chart_radius
            )));
        }
        Ok(())
    }

    /// Largest admissible scale `ε / R`.
    pub fn t_max(&self) -> f64 {
        self.epsilon / self.chart_radius
    }
}

/// Flat-model data shared by every reduction at a given torus and grid: the
/// basis, `ℒ`, its full spectrum, the kernel and `ℒ⁺`.
#[derive(Debug)]
pub struct FlatData {
    pub model: TorusModel,
    pub chart: WeinsteinChart,
    pub basis: Arc<FourierBasis>,
    pub operator: LinearOperator,
    pub spectrum: SpectralData,
    pub kernel: KernelBasis,
    /// `ℒ⁺`: inverse on the kernel complement, zero on the kernel.
    pub pseudo_inverse: DMatrix<f64>,
}

impl FlatData {
    pub fn new(radii: Vec<f64>, grid_size: usize) -> Result<Self> {
        let model = TorusModel::new(radii, grid_size)?;
        let chart = WeinsteinChart::with_default_delta(model.radii.clone())?;
        let operator = assemble_flat_l(Model::Torus(&model))?;
        let spectrum = eigensolve(&operator, operator.dim())?;
        let kernel = kernel_basis(&spectrum)?;
        let dim = operator.dim();
        let mut pseudo_inverse = DMatrix::zeros(dim, dim);
        for (i, &lambda) in spectrum.eigenvalues.iter().enumerate() {
            if lambda.abs() > spectrum.kernel_tol {
                let v = spectrum.eigenvectors.column(i);
                pseudo_inverse += (v * v.transpose()) / lambda;
            }
        }
        Ok(Self {
            basis: Arc::clone(&operator.basis),
            model,
            chart,
            operator,
            spectrum,
            kernel,
            pseudo_inverse,
        })
    }

    pub fn n(&self) -> usize {
        self.model.n()
    }

    /// Coefficients of the zero-mean kernel basis, one column each.
    pub fn zero_mean_kernel(&self) -> DMatrix<f64> {
        self.kernel.zero_mean()
    }
}

/// Everything a reduction run needs: configuration, ambient metric, chart
/// family and the flat data.
#[derive(Clone, Debug)]
pub struct ReductionContext {
    pub config: ReductionConfig,
    pub flat: Arc<FlatData>,
    pub family: ChartFamily,
}

/// Output of the projected solve at one `(t, p, υ)`.
#[derive(Clone, Debug, Serialize)]
pub struct ReductionState {
    pub t: f64,
    pub frame: FrameState,
    /// Basis coefficients of `f^t_{p,υ}`.
    #[serde(skip)]
    pub coefficients: DVector<f64>,
    #[serde(skip)]
    pub f: ScalarField,
    /// Basis coefficients of `P^t(f)`.
    #[serde(skip)]
    pub residual: DVector<f64>,
    /// `‖ΠP^t(f)‖_{L²}`.
    pub residual_norm: f64,
    /// `‖f‖_{L²}`.
    pub f_norm: f64,
    pub k_value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `‖ΠP‖` per iteration.
    pub history: Vec<f64>,
}

/// Coordinates of `H^t` in the zero-mean kernel basis, with the discarded
/// mean component kept for checking.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KernelCoordinates {
    pub coefficients: Vec<f64>,
    pub mean: f64,
}

impl KernelCoordinates {
    pub fn norm(&self) -> f64 {
        self.coefficients.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl ReductionContext {
    pub fn new(config: ReductionConfig) -> Result<Self> {
        config.validate()?;
        let flat = Arc::new(FlatData::new(config.radii.clone(), config.grid_size)?);
        Self::with_flat(config, flat)
    }

    /// Reuses precomputed flat data; radii and grid must match `config`.
    pub fn with_flat(config: ReductionConfig, flat: Arc<FlatData>) -> Result<Self> {
        config.validate()?;
        if flat.model.radii != config.radii || flat.model.grid.sizes.iter().any(|&s| s != config.grid_size) {
            return Err(Error::Config("flat data were built for different radii or grid".into()));
        }
        let metric = config.metric.build(flat.n())?;
        let family = ChartFamily::new(metric, config.chart_radius, config.epsilon)?;
        Ok(Self { config, flat, family })
    }

    pub fn n(&self) -> usize {
        self.flat.n()
    }

    pub fn metric(&self) -> &CompatibleMetric {
        &self.family.metric
    }

    pub fn basis(&self) -> &FourierBasis {
        &self.flat.basis
    }

    /// Number of frame coordinates `2n + n²`.
    pub fn frame_dim(&self) -> usize {
        let n = self.n();
        2 * n + n * n
    }

    /// Frame coordinates generating the diagonal torus `G`.
    pub fn g_directions(&self) -> std::ops::Range<usize> {
        let n = self.n();
        2 * n..3 * n
    }

    /// Frame coordinates transverse to `G`.
    pub fn free_directions(&self) -> Vec<usize> {
        let g = self.g_directions();
        (0..self.frame_dim()).filter(|i| !g.contains(i)).collect()
    }

    /// `g^t_{p,υ}` on the model ball.
    pub fn chart_metric(&self, t: f64, frame: &FrameState) -> Result<CompatibleMetric> {
        self.family.chart_metric(frame, t)
    }

    /// `F^t_{p,υ}(f) = Vol_{g^t}(Φ(Γ_{df}))`.
    pub fn functional_f(&self, t: f64, frame: &FrameState, f: &ScalarField) -> Result<f64> {
        let g = self.chart_metric(t, frame)?;
        Ok(volume_and_gradient(&self.flat.chart, &g, self.basis(), f, false)?.0)
    }

    /// `P^t_{p,υ}(f)`: the `L²(dV_{g₀|L})` gradient of the discrete `F^t`.
    pub fn residual_p(&self, t: f64, frame: &FrameState, f: &ScalarField) -> Result<ScalarField> {
        let g = self.chart_metric(t, frame)?;
        let (_, p) = self.evaluate(&g, f)?;
        Ok(self.basis().synthesize(&p))
    }

    /// `(F, P)` at `f` in the chart metric `g`, `P` as basis coefficients.
    pub(crate) fn evaluate(&self, g: &CompatibleMetric, f: &ScalarField) -> Result<(f64, DVector<f64>)> {
        let (v, p) = volume_and_gradient(&self.flat.chart, g, self.basis(), f, true)?;
        Ok((v, p.expect("gradient requested")))
    }

    pub(crate) fn evaluate_coeffs(&self, g: &CompatibleMetric, c: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        self.evaluate(g, &self.basis().synthesize(c))
    }

    /// `ℒ^t_{p,υ}`: linearization of `P^t_{p,υ}` at `f = 0`.
    pub fn assemble_perturbed_l(&self, t: f64, frame: &FrameState) -> Result<LinearOperator> {
        let g = self.chart_metric(t, frame)?;
        linearize(Arc::clone(&self.flat.basis), LINEARIZATION_STEP, |f| {
            Ok(self.basis().synthesize(&self.evaluate(&g, f)?.1))
        })?
        .symmetrized(ASSEMBLY_SYMMETRY_TOLERANCE)
    }

    /// Solves `ΠP^t(f) = 0`, `f ⊥ Ker ℒ` from `f = 0`.
    pub fn projected_solve(&self, t: f64, frame: &FrameState) -> Result<ReductionState> {
        let zero = DVector::zeros(self.basis().len());
        self.projected_solve_from(t, frame, &zero)
    }

    /// As [`Self::projected_solve`], from the kernel-orthogonal part of the
    /// initial coefficients `init`.
    pub fn projected_solve_from(&self, t: f64, frame: &FrameState, init: &DVector<f64>) -> Result<ReductionState> {
        self.solve(t, frame, init, self.config.solve_tolerance)
    }

    pub(crate) fn solve(
        &self,
        t: f64,
        frame: &FrameState,
        init: &DVector<f64>,
        tolerance: f64,
    ) -> Result<ReductionState> {
        let g = self.chart_metric(t, frame)?;
        let kernel = &self.flat.kernel;
        let newton = if self.config.newton {
            Some(self.newton_inverse(t, frame)?)
        } else {
            None
        };
        let step_matrix = newton.as_ref().unwrap_or(&self.flat.pseudo_inverse);
        let mut c = kernel.project_out(init);
        let mut history = Vec::new();
        let mut best = f64::INFINITY;
        let mut stalled = 0;
        for it in 0..=self.config.max_iterations {
            let (k_value, p) = match self.evaluate_coeffs(&g, &c) {
                Ok(v) => v,
                Err(e @ (Error::OneFormTooLarge { .. } | Error::ChartDomain(_))) if it > 0 => {
                    return Err(Error::NotConverged(format!(
                        "projected solve left the admissible graphs after {it} iterations ({e})"
                    )))
                }
                Err(e) => return Err(e),
            };
            let r = kernel.project_out(&p);
            let norm = r.norm();
            history.push(norm);
            let done = norm <= tolerance;
            if !norm.is_finite() || (it > 2 && norm > 1e3 * history[0].max(tolerance)) {
                return Err(Error::NotConverged(format!(
                    "projected solve diverges: ‖ΠP‖ grew from {:.3e} to {norm:.3e}",
                    history[0]
                )));
            }
            if norm < 0.5 * best {
                best = norm;
                stalled = 0;
            } else {
                stalled += 1;
            }
            // Within a factor 100 of the tolerance a stall means the
            // roundoff floor has been reached.
            let floor = stalled >= 2 && best <= 100.0 * tolerance;
            if done || it == self.config.max_iterations || stalled >= 8 || floor {
                return Ok(ReductionState {
                    t,
                    frame: frame.clone(),
                    f: self.basis().synthesize(&c),
                    f_norm: c.norm(),
                    coefficients: c,
                    residual: p,
                    residual_norm: norm,
                    k_value,
                    iterations: it,
                    converged: done,
                    history,
                });
            }
            c -= step_matrix * r;
            c = kernel.project_out(&c);
        }
        unreachable!("the loop returns on its last iteration")
    }

    /// `(Πℒ^tΠ)⁺` on the kernel complement.
    fn newton_inverse(&self, t: f64, frame: &FrameState) -> Result<DMatrix<f64>> {
        let op = self.assemble_perturbed_l(t, frame)?;
        let spec = &self.flat.spectrum;
        let cols: Vec<_> = (0..spec.eigenvalues.len())
            .filter(|&i| spec.eigenvalues[i].abs() > spec.kernel_tol)
            .map(|i| spec.eigenvectors.column(i).into_owned())
            .collect();
        let v = DMatrix::from_columns(&cols);
        let reduced = v.transpose() * &op.matrix * &v;
        let inv = reduced
            .try_inverse()
            .ok_or_else(|| Error::Degenerate("perturbed linearization is singular on the kernel complement".into()))?;
        Ok(&v * inv * v.transpose())
    }

    /// `K^t(p, υ) = F^t_{p,υ}(f^t_{p,υ})`.
    pub fn k_eval(&self, t: f64, frame: &FrameState) -> Result<f64> {
        let state = self.projected_solve(t, frame)?;
        converged(&state)?;
        Ok(state.k_value)
    }

    /// `H^t(p, υ) = P^t(f^t)` in the zero-mean kernel basis.
    pub fn h_eval(&self, state: &ReductionState) -> KernelCoordinates {
        let k = &self.flat.kernel.coefficients;
        let all = k.transpose() * &state.residual;
        KernelCoordinates {
            coefficients: all.iter().skip(1).copied().collect(),
            mean: all[0],
        }
    }

    /// The constructed Lagrangian `p + tυΦ(Γ_{df})` in the ambient torus.
    pub fn ambient_immersion(&self, state: &ReductionState) -> Result<Immersion> {
        let chart_imm = self.flat.chart.graph_immersion(&state.f)?;
        chart_imm.affine(&state.frame.p, &(state.frame.frame() * state.t))
    }

    /// `‖d*α_H‖/‖α_H‖` of [`Self::ambient_immersion`] in the un-scaled
    /// ambient metric.
    pub fn geometric_residual(&self, state: &ReductionState) -> Result<f64> {
        relative_hs_residual(&self.ambient_immersion(state)?, self.metric())
    }
}

pub(crate) fn converged(state: &ReductionState) -> Result<()> {
    if state.converged {
        Ok(())
    } else {
        Err(Error::NotConverged(format!(
            "projected solve stopped at ‖ΠP‖ = {:.3e} after {} iterations",
            state.residual_norm, state.iterations
        )))
    }
}
