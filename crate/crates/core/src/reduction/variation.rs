//! Frame variations of the reduced family: Hamiltonian potentials `h^t(x)`,
//! the moment-map approximation `ξ^t`, the matrices `Ψ^t`, `ψ^t` and the
//! identity `dK^t = Ψ^t∘H^t`.
//!
//! Potentials are taken of the ambient immersion `p + tυΦ(Γ_{df})`, so they
//! scale like `t²`; `Ψ^t` and `ψ^t` carry the compensating `t^{−2}`.

use nalgebra::{Complex, DMatrix, DVector};
use rayon::prelude::*;

use super::context::{converged, ReductionContext, ReductionState, STENCIL_SOLVE_TOLERANCE};
use crate::ambient::{omega0_pair, FrameState};
use crate::error::{Error, Result};
use crate::geomcore::ScalarField;
use crate::models::{restrict_moment, MomentPolynomial};

/// Offsets of the five-point stencil, in units of the frame step.
const STENCIL: [f64; 4] = [2.0, 1.0, -1.0, -2.0];
const CENTRAL: [f64; 2] = [1.0, -1.0];

/// Five-point central derivative from values at `STENCIL` offsets.
pub(crate) fn five_point(v: [f64; 4], h: f64) -> f64 {
    (8.0 * (v[1] - v[2]) - (v[0] - v[3])) / (12.0 * h)
}

/// Five-point second derivative from the same offsets and the centre value.
pub(crate) fn five_point_second(v: [f64; 4], centre: f64, h: f64) -> f64 {
    (-v[0] + 16.0 * v[1] - 30.0 * centre + 16.0 * v[2] - v[3]) / (12.0 * h * h)
}

/// `h^t(x)` with `ω₀(∂_xι, ·)|_L = dh`, zero-mean.
#[derive(Clone, Debug)]
pub struct VariationPotential {
    pub field: ScalarField,
    /// `t^{−2}‖dh − β‖_{L²}`.
    pub exactness: f64,
    /// `t^{−2}‖β‖_{L²}`.
    pub form_norm: f64,
}

/// `Ψ^t` against `ψ^t`; rows are frame coordinates, columns the zero-mean
/// kernel basis.
#[derive(Clone, Debug)]
pub struct PsiReport {
    pub psi: DMatrix<f64>,
    pub xi_psi: DMatrix<f64>,
    /// Condition number of `Ψ^t` restricted to the directions transverse to
    /// `G`.
    pub reduced_condition: f64,
    /// `‖Ψ − ψ‖_F / ‖ψ‖_F` over the transverse rows.
    pub relative_deviation: f64,
    /// Largest row norm of `Ψ^t` along `G`.
    pub g_row_norm: f64,
    pub exactness: f64,
}

/// Both gradients of `K^t` over the frame coordinates.
#[derive(Clone, Debug)]
pub struct GradientReport {
    /// `Ψ^t∘H^t`, the value of the gradient.
    pub identity: Vec<f64>,
    /// Five-point differences of `K^t`.
    pub finite_difference: Vec<f64>,
    pub relative_disagreement: f64,
    /// Largest `|component|` of either gradient along `G`.
    pub g_component: f64,
    pub psi: PsiReport,
}

/// Solves at the frames `offsets[i]·step` along one direction: five-point
/// (`STENCIL`) or central (`CENTRAL`).
pub(crate) struct Stencil {
    pub states: Vec<ReductionState>,
    pub step: f64,
}

impl Stencil {
    /// Derivative from values at the stencil frames, in stencil order.
    pub fn combine(&self, v: &[f64]) -> f64 {
        match v.len() {
            4 => five_point([v[0], v[1], v[2], v[3]], self.step),
            _ => (v[0] - v[1]) / (2.0 * self.step),
        }
    }

    pub fn derivative(&self, value: impl Fn(&ReductionState) -> f64) -> f64 {
        let v: Vec<f64> = self.states.iter().map(value).collect();
        self.combine(&v)
    }
}

/// Complex `n × n` matrix of the frame generator `X(ξ)`.
fn generator_complex(xi: &[f64], n: usize) -> DMatrix<Complex<f64>> {
    let mut a = DMatrix::from_element(n, n, Complex::new(0.0, 0.0));
    for j in 0..n {
        a[(j, j)] = Complex::new(0.0, xi[j]);
    }
    let mut idx = n;
    for j in 0..n {
        for k in j + 1..n {
            a[(j, k)] = Complex::new(xi[idx], xi[idx + 1]);
            a[(k, j)] = Complex::new(-xi[idx], xi[idx + 1]);
            idx += 2;
        }
    }
    a
}

impl ReductionContext {
    /// Unit vector along frame coordinate `i`.
    pub fn frame_axis(&self, i: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.frame_dim()];
        x[i] = 1.0;
        x
    }

    /// Tight solve at `state.frame` displaced by `x`, warm-started from
    /// `state`.
    pub(crate) fn displaced_solve(&self, state: &ReductionState, x: &[f64]) -> Result<ReductionState> {
        let frame = state.frame.displaced(self.metric(), x)?;
        let st = self.solve(state.t, &frame, &state.coefficients, STENCIL_SOLVE_TOLERANCE)?;
        if st.residual_norm > self.config.solve_tolerance {
            converged(&st)?;
        }
        Ok(st)
    }

    pub(crate) fn stencil(&self, state: &ReductionState, x: &[f64], step: f64) -> Result<Stencil> {
        self.stencil_with(state, x, step, &STENCIL)
    }

    fn stencil_with(&self, state: &ReductionState, x: &[f64], step: f64, offsets: &[f64]) -> Result<Stencil> {
        let states = offsets
            .par_iter()
            .map(|&k| {
                let dx: Vec<f64> = x.iter().map(|v| v * k * step).collect();
                self.displaced_solve(state, &dx)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Stencil { states, step })
    }

    /// Node values of `ι − p_base` for the ambient immersion of `state`.
    fn ambient_offsets(&self, base: &FrameState, state: &ReductionState) -> Result<Vec<f64>> {
        let z = self.flat.chart.graph_points(&state.f)?;
        let u = state.frame.frame() * state.t;
        let d = u.nrows();
        let shift: Vec<f64> = (0..d).map(|i| state.frame.p[i] - base.p[i]).collect();
        let mut out = Vec::with_capacity(z.len());
        for chunk in z.chunks(d) {
            let v = &u * DVector::from_column_slice(chunk);
            out.extend((0..d).map(|i| shift[i] + v[i]));
        }
        Ok(out)
    }

    /// `h^t(x)` at a converged state: five-point differences of the ambient
    /// immersion along `x`, contracted with `ω₀`, then `Δh = d*β` solved
    /// spectrally in the flat model metric.
    pub fn variation_potential(&self, state: &ReductionState, x: &[f64]) -> Result<VariationPotential> {
        converged(state)?;
        if x.len() != self.frame_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.frame_dim(),
                got: x.len(),
            });
        }
        let stencil = self.stencil(state, x, self.config.frame_step)?;
        self.potential_from_stencil(state, &stencil)
    }

    pub(crate) fn potential_from_stencil(&self, state: &ReductionState, stencil: &Stencil) -> Result<VariationPotential> {
        let offsets = stencil
            .states
            .iter()
            .map(|s| self.ambient_offsets(&state.frame, s))
            .collect::<Result<Vec<_>>>()?;
        let velocity: Vec<f64> = (0..offsets[0].len())
            .map(|i| stencil.combine(&offsets.iter().map(|o| o[i]).collect::<Vec<_>>()))
            .collect();

        let n = self.n();
        let d = 2 * n;
        let t = state.t;
        let basis = self.basis();
        let grid = &basis.grid;
        let nodes = grid.node_count();
        let base = self.flat.chart.graph_immersion(&state.f)?;
        let u = state.frame.frame() * t;
        // β_a = ω₀(∂_xι, ∂_aι), one component field per a.
        let mut beta = vec![vec![0.0; nodes]; n];
        for node in 0..nodes {
            let jet = base.jet(node);
            let v = &velocity[node * d..(node + 1) * d];
            for (a, comp) in beta.iter_mut().enumerate() {
                let da = &u * jet.d1.column(a);
                comp[node] = omega0_pair(v, da.as_slice());
            }
        }
        let radii = &self.flat.model.radii;
        let mut div = vec![0.0; nodes];
        for (a, comp) in beta.iter().enumerate() {
            let w = 1.0 / (radii[a] * radii[a]);
            for (acc, v) in div.iter_mut().zip(grid.differentiate(comp, a)) {
                *acc += w * v;
            }
        }
        let rhs = basis.analyze(&ScalarField::new(grid.clone(), div)?)?;
        let coeffs = DVector::from_iterator(
            basis.len(),
            basis.modes.iter().zip(rhs.iter()).map(|(m, &r)| {
                let lambda: f64 = m
                    .wavenumber
                    .iter()
                    .zip(radii)
                    .map(|(&k, a)| (k * k) as f64 / (a * a))
                    .sum();
                if lambda == 0.0 {
                    0.0
                } else {
                    -r / lambda
                }
            }),
        );
        let field = basis.synthesize(&coeffs);
        let weight = basis.node_weight();
        let mut defect = 0.0;
        let mut norm = 0.0;
        for (a, comp) in beta.iter().enumerate() {
            let w = weight / (radii[a] * radii[a]);
            let dh = grid.differentiate(&field.values, a);
            for (x, y) in dh.iter().zip(comp) {
                defect += w * (x - y) * (x - y);
                norm += w * y * y;
            }
        }
        let scale = 1.0 / (t * t);
        let exactness = defect.sqrt() * scale;
        let form_norm = norm.sqrt() * scale;
        if exactness > 1e-6 * form_norm.max(1.0) {
            return Err(Error::Consistency(format!(
                "variation one-form is not exact: ‖dh − β‖ = {exactness:.3e} against ‖β‖ = {form_norm:.3e}"
            )));
        }
        Ok(VariationPotential {
            field,
            exactness,
            form_norm,
        })
    }

    /// `μ_x∘t` as a moment polynomial in chart coordinates: the translation
    /// part `t·ω₀(υ⁻¹δp, z)` and the rotation part `½t²ω₀(X(δξ)z, z)`.
    pub fn moment_of_direction(&self, t: f64, frame: &FrameState, x: &[f64]) -> Result<MomentPolynomial> {
        let n = self.n();
        let d = 2 * n;
        if x.len() != self.frame_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.frame_dim(),
                got: x.len(),
            });
        }
        // υ⁻¹ = υᵀG(p) for a unitary frame.
        let u = frame.frame();
        let inv = u.transpose() * self.metric().value(&frame.p)?;
        let c = inv * DVector::from_column_slice(&x[..d]);
        let b = (0..n)
            .map(|j| Complex::new(c[2 * j], -c[2 * j + 1]) * Complex::new(0.0, -0.5 * t))
            .collect();
        let a = generator_complex(&x[d..], n);
        let cm = a.transpose() * Complex::new(0.0, 0.5 * t * t);
        MomentPolynomial::new(0.0, b, cm)
    }

    /// `ξ^t(x)`: the zero-mean restriction of `μ_x∘t` to the model torus.
    pub fn xi_map(&self, t: f64, frame: &FrameState, x: &[f64]) -> Result<ScalarField> {
        let q = self.moment_of_direction(t, frame, x)?;
        let imm = self.flat.model.immersion()?;
        let f = restrict_moment(&q, &imm)?;
        let mean = f.values.iter().sum::<f64>() / f.values.len() as f64;
        Ok(f.map(|v| v - mean))
    }

    /// `t^{−2}⟨ξ^t(e_i), b_j⟩` over all frame coordinates.
    pub fn xi_psi_matrix(&self, t: f64, frame: &FrameState) -> Result<DMatrix<f64>> {
        let k0 = self.flat.zero_mean_kernel();
        let rows = (0..self.frame_dim())
            .map(|i| {
                let xi = self.xi_map(t, frame, &self.frame_axis(i))?;
                Ok((k0.transpose() * self.basis().analyze(&xi)?).transpose() / (t * t))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_rows(&rows))
    }

    fn psi_rows(&self, state: &ReductionState, stencils: &[Stencil]) -> Result<(DMatrix<f64>, f64)> {
        let k0 = self.flat.zero_mean_kernel();
        let t = state.t;
        let mut exactness: f64 = 0.0;
        let rows = stencils
            .iter()
            .map(|s| {
                let h = self.potential_from_stencil(state, s)?;
                exactness = exactness.max(h.exactness);
                Ok((k0.transpose() * self.basis().analyze(&h.field)?).transpose() / (t * t))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((DMatrix::from_rows(&rows), exactness))
    }

    fn psi_report(&self, state: &ReductionState, stencils: &[Stencil]) -> Result<PsiReport> {
        let (psi, exactness) = self.psi_rows(state, stencils)?;
        let xi_psi = self.xi_psi_matrix(state.t, &state.frame)?;
        let free = self.free_directions();
        let pick = |m: &DMatrix<f64>| DMatrix::from_rows(&free.iter().map(|&i| m.row(i).into_owned()).collect::<Vec<_>>());
        let (reduced, reduced_xi) = (pick(&psi), pick(&xi_psi));
        let sv = reduced.clone().singular_values();
        let reduced_condition = sv.max() / sv.min();
        if !(reduced_condition < 1e10) {
            return Err(Error::Degenerate(format!(
                "Ψ is rank deficient transverse to G (condition {reduced_condition:.3e})"
            )));
        }
        let relative_deviation = (&reduced - &reduced_xi).norm() / reduced_xi.norm();
        let g_row_norm = self
            .g_directions()
            .map(|i| psi.row(i).norm())
            .fold(0.0, f64::max);
        Ok(PsiReport {
            psi,
            xi_psi,
            reduced_condition,
            relative_deviation,
            g_row_norm,
            exactness,
        })
    }

    /// `Ψ^t` at a converged state.
    pub fn psi_map(&self, state: &ReductionState) -> Result<PsiReport> {
        converged(state)?;
        let stencils = self.axis_stencils(state, &(0..self.frame_dim()).collect::<Vec<_>>())?;
        self.psi_report(state, &stencils)
    }

    pub(crate) fn axis_stencils(&self, state: &ReductionState, axes: &[usize]) -> Result<Vec<Stencil>> {
        axes.iter()
            .map(|&i| self.stencil(state, &self.frame_axis(i), self.config.frame_step))
            .collect()
    }

    /// `Ψ^t∘H^t` restricted to the given frame coordinates. With
    /// `accurate == false` the potentials come from central differences; the
    /// error is relative to the gradient, since it enters through `Ψ` and is
    /// multiplied by `H`.
    pub(crate) fn identity_gradient(&self, state: &ReductionState, axes: &[usize], accurate: bool) -> Result<DVector<f64>> {
        let offsets: &[f64] = if accurate { &STENCIL } else { &CENTRAL };
        let stencils = axes
            .iter()
            .map(|&i| self.stencil_with(state, &self.frame_axis(i), self.config.frame_step, offsets))
            .collect::<Result<Vec<_>>>()?;
        let (psi, _) = self.psi_rows(state, &stencils)?;
        let h = DVector::from_vec(self.h_eval(state).coefficients);
        Ok(psi * h)
    }

    /// `dK^t` at `(t, frame)` by the identity `Ψ^t∘H^t`, alongside the
    /// finite-difference gradient of `K^t`.
    pub fn gradient_k(&self, t: f64, frame: &FrameState) -> Result<GradientReport> {
        let state = self.projected_solve(t, frame)?;
        self.gradient_k_at(&state)
    }

    pub fn gradient_k_at(&self, state: &ReductionState) -> Result<GradientReport> {
        converged(state)?;
        let axes: Vec<usize> = (0..self.frame_dim()).collect();
        let stencils = self.axis_stencils(state, &axes)?;
        let psi = self.psi_report(state, &stencils)?;
        let h = DVector::from_vec(self.h_eval(state).coefficients);
        let identity: Vec<f64> = (&psi.psi * h).iter().copied().collect();
        let finite_difference: Vec<f64> = stencils.iter().map(|s| s.derivative(|st| st.k_value)).collect();
        let fd = DVector::from_column_slice(&finite_difference);
        let id = DVector::from_column_slice(&identity);
        let relative_disagreement = if fd.norm() >= 1e-6 {
            (&fd - &id).norm() / fd.norm()
        } else {
            (&fd - &id).norm()
        };
        let g_component = self
            .g_directions()
            .map(|i| identity[i].abs().max(finite_difference[i].abs()))
            .fold(0.0, f64::max);
        Ok(GradientReport {
            identity,
            finite_difference,
            relative_disagreement,
            g_component,
            psi,
        })
    }
}
