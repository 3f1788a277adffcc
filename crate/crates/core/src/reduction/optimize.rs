//! Critical points of `K^t` on `U/G` and the second variation of volume at
//! the constructed Lagrangian.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::context::{converged, ReductionContext, ReductionState};
use super::variation::five_point_second;
use crate::ambient::FrameState;
use crate::error::{Error, Result};
use crate::geomcore::ScalarField;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Stop once `‖dK^t‖` over the directions transverse to `G` is below.
    pub gradient_tolerance: f64,
    pub max_steps: usize,
    /// Step of the finite-difference Hessian of `K^t`.
    pub hessian_step: f64,
    /// Largest coordinate step per iteration.
    pub max_step: f64,
    /// Perturbations off a saddle before giving up.
    pub max_restarts: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            gradient_tolerance: 1e-8,
            max_steps: 100,
            hessian_step: 1e-3,
            max_step: 0.3,
            max_restarts: 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizationVerdict {
    LocalMinimum,
    Saddle,
    StepUnderflow,
    BudgetExhausted,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OptimizationStep {
    pub step: usize,
    pub k_value: f64,
    pub residual_norm: f64,
    pub gradient_norm: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct OptimizationReport {
    pub state: ReductionState,
    pub verdict: OptimizationVerdict,
    /// `‖dK^t‖ ≤ gradient_tolerance` at the final frame.
    pub converged: bool,
    /// `Ψ^t∘H^t` along the directions transverse to `G`.
    pub gradient: Vec<f64>,
    pub gradient_norm: f64,
    /// Spectrum of the Hessian of `K^t` transverse to `G`.
    pub hessian_eigenvalues: Vec<f64>,
    #[serde(skip)]
    pub hessian: DMatrix<f64>,
    pub restarts: usize,
    pub trace: Vec<OptimizationStep>,
    /// `‖d*α_H‖/‖α_H‖` of the final Lagrangian in the ambient metric.
    pub geometric_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DirectionQ {
    /// `tⁿ d²/ds² F^t(f* + s f)`.
    pub quadratic_form: f64,
    /// `tⁿ⟨f, ℒf⟩`.
    pub predicted: f64,
    pub relative_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SecondVariationReport {
    pub t: f64,
    pub directions: Vec<DirectionQ>,
    /// Spectrum of `tⁿ·Hess K^t` transverse to `G`.
    pub frame_block_eigenvalues: Vec<f64>,
    pub frame_block_min: f64,
    /// `tⁿ ∂_x⟨f, P^t_x(f^t_x)⟩`, one row per direction `f`.
    pub cross_terms: Vec<Vec<f64>>,
    /// Largest `|cross| / √(|Q_ff|·|Q_xx|)`.
    pub max_relative_cross: f64,
}

impl ReductionContext {
    fn embed(&self, free: &[usize], v: &DVector<f64>) -> Vec<f64> {
        let mut x = vec![0.0; self.frame_dim()];
        for (k, &i) in free.iter().enumerate() {
            x[i] = v[k];
        }
        x
    }

    /// Finite-difference Hessian of `K^t` over the frame coordinates `axes`:
    /// five-point diagonal, four-point mixed entries.
    pub fn hessian_k(&self, state: &ReductionState, axes: &[usize], step: f64) -> Result<DMatrix<f64>> {
        converged(state)?;
        let m = axes.len();
        let mut displacements = Vec::new();
        for a in 0..m {
            for k in [2.0, 1.0, -1.0, -2.0] {
                displacements.push(vec![(a, k * step)]);
            }
            for b in a + 1..m {
                for (sa, sb) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                    displacements.push(vec![(a, sa * step), (b, sb * step)]);
                }
            }
        }
        let values = displacements
            .par_iter()
            .map(|disp| {
                let mut x = vec![0.0; self.frame_dim()];
                for &(a, s) in disp {
                    x[axes[a]] += s;
                }
                Ok(self.displaced_solve(state, &x)?.k_value)
            })
            .collect::<Result<Vec<f64>>>()?;
        let k0 = state.k_value;
        let mut hess = DMatrix::zeros(m, m);
        let mut it = values.iter();
        let mut next = || *it.next().expect("one value per displacement");
        for a in 0..m {
            let (p2, p1, m1, m2) = (next(), next(), next(), next());
            hess[(a, a)] = five_point_second([p2, p1, m1, m2], k0, step);
            for b in a + 1..m {
                let (pp, pm, mp, mm) = (next(), next(), next(), next());
                let v = (pp - pm - mp + mm) / (4.0 * step * step);
                hess[(a, b)] = v;
                hess[(b, a)] = v;
            }
        }
        Ok(hess)
    }

    /// Damped quasi-Newton descent of `K^t` over the coordinates transverse
    /// to `G`, re-solving the projected problem at every trial frame.
    ///
    /// The model Hessian starts from finite differences and is updated by
    /// BFGS; its eigenvalues are reflected to `|λ|` so every step descends.
    /// A full step whose decrease is at least linear is extended while `K`
    /// keeps falling. Steps use the central-difference gradient; the
    /// five-point gradient decides termination and is the one reported.
    /// At a small gradient the Hessian is recomputed; a negative direction
    /// triggers a perturbation along it, at most `max_restarts` times.
    pub fn optimize_frame(&self, t: f64, init: &FrameState, opts: &OptimizerConfig) -> Result<OptimizationReport> {
        let free = self.free_directions();
        let mut state = self.projected_solve(t, &init.recentered())?;
        converged(&state)?;
        let mut hess = self.hessian_k(&state, &free, opts.hessian_step)?;
        let mut hess_fresh = true;
        let mut grad = self.identity_gradient(&state, &free, false)?;
        let mut grad_accurate = false;
        let mut trace = Vec::new();
        let mut restarts = 0;
        let mut verdict = OptimizationVerdict::BudgetExhausted;
        for step in 0..=opts.max_steps {
            trace.push(OptimizationStep {
                step,
                k_value: state.k_value,
                residual_norm: state.residual_norm,
                gradient_norm: grad.norm(),
            });
            if grad.norm() <= opts.gradient_tolerance && !grad_accurate {
                grad = self.identity_gradient(&state, &free, true)?;
                grad_accurate = true;
            }
            if grad.norm() <= opts.gradient_tolerance {
                if !hess_fresh {
                    hess = self.hessian_k(&state, &free, opts.hessian_step)?;
                    hess_fresh = true;
                }
                let eig = hess.clone().symmetric_eigen();
                let (imin, &lmin) = eig
                    .eigenvalues
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(b.1))
                    .expect("nonempty Hessian");
                let scale = eig.eigenvalues.amax();
                if lmin >= -1e-6 * scale {
                    verdict = OptimizationVerdict::LocalMinimum;
                    break;
                }
                if restarts == opts.max_restarts {
                    verdict = OptimizationVerdict::Saddle;
                    break;
                }
                restarts += 1;
                let v = eig.eigenvectors.column(imin).into_owned();
                let mut moved = None;
                let mut alpha = opts.max_step;
                while alpha > 1e-6 && moved.is_none() {
                    for sign in [1.0, -1.0] {
                        let x = self.embed(&free, &(&v * (sign * alpha)));
                        let frame = state.frame.displaced(self.metric(), &x)?;
                        let st = self.solve(t, &frame, &state.coefficients, self.config.solve_tolerance)?;
                        if st.converged && st.k_value < state.k_value {
                            moved = Some(st);
                            break;
                        }
                    }
                    alpha *= 0.5;
                }
                match moved {
                    Some(st) => state = st,
                    None => {
                        verdict = OptimizationVerdict::Saddle;
                        break;
                    }
                }
                hess = self.hessian_k(&state, &free, opts.hessian_step)?;
                hess_fresh = true;
                grad = self.identity_gradient(&state, &free, false)?;
                grad_accurate = false;
                continue;
            }
            if step == opts.max_steps {
                break;
            }
            let eig = hess.clone().symmetric_eigen();
            let floor = 1e-8 * eig.eigenvalues.amax() + 1e-14;
            let mut dir = DVector::zeros(free.len());
            for (i, &l) in eig.eigenvalues.iter().enumerate() {
                let v = eig.eigenvectors.column(i);
                dir -= v * (v.dot(&grad) / l.abs().max(floor));
            }
            if dir.norm() > opts.max_step {
                dir *= opts.max_step / dir.norm();
            }
            let slope = grad.dot(&dir);
            let mut alpha = 1.0;
            let accepted = loop {
                let x = self.embed(&free, &(&dir * alpha));
                let frame = state.frame.displaced(self.metric(), &x)?;
                let trial = self.solve(t, &frame, &state.coefficients, self.config.solve_tolerance);
                if let Ok(st) = trial {
                    // Below ~1e−12 the decrease is lost in the roundoff of K.
                    let noise = (alpha * slope).abs() < 1e-12 * state.k_value.abs().max(1.0);
                    if st.converged && (st.k_value <= state.k_value + 1e-4 * alpha * slope || noise) {
                        break Some((st, alpha));
                    }
                }
                alpha *= 0.5;
                if alpha < 1e-10 {
                    break None;
                }
            };
            let Some((mut next, mut alpha)) = accepted else {
                verdict = OptimizationVerdict::StepUnderflow;
                break;
            };
            // A decrease beyond the linear prediction means the model
            // overestimates the curvature along `dir`.
            if alpha == 1.0 && state.k_value - next.k_value >= -slope {
                while alpha * dir.norm() < opts.max_step {
                    let trial_alpha = (2.0 * alpha).min(opts.max_step / dir.norm());
                    let x = self.embed(&free, &(&dir * trial_alpha));
                    let frame = state.frame.displaced(self.metric(), &x)?;
                    match self.solve(t, &frame, &next.coefficients, self.config.solve_tolerance) {
                        Ok(st) if st.converged && st.k_value < next.k_value => {
                            next = st;
                            alpha = trial_alpha;
                        }
                        _ => break,
                    }
                }
            }
            let next_grad = self.identity_gradient(&next, &free, false)?;
            grad_accurate = false;
            let s = &dir * alpha;
            let y = &next_grad - &grad;
            let sy = s.dot(&y);
            if sy > 1e-12 * s.norm() * y.norm() {
                let hs = &hess * &s;
                hess += &y * y.transpose() / sy - &hs * hs.transpose() / s.dot(&hs);
                hess = (&hess + hess.transpose()) * 0.5;
            }
            hess_fresh = false;
            state = next;
            grad = next_grad;
        }
        if !hess_fresh {
            hess = self.hessian_k(&state, &free, opts.hessian_step)?;
        }
        let mut hessian_eigenvalues: Vec<f64> = hess.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
        hessian_eigenvalues.sort_by(f64::total_cmp);
        if !grad_accurate {
            grad = self.identity_gradient(&state, &free, true)?;
        }
        let geometric_residual = self.geometric_residual(&state)?;
        let gradient_norm = grad.norm();
        Ok(OptimizationReport {
            state,
            verdict,
            converged: gradient_norm <= opts.gradient_tolerance,
            gradient: grad.iter().copied().collect(),
            gradient_norm,
            hessian_eigenvalues,
            hessian: hess,
            restarts,
            trace,
            geometric_residual,
        })
    }

    /// Second variation of volume at a reduced critical point along
    /// kernel-orthogonal fields `f`, along the frame family, and across.
    ///
    /// `frame_hessian` is the Hessian of `K^t` over the transverse frame
    /// coordinates; it is recomputed when absent.
    pub fn second_variation_q(
        &self,
        state: &ReductionState,
        directions: &[ScalarField],
        frame_hessian: Option<&DMatrix<f64>>,
    ) -> Result<SecondVariationReport> {
        converged(state)?;
        let t = state.t;
        let tn = t.powi(self.n() as i32);
        let free = self.free_directions();
        let basis = self.basis();
        let kernel = &self.flat.kernel;
        let g = self.chart_metric(t, &state.frame)?;
        let coeffs = directions
            .iter()
            .map(|f| {
                let c = kernel.project_out(&basis.analyze(f)?);
                let norm = c.norm();
                if !(norm > 1e-12) {
                    return Err(Error::InvalidParameter("direction lies in the kernel".into()));
                }
                Ok(c / norm)
            })
            .collect::<Result<Vec<_>>>()?;

        let s = 1e-3;
        let mut report_dirs = Vec::new();
        let mut q_diag = Vec::new();
        for c in &coeffs {
            let vals = [2.0, 1.0, -1.0, -2.0]
                .iter()
                .map(|&k| Ok(self.evaluate_coeffs(&g, &(&state.coefficients + c * (k * s)))?.0))
                .collect::<Result<Vec<f64>>>()?;
            let second = five_point_second([vals[0], vals[1], vals[2], vals[3]], state.k_value, s);
            let quadratic_form = tn * second;
            let predicted = tn * c.dot(&self.flat.operator.apply_coeffs(c));
            q_diag.push(quadratic_form);
            report_dirs.push(DirectionQ {
                quadratic_form,
                predicted,
                relative_error: (quadratic_form - predicted).abs() / predicted.abs(),
            });
        }

        let hess = match frame_hessian {
            Some(h) => h.clone(),
            None => self.hessian_k(state, &free, OptimizerConfig::default().hessian_step)?,
        } * tn;
        let mut frame_block_eigenvalues: Vec<f64> = hess.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
        frame_block_eigenvalues.sort_by(f64::total_cmp);

        let stencils = self.axis_stencils(state, &free)?;
        let mut cross_terms = vec![vec![0.0; free.len()]; coeffs.len()];
        let mut max_relative_cross: f64 = 0.0;
        for (j, st) in stencils.iter().enumerate() {
            for (i, c) in coeffs.iter().enumerate() {
                let cross = tn * st.derivative(|s| c.dot(&s.residual));
                cross_terms[i][j] = cross;
                let denom = (q_diag[i].abs() * hess[(j, j)].abs()).sqrt();
                max_relative_cross = max_relative_cross.max(cross.abs() / denom);
            }
        }
        Ok(SecondVariationReport {
            t,
            directions: report_dirs,
            frame_block_min: frame_block_eigenvalues[0],
            frame_block_eigenvalues,
            cross_terms,
            max_relative_cross,
        })
    }
}
