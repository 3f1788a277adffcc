use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde_json::json;

use super::config::{ExperimentConfig, ModelDescriptor, Suite};
use super::run::Recorder;
use super::trace::Trace;
use crate::ambient::{
    estimate_sweep, moser_flow, pullback_defect, BallSamples, ChartFamily, ClosedTwoForm,
    CompatibleMetric, FrameState, MoserConfig,
};
use crate::error::Result;
use crate::geomcore::{hs_residual, mean_curvature_one_form, volume, ScalarField};
use crate::models::{
    ln_spectrum, moment_basis, restrict_moment, rigidity_prediction, LnModel, Model, TorusModel,
};
use crate::operator::{
    assemble_flat_l, assemble_residual_l, eigensolve, kernel_basis, second_variation_consistency,
    KernelBasis, LinearOperator, SpectralData,
};
use crate::reduction::{OptimizationVerdict, ReductionContext};

/// Size of the random `ξ` of seeded frames.
const FRAME_XI_SCALE: f64 = 0.5;
/// Largest wavenumber of random test functions.
const TEST_BAND: i64 = 3;
/// Five-point step of the second-variation check for unit-norm `f`.
const SECOND_VARIATION_STEP: f64 = 1e-2;
/// Step of the finite-difference Jacobians of the Moser map.
const MOSER_JACOBIAN_STEP: f64 = 1e-4;
/// Moment restrictions with smaller `L²` norm vanish identically on the
/// model (generators of its symmetry group) and lie in every span.
const VANISHING_RESTRICTION: f64 = 1e-10;

pub(crate) fn run(suite: Suite, cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    match suite {
        Suite::VerifyModels => verify_models(cfg, rec),
        Suite::Spectrum => spectrum(cfg, rec),
        Suite::Estimates => estimates(cfg, rec),
        Suite::Reduce => reduce(cfg, rec),
        Suite::Sweep => sweep(cfg, rec),
    }
}

enum Built {
    Torus(TorusModel),
    Ln(LnModel),
}

impl Built {
    fn new(desc: &ModelDescriptor, grid: usize) -> Result<Self> {
        Ok(match desc {
            ModelDescriptor::Torus { radii } => Built::Torus(TorusModel::new(radii.clone(), grid)?),
            ModelDescriptor::Ln { n } => Built::Ln(LnModel::new(*n, grid)?),
        })
    }

    fn model(&self) -> Model<'_> {
        match self {
            Built::Torus(t) => Model::Torus(t),
            Built::Ln(l) => Model::Ln(l),
        }
    }

    fn immersion(&self) -> Result<crate::geomcore::Immersion> {
        match self {
            Built::Torus(t) => t.immersion(),
            Built::Ln(l) => l.immersion(),
        }
    }

    /// Closed-form volume and the constant components of `α_H` in the grid
    /// coordinates.
    fn closed_forms(&self) -> (f64, Vec<f64>) {
        match self {
            Built::Torus(t) => (t.volume(), vec![-1.0; t.n()]),
            // |∂_s| = |∂_φ| = 1 on the covering torus, halved by the quotient.
            Built::Ln(_) => (2.0 * PI * PI, vec![-2.0, 0.0]),
        }
    }
}

fn verify_models(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let tol = &cfg.tolerances;
    let mut table = Vec::new();
    let models = cfg.models();
    let mut traces: Vec<Trace> = models
        .iter()
        .map(|d| {
            Trace::new(
                &format!("models_{}", d.label()),
                &["grid", "max_residual", "volume", "closed_form_volume", "alpha_h_error", "lagrangian_defect"],
            )
        })
        .collect();
    for &grid in &cfg.grid_sizes {
        for (desc, trace) in models.iter().zip(&mut traces) {
            let label = format!("{}_{grid}", desc.label());
            let built = Built::new(desc, grid)?;
            let imm = built.immersion()?;
            let g = CompatibleMetric::flat(imm.dim());
            let residual = hs_residual(&imm, &g)?.max_abs();
            let vol = volume(&imm, &g)?;
            let alpha = mean_curvature_one_form(&imm, &g)?;
            let (vol_exact, alpha_exact) = built.closed_forms();
            let alpha_error = (0..imm.dim())
                .map(|a| alpha.component(a).map(|v| v - alpha_exact[a]).max_abs())
                .fold(0.0, f64::max);
            let vol_error = (vol - vol_exact).abs() / vol_exact;
            rec.at_most(1, &format!("{label}: max |d*α_H|"), residual, tol.stationarity);
            rec.at_most(1, &format!("{label}: volume relative error"), vol_error, tol.stationarity);
            rec.at_most(1, &format!("{label}: α_H max error"), alpha_error, tol.stationarity);
            table.push(json!({
                "model": desc,
                "grid": grid,
                "max_residual": residual,
                "volume": vol,
                "closed_form_volume": vol_exact,
                "alpha_h": alpha_exact,
                "alpha_h_error": alpha_error,
                "lagrangian_defect": imm.lagrangian_defect(),
            }));
            trace.push(vec![
                grid as f64,
                residual,
                vol,
                vol_exact,
                alpha_error,
                imm.lagrangian_defect(),
            ]);
        }
    }
    rec.result("models", table);
    for t in traces {
        rec.trace(t);
    }
    Ok(())
}

/// Dimension, gap and moment-span checks of a numerical kernel.
fn kernel_checks(
    rec: &mut Recorder,
    label: &str,
    built: &Built,
    spec: &SpectralData,
    tol: &super::config::Tolerances,
) -> Result<KernelBasis> {
    let mut spec = spec.clone();
    spec.kernel_tol = tol.kernel;
    let inside = spec.eigenvalues.iter().filter(|v| v.abs() <= tol.kernel).count();
    let outside = spec
        .eigenvalues
        .iter()
        .map(|v| v.abs())
        .filter(|&v| v > tol.kernel)
        .fold(f64::INFINITY, f64::min);
    let predicted = rigidity_prediction(built.model())?;
    rec.equals(3, &format!("{label}: kernel dimension"), inside as f64, predicted as f64);
    rec.at_least(3, &format!("{label}: gap ratio"), outside / tol.kernel, tol.gap_ratio);
    let kernel = kernel_basis(&spec)?;
    let imm = built.immersion()?;
    let mut worst: f64 = 0.0;
    let mut vanishing = 0;
    for q in moment_basis(imm.dim()) {
        let (dist, norm) = kernel.span_distance(&restrict_moment(&q, &imm)?)?;
        if norm <= VANISHING_RESTRICTION {
            vanishing += 1;
            worst = worst.max(dist);
        } else {
            worst = worst.max(dist / norm);
        }
    }
    rec.at_most(3, &format!("{label}: moment restrictions outside the kernel"), worst, tol.moment_span);
    rec.result(
        &format!("{label}_kernel"),
        json!({
            "dimension": inside,
            "predicted": predicted,
            "first_nonzero": outside,
            "moment_span_residual": worst,
            "vanishing_restrictions": vanishing,
        }),
    );
    Ok(kernel)
}

fn spectrum_trace(name: &str, spec: &SpectralData) -> Trace {
    let mut t = Trace::new(name, &["index", "eigenvalue", "residual"]);
    for (i, (&v, &r)) in spec.eigenvalues.iter().zip(&spec.residuals).enumerate() {
        t.push(vec![i as f64, v, r]);
    }
    t
}

fn spectrum(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let tol = &cfg.tolerances;
    for &grid in &cfg.grid_sizes {
        for desc in cfg.models() {
            let label = format!("{}_{grid}", desc.label());
            let built = Built::new(&desc, grid)?;
            // On L₂ the operator is the linearized residual, compared below
            // against the closed-form eigenvalues.
            let op = match &built {
                Built::Torus(_) => assemble_flat_l(built.model())?,
                Built::Ln(_) => assemble_residual_l(built.model())?,
            };
            let spec = eigensolve(&op, op.dim())?;
            rec.trace(spectrum_trace(&format!("spectrum_{label}"), &spec));
            let kernel = kernel_checks(rec, &label, &built, &spec, tol)?;
            let min = spec.min_eigenvalue();
            rec.at_least(4, &format!("{label}: minimum eigenvalue"), min, -tol.stability);
            match &built {
                Built::Ln(l) => ln_modes(rec, &label, l.n, &spec, tol.spectrum),
                Built::Torus(_) => {
                    second_variation_checks(cfg, rec, &label, built.model(), &op, &kernel)?
                }
            }
        }
    }
    Ok(())
}

/// Closed-form `L_n` eigenvalues with `k, l ≤ 4`, `k + l` even, against the
/// nearest numerical eigenvalue, and the numerical multiplicity of each value.
fn ln_modes(rec: &mut Recorder, label: &str, n: usize, spec: &SpectralData, tol: f64) {
    let close = |a: f64, b: f64| (a - b).abs() <= tol * b.abs().max(1.0);
    // Wide enough that every eigenvalue up to the k, l ≤ 4 range is listed.
    let all: Vec<_> = ln_spectrum(n, 12, 12)
        .into_iter()
        .filter(|e| (e.k + e.l) % 2 == 0)
        .collect();
    let mut t = Trace::new(
        &format!("modes_{label}"),
        &["k", "l", "multiplicity", "analytic", "numeric", "abs_diff"],
    );
    let mut worst: f64 = 0.0;
    let mut missing = 0usize;
    for e in all.iter().filter(|e| e.k <= 4 && e.l <= 4) {
        let numeric = spec
            .eigenvalues
            .iter()
            .copied()
            .min_by(|a, b| (a - e.eigenvalue).abs().total_cmp(&(b - e.eigenvalue).abs()))
            .unwrap_or(f64::NAN);
        let diff = (numeric - e.eigenvalue).abs();
        worst = worst.max(diff / e.eigenvalue.abs().max(1.0));
        let expected: u64 = all
            .iter()
            .filter(|o| close(o.eigenvalue, e.eigenvalue))
            .map(|o| o.multiplicity)
            .sum();
        let found = spec.eigenvalues.iter().filter(|&&v| close(v, e.eigenvalue)).count() as u64;
        missing += expected.saturating_sub(found) as usize;
        t.push(vec![e.k as f64, e.l as f64, e.multiplicity as f64, e.eigenvalue, numeric, diff]);
    }
    rec.trace(t);
    rec.at_most(2, &format!("{label}: eigenvalue relative error"), worst, tol);
    rec.equals(2, &format!("{label}: eigenvalues missing from multiplicities"), missing as f64, 0.0);
}

/// Five-point `d²/ds² Vol` against `⟨ℒf, f⟩` for seeded unit-norm
/// band-limited `f` orthogonal to the kernel (so `⟨ℒf, f⟩` is bounded away
/// from zero).
fn second_variation_checks(
    cfg: &ExperimentConfig,
    rec: &mut Recorder,
    label: &str,
    model: Model<'_>,
    op: &LinearOperator,
    kernel: &KernelBasis,
) -> Result<()> {
    let basis = &op.basis;
    let mut t = Trace::new(
        &format!("second_variation_{label}"),
        &["index", "quadratic_form", "operator_value", "relative_error"],
    );
    let mut worst: f64 = 0.0;
    for i in 0..cfg.test_functions {
        let seed = rec.draw_seed("test_function");
        let c = kernel.project_out(&basis.random_coefficients(TEST_BAND, seed));
        let f = basis.synthesize(&(&c / c.norm()));
        let sv = second_variation_consistency(model, op, &f, SECOND_VARIATION_STEP)?;
        let rel = (sv.quadratic_form - sv.operator_value).abs() / sv.operator_value.abs();
        worst = worst.max(rel);
        t.push(vec![i as f64, sv.quadratic_form, sv.operator_value, rel]);
    }
    rec.trace(t);
    rec.at_most(5, &format!("{label}: second variation relative error"), worst, cfg.tolerances.second_variation);
    Ok(())
}

fn random_frames(rec: &mut Recorder, g: &CompatibleMetric, count: usize, purpose: &str) -> Result<Vec<FrameState>> {
    (0..count)
        .map(|_| FrameState::random(g, rec.draw_seed(purpose), FRAME_XI_SCALE))
        .collect()
}

fn estimates(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let tol = &cfg.tolerances;
    let g = cfg.metric.build(2)?;
    let family = ChartFamily::new(g.clone(), cfg.solver.chart_radius, cfg.solver.epsilon)?;
    let frames = random_frames(rec, &g, cfg.frames, "estimate_frame")?;
    let ts = cfg.t_values(Suite::Estimates);
    let points = BallSamples::lattice(4, cfg.solver.chart_radius, 3);
    let report = estimate_sweep(&family, &frames, &ts, 2, &points)?;
    let mut t = Trace::new("estimates", &["t", "ratio_0", "ratio_1", "ratio_2"]);
    for &tv in &ts {
        let mut row = vec![tv];
        row.extend(report.rows.iter().filter(|r| r.t == tv).map(|r| r.ratio));
        t.push(row);
    }
    rec.trace(t);
    for (k, &s) in report.spread.iter().enumerate() {
        rec.at_most(6, &format!("spread of the order-{k} ratio"), s, tol.estimate_spread);
    }
    rec.result("estimates", &report);

    let m = &cfg.moser;
    let form = m.form(4);
    let moser = MoserConfig::default();
    let samples = BallSamples::lattice(4, m.sample_radius, m.per_axis);
    let flow = moser_flow(&form, &moser, &samples)?;
    let defect = pullback_defect(&form, &flow.images, &flow.jacobians);
    rec.at_most(7, "pullback defect (variational Jacobians)", defect, tol.moser_pullback);
    // Jacobians by central differences of the flow itself on a subset.
    let subset: Vec<Vec<f64>> = samples.iter().step_by(7).cloned().collect();
    let (images, jacobians) = fd_flow_jacobians(&form, &moser, &subset)?;
    let fd_defect = pullback_defect(&form, &images, &jacobians);
    rec.at_most(7, "pullback defect (finite-difference Jacobians)", fd_defect, tol.moser_pullback);
    let (origin, jac0) = fd_flow_jacobians(&form, &moser, &[vec![0.0; 4]])?;
    let drift = origin[0].iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    rec.at_most(7, "|φ¹(0)|", drift, tol.moser_origin);
    let jac_error = (&jac0[0] - DMatrix::identity(4, 4)).amax();
    rec.at_most(7, "|dφ¹(0) − I|", jac_error, tol.moser_origin);
    rec.result(
        "moser",
        json!({
            "samples": samples.len(),
            "steps": flow.steps,
            "pullback_defect": defect,
            "fd_pullback_defect": fd_defect,
            "origin_drift": drift,
            "origin_jacobian_error": jac_error,
        }),
    );
    Ok(())
}

/// Images and central-difference Jacobians of the time-one Moser map.
fn fd_flow_jacobians(
    form: &dyn ClosedTwoForm,
    cfg: &MoserConfig,
    points: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, Vec<DMatrix<f64>>)> {
    let h = MOSER_JACOBIAN_STEP;
    let d = form.dim();
    let mut all = Vec::with_capacity(points.len() * (2 * d + 1));
    for z in points {
        all.push(z.clone());
        for k in 0..d {
            for s in [h, -h] {
                let mut p = z.clone();
                p[k] += s;
                all.push(p);
            }
        }
    }
    let flow = moser_flow(form, cfg, &all)?;
    let mut images = Vec::new();
    let mut jacobians = Vec::new();
    for chunk in flow.images.chunks(2 * d + 1) {
        images.push(chunk[0].clone());
        jacobians.push(DMatrix::from_fn(d, d, |i, k| {
            (chunk[1 + 2 * k][i] - chunk[2 + 2 * k][i]) / (2.0 * h)
        }));
    }
    Ok((images, jacobians))
}

/// Test directions of the second variation: kernel-orthogonal on tori with
/// distinct radii (`cos θ₁` itself lies in the kernel).
fn q_directions(ctx: &ReductionContext) -> Vec<ScalarField> {
    let grid = &ctx.basis().grid;
    vec![
        ScalarField::from_fn(grid, |x| (2.0 * x[0]).cos()),
        ScalarField::from_fn(grid, |x| (x[0] + x[1]).cos()),
        ScalarField::from_fn(grid, |x| (2.0 * x[1] - x[0]).sin()),
    ]
}

fn reduce(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let tol = &cfg.tolerances;
    let ctx = ReductionContext::new(cfg.reduction_config(cfg.grid_sizes[0])?)?;
    let g = ctx.metric().clone();
    for t in cfg.t_values(Suite::Reduce) {
        let frames = random_frames(rec, &g, cfg.frames, "identity_frame")?;
        let mut trace = Trace::new(
            &format!("identity_t{t}"),
            &["frame", "relative_disagreement", "g_component", "psi_deviation"],
        );
        let mut checks = Vec::new();
        for (i, frame) in frames.iter().enumerate() {
            let r = ctx.gradient_k(t, frame)?;
            rec.at_most(9, &format!("t={t} frame {i}: dK vs Ψ∘H"), r.relative_disagreement, tol.identity);
            rec.at_most(9, &format!("t={t} frame {i}: G components"), r.g_component, tol.g_directions);
            trace.push(vec![i as f64, r.relative_disagreement, r.g_component, r.psi.relative_deviation]);
            checks.push(json!({
                "frame": frame,
                "identity": r.identity,
                "finite_difference": r.finite_difference,
                "relative_disagreement": r.relative_disagreement,
                "g_component": r.g_component,
                "psi_condition": r.psi.reduced_condition,
                "psi_deviation": r.psi.relative_deviation,
            }));
        }
        rec.trace(trace);
        rec.result(&format!("identity_t{t}"), checks);

        let mut runs = Vec::new();
        let mut minimum = None;
        for i in 0..cfg.starts {
            let init = FrameState::random(&g, rec.draw_seed("start"), FRAME_XI_SCALE)?;
            let report = ctx.optimize_frame(t, &init, &cfg.optimizer)?;
            let label = format!("t={t} start {i}");
            rec.at_most(10, &format!("{label}: ‖dK‖"), report.gradient_norm, tol.gradient);
            rec.at_most(10, &format!("{label}: geometric residual"), report.geometric_residual, tol.geometric);
            let mut trace = Trace::new(
                &format!("optimize_t{t}_start{i}"),
                &["step", "k_value", "residual_norm", "gradient_norm"],
            );
            for s in &report.trace {
                trace.push(vec![s.step as f64, s.k_value, s.residual_norm, s.gradient_norm]);
            }
            rec.trace(trace);
            runs.push(json!({ "initial_frame": init, "report": report }));
            if minimum.is_none() && report.verdict == OptimizationVerdict::LocalMinimum {
                minimum = Some(report);
            }
        }
        rec.result(&format!("optimize_t{t}"), runs);

        match minimum {
            Some(report) => {
                let q = ctx.second_variation_q(&report.state, &q_directions(&ctx), Some(&report.hessian))?;
                let worst = q.directions.iter().map(|d| d.relative_error).fold(0.0, f64::max);
                rec.at_most(11, &format!("t={t}: kernel-orthogonal block vs tⁿ⟨f, ℒf⟩"), worst, tol.quadratic_form);
                rec.at_most(11, &format!("t={t}: relative cross terms"), q.max_relative_cross, tol.cross_terms);
                rec.at_least(11, &format!("t={t}: frame block minimum"), q.frame_block_min, -tol.frame_block);
                rec.result(&format!("second_variation_t{t}"), &q);
            }
            None => {
                rec.at_least(11, &format!("t={t}: a start reached a local minimum"), 0.0, 1.0);
            }
        }
    }
    Ok(())
}

fn fitted_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn sweep(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let tol = &cfg.tolerances;
    let ctx = ReductionContext::new(cfg.reduction_config(cfg.grid_sizes[0])?)?;
    let frame = FrameState::random(ctx.metric(), rec.draw_seed("sweep_frame"), FRAME_XI_SCALE)?;
    let kernel = &ctx.flat.kernel.coefficients;
    let ts = cfg.t_values(Suite::Sweep);
    let mut scaling = Trace::new(
        "scaling",
        &["t", "f_norm", "h_norm", "residual_norm", "iterations", "geometric_residual"],
    );
    let (mut f_norms, mut h_norms) = (Vec::new(), Vec::new());
    let mut states = Vec::new();
    for &t in &ts {
        let state = ctx.projected_solve(t, &frame)?;
        let orthogonality = (kernel.transpose() * &state.coefficients).amax();
        rec.at_most(8, &format!("t={t}: ‖ΠP‖"), state.residual_norm, tol.solve);
        rec.at_most(8, &format!("t={t}: max |⟨f, b_i⟩|"), orthogonality, tol.solve);
        // A second start: a seeded kernel-orthogonal guess of the size of f.
        let seed = rec.draw_seed("second_guess");
        let guess = ctx.flat.kernel.project_out(&ctx.basis().random_coefficients(TEST_BAND, seed));
        let guess: DVector<f64> = &guess * (state.coefficients.norm() / guess.norm());
        let other = ctx.projected_solve_from(t, &frame, &guess)?;
        let gap = (&state.coefficients - &other.coefficients).norm();
        rec.at_most(8, &format!("t={t}: two initial guesses"), gap, tol.uniqueness);
        let h = ctx.h_eval(&state).norm();
        let geo = ctx.geometric_residual(&state)?;
        scaling.push(vec![t, state.f_norm, h, state.residual_norm, state.iterations as f64, geo]);
        let mut history = Trace::new(&format!("history_t{t}"), &["iteration", "residual_norm"]);
        for (i, &r) in state.history.iter().enumerate() {
            history.push(vec![i as f64, r]);
        }
        rec.trace(history);
        f_norms.push(state.f_norm);
        h_norms.push(h);
        states.push(json!({ "state": state, "h_norm": h, "second_guess_gap": gap, "geometric_residual": geo }));
    }
    let slope = fitted_slope(&ts, &f_norms);
    rec.at_least(8, "log-log slope of ‖f^t‖", slope, tol.scaling_slope);
    // Both norms decrease with t: the largest ratio over consecutive values,
    // ordered by increasing t, stays below one.
    let mut order: Vec<usize> = (0..ts.len()).collect();
    order.sort_by(|&a, &b| ts[a].total_cmp(&ts[b]));
    let growth = |v: &[f64]| {
        order
            .windows(2)
            .map(|w| v[w[0]] / v[w[1]])
            .fold(0.0, f64::max)
    };
    rec.below(8, "‖f^t‖ shrinks with t", growth(&f_norms), 1.0);
    rec.below(8, "‖H^t‖ shrinks with t", growth(&h_norms), 1.0);
    rec.trace(scaling);
    rec.result("frame", &frame);
    rec.result("solves", states);
    rec.result("slope", slope);
    rec.result("h_slope", fitted_slope(&ts, &h_norms));
    Ok(())
}
