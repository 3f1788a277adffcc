use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::metrics::{CompatibleMetric, Domain, MatrixJet, MetricEvaluator};
use super::{complex_structure, complex_to_real, omega0, sqrt_and_inv_sqrt};
use crate::error::{Error, Result};

/// `G(p)^{−1/2}`: a unitary frame at `p` that depends smoothly on `p`.
///
/// For compatible `G` (symmetric and symplectic) the inverse square root is
/// again symplectic, so this is a section of the unitary frame bundle.
pub fn canonical_section(g: &CompatibleMetric, p: &[f64]) -> Result<DMatrix<f64>> {
    let (_, inv_root) = sqrt_and_inv_sqrt(&g.value(p)?).ok_or(Error::SingularMetric { node: 0 })?;
    Ok(inv_root)
}

/// Frame `υ` at `p` with `υᵀG(p)υ = I` and `υᵀΩ₀υ = Ω₀`, built by complex
/// Gram–Schmidt against `J_p = −G(p)⁻¹Ω₀` from a seeded random start.
///
/// Columns are ordered `(e₁, Je₁, e₂, Je₂, …)`.
pub fn unitary_frame(g: &CompatibleMetric, p: &[f64], seed: u64) -> Result<DMatrix<f64>> {
    let gm = g.value(p)?;
    let dim = gm.nrows();
    let j = complex_structure(&gm).ok_or(Error::SingularMetric { node: 0 })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(dim);
    let inner = |u: &DVector<f64>, v: &DVector<f64>| (u.transpose() * &gm * v)[(0, 0)];
    while cols.len() < dim {
        let mut v = DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0));
        for _ in 0..2 {
            for c in &cols {
                v -= c * inner(c, &v);
            }
        }
        let norm = inner(&v, &v).sqrt();
        if !(norm > 1e-8) {
            continue;
        }
        v /= norm;
        let jv = &j * &v;
        cols.push(v);
        cols.push(jv);
    }
    Ok(DMatrix::from_columns(&cols))
}

/// Real matrix of the anti-Hermitian `X(ξ)`: `X_jj = iξ_j` for the first `n`
/// coordinates, then `X_jk = ξ_re + iξ_im`, `X_kj = −ξ_re + iξ_im` for each
/// pair `j < k`.
pub fn frame_generator(xi: &[f64], n: usize) -> DMatrix<f64> {
    let mut re = DMatrix::zeros(n, n);
    let mut im = DMatrix::zeros(n, n);
    for j in 0..n {
        im[(j, j)] = xi[j];
    }
    let mut idx = n;
    for j in 0..n {
        for k in j + 1..n {
            re[(j, k)] = xi[idx];
            re[(k, j)] = -xi[idx];
            im[(j, k)] = xi[idx + 1];
            im[(k, j)] = xi[idx + 1];
            idx += 2;
        }
    }
    complex_to_real(&re, &im)
}

/// A point of the ambient torus together with a unitary frame there.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrameState {
    pub p: Vec<f64>,
    pub xi: Vec<f64>,
    #[serde(serialize_with = "serialize_matrix")]
    pub base: DMatrix<f64>,
}

fn serialize_matrix<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for r in 0..m.nrows() {
        let row: Vec<f64> = m.row(r).iter().copied().collect();
        seq.serialize_element(&row)?;
    }
    seq.end()
}

impl FrameState {
    pub fn new(g: &CompatibleMetric, p: Vec<f64>, base: DMatrix<f64>, xi: Vec<f64>) -> Result<Self> {
        let dim = g.dim();
        let n = dim / 2;
        if p.len() != dim || base.nrows() != dim || base.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: p.len(),
            });
        }
        if xi.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                got: xi.len(),
            });
        }
        let s = Self { p, xi, base };
        let (metric_defect, symplectic_defect) = s.defects(g)?;
        if metric_defect > 1e-10 || symplectic_defect > 1e-10 {
            return Err(Error::Degenerate(format!(
                "not a unitary frame: |υᵀGυ − I| = {metric_defect:.2e}, |υᵀΩ₀υ − Ω₀| = {symplectic_defect:.2e}"
            )));
        }
        Ok(s)
    }

    /// Frame `G(p)^{−1/2}` at `p` with `ξ = 0`.
    pub fn at_point(g: &CompatibleMetric, p: Vec<f64>) -> Result<Self> {
        let n = g.dim() / 2;
        let base = canonical_section(g, &p)?;
        Self::new(g, p, base, vec![0.0; n * n])
    }

    /// Seeded random point of `[0, 2π)²ⁿ` and random `ξ` of size ≤ `xi_scale`.
    pub fn random(g: &CompatibleMetric, seed: u64, xi_scale: f64) -> Result<Self> {
        let dim = g.dim();
        let n = dim / 2;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p: Vec<f64> = (0..dim)
            .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
            .collect();
        let xi: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-xi_scale..xi_scale)).collect();
        let base = canonical_section(g, &p)?;
        Self::new(g, p, base, xi)
    }

    pub fn n(&self) -> usize {
        self.p.len() / 2
    }

    /// Realized frame `υ = base·exp(X(ξ))`.
    pub fn frame(&self) -> DMatrix<f64> {
        &self.base * frame_generator(&self.xi, self.n()).exp()
    }

    /// `(|υᵀGυ − I|, |υᵀΩ₀υ − Ω₀|)` in max norm.
    pub fn defects(&self, g: &CompatibleMetric) -> Result<(f64, f64)> {
        let u = self.frame();
        let gm = g.value(&self.p)?;
        let dim = u.nrows();
        let om = omega0(dim);
        Ok((
            (u.transpose() * gm * &u - DMatrix::identity(dim, dim)).amax(),
            (u.transpose() * &om * &u - om).amax(),
        ))
    }

    /// Absorb `exp(X(ξ))` into the base frame.
    pub fn recentered(&self) -> Self {
        Self {
            p: self.p.clone(),
            xi: vec![0.0; self.xi.len()],
            base: self.frame(),
        }
    }

    pub fn recenter_if_needed(&self) -> Self {
        let norm = self.xi.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1.0 {
            self.recentered()
        } else {
            self.clone()
        }
    }

    /// Right action `υ ↦ υ·γ` of a unitary `γ` in its real representation.
    pub fn right_multiply(&self, gamma: &DMatrix<f64>) -> Self {
        Self {
            p: self.p.clone(),
            xi: vec![0.0; self.xi.len()],
            base: self.frame() * gamma,
        }
    }

    /// Local coordinates about this frame: `x = (δp, δξ)` maps to the frame
    /// `G(p+δp)^{−1/2}G(p)^{1/2}·υ·exp(X(δξ))` at `p + δp`. The first `n`
    /// entries of `δξ` generate the diagonal torus acting on the right.
    pub fn displaced(&self, g: &CompatibleMetric, x: &[f64]) -> Result<Self> {
        let dim = self.p.len();
        let n = self.n();
        if x.len() != dim + n * n {
            return Err(Error::DimensionMismatch {
                expected: dim + n * n,
                got: x.len(),
            });
        }
        let mut frame = self.frame();
        let p: Vec<f64> = self.p.iter().zip(x).map(|(a, b)| a + b).collect();
        if x[..dim].iter().any(|&v| v != 0.0) {
            let (root, _) = sqrt_and_inv_sqrt(&g.value(&self.p)?).ok_or(Error::SingularMetric { node: 0 })?;
            frame = canonical_section(g, &p)? * root * frame;
        }
        let base = frame * frame_generator(&x[dim..], n).exp();
        Ok(Self {
            p,
            xi: vec![0.0; n * n],
            base,
        })
    }

    /// Number of local coordinates `2n + n²`.
    pub fn coordinate_count(&self) -> usize {
        2 * self.n() + self.n() * self.n()
    }
}

/// Affine Darboux charts `Υ_{p,υ}(z) = p + υz` on the flat torus.
#[derive(Clone, Debug)]
pub struct ChartFamily {
    pub metric: CompatibleMetric,
    /// Radius of the model ball `B_R` in chart coordinates.
    pub radius: f64,
    /// Largest admissible ambient radius `t·R`.
    pub epsilon: f64,
}

impl ChartFamily {
    pub fn new(metric: CompatibleMetric, radius: f64, epsilon: f64) -> Result<Self> {
        if !(radius > 0.0 && epsilon > 0.0) {
            return Err(Error::InvalidParameter("chart radius and epsilon must be positive".into()));
        }
        Ok(Self {
            metric,
            radius,
            epsilon,
        })
    }

    pub fn point(&self, frame: &FrameState, t: f64, z: &[f64]) -> Vec<f64> {
        let u = frame.frame();
        let zt = &u * DVector::from_column_slice(z) * t;
        frame.p.iter().zip(zt.iter()).map(|(a, b)| a + b).collect()
    }

    /// Rescaled pulled-back metric `g^t(z) = υᵀG(p + tυz)υ` on `B_R`.
    pub fn chart_metric(&self, frame: &FrameState, t: f64) -> Result<CompatibleMetric> {
        if !(t > 0.0) {
            return Err(Error::InvalidParameter(format!("scale t = {t} must be positive")));
        }
        if t * self.radius > self.epsilon {
            return Err(Error::ChartDomain(format!(
                "t·R = {:.3e} exceeds epsilon = {:.3e}",
                t * self.radius,
                self.epsilon
            )));
        }
        let eval = ChartMetric {
            metric: self.metric.clone(),
            p: frame.p.clone(),
            frame: frame.frame(),
            t,
        };
        // Compatibility follows from υ being symplectic; no resampling needed.
        Ok(CompatibleMetric::new_unchecked(
            Arc::new(eval),
            Domain::Ball {
                radius: self.radius,
            },
        ))
    }
}

/// Evaluator of `z ↦ υᵀG(p + tυz)υ`, with `∂ᵏ` carrying the factor `tᵏ`.
#[derive(Clone, Debug)]
pub struct ChartMetric {
    metric: CompatibleMetric,
    p: Vec<f64>,
    frame: DMatrix<f64>,
    t: f64,
}

impl MetricEvaluator for ChartMetric {
    fn dim(&self) -> usize {
        self.p.len()
    }

    fn is_flat(&self) -> bool {
        self.metric.is_flat()
    }

    fn jet(&self, z: &[f64], order: usize) -> Result<MatrixJet> {
        let d = self.dim();
        let zt = &self.frame * DVector::from_column_slice(z) * self.t;
        let x: Vec<f64> = self.p.iter().zip(zt.iter()).map(|(a, b)| a + b).collect();
        let g = self.metric.jet(&x, order)?;
        let u = &self.frame;
        let t = self.t;
        let mut out = MatrixJet::constant(g.value.clone(), d, order);
        // Chain rule: ∂/∂z_k = t Σᵢ υᵢₖ ∂/∂xᵢ.
        if order >= 1 {
            for k in 0..d {
                let mut m = DMatrix::zeros(d, d);
                for i in 0..d {
                    m += &g.d1[i] * (t * u[(i, k)]);
                }
                out.d1[k] = m;
            }
        }
        if order >= 2 {
            for k in 0..d {
                for l in 0..d {
                    let mut m = DMatrix::zeros(d, d);
                    for i in 0..d {
                        for j in 0..d {
                            m += g.d2(i, j) * (t * t * u[(i, k)] * u[(j, l)]);
                        }
                    }
                    out.d2[k * d + l] = m;
                }
            }
        }
        if order >= 3 {
            for k in 0..d {
                for l in 0..d {
                    for m_ in 0..d {
                        let mut m = DMatrix::zeros(d, d);
                        for i in 0..d {
                            for j in 0..d {
                                for h in 0..d {
                                    let c = t * t * t * u[(i, k)] * u[(j, l)] * u[(h, m_)];
                                    m += g.d3(i, j, h) * c;
                                }
                            }
                        }
                        out.d3[(k * d + l) * d + m_] = m;
                    }
                }
            }
        }
        Ok(out.congruence(u))
    }
}

/// Sample points of a ball together with metric values there.
#[derive(Clone, Debug)]
pub struct BallSamples {
    pub points: Vec<Vec<f64>>,
    pub metrics: Vec<DMatrix<f64>>,
}

impl BallSamples {
    /// Points of the cubic lattice with `per_axis` nodes on `[−R, R]` that lie
    /// in the closed ball `B_R`.
    pub fn lattice(dim: usize, radius: f64, per_axis: usize) -> Vec<Vec<f64>> {
        let per_axis = per_axis.max(2);
        let total = per_axis.pow(dim as u32);
        let mut pts = Vec::new();
        for mut idx in 0..total {
            let mut z = vec![0.0; dim];
            for c in z.iter_mut() {
                let i = idx % per_axis;
                idx /= per_axis;
                *c = -radius + 2.0 * radius * i as f64 / (per_axis - 1) as f64;
            }
            if z.iter().map(|v| v * v).sum::<f64>() <= radius * radius * (1.0 + 1e-12) {
                pts.push(z);
            }
        }
        pts
    }
}

/// `g^t_{p,υ}` sampled at `points` of the model ball.
pub fn chart_pullback_metric(
    family: &ChartFamily,
    frame: &FrameState,
    t: f64,
    points: &[Vec<f64>],
) -> Result<BallSamples> {
    let g = family.chart_metric(frame, t)?;
    let metrics = points
        .iter()
        .map(|z| g.value(z))
        .collect::<Result<Vec<_>>>()?;
    Ok(BallSamples {
        points: points.to_vec(),
        metrics,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct EstimateRow {
    pub t: f64,
    pub k: usize,
    /// `sup ‖g^t − g₀‖` for `k = 0`, `sup ‖∂ᵏg^t‖` otherwise (Frobenius norm
    /// of the full derivative tensor).
    pub sup_norm: f64,
    /// `sup_norm / tᵏ` (`/ t` for `k = 0`).
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EstimateReport {
    pub rows: Vec<EstimateRow>,
    /// Fitted constant `C_k`: the largest ratio across the `t` list.
    pub constants: Vec<f64>,
    /// Largest over smallest ratio across the `t` list (1 when all vanish).
    pub spread: Vec<f64>,
    pub bounded: Vec<bool>,
}

/// Sup-norms of `g^t − g₀` and `∂ᵏg^t` over frames and ball samples, and
/// their scaled ratios across the `t` list.
pub fn estimate_sweep(
    family: &ChartFamily,
    frames: &[FrameState],
    ts: &[f64],
    k_max: usize,
    points: &[Vec<f64>],
) -> Result<EstimateReport> {
    let mut rows = Vec::new();
    for &t in ts {
        let norms: Vec<Vec<f64>> = frames
            .par_iter()
            .map(|frame| -> Result<Vec<f64>> {
                let g = family.chart_metric(frame, t)?;
                let mut sup = vec![0.0_f64; k_max + 1];
                for z in points {
                    let jet = g.jet(z, k_max)?;
                    let dim = jet.value.nrows();
                    sup[0] = sup[0].max((&jet.value - DMatrix::identity(dim, dim)).norm());
                    let tensors = [&jet.d1, &jet.d2, &jet.d3];
                    for k in 1..=k_max {
                        let s: f64 = tensors[k - 1].iter().map(|m| m.norm_squared()).sum();
                        sup[k] = sup[k].max(s.sqrt());
                    }
                }
                Ok(sup)
            })
            .collect::<Result<_>>()?;
        for k in 0..=k_max {
            let sup = norms.iter().map(|v| v[k]).fold(0.0, f64::max);
            let scale = if k == 0 { t } else { t.powi(k as i32) };
            rows.push(EstimateRow {
                t,
                k,
                sup_norm: sup,
                ratio: sup / scale,
            });
        }
    }
    let mut constants = Vec::new();
    let mut spread = Vec::new();
    let mut bounded = Vec::new();
    for k in 0..=k_max {
        let ratios: Vec<f64> = rows.iter().filter(|r| r.k == k).map(|r| r.ratio).collect();
        let hi = ratios.iter().copied().fold(0.0, f64::max);
        let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let s = if hi == 0.0 { 1.0 } else { hi / lo };
        constants.push(hi);
        spread.push(s);
        bounded.push(s <= 2.0);
    }
    Ok(EstimateReport {
        rows,
        constants,
        spread,
        bounded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shear() -> CompatibleMetric {
        CompatibleMetric::shear(2, 0.05, 7).unwrap()
    }

    #[test]
    fn unitary_frames_satisfy_both_identities() {
        for seed in 0..50u64 {
            let g = CompatibleMetric::shear(2, 0.2, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let p: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..6.0)).collect();
            let u = unitary_frame(&g, &p, seed).unwrap();
            let gm = g.value(&p).unwrap();
            let om = omega0(4);
            assert!((u.transpose() * gm * &u - DMatrix::identity(4, 4)).amax() < 1e-10);
            assert!((u.transpose() * &om * &u - om).amax() < 1e-10);
        }
    }

    #[test]
    fn flat_frames_are_orthogonal_and_symplectic() {
        let g = CompatibleMetric::flat(2);
        let u = unitary_frame(&g, &[0.0; 4], 3).unwrap();
        assert!((u.transpose() * &u - DMatrix::identity(4, 4)).amax() < 1e-12);
        // Commutes with J₀ = −Ω₀, i.e. complex linear.
        let j0 = -omega0(4);
        assert!((&j0 * &u - &u * &j0).amax() < 1e-12);
    }

    #[test]
    fn unitary_group_acts_on_frames() {
        let g = shear();
        let f = FrameState::random(&g, 5, 0.5).unwrap();
        let gamma = frame_generator(&[0.3, -0.2, 0.7, 0.1], 2).exp();
        let moved = f.right_multiply(&gamma);
        let (a, b) = moved.defects(&g).unwrap();
        assert!(a < 1e-10 && b < 1e-10);
        let back = moved.right_multiply(&gamma.transpose());
        assert!((back.frame() - f.frame()).amax() < 1e-12);
    }

    #[test]
    fn displaced_frames_stay_unitary() {
        let g = shear();
        let f = FrameState::random(&g, 9, 0.5).unwrap();
        let d = f
            .displaced(&g, &[0.1, -0.2, 0.05, 0.3, 0.2, -0.1, 0.4, 0.25])
            .unwrap();
        let (a, b) = d.defects(&g).unwrap();
        assert!(a < 1e-10 && b < 1e-10);
        let same = f.displaced(&g, &[0.0; 8]).unwrap();
        assert!((same.frame() - f.frame()).amax() < 1e-12);
    }

    #[test]
    fn flat_chart_metric_is_euclidean() {
        let family = ChartFamily::new(CompatibleMetric::flat(2), 2.0, 1.0).unwrap();
        let g = CompatibleMetric::flat(2);
        let f = FrameState::new(&g, vec![0.3; 4], unitary_frame(&g, &[0.0; 4], 1).unwrap(), vec![0.0; 4]).unwrap();
        let pts = BallSamples::lattice(4, 2.0, 3);
        for t in [0.1, 0.01] {
            let s = chart_pullback_metric(&family, &f, t, &pts).unwrap();
            for m in &s.metrics {
                assert!((m - DMatrix::identity(4, 4)).amax() < 1e-14);
            }
        }
    }

    #[test]
    fn chart_metric_is_euclidean_at_origin() {
        let family = ChartFamily::new(shear(), 2.0, 1.0).unwrap();
        let f = FrameState::random(&family.metric, 2, 0.5).unwrap();
        let g = family.chart_metric(&f, 0.05).unwrap();
        assert!((g.value(&[0.0; 4]).unwrap() - DMatrix::identity(4, 4)).amax() < 1e-12);
    }

    #[test]
    fn chart_rejects_large_scale() {
        let family = ChartFamily::new(shear(), 2.0, 0.5).unwrap();
        let f = FrameState::random(&family.metric, 2, 0.5).unwrap();
        assert!(family.chart_metric(&f, 0.3).is_err());
    }

    #[test]
    fn chart_jets_match_finite_differences() {
        let family = ChartFamily::new(shear(), 2.0, 1.0).unwrap();
        let f = FrameState::random(&family.metric, 4, 0.3).unwrap();
        let g = family.chart_metric(&f, 0.1).unwrap();
        let z = [0.3, -0.4, 0.2, 0.5];
        let jet = g.jet(&z, 2).unwrap();
        let h = 1e-5;
        for k in 0..4 {
            let mut a = z.to_vec();
            let mut b = z.to_vec();
            a[k] += h;
            b[k] -= h;
            let (ja, jb) = (g.jet(&a, 1).unwrap(), g.jet(&b, 1).unwrap());
            assert!(((&ja.value - &jb.value) / (2.0 * h) - &jet.d1[k]).amax() < 1e-9);
            for l in 0..4 {
                assert!(((&ja.d1[l] - &jb.d1[l]) / (2.0 * h) - jet.d2(k, l)).amax() < 1e-9);
            }
        }
    }

    #[test]
    fn chart_family_is_unitary_equivariant() {
        let family = ChartFamily::new(shear(), 2.0, 1.0).unwrap();
        let f = FrameState::random(&family.metric, 8, 0.3).unwrap();
        let gamma = frame_generator(&[0.4, -0.3, 0.2, 0.6], 2).exp();
        let fg = f.right_multiply(&gamma);
        let t = 0.07;
        let g1 = family.chart_metric(&f, t).unwrap();
        let g2 = family.chart_metric(&fg, t).unwrap();
        let z = DVector::from_column_slice(&[0.5, 0.1, -0.3, 0.2]);
        let gz = &gamma * &z;
        let lhs = g2.value(z.as_slice()).unwrap();
        let rhs = gamma.transpose() * g1.value(gz.as_slice()).unwrap() * &gamma;
        assert!((lhs - rhs).amax() < 1e-10);
    }

    #[test]
    fn flat_estimates_vanish() {
        let family = ChartFamily::new(CompatibleMetric::flat(2), 1.0, 1.0).unwrap();
        let frames = vec![FrameState::at_point(&family.metric, vec![0.0; 4]).unwrap()];
        let pts = BallSamples::lattice(4, 1.0, 3);
        let r = estimate_sweep(&family, &frames, &[0.1, 0.05], 2, &pts).unwrap();
        assert!(r.constants.iter().all(|&c| c == 0.0));
        assert!(r.bounded.iter().all(|&b| b));
    }

    #[test]
    fn perturbed_estimates_scale() {
        let family = ChartFamily::new(shear(), 1.0, 1.0).unwrap();
        let frames: Vec<_> = (0..3)
            .map(|s| FrameState::random(&family.metric, s, 0.5).unwrap())
            .collect();
        let pts = BallSamples::lattice(4, 1.0, 3);
        let r = estimate_sweep(&family, &frames, &[0.1, 0.05, 0.025], 2, &pts).unwrap();
        for k in 0..=2 {
            assert!(r.bounded[k], "k = {k}: spread {}", r.spread[k]);
            assert!(r.constants[k] > 0.0);
        }
    }
}
