//! Induced geometry of immersed Lagrangians on periodic grids and the
//! Hamiltonian-stationarity residual `d*α_H`.
//!
//! An [`Immersion`] carries node coordinates in `ℝ²ⁿ` together with first
//! and second derivatives along the grid axes. Derivatives are taken
//! spectrally unless the constructor supplies them in closed form; the
//! Weinstein-chart graphs of the reduction pipeline use the latter so that
//! their geometry is exact in the chart and only `f` is differentiated on
//! the grid.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::ambient::CompatibleMetric;
use crate::error::{Error, Result};
pub use crate::grid::{
    gradient, integrate, l2_inner, l2_norm, spectral_derivative, GridDescriptor, MetricField,
    OneFormField, Quotient, ScalarField,
};

/// Largest `|ω₀(∂_a ι, ∂_b ι)|` accepted by [`Immersion::new`].
pub const LAGRANGIAN_TOLERANCE: f64 = 1e-8;

/// First and second derivatives of an immersion at one node.
#[derive(Clone, Debug)]
pub struct NodeJet {
    /// `2n × n`, column `a` is `∂_a ι`.
    pub d1: DMatrix<f64>,
    /// `d2[a·n + b] = ∂_a ∂_b ι`.
    pub d2: Vec<DVector<f64>>,
}

#[derive(Clone, Debug)]
pub struct Immersion {
    pub grid: GridDescriptor,
    /// `2n` ambient coordinates per node.
    pub coords: Vec<f64>,
    pub ambient_dim: usize,
    jets: Vec<NodeJet>,
}

impl Immersion {
    /// Immersion with spectrally computed derivatives, validated for rank
    /// and the Lagrangian condition.
    pub fn new(grid: GridDescriptor, coords: Vec<f64>) -> Result<Self> {
        let imm = Self::spectral(grid, coords)?;
        imm.validate()?;
        Ok(imm)
    }

    /// Immersion with caller-supplied derivatives (validated).
    pub fn with_jets(grid: GridDescriptor, coords: Vec<f64>, jets: Vec<NodeJet>) -> Result<Self> {
        let ambient_dim = 2 * grid.dim;
        if coords.len() != ambient_dim * grid.node_count() {
            return Err(Error::DimensionMismatch {
                expected: ambient_dim * grid.node_count(),
                got: coords.len(),
            });
        }
        if jets.len() != grid.node_count() {
            return Err(Error::DimensionMismatch {
                expected: grid.node_count(),
                got: jets.len(),
            });
        }
        let imm = Self {
            grid,
            coords,
            ambient_dim,
            jets,
        };
        imm.validate()?;
        Ok(imm)
    }

    fn spectral(grid: GridDescriptor, coords: Vec<f64>) -> Result<Self> {
        let n = grid.dim;
        let d = 2 * n;
        let nodes = grid.node_count();
        if coords.len() != d * nodes {
            return Err(Error::DimensionMismatch {
                expected: d * nodes,
                got: coords.len(),
            });
        }
        // Per ambient coordinate: field, first and second derivatives.
        let comp: Vec<Vec<f64>> = (0..d)
            .map(|c| (0..nodes).map(|i| coords[i * d + c]).collect())
            .collect();
        let first: Vec<Vec<Vec<f64>>> = comp
            .iter()
            .map(|f| (0..n).map(|a| grid.differentiate(f, a)).collect())
            .collect();
        let second: Vec<Vec<Vec<f64>>> = first
            .iter()
            .map(|fa| {
                (0..n * n)
                    .map(|ab| grid.differentiate(&fa[ab / n], ab % n))
                    .collect()
            })
            .collect();
        let jets = (0..nodes)
            .map(|i| NodeJet {
                d1: DMatrix::from_fn(d, n, |c, a| first[c][a][i]),
                d2: (0..n * n)
                    .map(|ab| {
                        // Symmetrize the mixed partials.
                        let (a, b) = (ab / n, ab % n);
                        DVector::from_fn(d, |c, _| {
                            0.5 * (second[c][a * n + b][i] + second[c][b * n + a][i])
                        })
                    })
                    .collect(),
            })
            .collect();
        Ok(Self {
            grid,
            coords,
            ambient_dim: d,
            jets,
        })
    }

    fn validate(&self) -> Result<()> {
        let n = self.grid.dim;
        for (node, jet) in self.jets.iter().enumerate() {
            // Full rank iff the Gram matrix is positive definite; compare its
            // determinant with the scale of the columns.
            let gram = jet.d1.tr_mul(&jet.d1);
            let scale = (0..n).map(|a| gram[(a, a)]).product::<f64>();
            if !(gram.determinant() > 1e-20 * scale) {
                return Err(Error::RankDeficient { node });
            }
        }
        let defect = self.lagrangian_defect();
        if !(defect <= LAGRANGIAN_TOLERANCE) {
            return Err(Error::Degenerate(format!(
                "immersion is not Lagrangian (|ι*ω₀| = {defect:.3e})"
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.grid.dim
    }

    pub fn point(&self, node: usize) -> &[f64] {
        &self.coords[node * self.ambient_dim..(node + 1) * self.ambient_dim]
    }

    pub fn jet(&self, node: usize) -> &NodeJet {
        &self.jets[node]
    }

    /// Largest entry of `ι*ω₀` over all nodes.
    pub fn lagrangian_defect(&self) -> f64 {
        let n = self.grid.dim;
        let mut worst: f64 = 0.0;
        for j in &self.jets {
            for a in 0..n {
                for b in a + 1..n {
                    let (u, v) = (j.d1.column(a), j.d1.column(b));
                    let w: f64 = (0..n)
                        .map(|k| u[2 * k] * v[2 * k + 1] - u[2 * k + 1] * v[2 * k])
                        .sum();
                    worst = worst.max(w.abs());
                }
            }
        }
        worst
    }

    /// The immersion `x ↦ p + A·ι(x)`.
    pub fn affine(&self, p: &[f64], a: &DMatrix<f64>) -> Result<Self> {
        let d = self.ambient_dim;
        if p.len() != d || a.nrows() != d || a.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: p.len(),
            });
        }
        let pv = DVector::from_column_slice(p);
        let mut coords = Vec::with_capacity(self.coords.len());
        for node in 0..self.grid.node_count() {
            let x = &pv + a * DVector::from_column_slice(self.point(node));
            coords.extend(x.iter());
        }
        let jets = self
            .jets
            .iter()
            .map(|j| NodeJet {
                d1: a * &j.d1,
                d2: j.d2.iter().map(|v| a * v).collect(),
            })
            .collect();
        Ok(Self {
            grid: self.grid.clone(),
            coords,
            ambient_dim: d,
            jets,
        })
    }

    /// The dilation `t·ι`.
    pub fn scaled(&self, t: f64) -> Self {
        let d = self.ambient_dim;
        self.affine(&vec![0.0; d], &(DMatrix::identity(d, d) * t))
            .expect("matching dimensions")
    }
}

/// Per-node geometric data shared by the public operations.
struct NodeGeometry {
    h: DMatrix<f64>,
    alpha: DVector<f64>,
}

fn node_geometry(imm: &Immersion, g: &CompatibleMetric, node: usize, curvature: bool) -> Result<NodeGeometry> {
    let n = imm.dim();
    let d = imm.ambient_dim;
    let flat = g.is_flat();
    let order = usize::from(curvature && !flat);
    let e = &imm.jet(node).d1;
    let jet = if flat { None } else { Some(g.jet(imm.point(node), order)?) };
    let ge = match &jet {
        Some(j) => &j.value * e,
        None => e.clone(),
    };
    let h = e.tr_mul(&ge);
    let h = (&h + h.transpose()) * 0.5;
    if !curvature {
        return Ok(NodeGeometry {
            h,
            alpha: DVector::zeros(n),
        });
    }
    let hinv = h
        .clone()
        .try_inverse()
        .ok_or(Error::SingularMetric { node })?;

    // Trace of the ambient Hessian of ι: hᵃᵇ(∂_a∂_b ι + Γ(∂_a ι, ∂_b ι)).
    let mut trace = DVector::zeros(d);
    for a in 0..n {
        for b in 0..n {
            trace.axpy(hinv[(a, b)], &imm.jet(node).d2[a * n + b], 1.0);
        }
    }
    if let (Some(jet), true) = (&jet, order > 0) {
        let ginv = jet
            .value
            .clone()
            .try_inverse()
            .ok_or(Error::SingularMetric { node })?;
        // (∂_{∂_a ι} G), one matrix per tangent direction.
        let dg: Vec<DMatrix<f64>> = (0..n)
            .map(|a| {
                let mut m = DMatrix::zeros(d, d);
                for k in 0..d {
                    m += &jet.d1[k] * e[(k, a)];
                }
                m
            })
            .collect();
        let mut gamma = DVector::zeros(d);
        for a in 0..n {
            for b in 0..n {
                let w = hinv[(a, b)];
                let (u, s) = (e.column(a), e.column(b));
                let grad = DVector::from_fn(d, |k, _| u.dot(&(&jet.d1[k] * s)));
                gamma += (&dg[a] * s + &dg[b] * u - grad) * (0.5 * w);
            }
        }
        trace += ginv * gamma;
    }
    // G-normal part.
    let tangential = e * (&hinv * ge.tr_mul(&trace));
    let hvec = trace - tangential;
    // α_a = ω₀(H, ∂_a ι).
    let alpha = DVector::from_fn(n, |a, _| {
        (0..d / 2)
            .map(|k| hvec[2 * k] * e[(2 * k + 1, a)] - hvec[2 * k + 1] * e[(2 * k, a)])
            .sum()
    });
    Ok(NodeGeometry { h, alpha })
}

fn all_geometry(imm: &Immersion, g: &CompatibleMetric, curvature: bool) -> Result<Vec<NodeGeometry>> {
    if g.dim() != imm.ambient_dim {
        return Err(Error::DimensionMismatch {
            expected: imm.ambient_dim,
            got: g.dim(),
        });
    }
    (0..imm.grid.node_count())
        .into_par_iter()
        .map(|node| node_geometry(imm, g, node, curvature))
        .collect()
}

fn metric_field(grid: &GridDescriptor, geo: &[NodeGeometry]) -> Result<MetricField> {
    let entries = geo.iter().flat_map(|x| x.h.transpose().iter().copied().collect::<Vec<_>>()).collect();
    MetricField::new(grid.clone(), entries)
}

/// `h_ab = g(∂_a ι, ∂_b ι)`.
pub fn induced_metric(imm: &Immersion, g: &CompatibleMetric) -> Result<MetricField> {
    metric_field(&imm.grid, &all_geometry(imm, g, false)?)
}

/// `∫_L √det h dx`, halved on a ℤ₂ quotient grid.
pub fn volume(imm: &Immersion, g: &CompatibleMetric) -> Result<f64> {
    let h = induced_metric(imm, g)?;
    let dens = h.volume_density();
    let w = imm.grid.cell_volume() * imm.grid.quotient_factor();
    Ok(dens.values.iter().sum::<f64>() * w)
}

/// `α_H(∂_a) = ω₀(H, ∂_a ι)` in the grid coframe.
pub fn mean_curvature_one_form(imm: &Immersion, g: &CompatibleMetric) -> Result<OneFormField> {
    let geo = all_geometry(imm, g, true)?;
    let comps = geo.iter().flat_map(|x| x.alpha.iter().copied().collect::<Vec<_>>()).collect();
    OneFormField::new(imm.grid.clone(), comps)
}

/// `d*α = −∂_b(hᵃᵇ)α_a − hᵃᵇ∂_bα_a − ½hᵃᵇα_a∂_b ln det h`.
pub fn codifferential(alpha: &OneFormField, h: &MetricField) -> Result<ScalarField> {
    alpha.grid.ensure_same(&h.grid)?;
    let grid = &alpha.grid;
    let n = grid.dim;
    let nodes = grid.node_count();
    let mut hinv = vec![0.0; nodes * n * n];
    let mut logdet = vec![0.0; nodes];
    for node in 0..nodes {
        let m = h.matrix(node);
        let inv = m
            .clone()
            .try_inverse()
            .ok_or(Error::SingularMetric { node })?;
        logdet[node] = m.determinant().ln();
        hinv[node * n * n..(node + 1) * n * n].copy_from_slice(inv.transpose().as_slice());
    }
    let comp = |a: usize| -> Vec<f64> { (0..nodes).map(|i| alpha.components[i * n + a]).collect() };
    let inv_entry = |a: usize, b: usize| -> Vec<f64> { (0..nodes).map(|i| hinv[i * n * n + a * n + b]).collect() };
    let alphas: Vec<Vec<f64>> = (0..n).map(comp).collect();
    let mut out = vec![0.0; nodes];
    for b in 0..n {
        let dlog = grid.differentiate(&logdet, b);
        for a in 0..n {
            let hab = inv_entry(a, b);
            let dhab = grid.differentiate(&hab, b);
            let dalpha = grid.differentiate(&alphas[a], b);
            for i in 0..nodes {
                out[i] -= dhab[i] * alphas[a][i]
                    + hab[i] * dalpha[i]
                    + 0.5 * hab[i] * alphas[a][i] * dlog[i];
            }
        }
    }
    ScalarField::new(grid.clone(), out)
}

/// Induced metric and mean-curvature one-form from one pass over the nodes.
pub fn induced_geometry(imm: &Immersion, g: &CompatibleMetric) -> Result<(MetricField, OneFormField)> {
    let geo = all_geometry(imm, g, true)?;
    let h = metric_field(&imm.grid, &geo)?;
    let comps = geo.iter().flat_map(|x| x.alpha.iter().copied().collect::<Vec<_>>()).collect();
    Ok((h, OneFormField::new(imm.grid.clone(), comps)?))
}

/// `d*α_H` computed with the induced metric; zero exactly at discretely
/// Hamiltonian stationary immersions.
pub fn hs_residual(imm: &Immersion, g: &CompatibleMetric) -> Result<ScalarField> {
    let (h, alpha) = induced_geometry(imm, g)?;
    codifferential(&alpha, &h)
}

/// `‖d*α_H‖ / ‖α_H‖` in `L²(dV_h)`, the scale-free stationarity measure.
pub fn relative_hs_residual(imm: &Immersion, g: &CompatibleMetric) -> Result<f64> {
    let (h, alpha) = induced_geometry(imm, g)?;
    let res = codifferential(&alpha, &h)?;
    let dvol = h.volume_density();
    let n = imm.dim();
    let mut alpha_sq = vec![0.0; imm.grid.node_count()];
    for (node, slot) in alpha_sq.iter_mut().enumerate() {
        let inv = h.matrix(node).try_inverse().ok_or(Error::SingularMetric { node })?;
        let a = DVector::from_column_slice(alpha.at(node));
        debug_assert_eq!(a.len(), n);
        *slot = (a.transpose() * inv * a)[(0, 0)];
    }
    let alpha_norm = integrate(&ScalarField::new(imm.grid.clone(), alpha_sq)?, &dvol)?.sqrt();
    Ok(l2_norm(&res, &dvol)? / alpha_norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle_product(radii: &[f64], size: usize) -> Immersion {
        let grid = GridDescriptor::angular(radii.len(), size).unwrap();
        let mut coords = Vec::new();
        for node in 0..grid.node_count() {
            let th = grid.node_coords(node);
            for (j, a) in radii.iter().enumerate() {
                coords.push(a * th[j].cos());
                coords.push(a * th[j].sin());
            }
        }
        Immersion::new(grid, coords).unwrap()
    }

    #[test]
    fn circle_has_unit_negative_mean_curvature_form() {
        let imm = circle_product(&[0.7], 16);
        let alpha = mean_curvature_one_form(&imm, &CompatibleMetric::flat(1)).unwrap();
        assert!(alpha.components.iter().all(|&c| (c + 1.0).abs() < 1e-12));
    }

    #[test]
    fn non_lagrangian_maps_are_rejected() {
        let grid = GridDescriptor::angular(2, 8).unwrap();
        // (θ₁, θ₂) ↦ (cos θ₁, θ-independent, sin θ₁ ... ) mixes x₁ with y₂.
        let mut coords = Vec::new();
        for node in 0..grid.node_count() {
            let th = grid.node_coords(node);
            coords.extend([th[0].cos(), th[1].cos(), th[0].sin(), th[1].sin()]);
        }
        assert!(matches!(Immersion::new(grid, coords), Err(Error::Degenerate(_))));
    }

    #[test]
    fn constant_map_is_rank_deficient() {
        let grid = GridDescriptor::angular(1, 8).unwrap();
        let coords = vec![1.0; 2 * 8];
        assert!(matches!(
            Immersion::new(grid, coords),
            Err(Error::RankDeficient { .. })
        ));
    }
}
