use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geomcore::{Immersion, NodeJet, ScalarField};
use crate::grid::GridDescriptor;

/// Action-angle Weinstein chart of the product torus:
/// `Φ(θ, y) = (√(a_j² + 2y_j) e^{iθ_j})_j`, with `Φ*ω₀ = Σ dy_j ∧ dθ_j`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WeinsteinChart {
    pub radii: Vec<f64>,
    /// Admissible `|y_j|` is below `delta` for every `j`.
    pub delta: f64,
}

/// Spectral derivatives of `f` up to third order.
///
/// `y[j] = ∂_j f`, `yy[a·n + j] = ∂_a∂_j f`, `yyy[(a·n + b)·n + j] = ∂_a∂_b∂_j f`.
#[derive(Clone, Debug)]
pub struct GraphJets {
    pub y: Vec<Vec<f64>>,
    pub yy: Vec<Vec<f64>>,
    pub yyy: Vec<Vec<f64>>,
}

impl GraphJets {
    pub fn new(f: &ScalarField, third: bool) -> Self {
        let grid = &f.grid;
        let n = grid.dim;
        let y: Vec<Vec<f64>> = (0..n).map(|j| grid.differentiate(&f.values, j)).collect();
        let yy: Vec<Vec<f64>> = (0..n * n)
            .map(|aj| grid.differentiate(&y[aj % n], aj / n))
            .collect();
        let yyy = if third {
            (0..n * n * n)
                .map(|abj| grid.differentiate(&yy[abj % (n * n)], abj / (n * n)))
                .collect()
        } else {
            Vec::new()
        };
        Self { y, yy, yyy }
    }
}

impl WeinsteinChart {
    pub fn new(radii: Vec<f64>, delta: f64) -> Result<Self> {
        if radii.is_empty() || radii.iter().any(|&a| !(a > 0.0)) {
            return Err(Error::InvalidParameter(format!("radii must be positive, got {radii:?}")));
        }
        let bound = radii.iter().fold(f64::INFINITY, |m, a| m.min(a * a)) / 2.0;
        if !(delta > 0.0 && delta < bound) {
            return Err(Error::InvalidParameter(format!(
                "delta must lie in (0, {bound}), got {delta}"
            )));
        }
        Ok(Self { radii, delta })
    }

    /// `δ = 0.4 · min a_j² / 2`.
    pub fn with_default_delta(radii: Vec<f64>) -> Result<Self> {
        let delta = 0.4 * radii.iter().fold(f64::INFINITY, |m, a| m.min(a * a)) / 2.0;
        Self::new(radii, delta)
    }

    pub fn n(&self) -> usize {
        self.radii.len()
    }

    /// `Φ(θ, y)` in interleaved coordinates.
    pub fn point(&self, theta: &[f64], y: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.n());
        for j in 0..self.n() {
            let r = (self.radii[j].powi(2) + 2.0 * y[j]).sqrt();
            let (s, c) = theta[j].sin_cos();
            out.extend([r * c, r * s]);
        }
        out
    }

    pub(crate) fn check(&self, grid: &GridDescriptor, jets: &GraphJets) -> Result<()> {
        if grid.dim != self.n() || grid.quotient.is_some() {
            return Err(Error::GridMismatch);
        }
        let size = jets
            .y
            .iter()
            .flat_map(|v| v.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        if !(size < self.delta) {
            return Err(Error::OneFormTooLarge {
                size,
                delta: self.delta,
            });
        }
        Ok(())
    }

    /// Node coordinates of `θ ↦ Φ(θ, df(θ))`, without derivatives.
    pub(crate) fn graph_points(&self, f: &ScalarField) -> Result<Vec<f64>> {
        let grid = &f.grid;
        let n = self.n();
        let y: Vec<Vec<f64>> = (0..n).map(|j| grid.differentiate(&f.values, j)).collect();
        let jets = GraphJets {
            y,
            yy: Vec::new(),
            yyy: Vec::new(),
        };
        self.check(grid, &jets)?;
        let mut out = Vec::with_capacity(2 * n * grid.node_count());
        for node in 0..grid.node_count() {
            let yn: Vec<f64> = (0..n).map(|j| jets.y[j][node]).collect();
            out.extend(self.point(&grid.node_coords(node), &yn));
        }
        Ok(out)
    }

    /// `θ ↦ Φ(θ, df(θ))` with closed-form chart derivatives.
    pub fn graph_immersion(&self, f: &ScalarField) -> Result<Immersion> {
        let jets = GraphJets::new(f, true);
        self.check(&f.grid, &jets)?;
        let grid = &f.grid;
        let n = self.n();
        let mut coords = Vec::with_capacity(2 * n * grid.node_count());
        let mut node_jets = Vec::with_capacity(grid.node_count());
        for node in 0..grid.node_count() {
            let th = grid.node_coords(node);
            let mut d1 = DMatrix::zeros(2 * n, n);
            let mut d2 = vec![DVector::zeros(2 * n); n * n];
            for j in 0..n {
                let r = (self.radii[j].powi(2) + 2.0 * jets.y[j][node]).sqrt();
                let (r1, r2) = (1.0 / r, -1.0 / (r * r * r));
                let (s, c) = th[j].sin_cos();
                coords.extend([r * c, r * s]);
                // (re, im) · e^{iθ_j}
                let rot = |re: f64, im: f64| (re * c - im * s, re * s + im * c);
                let yy = |a: usize| jets.yy[a * n + j][node];
                let kd = |a: usize| if a == j { 1.0 } else { 0.0 };
                for a in 0..n {
                    let (x, y) = rot(r1 * yy(a), r * kd(a));
                    d1[(2 * j, a)] = x;
                    d1[(2 * j + 1, a)] = y;
                    for b in 0..n {
                        let z = jets.yyy[(a * n + b) * n + j][node];
                        let re = r2 * yy(a) * yy(b) + r1 * z - r * kd(a) * kd(b);
                        let im = r1 * (yy(a) * kd(b) + yy(b) * kd(a));
                        let (x, y) = rot(re, im);
                        d2[a * n + b][2 * j] = x;
                        d2[a * n + b][2 * j + 1] = y;
                    }
                }
            }
            node_jets.push(NodeJet { d1, d2 });
        }
        Immersion::with_jets(grid.clone(), coords, node_jets)
    }
}
