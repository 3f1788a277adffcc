//! Discrete volume of Weinstein graphs and its exact `L²` gradient.
//!
//! With `y_j = D_j f`, `Y_aj = D_a D_j f` (`D` the antisymmetric spectral
//! derivative), the graph has `z_j = r_j e^{iθ_j}`, `r_j = √(a_j² + 2y_j)` and
//! `∂_a z_j = (r_j' Y_aj + i r_j δ_aj) e^{iθ_j}`. The volume
//! `Σ √det h ΔA` is differentiated through `z` and `∂z` by hand; the
//! transposes of `D_j` and `D_a D_j` then carry the node sensitivities back
//! to `f`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::chart::{GraphJets, WeinsteinChart};
use crate::ambient::CompatibleMetric;
use crate::error::{Error, Result};
use crate::fourier::FourierBasis;
use crate::geomcore::ScalarField;

/// Node sensitivities `∂F/∂y_j` and `∂F/∂Y_aj`.
struct NodeTerms {
    volume: f64,
    dy: Vec<f64>,
    dyy: Vec<f64>,
}

fn node_terms(
    chart: &WeinsteinChart,
    g: &CompatibleMetric,
    jets: &GraphJets,
    theta: &[f64],
    node: usize,
    cell: f64,
    want_gradient: bool,
) -> Result<NodeTerms> {
    let n = chart.n();
    let d = 2 * n;
    let mut z = vec![0.0; d];
    let mut d1 = DMatrix::zeros(d, n);
    let mut rr = vec![(0.0, 0.0); n];
    let mut cs = vec![(0.0, 0.0); n];
    for j in 0..n {
        let r = (chart.radii[j].powi(2) + 2.0 * jets.y[j][node]).sqrt();
        let (s, c) = theta[j].sin_cos();
        rr[j] = (1.0 / r, -1.0 / (r * r * r));
        cs[j] = (c, s);
        z[2 * j] = r * c;
        z[2 * j + 1] = r * s;
        for a in 0..n {
            let re = jets.yy[a * n + j][node] / r;
            let im = if a == j { r } else { 0.0 };
            d1[(2 * j, a)] = re * c - im * s;
            d1[(2 * j + 1, a)] = re * s + im * c;
        }
    }
    let order = usize::from(want_gradient && !g.is_flat());
    let jet = g.jet(&z, order)?;
    let ge = &jet.value * &d1;
    let h = d1.tr_mul(&ge);
    let det = h.determinant();
    if !(det > 0.0) {
        return Err(Error::SingularMetric { node });
    }
    let sq = det.sqrt();
    let volume = sq * cell;
    if !want_gradient {
        return Ok(NodeTerms {
            volume,
            dy: Vec::new(),
            dyy: Vec::new(),
        });
    }
    let hinv = h.try_inverse().ok_or(Error::SingularMetric { node })?;
    // dVol = Σ_a V_a·δ(∂_a z) + E·δz.
    let m = hinv * (0.5 * sq * cell);
    let v = (&ge * &m) * 2.0;
    let mut e = vec![0.0; d];
    if order > 0 {
        let md = &d1 * &m;
        for (k, ek) in e.iter_mut().enumerate() {
            // Σ_ab M_ab J_aᵀ ∂_k G J_b = tr(∂_k G · J M Jᵀ).
            *ek = (&jet.d1[k] * &md).component_mul(&d1).sum();
        }
    }
    let mut dy = vec![0.0; n];
    let mut dyy = vec![0.0; n * n];
    for j in 0..n {
        let (r1, r2) = rr[j];
        let (c, s) = cs[j];
        let rot = |re: f64, im: f64| (re * c - im * s, re * s + im * c);
        let dot = |x: f64, y: f64, (u, w): (f64, f64)| x * u + y * w;
        let mut acc = dot(e[2 * j], e[2 * j + 1], rot(r1, 0.0));
        for a in 0..n {
            let (vx, vy) = (v[(2 * j, a)], v[(2 * j + 1, a)]);
            let kd = if a == j { r1 } else { 0.0 };
            acc += dot(vx, vy, rot(r2 * jets.yy[a * n + j][node], kd));
            dyy[a * n + j] = dot(vx, vy, rot(r1, 0.0));
        }
        dy[j] = acc;
    }
    Ok(NodeTerms { volume, dy, dyy })
}

/// Volume of `Φ(Γ_{df})` in the metric `g` and, optionally, the gradient of
/// that volume with respect to the basis coefficients of `f`.
pub(crate) fn volume_and_gradient(
    chart: &WeinsteinChart,
    g: &CompatibleMetric,
    basis: &FourierBasis,
    f: &ScalarField,
    want_gradient: bool,
) -> Result<(f64, Option<DVector<f64>>)> {
    let grid = &f.grid;
    let jets = GraphJets::new(f, false);
    chart.check(grid, &jets)?;
    let n = chart.n();
    let cell = grid.cell_volume() * grid.quotient_factor();
    let terms: Vec<NodeTerms> = (0..grid.node_count())
        .into_par_iter()
        .map(|node| node_terms(chart, g, &jets, &grid.node_coords(node), node, cell, want_gradient))
        .collect::<Result<_>>()?;
    let volume = terms.iter().map(|t| t.volume).sum();
    if !want_gradient {
        return Ok((volume, None));
    }
    let nodes = grid.node_count();
    let mut grad = vec![0.0; nodes];
    for j in 0..n {
        // Dᵀ = −D and (D_a D_j)ᵀ = D_j D_a.
        let a_field: Vec<f64> = terms.iter().map(|t| t.dy[j]).collect();
        let mut inner = vec![0.0; nodes];
        for a in 0..n {
            let b_field: Vec<f64> = terms.iter().map(|t| t.dyy[a * n + j]).collect();
            let da = grid.differentiate(&b_field, a);
            for (acc, v) in inner.iter_mut().zip(&da) {
                *acc += v;
            }
        }
        for (acc, x) in inner.iter_mut().zip(&a_field) {
            *acc -= x;
        }
        // −D_j A_j + D_j Σ_a D_a B_aj.
        let dj = grid.differentiate(&inner, j);
        for (acc, v) in grad.iter_mut().zip(&dj) {
            *acc += v;
        }
    }
    let coeffs = basis.synthesis_matrix().tr_mul(&DVector::from_vec(grad));
    Ok((volume, Some(coeffs)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ambient::{ChartFamily, FrameState};
    use crate::geomcore::{volume, GridDescriptor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(size: usize, flat: bool) -> (WeinsteinChart, CompatibleMetric, FourierBasis) {
        let chart = WeinsteinChart::with_default_delta(vec![1.0, 1.3]).unwrap();
        let grid = GridDescriptor::angular(2, size).unwrap();
        let basis = FourierBasis::new(&grid, 1.3, None).unwrap();
        let g = if flat {
            CompatibleMetric::flat(2)
        } else {
            let family = ChartFamily::new(CompatibleMetric::shear(2, 0.05, 7).unwrap(), 2.0, 0.5).unwrap();
            let frame = FrameState::random(&family.metric, 3, 0.4).unwrap();
            family.chart_metric(&frame, 0.1).unwrap()
        };
        (chart, g, basis)
    }

    fn random_coeffs(basis: &FourierBasis, seed: u64, scale: f64) -> DVector<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DVector::from_fn(basis.len(), |m, _| {
            let k2: i64 = basis.modes[m].wavenumber.iter().map(|k| k * k).sum();
            scale * rng.gen_range(-1.0..1.0) / (1.0 + k2 as f64).powi(2)
        })
    }

    #[test]
    fn volume_matches_geomcore() {
        for flat in [true, false] {
            let (chart, g, basis) = setup(16, flat);
            let f = basis.synthesize(&random_coeffs(&basis, 1, 0.05));
            let (v, _) = volume_and_gradient(&chart, &g, &basis, &f, false).unwrap();
            let reference = volume(&chart.graph_immersion(&f).unwrap(), &g).unwrap();
            assert!((v - reference).abs() < 1e-12 * reference, "{v} vs {reference}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for flat in [true, false] {
            let (chart, g, basis) = setup(16, flat);
            let c = random_coeffs(&basis, 2, 0.05);
            let f = basis.synthesize(&c);
            let (_, grad) = volume_and_gradient(&chart, &g, &basis, &f, true).unwrap();
            let grad = grad.unwrap();
            for seed in 0..5 {
                let dir = random_coeffs(&basis, 10 + seed, 1.0);
                let eval = |s: f64| {
                    let fs = basis.synthesize(&(&c + &dir * s));
                    volume_and_gradient(&chart, &g, &basis, &fs, false).unwrap().0
                };
                let h = 1e-3;
                let fd = (8.0 * (eval(h) - eval(-h)) - (eval(2.0 * h) - eval(-2.0 * h))) / (12.0 * h);
                let exact = grad.dot(&dir);
                assert!((fd - exact).abs() <= 1e-7 * exact.abs().max(1e-3), "{fd} vs {exact}");
            }
        }
    }
}
