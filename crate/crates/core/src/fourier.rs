//! Real trigonometric basis of band-limited grid fields.
//!
//! Basis functions are `1`, `√2 cos(k·x)` and `√2 sin(k·x)`, normalised in
//! `L²(w·dx)` for a constant density `w`. Nyquist wavenumbers are excluded:
//! the spectral derivative annihilates them, so operators built from
//! derivatives would otherwise acquire spurious kernel vectors. On a grid
//! with a ℤ₂ quotient only modes invariant under the half-period shift are
//! kept.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{GridDescriptor, ScalarField};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModeKind {
    Constant,
    Cos,
    Sin,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mode {
    pub wavenumber: Vec<i64>,
    pub kind: ModeKind,
}

#[derive(Clone, Debug)]
pub struct FourierBasis {
    pub grid: GridDescriptor,
    /// Constant volume density `w` of the model metric in grid coordinates.
    pub density: f64,
    pub modes: Vec<Mode>,
    /// Node values of every basis function, `nodes × modes`.
    synthesis: DMatrix<f64>,
}

impl FourierBasis {
    /// All admissible modes with `|k_a| ≤ max_index` (defaults to the largest
    /// non-Nyquist index on each axis).
    pub fn new(grid: &GridDescriptor, density: f64, max_index: Option<i64>) -> Result<Self> {
        if !(density > 0.0) {
            return Err(Error::InvalidParameter("basis density must be positive".into()));
        }
        let dim = grid.dim;
        let limits: Vec<i64> = grid
            .sizes
            .iter()
            .map(|&s| {
                let nyq = s as i64 / 2 - 1;
                max_index.map_or(nyq, |m| m.min(nyq))
            })
            .collect();

        let total: usize = limits.iter().map(|&l| (2 * l + 1) as usize).product();
        let mut wavenumbers = Vec::new();
        for mut idx in 0..total {
            let mut k = vec![0i64; dim];
            for a in (0..dim).rev() {
                let width = (2 * limits[a] + 1) as usize;
                k[a] = (idx % width) as i64 - limits[a];
                idx /= width;
            }
            if is_half_space(&k) && admissible(grid, &k) {
                wavenumbers.push(k);
            }
        }
        let freq = |k: &[i64]| -> f64 {
            k.iter()
                .enumerate()
                .map(|(a, &ka)| (std::f64::consts::TAU * ka as f64 / grid.periods[a]).powi(2))
                .sum()
        };
        wavenumbers.sort_by(|a, b| {
            freq(a)
                .partial_cmp(&freq(b))
                .expect("finite frequencies")
                .then_with(|| a.cmp(b))
        });

        let mut modes = vec![Mode {
            wavenumber: vec![0; dim],
            kind: ModeKind::Constant,
        }];
        for k in wavenumbers {
            if k.iter().all(|&x| x == 0) {
                continue;
            }
            modes.push(Mode {
                wavenumber: k.clone(),
                kind: ModeKind::Cos,
            });
            modes.push(Mode {
                wavenumber: k,
                kind: ModeKind::Sin,
            });
        }

        let volume: f64 =
            grid.periods.iter().product::<f64>() * density * grid.quotient_factor();
        let nodes = grid.node_count();
        let mut synthesis = DMatrix::zeros(nodes, modes.len());
        for node in 0..nodes {
            let x = grid.node_coords(node);
            for (m, mode) in modes.iter().enumerate() {
                synthesis[(node, m)] = eval_mode(grid, mode, &x) / volume.sqrt();
            }
        }
        Ok(Self {
            grid: grid.clone(),
            density,
            modes,
            synthesis,
        })
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn synthesis_matrix(&self) -> &DMatrix<f64> {
        &self.synthesis
    }

    /// Quadrature weight of every node: `w · cell volume · quotient factor`.
    pub fn node_weight(&self) -> f64 {
        self.density * self.grid.cell_volume() * self.grid.quotient_factor()
    }

    pub fn synthesize(&self, coeffs: &DVector<f64>) -> ScalarField {
        ScalarField {
            grid: self.grid.clone(),
            values: (&self.synthesis * coeffs).as_slice().to_vec(),
        }
    }

    /// `L²` inner products of `f` with every basis function.
    pub fn analyze(&self, f: &ScalarField) -> Result<DVector<f64>> {
        self.grid.ensure_same(&f.grid)?;
        let v = DVector::from_column_slice(&f.values);
        Ok(self.synthesis.tr_mul(&v) * self.node_weight())
    }

    /// Orthogonal projection onto the span of the basis.
    pub fn project(&self, f: &ScalarField) -> Result<ScalarField> {
        Ok(self.synthesize(&self.analyze(f)?))
    }

    pub fn basis_field(&self, m: usize) -> ScalarField {
        ScalarField {
            grid: self.grid.clone(),
            values: self.synthesis.column(m).iter().copied().collect(),
        }
    }

    /// Seeded coefficients, uniform in `[−1, 1]` on the non-constant modes
    /// with `max |k_a| ≤ max_index` and zero elsewhere.
    pub fn random_coefficients(&self, max_index: i64, seed: u64) -> DVector<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DVector::from_iterator(
            self.len(),
            self.modes.iter().map(|m| {
                let inside = m.kind != ModeKind::Constant
                    && m.wavenumber.iter().all(|k| k.abs() <= max_index);
                let v: f64 = rng.gen_range(-1.0..1.0);
                if inside {
                    v
                } else {
                    0.0
                }
            }),
        )
    }

    /// Index of the mode with wavenumber `±k` and the given kind, if present.
    /// For `-k` the sine basis function differs from `sin(-k·x)` by a sign.
    pub fn index_of(&self, wavenumber: &[i64], kind: ModeKind) -> Option<usize> {
        let k = canonical(wavenumber);
        self.modes
            .iter()
            .position(|m| m.wavenumber == k && m.kind == kind)
    }
}

fn canonical(k: &[i64]) -> Vec<i64> {
    if is_half_space(k) {
        k.to_vec()
    } else {
        k.iter().map(|&x| -x).collect()
    }
}

/// First nonzero component positive.
fn is_half_space(k: &[i64]) -> bool {
    match k.iter().find(|&&x| x != 0) {
        Some(&x) => x > 0,
        None => true,
    }
}

fn admissible(grid: &GridDescriptor, k: &[i64]) -> bool {
    match &grid.quotient {
        None => true,
        Some(q) => {
            let shifted: i64 = k
                .iter()
                .zip(&q.shift_axes)
                .filter(|(_, &s)| s)
                .map(|(&ka, _)| ka)
                .sum();
            shifted.rem_euclid(2) == 0
        }
    }
}

fn eval_mode(grid: &GridDescriptor, mode: &Mode, x: &[f64]) -> f64 {
    let phase: f64 = mode
        .wavenumber
        .iter()
        .enumerate()
        .map(|(a, &k)| std::f64::consts::TAU * k as f64 * x[a] / grid.periods[a])
        .sum();
    match mode.kind {
        ModeKind::Constant => 1.0,
        ModeKind::Cos => std::f64::consts::SQRT_2 * phase.cos(),
        ModeKind::Sin => std::f64::consts::SQRT_2 * phase.sin(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_is_orthonormal() {
        let grid = GridDescriptor::angular(2, 8).unwrap();
        let basis = FourierBasis::new(&grid, 1.3, None).unwrap();
        assert_eq!(basis.len(), 7 * 7);
        let b = basis.synthesis_matrix();
        let gram = b.tr_mul(b) * basis.node_weight();
        let err = (gram - DMatrix::identity(basis.len(), basis.len())).amax();
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn quotient_basis_keeps_invariant_modes() {
        let grid = GridDescriptor::angular(2, 8)
            .unwrap()
            .with_quotient(vec![true, true])
            .unwrap();
        let basis = FourierBasis::new(&grid, 1.0, None).unwrap();
        assert_eq!(basis.len(), 25);
        for m in 0..basis.len() {
            assert!(basis.basis_field(m).quotient_defect() < 1e-12);
        }
        let b = basis.synthesis_matrix();
        let gram = b.tr_mul(b) * basis.node_weight();
        assert!((gram - DMatrix::identity(basis.len(), basis.len())).amax() < 1e-12);
    }

    #[test]
    fn modes_are_sorted_by_frequency() {
        let grid = GridDescriptor::angular(2, 16).unwrap();
        let basis = FourierBasis::new(&grid, 1.0, Some(3)).unwrap();
        let f: Vec<i64> = basis
            .modes
            .iter()
            .map(|m| m.wavenumber.iter().map(|k| k * k).sum())
            .collect();
        assert!(f.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(basis.modes[0].kind, ModeKind::Constant);
        assert!(basis.index_of(&[-1, 0], ModeKind::Cos).is_some());
    }

    #[test]
    fn projection_reproduces_band_limited_fields() {
        let grid = GridDescriptor::angular(2, 16).unwrap();
        let basis = FourierBasis::new(&grid, 2.0, None).unwrap();
        let f = ScalarField::from_fn(&grid, |x| (3.0 * x[0] - x[1]).sin() + 0.5 * (2.0 * x[1]).cos());
        let p = basis.project(&f).unwrap();
        assert!(p.sub(&f).unwrap().max_abs() < 1e-12);
        let nyq = ScalarField::from_fn(&grid, |x| (8.0 * x[0]).cos());
        assert!(basis.project(&nyq).unwrap().max_abs() < 1e-12);
    }
}
