//! Model Lagrangians: the product tori `|z_j| = a_j` and
//! `L_n = {(x₁e^{is}, …, xₙe^{is}) : |x| = 1}`, together with the space
//! `W_n` of moment maps of `u(n) ⊕ ℂⁿ`.
//!
//! `L₂` is discretized on the covering torus with coordinates `(s, φ)`,
//! `x = (cos φ, sin φ)`, and the identification `(s, φ) ~ (s + π, φ + π)`.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geomcore::{Immersion, NodeJet, ScalarField};
use crate::grid::GridDescriptor;
use crate::reduction::GraphJets;

/// Product of circles of radii `a_j`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TorusModel {
    pub radii: Vec<f64>,
    pub grid: GridDescriptor,
}

impl TorusModel {
    pub fn new(radii: Vec<f64>, size: usize) -> Result<Self> {
        if radii.is_empty() || radii.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
            return Err(Error::InvalidParameter(format!("radii must be positive, got {radii:?}")));
        }
        let grid = GridDescriptor::angular(radii.len(), size)?;
        Ok(Self { radii, grid })
    }

    pub fn n(&self) -> usize {
        self.radii.len()
    }

    /// Pairwise distinct radii at tolerance `1e−12`.
    pub fn has_distinct_radii(&self) -> bool {
        let r = &self.radii;
        (0..r.len()).all(|i| (i + 1..r.len()).all(|j| (r[i] - r[j]).abs() > 1e-12))
    }

    /// Constant volume density `∏ a_j` of the induced flat metric.
    pub fn density(&self) -> f64 {
        self.radii.iter().product()
    }

    pub fn volume(&self) -> f64 {
        std::f64::consts::TAU.powi(self.n() as i32) * self.density()
    }

    pub fn immersion(&self) -> Result<Immersion> {
        clifford_torus(&self.radii, &self.grid)
    }
}

/// `L_n`; only `n = 2` carries a grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LnModel {
    pub n: usize,
    pub grid: Option<GridDescriptor>,
}

impl LnModel {
    pub fn new(n: usize, size: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParameter("L_n requires n ≥ 2".into()));
        }
        let grid = if n == 2 {
            Some(GridDescriptor::angular(2, size)?.with_quotient(vec![true, true])?)
        } else {
            None
        };
        Ok(Self { n, grid })
    }

    pub fn grid(&self) -> Result<&GridDescriptor> {
        self.grid
            .as_ref()
            .ok_or_else(|| Error::Unsupported(format!("L_{} is analytic only", self.n)))
    }

    pub fn immersion(&self) -> Result<Immersion> {
        ln_lagrangian(self.n, self.grid()?)
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Model<'a> {
    Torus(&'a TorusModel),
    Ln(&'a LnModel),
}

/// `(θ₁, …, θₙ) ↦ (a₁cos θ₁, a₁sin θ₁, …, aₙcos θₙ, aₙsin θₙ)`.
pub fn clifford_torus(radii: &[f64], grid: &GridDescriptor) -> Result<Immersion> {
    if radii.iter().any(|&a| !(a > 0.0)) {
        return Err(Error::InvalidParameter(format!("radii must be positive, got {radii:?}")));
    }
    let n = radii.len();
    if grid.dim != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: grid.dim,
        });
    }
    let mut coords = Vec::with_capacity(2 * n * grid.node_count());
    let mut jets = Vec::with_capacity(grid.node_count());
    for node in 0..grid.node_count() {
        let th = grid.node_coords(node);
        let mut d1 = DMatrix::zeros(2 * n, n);
        let mut d2 = vec![DVector::zeros(2 * n); n * n];
        for (j, &a) in radii.iter().enumerate() {
            let (s, c) = th[j].sin_cos();
            coords.extend([a * c, a * s]);
            d1[(2 * j, j)] = -a * s;
            d1[(2 * j + 1, j)] = a * c;
            d2[j * n + j][2 * j] = -a * c;
            d2[j * n + j][2 * j + 1] = -a * s;
        }
        jets.push(NodeJet { d1, d2 });
    }
    Immersion::with_jets(grid.clone(), coords, jets)
}

/// `(s, φ) ↦ e^{is}(cos φ, sin φ)` on the quotient covering grid.
pub fn ln_lagrangian(n: usize, grid: &GridDescriptor) -> Result<Immersion> {
    if n != 2 {
        return Err(Error::Unsupported(format!("grid output for L_{n}; only n = 2 is discretized")));
    }
    ln_graph_immersion(&ScalarField::zeros(grid))
}

/// Weinstein chart of `L₂`:
/// `(s, φ, σ, p) ↦ e^{is}(ρ x(φ) + i w e_φ(φ))` with `ρ² + w² = 1 + 2σ` and
/// `ρw = −p`, which pulls `ω₀` back to `dσ∧ds + dp∧dφ`. The graph of `df`
/// has `σ = ∂_s f`, `p = ∂_φ f`.
pub fn ln_graph_immersion(f: &ScalarField) -> Result<Immersion> {
    let grid = &f.grid;
    if grid.dim != 2 || grid.quotient.is_none() {
        return Err(Error::InvalidParameter("L₂ graphs live on the ℤ₂ covering grid".into()));
    }
    // Jets are propagated exactly from the spectral derivatives of f;
    // differentiating the composite coordinates would alias.
    let jets = GraphJets::new(f, true);
    let component = |j: usize, node: usize| Jet2 {
        v: jets.y[j][node],
        d: [jets.yy[j][node], jets.yy[2 + j][node]],
        h: [
            [jets.yyy[j][node], jets.yyy[2 + j][node]],
            [jets.yyy[4 + j][node], jets.yyy[6 + j][node]],
        ],
    };
    let mut coords = Vec::with_capacity(4 * grid.node_count());
    let mut node_jets = Vec::with_capacity(grid.node_count());
    for node in 0..grid.node_count() {
        let x = grid.node_coords(node);
        let (sigma, p) = (component(0, node), component(1, node));
        let q = sigma * 2.0 + 1.0;
        let disc = q * q - p * p * 4.0;
        if !(q.v > 0.0 && disc.v > 0.0) {
            return Err(Error::OneFormTooLarge {
                size: sigma.v.abs().max(p.v.abs()),
                delta: 0.5,
            });
        }
        let rho = ((q + disc.sqrt()) * 0.5).sqrt();
        let w = -(p / rho);
        let (s, phi) = (Jet2::variable(x[0], 0), Jet2::variable(x[1], 1));
        let (cs, ss, cp, sp) = (s.cos(), s.sin(), phi.cos(), phi.sin());
        // u = ρ x + i w e_φ, e_φ = (−sin φ, cos φ); z = e^{is} u.
        let u = [(rho * cp, -(w * sp)), (rho * sp, w * cp)];
        let mut out = Vec::with_capacity(4);
        for (re, im) in u {
            out.push(cs * re - ss * im);
            out.push(ss * re + cs * im);
        }
        coords.extend(out.iter().map(|c| c.v));
        let d1 = DMatrix::from_fn(4, 2, |i, a| out[i].d[a]);
        let d2 = (0..4)
            .map(|ab| DVector::from_iterator(4, out.iter().map(|c| c.h[ab / 2][ab % 2])))
            .collect();
        node_jets.push(NodeJet { d1, d2 });
    }
    Immersion::with_jets(grid.clone(), coords, node_jets)
}

/// Value, gradient and Hessian of a function of `(s, φ)`.
#[derive(Clone, Copy, Debug)]
struct Jet2 {
    v: f64,
    d: [f64; 2],
    h: [[f64; 2]; 2],
}

impl Jet2 {
    fn variable(v: f64, axis: usize) -> Self {
        let mut d = [0.0; 2];
        d[axis] = 1.0;
        Self { v, d, h: [[0.0; 2]; 2] }
    }

    /// `g ∘ self` given `g, g′, g″` at `self.v`.
    fn chain(self, g: f64, g1: f64, g2: f64) -> Self {
        let mut out = Self {
            v: g,
            d: [g1 * self.d[0], g1 * self.d[1]],
            h: [[0.0; 2]; 2],
        };
        for a in 0..2 {
            for b in 0..2 {
                out.h[a][b] = g2 * self.d[a] * self.d[b] + g1 * self.h[a][b];
            }
        }
        out
    }

    fn sqrt(self) -> Self {
        let r = self.v.sqrt();
        self.chain(r, 0.5 / r, -0.25 / (r * r * r))
    }

    fn sin(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(s, c, -s)
    }

    fn cos(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(c, -s, -c)
    }
}

impl std::ops::Add for Jet2 {
    type Output = Self;
    fn add(mut self, o: Self) -> Self {
        self.v += o.v;
        for a in 0..2 {
            self.d[a] += o.d[a];
            for b in 0..2 {
                self.h[a][b] += o.h[a][b];
            }
        }
        self
    }
}

impl std::ops::Add<f64> for Jet2 {
    type Output = Self;
    fn add(mut self, c: f64) -> Self {
        self.v += c;
        self
    }
}

impl std::ops::Neg for Jet2 {
    type Output = Self;
    fn neg(self) -> Self {
        self * -1.0
    }
}

impl std::ops::Sub for Jet2 {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + -o
    }
}

impl std::ops::Mul<f64> for Jet2 {
    type Output = Self;
    fn mul(mut self, c: f64) -> Self {
        self.v *= c;
        for a in 0..2 {
            self.d[a] *= c;
            for b in 0..2 {
                self.h[a][b] *= c;
            }
        }
        self
    }
}

impl std::ops::Mul for Jet2 {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut out = Self {
            v: self.v * o.v,
            d: [0.0; 2],
            h: [[0.0; 2]; 2],
        };
        for a in 0..2 {
            out.d[a] = self.v * o.d[a] + o.v * self.d[a];
            for b in 0..2 {
                out.h[a][b] = self.v * o.h[a][b]
                    + o.v * self.h[a][b]
                    + self.d[a] * o.d[b]
                    + o.d[a] * self.d[b];
            }
        }
        out
    }
}

impl std::ops::Div for Jet2 {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let r = 1.0 / o.v;
        self * o.chain(r, -r * r, 2.0 * r * r * r)
    }
}

/// `Q(z) = a + Σ(b_j z_j + b̄_j z̄_j) + Σ c_jk z_j z̄_k` with `c` Hermitian.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentPolynomial {
    pub a: f64,
    pub b: Vec<Complex<f64>>,
    pub c: DMatrix<Complex<f64>>,
}

impl MomentPolynomial {
    pub fn new(a: f64, b: Vec<Complex<f64>>, c: DMatrix<Complex<f64>>) -> Result<Self> {
        let n = b.len();
        if c.nrows() != n || c.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: c.nrows(),
            });
        }
        let defect = (&c - c.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if defect > 1e-12 {
            return Err(Error::InvalidParameter(format!("c is not Hermitian (defect {defect:.3e})")));
        }
        Ok(Self { a, b, c })
    }

    pub fn n(&self) -> usize {
        self.b.len()
    }

    /// Value at interleaved real coordinates `(x₁, y₁, …)`.
    pub fn eval(&self, z: &[f64]) -> f64 {
        let zc: Vec<Complex<f64>> = z.chunks(2).map(|p| Complex::new(p[0], p[1])).collect();
        let mut q = Complex::new(self.a, 0.0);
        for (bj, zj) in self.b.iter().zip(&zc) {
            q += bj * zj + (bj * zj).conj();
        }
        for (j, zj) in zc.iter().enumerate() {
            for (k, zk) in zc.iter().enumerate() {
                q += self.c[(j, k)] * zj * zk.conj();
            }
        }
        q.re
    }

    /// Imaginary part of the raw sum; zero for Hermitian data.
    pub fn imaginary_part(&self, z: &[f64]) -> f64 {
        let zc: Vec<Complex<f64>> = z.chunks(2).map(|p| Complex::new(p[0], p[1])).collect();
        let mut q = Complex::new(self.a, 0.0);
        for (bj, zj) in self.b.iter().zip(&zc) {
            q += bj * zj + (bj * zj).conj();
        }
        for (j, zj) in zc.iter().enumerate() {
            for (k, zk) in zc.iter().enumerate() {
                q += self.c[(j, k)] * zj * zk.conj();
            }
        }
        q.im
    }
}

/// Real basis of `W_n`: `1`, `Re/Im` generators per `b_j`, the `|z_j|²`, and
/// the real and imaginary Hermitian pairs `c_jk`, `c_kj`.
pub fn moment_basis(n: usize) -> Vec<MomentPolynomial> {
    let zero_b = vec![Complex::new(0.0, 0.0); n];
    let zero_c = DMatrix::from_element(n, n, Complex::new(0.0, 0.0));
    let mut out = vec![MomentPolynomial {
        a: 1.0,
        b: zero_b.clone(),
        c: zero_c.clone(),
    }];
    for j in 0..n {
        for unit in [Complex::new(1.0, 0.0), Complex::new(0.0, 1.0)] {
            let mut b = zero_b.clone();
            b[j] = unit;
            out.push(MomentPolynomial {
                a: 0.0,
                b,
                c: zero_c.clone(),
            });
        }
    }
    for j in 0..n {
        let mut c = zero_c.clone();
        c[(j, j)] = Complex::new(1.0, 0.0);
        out.push(MomentPolynomial {
            a: 0.0,
            b: zero_b.clone(),
            c,
        });
    }
    for j in 0..n {
        for k in j + 1..n {
            for unit in [Complex::new(1.0, 0.0), Complex::new(0.0, 1.0)] {
                let mut c = zero_c.clone();
                c[(j, k)] = unit;
                c[(k, j)] = unit.conj();
                out.push(MomentPolynomial {
                    a: 0.0,
                    b: zero_b.clone(),
                    c,
                });
            }
        }
    }
    out
}

/// `Q|_L` sampled at the immersion nodes.
pub fn restrict_moment(q: &MomentPolynomial, imm: &Immersion) -> Result<ScalarField> {
    if 2 * q.n() != imm.ambient_dim {
        return Err(Error::DimensionMismatch {
            expected: imm.ambient_dim,
            got: 2 * q.n(),
        });
    }
    let values = (0..imm.grid.node_count()).map(|i| q.eval(imm.point(i))).collect();
    ScalarField::new(imm.grid.clone(), values)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LnEigenvalue {
    pub k: u32,
    pub l: u32,
    pub multiplicity: u64,
    pub eigenvalue: f64,
}

fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// Dimension of degree-`l` spherical harmonics on `S^{m}`.
pub fn spherical_harmonic_dim(m: u64, l: u64) -> u64 {
    if m == 0 {
        return if l <= 1 { 1 } else { 0 };
    }
    binomial(l + m, m) - if l >= 2 { binomial(l + m - 2, m) } else { 0 }
}

/// Eigenvalue `(k² + λ_l − n)² + n²(k² − 1)` of `ℒ` on `L_n` for the mode
/// `e^{iks}·φ_l`, with `λ_l = l(l + n − 2)`.
pub fn ln_eigenvalue(n: usize, k: u32, l: u32) -> f64 {
    let (n, k, l) = (n as f64, k as f64, l as f64);
    let lam = l * (l + n - 2.0);
    (k * k + lam - n).powi(2) + n * n * (k * k - 1.0)
}

/// Eigenvalues of `ℒ` on `L_n` for `k ≤ k_max`, `l ≤ l_max`, `k + l` even.
pub fn ln_spectrum(n: usize, k_max: u32, l_max: u32) -> Vec<LnEigenvalue> {
    let mut out = Vec::new();
    for k in 0..=k_max {
        for l in 0..=l_max {
            if (k + l) % 2 != 0 {
                continue;
            }
            let circle = if k == 0 { 1 } else { 2 };
            out.push(LnEigenvalue {
                k,
                l,
                multiplicity: circle * spherical_harmonic_dim(n as u64 - 1, l as u64),
                eigenvalue: ln_eigenvalue(n, k, l),
            });
        }
    }
    out
}

/// Predicted `dim Ker ℒ = n² + 2n + 1 − dim G`.
pub fn rigidity_prediction(model: Model<'_>) -> Result<usize> {
    match model {
        Model::Torus(t) => {
            if !t.has_distinct_radii() {
                return Err(Error::Unsupported(
                    "tori with repeated radii have a larger symmetry group".into(),
                ));
            }
            let n = t.n();
            Ok(n * n + n + 1)
        }
        Model::Ln(l) => {
            let n = l.n;
            Ok(n * n + 2 * n - n * (n - 1) / 2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spherical_harmonic_dimensions() {
        assert_eq!(spherical_harmonic_dim(1, 0), 1);
        assert_eq!(spherical_harmonic_dim(1, 3), 2);
        // S²: 2l + 1.
        assert_eq!(spherical_harmonic_dim(2, 4), 9);
        // S³: (l + 1)².
        assert_eq!(spherical_harmonic_dim(3, 2), 9);
    }

    #[test]
    fn repeated_radii_are_rejected() {
        let t = TorusModel::new(vec![1.0, 1.0], 8).unwrap();
        assert!(rigidity_prediction(Model::Torus(&t)).is_err());
    }

    #[test]
    fn non_hermitian_moment_data_is_rejected() {
        let c = DMatrix::from_row_slice(1, 1, &[Complex::new(1.0, 0.5)]);
        assert!(MomentPolynomial::new(0.0, vec![Complex::new(0.0, 0.0)], c).is_err());
    }
}
