use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{compatibility_defect, omega0, sqrt_and_inv_sqrt};
use crate::error::{Error, Result};

/// Matrix-valued function with partial derivatives up to order 3 at a point.
///
/// `d2[i·d + j] = ∂ᵢ∂ⱼ M` and `d3[(i·d + j)·d + k] = ∂ᵢ∂ⱼ∂ₖ M`, where `d`
/// is the number of coordinates.
#[derive(Clone, Debug)]
pub struct MatrixJet {
    pub coords: usize,
    pub order: usize,
    pub value: DMatrix<f64>,
    pub d1: Vec<DMatrix<f64>>,
    pub d2: Vec<DMatrix<f64>>,
    pub d3: Vec<DMatrix<f64>>,
}

impl MatrixJet {
    pub fn constant(value: DMatrix<f64>, coords: usize, order: usize) -> Self {
        let z = DMatrix::zeros(value.nrows(), value.ncols());
        let count = |k: usize| if order >= k { coords.pow(k as u32) } else { 0 };
        Self {
            coords,
            order,
            d1: vec![z.clone(); count(1)],
            d2: vec![z.clone(); count(2)],
            d3: vec![z; count(3)],
            value,
        }
    }

    pub fn d2(&self, i: usize, j: usize) -> &DMatrix<f64> {
        &self.d2[i * self.coords + j]
    }

    pub fn d3(&self, i: usize, j: usize, k: usize) -> &DMatrix<f64> {
        &self.d3[(i * self.coords + j) * self.coords + k]
    }

    pub fn transpose(&self) -> Self {
        let t = |v: &Vec<DMatrix<f64>>| v.iter().map(|m| m.transpose()).collect();
        Self {
            coords: self.coords,
            order: self.order,
            value: self.value.transpose(),
            d1: t(&self.d1),
            d2: t(&self.d2),
            d3: t(&self.d3),
        }
    }

    /// Leibniz rule for the product `self · other`.
    pub fn mul(&self, other: &Self) -> Self {
        let d = self.coords;
        let order = self.order.min(other.order);
        let (a, b) = (self, other);
        let mut out = Self::constant(&a.value * &b.value, d, order);
        if order >= 1 {
            for i in 0..d {
                out.d1[i] = &a.d1[i] * &b.value + &a.value * &b.d1[i];
            }
        }
        if order >= 2 {
            for i in 0..d {
                for j in 0..d {
                    out.d2[i * d + j] = a.d2(i, j) * &b.value
                        + &a.d1[i] * &b.d1[j]
                        + &a.d1[j] * &b.d1[i]
                        + &a.value * b.d2(i, j);
                }
            }
        }
        if order >= 3 {
            for i in 0..d {
                for j in 0..d {
                    for k in 0..d {
                        out.d3[(i * d + j) * d + k] = a.d3(i, j, k) * &b.value
                            + a.d2(i, j) * &b.d1[k]
                            + a.d2(i, k) * &b.d1[j]
                            + a.d2(j, k) * &b.d1[i]
                            + &a.d1[i] * b.d2(j, k)
                            + &a.d1[j] * b.d2(i, k)
                            + &a.d1[k] * b.d2(i, j)
                            + &a.value * b.d3(i, j, k);
                    }
                }
            }
        }
        out
    }

    /// Congruence `Aᵀ M A` by a constant matrix.
    pub fn congruence(&self, a: &DMatrix<f64>) -> Self {
        let c = |m: &DMatrix<f64>| a.transpose() * m * a;
        Self {
            coords: self.coords,
            order: self.order,
            value: c(&self.value),
            d1: self.d1.iter().map(c).collect(),
            d2: self.d2.iter().map(c).collect(),
            d3: self.d3.iter().map(c).collect(),
        }
    }
}

/// Point evaluation of a symmetric positive matrix field and its
/// derivatives.
pub trait MetricEvaluator: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    /// Highest derivative order the evaluator supports.
    fn max_order(&self) -> usize {
        3
    }

    fn jet(&self, x: &[f64], order: usize) -> Result<MatrixJet>;

    fn value(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.jet(x, 0)?.value)
    }

    /// True only for the Euclidean metric `g₀`.
    fn is_flat(&self) -> bool {
        false
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Domain {
    Everywhere,
    /// Closed ball of the given radius about the origin.
    Ball { radius: f64 },
    /// Periodic in every coordinate; all points are admissible.
    Periodic { period: f64 },
}

/// A metric compatible with `ω₀` on its domain.
#[derive(Clone, Debug)]
pub struct CompatibleMetric {
    evaluator: Arc<dyn MetricEvaluator>,
    pub domain: Domain,
}

impl CompatibleMetric {
    /// Wraps `evaluator`, checking compatibility at the origin and at a few
    /// seeded points of the domain.
    pub fn new(evaluator: Arc<dyn MetricEvaluator>, domain: Domain) -> Result<Self> {
        let m = Self { evaluator, domain };
        let dim = m.dim();
        if !dim.is_multiple_of(2) || dim == 0 {
            return Err(Error::InvalidParameter(format!("ambient dimension {dim} is not even")));
        }
        let scale = match m.domain {
            Domain::Everywhere => 1.0,
            Domain::Ball { radius } => radius / (dim as f64).sqrt(),
            Domain::Periodic { period } => period,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for s in 0..5 {
            let x: Vec<f64> = if s == 0 {
                vec![0.0; dim]
            } else {
                (0..dim).map(|_| rng.gen_range(-1.0..1.0) * scale).collect()
            };
            let g = m.evaluator.value(&x)?;
            let defect = compatibility_defect(&g);
            if !(defect <= 1e-10) {
                return Err(Error::Degenerate(format!(
                    "metric is not compatible with the standard symplectic form (|J²+I| = {defect:.3e})"
                )));
            }
        }
        Ok(m)
    }

    /// Wraps an evaluator whose compatibility holds by construction.
    pub(crate) fn new_unchecked(evaluator: Arc<dyn MetricEvaluator>, domain: Domain) -> Self {
        Self { evaluator, domain }
    }

    pub fn flat(n: usize) -> Self {
        Self {
            evaluator: Arc::new(FlatMetric { dim: 2 * n }),
            domain: Domain::Everywhere,
        }
    }

    /// Default periodic perturbation of `g₀` on `T²ⁿ = ℝ²ⁿ / 2πℤ²ⁿ`.
    pub fn shear(n: usize, amplitude: f64, seed: u64) -> Result<Self> {
        Self::new(
            Arc::new(ShearMetric::new(n, amplitude, seed)?),
            Domain::Periodic {
                period: std::f64::consts::TAU,
            },
        )
    }

    pub fn dim(&self) -> usize {
        self.evaluator.dim()
    }

    pub fn evaluator(&self) -> &Arc<dyn MetricEvaluator> {
        &self.evaluator
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self.domain {
            Domain::Ball { radius } => x.iter().map(|v| v * v).sum::<f64>() <= radius * radius,
            _ => true,
        }
    }

    pub fn jet(&self, x: &[f64], order: usize) -> Result<MatrixJet> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if !self.contains(x) {
            return Err(Error::ChartDomain(format!("{x:?} lies outside {:?}", self.domain)));
        }
        if order > self.evaluator.max_order() {
            return Err(Error::Unsupported(format!(
                "derivative order {order} exceeds {}",
                self.evaluator.max_order()
            )));
        }
        self.evaluator.jet(x, order)
    }

    pub fn value(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.jet(x, 0)?.value)
    }

    pub fn is_flat(&self) -> bool {
        self.evaluator.is_flat()
    }
}

#[derive(Clone, Debug)]
pub struct FlatMetric {
    pub dim: usize,
}

impl MetricEvaluator for FlatMetric {
    fn dim(&self) -> usize {
        self.dim
    }

    fn jet(&self, _x: &[f64], order: usize) -> Result<MatrixJet> {
        Ok(MatrixJet::constant(
            DMatrix::identity(self.dim, self.dim),
            self.dim,
            order,
        ))
    }

    fn is_flat(&self) -> bool {
        true
    }
}

/// Position-independent metric.
#[derive(Clone, Debug)]
pub struct ConstantMetric {
    pub matrix: DMatrix<f64>,
}

impl MetricEvaluator for ConstantMetric {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn jet(&self, _x: &[f64], order: usize) -> Result<MatrixJet> {
        Ok(MatrixJet::constant(self.matrix.clone(), self.dim(), order))
    }
}

/// `Σₘ Aₘ cos(kₘ·x + φₘ)` with integer wavevectors.
#[derive(Clone, Debug, PartialEq)]
struct TrigSum {
    terms: Vec<(f64, Vec<f64>, f64)>,
}

impl TrigSum {
    fn random(rng: &mut ChaCha8Rng, dim: usize, terms: usize, scale: f64) -> Self {
        let terms = (0..terms)
            .map(|_| {
                let k = loop {
                    let k: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1i32..=1) as f64).collect();
                    if k.iter().any(|&v| v != 0.0) {
                        break k;
                    }
                };
                let amp = scale * rng.gen_range(0.5..1.0);
                let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                (amp, k, phase)
            })
            .collect();
        Self { terms }
    }

    /// Value and derivatives `[f, ∂ᵢf, ∂ᵢ∂ⱼf, ∂ᵢ∂ⱼ∂ₖf]`, flattened as in
    /// [`MatrixJet`].
    fn jet(&self, x: &[f64], order: usize) -> (f64, Vec<f64>, Vec<f64>, Vec<f64>) {
        let d = x.len();
        let mut v = 0.0;
        let mut d1 = vec![0.0; if order >= 1 { d } else { 0 }];
        let mut d2 = vec![0.0; if order >= 2 { d * d } else { 0 }];
        let mut d3 = vec![0.0; if order >= 3 { d * d * d } else { 0 }];
        for (amp, k, phase) in &self.terms {
            let arg: f64 = k.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + phase;
            let (s, c) = arg.sin_cos();
            v += amp * c;
            for i in 0..d1.len() {
                d1[i] -= amp * s * k[i];
            }
            if order >= 2 {
                for i in 0..d {
                    for j in 0..d {
                        d2[i * d + j] -= amp * c * k[i] * k[j];
                    }
                }
            }
            if order >= 3 {
                for i in 0..d {
                    for j in 0..d {
                        for l in 0..d {
                            d3[(i * d + j) * d + l] += amp * s * k[i] * k[j] * k[l];
                        }
                    }
                }
            }
        }
        (v, d1, d2, d3)
    }
}

/// Jet of a symmetric matrix whose upper-triangular entries are trig sums;
/// the entry `(i, j)` is placed at `(rows[i], cols[j])` of a `size × size`
/// matrix, on top of `base`.
fn symmetric_trig_jet(
    entries: &[TrigSum],
    n: usize,
    x: &[f64],
    order: usize,
    place: impl Fn(usize, usize) -> (usize, usize),
    base: DMatrix<f64>,
) -> MatrixJet {
    let d = x.len();
    let mut jet = MatrixJet::constant(base, d, order);
    let mut e = 0;
    for i in 0..n {
        for j in i..n {
            let (v, d1, d2, d3) = entries[e].jet(x, order);
            e += 1;
            let pairs = if i == j { vec![(i, j)] } else { vec![(i, j), (j, i)] };
            for (a, b) in pairs {
                let (r, c) = place(a, b);
                jet.value[(r, c)] += v;
                for (m, val) in jet.d1.iter_mut().zip(&d1) {
                    m[(r, c)] += val;
                }
                for (m, val) in jet.d2.iter_mut().zip(&d2) {
                    m[(r, c)] += val;
                }
                for (m, val) in jet.d3.iter_mut().zip(&d3) {
                    m[(r, c)] += val;
                }
            }
        }
    }
    jet
}

/// `G = SᵀS` with `S = V(C)·U(B)` where, in `(q, p)` blocks,
/// `U(B) = [[I, 0], [B, I]]` and `V(C) = [[I, C], [0, I]]` for symmetric
/// trigonometric `B`, `C`. Both factors are symplectic, so `G` is compatible
/// with `ω₀` identically, `2π`-periodic in every coordinate, and its
/// derivatives are exact.
#[derive(Clone, Debug, PartialEq)]
pub struct ShearMetric {
    n: usize,
    pub amplitude: f64,
    pub seed: u64,
    b: Vec<TrigSum>,
    c: Vec<TrigSum>,
}

impl ShearMetric {
    pub fn new(n: usize, amplitude: f64, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("n must be positive".into()));
        }
        if !(amplitude.is_finite() && amplitude >= 0.0) {
            return Err(Error::InvalidParameter(format!("amplitude {amplitude}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let count = n * (n + 1) / 2;
        let b = (0..count)
            .map(|_| TrigSum::random(&mut rng, 2 * n, 2, amplitude))
            .collect();
        let c = (0..count)
            .map(|_| TrigSum::random(&mut rng, 2 * n, 2, amplitude))
            .collect();
        Ok(Self {
            n,
            amplitude,
            seed,
            b,
            c,
        })
    }
}

impl MetricEvaluator for ShearMetric {
    fn dim(&self) -> usize {
        2 * self.n
    }

    fn jet(&self, x: &[f64], order: usize) -> Result<MatrixJet> {
        let d = self.dim();
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
        let id = DMatrix::identity(d, d);
        // Row p_i, column q_j of U; row q_i, column p_j of V.
        let u = symmetric_trig_jet(&self.b, self.n, x, order, |i, j| (2 * i + 1, 2 * j), id.clone());
        let v = symmetric_trig_jet(&self.c, self.n, x, order, |i, j| (2 * i, 2 * j + 1), id);
        let s = v.mul(&u);
        Ok(s.transpose().mul(&s))
    }
}

/// `g₀ + Σ` symmetric trigonometric perturbation; not compatible in general.
#[derive(Clone, Debug, PartialEq)]
pub struct TrigPerturbation {
    dim: usize,
    entries: Vec<TrigSum>,
}

impl TrigPerturbation {
    pub fn new(dim: usize, amplitude: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = (0..dim * (dim + 1) / 2)
            .map(|_| TrigSum::random(&mut rng, dim, 2, amplitude))
            .collect();
        Self { dim, entries }
    }
}

impl MetricEvaluator for TrigPerturbation {
    fn dim(&self) -> usize {
        self.dim
    }

    fn jet(&self, x: &[f64], order: usize) -> Result<MatrixJet> {
        Ok(symmetric_trig_jet(
            &self.entries,
            self.dim,
            x,
            order,
            |i, j| (i, j),
            DMatrix::identity(self.dim, self.dim),
        ))
    }
}

/// Pointwise polar retraction of `h` onto the compatible metrics.
///
/// With `A = −H⁻¹Ω₀` (so that `ω₀(u, v) = h(Au, v)`), `J = A(−A²)^{−1/2}`
/// and `G = Ω₀J`. Derivatives are fourth-order central differences of the
/// retraction.
#[derive(Debug)]
pub struct Compatibilized {
    raw: Arc<dyn MetricEvaluator>,
    pub step: f64,
}

/// Retraction of a single symmetric positive matrix.
pub(crate) fn retract(h: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let dim = h.nrows();
    let om = omega0(dim);
    let (r, ri) = sqrt_and_inv_sqrt(h)?;
    // Ã = R A R⁻¹ is antisymmetric, so −Ã² is symmetric positive.
    let a = -(h.clone().try_inverse()? * &om);
    let at = &r * &a * &ri;
    let neg_sq = -(&at * &at);
    let neg_sq = (&neg_sq + neg_sq.transpose()) * 0.5;
    let (_, inv_root) = sqrt_and_inv_sqrt(&neg_sq)?;
    let j = &ri * at * inv_root * &r;
    let g = &om * j;
    Some((&g + g.transpose()) * 0.5)
}

impl Compatibilized {
    fn retracted(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        retract(&self.raw.value(x)?).ok_or_else(|| Error::Degenerate("metric is not positive definite".into()))
    }

    fn partial(&self, x: &[f64], axes: &[usize]) -> Result<DMatrix<f64>> {
        match axes.split_first() {
            None => self.retracted(x),
            Some((&axis, rest)) => {
                let h = self.step;
                let mut acc = DMatrix::zeros(self.dim(), self.dim());
                for (off, w) in [(-2.0, 1.0), (-1.0, -8.0), (1.0, 8.0), (2.0, -1.0)] {
                    let mut y = x.to_vec();
                    y[axis] += off * h;
                    acc += self.partial(&y, rest)? * w;
                }
                Ok(acc / (12.0 * h))
            }
        }
    }
}

impl MetricEvaluator for Compatibilized {
    fn dim(&self) -> usize {
        self.raw.dim()
    }

    fn jet(&self, x: &[f64], order: usize) -> Result<MatrixJet> {
        let d = self.dim();
        let mut jet = MatrixJet::constant(self.retracted(x)?, d, order);
        if order >= 1 {
            for i in 0..d {
                jet.d1[i] = self.partial(x, &[i])?;
            }
        }
        if order >= 2 {
            for i in 0..d {
                for j in i..d {
                    let m = self.partial(x, &[i, j])?;
                    jet.d2[j * d + i] = m.clone();
                    jet.d2[i * d + j] = m;
                }
            }
        }
        if order >= 3 {
            for i in 0..d {
                for j in i..d {
                    for k in j..d {
                        let m = self.partial(x, &[i, j, k])?;
                        for (a, b, c) in [(i, j, k), (i, k, j), (j, i, k), (j, k, i), (k, i, j), (k, j, i)] {
                            jet.d3[(a * d + b) * d + c] = m.clone();
                        }
                    }
                }
            }
        }
        Ok(jet)
    }
}

/// Compatible metric obtained by retracting an arbitrary metric `h`.
pub fn compatibilize(h: Arc<dyn MetricEvaluator>, domain: Domain) -> Result<CompatibleMetric> {
    let probe = h.value(&vec![0.0; h.dim()])?;
    if retract(&probe).is_none() {
        return Err(Error::Degenerate("metric is degenerate at the origin".into()));
    }
    CompatibleMetric::new(Arc::new(Compatibilized { raw: h, step: 1e-3 }), domain)
}

/// Serializable description of an ambient metric on `T²ⁿ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MetricDescriptor {
    Flat,
    /// [`ShearMetric`]; compatible by construction.
    Shear { amplitude: f64, seed: u64 },
    /// [`TrigPerturbation`] followed by [`compatibilize`].
    Retracted { amplitude: f64, seed: u64 },
}

impl MetricDescriptor {
    pub fn build(&self, n: usize) -> Result<CompatibleMetric> {
        let periodic = Domain::Periodic {
            period: std::f64::consts::TAU,
        };
        match *self {
            Self::Flat => Ok(CompatibleMetric::flat(n)),
            Self::Shear { amplitude, seed } => CompatibleMetric::shear(n, amplitude, seed),
            Self::Retracted { amplitude, seed } => {
                compatibilize(Arc::new(TrigPerturbation::new(2 * n, amplitude, seed)), periodic)
            }
        }
    }

    pub fn amplitude(&self) -> f64 {
        match *self {
            Self::Flat => 0.0,
            Self::Shear { amplitude, .. } | Self::Retracted { amplitude, .. } => amplitude,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_first(m: &dyn MetricEvaluator, x: &[f64], i: usize, h: f64) -> DMatrix<f64> {
        let mut p = x.to_vec();
        let mut q = x.to_vec();
        p[i] += h;
        q[i] -= h;
        (m.value(&p).unwrap() - m.value(&q).unwrap()) / (2.0 * h)
    }

    #[test]
    fn shear_metric_is_compatible_and_positive() {
        let g = ShearMetric::new(2, 0.2, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let v = g.value(&x).unwrap();
            assert!(compatibility_defect(&v) < 1e-12);
            assert!(v.clone().symmetric_eigen().eigenvalues.min() > 0.0);
            assert!((&v - v.transpose()).amax() < 1e-14);
        }
    }

    #[test]
    fn shear_jets_match_finite_differences() {
        let g = ShearMetric::new(2, 0.3, 11).unwrap();
        let x = [0.3, -0.7, 1.1, 0.4];
        let jet = g.jet(&x, 3).unwrap();
        let h = 1e-5;
        for i in 0..4 {
            assert!((fd_first(&g, &x, i, h) - &jet.d1[i]).amax() < 1e-8);
            let mut p = x.to_vec();
            let mut q = x.to_vec();
            p[i] += h;
            q[i] -= h;
            let (jp, jq) = (g.jet(&p, 2).unwrap(), g.jet(&q, 2).unwrap());
            for j in 0..4 {
                let d2 = (&jp.d1[j] - &jq.d1[j]) / (2.0 * h);
                assert!((d2 - jet.d2(i, j)).amax() < 1e-8);
                for k in 0..4 {
                    let d3 = (jp.d2(j, k) - jq.d2(j, k)) / (2.0 * h);
                    assert!((d3 - jet.d3(i, j, k)).amax() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn shear_metric_is_periodic() {
        let g = ShearMetric::new(2, 0.1, 5).unwrap();
        let x = [0.1, 0.2, 0.3, 0.4];
        let y = [0.1 + std::f64::consts::TAU, 0.2, 0.3 - std::f64::consts::TAU, 0.4];
        assert!((g.value(&x).unwrap() - g.value(&y).unwrap()).amax() < 1e-13);
    }

    #[test]
    fn zero_amplitude_shear_is_flat() {
        let g = ShearMetric::new(2, 0.0, 9).unwrap();
        let v = g.value(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((v - DMatrix::identity(4, 4)).amax() == 0.0);
    }

    #[test]
    fn compatibilize_fixes_compatible_metrics() {
        let flat = compatibilize(Arc::new(FlatMetric { dim: 4 }), Domain::Everywhere).unwrap();
        let v = flat.value(&[0.2, 0.1, -0.3, 0.5]).unwrap();
        assert!((v - DMatrix::identity(4, 4)).amax() < 1e-14);

        // c·g₀ is compatible with c·ω₀, not ω₀: the retraction keeps J = J₀
        // and therefore returns g₀.
        let c = 2.5;
        let scaled = compatibilize(
            Arc::new(ConstantMetric {
                matrix: DMatrix::identity(4, 4) * c,
            }),
            Domain::Everywhere,
        )
        .unwrap();
        let v = scaled.value(&[0.0; 4]).unwrap();
        assert!((v - DMatrix::identity(4, 4)).amax() < 1e-13);
    }

    #[test]
    fn compatibilize_random_perturbation() {
        let raw = Arc::new(TrigPerturbation::new(4, 0.1, 21));
        let g = compatibilize(raw.clone(), Domain::Everywhere).unwrap();
        let om = omega0(4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let v = g.value(&x).unwrap();
            let j = super::super::complex_structure(&v).unwrap();
            assert!((&j * &j + DMatrix::identity(4, 4)).amax() < 1e-12);
            // g(u, v) = ω₀(u, Jv) is symmetric positive.
            let form = &om * &j;
            assert!((&form - form.transpose()).amax() < 1e-12);
            assert!(form.symmetric_eigen().eigenvalues.min() > 0.0);
            // The retraction moves an O(ε) perturbation by O(ε).
            assert!((v - raw.value(&x).unwrap()).amax() < 0.5);
        }
    }

    #[test]
    fn compatibilized_derivatives_are_consistent() {
        let g = compatibilize(Arc::new(TrigPerturbation::new(2, 0.1, 2)), Domain::Everywhere).unwrap();
        let x = [0.4, -0.2];
        let jet = g.jet(&x, 1).unwrap();
        for i in 0..2 {
            let fd = fd_first(g.evaluator().as_ref(), &x, i, 1e-5);
            assert!((fd - &jet.d1[i]).amax() < 1e-7);
        }
    }

    #[test]
    fn ball_domain_is_enforced() {
        let g = CompatibleMetric::new(Arc::new(FlatMetric { dim: 2 }), Domain::Ball { radius: 1.0 }).unwrap();
        assert!(g.value(&[0.5, 0.5]).is_ok());
        assert!(matches!(g.value(&[1.0, 1.0]), Err(Error::ChartDomain(_))));
    }

    #[test]
    fn incompatible_metric_is_rejected() {
        let raw = Arc::new(TrigPerturbation::new(4, 0.2, 3));
        assert!(CompatibleMetric::new(raw, Domain::Everywhere).is_err());
    }
}
