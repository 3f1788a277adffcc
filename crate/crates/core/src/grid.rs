//! Periodic structured grids and the fields that live on them.
//!
//! Values are stored row-major with the last axis varying fastest. All
//! differentiation is spectral: the derivative of the trigonometric
//! interpolant, with the Nyquist mode differentiated to zero.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::sync::{Arc, OnceLock, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// ℤ₂ identification `x ~ x + shift`, where the shift is half a period on
/// every flagged axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quotient {
    pub shift_axes: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridDescriptor {
    pub dim: usize,
    pub sizes: Vec<usize>,
    pub periods: Vec<f64>,
    #[serde(default)]
    pub quotient: Option<Quotient>,
}

impl GridDescriptor {
    pub fn new(sizes: Vec<usize>, periods: Vec<f64>) -> Result<Self> {
        if sizes.is_empty() || sizes.len() != periods.len() {
            return Err(Error::InvalidGrid(format!(
                "{} sizes for {} periods",
                sizes.len(),
                periods.len()
            )));
        }
        for &s in &sizes {
            if s < 8 || s % 2 != 0 {
                return Err(Error::InvalidGrid(format!(
                    "axis size {s} must be even and at least 8"
                )));
            }
        }
        for &p in &periods {
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::InvalidGrid(format!("period {p} must be positive")));
            }
        }
        Ok(Self {
            dim: sizes.len(),
            sizes,
            periods,
            quotient: None,
        })
    }

    /// Uniform `size^dim` grid with period 2π on every axis.
    pub fn angular(dim: usize, size: usize) -> Result<Self> {
        Self::new(vec![size; dim], vec![std::f64::consts::TAU; dim])
    }

    pub fn with_quotient(mut self, shift_axes: Vec<bool>) -> Result<Self> {
        if shift_axes.len() != self.dim {
            return Err(Error::InvalidGrid("quotient flags must match grid dimension".into()));
        }
        if !shift_axes.iter().any(|&b| b) {
            return Err(Error::InvalidGrid("quotient must shift at least one axis".into()));
        }
        self.quotient = Some(Quotient { shift_axes });
        Ok(self)
    }

    pub fn node_count(&self) -> usize {
        self.sizes.iter().product()
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.periods[axis] / self.sizes[axis] as f64
    }

    /// Coordinate volume of one grid cell.
    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|a| self.spacing(a)).product()
    }

    /// Factor applied to covering-space integrals (1/2 for a ℤ₂ quotient).
    pub fn quotient_factor(&self) -> f64 {
        if self.quotient.is_some() {
            0.5
        } else {
            1.0
        }
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.sizes[axis + 1..].iter().product()
    }

    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim];
        for a in (0..self.dim).rev() {
            out[a] = idx % self.sizes[a];
            idx /= self.sizes[a];
        }
        out
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi
            .iter()
            .zip(&self.sizes)
            .fold(0, |acc, (&m, &s)| acc * s + (m % s))
    }

    pub fn node_coords(&self, idx: usize) -> Vec<f64> {
        self.multi_index(idx)
            .iter()
            .enumerate()
            .map(|(a, &m)| m as f64 * self.spacing(a))
            .collect()
    }

    /// Index of the node identified with `idx` under the quotient, if any.
    pub fn partner(&self, idx: usize) -> Option<usize> {
        let q = self.quotient.as_ref()?;
        let mut multi = self.multi_index(idx);
        for (a, m) in multi.iter_mut().enumerate() {
            if q.shift_axes[a] {
                *m = (*m + self.sizes[a] / 2) % self.sizes[a];
            }
        }
        Some(self.flat_index(&multi))
    }

    /// Index of the node translated by `steps[a]` grid spacings on each axis.
    pub fn translated(&self, idx: usize, steps: &[i64]) -> usize {
        let multi: Vec<usize> = self
            .multi_index(idx)
            .iter()
            .enumerate()
            .map(|(a, &m)| {
                let s = self.sizes[a] as i64;
                (((m as i64 + steps[a]) % s + s) % s) as usize
            })
            .collect();
        self.flat_index(&multi)
    }

    pub fn ensure_same(&self, other: &GridDescriptor) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    /// Apply the periodic spectral derivative along `axis` to node values
    /// carrying `components` interleaved entries per node.
    pub(crate) fn differentiate(&self, values: &[f64], axis: usize) -> Vec<f64> {
        let n = self.sizes[axis];
        let d = diff_matrix(n, self.periods[axis]);
        let stride = self.stride(axis);
        let mut out = vec![0.0; values.len()];
        let block = n * stride;
        let mut line = vec![0.0; n];
        for outer in (0..values.len()).step_by(block) {
            for inner in 0..stride {
                let base = outer + inner;
                for (i, slot) in line.iter_mut().enumerate() {
                    *slot = values[base + i * stride];
                }
                for i in 0..n {
                    let row = &d[i * n..(i + 1) * n];
                    let mut acc = 0.0;
                    for (dij, fj) in row.iter().zip(&line) {
                        acc += dij * fj;
                    }
                    out[base + i * stride] = acc;
                }
            }
        }
        out
    }
}

type DiffCache = RwLock<HashMap<(usize, u64), Arc<Vec<f64>>>>;

/// Dense first-derivative matrix of the trigonometric interpolant on an
/// even periodic grid (row-major, `n × n`).
fn diff_matrix(n: usize, period: f64) -> Arc<Vec<f64>> {
    static CACHE: OnceLock<DiffCache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| RwLock::new(HashMap::new()));
    let key = (n, period.to_bits());
    if let Some(m) = cache.read().expect("diff cache poisoned").get(&key) {
        return Arc::clone(m);
    }
    let h = std::f64::consts::TAU / n as f64;
    let scale = std::f64::consts::TAU / period;
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let k = i as i64 - j as i64;
                let sign = if k.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                m[i * n + j] = scale * 0.5 * sign / (0.5 * k as f64 * h).tan();
            }
        }
    }
    let m = Arc::new(m);
    cache
        .write()
        .expect("diff cache poisoned")
        .insert(key, Arc::clone(&m));
    m
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    pub grid: GridDescriptor,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: GridDescriptor, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::DimensionMismatch {
                expected: grid.node_count(),
                got: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: &GridDescriptor, c: f64) -> Self {
        Self {
            grid: grid.clone(),
            values: vec![c; grid.node_count()],
        }
    }

    pub fn zeros(grid: &GridDescriptor) -> Self {
        Self::constant(grid, 0.0)
    }

    /// Sample `f` at every node.
    pub fn from_fn(grid: &GridDescriptor, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.node_count())
            .map(|i| f(&grid.node_coords(i)))
            .collect();
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.grid.ensure_same(&other.grid)?;
        Ok(Self {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    /// Average over the ℤ₂ identification; identity without a quotient.
    pub fn symmetrized(&self) -> Self {
        let mut out = self.clone();
        if self.grid.quotient.is_some() {
            for i in 0..self.values.len() {
                let j = self.grid.partner(i).expect("quotient grid");
                out.values[i] = 0.5 * (self.values[i] + self.values[j]);
            }
        }
        out
    }

    /// Largest violation of invariance under the ℤ₂ identification.
    pub fn quotient_defect(&self) -> f64 {
        (0..self.values.len())
            .filter_map(|i| self.grid.partner(i).map(|j| (self.values[i] - self.values[j]).abs()))
            .fold(0.0, f64::max)
    }
}

/// Spectral derivative of `f` along `axis`.
pub fn spectral_derivative(f: &ScalarField, axis: usize) -> Result<ScalarField> {
    if axis >= f.grid.dim {
        return Err(Error::InvalidParameter(format!(
            "axis {axis} out of range for a {}-dimensional grid",
            f.grid.dim
        )));
    }
    Ok(ScalarField {
        grid: f.grid.clone(),
        values: f.grid.differentiate(&f.values, axis),
    })
}

/// Gradient components `∂f/∂x_a`, one field per axis.
pub fn gradient(f: &ScalarField) -> Vec<ScalarField> {
    (0..f.grid.dim)
        .map(|a| spectral_derivative(f, a).expect("axis in range"))
        .collect()
}

/// Periodic quadrature of `f·g·dvol`; halved on a ℤ₂ quotient.
pub fn l2_inner(f: &ScalarField, g: &ScalarField, dvol: &ScalarField) -> Result<f64> {
    f.grid.ensure_same(&g.grid)?;
    f.grid.ensure_same(&dvol.grid)?;
    let sum: f64 = f
        .values
        .iter()
        .zip(&g.values)
        .zip(&dvol.values)
        .map(|((a, b), w)| a * b * w)
        .sum();
    Ok(sum * f.grid.cell_volume() * f.grid.quotient_factor())
}

pub fn l2_norm(f: &ScalarField, dvol: &ScalarField) -> Result<f64> {
    Ok(l2_inner(f, f, dvol)?.max(0.0).sqrt())
}

/// Integral of `f·dvol`.
pub fn integrate(f: &ScalarField, dvol: &ScalarField) -> Result<f64> {
    f.grid.ensure_same(&dvol.grid)?;
    let sum: f64 = f.values.iter().zip(&dvol.values).map(|(a, w)| a * w).sum();
    Ok(sum * f.grid.cell_volume() * f.grid.quotient_factor())
}

/// Covector field with coefficients in the grid coordinate coframe.
#[derive(Clone, Debug, PartialEq)]
pub struct OneFormField {
    pub grid: GridDescriptor,
    /// `dim` entries per node.
    pub components: Vec<f64>,
}

impl OneFormField {
    pub fn new(grid: GridDescriptor, components: Vec<f64>) -> Result<Self> {
        let expected = grid.dim * grid.node_count();
        if components.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: components.len(),
            });
        }
        Ok(Self { grid, components })
    }

    pub fn from_components(fields: &[ScalarField]) -> Result<Self> {
        let grid = fields
            .first()
            .ok_or_else(|| Error::InvalidParameter("no components".into()))?
            .grid
            .clone();
        if fields.len() != grid.dim {
            return Err(Error::DimensionMismatch {
                expected: grid.dim,
                got: fields.len(),
            });
        }
        for f in fields {
            grid.ensure_same(&f.grid)?;
        }
        let n = grid.dim;
        let mut components = vec![0.0; n * grid.node_count()];
        for (a, f) in fields.iter().enumerate() {
            for (i, v) in f.values.iter().enumerate() {
                components[i * n + a] = *v;
            }
        }
        Ok(Self { grid, components })
    }

    /// Exterior derivative of a function.
    pub fn exact(f: &ScalarField) -> Self {
        Self::from_components(&gradient(f)).expect("gradient matches grid")
    }

    pub fn component(&self, a: usize) -> ScalarField {
        let n = self.grid.dim;
        ScalarField {
            grid: self.grid.clone(),
            values: (0..self.grid.node_count())
                .map(|i| self.components[i * n + a])
                .collect(),
        }
    }

    pub fn at(&self, node: usize) -> &[f64] {
        let n = self.grid.dim;
        &self.components[node * n..(node + 1) * n]
    }
}

/// Symmetric `dim × dim` tensor per node.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricField {
    pub grid: GridDescriptor,
    /// Row-major `dim × dim` block per node.
    pub entries: Vec<f64>,
}

impl MetricField {
    pub fn new(grid: GridDescriptor, entries: Vec<f64>) -> Result<Self> {
        let n = grid.dim;
        let expected = n * n * grid.node_count();
        if entries.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: entries.len(),
            });
        }
        let m = Self { grid, entries };
        for node in 0..m.grid.node_count() {
            let h = m.matrix(node);
            if (&h - h.transpose()).amax() > 1e-12 * h.amax().max(1.0) {
                return Err(Error::SingularMetric { node });
            }
            if nalgebra::Cholesky::new(h).is_none() {
                return Err(Error::SingularMetric { node });
            }
        }
        Ok(m)
    }

    /// Constant metric `h` at every node.
    pub fn constant(grid: &GridDescriptor, h: &nalgebra::DMatrix<f64>) -> Result<Self> {
        let mut entries = Vec::with_capacity(grid.dim * grid.dim * grid.node_count());
        for _ in 0..grid.node_count() {
            entries.extend(h.transpose().iter());
        }
        Self::new(grid.clone(), entries)
    }

    pub fn matrix(&self, node: usize) -> nalgebra::DMatrix<f64> {
        let n = self.grid.dim;
        nalgebra::DMatrix::from_row_slice(n, n, &self.entries[node * n * n..(node + 1) * n * n])
    }

    pub fn entry(&self, a: usize, b: usize) -> ScalarField {
        let n = self.grid.dim;
        ScalarField {
            grid: self.grid.clone(),
            values: (0..self.grid.node_count())
                .map(|i| self.entries[i * n * n + a * n + b])
                .collect(),
        }
    }

    /// Riemannian volume density `√det h` per node.
    pub fn volume_density(&self) -> ScalarField {
        ScalarField {
            grid: self.grid.clone(),
            values: (0..self.grid.node_count())
                .map(|i| self.matrix(i).determinant().sqrt())
                .collect(),
        }
    }
}

/// Header of the textual field container.
#[derive(Debug, Serialize, Deserialize)]
struct FieldHeader {
    format: String,
    grid: GridDescriptor,
    components: usize,
}

const FIELD_FORMAT: &str = "hslag-field-v1";

/// Write a field as a JSON header line followed by one value per line
/// (row-major nodes, `components` values per node).
pub fn write_field<W: Write>(
    mut w: W,
    grid: &GridDescriptor,
    components: usize,
    values: &[f64],
) -> Result<()> {
    if values.len() != components * grid.node_count() {
        return Err(Error::DimensionMismatch {
            expected: components * grid.node_count(),
            got: values.len(),
        });
    }
    let header = FieldHeader {
        format: FIELD_FORMAT.into(),
        grid: grid.clone(),
        components,
    };
    writeln!(w, "{}", serde_json::to_string(&header)?)?;
    for v in values {
        writeln!(w, "{v:e}")?;
    }
    Ok(())
}

pub fn read_field<R: BufRead>(r: R) -> Result<(GridDescriptor, usize, Vec<f64>)> {
    let mut lines = r.lines();
    let header: FieldHeader = match lines.next() {
        Some(line) => serde_json::from_str(&line?)?,
        None => return Err(Error::Config("empty field file".into())),
    };
    if header.format != FIELD_FORMAT {
        return Err(Error::Config(format!("unknown field format {}", header.format)));
    }
    let grid = GridDescriptor::new(header.grid.sizes.clone(), header.grid.periods.clone())?;
    let grid = match header.grid.quotient {
        Some(q) => grid.with_quotient(q.shift_axes)?,
        None => grid,
    };
    let mut values = Vec::with_capacity(header.components * grid.node_count());
    for line in lines {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        values.push(
            t.parse::<f64>()
                .map_err(|e| Error::Config(format!("bad value {t:?}: {e}")))?,
        );
    }
    if values.len() != header.components * grid.node_count() {
        return Err(Error::DimensionMismatch {
            expected: header.components * grid.node_count(),
            got: values.len(),
        });
    }
    Ok((grid, header.components, values))
}

impl ScalarField {
    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        write_field(w, &self.grid, 1, &self.values)
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let (grid, components, values) = read_field(r)?;
        if components != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: components,
            });
        }
        Self::new(grid, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{PI, TAU};

    #[test]
    fn rejects_bad_grids() {
        assert!(GridDescriptor::new(vec![6], vec![TAU]).is_err());
        assert!(GridDescriptor::new(vec![9], vec![TAU]).is_err());
        assert!(GridDescriptor::new(vec![8], vec![0.0]).is_err());
        assert!(GridDescriptor::new(vec![8, 8], vec![TAU]).is_err());
    }

    #[test]
    fn derivative_of_cosine_is_exact() {
        let grid = GridDescriptor::angular(2, 16).unwrap();
        let f = ScalarField::from_fn(&grid, |x| x[0].cos());
        let df = spectral_derivative(&f, 0).unwrap();
        let exact = ScalarField::from_fn(&grid, |x| -x[0].sin());
        assert!(df.sub(&exact).unwrap().max_abs() <= 1e-12);
        let dy = spectral_derivative(&f, 1).unwrap();
        assert!(dy.max_abs() <= 1e-12);
    }

    #[test]
    fn derivative_respects_period() {
        let grid = GridDescriptor::new(vec![8, 12], vec![2.0, 3.0]).unwrap();
        let f = ScalarField::from_fn(&grid, |x| (TAU * x[1] / 3.0).sin());
        let df = spectral_derivative(&f, 1).unwrap();
        let exact = ScalarField::from_fn(&grid, |x| TAU / 3.0 * (TAU * x[1] / 3.0).cos());
        assert!(df.sub(&exact).unwrap().max_abs() <= 1e-12);
    }

    #[test]
    fn constant_has_zero_derivative() {
        let grid = GridDescriptor::angular(2, 8).unwrap();
        let f = ScalarField::constant(&grid, 3.5);
        for a in 0..2 {
            assert!(spectral_derivative(&f, a).unwrap().max_abs() <= 1e-13);
        }
        assert!(spectral_derivative(&f, 2).is_err());
    }

    #[test]
    fn torus_volume_and_orthogonality() {
        let grid = GridDescriptor::angular(2, 16).unwrap();
        let (a1, a2) = (1.0, 1.3);
        let dvol = ScalarField::constant(&grid, a1 * a2);
        let one = ScalarField::constant(&grid, 1.0);
        let v = l2_inner(&one, &one, &dvol).unwrap();
        assert!((v - TAU * TAU * a1 * a2).abs() < 1e-12);
        let c = ScalarField::from_fn(&grid, |x| x[0].cos());
        let s = ScalarField::from_fn(&grid, |x| x[0].sin());
        assert!(l2_inner(&c, &s, &dvol).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn quotient_partner_shifts_half_period() {
        let grid = GridDescriptor::angular(2, 8)
            .unwrap()
            .with_quotient(vec![true, true])
            .unwrap();
        let p = grid.partner(grid.flat_index(&[1, 2])).unwrap();
        assert_eq!(grid.multi_index(p), vec![5, 6]);
        let f = ScalarField::from_fn(&grid, |x| (x[0] + x[1]).cos());
        assert!(f.quotient_defect() < 1e-12);
        let g = ScalarField::from_fn(&grid, |x| x[0].cos());
        assert!(g.quotient_defect() > 1.0);
        assert!(g.symmetrized().max_abs() < 1e-12);
        let one = ScalarField::constant(&grid, 1.0);
        let vol = integrate(&one, &one).unwrap();
        assert!((vol - 2.0 * PI * PI).abs() < 1e-12);
    }

    #[test]
    fn metric_field_rejects_indefinite() {
        let grid = GridDescriptor::angular(1, 8).unwrap();
        let bad = nalgebra::DMatrix::from_element(1, 1, -1.0);
        assert!(MetricField::constant(&grid, &bad).is_err());
    }

    #[test]
    fn field_text_roundtrip() {
        let grid = GridDescriptor::angular(2, 8)
            .unwrap()
            .with_quotient(vec![true, true])
            .unwrap();
        let f = ScalarField::from_fn(&grid, |x| (x[0] - 2.0 * x[1]).sin() / 3.0);
        let mut buf = Vec::new();
        f.write_to(&mut buf).unwrap();
        let g = ScalarField::read_from(&buf[..]).unwrap();
        assert_eq!(f, g);
    }
}
