//! Moser's method on a ball: given a closed `ω` with `ω(0) = ω₀`, flow along
//! `vˢ` with `ι_{vˢ}ωˢ = ζ`, `dζ = ω₀ − ω`, `ωˢ = (1−s)ω₀ + sω`, so that the
//! time-one map `φ` satisfies `φ*ω = ω₀`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use super::omega0;
use crate::error::{Error, Result};

/// A closed 2-form on a ball, given by its antisymmetric coefficient matrix
/// `W(z)` (so `ω(u, v) = uᵀW(z)v`) and the partial derivatives of `W`.
pub trait ClosedTwoForm: Send + Sync {
    fn dim(&self) -> usize;
    fn matrix(&self, z: &[f64]) -> DMatrix<f64>;
    fn derivative(&self, z: &[f64], k: usize) -> DMatrix<f64>;
}

#[derive(Clone, Debug)]
pub struct StandardForm {
    pub dim: usize,
}

impl ClosedTwoForm for StandardForm {
    fn dim(&self) -> usize {
        self.dim
    }

    fn matrix(&self, _z: &[f64]) -> DMatrix<f64> {
        omega0(self.dim)
    }

    fn derivative(&self, _z: &[f64], _k: usize) -> DMatrix<f64> {
        DMatrix::zeros(self.dim, self.dim)
    }
}

/// `ω₀ + ε·d(φλ)` with `λ = ½Σ(x dy − y dx)` (so `dλ = ω₀`) and
/// `φ = |z|² + κ z₀² z₁`. Exact, hence closed, and `ω − ω₀ = O(|z|²)`.
#[derive(Clone, Debug)]
pub struct ConformalPerturbation {
    pub dim: usize,
    pub epsilon: f64,
    pub kappa: f64,
}

impl ConformalPerturbation {
    fn phi_grad_hess(&self, z: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
        let d = self.dim;
        let k = self.kappa;
        let phi = z.iter().map(|v| v * v).sum::<f64>() + k * z[0] * z[0] * z[1];
        let mut grad = DVector::from_fn(d, |i, _| 2.0 * z[i]);
        grad[0] += 2.0 * k * z[0] * z[1];
        grad[1] += k * z[0] * z[0];
        let mut hess = DMatrix::identity(d, d) * 2.0;
        hess[(0, 0)] += 2.0 * k * z[1];
        hess[(0, 1)] += 2.0 * k * z[0];
        hess[(1, 0)] += 2.0 * k * z[0];
        (phi, grad, hess)
    }

    fn lambda(&self, z: &[f64]) -> DVector<f64> {
        omega0(self.dim).transpose() * DVector::from_column_slice(z) * 0.5
    }
}

impl ClosedTwoForm for ConformalPerturbation {
    fn dim(&self) -> usize {
        self.dim
    }

    fn matrix(&self, z: &[f64]) -> DMatrix<f64> {
        let (phi, grad, _) = self.phi_grad_hess(z);
        let lam = self.lambda(z);
        omega0(self.dim) * (1.0 + self.epsilon * phi)
            + (&grad * lam.transpose() - &lam * grad.transpose()) * self.epsilon
    }

    fn derivative(&self, z: &[f64], k: usize) -> DMatrix<f64> {
        let (_, grad, hess) = self.phi_grad_hess(z);
        let lam = self.lambda(z);
        let om = omega0(self.dim);
        let dlam = om.row(k).transpose() * 0.5;
        let dgrad = hess.column(k).into_owned();
        (om * grad[k]
            + &dgrad * lam.transpose()
            + &grad * dlam.transpose()
            - &dlam * grad.transpose()
            - &lam * dgrad.transpose())
            * self.epsilon
    }
}

/// Largest cyclic sum `∂ᵢW_jk + ∂ⱼW_ki + ∂ₖW_ij` at the given points, with
/// the derivatives taken by fourth-order central differences of `W`.
pub fn closedness_defect(form: &dyn ClosedTwoForm, points: &[Vec<f64>], h: f64) -> f64 {
    let d = form.dim();
    let mut worst = 0.0_f64;
    for z in points {
        let partial: Vec<DMatrix<f64>> = (0..d)
            .map(|i| {
                let mut acc = DMatrix::zeros(d, d);
                for (off, w) in [(-2.0, 1.0), (-1.0, -8.0), (1.0, 8.0), (2.0, -1.0)] {
                    let mut y = z.clone();
                    y[i] += off * h;
                    acc += form.matrix(&y) * w;
                }
                acc / (12.0 * h)
            })
            .collect();
        for i in 0..d {
            for j in i + 1..d {
                for k in j + 1..d {
                    let c = partial[i][(j, k)] + partial[j][(k, i)] + partial[k][(i, j)];
                    worst = worst.max(c.abs());
                }
            }
        }
    }
    worst
}

/// `max |Dφᵀ W(φ) Dφ − Ω₀|` over samples.
pub fn pullback_defect(form: &dyn ClosedTwoForm, images: &[Vec<f64>], jacobians: &[DMatrix<f64>]) -> f64 {
    let om = omega0(form.dim());
    images
        .iter()
        .zip(jacobians)
        .map(|(y, dphi)| (dphi.transpose() * form.matrix(y) * dphi - &om).amax())
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, Serialize)]
pub struct MoserConfig {
    pub radius: f64,
    /// Local error tolerance of the adaptive integrator.
    pub tolerance: f64,
    /// Uniform RK4 steps instead of adaptive stepping.
    pub fixed_steps: Option<usize>,
    /// Smallest admissible `|det Wˢ|` along trajectories.
    pub min_determinant: f64,
}

impl Default for MoserConfig {
    fn default() -> Self {
        Self {
            radius: 1.0,
            tolerance: 1e-12,
            fixed_steps: None,
            min_determinant: 1e-6,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MoserResult {
    pub points: Vec<Vec<f64>>,
    pub images: Vec<Vec<f64>>,
    #[serde(skip)]
    pub jacobians: Vec<DMatrix<f64>>,
    /// Accepted integration steps summed over samples.
    pub steps: usize,
}

// Gauss–Legendre nodes and weights on [0, 1] (8 points).
const GL_X: [f64; 8] = [
    0.019_855_071_751_231_856,
    0.101_666_761_293_186_63,
    0.237_233_795_041_835_5,
    0.408_282_678_752_175_1,
    0.591_717_321_247_825,
    0.762_766_204_958_164_5,
    0.898_333_238_706_813_4,
    0.980_144_928_248_768_2,
];
const GL_W: [f64; 8] = [
    0.050_614_268_145_188_13,
    0.111_190_517_226_687_24,
    0.156_853_322_938_943_64,
    0.181_341_891_689_181,
    0.181_341_891_689_181,
    0.156_853_322_938_943_64,
    0.111_190_517_226_687_24,
    0.050_614_268_145_188_13,
];

struct Field<'a> {
    form: &'a dyn ClosedTwoForm,
    omega0: DMatrix<f64>,
    min_det: f64,
}

impl Field<'_> {
    /// `σ = ω₀ − ω` as a matrix and its partial derivatives.
    fn sigma(&self, z: &[f64]) -> DMatrix<f64> {
        &self.omega0 - self.form.matrix(z)
    }

    /// Radial primitive `ζ(z) = ∫₀¹ s σ(sz)(z, ·) ds` and its Jacobian.
    fn zeta(&self, z: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let d = z.len();
        let mut zeta = DVector::zeros(d);
        let mut dzeta = DMatrix::zeros(d, d);
        for (&s, &w) in GL_X.iter().zip(&GL_W) {
            let sz: Vec<f64> = z.iter().map(|v| v * s).collect();
            let sig = self.sigma(&sz);
            zeta += sig.transpose() * z * (w * s);
            for k in 0..d {
                let dsig = -self.form.derivative(&sz, k);
                let col = dsig.transpose() * z * (w * s * s) + sig.row(k).transpose() * (w * s);
                let mut target = dzeta.column_mut(k);
                target += col;
            }
        }
        (zeta, dzeta)
    }

    /// `vˢ = (Wˢ)^{−T}ζ` and `Dvˢ`.
    fn velocity(&self, s: f64, z: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let d = z.len();
        let zs = z.as_slice();
        let w = &self.omega0 * (1.0 - s) + self.form.matrix(zs) * s;
        let det = w.determinant();
        if !(det.abs() >= self.min_det) {
            return Err(Error::Degenerate(format!(
                "interpolated form is degenerate at {zs:?} (s = {s}, det = {det:.3e})"
            )));
        }
        let wt_inv = w
            .transpose()
            .try_inverse()
            .ok_or_else(|| Error::Degenerate("interpolated form is singular".into()))?;
        let (zeta, dzeta) = self.zeta(z);
        let v = &wt_inv * &zeta;
        let mut dv = DMatrix::zeros(d, d);
        for k in 0..d {
            let dw = self.form.derivative(zs, k) * s;
            let col = &wt_inv * (dzeta.column(k) - dw.transpose() * &v);
            dv.set_column(k, &col);
        }
        Ok((v, dv))
    }

    fn rhs(&self, s: f64, y: &(DVector<f64>, DMatrix<f64>)) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (v, dv) = self.velocity(s, &y.0)?;
        Ok((v, dv * &y.1))
    }

    fn rk4(&self, s: f64, h: f64, y: &(DVector<f64>, DMatrix<f64>)) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let add = |y: &(DVector<f64>, DMatrix<f64>), k: &(DVector<f64>, DMatrix<f64>), c: f64| {
            (&y.0 + &k.0 * c, &y.1 + &k.1 * c)
        };
        let k1 = self.rhs(s, y)?;
        let k2 = self.rhs(s + 0.5 * h, &add(y, &k1, 0.5 * h))?;
        let k3 = self.rhs(s + 0.5 * h, &add(y, &k2, 0.5 * h))?;
        let k4 = self.rhs(s + h, &add(y, &k3, h))?;
        Ok((
            &y.0 + (k1.0 + k2.0 * 2.0 + k3.0 * 2.0 + k4.0) * (h / 6.0),
            &y.1 + (k1.1 + k2.1 * 2.0 + k3.1 * 2.0 + k4.1) * (h / 6.0),
        ))
    }
}

fn state_diff(a: &(DVector<f64>, DMatrix<f64>), b: &(DVector<f64>, DMatrix<f64>)) -> f64 {
    (&a.0 - &b.0).amax().max((&a.1 - &b.1).amax())
}

/// Time-one Moser map and its Jacobian at each sample point.
pub fn moser_flow(form: &dyn ClosedTwoForm, config: &MoserConfig, samples: &[Vec<f64>]) -> Result<MoserResult> {
    let d = form.dim();
    let om = omega0(d);
    let origin_defect = (form.matrix(&vec![0.0; d]) - &om).amax();
    if origin_defect > 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "form differs from the standard form at the origin by {origin_defect:.3e}"
        )));
    }
    let field = Field {
        form,
        omega0: om,
        min_det: config.min_determinant,
    };
    let r2 = config.radius * config.radius;
    let results: Vec<(Vec<f64>, DMatrix<f64>, usize)> = samples
        .par_iter()
        .map(|z0| -> Result<_> {
            if z0.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: z0.len(),
                });
            }
            let mut y = (DVector::from_column_slice(z0), DMatrix::identity(d, d));
            let mut s = 0.0;
            let mut steps = 0;
            let check = |y: &(DVector<f64>, DMatrix<f64>)| -> Result<()> {
                if y.0.norm_squared() > r2 {
                    Err(Error::ChartDomain(format!("trajectory from {z0:?} leaves the ball")))
                } else {
                    Ok(())
                }
            };
            match config.fixed_steps {
                Some(n) => {
                    let h = 1.0 / n as f64;
                    for i in 0..n {
                        y = field.rk4(i as f64 * h, h, &y)?;
                        check(&y)?;
                    }
                    steps = n;
                }
                None => {
                    let mut h: f64 = 0.125;
                    while s < 1.0 {
                        h = h.min(1.0 - s);
                        let full = field.rk4(s, h, &y)?;
                        let half = field.rk4(s, 0.5 * h, &y)?;
                        let two = field.rk4(s + 0.5 * h, 0.5 * h, &half)?;
                        let err = state_diff(&full, &two) / 15.0;
                        if err <= config.tolerance || h < 1e-6 {
                            y = two;
                            s += h;
                            steps += 1;
                            check(&y)?;
                        }
                        let factor = if err == 0.0 {
                            2.0
                        } else {
                            (0.9 * (config.tolerance / err).powf(0.2)).clamp(0.2, 2.0)
                        };
                        h *= factor;
                    }
                }
            }
            Ok((y.0.as_slice().to_vec(), y.1, steps))
        })
        .collect::<Result<_>>()?;
    let steps = results.iter().map(|r| r.2).sum();
    let (images, jacobians): (Vec<_>, Vec<_>) = results.into_iter().map(|(a, b, _)| (a, b)).unzip();
    Ok(MoserResult {
        points: samples.to_vec(),
        images,
        jacobians,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn form() -> ConformalPerturbation {
        ConformalPerturbation {
            dim: 4,
            epsilon: 0.1,
            kappa: 0.5,
        }
    }

    #[test]
    fn perturbation_is_closed_and_standard_at_origin() {
        let f = form();
        let pts = vec![vec![0.1, -0.2, 0.3, 0.05], vec![0.4, 0.1, -0.2, 0.3]];
        assert!(closedness_defect(&f, &pts, 1e-3) < 1e-10);
        assert!((f.matrix(&[0.0; 4]) - omega0(4)).amax() == 0.0);
    }

    #[test]
    fn analytic_form_derivative_matches_differences() {
        let f = form();
        let z = [0.2, -0.1, 0.3, 0.4];
        for k in 0..4 {
            let mut a = z.to_vec();
            let mut b = z.to_vec();
            a[k] += 1e-6;
            b[k] -= 1e-6;
            let fd = (f.matrix(&a) - f.matrix(&b)) / 2e-6;
            assert!((fd - f.derivative(&z, k)).amax() < 1e-8);
        }
    }

    #[test]
    fn primitive_differentiates_to_sigma() {
        let f = form();
        let field = Field {
            form: &f,
            omega0: omega0(4),
            min_det: 0.0,
        };
        let z = DVector::from_column_slice(&[0.3, 0.2, -0.1, 0.25]);
        let (_, dz) = field.zeta(&z);
        // dζ(e_i, e_j) = ∂ᵢζⱼ − ∂ⱼζᵢ.
        let curl = dz.transpose() - &dz;
        assert!((curl - field.sigma(z.as_slice())).amax() < 1e-12);
    }

    #[test]
    fn standard_form_gives_identity_flow() {
        let f = StandardForm { dim: 4 };
        let pts = vec![vec![0.1, 0.2, -0.3, 0.1]];
        let r = moser_flow(&f, &MoserConfig::default(), &pts).unwrap();
        assert_eq!(r.images[0], pts[0]);
        assert!((&r.jacobians[0] - DMatrix::identity(4, 4)).amax() == 0.0);
    }

    #[test]
    fn flow_fixes_origin_to_first_order() {
        let r = moser_flow(&form(), &MoserConfig::default(), &[vec![0.0; 4]]).unwrap();
        assert!(r.images[0].iter().all(|v| v.abs() < 1e-14));
        assert!((&r.jacobians[0] - DMatrix::identity(4, 4)).amax() < 1e-12);
    }

    #[test]
    fn degenerate_interpolation_is_reported() {
        let f = ConformalPerturbation {
            dim: 2,
            epsilon: -8.0,
            kappa: 0.0,
        };
        let cfg = MoserConfig {
            radius: 2.0,
            ..MoserConfig::default()
        };
        assert!(moser_flow(&f, &cfg, &[vec![0.6, 0.0]]).is_err());
    }
}
