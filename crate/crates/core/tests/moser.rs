use hslag::ambient::{
    moser_flow, omega0, pullback_defect, BallSamples, ClosedTwoForm, ConformalPerturbation,
    MoserConfig,
};
use nalgebra::DMatrix;

fn form() -> ConformalPerturbation {
    ConformalPerturbation {
        dim: 4,
        epsilon: 0.1,
        kappa: 0.5,
    }
}

/// Jacobian of the sampled time-one map by central differences of the flow
/// itself, independent of the variational equation integrated alongside.
fn fd_jacobian(form: &dyn ClosedTwoForm, cfg: &MoserConfig, z: &[f64], h: f64) -> DMatrix<f64> {
    let d = z.len();
    let mut pts = Vec::new();
    for k in 0..d {
        for s in [1.0, -1.0] {
            let mut p = z.to_vec();
            p[k] += s * h;
            pts.push(p);
        }
    }
    let r = moser_flow(form, cfg, &pts).unwrap();
    let mut jac = DMatrix::zeros(d, d);
    for k in 0..d {
        for i in 0..d {
            jac[(i, k)] = (r.images[2 * k][i] - r.images[2 * k + 1][i]) / (2.0 * h);
        }
    }
    jac
}

#[test]
fn pullback_of_perturbed_form_is_standard_on_inner_ball() {
    let f = form();
    let cfg = MoserConfig::default();
    let samples = BallSamples::lattice(4, 0.5, 3);
    let r = moser_flow(&f, &cfg, &samples).unwrap();
    assert!(pullback_defect(&f, &r.images, &r.jacobians) < 1e-9);

    let om = omega0(4);
    let mut worst: f64 = 0.0;
    for (z, y) in samples.iter().zip(&r.images).step_by(7) {
        let jac = fd_jacobian(&f, &cfg, z, 1e-4);
        worst = worst.max((jac.transpose() * f.matrix(y) * &jac - &om).amax());
    }
    assert!(worst < 1e-6, "finite-difference pullback defect {worst:.3e}");
}

#[test]
fn flow_is_tangent_to_identity_at_origin() {
    let f = form();
    let cfg = MoserConfig::default();
    let r = moser_flow(&f, &cfg, &[vec![0.0; 4]]).unwrap();
    assert!(r.images[0].iter().all(|v| v.abs() <= 1e-8));
    let jac = fd_jacobian(&f, &cfg, &[0.0; 4], 1e-4);
    assert!((jac - DMatrix::identity(4, 4)).amax() <= 1e-8);
}

#[test]
fn fixed_step_refinement_converges_at_high_order() {
    let f = form();
    let samples = vec![vec![0.4, -0.3, 0.2, 0.35], vec![-0.2, 0.45, 0.3, -0.1]];
    let defect = |n: usize| {
        let cfg = MoserConfig {
            fixed_steps: Some(n),
            ..MoserConfig::default()
        };
        let r = moser_flow(&f, &cfg, &samples).unwrap();
        pullback_defect(&f, &r.images, &r.jacobians)
    };
    let coarse = defect(2);
    let fine = defect(4);
    let order = (coarse / fine).log2();
    assert!(order >= 3.0, "observed order {order:.2} ({coarse:.3e} -> {fine:.3e})");
}
