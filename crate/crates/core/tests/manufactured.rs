//! Manufactured solutions: forcing chosen so that a known path solves the
//! Galerkin system exactly; the scheme error must shrink at first order.

use std::sync::Arc;

use spe2d::integrator::{run_trajectory, Forcing, GalerkinModel, RunOptions};
use spe2d::noise::NoiseModel;
use spe2d::operators::{apply_n, DriftTerms};
use spe2d::spectral::{EigenBasis, EigenMethod};
use spe2d::DomainSpec;

fn final_error(model_for: &dyn Fn(usize) -> GalerkinModel, exact: &dyn Fn(f64) -> Vec<f64>, dt: f64, steps: usize) -> f64 {
    let m = model_for(0);
    let rec = run_trajectory(&m, exact(0.0), &RunOptions::new(dt, steps)).unwrap();
    let want = exact(dt * steps as f64);
    rec.final_state.coeffs.iter().zip(&want).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn stokes_path_converges_at_first_order() {
    let d = DomainSpec::unit(10).build().unwrap();
    let b = EigenBasis::build(&d, Some(12), EigenMethod::Separable).unwrap();
    let (l1, l2) = (b.lambdas[0], b.lambdas[1]);
    let (p1, p2) = (b.mode(0), b.mode(1));
    let forcing = Forcing::Custom(Arc::new(move |t: f64| {
        let a = -t.sin() + l1 * t.cos();
        let c = 2.0 * (2.0 * t).cos() + l2 * (2.0 * t).sin();
        p1.scaled(a).axpy(c, &p2).unwrap()
    }));
    let model = |_| GalerkinModel::new(&b, 12, NoiseModel::zero(&d), forcing.clone(), DriftTerms::NONE).unwrap();
    let exact = |t: f64| {
        let mut c = vec![0.0; 12];
        c[0] = t.cos();
        c[1] = (2.0 * t).sin();
        c
    };
    let errs: Vec<f64> = [(0.02, 50), (0.01, 100), (0.005, 200)].iter().map(|&(dt, n)| final_error(&model, &exact, dt, n)).collect();
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((0.9..1.2).contains(&order), "{errs:?}");
    }
}

#[test]
fn nonlinear_path_converges_at_first_order() {
    let d = DomainSpec::unit(10).build().unwrap();
    let b = EigenBasis::build(&d, Some(15), EigenMethod::Separable).unwrap();
    // first velocity mode, so advection, Coriolis and buoyancy all act
    let k = b.blocks.iter().position(|bl| *bl == spe2d::spectral::Block::U).unwrap();
    let (lk, phi) = (b.lambdas[k], b.mode(k));
    let amp = |t: f64| 1.0 + 0.5 * t.sin();
    let forcing = Forcing::Custom(Arc::new(move |t: f64| {
        let a = amp(t);
        let state = phi.scaled(a);
        let n = apply_n(&state).unwrap();
        phi.scaled(0.5 * t.cos() + lk * a).axpy(1.0, &n).unwrap()
    }));
    let model = |_| GalerkinModel::new(&b, 15, NoiseModel::zero(&d), forcing.clone(), DriftTerms::default()).unwrap();
    let exact = |t: f64| {
        let mut c = vec![0.0; 15];
        c[k] = amp(t);
        c
    };
    let errs: Vec<f64> = [(0.02, 25), (0.01, 50), (0.005, 100)].iter().map(|&(dt, n)| final_error(&model, &exact, dt, n)).collect();
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((0.85..1.3).contains(&order), "{errs:?}");
    }
}
