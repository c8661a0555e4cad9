//! Diagnostics of the global-existence argument: the coupled split
//! `U = U_hat + U_check`, the random-PDE defect of `U_hat`, the anisotropic
//! energy identities for `d_z u_hat` and `d_x u_hat` term by term, the
//! Gronwall coefficient processes, the monitors `X1`, `X2`, `X`, and the
//! stopping-time and stochastic Gronwall benches.
//!
//! `U_check` solves `dU_check + A U_check dt = sigma(U) dW` from zero with the
//! same scheme and the same projected noise as `U`; `U_hat` is advanced by
//! the noiseless remainder, so the split can be checked to round-off.

pub mod bench;

use serde::Serialize;

use crate::domain::{ScalarField, StateField};
use crate::error::{Error, Result};
use crate::integrator::{spectral_norms, GalerkinModel, RunOptions, RunStatus, BLOWUP_FACTOR};
use crate::noise::NoiseStream;
use crate::operators::{apply_ap, apply_b_unchecked, apply_e};
use crate::operators::probes::vertical_remainder;

/// Paired trajectories on one noise path, coefficients at every step.
#[derive(Clone, Debug, Serialize)]
pub struct DecompositionRun {
    pub dt: f64,
    pub order: usize,
    pub times: Vec<f64>,
    /// `U`.
    pub full: Vec<Vec<f64>>,
    /// `U_check`.
    pub linear: Vec<Vec<f64>>,
    /// `U_hat`, advanced separately.
    pub remainder: Vec<Vec<f64>>,
    /// `|U_hat + U_check - U|_H / max(1, |U|_H)` per step.
    pub split_defect: Vec<f64>,
    pub status: RunStatus,
}

impl DecompositionRun {
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Advances `U`, `U_check` and `U_hat` on the run's noise stream. After a
/// blowup of `U` nothing advances further, so `U_check` stays frozen.
pub fn run_coupled_decomposition(model: &GalerkinModel, c0: Vec<f64>, opts: &RunOptions) -> Result<DecompositionRun> {
    opts.validate()?;
    let n = model.order();
    if c0.len() != n {
        return Err(Error::arg("initial coefficients do not match the Galerkin order"));
    }
    let dt = opts.dt;
    let k = model.noise.modes();
    let lam = model.lambdas().to_vec();
    let scale = l2(&c0).max(1.0);
    let mut stream = NoiseStream::new(opts.seed, opts.trajectory);
    let mut run = DecompositionRun {
        dt,
        order: n,
        times: vec![0.0],
        full: vec![c0.clone()],
        linear: vec![vec![0.0; n]],
        remainder: vec![c0],
        split_defect: vec![0.0],
        status: RunStatus::Completed,
    };
    for j in 0..opts.steps {
        let t = j as f64 * dt;
        let dw = if k > 0 { stream.increments(j as u64, k, dt)? } else { vec![] };
        let c = &run.full[j];
        let parts = model.step_parts(c, t, &dw);
        let next = model.advance(c, &parts, dt);
        let e = l2(&next);
        if !e.is_finite() || e > BLOWUP_FACTOR * scale {
            run.status = RunStatus::NumericalBlowup { step: j + 1 };
            break;
        }
        let lin: Vec<f64> = (0..n).map(|i| (run.linear[j][i] + parts.noise[i]) / (1.0 + dt * lam[i])).collect();
        let rem: Vec<f64> = (0..n).map(|i| (run.remainder[j][i] + dt * parts.drift[i]) / (1.0 + dt * lam[i])).collect();
        let defect: Vec<f64> = (0..n).map(|i| rem[i] + lin[i] - next[i]).collect();
        run.split_defect.push(l2(&defect) / e.max(1.0));
        run.times.push((j + 1) as f64 * dt);
        run.full.push(next);
        run.linear.push(lin);
        run.remainder.push(rem);
    }
    Ok(run)
}

/// Per-step defect series with its time-weighted `L1` norm.
#[derive(Clone, Debug, Serialize)]
pub struct DefectSeries {
    pub per_step: Vec<f64>,
    pub l1: f64,
}

impl DefectSeries {
    fn new(per_step: Vec<f64>, dt: f64) -> Self {
        let l1 = dt * per_step.iter().map(|v| v.abs()).sum::<f64>();
        DefectSeries { per_step, l1 }
    }
}

/// The parts of `N` split along `U = U_hat + U_check`, projected.
struct SplitDrift {
    /// `A_p U_hat + B(U_hat, U_hat) + E U_hat`.
    own: StateField,
    /// `B(Uc, Uc) + B(Uc, Uh) + B(Uh, Uc) + E Uc + A_p Uc`.
    cross: StateField,
}

fn split_drift(model: &GalerkinModel, hat: &StateField, check: &StateField) -> SplitDrift {
    let d = hat.domain();
    let mut own = StateField::zeros(d);
    let mut cross = StateField::zeros(d);
    let terms = model.terms;
    if terms.advection {
        own.add_assign_scaled(1.0, &apply_b_unchecked(hat, hat));
        cross.add_assign_scaled(1.0, &apply_b_unchecked(check, check));
        cross.add_assign_scaled(1.0, &apply_b_unchecked(check, hat));
        cross.add_assign_scaled(1.0, &apply_b_unchecked(hat, check));
    }
    if terms.buoyancy {
        own.add_assign_scaled(1.0, &apply_ap(hat));
        cross.add_assign_scaled(1.0, &apply_ap(check));
    }
    if terms.coriolis {
        own.add_assign_scaled(1.0, &apply_e(hat));
        cross.add_assign_scaled(1.0, &apply_e(check));
    }
    SplitDrift { own, cross }
}

/// Defect of `dU_hat/dt + A U_hat + A_p U_hat + B(U_hat) + E U_hat = F - (cross terms)`
/// with a forward difference in time and the right side at the left end.
pub fn uhat_residual(model: &GalerkinModel, run: &DecompositionRun) -> Result<DefectSeries> {
    check_run(model, run)?;
    let lam = model.lambdas();
    let dt = run.dt;
    let mut out = Vec::with_capacity(run.steps());
    for j in 0..run.steps() {
        let (c, c1) = (&run.remainder[j], &run.remainder[j + 1]);
        let hat = model.synthesize(c);
        let check = model.synthesize(&run.linear[j]);
        let sd = split_drift(model, &hat, &check);
        let own = model.basis.project(&sd.own);
        let cross = model.basis.project(&sd.cross);
        let f = model.forcing.at(run.times[j]).map(|f| model.basis.project(&f)).unwrap_or_else(|| vec![0.0; c.len()]);
        let d: Vec<f64> = (0..c.len())
            .map(|i| (c1[i] - c[i]) / dt + lam[i] * c[i] + own[i] - f[i] + cross[i])
            .collect();
        out.push(l2(&d));
    }
    Ok(DefectSeries::new(out, dt))
}

fn check_run(model: &GalerkinModel, run: &DecompositionRun) -> Result<()> {
    if run.order != model.order() {
        return Err(Error::arg("run and model have different Galerkin orders"));
    }
    if run.full.len() != run.times.len() || run.linear.len() != run.times.len() || run.remainder.len() != run.times.len() {
        return Err(Error::arg("decomposition run is missing snapshots"));
    }
    Ok(())
}

/// Squared norms of `u_hat` and `U_check` at one step. Derivative norms are
/// unweighted; `nu` enters only the identities.
#[derive(Clone, Debug, Default, Serialize)]
pub struct NormRow {
    pub t: f64,
    /// `|d_z u_hat|^2`.
    pub dz_l2: f64,
    /// `||d_z u_hat||^2`.
    pub dz_h1: f64,
    /// `|d_x u_hat|^2`.
    pub dx_l2: f64,
    /// `||d_x u_hat||^2`.
    pub dx_h1: f64,
    /// `|U_check|_(2)^2`.
    pub check_h2: f64,
    /// `|u_hat|^2` on the surface.
    pub surface: f64,
    /// `|d_x u_hat|^2` on the surface.
    pub surface_dx: f64,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub r4: f64,
}

/// One step of the `d_z u_hat` identity:
/// `lhs_rate + viscous + boundary = sum j`, `residual = lhs - rhs`.
#[derive(Clone, Debug, Serialize)]
pub struct IdentityRow {
    pub t: f64,
    /// Forward difference of half the energy.
    pub lhs_rate: f64,
    pub viscous: f64,
    pub boundary: f64,
    pub j: Vec<f64>,
    pub residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AnisotropicReport {
    pub norms: Vec<NormRow>,
    /// Terms: projection, forcing, buoyancy, Coriolis, self-advection,
    /// check-check, check-hat, hat-check.
    pub dz: Vec<IdentityRow>,
    /// Terms: buoyancy, forcing, Coriolis, self-advection, check-check,
    /// check-hat, hat-check.
    pub dx: Vec<IdentityRow>,
    /// Closed boundary form of the self-advection term of the `d_z`
    /// identity, per step.
    pub dz_self_closed: Vec<f64>,
}

impl AnisotropicReport {
    pub fn dz_residual(&self, dt: f64) -> DefectSeries {
        DefectSeries::new(self.dz.iter().map(|r| r.residual).collect(), dt)
    }

    pub fn dx_residual(&self, dt: f64) -> DefectSeries {
        DefectSeries::new(self.dx.iter().map(|r| r.residual).collect(), dt)
    }
}

/// `sum_cells (Delta_x phi_top)^2 / dx`.
fn surface_dx_sq(f: &ScalarField) -> f64 {
    let d = f.domain();
    let top = f.surface_trace();
    (0..d.nx()).map(|i| (top[i + 1] - top[i]).powi(2)).sum::<f64>() / d.dx
}

struct Pieces {
    hat: StateField,
    gz: ScalarField,
    gx: ScalarField,
    norms: NormRow,
    /// `E_z = |d_z u|^2 + alpha |u|^2_surface`.
    ez: f64,
    /// `E_x = |d_x u|^2`.
    ex: f64,
}

fn pieces(model: &GalerkinModel, run: &DecompositionRun, j: usize) -> Pieces {
    let p = *model.basis.domain().physics();
    let lam = model.lambdas();
    let hat = model.synthesize(&run.remainder[j]);
    let check = model.synthesize(&run.linear[j]);
    let u = &hat.u;
    let gz = u.dzz_closed().expect("velocity tag").scaled(-1.0);
    let gx = u.dxx_closed().expect("velocity tag").scaled(-1.0);
    let mixed_full = gx.inner_unchecked(&gz);
    let surface_dx = surface_dx_sq(u);
    let mixed = mixed_full - p.alpha_v * surface_dx;
    let dz_l2 = u.grad_z_form(u);
    let dx_l2 = u.grad_x_form(u);
    let surface = u.surface_inner(u).unwrap();
    let dz_h1 = gz.inner_unchecked(&gz) + mixed;
    let dx_h1 = gx.inner_unchecked(&gx) + mixed;
    let (hat_h, hat_v, _) = spectral_norms(lam, &run.remainder[j]);
    let (_, check_v, _) = spectral_norms(lam, &run.linear[j]);
    let check_h2 = check.norm_h2_sq();
    let norms = NormRow {
        t: run.times[j],
        dz_l2,
        dz_h1,
        dx_l2,
        dx_h1,
        check_h2,
        surface,
        surface_dx,
        r1: hat_v + check_h2,
        r2: (1.0 + hat_h) * hat_v + (1.0 + hat_v + check_v) * check_h2,
        r3: hat_h * hat_v + dz_h1,
        r4: hat_v + check_v + check_v * check_h2 + hat_v * check_h2,
    };
    Pieces { ez: dz_l2 + p.alpha_v * surface, ex: dx_l2, hat, gz, gx, norms }
}

fn u_only(template: &StateField, u: ScalarField) -> StateField {
    let mut s = StateField::zeros(template.domain());
    s.u = u;
    s
}

/// Evaluates both anisotropic identities on a decomposition run.
///
/// The test functions are the Galerkin projections `Psi_z = P_n Q (-d_zz u_hat)`
/// and `Psi_x = P_n (-d_xx u_hat)`, so the left sides are exact discrete
/// derivatives of `E_z` and `E_x` and every right-side term is an inner
/// product with the test function.
pub fn anisotropic_identity_residuals(model: &GalerkinModel, run: &DecompositionRun) -> Result<AnisotropicReport> {
    check_run(model, run)?;
    let p = *model.basis.domain().physics();
    let dt = run.dt;
    let nu = p.nu;
    let all: Vec<Pieces> = (0..run.times.len()).map(|j| pieces(model, run, j)).collect();
    let mut dz = Vec::new();
    let mut dx = Vec::new();
    let mut closed = Vec::new();
    for j in 0..run.steps() {
        let pc = &all[j];
        let hat = &pc.hat;
        let check = model.synthesize(&run.linear[j]);
        let full = model.synthesize(&run.full[j]);
        let psi_z = model.basis.project_pn(&u_only(hat, pc.gz.velocity_projection()), model.order());
        let psi_x = model.basis.project_pn(&u_only(hat, pc.gx.clone()), model.order());
        let ip = |a: &StateField, psi: &StateField| a.u.inner_unchecked(&psi.u);
        let terms = model.terms;
        let forcing = model.forcing.at(run.times[j]);
        let fz = forcing.as_ref().map_or(0.0, |f| ip(f, &psi_z));
        let fx = forcing.as_ref().map_or(0.0, |f| ip(f, &psi_x));
        let buoy = terms.buoyancy.then(|| apply_ap(&full));
        let cor = terms.coriolis.then(|| apply_e(&full));
        let adv = |a: &StateField, b: &StateField| terms.advection.then(|| apply_b_unchecked(a, b));
        let advs = [adv(hat, hat), adv(&check, &check), adv(&check, hat), adv(hat, &check)];
        let neg = |f: &Option<StateField>, psi: &StateField| f.as_ref().map_or(0.0, |f| -ip(f, psi));

        // projection term: nu <L u, (I - Q) G_z u>
        let lap = pc.gz.scaled(-1.0).axpy(-1.0, &pc.gx).unwrap();
        let gz_rest = pc.gz.axpy(-1.0, &pc.gz.velocity_projection()).unwrap();
        let j1 = -nu * lap.inner_unchecked(&gz_rest);
        let mut jz = vec![j1, fz, neg(&buoy, &psi_z), neg(&cor, &psi_z)];
        jz.extend(advs.iter().map(|a| neg(a, &psi_z)));
        let lhs_z = 0.5 * (all[j + 1].ez - pc.ez) / dt;
        let viscous_z = nu * pc.norms.dz_h1;
        let boundary = nu * p.alpha_v * pc.norms.surface_dx;
        let rz = lhs_z + viscous_z + boundary - jz.iter().sum::<f64>();
        dz.push(IdentityRow { t: run.times[j], lhs_rate: lhs_z, viscous: viscous_z, boundary, j: jz, residual: rz });

        let mut jx = vec![neg(&buoy, &psi_x), fx, neg(&cor, &psi_x)];
        jx.extend(advs.iter().map(|a| neg(a, &psi_x)));
        let lhs_x = 0.5 * (all[j + 1].ex - pc.ex) / dt;
        let viscous_x = nu * pc.norms.dx_h1;
        let rx = lhs_x + viscous_x + boundary - jx.iter().sum::<f64>();
        dx.push(IdentityRow { t: run.times[j], lhs_rate: lhs_x, viscous: viscous_x, boundary, j: jx, residual: rx });

        closed.push(if terms.advection { vertical_remainder(&hat.u).1 } else { 0.0 });
    }
    Ok(AnisotropicReport { norms: all.into_iter().map(|p| p.norms).collect(), dz, dx, dz_self_closed: closed })
}

/// `X1`, `X2`, `X` at one time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct MonitorRow {
    pub t: f64,
    pub x1: f64,
    pub x2: f64,
    pub x: f64,
}

/// Running sups plus trapezoidal integrals:
/// `X1 = sup |d_z u_hat|^2 + int ||d_z u_hat||^2`, `X2` likewise in x,
/// `X = sup ||U||^2 + int |AU|^2`.
pub fn monitors_x(model: &GalerkinModel, run: &DecompositionRun, report: &AnisotropicReport) -> Vec<MonitorRow> {
    let lam = model.lambdas();
    let dt = run.dt;
    let mut out = Vec::with_capacity(report.norms.len());
    let (mut s1, mut s2, mut s) = (0.0_f64, 0.0_f64, 0.0_f64);
    let (mut i1, mut i2, mut i) = (0.0, 0.0, 0.0);
    let mut prev: Option<(f64, f64, f64)> = None;
    for (j, row) in report.norms.iter().enumerate() {
        let (_, v, a) = spectral_norms(lam, &run.full[j]);
        s1 = s1.max(row.dz_l2);
        s2 = s2.max(row.dx_l2);
        s = s.max(v);
        if let Some((p1, p2, p)) = prev {
            i1 += 0.5 * dt * (p1 + row.dz_h1);
            i2 += 0.5 * dt * (p2 + row.dx_h1);
            i += 0.5 * dt * (p + a);
        }
        prev = Some((row.dz_h1, row.dx_h1, a));
        out.push(MonitorRow { t: row.t, x1: s1 + i1, x2: s2 + i2, x: s + i });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{sampling, DomainSpec};
    use crate::integrator::Forcing;
    use crate::noise::{NoiseModel, NoiseSpec};
    use crate::operators::DriftTerms;
    use crate::spectral::build_eigenbasis;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(noise: bool, terms: DriftTerms) -> GalerkinModel {
        let d = DomainSpec::unit(12).build().unwrap();
        let b = build_eigenbasis(&d, 20).unwrap();
        let nm = if noise {
            NoiseModel::from_spec(&d, &NoiseSpec { modes: 6, additive_gain: 0.1, ..NoiseSpec::default() }).unwrap()
        } else {
            NoiseModel::zero(&d)
        };
        GalerkinModel::new(&b, 20, nm, Forcing::Zero, terms).unwrap()
    }

    fn initial(m: &GalerkinModel, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        m.project_initial(&sampling::smooth_state(m.basis.domain(), &mut rng, 2, 1.0))
    }

    #[test]
    fn split_is_exact_and_check_vanishes_without_noise() {
        let m = model(true, DriftTerms::default());
        let mut o = RunOptions::new(1e-2, 30);
        o.seed = 4;
        let r = run_coupled_decomposition(&m, initial(&m, 1), &o).unwrap();
        assert!(r.split_defect.iter().all(|&d| d < 1e-12));
        let q = model(false, DriftTerms::default());
        let r = run_coupled_decomposition(&q, initial(&q, 1), &o).unwrap();
        assert!(r.linear.iter().all(|c| c.iter().all(|&v| v == 0.0)));
        assert_eq!(r.full, r.remainder);
    }

    #[test]
    fn linear_system_matches_its_check_part() {
        let m = model(true, DriftTerms::NONE);
        let mut o = RunOptions::new(1e-2, 20);
        o.seed = 2;
        let r = run_coupled_decomposition(&m, vec![0.0; 20], &o).unwrap();
        assert!(r.remainder.iter().all(|c| l2(c) < 1e-14));
    }

    #[test]
    fn zero_run_has_zero_terms() {
        let m = model(false, DriftTerms::default());
        let r = run_coupled_decomposition(&m, vec![0.0; 20], &RunOptions::new(1e-2, 3)).unwrap();
        let rep = anisotropic_identity_residuals(&m, &r).unwrap();
        assert!(rep.dz.iter().chain(&rep.dx).all(|row| row.residual == 0.0 && row.j.iter().all(|&v| v == 0.0)));
        assert!(monitors_x(&m, &r, &rep).iter().all(|x| *x == MonitorRow { t: x.t, ..Default::default() }));
    }

    #[test]
    fn identities_close_at_first_order() {
        let m = model(false, DriftTerms::default());
        let c0 = initial(&m, 3);
        let l1 = |dt: f64, steps: usize| {
            let r = run_coupled_decomposition(&m, c0.clone(), &RunOptions::new(dt, steps)).unwrap();
            let rep = anisotropic_identity_residuals(&m, &r).unwrap();
            (rep.dz_residual(dt).l1, rep.dx_residual(dt).l1, uhat_residual(&m, &r).unwrap().l1)
        };
        let a = l1(4e-3, 25);
        let b = l1(2e-3, 50);
        for (x, y) in [(a.0, b.0), (a.1, b.1), (a.2, b.2)] {
            assert!(y / x < 0.6 && y / x > 0.4, "{x} {y}");
        }
    }

    #[test]
    fn monitors_are_nondecreasing() {
        let m = model(true, DriftTerms::default());
        let mut o = RunOptions::new(1e-2, 15);
        o.seed = 8;
        let r = run_coupled_decomposition(&m, initial(&m, 5), &o).unwrap();
        let rep = anisotropic_identity_residuals(&m, &r).unwrap();
        let x = monitors_x(&m, &r, &rep);
        assert!(x.windows(2).all(|w| w[1].x1 >= w[0].x1 && w[1].x2 >= w[0].x2 && w[1].x >= w[0].x));
    }
}
