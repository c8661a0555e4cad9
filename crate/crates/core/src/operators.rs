//! Discrete operators of the hydrostatic system.
//!
//! * [`vertical_velocity`]: `w(u) = int_z^0 du/dx`, the diagnostic vertical velocity.
//! * [`apply_a`]: the dissipative Stokes-type part.
//! * [`apply_ap`]: the buoyancy/pressure coupling, with the surface pressure
//!   removed by the fluctuation projection.
//! * [`apply_b`]: transport in skew-symmetric form.
//! * [`apply_e`]: Coriolis rotation.
//!
//! Cancellations hold to round-off because every derivative is
//! summation-by-parts for the trapezoid rule and `w` vanishes on the surface
//! and bottom of every column.

use std::sync::Arc;

use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::domain::{BcTag, Domain, ScalarField, StateField, CONSTRAINT_TOL};
use crate::error::{Error, Result};

pub mod probes;

/// `w(u) = int_z^0 d_x u dz'`, integrated from the surface downward.
///
/// Fails if `u` does not have zero vertical mean, since `w` would then not
/// vanish at the bottom.
pub fn vertical_velocity(u: &ScalarField) -> Result<ScalarField> {
    let scale = u.domain().depth() * u.max_abs();
    let worst = u.column_integrals().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale > 0.0 && worst > CONSTRAINT_TOL * scale {
        return Err(Error::ConstraintViolated { residual: worst / scale });
    }
    Ok(vertical_velocity_unchecked(u))
}

pub(crate) fn vertical_velocity_unchecked(u: &ScalarField) -> ScalarField {
    u.ddx().integral_from_surface()
}

/// `A U = (-nu Q Lap u, -nu Lap v, -mu Lap T)`.
///
/// The fluctuation in the `u` row is the orthogonal projection onto fields
/// that vanish on the walls and bottom, so `A` maps the admissible space to
/// itself and is self-adjoint there.
pub fn apply_a(state: &StateField) -> StateField {
    let p = *state.domain().physics();
    let lap = |f: &ScalarField| f.laplacian().expect("state fields carry boundary tags");
    StateField {
        u: lap(&state.u).velocity_projection().scaled(-p.nu),
        v: lap(&state.v).scaled(-p.nu),
        t: lap(&state.t).scaled(-p.mu),
    }
}

/// `A_p U = (-beta_T g rho0 Q int_z^0 d_x T, 0, 0)`.
pub fn apply_ap(state: &StateField) -> StateField {
    let d = state.domain();
    let c = d.physics().buoyancy();
    let u = state.t.ddx_accurate().integral_from_surface().fluctuation().scaled(-c).retag(BcTag::Velocity);
    StateField {
        u,
        v: ScalarField::zeros(d, BcTag::Velocity),
        t: ScalarField::zeros(d, BcTag::Temperature),
    }
}

/// `E U = (-Q f v, f u, 0)`.
pub fn apply_e(state: &StateField) -> StateField {
    let d = state.domain();
    let f = d.physics().f;
    StateField {
        u: state.v.fluctuation().scaled(-f).retag(BcTag::Velocity),
        v: state.u.scaled(f).retag(BcTag::Velocity),
        t: ScalarField::zeros(d, BcTag::Temperature),
    }
}

/// Horizontal half of the skew-symmetric transport, `(u d_x phi + d_x(u phi)) / 2`.
pub(crate) fn transport_x(u: &ScalarField, phi: &ScalarField) -> ScalarField {
    let mut out = &u.data * &phi.ddx().data;
    out += &u.hadamard(phi).expect("same grid").ddx().data;
    out *= 0.5;
    ScalarField::from_array(u.domain(), BcTag::Free, out).expect("same grid")
}

/// Vertical half, `(w d_z phi + d_z(w phi)) / 2`.
pub(crate) fn transport_z(w: &ScalarField, phi: &ScalarField) -> ScalarField {
    let mut out = &w.data * &phi.ddz().data;
    out += &w.hadamard(phi).expect("same grid").ddz().data;
    out *= 0.5;
    ScalarField::from_array(w.domain(), BcTag::Free, out).expect("same grid")
}

fn transport(u: &ScalarField, w: &ScalarField, phi: &ScalarField) -> ScalarField {
    let mut out = transport_x(u, phi);
    out.data += &transport_z(w, phi).data;
    out
}

/// Transport of `sharp` by the velocity of `state`, in skew-symmetric form.
///
/// Each component is `(u d_x phi + d_x(u phi))/2 + (w d_z phi + d_z(w phi))/2`
/// with `w = w(u)`; the `u` row is passed through the vertical fluctuation.
pub fn apply_b(state: &StateField, sharp: &StateField) -> Result<StateField> {
    state.check(sharp)?;
    let w = vertical_velocity(&state.u)?;
    Ok(apply_b_with(state, &w, sharp))
}

pub(crate) fn apply_b_with(state: &StateField, w: &ScalarField, sharp: &StateField) -> StateField {
    StateField {
        u: transport(&state.u, w, &sharp.u).fluctuation().retag(BcTag::Velocity),
        v: transport(&state.u, w, &sharp.v).retag(BcTag::Velocity),
        t: transport(&state.u, w, &sharp.t).retag(BcTag::Temperature),
    }
}

pub(crate) fn apply_b_unchecked(state: &StateField, sharp: &StateField) -> StateField {
    let w = vertical_velocity_unchecked(&state.u);
    apply_b_with(state, &w, sharp)
}

/// Which parts of the nonlinear drift `N` are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DriftTerms {
    pub advection: bool,
    pub buoyancy: bool,
    pub coriolis: bool,
}

impl Default for DriftTerms {
    fn default() -> Self {
        DriftTerms { advection: true, buoyancy: true, coriolis: true }
    }
}

impl DriftTerms {
    pub const NONE: DriftTerms = DriftTerms { advection: false, buoyancy: false, coriolis: false };

    pub fn any(&self) -> bool {
        self.advection || self.buoyancy || self.coriolis
    }

    pub fn is_linear(&self) -> bool {
        !self.advection
    }
}

/// `N(U) = A_p U + B(U, U) + E U`.
pub fn apply_n(state: &StateField) -> Result<StateField> {
    state.check_constraint()?;
    Ok(apply_n_terms(state, DriftTerms::default()))
}

pub(crate) fn apply_n_terms(state: &StateField, terms: DriftTerms) -> StateField {
    let mut out = StateField::zeros(state.domain());
    if terms.advection {
        out.add_assign_scaled(1.0, &apply_b_unchecked(state, state));
    }
    if terms.buoyancy {
        out.add_assign_scaled(1.0, &apply_ap(state));
    }
    if terms.coriolis {
        out.add_assign_scaled(1.0, &apply_e(state));
    }
    out
}

/// Diagnostic fields recovered from a state.
#[derive(Clone, Debug)]
pub struct Diagnostics {
    pub w: ScalarField,
    /// Density from the linear equation of state.
    pub rho: ScalarField,
    /// `p - p_s = g int_z^0 rho dz'`; the surface pressure itself is not recovered.
    pub p_anomaly: ScalarField,
}

pub fn recover_diagnostics(state: &StateField) -> Result<Diagnostics> {
    let w = vertical_velocity(&state.u)?;
    let p = *state.domain().physics();
    let mut rho = state.t.clone().retag(BcTag::Free);
    rho.data.mapv_inplace(|t| p.rho0 * (1.0 - p.beta_t * (t - p.t0)));
    let p_anomaly = rho.integral_from_surface().scaled(p.g);
    Ok(Diagnostics { w, rho, p_anomaly })
}

/// Assembled sparse matrices of the dissipative operator, built directly
/// from the stencils. Used to cross-check the matrix-free path.
pub struct OperatorBench {
    domain: Arc<Domain>,
    pub velocity_laplacian: CsrMatrix<f64>,
    pub temperature_laplacian: CsrMatrix<f64>,
    /// Orthogonal projector onto mean-free velocity fields with zero wall and bottom values.
    pub velocity_projector: CsrMatrix<f64>,
}

impl OperatorBench {
    pub fn assemble(domain: &Arc<Domain>) -> Self {
        let (mx, mz) = domain.shape();
        let n = mx * mz;
        let idx = |i: usize, j: usize| i * mz + j;
        let p = domain.physics();
        let (rx, rz) = (1.0 / (domain.dx * domain.dx), 1.0 / (domain.dz * domain.dz));

        let laplacian = |velocity: bool, alpha: f64| {
            let mut coo = CooMatrix::new(n, n);
            for i in 0..mx {
                for j in 0..mz {
                    if velocity && domain.is_dirichlet(i, j) {
                        continue;
                    }
                    let row = idx(i, j);
                    // x direction: interior or reflected ghost (Neumann).
                    if i > 0 && i < mx - 1 {
                        coo.push(row, idx(i - 1, j), rx);
                        coo.push(row, idx(i + 1, j), rx);
                        coo.push(row, row, -2.0 * rx);
                    } else {
                        let nb = if i == 0 { 1 } else { mx - 2 };
                        coo.push(row, idx(nb, j), 2.0 * rx);
                        coo.push(row, row, -2.0 * rx);
                    }
                    if j > 0 && j < mz - 1 {
                        coo.push(row, idx(i, j - 1), rz);
                        coo.push(row, idx(i, j + 1), rz);
                        coo.push(row, row, -2.0 * rz);
                    } else if j == 0 {
                        coo.push(row, idx(i, 1), 2.0 * rz);
                        coo.push(row, row, -2.0 * rz);
                    } else {
                        coo.push(row, idx(i, j - 1), 2.0 * rz);
                        coo.push(row, row, -2.0 * rz - 2.0 * alpha / domain.dz);
                    }
                }
            }
            CsrMatrix::from(&coo)
        };

        let mut coo = CooMatrix::new(n, n);
        let wfree = domain.depth() - domain.wz[0];
        for i in 1..mx - 1 {
            for j in 1..mz {
                coo.push(idx(i, j), idx(i, j), 1.0);
                for k in 1..mz {
                    coo.push(idx(i, j), idx(i, k), -domain.wz[k] / wfree);
                }
            }
        }
        OperatorBench {
            domain: domain.clone(),
            velocity_laplacian: laplacian(true, p.alpha_v),
            temperature_laplacian: laplacian(false, p.alpha_t),
            velocity_projector: CsrMatrix::from(&coo),
        }
    }

    fn matvec(m: &CsrMatrix<f64>, x: &[f64]) -> Vec<f64> {
        m.row_iter()
            .map(|row| row.col_indices().iter().zip(row.values()).map(|(c, v)| v * x[*c]).sum())
            .collect()
    }

    /// `A U` through the assembled matrices.
    pub fn apply_a(&self, state: &StateField) -> Result<StateField> {
        let p = self.domain.physics();
        let flat = |f: &ScalarField| f.data.iter().copied().collect::<Vec<f64>>();
        let lu = Self::matvec(&self.velocity_laplacian, &flat(&state.u));
        let au: Vec<f64> = Self::matvec(&self.velocity_projector, &lu).iter().map(|v| -p.nu * v).collect();
        let av: Vec<f64> = Self::matvec(&self.velocity_laplacian, &flat(&state.v)).iter().map(|v| -p.nu * v).collect();
        let at: Vec<f64> = Self::matvec(&self.temperature_laplacian, &flat(&state.t)).iter().map(|v| -p.mu * v).collect();
        let mut all = au;
        all.extend(av);
        all.extend(at);
        StateField::from_slice(&self.domain, &all)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{sampling, DomainSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn dom(n: usize) -> Arc<Domain> {
        DomainSpec::unit(n).build().unwrap()
    }

    #[test]
    fn w_vanishes_for_zero_u_and_rejects_unconstrained() {
        let d = dom(8);
        let z = ScalarField::zeros(&d, BcTag::Velocity);
        assert_eq!(vertical_velocity(&z).unwrap().max_abs(), 0.0);
        let bad = ScalarField::from_fn(&d, BcTag::Velocity, |x, _| (PI * x).sin());
        assert!(vertical_velocity(&bad).is_err());
    }

    #[test]
    fn w_matches_analytic_profile() {
        let d = dom(32);
        let u = ScalarField::from_fn(&d, BcTag::Velocity, |x, z| (PI * x).sin() * (z + 0.5)).fluctuation();
        let w = vertical_velocity(&u).unwrap();
        let exact = ScalarField::from_fn(&d, BcTag::Free, |x, z| PI * (PI * x).cos() * (-0.5 * z * z - 0.5 * z));
        assert!(w.axpy(-1.0, &exact).unwrap().max_abs() < 1e-2);
        assert!(w.bottom_trace().iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn matrix_and_stencil_paths_agree() {
        let d = dom(9);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = sampling::rough_state(&d, &mut rng, 1.0);
        let bench = OperatorBench::assemble(&d);
        let a = apply_a(&s);
        let b = bench.apply_a(&s).unwrap();
        assert!(a.axpy(-1.0, &b).unwrap().max_abs() < 1e-10 * a.max_abs());
    }

    #[test]
    fn e_is_skew_and_bounded() {
        let d = dom(10);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = sampling::smooth_state(&d, &mut rng, 3, 1.0).project_h();
        let e = apply_e(&s);
        assert!(e.inner_h(&s).unwrap().abs() < 1e-14 * s.norm_h_sq());
        assert!(e.norm_h() <= d.physics().f.abs() * s.norm_h() * (1.0 + 1e-12));
        assert!(e.constraint_residual() < 1e-13);
    }

    #[test]
    fn constant_temperature_gives_hydrostatic_column() {
        let d = dom(8);
        let s = StateField::zeros(&d);
        let diag = recover_diagnostics(&s).unwrap();
        let p = d.physics();
        let expect = ScalarField::from_fn(&d, BcTag::Free, |_, z| -p.g * p.rho0 * z);
        assert!(diag.p_anomaly.axpy(-1.0, &expect).unwrap().max_abs() < 1e-9);
        assert!(diag.rho.data.iter().all(|r| (r - p.rho0).abs() < 1e-12));
    }

    #[test]
    fn buoyancy_coupling_matches_analytic() {
        let d = dom(64);
        let s = StateField::from_fns(&d, |_, _| 0.0, |_, _| 0.0, |x, _| (PI * x).cos());
        let ap = apply_ap(&s);
        let c = d.physics().buoyancy();
        // -c Q( int_z^0 -pi sin(pi x) ) = -c pi sin(pi x) (z + h/2)
        let exact = ScalarField::from_fn(&d, BcTag::Free, |x, z| -c * PI * (PI * x).sin() * (z + 0.5));
        assert!(ap.u.axpy(-1.0, &exact).unwrap().max_abs() < 1e-3 * c);
        assert_eq!(ap.v.max_abs(), 0.0);
    }
}
