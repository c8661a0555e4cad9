//! Empirical bench for the transport-term inequalities.
//!
//! Each estimate compares a left-hand quantity with the right-hand product
//! of norms (without the unknown constant) over random smooth samples. A
//! report passes when the largest ratio is finite and changes by at most
//! 25% under one grid refinement.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::domain::{sampling, Domain, DomainSpec, ScalarField, StateField};
use crate::error::{Error, Result};
use crate::operators::{apply_ap, apply_b_unchecked, transport_x, transport_z, vertical_velocity_unchecked};

/// The inequalities the bench knows about.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Estimate {
    /// `<B(U, V), V> = 0`.
    Cancellation,
    /// `|<B(U,V),W>| <= ||U|| ||V|| |W|^1/2 ||W||^1/2`.
    TrilinearV,
    /// `|<B(U,V),W>| <= ||U|| ||V||^1/2 |V|_2^1/2 |W|`.
    TrilinearStrong,
    /// `|B(U,U)|^2 <= ||U||^3 |U|_2`.
    SelfL2,
    /// `|<B(U,V),W>| <= ||u||^1/2 |u|_2^1/2 ||V|| |W|`.
    FirstComponent,
    /// Horizontal transport of `u`: `|u|^1/2 |u|_2^1/2 |u'_x| |u''|`.
    HorizontalH2,
    /// Horizontal transport of `u`: `|u|^1/2 ||u||^1/2 |u'_x|^1/2 ||u'_x||^1/2 |u''|`.
    HorizontalH1,
    /// Vertical transport of `u`: `|u_x| |u'_z|^1/2 ||u'_z||^1/2 |u''|`.
    VerticalH1,
    /// Vertical transport of `u`: `||u||^1/2 |u|_2^1/2 |u'_z| |u''|`.
    VerticalH2,
    /// `||B(U,U)||^2 <= ||U|| |U|_2^3`.
    SelfH1,
    /// `<B^1(u,u), -u_zz>` against its closed form; the ratio tends to one.
    VerticalRemainder,
    /// `|<B^1(u,u), -u_zz>| <= |u| ||u||^2 + |u_z|^1/2 ||u_z||^1/2 |u|^1/2 ||u||^3/2`.
    VerticalRemainderBound,
    /// `|A_p U| <= ||U||`.
    BuoyancyH,
    /// `||A_p U|| <= |U|_2`.
    BuoyancyV,
}

impl Estimate {
    pub const ALL: [Estimate; 14] = [
        Estimate::Cancellation,
        Estimate::TrilinearV,
        Estimate::TrilinearStrong,
        Estimate::SelfL2,
        Estimate::FirstComponent,
        Estimate::HorizontalH2,
        Estimate::HorizontalH1,
        Estimate::VerticalH1,
        Estimate::VerticalH2,
        Estimate::SelfH1,
        Estimate::VerticalRemainder,
        Estimate::VerticalRemainderBound,
        Estimate::BuoyancyH,
        Estimate::BuoyancyV,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            Estimate::Cancellation => "cancellation",
            Estimate::TrilinearV => "trilinear-v",
            Estimate::TrilinearStrong => "trilinear-strong",
            Estimate::SelfL2 => "self-l2",
            Estimate::FirstComponent => "first-component",
            Estimate::HorizontalH2 => "horizontal-h2",
            Estimate::HorizontalH1 => "horizontal-h1",
            Estimate::VerticalH1 => "vertical-h1",
            Estimate::VerticalH2 => "vertical-h2",
            Estimate::SelfH1 => "self-h1",
            Estimate::VerticalRemainder => "vertical-remainder",
            Estimate::VerticalRemainderBound => "vertical-remainder-bound",
            Estimate::BuoyancyH => "buoyancy-h",
            Estimate::BuoyancyV => "buoyancy-v",
        }
    }

    /// True for estimates whose ratio should vanish rather than stay bounded.
    fn is_identity_zero(&self) -> bool {
        matches!(self, Estimate::Cancellation)
    }
}

impl fmt::Display for Estimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Estimate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Estimate::ALL
            .iter()
            .copied()
            .find(|e| e.id() == s)
            .ok_or_else(|| Error::arg(format!("unknown estimate id '{s}'")))
    }
}

/// One evaluated sample.
#[derive(Clone, Debug, Serialize)]
pub struct ProbeRow {
    pub grid: usize,
    pub sample: usize,
    pub lhs: f64,
    pub rhs: f64,
    /// `None` when both sides vanish.
    pub ratio: Option<f64>,
}

/// Ratio statistics on one grid.
#[derive(Clone, Debug, Serialize)]
pub struct GridSummary {
    pub grid: usize,
    pub max_ratio: f64,
    pub median_ratio: f64,
    pub skipped: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeReport {
    pub estimate: Estimate,
    pub rows: Vec<ProbeRow>,
    pub coarse: GridSummary,
    pub fine: GridSummary,
    pub pass: bool,
}

impl ProbeReport {
    /// CSV with one line per sample and one summary line per grid.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("estimate,grid,sample,lhs,rhs,ratio\n");
        for r in &self.rows {
            let ratio = r.ratio.map(|v| format!("{v:.9e}")).unwrap_or_else(|| "skipped".into());
            s.push_str(&format!("{},{},{},{:.9e},{:.9e},{}\n", self.estimate, r.grid, r.sample, r.lhs, r.rhs, ratio));
        }
        for g in [&self.coarse, &self.fine] {
            s.push_str(&format!(
                "{},{},summary-max,,,{:.9e}\n{},{},summary-median,,,{:.9e}\n",
                self.estimate, g.grid, g.max_ratio, self.estimate, g.grid, g.median_ratio
            ));
        }
        s.push_str(&format!("{},,verdict,,,{}\n", self.estimate, if self.pass { "pass" } else { "fail" }));
        s
    }
}

fn grad(f: &ScalarField) -> f64 {
    f.grad_norm_sq().sqrt()
}

fn dx_l2(f: &ScalarField) -> f64 {
    f.grad_x_form(f).sqrt()
}

fn dz_l2(f: &ScalarField) -> f64 {
    f.grad_z_form(f).sqrt()
}

/// Evaluates `(lhs, rhs)` of one estimate for the given sample triple.
pub fn evaluate(estimate: Estimate, a: &StateField, b: &StateField, c: &StateField) -> (f64, f64) {
    let nv = |s: &StateField| s.norm_v();
    let nh = |s: &StateField| s.norm_h();
    let n2 = |s: &StateField| s.norm_h2();
    let l2 = |f: &ScalarField| f.norm_l2();
    let h2 = |f: &ScalarField| f.h2_norm_sq().sqrt();
    match estimate {
        Estimate::Cancellation => {
            let lhs = apply_b_unchecked(a, b).inner_h(b).unwrap().abs();
            (lhs, nv(a) * nv(b) * nv(b))
        }
        Estimate::TrilinearV => {
            let lhs = apply_b_unchecked(a, b).inner_h(c).unwrap().abs();
            (lhs, nv(a) * nv(b) * (nh(c) * nv(c)).sqrt())
        }
        Estimate::TrilinearStrong => {
            let lhs = apply_b_unchecked(a, b).inner_h(c).unwrap().abs();
            (lhs, nv(a) * (nv(b) * n2(b)).sqrt() * nh(c))
        }
        Estimate::SelfL2 => {
            let lhs = apply_b_unchecked(a, a).norm_h_sq();
            (lhs, nv(a).powi(3) * n2(a))
        }
        Estimate::FirstComponent => {
            let lhs = apply_b_unchecked(a, b).inner_h(c).unwrap().abs();
            (lhs, (grad(&a.u) * h2(&a.u)).sqrt() * nv(b) * nh(c))
        }
        Estimate::HorizontalH2 | Estimate::HorizontalH1 => {
            let lhs = transport_x(&a.u, &b.u).fluctuation().inner(&c.u).unwrap().abs();
            let bx = b.u.ddx();
            let rhs = if estimate == Estimate::HorizontalH2 {
                (l2(&a.u) * h2(&a.u)).sqrt() * dx_l2(&b.u) * l2(&c.u)
            } else {
                (l2(&a.u) * grad(&a.u) * dx_l2(&b.u) * grad(&bx)).sqrt() * l2(&c.u)
            };
            (lhs, rhs)
        }
        Estimate::VerticalH1 | Estimate::VerticalH2 => {
            let w = vertical_velocity_unchecked(&a.u);
            let lhs = transport_z(&w, &b.u).fluctuation().inner(&c.u).unwrap().abs();
            let bz = b.u.ddz();
            let rhs = if estimate == Estimate::VerticalH1 {
                dx_l2(&a.u) * (dz_l2(&b.u) * grad(&bz)).sqrt() * l2(&c.u)
            } else {
                (grad(&a.u) * h2(&a.u)).sqrt() * dz_l2(&b.u) * l2(&c.u)
            };
            (lhs, rhs)
        }
        Estimate::SelfH1 => {
            let lhs = apply_b_unchecked(a, a).norm_v_sq();
            (lhs, nv(a) * n2(a).powi(3))
        }
        Estimate::VerticalRemainder => {
            let (lhs, closed) = vertical_remainder(&a.u);
            (lhs, closed)
        }
        Estimate::VerticalRemainderBound => {
            let (lhs, _) = vertical_remainder(&a.u);
            let uz = a.u.ddz();
            let rhs = l2(&a.u) * grad(&a.u).powi(2)
                + (dz_l2(&a.u) * grad(&uz) * l2(&a.u)).sqrt() * grad(&a.u).powf(1.5);
            (lhs.abs(), rhs)
        }
        Estimate::BuoyancyH => (apply_ap(a).norm_h(), nv(a)),
        Estimate::BuoyancyV => (apply_ap(a).norm_v(), n2(a)),
    }
}

/// `<B^1(u,u), -u_zz>` and the surface/bottom closed form
/// `-(2/h) int u u_x (alpha_v u(x,0) + u_z(x,-h))`.
pub fn vertical_remainder(u: &ScalarField) -> (f64, f64) {
    let d = u.domain().clone();
    let zero = ScalarField::zeros(&d, crate::BcTag::Velocity);
    let state = StateField { u: u.clone(), v: zero.clone(), t: zero.clone().retag(crate::BcTag::Temperature) };
    let b1 = apply_b_unchecked(&state, &state).u;
    let uzz = u.dzz_closed().expect("velocity tag");
    let lhs = -b1.inner(&uzz).unwrap();

    let h = d.depth();
    let alpha = d.physics().alpha_v;
    let top = u.surface_trace();
    // second-order one-sided derivative at the bottom
    let dz = d.dz;
    let bottom_dz: Vec<f64> = (0..=d.nx())
        .map(|i| (-3.0 * u.data[[i, 0]] + 4.0 * u.data[[i, 1]] - u.data[[i, 2]]) / (2.0 * dz))
        .collect();
    let uux = u.hadamard(&u.ddx()).unwrap();
    let col = uux.column_integrals();
    let closed: f64 = (0..=d.nx()).map(|i| d.wx[i] * col[i] * (alpha * top[i] + bottom_dz[i])).sum();
    (lhs, -2.0 / h * closed)
}

fn sample_triple(domain: &Arc<Domain>, seed: u64, index: usize) -> [StateField; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let mut one = || sampling::smooth_state(domain, &mut rng, 3, 1.0);
    [one(), one(), one()]
}

fn run_grid(spec: DomainSpec, estimate: Estimate, samples: usize, seed: u64) -> Result<(Vec<ProbeRow>, GridSummary)> {
    let domain = spec.build()?;
    let grid = spec.nx;
    let rows: Vec<ProbeRow> = (0..samples)
        .into_par_iter()
        .map(|k| {
            let [a, b, c] = sample_triple(&domain, seed, k);
            let (lhs, rhs) = evaluate(estimate, &a, &b, &c);
            let ratio = if lhs == 0.0 && rhs == 0.0 { None } else { Some(lhs / rhs) };
            ProbeRow { grid, sample: k, lhs, rhs, ratio }
        })
        .collect();
    let mut ratios: Vec<f64> = rows.iter().filter_map(|r| r.ratio).collect();
    let skipped = rows.len() - ratios.len();
    ratios.sort_by(|a, b| a.total_cmp(b));
    let max_ratio = ratios.last().copied().unwrap_or(0.0);
    let median_ratio = if ratios.is_empty() { 0.0 } else { ratios[ratios.len() / 2] };
    Ok((rows, GridSummary { grid, max_ratio, median_ratio, skipped }))
}

/// Runs one estimate at the resolution of `spec` and at twice that resolution.
pub fn run_probe(spec: DomainSpec, estimate: Estimate, samples: usize, seed: u64) -> Result<ProbeReport> {
    if samples < 10 {
        return Err(Error::arg("the probe needs at least 10 samples"));
    }
    let (mut rows, coarse) = run_grid(spec, estimate, samples, seed)?;
    let fine_spec = DomainSpec { nx: 2 * spec.nx, nz: 2 * spec.nz, ..spec };
    let (fine_rows, fine) = run_grid(fine_spec, estimate, samples, seed)?;
    rows.extend(fine_rows);
    let pass = if estimate.is_identity_zero() {
        coarse.max_ratio < 1e-10 && fine.max_ratio < 1e-10
    } else {
        coarse.max_ratio.is_finite()
            && fine.max_ratio.is_finite()
            && coarse.max_ratio > 0.0
            && (fine.max_ratio / coarse.max_ratio - 1.0).abs() <= 0.25
    };
    Ok(ProbeReport { estimate, rows, coarse, fine, pass })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip() {
        for e in Estimate::ALL {
            assert_eq!(e.id().parse::<Estimate>().unwrap(), e);
        }
        assert!("2.99".parse::<Estimate>().is_err());
    }

    #[test]
    fn cancellation_probe_is_exact() {
        let r = run_probe(DomainSpec::unit(12), Estimate::Cancellation, 10, 1).unwrap();
        assert!(r.pass, "{:?} {:?}", r.coarse, r.fine);
    }

    #[test]
    fn degenerate_samples_are_skipped() {
        let d = DomainSpec::unit(8).build().unwrap();
        let z = StateField::zeros(&d);
        let (l, r) = evaluate(Estimate::TrilinearV, &z, &z, &z);
        assert_eq!((l, r), (0.0, 0.0));
    }

    #[test]
    fn too_few_samples_is_an_error() {
        assert!(run_probe(DomainSpec::unit(8), Estimate::SelfL2, 3, 0).is_err());
    }
}
