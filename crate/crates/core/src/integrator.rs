//! Galerkin SDE stepper, trajectory runs, stopping-time monitors, checkpoints,
//! the Cauchy diagnostic across orders and the Ito energy residual.
//!
//! One step of order `n` is semi-implicit Euler-Maruyama in the eigenbasis:
//!
//! `c_k <- (c_k + dt <F - N(U), Phi_k> + <sum_j sigma_j(U) dW_j, Phi_k>) / (1 + dt lambda_k)`
//!
//! with `N` and `sigma` evaluated on the grid at the synthesized state. When
//! advection is off and the noise is additive the drift is linear and the
//! projections are precomputed as matrices.
//!
//! Advection is explicit, so the step is limited by transport: roughly
//! `dt max|u| / dx` well below one. At 16x16 with `|U|_H` near 2 a step of
//! `2e-3` is stable while `1e-2` is not.

use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;

use serde::Serialize;

use crate::domain::StateField;
use crate::error::{Error, Result};
use crate::noise::{NoiseModel, NoiseStream};
use crate::operators::{apply_n_terms, DriftTerms};
use crate::spectral::{read_f64, read_u32, read_u64, EigenBasis};

/// Relative size of `|U|_H` above which a run is declared blown up.
pub const BLOWUP_FACTOR: f64 = 1e12;

/// Deterministic forcing `F(t)`.
#[derive(Clone)]
pub enum Forcing {
    Zero,
    Fixed(StateField),
    /// `s(t) F` with `s` piecewise linear through `(times, scales)`, held
    /// constant outside the table.
    Modulated { field: StateField, times: Vec<f64>, scales: Vec<f64> },
    Custom(Arc<dyn Fn(f64) -> StateField + Send + Sync>),
}

impl fmt::Debug for Forcing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Forcing::Zero => write!(f, "Zero"),
            Forcing::Fixed(_) => write!(f, "Fixed"),
            Forcing::Modulated { times, .. } => write!(f, "Modulated({} knots)", times.len()),
            Forcing::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl Forcing {
    pub fn modulated(field: StateField, times: Vec<f64>, scales: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times.len() != scales.len() {
            return Err(Error::arg("forcing table needs matching, nonempty time and scale columns"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::arg("forcing table times must increase strictly"));
        }
        Ok(Forcing::Modulated { field, times, scales })
    }

    fn scale(times: &[f64], scales: &[f64], t: f64) -> f64 {
        if t <= times[0] {
            return scales[0];
        }
        for w in 0..times.len() - 1 {
            if t <= times[w + 1] {
                let r = (t - times[w]) / (times[w + 1] - times[w]);
                return scales[w] + r * (scales[w + 1] - scales[w]);
            }
        }
        *scales.last().unwrap()
    }

    /// `F(t)`, or `None` for zero forcing.
    pub fn at(&self, t: f64) -> Option<StateField> {
        match self {
            Forcing::Zero => None,
            Forcing::Fixed(f) => Some(f.clone()),
            Forcing::Modulated { field, times, scales } => Some(field.scaled(Self::scale(times, scales, t))),
            Forcing::Custom(g) => Some(g(t)),
        }
    }
}

/// Precomputed projections for linear drift and additive noise.
#[derive(Clone, Debug)]
struct LinearCache {
    /// `-<N(Phi_l), Phi_k>`, row-major `n x n`.
    drift: Vec<f64>,
    /// `<sigma_j, Phi_k>`, row-major `n x K`.
    noise: Vec<f64>,
    /// Projection of the forcing profile for fixed and modulated forcing.
    forcing: Option<Vec<f64>>,
}

/// Immutable problem data of a Galerkin system of order `n`.
#[derive(Clone, Debug)]
pub struct GalerkinModel {
    pub basis: EigenBasis,
    pub noise: NoiseModel,
    pub forcing: Forcing,
    pub terms: DriftTerms,
    linear: Option<LinearCache>,
}

/// Projected right-hand side of one step.
#[derive(Clone, Debug)]
pub struct StepParts {
    /// `<F - N(U), Phi_k>`.
    pub drift: Vec<f64>,
    /// `<sum_j sigma_j(U) dW_j, Phi_k>`.
    pub noise: Vec<f64>,
}

impl GalerkinModel {
    /// Order-`n` system on the first `n` modes of `basis`.
    pub fn new(basis: &EigenBasis, n: usize, noise: NoiseModel, forcing: Forcing, terms: DriftTerms) -> Result<Self> {
        if n == 0 || n > basis.len() {
            return Err(Error::arg(format!("Galerkin order {n} outside 1..={}", basis.len())));
        }
        if noise.domain().spec != basis.domain().spec {
            return Err(Error::DomainMismatch);
        }
        let mut model = GalerkinModel { basis: basis.truncated(n), noise, forcing, terms, linear: None };
        if terms.is_linear() && model.noise.is_additive() && !matches!(model.forcing, Forcing::Custom(_)) {
            model.linear = Some(model.linear_cache());
        }
        Ok(model)
    }

    /// Forces the grid evaluation path even for linear problems.
    pub fn without_fast_path(mut self) -> Self {
        self.linear = None;
        self
    }

    pub fn has_fast_path(&self) -> bool {
        self.linear.is_some()
    }

    pub fn order(&self) -> usize {
        self.basis.len()
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.basis.lambdas
    }

    fn linear_cache(&self) -> LinearCache {
        let n = self.order();
        let k = self.noise.modes();
        let mut drift = vec![0.0; n * n];
        if self.terms.any() {
            for l in 0..n {
                let col = self.basis.project(&apply_n_terms(&self.basis.mode(l), self.terms));
                for (r, v) in col.iter().enumerate() {
                    drift[r * n + l] = -v;
                }
            }
        }
        let mut noise = vec![0.0; n * k];
        for j in 0..k {
            if let Some(g) = self.noise.additive_part(j) {
                for (r, v) in self.basis.project(g).iter().enumerate() {
                    noise[r * k + j] = *v;
                }
            }
        }
        let forcing = match &self.forcing {
            Forcing::Fixed(f) | Forcing::Modulated { field: f, .. } => Some(self.basis.project(f)),
            _ => None,
        };
        LinearCache { drift, noise, forcing }
    }

    /// Coefficients of `U_0` on the basis.
    pub fn project_initial(&self, state: &StateField) -> Vec<f64> {
        self.basis.project(state)
    }

    pub fn synthesize(&self, coeffs: &[f64]) -> StateField {
        self.basis.synthesize(coeffs)
    }

    fn forcing_coeffs(&self, t: f64) -> Option<Vec<f64>> {
        match (&self.forcing, &self.linear) {
            (Forcing::Zero, _) => None,
            (Forcing::Fixed(_), Some(c)) => c.forcing.clone(),
            (Forcing::Modulated { times, scales, .. }, Some(c)) => {
                let s = Forcing::scale(times, scales, t);
                c.forcing.as_ref().map(|f| f.iter().map(|v| s * v).collect())
            }
            (f, _) => f.at(t).map(|field| self.basis.project(&field)),
        }
    }

    /// `<F(t) - N(U), Phi_k>` for the state with coefficients `c`.
    pub fn drift_coeffs(&self, c: &[f64], t: f64) -> Vec<f64> {
        let n = self.order();
        let mut out = match &self.linear {
            Some(cache) => (0..n).map(|r| cache.drift[r * n..(r + 1) * n].iter().zip(c).map(|(a, b)| a * b).sum()).collect(),
            None if self.terms.any() => {
                let u = self.synthesize(c);
                self.basis.project(&apply_n_terms(&u, self.terms)).iter().map(|v| -v).collect()
            }
            None => vec![0.0; n],
        };
        if let Some(f) = self.forcing_coeffs(t) {
            out.iter_mut().zip(&f).for_each(|(a, b)| *a += b);
        }
        out
    }

    /// `<sigma_j(U), Phi_k>` as a row-major `n x K` matrix.
    pub fn noise_matrix(&self, c: &[f64]) -> Vec<f64> {
        let n = self.order();
        let k = self.noise.modes();
        if let Some(cache) = &self.linear {
            return cache.noise.clone();
        }
        let u = self.synthesize(c);
        let mut out = vec![0.0; n * k];
        for j in 0..k {
            let s = self.noise.sigma_k(j, &u);
            for (r, v) in self.basis.project(&s).iter().enumerate() {
                out[r * k + j] = *v;
            }
        }
        out
    }

    /// `<sum_j sigma_j(U) dW_j, Phi_k>`.
    pub fn noise_coeffs(&self, c: &[f64], dw: &[f64]) -> Vec<f64> {
        let n = self.order();
        let k = self.noise.modes();
        if k == 0 {
            return vec![0.0; n];
        }
        match &self.linear {
            Some(cache) => (0..n).map(|r| cache.noise[r * k..(r + 1) * k].iter().zip(dw).map(|(a, b)| a * b).sum()).collect(),
            None => self.basis.project(&self.noise.combine(&self.synthesize(c), dw)),
        }
    }

    pub fn step_parts(&self, c: &[f64], t: f64, dw: &[f64]) -> StepParts {
        StepParts { drift: self.drift_coeffs(c, t), noise: self.noise_coeffs(c, dw) }
    }

    /// One semi-implicit step from time `t`.
    pub fn step(&self, c: &[f64], t: f64, dt: f64, dw: &[f64]) -> Vec<f64> {
        let p = self.step_parts(c, t, dw);
        self.advance(c, &p, dt)
    }

    /// Applies projected parts: `(c + dt drift + noise) / (1 + dt lambda)`.
    pub fn advance(&self, c: &[f64], p: &StepParts, dt: f64) -> Vec<f64> {
        c.iter()
            .zip(&p.drift)
            .zip(&p.noise)
            .zip(&self.basis.lambdas)
            .map(|(((ci, d), s), l)| (ci + dt * d + s) / (1.0 + dt * l))
            .collect()
    }
}

/// `|U|^2`, `||U||^2`, `|AU|^2` of a Galerkin state.
pub fn spectral_norms(lambdas: &[f64], c: &[f64]) -> (f64, f64, f64) {
    let mut e = (0.0, 0.0, 0.0);
    for (l, v) in lambdas.iter().zip(c) {
        let s = v * v;
        e.0 += s;
        e.1 += l * s;
        e.2 += l * l * s;
    }
    e
}

/// Wiener increments for every step of a run, stored so that the same path
/// can drive several runs or a refinement study.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisePath {
    pub dt: f64,
    pub modes: usize,
    /// `increments[j]` drives the step from `j dt` to `(j + 1) dt`.
    pub increments: Vec<Vec<f64>>,
}

impl NoisePath {
    pub fn generate(seed: u64, trajectory: u64, steps: usize, modes: usize, dt: f64) -> Result<Self> {
        let mut s = NoiseStream::new(seed, trajectory);
        let increments = (0..steps).map(|j| s.increments(j as u64, modes, dt)).collect::<Result<_>>()?;
        Ok(NoisePath { dt, modes, increments })
    }

    /// Path on steps `factor` times longer, summing consecutive increments.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.increments.len().is_multiple_of(factor) {
            return Err(Error::arg("coarsening factor must divide the step count"));
        }
        let increments = self
            .increments
            .chunks(factor)
            .map(|ch| (0..self.modes).map(|k| ch.iter().map(|d| d[k]).sum()).collect())
            .collect();
        Ok(NoisePath { dt: self.dt * factor as f64, modes: self.modes, increments })
    }
}

/// Where a run takes its increments from.
#[derive(Clone, Copy, Debug)]
pub enum IncrementSource<'a> {
    /// Counter RNG of the run's seed and trajectory.
    Stream,
    Path(&'a NoisePath),
}

#[derive(Clone, Debug, Serialize)]
pub struct RunOptions {
    pub dt: f64,
    /// Horizon in steps; the run covers steps `0..=steps`.
    pub steps: usize,
    pub seed: u64,
    pub trajectory: u64,
    /// Threshold `M` of the monitor `sup ||U||^2 + int |AU|^2 > 4M`.
    pub blowup_m: Option<f64>,
    /// Level `n` of the monitor `int |u|_(2)^2 > n`.
    pub localization: Option<f64>,
    /// End the run when a monitor fires.
    pub stop_on_monitor: bool,
    /// Keep coefficient snapshots every this many steps (0 keeps none).
    pub snapshot_cadence: usize,
    pub record_increments: bool,
}

impl RunOptions {
    pub fn new(dt: f64, steps: usize) -> Self {
        RunOptions {
            dt,
            steps,
            seed: 0,
            trajectory: 0,
            blowup_m: None,
            localization: None,
            stop_on_monitor: false,
            snapshot_cadence: 0,
            record_increments: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::arg("dt must be positive"));
        }
        if self.steps == 0 {
            return Err(Error::arg("a run needs at least one step"));
        }
        if matches!(self.blowup_m, Some(m) if !(m > 0.0)) {
            return Err(Error::arg("monitor threshold M must be positive"));
        }
        Ok(())
    }
}

/// Running quantities of the stopping-time monitors.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MonitorState {
    /// `sup ||U||^2`.
    pub sup_v: f64,
    /// Trapezoidal `int |AU|^2`.
    pub int_a: f64,
    last_a: f64,
    /// Trapezoidal `int |u|_(2)^2`.
    pub int_h2: f64,
    last_h2: f64,
    /// First step where the strong-norm monitor exceeded `4M`.
    pub tau_nm: Option<usize>,
    /// First step where the localization integral exceeded its level.
    pub tau_n: Option<usize>,
}

impl MonitorState {
    /// Monitor value `sup ||U||^2 + int |AU|^2`.
    pub fn strong(&self) -> f64 {
        self.sup_v + self.int_a
    }

    fn update(&mut self, step: usize, dt: f64, v: f64, a: f64, h2: Option<f64>, opts: &RunOptions) {
        self.sup_v = self.sup_v.max(v);
        if step > 0 {
            self.int_a += 0.5 * dt * (self.last_a + a);
        }
        self.last_a = a;
        if let Some(h2) = h2 {
            if step > 0 {
                self.int_h2 += 0.5 * dt * (self.last_h2 + h2);
            }
            self.last_h2 = h2;
        }
        if let (Some(m), None) = (opts.blowup_m, self.tau_nm) {
            if self.strong() > 4.0 * m {
                self.tau_nm = Some(step);
            }
        }
        if let (Some(level), None) = (opts.localization, self.tau_n) {
            if self.int_h2 > level {
                self.tau_n = Some(step);
            }
        }
    }
}

/// Per-step scalar diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagRow {
    pub step: usize,
    pub t: f64,
    /// `|U|_H^2`.
    pub energy: f64,
    /// `||U||_V^2`.
    pub enstrophy: f64,
    /// `|AU|_H^2`.
    pub strong: f64,
    /// `sup ||U||^2 + int |AU|^2` so far.
    pub monitor: f64,
    /// `int |u|_(2)^2` so far (zero when not tracked).
    pub localizer: f64,
    pub tau_nm_hit: bool,
    pub tau_n_hit: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "status")]
pub enum RunStatus {
    Completed,
    StoppedAtTau { step: usize },
    NumericalBlowup { step: usize },
}

impl RunStatus {
    pub fn name(&self) -> &'static str {
        match self {
            RunStatus::Completed => "completed",
            RunStatus::StoppedAtTau { .. } => "stopped-at-tau",
            RunStatus::NumericalBlowup { .. } => "numerical-blowup",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Snapshot {
    pub step: usize,
    pub coeffs: Vec<f64>,
}

/// Resumable run state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: usize,
    pub coeffs: Vec<f64>,
    pub monitor: MonitorState,
    /// Reference size for the blowup test.
    pub scale: f64,
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"SPE2DCHK";
const CHECKPOINT_VERSION: u32 = 1;

fn opt_step(v: Option<usize>) -> u64 {
    v.map_or(u64::MAX, |s| s as u64)
}

fn step_opt(v: u64) -> Option<usize> {
    (v != u64::MAX).then_some(v as usize)
}

impl Checkpoint {
    pub fn start(model: &GalerkinModel, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != model.order() {
            return Err(Error::arg("initial coefficients do not match the Galerkin order"));
        }
        let scale = coeffs.iter().map(|c| c * c).sum::<f64>().sqrt().max(1.0);
        Ok(Checkpoint { step: 0, coeffs, monitor: MonitorState::default(), scale })
    }

    /// Little-endian binary form. The RNG needs no cursor: draws depend only
    /// on the step index stored here.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        out.write_all(&(self.step as u64).to_le_bytes())?;
        out.write_all(&(self.coeffs.len() as u32).to_le_bytes())?;
        for c in &self.coeffs {
            out.write_all(&c.to_le_bytes())?;
        }
        let m = &self.monitor;
        for v in [self.scale, m.sup_v, m.int_a, m.last_a, m.int_h2, m.last_h2] {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&opt_step(m.tau_nm).to_le_bytes())?;
        out.write_all(&opt_step(m.tau_n).to_le_bytes())?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        if read_u32(&mut input)? != CHECKPOINT_VERSION {
            return Err(Error::Format("unsupported checkpoint version".into()));
        }
        let step = read_u64(&mut input)? as usize;
        let n = read_u32(&mut input)? as usize;
        let coeffs = (0..n).map(|_| read_f64(&mut input)).collect::<Result<Vec<_>>>()?;
        let mut v = [0.0; 6];
        for x in v.iter_mut() {
            *x = read_f64(&mut input)?;
        }
        let tau_nm = step_opt(read_u64(&mut input)?);
        let tau_n = step_opt(read_u64(&mut input)?);
        Ok(Checkpoint {
            step,
            coeffs,
            scale: v[0],
            monitor: MonitorState { sup_v: v[1], int_a: v[2], last_a: v[3], int_h2: v[4], last_h2: v[5], tau_nm, tau_n },
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TrajectoryRecord {
    pub order: usize,
    pub dt: f64,
    pub rows: Vec<DiagRow>,
    pub snapshots: Vec<Snapshot>,
    /// `increments[i]` drove the step leaving `rows[i]`, when recorded.
    pub increments: Vec<Vec<f64>>,
    pub status: RunStatus,
    pub monitor: MonitorState,
    #[serde(skip)]
    pub final_state: Checkpoint,
}

impl TrajectoryRecord {
    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t).collect()
    }

    /// Snapshot at `step`, if kept.
    pub fn snapshot(&self, step: usize) -> Option<&[f64]> {
        self.snapshots.iter().find(|s| s.step == step).map(|s| s.coeffs.as_slice())
    }

    /// Last step reached with finite diagnostics.
    pub fn last_good_step(&self) -> usize {
        match self.status {
            RunStatus::NumericalBlowup { step } => step.saturating_sub(1),
            _ => self.rows.last().map_or(0, |r| r.step),
        }
    }
}

fn h2_of_velocity(model: &GalerkinModel, c: &[f64]) -> f64 {
    let u = model.synthesize(c);
    u.u.h2_norm_sq() + u.v.h2_norm_sq()
}

/// Runs from `U_0` (as coefficients) to `opts.steps`.
pub fn run_trajectory(model: &GalerkinModel, c0: Vec<f64>, opts: &RunOptions) -> Result<TrajectoryRecord> {
    run_from(model, Checkpoint::start(model, c0)?, opts, IncrementSource::Stream)
}

/// Runs from `start` to `opts.steps`. A fresh start emits the row of step 0;
/// a resumed one starts with the row after the checkpoint.
pub fn run_from(model: &GalerkinModel, start: Checkpoint, opts: &RunOptions, source: IncrementSource) -> Result<TrajectoryRecord> {
    opts.validate()?;
    if start.coeffs.len() != model.order() {
        return Err(Error::arg("checkpoint does not match the Galerkin order"));
    }
    if start.step > opts.steps {
        return Err(Error::arg("checkpoint lies beyond the horizon"));
    }
    let k = model.noise.modes();
    if let IncrementSource::Path(p) = source {
        if p.increments.len() < opts.steps || p.modes < k || (p.dt - opts.dt).abs() > 1e-15 * opts.dt {
            return Err(Error::arg("noise path does not cover the run"));
        }
    }
    let dt = opts.dt;
    let lambdas = model.lambdas().to_vec();
    let mut stream = NoiseStream::new(opts.seed, opts.trajectory);
    let mut c = start.coeffs.clone();
    let mut mon = start.monitor.clone();
    let scale = start.scale;
    let mut rows = Vec::new();
    let mut snapshots = Vec::new();
    let mut increments = Vec::new();
    let mut status = RunStatus::Completed;

    let observe = |j: usize, c: &[f64], mon: &mut MonitorState, rows: &mut Vec<DiagRow>, snaps: &mut Vec<Snapshot>| -> bool {
        let (e, v, a) = spectral_norms(&lambdas, c);
        if !(e.is_finite() && v.is_finite() && a.is_finite()) || e.sqrt() > BLOWUP_FACTOR * scale {
            return false;
        }
        let h2 = opts.localization.map(|_| h2_of_velocity(model, c));
        mon.update(j, dt, v, a, h2, opts);
        rows.push(DiagRow {
            step: j,
            t: j as f64 * dt,
            energy: e,
            enstrophy: v,
            strong: a,
            monitor: mon.strong(),
            localizer: mon.int_h2,
            tau_nm_hit: mon.tau_nm.is_some(),
            tau_n_hit: mon.tau_n.is_some(),
        });
        if opts.snapshot_cadence > 0 && j.is_multiple_of(opts.snapshot_cadence) {
            snaps.push(Snapshot { step: j, coeffs: c.to_vec() });
        }
        true
    };

    let mut j = start.step;
    if j == 0 && !observe(0, &c, &mut mon, &mut rows, &mut snapshots) {
        return Err(Error::arg("initial state is not finite"));
    }
    let stopped = |m: &MonitorState| opts.stop_on_monitor && (m.tau_nm.is_some() || m.tau_n.is_some());
    if stopped(&mon) {
        status = RunStatus::StoppedAtTau { step: j };
    }
    while status == RunStatus::Completed && j < opts.steps {
        let dw = match source {
            IncrementSource::Stream => {
                if k > 0 {
                    stream.increments(j as u64, k, dt)?
                } else {
                    vec![]
                }
            }
            IncrementSource::Path(p) => p.increments[j][..k].to_vec(),
        };
        let next = model.step(&c, j as f64 * dt, dt, &dw);
        if opts.record_increments {
            increments.push(dw);
        }
        j += 1;
        if !observe(j, &next, &mut mon, &mut rows, &mut snapshots) {
            status = RunStatus::NumericalBlowup { step: j };
            break;
        }
        c = next;
        if stopped(&mon) {
            status = RunStatus::StoppedAtTau { step: j };
        }
    }
    let final_step = match status {
        RunStatus::NumericalBlowup { step } => step - 1,
        _ => j,
    };
    Ok(TrajectoryRecord {
        order: model.order(),
        dt,
        rows,
        snapshots,
        increments,
        status,
        monitor: mon.clone(),
        final_state: Checkpoint { step: final_step, coeffs: c, monitor: mon, scale },
    })
}

/// `R^(m,n) = U^(m) - U^(n)` measured over the common window.
#[derive(Clone, Debug, Serialize)]
pub struct CauchyPair {
    pub m: usize,
    pub n: usize,
    /// `sup ||R||^2`.
    pub sup_v: f64,
    /// Trapezoidal `int |AR|^2`.
    pub int_a: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CauchyReport {
    pub orders: Vec<usize>,
    /// Last step inside every run's survival window.
    pub window: usize,
    pub pairs: Vec<CauchyPair>,
}

/// Runs every order on the same noise path from the projections of `u0`
/// and compares consecutive orders.
pub fn cauchy_diagnostic(
    basis: &EigenBasis,
    noise: &NoiseModel,
    forcing: &Forcing,
    terms: DriftTerms,
    u0: &StateField,
    orders: &[usize],
    opts: &RunOptions,
) -> Result<CauchyReport> {
    if orders.is_empty() || orders.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::arg("orders must be nondecreasing"));
    }
    let mut o = opts.clone();
    o.snapshot_cadence = 1;
    let records = orders
        .iter()
        .map(|&n| {
            let model = GalerkinModel::new(basis, n, noise.clone(), forcing.clone(), terms)?;
            run_trajectory(&model, model.project_initial(u0), &o)
        })
        .collect::<Result<Vec<_>>>()?;
    let window = records.iter().map(|r| r.last_good_step()).min().unwrap_or(0);
    let lambdas = &basis.lambdas;
    let mut pairs = Vec::new();
    for w in 0..orders.len().saturating_sub(1) {
        let (lo, hi) = (&records[w], &records[w + 1]);
        let (mut sup_v, mut int_a, mut last_a) = (0.0_f64, 0.0, 0.0);
        for j in 0..=window {
            let (a, b) = (hi.snapshots[j].coeffs.as_slice(), lo.snapshots[j].coeffs.as_slice());
            let d: Vec<f64> = (0..a.len()).map(|i| a[i] - b.get(i).copied().unwrap_or(0.0)).collect();
            let (_, v, s) = spectral_norms(lambdas, &d);
            sup_v = sup_v.max(v);
            if j > 0 {
                int_a += 0.5 * opts.dt * (last_a + s);
            }
            last_a = s;
        }
        pairs.push(CauchyPair { m: orders[w + 1], n: orders[w], sup_v, int_a });
    }
    Ok(CauchyReport { orders: orders.to_vec(), window, pairs })
}

/// Per-step defect of the Ito identity for `||U||^2`.
#[derive(Clone, Debug, Serialize)]
pub struct EnergyResidual {
    pub per_step: Vec<f64>,
    /// Running sum of the per-step defects.
    pub cumulative: Vec<f64>,
    /// `dt sum |cumulative|`.
    pub l1: f64,
}

/// Evaluates
/// `d||U||^2 + 2|AU|^2 dt = (2<F - N(U), AU> + ||sigma||_V^2) dt + 2<A^1/2 sigma, A^1/2 U> dW`
/// step by step on a recorded run.
pub fn ito_energy_residual(model: &GalerkinModel, record: &TrajectoryRecord) -> Result<EnergyResidual> {
    let steps = record.rows.len().saturating_sub(1);
    let k = model.noise.modes();
    if record.snapshots.len() < record.rows.len() || record.snapshots.iter().enumerate().any(|(i, s)| s.step != record.rows[0].step + i) {
        return Err(Error::arg("energy residual needs a snapshot at every step"));
    }
    if k > 0 && record.increments.len() < steps {
        return Err(Error::arg("energy residual needs the recorded increments"));
    }
    let lam = model.lambdas();
    let n = model.order();
    let dt = record.dt;
    let mut per_step = Vec::with_capacity(steps);
    for j in 0..steps {
        let c = &record.snapshots[j].coeffs;
        let c1 = &record.snapshots[j + 1].coeffs;
        let (_, v0, a0) = spectral_norms(lam, c);
        let (_, v1, _) = spectral_norms(lam, c1);
        let t = record.rows[j].t;
        let g = model.drift_coeffs(c, t);
        let work: f64 = (0..n).map(|i| lam[i] * c[i] * g[i]).sum();
        let (mut qv, mut mart) = (0.0, 0.0);
        if k > 0 {
            let s = model.noise_matrix(c);
            let dw = &record.increments[j];
            for i in 0..n {
                let row = &s[i * k..(i + 1) * k];
                qv += lam[i] * row.iter().map(|x| x * x).sum::<f64>();
                mart += lam[i] * c[i] * row.iter().zip(dw).map(|(x, w)| x * w).sum::<f64>();
            }
        }
        per_step.push((v1 - v0) + 2.0 * a0 * dt - (2.0 * work + qv) * dt - 2.0 * mart);
    }
    let mut acc = 0.0;
    let cumulative: Vec<f64> = per_step
        .iter()
        .map(|r| {
            acc += r;
            acc
        })
        .collect();
    let l1 = dt * cumulative.iter().map(|v| v.abs()).sum::<f64>();
    Ok(EnergyResidual { per_step, cumulative, l1 })
}
