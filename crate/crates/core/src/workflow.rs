//! Config-driven runs behind the command-line subcommands. Every run writes
//! its files atomically into one output directory and finishes with a
//! `manifest.json`.

use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::analysis::bench::{
    stochastic_gronwall_bench, stoptime_exceedance_bench, BoundedGenerator, BrownianMaxGenerator, DecayGenerator, GronwallGenerator,
    GronwallReport, LiveGenerator, LiveGronwallGenerator, OdeGenerator, ProcessGenerator, StoptimeReport,
};
use crate::analysis::{anisotropic_identity_residuals, monitors_x, run_coupled_decomposition, uhat_residual};
use crate::config::{ForcingKind, InitialKind, SimConfig};
use crate::domain::{sampling, Domain, StateField};
use crate::error::{Error, Result};
use crate::integrator::{cauchy_diagnostic, run_trajectory, Forcing, GalerkinModel, RunOptions, RunStatus, TrajectoryRecord};
use crate::io::{diagnostics_csv, write_snapshots, Manifest, OutputDir, TrajectoryStatus};
use crate::noise::NoiseModel;
use crate::operators::probes::{run_probe, Estimate};
use crate::spectral::EigenBasis;

/// Everything a run needs, assembled from a config.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub config: SimConfig,
    pub domain: Arc<Domain>,
    pub basis: EigenBasis,
    pub model: GalerkinModel,
    pub initial: StateField,
    pub options: RunOptions,
}

fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn forcing_from(config: &SimConfig, domain: &Arc<Domain>) -> Result<Forcing> {
    let f = &config.forcing;
    let field = || sampling::smooth_state(domain, &mut seeded(f.seed), f.order, f.amplitude);
    Ok(match f.kind {
        ForcingKind::Zero => Forcing::Zero,
        ForcingKind::Fixed => Forcing::Fixed(field()),
        ForcingKind::Modulated => Forcing::modulated(field(), f.times.clone(), f.scales.clone())?,
    })
}

pub fn initial_from(config: &SimConfig, domain: &Arc<Domain>) -> StateField {
    let i = &config.initial;
    match i.kind {
        InitialKind::Zero => StateField::zeros(domain),
        InitialKind::Smooth => sampling::smooth_state(domain, &mut seeded(i.seed), i.order, i.amplitude),
    }
}

pub fn options_from(config: &SimConfig) -> RunOptions {
    let n = &config.numerics;
    let mut o = RunOptions::new(n.dt, config.steps());
    o.seed = n.seed;
    o.blowup_m = (n.blowup_m > 0.0).then_some(n.blowup_m);
    o.localization = (n.localization > 0.0).then_some(n.localization);
    o.stop_on_monitor = o.blowup_m.is_some() || o.localization.is_some();
    o.snapshot_cadence = config.output.cadence;
    o
}

impl Prepared {
    pub fn new(config: &SimConfig) -> Result<Self> {
        config.validate()?;
        let domain = config.domain_spec().build()?;
        let basis = EigenBasis::build(&domain, Some(config.numerics.modes), config.numerics.eigen.into())?;
        let noise = NoiseModel::from_spec(&domain, &config.noise)?;
        let forcing = forcing_from(config, &domain)?;
        let model = GalerkinModel::new(&basis, config.numerics.modes, noise, forcing, config.terms())?;
        let initial = initial_from(config, &domain);
        Ok(Prepared { config: config.clone(), domain, basis, model, initial, options: options_from(config) })
    }

    pub fn initial_coeffs(&self) -> Vec<f64> {
        self.model.project_initial(&self.initial)
    }

    pub fn run(&self, trajectory: u64) -> Result<TrajectoryRecord> {
        let mut o = self.options.clone();
        o.trajectory = trajectory;
        run_trajectory(&self.model, self.initial_coeffs(), &o)
    }
}

/// Result of a command: the manifest plus whether any trajectory blew up.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub manifest: Manifest,
    pub blowup: bool,
}

fn blew_up(statuses: &[TrajectoryStatus]) -> bool {
    statuses.iter().any(|s| s.status == RunStatus::NumericalBlowup { step: 0 }.name())
}

fn write_record(out: &mut OutputDir, prefix: &str, rec: &TrajectoryRecord) -> Result<()> {
    out.write(&format!("{prefix}diagnostics.csv"), diagnostics_csv(&rec.rows).as_bytes())?;
    let mut snaps = Vec::new();
    write_snapshots(&mut snaps, rec.order, rec.dt, &rec.snapshots)?;
    out.write(&format!("{prefix}snapshots.bin"), &snaps)?;
    let mut chk = Vec::new();
    rec.final_state.write_binary(&mut chk)?;
    out.write(&format!("{prefix}final.chk"), &chk)
}

fn finish(out: OutputDir, command: &str, config: &SimConfig, threads: usize, statuses: Vec<TrajectoryStatus>) -> Result<Outcome> {
    let blowup = blew_up(&statuses);
    let manifest = out.finish(command, &config.hash(), config.numerics.seed, threads, statuses)?;
    Ok(Outcome { manifest, blowup })
}

fn start(config: &SimConfig, outdir: &Path) -> Result<OutputDir> {
    let mut out = OutputDir::create(outdir)?;
    out.write("config.toml", config.echo().as_bytes())?;
    Ok(out)
}

/// One trajectory.
pub fn simulate(config: &SimConfig, outdir: &Path) -> Result<Outcome> {
    let mut out = start(config, outdir)?;
    let p = Prepared::new(config)?;
    let rec = p.run(0)?;
    write_record(&mut out, "", &rec)?;
    finish(out, "simulate", config, 1, vec![TrajectoryStatus::of(0, &rec)])
}

/// Thread count from an explicit value, else `SPE2D_THREADS`, else all cores.
pub fn resolve_threads(explicit: Option<usize>) -> Result<usize> {
    let env = std::env::var("SPE2D_THREADS").ok();
    let n = match (explicit, env) {
        (Some(n), _) => n,
        (None, Some(v)) => v.trim().parse().map_err(|_| Error::arg(format!("SPE2D_THREADS={v} is not a count")))?,
        (None, None) => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    };
    if n == 0 {
        return Err(Error::arg("thread count must be positive"));
    }
    Ok(n)
}

/// Mean diagnostics over the trajectories alive at each step.
pub fn ensemble_mean_csv(records: &[TrajectoryRecord]) -> String {
    let steps = records.iter().map(|r| r.rows.len()).max().unwrap_or(0);
    let mut s = String::from("step,t,alive,energy,enstrophy,strong\n");
    for j in 0..steps {
        let rows: Vec<_> = records.iter().filter_map(|r| r.rows.get(j)).collect();
        let k = rows.len() as f64;
        let mean = |f: &dyn Fn(&crate::integrator::DiagRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / k;
        s.push_str(&format!(
            "{},{:.12e},{},{:.12e},{:.12e},{:.12e}\n",
            rows[0].step,
            rows[0].t,
            rows.len(),
            mean(&|r| r.energy),
            mean(&|r| r.enstrophy),
            mean(&|r| r.strong)
        ));
    }
    s
}

/// Independent trajectories `0..trajectories` on a dedicated thread pool;
/// results are merged in trajectory order, so the files do not depend on
/// the thread count.
pub fn ensemble(config: &SimConfig, trajectories: usize, threads: usize, outdir: &Path) -> Result<Outcome> {
    if trajectories == 0 {
        return Err(Error::arg("an ensemble needs at least one trajectory"));
    }
    let mut out = start(config, outdir)?;
    let p = Prepared::new(config)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| Error::arg(e.to_string()))?;
    let records = pool.install(|| (0..trajectories as u64).into_par_iter().map(|k| p.run(k)).collect::<Result<Vec<_>>>())?;
    let mut statuses = Vec::with_capacity(trajectories);
    for (k, rec) in records.iter().enumerate() {
        write_record(&mut out, &format!("traj_{k:05}/"), rec)?;
        statuses.push(TrajectoryStatus::of(k as u64, rec));
    }
    out.write("ensemble_mean.csv", ensemble_mean_csv(&records).as_bytes())?;
    finish(out, "ensemble", config, threads, statuses)
}

/// Eigenvalues, binary modes and orthonormality checks.
pub fn eigen(config: &SimConfig, outdir: &Path) -> Result<Outcome> {
    let mut out = start(config, outdir)?;
    let domain = config.domain_spec().build()?;
    let basis = EigenBasis::build(&domain, Some(config.numerics.modes), config.numerics.eigen.into())?;
    out.write("lambdas.csv", basis.lambdas_csv().as_bytes())?;
    let mut bin = Vec::new();
    basis.write_binary(&mut bin)?;
    out.write("eigen.bin", &bin)?;
    let checks = format!("check,value\ngram,{:.6e}\nrayleigh,{:.6e}\n", basis.gram_residual(), basis.rayleigh_residual());
    out.write("eigen_checks.csv", checks.as_bytes())?;
    finish(out, "eigen", config, 1, vec![])
}

/// Inequality probes; `ids` empty runs all of them.
pub fn probe(config: &SimConfig, ids: &[String], samples: usize, outdir: &Path) -> Result<(Outcome, bool)> {
    let estimates: Vec<Estimate> = if ids.is_empty() {
        Estimate::ALL.to_vec()
    } else {
        ids.iter().map(|s| s.parse()).collect::<Result<Vec<_>>>()?
    };
    let mut out = start(config, outdir)?;
    let mut summary = String::from("estimate,coarse_grid,coarse_max,fine_grid,fine_max,verdict\n");
    let mut all = true;
    for e in estimates {
        let r = run_probe(config.domain_spec(), e, samples, config.numerics.seed)?;
        out.write(&format!("probe_{}.csv", e.id()), r.to_csv().as_bytes())?;
        summary.push_str(&format!(
            "{},{},{:.6e},{},{:.6e},{}\n",
            e.id(),
            r.coarse.grid,
            r.coarse.max_ratio,
            r.fine.grid,
            r.fine.max_ratio,
            if r.pass { "pass" } else { "fail" }
        ));
        all &= r.pass;
    }
    out.write("probes.csv", summary.as_bytes())?;
    Ok((finish(out, "probe", config, 1, vec![])?, all))
}

/// Consecutive-order differences on one shared noise path.
pub fn cauchy(config: &SimConfig, orders: &[usize], outdir: &Path) -> Result<Outcome> {
    let max = *orders.iter().max().ok_or_else(|| Error::arg("no orders given"))?;
    let mut out = start(config, outdir)?;
    let domain = config.domain_spec().build()?;
    let basis = EigenBasis::build(&domain, Some(max), config.numerics.eigen.into())?;
    let noise = NoiseModel::from_spec(&domain, &config.noise)?;
    let forcing = forcing_from(config, &domain)?;
    let u0 = initial_from(config, &domain);
    let r = cauchy_diagnostic(&basis, &noise, &forcing, config.terms(), &u0, orders, &options_from(config))?;
    let mut s = format!("# window_steps={}\nm,n,sup_v,int_a\n", r.window);
    for p in &r.pairs {
        s.push_str(&format!("{},{},{:.12e},{:.12e}\n", p.m, p.n, p.sup_v, p.int_a));
    }
    out.write("cauchy.csv", s.as_bytes())?;
    finish(out, "cauchy", config, 1, vec![])
}

/// Linear/remainder split with the anisotropic identities and monitors.
pub fn decompose(config: &SimConfig, outdir: &Path) -> Result<Outcome> {
    let mut out = start(config, outdir)?;
    let p = Prepared::new(config)?;
    let run = run_coupled_decomposition(&p.model, p.initial_coeffs(), &p.options)?;
    let defect = uhat_residual(&p.model, &run)?;
    let rep = anisotropic_identity_residuals(&p.model, &run)?;
    let mut s = String::from("t,split_defect,uhat_defect\n");
    for (j, t) in run.times.iter().enumerate() {
        let d = if j < defect.per_step.len() { defect.per_step[j] } else { f64::NAN };
        s.push_str(&format!("{:.12e},{:.6e},{:.6e}\n", t, run.split_defect[j], d));
    }
    out.write("split.csv", s.as_bytes())?;
    let mut s = String::from("t,dz_l2,dz_h1,dx_l2,dx_h1,check_h2,surface,surface_dx,r1,r2,r3,r4\n");
    for r in &rep.norms {
        s.push_str(&format!(
            "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}\n",
            r.t, r.dz_l2, r.dz_h1, r.dx_l2, r.dx_h1, r.check_h2, r.surface, r.surface_dx, r.r1, r.r2, r.r3, r.r4
        ));
    }
    out.write("norms.csv", s.as_bytes())?;
    for (name, rows) in [("identity_dz.csv", &rep.dz), ("identity_dx.csv", &rep.dx)] {
        let k = rows.first().map_or(0, |r| r.j.len());
        let mut s = String::from("t,lhs_rate,viscous,boundary");
        for i in 1..=k {
            s.push_str(&format!(",j{i}"));
        }
        s.push_str(",residual\n");
        for r in rows.iter() {
            s.push_str(&format!("{:.12e},{:.12e},{:.12e},{:.12e}", r.t, r.lhs_rate, r.viscous, r.boundary));
            for v in &r.j {
                s.push_str(&format!(",{v:.12e}"));
            }
            s.push_str(&format!(",{:.12e}\n", r.residual));
        }
        out.write(name, s.as_bytes())?;
    }
    let mut s = String::from("t,x1,x2,x\n");
    for m in monitors_x(&p.model, &run, &rep) {
        s.push_str(&format!("{:.12e},{:.12e},{:.12e},{:.12e}\n", m.t, m.x1, m.x2, m.x));
    }
    out.write("monitors.csv", s.as_bytes())?;
    let status = TrajectoryStatus { trajectory: 0, status: run.status.name().into(), steps: run.steps() };
    finish(out, "decompose", config, 1, vec![status])
}

/// Stopping-time bench. `generator` is `bounded`, `brownian` or `live`.
pub fn bench_stoptime(
    config: &SimConfig,
    generator: &str,
    levels: &[f64],
    localizations: &[f64],
    trials: usize,
    outdir: &Path,
) -> Result<(Outcome, StoptimeReport)> {
    let t = config.numerics.t_end;
    let steps = config.steps();
    let seed = config.numerics.seed;
    let gen: Box<dyn ProcessGenerator> = match generator {
        "bounded" => Box::new(BoundedGenerator { bound: levels.iter().copied().fold(0.0, f64::max) * 0.5, t_end: t, steps, seed }),
        "brownian" => Box::new(BrownianMaxGenerator { t_end: t, steps, seed }),
        "live" => {
            let p = Prepared::new(config)?;
            let c0 = p.initial_coeffs();
            Box::new(LiveGenerator { model: p.model, initial: c0, options: p.options })
        }
        other => return Err(Error::arg(format!("unknown generator {other}"))),
    };
    let mut out = start(config, outdir)?;
    let report = stoptime_exceedance_bench(gen.as_ref(), levels, localizations, t, trials)?;
    out.write("stoptime.csv", report.to_csv().as_bytes())?;
    out.write("stoptime_chain.csv", report.chain_csv().as_bytes())?;
    Ok((finish(out, "bench-stoptime", config, 1, vec![])?, report))
}

/// Gronwall bench. `generator` is `ode`, `trivial` or `live`.
pub fn bench_gronwall(config: &SimConfig, generator: &str, c0: f64, trials: usize, outdir: &Path) -> Result<(Outcome, GronwallReport)> {
    let t = config.numerics.t_end;
    let steps = config.steps();
    let seed = config.numerics.seed;
    let gen: Box<dyn GronwallGenerator> = match generator {
        "ode" => Box::new(OdeGenerator { rate: 1.0, t_end: t, steps, seed }),
        "trivial" => Box::new(DecayGenerator { t_end: t, steps, seed }),
        "live" => {
            let p = Prepared::new(config)?;
            let c = p.initial_coeffs();
            let level = if config.numerics.localization > 0.0 { config.numerics.localization } else { 1e6 };
            Box::new(LiveGronwallGenerator { model: p.model, initial: c, options: p.options, level })
        }
        other => return Err(Error::arg(format!("unknown generator {other}"))),
    };
    let mut out = start(config, outdir)?;
    let stride = (steps / 50).max(1);
    let report = stochastic_gronwall_bench(gen.as_ref(), c0, stride, trials)?;
    out.write("gronwall.csv", report.to_csv().as_bytes())?;
    let summary = format!(
        "k,c_theory,fitted_c,excluded,conclusion_rate\n{:.12e},{:.12e},{:.12e},{},{:.6}\n",
        report.k, report.c_theory, report.fitted_c, report.excluded, report.conclusion_rate
    );
    out.write("gronwall_summary.csv", summary.as_bytes())?;
    Ok((finish(out, "bench-gronwall", config, 1, vec![])?, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimConfig {
        SimConfig::from_toml(
            "[domain]\nnx = 8\nnz = 8\n[numerics]\nmodes = 12\ndt = 0.01\nt_end = 0.1\n[output]\ncadence = 5\n",
        )
        .unwrap()
    }

    #[test]
    fn ensemble_files_do_not_depend_on_threads() {
        let c = small();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ma = ensemble(&c, 4, 1, a.path()).unwrap().manifest;
        let mb = ensemble(&c, 4, 3, b.path()).unwrap().manifest;
        assert_eq!(ma.files, mb.files);
        assert_eq!(ma.statuses.len(), 4);
    }

    #[test]
    fn simulate_writes_inventory() {
        let dir = tempfile::tempdir().unwrap();
        let o = simulate(&small(), dir.path()).unwrap();
        assert!(!o.blowup);
        let names: Vec<_> = o.manifest.files.iter().map(|f| f.path.as_str()).collect();
        assert_eq!(names, ["config.toml", "diagnostics.csv", "snapshots.bin", "final.chk"]);
        assert!(dir.path().join("manifest.json").exists());
    }

    #[test]
    fn explicit_threads_win() {
        assert_eq!(resolve_threads(Some(3)).unwrap(), 3);
        assert!(resolve_threads(Some(0)).is_err());
    }
}
