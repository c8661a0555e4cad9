//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). Extra arguments select
//! criteria by number, e.g. `cargo test --test acceptance -- 8 13`.

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use spe2d::analysis::bench::{
    brownian_two_sided_exceedance, reflection_estimate, stochastic_gronwall_bench, stoptime_exceedance_bench, BrownianMaxGenerator,
    OdeGenerator,
};
use spe2d::analysis::{anisotropic_identity_residuals, run_coupled_decomposition};
use spe2d::domain::sampling::{rough_state, smooth_state};
use spe2d::integrator::{cauchy_diagnostic, run_trajectory, Forcing, GalerkinModel, RunOptions};
use spe2d::noise::{martingale_moments, NoiseKind, NoiseModel, NoiseSpec};
use spe2d::operators::{apply_a, apply_b, apply_e, vertical_velocity, DriftTerms};
use spe2d::spectral::{Block, EigenBasis, EigenMethod};
use spe2d::{BcTag, Domain, DomainSpec, ScalarField, StateField};

type Check = fn() -> Verdict;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn domain(n: usize) -> Arc<Domain> {
    DomainSpec::unit(n).build().unwrap()
}

/// Alternates smooth and rough admissible states.
fn sample_state(d: &Arc<Domain>, r: &mut ChaCha8Rng, i: usize) -> StateField {
    if i.is_multiple_of(2) {
        let order = r.random_range(1..6);
        smooth_state(d, r, order, 1.0)
    } else {
        rough_state(d, r, 1.0)
    }
}

fn cancellation() -> Verdict {
    let d = domain(32);
    let mut r = rng(1);
    let mut worst = 0.0_f64;
    for i in 0..1000 {
        let a = sample_state(&d, &mut r, i).project_v();
        let b = sample_state(&d, &mut r, i + 1).project_v();
        let lhs = apply_b(&a, &b).unwrap().inner_h(&b).unwrap().abs();
        worst = worst.max(lhs / (a.norm_v_sq().sqrt() * b.norm_v_sq()));
    }
    verdict(worst <= 1e-11, format!("max |<B(U,V),V>| / (||U|| ||V||^2) = {worst:.2e}"))
}

fn quadratic_form() -> Verdict {
    let d = domain(32);
    let mut r = rng(2);
    let mut worst = 0.0_f64;
    for i in 0..100 {
        let s = sample_state(&d, &mut r, i).project_v();
        let q = s.norm_v_sq();
        worst = worst.max((apply_a(&s).inner_h(&s).unwrap() - q).abs() / q);
    }
    verdict(worst <= 1e-10, format!("max relative residual {worst:.2e}"))
}

fn coriolis() -> Verdict {
    let d = domain(32);
    let f = d.physics().f;
    let mut r = rng(3);
    let mut worst = 0.0_f64;
    for i in 0..1000 {
        let s = sample_state(&d, &mut r, i).project_h();
        worst = worst.max(apply_e(&s).inner_h(&s).unwrap().abs() / (f.abs() * s.norm_h_sq()));
    }
    verdict(worst <= 1e-12, format!("max |<EU,U>| / (f |U|^2) = {worst:.2e}"))
}

fn diagnostic_w() -> Verdict {
    let mut errs = Vec::new();
    let mut bottom = 0.0_f64;
    for n in [16, 32, 64, 128] {
        let d = domain(n);
        let u = ScalarField::from_fn(&d, BcTag::Velocity, |x, z| (PI * x).sin() * (z + 0.5));
        let w = vertical_velocity(&u).unwrap();
        let exact = ScalarField::from_fn(&d, BcTag::Free, |x, z| PI * (PI * x).cos() * (-0.5 * z * z - 0.5 * z));
        errs.push(w.axpy(-1.0, &exact).unwrap().max_abs());
        let scale = d.depth() * u.max_abs() / d.dx;
        bottom = bottom.max(w.bottom_trace().iter().fold(0.0_f64, |m, v| m.max(v.abs())) / scale);
    }
    let ratios: Vec<f64> = errs.windows(2).map(|e| e[0] / e[1]).collect();
    let pass = ratios.iter().all(|&q| q >= 3.5) && bottom <= 1e-12;
    verdict(pass, format!("error ratios {ratios:.2?}, bottom |w| / scale {bottom:.1e}"))
}

fn eigenbasis() -> Verdict {
    let d = domain(32);
    let b = EigenBasis::build(&d, Some(48), EigenMethod::Separable).unwrap();
    let dense = EigenBasis::build(&domain(12), Some(40), EigenMethod::Dense).unwrap();
    let gram = b.gram_residual().max(dense.gram_residual());
    let rayleigh = b.rayleigh_residual().max(dense.rayleigh_residual());
    let mut spec = DomainSpec::unit(64);
    spec.physics.alpha_v = 0.0;
    let free = EigenBasis::build(&spec.build().unwrap(), Some(30), EigenMethod::Separable).unwrap();
    let k = free.blocks.iter().position(|&bl| bl == Block::V).unwrap();
    // v = sin(pi x) cos(pi z / 2) on the unit square
    let exact = spec.physics.nu * PI * PI * 1.25;
    let rel = (free.lambdas[k] / exact - 1.0).abs();
    verdict(
        gram <= 1e-10 && rayleigh <= 1e-8 && rel <= 0.02,
        format!("gram {gram:.1e}, rayleigh {rayleigh:.1e}, v-block lambda1 off by {:.2}%", 100.0 * rel),
    )
}

fn poincare() -> Verdict {
    let d = domain(16);
    let b = EigenBasis::build(&d, Some(33), EigenMethod::Separable).unwrap();
    let mut r = rng(6);
    let mut violations = 0;
    let mut tightest = 0.0_f64;
    for _ in 0..100 {
        let order = r.random_range(1..7);
        let s = smooth_state(&d, &mut r, order, 1.0);
        for n in [8, 16, 32] {
            let c = b.poincare_check(&s, n).unwrap();
            violations += usize::from(!c.holds);
            tightest = tightest.max(c.lhs / c.rhs);
        }
    }
    verdict(violations == 0, format!("{violations} violations in 300 checks, max lhs/rhs {tightest:.3}"))
}

fn dissipativity() -> Verdict {
    let d = domain(16);
    let b = EigenBasis::build(&d, Some(24), EigenMethod::Separable).unwrap();
    let terms = DriftTerms { buoyancy: false, ..DriftTerms::default() };
    let m = GalerkinModel::new(&b, 24, NoiseModel::zero(&d), Forcing::Zero, terms).unwrap();
    let mut r = rng(7);
    let mut bad = 0;
    let mut worst = f64::MIN;
    for _ in 0..20 {
        let amp = r.random_range(0.5..2.0);
        let s = smooth_state(&d, &mut r, 3, amp);
        let rec = run_trajectory(&m, m.project_initial(&s), &RunOptions::new(2e-3, 1000)).unwrap();
        let up = rec.rows.windows(2).map(|w| (w[1].energy - w[0].energy) / w[0].energy).fold(f64::MIN, f64::max);
        worst = worst.max(up);
        bad += usize::from(up > 1e-13);
    }
    verdict(bad == 0, format!("{bad} of 20 runs increased, max relative step change {worst:.1e}"))
}

fn ou_statistics() -> Verdict {
    let mut spec = DomainSpec::new(4.0, 1.0, 16, 16);
    spec.physics.alpha_v = 10.0;
    spec.physics.alpha_t = 10.0;
    let d = spec.build().unwrap();
    let b = EigenBasis::build(&d, Some(10), EigenMethod::Separable).unwrap();
    let q = vec![1.0; 10];
    let m = GalerkinModel::new(&b, 10, NoiseModel::additive_diagonal(&b, &q).unwrap(), Forcing::Zero, DriftTerms::NONE).unwrap();
    let lam = b.lambdas.clone();
    let dt = 0.02 / lam[9];
    let mut o = RunOptions::new(dt, 2000);
    o.seed = 8;
    let trials = 10_000;
    let finals: Vec<Vec<f64>> = (0..trials as u64)
        .into_par_iter()
        .map(|k| {
            let mut ok = o.clone();
            ok.trajectory = k;
            run_trajectory(&m, vec![0.0; 10], &ok).unwrap().final_state.coeffs
        })
        .collect();
    let mut worst = 0.0_f64;
    for k in 0..10 {
        let sq: Vec<f64> = finals.iter().map(|c| c[k] * c[k]).collect();
        let mean = sq.iter().sum::<f64>() / trials as f64;
        let sd = (sq.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (trials as f64 - 1.0)).sqrt();
        let z = (mean - q[k] * q[k] / (2.0 * lam[k])).abs() / (sd / (trials as f64).sqrt());
        worst = worst.max(z);
    }
    verdict(
        m.has_fast_path() && worst <= 3.0,
        format!("lambda10/lambda1 = {:.2}, max |z| over 10 modes {worst:.2}", lam[9] / lam[0]),
    )
}

fn ito_isometry() -> Verdict {
    let d = domain(16);
    let spec = NoiseSpec { kind: NoiseKind::Additive, modes: 16, additive_gain: 0.1, ..NoiseSpec::default() };
    let noise = NoiseModel::from_spec(&d, &spec).unwrap();
    let r = martingale_moments(&noise, 1e-2, 100, 10_000, 9).unwrap();
    let z = (r.second_moment - r.expected).abs() / r.standard_error;
    verdict(z <= 3.0, format!("E|M_t|^2 = {:.4e}, t sum |sigma_k|^2 = {:.4e}, |z| = {z:.2}", r.second_moment, r.expected))
}

fn cauchy_trend() -> Verdict {
    let d = domain(32);
    let b = EigenBasis::build(&d, Some(256), EigenMethod::Separable).unwrap();
    let spec = NoiseSpec { modes: 16, additive_gain: 0.2, ..NoiseSpec::default() };
    let noise = NoiseModel::from_spec(&d, &spec).unwrap();
    let mut good = 0;
    let mut medians = vec![Vec::new(); 3];
    for seed in 0..20u64 {
        let u0 = b.spectral_state(&mut rng(100 + seed), 3.0, 2.0);
        let mut o = RunOptions::new(2e-3, 250);
        o.seed = seed;
        let r = cauchy_diagnostic(&b, &noise, &Forcing::Zero, DriftTerms::default(), &u0, &[8, 16, 32, 64], &o).unwrap();
        let sups: Vec<f64> = r.pairs.iter().map(|p| p.sup_v).collect();
        for (k, s) in sups.iter().enumerate() {
            medians[k].push(*s);
        }
        good += usize::from(sups.windows(2).all(|w| w[1] < w[0]));
    }
    let med: Vec<f64> = medians
        .iter_mut()
        .map(|v| {
            v.sort_by(f64::total_cmp);
            0.5 * (v[9] + v[10])
        })
        .collect();
    let pass = good >= 18 && med.windows(2).all(|w| w[1] < w[0]);
    verdict(pass, format!("{good} of 20 seeds strictly decreasing, median sup ||R||^2 {:?}", med.iter().map(|v| format!("{v:.2e}")).collect::<Vec<_>>()))
}

fn decomposition() -> Verdict {
    let d = domain(12);
    let b = EigenBasis::build(&d, Some(20), EigenMethod::Separable).unwrap();
    let spec = NoiseSpec { kind: NoiseKind::Affine, modes: 8, additive_gain: 0.1, multiplicative_gain: 0.1, ..NoiseSpec::default() };
    let u0 = smooth_state(&d, &mut rng(11), 3, 1.0);
    let mut o = RunOptions::new(2e-3, 200);
    o.seed = 11;
    let noisy = GalerkinModel::new(&b, 20, NoiseModel::from_spec(&d, &spec).unwrap(), Forcing::Zero, DriftTerms::default()).unwrap();
    let run = run_coupled_decomposition(&noisy, noisy.project_initial(&u0), &o).unwrap();
    let split = run.split_defect.iter().copied().fold(0.0, f64::max);
    let quiet = GalerkinModel::new(&b, 20, NoiseModel::zero(&d), Forcing::Zero, DriftTerms::default()).unwrap();
    let run0 = run_coupled_decomposition(&quiet, quiet.project_initial(&u0), &o).unwrap();
    let zero = run0.linear.iter().all(|c| c.iter().all(|&v| v == 0.0));
    verdict(split <= 1e-12 && zero, format!("max split defect {split:.1e}, U_check identically zero without noise: {zero}"))
}

fn identity_closure() -> Verdict {
    let d = domain(12);
    let b = EigenBasis::build(&d, Some(20), EigenMethod::Separable).unwrap();
    let f = smooth_state(&d, &mut rng(12), 2, 0.5);
    let m = GalerkinModel::new(&b, 20, NoiseModel::zero(&d), Forcing::Fixed(f), DriftTerms::default()).unwrap();
    let c0 = m.project_initial(&smooth_state(&d, &mut rng(13), 3, 1.0));
    let (mut rz, mut rx) = (Vec::new(), Vec::new());
    for (dt, steps) in [(4e-3, 25), (2e-3, 50), (1e-3, 100)] {
        let run = run_coupled_decomposition(&m, c0.clone(), &RunOptions::new(dt, steps)).unwrap();
        let rep = anisotropic_identity_residuals(&m, &run).unwrap();
        rz.push(rep.dz_residual(dt).l1);
        rx.push(rep.dx_residual(dt).l1);
    }
    let order = |r: &[f64]| r.windows(2).map(|w| (w[0] / w[1]).log2()).collect::<Vec<_>>();
    let (oz, ox) = (order(&rz), order(&rx));
    let pass = oz.iter().chain(&ox).all(|&p| p >= 0.9);
    verdict(pass, format!("d_z orders {oz:.2?}, d_x orders {ox:.2?}"))
}

fn stoptime() -> Verdict {
    let g = BrownianMaxGenerator { t_end: 1.0, steps: 1000, seed: 13 };
    let r = stoptime_exceedance_bench(&g, &[1.0, 2.0, 3.0], &[0.25, 0.5, 1.0, 2.0], 1.0, 10_000).unwrap();
    let mut worst = 0.0_f64;
    let mut parts = Vec::new();
    for row in &r.rows {
        let exact = brownian_two_sided_exceedance(row.m, 1.0);
        worst = worst.max((row.p_hat - exact).abs() / (exact * (1.0 - exact) / r.trials as f64).sqrt());
        parts.push(format!("M={}: {:.4} vs {:.4} (leading term {:.4})", row.m, row.p_hat, exact, reflection_estimate(row.m, 1.0)));
    }
    let chain = r.chain.iter().all(|c| c.holds);
    verdict(worst <= 3.0 && r.monotone && chain, format!("{}; max |z| {worst:.2}, monotone {}, chain holds {chain}", parts.join(", "), r.monotone))
}

fn gronwall() -> Verdict {
    let g = OdeGenerator { rate: 1.0, t_end: 1.0, steps: 400, seed: 14 };
    let r = stochastic_gronwall_bench(&g, 1.0, 20, 500).unwrap();
    let e = r.k.exp();
    let rel = (r.fitted_c / e - 1.0).abs();
    verdict(r.excluded == 0 && rel <= 0.05, format!("k = {}, fitted C = {:.4}, e^k = {e:.4}, off by {:.2}%", r.k, r.fitted_c, 100.0 * rel))
}

fn run_cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_spe2d")).args(args).output().map(|o| o.status.success()).unwrap_or(false)
}

/// Every file listed in the manifest except the manifest itself.
fn outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let text = std::fs::read_to_string(dir.join("manifest.json")).unwrap();
    let m: spe2d::io::Manifest = serde_json::from_str(&text).unwrap();
    m.files.iter().map(|f| (f.path.clone(), std::fs::read(dir.join(&f.path)).unwrap())).collect()
}

fn reproducibility() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(
        &cfg,
        "[domain]\nnx = 12\nnz = 12\n[noise]\nkind = \"affine\"\nmodes = 8\nmultiplicative_gain = 0.05\n\
         [numerics]\nmodes = 20\ndt = 0.005\nt_end = 0.5\nseed = 21\n[output]\ncadence = 10\n",
    )
    .unwrap();
    let cfg = cfg.to_str().unwrap();
    let jobs: [(&str, &[&str], &[&str]); 5] = [
        ("simulate", &["simulate"], &["simulate"]),
        ("ensemble", &["ensemble", "--trajectories", "16", "--threads", "1"], &["ensemble", "--trajectories", "16", "--threads", "8"]),
        ("decompose", &["decompose"], &["decompose"]),
        ("cauchy", &["cauchy", "--orders", "5,10,20"], &["cauchy", "--orders", "5,10,20"]),
        ("bench-stoptime", &["bench-stoptime", "--trials", "200"], &["bench-stoptime", "--trials", "200"]),
    ];
    let mut failures = Vec::new();
    let mut files = 0;
    for (name, a, b) in jobs {
        let (da, db) = (tmp.path().join(format!("{name}_a")), tmp.path().join(format!("{name}_b")));
        let run = |args: &[&str], dir: &Path| {
            let mut v = args.to_vec();
            v.extend(["--config", cfg, "--outdir", dir.to_str().unwrap()]);
            run_cli(&v)
        };
        if !(run(a, &da) && run(b, &db)) {
            failures.push(format!("{name} failed to run"));
            continue;
        }
        let (oa, ob) = (outputs(&da), outputs(&db));
        files += oa.len();
        if oa != ob {
            failures.push(format!("{name} differs"));
        }
    }
    let detail = if failures.is_empty() { format!("{files} files byte-identical across reruns and 1 vs 8 threads") } else { failures.join(", ") };
    verdict(failures.is_empty(), detail)
}

fn main() {
    let criteria: [(&str, Check); 15] = [
        ("advection cancellation", cancellation),
        ("quadratic form of A", quadratic_form),
        ("Coriolis does no work", coriolis),
        ("diagnostic vertical velocity", diagnostic_w),
        ("eigenbasis", eigenbasis),
        ("generalized Poincare inequality", poincare),
        ("deterministic dissipativity", dissipativity),
        ("OU stationary variance", ou_statistics),
        ("Ito isometry", ito_isometry),
        ("Galerkin Cauchy trend", cauchy_trend),
        ("linear/remainder split", decomposition),
        ("anisotropic identity closure", identity_closure),
        ("stopping-time bench", stoptime),
        ("stochastic Gronwall bench", gronwall),
        ("reproducibility", reproducibility),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !selected.is_empty() && !selected.contains(&(i + 1)) {
            continue;
        }
        let t0 = Instant::now();
        let v = check();
        failed += usize::from(!v.pass);
        println!(
            "{} {:>2} {name}: {} [{:.1}s]",
            if v.pass { "PASS" } else { "FAIL" },
            i + 1,
            v.detail,
            t0.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
