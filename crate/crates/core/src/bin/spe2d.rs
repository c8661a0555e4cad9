use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spe2d::config::SimConfig;
use spe2d::workflow::{self, Outcome};
use spe2d::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_BLOWUP: u8 = 3;
const EXIT_INTERNAL: u8 = 4;

#[derive(Parser)]
#[command(name = "spe2d", version, about = "Simulator and diagnostics lab for the 2-D stochastic primitive equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; the shipped default when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `[numerics].seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `[output].dir`.
    #[arg(long)]
    outdir: Option<PathBuf>,
    /// Overrides `[output].cadence`.
    #[arg(long)]
    cadence: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trajectory.
    Simulate(Common),
    /// Run independent trajectories in parallel.
    Ensemble {
        #[command(flatten)]
        common: Common,
        /// Overrides `[output].trajectories`.
        #[arg(long)]
        trajectories: Option<usize>,
        /// Worker threads; falls back to SPE2D_THREADS, then all cores.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Compute and store the Stokes eigenbasis.
    Eigen(Common),
    /// Sample the discrete inequality estimates.
    Probe {
        #[command(flatten)]
        common: Common,
        /// Estimate ids, comma separated; all when omitted.
        #[arg(long, value_delimiter = ',')]
        estimates: Vec<String>,
        #[arg(long, default_value_t = 20)]
        samples: usize,
    },
    /// Compare Galerkin orders on one noise path.
    Cauchy {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "8,16,32")]
        orders: Vec<usize>,
    },
    /// Split the solution into linear and remainder parts and check the
    /// anisotropic energy identities.
    Decompose(Common),
    /// Monte Carlo bench of the stopping-time exceedance argument.
    BenchStoptime {
        #[command(flatten)]
        common: Common,
        /// bounded, brownian or live.
        #[arg(long, default_value = "brownian")]
        generator: String,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        levels: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "1,4")]
        localizations: Vec<f64>,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
    },
    /// Monte Carlo bench of the stochastic Gronwall lemma.
    BenchGronwall {
        #[command(flatten)]
        common: Common,
        /// ode, trivial or live.
        #[arg(long, default_value = "ode")]
        generator: String,
        /// Hypothesis constant.
        #[arg(long, default_value_t = 1.0)]
        c0: f64,
        #[arg(long, default_value_t = 200)]
        trials: usize,
    },
    /// Parse a config and print its normalized form.
    ValidateConfig {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load(path: Option<&PathBuf>) -> spe2d::Result<SimConfig> {
    match path {
        Some(p) => SimConfig::from_file(p).map_err(|e| match e {
            Error::Io(io) => Error::Config { path: p.display().to_string(), message: io.to_string() },
            other => other,
        }),
        None => Ok(SimConfig::shipped_default()),
    }
}

fn prepare(c: &Common) -> spe2d::Result<(SimConfig, PathBuf)> {
    let mut cfg = load(c.config.as_ref())?;
    if let Some(s) = c.seed {
        cfg.numerics.seed = s;
    }
    if let Some(k) = c.cadence {
        cfg.output.cadence = k;
    }
    cfg.validate()?;
    // the output location is an invocation choice, not part of the run
    let dir = c.outdir.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    Ok((cfg, dir))
}

fn report(o: &Outcome) {
    for s in &o.manifest.statuses {
        println!("trajectory {} {} after {} steps", s.trajectory, s.status, s.steps);
    }
    println!("wrote {} files", o.manifest.files.len() + 1);
}

fn run(cmd: Command) -> spe2d::Result<bool> {
    let outcome = match cmd {
        Command::Simulate(c) => {
            let (cfg, dir) = prepare(&c)?;
            workflow::simulate(&cfg, &dir)?
        }
        Command::Ensemble { common, trajectories, threads } => {
            let (cfg, dir) = prepare(&common)?;
            let n = trajectories.unwrap_or(cfg.output.trajectories);
            workflow::ensemble(&cfg, n, workflow::resolve_threads(threads)?, &dir)?
        }
        Command::Eigen(c) => {
            let (cfg, dir) = prepare(&c)?;
            workflow::eigen(&cfg, &dir)?
        }
        Command::Probe { common, estimates, samples } => {
            let (cfg, dir) = prepare(&common)?;
            let (o, pass) = workflow::probe(&cfg, &estimates, samples, &dir)?;
            println!("probes {}", if pass { "pass" } else { "fail" });
            o
        }
        Command::Cauchy { common, orders } => {
            let (cfg, dir) = prepare(&common)?;
            workflow::cauchy(&cfg, &orders, &dir)?
        }
        Command::Decompose(c) => {
            let (cfg, dir) = prepare(&c)?;
            workflow::decompose(&cfg, &dir)?
        }
        Command::BenchStoptime { common, generator, levels, localizations, trials } => {
            let (cfg, dir) = prepare(&common)?;
            let (o, r) = workflow::bench_stoptime(&cfg, &generator, &levels, &localizations, trials, &dir)?;
            for row in &r.rows {
                println!("M={} p={:.4e} se={:.2e}", row.m, row.p_hat, row.stderr);
            }
            println!("chain bound holds: {}", r.chain.iter().all(|c| c.holds));
            o
        }
        Command::BenchGronwall { common, generator, c0, trials } => {
            let (cfg, dir) = prepare(&common)?;
            let (o, r) = workflow::bench_gronwall(&cfg, &generator, c0, trials, &dir)?;
            println!("k={:.4} fitted C={:.6} theory C={:.6} excluded={}", r.k, r.fitted_c, r.c_theory, r.excluded);
            o
        }
        Command::ValidateConfig { config } => {
            let cfg = load(config.as_ref())?;
            print!("{}", cfg.echo());
            return Ok(false);
        }
    };
    report(&outcome);
    Ok(outcome.blowup)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(EXIT_BLOWUP),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config { .. } => EXIT_CONFIG,
                Error::Blowup { .. } => EXIT_BLOWUP,
                Error::InvalidArgument(_) => EXIT_USAGE,
                _ => EXIT_INTERNAL,
            })
        }
    }
}
