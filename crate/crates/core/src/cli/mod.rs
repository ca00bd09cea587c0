//! Batch driver: `choquard run|sweep <config>`.

pub mod config;
pub mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use crate::bubble::{estimate_critical_constants, sobolev_ladder, CriticalConstants};
use crate::energy::FieldParts;
use crate::error::{Error, Result};
use crate::fiber::{estimate_embedding_constant, lambda_proxy, lambda_star_closed_form, Constants, FiberMap};
use crate::grid::{build_grid, Field};
use crate::riesz::{make_exponents, Convolution, Exponents, KernelTable};
use crate::solver::{minimize_nminus, minimize_nplus, perturbed, seed_field, verify_solution, SolverConfig};

pub use config::{Command, LambdaSpec, RunConfig, SweepSpec};
pub use report::{EmbeddingReport, LambdaInfo, Report, SweepRow, VerifyReport};

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "CHOQUARD_THREADS";

#[derive(Debug, Parser)]
#[command(name = "choquard", version, about = "Two positive solutions of a singular Choquard problem")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Mode,
}

#[derive(Debug, Subcommand)]
pub enum Mode {
    /// Execute the commands listed in the config.
    Run(RunArgs),
    /// Only the λ-sweep of the config.
    Sweep(RunArgs),
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    pub config: PathBuf,
    #[arg(long, default_value = "fast")]
    pub convolution: Convolution,
    /// `m=NN` replaces the grid's points per axis.
    #[arg(long)]
    pub grid_override: Option<String>,
}

/// Exit status: 0 all converged, 2 some branch did not, 1 on errors.
pub fn main_with(cli: Cli) -> ExitCode {
    let threads = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse().ok());
    crate::par::init_threads(threads);
    let (args, sweep_only) = match &cli.command {
        Mode::Run(a) => (a, false),
        Mode::Sweep(a) => (a, true),
    };
    match run(args, sweep_only) {
        Ok(report) if report.all_converged() => ExitCode::SUCCESS,
        Ok(_) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

pub fn run(args: &RunArgs, sweep_only: bool) -> Result<Report> {
    let mut cfg = RunConfig::from_path(&args.config)?;
    if let Some(o) = &args.grid_override {
        cfg.override_grid(o)?;
    }
    if sweep_only {
        cfg.commands = vec![Command::Sweep];
    }
    cfg.echo.insert("cli.convolution".into(), format!("{:?}", args.convolution).to_lowercase());
    let report = execute(&cfg, args.convolution)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    std::fs::write(cfg.output_dir.join("report.json"), report.to_json()?)?;
    Ok(report)
}

/// `(n_roots, t1, t2, m_max, λ_crit)` of `probe` at each λ.
pub fn sweep_lambda(probe: &Field, exps: &Exponents, kt: &KernelTable, lambdas: &[f64]) -> Result<Vec<SweepRow>> {
    if probe.is_zero() {
        return Err(Error::ZeroField);
    }
    let parts = FieldParts::of(probe, exps, kt)?;
    Ok(lambdas
        .iter()
        .map(|&lambda| {
            let map = FiberMap::new(&parts, lambda, exps);
            let roots = map.roots();
            SweepRow {
                lambda,
                n_roots: if roots.is_some() { 2 } else { 0 },
                t1: roots.map(|r| r.0),
                t2: roots.map(|r| r.1),
                t_max: map.t_max(),
                m_max: map.m_max(),
                lambda_crit: map.lambda_crit(),
            }
        })
        .collect())
}

/// Runs the configured commands in order; files go to `cfg.output_dir`.
pub fn execute(cfg: &RunConfig, conv: Convolution) -> Result<Report> {
    let grid = build_grid(&cfg.grid)?;
    let exps = make_exponents(cfg.n, cfg.mu, cfg.q)?;
    let kt = KernelTable::new(&grid, cfg.mu)?.with_mode(conv);
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out)?;

    let mut report = Report {
        config_echo: cfg.echo.clone(),
        ..Default::default()
    };
    let proxy = lambda_proxy(&grid, &exps, &kt, cfg.proxy_probes, cfg.proxy_seed)?;
    let lambda = match cfg.lambda {
        LambdaSpec::Absolute(v) => v,
        LambdaSpec::ProxyFactor(f) => f * proxy.value,
    };
    report.lambda = Some(LambdaInfo { value: lambda, proxy });
    let solver = SolverConfig {
        lambda,
        lambda_limit: Some(proxy.value),
        ..cfg.solver.clone()
    };
    let mut consts: Option<CriticalConstants> = None;
    let constants = |consts: &mut Option<CriticalConstants>| -> Result<CriticalConstants> {
        if consts.is_none() {
            let eps = cfg.sobolev_epsilon;
            *consts = Some(estimate_critical_constants(&sobolev_ladder(cfg.n, eps), eps, &exps)?);
        }
        Ok(consts.clone().expect("just set"))
    };

    for command in &cfg.commands {
        info!("command {command:?}");
        match command {
            Command::Constants => {
                let c = constants(&mut consts)?;
                let c1 = estimate_embedding_constant(&grid, 1.0 - cfg.q, cfg.embedding_trials, cfg.proxy_seed)?;
                let c2 = estimate_embedding_constant(&grid, exps.two_star, cfg.embedding_trials, cfg.proxy_seed)?;
                let mut table = Constants {
                    c_nmu: Some(c.c_nmu_hat),
                    k: cfg.k,
                    ..Default::default()
                };
                table.insert(c1);
                table.insert(c2);
                report.embedding = Some(EmbeddingReport {
                    c_1mq: c1,
                    c_2star: c2,
                    k: cfg.k,
                    lambda_star: lambda_star_closed_form(&table, &exps)?,
                });
                report.constants = Some(c);
            }
            Command::Solve => {
                let c = constants(&mut consts)?;
                report.constants = Some(c.clone());
                let up = minimize_nplus(&solver, &grid, &exps, &kt)?;
                let vm = minimize_nminus(&solver, &grid, &exps, &kt, &up, &c)?;
                report::write_field_csv(up.field(), &out.join("nplus.csv"))?;
                report::write_field_csv(vm.field(), &out.join("nminus.csv"))?;
                report::write_profile_csv(&[("nplus", up.field()), ("nminus", vm.field())], &out.join("profile.csv"))?;
                for (name, r) in [("nplus", &up), ("nminus", &vm)] {
                    if let Some(env) = &r.envelope {
                        report::write_envelope_csv(env, &out.join(format!("envelope_{name}.csv")))?;
                    }
                }
                report.nplus = Some(up);
                report.nminus = Some(vm);
            }
            Command::Sweep => {
                let probe = seed_field(&solver, &grid, &exps)?;
                let lambdas = match &cfg.sweep {
                    SweepSpec::Lambdas(v) => v.clone(),
                    SweepSpec::Factors(f) => {
                        let crit = FiberMap::new(&FieldParts::of(&probe, &exps, &kt)?, 1.0, &exps).lambda_crit();
                        f.iter().map(|x| x * crit).collect()
                    }
                };
                let rows = sweep_lambda(&probe, &exps, &kt, &lambdas)?;
                report::write_sweep_csv(&rows, &out.join("sweep.csv"))?;
                report.sweep = Some(rows);
            }
            Command::Verify => {
                let up = report
                    .nplus
                    .as_ref()
                    .ok_or_else(|| Error::InvalidParameters("`verify` needs an earlier `solve`".into()))?;
                let seed = solver.rng_seed;
                let nplus = verify_solution(up.field(), lambda, &exps, &kt, cfg.verify_tests, seed)?;
                let nminus = report
                    .nminus
                    .as_ref()
                    .map(|v| verify_solution(v.field(), lambda, &exps, &kt, cfg.verify_tests, seed))
                    .transpose()?;
                let bumped = perturbed(up.field(), 0.1, seed);
                let perturbed_nplus = verify_solution(&bumped, lambda, &exps, &kt, cfg.verify_tests, seed)?.residual_max;
                report.verification = Some(VerifyReport {
                    nplus,
                    nminus,
                    perturbed_nplus,
                });
            }
        }
    }
    Ok(report)
}
