//! Flat `key = value` run configuration.
//!
//! ```text
//! # comment
//! problem.n = 3
//! problem.lambda_factor = 0.1   # λ as a multiple of the threshold proxy
//! grid.shape = ball
//! run.commands = constants, solve, sweep, verify
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, ShapeTag};
use crate::solver::{SeedKind, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Constants,
    Solve,
    Sweep,
    Verify,
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "constants" => Ok(Command::Constants),
            "solve" => Ok(Command::Solve),
            "sweep" => Ok(Command::Sweep),
            "verify" => Ok(Command::Verify),
            other => Err(Error::InvalidParameters(format!("unknown command `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaSpec {
    Absolute(f64),
    /// Multiple of the empirical threshold proxy.
    ProxyFactor(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SweepSpec {
    Lambdas(Vec<f64>),
    /// Multiples of the probe's `λ_crit`.
    Factors(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub n: usize,
    pub mu: f64,
    pub q: f64,
    pub lambda: LambdaSpec,
    pub grid: GridSpec,
    pub solver: SolverConfig,
    pub commands: Vec<Command>,
    pub output_dir: PathBuf,
    pub proxy_probes: usize,
    pub proxy_seed: u64,
    /// Bubble scale of the Sobolev ladder.
    pub sobolev_epsilon: f64,
    pub embedding_trials: usize,
    /// Multiplier `K` in the λ_* display.
    pub k: f64,
    pub sweep: SweepSpec,
    pub verify_tests: usize,
    /// Every recognised key with its raw value, sorted.
    pub echo: BTreeMap<String, String>,
}

pub const DEFAULT_SWEEP_FACTORS: [f64; 8] = [0.25, 0.4, 0.6, 0.85, 1.15, 1.6, 2.5, 4.0];

const KEYS: &[&str] = &[
    "problem.n",
    "problem.mu",
    "problem.q",
    "problem.lambda",
    "problem.lambda_factor",
    "grid.shape",
    "grid.extent",
    "grid.m",
    "solver.max_iters",
    "solver.step0",
    "solver.energy_tol",
    "solver.residual_tol",
    "solver.floor",
    "solver.seed_kind",
    "solver.rng_seed",
    "solver.verify_tests",
    "solver.epsilon",
    "proxy.probes",
    "proxy.seed",
    "constants.sobolev_epsilon",
    "constants.embedding_trials",
    "constants.k",
    "sweep.lambdas",
    "sweep.factors",
    "verify.tests",
    "run.commands",
    "output.dir",
];

struct Entry {
    line: usize,
    value: String,
}

fn parse_value<T: FromStr>(key: &str, e: &Entry) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    e.value.parse::<T>().map_err(|err| Error::Config {
        line: e.line,
        message: format!("`{key}`: cannot parse `{}`: {err}", e.value),
    })
}

fn parse_list<T: FromStr>(key: &str, e: &Entry) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    e.value
        .split(',')
        .map(|item| {
            item.trim().parse::<T>().map_err(|err| Error::Config {
                line: e.line,
                message: format!("`{key}`: cannot parse `{}`: {err}", item.trim()),
            })
        })
        .collect()
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, Entry> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let Some((key, value)) = body.split_once('=') else {
                return Err(Error::Config {
                    line,
                    message: format!("expected `key = value`, got `{body}`"),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::Config {
                    line,
                    message: format!("unknown key `{key}`"),
                });
            }
            if value.is_empty() {
                return Err(Error::Config {
                    line,
                    message: format!("`{key}` has no value"),
                });
            }
            if let Some(prev) = entries.get(key) {
                return Err(Error::Config {
                    line,
                    message: format!("`{key}` already set on line {}", prev.line),
                });
            }
            entries.insert(
                key.to_string(),
                Entry {
                    line,
                    value: value.to_string(),
                },
            );
        }
        Self::from_entries(&entries)
    }

    fn from_entries(entries: &BTreeMap<String, Entry>) -> Result<Self> {
        fn get<T: FromStr>(entries: &BTreeMap<String, Entry>, key: &str, default: T) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            entries.get(key).map_or(Ok(default), |e| parse_value(key, e))
        }
        // Semantic errors point at the offending line when there is one.
        let at = |key: &str, message: String| Error::Config {
            line: entries.get(key).map_or(0, |e| e.line),
            message,
        };

        let n: usize = get(entries, "problem.n", 3)?;
        let mu: f64 = get(entries, "problem.mu", 1.0)?;
        let q: f64 = get(entries, "problem.q", 0.5)?;
        crate::riesz::make_exponents(n, mu, q).map_err(|e| at("problem.mu", e.to_string()))?;
        let lambda = match (entries.get("problem.lambda"), entries.get("problem.lambda_factor")) {
            (Some(_), Some(e)) => {
                return Err(Error::Config {
                    line: e.line,
                    message: "set only one of `problem.lambda` and `problem.lambda_factor`".into(),
                })
            }
            (Some(e), None) => LambdaSpec::Absolute(parse_value("problem.lambda", e)?),
            (None, Some(e)) => LambdaSpec::ProxyFactor(parse_value("problem.lambda_factor", e)?),
            (None, None) => LambdaSpec::ProxyFactor(0.1),
        };
        let lambda_value = match lambda {
            LambdaSpec::Absolute(v) | LambdaSpec::ProxyFactor(v) => v,
        };
        if !(lambda_value > 0.0 && lambda_value.is_finite()) {
            let key = if matches!(lambda, LambdaSpec::Absolute(_)) {
                "problem.lambda"
            } else {
                "problem.lambda_factor"
            };
            return Err(at(key, format!("`{key}` must be positive")));
        }

        let shape: ShapeTag = get(entries, "grid.shape", ShapeTag::Ball)?;
        let extent: f64 = get(entries, "grid.extent", 2.0)?;
        let m: usize = get(entries, "grid.m", 33)?;
        let grid = GridSpec::cube(shape, n, extent, m);
        crate::grid::DomainGrid::new(&grid).map_err(|e| at("grid.m", e.to_string()))?;

        let defaults = SolverConfig::default();
        let solver = SolverConfig {
            lambda: 1.0,
            max_iters: get(entries, "solver.max_iters", defaults.max_iters)?,
            step0: get(entries, "solver.step0", defaults.step0)?,
            energy_tol: get(entries, "solver.energy_tol", defaults.energy_tol)?,
            residual_tol: get(entries, "solver.residual_tol", defaults.residual_tol)?,
            floor: get(entries, "solver.floor", defaults.floor)?,
            seed_kind: get::<SeedKind>(entries, "solver.seed_kind", defaults.seed_kind)?,
            rng_seed: get(entries, "solver.rng_seed", defaults.rng_seed)?,
            verify_tests: get(entries, "solver.verify_tests", defaults.verify_tests)?,
            epsilon: entries
                .get("solver.epsilon")
                .map(|e| parse_value("solver.epsilon", e))
                .transpose()?,
            lambda_limit: None,
        };
        solver.validate().map_err(|e| at("solver.max_iters", e.to_string()))?;

        let commands = match entries.get("run.commands") {
            Some(e) => parse_list::<Command>("run.commands", e)?,
            None => vec![Command::Constants, Command::Solve],
        };
        if commands.is_empty() {
            return Err(at("run.commands", "no commands".into()));
        }
        let sweep = match (entries.get("sweep.lambdas"), entries.get("sweep.factors")) {
            (Some(_), Some(e)) => {
                return Err(Error::Config {
                    line: e.line,
                    message: "set only one of `sweep.lambdas` and `sweep.factors`".into(),
                })
            }
            (Some(e), None) => SweepSpec::Lambdas(parse_list("sweep.lambdas", e)?),
            (None, Some(e)) => SweepSpec::Factors(parse_list("sweep.factors", e)?),
            (None, None) => SweepSpec::Factors(DEFAULT_SWEEP_FACTORS.to_vec()),
        };
        let sweep_values = match &sweep {
            SweepSpec::Lambdas(v) | SweepSpec::Factors(v) => v,
        };
        if sweep_values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            let key = if matches!(sweep, SweepSpec::Lambdas(_)) {
                "sweep.lambdas"
            } else {
                "sweep.factors"
            };
            return Err(at(key, "sweep values must be positive".into()));
        }

        let sobolev_epsilon: f64 = get(entries, "constants.sobolev_epsilon", 0.25)?;
        let k: f64 = get(entries, "constants.k", 1.0)?;
        for (key, v) in [("constants.sobolev_epsilon", sobolev_epsilon), ("constants.k", k)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(at(key, format!("`{key}` must be positive")));
            }
        }
        let proxy_probes = get(entries, "proxy.probes", 16)?;
        let embedding_trials = get(entries, "constants.embedding_trials", 4)?;
        if embedding_trials == 0 {
            return Err(at("constants.embedding_trials", "need at least one trial".into()));
        }

        Ok(Self {
            n,
            mu,
            q,
            lambda,
            grid,
            solver,
            commands,
            output_dir: PathBuf::from(get::<String>(entries, "output.dir", "out".into())?),
            proxy_probes,
            proxy_seed: get(entries, "proxy.seed", 11)?,
            sobolev_epsilon,
            embedding_trials,
            k,
            sweep,
            verify_tests: get(entries, "verify.tests", 16)?,
            echo: entries.iter().map(|(k, e)| (k.clone(), e.value.clone())).collect(),
        })
    }

    /// Applies `--grid-override m=NN`.
    pub fn override_grid(&mut self, spec: &str) -> Result<()> {
        let bad = || Error::InvalidParameters(format!("grid override `{spec}` is not of the form m=NN"));
        let (key, value) = spec.split_once('=').ok_or_else(bad)?;
        if key.trim() != "m" {
            return Err(bad());
        }
        let m: usize = value.trim().parse().map_err(|_| bad())?;
        let grid = GridSpec::cube(self.grid.shape, self.n, self.grid.extent[0], m);
        crate::grid::DomainGrid::new(&grid)?;
        self.grid = grid;
        self.echo.insert("grid.m".into(), m.to_string());
        Ok(())
    }
}
