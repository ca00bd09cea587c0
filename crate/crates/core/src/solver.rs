//! The two positive solutions: `u_λ` minimises `I` over N⁺, `v_λ` over N⁻.
//!
//! Both use the same projected descent. The step direction is the H¹₀
//! gradient `d = (−Δ_h)⁻¹G`, so a unit step is the fixed-point map
//! `u ← (−Δ_h)⁻¹(λu^{−q} + Φ[u]u^{2*_μ−1})`. Each trial is clamped to its
//! positive part, rescaled onto the branch, and accepted only if the energy
//! strictly drops.

use std::str::FromStr;
use std::sync::Arc;

use log::{debug, info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bubble::{mountain_pass_seed, talenti_bubble, BubbleSpec, CriticalConstants, SeedAttempt};
use crate::energy::{gradient_field_with, weak_residual_with, EnergyBreakdown, FieldParts};
use crate::error::{Error, Result};
use crate::fiber::{projection_factor, trial_seed, Branch, FiberDiagnostics};
use crate::grid::{h1_seminorm_sq, poisson_solve, pow_abs, principal_mode, random_bump_field, DomainGrid, Field};
use crate::regularity::{boundary_envelope, linf_bound, nonlocal_potential_bound, Envelope};
use crate::riesz::{riesz_potential, Exponents, KernelTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedKind {
    RandomBump,
    Eigenmode,
    Bubble,
}

impl FromStr for SeedKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "random_bump" => Ok(SeedKind::RandomBump),
            "eigenmode" => Ok(SeedKind::Eigenmode),
            "bubble" => Ok(SeedKind::Bubble),
            other => Err(Error::InvalidParameters(format!("unknown seed kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub lambda: f64,
    pub max_iters: usize,
    /// Largest step along the H¹₀ gradient; 1 is the fixed-point step.
    pub step0: f64,
    pub energy_tol: f64,
    pub residual_tol: f64,
    /// Positivity floor relative to `max u` in the singular term.
    pub floor: f64,
    pub seed_kind: SeedKind,
    pub rng_seed: u64,
    /// Random bump test functions used by [`verify_solution`].
    pub verify_tests: usize,
    /// Bubble scale for the N⁻ seed; 4h when unset.
    pub epsilon: Option<f64>,
    /// Refuse λ at or above this (the empirical threshold proxy), if set.
    pub lambda_limit: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            max_iters: 2000,
            step0: 1.0,
            energy_tol: 1e-10,
            residual_tol: 1e-4,
            floor: 1e-8,
            seed_kind: SeedKind::Eigenmode,
            rng_seed: 1,
            verify_tests: 8,
            epsilon: None,
            lambda_limit: None,
        }
    }
}

/// Consecutive small decreases needed to stop.
pub const STALL_ITERS: usize = 5;
const BACKTRACKS: usize = 30;
const POISSON_TOL: f64 = 1e-10;

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda", self.lambda),
            ("step0", self.step0),
            ("energy_tol", self.energy_tol),
            ("residual_tol", self.residual_tol),
            ("floor", self.floor),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameters(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameters("max_iters must be at least 1".into()));
        }
        if let Some(limit) = self.lambda_limit {
            if self.lambda >= limit {
                return Err(Error::InvalidParameters(format!(
                    "lambda = {} is not below the threshold proxy {limit}",
                    self.lambda
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResidual {
    /// `eigenmode` or `bump<i>`.
    pub test: String,
    /// `|⟨I'(u), w⟩| / ‖w‖`.
    pub residual: f64,
    /// `Σ u^{−q}|w|hⁿ`.
    pub singular_l1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub residual_max: f64,
    pub eigenmode: TestResidual,
    pub per_test: Vec<TestResidual>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NminusLevel {
    /// `I(u_λ) + level_gap`.
    pub bound: f64,
    pub holds: bool,
    /// Which seed the descent started from.
    pub seed: String,
    pub seed_epsilon: Option<f64>,
    pub seed_t_prime: Option<f64>,
    pub seed_level_ok: bool,
    pub attempts: Vec<SeedAttempt>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionReport {
    pub branch: Branch,
    #[serde(skip)]
    pub field: Option<Field>,
    pub energy: EnergyBreakdown,
    pub fiber: FiberDiagnostics,
    pub residual_max: f64,
    pub verification: Verification,
    pub min_value: f64,
    pub linf: f64,
    pub envelope: Option<Envelope>,
    pub potential_max: f64,
    pub iters: usize,
    pub converged: bool,
    /// Energy after every accepted step, starting from the projected seed.
    pub history: Vec<f64>,
    pub level: Option<NminusLevel>,
    pub notes: Vec<String>,
}

impl SolutionReport {
    pub fn field(&self) -> &Field {
        self.field.as_ref().expect("report carries its field")
    }
}

/// `Σ u^{−q}|w|hⁿ` over nodes where `w ≠ 0`.
fn singular_l1(u: &Field, w: &Field, q: f64) -> f64 {
    let g = u.grid();
    let (uv, wv) = (u.values(), w.values());
    g.masked()
        .iter()
        .filter(|&&p| wv[p] != 0.0)
        .map(|&p| pow_abs(uv[p], -q) * wv[p].abs())
        .sum::<f64>()
        * g.cell_volume()
}

/// Weak residuals of `u` against the principal eigenmode and `n_tests` random
/// bumps, normalised by `‖w‖`. Tests are evaluated without a floor, so `u` must
/// be positive wherever a test is supported.
pub fn verify_solution(
    u: &Field,
    lambda: f64,
    exps: &Exponents,
    kt: &KernelTable,
    n_tests: usize,
    rng_seed: u64,
) -> Result<Verification> {
    let phi = riesz_potential(u, exps, kt)?;
    let check = |name: String, w: &Field| -> Result<TestResidual> {
        let r = weak_residual_with(u, &phi, w, lambda, exps, 0.0)?;
        Ok(TestResidual {
            test: name,
            residual: r.abs() / h1_seminorm_sq(w).sqrt(),
            singular_l1: singular_l1(u, w, exps.q),
        })
    };
    let (_, mode) = principal_mode(u.grid());
    let eigenmode = check("eigenmode".into(), &mode)?;
    let mut per_test = Vec::with_capacity(n_tests);
    for i in 0..n_tests {
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(rng_seed, i as u64));
        let w = random_bump_field(u.grid(), &mut rng, true);
        if w.is_zero() {
            continue;
        }
        per_test.push(check(format!("bump{i}"), &w)?);
    }
    let residual_max = per_test.iter().map(|t| t.residual).fold(eigenmode.residual, f64::max);
    Ok(Verification {
        residual_max,
        eigenmode,
        per_test,
    })
}

/// `u·(1 + amplitude·b)` for a random positive bump `b` with `max b = 1`; the
/// negative control for [`verify_solution`].
pub fn perturbed(u: &Field, amplitude: f64, rng_seed: u64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let b = random_bump_field(u.grid(), &mut rng, false);
    let scale = b.max_abs();
    let values = u
        .values()
        .iter()
        .zip(b.values())
        .map(|(v, w)| v * (1.0 + amplitude * w / scale))
        .collect();
    Field::masked_from(u.grid(), values)
}

/// Rescales `u` onto `branch`, returning the field and its parts.
fn project(u: &Field, lambda: f64, exps: &Exponents, kt: &KernelTable, branch: Branch) -> Result<(Field, FieldParts)> {
    if u.is_zero() {
        return Err(Error::ZeroField);
    }
    let parts = FieldParts::of(u, exps, kt)?;
    let t = projection_factor(&parts, lambda, exps, branch)?;
    Ok((u.scaled(t), parts.scaled(t, exps)))
}

struct Descent {
    field: Field,
    energy: f64,
    iters: usize,
    history: Vec<f64>,
    stalled: bool,
}

fn descend(start: Field, cfg: &SolverConfig, exps: &Exponents, kt: &KernelTable, branch: Branch) -> Result<Descent> {
    let (mut u, parts) = project(&start.positive_part(), cfg.lambda, exps, kt, branch)?;
    let mut e = EnergyBreakdown::from_parts(&parts, cfg.lambda, exps).total;
    let mut history = vec![e];
    let mut tau = cfg.step0;
    let mut small = 0;
    let mut iters = 0;
    let mut stalled = false;
    while iters < cfg.max_iters {
        iters += 1;
        let phi = riesz_potential(&u, exps, kt)?;
        let g = gradient_field_with(&u, &phi, cfg.lambda, exps, cfg.floor * u.max_abs());
        let d = poisson_solve(&g, POISSON_TOL);
        let mut accepted = None;
        for _ in 0..BACKTRACKS {
            let trial = u.add_scaled(-tau, &d)?.positive_part();
            // A failed projection counts as a rejected step.
            if let Ok((v, vp)) = project(&trial, cfg.lambda, exps, kt, branch) {
                let ev = EnergyBreakdown::from_parts(&vp, cfg.lambda, exps).total;
                if ev < e {
                    accepted = Some((v, ev));
                    break;
                }
            }
            tau *= 0.5;
        }
        let Some((v, ev)) = accepted else {
            debug!("{branch:?}: no decrease after {BACKTRACKS} halvings at iteration {iters}");
            stalled = true;
            break;
        };
        let rel = (e - ev) / e.abs().max(f64::MIN_POSITIVE);
        u = v;
        e = ev;
        history.push(e);
        tau = (2.0 * tau).min(cfg.step0);
        small = if rel < cfg.energy_tol { small + 1 } else { 0 };
        if small >= STALL_ITERS {
            break;
        }
    }
    Ok(Descent {
        field: u,
        energy: e,
        iters,
        history,
        stalled,
    })
}

fn assemble(
    branch: Branch,
    run: Descent,
    cfg: &SolverConfig,
    exps: &Exponents,
    kt: &KernelTable,
    mut notes: Vec<String>,
) -> Result<SolutionReport> {
    let u = run.field;
    let min_value = u.min_masked();
    if !(min_value > 0.0) {
        return Err(Error::SolverAborted(format!(
            "{branch:?} iterate is not positive on the grid (min {min_value:e})"
        )));
    }
    let parts = FieldParts::of(&u, exps, kt)?;
    let energy = EnergyBreakdown::from_parts(&parts, cfg.lambda, exps);
    let fiber = FiberDiagnostics::from_parts(&parts, cfg.lambda, exps)?;
    let verification = verify_solution(&u, cfg.lambda, exps, kt, cfg.verify_tests, cfg.rng_seed)?;
    let envelope = boundary_envelope(&u).ok();
    let mut converged = verification.residual_max <= cfg.residual_tol && fiber.classification == branch.classification();
    if run.iters >= cfg.max_iters && !run.stalled {
        notes.push(format!("iteration budget {} exhausted", cfg.max_iters));
    }
    if branch == Branch::Nplus && energy.total >= 0.0 {
        notes.push("N⁺ energy is not negative".into());
        converged = false;
    }
    debug_assert!((energy.total - run.energy).abs() <= 1e-9 * run.energy.abs().max(1.0));
    Ok(SolutionReport {
        branch,
        energy,
        fiber,
        residual_max: verification.residual_max,
        verification,
        min_value,
        linf: linf_bound(&u),
        envelope,
        potential_max: nonlocal_potential_bound(&u, exps, kt)?,
        iters: run.iters,
        converged,
        history: run.history,
        level: None,
        notes,
        field: Some(u),
    })
}

/// Starting field for the N⁺ descent (and the sweep probe).
pub fn seed_field(cfg: &SolverConfig, grid: &Arc<DomainGrid>, exps: &Exponents) -> Result<Field> {
    Ok(match cfg.seed_kind {
        SeedKind::Eigenmode => principal_mode(grid).1,
        SeedKind::RandomBump => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
            random_bump_field(grid, &mut rng, false)
        }
        SeedKind::Bubble => {
            let eps = cfg.epsilon.unwrap_or_else(|| BubbleSpec::default_epsilon(grid));
            talenti_bubble(grid, &BubbleSpec::centered(grid, eps), exps)?
        }
    })
}

/// `u_λ`: projected descent of `I` on N⁺ from `cfg.seed_kind`.
pub fn minimize_nplus(cfg: &SolverConfig, grid: &Arc<DomainGrid>, exps: &Exponents, kt: &KernelTable) -> Result<SolutionReport> {
    cfg.validate()?;
    let seed = seed_field(cfg, grid, exps)?;
    let run = descend(seed, cfg, exps, kt, Branch::Nplus).map_err(|e| match e {
        Error::NoProjection { .. } => Error::SolverAborted(format!("N⁺ seed has no projection: {e}")),
        other => other,
    })?;
    info!("N⁺: energy {:.10e} after {} iterations", run.energy, run.iters);
    assemble(Branch::Nplus, run, cfg, exps, kt, Vec::new())
}

/// Log grid of `t` for the fallback N⁻ seeds `u_plus + tΦ_ε`.
pub const FALLBACK_T: [f64; 7] = [0.01, 0.1, 1.0, 10.0, 100.0, 1e3, 1e4];

/// `v_λ`: projected descent on N⁻ from the mountain-pass seed, or from the
/// best of the fallback family when the seed fails.
pub fn minimize_nminus(
    cfg: &SolverConfig,
    grid: &Arc<DomainGrid>,
    exps: &Exponents,
    kt: &KernelTable,
    u_plus: &SolutionReport,
    consts: &CriticalConstants,
) -> Result<SolutionReport> {
    cfg.validate()?;
    if u_plus.branch != Branch::Nplus {
        return Err(Error::InvalidParameters("u_plus must come from the N⁺ branch".into()));
    }
    if !u_plus.converged {
        warn!("N⁻ run started from a non-converged N⁺ solution");
    }
    let up = u_plus.field();
    let bound = u_plus.energy.total + consts.level_gap;
    let mut notes = Vec::new();
    let (seed, mut level) = match mountain_pass_seed(up, cfg.lambda, exps, kt, consts, cfg.epsilon) {
        Ok(mp) => {
            let level = NminusLevel {
                bound,
                holds: false,
                seed: "mountain_pass".into(),
                seed_epsilon: Some(mp.epsilon),
                seed_t_prime: Some(mp.t_prime),
                seed_level_ok: mp.level_ok,
                attempts: mp.attempts,
            };
            if !mp.level_ok {
                notes.push("no bubble scale kept sup I(u + tΦ) below the level bound".into());
            }
            (mp.field, level)
        }
        Err(Error::SeedFailure(msg)) => {
            warn!("mountain-pass seed failed ({msg}); using the fallback family");
            notes.push(format!("mountain-pass seed failed: {msg}"));
            let eps = cfg.epsilon.unwrap_or_else(|| BubbleSpec::default_epsilon(grid));
            let phi = talenti_bubble(grid, &BubbleSpec::centered(grid, eps), exps)?;
            let mut best: Option<(f64, Field)> = None;
            for t in FALLBACK_T {
                let Ok((v, vp)) = project(&up.add_scaled(t, &phi)?, cfg.lambda, exps, kt, Branch::Nminus) else {
                    continue;
                };
                let ev = EnergyBreakdown::from_parts(&vp, cfg.lambda, exps).total;
                if best.as_ref().is_none_or(|(b, _)| ev < *b) {
                    best = Some((ev, v));
                }
            }
            let Some((_, v)) = best else {
                return Err(Error::SeedFailure("no fallback seed projects onto N⁻".into()));
            };
            let level = NminusLevel {
                bound,
                holds: false,
                seed: "fallback".into(),
                seed_epsilon: Some(eps),
                seed_t_prime: None,
                seed_level_ok: false,
                attempts: Vec::new(),
            };
            (v, level)
        }
        Err(e) => return Err(e),
    };
    let run = descend(seed, cfg, exps, kt, Branch::Nminus)?;
    info!("N⁻: energy {:.10e} after {} iterations (bound {bound:.6e})", run.energy, run.iters);
    level.holds = run.energy < bound;
    let mut report = assemble(Branch::Nminus, run, cfg, exps, kt, notes)?;
    if !level.holds {
        report.notes.push("energy is not below I(u_λ) + level_gap".into());
        report.converged = false;
    }
    report.level = Some(level);
    Ok(report)
}
