//! Fibering-map algebra along rays `t ↦ I_λ(tu)`: derivatives, the reduced
//! function `m_u(t) = t^{1+q}‖u‖² − t^{p−1+q}B(u)`, its closed-form maximum,
//! the two Nehari roots, classification, and the λ thresholds.
//!
//! Everything past [`FieldParts`] is scalar arithmetic.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::energy::FieldParts;
use crate::error::{Error, Result};
use crate::grid::{
    h1_seminorm_sq, lp_integral, poisson_solve, pow_abs, principal_mode, random_bump_field,
    DomainGrid, Field,
};
use crate::par;
use crate::riesz::{Exponents, KernelTable};

/// Relative membership/dead-band tolerance for classification at `t = 1`.
pub const CLASSIFY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    #[serde(rename = "nplus")]
    Nplus,
    #[serde(rename = "nminus")]
    Nminus,
    #[serde(rename = "nzero")]
    Nzero,
    #[serde(rename = "off_manifold")]
    OffManifold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    #[serde(rename = "nplus")]
    Nplus,
    #[serde(rename = "nminus")]
    Nminus,
}

impl Branch {
    pub fn classification(self) -> Classification {
        match self {
            Branch::Nplus => Classification::Nplus,
            Branch::Nminus => Classification::Nminus,
        }
    }
}

/// The fiber map of one field at one λ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberMap {
    pub norm_sq: f64,
    pub a: f64,
    pub b: f64,
    pub lambda: f64,
    pub q: f64,
    pub p: f64,
}

impl FiberMap {
    pub fn new(parts: &FieldParts, lambda: f64, exps: &Exponents) -> Self {
        Self {
            norm_sq: parts.norm_sq,
            a: parts.a,
            b: parts.b,
            lambda,
            q: exps.q,
            p: exps.p_growth,
        }
    }

    /// Same data from raw scalars.
    pub fn from_scalars(norm_sq: f64, a: f64, b: f64, lambda: f64, q: f64, p: f64) -> Self {
        Self { norm_sq, a, b, lambda, q, p }
    }

    pub fn value(&self, t: f64) -> f64 {
        let (q, p) = (self.q, self.p);
        0.5 * t * t * self.norm_sq - self.lambda / (1.0 - q) * t.powf(1.0 - q) * self.a
            - t.powf(p) * self.b / p
    }

    pub fn d1(&self, t: f64) -> f64 {
        let (q, p) = (self.q, self.p);
        t * self.norm_sq - self.lambda * t.powf(-q) * self.a - t.powf(p - 1.0) * self.b
    }

    pub fn d2(&self, t: f64) -> f64 {
        let (q, p) = (self.q, self.p);
        self.norm_sq + q * self.lambda * t.powf(-q - 1.0) * self.a
            - (p - 1.0) * t.powf(p - 2.0) * self.b
    }

    pub fn m(&self, t: f64) -> f64 {
        let (q, p) = (self.q, self.p);
        t.powf(1.0 + q) * self.norm_sq - t.powf(p - 1.0 + q) * self.b
    }

    pub fn t_max(&self) -> f64 {
        let (q, p) = (self.q, self.p);
        ((1.0 + q) * self.norm_sq / ((p - 1.0 + q) * self.b)).powf(1.0 / (p - 2.0))
    }

    pub fn m_max(&self) -> f64 {
        let (q, p) = (self.q, self.p);
        let e = p - 2.0;
        (e / (p - 1.0 + q))
            * ((1.0 + q) / (p - 1.0 + q)).powf((1.0 + q) / e)
            * self.norm_sq.powf((p - 1.0 + q) / e)
            / self.b.powf((1.0 + q) / e)
    }

    pub fn lambda_crit(&self) -> f64 {
        self.m_max() / self.a
    }

    /// The two solutions `t1 < t_max < t2` of `m(t) = λA`, when `λ < λ_crit`.
    pub fn roots(&self) -> Option<(f64, f64)> {
        let level = self.lambda * self.a;
        let tm = self.t_max();
        if !(self.m(tm) > level) {
            return None;
        }
        let g = |t: f64| self.m(t) - level;
        let mut lo = tm;
        while g(lo) >= 0.0 {
            lo *= 0.5;
        }
        let mut hi = tm;
        while g(hi) >= 0.0 {
            hi *= 2.0;
        }
        Some((bisect(g, lo, tm), bisect(g, tm, hi)))
    }

    /// Position of `t = 1` relative to the Nehari manifold.
    pub fn classify(&self) -> Classification {
        let scale = self.norm_sq;
        if self.d1(1.0).abs() > CLASSIFY_TOL * scale {
            return Classification::OffManifold;
        }
        let d2 = self.d2(1.0);
        if d2 > CLASSIFY_TOL * scale {
            Classification::Nplus
        } else if d2 < -CLASSIFY_TOL * scale {
            Classification::Nminus
        } else {
            Classification::Nzero
        }
    }
}

/// Root of a function with one sign change on `[lo, hi]`, bisected until the
/// bracket collapses to adjacent floats.
fn bisect<F: Fn(f64) -> f64>(g: F, mut lo: f64, mut hi: f64) -> f64 {
    let glo = g(lo);
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if (g(mid) < 0.0) == (glo < 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (glo, ghi) = (g(lo).abs(), g(hi).abs());
    if glo <= ghi {
        lo
    } else {
        hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberDiagnostics {
    pub norm_sq: f64,
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "B")]
    pub b: f64,
    pub lambda: f64,
    pub t_max: f64,
    pub m_max: f64,
    pub lambda_crit: f64,
    pub roots: Option<(f64, f64)>,
    pub classification: Classification,
    pub d1_at_one: f64,
    pub d2_at_one: f64,
}

impl FiberDiagnostics {
    pub fn from_parts(parts: &FieldParts, lambda: f64, exps: &Exponents) -> Result<Self> {
        if !(parts.norm_sq > 0.0 && parts.a > 0.0 && parts.b > 0.0) {
            return Err(Error::ZeroField);
        }
        let map = FiberMap::new(parts, lambda, exps);
        Ok(Self {
            norm_sq: parts.norm_sq,
            a: parts.a,
            b: parts.b,
            lambda,
            t_max: map.t_max(),
            m_max: map.m_max(),
            lambda_crit: map.lambda_crit(),
            roots: map.roots(),
            classification: map.classify(),
            d1_at_one: map.d1(1.0),
            d2_at_one: map.d2(1.0),
        })
    }
}

fn parts_checked(u: &Field, exps: &Exponents, kt: &KernelTable) -> Result<FieldParts> {
    if u.is_zero() {
        return Err(Error::ZeroField);
    }
    FieldParts::of(u, exps, kt)
}

fn check_t(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveT(t))
    }
}

pub fn fiber_value(u: &Field, t: f64, lambda: f64, exps: &Exponents, kt: &KernelTable) -> Result<f64> {
    check_t(t)?;
    Ok(FiberMap::new(&FieldParts::of(u, exps, kt)?, lambda, exps).value(t))
}

pub fn fiber_d1(u: &Field, t: f64, lambda: f64, exps: &Exponents, kt: &KernelTable) -> Result<f64> {
    check_t(t)?;
    Ok(FiberMap::new(&FieldParts::of(u, exps, kt)?, lambda, exps).d1(t))
}

pub fn fiber_d2(u: &Field, t: f64, lambda: f64, exps: &Exponents, kt: &KernelTable) -> Result<f64> {
    check_t(t)?;
    Ok(FiberMap::new(&FieldParts::of(u, exps, kt)?, lambda, exps).d2(t))
}

pub fn fiber_diagnostics(
    u: &Field,
    lambda: f64,
    exps: &Exponents,
    kt: &KernelTable,
) -> Result<FiberDiagnostics> {
    FiberDiagnostics::from_parts(&parts_checked(u, exps, kt)?, lambda, exps)
}

/// Nehari scaling factor for `branch` from cached parts.
pub fn projection_factor(parts: &FieldParts, lambda: f64, exps: &Exponents, branch: Branch) -> Result<f64> {
    if !(parts.norm_sq > 0.0 && parts.a > 0.0 && parts.b > 0.0) {
        return Err(Error::ZeroField);
    }
    let map = FiberMap::new(parts, lambda, exps);
    match map.roots() {
        Some((t1, t2)) => Ok(match branch {
            Branch::Nplus => t1,
            Branch::Nminus => t2,
        }),
        None => Err(Error::NoProjection {
            lambda,
            lambda_crit: map.lambda_crit(),
        }),
    }
}

/// `t1·u ∈ N⁺`.
pub fn nehari_project_plus(u: &Field, lambda: f64, exps: &Exponents, kt: &KernelTable) -> Result<Field> {
    let t = projection_factor(&parts_checked(u, exps, kt)?, lambda, exps, Branch::Nplus)?;
    Ok(u.scaled(t))
}

/// `t2·u ∈ N⁻`.
pub fn nehari_project_minus(u: &Field, lambda: f64, exps: &Exponents, kt: &KernelTable) -> Result<Field> {
    let t = projection_factor(&parts_checked(u, exps, kt)?, lambda, exps, Branch::Nminus)?;
    Ok(u.scaled(t))
}

/// Upper bound on `‖u‖` over N⁺ and the claimed lower bound over N⁻:
/// `[λ(p−1+q)C_{1−q}/(p−2)]^{1/(1+q)}`.
pub fn nehari_norm_bound(lambda: f64, c_1mq: f64, exps: &Exponents) -> f64 {
    let (q, p) = (exps.q, exps.p_growth);
    (lambda * (p - 1.0 + q) * c_1mq / (p - 2.0)).powf(1.0 / (1.0 + q))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConstant {
    pub alpha: f64,
    /// Best `∫|u|^α` found over `‖u‖ = 1` (a lower bound of the supremum).
    pub value: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub c_alpha: Vec<EmbeddingConstant>,
    /// Sharp HLS constant, when estimated.
    pub c_nmu: Option<f64>,
    /// The unspecified multiplier in the λ_* display (heuristic).
    pub k: f64,
}

impl Default for Constants {
    fn default() -> Self {
        Self {
            c_alpha: Vec::new(),
            c_nmu: None,
            k: 1.0,
        }
    }
}

impl Constants {
    pub fn get(&self, alpha: f64) -> Option<f64> {
        self.c_alpha
            .iter()
            .find(|c| (c.alpha - alpha).abs() <= 1e-12 * alpha.abs().max(1.0))
            .map(|c| c.value)
    }

    pub fn insert(&mut self, c: EmbeddingConstant) {
        self.c_alpha.retain(|o| (o.alpha - c.alpha).abs() > 1e-12 * c.alpha.abs().max(1.0));
        self.c_alpha.push(c);
        self.c_alpha.sort_by(|a, b| a.alpha.total_cmp(&b.alpha));
    }
}

/// `λ_* = ((p−2)/(p−1+q))·((1+q)/(p−1+q))^{(1+q)/(p−2)}·(C(n,μ)·C_{2*}^{p/2*})^{−(1+q)/(p−2)}·K^{−1}·C_{1−q}^{−1}`.
pub fn lambda_star_closed_form(consts: &Constants, exps: &Exponents) -> Result<f64> {
    let (q, p) = (exps.q, exps.p_growth);
    let c1 = consts
        .get(1.0 - q)
        .ok_or_else(|| Error::MissingConstant(format!("C_alpha for alpha = {}", 1.0 - q)))?;
    let c2 = consts
        .get(exps.two_star)
        .ok_or_else(|| Error::MissingConstant(format!("C_alpha for alpha = {}", exps.two_star)))?;
    let cn = consts
        .c_nmu
        .ok_or_else(|| Error::MissingConstant("sharp HLS constant".into()))?;
    if !(c1 > 0.0 && c2 > 0.0 && cn > 0.0 && consts.k > 0.0) {
        return Err(Error::InvalidParameters("constants must be positive".into()));
    }
    let e = p - 2.0;
    Ok((e / (p - 1.0 + q))
        * ((1.0 + q) / (p - 1.0 + q)).powf((1.0 + q) / e)
        * (cn * c2.powf(p / exps.two_star)).powf(-(1.0 + q) / e)
        / consts.k
        / c1)
}

/// Ascent iterations per trial in [`estimate_embedding_constant`].
const ASCENT_ITERS: usize = 400;

/// Lower bound of `C_α = sup{∫|u|^α : ‖u‖ = 1}` by H¹₀-gradient ascent on the
/// unit sphere. Trial 0 starts from the principal mode, trial `i > 0` from a
/// random bump field drawn from a stream keyed by `(seed, i)`, so the result
/// is monotone in `trials`.
pub fn estimate_embedding_constant(grid: &Arc<DomainGrid>, alpha: f64, trials: usize, seed: u64) -> Result<EmbeddingConstant> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidParameters(format!("alpha = {alpha} must be positive")));
    }
    if trials == 0 {
        return Err(Error::InvalidParameters("need at least one trial".into()));
    }
    let starts: Vec<usize> = (0..trials).collect();
    let values = par::map(starts, |i| {
        let start = if i == 0 {
            principal_mode(grid).1
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed, i as u64));
            random_bump_field(grid, &mut rng, false)
        };
        embedding_ascent(&start, alpha, ASCENT_ITERS).0
    });
    let value = values.into_iter().fold(0.0, f64::max);
    Ok(EmbeddingConstant { alpha, value, trials })
}

/// Decorrelated per-trial seed.
pub fn trial_seed(seed: u64, i: u64) -> u64 {
    let mut z = seed ^ i.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Projected ascent of `F(u) = ∫|u|^α` on `‖u‖ = 1` among non-negative
/// fields. Returns the best value and its field.
pub fn embedding_ascent(start: &Field, alpha: f64, iters: usize) -> (f64, Field) {
    let normalize = |u: &Field| {
        let n = h1_seminorm_sq(u).sqrt();
        u.scaled(1.0 / n)
    };
    let mut u = normalize(&start.positive_part());
    let mut f = lp_integral(&u, alpha);
    let mut tau = 1.0 / (alpha * f);
    let mut stalls = 0;
    for _ in 0..iters {
        let floor = 1e-8 * u.max_abs();
        let g = u.map(|v| alpha * pow_abs(v.max(floor), alpha - 1.0));
        let d = poisson_solve(&g, 1e-10);
        // Tangential part: ⟨d, u⟩_{H¹₀} = Σ g·u·hⁿ = α·F(u).
        let Ok(dt) = d.add_scaled(-alpha * f, &u) else { break };
        let mut accepted = false;
        tau *= 2.0;
        for _ in 0..30 {
            let Ok(trial) = u.add_scaled(tau, &dt) else { break };
            let trial = trial.positive_part();
            if trial.is_zero() {
                tau *= 0.5;
                continue;
            }
            let trial = normalize(&trial);
            let ft = lp_integral(&trial, alpha);
            if ft > f {
                let rel = (ft - f) / f;
                u = trial;
                f = ft;
                accepted = true;
                stalls = if rel < 1e-10 { stalls + 1 } else { 0 };
                break;
            }
            tau *= 0.5;
        }
        if !accepted || stalls >= 3 {
            break;
        }
    }
    (f, u)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaProxy {
    /// `min λ_crit(u)` over the probes.
    pub value: f64,
    pub probes: usize,
}

/// Empirical stand-in for the threshold Λ: the smallest `λ_crit(u)` over the
/// principal mode and `probes` random positive bump fields.
pub fn lambda_proxy(grid: &Arc<DomainGrid>, exps: &Exponents, kt: &KernelTable, probes: usize, seed: u64) -> Result<LambdaProxy> {
    let mut fields = vec![principal_mode(grid).1];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..probes {
        fields.push(random_bump_field(grid, &mut rng, false));
    }
    let mut value = f64::INFINITY;
    for u in &fields {
        let parts = FieldParts::of(u, exps, kt)?;
        // λ does not enter λ_crit.
        value = value.min(FiberMap::new(&parts, 1.0, exps).lambda_crit());
    }
    Ok(LambdaProxy { value, probes: fields.len() })
}
