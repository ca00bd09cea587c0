//! Talenti bubbles and their cutoffs, the Sobolev and Hardy–Littlewood–Sobolev
//! best constants, and the mountain-pass seed for the N⁻ branch.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::energy::{energy, singular_integral, EnergyBreakdown, FieldParts};
use crate::error::{Error, Result};
use crate::fiber::{trial_seed, FiberMap};
use crate::grid::{
    grad_inner, h1_seminorm_sq, poisson_solve, pow_abs, DomainGrid, Field, GridSpec, ShapeTag,
};
use crate::par;
use crate::riesz::{choquard_energy_from, riesz_potential, Exponents, KernelTable};

pub mod radial;

use radial::RadialGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BubbleSpec {
    pub epsilon: f64,
    pub center: Vec<f64>,
    /// `η = 1` inside half this radius and vanishes beyond it.
    pub cutoff_radius: f64,
}

impl BubbleSpec {
    /// Bubble at the domain centre with the largest admissible cutoff.
    pub fn centered(grid: &DomainGrid, epsilon: f64) -> Self {
        let center = grid.center();
        let cutoff_radius = grid.analytic_distance(&center);
        Self {
            epsilon,
            center,
            cutoff_radius,
        }
    }

    /// Default concentration scale: four cells.
    pub fn default_epsilon(grid: &DomainGrid) -> f64 {
        4.0 * grid.h_max()
    }
}

/// `U_ε(r) = (n(n−2))^{(n−2)/4}·(ε/(ε² + r²))^{(n−2)/2}`.
pub fn talenti_value(n: usize, epsilon: f64, r: f64) -> f64 {
    let nf = n as f64;
    (nf * (nf - 2.0)).powf((nf - 2.0) / 4.0) * (epsilon / (epsilon * epsilon + r * r)).powf((nf - 2.0) / 2.0)
}

/// `|∇U_ε|²` at radius `r`.
pub fn talenti_grad_sq(n: usize, epsilon: f64, r: f64) -> f64 {
    let nf = n as f64;
    let c2 = (nf * (nf - 2.0)).powf((nf - 2.0) / 2.0);
    c2 * (nf - 2.0).powi(2) * epsilon.powf(nf - 2.0) * r * r
        / (epsilon * epsilon + r * r).powf(nf)
}

/// Quintic ramp: 1 for `r ≤ R/2`, 0 for `r ≥ R`, C² in between.
pub fn cutoff(r: f64, radius: f64) -> f64 {
    let s = (r - 0.5 * radius) / (0.5 * radius);
    if s <= 0.0 {
        1.0
    } else if s >= 1.0 {
        0.0
    } else {
        1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
    }
}

/// `Φ_ε = η·U_ε` sampled on the interior nodes.
pub fn talenti_bubble(grid: &Arc<DomainGrid>, spec: &BubbleSpec, exps: &Exponents) -> Result<Field> {
    if spec.center.len() != grid.n {
        return Err(Error::InvalidParameters(format!(
            "bubble centre has {} coordinates on an {}-dimensional grid",
            spec.center.len(),
            grid.n
        )));
    }
    if !(spec.epsilon > 0.0 && spec.cutoff_radius > 0.0) {
        return Err(Error::InvalidParameters("epsilon and cutoff radius must be positive".into()));
    }
    let dist = grid.analytic_distance(&spec.center);
    if dist <= 0.0 {
        return Err(Error::InvalidParameters("bubble centre lies outside the domain".into()));
    }
    if spec.cutoff_radius > dist * (1.0 + 1e-12) {
        return Err(Error::InvalidParameters(format!(
            "cutoff radius {} exceeds the distance {dist} from the centre to the boundary",
            spec.cutoff_radius
        )));
    }
    let n = exps.n;
    Ok(Field::from_fn(grid, |x| {
        let r = x
            .iter()
            .zip(&spec.center)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        cutoff(r, spec.cutoff_radius) * talenti_value(n, spec.epsilon, r)
    }))
}

/// `‖u‖² / B(u)^{1/2*_μ}`, the quotient whose infimum is `S_{H,L}`.
pub fn hl_quotient(u: &Field, exps: &Exponents, kt: &KernelTable) -> Result<f64> {
    if u.is_zero() {
        return Err(Error::ZeroField);
    }
    let phi = riesz_potential(u, exps, kt)?;
    Ok(h1_seminorm_sq(u) / choquard_energy_from(u, &phi, exps).powf(1.0 / exps.two_star_mu))
}

/// H¹₀-gradient descent of [`hl_quotient`] on the unit sphere among
/// non-negative fields. Returns the best quotient and its field.
pub fn minimize_hl_quotient(start: &Field, exps: &Exponents, kt: &KernelTable, iters: usize) -> Result<(f64, Field)> {
    if start.positive_part().is_zero() {
        return Err(Error::ZeroField);
    }
    let s = exps.two_star_mu;
    let normalize = |u: &Field| u.scaled(1.0 / h1_seminorm_sq(u).sqrt());
    let eval = |u: &Field| -> Result<(f64, Field)> {
        let phi = riesz_potential(u, exps, kt)?;
        let b = choquard_energy_from(u, &phi, exps);
        Ok((b, phi))
    };
    let mut u = normalize(&start.positive_part());
    let (mut b, mut phi) = eval(&u)?;
    let mut q = b.powf(-1.0 / s);
    let mut tau = 1.0;
    let mut stalls = 0;
    for _ in 0..iters {
        // With ‖u‖ = 1 the H¹₀ gradient direction is u − (1/B)(−Δ)⁻¹(Φ|u|^{s−2}u).
        let rhs = Field::from_values(
            u.grid(),
            u.values()
                .iter()
                .zip(phi.values())
                .map(|(v, p)| p * pow_abs(*v, s - 2.0) * v / b)
                .collect(),
        )?;
        let target = poisson_solve(&rhs, 1e-10);
        let mut accepted = false;
        for _ in 0..30 {
            let trial = u.scaled(1.0 - tau).add_scaled(tau, &target)?.positive_part();
            if !trial.is_zero() {
                let trial = normalize(&trial);
                let (bt, phit) = eval(&trial)?;
                let qt = bt.powf(-1.0 / s);
                if qt < q {
                    let rel = (q - qt) / q;
                    u = trial;
                    b = bt;
                    phi = phit;
                    q = qt;
                    accepted = true;
                    stalls = if rel < 1e-10 { stalls + 1 } else { 0 };
                    tau = (tau * 2.0).min(1.0);
                    break;
                }
            }
            tau *= 0.5;
        }
        if !accepted || stalls >= 3 {
            break;
        }
    }
    Ok((q, u))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SobolevEstimate {
    /// Extrapolated `S`.
    pub value: f64,
    /// Difference between the three- and two-rung extrapolants, carried to `S`.
    pub error: f64,
    pub epsilon: f64,
    /// Box half-widths in units of ε.
    pub half_widths: Vec<f64>,
    /// `∫|∇U_ε|²` over each box.
    pub integrals: Vec<f64>,
    pub flagged: bool,
}

/// Estimates `S` from `∫|∇U_ε|² = S^{n/2}`.
///
/// Each rung is a box of the given extents, centred on the bubble, on which
/// the analytic `|∇U_ε|²` is integrated by the cell-midpoint rule. The
/// truncated integrals behave like `I∞ − k₁/a + k₃/a³` in the half-width
/// `a = L/(2ε)`, which the last three rungs determine exactly.
pub fn estimate_sobolev_constant(epsilon: f64, ladder: &[GridSpec]) -> Result<SobolevEstimate> {
    if ladder.len() < 3 {
        return Err(Error::InvalidParameters("the ladder needs at least three rungs".into()));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameters("epsilon must be positive".into()));
    }
    let n = ladder[0].extent.len();
    if n <= 2 || ladder.iter().any(|r| r.extent.len() != n || r.m.len() != n) {
        return Err(Error::InvalidGrid("ladder rungs must share a dimension n > 2".into()));
    }
    let mut half_widths = Vec::new();
    let mut integrals = Vec::new();
    for rung in ladder {
        let side = rung.extent[0];
        if rung.extent.iter().any(|e| (e - side).abs() > 1e-12 * side) || rung.m.iter().any(|&m| m != rung.m[0]) {
            return Err(Error::InvalidGrid("ladder rungs must be cubes".into()));
        }
        integrals.push(box_gradient_integral(n, epsilon, side, rung.m[0] - 1));
        half_widths.push(0.5 * side / epsilon);
    }
    let k = integrals.len();
    let (a, i) = (&half_widths[k - 3..], &integrals[k - 3..]);
    let three = extrapolate3(a, i);
    let two = (a[2] * i[2] - a[1] * i[1]) / (a[2] - a[1]);
    let nf = n as f64;
    let value = three.powf(2.0 / nf);
    let error = (2.0 / nf) * value * (three - two).abs() / three;
    Ok(SobolevEstimate {
        value,
        error,
        epsilon,
        half_widths,
        integrals,
        flagged: error > 0.05 * value,
    })
}

/// Solves `I_j = I∞ − k₁/a_j + k₃/a_j³` for `I∞`.
fn extrapolate3(a: &[f64], i: &[f64]) -> f64 {
    let rows: Vec<[f64; 4]> = (0..3).map(|j| [1.0, -1.0 / a[j], a[j].powi(-3), i[j]]).collect();
    let det3 = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let full = [
        [rows[0][0], rows[0][1], rows[0][2]],
        [rows[1][0], rows[1][1], rows[1][2]],
        [rows[2][0], rows[2][1], rows[2][2]],
    ];
    let first = [
        [rows[0][3], rows[0][1], rows[0][2]],
        [rows[1][3], rows[1][1], rows[1][2]],
        [rows[2][3], rows[2][1], rows[2][2]],
    ];
    det3(first) / det3(full)
}

/// Midpoint rule for `∫|∇U_ε|²` over `[−L/2, L/2]ⁿ` with `cells` cells per axis.
fn box_gradient_integral(n: usize, epsilon: f64, side: f64, cells: usize) -> f64 {
    let h = side / cells as f64;
    let centre = |i: usize| -0.5 * side + (i as f64 + 0.5) * h;
    // Fold onto the positive orthant when the cell layout is symmetric.
    let (per_axis, offset, weight) = if cells % 2 == 0 {
        (cells / 2, cells / 2, 2f64.powi(n as i32))
    } else {
        (cells, 0, 1.0)
    };
    let inner = per_axis.pow((n - 1) as u32);
    let total = par::sum_by(per_axis, |i0| {
        let x0 = centre(i0 + offset);
        let mut acc = 0.0;
        for flat in 0..inner {
            let mut rem = flat;
            let mut r2 = x0 * x0;
            for _ in 1..n {
                let x = centre(rem % per_axis + offset);
                rem /= per_axis;
                r2 += x * x;
            }
            acc += talenti_grad_sq(n, epsilon, r2.sqrt());
        }
        acc
    });
    weight * total * h.powi(n as i32)
}

/// `(n−μ+2)/(2(2n−μ))·S_{H,L}^{(2n−μ)/(n−μ+2)}`.
pub fn level_gap(s_hl: f64, exps: &Exponents) -> f64 {
    let nf = exps.n as f64;
    let mu = exps.mu;
    (nf - mu + 2.0) / (2.0 * (2.0 * nf - mu)) * s_hl.powf((2.0 * nf - mu) / (nf - mu + 2.0))
}

/// Radial window and the two resolutions (shells per decade) whose minima are
/// extrapolated; the log-shell discretisation is second order.
pub const RADIAL_RANGE: (f64, f64) = (1e-4, 1e4);
pub const RADIAL_LADDER: (usize, usize) = (40, 80);
const RADIAL_ITERS: usize = 3000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HlEstimate {
    /// Extrapolated `S_{H,L}`.
    pub value: f64,
    /// `|value − fine|`.
    pub error: f64,
    pub coarse: f64,
    pub fine: f64,
    /// Best fine-grid quotient over the bubble seeds only.
    pub from_bubbles: f64,
    /// Best fine-grid quotient over the random seeds only.
    pub from_random: f64,
    pub bubble_seeds: usize,
    pub random_seeds: usize,
}

fn radial_minimum(grid: &RadialGrid, exps: &Exponents, random_seeds: usize, seed: u64) -> (f64, f64) {
    let s = exps.two_star_mu;
    let mut starts: Vec<Vec<f64>> = [0.1, 1.0, 10.0]
        .iter()
        .map(|&eps| grid.sample(|r| talenti_value(exps.n, eps, r)))
        .collect();
    for i in 0..random_seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed, i as u64));
        starts.push(grid.random_profile(&mut rng));
    }
    let values = par::map(starts, |u| grid.minimize(&u, s, RADIAL_ITERS).0);
    let best = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);
    (best(&values[..3]), best(&values[3..]))
}

/// Minimises the `S_{H,L}` quotient over radial profiles in ℝⁿ, seeded by
/// bubbles at three scales and `random_seeds` random positive profiles.
///
/// Radial restriction loses nothing: symmetric decreasing rearrangement
/// lowers `‖∇u‖²` and raises the Riesz double integral.
pub fn estimate_hl_constant(exps: &Exponents, random_seeds: usize, seed: u64) -> HlEstimate {
    let (lo, hi) = RADIAL_RANGE;
    let coarse_grid = RadialGrid::new(exps.n, exps.mu, lo, hi, RADIAL_LADDER.0);
    let fine_grid = RadialGrid::new(exps.n, exps.mu, lo, hi, RADIAL_LADDER.1);
    let (cb, cr) = radial_minimum(&coarse_grid, exps, random_seeds, seed);
    let (fb, fr) = radial_minimum(&fine_grid, exps, random_seeds, seed);
    let (coarse, fine) = (cb.min(cr), fb.min(fr));
    let ratio = (RADIAL_LADDER.1 as f64 / RADIAL_LADDER.0 as f64).powi(2);
    let value = fine + (fine - coarse) / (ratio - 1.0);
    HlEstimate {
        value,
        error: (value - fine).abs(),
        coarse,
        fine,
        from_bubbles: fb,
        from_random: fr,
        bubble_seeds: 3,
        random_seeds,
    }
}

/// Default ladder for [`estimate_sobolev_constant`]: cubes of half-width
/// 8ε, 16ε and 32ε at spacing ε/4.
pub fn sobolev_ladder(n: usize, epsilon: f64) -> Vec<GridSpec> {
    [16.0, 32.0, 64.0]
        .iter()
        .map(|&w| {
            let cells = (4.0 * w) as usize;
            GridSpec::cube(ShapeTag::Box, n, w * epsilon, cells + 1)
        })
        .collect()
}

/// Seed of the random radial profiles in [`estimate_critical_constants`].
pub const HL_SEED: u64 = 0x5eed_2024;
pub const HL_RANDOM_SEEDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalConstants {
    pub s_hat: f64,
    pub s_hat_error: f64,
    pub s_hl_hat: f64,
    pub s_hl_error: f64,
    /// Best quotient over the random seeds alone.
    pub s_hl_independent: f64,
    pub c_nmu_hat: f64,
    pub level_gap: f64,
    pub flagged: bool,
}

/// `S` from the gradient ladder, `S_{H,L}` from the radial minimisation, and
/// `C(n,μ) = (S/S_{H,L})^{2*_μ}`.
pub fn estimate_critical_constants(ladder: &[GridSpec], epsilon: f64, exps: &Exponents) -> Result<CriticalConstants> {
    if ladder.first().is_some_and(|r| r.extent.len() != exps.n) {
        return Err(Error::InvalidGrid("ladder dimension does not match the exponents".into()));
    }
    let sob = estimate_sobolev_constant(epsilon, ladder)?;
    let hl = estimate_hl_constant(exps, HL_RANDOM_SEEDS, HL_SEED);
    let c_nmu_hat = (sob.value / hl.value).powf(exps.two_star_mu);
    let disagreement = (hl.from_random - hl.fine).abs() / hl.fine;
    Ok(CriticalConstants {
        s_hat: sob.value,
        s_hat_error: sob.error,
        s_hl_hat: hl.value,
        s_hl_error: hl.error,
        s_hl_independent: hl.from_random,
        c_nmu_hat,
        level_gap: level_gap(hl.value, exps),
        flagged: sob.flagged || hl.error > 0.05 * hl.value || disagreement > 0.02,
    })
}

/// One ε tried by [`mountain_pass_seed`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedAttempt {
    pub epsilon: f64,
    pub t0: Option<f64>,
    pub t_prime: Option<f64>,
    /// Largest `I(u + tΦ_ε)` over the scanned t (and t′).
    pub sup_energy: f64,
}

#[derive(Debug, Clone)]
pub struct MountainPassSeed {
    pub field: Field,
    pub epsilon: f64,
    pub t0: f64,
    pub t_prime: f64,
    pub energy: EnergyBreakdown,
    /// `I(u_plus) + level_gap`.
    pub level: f64,
    /// `sup_t I(u_plus + tΦ_ε) < level` on the scanned t.
    pub level_ok: bool,
    /// `φ''_{u_plus}(1)`.
    pub sigma2_at_zero: f64,
    pub attempts: Vec<SeedAttempt>,
}

pub const SEED_T_POINTS: usize = 200;
pub const SEED_T_RANGE: (f64, f64) = (1e-3, 1e3);
pub const SEED_T_LIMIT: f64 = 1e6;

/// `u + tΦ` with its fiber quantities at `t = 1` and its energy.
struct Ray<'a> {
    u: &'a Field,
    phi: &'a Field,
    uu: f64,
    up: f64,
    pp: f64,
    lambda: f64,
    exps: &'a Exponents,
    kt: &'a KernelTable,
}

impl Ray<'_> {
    fn parts(&self, t: f64) -> Result<FieldParts> {
        let w = self.u.add_scaled(t, self.phi)?;
        let pot = riesz_potential(&w, self.exps, self.kt)?;
        Ok(FieldParts {
            norm_sq: self.uu + 2.0 * t * self.up + t * t * self.pp,
            a: singular_integral(&w, self.exps.q),
            b: choquard_energy_from(&w, &pot, self.exps),
        })
    }

    /// `(σ₁, σ₂, I)` at `t`.
    fn eval(&self, t: f64) -> Result<(f64, f64, f64)> {
        let parts = self.parts(t)?;
        let map = FiberMap::new(&parts, self.lambda, self.exps);
        Ok((
            map.d1(1.0),
            map.d2(1.0),
            EnergyBreakdown::from_parts(&parts, self.lambda, self.exps).total,
        ))
    }
}

/// Mountain-pass seed `u_plus + t′Φ_ε` on N⁻.
///
/// Along the ray `t ↦ u_plus + tΦ_ε`, `σ₂(t) = φ''(1)` starts positive;
/// `t₀` is the last scanned t with `σ₂ ≥ 0` and `t′ > t₀` the bisected zero
/// of `σ₁(t) = φ'(1)`. ε starts at `epsilon` (default 4h) and is halved, down
/// to h/4, until the scanned sup of `I` clears `I(u_plus) + level_gap`; if no
/// ε does, the lowest-sup seed is returned with `level_ok = false`.
pub fn mountain_pass_seed(
    u_plus: &Field,
    lambda: f64,
    exps: &Exponents,
    kt: &KernelTable,
    consts: &CriticalConstants,
    epsilon: Option<f64>,
) -> Result<MountainPassSeed> {
    let grid = u_plus.grid().clone();
    let base = energy(u_plus, lambda, exps, kt)?;
    let level = base.total + consts.level_gap;
    let sigma2_at_zero = FiberMap::new(&FieldParts::of(u_plus, exps, kt)?, lambda, exps).d2(1.0);
    let h = grid.h_max();
    let mut eps = epsilon.unwrap_or_else(|| BubbleSpec::default_epsilon(&grid));
    if !(eps > 0.0) {
        return Err(Error::InvalidParameters("epsilon must be positive".into()));
    }
    let ts: Vec<f64> = {
        let (lo, hi) = SEED_T_RANGE;
        let step = (hi / lo).ln() / (SEED_T_POINTS - 1) as f64;
        (0..SEED_T_POINTS).map(|i| lo * (step * i as f64).exp()).collect()
    };
    let mut attempts = Vec::new();
    let mut best: Option<(f64, MountainPassSeed)> = None;
    loop {
        let spec = BubbleSpec::centered(&grid, eps);
        let phi = talenti_bubble(&grid, &spec, exps)?;
        let ray = Ray {
            u: u_plus,
            phi: &phi,
            uu: h1_seminorm_sq(u_plus),
            up: grad_inner(u_plus, &phi)?,
            pp: h1_seminorm_sq(&phi),
            lambda,
            exps,
            kt,
        };
        let mut samples = Vec::with_capacity(ts.len());
        for &t in &ts {
            samples.push((t, ray.eval(t)?));
        }
        // Extend by decades while σ₂ or σ₁ is still non-negative at the end.
        while let Some(&(t, (s1, s2, _))) = samples.last() {
            if (s1 < 0.0 && s2 < 0.0) || t * 10.0 > SEED_T_LIMIT * (1.0 + 1e-12) {
                break;
            }
            samples.push((t * 10.0, ray.eval(t * 10.0)?));
        }
        let mut sup_energy = samples.iter().map(|s| s.1 .2).fold(f64::NEG_INFINITY, f64::max);
        let t0_idx = samples.iter().rposition(|s| s.1 .1 >= 0.0);
        let mut attempt = SeedAttempt {
            epsilon: eps,
            t0: t0_idx.map(|i| samples[i].0),
            t_prime: None,
            sup_energy,
        };
        // σ₁ > 0 at some t ≥ t₀ and < 0 further on.
        let bracket = t0_idx.and_then(|k| {
            let start = (k..samples.len()).find(|&i| samples[i].1 .0 > 0.0)?;
            let end = (start + 1..samples.len()).find(|&i| samples[i].1 .0 < 0.0)?;
            Some((k, end - 1, end))
        });
        if let Some((k, a, b)) = bracket {
            let (mut lo, mut hi) = (samples[a].0, samples[b].0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if ray.eval(mid)?.0 > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let t_prime = lo;
            let (_, _, e_prime) = ray.eval(t_prime)?;
            sup_energy = sup_energy.max(e_prime);
            attempt.t_prime = Some(t_prime);
            attempt.sup_energy = sup_energy;
            let field = u_plus.add_scaled(t_prime, &phi)?;
            let seed = MountainPassSeed {
                energy: EnergyBreakdown::from_parts(&ray.parts(t_prime)?, lambda, exps),
                field,
                epsilon: eps,
                t0: samples[k].0,
                t_prime,
                level,
                level_ok: sup_energy < level,
                sigma2_at_zero,
                attempts: Vec::new(),
            };
            let done = seed.level_ok;
            if done || best.as_ref().is_none_or(|(b, _)| sup_energy < *b) {
                best = Some((sup_energy, seed));
            }
            attempts.push(attempt);
            if done {
                break;
            }
        } else {
            attempts.push(attempt);
        }
        if eps * 0.5 < 0.25 * h * (1.0 - 1e-12) {
            break;
        }
        eps *= 0.5;
    }
    match best {
        Some((_, mut seed)) => {
            seed.attempts = attempts;
            Ok(seed)
        }
        None => Err(Error::SeedFailure(format!(
            "σ₁ has no root beyond t₀ within t ≤ {SEED_T_LIMIT:e} for any ε tried"
        ))),
    }
}
