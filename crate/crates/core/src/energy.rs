//! The functional `I_λ(u) = ½‖u‖² − λ/(1−q)·A(u) − B(u)/(2·2*_μ)`, its
//! weak-form residual, and the strong-form gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{grad_inner, h1_seminorm_sq, lp_integral, neg_laplacian, pow_abs, Field};
use crate::par;
use crate::riesz::{choquard_energy_from, riesz_potential, Exponents, KernelTable};

/// `A(u) = ∫|u|^{1−q}`.
pub fn singular_integral(u: &Field, q: f64) -> f64 {
    lp_integral(u, 1.0 - q)
}

/// The three homogeneous pieces every fiber computation is built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldParts {
    pub norm_sq: f64,
    pub a: f64,
    pub b: f64,
}

impl FieldParts {
    pub fn of(u: &Field, exps: &Exponents, kt: &KernelTable) -> Result<Self> {
        let phi = riesz_potential(u, exps, kt)?;
        Ok(Self::with_potential(u, &phi, exps))
    }

    pub fn with_potential(u: &Field, potential: &Field, exps: &Exponents) -> Self {
        Self {
            norm_sq: h1_seminorm_sq(u),
            a: singular_integral(u, exps.q),
            b: choquard_energy_from(u, potential, exps),
        }
    }

    /// Parts of `t·u`.
    pub fn scaled(&self, t: f64, exps: &Exponents) -> Self {
        Self {
            norm_sq: self.norm_sq * t * t,
            a: self.a * t.powf(1.0 - exps.q),
            b: self.b * t.powf(exps.p_growth),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub lambda: f64,
    pub kinetic: f64,
    pub singular: f64,
    pub nonlocal: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    pub fn from_parts(parts: &FieldParts, lambda: f64, exps: &Exponents) -> Self {
        let kinetic = 0.5 * parts.norm_sq;
        let singular = lambda / (1.0 - exps.q) * parts.a;
        let nonlocal = parts.b / exps.p_growth;
        Self {
            lambda,
            kinetic,
            singular,
            nonlocal,
            total: kinetic - singular - nonlocal,
        }
    }
}

pub fn energy(u: &Field, lambda: f64, exps: &Exponents, kt: &KernelTable) -> Result<EnergyBreakdown> {
    check_lambda(lambda)?;
    Ok(EnergyBreakdown::from_parts(&FieldParts::of(u, exps, kt)?, lambda, exps))
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameters(format!("lambda = {lambda} must be positive")))
    }
}

/// Default positivity floor `1e-8·max|u|`.
pub fn default_floor(u: &Field) -> f64 {
    1e-8 * u.max_abs()
}

/// `⟨I'(u), w⟩ = ∫∇u·∇w − λ∫max(u, floor)^{−q}w − ∫Φ[u]|u|^{2*_μ−2}u·w`.
///
/// With `floor == 0` every node where `w ≠ 0` must carry `u > 0`.
pub fn weak_residual(
    u: &Field,
    w: &Field,
    lambda: f64,
    exps: &Exponents,
    kt: &KernelTable,
    floor: f64,
) -> Result<f64> {
    let phi = riesz_potential(u, exps, kt)?;
    weak_residual_with(u, &phi, w, lambda, exps, floor)
}

/// [`weak_residual`] with a precomputed potential `Φ[u]`.
pub fn weak_residual_with(
    u: &Field,
    potential: &Field,
    w: &Field,
    lambda: f64,
    exps: &Exponents,
    floor: f64,
) -> Result<f64> {
    let lin = grad_inner(u, w)?;
    let g = u.grid();
    let masked = g.masked();
    let (uv, wv, pv) = (u.values(), w.values(), potential.values());
    if floor <= 0.0 {
        let count = masked.iter().filter(|&&p| wv[p] != 0.0 && uv[p] <= 0.0).count();
        if count > 0 {
            return Err(Error::NonPositiveSupport { count });
        }
    }
    let rest = par::sum_by(masked.len(), |k| {
        let p = masked[k];
        if wv[p] == 0.0 {
            return 0.0;
        }
        reaction(uv[p], pv[p], lambda, exps, floor) * wv[p]
    }) * g.cell_volume();
    Ok(lin - rest)
}

#[inline]
fn reaction(u: f64, phi: f64, lambda: f64, exps: &Exponents, floor: f64) -> f64 {
    let sing = lambda * pow_abs(u.max(floor), -exps.q);
    let nonlocal = phi * pow_abs(u, exps.two_star_mu - 2.0) * u;
    sing + nonlocal
}

/// Strong form `G = −Δ_h u − λ·max(u, floor)^{−q} − Φ[u]|u|^{2*_μ−2}u`, so that
/// `Σ G·w·hⁿ` equals the weak residual for every `w`.
pub fn gradient_field(
    u: &Field,
    lambda: f64,
    exps: &Exponents,
    kt: &KernelTable,
    floor: f64,
) -> Result<Field> {
    let phi = riesz_potential(u, exps, kt)?;
    Ok(gradient_field_with(u, &phi, lambda, exps, floor))
}

pub fn gradient_field_with(u: &Field, potential: &Field, lambda: f64, exps: &Exponents, floor: f64) -> Field {
    let lap = neg_laplacian(u);
    let g = u.grid();
    let (uv, pv, lv) = (u.values(), potential.values(), lap.values());
    let mut out = vec![0.0; g.len()];
    par::fill(&mut out, |p| {
        if !g.mask[p] {
            return 0.0;
        }
        // A zero λ with a zero floor would otherwise evaluate 0·∞.
        let r = if lambda == 0.0 {
            pv[p] * pow_abs(uv[p], exps.two_star_mu - 2.0) * uv[p]
        } else {
            reaction(uv[p], pv[p], lambda, exps, floor)
        };
        lv[p] - r
    });
    Field::masked_from(g, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, l2_inner, random_bump_field, random_field, DomainGrid, GridSpec, ShapeTag};
    use crate::riesz::{kernel_table, make_exponents};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn setup(m: usize) -> (Arc<DomainGrid>, Exponents, Arc<KernelTable>) {
        let g = build_grid(&GridSpec::cube(ShapeTag::Ball, 3, 2.0, m)).unwrap();
        let e = make_exponents(3, 1.0, 0.5).unwrap();
        let kt = kernel_table(&g, 1.0).unwrap();
        (g, e, kt)
    }

    #[test]
    fn zero_field() {
        let (g, e, kt) = setup(9);
        let z = Field::zeros(&g);
        assert_eq!(singular_integral(&z, 0.5), 0.0);
        let en = energy(&z, 0.3, &e, &kt).unwrap();
        assert_eq!((en.kinetic, en.singular, en.nonlocal, en.total), (0.0, 0.0, 0.0, 0.0));
        assert!(gradient_field(&z, 0.0, &e, &kt, 0.0).unwrap().is_zero());
    }

    #[test]
    fn singular_integral_of_constant() {
        let g = build_grid(&GridSpec::cube(ShapeTag::Box, 3, 1.0, 33)).unwrap();
        let c = 4.0;
        let u = Field::from_fn(&g, |_| c);
        // 31³ interior cells of volume h³.
        let a = singular_integral(&u, 0.5);
        assert!((a - 2.0 * (31.0 / 32.0f64).powi(3)).abs() < 1e-12);
        assert!((a - 2.0).abs() < 2.0 * 6.0 / 32.0);
        assert!((singular_integral(&u.scaled(9.0), 0.5) - 3.0 * a).abs() < 1e-12 * a);
    }

    #[test]
    fn breakdown_signs_and_total() {
        let (g, e, kt) = setup(11);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random_field(&g, &mut rng, -1.0, 1.0);
        let en = energy(&u, 0.4, &e, &kt).unwrap();
        assert!(en.kinetic >= 0.0 && en.singular >= 0.0 && en.nonlocal >= 0.0);
        assert_eq!(en.total, en.kinetic - en.singular - en.nonlocal);
        assert!(energy(&u, 0.0, &e, &kt).is_err());
    }

    #[test]
    fn strictly_decreasing_in_lambda() {
        let (g, e, kt) = setup(11);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_bump_field(&g, &mut rng, false);
        let a = energy(&u, 0.2, &e, &kt).unwrap().total;
        let b = energy(&u, 0.2000001, &e, &kt).unwrap().total;
        assert!(b < a);
    }

    #[test]
    fn residual_is_linear_in_test_field() {
        let (g, e, kt) = setup(11);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = random_field(&g, &mut rng, 0.5, 1.0);
        let w1 = random_bump_field(&g, &mut rng, true);
        let w2 = random_bump_field(&g, &mut rng, true);
        let (a, b) = (0.7, -1.3);
        let comb = w1.scaled(a).add_scaled(b, &w2).unwrap();
        let r = |w: &Field| weak_residual(&u, w, 0.3, &e, &kt, 0.0).unwrap();
        let lhs = r(&comb);
        let rhs = a * r(&w1) + b * r(&w2);
        assert!((lhs - rhs).abs() <= 1e-12 * (r(&w1).abs() + r(&w2).abs()));
        assert_eq!(r(&Field::zeros(&g)), 0.0);
    }

    #[test]
    fn zero_floor_flags_non_positive_support() {
        let (g, e, kt) = setup(9);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let u = random_field(&g, &mut rng, -1.0, 1.0);
        let w = Field::from_fn(&g, |_| 1.0);
        assert!(matches!(
            weak_residual(&u, &w, 0.3, &e, &kt, 0.0),
            Err(Error::NonPositiveSupport { .. })
        ));
        assert!(weak_residual(&u, &w, 0.3, &e, &kt, 1e-3).is_ok());
    }

    #[test]
    fn gradient_matches_weak_residual() {
        let (g, e, kt) = setup(13);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let u = random_field(&g, &mut rng, 0.2, 1.0);
            let w = random_field(&g, &mut rng, -1.0, 1.0);
            let floor = default_floor(&u);
            let gr = gradient_field(&u, 0.3, &e, &kt, floor).unwrap();
            let via_g = l2_inner(&gr, &w).unwrap();
            let via_r = weak_residual(&u, &w, 0.3, &e, &kt, floor).unwrap();
            assert!((via_g - via_r).abs() <= 1e-10 * via_r.abs().max(1.0), "{via_g} {via_r}");
        }
    }

    #[test]
    fn central_difference_directional_derivative() {
        let (g, e, kt) = setup(11);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let lambda = 0.3;
        for _ in 0..4 {
            let u = random_field(&g, &mut rng, 0.5, 1.0);
            let w = random_field(&g, &mut rng, -1.0, 1.0);
            let eps = 1e-5;
            let ip = energy(&u.add_scaled(eps, &w).unwrap(), lambda, &e, &kt).unwrap().total;
            let im = energy(&u.add_scaled(-eps, &w).unwrap(), lambda, &e, &kt).unwrap().total;
            let fd = (ip - im) / (2.0 * eps);
            let an = l2_inner(&gradient_field(&u, lambda, &e, &kt, default_floor(&u)).unwrap(), &w).unwrap();
            assert!((fd - an).abs() <= 1e-5 * an.abs(), "{fd} {an}");
        }
    }

    #[test]
    fn laplacian_of_sine_mode() {
        let mut errs = Vec::new();
        for m in [17, 33] {
            let g = build_grid(&GridSpec::cube(ShapeTag::Box, 3, 1.0, m)).unwrap();
            let mode = |x: &[f64]| x.iter().map(|v| (PI * v).sin()).product::<f64>();
            let u = Field::from_fn(&g, mode);
            let lap = neg_laplacian(&u);
            let err = g
                .masked()
                .iter()
                .map(|&p| (lap.values()[p] - 3.0 * PI * PI * u.values()[p]).abs())
                .fold(0.0, f64::max);
            errs.push(err / (3.0 * PI * PI));
        }
        // Second-order: halving h cuts the error by ~4.
        assert!(errs[0] < 0.02 && errs[1] < errs[0] / 3.5, "{errs:?}");
    }
}
