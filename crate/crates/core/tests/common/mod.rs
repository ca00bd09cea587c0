#![allow(dead_code)]

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;

use choquard::grid::{build_grid, random_bump_field, DomainGrid, Field, GridSpec, ShapeTag};

pub fn ball(m: usize) -> Arc<DomainGrid> {
    build_grid(&GridSpec::cube(ShapeTag::Ball, 3, 2.0, m)).unwrap()
}

pub fn cube(m: usize) -> Arc<DomainGrid> {
    build_grid(&GridSpec::cube(ShapeTag::Box, 3, 2.0, m)).unwrap()
}

/// Strictly positive on every interior node: a random positive bump field
/// plus a small multiple of the boundary distance.
pub fn positive_field<R: Rng>(grid: &Arc<DomainGrid>, rng: &mut R) -> Field {
    let b = random_bump_field(grid, rng, false);
    let scale = b.max_abs();
    let d = Field::from_fn(grid, |x| grid.analytic_distance(x));
    let amp = rng.gen_range(0.2..3.0);
    b.add_scaled(0.3 * scale, &d).unwrap().scaled(amp / scale)
}

/// `4π∫₀^∞ r²|∇U_ε|² dr` by composite Simpson after `r = ε·tan θ`.
pub fn radial_gradient_integral(epsilon: f64, steps: usize) -> f64 {
    let grad_sq = |r: f64| {
        let c = 3f64.sqrt();
        c * epsilon * r * r / (epsilon * epsilon + r * r).powi(3)
    };
    let f = |th: f64| {
        let r = epsilon * th.tan();
        4.0 * PI * r * r * grad_sq(r) * epsilon / th.cos().powi(2)
    };
    let h = (PI / 2.0) / steps as f64;
    let mut acc = f(0.0);
    for i in 1..steps {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    // The integrand vanishes at θ = π/2.
    acc * h / 3.0
}
