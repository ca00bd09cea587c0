mod common;

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use choquard::bubble::{estimate_critical_constants, sobolev_ladder, talenti_bubble, BubbleSpec};
use choquard::cli::{Report, SweepRow};
use choquard::energy::{energy, FieldParts};
use choquard::fiber::{
    estimate_embedding_constant, fiber_d1, nehari_norm_bound, nehari_project_minus, nehari_project_plus, Classification,
    FiberDiagnostics, FiberMap,
};
use choquard::grid::{
    build_grid, grad_inner, h1_seminorm_sq, random_bump_field, random_field, DomainGrid, Field, GridSpec, ShapeTag,
};
use choquard::regularity::{boundary_envelope, linf_bound};
use choquard::riesz::{choquard_energy, hls_check, kernel_table, make_exponents, riesz_potential, Exponents, KernelTable};
use choquard::solver::{minimize_nplus, SolverConfig};

use common::positive_field;

fn exps() -> Exponents {
    make_exponents(3, 1.0, 0.5).unwrap()
}

type Setup = (Arc<DomainGrid>, Arc<KernelTable>);

/// Grids and kernel tables are costly to build; share them across cases.
fn setup(shape: ShapeTag, m: usize) -> Setup {
    static CACHE: OnceLock<Mutex<HashMap<(bool, usize), Setup>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().unwrap();
    map.entry((shape == ShapeTag::Ball, m))
        .or_insert_with(|| {
            let g = build_grid(&GridSpec::cube(shape, 3, 2.0, m)).unwrap();
            let kt = kernel_table(&g, 1.0).unwrap();
            (g, kt)
        })
        .clone()
}

fn c_hat() -> f64 {
    static C: OnceLock<f64> = OnceLock::new();
    *C.get_or_init(|| {
        estimate_critical_constants(&sobolev_ladder(3, 0.25), 0.25, &exps())
            .unwrap()
            .c_nmu_hat
    })
}

fn shape() -> impl Strategy<Value = ShapeTag> {
    prop_oneof![Just(ShapeTag::Ball), Just(ShapeTag::Box)]
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// The 48 axis permutations and reflections of the cube.
fn symmetry(k: usize) -> ([usize; 3], [bool; 3]) {
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let bits = k % 8;
    (perms[k / 8], [bits & 1 == 1, bits & 2 == 2, bits & 4 == 4])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn seminorm_is_quadratic_and_bilinear(shape in shape(), seed in any::<u64>(), s in -4.0f64..4.0, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let (g, _) = setup(shape, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random_field(&g, &mut rng, -1.0, 1.0);
        let v = random_bump_field(&g, &mut rng, true);
        let w = random_field(&g, &mut rng, -1.0, 1.0);
        let nu = h1_seminorm_sq(&u);
        prop_assert!((h1_seminorm_sq(&u.scaled(s)) - s * s * nu).abs() <= 1e-12 * s * s * nu);
        prop_assert!((grad_inner(&u, &w).unwrap() - grad_inner(&w, &u).unwrap()).abs() <= 1e-12 * nu);
        let combo = u.scaled(a).add_scaled(b, &v).unwrap();
        let lhs = grad_inner(&combo, &w).unwrap();
        let rhs = a * grad_inner(&u, &w).unwrap() + b * grad_inner(&v, &w).unwrap();
        let scale = (h1_seminorm_sq(&combo) * h1_seminorm_sq(&w)).sqrt() + nu;
        prop_assert!((lhs - rhs).abs() <= 1e-12 * scale);
    }

    #[test]
    fn delta_is_the_analytic_distance(shape in shape(), m in 5usize..20) {
        let g = build_grid(&GridSpec::cube(shape, 3, 2.0, m)).unwrap();
        let h = g.h_max();
        for &p in g.masked() {
            let d = g.analytic_distance(&g.coords(p));
            prop_assert!((g.delta[p] - d).abs() <= 0.5 * h);
            prop_assert!(g.delta[p] > 0.0);
        }
    }

    #[test]
    fn potential_commutes_with_grid_symmetries(shape in shape(), seed in any::<u64>(), k in 0usize..48) {
        let (g, kt) = setup(shape, 11);
        let ex = exps();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random_field(&g, &mut rng, -1.0, 1.0);
        let (perm, flip) = symmetry(k);
        let tu = u.transformed(&perm, &flip).unwrap();
        let phi = riesz_potential(&u, &ex, &kt).unwrap();
        let tphi = riesz_potential(&tu, &ex, &kt).unwrap();
        let moved = phi.transformed(&perm, &flip).unwrap();
        let scale = phi.max_abs();
        for (a, b) in tphi.values().iter().zip(moved.values()) {
            prop_assert!((a - b).abs() <= 1e-12 * scale);
        }
        let (b0, b1) = (choquard_energy(&u, &ex, &kt).unwrap(), choquard_energy(&tu, &ex, &kt).unwrap());
        prop_assert!(rel(b1, b0) <= 1e-12);
    }

    #[test]
    fn choquard_energy_is_monotone_in_magnitude(seed in any::<u64>()) {
        let (g, kt) = setup(ShapeTag::Ball, 9);
        let ex = exps();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random_field(&g, &mut rng, -1.0, 1.0);
        let extra = random_field(&g, &mut rng, 0.0, 0.5);
        let v = Field::from_values(
            &g,
            u.values().iter().zip(extra.values()).map(|(a, e)| a.signum() * (a.abs() + e)).collect(),
        )
        .unwrap();
        prop_assert!(choquard_energy(&u, &ex, &kt).unwrap() <= choquard_energy(&v, &ex, &kt).unwrap());
    }

    #[test]
    fn energy_along_the_ray_is_the_fiber_map(shape in shape(), seed in any::<u64>(), t in 0.05f64..5.0, lambda in 0.01f64..3.0) {
        let (g, kt) = setup(shape, 9);
        let ex = exps();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = positive_field(&g, &mut rng);
        let e = energy(&u.scaled(t), lambda, &ex, &kt).unwrap();
        let map = FiberMap::new(&FieldParts::of(&u, &ex, &kt).unwrap(), lambda, &ex);
        let scale = e.kinetic + e.singular + e.nonlocal;
        prop_assert!((e.total - map.value(t)).abs() <= 1e-12 * scale);
        // The singular term makes the energy strictly decreasing in λ.
        let higher = energy(&u.scaled(t), lambda * 1.5, &ex, &kt).unwrap();
        prop_assert!(higher.total < e.total);
        prop_assert!(e.kinetic > 0.0 && e.singular > 0.0 && e.nonlocal > 0.0);
    }

    #[test]
    fn first_derivative_factors_through_m(seed in any::<u64>(), t in 0.01f64..10.0, lambda in 0.01f64..3.0) {
        let (g, kt) = setup(ShapeTag::Ball, 9);
        let ex = exps();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = positive_field(&g, &mut rng);
        let parts = FieldParts::of(&u, &ex, &kt).unwrap();
        let map = FiberMap::new(&parts, lambda, &ex);
        let d1 = fiber_d1(&u, t, lambda, &ex, &kt).unwrap();
        let via_m = t.powf(-ex.q) * (map.m(t) - lambda * parts.a);
        let scale = t * parts.norm_sq + lambda * t.powf(-ex.q) * parts.a + t.powf(ex.p_growth - 1.0) * parts.b;
        prop_assert!((d1 - via_m).abs() <= 1e-12 * scale);
    }

    #[test]
    fn root_count_switches_at_lambda_crit(seed in any::<u64>()) {
        let (g, kt) = setup(ShapeTag::Box, 9);
        let ex = exps();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let parts = FieldParts::of(&positive_field(&g, &mut rng), &ex, &kt).unwrap();
        let crit = FiberMap::new(&parts, 1.0, &ex).lambda_crit();
        let has_roots = |l: f64| FiberMap::new(&parts, l, &ex).roots().is_some();
        let (mut lo, mut hi) = (0.01 * crit, 100.0 * crit);
        prop_assert!(has_roots(lo) && !has_roots(hi));
        while hi - lo > 1e-9 * crit {
            let mid = 0.5 * (lo + hi);
            if has_roots(mid) { lo = mid } else { hi = mid }
        }
        prop_assert!(rel(lo, crit) <= 1e-8 && rel(hi, crit) <= 1e-8);
    }

    #[test]
    fn projections_land_on_their_branch(shape in shape(), seed in any::<u64>(), frac in 0.01f64..0.99, s in 0.1f64..10.0) {
        let (g, kt) = setup(shape, 9);
        let ex = exps();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = positive_field(&g, &mut rng);
        let parts = FieldParts::of(&u, &ex, &kt).unwrap();
        let lambda = frac * FiberMap::new(&parts, 1.0, &ex).lambda_crit();
        let classify = |v: &Field| {
            FiberDiagnostics::from_parts(&FieldParts::of(v, &ex, &kt).unwrap(), lambda, &ex).unwrap().classification
        };
        let plus = nehari_project_plus(&u, lambda, &ex, &kt).unwrap();
        let minus = nehari_project_minus(&u, lambda, &ex, &kt).unwrap();
        prop_assert_eq!(classify(&plus), Classification::Nplus);
        prop_assert_eq!(classify(&minus), Classification::Nminus);
        // Projection ignores the scale of the input: t1(su) = t1(u)/s.
        let scaled = nehari_project_plus(&u.scaled(s), lambda, &ex, &kt).unwrap();
        for (a, b) in scaled.values().iter().zip(plus.values()) {
            prop_assert!((a - b).abs() <= 1e-8 * plus.max_abs());
        }
    }

    #[test]
    fn fiber_map_rises_between_its_roots(seed in any::<u64>(), frac in 0.05f64..0.95) {
        let (g, kt) = setup(ShapeTag::Ball, 9);
        let ex = exps();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let parts = FieldParts::of(&positive_field(&g, &mut rng), &ex, &kt).unwrap();
        let lambda = frac * FiberMap::new(&parts, 1.0, &ex).lambda_crit();
        let map = FiberMap::new(&parts, lambda, &ex);
        let (t1, t2) = map.roots().unwrap();
        let sample = |a: f64, b: f64| (1..200).map(move |i| a + (b - a) * i as f64 / 200.0).collect::<Vec<_>>();
        let down1 = sample(1e-3 * t1, t1);
        let up = sample(t1, t2);
        let down2 = sample(t2, 3.0 * t2);
        prop_assert!(down1.windows(2).all(|w| map.value(w[1]) < map.value(w[0])));
        prop_assert!(up.windows(2).all(|w| map.value(w[1]) > map.value(w[0])));
        prop_assert!(down2.windows(2).all(|w| map.value(w[1]) < map.value(w[0])));
    }

    #[test]
    fn hls_ratio_is_scale_invariant(seed in any::<u64>(), s in 0.05f64..20.0) {
        let (g, kt) = setup(ShapeTag::Ball, 9);
        let ex = exps();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random_field(&g, &mut rng, 0.0, 1.0);
        let a = hls_check(&u, &ex, &kt, 2.0).unwrap().ratio;
        let b = hls_check(&u.scaled(s), &ex, &kt, 2.0).unwrap().ratio;
        prop_assert!(rel(b, a) <= 1e-10);
    }

    #[test]
    fn envelope_of_a_multiple_of_delta(shape in shape(), c in 0.01f64..100.0, m in 7usize..16) {
        let g = build_grid(&GridSpec::cube(shape, 3, 2.0, m)).unwrap();
        let u = Field::from_fn(&g, |x| c * g.analytic_distance(x));
        let env = boundary_envelope(&u).unwrap();
        prop_assert!(rel(env.l, c) <= 1e-12 && rel(env.k, c) <= 1e-12);
    }

    #[test]
    fn report_json_round_trips(vals in proptest::collection::vec(-1e6f64..1e6, 7), keys in proptest::collection::btree_map("[a-z]{1,8}\\.[a-z]{1,8}", "[ -~]{0,12}", 0..6)) {
        let row = SweepRow {
            lambda: vals[0].abs(),
            n_roots: 2,
            t1: Some(vals[1]),
            t2: None,
            t_max: vals[2],
            m_max: vals[3] * 1e-300,
            lambda_crit: vals[4] * 1e300,
        };
        let report = Report { config_echo: keys, sweep: Some(vec![row]), ..Default::default() };
        let text = report.to_json().unwrap();
        prop_assert_eq!(Report::from_json(&text).unwrap(), report);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn hls_bound_holds_for_resolved_fields(seed in any::<u64>(), white in any::<bool>()) {
        // Random positive fields whose features span at least three cells.
        let (g, kt) = setup(ShapeTag::Ball, 17);
        let ex = exps();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = if white {
            random_field(&g, &mut rng, 0.0, 1.0)
        } else {
            let h = g.h_max();
            let bumps: Vec<(Vec<f64>, f64, f64)> = (0..3)
                .map(|_| {
                    use rand::Rng;
                    let c: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.3..0.3)).collect();
                    (c, rng.gen_range(3.0 * h..0.45), rng.gen_range(0.5..1.5))
                })
                .collect();
            Field::from_fn(&g, |x| {
                bumps.iter().map(|(c, r, a)| {
                    let s2 = x.iter().zip(c).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / (r * r);
                    if s2 < 1.0 { a * (1.0 - s2).powi(3) } else { 0.0 }
                }).sum()
            })
        };
        let check = hls_check(&u, &ex, &kt, c_hat()).unwrap();
        prop_assert!(check.ratio <= 1.000001, "ratio {}", check.ratio);
    }
}

#[test]
fn lattice_spike_exceeds_the_continuum_constant() {
    // A single-node field sees only the cell-averaged self weight, and for it
    // the ratio is h·w_self/Ĉ, slightly above one: the discrete operator is
    // not bounded by the continuum sharp constant at the lattice scale.
    let (g, kt) = setup(ShapeTag::Ball, 17);
    let ex = exps();
    let centre = g.masked().iter().copied().find(|&p| g.coords(p).iter().all(|v| v.abs() < 1e-12)).unwrap();
    let mut values = vec![0.0; g.len()];
    values[centre] = 1.0;
    let u = Field::from_values(&g, values).unwrap();
    let ratio = hls_check(&u, &ex, &kt, c_hat()).unwrap().ratio;
    let expect = g.h_max() * kt.self_weight() / c_hat();
    assert!(rel(ratio, expect) < 1e-12);
    assert!(ratio > 1.0 && ratio < 1.05, "{ratio}");
}

#[test]
fn bubble_approaches_equality_as_the_ball_grows() {
    let ex = exps();
    let ratios: Vec<f64> = [33, 65]
        .iter()
        .map(|&m| {
            let g = build_grid(&GridSpec::cube(ShapeTag::Ball, 3, 2.0, m)).unwrap();
            let kt = kernel_table(&g, 1.0).unwrap();
            // Fixed resolution ε = 4h, so R/ε doubles from 4 to 8.
            let spec = BubbleSpec::centered(&g, 4.0 * g.h_max());
            let u = talenti_bubble(&g, &spec, &ex).unwrap();
            hls_check(&u, &ex, &kt, c_hat()).unwrap().ratio
        })
        .collect();
    assert!(ratios[1] > ratios[0], "{ratios:?}");
    assert!(ratios.iter().all(|r| (r - 1.0).abs() < 0.02 && *r <= 1.000001), "{ratios:?}");
}

#[test]
fn solver_preserves_ball_symmetry() {
    let (g, kt) = setup(ShapeTag::Ball, 13);
    let ex = exps();
    let cfg = SolverConfig {
        lambda: 0.3,
        ..Default::default()
    };
    let r = minimize_nplus(&cfg, &g, &ex, &kt).unwrap();
    assert!(r.converged);
    let u = r.field();
    let scale = u.max_abs();
    for k in 0..48 {
        let (perm, flip) = symmetry(k);
        let v = u.transformed(&perm, &flip).unwrap();
        let diff = u.values().iter().zip(v.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff <= 1e-8 * scale, "symmetry {k}: {diff}");
    }
}

#[test]
fn nplus_solution_is_bounded_and_its_envelope_is_stable() {
    let ex = exps();
    let lambda = 0.3;
    let mut envs = Vec::new();
    for m in [17, 33] {
        let (g, kt) = setup(ShapeTag::Ball, m);
        let cfg = SolverConfig {
            lambda,
            ..Default::default()
        };
        let r = minimize_nplus(&cfg, &g, &ex, &kt).unwrap();
        assert!(r.converged);
        let u = r.field();
        // ‖u‖ on N⁺ stays below the bound built from C_{1−q}.
        let c = estimate_embedding_constant(&g, 1.0 - ex.q, 4, 11).unwrap();
        assert!(h1_seminorm_sq(u).sqrt() <= nehari_norm_bound(lambda, c.value, &ex));
        // linf matches the CSV dump.
        let mut csv = Vec::new();
        u.write_csv(&mut csv).unwrap();
        let csv_max = String::from_utf8(csv)
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
            .fold(0.0, f64::max);
        assert_eq!(csv_max, linf_bound(u));
        envs.push(boundary_envelope(u).unwrap());
    }
    let (a, b) = (&envs[0], &envs[1]);
    assert!(a.l > 0.0 && b.l > 0.0);
    for (x, y) in [(a.l, b.l), (a.k, b.k)] {
        assert!(x / y < 2.0 && y / x < 2.0, "{a:?} vs {b:?}");
    }
}
