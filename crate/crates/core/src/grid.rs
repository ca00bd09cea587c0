//! Uniform grids on the unit-type domains (ball, box) with a Dirichlet
//! exterior, grid functions, and the discrete H¹₀ calculus used everywhere
//! else: forward-difference seminorm, matched 2n+1 point Laplacian, midpoint
//! integrals, and a conjugate-gradient Poisson solve.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeTag {
    Ball,
    Box,
}

impl std::str::FromStr for ShapeTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "ball" => Ok(ShapeTag::Ball),
            "box" => Ok(ShapeTag::Box),
            other => Err(Error::InvalidGrid(format!("unknown shape `{other}`"))),
        }
    }
}

/// Requested discretisation. A box spans `[0, extent]` per axis; a ball is
/// centred at the origin inside `[-extent/2, extent/2]` with radius
/// `min(extent)/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub shape: ShapeTag,
    pub extent: Vec<f64>,
    pub m: Vec<usize>,
}

impl GridSpec {
    pub fn cube(shape: ShapeTag, n: usize, extent: f64, m: usize) -> Self {
        Self {
            shape,
            extent: vec![extent; n],
            m: vec![m; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainGrid {
    pub n: usize,
    pub shape: ShapeTag,
    pub extent: Vec<f64>,
    pub m: Vec<usize>,
    pub h: Vec<f64>,
    /// Coordinates of node (0, …, 0).
    pub origin: Vec<f64>,
    pub mask: Vec<bool>,
    pub delta: Vec<f64>,
    /// Ball centre (origin) and radius; unused for boxes.
    pub radius: f64,
    strides: Vec<usize>,
    masked: Vec<usize>,
    cell_volume: f64,
}

/// Node coordinate along one axis. Ball grids count from the centre so that
/// mirrored nodes get exactly negated coordinates and the mask is symmetric.
fn axis_coord(shape: ShapeTag, m: usize, h: f64, i: usize) -> f64 {
    match shape {
        ShapeTag::Box => i as f64 * h,
        ShapeTag::Ball => (i as f64 - 0.5 * (m - 1) as f64) * h,
    }
}

pub fn build_grid(spec: &GridSpec) -> Result<Arc<DomainGrid>> {
    DomainGrid::new(spec).map(Arc::new)
}

impl DomainGrid {
    pub fn new(spec: &GridSpec) -> Result<Self> {
        let n = spec.extent.len();
        if n <= 2 {
            return Err(Error::InvalidGrid(format!(
                "dimension n = {n}; the problem requires n > 2"
            )));
        }
        if spec.m.len() != n {
            return Err(Error::InvalidGrid(format!(
                "{} point counts for {n} axes",
                spec.m.len()
            )));
        }
        if let Some(e) = spec.extent.iter().find(|e| !(**e > 0.0) || !e.is_finite()) {
            return Err(Error::InvalidGrid(format!("extent {e} is not positive")));
        }
        if let Some(m) = spec.m.iter().find(|m| **m < 5) {
            return Err(Error::InvalidGrid(format!("{m} points per axis; need at least 5")));
        }

        let h: Vec<f64> = spec
            .extent
            .iter()
            .zip(&spec.m)
            .map(|(e, m)| e / (*m as f64 - 1.0))
            .collect();
        let origin: Vec<f64> = match spec.shape {
            ShapeTag::Box => vec![0.0; n],
            ShapeTag::Ball => spec.extent.iter().map(|e| -0.5 * e).collect(),
        };
        let radius = 0.5 * spec.extent.iter().cloned().fold(f64::INFINITY, f64::min);

        let mut strides = vec![1usize; n];
        for a in (0..n - 1).rev() {
            strides[a] = strides[a + 1] * spec.m[a + 1];
        }
        let len = strides[0] * spec.m[0];

        let mut mask = vec![false; len];
        let mut delta = vec![0.0; len];
        let mut idx = vec![0usize; n];
        let mut x = vec![0.0; n];
        for p in 0..len {
            let mut rem = p;
            for a in 0..n {
                idx[a] = rem / strides[a];
                rem %= strides[a];
                x[a] = axis_coord(spec.shape, spec.m[a], h[a], idx[a]);
            }
            let outer = idx.iter().zip(&spec.m).any(|(i, m)| *i == 0 || *i == m - 1);
            if outer {
                continue;
            }
            match spec.shape {
                ShapeTag::Box => {
                    mask[p] = true;
                    delta[p] = (0..n)
                        .map(|a| (x[a] - origin[a]).min(origin[a] + spec.extent[a] - x[a]))
                        .fold(f64::INFINITY, f64::min);
                }
                ShapeTag::Ball => {
                    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if r < radius {
                        mask[p] = true;
                        delta[p] = radius - r;
                    }
                }
            }
        }
        let masked = (0..len).filter(|&p| mask[p]).collect();

        Ok(Self {
            n,
            shape: spec.shape,
            extent: spec.extent.clone(),
            m: spec.m.clone(),
            cell_volume: h.iter().product(),
            h,
            origin,
            mask,
            delta,
            radius,
            strides,
            masked,
        })
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            shape: self.shape,
            extent: self.extent.clone(),
            m: self.m.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    /// Lexicographic strides (last axis fastest).
    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    /// Interior node indices in lexicographic order.
    pub fn masked(&self) -> &[usize] {
        &self.masked
    }

    /// hⁿ, the weight of every node in midpoint sums.
    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    pub fn h_max(&self) -> f64 {
        self.h.iter().cloned().fold(0.0, f64::max)
    }

    pub fn h_min(&self) -> f64 {
        self.h.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn multi_index(&self, p: usize) -> Vec<usize> {
        let mut rem = p;
        self.strides
            .iter()
            .map(|s| {
                let i = rem / s;
                rem %= s;
                i
            })
            .collect()
    }

    pub fn index_of(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn coord(&self, p: usize, axis: usize) -> f64 {
        let i = (p / self.strides[axis]) % self.m[axis];
        axis_coord(self.shape, self.m[axis], self.h[axis], i)
    }

    pub fn coords(&self, p: usize) -> Vec<f64> {
        (0..self.n).map(|a| self.coord(p, a)).collect()
    }

    /// Centre of the analytic domain.
    pub fn center(&self) -> Vec<f64> {
        match self.shape {
            ShapeTag::Ball => vec![0.0; self.n],
            ShapeTag::Box => self.extent.iter().map(|e| 0.5 * e).collect(),
        }
    }

    /// Analytic distance to ∂Ω (zero outside Ω).
    pub fn analytic_distance(&self, x: &[f64]) -> f64 {
        match self.shape {
            ShapeTag::Ball => (self.radius - x.iter().map(|v| v * v).sum::<f64>().sqrt()).max(0.0),
            ShapeTag::Box => (0..self.n)
                .map(|a| (x[a] - self.origin[a]).min(self.origin[a] + self.extent[a] - x[a]))
                .fold(f64::INFINITY, f64::min)
                .max(0.0),
        }
    }

    /// |Ω| as counted by the midpoint rule.
    pub fn measure(&self) -> f64 {
        self.masked.len() as f64 * self.cell_volume
    }
}

/// A grid function. Values vanish on every node outside the mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Arc<DomainGrid>,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: &Arc<DomainGrid>) -> Self {
        Self {
            grid: Arc::clone(grid),
            values: vec![0.0; grid.len()],
        }
    }

    /// Samples `f` at interior nodes; exterior nodes are set to zero.
    pub fn from_fn<F>(grid: &Arc<DomainGrid>, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64,
    {
        let mut values = vec![0.0; grid.len()];
        let mut x = vec![0.0; grid.n];
        for &p in grid.masked() {
            for (a, xa) in x.iter_mut().enumerate() {
                *xa = grid.coord(p, a);
            }
            values[p] = f(&x);
        }
        Self {
            grid: Arc::clone(grid),
            values,
        }
    }

    pub fn from_values(grid: &Arc<DomainGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidField(format!(
                "{} values for {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(p) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidField(format!("non-finite value at node {p}")));
        }
        if let Some(p) = (0..values.len()).find(|&p| !grid.mask[p] && values[p] != 0.0) {
            return Err(Error::InvalidField(format!(
                "non-zero value outside the domain at node {p}"
            )));
        }
        Ok(Self {
            grid: Arc::clone(grid),
            values,
        })
    }

    /// Builds a field from per-node values, zeroing the exterior.
    pub(crate) fn masked_from(grid: &Arc<DomainGrid>, mut values: Vec<f64>) -> Self {
        for (v, &m) in values.iter_mut().zip(&grid.mask) {
            if !m {
                *v = 0.0;
            }
        }
        Self {
            grid: Arc::clone(grid),
            values,
        }
    }

    pub fn grid(&self) -> &Arc<DomainGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn same_grid(&self, other: &Field) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    pub fn scaled(&self, s: f64) -> Field {
        self.map(|v| s * v)
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Field {
        let values = self
            .values
            .iter()
            .zip(&self.grid.mask)
            .map(|(v, &m)| if m { f(*v) } else { 0.0 })
            .collect();
        Field {
            grid: Arc::clone(&self.grid),
            values,
        }
    }

    /// `self + s·other`.
    pub fn add_scaled(&self, s: f64, other: &Field) -> Result<Field> {
        if !self.same_grid(other) {
            return Err(Error::GridMismatch);
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + s * b)
            .collect();
        Ok(Field {
            grid: Arc::clone(&self.grid),
            values,
        })
    }

    pub fn positive_part(&self) -> Field {
        self.map(|v| v.max(0.0))
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    /// Smallest value over interior nodes.
    pub fn min_masked(&self) -> f64 {
        self.grid
            .masked()
            .iter()
            .map(|&p| self.values[p])
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Applies an axis permutation and reflection: node `idx` of the result
    /// takes the value at `idx'` where `idx'[a] = idx[perm[a]]`, mirrored on
    /// axes with `flip[a]`. Requires equal point counts on permuted axes.
    pub fn transformed(&self, perm: &[usize], flip: &[bool]) -> Result<Field> {
        let g = &self.grid;
        if perm.len() != g.n || flip.len() != g.n || (0..g.n).any(|a| g.m[perm[a]] != g.m[a]) {
            return Err(Error::InvalidField("incompatible symmetry".into()));
        }
        let mut values = vec![0.0; g.len()];
        let mut src = vec![0usize; g.n];
        for (p, v) in values.iter_mut().enumerate() {
            let idx = g.multi_index(p);
            for a in 0..g.n {
                let i = idx[perm[a]];
                src[a] = if flip[a] { g.m[a] - 1 - i } else { i };
            }
            *v = self.values[g.index_of(&src)];
        }
        Field::from_values(g, values)
    }

    /// CSV dump: one header line, then `i,j,k,x,y,z,value` rows in
    /// lexicographic node order (generic index/coordinate names for n ≠ 3).
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let g = &self.grid;
        let (inames, xnames): (Vec<String>, Vec<String>) = if g.n == 3 {
            (
                ["i", "j", "k"].iter().map(|s| s.to_string()).collect(),
                ["x", "y", "z"].iter().map(|s| s.to_string()).collect(),
            )
        } else {
            (
                (0..g.n).map(|a| format!("i{a}")).collect(),
                (0..g.n).map(|a| format!("x{a}")).collect(),
            )
        };
        writeln!(out, "{},{},value", inames.join(","), xnames.join(","))?;
        for p in 0..g.len() {
            let idx = g.multi_index(p);
            let mut row = String::new();
            for i in &idx {
                row.push_str(&format!("{i},"));
            }
            for a in 0..g.n {
                row.push_str(&format!("{},", g.coord(p, a)));
            }
            row.push_str(&format!("{}", self.values[p]));
            writeln!(out, "{row}")?;
        }
        Ok(())
    }
}

/// Discrete `∫|∇u|²`: forward differences over every edge of the box, with
/// exterior values pinned at zero.
pub fn h1_seminorm_sq(u: &Field) -> f64 {
    let g = u.grid();
    let v = u.values();
    let inv_h2: Vec<f64> = g.h.iter().map(|h| 1.0 / (h * h)).collect();
    let s = par::sum_by(g.len(), |p| {
        let mut acc = 0.0;
        for a in 0..g.n {
            let st = g.strides()[a];
            if (p / st) % g.m[a] + 1 < g.m[a] {
                let d = v[p + st] - v[p];
                acc += d * d * inv_h2[a];
            }
        }
        acc
    });
    s * g.cell_volume()
}

/// Discrete `∫∇u·∇w`, the bilinear form polarising [`h1_seminorm_sq`].
pub fn grad_inner(u: &Field, w: &Field) -> Result<f64> {
    if !u.same_grid(w) {
        return Err(Error::GridMismatch);
    }
    let g = u.grid();
    let (a_v, b_v) = (u.values(), w.values());
    let inv_h2: Vec<f64> = g.h.iter().map(|h| 1.0 / (h * h)).collect();
    let s = par::sum_by(g.len(), |p| {
        let mut acc = 0.0;
        for a in 0..g.n {
            let st = g.strides()[a];
            if (p / st) % g.m[a] + 1 < g.m[a] {
                acc += (a_v[p + st] - a_v[p]) * (b_v[p + st] - b_v[p]) * inv_h2[a];
            }
        }
        acc
    });
    Ok(s * g.cell_volume())
}

/// `Σ |u|^p hⁿ` over interior nodes.
pub fn lp_integral(u: &Field, p: f64) -> f64 {
    let g = u.grid();
    let v = u.values();
    let masked = g.masked();
    par::sum_by(masked.len(), |k| pow_abs(v[masked[k]], p)) * g.cell_volume()
}

/// `Σ u·w hⁿ`.
pub fn l2_inner(u: &Field, w: &Field) -> Result<f64> {
    if !u.same_grid(w) {
        return Err(Error::GridMismatch);
    }
    let masked = u.grid().masked();
    let (a, b) = (u.values(), w.values());
    Ok(par::sum_by(masked.len(), |k| a[masked[k]] * b[masked[k]]) * u.grid().cell_volume())
}

/// `|x|^p` as `exp(p ln|x|)`, zero at the origin.
#[inline]
pub fn pow_abs(x: f64, p: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        (p * x.abs().ln()).exp()
    }
}

/// The matched 2n+1 point stencil: `(-Δ_h u)(p) = Σ_a (2u_p − u_{p+e_a} − u_{p−e_a})/h_a²`
/// on interior nodes, zero outside.
pub fn neg_laplacian(u: &Field) -> Field {
    let g = u.grid();
    let mut out = vec![0.0; g.len()];
    apply_neg_laplacian(g, u.values(), &mut out);
    Field::masked_from(g, out)
}

fn apply_neg_laplacian(g: &DomainGrid, v: &[f64], out: &mut [f64]) {
    let inv_h2: Vec<f64> = g.h.iter().map(|h| 1.0 / (h * h)).collect();
    par::fill(out, |p| {
        if !g.mask[p] {
            return 0.0;
        }
        let mut acc = 0.0;
        for a in 0..g.n {
            let st = g.strides()[a];
            acc += (2.0 * v[p] - v[p + st] - v[p - st]) * inv_h2[a];
        }
        acc
    });
}

/// Solves `-Δ_h x = b` on the interior nodes by conjugate gradients.
/// Iterates until the residual drops below `rel_tol·‖b‖`.
pub fn poisson_solve(b: &Field, rel_tol: f64) -> Field {
    let g = b.grid();
    let masked = g.masked();
    let dot = |x: &[f64], y: &[f64]| par::sum_by(masked.len(), |k| x[masked[k]] * y[masked[k]]);

    let mut x = vec![0.0; g.len()];
    let mut r: Vec<f64> = b.values().to_vec();
    for (v, &m) in r.iter_mut().zip(&g.mask) {
        if !m {
            *v = 0.0;
        }
    }
    let b_norm = dot(&r, &r).sqrt();
    if b_norm == 0.0 {
        return Field::zeros(g);
    }
    let mut d = r.clone();
    let mut ad = vec![0.0; g.len()];
    let mut rr = dot(&r, &r);
    let max_iter = 20 * masked.len().max(10);
    for _ in 0..max_iter {
        if rr.sqrt() <= rel_tol * b_norm {
            break;
        }
        apply_neg_laplacian(g, &d, &mut ad);
        let alpha = rr / dot(&d, &ad);
        for &p in masked {
            x[p] += alpha * d[p];
            r[p] -= alpha * ad[p];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for &p in masked {
            d[p] = r[p] + beta * d[p];
        }
    }
    Field::masked_from(g, x)
}

/// Principal Dirichlet eigenpair of `-Δ_h` by inverse iteration, normalised
/// to unit H¹₀ seminorm with positive values.
pub fn principal_mode(grid: &Arc<DomainGrid>) -> (f64, Field) {
    let mut v = Field::masked_from(grid, grid.delta.clone());
    let mut eig = 0.0;
    for _ in 0..200 {
        let w = poisson_solve(&v, 1e-12);
        let norm = h1_seminorm_sq(&w).sqrt();
        let next = w.scaled(1.0 / norm);
        let rq = h1_seminorm_sq(&next) / lp_integral(&next, 2.0);
        let done = (rq - eig).abs() <= 1e-14 * rq;
        eig = rq;
        v = next;
        if done {
            break;
        }
    }
    (eig, v)
}

/// Sum of up to three compactly supported `(1 − s²)³` bumps with random
/// centres, radii and amplitudes; every bump stays inside Ω. Amplitudes are
/// positive unless `signed`.
pub fn random_bump_field<R: Rng>(grid: &Arc<DomainGrid>, rng: &mut R, signed: bool) -> Field {
    let masked = grid.masked();
    let hmax = grid.h_max();
    let deep: Vec<usize> = masked
        .iter()
        .copied()
        .filter(|&p| grid.delta[p] >= 3.0 * hmax)
        .collect();
    let pool = if deep.is_empty() { masked.to_vec() } else { deep };
    let count = rng.gen_range(1..=3);
    let mut bumps = Vec::with_capacity(count);
    for _ in 0..count {
        let c = pool[rng.gen_range(0..pool.len())];
        let center = grid.coords(c);
        let rmax = grid.delta[c].max(2.0 * hmax);
        let r = rng.gen_range((2.0 * hmax).min(rmax)..=rmax);
        let mut amp = rng.gen_range(0.5..1.5);
        if signed && rng.gen_bool(0.5) {
            amp = -amp;
        }
        bumps.push((center, r, amp));
    }
    Field::from_fn(grid, |x| {
        bumps
            .iter()
            .map(|(c, r, amp)| {
                let s2 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (r * r);
                if s2 < 1.0 {
                    amp * (1.0 - s2).powi(3)
                } else {
                    0.0
                }
            })
            .sum()
    })
}

/// Independent uniform values in `[lo, hi)` at every interior node.
pub fn random_field<R: Rng>(grid: &Arc<DomainGrid>, rng: &mut R, lo: f64, hi: f64) -> Field {
    let mut values = vec![0.0; grid.len()];
    for &p in grid.masked() {
        values[p] = rng.gen_range(lo..hi);
    }
    Field::masked_from(grid, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn cube(m: usize) -> Arc<DomainGrid> {
        build_grid(&GridSpec::cube(ShapeTag::Box, 3, 1.0, m)).unwrap()
    }

    #[test]
    fn unit_cube_counts_and_spacing() {
        let g = cube(9);
        assert_eq!(g.masked().len(), 343);
        assert!(g.h.iter().all(|h| (*h - 0.125).abs() < 1e-15));
    }

    #[test]
    fn ball_delta_at_origin() {
        let g = build_grid(&GridSpec::cube(ShapeTag::Ball, 3, 2.0, 9)).unwrap();
        let c = g.index_of(&[4, 4, 4]);
        assert_eq!(g.coords(c), vec![0.0, 0.0, 0.0]);
        assert_eq!(g.delta[c], 1.0);
        assert!(g.mask[c]);
    }

    #[test]
    fn rejects_bad_specs() {
        let two = GridSpec {
            shape: ShapeTag::Box,
            extent: vec![1.0, 1.0],
            m: vec![9, 9],
        };
        assert!(matches!(build_grid(&two), Err(Error::InvalidGrid(_))));
        let neg = GridSpec {
            shape: ShapeTag::Box,
            extent: vec![1.0, -1.0, 1.0],
            m: vec![9, 9, 9],
        };
        assert!(build_grid(&neg).is_err());
        assert!(build_grid(&GridSpec::cube(ShapeTag::Box, 3, 1.0, 4)).is_err());
    }

    #[test]
    fn mask_and_delta_invariants() {
        for shape in [ShapeTag::Ball, ShapeTag::Box] {
            let g = build_grid(&GridSpec {
                shape,
                extent: vec![2.0, 2.0, 1.5],
                m: vec![13, 11, 9],
            })
            .unwrap();
            for p in 0..g.len() {
                let idx = g.multi_index(p);
                let outer = idx.iter().zip(&g.m).any(|(i, m)| *i == 0 || *i == m - 1);
                if outer {
                    assert!(!g.mask[p]);
                }
                assert!(g.delta[p] >= 0.0);
                if !g.mask[p] {
                    assert_eq!(g.delta[p], 0.0);
                } else {
                    let x = g.coords(p);
                    assert!((g.delta[p] - g.analytic_distance(&x)).abs() <= 0.5 * g.h_min());
                }
            }
        }
    }

    #[test]
    fn seminorm_basics() {
        let g = cube(9);
        let z = Field::zeros(&g);
        assert_eq!(h1_seminorm_sq(&z), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_field(&g, &mut rng, -1.0, 1.0);
        let a = h1_seminorm_sq(&u);
        let b = h1_seminorm_sq(&u.scaled(2.0));
        assert!((b - 4.0 * a).abs() <= 1e-13 * b);
        assert!((grad_inner(&u, &u).unwrap() - a).abs() <= 1e-13 * a);
        assert_eq!(grad_inner(&u, &z).unwrap(), 0.0);
    }

    #[test]
    fn sine_mode_seminorm() {
        // ∫|∇(sin πx sin πy sin πz)|² over the unit cube = 3π²/8.
        let g = cube(65);
        let u = Field::from_fn(&g, |x| x.iter().map(|v| (PI * v).sin()).product());
        let val = h1_seminorm_sq(&u);
        let exact = 3.0 * PI * PI / 8.0;
        assert!((val - exact).abs() / exact < 0.01, "{val} vs {exact}");
    }

    #[test]
    fn constant_field_integral() {
        let g = cube(17);
        let one = Field::from_fn(&g, |_| 1.0);
        let v = lp_integral(&one, 2.0);
        assert!((v - 1.0).abs() < 3.0 * g.h_max(), "{v}");
        let u = one.scaled(3.0);
        let r = lp_integral(&u, 0.7) / (3f64.powf(0.7) * lp_integral(&one, 0.7));
        assert!((r - 1.0).abs() < 1e-13);
        assert_eq!(lp_integral(&Field::zeros(&g), 2.0), 0.0);
    }

    #[test]
    fn polarization_and_symmetry() {
        let g = cube(11);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let u = random_field(&g, &mut rng, -1.0, 1.0);
            let w = random_field(&g, &mut rng, -1.0, 1.0);
            let uw = grad_inner(&u, &w).unwrap();
            assert_eq!(uw, grad_inner(&w, &u).unwrap());
            let plus = h1_seminorm_sq(&u.add_scaled(1.0, &w).unwrap());
            let minus = h1_seminorm_sq(&u.add_scaled(-1.0, &w).unwrap());
            let pol = (plus - minus) / 4.0;
            assert!((uw - pol).abs() <= 1e-12 * (plus + minus), "{uw} {pol}");
        }
    }

    #[test]
    fn summation_by_parts_is_exact() {
        let g = build_grid(&GridSpec::cube(ShapeTag::Ball, 3, 2.0, 13)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = random_field(&g, &mut rng, -1.0, 1.0);
        let w = random_field(&g, &mut rng, -1.0, 1.0);
        let lhs = l2_inner(&neg_laplacian(&u), &w).unwrap();
        let rhs = grad_inner(&u, &w).unwrap();
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn laplacian_of_sine_mode() {
        let mut prev = f64::INFINITY;
        for m in [17, 33] {
            let g = cube(m);
            let u = Field::from_fn(&g, |x| x.iter().map(|v| (PI * v).sin()).product());
            let lap = neg_laplacian(&u);
            let err = g
                .masked()
                .iter()
                .map(|&p| (lap.values()[p] - 3.0 * PI * PI * u.values()[p]).abs())
                .fold(0.0, f64::max);
            assert!(err < prev / 3.5, "error must shrink like h²: {err} vs {prev}");
            prev = err;
        }
    }

    #[test]
    fn poisson_roundtrip() {
        let g = build_grid(&GridSpec::cube(ShapeTag::Ball, 3, 2.0, 15)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b = random_field(&g, &mut rng, 0.0, 1.0);
        let x = poisson_solve(&b, 1e-12);
        let back = neg_laplacian(&x);
        let err = back.add_scaled(-1.0, &b).unwrap().max_abs();
        assert!(err < 1e-9 * b.max_abs(), "{err}");
    }

    #[test]
    fn principal_eigenvalue_of_cube() {
        let g = cube(17);
        let (eig, v) = principal_mode(&g);
        let h = 1.0 / 16.0;
        let discrete = 3.0 * (2.0 / h * (PI * h / 2.0).sin()).powi(2);
        assert!((eig - discrete).abs() < 1e-8 * discrete, "{eig} {discrete}");
        assert!(v.min_masked() > 0.0);
    }

    #[test]
    fn discrete_poincare_constant_is_refinement_stable() {
        let mut ratios = Vec::new();
        for m in [9, 17, 33] {
            let g = cube(m);
            let mut rng = ChaCha8Rng::seed_from_u64(m as u64);
            let mut worst: f64 = 0.0;
            for _ in 0..5 {
                let u = random_bump_field(&g, &mut rng, true);
                worst = worst.max(lp_integral(&u, 2.0) / h1_seminorm_sq(&u));
            }
            ratios.push(worst);
        }
        let c = 1.05 / (3.0 * PI * PI);
        assert!(ratios.iter().all(|r| *r <= c), "{ratios:?}");
    }

    #[test]
    fn csv_layout() {
        let g = cube(5);
        let u = Field::from_fn(&g, |x| x[0]);
        let mut buf = Vec::new();
        u.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("i,j,k,x,y,z,value"));
        assert_eq!(text.lines().count(), 1 + 125);
        let row = text.lines().nth(1 + g.index_of(&[1, 2, 3])).unwrap();
        assert_eq!(row, "1,2,3,0.25,0.5,0.75,0.25");
    }

    #[test]
    fn symmetry_transform_roundtrip() {
        let g = cube(7);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random_field(&g, &mut rng, 0.0, 1.0);
        let t = u.transformed(&[2, 0, 1], &[true, false, true]).unwrap();
        assert!((h1_seminorm_sq(&t) - h1_seminorm_sq(&u)).abs() < 1e-12 * h1_seminorm_sq(&u));
        let flip = u.transformed(&[0, 1, 2], &[true, false, false]).unwrap();
        let back = flip.transformed(&[0, 1, 2], &[true, false, false]).unwrap();
        assert_eq!(back, u);
    }

    #[test]
    fn ball_mask_is_symmetric() {
        for m in 5..=33 {
            let g = build_grid(&GridSpec::cube(ShapeTag::Ball, 3, 2.0, m)).unwrap();
            for p in 0..g.len() {
                let idx = g.multi_index(p);
                let mirrored: Vec<usize> = idx.iter().map(|i| m - 1 - i).collect();
                let swapped = [idx[1], idx[2], idx[0]];
                assert_eq!(g.mask[p], g.mask[g.index_of(&mirrored)], "m={m} {idx:?}");
                assert_eq!(g.mask[p], g.mask[g.index_of(&swapped)], "m={m} {idx:?}");
                assert_eq!(g.coord(p, 0), -g.coord(g.index_of(&mirrored), 0));
            }
        }
    }
}
