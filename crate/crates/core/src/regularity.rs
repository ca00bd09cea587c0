//! Boundedness and boundary behaviour of computed solutions: `‖u‖_∞`, the
//! envelope `Lδ ≤ u ≤ Kδ`, and the sup of the Riesz potential.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{neg_laplacian, pow_abs, Field};
use crate::riesz::{riesz_potential, Exponents, KernelTable};

pub const ENVELOPE_BANDS: usize = 10;

pub fn linf_bound(u: &Field) -> f64 {
    u.max_abs()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub delta_lo: f64,
    pub delta_hi: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    /// `min u/δ`.
    #[serde(rename = "L")]
    pub l: f64,
    /// `max u/δ`.
    #[serde(rename = "K")]
    pub k: f64,
    /// Nodes with `δ` below this were left out.
    pub excluded_below: f64,
    pub band_stats: Vec<Band>,
}

/// `u/δ` over the nodes at distance at least `h` from the boundary, overall
/// and per decile of `δ`.
pub fn boundary_envelope(u: &Field) -> Result<Envelope> {
    let grid = u.grid();
    let vals = u.values();
    let bad = grid.masked().iter().filter(|&&p| !(vals[p] > 0.0)).count();
    if bad > 0 {
        return Err(Error::NonPositiveSupport { count: bad });
    }
    let h = grid.h_max();
    let cut = h * (1.0 - 1e-12);
    let mut pts: Vec<(f64, f64)> = grid
        .masked()
        .iter()
        .filter_map(|&p| {
            let d = grid.analytic_distance(&grid.coords(p));
            (d >= cut).then(|| (d, vals[p] / d))
        })
        .collect();
    if pts.is_empty() {
        return Err(Error::InvalidGrid("no node lies at distance ≥ h from the boundary".into()));
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let ratio_range = |s: &[(f64, f64)]| {
        s.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)))
    };
    let (l, k) = ratio_range(&pts);
    let bands = ENVELOPE_BANDS.min(pts.len());
    let band_stats = (0..bands)
        .map(|b| {
            let chunk = &pts[b * pts.len() / bands..(b + 1) * pts.len() / bands];
            let (min_ratio, max_ratio) = ratio_range(chunk);
            Band {
                delta_lo: chunk[0].0,
                delta_hi: chunk[chunk.len() - 1].0,
                min_ratio,
                max_ratio,
                nodes: chunk.len(),
            }
        })
        .collect();
    Ok(Envelope {
        l,
        k,
        excluded_below: h,
        band_stats,
    })
}

/// `max Φ[u]` over the grid.
pub fn nonlocal_potential_bound(u: &Field, exps: &Exponents, kt: &KernelTable) -> Result<f64> {
    if u.is_zero() {
        return Ok(0.0);
    }
    Ok(riesz_potential(u, exps, kt)?.values().iter().cloned().fold(0.0, f64::max))
}

/// Barrier `ϱ(t) = ϱ₀(αt)` with `ϱ₀(t) = h̄(2t − t^{2−s})` on `[0, 1]`, `h̄`
/// beyond.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Barrier {
    pub h_bar: f64,
    pub s: f64,
    pub alpha: f64,
}

impl Barrier {
    pub fn value(&self, t: f64) -> f64 {
        let x = self.alpha * t;
        if x >= 1.0 {
            self.h_bar
        } else {
            self.h_bar * (2.0 * x - x.powf(2.0 - self.s))
        }
    }
}

/// Optional cross-check of the upper barrier: the minimum of
/// `−Δ_h ϱ(δ) − k₂ ϱ(δ)^{−q}` over nodes with `h ≤ δ < 1/α`. Non-negative
/// means `ϱ(δ)` is a discrete supersolution there.
pub fn supersolution_margin(template: &Field, barrier: &Barrier, k2: f64, q: f64) -> Result<f64> {
    let grid = template.grid();
    let rho = Field::from_fn(grid, |x| barrier.value(grid.analytic_distance(x)));
    let lap = neg_laplacian(&rho);
    let h = grid.h_max() * (1.0 - 1e-12);
    let margin = grid
        .masked()
        .iter()
        .filter_map(|&p| {
            let d = grid.analytic_distance(&grid.coords(p));
            (d >= h && d * barrier.alpha < 1.0).then(|| lap.values()[p] - k2 * pow_abs(rho.values()[p], -q))
        })
        .fold(f64::INFINITY, f64::min);
    if margin.is_finite() {
        Ok(margin)
    } else {
        Err(Error::InvalidParameters("no node in the barrier region h ≤ δ < 1/α".into()))
    }
}
