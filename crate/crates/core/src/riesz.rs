//! Riesz-kernel potential `Φ[u](x) = Σ_y w(x−y)|u(y)|^{2*_μ}hⁿ` and the
//! Choquard double integral `B(u) = Σ_x Φ[u](x)|u(x)|^{2*_μ}hⁿ`.
//!
//! Two evaluation paths share one kernel table: a direct O(N²) sum and a
//! zero-padded FFT convolution. Both include the regularised self term.

use std::sync::Arc;

use gauss_quad::legendre::GaussLegendre;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{smooth_size, FftNd};
use crate::grid::{lp_integral, pow_abs, DomainGrid, Field};
use crate::par;

/// Problem exponents with the derived critical exponents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exponents {
    pub n: usize,
    pub mu: f64,
    pub q: f64,
    /// `2*_μ = (2n − μ)/(n − 2)`.
    pub two_star_mu: f64,
    /// `2* = 2n/(n − 2)`.
    pub two_star: f64,
    /// `2·2*_μ`, the homogeneity degree of `B`.
    pub p_growth: f64,
}

pub fn make_exponents(n: usize, mu: f64, q: f64) -> Result<Exponents> {
    if n <= 2 {
        return Err(Error::InvalidParameters(format!("n = {n} violates n > 2")));
    }
    if !(mu > 0.0 && mu < n as f64) {
        return Err(Error::InvalidParameters(format!("mu = {mu} violates 0 < mu < n = {n}")));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidParameters(format!("q = {q} violates 0 < q < 1")));
    }
    let nf = n as f64;
    let two_star_mu = (2.0 * nf - mu) / (nf - 2.0);
    Ok(Exponents {
        n,
        mu,
        q,
        two_star_mu,
        two_star: 2.0 * nf / (nf - 2.0),
        p_growth: 2.0 * two_star_mu,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Convolution {
    Direct,
    #[default]
    Fast,
    /// Evaluate both paths and fail if they disagree beyond `1e-10`.
    Both,
}

impl std::str::FromStr for Convolution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "direct" => Ok(Convolution::Direct),
            "fast" => Ok(Convolution::Fast),
            "both" => Ok(Convolution::Both),
            other => Err(Error::InvalidParameters(format!("unknown convolution `{other}`"))),
        }
    }
}

/// Relative agreement demanded of the two paths in [`Convolution::Both`].
pub const CROSS_CHECK_TOL: f64 = 1e-10;

/// `|z|^{-μ}` tabulated on grid offsets, the cell-averaged self weight, and
/// the FFT of the zero-padded kernel.
pub struct KernelTable {
    grid: Arc<DomainGrid>,
    mu: f64,
    self_weight: f64,
    /// Indexed by `Σ_a |d_a|·stride_a` (the kernel is even in every axis).
    weights: Vec<f64>,
    fft: FftNd,
    spectrum: Vec<Complex64>,
    pad_index: Vec<usize>,
    mode: Convolution,
}

impl std::fmt::Debug for KernelTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KernelTable")
            .field("mu", &self.mu)
            .field("self_weight", &self.self_weight)
            .field("padded", &self.fft.dims())
            .field("mode", &self.mode)
            .finish()
    }
}

pub fn kernel_table(grid: &Arc<DomainGrid>, mu: f64) -> Result<Arc<KernelTable>> {
    KernelTable::new(grid, mu).map(Arc::new)
}

/// Gauss points per axis for the self-cell integral.
const SELF_CELL_POINTS: usize = 32;

impl KernelTable {
    pub fn new(grid: &Arc<DomainGrid>, mu: f64) -> Result<Self> {
        let n = grid.n;
        if !(mu > 0.0 && mu < n as f64) {
            return Err(Error::InvalidParameters(format!("mu = {mu} violates 0 < mu < n = {n}")));
        }
        let self_weight = cell_average(&grid.h, mu, SELF_CELL_POINTS);

        let strides = grid.strides();
        let mut weights = vec![0.0; grid.len()];
        for (p, w) in weights.iter_mut().enumerate() {
            let r2: f64 = (0..n)
                .map(|a| {
                    let d = ((p / strides[a]) % grid.m[a]) as f64 * grid.h[a];
                    d * d
                })
                .sum();
            *w = if p == 0 { self_weight } else { r2.powf(-0.5 * mu) };
        }

        let dims: Vec<usize> = grid.m.iter().map(|&m| smooth_size(2 * m - 1)).collect();
        let fft = FftNd::new(&dims);
        let mut pstrides = vec![1usize; n];
        for a in (0..n - 1).rev() {
            pstrides[a] = pstrides[a + 1] * dims[a + 1];
        }
        let pad_index = (0..grid.len())
            .map(|p| (0..n).map(|a| ((p / strides[a]) % grid.m[a]) * pstrides[a]).sum())
            .collect();

        let mut spectrum = vec![Complex64::default(); fft.len()];
        for (k, s) in spectrum.iter_mut().enumerate() {
            let mut table = 0usize;
            let mut inside = true;
            for a in 0..n {
                let i = (k / pstrides[a]) % dims[a];
                let d = if i < grid.m[a] {
                    i
                } else if i + grid.m[a] > dims[a] {
                    dims[a] - i
                } else {
                    inside = false;
                    break;
                };
                table += d * strides[a];
            }
            if inside {
                *s = Complex64::new(weights[table], 0.0);
            }
        }
        fft.forward(&mut spectrum);

        Ok(Self {
            grid: Arc::clone(grid),
            mu,
            self_weight,
            weights,
            fft,
            spectrum,
            pad_index,
            mode: Convolution::Fast,
        })
    }

    /// Path used by [`riesz_potential`].
    pub fn with_mode(mut self, mode: Convolution) -> Self {
        self.mode = mode;
        self
    }

    pub fn mode(&self) -> Convolution {
        self.mode
    }

    pub fn grid(&self) -> &Arc<DomainGrid> {
        &self.grid
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// `(1/hⁿ)∫_cell |z|^{-μ} dz`.
    pub fn self_weight(&self) -> f64 {
        self.self_weight
    }

    /// Kernel value at the integer offset `d` (in nodes).
    pub fn weight(&self, d: &[i64]) -> f64 {
        let idx: usize = d
            .iter()
            .zip(self.grid.strides())
            .map(|(v, s)| v.unsigned_abs() as usize * s)
            .sum();
        self.weights[idx]
    }

    fn check(&self, u: &Field) -> Result<()> {
        if Arc::ptr_eq(u.grid(), &self.grid) || **u.grid() == *self.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

/// Cell average of `|z|^{-μ}` over `Π[−h_a/2, h_a/2]`. Each orthant is split
/// into n pyramids by the dominant scaled coordinate; in pyramid `k`
/// `z = s·(a_1 t_1, …, a_k, …, a_n t_n)` factors the integral into
/// `V/(n−μ) · ∫_{[0,1]^{n−1}} (a_k² + Σ a_j² t_j²)^{-μ/2} dt`, whose integrand is smooth.
pub fn cell_average(h: &[f64], mu: f64, points: usize) -> f64 {
    let n = h.len();
    let half: Vec<f64> = h.iter().map(|v| 0.5 * v).collect();
    let orthant_volume: f64 = half.iter().product();
    let rule = GaussLegendre::new(points.try_into().expect("points > 0"));
    let nodes: Vec<(f64, f64)> = rule
        .as_node_weight_pairs()
        .iter()
        .map(|(x, w)| (0.5 * (x + 1.0), 0.5 * w))
        .collect();
    let dims = n - 1;
    let total_points = points.pow(dims as u32);
    let mut sum = 0.0;
    for k in 0..n {
        let others: Vec<f64> = (0..n).filter(|&j| j != k).map(|j| half[j]).collect();
        let mut acc = 0.0;
        for flat in 0..total_points {
            let mut rem = flat;
            let mut r2 = half[k] * half[k];
            let mut wt = 1.0;
            for a in &others {
                let (t, w) = nodes[rem % points];
                rem /= points;
                r2 += a * a * t * t;
                wt *= w;
            }
            acc += wt * r2.powf(-0.5 * mu);
        }
        sum += acc;
    }
    let orthants = 2f64.powi(n as i32);
    orthants * orthant_volume / (n as f64 - mu) * sum / h.iter().product::<f64>()
}

fn density(u: &Field, exps: &Exponents) -> Vec<f64> {
    let vol = u.grid().cell_volume();
    let mask = &u.grid().mask;
    u.values()
        .iter()
        .zip(mask)
        .map(|(v, &m)| if m { pow_abs(*v, exps.two_star_mu) * vol } else { 0.0 })
        .collect()
}

/// Riesz potential along the table's path (fast unless set otherwise).
pub fn riesz_potential(u: &Field, exps: &Exponents, kt: &KernelTable) -> Result<Field> {
    riesz_potential_with(u, exps, kt, kt.mode)
}

pub fn riesz_potential_with(
    u: &Field,
    exps: &Exponents,
    kt: &KernelTable,
    mode: Convolution,
) -> Result<Field> {
    kt.check(u)?;
    let rho = density(u, exps);
    match mode {
        Convolution::Fast => Ok(potential_fast(&rho, kt)),
        Convolution::Direct => Ok(potential_direct(&rho, kt)),
        Convolution::Both => {
            let fast = potential_fast(&rho, kt);
            let direct = potential_direct(&rho, kt);
            let rel = relative_difference(&direct, &fast);
            if rel > CROSS_CHECK_TOL {
                return Err(Error::ConvolutionMismatch(rel));
            }
            Ok(fast)
        }
    }
}

/// `max|a − b| / max|a|` (zero when both vanish).
pub fn relative_difference(a: &Field, b: &Field) -> f64 {
    let scale = a.max_abs();
    let diff = a
        .values()
        .iter()
        .zip(b.values())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn potential_fast(rho: &[f64], kt: &KernelTable) -> Field {
    let grid = &kt.grid;
    let mut buf = vec![Complex64::default(); kt.fft.len()];
    let mut any = false;
    for &p in grid.masked() {
        if rho[p] != 0.0 {
            buf[kt.pad_index[p]] = Complex64::new(rho[p], 0.0);
            any = true;
        }
    }
    if !any {
        return Field::zeros(grid);
    }
    kt.fft.forward(&mut buf);
    for (b, s) in buf.iter_mut().zip(&kt.spectrum) {
        *b *= s;
    }
    kt.fft.inverse(&mut buf);
    let scale = 1.0 / kt.fft.len() as f64;
    let mut out = vec![0.0; grid.len()];
    for &p in grid.masked() {
        // Roundoff can leave tiny negatives far from the support.
        out[p] = (buf[kt.pad_index[p]].re * scale).max(0.0);
    }
    Field::masked_from(grid, out)
}

fn potential_direct(rho: &[f64], kt: &KernelTable) -> Field {
    let grid = &kt.grid;
    let n = grid.n;
    let support: Vec<usize> = grid.masked().iter().copied().filter(|&p| rho[p] != 0.0).collect();
    let support_idx: Vec<usize> = support.iter().flat_map(|&p| grid.multi_index(p)).collect();
    let strides = grid.strides();
    let mut out = vec![0.0; grid.len()];
    par::fill(&mut out, |p| {
        if !grid.mask[p] || support.is_empty() {
            return 0.0;
        }
        let x = grid.multi_index(p);
        let mut acc = 0.0;
        for (k, &q) in support.iter().enumerate() {
            let y = &support_idx[k * n..(k + 1) * n];
            let mut idx = 0;
            for a in 0..n {
                idx += x[a].abs_diff(y[a]) * strides[a];
            }
            acc += kt.weights[idx] * rho[q];
        }
        acc
    });
    Field::masked_from(grid, out)
}

/// `B(u)` on the fast path.
pub fn choquard_energy(u: &Field, exps: &Exponents, kt: &KernelTable) -> Result<f64> {
    let phi = riesz_potential(u, exps, kt)?;
    Ok(choquard_energy_from(u, &phi, exps))
}

/// `B(u) = Σ Φ[u]·|u|^{2*_μ}·hⁿ` from a precomputed potential.
pub fn choquard_energy_from(u: &Field, potential: &Field, exps: &Exponents) -> f64 {
    let g = u.grid();
    let masked = g.masked();
    let (v, phi) = (u.values(), potential.values());
    par::sum_by(masked.len(), |k| {
        let p = masked[k];
        phi[p] * pow_abs(v[p], exps.two_star_mu)
    }) * g.cell_volume()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HlsCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

/// Compares `B(u)` against `Ĉ·(∫|u|^{2*})^{2·2*_μ/2*}` for an estimated
/// sharp constant `Ĉ`.
pub fn hls_check(u: &Field, exps: &Exponents, kt: &KernelTable, c_hat: f64) -> Result<HlsCheck> {
    if u.is_zero() {
        return Err(Error::ZeroField);
    }
    let lhs = choquard_energy(u, exps, kt)?;
    let rhs = c_hat * lp_integral(u, exps.two_star).powf(exps.p_growth / exps.two_star);
    Ok(HlsCheck {
        lhs,
        rhs,
        ratio: lhs / rhs,
    })
}
