//! Radial profiles on a log-spaced shell grid, used to minimise the
//! continuum quotient `‖∇u‖²/B(u)^{1/2*_μ}`. By the Pólya–Szegő and Riesz
//! rearrangement inequalities the infimum over radial decreasing profiles
//! equals the infimum over all of `D^{1,2}(ℝⁿ)`.

use gauss_quad::jacobi::GaussJacobi;
use gauss_quad::legendre::GaussLegendre;
use rand::Rng;

use crate::grid::pow_abs;

/// Area of the unit sphere `S^{n−1}`.
pub fn sphere_area(n: usize) -> f64 {
    // |S^k| = 2π/(k−1)·|S^{k−2}|, |S^0| = 2, |S^1| = 2π.
    let k = n - 1;
    let mut a = if k % 2 == 0 { 2.0 } else { 2.0 * std::f64::consts::PI };
    let mut j = if k % 2 == 0 { 2 } else { 3 };
    while j <= k {
        a *= 2.0 * std::f64::consts::PI / (j as f64 - 1.0);
        j += 2;
    }
    a
}

/// Mean of `|r·e − s·ω|^{−μ}` over `ω ∈ S^{n−1}`.
pub fn shell_kernel(n: usize, mu: f64, r: f64, s: f64, rule: Option<&[(f64, f64)]>) -> f64 {
    if n == 3 {
        if (mu - 2.0).abs() < 1e-12 {
            return ((r + s) / (r - s).abs()).ln() / (2.0 * r * s);
        }
        let e = 2.0 - mu;
        return ((r + s).powf(e) - (r - s).abs().powf(e)) / (2.0 * e * r * s);
    }
    // (|S^{n−2}|/|S^{n−1}|)∫_{−1}^{1}(r² + s² − 2rst)^{−μ/2}(1 − t²)^{(n−3)/2} dt
    let pairs = rule.expect("Gauss–Jacobi rule for n > 3");
    let ratio = sphere_area(n - 1) / sphere_area(n);
    ratio
        * pairs
            .iter()
            .map(|(t, w)| w * (r * r + s * s - 2.0 * r * s * t).powf(-0.5 * mu))
            .sum::<f64>()
}

/// Pair averages of the n = 3 shell kernel over log-shells `[lo, lo + h]`
/// and `[lo + c·h, lo + (c+1)·h]`.
///
/// Distant pairs use a tensor Gauss rule: a singular kernel makes the
/// midpoint value of even well-separated pairs too crude.
///
/// The kernel splits into `(r+s)^e/(2e·rs)`, smooth, and
/// `−|r−s|^e/(2e·rs)` with `e = 2 − μ` (a logarithm when `e = 0`). The latter
/// is integrated after a Duffy substitution that moves `r = s` to an edge
/// (coincident shells) or a corner (adjacent shells), with Gauss–Jacobi
/// weights carrying the exact power.
struct NearQuadrature {
    e: f64,
    legendre: Vec<(f64, f64)>,
    far: Vec<(f64, f64)>,
    /// Weight `(1−x)^e` on [−1, 1].
    jac_edge: Vec<(f64, f64)>,
    /// Weight `(1+x)^{1+e}` on [−1, 1].
    jac_radial: Vec<(f64, f64)>,
}

const LOG_TOL: f64 = 1e-9;

impl NearQuadrature {
    fn new(mu: f64) -> Self {
        let e = 2.0 - mu;
        let m = 24;
        let legendre = GaussLegendre::new(m.try_into().unwrap()).as_node_weight_pairs().to_vec();
        let (jac_edge, jac_radial) = if e.abs() < LOG_TOL {
            // Plain rules on the logarithm; it needs more nodes.
            let log_rule = GaussLegendre::new(160.try_into().unwrap()).as_node_weight_pairs().to_vec();
            (log_rule.clone(), log_rule)
        } else {
            let jac = |a: f64, b: f64| {
                GaussJacobi::new(m.try_into().unwrap(), a.try_into().unwrap(), b.try_into().unwrap())
                    .as_node_weight_pairs()
                    .to_vec()
            };
            (jac(e, 0.0), jac(0.0, 1.0 + e))
        };
        let far = GaussLegendre::new(6.try_into().unwrap()).as_node_weight_pairs().to_vec();
        Self {
            e,
            legendre,
            far,
            jac_edge,
            jac_radial,
        }
    }

    fn is_log(&self) -> bool {
        self.e.abs() < LOG_TOL
    }

    fn average(&self, lo: f64, h: f64, offset: usize) -> f64 {
        let e = self.e;
        let shift = offset as f64;
        let adjacent = offset == 1;
        let z = |c: f64| ((3.0 * (lo + h * (c + 1.0))).exp() - (3.0 * (lo + h * c)).exp()) / 3.0;
        let (zi, zj) = (z(0.0), z(shift));
        let weight = |xx: f64, yy: f64| h * h * (3.0 * (lo + h * xx)).exp() * (3.0 * (lo + h * yy)).exp() / (zi * zj);
        // |r − s| = d·scale(x, y, d) with d = |X − Y| in shell units.
        let scale = |xx: f64, yy: f64| {
            let d = (xx - yy).abs();
            let z = 0.5 * h * d;
            let sinhc = if z < 1e-8 { 1.0 } else { z.sinh() / z };
            h * (lo + 0.5 * h * (xx + yy)).exp() * sinhc
        };
        let smooth = |xx: f64, yy: f64| {
            let (r, s) = ((lo + h * xx).exp(), (lo + h * yy).exp());
            let k = if self.is_log() {
                ((r + s).ln() - scale(xx, yy).ln()) / (2.0 * r * s)
            } else {
                (r + s).powf(e) / (2.0 * e * r * s)
            };
            weight(xx, yy) * k
        };
        // Coefficient of d^e (or of ln d) in the weighted singular part.
        let singular = |xx: f64, yy: f64| {
            let (r, s) = ((lo + h * xx).exp(), (lo + h * yy).exp());
            let k = if self.is_log() {
                -1.0 / (2.0 * r * s)
            } else {
                -scale(xx, yy).powf(e) / (2.0 * e * r * s)
            };
            weight(xx, yy) * k
        };
        let unit = |x: f64| 0.5 * (x + 1.0);

        if offset >= 2 {
            let mut total = 0.0;
            for (xa, wa) in &self.far {
                for (xb, wb) in &self.far {
                    let (xx, yy) = (unit(*xa), shift + unit(*xb));
                    let (r, s) = ((lo + h * xx).exp(), (lo + h * yy).exp());
                    total += 0.25 * wa * wb * weight(xx, yy) * shell_kernel(3, 2.0 - e, r, s, None);
                }
            }
            return total;
        }

        let mut total = 0.0;
        for (xa, wa) in &self.legendre {
            for (xb, wb) in &self.legendre {
                total += 0.25 * wa * wb * smooth(unit(*xa), shift + unit(*xb));
            }
        }
        if !adjacent {
            // Both triangles X < Y and X > Y contribute equally; X = Y·w.
            for (xw, ww) in &self.jac_edge {
                for (xy, wy) in &self.jac_radial {
                    let (w, y) = (unit(*xw), unit(*xy));
                    total += 2.0
                        * if self.is_log() {
                            0.25 * ww * wy * singular(y * w, y) * y * (y * (1.0 - w)).ln()
                        } else {
                            0.5f64.powf(3.0 + 2.0 * e) * ww * wy * singular(y * w, y)
                        };
                }
            }
        } else {
            // a = 1 − X, b = Y − 1; the triangles a < b (a = b·w) and b < a.
            let w_rule = if self.is_log() { &self.jac_edge } else { &self.legendre };
            for (xw, ww) in w_rule {
                for (xb, wb) in &self.jac_radial {
                    let (w, b) = (unit(*xw), unit(*xb));
                    let pair = singular(1.0 - b * w, 1.0 + b) + singular(1.0 - b, 1.0 + b * w);
                    total += if self.is_log() {
                        0.25 * ww * wb * pair * b * (b * (1.0 + w)).ln()
                    } else {
                        0.5f64.powf(3.0 + e) * ww * wb * pair * (1.0 + w).powf(e)
                    };
                }
            }
        }
        total
    }
}

/// Shell discretisation: nodes `r_i = r_min·ρ^i`, `u` constant on the inner
/// ball and harmonic beyond the last node.
#[derive(Debug, Clone)]
pub struct RadialGrid {
    pub n: usize,
    pub mu: f64,
    pub r: Vec<f64>,
    /// Shell volumes.
    vol: Vec<f64>,
    /// `|S^{n−1}| r_{i+½}^{n−1} / (r_{i+1} − r_i)`.
    edge: Vec<f64>,
    /// Dense shell-to-shell kernel.
    kernel: Vec<f64>,
}

impl RadialGrid {
    pub fn new(n: usize, mu: f64, r_min: f64, r_max: f64, per_decade: usize) -> Self {
        let count = ((r_max / r_min).log10() * per_decade as f64).ceil() as usize + 1;
        let rho = (r_max / r_min).powf(1.0 / (count - 1) as f64);
        let r: Vec<f64> = (0..count).map(|i| r_min * rho.powi(i as i32)).collect();
        let omega = sphere_area(n);
        let nf = n as f64;
        let half = |i: isize| -> f64 {
            if i < 0 {
                0.0
            } else {
                r_min * rho.powf(i as f64 + 0.5)
            }
        };
        let vol: Vec<f64> = (0..count as isize)
            .map(|i| omega / nf * (half(i).powf(nf) - half(i - 1).powf(nf)))
            .collect();
        // The last edge carries the energy of the harmonic extension
        // u_N (r_N/r)^{n−2} to infinity, so decaying tails are not charged
        // for an artificial jump to zero.
        let edge: Vec<f64> = (0..count)
            .map(|i| {
                if i + 1 == count {
                    omega * (nf - 2.0) * r[i].powf(nf - 2.0)
                } else {
                    omega * half(i as isize).powf(nf - 1.0) / (r[i + 1] - r[i])
                }
            })
            .collect();

        let jacobi: Option<Vec<(f64, f64)>> = (n > 3).then(|| {
            let a = 0.5 * (nf - 3.0);
            GaussJacobi::new(
                200.try_into().unwrap(),
                a.try_into().unwrap(),
                a.try_into().unwrap(),
            )
            .as_node_weight_pairs().to_vec()
        });
        let rule = jacobi.as_deref();
        // Neighbouring shells see the kink (or singularity) of the kernel at
        // r = s, so those entries are averaged over the shell pair in log r.
        let ln_rho = rho.ln();
        let near = NearQuadrature::new(mu);
        let ga: Vec<(f64, f64)> = GaussLegendre::new(8.try_into().unwrap()).as_node_weight_pairs().to_vec();
        let gb: Vec<(f64, f64)> = GaussLegendre::new(9.try_into().unwrap()).as_node_weight_pairs().to_vec();
        let shell_pts = |i: usize, rule: &[(f64, f64)]| -> Vec<(f64, f64)> {
            // Points in shell i distributed by volume r^{n−1}dr; weights sum to 1.
            let lo = r[i].ln() - 0.5 * ln_rho;
            let mut pts: Vec<(f64, f64)> = rule
                .iter()
                .map(|(x, w)| {
                    let rr = (lo + 0.5 * (x + 1.0) * ln_rho).exp();
                    (rr, w * rr.powf(nf))
                })
                .collect();
            let total: f64 = pts.iter().map(|p| p.1).sum();
            for p in &mut pts {
                p.1 /= total;
            }
            pts
        };
        let mut kernel = vec![0.0; count * count];
        for i in 0..count {
            for j in i..count {
                let k = if n == 3 {
                    near.average(r[i].ln() - 0.5 * ln_rho, ln_rho, j - i)
                } else if j - i <= 1 {
                    // Staggered rules so no node pair coincides.
                    let (pi, pj) = (shell_pts(i, &ga), shell_pts(j, &gb));
                    pi.iter()
                        .flat_map(|(ri, wi)| pj.iter().map(move |(rj, wj)| (ri, wi, rj, wj)))
                        .map(|(ri, wi, rj, wj)| wi * wj * shell_kernel(n, mu, *ri, *rj, rule))
                        .sum()
                } else {
                    shell_kernel(n, mu, r[i], r[j], rule)
                };
                kernel[i * count + j] = k;
                kernel[j * count + i] = k;
            }
        }
        Self {
            n,
            mu,
            r,
            vol,
            edge,
            kernel,
        }
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn sample<F: Fn(f64) -> f64>(&self, f: F) -> Vec<f64> {
        self.r.iter().map(|&r| f(r)).collect()
    }

    pub fn gradient_sq(&self, u: &[f64]) -> f64 {
        (0..u.len())
            .map(|i| {
                let next = if i + 1 < u.len() { u[i + 1] } else { 0.0 };
                self.edge[i] * (next - u[i]).powi(2)
            })
            .sum()
    }

    fn density(&self, u: &[f64], s: f64) -> Vec<f64> {
        u.iter().zip(&self.vol).map(|(v, w)| pow_abs(*v, s) * w).collect()
    }

    /// Shell-averaged Riesz potential of `|u|^s`.
    pub fn potential(&self, u: &[f64], s: f64) -> Vec<f64> {
        let rho = self.density(u, s);
        let n = self.len();
        (0..n)
            .map(|i| {
                let row = &self.kernel[i * n..(i + 1) * n];
                row.iter().zip(&rho).map(|(k, d)| k * d).sum()
            })
            .collect()
    }

    pub fn choquard(&self, u: &[f64], s: f64) -> f64 {
        let phi = self.potential(u, s);
        self.density(u, s).iter().zip(&phi).map(|(d, p)| d * p).sum()
    }

    pub fn quotient(&self, u: &[f64], s: f64) -> f64 {
        self.gradient_sq(u) / self.choquard(u, s).powf(1.0 / s)
    }

    /// Solves `L x = b` for the tridiagonal Dirichlet-form matrix.
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let diag: Vec<f64> = (0..n)
            .map(|i| self.edge[i] + if i > 0 { self.edge[i - 1] } else { 0.0 })
            .collect();
        let off: Vec<f64> = (0..n - 1).map(|i| -self.edge[i]).collect();
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        c[0] = if n > 1 { off[0] / diag[0] } else { 0.0 };
        d[0] = b[0] / diag[0];
        for i in 1..n {
            let m = diag[i] - off[i - 1] * c[i - 1];
            if i + 1 < n {
                c[i] = off[i] / m;
            }
            d[i] = (b[i] - off[i - 1] * d[i - 1]) / m;
        }
        let mut x = vec![0.0; n];
        x[n - 1] = d[n - 1];
        for i in (0..n - 1).rev() {
            x[i] = d[i] - c[i] * x[i + 1];
        }
        x
    }

    /// Preconditioned descent of the quotient among non-negative profiles.
    pub fn minimize(&self, start: &[f64], s: f64, iters: usize) -> (f64, Vec<f64>) {
        let normalize = |u: &[f64]| -> Vec<f64> {
            let g = self.gradient_sq(u).sqrt();
            u.iter().map(|v| v / g).collect()
        };
        let clamp = |u: Vec<f64>| -> Vec<f64> { u.into_iter().map(|v| v.max(0.0)).collect() };
        let mut u = normalize(&clamp(start.to_vec()));
        let mut q = self.quotient(&u, s);
        let mut tau = 1.0;
        let mut stalls = 0;
        for _ in 0..iters {
            let phi = self.potential(&u, s);
            let b: f64 = self.density(&u, s).iter().zip(&phi).map(|(d, p)| d * p).sum();
            // ∂B/∂u_i = 2s·vol_i·Φ_i·|u_i|^{s−2}u_i; with ‖u‖ = 1 the
            // preconditioned step target is L⁻¹(vol·Φ·u^{s−1})/B.
            let rhs: Vec<f64> = (0..u.len())
                .map(|i| self.vol[i] * phi[i] * pow_abs(u[i], s - 2.0) * u[i] / b)
                .collect();
            let target = self.solve(&rhs);
            let mut accepted = false;
            for _ in 0..40 {
                let trial: Vec<f64> = u
                    .iter()
                    .zip(&target)
                    .map(|(a, t)| (1.0 - tau) * a + tau * t)
                    .collect();
                let trial = clamp(trial);
                if trial.iter().any(|v| *v > 0.0) {
                    let trial = normalize(&trial);
                    let qt = self.quotient(&trial, s);
                    if qt < q {
                        let rel = (q - qt) / q;
                        u = trial;
                        q = qt;
                        accepted = true;
                        stalls = if rel < 1e-12 { stalls + 1 } else { 0 };
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
        (q, u)
    }

    /// A random positive profile: a few Gaussian humps in log r.
    pub fn random_profile<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let lo = self.r[0].ln();
        let hi = self.r[self.len() - 1].ln();
        let humps: Vec<(f64, f64, f64)> = (0..rng.gen_range(1..=4))
            .map(|_| {
                let c = rng.gen_range(lo + 0.3 * (hi - lo)..lo + 0.7 * (hi - lo));
                let w = rng.gen_range(0.5..3.0);
                let a = rng.gen_range(0.2..1.0);
                (c, w, a)
            })
            .collect();
        self.sample(|r| {
            let x = r.ln();
            humps.iter().map(|(c, w, a)| a * (-((x - c) / w).powi(2)).exp()).sum()
        })
    }
}
