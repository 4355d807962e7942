//! Limit moment functions of the particle count near the front, their
//! finite-time counterparts, and the growth diagnostics that justify using
//! them inside convergent moment series.
//!
//! The central objects are the functions `G_k` defined recursively by
//! `G_1 = psi` and
//!
//! ```text
//! G_k(x) = sum_{i=1}^{k-1} C(k,i) int_D int_0^inf e^{-k lambda0 r}
//!          rho1(r, x, z) alpha(z) G_i(z) G_{k-i}(z) dr dz
//! ```
//!
//! where `rho1` is the expected-density kernel. The double integral is
//! evaluated by solving the density equation once per quadrature node
//! `z_j in D` (exploiting the symmetry of `rho1`) and accumulating the
//! exponentially weighted time integrals on the fly. The `(0, t0]` piece
//! uses the free kernel with a short-time potential factor, and the piece
//! beyond the stepping horizon uses the spectral asymptotic
//! `rho1 ~ e^{lambda0 r} psi(x) psi(z)`, which gives an analytic tail.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::heatkernel::{smoothed_delta, KernelError, Stepper1d};
use crate::model::{GridSpec, PotentialSpec};
use crate::numerics::{free_resolvent_segment, integrate_interval, normal_cdf};
use crate::spectral::SpectralData;

#[derive(Debug, Error)]
pub enum MomentError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("moment order must be at least 2 (got {0})")]
    OrderTooSmall(usize),
    #[error("source grid misaligned: z = {0} is not a grid point")]
    SourceMisaligned(f64),
    #[error("need at least 3 quadrature sources across the support (got {0})")]
    TooFewSources(usize),
    #[error("resolvent tail beyond r_max not negligible for k = {k}: fraction {fraction:.3e}")]
    TailNotNegligible { k: usize, fraction: f64 },
    #[error("probe at {0} lies outside the grid")]
    ProbeOutsideGrid(f64),
}

/// Stirling numbers of the second kind `S(k, j)`, built by the standard
/// recurrence `S(k, j) = j S(k-1, j) + S(k-1, j-1)`.
#[derive(Debug, Clone)]
pub struct StirlingTable {
    k_max: usize,
    rows: Vec<Vec<f64>>,
}

impl StirlingTable {
    pub fn new(k_max: usize) -> Self {
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(k_max + 1);
        rows.push(vec![1.0]); // S(0, 0) = 1
        for k in 1..=k_max {
            let prev = &rows[k - 1];
            let mut row = vec![0.0; k + 1];
            for j in 1..=k {
                let carry = if j < prev.len() { j as f64 * prev[j] } else { 0.0 };
                row[j] = carry + prev[j - 1];
            }
            rows.push(row);
        }
        Self { k_max, rows }
    }

    pub fn get(&self, k: usize, j: usize) -> f64 {
        assert!(k <= self.k_max, "Stirling table holds k <= {}", self.k_max);
        if j > k {
            0.0
        } else {
            self.rows[k][j]
        }
    }
}

/// Binomial coefficient as a float (exact for the small orders used here).
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0_f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round()
}

/// Quadrature nodes spanning the support `[-L, L]` at the configured source
/// spacing, with composite Simpson weights when the count is odd and
/// trapezoid weights otherwise.
fn source_quadrature(
    potential: &PotentialSpec,
    grid: &GridSpec,
) -> Result<(Vec<f64>, Vec<f64>), MomentError> {
    let l = potential.support_radius;
    let ss = grid.source_spacing;
    let m = (2.0 * l / ss).round() as usize;
    if m < 2 {
        return Err(MomentError::TooFewSources(m + 1));
    }
    let nodes: Vec<f64> = (0..=m).map(|i| -l + ss * i as f64).collect();
    let weights = if m % 2 == 0 {
        // odd point count: composite Simpson
        let mut w = vec![0.0; m + 1];
        for (i, wi) in w.iter_mut().enumerate() {
            *wi = if i == 0 || i == m {
                ss / 3.0
            } else if i % 2 == 1 {
                4.0 * ss / 3.0
            } else {
                2.0 * ss / 3.0
            };
        }
        w
    } else {
        let mut w = vec![ss; m + 1];
        w[0] = 0.5 * ss;
        w[m] = 0.5 * ss;
        w
    };
    Ok((nodes, weights))
}

/// Per-source exponentially weighted resolvent integrals, accumulated while
/// stepping the density equation from each source.
struct ResolventData {
    sources: Vec<f64>,
    /// quadrature weight times branching rate at each source
    weight_alpha: Vec<f64>,
    t0: f64,
    r_max: f64,
    /// `acc[k-2][j][i]` = `int_{t0}^{r_max} e^{-(k-1) lambda0 r} w_j(r, x_i) dr`
    /// on the full grid (walls included, zero there)
    acc: Vec<Vec<Vec<f64>>>,
    /// checkpoint times for the kernel-mass diagnostic
    checkpoints: Vec<f64>,
    /// `probe_w[c][j][p]` = `w_j(r_c, probe_p)`
    probe_w: Vec<Vec<Vec<f64>>>,
}

fn checkpoint_times(r_max: f64) -> Vec<f64> {
    let base = [
        0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5, 0.7, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0, 6.0, 8.0,
        10.0, 12.0,
    ];
    base.iter().copied().filter(|&r| r <= r_max).collect()
}

fn build_resolvents(
    potential: &PotentialSpec,
    grid: &GridSpec,
    lambda0: f64,
    k_top: usize,
    probe_idx: &[usize],
) -> Result<ResolventData, MomentError> {
    if k_top < 2 {
        return Err(MomentError::OrderTooSmall(k_top));
    }
    let (sources, weights) = source_quadrature(potential, grid)?;
    let h = grid.spacing;
    let n = grid.points();
    // sources must sit on grid points so G values can be read back directly
    for &z in &sources {
        let idx = ((z + grid.half_width) / h).round();
        if ((-grid.half_width + idx * h) - z).abs() > 1e-9 {
            return Err(MomentError::SourceMisaligned(z));
        }
    }
    let weight_alpha: Vec<f64> = sources
        .iter()
        .zip(&weights)
        .map(|(&z, &w)| w * potential.alpha_at_coord(z))
        .collect();

    let t0 = grid.t0();
    let dt = grid.dt;
    let r_max = grid.r_max;
    let total_steps = ((r_max - t0) / dt).round() as usize;
    let checkpoints = checkpoint_times(r_max);
    let check_steps: Vec<usize> = checkpoints
        .iter()
        .map(|&r| (((r - t0) / dt).round().max(0.0)) as usize)
        .collect();

    struct PerSource {
        acc: Vec<Vec<f64>>,
        probes: Vec<Vec<f64>>,
        worst_wall: f64,
    }

    let per_source: Vec<PerSource> = sources
        .par_iter()
        .map(|&z| {
            let initial = smoothed_delta(potential, grid, z, lambda0);
            let mut stepper = Stepper1d::new(potential, grid, lambda0, initial, t0);
            let mut acc = vec![vec![0.0_f64; n]; k_top - 1];
            let mut probes = vec![vec![0.0_f64; probe_idx.len()]; checkpoints.len()];
            let mut worst_wall = 0.0_f64;
            let mut next_check = 0usize;
            for step in 0..=total_steps {
                let r = t0 + step as f64 * dt;
                // trapezoid-in-r accumulation of e^{-(k-1) lambda0 r} w
                let endpoint = step == 0 || step == total_steps;
                let base = if endpoint { 0.5 * dt } else { dt };
                for k in 2..=k_top {
                    let coef = base * (-((k - 1) as f64) * lambda0 * r).exp();
                    if coef < 1e-22 {
                        continue;
                    }
                    let dest = &mut acc[k - 2];
                    for (i, &w) in stepper.w.iter().enumerate() {
                        dest[i + 1] += coef * w;
                    }
                }
                while next_check < check_steps.len() && check_steps[next_check] == step {
                    for (p, &gi) in probe_idx.iter().enumerate() {
                        // probe indices refer to the full grid; w is interior
                        probes[next_check][p] = if gi == 0 || gi == n - 1 {
                            0.0
                        } else {
                            stepper.w[gi - 1]
                        };
                    }
                    next_check += 1;
                }
                if step % 200 == 0 || step == total_steps {
                    let peak = stepper.w.iter().cloned().fold(0.0_f64, |m, v| m.max(v.abs()));
                    let wall = stepper.w[0].abs().max(stepper.w[n - 3].abs());
                    if peak > 0.0 {
                        worst_wall = worst_wall.max(wall / peak);
                    }
                }
                if step < total_steps {
                    stepper.step(None, None);
                }
            }
            PerSource { acc, probes, worst_wall }
        })
        .collect();

    for (ps, &z) in per_source.iter().zip(&sources) {
        if ps.worst_wall > 1e-10 {
            return Err(KernelError::BoundaryContamination {
                t: r_max,
                ratio: ps.worst_wall,
            }
            .into());
        }
        let _ = z;
    }

    let mut acc = vec![Vec::with_capacity(sources.len()); k_top - 1];
    let mut probe_w = vec![vec![Vec::new(); sources.len()]; checkpoints.len()];
    for (j, ps) in per_source.into_iter().enumerate() {
        for (k2, grid_vec) in ps.acc.into_iter().enumerate() {
            acc[k2].push(grid_vec);
        }
        for (c, row) in ps.probes.into_iter().enumerate() {
            probe_w[c][j] = row;
        }
    }

    Ok(ResolventData {
        sources,
        weight_alpha,
        t0,
        r_max,
        acc,
        checkpoints,
        probe_w,
    })
}

/// Bound-growth diagnostics for the moment series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CarlemanReport {
    /// `sup_{r, x in probes} e^{-lambda0 r} int rho1(r, x, z) alpha(z) dz`,
    /// including the `r -> 0` limit `alpha(x)`.
    pub kernel_mass_sup: f64,
    /// Growth base `A = max(2, 2a/lambda0, sup f^2)`.
    pub big_a: f64,
    /// `max over probes of f^n`, indexed by order (entry 0 is order 1).
    pub f_norms: Vec<f64>,
    /// `A^{2n-1} n!` for the same orders.
    pub bounds: Vec<f64>,
    /// `min over probes of (1 / f^k)^{1/(2k)}`: summands of the divergent
    /// series that certifies moment determinacy.
    pub series_terms: Vec<f64>,
}

/// Iterated upper bounds `G_k <= c_k psi` from the recursion, seeded with
/// `c_1 = 1` (exact since `G_1 = psi`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrudeConstants {
    pub c: Vec<f64>,
    /// `max over probes of int alpha psi^2 R_k(x, z) dz / psi(x)`.
    pub i_sup: Vec<f64>,
}

/// Output of the moment stage: `G_k` on the grid plus diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentData {
    pub k_top: usize,
    pub lambda0: f64,
    pub start: f64,
    pub spacing: f64,
    /// `g[k-1]` is `G_k` on the full grid; `g[0]` is the ground state.
    pub g: Vec<Vec<f64>>,
    /// Fraction of `G_k` contributed by the analytic tail beyond `r_max`
    /// (max over the probe points), per order starting at 2.
    pub tail_fraction: Vec<f64>,
    pub probes: Vec<f64>,
    pub carleman: CarlemanReport,
    pub crude: CrudeConstants,
}

impl MomentData {
    fn grid_at(&self, values: &[f64], x: f64) -> f64 {
        let s = (x - self.start) / self.spacing;
        let n = values.len();
        if s < 0.0 || s > (n - 1) as f64 {
            return 0.0;
        }
        let i = (s.floor() as usize).min(n - 2);
        let frac = s - i as f64;
        values[i] * (1.0 - frac) + values[i + 1] * frac
    }

    /// `G_k(x)` by linear interpolation.
    pub fn g_at(&self, k: usize, x: f64) -> f64 {
        assert!(k >= 1 && k <= self.k_top);
        self.grid_at(&self.g[k - 1], x)
    }

    /// Interior limit moment `f^k(x) = G_k(x) / psi(x)^k`.
    pub fn f_interior(&self, k: usize, x: f64) -> f64 {
        let psi = self.grid_at(&self.g[0], x);
        self.g_at(k, x) / psi.powi(k as i32)
    }
}

/// Front weight `Theta(b) = gamma C(u) (lambda0/2)^{(1-d)/4} e^{sqrt(2 lambda0) b}`
/// entering the constant-offset limit moments.
pub fn front_theta(spectral: &SpectralData, b: f64) -> f64 {
    let lambda0 = spectral.lambda0();
    let d = spectral.pair.dimension as f64;
    let mu = (2.0 * lambda0).sqrt();
    spectral.gamma * spectral.tail.c_plus * (lambda0 / 2.0).powf((1.0 - d) / 4.0) * (mu * b).exp()
}

/// Limit moment of the normalized count in a unit-radius-scale ball at
/// constant offset `b` behind the front:
/// `psi(x)^{-k} sum_j S(k,j) G_j(x) Theta^{j-k}`.
pub fn limit_front_moment(
    data: &MomentData,
    spectral: &SpectralData,
    stirling: &StirlingTable,
    k: usize,
    b: f64,
    x: f64,
) -> f64 {
    let theta = front_theta(spectral, b);
    let psi = data.g_at(1, x);
    let mut acc = 0.0;
    for j in 1..=k {
        acc += stirling.get(k, j) * data.g_at(j, x) * theta.powi(j as i32 - k as i32);
    }
    acc / psi.powi(k as i32)
}

/// Expected growth factor `Q(t) = e^{lambda0 t} int_{ball} psi` of the count
/// in the ball centered at the given coordinate.
pub fn front_q(spectral: &SpectralData, t: f64, center: f64, radius: f64) -> f64 {
    let pair = &spectral.pair;
    let mass = integrate_interval(&pair.psi, pair.start, pair.spacing, center - radius, center + radius);
    (spectral.lambda0() * t).exp() * mass
}

/// Theory prediction for `E[(n_t / m_1)^k]` at growth factor `q`:
/// `psi(x)^{-k} sum_j S(k,j) G_j(x) q^{j-k}`.
pub fn eta_moment_theory(
    data: &MomentData,
    stirling: &StirlingTable,
    k: usize,
    x: f64,
    q: f64,
) -> f64 {
    let psi = data.g_at(1, x);
    let mut acc = 0.0;
    for j in 1..=k {
        acc += stirling.get(k, j) * data.g_at(j, x) * q.powi(j as i32 - k as i32);
    }
    acc / psi.powi(k as i32)
}

/// Converts factorial moments of a count to the plain `k`-th moment:
/// `E n^k = sum_j S(k,j) m_j`.
pub fn kth_moment_count(stirling: &StirlingTable, m: &[f64], k: usize) -> f64 {
    (1..=k.min(m.len())).map(|j| stirling.get(k, j) * m[j - 1]).sum()
}

/// Computes `G_k` for `k <= k_top` together with growth diagnostics.
/// `probes` are the coordinates used for the Carleman and crude-bound sups
/// (they are snapped to grid points).
pub fn moment_stage(
    potential: &PotentialSpec,
    grid: &GridSpec,
    spectral: &SpectralData,
    k_top: usize,
    probes: &[f64],
) -> Result<MomentData, MomentError> {
    if potential.dimension != 1 {
        return Err(KernelError::UnsupportedDimension(potential.dimension).into());
    }
    let lambda0 = spectral.lambda0();
    let h = grid.spacing;
    let n = grid.points();
    let mut probe_idx = Vec::with_capacity(probes.len());
    for &p in probes {
        let idx = ((p + grid.half_width) / h).round();
        if idx < 0.0 || idx > (n - 1) as f64 {
            return Err(MomentError::ProbeOutsideGrid(p));
        }
        probe_idx.push(idx as usize);
    }
    let probe_coords: Vec<f64> = probe_idx.iter().map(|&i| -grid.half_width + h * i as f64).collect();

    let res = build_resolvents(potential, grid, lambda0, k_top, &probe_idx)?;

    // psi sampled on the PDE grid (the spectral grid may differ)
    let psi: Vec<f64> = (0..n)
        .map(|i| spectral.pair.psi_at_coord(-grid.half_width + h * i as f64))
        .collect();
    let psi_src: Vec<f64> = res.sources.iter().map(|&z| spectral.pair.psi_at_coord(z)).collect();

    let mut g: Vec<Vec<f64>> = Vec::with_capacity(k_top);
    g.push(psi.clone());
    let mut tail_fraction = Vec::with_capacity(k_top - 1);
    let src_idx: Vec<usize> = res
        .sources
        .iter()
        .map(|&z| ((z + grid.half_width) / h).round() as usize)
        .collect();

    for k in 2..=k_top {
        let decay = (k - 1) as f64 * lambda0;
        let tail_coeff = (-decay * res.r_max).exp() / decay;
        let mut gk = vec![0.0_f64; n];
        let mut tail_scalar = 0.0_f64;
        for (j, &wa) in res.weight_alpha.iter().enumerate() {
            let mut pair_sum = 0.0;
            for i in 1..=k - 1 {
                pair_sum += binomial(k, i) * g[i - 1][src_idx[j]] * g[k - i - 1][src_idx[j]];
            }
            let c_j = wa * pair_sum;
            if c_j == 0.0 {
                continue;
            }
            let trunks = &res.acc[k - 2][j];
            for i in 0..n {
                gk[i] += c_j * trunks[i];
            }
            // short-time segment: free kernel with averaged potential factor
            let z = res.sources[j];
            let v_z = potential.v_at_coord(z);
            let reach = (2.0 * 46.0 * res.t0).sqrt();
            let lo = (((z - reach + grid.half_width) / h).floor().max(0.0)) as usize;
            let hi = (((z + reach + grid.half_width) / h).ceil() as usize).min(n - 1);
            for i in lo..=hi {
                let x = -grid.half_width + h * i as f64;
                let a = k as f64 * lambda0 - 0.5 * (potential.v_at_coord(x) + v_z);
                gk[i] += c_j * free_resolvent_segment(a, (x - z).abs(), res.t0);
            }
            tail_scalar += c_j * psi_src[j];
        }
        // analytic tail beyond r_max rides on psi
        for i in 0..n {
            gk[i] += tail_scalar * tail_coeff * psi[i];
        }
        // the truncation error matters where G_k is consumed (probes and the
        // moment evaluation points); far out the stepped part is itself far
        // from its limit and the ratio would be meaninglessly pessimistic
        let mut frac = 0.0_f64;
        for &pi in &probe_idx {
            if gk[pi] > 0.0 {
                frac = frac.max(tail_scalar * tail_coeff * psi[pi] / gk[pi]);
            }
        }
        if frac > 0.1 {
            return Err(MomentError::TailNotNegligible { k, fraction: frac });
        }
        tail_fraction.push(frac);
        g.push(gk);
    }

    // kernel mass sup over checkpoint times and probes, plus the r -> 0 limit
    let mut kernel_mass_sup = probe_coords
        .iter()
        .map(|&p| potential.alpha_at_coord(p))
        .fold(0.0_f64, f64::max);
    for c in 0..res.checkpoints.len() {
        for p in 0..probe_coords.len() {
            let mut mass = 0.0;
            for (j, &wa) in res.weight_alpha.iter().enumerate() {
                mass += wa * res.probe_w[c][j][p];
            }
            kernel_mass_sup = kernel_mass_sup.max(mass);
        }
    }

    let f_at = |k: usize, i: usize| -> f64 { g[k - 1][i] / psi[i].powi(k as i32) };
    let sup_f2 = probe_idx.iter().map(|&i| f_at(2, i)).fold(0.0_f64, f64::max);
    let big_a = (2.0_f64).max(2.0 * kernel_mass_sup / lambda0).max(sup_f2);
    let mut f_norms = Vec::with_capacity(k_top);
    let mut bounds = Vec::with_capacity(k_top);
    let mut series_terms = Vec::with_capacity(k_top);
    let mut factorial = 1.0_f64;
    for kk in 1..=k_top {
        factorial *= kk as f64;
        let norm = probe_idx.iter().map(|&i| f_at(kk, i)).fold(0.0_f64, f64::max);
        f_norms.push(norm);
        bounds.push(big_a.powi(2 * kk as i32 - 1) * factorial);
        let term = probe_idx
            .iter()
            .map(|&i| (1.0 / f_at(kk, i)).powf(1.0 / (2.0 * kk as f64)))
            .fold(f64::INFINITY, f64::min);
        series_terms.push(term);
    }
    let carleman = CarlemanReport {
        kernel_mass_sup,
        big_a,
        f_norms,
        bounds,
        series_terms,
    };

    // crude bounds G_k <= c_k psi via the recursion, seeded with c_1 = 1;
    // the sup runs over the probes and the quadrature sources so the
    // induction step is justified at every point it is applied
    let mut bound_pts: Vec<usize> = probe_idx.iter().copied().chain(src_idx.iter().copied()).collect();
    bound_pts.sort_unstable();
    bound_pts.dedup();
    let mut c = vec![1.0_f64];
    let mut i_sup = Vec::new();
    for k in 2..=k_top {
        let decay = (k - 1) as f64 * lambda0;
        let tail_coeff = (-decay * res.r_max).exp() / decay;
        let mut best = 0.0_f64;
        let bound_coords: Vec<f64> = bound_pts.iter().map(|&i| -grid.half_width + h * i as f64).collect();
        for (&pi, &pc) in bound_pts.iter().zip(&bound_coords) {
            let mut jk = 0.0;
            for (j, &wa) in res.weight_alpha.iter().enumerate() {
                let mut rk = res.acc[k - 2][j][pi];
                let z = res.sources[j];
                let a = k as f64 * lambda0
                    - 0.5 * (potential.v_at_coord(pc) + potential.v_at_coord(z));
                rk += free_resolvent_segment(a, (pc - z).abs(), res.t0);
                rk += psi_src[j] * psi[pi] * tail_coeff;
                jk += wa * psi_src[j] * psi_src[j] * rk;
            }
            best = best.max(jk / psi[pi]);
        }
        i_sup.push(best);
        let mut comb = 0.0;
        for i in 1..=k - 1 {
            comb += binomial(k, i) * c[i - 1] * c[k - i - 1];
        }
        c.push(best * comb);
    }
    let crude = CrudeConstants { c, i_sup };

    Ok(MomentData {
        k_top,
        lambda0,
        start: -grid.half_width,
        spacing: h,
        g,
        tail_fraction,
        probes: probe_coords,
        carleman,
        crude,
    })
}

/// Finite-time factorial moments `m_k(t, x)` of the count in a fixed ball,
/// evaluated at requested times at a fixed starting point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentCurve {
    pub ball_center: f64,
    pub ball_radius: f64,
    pub x0: f64,
    pub times: Vec<f64>,
    /// `values[c][k-1] = m_k(times[c], x0)`.
    pub values: Vec<Vec<f64>>,
}

/// Solves the forced recursion for the factorial moments of the count in
/// the ball `[center - radius, center + radius]`:
/// `dm_k/dt = L m_k + alpha sum_i C(k,i) m_i m_{k-i}`, `m_1(0) = indicator`,
/// `m_k(0) = 0`. Works on the exponentially rescaled variables
/// `w_k = e^{-k lambda0 t} m_k`, whose coupled system is autonomous.
pub fn finite_time_mk(
    potential: &PotentialSpec,
    grid: &GridSpec,
    lambda0: f64,
    center: f64,
    radius: f64,
    k_levels: usize,
    x0: f64,
    eval_times: &[f64],
) -> Result<MomentCurve, MomentError> {
    if potential.dimension != 1 {
        return Err(KernelError::UnsupportedDimension(potential.dimension).into());
    }
    let h = grid.spacing;
    let n = grid.points();
    let nin = n - 2;
    let t0 = grid.t0();
    let dt = grid.dt;
    let (lo, hi) = (center - radius, center + radius);
    if lo < -grid.half_width || hi > grid.half_width {
        return Err(KernelError::BallOutsideGrid { lo, hi }.into());
    }

    // smoothed indicator: the free kernel applied to the ball, split at the
    // support edges so the short-time potential factor is piecewise exact
    let l = potential.support_radius;
    let mut cuts = vec![lo, hi];
    for edge in [-l, l] {
        if edge > lo && edge < hi {
            cuts.push(edge);
        }
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let sq = t0.sqrt();
    let m1_init = |x: f64| -> f64 {
        let vx = potential.v_at_coord(x);
        let mut acc = 0.0;
        for seg in cuts.windows(2) {
            let v_seg = potential.v_cell_average(seg[0], seg[1]);
            let mass = normal_cdf((seg[1] - x) / sq) - normal_cdf((seg[0] - x) / sq);
            acc += (0.5 * t0 * v_seg).exp() * mass;
        }
        (0.5 * t0 * vx).exp() * acc
    };

    let mut levels: Vec<Stepper1d> = Vec::with_capacity(k_levels);
    for k in 1..=k_levels {
        let shift = k as f64 * lambda0;
        let init: Vec<f64> = if k == 1 {
            (1..n - 1)
                .map(|i| {
                    let x = -grid.half_width + h * i as f64;
                    (-shift * t0).exp() * m1_init(x)
                })
                .collect()
        } else {
            vec![0.0; nin]
        };
        levels.push(Stepper1d::new(potential, grid, shift, init, t0));
    }

    let alpha_in: Vec<f64> = (1..n - 1)
        .map(|i| potential.alpha_at_coord(-grid.half_width + h * i as f64))
        .collect();

    let source_for = |k: usize, slices: &[Vec<f64>]| -> Vec<f64> {
        let mut f = vec![0.0_f64; nin];
        for i in 1..=k - 1 {
            let cb = binomial(k, i);
            let a = &slices[i - 1];
            let b = &slices[k - i - 1];
            for x in 0..nin {
                f[x] += cb * a[x] * b[x];
            }
        }
        for x in 0..nin {
            f[x] *= alpha_in[x];
        }
        f
    };

    let horizon = eval_times.iter().cloned().fold(t0, f64::max);
    let total_steps = ((horizon - t0) / dt).round() as usize;
    let eval_steps: Vec<usize> = eval_times
        .iter()
        .map(|&t| (((t - t0) / dt).round().max(0.0)) as usize)
        .collect();

    let x0_interp = |w: &[f64]| -> f64 {
        // interior slice, walls zero
        let s = (x0 + grid.half_width) / h;
        let i = (s.floor() as usize).min(n - 2);
        let frac = s - i as f64;
        let at = |k: usize| -> f64 {
            if k == 0 || k == n - 1 {
                0.0
            } else {
                w[k - 1]
            }
        };
        at(i) * (1.0 - frac) + at(i + 1) * frac
    };

    let mut values: Vec<Vec<f64>> = vec![Vec::new(); eval_times.len()];
    let record = |step: usize, levels: &[Stepper1d], values: &mut Vec<Vec<f64>>| {
        for (c, &es) in eval_steps.iter().enumerate() {
            if es == step {
                let t = t0 + step as f64 * dt;
                values[c] = levels
                    .iter()
                    .enumerate()
                    .map(|(ki, st)| ((ki + 1) as f64 * lambda0 * t).exp() * x0_interp(&st.w))
                    .collect();
            }
        }
    };

    record(0, &levels, &mut values);
    let mut prev: Vec<Vec<f64>> = levels.iter().map(|s| s.w.clone()).collect();
    for step in 1..=total_steps {
        // advance level by level; sources need both endpoints, and lower
        // levels are already at the new time when higher ones step
        for k in 1..=k_levels {
            if k == 1 {
                levels[0].step(None, None);
            } else {
                let f_prev = source_for(k, &prev);
                let now: Vec<Vec<f64>> = levels[..k - 1].iter().map(|s| s.w.clone()).collect();
                let f_next = source_for(k, &now);
                levels[k - 1].step(Some(&f_prev), Some(&f_next));
            }
        }
        for (k, st) in levels.iter().enumerate() {
            prev[k].copy_from_slice(&st.w);
        }
        record(step, &levels, &mut values);
    }

    Ok(MomentCurve {
        ball_center: center,
        ball_radius: radius,
        x0,
        times: eval_times.to_vec(),
        values,
    })
}
