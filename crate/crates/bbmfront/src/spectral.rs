//! Principal eigenpair of `L = (1/2) Laplacian + v`, tail constants of the
//! ground state, and the exponential ball factor `gamma`.
//!
//! One-dimensional problems use a symmetric second-order finite-difference
//! discretization with homogeneous Dirichlet walls; higher dimensions are
//! supported for radially symmetric potentials through the radial reduction
//! with the `(d-1)/r` drift term. The largest eigenvalue is extracted by
//! shifted inverse power iteration (the shift sits above the Gershgorin
//! bound `sup v`), followed by Rayleigh-quotient refinement.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{GridSpec, PotentialSpec};
use crate::numerics::{adaptive_simpson, fit_line, trapezoid, Tridiag};

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("subcritical potential: largest eigenvalue {0} is not positive")]
    Subcritical(f64),
    #[error("eigen iteration not converged after {0} iterations")]
    NotConverged(usize),
    #[error("eigen residual {0} exceeds 1e-8")]
    ResidualTooLarge(f64),
    #[error("domain too small: exp(-sqrt(2 lambda0) M) = {0:.3e} >= 1e-8")]
    DomainTooSmall(f64),
    #[error("tail fit window [{0}, {1}] too narrow or outside the grid")]
    WindowTooNarrow(f64, f64),
    #[error("tail not resolved: residual slope {0:.3e} exceeds 0.01 sqrt(2 lambda0)")]
    TailNotResolved(f64),
}

/// Ground state on the grid with its eigenvalue.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenPair {
    pub dimension: usize,
    pub lambda0: f64,
    /// First grid coordinate (`-M` in one dimension, `0` radially).
    pub start: f64,
    pub spacing: f64,
    /// Ground state samples, `L^2`-normalized, boundary entries zero.
    pub psi: Vec<f64>,
    /// Max-norm residual of the discrete eigenproblem.
    pub residual: f64,
    pub iterations: usize,
}

impl EigenPair {
    pub fn grid_end(&self) -> f64 {
        self.start + self.spacing * (self.psi.len() - 1) as f64
    }

    /// Ground state at a profile coordinate by linear interpolation.
    /// Radial problems evaluate at `|c|`. Zero outside the grid.
    pub fn psi_at_coord(&self, c: f64) -> f64 {
        let c = if self.dimension > 1 { c.abs() } else { c };
        let n = self.psi.len();
        let s = (c - self.start) / self.spacing;
        if s < 0.0 || s > (n - 1) as f64 {
            return 0.0;
        }
        let i = (s.floor() as usize).min(n - 2);
        let w = s - i as f64;
        self.psi[i] * (1.0 - w) + self.psi[i + 1] * w
    }

    /// Index of the grid point nearest to coordinate `c`.
    pub fn index_of(&self, c: f64) -> usize {
        (((c - self.start) / self.spacing).round() as isize)
            .clamp(0, self.psi.len() as isize - 1) as usize
    }
}

/// Decay constants of the ground-state tail
/// `psi(y) ~ C(u) |y|^{(1-d)/2} exp(-sqrt(2 lambda0) |y|)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailConstants {
    /// Decay rate `sqrt(2 lambda0)`.
    pub mu: f64,
    /// Fit window in `|y|`.
    pub window: (f64, f64),
    /// Constant in the `+u` direction (the only constant radially).
    pub c_plus: f64,
    /// Constant in the `-u` direction (equals `c_plus` radially).
    pub c_minus: f64,
    /// Residual slope of the fit (zero for a perfectly resolved tail).
    pub slope_plus: f64,
    pub slope_minus: f64,
}

/// Spectral stage output: eigenpair, tail constants, ball factor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralData {
    pub pair: EigenPair,
    pub tail: TailConstants,
    /// `gamma = int_{|y| <= R} exp(sqrt(2 lambda0) y_1) dy` for the
    /// configured ball radius.
    pub gamma: f64,
    pub ball_radius: f64,
}

impl SpectralData {
    pub fn lambda0(&self) -> f64 {
        self.pair.lambda0
    }

    /// Ground state at a position, using the fitted tail beyond the grid.
    pub fn psi_at(&self, x: &[f64]) -> f64 {
        let d = self.pair.dimension;
        let c = if d == 1 {
            x[0]
        } else {
            x.iter().map(|v| v * v).sum::<f64>().sqrt()
        };
        let end = self.pair.grid_end();
        if d == 1 && (c < self.pair.start || c > end) {
            let cdir = if c > 0.0 { self.tail.c_plus } else { self.tail.c_minus };
            return cdir * (-self.tail.mu * c.abs()).exp();
        }
        if d > 1 && c > end {
            return self.tail.c_plus
                * c.powf((1.0 - d as f64) / 2.0)
                * (-self.tail.mu * c).exp();
        }
        self.pair.psi_at_coord(c)
    }
}

/// Ground-state eigenvalue of the one-dimensional square well of depth
/// `alpha0` on `[-L, L]`: bisection on the even-state matching condition
/// `sqrt(2 (alpha0 - lambda)) tan(sqrt(2 (alpha0 - lambda)) L) = sqrt(2 lambda)`
/// to absolute tolerance `1e-12`.
pub fn square_well_oracle(alpha0: f64, support_radius: f64) -> f64 {
    assert!(alpha0 > 0.0 && support_radius > 0.0);
    let l = support_radius;
    // The ground state has k L in (0, pi/2); for deep wells the bracket's
    // lower end is alpha0 - pi^2 / (8 L^2).
    let lo0 = (alpha0 - std::f64::consts::PI.powi(2) / (8.0 * l * l)).max(0.0);
    let f = |lam: f64| -> f64 {
        let k = (2.0 * (alpha0 - lam)).sqrt();
        let mu = (2.0 * lam).sqrt();
        k * (k * l).tan() - mu
    };
    let (mut lo, mut hi) = (lo0 + 1e-15 * alpha0.max(1.0), alpha0 - 1e-15 * alpha0.max(1.0));
    // f > 0 at the lower end, f < 0 at alpha0; f is monotone on the bracket.
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Largest eigenvalue and ground state of `(1/2) Laplacian + v` with
/// Dirichlet walls at `|x| = M` (radius `M` for radial problems). The
/// diagonal uses exact cell averages of `v` so jump discontinuities keep
/// the discretization second order.
pub fn principal_eigenpair(
    potential: &PotentialSpec,
    grid: &GridSpec,
) -> Result<EigenPair, SpectralError> {
    let d = potential.dimension;
    let h = grid.spacing;
    let m = grid.half_width;
    let (start, n) = if d == 1 {
        ((-m), (2.0 * m / h).round() as usize + 1)
    } else {
        (0.0, (m / h).round() as usize + 1)
    };
    // interior unknowns exclude Dirichlet walls; the radial origin is a
    // regular unknown with a reflecting regularity row
    let (i_first, i_last) = if d == 1 { (1, n - 2) } else { (0, n - 2) };
    let nin = i_last - i_first + 1;
    let coord = |i: usize| start + h * i as f64;

    let mut diag = vec![0.0; nin];
    let mut lower = vec![0.0; nin - 1];
    let mut upper = vec![0.0; nin - 1];
    let inv_h2 = 1.0 / (h * h);
    for (row, i) in (i_first..=i_last).enumerate() {
        let c = coord(i);
        let v = potential.v_cell_average(c - 0.5 * h, c + 0.5 * h);
        if d > 1 && i == 0 {
            // regularity at the origin: Laplacian of a smooth radial
            // function at r = 0 is d * u''(0)
            diag[row] = -(d as f64) * inv_h2 + v;
            upper[row] = d as f64 * inv_h2;
            continue;
        }
        diag[row] = -inv_h2 + v;
        let drift = if d > 1 { (d as f64 - 1.0) / (4.0 * h * c) } else { 0.0 };
        if row + 1 < nin {
            upper[row] = 0.5 * inv_h2 + drift;
        }
        if row > 0 {
            lower[row - 1] = 0.5 * inv_h2 - drift;
        }
    }

    let sup_v = potential.sup_v();
    let sigma0 = sup_v + 0.5;
    let shifted = |sigma: f64| -> Option<Tridiag> {
        Tridiag::try_new(
            lower.iter().map(|x| -x).collect(),
            diag.iter().map(|x| sigma - x).collect(),
            upper.iter().map(|x| -x).collect(),
        )
    };
    let apply = |x: &[f64], out: &mut [f64]| {
        for row in 0..nin {
            let mut acc = diag[row] * x[row];
            if row > 0 {
                acc += lower[row - 1] * x[row - 1];
            }
            if row + 1 < nin {
                acc += upper[row] * x[row + 1];
            }
            out[row] = acc;
        }
    };

    let mut x: Vec<f64> = (i_first..=i_last)
        .map(|i| (-(coord(i) * coord(i)) / 2.0).exp())
        .collect();
    normalize(&mut x);
    let mut ax = vec![0.0; nin];
    let mut lambda = f64::NEG_INFINITY;
    let mut iterations = 0;
    let max_iter = 800;
    let mut solver = shifted(sigma0).expect("shift above the spectrum must factorize");
    let mut rayleigh_phase = false;
    loop {
        if iterations >= max_iter {
            return Err(SpectralError::NotConverged(iterations));
        }
        iterations += 1;
        solver.solve_in_place(&mut x);
        normalize(&mut x);
        apply(&x, &mut ax);
        let new_lambda: f64 = x.iter().zip(&ax).map(|(a, b)| a * b).sum();
        let delta = (new_lambda - lambda).abs();
        lambda = new_lambda;
        if delta < 1e-13 * lambda.abs().max(1.0) {
            break;
        }
        if !rayleigh_phase && delta < 1e-8 * lambda.abs().max(1.0) {
            // Rayleigh refinement: re-shift just above the estimate
            let sigma = lambda + 1e-9 * lambda.abs().max(1.0);
            if let Some(s) = shifted(sigma) {
                solver = s;
                rayleigh_phase = true;
            }
        }
    }

    // orient positive
    let max_abs = x.iter().cloned().fold(0.0_f64, |m, v| if v.abs() > m.abs() { v } else { m });
    if max_abs < 0.0 {
        for v in &mut x {
            *v = -*v;
        }
    }

    if lambda <= 0.0 {
        return Err(SpectralError::Subcritical(lambda));
    }

    apply(&x, &mut ax);
    let residual = x
        .iter()
        .zip(&ax)
        .map(|(xi, axi)| (axi - lambda * xi).abs())
        .fold(0.0_f64, f64::max);
    if residual > 1e-8 {
        return Err(SpectralError::ResidualTooLarge(residual));
    }

    // assemble full grid vector with Dirichlet zeros and L^2-normalize
    let mut psi = vec![0.0; n];
    for (row, i) in (i_first..=i_last).enumerate() {
        psi[i] = x[row];
    }
    let norm2 = if d == 1 {
        let sq: Vec<f64> = psi.iter().map(|p| p * p).collect();
        trapezoid(&sq, h)
    } else {
        let sq: Vec<f64> = psi
            .iter()
            .enumerate()
            .map(|(i, p)| p * p * coord(i).powi(d as i32 - 1))
            .collect();
        trapezoid(&sq, h) * sphere_area(d)
    };
    let scale = norm2.sqrt().recip();
    for p in &mut psi {
        *p *= scale;
    }

    let tail_size = (-(2.0 * lambda).sqrt() * m).exp();
    if tail_size >= 1e-8 {
        return Err(SpectralError::DomainTooSmall(tail_size));
    }

    Ok(EigenPair {
        dimension: d,
        lambda0: lambda,
        start,
        spacing: h,
        psi,
        residual,
        iterations,
    })
}

fn normalize(x: &mut [f64]) {
    let norm: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm > 0.0);
    for v in x.iter_mut() {
        *v /= norm;
    }
}

/// Surface area of the unit sphere in `R^d`.
pub fn sphere_area(d: usize) -> f64 {
    2.0 * std::f64::consts::PI.powf(d as f64 / 2.0) / libm::tgamma(d as f64 / 2.0)
}

/// Volume of the `n`-ball of radius `rho`.
fn ball_volume(n: usize, rho: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    std::f64::consts::PI.powf(n as f64 / 2.0) / libm::tgamma(n as f64 / 2.0 + 1.0)
        * rho.powi(n as i32)
}

/// Fits the tail constants `C(u)` on the window `[lo, hi]` in `|y|` by
/// regressing `ln(psi) + mu |y| + ((d-1)/2) ln |y|` on `|y|`; the intercept
/// is `ln C` and the slope must vanish within `0.01 mu` for the tail to be
/// declared resolved.
pub fn tail_constant(
    pair: &EigenPair,
    window_lo: f64,
    window_hi: f64,
) -> Result<TailConstants, SpectralError> {
    let mu = (2.0 * pair.lambda0).sqrt();
    let d = pair.dimension as f64;
    let h = pair.spacing;
    if window_hi - window_lo < 10.0 * h || window_lo <= 0.0 || window_hi >= pair.grid_end() {
        return Err(SpectralError::WindowTooNarrow(window_lo, window_hi));
    }
    let fit_side = |sign: f64| -> Result<(f64, f64), SpectralError> {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut c = window_lo;
        while c <= window_hi + 1e-12 {
            let p = pair.psi_at_coord(sign * c);
            if p <= 0.0 {
                return Err(SpectralError::WindowTooNarrow(window_lo, window_hi));
            }
            xs.push(c);
            ys.push(p.ln() + mu * c + (d - 1.0) / 2.0 * c.ln());
            c += h;
        }
        if xs.len() < 8 {
            return Err(SpectralError::WindowTooNarrow(window_lo, window_hi));
        }
        let (intercept, slope) = fit_line(&xs, &ys);
        if slope.abs() > 0.01 * mu {
            return Err(SpectralError::TailNotResolved(slope));
        }
        Ok((intercept.exp(), slope))
    };
    let (c_plus, slope_plus) = fit_side(1.0)?;
    let (c_minus, slope_minus) = if pair.dimension == 1 {
        fit_side(-1.0)?
    } else {
        (c_plus, slope_plus)
    };
    Ok(TailConstants {
        mu,
        window: (window_lo, window_hi),
        c_plus,
        c_minus,
        slope_plus,
        slope_minus,
    })
}

/// `gamma = int_{|y| <= R} exp(sqrt(2 lambda0) y_1) dy` by adaptive
/// quadrature over the first coordinate (cross-sections are `(d-1)`-balls).
pub fn gamma(lambda0: f64, dimension: usize, radius: f64) -> f64 {
    let c = (2.0 * lambda0).sqrt();
    let r = radius;
    let f = |u: f64| -> f64 {
        let cross = (r * r - u * u).max(0.0).sqrt();
        (c * u).exp() * ball_volume(dimension - 1, cross)
    };
    let scale = (c * r).exp() * ball_volume(dimension - 1, r).max(1.0) * r;
    adaptive_simpson(&f, -r, r, 1e-13 * scale.max(1.0))
}

/// Closed form of [`gamma`] in one dimension: `2 sinh(sqrt(2 lambda0) R) / sqrt(2 lambda0)`.
pub fn gamma_closed_form_1d(lambda0: f64, radius: f64) -> f64 {
    let c = (2.0 * lambda0).sqrt();
    2.0 * (c * radius).sinh() / c
}

/// Runs the full spectral stage: eigenpair, tail fit, ball factor.
pub fn spectral_stage(
    potential: &PotentialSpec,
    grid: &GridSpec,
    ball_radius: f64,
) -> Result<SpectralData, SpectralError> {
    let pair = principal_eigenpair(potential, grid)?;
    let lo = potential.support_radius + 3.0;
    let hi = (lo + 3.0).min(0.9 * grid.half_width);
    let tail = tail_constant(&pair, lo, hi)?;
    let g = gamma(pair.lambda0, potential.dimension, ball_radius);
    Ok(SpectralData { pair, tail, gamma: g, ball_radius })
}
