//! Expected-density PDE `d rho/dt = (1/2) rho'' + v rho` from a point
//! source, solved with Crank-Nicolson on a Dirichlet-walled grid.
//!
//! Solves evolve the exponentially rescaled unknown
//! `w(t, x) = exp(-shift t) rho(t, x)` (the shift is the principal
//! eigenvalue when known, zero otherwise) so slice values stay order one.
//! The point source is smoothed over a short time `t0` with the free kernel
//! times the symmetrized Feynman-Kac factor
//! `exp(t0 (v(z) + v(x0)) / 2)`, which cancels the leading initialization
//! bias of the naive free-kernel start.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{GridSpec, PotentialSpec};
use crate::numerics::{integrate_interval, trapezoid, Tridiag};
use crate::spectral::SpectralData;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("density solves support one dimension only (got {0})")]
    UnsupportedDimension(usize),
    #[error("source x0 = {0} too close to the grid boundary")]
    InvalidSource(f64),
    #[error("boundary contamination at t = {t}: wall ratio {ratio:.3e} exceeds 1e-10")]
    BoundaryContamination { t: f64, ratio: f64 },
    #[error("horizon exceeded: t = {t} beyond table range [{lo}, {hi}]")]
    HorizonExceeded { t: f64, lo: f64, hi: f64 },
    #[error("ball [{lo}, {hi}] outside the grid")]
    BallOutsideGrid { lo: f64, hi: f64 },
    #[error("wrong regime: {0:?} (interior asymptotics require the interior cone)")]
    WrongRegime(Regime),
}

/// Propagation regime of a displacement relative to the spreading cone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    Interior,
    Intermediate,
    Exterior,
}

/// Classifies `theta = |y - x| / t` against `sqrt(2 lambda0) -+ epsilon`.
pub fn classify_regime(t: f64, x: &[f64], y: &[f64], lambda0: f64, epsilon: f64) -> Regime {
    assert!(t > 0.0 && epsilon > 0.0);
    let dist: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let theta = dist / t;
    let edge = (2.0 * lambda0).sqrt();
    if theta <= edge - epsilon {
        Regime::Interior
    } else if theta >= edge + epsilon {
        Regime::Exterior
    } else {
        Regime::Intermediate
    }
}

/// Free heat kernel `p0(t, y) = (2 pi t)^{-d/2} exp(-|y|^2 / (2 t))` for the
/// displacement `y`.
pub fn free_kernel(t: f64, displacement: &[f64]) -> f64 {
    assert!(t > 0.0);
    let d = displacement.len() as f64;
    let r2: f64 = displacement.iter().map(|c| c * c).sum();
    (2.0 * std::f64::consts::PI * t).powf(-d / 2.0) * (-r2 / (2.0 * t)).exp()
}

/// Interior-cone density asymptotic `exp(lambda0 t) psi(x) psi(y)`.
/// Errors unless the displacement lies in the interior regime.
pub fn interior_asymptotic(
    spectral: &SpectralData,
    t: f64,
    x: &[f64],
    y: &[f64],
    epsilon: f64,
) -> Result<f64, KernelError> {
    let regime = classify_regime(t, x, y, spectral.lambda0(), epsilon);
    if regime != Regime::Interior {
        return Err(KernelError::WrongRegime(regime));
    }
    Ok((spectral.lambda0() * t).exp() * spectral.psi_at(x) * spectral.psi_at(y))
}

/// Crank-Nicolson stepper for `dw/dt = (1/2) w'' + (v - shift) w` plus an
/// optional source, on the interior of a uniform Dirichlet grid.
pub struct Stepper1d {
    /// Interior unknowns (walls excluded, identically zero).
    pub w: Vec<f64>,
    pub t: f64,
    dt: f64,
    rhs_diag: Vec<f64>,
    rhs_off: f64,
    solver: Tridiag,
    scratch: Vec<f64>,
}

impl Stepper1d {
    /// `initial` holds interior values at time `t_init`.
    pub fn new(
        potential: &PotentialSpec,
        grid: &GridSpec,
        shift: f64,
        initial: Vec<f64>,
        t_init: f64,
    ) -> Self {
        let h = grid.spacing;
        let dt = grid.dt;
        let n = grid.points();
        let nin = n - 2;
        assert_eq!(initial.len(), nin);
        let inv_h2 = 1.0 / (h * h);
        let mut lhs_diag = Vec::with_capacity(nin);
        let mut rhs_diag = Vec::with_capacity(nin);
        for i in 0..nin {
            let x = -grid.half_width + h * (i + 1) as f64;
            let q = potential.v_cell_average(x - 0.5 * h, x + 0.5 * h) - shift;
            let b_diag = -inv_h2 + q;
            lhs_diag.push(1.0 - 0.5 * dt * b_diag);
            rhs_diag.push(1.0 + 0.5 * dt * b_diag);
        }
        let off = 0.25 * dt * inv_h2;
        let solver = Tridiag::new(vec![-off; nin - 1], lhs_diag, vec![-off; nin - 1]);
        Self {
            w: initial,
            t: t_init,
            dt,
            rhs_diag,
            rhs_off: off,
            solver,
            scratch: vec![0.0; nin],
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advances one step. Sources are trapezoidal: `f_prev` at the current
    /// time, `f_next` at the new time.
    pub fn step(&mut self, f_prev: Option<&[f64]>, f_next: Option<&[f64]>) {
        let nin = self.w.len();
        let rhs = &mut self.scratch;
        for i in 0..nin {
            let mut acc = self.rhs_diag[i] * self.w[i];
            if i > 0 {
                acc += self.rhs_off * self.w[i - 1];
            }
            if i + 1 < nin {
                acc += self.rhs_off * self.w[i + 1];
            }
            rhs[i] = acc;
        }
        if let Some(f) = f_prev {
            for i in 0..nin {
                rhs[i] += 0.5 * self.dt * f[i];
            }
        }
        if let Some(f) = f_next {
            for i in 0..nin {
                rhs[i] += 0.5 * self.dt * f[i];
            }
        }
        self.solver.solve_in_place(rhs);
        std::mem::swap(&mut self.w, &mut self.scratch);
        self.t += self.dt;
    }
}

/// Smoothed point-source initial slice at `t0`: free kernel times the
/// symmetrized short-time Feynman-Kac factor, in `w` units (interior
/// points only).
pub fn smoothed_delta(
    potential: &PotentialSpec,
    grid: &GridSpec,
    x0: f64,
    shift: f64,
) -> Vec<f64> {
    let t0 = grid.t0();
    let h = grid.spacing;
    let n = grid.points();
    let v_x0 = potential.v_at_coord(x0);
    let rescale = (-shift * t0).exp();
    (1..n - 1)
        .map(|i| {
            let z = -grid.half_width + h * i as f64;
            let fk = free_kernel(t0, &[z - x0]);
            let strang = (0.5 * t0 * (potential.v_at_coord(z) + v_x0)).exp();
            rescale * fk * strang
        })
        .collect()
}

/// Density table from a point source: rescaled slices stored on a time grid
/// that is dense early, regular later, and contains every requested time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeatKernelTable {
    pub dimension: usize,
    pub x0: f64,
    /// Rescaling exponent: stored slices are `w = exp(-shift t) rho`.
    pub shift: f64,
    pub start: f64,
    pub spacing: f64,
    pub times: Vec<f64>,
    pub slices: Vec<Vec<f64>>,
    /// Largest wall-adjacent to slice-max ratio seen while stepping.
    pub boundary_ratio: f64,
}

impl HeatKernelTable {
    pub fn t_min(&self) -> f64 {
        self.times[0]
    }

    pub fn t_max(&self) -> f64 {
        *self.times.last().unwrap()
    }

    fn bracket(&self, t: f64) -> Result<(usize, f64), KernelError> {
        let lo = self.t_min();
        let hi = self.t_max();
        if t < lo - 1e-12 || t > hi + 1e-12 {
            return Err(KernelError::HorizonExceeded { t, lo, hi });
        }
        let t = t.clamp(lo, hi);
        let j = match self
            .times
            .binary_search_by(|probe| probe.partial_cmp(&t).unwrap())
        {
            Ok(j) => return Ok((j.min(self.times.len() - 1), 0.0)),
            Err(j) => j,
        };
        let j = j.clamp(1, self.times.len() - 1);
        let w = (t - self.times[j - 1]) / (self.times[j] - self.times[j - 1]);
        Ok((j, w))
    }

    /// Rescaled slice at time `t`, linearly interpolated between stored
    /// slices (full grid, walls zero).
    pub fn w_slice_at(&self, t: f64) -> Result<Vec<f64>, KernelError> {
        let (j, wgt) = self.bracket(t)?;
        let n = self.slices[j].len() + 2;
        let mut out = vec![0.0; n];
        if wgt == 0.0 {
            out[1..n - 1].copy_from_slice(&self.slices[j]);
        } else {
            let a = &self.slices[j - 1];
            let b = &self.slices[j];
            for i in 0..a.len() {
                out[i + 1] = a[i] * (1.0 - wgt) + b[i] * wgt;
            }
        }
        Ok(out)
    }

    /// Density `rho(t, z)`, interpolated linearly in time and space.
    pub fn density_at(&self, t: f64, z: f64) -> Result<f64, KernelError> {
        let (j, wgt) = self.bracket(t)?;
        let grab = |slice: &[f64]| -> f64 {
            // slice holds interior values; extend with wall zeros
            let n = slice.len() + 2;
            let s = (z - self.start) / self.spacing;
            if s < 0.0 || s > (n - 1) as f64 {
                return 0.0;
            }
            let i = (s.floor() as usize).min(n - 2);
            let frac = s - i as f64;
            let at = |k: usize| -> f64 {
                if k == 0 || k == n - 1 {
                    0.0
                } else {
                    slice[k - 1]
                }
            };
            at(i) * (1.0 - frac) + at(i + 1) * frac
        };
        let w = if wgt == 0.0 {
            grab(&self.slices[j])
        } else {
            grab(&self.slices[j - 1]) * (1.0 - wgt) + grab(&self.slices[j]) * wgt
        };
        Ok((self.shift * t).exp() * w)
    }

    /// Total mass `int rho(t, z) dz`.
    pub fn total_mass(&self, t: f64) -> Result<f64, KernelError> {
        let w = self.w_slice_at(t)?;
        Ok((self.shift * t).exp() * trapezoid(&w, self.spacing))
    }
}

/// Builds the union of storage times: dense early grid, regular later grid,
/// and every requested extra, all snapped to step multiples of `dt` past `t0`.
fn storage_steps(t0: f64, dt: f64, r_max: f64, extra: &[f64]) -> Vec<usize> {
    let total_steps = ((r_max - t0) / dt).round() as usize;
    let snap = |t: f64| -> usize {
        (((t - t0) / dt).round() as isize).clamp(0, total_steps as isize) as usize
    };
    let mut steps = vec![0, total_steps];
    let early_step = (0.01f64).max(dt);
    let mut t = t0;
    while t <= 1.0_f64.min(r_max) {
        steps.push(snap(t));
        t += early_step;
    }
    let mut t = 1.0_f64.min(r_max);
    while t <= r_max {
        steps.push(snap(t));
        t += (0.1f64).max(dt);
    }
    for &e in extra {
        if e >= t0 && e <= r_max {
            steps.push(snap(e));
        }
    }
    steps.sort_unstable();
    steps.dedup();
    steps
}

/// Solves the density equation from a point source at `x0`, storing
/// rescaled slices up to `r_max`. `shift` is subtracted from the potential
/// (pass the principal eigenvalue once known, zero otherwise). `extra_store`
/// lists times that must be stored exactly (snapped to the step grid).
pub fn solve_density(
    potential: &PotentialSpec,
    grid: &GridSpec,
    x0: &[f64],
    r_max: f64,
    shift: f64,
    extra_store: &[f64],
) -> Result<HeatKernelTable, KernelError> {
    if potential.dimension != 1 {
        return Err(KernelError::UnsupportedDimension(potential.dimension));
    }
    let x0 = x0[0];
    if x0.abs() > grid.half_width - 1.0 {
        return Err(KernelError::InvalidSource(x0));
    }
    let t0 = grid.t0();
    let dt = grid.dt;
    let initial = smoothed_delta(potential, grid, x0, shift);
    let mut stepper = Stepper1d::new(potential, grid, shift, initial, t0);
    let store = storage_steps(t0, dt, r_max, extra_store);

    let mut times = Vec::with_capacity(store.len());
    let mut slices = Vec::with_capacity(store.len());
    let mut boundary_ratio = 0.0_f64;
    let mut next = 0;
    let mut step_idx = 0usize;
    let last_step = *store.last().unwrap();
    loop {
        if next < store.len() && store[next] == step_idx {
            let slice = stepper.w.clone();
            let peak = slice.iter().cloned().fold(0.0_f64, |m, v| m.max(v.abs()));
            let wall = slice[0].abs().max(slice[slice.len() - 1].abs());
            if peak > 0.0 {
                let ratio = wall / peak;
                boundary_ratio = boundary_ratio.max(ratio);
                if ratio > 1e-10 {
                    return Err(KernelError::BoundaryContamination { t: stepper.t, ratio });
                }
            }
            times.push(stepper.t);
            slices.push(slice);
            next += 1;
        }
        if step_idx >= last_step {
            break;
        }
        stepper.step(None, None);
        step_idx += 1;
    }

    Ok(HeatKernelTable {
        dimension: 1,
        x0,
        shift,
        start: -grid.half_width,
        spacing: grid.spacing,
        times,
        slices,
        boundary_ratio,
    })
}

/// First moment of the count in the ball `[center - radius, center + radius]`
/// together with its two front asymptotics.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FirstMoment {
    /// `int_{U_y} rho(t, x0, s) ds` by quadrature over the table.
    pub value: f64,
    /// `exp(lambda0 t) psi(x0) int_{U_y} psi`.
    pub mid_asymptotic: f64,
    /// `gamma C(u) psi(x0) exp(lambda0 t - sqrt(2 lambda0) |y|) |y|^{(1-d)/2}`.
    pub far_asymptotic: f64,
}

/// Evaluates the ball first moment at time `t` for a ball centered at the
/// signed coordinate `center`.
pub fn first_moment(
    table: &HeatKernelTable,
    spectral: &SpectralData,
    t: f64,
    center: f64,
    radius: f64,
) -> Result<FirstMoment, KernelError> {
    let (lo, hi) = (center - radius, center + radius);
    let n = table.slices[0].len() + 2;
    let end = table.start + table.spacing * (n - 1) as f64;
    if lo < table.start || hi > end {
        return Err(KernelError::BallOutsideGrid { lo, hi });
    }
    let w = table.w_slice_at(t)?;
    let value = (table.shift * t).exp()
        * integrate_interval(&w, table.start, table.spacing, lo, hi);

    let lambda0 = spectral.lambda0();
    let psi_x0 = spectral.psi_at(&[table.x0]);
    let pair = &spectral.pair;
    let psi_ball = integrate_interval(&pair.psi, pair.start, pair.spacing, lo, hi);
    let mid = (lambda0 * t).exp() * psi_x0 * psi_ball;

    let mu = (2.0 * lambda0).sqrt();
    let cdir = if center >= 0.0 { spectral.tail.c_plus } else { spectral.tail.c_minus };
    let d = spectral.pair.dimension as f64;
    let far = spectral.gamma
        * cdir
        * psi_x0
        * (lambda0 * t - mu * center.abs()).exp()
        * center.abs().powf((1.0 - d) / 2.0);

    Ok(FirstMoment { value, mid_asymptotic: mid, far_asymptotic: far })
}

/// Fits the crude first-moment bound constant: the max over ball centers of
/// `m1(t_fit, y) / (exp(lambda0 t_fit) psi(y))`.
pub fn fit_crude_c1(
    table: &HeatKernelTable,
    spectral: &SpectralData,
    t_fit: f64,
    radius: f64,
) -> Result<f64, KernelError> {
    let pair = &spectral.pair;
    let n = table.slices[0].len() + 2;
    let end = table.start + table.spacing * (n - 1) as f64;
    let w = table.w_slice_at(t_fit)?;
    let growth = (table.shift * t_fit).exp();
    let lam = spectral.lambda0();
    let mut c1 = 0.0_f64;
    let mut center = table.start + radius;
    while center <= end - radius {
        let m1 = growth * integrate_interval(&w, table.start, table.spacing, center - radius, center + radius);
        let psi = pair.psi_at_coord(center).max(1e-300);
        c1 = c1.max(m1 / ((lam * t_fit).exp() * psi));
        center += 0.25;
    }
    Ok(c1)
}
