//! Experiment configuration: branching/killing rate profiles, front
//! schedule, grid and Monte Carlo parameters, validation, and the TOML
//! config-file format with environment-variable overrides.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("front schedule undefined for t = {0} (requires t > 1)")]
    ScheduleTime(f64),
}

/// Rate profile over the support coordinate: the signed axis coordinate in
/// one dimension, the radius in higher dimensions. Zero outside its domain;
/// the outer domain edge takes the interior value (closed support).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Profile {
    /// Constant `value` on the whole support.
    Uniform { value: f64 },
    /// Piecewise constant: `values[i]` on `[edges[i], edges[i+1])`, with the
    /// last interval closed on the right.
    Piecewise { edges: Vec<f64>, values: Vec<f64> },
    /// Samples on a uniform grid `start + i * step`, linearly interpolated.
    Tabulated { start: f64, step: f64, values: Vec<f64> },
}

impl Profile {
    /// Pointwise value at coordinate `c` given the support domain
    /// `[lo, hi]`. Points outside the domain evaluate to zero; the domain
    /// endpoints take interior values.
    fn at(&self, c: f64, lo: f64, hi: f64) -> f64 {
        if c < lo || c > hi {
            return 0.0;
        }
        match self {
            Profile::Uniform { value } => *value,
            Profile::Piecewise { edges, values } => {
                let n = values.len();
                if c < edges[0] || c > edges[n] {
                    return 0.0;
                }
                let mut i = match edges.binary_search_by(|e| e.partial_cmp(&c).unwrap()) {
                    Ok(j) => j,
                    Err(j) => j.saturating_sub(1),
                };
                if i >= n {
                    i = n - 1; // right domain edge: closed
                }
                values[i]
            }
            Profile::Tabulated { start, step, values } => {
                let end = start + step * (values.len() - 1) as f64;
                if c < *start || c > end {
                    return 0.0;
                }
                let s = ((c - start) / step).clamp(0.0, (values.len() - 1) as f64);
                let i = (s.floor() as usize).min(values.len() - 2);
                let w = s - i as f64;
                values[i] * (1.0 - w) + values[i + 1] * w
            }
        }
    }

    /// Exact integral over `[a, b]` intersected with the profile domain.
    fn integral(&self, a: f64, b: f64, lo: f64, hi: f64) -> f64 {
        let a = a.max(lo);
        let b = b.min(hi);
        if b <= a {
            return 0.0;
        }
        match self {
            Profile::Uniform { value } => value * (b - a),
            Profile::Piecewise { edges, values } => {
                let mut acc = 0.0;
                for (i, v) in values.iter().enumerate() {
                    let l = edges[i].max(a);
                    let r = edges[i + 1].min(b);
                    if r > l {
                        acc += v * (r - l);
                    }
                }
                acc
            }
            Profile::Tabulated { start, step, values } => {
                let end = start + step * (values.len() - 1) as f64;
                let a = a.max(*start);
                let b = b.min(end);
                if b <= a {
                    return 0.0;
                }
                // integrate the piecewise-linear interpolant segment by segment
                let seg = |x: f64| self.at(x, lo, hi);
                let i0 = ((a - start) / step).floor() as usize;
                let i1 = (((b - start) / step).ceil() as usize).min(values.len() - 1);
                let mut acc = 0.0;
                let mut xl = a;
                for i in i0..i1 {
                    let xr = (start + step * (i + 1) as f64).min(b);
                    if xr > xl {
                        acc += 0.5 * (seg(xl) + seg(xr)) * (xr - xl);
                        xl = xr;
                    }
                }
                acc
            }
        }
    }

    fn max_value(&self) -> f64 {
        let m = match self {
            Profile::Uniform { value } => *value,
            Profile::Piecewise { values, .. } | Profile::Tabulated { values, .. } => {
                values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            }
        };
        m.max(0.0)
    }

    fn min_value(&self) -> f64 {
        match self {
            Profile::Uniform { value } => *value,
            Profile::Piecewise { values, .. } | Profile::Tabulated { values, .. } => {
                values.iter().cloned().fold(f64::INFINITY, f64::min)
            }
        }
    }

    fn check(&self, label: &str, issues: &mut Vec<String>) {
        match self {
            Profile::Uniform { .. } => {}
            Profile::Piecewise { edges, values } => {
                if edges.len() != values.len() + 1 || values.is_empty() {
                    issues.push(format!("{label}: piecewise profile needs len(edges) = len(values)+1"));
                    return;
                }
                if !edges.windows(2).all(|w| w[1] > w[0]) {
                    issues.push(format!("{label}: piecewise edges must be strictly increasing"));
                }
            }
            Profile::Tabulated { step, values, .. } => {
                if values.len() < 2 {
                    issues.push(format!("{label}: tabulated profile needs at least 2 samples"));
                }
                if *step <= 0.0 {
                    issues.push(format!("{label}: tabulated step must be positive"));
                }
            }
        }
        if self.min_value() < 0.0 {
            issues.push(format!("{label}: rates must be nonnegative"));
        }
    }
}

/// Branching rate `alpha` and killing rate `beta`, both supported on the
/// closed ball of radius `support_radius`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PotentialSpec {
    pub dimension: usize,
    pub support_radius: f64,
    pub alpha: Profile,
    pub beta: Profile,
}

/// Pointwise rates and net potential `v = alpha - beta` at a position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialValues {
    pub alpha: f64,
    pub beta: f64,
    pub v: f64,
}

impl PotentialSpec {
    pub fn square_well(dimension: usize, alpha0: f64, beta0: f64, support_radius: f64) -> Self {
        Self {
            dimension,
            support_radius,
            alpha: Profile::Uniform { value: alpha0 },
            beta: Profile::Uniform { value: beta0 },
        }
    }

    /// Domain of the profile coordinate: `[-L, L]` in one dimension,
    /// `[0, L]` radially otherwise.
    pub fn coord_domain(&self) -> (f64, f64) {
        if self.dimension == 1 {
            (-self.support_radius, self.support_radius)
        } else {
            (0.0, self.support_radius)
        }
    }

    /// Maps a position to the profile coordinate.
    pub fn coord(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dimension);
        if self.dimension == 1 {
            x[0]
        } else {
            x.iter().map(|c| c * c).sum::<f64>().sqrt()
        }
    }

    pub fn alpha_at_coord(&self, c: f64) -> f64 {
        let (lo, hi) = self.coord_domain();
        if self.dimension > 1 && c.abs() <= hi {
            // radial profiles are even in the coordinate
            return self.alpha.at(c.abs(), lo, hi);
        }
        self.alpha.at(c, lo, hi)
    }

    pub fn beta_at_coord(&self, c: f64) -> f64 {
        let (lo, hi) = self.coord_domain();
        if self.dimension > 1 && c.abs() <= hi {
            return self.beta.at(c.abs(), lo, hi);
        }
        self.beta.at(c, lo, hi)
    }

    pub fn v_at_coord(&self, c: f64) -> f64 {
        self.alpha_at_coord(c) - self.beta_at_coord(c)
    }

    /// Average of `v` over the coordinate cell `[a, b]` (used by grid
    /// discretizations so that jump discontinuities retain second-order
    /// accuracy).
    pub fn v_cell_average(&self, a: f64, b: f64) -> f64 {
        let (lo, hi) = self.coord_domain();
        let w = b - a;
        if w <= 0.0 {
            return self.v_at_coord(a);
        }
        (self.alpha.integral(a, b, lo, hi) - self.beta.integral(a, b, lo, hi)) / w
    }

    pub fn sup_alpha(&self) -> f64 {
        self.alpha.max_value()
    }

    pub fn sup_beta(&self) -> f64 {
        self.beta.max_value()
    }

    pub fn sup_v(&self) -> f64 {
        // pointwise bound: v <= sup alpha everywhere, and on the support the
        // max of (alpha - beta) is attained at profile breakpoints for the
        // representations used here; sampling is a safe overestimate guard.
        let (lo, hi) = self.coord_domain();
        let mut m: f64 = 0.0;
        let n = 4096;
        for i in 0..=n {
            let c = lo + (hi - lo) * i as f64 / n as f64;
            m = m.max(self.v_at_coord(c));
        }
        m
    }
}

/// Rates and net potential at a position (zero outside the closed support).
pub fn evaluate_potential(spec: &PotentialSpec, x: &[f64]) -> PotentialValues {
    let c = spec.coord(x);
    let alpha = spec.alpha_at_coord(c);
    let beta = spec.beta_at_coord(c);
    PotentialValues { alpha, beta, v: alpha - beta }
}

/// Offset family `b(t)` in the front schedule.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "b_mode", rename_all = "kebab-case")]
pub enum BOffset {
    /// Fixed offset; the bounded-offset limit theory applies.
    Constant { b: f64 },
    /// `b(t) = c ln t`, diverging sublinearly.
    Log { c: f64 },
    /// `b(t) = c t^p` with `p < 1`.
    Power { c: f64, p: f64 },
}

impl BOffset {
    pub fn value(&self, t: f64) -> f64 {
        match self {
            BOffset::Constant { b } => *b,
            BOffset::Log { c } => c * t.ln(),
            BOffset::Power { c, p } => c * t.powf(*p),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, BOffset::Constant { .. })
    }
}

/// Observation schedule: ball centers ride at `y(t) = (a(t) - b(t)) u` where
/// `a(t) = sqrt(lambda0/2) t - ((d-1)/(2 sqrt(2 lambda0))) ln t`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FrontSchedule {
    pub direction: Vec<f64>,
    #[serde(flatten)]
    pub offset: BOffset,
}

impl FrontSchedule {
    /// Signed distance `a(t) - b(t)` of the ball center along `direction`.
    pub fn radius_at(&self, dimension: usize, lambda0: f64, t: f64) -> Result<f64, ModelError> {
        if t <= 1.0 {
            return Err(ModelError::ScheduleTime(t));
        }
        let a = (lambda0 / 2.0).sqrt() * t
            - ((dimension as f64 - 1.0) / (2.0 * (2.0 * lambda0).sqrt())) * t.ln();
        Ok(a - self.offset.value(t))
    }

    /// Ball center `y(t)` in full coordinates.
    pub fn center_at(&self, dimension: usize, lambda0: f64, t: f64) -> Result<Vec<f64>, ModelError> {
        let r = self.radius_at(dimension, lambda0, t)?;
        Ok(self.direction.iter().map(|u| u * r).collect())
    }
}

/// Center of the observation ball at time `t`.
pub fn front_center(
    schedule: &FrontSchedule,
    dimension: usize,
    lambda0: f64,
    t: f64,
) -> Result<Vec<f64>, ModelError> {
    schedule.center_at(dimension, lambda0, t)
}

/// Discretization parameters for the spectral and PDE stages.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GridSpec {
    /// Domain half-width `M`; the PDE domain is `[-M, M]` (radius `M` for
    /// radial problems).
    pub half_width: f64,
    /// Grid spacing `h`.
    pub spacing: f64,
    /// Time step for density solves.
    pub dt: f64,
    /// Delta-initialization smoothing time (defaults to `10 * dt`).
    #[serde(default)]
    pub t0: Option<f64>,
    /// Margin separating the interior/exterior propagation cones.
    pub epsilon: f64,
    /// Time horizon for resolvent-type integrals in the moment recursion.
    pub r_max: f64,
    /// Spacing of the coarsened source grid across the support.
    pub source_spacing: f64,
}

impl GridSpec {
    pub fn t0(&self) -> f64 {
        self.t0.unwrap_or(10.0 * self.dt)
    }

    pub fn points(&self) -> usize {
        (2.0 * self.half_width / self.spacing).round() as usize + 1
    }
}

/// Monte Carlo ensemble parameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct McParams {
    pub replicas: usize,
    pub seed: u64,
    #[serde(default = "default_max_particles")]
    pub max_particles: usize,
    #[serde(default = "default_batches")]
    pub batches: usize,
    /// Constant offsets evaluated jointly over one ensemble (paired across
    /// replicas, so the offset sweep is a common-random-numbers comparison).
    #[serde(default)]
    pub b_sweep: Option<Vec<f64>>,
    /// Cap on raw per-replica CSV rows emitted (0 disables raw output).
    #[serde(default)]
    pub raw_rows: usize,
}

fn default_max_particles() -> usize {
    1_000_000
}

fn default_batches() -> usize {
    50
}

fn default_rel_tol() -> f64 {
    0.05
}

fn default_z_tol() -> f64 {
    3.0
}

/// Full experiment description as read from the config file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExperimentConfig {
    /// Initial particle position.
    pub x0: Vec<f64>,
    /// Radius of the observation ball.
    pub ball_radius: f64,
    /// Observation times (strictly increasing, each > 1).
    pub checkpoint_times: Vec<f64>,
    /// Highest moment order computed.
    pub k_max: usize,
    /// Relative tolerance for theory/simulation comparison verdicts.
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    /// z-score tolerance for theory/simulation comparison verdicts.
    #[serde(default = "default_z_tol")]
    pub z_tol: f64,
    pub potential: PotentialSpec,
    pub front: FrontSchedule,
    pub grid: GridSpec,
    pub mc: McParams,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ModelError> {
        toml::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModelError::Parse(format!("{}: {e}", path.display())))?;
        let value: toml::Value =
            toml::from_str(&text).map_err(|e| ModelError::Parse(e.to_string()))?;
        let value = apply_env_overrides(value, "BBMFRONT_", &std::env::vars().collect::<Vec<_>>())?;
        value.try_into().map_err(|e: toml::de::Error| ModelError::Parse(e.to_string()))
    }

    /// All constant ball offsets evaluated by the ensemble: the schedule's
    /// own offset first, then any sweep extras (deduplicated).
    pub fn ball_offsets(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        if let BOffset::Constant { b } = self.front.offset {
            out.push(b);
        }
        if let Some(sweep) = &self.mc.b_sweep {
            for &b in sweep {
                if !out.iter().any(|&x| (x - b).abs() < 1e-12) {
                    out.push(b);
                }
            }
        }
        if out.is_empty() {
            out.push(0.0);
        }
        out
    }

    pub fn horizon(&self) -> f64 {
        self.checkpoint_times.last().copied().unwrap_or(0.0)
    }

    /// Checks every structural and numerical precondition, returning the
    /// complete list of violations.
    pub fn validate(&self) -> Result<ValidatedConfig, ModelError> {
        let mut issues = Vec::new();
        let d = self.potential.dimension;
        if d == 0 {
            issues.push("dimension must be >= 1".into());
        }
        if self.potential.support_radius <= 0.0 {
            issues.push("support_radius must be positive".into());
        }
        self.potential.alpha.check("alpha", &mut issues);
        self.potential.beta.check("beta", &mut issues);
        if self.front.direction.len() != d {
            issues.push(format!(
                "direction has {} components, dimension is {d}",
                self.front.direction.len()
            ));
        }
        let norm: f64 = self.front.direction.iter().map(|c| c * c).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            issues.push(format!("direction must be a unit vector (|u| = {norm})"));
        }
        if let BOffset::Power { p, .. } = self.front.offset {
            if p >= 1.0 {
                issues.push(format!("power offset exponent must satisfy p < 1 (got {p})"));
            }
        }
        if let BOffset::Log { c } | BOffset::Power { c, .. } = self.front.offset {
            if c <= 0.0 {
                issues.push("diverging offset coefficient must be positive".into());
            }
        }
        if self.x0.len() != d {
            issues.push(format!("x0 has {} components, dimension is {d}", self.x0.len()));
        }
        if self.checkpoint_times.is_empty() {
            issues.push("checkpoint_times must be nonempty".into());
        }
        if !self.checkpoint_times.windows(2).all(|w| w[1] > w[0]) {
            issues.push("checkpoint_times must be strictly increasing".into());
        }
        if self.checkpoint_times.first().copied().unwrap_or(2.0) <= 1.0 {
            issues.push("checkpoint times must exceed 1 (front schedule log term)".into());
        }
        if self.k_max < 1 {
            issues.push("k_max must be >= 1".into());
        }
        if self.ball_radius <= 0.0 {
            issues.push("ball_radius must be positive".into());
        }
        let g = &self.grid;
        if g.spacing <= 0.0 || g.half_width <= 0.0 || g.dt <= 0.0 || g.r_max <= 0.0 {
            issues.push("grid spacing, half_width, dt, r_max must all be positive".into());
        }
        if g.epsilon <= 0.0 {
            issues.push("interior-cone margin epsilon must be positive".into());
        }
        if g.spacing > 0.0 && g.source_spacing > 0.0 {
            let ratio = g.source_spacing / g.spacing;
            if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 - 1e-9 {
                issues.push("source_spacing must be a whole multiple of spacing".into());
            }
        } else if g.source_spacing <= 0.0 {
            issues.push("source_spacing must be positive".into());
        }
        if g.dt > 0.0 && g.spacing > 0.0 && g.t0() < 9.0 * g.spacing * g.spacing {
            issues.push(format!(
                "delta smoothing time t0 = {} under-resolves spacing {} (need t0 >= 9 h^2)",
                g.t0(),
                g.spacing
            ));
        }
        if self.potential.support_radius >= g.half_width {
            issues.push("support must lie strictly inside the grid".into());
        }
        // Domain-of-dependence guard. The principal eigenvalue is bounded by
        // sup v, so the front cannot outrun sqrt(sup_v / 2) t; require the
        // ball (with every offset applied) plus a 6 sqrt(T) diffusive buffer
        // to fit inside the grid at the horizon.
        let sup_v = self.potential.sup_v();
        let t_end = self.horizon();
        if t_end > 1.0 && sup_v > 0.0 {
            let speed_bound = (sup_v / 2.0).sqrt();
            let worst_offset = self
                .ball_offsets()
                .iter()
                .fold(0.0_f64, |m, &b| m.max(-b).max(0.0));
            let reach = speed_bound * t_end + worst_offset + self.ball_radius + 6.0 * t_end.sqrt();
            if g.half_width < reach {
                issues.push(format!(
                    "grid half_width {} too small: front bound {reach:.2} at horizon {t_end} \
                     (speed bound {speed_bound:.3}, buffer 6 sqrt(T))",
                    g.half_width
                ));
            }
        }
        let x0_norm = self.x0.iter().map(|c| c * c).sum::<f64>().sqrt();
        if x0_norm > g.half_width - 6.0 * self.horizon().max(1.0).sqrt() {
            issues.push("x0 too close to the grid boundary".into());
        }
        if self.mc.replicas == 0 {
            issues.push("mc.replicas must be >= 1".into());
        }
        if self.mc.batches < 30 {
            issues.push("mc.batches must be >= 30 for batch-means error bars".into());
        }
        if self.mc.replicas > 0 && self.mc.replicas < self.mc.batches {
            issues.push("mc.replicas must be >= mc.batches".into());
        }
        if self.mc.max_particles == 0 {
            issues.push("mc.max_particles must be >= 1".into());
        }
        if self.rel_tol <= 0.0 || self.z_tol <= 0.0 {
            issues.push("rel_tol and z_tol must be positive".into());
        }
        if d >= 2 {
            if let Some(first) = self.checkpoint_times.first() {
                if *first <= 1.0 {
                    issues.push("log correction requires checkpoints > 1".into());
                }
            }
        }
        if issues.is_empty() {
            Ok(ValidatedConfig {
                sup_alpha: self.potential.sup_alpha(),
                sup_beta: self.potential.sup_beta(),
                sup_v,
                horizon: t_end,
                proposal_rate: self.potential.sup_alpha() + self.potential.sup_beta(),
                config: self.clone(),
            })
        } else {
            Err(ModelError::Invalid(issues))
        }
    }
}

/// A configuration that passed validation, with derived bounds attached.
/// Embedded verbatim in every emitted report as provenance.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ValidatedConfig {
    pub sup_alpha: f64,
    pub sup_beta: f64,
    pub sup_v: f64,
    pub horizon: f64,
    /// Uniformized per-particle proposal rate `sup alpha + sup beta`.
    pub proposal_rate: f64,
    pub config: ExperimentConfig,
}

/// Applies `PREFIX_SECTION_KEY` / `PREFIX_KEY` environment overrides to a
/// parsed TOML tree. Values are parsed as TOML literals, falling back to
/// strings.
fn apply_env_overrides(
    mut root: toml::Value,
    prefix: &str,
    vars: &[(String, String)],
) -> Result<toml::Value, ModelError> {
    const SECTIONS: [&str; 4] = ["potential", "front", "grid", "mc"];
    for (name, raw) in vars {
        let Some(rest) = name.strip_prefix(prefix) else { continue };
        let rest = rest.to_ascii_lowercase();
        let (section, key) = match rest.split_once('_') {
            Some((head, tail)) if SECTIONS.contains(&head) => (Some(head.to_string()), tail.to_string()),
            _ => (None, rest.clone()),
        };
        let parsed: toml::Value = match format!("x = {raw}").parse::<toml::Table>() {
            Ok(mut t) => t.remove("x").unwrap(),
            Err(_) => toml::Value::String(raw.clone()),
        };
        let table = root
            .as_table_mut()
            .ok_or_else(|| ModelError::Parse("config root must be a table".into()))?;
        match section {
            Some(s) => {
                let entry = table
                    .entry(s.clone())
                    .or_insert_with(|| toml::Value::Table(Default::default()));
                let sub = entry.as_table_mut().ok_or_else(|| {
                    ModelError::Parse(format!("config section {s} is not a table"))
                })?;
                sub.insert(key, parsed);
            }
            None => {
                table.insert(key, parsed);
            }
        }
    }
    Ok(root)
}

/// Reference configuration: unit square well of unit branching rate in one
/// dimension, no killing. Used pervasively in tests and examples.
pub fn reference_config() -> ExperimentConfig {
    ExperimentConfig {
        x0: vec![0.0],
        ball_radius: 1.0,
        checkpoint_times: vec![4.0, 8.0, 12.0],
        k_max: 3,
        rel_tol: default_rel_tol(),
        z_tol: default_z_tol(),
        potential: PotentialSpec::square_well(1, 1.0, 0.0, 1.0),
        front: FrontSchedule {
            direction: vec![1.0],
            offset: BOffset::Constant { b: 0.0 },
        },
        grid: GridSpec {
            half_width: 40.0,
            spacing: 0.01,
            dt: 1e-3,
            t0: None,
            epsilon: 0.1,
            r_max: 40.0,
            source_spacing: 0.1,
        },
        mc: McParams {
            replicas: 5000,
            seed: 0x5eed_2026,
            max_particles: default_max_particles(),
            batches: default_batches(),
            b_sweep: Some(vec![0.0, 1.0, 2.0]),
            raw_rows: 0,
        },
    }
}
