//! Stage orchestration: eigen, kernel, moments, simulate, compare.
//!
//! Each stage consumes the validated configuration plus upstream artifacts
//! and produces a serializable artifact. Artifacts are cached on disk keyed
//! by a content hash of the exact inputs that influence them (including the
//! hashes of upstream stages), so reruns with an unchanged configuration hit
//! every cache and sweeping one section only recomputes what depends on it.
//! Reports contain no timestamps or machine identifiers: a rerun with the
//! same configuration and seed is byte-identical.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::heatkernel::{first_moment, solve_density, FirstMoment};
use crate::mcsim::{
    estimate_eta_moment, martingale_estimate, median_front_speed, presence_profile,
    run_ensemble, BallTrack, MomentEstimate, SimParams,
};
use crate::model::{ExperimentConfig, ModelError, Profile, ValidatedConfig};
use crate::moments::{
    eta_moment_theory, front_q, front_theta, limit_front_moment, moment_stage, MomentData,
    StirlingTable,
};
use crate::spectral::{spectral_stage, square_well_oracle, SpectralData};

/// Bumped whenever a stage's numerical behavior changes, so stale caches
/// from older binaries are never reused.
const CACHE_VERSION: &str = "1";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(#[from] ModelError),
    #[error("stage {stage}: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("output: {0}")]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// Process exit code: 2 for configuration problems, 3 for numerical or
    /// I/O stage failures. (0 = all comparisons pass and 1 = comparison
    /// failures are decided from the report, not from errors.)
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            _ => 3,
        }
    }
}

fn stage_err<E: std::fmt::Display>(stage: &'static str) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError::Stage { stage, message: e.to_string() }
}

/// Hex content hash of a serializable payload, namespaced by stage name and
/// cache version, chained over upstream stage hashes.
fn stage_key<T: Serialize>(stage: &str, payload: &T, upstream: &[&str]) -> String {
    let mut h = Sha256::new();
    h.update(CACHE_VERSION.as_bytes());
    h.update(b"/");
    h.update(stage.as_bytes());
    h.update(b"/");
    h.update(serde_json::to_vec(payload).expect("stage payloads are serializable"));
    for u in upstream {
        h.update(b"/");
        h.update(u.as_bytes());
    }
    let digest = h.finalize();
    let mut out = String::with_capacity(16);
    for byte in digest.iter().take(8) {
        let _ = write!(out, "{byte:02x}");
    }
    out
}

/// Canonical JSON: pretty-printed with struct-declaration key order and a
/// trailing newline. No maps appear in any artifact, so the byte stream is a
/// pure function of the data.
pub fn to_canonical_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifacts are serializable");
    s.push('\n');
    s
}

// ---------------------------------------------------------------------------
// stage artifacts

/// Spectral stage summary. The embedded `SpectralData` carries the full
/// ground-state table used by downstream stages.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenArtifact {
    pub spectral: SpectralData,
    pub lambda0: f64,
    /// Tail decay rate `sqrt(2 lambda0)`.
    pub decay_rate: f64,
    /// Front speed `sqrt(lambda0 / 2)`.
    pub front_speed: f64,
    pub psi_x0: f64,
    pub gamma: f64,
    pub residual: f64,
    /// Closed-form eigenvalue when the potential is a pure square well in
    /// one dimension (transcendental matching condition), for display.
    pub oracle_lambda0: Option<f64>,
}

/// First-moment stage summary: the expected-density solution evaluated as
/// ball first moments at every checkpoint and offset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelArtifact {
    pub x0: f64,
    pub checkpoints: Vec<f64>,
    /// Ball centers, indexed `[checkpoint][offset]`.
    pub centers: Vec<Vec<f64>>,
    /// PDE first moments with their asymptotic companions,
    /// indexed `[checkpoint][offset]`.
    pub first_moments: Vec<Vec<FirstMoment>>,
    /// Expected total population per checkpoint.
    pub total_mass: Vec<f64>,
    /// Physical density slices at the checkpoints, on the interior grid.
    pub slices: Vec<Vec<f64>>,
    pub grid_start: f64,
    pub grid_spacing: f64,
    pub boundary_ratio: f64,
}

/// Limit-moment stage summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentsArtifact {
    pub data: MomentData,
    /// Offsets `b` behind the front, matching the simulate sweep.
    pub offsets: Vec<f64>,
    /// `Theta(b)` per offset.
    pub theta: Vec<f64>,
    /// Limit moments of the normalized count at `x0`,
    /// indexed `[offset][k-1]`.
    pub limit_moments: Vec<Vec<f64>>,
}

/// Simulation stage summary (per-replica data is reduced immediately; only
/// estimator summaries are retained and cached).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateArtifact {
    pub replicas: u64,
    pub seed: u64,
    pub excluded: usize,
    pub checkpoints: Vec<f64>,
    /// Ball centers, indexed `[checkpoint][offset]`.
    pub centers: Vec<Vec<f64>>,
    /// Surviving-replica fraction per checkpoint.
    pub survival: Vec<f64>,
    /// First-moment normalizations used for eta, `[checkpoint][offset]`.
    pub m1_used: Vec<Vec<f64>>,
    /// Empirical moments of eta, indexed `[checkpoint][offset][k-1]`.
    pub eta_moments: Vec<Vec<Vec<MomentEstimate>>>,
    /// Additive martingale estimate per checkpoint.
    pub martingale: Vec<MomentEstimate>,
    /// Its constant expectation `psi(x0)`.
    pub martingale_target: f64,
    /// Median of `rightmost / t` over survivors at the last checkpoint.
    pub front_speed_median: Option<f64>,
    /// Fraction of replicas with a particle in the ball,
    /// indexed `[checkpoint][offset]`.
    pub presence: Vec<Vec<f64>>,
}

// ---------------------------------------------------------------------------
// comparison report

/// Pass/fail policy: a cell passes when the empirical value is within
/// `rel_tol` of theory or within `z_tol` standard errors of it.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TolerancePolicy {
    pub rel_tol: f64,
    pub z_tol: f64,
}

impl Default for TolerancePolicy {
    fn default() -> Self {
        Self { rel_tol: 0.05, z_tol: 3.0 }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Verdict {
    /// `(empirical - theory) / stderr`; absent when stderr is zero.
    pub z: Option<f64>,
    pub rel_err: f64,
    pub pass: bool,
}

/// Applies the tolerance policy to one (theory, empirical, stderr) triple.
pub fn compare_value(theory: f64, empirical: f64, stderr: f64, policy: TolerancePolicy) -> Verdict {
    let abs = (empirical - theory).abs();
    let rel_err = if theory != 0.0 { abs / theory.abs() } else { abs };
    let z = if stderr > 0.0 { Some((empirical - theory) / stderr) } else { None };
    let pass = abs <= (policy.rel_tol * theory.abs()).max(policy.z_tol * stderr);
    Verdict { z, rel_err, pass }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub t: f64,
    pub k: usize,
    pub b: f64,
    pub ball_center: f64,
    /// Limit prediction `f^k_b` for this offset.
    pub theory: f64,
    /// Finite-time prediction with the growth factor at this checkpoint.
    pub theory_finite_t: f64,
    pub empirical: f64,
    pub stderr: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MartingaleCell {
    pub t: f64,
    pub mean: f64,
    pub stderr: f64,
    pub target: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrontSpeedCell {
    pub t: f64,
    pub median: f64,
    pub target: f64,
    pub rel_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageHashes {
    pub eigen: String,
    pub kernel: String,
    pub moments: String,
    pub simulate: String,
}

/// Everything needed to reproduce the report: the validated configuration
/// (including the seed) plus the content hashes of every intermediate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub package: String,
    pub version: String,
    pub config: ValidatedConfig,
    pub stages: StageHashes,
    pub deterministic_reduce: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub cells: Vec<ComparisonCell>,
    pub martingale: Vec<MartingaleCell>,
    pub front_speed: Option<FrontSpeedCell>,
    pub survival: Vec<f64>,
    pub presence: Vec<Vec<f64>>,
    pub excluded: usize,
    pub policy: TolerancePolicy,
    pub provenance: Provenance,
}

impl ComparisonReport {
    pub fn all_pass(&self) -> bool {
        self.cells.iter().all(|c| c.verdict.pass)
            && self.martingale.iter().all(|m| m.pass)
            && self.front_speed.as_ref().map_or(true, |f| f.pass)
    }

    /// CSV of the comparison cells, one row per (t, k, b).
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "t,k,b,ball_center,theory,theory_finite_t,empirical,stderr,z,rel_err,verdict\n",
        );
        for c in &self.cells {
            let z = c.verdict.z.map(|z| format!("{z}")).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                c.t,
                c.k,
                c.b,
                c.ball_center,
                c.theory,
                c.theory_finite_t,
                c.empirical,
                c.stderr,
                z,
                c.verdict.rel_err,
                if c.verdict.pass { "pass" } else { "fail" }
            );
        }
        s
    }

    /// Plot-data blocks (gnuplot style): for each (k, b), rows of
    /// `t  empirical  stderr  theory`, time-ordered.
    pub fn plot_data(&self) -> Vec<(String, String)> {
        let mut keys: Vec<(usize, f64)> = Vec::new();
        for c in &self.cells {
            if !keys.iter().any(|&(k, b)| k == c.k && b == c.b) {
                keys.push((c.k, c.b));
            }
        }
        keys.iter()
            .map(|&(k, b)| {
                let mut body = String::from("# t empirical stderr theory\n");
                let mut rows: Vec<&ComparisonCell> = self
                    .cells
                    .iter()
                    .filter(|c| c.k == k && c.b == b)
                    .collect();
                rows.sort_by(|a, c| a.t.partial_cmp(&c.t).unwrap());
                for c in rows {
                    let _ = writeln!(body, "{} {} {} {}", c.t, c.empirical, c.stderr, c.theory);
                }
                (format!("plot_k{k}_b{b}.dat"), body)
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// pipeline

/// Stage runner bound to one validated configuration and an optional output
/// directory (which enables caching).
#[derive(Debug)]
pub struct Pipeline {
    validated: ValidatedConfig,
    out_dir: Option<PathBuf>,
    pub verbose: bool,
    pub deterministic_reduce: bool,
    hashes: StageHashes,
}

fn blank_hashes() -> StageHashes {
    StageHashes {
        eigen: String::new(),
        kernel: String::new(),
        moments: String::new(),
        simulate: String::new(),
    }
}

impl Pipeline {
    pub fn new(config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<Self, PipelineError> {
        let validated = config.validate()?;
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir.join("cache"))?;
        }
        Ok(Self {
            validated,
            out_dir: out_dir.map(Path::to_path_buf),
            verbose: false,
            deterministic_reduce: true,
            hashes: blank_hashes(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.validated.config
    }

    pub fn validated(&self) -> &ValidatedConfig {
        &self.validated
    }

    fn x0(&self) -> f64 {
        self.validated.config.x0[0]
    }

    /// Loads a cached artifact or computes and stores it. The hash is
    /// recorded for provenance either way.
    fn cached<T, F>(
        &self,
        stage: &'static str,
        key: &str,
        compute: F,
    ) -> Result<T, PipelineError>
    where
        T: Serialize + DeserializeOwned,
        F: FnOnce() -> Result<T, PipelineError>,
    {
        let path = self
            .out_dir
            .as_ref()
            .map(|d| d.join("cache").join(format!("{stage}-{key}.json")));
        if let Some(p) = &path {
            if let Ok(text) = std::fs::read_to_string(p) {
                if let Ok(artifact) = serde_json::from_str::<T>(&text) {
                    if self.verbose {
                        eprintln!("[{stage}] cache hit {key}");
                    }
                    return Ok(artifact);
                }
            }
        }
        let started = Instant::now();
        let artifact = compute()?;
        if self.verbose {
            eprintln!("[{stage}] computed {key} in {:.1}s", started.elapsed().as_secs_f64());
        }
        if let Some(p) = &path {
            std::fs::write(p, to_canonical_json(&artifact))?;
        }
        Ok(artifact)
    }

    pub fn eigen(&mut self) -> Result<EigenArtifact, PipelineError> {
        let cfg = &self.validated.config;
        let key = stage_key(
            "eigen",
            &(&cfg.potential, &cfg.grid, cfg.ball_radius),
            &[],
        );
        self.hashes.eigen = key.clone();
        let x0 = self.x0();
        self.cached("eigen", &key, || {
            let spectral = spectral_stage(&cfg.potential, &cfg.grid, cfg.ball_radius)
                .map_err(stage_err("eigen"))?;
            let lambda0 = spectral.lambda0();
            let oracle = match (&cfg.potential.alpha, &cfg.potential.beta) {
                (Profile::Uniform { value }, Profile::Uniform { value: b })
                    if cfg.potential.dimension == 1 && *b == 0.0 =>
                {
                    Some(square_well_oracle(*value, cfg.potential.support_radius))
                }
                _ => None,
            };
            Ok(EigenArtifact {
                psi_x0: spectral.psi_at(&[x0]),
                lambda0,
                decay_rate: (2.0 * lambda0).sqrt(),
                front_speed: (lambda0 / 2.0).sqrt(),
                gamma: spectral.gamma,
                residual: spectral.pair.residual,
                oracle_lambda0: oracle,
                spectral,
            })
        })
    }

    /// Offsets observed by the sweep and the checkpoint ball centers
    /// `a(t) - b` (front-relative) for each. Requires a constant schedule
    /// offset whenever the ensemble is involved; time-varying offsets enter
    /// only through the theory-side schedule.
    fn sweep_geometry(
        &self,
        lambda0: f64,
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>), PipelineError> {
        let cfg = &self.validated.config;
        if !cfg.front.offset.is_constant() {
            return Err(PipelineError::Stage {
                stage: "kernel",
                message: "ensemble comparison needs a constant front offset; \
                          time-varying offsets are for theory curves only"
                    .into(),
            });
        }
        if cfg.front.direction[0] <= 0.0 {
            return Err(PipelineError::Stage {
                stage: "kernel",
                message: "front direction must be +1 in one dimension; \
                          mirror the potential profiles instead"
                    .into(),
            });
        }
        let offsets = cfg.ball_offsets();
        let mut centers = Vec::with_capacity(cfg.checkpoint_times.len());
        for &t in &cfg.checkpoint_times {
            let ab = cfg
                .front
                .radius_at(cfg.potential.dimension, lambda0, t)
                .map_err(stage_err("kernel"))?;
            let a = ab + cfg.front.offset.value(t);
            centers.push(offsets.iter().map(|&b| a - b).collect());
        }
        Ok((offsets, centers))
    }

    pub fn kernel(&mut self, eig: &EigenArtifact) -> Result<KernelArtifact, PipelineError> {
        let cfg = &self.validated.config;
        let key = stage_key(
            "kernel",
            &(&cfg.x0, &cfg.checkpoint_times, &cfg.front, cfg.ball_radius, &cfg.mc.b_sweep),
            &[&self.hashes.eigen],
        );
        self.hashes.kernel = key.clone();
        let x0 = self.x0();
        let (_, centers) = self.sweep_geometry(eig.lambda0)?;
        self.cached("kernel", &key, || {
            let horizon = self.validated.horizon;
            let table = solve_density(
                &cfg.potential,
                &cfg.grid,
                &cfg.x0,
                horizon,
                eig.lambda0,
                &cfg.checkpoint_times,
            )
            .map_err(stage_err("kernel"))?;
            let mut first_moments = Vec::new();
            let mut total_mass = Vec::new();
            let mut slices = Vec::new();
            for (ci, &t) in cfg.checkpoint_times.iter().enumerate() {
                let row: Result<Vec<FirstMoment>, PipelineError> = centers[ci]
                    .iter()
                    .map(|&c| {
                        first_moment(&table, &eig.spectral, t, c, cfg.ball_radius)
                            .map_err(stage_err("kernel"))
                    })
                    .collect();
                first_moments.push(row?);
                total_mass.push(table.total_mass(t).map_err(stage_err("kernel"))?);
                let w = table.w_slice_at(t).map_err(stage_err("kernel"))?;
                let growth = (table.shift * t).exp();
                slices.push(w[1..w.len() - 1].iter().map(|&v| v * growth).collect());
            }
            Ok(KernelArtifact {
                x0,
                checkpoints: cfg.checkpoint_times.clone(),
                centers: centers.clone(),
                first_moments,
                total_mass,
                slices,
                grid_start: table.start + table.spacing,
                grid_spacing: table.spacing,
                boundary_ratio: table.boundary_ratio,
            })
        })
    }

    pub fn moments(&mut self, eig: &EigenArtifact) -> Result<MomentsArtifact, PipelineError> {
        let cfg = &self.validated.config;
        let key = stage_key(
            "moments",
            &(cfg.k_max, &cfg.x0, &cfg.mc.b_sweep, &cfg.front.offset),
            &[&self.hashes.eigen],
        );
        self.hashes.moments = key.clone();
        let x0 = self.x0();
        let (offsets, _) = self.sweep_geometry(eig.lambda0)?;
        self.cached("moments", &key, || {
            let mut probes = vec![x0, 0.0, 0.5, -0.5, 1.0, -1.0];
            probes.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
            let data = moment_stage(&cfg.potential, &cfg.grid, &eig.spectral, cfg.k_max, &probes)
                .map_err(stage_err("moments"))?;
            let stirling = StirlingTable::new(cfg.k_max);
            let theta: Vec<f64> =
                offsets.iter().map(|&b| front_theta(&eig.spectral, b)).collect();
            let limit_moments: Vec<Vec<f64>> = offsets
                .iter()
                .map(|&b| {
                    (1..=cfg.k_max)
                        .map(|k| limit_front_moment(&data, &eig.spectral, &stirling, k, b, x0))
                        .collect()
                })
                .collect();
            Ok(MomentsArtifact { data, offsets, theta, limit_moments })
        })
    }

    /// Ensemble parameters implied by the configuration (offsets resolved,
    /// seed and caps applied). The raw-export path reuses this.
    pub fn sim_params(&self, eig: &EigenArtifact) -> Result<SimParams, PipelineError> {
        let cfg = &self.validated.config;
        let (offsets, _) = self.sweep_geometry(eig.lambda0)?;
        Ok(SimParams {
            potential: cfg.potential.clone(),
            lambda0: eig.lambda0,
            x0: self.x0(),
            ball_radius: cfg.ball_radius,
            track: BallTrack::Front,
            offsets,
            checkpoints: cfg.checkpoint_times.clone(),
            seed: cfg.mc.seed,
            replicas: cfg.mc.replicas as u64,
            max_particles: cfg.mc.max_particles,
        })
    }

    pub fn simulate(
        &mut self,
        eig: &EigenArtifact,
        kernel: &KernelArtifact,
    ) -> Result<SimulateArtifact, PipelineError> {
        let cfg = &self.validated.config;
        let key = stage_key(
            "simulate",
            &(&cfg.mc, &cfg.checkpoint_times, cfg.ball_radius, &cfg.x0, &cfg.front),
            &[&self.hashes.eigen, &self.hashes.kernel],
        );
        self.hashes.simulate = key.clone();
        let params = self.sim_params(eig)?;
        self.cached("simulate", &key, || {
            let offsets = &params.offsets;
            let ensemble =
                run_ensemble(&params, Some(&eig.spectral)).map_err(stage_err("simulate"))?;
            let usable = ensemble.outcomes.iter().filter(|o| !o.excluded).count();

            let mut eta_moments = Vec::new();
            let mut m1_used = Vec::new();
            let mut survival = Vec::new();
            let mut martingale = Vec::new();
            let mut presence = Vec::new();
            for (ci, _) in cfg.checkpoint_times.iter().enumerate() {
                let mut per_offset = Vec::new();
                let mut m1_row = Vec::new();
                for (oi, _) in offsets.iter().enumerate() {
                    let m1 = kernel.first_moments[ci][oi].value;
                    if !(m1 > 0.0) {
                        return Err(PipelineError::Stage {
                            stage: "simulate",
                            message: format!(
                                "first moment nonpositive ({m1}) at checkpoint {ci}, offset {oi}"
                            ),
                        });
                    }
                    m1_row.push(m1);
                    let ests: Result<Vec<MomentEstimate>, _> = (1..=cfg.k_max)
                        .map(|k| {
                            estimate_eta_moment(&ensemble, ci, oi, m1, k as u32, cfg.mc.batches)
                                .map_err(stage_err("simulate"))
                        })
                        .collect();
                    per_offset.push(ests?);
                }
                let surv = per_offset[0][0].survivors;
                survival.push(surv as f64 / usable.max(1) as f64);
                eta_moments.push(per_offset);
                m1_used.push(m1_row);
                martingale.push(
                    martingale_estimate(&ensemble, ci, cfg.mc.batches)
                        .map_err(stage_err("simulate"))?,
                );
                presence.push(presence_profile(&ensemble, ci));
            }
            let last = cfg.checkpoint_times.len() - 1;
            Ok(SimulateArtifact {
                replicas: cfg.mc.replicas as u64,
                seed: cfg.mc.seed,
                excluded: ensemble.excluded,
                checkpoints: cfg.checkpoint_times.clone(),
                centers: ensemble.centers.clone(),
                survival,
                m1_used,
                eta_moments,
                martingale,
                martingale_target: eig.psi_x0,
                front_speed_median: median_front_speed(&ensemble, last),
                presence,
            })
        })
    }

    pub fn compare(
        &self,
        eig: &EigenArtifact,
        moments: &MomentsArtifact,
        sim: &SimulateArtifact,
    ) -> ComparisonReport {
        let cfg = &self.validated.config;
        let policy = TolerancePolicy { rel_tol: cfg.rel_tol, z_tol: cfg.z_tol };
        let stirling = StirlingTable::new(cfg.k_max);
        let x0 = self.x0();
        let mut cells = Vec::new();
        for (ci, &t) in sim.checkpoints.iter().enumerate() {
            for (oi, &b) in moments.offsets.iter().enumerate() {
                let center = sim.centers[ci][oi];
                let q = front_q(&eig.spectral, t, center, cfg.ball_radius);
                for k in 1..=cfg.k_max {
                    let est = &sim.eta_moments[ci][oi][k - 1];
                    let theory = moments.limit_moments[oi][k - 1];
                    let finite = eta_moment_theory(&moments.data, &stirling, k, x0, q);
                    cells.push(ComparisonCell {
                        t,
                        k,
                        b,
                        ball_center: center,
                        theory,
                        theory_finite_t: finite,
                        empirical: est.mean,
                        stderr: est.stderr,
                        verdict: compare_value(theory, est.mean, est.stderr, policy),
                    });
                }
            }
        }
        let martingale = sim
            .checkpoints
            .iter()
            .zip(&sim.martingale)
            .map(|(&t, est)| MartingaleCell {
                t,
                mean: est.mean,
                stderr: est.stderr,
                target: sim.martingale_target,
                pass: (est.mean - sim.martingale_target).abs() <= policy.z_tol * est.stderr,
            })
            .collect();
        let front_speed = sim.front_speed_median.map(|median| {
            let target = eig.front_speed;
            let rel_err = (median - target).abs() / target;
            FrontSpeedCell {
                t: *sim.checkpoints.last().unwrap(),
                median,
                target,
                rel_err,
                pass: rel_err <= 0.10,
            }
        });
        ComparisonReport {
            cells,
            martingale,
            front_speed,
            survival: sim.survival.clone(),
            presence: sim.presence.clone(),
            excluded: sim.excluded,
            policy,
            provenance: Provenance {
                package: env!("CARGO_PKG_NAME").to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                config: self.validated.clone(),
                stages: self.hashes.clone(),
                deterministic_reduce: self.deterministic_reduce,
            },
        }
    }

    /// Runs every stage in order and assembles the report.
    pub fn run(&mut self) -> Result<ComparisonReport, PipelineError> {
        let eig = self.eigen()?;
        let kernel = self.kernel(&eig)?;
        let moments = self.moments(&eig)?;
        let sim = self.simulate(&eig, &kernel)?;
        Ok(self.compare(&eig, &moments, &sim))
    }
}

/// Convenience wrapper: parse, validate, run all stages, return the report.
pub fn run_pipeline(
    config_path: &Path,
    out_dir: Option<&Path>,
) -> Result<ComparisonReport, PipelineError> {
    let config = ExperimentConfig::from_path(config_path)?;
    let mut pipeline = Pipeline::new(&config, out_dir)?;
    pipeline.run()
}

/// Writes the report files (canonical JSON, CSV table, plot data) into the
/// output directory, returning the written paths.
pub fn emit_report(report: &ComparisonReport, out_dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let json_path = out_dir.join("report.json");
    std::fs::write(&json_path, to_canonical_json(report))?;
    written.push(json_path);
    let csv_path = out_dir.join("report.csv");
    std::fs::write(&csv_path, report.to_csv())?;
    written.push(csv_path);
    for (name, body) in report.plot_data() {
        let p = out_dir.join(name);
        std::fs::write(&p, body)?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{reference_config, GridSpec, McParams};

    /// Coarse, fast configuration exercising every stage.
    fn small_config() -> ExperimentConfig {
        let mut cfg = reference_config();
        cfg.checkpoint_times = vec![2.0, 3.0];
        cfg.k_max = 2;
        cfg.grid = GridSpec {
            half_width: 20.0,
            spacing: 0.05,
            dt: 5e-3,
            t0: None,
            epsilon: 0.1,
            r_max: 8.0,
            source_spacing: 0.25,
        };
        cfg.mc = McParams {
            replicas: 240,
            seed: 99,
            max_particles: 100_000,
            batches: 30,
            b_sweep: Some(vec![0.0, 1.0]),
            raw_rows: 0,
        };
        cfg
    }

    #[test]
    fn verdict_policy_matches_its_contract() {
        let policy = TolerancePolicy::default();
        assert!(compare_value(1.0, 1.01, 0.02, policy).pass);
        let fail = compare_value(2.0, 2.5, 0.05, policy);
        assert!(!fail.pass);
        assert!((fail.verdict_z() - 10.0).abs() < 1e-12);
        assert!((fail.rel_err - 0.25).abs() < 1e-12);
        // outside rel_tol but inside 3 sigma
        assert!(compare_value(2.0, 2.2, 0.1, policy).pass);
        // zero stderr: the z channel is absent, rel alone decides
        let exact = compare_value(2.0, 2.0, 0.0, policy);
        assert!(exact.pass && exact.z.is_none());
    }

    impl Verdict {
        fn verdict_z(&self) -> f64 {
            self.z.unwrap()
        }
    }

    #[test]
    fn stage_keys_separate_stages_and_payloads() {
        let a = stage_key("eigen", &(1.0, 2.0), &[]);
        assert_eq!(a, stage_key("eigen", &(1.0, 2.0), &[]));
        assert_ne!(a, stage_key("kernel", &(1.0, 2.0), &[]));
        assert_ne!(a, stage_key("eigen", &(1.0, 3.0), &[]));
        assert_ne!(a, stage_key("eigen", &(1.0, 2.0), &["upstream"]));
        assert_eq!(a.len(), 16);
    }

    #[test]
    fn small_pipeline_report_has_the_right_shape() {
        let cfg = small_config();
        let mut p = Pipeline::new(&cfg, None).unwrap();
        let report = p.run().unwrap();
        // checkpoints x offsets x orders
        assert_eq!(report.cells.len(), 2 * 2 * 2);
        assert_eq!(report.martingale.len(), 2);
        assert!(report.front_speed.is_some());
        assert_eq!(report.survival.len(), 2);
        // k = 1 rows compare against exactly 1 (normalization identity)
        for c in report.cells.iter().filter(|c| c.k == 1) {
            assert!((c.theory - 1.0).abs() < 1e-12);
        }
        // provenance carries all four stage hashes
        let h = &report.provenance.stages;
        for s in [&h.eigen, &h.kernel, &h.moments, &h.simulate] {
            assert_eq!(s.len(), 16);
        }
        // survival in a pure-branching run is total
        assert!(report.survival.iter().all(|&s| s == 1.0));
        let csv = report.to_csv();
        assert_eq!(csv.lines().count(), 1 + report.cells.len());
        let plots = report.plot_data();
        assert_eq!(plots.len(), 2 * 2);
        for (_, body) in &plots {
            assert_eq!(body.lines().count(), 1 + 2);
        }
    }

    #[test]
    fn reruns_are_byte_identical_and_cache_hits() {
        let cfg = small_config();
        let dir = tempfile::tempdir().unwrap();
        let mut p1 = Pipeline::new(&cfg, Some(dir.path())).unwrap();
        let r1 = p1.run().unwrap();
        let first = to_canonical_json(&r1);
        // cache directory now holds one artifact per stage
        let count = std::fs::read_dir(dir.path().join("cache")).unwrap().count();
        assert_eq!(count, 4);
        let mut p2 = Pipeline::new(&cfg, Some(dir.path())).unwrap();
        let r2 = p2.run().unwrap();
        assert_eq!(first, to_canonical_json(&r2));
        // a cached rerun leaves the cache untouched
        let count2 = std::fs::read_dir(dir.path().join("cache")).unwrap().count();
        assert_eq!(count2, 4);
        // in-memory rerun agrees too
        let mut p3 = Pipeline::new(&cfg, None).unwrap();
        let r3 = p3.run().unwrap();
        assert_eq!(first, to_canonical_json(&r3));
    }

    #[test]
    fn seed_changes_only_resimulate() {
        let cfg = small_config();
        let dir = tempfile::tempdir().unwrap();
        let mut p1 = Pipeline::new(&cfg, Some(dir.path())).unwrap();
        let r1 = p1.run().unwrap();
        let mut cfg2 = cfg.clone();
        cfg2.mc.seed = 100;
        let mut p2 = Pipeline::new(&cfg2, Some(dir.path())).unwrap();
        let r2 = p2.run().unwrap();
        let (h1, h2) = (&r1.provenance.stages, &r2.provenance.stages);
        assert_eq!(h1.eigen, h2.eigen);
        assert_eq!(h1.kernel, h2.kernel);
        assert_eq!(h1.moments, h2.moments);
        assert_ne!(h1.simulate, h2.simulate);
        // theory identical, empirical differs
        assert_eq!(r1.cells[0].theory, r2.cells[0].theory);
        assert!(r1.cells.iter().zip(&r2.cells).any(|(a, b)| a.empirical != b.empirical));
    }

    #[test]
    fn report_json_round_trips() {
        let cfg = small_config();
        let mut p = Pipeline::new(&cfg, None).unwrap();
        let report = p.run().unwrap();
        let text = to_canonical_json(&report);
        let back: ComparisonReport = serde_json::from_str(&text).unwrap();
        assert_eq!(text, to_canonical_json(&back));
    }

    #[test]
    fn emit_writes_all_files() {
        let cfg = small_config();
        let dir = tempfile::tempdir().unwrap();
        let mut p = Pipeline::new(&cfg, None).unwrap();
        let report = p.run().unwrap();
        let files = emit_report(&report, dir.path()).unwrap();
        assert!(files.iter().all(|f| f.exists()));
        assert_eq!(files.len(), 2 + report.plot_data().len());
    }

    #[test]
    fn config_errors_exit_two_and_stage_errors_three() {
        let mut bad = small_config();
        bad.checkpoint_times = vec![0.5];
        let err = Pipeline::new(&bad, None).unwrap_err();
        assert_eq!(err.exit_code(), 2);

        // a domain too small for the decay guard fails inside the stage
        let mut tiny = small_config();
        tiny.grid.half_width = 6.0;
        tiny.grid.r_max = 4.0;
        match Pipeline::new(&tiny, None) {
            Err(e) => assert_eq!(e.exit_code(), 2),
            Ok(mut p) => {
                let e = p.run().unwrap_err();
                assert_eq!(e.exit_code(), 3);
            }
        }
    }

    #[test]
    fn finite_time_theory_approaches_the_limit() {
        let cfg = small_config();
        let mut p = Pipeline::new(&cfg, None).unwrap();
        let report = p.run().unwrap();
        // at the later checkpoint the finite-time curve is closer to the
        // limit for the k=2 cells
        for b in [0.0, 1.0] {
            let early = report
                .cells
                .iter()
                .find(|c| c.t == 2.0 && c.k == 2 && c.b == b)
                .unwrap();
            let late = report
                .cells
                .iter()
                .find(|c| c.t == 3.0 && c.k == 2 && c.b == b)
                .unwrap();
            assert!(
                (late.theory_finite_t - late.theory).abs()
                    <= (early.theory_finite_t - early.theory).abs() + 1e-12,
                "finite-t theory should contract toward the limit"
            );
        }
    }
}
