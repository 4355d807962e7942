//! Exact Monte Carlo simulation of branching Brownian motion with
//! space-dependent binary branching and killing.
//!
//! Events are generated by uniformization: every particle carries a proposal
//! clock of constant rate `Lambda = sup alpha + sup beta`, so the next
//! proposal across `N` particles is exponential with rate `Lambda N` and the
//! proposer is uniform among them. At a proposal the selected particle is
//! moved to the proposal time (one Gaussian increment over its own elapsed
//! gap, which is exact for Brownian motion), and the event thins to a branch
//! with probability `alpha(x)/Lambda`, a kill with probability
//! `beta(x)/Lambda`, and a phantom otherwise. Unselected particles are not
//! touched: each particle stores the last time it was materialized, and is
//! only advanced when selected or at a checkpoint. Exponential memorylessness
//! makes discarding the pending proposal at a checkpoint exact.
//!
//! All randomness is counter-based: a draw is a hash of
//! `(seed, replica, domain, lineage, counter)`, so replicas are reproducible
//! in any execution order and offspring inherit independent streams derived
//! from their parent's lineage tag.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{FrontSchedule, ModelError, PotentialSpec};
use crate::spectral::SpectralData;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("simulation supports one dimension only (got {0})")]
    UnsupportedDimension(usize),
    #[error(transparent)]
    Schedule(#[from] ModelError),
    #[error("no checkpoints requested")]
    NoCheckpoints,
    #[error("batch count {batches} exceeds usable replicas {replicas}")]
    TooFewReplicas { batches: usize, replicas: usize },
}

pub mod rng {
    //! Counter-based random streams: stateless hashing of
    //! `(key, counter)` pairs, so any draw is addressable and replayable.

    pub const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

    /// Finalizer with full avalanche (the SplitMix64 output stage).
    #[inline]
    pub fn mix64(mut z: u64) -> u64 {
        z ^= z >> 30;
        z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z ^= z >> 27;
        z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        z
    }

    /// Derives the key of the stream identified by
    /// `(seed, replica, domain, lineage)`.
    pub fn stream_key(seed: u64, replica: u64, domain: u64, lineage: u64) -> u64 {
        let mut k = mix64(seed ^ 0xA076_1D64_78BD_642F);
        k = mix64(k ^ replica.wrapping_mul(GOLDEN));
        k = mix64(k ^ domain.wrapping_mul(GOLDEN));
        k = mix64(k ^ lineage.wrapping_mul(GOLDEN));
        k
    }

    /// The `i`-th raw word of a stream.
    #[inline]
    pub fn raw(key: u64, i: u64) -> u64 {
        mix64(key.wrapping_add(i.wrapping_mul(GOLDEN)))
    }

    /// Maps a raw word to the open interval (0, 1). Uses 52 bits: the
    /// half-offset then stays exactly representable at both endpoints, so
    /// neither 0 nor 1 can be produced by rounding.
    #[inline]
    pub fn to_uniform(word: u64) -> f64 {
        ((word >> 12) as f64 + 0.5) * (1.0 / 4503599627370496.0)
    }

    /// Sequential view of one stream.
    #[derive(Debug, Clone)]
    pub struct CounterRng {
        key: u64,
        i: u64,
    }

    impl CounterRng {
        pub fn new(seed: u64, replica: u64, domain: u64, lineage: u64) -> Self {
            Self { key: stream_key(seed, replica, domain, lineage), i: 0 }
        }

        #[inline]
        pub fn next_u64(&mut self) -> u64 {
            let w = raw(self.key, self.i);
            self.i += 1;
            w
        }

        #[inline]
        pub fn uniform(&mut self) -> f64 {
            to_uniform(self.next_u64())
        }

        /// Exponential with the given rate; `rate = 0` gives infinity.
        #[inline]
        pub fn exponential(&mut self, rate: f64) -> f64 {
            -self.uniform().ln() / rate
        }

        /// Standard Gaussian; consumes two counters per draw.
        #[inline]
        pub fn gaussian(&mut self) -> f64 {
            let u1 = self.uniform();
            let u2 = self.uniform();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        }
    }

    /// Gaussian for a particle's `m`-th move, addressed directly by lineage
    /// and move counter (no per-particle state beyond the two integers).
    #[inline]
    pub fn move_gaussian(seed: u64, replica: u64, lineage: u64, m: u64) -> f64 {
        let key = stream_key(seed, replica, super::DOMAIN_MOVE, lineage);
        let u1 = to_uniform(raw(key, 2 * m));
        let u2 = to_uniform(raw(key, 2 * m + 1));
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Lineage tag of the `c`-th offspring of a parent lineage.
    #[inline]
    pub fn child_lineage(parent: u64, c: u64) -> u64 {
        mix64(parent ^ c.wrapping_mul(GOLDEN))
    }
}

pub(crate) const DOMAIN_EVENTS: u64 = 1;
pub(crate) const DOMAIN_MOVE: u64 = 2;

/// How observation ball centers move with time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum BallTrack {
    /// Centers ride the front: `y_b(t) = a(t) - b` for each offset `b`.
    Front,
    /// Centers sit at `c - b` for all times.
    Fixed(f64),
}

/// Ensemble parameters. Offsets list the `b` values observed simultaneously
/// on the same trajectories (common random numbers across the sweep).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimParams {
    pub potential: PotentialSpec,
    pub lambda0: f64,
    pub x0: f64,
    pub ball_radius: f64,
    pub track: BallTrack,
    pub offsets: Vec<f64>,
    pub checkpoints: Vec<f64>,
    pub seed: u64,
    pub replicas: u64,
    pub max_particles: usize,
}

/// Ball centers per checkpoint and offset.
pub fn resolve_centers(params: &SimParams) -> Result<Vec<Vec<f64>>, SimError> {
    if params.potential.dimension != 1 {
        return Err(SimError::UnsupportedDimension(params.potential.dimension));
    }
    if params.checkpoints.is_empty() {
        return Err(SimError::NoCheckpoints);
    }
    let mut centers = Vec::with_capacity(params.checkpoints.len());
    for &t in &params.checkpoints {
        let base = match &params.track {
            BallTrack::Fixed(c) => *c,
            BallTrack::Front => {
                let sched = FrontSchedule {
                    direction: vec![1.0],
                    offset: crate::model::BOffset::Constant { b: 0.0 },
                };
                sched.radius_at(1, params.lambda0, t)?
            }
        };
        centers.push(params.offsets.iter().map(|&b| base - b).collect());
    }
    Ok(centers)
}

/// Per-checkpoint observables of one replica.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointStats {
    pub t: f64,
    pub n_total: u64,
    /// Count inside each observation ball, one per offset.
    pub counts: Vec<u64>,
    /// Largest particle coordinate, absent when the population is extinct.
    pub rightmost: Option<f64>,
    /// `e^{-lambda0 t} sum_i psi(X_i)`; zero when extinct.
    pub martingale: f64,
    /// Particles strictly beyond the first ball's far edge.
    pub beyond_front: u64,
}

/// One replica's full observation record.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ReplicaOutcome {
    pub replica: u64,
    /// Hit the population cap; checkpoints after that moment are absent.
    pub excluded: bool,
    pub checkpoints: Vec<CheckpointStats>,
}

struct Population {
    pos: Vec<f64>,
    last_t: Vec<f64>,
    lineage: Vec<u64>,
    move_ctr: Vec<u64>,
    child_ctr: Vec<u64>,
}

impl Population {
    fn single(x0: f64) -> Self {
        Self {
            pos: vec![x0],
            last_t: vec![0.0],
            lineage: vec![rng::mix64(1)],
            move_ctr: vec![0],
            child_ctr: vec![0],
        }
    }

    fn len(&self) -> usize {
        self.pos.len()
    }

    /// Brings particle `i` to time `t` with one exact Brownian increment.
    #[inline]
    fn advance(&mut self, seed: u64, replica: u64, i: usize, t: f64) {
        let gap = t - self.last_t[i];
        if gap > 0.0 {
            let z = rng::move_gaussian(seed, replica, self.lineage[i], self.move_ctr[i]);
            self.move_ctr[i] += 1;
            self.pos[i] += gap.sqrt() * z;
            self.last_t[i] = t;
        }
    }

    fn branch(&mut self, i: usize, t: f64) {
        self.child_ctr[i] += 1;
        let lineage = rng::child_lineage(self.lineage[i], self.child_ctr[i]);
        self.pos.push(self.pos[i]);
        self.last_t.push(t);
        self.lineage.push(lineage);
        self.move_ctr.push(0);
        self.child_ctr.push(0);
    }

    fn kill(&mut self, i: usize) {
        self.pos.swap_remove(i);
        self.last_t.swap_remove(i);
        self.lineage.swap_remove(i);
        self.move_ctr.swap_remove(i);
        self.child_ctr.swap_remove(i);
    }
}

fn snapshot(
    pop: &Population,
    t: f64,
    centers: &[f64],
    radius: f64,
    lambda0: f64,
    spectral: Option<&SpectralData>,
) -> CheckpointStats {
    let mut counts = vec![0_u64; centers.len()];
    let mut rightmost = f64::NEG_INFINITY;
    let mut psi_sum = 0.0;
    let mut beyond = 0_u64;
    let far_edge = centers.first().map(|&c| c + radius).unwrap_or(f64::INFINITY);
    for &x in &pop.pos {
        for (ci, &c) in centers.iter().enumerate() {
            if (x - c).abs() <= radius {
                counts[ci] += 1;
            }
        }
        if x > rightmost {
            rightmost = x;
        }
        if x > far_edge {
            beyond += 1;
        }
        if let Some(sp) = spectral {
            psi_sum += sp.psi_at(&[x]);
        }
    }
    CheckpointStats {
        t,
        n_total: pop.len() as u64,
        counts,
        rightmost: if pop.len() == 0 { None } else { Some(rightmost) },
        martingale: (-lambda0 * t).exp() * psi_sum,
        beyond_front: beyond,
    }
}

/// Simulates one replica to the last checkpoint.
pub fn simulate_replica(
    params: &SimParams,
    centers: &[Vec<f64>],
    spectral: Option<&SpectralData>,
    replica: u64,
) -> ReplicaOutcome {
    let sup_a = params.potential.sup_alpha();
    let sup_b = params.potential.sup_beta();
    let lam = sup_a + sup_b;
    let seed = params.seed;
    let mut events = rng::CounterRng::new(seed, replica, DOMAIN_EVENTS, 0);
    let mut pop = Population::single(params.x0);
    let mut t_now = 0.0_f64;
    let mut out = ReplicaOutcome { replica, excluded: false, checkpoints: Vec::new() };

    'checkpoints: for (ci, &t_c) in params.checkpoints.iter().enumerate() {
        loop {
            if pop.len() == 0 {
                out.checkpoints.push(snapshot(
                    &pop,
                    t_c,
                    &centers[ci],
                    params.ball_radius,
                    params.lambda0,
                    spectral,
                ));
                continue 'checkpoints;
            }
            let wait = events.exponential(lam * pop.len() as f64);
            if t_now + wait > t_c {
                // exact: the discarded residual clock is memoryless
                for i in 0..pop.len() {
                    pop.advance(seed, replica, i, t_c);
                }
                t_now = t_c;
                out.checkpoints.push(snapshot(
                    &pop,
                    t_c,
                    &centers[ci],
                    params.ball_radius,
                    params.lambda0,
                    spectral,
                ));
                continue 'checkpoints;
            }
            t_now += wait;
            let n = pop.len();
            let i = ((events.uniform() * n as f64) as usize).min(n - 1);
            pop.advance(seed, replica, i, t_now);
            let u = events.uniform();
            let pa = params.potential.alpha_at_coord(pop.pos[i]) / lam;
            let pb = params.potential.beta_at_coord(pop.pos[i]) / lam;
            if u < pa {
                pop.branch(i, t_now);
                if pop.len() > params.max_particles {
                    out.excluded = true;
                    break 'checkpoints;
                }
            } else if u < pa + pb {
                pop.kill(i);
            }
            // otherwise a phantom event: nothing changes
        }
    }
    out
}

/// Full ensemble of replicas.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleOutcome {
    pub outcomes: Vec<ReplicaOutcome>,
    pub excluded: usize,
    pub centers: Vec<Vec<f64>>,
}

/// Runs all replicas (in parallel, deterministically keyed by replica index)
/// and collects them in replica order.
pub fn run_ensemble(
    params: &SimParams,
    spectral: Option<&SpectralData>,
) -> Result<EnsembleOutcome, SimError> {
    let centers = resolve_centers(params)?;
    let outcomes: Vec<ReplicaOutcome> = (0..params.replicas)
        .into_par_iter()
        .map(|r| simulate_replica(params, &centers, spectral, r))
        .collect();
    let excluded = outcomes.iter().filter(|o| o.excluded).count();
    Ok(EnsembleOutcome { outcomes, excluded, centers })
}

/// A batched mean with its batch-means standard error.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub batches: usize,
    pub n_used: usize,
    /// Replicas alive (population nonzero) at the checkpoint.
    pub survivors: usize,
    /// Fewer than 100 survivors: the estimate is fragile.
    pub low_survivors: bool,
}

fn batched_mean(values: &[f64], batches: usize) -> Result<(f64, f64, usize), SimError> {
    let n = values.len();
    if batches < 2 || n < batches {
        return Err(SimError::TooFewReplicas { batches, replicas: n });
    }
    let size = n / batches;
    let used = size * batches;
    let mut means = Vec::with_capacity(batches);
    for b in 0..batches {
        let chunk = &values[b * size..(b + 1) * size];
        means.push(chunk.iter().sum::<f64>() / size as f64);
    }
    let grand = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>()
        / (batches as f64 - 1.0);
    let stderr = (var / batches as f64).sqrt();
    Ok((grand, stderr, used))
}

/// Mean of `(count / m1)^k` over non-excluded replicas at one checkpoint and
/// offset, with batch-means error bars. Extinct replicas contribute zero.
pub fn estimate_eta_moment(
    ensemble: &EnsembleOutcome,
    checkpoint: usize,
    offset: usize,
    m1: f64,
    k: u32,
    batches: usize,
) -> Result<MomentEstimate, SimError> {
    let mut values = Vec::with_capacity(ensemble.outcomes.len());
    let mut survivors = 0_usize;
    for o in &ensemble.outcomes {
        if o.excluded {
            continue;
        }
        let cp = &o.checkpoints[checkpoint];
        if cp.n_total > 0 {
            survivors += 1;
        }
        let eta = cp.counts[offset] as f64 / m1;
        values.push(eta.powi(k as i32));
    }
    let (mean, stderr, used) = batched_mean(&values, batches)?;
    Ok(MomentEstimate {
        mean,
        stderr,
        batches,
        n_used: used,
        survivors,
        low_survivors: survivors < 100,
    })
}

/// Mean of the additive martingale `e^{-lambda0 t} sum psi(X_i)`, which has
/// constant expectation `psi(x0)`.
pub fn martingale_estimate(
    ensemble: &EnsembleOutcome,
    checkpoint: usize,
    batches: usize,
) -> Result<MomentEstimate, SimError> {
    let mut values = Vec::with_capacity(ensemble.outcomes.len());
    let mut survivors = 0_usize;
    for o in &ensemble.outcomes {
        if o.excluded {
            continue;
        }
        let cp = &o.checkpoints[checkpoint];
        if cp.n_total > 0 {
            survivors += 1;
        }
        values.push(cp.martingale);
    }
    let (mean, stderr, used) = batched_mean(&values, batches)?;
    Ok(MomentEstimate {
        mean,
        stderr,
        batches,
        n_used: used,
        survivors,
        low_survivors: survivors < 100,
    })
}

/// Median of `rightmost / t` over surviving replicas at a checkpoint.
pub fn median_front_speed(ensemble: &EnsembleOutcome, checkpoint: usize) -> Option<f64> {
    let mut speeds: Vec<f64> = ensemble
        .outcomes
        .iter()
        .filter(|o| !o.excluded)
        .filter_map(|o| {
            let cp = &o.checkpoints[checkpoint];
            cp.rightmost.map(|r| r / cp.t)
        })
        .collect();
    if speeds.is_empty() {
        return None;
    }
    speeds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = speeds.len();
    Some(if n % 2 == 1 {
        speeds[n / 2]
    } else {
        0.5 * (speeds[n / 2 - 1] + speeds[n / 2])
    })
}

/// Fraction of replicas with at least one particle in each ball.
pub fn presence_profile(ensemble: &EnsembleOutcome, checkpoint: usize) -> Vec<f64> {
    let mut total = 0_usize;
    let mut hits = vec![0_usize; ensemble.centers[checkpoint].len()];
    for o in &ensemble.outcomes {
        if o.excluded {
            continue;
        }
        total += 1;
        for (ci, &c) in o.checkpoints[checkpoint].counts.iter().enumerate() {
            if c > 0 {
                hits[ci] += 1;
            }
        }
    }
    hits.iter().map(|&h| h as f64 / total.max(1) as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heatkernel::solve_density;
    use crate::model::{reference_config, GridSpec};
    use crate::numerics::normal_cdf;
    use crate::spectral::spectral_stage;

    fn free_params(checkpoints: Vec<f64>, replicas: u64, seed: u64) -> SimParams {
        SimParams {
            potential: PotentialSpec::square_well(1, 0.0, 0.0, 1.0),
            lambda0: 0.5,
            x0: 0.0,
            ball_radius: 1.0,
            track: BallTrack::Fixed(0.0),
            offsets: vec![0.0],
            checkpoints,
            seed,
            replicas,
            max_particles: 1_000_000,
        }
    }

    #[test]
    fn raw_streams_are_deterministic_and_distinct() {
        let a = rng::stream_key(1, 2, 3, 4);
        assert_eq!(a, rng::stream_key(1, 2, 3, 4));
        assert_ne!(a, rng::stream_key(1, 2, 3, 5));
        assert_ne!(a, rng::stream_key(1, 2, 4, 4));
        assert_ne!(a, rng::stream_key(1, 3, 3, 4));
        assert_ne!(a, rng::stream_key(2, 2, 3, 4));
        let mut r1 = rng::CounterRng::new(7, 0, 1, 0);
        let mut r2 = rng::CounterRng::new(7, 0, 1, 0);
        for _ in 0..100 {
            assert_eq!(r1.next_u64(), r2.next_u64());
        }
    }

    #[test]
    fn uniform_gaussian_exponential_moments_are_sane() {
        let mut r = rng::CounterRng::new(42, 0, 9, 0);
        let n = 100_000;
        let mut su = 0.0;
        let mut sg = 0.0;
        let mut sg2 = 0.0;
        let mut se = 0.0;
        for _ in 0..n {
            su += r.uniform();
            let g = r.gaussian();
            sg += g;
            sg2 += g * g;
            se += r.exponential(2.0);
        }
        let nf = n as f64;
        // 3 sigma bands for each statistic
        assert!((su / nf - 0.5).abs() < 3.0 * (1.0 / 12.0_f64).sqrt() / nf.sqrt());
        assert!((sg / nf).abs() < 3.0 / nf.sqrt());
        assert!((sg2 / nf - 1.0).abs() < 3.0 * 1.5 / nf.sqrt());
        assert!((se / nf - 0.5).abs() < 3.0 * 0.5 / nf.sqrt());
        // uniforms never touch 0 or 1 (log safety)
        assert!(rng::to_uniform(0) > 0.0);
        assert!(rng::to_uniform(u64::MAX) < 1.0);
    }

    #[test]
    fn free_particle_ball_count_matches_gaussian_probability() {
        // alpha = beta = 0: one Brownian particle; the expected count in the
        // fixed ball is Phi((c+R)/sqrt(t)) - Phi((c-R)/sqrt(t))
        let params = free_params(vec![2.0], 2000, 11);
        let ens = run_ensemble(&params, None).unwrap();
        let t = 2.0_f64;
        let p = normal_cdf(1.0 / t.sqrt()) - normal_cdf(-1.0 / t.sqrt());
        let mean = ens
            .outcomes
            .iter()
            .map(|o| o.checkpoints[0].counts[0] as f64)
            .sum::<f64>()
            / ens.outcomes.len() as f64;
        let sigma = (p * (1.0 - p) / ens.outcomes.len() as f64).sqrt();
        assert!(
            (mean - p).abs() < 3.0 * sigma,
            "mean {mean} vs probability {p} (sigma {sigma})"
        );
        // single particle throughout: totals are exactly one
        assert!(ens.outcomes.iter().all(|o| o.checkpoints[0].n_total == 1));
    }

    #[test]
    fn populations_never_shrink_without_killing() {
        let cfg = reference_config();
        let params = SimParams {
            potential: cfg.potential.clone(),
            lambda0: 0.6,
            x0: 0.0,
            ball_radius: 1.0,
            track: BallTrack::Fixed(0.0),
            offsets: vec![0.0],
            checkpoints: vec![1.0, 2.0, 3.0, 4.0],
            seed: 5,
            replicas: 200,
            max_particles: 1_000_000,
        };
        let ens = run_ensemble(&params, None).unwrap();
        for o in &ens.outcomes {
            for w in o.checkpoints.windows(2) {
                assert!(w[1].n_total >= w[0].n_total, "replica {} shrank", o.replica);
            }
            assert!(o.checkpoints[0].n_total >= 1);
        }
    }

    #[test]
    fn mean_population_matches_density_mass() {
        // E N_t equals the total mass of the expected-density solution
        let cfg = reference_config();
        let grid = GridSpec {
            half_width: 20.0,
            spacing: 0.02,
            dt: 2e-3,
            t0: None,
            epsilon: 0.1,
            r_max: 8.0,
            source_spacing: 0.2,
        };
        let spectral = spectral_stage(&cfg.potential, &grid, 1.0).unwrap();
        let lam = spectral.lambda0();
        let table = solve_density(&cfg.potential, &grid, &[0.0], 6.0, lam, &[6.0]).unwrap();
        let want = table.total_mass(6.0).unwrap();
        let params = SimParams {
            potential: cfg.potential.clone(),
            lambda0: lam,
            x0: 0.0,
            ball_radius: 1.0,
            track: BallTrack::Fixed(0.0),
            offsets: vec![0.0],
            checkpoints: vec![6.0],
            seed: 77,
            replicas: 2000,
            max_particles: 1_000_000,
        };
        let ens = run_ensemble(&params, Some(&spectral)).unwrap();
        let vals: Vec<f64> = ens
            .outcomes
            .iter()
            .map(|o| o.checkpoints[0].n_total as f64)
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (vals.len() as f64 - 1.0);
        let sigma = (var / vals.len() as f64).sqrt();
        assert!(
            (mean - want).abs() < 3.0 * sigma,
            "mean N {mean} vs PDE mass {want} (sigma {sigma})"
        );
    }

    #[test]
    fn pure_killing_matches_path_integral_survival() {
        // oracle first: survival under killing at unit rate inside the well
        // is E[exp(-int_0^t beta(X_s) ds)], estimated by discretizing
        // Brownian paths on a fine time grid, independent of the event loop
        let t_end = 2.0;
        let dt = 2e-3_f64;
        let steps = (t_end / dt) as usize;
        let paths = 20_000_u64;
        let mut acc = 0.0;
        for p in 0..paths {
            let mut r = rng::CounterRng::new(999, p, 7, 0);
            let mut x = 0.0_f64;
            let mut occupation = 0.0_f64;
            for _ in 0..steps {
                if x.abs() <= 1.0 {
                    occupation += dt;
                }
                x += dt.sqrt() * r.gaussian();
            }
            acc += (-occupation).exp();
        }
        let oracle = acc / paths as f64;

        let params = SimParams {
            potential: PotentialSpec::square_well(1, 0.0, 1.0, 1.0),
            lambda0: 0.5,
            x0: 0.0,
            ball_radius: 1.0,
            track: BallTrack::Fixed(0.0),
            offsets: vec![0.0],
            checkpoints: vec![t_end],
            seed: 1234,
            replicas: 20_000,
            max_particles: 1_000_000,
        };
        let ens = run_ensemble(&params, None).unwrap();
        let survive = ens
            .outcomes
            .iter()
            .filter(|o| o.checkpoints[0].n_total > 0)
            .count() as f64
            / ens.outcomes.len() as f64;
        // both sides carry ~0.003 Monte Carlo noise plus O(dt) oracle bias
        assert!(
            (survive - oracle).abs() < 0.012,
            "thinning survival {survive} vs path oracle {oracle}"
        );
    }

    #[test]
    fn extinct_ensembles_report_zero_moments() {
        let params = SimParams {
            potential: PotentialSpec::square_well(1, 0.0, 50.0, 1.0),
            lambda0: 0.5,
            x0: 0.0,
            ball_radius: 1.0,
            track: BallTrack::Fixed(0.0),
            offsets: vec![0.0],
            checkpoints: vec![4.0],
            seed: 3,
            replicas: 64,
            max_particles: 1_000_000,
        };
        let ens = run_ensemble(&params, None).unwrap();
        let est = estimate_eta_moment(&ens, 0, 0, 1.0, 2, 8).unwrap();
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.stderr, 0.0);
        assert_eq!(est.survivors, 0);
        assert!(est.low_survivors);
        for o in &ens.outcomes {
            assert_eq!(o.checkpoints[0].rightmost, None);
            assert_eq!(o.checkpoints[0].martingale, 0.0);
        }
    }

    #[test]
    fn ensembles_are_reproducible_and_order_independent() {
        let cfg = reference_config();
        let params = SimParams {
            potential: cfg.potential.clone(),
            lambda0: 0.6039,
            x0: 0.0,
            ball_radius: 1.0,
            track: BallTrack::Fixed(1.0),
            offsets: vec![0.0, 1.0],
            checkpoints: vec![2.0, 4.0],
            seed: 2024,
            replicas: 64,
            max_particles: 1_000_000,
        };
        let a = run_ensemble(&params, None).unwrap();
        let b = run_ensemble(&params, None).unwrap();
        assert_eq!(a.outcomes, b.outcomes);
        // replica simulation depends only on its index, not on who else runs
        let centers = resolve_centers(&params).unwrap();
        let solo = simulate_replica(&params, &centers, None, 17);
        assert_eq!(solo, a.outcomes[17]);
        let reversed: Vec<ReplicaOutcome> = (0..params.replicas)
            .rev()
            .map(|r| simulate_replica(&params, &centers, None, r))
            .collect();
        assert_eq!(reversed[0], a.outcomes[63]);
        assert_eq!(reversed[63], a.outcomes[0]);
    }

    #[test]
    fn batch_means_agree_with_plain_mean_when_divisible() {
        let params = free_params(vec![1.0, 3.0], 256, 99);
        let ens = run_ensemble(&params, None).unwrap();
        let est = estimate_eta_moment(&ens, 1, 0, 0.5, 1, 16).unwrap();
        let plain: f64 = ens
            .outcomes
            .iter()
            .map(|o| o.checkpoints[1].counts[0] as f64 / 0.5)
            .sum::<f64>()
            / 256.0;
        assert!((est.mean - plain).abs() < 1e-12);
        assert_eq!(est.n_used, 256);
        assert!(est.stderr > 0.0);
    }

    #[test]
    fn martingale_starts_exactly_at_psi() {
        let cfg = reference_config();
        let grid = GridSpec {
            half_width: 20.0,
            spacing: 0.02,
            dt: 2e-3,
            t0: None,
            epsilon: 0.1,
            r_max: 4.0,
            source_spacing: 0.2,
        };
        let spectral = spectral_stage(&cfg.potential, &grid, 1.0).unwrap();
        // time zero is not a valid checkpoint for the event loop, but the
        // snapshot of the initial population is the exact martingale start
        let pop = Population::single(0.3);
        let stats = snapshot(&pop, 0.0, &[0.0], 1.0, spectral.lambda0(), Some(&spectral));
        let psi = spectral.psi_at(&[0.3]);
        assert!((stats.martingale - psi).abs() < 1e-14);
        assert_eq!(stats.n_total, 1);
        assert_eq!(stats.counts[0], 1);
    }

    #[test]
    fn diffusive_front_speed_has_zero_median() {
        let params = free_params(vec![4.0], 500, 8);
        let ens = run_ensemble(&params, None).unwrap();
        let med = median_front_speed(&ens, 0).unwrap();
        // X_t / t is centered with sd sqrt(t)/t = 0.5; the sample median of
        // 500 draws has sd about 1.25 * 0.5 / sqrt(500) = 0.028
        assert!(med.abs() < 0.1, "median speed {med}");
    }

    #[test]
    fn common_random_numbers_rank_offsets() {
        // same trajectories observed at nested balls: a ball further behind
        // the front (larger b, center closer to origin) in a supercritical
        // run must see at least as many particles pointwise... the sweep
        // shares randomness so the comparison is paired, not noisy
        let cfg = reference_config();
        let params = SimParams {
            potential: cfg.potential.clone(),
            lambda0: 0.6039,
            x0: 0.0,
            ball_radius: 1.0,
            track: BallTrack::Fixed(3.0),
            offsets: vec![0.0, 1.0],
            checkpoints: vec![5.0],
            seed: 314,
            replicas: 300,
            max_particles: 1_000_000,
        };
        let ens = run_ensemble(&params, None).unwrap();
        // offset 1 ball sits at center 2, closer to the well than center 3:
        // its mean count must exceed the outer ball's on common paths
        let mean = |off: usize| -> f64 {
            ens.outcomes
                .iter()
                .map(|o| o.checkpoints[0].counts[off] as f64)
                .sum::<f64>()
                / ens.outcomes.len() as f64
        };
        assert!(mean(1) > mean(0), "inner {} vs outer {}", mean(1), mean(0));
    }

    #[test]
    fn presence_fraction_decreases_away_from_the_well() {
        let cfg = reference_config();
        let params = SimParams {
            potential: cfg.potential.clone(),
            lambda0: 0.6039,
            x0: 0.0,
            ball_radius: 0.5,
            track: BallTrack::Fixed(6.0),
            offsets: vec![0.0, 2.0, 4.0],
            checkpoints: vec![6.0],
            seed: 2718,
            replicas: 400,
            max_particles: 1_000_000,
        };
        let ens = run_ensemble(&params, None).unwrap();
        let profile = presence_profile(&ens, 0);
        // centers 6, 4, 2: presence probability grows toward the well
        assert!(profile[2] >= profile[1] && profile[1] >= profile[0], "{profile:?}");
    }
}
