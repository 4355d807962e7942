//! Acceptance gate: twelve numbered criteria covering the eigenpair, the
//! density PDE, the limit moments, and the particle simulation. Each test
//! prints one `criterion NN: PASS/FAIL - ...` line (visible with
//! `--nocapture`) and asserts at its stated tolerance.
//!
//! Reference setup throughout: d = 1, alpha = 1 on [-1, 1], beta = 0,
//! start at the origin, unit observation ball, front direction +1.

use std::sync::OnceLock;

use bbmfront::heatkernel::{first_moment, free_kernel, solve_density, HeatKernelTable};
use bbmfront::mcsim::{
    estimate_eta_moment, martingale_estimate, median_front_speed, run_ensemble, BallTrack,
    EnsembleOutcome, SimParams,
};
use bbmfront::model::{reference_config, ExperimentConfig, GridSpec, PotentialSpec};
use bbmfront::moments::{
    finite_time_mk, front_q, limit_front_moment, moment_stage, MomentData, StirlingTable,
};
use bbmfront::spectral::{
    gamma, gamma_closed_form_1d, principal_eigenpair, spectral_stage, square_well_oracle,
    SpectralData,
};

struct Fixture {
    cfg: ExperimentConfig,
    spectral: SpectralData,
    /// Moment kernels up to order 8 on a reduced resolvent grid.
    moments: MomentData,
    stirling: StirlingTable,
    /// Expected-density table from the origin, horizon 24, rescaled by
    /// `e^{-lambda0 t}` internally.
    table: HeatKernelTable,
    /// 5000 replicas observed at t in {4, 8, 12} with ball offsets
    /// {0, 1, 2} read off the same trajectories.
    e1: EnsembleOutcome,
    e1_checkpoints: Vec<f64>,
    /// PDE first moments per (checkpoint, offset) for the e1 balls.
    m1: Vec<Vec<f64>>,
}

fn fx() -> &'static Fixture {
    static FX: OnceLock<Fixture> = OnceLock::new();
    FX.get_or_init(|| {
        let cfg = reference_config();
        let spectral = spectral_stage(&cfg.potential, &cfg.grid, cfg.ball_radius).unwrap();

        // Resolvent integrands decay like e^{-(k-1) lambda0 r}, so a shorter
        // time horizon plus the analytic tail patch loses nothing; the
        // narrower domain keeps the 8th-order recursion affordable while
        // staying clear of the 1e-10 wall guard.
        let moment_grid = GridSpec { half_width: 20.0, r_max: 16.0, ..cfg.grid };
        let probes = [0.0, 0.5, -0.5, 1.0, -1.0];
        let moments = moment_stage(&cfg.potential, &moment_grid, &spectral, 8, &probes).unwrap();

        let table = solve_density(
            &cfg.potential,
            &cfg.grid,
            &cfg.x0,
            24.0,
            spectral.lambda0(),
            &[4.0, 8.0, 12.0, 24.0],
        )
        .unwrap();

        let e1_checkpoints = vec![4.0, 8.0, 12.0];
        let params = SimParams {
            potential: cfg.potential.clone(),
            lambda0: spectral.lambda0(),
            x0: cfg.x0[0],
            ball_radius: cfg.ball_radius,
            track: BallTrack::Front,
            offsets: vec![0.0, 1.0, 2.0],
            checkpoints: e1_checkpoints.clone(),
            seed: cfg.mc.seed,
            replicas: cfg.mc.replicas as u64,
            max_particles: cfg.mc.max_particles,
        };
        let e1 = run_ensemble(&params, Some(&spectral)).unwrap();
        let m1 = e1
            .centers
            .iter()
            .zip(&e1_checkpoints)
            .map(|(row, &t)| {
                row.iter()
                    .map(|&c| {
                        first_moment(&table, &spectral, t, c, cfg.ball_radius).unwrap().value
                    })
                    .collect()
            })
            .collect();

        Fixture {
            cfg,
            spectral,
            moments,
            stirling: StirlingTable::new(8),
            table,
            e1,
            e1_checkpoints,
            m1,
        }
    })
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

#[test]
fn criterion_01_eigenvalue_oracle() {
    let f = fx();
    let exact = square_well_oracle(1.0, 1.0);
    let lam_h = f.spectral.lambda0();
    let err = (lam_h - exact).abs();

    let coarse_grid = GridSpec { spacing: 0.02, ..f.cfg.grid };
    let lam_2h = principal_eigenpair(&f.cfg.potential, &coarse_grid).unwrap().lambda0;
    let rich = (4.0 * lam_h - lam_2h) / 3.0;
    let rich_err = (rich - exact).abs();

    let ok = err <= 1e-4 && rich_err <= 1e-6;
    println!(
        "criterion 01: {} - lambda0 grid error {err:.2e} (tol 1e-4), \
         Richardson error {rich_err:.2e} (tol 1e-6)",
        verdict(ok)
    );
    assert!(ok, "grid error {err:.3e}, Richardson error {rich_err:.3e}");
}

#[test]
fn criterion_02_ground_state_tail() {
    let f = fx();
    let tail = &f.spectral.tail;
    assert_eq!(tail.window, (4.0, 7.0));

    // the fit removes the predicted rate, so the residual slope is the
    // deviation of the fitted decay rate from -sqrt(2 lambda0)
    let tol = 0.01 * tail.mu;
    let rate_ok = tail.slope_plus.abs() <= tol && tail.slope_minus.abs() <= tol;
    let c_gap = (tail.c_plus - tail.c_minus).abs();
    let ok = rate_ok && c_gap <= 1e-8;
    println!(
        "criterion 02: {} - decay-rate residual {:.2e} (tol {:.2e}), \
         |C(+1) - C(-1)| = {:.2e} (tol 1e-8)",
        verdict(ok),
        tail.slope_plus.abs().max(tail.slope_minus.abs()),
        tol,
        c_gap
    );
    assert!(ok, "slopes ({:.3e}, {:.3e}), C gap {c_gap:.3e}", tail.slope_plus, tail.slope_minus);
}

#[test]
fn criterion_03_ball_factor_closed_form() {
    let f = fx();
    let lam = f.spectral.lambda0();
    let quad = gamma(lam, 1, 1.0);
    let closed = gamma_closed_form_1d(lam, 1.0);
    let gap = (quad - closed).abs();
    // magnitude sanity: the value is recomputed, around 2.428 here
    let ok = gap <= 1e-10 && (quad - 2.428).abs() <= 2e-3;
    println!(
        "criterion 03: {} - quadrature {quad:.12} vs closed form {closed:.12}, \
         gap {gap:.2e} (tol 1e-10)",
        verdict(ok)
    );
    assert!(ok, "gap {gap:.3e}, value {quad}");
}

#[test]
fn criterion_04_free_kernel_equivalence() {
    // no branching at all: the density solver must reproduce the Gaussian
    let pot = PotentialSpec::square_well(1, 0.0, 0.0, 1.0);
    let grid = GridSpec {
        half_width: 15.0,
        spacing: 0.01,
        dt: 1e-3,
        t0: None,
        epsilon: 0.1,
        r_max: 10.0,
        source_spacing: 0.1,
    };
    let table = solve_density(&pot, &grid, &[0.0], 4.5, 0.0, &[1.0, 4.0]).unwrap();

    let mut worst_rel = 0.0_f64;
    let mut worst_mass = 0.0_f64;
    for t in [1.0_f64, 4.0] {
        let mut z = -3.0 * t.sqrt();
        while z <= 3.0 * t.sqrt() + 1e-12 {
            let got = table.density_at(t, z).unwrap();
            let want = free_kernel(t, &[z]);
            worst_rel = worst_rel.max((got - want).abs() / want);
            z += 0.05;
        }
        worst_mass = worst_mass.max((table.total_mass(t).unwrap() - 1.0).abs());
    }
    let ok = worst_rel <= 1e-3 && worst_mass <= 1e-6;
    println!(
        "criterion 04: {} - worst relative error {worst_rel:.2e} on |y| <= 3 sqrt(t) \
         (tol 1e-3), mass defect {worst_mass:.2e} (tol 1e-6)",
        verdict(ok)
    );
    assert!(ok, "relative {worst_rel:.3e}, mass {worst_mass:.3e}");
}

#[test]
fn criterion_05_interior_density_asymptotics() {
    let f = fx();
    let lam = f.spectral.lambda0();
    let psi0 = f.spectral.psi_at(&[0.0]);
    let ratio = |t: f64| {
        f.table.density_at(t, 0.0).unwrap() * (-lam * t).exp() / (psi0 * psi0)
    };
    let r12 = ratio(12.0);
    let r24 = ratio(24.0);
    let ok = (0.98..=1.02).contains(&r24) && (r24 - 1.0).abs() < (r12 - 1.0).abs();
    println!(
        "criterion 05: {} - rho(t,0,0) e^(-lambda0 t) / psi(0)^2 = {r24:.6} at t=24 \
         (window [0.98, 1.02]), |ratio-1| {:.2e} -> {:.2e} from t=12 to t=24",
        verdict(ok),
        (r12 - 1.0).abs(),
        (r24 - 1.0).abs()
    );
    assert!(ok, "ratio(12) = {r12}, ratio(24) = {r24}");
}

#[test]
fn criterion_06_finite_time_second_moment() {
    let f = fx();
    let lam = f.spectral.lambda0();
    let center = 2.0;
    let curve = finite_time_mk(&f.cfg.potential, &f.cfg.grid, lam, center, 1.0, 2, 0.0, &[20.0])
        .unwrap();
    let q = front_q(&f.spectral, 20.0, center, 1.0);
    let g2 = f.moments.g_at(2, 0.0);
    let ratio = curve.values[0][1] / (q * q * g2);
    let ok = (0.97..=1.03).contains(&ratio);
    println!(
        "criterion 06: {} - m2(20, y) / [e^(2 lambda0 t) (int_U psi)^2 G2(0)] = {ratio:.5} \
         at |y| = 2 (window [0.97, 1.03])",
        verdict(ok)
    );
    assert!(ok, "ratio {ratio}");
}

#[test]
fn criterion_07_mean_normalized_count() {
    let f = fx();
    assert!(f.e1.outcomes.len() >= 5000);
    assert_eq!(f.e1.excluded, 0);

    let mut ok = true;
    let mut detail = String::new();
    for (ci, t) in [(1usize, 8.0), (2usize, 12.0)] {
        let est = estimate_eta_moment(&f.e1, ci, 0, f.m1[ci][0], 1, f.cfg.mc.batches).unwrap();
        let gap = (est.mean - 1.0).abs();
        let pass = gap <= 3.0 * est.stderr;
        ok &= pass;
        detail.push_str(&format!(
            "t={t}: mean eta = {:.4} +- {:.4} (z = {:.2}); ",
            est.mean,
            est.stderr,
            gap / est.stderr
        ));
    }
    println!("criterion 07: {} - {detail}tol 3 stderr of 1", verdict(ok));
    assert!(ok, "{detail}");
}

#[test]
fn criterion_08_front_moments_k2_k3() {
    let f = fx();
    let mut ok = true;
    let mut detail = String::new();
    for k in [2usize, 3] {
        let limit = limit_front_moment(&f.moments, &f.spectral, &f.stirling, k, 0.0, 0.0);
        let est = |ci: usize| {
            estimate_eta_moment(&f.e1, ci, 0, f.m1[ci][0], k as u32, f.cfg.mc.batches).unwrap()
        };
        let e8 = est(1);
        let e12 = est(2);
        let gap8 = (e8.mean - limit).abs();
        let gap12 = (e12.mean - limit).abs();
        let tol = (0.10 * limit).max(3.0 * e12.stderr);
        let pass = gap12 <= tol && gap12 < gap8;
        ok &= pass;
        detail.push_str(&format!(
            "k={k}: E eta^k(12) = {:.3} +- {:.3} vs limit {limit:.3} \
             (gap {gap12:.3}, tol {tol:.3}); gap t=8 -> t=12: {gap8:.3} -> {gap12:.3}; ",
            e12.mean, e12.stderr
        ));
    }
    println!("criterion 08: {} - {detail}", verdict(ok));
    assert!(ok, "{detail}");
}

#[test]
fn criterion_09_offset_dependence() {
    let f = fx();
    let mu = (2.0 * f.spectral.lambda0()).sqrt();
    let f2_interior = f.moments.f_interior(2, 0.0);

    // theory: ln(f2_b - f2) is linear in b with slope -sqrt(2 lambda0)
    let theory: Vec<f64> = [0.0, 1.0, 2.0]
        .iter()
        .map(|&b| limit_front_moment(&f.moments, &f.spectral, &f.stirling, 2, b, 0.0))
        .collect();
    let logs: Vec<f64> = theory.iter().map(|&v| (v - f2_interior).ln()).collect();
    let slope = (logs[2] - logs[0]) / 2.0;
    let linear_resid = (logs[1] - 0.5 * (logs[0] + logs[2])).abs();
    let slope_ok = (slope + mu).abs() <= 0.02 * mu && linear_resid <= 1e-10;

    // empirical: same trajectories observed in all three balls, so the
    // ordering comparison is paired
    let emp: Vec<f64> = (0..3)
        .map(|oi| {
            estimate_eta_moment(&f.e1, 2, oi, f.m1[2][oi], 2, f.cfg.mc.batches).unwrap().mean
        })
        .collect();
    let theory_decreasing = theory[0] > theory[1] && theory[1] > theory[2];
    let rank_ok = theory_decreasing && emp[0] > emp[1] && emp[1] > emp[2];

    let ok = slope_ok && rank_ok;
    println!(
        "criterion 09: {} - log-slope {slope:.6} vs {:.6} (tol 2%), linearity residual \
         {linear_resid:.1e}; E eta^2(12) over b = 0,1,2: {:.3} > {:.3} > {:.3} \
         (theory {:.3} > {:.3} > {:.3})",
        verdict(ok),
        -mu,
        emp[0],
        emp[1],
        emp[2],
        theory[0],
        theory[1],
        theory[2]
    );
    assert!(ok, "slope {slope} vs {}, empirical {emp:?}, theory {theory:?}", -mu);
}

#[test]
fn criterion_10_additive_martingale() {
    let f = fx();
    let psi0 = f.spectral.psi_at(&[0.0]);
    let mut ok = true;
    let mut detail = String::new();
    for (ci, &t) in f.e1_checkpoints.iter().enumerate() {
        let est = martingale_estimate(&f.e1, ci, f.cfg.mc.batches).unwrap();
        let gap = (est.mean - psi0).abs();
        let pass = gap <= 3.0 * est.stderr;
        ok &= pass;
        detail.push_str(&format!(
            "t={t}: {:.4} +- {:.4} (z = {:.2}); ",
            est.mean,
            est.stderr,
            gap / est.stderr
        ));
    }
    println!(
        "criterion 10: {} - e^(-lambda0 t) sum psi(X_i) vs psi(0) = {psi0:.4}: {detail}",
        verdict(ok)
    );
    assert!(ok, "{detail}");
}

#[test]
fn criterion_11_front_speed_median() {
    let f = fx();
    let lam = f.spectral.lambda0();
    let params = SimParams {
        potential: f.cfg.potential.clone(),
        lambda0: lam,
        x0: f.cfg.x0[0],
        ball_radius: f.cfg.ball_radius,
        track: BallTrack::Front,
        offsets: vec![0.0],
        checkpoints: vec![16.0],
        seed: f.cfg.mc.seed,
        replicas: 2000,
        max_particles: f.cfg.mc.max_particles,
    };
    let ens = run_ensemble(&params, Some(&f.spectral)).unwrap();
    let med = median_front_speed(&ens, 0).unwrap();
    let speed = (lam / 2.0).sqrt();
    let rel = (med - speed).abs() / speed;
    let ok = rel <= 0.10;
    println!(
        "criterion 11: {} - median R_t/t = {med:.4} at t=16 vs sqrt(lambda0/2) = {speed:.4} \
         (relative gap {rel:.3}, tol 0.10)",
        verdict(ok)
    );
    assert!(ok, "median {med} vs {speed}");
}

#[test]
fn criterion_12_carleman_growth() {
    let f = fx();
    let lam = f.spectral.lambda0();
    let car = &f.moments.carleman;
    assert_eq!(car.f_norms.len(), 8);

    let expected_a = 2.0_f64.max(2.0 * car.kernel_mass_sup / lam).max(car.f_norms[1]);
    let a_ok = car.big_a == expected_a;
    let one_ok = car.f_norms[0] == 1.0;
    let bounds_ok = (0..8).all(|i| car.f_norms[i] <= car.bounds[i]);
    // min over probes of f^k >= 1 is equivalent to the series term <= 1
    let lower_ok = car.series_terms.iter().all(|&s| s <= 1.0 + 1e-12);

    let ok = a_ok && one_ok && bounds_ok && lower_ok;
    let worst = (0..8)
        .map(|i| car.f_norms[i] / car.bounds[i])
        .fold(0.0_f64, f64::max);
    println!(
        "criterion 12: {} - A = {:.3}, sup f^n <= A^(2n-1) n! for n <= 8 \
         (worst fill {worst:.2e}), f^1 = 1 exactly, min f^k >= 1",
        verdict(ok),
        car.big_a
    );
    assert!(ok, "A {a_ok}, f1 {one_ok}, bounds {bounds_ok}, lower {lower_ok}");
}
