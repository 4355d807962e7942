//! Expected particle density rho(t, x0, y): Crank-Nicolson evolution from a
//! smoothed point source, interior convergence to the rank-one spectral
//! profile, and ball first moments at the moving front.

use bbmfront::heatkernel::{classify_regime, first_moment, solve_density};
use bbmfront::model::{front_center, reference_config, GridSpec};
use bbmfront::spectral::spectral_stage;

fn main() {
    let cfg = reference_config();
    let grid = GridSpec {
        half_width: 30.0,
        spacing: 0.02,
        dt: 2e-3,
        t0: None,
        epsilon: 0.1,
        r_max: 12.0,
        source_spacing: 0.1,
    };
    let spectral = spectral_stage(&cfg.potential, &grid, cfg.ball_radius).unwrap();
    let lam = spectral.lambda0();

    let times = [4.0, 8.0, 12.0];
    let table = solve_density(&cfg.potential, &grid, &[0.0], 12.0, lam, &times).unwrap();

    // in the interior the density factorizes: rho ~ e^{lambda0 t} psi(x) psi(y)
    let psi0 = spectral.psi_at(&[0.0]);
    println!("interior ratio rho(t,0,0) e^(-lambda0 t) / psi(0)^2:");
    for &t in &times {
        let rho = table.density_at(t, 0.0).unwrap();
        println!("  t={t:<4} ratio = {:.6}", rho * (-lam * t).exp() / (psi0 * psi0));
    }

    println!();
    println!("expected total population e^(-lambda0 t) E N_t / (psi(0) int psi):");
    let psi_mass: f64 = spectral.pair.psi.iter().sum::<f64>() * grid.spacing;
    for &t in &times {
        let mass = table.total_mass(t).unwrap();
        println!("  t={t:<4} ratio = {:.6}", mass * (-lam * t).exp() / (psi0 * psi_mass));
    }

    println!();
    println!("ball first moment at the front center y(t):");
    println!("  t     y(t)      PDE m1     e^(lt) psi(x0) int_U psi   tail formula");
    for &t in &times {
        let y = front_center(&cfg.front, 1, lam, t).unwrap()[0];
        let fm = first_moment(&table, &spectral, t, y, cfg.ball_radius).unwrap();
        println!(
            "  {t:<5} {y:<9.4} {:<10.5} {:<25.5} {:.5}",
            fm.value, fm.mid_asymptotic, fm.far_asymptotic
        );
        let regime = classify_regime(t, &[0.0], &[y], lam, grid.epsilon);
        println!("        regime of (x0, y(t)): {regime:?}");
    }
}
