//! Command-line front end: runs individual pipeline stages or the full
//! theory-versus-simulation comparison from a TOML configuration.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bbmfront::mcsim::run_ensemble;
use bbmfront::model::ExperimentConfig;
use bbmfront::pipeline::{emit_report, to_canonical_json, Pipeline, PipelineError};

#[derive(Parser)]
#[command(
    name = "bbmfront",
    about = "Branching Brownian motion front moments: spectral theory, \
             parabolic PDE oracles, and exact particle simulation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML). Keys can be overridden through
    /// BBMFRONT_SECTION_KEY environment variables.
    #[arg(long)]
    config: PathBuf,
    /// Override the ensemble base seed from the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for source solves and replica batches
    /// (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Reduce replica aggregates in fixed replica order for bit-identical
    /// results. This implementation always reduces in fixed order; the flag
    /// is recorded in provenance.
    #[arg(long)]
    deterministic_reduce: bool,
    /// Directory for artifacts, stage caches, and reports.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Principal eigenvalue, ground state, tail constants, ball factor.
    Eigen(Common),
    /// Expected-density PDE: checkpoint slices and ball first moments.
    Kernel(Common),
    /// Limit moment functions, Carleman diagnostics, crude growth bounds.
    Moments(Common),
    /// Monte Carlo ensemble: normalized-count moments and invariants.
    Simulate(Common),
    /// Full pipeline and theory-versus-simulation verdict table.
    Compare(Common),
    /// Full pipeline plus the presence-probability profile over offsets.
    Frontprofile(Common),
}

impl Cmd {
    fn common(&self) -> &Common {
        match self {
            Cmd::Eigen(c)
            | Cmd::Kernel(c)
            | Cmd::Moments(c)
            | Cmd::Simulate(c)
            | Cmd::Compare(c)
            | Cmd::Frontprofile(c) => c,
        }
    }
}

fn run(cli: Cli) -> Result<bool, PipelineError> {
    let common = cli.command.common();
    if let Some(n) = common.threads {
        // a second initialization (tests, repeated calls) is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut config = ExperimentConfig::from_path(&common.config)?;
    if let Some(seed) = common.seed {
        config.mc.seed = seed;
    }
    let out = common.out.clone();
    let mut pipeline = Pipeline::new(&config, Some(&out))?;
    pipeline.verbose = true;
    pipeline.deterministic_reduce = common.deterministic_reduce || pipeline.deterministic_reduce;

    match &cli.command {
        Cmd::Eigen(_) => {
            let eig = pipeline.eigen()?;
            std::fs::write(out.join("eigen.json"), to_canonical_json(&eig))?;
            println!("lambda0      {:.12}", eig.lambda0);
            if let Some(oracle) = eig.oracle_lambda0 {
                println!("closed form  {:.12} (delta {:+.2e})", oracle, eig.lambda0 - oracle);
            }
            println!("decay rate   {:.12}", eig.decay_rate);
            println!("front speed  {:.12}", eig.front_speed);
            println!("psi(x0)      {:.12}", eig.psi_x0);
            println!("gamma        {:.12}", eig.gamma);
            println!("tail C(+u)   {:.12}", eig.spectral.tail.c_plus);
            println!("tail C(-u)   {:.12}", eig.spectral.tail.c_minus);
            println!("residual     {:.3e}", eig.residual);
            println!("wrote {}", out.join("eigen.json").display());
            Ok(true)
        }
        Cmd::Kernel(_) => {
            let eig = pipeline.eigen()?;
            let kern = pipeline.kernel(&eig)?;
            std::fs::write(out.join("kernel.json"), to_canonical_json(&kern))?;
            let mut csv = String::from("x");
            for t in &kern.checkpoints {
                csv.push_str(&format!(",rho_t{t}"));
            }
            csv.push('\n');
            for i in 0..kern.slices[0].len() {
                csv.push_str(&format!("{}", kern.grid_start + kern.grid_spacing * i as f64));
                for s in &kern.slices {
                    csv.push_str(&format!(",{}", s[i]));
                }
                csv.push('\n');
            }
            std::fs::write(out.join("density.csv"), csv)?;
            println!("t        total mass     ball m1        mid asympt     far asympt");
            for (ci, &t) in kern.checkpoints.iter().enumerate() {
                let fm = &kern.first_moments[ci][0];
                println!(
                    "{t:<8} {:<14.6} {:<14.6} {:<14.6} {:<14.6}",
                    kern.total_mass[ci], fm.value, fm.mid_asymptotic, fm.far_asymptotic
                );
            }
            println!("wrote {} and density.csv", out.join("kernel.json").display());
            Ok(true)
        }
        Cmd::Moments(_) => {
            let eig = pipeline.eigen()?;
            let arts = pipeline.moments(&eig)?;
            std::fs::write(out.join("moments.json"), to_canonical_json(&arts))?;
            println!("limit moments of the normalized count at x0:");
            println!("{:<8} {:<12} {}", "b", "Theta(b)", "k = 1..K");
            for (oi, &b) in arts.offsets.iter().enumerate() {
                let row: Vec<String> =
                    arts.limit_moments[oi].iter().map(|v| format!("{v:.6}")).collect();
                println!("{b:<8} {:<12.6} {}", arts.theta[oi], row.join("  "));
            }
            let carleman = &arts.data.carleman;
            println!("Carleman constant A = {:.6}", carleman.big_a);
            for (i, (norm, bound)) in
                carleman.f_norms.iter().zip(&carleman.bounds).enumerate()
            {
                println!("  ||f^{}|| = {:<14.6} bound {:.6e}", i + 1, norm, bound);
            }
            println!("wrote {}", out.join("moments.json").display());
            Ok(true)
        }
        Cmd::Simulate(_) => {
            let eig = pipeline.eigen()?;
            let kern = pipeline.kernel(&eig)?;
            let sim = pipeline.simulate(&eig, &kern)?;
            std::fs::write(out.join("simulate.json"), to_canonical_json(&sim))?;
            if config.mc.raw_rows > 0 {
                let params = pipeline.sim_params(&eig)?;
                let ensemble = run_ensemble(&params, Some(&eig.spectral))
                    .map_err(|e| PipelineError::Stage {
                        stage: "simulate",
                        message: e.to_string(),
                    })?;
                let mut csv = String::from(
                    "replica,t,n_total,counts,rightmost,martingale,excluded\n",
                );
                let mut rows = 0usize;
                'outer: for o in &ensemble.outcomes {
                    for cp in &o.checkpoints {
                        if rows >= config.mc.raw_rows {
                            break 'outer;
                        }
                        let counts: Vec<String> =
                            cp.counts.iter().map(|c| c.to_string()).collect();
                        csv.push_str(&format!(
                            "{},{},{},{},{},{},{}\n",
                            o.replica,
                            cp.t,
                            cp.n_total,
                            counts.join(";"),
                            cp.rightmost.map(|r| r.to_string()).unwrap_or_default(),
                            cp.martingale,
                            o.excluded
                        ));
                        rows += 1;
                    }
                }
                std::fs::write(out.join("raw.csv"), csv)?;
            }
            println!(
                "replicas {}   excluded {}   survival at horizon {:.4}",
                sim.replicas,
                sim.excluded,
                sim.survival.last().unwrap_or(&0.0)
            );
            println!("t        b        mean eta       stderr         m1(PDE)");
            for (ci, &t) in sim.checkpoints.iter().enumerate() {
                for (oi, row) in sim.eta_moments[ci].iter().enumerate() {
                    println!(
                        "{t:<8} {:<8} {:<14.6} {:<14.6} {:<14.6}",
                        kern.centers[ci][oi], row[0].mean, row[0].stderr, sim.m1_used[ci][oi]
                    );
                }
            }
            println!("wrote {}", out.join("simulate.json").display());
            Ok(true)
        }
        Cmd::Compare(_) => {
            let report = pipeline.run()?;
            let files = emit_report(&report, &out)?;
            print_verdicts(&report);
            for f in &files {
                println!("wrote {}", f.display());
            }
            Ok(report.all_pass())
        }
        Cmd::Frontprofile(_) => {
            let report = pipeline.run()?;
            let files = emit_report(&report, &out)?;
            let mut csv = String::from("t,b,presence,survival\n");
            let offsets = report
                .cells
                .iter()
                .map(|c| c.b)
                .collect::<Vec<_>>();
            let mut uniq = Vec::new();
            for b in offsets {
                if !uniq.contains(&b) {
                    uniq.push(b);
                }
            }
            for (ci, row) in report.presence.iter().enumerate() {
                let t = report.martingale[ci].t;
                for (oi, &p) in row.iter().enumerate() {
                    csv.push_str(&format!(
                        "{t},{},{p},{}\n",
                        uniq[oi], report.survival[ci]
                    ));
                }
            }
            let prof = out.join("frontprofile.csv");
            std::fs::write(&prof, csv)?;
            print_verdicts(&report);
            println!("presence probability of >= 1 particle per ball offset:");
            for (ci, row) in report.presence.iter().enumerate() {
                let cells: Vec<String> = uniq
                    .iter()
                    .zip(row)
                    .map(|(b, p)| format!("b={b}: {p:.4}"))
                    .collect();
                println!("  t={}  {}", report.martingale[ci].t, cells.join("  "));
            }
            for f in files.iter().chain(std::iter::once(&prof)) {
                println!("wrote {}", f.display());
            }
            Ok(report.all_pass())
        }
    }
}

fn print_verdicts(report: &bbmfront::ComparisonReport) {
    println!("t        k   b        theory         empirical      stderr         verdict");
    for c in &report.cells {
        println!(
            "{:<8} {:<3} {:<8} {:<14.6} {:<14.6} {:<14.6} {}",
            c.t,
            c.k,
            c.b,
            c.theory,
            c.empirical,
            c.stderr,
            if c.verdict.pass { "pass" } else { "FAIL" }
        );
    }
    for m in &report.martingale {
        println!(
            "martingale t={:<6} mean {:<12.6} target {:<12.6} {}",
            m.t,
            m.mean,
            m.target,
            if m.pass { "pass" } else { "FAIL" }
        );
    }
    if let Some(f) = &report.front_speed {
        println!(
            "front speed t={:<6} median {:<10.6} target {:<10.6} {}",
            f.t,
            f.median,
            f.target,
            if f.pass { "pass" } else { "FAIL" }
        );
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
