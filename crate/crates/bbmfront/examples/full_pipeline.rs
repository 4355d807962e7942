//! The whole pipeline in one call: eigen, kernel, moments, simulate,
//! compare, with stage caching in a temporary directory and the final
//! verdict table on stdout.

use bbmfront::model::{reference_config, GridSpec, McParams};
use bbmfront::pipeline::{emit_report, Pipeline};

fn main() {
    // desk-scale variant of the reference configuration
    let mut cfg = reference_config();
    cfg.checkpoint_times = vec![3.0, 6.0];
    cfg.k_max = 2;
    cfg.rel_tol = 0.25; // t = 6 is far from the limit
    cfg.grid = GridSpec {
        half_width: 20.0,
        spacing: 0.02,
        dt: 2e-3,
        t0: None,
        epsilon: 0.1,
        r_max: 12.0,
        source_spacing: 0.2,
    };
    cfg.mc = McParams {
        replicas: 1200,
        seed: 7,
        max_particles: 1_000_000,
        batches: 30,
        b_sweep: Some(vec![0.0, 1.0]),
        raw_rows: 0,
    };

    let out = std::env::temp_dir().join("bbmfront-example-pipeline");
    let mut pipeline = Pipeline::new(&cfg, Some(&out)).unwrap();
    pipeline.verbose = true;
    let report = pipeline.run().unwrap();
    let files = emit_report(&report, &out).unwrap();

    println!();
    println!("t      k   b      theory       empirical    z        verdict");
    for c in &report.cells {
        println!(
            "{:<6} {:<3} {:<6} {:<12.6} {:<12.6} {:<8.2} {}",
            c.t,
            c.k,
            c.b,
            c.theory,
            c.empirical,
            c.verdict.z.unwrap_or(0.0),
            if c.verdict.pass { "pass" } else { "FAIL" }
        );
    }
    println!();
    println!("all pass: {}", report.all_pass());
    println!("stage hashes: eigen {} kernel {} moments {} simulate {}",
        report.provenance.stages.eigen,
        report.provenance.stages.kernel,
        report.provenance.stages.moments,
        report.provenance.stages.simulate);
    for f in files {
        println!("wrote {}", f.display());
    }
    println!("rerunning reuses the cache under {}", out.display());
}
