//! Recomputes the constants in `data/frozen.txt` and prints them in that
//! file's format.
//!
//! `interpolation.c_fit` is the largest ratio over the frozen corpus times a
//! 1.25 margin. `el_tol` uses the order fitted on the stationary disk study at 64^2,
//! 128^2 and 256^2 and the smallest coefficient that covers both the disks
//! and the first steps of the reference dumbbell run, times 1.5.

use msflow_core::diagnostics::{fit_power_law, interpolation_corpus, interpolation_ratio};
use msflow_core::energy::Kernel;
use msflow_core::jko::run_flow;
use msflow_core::reference::{
    disk_el_residual, dumbbell_cells, dumbbell_config, normalized, CORPUS_PAIRS, CORPUS_SEED,
};

const DUMBBELL_STEPS: usize = 8;

fn main() {
    let corpus = interpolation_corpus(CORPUS_PAIRS, CORPUS_SEED);
    let c_max = corpus
        .iter()
        .map(|p| interpolation_ratio(p).expect("corpus pairs transport"))
        .fold(0.0, f64::max);
    eprintln!("interpolation: max ratio {c_max:.6}");

    let disks: Vec<(f64, f64)> = [64, 128, 256].into_iter().map(disk_el_residual).collect();
    for (cs, r) in &disks {
        eprintln!("disk cs {cs:.5}: residual {r:.4e}");
    }
    let (order, _, _) = fit_power_law(&disks).expect("three disk levels");
    eprintln!("disk order {order:.3}");

    let init = normalized(&dumbbell_cells(128));
    let cfg = dumbbell_config(DUMBBELL_STEPS);
    let kernel = Kernel::zero(init.grid());
    let out = run_flow(&init, &kernel, &cfg, &mut |_| Ok(()));
    if let Some(e) = out.error {
        panic!("reference run failed: {e}");
    }
    let cs = init.grid().cell_size();
    let mut samples = disks.clone();
    for r in &out.ledger.records {
        if let Some(v) = r.el_residual {
            eprintln!("dumbbell step {}: residual {v:.4e}", r.n);
            samples.push((cs, v));
        }
    }
    let coef = samples
        .iter()
        .map(|&(cs, r)| r / cs.powf(order))
        .fold(0.0, f64::max);

    println!("# Calibrated constants; regenerate with `cargo run --release -p msflow-core --example calibrate`.");
    println!("interpolation.c_fit = {:.6}", 1.25 * c_max);
    println!("el_tol.coef = {:.6}", 1.5 * coef);
    println!("el_tol.order = {order:.4}");
}
