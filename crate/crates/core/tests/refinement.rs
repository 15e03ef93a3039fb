use msflow_core::energy::{perimeter_tv, Kernel};
use msflow_core::jko::{de_giorgi_interpolate, run_flow};
use msflow_core::reference::{disk_cells, disk_el_residual, dumbbell_cells, dumbbell_config, normalized};
use msflow_core::{symmetric_difference_volume, DensityField, Grid2D};

/// Disk with a linear edge ramp of fixed width 1/32; its level sets average
/// to the radius `r`, and the ramp spans more cells as `n` grows.
fn antialiased_disk(n: usize, r: f64) -> DensityField {
    let cs = 1.0 / n as f64;
    let width = 1.0 / 32.0;
    let grid = Grid2D::centered(n, n, cs).unwrap();
    DensityField::from_fn(grid, |x| (0.5 - (x[0].hypot(x[1]) - r) / width).clamp(0.0, 1.0))
}

#[test]
fn disk_perimeter_bias_and_convergence() {
    let r = 0.3;
    let exact = std::f64::consts::TAU * r;
    let mut last = f64::INFINITY;
    for n in [64, 128, 256] {
        let binary = disk_cells(n, r * n as f64).with_cell_size(1.0 / n as f64).unwrap();
        let bias = perimeter_tv(&binary) / exact - 1.0;
        // staircase bias of forward differences, stable under refinement
        assert!((0.10..0.22).contains(&bias), "n {n}: binary bias {bias}");
        let err = (perimeter_tv(&antialiased_disk(n, r)) / exact - 1.0).abs();
        assert!(err < last, "n {n}: {err} not below {last}");
        last = err;
    }
    assert!(last < 0.06, "antialiased error at 256^2: {last}");
}

#[test]
fn disk_euler_lagrange_residual_decreases() {
    let r: Vec<f64> = [32, 64, 128].into_iter().map(|n| disk_el_residual(n).1).collect();
    assert!(r[0] > r[1] && r[1] > r[2], "{r:?}");
}

#[test]
fn zero_steps_give_the_initial_row_only() {
    let init = normalized(&disk_cells(32, 8.0));
    let cfg = dumbbell_config(0);
    let k = Kernel::zero(init.grid());
    let out = run_flow(&init, &k, &cfg, &mut |_| Ok(()));
    assert!(out.error.is_none());
    assert_eq!(out.ledger.records.len(), 1);
    assert_eq!(out.final_state, init);
}

#[test]
fn ball_stays_nearly_stationary() {
    let init = normalized(&disk_cells(40, 9.0));
    let mut cfg = dumbbell_config(10);
    cfg.h = 2e-3;
    let k = Kernel::zero(init.grid());
    let out = run_flow(&init, &k, &cfg, &mut |_| Ok(()));
    assert!(out.error.is_none());
    let e0 = out.ledger.records[0].energy.total;
    let e1 = out.ledger.records.last().unwrap().energy.total;
    assert!(e1 <= e0 && e0 - e1 <= 0.02 * e0, "{e0} -> {e1}");
    for r in &out.ledger.records {
        assert!((r.mass - 1.0).abs() <= init.grid().cell_area());
    }
}

#[test]
fn interpolation_moves_less_at_shorter_times() {
    let prev = normalized(&dumbbell_cells(128));
    let cfg = dumbbell_config(1);
    let k = Kernel::zero(prev.grid());
    let moved: Vec<f64> = [cfg.h / 64.0, cfg.h / 4.0, cfg.h]
        .into_iter()
        .map(|t| {
            let e = de_giorgi_interpolate(&prev, t, &k, &cfg).unwrap();
            symmetric_difference_volume(&e, &prev).unwrap()
        })
        .collect();
    assert!(moved[0] <= moved[1] && moved[1] <= moved[2], "{moved:?}");
    assert!(moved[2] > 0.0, "the reference dumbbell moves in its first step");
}
