//! Reference shapes and settings shared by the calibration, the acceptance
//! suite and the shipped example configs.

use crate::config::FlowConfig;
use crate::diagnostics::euler_lagrange_residuals;
use crate::energy::{Kernel, KernelSpec};
use crate::fields::{random_test_fields, VectorField};
use crate::grid::{CellBox, DensityField, Grid2D};

/// Seed and size of the frozen interpolation-inequality corpus.
pub const CORPUS_SEED: u64 = 20_240_601;
pub const CORPUS_PAIRS: usize = 200;

/// Dumbbell geometry in cells: two balls of radius `r` centered `±d` on the
/// x axis, joined by a neck of half width `w`.
pub const DUMBBELL_R: f64 = 14.0;
pub const DUMBBELL_D: f64 = 24.0;
pub const DUMBBELL_W: f64 = 3.0;

/// Binary dumbbell on an `n x n` grid with unit cells, scaled so
/// `n = 128` gives the reference shape. Not normalized.
pub fn dumbbell_cells(n: usize) -> DensityField {
    let s = n as f64 / 128.0;
    let (r, d, w) = (DUMBBELL_R * s, DUMBBELL_D * s, DUMBBELL_W * s);
    let grid = Grid2D::centered(n, n, 1.0).expect("positive size");
    DensityField::from_predicate(grid, |x| {
        (x[0] + d).hypot(x[1]) < r || (x[0] - d).hypot(x[1]) < r || (x[0].abs() < d && x[1].abs() < w)
    })
}

/// Binary disk of radius `r` cells on an `n x n` grid with unit cells.
pub fn disk_cells(n: usize, r: f64) -> DensityField {
    let grid = Grid2D::centered(n, n, 1.0).expect("positive size");
    DensityField::from_predicate(grid, |x| x[0].hypot(x[1]) < r)
}

/// Rescales the cell size so the field has unit mass.
pub fn normalized(f: &DensityField) -> DensityField {
    let s: f64 = f.values().iter().sum();
    f.with_cell_size((1.0 / s).sqrt()).expect("nonempty field")
}

/// Settings of the reference dumbbell run (k = 0).
pub fn dumbbell_config(n_steps: usize) -> FlowConfig {
    let mut cfg = FlowConfig {
        h: 1e-2,
        n_steps,
        kernel: KernelSpec::None,
        ..FlowConfig::default()
    };
    cfg.inner.prox_step = 30.0;
    cfg
}

/// Test fields per level of the disk refinement study.
pub const DISK_FIELDS: usize = 8;

/// Disk radii of the refinement study, on the unit square.
pub const DISK_RADII: [f64; 5] = [0.25, 0.275, 0.3, 0.325, 0.35];

/// Normalized Euler-Lagrange residual of stationary disks on the unit square
/// with `n x n` cells (`k = 0`, zero velocity): the largest residual over the
/// test fields, averaged over `DISK_RADII`. A single radius is dominated by
/// how its boundary happens to fall on the lattice. The test fields are drawn
/// on the 64 x 64 grid so every resolution sees the same continuous fields.
pub fn disk_el_residual(n: usize) -> (f64, f64) {
    let cs = 1.0 / n as f64;
    let coarse = Grid2D::centered(64, 64, 1.0 / 64.0).expect("valid");
    let support = CellBox {
        i0: 8,
        j0: 8,
        i1: 56,
        j1: 56,
    };
    let specs = random_test_fields(&coarse, support, DISK_FIELDS, 11);
    let total: f64 = DISK_RADII
        .iter()
        .map(|&rad| {
            let f = disk_cells(n, rad * n as f64).with_cell_size(cs).expect("positive");
            let grid = *f.grid();
            euler_lagrange_residuals(&f, &VectorField::zeros(grid), &Kernel::zero(&grid), &specs)
                .expect("same grid")
                .into_iter()
                .fold(0.0, f64::max)
        })
        .sum();
    (cs, total / DISK_RADII.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::mass;

    #[test]
    fn reference_dumbbell_is_symmetric_and_normalizes() {
        let f = dumbbell_cells(128);
        assert_eq!(f.active_count(), 1352);
        let g = *f.grid();
        for i in 0..128 {
            for j in 0..128 {
                assert_eq!(f.get(i, j), f.get(127 - i, j));
                assert_eq!(f.get(i, j), f.get(i, 127 - j));
            }
        }
        assert!((mass(&normalized(&f)) - 1.0).abs() < 1e-12);
        assert_eq!(g.cell_size(), 1.0);
    }
}
