use msflow_core::energy::{total_energy, Kernel};
use msflow_core::jko::jko_step;
use msflow_core::reference::normalized;
use msflow_core::transport::{w1, w2_squared};
use msflow_core::{mass, symmetric_difference_volume, threshold_with_mass, DensityField, Grid2D};
use proptest::prelude::*;

const SIDE: usize = 9;

fn field(cells: &[usize], cs: f64) -> DensityField {
    let grid = Grid2D::centered(SIDE, SIDE, cs).unwrap();
    DensityField::from_cells(grid, cells.iter().map(|&k| grid.coords(k)))
}

/// Index sets of equal size `n`.
fn equal_sets(count: usize) -> impl Strategy<Value = Vec<Vec<usize>>> {
    (2usize..14).prop_flat_map(move |n| {
        proptest::collection::vec(proptest::sample::subsequence((0..SIDE * SIDE).collect::<Vec<_>>(), n), count)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn w2_is_symmetric(sets in equal_sets(2)) {
        let (a, b) = (field(&sets[0], 0.25), field(&sets[1], 0.25));
        let ab = w2_squared(&a, &b).unwrap();
        let ba = w2_squared(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-9 * ab.max(1e-12));
    }

    #[test]
    fn w2_satisfies_the_triangle_inequality(sets in equal_sets(3)) {
        let f: Vec<_> = sets.iter().map(|s| field(s, 0.25)).collect();
        let d = |x: &DensityField, y: &DensityField| w2_squared(x, y).unwrap().max(0.0).sqrt();
        let (ab, bc, ac) = (d(&f[0], &f[1]), d(&f[1], &f[2]), d(&f[0], &f[2]));
        prop_assert!(ac <= ab + bc + 1e-9, "{ac} > {ab} + {bc}");
    }

    #[test]
    fn w1_is_bounded_by_w2(sets in equal_sets(2)) {
        let (a, b) = (field(&sets[0], 0.25), field(&sets[1], 0.25));
        let m = mass(&a);
        let l = w1(&a, &b).unwrap();
        let q = w2_squared(&a, &b).unwrap();
        prop_assert!(l <= (q * m).sqrt() * (1.0 + 1e-9) + 1e-12, "W1 {l} vs sqrt(W2^2 m) {}", (q * m).sqrt());
    }

    #[test]
    fn doubling_the_cell_size_scales_the_costs(sets in equal_sets(2)) {
        let (a, b) = (field(&sets[0], 0.25), field(&sets[1], 0.25));
        let (a2, b2) = (field(&sets[0], 0.5), field(&sets[1], 0.5));
        // mass grows by 4 as well: W2^2 by 16, W1 by 8
        let (q, q2) = (w2_squared(&a, &b).unwrap(), w2_squared(&a2, &b2).unwrap());
        let (l, l2) = (w1(&a, &b).unwrap(), w1(&a2, &b2).unwrap());
        prop_assert!((q2 - 16.0 * q).abs() <= 1e-9 * q2.max(1e-12));
        prop_assert!((l2 - 8.0 * l).abs() <= 1e-9 * l2.max(1e-12));
    }

    #[test]
    fn symmetric_difference_is_a_metric(
        a in proptest::sample::subsequence((0..SIDE * SIDE).collect::<Vec<_>>(), 0..40),
        b in proptest::sample::subsequence((0..SIDE * SIDE).collect::<Vec<_>>(), 0..40),
        c in proptest::sample::subsequence((0..SIDE * SIDE).collect::<Vec<_>>(), 0..40),
    ) {
        let (a, b, c) = (field(&a, 0.5), field(&b, 0.5), field(&c, 0.5));
        let d = |x: &DensityField, y: &DensityField| symmetric_difference_volume(x, y).unwrap();
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert_eq!(d(&a, &a), 0.0);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
    }

    #[test]
    fn threshold_lands_within_one_cell_of_the_target(
        values in proptest::collection::vec(0.0f64..=1.0, SIDE * SIDE),
        frac in 0.0f64..1.0,
    ) {
        let grid = Grid2D::centered(SIDE, SIDE, 0.3).unwrap();
        let f = DensityField::new(grid, values).unwrap();
        let target = frac * mass(&f);
        let t = threshold_with_mass(&f, target);
        prop_assert!((mass(&t) - target).abs() <= grid.cell_area() * (1.0 + 1e-12));
        prop_assert!(t.values().iter().all(|&v| v == 0.0 || v == 1.0));
    }
}

fn blob(seed: &[usize]) -> DensityField {
    let grid = Grid2D::centered(24, 24, 1.0).unwrap();
    // union of a few 3x3 blocks around the chosen offsets, kept away from the edges
    let cells = seed.iter().flat_map(|&s| {
        let (ci, cj) = (8 + s % 8, 8 + (s / 8) % 8);
        (0..3).flat_map(move |a| (0..3).map(move |b| (ci + a, cj + b)))
    });
    normalized(&DensityField::from_cells(grid, cells))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn every_step_dissipates_and_keeps_mass(seed in proptest::collection::vec(0usize..64, 2..5)) {
        let prev = blob(&seed);
        let mut cfg = msflow_core::reference::dumbbell_config(1);
        cfg.inner.outer_iters = 10;
        let k = Kernel::default_for(prev.grid());
        let step = jko_step(&prev, &k, &cfg).unwrap();
        let e_prev = total_energy(&prev, &k).unwrap().total;
        prop_assert!(step.energy.total + step.w2_squared / (2.0 * cfg.h) <= e_prev + step.accept_slack());
        prop_assert!((mass(&step.state) - mass(&prev)).abs() <= prev.grid().cell_area());
        // every De Giorgi node obeys its own competitor inequality
        for node in &step.nodes {
            prop_assert!(node.objective <= e_prev + step.accept_slack());
        }
    }
}
