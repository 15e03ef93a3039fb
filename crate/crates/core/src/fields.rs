//! Cell-centered vector fields, divergence-free test fields built from stream
//! functions, and smooth scalar test functions.
//!
//! Derivatives are central differences with zero values past the grid edge.
//! Central differences along the two axes commute, so the rotated gradient of
//! any sampled stream function has zero discrete divergence up to rounding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::{CellBox, DensityField, Grid2D};

#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    pub grid: Grid2D,
    pub vectors: Vec<[f64; 2]>,
}

impl VectorField {
    pub fn zeros(grid: Grid2D) -> Self {
        Self {
            grid,
            vectors: vec![[0.0; 2]; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid2D, f: impl Fn([f64; 2]) -> [f64; 2]) -> Self {
        let vectors = (0..grid.len()).map(|k| f(grid.center_of(k))).collect();
        Self { grid, vectors }
    }

    /// `(d psi / dy, -d psi / dx)` for a stream function sampled on cells.
    pub fn from_stream(grid: Grid2D, psi: &[f64]) -> Self {
        let vectors = (0..grid.len())
            .map(|k| {
                let [dx, dy] = central_gradient(&grid, psi, k);
                [dy, -dx]
            })
            .collect();
        Self { grid, vectors }
    }

    pub fn sup_norm(&self) -> f64 {
        self.vectors
            .iter()
            .map(|v| v[0].hypot(v[1]))
            .fold(0.0, f64::max)
    }

    pub fn scaled(mut self, s: f64) -> Self {
        for v in &mut self.vectors {
            v[0] *= s;
            v[1] *= s;
        }
        self
    }

    fn component(&self, c: usize, i: i64, j: i64) -> f64 {
        let (nx, ny) = (self.grid.nx() as i64, self.grid.ny() as i64);
        if i < 0 || j < 0 || i >= nx || j >= ny {
            0.0
        } else {
            self.vectors[(i * ny + j) as usize][c]
        }
    }

    /// `d[a][b] = d xi_a / d x_b` at a cell.
    pub fn jacobian(&self, k: usize) -> [[f64; 2]; 2] {
        let ny = self.grid.ny();
        let (i, j) = ((k / ny) as i64, (k % ny) as i64);
        let h2 = 2.0 * self.grid.cell_size();
        let mut d = [[0.0; 2]; 2];
        for (a, row) in d.iter_mut().enumerate() {
            row[0] = (self.component(a, i + 1, j) - self.component(a, i - 1, j)) / h2;
            row[1] = (self.component(a, i, j + 1) - self.component(a, i, j - 1)) / h2;
        }
        d
    }

    pub fn divergence(&self, k: usize) -> f64 {
        let d = self.jacobian(k);
        d[0][0] + d[1][1]
    }

    pub fn max_abs_divergence(&self) -> f64 {
        (0..self.grid.len())
            .map(|k| self.divergence(k).abs())
            .fold(0.0, f64::max)
    }

    /// `sum xi . eta rho cell_area`.
    pub fn weighted_dot(&self, other: &VectorField, rho: &DensityField) -> f64 {
        let s: f64 = self
            .vectors
            .iter()
            .zip(&other.vectors)
            .zip(rho.values())
            .filter(|(_, &r)| r != 0.0)
            .map(|((a, b), r)| (a[0] * b[0] + a[1] * b[1]) * r)
            .sum();
        s * self.grid.cell_area()
    }

    /// `sum |xi|^2 rho cell_area`.
    pub fn kinetic_energy(&self, rho: &DensityField) -> f64 {
        self.weighted_dot(self, rho)
    }
}

fn sample(grid: &Grid2D, v: &[f64], i: i64, j: i64) -> f64 {
    let (nx, ny) = (grid.nx() as i64, grid.ny() as i64);
    if i < 0 || j < 0 || i >= nx || j >= ny {
        0.0
    } else {
        v[(i * ny + j) as usize]
    }
}

pub(crate) fn central_gradient(grid: &Grid2D, v: &[f64], k: usize) -> [f64; 2] {
    let ny = grid.ny();
    let (i, j) = ((k / ny) as i64, (k % ny) as i64);
    let h2 = 2.0 * grid.cell_size();
    [
        (sample(grid, v, i + 1, j) - sample(grid, v, i - 1, j)) / h2,
        (sample(grid, v, i, j + 1) - sample(grid, v, i, j - 1)) / h2,
    ]
}

/// Compactly supported stream-function bump `a (1 - r^2/R^2)^3`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StreamBump {
    pub center: [f64; 2],
    pub radius: f64,
    pub amplitude: f64,
}

impl StreamBump {
    fn eval(&self, x: [f64; 2]) -> f64 {
        let r2 = ((x[0] - self.center[0]).powi(2) + (x[1] - self.center[1]).powi(2)) / self.radius.powi(2);
        if r2 >= 1.0 {
            0.0
        } else {
            self.amplitude * (1.0 - r2).powi(3)
        }
    }
}

/// Random divergence-free test field: the rotated gradient of a sum of
/// stream-function bumps centered in a box.
#[derive(Clone, Debug, PartialEq)]
pub struct TestFieldSpec {
    pub bumps: Vec<StreamBump>,
    pub support: CellBox,
    pub seed: u64,
}

impl TestFieldSpec {
    pub fn random(grid: &Grid2D, support: CellBox, n_bumps: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cs = grid.cell_size();
        let lo = grid.center(support.i0, support.j0);
        let hi = grid.center(support.i1 - 1, support.j1 - 1);
        let span = (hi[0] - lo[0]).min(hi[1] - lo[1]).max(0.0);
        let r_min = 4.0 * cs;
        let r_max = (0.5 * span).max(6.0 * cs);
        let bumps = (0..n_bumps)
            .map(|_| StreamBump {
                center: [rng.gen_range(lo[0]..=hi[0]), rng.gen_range(lo[1]..=hi[1])],
                radius: rng.gen_range(r_min..=r_max),
                amplitude: rng.gen_range(-1.0..=1.0),
            })
            .collect();
        Self {
            bumps,
            support,
            seed,
        }
    }

    /// The generated field, scaled to unit sup norm (zero stays zero).
    pub fn field(&self, grid: &Grid2D) -> VectorField {
        let psi: Vec<f64> = (0..grid.len())
            .map(|k| {
                let x = grid.center_of(k);
                self.bumps.iter().map(|b| b.eval(x)).sum()
            })
            .collect();
        let xi = VectorField::from_stream(*grid, &psi);
        let sup = xi.sup_norm();
        if sup > 0.0 {
            xi.scaled(1.0 / sup)
        } else {
            xi
        }
    }
}

/// `n` specs with seeds `base_seed, base_seed + 1, ...`.
pub fn random_test_fields(grid: &Grid2D, support: CellBox, n: usize, base_seed: u64) -> Vec<TestFieldSpec> {
    (0..n as u64)
        .map(|s| TestFieldSpec::random(grid, support, 3, base_seed.wrapping_add(s)))
        .collect()
}

/// Smooth scalar test function `a sin(w . x + theta)` with exact derivative
/// bounds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalarTestFn {
    pub amplitude: f64,
    pub wave: [f64; 2],
    pub phase: f64,
}

impl ScalarTestFn {
    pub fn eval(&self, x: [f64; 2]) -> f64 {
        self.amplitude * (self.wave[0] * x[0] + self.wave[1] * x[1] + self.phase).sin()
    }

    pub fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        let c = self.amplitude * (self.wave[0] * x[0] + self.wave[1] * x[1] + self.phase).cos();
        [c * self.wave[0], c * self.wave[1]]
    }

    /// Operator norm bound `|a| |w|^2` of the Hessian.
    pub fn hessian_sup(&self) -> f64 {
        self.amplitude.abs() * (self.wave[0].powi(2) + self.wave[1].powi(2))
    }

    /// Unit-amplitude waves with wavelengths between `length / 3` and
    /// `2 length`.
    pub fn random_set(length: f64, n: usize, seed: u64) -> Vec<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let k = std::f64::consts::TAU / length * rng.gen_range(0.5..3.0);
                let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                Self {
                    amplitude: 1.0,
                    wave: [k * angle.cos(), k * angle.sin()],
                    phase: rng.gen_range(0.0..std::f64::consts::TAU),
                }
            })
            .collect()
    }
}

/// Closest rotated gradient (least squares over stream functions) to a given
/// field, by conjugate gradients on the normal equations.
pub fn divergence_free_projection(u: &VectorField, iterations: usize) -> VectorField {
    let grid = u.grid;
    let n = grid.len();
    // adjoint of psi -> rotated gradient: (D_y^T u_x - D_x^T u_y); central
    // differences are antisymmetric under zero padding
    let adjoint = |v: &VectorField| -> Vec<f64> {
        let ux: Vec<f64> = v.vectors.iter().map(|a| a[0]).collect();
        let uy: Vec<f64> = v.vectors.iter().map(|a| a[1]).collect();
        (0..n)
            .map(|k| -central_gradient(&grid, &ux, k)[1] + central_gradient(&grid, &uy, k)[0])
            .collect()
    };
    let normal = |p: &[f64]| adjoint(&VectorField::from_stream(grid, p));
    let b = adjoint(u);
    let mut x = vec![0.0; n];
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr: f64 = r.iter().map(|v| v * v).sum();
    let stop = 1e-24 * rr.max(f64::MIN_POSITIVE);
    for _ in 0..iterations {
        if rr <= stop {
            break;
        }
        let ap = normal(&p);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            break;
        }
        let alpha = rr / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rr_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rr_new / rr;
        rr = rr_new;
        for k in 0..n {
            p[k] = r[k] + beta * p[k];
        }
    }
    VectorField::from_stream(grid, &x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn random_test_fields_are_divergence_free(seed in 0u64..10_000) {
            let grid = Grid2D::centered(40, 32, 0.05).unwrap();
            let support = CellBox { i0: 5, i1: 35, j0: 4, j1: 28 };
            let xi = TestFieldSpec::random(&grid, support, 3, seed).field(&grid);
            prop_assert!(xi.max_abs_divergence() <= 1e-10);
            prop_assert!((xi.sup_norm() - 1.0).abs() < 1e-12 || xi.sup_norm() == 0.0);
        }
    }

    #[test]
    fn specs_are_reproducible() {
        let grid = Grid2D::centered(20, 20, 0.1).unwrap();
        let bx = CellBox::full(&grid);
        assert_eq!(TestFieldSpec::random(&grid, bx, 3, 5), TestFieldSpec::random(&grid, bx, 3, 5));
        assert_ne!(TestFieldSpec::random(&grid, bx, 3, 5), TestFieldSpec::random(&grid, bx, 3, 6));
    }

    #[test]
    fn scalar_test_gradient_matches_finite_differences() {
        for z in ScalarTestFn::random_set(2.0, 5, 3) {
            let x = [0.3, -0.2];
            let h = 1e-6;
            let g = z.gradient(x);
            let fd = [
                (z.eval([x[0] + h, x[1]]) - z.eval([x[0] - h, x[1]])) / (2.0 * h),
                (z.eval([x[0], x[1] + h]) - z.eval([x[0], x[1] - h])) / (2.0 * h),
            ];
            assert!((g[0] - fd[0]).abs() < 1e-6 && (g[1] - fd[1]).abs() < 1e-6);
        }
    }

    #[test]
    fn projection_keeps_divergence_free_fields_and_kills_gradients() {
        let grid = Grid2D::centered(24, 24, 0.1).unwrap();
        let bx = CellBox { i0: 4, i1: 20, j0: 4, j1: 20 };
        let xi = TestFieldSpec::random(&grid, bx, 2, 1).field(&grid);
        let p = divergence_free_projection(&xi, 500);
        let err = xi
            .vectors
            .iter()
            .zip(&p.vectors)
            .map(|(a, b)| (a[0] - b[0]).hypot(a[1] - b[1]))
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "projection moved a divergence-free field by {err}");
        assert!(p.max_abs_divergence() <= 1e-10);
    }
}
