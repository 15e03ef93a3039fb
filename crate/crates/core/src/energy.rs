//! Perimeter (isotropic total variation), the nonlocal interaction term, and
//! the first variation of their sum along divergence-free fields.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fields::VectorField;
use crate::grid::{DensityField, Grid2D};

/// Normals are taken from the indicator smoothed over this many cells.
pub const MOLLIFIER_RADIUS_CELLS: usize = 2;
/// Sup-norm tolerance on the discrete divergence, relative to
/// `1 + |xi|_inf / cell_size`.
pub const DIV_TOL: f64 = 1e-10;

/// Symmetric nonnegative convolution kernel sampled on cell offsets.
///
/// Weights are indexed by `(di + r) * (2r + 1) + (dj + r)` and normalized so
/// that `sum(weights) * cell_area = 1`. The zero kernel (no weights) switches
/// the nonlocal term off.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    radius: usize,
    weights: Vec<f64>,
    cell_size: f64,
}

impl Kernel {
    pub fn zero(grid: &Grid2D) -> Self {
        Self {
            radius: 0,
            weights: Vec::new(),
            cell_size: grid.cell_size(),
        }
    }

    /// All weight on the center cell.
    pub fn delta(grid: &Grid2D) -> Self {
        Self {
            radius: 0,
            weights: vec![1.0 / grid.cell_area()],
            cell_size: grid.cell_size(),
        }
    }

    /// Gaussian with standard deviation `std` (length), truncated at
    /// `radius` (length).
    pub fn gaussian(grid: &Grid2D, std: f64, radius: f64) -> Result<Self> {
        if !(std > 0.0 && radius >= 0.0) {
            return Err(Error::Kernel(format!(
                "gaussian needs std > 0 and radius >= 0, got {std}, {radius}"
            )));
        }
        let cs = grid.cell_size();
        Self::from_radial(grid, radius, |d| (-0.5 * (d / std).powi(2)).exp(), cs)
    }

    /// Normalized indicator of the disk of the given radius (length).
    pub fn uniform(grid: &Grid2D, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) {
            return Err(Error::Kernel(format!("uniform radius must be >= 0, got {radius}")));
        }
        Self::from_radial(grid, radius, |_| 1.0, grid.cell_size())
    }

    /// Truncated Gaussian with std `4 cs` and support radius `12 cs`.
    pub fn default_for(grid: &Grid2D) -> Self {
        let cs = grid.cell_size();
        Self::gaussian(grid, 4.0 * cs, 12.0 * cs).expect("positive cell size")
    }

    fn from_radial(grid: &Grid2D, radius: f64, w: impl Fn(f64) -> f64, cs: f64) -> Result<Self> {
        let r = (radius / cs + 1e-9).floor() as usize;
        let side = 2 * r + 1;
        let mut weights = vec![0.0; side * side];
        for a in 0..side {
            for b in 0..side {
                let d = cs * ((a as f64 - r as f64).powi(2) + (b as f64 - r as f64).powi(2)).sqrt();
                if d <= radius + 1e-9 * cs {
                    weights[a * side + b] = w(d);
                }
            }
        }
        Self::from_weights(grid, r, weights)
    }

    /// Symmetrizes and renormalizes raw offset weights.
    pub fn from_weights(grid: &Grid2D, radius: usize, mut weights: Vec<f64>) -> Result<Self> {
        let side = 2 * radius + 1;
        if weights.len() != side * side {
            return Err(Error::Kernel(format!(
                "expected {} weights for radius {radius}, got {}",
                side * side,
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
            return Err(Error::Kernel(format!("weights must be finite and nonnegative, got {w}")));
        }
        let n = weights.len();
        for k in 0..n / 2 {
            // the offset -z sits at the mirrored flat position
            let s = 0.5 * (weights[k] + weights[n - 1 - k]);
            weights[k] = s;
            weights[n - 1 - k] = s;
        }
        let total: f64 = weights.iter().sum::<f64>() * grid.cell_area();
        if !(total > 0.0) {
            return Err(Error::Kernel("kernel has no weight".into()));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        let mut kernel = Self {
            radius,
            weights,
            cell_size: grid.cell_size(),
        };
        kernel.trim();
        Ok(kernel)
    }

    /// Loads `dz_i,dz_j,weight` rows.
    pub fn from_csv(grid: &Grid2D, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ctx = path.display().to_string();
        let mut rows = Vec::new();
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::parse(&ctx, "empty kernel file"))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols != ["dz_i", "dz_j", "weight"] {
            return Err(Error::parse(&ctx, format!("expected header dz_i,dz_j,weight, got {header}")));
        }
        for (n, line) in lines.enumerate() {
            let parts: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = || Error::parse(&ctx, format!("row {}: {line}", n + 2));
            if parts.len() != 3 {
                return Err(bad());
            }
            let di: i64 = parts[0].parse().map_err(|_| bad())?;
            let dj: i64 = parts[1].parse().map_err(|_| bad())?;
            let w: f64 = parts[2].parse().map_err(|_| bad())?;
            rows.push((di, dj, w));
        }
        let r = rows
            .iter()
            .map(|&(i, j, _)| i.unsigned_abs().max(j.unsigned_abs()) as usize)
            .max()
            .ok_or_else(|| Error::parse(&ctx, "no kernel rows"))?;
        let side = 2 * r + 1;
        let mut weights = vec![0.0; side * side];
        for (di, dj, w) in rows {
            let a = (di + r as i64) as usize;
            let b = (dj + r as i64) as usize;
            weights[a * side + b] += w;
        }
        Self::from_weights(grid, r, weights)
    }

    /// Drops all-zero outer rings.
    fn trim(&mut self) {
        while self.radius > 0 {
            let r = self.radius;
            let side = 2 * r + 1;
            let ring_zero = (0..side).all(|a| {
                (0..side).all(|b| {
                    let on_ring = a == 0 || b == 0 || a == side - 1 || b == side - 1;
                    !on_ring || self.weights[a * side + b] == 0.0
                })
            });
            if !ring_zero {
                break;
            }
            let inner = side - 2;
            let mut w = Vec::with_capacity(inner * inner);
            for a in 1..side - 1 {
                w.extend_from_slice(&self.weights[a * side + 1..a * side + side - 1]);
            }
            self.weights = w;
            self.radius -= 1;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Weight at offset `(di, dj)`, zero outside the support.
    pub fn weight(&self, di: i64, dj: i64) -> f64 {
        let r = self.radius as i64;
        if self.weights.is_empty() || di.abs() > r || dj.abs() > r {
            return 0.0;
        }
        let side = 2 * r + 1;
        self.weights[((di + r) * side + dj + r) as usize]
    }

    /// The kernel with `z -> -z`.
    pub fn flipped(&self) -> Self {
        let mut k = self.clone();
        k.weights.reverse();
        k
    }

    fn check_grid(&self, grid: &Grid2D) -> Result<()> {
        let rel = (self.cell_size - grid.cell_size()).abs() / grid.cell_size();
        if rel > 1e-12 {
            return Err(Error::Kernel(format!(
                "kernel sampled at cell size {} used on grid with cell size {}",
                self.cell_size,
                grid.cell_size()
            )));
        }
        Ok(())
    }

    /// `(k * f)(x) = sum_z k(z) f(x - z) cell_area` on every cell, with zero
    /// padding.
    pub fn convolve(&self, f: &DensityField) -> Result<Vec<f64>> {
        self.convolve_values(f.grid(), f.values())
    }

    pub(crate) fn convolve_values(&self, grid: &Grid2D, values: &[f64]) -> Result<Vec<f64>> {
        self.check_grid(grid)?;
        let (nx, ny) = (grid.nx() as i64, grid.ny() as i64);
        let mut out = vec![0.0; grid.len()];
        if self.is_zero() {
            return Ok(out);
        }
        let r = self.radius as i64;
        let side = (2 * r + 1) as usize;
        let area = grid.cell_area();
        for (k, &v) in values.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let (yi, yj) = (k as i64 / ny, k as i64 % ny);
            let s = v * area;
            for a in 0..side {
                let xi = yi + a as i64 - r;
                if xi < 0 || xi >= nx {
                    continue;
                }
                let row = &self.weights[a * side..(a + 1) * side];
                let j_lo = (r - yj).max(0) as usize;
                let j_hi = (ny - yj + r).min(side as i64) as usize;
                let base = (xi * ny + yj - r) as isize;
                for b in j_lo..j_hi {
                    out[(base + b as isize) as usize] += row[b] * s;
                }
            }
        }
        Ok(out)
    }
}

/// Kernel selection as written in configs: `gaussian:STD`, `uniform:RADIUS`,
/// `delta`, `none`, `default`, or a path to a CSV file. Lengths are in grid
/// units after normalization.
#[derive(Clone, Debug, PartialEq)]
pub enum KernelSpec {
    Default,
    None,
    Delta,
    Gaussian { std: f64 },
    Uniform { radius: f64 },
    File(PathBuf),
}

impl KernelSpec {
    pub fn build(&self, grid: &Grid2D) -> Result<Kernel> {
        match self {
            KernelSpec::Default => Ok(Kernel::default_for(grid)),
            KernelSpec::None => Ok(Kernel::zero(grid)),
            KernelSpec::Delta => Ok(Kernel::delta(grid)),
            KernelSpec::Gaussian { std } => Kernel::gaussian(grid, *std, 3.0 * std),
            KernelSpec::Uniform { radius } => Kernel::uniform(grid, *radius),
            KernelSpec::File(p) => Kernel::from_csv(grid, p),
        }
    }
}

impl FromStr for KernelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let num = |v: &str| {
            v.trim()
                .parse::<f64>()
                .ok()
                .filter(|x| *x > 0.0 && x.is_finite())
                .ok_or_else(|| Error::Kernel(format!("bad kernel parameter in {s:?}")))
        };
        match s.split_once(':') {
            Some(("gaussian", v)) => Ok(KernelSpec::Gaussian { std: num(v)? }),
            Some(("uniform", v)) => Ok(KernelSpec::Uniform { radius: num(v)? }),
            _ => match s {
                "default" | "" => Ok(KernelSpec::Default),
                "none" | "zero" => Ok(KernelSpec::None),
                "delta" => Ok(KernelSpec::Delta),
                path if path.ends_with(".csv") => Ok(KernelSpec::File(PathBuf::from(path))),
                other => Err(Error::Kernel(format!("unknown kernel {other:?}"))),
            },
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Default => write!(f, "default"),
            KernelSpec::None => write!(f, "none"),
            KernelSpec::Delta => write!(f, "delta"),
            KernelSpec::Gaussian { std } => write!(f, "gaussian:{std}"),
            KernelSpec::Uniform { radius } => write!(f, "uniform:{radius}"),
            KernelSpec::File(p) => write!(f, "{}", p.display()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyBreakdown {
    pub perimeter: f64,
    pub nonlocal: f64,
    pub total: f64,
}

/// Forward differences per unit length; the difference past the last cell
/// is zero.
pub(crate) fn forward_gradient(grid: &Grid2D, v: &[f64], k: usize) -> (f64, f64) {
    let (nx, ny) = (grid.nx(), grid.ny());
    let (i, j) = (k / ny, k % ny);
    let cs = grid.cell_size();
    let dx = if i + 1 < nx { (v[k + ny] - v[k]) / cs } else { 0.0 };
    let dy = if j + 1 < ny { (v[k + 1] - v[k]) / cs } else { 0.0 };
    (dx, dy)
}

pub(crate) fn tv_values(grid: &Grid2D, v: &[f64]) -> f64 {
    let s: f64 = (0..grid.len())
        .map(|k| {
            let (dx, dy) = forward_gradient(grid, v, k);
            (dx * dx + dy * dy).sqrt()
        })
        .sum();
    s * grid.cell_area()
}

/// Isotropic total variation `sum sqrt(Dx^2 + Dy^2) cell_area`.
pub fn perimeter_tv(f: &DensityField) -> f64 {
    tv_values(f.grid(), f.values())
}

/// `sum f (k * f) cell_area`.
pub fn nonlocal_energy(f: &DensityField, k: &Kernel) -> Result<f64> {
    let conv = k.convolve(f)?;
    let s: f64 = f.values().iter().zip(&conv).map(|(a, b)| a * b).sum();
    Ok(s * f.grid().cell_area())
}

pub fn total_energy(f: &DensityField, k: &Kernel) -> Result<EnergyBreakdown> {
    let perimeter = perimeter_tv(f);
    let nonlocal = nonlocal_energy(f, k)?;
    Ok(EnergyBreakdown {
        perimeter,
        nonlocal,
        total: perimeter + nonlocal,
    })
}

/// Outer unit normal and boundary-measure density from the mollified
/// indicator. Both vanish away from the boundary layer.
pub fn boundary_normals(f: &DensityField) -> (Vec<[f64; 2]>, Vec<f64>) {
    let grid = f.grid();
    let (nx, ny) = (grid.nx() as i64, grid.ny() as i64);
    let r = MOLLIFIER_RADIUS_CELLS as i64;
    let mut offsets = Vec::new();
    for a in -r..=r {
        for b in -r..=r {
            let d2 = (a * a + b * b) as f64;
            if d2 <= (r * r) as f64 {
                offsets.push((a, b, (-0.5 * d2).exp()));
            }
        }
    }
    let norm: f64 = offsets.iter().map(|o| o.2).sum();
    let mut smooth = vec![0.0; grid.len()];
    for (k, &v) in f.values().iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        let (i, j) = (k as i64 / ny, k as i64 % ny);
        for &(a, b, w) in &offsets {
            let (x, y) = (i + a, j + b);
            if x >= 0 && x < nx && y >= 0 && y < ny {
                smooth[(x * ny + y) as usize] += v * w / norm;
            }
        }
    }
    let cs = grid.cell_size();
    let at = |x: i64, y: i64| -> f64 {
        if x >= 0 && x < nx && y >= 0 && y < ny {
            smooth[(x * ny + y) as usize]
        } else {
            0.0
        }
    };
    let mut normals = vec![[0.0; 2]; grid.len()];
    let mut measure = vec![0.0; grid.len()];
    for i in 0..nx {
        for j in 0..ny {
            let gx = (at(i + 1, j) - at(i - 1, j)) / (2.0 * cs);
            let gy = (at(i, j + 1) - at(i, j - 1)) / (2.0 * cs);
            let g = (gx * gx + gy * gy).sqrt();
            if g > 0.0 {
                let k = (i * ny + j) as usize;
                measure[k] = g;
                normals[k] = [-gx / g, -gy / g];
            }
        }
    }
    (normals, measure)
}

/// `int (div xi - nu . Dxi nu + 2 (k * chi) xi . nu) |grad chi|` with the
/// boundary measure and normal taken from the mollified indicator. Equals the
/// derivative of the energy along the flow of `xi`.
pub fn first_variation(f: &DensityField, k: &Kernel, xi: &VectorField) -> Result<f64> {
    let grid = f.grid();
    grid.ensure_same(&xi.grid)?;
    let sup = xi.sup_norm();
    let divergence = xi.max_abs_divergence();
    let tolerance = DIV_TOL * (1.0 + sup / grid.cell_size());
    if divergence > tolerance {
        return Err(Error::DivergenceViolation {
            divergence,
            tolerance,
        });
    }
    let (normals, measure) = boundary_normals(f);
    let kchi = k.convolve(f)?;
    let mut s = 0.0;
    for c in 0..grid.len() {
        let m = measure[c];
        if m == 0.0 {
            continue;
        }
        let nu = normals[c];
        let d = xi.jacobian(c);
        let div = d[0][0] + d[1][1];
        let nn = nu[0] * (d[0][0] * nu[0] + d[0][1] * nu[1]) + nu[1] * (d[1][0] * nu[0] + d[1][1] * nu[1]);
        let v = xi.vectors[c];
        s += (div - nn + 2.0 * kchi[c] * (v[0] * nu[0] + v[1] * nu[1])) * m;
    }
    Ok(s * grid.cell_area())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rect(grid: Grid2D, i0: usize, j0: usize, w: usize, h: usize) -> DensityField {
        DensityField::from_cells(grid, (i0..i0 + w).flat_map(|i| (j0..j0 + h).map(move |j| (i, j))))
    }

    #[test]
    fn perimeter_of_trivial_fields() {
        let grid = Grid2D::centered(16, 12, 0.1).unwrap();
        assert_eq!(perimeter_tv(&DensityField::zeros(grid)), 0.0);
        let full = DensityField::from_fn(grid, |_| 1.0);
        assert_eq!(perimeter_tv(&full), 0.0);
    }

    #[test]
    fn rectangle_perimeter_loses_one_corner_cell() {
        // Forward differences see only one diagonal corner in both
        // directions; that cell contributes sqrt(2) cs instead of 2 cs.
        let cs = 0.25;
        let grid = Grid2D::centered(20, 20, cs).unwrap();
        let (w, h) = (6, 4);
        let f = rect(grid, 5, 7, w, h);
        let (a, b) = (w as f64 * cs, h as f64 * cs);
        let expected = 2.0 * (a + b) - (2.0 - 2f64.sqrt()) * cs;
        assert_relative_eq!(perimeter_tv(&f), expected, max_relative = 1e-14);
    }

    #[test]
    fn perimeter_invariant_under_translation_and_transposition() {
        let grid = Grid2D::centered(24, 24, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cells: Vec<(usize, usize)> = (0..40).map(|_| (rng.gen_range(4..14), rng.gen_range(4..14))).collect();
        let f = DensityField::from_cells(grid, cells.iter().copied());
        let shifted = DensityField::from_cells(grid, cells.iter().map(|&(i, j)| (i + 5, j + 3)));
        assert_eq!(perimeter_tv(&f), perimeter_tv(&shifted));
        // reflection across the diagonal swaps Dx and Dy cell by cell
        let transposed = DensityField::from_cells(grid, cells.iter().map(|&(i, j)| (j, i)));
        assert_relative_eq!(perimeter_tv(&f), perimeter_tv(&transposed), max_relative = 1e-14);
        // a quarter turn turns one forward difference into a backward one,
        // which moves the sqrt(2) corner terms; only the edge count survives
        let rotated = DensityField::from_cells(grid, cells.iter().map(|&(i, j)| (j, 23 - i)));
        assert_relative_eq!(perimeter_tv(&f), perimeter_tv(&rotated), max_relative = 0.1);
    }

    #[test]
    fn delta_kernel_gives_mass() {
        let grid = Grid2D::centered(10, 10, 0.5).unwrap();
        let f = rect(grid, 2, 2, 3, 2);
        let k = Kernel::delta(&grid);
        assert_relative_eq!(nonlocal_energy(&f, &k).unwrap(), 6.0 * 0.25, max_relative = 1e-15);
        let e = total_energy(&f, &k).unwrap();
        assert_eq!(e.total, e.perimeter + e.nonlocal);
    }

    #[test]
    fn nonlocal_matches_double_sum() {
        let grid = Grid2D::centered(8, 8, 0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = DensityField::new(grid, (0..64).map(|_| rng.gen::<f64>()).collect()).unwrap();
        let k = Kernel::gaussian(&grid, 0.3, 0.6).unwrap();
        let mut oracle = 0.0;
        for x in 0..64 {
            let (xi, xj) = grid.coords(x);
            for y in 0..64 {
                let (yi, yj) = grid.coords(y);
                let w = k.weight(xi as i64 - yi as i64, xj as i64 - yj as i64);
                oracle += f.values()[x] * w * f.values()[y];
            }
        }
        oracle *= grid.cell_area() * grid.cell_area();
        assert_relative_eq!(nonlocal_energy(&f, &k).unwrap(), oracle, max_relative = 1e-12);
    }

    #[test]
    fn kernel_is_symmetric_and_normalized() {
        let grid = Grid2D::centered(8, 8, 0.1).unwrap();
        for k in [
            Kernel::default_for(&grid),
            Kernel::uniform(&grid, 0.35).unwrap(),
            Kernel::from_weights(&grid, 1, vec![1.0, 0.0, 0.0, 2.0, 5.0, 0.0, 3.0, 0.0, 4.0]).unwrap(),
        ] {
            let r = k.radius() as i64;
            let mut total = 0.0;
            for a in -r..=r {
                for b in -r..=r {
                    assert_eq!(k.weight(a, b), k.weight(-a, -b));
                    total += k.weight(a, b);
                }
            }
            assert_relative_eq!(total * grid.cell_area(), 1.0, max_relative = 1e-14);
            assert_eq!(k.flipped(), k);
        }
    }

    #[test]
    fn kernel_specs_round_trip() {
        for s in ["default", "none", "delta", "gaussian:0.125", "uniform:0.3", "k.csv"] {
            let spec: KernelSpec = s.parse().unwrap();
            assert_eq!(spec.to_string(), s);
        }
        assert!("gaussian:-1".parse::<KernelSpec>().is_err());
        assert!("cauchy".parse::<KernelSpec>().is_err());
    }

    #[test]
    fn csv_kernel_is_symmetrized() {
        let grid = Grid2D::centered(8, 8, 0.5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.csv");
        std::fs::write(&path, "dz_i,dz_j,weight\n0,0,2\n1,0,1\n").unwrap();
        let k = Kernel::from_csv(&grid, &path).unwrap();
        assert_relative_eq!(k.weight(1, 0), k.weight(-1, 0));
        assert_relative_eq!(k.weight(0, 0), 4.0 * k.weight(1, 0), max_relative = 1e-15);
        std::fs::write(&path, "a,b,c\n").unwrap();
        assert!(Kernel::from_csv(&grid, &path).is_err());
    }

    #[test]
    fn nonlocal_is_lipschitz_in_l1() {
        let grid = Grid2D::centered(16, 16, 0.125).unwrap();
        let k = Kernel::default_for(&grid);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let kmax = (-3i64..=3)
            .flat_map(|a| (-3i64..=3).map(move |b| (a, b)))
            .map(|(a, b)| k.weight(a, b))
            .fold(0.0, f64::max);
        for _ in 0..20 {
            let f = DensityField::new(grid, (0..256).map(|_| rng.gen::<f64>()).collect()).unwrap();
            let g = DensityField::new(grid, (0..256).map(|_| rng.gen::<f64>()).collect()).unwrap();
            let l1 = crate::grid::symmetric_difference_volume(&f, &g).unwrap();
            // |k*f - k*g| <= |k|_inf |f - g|_1 pointwise
            let cf = k.convolve(&f).unwrap();
            let cg = k.convolve(&g).unwrap();
            for (a, b) in cf.iter().zip(&cg) {
                assert!((a - b).abs() <= kmax * l1 * (1.0 + 1e-12));
            }
            let d = (nonlocal_energy(&f, &k).unwrap() - nonlocal_energy(&g, &k).unwrap()).abs();
            assert!(d <= 2.0 * kmax * l1 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn perimeter_is_lower_semicontinuous_along_mollified_sequence() {
        let grid = Grid2D::centered(64, 64, 1.0 / 32.0).unwrap();
        let disk = DensityField::from_predicate(grid, |x| x[0].hypot(x[1]) < 0.5);
        let blur = Kernel::gaussian(&grid, 2.0 / 32.0, 6.0 / 32.0).unwrap();
        let blurred: Vec<f64> = blur
            .convolve(&disk)
            .unwrap()
            .into_iter()
            .map(|v| v.clamp(0.0, 1.0))
            .collect();
        let p = perimeter_tv(&disk);
        let mut last = 0.0;
        for t in [0.5, 0.25, 0.1, 0.01, 0.001] {
            let values = disk
                .values()
                .iter()
                .zip(&blurred)
                .map(|(c, b)| (1.0 - t) * c + t * b)
                .collect();
            let f = DensityField::new(grid, values).unwrap();
            last = perimeter_tv(&f);
            assert!(last < p);
        }
        assert!(last >= p * (1.0 - 1e-3));
    }

    #[test]
    fn first_variation_of_strained_rectangle() {
        // xi = (x, -y) stretches x and squeezes y, so P changes at rate 2(a - b)
        let cs = 1.0 / 64.0;
        let grid = Grid2D::centered(128, 128, cs).unwrap();
        let f = DensityField::from_predicate(grid, |x| x[0].abs() < 0.5 && x[1].abs() < 0.25);
        let psi: Vec<f64> = (0..grid.len()).map(|c| {
            let x = grid.center_of(c);
            x[0] * x[1]
        }).collect();
        let xi = VectorField::from_stream(grid, &psi);
        let k = Kernel::zero(&grid);
        let fv = first_variation(&f, &k, &xi).unwrap();
        assert!((fv - 2.0 * (1.0 - 0.5)).abs() < 10.0 * cs, "first variation {fv}");
    }

    #[test]
    fn first_variation_rejects_divergent_fields() {
        let grid = Grid2D::centered(16, 16, 0.1).unwrap();
        let f = rect(grid, 4, 4, 6, 6);
        let xi = VectorField::from_fn(grid, |x| [x[0], x[1]]);
        assert!(matches!(
            first_variation(&f, &Kernel::zero(&grid), &xi),
            Err(Error::DivergenceViolation { .. })
        ));
        assert_eq!(first_variation(&f, &Kernel::zero(&grid), &VectorField::zeros(grid)).unwrap(), 0.0);
    }
}
