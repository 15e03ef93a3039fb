//! Uniform 2-D grids and relaxed set indicators living on them.
//!
//! Cells are addressed by `(i, j)` with `i` along x and `j` along y; the flat
//! index is `i * ny + j`, so flat order coincides with lexicographic `(i, j)`
//! order.

use std::fmt;

use crate::error::{Error, Result};

/// Uniform grid of square cells. `origin` is the center of cell `(0, 0)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid2D {
    nx: usize,
    ny: usize,
    cell_size: f64,
    origin: [f64; 2],
}

impl Grid2D {
    pub fn new(nx: usize, ny: usize, cell_size: f64, origin: [f64; 2]) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidGrid(format!("empty grid {nx}x{ny}")));
        }
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(Error::InvalidGrid(format!("cell size {cell_size}")));
        }
        if !origin.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidGrid(format!("origin {origin:?}")));
        }
        Ok(Self {
            nx,
            ny,
            cell_size,
            origin,
        })
    }

    /// Grid whose geometric center sits at the coordinate origin.
    pub fn centered(nx: usize, ny: usize, cell_size: f64) -> Result<Self> {
        let origin = [
            -0.5 * (nx as f64 - 1.0) * cell_size,
            -0.5 * (ny as f64 - 1.0) * cell_size,
        ];
        Self::new(nx, ny, cell_size, origin)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_size * self.cell_size
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        i * self.ny + j
    }

    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index / self.ny, index % self.ny)
    }

    #[inline]
    pub fn center(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.origin[0] + i as f64 * self.cell_size,
            self.origin[1] + j as f64 * self.cell_size,
        ]
    }

    #[inline]
    pub fn center_of(&self, index: usize) -> [f64; 2] {
        let (i, j) = self.coords(index);
        self.center(i, j)
    }

    /// Same cell pattern with a different cell size, scaled about the
    /// coordinate origin.
    pub fn rescaled(&self, cell_size: f64) -> Result<Self> {
        let s = cell_size / self.cell_size;
        Self::new(
            self.nx,
            self.ny,
            cell_size,
            [self.origin[0] * s, self.origin[1] * s],
        )
    }

    pub fn ensure_same(&self, other: &Grid2D) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                left: self.to_string(),
                right: other.to_string(),
            })
        }
    }
}

impl fmt::Display for Grid2D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}x{} cells of size {} at ({}, {})",
            self.nx, self.ny, self.cell_size, self.origin[0], self.origin[1]
        )
    }
}

/// Inclusive-exclusive rectangle of cell indices `[i0, i1) x [j0, j1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellBox {
    pub i0: usize,
    pub i1: usize,
    pub j0: usize,
    pub j1: usize,
}

impl CellBox {
    pub fn full(grid: &Grid2D) -> Self {
        Self {
            i0: 0,
            i1: grid.nx(),
            j0: 0,
            j1: grid.ny(),
        }
    }

    pub fn width(&self) -> usize {
        self.i1 - self.i0
    }

    pub fn height(&self) -> usize {
        self.j1 - self.j0
    }

    pub fn len(&self) -> usize {
        self.width() * self.height()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        i >= self.i0 && i < self.i1 && j >= self.j0 && j < self.j1
    }

    /// Grows the box by `margin` cells on every side, clipped to the grid.
    pub fn dilate(&self, margin: usize, grid: &Grid2D) -> Self {
        Self {
            i0: self.i0.saturating_sub(margin),
            i1: (self.i1 + margin).min(grid.nx()),
            j0: self.j0.saturating_sub(margin),
            j1: (self.j1 + margin).min(grid.ny()),
        }
    }

    pub fn union(&self, other: &CellBox) -> Self {
        Self {
            i0: self.i0.min(other.i0),
            i1: self.i1.max(other.i1),
            j0: self.j0.min(other.j0),
            j1: self.j1.max(other.j1),
        }
    }

    /// Whether the box touches the outermost ring of grid cells.
    pub fn touches_boundary(&self, grid: &Grid2D) -> bool {
        self.i0 == 0 || self.j0 == 0 || self.i1 == grid.nx() || self.j1 == grid.ny()
    }
}

/// Per-cell volume fraction in `[0, 1]`; the discrete stand-in for an
/// indicator function.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityField {
    grid: Grid2D,
    values: Vec<f64>,
}

impl DensityField {
    pub fn new(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "{} values for {} cells",
                values.len(),
                grid.len()
            )));
        }
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= 0.0 && **v <= 1.0))
        {
            return Err(Error::DensityOutOfRange { index, value });
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid2D) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    /// Samples `f` at cell centers and clamps into `[0, 1]`.
    pub fn from_fn(grid: Grid2D, f: impl Fn([f64; 2]) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|k| f(grid.center_of(k)).clamp(0.0, 1.0))
            .collect();
        Self { grid, values }
    }

    /// Binary field of the cells whose centers satisfy `inside`.
    pub fn from_predicate(grid: Grid2D, inside: impl Fn([f64; 2]) -> bool) -> Self {
        Self::from_fn(grid, |x| if inside(x) { 1.0 } else { 0.0 })
    }

    pub fn from_cells(grid: Grid2D, cells: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut field = Self::zeros(grid);
        for (i, j) in cells {
            let k = grid.index(i, j);
            field.values[k] = 1.0;
        }
        field
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Flat indices of cells with positive density, ascending.
    pub fn active_cells(&self) -> Vec<usize> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(|(k, _)| k)
            .collect()
    }

    pub fn active_count(&self) -> usize {
        self.values.iter().filter(|&&v| v > 0.0).count()
    }

    /// Smallest box holding every cell with positive density.
    pub fn support_box(&self) -> Option<CellBox> {
        let mut b: Option<CellBox> = None;
        for (k, &v) in self.values.iter().enumerate() {
            if v > 0.0 {
                let (i, j) = self.grid.coords(k);
                let cell = CellBox {
                    i0: i,
                    i1: i + 1,
                    j0: j,
                    j1: j + 1,
                };
                b = Some(match b {
                    Some(acc) => acc.union(&cell),
                    None => cell,
                });
            }
        }
        b
    }

    /// Same cell pattern on a grid with another cell size.
    pub fn with_cell_size(&self, cell_size: f64) -> Result<Self> {
        Ok(Self {
            grid: self.grid.rescaled(cell_size)?,
            values: self.values.clone(),
        })
    }

    /// Cells whose value differs, as a binary field.
    pub fn difference_mask(&self, other: &DensityField) -> Result<Vec<usize>> {
        self.grid.ensure_same(&other.grid)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(k, _)| k)
            .collect())
    }
}

/// Total mass `sum(values) * cell_area`.
pub fn mass(f: &DensityField) -> f64 {
    f.values.iter().sum::<f64>() * f.grid.cell_area()
}

/// L1 distance; the symmetric-difference volume for binary fields.
pub fn symmetric_difference_volume(a: &DensityField, b: &DensityField) -> Result<f64> {
    a.grid.ensure_same(&b.grid)?;
    let s: f64 = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y).abs())
        .sum();
    Ok(s * a.grid.cell_area())
}

/// `sum(values * |x|^2) * cell_area` about the coordinate origin.
pub fn second_moment(f: &DensityField) -> f64 {
    let s: f64 = f
        .values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(k, &v)| {
            let x = f.grid.center_of(k);
            v * (x[0] * x[0] + x[1] * x[1])
        })
        .sum();
    s * f.grid.cell_area()
}

/// Rounds a relaxed field to a binary one holding the whole-cell count
/// closest to `target_mass`.
///
/// Cells are taken by descending value; equal values go in ascending
/// lexicographic `(i, j)` order.
pub fn threshold_with_mass(f: &DensityField, target_mass: f64) -> DensityField {
    let grid = f.grid;
    let n = grid.len();
    let count = (target_mass / grid.cell_area()).round().clamp(0.0, n as f64) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    // flat index order is lexicographic, so a stable sort keeps the tie-break
    order.sort_by(|&a, &b| f.values[b].total_cmp(&f.values[a]));
    let mut values = vec![0.0; n];
    for &k in &order[..count] {
        values[k] = 1.0;
    }
    DensityField { grid, values }
}

/// Two fields on one grid whose masses agree within a tolerance.
#[derive(Clone, Debug)]
pub struct FieldPair {
    pub a: DensityField,
    pub b: DensityField,
}

impl FieldPair {
    pub fn new(a: DensityField, b: DensityField, mass_tol: f64) -> Result<Self> {
        a.grid.ensure_same(&b.grid)?;
        check_equal_mass(&a, &b, mass_tol)?;
        Ok(Self { a, b })
    }
}

/// Relative mass check shared by the transport solvers.
pub fn check_equal_mass(a: &DensityField, b: &DensityField, rel_tol: f64) -> Result<()> {
    let (ma, mb) = (mass(a), mass(b));
    let tolerance = rel_tol * ma.abs().max(mb.abs()).max(f64::MIN_POSITIVE);
    if (ma - mb).abs() > tolerance {
        return Err(Error::MassMismatch {
            source_mass: ma,
            target_mass: mb,
            tolerance,
        });
    }
    Ok(())
}
