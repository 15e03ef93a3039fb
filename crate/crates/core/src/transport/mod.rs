//! Optimal transport between equal-mass density fields.
//!
//! Plans are stored sparsely in volume units. Potentials are kept raw for the
//! cost `|x - y|^2 / 2` (or `|x - y|` when `p = 1`); dividing by the time step
//! gives the Kantorovich form used by the minimizing-movement step.

pub mod simplex;
pub(crate) mod sinkhorn;

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{check_equal_mass, mass, CellBox, DensityField, Grid2D};
use simplex::TransportationSimplex;
use sinkhorn::{BoxWeights, LogSinkhorn};

pub const EXACT_CELL_CAP: usize = 4096;
pub const DEFAULT_MASS_TOL: f64 = 1e-8;
/// Relative to the transported mass.
pub const DEFAULT_MARGINAL_TOL: f64 = 1e-7;
pub const DEFAULT_DUALITY_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CostExponent {
    One,
    Two,
}

impl CostExponent {
    /// `|x - y|^p` between two cell centers, from the index offset.
    pub fn cost(self, grid: &Grid2D, di: f64, dj: f64) -> f64 {
        let d2 = (di * di + dj * dj) * grid.cell_area();
        match self {
            CostExponent::One => d2.sqrt(),
            CostExponent::Two => d2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanEntry {
    pub source: usize,
    pub target: usize,
    pub mass: f64,
}

/// Sparse coupling between two fields on one grid.
#[derive(Clone, Debug)]
pub struct TransportPlan {
    grid: Grid2D,
    exponent: CostExponent,
    entries: Vec<PlanEntry>,
    cost_value: f64,
}

impl TransportPlan {
    /// Builds a plan and evaluates its cost exactly for the stored entries.
    pub fn new(grid: Grid2D, exponent: CostExponent, mut entries: Vec<PlanEntry>) -> Self {
        entries.retain(|e| e.mass > 0.0);
        entries.sort_by_key(|e| (e.source, e.target));
        let cost_value = entries
            .iter()
            .map(|e| {
                let (si, sj) = grid.coords(e.source);
                let (ti, tj) = grid.coords(e.target);
                e.mass * exponent.cost(&grid, si as f64 - ti as f64, sj as f64 - tj as f64)
            })
            .sum();
        Self {
            grid,
            exponent,
            entries,
            cost_value,
        }
    }

    /// The identity coupling of a field with itself.
    pub fn identity(field: &DensityField, exponent: CostExponent) -> Self {
        let area = field.grid().cell_area();
        let entries = field
            .values()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(|(k, &v)| PlanEntry {
                source: k,
                target: k,
                mass: v * area,
            })
            .collect();
        Self::new(*field.grid(), exponent, entries)
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn exponent(&self) -> CostExponent {
        self.exponent
    }

    pub fn entries(&self) -> &[PlanEntry] {
        &self.entries
    }

    pub fn cost_value(&self) -> f64 {
        self.cost_value
    }

    /// Row sums per grid cell.
    pub fn source_marginal(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.grid.len()];
        for e in &self.entries {
            m[e.source] += e.mass;
        }
        m
    }

    /// Column sums per grid cell.
    pub fn target_marginal(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.grid.len()];
        for e in &self.entries {
            m[e.target] += e.mass;
        }
        m
    }

    /// Largest absolute deviation of either marginal from the given fields.
    pub fn marginal_violation(&self, a: &DensityField, b: &DensityField) -> f64 {
        let area = self.grid.cell_area();
        let rows = self.source_marginal();
        let cols = self.target_marginal();
        let mut worst: f64 = 0.0;
        for k in 0..self.grid.len() {
            worst = worst.max((rows[k] - a.values()[k] * area).abs());
            worst = worst.max((cols[k] - b.values()[k] * area).abs());
        }
        worst
    }

    /// CSV dump with header `src_i,src_j,dst_i,dst_j,mass`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "src_i,src_j,dst_i,dst_j,mass").map_err(io)?;
        for e in &self.entries {
            let (si, sj) = self.grid.coords(e.source);
            let (ti, tj) = self.grid.coords(e.target);
            writeln!(w, "{si},{sj},{ti},{tj},{:e}", e.mass).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Dual potentials on every grid cell, raw (not divided by a time step).
///
/// Values off the supports are c-transform extensions, so feasibility holds
/// for all cell pairs.
#[derive(Clone, Debug)]
pub struct Potentials {
    grid: Grid2D,
    exponent: CostExponent,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
}

impl Potentials {
    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    /// `(phi / h, psi / h)`, feasible for `|x - y|^2 / (2h)`.
    pub fn kantorovich(&self, h: f64) -> (Vec<f64>, Vec<f64>) {
        (
            self.phi.iter().map(|v| v / h).collect(),
            self.psi.iter().map(|v| v / h).collect(),
        )
    }

    fn raw_cost(&self, x: usize, y: usize) -> f64 {
        let (xi, xj) = self.grid.coords(x);
        let (yi, yj) = self.grid.coords(y);
        let c = self
            .exponent
            .cost(&self.grid, xi as f64 - yi as f64, xj as f64 - yj as f64);
        match self.exponent {
            CostExponent::Two => 0.5 * c,
            CostExponent::One => c,
        }
    }

    /// Largest `phi(x)/h + psi(y)/h - cost(x, y)/h` over cell pairs taken
    /// with the given stride on both sides.
    pub fn max_violation(&self, h: f64, stride: usize) -> f64 {
        let n = self.grid.len();
        let stride = stride.max(1);
        let mut worst = f64::NEG_INFINITY;
        for x in (0..n).step_by(stride) {
            for y in (0..n).step_by(stride) {
                let v = (self.phi[x] + self.psi[y] - self.raw_cost(x, y)) / h;
                worst = worst.max(v);
            }
        }
        worst
    }
}

/// Per-cell displacement velocity.
pub type VelocityField = crate::fields::VectorField;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OtMethod {
    Exact,
    Entropic,
}

/// Transport solution with its optimality certificate.
#[derive(Clone, Debug)]
pub struct OtSolution {
    pub plan: TransportPlan,
    pub potentials: Potentials,
    /// Primal cost minus a feasible dual value, relative to the primal cost
    /// (absolute when the cost vanishes).
    pub duality_gap: f64,
    /// Simplex pivots or Sinkhorn iterations.
    pub iterations: usize,
    pub method: OtMethod,
    /// Sinkhorn divergence estimate (entropic solves only).
    pub debiased_cost: Option<f64>,
}

impl OtSolution {
    pub fn cost(&self) -> f64 {
        self.plan.cost_value()
    }
}

struct ExactCore {
    src: Vec<usize>,
    tgt: Vec<usize>,
    /// Target duals in units of the scaled cost (see `unit`).
    v: Vec<f64>,
    unit_cost: Vec<f64>,
    /// Multiplies the unit cost into length units.
    unit: f64,
    plan: TransportPlan,
    pivots: usize,
}

fn exact_core(a: &DensityField, b: &DensityField, p: CostExponent) -> Result<ExactCore> {
    a.grid().ensure_same(b.grid())?;
    check_equal_mass(a, b, DEFAULT_MASS_TOL)?;
    let grid = *a.grid();
    let src = a.active_cells();
    let tgt = b.active_cells();
    let active = src.len() + tgt.len();
    if active > EXACT_CELL_CAP {
        return Err(Error::CellCapExceeded {
            active,
            cap: EXACT_CELL_CAP,
        });
    }
    let area = grid.cell_area();
    if src.is_empty() || tgt.is_empty() {
        return Ok(ExactCore {
            src,
            tgt,
            v: vec![],
            unit_cost: vec![],
            unit: 1.0,
            plan: TransportPlan::new(grid, p, vec![]),
            pivots: 0,
        });
    }
    // Squared costs are integers in units of cell_area, which keeps the
    // simplex pivots exact.
    let (unit, tolerance) = match p {
        CostExponent::Two => (area, 0.0),
        CostExponent::One => (grid.cell_size(), 1e-12),
    };
    let tgt_ij: Vec<(f64, f64)> = tgt
        .iter()
        .map(|&k| {
            let (i, j) = grid.coords(k);
            (i as f64, j as f64)
        })
        .collect();
    let mut unit_cost = Vec::with_capacity(src.len() * tgt.len());
    for &s in &src {
        let (si, sj) = grid.coords(s);
        for &(ti, tj) in &tgt_ij {
            let d2 = (si as f64 - ti).powi(2) + (sj as f64 - tj).powi(2);
            unit_cost.push(match p {
                CostExponent::Two => d2,
                CostExponent::One => d2.sqrt(),
            });
        }
    }
    let supply: Vec<f64> = src.iter().map(|&k| a.values()[k]).collect();
    let mut demand: Vec<f64> = tgt.iter().map(|&k| b.values()[k]).collect();
    let (ss, ds): (f64, f64) = (supply.iter().sum(), demand.iter().sum());
    if ss != ds {
        demand.iter_mut().for_each(|d| *d *= ss / ds);
    }
    let sol = TransportationSimplex::new(src.len(), tgt.len(), &unit_cost)
        .tolerance(tolerance)
        .solve(&supply, &demand)?;
    let nt = tgt.len();
    let mut entries = Vec::with_capacity(src.len() + nt);
    for (r, &s) in src.iter().enumerate() {
        for (c, &t) in tgt.iter().enumerate() {
            let f = sol.flow[r * nt + c];
            if f > 0.0 {
                entries.push(PlanEntry {
                    source: s,
                    target: t,
                    mass: f * area,
                });
            }
        }
    }
    Ok(ExactCore {
        src,
        tgt,
        v: sol.v,
        unit_cost,
        unit,
        plan: TransportPlan::new(grid, p, entries),
        pivots: sol.pivots,
    })
}

/// Exact optimal coupling for `|x - y|^p` by network simplex, certified with
/// a c-transform dual.
pub fn exact_ot(a: &DensityField, b: &DensityField, p: CostExponent) -> Result<OtSolution> {
    let core = exact_core(a, b, p)?;
    let grid = *a.grid();
    let area = grid.cell_area();
    let nt = core.tgt.len();

    // Tighten the source duals by a c-transform so the dual pair is feasible
    // on every arc, then compare objectives.
    let u: Vec<f64> = (0..core.src.len())
        .map(|r| {
            (0..nt)
                .map(|c| core.unit_cost[r * nt + c] - core.v[c])
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let dual = (core.src.iter().zip(&u).map(|(&k, x)| a.values()[k] * x).sum::<f64>()
        + core.tgt.iter().zip(&core.v).map(|(&k, y)| b.values()[k] * y).sum::<f64>())
        * core.unit
        * area;
    let primal = core.plan.cost_value();
    let gap = primal - dual;
    let duality_gap = if primal > 0.0 { gap / primal } else { gap };

    // Raw potentials for the cost |x-y|^2/2 (p = 2) or |x-y| (p = 1).
    let half = match p {
        CostExponent::Two => 0.5,
        CostExponent::One => 1.0,
    };
    let psi_tgt: Vec<(usize, f64)> = core
        .tgt
        .iter()
        .zip(&core.v)
        .map(|(&k, y)| (k, y * core.unit * half))
        .collect();
    let (phi, psi) = match p {
        CostExponent::Two => {
            let phi = quadratic_c_transform(&grid, &sparse_to_full(&grid, &psi_tgt));
            let psi = quadratic_c_transform(&grid, &phi);
            (phi, psi)
        }
        CostExponent::One => {
            let phi = c_transform_extend(&grid, p, &psi_tgt);
            let all: Vec<(usize, f64)> = phi.iter().copied().enumerate().collect();
            let psi = c_transform_extend(&grid, p, &all);
            (phi, psi)
        }
    };
    let potentials = Potentials {
        grid,
        exponent: p,
        phi,
        psi,
    };
    Ok(OtSolution {
        plan: core.plan,
        potentials,
        duality_gap,
        iterations: core.pivots,
        method: OtMethod::Exact,
        debiased_cost: None,
    })
}

/// `min_y (cost(x, y) - pot(y))` over the listed cells, for every grid cell.
fn c_transform_extend(grid: &Grid2D, p: CostExponent, pot: &[(usize, f64)]) -> Vec<f64> {
    let half = match p {
        CostExponent::Two => 0.5,
        CostExponent::One => 1.0,
    };
    let cells: Vec<(f64, f64, f64)> = pot
        .iter()
        .map(|&(k, v)| {
            let (i, j) = grid.coords(k);
            (i as f64, j as f64, v)
        })
        .collect();
    (0..grid.len())
        .map(|x| {
            let (xi, xj) = grid.coords(x);
            cells
                .iter()
                .map(|&(i, j, v)| half * p.cost(grid, xi as f64 - i, xj as f64 - j) - v)
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

fn sparse_to_full(grid: &Grid2D, pot: &[(usize, f64)]) -> Vec<f64> {
    let mut out = vec![f64::NEG_INFINITY; grid.len()];
    for &(k, v) in pot {
        out[k] = v;
    }
    out
}

/// `min_y (|x - y|^2 / 2 - pot(y))` for every cell `x`, evaluated one axis at
/// a time. Cells with `pot = -inf` do not take part.
pub(crate) fn quadratic_c_transform(grid: &Grid2D, pot: &[f64]) -> Vec<f64> {
    let (nx, ny) = (grid.nx(), grid.ny());
    let half = 0.5 * grid.cell_area();
    let mut partial = vec![f64::INFINITY; nx * ny];
    for yi in 0..nx {
        let col = &pot[yi * ny..(yi + 1) * ny];
        if col.iter().all(|v| *v == f64::NEG_INFINITY) {
            continue;
        }
        for xj in 0..ny {
            let mut m = f64::INFINITY;
            for (yj, &v) in col.iter().enumerate() {
                if v == f64::NEG_INFINITY {
                    continue;
                }
                let d = xj as f64 - yj as f64;
                m = m.min(half * d * d - v);
            }
            partial[yi * ny + xj] = m;
        }
    }
    let mut out = vec![f64::INFINITY; nx * ny];
    for xi in 0..nx {
        for yi in 0..nx {
            let d = xi as f64 - yi as f64;
            let c = half * d * d;
            let row = &partial[yi * ny..(yi + 1) * ny];
            if row[0] == f64::INFINITY && row.iter().all(|v| *v == f64::INFINITY) {
                continue;
            }
            for xj in 0..ny {
                let v = c + row[xj];
                if v < out[xi * ny + xj] {
                    out[xi * ny + xj] = v;
                }
            }
        }
    }
    out
}

/// Exact cost only, skipping potential extension. Used on hot paths.
pub(crate) fn exact_cost(a: &DensityField, b: &DensityField, p: CostExponent) -> Result<f64> {
    Ok(exact_core(a, b, p)?.plan.cost_value())
}

/// Exact optimal plan without potentials or certificate.
pub fn exact_plan(a: &DensityField, b: &DensityField, p: CostExponent) -> Result<TransportPlan> {
    Ok(exact_core(a, b, p)?.plan)
}

/// Geometric regularization schedule in absolute units (length squared).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpsSchedule {
    pub start: f64,
    pub end: f64,
    pub decay: f64,
}

impl EpsSchedule {
    /// `cell_size^2` down to `1e-3 cell_size^2`, factor 0.7 per stage.
    pub fn for_grid(grid: &Grid2D) -> Self {
        let cs2 = grid.cell_area();
        Self {
            start: cs2,
            end: 1e-3 * cs2,
            decay: 0.7,
        }
    }

    pub fn stages(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut eps = self.start;
        while eps > self.end && out.len() < 1000 {
            out.push(eps);
            eps *= self.decay;
        }
        out.push(self.end);
        out
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.start > 0.0 && self.end > 0.0 && self.end <= self.start) {
            return Err(Error::Config(format!(
                "eps schedule needs 0 < end <= start, got start {} end {}",
                self.start, self.end
            )));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::Config(format!("eps decay must lie in (0, 1), got {}", self.decay)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SinkhornOptions {
    pub schedule: EpsSchedule,
    /// Final target-marginal L1 violation, relative to mass.
    pub marginal_tol: f64,
    /// Violation at which intermediate stages hand over, relative to mass.
    pub stage_tol: f64,
    pub max_iters: usize,
    pub debias: bool,
}

impl SinkhornOptions {
    pub fn for_grid(grid: &Grid2D) -> Self {
        Self {
            schedule: EpsSchedule::for_grid(grid),
            marginal_tol: DEFAULT_MARGINAL_TOL,
            stage_tol: 1e-3,
            max_iters: 20_000,
            debias: true,
        }
    }
}

/// Runs the annealed schedule on a prepared solver. Returns the number of
/// iterations and the final violation in mass units.
pub(crate) fn anneal(
    solver: &mut LogSinkhorn,
    stages: &[f64],
    total_mass: f64,
    stage_tol: f64,
    final_tol: f64,
    max_iters: usize,
) -> (usize, f64) {
    let mut used = 0;
    let mut violation = f64::INFINITY;
    for (s, &eps) in stages.iter().enumerate() {
        let last = s + 1 == stages.len();
        let tol = if last { final_tol } else { stage_tol } * total_mass;
        let budget = if last {
            max_iters.saturating_sub(used).max(1)
        } else {
            (max_iters.saturating_sub(used) / 4).clamp(1, 500)
        };
        let out = solver.run(eps, tol, budget);
        log::debug!("sinkhorn stage eps {eps:.3e}: {} iterations, violation {:.3e}", out.iterations, out.violation);
        used += out.iterations;
        violation = out.violation;
    }
    (used, violation)
}

/// Entropic transport for `|x - y|^2` with annealed regularization.
///
/// The returned plan is rounded onto the exact marginals, so its cost is an
/// upper bound on the optimum; the gap to a hard c-transform dual certifies
/// it.
pub fn sinkhorn_ot(a: &DensityField, b: &DensityField, opts: &SinkhornOptions) -> Result<OtSolution> {
    a.grid().ensure_same(b.grid())?;
    check_equal_mass(a, b, DEFAULT_MASS_TOL)?;
    opts.schedule.validate()?;
    let grid = *a.grid();
    let (sb, tb) = match (a.support_box(), b.support_box()) {
        (Some(s), Some(t)) => (s, t),
        _ => {
            return Ok(OtSolution {
                plan: TransportPlan::new(grid, CostExponent::Two, vec![]),
                potentials: Potentials {
                    grid,
                    exponent: CostExponent::Two,
                    phi: vec![0.0; grid.len()],
                    psi: vec![0.0; grid.len()],
                },
                duality_gap: 0.0,
                iterations: 0,
                method: OtMethod::Entropic,
                debiased_cost: Some(0.0),
            })
        }
    };
    let total = mass(a);
    let stages = opts.schedule.stages();
    let eps_final = *stages.last().unwrap();

    let mut solver = LogSinkhorn::new(BoxWeights::new(a, sb), BoxWeights::new(b, tb), grid);
    let (iterations, violation) = anneal(
        &mut solver,
        &stages,
        total,
        opts.stage_tol,
        opts.marginal_tol,
        opts.max_iters,
    );
    if !(violation <= opts.marginal_tol * total) {
        return Err(Error::SinkhornNotConverged {
            iterations,
            violation,
        });
    }

    let area = grid.cell_area();
    let a_cells: Vec<(usize, f64)> = a
        .active_cells()
        .into_iter()
        .map(|k| (k, a.values()[k] * area))
        .collect();
    let b_cells: Vec<(usize, f64)> = b
        .active_cells()
        .into_iter()
        .map(|k| (k, b.values()[k] * area))
        .collect();
    let mut raw = solver.plan_entries(eps_final);
    sinkhorn::round_to_marginals(&mut raw, &a_cells, &b_cells, grid.len());
    let plan = TransportPlan::new(
        grid,
        CostExponent::Two,
        raw.into_iter()
            .map(|(s, t, m)| PlanEntry {
                source: s,
                target: t,
                mass: m,
            })
            .collect(),
    );

    // Hard dual: psi from the entropic target potential, phi its c-transform.
    let psi_tgt: Vec<(usize, f64)> = (0..tb.len())
        .filter(|&k| solver.tgt.log_w[k] > f64::NEG_INFINITY)
        .map(|k| {
            let idx = grid.index(tb.i0 + k / tb.height(), tb.j0 + k % tb.height());
            (idx, 0.5 * solver.g[k])
        })
        .collect();
    let phi_hard = quadratic_c_transform(&grid, &sparse_to_full(&grid, &psi_tgt));
    let dual = 2.0
        * (a_cells.iter().map(|&(k, m)| m * phi_hard[k]).sum::<f64>()
            + psi_tgt
                .iter()
                .map(|&(k, v)| b.values()[k] * area * v)
                .sum::<f64>());
    let primal = plan.cost_value();
    let gap = primal - dual;
    let duality_gap = if primal > 0.0 { gap / primal } else { gap };

    let psi = quadratic_c_transform(&grid, &phi_hard);
    let phi = phi_hard;

    let debiased_cost = if opts.debias {
        let ab = solver.dual_value();
        let aa = self_transport_value(a, sb, &grid, &stages, total, opts);
        let bb = self_transport_value(b, tb, &grid, &stages, total, opts);
        Some(ab - 0.5 * (aa + bb))
    } else {
        None
    };

    Ok(OtSolution {
        plan,
        potentials: Potentials {
            grid,
            exponent: CostExponent::Two,
            phi,
            psi,
        },
        duality_gap,
        iterations,
        method: OtMethod::Entropic,
        debiased_cost,
    })
}

fn self_transport_value(
    f: &DensityField,
    bx: CellBox,
    grid: &Grid2D,
    stages: &[f64],
    total: f64,
    opts: &SinkhornOptions,
) -> f64 {
    let w = BoxWeights::new(f, bx);
    let mut solver = LogSinkhorn::new(w.clone(), w, *grid);
    anneal(
        &mut solver,
        stages,
        total,
        opts.stage_tol,
        opts.marginal_tol,
        opts.max_iters,
    );
    solver.dual_value()
}

/// Certified `W_2^2`: exact below the cell cap, entropic upper bound above.
pub fn w2_squared(a: &DensityField, b: &DensityField) -> Result<f64> {
    match exact_cost(a, b, CostExponent::Two) {
        Err(Error::CellCapExceeded { .. }) => {
            let mut opts = SinkhornOptions::for_grid(a.grid());
            opts.debias = false;
            Ok(sinkhorn_ot(a, b, &opts)?.cost())
        }
        other => other,
    }
}

/// `W_1`. Above the cell cap the common mass is cancelled first, which
/// leaves the value unchanged and usually shrinks the problem below the cap.
pub fn w1(a: &DensityField, b: &DensityField) -> Result<f64> {
    match exact_cost(a, b, CostExponent::One) {
        Err(Error::CellCapExceeded { .. }) => {
            let (pos, neg) = signed_parts(a, b)?;
            exact_cost(&pos, &neg, CostExponent::One)
        }
        other => other,
    }
}

/// `((a - b)_+, (a - b)_-)`; W_1 of the pair equals W_1 of `(a, b)`.
pub fn signed_parts(a: &DensityField, b: &DensityField) -> Result<(DensityField, DensityField)> {
    a.grid().ensure_same(b.grid())?;
    let grid = *a.grid();
    let (pos, neg): (Vec<f64>, Vec<f64>) = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| ((x - y).max(0.0), (y - x).max(0.0)))
        .unzip();
    Ok((DensityField::new(grid, pos)?, DensityField::new(grid, neg)?))
}

/// `u(x) = (x - T(x)) / h` with `T(x)` the barycenter of the plan row at `x`.
pub fn displacement_velocity(plan: &TransportPlan, h: f64) -> VelocityField {
    let grid = *plan.grid();
    let n = grid.len();
    let mut row_mass = vec![0.0; n];
    let mut bary = vec![[0.0; 2]; n];
    for e in plan.entries() {
        let y = grid.center_of(e.target);
        row_mass[e.source] += e.mass;
        bary[e.source][0] += e.mass * y[0];
        bary[e.source][1] += e.mass * y[1];
    }
    let mut out = VelocityField::zeros(grid);
    for k in 0..n {
        if row_mass[k] > 0.0 {
            let x = grid.center_of(k);
            let t = [bary[k][0] / row_mass[k], bary[k][1] / row_mass[k]];
            out.vectors[k] = [(x[0] - t[0]) / h, (x[1] - t[1]) / h];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_grid(n: usize) -> Grid2D {
        Grid2D::new(n, n, 1.0, [0.0, 0.0]).unwrap()
    }

    fn block(grid: Grid2D, i0: usize, j0: usize, w: usize, h: usize) -> DensityField {
        let cells = (i0..i0 + w).flat_map(|i| (j0..j0 + h).map(move |j| (i, j)));
        DensityField::from_cells(grid, cells)
    }

    fn random_binary(grid: Grid2D, count: usize, rng: &mut ChaCha8Rng) -> DensityField {
        let mut cells: Vec<usize> = (0..grid.len()).collect();
        for k in 0..count {
            let r = rng.gen_range(k..cells.len());
            cells.swap(k, r);
        }
        let mut values = vec![0.0; grid.len()];
        for &c in &cells[..count] {
            values[c] = 1.0;
        }
        DensityField::new(grid, values).unwrap()
    }

    #[test]
    fn identical_fields_cost_nothing() {
        let grid = unit_grid(8);
        let a = block(grid, 2, 3, 3, 2);
        let sol = exact_ot(&a, &a, CostExponent::Two).unwrap();
        assert_eq!(sol.cost(), 0.0);
        for e in sol.plan.entries() {
            assert_eq!(e.source, e.target);
        }
        let v = displacement_velocity(&sol.plan, 0.1);
        assert!(v.vectors.iter().all(|u| *u == [0.0, 0.0]));
    }

    #[test]
    fn single_pair_distance_five() {
        let grid = unit_grid(6);
        let a = DensityField::from_cells(grid, [(0, 0)]);
        let b = DensityField::from_cells(grid, [(3, 4)]);
        assert_eq!(exact_ot(&a, &b, CostExponent::Two).unwrap().cost(), 25.0);
        assert_eq!(w2_squared(&a, &b).unwrap(), 25.0);
        assert_eq!(w1(&a, &b).unwrap(), 5.0);
    }

    #[test]
    fn translation_gives_constant_velocity() {
        let grid = unit_grid(12);
        let a = block(grid, 1, 2, 3, 3);
        let b = block(grid, 5, 2, 3, 3);
        let sol = exact_ot(&a, &b, CostExponent::Two).unwrap();
        assert_eq!(sol.cost(), 16.0 * 9.0);
        let v = displacement_velocity(&sol.plan, 0.5);
        for k in a.active_cells() {
            assert_eq!(v.vectors[k], [-8.0, 0.0]);
        }
        assert_relative_eq!(v.kinetic_energy(&a) * 0.5, sol.cost() / 0.5, max_relative = 1e-12);
    }

    #[test]
    fn duality_gap_and_feasibility_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let grid = Grid2D::centered(16, 16, 0.125).unwrap();
        for _ in 0..5 {
            let a = random_binary(grid, 40, &mut rng);
            let b = random_binary(grid, 40, &mut rng);
            for p in [CostExponent::Two, CostExponent::One] {
                let sol = exact_ot(&a, &b, p).unwrap();
                assert!(sol.duality_gap.abs() <= 1e-9, "gap {}", sol.duality_gap);
                assert!(sol.potentials.max_violation(1.0, 1) <= 1e-12);
                assert!(sol.plan.marginal_violation(&a, &b) <= 1e-12);
            }
        }
    }

    #[test]
    fn doubling_cell_size_scales_costs_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let grid = Grid2D::centered(10, 10, 0.25).unwrap();
        let a = random_binary(grid, 20, &mut rng);
        let b = random_binary(grid, 20, &mut rng);
        let a2 = a.with_cell_size(0.5).unwrap();
        let b2 = b.with_cell_size(0.5).unwrap();
        assert_eq!(w2_squared(&a2, &b2).unwrap(), 4.0 * w2_squared(&a, &b).unwrap() * 4.0);
        assert_relative_eq!(
            w1(&a2, &b2).unwrap(),
            2.0 * w1(&a, &b).unwrap() * 4.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn w1_unchanged_by_cancelling_common_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let grid = unit_grid(9);
        let a = random_binary(grid, 25, &mut rng);
        let b = random_binary(grid, 25, &mut rng);
        let (p, n) = signed_parts(&a, &b).unwrap();
        assert_relative_eq!(
            w1(&a, &b).unwrap(),
            exact_cost(&p, &n, CostExponent::One).unwrap(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn sinkhorn_translate_cost_approaches_exact() {
        let grid = Grid2D::new(12, 6, 1.0, [0.0, 0.0]).unwrap();
        let a = block(grid, 1, 1, 2, 2);
        let b = block(grid, 6, 1, 2, 2);
        let sol = sinkhorn_ot(&a, &b, &SinkhornOptions::for_grid(&grid)).unwrap();
        assert_relative_eq!(sol.cost(), 100.0, max_relative = 1e-4);
        assert!(sol.plan.marginal_violation(&a, &b) <= 1e-12);
        assert!(sol.duality_gap <= 1e-4);
    }

    #[test]
    fn sinkhorn_matches_exact_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let grid = Grid2D::centered(20, 20, 0.1).unwrap();
        for _ in 0..3 {
            let a = random_binary(grid, 60, &mut rng);
            let b = random_binary(grid, 60, &mut rng);
            let exact = exact_ot(&a, &b, CostExponent::Two).unwrap().cost();
            let opts = SinkhornOptions::for_grid(&grid);
            let ent = sinkhorn_ot(&a, &b, &opts).unwrap();
            assert!(
                (ent.cost() - exact).abs() <= 1e-4 * exact,
                "sinkhorn {} exact {}",
                ent.cost(),
                exact
            );
            assert!(ent.potentials.max_violation(1.0, 3) <= DEFAULT_DUALITY_TOL);
        }
    }
}
