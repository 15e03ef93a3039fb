//! Log-domain Sinkhorn with epsilon annealing for the squared Euclidean cost
//! on grid cells.
//!
//! Soft c-transforms are evaluated separably: `|x - y|^2` splits into the two
//! axis terms, so a transform between boxes of `W x H` cells costs
//! `O(W_t H_t H_x + W_x H_x W_t)` instead of the full pairwise product.

use crate::grid::{CellBox, DensityField, Grid2D};

/// Terms more than this far below the running maximum are dropped from
/// log-sum-exp; `exp(-40)` is below double precision relative to 1.
const LSE_CUTOFF: f64 = 40.0;

/// Log-weights of a density restricted to a box.
#[derive(Clone, Debug)]
pub(crate) struct BoxWeights {
    pub bx: CellBox,
    /// `ln(mass)` per box cell, `-inf` where the density vanishes.
    pub log_w: Vec<f64>,
}

impl BoxWeights {
    pub fn new(field: &DensityField, bx: CellBox) -> Self {
        let grid = field.grid();
        let area = grid.cell_area();
        let mut log_w = Vec::with_capacity(bx.len());
        for i in bx.i0..bx.i1 {
            for j in bx.j0..bx.j1 {
                let m = field.get(i, j) * area;
                log_w.push(if m > 0.0 { m.ln() } else { f64::NEG_INFINITY });
            }
        }
        Self { bx, log_w }
    }

    /// From box-local values (densities) in `i`-major order.
    pub fn from_values(bx: CellBox, values: &[f64], area: f64) -> Self {
        let log_w = values
            .iter()
            .map(|&v| {
                let m = v * area;
                if m > 0.0 {
                    m.ln()
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        Self { bx, log_w }
    }
}

/// Reusable buffers for the separable transform.
#[derive(Default)]
pub(crate) struct Scratch {
    w: Vec<f64>,
    partial: Vec<f64>,
    col: Vec<f64>,
}

/// `out(x) = -eps * ln sum_y exp(log_w(y) + (pot(y) - |x - y|^2) / eps)` for
/// every cell `x` of `to`.
pub(crate) fn soft_c_transform(
    grid: &Grid2D,
    from: &BoxWeights,
    pot: &[f64],
    to: CellBox,
    eps: f64,
    out: &mut Vec<f64>,
    scratch: &mut Scratch,
) {
    let fb = from.bx;
    let (wf, hf) = (fb.width(), fb.height());
    let (wt, ht) = (to.width(), to.height());
    let h2 = grid.cell_area() / eps;

    scratch.w.clear();
    scratch
        .w
        .extend(from.log_w.iter().zip(pot).map(|(&lw, &p)| lw + p / eps));

    // partial[it * ht + jx] = LSE_jf (w[it, jf] - (jx - jf)^2 h2)
    scratch.partial.clear();
    scratch.partial.resize(wf * ht, f64::NEG_INFINITY);
    for it in 0..wf {
        let wrow = &scratch.w[it * hf..(it + 1) * hf];
        if wrow.iter().all(|v| *v == f64::NEG_INFINITY) {
            continue;
        }
        for jx in 0..ht {
            let gy = (to.j0 + jx) as f64;
            let mut m = f64::NEG_INFINITY;
            for (jf, &w) in wrow.iter().enumerate() {
                if w == f64::NEG_INFINITY {
                    continue;
                }
                let d = gy - (fb.j0 + jf) as f64;
                let v = w - d * d * h2;
                if v > m {
                    m = v;
                }
            }
            if m == f64::NEG_INFINITY {
                continue;
            }
            let mut s = 0.0;
            for (jf, &w) in wrow.iter().enumerate() {
                let d = gy - (fb.j0 + jf) as f64;
                let v = w - d * d * h2 - m;
                if v > -LSE_CUTOFF {
                    s += v.exp();
                }
            }
            scratch.partial[it * ht + jx] = m + s.ln();
        }
    }

    out.clear();
    out.resize(wt * ht, f64::INFINITY);
    scratch.col.resize(wf, 0.0);
    for jx in 0..ht {
        for it in 0..wf {
            scratch.col[it] = scratch.partial[it * ht + jx];
        }
        for ix in 0..wt {
            let gx = (to.i0 + ix) as f64;
            let mut m = f64::NEG_INFINITY;
            for (it, &p) in scratch.col.iter().enumerate() {
                if p == f64::NEG_INFINITY {
                    continue;
                }
                let d = gx - (fb.i0 + it) as f64;
                let v = p - d * d * h2;
                if v > m {
                    m = v;
                }
            }
            if m == f64::NEG_INFINITY {
                continue;
            }
            let mut s = 0.0;
            for (it, &p) in scratch.col.iter().enumerate() {
                let d = gx - (fb.i0 + it) as f64;
                let v = p - d * d * h2 - m;
                if v > -LSE_CUTOFF {
                    s += v.exp();
                }
            }
            out[ix * ht + jx] = -eps * (m + s.ln());
        }
    }
}

/// Dual state of one entropic transport problem between boxed densities.
pub(crate) struct LogSinkhorn {
    pub grid: Grid2D,
    pub src: BoxWeights,
    pub tgt: BoxWeights,
    /// Source potential on `src.bx` for the cost `|x - y|^2`.
    pub f: Vec<f64>,
    /// Target potential on `tgt.bx`.
    pub g: Vec<f64>,
    /// Over-relaxation factor in `[1, 2)`; 1 is plain Sinkhorn.
    pub omega: f64,
    scratch: Scratch,
    buf: Vec<f64>,
}

fn relax(pot: &mut [f64], update: &[f64], omega: f64) {
    if omega == 1.0 {
        pot.copy_from_slice(update);
    } else {
        for (p, u) in pot.iter_mut().zip(update) {
            *p += omega * (u - *p);
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct StageOutcome {
    pub iterations: usize,
    /// L1 violation of the target marginal, in mass units.
    pub violation: f64,
}

impl LogSinkhorn {
    pub fn new(src: BoxWeights, tgt: BoxWeights, grid: Grid2D) -> Self {
        let f = vec![0.0; src.bx.len()];
        let g = vec![0.0; tgt.bx.len()];
        Self {
            grid,
            src,
            tgt,
            f,
            g,
            omega: 1.0,
            scratch: Scratch::default(),
            buf: Vec::new(),
        }
    }

    /// Replaces the source weights, keeping the target potential as a warm
    /// start.
    pub fn set_source(&mut self, src: BoxWeights) {
        if src.bx != self.src.bx {
            self.f = vec![0.0; src.bx.len()];
        }
        self.src = src;
    }

    /// Alternating updates at fixed `eps` until the target marginal error
    /// drops below `tol` (mass units) or `max_iters` is reached. The source
    /// marginal is exact after every update.
    pub fn run(&mut self, eps: f64, tol: f64, max_iters: usize) -> StageOutcome {
        let mut violation = f64::INFINITY;
        let mut iterations = 0;
        while iterations < max_iters {
            iterations += 1;
            soft_c_transform(
                &self.grid,
                &self.tgt,
                &self.g,
                self.src.bx,
                eps,
                &mut self.buf,
                &mut self.scratch,
            );
            relax(&mut self.f, &self.buf, self.omega);
            soft_c_transform(
                &self.grid,
                &self.src,
                &self.f,
                self.tgt.bx,
                eps,
                &mut self.buf,
                &mut self.scratch,
            );
            violation = 0.0;
            for ((lw, g), g_new) in self.tgt.log_w.iter().zip(&self.g).zip(&self.buf) {
                if *lw == f64::NEG_INFINITY {
                    continue;
                }
                let ratio = ((g - g_new) / eps).exp();
                violation += lw.exp() * (ratio - 1.0).abs();
            }
            relax(&mut self.g, &self.buf, self.omega);
            if violation <= tol {
                break;
            }
        }
        // leave f consistent with the final g
        soft_c_transform(
            &self.grid,
            &self.tgt,
            &self.g,
            self.src.bx,
            eps,
            &mut self.f,
            &mut self.scratch,
        );
        StageOutcome {
            iterations,
            violation,
        }
    }

    /// Entropic dual objective `<f, a> + <g, b>`.
    pub fn dual_value(&self) -> f64 {
        let fa: f64 = self
            .src
            .log_w
            .iter()
            .zip(&self.f)
            .filter(|(lw, _)| **lw > f64::NEG_INFINITY)
            .map(|(lw, f)| lw.exp() * f)
            .sum();
        let gb: f64 = self
            .tgt
            .log_w
            .iter()
            .zip(&self.g)
            .filter(|(lw, _)| **lw > f64::NEG_INFINITY)
            .map(|(lw, g)| lw.exp() * g)
            .sum();
        fa + gb
    }

    /// Sparse primal plan `(src_cell, dst_cell, mass)` in flat grid indices,
    /// dropping entries far below each row's maximum.
    pub fn plan_entries(&self, eps: f64) -> Vec<(usize, usize, f64)> {
        let grid = &self.grid;
        let (sb, tb) = (self.src.bx, self.tgt.bx);
        let cs2 = grid.cell_area();
        let tgt_cells: Vec<(usize, usize, f64, f64)> = (0..tb.len())
            .filter(|&k| self.tgt.log_w[k] > f64::NEG_INFINITY)
            .map(|k| {
                let (i, j) = (tb.i0 + k / tb.height(), tb.j0 + k % tb.height());
                (i, j, self.tgt.log_w[k], self.g[k])
            })
            .collect();
        let mut entries = Vec::new();
        let mut row = Vec::with_capacity(tgt_cells.len());
        for k in 0..sb.len() {
            let lw = self.src.log_w[k];
            if lw == f64::NEG_INFINITY {
                continue;
            }
            let (i, j) = (sb.i0 + k / sb.height(), sb.j0 + k % sb.height());
            row.clear();
            let mut m = f64::NEG_INFINITY;
            for &(ti, tj, tlw, g) in &tgt_cells {
                let di = i as f64 - ti as f64;
                let dj = j as f64 - tj as f64;
                let c = (di * di + dj * dj) * cs2;
                let v = lw + tlw + (self.f[k] + g - c) / eps;
                m = m.max(v);
                row.push(v);
            }
            let src = grid.index(i, j);
            for (&(ti, tj, _, _), &v) in tgt_cells.iter().zip(&row) {
                if v > m - LSE_CUTOFF {
                    entries.push((src, grid.index(ti, tj), v.exp()));
                }
            }
        }
        entries
    }
}

/// Makes a nonnegative sparse plan match both marginals exactly: scale rows
/// and columns down to their targets, then route the leftover mass with the
/// northwest-corner rule.
pub(crate) fn round_to_marginals(
    entries: &mut Vec<(usize, usize, f64)>,
    a: &[(usize, f64)],
    b: &[(usize, f64)],
    n_cells: usize,
) {
    let mut row = vec![0.0; n_cells];
    for &(s, _, m) in entries.iter() {
        row[s] += m;
    }
    let mut want = vec![0.0; n_cells];
    for &(s, m) in a {
        want[s] = m;
    }
    for e in entries.iter_mut() {
        if row[e.0] > want[e.0] {
            e.2 *= want[e.0] / row[e.0];
        }
    }
    let mut col = vec![0.0; n_cells];
    for &(_, t, m) in entries.iter() {
        col[t] += m;
    }
    let mut want_b = vec![0.0; n_cells];
    for &(t, m) in b {
        want_b[t] = m;
    }
    for e in entries.iter_mut() {
        if col[e.1] > want_b[e.1] {
            e.2 *= want_b[e.1] / col[e.1];
        }
    }
    row.iter_mut().for_each(|r| *r = 0.0);
    col.iter_mut().for_each(|c| *c = 0.0);
    for &(s, t, m) in entries.iter() {
        row[s] += m;
        col[t] += m;
    }
    let mut ra: Vec<(usize, f64)> = a
        .iter()
        .map(|&(s, m)| (s, (m - row[s]).max(0.0)))
        .filter(|&(_, r)| r > 0.0)
        .collect();
    let mut rb: Vec<(usize, f64)> = b
        .iter()
        .map(|&(t, m)| (t, (m - col[t]).max(0.0)))
        .filter(|&(_, r)| r > 0.0)
        .collect();
    // residual totals agree up to rounding; rescale the smaller side
    let (sa, sb): (f64, f64) = (ra.iter().map(|x| x.1).sum(), rb.iter().map(|x| x.1).sum());
    if sa > 0.0 && sb > 0.0 {
        if sa > sb {
            ra.iter_mut().for_each(|x| x.1 *= sb / sa);
        } else {
            rb.iter_mut().for_each(|x| x.1 *= sa / sb);
        }
        let (mut p, mut q) = (0, 0);
        while p < ra.len() && q < rb.len() {
            let m = ra[p].1.min(rb[q].1);
            if m > 0.0 {
                entries.push((ra[p].0, rb[q].0, m));
            }
            ra[p].1 -= m;
            rb[q].1 -= m;
            if ra[p].1 <= 0.0 {
                p += 1;
            } else {
                q += 1;
            }
        }
    }
    entries.retain(|e| e.2 > 0.0);
    entries.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
    // merge duplicates introduced by the residual routing
    let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(entries.len());
    for &e in entries.iter() {
        match merged.last_mut() {
            Some(last) if last.0 == e.0 && last.1 == e.1 => last.2 += e.2,
            _ => merged.push(e),
        }
    }
    *entries = merged;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_transform(grid: &Grid2D, from: &BoxWeights, pot: &[f64], to: CellBox, eps: f64) -> Vec<f64> {
        let mut out = Vec::new();
        for i in to.i0..to.i1 {
            for j in to.j0..to.j1 {
                let x = grid.center(i, j);
                let mut terms = Vec::new();
                for k in 0..from.bx.len() {
                    if from.log_w[k] == f64::NEG_INFINITY {
                        continue;
                    }
                    let (fi, fj) = (from.bx.i0 + k / from.bx.height(), from.bx.j0 + k % from.bx.height());
                    let y = grid.center(fi, fj);
                    let c = (x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2);
                    terms.push(from.log_w[k] + (pot[k] - c) / eps);
                }
                let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = terms.iter().map(|t| (t - m).exp()).sum();
                out.push(-eps * (m + s.ln()));
            }
        }
        out
    }

    #[test]
    fn separable_transform_matches_pairwise_sum() {
        let grid = Grid2D::centered(12, 10, 0.3).unwrap();
        let field = DensityField::from_fn(grid, |x| if x[0] + 0.5 * x[1] > 0.2 { 0.7 } else { 0.0 });
        let bx = field.support_box().unwrap();
        let w = BoxWeights::new(&field, bx);
        let pot: Vec<f64> = (0..bx.len()).map(|k| (k as f64 * 0.37).sin() * 0.1).collect();
        let to = CellBox { i0: 1, i1: 9, j0: 2, j1: 10 };
        for eps in [0.09, 0.01, 0.0009] {
            let mut out = Vec::new();
            let mut scratch = Scratch::default();
            soft_c_transform(&grid, &w, &pot, to, eps, &mut out, &mut scratch);
            let naive = naive_transform(&grid, &w, &pot, to, eps);
            for (a, b) in out.iter().zip(&naive) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b} at eps {eps}");
            }
        }
    }

    #[test]
    fn rounding_restores_exact_marginals() {
        let mut entries = vec![(0, 2, 0.4), (0, 3, 0.2), (1, 3, 0.45)];
        let a = [(0usize, 0.5), (1, 0.5)];
        let b = [(2usize, 0.45), (3, 0.55)];
        round_to_marginals(&mut entries, &a, &b, 4);
        let mut row = [0.0; 4];
        let mut col = [0.0; 4];
        for &(s, t, m) in &entries {
            assert!(m >= 0.0);
            row[s] += m;
            col[t] += m;
        }
        assert!((row[0] - 0.5).abs() < 1e-15 && (row[1] - 0.5).abs() < 1e-15);
        assert!((col[2] - 0.45).abs() < 1e-15 && (col[3] - 0.55).abs() < 1e-15);
    }
}
