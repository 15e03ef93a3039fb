//! Per-step flow records and their CSV form.

use std::fmt::Write as _;
use std::path::Path;

use crate::energy::EnergyBreakdown;
use crate::error::{Error, Result};

pub const LEDGER_HEADER: &str = "n,t,mass,perimeter,nonlocal,total_energy,w2_step,slope_h8,slope_h4,slope_h2,slope_h,el_residual,cont_residual,solver_iters";

/// Fractions of `h` at which slopes are recorded, in column order.
pub const SLOPE_FRACTIONS: [f64; 4] = [0.125, 0.25, 0.5, 1.0];

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub n: usize,
    pub t: f64,
    pub mass: f64,
    pub energy: EnergyBreakdown,
    /// `W_2(E_n, E_{n-1})`; absent for the initial row.
    pub w2_step: Option<f64>,
    /// `W_2(E(t), E_{n-1}) / t` at `t = h/8, h/4, h/2, h`.
    pub slopes: [Option<f64>; 4],
    pub el_residual: Option<f64>,
    /// Continuity residual over its bound; at most 1 when the bound holds.
    pub cont_residual: Option<f64>,
    pub solver_iters: usize,
}

impl StepRecord {
    pub fn initial(mass: f64, energy: EnergyBreakdown) -> Self {
        Self {
            n: 0,
            t: 0.0,
            mass,
            energy,
            w2_step: None,
            slopes: [None; 4],
            el_residual: None,
            cont_residual: None,
            solver_iters: 0,
        }
    }

    /// `(t, W(t))` for the recorded sample times, ascending.
    pub fn nodes(&self, h: f64) -> Vec<(f64, f64)> {
        SLOPE_FRACTIONS
            .iter()
            .zip(&self.slopes)
            .filter_map(|(f, s)| s.map(|s| (f * h, s * f * h)))
            .collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FlowLedger {
    pub records: Vec<StepRecord>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl FlowLedger {
    /// Time step recovered from the first two rows.
    pub fn time_step(&self) -> Option<f64> {
        match self.records.as_slice() {
            [a, b, ..] if b.n > a.n => Some((b.t - a.t) / (b.n - a.n) as f64),
            _ => None,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(LEDGER_HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.n,
                r.t,
                r.mass,
                r.energy.perimeter,
                r.energy.nonlocal,
                r.energy.total,
                opt(r.w2_step),
                opt(r.slopes[0]),
                opt(r.slopes[1]),
                opt(r.slopes[2]),
                opt(r.slopes[3]),
                opt(r.el_residual),
                opt(r.cont_residual),
                r.solver_iters
            );
        }
        s
    }

    pub fn parse_csv(text: &str, ctx: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::parse(ctx, "empty ledger"))?;
        if header.trim() != LEDGER_HEADER {
            return Err(Error::parse(ctx, format!("unexpected header {header:?}")));
        }
        let mut records = Vec::new();
        for (row, line) in lines.enumerate() {
            let bad = |what: &str| Error::parse(ctx, format!("row {}: bad {what} in {line:?}", row + 2));
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 14 {
                return Err(bad("column count"));
            }
            let num = |k: usize, what: &str| -> Result<f64> {
                let v: f64 = cols[k].parse().map_err(|_| bad(what))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(bad(what))
                }
            };
            let maybe = |k: usize, what: &str| -> Result<Option<f64>> {
                if cols[k].is_empty() {
                    Ok(None)
                } else {
                    num(k, what).map(Some)
                }
            };
            records.push(StepRecord {
                n: cols[0].parse().map_err(|_| bad("n"))?,
                t: num(1, "t")?,
                mass: num(2, "mass")?,
                energy: EnergyBreakdown {
                    perimeter: num(3, "perimeter")?,
                    nonlocal: num(4, "nonlocal")?,
                    total: num(5, "total_energy")?,
                },
                w2_step: maybe(6, "w2_step")?,
                slopes: [
                    maybe(7, "slope_h8")?,
                    maybe(8, "slope_h4")?,
                    maybe(9, "slope_h2")?,
                    maybe(10, "slope_h")?,
                ],
                el_residual: maybe(11, "el_residual")?,
                cont_residual: maybe(12, "cont_residual")?,
                solver_iters: cols[13].parse().map_err(|_| bad("solver_iters"))?,
            });
        }
        if records.is_empty() {
            return Err(Error::parse(ctx, "ledger has no rows"));
        }
        if records.iter().enumerate().any(|(k, r)| r.n != k) {
            return Err(Error::parse(ctx, "rows are not numbered 0, 1, 2, ..."));
        }
        Ok(Self { records })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text, &path.display().to_string())
    }
}
