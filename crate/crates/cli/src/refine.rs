use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use msflow_core::io::{read_field, RawField};

use crate::manifest::write_atomic;
use crate::run::{execute, level_dir, load_config, prepare, RunSummary};
use crate::{RefineArgs, EXIT_FLAGGED, EXIT_INPUT, EXIT_OK};

pub const CONVERGENCE_HEADER: &str =
    "level,factor,h,cell_size,n_steps,final_energy,energy_drift,max_el_residual,max_cont_residual,w2_curve_diff";

/// Each input pixel becomes a `factor x factor` block.
pub fn upsample(raw: &RawField, factor: usize) -> RawField {
    let (nx, ny) = (raw.nx * factor, raw.ny * factor);
    let mut values = vec![0.0; nx * ny];
    for i in 0..nx {
        for j in 0..ny {
            values[i * ny + j] = raw.values[(i / factor) * raw.ny + j / factor];
        }
    }
    RawField { nx, ny, values }
}

fn max_of(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    v.flatten().fold(None, |m, x| Some(m.map_or(x, |m: f64| m.max(x))))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

/// `w2_step / h` of the coarse level against the fine level summed over
/// each coarse step, as a max relative difference.
fn w2_curve_diff(coarse: &RunSummary, fine: &RunSummary) -> Option<f64> {
    let c = &coarse.ledger.records;
    let f = &fine.ledger.records;
    let mut worst: Option<f64> = None;
    for n in 1..c.len() {
        let (Some(wc), Some(hc)) = (c[n].w2_step, coarse.ledger.time_step()) else {
            continue;
        };
        // the fine run takes two steps per coarse step; compare speeds
        let pieces: Option<Vec<f64>> = [2 * n - 1, 2 * n].iter().map(|&m| f.get(m).and_then(|r| r.w2_step)).collect();
        let Some(pieces) = pieces else { continue };
        let hf = hc / 2.0;
        let vc = wc / hc;
        let vf = pieces.iter().sum::<f64>() / (2.0 * hf);
        let scale = vc.abs().max(vf.abs());
        if scale > 0.0 {
            let d = (vc - vf).abs() / scale;
            worst = Some(worst.map_or(d, |w| w.max(d)));
        }
    }
    worst
}

pub fn refine(args: &RefineArgs) -> Result<(String, String, bool)> {
    if args.levels == 0 {
        bail!("--levels must be at least 1");
    }
    let base = load_config(&args.config)?;
    if !args.init.is_file() {
        bail!("init file {} not found", args.init.display());
    }
    let raw = read_field(&args.init, base.nx.zip(base.ny))
        .with_context(|| format!("reading init file {}", args.init.display()))?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut table = format!("{CONVERGENCE_HEADER}\n");
    let mut curves: Vec<Vec<(f64, f64)>> = Vec::new();
    let mut prev: Option<RunSummary> = None;
    let mut fallback = false;
    for k in 0..args.levels {
        let factor = 1usize << k;
        let dir = level_dir(&args.out, k);
        std::fs::create_dir_all(&dir)?;
        let init_path = dir.join("init.pgm");
        let scaled = upsample(&raw, factor);
        let mut cfg = base.clone();
        cfg.h = base.h / factor as f64;
        cfg.n_steps = base.n_steps * factor;
        cfg.nx = Some(scaled.nx);
        cfg.ny = Some(scaled.ny);
        cfg.cell_size = base.cell_size.map(|c| c / factor as f64);
        cfg.snapshot_every = base.snapshot_every * factor;
        let dims = (scaled.nx, scaled.ny);
        let field = scaled.into_field(1.0, false)?;
        msflow_core::io::write_pgm(&init_path, &field)?;
        // the level config is what actually ran; write it for reproduction
        let level_cfg = dir.join("level_config.txt");
        std::fs::write(&level_cfg, cfg.to_text())?;
        let prepared = prepare(cfg, &level_cfg, &init_path, true)?;
        log::info!("level {k}: {}x{} cells, h = {:e}", dims.0, dims.1, prepared.cfg.h);
        let summary = execute(&prepared, &dir, &[])?;
        if let Some(e) = &summary.error {
            bail!("level {k} stopped early: {e}");
        }
        fallback |= !summary.fallback_steps.is_empty();
        let recs = &summary.ledger.records;
        let e0 = recs[0].energy.total;
        let last = recs.last().expect("initial row").energy.total;
        let diff = prev.as_ref().and_then(|p| w2_curve_diff(p, &summary));
        let _ = writeln!(
            table,
            "{k},{factor},{:e},{:e},{},{last:e},{:e},{},{},{}",
            prepared.cfg.h,
            prepared.init.grid().cell_size(),
            prepared.cfg.n_steps,
            (last - e0).abs() / e0.abs().max(f64::MIN_POSITIVE),
            opt(max_of(recs.iter().map(|r| r.el_residual))),
            opt(max_of(recs.iter().map(|r| r.cont_residual))),
            opt(diff)
        );
        curves.push(recs.iter().map(|r| (r.t, r.energy.total)).collect());
        prev = Some(summary);
    }
    // energies on the coarse time grid, one column per level
    let mut energy = String::from("t");
    for k in 0..args.levels {
        let _ = write!(energy, ",level_{k}");
    }
    energy.push('\n');
    for (n, (t, _)) in curves[0].iter().enumerate() {
        let _ = write!(energy, "{t}");
        for (k, c) in curves.iter().enumerate() {
            let _ = write!(energy, ",{}", c.get(n << k).map(|p| format!("{:e}", p.1)).unwrap_or_default());
        }
        energy.push('\n');
    }
    Ok((table, energy, fallback))
}

fn write_tables(out: &Path, table: &str, energy: &str) -> Result<()> {
    write_atomic(&out.join("convergence.csv"), table.as_bytes())?;
    write_atomic(&out.join("energy_curves.csv"), energy.as_bytes())
}

pub fn cmd_refine(args: &RefineArgs) -> u8 {
    match refine(args).and_then(|(table, energy, fallback)| {
        write_tables(&args.out, &table, &energy)?;
        print!("{table}");
        Ok(fallback)
    }) {
        Ok(false) => EXIT_OK,
        Ok(true) => EXIT_FLAGGED,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_INPUT
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upsample_replicates_blocks() {
        let raw = RawField {
            nx: 2,
            ny: 1,
            values: vec![1.0, 0.0],
        };
        let up = upsample(&raw, 2);
        assert_eq!((up.nx, up.ny), (4, 2));
        assert_eq!(up.values, vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }
}
