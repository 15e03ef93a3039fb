use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use msflow_core::config::FlowConfig;
use msflow_core::diagnostics::{
    check_dissipation_ledger, check_holder_curves, check_ledger_residuals, check_mass, reference_mass,
    slope_lower_bound_check, step_seed, DiagnosticsReport, Provenance, TimedState, HOLDER_MIN_STEPS,
};
use msflow_core::fields::random_test_fields;
use msflow_core::io::read_pgm;
use msflow_core::ledger::FlowLedger;
use msflow_core::transport::{displacement_velocity, exact_plan, CostExponent};
use msflow_core::{CellBox, DensityField, Error};

use crate::manifest::{RunManifest, MANIFEST_NAME};
use crate::run::snapshot_name;
use crate::{CheckArgs, EXIT_FLAGGED, EXIT_INPUT, EXIT_OK};

/// Steps sampled for the slope lower bound, and test fields per step.
const SLOPE_STEPS: usize = 5;
const SLOPE_FIELDS: usize = 20;

/// A saved run: ledger, effective config and the snapshots on disk.
pub struct SavedRun {
    pub dir: PathBuf,
    pub ledger: FlowLedger,
    pub cfg: FlowConfig,
    pub manifest: Option<RunManifest>,
}

impl SavedRun {
    /// Accepts the run directory or the path of its `ledger.csv`.
    pub fn open(path: &Path) -> Result<Self> {
        let dir = if path.is_file() {
            path.parent().unwrap_or(Path::new(".")).to_path_buf()
        } else {
            path.to_path_buf()
        };
        let ledger_path = dir.join("ledger.csv");
        if !ledger_path.is_file() {
            bail!("no ledger at {}", ledger_path.display());
        }
        let ledger = FlowLedger::read(&ledger_path).with_context(|| format!("reading {}", ledger_path.display()))?;
        if ledger.records.is_empty() {
            bail!("ledger {} has no rows", ledger_path.display());
        }
        let cfg_path = dir.join("config.txt");
        let cfg = FlowConfig::load(&cfg_path).with_context(|| format!("reading {}", cfg_path.display()))?;
        if cfg.cell_size.is_none() || cfg.nx.is_none() || cfg.ny.is_none() {
            bail!("{} lacks the grid keys written by `msflow run`", cfg_path.display());
        }
        let manifest = if dir.join(MANIFEST_NAME).is_file() {
            Some(RunManifest::read(&dir)?)
        } else {
            None
        };
        Ok(Self {
            dir,
            ledger,
            cfg,
            manifest,
        })
    }

    pub fn cell_size(&self) -> f64 {
        self.cfg.cell_size.expect("checked on open")
    }

    /// Snapshot of step `n`, if one was written.
    pub fn snapshot(&self, n: usize) -> Result<Option<DensityField>> {
        let path = self.dir.join(snapshot_name(n));
        if !path.is_file() {
            return Ok(None);
        }
        let raw = read_pgm(&path)?;
        Ok(Some(raw.into_field(self.cell_size(), false)?))
    }

    /// Every row with a snapshot on disk.
    pub fn timed_states(&self) -> Result<Vec<TimedState>> {
        let mut out = Vec::new();
        for r in &self.ledger.records {
            if let Some(state) = self.snapshot(r.n)? {
                out.push(TimedState {
                    t: r.t,
                    energy: r.energy.total,
                    state,
                });
            }
        }
        Ok(out)
    }
}

fn holder_checks(run: &SavedRun) -> Result<DiagnosticsReport> {
    let h = run.cfg.h;
    let samples = run.timed_states()?;
    match check_holder_curves(&samples, h) {
        Ok(r) => Ok(r),
        Err(Error::TooFewSamples(m)) => {
            log::info!("Hölder check skipped: {m}");
            Ok(DiagnosticsReport::default())
        }
        Err(e) => Err(e.into()),
    }
}

/// Slope lower bound at up to `SLOPE_STEPS` evenly spaced steps that have
/// both snapshots and a slope estimate.
fn slope_checks(run: &SavedRun) -> Result<DiagnosticsReport> {
    let recs = &run.ledger.records;
    let eligible: Vec<usize> = (1..recs.len()).filter(|&n| recs[n].slopes[3].is_some()).collect();
    let mut report = DiagnosticsReport::default();
    if eligible.is_empty() {
        return Ok(report);
    }
    let picks: Vec<usize> = if eligible.len() <= SLOPE_STEPS {
        eligible
    } else {
        (0..SLOPE_STEPS)
            .map(|k| eligible[k * (eligible.len() - 1) / (SLOPE_STEPS - 1)])
            .collect()
    };
    let mut kernel = None;
    for n in picks {
        let (Some(prev), Some(state)) = (run.snapshot(recs[n - 1].n)?, run.snapshot(recs[n].n)?) else {
            continue;
        };
        let grid = *state.grid();
        let kernel = match &kernel {
            Some(k) => k,
            None => kernel.insert(run.cfg.kernel.build(&grid)?),
        };
        let plan = match exact_plan(&state, &prev, CostExponent::Two) {
            Ok(p) => p,
            Err(Error::CellCapExceeded { .. }) => continue,
            Err(e) => return Err(e.into()),
        };
        let u = displacement_velocity(&plan, run.cfg.h);
        let support = state
            .support_box()
            .map(|b| b.dilate(4, &grid))
            .unwrap_or_else(|| CellBox::full(&grid));
        let specs = random_test_fields(&grid, support, SLOPE_FIELDS, step_seed(run.cfg.seed, recs[n].n, 2));
        let slope = recs[n].slopes[3].expect("eligible");
        let mut r = slope_lower_bound_check(&state, &u, kernel, &specs, slope)?;
        for e in &mut r.entries {
            e.param = format!("n={};{}", recs[n].n, e.param);
        }
        report.extend(r);
    }
    Ok(report)
}

/// Every check that runs on a saved run directory.
pub fn check_run(run: &SavedRun) -> Result<DiagnosticsReport> {
    let mut report = check_dissipation_ledger(&run.ledger);
    let cs = run.cell_size();
    let target = match &run.manifest {
        Some(m) if !m.normalized => reference_mass(&run.ledger),
        _ => 1.0,
    };
    report.extend(check_mass(&run.ledger, target, cs * cs));
    report.extend(check_ledger_residuals(&run.ledger, cs));
    if run.ledger.records.len() > HOLDER_MIN_STEPS {
        report.extend(holder_checks(run)?);
    }
    report.extend(slope_checks(run)?);
    if let Some(m) = &run.manifest {
        let bad = m.mismatched_outputs(&run.dir);
        report.push_le(
            "manifest",
            if bad.is_empty() {
                "outputs".to_string()
            } else {
                format!("mismatch={}", bad.join(";"))
            },
            bad.len() as f64,
            0.0,
            Provenance::Contract,
        );
    }
    Ok(report)
}

pub fn cmd_check(args: &CheckArgs) -> u8 {
    let result = SavedRun::open(&args.ledger).and_then(|run| check_run(&run));
    let report = match result {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e:#}");
            return EXIT_INPUT;
        }
    };
    if let Err(e) = report.write(&args.report) {
        eprintln!("error: {e}");
        return EXIT_INPUT;
    }
    let mut failed: Vec<&str> = report.failures().map(|e| e.check.as_str()).collect();
    failed.dedup();
    if failed.is_empty() {
        println!("all {} checks passed", report.entries.len());
        EXIT_OK
    } else {
        for e in report.failures() {
            eprintln!("FAIL {} {}: value {:e} bound {:e}", e.check, e.param, e.value, e.bound);
        }
        eprintln!("failed checks: {}", failed.join(", "));
        EXIT_FLAGGED
    }
}
