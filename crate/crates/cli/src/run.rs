use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use msflow_core::config::FlowConfig;
use msflow_core::energy::{Kernel, KernelSpec};
use msflow_core::io::{read_field, write_pgm};
use msflow_core::jko::{run_flow, FlowEvent};
use msflow_core::ledger::FlowLedger;
use msflow_core::DensityField;

use crate::manifest::{digest, unix_now, FileDigest, RunManifest};
use crate::{RunArgs, EXIT_FLAGGED, EXIT_INPUT, EXIT_OK};

pub const SOLVER_HEADER: &str = "n,fallback,relaxation_gap,accept_slack,touches_boundary";

/// Validated inputs of one run.
pub struct Prepared {
    /// Effective config: grid size and cell size filled in from the input.
    pub cfg: FlowConfig,
    pub init: DensityField,
    pub kernel: Kernel,
    pub inputs: Vec<FileDigest>,
    pub normalized: bool,
}

pub struct RunSummary {
    pub ledger: FlowLedger,
    pub fallback_steps: Vec<usize>,
    pub error: Option<String>,
}

pub fn load_config(path: &Path) -> Result<FlowConfig> {
    if !path.is_file() {
        bail!("config file {} not found", path.display());
    }
    FlowConfig::load(path).with_context(|| format!("loading config {}", path.display()))
}

/// Reads the initial set and attaches the grid. Normalization rescales the
/// cell size so the set has unit mass.
pub fn prepare(mut cfg: FlowConfig, config_path: &Path, init_path: &Path, normalize: bool) -> Result<Prepared> {
    if !init_path.is_file() {
        bail!("init file {} not found", init_path.display());
    }
    let dims = cfg.nx.zip(cfg.ny);
    let raw = read_field(init_path, dims).with_context(|| format!("reading init file {}", init_path.display()))?;
    if let Some((nx, ny)) = dims {
        if (raw.nx, raw.ny) != (nx, ny) {
            bail!(
                "init file {} is {}x{}, config asks for {nx}x{ny}",
                init_path.display(),
                raw.nx,
                raw.ny
            );
        }
    }
    let init = raw
        .into_field(cfg.cell_size.unwrap_or(1.0), normalize)
        .with_context(|| format!("placing init file {} on a grid", init_path.display()))?;
    let grid = *init.grid();
    cfg.nx = Some(grid.nx());
    cfg.ny = Some(grid.ny());
    cfg.cell_size = Some(grid.cell_size());
    let kernel = cfg.kernel.build(&grid).context("building the kernel")?;
    let mut inputs = vec![
        digest(config_path, config_path.display().to_string())?,
        digest(init_path, init_path.display().to_string())?,
    ];
    if let KernelSpec::File(p) = &cfg.kernel {
        inputs.push(digest(p, p.display().to_string())?);
    }
    Ok(Prepared {
        cfg,
        init,
        kernel,
        inputs,
        normalized: normalize,
    })
}

pub fn snapshot_name(n: usize) -> String {
    format!("state_{n:06}.pgm")
}

pub fn plan_name(n: usize) -> String {
    format!("plan_{n:06}.csv")
}

/// Runs the flow into `out` and writes every artifact, the manifest last.
pub fn execute(p: &Prepared, out: &Path, dump_plan: &[usize]) -> Result<RunSummary> {
    let started = unix_now();
    std::fs::create_dir_all(out).with_context(|| format!("creating output directory {}", out.display()))?;
    let mut written: Vec<String> = Vec::new();
    let cfg_text = p.cfg.to_text();
    std::fs::write(out.join("config.txt"), &cfg_text).context("writing config.txt")?;
    written.push("config.txt".into());

    let mut solver = format!("{SOLVER_HEADER}\n");
    let n_steps = p.cfg.n_steps;
    let every = p.cfg.snapshot_every;
    let mut observer = |ev: &FlowEvent| -> msflow_core::Result<()> {
        if ev.n == 0 || ev.n == n_steps || (every > 0 && ev.n % every == 0) {
            let name = snapshot_name(ev.n);
            write_pgm(&out.join(&name), ev.state)?;
            written.push(name);
        }
        if let Some(step) = ev.step {
            let _ = writeln!(
                solver,
                "{},{},{:e},{:e},{}",
                ev.n,
                u8::from(step.fallback),
                step.relaxation_gap,
                step.accept_slack(),
                u8::from(step.touches_boundary)
            );
        }
        if dump_plan.contains(&ev.n) {
            match ev.plan {
                Some(plan) => {
                    let name = plan_name(ev.n);
                    plan.write_csv(&out.join(&name))?;
                    written.push(name);
                }
                None => log::warn!("step {}: no exact plan available to dump", ev.n),
            }
        }
        Ok(())
    };
    let outcome = run_flow(&p.init, &p.kernel, &p.cfg, &mut observer);

    outcome.ledger.write(&out.join("ledger.csv")).context("writing ledger.csv")?;
    written.push("ledger.csv".into());
    std::fs::write(out.join("solver.csv"), solver).context("writing solver.csv")?;
    written.push("solver.csv".into());
    for n in dump_plan {
        if *n > outcome.ledger.records.len().saturating_sub(1) {
            log::warn!("--dump-plan {n}: the run has no such step");
        }
    }

    let outputs = written
        .iter()
        .map(|name| digest(&out.join(name), name.clone()))
        .collect::<Result<Vec<_>>>()?;
    let error = outcome.error.map(|e| e.to_string());
    RunManifest {
        version: env!("CARGO_PKG_VERSION").into(),
        started_unix: started,
        finished_unix: unix_now(),
        config: cfg_text,
        normalized: p.normalized,
        inputs: p.inputs.clone(),
        outputs,
        fallback_steps: outcome.fallback_steps.clone(),
        error: error.clone(),
    }
    .write(out)?;
    Ok(RunSummary {
        ledger: outcome.ledger,
        fallback_steps: outcome.fallback_steps,
        error,
    })
}

/// Exit code for a finished run.
pub fn exit_code(summary: &RunSummary) -> u8 {
    if let Some(e) = &summary.error {
        eprintln!("error: run stopped after {} steps: {e}", summary.ledger.records.len().saturating_sub(1));
        EXIT_INPUT
    } else if !summary.fallback_steps.is_empty() {
        eprintln!("warning: solver fallback at steps {:?}", summary.fallback_steps);
        EXIT_FLAGGED
    } else {
        EXIT_OK
    }
}

pub fn cmd_run(args: &RunArgs) -> u8 {
    let prepared = load_config(&args.config).and_then(|cfg| prepare(cfg, &args.config, &args.init, !args.no_normalize));
    let prepared = match prepared {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e:#}");
            return EXIT_INPUT;
        }
    };
    match execute(&prepared, &args.out, &args.dump_plan) {
        Ok(summary) => exit_code(&summary),
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_INPUT
        }
    }
}

/// Output directory of refinement level `k`.
pub fn level_dir(out: &Path, k: usize) -> PathBuf {
    out.join(format!("level_{k}"))
}
