//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::Path;

use crate::energy::KernelSpec;
use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::transport::EpsSchedule;

/// Settings of the relaxed step solver.
#[derive(Clone, Debug, PartialEq)]
pub struct InnerConfig {
    /// Alternations between the transport and perimeter updates.
    pub outer_iters: usize,
    /// Sinkhorn sweeps per alternation.
    pub sinkhorn_iters: usize,
    /// Primal-dual iterations of the perimeter prox per alternation.
    pub tv_iters: usize,
    /// Damping time of the boundary-distance term, in units of `cell_size^2`.
    pub prox_step: f64,
    /// Cells added around the previous support to form the working box.
    pub margin: usize,
    /// A thresholded candidate is scored every this many alternations.
    pub candidate_every: usize,
    /// Early exit once the relaxed iterate moves less than this (max norm).
    pub inner_tol: f64,
}

impl Default for InnerConfig {
    fn default() -> Self {
        Self {
            outer_iters: 30,
            sinkhorn_iters: 10,
            tv_iters: 40,
            prox_step: 1.0,
            margin: 8,
            candidate_every: 5,
            inner_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowConfig {
    pub h: f64,
    pub n_steps: usize,
    pub nx: Option<usize>,
    pub ny: Option<usize>,
    /// Declared cell size; replaced by the normalized one on load.
    pub cell_size: Option<f64>,
    pub kernel: KernelSpec,
    /// Regularization schedule in units of `cell_size^2`.
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_decay: f64,
    pub inner: InnerConfig,
    pub mass_tol: f64,
    pub snapshot_every: usize,
    pub de_giorgi_samples: usize,
    pub seed: u64,
    /// Divergence-free test fields per step for the Euler-Lagrange residual.
    pub el_fields: usize,
    /// Scalar test functions per step for the continuity residual.
    pub zeta_fields: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            h: 1e-3,
            n_steps: 10,
            nx: None,
            ny: None,
            cell_size: None,
            kernel: KernelSpec::Default,
            eps_start: 1.0,
            eps_end: 1e-3,
            eps_decay: 0.7,
            inner: InnerConfig::default(),
            mass_tol: 1e-8,
            snapshot_every: 1,
            de_giorgi_samples: 4,
            seed: 0,
            el_fields: 8,
            zeta_fields: 10,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad value for {key}: {v:?}")))
}

impl FlowConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "h" => self.h = parse_value(key, v)?,
            "n_steps" => self.n_steps = parse_value(key, v)?,
            "grid.nx" => self.nx = Some(parse_value(key, v)?),
            "grid.ny" => self.ny = Some(parse_value(key, v)?),
            "grid.cell_size" => self.cell_size = Some(parse_value(key, v)?),
            "kernel" => self.kernel = v.parse()?,
            "eps.start" => self.eps_start = parse_value(key, v)?,
            "eps.end" => self.eps_end = parse_value(key, v)?,
            "eps.decay" => self.eps_decay = parse_value(key, v)?,
            "outer_iters" => self.inner.outer_iters = parse_value(key, v)?,
            "inner.sinkhorn_iters" => self.inner.sinkhorn_iters = parse_value(key, v)?,
            "inner.tv_iters" => self.inner.tv_iters = parse_value(key, v)?,
            "inner.prox_step" => self.inner.prox_step = parse_value(key, v)?,
            "inner.margin" => self.inner.margin = parse_value(key, v)?,
            "inner.candidate_every" => self.inner.candidate_every = parse_value(key, v)?,
            "inner_tol" => self.inner.inner_tol = parse_value(key, v)?,
            "mass_tol" => self.mass_tol = parse_value(key, v)?,
            "snapshot_every" => self.snapshot_every = parse_value(key, v)?,
            "de_giorgi_samples" => self.de_giorgi_samples = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            "diagnostics.el_fields" => self.el_fields = parse_value(key, v)?,
            "diagnostics.zeta_fields" => self.zeta_fields = parse_value(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.h > 0.0 && self.h.is_finite()) {
            return fail(format!("h must be positive, got {}", self.h));
        }
        if let Some(cs) = self.cell_size {
            if !(cs > 0.0 && cs.is_finite()) {
                return fail(format!("grid.cell_size must be positive, got {cs}"));
            }
        }
        if self.nx == Some(0) || self.ny == Some(0) {
            return fail("grid dimensions must be at least 1".into());
        }
        self.eps_schedule_units().validate()?;
        if !(self.mass_tol > 0.0 && self.inner.inner_tol > 0.0) {
            return fail("tolerances must be positive".into());
        }
        if !(self.inner.prox_step > 0.0) {
            return fail("inner.prox_step must be positive".into());
        }
        if self.inner.outer_iters == 0 || self.inner.candidate_every == 0 {
            return fail("outer_iters and inner.candidate_every must be at least 1".into());
        }
        if !(1..=4).contains(&self.de_giorgi_samples) {
            return fail(format!(
                "de_giorgi_samples must be between 1 and 4, got {}",
                self.de_giorgi_samples
            ));
        }
        Ok(())
    }

    fn eps_schedule_units(&self) -> EpsSchedule {
        EpsSchedule {
            start: self.eps_start,
            end: self.eps_end,
            decay: self.eps_decay,
        }
    }

    /// Regularization schedule in absolute units for a grid.
    pub fn eps_schedule(&self, grid: &Grid2D) -> EpsSchedule {
        let cs2 = grid.cell_area();
        EpsSchedule {
            start: self.eps_start * cs2,
            end: self.eps_end * cs2,
            decay: self.eps_decay,
        }
    }

    /// De Giorgi sample times for horizon `t`, ascending and ending at `t`.
    pub fn sample_times(&self, t: f64) -> Vec<f64> {
        [t / 8.0, t / 4.0, t / 2.0, t][4 - self.de_giorgi_samples..].to_vec()
    }

    /// Every key, one per line, in a fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("h", self.h.to_string());
        kv("n_steps", self.n_steps.to_string());
        if let Some(v) = self.nx {
            kv("grid.nx", v.to_string());
        }
        if let Some(v) = self.ny {
            kv("grid.ny", v.to_string());
        }
        if let Some(v) = self.cell_size {
            kv("grid.cell_size", v.to_string());
        }
        kv("kernel", self.kernel.to_string());
        kv("eps.start", self.eps_start.to_string());
        kv("eps.end", self.eps_end.to_string());
        kv("eps.decay", self.eps_decay.to_string());
        kv("outer_iters", self.inner.outer_iters.to_string());
        kv("inner.sinkhorn_iters", self.inner.sinkhorn_iters.to_string());
        kv("inner.tv_iters", self.inner.tv_iters.to_string());
        kv("inner.prox_step", self.inner.prox_step.to_string());
        kv("inner.margin", self.inner.margin.to_string());
        kv("inner.candidate_every", self.inner.candidate_every.to_string());
        kv("inner_tol", self.inner.inner_tol.to_string());
        kv("mass_tol", self.mass_tol.to_string());
        kv("snapshot_every", self.snapshot_every.to_string());
        kv("de_giorgi_samples", self.de_giorgi_samples.to_string());
        kv("seed", self.seed.to_string());
        kv("diagnostics.el_fields", self.el_fields.to_string());
        kv("diagnostics.zeta_fields", self.zeta_fields.to_string());
        s
    }
}
