use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use tvcert::sweep::{AlphaMode, SweepConfig};

#[derive(Debug, Parser)]
#[command(
    name = "tvcert",
    version,
    about = "Worst-case rate certificates for decentralized gradient methods on time-varying networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check that the realization has a consensual fixed point for every problem.
    Check(Common),
    /// Bisect the smallest certifiable rate at one (sigma, B, kappa) point.
    Certify(Common),
    /// Certify over the sigma x kappa x B grid and write one CSV row per point.
    Sweep(Common),
    /// Simulate random quadratic instances and compare empirical and certified rates.
    Simulate(Common),
    /// Certified and baseline rates under the baseline stepsize and the tuned stepsize.
    Compare(Common),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, conflicts_with = "realization")]
    pub builtin: Option<String>,
    /// Realization file (TOML).
    #[arg(long)]
    pub realization: Option<PathBuf>,
    #[arg(long, conflicts_with = "alpha_grid")]
    pub alpha: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub alpha_grid: Option<Vec<f64>>,
    /// fixed, baseline or tuned.
    #[arg(long)]
    pub alpha_mode: Option<AlphaMode>,
    #[arg(long)]
    pub m: Option<f64>,
    #[arg(long = "L")]
    pub l: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub kappa_grid: Option<Vec<f64>>,
    #[arg(long, conflicts_with = "sigma_grid")]
    pub sigma: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub sigma_grid: Option<Vec<f64>>,
    #[arg(long = "B", conflicts_with = "b_grid")]
    pub b: Option<usize>,
    #[arg(long = "B-grid", value_delimiter = ',')]
    pub b_grid: Option<Vec<usize>>,
    /// Number of agents; only the baseline depends on it.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub bisect_tol: Option<f64>,
    #[arg(long)]
    pub feas_tol: Option<f64>,
    #[arg(long)]
    pub eps_pd: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file, or output directory for `simulate`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; 0 or absent uses every core, 1 runs sequentially.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Write the semidefinite program at the final rate in SDPA sparse format.
    #[arg(long)]
    pub export_sdpa: Option<PathBuf>,
    #[arg(long)]
    pub diagnostics: bool,
    /// Add wall-clock columns (breaks byte-identical output).
    #[arg(long)]
    pub timing: bool,
}

impl Common {
    /// Config file values overridden by flags.
    pub fn resolve(&self) -> Result<SweepConfig, String> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
                SweepConfig::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))?
            }
            None => SweepConfig::default(),
        };
        if let Some(b) = &self.builtin {
            cfg.builtin = Some(b.clone());
            cfg.realization = None;
        }
        if let Some(p) = &self.realization {
            cfg.realization = Some(p.clone());
            cfg.builtin = None;
        }
        if let Some(a) = self.alpha {
            cfg.alpha_grid = vec![a];
            cfg.alpha_mode = AlphaMode::Fixed;
        }
        if let Some(g) = &self.alpha_grid {
            cfg.alpha_grid = g.clone();
            cfg.alpha_mode = AlphaMode::Fixed;
        }
        if let Some(mode) = self.alpha_mode {
            cfg.alpha_mode = mode;
        }
        if let Some(m) = self.m {
            cfg.m = m;
        }
        if let Some(l) = self.l {
            cfg.kappa = vec![l / cfg.m];
        }
        if let Some(k) = &self.kappa_grid {
            cfg.kappa = k.clone();
        }
        if let Some(s) = self.sigma {
            cfg.sigma = vec![s];
        }
        if let Some(s) = &self.sigma_grid {
            cfg.sigma = s.clone();
        }
        if let Some(b) = self.b {
            cfg.horizon = vec![b];
        }
        if let Some(b) = &self.b_grid {
            cfg.horizon = b.clone();
        }
        macro_rules! set {
            ($($field:ident),*) => {$(if let Some(v) = self.$field { cfg.$field = v; })*};
        }
        set!(n, bisect_tol, feas_tol, eps_pd, seed);
        if self.out.is_some() {
            cfg.out = self.out.clone();
        }
        if self.workers.is_some() {
            cfg.workers = self.workers;
        }
        cfg.diagnostics |= self.diagnostics;
        cfg.timing |= self.timing;
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}
