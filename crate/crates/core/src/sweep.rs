//! Grid sweeps over (sigma, kappa, B, alpha) and stepsize tuning.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{baseline_bound_at, baseline_stepsize, DELTA_NOTE};
use crate::canonical::{builtin, FunctionClass, NetworkClass, Realization};
use crate::certifier::{bisect_rate, iterations_to_eps, Bisection, CertifierOptions, ITERATIONS_METRIC, SOLVER_NAME};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::textfmt;

pub const ITERATIONS_EPS: f64 = 1e-6;
/// Rates near one need an absolute bisection tolerance well below `1 - rho`.
pub const SWEEP_BISECT_TOL: f64 = 1e-8;
pub const TUNING_NOTE: &str =
    "log grid over alpha, then golden-section refinement in log(alpha) around the best grid point";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMode {
    /// Every value of the alpha grid is a sweep axis.
    Fixed,
    /// The baseline's admissible stepsize at each grid point.
    #[default]
    Baseline,
    /// The stepsize minimizing the certified rate.
    Tuned,
}

impl std::str::FromStr for AlphaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(AlphaMode::Fixed),
            "baseline" => Ok(AlphaMode::Baseline),
            "tuned" => Ok(AlphaMode::Tuned),
            other => Err(Error::Parse(format!("unknown alpha mode '{other}'"))),
        }
    }
}

impl AlphaMode {
    pub fn label(self) -> &'static str {
        match self {
            AlphaMode::Fixed => "fixed",
            AlphaMode::Baseline => "baseline",
            AlphaMode::Tuned => "tuned",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneConfig {
    /// Search range as multiples of `1/L`.
    pub alpha_min_times_l: f64,
    pub alpha_max_times_l: f64,
    pub points: usize,
    pub refine: usize,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig { alpha_min_times_l: 1e-3, alpha_max_times_l: 1.0, points: 13, refine: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n: Vec<usize>,
    pub kappa: Vec<f64>,
    #[serde(rename = "B")]
    pub horizon: Vec<usize>,
    /// Candidate stepsizes as multiples of `1/L`; the one with the smallest
    /// certified rate is simulated.
    pub alpha_times_l: Vec<f64>,
    pub theta: f64,
    pub d: usize,
    pub tail_fraction: f64,
    /// Simulated length is chosen so that `rho_hi^K = 10^-decades`.
    pub decades: f64,
    pub max_steps: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: vec![3, 5],
            kappa: vec![10.0, 100.0],
            horizon: vec![1, 2, 3],
            alpha_times_l: vec![0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2],
            theta: 0.5,
            d: 2,
            tail_fraction: 0.5,
            decades: 8.0,
            max_steps: 200_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub builtin: Option<String>,
    pub realization: Option<PathBuf>,
    pub alpha_mode: AlphaMode,
    pub alpha_grid: Vec<f64>,
    pub m: f64,
    pub kappa: Vec<f64>,
    pub sigma: Vec<f64>,
    #[serde(rename = "B")]
    pub horizon: Vec<usize>,
    pub baseline: bool,
    pub n: usize,
    pub bisect_tol: f64,
    pub feas_tol: f64,
    pub eps_pd: f64,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub timing: bool,
    pub diagnostics: bool,
    pub tune: TuneConfig,
    pub simulate: SimConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            builtin: None,
            realization: None,
            alpha_mode: AlphaMode::Baseline,
            alpha_grid: Vec::new(),
            m: 1.0,
            kappa: vec![10.0],
            sigma: vec![0.05, 0.2, 0.4, 0.6, 0.8],
            horizon: vec![1, 2, 3],
            baseline: true,
            n: 2,
            bisect_tol: SWEEP_BISECT_TOL,
            feas_tol: crate::certifier::DEFAULT_FEAS_TOL,
            eps_pd: crate::lmi::DEFAULT_EPS_PD,
            seed: 0,
            out: None,
            workers: None,
            timing: false,
            diagnostics: false,
            tune: TuneConfig::default(),
            simulate: SimConfig::default(),
        }
    }
}

/// Where realizations come from.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Builtin(String),
    Fixed(Box<Realization>),
}

impl Source {
    pub fn realization(&self, alpha: Option<f64>) -> Result<Realization> {
        match (self, alpha) {
            (Source::Builtin(name), Some(a)) => builtin(name, a),
            (Source::Builtin(name), None) => Err(Error::Domain(format!("builtin '{name}' needs a stepsize"))),
            (Source::Fixed(r), _) => Ok((**r).clone()),
        }
    }

    pub fn takes_alpha(&self) -> bool {
        matches!(self, Source::Builtin(_))
    }
}

impl SweepConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Domain(msg.to_string()));
        if self.builtin.is_some() && self.realization.is_some() {
            return bad("give either a builtin or a realization file, not both");
        }
        if self.kappa.is_empty() || self.sigma.is_empty() || self.horizon.is_empty() {
            return bad("sigma, kappa and B grids must be non-empty");
        }
        if self.alpha_mode == AlphaMode::Fixed && self.alpha_grid.is_empty() && self.realization.is_none() {
            return bad("fixed alpha mode needs a non-empty alpha grid");
        }
        if !(self.bisect_tol > 0.0 && self.feas_tol > 0.0 && self.eps_pd > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(self.m > 0.0) || self.kappa.iter().any(|&k| !(k >= 1.0)) {
            return bad("need m > 0 and kappa >= 1");
        }
        if self.sigma.iter().any(|s| !(0.0..1.0).contains(s)) {
            return bad("every sigma must lie in [0, 1)");
        }
        if self.horizon.contains(&0) || self.n == 0 {
            return bad("B and n must be positive");
        }
        if self.alpha_grid.iter().any(|&a| !(a > 0.0)) {
            return Err(Error::NonpositiveStepsize(self.alpha_grid.iter().cloned().fold(f64::INFINITY, f64::min)));
        }
        if self.tune.points < 2
            || !(self.tune.alpha_min_times_l > 0.0 && self.tune.alpha_max_times_l > self.tune.alpha_min_times_l)
        {
            return bad("tuning needs at least two points over a positive increasing range");
        }
        Ok(())
    }

    pub fn source(&self) -> Result<Source> {
        match &self.realization {
            Some(path) => Ok(Source::Fixed(Box::new(textfmt::read_realization(path)?))),
            None => Ok(Source::Builtin(self.builtin.clone().unwrap_or_else(|| "diging".into()))),
        }
    }

    pub fn certifier_options(&self) -> CertifierOptions {
        CertifierOptions {
            feas_tol: self.feas_tol,
            bisect_tol: self.bisect_tol,
            eps_pd: self.eps_pd,
            ..Default::default()
        }
    }

    pub fn execution(&self) -> Execution {
        Execution::from_workers(self.workers)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub sigma: f64,
    pub kappa: f64,
    pub horizon: usize,
    pub mode: AlphaMode,
    /// Set for fixed-mode points.
    pub alpha: Option<f64>,
}

/// Grid points in deterministic order: kappa, B, sigma, then alpha.
pub fn grid(cfg: &SweepConfig, modes: &[AlphaMode], source: &Source) -> Vec<GridPoint> {
    let mut out = Vec::new();
    for &kappa in &cfg.kappa {
        for &horizon in &cfg.horizon {
            for &sigma in &cfg.sigma {
                for &mode in modes {
                    if !source.takes_alpha() {
                        out.push(GridPoint { sigma, kappa, horizon, mode: AlphaMode::Fixed, alpha: None });
                        break;
                    }
                    match mode {
                        AlphaMode::Fixed => out.extend(cfg.alpha_grid.iter().map(|&a| GridPoint {
                            sigma,
                            kappa,
                            horizon,
                            mode,
                            alpha: Some(a),
                        })),
                        _ => out.push(GridPoint { sigma, kappa, horizon, mode, alpha: None }),
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tuned {
    pub alpha: f64,
    pub bisection: Bisection,
    /// Every evaluated `(alpha, rho_hi)`, with `1.0` for no certificate.
    pub trace: Vec<(f64, f64)>,
}

fn rate_of(b: &Bisection) -> f64 {
    b.bound().map_or(1.0, |r| r.rho_hi)
}

/// Minimizes the certified rate over the stepsize.
pub fn tune_alpha(
    source: &Source,
    fc: &FunctionClass,
    nc: &NetworkClass,
    opts: &CertifierOptions,
    tune: &TuneConfig,
) -> Result<Tuned> {
    let lo = (tune.alpha_min_times_l / fc.l).ln();
    let hi = (tune.alpha_max_times_l / fc.l).ln();
    let mut trace = Vec::new();
    let mut best: Option<(f64, Bisection)> = None;
    let mut eval = |log_a: f64, trace: &mut Vec<(f64, f64)>| -> Result<f64> {
        let a = log_a.exp();
        let b = bisect_rate(&source.realization(Some(a))?, fc, nc, opts)?;
        let rho = rate_of(&b);
        trace.push((a, rho));
        if best.as_ref().is_none_or(|(_, bb)| rho < rate_of(bb)) {
            best = Some((a, b));
        }
        Ok(rho)
    };
    let pts = tune.points;
    let logs: Vec<f64> = (0..pts).map(|i| lo + (hi - lo) * i as f64 / (pts - 1) as f64).collect();
    let mut vals = Vec::with_capacity(pts);
    for &la in &logs {
        vals.push(eval(la, &mut trace)?);
    }
    let j = (0..pts).fold(0, |bj, i| if vals[i] < vals[bj] { i } else { bj });
    if vals[j] < 1.0 && tune.refine > 0 {
        let (mut a, mut b) = (logs[j.saturating_sub(1)], logs[(j + 1).min(pts - 1)]);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        let mut fc_ = eval(c, &mut trace)?;
        let mut fd = eval(d, &mut trace)?;
        for _ in 2..tune.refine {
            if fc_ <= fd {
                b = d;
                d = c;
                fd = fc_;
                c = b - g * (b - a);
                fc_ = eval(c, &mut trace)?;
            } else {
                a = c;
                c = d;
                fc_ = fd;
                d = a + g * (b - a);
                fd = eval(d, &mut trace)?;
            }
        }
    }
    let (alpha, bisection) = best.expect("at least one evaluation");
    Ok(Tuned { alpha, bisection, trace })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub sigma: f64,
    pub kappa: f64,
    pub horizon: usize,
    pub mode: AlphaMode,
    pub alpha: Option<f64>,
    pub status: String,
    pub rho_hi: Option<f64>,
    pub rho_lo: Option<f64>,
    pub iterations: Option<u64>,
    pub baseline_alpha: Option<f64>,
    pub baseline_rho: Option<f64>,
    pub baseline_iterations: Option<u64>,
    /// Baseline guarantee at this row's stepsize is vacuous.
    pub baseline_vacuous_at_alpha: Option<bool>,
    pub flagged: usize,
    pub solves: usize,
    pub cond_t: Option<f64>,
    pub solver_margin: Option<f64>,
    pub wall_time: f64,
}

impl SweepRow {
    pub fn certified(&self) -> bool {
        self.rho_hi.is_some()
    }

    pub fn header(timing: bool, diagnostics: bool) -> Vec<&'static str> {
        let mut h = vec![
            "sigma",
            "kappa",
            "B",
            "alpha_mode",
            "alpha",
            "status",
            "rho_hi",
            "rho_lo",
            "iterations",
            "baseline_alpha",
            "baseline_rho",
            "baseline_iterations",
            "baseline_vacuous_at_alpha",
            "flagged",
        ];
        if diagnostics {
            h.extend(["solves", "cond_t", "solver_margin"]);
        }
        if timing {
            h.push("wall_time_s");
        }
        h
    }

    pub fn record(&self, timing: bool, diagnostics: bool) -> Vec<String> {
        fn opt<T: ToString>(v: Option<T>) -> String {
            v.map(|x| x.to_string()).unwrap_or_default()
        }
        let mut r = vec![
            self.sigma.to_string(),
            self.kappa.to_string(),
            self.horizon.to_string(),
            self.mode.label().to_string(),
            opt(self.alpha),
            self.status.clone(),
            opt(self.rho_hi),
            opt(self.rho_lo),
            opt(self.iterations),
            opt(self.baseline_alpha),
            opt(self.baseline_rho),
            opt(self.baseline_iterations),
            opt(self.baseline_vacuous_at_alpha),
            self.flagged.to_string(),
        ];
        if diagnostics {
            r.extend([self.solves.to_string(), opt(self.cond_t), opt(self.solver_margin)]);
        }
        if timing {
            r.push(format!("{:.3}", self.wall_time));
        }
        r
    }
}

pub fn evaluate_point(cfg: &SweepConfig, source: &Source, p: &GridPoint) -> SweepRow {
    let start = Instant::now();
    let mut row = SweepRow {
        sigma: p.sigma,
        kappa: p.kappa,
        horizon: p.horizon,
        mode: p.mode,
        alpha: p.alpha,
        status: String::new(),
        rho_hi: None,
        rho_lo: None,
        iterations: None,
        baseline_alpha: None,
        baseline_rho: None,
        baseline_iterations: None,
        baseline_vacuous_at_alpha: None,
        flagged: 0,
        solves: 0,
        cond_t: None,
        solver_margin: None,
        wall_time: 0.0,
    };
    if let Err(e) = fill_point(cfg, source, p, &mut row) {
        row.status = format!("error: {e}");
    }
    row.wall_time = start.elapsed().as_secs_f64();
    row
}

fn fill_point(cfg: &SweepConfig, source: &Source, p: &GridPoint, row: &mut SweepRow) -> Result<()> {
    let fc = FunctionClass::new(cfg.m, cfg.m * p.kappa)?;
    let nc = NetworkClass::new(p.sigma, p.horizon)?;
    let opts = cfg.certifier_options();
    let admissible = if cfg.baseline { Some(baseline_stepsize(fc.m, fc.l, cfg.n, p.horizon, p.sigma)?) } else { None };

    let (alpha, bisection) = match (p.mode, source.takes_alpha()) {
        (_, false) => (None, bisect_rate(&source.realization(None)?, &fc, &nc, &opts)?),
        (AlphaMode::Fixed, true) => (p.alpha, bisect_rate(&source.realization(p.alpha)?, &fc, &nc, &opts)?),
        (AlphaMode::Baseline, true) => {
            let a = match admissible {
                Some(b) => b.alpha,
                None => baseline_stepsize(fc.m, fc.l, cfg.n, p.horizon, p.sigma)?.alpha,
            };
            if !(a > 0.0) {
                return Err(Error::Domain("baseline stepsize is vacuous".into()));
            }
            (Some(a), bisect_rate(&source.realization(Some(a))?, &fc, &nc, &opts)?)
        }
        (AlphaMode::Tuned, true) => {
            let t = tune_alpha(source, &fc, &nc, &opts, &cfg.tune)?;
            (Some(t.alpha), t.bisection)
        }
    };
    row.alpha = alpha;
    match &bisection {
        Bisection::Bound(b) => {
            row.status = "certified".into();
            row.rho_hi = Some(b.rho_hi);
            row.rho_lo = Some(b.rho_lo);
            row.iterations = Some(b.iterations_to_eps(ITERATIONS_EPS));
            row.flagged = b.flagged.len();
            row.solves = b.solves;
            row.cond_t = Some(b.certificate.cond_t());
            row.solver_margin = Some(b.certificate.meta.solver_margin);
        }
        Bisection::NoCertificate { rho_tested, flagged, solves } => {
            row.status = if flagged.is_empty() {
                format!("no_certificate at rho = {rho_tested}")
            } else {
                format!("solver_failure at rho = {rho_tested}")
            };
            row.flagged = flagged.len();
            row.solves = *solves;
        }
    }
    if let Some(b) = admissible {
        if !b.vacuous {
            row.baseline_alpha = Some(b.alpha);
            row.baseline_rho = Some(b.rho);
            row.baseline_iterations = Some(iterations_to_eps(b.rho, ITERATIONS_EPS));
        }
        if let Some(a) = alpha {
            row.baseline_vacuous_at_alpha = Some(baseline_bound_at(a, fc.m, fc.l, cfg.n, p.horizon, p.sigma)?.vacuous);
        }
    }
    Ok(())
}

pub fn run_points(cfg: &SweepConfig, source: &Source, points: &[GridPoint], execution: Execution) -> Vec<SweepRow> {
    exec::map(points, execution, |p| evaluate_point(cfg, source, p))
}

/// One row per grid point in the configured alpha mode.
pub fn run_sweep(cfg: &SweepConfig, execution: Execution) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let source = cfg.source()?;
    let points = grid(cfg, &[cfg.alpha_mode], &source);
    Ok(run_points(cfg, &source, &points, execution))
}

/// Both stepsize regimes per grid point: the baseline's admissible stepsize
/// and the certified-rate-optimal one.
pub fn run_compare(cfg: &SweepConfig, execution: Execution) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let source = cfg.source()?;
    if !source.takes_alpha() {
        return Err(Error::Domain("comparison needs a builtin realization with a stepsize".into()));
    }
    let cfg = SweepConfig { baseline: true, ..cfg.clone() };
    let points = grid(&cfg, &[AlphaMode::Baseline, AlphaMode::Tuned], &source);
    Ok(run_points(&cfg, &source, &points, execution))
}

pub fn write_csv<W: Write>(rows: &[SweepRow], out: W, timing: bool, diagnostics: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SweepRow::header(timing, diagnostics))?;
    for r in rows {
        w.write_record(r.record(timing, diagnostics))?;
    }
    w.flush()?;
    Ok(())
}

/// Provenance of a sweep table, written next to the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMeta {
    pub solver: String,
    pub iterations_metric: String,
    pub baseline_delta: String,
    pub alpha_search: String,
    pub psi_ranges: String,
    pub config: SweepConfig,
}

pub fn sweep_meta(cfg: &SweepConfig) -> SweepMeta {
    SweepMeta {
        solver: SOLVER_NAME.into(),
        iterations_metric: ITERATIONS_METRIC.into(),
        baseline_delta: DELTA_NOTE.into(),
        alpha_search: TUNING_NOTE.into(),
        psi_ranges: crate::basis::PSI_RANGE_NOTE.into(),
        config: cfg.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SweepConfig {
        SweepConfig { sigma: vec![0.1, 0.5], horizon: vec![1], ..Default::default() }
    }

    #[test]
    fn config_round_trip_and_defaults() {
        let cfg = SweepConfig::from_toml("sigma = [0.3]\nB = [2]\n[tune]\npoints = 5\n").unwrap();
        assert_eq!(cfg.sigma, vec![0.3]);
        assert_eq!(cfg.horizon, vec![2]);
        assert_eq!(cfg.tune.points, 5);
        assert_eq!(cfg.kappa, vec![10.0]);
        assert_eq!(SweepConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert!(SweepConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn validation() {
        assert!(SweepConfig { sigma: vec![], ..Default::default() }.validate().is_err());
        assert!(SweepConfig { bisect_tol: 0.0, ..Default::default() }.validate().is_err());
        assert!(SweepConfig { alpha_mode: AlphaMode::Fixed, ..Default::default() }.validate().is_err());
        assert!(SweepConfig::default().validate().is_ok());
    }

    #[test]
    fn grid_order() {
        let cfg = SweepConfig { alpha_mode: AlphaMode::Fixed, alpha_grid: vec![0.01, 0.02], ..small() };
        let pts = grid(&cfg, &[AlphaMode::Fixed], &Source::Builtin("diging".into()));
        let got: Vec<(f64, Option<f64>)> = pts.iter().map(|p| (p.sigma, p.alpha)).collect();
        assert_eq!(got, vec![(0.1, Some(0.01)), (0.1, Some(0.02)), (0.5, Some(0.01)), (0.5, Some(0.02))]);
    }

    #[test]
    fn baseline_sweep_rows() {
        let rows = run_sweep(&small(), Execution::Sequential).unwrap();
        assert_eq!(rows.len(), 2);
        for r in &rows {
            assert!(r.certified(), "{r:?}");
            assert!(r.iterations.unwrap() < r.baseline_iterations.unwrap());
            assert_eq!(r.baseline_vacuous_at_alpha, Some(false));
        }
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf, false, false).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("sigma,kappa,B,alpha_mode,alpha,status,rho_hi"));
    }

    #[test]
    fn tuning_finds_interior_optimum() {
        let fc = FunctionClass::new(1.0, 10.0).unwrap();
        let nc = NetworkClass::new(0.2, 1).unwrap();
        let tune = TuneConfig { points: 7, refine: 4, ..Default::default() };
        let t = tune_alpha(&Source::Builtin("diging".into()), &fc, &nc, &CertifierOptions::default(), &tune).unwrap();
        assert!(t.bisection.bound().is_some());
        assert!(t.trace.iter().all(|&(_, r)| r >= rate_of(&t.bisection)));
        assert_eq!(t.trace.len(), 7 + 4);
    }
}
