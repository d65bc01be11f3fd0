use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use tvcert::canonical::{check_fixed_point_conditions, FunctionClass, NetworkClass, RANK_TOL};
use tvcert::certifier::{bisect_rate, Bisection, ITERATIONS_METRIC};
use tvcert::lmi::{assemble_feasibility, AssemblyOptions};
use tvcert::study::{run_study, write_summary_csv};
use tvcert::sweep::{self, AlphaMode, Source, SweepConfig, SweepRow, ITERATIONS_EPS};
use tvcert::Error;

use crate::args::Common;

/// Exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Code {
    Success = 0,
    Negative = 1,
    Usage = 2,
    Solver = 3,
}

#[derive(Debug)]
pub struct Failure {
    pub code: Code,
    pub message: String,
}

type Outcome = Result<Code, Failure>;

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: Code::Usage, message: message.into() }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::SolverFailure { .. } => Code::Solver,
            Error::ConditionsViolated { .. } | Error::EmptyIntersection => Code::Negative,
            _ => Code::Usage,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        usage(e.to_string())
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| usage(format!("{}: {e}", p.display())))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn single<T: Copy>(name: &str, values: &[T]) -> Result<T, Failure> {
    match values {
        [v] => Ok(*v),
        _ => Err(usage(format!("{name} must be a single value for this command"))),
    }
}

pub fn check(c: &Common) -> Outcome {
    let cfg = c.resolve().map_err(usage)?;
    let source = cfg.source()?;
    let alpha = match (&source, cfg.alpha_grid.as_slice()) {
        (Source::Builtin(_), [a, ..]) => Some(*a),
        (Source::Builtin(name), []) => return Err(usage(format!("builtin '{name}' needs --alpha"))),
        _ => None,
    };
    let r = source.realization(alpha)?;
    let rep = check_fixed_point_conditions(&r, RANK_TOL)?;
    let mut out = io::stdout().lock();
    writeln!(out, "cond_a = {}", rep.cond_a)?;
    writeln!(out, "cond_b = {}", rep.cond_b)?;
    writeln!(out, "nullity_k = {}", rep.nullity_k)?;
    writeln!(out, "rank_c = {}", rep.rank_c)?;
    writeln!(out, "rank_c_augmented = {}", rep.rank_c_augmented)?;
    writeln!(out, "singular_values_k = {:?}", rep.singular_values_k)?;
    writeln!(out, "singular_values_c = {:?}", rep.singular_values_c)?;
    writeln!(out, "singular_values_c_augmented = {:?}", rep.singular_values_c_augmented)?;
    if !rep.forms_agree() || cfg.diagnostics {
        writeln!(out, "cond_a_literal = {}", rep.cond_a_literal)?;
    }
    writeln!(out, "verdict = \"{}\"", if rep.holds() { "pass" } else { "fail" })?;
    Ok(if rep.holds() { Code::Success } else { Code::Negative })
}

#[derive(Serialize)]
struct CertifyReport {
    status: String,
    alpha: Option<f64>,
    m: f64,
    #[serde(rename = "L")]
    l: f64,
    sigma: f64,
    #[serde(rename = "B")]
    horizon: usize,
    rho_hi: Option<f64>,
    rho_lo: Option<f64>,
    iterations_to_eps: Option<u64>,
    eps: f64,
    iterations_metric: String,
    solves: usize,
    flagged_rhos: Vec<f64>,
    cond_t: Option<f64>,
    solver_margin: Option<f64>,
}

pub fn certify(c: &Common) -> Outcome {
    let cfg = c.resolve().map_err(usage)?;
    let source = cfg.source()?;
    let kappa = single("kappa", &cfg.kappa)?;
    let sigma = single("sigma", &cfg.sigma)?;
    let horizon = single("B", &cfg.horizon)?;
    let fc = FunctionClass::new(cfg.m, cfg.m * kappa)?;
    let nc = NetworkClass::new(sigma, horizon)?;
    let opts = cfg.certifier_options();

    let (alpha, bisection) = if !source.takes_alpha() {
        (None, bisect_rate(&source.realization(None)?, &fc, &nc, &opts)?)
    } else {
        match cfg.alpha_mode {
            AlphaMode::Fixed => {
                let mut best: Option<(f64, Bisection)> = None;
                for &a in &cfg.alpha_grid {
                    let b = bisect_rate(&source.realization(Some(a))?, &fc, &nc, &opts)?;
                    let better = match (&best, b.bound()) {
                        (None, _) => true,
                        (Some((_, prev)), Some(nb)) => prev.bound().is_none_or(|pb| nb.rho_hi < pb.rho_hi),
                        (Some(_), None) => false,
                    };
                    if better {
                        best = Some((a, b));
                    }
                }
                let (a, b) = best.expect("validated non-empty grid");
                (Some(a), b)
            }
            AlphaMode::Baseline => {
                let base = tvcert::baselines::baseline_stepsize(fc.m, fc.l, cfg.n, horizon, sigma)?;
                if base.vacuous {
                    return Err(usage("baseline stepsize is vacuous at this point"));
                }
                (Some(base.alpha), bisect_rate(&source.realization(Some(base.alpha))?, &fc, &nc, &opts)?)
            }
            AlphaMode::Tuned => {
                let t = sweep::tune_alpha(&source, &fc, &nc, &opts, &cfg.tune)?;
                (Some(t.alpha), t.bisection)
            }
        }
    };

    let mut report = CertifyReport {
        status: String::new(),
        alpha,
        m: fc.m,
        l: fc.l,
        sigma,
        horizon,
        rho_hi: None,
        rho_lo: None,
        iterations_to_eps: None,
        eps: ITERATIONS_EPS,
        iterations_metric: ITERATIONS_METRIC.into(),
        solves: 0,
        flagged_rhos: Vec::new(),
        cond_t: None,
        solver_margin: None,
    };
    let (code, sdpa_rho) = match &bisection {
        Bisection::Bound(b) => {
            report.status = "certified".into();
            report.rho_hi = Some(b.rho_hi);
            report.rho_lo = Some(b.rho_lo);
            report.iterations_to_eps = Some(b.iterations_to_eps(ITERATIONS_EPS));
            report.solves = b.solves;
            report.flagged_rhos = b.flagged.clone();
            report.cond_t = Some(b.certificate.cond_t());
            report.solver_margin = Some(b.certificate.meta.solver_margin);
            if let Some(path) = &cfg.out {
                fs::write(path, b.certificate.to_toml())?;
            }
            (Code::Success, b.rho_hi)
        }
        Bisection::NoCertificate { rho_tested, flagged, solves } => {
            report.status = if flagged.is_empty() { "no_certificate".into() } else { "solver_failure".into() };
            report.rho_hi = None;
            report.solves = *solves;
            report.flagged_rhos = flagged.clone();
            (if flagged.is_empty() { Code::Negative } else { Code::Solver }, *rho_tested)
        }
    };
    if let Some(path) = &c.export_sdpa {
        let r = source.realization(alpha)?;
        let aopts = AssemblyOptions { eps_pd: cfg.eps_pd, ..Default::default() };
        let program = assemble_feasibility(&r, &fc, &nc, sdpa_rho, &aopts)?;
        fs::write(path, program.to_sdp().to_sdpa(&format!("feasibility program at rho = {sdpa_rho}")))?;
    }
    print!("{}", toml::to_string(&report).expect("report serializes"));
    Ok(code)
}

fn sweep_exit(rows: &[SweepRow]) -> Code {
    if rows.iter().any(|r| r.status.starts_with("solver_failure") || r.status.starts_with("error")) {
        Code::Solver
    } else {
        Code::Success
    }
}

fn write_table(cfg: &SweepConfig, rows: &[SweepRow]) -> Outcome {
    sweep::write_csv(rows, output(cfg.out.as_deref())?, cfg.timing, cfg.diagnostics)?;
    if let Some(out) = &cfg.out {
        let meta = toml::to_string(&sweep::sweep_meta(cfg)).expect("metadata serializes");
        fs::write(meta_path(out), meta)?;
    }
    Ok(sweep_exit(rows))
}

fn meta_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.toml");
    out.with_file_name(name)
}

pub fn sweep(c: &Common) -> Outcome {
    let cfg = c.resolve().map_err(usage)?;
    let rows = sweep::run_sweep(&cfg, cfg.execution())?;
    write_table(&cfg, &rows)
}

pub fn compare(c: &Common) -> Outcome {
    let cfg = c.resolve().map_err(usage)?;
    let rows = sweep::run_compare(&cfg, cfg.execution())?;
    write_table(&cfg, &rows)
}

pub fn simulate(c: &Common) -> Outcome {
    let cfg = c.resolve().map_err(usage)?;
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("simulate_out"));
    fs::create_dir_all(&dir)?;
    let results = run_study(&cfg.simulate, cfg.m, cfg.seed, &cfg.certifier_options(), cfg.execution());
    let mut ok = Vec::new();
    let mut code = Code::Success;
    for r in results {
        match r {
            Ok(r) => ok.push(r),
            Err(e) => {
                eprintln!("instance failed: {e}");
                code = code.max_with(match Failure::from(e).code {
                    Code::Solver => Code::Solver,
                    _ => Code::Negative,
                });
            }
        }
    }
    for r in &ok {
        let i = &r.instance;
        let name = format!("trajectory_n{}_B{}_kappa{}.csv", i.n, i.horizon, i.kappa);
        r.trajectory.write_csv(BufWriter::new(File::create(dir.join(name))?))?;
        if !r.rate_ok(0.02) || r.burn_in >= r.steps {
            code = code.max_with(Code::Negative);
        }
    }
    write_summary_csv(&ok, BufWriter::new(File::create(dir.join("summary.csv"))?))?;
    write_summary_csv(&ok, io::stdout().lock())?;
    Ok(code)
}

impl Code {
    fn max_with(self, other: Code) -> Code {
        if other as u8 > self as u8 {
            other
        } else {
            self
        }
    }
}
