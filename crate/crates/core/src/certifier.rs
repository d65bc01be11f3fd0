//! Feasibility solves, rate bisection and certificate post-processing.

use serde::{Deserialize, Serialize};

use crate::canonical::{FunctionClass, NetworkClass, Realization};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::lmi::{self, AssemblyOptions, ConicProgram, LambdaCoupling, LmiVariables};
use crate::sdp::{self, SdpSettings, SdpStatus};
use crate::textfmt::Shaped;

pub const DEFAULT_FEAS_TOL: f64 = 1e-7;
pub const DEFAULT_BISECT_TOL: f64 = 1e-3;
pub const SOLVER_NAME: &str = "tvcert dense primal-dual interior point (HKM, predictor-corrector)";
pub const ITERATIONS_METRIC: &str = "ceil(ln(1/eps) / ln(1/rho_hi)) with eps = 1e-6";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertifierOptions {
    pub feas_tol: f64,
    pub bisect_tol: f64,
    pub eps_pd: f64,
    pub coupling: LambdaCoupling,
    /// Initial lower end of the bisection bracket.
    pub rho_lo: f64,
    /// Re-solve the final bracket point to optimality for a better-conditioned
    /// certificate.
    pub polish: bool,
    pub max_iter: usize,
}

impl Default for CertifierOptions {
    fn default() -> Self {
        CertifierOptions {
            feas_tol: DEFAULT_FEAS_TOL,
            bisect_tol: DEFAULT_BISECT_TOL,
            eps_pd: lmi::DEFAULT_EPS_PD,
            coupling: LambdaCoupling::Shared,
            rho_lo: 0.5,
            polish: true,
            max_iter: 150,
        }
    }
}

impl CertifierOptions {
    fn assembly(&self) -> AssemblyOptions {
        AssemblyOptions { eps_pd: self.eps_pd, coupling: self.coupling, ..Default::default() }
    }
}

/// Independently recomputed eigenvalue residuals of a certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub lambda_max_x: f64,
    pub lambda_max_y: f64,
    pub lambda_min_p: f64,
    pub lambda_min_q: f64,
    pub lambda_min_r: f64,
    pub lambda_min_s: Vec<f64>,
    pub min_lambda: f64,
}

impl Residuals {
    pub fn compute(program: &ConicProgram, v: &LmiVariables) -> Self {
        let lambda_min_scalar =
            v.lambda.iter().chain(v.lambda_y.iter().flatten()).cloned().fold(f64::INFINITY, f64::min);
        Residuals {
            lambda_max_x: linalg::lambda_max(&program.consensus_block(v)),
            lambda_max_y: linalg::lambda_max(&program.disagreement_block(v)),
            lambda_min_p: linalg::lambda_min(&v.p),
            lambda_min_q: linalg::lambda_min(&v.q),
            lambda_min_r: linalg::lambda_min(&v.r),
            lambda_min_s: v.s.iter().map(linalg::lambda_min).collect(),
            min_lambda: lambda_min_scalar,
        }
    }

    pub fn within(&self, eps_pd: f64, feas_tol: f64) -> bool {
        self.lambda_max_x <= feas_tol
            && self.lambda_max_y <= feas_tol
            && self.lambda_min_p >= eps_pd - feas_tol
            && self.lambda_min_q >= eps_pd - feas_tol
            && self.lambda_min_r >= -feas_tol
            && self.lambda_min_s.iter().all(|&v| v >= -feas_tol)
            && self.min_lambda >= -feas_tol
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateMeta {
    pub solver: String,
    pub feas_tol: f64,
    pub eps_pd: f64,
    pub m: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub sigma: f64,
    #[serde(rename = "B")]
    pub horizon: usize,
    pub psi_ranges: String,
    pub coupling: LambdaCoupling,
    /// Optimal or early-stopped margin `t` of the normalized program.
    pub solver_margin: f64,
    pub solver_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub rho: f64,
    pub vars: LmiVariables,
    pub residuals: Residuals,
    pub meta: CertificateMeta,
}

impl Certificate {
    pub fn is_valid(&self) -> bool {
        self.residuals.within(self.meta.eps_pd, self.meta.feas_tol)
    }

    /// Recomputes residuals against a freshly assembled program.
    pub fn revalidate(&self, program: &ConicProgram) -> bool {
        Residuals::compute(program, &self.vars).within(self.meta.eps_pd, self.meta.feas_tol)
    }

    /// `max(lmax P, lmax Q) / min(lmin P, lmin Q)`, the condition number of
    /// `Pi (x) P + (I - Pi) (x) Q` for any `n >= 2`.
    pub fn cond_t(&self) -> f64 {
        let p = linalg::sym_eigenvalues(&self.vars.p);
        let q = linalg::sym_eigenvalues(&self.vars.q);
        let hi = p.last().unwrap().max(*q.last().unwrap());
        let lo = p[0].min(q[0]);
        hi / lo
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&CertificateFile::from(self)).expect("certificate serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let f: CertificateFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        f.try_into()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CertificateFile {
    rho: f64,
    #[serde(rename = "lambda")]
    lambda: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lambda_y: Option<Vec<f64>>,
    meta: CertificateMeta,
    residuals: Residuals,
    #[serde(rename = "P")]
    p: Shaped,
    #[serde(rename = "Q")]
    q: Shaped,
    #[serde(rename = "R")]
    r: Shaped,
    #[serde(rename = "S")]
    s: Vec<Shaped>,
}

impl From<&Certificate> for CertificateFile {
    fn from(c: &Certificate) -> Self {
        CertificateFile {
            rho: c.rho,
            lambda: c.vars.lambda.clone(),
            lambda_y: c.vars.lambda_y.clone(),
            meta: c.meta.clone(),
            residuals: c.residuals.clone(),
            p: (&c.vars.p).into(),
            q: (&c.vars.q).into(),
            r: (&c.vars.r).into(),
            s: c.vars.s.iter().map(Shaped::from).collect(),
        }
    }
}

impl TryFrom<CertificateFile> for Certificate {
    type Error = Error;

    fn try_from(f: CertificateFile) -> Result<Self> {
        let s = f.s.iter().map(Mat::try_from).collect::<Result<Vec<_>>>()?;
        Ok(Certificate {
            rho: f.rho,
            vars: LmiVariables {
                p: Mat::try_from(&f.p)?,
                q: Mat::try_from(&f.q)?,
                r: Mat::try_from(&f.r)?,
                s,
                lambda: f.lambda,
                lambda_y: f.lambda_y,
            },
            residuals: f.residuals,
            meta: f.meta,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Feasibility {
    Certificate(Box<Certificate>),
    /// `margin_lower` is a lower bound on the optimal margin (positive).
    Infeasible {
        margin_lower: f64,
    },
    SolverFailure(String),
}

impl Feasibility {
    pub fn certificate(&self) -> Option<&Certificate> {
        match self {
            Feasibility::Certificate(c) => Some(c),
            _ => None,
        }
    }
}

fn sdp_settings(data: &sdp::SdpData, max_iter: usize, early: bool, retry: bool) -> SdpSettings {
    // |t| over dual points with t <= 0 is bounded by the block coefficients,
    // since every other coordinate lies in [-1, 1].
    let t_bound: f64 = data.a[..data.a.len() - 1]
        .iter()
        .flat_map(|coeffs| coeffs.iter().filter(|(blk, _)| *blk < 2).map(|(_, m)| linalg::spectral_norm(m)))
        .sum();
    SdpSettings {
        max_iter: if retry { 2 * max_iter } else { max_iter },
        step_fraction: if retry { 0.9 } else { 0.95 },
        x0_scale: if retry { 10.0 } else { 1.0 },
        stop_dual_above: early.then_some(0.0),
        stop_primal_below: Some(0.0),
        dual_bound: t_bound.max(1.0),
        ..Default::default()
    }
}

/// One feasibility solve with independent re-verification.
pub fn solve_feasibility(program: &ConicProgram, opts: &CertifierOptions) -> Feasibility {
    solve_with(program, opts, !opts.polish, false)
}

fn solve_with(program: &ConicProgram, opts: &CertifierOptions, early: bool, retry: bool) -> Feasibility {
    let data = program.to_sdp();
    let y0 = program.interior_point();
    let settings = sdp_settings(&data, opts.max_iter, early, retry);
    let sol = match sdp::solve(&data, &y0, &settings) {
        Ok(sol) => sol,
        Err(e) => return Feasibility::SolverFailure(e.to_string()),
    };
    // The dual iterate is exactly feasible, so a positive dual objective is a
    // strictly feasible point. Otherwise the run converged with t* >= 0.
    if sol.status == SdpStatus::PrimalThreshold || sol.dual_objective <= 0.0 {
        return Feasibility::Infeasible { margin_lower: -sol.primal_objective };
    }
    let n = sol.y.len();
    let raw = lift_free_directions(program, program.variables_from_vector(&sol.y[..n - 1]));
    let floor = raw.lambda_min_pq();
    if !(floor > 0.0) {
        return Feasibility::SolverFailure(format!("P, Q lost definiteness (min eigenvalue {floor:e})"));
    }
    let vars = raw.scaled(program.eps_pd / floor);
    let residuals = Residuals::compute(program, &vars);
    if !residuals.within(program.eps_pd, opts.feas_tol) {
        return Feasibility::SolverFailure(format!("certificate failed re-verification: {residuals:?}"));
    }
    Feasibility::Certificate(Box::new(Certificate {
        rho: program.meta.rho,
        vars,
        residuals,
        meta: CertificateMeta {
            solver: SOLVER_NAME.into(),
            feas_tol: opts.feas_tol,
            eps_pd: program.eps_pd,
            m: program.meta.m,
            l: program.meta.l,
            sigma: program.meta.sigma,
            horizon: program.meta.horizon,
            psi_ranges: program.meta.psi_ranges.clone(),
            coupling: program.meta.coupling,
            solver_margin: sol.y[n - 1],
            solver_iterations: sol.iterations,
        },
    }))
}

/// `P` enters the consensus block only through `range([Xi Psi, Xi_plus Psi])`.
/// On the orthogonal complement it is replaced by a multiple of the identity
/// inside the spectrum of the constrained part, which leaves `X` unchanged
/// and keeps `cond(T)` independent of the solver's positivity floor.
fn lift_free_directions(program: &ConicProgram, mut vars: LmiVariables) -> LmiVariables {
    let c = &program.consensus;
    let a = program.a;
    let span = linalg::hstack(&[&(&c.xi * &c.psi), &(&c.xi_plus * &c.psi)], a);
    let free = linalg::nullspace(&span.transpose(), crate::canonical::RANK_TOL);
    if free.ncols() == 0 || free.ncols() == a {
        return vars;
    }
    let proj_free = &free * free.transpose();
    let proj_used = Mat::identity(a, a) - &proj_free;
    let used = linalg::nullspace(&free.transpose(), crate::canonical::RANK_TOL);
    let mu = linalg::lambda_min(&(used.transpose() * &vars.p * &used)).min(linalg::lambda_min(&vars.q));
    if mu > 0.0 {
        vars.p = linalg::symmetrize(&(&proj_used * &vars.p * &proj_used + proj_free * mu));
    }
    vars
}

/// Solves at one rate, retrying once with a more conservative solver setup.
pub fn certify_at(
    r: &Realization,
    fc: &FunctionClass,
    nc: &NetworkClass,
    rho: f64,
    opts: &CertifierOptions,
) -> Result<Feasibility> {
    let program = lmi::assemble_feasibility(r, fc, nc, rho, &opts.assembly())?;
    let first = solve_with(&program, opts, !opts.polish, false);
    Ok(match first {
        Feasibility::SolverFailure(_) => solve_with(&program, opts, !opts.polish, true),
        other => other,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateBound {
    pub rho_lo: f64,
    pub rho_hi: f64,
    pub certificate: Certificate,
    /// Rates where the solver failed twice and the point was treated as
    /// infeasible.
    pub flagged: Vec<f64>,
    pub solves: usize,
}

impl RateBound {
    pub fn rho_star(&self) -> f64 {
        self.rho_hi
    }

    pub fn iterations_to_eps(&self, eps: f64) -> u64 {
        iterations_to_eps(self.rho_hi, eps)
    }
}

/// `ceil(ln(1/eps) / ln(1/rho))`; zero for `rho == 0`, `u64::MAX` for `rho >= 1`.
pub fn iterations_to_eps(rho: f64, eps: f64) -> u64 {
    if rho <= 0.0 {
        return 0;
    }
    if rho >= 1.0 {
        return u64::MAX;
    }
    let k = (1.0 / eps).ln() / (1.0 / rho).ln();
    k.ceil() as u64
}

#[derive(Debug, Clone, PartialEq)]
pub enum Bisection {
    Bound(Box<RateBound>),
    NoCertificate { rho_tested: f64, flagged: Vec<f64>, solves: usize },
}

impl Bisection {
    pub fn bound(&self) -> Option<&RateBound> {
        match self {
            Bisection::Bound(b) => Some(b),
            Bisection::NoCertificate { .. } => None,
        }
    }
}

struct Probe<'a> {
    r: &'a Realization,
    fc: &'a FunctionClass,
    nc: &'a NetworkClass,
    opts: CertifierOptions,
    flagged: Vec<f64>,
    solves: usize,
}

impl Probe<'_> {
    fn at(&mut self, rho: f64) -> Result<Option<Certificate>> {
        self.solves += 1;
        Ok(match certify_at(self.r, self.fc, self.nc, rho, &self.opts)? {
            Feasibility::Certificate(c) => Some(*c),
            Feasibility::Infeasible { .. } => None,
            Feasibility::SolverFailure(_) => {
                self.flagged.push(rho);
                None
            }
        })
    }
}

/// Bisection on `rho` keeping an (infeasible, feasible) bracket.
pub fn bisect_rate(
    r: &Realization,
    fc: &FunctionClass,
    nc: &NetworkClass,
    opts: &CertifierOptions,
) -> Result<Bisection> {
    if !(opts.bisect_tol > 0.0 && opts.bisect_tol < 0.5) {
        return Err(Error::Domain(format!("bisection tolerance must lie in (0, 0.5), got {}", opts.bisect_tol)));
    }
    if !(opts.rho_lo > 0.0 && opts.rho_lo < 1.0) {
        return Err(Error::Domain(format!("initial lower rate must lie in (0, 1), got {}", opts.rho_lo)));
    }
    let mut probe =
        Probe { r, fc, nc, opts: CertifierOptions { polish: false, ..*opts }, flagged: Vec::new(), solves: 0 };

    let mut hi = 1.0 - opts.bisect_tol;
    let Some(mut cert) = probe.at(hi)? else {
        return Ok(Bisection::NoCertificate { rho_tested: hi, flagged: probe.flagged, solves: probe.solves });
    };
    let mut lo = opts.rho_lo.min(hi - opts.bisect_tol);
    while let Some(c) = probe.at(lo)? {
        hi = lo;
        cert = c;
        if lo <= opts.bisect_tol {
            lo = 0.0;
            break;
        }
        lo *= 0.5;
    }
    while hi - lo > opts.bisect_tol {
        let mid = 0.5 * (lo + hi);
        match probe.at(mid)? {
            Some(c) => {
                hi = mid;
                cert = c;
            }
            None => lo = mid,
        }
    }
    if opts.polish {
        probe.opts.polish = true;
        let flagged = probe.flagged.len();
        if let Some(c) = probe.at(hi)? {
            cert = c;
        }
        probe.flagged.truncate(flagged);
    }
    let program = lmi::assemble_feasibility(r, fc, nc, hi, &opts.assembly())?;
    if !cert.revalidate(&program) {
        return Err(Error::SolverFailure { rho: hi, reason: "final certificate failed re-validation".into() });
    }
    Ok(Bisection::Bound(Box::new(RateBound {
        rho_lo: lo,
        rho_hi: hi,
        certificate: cert,
        flagged: probe.flagged,
        solves: probe.solves,
    })))
}

/// Initial condition for the envelope constant.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    /// `V(0)` evaluated with `P, Q` normalized so that `lmax(T) = 1`.
    V0(f64),
    /// Per-agent lifted error states `xi_i(0) - xi_i*`, each `a x d`.
    Errors(Vec<Mat>),
}

/// `V = n tr(mean^T P mean) + sum_i tr((e_i - mean)^T Q (e_i - mean))`.
pub fn lyapunov_value(p: &Mat, q: &Mat, errors: &[Mat]) -> f64 {
    let n = errors.len();
    if n == 0 {
        return 0.0;
    }
    let mut mean = errors[0].clone() * 0.0;
    for e in errors {
        mean += e;
    }
    mean /= n as f64;
    let mut v = n as f64 * (mean.transpose() * p * &mean).trace();
    for e in errors {
        let d = e - &mean;
        v += (d.transpose() * q * &d).trace();
    }
    v
}

/// Envelope constant `gamma = sqrt(cond(T) V(0))` with `||x_i(k) - x_i*|| <= gamma rho^k`.
pub fn certificate_gamma(cert: &Certificate, init: &InitialCondition) -> Result<f64> {
    let v0 = match init {
        InitialCondition::V0(v) => *v,
        InitialCondition::Errors(errs) => {
            let lmax = linalg::lambda_max(&cert.vars.p).max(linalg::lambda_max(&cert.vars.q));
            let v = lyapunov_value(&(&cert.vars.p / lmax), &(&cert.vars.q / lmax), errs);
            let nonzero = errs.iter().any(|e| linalg::max_abs(e) > 0.0);
            if nonzero && !(v > 0.0) {
                return Err(Error::NonpositiveV0(v));
            }
            v
        }
    };
    if v0 < 0.0 {
        return Err(Error::NonpositiveV0(v0));
    }
    Ok((cert.cond_t() * v0).sqrt())
}
