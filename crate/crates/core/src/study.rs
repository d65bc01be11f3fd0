//! Simulation check of certified rates on random quadratic instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::canonical::{builtin, FunctionClass, NetworkClass};
use crate::certifier::{bisect_rate, certificate_gamma, CertifierOptions, InitialCondition, RateBound};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::linalg::Mat;
use crate::network::{
    diging_initial_states, empirical_rate, generate_sequence, simulate, EmpiricalRate, QuadraticEnsemble, Scheme,
    Trajectory,
};
use crate::sweep::SimConfig;

/// Errors below this fraction of the initial error are treated as round-off
/// and excluded from rate fitting.
pub const FLOOR_FRACTION: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub n: usize,
    pub horizon: usize,
    pub kappa: f64,
    pub scheme: Scheme,
    pub seed: u64,
}

/// Complete graph for `B = 1`, an edge cycle when it fits the window,
/// random matchings otherwise.
pub fn scheme_for(n: usize, horizon: usize) -> Scheme {
    if horizon == 1 {
        Scheme::Complete
    } else if n - 1 <= horizon {
        Scheme::PeriodicEdgeCycle
    } else {
        Scheme::RandomMatchings
    }
}

pub fn instances(cfg: &SimConfig, seed: u64) -> Vec<Instance> {
    let mut out = Vec::new();
    for &n in &cfg.n {
        for &horizon in &cfg.horizon {
            for &kappa in &cfg.kappa {
                let seed = seed.wrapping_add(out.len() as u64);
                out.push(Instance { n, horizon, kappa, scheme: scheme_for(n, horizon), seed });
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct StudyResult {
    pub instance: Instance,
    pub sigma_measured: f64,
    pub alpha: f64,
    pub rho_hi: f64,
    pub rho_emp: EmpiricalRate,
    pub gamma: f64,
    pub steps: usize,
    /// First `k` from which `e(j) <= gamma rho_hi^j` for every later `j`.
    pub burn_in: usize,
    /// Largest `e(k) / (gamma rho_hi^k)` over the checked range.
    pub worst_ratio: f64,
    pub trajectory: Trajectory,
}

impl StudyResult {
    pub fn rate_ok(&self, slack: f64) -> bool {
        self.rho_emp.rho <= self.rho_hi + slack
    }
}

/// Index after the last violation of the envelope, ignoring the round-off floor.
pub fn envelope_burn_in(errors: &[f64], gamma: f64, rho: f64) -> (usize, f64) {
    let floor = FLOOR_FRACTION * errors.first().copied().unwrap_or(0.0);
    let mut burn_in = 0;
    let mut worst: f64 = 0.0;
    for (k, &e) in errors.iter().enumerate() {
        if e <= floor {
            break;
        }
        let env = gamma * rho.powi(k as i32);
        worst = worst.max(e / env);
        if e > env * (1.0 + 1e-9) {
            burn_in = k + 1;
        }
    }
    (burn_in, worst)
}

/// The prefix of an error sequence above the round-off floor.
pub fn above_floor(errors: &[f64]) -> &[f64] {
    let floor = FLOOR_FRACTION * errors.first().copied().unwrap_or(0.0);
    let end = errors.iter().position(|&e| !(e > floor)).unwrap_or(errors.len());
    &errors[..end]
}

fn best_alpha(
    inst: &Instance,
    fc: &FunctionClass,
    nc: &NetworkClass,
    cfg: &SimConfig,
    opts: &CertifierOptions,
) -> Result<(f64, RateBound)> {
    let mut best: Option<(f64, RateBound)> = None;
    for &f in &cfg.alpha_times_l {
        let alpha = f / fc.l;
        if let Some(b) = bisect_rate(&builtin("diging", alpha)?, fc, nc, opts)?.bound() {
            if best.as_ref().is_none_or(|(_, bb)| b.rho_hi < bb.rho_hi) {
                best = Some((alpha, b.clone()));
            }
        }
    }
    best.ok_or_else(|| Error::Domain(format!("no stepsize in the grid is certifiable for {inst:?}")))
}

pub fn run_instance(inst: &Instance, cfg: &SimConfig, m: f64, opts: &CertifierOptions) -> Result<StudyResult> {
    let fc = FunctionClass::new(m, m * inst.kappa)?;
    let seq = generate_sequence(inst.n, inst.horizon, inst.scheme, cfg.theta, inst.seed)?;
    let nc = NetworkClass::new(seq.sigma_measured, inst.horizon)?;
    let (alpha, bound) = best_alpha(inst, &fc, &nc, cfg, opts)?;
    let rho_hi = bound.rho_hi;

    let mut rng = ChaCha8Rng::seed_from_u64(inst.seed);
    let ens = QuadraticEnsemble::random(&mut rng, inst.n, cfg.d, fc.m, fc.l);
    let x0: Vec<Mat> = (0..inst.n).map(|_| Mat::from_fn(1, cfg.d, |_, _| rng.gen_range(-1.0..1.0))).collect();
    let states = diging_initial_states(&ens, &x0);
    let wanted = (cfg.decades * std::f64::consts::LN_10 / (1.0 - rho_hi)).ceil() as usize;
    let steps = wanted.clamp(100.max(inst.horizon), cfg.max_steps);
    let r = builtin("diging", alpha)?;
    let trajectory = simulate(&r, &seq, &ens, &states, steps)?;

    let errors = trajectory.lifted_initial_errors(inst.horizon)?;
    let gamma = certificate_gamma(&bound.certificate, &InitialCondition::Errors(errors))?;
    let (burn_in, worst_ratio) = envelope_burn_in(&trajectory.errors, gamma, rho_hi);
    let rho_emp = empirical_rate(above_floor(&trajectory.errors), cfg.tail_fraction)?;
    Ok(StudyResult {
        instance: *inst,
        sigma_measured: seq.sigma_measured,
        alpha,
        rho_hi,
        rho_emp,
        gamma,
        steps,
        burn_in,
        worst_ratio,
        trajectory,
    })
}

pub fn run_study(
    cfg: &SimConfig,
    m: f64,
    seed: u64,
    opts: &CertifierOptions,
    execution: Execution,
) -> Vec<Result<StudyResult>> {
    let insts = instances(cfg, seed);
    exec::map(&insts, execution, |inst| run_instance(inst, cfg, m, opts))
}

pub const SUMMARY_HEADER: [&str; 13] = [
    "n",
    "B",
    "kappa",
    "scheme",
    "sigma_measured",
    "alpha",
    "rho_hi",
    "rho_emp",
    "fit_residual",
    "gamma",
    "steps",
    "burn_in",
    "worst_ratio",
];

pub fn summary_record(r: &StudyResult) -> Vec<String> {
    vec![
        r.instance.n.to_string(),
        r.instance.horizon.to_string(),
        r.instance.kappa.to_string(),
        r.instance.scheme.to_string(),
        r.sigma_measured.to_string(),
        r.alpha.to_string(),
        r.rho_hi.to_string(),
        r.rho_emp.rho.to_string(),
        format!("{:e}", r.rho_emp.residual),
        r.gamma.to_string(),
        r.steps.to_string(),
        r.burn_in.to_string(),
        r.worst_ratio.to_string(),
    ]
}

pub fn write_summary_csv<W: std::io::Write>(results: &[StudyResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for r in results {
        w.write_record(summary_record(r))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scheme_rule() {
        assert_eq!(scheme_for(5, 1), Scheme::Complete);
        assert_eq!(scheme_for(3, 2), Scheme::PeriodicEdgeCycle);
        assert_eq!(scheme_for(5, 3), Scheme::RandomMatchings);
        assert_eq!(scheme_for(5, 4), Scheme::PeriodicEdgeCycle);
    }

    #[test]
    fn burn_in_detection() {
        let errs: Vec<f64> = (0..20).map(|k| 0.5f64.powi(k)).collect();
        assert_eq!(envelope_burn_in(&errs, 1.0, 0.5).0, 0);
        let mut bumped = errs.clone();
        bumped[4] = 1.0;
        assert_eq!(envelope_burn_in(&bumped, 1.0, 0.5).0, 5);
        let floored: Vec<f64> = (0..20).map(|k| if k < 5 { 0.5f64.powi(k) } else { 1e-300 }).collect();
        assert_eq!(above_floor(&floored).len(), 5);
        assert_eq!(envelope_burn_in(&floored, 1.0, 0.1).0, 5);
    }

    #[test]
    fn small_instance_is_enveloped() {
        let cfg = SimConfig { n: vec![3], kappa: vec![10.0], horizon: vec![2], ..Default::default() };
        let opts = CertifierOptions { bisect_tol: 1e-6, ..Default::default() };
        let res = run_study(&cfg, 1.0, 7, &opts, Execution::Sequential);
        let r = res[0].as_ref().unwrap();
        assert_eq!(r.burn_in, 0, "{:?}", summary_record(r));
        assert!(r.rate_ok(0.02));
        assert!(r.trajectory.max_drift() < 1e-9);
    }
}
