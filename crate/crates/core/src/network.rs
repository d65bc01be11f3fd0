//! Gossip sequences, quadratic ensembles and trajectory rollouts.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::canonical::{construct_fixed_point, FixedPointWitness, Realization};
use crate::error::{Error, Result};
use crate::linalg::{self, mat_to_rows, vstack, Mat};
use crate::random::random_spd;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    PeriodicEdgeCycle,
    RandomMatchings,
    Complete,
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "periodic_edge_cycle" => Ok(Scheme::PeriodicEdgeCycle),
            "random_matchings" => Ok(Scheme::RandomMatchings),
            "complete" => Ok(Scheme::Complete),
            other => Err(Error::Parse(format!("unknown gossip scheme '{other}'"))),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::PeriodicEdgeCycle => "periodic_edge_cycle",
            Scheme::RandomMatchings => "random_matchings",
            Scheme::Complete => "complete",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GossipSequence {
    pub n: usize,
    /// One period, repeated cyclically.
    pub matrices: Vec<Mat>,
    pub horizon: usize,
    pub sigma_measured: f64,
}

impl GossipSequence {
    pub fn period(&self) -> usize {
        self.matrices.len()
    }

    pub fn at(&self, k: usize) -> &Mat {
        &self.matrices[k % self.period()]
    }

    pub fn from_matrices(matrices: Vec<Mat>, horizon: usize) -> Result<Self> {
        let n = matrices.first().map(|m| m.nrows()).ok_or_else(|| Error::Domain("empty gossip sequence".into()))?;
        if matrices.iter().any(|m| m.shape() != (n, n)) {
            return Err(Error::InvalidDimensions("gossip matrices must all be n x n".into()));
        }
        if horizon == 0 {
            return Err(Error::Domain("connectivity horizon B must be >= 1".into()));
        }
        let (sigma_measured, _) = joint_spectral_gap(&matrices, horizon);
        Ok(GossipSequence { n, matrices, horizon, sigma_measured })
    }

    pub fn to_toml(&self) -> String {
        let file = GossipFile {
            n: self.n,
            horizon: self.horizon,
            sigma_measured: self.sigma_measured,
            matrices: self.matrices.iter().map(mat_to_rows).collect(),
        };
        toml::to_string(&file).expect("gossip sequence serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let f: GossipFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let mats = f
            .matrices
            .iter()
            .map(|rows| {
                if rows.len() != f.n || rows.iter().any(|r| r.len() != f.n) {
                    return Err(Error::Parse(format!("gossip matrix is not {0} x {0}", f.n)));
                }
                Ok(linalg::rows_to_mat(rows, f.n))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_matrices(mats, f.horizon)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GossipFile {
    n: usize,
    #[serde(rename = "B")]
    horizon: usize,
    sigma_measured: f64,
    matrices: Vec<Vec<Vec<f64>>>,
}

fn averaging(n: usize) -> Mat {
    Mat::from_element(n, n, 1.0 / n as f64)
}

fn disagreement_projector(n: usize) -> Mat {
    Mat::identity(n, n) - averaging(n)
}

/// `max_k ||(I - 11^T/n) W(k+B-1) ... W(k)||^(1/B)` over one period, with
/// the maximizing window start.
pub fn joint_spectral_gap(matrices: &[Mat], horizon: usize) -> (f64, usize) {
    let n = matrices[0].nrows();
    let proj = disagreement_projector(n);
    let period = matrices.len();
    let mut worst = (f64::NEG_INFINITY, 0);
    for start in 0..period {
        let mut prod = Mat::identity(n, n);
        for l in 0..horizon {
            prod = &matrices[(start + l) % period] * prod;
        }
        let norm = linalg::spectral_norm(&(&proj * prod)).powf(1.0 / horizon as f64);
        if norm > worst.0 {
            worst = (norm, start);
        }
    }
    worst
}

/// Lazy pairwise averaging on a set of disjoint edges.
fn edge_matrix(n: usize, edges: &[(usize, usize)], theta: f64) -> Mat {
    let mut w = Mat::identity(n, n);
    for &(i, j) in edges {
        w[(i, i)] = theta;
        w[(j, j)] = theta;
        w[(i, j)] = 1.0 - theta;
        w[(j, i)] = 1.0 - theta;
    }
    w
}

fn connected(n: usize, matrices: &[&Mat]) -> bool {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for w in matrices {
        for i in 0..n {
            for j in i + 1..n {
                if w[(i, j)] != 0.0 || w[(j, i)] != 0.0 {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a] = b;
                }
            }
        }
    }
    let root = find(&mut parent, 0);
    (0..n).all(|i| find(&mut parent, i) == root)
}

const MATCHING_ATTEMPTS: usize = 100_000;

pub fn generate_sequence(n: usize, horizon: usize, scheme: Scheme, theta: f64, seed: u64) -> Result<GossipSequence> {
    if n < 2 {
        return Err(Error::Domain(format!("need at least two agents, got {n}")));
    }
    if horizon == 0 {
        return Err(Error::Domain("connectivity horizon B must be >= 1".into()));
    }
    if !(0.5..1.0).contains(&theta) {
        return Err(Error::Domain(format!("laziness must lie in [0.5, 1), got {theta}")));
    }
    let matrices = match scheme {
        Scheme::Complete => vec![averaging(n)],
        Scheme::PeriodicEdgeCycle => {
            if horizon < n - 1 {
                return Err(Error::InfeasibleScheme(format!(
                    "an edge cycle over a spanning tree of {n} agents needs B >= {}, got {horizon}",
                    n - 1
                )));
            }
            (0..n - 1).map(|i| edge_matrix(n, &[(i, i + 1)], theta)).collect()
        }
        Scheme::RandomMatchings => {
            if horizon * (n / 2) < n - 1 {
                return Err(Error::InfeasibleScheme(format!(
                    "{horizon} matchings on {n} agents have at most {} edges; a spanning tree needs {}",
                    horizon * (n / 2),
                    n - 1
                )));
            }
            // One period of B matchings: every cyclic window is a rotation of
            // the same set, so a single connectivity check covers all windows.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut nodes: Vec<usize> = (0..n).collect();
            let mut found = None;
            for _ in 0..MATCHING_ATTEMPTS {
                let mats: Vec<Mat> = (0..horizon)
                    .map(|_| {
                        nodes.shuffle(&mut rng);
                        let edges: Vec<(usize, usize)> = nodes.chunks_exact(2).map(|p| (p[0], p[1])).collect();
                        edge_matrix(n, &edges, theta)
                    })
                    .collect();
                if connected(n, &mats.iter().collect::<Vec<_>>()) {
                    found = Some(mats);
                    break;
                }
            }
            found.ok_or_else(|| {
                Error::InfeasibleScheme(format!("no connected matching window found for n = {n}, B = {horizon}"))
            })?
        }
    };
    GossipSequence::from_matrices(matrices, horizon)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkReport {
    pub weight_balanced: bool,
    /// `||(I - 11^T/n) W|| <= 1` for every matrix.
    pub spectrum_ok: bool,
    /// Joint spectral gap below one.
    pub joint_ok: bool,
    pub sigma_measured: f64,
    pub worst_window: usize,
    /// Every window's union graph is connected (informational).
    pub windows_connected: bool,
}

impl NetworkReport {
    pub fn all_ok(&self) -> bool {
        self.weight_balanced && self.spectrum_ok && self.joint_ok
    }
}

pub fn verify_network(seq: &GossipSequence, horizon: usize) -> NetworkReport {
    let n = seq.n;
    let proj = disagreement_projector(n);
    let ones = Mat::from_element(n, 1, 1.0);
    let weight_balanced = seq.matrices.iter().all(|w| {
        linalg::max_abs(&(w * &ones - &ones)) <= 1e-12 && linalg::max_abs(&(w.transpose() * &ones - &ones)) <= 1e-12
    });
    let spectrum_ok = seq.matrices.iter().all(|w| linalg::spectral_norm(&(&proj * w)) <= 1.0 + 1e-12);
    let (sigma, worst) = joint_spectral_gap(&seq.matrices, horizon);
    let period = seq.period();
    let windows_connected = (0..period).all(|k| {
        let window: Vec<&Mat> = (0..horizon).map(|l| &seq.matrices[(k + l) % period]).collect();
        connected(n, &window)
    });
    NetworkReport {
        weight_balanced,
        spectrum_ok,
        joint_ok: sigma < 1.0,
        sigma_measured: sigma,
        worst_window: worst,
        windows_connected,
    }
}

/// `f_i(y) = (y - a_i)^T H_i (y - a_i) / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticEnsemble {
    pub hessians: Vec<Mat>,
    /// `d x 1` each.
    pub anchors: Vec<Mat>,
}

impl QuadraticEnsemble {
    pub fn random<R: Rng>(rng: &mut R, n: usize, d: usize, m: f64, l: f64) -> Self {
        let hessians = (0..n).map(|_| random_spd(rng, d, m, l)).collect();
        let anchors = (0..n).map(|_| Mat::from_fn(d, 1, |_, _| rng.gen_range(-1.0..1.0))).collect();
        QuadraticEnsemble { hessians, anchors }
    }

    pub fn identical(n: usize, h: Mat, a: Mat) -> Self {
        QuadraticEnsemble { hessians: vec![h; n], anchors: vec![a; n] }
    }

    pub fn n(&self) -> usize {
        self.hessians.len()
    }

    pub fn d(&self) -> usize {
        self.anchors[0].nrows()
    }

    /// `(sum H_i)^-1 sum H_i a_i`.
    pub fn optimizer(&self) -> Mat {
        let d = self.d();
        let mut h = Mat::zeros(d, d);
        let mut rhs = Mat::zeros(d, 1);
        for (hi, ai) in self.hessians.iter().zip(&self.anchors) {
            h += hi;
            rhs += hi * ai;
        }
        h.cholesky().expect("sum of positive definite Hessians").solve(&rhs)
    }

    /// Gradient of `f_i` at a row vector `y` (`1 x d`), as a row vector.
    pub fn gradient(&self, i: usize, y: &Mat) -> Mat {
        (&self.hessians[i] * (y.transpose() - &self.anchors[i])).transpose()
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub n: usize,
    pub d: usize,
    pub steps: usize,
    /// `x[k][i]`, `s x d`, for `k = 0..=K`.
    pub x: Vec<Vec<Mat>>,
    /// Outputs, inputs and mixed signals for `k = 0..K`.
    pub y: Vec<Vec<Mat>>,
    pub u: Vec<Vec<Mat>>,
    pub v: Vec<Vec<Mat>>,
    /// `max_i ||x_i(k) - x_i*||` for `k = 0..=K`.
    pub errors: Vec<f64>,
    /// `||y_i(k) - y*||` for `k = 0..K`.
    pub y_dist: Vec<Vec<f64>>,
    /// Largest invariant residual `|sum_j Fx x_j(k) + Fu u_j(k)|` per step.
    pub drift: Vec<f64>,
    pub fixed_point: FixedPointWitness,
    pub y_star: Mat,
}

impl Trajectory {
    pub fn max_drift(&self) -> f64 {
        self.drift.iter().cloned().fold(0.0, f64::max)
    }

    /// Per-agent lifted error states `[x(0); u(0..B-1); v(0..B-1)] - fixed point`,
    /// each `a x d`, matching the state map of the LMIs.
    pub fn lifted_initial_errors(&self, horizon: usize) -> Result<Vec<Mat>> {
        if self.steps + 1 < horizon {
            return Err(Error::Domain(format!("need at least {} steps to lift the initial state", horizon - 1)));
        }
        let d = self.d;
        Ok((0..self.n)
            .map(|i| {
                let fp = &self.fixed_point.agents[i];
                let mut blocks: Vec<Mat> = vec![&self.x[0][i] - &fp.x];
                blocks.extend((0..horizon - 1).map(|k| &self.u[k][i] - &fp.u));
                blocks.extend((0..horizon - 1).map(|k| &self.v[k][i] - &fp.v));
                vstack(&blocks.iter().collect::<Vec<_>>(), d)
            })
            .collect())
    }

    /// CSV with columns `k, e_k, y_dist_0, ..., y_dist_{n-1}`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["k".to_string(), "e_k".to_string()];
        header.extend((0..self.n).map(|i| format!("y_dist_{i}")));
        w.write_record(&header)?;
        for k in 0..self.steps {
            let mut row = vec![k.to_string(), format!("{:e}", self.errors[k])];
            row.extend(self.y_dist[k].iter().map(|v| format!("{v:e}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn invariant_residual(r: &Realization, xs: &[Mat], us: &[Mat]) -> f64 {
    if r.invariant_rows() == 0 {
        return 0.0;
    }
    let d = xs[0].ncols();
    let mut acc = Mat::zeros(r.invariant_rows(), d);
    for (x, u) in xs.iter().zip(us) {
        acc += &r.fx * x + &r.fu * u;
    }
    linalg::max_abs(&acc)
}

/// Initial states for the DIGing realization: `x_i(0)` given, `y_i(0)` and
/// the stored gradient both equal to `grad f_i(x_i(0))`.
pub fn diging_initial_states(ens: &QuadraticEnsemble, x0: &[Mat]) -> Vec<Mat> {
    x0.iter()
        .enumerate()
        .map(|(i, xi)| {
            let g = ens.gradient(i, xi);
            vstack(&[xi, &g, &g], xi.ncols())
        })
        .collect()
}

/// Rolls out `K` steps. Requires `Dzu = Dzv = 0` so the mixed signal is
/// explicit; a nonzero `Dyu` is resolved per agent.
pub fn simulate(
    r: &Realization,
    seq: &GossipSequence,
    ens: &QuadraticEnsemble,
    x0: &[Mat],
    steps: usize,
) -> Result<Trajectory> {
    r.validate()?;
    if linalg::max_abs(&r.dzu) != 0.0 || linalg::max_abs(&r.dzv) != 0.0 {
        return Err(Error::NotExplicit("communicated signal depends on the current input or mixed signal".into()));
    }
    let n = ens.n();
    let d = ens.d();
    if seq.n != n || x0.len() != n {
        return Err(Error::InvalidDimensions(format!(
            "{n} agents in the ensemble, {} in the network, {} initial states",
            seq.n,
            x0.len()
        )));
    }
    if x0.iter().any(|x| x.shape() != (r.s, d)) {
        return Err(Error::InvalidDimensions(format!("initial states must be {} x {d}", r.s)));
    }

    let y_star = ens.optimizer();
    let y_star_row = y_star.transpose();
    let grads: Vec<Vec<f64>> = (0..n).map(|i| ens.gradient(i, &y_star_row).iter().copied().collect()).collect();
    let fixed_point = construct_fixed_point(r, y_star.as_slice(), &grads)?;

    let dyu = r.dyu[(0, 0)];
    let solvers: Vec<Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>> =
        ens.hessians.iter().map(|h| (dyu != 0.0).then(|| (Mat::identity(d, d) - h * dyu).lu())).collect();

    let mut traj = Trajectory {
        n,
        d,
        steps,
        x: Vec::with_capacity(steps + 1),
        y: Vec::with_capacity(steps),
        u: Vec::with_capacity(steps),
        v: Vec::with_capacity(steps),
        errors: Vec::with_capacity(steps + 1),
        y_dist: Vec::with_capacity(steps),
        drift: Vec::with_capacity(steps),
        fixed_point,
        y_star: y_star_row.clone(),
    };
    let err = |xs: &[Mat], fp: &FixedPointWitness| -> f64 {
        xs.iter().zip(&fp.agents).map(|(x, a)| (x - &a.x).norm()).fold(0.0, f64::max)
    };

    let mut xs: Vec<Mat> = x0.to_vec();
    traj.errors.push(err(&xs, &traj.fixed_point));
    for k in 0..steps {
        let w = seq.at(k);
        let zs: Vec<Mat> = xs.iter().map(|x| &r.cz * x).collect();
        let vs: Vec<Mat> = (0..n)
            .map(|i| {
                let mut acc = Mat::zeros(r.c, d);
                for (j, z) in zs.iter().enumerate() {
                    let wij = w[(i, j)];
                    if wij != 0.0 {
                        acc += z * wij;
                    }
                }
                acc
            })
            .collect();
        let mut ys = Vec::with_capacity(n);
        let mut us = Vec::with_capacity(n);
        for i in 0..n {
            let base = &r.cy * &xs[i] + &r.dyv * &vs[i];
            let y = match &solvers[i] {
                None => base,
                Some(lu) => {
                    let rhs = base.transpose() - &ens.hessians[i] * &ens.anchors[i] * dyu;
                    lu.solve(&rhs).ok_or_else(|| Error::NotExplicit("output equation is singular".into()))?.transpose()
                }
            };
            us.push(ens.gradient(i, &y));
            ys.push(y);
        }
        let drift = invariant_residual(r, &xs, &us);
        if k == 0 && drift > 1e-9 * (1.0 + xs.iter().map(linalg::max_abs).fold(0.0, f64::max)) {
            return Err(Error::InvariantViolated(drift));
        }
        traj.drift.push(drift);
        traj.y_dist.push(ys.iter().map(|y| (y - &y_star_row).norm()).collect());
        let next: Vec<Mat> = (0..n).map(|i| &r.a * &xs[i] + &r.bu * &us[i] + &r.bv * &vs[i]).collect();
        traj.x.push(std::mem::replace(&mut xs, next));
        traj.y.push(ys);
        traj.u.push(us);
        traj.v.push(vs);
        traj.errors.push(err(&xs, &traj.fixed_point));
    }
    traj.x.push(xs);
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalRate {
    pub rho: f64,
    /// Root-mean-square residual of the log-linear fit.
    pub residual: f64,
    pub first: usize,
    pub last: usize,
}

/// Least-squares slope of `ln e(k)` over the last `tail_fraction` of the
/// sequence, exponentiated.
pub fn empirical_rate(errors: &[f64], tail_fraction: f64) -> Result<EmpiricalRate> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::Domain(format!("tail fraction must lie in (0, 1], got {tail_fraction}")));
    }
    let len = errors.len();
    let count = ((len as f64) * tail_fraction).floor() as usize;
    if len < 50 || count < 2 {
        return Err(Error::InsufficientDecay(format!("need at least 50 iterations, got {len}")));
    }
    let first = len - count;
    if let Some(k) = (first..len).find(|&k| !(errors[k] > 0.0 && errors[k].is_finite())) {
        return Err(Error::InsufficientDecay(format!("error is zero or non-finite at k = {k}")));
    }
    let ks: Vec<f64> = (first..len).map(|k| k as f64).collect();
    let ls: Vec<f64> = (first..len).map(|k| errors[k].ln()).collect();
    let mk = ks.iter().sum::<f64>() / count as f64;
    let ml = ls.iter().sum::<f64>() / count as f64;
    let sxy: f64 = ks.iter().zip(&ls).map(|(k, l)| (k - mk) * (l - ml)).sum();
    let sxx: f64 = ks.iter().map(|k| (k - mk) * (k - mk)).sum();
    let slope = sxy / sxx;
    let icpt = ml - slope * mk;
    let sse: f64 = ks.iter().zip(&ls).map(|(k, l)| (l - icpt - slope * k).powi(2)).sum();
    Ok(EmpiricalRate { rho: slope.exp(), residual: (sse / count as f64).sqrt(), first, last: len - 1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canonical::diging_realization;

    #[test]
    fn complete_scheme() {
        let seq = generate_sequence(4, 3, Scheme::Complete, 0.5, 0).unwrap();
        assert_eq!(seq.period(), 1);
        assert!(seq.sigma_measured.abs() < 1e-12);
        assert!((&seq.matrices[0] - Mat::from_element(4, 4, 0.25)).norm() < 1e-15);
    }

    #[test]
    fn three_node_edge_cycle_gap() {
        let seq = generate_sequence(3, 2, Scheme::PeriodicEdgeCycle, 0.5, 0).unwrap();
        assert!((seq.sigma_measured - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(verify_network(&seq, 2).all_ok());
    }

    #[test]
    fn edge_cycle_needs_long_horizon() {
        assert!(matches!(generate_sequence(4, 2, Scheme::PeriodicEdgeCycle, 0.5, 0), Err(Error::InfeasibleScheme(_))));
        assert!(matches!(generate_sequence(5, 1, Scheme::RandomMatchings, 0.5, 0), Err(Error::InfeasibleScheme(_))));
    }

    #[test]
    fn identity_sequence_fails_joint_property() {
        let seq = GossipSequence::from_matrices(vec![Mat::identity(3, 3)], 2).unwrap();
        let rep = verify_network(&seq, 2);
        assert!(rep.weight_balanced && rep.spectrum_ok);
        assert!(!rep.joint_ok);
        assert!((rep.sigma_measured - 1.0).abs() < 1e-12);
    }

    #[test]
    fn injected_row_sum_fault() {
        let mut seq = generate_sequence(4, 3, Scheme::PeriodicEdgeCycle, 0.6, 0).unwrap();
        seq.matrices[1][(0, 0)] += 1e-3;
        assert!(!verify_network(&seq, 3).weight_balanced);
    }

    #[test]
    fn disconnected_cyclic_permutation() {
        // 3-cycle on {0, 1, 2}, node 3 alone.
        let mut w = Mat::zeros(4, 4);
        w[(1, 0)] = 1.0;
        w[(2, 1)] = 1.0;
        w[(0, 2)] = 1.0;
        w[(3, 3)] = 1.0;
        let proj = disagreement_projector(4);
        assert!((linalg::spectral_norm(&(&proj * &w)) - 1.0).abs() < 1e-12);
        let seq = GossipSequence::from_matrices(vec![w], 3).unwrap();
        let rep = verify_network(&seq, 3);
        assert!(rep.weight_balanced && rep.spectrum_ok);
        assert!(!rep.joint_ok && rep.sigma_measured >= 1.0 - 1e-12);
        assert!(!rep.windows_connected);
    }

    #[test]
    fn generators_are_sound() {
        for n in 2..=7 {
            for b in 1..=4 {
                for (scheme, seed) in [
                    (Scheme::Complete, 0),
                    (Scheme::PeriodicEdgeCycle, 0),
                    (Scheme::RandomMatchings, 3),
                    (Scheme::RandomMatchings, 4),
                ] {
                    let Ok(seq) = generate_sequence(n, b, scheme, 0.5, seed) else { continue };
                    let rep = verify_network(&seq, b);
                    assert!(rep.all_ok() && rep.windows_connected, "n={n} B={b} {scheme:?}");
                    assert!(rep.sigma_measured < 1.0);
                    for w in &seq.matrices {
                        assert!((w - w.transpose()).norm() == 0.0);
                        if scheme != Scheme::Complete {
                            assert!(w.diagonal().iter().all(|&x| x >= 0.5));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn matchings_are_deterministic_in_seed() {
        let a = generate_sequence(6, 3, Scheme::RandomMatchings, 0.5, 42).unwrap();
        let b = generate_sequence(6, 3, Scheme::RandomMatchings, 0.5, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gossip_round_trip() {
        let seq = generate_sequence(5, 3, Scheme::RandomMatchings, 0.7, 1).unwrap();
        assert_eq!(GossipSequence::from_toml(&seq.to_toml()).unwrap(), seq);
    }

    #[test]
    fn optimizer_zeroes_total_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let ens = QuadraticEnsemble::random(&mut rng, 5, 3, 1.0, 50.0);
            let y = ens.optimizer().transpose();
            let mut g = Mat::zeros(1, 3);
            for i in 0..5 {
                g += ens.gradient(i, &y);
            }
            assert!(g.norm() < 1e-10);
        }
    }

    #[test]
    fn start_at_fixed_point_stays() {
        let r = diging_realization(0.05).unwrap();
        let seq = generate_sequence(3, 1, Scheme::Complete, 0.5, 0).unwrap();
        let h = Mat::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 3.0]);
        let a = Mat::from_row_slice(2, 1, &[0.3, -0.7]);
        let ens = QuadraticEnsemble::identical(3, h, a);
        let ystar = ens.optimizer().transpose();
        let x0 = diging_initial_states(&ens, &vec![ystar; 3]);
        let traj = simulate(&r, &seq, &ens, &x0, 30).unwrap();
        assert!(traj.errors.iter().all(|&e| e < 1e-14), "{:?}", &traj.errors[..3]);
    }

    #[test]
    fn identical_agents_stay_identical() {
        let r = diging_realization(0.05).unwrap();
        let seq = generate_sequence(4, 3, Scheme::PeriodicEdgeCycle, 0.5, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = random_spd(&mut rng, 2, 1.0, 10.0);
        let ens = QuadraticEnsemble::identical(4, h, Mat::from_row_slice(2, 1, &[1.0, 2.0]));
        let start = Mat::from_row_slice(1, 2, &[-1.0, 0.5]);
        let x0 = diging_initial_states(&ens, &vec![start; 4]);
        let traj = simulate(&r, &seq, &ens, &x0, 200).unwrap();
        for xs in &traj.x {
            for x in xs {
                assert!((x - &xs[0]).norm() <= 1e-12);
            }
        }
    }

    #[test]
    fn invariant_preserved_and_checked() {
        let r = diging_realization(0.02).unwrap();
        let seq = generate_sequence(5, 2, Scheme::RandomMatchings, 0.5, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ens = QuadraticEnsemble::random(&mut rng, 5, 2, 1.0, 10.0);
        let starts: Vec<Mat> = (0..5).map(|_| Mat::from_fn(1, 2, |_, _| rng.gen_range(-1.0..1.0))).collect();
        let mut x0 = diging_initial_states(&ens, &starts);
        let traj = simulate(&r, &seq, &ens, &x0, 500).unwrap();
        assert!(traj.max_drift() < 1e-8, "{:?}", &traj.drift[..5]);
        assert!(*traj.errors.last().unwrap() < traj.errors[0]);
        x0[0][(1, 0)] += 0.1;
        assert!(matches!(simulate(&r, &seq, &ens, &x0, 5), Err(Error::InvariantViolated(_))));
    }

    #[test]
    fn zero_stepsize_does_not_converge() {
        let mut r = diging_realization(1.0).unwrap();
        r.a[(0, 1)] = 0.0;
        r.cy[(0, 1)] = 0.0;
        let seq = generate_sequence(3, 2, Scheme::PeriodicEdgeCycle, 0.5, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ens = QuadraticEnsemble::random(&mut rng, 3, 2, 1.0, 10.0);
        let starts: Vec<Mat> = (0..3).map(|k| Mat::from_row_slice(1, 2, &[k as f64, 0.0])).collect();
        let x0 = diging_initial_states(&ens, &starts);
        let traj = simulate(&r, &seq, &ens, &x0, 400).unwrap();
        let last = traj.y_dist.last().unwrap();
        assert!(last.iter().all(|&dist| dist > 1e-3));
        // Pure averaging: all x_i converge to the initial mean.
        let xs = traj.x.last().unwrap();
        assert!((xs[0].row(0) - xs[2].row(0)).norm() < 1e-8);
    }

    #[test]
    fn implicit_communication_rejected() {
        let mut r = diging_realization(0.1).unwrap();
        r.dzu[(0, 0)] = 1.0;
        let seq = generate_sequence(2, 1, Scheme::Complete, 0.5, 0).unwrap();
        let ens = QuadraticEnsemble::identical(2, Mat::identity(1, 1), Mat::zeros(1, 1));
        let x0 = vec![Mat::zeros(3, 1); 2];
        assert!(matches!(simulate(&r, &seq, &ens, &x0, 1), Err(Error::NotExplicit(_))));
    }

    #[test]
    fn geometric_rate_recovered() {
        let e: Vec<f64> = (0..400).map(|k| 0.9f64.powi(k)).collect();
        let fit = empirical_rate(&e, 0.5).unwrap();
        assert!((fit.rho - 0.9).abs() < 1e-6);
        let e: Vec<f64> = (0..400).map(|k| 3.0 * 0.9f64.powi(k) * (2.0 + (k as f64).sin())).collect();
        assert!((empirical_rate(&e, 0.5).unwrap().rho - 0.9).abs() < 0.01);
    }

    #[test]
    fn rate_fit_rejects_underflow_and_short_input() {
        let mut e: Vec<f64> = (0..100).map(|k| 0.5f64.powi(k)).collect();
        e[90] = 0.0;
        assert!(matches!(empirical_rate(&e, 0.5), Err(Error::InsufficientDecay(_))));
        assert!(matches!(empirical_rate(&e[..20], 0.5), Err(Error::InsufficientDecay(_))));
    }

    #[test]
    fn trajectory_csv_header() {
        let r = diging_realization(0.05).unwrap();
        let seq = generate_sequence(2, 1, Scheme::Complete, 0.5, 0).unwrap();
        let ens = QuadraticEnsemble::identical(2, Mat::identity(2, 2), Mat::zeros(2, 1));
        let x0 = diging_initial_states(&ens, &vec![Mat::from_row_slice(1, 2, &[1.0, 1.0]); 2]);
        let traj = simulate(&r, &seq, &ens, &x0, 3).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("k,e_k,y_dist_0,y_dist_1\n"));
        assert_eq!(text.lines().count(), 4);
    }
}
