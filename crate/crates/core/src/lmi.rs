//! Coupled consensus / disagreement LMIs as one joint feasibility program.
//!
//! Decision variables: `P, Q` (symmetric `a x a`), `R` (`c x c`), `S(l)`
//! (`2c x 2c`) and scalars `lambda(l)` for `l < B`. The consensus block is
//! projected onto `Psi`; the disagreement block lives on the full basis.
//! Both blocks are linear in the variables and share `lambda`.

use serde::{Deserialize, Serialize};

use crate::basis::{self, BasisMaps, PSI_RANGE_NOTE};
use crate::canonical::{FunctionClass, NetworkClass, Realization, RANK_TOL};
use crate::error::{Error, Result};
use crate::linalg::{self, kron, vstack, Mat};
use crate::sdp::SdpData;

/// Default lower bound on `P` and `Q` in returned certificates, relative to
/// the largest entry of `G`.
pub const DEFAULT_EPS_PD: f64 = 1e-6;

/// Lower bound on `P` and `Q` inside the trace-normalized solver program.
/// The LMIs are homogeneous, so any positive value is equivalent up to
/// rescaling; certificates are rescaled to meet `eps_pd` afterwards.
pub const SOLVER_EPS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierConstants {
    pub m0: Mat,
    pub m1: Mat,
    pub m2: Mat,
}

pub fn build_multipliers(m: f64, l: f64, sigma: f64, horizon: usize) -> MultiplierConstants {
    MultiplierConstants {
        m0: Mat::from_row_slice(2, 2, &[-2.0 * m * l, l + m, l + m, -2.0]),
        m1: Mat::from_row_slice(2, 2, &[sigma.powi(2 * horizon as i32), 0.0, 0.0, -1.0]),
        m2: Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]),
    }
}

/// Whether the sector multipliers are shared between the two blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LambdaCoupling {
    #[default]
    Shared,
    /// Diagnostics only: separate multipliers per block. Not covered by the
    /// convergence theorem; used to measure the cost of the coupling.
    Decoupled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmiVariables {
    pub p: Mat,
    pub q: Mat,
    pub r: Mat,
    pub s: Vec<Mat>,
    /// Multipliers of the consensus block (and of both blocks when shared).
    pub lambda: Vec<f64>,
    /// Disagreement-block multipliers in decoupled mode.
    pub lambda_y: Option<Vec<f64>>,
}

impl LmiVariables {
    pub fn zeros(a: usize, c: usize, horizon: usize) -> Self {
        LmiVariables {
            p: Mat::zeros(a, a),
            q: Mat::zeros(a, a),
            r: Mat::zeros(c, c),
            s: vec![Mat::zeros(2 * c, 2 * c); horizon],
            lambda: vec![0.0; horizon],
            lambda_y: None,
        }
    }

    pub fn disagreement_lambda(&self) -> &[f64] {
        self.lambda_y.as_deref().unwrap_or(&self.lambda)
    }

    /// Smallest eigenvalue over `P` and `Q`.
    pub fn lambda_min_pq(&self) -> f64 {
        linalg::lambda_min(&self.p).min(linalg::lambda_min(&self.q))
    }

    pub fn scaled(&self, k: f64) -> Self {
        LmiVariables {
            p: &self.p * k,
            q: &self.q * k,
            r: &self.r * k,
            s: self.s.iter().map(|m| m * k).collect(),
            lambda: self.lambda.iter().map(|v| v * k).collect(),
            lambda_y: self.lambda_y.as_ref().map(|l| l.iter().map(|v| v * k).collect()),
        }
    }
}

/// Sector-constraint forms `sum_l lambda(l) [y(l); u(l)]^T M0 [y(l); u(l)]`.
#[derive(Debug, Clone)]
struct SectorTerms {
    forms: Vec<Mat>,
}

impl SectorTerms {
    fn new(maps: &BasisMaps, m0: &Mat) -> Self {
        let b = maps.b();
        let forms = (0..maps.horizon)
            .map(|l| {
                let e = vstack(&[&maps.ym[l], &maps.um[l]], b);
                e.transpose() * m0 * e
            })
            .collect();
        SectorTerms { forms }
    }

    fn apply(&self, lambda: &[f64], out: &mut Mat) {
        for (form, lam) in self.forms.iter().zip(lambda) {
            *out += form * *lam;
        }
    }
}

/// `(P, lambda) -> X`, a symmetric `p x p` matrix.
#[derive(Debug, Clone)]
pub struct ConsensusMap {
    pub psi: Mat,
    pub xi: Mat,
    pub xi_plus: Mat,
    pub rho: f64,
    sector: SectorTerms,
}

impl ConsensusMap {
    pub fn new(maps: &BasisMaps, psi: Mat, mult: &MultiplierConstants, rho: f64) -> Self {
        let (xi, xi_plus) = maps.state_maps();
        ConsensusMap { psi, xi, xi_plus, rho, sector: SectorTerms::new(maps, &mult.m0) }
    }

    pub fn dim(&self) -> usize {
        self.psi.ncols()
    }

    pub fn apply(&self, p: &Mat, lambda: &[f64]) -> Mat {
        let mut inner =
            self.xi_plus.transpose() * p * &self.xi_plus - (self.xi.transpose() * p * &self.xi) * (self.rho * self.rho);
        self.sector.apply(lambda, &mut inner);
        linalg::symmetrize(&(self.psi.transpose() * inner * &self.psi))
    }
}

/// `(Q, R, S, lambda) -> Y`, a symmetric `b x b` matrix.
#[derive(Debug, Clone)]
pub struct DisagreementMap {
    pub xi: Mat,
    pub xi_plus: Mat,
    pub rho: f64,
    sector: SectorTerms,
    /// `[w(0); w(B)]`
    joint: Mat,
    /// `[z(l); w(l); v(l); w(l+1)]` per `l`.
    gossip: Vec<Mat>,
    m1: Mat,
    m2: Mat,
}

impl DisagreementMap {
    pub fn new(maps: &BasisMaps, mult: &MultiplierConstants, rho: f64) -> Self {
        let b = maps.b();
        let (xi, xi_plus) = maps.state_maps();
        let joint = vstack(&[&maps.wm[0], &maps.wm[maps.horizon]], b);
        let gossip =
            (0..maps.horizon).map(|l| vstack(&[&maps.zm[l], &maps.wm[l], &maps.vm[l], &maps.wm[l + 1]], b)).collect();
        DisagreementMap {
            xi,
            xi_plus,
            rho,
            sector: SectorTerms::new(maps, &mult.m0),
            joint,
            gossip,
            m1: mult.m1.clone(),
            m2: mult.m2.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.xi.ncols()
    }

    pub fn apply(&self, q: &Mat, r: &Mat, s: &[Mat], lambda: &[f64]) -> Mat {
        let mut y =
            self.xi_plus.transpose() * q * &self.xi_plus - (self.xi.transpose() * q * &self.xi) * (self.rho * self.rho);
        self.sector.apply(lambda, &mut y);
        y += self.joint.transpose() * kron(&self.m1, r) * &self.joint;
        for (e, sl) in self.gossip.iter().zip(s) {
            y += e.transpose() * kron(&self.m2, sl) * e;
        }
        linalg::symmetrize(&y)
    }
}

/// Parameters recorded alongside a program and its certificates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramMeta {
    pub rho: f64,
    pub m: f64,
    pub l: f64,
    pub sigma: f64,
    pub horizon: usize,
    pub psi_ranges: String,
    pub coupling: LambdaCoupling,
}

#[derive(Debug, Clone)]
pub struct ConicProgram {
    pub consensus: ConsensusMap,
    pub disagreement: DisagreementMap,
    pub a: usize,
    pub c: usize,
    pub horizon: usize,
    /// Effective lower bound `P, Q >= eps I` for certificates.
    pub eps_pd: f64,
    /// Lower bound used in the trace-normalized solver program.
    pub solver_eps: f64,
    /// Constraint blocks are divided by this before solving.
    pub block_scale: f64,
    /// Solver multipliers are `lambda * lambda_scale`.
    pub lambda_scale: f64,
    pub meta: ProgramMeta,
}

fn sym_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Upper-triangle coordinates in the order used for the solver vector.
fn sym_coords(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (i..n).map(move |j| (i, j)))
}

fn sym_basis(n: usize, i: usize, j: usize) -> Mat {
    let mut e = Mat::zeros(n, n);
    e[(i, j)] = 1.0;
    e[(j, i)] = 1.0;
    e
}

fn read_sym(y: &[f64], n: usize) -> Mat {
    let mut m = Mat::zeros(n, n);
    for (k, (i, j)) in sym_coords(n).enumerate() {
        m[(i, j)] = y[k];
        m[(j, i)] = y[k];
    }
    m
}

/// Which variable a solver coordinate belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarKind {
    P(usize, usize),
    Q(usize, usize),
    R(usize, usize),
    S(usize, usize, usize),
    Lambda(usize),
    LambdaY(usize),
}

impl ConicProgram {
    pub fn num_variables(&self) -> usize {
        let decoupled = usize::from(self.meta.coupling == LambdaCoupling::Decoupled);
        2 * sym_len(self.a) + sym_len(self.c) + self.horizon * sym_len(2 * self.c) + self.horizon * (1 + decoupled)
    }

    fn layout(&self) -> Vec<VarKind> {
        let mut out = Vec::with_capacity(self.num_variables());
        out.extend(sym_coords(self.a).map(|(i, j)| VarKind::P(i, j)));
        out.extend(sym_coords(self.a).map(|(i, j)| VarKind::Q(i, j)));
        out.extend(sym_coords(self.c).map(|(i, j)| VarKind::R(i, j)));
        for l in 0..self.horizon {
            out.extend(sym_coords(2 * self.c).map(|(i, j)| VarKind::S(l, i, j)));
        }
        out.extend((0..self.horizon).map(VarKind::Lambda));
        if self.meta.coupling == LambdaCoupling::Decoupled {
            out.extend((0..self.horizon).map(VarKind::LambdaY));
        }
        out
    }

    pub fn consensus_block(&self, v: &LmiVariables) -> Mat {
        self.consensus.apply(&v.p, &v.lambda)
    }

    pub fn disagreement_block(&self, v: &LmiVariables) -> Mat {
        self.disagreement.apply(&v.q, &v.r, &v.s, v.disagreement_lambda())
    }

    /// Solver coordinates (excluding the margin variable) back to variables.
    pub fn variables_from_vector(&self, y: &[f64]) -> LmiVariables {
        let (a, c, bh) = (self.a, self.c, self.horizon);
        let mut off = 0;
        let mut take = |len: usize| {
            let slice = &y[off..off + len];
            off += len;
            slice
        };
        let p = read_sym(take(sym_len(a)), a);
        let q = read_sym(take(sym_len(a)), a);
        let r = read_sym(take(sym_len(c)), c);
        let s = (0..bh).map(|_| read_sym(take(sym_len(2 * c)), 2 * c)).collect();
        let lambda = take(bh).iter().map(|v| v / self.lambda_scale).collect();
        let lambda_y = (self.meta.coupling == LambdaCoupling::Decoupled)
            .then(|| take(bh).iter().map(|v| v / self.lambda_scale).collect());
        LmiVariables { p, q, r, s, lambda, lambda_y }
    }

    /// Lowers the program to solver data with an extra margin variable `t`:
    ///
    /// minimize `t` subject to `X <= t I`, `Y <= t I`, `P, Q >= eps I`,
    /// `R, S(l) >= 0`, `lambda >= 0` and total trace at most one.
    ///
    /// The margin variable is the last coordinate; the program is feasible
    /// iff the optimal margin is nonpositive.
    pub fn to_sdp(&self) -> SdpData {
        let (a, c, bh) = (self.a, self.c, self.horizon);
        let p_dim = self.consensus.dim();
        let b_dim = self.disagreement.dim();
        let mut block_dims = vec![p_dim, b_dim, a, a, c];
        block_dims.extend(std::iter::repeat_n(2 * c, bh));
        let lam_block0 = block_dims.len();
        let n_lambda = bh * if self.meta.coupling == LambdaCoupling::Decoupled { 2 } else { 1 };
        block_dims.extend(std::iter::repeat_n(1, n_lambda));
        let norm_block = block_dims.len();
        block_dims.push(1);

        let mut cmat: Vec<Mat> = block_dims.iter().map(|&n| Mat::zeros(n, n)).collect();
        cmat[2] = -Mat::identity(a, a) * self.solver_eps;
        cmat[3] = -Mat::identity(a, a) * self.solver_eps;
        cmat[norm_block] = Mat::from_element(1, 1, 1.0);

        let zero_a = Mat::zeros(a, a);
        let zero_c = Mat::zeros(c, c);
        let zero_s: Vec<Mat> = vec![Mat::zeros(2 * c, 2 * c); bh];
        let zero_l = vec![0.0; bh];
        let unit = |k: usize| {
            let mut v = vec![0.0; bh];
            v[k] = 1.0 / self.lambda_scale;
            v
        };
        let inv_scale = 1.0 / self.block_scale;
        let one = Mat::from_element(1, 1, 1.0);

        let mut coeffs: Vec<Vec<(usize, Mat)>> = Vec::with_capacity(self.num_variables() + 1);
        for kind in self.layout() {
            let mut entry: Vec<(usize, Mat)> = Vec::new();
            let mut push_nonzero = |blk: usize, m: Mat| {
                if linalg::max_abs(&m) > 0.0 {
                    entry.push((blk, m));
                }
            };
            match kind {
                VarKind::P(i, j) => {
                    let e = sym_basis(a, i, j);
                    push_nonzero(0, self.consensus.apply(&e, &zero_l) * inv_scale);
                    push_nonzero(2, -e);
                    if i == j {
                        push_nonzero(norm_block, one.clone());
                    }
                }
                VarKind::Q(i, j) => {
                    let e = sym_basis(a, i, j);
                    push_nonzero(1, self.disagreement.apply(&e, &zero_c, &zero_s, &zero_l) * inv_scale);
                    push_nonzero(3, -e);
                    if i == j {
                        push_nonzero(norm_block, one.clone());
                    }
                }
                VarKind::R(i, j) => {
                    let e = sym_basis(c, i, j);
                    push_nonzero(1, self.disagreement.apply(&zero_a, &e, &zero_s, &zero_l) * inv_scale);
                    push_nonzero(4, -e);
                    if i == j {
                        push_nonzero(norm_block, one.clone());
                    }
                }
                VarKind::S(l, i, j) => {
                    let e = sym_basis(2 * c, i, j);
                    let mut s = zero_s.clone();
                    s[l] = e.clone();
                    push_nonzero(1, self.disagreement.apply(&zero_a, &zero_c, &s, &zero_l) * inv_scale);
                    push_nonzero(5 + l, -e);
                    if i == j {
                        push_nonzero(norm_block, one.clone());
                    }
                }
                VarKind::Lambda(l) => {
                    push_nonzero(0, self.consensus.apply(&zero_a, &unit(l)) * inv_scale);
                    if self.meta.coupling == LambdaCoupling::Shared {
                        push_nonzero(1, self.disagreement.apply(&zero_a, &zero_c, &zero_s, &unit(l)) * inv_scale);
                    }
                    push_nonzero(lam_block0 + l, -one.clone());
                    push_nonzero(norm_block, one.clone());
                }
                VarKind::LambdaY(l) => {
                    push_nonzero(1, self.disagreement.apply(&zero_a, &zero_c, &zero_s, &unit(l)) * inv_scale);
                    push_nonzero(lam_block0 + bh + l, -one.clone());
                    push_nonzero(norm_block, one.clone());
                }
            }
            coeffs.push(entry);
        }
        // Margin variable: X - tI <= 0, Y - tI <= 0.
        coeffs.push(vec![(0, -Mat::identity(p_dim, p_dim)), (1, -Mat::identity(b_dim, b_dim))]);

        let mut b = vec![0.0; coeffs.len()];
        *b.last_mut().unwrap() = -1.0;
        SdpData { block_dims, c: cmat, a: coeffs, b }
    }

    /// A strictly feasible solver point: every cone variable at a multiple
    /// of the identity using half the trace budget, and a margin large
    /// enough to dominate both blocks.
    pub fn interior_point(&self) -> Vec<f64> {
        let (a, c, bh) = (self.a, self.c, self.horizon);
        let n_lambda = bh * if self.meta.coupling == LambdaCoupling::Decoupled { 2 } else { 1 };
        let trace_units = (2 * a + c + 2 * c * bh + n_lambda) as f64;
        let theta = 0.5 / trace_units;
        let mut y = Vec::with_capacity(self.num_variables() + 1);
        for kind in self.layout() {
            y.push(match kind {
                VarKind::P(i, j) | VarKind::Q(i, j) | VarKind::R(i, j) | VarKind::S(_, i, j) => {
                    if i == j {
                        theta
                    } else {
                        0.0
                    }
                }
                VarKind::Lambda(_) | VarKind::LambdaY(_) => theta,
            });
        }
        let vars = self.variables_from_vector(&y);
        let x = self.consensus_block(&vars) / self.block_scale;
        let yb = self.disagreement_block(&vars) / self.block_scale;
        let t = linalg::lambda_max(&x).max(linalg::lambda_max(&yb)).max(0.0) + 1.0;
        y.push(t);
        y
    }
}

/// Options for assembling the joint program.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssemblyOptions {
    pub eps_pd: f64,
    pub coupling: LambdaCoupling,
    pub psi_tol: f64,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        AssemblyOptions { eps_pd: DEFAULT_EPS_PD, coupling: LambdaCoupling::Shared, psi_tol: RANK_TOL }
    }
}

pub fn assemble_feasibility(
    r: &Realization,
    fc: &FunctionClass,
    nc: &NetworkClass,
    rho: f64,
    opts: &AssemblyOptions,
) -> Result<ConicProgram> {
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(Error::Domain(format!("rate must be nonnegative, got {rho}")));
    }
    let maps = basis::build_basis_maps(r, nc.horizon)?;
    let psi = basis::build_psi(r, &maps, opts.psi_tol)?;
    let mult = build_multipliers(fc.m, fc.l, nc.sigma, nc.horizon);
    let g = r.g();
    Ok(ConicProgram {
        consensus: ConsensusMap::new(&maps, psi, &mult, rho),
        disagreement: DisagreementMap::new(&maps, &mult, rho),
        a: maps.a(),
        c: r.c,
        horizon: nc.horizon,
        eps_pd: opts.eps_pd * linalg::max_abs(&g).max(1.0),
        solver_eps: SOLVER_EPS,
        block_scale: linalg::inf_norm(&g).max(1.0),
        lambda_scale: linalg::max_abs(&mult.m0).max(1.0),
        meta: ProgramMeta {
            rho,
            m: fc.m,
            l: fc.l,
            sigma: nc.sigma,
            horizon: nc.horizon,
            psi_ranges: PSI_RANGE_NOTE.to_string(),
            coupling: opts.coupling,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canonical::diging_realization;
    use crate::random::random_symmetric;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn program(alpha: f64, sigma: f64, horizon: usize, rho: f64) -> ConicProgram {
        let r = diging_realization(alpha).unwrap();
        let fc = FunctionClass::new(1.0, 10.0).unwrap();
        let nc = NetworkClass::new(sigma, horizon).unwrap();
        assemble_feasibility(&r, &fc, &nc, rho, &AssemblyOptions::default()).unwrap()
    }

    fn random_vars<R: Rng>(rng: &mut R, p: &ConicProgram) -> LmiVariables {
        LmiVariables {
            p: random_symmetric(rng, p.a),
            q: random_symmetric(rng, p.a),
            r: random_symmetric(rng, p.c),
            s: (0..p.horizon).map(|_| random_symmetric(rng, 2 * p.c)).collect(),
            lambda: (0..p.horizon).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            lambda_y: None,
        }
    }

    #[test]
    fn multiplier_constants() {
        let mc = build_multipliers(1.0, 10.0, 0.5, 2);
        assert_eq!(mc.m0, Mat::from_row_slice(2, 2, &[-20.0, 11.0, 11.0, -2.0]));
        assert_eq!(mc.m1, Mat::from_row_slice(2, 2, &[0.0625, 0.0, 0.0, -1.0]));
        assert_eq!(mc.m2, Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]));
        for bh in 1..4 {
            assert_eq!(build_multipliers(1.0, 10.0, 0.0, bh).m1[(0, 0)], 0.0);
        }
    }

    #[test]
    fn zero_variables_give_zero_blocks() {
        let p = program(0.05, 0.3, 2, 0.9);
        let z = LmiVariables::zeros(p.a, p.c, p.horizon);
        assert_eq!(linalg::max_abs(&p.consensus_block(&z)), 0.0);
        assert_eq!(linalg::max_abs(&p.disagreement_block(&z)), 0.0);
    }

    #[test]
    fn identity_substitution() {
        let p = program(0.05, 0.3, 2, 1.0);
        let mut v = LmiVariables::zeros(p.a, p.c, p.horizon);
        v.p = Mat::identity(p.a, p.a);
        v.q = Mat::identity(p.a, p.a);
        let xi = &p.consensus.xi;
        let xp = &p.consensus.xi_plus;
        let psi = &p.consensus.psi;
        let base = xp.transpose() * xp - xi.transpose() * xi;
        assert!((p.consensus_block(&v) - psi.transpose() * &base * psi).norm() < 1e-12);
        assert!((p.disagreement_block(&v) - base).norm() < 1e-12);
    }

    #[test]
    fn blocks_are_linear_and_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for bh in 1..=3 {
            let p = program(0.03, 0.4, bh, 0.95);
            let v1 = random_vars(&mut rng, &p);
            let v2 = random_vars(&mut rng, &p);
            let mut sum = v1.clone();
            sum.p += &v2.p;
            sum.q += &v2.q;
            sum.r += &v2.r;
            for l in 0..bh {
                sum.s[l] += &v2.s[l];
                sum.lambda[l] += v2.lambda[l];
            }
            let x = p.consensus_block(&v1);
            assert!((&x - x.transpose()).norm() < 1e-12);
            assert!((p.consensus_block(&sum) - p.consensus_block(&v1) - p.consensus_block(&v2)).norm() < 1e-12);
            assert!(
                (p.disagreement_block(&sum) - p.disagreement_block(&v1) - p.disagreement_block(&v2)).norm() < 1e-11
            );
            assert!((p.consensus_block(&v1.scaled(2.0)) - x * 2.0).norm() < 1e-12);
        }
    }

    #[test]
    fn kronecker_terms_match_hand_expansion() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let r = diging_realization(0.07).unwrap();
        for bh in 1..=3 {
            let maps = basis::build_basis_maps(&r, bh).unwrap();
            let mult = build_multipliers(1.0, 10.0, 0.6, bh);
            let dm = DisagreementMap::new(&maps, &mult, 0.9);
            let rr = random_symmetric(&mut rng, 2);
            let ss: Vec<Mat> = (0..bh).map(|_| random_symmetric(&mut rng, 4)).collect();
            let zero_q = Mat::zeros(maps.a(), maps.a());
            let got = dm.apply(&zero_q, &rr, &ss, &vec![0.0; bh]);
            let s2b = 0.6f64.powi(2 * bh as i32);
            let mut expect =
                maps.wm[0].transpose() * &rr * &maps.wm[0] * s2b - maps.wm[bh].transpose() * &rr * &maps.wm[bh];
            for l in 0..bh {
                let e1 = vstack(&[&maps.zm[l], &maps.wm[l]], maps.b());
                let e2 = vstack(&[&maps.vm[l], &maps.wm[l + 1]], maps.b());
                expect += e1.transpose() * &ss[l] * &e1 - e2.transpose() * &ss[l] * &e2;
            }
            assert!((got - expect).norm() < 1e-12, "B = {bh}");
        }
    }

    #[test]
    fn horizon_one_gossip_term_pairs_z_with_v() {
        // With B = 1, w(0) = z(0) and w(1) = v(0): the S(0) term is
        // [z; z]^T S [z; z] - [v; v]^T S [v; v].
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let r = diging_realization(0.1).unwrap();
        let maps = basis::build_basis_maps(&r, 1).unwrap();
        let dm = DisagreementMap::new(&maps, &build_multipliers(1.0, 10.0, 0.0, 1), 0.9);
        let s = random_symmetric(&mut rng, 4);
        let got = dm.apply(&Mat::zeros(3, 3), &Mat::zeros(2, 2), std::slice::from_ref(&s), &[0.0]);
        let zz = vstack(&[&maps.zm[0], &maps.zm[0]], 6);
        let vv = vstack(&[&maps.vm[0], &maps.vm[0]], 6);
        let expect = zz.transpose() * &s * &zz - vv.transpose() * &s * &vv;
        assert!((got - expect).norm() < 1e-12);
    }

    #[test]
    fn variable_count_formula() {
        for bh in 1..=3 {
            let p = program(0.05, 0.2, bh, 0.9);
            let (a, c) = (p.a, p.c);
            assert_eq!(p.num_variables(), a * (a + 1) / 2 * 2 + c * (c + 1) / 2 + bh * (2 * c) * (2 * c + 1) / 2 + bh);
            let data = p.to_sdp();
            assert_eq!(data.num_vars(), p.num_variables() + 1);
        }
    }

    #[test]
    fn solver_data_reproduces_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for coupling in [LambdaCoupling::Shared, LambdaCoupling::Decoupled] {
            let r = diging_realization(0.04).unwrap();
            let fc = FunctionClass::new(1.0, 10.0).unwrap();
            let nc = NetworkClass::new(0.3, 2).unwrap();
            let opts = AssemblyOptions { coupling, ..Default::default() };
            let p = assemble_feasibility(&r, &fc, &nc, 0.93, &opts).unwrap();
            let data = p.to_sdp();
            let mut y: Vec<f64> = (0..data.num_vars()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            *y.last_mut().unwrap() = 0.0;
            let vars = p.variables_from_vector(&y);
            let z = data.slack(&y);
            assert!((&z[0] + p.consensus_block(&vars) / p.block_scale).norm() < 1e-12);
            assert!((&z[1] + p.disagreement_block(&vars) / p.block_scale).norm() < 1e-12);
            assert!((&z[2] - (&vars.p - Mat::identity(p.a, p.a) * p.solver_eps)).norm() < 1e-12);
        }
    }

    #[test]
    fn interior_point_is_strictly_feasible() {
        for bh in 1..=3 {
            let p = program(0.05, 0.5, bh, 0.9);
            let data = p.to_sdp();
            let z = data.slack(&p.interior_point());
            for blk in z {
                assert!(linalg::lambda_min(&blk) > 0.0);
            }
        }
    }
}
