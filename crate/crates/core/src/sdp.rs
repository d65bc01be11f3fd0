//! Dense primal-dual interior-point solver for small block-diagonal SDPs.
//!
//! Works on the standard pair
//!
//! ```text
//! (P)  min <C, X>   s.t. <A_i, X> = b_i,  X >= 0
//! (D)  max b^T y    s.t. Z = C - sum_i y_i A_i >= 0
//! ```
//!
//! starting from a strictly dual-feasible `y0` and `X = I`. Search directions
//! are HKM with a Mehrotra predictor-corrector. The dual iterate is kept
//! exactly feasible by recomputing `Z` from `y` after every step.

use std::fmt::Write as _;

use nalgebra::Cholesky;

use crate::linalg::{self, Mat};

/// Block-diagonal SDP data in dual form.
#[derive(Debug, Clone)]
pub struct SdpData {
    pub block_dims: Vec<usize>,
    pub c: Vec<Mat>,
    /// For each dual variable, its nonzero `(block, coefficient)` pairs.
    pub a: Vec<Vec<(usize, Mat)>>,
    pub b: Vec<f64>,
}

impl SdpData {
    pub fn num_vars(&self) -> usize {
        self.a.len()
    }

    /// `C - sum_i y_i A_i`.
    pub fn slack(&self, y: &[f64]) -> Vec<Mat> {
        let mut z = self.c.clone();
        for (yi, coeffs) in y.iter().zip(&self.a) {
            if *yi == 0.0 {
                continue;
            }
            for (blk, m) in coeffs {
                z[*blk] -= m * *yi;
            }
        }
        z
    }

    fn apply_adjoint(&self, y: &[f64]) -> Vec<Mat> {
        let mut out: Vec<Mat> = self.block_dims.iter().map(|&n| Mat::zeros(n, n)).collect();
        for (yi, coeffs) in y.iter().zip(&self.a) {
            for (blk, m) in coeffs {
                out[*blk] += m * *yi;
            }
        }
        out
    }

    /// `(<A_i, X>)_i`; only the symmetric part of `X` contributes.
    fn apply(&self, x: &[Mat]) -> Vec<f64> {
        self.a.iter().map(|coeffs| coeffs.iter().map(|(blk, m)| m.dot(&x[*blk])).sum()).collect()
    }

    /// Sparse SDPA text (`.dat-s`). SDPA minimizes `c^T x` subject to
    /// `sum_i F_i x_i - F_0 >= 0`, so `c = -b`, `F_i = -A_i`, `F_0 = -C`.
    pub fn to_sdpa(&self, comment: &str) -> String {
        let mut out = String::new();
        for line in comment.lines() {
            let _ = writeln!(out, "\"{line}");
        }
        let _ = writeln!(out, "{} = mDIM", self.num_vars());
        let _ = writeln!(out, "{} = nBLOCK", self.block_dims.len());
        let dims: Vec<String> = self.block_dims.iter().map(|d| d.to_string()).collect();
        let _ = writeln!(out, "{} = bLOCKsTRUCT", dims.join(" "));
        let cvec: Vec<String> = self.b.iter().map(|v| format!("{}", -v)).collect();
        let _ = writeln!(out, "{}", cvec.join(" "));
        let mut emit = |mat_no: usize, blk: usize, m: &Mat, sign: f64| {
            for i in 0..m.nrows() {
                for j in i..m.ncols() {
                    let v = m[(i, j)];
                    if v != 0.0 {
                        let _ = writeln!(out, "{} {} {} {} {}", mat_no, blk + 1, i + 1, j + 1, sign * v);
                    }
                }
            }
        };
        for (blk, m) in self.c.iter().enumerate() {
            emit(0, blk, m, -1.0);
        }
        for (i, coeffs) in self.a.iter().enumerate() {
            for (blk, m) in coeffs {
                emit(i + 1, *blk, m, -1.0);
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SdpSettings {
    pub max_iter: usize,
    pub tol_gap: f64,
    pub tol_feas: f64,
    pub step_fraction: f64,
    /// Initial primal iterate is `x0_scale * I`.
    pub x0_scale: f64,
    /// Stop as soon as the dual objective exceeds this value.
    pub stop_dual_above: Option<f64>,
    /// Stop once the primal objective, corrected for primal infeasibility,
    /// falls below this value.
    pub stop_primal_below: Option<f64>,
    /// Bound on `|y_i|` over the dual points of interest; scales the
    /// infeasibility correction of the primal bound.
    pub dual_bound: f64,
    /// Relative gap and feasibility at which a stalled run is still reported
    /// as [`SdpStatus::Inaccurate`] instead of an error.
    pub acceptable_gap: f64,
    pub acceptable_feas: f64,
}

impl Default for SdpSettings {
    fn default() -> Self {
        SdpSettings {
            max_iter: 120,
            tol_gap: 1e-12,
            tol_feas: 1e-8,
            step_fraction: 0.95,
            x0_scale: 1.0,
            stop_dual_above: None,
            stop_primal_below: None,
            dual_bound: 1.0,
            acceptable_gap: 1e-9,
            acceptable_feas: 1e-7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
    /// The dual objective crossed `stop_dual_above`.
    DualThreshold,
    /// The corrected primal objective crossed `stop_primal_below`.
    PrimalThreshold,
    /// Stalled or hit the iteration cap after reaching `acceptable_*`.
    Inaccurate,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub y: Vec<f64>,
    pub x: Vec<Mat>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    /// `<C, X> + ||b - A(X)||_1 * dual_bound`, an upper bound on the dual
    /// objective over dual points within `dual_bound`.
    pub dual_upper_bound: f64,
    pub primal_residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SdpError {
    InfeasibleStart,
    IterationLimit { iterations: usize, gap: f64, primal_residual: f64 },
    NumericalBreakdown(String),
}

impl std::fmt::Display for SdpError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SdpError::InfeasibleStart => write!(f, "initial dual point is not strictly feasible"),
            SdpError::IterationLimit { iterations, gap, primal_residual } => {
                write!(f, "iteration limit {iterations} reached (gap {gap:e}, primal residual {primal_residual:e})")
            }
            SdpError::NumericalBreakdown(msg) => write!(f, "numerical breakdown: {msg}"),
        }
    }
}

impl std::error::Error for SdpError {}

fn chol(m: &Mat) -> Option<Cholesky<f64, nalgebra::Dyn>> {
    Cholesky::new(linalg::symmetrize(m))
}

/// Largest step `t <= 1` (before damping) with `x + t dx >= 0`, or infinity.
fn max_step(x_chol: &Cholesky<f64, nalgebra::Dyn>, dx: &Mat) -> f64 {
    let l = x_chol.l();
    let linv_dx = l.solve_lower_triangular(dx).expect("triangular factor is nonsingular");
    let w = l.solve_lower_triangular(&linv_dx.transpose()).expect("triangular factor is nonsingular");
    let lmin = linalg::lambda_min(&w);
    if lmin < 0.0 {
        -1.0 / lmin
    } else {
        f64::INFINITY
    }
}

fn dot_blocks(a: &[Mat], b: &[Mat]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

pub fn solve(data: &SdpData, y0: &[f64], settings: &SdpSettings) -> Result<SdpSolution, SdpError> {
    let mut acceptable = None;
    match solve_tracked(data, y0, settings, &mut acceptable) {
        Ok(sol) => Ok(sol),
        Err(SdpError::InfeasibleStart) => Err(SdpError::InfeasibleStart),
        Err(e) => acceptable.ok_or(e),
    }
}

fn solve_tracked(
    data: &SdpData,
    y0: &[f64],
    settings: &SdpSettings,
    acceptable: &mut Option<SdpSolution>,
) -> Result<SdpSolution, SdpError> {
    let m = data.num_vars();
    let nblocks = data.block_dims.len();
    let total_dim: usize = data.block_dims.iter().sum();
    let b_norm = data.b.iter().map(|v| v.abs()).sum::<f64>();

    // Variables touching each block, for the Schur complement.
    let mut by_block: Vec<Vec<(usize, &Mat)>> = vec![Vec::new(); nblocks];
    for (i, coeffs) in data.a.iter().enumerate() {
        for (blk, mat) in coeffs {
            by_block[*blk].push((i, mat));
        }
    }

    let mut y = y0.to_vec();
    let mut z = data.slack(&y);
    let mut z_chol: Vec<_> = z.iter().map(chol).collect::<Option<_>>().ok_or(SdpError::InfeasibleStart)?;
    let mut x: Vec<Mat> = data.block_dims.iter().map(|&n| Mat::identity(n, n) * settings.x0_scale).collect();

    for iter in 0..settings.max_iter {
        let x_chol: Vec<_> = x
            .iter()
            .map(chol)
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| SdpError::NumericalBreakdown("primal iterate lost definiteness".into()))?;
        let z_inv: Vec<Mat> = z_chol.iter().map(|c| c.inverse()).collect();

        let ax = data.apply(&x);
        let rp: Vec<f64> = data.b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let rp_norm = rp.iter().map(|v| v.abs()).sum::<f64>();
        let pobj = dot_blocks(&data.c, &x);
        let dobj: f64 = data.b.iter().zip(&y).map(|(bi, yi)| bi * yi).sum();
        let upper = pobj + rp_norm * settings.dual_bound;
        let mu = dot_blocks(&x, &z) / total_dim as f64;

        let finish = |status| SdpSolution {
            status,
            y: y.clone(),
            x: x.clone(),
            primal_objective: pobj,
            dual_objective: dobj,
            dual_upper_bound: upper,
            primal_residual: rp_norm,
            iterations: iter,
        };
        if settings.stop_dual_above.is_some_and(|th| dobj > th) {
            return Ok(finish(SdpStatus::DualThreshold));
        }
        let rel_feas = rp_norm / (1.0 + b_norm);
        if settings.stop_primal_below.is_some_and(|th| upper < th) && rel_feas < 1e-6 {
            return Ok(finish(SdpStatus::PrimalThreshold));
        }
        let rel_gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        if rel_gap < settings.tol_gap && rel_feas < settings.tol_feas {
            return Ok(finish(SdpStatus::Optimal));
        }
        if rel_gap < settings.acceptable_gap && rel_feas < settings.acceptable_feas {
            *acceptable = Some(finish(SdpStatus::Inaccurate));
        }

        // Schur complement M_ij = <A_i, X A_j Z^-1>.
        let mut schur = Mat::zeros(m, m);
        for blk in 0..nblocks {
            let vars = &by_block[blk];
            let products: Vec<Mat> = vars.iter().map(|(_, aj)| &x[blk] * *aj * &z_inv[blk]).collect();
            for (p, (i, ai)) in vars.iter().enumerate() {
                for (q, (j, _)) in vars.iter().enumerate().skip(p) {
                    let v = ai.dot(&products[q]);
                    schur[(*i, *j)] += v;
                    if p != q {
                        schur[(*j, *i)] += v;
                    }
                }
            }
        }
        let schur = linalg::symmetrize(&schur);
        let diag_max = schur.diagonal().iter().cloned().fold(0.0, f64::max);
        let schur_chol = match Cholesky::new(schur.clone()) {
            Some(c) => c,
            None => {
                let mut reg = schur;
                for k in 0..m {
                    reg[(k, k)] += 1e-14 * diag_max.max(1.0);
                }
                Cholesky::new(reg)
                    .ok_or_else(|| SdpError::NumericalBreakdown("Schur complement not positive definite".into()))?
            }
        };

        // Direction for complementarity target `X Z -> K` where
        // `K = sigma mu I - corr`; returns (dy, dX, dZ).
        let direction = |target: &[Mat]| -> (Vec<f64>, Vec<Mat>, Vec<Mat>) {
            let tz: Vec<Mat> = target.iter().zip(&z_inv).map(|(t, zi)| t * zi).collect();
            let atz = data.apply(&tz);
            let rhs: Vec<f64> = data.b.iter().zip(&atz).map(|(bi, v)| bi - v).collect();
            let dy = schur_chol.solve(&linalg::dvec(&rhs));
            let dy: Vec<f64> = dy.iter().copied().collect();
            let adj = data.apply_adjoint(&dy);
            let dz: Vec<Mat> = adj.iter().map(|a| -a).collect();
            let dx: Vec<Mat> = (0..nblocks)
                .map(|k| {
                    let raw = &tz[k] - &x[k] - &x[k] * &dz[k] * &z_inv[k];
                    linalg::symmetrize(&raw)
                })
                .collect();
            (dy, dx, dz)
        };
        let steps = |dx: &[Mat], dz: &[Mat]| -> (f64, f64) {
            let ap = (0..nblocks).map(|k| max_step(&x_chol[k], &dx[k])).fold(f64::INFINITY, f64::min);
            let ad = (0..nblocks).map(|k| max_step(&z_chol[k], &dz[k])).fold(f64::INFINITY, f64::min);
            (ap, ad)
        };

        // Predictor.
        let zero_target: Vec<Mat> = data.block_dims.iter().map(|&n| Mat::zeros(n, n)).collect();
        let (_, dx_a, dz_a) = direction(&zero_target);
        let (ap_a, ad_a) = steps(&dx_a, &dz_a);
        let (ap_a, ad_a) = (ap_a.min(1.0), ad_a.min(1.0));
        let x_aff: Vec<Mat> = x.iter().zip(&dx_a).map(|(xk, d)| xk + d * ap_a).collect();
        let z_aff: Vec<Mat> = z.iter().zip(&dz_a).map(|(zk, d)| zk + d * ad_a).collect();
        let mu_aff = dot_blocks(&x_aff, &z_aff) / total_dim as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // Corrector.
        let target: Vec<Mat> = (0..nblocks)
            .map(|k| {
                let n = data.block_dims[k];
                Mat::identity(n, n) * (sigma * mu) - &dx_a[k] * &dz_a[k]
            })
            .collect();
        let (dy, dx, dz) = direction(&target);
        let (ap, ad) = steps(&dx, &dz);
        let ap = (settings.step_fraction * ap).min(1.0);
        let ad = (settings.step_fraction * ad).min(1.0);

        for k in 0..nblocks {
            x[k] += &dx[k] * ap;
        }
        let y_next: Vec<f64> = y.iter().zip(&dy).map(|(yi, d)| yi + ad * d).collect();
        let z_next = data.slack(&y_next);
        let z_next_chol: Option<Vec<_>> = z_next.iter().map(chol).collect();
        match z_next_chol {
            Some(c) => {
                y = y_next;
                z = z_next;
                z_chol = c;
            }
            None => {
                // Roundoff in the recomputed slack; retreat along the step.
                let mut t = ad * 0.5;
                loop {
                    let y_try: Vec<f64> = y.iter().zip(&dy).map(|(yi, d)| yi + t * d).collect();
                    let z_try = data.slack(&y_try);
                    if let Some(c) = z_try.iter().map(chol).collect::<Option<Vec<_>>>() {
                        y = y_try;
                        z = z_try;
                        z_chol = c;
                        break;
                    }
                    t *= 0.5;
                    if t < 1e-12 {
                        return Err(SdpError::NumericalBreakdown("dual slack lost definiteness".into()));
                    }
                }
            }
        }
    }

    let ax = data.apply(&x);
    let rp_norm = data.b.iter().zip(&ax).map(|(bi, ai)| (bi - ai).abs()).sum::<f64>();
    let pobj = dot_blocks(&data.c, &x);
    let dobj: f64 = data.b.iter().zip(&y).map(|(bi, yi)| bi * yi).sum();
    Err(SdpError::IterationLimit { iterations: settings.max_iter, gap: pobj - dobj, primal_residual: rp_norm })
}
