//! Algorithms in canonical state-space form.
//!
//! Each agent runs
//!
//! ```text
//! [x(k+1); y(k); z(k)] = G [x(k); u(k); v(k)],   u = grad f_i(y),   v_i = sum_j W_ij z_j
//! ```
//!
//! with an optional invariant `sum_j (Fx x_j + Fu u_j) = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, hstack, vstack, Mat};

/// Default relative threshold for rank decisions.
pub const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub s: usize,
    pub c: usize,
    pub a: Mat,
    pub bu: Mat,
    pub bv: Mat,
    pub cy: Mat,
    pub dyu: Mat,
    pub dyv: Mat,
    pub cz: Mat,
    pub dzu: Mat,
    pub dzv: Mat,
    /// Invariant rows; `r = fx.nrows()` may be zero.
    pub fx: Mat,
    pub fu: Mat,
}

impl Realization {
    /// Checks every block against `(s, c, r)` and reports the first mismatch.
    pub fn validate(&self) -> Result<()> {
        let (s, c) = (self.s, self.c);
        if s == 0 || c == 0 {
            return Err(Error::InvalidDimensions(format!("need s >= 1 and c >= 1, got s = {s}, c = {c}")));
        }
        let r = self.fx.nrows();
        let expect: [(&'static str, &Mat, (usize, usize)); 11] = [
            ("A", &self.a, (s, s)),
            ("Bu", &self.bu, (s, 1)),
            ("Bv", &self.bv, (s, c)),
            ("Cy", &self.cy, (1, s)),
            ("Dyu", &self.dyu, (1, 1)),
            ("Dyv", &self.dyv, (1, c)),
            ("Cz", &self.cz, (c, s)),
            ("Dzu", &self.dzu, (c, 1)),
            ("Dzv", &self.dzv, (c, c)),
            ("Fx", &self.fx, (r, s)),
            ("Fu", &self.fu, (r, 1)),
        ];
        for (block, m, expected) in expect {
            let actual = (m.nrows(), m.ncols());
            if actual != expected {
                return Err(Error::DimensionMismatch { block, expected, actual });
            }
        }
        Ok(())
    }

    pub fn invariant_rows(&self) -> usize {
        self.fx.nrows()
    }

    /// The stacked update matrix, `(s+1+c) x (s+1+c)`.
    pub fn g(&self) -> Mat {
        let n = self.s + 1 + self.c;
        let top = hstack(&[&self.a, &self.bu, &self.bv], self.s);
        let mid = hstack(&[&self.cy, &self.dyu, &self.dyv], 1);
        let bot = hstack(&[&self.cz, &self.dzu, &self.dzv], self.c);
        vstack(&[&top, &mid, &bot], n)
    }

    /// State-coordinate change `x -> T x`.
    pub fn transform_state(&self, t: &Mat) -> Option<Realization> {
        let t_inv = t.clone().try_inverse()?;
        Some(Realization {
            a: t * &self.a * &t_inv,
            bu: t * &self.bu,
            bv: t * &self.bv,
            cy: &self.cy * &t_inv,
            cz: &self.cz * &t_inv,
            fx: &self.fx * &t_inv,
            ..self.clone()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunctionClass {
    pub m: f64,
    pub l: f64,
}

impl FunctionClass {
    pub fn new(m: f64, l: f64) -> Result<Self> {
        if !(m > 0.0 && l >= m && l.is_finite()) {
            return Err(Error::Domain(format!("need 0 < m <= L, got m = {m}, L = {l}")));
        }
        Ok(FunctionClass { m, l })
    }

    pub fn kappa(&self) -> f64 {
        self.l / self.m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkClass {
    pub sigma: f64,
    pub horizon: usize,
}

impl NetworkClass {
    pub fn new(sigma: f64, horizon: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&sigma) {
            return Err(Error::Domain(format!("spectral gap must lie in [0, 1), got {sigma}")));
        }
        if horizon == 0 {
            return Err(Error::Domain("connectivity horizon B must be >= 1".into()));
        }
        Ok(NetworkClass { sigma, horizon })
    }
}

/// Verdict on the fixed-point existence conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointReport {
    /// Some nullspace vector of `K` has nonzero output through `[Cy Dyv]`.
    pub cond_a: bool,
    /// `[Bu; Dyu; Dzu]` lies in the column space of `[A-I; Cy; Cz]`.
    pub cond_b: bool,
    /// Literal reading: `[Cy Dyv]^T` itself lies in the nullspace of `K`.
    pub cond_a_literal: bool,
    pub nullity_k: usize,
    pub singular_values_k: Vec<f64>,
    pub rank_c: usize,
    pub rank_c_augmented: usize,
    pub singular_values_c: Vec<f64>,
    pub singular_values_c_augmented: Vec<f64>,
}

impl FixedPointReport {
    pub fn holds(&self) -> bool {
        self.cond_a && self.cond_b
    }

    pub fn forms_agree(&self) -> bool {
        self.cond_a == self.cond_a_literal
    }
}

/// `K = [A-I, Bv; Cz, Dzv-I; Fx, 0]`.
fn fixed_point_kernel(r: &Realization) -> Mat {
    let (s, c) = (r.s, r.c);
    let top = hstack(&[&(&r.a - Mat::identity(s, s)), &r.bv], s);
    let mid = hstack(&[&r.cz, &(&r.dzv - Mat::identity(c, c))], c);
    let rows = r.invariant_rows();
    let bot = hstack(&[&r.fx, &Mat::zeros(rows, c)], rows);
    vstack(&[&top, &mid, &bot], s + c)
}

fn output_row(r: &Realization) -> Mat {
    hstack(&[&r.cy, &r.dyv], 1)
}

fn state_column_matrix(r: &Realization) -> Mat {
    vstack(&[&(&r.a - Mat::identity(r.s, r.s)), &r.cy, &r.cz], r.s)
}

fn input_column(r: &Realization) -> Mat {
    vstack(&[&r.bu, &r.dyu, &r.dzu], 1)
}

pub fn check_fixed_point_conditions(r: &Realization, tol: f64) -> Result<FixedPointReport> {
    r.validate()?;
    let k = fixed_point_kernel(r);
    let h = output_row(r);
    let singular_values_k = linalg::singular_values(&k);
    let null = linalg::nullspace(&k, tol);
    let scale = linalg::max_abs(&h).max(1.0);
    let cond_a = null.ncols() > 0 && linalg::max_abs(&(&h * &null)) > tol * scale;

    let h_norm = h.norm();
    let cond_a_literal = h_norm > 0.0 && {
        let kh = &k * h.transpose();
        let kscale = singular_values_k.first().copied().unwrap_or(0.0).max(1.0);
        kh.norm() <= tol * kscale * h_norm
    };

    let cm = state_column_matrix(r);
    let aug = hstack(&[&cm, &input_column(r)], cm.nrows());
    let singular_values_c = linalg::singular_values(&cm);
    let singular_values_c_augmented = linalg::singular_values(&aug);
    // Both ranks are measured against the augmented scale so that a tiny
    // input column cannot flip the verdict by itself.
    let ref_scale = singular_values_c_augmented.first().copied().unwrap_or(0.0);
    let rank_rel = |sv: &[f64]| sv.iter().filter(|&&x| x > tol * ref_scale).count();
    let rank_c = rank_rel(&singular_values_c);
    let rank_c_augmented = rank_rel(&singular_values_c_augmented);

    Ok(FixedPointReport {
        cond_a,
        cond_b: rank_c == rank_c_augmented,
        cond_a_literal,
        nullity_k: null.ncols(),
        singular_values_k,
        rank_c,
        rank_c_augmented,
        singular_values_c,
        singular_values_c_augmented,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentFixedPoint {
    pub x: Mat,
    pub y: Mat,
    pub z: Mat,
    pub u: Mat,
    pub v: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointWitness {
    pub x_bar: Mat,
    pub v_bar: Mat,
    pub x_hat: Mat,
    pub agents: Vec<AgentFixedPoint>,
}

/// Builds the fixed point attached to an optimizer `y_star` (length `d`) and
/// per-agent gradients at that optimizer, which must sum to zero.
pub fn construct_fixed_point(r: &Realization, y_star: &[f64], gradients: &[Vec<f64>]) -> Result<FixedPointWitness> {
    let report = check_fixed_point_conditions(r, RANK_TOL)?;
    if !report.holds() {
        return Err(Error::ConditionsViolated { cond_a: report.cond_a, cond_b: report.cond_b });
    }
    let d = y_star.len();
    if gradients.iter().any(|g| g.len() != d) {
        return Err(Error::Domain("gradient length differs from optimizer dimension".into()));
    }
    let mut sum = vec![0.0; d];
    let mut scale = 1.0f64;
    for g in gradients {
        for (acc, gi) in sum.iter_mut().zip(g) {
            *acc += gi;
            scale = scale.max(gi.abs());
        }
    }
    let sum_norm = sum.iter().map(|x| x * x).sum::<f64>().sqrt();
    if sum_norm > 1e-9 * scale {
        return Err(Error::GradientSumNonzero(sum_norm));
    }

    let (s, c) = (r.s, r.c);
    // Unit-output nullspace vector: [K; Cy Dyv] n = [0; 1].
    let k = fixed_point_kernel(r);
    let h = output_row(r);
    let lhs = vstack(&[&k, &h], s + c);
    let mut rhs = Mat::zeros(lhs.nrows(), 1);
    rhs[(lhs.nrows() - 1, 0)] = 1.0;
    let (n0, res) = linalg::lstsq(&lhs, &rhs, RANK_TOL);
    if res > 1e-8 {
        return Err(Error::ConditionsViolated { cond_a: false, cond_b: report.cond_b });
    }
    let (x_hat, res_b) = linalg::lstsq(&state_column_matrix(r), &input_column(r), RANK_TOL);
    if res_b > 1e-8 {
        return Err(Error::ConditionsViolated { cond_a: true, cond_b: false });
    }

    let y_row = Mat::from_row_slice(1, d, y_star);
    let x_bar = n0.rows(0, s) * &y_row;
    let v_bar = n0.rows(s, c) * &y_row;
    let agents = gradients
        .iter()
        .map(|g| {
            let u = Mat::from_row_slice(1, d, g);
            AgentFixedPoint { x: &x_bar - &x_hat * &u, y: y_row.clone(), z: v_bar.clone(), u, v: v_bar.clone() }
        })
        .collect();
    Ok(FixedPointWitness { x_bar, v_bar, x_hat, agents })
}

/// Largest absolute deviation from the fixed-point equations with uniform
/// averaging `W = 11^T / n`, including the invariant.
pub fn fixed_point_residual(r: &Realization, w: &FixedPointWitness) -> f64 {
    let n = w.agents.len();
    if n == 0 {
        return 0.0;
    }
    let d = w.x_bar.ncols();
    let mut z_mean = Mat::zeros(r.c, d);
    for a in &w.agents {
        z_mean += &a.z;
    }
    z_mean /= n as f64;
    let g = r.g();
    let mut worst = 0.0f64;
    let mut invariant = Mat::zeros(r.invariant_rows(), d);
    for a in &w.agents {
        let input = vstack(&[&a.x, &a.u, &z_mean], d);
        let out = &g * input;
        let expect = vstack(&[&a.x, &a.y, &a.z], d);
        worst = worst.max(linalg::max_abs(&(out - expect)));
        worst = worst.max(linalg::max_abs(&(&a.v - &z_mean)));
        invariant += &r.fx * &a.x + &r.fu * &a.u;
    }
    worst.max(linalg::max_abs(&invariant))
}

/// DIGing with state `(x, y, grad f(x))`, `s = 3`, `c = 2`, one invariant.
pub fn diging_realization(alpha: f64) -> Result<Realization> {
    if !(alpha > 0.0) {
        return Err(Error::NonpositiveStepsize(alpha));
    }
    let m = |r, c, v: &[f64]| Mat::from_row_slice(r, c, v);
    Ok(Realization {
        s: 3,
        c: 2,
        a: m(3, 3, &[0.0, -alpha, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0]),
        bu: m(3, 1, &[0.0, 1.0, 1.0]),
        bv: m(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
        cy: m(1, 3, &[0.0, -alpha, 0.0]),
        dyu: m(1, 1, &[0.0]),
        dyv: m(1, 2, &[1.0, 0.0]),
        cz: m(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
        dzu: Mat::zeros(2, 1),
        dzv: Mat::zeros(2, 2),
        fx: m(1, 3, &[0.0, 1.0, -1.0]),
        fu: Mat::zeros(1, 1),
    })
}

/// Decentralized gradient descent `x+ = sum_j W_ij x_j - alpha grad f(x)`.
pub fn dgd_realization(alpha: f64) -> Result<Realization> {
    if !(alpha > 0.0) {
        return Err(Error::NonpositiveStepsize(alpha));
    }
    let one = Mat::from_element(1, 1, 1.0);
    Ok(Realization {
        s: 1,
        c: 1,
        a: Mat::zeros(1, 1),
        bu: Mat::from_element(1, 1, -alpha),
        bv: one.clone(),
        cy: one.clone(),
        dyu: Mat::zeros(1, 1),
        dyv: Mat::zeros(1, 1),
        cz: one,
        dzu: Mat::zeros(1, 1),
        dzv: Mat::zeros(1, 1),
        fx: Mat::zeros(0, 1),
        fu: Mat::zeros(0, 1),
    })
}

/// Names accepted by [`builtin`].
pub const BUILTINS: &[&str] = &["diging", "dgd"];

pub fn builtin(name: &str, alpha: f64) -> Result<Realization> {
    match name {
        "diging" => diging_realization(alpha),
        "dgd" => dgd_realization(alpha),
        other => Err(Error::Parse(format!("unknown builtin '{other}' (expected one of {BUILTINS:?})"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn diging_blocks_match_table() {
        let r = diging_realization(0.1).unwrap();
        r.validate().unwrap();
        assert_eq!(r.bu.as_slice(), &[0.0, 1.0, 1.0]);
        let r1 = diging_realization(1.0).unwrap();
        assert_eq!(r1.cy, Mat::from_row_slice(1, 3, &[0.0, -1.0, 0.0]));
        assert_eq!(r1.dyu[(0, 0)], 0.0);
        assert_eq!(r1.dyv, Mat::from_row_slice(1, 2, &[1.0, 0.0]));
        assert_eq!(r1.a.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, -1.0, 0.0]);
        assert_eq!(r1.fx, Mat::from_row_slice(1, 3, &[0.0, 1.0, -1.0]));
        assert_eq!(r1.fu[(0, 0)], 0.0);
        assert_eq!(r1.g().shape(), (6, 6));
    }

    #[test]
    fn nonpositive_stepsize_rejected() {
        assert!(matches!(diging_realization(0.0), Err(Error::NonpositiveStepsize(_))));
        assert!(matches!(diging_realization(-1.0), Err(Error::NonpositiveStepsize(_))));
        assert!(dgd_realization(-0.5).is_err());
    }

    #[test]
    fn wrong_bv_shape_reported() {
        let mut r = diging_realization(0.1).unwrap();
        r.bv = Mat::zeros(3, 3);
        match r.validate() {
            Err(Error::DimensionMismatch { block, expected, actual }) => {
                assert_eq!(block, "Bv");
                assert_eq!(expected, (3, 2));
                assert_eq!(actual, (3, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_invariant_is_valid() {
        let mut r = diging_realization(0.1).unwrap();
        r.fx = Mat::zeros(0, 3);
        r.fu = Mat::zeros(0, 1);
        r.validate().unwrap();
        assert_eq!(r.invariant_rows(), 0);
    }

    #[test]
    fn diging_passes_both_conditions() {
        for alpha in [0.01, 0.1, 1.0] {
            let rep = check_fixed_point_conditions(&diging_realization(alpha).unwrap(), RANK_TOL).unwrap();
            assert!(rep.cond_a && rep.cond_b, "alpha = {alpha}: {rep:?}");
        }
    }

    #[test]
    fn dgd_fails_column_space_condition() {
        let rep = check_fixed_point_conditions(&dgd_realization(0.1).unwrap(), RANK_TOL).unwrap();
        // K = [-1 1; 1 -1] has nullspace (1,1); [Cy Dyv] = [1 0] sees it.
        assert!(rep.cond_a);
        // rank [-1;1;1] = 1 but rank [[-1,-a],[1,0],[1,0]] = 2.
        assert_eq!((rep.rank_c, rep.rank_c_augmented), (1, 2));
        assert!(!rep.cond_b);
    }

    #[test]
    fn zero_input_column_passes_cond_b() {
        let mut r = diging_realization(0.1).unwrap();
        r.bu = Mat::zeros(3, 1);
        r.dyu = Mat::zeros(1, 1);
        r.dzu = Mat::zeros(2, 1);
        assert!(check_fixed_point_conditions(&r, RANK_TOL).unwrap().cond_b);
    }

    #[test]
    fn literal_form_disagreement_is_reported_for_diging() {
        // [Cy Dyv]^T = (0, -a, 0, 1, 0) is not itself a fixed direction of K.
        let rep = check_fixed_point_conditions(&diging_realization(0.1).unwrap(), RANK_TOL).unwrap();
        assert!(!rep.cond_a_literal);
        assert!(!rep.forms_agree());
    }

    fn substitute(r: &Realization, w: &FixedPointWitness) -> f64 {
        // Independent scalar-loop evaluation of the update for d = 1.
        let n = w.agents.len();
        let zbar: Vec<f64> = (0..r.c).map(|k| w.agents.iter().map(|a| a.z[(k, 0)]).sum::<f64>() / n as f64).collect();
        let mut worst = 0.0f64;
        for ag in &w.agents {
            for i in 0..r.s {
                let mut acc = r.bu[(i, 0)] * ag.u[(0, 0)];
                for j in 0..r.s {
                    acc += r.a[(i, j)] * ag.x[(j, 0)];
                }
                for j in 0..r.c {
                    acc += r.bv[(i, j)] * zbar[j];
                }
                worst = worst.max((acc - ag.x[(i, 0)]).abs());
            }
            let mut y = r.dyu[(0, 0)] * ag.u[(0, 0)];
            for j in 0..r.s {
                y += r.cy[(0, j)] * ag.x[(j, 0)];
            }
            for j in 0..r.c {
                y += r.dyv[(0, j)] * zbar[j];
            }
            worst = worst.max((y - ag.y[(0, 0)]).abs());
        }
        worst
    }

    #[test]
    fn diging_two_agent_witness() {
        let r = diging_realization(0.1).unwrap();
        let w = construct_fixed_point(&r, &[0.7], &[vec![1.5], vec![-1.5]]).unwrap();
        assert!(substitute(&r, &w) < 1e-10);
        assert!(fixed_point_residual(&r, &w) < 1e-10);
        for a in &w.agents {
            assert!((a.y[(0, 0)] - 0.7).abs() < 1e-12);
        }
        // x_i* = (y*, 0, grad_i)
        assert!((w.agents[0].x[(0, 0)] - 0.7).abs() < 1e-12);
        assert!(w.agents[0].x[(1, 0)].abs() < 1e-12);
        assert!((w.agents[0].x[(2, 0)] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn zero_gradients_give_common_state() {
        let r = diging_realization(0.3).unwrap();
        let w = construct_fixed_point(&r, &[1.0, -2.0], &vec![vec![0.0, 0.0]; 3]).unwrap();
        for a in &w.agents {
            assert!((&a.x - &w.x_bar).norm() < 1e-14);
        }
    }

    #[test]
    fn nonzero_gradient_sum_rejected() {
        let r = diging_realization(0.1).unwrap();
        let e = construct_fixed_point(&r, &[0.0], &[vec![1.0], vec![0.5]]).unwrap_err();
        assert!(matches!(e, Error::GradientSumNonzero(_)));
    }

    #[test]
    fn dgd_witness_refused() {
        let r = dgd_realization(0.1).unwrap();
        let e = construct_fixed_point(&r, &[0.0], &[vec![1.0], vec![-1.0]]).unwrap_err();
        assert!(matches!(e, Error::ConditionsViolated { cond_b: false, .. }));
    }

    proptest! {
        #[test]
        fn witness_solves_update(alpha in 0.001f64..2.0, ys in -5.0f64..5.0,
                                 g in proptest::collection::vec(-3.0f64..3.0, 1..6)) {
            let r = diging_realization(alpha).unwrap();
            let mut grads: Vec<Vec<f64>> = g.iter().map(|x| vec![*x, 0.5 * x]).collect();
            let mean: Vec<f64> = (0..2).map(|k| grads.iter().map(|v| v[k]).sum::<f64>() / grads.len() as f64).collect();
            for v in &mut grads { v[0] -= mean[0]; v[1] -= mean[1]; }
            let w = construct_fixed_point(&r, &[ys, -ys], &grads).unwrap();
            prop_assert!(fixed_point_residual(&r, &w) < 1e-9);
        }

        #[test]
        fn verdicts_invariant_under_coordinate_change(alpha in 0.01f64..1.0,
                                                      entries in proptest::collection::vec(-1.0f64..1.0, 9)) {
            let r = diging_realization(alpha).unwrap();
            let t = Mat::identity(3, 3) * 2.0 + Mat::from_row_slice(3, 3, &entries) * 0.5;
            prop_assume!(t.determinant().abs() > 0.1);
            let rt = r.transform_state(&t).unwrap();
            let a = check_fixed_point_conditions(&r, RANK_TOL).unwrap();
            let b = check_fixed_point_conditions(&rt, RANK_TOL).unwrap();
            prop_assert_eq!((a.cond_a, a.cond_b), (b.cond_a, b.cond_b));
        }

        #[test]
        fn cond_b_invariant_under_input_scaling(alpha in 0.01f64..1.0, k in prop_oneof![-100.0f64..-0.01, 0.01f64..100.0]) {
            for base in [diging_realization(alpha).unwrap(), dgd_realization(alpha).unwrap()] {
                let mut scaled = base.clone();
                scaled.bu *= k;
                scaled.dyu *= k;
                scaled.dzu *= k;
                let a = check_fixed_point_conditions(&base, RANK_TOL).unwrap();
                let b = check_fixed_point_conditions(&scaled, RANK_TOL).unwrap();
                prop_assert_eq!(a.cond_b, b.cond_b);
            }
        }
    }
}
