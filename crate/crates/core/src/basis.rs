//! Maps from the B-step unravelled basis vector to every iterate.
//!
//! Column layout of the basis: `x(0)` (s columns), `u(0..B-1)` (B), `v(0..B-1)`
//! (cB), then `w(2..B)` (c(B-1)), so `b = s - c + B(2c+1)`.

use std::fmt::Write as _;

use crate::canonical::Realization;
use crate::error::{Error, Result};
use crate::linalg::{self, vstack, Mat};

/// Index ranges used for the consensus-subspace difference stacks; recorded
/// in certificate metadata.
pub const PSI_RANGE_NOTE: &str = "v(l)-z(l) for l in 0..B-1; w(l)-w(l+1) for l in 0..B-1";

#[derive(Debug, Clone)]
pub struct BasisMaps {
    pub s: usize,
    pub c: usize,
    pub horizon: usize,
    /// `xm[0..=B]`, each `s x b`.
    pub xm: Vec<Mat>,
    /// `um[0..B]`, each `1 x b`.
    pub um: Vec<Mat>,
    pub vm: Vec<Mat>,
    pub ym: Vec<Mat>,
    pub zm: Vec<Mat>,
    /// `wm[0..=B]`, each `c x b`.
    pub wm: Vec<Mat>,
}

pub fn basis_dim(s: usize, c: usize, horizon: usize) -> usize {
    s + horizon * (2 * c + 1) - c
}

pub fn state_dim(s: usize, c: usize, horizon: usize) -> usize {
    s + (c + 1) * (horizon - 1)
}

fn selector(b: usize, start: usize, rows: usize) -> Mat {
    let mut m = Mat::zeros(rows, b);
    for k in 0..rows {
        m[(k, start + k)] = 1.0;
    }
    m
}

impl BasisMaps {
    pub fn b(&self) -> usize {
        basis_dim(self.s, self.c, self.horizon)
    }

    pub fn a(&self) -> usize {
        state_dim(self.s, self.c, self.horizon)
    }

    /// The stacked selectors `[xm(0); um(..); vm(..); wm(2..B)]`.
    pub fn selector_stack(&self) -> Mat {
        let mut blocks: Vec<&Mat> = vec![&self.xm[0]];
        blocks.extend(self.um.iter());
        blocks.extend(self.vm.iter());
        blocks.extend(self.wm[2..].iter());
        vstack(&blocks, self.b())
    }

    /// `(Xi, Xi_plus)`, both `a x b`.
    pub fn state_maps(&self) -> (Mat, Mat) {
        let bh = self.horizon;
        let b = self.b();
        let mut cur: Vec<&Mat> = vec![&self.xm[0]];
        cur.extend(self.um[..bh - 1].iter());
        cur.extend(self.vm[..bh - 1].iter());
        let mut next: Vec<&Mat> = vec![&self.xm[1]];
        next.extend(self.um[1..].iter());
        next.extend(self.vm[1..].iter());
        (vstack(&cur, b), vstack(&next, b))
    }

    /// Labeled row-major dump of every map.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let mut emit = |name: String, m: &Mat| {
            let _ = writeln!(out, "{name} ({}x{})", m.nrows(), m.ncols());
            for row in m.row_iter() {
                let cells: Vec<String> = row.iter().map(|x| format!("{x}")).collect();
                let _ = writeln!(out, "  [{}]", cells.join(", "));
            }
        };
        for (l, m) in self.xm.iter().enumerate() {
            emit(format!("x({l})"), m);
        }
        for (name, list) in [("u", &self.um), ("v", &self.vm), ("y", &self.ym), ("z", &self.zm), ("w", &self.wm)] {
            for (l, m) in list.iter().enumerate() {
                emit(format!("{name}({l})"), m);
            }
        }
        let (xi, xi_plus) = self.state_maps();
        emit("Xi".into(), &xi);
        emit("Xi_plus".into(), &xi_plus);
        out
    }
}

pub fn build_basis_maps(r: &Realization, horizon: usize) -> Result<BasisMaps> {
    r.validate()?;
    if horizon == 0 {
        return Err(Error::Domain("horizon B must be >= 1".into()));
    }
    let (s, c) = (r.s, r.c);
    let b = basis_dim(s, c, horizon);
    let g = r.g();

    let mut offset = 0;
    let x0 = selector(b, offset, s);
    offset += s;
    let um: Vec<Mat> = (0..horizon).map(|l| selector(b, offset + l, 1)).collect();
    offset += horizon;
    let vm: Vec<Mat> = (0..horizon).map(|l| selector(b, offset + c * l, c)).collect();
    offset += c * horizon;
    let w_tail: Vec<Mat> = (0..horizon - 1).map(|l| selector(b, offset + c * l, c)).collect();
    debug_assert_eq!(offset + c * (horizon - 1), b);

    let mut xm = vec![x0];
    let mut ym = Vec::with_capacity(horizon);
    let mut zm = Vec::with_capacity(horizon);
    for l in 0..horizon {
        let out = &g * vstack(&[&xm[l], &um[l], &vm[l]], b);
        xm.push(out.rows(0, s).into_owned());
        ym.push(out.rows(s, 1).into_owned());
        zm.push(out.rows(s + 1, c).into_owned());
    }
    let mut wm = vec![zm[0].clone(), vm[0].clone()];
    wm.extend(w_tail);

    Ok(BasisMaps { s, c, horizon, xm, um, vm, ym, zm, wm })
}

/// Stacked constraint matrix whose nullspace is the consensus subspace.
pub fn consensus_constraints(r: &Realization, maps: &BasisMaps) -> Mat {
    let b = maps.b();
    let mut rows: Vec<Mat> = Vec::new();
    for l in 0..maps.horizon {
        if r.invariant_rows() > 0 {
            rows.push(&r.fx * &maps.xm[l] + &r.fu * &maps.um[l]);
        }
    }
    for l in 0..maps.horizon {
        rows.push(&maps.vm[l] - &maps.zm[l]);
    }
    for l in 0..maps.horizon {
        rows.push(&maps.wm[l] - &maps.wm[l + 1]);
    }
    let refs: Vec<&Mat> = rows.iter().collect();
    vstack(&refs, b)
}

/// Orthonormal basis of the consensus subspace (`b x p`).
pub fn build_psi(r: &Realization, maps: &BasisMaps, tol: f64) -> Result<Mat> {
    let psi = linalg::nullspace(&consensus_constraints(r, maps), tol);
    if psi.ncols() == 0 {
        return Err(Error::EmptyIntersection);
    }
    Ok(psi)
}
