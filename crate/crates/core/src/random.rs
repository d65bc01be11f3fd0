//! Seeded random instances for property checks and sweeps.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::canonical::Realization;
use crate::linalg::Mat;

fn gaussian<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Realization with i.i.d. standard normal blocks and `r` invariant rows.
pub fn random_realization<R: Rng>(rng: &mut R, s: usize, c: usize, r: usize) -> Realization {
    Realization {
        s,
        c,
        a: gaussian(rng, s, s),
        bu: gaussian(rng, s, 1),
        bv: gaussian(rng, s, c),
        cy: gaussian(rng, 1, s),
        dyu: gaussian(rng, 1, 1),
        dyv: gaussian(rng, 1, c),
        cz: gaussian(rng, c, s),
        dzu: gaussian(rng, c, 1),
        dzv: gaussian(rng, c, c),
        fx: gaussian(rng, r, s),
        fu: gaussian(rng, r, 1),
    }
}

/// Random symmetric matrix with i.i.d. normal entries.
pub fn random_symmetric<R: Rng>(rng: &mut R, n: usize) -> Mat {
    let g = gaussian(rng, n, n);
    (&g + g.transpose()) * 0.5
}

/// Random symmetric positive definite matrix with spectrum in `[lo, hi]`.
pub fn random_spd<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64) -> Mat {
    let q = gaussian(rng, n, n).qr().q();
    let d = Mat::from_diagonal(&nalgebra::DVector::from_fn(n, |i, _| {
        if n == 1 {
            rng.gen_range(lo..=hi)
        } else if i == 0 {
            lo
        } else if i == n - 1 {
            hi
        } else {
            rng.gen_range(lo..=hi)
        }
    }));
    let m = &q * d * q.transpose();
    (&m + m.transpose()) * 0.5
}
