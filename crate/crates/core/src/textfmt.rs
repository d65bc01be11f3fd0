//! TOML text formats for realizations and matrices.
//!
//! Realization files:
//!
//! ```toml
//! name = "diging"      # optional
//! s = 3
//! c = 2
//! A   = [[1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]
//! Bu  = [[0.0], [-1.0], [1.0]]
//! # ... Bv, Cy, Dyu, Dyv, Cz, Dzu, Dzv
//! Fx  = [[0.0, 1.0, -1.0]]   # omit or [] for no invariant
//! Fu  = [[0.0]]
//! ```
//!
//! Matrices are row lists; shapes follow from `s`, `c` and the number of
//! invariant rows.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::canonical::Realization;
use crate::error::{Error, Result};
use crate::linalg::{mat_to_rows, Mat};

/// A matrix with an explicit shape, so empty matrices round-trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shaped {
    pub shape: [usize; 2],
    pub rows: Vec<Vec<f64>>,
}

impl From<&Mat> for Shaped {
    fn from(m: &Mat) -> Self {
        Shaped { shape: [m.nrows(), m.ncols()], rows: mat_to_rows(m) }
    }
}

impl TryFrom<&Shaped> for Mat {
    type Error = Error;

    fn try_from(s: &Shaped) -> Result<Mat> {
        rows_with_cols(&s.rows, s.shape[1], "matrix").and_then(|m| {
            if m.nrows() == s.shape[0] {
                Ok(m)
            } else {
                Err(Error::Parse(format!("matrix declares {} rows but lists {}", s.shape[0], m.nrows())))
            }
        })
    }
}

fn rows_with_cols(rows: &[Vec<f64>], cols: usize, what: &str) -> Result<Mat> {
    if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
        return Err(Error::Parse(format!("{what}: row of length {} where {cols} expected", bad.len())));
    }
    Ok(Mat::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RealizationFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    s: usize,
    c: usize,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "Bu")]
    bu: Vec<Vec<f64>>,
    #[serde(rename = "Bv")]
    bv: Vec<Vec<f64>>,
    #[serde(rename = "Cy")]
    cy: Vec<Vec<f64>>,
    #[serde(rename = "Dyu")]
    dyu: Vec<Vec<f64>>,
    #[serde(rename = "Dyv")]
    dyv: Vec<Vec<f64>>,
    #[serde(rename = "Cz")]
    cz: Vec<Vec<f64>>,
    #[serde(rename = "Dzu")]
    dzu: Vec<Vec<f64>>,
    #[serde(rename = "Dzv")]
    dzv: Vec<Vec<f64>>,
    #[serde(rename = "Fx", default)]
    fx: Vec<Vec<f64>>,
    #[serde(rename = "Fu", default)]
    fu: Vec<Vec<f64>>,
}

pub fn realization_to_toml(r: &Realization, name: Option<&str>) -> String {
    let file = RealizationFile {
        name: name.map(str::to_string),
        s: r.s,
        c: r.c,
        a: mat_to_rows(&r.a),
        bu: mat_to_rows(&r.bu),
        bv: mat_to_rows(&r.bv),
        cy: mat_to_rows(&r.cy),
        dyu: mat_to_rows(&r.dyu),
        dyv: mat_to_rows(&r.dyv),
        cz: mat_to_rows(&r.cz),
        dzu: mat_to_rows(&r.dzu),
        dzv: mat_to_rows(&r.dzv),
        fx: mat_to_rows(&r.fx),
        fu: mat_to_rows(&r.fu),
    };
    toml::to_string(&file).expect("realization serializes")
}

pub fn realization_from_toml(text: &str) -> Result<Realization> {
    let f: RealizationFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let (s, c) = (f.s, f.c);
    let r = Realization {
        s,
        c,
        a: rows_with_cols(&f.a, s, "A")?,
        bu: rows_with_cols(&f.bu, 1, "Bu")?,
        bv: rows_with_cols(&f.bv, c, "Bv")?,
        cy: rows_with_cols(&f.cy, s, "Cy")?,
        dyu: rows_with_cols(&f.dyu, 1, "Dyu")?,
        dyv: rows_with_cols(&f.dyv, c, "Dyv")?,
        cz: rows_with_cols(&f.cz, s, "Cz")?,
        dzu: rows_with_cols(&f.dzu, 1, "Dzu")?,
        dzv: rows_with_cols(&f.dzv, c, "Dzv")?,
        fx: rows_with_cols(&f.fx, s, "Fx")?,
        fu: rows_with_cols(&f.fu, 1, "Fu")?,
    };
    r.validate()?;
    Ok(r)
}

pub fn read_realization(path: &Path) -> Result<Realization> {
    realization_from_toml(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canonical::{dgd_realization, diging_realization};

    #[test]
    fn realization_round_trip() {
        for r in [diging_realization(0.123456789).unwrap(), dgd_realization(1.0 / 3.0).unwrap()] {
            let text = realization_to_toml(&r, Some("x"));
            assert_eq!(realization_from_toml(&text).unwrap(), r);
        }
    }

    #[test]
    fn wrong_row_length_is_a_parse_error() {
        let text = realization_to_toml(&diging_realization(0.1).unwrap(), None).replacen("A = [[", "A = [[9.0, ", 1);
        assert!(matches!(realization_from_toml(&text), Err(Error::Parse(_))));
    }

    #[test]
    fn wrong_row_count_is_a_dimension_error() {
        let r = diging_realization(0.1).unwrap();
        let mut text = realization_to_toml(&r, None);
        text = text.replace("Cy = [[", "Cy = [[0.0, 0.0, 0.0], [");
        assert!(matches!(realization_from_toml(&text), Err(Error::DimensionMismatch { block: "Cy", .. })));
    }

    #[test]
    fn garbage_is_a_parse_error() {
        assert!(matches!(realization_from_toml("s = ["), Err(Error::Parse(_))));
    }

    #[test]
    fn shaped_keeps_empty_shape() {
        let m = Mat::zeros(0, 4);
        let s = Shaped::from(&m);
        assert_eq!(Mat::try_from(&s).unwrap().shape(), (0, 4));
    }
}
