//! Cubic B-spline expansion of a continuous covariate.
//!
//! Interior knots sit at empirical quantiles of the column; boundary knots at
//! the extremes with the usual 4-fold clamping.  The full basis (k + 4
//! functions for k interior knots) sums to one at every point; the design
//! block drops the first column and centers the remaining k + 3, so each
//! expanded covariate contributes q_l = knots + 3 columns without an
//! intercept.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplineBasis {
    /// Full clamped knot vector (length k + 8).
    pub knots: Vec<f64>,
    /// Column means subtracted from the kept columns.
    pub centers: Vec<f64>,
    /// Number of kept (centered) columns: interior knots + 3.
    pub n_cols: usize,
}

/// Build the spline design block for one column.  Returns the basis
/// description and the n x (knots + 3) design rows.
pub fn spline_basis(x: &[f64], interior_knots: usize) -> Result<(SplineBasis, Vec<Vec<f64>>)> {
    let n = x.len();
    let mut distinct: Vec<f64> = x.to_vec();
    distinct.sort_by(|a, b| a.total_cmp(b));
    distinct.dedup();
    if distinct.len() < interior_knots + 4 {
        return Err(Error::Invalid(format!(
            "spline expansion needs at least {} distinct values, column has {}",
            interior_knots + 4,
            distinct.len()
        )));
    }
    let lo = distinct[0];
    let hi = *distinct.last().unwrap();
    // interior knots at empirical quantiles of the distinct values
    let mut knots = vec![lo; 4];
    for j in 1..=interior_knots {
        let q = j as f64 / (interior_knots + 1) as f64;
        let pos = q * (distinct.len() - 1) as f64;
        let i0 = pos.floor() as usize;
        let frac = pos - i0 as f64;
        let v = if i0 + 1 < distinct.len() {
            distinct[i0] * (1.0 - frac) + distinct[i0 + 1] * frac
        } else {
            distinct[i0]
        };
        knots.push(v);
    }
    knots.extend_from_slice(&[hi; 4]);

    let n_full = interior_knots + 4;
    let basis = SplineBasis {
        knots,
        centers: vec![0.0; n_full - 1],
        n_cols: n_full - 1,
    };
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut sums = vec![0.0f64; n_full - 1];
    for &xi in x {
        let full = eval_full_basis(&basis.knots, n_full, xi);
        let kept: Vec<f64> = full[1..].to_vec();
        for (s, v) in sums.iter_mut().zip(&kept) {
            *s += v;
        }
        rows.push(kept);
    }
    let mut basis = basis;
    for (c, s) in basis.centers.iter_mut().zip(&sums) {
        *c = s / n as f64;
    }
    for row in &mut rows {
        for (v, c) in row.iter_mut().zip(&basis.centers) {
            *v -= c;
        }
    }
    Ok((basis, rows))
}

impl SplineBasis {
    /// Evaluate the centered design row at a new point (clamped to the knot range).
    pub fn row(&self, x: f64) -> Vec<f64> {
        let n_full = self.n_cols + 1;
        let full = eval_full_basis(&self.knots, n_full, x);
        full[1..]
            .iter()
            .zip(&self.centers)
            .map(|(v, c)| v - c)
            .collect()
    }
}

/// Cox-de Boor evaluation of all cubic B-spline basis functions at x.
///
/// Knot layout: 4 copies of lo, interior knots, 4 copies of hi, so the valid
/// span indices run from 3 to n_basis - 1.
fn eval_full_basis(knots: &[f64], n_basis: usize, x: f64) -> Vec<f64> {
    let degree = 3usize;
    let lo = knots[degree];
    let hi = knots[n_basis];
    let x = x.clamp(lo, hi);
    let span = if x >= hi {
        n_basis - 1
    } else {
        let mut a = degree;
        let mut b = n_basis - 1;
        while a < b {
            let mid = (a + b + 1) / 2;
            if knots[mid] <= x {
                a = mid;
            } else {
                b = mid - 1;
            }
        }
        a
    };
    // de Boor's algorithm for the degree+1 basis values active on this span
    let mut left = [0.0f64; 4];
    let mut right = [0.0f64; 4];
    let mut ndu = [0.0f64; 4];
    ndu[0] = 1.0;
    for j in 1..=degree {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom != 0.0 { ndu[r] / denom } else { 0.0 };
            ndu[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j] = saved;
    }
    let mut out = vec![0.0; n_basis];
    for (r, &v) in ndu.iter().enumerate() {
        out[span - degree + r] = v;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_interior_knots_gives_three_columns() {
        let x: Vec<f64> = (0..20).map(|i| i as f64 / 19.0).collect();
        let (basis, rows) = spline_basis(&x, 0).unwrap();
        assert_eq!(basis.n_cols, 3);
        assert_eq!(rows[0].len(), 3);
    }

    #[test]
    fn constant_column_is_an_error() {
        let x = vec![1.0; 30];
        assert!(spline_basis(&x, 0).is_err());
        assert!(spline_basis(&[1.0, 2.0, 3.0], 2).is_err());
    }

    #[test]
    fn partition_of_unity_before_centering() {
        let x: Vec<f64> = (0..101).map(|i| i as f64 / 100.0).collect();
        let (basis, _) = spline_basis(&x, 2).unwrap();
        let n_full = basis.n_cols + 1;
        for &xi in &x {
            let full = eval_full_basis(&basis.knots, n_full, xi);
            let s: f64 = full.iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "sum at {xi} = {s}");
            assert!(full.iter().all(|&v| v >= -1e-12));
        }
    }

    #[test]
    fn columns_are_centered_and_dimension_matches() {
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let (basis, rows) = spline_basis(&x, 4).unwrap();
        assert_eq!(basis.n_cols, 7); // knots + 3
        for j in 0..basis.n_cols {
            let mean: f64 = rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64;
            assert!(mean.abs() < 1e-12);
        }
        // row() reproduces the training rows
        for (i, &xi) in x.iter().enumerate() {
            let r = basis.row(xi);
            for j in 0..basis.n_cols {
                assert!((r[j] - rows[i][j]).abs() < 1e-12);
            }
        }
    }
}
