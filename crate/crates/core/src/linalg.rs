//! Small dense linear-algebra helpers for the built-in learners.

use crate::error::{Error, Result};

/// Solve A x = b for symmetric positive-definite-ish A via Gaussian
/// elimination with partial pivoting. A is given row-major, n x n.
pub(crate) fn solve_dense(a: &[f64], b: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut m = a.to_vec();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let mut piv = col;
        for row in col + 1..n {
            if m[row * n + col].abs() > m[piv * n + col].abs() {
                piv = row;
            }
        }
        if m[piv * n + col].abs() < 1e-300 {
            return Err(Error::Numeric("singular system in least squares".into()));
        }
        if piv != col {
            for j in 0..n {
                m.swap(col * n + j, piv * n + j);
            }
            rhs.swap(col, piv);
        }
        let d = m[col * n + col];
        for row in col + 1..n {
            let f = m[row * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                m[row * n + j] -= f * m[col * n + j];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = rhs[row];
        for j in row + 1..n {
            s -= m[row * n + j] * x[j];
        }
        x[row] = s / m[row * n + row];
    }
    Ok(x)
}

/// Weighted ridge least squares: argmin_b sum_i w_i (y_i - x_i'b)^2 + ridge |b|^2.
///
/// `rows` yields the design row for each observation; all rows must have
/// length `p`.
pub(crate) fn weighted_least_squares(
    rows: &[Vec<f64>],
    y: &[f64],
    w: &[f64],
    ridge: f64,
) -> Result<Vec<f64>> {
    let p = rows.first().map_or(0, Vec::len);
    if p == 0 {
        return Err(Error::Estimation("empty design matrix".into()));
    }
    let mut xtx = vec![0.0; p * p];
    let mut xty = vec![0.0; p];
    for ((row, &yi), &wi) in rows.iter().zip(y).zip(w) {
        if wi == 0.0 {
            continue;
        }
        for j in 0..p {
            let xw = wi * row[j];
            xty[j] += xw * yi;
            for k in j..p {
                xtx[j * p + k] += xw * row[k];
            }
        }
    }
    for j in 0..p {
        for k in 0..j {
            xtx[j * p + k] = xtx[k * p + j];
        }
        xtx[j * p + j] += ridge;
    }
    solve_dense(&xtx, &xty, p)
}

/// Design row with a leading intercept.
pub(crate) fn basis_row(x: &[f64]) -> Vec<f64> {
    let mut row = Vec::with_capacity(x.len() + 1);
    row.push(1.0);
    row.extend_from_slice(x);
    row
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_exact_linear_fit() {
        // y = 1 + 2x recovered from four points
        let rows: Vec<Vec<f64>> = [0.0, 1.0, 2.0, 3.0].iter().map(|&x| vec![1.0, x]).collect();
        let y = vec![1.0, 3.0, 5.0, 7.0];
        let w = vec![1.0; 4];
        let b = weighted_least_squares(&rows, &y, &w, 0.0).unwrap();
        assert!((b[0] - 1.0).abs() < 1e-10);
        assert!((b[1] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn zero_weights_drop_rows() {
        let rows: Vec<Vec<f64>> = [0.0, 1.0, 5.0].iter().map(|&x| vec![1.0, x]).collect();
        let y = vec![0.0, 2.0, 100.0];
        let w = vec![1.0, 1.0, 0.0];
        let b = weighted_least_squares(&rows, &y, &w, 0.0).unwrap();
        assert!((b[1] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn singular_rejected() {
        let rows = vec![vec![1.0, 2.0], vec![1.0, 2.0]];
        let y = vec![1.0, 2.0];
        let w = vec![1.0, 1.0];
        assert!(weighted_least_squares(&rows, &y, &w, 0.0).is_err());
    }
}
