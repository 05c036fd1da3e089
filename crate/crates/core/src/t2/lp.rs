//! Dense two-phase simplex for small box-constrained linear programs.
//!
//! Problems here are tiny (tens of variables), so a plain tableau with
//! Bland's rule is plenty. Box bounds are folded into standard form by
//! shifting each variable to its lower bound and adding a slack row for
//! the width.

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
}

const TOL: f64 = 1e-9;

/// Maximize c'x subject to A x = b and l <= x <= u.
pub(crate) fn solve_lp(
    c: &[f64],
    a_rows: &[Vec<f64>],
    b: &[f64],
    lower: &[f64],
    upper: &[f64],
) -> Result<LpOutcome> {
    let n = c.len();
    if lower.len() != n || upper.len() != n {
        return Err(invalid("lp bounds must match the variable count"));
    }
    if a_rows.len() != b.len() || a_rows.iter().any(|r| r.len() != n) {
        return Err(invalid("lp constraint shapes are inconsistent"));
    }
    if lower.iter().zip(upper).any(|(l, u)| l > u) {
        return Ok(LpOutcome::Infeasible);
    }

    // shift x = l + y with 0 <= y <= u - l; bound rows y_j + t_j = u_j - l_j
    let m = a_rows.len();
    let width: Vec<f64> = upper.iter().zip(lower).map(|(u, l)| u - l).collect();
    let rows = m + n;
    // columns: y (n) | t (n) | artificials (m) | rhs
    let art0 = 2 * n;
    let cols = 2 * n + m + 1;
    let rhs_col = cols - 1;
    let mut t = vec![vec![0.0; cols]; rows];
    let mut basis = vec![0usize; rows];

    for i in 0..m {
        let mut rhs = b[i];
        for j in 0..n {
            rhs -= a_rows[i][j] * lower[j];
        }
        let flip = if rhs < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[i][j] = flip * a_rows[i][j];
        }
        t[i][art0 + i] = 1.0;
        t[i][rhs_col] = flip * rhs;
        basis[i] = art0 + i;
    }
    for j in 0..n {
        let r = m + j;
        t[r][j] = 1.0;
        t[r][n + j] = 1.0;
        t[r][rhs_col] = width[j];
        basis[r] = n + j; // slack starts basic
    }

    // phase 1: minimize the artificial sum, i.e. maximize its negation
    let mut obj = vec![0.0; cols];
    for i in 0..m {
        obj[art0 + i] = -1.0;
    }
    price_out(&mut obj, &t, &basis);
    simplex(&mut t, &mut basis, &mut obj, art0, cols)?;
    if obj[rhs_col].abs() > 1e-7 {
        return Ok(LpOutcome::Infeasible);
    }
    // pivot any artificial still basic (at zero) out of the basis
    for r in 0..rows {
        if basis[r] >= art0 {
            if let Some(j) = (0..art0).find(|&j| t[r][j].abs() > TOL) {
                pivot(&mut t, &mut basis, r, j);
            }
        }
    }

    // phase 2: the real objective over y, artificials barred from entry
    let mut obj = vec![0.0; cols];
    for (j, &cj) in c.iter().enumerate() {
        obj[j] = cj;
    }
    price_out(&mut obj, &t, &basis);
    simplex(&mut t, &mut basis, &mut obj, art0, cols)?;

    let mut y = vec![0.0; n];
    for (r, &bj) in basis.iter().enumerate() {
        if bj < n {
            y[bj] = t[r][rhs_col];
        }
    }
    let x: Vec<f64> = y.iter().zip(lower).map(|(yi, l)| yi + l).collect();
    let value = c.iter().zip(&x).map(|(c, x)| c * x).sum();
    Ok(LpOutcome::Optimal { x, value })
}

/// Make the objective row consistent with the current basis (zero reduced
/// cost on basic columns).
fn price_out(obj: &mut [f64], t: &[Vec<f64>], basis: &[usize]) {
    for (r, &bj) in basis.iter().enumerate() {
        let f = obj[bj];
        if f != 0.0 {
            for j in 0..obj.len() {
                obj[j] -= f * t[r][j];
            }
        }
    }
}

/// Primal simplex with Bland's rule; columns >= `barred` never enter.
fn simplex(
    t: &mut [Vec<f64>],
    basis: &mut [usize],
    obj: &mut [f64],
    barred: usize,
    cols: usize,
) -> Result<()> {
    let rhs_col = cols - 1;
    for _ in 0..20_000 {
        let Some(enter) = (0..barred).find(|&j| obj[j] > TOL) else {
            return Ok(());
        };
        let mut leave: Option<(usize, f64)> = None;
        for (r, row) in t.iter().enumerate() {
            if row[enter] > TOL {
                let ratio = row[rhs_col] / row[enter];
                match leave {
                    Some((lr, lv)) if ratio > lv || (ratio == lv && basis[r] >= basis[lr]) => {}
                    _ => leave = Some((r, ratio)),
                }
            }
        }
        let Some((r, _)) = leave else {
            // unbounded cannot occur with finite boxes; treat as numeric trouble
            return Err(crate::error::Error::Numeric("simplex detected an unbounded ray".into()));
        };
        pivot(t, basis, r, enter);
        let f = obj[enter];
        if f != 0.0 {
            for j in 0..cols {
                obj[j] -= f * t[r][j];
            }
        }
    }
    Err(crate::error::Error::Numeric("simplex failed to converge".into()))
}

fn pivot(t: &mut [Vec<f64>], basis: &mut [usize], r: usize, j: usize) {
    let cols = t[r].len();
    let d = t[r][j];
    for col in 0..cols {
        t[r][col] /= d;
    }
    for i in 0..t.len() {
        if i != r && t[i][j].abs() > 0.0 {
            let f = t[i][j];
            for col in 0..cols {
                t[i][col] -= f * t[r][col];
            }
        }
    }
    basis[r] = j;
}
