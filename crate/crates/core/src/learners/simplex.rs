//! Least squares over the probability simplex: minimize `||P w - y||^2`
//! subject to `w >= 0` and `sum(w) = 1`, for a handful of columns.
//!
//! The optimum lies on some face of the simplex and is the equality-
//! constrained least-squares solution on that face. Every support set is
//! tried; vertices are always feasible, so the result is never worse than
//! the best single column.

/// Squared error of the combination `w` of the columns of `panel` (rows are
/// observations) against `y`.
pub fn squared_error(panel: &[Vec<f64>], w: &[f64], y: &[f64]) -> f64 {
    panel
        .iter()
        .zip(y)
        .map(|(row, t)| {
            let fit: f64 = row.iter().zip(w).map(|(a, b)| a * b).sum();
            (fit - t) * (fit - t)
        })
        .sum()
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting; `None`
/// when a pivot is negligible.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= 1e-12 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Weights minimizing the squared error on the simplex. Ties keep the
/// candidate found first (supports in increasing bitmask order).
pub fn simplex_least_squares(panel: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let m = panel.first().map_or(0, Vec::len);
    assert!(m > 0 && m <= 16, "simplex least squares supports 1 to 16 columns");
    let gram: Vec<Vec<f64>> = (0..m)
        .map(|i| (0..m).map(|j| panel.iter().map(|r| r[i] * r[j]).sum()).collect())
        .collect();
    let rhs: Vec<f64> = (0..m).map(|i| panel.iter().zip(y).map(|(r, t)| r[i] * t).sum()).collect();

    let mut best_w = vec![0.0; m];
    best_w[0] = 1.0;
    let mut best = squared_error(panel, &best_w, y);
    for mask in 1u32..(1 << m) {
        let support: Vec<usize> = (0..m).filter(|&i| mask & (1 << i) != 0).collect();
        let s = support.len();
        let w = if s == 1 {
            let mut w = vec![0.0; m];
            w[support[0]] = 1.0;
            w
        } else {
            // KKT system of the equality-constrained problem on the face
            let mut a = vec![vec![0.0; s + 1]; s + 1];
            let mut b = vec![0.0; s + 1];
            for (r, &i) in support.iter().enumerate() {
                for (c, &j) in support.iter().enumerate() {
                    a[r][c] = gram[i][j];
                }
                a[r][s] = 1.0;
                a[s][r] = 1.0;
                b[r] = rhs[i];
            }
            b[s] = 1.0;
            let Some(sol) = solve(a, b) else { continue };
            if sol[..s].iter().any(|&v| v < 0.0 || !v.is_finite()) {
                continue;
            }
            let mut w = vec![0.0; m];
            let total: f64 = sol[..s].iter().sum();
            for (k, &i) in support.iter().enumerate() {
                w[i] = sol[k] / total;
            }
            w
        };
        let err = squared_error(panel, &w, y);
        if err < best {
            best = err;
            best_w = w;
        }
    }
    best_w
}
