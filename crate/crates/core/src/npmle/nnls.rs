//! Lawson–Hanson nonnegative least squares with an optional starting active set.

use nalgebra::{DMatrix, DVector};

/// Solves `min ‖A x − b‖₂` subject to `x ≥ 0`.
///
/// `warm` lists columns expected to be positive at the solution; they seed the
/// passive set after being made feasible.
pub(crate) fn nnls(a: &DMatrix<f64>, b: &DVector<f64>, warm: &[usize], max_iter: usize) -> DVector<f64> {
    let (rows, cols) = a.shape();
    let mut x = DVector::zeros(cols);
    if cols == 0 {
        return x;
    }
    let norm1 = (0..cols)
        .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let tol = 10.0 * f64::EPSILON * norm1 * rows.max(cols) as f64;

    let mut passive = vec![false; cols];
    let mut excluded = vec![false; cols];
    for &j in warm {
        if j < cols {
            passive[j] = true;
        }
    }
    // Seed: drop warm columns until the unconstrained solution on them is positive.
    loop {
        let set: Vec<usize> = (0..cols).filter(|&j| passive[j]).collect();
        if set.is_empty() {
            break;
        }
        let s = lstsq(a, b, &set);
        let mut all_pos = true;
        for (idx, &j) in set.iter().enumerate() {
            if s[idx] <= 0.0 {
                passive[j] = false;
                all_pos = false;
            }
        }
        if all_pos {
            for (idx, &j) in set.iter().enumerate() {
                x[j] = s[idx];
            }
            break;
        }
    }

    let mut iter = 0;
    loop {
        iter += 1;
        if iter > max_iter {
            break;
        }
        let resid = b - a * &x;
        let grad = a.transpose() * resid;
        let mut best: Option<usize> = None;
        for j in 0..cols {
            if passive[j] || excluded[j] {
                continue;
            }
            if grad[j] > tol && best.is_none_or(|bj| grad[j] > grad[bj]) {
                best = Some(j);
            }
        }
        let Some(enter) = best else { break };
        passive[enter] = true;

        let mut inner = 0;
        loop {
            inner += 1;
            let set: Vec<usize> = (0..cols).filter(|&j| passive[j]).collect();
            let s = lstsq(a, b, &set);
            if set.iter().enumerate().all(|(idx, _)| s[idx] > 0.0) {
                x.fill(0.0);
                for (idx, &j) in set.iter().enumerate() {
                    x[j] = s[idx];
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            let mut blocking = None;
            for (idx, &j) in set.iter().enumerate() {
                if s[idx] <= 0.0 {
                    let denom = x[j] - s[idx];
                    let ratio = if denom > 0.0 { x[j] / denom } else { 0.0 };
                    if ratio < alpha {
                        alpha = ratio;
                        blocking = Some(j);
                    }
                }
            }
            for (idx, &j) in set.iter().enumerate() {
                x[j] += alpha * (s[idx] - x[j]);
                if x[j] <= 0.0 {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            }
            if let Some(j) = blocking {
                x[j] = 0.0;
                passive[j] = false;
            }
            if inner == 1 && !passive[enter] {
                // Entering column could not be made positive: keep it out.
                excluded[enter] = true;
                break;
            }
            if inner > cols + 5 {
                break;
            }
        }
    }
    x
}

/// Least squares restricted to the columns in `set`.
fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>, set: &[usize]) -> DVector<f64> {
    let rows = a.nrows();
    let sub = DMatrix::from_fn(rows, set.len(), |i, c| a[(i, set[c])]);
    if set.len() <= rows {
        let qr = sub.clone().qr();
        let r = qr.r();
        let diag_max = r.diagonal().iter().map(|v| v.abs()).fold(0.0, f64::max);
        let well_posed = r
            .diagonal()
            .iter()
            .all(|v| v.abs() > 1e-12 * diag_max.max(f64::MIN_POSITIVE));
        if well_posed {
            let qtb = qr.q().transpose() * b;
            if let Some(sol) = r.solve_upper_triangular(&qtb) {
                return sol;
            }
        }
    }
    let svd = sub.svd(true, true);
    let eps = 1e-13 * svd.singular_values.iter().copied().fold(0.0, f64::max);
    svd.solve(b, eps).unwrap_or_else(|_| DVector::zeros(set.len()))
}
