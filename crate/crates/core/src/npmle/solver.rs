//! Maximisation of `Σ_i c_i log Σ_j A_ij w_j` over the probability simplex.
//!
//! Two schemes share the same problem representation and the same stopping rule, the
//! directional-derivative certificate `max_j g_j − 1 ≤ tol` where
//! `g_j = (1/K) Σ_i c_i A_ij / f_i` and `K = Σ_i c_i`:
//!
//! * [`SolverKind::ConstrainedNewton`]: active-set Newton steps. Each step adds the
//!   local maxima of `g` to the support, solves the quadratic model of the
//!   log-likelihood on that support as a nonnegative least-squares problem and
//!   backtracks along the segment to the NNLS point. Converges in tens of steps.
//! * [`SolverKind::EmVertexExchange`]: multiplicative EM updates `w_j ← w_j g_j` with a
//!   vertex-exchange step every 20 iterations.
//!
//! Either scheme falls back to a vertex-exchange step whenever a Newton step fails to
//! ascend, so the objective is non-decreasing across iterations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::nnls::nnls;
use crate::error::{Error, Result};
use crate::kernels::PmfMatrix;

/// Which ascent scheme to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    #[default]
    ConstrainedNewton,
    EmVertexExchange,
}

/// Stopping and algorithm choices for a fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Certificate tolerance.
    pub tol: f64,
    pub max_iter: usize,
    pub solver: SolverKind,
    /// When set, additionally require `|g_j − 1|` below this on the support.
    pub stationarity_tol: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 20_000,
            solver: SolverKind::default(),
            stationarity_tol: None,
        }
    }
}

impl FitOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }
}

/// Row-scaled likelihood matrix: `A_ij = exp(log q(x_i, r_j) − s_i)` with `s_i` the
/// row maximum, so every row peaks at one. Ratios `A_ij / f_i` are scale free.
#[derive(Debug, Clone)]
pub(crate) struct Problem {
    a: Vec<f64>,
    scale: Vec<f64>,
    mult: Vec<f64>,
    total: f64,
    rows: usize,
    m: usize,
}

pub(crate) struct Outcome {
    pub weights: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl Problem {
    pub fn new(pm: &PmfMatrix) -> Result<Self> {
        Self::with_multiplicities(pm, pm.multiplicities().to_vec())
    }

    /// Same matrix, different row weights (used for fractional zero rows).
    pub fn with_multiplicities(pm: &PmfMatrix, mult: Vec<f64>) -> Result<Self> {
        let (rows, m) = (pm.rows(), pm.cols());
        if m == 0 {
            return Err(Error::EmptyGrid);
        }
        let mut a = vec![0.0; rows * m];
        let mut scale = vec![0.0; rows];
        for i in 0..rows {
            let row = pm.row(i);
            let s = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if s == f64::NEG_INFINITY {
                if mult[i] > 0.0 {
                    return Err(Error::NonFiniteLikelihood { count: pm.values()[i] });
                }
                scale[i] = 0.0;
                continue;
            }
            scale[i] = s;
            for (dst, &v) in a[i * m..(i + 1) * m].iter_mut().zip(row) {
                *dst = (v - s).exp();
            }
        }
        let total = mult.iter().sum();
        Ok(Self {
            a,
            scale,
            mult,
            total,
            rows,
            m,
        })
    }

    pub fn set_multiplicity(&mut self, row: usize, value: f64) {
        self.mult[row] = value;
        self.total = self.mult.iter().sum();
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.a[i * self.m..(i + 1) * self.m]
    }

    /// Scaled densities `f_i = Σ_j A_ij w_j`.
    pub fn densities(&self, w: &[f64]) -> Vec<f64> {
        let support: Vec<usize> = (0..self.m).filter(|&j| w[j] > 0.0).collect();
        (0..self.rows)
            .map(|i| {
                let row = self.row(i);
                support.iter().map(|&j| row[j] * w[j]).sum()
            })
            .collect()
    }

    /// `Σ_i c_i log f_i` in unscaled units.
    pub fn log_likelihood(&self, f: &[f64]) -> f64 {
        self.mult
            .iter()
            .zip(f)
            .zip(&self.scale)
            .filter(|((c, _), _)| **c > 0.0)
            .map(|((c, fi), s)| c * (fi.ln() + s))
            .sum()
    }

    /// Unscaled `log f_i` for row `i`.
    pub fn log_density(&self, f: &[f64], i: usize) -> f64 {
        f[i].ln() + self.scale[i]
    }

    /// `g_j = (1/K) Σ_i c_i A_ij / f_i`.
    pub fn gradient(&self, f: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.m];
        for (i, (&ci, &fi)) in self.mult.iter().zip(f).enumerate() {
            if ci == 0.0 {
                continue;
            }
            let c = ci / (self.total * fi);
            for (gj, &aij) in g.iter_mut().zip(self.row(i)) {
                *gj += c * aij;
            }
        }
        g
    }

    fn active_rows(&self) -> Vec<usize> {
        (0..self.rows).filter(|&i| self.mult[i] > 0.0).collect()
    }

    pub fn uniform_start(&self) -> Vec<f64> {
        vec![1.0 / self.m as f64; self.m]
    }

    /// Each row's multiplicity placed on the atom maximising that row's likelihood,
    /// i.e. the empirical histogram snapped to the grid.
    pub fn empirical_start(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.m];
        for i in self.active_rows() {
            w[argmax(self.row(i))] += self.mult[i] / self.total;
        }
        w
    }

    pub fn solve(&self, opts: &FitOptions, init: Option<&[f64]>) -> Outcome {
        let mut w = match init {
            Some(w0) if w0.len() == self.m && self.start_is_usable(w0) => {
                let s: f64 = w0.iter().sum();
                w0.iter().map(|v| v / s).collect()
            }
            _ if self.total > 0.0 => self.empirical_start(),
            _ => self.uniform_start(),
        };
        let mut f = self.densities(&w);
        let mut ll = self.log_likelihood(&f);
        let mut iterations = 0;
        let mut converged = false;
        let mut gap;
        loop {
            let g = self.gradient(&f);
            gap = clamp_gap(&g);
            if gap <= opts.tol && self.stationary(&w, &g, opts.stationarity_tol) {
                converged = true;
                break;
            }
            if iterations >= opts.max_iter {
                break;
            }
            iterations += 1;
            let stepped = match opts.solver {
                SolverKind::ConstrainedNewton => {
                    self.newton_step(&mut w, &mut f, ll, &g) || self.exchange_then_em(&mut w, &mut f, &g)
                }
                SolverKind::EmVertexExchange => {
                    if iterations % 20 == 0 {
                        self.vertex_exchange(&mut w, &mut f, &g)
                    } else {
                        self.em_step(&mut w, &mut f, &g)
                    }
                }
            };
            let new_ll = self.log_likelihood(&f);
            debug_assert!(
                new_ll >= ll - 1e-9 * ll.abs().max(1.0),
                "objective decreased: {ll} -> {new_ll}"
            );
            let stalled = !stepped || new_ll <= ll;
            ll = new_ll;
            if stalled && gap <= opts.tol.max(1e-13) * 10.0 {
                // Numerically converged on the support; nothing left to gain.
                let g = self.gradient(&f);
                converged = clamp_gap(&g) <= opts.tol && self.stationary(&w, &g, opts.stationarity_tol);
                break;
            }
        }
        Outcome {
            weights: w,
            iterations,
            converged,
        }
    }

    fn start_is_usable(&self, w: &[f64]) -> bool {
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) || w.iter().sum::<f64>() <= 0.0 {
            return false;
        }
        let f = self.densities(w);
        (0..self.rows).all(|i| self.mult[i] == 0.0 || f[i] > 0.0)
    }

    fn stationary(&self, w: &[f64], g: &[f64], tol: Option<f64>) -> bool {
        match tol {
            None => true,
            Some(t) => w
                .iter()
                .zip(g)
                .filter(|(wj, _)| **wj > 0.0)
                .all(|(_, gj)| (gj - 1.0).abs() <= t),
        }
    }

    /// Multiplicative EM update; preserves the simplex because `Σ_j w_j g_j = 1`.
    fn em_step(&self, w: &mut [f64], f: &mut Vec<f64>, g: &[f64]) -> bool {
        let mut total = 0.0;
        for (wj, gj) in w.iter_mut().zip(g) {
            *wj *= gj;
            total += *wj;
        }
        for wj in w.iter_mut() {
            *wj /= total;
            if *wj < 1e-300 {
                *wj = 0.0;
            }
        }
        *f = self.densities(w);
        true
    }

    fn exchange_then_em(&self, w: &mut [f64], f: &mut Vec<f64>, g: &[f64]) -> bool {
        let moved = self.vertex_exchange(w, f, g);
        let g2 = self.gradient(f);
        self.em_step(w, f, &g2) || moved
    }

    /// Moves mass from the worst support atom to the best grid atom with an exact
    /// line search on the concave one-dimensional problem.
    fn vertex_exchange(&self, w: &mut [f64], f: &mut Vec<f64>, g: &[f64]) -> bool {
        let best = argmax(g);
        let worst = (0..self.m)
            .filter(|&j| w[j] > 0.0)
            .min_by(|&a, &b| g[a].total_cmp(&g[b]));
        let Some(worst) = worst else { return false };
        if best == worst || g[best] <= g[worst] {
            return false;
        }
        let rows = self.active_rows();
        let diff: Vec<f64> = rows.iter().map(|&i| self.row(i)[best] - self.row(i)[worst]).collect();
        let slope = |delta: f64| -> f64 {
            rows.iter()
                .zip(&diff)
                .map(|(&i, d)| self.mult[i] * d / (f[i] + delta * d))
                .sum()
        };
        let cap = w[worst];
        let delta = if slope(cap) >= 0.0 {
            cap
        } else {
            let (mut lo, mut hi) = (0.0, cap);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if slope(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-16 * cap {
                    break;
                }
            }
            lo
        };
        if delta <= 0.0 {
            return false;
        }
        w[worst] -= delta;
        if w[worst] <= 1e-300 || delta == cap {
            w[worst] = 0.0;
        }
        w[best] += delta;
        for (&i, d) in rows.iter().zip(&diff) {
            f[i] += delta * d;
        }
        // Refresh to avoid drift from the incremental update.
        *f = self.densities(w);
        true
    }

    /// One constrained Newton step; returns false when it cannot ascend.
    fn newton_step(&self, w: &mut [f64], f: &mut Vec<f64>, ll: f64, g: &[f64]) -> bool {
        let mut cand: Vec<usize> = (0..self.m).filter(|&j| w[j] > 0.0).collect();
        for j in 0..self.m {
            let left = if j > 0 { g[j - 1] } else { f64::NEG_INFINITY };
            let right = if j + 1 < self.m { g[j + 1] } else { f64::NEG_INFINITY };
            if g[j] > 1.0 && g[j] >= left && g[j] >= right {
                cand.push(j);
            }
        }
        cand.push(argmax(g));
        cand.sort_unstable();
        cand.dedup();

        // Quadratic model of the log-likelihood on the simplex: least squares in
        // `√c_i A_ij / f_i` against `2√c_i`, plus a heavy row pinning `Σ w = 1`.
        // Without that row the model is degenerate once the candidates outnumber
        // the rows, since `A x = 2f` is then solvable.
        let rows = self.active_rows();
        let pin = 100.0 * self.total.sqrt();
        let mat = DMatrix::from_fn(rows.len() + 1, cand.len(), |r, c| {
            if r == rows.len() {
                pin
            } else {
                let i = rows[r];
                self.mult[i].sqrt() * self.row(i)[cand[c]] / f[i]
            }
        });
        let rhs = DVector::from_fn(rows.len() + 1, |r, _| {
            if r == rows.len() {
                pin
            } else {
                2.0 * self.mult[rows[r]].sqrt()
            }
        });
        let warm: Vec<usize> = cand
            .iter()
            .enumerate()
            .filter(|(_, &j)| w[j] > 0.0)
            .map(|(c, _)| c)
            .collect();
        let x = nnls(&mat, &rhs, &warm, 10 * cand.len() + 50);
        let sum: f64 = x.iter().sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return false;
        }
        let target: Vec<f64> = x.iter().map(|v| v / sum).collect();
        let predicted: f64 = self.total * (cand.iter().zip(&target).map(|(&j, t)| t * g[j]).sum::<f64>() - 1.0);
        if !(predicted > 0.0) {
            return false;
        }
        let f_target: Vec<f64> = (0..self.rows)
            .map(|i| cand.iter().zip(&target).map(|(&j, t)| self.row(i)[j] * t).sum())
            .collect();
        let mut alpha = 1.0;
        for _ in 0..50 {
            let f_alpha: Vec<f64> = f
                .iter()
                .zip(&f_target)
                .map(|(a, b)| (1.0 - alpha) * a + alpha * b)
                .collect();
            let valid = rows.iter().all(|&i| f_alpha[i] > 0.0);
            if valid {
                let ll_alpha = self.log_likelihood(&f_alpha);
                if ll_alpha >= ll + alpha * predicted / 3.0 {
                    let mut next = vec![0.0; self.m];
                    for (j, wj) in w.iter().enumerate() {
                        next[j] = (1.0 - alpha) * wj;
                    }
                    for (&j, t) in cand.iter().zip(&target) {
                        next[j] += alpha * t;
                    }
                    for v in next.iter_mut() {
                        if *v < 1e-300 {
                            *v = 0.0;
                        }
                    }
                    w.copy_from_slice(&next);
                    *f = self.densities(w);
                    return true;
                }
            }
            alpha *= 0.5;
        }
        false
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (j, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = j;
        }
    }
    best
}

/// `max_j g_j − 1`, clamped below at zero.
pub(crate) fn clamp_gap(g: &[f64]) -> f64 {
    (g.iter().copied().fold(f64::NEG_INFINITY, f64::max) - 1.0).max(0.0)
}
