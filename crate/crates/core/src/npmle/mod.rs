//! Nonparametric maximum likelihood for count mixtures.
//!
//! Given counts `N_1, …, N_k` and a kernel `q_n`, the NPMLE maximises
//! `L(π) = Σ_i log f_π(N_i)` over all mixing distributions on `[0, 1]`. We restrict
//! `π` to a data-driven grid ([`build_grid`]) and solve the resulting concave program
//! over the simplex. Every fit carries its own optimality certificate: the largest
//! directional derivative `(1/k) Σ_i q_n(N_i, r_j) / f_π̂(N_i) − 1` over grid atoms,
//! which is nonpositive exactly at the maximiser.
//!
//! Variants:
//! * [`fit_localized`] fits only the counts whose empirical rate is small;
//! * [`fit_penalized`] jointly selects a (real-valued) support size `k' ≥ k` when only
//!   the nonzero counts were observed.

mod localized;
mod nnls;
mod penalized;
mod solver;

use serde::{Deserialize, Serialize};

pub use localized::{fit_localized, LocalizedConfig, LocalizedFit};
pub use penalized::{
    fit_penalized, penalized_likelihood, scaled_kl_profile, PenalizedConfig, PenalizedFitResult, ProfilePoint,
    Regularizer,
};
pub use solver::{FitOptions, SolverKind};

pub(crate) use solver::Problem;

use crate::error::{invalid, Error, Result};
use crate::kernels::{
    compress_counts, ln_factorial, mixture_log_density, pmf_matrix, MixingDistribution, MixtureKernel,
};

/// Weights below this are dropped from a finished fit.
pub const PRUNE_FLOOR: f64 = 1e-12;

/// The observed multiset of frequency counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountData {
    counts: Vec<u64>,
    n: u64,
    k: usize,
}

impl CountData {
    /// Counts with `k` equal to their number.
    pub fn new(counts: Vec<u64>, n: u64) -> Result<Self> {
        let k = counts.len();
        Self::with_k(counts, n, k)
    }

    /// Counts padded with `k − counts.len()` implicit zeros.
    pub fn with_k(counts: Vec<u64>, n: u64, k: usize) -> Result<Self> {
        if n == 0 {
            return Err(invalid("concentration n must be at least 1"));
        }
        if k < counts.len() {
            return Err(invalid(format!(
                "alphabet size {k} is smaller than the {} counts supplied",
                counts.len()
            )));
        }
        if k == 0 {
            return Err(Error::EmptyCounts);
        }
        Ok(Self { counts, n, k })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn implicit_zeros(&self) -> usize {
        self.k - self.counts.len()
    }

    /// Count of category `i`, implicit zeros included.
    pub fn get(&self, i: usize) -> u64 {
        self.counts.get(i).copied().unwrap_or(0)
    }

    /// All `k` counts, implicit zeros last.
    pub fn iter_all(&self) -> impl Iterator<Item = u64> + '_ {
        self.counts
            .iter()
            .copied()
            .chain(std::iter::repeat_n(0, self.implicit_zeros()))
    }

    pub fn max_count(&self) -> u64 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn positive(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    /// Number of distinct values among all `k` counts.
    pub fn distinct(&self) -> usize {
        compress_counts(self).0.len()
    }

    /// `p̂_i = N_i / n`.
    pub fn p_hat(&self, i: usize) -> f64 {
        self.get(i) as f64 / self.n as f64
    }

    /// Same data without the zero counts (explicit or implicit).
    pub fn positive_only(&self) -> Result<Self> {
        let counts: Vec<u64> = self.counts.iter().copied().filter(|&c| c > 0).collect();
        Self::new(counts, self.n)
    }

    /// Subset by category index (indices `≥ counts.len()` are implicit zeros).
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Self::new(indices.iter().map(|&i| self.get(i)).collect(), self.n)
    }
}

/// Strictly increasing atoms in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    atoms: Vec<f64>,
}

impl Grid {
    pub fn new(atoms: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::EmptyGrid);
        }
        if atoms.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(invalid("grid atoms must lie in [0, 1]"));
        }
        if atoms.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("grid atoms must be strictly increasing"));
        }
        Ok(Self { atoms })
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Largest gap between adjacent atoms.
    pub fn max_spacing(&self) -> f64 {
        self.atoms.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// Larger of the two gaps adjacent to atom `j`.
    pub fn spacing_at(&self, j: usize) -> f64 {
        let left = if j > 0 { self.atoms[j] - self.atoms[j - 1] } else { 0.0 };
        let right = if j + 1 < self.atoms.len() {
            self.atoms[j + 1] - self.atoms[j]
        } else {
            0.0
        };
        left.max(right)
    }

    /// Removes atoms in `(0, min_mass)`. If no positive atom survives, `min_mass`
    /// itself is inserted so positive counts stay explainable.
    pub fn without_small_atoms(&self, min_mass: f64) -> Result<Self> {
        if !(min_mass > 0.0 && min_mass <= 1.0) {
            return Err(invalid("min_mass must lie in (0, 1]"));
        }
        let had_positive = self.atoms.iter().any(|&a| a > 0.0);
        let mut atoms: Vec<f64> = self
            .atoms
            .iter()
            .copied()
            .filter(|&a| a == 0.0 || a >= min_mass)
            .collect();
        if had_positive && !atoms.iter().any(|&a| a > 0.0) {
            atoms.push(min_mass);
        }
        Self::new(atoms)
    }
}

/// Grid-size rule `max(500, min(2000, ⌈10·√k⌉))`.
pub fn default_grid_size(k: usize) -> usize {
    let rule = (10.0 * (k as f64).sqrt()).ceil() as usize;
    rule.clamp(0, 2000).max(500)
}

/// Grid construction knobs shared by every fitting entry point.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GridOptions {
    /// Number of grid points; `None` applies [`default_grid_size`].
    pub size: Option<usize>,
    /// Declared minimum nonzero mass; grid atoms in `(0, min_mass)` are removed.
    pub min_mass: Option<f64>,
}

impl GridOptions {
    pub fn sized(size: usize) -> Self {
        Self {
            size: Some(size),
            min_mass: None,
        }
    }

    pub fn resolve_size(&self, k: usize) -> usize {
        self.size.unwrap_or_else(|| default_grid_size(k))
    }

    pub fn build(&self, counts: &CountData) -> Result<Grid> {
        let grid = build_grid(counts, self.resolve_size(counts.k()))?;
        match self.min_mass {
            Some(mm) => grid.without_small_atoms(mm),
            None => Ok(grid),
        }
    }
}

/// Data-driven grid on the probability scale.
///
/// With `p̄ = min(max N_i / n, 1)` and `τ = min(1.6 ln n / n, 1)`: when `p̄ ≤ τ`, `m`
/// points uniformly on `[0, p̄]`; otherwise `⌈m/2⌉` points uniformly on `[0, τ]` and
/// `⌊m/2⌋` on `(τ, p̄]`. All-zero data gives `{0}` plus nine points in `(0, 1/n]`.
pub fn build_grid(counts: &CountData, m: usize) -> Result<Grid> {
    if counts.k() == 0 {
        return Err(Error::EmptyCounts);
    }
    if m < 2 {
        return Err(invalid("grid size must be at least 2"));
    }
    let n = counts.n() as f64;
    let max_count = counts.max_count();
    if max_count == 0 {
        let mut atoms = vec![0.0];
        atoms.extend((1..=9).map(|j| j as f64 / (9.0 * n)));
        return Grid::new(atoms);
    }
    let p_bar = (max_count as f64 / n).min(1.0);
    let tau = (1.6 * n.ln() / n).min(1.0);
    let mut atoms: Vec<f64> = if tau <= 0.0 || p_bar <= tau {
        uniform(0.0, p_bar, m)
    } else {
        let low = m.div_ceil(2);
        let high = m / 2;
        let mut a = uniform(0.0, tau, low);
        let step = (p_bar - tau) / high as f64;
        a.extend((1..=high).map(|i| if i == high { p_bar } else { tau + i as f64 * step }));
        a
    };
    atoms.dedup();
    Grid::new(atoms)
}

fn uniform(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    if m == 1 {
        return vec![lo];
    }
    (0..m)
        .map(|j| {
            if j == m - 1 {
                hi
            } else {
                lo + (hi - lo) * j as f64 / (m - 1) as f64
            }
        })
        .collect()
}

/// A fitted mixing distribution with its diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub mixing: MixingDistribution,
    /// `Σ_i log f_π̂(N_i)`.
    pub log_likelihood: f64,
    /// `max_j D_π̂(δ_{r_j})`, clamped below at zero.
    pub optimality_gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Fits the NPMLE with the default solver.
pub fn fit_npmle(
    counts: &CountData,
    grid: &Grid,
    kernel: &MixtureKernel,
    tol: f64,
    max_iter: usize,
) -> Result<FitResult> {
    let opts = FitOptions {
        tol,
        max_iter,
        ..FitOptions::default()
    };
    fit_npmle_with(counts, grid, kernel, &opts)
}

pub fn fit_npmle_with(counts: &CountData, grid: &Grid, kernel: &MixtureKernel, opts: &FitOptions) -> Result<FitResult> {
    if !(opts.tol > 0.0) {
        return Err(invalid("tolerance must be positive"));
    }
    let pm = pmf_matrix(kernel, counts, grid)?;
    let problem = Problem::new(&pm)?;
    let outcome = problem.solve(opts, None);
    finish(
        &problem,
        grid,
        outcome.weights,
        outcome.iterations,
        outcome.converged,
        opts.tol,
    )
}

/// Prunes the raw weight vector and recomputes the diagnostics on what remains.
pub(crate) fn finish(
    problem: &Problem,
    grid: &Grid,
    mut weights: Vec<f64>,
    iterations: usize,
    converged: bool,
    tol: f64,
) -> Result<FitResult> {
    let total: f64 = weights.iter().filter(|w| **w >= PRUNE_FLOOR).sum();
    for w in weights.iter_mut() {
        *w = if *w >= PRUNE_FLOOR { *w / total } else { 0.0 };
    }
    let f = problem.densities(&weights);
    let log_likelihood = problem.log_likelihood(&f);
    let optimality_gap = solver::clamp_gap(&problem.gradient(&f));
    let (atoms, kept): (Vec<f64>, Vec<f64>) = grid
        .atoms()
        .iter()
        .zip(&weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(a, w)| (*a, *w))
        .unzip();
    Ok(FitResult {
        mixing: MixingDistribution::new(atoms, kept)?,
        log_likelihood,
        optimality_gap,
        iterations,
        converged: converged && optimality_gap <= tol,
    })
}

/// Recomputes the optimality gap of `fit` directly from the kernel, without the
/// solver's scaled matrix.
pub fn certificate(fit: &FitResult, counts: &CountData, grid: &Grid, kernel: &MixtureKernel) -> Result<f64> {
    let (values, mults) = compress_counts(counts);
    certificate_rows(&fit.mixing, &values, &mults, grid, kernel)
}

pub(crate) fn certificate_rows(
    mixing: &MixingDistribution,
    values: &[u64],
    mults: &[f64],
    grid: &Grid,
    kernel: &MixtureKernel,
) -> Result<f64> {
    let total: f64 = mults.iter().sum();
    let log_f: Vec<f64> = values
        .iter()
        .map(|&x| mixture_log_density(kernel, mixing, x))
        .collect::<Result<_>>()?;
    let mut gap = f64::NEG_INFINITY;
    for &r in grid.atoms() {
        let mut d = 0.0;
        for ((&x, &c), &lf) in values.iter().zip(mults).zip(&log_f) {
            if c == 0.0 {
                continue;
            }
            d += c * (kernel.log_pmf_with(x, ln_factorial(x), r) - lf).exp();
        }
        gap = gap.max(d / total - 1.0);
    }
    Ok(gap.max(0.0))
}

/// `Σ_i log f_π(N_i)` evaluated directly.
pub fn log_likelihood(mixing: &MixingDistribution, counts: &CountData, kernel: &MixtureKernel) -> Result<f64> {
    let (values, mults) = compress_counts(counts);
    let mut ll = 0.0;
    for (&x, &c) in values.iter().zip(&mults) {
        ll += c * mixture_log_density(kernel, mixing, x)?;
    }
    Ok(ll)
}

/// Drops atoms lighter than `weight_floor` and renormalises.
pub fn prune(mixing: &MixingDistribution, weight_floor: f64) -> Result<MixingDistribution> {
    let kept: Vec<(f64, f64)> = mixing.iter().filter(|(_, w)| *w >= weight_floor).collect();
    if kept.is_empty() {
        return Err(Error::AllPruned {
            atoms: mixing.len(),
            floor: weight_floor,
        });
    }
    let (atoms, weights) = kept.into_iter().unzip();
    MixingDistribution::new(atoms, weights)
}
