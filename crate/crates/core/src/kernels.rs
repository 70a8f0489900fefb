//! Component distributions of the count mixture and log-domain mixture densities.
//!
//! A [`MixtureKernel`] is the family `q_n(x, r)` that turns a rate `r ∈ [0, 1]` into a
//! distribution over counts: Poisson with mean `n·r`, or binomial with `n` trials and
//! success probability `r`. A [`MixingDistribution`] is a finitely supported measure on
//! `[0, 1]`; mixing the kernel over it gives the count density
//!
//! ```text
//! f_π(x) = Σ_j w_j · q_n(x, r_j)
//! ```
//!
//! Everything is evaluated in log space. Probabilities of large counts under a
//! far-away atom are routinely below `1e-300`, so direct evaluation would underflow.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{domain, invalid, Result};
use crate::npmle::{CountData, Grid};

/// Component family of the count mixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    #[default]
    Poisson,
    Binomial,
}

/// The count kernel `q_n(·, r)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MixtureKernel {
    family: KernelFamily,
    n: u64,
}

impl MixtureKernel {
    pub fn new(family: KernelFamily, n: u64) -> Result<Self> {
        if n == 0 {
            return Err(invalid("kernel concentration n must be at least 1"));
        }
        Ok(Self { family, n })
    }

    pub fn poisson(n: u64) -> Result<Self> {
        Self::new(KernelFamily::Poisson, n)
    }

    pub fn binomial(n: u64) -> Result<Self> {
        Self::new(KernelFamily::Binomial, n)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    /// `log q_n(x, r)`.
    ///
    /// Fails for a binomial kernel with `x > n`. At `r = 0` the result is `0` for
    /// `x = 0` and `-inf` otherwise.
    pub fn log_pmf(&self, x: u64, r: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&r) {
            return Err(domain(format!("rate {r} outside [0, 1]")));
        }
        if self.family == KernelFamily::Binomial && x > self.n {
            return Err(domain(format!("count {x} exceeds binomial trials {}", self.n)));
        }
        Ok(self.log_pmf_with(x, ln_factorial(x), r))
    }

    /// `log q_n(x, r)` given a precomputed `ln x!`. Caller guarantees the domain.
    pub(crate) fn log_pmf_with(&self, x: u64, ln_x_fact: f64, r: f64) -> f64 {
        let xf = x as f64;
        match self.family {
            KernelFamily::Poisson => {
                let lambda = self.n as f64 * r;
                if lambda == 0.0 {
                    return if x == 0 { 0.0 } else { f64::NEG_INFINITY };
                }
                xf * lambda.ln() - lambda - ln_x_fact
            }
            KernelFamily::Binomial => {
                let n = self.n;
                if r == 0.0 {
                    return if x == 0 { 0.0 } else { f64::NEG_INFINITY };
                }
                if r == 1.0 {
                    return if x == n { 0.0 } else { f64::NEG_INFINITY };
                }
                let ln_choose = ln_factorial(n) - ln_x_fact - ln_factorial(n - x);
                ln_choose + xf * r.ln() + (n - x) as f64 * (-r).ln_1p()
            }
        }
    }

    /// Whether the count can occur at all under this kernel.
    pub fn admits(&self, x: u64) -> bool {
        self.family == KernelFamily::Poisson || x <= self.n
    }

    /// Largest count worth summing to: beyond it the neglected mass is below `1e-12`
    /// for every rate in `[0, 1]`.
    pub fn truncation_point(&self) -> u64 {
        let n = self.n as f64;
        let t = (n + 20.0 * n.sqrt() + 50.0).ceil() as u64;
        match self.family {
            KernelFamily::Poisson => t,
            KernelFamily::Binomial => t.min(self.n),
        }
    }

    /// Poisson truncation `nr + 20·sqrt(nr) + 50` for a single rate.
    pub fn truncation_point_at(&self, r: f64) -> u64 {
        let mean = self.n as f64 * r;
        let t = (mean + 20.0 * mean.sqrt() + 50.0).ceil() as u64;
        match self.family {
            KernelFamily::Poisson => t,
            KernelFamily::Binomial => t.min(self.n),
        }
    }
}

/// `ln x!` through the log-gamma function.
pub fn ln_factorial(x: u64) -> f64 {
    if x < 2 {
        0.0
    } else {
        ln_gamma(x as f64 + 1.0)
    }
}

/// `log Σ exp(v)`, `-inf` for an empty slice or when every term is `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// A discrete probability measure on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingDistribution {
    atoms: Vec<f64>,
    weights: Vec<f64>,
}

impl MixingDistribution {
    /// Builds from strictly increasing atoms and nonnegative weights; the weights are
    /// renormalised to sum to one.
    pub fn new(atoms: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(invalid("mixing distribution needs at least one atom"));
        }
        if atoms.len() != weights.len() {
            return Err(invalid(format!("{} atoms but {} weights", atoms.len(), weights.len())));
        }
        if atoms.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(domain("atoms must lie in [0, 1]"));
        }
        if atoms.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("atoms must be strictly increasing"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(invalid("weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(invalid("weights sum to zero"));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { atoms, weights })
    }

    /// Takes weights that already sum to one as they are, bit for bit.
    pub(crate) fn from_normalized(atoms: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let checked = Self::new(atoms, weights.clone())?;
        if (weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12 {
            Ok(Self {
                atoms: checked.atoms,
                weights,
            })
        } else {
            Ok(checked)
        }
    }

    /// Builds from arbitrary `(atom, weight)` pairs, merging repeated atoms.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let mut pairs: Vec<(f64, f64)> = pairs.into_iter().collect();
        if pairs.iter().any(|(a, _)| a.is_nan()) {
            return Err(domain("atom is NaN"));
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut atoms: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut weights: Vec<f64> = Vec::with_capacity(pairs.len());
        for (a, w) in pairs {
            match atoms.last() {
                Some(&last) if last == a => *weights.last_mut().unwrap() += w,
                _ => {
                    atoms.push(a);
                    weights.push(w);
                }
            }
        }
        Self::new(atoms, weights)
    }

    /// Point mass at `x`.
    pub fn dirac(x: f64) -> Result<Self> {
        Self::new(vec![x], vec![1.0])
    }

    /// The histogram `(1/k) Σ δ_{p_i}` of a probability vector.
    pub fn histogram_of(probs: &[f64]) -> Result<Self> {
        let k = probs.len() as f64;
        Self::from_pairs(probs.iter().map(|&p| (p, 1.0 / k)))
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.atoms.iter().copied().zip(self.weights.iter().copied())
    }

    /// `E_π[g]`.
    pub fn expect(&self, mut g: impl FnMut(f64) -> f64) -> f64 {
        self.iter().map(|(a, w)| w * g(a)).sum()
    }

    pub fn mean(&self) -> f64 {
        self.expect(|a| a)
    }

    /// Convex combination `λ·self + (1-λ)·other`.
    pub fn mix(&self, other: &Self, lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(domain("mixing proportion outside [0, 1]"));
        }
        Self::from_pairs(
            self.iter()
                .map(|(a, w)| (a, lambda * w))
                .chain(other.iter().map(|(a, w)| (a, (1.0 - lambda) * w))),
        )
    }
}

/// `log f_π(x) = log Σ_j w_j q_n(x, r_j)`.
pub fn mixture_log_density(kernel: &MixtureKernel, pi: &MixingDistribution, x: u64) -> Result<f64> {
    if !kernel.admits(x) {
        return Err(domain(format!("count {x} exceeds binomial trials {}", kernel.n())));
    }
    let lf = ln_factorial(x);
    let terms: Vec<f64> = pi
        .iter()
        .map(|(r, w)| {
            if w == 0.0 {
                f64::NEG_INFINITY
            } else {
                w.ln() + kernel.log_pmf_with(x, lf, r)
            }
        })
        .collect();
    Ok(log_sum_exp(&terms))
}

/// Log-probability matrix over the distinct observed counts and the grid atoms.
///
/// Rows are the distinct count values (ascending) with their multiplicities; implicit
/// zeros (`k` larger than the number of counts) are folded into the zero row.
#[derive(Debug, Clone)]
pub struct PmfMatrix {
    values: Vec<u64>,
    multiplicities: Vec<f64>,
    atoms: Vec<f64>,
    log_pmf: Vec<f64>,
}

impl PmfMatrix {
    pub(crate) fn from_rows(kernel: &MixtureKernel, values: Vec<u64>, multiplicities: Vec<f64>, atoms: &[f64]) -> Self {
        let m = atoms.len();
        let mut log_pmf = vec![0.0; values.len() * m];
        // Each entry depends only on its own (row, atom): parallel fill is bitwise
        // identical to the sequential one.
        log_pmf
            .par_chunks_mut(m.max(1))
            .zip(values.par_iter())
            .for_each(|(row, &x)| {
                let lf = ln_factorial(x);
                for (cell, &r) in row.iter_mut().zip(atoms) {
                    *cell = kernel.log_pmf_with(x, lf, r);
                }
            });
        Self {
            values,
            multiplicities,
            atoms: atoms.to_vec(),
            log_pmf,
        }
    }

    pub fn rows(&self) -> usize {
        self.values.len()
    }

    pub fn cols(&self) -> usize {
        self.atoms.len()
    }

    /// Distinct count values, ascending.
    pub fn values(&self) -> &[u64] {
        &self.values
    }

    pub fn multiplicities(&self) -> &[f64] {
        &self.multiplicities
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    /// `log q_n(values[i], atoms[j])`.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.log_pmf[i * self.atoms.len() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let m = self.atoms.len();
        &self.log_pmf[i * m..(i + 1) * m]
    }
}

/// Distinct count values with multiplicities, implicit zeros included.
pub(crate) fn compress_counts(counts: &CountData) -> (Vec<u64>, Vec<f64>) {
    let mut sorted = counts.counts().to_vec();
    sorted.sort_unstable();
    let mut values: Vec<u64> = Vec::new();
    let mut mults: Vec<f64> = Vec::new();
    let implicit = counts.implicit_zeros();
    if implicit > 0 {
        values.push(0);
        mults.push(implicit as f64);
    }
    for x in sorted {
        match values.last() {
            Some(&last) if last == x => *mults.last_mut().unwrap() += 1.0,
            _ => {
                values.push(x);
                mults.push(1.0);
            }
        }
    }
    (values, mults)
}

/// `log q_n(N_i, r_j)` over distinct counts and grid atoms.
pub fn pmf_matrix(kernel: &MixtureKernel, counts: &CountData, grid: &Grid) -> Result<PmfMatrix> {
    if let Some(&bad) = counts.counts().iter().find(|&&x| !kernel.admits(x)) {
        return Err(domain(format!("count {bad} exceeds binomial trials {}", kernel.n())));
    }
    let (values, mults) = compress_counts(counts);
    Ok(PmfMatrix::from_rows(kernel, values, mults, grid.atoms()))
}
