//! Distances between mixing distributions and mixture densities, and the χ²
//! goodness-of-fit test on a count fingerprint.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;

use crate::error::{domain, invalid, Error, Result};
use crate::kernels::{mixture_log_density, KernelFamily, MixingDistribution, MixtureKernel};
use crate::npmle::{fit_npmle_with, CountData, FitOptions, FitResult, GridOptions};

/// `φ_j = #{i : N_i = j}`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Fingerprint {
    phi: BTreeMap<u64, u64>,
}

impl Fingerprint {
    /// Fingerprint of all `k` cells, implicit zeros included.
    pub fn from_counts(counts: &CountData) -> Self {
        let mut phi = BTreeMap::new();
        for &c in counts.counts() {
            *phi.entry(c).or_insert(0) += 1;
        }
        if counts.implicit_zeros() > 0 {
            *phi.entry(0).or_insert(0) += counts.implicit_zeros() as u64;
        }
        phi.retain(|_, v| *v > 0);
        Self { phi }
    }

    /// Builds from `(j, φ_j)` pairs; repeated `j` are rejected.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u64, u64)>) -> Result<Self> {
        let mut phi = BTreeMap::new();
        for (j, p) in pairs {
            if phi.insert(j, p).is_some() {
                return Err(invalid(format!("count value {j} listed twice")));
            }
        }
        phi.retain(|_, v| *v > 0);
        Ok(Self { phi })
    }

    pub fn get(&self, j: u64) -> u64 {
        self.phi.get(&j).copied().unwrap_or(0)
    }

    /// Number of cells, `Σ_j φ_j`.
    pub fn total(&self) -> u64 {
        self.phi.values().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.phi.iter().map(|(&j, &p)| (j, p))
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    /// Cells with count at most `t`.
    pub fn truncated(&self, t: u64) -> Self {
        Self {
            phi: self.phi.range(..=t).map(|(&j, &p)| (j, p)).collect(),
        }
    }

    /// The count multiset, in ascending order.
    pub fn expand(&self) -> Vec<u64> {
        let mut out = Vec::with_capacity(self.total() as usize);
        for (&j, &p) in &self.phi {
            out.extend(std::iter::repeat_n(j, p as usize));
        }
        out
    }

    pub fn to_counts(&self, n: u64) -> Result<CountData> {
        CountData::new(self.expand(), n)
    }
}

/// Exact `W_q` between two discrete measures on `[0, 1]` via the quantile coupling.
pub fn wasserstein(p: &MixingDistribution, q: &MixingDistribution, order: f64) -> Result<f64> {
    if !(order >= 1.0) || !order.is_finite() {
        return Err(domain(format!(
            "Wasserstein order {order} must be finite and at least 1"
        )));
    }
    let (pa, pw) = (p.atoms(), p.weights());
    let (qa, qw) = (q.atoms(), q.weights());
    let (mut i, mut j) = (0usize, 0usize);
    let (mut cp, mut cq) = (pw[0], qw[0]);
    let mut u = 0.0;
    let mut acc = 0.0;
    loop {
        let next = cp.min(cq);
        let du = next - u;
        if du > 0.0 {
            acc += du * (pa[i] - qa[j]).abs().powf(order);
        }
        u = next;
        let p_done = i + 1 >= pa.len();
        let q_done = j + 1 >= qa.len();
        if p_done && q_done {
            break;
        }
        // Advance whichever CDF reached `u`; at ties advance both.
        let advance_p = !p_done && (cp <= cq || q_done);
        let advance_q = !q_done && (cq <= cp || p_done);
        if advance_p {
            i += 1;
            cp += pw[i];
        }
        if advance_q {
            j += 1;
            cq += qw[j];
        }
    }
    // Weights sum to one only up to rounding; the last atoms own the remainder.
    let tail = 1.0 - u;
    if tail > 0.0 {
        acc += tail * (pa[pa.len() - 1] - qa[qa.len() - 1]).abs().powf(order);
    }
    Ok(acc.powf(1.0 / order))
}

/// Squared Hellinger distance between two mixture densities over `{0, …, J*}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hellinger {
    /// `1 − Σ_{j≤J*} √(f₁(j) f₂(j))`.
    pub squared: f64,
    /// `√max(squared, 0)`.
    pub distance: f64,
    pub truncation: u64,
    /// Mass of either density beyond `J*`; bounds the error in `squared`.
    pub neglected_mass: f64,
}

/// Default truncation `n + 20√n + 50` (Poisson) or `n` (binomial).
pub fn default_truncation(kernel: &MixtureKernel) -> u64 {
    match kernel.family() {
        KernelFamily::Binomial => kernel.n(),
        KernelFamily::Poisson => kernel.truncation_point(),
    }
}

pub fn hellinger(
    kernel: &MixtureKernel,
    pi1: &MixingDistribution,
    pi2: &MixingDistribution,
    truncation: Option<u64>,
) -> Result<Hellinger> {
    let top = truncation.unwrap_or_else(|| default_truncation(kernel));
    let top = match kernel.family() {
        KernelFamily::Binomial => top.min(kernel.n()),
        KernelFamily::Poisson => top,
    };
    let (mut affinity, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for x in 0..=top {
        let l1 = mixture_log_density(kernel, pi1, x)?;
        let l2 = mixture_log_density(kernel, pi2, x)?;
        affinity += (0.5 * (l1 + l2)).exp();
        m1 += l1.exp();
        m2 += l2.exp();
    }
    let squared = 1.0 - affinity;
    let neglected_mass = (1.0 - m1).max(1.0 - m2).max(0.0);
    Ok(Hellinger {
        squared,
        distance: squared.max(0.0).sqrt(),
        truncation: top,
        neglected_mass,
    })
}

/// Upper tail of the χ² distribution with `dof` degrees of freedom.
pub fn chi2_sf(x: f64, dof: u64) -> Result<f64> {
    if dof == 0 {
        return Err(domain("chi-squared needs at least one degree of freedom"));
    }
    if x.is_nan() {
        return Err(domain("chi-squared statistic is NaN"));
    }
    if x <= 0.0 {
        return Ok(1.0);
    }
    if x == f64::INFINITY {
        return Ok(0.0);
    }
    Ok(gamma_ur(dof as f64 / 2.0, x / 2.0))
}

/// Model whose expected fingerprint is compared with the observed one.
#[derive(Debug, Clone, PartialEq)]
pub enum GofModel {
    /// Mixture `f_π` conditioned on `{0, …, T}`.
    FittedMixture {
        mixing: MixingDistribution,
        kernel: MixtureKernel,
    },
    /// Equal-weight mixture of Poissons at the retained cells' own counts, i.e. the
    /// mixture at the empirical histogram, conditioned on `{0, …, T}`.
    EmpiricalP,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofReport {
    pub statistic: f64,
    pub dof: u64,
    pub p_value: f64,
    /// `E[φ_j]`, `j = 0..=T`.
    pub expected: Vec<f64>,
    /// `φ_j`, `j = 0..=T`.
    pub observed: Vec<u64>,
    pub truncation: u64,
    /// Some `E[φ_j]` vanished where `φ_j > 0`.
    pub degenerate: bool,
}

/// `Σ_{j=0}^T (φ_j − E[φ_j])² / E[φ_j]` against a χ²(T) reference.
pub fn gof_test(fingerprint: &Fingerprint, model: &GofModel, t: u64) -> Result<GofReport> {
    if t == 0 {
        return Err(invalid("truncation T must be at least 1"));
    }
    let kept = fingerprint.truncated(t);
    let k_t = kept.total();
    if k_t == 0 {
        return Err(Error::EmptyCounts);
    }
    let len = t as usize + 1;
    let observed: Vec<u64> = (0..=t).map(|j| kept.get(j)).collect();
    let expected = match model {
        GofModel::FittedMixture { mixing, kernel } => {
            let logs: Vec<f64> = (0..=t)
                .map(|j| {
                    if kernel.admits(j) {
                        mixture_log_density(kernel, mixing, j)
                    } else {
                        Ok(f64::NEG_INFINITY)
                    }
                })
                .collect::<Result<_>>()?;
            let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if top == f64::NEG_INFINITY {
                vec![0.0; len]
            } else {
                let f: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
                let mass: f64 = f.iter().sum();
                f.iter().map(|v| k_t as f64 * v / mass).collect()
            }
        }
        GofModel::EmpiricalP => {
            // Mixture of Poissons at the retained cells' own counts, conditioned on
            // {0, …, T} as a whole, exactly like the fitted mixture.
            let mut f = vec![0.0; len];
            for (c, cells) in kept.iter() {
                for (j, fj) in f.iter_mut().enumerate() {
                    *fj += cells as f64 * poisson_log(j as u64, c as f64).exp();
                }
            }
            let mass: f64 = f.iter().sum();
            f.iter().map(|v| k_t as f64 * v / mass).collect()
        }
    };
    let mut statistic = 0.0;
    let mut degenerate = false;
    for (&o, &e) in observed.iter().zip(&expected) {
        if e > 0.0 {
            let d = o as f64 - e;
            statistic += d * d / e;
        } else if o > 0 {
            degenerate = true;
        }
    }
    if degenerate {
        statistic = f64::INFINITY;
    }
    Ok(GofReport {
        statistic,
        dof: t,
        p_value: chi2_sf(statistic, t)?,
        expected,
        observed,
        truncation: t,
        degenerate,
    })
}

fn poisson_log(j: u64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return if j == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    j as f64 * lambda.ln() - lambda - crate::kernels::ln_factorial(j)
}

/// Which model [`fit_and_test`] scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GofModelKind {
    Mixture,
    PModel,
}

/// Fits the requested model on the cells with count at most `T`, then tests it.
///
/// The mixture fit uses `n` as the kernel concentration; the P-model needs no fit.
pub fn fit_and_test(
    fingerprint: &Fingerprint,
    t: u64,
    kind: GofModelKind,
    n: u64,
    family: KernelFamily,
    grid: &GridOptions,
    opts: &FitOptions,
) -> Result<(GofReport, Option<FitResult>)> {
    match kind {
        GofModelKind::PModel => Ok((gof_test(fingerprint, &GofModel::EmpiricalP, t)?, None)),
        GofModelKind::Mixture => {
            let counts = fingerprint.truncated(t).to_counts(n)?;
            let kernel = MixtureKernel::new(family, n)?;
            let grid = grid.build(&counts)?;
            let fit = fit_npmle_with(&counts, &grid, &kernel, opts)?;
            let model = GofModel::FittedMixture {
                mixing: fit.mixing.clone(),
                kernel,
            };
            Ok((gof_test(fingerprint, &model, t)?, Some(fit)))
        }
    }
}
