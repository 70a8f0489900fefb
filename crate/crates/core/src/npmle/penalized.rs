//! Support-size selection from the nonzero counts alone.
//!
//! Padding the `k` observed counts with `k' − k` zeros and adding the binomial
//! entropy term `k' H(k/k')` gives the penalised likelihood
//!
//! ```text
//! L(π; N, k') = Σ_i log f_π(N_i) + (k' − k) log f_π(0) + k' H(k/k')
//! ```
//!
//! whose profile over `k'` is non-decreasing and flat past the selected support size.
//! A small `c0 / k'^c1` bonus makes the smallest maximiser the unique one.

use serde::{Deserialize, Serialize};

use super::{certificate_rows, finish, CountData, FitOptions, FitResult, Grid, GridOptions, Problem};
use crate::error::{invalid, Error, Result};
use crate::kernels::{compress_counts, mixture_log_density, MixingDistribution, MixtureKernel, PmfMatrix};

/// Tie-breaking bonus `c0 / k'^c1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regularizer {
    pub c0: f64,
    pub c1: f64,
}

impl Default for Regularizer {
    fn default() -> Self {
        Self { c0: 10.0, c1: 1.0 }
    }
}

impl Regularizer {
    pub fn value(&self, k_prime: f64) -> f64 {
        self.c0 / k_prime.powf(self.c1)
    }

    pub fn derivative(&self, k_prime: f64) -> f64 {
        -self.c0 * self.c1 / k_prime.powf(self.c1 + 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenalizedConfig {
    pub reg: Regularizer,
    /// The search bracket is `[k, k_max_factor · k]`.
    pub k_max_factor: f64,
    /// Bisection stops once the bracket is narrower than `k_rel_tol · k`.
    pub k_rel_tol: f64,
}

impl Default for PenalizedConfig {
    fn default() -> Self {
        Self {
            reg: Regularizer::default(),
            k_max_factor: 50.0,
            k_rel_tol: 1e-6,
        }
    }
}

/// One evaluated support size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub k_prime: f64,
    /// Profile penalised likelihood `max_π L(π; N, k')`.
    pub likelihood: f64,
    /// `likelihood + c0 / k'^c1`.
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenalizedFitResult {
    /// Selected support size, real valued, `≥ k`.
    pub k_hat: f64,
    /// Number of observed (positive) counts.
    pub k: usize,
    pub mixing: MixingDistribution,
    pub penalized_objective: f64,
    /// Certificate of the inner fit at `k_hat`.
    pub optimality_gap: f64,
    /// Every evaluated support size, ascending in `k'`.
    pub profile: Vec<ProfilePoint>,
}

/// `L(π; N, k')` evaluated directly from the kernel.
pub fn penalized_likelihood(
    mixing: &MixingDistribution,
    positive_counts: &CountData,
    k_prime: f64,
    kernel: &MixtureKernel,
) -> Result<f64> {
    let k = positive_counts.k() as f64;
    if k_prime < k {
        return Err(invalid("k' must be at least the number of counts"));
    }
    let mut ll = super::log_likelihood(mixing, positive_counts, kernel)?;
    if k_prime > k {
        ll += (k_prime - k) * mixture_log_density(kernel, mixing, 0)?;
    }
    Ok(ll + entropy_term(k, k_prime))
}

/// `k' H(k/k') = −(k ln(k/k') + (k'−k) ln((k'−k)/k'))`.
fn entropy_term(k: f64, k_prime: f64) -> f64 {
    let pad = k_prime - k;
    let mut v = -k * (k / k_prime).ln();
    if pad > 0.0 {
        v -= pad * (pad / k_prime).ln();
    }
    v
}

/// Penalised problem: positive rows plus a zero row whose weight is `k' − k`.
struct Padded {
    problem: Problem,
    values: Vec<u64>,
    mults: Vec<f64>,
    k: f64,
    grid: Grid,
}

struct Evaluation {
    k_prime: f64,
    weights: Vec<f64>,
    likelihood: f64,
    /// `∂L/∂k'` including the regulariser.
    slope: f64,
    /// Noise level of `slope` implied by the fit accuracy.
    slack: f64,
    iterations: usize,
    converged: bool,
}

impl Padded {
    fn new(positive_counts: &CountData, grid_opts: &GridOptions, kernel: &MixtureKernel) -> Result<Self> {
        check_positive(positive_counts)?;
        let grid = grid_opts.build(positive_counts)?;
        if grid.atoms()[0] != 0.0 {
            return Err(invalid("penalised fit needs the atom 0 in the grid"));
        }
        let (mut values, mut mults) = compress_counts(positive_counts);
        values.insert(0, 0);
        mults.insert(0, 0.0);
        let pm = PmfMatrix::from_rows(kernel, values.clone(), mults.clone(), grid.atoms());
        let problem = Problem::with_multiplicities(&pm, mults.clone())?;
        Ok(Self {
            problem,
            values,
            mults,
            k: positive_counts.k() as f64,
            grid,
        })
    }

    fn evaluate(&mut self, k_prime: f64, tol: f64, reg: &Regularizer, warm: Option<&[f64]>) -> Evaluation {
        let pad = k_prime - self.k;
        self.problem.set_multiplicity(0, pad);
        self.mults[0] = pad;
        // Certificate tolerance scaled so the objective is accurate to `tol`.
        let inner = (tol / k_prime).max(1e-13);
        let opts = FitOptions {
            tol: inner,
            max_iter: 20_000,
            stationarity_tol: Some(inner),
            ..FitOptions::default()
        };
        let out = self.problem.solve(&opts, warm);
        let f = self.problem.densities(&out.weights);
        let likelihood = self.problem.log_likelihood(&f) + entropy_term(self.k, k_prime);
        let log_f0 = self.problem.log_density(&f, 0);
        let slope = if pad > 0.0 {
            log_f0 - (pad / k_prime).ln() + reg.derivative(k_prime)
        } else if log_f0 == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            f64::INFINITY
        };
        Evaluation {
            k_prime,
            weights: out.weights,
            likelihood,
            slope,
            slack: 4.0 * inner,
            iterations: out.iterations,
            converged: out.converged,
        }
    }
}

fn check_positive(counts: &CountData) -> Result<()> {
    if counts.implicit_zeros() > 0 || counts.counts().contains(&0) {
        return Err(invalid(
            "penalised fit takes strictly positive counts; strip zeros first",
        ));
    }
    if counts.k() == 0 {
        return Err(Error::EmptyCounts);
    }
    Ok(())
}

/// Jointly maximises the penalised likelihood over the mixing distribution and `k' ≥ k`.
///
/// The profile `k' ↦ max_π L(π; N, k') + c0/k'^c1` is searched by bisection on its
/// envelope derivative `log f_π̂(0) − log((k'−k)/k') − c0 c1 / k'^{c1+1}`, each
/// evaluation being a warm-started fit with the zero row weighted by `k' − k`.
pub fn fit_penalized(
    positive_counts: &CountData,
    grid_opts: &GridOptions,
    kernel: &MixtureKernel,
    tol: f64,
    cfg: &PenalizedConfig,
) -> Result<PenalizedFitResult> {
    if !(tol > 0.0) {
        return Err(invalid("tolerance must be positive"));
    }
    if !(cfg.k_max_factor > 1.0) {
        return Err(invalid("k_max_factor must exceed 1"));
    }
    let mut padded = Padded::new(positive_counts, grid_opts, kernel)?;
    let k = padded.k;
    let reg = cfg.reg;
    let mut profile: Vec<ProfilePoint> = Vec::new();
    let record = |e: &Evaluation, profile: &mut Vec<ProfilePoint>| {
        profile.push(ProfilePoint {
            k_prime: e.k_prime,
            likelihood: e.likelihood,
            objective: e.likelihood + reg.value(e.k_prime),
        });
    };

    let at_k = padded.evaluate(k, tol, &reg, None);
    record(&at_k, &mut profile);
    let best = if at_k.slope <= at_k.slack {
        at_k
    } else {
        let limit = cfg.k_max_factor * k;
        let mut hi = padded.evaluate(limit, tol, &reg, Some(&at_k.weights));
        record(&hi, &mut profile);
        if hi.slope > hi.slack {
            return Err(Error::SupportBoundReached { limit });
        }
        let mut lo = at_k;
        while hi.k_prime - lo.k_prime > cfg.k_rel_tol * k {
            let mid = 0.5 * (lo.k_prime + hi.k_prime);
            let e = padded.evaluate(mid, tol, &reg, Some(&lo.weights));
            record(&e, &mut profile);
            if e.slope <= e.slack {
                hi = e;
            } else {
                lo = e;
            }
        }
        // Keep whichever end of the final bracket scores higher.
        if lo.likelihood + reg.value(lo.k_prime) > hi.likelihood + reg.value(hi.k_prime) {
            lo
        } else {
            hi
        }
    };
    profile.sort_by(|a, b| a.k_prime.total_cmp(&b.k_prime));

    padded.problem.set_multiplicity(0, best.k_prime - k);
    padded.mults[0] = best.k_prime - k;
    let fit: FitResult = finish(
        &padded.problem,
        &padded.grid,
        best.weights.clone(),
        best.iterations,
        best.converged,
        (tol / best.k_prime).max(1e-13),
    )?;
    let optimality_gap = certificate_rows(&fit.mixing, &padded.values, &padded.mults, &padded.grid, kernel)?;
    Ok(PenalizedFitResult {
        k_hat: best.k_prime,
        k: positive_counts.k(),
        mixing: fit.mixing,
        penalized_objective: best.likelihood + reg.value(best.k_prime),
        optimality_gap,
        profile,
    })
}

/// `k' · KL(π_{N'} ‖ f_{π̂_{k'}})` for each requested `k'`, where `π_{N'}` is the
/// count histogram after padding to `k'` with zeros and `π̂_{k'}` the fixed-`k'` fit.
pub fn scaled_kl_profile(
    positive_counts: &CountData,
    k_primes: &[f64],
    grid_opts: &GridOptions,
    kernel: &MixtureKernel,
    tol: f64,
) -> Result<Vec<(f64, f64)>> {
    let mut padded = Padded::new(positive_counts, grid_opts, kernel)?;
    let k = padded.k;
    if let Some(bad) = k_primes.iter().find(|&&kp| !(kp >= k)) {
        return Err(invalid(format!("k' = {bad} is below the number of counts {k}")));
    }
    let mut order: Vec<usize> = (0..k_primes.len()).collect();
    order.sort_by(|&a, &b| k_primes[a].total_cmp(&k_primes[b]));
    let mut out = vec![(0.0, 0.0); k_primes.len()];
    let mut warm: Option<Vec<f64>> = None;
    let reg = Regularizer { c0: 0.0, c1: 1.0 };
    let (values, mults) = compress_counts(positive_counts);
    for idx in order {
        let kp = k_primes[idx];
        let e = padded.evaluate(kp, tol, &reg, warm.as_deref());
        let (atoms, weights): (Vec<f64>, Vec<f64>) = padded
            .grid
            .atoms()
            .iter()
            .zip(&e.weights)
            .filter(|(_, w)| **w > 0.0)
            .map(|(a, w)| (*a, *w))
            .unzip();
        let mixing = MixingDistribution::new(atoms, weights)?;
        let mut kl = 0.0;
        for (&x, &c) in values.iter().zip(&mults) {
            let p = c / kp;
            kl += p * (p.ln() - mixture_log_density(kernel, &mixing, x)?);
        }
        if kp > k {
            let p0 = (kp - k) / kp;
            kl += p0 * (p0.ln() - mixture_log_density(kernel, &mixing, 0)?);
        }
        out[idx] = (kp, kp * kl);
        warm = Some(e.weights);
    }
    Ok(out)
}
