//! Synthetic distributions, sampling, and the Monte-Carlo RMSE harness.
//!
//! Every trial draws from its own ChaCha8 stream, selected by `(n index, trial)`
//! from the configured seed, so results do not depend on how trials are scheduled
//! across threads.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Result};
use crate::eval::wasserstein;
use crate::functionals::{estimate, g_eval, EstimatorOptions, FunctionalKind, FunctionalSpec, Method};
use crate::kernels::{KernelFamily, MixingDistribution, MixtureKernel};
use crate::npmle::{fit_npmle_with, CountData, FitOptions, GridOptions, LocalizedConfig};

/// Shape of a synthetic distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DistributionKind {
    Uniform,
    /// `2/(5k)` on the first half of the cells, `8/(5k)` on the rest.
    TwoMixedUniform,
    /// `1/(2(k−3))` on the first `k − 3` cells, then `1/8, 1/8, 1/4`.
    SpikeAndUniform,
    /// `∝ (1 − 1/k)^i`.
    Geometric,
    /// `∝ (1 − 1/k)^i / i`.
    LogSeries,
    /// `∝ i^{−s}`.
    Zipf {
        s: f64,
    },
    Custom {
        probs: Vec<f64>,
    },
}

/// A distribution kind plus its alphabet size, as written in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSpec {
    #[serde(flatten)]
    pub kind: DistributionKind,
    /// Ignored for `custom`, whose size is the length of `probs`.
    #[serde(default)]
    pub k: usize,
}

/// A probability vector `P = (p_1, …, p_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueDistribution {
    pub kind: DistributionKind,
    probs: Vec<f64>,
}

impl TrueDistribution {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn k(&self) -> usize {
        self.probs.len()
    }

    /// `π_P = (1/k) Σ δ_{p_i}`.
    pub fn histogram(&self) -> MixingDistribution {
        MixingDistribution::histogram_of(&self.probs).expect("probabilities lie in [0, 1]")
    }

    /// `G(P)` for the given functional; `n` matters only for the unseen functional.
    pub fn functional_value(&self, spec: &FunctionalSpec, n: u64) -> f64 {
        match spec.kind {
            FunctionalKind::RenyiEntropy { alpha } => {
                let s: f64 = self.probs.iter().filter(|&&p| p > 0.0).map(|p| p.powf(alpha)).sum();
                s.ln() / (1.0 - alpha)
            }
            _ => self.probs.iter().map(|&p| g_eval(spec, p, n)).sum(),
        }
    }
}

pub fn make_distribution(kind: &DistributionKind, k: usize) -> Result<TrueDistribution> {
    let weights: Vec<f64> = match kind {
        DistributionKind::Custom { probs } => {
            if probs.is_empty() {
                return Err(invalid("custom distribution needs at least one probability"));
            }
            if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(domain("probabilities must be finite and nonnegative"));
            }
            let total: f64 = probs.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(domain(format!("probabilities sum to {total}, not 1")));
            }
            probs.clone()
        }
        _ if k == 0 => return Err(invalid("alphabet size k must be positive")),
        DistributionKind::Uniform => vec![1.0; k],
        DistributionKind::TwoMixedUniform => {
            let half = k / 2;
            (0..k).map(|i| if i < half { 2.0 } else { 8.0 }).collect()
        }
        DistributionKind::SpikeAndUniform => {
            if k < 4 {
                return Err(domain("spike-and-uniform needs k >= 4"));
            }
            let mut v = vec![1.0 / (2.0 * (k - 3) as f64); k - 3];
            v.extend([0.125, 0.125, 0.25]);
            v
        }
        DistributionKind::Geometric => {
            let q = 1.0 - 1.0 / k as f64;
            (1..=k).map(|i| q.powi(i as i32)).collect()
        }
        DistributionKind::LogSeries => {
            let q = 1.0 - 1.0 / k as f64;
            (1..=k).map(|i| q.powi(i as i32) / i as f64).collect()
        }
        DistributionKind::Zipf { s } => {
            if !(s.is_finite() && *s >= 0.0) {
                return Err(domain("Zipf exponent must be finite and nonnegative"));
            }
            (1..=k).map(|i| (i as f64).powf(-s)).collect()
        }
    };
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        // k = 1 geometric/log-series degenerate to a zero vector.
        return Ok(TrueDistribution {
            kind: kind.clone(),
            probs: vec![1.0; 1],
        });
    }
    Ok(TrueDistribution {
        kind: kind.clone(),
        probs: weights.into_iter().map(|w| w / total).collect(),
    })
}

impl DistributionSpec {
    pub fn build(&self) -> Result<TrueDistribution> {
        make_distribution(&self.kind, self.k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampling {
    /// `N ∼ Multi(n, P)`.
    #[default]
    Multinomial,
    /// `N_i ∼ Poi(n p_i)` independently.
    #[serde(alias = "poisson")]
    PoissonProcess,
}

/// Draws one count vector of length `k`.
pub fn sample_counts(dist: &TrueDistribution, sampling: Sampling, n: u64, rng: &mut impl Rng) -> Vec<u64> {
    let p = dist.probs();
    match sampling {
        Sampling::Multinomial => {
            // Sequential conditional binomials: N_i | N_<i ∼ Bin(remaining, p_i / rest).
            let mut out = vec![0u64; p.len()];
            let mut remaining = n;
            let mut rest = 1.0f64;
            for (i, &pi) in p.iter().enumerate() {
                if remaining == 0 {
                    break;
                }
                if i + 1 == p.len() || pi >= rest {
                    out[i] = remaining;
                    break;
                }
                let prob = (pi / rest).clamp(0.0, 1.0);
                let draw = if prob > 0.0 {
                    Binomial::new(remaining, prob).expect("valid binomial").sample(rng)
                } else {
                    0
                };
                out[i] = draw;
                remaining -= draw;
                rest -= pi;
            }
            out
        }
        Sampling::PoissonProcess => p
            .iter()
            .map(|&pi| {
                let lam = n as f64 * pi;
                if lam > 0.0 {
                    Poisson::new(lam).expect("positive rate").sample(rng) as u64
                } else {
                    0
                }
            })
            .collect(),
    }
}

/// [`sample_counts`] wrapped as [`CountData`] with concentration `n`.
pub fn sample(dist: &TrueDistribution, sampling: Sampling, n: u64, rng: &mut impl Rng) -> Result<CountData> {
    CountData::new(sample_counts(dist, sampling, n, rng), n)
}

/// The ChaCha8 stream for trial `trial` at the `n_index`-th sample size.
pub fn trial_rng(seed: u64, n_index: usize, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((n_index as u64) << 32) | trial as u64);
    rng
}

fn default_functional() -> FunctionalKind {
    FunctionalKind::ShannonEntropy
}

fn default_tol() -> f64 {
    1e-6
}

fn default_kappa() -> f64 {
    3.6
}

/// A Monte-Carlo experiment, typically read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub distribution: DistributionSpec,
    #[serde(default)]
    pub sampling: Sampling,
    pub n_list: Vec<u64>,
    pub trials: usize,
    pub estimators: Vec<Method>,
    pub seed: u64,
    #[serde(default = "default_functional")]
    pub functional: FunctionalKind,
    #[serde(default)]
    pub kernel: KernelFamily,
    #[serde(default)]
    pub grid_size: Option<usize>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(invalid("trials must be at least 1"));
        }
        if self.n_list.is_empty() || self.n_list.contains(&0) {
            return Err(invalid("n_list must hold positive sample sizes"));
        }
        if self.estimators.is_empty() {
            return Err(invalid("no estimators listed"));
        }
        self.functional.validate()
    }
}

/// Summary of one estimator at one sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseEntry {
    pub estimator: Method,
    pub n: u64,
    pub k: usize,
    pub trials: usize,
    pub rmse: f64,
    pub mean: f64,
    /// Population standard deviation over trials.
    pub std: f64,
    pub truth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseReport {
    pub functional: FunctionalKind,
    pub distribution: DistributionSpec,
    pub sampling: Sampling,
    pub seed: u64,
    pub entries: Vec<RmseEntry>,
}

impl RmseReport {
    pub fn entry(&self, estimator: Method, n: u64) -> Option<&RmseEntry> {
        self.entries.iter().find(|e| e.estimator == estimator && e.n == n)
    }

    /// Long format: `estimator,n,k,trial_count,rmse,mean,std,truth`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("estimator,n,k,trial_count,rmse,mean,std,truth\n");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{},{},{},{},{:?},{:?},{:?},{:?}",
                e.estimator, e.n, e.k, e.trials, e.rmse, e.mean, e.std, e.truth
            );
        }
        out
    }
}

/// Runs every estimator on the same samples, trial-parallel, aggregating in a
/// fixed order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RmseReport> {
    config.validate()?;
    let dist = config.distribution.build()?;
    let spec = FunctionalSpec::new(config.functional)?;
    let opts = EstimatorOptions {
        grid: GridOptions {
            size: config.grid_size,
            min_mass: None,
        },
        fit: FitOptions::with_tol(config.tol),
        localized: LocalizedConfig {
            kappa: config.kappa,
            split_counts: None,
        },
    };
    let mut entries = Vec::new();
    for (n_index, &n) in config.n_list.iter().enumerate() {
        let kernel = MixtureKernel::new(config.kernel, n)?;
        let truth = dist.functional_value(&spec, n);
        let per_trial: Vec<Vec<f64>> = (0..config.trials)
            .into_par_iter()
            .map(|trial| {
                let mut rng = trial_rng(config.seed, n_index, trial);
                let counts = sample(&dist, config.sampling, n, &mut rng)?;
                config
                    .estimators
                    .iter()
                    .map(|&m| estimate(&counts, &spec, m, &kernel, &opts).map(|r| r.value))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()?;
        for (e_idx, &method) in config.estimators.iter().enumerate() {
            let values: Vec<f64> = per_trial.iter().map(|v| v[e_idx]).collect();
            entries.push(summarize(method, n, dist.k(), &values, truth));
        }
    }
    Ok(RmseReport {
        functional: config.functional,
        distribution: config.distribution.clone(),
        sampling: config.sampling,
        seed: config.seed,
        entries,
    })
}

fn summarize(estimator: Method, n: u64, k: usize, values: &[f64], truth: f64) -> RmseEntry {
    let t = values.len() as f64;
    let mean = values.iter().sum::<f64>() / t;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t;
    let mse = values.iter().map(|v| (v - truth).powi(2)).sum::<f64>() / t;
    RmseEntry {
        estimator,
        n,
        k,
        trials: values.len(),
        rmse: mse.sqrt(),
        mean,
        std: var.sqrt(),
        truth,
    }
}

/// Mean and spread of `W₁(π̂, π_P)` at one sample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct W1Point {
    pub n: u64,
    pub mean: f64,
    pub std: f64,
}

/// `W₁` between the NPMLE and the true histogram, averaged over trials per `n`.
pub fn w1_curve(
    dist: &TrueDistribution,
    n_list: &[u64],
    trials: usize,
    seed: u64,
    sampling: Sampling,
    grid: &GridOptions,
    opts: &FitOptions,
) -> Result<Vec<W1Point>> {
    if trials == 0 {
        return Err(invalid("trials must be at least 1"));
    }
    let truth = dist.histogram();
    n_list
        .iter()
        .enumerate()
        .map(|(n_index, &n)| {
            let kernel = MixtureKernel::poisson(n)?;
            let dists: Vec<f64> = (0..trials)
                .into_par_iter()
                .map(|trial| {
                    let mut rng = trial_rng(seed, n_index, trial);
                    let counts = sample(dist, sampling, n, &mut rng)?;
                    let g = grid.build(&counts)?;
                    let fit = fit_npmle_with(&counts, &g, &kernel, opts)?;
                    wasserstein(&fit.mixing, &truth, 1.0)
                })
                .collect::<Result<_>>()?;
            let t = dists.len() as f64;
            let mean = dists.iter().sum::<f64>() / t;
            let std = (dists.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / t).sqrt();
            Ok(W1Point { n, mean, std })
        })
        .collect()
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let m = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / m;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
