//! Symmetric additive functionals `G(P) = Σ_i g(p_i)` and their estimators.
//!
//! The NPMLE plug-in is `k · E_π̂[g]`. The localized estimator splits the categories
//! at `κ ln n / n`: the small ones go through the NPMLE fitted on them alone, the
//! large ones through the bias-corrected empirical value
//! `g̃(x) = g(x) − (x / 2n) g''(x)`. Every estimate is finally clamped into the range
//! the functional can take.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Error, Result};
use crate::kernels::{MixingDistribution, MixtureKernel};
use crate::npmle::{
    fit_localized, fit_npmle_with, CountData, FitOptions, FitResult, GridOptions, LocalizedConfig, LocalizedFit,
};

/// Which functional to estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FunctionalKind {
    /// `Σ p_i log(1/p_i)`, in nats.
    ShannonEntropy,
    /// `Σ p_i^α`, `α ∈ (0, 1)`.
    PowerSum { alpha: f64 },
    /// `log(Σ p_i^α) / (1 − α)`, estimated through the power sum.
    RenyiEntropy { alpha: f64 },
    /// `#{i : p_i > 0}`; `min_mass` defaults to `1/k`.
    SupportSize { min_mass: Option<f64> },
    /// Expected number of categories unseen in the sample that show up in `t·n`
    /// further units of observation.
    Unseen { t: f64 },
}

impl FunctionalKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            FunctionalKind::ShannonEntropy => Ok(()),
            FunctionalKind::PowerSum { alpha } if alpha > 0.0 && alpha < 1.0 => Ok(()),
            FunctionalKind::PowerSum { alpha } => Err(domain(format!("power-sum alpha {alpha} outside (0, 1)"))),
            FunctionalKind::RenyiEntropy { alpha } if alpha > 0.0 && alpha != 1.0 && alpha.is_finite() => Ok(()),
            FunctionalKind::RenyiEntropy { alpha } => {
                Err(domain(format!("Renyi alpha {alpha} must be positive and not 1")))
            }
            FunctionalKind::SupportSize { min_mass: None } => Ok(()),
            FunctionalKind::SupportSize { min_mass: Some(m) } if m > 0.0 && m <= 1.0 => Ok(()),
            FunctionalKind::SupportSize { .. } => Err(domain("support min_mass outside (0, 1]")),
            FunctionalKind::Unseen { t } if t > 0.0 && t.is_finite() => Ok(()),
            FunctionalKind::Unseen { t } => Err(domain(format!("unseen horizon t = {t} must be positive"))),
        }
    }

    /// Default `[lower, upper]` range for an alphabet of size `k`.
    pub fn default_bounds(&self, k: usize) -> (f64, f64) {
        let kf = k as f64;
        match *self {
            FunctionalKind::ShannonEntropy | FunctionalKind::RenyiEntropy { .. } => (0.0, kf.ln().max(0.0)),
            FunctionalKind::PowerSum { alpha } => (0.0, kf.powf(1.0 - alpha)),
            FunctionalKind::SupportSize { .. } | FunctionalKind::Unseen { .. } => (0.0, kf),
        }
    }
}

impl fmt::Display for FunctionalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FunctionalKind::ShannonEntropy => write!(f, "entropy"),
            FunctionalKind::PowerSum { alpha } => write!(f, "power-sum:{alpha}"),
            FunctionalKind::RenyiEntropy { alpha } => write!(f, "renyi:{alpha}"),
            FunctionalKind::SupportSize { min_mass: None } => write!(f, "support"),
            FunctionalKind::SupportSize { min_mass: Some(m) } => write!(f, "support:{m}"),
            FunctionalKind::Unseen { t } => write!(f, "unseen:{t}"),
        }
    }
}

impl FromStr for FunctionalKind {
    type Err = Error;

    /// Parses `entropy`, `power-sum:A`, `renyi:A`, `support[:MINMASS]`, `unseen:T`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let num = |what: &str| -> Result<f64> {
            let a = arg.ok_or_else(|| invalid(format!("{name} needs a parameter, e.g. {name}:{what}")))?;
            a.trim()
                .parse::<f64>()
                .map_err(|_| invalid(format!("bad {name} parameter '{a}'")))
        };
        let kind = match name.trim() {
            "entropy" | "shannon" => FunctionalKind::ShannonEntropy,
            "power-sum" => FunctionalKind::PowerSum { alpha: num("0.5")? },
            "renyi" => FunctionalKind::RenyiEntropy { alpha: num("2")? },
            "support" => FunctionalKind::SupportSize {
                min_mass: match arg {
                    Some(_) => Some(num("0.001")?),
                    None => None,
                },
            },
            "unseen" => FunctionalKind::Unseen { t: num("1")? },
            other => return Err(invalid(format!("unknown functional '{other}'"))),
        };
        kind.validate()?;
        Ok(kind)
    }
}

/// A functional plus optional clamping bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunctionalSpec {
    pub kind: FunctionalKind,
    pub bounds: Option<(f64, f64)>,
}

impl FunctionalSpec {
    pub fn new(kind: FunctionalKind) -> Result<Self> {
        kind.validate()?;
        Ok(Self { kind, bounds: None })
    }

    pub fn entropy() -> Self {
        Self {
            kind: FunctionalKind::ShannonEntropy,
            bounds: None,
        }
    }

    pub fn with_bounds(mut self, lo: f64, hi: f64) -> Result<Self> {
        if !(lo <= hi) {
            return Err(invalid("lower bound exceeds upper bound"));
        }
        self.bounds = Some((lo, hi));
        Ok(self)
    }

    pub fn bounds_for(&self, k: usize) -> (f64, f64) {
        self.bounds.unwrap_or_else(|| self.kind.default_bounds(k))
    }

    /// Minimum nonzero mass for support-size estimation, `1/k` unless declared.
    pub fn min_mass(&self, k: usize) -> Option<f64> {
        match self.kind {
            FunctionalKind::SupportSize { min_mass } => Some(min_mass.unwrap_or(1.0 / k as f64)),
            _ => None,
        }
    }
}

/// Estimator that produced a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[serde(rename = "plugin")]
    PluginNpmle,
    Localized,
    Empirical,
    MillerMadow,
    GoodTuring,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::PluginNpmle => "plugin",
            Method::Localized => "localized",
            Method::Empirical => "empirical",
            Method::MillerMadow => "miller-madow",
            Method::GoodTuring => "good-turing",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "plugin" | "np" => Method::PluginNpmle,
            "localized" | "np-l" => Method::Localized,
            "empirical" | "emp" => Method::Empirical,
            "miller-madow" | "mm" => Method::MillerMadow,
            "good-turing" | "gt" => Method::GoodTuring,
            other => return Err(invalid(format!("unknown method '{other}'"))),
        })
    }
}

/// Summary of the fit behind an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub log_likelihood: f64,
    pub optimality_gap: f64,
    pub iterations: usize,
    pub converged: bool,
    pub atoms: usize,
}

impl From<&FitResult> for FitDiagnostics {
    fn from(fit: &FitResult) -> Self {
        Self {
            log_likelihood: fit.log_likelihood,
            optimality_gap: fit.optimality_gap,
            iterations: fit.iterations,
            converged: fit.converged,
            atoms: fit.mixing.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    /// Clamped estimate.
    pub value: f64,
    /// Estimate before clamping.
    pub unclamped: f64,
    pub method: Method,
    /// `(small-count part, large-count part)` for the localized estimator.
    pub parts: Option<(f64, f64)>,
    pub diagnostics: Option<FitDiagnostics>,
}

/// `g(x)`; for Rényi entropy this is the power-sum summand `x^α`.
pub fn g_eval(spec: &FunctionalSpec, x: f64, n: u64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    match spec.kind {
        FunctionalKind::ShannonEntropy => -x * x.ln(),
        FunctionalKind::PowerSum { alpha } | FunctionalKind::RenyiEntropy { alpha } => x.powf(alpha),
        FunctionalKind::SupportSize { .. } => 1.0,
        FunctionalKind::Unseen { t } => {
            let nx = n as f64 * x;
            (-nx).exp() * -(-t * nx).exp_m1()
        }
    }
}

/// Bias-corrected summand `g̃(x) = g(x) − (x / 2n) g''(x)` for `x > 0`.
pub fn bias_corrected_g(spec: &FunctionalSpec, p_hat: f64, n: u64) -> Result<f64> {
    if !(p_hat > 0.0) {
        return Err(domain(format!("bias correction needs p_hat > 0, got {p_hat}")));
    }
    let x = p_hat;
    let nf = n as f64;
    let g = g_eval(spec, x, n);
    Ok(match spec.kind {
        // h'' = -1/x, so the correction is +1/(2n).
        FunctionalKind::ShannonEntropy => g + 1.0 / (2.0 * nf),
        FunctionalKind::PowerSum { alpha } | FunctionalKind::RenyiEntropy { alpha } => {
            g - alpha * (alpha - 1.0) / (2.0 * nf) * x.powf(alpha - 1.0)
        }
        FunctionalKind::SupportSize { .. } => g,
        FunctionalKind::Unseen { t } => {
            let nx = nf * x;
            let second = nf * nf * (-nx).exp() * (1.0 - (1.0 + t).powi(2) * (-t * nx).exp());
            g - x / (2.0 * nf) * second
        }
    })
}

/// Turns the additive sum `Σ g` into the reported value and clamps it.
fn finalize(spec: &FunctionalSpec, k: usize, additive: f64) -> (f64, f64) {
    let (lo, hi) = spec.bounds_for(k);
    match spec.kind {
        FunctionalKind::RenyiEntropy { alpha } => {
            let unclamped = additive.max(1e-300).ln() / (1.0 - alpha);
            let top = (k as f64).powf(1.0 - alpha).max(1.0);
            let sum = additive.clamp(1e-300, top);
            (clamp(sum.ln() / (1.0 - alpha), lo, hi), unclamped)
        }
        _ => (clamp(additive, lo, hi), additive),
    }
}

fn clamp(v: f64, lo: f64, hi: f64) -> f64 {
    v.min(hi).max(lo)
}

/// NPMLE plug-in `k · E_π[g]`.
pub fn plugin(spec: &FunctionalSpec, mixing: &MixingDistribution, k: usize, n: u64) -> EstimateReport {
    let additive = k as f64 * mixing.expect(|r| g_eval(spec, r, n));
    let (value, unclamped) = finalize(spec, k, additive);
    EstimateReport {
        value,
        unclamped,
        method: Method::PluginNpmle,
        parts: None,
        diagnostics: None,
    }
}

/// `|J| · E_π̂_I[g] + Σ_{i∉J} g̃(p̂_i)`, clamped.
pub fn estimate_combined(
    counts: &CountData,
    spec: &FunctionalSpec,
    localized: &LocalizedFit,
) -> Result<EstimateReport> {
    let n = counts.n();
    let small = match &localized.fit {
        Some(fit) => localized.small.len() as f64 * fit.mixing.expect(|r| g_eval(spec, r, n)),
        None => 0.0,
    };
    let mut large = 0.0;
    for &i in &localized.large {
        let p = counts.p_hat(i);
        large += if p > 0.0 {
            bias_corrected_g(spec, p, n)?
        } else {
            g_eval(spec, 0.0, n)
        };
    }
    let (value, unclamped) = finalize(spec, counts.k(), small + large);
    Ok(EstimateReport {
        value,
        unclamped,
        method: Method::Localized,
        parts: Some((small, large)),
        diagnostics: localized.fit.as_ref().map(FitDiagnostics::from),
    })
}

/// Empirical plug-in `Σ_i g(N_i / n)`.
pub fn empirical_plugin(counts: &CountData, spec: &FunctionalSpec) -> EstimateReport {
    let n = counts.n();
    let additive: f64 = counts
        .counts()
        .iter()
        .map(|&c| g_eval(spec, c as f64 / n as f64, n))
        .sum();
    let (value, unclamped) = finalize(spec, counts.k(), additive);
    EstimateReport {
        value,
        unclamped,
        method: Method::Empirical,
        parts: None,
        diagnostics: None,
    }
}

/// Miller–Madow entropy: empirical entropy at `N_i / Σ N` plus `(k₊ − 1) / (2 Σ N)`.
pub fn miller_madow(counts: &CountData, spec: &FunctionalSpec) -> Result<EstimateReport> {
    if spec.kind != FunctionalKind::ShannonEntropy {
        return Err(invalid("Miller-Madow applies to Shannon entropy only"));
    }
    let total = counts.total();
    let additive = if total == 0 {
        0.0
    } else {
        let nt = total as f64;
        let h: f64 = counts
            .counts()
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / nt;
                -p * p.ln()
            })
            .sum();
        h + (counts.positive() as f64 - 1.0) / (2.0 * nt)
    };
    let (value, unclamped) = finalize(spec, counts.k(), additive);
    Ok(EstimateReport {
        value,
        unclamped,
        method: Method::MillerMadow,
        parts: None,
        diagnostics: None,
    })
}

/// Good–Toulmin `−Σ_{j≥1} (−t)^j φ_j`, floored at zero.
///
/// The series is finite (it stops at the largest observed count) and oscillates
/// wildly for `t > 1`; `unclamped` keeps the raw value.
pub fn good_turing_unseen(counts: &CountData, t: f64) -> Result<EstimateReport> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(domain(format!("Good-Toulmin horizon t = {t} must be positive")));
    }
    let max = counts.max_count() as usize;
    let mut phi = vec![0.0f64; max + 1];
    for &c in counts.counts() {
        phi[c as usize] += 1.0;
    }
    // Horner form t(φ1 − t(φ2 − t(φ3 − …))); overflow saturates to ±inf, never NaN.
    let mut acc = 0.0;
    for j in (1..=max).rev() {
        acc = phi[j] - t * acc;
    }
    let raw = t * acc;
    Ok(EstimateReport {
        value: raw.max(0.0),
        unclamped: raw,
        method: Method::GoodTuring,
        parts: None,
        diagnostics: None,
    })
}

/// NPMLE plug-in for the unseen functional at horizon `t`.
pub fn unseen_plugin(mixing: &MixingDistribution, k: usize, n: u64, t: f64) -> Result<EstimateReport> {
    let spec = FunctionalSpec::new(FunctionalKind::Unseen { t })?;
    Ok(plugin(&spec, mixing, k, n))
}

/// Plug-in unseen estimates over several horizons against one fit.
pub fn discovery_curve(mixing: &MixingDistribution, k: usize, n: u64, ts: &[f64]) -> Result<Vec<(f64, f64)>> {
    ts.iter()
        .map(|&t| unseen_plugin(mixing, k, n, t).map(|r| (t, r.value)))
        .collect()
}

/// Knobs for the fit-based estimators.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EstimatorOptions {
    pub grid: GridOptions,
    pub fit: FitOptions,
    pub localized: LocalizedConfig,
}

/// Runs one estimator end to end on raw counts.
pub fn estimate(
    counts: &CountData,
    spec: &FunctionalSpec,
    method: Method,
    kernel: &MixtureKernel,
    opts: &EstimatorOptions,
) -> Result<EstimateReport> {
    spec.kind.validate()?;
    let mut grid_opts = opts.grid;
    if let Some(mm) = spec.min_mass(counts.k()) {
        grid_opts.min_mass = Some(mm);
    }
    match method {
        Method::PluginNpmle => {
            let grid = grid_opts.build(counts)?;
            let fit = fit_npmle_with(counts, &grid, kernel, &opts.fit)?;
            let mut report = plugin(spec, &fit.mixing, counts.k(), counts.n());
            report.diagnostics = Some(FitDiagnostics::from(&fit));
            Ok(report)
        }
        Method::Localized => {
            let loc = fit_localized(counts, &opts.localized, kernel, &grid_opts, &opts.fit)?;
            estimate_combined(counts, spec, &loc)
        }
        Method::Empirical => Ok(empirical_plugin(counts, spec)),
        Method::MillerMadow => miller_madow(counts, spec),
        Method::GoodTuring => match spec.kind {
            FunctionalKind::Unseen { t } => good_turing_unseen(counts, t),
            _ => Err(invalid("Good-Toulmin estimates the unseen functional only")),
        },
    }
}
