//! Acceptance gate: one line per criterion, nonzero exit if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use countmix::eval::{fit_and_test, wasserstein, GofModelKind};
use countmix::functionals::{discovery_curve, good_turing_unseen, plugin, FunctionalKind, FunctionalSpec, Method};
use countmix::io::butterfly;
use countmix::kernels::{mixture_log_density, KernelFamily, MixingDistribution, MixtureKernel};
use countmix::npmle::{
    fit_npmle_with, fit_penalized, log_likelihood, scaled_kl_profile, CountData, FitOptions, FitResult, Grid,
    GridOptions, PenalizedConfig,
};
use countmix::sim::{
    make_distribution, run_experiment, sample, trial_rng, w1_curve, DistributionKind, DistributionSpec,
    ExperimentConfig, Sampling,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Binomial, Discrete, Poisson};

const GAP_TOL: f64 = 1e-6;
const CERT_AGREE: f64 = 1e-10;
const ORACLE_SLACK: f64 = 1e-4;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn reference_kinds() -> [DistributionKind; 6] {
    [
        DistributionKind::Uniform,
        DistributionKind::TwoMixedUniform,
        DistributionKind::SpikeAndUniform,
        DistributionKind::Geometric,
        DistributionKind::LogSeries,
        DistributionKind::Zipf { s: 1.0 },
    ]
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.random::<f64>() * (hi.ln() - lo.ln()) + lo.ln()).exp()
}

fn criterion_1() -> Outcome {
    let file = butterfly();
    let fp = file.fingerprint();
    let mut ok = true;
    let mut parts = Vec::new();
    for t in [10u64, 15, 20, 25, 30] {
        let n = fp.truncated(t).iter().map(|(j, m)| j * m).sum::<u64>();
        let run = |kind| {
            fit_and_test(
                &fp,
                t,
                kind,
                n,
                KernelFamily::Poisson,
                &GridOptions::default(),
                &FitOptions::default(),
            )
            .map(|(r, _)| r.p_value)
        };
        let (mix, pm) = match (run(GofModelKind::Mixture), run(GofModelKind::PModel)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => return check(false, format!("T={t}: {e}")),
        };
        ok &= mix > 0.05 && pm < 1e-3;
        parts.push(format!("T={t} mix={mix:.4} p-model={pm:.3e}"));
    }
    check(ok, parts.join("; "))
}

/// Gap recomputed with statrs pmfs and a hand-rolled log-sum-exp.
fn oracle_gap(fit: &FitResult, counts: &CountData, grid: &Grid, family: KernelFamily) -> f64 {
    let n = counts.n();
    let ln_pmf = |x: u64, r: f64| -> f64 {
        match family {
            KernelFamily::Poisson => {
                if r == 0.0 {
                    if x == 0 {
                        0.0
                    } else {
                        f64::NEG_INFINITY
                    }
                } else {
                    Poisson::new(n as f64 * r).unwrap().ln_pmf(x)
                }
            }
            KernelFamily::Binomial => Binomial::new(r, n).unwrap().ln_pmf(x),
        }
    };
    let mut xs: Vec<u64> = counts.iter_all().collect();
    xs.sort_unstable();
    let mut rows: Vec<(u64, f64)> = Vec::new();
    for x in xs {
        match rows.last_mut() {
            Some((v, c)) if *v == x => *c += 1.0,
            _ => rows.push((x, 1.0)),
        }
    }
    let ln_f: Vec<f64> = rows
        .iter()
        .map(|&(x, _)| {
            let terms: Vec<f64> = fit.mixing.iter().map(|(a, w)| w.ln() + ln_pmf(x, a)).collect();
            let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln()
        })
        .collect();
    let k = counts.k() as f64;
    let best = grid
        .atoms()
        .iter()
        .map(|&r| {
            rows.iter()
                .zip(&ln_f)
                .map(|(&(x, c), lf)| c * (ln_pmf(x, r) - lf).exp())
                .sum::<f64>()
                / k
        })
        .fold(f64::NEG_INFINITY, f64::max);
    (best - 1.0).max(0.0)
}

struct Instance {
    counts: CountData,
    grid: Grid,
    family: KernelFamily,
    fit: FitResult,
}

fn random_instances() -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE);
    (0..200)
        .map(|i| {
            let kind = &reference_kinds()[i % 6];
            let family = if (i / 6) % 2 == 0 {
                KernelFamily::Poisson
            } else {
                KernelFamily::Binomial
            };
            let k = log_uniform(&mut rng, 10.0, 1e4).round() as usize;
            let n = log_uniform(&mut rng, 100.0, 1e5).round() as u64;
            let dist = make_distribution(kind, k).unwrap();
            let counts = sample(&dist, Sampling::Multinomial, n, &mut rng).unwrap();
            let kernel = MixtureKernel::new(family, n).unwrap();
            let grid = GridOptions::default().build(&counts).unwrap();
            let fit = fit_npmle_with(&counts, &grid, &kernel, &FitOptions::default()).unwrap();
            Instance {
                counts,
                grid,
                family,
                fit,
            }
        })
        .collect()
}

fn criterion_2(instances: &[Instance]) -> Outcome {
    let mut worst_gap = 0.0f64;
    let mut worst_agree = 0.0f64;
    for inst in instances {
        let oracle = oracle_gap(&inst.fit, &inst.counts, &inst.grid, inst.family);
        worst_gap = worst_gap.max(inst.fit.optimality_gap);
        worst_agree = worst_agree.max((oracle - inst.fit.optimality_gap).abs());
    }
    check(
        worst_gap <= GAP_TOL && worst_agree <= CERT_AGREE,
        format!(
            "{} fits, max gap {worst_gap:.2e}, max |oracle - reported| {worst_agree:.2e}",
            instances.len()
        ),
    )
}

fn criterion_3(instances: &[Instance]) -> Outcome {
    let mut violations = 0;
    for inst in instances {
        let n = inst.counts.n() as f64;
        let lo = inst.counts.iter_all().min().unwrap() as f64 / n;
        let hi = inst.counts.iter_all().max().unwrap() as f64 / n;
        let g = inst.grid.max_spacing();
        let inside = inst.fit.mixing.atoms().iter().all(|&a| a >= lo - g && a <= hi + g);
        let sparse = inst.fit.mixing.iter().filter(|(_, w)| *w > 0.0).count() <= inst.counts.distinct();
        if !(inside && sparse) {
            violations += 1;
        }
    }
    check(
        violations == 0,
        format!("{violations} violations over {} fits", instances.len()),
    )
}

/// Best log-likelihood over every support of at most three grid atoms, weights on a
/// lattice of step `1/steps`.
fn simplex_oracle(counts: &[u64], n: u64, atoms: &[f64], steps: usize) -> f64 {
    let pmf: Vec<Vec<f64>> = counts
        .iter()
        .map(|&x| {
            atoms
                .iter()
                .map(|&a| Poisson::new(n as f64 * a).map_or(if x == 0 { 1.0 } else { 0.0 }, |p| p.pmf(x)))
                .collect()
        })
        .collect();
    let m = atoms.len();
    let mut best = f64::NEG_INFINITY;
    for a in 0..m {
        for b in a + 1..m {
            for c in b + 1..m {
                for i in 0..=steps {
                    for j in 0..=steps - i {
                        let w = [
                            i as f64 / steps as f64,
                            j as f64 / steps as f64,
                            (steps - i - j) as f64 / steps as f64,
                        ];
                        let ll: f64 = pmf
                            .iter()
                            .map(|row| (w[0] * row[a] + w[1] * row[b] + w[2] * row[c]).ln())
                            .sum();
                        best = best.max(ll);
                    }
                }
            }
        }
    }
    best
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = f64::INFINITY;
    for _ in 0..50 {
        let n = rng.random_range(5..60u64);
        let len = rng.random_range(1..=3usize);
        let counts: Vec<u64> = (0..len).map(|_| rng.random_range(0..=n)).collect();
        let mut atoms: Vec<f64> = (0..5).map(|_| rng.random::<f64>()).collect();
        atoms.sort_by(f64::total_cmp);
        let grid = Grid::new(atoms.clone()).unwrap();
        let data = CountData::new(counts.clone(), n).unwrap();
        let kernel = MixtureKernel::poisson(n).unwrap();
        let fit = fit_npmle_with(&data, &grid, &kernel, &FitOptions::with_tol(1e-9)).unwrap();
        let ll = log_likelihood(&fit.mixing, &data, &kernel).unwrap();
        worst = worst.min(ll - simplex_oracle(&counts, n, &atoms, 1000));
    }
    check(
        worst >= -ORACLE_SLACK,
        format!("min (fit - oracle) log-likelihood {worst:.3e}"),
    )
}

fn four_level_distribution() -> DistributionKind {
    let mut probs = vec![1.0 / 24.0; 4];
    probs.extend([1.0 / 12.0; 3]);
    probs.extend([1.0 / 6.0; 2]);
    probs.push(0.25);
    DistributionKind::Custom { probs }
}

fn criterion_5() -> Outcome {
    let dist = make_distribution(&four_level_distribution(), 0).unwrap();
    let ns = [500u64, 2000, 5000, 20000];
    let curve = match w1_curve(
        &dist,
        &ns,
        30,
        5,
        Sampling::Multinomial,
        &GridOptions::default(),
        &FitOptions::default(),
    ) {
        Ok(c) => c,
        Err(e) => return check(false, e.to_string()),
    };
    let decreasing = curve.windows(2).all(|w| w[1].mean < w[0].mean);
    let slope = countmix::sim::loglog_slope(&curve.iter().map(|p| (p.n as f64, p.mean)).collect::<Vec<_>>());
    let means: Vec<String> = curve.iter().map(|p| format!("{:.4}", p.mean)).collect();
    check(
        decreasing && (-0.7..=-0.3).contains(&slope),
        format!("mean W1 [{}], slope {slope:.3}", means.join(", ")),
    )
}

fn entropy_config(
    kind: DistributionKind,
    k: usize,
    n: u64,
    trials: usize,
    estimators: Vec<Method>,
) -> ExperimentConfig {
    ExperimentConfig {
        distribution: DistributionSpec { kind, k },
        sampling: Sampling::Multinomial,
        n_list: vec![n],
        trials,
        estimators,
        seed: 6,
        functional: FunctionalKind::ShannonEntropy,
        kernel: KernelFamily::Poisson,
        grid_size: None,
        tol: 1e-6,
        kappa: 3.6,
    }
}

fn criterion_6() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for kind in [DistributionKind::Uniform, DistributionKind::Zipf { s: 1.0 }] {
        let small = entropy_config(kind.clone(), 1000, 1000, 50, vec![Method::Localized, Method::Empirical]);
        let large = entropy_config(kind.clone(), 100, 100_000, 50, vec![Method::Localized]);
        let (small, large) = match (run_experiment(&small), run_experiment(&large)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => return check(false, e.to_string()),
        };
        let np = small.entries[0].rmse;
        let emp = small.entries[1].rmse;
        let big = large.entries[0].rmse;
        ok &= np < emp && big < 0.02;
        parts.push(format!(
            "{kind:?}: NP-L {np:.4} vs EMP {emp:.4}, k=100 n=1e5 NP-L {big:.4}"
        ));
    }
    check(ok, parts.join("; "))
}

fn criterion_7() -> Outcome {
    let k_star = 500;
    let n = 10_000u64;
    let tol = 1e-6;
    let dist = make_distribution(&DistributionKind::Uniform, k_star).unwrap();
    let kernel = MixtureKernel::poisson(n).unwrap();
    let mut k_hats = Vec::new();
    let mut worst_foc = 0.0f64;
    let mut worst_rise = f64::NEG_INFINITY;
    for trial in 0..20 {
        let mut rng = trial_rng(7, 0, trial);
        let counts = sample(&dist, Sampling::Multinomial, n, &mut rng)
            .unwrap()
            .positive_only()
            .unwrap();
        let fit = match fit_penalized(
            &counts,
            &GridOptions::default(),
            &kernel,
            tol,
            &PenalizedConfig::default(),
        ) {
            Ok(f) => f,
            Err(e) => return check(false, e.to_string()),
        };
        let k = fit.k as f64;
        if fit.k_hat > k {
            let f0 = mixture_log_density(&kernel, &fit.mixing, 0).unwrap().exp();
            worst_foc = worst_foc.max((f0 - (fit.k_hat - k) / fit.k_hat).abs());
        }
        k_hats.push(fit.k_hat);
        if trial < 3 {
            let kps: Vec<f64> = (0..8).map(|j| k * (1.0 + 0.05 * j as f64)).collect();
            let profile = scaled_kl_profile(&counts, &kps, &GridOptions::default(), &kernel, tol).unwrap();
            for w in profile.windows(2) {
                worst_rise = worst_rise.max(w[1].1 - w[0].1);
            }
        }
    }
    k_hats.sort_by(f64::total_cmp);
    let median = 0.5 * (k_hats[9] + k_hats[10]);
    check(
        (400.0..=600.0).contains(&median) && worst_foc <= 1e-4 && worst_rise <= 2.0 * tol,
        format!("median k_hat {median:.1}, max |f(0) - (k_hat-k)/k_hat| {worst_foc:.2e}, max scaled-KL rise {worst_rise:.2e}"),
    )
}

fn criterion_8() -> Outcome {
    let k = 5000;
    let n = 2000u64;
    let dist = make_distribution(&DistributionKind::Zipf { s: 1.0 }, k).unwrap();
    let counts = sample(&dist, Sampling::Multinomial, n, &mut trial_rng(8, 0, 0)).unwrap();
    let kernel = MixtureKernel::poisson(n).unwrap();
    let grid = GridOptions::default().build(&counts).unwrap();
    let fit = fit_npmle_with(&counts, &grid, &kernel, &FitOptions::default()).unwrap();
    let ts = [0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0];
    let curve = discovery_curve(&fit.mixing, k, n, &ts).unwrap();
    let monotone = curve.windows(2).all(|w| w[1].1 >= w[0].1);
    let bounded = curve.iter().all(|&(_, v)| v <= k as f64);
    let mut worst_rel = 0.0f64;
    for &(t, v) in curve.iter().filter(|(t, _)| *t <= 1.0) {
        let gt = good_turing_unseen(&counts, t).unwrap().unclamped;
        worst_rel = worst_rel.max((v - gt).abs() / gt.abs());
    }
    let gt4 = good_turing_unseen(&counts, 4.0).unwrap().unclamped;
    let np4 = curve.last().unwrap().1;
    check(
        monotone && bounded && worst_rel <= 0.15 && gt4.abs() > k as f64 && np4 <= k as f64,
        format!("monotone {monotone}, max rel diff t<=1 {worst_rel:.3}, t=4 GT {gt4:.3e} vs NP {np4:.1}"),
    )
}

fn random_pi(rng: &mut ChaCha8Rng, max_len: usize) -> MixingDistribution {
    let len = rng.random_range(1..max_len);
    let mut atoms: Vec<f64> = (0..len).map(|_| rng.random::<f64>()).collect();
    atoms.sort_by(f64::total_cmp);
    atoms.dedup();
    let weights = atoms.iter().map(|_| rng.random::<f64>() + 0.01).collect();
    MixingDistribution::new(atoms, weights).unwrap()
}

fn criterion_9() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;

    // Likelihood as negative scaled entropy plus KL.
    let counts = CountData::new(vec![0, 1, 1, 3, 7, 7, 7, 12], 20).unwrap();
    let kernel = MixtureKernel::poisson(20).unwrap();
    let pi = MixingDistribution::new(vec![0.02, 0.2, 0.5], vec![0.3, 0.3, 0.4]).unwrap();
    let k = counts.k() as f64;
    let mut entropy = 0.0;
    let mut kl = 0.0;
    for x in [0u64, 1, 3, 7, 12] {
        let p = counts.iter_all().filter(|&c| c == x).count() as f64 / k;
        let f = mixture_log_density(&kernel, &pi, x).unwrap().exp();
        entropy -= p * p.ln();
        kl += p * (p / f).ln();
    }
    let kl_err = (log_likelihood(&pi, &counts, &kernel).unwrap() + k * (entropy + kl)).abs();
    ok &= kl_err <= 1e-8;
    notes.push(format!("KL identity {kl_err:.1e}"));

    // Expected log-likelihood against exhaustive enumeration, k = 3.
    let n = 6u64;
    let p = [0.1, 0.3, 0.6];
    let kernel = MixtureKernel::poisson(n).unwrap();
    let top = 40u64;
    let poi = |x: u64, lam: f64| Poisson::new(lam).unwrap().pmf(x);
    let logf: Vec<f64> = (0..=top)
        .map(|x| mixture_log_density(&kernel, &pi, x).unwrap())
        .collect();
    let mut expectation = 0.0;
    for a in 0..=top {
        for b in 0..=top {
            for c in 0..=top {
                let w = poi(a, n as f64 * p[0]) * poi(b, n as f64 * p[1]) * poi(c, n as f64 * p[2]);
                expectation += w * (logf[a as usize] + logf[b as usize] + logf[c as usize]);
            }
        }
    }
    let cross: f64 = (0..=top)
        .map(|x| p.iter().map(|&pi| poi(x, n as f64 * pi)).sum::<f64>() * logf[x as usize])
        .sum();
    let el_err = (expectation - cross).abs();
    ok &= el_err <= 1e-9;
    notes.push(format!("expected likelihood {el_err:.1e}"));

    // Renyi entropy from the power sum.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut renyi_err = 0.0f64;
    for _ in 0..100 {
        let pi = random_pi(&mut rng, 8);
        let alpha = rng.random_range(0.05..0.95);
        let k = rng.random_range(1..100usize);
        let ps = plugin(
            &FunctionalSpec::new(FunctionalKind::PowerSum { alpha }).unwrap(),
            &pi,
            k,
            100,
        )
        .unclamped;
        let re = plugin(
            &FunctionalSpec::new(FunctionalKind::RenyiEntropy { alpha }).unwrap(),
            &pi,
            k,
            100,
        )
        .unclamped;
        renyi_err = renyi_err.max((re - ps.ln() / (1.0 - alpha)).abs());
    }
    ok &= renyi_err <= 1e-12;
    notes.push(format!("Renyi/power-sum {renyi_err:.1e}"));

    // Wasserstein metric axioms.
    let mut axiom_err = 0.0f64;
    for _ in 0..200 {
        let (a, b, c) = (random_pi(&mut rng, 6), random_pi(&mut rng, 6), random_pi(&mut rng, 6));
        for q in [1.0, 2.0] {
            let ab = wasserstein(&a, &b, q).unwrap();
            let ba = wasserstein(&b, &a, q).unwrap();
            let bc = wasserstein(&b, &c, q).unwrap();
            let ac = wasserstein(&a, &c, q).unwrap();
            let aa = wasserstein(&a, &a, q).unwrap();
            axiom_err = axiom_err.max((ab - ba).abs()).max(aa).max(ac - ab - bc).max(-ab);
        }
    }
    ok &= axiom_err <= 1e-12;
    notes.push(format!("Wasserstein axioms {axiom_err:.1e}"));
    check(ok, notes.join(", "))
}

fn report(id: usize, limit: Duration, run: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = run();
    let took = start.elapsed();
    let status = if out.pass { "PASS" } else { "FAIL" };
    println!(
        "criterion {id}: {status} ({:.1}s, budget {}s) {}",
        took.as_secs_f64(),
        limit.as_secs(),
        out.detail
    );
    if took > limit {
        println!("criterion {id}: note: over the runtime budget; budgets assume an optimised build");
    }
    out.pass
}

fn main() -> ExitCode {
    let mut all = true;
    all &= report(1, Duration::from_secs(10), criterion_1);
    let start = Instant::now();
    let instances = random_instances();
    let fit_time = start.elapsed();
    all &= report(2, Duration::from_secs(300), || {
        let mut o = criterion_2(&instances);
        o.detail = format!("{} (fitting {:.1}s)", o.detail, fit_time.as_secs_f64());
        o
    });
    all &= report(3, Duration::from_secs(300), || criterion_3(&instances));
    all &= report(4, Duration::from_secs(60), criterion_4);
    all &= report(5, Duration::from_secs(180), criterion_5);
    all &= report(6, Duration::from_secs(300), criterion_6);
    all &= report(7, Duration::from_secs(300), criterion_7);
    all &= report(8, Duration::from_secs(60), criterion_8);
    all &= report(9, Duration::from_secs(60), criterion_9);
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
