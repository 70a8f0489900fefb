//! Command-line front end.
//!
//! Every subcommand reads a count file (or standard input), delegates to the
//! library, and writes one JSON document or CSV table. Exit status is 0 on
//! success, 2 on a usage error and 1 when the computation fails.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::eval::{fit_and_test, GofModelKind, GofReport};
use crate::functionals::{
    discovery_curve, estimate, good_turing_unseen, EstimatorOptions, FunctionalKind, FunctionalSpec, Method,
};
use crate::io::{read_count_file, write_fit, write_report, CountFile};
use crate::kernels::{KernelFamily, MixtureKernel};
use crate::npmle::{
    fit_localized, fit_npmle_with, fit_penalized, CountData, FitOptions, FitResult, GridOptions, LocalizedConfig,
    PenalizedConfig, Regularizer,
};
use crate::sim::{run_experiment, ExperimentConfig};

/// Environment variable capping the worker threads; 0 or unset means automatic.
pub const THREADS_ENV: &str = "COUNTMIX_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "countmix",
    version,
    about = "Poisson and binomial mixture models for frequency counts"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the NPMLE mixing distribution.
    Fit(Common),
    /// Estimate a symmetric functional.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// entropy, power-sum:ALPHA, renyi:ALPHA, support[:MINMASS] or unseen:T.
        #[arg(long, default_value = "entropy")]
        functional: FunctionalKind,
        #[arg(long, value_enum, default_value_t = MethodArg::Plugin)]
        method: MethodArg,
    },
    /// Fit the NPMLE on the small counts only.
    Localized(Common),
    /// Select the support size by penalised likelihood.
    Penalized {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10.0)]
        c0: f64,
        #[arg(long, default_value_t = 1.0)]
        c1: f64,
    },
    /// Chi-squared goodness of fit on the fingerprint truncated at T.
    Gof {
        #[command(flatten)]
        common: Common,
        #[arg(long = "T", value_name = "T")]
        t: u64,
        #[arg(long, value_enum, default_value_t = ModelArg::Mixture)]
        model: ModelArg,
    },
    /// Discovery curve of unseen categories.
    Unseen {
        #[command(flatten)]
        common: Common,
        /// Comma-separated horizons.
        #[arg(long = "t-grid", default_value = "0.5,1,2,4")]
        t_grid: String,
    },
    /// Monte-Carlo RMSE experiment from a JSON config.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Count file; standard input when absent.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Concentration; defaults to the file's #n or the sum of the counts.
    #[arg(long)]
    pub n: Option<u64>,
    /// Alphabet size; extra cells are zeros.
    #[arg(long)]
    pub k: Option<usize>,
    /// Grid size; defaults to max(500, min(2000, ceil(10 sqrt k))).
    #[arg(long = "grid-size")]
    pub grid_size: Option<usize>,
    /// Count kernel [default: poisson].
    #[arg(long, value_enum)]
    pub kernel: Option<KernelArg>,
    /// Optimality tolerance [default: 1e-6].
    #[arg(long)]
    pub tol: Option<f64>,
    /// Random seed; replaces the seed of a simulate config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output path; standard output when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Poisson,
    Binomial,
}

impl From<KernelArg> for KernelFamily {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Poisson => KernelFamily::Poisson,
            KernelArg::Binomial => KernelFamily::Binomial,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Plugin,
    Localized,
    Empirical,
    MillerMadow,
    GoodTuring,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Plugin => Method::PluginNpmle,
            MethodArg::Localized => Method::Localized,
            MethodArg::Empirical => Method::Empirical,
            MethodArg::MillerMadow => Method::MillerMadow,
            MethodArg::GoodTuring => Method::GoodTuring,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Mixture,
    PModel,
}

impl Common {
    fn tol(&self) -> f64 {
        self.tol.unwrap_or(1e-6)
    }

    fn family(&self) -> KernelFamily {
        self.kernel.map(Into::into).unwrap_or_default()
    }

    fn grid(&self) -> GridOptions {
        GridOptions {
            size: self.grid_size,
            min_mass: None,
        }
    }

    fn fit_options(&self) -> Result<FitOptions> {
        let tol = self.tol();
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(invalid("--tol must be positive"));
        }
        Ok(FitOptions::with_tol(tol))
    }

    fn read_file(&self) -> Result<CountFile> {
        let mut file = match &self.input {
            Some(path) => read_count_file(path)?,
            None => {
                let mut text = String::new();
                io::Read::read_to_string(&mut io::stdin(), &mut text)?;
                CountFile::parse(&text)?
            }
        };
        if self.n.is_some() {
            file.n = self.n;
        }
        if let Some(k) = self.k {
            if k < file.counts.len() {
                return Err(invalid(format!(
                    "--k {k} is below the {} counts read",
                    file.counts.len()
                )));
            }
            file.k = Some(k);
        }
        Ok(file)
    }

    fn counts(&self) -> Result<(CountData, MixtureKernel)> {
        let counts = self.read_file()?.to_count_data()?;
        let kernel = MixtureKernel::new(self.family(), counts.n())?;
        Ok((counts, kernel))
    }

    fn emit(&self, text: &str) -> Result<()> {
        match &self.output {
            Some(path) => fs::write(path, text)?,
            None => {
                let mut out = io::stdout().lock();
                out.write_all(text.as_bytes())?;
                out.flush()?;
            }
        }
        Ok(())
    }
}

fn json<T: Serialize>(kind: &str, value: &T) -> Result<String> {
    let mut s = write_report(kind, value)?;
    s.push('\n');
    Ok(s)
}

fn fit_csv(fit: &FitResult) -> String {
    let mut out = String::from("atom,weight\n");
    for (a, w) in fit.mixing.iter() {
        let _ = writeln!(out, "{a:?},{w:?}");
    }
    out
}

#[derive(Serialize)]
struct LocalizedReport {
    threshold: f64,
    small: usize,
    large: usize,
    fit: Option<FitSummary>,
}

#[derive(Serialize)]
struct FitSummary {
    atoms: Vec<f64>,
    weights: Vec<f64>,
    log_likelihood: f64,
    optimality_gap: f64,
    iterations: usize,
    converged: bool,
}

impl From<&FitResult> for FitSummary {
    fn from(f: &FitResult) -> Self {
        Self {
            atoms: f.mixing.atoms().to_vec(),
            weights: f.mixing.weights().to_vec(),
            log_likelihood: f.log_likelihood,
            optimality_gap: f.optimality_gap,
            iterations: f.iterations,
            converged: f.converged,
        }
    }
}

#[derive(Serialize)]
struct GofOutput<'a> {
    model: GofModelKind,
    #[serde(flatten)]
    report: &'a GofReport,
    fit: Option<FitSummary>,
}

#[derive(Serialize)]
struct CurvePoint {
    t: f64,
    plugin: f64,
    good_turing: f64,
}

fn parse_t_grid(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| {
            let t: f64 = p
                .trim()
                .parse()
                .map_err(|_| invalid(format!("bad horizon '{p}' in --t-grid")))?;
            if t.is_finite() && t >= 0.0 {
                Ok(t)
            } else {
                Err(invalid(format!("horizon {t} must be finite and nonnegative")))
            }
        })
        .collect()
}

/// Runs a parsed invocation and returns the rendered output.
pub fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Fit(c) => {
            let (counts, kernel) = c.counts()?;
            let grid = c.grid().build(&counts)?;
            let fit = fit_npmle_with(&counts, &grid, &kernel, &c.fit_options()?)?;
            Ok(match c.format {
                Format::Json => write_fit(&fit)? + "\n",
                Format::Csv => fit_csv(&fit),
            })
        }
        Command::Estimate {
            common: c,
            functional,
            method,
        } => {
            let (counts, kernel) = c.counts()?;
            let spec = FunctionalSpec::new(*functional)?;
            let opts = EstimatorOptions {
                grid: c.grid(),
                fit: c.fit_options()?,
                localized: LocalizedConfig::default(),
            };
            let r = estimate(&counts, &spec, (*method).into(), &kernel, &opts)?;
            Ok(match c.format {
                Format::Json => json("estimate", &r)?,
                Format::Csv => format!(
                    "functional,method,value,unclamped\n{functional},{},{:?},{:?}\n",
                    r.method, r.value, r.unclamped
                ),
            })
        }
        Command::Localized(c) => {
            let (counts, kernel) = c.counts()?;
            let loc = fit_localized(
                &counts,
                &LocalizedConfig::default(),
                &kernel,
                &c.grid(),
                &c.fit_options()?,
            )?;
            match c.format {
                Format::Json => json(
                    "localized",
                    &LocalizedReport {
                        threshold: loc.threshold,
                        small: loc.small.len(),
                        large: loc.large.len(),
                        fit: loc.fit.as_ref().map(FitSummary::from),
                    },
                ),
                Format::Csv => Ok(loc.fit.as_ref().map(fit_csv).unwrap_or_else(|| "atom,weight\n".into())),
            }
        }
        Command::Penalized { common: c, c0, c1 } => {
            let (counts, kernel) = c.counts()?;
            let cfg = PenalizedConfig {
                reg: Regularizer { c0: *c0, c1: *c1 },
                ..PenalizedConfig::default()
            };
            let positive = counts.positive_only()?;
            let r = fit_penalized(&positive, &c.grid(), &kernel, c.tol(), &cfg)?;
            match c.format {
                Format::Json => json("penalized", &r),
                Format::Csv => {
                    let mut out = String::from("k_prime,likelihood,objective\n");
                    for p in &r.profile {
                        let _ = writeln!(out, "{:?},{:?},{:?}", p.k_prime, p.likelihood, p.objective);
                    }
                    Ok(out)
                }
            }
        }
        Command::Gof { common: c, t, model } => {
            let file = c.read_file()?;
            let fp = file.fingerprint();
            let kept = fp.truncated(*t);
            let n =
                c.n.or(file.n)
                    .unwrap_or_else(|| kept.iter().map(|(j, m)| j * m).sum::<u64>().max(1));
            let kind = match model {
                ModelArg::Mixture => GofModelKind::Mixture,
                ModelArg::PModel => GofModelKind::PModel,
            };
            let (report, fit) = fit_and_test(&fp, *t, kind, n, c.family(), &c.grid(), &c.fit_options()?)?;
            match c.format {
                Format::Json => json(
                    "gof",
                    &GofOutput {
                        model: kind,
                        report: &report,
                        fit: fit.as_ref().map(FitSummary::from),
                    },
                ),
                Format::Csv => {
                    let mut out = String::from("j,observed,expected\n");
                    for (j, (o, e)) in report.observed.iter().zip(&report.expected).enumerate() {
                        let _ = writeln!(out, "{j},{o},{e:?}");
                    }
                    Ok(out)
                }
            }
        }
        Command::Unseen { common: c, t_grid } => {
            let ts = parse_t_grid(t_grid)?;
            let (counts, kernel) = c.counts()?;
            let grid = c.grid().build(&counts)?;
            let fit = fit_npmle_with(&counts, &grid, &kernel, &c.fit_options()?)?;
            let curve = discovery_curve(&fit.mixing, counts.k(), counts.n(), &ts)?;
            let points: Vec<CurvePoint> = curve
                .into_iter()
                .map(|(t, plugin)| {
                    good_turing_unseen(&counts, t).map(|gt| CurvePoint {
                        t,
                        plugin,
                        good_turing: gt.value,
                    })
                })
                .collect::<Result<_>>()?;
            match c.format {
                Format::Json => json("discovery-curve", &points),
                Format::Csv => {
                    let mut out = String::from("t,plugin,good_turing\n");
                    for p in &points {
                        let _ = writeln!(out, "{:?},{:?},{:?}", p.t, p.plugin, p.good_turing);
                    }
                    Ok(out)
                }
            }
        }
        Command::Simulate { common: c, config } => {
            let mut cfg: ExperimentConfig = serde_json::from_str(&fs::read_to_string(config)?)?;
            if let Some(seed) = c.seed {
                cfg.seed = seed;
            }
            if let Some(kernel) = c.kernel {
                cfg.kernel = kernel.into();
            }
            if c.grid_size.is_some() {
                cfg.grid_size = c.grid_size;
            }
            if let Some(tol) = c.tol {
                cfg.tol = tol;
            }
            let report = run_experiment(&cfg)?;
            match c.format {
                Format::Json => json("rmse", &report),
                Format::Csv => Ok(report.to_csv()),
            }
        }
    }
}

fn common(cli: &Cli) -> &Common {
    match &cli.command {
        Command::Fit(c) | Command::Localized(c) => c,
        Command::Estimate { common, .. }
        | Command::Penalized { common, .. }
        | Command::Gof { common, .. }
        | Command::Unseen { common, .. }
        | Command::Simulate { common, .. } => common,
    }
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| format!("{THREADS_ENV} must be a nonnegative integer, got '{raw}'"))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

/// Entry point used by the binary.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    match run(&cli).and_then(|out| common(&cli).emit(&out)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::from(1)
        }
    }
}
