//! Count files and JSON documents.
//!
//! A count file is line oriented. Directives start with `#`:
//!
//! ```text
//! #format=fingerprint      (or raw, the default)
//! #n=1000                  concentration; defaults to the sum of the counts
//! #k=5000                  alphabet size; missing cells are implicit zeros
//! #tail=94                 cells above the listed range, kept out of the counts
//! ```
//!
//! Any other `#` line is a comment. Raw files hold one count per line; fingerprint
//! files hold `j,phi_j` pairs.

use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::eval::Fingerprint;
use crate::kernels::MixingDistribution;
use crate::npmle::{CountData, FitResult};

/// The Malayan butterfly fingerprint, counts `0..=30` plus a tail of 94 species.
pub const BUTTERFLY: &str = include_str!("../data/butterfly.fp");

/// JSON schema version written into every document.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountFormat {
    #[default]
    Raw,
    Fingerprint,
}

/// Parsed contents of a count file.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CountFile {
    pub format: CountFormat,
    /// Raw counts, or the expanded fingerprint in ascending order.
    pub counts: Vec<u64>,
    pub n: Option<u64>,
    pub k: Option<usize>,
    /// Number of cells beyond the listed counts, reported but never fitted.
    pub tail: Option<u64>,
}

impl CountFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut file = CountFile::default();
        let mut seen_format = false;
        let mut seen_data = false;
        let mut pairs: Vec<(u64, u64)> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse { line: line_no, msg };
            if let Some(directive) = line.strip_prefix('#') {
                let Some((key, value)) = directive.split_once('=') else {
                    continue;
                };
                let (key, value) = (key.trim(), value.trim());
                match key {
                    "format" => {
                        if seen_format || seen_data {
                            return Err(err("format must be declared once, before any data".into()));
                        }
                        seen_format = true;
                        file.format = match value {
                            "raw" => CountFormat::Raw,
                            "fingerprint" => CountFormat::Fingerprint,
                            other => return Err(err(format!("unknown format '{other}'"))),
                        };
                    }
                    "n" => file.n = Some(parse_uint(value).map_err(err)?),
                    "k" => file.k = Some(parse_uint(value).map_err(err)? as usize),
                    "tail" => file.tail = Some(parse_uint(value).map_err(err)?),
                    _ => {}
                }
                continue;
            }
            seen_data = true;
            match file.format {
                CountFormat::Raw => file.counts.push(parse_uint(line).map_err(err)?),
                CountFormat::Fingerprint => {
                    let (j, phi) = line
                        .split_once(',')
                        .ok_or_else(|| err(format!("expected 'j,phi_j', found '{line}'")))?;
                    let j = parse_uint(j.trim()).map_err(err)?;
                    let phi = parse_uint(phi.trim()).map_err(err)?;
                    if pairs.iter().any(|&(seen, _)| seen == j) {
                        return Err(err(format!("count value {j} listed twice")));
                    }
                    pairs.push((j, phi));
                }
            }
        }
        if file.format == CountFormat::Fingerprint {
            file.counts = Fingerprint::from_pairs(pairs)?.expand();
        }
        if let Some(k) = file.k {
            if k < file.counts.len() {
                return Err(invalid(format!(
                    "#k={k} is below the {} counts listed",
                    file.counts.len()
                )));
            }
        }
        Ok(file)
    }

    /// `n` as declared, else the sum of the counts (at least 1).
    pub fn resolved_n(&self) -> u64 {
        self.n.unwrap_or_else(|| self.counts.iter().sum::<u64>().max(1))
    }

    pub fn to_count_data(&self) -> Result<CountData> {
        let k = self.k.unwrap_or(self.counts.len());
        CountData::with_k(self.counts.clone(), self.resolved_n(), k)
    }

    pub fn fingerprint(&self) -> Fingerprint {
        let mut counts = self.counts.clone();
        if let Some(k) = self.k {
            counts.resize(k.max(counts.len()), 0);
        }
        Fingerprint::from_pairs(tally(&counts)).expect("tally yields unique keys")
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let name = match self.format {
            CountFormat::Raw => "raw",
            CountFormat::Fingerprint => "fingerprint",
        };
        let _ = writeln!(out, "#format={name}");
        if let Some(n) = self.n {
            let _ = writeln!(out, "#n={n}");
        }
        if let Some(k) = self.k {
            let _ = writeln!(out, "#k={k}");
        }
        if let Some(t) = self.tail {
            let _ = writeln!(out, "#tail={t}");
        }
        match self.format {
            CountFormat::Raw => {
                for c in &self.counts {
                    let _ = writeln!(out, "{c}");
                }
            }
            CountFormat::Fingerprint => {
                for (j, phi) in tally(&self.counts) {
                    let _ = writeln!(out, "{j},{phi}");
                }
            }
        }
        out
    }
}

fn tally(counts: &[u64]) -> Vec<(u64, u64)> {
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    let mut out: Vec<(u64, u64)> = Vec::new();
    for c in sorted {
        match out.last_mut() {
            Some((j, phi)) if *j == c => *phi += 1,
            _ => out.push((c, 1)),
        }
    }
    out
}

fn parse_uint(s: &str) -> std::result::Result<u64, String> {
    if s.starts_with('-') {
        return Err(format!("negative value '{s}'"));
    }
    s.parse::<u64>()
        .map_err(|_| format!("not a nonnegative integer: '{s}'"))
}

/// Reads a count file from a stream.
pub fn read_counts(mut reader: impl Read) -> Result<CountData> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    CountFile::parse(&text)?.to_count_data()
}

pub fn read_count_file(path: impl AsRef<Path>) -> Result<CountFile> {
    CountFile::parse(&fs::read_to_string(path)?)
}

/// Bundled butterfly data.
pub fn butterfly() -> CountFile {
    CountFile::parse(BUTTERFLY).expect("bundled file parses")
}

#[derive(Serialize, Deserialize)]
struct FitDocument {
    v: u32,
    atoms: Vec<f64>,
    weights: Vec<f64>,
    log_likelihood: f64,
    optimality_gap: f64,
    iterations: usize,
    converged: bool,
}

/// Serialises a fit. Numbers use the shortest decimal form that parses back to the
/// same `f64`.
pub fn write_fit(fit: &FitResult) -> Result<String> {
    let doc = FitDocument {
        v: SCHEMA_VERSION,
        atoms: fit.mixing.atoms().to_vec(),
        weights: fit.mixing.weights().to_vec(),
        log_likelihood: fit.log_likelihood,
        optimality_gap: fit.optimality_gap,
        iterations: fit.iterations,
        converged: fit.converged,
    };
    Ok(serde_json::to_string(&doc)?)
}

pub fn read_fit(text: &str) -> Result<FitResult> {
    let doc: FitDocument = serde_json::from_str(text)?;
    if doc.v != SCHEMA_VERSION {
        return Err(invalid(format!("unsupported schema version {}", doc.v)));
    }
    let mixing = MixingDistribution::from_normalized(doc.atoms, doc.weights)?;
    Ok(FitResult {
        mixing,
        log_likelihood: doc.log_likelihood,
        optimality_gap: doc.optimality_gap,
        iterations: doc.iterations,
        converged: doc.converged,
    })
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    v: u32,
    kind: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

/// Wraps any report as `{"v":1,"kind":…,…fields}`.
pub fn write_report<T: Serialize>(kind: &str, report: &T) -> Result<String> {
    Ok(serde_json::to_string(&Envelope {
        v: SCHEMA_VERSION,
        kind,
        body: report,
    })?)
}
