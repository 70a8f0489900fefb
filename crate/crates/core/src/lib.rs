//! Poisson and binomial mixture models for frequency counts.
//!
//! A count vector `N = (N_1, …, N_k)` is modelled as independent draws from
//! `f_π(x) = ∫ q(x; n, r) dπ(r)`, where `q` is a Poisson or binomial kernel and `π`
//! an unknown mixing distribution on `[0, 1]`. [`npmle`] fits `π` by nonparametric
//! maximum likelihood on a grid; [`functionals`] turns a fit into estimates of
//! symmetric functionals; [`eval`] holds goodness of fit and distances; [`sim`] runs
//! Monte-Carlo comparisons; [`io`] and [`cli`] handle files and the command line.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod eval;
pub mod functionals;
pub mod io;
pub mod kernels;
pub mod npmle;
pub mod sim;

pub use error::{Error, Result};
