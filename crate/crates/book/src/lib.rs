//! Compiles the guide's code listings as doc tests, one module per chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/counts.md")]
pub mod counts {}

#[doc = include_str!("../../../book/src/npmle.md")]
pub mod npmle {}

#[doc = include_str!("../../../book/src/functionals.md")]
pub mod functionals {}

#[doc = include_str!("../../../book/src/support.md")]
pub mod support {}

#[doc = include_str!("../../../book/src/gof.md")]
pub mod gof {}

#[doc = include_str!("../../../book/src/unseen.md")]
pub mod unseen {}

#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}

#[doc = include_str!("../../../README.md")]
pub mod readme {}
