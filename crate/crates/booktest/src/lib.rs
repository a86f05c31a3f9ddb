//! Compiles every code listing of the book as a doc-test. One module per
//! chapter keeps failures traceable to their file.

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/intro.md")]
pub mod intro {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/panels.md")]
pub mod panels {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/ols.md")]
pub mod ols {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/clustering.md")]
pub mod clustering {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/lasso.md")]
pub mod lasso {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/pipeline.md")]
pub mod pipeline {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/fdr.md")]
pub mod fdr {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/backtest.md")]
pub mod backtest {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}

#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
pub mod readme {}
