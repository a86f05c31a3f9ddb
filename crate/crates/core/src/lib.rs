//! Sparse multi-factor asset-pricing models over a large, correlated factor
//! universe.
//!
//! The estimation recipe runs in stages, each in its own module:
//!
//! * [`panel`] ingests weekly return panels and builds excess returns.
//! * [`cluster`] reduces a correlated factor universe to low-correlation
//!   prototypes with minimax-linkage hierarchical clustering.
//! * [`lasso`] selects a sparse factor set per security by coordinate
//!   descent, choosing the penalty by a support-size cap.
//! * [`regress`] refits the selected model by OLS and provides t- and
//!   F-tests.
//! * [`pipeline`] wires the stages together and aggregates significance
//!   counts by factor class and industry.
//! * [`inference`] adjusts cross-sectional p-values for false discovery.
//! * [`backtest`] runs the zero-investment long/short alpha portfolio.
//! * [`simulate`] generates synthetic worlds with known ground truth.

pub mod backtest;
pub mod cluster;
pub mod error;
pub mod inference;
pub mod lasso;
pub mod panel;
pub mod pipeline;
pub mod regress;
pub mod simulate;
pub mod taxonomy;

pub use error::{Error, Result};
