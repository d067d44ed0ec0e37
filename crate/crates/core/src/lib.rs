//! Robust X-Learner for conditional average treatment effect estimation.
//!
//! The crate is organised bottom-up:
//!
//! - [`data`]: datasets, Core-Periphery contamination generators, the
//!   semi-synthetic outcome model over external covariates, CSV I/O.
//! - [`loss`]: squared, Huber and γ-divergence (Welsch) losses, their MM
//!   weights and the MAD scale anchor.
//! - [`boosting`]: weighted regression trees and the MM boosting loop with
//!   enforced monotone descent.
//! - [`metalearners`]: T-, X-, Winsorized X-, clipped DR- and RX-Learner.
//! - [`evaluation`]: PEHE-style metrics and the experiment runners.
//! - [`config`]: the declarative run configuration and shipped presets.
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod boosting;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod loss;
pub mod metalearners;
pub mod stats;

pub use error::{Error, Result};
