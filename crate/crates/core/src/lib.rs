//! Pareto-optimal hybrid beamforming for short-packet mmWave ISAC.
//!
//! The crate computes (radar beamforming error, sum rate) tradeoff points for a
//! hybrid analog/digital transmitter that serves finite-blocklength users while
//! steering beams toward radar targets.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bb_solver;
pub mod channel;
pub mod cli;
pub mod error;
pub mod experiments;
pub mod fbl;
pub mod linalg;
pub mod model;
pub mod numerics;
pub mod quadratics;
pub mod rf_bmm;
pub mod rf_epmo;
pub mod socp;
pub mod tlbs;

pub use error::{Error, Result};
