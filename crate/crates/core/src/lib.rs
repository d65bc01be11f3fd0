//! Rate certification for time-varying decentralized gradient methods.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baselines;
pub mod basis;
pub mod canonical;
pub mod certifier;
pub mod error;
pub mod exec;
pub mod linalg;
pub mod lmi;
pub mod network;
pub mod random;
pub mod sdp;
pub mod study;
pub mod sweep;
pub mod textfmt;

pub use error::{Error, Result};
