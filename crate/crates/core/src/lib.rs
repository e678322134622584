//! Reachability audits for top-N recommenders built on linear preference models.
//!
//! A linear preference model scores item `i` for a user with latent factor `p` as
//! `mu + b_i + c_u + q_i . p`. When a user edits or adds ratings, the least-squares
//! update moves `p` inside an affine subspace `v0 + B a`. This crate answers which
//! items can ever be recommended (availability), which items a given user can bring
//! into their top-N by changing ratings (recourse), and how costly that change is.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, reports and the
//! command-line front end live in the `reach-audit` crate.

#![cfg_attr(not(test), no_std)]
// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod audit;
pub mod data;
mod error;
pub mod fixtures;
mod fmath;
pub mod model;
pub mod numerics;
pub mod serde_util;

pub use error::{Error, Result};
pub use model::{BiasSign, FactorModel, ModificationSet, RatingHistory, UserControl};
pub use numerics::{DenseMatrix, Tolerances};
